"""Command-line interface: batch invocations over files, emitting text/CSV.

Every run resolves its parameters from defaults, an optional ``key = value``
config file, and flags (flags win), and echoes the resolved manifest as
``#`` comment lines so outputs are self-describing and reruns are
byte-identical. Output files are written atomically.

Exit codes: 0 success, 2 usage, 3 I/O, 4 format/data, 5 numeric or
convergence failure, 6 contract violation.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, dafe, ddrop, geometry, imr
from .bures import GaussianComponent, w2_exact, w2_taylor, w2_taylor_sym
from .errors import ContractError, DataError, FormatError, NumericError
from .splat_io import (
    camera_from_string,
    read_depth_file,
    read_image_file,
    read_splat_file,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_NUMERIC = 5
EXIT_CONTRACT = 6


class UsageError(Exception):
    pass


def _boolean(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {raw!r}")


def _choice(options):
    def convert(raw: str) -> str:
        if raw not in options:
            raise UsageError(f"expected one of {', '.join(options)}; got {raw!r}")
        return raw
    return convert


def _optional_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise UsageError(f"expected a number, got {raw!r}") from exc


def _integer(raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"expected an integer, got {raw!r}") from exc


# (name, converter, default, required, help)
PARAMS = {
    "imr": [
        ("camera", str, None, True, "camera position as x,y,z"),
        ("samples", _integer, 10_000, False, "mixture size per model"),
        ("seed", _integer, 0, False, "sampling seed shared by all models"),
        ("epsilon", _optional_float, None, False,
         "entropic regularization (default: adaptive from the cost scale)"),
        ("cost", _choice(("exact", "taylor", "taylor-sym")), "taylor-sym", False,
         "ground-cost kind"),
        ("threads", _integer, 1, False, "parallel workers for pairwise distances"),
    ],
    "w2": [
        ("inline", _boolean, False, False,
         "treat the two inputs as inline mx,my,mz,sx,sy,sz,qw,qx,qy,qz specs"),
    ],
    "drop-plan": [
        ("camera", str, None, True, "camera position as x,y,z"),
        ("step", _integer, None, True, "training step for the rate schedule"),
        ("seed", _integer, 0, False, "mask sampling seed"),
        ("w-depth", _optional_float, 0.5, False, "depth score weight"),
        ("w-density", _optional_float, 0.5, False, "density score weight"),
        ("lambda-middle", _optional_float, 0.7, False, "middle-layer attenuation"),
        ("lambda-far", _optional_float, 0.3, False, "far-layer attenuation"),
        ("r-min", _optional_float, 0.05, False, "schedule start rate"),
        ("r-max", _optional_float, 0.3, False, "schedule end rate"),
        ("total-steps", _integer, 10_000, False, "schedule length"),
        ("k", _integer, 6, False, "neighbor count for the density estimate"),
    ],
    "dafe-loss": [
        ("tau", _optional_float, 0.05, False, "retained far fraction"),
        ("lambda-ssim", _optional_float, 0.2, False, "structural loss weight"),
        ("lambda-dafe", _optional_float, 1.0, False, "far-field loss weight"),
        ("orientation", _choice(("depth", "inverse-depth")), "depth", False,
         "depth map orientation"),
        ("mask-rule", _choice(("quantile", "literal")), "quantile", False,
         "far-mask construction rule"),
    ],
    "inspect": [
        ("camera", str, None, True, "camera position as x,y,z"),
    ],
}

COST_KIND_BY_FLAG = {"exact": "exact", "taylor": "taylor_asym", "taylor-sym": "taylor_sym"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatmetrics",
        description="Robustness metrics, dropout plans, and fidelity losses "
                    "for 3D Gaussian splat models.",
    )
    parser.add_argument("--version", action="version",
                        version=f"splatmetrics {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    def add_common(sub):
        sub.add_argument("--out", default=None, help="output path (default: stdout)")
        sub.add_argument("--config", default=None,
                         help="key = value parameter file; flags override it")

    sub = subparsers.add_parser("imr", help="inter-model robustness over N models")
    sub.add_argument("models", nargs="+", help="two or more splat PLY files")
    sub = subparsers.add_parser("w2", help="distances between two Gaussians")
    sub.add_argument("inputs", nargs=2,
                     help="two single-splat PLY files, or two inline specs with --inline")
    sub = subparsers.add_parser("drop-plan", help="per-Gaussian dropout plan")
    sub.add_argument("model", help="splat PLY file")
    sub = subparsers.add_parser("dafe-loss", help="masked/total loss for an image pair")
    sub.add_argument("rendered", help="rendered image (PFM/PPM/PGM)")
    sub.add_argument("truth", help="ground-truth image (PFM/PPM/PGM)")
    sub.add_argument("depth", help="depth map (PFM/PGM)")
    sub = subparsers.add_parser("inspect", help="summarize a splat model")
    sub.add_argument("model", help="splat PLY file")

    for name, actions in PARAMS.items():
        sub = subparsers.choices[name]
        add_common(sub)
        for flag, converter, _default, _required, help_text in actions:
            if converter is _boolean:  # allow both bare --flag and --flag true
                sub.add_argument(f"--{flag}", default=None, nargs="?", const="true",
                                 help=help_text)
            else:
                sub.add_argument(f"--{flag}", default=None, help=help_text)
    return parser


def _read_config(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("_", "-")] = value
    return values


def resolve_params(command: str, args: argparse.Namespace) -> dict:
    """Merge defaults, config file, and flags for one command."""
    table = PARAMS[command]
    known = {flag for flag, *_ in table}
    config_values: dict[str, str] = {}
    if args.config is not None:
        config_values = _read_config(args.config)
        unknown = set(config_values) - known
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for flag, converter, default, required, _help in table:
        raw = getattr(args, flag.replace("-", "_"))
        if raw is None:
            raw = config_values.get(flag)
        if raw is None:
            value = default
        else:
            value = converter(raw)
        if required and value is None:
            raise UsageError(f"missing required flag --{flag}")
        resolved[flag] = value
    return resolved


def _manifest(command: str, inputs, params: dict) -> str:
    lines = [f"# command = {command}", f"# version = splatmetrics {__version__}"]
    for index, path in enumerate(inputs):
        lines.append(f"# input_{index} = {path}")
    for key in sorted(params):
        value = params[key]
        rendered = "adaptive" if value is None else (repr(value) if isinstance(value, float) else str(value))
        lines.append(f"# {key} = {rendered}")
    return "\n".join(lines) + "\n"


def _emit(text: str, out_path) -> None:
    if out_path is None:
        sys.stdout.write(text)
        return
    path = Path(out_path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_imr(args) -> int:
    params = resolve_params("imr", args)
    if len(args.models) < 2:
        raise UsageError("imr needs at least two model paths")
    camera = camera_from_string(params["camera"])
    clouds = [read_splat_file(path) for path in args.models]
    config = imr.SamplingConfig(target_count=params["samples"], seed=params["seed"])
    report = imr.imr_from_clouds(
        clouds, camera, config,
        epsilon=params["epsilon"],
        cost_kind=COST_KIND_BY_FLAG[params["cost"]],
        threads=params["threads"],
    )
    text = _manifest("imr", args.models, params) + imr.render_report(report)
    _emit(text, args.out)
    return EXIT_OK


def _inline_component(spec: str) -> GaussianComponent:
    parts = [p for p in spec.replace(",", " ").split() if p]
    if len(parts) != 10:
        raise UsageError(
            "inline Gaussian must be 10 numbers: mx,my,mz,sx,sy,sz,qw,qx,qy,qz"
        )
    values = [float(p) for p in parts]
    mean = np.array(values[:3])
    scale = np.array(values[3:6])
    quat = np.array(values[6:])
    quat = quat / np.linalg.norm(quat)
    return GaussianComponent(mean, geometry.covariance_from_primitive(scale, quat))


def _file_component(path: str) -> GaussianComponent:
    cloud = read_splat_file(path)
    if len(cloud) != 1:
        raise ContractError(f"{path} holds {len(cloud)} primitives; expected exactly 1")
    return GaussianComponent(
        cloud.positions[0],
        geometry.covariance_from_primitive(cloud.scales[0], cloud.rotations[0]),
    )


def cmd_w2(args) -> int:
    params = resolve_params("w2", args)
    if params["inline"]:
        a, b = (_inline_component(spec) for spec in args.inputs)
    else:
        a, b = (_file_component(path) for path in args.inputs)
    text = _manifest("w2", args.inputs, params)
    text += f"exact = {w2_exact(a, b)!r}\n"
    text += f"taylor = {w2_taylor(a, b)!r}\n"
    text += f"taylor_sym = {w2_taylor_sym(a, b)!r}\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_drop_plan(args) -> int:
    params = resolve_params("drop-plan", args)
    if params["step"] < 0:
        raise UsageError("--step must be nonnegative")
    camera = camera_from_string(params["camera"])
    cloud = read_splat_file(args.model)
    config = ddrop.DropConfig(
        w_depth=params["w-depth"],
        w_density=params["w-density"],
        lambda_middle=params["lambda-middle"],
        lambda_far=params["lambda-far"],
        r_min=params["r-min"],
        r_max=params["r-max"],
        total_steps=params["total-steps"],
        k=params["k"],
    )
    plan = ddrop.plan_dropout(cloud, camera, params["step"], config, seed=params["seed"])
    text = _manifest("drop-plan", [args.model], params) + ddrop.render_plan_csv(plan)
    summary = f"rate = {plan.rate!r}, dropped = {plan.dropped_count} of {len(cloud)}"
    if args.out is None:
        text += f"# {summary}\n"
        _emit(text, None)
    else:
        _emit(text, args.out)
        sys.stdout.write(summary + "\n")
    return EXIT_OK


def cmd_dafe_loss(args) -> int:
    params = resolve_params("dafe-loss", args)
    rendered = read_image_file(args.rendered)
    truth = read_image_file(args.truth)
    orientation = params["orientation"].replace("-", "_")
    depth = read_depth_file(args.depth, orientation=orientation)
    if (depth.width, depth.height) != (rendered.width, rendered.height):
        raise ContractError(
            f"depth map is {depth.width}x{depth.height} but images are "
            f"{rendered.width}x{rendered.height}"
        )
    build_mask = dafe.far_mask if params["mask-rule"] == "quantile" else dafe.far_mask_literal
    mask = build_mask(depth, params["tau"])
    weights = dafe.LossWeights(lambda_ssim=params["lambda-ssim"],
                               lambda_dafe=params["lambda-dafe"])
    breakdown = dafe.total_loss(rendered, truth, mask, weights)
    text = _manifest("dafe-loss", [args.rendered, args.truth, args.depth], params)
    text += dafe.render_loss_csv(breakdown, params["tau"], weights)
    _emit(text, args.out)
    return EXIT_OK


def cmd_inspect(args) -> int:
    params = resolve_params("inspect", args)
    camera = camera_from_string(params["camera"])
    cloud = read_splat_file(args.model)
    stats = geometry.camera_depths(cloud, camera)
    layers = stats.layers()
    counts = [int((layers == s).sum()) for s in range(3)]

    def describe(values: np.ndarray) -> str:
        return (f"min={float(values.min())!r} median={float(np.median(values))!r} "
                f"mean={float(values.mean())!r} max={float(values.max())!r}")

    text = _manifest("inspect", [args.model], params)
    text += f"count = {len(cloud)}\n"
    text += f"depth_min = {stats.min!r}\n"
    text += f"d_near = {stats.d_near!r}\n"
    text += f"d_middle = {stats.d_middle!r}\n"
    text += f"depth_max = {stats.max!r}\n"
    text += f"layer_counts = near:{counts[0]} middle:{counts[1]} far:{counts[2]}\n"
    text += f"opacity {describe(cloud.opacities)}\n"
    text += f"scale {describe(cloud.scales)}\n"
    _emit(text, args.out)
    return EXIT_OK


HANDLERS = {
    "imr": cmd_imr,
    "w2": cmd_w2,
    "drop-plan": cmd_drop_plan,
    "dafe-loss": cmd_dafe_loss,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed its message
        return int(exc.code or 0)
    try:
        return HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FormatError, DataError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ContractError as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


def entrypoint() -> None:
    sys.exit(main())
