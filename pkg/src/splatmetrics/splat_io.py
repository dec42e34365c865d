"""Readers and writers for the on-disk formats the toolkit consumes.

Splat models use the common binary little-endian PLY 1.0 export layout:
one ``vertex`` element whose float32 properties are ``x y z nx ny nz
f_dc_0..2 f_rest_* opacity scale_0..2 rot_0..3``. Opacity is stored as a
logit, scales as logs, and quaternions unnormalized with component order
w, x, y, z; parsing applies the activations so every downstream module
sees physical quantities.

Depth maps are PFM (single channel) or binary PGM; images are PFM or
8/16-bit binary PPM/PGM normalized to [0, 1]. Camera descriptors are
plain ``key = value`` text with ``position = x y z``.

All parsers are pure functions of their input bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError, FormatError, RangeError

REQUIRED_PLY_PROPERTIES = (
    "x", "y", "z",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_FLOAT_TOKENS = {"float", "float32"}


@dataclass(frozen=True)
class GaussianCloud:
    """An ordered set of activated Gaussian primitives.

    ``positions`` (N,3), ``opacities`` (N,) in (0,1), ``scales`` (N,3)
    strictly positive, ``rotations`` (N,4) unit quaternions (w,x,y,z),
    ``dc_color`` (N,3) and ``rest_color`` (N,R) carried through untouched.
    """

    positions: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    dc_color: np.ndarray
    rest_color: np.ndarray
    source_path: str = ""

    def __len__(self) -> int:
        return self.positions.shape[0]

    def validate(self) -> None:
        """Raise if any structural invariant is violated."""
        if len(self) < 1:
            raise ContractError("a Gaussian cloud must contain at least one primitive")
        if not np.all(np.isfinite(self.positions)):
            raise DataError("non-finite position component")
        if np.any(self.opacities <= 0.0) or np.any(self.opacities >= 1.0):
            raise RangeError("opacities must lie strictly inside (0, 1)")
        if np.any(self.scales <= 0.0):
            raise DataError("scales must be strictly positive")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-6):
            raise ContractError("rotations must be unit quaternions within 1e-6")


@dataclass(frozen=True)
class DepthMap:
    """Row-major scalar depth grid; larger value means farther."""

    width: int
    height: int
    values: np.ndarray  # (height, width), finite, >= 0

    @property
    def max_value(self) -> float:
        return float(self.values.max())


@dataclass(frozen=True)
class ImagePlane:
    """Row-major image with values in [0, 1]; channels is 1 or 3."""

    width: int
    height: int
    channels: int
    values: np.ndarray  # (height, width, channels)


@dataclass(frozen=True)
class CameraDescriptor:
    position: np.ndarray  # (3,)
    label: str = ""


# ---------------------------------------------------------------------------
# Splat PLY
# ---------------------------------------------------------------------------

def _parse_ply_header(data: bytes):
    """Return (property names, vertex count, body offset)."""
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply\n") or end < 0:
        raise FormatError("not a PLY file (missing 'ply' magic or end_header)")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    body_offset = end + len(b"end_header\n")

    fmt_seen = False
    names: list[str] = []
    count = None
    for line in header[1:]:
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if tokens[1:] != ["binary_little_endian", "1.0"]:
                raise FormatError(f"unsupported PLY format: {' '.join(tokens[1:])}")
            fmt_seen = True
        elif tokens[0] == "element":
            if count is not None:
                raise FormatError("only a single 'vertex' element is supported")
            if len(tokens) != 3 or tokens[1] != "vertex":
                raise FormatError(f"unsupported element declaration: {line!r}")
            count = int(tokens[2])
        elif tokens[0] == "property":
            if count is None:
                raise FormatError("property declared before the vertex element")
            if len(tokens) != 3 or tokens[1] not in _FLOAT_TOKENS:
                raise FormatError(f"unsupported property declaration: {line!r}")
            names.append(tokens[2])
        else:
            raise FormatError(f"unrecognized header line: {line!r}")
    if not fmt_seen:
        raise FormatError("missing 'format binary_little_endian 1.0' declaration")
    if count is None:
        raise FormatError("missing vertex element declaration")
    for required in REQUIRED_PLY_PROPERTIES:
        if required not in names:
            raise FormatError(f"vertex element is missing required property '{required}'")
    return names, count, body_offset


def _rest_property_names(names) -> list[str]:
    rest = [n for n in names if n.startswith("f_rest_")]
    return sorted(rest, key=lambda n: int(n.rsplit("_", 1)[1]))


def parse_splat_ply(data: bytes, source_path: str = "") -> GaussianCloud:
    """Parse a binary splat PLY and return the activated cloud.

    Opacity logits pass through the logistic function, log-scales through
    exp, and quaternions are normalized. Record order is preserved; every
    record either becomes a primitive or names its error.
    """
    names, count, offset = _parse_ply_header(data)
    if count < 1:
        raise FormatError("vertex element declares zero records")
    dtype = np.dtype([(n, "<f4") for n in names])
    need = count * dtype.itemsize
    body = data[offset:offset + need]
    if len(body) < need:
        raise FormatError(
            f"truncated payload: expected {need} bytes for {count} records, got {len(body)}"
        )
    table = np.frombuffer(body, dtype=dtype)

    def column(group) -> np.ndarray:
        return np.stack([table[n].astype(np.float64) for n in group], axis=1)

    positions = column(("x", "y", "z"))
    raw_opacity = table["opacity"].astype(np.float64)
    raw_scale = column(("scale_0", "scale_1", "scale_2"))
    raw_rot = column(("rot_0", "rot_1", "rot_2", "rot_3"))

    finite = (
        np.isfinite(positions).all(axis=1)
        & np.isfinite(raw_opacity)
        & np.isfinite(raw_scale).all(axis=1)
        & np.isfinite(raw_rot).all(axis=1)
    )
    if not finite.all():
        idx = int(np.flatnonzero(~finite)[0])
        raise DataError(f"non-finite required field in record {idx}")
    norms = np.linalg.norm(raw_rot, axis=1)
    if np.any(norms == 0.0):
        idx = int(np.flatnonzero(norms == 0.0)[0])
        raise DataError(f"zero-norm quaternion in record {idx}")

    opacities = 1.0 / (1.0 + np.exp(-raw_opacity))
    scales = np.exp(raw_scale)
    if np.any(scales <= 0.0):
        idx = int(np.flatnonzero((scales <= 0.0).any(axis=1))[0])
        raise DataError(f"scale underflows to zero in record {idx}")
    rotations = raw_rot / norms[:, None]

    if all(n in names for n in ("f_dc_0", "f_dc_1", "f_dc_2")):
        dc = column(("f_dc_0", "f_dc_1", "f_dc_2"))
    else:
        dc = np.zeros((count, 3))
    rest_names = _rest_property_names(names)
    if rest_names:
        rest = column(rest_names)
    else:
        rest = np.zeros((count, 0))

    return GaussianCloud(
        positions=positions,
        opacities=opacities,
        scales=scales,
        rotations=rotations,
        dc_color=dc,
        rest_color=rest,
        source_path=source_path,
    )


def write_splat_ply(cloud: GaussianCloud) -> bytes:
    """Serialize a cloud back to the binary PLY layout.

    Inverse-activates opacity (logit) and scale (log); parse(write(c))
    reproduces c within float32 quantization (< 1e-6 per scalar for
    moderate magnitudes).
    """
    cloud.validate()
    n = len(cloud)
    rest_count = cloud.rest_color.shape[1]

    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(rest_count)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]

    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}"]
    header += [f"property float {name}" for name in names]
    header.append("end_header")
    header_bytes = ("\n".join(header) + "\n").encode("ascii")

    p = cloud.opacities
    raw_opacity = np.log(p / (1.0 - p))
    raw_scale = np.log(cloud.scales)

    table = np.empty(n, dtype=np.dtype([(name, "<f4") for name in names]))
    for j, axis in enumerate("xyz"):
        table[axis] = cloud.positions[:, j]
        table[f"n{axis}"] = 0.0
    for j in range(3):
        table[f"f_dc_{j}"] = cloud.dc_color[:, j]
    for j in range(rest_count):
        table[f"f_rest_{j}"] = cloud.rest_color[:, j]
    table["opacity"] = raw_opacity
    for j in range(3):
        table[f"scale_{j}"] = raw_scale[:, j]
    for j in range(4):
        table[f"rot_{j}"] = cloud.rotations[:, j]
    return header_bytes + table.tobytes()


# ---------------------------------------------------------------------------
# PFM / PGM / PPM
# ---------------------------------------------------------------------------

class _TokenReader:
    """Whitespace-separated header tokens over raw bytes, with '#' comments."""

    def __init__(self, data: bytes, allow_comments: bool):
        self.data = data
        self.pos = 0
        self.allow_comments = allow_comments

    def token(self) -> bytes:
        data, n = self.data, len(self.data)
        while self.pos < n and data[self.pos:self.pos + 1].isspace():
            self.pos += 1
        if self.allow_comments:
            while self.pos < n and data[self.pos:self.pos + 1] == b"#":
                nl = data.find(b"\n", self.pos)
                self.pos = n if nl < 0 else nl + 1
                while self.pos < n and data[self.pos:self.pos + 1].isspace():
                    self.pos += 1
        start = self.pos
        while self.pos < n and not data[self.pos:self.pos + 1].isspace():
            self.pos += 1
        if start == self.pos:
            raise FormatError("unexpected end of header")
        return data[start:self.pos]

    def skip_single_whitespace(self) -> int:
        """Per Netpbm/PFM, exactly one whitespace byte separates header and raster."""
        if self.pos >= len(self.data) or not self.data[self.pos:self.pos + 1].isspace():
            raise FormatError("missing whitespace between header and raster data")
        return self.pos + 1


def _parse_pfm(data: bytes):
    """Return (values (H,W,C) float64, channels). Rows are stored bottom-up."""
    reader = _TokenReader(data, allow_comments=False)
    magic = reader.token()
    channels = {b"PF": 3, b"Pf": 1}.get(magic)
    if channels is None:
        raise FormatError(f"unsupported magic number {magic!r}")
    width = int(reader.token())
    height = int(reader.token())
    scale = float(reader.token())
    if width <= 0 or height <= 0:
        raise FormatError("non-positive PFM dimensions")
    if scale == 0.0:
        raise FormatError("PFM scale factor must be nonzero")
    start = reader.skip_single_whitespace()
    count = width * height * channels
    dtype = "<f4" if scale < 0 else ">f4"
    body = data[start:start + count * 4]
    if len(body) < count * 4:
        raise FormatError("truncated PFM raster")
    values = np.frombuffer(body, dtype=dtype).astype(np.float64)
    values = values.reshape(height, width, channels)
    return values[::-1].copy(), channels


def _parse_pnm(data: bytes):
    """Binary PGM (P5) or PPM (P6). Returns (values (H,W,C) float64, channels, maxval)."""
    reader = _TokenReader(data, allow_comments=True)
    magic = reader.token()
    channels = {b"P5": 1, b"P6": 3}.get(magic)
    if channels is None:
        raise FormatError(f"unsupported magic number {magic!r}")
    width = int(reader.token())
    height = int(reader.token())
    maxval = int(reader.token())
    if width <= 0 or height <= 0:
        raise FormatError("non-positive PGM/PPM dimensions")
    if not 0 < maxval < 65536:
        raise FormatError(f"maxval {maxval} out of range")
    start = reader.skip_single_whitespace()
    count = width * height * channels
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    body = data[start:start + count * dtype.itemsize]
    if len(body) < count * dtype.itemsize:
        raise FormatError("truncated PGM/PPM raster")
    values = np.frombuffer(body, dtype=dtype).astype(np.float64)
    return values.reshape(height, width, channels), channels, maxval


def load_depth_map(data: bytes, orientation: str = "depth") -> DepthMap:
    """Decode a PFM or PGM depth map.

    ``orientation="inverse_depth"`` remaps v -> (max_raw - v) so that the
    stored convention is always "larger means farther".
    """
    if orientation not in ("depth", "inverse_depth"):
        raise ContractError(f"unknown orientation {orientation!r}")
    magic = data[:2]
    if magic in (b"PF", b"Pf"):
        values, channels = _parse_pfm(data)
        if channels != 1:
            raise FormatError("depth maps must be single-channel (Pf), got PF")
        values = values[:, :, 0]
        if np.isnan(values).any() or np.isinf(values).any():
            raise DataError("non-finite value in depth map")
        if (values < 0).any():
            raise DataError("negative value in depth map")
    elif magic == b"P5":
        raw, _, _ = _parse_pnm(data)
        values = raw[:, :, 0]  # integer depth counts kept in estimator units
    else:
        raise FormatError(f"unsupported magic number {magic!r}")

    if orientation == "inverse_depth":
        values = values.max() - values
    if values.max() <= 0.0:
        raise DataError("degenerate depth map: maximum depth is not positive")
    height, width = values.shape
    return DepthMap(width=width, height=height, values=values)


def load_image(data: bytes) -> ImagePlane:
    """Decode a PFM/PPM/PGM image into [0, 1] scalars."""
    magic = data[:2]
    if magic in (b"PF", b"Pf"):
        values, channels = _parse_pfm(data)
        if not np.isfinite(values).all():
            raise DataError("non-finite value in image")
        if values.min() < 0.0 or values.max() > 1.0:
            raise DataError("PFM image values must already lie in [0, 1]")
    elif magic in (b"P5", b"P6"):
        raw, channels, maxval = _parse_pnm(data)
        values = raw / float(maxval)
    else:
        raise FormatError(f"unsupported magic number {magic!r}")
    height, width = values.shape[:2]
    return ImagePlane(width=width, height=height, channels=channels, values=values)


# ---------------------------------------------------------------------------
# Camera config
# ---------------------------------------------------------------------------

def parse_camera_config(text) -> CameraDescriptor:
    """Parse ``key = value`` camera text; requires ``position = x y z``."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    position = None
    label = ""
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"camera config line {lineno} is not 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "position":
            parts = value.split()
            if len(parts) != 3:
                raise FormatError("camera position must be three whitespace-separated floats")
            position = np.array([float(p) for p in parts])
        elif key == "label":
            label = value
    if position is None:
        raise FormatError("camera config is missing 'position'")
    if not np.all(np.isfinite(position)):
        raise DataError("camera position must be finite")
    return CameraDescriptor(position=position, label=label)


def camera_from_string(spec: str, label: str = "") -> CameraDescriptor:
    """Build a camera from a comma-separated ``x,y,z`` string (CLI flag form)."""
    parts = [p for p in spec.replace(",", " ").split() if p]
    if len(parts) != 3:
        raise ContractError(f"camera must be three comma-separated floats, got {spec!r}")
    position = np.array([float(p) for p in parts])
    if not np.all(np.isfinite(position)):
        raise DataError("camera position must be finite")
    return CameraDescriptor(position=position, label=label)


# ---------------------------------------------------------------------------
# Path-level conveniences (used by the CLI)
# ---------------------------------------------------------------------------

def read_splat_file(path) -> GaussianCloud:
    with open(path, "rb") as handle:
        return parse_splat_ply(handle.read(), source_path=str(path))


def read_depth_file(path, orientation: str = "depth") -> DepthMap:
    with open(path, "rb") as handle:
        return load_depth_map(handle.read(), orientation=orientation)


def read_image_file(path) -> ImagePlane:
    with open(path, "rb") as handle:
        return load_image(handle.read())


def read_camera_file(path) -> CameraDescriptor:
    with open(path, "rb") as handle:
        return parse_camera_config(handle.read())
