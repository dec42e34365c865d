import struct

import numpy as np
import pytest

from splatmetrics.splat_io import CameraDescriptor, GaussianCloud


def build_cloud(positions, opacities=None, scales=None, rotations=None,
                dc_color=None, rest_color=None, source_path="") -> GaussianCloud:
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if opacities is None:
        opacities = np.full(n, 0.5)
    if scales is None:
        scales = np.full((n, 3), 0.1)
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    if dc_color is None:
        dc_color = np.zeros((n, 3))
    if rest_color is None:
        rest_color = np.zeros((n, 0))
    return GaussianCloud(
        positions=positions,
        opacities=np.asarray(opacities, dtype=np.float64),
        scales=np.asarray(scales, dtype=np.float64),
        rotations=np.asarray(rotations, dtype=np.float64),
        dc_color=np.asarray(dc_color, dtype=np.float64),
        rest_color=np.asarray(rest_color, dtype=np.float64),
        source_path=source_path,
    )


def random_cloud(rng, n, spread=10.0) -> GaussianCloud:
    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    return build_cloud(
        positions=rng.uniform(-spread, spread, size=(n, 3)),
        opacities=rng.uniform(0.02, 0.98, size=n),
        scales=rng.uniform(0.05, 2.0, size=(n, 3)),
        rotations=quats,
        dc_color=rng.uniform(-1.0, 1.0, size=(n, 3)),
        rest_color=rng.uniform(-1.0, 1.0, size=(n, 9)),
    )


def ply_bytes(records, properties=None) -> bytes:
    """Hand-assembled binary PLY, independent of the package writer.

    ``records`` is a list of dicts keyed by property name; ``properties``
    fixes the declared order (defaults to the keys of the first record).
    """
    if properties is None:
        properties = list(records[0].keys())
    header = ["ply", "format binary_little_endian 1.0",
              f"element vertex {len(records)}"]
    header += [f"property float {name}" for name in properties]
    header.append("end_header")
    body = b"".join(
        struct.pack("<" + "f" * len(properties), *(record[name] for name in properties))
        for record in records
    )
    return ("\n".join(header) + "\n").encode("ascii") + body


MINIMAL_PROPERTIES = [
    "x", "y", "z", "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
]


def minimal_record(x=0.0, y=0.0, z=0.0, opacity=0.0, scale=(0.0, 0.0, 0.0),
                   rot=(1.0, 0.0, 0.0, 0.0)) -> dict:
    record = {"x": x, "y": y, "z": z, "opacity": opacity}
    record.update({f"scale_{i}": scale[i] for i in range(3)})
    record.update({f"rot_{i}": rot[i] for i in range(4)})
    return record


def reference_export_bytes(n=4, seed=3, rest_count=45) -> bytes:
    """Bytes shaped like a reference splat training export: the full property
    list x,y,z,nx,ny,nz,f_dc_0..2,f_rest_*,opacity,scale_0..2,rot_0..3."""
    rng = np.random.default_rng(seed)
    properties = (["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
                  + [f"f_rest_{i}" for i in range(rest_count)]
                  + ["opacity", "scale_0", "scale_1", "scale_2",
                     "rot_0", "rot_1", "rot_2", "rot_3"])
    records = []
    for _ in range(n):
        record = {name: 0.0 for name in properties}
        record["x"], record["y"], record["z"] = rng.uniform(-5, 5, size=3)
        for i in range(3):
            record[f"f_dc_{i}"] = rng.normal()
        for i in range(rest_count):
            record[f"f_rest_{i}"] = rng.normal() * 0.1
        record["opacity"] = rng.uniform(-4.0, 4.0)
        for i in range(3):
            record[f"scale_{i}"] = rng.uniform(-5.0, 0.0)
        quat = rng.normal(size=4)
        for i in range(4):
            record[f"rot_{i}"] = quat[i]
        records.append(record)
    return ply_bytes(records, properties)


def pgm16_bytes(values, maxval=65535) -> bytes:
    values = np.asarray(values, dtype=np.uint16)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n{maxval}\n".encode()
    return header + values.astype(">u2").tobytes()


def pgm8_bytes(values, maxval=255) -> bytes:
    values = np.asarray(values, dtype=np.uint8)
    header = f"P5\n{values.shape[1]} {values.shape[0]}\n{maxval}\n".encode()
    return header + values.tobytes()


def ppm_bytes(values, maxval=255) -> bytes:
    values = np.asarray(values, dtype=np.uint8)  # (H, W, 3)
    header = f"P6\n{values.shape[1]} {values.shape[0]}\n{maxval}\n".encode()
    return header + values.tobytes()


def pfm_bytes(values, little_endian=True) -> bytes:
    """Grayscale (H,W) or color (H,W,3) PFM; rows stored bottom-up."""
    values = np.asarray(values, dtype=np.float32)
    color = values.ndim == 3
    magic = b"PF" if color else b"Pf"
    height, width = values.shape[:2]
    scale = -1.0 if little_endian else 1.0
    header = magic + f"\n{width} {height}\n{scale}\n".encode()
    flipped = values[::-1]
    dtype = "<f4" if little_endian else ">f4"
    return header + flipped.astype(dtype).tobytes()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture
def origin_camera():
    return CameraDescriptor(position=np.zeros(3), label="origin")
