"""Datasets: CSV / IDX ingestion, synthetic generators, seeded splits.

Every :class:`Dataset` holds finite values in ``[0, 1]``; the decoder ends in
a sigmoid, so this is checked at construction.

Synthetic generators work in a world box (default ``[-1, 1]`` per axis) and
map to ``[0, 1]`` with the affine squeeze ``(p - lo) / (hi - lo)`` followed by
clipping.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

IDX_UBYTE_3D = 0x00000803
ECG_LENGTH = 140


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    name: str = "dataset"
    tags: np.ndarray | None = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.X, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValidationError(f"{self.name}: expected a non-empty N x D matrix, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValidationError(f"{self.name}: non-finite values")
        if x.min() < 0.0 or x.max() > 1.0:
            raise ValidationError(f"{self.name}: values must lie in [0, 1]")
        object.__setattr__(self, "X", x)
        if self.tags is not None and len(self.tags) != x.shape[0]:
            raise ValidationError(f"{self.name}: {len(self.tags)} tags for {x.shape[0]} rows")

    def __len__(self):
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]


# --- files ----------------------------------------------------------------

def load_csv(path, has_header: bool = False, name: str | None = None) -> Dataset:
    path = Path(path)
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if has_header and lineno == 1:
                continue
            if not row or all(not c.strip() for c in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}: expected {width} columns, got {len(row)}", line=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise FormatError(f"{path}: non-numeric cell", line=lineno) from None
            if not all(np.isfinite(vals)):
                raise FormatError(f"{path}: non-finite value", line=lineno)
            rows.append(vals)
    if not rows:
        raise FormatError(f"{path}: no data rows")
    return Dataset(np.array(rows), name or path.stem)


def save_csv(dataset: Dataset, path, header: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if header:
            w.writerow([f"x{j}" for j in range(dataset.dim)])
        for row in dataset.X:
            w.writerow([repr(float(v)) for v in row])


def load_idx(path, name: str | None = None) -> Dataset:
    """IDX file of unsigned-byte images (magic ``0x00000803``), scaled by 1/255."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: truncated header", offset=0)
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != IDX_UBYTE_3D:
        raise FormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{IDX_UBYTE_3D:08x}", offset=0)
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated dimension header", offset=len(raw))
    n, h, w = struct.unpack(">III", raw[4:16])
    expected = n * h * w
    payload = raw[16:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: header declares {n}x{h}x{w} = {expected} bytes, payload has {len(payload)}",
            offset=16 + min(len(payload), expected),
        )
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, h * w)
    return Dataset(pixels.astype(np.float64) / 255.0, name or path.stem)


def write_idx(images, path) -> None:
    """Write an ``(n, h, w)`` uint8 array as an IDX file."""
    a = np.asarray(images, dtype=np.uint8)
    if a.ndim != 3:
        raise ValidationError("write_idx expects an (n, h, w) array")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_UBYTE_3D, *a.shape))
        fh.write(a.tobytes())


# --- generators -----------------------------------------------------------

def squeeze(points, box=(-1.0, 1.0)) -> np.ndarray:
    lo, hi = box
    if not hi > lo:
        raise ValidationError(f"invalid box {box}")
    return np.clip((np.asarray(points, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)


def gen_blobs(n: int, centers, spread: float, rng: np.random.Generator,
              box=(-1.0, 1.0), name: str = "blobs") -> Dataset:
    """Equal-weight isotropic Gaussian mixture; tags hold the component index."""
    c = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if n < 1 or c.shape[0] < 1 or spread < 0:
        raise ValidationError("gen_blobs needs n >= 1, at least one center, spread >= 0")
    comp = rng.integers(0, c.shape[0], size=n)
    pts = c[comp] + spread * rng.standard_normal((n, c.shape[1]))
    return Dataset(squeeze(pts, box), name, comp)


def ring_points(n: int, radius: float, thickness: float, rng: np.random.Generator,
                center=(0.0, 0.0)) -> np.ndarray:
    """Annulus sample in world coordinates (before the squeeze)."""
    if n < 1 or radius <= 0 or thickness < 0 or thickness > radius:
        raise ValidationError("gen_ring needs n >= 1 and 0 <= thickness <= radius")
    r = rng.uniform(radius - thickness, radius + thickness, size=n)
    t = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.asarray(center, dtype=np.float64) + np.c_[r * np.cos(t), r * np.sin(t)]


def gen_ring(n: int, radius: float, thickness: float, rng: np.random.Generator,
             center=(0.0, 0.0), box=(-1.0, 1.0), name: str = "ring") -> Dataset:
    return Dataset(squeeze(ring_points(n, radius, thickness, rng, center), box), name)


def gen_ecg_like(n: int, anomaly: bool, rng: np.random.Generator,
                 noise: float = 0.03, name: str | None = None) -> Dataset:
    """Synthetic heartbeats of 140 samples.

    A normal beat is a sum of Gaussian bumps (P wave, QRS complex, T wave) on a
    slow sinusoidal baseline, with small jitter in timing and amplitude.
    Anomalous beats get one of: a suppressed or inverted R peak, a shifted
    (phase-defect) QRS, or a doubled T-wave amplitude.
    """
    if n < 1 or noise < 0:
        raise ValidationError("gen_ecg_like needs n >= 1 and noise >= 0")
    t = np.linspace(0.0, 1.0, ECG_LENGTH)
    waves = (  # (center, width, amplitude)
        (0.18, 0.035, 0.15),
        (0.36, 0.010, -0.12),
        (0.40, 0.012, 1.00),
        (0.44, 0.012, -0.25),
        (0.68, 0.050, 0.30),
    )
    out = np.empty((n, ECG_LENGTH))
    kinds = np.zeros(n, dtype=int)
    for i in range(n):
        shift = rng.normal(0, 0.01)
        amp = 1.0 + rng.normal(0, 0.05)
        params = [[c + shift, w, a * amp] for c, w, a in waves]
        if anomaly:
            kind = int(rng.integers(1, 4))
            kinds[i] = kind
            if kind == 1:
                params[2][2] *= rng.choice([-0.6, 0.2])
            elif kind == 2:
                for p in params[1:4]:
                    p[0] += rng.uniform(0.12, 0.2)
            else:
                params[4][2] *= 2.0
        beat = 0.05 * np.sin(2 * np.pi * (t + rng.uniform()))
        for c, w, a in params:
            beat += a * np.exp(-0.5 * ((t - c) / w) ** 2)
        out[i] = beat + noise * rng.standard_normal(ECG_LENGTH)
    return Dataset(squeeze(out, (-0.8, 1.4)), name or ("ecg_anomaly" if anomaly else "ecg"), kinds)


def split(dataset: Dataset, fraction: float, rng: np.random.Generator) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, first ``round(fraction * N)`` rows go to the first part."""
    if not 0 < fraction < 1:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    n = len(dataset)
    k = int(round(fraction * n))
    if k < 1 or k >= n:
        raise ValidationError(f"fraction {fraction} leaves an empty part for N={n}")
    perm = rng.permutation(n)
    tags = dataset.tags

    def part(idx, suffix):
        return Dataset(dataset.X[idx], f"{dataset.name}_{suffix}",
                       None if tags is None else np.asarray(tags)[idx])

    return part(perm[:k], "a"), part(perm[k:], "b")
