"""Hyperspectral cubes: storage, patches, augmentation, synthetic scenes, splits.

Cube file layout (little-endian)::

    b"HSIC"  u16 version=1  u32 H  u32 W  u32 CH  u32 K
    float32[H, W, CH]   values, band-interleaved-by-pixel
    int16[H, W]         labels, 0 = unlabeled, classes 1..K
    u8[H, W]            optional split plane: 0 none, 1 train, 2 test
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

MAGIC = b"HSIC"
VERSION = 1
_HEADER = struct.Struct("<4sHIIII")

SPLIT_NONE, SPLIT_TRAIN, SPLIT_TEST = 0, 1, 2
AUGMENT_OPS = ("rot45", "rot90", "rot135", "flip_h", "flip_v")


class CubeFormatError(ValueError):
    pass


@dataclass
class HsiCube:
    values: np.ndarray          # float32 [H, W, CH]
    labels: np.ndarray          # int16 [H, W]
    num_classes: int
    split: np.ndarray | None = None   # uint8 [H, W]

    def __post_init__(self):
        self.validate()

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def validate(self) -> None:
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise CubeFormatError(f"values must be [H, W, CH] with positive extents, got {self.values.shape}")
        h, w, _ = self.values.shape
        if self.labels.shape != (h, w):
            raise CubeFormatError(f"label plane {self.labels.shape} does not match {(h, w)}")
        if self.num_classes < 1:
            raise CubeFormatError("num_classes must be >= 1")
        if self.labels.min() < 0 or self.labels.max() > self.num_classes:
            raise CubeFormatError(f"labels must lie in [0, {self.num_classes}]")
        if self.split is not None:
            if self.split.shape != (h, w):
                raise CubeFormatError("split plane shape mismatch")
            if np.any((self.split > 0) & (self.labels < 1)):
                raise CubeFormatError("train/test pixels must be labeled")
            if self.split.max(initial=0) > SPLIT_TEST:
                raise CubeFormatError("split plane values must be 0, 1 or 2")


def write_cube(cube: HsiCube, path) -> None:
    h, w, ch = cube.values.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, h, w, ch, cube.num_classes))
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.labels, dtype="<i2").tobytes())
        if cube.split is not None:
            fh.write(np.ascontiguousarray(cube.split, dtype="u1").tobytes())


def read_cube(path) -> HsiCube:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise CubeFormatError(f"{path}: truncated header")
    magic, version, h, w, ch, k = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise CubeFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CubeFormatError(f"{path}: unsupported version {version}")
    if min(h, w, ch) == 0:
        raise CubeFormatError(f"{path}: zero extent in header (H={h}, W={w}, CH={ch})")
    n_vals, n_pix = h * w * ch * 4, h * w
    body = len(buf) - _HEADER.size
    if body < n_vals + 2 * n_pix:
        raise CubeFormatError(f"{path}: truncated payload ({body} bytes, need {n_vals + 2 * n_pix})")
    if body not in (n_vals + 2 * n_pix, n_vals + 3 * n_pix):
        raise CubeFormatError(f"{path}: unexpected payload size {body}")
    off = _HEADER.size
    values = np.frombuffer(buf, "<f4", h * w * ch, off).reshape(h, w, ch).astype(np.float32)
    off += n_vals
    labels = np.frombuffer(buf, "<i2", n_pix, off).reshape(h, w).astype(np.int16)
    off += 2 * n_pix
    split = None
    if body == n_vals + 3 * n_pix:
        split = np.frombuffer(buf, "u1", n_pix, off).reshape(h, w).copy()
    return HsiCube(values, labels, int(k), split)


def normalize_values(values: np.ndarray, mode: str = "minmax") -> np.ndarray:
    """Per-band scaling: ``minmax`` to [0, 1] or ``zscore``; constant bands map to 0."""
    v = values.astype(np.float64)
    if mode == "minmax":
        lo, hi = v.min(axis=(0, 1)), v.max(axis=(0, 1))
        span = np.where(hi > lo, hi - lo, 1.0)
        out = (v - lo) / span
    elif mode == "zscore":
        mu, sd = v.mean(axis=(0, 1)), v.std(axis=(0, 1))
        out = (v - mu) / np.where(sd > 0, sd, 1.0)
    elif mode == "none":
        out = v
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return out.astype(np.float32)


# ------------------------------------------------------------------- patches

@dataclass
class Patch:
    values: np.ndarray    # [p, p, CH]
    label: int            # 0-based class
    center: tuple[int, int]


def _check_odd(p: int) -> None:
    if p < 1 or p % 2 == 0:
        raise ValueError(f"patch size must be a positive odd int, got {p}")


def padded(values: np.ndarray, p: int) -> np.ndarray:
    """Mirror-pad (edge pixel not repeated) so every pixel has a full window."""
    half = p // 2
    return np.pad(values, ((half, half), (half, half), (0, 0)), mode="reflect")


def extract_patch(cube: HsiCube, row: int, col: int, p: int) -> Patch:
    _check_odd(p)
    vals = extract_patches(cube.values, [(row, col)], p)[0]
    return Patch(vals, int(cube.labels[row, col]) - 1, (row, col))


def extract_patches(values: np.ndarray, coords, p: int, padded_values=None) -> np.ndarray:
    """Stack of [p, p, CH] windows centered at ``coords``."""
    _check_odd(p)
    pv = padded(values, p) if padded_values is None else padded_values
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    out = np.empty((len(coords), p, p, values.shape[2]), dtype=values.dtype)
    for i, (r, c) in enumerate(coords):
        out[i] = pv[r:r + p, c:c + p]
    return out


def _rotation_source(p: int, degrees: float) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-neighbor source indices for a counter-clockwise rotation.

    Sources falling outside the window are mirrored back in.
    """
    m = (p - 1) / 2.0
    r, c = np.meshgrid(np.arange(p), np.arange(p), indexing="ij")
    x, y = c - m, m - r
    th = np.deg2rad(degrees)
    sx = x * np.cos(th) + y * np.sin(th)
    sy = -x * np.sin(th) + y * np.cos(th)
    src_r = np.floor(m - sy + 0.5).astype(np.int64)
    src_c = np.floor(m + sx + 0.5).astype(np.int64)
    return _mirror(src_r, p), _mirror(src_c, p)


def _mirror(i: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(i)
    period = 2 * (n - 1)
    i = np.mod(i, period)
    return np.where(i >= n, period - i, i)


def augment_array(values: np.ndarray, op: str) -> np.ndarray:
    """Apply one augmentation to a [p, p, CH] (or batched [N, p, p, CH]) window."""
    batched = values.ndim == 4
    v = values if batched else values[None]
    if v.shape[1] != v.shape[2]:
        raise ValueError("augmentation needs square patches")
    if op == "rot90":
        out = np.rot90(v, k=1, axes=(1, 2))
    elif op == "flip_h":
        out = v[:, :, ::-1]
    elif op == "flip_v":
        out = v[:, ::-1, :]
    elif op in ("rot45", "rot135"):
        sr, sc = _rotation_source(v.shape[1], 45.0 if op == "rot45" else 135.0)
        out = v[:, sr, sc]
    else:
        raise ValueError(f"unknown augmentation {op!r}")
    out = np.ascontiguousarray(out)
    return out if batched else out[0]


def augment(patch: Patch, op: str) -> Patch:
    return Patch(augment_array(patch.values, op), patch.label, patch.center)


# ----------------------------------------------------------------- synthetic

def synthetic_endmembers(bands: int, classes: int, seed: int) -> np.ndarray:
    """[K, CH] smooth class spectra: cubic splines through random control points."""
    rng = np.random.default_rng([seed, 1])
    n_ctrl = max(4, min(8, bands // 3))
    knots = np.linspace(0.0, 1.0, n_ctrl)
    grid = np.linspace(0.0, 1.0, bands)
    spectra = [CubicSpline(knots, rng.uniform(0.1, 0.9, n_ctrl))(grid) for _ in range(classes)]
    return np.asarray(spectra, dtype=np.float32)


def gen_synthetic(height: int, width: int, bands: int, classes: int,
                  noise_sigma: float, seed: int) -> HsiCube:
    """Voronoi-partitioned scene with one endmember per class plus Gaussian noise.

    Every pixel is labeled. Three Voronoi sites per class, so all classes appear.
    """
    if not 1 <= classes <= 16:
        raise ValueError("classes must be in [1, 16]")
    if min(height, width, bands) < 1 or noise_sigma < 0:
        raise ValueError("invalid synthetic scene parameters")
    ends = synthetic_endmembers(bands, classes, seed)
    rng = np.random.default_rng([seed, 2])
    n_sites = 3 * classes
    sites = rng.uniform(0, [height, width], size=(n_sites, 2))
    site_class = np.arange(n_sites) % classes
    rr, cc = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    d2 = (rr[..., None] - sites[:, 0]) ** 2 + (cc[..., None] - sites[:, 1]) ** 2
    cls = site_class[np.argmin(d2, axis=-1)]
    values = ends[cls]
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape).astype(np.float32)
    return HsiCube(values.astype(np.float32), (cls + 1).astype(np.int16), classes)


# --------------------------------------------------------------------- split

@dataclass
class SplitManifest:
    train: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    test: dict[int, list[tuple[int, int]]] = field(default_factory=dict)
    seed: int | None = None

    def counts(self) -> dict[int, tuple[int, int]]:
        keys = sorted(set(self.train) | set(self.test))
        return {k: (len(self.train.get(k, [])), len(self.test.get(k, []))) for k in keys}

    def coords(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        """(coords [n, 2], 0-based labels [n]) over all classes, class-major order."""
        part = self.train if which == "train" else self.test
        coords, labels = [], []
        for k in sorted(part):
            coords.extend(part[k])
            labels.extend([k - 1] * len(part[k]))
        return np.asarray(coords, dtype=np.int64).reshape(-1, 2), np.asarray(labels, dtype=np.int64)

    def to_json(self) -> str:
        enc = lambda part: {str(k): [list(map(int, rc)) for rc in v] for k, v in sorted(part.items())}  # noqa: E731
        return json.dumps({"seed": self.seed, "counts": {str(k): list(v) for k, v in self.counts().items()},
                           "train": enc(self.train), "test": enc(self.test)})

    @classmethod
    def from_json(cls, text: str) -> SplitManifest:
        d = json.loads(text)
        dec = lambda part: {int(k): [tuple(rc) for rc in v] for k, v in part.items()}  # noqa: E731
        m = cls(dec(d["train"]), dec(d["test"]), d.get("seed"))
        for k, (ntr, nte) in m.counts().items():
            want = d.get("counts", {}).get(str(k))
            if want is not None and list(want) != [ntr, nte]:
                raise ValueError(f"manifest counts for class {k} do not match coordinate lists")
        return m


def build_split(cube: HsiCube, per_class_train, seed: int) -> SplitManifest:
    """Stratified random draw of training pixels; every other labeled pixel is test.

    ``per_class_train`` is an int (same for every class), a sequence indexed
    by class-1, or a mapping from class id (1..K) to count.
    """
    k = cube.num_classes
    if isinstance(per_class_train, int):
        want = {c: per_class_train for c in range(1, k + 1)}
    elif isinstance(per_class_train, dict):
        want = {int(c): int(n) for c, n in per_class_train.items()}
    else:
        want = {i + 1: int(n) for i, n in enumerate(per_class_train)}
    rng = np.random.default_rng(seed)
    m = SplitManifest(seed=seed)
    for c in range(1, k + 1):
        pix = np.argwhere(cube.labels == c)
        n = want.get(c, 0)
        if n > len(pix):
            raise ValueError(f"class {c}: requested {n} training pixels, only {len(pix)} available")
        order = rng.permutation(len(pix))
        m.train[c] = [tuple(map(int, rc)) for rc in pix[order[:n]]]
        m.test[c] = [tuple(map(int, rc)) for rc in pix[order[n:]]]
    return m


def split_plane(cube: HsiCube, manifest: SplitManifest) -> np.ndarray:
    plane = np.zeros(cube.labels.shape, dtype=np.uint8)
    for tag, part in ((SPLIT_TRAIN, manifest.train), (SPLIT_TEST, manifest.test)):
        for rcs in part.values():
            if rcs:
                idx = np.asarray(rcs)
                plane[idx[:, 0], idx[:, 1]] = tag
    return plane


def manifest_from_plane(cube: HsiCube) -> SplitManifest:
    if cube.split is None:
        raise ValueError("cube has no split plane")
    m = SplitManifest()
    for tag, part in ((SPLIT_TRAIN, m.train), (SPLIT_TEST, m.test)):
        for c in range(1, cube.num_classes + 1):
            part[c] = [tuple(map(int, rc)) for rc in np.argwhere((cube.split == tag) & (cube.labels == c))]
    return m
