"""Paired two-view datasets: synthetic factor data, rotation/flip image views, corruptions, IO."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import container

ROTATIONS = (0.0, math.pi / 16, math.pi / 8, 3 * math.pi / 16, math.pi / 4)
FLIPS = ("none", "horizontal", "vertical", "horizontal+vertical")

NOISE_SCHEDULE = (0.04, 0.08, 0.12, 0.18, 0.26)
BLUR_SCHEDULE = (3, 5, 7, 9, 11)
CORRUPTIONS = ("gaussian_noise", "blur")

DATASET_MAGIC = b"DVDS"
DATASET_VERSION = 1


@dataclass
class MultiviewDataset:
    x: np.ndarray
    y: np.ndarray
    shared_label: np.ndarray
    private_label_x: np.ndarray
    private_label_y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.x.shape[0]
        for name in ("y", "shared_label", "private_label_x", "private_label_y"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, x has {n}")
        for name in self.label_sets():
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.int64))

    @staticmethod
    def label_sets() -> tuple:
        return ("shared_label", "private_label_x", "private_label_y")

    def __len__(self) -> int:
        return self.x.shape[0]

    @property
    def d_x(self) -> int:
        return self.x.shape[1]

    @property
    def d_y(self) -> int:
        return self.y.shape[1]

    def subset(self, idx) -> "MultiviewDataset":
        idx = np.asarray(idx)
        return MultiviewDataset(
            self.x[idx], self.y[idx], self.shared_label[idx], self.private_label_x[idx],
            self.private_label_y[idx], dict(self.meta),
        )

    def labels(self, label_set: str) -> np.ndarray:
        key = {"shared": "shared_label", "private_x": "private_label_x", "private_y": "private_label_y"}
        return getattr(self, key.get(label_set, label_set))


def train_test_split(n: int, seed: int, train_fraction: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, then the first 80% of indices train and the rest test."""
    perm = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_fraction * n))
    return np.sort(perm[:cut]), np.sort(perm[cut:])


# ---------------------------------------------------------------------------
# synthetic latent-factor benchmark


def _onehot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1.0
    return out


def _full_rank_map(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    while True:
        w = rng.standard_normal((rows, cols))
        if np.linalg.matrix_rank(w) == min(rows, cols):
            return w


def gen_factor_dataset(
    n: int = 5000,
    k_shared: int = 10,
    k_px: int = 5,
    k_py: int = 4,
    d_x: int = 64,
    d_y: int = 64,
    noise_sd: float = 0.1,
    seed: int = 0,
) -> MultiviewDataset:
    """Two views mixing a shared class with one view-private class each.

    ``x = W_x [onehot(c) || onehot(a)] + noise`` and likewise for ``y`` with ``b``;
    c, a and b are drawn independently and uniformly.
    """
    for name, k in (("n", n), ("k_shared", k_shared), ("k_px", k_px), ("k_py", k_py)):
        if k < 2:
            raise ValueError(f"{name} must be >= 2, got {k}")
    if d_x < k_shared + k_px or d_y < k_shared + k_py:
        raise ValueError(f"view dims ({d_x}, {d_y}) too small for a full-rank mixing of the factors")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    rng = np.random.default_rng(seed)
    w_x = _full_rank_map(rng, d_x, k_shared + k_px)
    w_y = _full_rank_map(rng, d_y, k_shared + k_py)
    c = rng.integers(0, k_shared, n)
    a = rng.integers(0, k_px, n)
    b = rng.integers(0, k_py, n)
    x = np.hstack([_onehot(c, k_shared), _onehot(a, k_px)]) @ w_x.T + noise_sd * rng.standard_normal((n, d_x))
    y = np.hstack([_onehot(c, k_shared), _onehot(b, k_py)]) @ w_y.T + noise_sd * rng.standard_normal((n, d_y))
    meta = {
        "generator": "factor",
        "seed": seed,
        "n": n,
        "k_shared": k_shared,
        "k_px": k_px,
        "k_py": k_py,
        "d_x": d_x,
        "d_y": d_y,
        "noise_sd": noise_sd,
    }
    return MultiviewDataset(x, y, c, a, b, meta)


# ---------------------------------------------------------------------------
# image views


def image_side(length: int) -> int:
    side = math.isqrt(length)
    if side * side != length:
        raise ValueError(f"row length {length} is not a square image")
    return side


def rotate_image(img: np.ndarray, angle: float) -> np.ndarray:
    """Counter-clockwise rotation about the image centre, bilinear, zero outside."""
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    # inverse map: output pixel -> source coordinate
    cos, sin = math.cos(angle), math.sin(angle)
    dy, dx = rows - cy, cols - cx
    src_r = cy + cos * dy - sin * dx
    src_c = cx + sin * dy + cos * dx
    r0 = np.floor(src_r).astype(int)
    c0 = np.floor(src_c).astype(int)
    fr, fc = src_r - r0, src_c - c0
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = img

    def at(r, c):
        return padded[np.clip(r + 1, 0, h + 1), np.clip(c + 1, 0, w + 1)]

    out = (
        at(r0, c0) * (1 - fr) * (1 - fc)
        + at(r0, c0 + 1) * (1 - fr) * fc
        + at(r0 + 1, c0) * fr * (1 - fc)
        + at(r0 + 1, c0 + 1) * fr * fc
    )
    return out


def flip_image(img: np.ndarray, flip: str) -> np.ndarray:
    if flip == "none":
        return img.copy()
    if flip == "horizontal":
        return img[:, ::-1].copy()
    if flip == "vertical":
        return img[::-1, :].copy()
    if flip == "horizontal+vertical":
        return img[::-1, ::-1].copy()
    raise ValueError(f"unknown flip {flip!r}; expected one of {FLIPS}")


def _draw_line(canvas: np.ndarray, p0, p1):
    steps = int(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1])) * 2) + 1
    for t in np.linspace(0.0, 1.0, steps):
        r = int(round(p0[0] + t * (p1[0] - p0[0])))
        c = int(round(p0[1] + t * (p1[1] - p0[1])))
        canvas[r, c] = 1.0


def glyph_prototypes(side: int = 16, n_classes: int = 10, seed: int = 1234) -> np.ndarray:
    """Ten fixed, asymmetric stroke patterns drawn inside the central disc."""
    rng = np.random.default_rng(seed)
    protos = np.zeros((n_classes, side, side))
    centre = (side - 1) / 2.0
    radius = side * 0.36
    for k in range(n_classes):
        pts = []
        for _ in range(4):
            ang = rng.uniform(0, 2 * math.pi)
            rad = radius * math.sqrt(rng.uniform(0.15, 1.0))
            pts.append((centre + rad * math.sin(ang), centre + rad * math.cos(ang)))
        for p0, p1 in zip(pts[:-1], pts[1:]):
            _draw_line(protos[k], p0, p1)
    return protos


def glyph_dataset(n: int = 5000, side: int = 16, seed: int = 0, flip_prob: float = 0.02):
    """Bundled base images: seeded shifts, stroke thickening and pixel flips of ten prototypes.

    Returns ``(images, labels)`` with images flattened row-major in [0, 1].
    """
    rng = np.random.default_rng(seed)
    protos = glyph_prototypes(side)
    labels = rng.integers(0, protos.shape[0], n)
    shifts = rng.integers(-1, 2, size=(n, 2))
    thicken = rng.random(n) < 0.5
    images = np.empty((n, side * side))
    for i in range(n):
        img = np.roll(protos[labels[i]], tuple(shifts[i]), axis=(0, 1))
        if thicken[i]:
            img = ndimage.binary_dilation(img > 0.5, structure=np.ones((2, 2))).astype(np.float64)
        noise = rng.random(img.shape) < flip_prob
        images[i] = np.where(noise, 1.0 - img, img).reshape(-1)
    return images, labels


def gen_twoview_transform(base_images, base_labels, seed: int = 0) -> MultiviewDataset:
    """View x: a random rotation from ``ROTATIONS``; view y: a random flip from ``FLIPS``.

    Both choices are uniform and drawn independently of the base label.
    """
    base_images = np.asarray(base_images, dtype=np.float64)
    base_labels = np.asarray(base_labels)
    n, length = base_images.shape
    side = image_side(length)
    rng = np.random.default_rng(seed)
    rot = rng.integers(0, len(ROTATIONS), n)
    flip = rng.integers(0, len(FLIPS), n)
    x = np.empty_like(base_images)
    y = np.empty_like(base_images)
    for i in range(n):
        img = base_images[i].reshape(side, side)
        x[i] = rotate_image(img, ROTATIONS[rot[i]]).reshape(-1)
        y[i] = flip_image(img, FLIPS[flip[i]]).reshape(-1)
    meta = {"generator": "twoview", "seed": seed, "n": n, "side": side,
            "rotations": list(ROTATIONS), "flips": list(FLIPS)}
    return MultiviewDataset(x, y, base_labels, rot, flip, meta)


def gen_glyph_twoview(n: int = 5000, seed: int = 0) -> MultiviewDataset:
    images, labels = glyph_dataset(n, seed=seed)
    ds = gen_twoview_transform(images, labels, seed=seed + 1)
    ds.meta.update({"generator": "glyph", "base": "procedural glyphs 16x16"})
    return ds


# ---------------------------------------------------------------------------
# corruptions


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    level: int

    def __post_init__(self):
        if self.kind not in CORRUPTIONS:
            raise ValueError(f"unknown corruption {self.kind!r}; expected one of {CORRUPTIONS}")
        if not 1 <= int(self.level) <= 5:
            raise ValueError(f"corruption level must be in 1..5, got {self.level}")

    @classmethod
    def parse(cls, text: str) -> "CorruptionSpec":
        kind, _, level = text.partition(":")
        if not level:
            raise ValueError(f"corruption must look like kind:level, got {text!r}")
        return cls(kind, int(level))

    def __str__(self) -> str:
        return f"{self.kind}:{self.level}"


def corrupt(view, spec: CorruptionSpec, seed: int = 0) -> np.ndarray:
    """Gaussian noise scaled by the view's value range, or a zero-padded box blur.

    Rows whose length is a perfect square are blurred as square images; other rows
    as 1-D signals.
    """
    view = np.asarray(view, dtype=np.float64)
    if view.ndim != 2:
        raise ValueError("corrupt expects a 2-D (samples x features) matrix")
    if spec.kind == "gaussian_noise":
        value_range = float(view.max() - view.min()) if view.size else 0.0
        sd = NOISE_SCHEDULE[spec.level - 1] * value_range
        return view + sd * np.random.default_rng(seed).standard_normal(view.shape)
    width = BLUR_SCHEDULE[spec.level - 1]
    n, length = view.shape
    side = math.isqrt(length)
    if side * side == length:
        imgs = view.reshape(n, side, side)
        out = ndimage.uniform_filter(imgs, size=(1, width, width), mode="constant", cval=0.0)
        return out.reshape(n, length)
    return ndimage.uniform_filter1d(view, size=width, axis=1, mode="constant", cval=0.0)


def corrupt_dataset(ds: MultiviewDataset, spec_x: CorruptionSpec | None, spec_y: CorruptionSpec | None,
                    seed: int = 0) -> MultiviewDataset:
    x = corrupt(ds.x, spec_x, seed) if spec_x else ds.x
    y = corrupt(ds.y, spec_y, seed + 1) if spec_y else ds.y
    meta = dict(ds.meta)
    meta["corruption"] = {
        "x": str(spec_x) if spec_x else None,
        "y": str(spec_y) if spec_y else None,
        "noise_sd_schedule": list(NOISE_SCHEDULE),
        "blur_width_schedule": list(BLUR_SCHEDULE),
    }
    return MultiviewDataset(x, y, ds.shared_label, ds.private_label_x, ds.private_label_y, meta)


# ---------------------------------------------------------------------------
# IDX files


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 4:
        raise IdxTruncatedError(f"{path}: shorter than the 4-byte magic")
    found = struct.unpack(">I", buf[:4])[0]
    if found != magic:
        raise IdxMagicError(f"{path}: magic {found:#010x}, expected {magic:#010x}")
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise IdxTruncatedError(f"{path}: header truncated")
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims))
    if len(buf) - header < count:
        raise IdxTruncatedError(f"{path}: expected {count} data bytes, found {len(buf) - header}")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> tuple[np.ndarray, np.ndarray]:
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    n = images.shape[0]
    return images.reshape(n, -1).astype(np.float64) / 255.0, labels.astype(np.int64)


def write_idx(images_path, labels_path, images: np.ndarray, labels) -> None:
    """``images`` is (n, rows, cols) uint8-convertible; floats in [0, 1] are rescaled."""
    images = np.asarray(images)
    if images.dtype.kind == "f":
        images = np.rint(np.clip(images, 0.0, 1.0) * 255.0)
    images = images.astype(np.uint8)
    labels = np.asarray(labels).astype(np.uint8)
    n, rows, cols = images.shape
    Path(images_path).write_bytes(struct.pack(">IIII", IMAGES_MAGIC, n, rows, cols) + images.tobytes())
    Path(labels_path).write_bytes(struct.pack(">II", LABELS_MAGIC, labels.size) + labels.tobytes())


# ---------------------------------------------------------------------------
# DVDS container


def dataset_to_bytes(ds: MultiviewDataset) -> bytes:
    meta = json.dumps(ds.meta, sort_keys=True).encode("utf-8")
    arrays = {
        "x": ds.x,
        "y": ds.y,
        "shared_label": ds.shared_label,
        "private_label_x": ds.private_label_x,
        "private_label_y": ds.private_label_y,
        "meta": np.frombuffer(meta, dtype=np.uint8),
    }
    return container.encode(DATASET_MAGIC, DATASET_VERSION, arrays)


def save_dataset(ds: MultiviewDataset, path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path) -> MultiviewDataset:
    _, arrays = container.decode(Path(path).read_bytes(), DATASET_MAGIC, DATASET_VERSION)
    missing = {"x", "y", "shared_label", "private_label_x", "private_label_y", "meta"} - set(arrays)
    if missing:
        raise container.CorruptPayloadError(f"dataset file lacks arrays {sorted(missing)}")
    meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    return MultiviewDataset(meta=meta, **arrays)
