"""Image datasets: loading, resizing, z-score normalization, augmentation,
stratified splits and a synthetic stand-in generator.

Pixels are float32 in [0, 1], channels-last (H, W, 3).
"""

from __future__ import annotations

import colorsys
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

HAM10000_CLASSES = ("akiec", "bcc", "bkl", "df", "mel", "nv", "vasc")
AUGMENT_OPS = ("rot90", "rot180", "rot270", "hflip", "vflip")
IMAGE_EXTS = (".ppm", ".png", ".jpg", ".jpeg", ".bmp")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledImage:
    image_id: str
    pixels: np.ndarray
    label: int


@dataclass(frozen=True)
class NormalizationStats:
    mean: np.ndarray
    std: np.ndarray

    @property
    def degenerate(self) -> bool:
        return bool(np.any(self.std <= 0))


@dataclass
class Dataset:
    images: list[LabeledImage]
    classes: tuple[str, ...]
    stats: NormalizationStats | None = None

    def __post_init__(self):
        ids = [im.image_id for im in self.images]
        if len(set(ids)) != len(ids):
            raise DatasetError("image ids must be unique")
        for im in self.images:
            if not 0 <= im.label < len(self.classes):
                raise DatasetError(f"{im.image_id}: class index {im.label} has no name")

    def __len__(self):
        return len(self.images)

    @property
    def ids(self) -> list[str]:
        return [im.image_id for im in self.images]

    def labels(self) -> np.ndarray:
        return np.array([im.label for im in self.images], dtype=np.int64)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stacked ``(images, labels)``; images are normalized when stats are set."""
        if not self.images:
            raise DatasetError("dataset is empty")
        x = np.stack([im.pixels for im in self.images])
        if self.stats is not None:
            x = normalize(x, self.stats)
        return x, self.labels()

    def histogram(self) -> dict[str, int]:
        counts = np.bincount(self.labels(), minlength=len(self.classes)) if self.images else np.zeros(len(self.classes), int)
        return {c: int(n) for c, n in zip(self.classes, counts)}

    def map(self, fn) -> "Dataset":
        return Dataset([replace(im, pixels=fn(im.pixels)) for im in self.images], self.classes, self.stats)

    def with_stats(self, stats: NormalizationStats | None) -> "Dataset":
        return Dataset(list(self.images), self.classes, stats)


# -- image IO -----------------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    """Decode a binary (P6) PPM to float32 [0, 1]."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.uint8
    n = h * w * 3
    raw = np.frombuffer(data, dtype=dtype, count=n, offset=pos)
    return (raw.reshape(h, w, 3).astype(np.float32) / np.float32(maxval)).astype(np.float32)


def write_ppm(path, pixels: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(pixels) * 255), 0, 255).astype(np.uint8)
    h, w, _ = arr.shape
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + arr.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return read_ppm(path)
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise DatasetError(f"{path}: decoding {path.suffix} needs Pillow (pip install pillow)") from exc
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255)


def _find_image(directory: Path, image_id: str) -> Path | None:
    for ext in IMAGE_EXTS:
        p = directory / f"{image_id}{ext}"
        if p.exists():
            return p
    return None


def load_dataset(
    image_dir,
    metadata,
    classes=HAM10000_CLASSES,
    id_column: str = "image_id",
    label_column: str = "dx",
    size: tuple[int, int] | None = None,
    workers: int = 1,
) -> Dataset:
    """Read a flat ``<image_id>.<ext>`` directory described by a metadata CSV.

    Rows keep metadata order. ``size=(H, W)`` resizes every image on load.
    """
    image_dir = Path(image_dir)
    classes = tuple(classes)
    index = {c: i for i, c in enumerate(classes)}
    with open(metadata, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing_cols = {id_column, label_column} - set(reader.fieldnames or ())
        if missing_cols:
            raise DatasetError(f"metadata lacks column(s) {sorted(missing_cols)}")
        rows = [(r[id_column], r[label_column]) for r in reader]
    for image_id, label in rows:
        if label not in index:
            raise DatasetError(f"unknown diagnosis label {label!r} (image {image_id})")
    paths = [_find_image(image_dir, i) for i, _ in rows]
    absent = [i for (i, _), p in zip(rows, paths) if p is None]
    if absent:
        raise DatasetError(f"missing image file(s) for id(s): {', '.join(absent)}")

    def load(p):
        img = read_image(p)
        return resize(img, size) if size else img

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pixels = list(pool.map(load, paths))
    return Dataset([LabeledImage(i, px, index[lab]) for (i, lab), px in zip(rows, pixels)], classes)


def save_dataset(dataset: Dataset, directory, metadata_name: str = "metadata.csv") -> Path:
    """Write PPM images plus a metadata CSV in the layout :func:`load_dataset` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for im in dataset.images:
        write_ppm(directory / f"{im.image_id}.ppm", im.pixels)
    meta = directory / metadata_name
    with open(meta, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "dx"])
        for im in dataset.images:
            w.writerow([im.image_id, dataset.classes[im.label]])
    return meta


# -- preprocessing ------------------------------------------------------------


def resize(image: np.ndarray, target: tuple[int, int] = (224, 224)) -> np.ndarray:
    """Bilinear resize with half-pixel centres and edge clamping.

    Same-size input is returned unchanged (bitwise).
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    th, tw = target
    if (h, w) == (th, tw):
        return image.copy()

    def axis(n_in, n_out):
        src = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    y0, y1, fy = axis(h, th)
    x0, x1, fx = axis(w, tw)
    img = image.astype(np.float64)
    top = img[y0][:, x0] * (1 - fx)[None, :, None] + img[y0][:, x1] * fx[None, :, None]
    bot = img[y1][:, x0] * (1 - fx)[None, :, None] + img[y1][:, x1] * fx[None, :, None]
    out = top * (1 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.clip(out, 0, 1).astype(np.float32)


def compute_stats(dataset) -> NormalizationStats:
    """Per-channel mean and population standard deviation over all pixels."""
    if isinstance(dataset, Dataset):
        if not dataset.images:
            raise DatasetError("cannot compute statistics of an empty dataset")
        x = np.stack([im.pixels for im in dataset.images])
    else:
        x = np.asarray(dataset)
        if x.size == 0:
            raise DatasetError("cannot compute statistics of an empty dataset")
    flat = x.reshape(-1, x.shape[-1]).astype(np.float64)
    std = flat.std(axis=0)
    # a constant channel must read as exactly 0, not as rounding residue
    std[flat.min(axis=0) == flat.max(axis=0)] = 0.0
    return NormalizationStats(flat.mean(axis=0), std)


def normalize(image: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    """``(I - mean) / std`` per channel; refuses zero-variance channels."""
    if stats.degenerate:
        bad = [int(c) for c in np.flatnonzero(stats.std <= 0)]
        raise DatasetError(f"channel(s) {bad} have zero standard deviation; normalization undefined")
    out = (np.asarray(image, dtype=np.float64) - stats.mean) / stats.std
    return out.astype(np.float32)


# -- augmentation -------------------------------------------------------------


def apply_op(image: np.ndarray, op: str) -> np.ndarray:
    if op == "rot90":
        return np.rot90(image, 1, axes=(0, 1)).copy()
    if op == "rot180":
        return np.rot90(image, 2, axes=(0, 1)).copy()
    if op == "rot270":
        return np.rot90(image, 3, axes=(0, 1)).copy()
    if op == "hflip":
        return image[:, ::-1].copy()
    if op == "vflip":
        return image[::-1].copy()
    if op == "identity":
        return image.copy()
    raise ValueError(f"unknown augmentation op {op!r}")


INVERSE = {"rot90": "rot270", "rot270": "rot90", "rot180": "rot180", "hflip": "hflip", "vflip": "vflip", "identity": "identity"}


def augment(image: np.ndarray, ops=AUGMENT_OPS, seed: int = 0, p: float = 0.5) -> np.ndarray:
    """Apply one seeded random op from ``ops`` with probability ``p``.

    Only lossless 90-degree rotations and flips.
    """
    ops = tuple(ops)
    for op in ops:
        if op not in AUGMENT_OPS:
            raise ValueError(f"unknown augmentation op {op!r}")
    rng = np.random.default_rng(seed)
    if not ops or rng.random() >= p:
        return np.asarray(image).copy()
    return apply_op(np.asarray(image), ops[rng.integers(len(ops))])


def rotate_small(image: np.ndarray, degrees: float) -> np.ndarray:
    """Arbitrary-angle rotation about the centre, bilinear, edge-replicated.

    Not part of the default augmentation set (it interpolates).
    """
    h, w = image.shape[:2]
    t = np.deg2rad(degrees)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    cy, cx = (h - 1) / 2, (w - 1) / 2
    sy = np.cos(t) * (yy - cy) - np.sin(t) * (xx - cx) + cy
    sx = np.sin(t) * (yy - cy) + np.cos(t) * (xx - cx) + cx
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    y0 = np.floor(sy).astype(int)
    x0 = np.floor(sx).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[..., None]
    fx = (sx - x0)[..., None]
    img = image.astype(np.float64)
    out = (
        img[y0, x0] * (1 - fy) * (1 - fx)
        + img[y0, x1] * (1 - fy) * fx
        + img[y1, x0] * fy * (1 - fx)
        + img[y1, x1] * fy * fx
    )
    return out.astype(np.float32)


def augment_dataset(dataset: Dataset, ops=AUGMENT_OPS, seed: int = 0, p: float = 0.5) -> Dataset:
    children = np.random.SeedSequence(seed).spawn(len(dataset))
    images = [
        replace(im, pixels=augment(im.pixels, ops, int(c.generate_state(1)[0]), p))
        for im, c in zip(dataset.images, children)
    ]
    return Dataset(images, dataset.classes, dataset.stats)


# -- splits -------------------------------------------------------------------


def _allocate(n: int, ratios) -> list[int]:
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(ratios)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:rest]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split(dataset: Dataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[Dataset, ...]:
    """Seeded stratified split; every partition receives every class."""
    ratios = tuple(float(r) for r in ratios)
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1) > 1e-9:
        raise ValueError(f"ratios must be positive and sum to 1, got {ratios}")
    labels = dataset.labels()
    rng = np.random.default_rng(seed)
    parts: list[list[int]] = [[] for _ in ratios]
    for c in range(len(dataset.classes)):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        if idx.size < len(ratios):
            raise DatasetError(
                f"class {dataset.classes[c]!r} has {idx.size} sample(s), fewer than {len(ratios)} partitions"
            )
        idx = rng.permutation(idx)
        start = 0
        for part, n in zip(parts, _allocate(idx.size, ratios)):
            part.extend(idx[start : start + n].tolist())
            start += n
    return tuple(
        Dataset([dataset.images[i] for i in sorted(part)], dataset.classes, dataset.stats) for part in parts
    )


# -- synthetic data -----------------------------------------------------------


def _palette(k: int) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb(c / k, 1.0, 1.0) for c in range(k)])


def synth_dataset(
    k: int = 7,
    n: int = 10,
    size: int | tuple[int, int] = 32,
    seed: int = 0,
    classes=None,
    noise: float = 0.05,
) -> Dataset:
    """Class-dependent coloured blobs on a noisy background.

    Class ``c`` places a Gaussian blob of hue ``c / k`` at the ``c``-th point
    of a circle around the image centre; position and brightness jitter and
    pixel noise are seeded.
    """
    if k < 2 or n < 1:
        raise ValueError("need k >= 2 classes and n >= 1 images per class")
    h, w = (size, size) if isinstance(size, int) else size
    classes = tuple(classes) if classes is not None else (
        HAM10000_CLASSES if k == len(HAM10000_CLASSES) else tuple(f"class{c}" for c in range(k))
    )
    if len(classes) != k:
        raise ValueError("classes must have k names")
    colors = _palette(k)
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sigma = 0.12 * min(h, w)
    images = []
    for c in range(k):
        angle = 2 * np.pi * c / k
        cy = h / 2 + 0.28 * h * np.sin(angle)
        cx = w / 2 + 0.28 * w * np.cos(angle)
        for j in range(n):
            jy, jx = rng.normal(0, 0.03 * h), rng.normal(0, 0.03 * w)
            blob = np.exp(-((yy - cy - jy) ** 2 + (xx - cx - jx) ** 2) / (2 * sigma**2))
            bright = rng.uniform(0.8, 1.0)
            img = 0.3 + blob[..., None] * (bright * colors[c] - 0.3)
            img = img + rng.normal(0, noise, size=(h, w, 3))
            images.append(LabeledImage(f"synth_{c:02d}_{j:04d}", np.clip(img, 0, 1).astype(np.float32), c))
    return Dataset(images, classes)


def parse_synthetic(source: str) -> tuple[int, int, int]:
    """``"synthetic:k,n,size"`` -> ``(k, n, size)``."""
    if not source.startswith("synthetic:"):
        raise ValueError(f"not a synthetic source: {source!r}")
    try:
        k, n, size = (int(v) for v in source.split(":", 1)[1].split(","))
    except ValueError:
        raise ValueError(f"synthetic source must be synthetic:k,n,size, got {source!r}") from None
    return k, n, size
