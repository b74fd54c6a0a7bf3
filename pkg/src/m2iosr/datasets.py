"""Image loading, seeded known/unknown splits and synthetic unknown sets."""

from __future__ import annotations

import gzip
import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import ConfigError, DataError
from .evaluation import UnknownPool

TARGET_SIZE = 32
UNKNOWN_SOURCES = ("held-out-classes", "external", "synthetic-noise", "noised-copy")


@dataclass
class ImageBatch:
    pixels: torch.Tensor
    labels: Optional[torch.Tensor] = None

    def __post_init__(self) -> None:
        if self.pixels.dim() != 4:
            raise ConfigError(f"pixels must be (batch, channels, H, W), got {tuple(self.pixels.shape)}")
        self.pixels = self.pixels.clamp(0.0, 1.0)
        if self.labels is not None and self.labels.shape[0] != self.pixels.shape[0]:
            raise ConfigError("labels and pixels disagree on batch size")

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass
class SplitSpec:
    dataset: str
    known_classes: list[int]
    unknown_classes: list[int]
    trial_seed: int
    unknown_source: dict = field(default_factory=lambda: {"kind": "held-out-classes"})

    def __post_init__(self) -> None:
        self.known_classes = sorted(int(c) for c in self.known_classes)
        self.unknown_classes = [int(c) for c in self.unknown_classes]
        overlap = set(self.known_classes) & set(self.unknown_classes)
        if overlap:
            raise ConfigError(f"known and unknown classes overlap: {sorted(overlap)}")
        if self.unknown_source.get("kind") not in UNKNOWN_SOURCES:
            raise ConfigError(f"unknown_source kind must be one of {UNKNOWN_SOURCES}")

    @property
    def num_known(self) -> int:
        return len(self.known_classes)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        allowed = {"dataset", "known_classes", "unknown_classes", "trial_seed", "unknown_source"}
        extra = set(d) - allowed
        if extra:
            raise ConfigError(f"unknown split keys: {sorted(extra)}")
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "SplitSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def make_split(dataset: str, class_ids: Sequence[int], num_known: int, trial_seed: int) -> SplitSpec:
    """Seeded choice of ``num_known`` classes; the rest form the unknown pool."""
    class_ids = sorted(int(c) for c in class_ids)
    if len(set(class_ids)) != len(class_ids):
        raise ConfigError("class ids must be distinct")
    if not 1 <= num_known < len(class_ids):
        raise ConfigError(
            f"num_known must be in [1, {len(class_ids)}) for a {len(class_ids)}-class dataset, got {num_known}"
        )
    order = np.random.default_rng(trial_seed).permutation(class_ids)
    return SplitSpec(
        dataset=dataset,
        known_classes=sorted(order[:num_known].tolist()),
        unknown_classes=order[num_known:].tolist(),
        trial_seed=int(trial_seed),
    )


def synth_noise(count: int, shape: Sequence[int] = (1, 32, 32), seed: int = 0) -> ImageBatch:
    """Images with every pixel drawn independently from U[0, 1]."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    g = torch.Generator().manual_seed(seed)
    return ImageBatch(torch.rand((count, *shape), generator=g))


def noised_copy(images: torch.Tensor, seed: int = 0) -> ImageBatch:
    """``clamp(x + u, 0, 1)`` with per-pixel ``u ~ U[0, 1]``."""
    g = torch.Generator().manual_seed(seed)
    u = torch.rand(images.shape, generator=g, dtype=images.dtype)
    return ImageBatch((images + u).clamp(0.0, 1.0))


def fit_to_32(images: torch.Tensor, mode: str = "resize") -> ImageBatch:
    if mode not in ("crop", "resize"):
        raise ConfigError(f"mode must be 'crop' or 'resize', got {mode!r}")
    h, w = images.shape[-2:]
    if (h, w) == (TARGET_SIZE, TARGET_SIZE):
        return ImageBatch(images.clone())
    if mode == "crop":
        if h < TARGET_SIZE or w < TARGET_SIZE:
            raise ConfigError(f"crop mode needs images of at least 32x32, got {h}x{w}")
        top, left = (h - TARGET_SIZE) // 2, (w - TARGET_SIZE) // 2
        return ImageBatch(images[..., top : top + TARGET_SIZE, left : left + TARGET_SIZE].clone())
    out = F.interpolate(images, size=(TARGET_SIZE, TARGET_SIZE), mode="bilinear", align_corners=False)
    return ImageBatch(out)


def to_channels(pixels: torch.Tensor, channels: int) -> torch.Tensor:
    """Replicate grayscale to ``channels``; average RGB down to one channel."""
    c = pixels.shape[1]
    if c == channels:
        return pixels
    if c == 1:
        return pixels.expand(-1, channels, -1, -1).contiguous()
    if channels == 1:
        return pixels.mean(dim=1, keepdim=True)
    raise ConfigError(f"cannot convert {c}-channel images to {channels} channels")


# ---------------------------------------------------------------- loaders


def _open(path: Path):
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path: Path) -> np.ndarray:
    with _open(path) as fh:
        magic = fh.read(4)
        if len(magic) != 4 or magic[0] != 0 or magic[1] != 0 or magic[2] != 0x08:
            raise DataError(f"{path} is not an unsigned-byte IDX file")
        ndim = magic[3]
        dims = struct.unpack(">" + "I" * ndim, fh.read(4 * ndim))
        data = np.frombuffer(fh.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise DataError(f"{path}: expected {int(np.prod(dims))} values, found {data.size}")
    return data.reshape(dims)


def load_idx(images_path, labels_path) -> tuple[torch.Tensor, torch.Tensor]:
    """MNIST-style packed IDX archives (optionally gzipped)."""
    images = _read_idx(Path(images_path))
    labels = _read_idx(Path(labels_path))
    if images.ndim != 3 or labels.ndim != 1 or images.shape[0] != labels.shape[0]:
        raise DataError("IDX images must be (n, h, w) with n matching labels")
    pixels = torch.from_numpy(images.astype(np.float32) / 255.0).unsqueeze(1)
    return pixels, torch.from_numpy(labels.astype(np.int64))


def load_mnist_csv(path, label_column: str = "last", side: Optional[int] = None):
    """Rows of flattened 0-255 pixels plus one label column (first or last)."""
    path = Path(path)
    with _open(path) as fh:
        arr = np.loadtxt(fh, delimiter=",", dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] < 2:
        raise DataError(f"{path}: expected rows of pixels plus a label")
    if label_column == "last":
        labels, pixels = arr[:, -1], arr[:, :-1]
    elif label_column == "first":
        labels, pixels = arr[:, 0], arr[:, 1:]
    else:
        raise ConfigError("label_column must be 'first' or 'last'")
    side = side or int(round(pixels.shape[1] ** 0.5))
    if side * side != pixels.shape[1]:
        raise DataError(f"{path}: {pixels.shape[1]} pixels per row is not a square image")
    scale = 255.0 if pixels.max() > 1.0 else 1.0
    images = torch.from_numpy((pixels / scale).astype(np.float32)).view(-1, 1, side, side)
    return images, torch.from_numpy(labels.astype(np.int64))


def load_image_folder(root) -> tuple[torch.Tensor, torch.Tensor, list[str]]:
    """``root/<class>/*.png``; class ids follow the sorted subdirectory names."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory not found: {root}")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"no class subdirectories under {root}")
    images, labels = [], []
    for cid, d in enumerate(class_dirs):
        for f in sorted(d.glob("*.png")):
            with Image.open(f) as im:
                arr = np.asarray(im.convert("L" if im.mode in ("L", "1", "I;16") else "RGB"))
            images.append(arr)
            labels.append(cid)
    if not images:
        raise DataError(f"no PNG files under {root}")
    shapes = {a.shape for a in images}
    if len(shapes) != 1:
        raise DataError(f"images under {root} differ in size: {sorted(shapes)}")
    stack = np.stack(images).astype(np.float32) / 255.0
    t = torch.from_numpy(stack)
    t = t.unsqueeze(1) if t.dim() == 3 else t.permute(0, 3, 1, 2).contiguous()
    return t, torch.tensor(labels, dtype=torch.int64), [d.name for d in class_dirs]


def load_dataset(path, fmt: str = "auto") -> tuple[torch.Tensor, torch.Tensor]:
    """Dispatch on ``fmt`` in {auto, folder, csv, idx}.

    ``idx`` expects a directory holding ``*images*`` and ``*labels*`` files.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset path not found: {path}")
    if fmt == "auto":
        if path.is_file():
            fmt = "csv"
        elif list(path.glob("*idx*")) or list(path.glob("*ubyte*")):
            fmt = "idx"
        else:
            fmt = "folder"
    if fmt == "csv":
        return load_mnist_csv(path)
    if fmt == "idx":
        imgs = sorted(p for p in path.iterdir() if "images" in p.name)
        labs = sorted(p for p in path.iterdir() if "labels" in p.name)
        if not imgs or len(imgs) != len(labs):
            raise DataError(f"{path}: need matching *images* and *labels* IDX files")
        parts = [load_idx(i, l) for i, l in zip(imgs, labs)]
        return torch.cat([p[0] for p in parts]), torch.cat([p[1] for p in parts])
    if fmt == "folder":
        x, y, _ = load_image_folder(path)
        return x, y
    raise ConfigError(f"unknown dataset format {fmt!r}")


def export_png_folder(batch: ImageBatch, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(batch))))
    paths = []
    arr = (batch.pixels * 255.0).round().to(torch.uint8).numpy()
    for i, img in enumerate(arr):
        im = Image.fromarray(img[0]) if img.shape[0] == 1 else Image.fromarray(img.transpose(1, 2, 0))
        p = out / f"{i:0{width}d}.png"
        im.save(p)
        paths.append(p)
    return paths


# ------------------------------------------------------- open-set preparation


@dataclass
class OpenSetData:
    split: SplitSpec
    train_x: torch.Tensor
    train_y: torch.Tensor
    known_test_x: torch.Tensor
    known_test_y: torch.Tensor
    unknown_test_x: torch.Tensor
    unknown_test_classes: torch.Tensor


def per_class_split(
    labels: torch.Tensor, test_fraction: float, seed: int, max_train_per_class: Optional[int] = None
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded stratified train/test index split."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    y = labels.numpy()
    train, test = [], []
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        n_test = int(round(len(idx) * test_fraction))
        test.append(idx[:n_test])
        tr = idx[n_test:]
        if max_train_per_class is not None:
            tr = tr[:max_train_per_class]
        train.append(tr)
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def prepare_open_set(
    images: torch.Tensor,
    labels: torch.Tensor,
    split: SplitSpec,
    *,
    channels: int = 1,
    test_fraction: float = 0.2,
    max_train_per_class: Optional[int] = None,
    resize_mode: str = "resize",
) -> OpenSetData:
    """Known-class training data relabelled to ``0..K-1`` plus known/unknown test sets."""
    images = to_channels(fit_to_32(images, resize_mode).pixels, channels)
    tr, te = per_class_split(labels, test_fraction, split.trial_seed, max_train_per_class)
    remap = {c: i for i, c in enumerate(split.known_classes)}
    known = torch.tensor([int(l) in remap for l in labels.tolist()])
    unknown = torch.isin(labels, torch.tensor(split.unknown_classes, dtype=labels.dtype))
    tr_t, te_t = torch.from_numpy(tr), torch.from_numpy(te)
    tr_known = tr_t[known[tr_t]]
    te_known = te_t[known[te_t]]
    te_unknown = te_t[unknown[te_t]]
    relabel = lambda idx: torch.tensor([remap[int(l)] for l in labels[idx].tolist()], dtype=torch.int64)
    return OpenSetData(
        split=split,
        train_x=images[tr_known],
        train_y=relabel(tr_known),
        known_test_x=images[te_known],
        known_test_y=relabel(te_known),
        unknown_test_x=images[te_unknown],
        unknown_test_classes=labels[te_unknown].clone(),
    )


def unknown_pools(data: OpenSetData, pool_sizes: Sequence[int], seed: int = 0) -> list[UnknownPool]:
    """Nested pools: the first ``n`` classes of a seeded order of the unknown classes."""
    available = list(data.split.unknown_classes)
    order = np.random.default_rng(seed).permutation(available).tolist()
    pools = []
    for n in pool_sizes:
        if not 1 <= n <= len(order):
            raise ConfigError(f"pool size {n} outside 1..{len(order)} available unknown classes")
        ids = tuple(order[:n])
        mask = torch.isin(data.unknown_test_classes, torch.tensor(ids, dtype=torch.int64))
        pools.append(UnknownPool(class_ids=ids, images=data.unknown_test_x[mask]))
    return pools
