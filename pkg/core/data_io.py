"""
Dataset ingestion and batching.

Reads MNIST-style IDX files, generates small synthetic tasks and hands out
deterministic mini-batches. Every example carries a stable integer id (its index
after loading) so per-example loss histories can follow it across epochs.
"""
import gzip
import os
import struct
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from core.errors import ConfigError, ConsistencyError, FormatError, InputError
from core.seeding import substream

IMAGES_MAGIC = 0x00000803
COLOUR_IMAGES_MAGIC = 0x00000804
LABELS_MAGIC = 0x00000801

SYNTHETIC_KINDS = ('two_gaussians', 'concentric_rings')


@dataclass(frozen=True, eq=False)
class Dataset:
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    name: str
    class_count: int

    def __post_init__(self):
        if self.x.ndim != 2 or self.x.shape[0] != self.y.shape[0] or self.y.shape != self.ids.shape:
            raise ConsistencyError(
                f"Dataset '{self.name}': x {self.x.shape}, y {self.y.shape} and ids {self.ids.shape} disagree."
            )
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise InputError(f"Dataset '{self.name}': pixel values must lie in [0, 1].")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.class_count):
            raise InputError(f"Dataset '{self.name}': labels must lie in [0, {self.class_count}).")
        if np.unique(self.ids).size != self.ids.size:
            raise ConsistencyError(f"Dataset '{self.name}': example ids are not unique.")

    def __len__(self):
        return self.x.shape[0]

    @property
    def features(self):
        return self.x.shape[1]

    def take(self, index, name=None):
        """Rows selected by `index` (ids are carried over, not renumbered)."""
        return Dataset(self.x[index], self.y[index], self.ids[index], name or self.name, self.class_count)


class Batch(NamedTuple):
    x: np.ndarray
    y: np.ndarray
    ids: np.ndarray


def _open(path):
    if str(path).endswith('.gz'):
        return gzip.open(path, 'rb')
    return open(path, 'rb')


def _read_idx(path, expected_magics, what):
    try:
        with _open(path) as f:
            raw = f.read()
    except OSError as e:
        raise FormatError(f"Could not read {what} file {path}: {e}") from e
    if len(raw) < 8:
        raise FormatError(f"{path} is too short to be an IDX {what} file.")
    magic = struct.unpack('>I', raw[:4])[0]
    if magic not in expected_magics:
        expected = " or ".join(f"0x{m:08x}" for m in expected_magics)
        raise FormatError(f"{path}: magic number 0x{magic:08x}, expected {expected} for {what}.")
    dims = raw[3]
    header = 4 + 4 * dims
    if len(raw) < header:
        raise FormatError(f"{path}: header declares {dims} dimensions but the file holds only {len(raw)} bytes.")
    shape = struct.unpack('>' + 'I' * dims, raw[4:header])
    size = len(raw) - header
    if size != int(np.prod(shape)):
        raise FormatError(f"{path}: header declares {shape} but holds {size} values.")
    data = np.frombuffer(raw, dtype=np.uint8, offset=header)
    return data.reshape(shape)


def load_idx(images_path, labels_path, limit=None, class_count=10, name=None) -> Dataset:
    """
    Parses a big-endian IDX image file (magic 0x00000803, n x rows x cols bytes, or 0x00000804
    with a trailing channel axis) and its label file (magic 0x00000801). Gzipped files are read
    transparently.
    """
    images = _read_idx(images_path, (IMAGES_MAGIC, COLOUR_IMAGES_MAGIC), 'images')
    labels = _read_idx(labels_path, (LABELS_MAGIC,), 'labels')
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels.")
    if limit is not None:
        images = images[:limit]
        labels = labels[:limit]
    n = images.shape[0]
    x = images.reshape(n, -1).astype(np.float64) / 255.0
    y = labels.astype(np.int64)
    return Dataset(x, y, np.arange(n), name or os.path.basename(str(images_path)), class_count)


def write_idx(ds: Dataset, images_path, labels_path, rows=None):
    """
    Writes a dataset back to IDX. Pixels are stored as round(x * 255), so only
    datasets whose values are multiples of 1/255 survive the trip bitwise.
    """
    n, d = ds.x.shape
    if rows is None:
        rows = int(round(np.sqrt(d)))
    if d % rows:
        raise InputError(f"Cannot lay {d} features out in {rows} rows.")
    pixels = np.rint(ds.x * 255.0).astype(np.uint8)
    for path in (images_path, labels_path):
        directory = os.path.dirname(str(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
    with open(images_path, 'wb') as f:
        f.write(struct.pack('>IIII', IMAGES_MAGIC, n, rows, d // rows))
        f.write(pixels.tobytes())
    with open(labels_path, 'wb') as f:
        f.write(struct.pack('>II', LABELS_MAGIC, n))
        f.write(ds.y.astype(np.uint8).tobytes())
    return images_path, labels_path


def _squash(x):
    """Global affine map into [0, 1]; preserves linear separability."""
    lo, hi = x.min(), x.max()
    if hi == lo:
        return np.full_like(x, 0.5)
    return (x - lo) / (hi - lo)


def make_synthetic(kind, n, d, margin, seed, name=None) -> Dataset:
    """
    Two-class toy tasks. Labels alternate 0, 1, 0, 1... so classes are balanced.

    two_gaussians: class means at -margin/2 and +margin/2 along coordinate 0, unit noise.
    concentric_rings: radius margin (class 0) and 2 * margin (class 1) in coordinates 0 and 1,
    uniform angle, small isotropic noise on every coordinate.
    """
    if kind not in SYNTHETIC_KINDS:
        raise ConfigError('dataset.kind', f"unknown synthetic kind '{kind}', expected one of {list(SYNTHETIC_KINDS)}")
    if n <= 0 or n % 2:
        raise ConfigError('dataset.n', f"must be a positive even number, got {n}")
    if margin < 0:
        raise ConfigError('dataset.margin', f"must be >= 0, got {margin}")
    if d < 1 or (kind == 'concentric_rings' and d < 2):
        raise ConfigError('dataset.d', f"too small for {kind}: {d}")

    rng = substream(seed, 'data')
    y = np.arange(n) % 2
    if kind == 'two_gaussians':
        x = rng.standard_normal((n, d))
        x[:, 0] += np.where(y == 1, margin / 2.0, -margin / 2.0)
    else:
        radius = np.where(y == 1, 2.0 * margin, margin)
        angle = rng.uniform(0.0, 2.0 * np.pi, n)
        x = 0.1 * rng.standard_normal((n, d))
        x[:, 0] += radius * np.cos(angle)
        x[:, 1] += radius * np.sin(angle)
    return Dataset(_squash(x), y.astype(np.int64), np.arange(n), name or kind, 2)


def batches(ds: Dataset, batch_size, epoch, seed):
    """
    Yields Batch(x, y, ids) in an order fixed by (seed, epoch).
    The last partial batch is kept; every example appears exactly once.
    """
    if batch_size < 1:
        raise InputError(f"batch_size must be >= 1, got {batch_size}")
    order = substream(seed, 'shuffle', epoch).permutation(len(ds))
    for start in range(0, len(ds), batch_size):
        index = order[start:start + batch_size]
        yield Batch(ds.x[index], ds.y[index], ds.ids[index])


def split(ds: Dataset, test_fraction, seed):
    """Deterministic train/test split; ids keep their original values."""
    order = substream(seed, 'data', 1).permutation(len(ds))
    cut = len(ds) - int(round(len(ds) * test_fraction))
    return ds.take(np.sort(order[:cut]), f"{ds.name}-train"), ds.take(np.sort(order[cut:]), f"{ds.name}-test")


def load_dataset(spec, seed):
    """
    Returns (train, test) for a dataset spec from the experiment config.
    IDX specs name separate train and test files; synthetic specs are split.
    """
    if spec.source == 'idx':
        train = load_idx(spec.train_images, spec.train_labels, spec.limit, spec.class_count, name='train')
        test = load_idx(spec.test_images, spec.test_labels, spec.test_limit, spec.class_count, name='test')
        return train, test
    full = make_synthetic(spec.kind, spec.n, spec.d, spec.margin, seed)
    return split(full, spec.test_fraction, seed)
