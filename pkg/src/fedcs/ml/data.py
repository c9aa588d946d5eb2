"""Datasets: IDX parsing, client partitioning, class balancing, synthetic tasks."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Float feature matrix plus integer class labels."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError("feature/label record counts differ")

    def __len__(self) -> int:
        return self.X.shape[0]


def _read_be_u32(buf: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(buf):
        raise FormatError(f"truncated {what} at offset {offset}")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(image_bytes: bytes, label_bytes: bytes) -> Dataset:
    """Parse a big-endian IDX image/label file pair into a Dataset.

    Pixels are min-max scaled from unsigned bytes to [0,1].
    """
    magic = _read_be_u32(image_bytes, 0, "image header")
    if magic != IDX_IMAGE_MAGIC:
        raise FormatError(f"bad image magic 0x{magic:08x} at offset 0")
    count = _read_be_u32(image_bytes, 4, "image header")
    rows = _read_be_u32(image_bytes, 8, "image header")
    cols = _read_be_u32(image_bytes, 12, "image header")
    payload = count * rows * cols
    if len(image_bytes) < 16 + payload:
        raise FormatError(f"truncated image payload at offset {len(image_bytes)}")

    lmagic = _read_be_u32(label_bytes, 0, "label header")
    if lmagic != IDX_LABEL_MAGIC:
        raise FormatError(f"bad label magic 0x{lmagic:08x} at offset 0")
    lcount = _read_be_u32(label_bytes, 4, "label header")
    if lcount != count:
        raise FormatError(f"label count {lcount} != image count {count} at offset 4")
    if len(label_bytes) < 8 + lcount:
        raise FormatError(f"truncated label payload at offset {len(label_bytes)}")

    pixels = np.frombuffer(image_bytes, dtype=np.uint8, count=payload, offset=16)
    X = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    y = np.frombuffer(label_bytes, dtype=np.uint8, count=lcount, offset=8).astype(
        np.int64
    )
    return Dataset(X=X, y=y)


def load_idx_files(image_path: str, label_path: str) -> Dataset:
    with open(image_path, "rb") as f:
        image_bytes = f.read()
    with open(label_path, "rb") as f:
        label_bytes = f.read()
    return load_idx(image_bytes, label_bytes)


def partition(
    labels: np.ndarray,
    n_clients: int,
    mode: str,
    rng: np.random.Generator,
    classes_per_client: int = 2,
    ensure_minority: bool = False,
):
    """Split record indices across clients; returns a list of index arrays.

    ``iid`` shuffles and splits near-equally.  ``label-skew`` assigns each
    client ``classes_per_client`` classes (cyclically) and divides each
    class's records among its owners, so shards are disjoint and cover the
    data.  With ``ensure_minority`` (binary data), shards are patched so every
    client holds at least one record of the rarer class.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if n_clients < 1 or n_clients > n:
        raise ValueError("need 1 <= n_clients <= record count")

    if mode == "iid":
        order = rng.permutation(n)
        shards = [np.sort(chunk) for chunk in np.array_split(order, n_clients)]
    elif mode == "label-skew":
        classes = np.unique(labels)
        k = len(classes)
        if classes_per_client < 1:
            raise ValueError("classes_per_client must be >= 1")
        if n_clients * classes_per_client < k:
            raise ValueError("too few client-class slots to cover every class")
        owners = {c: [] for c in classes}
        pos = 0
        for client in range(n_clients):
            for _ in range(classes_per_client):
                owners[classes[pos % k]].append(client)
                pos += 1
        parts = [[] for _ in range(n_clients)]
        for c in classes:
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(len(idx))]
            for owner, chunk in zip(owners[c], np.array_split(idx, len(owners[c]))):
                parts[owner].append(chunk)
        shards = [
            np.sort(np.concatenate(p)) if p else np.empty(0, dtype=np.int64)
            for p in parts
        ]
    else:
        raise ValueError(f"unknown partition mode {mode!r}")

    if ensure_minority:
        shards = _patch_minority(labels, shards, rng)
    if any(len(s) == 0 for s in shards):
        raise ValueError("a client received an empty shard")
    return shards


def _patch_minority(labels, shards, rng):
    """Move records so every shard holds >= 1 record of the rarer class."""
    classes, counts = np.unique(labels, return_counts=True)
    if len(classes) != 2:
        raise ValueError("minority guarantee applies to binary labels only")
    minority = classes[np.argmin(counts)]
    if counts.min() < len(shards):
        raise ValueError("fewer minority records than clients")
    shards = [np.array(s) for s in shards]
    lacking = [i for i, s in enumerate(shards) if not np.any(labels[s] == minority)]
    donors = [i for i, s in enumerate(shards) if np.sum(labels[s] == minority) > 1]
    for need in lacking:
        gave = False
        for d in list(donors):
            pool = shards[d][labels[shards[d]] == minority]
            if len(pool) <= 1:
                donors.remove(d)
                continue
            pick = pool[rng.integers(len(pool))]
            shards[d] = np.setdiff1d(shards[d], [pick])
            shards[need] = np.sort(np.append(shards[need], pick))
            gave = True
            break
        if not gave:
            raise ValueError("cannot guarantee a minority record per client")
    return shards


def downsample(labels: np.ndarray, idx: np.ndarray, rng: np.random.Generator):
    """Subsample each class within ``idx`` down to the rarest class's count.

    Returns a sorted subset of ``idx``.  Errors if some class has no records.
    """
    labels = np.asarray(labels)
    idx = np.asarray(idx)
    if len(idx) == 0:
        raise ValueError("empty shard")
    shard_labels = labels[idx]
    classes, counts = np.unique(shard_labels, return_counts=True)
    if len(classes) < 2:
        raise ValueError("downsampling needs at least two classes present")
    floor = counts.min()
    kept = []
    for c in classes:
        members = idx[shard_labels == c]
        if len(members) > floor:
            members = rng.choice(members, size=floor, replace=False)
        kept.append(members)
    return np.sort(np.concatenate(kept))


def synthetic_blobs(
    n_records: int,
    n_features: int,
    n_classes: int,
    rng: np.random.Generator,
    active_dims: int = 40,
    amplitude: float = 1.0,
    noise_std: float = 0.3,
    class_weights=None,
) -> Dataset:
    """Gaussian blobs around sparse class means, unit range, zero mean.

    Each class mean activates ``active_dims`` random coordinates at
    +-``amplitude``; records are the mean plus isotropic noise.  Features are
    min-max scaled to unit range and then centered per feature: all-positive
    inputs leave a relu MLP with most units saturated at init and it never
    recovers.  With ``class_weights`` the label distribution is skewed (e.g.
    a rare positive class); otherwise labels are balanced.
    """
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if active_dims < 1 or active_dims > n_features:
        raise ValueError("active_dims out of range")
    means = np.zeros((n_classes, n_features))
    for c in range(n_classes):
        sel = rng.choice(n_features, size=active_dims, replace=False)
        means[c, sel] = amplitude * rng.choice([-1.0, 1.0], size=active_dims)
    if class_weights is None:
        y = rng.integers(0, n_classes, size=n_records)
    else:
        w = np.asarray(class_weights, dtype=np.float64)
        if w.shape != (n_classes,) or np.any(w < 0) or w.sum() <= 0:
            raise ValueError("class_weights must be nonnegative, one per class")
        y = rng.choice(n_classes, size=n_records, p=w / w.sum())
    X = means[y] + noise_std * rng.standard_normal((n_records, n_features))
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    span[span == 0.0] = 1.0
    X = (X - lo) / span
    X -= X.mean(axis=0)
    return Dataset(X=X, y=y.astype(np.int64))
