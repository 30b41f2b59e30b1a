"""Dataset ingestion: bit-exact IDX files, synthetic blobs, label tasks.

IDX files carry a big-endian uint32 magic (2051 for image files with
three dimension words, 2049 for label files with one), big-endian
uint32 dimensions, then the unsigned-byte payload. Images are scaled to
[0, 1] by dividing by 255; serialization inverts that exactly, so
``serialize_idx(parse_idx(b)) == b`` for any valid file.

Dataset files are user-supplied (no downloading). The root directory is
taken from the ``DOMENET_DATA`` environment variable when not passed
explicitly; each dataset lives in a subdirectory (``mnist/``,
``fashion-mnist/``) holding the four standard IDX files, optionally
gzipped.
"""

import gzip
import os
from collections import namedtuple
from pathlib import Path

import numpy as np

__all__ = [
    "IMAGES_MAGIC",
    "LABELS_MAGIC",
    "IdxFormatError",
    "Dataset",
    "parse_idx",
    "serialize_idx",
    "load_idx",
    "dataset_root",
    "load_image_dataset",
    "make_blobs",
    "relabel",
    "TASK_CLASSES",
]

IMAGES_MAGIC = 2051  # 0x00000803
LABELS_MAGIC = 2049  # 0x00000801
DATA_ENV_VAR = "DOMENET_DATA"

TASK_CLASSES = {"binary_parity": 2, "mod3": 3, "full10": 10}

IDX_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

Dataset = namedtuple("Dataset", "x_train y_train x_test y_test")


class IdxFormatError(ValueError):
    pass


def parse_idx(data):
    """Decode an IDX byte string to images in [0, 1] or integer labels."""
    if len(data) < 4:
        raise IdxFormatError("truncated IDX header")
    magic = int.from_bytes(data[:4], "big")
    if magic == LABELS_MAGIC:
        ndim = 1
    elif magic == IMAGES_MAGIC:
        ndim = 3
    else:
        raise IdxFormatError(f"unsupported IDX magic {magic} (0x{magic:08x})")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError("truncated IDX dimension header")
    dims = [int.from_bytes(data[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim)]
    count = int(np.prod(dims))
    if len(data) != header + count:
        raise IdxFormatError(
            f"payload length {len(data) - header} does not match dimensions {dims}"
        )
    payload = np.frombuffer(data, dtype=np.uint8, offset=header)
    if magic == LABELS_MAGIC:
        return payload.astype(np.int64)
    return payload.reshape(dims).astype(np.float64) / 255.0


def serialize_idx(arr):
    """Inverse of parse_idx; byte-exact round trip for valid files."""
    arr = np.asarray(arr)
    if arr.ndim == 1:
        magic, dims = LABELS_MAGIC, arr.shape
        payload = arr.astype(np.uint8)
    elif arr.ndim == 3:
        magic, dims = IMAGES_MAGIC, arr.shape
        payload = np.round(arr * 255.0).astype(np.uint8)
    else:
        raise IdxFormatError(f"cannot serialize array of rank {arr.ndim}")
    out = magic.to_bytes(4, "big")
    for d in dims:
        out += int(d).to_bytes(4, "big")
    return out + payload.tobytes()


def load_idx(path):
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return parse_idx(fh.read())


def dataset_root(explicit=None):
    """Resolve the dataset root: explicit path, $DOMENET_DATA, or ./data."""
    if explicit:
        return Path(explicit)
    return Path(os.environ.get(DATA_ENV_VAR, "data"))


def _find_idx(directory, stem):
    for name in (stem, stem + ".gz"):
        p = directory / name
        if p.exists():
            return p
    return None


def load_image_dataset(name, root=None, train_limit=0, test_limit=0):
    """Load mnist/fashion-mnist IDX splits from ``root/name``; limits take the first N."""
    directory = dataset_root(root) / name
    splits = []
    missing = []
    for key in ("train", "test"):
        pair = []
        for stem in IDX_FILES[key]:
            p = _find_idx(directory, stem)
            if p is None:
                missing.append(str(directory / stem) + "[.gz]")
            pair.append(p)
        splits.append(pair)
    if missing:
        raise FileNotFoundError(
            f"dataset {name!r} is missing files: " + ", ".join(missing)
            + f" (set ${DATA_ENV_VAR} or pass --data)"
        )
    x_train, y_train = load_idx(splits[0][0]), load_idx(splits[0][1])
    x_test, y_test = load_idx(splits[1][0]), load_idx(splits[1][1])
    if train_limit:
        x_train, y_train = x_train[:train_limit], y_train[:train_limit]
    if test_limit:
        x_test, y_test = x_test[:test_limit], y_test[:test_limit]
    # (count, h, w) -> (count, 1, h, w) single-channel image batches
    return Dataset(x_train[:, None, :, :], y_train, x_test[:, None, :, :], y_test)


def make_blobs(n_classes, per_class, spread, seed, dim=2):
    """Gaussian clusters at fixed centers inside the [0, 1] box.

    Centers sit on a circle of radius 0.35 around the box center in the
    first two coordinates, so attack budgets in pixel units stay
    meaningful. Deterministic for a fixed seed.
    """
    if n_classes < 2 or dim < 2:
        raise ValueError("make_blobs needs n_classes >= 2 and dim >= 2")
    rng = np.random.default_rng(seed)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    centers = np.full((n_classes, dim), 0.5)
    centers[:, 0] += 0.35 * np.cos(angles)
    centers[:, 1] += 0.35 * np.sin(angles)
    x = np.repeat(centers, per_class, axis=0)
    x = x + rng.normal(scale=spread, size=x.shape)
    y = np.repeat(np.arange(n_classes), per_class)
    return np.clip(x, 0.0, 1.0), y


def relabel(labels, task):
    """Map digit labels to the task's classes."""
    labels = np.asarray(labels)
    if task == "binary_parity":
        return labels % 2
    if task == "mod3":
        return labels % 3
    if task == "full10":
        return labels
    raise ValueError(f"unknown task {task!r}")
