
import gzip
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from matplotlib import image as mpimg

from ..config import Config
from ..errors import ConfigError, DatasetError, DatasetNotFoundError, TruncationError
from ..utils.seeding import rng_for
from .dataset import Dataset, TaskStream
from .formats import parse_cifar10_bin, parse_idx
from .streams import build_permuted_stream, build_split_stream, subset_stream, synth_blobs

logger = logging.getLogger(__name__)

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}
CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST = "test_batch.bin"

FASHION_NAMES = ["top", "trouser", "pullover", "dress", "coat",
                 "sandal", "shirt", "sneaker", "bag", "ankle-boot"]
CIFAR_NAMES = ["airplane", "automobile", "bird", "cat", "deer",
               "dog", "frog", "horse", "ship", "truck"]
NOTMNIST_NAMES = list("ABCDEFGHIJ")

_HINTS = {
    "mnist": "download the four IDX files from the MNIST distribution or run the fetch subcommand",
    "cifar10": "download the CIFAR-10 binary version (cifar-10-binary.tar.gz) and extract it",
    "notmnist": "extract notMNIST_small into one directory per letter A-J",
}


def _resolve(directory: Path, name: str, hint: str) -> Path:
    for candidate in (name, f"{name}.gz", name.replace("-idx", ".idx")):
        path = directory / candidate
        if path.is_file():
            return path
    raise DatasetNotFoundError(directory / name, hint)


def read_bytes(path: Path, expected_bytes: Optional[int] = None) -> bytes:
    raw = path.read_bytes()
    if path.suffix == ".gz":
        raw = gzip.decompress(raw)
    if expected_bytes is not None and len(raw) != expected_bytes:
        raise TruncationError(str(path), expected_bytes, len(raw))
    return raw


def load_mnist_like(directory, expected_bytes: Optional[Mapping[str, int]] = None) -> Tuple[Dataset, Dataset]:
    """MNIST or FashionMNIST from the four standard IDX files (plain or gzipped)."""
    directory = Path(directory)
    expected_bytes = expected_bytes or {}
    arrays: Dict[str, np.ndarray] = {}
    for key, name in MNIST_FILES.items():
        path = _resolve(directory, name, _HINTS["mnist"])
        arrays[key] = parse_idx(read_bytes(path, expected_bytes.get(name)))
    splits = []
    for split in ("train", "test"):
        images = arrays[f"{split}_images"]
        splits.append(Dataset(images.reshape(images.shape[0], -1), arrays[f"{split}_labels"], 10))
    logger.info(f"Loaded {directory}: {len(splits[0])} train / {len(splits[1])} test")
    return splits[0], splits[1]


def load_cifar10(directory) -> Tuple[Dataset, Dataset]:
    directory = Path(directory)
    if (directory / "cifar-10-batches-bin").is_dir():
        directory = directory / "cifar-10-batches-bin"
    parts = [parse_cifar10_bin(read_bytes(_resolve(directory, name, _HINTS["cifar10"]))) for name in CIFAR_TRAIN]
    train = Dataset(np.vstack([p.inputs for p in parts]), np.concatenate([p.labels for p in parts]), 10)
    test = parse_cifar10_bin(read_bytes(_resolve(directory, CIFAR_TEST, _HINTS["cifar10"])))
    logger.info(f"Loaded CIFAR-10 from {directory}: {len(train)} train / {len(test)} test")
    return train, test


def _grayscale(pixels: np.ndarray) -> np.ndarray:
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim == 3:
        pixels = pixels[..., :3].mean(axis=2)
    if pixels.max() > 1.0:
        pixels = pixels / 255.0
    return pixels


def load_image_folder(root, seed: int, train_fraction: float = 0.9) -> Tuple[Dataset, Dataset]:
    """
    One sub-directory per class (sorted names give the class index). Unreadable or
    odd-sized images are skipped. Each class is split train/test with a seeded shuffle.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetNotFoundError(root, _HINTS["notmnist"])
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"No class directories under {root}")

    shape = None
    splits = {"train": ([], []), "test": ([], [])}
    for label, class_dir in enumerate(class_dirs):
        images = []
        for path in sorted(class_dir.iterdir()):
            try:
                pixels = _grayscale(mpimg.imread(path))
            except Exception as e:
                logger.warning(f"Skipping unreadable image {path}: {e}")
                continue
            shape = shape or pixels.shape
            if pixels.shape != shape:
                logger.warning(f"Skipping {path}: shape {pixels.shape} != {shape}")
                continue
            images.append(pixels.reshape(-1))
        if not images:
            raise DatasetError(f"Class directory {class_dir} holds no readable images")
        order = rng_for(seed, label).permutation(len(images))
        cut = int(round(train_fraction * len(images)))
        for split, idx in (("train", order[:cut]), ("test", order[cut:])):
            splits[split][0].extend(images[i] for i in idx)
            splits[split][1].extend([label] * len(idx))

    datasets = [Dataset(np.array(x), np.array(y), len(class_dirs)) for x, y in (splits["train"], splits["test"])]
    logger.info(f"Loaded image folder {root}: {len(class_dirs)} classes, "
                f"{len(datasets[0])} train / {len(datasets[1])} test")
    return datasets[0], datasets[1]


def _limit(dataset: Dataset, limit: Optional[int], seed: int, salt: int) -> Dataset:
    if limit is None or limit >= len(dataset):
        return dataset
    idx = np.sort(rng_for(seed, salt).choice(len(dataset), size=limit, replace=False))
    return dataset.subset(idx)


def load_stream(benchmark: str, data: Mapping, num_tasks: Optional[int], seed: int) -> TaskStream:
    """
    Build the task stream for a benchmark from the experiment's `data` block:
    path, train_limit, test_limit, train_per_task, test_per_task, expected_bytes and,
    for synth, n / dim / separation.
    """
    data = dict(data or {})
    data_seed = int(data.get("seed", seed))
    if benchmark == "synth":
        stream = synth_blobs(num_tasks or 3, int(data.get("n", 200)), int(data.get("dim", 2)),
                             float(data.get("separation", 4.0)), data_seed,
                             head_mode=data.get("head_mode", "multi"))
        return subset_stream(stream, data.get("train_per_task"), data.get("test_per_task"), data_seed)

    path = Path(data.get("path") or Path(Config.DATA_DIR) / benchmark)
    if benchmark in ("permuted-mnist", "split-mnist", "split-fashion"):
        train, test = load_mnist_like(path, data.get("expected_bytes"))
    elif benchmark == "split-cifar10":
        train, test = load_cifar10(path)
    elif benchmark == "split-notmnist":
        train, test = load_image_folder(path, data_seed, float(data.get("train_fraction", 0.9)))
    else:
        raise ConfigError(f"Unknown benchmark '{benchmark}'")

    train = _limit(train, data.get("train_limit"), data_seed, 1)
    test = _limit(test, data.get("test_limit"), data_seed, 2)

    if benchmark == "permuted-mnist":
        stream = build_permuted_stream(train, test, num_tasks or 5, data_seed, name=benchmark)
    else:
        pairs = [tuple(p) for p in data.get("pairs", Config.SPLIT_PAIRS[benchmark])]
        if num_tasks:
            pairs = pairs[:num_tasks]
        names = {"split-fashion": FASHION_NAMES, "split-cifar10": CIFAR_NAMES,
                 "split-notmnist": NOTMNIST_NAMES}.get(benchmark)
        stream = build_split_stream(train, test, pairs, name=benchmark, class_names=names)
    return subset_stream(stream, data.get("train_per_task"), data.get("test_per_task"), data_seed)
