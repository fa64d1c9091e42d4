"""Dataset ingestion: IDX image/label pairs, labeled CSV, built-in digits.

IDX layout (big endian):
  images: u32 magic 0x00000803, u32 count, u32 rows, u32 cols, then u8 pixels
  labels: u32 magic 0x00000801, u32 count, then u8 labels
Pixel bytes are rescaled by 1/255 into [0,1].

CSV layout: header ``label,p0,...,p{n-1}``; pixels already in [0,1].
"""

import csv
import os
import struct

import numpy as np

from .classifier import LabeledDataset

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetFormatError(ValueError):
    """Malformed dataset file; the message pins down what and where."""


def _read_u32s(raw: bytes, offset: int, count: int, path, what: str):
    need = 4 * count
    if offset + need > len(raw):
        raise DatasetFormatError(
            f"{path}: truncated while reading {what} at offset {offset}"
        )
    return struct.unpack(f">{count}I", raw[offset:offset + need]), offset + need


def load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    (magic,), off = _read_u32s(raw, 0, 1, path, "magic")
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(
            f"{path}: bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    (count, rows, cols), off = _read_u32s(raw, off, 3, path, "image header")
    need = count * rows * cols
    if len(raw) - off != need:
        raise DatasetFormatError(
            f"{path}: expected {need} pixel bytes after offset {off}, "
            f"found {len(raw) - off}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=off)
    return pixels.reshape(count, rows * cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    (magic,), off = _read_u32s(raw, 0, 1, path, "magic")
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(
            f"{path}: bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    (count,), off = _read_u32s(raw, off, 1, path, "label count")
    if len(raw) - off != count:
        raise DatasetFormatError(
            f"{path}: expected {count} label bytes after offset {off}, "
            f"found {len(raw) - off}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=off).astype(np.int64)


def load_idx_pair(images_path, labels_path) -> LabeledDataset:
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise DatasetFormatError(
            f"count mismatch: {len(images)} images in {images_path} vs "
            f"{len(labels)} labels in {labels_path}"
        )
    return LabeledDataset(images, labels)


def _resolve_idx_paths(path) -> tuple[str, str]:
    """Accept 'images,labels' or a directory holding one file of each kind."""
    if "," in str(path):
        images_path, labels_path = (part.strip() for part in str(path).split(",", 1))
        return images_path, labels_path
    if os.path.isdir(path):
        images, labels = [], []
        for name in sorted(os.listdir(path)):
            full = os.path.join(path, name)
            if not os.path.isfile(full):
                continue
            with open(full, "rb") as f:
                head = f.read(4)
            if len(head) < 4:
                continue
            (magic,) = struct.unpack(">I", head)
            if magic == IDX_IMAGES_MAGIC:
                images.append(full)
            elif magic == IDX_LABELS_MAGIC:
                labels.append(full)
        if len(images) == 1 and len(labels) == 1:
            return images[0], labels[0]
        raise DatasetFormatError(
            f"{path}: need exactly one image and one label IDX file, "
            f"found {len(images)} and {len(labels)}"
        )
    raise DatasetFormatError(
        f"{path}: IDX datasets need 'images,labels' paths or a directory"
    )


def load_csv(path) -> LabeledDataset:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        n = len(header) - 1
        expected = ["label"] + [f"p{i}" for i in range(n)]
        if n < 1 or header != expected:
            raise DatasetFormatError(
                f"{path}: bad header, expected label,p0,...,p{{n-1}}"
            )
        inputs, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != n + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {n + 1} fields, got {len(row)}"
                )
            try:
                label = int(row[0])
                pixels = np.array([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: {exc}") from None
            if pixels.size and (pixels.min() < 0.0 or pixels.max() > 1.0):
                raise DatasetFormatError(
                    f"{path}:{lineno}: pixel out of range [0,1]"
                )
            if label < 0:
                raise DatasetFormatError(f"{path}:{lineno}: negative label")
            inputs.append(pixels)
            labels.append(label)
    if not inputs:
        raise DatasetFormatError(f"{path}: no data rows")
    return LabeledDataset(np.array(inputs), np.array(labels, dtype=np.int64))


def save_csv(dataset: LabeledDataset, path) -> None:
    n = dataset.inputs.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["label"] + [f"p{i}" for i in range(n)])
        for x, label in zip(dataset.inputs, dataset.labels):
            writer.writerow([int(label)] + [repr(float(v)) for v in x])


def load_digits_dataset() -> LabeledDataset:
    """Built-in 8x8 digit images (n=64, m=10), rescaled from 0..16 to [0,1]."""
    from sklearn.datasets import load_digits

    raw = load_digits()
    return LabeledDataset(raw.data / 16.0, raw.target.astype(np.int64))


def load_dataset(path, fmt: str) -> LabeledDataset:
    """Dispatch on format: 'idx', 'csv' or the built-in 'digits'."""
    fmt = fmt.lower()
    if fmt == "idx":
        images_path, labels_path = _resolve_idx_paths(path)
        return load_idx_pair(images_path, labels_path)
    if fmt == "csv":
        return load_csv(path)
    if fmt == "digits":
        return load_digits_dataset()
    raise DatasetFormatError(f"unknown dataset format {fmt!r}")
