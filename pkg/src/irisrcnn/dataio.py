"""On-disk formats: binary PGM images and the JSON annotation index."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import DoubleCircle, is_valid

INDEX_NAME = "index.json"


def write_pgm(path, image) -> None:
    """Write a ``(H, W)`` or ``(1, H, W)`` array with values in [0, 1] as 8-bit P5."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ValueError("only single-channel images can be written as PGM")
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    h, w = arr.shape
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM as a ``(1, H, W)`` float array in [0, 1]."""
    raw = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace byte before the raster
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise ValueError(f"{path}: raster is truncated")
    return (np.frombuffer(body, dtype=np.uint8).reshape(1, h, w) / 255.0).astype(np.float64)


@dataclass
class AnnotationRecord:
    image: str
    mask: str
    identity: int
    circles: DoubleCircle

    def to_dict(self) -> dict:
        d = {"image": self.image, "mask": self.mask, "identity": self.identity}
        d.update(self.circles.to_dict())
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(
            image=str(d["image"]),
            mask=str(d["mask"]),
            identity=int(d["identity"]),
            circles=DoubleCircle.from_dict(d),
        )


@dataclass
class Dataset:
    """Images, masks and ground-truth circles held in memory."""

    images: list[np.ndarray]
    masks: list[np.ndarray]
    circles: list[DoubleCircle]
    identities: list[int]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def __len__(self):
        return len(self.images)

    def subset(self, indices) -> "Dataset":
        idx = list(indices)
        return Dataset(
            images=[self.images[i] for i in idx],
            masks=[self.masks[i] for i in idx],
            circles=[self.circles[i] for i in idx],
            identities=[self.identities[i] for i in idx],
        )

    def split(self, name: str) -> "Dataset":
        if name not in self.splits:
            raise KeyError(f"dataset has no {name!r} split")
        return self.subset(self.splits[name])


def write_index(path, records: list[AnnotationRecord], splits: dict | None = None, extra=None):
    doc = {"records": [r.to_dict() for r in records]}
    if splits is not None:
        doc["splits"] = {k: list(v) for k, v in splits.items()}
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")


def read_index(path) -> tuple[list[AnnotationRecord], dict[str, list[int]]]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "records" not in doc:
        raise ValueError(f"{path}: annotation index must be an object with 'records'")
    records = [AnnotationRecord.from_dict(r) for r in doc["records"]]
    splits = {k: [int(i) for i in v] for k, v in doc.get("splits", {}).items()}
    return records, splits


def load_dataset(directory) -> Dataset:
    """Load every record of ``directory/index.json`` into memory."""
    root = Path(directory)
    records, splits = read_index(root / INDEX_NAME)
    images, masks = [], []
    for rec in records:
        img_path, mask_path = root / rec.image, root / rec.mask
        if not img_path.is_file() or not mask_path.is_file():
            raise FileNotFoundError(f"missing files for record {rec.image!r}")
        if not bool(is_valid(rec.circles.to_array())):
            raise ValueError(f"record {rec.image!r} has an invalid double circle")
        images.append(read_pgm(img_path))
        masks.append((read_pgm(mask_path) >= 0.5).astype(np.float64))
    if not splits:
        splits = {"all": list(range(len(records)))}
    return Dataset(
        images=images,
        masks=masks,
        circles=[r.circles for r in records],
        identities=[r.identity for r in records],
        splits=splits,
    )
