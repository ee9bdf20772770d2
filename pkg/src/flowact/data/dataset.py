"""Frame-directory datasets, preprocessing and model-input assembly.

On-disk layout::

    <root>/<class_name>/<video_id>/frame_0001.ppm
    <root>/manifest.json

Class indices follow the alphabetical order of class directory names.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import imaging
from ..flow import FlowField, FlowParams, farneback_flow, flow_to_rgb, to_grayscale
from ..tensor_core import ShapeError, concat_axis, load_ften, save_ften
from .ppm import ImageFormatError, read_ppm

log = logging.getLogger(__name__)

FRAME_RE = re.compile(r"^frame_(\d+)\.(ppm|pgm)$", re.IGNORECASE)
MANIFEST_NAME = "manifest.json"
N_FRAMES = 10
FRAME_SIZE = 128
DEFAULT_MAX_MAG = 4.0


class DatasetError(ValueError):
    """Missing, empty or inconsistent dataset content."""


@dataclass(frozen=True)
class Preprocessing:
    size: int = FRAME_SIZE
    n_frames: int = N_FRAMES
    max_mag: float = DEFAULT_MAX_MAG
    flow: FlowParams = field(default_factory=FlowParams)

    def to_dict(self):
        d = asdict(self)
        d["flow"] = self.flow.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["flow"] = FlowParams(**d.get("flow", {}))
        return cls(**d)

    def key(self) -> str:
        """Short digest identifying these parameters, used to name caches."""
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class VideoSample:
    id: str
    label: int
    frames: list
    flows: list

    def validate(self, n_frames=N_FRAMES, size=FRAME_SIZE):
        if len(self.frames) != n_frames or len(self.flows) != n_frames:
            raise DatasetError(f"{self.id}: expected {n_frames} frames and flows, "
                               f"got {len(self.frames)} and {len(self.flows)}")
        for f in self.frames:
            if f.shape != (size, size, 3):
                raise DatasetError(f"{self.id}: frame shape {f.shape}, expected {(size, size, 3)}")
            if not (np.all(np.isfinite(f)) and f.min() >= 0 and f.max() <= 1):
                raise DatasetError(f"{self.id}: frame values outside [0, 1]")
        for fl in self.flows:
            if fl.shape != (size, size):
                raise DatasetError(f"{self.id}: flow shape {fl.shape}, expected {(size, size)}")


@dataclass
class DatasetManifest:
    root: str
    classes: dict
    entries: list
    preprocessing: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    generator: dict | None = None

    def labels(self):
        return np.array([e["label"] for e in self.entries], dtype=np.intp)

    def video_dir(self, entry) -> Path:
        return Path(self.root) / entry["dir"]

    def to_dict(self):
        d = {"classes": self.classes, "entries": self.entries, "preprocessing": self.preprocessing,
             "split": self.split}
        if self.generator is not None:
            d["generator"] = self.generator
        return d

    def write(self, path=None):
        path = Path(path) if path else Path(self.root) / MANIFEST_NAME
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, root):
        root = Path(root)
        path = root / MANIFEST_NAME if root.is_dir() else root
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read manifest {path}: {exc}") from None
        return cls(root=str(path.parent), classes=d["classes"], entries=d["entries"],
                   preprocessing=d.get("preprocessing", {}), split=d.get("split", {}),
                   generator=d.get("generator"))

    def check(self):
        for e in self.entries:
            d = self.video_dir(e)
            if not d.is_dir() or not any(FRAME_RE.match(p) for p in os.listdir(d)):
                raise DatasetError(f"video directory {d} missing or without frames")


def scan_dataset(root) -> DatasetManifest:
    """Build a manifest from the directory layout."""
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not class_names:
        raise DatasetError(f"no class directories under {root}")
    classes = {name: i for i, name in enumerate(class_names)}
    entries = []
    for name in class_names:
        for vid in sorted(p for p in (root / name).iterdir() if p.is_dir()):
            entries.append({"id": vid.name, "dir": f"{name}/{vid.name}", "label": classes[name]})
    if not entries:
        raise DatasetError(f"no video directories under {root}")
    return DatasetManifest(root=str(root), classes=classes, entries=entries)


def open_dataset(root) -> DatasetManifest:
    root = Path(root)
    if (root / MANIFEST_NAME).exists() or root.is_file():
        return DatasetManifest.read(root)
    return scan_dataset(root)


def frame_paths(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise DatasetError(f"{directory} is not a directory")
    found = []
    for name in os.listdir(directory):
        m = FRAME_RE.match(name)
        if m:
            found.append((int(m.group(1)), name))
    if not found:
        raise DatasetError(f"no frame images in {directory}")
    return [directory / name for _, name in sorted(found)]


def load_frames(directory) -> list[np.ndarray]:
    """Decode all ``frame_NNNN`` images in index order, values in [0, 1]."""
    frames = []
    for path in frame_paths(directory):
        try:
            frames.append(read_ppm(path))
        except (OSError, ImageFormatError) as exc:
            raise DatasetError(f"cannot decode frame {path}: {exc}") from None
    return frames


def resize_bilinear(img, out_h: int, out_w: int) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ShapeError(f"expected (h, w, c) image, got {img.shape}")
    if img.shape[0] < 2 or img.shape[1] < 2:
        raise ShapeError(f"image {img.shape} too small to interpolate")
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"degenerate target size {out_h}x{out_w}")
    return np.clip(imaging.resize(img, out_h, out_w), 0.0, 1.0)


def sample_indices(length: int, n: int = N_FRAMES) -> list[int]:
    if length < 1:
        raise DatasetError("cannot sample from an empty frame list")
    idx = [(k * length) // n for k in range(n)]
    return [min(i, length - 1) for i in idx]


def sample_frames(frames, n: int = N_FRAMES) -> list:
    """``n`` frames at indices ``floor(k * len / n)``."""
    return [frames[i] for i in sample_indices(len(frames), n)]


def compute_flows(frames, params: FlowParams) -> list[FlowField]:
    """Flow between consecutive frames; the last flow is repeated so there
    are as many flows as frames."""
    grays = [to_grayscale(f) for f in frames]
    if len(grays) == 1:
        return [FlowField.zeros(grays[0].shape)]
    flows = [farneback_flow(a, b, params) for a, b in zip(grays[:-1], grays[1:])]
    flows.append(flows[-1])
    return flows


def make_sample(frames, label: int, video_id: str, prep: Preprocessing) -> VideoSample:
    """Sample, resize, then compute flow on the resized frames."""
    picked = sample_frames(frames, prep.n_frames)
    resized = [resize_bilinear(f, prep.size, prep.size) for f in picked]
    sample = VideoSample(id=video_id, label=int(label), frames=resized, flows=compute_flows(resized, prep.flow))
    sample.validate(prep.n_frames, prep.size)
    return sample


def load_sample(manifest: DatasetManifest, entry, prep: Preprocessing) -> VideoSample:
    return make_sample(load_frames(manifest.video_dir(entry)), entry["label"], entry["id"], prep)


def build_input(sample: VideoSample, max_mag: float = DEFAULT_MAX_MAG) -> np.ndarray:
    """(2n, h, w, 3): the n RGB frames followed by the n encoded flows."""
    rgb = np.stack(sample.frames)
    enc = np.stack([flow_to_rgb(f, max_mag) for f in sample.flows])
    return concat_axis([rgb, enc], axis=0)


def zero_flow_input(x, max_mag: float = DEFAULT_MAX_MAG) -> np.ndarray:
    """Copy of an assembled input whose flow half is replaced by the encoding
    of zero motion."""
    x = np.array(x, copy=True)
    n = x.shape[-4] // 2
    zero = flow_to_rgb(FlowField.zeros(x.shape[-3:-1]), max_mag)
    x[..., n:, :, :, :] = zero
    return x


def cache_path(manifest: DatasetManifest, entry, prep: Preprocessing) -> Path:
    return manifest.video_dir(entry) / f"input_{prep.key()}.ften"


def prepare_dataset(manifest: DatasetManifest, prep: Preprocessing, cache: bool = False, dtype=np.float32):
    """Assemble model inputs for every manifest entry.

    Returns:
        ``(inputs, labels, ids)`` with inputs of shape (n, 2*n_frames, size, size, 3).
    """
    xs = []
    for entry in manifest.entries:
        path = cache_path(manifest, entry, prep)
        if cache and path.exists():
            x = load_ften(path)
        else:
            x = build_input(load_sample(manifest, entry, prep), prep.max_mag).astype(dtype)
            if cache:
                save_ften(path, x)
        xs.append(x.astype(dtype, copy=False))
    labels = manifest.labels()
    ids = [e["id"] for e in manifest.entries]
    return np.stack(xs), labels, ids
