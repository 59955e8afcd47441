"""Image-processing kernels for the two microscopy use cases.

Hyperspectral cubes (width, height, energy) are reduced to an intensity map
and a total spectrum.  Spatiotemporal stacks (time, height, width) are cast
to 8-bit frames and run through a classical bright-blob detector that stands
behind the same bounding-box interface a trained model would use.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import emdlite
from .emdlite import EmdLiteFile, HYPERSPECTRAL_AXES, SPATIOTEMPORAL_AXES


class AnalysisError(Exception):
    pass


def _check_cube(data: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"{what}: expected a 3-D array, got ndim={arr.ndim}")
    if arr.size == 0:
        raise ValueError(f"{what}: every extent must be >= 1")
    if not np.isfinite(arr).all():
        raise ValueError(f"{what}: all values must be finite")
    return arr


@dataclass
class HyperspectralTensor:
    """(W, H, E) float64 cube; optional per-channel energies in eV."""

    data: np.ndarray
    energy_axis: np.ndarray | None = None

    def __post_init__(self):
        self.data = _check_cube(self.data, "hyperspectral tensor")
        if self.energy_axis is not None:
            self.energy_axis = np.asarray(self.energy_axis, dtype=np.float64)
            if self.energy_axis.shape != (self.data.shape[2],):
                raise ValueError("energy_axis length must match the energy extent")


@dataclass
class SpatiotemporalTensor:
    """(T, H, W) float64 frame stack."""

    data: np.ndarray

    def __post_init__(self):
        self.data = _check_cube(self.data, "spatiotemporal tensor")


def intensity_map(t: HyperspectralTensor) -> np.ndarray:
    """Sum over the energy axis; returns a (W, H) float64 map, unnormalized."""
    return t.data.sum(axis=2)


def spectrum(t: HyperspectralTensor) -> np.ndarray:
    """Sum over both pixel axes; returns a length-E float64 vector."""
    return t.data.sum(axis=(0, 1))


def cast_u8(t: SpatiotemporalTensor) -> np.ndarray:
    """Min-max cast fp64 -> uint8 over the whole stack (not per frame).

    u = round(255 * (v - vmin) / (vmax - vmin)), rounding half away from
    zero; a constant stack maps to all zeros.  Global scaling keeps frame
    brightness comparable across time.
    """
    data = t.data
    vmin = data.min()
    vmax = data.max()
    if vmax == vmin:
        return np.zeros(data.shape, dtype=np.uint8)
    scaled = 255.0 * (data - vmin) / (vmax - vmin)
    # values are in [0, 255], so half-away-from-zero == floor(x + 0.5)
    return np.floor(scaled + 0.5).astype(np.uint8)


class Polarity(str, Enum):
    BRIGHT_ON_DARK = "bright_on_dark"
    DARK_ON_BRIGHT = "dark_on_bright"


class ThresholdMethod(str, Enum):
    OTSU = "otsu"
    FIXED_QUANTILE = "fixed_quantile"


@dataclass(frozen=True)
class DetectorParams:
    polarity: Polarity = Polarity.BRIGHT_ON_DARK
    min_area: int = 4
    threshold_method: ThresholdMethod = ThresholdMethod.OTSU
    quantile: float = 0.99

    def __post_init__(self):
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")
        if self.threshold_method is ThresholdMethod.FIXED_QUANTILE and not (0.0 < self.quantile < 1.0):
            raise ValueError("quantile must lie in (0, 1)")


@dataclass(frozen=True)
class DetectionBox:
    """Axis-aligned box in frame pixel coordinates; x right, y down."""

    frame_index: int
    x: int
    y: int
    w: int
    h: int
    confidence: float

    def to_dict(self) -> dict:
        return {"frame_index": self.frame_index, "x": self.x, "y": self.y,
                "w": self.w, "h": self.h, "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionBox":
        return cls(frame_index=int(d["frame_index"]), x=int(d["x"]), y=int(d["y"]),
                   w=int(d["w"]), h=int(d["h"]), confidence=float(d["confidence"]))


def otsu_threshold(frame: np.ndarray) -> int:
    """Gray level t maximizing between-class variance of {<=t, >t}.

    Ties resolve to the lowest t.  A uniform frame has no valid split and
    returns its single gray level (so nothing lies strictly above it).
    """
    hist = np.bincount(frame.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    w1 = total - w0
    cum_mean = np.cumsum(hist * np.arange(256))
    grand_mean = cum_mean[-1]
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return int(frame.flat[0])
    mu0 = np.divide(cum_mean, w0, out=np.zeros(256), where=w0 > 0)
    mu1 = np.divide(grand_mean - cum_mean, w1, out=np.zeros(256), where=w1 > 0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between))


_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def detect_blobs(frame: np.ndarray, params: DetectorParams = DetectorParams()) -> list[DetectionBox]:
    """Threshold + 8-connected component labeling, boxes sorted by confidence.

    Confidence is the component's mean intensity over the threshold, scaled
    to the remaining headroom and clamped to [0, 1].  Ordering is descending
    confidence, ties broken by (y, x), so output is reproducible.
    """
    frame = np.asarray(frame)
    if frame.ndim != 2 or frame.size == 0:
        raise ValueError("frame must be a nonempty 2-D image")
    if frame.dtype != np.uint8:
        raise ValueError("frame must be uint8 (use cast_u8 first)")

    work = (255 - frame) if params.polarity is Polarity.DARK_ON_BRIGHT else frame
    if params.threshold_method is ThresholdMethod.OTSU:
        threshold = otsu_threshold(work)
    else:
        threshold = int(np.quantile(work, params.quantile))

    mask = work > threshold
    labels, n = ndimage.label(mask, structure=_EIGHT_CONNECTED)
    boxes = []
    for slc_index, slc in enumerate(ndimage.find_objects(labels, n), start=1):
        if slc is None:
            continue
        region = labels[slc] == slc_index
        area = int(region.sum())
        if area < params.min_area:
            continue
        ys, xs = slc
        mean_val = float(work[slc][region].mean())
        conf = (mean_val - threshold) / (255.0 - threshold) if threshold < 255 else 1.0
        boxes.append(DetectionBox(
            frame_index=0,
            x=int(xs.start), y=int(ys.start),
            w=int(xs.stop - xs.start), h=int(ys.stop - ys.start),
            confidence=min(max(conf, 0.0), 1.0),
        ))
    boxes.sort(key=lambda b: (-b.confidence, b.y, b.x))
    return boxes


def iou(a: DetectionBox, b: DetectionBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    ix = max(0, min(a.x + a.w, b.x + b.w) - max(a.x, b.x))
    iy = max(0, min(a.y + a.h, b.y + b.h) - max(a.y, b.y))
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


@dataclass(frozen=True)
class ArtifactEntry:
    kind: str
    path: str  # relative to the output directory

    def to_dict(self) -> dict:
        return {"kind": self.kind, "path": self.path}


def classify_dataset(ds: emdlite.Dataset):
    """Map a dataset's axis signature to a tensor wrapper, or None."""
    if ds.descriptor.axes == HYPERSPECTRAL_AXES:
        return HyperspectralTensor(data=ds.to_array().astype(np.float64))
    if ds.descriptor.axes == SPATIOTEMPORAL_AXES:
        return SpatiotemporalTensor(data=ds.to_array().astype(np.float64))
    return None


def write_pgm(image: np.ndarray, path: Path) -> None:
    """Binary portable graymap (P5), rows = image height."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("PGM output requires a 2-D uint8 image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(image.tobytes(order="C"))


def _scale_to_u8(image: np.ndarray) -> np.ndarray:
    vmin, vmax = image.min(), image.max()
    if vmax == vmin:
        return np.zeros(image.shape, dtype=np.uint8)
    return np.floor(255.0 * (image - vmin) / (vmax - vmin) + 0.5).astype(np.uint8)


def annotate_frame(frame: np.ndarray, boxes: list[DetectionBox]) -> np.ndarray:
    """Burn box outlines into a copy of the frame at max intensity."""
    out = frame.copy()
    h, w = out.shape
    for b in boxes:
        x0, y0 = max(b.x, 0), max(b.y, 0)
        x1, y1 = min(b.x + b.w, w) - 1, min(b.y + b.h, h) - 1
        if x1 < x0 or y1 < y0:
            continue
        out[y0, x0:x1 + 1] = 255
        out[y1, x0:x1 + 1] = 255
        out[y0:y1 + 1, x0] = 255
        out[y0:y1 + 1, x1] = 255
    return out


def _spectrum_csv(spec: np.ndarray, energy_axis: np.ndarray | None) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if energy_axis is not None:
        writer.writerow(["channel_index", "energy_ev", "counts"])
        for i, (ev, counts) in enumerate(zip(energy_axis, spec)):
            writer.writerow([i, repr(float(ev)), repr(float(counts))])
    else:
        writer.writerow(["channel_index", "counts"])
        for i, counts in enumerate(spec):
            writer.writerow([i, repr(float(counts))])
    return buf.getvalue().encode("utf-8")


def render_artifacts(file: EmdLiteFile, out_dir: str | Path) -> list[ArtifactEntry]:
    """Render analysis outputs for the first recognized dataset in the file.

    Hyperspectral: ``intensity.pgm`` + ``spectrum.csv``.  Spatiotemporal:
    one annotated ``frame_NNNN.pgm`` per time step + ``detections.json``.
    Outputs are byte-deterministic for a given input file.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    tensor = None
    for ds in file.datasets:
        tensor = classify_dataset(ds)
        if tensor is not None:
            break
    if tensor is None:
        raise AnalysisError("unrecognized axis signature")

    manifest: list[ArtifactEntry] = []
    if isinstance(tensor, HyperspectralTensor):
        imap = intensity_map(tensor)
        # map is (W, H); PGM rows are image rows, so transpose to (H, W)
        write_pgm(_scale_to_u8(imap).T, out / "intensity.pgm")
        manifest.append(ArtifactEntry("intensity_map", "intensity.pgm"))
        (out / "spectrum.csv").write_bytes(_spectrum_csv(spectrum(tensor), tensor.energy_axis))
        manifest.append(ArtifactEntry("spectrum_csv", "spectrum.csv"))
    else:
        frames = cast_u8(tensor)
        detections: list[DetectionBox] = []
        for idx in range(frames.shape[0]):
            boxes = [
                DetectionBox(frame_index=idx, x=b.x, y=b.y, w=b.w, h=b.h,
                             confidence=b.confidence)
                for b in detect_blobs(frames[idx])
            ]
            detections.extend(boxes)
            name = f"frame_{idx:04d}.pgm"
            write_pgm(annotate_frame(frames[idx], boxes), out / name)
            manifest.append(ArtifactEntry("frame", name))
        payload = json.dumps([b.to_dict() for b in detections],
                             separators=(",", ":")).encode("utf-8")
        (out / "detections.json").write_bytes(payload)
        manifest.append(ArtifactEntry("detections", "detections.json"))
    return manifest
