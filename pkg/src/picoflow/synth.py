"""Deterministic synthetic EMD-lite files for tests and benchmarks.

Hyperspectral cubes get a decaying continuum plus Gaussian spectral peaks
localized in disc-shaped sample regions.  Spatiotemporal stacks get bright
rectangular particles random-walking over a noisy dark background; each
particle stays inside its own grid cell so ground-truth boxes never touch,
making the planted boxes an exact oracle for the detector.
"""

from __future__ import annotations

import math
from datetime import datetime, timedelta, timezone

import numpy as np

from .analysis import DetectionBox
from .emdlite import (
    Dataset, DetectorInfo, EmdLiteFile, ExperimentMetadata,
    HYPERSPECTRAL_AXES, SPATIOTEMPORAL_AXES, SampleInfo, SoftwareInfo,
    StagePosition,
)

_BASE_ACQUISITION = datetime(2023, 5, 1, 10, 0, 0, tzinfo=timezone.utc)

_PEAK_ELEMENTS = ["Au", "C", "Si", "O", "Cu", "N"]


def default_metadata(kind: str, seed: int, elements: list[str]) -> ExperimentMetadata:
    stamp = (_BASE_ACQUISITION + timedelta(seconds=seed)).strftime("%Y-%m-%dT%H:%M:%SZ")
    return ExperimentMetadata(
        acquisition_datetime=stamp,
        beam_energy=300.0,
        magnification=80000.0,
        stage_position=StagePosition(x=1.5, y=-2.25, z=0.1, alpha=0.0, beta=0.0),
        detector=DetectorInfo(name="xpad", position="inserted"),
        software=SoftwareInfo(name="picoflow-synth", version="0.1.0"),
        sample=SampleInfo(
            description=f"synthetic {kind} sample, seed {seed}",
            elements=elements,
        ),
        extra={"seed": seed, "kind": kind},
    )


def synth_hyperspectral(width: int, height: int, energy: int, seed: int) -> EmdLiteFile:
    """(W, H, E) float64 cube with element-like peaks in disc regions."""
    if min(width, height, energy) < 1:
        raise ValueError("every extent must be >= 1")
    rng = np.random.default_rng(seed)
    channels = np.arange(energy, dtype=np.float64)
    continuum = np.exp(-3.0 * channels / max(energy, 1))
    cube = continuum[None, None, :] * rng.uniform(0.5, 1.0, (width, height, 1))

    n_regions = min(3, max(1, min(width, height) // 8))
    elements = list(_PEAK_ELEMENTS[: n_regions + 1])
    xs = np.arange(width, dtype=np.float64)[:, None]
    ys = np.arange(height, dtype=np.float64)[None, :]
    for i in range(n_regions):
        cx = rng.uniform(0.2, 0.8) * width
        cy = rng.uniform(0.2, 0.8) * height
        radius = rng.uniform(0.1, 0.25) * min(width, height)
        mask = ((xs - cx) ** 2 + (ys - cy) ** 2) <= radius ** 2
        center = rng.uniform(0.15, 0.9) * max(energy - 1, 1)
        sigma = max(1.0, 0.02 * energy)
        amplitude = rng.uniform(2.0, 6.0)
        peak = amplitude * np.exp(-0.5 * ((channels - center) / sigma) ** 2)
        cube += mask[:, :, None] * peak[None, None, :]

    cube += rng.uniform(0.0, 0.05, cube.shape)
    metadata = default_metadata("hyperspectral", seed, elements)
    dataset = Dataset.from_array("hyperspectral", cube, HYPERSPECTRAL_AXES)
    return EmdLiteFile(metadata=metadata, datasets=[dataset])


def _cell_grid(count: int, height: int, width: int) -> list[tuple[int, int, int, int]]:
    """Split the frame into >= count cells (y0, x0, cell_h, cell_w)."""
    cols = math.ceil(math.sqrt(count))
    rows = math.ceil(count / cols)
    cell_h, cell_w = height // rows, width // cols
    cells = []
    for r in range(rows):
        for c in range(cols):
            if len(cells) < count:
                cells.append((r * cell_h, c * cell_w, cell_h, cell_w))
    return cells


def synth_spatiotemporal(frames: int, height: int, width: int, seed: int,
                         blob_count: int = 8) -> tuple[EmdLiteFile, list[DetectionBox]]:
    """(T, H, W) stack of wandering bright particles plus their true boxes."""
    if min(frames, height, width) < 1:
        raise ValueError("every extent must be >= 1")
    rng = np.random.default_rng(seed)
    cells = _cell_grid(blob_count, height, width)
    if any(ch < 7 or cw < 7 for _, _, ch, cw in cells):
        raise ValueError(
            f"frame {height}x{width} too small for {blob_count} separated particles")

    stack = rng.uniform(0.0, 0.15, (frames, height, width))
    truth: list[DetectionBox] = []

    blobs = []
    for y0, x0, ch, cw in cells:
        bh = int(rng.integers(3, min(17, max(4, ch // 2))))
        bw = int(rng.integers(3, min(17, max(4, cw // 2))))
        # one-pixel gap to the cell border keeps particles 8-disconnected
        y = int(rng.integers(y0 + 1, y0 + ch - bh))
        x = int(rng.integers(x0 + 1, x0 + cw - bw))
        blobs.append({"y0": y0, "x0": x0, "ch": ch, "cw": cw,
                      "bh": bh, "bw": bw, "y": y, "x": x})

    for t in range(frames):
        for b in blobs:
            if t > 0:
                b["y"] = int(np.clip(b["y"] + rng.integers(-2, 3),
                                     b["y0"] + 1, b["y0"] + b["ch"] - b["bh"] - 1))
                b["x"] = int(np.clip(b["x"] + rng.integers(-2, 3),
                                     b["x0"] + 1, b["x0"] + b["cw"] - b["bw"] - 1))
            stack[t, b["y"]:b["y"] + b["bh"], b["x"]:b["x"] + b["bw"]] = \
                rng.uniform(0.85, 1.0, (b["bh"], b["bw"]))
            truth.append(DetectionBox(frame_index=t, x=b["x"], y=b["y"],
                                      w=b["bw"], h=b["bh"], confidence=1.0))

    metadata = default_metadata("spatiotemporal", seed, ["Au", "C"])
    dataset = Dataset.from_array("spatiotemporal", stack, SPATIOTEMPORAL_AXES)
    return EmdLiteFile(metadata=metadata, datasets=[dataset]), truth


def make_file(kind: str, shape: tuple[int, int, int], seed: int,
              blob_count: int = 8):
    """Dispatch on kind; returns (file, truth boxes or None).

    Shape order is (W, H, E) for hyperspectral and (T, H, W) for
    spatiotemporal, matching each kind's axis signature.
    """
    if kind == "hyperspectral":
        return synth_hyperspectral(*shape, seed=seed), None
    if kind == "spatiotemporal":
        return synth_spatiotemporal(*shape, seed=seed, blob_count=blob_count)
    raise ValueError(f"unknown kind {kind!r}")
