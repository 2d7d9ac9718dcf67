"""Dense attention maps from fixations, spatial grids and region proposals."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from airkit.errors import AirkitError, UndefinedCorrelationError
from airkit.scene import BoundingBox

DEFAULT_MAP_SIZE = 256
DEFAULT_SIGMA = 9.0
DEFAULT_BINS: tuple[tuple[float, float], ...] = ((0.0, 1000.0), (1000.0, 2000.0), (2000.0, 3000.0))
TRUNCATE = 4.0
STD_EPS = 1e-12
# Correlations this close to +-1 are reported as exactly +-1.
_UNIT_SNAP = 1e-12

SOURCES = ("human-correct", "human-incorrect", "human-total", "machine")
FIXATION_FIELDS = ("question_id", "participant_id", "x", "y", "start_ms", "end_ms", "answer", "is_correct")


@dataclass(frozen=True)
class Fixation:
    question_id: str
    participant_id: str
    x: float
    y: float
    start: float
    end: float
    is_correct: bool
    answer: str = ""

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise AirkitError(f"fixation needs 0 <= start < end, got start={self.start}, end={self.end}")


@dataclass(frozen=True, eq=False)
class AttentionMap:
    grid: np.ndarray
    source: str = "machine"
    normalized: bool = False

    def __post_init__(self):
        grid = np.array(self.grid, dtype=float)
        if grid.ndim != 2 or grid.shape[0] < 1 or grid.shape[1] < 1:
            raise AirkitError(f"attention map must be a non-empty 2-D grid, got shape {grid.shape}")
        if not np.all(np.isfinite(grid)) or np.any(grid < 0):
            raise AirkitError("attention map values must be finite and non-negative")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    def scaled(self, a: float, b: float = 0.0) -> AttentionMap:
        return AttentionMap(a * self.grid + b, self.source, False)


@dataclass(frozen=True, eq=False)
class StandardizedMap:
    grid: np.ndarray
    degenerate: bool

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape


@dataclass(frozen=True)
class ProposalAttention:
    boxes: tuple[BoundingBox, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        if not self.boxes:
            raise AirkitError("proposal attention needs at least one proposal")
        if len(self.boxes) != len(self.weights):
            raise AirkitError("one weight per proposal box is required")
        if any(w < 0 for w in self.weights):
            raise AirkitError("proposal weights must be non-negative")
        if abs(math.fsum(self.weights) - 1.0) > 1e-6:
            raise AirkitError(f"proposal weights must sum to 1, got {math.fsum(self.weights)}")

    @classmethod
    def normalized_from(cls, boxes: Sequence[BoundingBox], weights: Sequence[float]) -> ProposalAttention:
        total = math.fsum(weights)
        if total <= 0:
            raise AirkitError("proposal weights sum to zero")
        return cls(tuple(boxes), tuple(w / total for w in weights))


def _to_pixel(v: float, extent: float, size: int) -> int:
    return min(max(int(math.floor(v * size / extent)), 0), size - 1)


def accumulate_fixations(fs: Iterable[Fixation], width: float, height: float,
                         size: int = DEFAULT_MAP_SIZE, sigma: float = DEFAULT_SIGMA) -> np.ndarray:
    """Gaussian-smoothed fixation density before max-normalization.

    Each fixation is a unit impulse at its rescaled pixel; the kernel is
    truncated at four sigma and sums to one, so interior mass is preserved.
    """
    if size < 1:
        raise ValueError(f"map size must be >= 1, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    impulses = np.zeros((size, size))
    for f in fs:
        impulses[_to_pixel(f.y, height, size), _to_pixel(f.x, width, size)] += 1.0
    return ndimage.gaussian_filter(impulses, sigma=sigma, mode="constant", cval=0.0, truncate=TRUNCATE)


def fixations_to_map(fs: Iterable[Fixation], width: float, height: float, size: int = DEFAULT_MAP_SIZE,
                     sigma: float = DEFAULT_SIGMA, source: str = "human-total") -> AttentionMap:
    """Fixation map scaled to [0, 1]; no fixations gives an all-zero map."""
    density = accumulate_fixations(fs, width, height, size, sigma)
    peak = density.max()
    if peak > 0:
        density = density / peak
    return AttentionMap(density, source, normalized=True)


def slice_fixations_temporal(fs: Iterable[Fixation], bins: Sequence[Sequence[float]] = DEFAULT_BINS
                             ) -> tuple[list[list[Fixation]], int]:
    """Group fixations by onset time into half-open ``[lo, hi)`` bins.

    Returns the per-bin lists and the number of fixations outside every bin.
    """
    bins = [(float(lo), float(hi)) for lo, hi in bins]
    for lo, hi in bins:
        if not lo < hi:
            raise AirkitError(f"temporal bin [{lo}, {hi}) is empty")
    for (lo1, hi1), (lo2, hi2) in zip(bins, bins[1:]):
        if lo2 < hi1:
            raise AirkitError(f"temporal bins [{lo1}, {hi1}) and [{lo2}, {hi2}) overlap or are out of order")
    out: list[list[Fixation]] = [[] for _ in bins]
    dropped = 0
    for f in fs:
        for i, (lo, hi) in enumerate(bins):
            if lo <= f.start < hi:
                out[i].append(f)
                break
        else:
            dropped += 1
    return out, dropped


def box_pixel_span(box: BoundingBox, width: float, height: float, shape: tuple[int, int]
                   ) -> tuple[int, int, int, int]:
    """Row/column slice bounds of the map pixels whose centres fall inside ``box``.

    The box is rescaled from image space to the grid and treated as
    half-open. A box too thin to contain any pixel centre maps to the single
    pixel under its centre.
    """
    rows, cols = shape
    clipped = box.clipped(width, height)
    if clipped is None:
        raise AirkitError(f"box {box.as_list()} lies outside the {width}x{height} image")
    sx, sy = cols / width, rows / height
    x0, x1 = clipped.x * sx, clipped.x2 * sx
    y0, y1 = clipped.y * sy, clipped.y2 * sy
    c0 = max(math.ceil(x0 - 0.5), 0)
    c1 = min(math.ceil(x1 - 0.5), cols)
    r0 = max(math.ceil(y0 - 0.5), 0)
    r1 = min(math.ceil(y1 - 0.5), rows)
    if c1 <= c0:
        c0 = min(int(math.floor((x0 + x1) / 2)), cols - 1)
        c1 = c0 + 1
    if r1 <= r0:
        r0 = min(int(math.floor((y0 + y1) / 2)), rows - 1)
        r1 = r0 + 1
    return r0, r1, c0, c1


def rasterize_proposal_attention(pa: ProposalAttention, width: float, height: float,
                                 size: int = DEFAULT_MAP_SIZE, normalize: bool = True) -> AttentionMap:
    """Spread each proposal's weight evenly over the pixels of its box.

    Boxes thinner than a pixel fall back to the pixel under their centre.
    With ``normalize=False`` the grid integrates to the total weight.
    """
    grid = np.zeros((size, size))
    for box, weight in zip(pa.boxes, pa.weights):
        if box.clipped(width, height) is None:
            raise AirkitError(f"proposal box {box.as_list()} has zero area inside the image")
        r0, r1, c0, c1 = box_pixel_span(box, width, height, (size, size))
        n = (c1 - c0) * (r1 - r0)
        grid[r0:r1, c0:c1] += weight / n
    if normalize and grid.max() > 0:
        grid = grid / grid.max()
    return AttentionMap(grid, "machine", normalized=normalize)


def upsample_grid(grid, size: int = DEFAULT_MAP_SIZE, source: str = "machine") -> AttentionMap:
    """Bilinear upsampling of a coarse spatial attention grid to ``size`` x ``size``."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2:
        raise AirkitError(f"spatial attention must be 2-D, got shape {grid.shape}")
    if np.any(grid < 0):
        raise AirkitError("spatial attention must be non-negative")
    if grid.shape == (size, size):
        return AttentionMap(grid, source)
    zoom = (size / grid.shape[0], size / grid.shape[1])
    out = ndimage.zoom(grid, zoom, order=1, mode="nearest", grid_mode=True)
    return AttentionMap(np.clip(out, 0.0, None), source)


def standardize_map(m: AttentionMap | np.ndarray) -> StandardizedMap:
    """Z-score the map with the population standard deviation.

    Constant maps have no spread; they come back as all zeros and are
    flagged degenerate.
    """
    grid = m.grid if isinstance(m, AttentionMap) else np.asarray(m, dtype=float)
    mu = grid.mean()
    sd = grid.std()
    if not sd >= STD_EPS:
        return StandardizedMap(np.zeros_like(grid), True)
    z = (grid - mu) / sd
    z.setflags(write=False)
    return StandardizedMap(z, False)


def snap_unit(r: float) -> float:
    if abs(r - 1.0) <= _UNIT_SNAP:
        return 1.0
    if abs(r + 1.0) <= _UNIT_SNAP:
        return -1.0
    return min(max(r, -1.0), 1.0)


def map_pearson(a: AttentionMap | np.ndarray, b: AttentionMap | np.ndarray) -> float:
    """Pearson correlation between two maps over all pixels."""
    ga = a.grid if isinstance(a, AttentionMap) else np.asarray(a, dtype=float)
    gb = b.grid if isinstance(b, AttentionMap) else np.asarray(b, dtype=float)
    if ga.shape != gb.shape:
        raise AirkitError(f"map dimensions differ: {ga.shape} vs {gb.shape}")
    da = ga - ga.mean()
    db = gb - gb.mean()
    sa = math.sqrt(float(np.sum(da * da)))
    sb = math.sqrt(float(np.sum(db * db)))
    if sa < STD_EPS * math.sqrt(ga.size) or sb < STD_EPS * math.sqrt(gb.size):
        raise UndefinedCorrelationError("correlation is undefined for a constant map")
    return snap_unit(float(np.sum(da * db)) / (sa * sb))


# --- I/O -------------------------------------------------------------------

def _parse_bool(value: str) -> bool:
    v = str(value).strip().lower()
    if v in ("1", "true", "yes", "y", "t"):
        return True
    if v in ("0", "false", "no", "n", "f"):
        return False
    raise AirkitError(f"cannot read {value!r} as a boolean")


def read_fixations_csv(path) -> list[Fixation]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(FIXATION_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise AirkitError(f"{path}: fixation CSV is missing columns {sorted(missing)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(Fixation(
                    question_id=row["question_id"],
                    participant_id=row["participant_id"],
                    x=float(row["x"]),
                    y=float(row["y"]),
                    start=float(row["start_ms"]),
                    end=float(row["end_ms"]),
                    is_correct=_parse_bool(row["is_correct"]),
                    answer=row["answer"],
                ))
            except (ValueError, AirkitError) as exc:
                raise AirkitError(f"{path}:{lineno}: {exc}") from exc
    return out


def write_fixations_csv(path, fixations: Iterable[Fixation]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIXATION_FIELDS)
        for f in fixations:
            w.writerow([f.question_id, f.participant_id, repr(f.x), repr(f.y), repr(f.start), repr(f.end),
                        f.answer, "1" if f.is_correct else "0"])


def map_to_json(m: AttentionMap | np.ndarray) -> dict:
    grid = m.grid if isinstance(m, AttentionMap) else np.asarray(m)
    h, w = grid.shape
    return {"h": h, "w": w, "data": [float(v) for v in grid.ravel()]}


def map_from_json(doc: dict, source: str = "machine") -> AttentionMap:
    try:
        h, w = int(doc["h"]), int(doc["w"])
        data = np.asarray(doc["data"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise AirkitError(f"dense map JSON needs h, w and data: {exc}") from exc
    if data.size != h * w:
        raise AirkitError(f"dense map has {data.size} values, expected {h}x{w}")
    return AttentionMap(data.reshape(h, w), source)


def read_map_csv(path, source: str = "machine") -> AttentionMap:
    return AttentionMap(np.loadtxt(path, delimiter=",", ndmin=2), source)


def write_map_csv(path, m: AttentionMap | np.ndarray):
    grid = m.grid if isinstance(m, AttentionMap) else np.asarray(m)
    np.savetxt(path, grid, delimiter=",", fmt="%.12g")


def proposals_from_json(doc: list) -> ProposalAttention:
    boxes = [BoundingBox(*map(float, item["box"])) for item in doc]
    weights = [float(item.get("weight", 0.0)) for item in doc]
    return ProposalAttention(tuple(boxes), tuple(weights))


def read_attention_file(path, width: float, height: float, size: int = DEFAULT_MAP_SIZE,
                        source: str = "machine") -> tuple[AttentionMap, str]:
    """Load a machine attention input and bring it to map resolution.

    JSON objects are dense grids (bilinearly upsampled); JSON lists are
    region proposals (density-rasterized); ``.csv`` files are dense grids.
    Returns the map and a note naming the conversion used.
    """
    path = str(path)
    if path.endswith(".csv"):
        m = read_map_csv(path, source)
        return upsample_grid(m.grid, size, source), "dense grid, bilinear upsampling"
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        pa = proposals_from_json(doc)
        m = rasterize_proposal_attention(pa, width, height, size)
        return AttentionMap(m.grid, source, True), "region proposals, weight/area rasterization"
    m = map_from_json(doc, source)
    return upsample_grid(m.grid, size, source), "dense grid, bilinear upsampling"
