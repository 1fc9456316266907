"""Per-region overlap and surface-distance metrics plus cohort statistics.

Conventions for degenerate masks:

* Dice is 1 when both masks are empty and 0 when exactly one is.
* Sensitivity is 1 when the reference is empty; specificity is 1 when the
  reference fills the grid.
* HD95 is 0 when both masks are empty and the physical grid diagonal
  ``sqrt(sum((dims * spacing)**2))`` when exactly one is.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import DimMismatch, EmptyCohort
from .volume import REGIONS, derive_region_masks, validate_labels

METRICS = ("dice", "sensitivity", "specificity", "hd95")
_METRIC_TITLES = {"dice": "Dice", "sensitivity": "Sensitivity", "specificity": "Specificity", "hd95": "HD95"}


def _pair(pred, gt):
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise DimMismatch(f"prediction {pred.shape} and reference {gt.shape} differ")
    return pred, gt


def dice(pred_mask, gt_mask) -> float:
    pred, gt = _pair(pred_mask, gt_mask)
    total = int(pred.sum()) + int(gt.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / total


def sensitivity_specificity(pred_mask, gt_mask) -> tuple[float, float]:
    pred, gt = _pair(pred_mask, gt_mask)
    tp = int(np.logical_and(pred, gt).sum())
    fn = int(gt.sum()) - tp
    fp = int(pred.sum()) - tp
    tn = gt.size - tp - fn - fp
    sens = tp / (tp + fn) if tp + fn else 1.0
    spec = tn / (tn + fp) if tn + fp else 1.0
    return sens, spec


def surface(mask) -> np.ndarray:
    """Set voxels with an unset 6-neighbour or lying on the grid boundary."""
    mask = np.asarray(mask, dtype=bool)
    structure = ndimage.generate_binary_structure(mask.ndim, 1)
    # border_value=0 erodes voxels touching the grid edge, marking them as surface
    interior = ndimage.binary_erosion(mask, structure=structure, border_value=0)
    return mask & ~interior


def grid_diagonal(shape, spacing) -> float:
    return float(math.sqrt(sum((n * s) ** 2 for n, s in zip(shape, spacing))))


def _directed(from_surface: np.ndarray, to_surface: np.ndarray, spacing) -> np.ndarray:
    """Distance from every voxel of ``from_surface`` to the nearest voxel of ``to_surface``."""
    dist = ndimage.distance_transform_edt(~to_surface, sampling=spacing)
    return dist[from_surface]


def hausdorff95(pred_mask, gt_mask, spacing=(1.0, 1.0, 1.0)) -> float:
    """Larger of the two directed 95th-percentile surface distances, in mm."""
    pred, gt = _pair(pred_mask, gt_mask)
    spacing = tuple(float(s) for s in spacing)
    has_pred, has_gt = bool(pred.any()), bool(gt.any())
    if not has_pred and not has_gt:
        return 0.0
    if has_pred != has_gt:
        return grid_diagonal(pred.shape, spacing)
    sp, sg = surface(pred), surface(gt)
    d_pg = _directed(sp, sg, spacing)
    d_gp = _directed(sg, sp, spacing)
    return float(max(np.percentile(d_pg, 95), np.percentile(d_gp, 95)))


@dataclass
class RegionMetrics:
    case_id: str
    values: dict[str, dict[str, float]] = field(default_factory=dict)  # region -> metric -> value

    def __getitem__(self, key):
        region, metric = key
        return self.values[region][metric]

    def rows(self):
        for region in REGIONS:
            for metric in METRICS:
                yield self.case_id, region, metric, self.values[region][metric]


def evaluate_masks(pred_mask, gt_mask, spacing=(1.0, 1.0, 1.0)) -> dict[str, float]:
    sens, spec = sensitivity_specificity(pred_mask, gt_mask)
    return {
        "dice": dice(pred_mask, gt_mask),
        "sensitivity": sens,
        "specificity": spec,
        "hd95": hausdorff95(pred_mask, gt_mask, spacing),
    }


def evaluate_case(pred, gt, spacing=(1.0, 1.0, 1.0), case_id: str = "") -> RegionMetrics:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimMismatch(f"prediction {pred.shape} and reference {gt.shape} differ")
    validate_labels(pred)
    validate_labels(gt)
    pm, gm = derive_region_masks(pred), derive_region_masks(gt)
    return RegionMetrics(
        case_id=case_id,
        values={region: evaluate_masks(pm[region], gm[region], spacing) for region in REGIONS},
    )


# -- cohort aggregation -------------------------------------------------------


@dataclass
class BoxStats:
    n: int
    mean: float
    std: float
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    minimum: float
    maximum: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def box_stats(values) -> BoxStats:
    """Boxplot statistics: linear-interpolated quartiles, whiskers at 1.5 IQR clamped to the data."""
    x = np.sort(np.asarray(values, dtype=np.float64))
    if x.size == 0:
        raise EmptyCohort("no values to summarise")
    q1, median, q3 = np.percentile(x, [25, 50, 75])
    iqr = q3 - q1
    low = x[x >= q1 - 1.5 * iqr].min()
    high = x[x <= q3 + 1.5 * iqr].max()
    return BoxStats(
        n=int(x.size),
        mean=float(x.mean()),
        std=float(x.std()),
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        whisker_low=float(low),
        whisker_high=float(high),
        minimum=float(x[0]),
        maximum=float(x[-1]),
    )


@dataclass
class CohortSummary:
    stats: dict[str, dict[str, BoxStats]]  # region -> metric -> stats

    def __getitem__(self, key) -> BoxStats:
        region, metric = key
        return self.stats[region][metric]

    @property
    def n(self) -> int:
        return next(iter(next(iter(self.stats.values())).values())).n

    def to_json(self) -> str:
        data = {region: {metric: s.as_dict() for metric, s in by_metric.items()} for region, by_metric in self.stats.items()}
        return json.dumps(data, indent=2, sort_keys=True) + "\n"


def aggregate(results) -> CohortSummary:
    results = list(results)
    if not results:
        raise EmptyCohort("cannot aggregate an empty cohort")
    return CohortSummary(
        stats={
            region: {metric: box_stats([r[region, metric] for r in results]) for metric in METRICS}
            for region in REGIONS
        }
    )


# -- CSV emission -------------------------------------------------------------

SUMMARY_STATISTICS = ("mean", "std", "median", "q1", "q3", "whisker_low", "whisker_high", "n")


def _fmt(value) -> str:
    return str(value) if isinstance(value, int) else f"{value:.10g}"


def write_case_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["case_id", "region", "metric", "value"])
        for r in results:
            for case_id, region, metric, value in r.rows():
                writer.writerow([case_id, region, metric, _fmt(value)])


def summary_columns() -> list[str]:
    """Dice and HD95 blocks (as in the result tables), then sensitivity and specificity."""
    order = ("dice", "hd95", "sensitivity", "specificity")
    return [f"{_METRIC_TITLES[m]}_{region}" for m in order for region in REGIONS]


def write_summary_csv(summary: CohortSummary, path) -> None:
    columns = summary_columns()
    lookup = {f"{_METRIC_TITLES[m]}_{r}": (r, m) for r in REGIONS for m in METRICS}
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["statistic"] + columns)
        for stat in SUMMARY_STATISTICS:
            row = [stat]
            for col in columns:
                row.append(_fmt(getattr(summary[lookup[col]], stat)))
            writer.writerow(row)


def read_case_csv(path) -> list[RegionMetrics]:
    by_case: dict[str, RegionMetrics] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rm = by_case.setdefault(row["case_id"], RegionMetrics(case_id=row["case_id"]))
            rm.values.setdefault(row["region"], {})[row["metric"]] = float(row["value"])
    return list(by_case.values())
