"""Depth-error and point-cloud metrics: absolute depth error, thresholded error
percentages, accuracy/completeness/overall, and precision/recall/F-score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError

DEFAULT_TDE_THRESHOLDS = (1, 2, 4, 8, 16)


@dataclass
class DepthErrorReport:
    ade: float
    tde: dict            # threshold -> percentage of pixels with |err| > threshold
    valid_count: int
    empty: bool = False


def depth_errors(pred, gt, mask=None, thresholds=DEFAULT_TDE_THRESHOLDS):
    """Mean absolute depth error and the percentage of pixels above each threshold.

    `tde(X)` uses a strict inequality (errors exactly equal to X do not count).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ParameterError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mask = np.ones(pred.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    err = np.abs(pred - gt)[mask]
    if err.size == 0:
        return DepthErrorReport(0.0, {x: 0.0 for x in thresholds}, 0, empty=True)
    tde = {x: 100.0 * float(np.count_nonzero(err > x)) / err.size for x in thresholds}
    return DepthErrorReport(float(err.mean()), tde, int(err.size))


# ---------------------------------------------------------------------------
# nearest neighbors on a uniform grid (radius-capped queries)
# ---------------------------------------------------------------------------

class GridIndex:
    """Uniform-grid nearest-neighbor index with a fixed search radius.

    Cell size equals the radius, so every point within the radius of a query
    lies in one of the 27 cells around the query's cell; anything farther is
    reported as not found, which is exactly the capped-metric semantics.
    """

    def __init__(self, points, radius):
        if radius <= 0:
            raise ParameterError(f"search radius must be > 0, got {radius}")
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.radius = float(radius)
        keys = np.floor(self.points / self.radius).astype(np.int64)
        self.cells = {}
        order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
        sorted_keys = keys[order]
        if len(order):
            change = np.nonzero(np.any(np.diff(sorted_keys, axis=0) != 0, axis=1))[0] + 1
            starts = np.concatenate([[0], change, [len(order)]])
            for a, b in zip(starts[:-1], starts[1:]):
                self.cells[tuple(sorted_keys[a])] = order[a:b]

    def nearest(self, queries, chunk=128):
        """(distances, found) per query; distance is exact when within radius."""
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(queries)
        dist = np.full(n, np.inf)
        found = np.zeros(n, dtype=bool)
        if n == 0 or len(self.points) == 0:
            return dist, found
        qkeys = np.floor(queries / self.radius).astype(np.int64)
        uniq, inverse = np.unique(qkeys, axis=0, return_inverse=True)
        px, py, pz = self.points.T
        for ui, key in enumerate(uniq):
            cand = [
                self.cells.get((key[0] + dx, key[1] + dy, key[2] + dz))
                for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)
            ]
            cand = [c for c in cand if c is not None]
            qi = np.nonzero(inverse == ui)[0]
            if not cand:
                continue
            idx = np.concatenate(cand)
            cx, cy, cz = px[idx], py[idx], pz[idx]
            for a in range(0, len(qi), chunk):
                block = qi[a:a + chunk]
                q = queries[block]
                d2 = (q[:, 0:1] - cx[None]) ** 2
                d2 += (q[:, 1:2] - cy[None]) ** 2
                d2 += (q[:, 2:3] - cz[None]) ** 2
                best = np.sqrt(d2.min(axis=1))
                dist[block] = best
                found[block] = best <= self.radius
        dist[~found] = np.inf
        return dist, found


def nearest_distances(queries, points, radius):
    return GridIndex(points, radius).nearest(queries)


@dataclass
class CloudDistanceReport:
    acc: float       # mean recon -> GT distance, capped
    comp: float      # mean GT -> recon distance, capped
    overall: float
    outlier_cap: float
    acc_used: int    # points within the cap
    comp_used: int


def cloud_distance_metrics(recon, gt, outlier_cap=20.0):
    """Mean nearest-neighbor distances both ways; distances above the cap are
    excluded (the cap also bounds the search)."""
    recon = np.asarray(recon, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(recon) == 0 or len(gt) == 0:
        raise ParameterError("cloud metrics need non-empty clouds")
    d_rg, f_rg = nearest_distances(recon, gt, outlier_cap)
    d_gr, f_gr = nearest_distances(gt, recon, outlier_cap)
    acc = float(d_rg[f_rg].mean()) if np.any(f_rg) else 0.0
    comp = float(d_gr[f_gr].mean()) if np.any(f_gr) else 0.0
    return CloudDistanceReport(acc, comp, (acc + comp) / 2.0, outlier_cap,
                               int(f_rg.sum()), int(f_gr.sum()))


@dataclass
class ThresholdReport:
    precision: float
    recall: float
    fscore: float
    tau: float


def threshold_metrics(recon, gt, tau):
    """Percentage-based metrics at distance threshold tau (strict inequality)."""
    if tau <= 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    recon = np.asarray(recon, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 3)
    if len(recon) == 0 or len(gt) == 0:
        raise ParameterError("threshold metrics need non-empty clouds")
    d_rg, _ = nearest_distances(recon, gt, tau)
    d_gr, _ = nearest_distances(gt, recon, tau)
    precision = 100.0 * float(np.count_nonzero(d_rg < tau)) / len(recon)
    recall = 100.0 * float(np.count_nonzero(d_gr < tau)) / len(gt)
    fscore = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ThresholdReport(precision, recall, fscore, float(tau))


def scene_mean(values):
    """Arithmetic mean of per-scene scores."""
    values = np.asarray(list(values), dtype=np.float64)
    if values.size == 0:
        raise ParameterError("scene_mean of no scenes")
    return float(values.mean())


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------

def depth_report_csv(report):
    header = ["ade"] + [f"tde({x})" for x in sorted(report.tde)] + ["valid_pixels"]
    row = [f"{report.ade:.6f}"] + [f"{report.tde[x]:.4f}" for x in sorted(report.tde)]
    row.append(str(report.valid_count))
    return ",".join(header) + "\n" + ",".join(row) + "\n"


def depth_report_text(report):
    cols = ["ade"] + [f"tde({x})" for x in sorted(report.tde)]
    vals = [f"{report.ade:.4f}"] + [f"{report.tde[x]:.2f}" for x in sorted(report.tde)]
    widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
    line1 = "  ".join(c.rjust(w) for c, w in zip(cols, widths))
    line2 = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
    note = "  (no valid pixels)" if report.empty else ""
    return line1 + "\n" + line2 + note + "\n"


def cloud_report_csv(dist_report, thr_report=None):
    header = ["acc", "comp", "overall", "outlier_cap"]
    row = [f"{dist_report.acc:.6f}", f"{dist_report.comp:.6f}",
           f"{dist_report.overall:.6f}", f"{dist_report.outlier_cap:g}"]
    if thr_report is not None:
        header += ["precision", "recall", "fscore", "tau"]
        row += [f"{thr_report.precision:.4f}", f"{thr_report.recall:.4f}",
                f"{thr_report.fscore:.4f}", f"{thr_report.tau:g}"]
    return ",".join(header) + "\n" + ",".join(row) + "\n"


def cloud_report_text(dist_report, thr_report=None):
    lines = [
        f"acc     {dist_report.acc:10.6f}",
        f"comp    {dist_report.comp:10.6f}",
        f"overall {dist_report.overall:10.6f}",
    ]
    if thr_report is not None:
        lines += [
            f"precision {thr_report.precision:8.4f}  (tau {thr_report.tau:g})",
            f"recall    {thr_report.recall:8.4f}",
            f"f-score   {thr_report.fscore:8.4f}",
        ]
    return "\n".join(lines) + "\n"
