"""Empirical evidence for or against a regime verdict.

Almost-sure limits cannot be tested from a finite horizon, so the ensemble
is reduced to finite-horizon proxies: suprema over dyadic tail segments
(limsup proxy), trailing-window infima (liminf proxy), pathwise time-averages
of ||X||^2, and the ensemble mean-square curve.  `compare` applies simple,
explainable decision rules and reports Consistent / Inconsistent /
Inconclusive — it never forces agreement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulate import PathEnsemble

DECREASING = "Decreasing"
FLAT = "Flat"
INCREASING = "Increasing"

CONSISTENT = "Consistent"
INCONSISTENT = "Inconsistent"
INCONCLUSIVE = "Inconclusive"


# ---------------------------------------------------------------------------
# per-path reductions
# ---------------------------------------------------------------------------

def dyadic_checkpoints(t_end: float) -> np.ndarray:
    """Default limsup-proxy checkpoints T/16, T/8, T/4, T/2."""
    return t_end / np.array([16.0, 8.0, 4.0, 2.0])


def tail_sup(series: np.ndarray, times: np.ndarray, checkpoints) -> np.ndarray:
    """Suprema of the series over [checkpoint, T_end] per checkpoint.

    The series may be a single path (1-d) or a (paths, time) stack; the
    checkpoint axis is appended last.
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    cps = np.atleast_1d(np.asarray(checkpoints, dtype=float))
    if np.any(cps < times[0]) or np.any(cps > times[-1]):
        raise ValueError("checkpoints must lie within the horizon")
    out = np.empty(series.shape[:-1] + (len(cps),))
    for j, c in enumerate(cps):
        i = int(np.searchsorted(times, c - 1e-12 * max(1.0, abs(c))))
        out[..., j] = np.max(series[..., i:], axis=-1)
    return out


def window_inf(series: np.ndarray, times: np.ndarray, window: float):
    """Infima over trailing windows [t - window, t].

    Returns (window_end_times, infima); infima share the leading shape of
    the series with the window-end axis last.
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if window <= 0 or window > times[-1] - times[0]:
        raise ValueError("window must be positive and fit in the horizon")
    dt = times[1] - times[0]
    w = max(int(round(window / dt)), 1)
    sw = np.lib.stride_tricks.sliding_window_view(series, w + 1, axis=-1)
    return times[w:], np.min(sw, axis=-1)


def avg_sq(series: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Trapezoid time-average (1/t) int_0^t series(s)^2 ds on the grid.

    The t = 0 entry is the squared initial value (continuity convention).
    """
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    gaps = np.diff(times)
    if not np.allclose(gaps, gaps[0], rtol=1e-9, atol=0.0):
        raise ValueError("grid must be uniform")
    sq = series ** 2
    panels = 0.5 * gaps[0] * (sq[..., 1:] + sq[..., :-1])
    cum = np.cumsum(panels, axis=-1)
    out = np.empty_like(sq)
    out[..., 0] = sq[..., 0]
    out[..., 1:] = cum / times[1:]
    return out


def ensemble_mean_sq(ensemble: PathEnsemble):
    """E||X(t)||^2 curve with per-time standard errors; (mean, stderr)."""
    sq = ensemble.norms ** 2
    mean = np.mean(sq, axis=0)
    if ensemble.n_paths > 1:
        se = np.std(sq, axis=0, ddof=1) / math.sqrt(ensemble.n_paths)
    else:
        se = np.zeros_like(mean)
    return mean, se


# ---------------------------------------------------------------------------
# trend classification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrendResult:
    label: str          # Decreasing | Flat | Increasing
    slope: float        # least-squares slope on the log-time axis
    stderr: float


def trend(times, values) -> TrendResult:
    """Sign of the least-squares slope of values against log(t), at 2 sigma."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    keep = t > 0
    t, v = np.log(t[keep]), v[keep]
    if len(t) < 3:
        raise ValueError("trend needs at least three positive-time points")
    X = np.column_stack([np.ones_like(t), t])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    resid = v - X @ coef
    dof = len(t) - 2
    s2 = float(resid @ resid) / dof if dof > 0 else 0.0
    var_slope = s2 / float(np.sum((t - t.mean()) ** 2))
    se = math.sqrt(max(var_slope, 0.0))
    slope = float(coef[1])
    if slope > 2.0 * se:
        label = INCREASING
    elif slope < -2.0 * se:
        label = DECREASING
    else:
        label = FLAT
    return TrendResult(label=label, slope=slope, stderr=se)


# ---------------------------------------------------------------------------
# verdict comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CompareThresholds:
    stable_final_sup: float = 0.05   # StableAS: median tail sup at T/2
    band_ratio_lo: float = 0.5       # bounded regime: checkpoint band
    band_ratio_hi: float = 2.0
    liminf_fraction: float = 0.9     # share of paths with small window inf
    liminf_ratio: float = 0.1        # "small" = below this times band median
    min_grid_points: int = 64        # fewer -> Inconclusive outright


@dataclass(frozen=True)
class RegimeEvidence:
    regime: str
    agreement: str
    checkpoints: np.ndarray
    tail_sups: np.ndarray            # (paths, n_checkpoints)
    running_max_at: np.ndarray       # (paths, n_checkpoints)
    window_inf_final: np.ndarray     # (paths,)
    avg_sq_half: np.ndarray          # (paths,) time-average at T/2
    avg_sq_final: np.ndarray         # (paths,)
    mean_sq: np.ndarray              # ensemble curve
    mean_sq_se: np.ndarray
    trends: dict                     # name -> TrendResult
    notes: tuple = ()

    def summary(self) -> dict:
        med = lambda a: float(np.median(a))
        return {
            "regime": self.regime,
            "agreement": self.agreement,
            "checkpoints": [float(c) for c in self.checkpoints],
            "tail_sup_median": [med(self.tail_sups[:, j])
                                for j in range(self.tail_sups.shape[1])],
            "running_max_median": [med(self.running_max_at[:, j])
                                   for j in range(self.running_max_at.shape[1])],
            "window_inf_final_median": med(self.window_inf_final),
            "avg_sq_half_median": med(self.avg_sq_half),
            "avg_sq_final_median": med(self.avg_sq_final),
            "trends": {k: {"label": v.label, "slope": v.slope,
                           "stderr": v.stderr}
                       for k, v in self.trends.items()},
            "notes": list(self.notes),
        }


def _at_time(series: np.ndarray, times: np.ndarray, t: float) -> np.ndarray:
    i = int(np.searchsorted(times, t - 1e-12 * max(1.0, abs(t))))
    i = min(i, series.shape[-1] - 1)
    return series[..., i]


def compare(verdict, ensemble: PathEnsemble, checkpoints=None,
            window: float = None,
            thresholds: CompareThresholds = CompareThresholds()) -> RegimeEvidence:
    """Weigh ensemble statistics against a regime verdict.

    Decision rules: StableAS expects a decreasing tail-sup trend and a small
    final tail sup; BoundedNonConvergent expects a stable tail-sup band with
    window infima collapsing toward zero and a decreasing time-average;
    Unbounded expects running maxima increasing across checkpoints, plus the
    collapse statistics when the noise is fading.  Mixed signals yield
    Inconclusive, contradictions Inconsistent.
    """
    times = ensemble.times
    T = float(times[-1])
    cps = dyadic_checkpoints(T) if checkpoints is None else \
        np.asarray(checkpoints, dtype=float)
    win = T / 8.0 if window is None else float(window)

    notes = []
    norms = ensemble.norms
    sups = tail_sup(norms, times, cps)
    rmax = np.stack([_at_time(ensemble.running_sup, times, c) for c in cps],
                    axis=-1)
    _, winf = window_inf(norms, times, win)
    winf_final = winf[..., -1]
    aver = ensemble.running_avg_sq
    aver_half = _at_time(aver, times, T / 2.0)
    aver_final = aver[..., -1]
    msq, msq_se = ensemble_mean_sq(ensemble)

    sup_med = np.median(sups, axis=0)
    rmax_med = np.median(rmax, axis=0)
    # positive magnitude series are compared on a log scale so that decay
    # over many orders of magnitude registers as a trend
    def _log_trend(vals):
        v = np.asarray(vals, dtype=float)
        res = trend(cps, np.log(np.maximum(v, 1e-300)))
        # a monotone series that reaches exact zero has decayed past the
        # smallest positive double; the repeated floor values would otherwise
        # inflate the regression error and mask the collapse
        if res.label == FLAT and v[0] > 0 and v[-1] == 0.0 and \
                np.all(np.diff(v) <= 0):
            res = TrendResult(label=DECREASING, slope=res.slope,
                              stderr=res.stderr)
        return res

    trends = {
        "tail_sup_median": _log_trend(sup_med),
        "running_max_median": _log_trend(rmax_med),
        "mean_sq_checkpoints": _log_trend(
            [float(_at_time(msq, times, c)) for c in cps]),
    }

    regime = verdict.regime

    def build(agreement):
        return RegimeEvidence(
            regime=regime, agreement=agreement, checkpoints=cps,
            tail_sups=sups, running_max_at=rmax, window_inf_final=winf_final,
            avg_sq_half=aver_half, avg_sq_final=aver_final,
            mean_sq=msq, mean_sq_se=msq_se, trends=trends,
            notes=tuple(notes))

    if len(times) < thresholds.min_grid_points:
        notes.append("horizon too short for trend evidence")
        return build(INCONCLUSIVE)
    if regime == "Undecided":
        notes.append("no prediction to verify")
        return build(INCONCLUSIVE)

    if regime == "StableAS":
        first_med = float(np.median(sups[:, 0]))
        final_med = float(np.median(sups[:, -1]))
        t_lab = trends["tail_sup_median"].label
        if t_lab == DECREASING and final_med < thresholds.stable_final_sup:
            return build(CONSISTENT)
        ratio = final_med / first_med if first_med > 0 else 0.0
        if final_med >= 10.0 * thresholds.stable_final_sup and ratio > 0.5:
            notes.append(f"tail sup median {final_med:.3g} stays large "
                         f"(ratio {ratio:.3g} across checkpoints)")
            return build(INCONSISTENT)
        notes.append("decay visible but not conclusive at this horizon")
        return build(INCONCLUSIVE)

    if regime == "BoundedNonConvergent":
        band = float(np.median(sups[:, 0]))
        ratio = float(np.median(sups[:, -1])) / band if band > 0 else math.inf
        band_ok = thresholds.band_ratio_lo <= ratio <= thresholds.band_ratio_hi
        frac = float(np.mean(winf_final < thresholds.liminf_ratio * band)) \
            if band > 0 else 0.0
        liminf_ok = frac >= thresholds.liminf_fraction
        avg_ok = float(np.median(aver_final)) < float(np.median(aver_half))
        if band_ok and liminf_ok and avg_ok:
            return build(CONSISTENT)
        if ratio > 2.0 * thresholds.band_ratio_hi or \
                ratio < 0.5 * thresholds.band_ratio_lo:
            notes.append(f"tail sup band ratio {ratio:.3g} far outside the "
                         f"stable band")
            return build(INCONSISTENT)
        notes.append(f"band ratio {ratio:.3g}, liminf fraction {frac:.3g}, "
                     f"avg_sq decrease {avg_ok}")
        return build(INCONCLUSIVE)

    if regime == "Unbounded":
        growing = bool(np.all(np.diff(rmax_med) > 0))
        extras_ok = True
        if getattr(verdict, "fading_noise", False):
            band = float(np.median(sups[:, 0]))
            frac = float(np.mean(winf_final < thresholds.liminf_ratio * band)) \
                if band > 0 else 0.0
            extras_ok = (frac >= thresholds.liminf_fraction and
                         float(np.median(aver_final)) <
                         float(np.median(aver_half)))
            if not extras_ok:
                notes.append("fading-noise collapse statistics missing")
        if growing and extras_ok:
            return build(CONSISTENT)
        if trends["running_max_median"].label == DECREASING:
            notes.append("running maxima decreasing against an unbounded "
                         "prediction")
            return build(INCONSISTENT)
        notes.append("running maxima not strictly increasing across all "
                     "checkpoints")
        return build(INCONCLUSIVE)

    raise ValueError(f"unknown regime {regime!r}")
