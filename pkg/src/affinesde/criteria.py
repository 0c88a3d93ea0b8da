"""Classification criteria for the almost-sure asymptotic regime.

The regime of dX = A X dt + sigma(t) dB is decided by the finiteness of the
window sums

    S_h(eps)  = sum_n  1 - Phi(eps / theta(n)),
    S_h'(eps) = sum_n  theta(n) * exp(-eps^2 / (2 theta(n)^2)),

with theta(n)^2 the window energy of ||sigma||_F^2, and of the equivalent
integral criterion I_c(eps).  Finiteness of an infinite sum cannot be decided
from finitely many samples, so rulings are analytic per built-in envelope
family (comparison and integral tests) and Undecided for raw tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad, quad_vec
from scipy.special import log_ndtr, ndtr

from . import model
from .linalg import monodromy, spectral_abscissa
from .model import (CallableDrift, CallableSigma, ConstantDrift, ConstantSigma,
                    DiffusionSpec, EnvelopePattern, ExpDecay, LogGrow,
                    LogPower, PeriodicDrift, PowerLaw, TableSigma,
                    frobenius_sq, interval_integrals, sigma_fro_sq)

FINITE = "finite"
INFINITE = "infinite"
UNDECIDED = "undecided"

STABLE = "StableAS"
BOUNDED = "BoundedNonConvergent"
UNBOUNDED = "Unbounded"
REGIME_UNDECIDED = "Undecided"

_SQRT2 = math.sqrt(2.0)


# ---------------------------------------------------------------------------
# elementary terms
# ---------------------------------------------------------------------------

def mills_tail(x: float) -> float:
    """Upper normal tail 1 - Phi(x), with Phi(-inf)=0 and Phi(inf)=1.

    Computed from the complementary error function; beyond x ~ 37 the result
    leaves the normal double range and is continued through the log-tail.
    """
    x = float(x)
    if math.isnan(x):
        raise ValueError("x must not be NaN")
    if x == math.inf:
        return 0.0
    if x == -math.inf:
        return 1.0
    if x > 37.0:
        return float(math.exp(log_ndtr(-x)))
    return float(ndtr(-x))


def term_S(eps: float, theta_sq: float) -> float:
    """Single term 1 - Phi(eps / theta(n)); zero when theta^2 = 0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if theta_sq < 0:
        raise ValueError("theta_sq must be >= 0")
    if theta_sq == 0.0:
        return 0.0
    return mills_tail(eps / math.sqrt(theta_sq))


def term_Sprime(eps: float, theta_sq: float) -> float:
    """Single term theta(n) * exp(-eps^2 / (2 theta(n)^2)); zero at theta^2=0."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if theta_sq < 0:
        raise ValueError("theta_sq must be >= 0")
    if theta_sq == 0.0:
        return 0.0
    return math.sqrt(theta_sq) * math.exp(-eps * eps / (2.0 * theta_sq))


def _terms_Sprime(eps: float, theta_sq: np.ndarray) -> np.ndarray:
    theta_sq = np.asarray(theta_sq, dtype=float)
    out = np.zeros_like(theta_sq)
    pos = theta_sq > 0.0
    with np.errstate(under="ignore", over="ignore"):
        out[pos] = np.sqrt(theta_sq[pos]) * np.exp(-eps * eps / (2.0 * theta_sq[pos]))
    return out


# ---------------------------------------------------------------------------
# asymptotic profile of a diffusion spec
# ---------------------------------------------------------------------------

# profile kinds
_ZERO = "zero"                 # sigma identically zero
_L2 = "l2"                     # square integrable
_SLOG_ZERO = "slog_zero"       # ||sigma||^2 log t -> 0 but not square integrable
_LOG_THRESHOLD = "log_threshold"  # ||sigma||^2 log t -> L in (0, inf)
_BOUNDED_BELOW = "bounded_below"  # window energies bounded away from zero
_UNKNOWN = "unknown"           # table / callable: no analytic ruling


@dataclass(frozen=True)
class _Profile:
    kind: str
    fading: Optional[bool]
    # L = lim ||sigma(t)||^2 log t where meaningful (log_threshold only)
    L: float = 0.0
    envelope: object = None
    fro_sq: float = 0.0     # squared norm of the pattern / constant matrix


def _analyze(spec: DiffusionSpec, pattern_norm_sq: Optional[float] = None) -> _Profile:
    """Asymptotic class of t -> ||sigma(t)||^2 for the built-in forms.

    pattern_norm_sq overrides the squared pattern norm; used to re-run the
    analysis under a norm other than Frobenius.
    """
    f = spec.form
    if isinstance(f, ConstantSigma):
        F = frobenius_sq(f.values) if pattern_norm_sq is None else pattern_norm_sq
        if F == 0.0:
            return _Profile(_ZERO, fading=True)
        return _Profile(_BOUNDED_BELOW, fading=False, L=math.inf, fro_sq=F)
    if isinstance(f, EnvelopePattern):
        F = frobenius_sq(f.pattern) if pattern_norm_sq is None else pattern_norm_sq
        env = f.envelope
        if F == 0.0:
            return _Profile(_ZERO, fading=True)
        if isinstance(env, ExpDecay):
            if env.scale == 0.0:
                return _Profile(_ZERO, fading=True)
            return _Profile(_L2, fading=True, envelope=env, fro_sq=F)
        if isinstance(env, PowerLaw):
            if env.scale == 0.0:
                return _Profile(_ZERO, fading=True)
            a = env.exponent
            if 2.0 * a < -1.0:
                return _Profile(_L2, fading=True, envelope=env, fro_sq=F)
            if a < 0.0:
                return _Profile(_SLOG_ZERO, fading=True, envelope=env, fro_sq=F)
            return _Profile(_BOUNDED_BELOW, fading=(False if a >= 0 else True),
                            L=math.inf, envelope=env, fro_sq=F)
        if isinstance(env, LogPower):
            if env.gamma == 0.0:
                return _Profile(_ZERO, fading=True)
            return _Profile(_LOG_THRESHOLD, fading=True, L=env.gamma * F,
                            envelope=env, fro_sq=F)
        if isinstance(env, LogGrow):
            if env.scale == 0.0:
                return _Profile(_ZERO, fading=True)
            return _Profile(_BOUNDED_BELOW, fading=False, L=math.inf,
                            envelope=env, fro_sq=F)
        raise ValueError(f"unknown envelope {type(env).__name__}")
    if isinstance(f, TableSigma):
        # hold-last extrapolation makes the far tail exactly constant, but by
        # design tables never receive a Finite/Infinite ruling
        return _Profile(_UNKNOWN, fading=None)
    if isinstance(f, CallableSigma):
        return _Profile(_UNKNOWN, fading=None)
    raise TypeError(f"unknown diffusion form {type(f).__name__}")


# ---------------------------------------------------------------------------
# finiteness rulings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FinitenessRuling:
    status: str                       # finite | infinite | undecided
    eps: float
    partial_value: float
    n_terms: int
    tail_bound: Optional[float] = None   # present iff status == finite
    witness: Optional[str] = None        # present iff status == infinite

    @property
    def total_upper(self) -> Optional[float]:
        if self.status != FINITE or self.tail_bound is None:
            return None
        return self.partial_value + self.tail_bound


def partial_sum_Sprime(spec: DiffusionSpec, eps: float, h: float, N: int,
                       tol: float = 1e-10):
    """Partial sum over windows n = 1..N; returns (value, per-term array)."""
    if eps <= 0 or h <= 0 or N < 1:
        raise ValueError("need eps > 0, h > 0, N >= 1")
    edges = h * np.arange(1, N + 2, dtype=float)
    theta_sq = interval_integrals(spec, edges[:-1], edges[1:], tol)
    terms = _terms_Sprime(eps, theta_sq)
    return float(np.sum(terms)), terms


def _exp_minus_power_bound(eps: float, base: float, q: float):
    """Pick m so that  x e^{-eps^2/(2x^2)} <= m! (2/eps^2)^m base^{m+1/2} n^{-q(m+1/2)}
    is summable (exponent > 1); returns (coefficient, exponent p)."""
    m = 1
    while q * (m + 0.5) <= 1.25:
        m += 1
    coeff = math.factorial(m) * (2.0 / (eps * eps)) ** m * base ** (m + 0.5)
    return coeff, q * (m + 0.5)


def _sprime_tail_bound(profile: _Profile, eps: float, h: float, N: int) -> float:
    """Analytic upper bound on sum_{n > N} of the S' terms."""
    env, F = profile.envelope, profile.fro_sq
    if profile.kind == _ZERO:
        return 0.0
    if isinstance(env, ExpDecay):
        # theta^2(n) <= k^2 F h exp(-2 lam n h): geometric in n
        lam, B = env.rate, env.scale ** 2 * F * h
        # x e^{-eps^2/(2x^2)} <= (2/(e eps^2)) x^3
        ratio = math.exp(-3.0 * lam * h)
        lead = B ** 1.5 * math.exp(-3.0 * lam * h * (N + 1))
        return 2.0 / (math.e * eps * eps) * lead / (1.0 - ratio)
    if isinstance(env, PowerLaw) and env.exponent < 0:
        # theta^2(n) <= k^2 F h^(1+2a) n^(2a)
        a = env.exponent
        B = env.scale ** 2 * F * h ** (1.0 + 2.0 * a)
        coeff, p = _exp_minus_power_bound(eps, B, -2.0 * a)
        return coeff * N ** (1.0 - p) / (p - 1.0)
    if isinstance(env, LogPower):
        # theta^2(n) <= L_h / ln(e + n h) with L_h = h gamma F
        Lh = h * env.gamma * F
        p = eps * eps / (2.0 * Lh)
        if p <= 1.0:
            raise ValueError("no finite tail at or below the threshold")
        lead = math.sqrt(Lh / math.log(math.e + N * h))
        return lead * (math.e + N * h) ** (1.0 - p) / ((p - 1.0) * h)
    raise ValueError(f"no tail bound for profile {profile.kind}")


def decide_Sprime(spec: DiffusionSpec, eps: float, h: float,
                  n_terms: int = 512, tol: float = 1e-10) -> FinitenessRuling:
    """Analytic finiteness ruling for S_h'(eps), with a computed partial sum.

    Built-in envelope families get Finite (with tail bound) or Infinite (with
    a divergence witness); tables and callables are Undecided.
    """
    if eps <= 0 or h <= 0:
        raise ValueError("need eps > 0 and h > 0")
    profile = _analyze(spec)
    partial, _ = partial_sum_Sprime(spec, eps, h, n_terms, tol)

    if profile.kind == _ZERO:
        return FinitenessRuling(FINITE, eps, partial, n_terms, tail_bound=0.0)
    if profile.kind in (_L2, _SLOG_ZERO):
        tail = _sprime_tail_bound(profile, eps, h, n_terms)
        return FinitenessRuling(FINITE, eps, partial, n_terms, tail_bound=tail)
    if profile.kind == _LOG_THRESHOLD:
        Lh = h * profile.L
        p = eps * eps / (2.0 * Lh)
        if p > 1.0:
            tail = _sprime_tail_bound(profile, eps, h, n_terms)
            return FinitenessRuling(FINITE, eps, partial, n_terms, tail_bound=tail)
        witness = (f"terms >= sqrt(L_h/ln(e+(n+1)h)) * (e+(n+1)h)^(-p) with "
                   f"p = eps^2/(2 L_h) = {p:.6g} <= 1, L_h = {Lh:.6g}; the "
                   f"comparison series diverges by the integral test")
        return FinitenessRuling(INFINITE, eps, partial, n_terms, witness=witness)
    if profile.kind == _BOUNDED_BELOW:
        b = _window_floor(spec, h, tol)
        witness = (f"window energies are bounded below by {b:.6g} > 0, so each "
                   f"term is >= {term_Sprime(eps, b):.6g} > 0")
        return FinitenessRuling(INFINITE, eps, partial, n_terms, witness=witness)
    return FinitenessRuling(UNDECIDED, eps, partial, n_terms)


def _window_floor(spec: DiffusionSpec, h: float, tol: float) -> float:
    """Lower bound for theta^2(n), n >= 1, for non-fading built-in forms."""
    f = spec.form
    if isinstance(f, ConstantSigma):
        return frobenius_sq(f.values) * h
    # non-decreasing envelopes: first window is the smallest
    return float(interval_integrals(spec, [h], [2.0 * h], tol)[0])


# ---------------------------------------------------------------------------
# integral criterion
# ---------------------------------------------------------------------------

def integral_I(spec: DiffusionSpec, eps: float, c: float, t_max: float,
               tol: float = 1e-10) -> float:
    """Partial integral of I_c(eps) over [0, t_max].

    Integrand varsigma_c(t) * exp(-eps^2 / (2 varsigma_c(t)^2)) with the
    zero-energy indicator convention.
    """
    if eps <= 0 or c <= 0 or t_max <= 0:
        raise ValueError("need eps, c, t_max > 0")

    def g(t):
        v = model.running_intensity(spec, c, float(t), tol)
        return term_Sprime(eps, v)

    val, err = quad(g, 0.0, t_max, epsabs=tol * max(1.0, t_max), epsrel=1e-9,
                    limit=400)
    return float(max(val, 0.0))


def _I_tail_bound(profile: _Profile, eps: float, c: float, T: float) -> float:
    """Analytic upper bound on the integral over (T, inf)."""
    env, F = profile.envelope, profile.fro_sq
    if profile.kind == _ZERO:
        return 0.0
    if isinstance(env, ExpDecay):
        lam, B = env.rate, env.scale ** 2 * F * c
        # integrand <= (2/(e eps^2)) varsigma^3, varsigma^2(t) <= B exp(-2 lam t)
        return 2.0 / (math.e * eps * eps) * B ** 1.5 * math.exp(-3.0 * lam * T) / (3.0 * lam)
    if isinstance(env, PowerLaw) and env.exponent < 0:
        a = env.exponent
        B = env.scale ** 2 * F * c
        # varsigma^2(t) <= B (1+t)^(2a): same m-trick as the sum
        coeff, p = _exp_minus_power_bound(eps, B, -2.0 * a)
        return coeff * (1.0 + T) ** (1.0 - p) / (p - 1.0)
    if isinstance(env, LogPower):
        Lc = c * env.gamma * F
        p = eps * eps / (2.0 * Lc)
        if p <= 1.0:
            raise ValueError("no finite tail at or below the threshold")
        lead = math.sqrt(Lc / math.log(math.e + T))
        return lead * (math.e + T) ** (1.0 - p) / (p - 1.0)
    raise ValueError(f"no tail bound for profile {profile.kind}")


def decide_I(spec: DiffusionSpec, eps: float, c: float,
             t_max: float = 256.0, tol: float = 1e-8) -> FinitenessRuling:
    """Analytic finiteness ruling for I_c(eps); mirrors decide_Sprime.

    The trichotomy class always agrees with the window-sum criterion (same
    comparison tests on the same envelope asymptotics).
    """
    if eps <= 0 or c <= 0:
        raise ValueError("need eps > 0 and c > 0")
    profile = _analyze(spec)
    partial = integral_I(spec, eps, c, t_max, tol)

    if profile.kind == _ZERO:
        return FinitenessRuling(FINITE, eps, partial, 0, tail_bound=0.0)
    if profile.kind in (_L2, _SLOG_ZERO):
        tail = _I_tail_bound(profile, eps, c, t_max)
        return FinitenessRuling(FINITE, eps, partial, 0, tail_bound=tail)
    if profile.kind == _LOG_THRESHOLD:
        Lc = c * profile.L
        p = eps * eps / (2.0 * Lc)
        if p > 1.0:
            tail = _I_tail_bound(profile, eps, c, t_max)
            return FinitenessRuling(FINITE, eps, partial, 0, tail_bound=tail)
        witness = (f"integrand >= sqrt(L_c/ln(e+t+c)) * (e+t+c)^(-p) with "
                   f"p = eps^2/(2 L_c) = {p:.6g} <= 1, L_c = {Lc:.6g}; the "
                   f"comparison integral diverges")
        return FinitenessRuling(INFINITE, eps, partial, 0, witness=witness)
    if profile.kind == _BOUNDED_BELOW:
        b = model.running_intensity(spec, c, c, tol)
        witness = (f"running energies are bounded below by {b:.6g} > 0, so the "
                   f"integrand is >= {term_Sprime(eps, b):.6g} > 0")
        return FinitenessRuling(INFINITE, eps, partial, 0, witness=witness)
    return FinitenessRuling(UNDECIDED, eps, partial, 0)


# ---------------------------------------------------------------------------
# general grids and row-wise sums
# ---------------------------------------------------------------------------

def _validate_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or len(g) < 2:
        raise ValueError("grid needs at least two points")
    if g[0] != 0.0:
        raise ValueError("grid must start at t0 = 0")
    gaps = np.diff(g)
    if np.any(gaps <= 0):
        raise ValueError("grid must be strictly increasing")
    return g


def sum_general_grid(spec: DiffusionSpec, eps: float, grid,
                     alpha: Optional[float] = None, beta: Optional[float] = None,
                     tol: float = 1e-10) -> float:
    """Partial sum of 1 - Phi(eps / theta(n)) over a general grid.

    The grid must start at zero with spacings inside [alpha, beta] when those
    bounds are given.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = _validate_grid(grid)
    gaps = np.diff(g)
    if alpha is not None and np.any(gaps < alpha - 1e-12):
        raise ValueError("grid spacing below alpha")
    if beta is not None and np.any(gaps > beta + 1e-12):
        raise ValueError("grid spacing above beta")
    theta_sq = interval_integrals(spec, g[:-1], g[1:], tol)
    return float(sum(term_S(eps, t2) for t2 in theta_sq))


def row_interval_integrals(spec: DiffusionSpec, left, right,
                           tol: float = 1e-10) -> np.ndarray:
    """Row-wise energies int sum_j sigma_ij^2 per interval; shape (N, d)."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    widths = right - left

    def integrand(u):
        pts = left + u * widths
        rows = np.stack([model.sigma_row_sq(spec, float(t)) for t in pts])
        return widths[:, None] * rows

    res, err = quad_vec(integrand, 0.0, 1.0, epsabs=tol, epsrel=0.0, norm="max")
    if err > tol * 1.001:
        raise model.QuadratureError(f"row quadrature error {err:.3e} > {tol:.3e}")
    return np.maximum(res, 0.0)


def rowwise_sum_S1(spec: DiffusionSpec, eps: float, grid,
                   tol: float = 1e-10) -> float:
    """Partial sum of sum_i (1 - Phi(eps / theta_i(n))) over a general grid."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = _validate_grid(grid)
    theta_i_sq = row_interval_integrals(spec, g[:-1], g[1:], tol)
    return float(sum(term_S(eps, t2) for t2 in theta_i_sq.ravel()))


# ---------------------------------------------------------------------------
# extremal time sequences
# ---------------------------------------------------------------------------

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f: Callable[[float], float], a: float, b: float,
                iters: int = 60) -> float:
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        if f1 <= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = f(x2)
    return 0.5 * (a + b)


def _leftmost_extremum(f: Callable[[float], float], a: float, b: float,
                       mode: str, n_scan: int = 1024) -> float:
    """Leftmost minimiser/maximiser on [a, b]: dense scan plus local refine."""
    xs = np.linspace(a, b, n_scan)
    ys = np.array([f(x) for x in xs])
    if mode == "max":
        ys = -ys
    i = int(np.argmin(ys))
    if 0 < i < n_scan - 1 and ys[i - 1] > ys[i] < ys[i + 1]:
        g = (lambda x: -f(x)) if mode == "max" else f
        return _golden_min(g, xs[i - 1], xs[i + 1])
    return float(xs[i])


def build_min_sequence(integrand: Callable[[float], float], h: float,
                       n_max: int) -> np.ndarray:
    """t_0 = 0 and t_{n+1} the leftmost minimiser on [t_n + h, t_n + 2h].

    Spacing is guaranteed to lie in [h, 2h].
    """
    if h <= 0 or n_max < 1:
        raise ValueError("need h > 0 and n_max >= 1")
    ts = [0.0]
    for _ in range(n_max):
        a = ts[-1] + h
        ts.append(_leftmost_extremum(integrand, a, a + h, "min"))
    return np.array(ts)


@dataclass(frozen=True)
class MaxSequence:
    s_times: np.ndarray   # leftmost maximisers per window, s_0 = 0
    t_times: np.ndarray   # derived subsequence with spacing in [h, 3h]
    case: str             # "even" or "odd" subsequence of s


def build_max_sequence(integrand: Callable[[float], float], h: float,
                       n_max: int) -> MaxSequence:
    """s_0 = 0 and s_n the leftmost maximiser on [n h, (n+1) h].

    The derived sequence keeps every other maximiser (whichever parity
    carries the larger mass), giving spacing in [h, 3h].
    """
    if h <= 0 or n_max < 2:
        raise ValueError("need h > 0 and n_max >= 2")
    s = [0.0]
    for n in range(1, n_max + 1):
        s.append(_leftmost_extremum(integrand, n * h, (n + 1) * h, "max"))
    s = np.array(s)
    vals = np.array([integrand(x) for x in s])
    even_mass = float(np.sum(vals[2::2]))
    odd_mass = float(np.sum(vals[1::2]))
    if even_mass >= odd_mass:
        t = np.concatenate(([0.0], s[2::2]))
        case = "even"
    else:
        t = np.concatenate(([0.0], s[1::2]))
        case = "odd"
    return MaxSequence(s_times=s, t_times=t, case=case)


# ---------------------------------------------------------------------------
# fading noise, mean-square equivalents, log-window limit
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FadingReport:
    fading: Optional[bool]      # None = undecided
    limit_estimate: float       # trailing window-energy level


def check_fading(spec: DiffusionSpec, h: float, n_probe: int = 256,
                 tol: float = 1e-10) -> FadingReport:
    """Whether the window energies theta^2(n) tend to zero.

    Analytic for the built-in envelope families; a trend test over n_probe
    windows otherwise, with Undecided fallback.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    profile = _analyze(spec)
    wi = model.window_intensity(spec, h, n_probe, tol)
    tail_level = float(np.mean(wi.values[-max(4, n_probe // 8):]))
    if profile.fading is not None:
        return FadingReport(fading=profile.fading, limit_estimate=tail_level)
    head = float(np.max(wi.values[: n_probe // 4])) if n_probe >= 8 else math.inf
    tail = float(np.max(wi.values[-n_probe // 4:]))
    if head == 0.0 and tail == 0.0:
        return FadingReport(True, 0.0)
    if head > 0.0 and tail <= 0.05 * head:
        return FadingReport(True, tail_level)
    if tail >= 0.5 * head > 0.0:
        return FadingReport(False, tail_level)
    return FadingReport(None, tail_level)


@dataclass(frozen=True)
class MeanSquareReport:
    fading_single_h: bool
    fading_all_h: bool
    unit_window_limit_zero: bool
    h_values: tuple
    note: str = ("ensemble mean-square decay is checked empirically by the "
                 "statistics layer")

    @property
    def all_equivalent(self) -> bool:
        return (self.fading_single_h == self.fading_all_h
                == self.unit_window_limit_zero)


def mean_square_equiv(spec: DiffusionSpec,
                      h_values=(0.5, 1.0, 2.0)) -> MeanSquareReport:
    """Evaluate the equivalent fading-noise statements for several windows."""
    flags = [check_fading(spec, h).fading for h in h_values]
    if any(f is None for f in flags):
        raise ValueError("fading undecided for this spec; use empirical mode")
    unit = check_fading(spec, 1.0).fading
    return MeanSquareReport(fading_single_h=bool(flags[0]),
                            fading_all_h=all(flags),
                            unit_window_limit_zero=bool(unit),
                            h_values=tuple(h_values))


def limit_Lh(spec: DiffusionSpec, h: float, tol: float = 1e-10) -> Optional[float]:
    """L_h = lim theta^2(n) * ln n, in [0, inf]; None when undecided.

    Analytic for envelope families; for tables the constant extrapolation
    fixes the limit (infinite for a non-zero hold value, zero otherwise).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    profile = _analyze(spec)
    if profile.kind in (_ZERO, _L2, _SLOG_ZERO):
        return 0.0
    if profile.kind == _LOG_THRESHOLD:
        return h * profile.L
    if profile.kind == _BOUNDED_BELOW:
        return math.inf
    f = spec.form
    if isinstance(f, TableSigma):
        hold = frobenius_sq(f.values[-1])
        return math.inf if hold > 0.0 else 0.0
    # callable: sample theta^2(n) * ln n on a dyadic ladder
    ns = [2 ** k for k in range(4, 14)]
    est = [float(interval_integrals(spec, [n * h], [(n + 1) * h], tol)[0])
           * math.log(n) for n in ns]
    last, prev = est[-1], est[-2]
    if last > 2.0 * prev and prev > 0:
        return math.inf
    if abs(last - prev) <= 0.05 * max(abs(last), 1e-300):
        return last
    if last == 0.0 and prev == 0.0:
        return 0.0
    return None


# ---------------------------------------------------------------------------
# regime verdict
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RegimeVerdict:
    regime: str
    drift_stable: bool
    fading_noise: bool
    mean_square_stable: bool
    liminf_zero_predicted: bool
    avg_sq_zero_predicted: bool
    epsilon_star_bracket: Optional[tuple] = None
    diagnostics: tuple = ()
    note: str = ""


def _eps_grid(lo: float, hi: float, points: int) -> np.ndarray:
    return np.geomspace(lo, hi, points)


def classify(sigma: DiffusionSpec, drift, h: float = 1.0,
             eps_lo: float = 2.0 ** -8, eps_hi: float = 2.0 ** 8,
             eps_points: int = 33, n_terms: int = 512,
             tol: float = 1e-10, bracket_rtol: float = 1e-3) -> RegimeVerdict:
    """Three-way almost-sure regime verdict for dX = A(t) X dt + sigma dB.

    Gate 1 requires a stable drift (negative spectral abscissa, or Floquet
    multiplier inside the unit circle for periodic drifts): noise cannot
    stabilise an unstable linear system, so without the gate nothing can be
    concluded.  Gate 2 evaluates the window-sum criterion over a geometric
    eps grid and brackets the threshold by bisection in the mixed case.
    """
    # gate 1: drift stability
    if isinstance(drift, ConstantDrift):
        drift_stable = spectral_abscissa(drift.matrix) < 0.0
        gate_note = "" if drift_stable else (
            "spectral abscissa >= 0: the unperturbed system is not "
            "asymptotically stable and additive noise cannot stabilise it")
    elif isinstance(drift, (PeriodicDrift, CallableDrift)) and \
            getattr(drift, "period", None) is not None:
        rho = monodromy(drift, tol=max(tol, 1e-12)).rho
        drift_stable = rho < 1.0
        gate_note = "" if drift_stable else (
            f"Floquet multiplier spectral radius {rho:.6g} >= 1: the "
            "unperturbed periodic system is not asymptotically stable and "
            "additive noise cannot stabilise it")
    else:
        drift_stable = False
        gate_note = "drift is neither constant nor periodic: no stability gate"

    fade = check_fading(sigma, h, tol=tol)
    fading = bool(fade.fading) if fade.fading is not None else False

    if not drift_stable:
        return RegimeVerdict(regime=REGIME_UNDECIDED, drift_stable=False,
                             fading_noise=fading, mean_square_stable=fading,
                             liminf_zero_predicted=False,
                             avg_sq_zero_predicted=False, note=gate_note)

    # gate 2: finiteness trichotomy over the eps grid
    grid = _eps_grid(eps_lo, eps_hi, eps_points)
    rulings = tuple(decide_Sprime(sigma, float(e), h, n_terms, tol) for e in grid)
    statuses = {r.status for r in rulings}

    if UNDECIDED in statuses:
        return RegimeVerdict(regime=REGIME_UNDECIDED, drift_stable=True,
                             fading_noise=fading, mean_square_stable=fading,
                             liminf_zero_predicted=False,
                             avg_sq_zero_predicted=False,
                             diagnostics=rulings,
                             note="finiteness undecided for this sigma form")
    if statuses == {FINITE}:
        return RegimeVerdict(regime=STABLE, drift_stable=True,
                             fading_noise=fading, mean_square_stable=fading,
                             liminf_zero_predicted=False,
                             avg_sq_zero_predicted=False, diagnostics=rulings)
    if statuses == {INFINITE}:
        return RegimeVerdict(regime=UNBOUNDED, drift_stable=True,
                             fading_noise=fading, mean_square_stable=fading,
                             liminf_zero_predicted=fading,
                             avg_sq_zero_predicted=fading, diagnostics=rulings)

    # mixed: bracket the threshold eps' by bisection
    lo = max(float(g) for g, r in zip(grid, rulings) if r.status == INFINITE)
    hi = min(float(g) for g, r in zip(grid, rulings) if r.status == FINITE)
    while (hi - lo) > bracket_rtol * 0.5 * (hi + lo):
        mid = math.sqrt(lo * hi)
        r = decide_Sprime(sigma, mid, h, n_terms=8, tol=tol)
        if r.status == FINITE:
            hi = mid
        else:
            lo = mid
    return RegimeVerdict(regime=BOUNDED, drift_stable=True,
                         fading_noise=fading, mean_square_stable=fading,
                         liminf_zero_predicted=True,
                         avg_sq_zero_predicted=True,
                         epsilon_star_bracket=(lo, hi), diagnostics=rulings)


# ---------------------------------------------------------------------------
# norm independence
# ---------------------------------------------------------------------------

def _alt_norm_sq(m: np.ndarray, which: str) -> float:
    if which == "max-entry":
        return float(np.max(np.abs(m))) ** 2
    if which == "spectral":
        return float(np.linalg.norm(m, ord=2)) ** 2
    raise ValueError(f"unknown norm {which!r}")


@dataclass(frozen=True)
class NormEquivReport:
    eps: float
    alt_norm: str
    status_frobenius: str
    status_alt: str
    class_frobenius: str
    class_alt: str

    @property
    def classes_agree(self) -> bool:
        return self.class_frobenius == self.class_alt


def _trichotomy_class(spec: DiffusionSpec,
                      pattern_norm_sq: Optional[float] = None) -> str:
    p = _analyze(spec, pattern_norm_sq)
    if p.kind in (_ZERO, _L2, _SLOG_ZERO):
        return "finite-for-all"
    if p.kind == _LOG_THRESHOLD:
        return "mixed"
    if p.kind == _BOUNDED_BELOW:
        return "infinite-for-all"
    return "undecided"


def _status_under_norm(spec: DiffusionSpec, eps: float, h: float,
                       pattern_norm_sq: Optional[float]) -> str:
    p = _analyze(spec, pattern_norm_sq)
    if p.kind in (_ZERO, _L2, _SLOG_ZERO):
        return FINITE
    if p.kind == _LOG_THRESHOLD:
        return FINITE if eps * eps > 2.0 * h * p.L else INFINITE
    if p.kind == _BOUNDED_BELOW:
        return INFINITE
    return UNDECIDED


def norm_equiv_check(spec: DiffusionSpec, eps: float, alt_norm: str,
                     h: float = 1.0) -> NormEquivReport:
    """Re-run the finiteness analysis under another matrix norm.

    Thresholds may move but the trichotomy class must not.
    """
    f = spec.form
    if isinstance(f, ConstantSigma):
        alt_sq = _alt_norm_sq(f.values, alt_norm)
    elif isinstance(f, EnvelopePattern):
        alt_sq = _alt_norm_sq(f.pattern, alt_norm)
    else:
        raise ValueError("norm comparison needs a constant or envelope form")
    return NormEquivReport(
        eps=eps, alt_norm=alt_norm,
        status_frobenius=_status_under_norm(spec, eps, h, None),
        status_alt=_status_under_norm(spec, eps, h, alt_sq),
        class_frobenius=_trichotomy_class(spec),
        class_alt=_trichotomy_class(spec, alt_sq))


# ---------------------------------------------------------------------------
# assembled report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionReport:
    h: float
    c: float
    eps_values: tuple
    sum_rulings: tuple        # FinitenessRuling per eps (window sums)
    integral_rulings: tuple   # FinitenessRuling per eps (integral criterion)
    L_h: Optional[float]
    fading: Optional[bool]

    def to_dict(self) -> dict:
        def rul(r):
            out = {"eps": r.eps, "status": r.status,
                   "partial_value": r.partial_value, "n_terms": r.n_terms}
            if r.tail_bound is not None:
                out["tail_bound"] = r.tail_bound
            if r.witness is not None:
                out["witness"] = r.witness
            return out
        return {
            "h": self.h, "c": self.c,
            "eps_values": list(self.eps_values),
            "L_h": None if self.L_h is None else float(self.L_h),
            "fading": self.fading,
            "sum_rulings": [rul(r) for r in self.sum_rulings],
            "integral_rulings": [rul(r) for r in self.integral_rulings],
        }


def criterion_report(spec: DiffusionSpec, h: float = 1.0, c: float = 1.0,
                     eps_values=(0.5, 1.0, 2.0, 4.0), n_terms: int = 256,
                     t_max: float = 256.0, tol: float = 1e-8) -> CriterionReport:
    """Evaluate both criteria on a small eps grid for reporting."""
    sums = tuple(decide_Sprime(spec, float(e), h, n_terms, min(tol, 1e-8))
                 for e in eps_values)
    ints = tuple(decide_I(spec, float(e), c, t_max, tol) for e in eps_values)
    return CriterionReport(h=h, c=c, eps_values=tuple(float(e) for e in eps_values),
                           sum_rulings=sums, integral_rulings=ints,
                           L_h=limit_Lh(spec, h),
                           fading=check_fading(spec, h).fading)
