"""Scalar density evolution on the binary erasure channel.

Tracks per-position erasure probabilities of a (possibly spatially coupled)
LDGM ensemble under the parallel flooding schedule, locates BP thresholds by
bisection, traces the fixed-point (EBP) curve of the uncoupled ensemble, and
runs the equal-areas (Maxwell) construction that defines the area threshold.

Position conventions: information positions live on [0, L-1], generator
positions on [0, L+w-2], and information bits outside [0, L-1] are known,
i.e. their erasure probability is pinned to 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .degree import DegreeDistribution, PoissonEdgeDist

# "decoded" means the forward-DE fixed point sits within KAPPA of the error
# floor found from a near-zero start; LDGM codes have genuine floors, so an
# absolute-zero criterion would never trigger.
KAPPA = 10.0
FLOOR_START = 1e-6
# escape clause: the all-ones state must actually have been left, which the
# floor ratio alone cannot certify when the floor itself sits at 1
ONES_ESCAPE = 1.0 - 1e-6

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 50_000
SWEEP_TOL = 1e-8
SWEEP_MAX_ITER = 10_000


class DEError(ValueError):
    """Invalid density-evolution input or an out-of-scope curve shape."""


class MultipleFoldsError(DEError):
    """EBP curve folds more than once; the single-cut construction refuses."""


@dataclass(frozen=True)
class Coupling:
    """Chain length L and smoothing window w of a coupled ensemble."""

    L: int
    w: int

    def __post_init__(self):
        if self.L < 1 or self.w < 1 or self.w > self.L:
            raise DEError(f"need 1 <= w <= L, got L={self.L}, w={self.w}")


@dataclass(frozen=True)
class EnsembleSpec:
    """Degree distribution plus the ensemble-level parameters.

    ``l_avg`` is the mean information-bit degree and must satisfy
    l_avg * m_over_n = R'(1); ``coupling`` is None for the plain ensemble.
    """

    dist: DegreeDistribution
    l_avg: float
    m_over_n: float
    coupling: Optional[Coupling] = None

    def __post_init__(self):
        if not self.l_avg > 0.0 or not self.m_over_n > 0.0:
            raise DEError("l_avg and m_over_n must be positive")
        if abs(self.l_avg * self.m_over_n - self.dist.avg_degree) > 1e-9:
            raise DEError(
                "inconsistent ensemble: l_avg * m_over_n must equal the "
                "average generator degree"
            )

    @classmethod
    def from_rate(
        cls, dist: DegreeDistribution, rate: float, L: int = 0, w: int = 0
    ) -> "EnsembleSpec":
        """Ensemble at design ratio m/n = rate; L, w > 0 selects coupling."""
        coupling = Coupling(L, w) if L or w else None
        return cls(dist, dist.avg_degree / rate, rate, coupling)

    @property
    def L(self) -> int:
        return self.coupling.L if self.coupling else 1

    @property
    def w(self) -> int:
        return self.coupling.w if self.coupling else 1

    @property
    def n_gen_positions(self) -> int:
        return self.L + self.w - 1

    @property
    def pois(self) -> PoissonEdgeDist:
        return PoissonEdgeDist(self.l_avg)


@dataclass(frozen=True)
class ErasureProfile:
    """Erasure probabilities per position: x information-side, y generator-side."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        for name, v in (("x", x), ("y", y)):
            if np.any(v < 0.0) or np.any(v > 1.0):
                raise DEError(f"profile {name} entries outside [0, 1]")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


@dataclass(frozen=True)
class DEResult:
    profile: ErasureProfile
    converged: bool
    iterations: int
    residual: float


def _window_mean_info(spec: EnsembleSpec, x: np.ndarray) -> np.ndarray:
    """Mean of x over [j-w+1, j] for each generator position j; x=0 outside."""
    w = spec.w
    padded = np.concatenate([np.zeros(w - 1), x, np.zeros(w - 1)])
    return np.convolve(padded, np.full(w, 1.0 / w), mode="valid")


def _window_mean_gen(spec: EnsembleSpec, y: np.ndarray) -> np.ndarray:
    """Mean of y over [i, i+w-1] for each information position i."""
    return np.convolve(y, np.full(spec.w, 1.0 / spec.w), mode="valid")


def _rho_vec(dist: DegreeDistribution, t: np.ndarray) -> np.ndarray:
    dcoeffs = dist.coeffs[1:] * np.arange(1, len(dist.coeffs))
    return np.polynomial.polynomial.polyval(t, dcoeffs) / dist.avg_degree


def _poly_vec(dist: DegreeDistribution, t: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(t, dist.coeffs)


def de_step(spec: EnsembleSpec, profile: ErasureProfile, eps: float) -> ErasureProfile:
    """One parallel DE round: update all y from x, then all x from the new y."""
    if not 0.0 <= eps <= 1.0:
        raise DEError(f"erasure probability {eps!r} outside [0, 1]")
    y = 1.0 - (1.0 - eps) * _rho_vec(spec.dist, 1.0 - _window_mean_info(spec, profile.x))
    x = np.exp(spec.l_avg * (_window_mean_gen(spec, y) - 1.0))
    return ErasureProfile(np.clip(x, 0.0, 1.0), np.clip(y, 0.0, 1.0))


def forward_de(
    spec: EnsembleSpec,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    x0=None,
) -> DEResult:
    """Iterate DE from x = 1 (or x0) until the x-profile moves less than tol.

    From the all-ones start the sequence is entrywise monotone nonincreasing,
    so the limit is the forward-DE fixed point.  A hit of max_iter with
    residual >= tol is reported through converged=False.
    """
    if tol <= 0.0:
        raise DEError("tol must be positive")
    L = spec.L
    if x0 is None:
        x = np.ones(L)
    else:
        x = np.broadcast_to(np.asarray(x0, dtype=float), (L,)).copy()
    profile = ErasureProfile(x, np.ones(spec.n_gen_positions))
    residual = math.inf
    for it in range(1, max_iter + 1):
        nxt = de_step(spec, profile, eps)
        residual = float(np.max(np.abs(nxt.x - profile.x)))
        profile = nxt
        if residual < tol:
            return DEResult(profile, True, it, residual)
    return DEResult(profile, False, max_iter, residual)


def gexit_profile(spec: EnsembleSpec, profile: ErasureProfile):
    """Per-generator-position GEXIT values 1 - R(1 - window mean of x).

    Returns (vector over [0, L+w-2], spatial average).
    """
    h = 1.0 - _poly_vec(spec.dist, 1.0 - _window_mean_info(spec, profile.x))
    return h, float(np.mean(h))


def floor_fixed_point(
    spec: EnsembleSpec,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> DEResult:
    """Smallest fixed point reachable from a near-zero start (the error floor)."""
    return forward_de(spec, eps, tol, max_iter, x0=FLOOR_START)


def is_decoded(
    spec: EnsembleSpec,
    eps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    kappa: float = KAPPA,
) -> bool:
    """Decodability predicate: forward DE lands within kappa of the floor."""
    fp = forward_de(spec, eps, tol, max_iter)
    peak = float(fp.profile.x.max())
    if peak >= ONES_ESCAPE:
        return False
    floor = floor_fixed_point(spec, eps, tol, max_iter)
    return peak <= kappa * float(floor.profile.x.max())


def bp_threshold(
    spec: EnsembleSpec,
    tol_eps: float = 1e-4,
    tol_de: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    bracket=(0.0, 1.0),
) -> float:
    """Largest erasure probability at which forward DE reaches the floor.

    Bisection of the decodability predicate, which is monotone in eps by DE
    monotonicity.  Returns 0 when even the lower bracket end fails (e.g. no
    degree-1 mass and no coupling, so decoding never starts).
    """
    if tol_eps <= 0.0 or tol_de <= 0.0:
        raise DEError("tolerances must be positive")
    lo, hi = bracket
    if not is_decoded(spec, lo, tol_de, max_iter):
        return float(lo)
    if is_decoded(spec, hi, tol_de, max_iter):
        return float(hi)
    while hi - lo > tol_eps:
        mid = 0.5 * (lo + hi)
        if is_decoded(spec, mid, tol_de, max_iter):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class EbpCurve:
    """Fixed-point curve: internal state x, channel entropy h, GEXIT value g.

    Points are ordered by the tracing parameter x; h need not be monotone
    (that is the whole point of the construction).
    """

    x: np.ndarray
    h: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        for name in ("x", "h", "g"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        if not len(self.x) == len(self.h) == len(self.g):
            raise DEError("curve arrays must have equal length")

    def __len__(self) -> int:
        return len(self.x)

    def area(self) -> float:
        """Signed area integral of g dh along the curve (trapezoid rule)."""
        return float(np.sum(0.5 * (self.g[1:] + self.g[:-1]) * np.diff(self.h)))


def ebp_curve_uncoupled(
    spec: EnsembleSpec, n_points: int = 2000, x_grid=None
) -> EbpCurve:
    """Trace all uncoupled fixed points, parameterized by x in (0, 1].

    Uses the closed-form inverse of the Poisson polynomial:
    y(x) = 1 + ln(x)/l_avg, then eps(x) = 1 - (1 - y)/rho(1 - x).
    Points with eps outside [0, 1] are dropped.
    """
    if spec.coupling is not None:
        raise DEError("EBP tracing is defined for the uncoupled ensemble")
    if x_grid is None:
        if n_points < 100:
            raise DEError("n_points must be at least 100")
        x_min = math.exp(-spec.l_avg) * (1.0 + 1e-9)
        x_end = 1.0 if spec.dist.coeff(1) > 0.0 else 1.0 - 1e-9
        half = n_points // 2
        x_grid = np.unique(
            np.concatenate(
                [
                    np.geomspace(x_min, x_end, half),
                    np.linspace(x_min, x_end, n_points - half),
                ]
            )
        )
    else:
        x_grid = np.asarray(x_grid, dtype=float)
        if np.any(x_grid <= 0.0) or np.any(x_grid > 1.0):
            raise DEError("x grid must lie in (0, 1]")
        if np.any(x_grid < math.exp(-spec.l_avg)):
            raise DEError(
                f"x grid below the lambda-invertible range [{math.exp(-spec.l_avg):g}, 1]"
            )
    rho = _rho_vec(spec.dist, 1.0 - x_grid)
    if np.any(rho == 0.0):
        raise DEError(
            "rho(1 - x) vanishes on the requested grid; valid x range is "
            f"[{math.exp(-spec.l_avg):g}, 1)"
        )
    y = 1.0 + np.log(x_grid) / spec.l_avg
    eps = 1.0 - (1.0 - y) / rho
    keep = (eps >= 0.0) & (eps <= 1.0)
    g = 1.0 - _poly_vec(spec.dist, 1.0 - x_grid)
    return EbpCurve(x_grid[keep], eps[keep], g[keep])


@dataclass(frozen=True)
class MaxwellResult:
    area_threshold: float
    curve: EbpCurve  # the increasing Maxwell curve
    status: str  # "ok" or "no_fold"
    curve_bp_threshold: float  # h at the lower fold (= BP transition)


def _fold_indices(h: np.ndarray):
    """Index of the local max and following local min of h, plus fold count.

    Steps smaller than 1e-14 count as flat and never split a run.
    """
    dh = np.diff(h)
    nz = np.flatnonzero(np.abs(dh) >= 1e-14)
    if len(nz) == 0:
        return None, None, 0
    s = np.sign(dh[nz])
    change = np.flatnonzero(s[1:] != s[:-1]) + 1
    groups = np.split(np.arange(len(nz)), change)
    desc = [gr for gr in groups if s[gr[0]] < 0]
    if len(desc) != 1:
        return None, None, len(desc)
    gr = desc[0]
    i_top = int(nz[gr[0]])  # peak: last point before the descent
    i_bot = int(nz[gr[-1]] + 1)  # valley: last point of the descent
    return i_top, i_bot, 1


def _cross_increasing(h, g, x, lo, hi, level, last=False):
    """Interpolated (x, g) where h crosses `level` on an increasing stretch.

    Falls back to the nearest stretch endpoint when the level lies outside;
    the upper fallback covers curves of distributions without degree-1 mass,
    whose traced branch ends below h = 1 (the all-erasure state is a fixed
    point at every channel parameter there, so the curve continues at
    constant g).
    """
    seg = h[lo : hi + 1]
    idx = np.flatnonzero((seg[:-1] <= level) & (seg[1:] > level))
    if len(idx) == 0:
        if level > seg[-1]:
            return hi, x[hi], g[hi]
        return lo, x[lo], g[lo]
    k = lo + (idx[-1] if last else idx[0])
    t = (level - h[k]) / (h[k + 1] - h[k])
    return k, x[k] + t * (x[k + 1] - x[k]), g[k] + t * (g[k + 1] - g[k])


def maxwell_construction(curve: EbpCurve, rate: float) -> MaxwellResult:
    """Cut the S-shaped EBP curve with the vertical line balancing the areas.

    The balance point h* solves  integral (h(x) - h*) dg(x) = 0  between the
    lower- and upper-branch crossings at level h*.  Replacing the fold by the
    vertical segment at h* preserves the area integral, so the area under the
    returned Maxwell curve equals the design rate.

    A monotone curve is reported as status="no_fold" (area threshold = BP
    threshold = upper end of the curve); more than one fold raises.  When the
    traced branch ends below h = 1 (no degree-1 mass: the all-erasure state
    stays a fixed point everywhere) the returned Maxwell curve is completed
    by the constant-g segment out to h = 1.
    """
    h, g, x = curve.h, curve.g, curve.x
    if len(h) < 3:
        raise DEError("curve too short")
    i_top, i_bot, n_folds = _fold_indices(h)
    if n_folds == 0:
        return MaxwellResult(float(h[-1]), curve, "no_fold", float(h[-1]))
    if n_folds > 1:
        raise MultipleFoldsError(f"curve has {n_folds} folds, expected at most one")

    h_lo_lim = float(h[i_bot])
    last = len(h) - 1

    def balance(level: float) -> float:
        k_lo, x_lo, g_lo = _cross_increasing(h, g, x, 0, i_top, level, last=True)
        k_hi, x_hi, g_hi = _cross_increasing(h, g, x, i_bot, last, level)
        hs = np.concatenate([[level], h[k_lo + 1 : k_hi + 1], [level]])
        gs = np.concatenate([[g_lo], g[k_lo + 1 : k_hi + 1], [g_hi]])
        return float(np.sum(0.5 * (hs[1:] + hs[:-1] - 2.0 * level) * np.diff(gs)))

    lo, hi = h_lo_lim, float(np.max(h))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if balance(mid) > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    h_star = 0.5 * (lo + hi)

    k_lo, x_lo, g_lo = _cross_increasing(h, g, x, 0, i_top, h_star, last=True)
    k_hi, x_hi, g_hi = _cross_increasing(h, g, x, i_bot, last, h_star)
    mx = np.concatenate([x[: k_lo + 1], [x_lo, x_hi], x[k_hi + 1 :]])
    mh = np.concatenate([h[: k_lo + 1], [h_star, h_star], h[k_hi + 1 :]])
    mg = np.concatenate([g[: k_lo + 1], [g_lo, g_hi], g[k_hi + 1 :]])
    if mh[-1] < 1.0:
        mx = np.concatenate([mx, [mx[-1]]])
        mh = np.concatenate([mh, [1.0]])
        mg = np.concatenate([mg, [mg[-1]]])
    return MaxwellResult(h_star, EbpCurve(mx, mh, mg), "ok", h_lo_lim)


@dataclass(frozen=True)
class SweepPoint:
    eps: float
    avg_gexit: float
    converged: bool


def ebp_sweep(
    spec: EnsembleSpec,
    eps_grid,
    direction: str,
    tol: float = SWEEP_TOL,
    max_iter: int = SWEEP_MAX_ITER,
):
    """Warm-started continuation sweep of the stable DE branch.

    direction="down" walks the grid from the largest eps starting at the
    all-ones state; "up" walks from the smallest eps starting at the floor.
    Each point restarts DE at the previous fixed point, so the two sweeps
    bracket the hysteresis window of the coupled ensemble.  Points are
    returned in sweep order.
    """
    eps_grid = np.sort(np.asarray(eps_grid, dtype=float))
    if direction == "down":
        order = eps_grid[::-1]
        x = np.ones(spec.L)
    elif direction == "up":
        order = eps_grid
        x = np.full(spec.L, FLOOR_START)
    else:
        raise DEError(f"direction must be 'up' or 'down', got {direction!r}")
    points = []
    for eps in order:
        res = forward_de(spec, float(eps), tol, max_iter, x0=x)
        x = res.profile.x
        _, avg = gexit_profile(spec, res.profile)
        points.append(SweepPoint(float(eps), avg, res.converged))
    return points
