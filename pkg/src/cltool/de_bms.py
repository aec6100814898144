"""Quantized density evolution for general BMS channels (BSC, BAWGNC, BEC).

Messages are probability masses on the shared LLR grid of
:mod:`cltool.channel`.  Information-node updates are LLR-sum convolutions
mixed over the Poisson residual degree; generator-node updates are tanh-rule
(box-plus) combinations mixed over the edge-perspective generator degrees,
including the generator's own channel observation.  Spatial coupling follows
the same window-averaging pattern as the scalar BEC recursion: densities are
averaged bin-wise over the w-window before each node update.

Implementation notes, relevant to accuracy and speed:

* Symmetric densities are processed in magnitude-pair space for box-plus.
  A pair at magnitude l is the two bins +-l with the canonical tilt
  mass(-l) = e^{-l} mass(+l); the box-plus of two pairs is again a single
  exactly-tilted pair, so requantization (linear splitting between the two
  neighboring grid magnitudes) preserves the symmetry condition exactly.
* Zero-LLR mass is the convolution identity and annihilates box-plus;
  +saturation mass is the box-plus identity and absorbs convolution.  Both
  are split off analytically, which also makes the embedded-BEC case exact
  on the grid at any resolution.
* The Poisson mixture of convolution powers is a compound-Poisson density:
  for large means it is computed by repeated self-convolution of the
  half-mean mixture, otherwise by direct truncated summation (tail < 1e-12).
* Degree powers under box-plus use repeated squaring; with at most one
  extra requantization per doubling this is both faster and slightly more
  accurate than a left-to-right chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.signal import convolve as _sig_convolve

from .channel import (
    DEFAULT_GRID,
    ChannelModel,
    Grid,
    QuantizedDensity,
    decompose_pairs,
    from_entropy,
    recompose_pairs,
)
from .de_bec import KAPPA, DEError, EnsembleSpec
from .degree import DegreeDistribution, PoissonEdgeDist

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 2000
_TAIL = 1e-12  # Poisson truncation tail mass
_PRUNE = 1e-18  # per-bin mass below this is dropped after convolutions
_EP_ESCAPE = 0.49  # "decoded" also requires leaving the neutral state


# -- box-plus pair table -----------------------------------------------------
#
# The tanh rule cannot tell a message of magnitude l_max/2 (LLR 15 on the
# default grid, tanh defect ~3e-7) from a perfectly known one at quantization
# resolution, so magnitudes at or above the band limit are folded into the
# saturation component before the pairwise combination.  That caps the table
# at (half/2)^2 entries and roughly quarters the kernel work.


def _band(grid: Grid) -> int:
    """First pair index treated as saturated inside box-plus."""
    return grid.half // 2


@lru_cache(maxsize=4)
def _pair_table(grid: Grid):
    """Quantized two-argument box-plus over interior magnitudes 1..band-1.

    Returns (klo, wlo): output pair mass of inputs (i, j) goes to magnitude
    klo[i,j] with weight wlo[i,j] and to klo[i,j]+1 with the complement.
    """
    lam = grid.magnitudes[1 : _band(grid)]
    t = np.tanh(lam / 2.0)
    tt = np.outer(t, t)
    lam_out = np.log1p(2.0 * tt / (1.0 - tt))  # 2 atanh(tt)
    f = lam_out / grid.step
    klo = f.astype(np.int32)
    wlo = (klo + 1).astype(float) - f
    return klo, wlo


if _HAVE_NUMBA:

    @njit(cache=True)
    def _boxplus_cross_kernel(pm1, pm2, klo, wlo, out):  # pragma: no cover
        n = pm1.shape[0]
        for i in range(n):
            a = pm1[i]
            if a <= 0.0:
                continue
            k_row = klo[i]
            w_row = wlo[i]
            for j in range(n):
                b = pm2[j]
                if b <= 0.0:
                    continue
                m = a * b
                k = k_row[j]
                w = w_row[j]
                out[k] += m * w
                out[k + 1] += m * (1.0 - w)

    @njit(cache=True)
    def _boxplus_square_kernel(pm, klo, wlo, out):  # pragma: no cover
        n = pm.shape[0]
        for i in range(n):
            a = pm[i]
            if a <= 0.0:
                continue
            k_row = klo[i]
            w_row = wlo[i]
            m = a * a
            k = k_row[i]
            w = w_row[i]
            out[k] += m * w
            out[k + 1] += m * (1.0 - w)
            for j in range(i + 1, n):
                b = pm[j]
                if b <= 0.0:
                    continue
                m = 2.0 * a * b
                k = k_row[j]
                w = w_row[j]
                out[k] += m * w
                out[k + 1] += m * (1.0 - w)

    def _boxplus_interior(pm1, pm2, klo, wlo, band):
        out = np.zeros(band + 1)
        if pm1 is pm2:
            _boxplus_square_kernel(pm1, klo, wlo, out)
        else:
            _boxplus_cross_kernel(pm1, pm2, klo, wlo, out)
        return out

else:  # pure-numpy fallback, same semantics

    def _boxplus_interior(pm1, pm2, klo, wlo, band):
        out = np.zeros(band + 1)
        nz1 = np.flatnonzero(pm1)
        nz2 = np.flatnonzero(pm2)
        if len(nz1) == 0 or len(nz2) == 0:
            return out
        prod = np.outer(pm1[nz1], pm2[nz2]).ravel()
        k = klo[np.ix_(nz1, nz2)].ravel()
        w = wlo[np.ix_(nz1, nz2)].ravel()
        out += np.bincount(k, weights=prod * w, minlength=band + 1)[: band + 1]
        out += np.bincount(k + 1, weights=prod * (1.0 - w), minlength=band + 1)[
            : band + 1
        ]
        return out


# -- symmetric triples: (zero mass, saturated mass, banded interior pairs) ---


def _to_triple(grid: Grid, full: np.ndarray):
    """(zero mass, saturated-band mass, pair masses over magnitudes 1..band-1)."""
    pm = decompose_pairs(grid, full)
    band = _band(grid)
    return float(pm[0]), float(pm[band:].sum()), pm[1:band]


def _from_triple(grid: Grid, triple) -> np.ndarray:
    z, s, c = triple
    pm = np.zeros(grid.half + 1)
    pm[0] = z
    pm[-1] = s
    pm[1 : _band(grid)] = c
    return recompose_pairs(grid, pm)


def _boxplus_triples(grid: Grid, t1, t2):
    z1, s1, c1 = t1
    z2, s2, c2 = t2
    klo, wlo = _pair_table(grid)
    c = s1 * c2 + s2 * c1
    if c1.any() and c2.any():
        mixed = _boxplus_interior(c1, c2, klo, wlo, _band(grid))
        z_extra = mixed[0]
        c = c + mixed[1:-1]
        # mixed[-1] is only reachable through zero-weight rounding
        s_extra = mixed[-1]
    else:
        z_extra = 0.0
        s_extra = 0.0
    z = z1 + (1.0 - z1) * z2 + z_extra
    s = s1 * s2 + s_extra
    return z, s, c


def _boxplus_power(grid: Grid, triple, k: int, memo: dict):
    """k-fold box-plus of a density with itself, by repeated squaring."""
    if k == 0:
        return 0.0, 1.0, np.zeros(_band(grid) - 1)
    if k == 1:
        return triple
    if k in memo:
        return memo[k]
    half = _boxplus_power(grid, triple, k // 2, memo)
    out = _boxplus_triples(grid, half, half)
    if k % 2:
        out = _boxplus_triples(grid, out, triple)
    memo[k] = out
    return out


# -- convolution side --------------------------------------------------------


def _fold_convolve(grid: Grid, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """LLR-sum convolution on the signed grid with saturating ends."""
    size = grid.size
    nza = np.flatnonzero(a)
    nzb = np.flatnonzero(b)
    out = np.zeros(size)
    if len(nza) == 0 or len(nzb) == 0:
        return out
    i0, i1 = nza[0], nza[-1]
    j0, j1 = nzb[0], nzb[-1]
    conv = _sig_convolve(a[i0 : i1 + 1], b[j0 : j1 + 1], method="auto")
    conv = np.where(conv < _PRUNE, 0.0, conv)
    lo = i0 + j0 - grid.half  # position of conv[0] in full coordinates
    hi = lo + len(conv) - 1
    lo_clip = max(lo, 0)
    hi_clip = min(hi, size - 1)
    if lo_clip <= hi_clip:
        out[lo_clip : hi_clip + 1] = conv[lo_clip - lo : hi_clip - lo + 1]
    if lo < 0:
        out[0] += conv[: -lo].sum()
    if hi > size - 1:
        out[size - 1] += conv[size - 1 - lo + 1 :].sum()
    return out


def _delta_zero(grid: Grid) -> np.ndarray:
    v = np.zeros(grid.size)
    v[grid.half] = 1.0
    return v


def _compound_poisson(grid: Grid, c: np.ndarray, mu: float, trunc: Optional[int]) -> np.ndarray:
    """Poisson(mu) mixture of convolution powers of the normalized density c.

    Splitting the mean in half and self-convolving is exact (the mixture is
    a compound-Poisson law), so large means cost O(log mu) extra convolutions
    instead of a proportionally longer direct sum.
    """
    if mu <= 0.0:
        return _delta_zero(grid)
    if trunc is None and mu > 12.0:
        half = _compound_poisson(grid, c, mu / 2.0, None)
        return _fold_convolve(grid, half, half)
    weight = math.exp(-mu)
    out = weight * _delta_zero(grid)
    cur = _delta_zero(grid)
    total = weight
    j_max = trunc if trunc is not None else 400
    for j in range(1, j_max + 1):
        cur = _fold_convolve(grid, cur, c)
        weight *= mu / j
        out += weight * cur
        total += weight
        if 1.0 - total < _TAIL:
            break
    return out / out.sum()


# -- node updates (raw mass-vector versions) ---------------------------------


def _var_update_raw(
    grid: Grid, avg_gen: np.ndarray, l_avg: float, trunc: Optional[int] = None
) -> np.ndarray:
    """Information-node edge update from the window-averaged generator density.

    Compound-Poisson mixture of LLR-sum powers; the zero bin (convolution
    identity) and the +saturation bin (absorbing) are handled analytically,
    which is also what makes the embedded-BEC recursion exact.
    """
    half = grid.half
    q0 = avg_gen[half]
    qs = avg_gen[-1]
    c = avg_gen.copy()
    c[half] = 0.0
    c[-1] = 0.0
    mc = c.sum()
    p_unsat = math.exp(-l_avg * qs)
    if mc <= 1e-300:
        out = np.zeros(grid.size)
        out[half] = p_unsat
        out[-1] = 1.0 - p_unsat
    else:
        out = p_unsat * _compound_poisson(grid, c / mc, l_avg * mc, trunc)
        out[-1] += 1.0 - p_unsat
        out = np.where(out < _PRUNE, 0.0, out)
    return out / out.sum()


def _gen_update_raw(
    grid: Grid, avg_info: np.ndarray, ch_triple, dist: DegreeDistribution
) -> np.ndarray:
    """Generator-node edge update: rho-mixture of box-plus powers, plus channel."""
    t = _to_triple(grid, avg_info)
    memo = {}
    rho = dist.edge_coeffs()
    z = s = 0.0
    c = np.zeros(_band(grid) - 1)
    for d in np.nonzero(rho)[0]:
        pz, ps, pc = _boxplus_power(grid, t, int(d) - 1, memo)
        weight = rho[d]
        z += weight * pz
        s += weight * ps
        c = c + weight * pc
    out = _from_triple(grid, _boxplus_triples(grid, (z, s, c), ch_triple))
    out = np.where(out < _PRUNE, 0.0, out)
    return out / out.sum()


def _parity_entropy_raw(grid: Grid, avg_info: np.ndarray, dist: DegreeDistribution) -> float:
    """Entropy functional of the node-perspective parity density.

    Mixture over the node weights R_d of the full d-fold box-plus, without
    the channel term; on embedded-BEC densities this equals the scalar GEXIT
    value 1 - R(1 - x) exactly.
    """
    t = _to_triple(grid, avg_info)
    memo = {}
    z = s = 0.0
    c = np.zeros(_band(grid) - 1)
    for d in np.nonzero(dist.coeffs)[0]:
        pz, ps, pc = _boxplus_power(grid, t, int(d), memo)
        weight = dist.coeffs[d]
        z += weight * pz
        s += weight * ps
        c = c + weight * pc
    return float(z + c @ _pair_entropy_kernel(grid))


@lru_cache(maxsize=4)
def _pair_entropy_kernel(grid: Grid) -> np.ndarray:
    """Entropy contribution of a unit symmetric pair at banded magnitudes."""
    lam = grid.magnitudes[1 : _band(grid)]
    pos = grid.pair_pos_fraction[1 : _band(grid)]
    h_pos = np.logaddexp(0.0, -lam) / math.log(2.0)
    h_neg = np.logaddexp(0.0, lam) / math.log(2.0)
    return pos * h_pos + (1.0 - pos) * h_neg


@lru_cache(maxsize=4)
def _error_kernel(grid: Grid) -> np.ndarray:
    k = np.zeros(grid.size)
    k[: grid.half] = 1.0
    k[grid.half] = 0.5
    return k


@lru_cache(maxsize=16)
def _channel_density(ch: ChannelModel, grid: Grid) -> QuantizedDensity:
    return ch.llr_density(grid.n_bins, grid.l_max)


# -- public single-node operations ------------------------------------------


def var_update(
    densities, pois: PoissonEdgeDist, trunc: Optional[int] = None
) -> QuantizedDensity:
    """Edge update of an information node from a window of generator densities."""
    grid, avg = _average_window(densities)
    return QuantizedDensity(grid, _var_update_raw(grid, avg, pois.l_avg, trunc))


def gen_update(
    densities, ch: ChannelModel, dist: DegreeDistribution
) -> QuantizedDensity:
    """Edge update of a generator node from a window of information densities."""
    grid, avg = _average_window(densities)
    ch_triple = _to_triple(grid, _channel_density(ch, grid).mass)
    return QuantizedDensity(grid, _gen_update_raw(grid, avg, ch_triple, dist))


def error_prob(density: QuantizedDensity) -> float:
    """Hard-decision error of a density: negative mass plus half the zero mass."""
    return density.error_prob()


def _average_window(densities):
    densities = list(densities)
    if not densities:
        raise DEError("empty density window")
    grid = densities[0].grid
    if any(d.grid != grid for d in densities):
        raise DEError("window densities must share one grid")
    return grid, np.mean([d.mass for d in densities], axis=0)


# -- coupled forward DE -------------------------------------------------------


@dataclass(frozen=True)
class DensityProfile:
    """Per-position message densities: info rows (L) and generator rows (L+w-1).

    Information positions outside [0, L-1] are known bits; the update loop
    pads with the all-mass-at-+saturation density accordingly.
    """

    grid: Grid
    info: np.ndarray
    gen: np.ndarray

    def info_density(self, i: int) -> QuantizedDensity:
        return QuantizedDensity(self.grid, self.info[i])

    def gen_density(self, j: int) -> QuantizedDensity:
        return QuantizedDensity(self.grid, self.gen[j])

    def error_probs(self) -> np.ndarray:
        return self.info @ _error_kernel(self.grid)


@dataclass(frozen=True)
class BmsDEResult:
    profile: DensityProfile
    converged: bool
    iterations: int
    residual: float
    decoded_early: bool


def _known_row(grid: Grid) -> np.ndarray:
    row = np.zeros(grid.size)
    row[-1] = 1.0
    return row


def forward_de(
    spec: EnsembleSpec,
    ch: ChannelModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid: Grid = DEFAULT_GRID,
    init: str = "neutral",
    info0: Optional[np.ndarray] = None,
    decode_target: Optional[float] = None,
) -> BmsDEResult:
    """Window-averaged flooding DE from the neutral (or near-known) start.

    ``info0`` overrides the start with an explicit (L, grid.size) info-density
    array, used by warm-started continuation sweeps.  Stops when the largest
    per-bin change of the info densities drops below tol, or immediately once
    every position's error probability is at or under ``decode_target`` (early
    decodability exit).

    A position is recomputed only once its window input has moved more than
    tol*1e-3 (capped at 1e-12) per bin since its last recompute; away from
    the decoding wave inputs are essentially frozen, so this caps work at the
    wave width while perturbing the flooding iterate far below tol.
    """
    if tol <= 0.0:
        raise DEError("tol must be positive")
    skip_tol = min(tol * 1e-3, 1e-12)
    L, w = spec.L, spec.w
    n_gen = spec.n_gen_positions
    known = _known_row(grid)
    if info0 is not None:
        info = np.array(info0, dtype=float, copy=True)
        if info.shape != (L, grid.size):
            raise DEError("info0 has the wrong shape")
    elif init == "neutral":
        info = np.tile(_delta_zero(grid), (L, 1))
    elif init == "near_known":
        start = 1e-6 * _delta_zero(grid) + (1.0 - 1e-6) * known
        info = np.tile(start, (L, 1))
    else:
        raise DEError(f"unknown init {init!r}")
    gen = np.tile(known, (n_gen, 1))
    ch_triple = _to_triple(grid, _channel_density(ch, grid).mass)
    e_kern = _error_kernel(grid)

    gen_in_cache = np.full((n_gen, grid.size), -1.0)
    var_in_cache = np.full((L, grid.size), -1.0)
    residual = math.inf
    for it in range(1, max_iter + 1):
        # generator updates: window mean over info positions [j-w+1, j]
        padded = np.vstack([np.tile(known, (w - 1, 1)), info, np.tile(known, (w - 1, 1))])
        csum = np.cumsum(padded, axis=0)
        base = np.vstack([np.zeros(grid.size), csum])
        for j in range(n_gen):
            avg = (base[j + w] - base[j]) / w
            if np.max(np.abs(avg - gen_in_cache[j])) > skip_tol:
                gen_in_cache[j] = avg
                gen[j] = _gen_update_raw(grid, avg, ch_triple, spec.dist)
        # information updates: window mean over generator positions [i, i+w-1]
        csum_g = np.cumsum(gen, axis=0)
        base_g = np.vstack([np.zeros(grid.size), csum_g])
        residual = 0.0
        for i in range(L):
            avg = (base_g[i + w] - base_g[i]) / w
            if np.max(np.abs(avg - var_in_cache[i])) <= skip_tol:
                continue
            var_in_cache[i] = avg
            new = _var_update_raw(grid, avg, spec.l_avg)
            residual = max(residual, float(np.max(np.abs(new - info[i]))))
            info[i] = new
        if decode_target is not None:
            if float(np.max(info @ e_kern)) <= decode_target:
                return BmsDEResult(
                    DensityProfile(grid, info, gen), True, it, residual, True
                )
        if residual < tol:
            return BmsDEResult(DensityProfile(grid, info, gen), True, it, residual, False)
    return BmsDEResult(DensityProfile(grid, info, gen), False, max_iter, residual, False)


def floor_error_prob(
    spec: EnsembleSpec,
    ch: ChannelModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid: Grid = DEFAULT_GRID,
) -> float:
    """Worst-position error probability of the floor FP (near-known start)."""
    res = forward_de(spec, ch, tol, max_iter, grid, init="near_known")
    return float(np.max(res.profile.error_probs()))


def is_decoded(
    spec: EnsembleSpec,
    ch: ChannelModel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid: Grid = DEFAULT_GRID,
    kappa: float = KAPPA,
) -> bool:
    """Forward DE reaches (kappa x) the floor error probability everywhere."""
    floor = floor_error_prob(spec, ch, tol, max_iter, grid)
    target = min(kappa * floor, _EP_ESCAPE)
    res = forward_de(spec, ch, tol, max_iter, grid, decode_target=target)
    if res.decoded_early:
        return True
    return float(np.max(res.profile.error_probs())) <= target


def bp_threshold(
    spec: EnsembleSpec,
    family: str,
    tol_entropy: float = 5e-3,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid: Grid = DEFAULT_GRID,
    bracket=(0.01, 0.99),
) -> Optional[float]:
    """Bisection on channel entropy of the BMS decodability predicate.

    Returns the threshold in channel-entropy units, or None when even the
    lower bracket end is undecodable (no threshold above floor resolution,
    as for uncoupled ensembles without degree-1 mass).
    """
    lo, hi = bracket

    def decoded(h: float) -> bool:
        return is_decoded(spec, from_entropy(family, h), tol, max_iter, grid)

    if not decoded(lo):
        return None
    if decoded(hi):
        return float(hi)
    while hi - lo > tol_entropy:
        mid = 0.5 * (lo + hi)
        if decoded(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class ProxyPoint:
    entropy: float
    proxy_gexit: float
    converged: bool


def exit_proxy_curve(
    spec: EnsembleSpec,
    family: str,
    entropy_grid,
    direction: str = "down",
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    grid: Grid = DEFAULT_GRID,
):
    """Continuation sweep of a GEXIT stand-in over a channel-entropy grid.

    The proxy is the spatial average of the entropy functional of each
    generator's extrinsic parity density (no channel term); on the BEC it
    reduces to the exact scalar GEXIT value.  Transition locations are the
    contract, not curve values.  Points return in sweep order.
    """
    entropy_grid = np.sort(np.asarray(entropy_grid, dtype=float))
    if direction == "down":
        order = entropy_grid[::-1]
        init = "neutral"
    elif direction == "up":
        order = entropy_grid
        init = "near_known"
    else:
        raise DEError(f"direction must be 'up' or 'down', got {direction!r}")
    L, w = spec.L, spec.w
    known = _known_row(grid)
    points = []
    info = None
    for h in order:
        ch = from_entropy(family, float(h))
        res = forward_de(spec, ch, tol, max_iter, grid, init=init, info0=info)
        info = res.profile.info
        padded = np.vstack([np.tile(known, (w - 1, 1)), info, np.tile(known, (w - 1, 1))])
        csum = np.cumsum(padded, axis=0)
        base = np.vstack([np.zeros(grid.size), csum])
        vals = [
            _parity_entropy_raw(grid, (base[j + w] - base[j]) / w, spec.dist)
            for j in range(spec.n_gen_positions)
        ]
        points.append(ProxyPoint(float(h), float(np.mean(vals)), res.converged))
    return points
