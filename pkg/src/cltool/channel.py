"""Binary-input memoryless symmetric channel models and quantized LLR densities.

Channels are parameterized by a single noise value (erasure probability,
crossover probability, or noise standard deviation).  Everything downstream
works under the all-zero-codeword convention: a transmitted 0 maps to +1,
and positive log-likelihood ratios favor bit 0.  This is the global sign
convention of the package (valid by channel symmetry and code linearity).

Quantized densities live on a symmetric uniform LLR grid; the two end bins
at +-l_max absorb saturated messages so total mass is always preserved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import xlogy
from scipy.stats import norm

BEC = "BEC"
BSC = "BSC"
BAWGNC = "BAWGNC"
FAMILIES = (BEC, BSC, BAWGNC)

DEFAULT_N_BINS = 2048
DEFAULT_L_MAX = 30.0

# below this distance from p = 1/2 the BSC capacity/D ratio switches to a
# series expansion to avoid 0/0
_BSC_SERIES_CUTOFF = 1e-4


class ChannelError(ValueError):
    """Invalid channel parameter or undefined channel functional."""


def binary_entropy(p: float) -> float:
    """h2(p) in bits, safe at the endpoints."""
    if not 0.0 <= p <= 1.0:
        raise ChannelError(f"probability {p!r} outside [0, 1]")
    return float(-(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p)) / math.log(2.0))


@dataclass(frozen=True)
class ChannelModel:
    """One BMS channel: kind in {BEC, BSC, BAWGNC} plus its noise parameter."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ChannelError(f"unknown channel family {self.kind!r}")
        p = self.param
        if self.kind == BEC and not 0.0 <= p <= 1.0:
            raise ChannelError("BEC erasure probability must be in [0, 1]")
        if self.kind == BSC and not 0.0 <= p <= 0.5:
            raise ChannelError("BSC crossover must be in [0, 1/2]")
        if self.kind == BAWGNC and not p > 0.0:
            raise ChannelError("BAWGNC noise sigma must be positive")

    def capacity(self) -> float:
        """Channel capacity in bits per use."""
        if self.kind == BEC:
            return 1.0 - self.param
        if self.kind == BSC:
            return 1.0 - binary_entropy(self.param)
        return _bawgnc_capacity(self.param)

    def entropy(self) -> float:
        """Channel entropy H = 1 - C."""
        return 1.0 - self.capacity()

    def d_functional(self) -> float:
        """Expected tanh(l/2) of the channel LLR under the zero convention.

        Closed forms: 1 - eps for the BEC and (1 - 2p)^2 for the BSC; a
        Gaussian integral for the BAWGNC.
        """
        if self.kind == BEC:
            return 1.0 - self.param
        if self.kind == BSC:
            return (1.0 - 2.0 * self.param) ** 2
        mean = 2.0 / self.param**2
        sd = 2.0 / self.param
        val, _ = quad(
            lambda l: norm.pdf(l, loc=mean, scale=sd) * math.tanh(l / 2.0),
            mean - 40.0 * sd,
            mean + 40.0 * sd,
            epsabs=1e-12,
            epsrel=1e-11,
            limit=200,
        )
        return float(val)

    def stability_ratio(self) -> float:
        """C / (2 D), the channel functional bounding the degree-2 mass.

        Near the useless BSC (p -> 1/2) both C and D vanish quadratically;
        a series expansion takes over once 1 - 2p drops below 1e-4 so the
        limit stays computable.  Exactly useless channels raise.
        """
        if self.kind == BSC:
            delta = 1.0 - 2.0 * self.param
            if delta == 0.0:
                raise ChannelError("stability ratio undefined: D = 0")
            if delta < _BSC_SERIES_CUTOFF:
                return _bsc_stability_series(delta)
        d = self.d_functional()
        if d <= 0.0:
            raise ChannelError("stability ratio undefined: D = 0")
        return self.capacity() / (2.0 * d)

    def llr_density(
        self, n_bins: int = DEFAULT_N_BINS, l_max: float = DEFAULT_L_MAX
    ) -> "QuantizedDensity":
        """Quantize the channel LLR density onto a symmetric grid.

        Point masses are split between the two neighboring grid magnitudes
        in pair space (a pair = the +-l bins with the tilt fixed by channel
        symmetry), which keeps the symmetry condition exact on the grid.
        Mass beyond +-l_max accumulates in the saturation bins.
        """
        grid = Grid(n_bins, l_max)
        pm = np.zeros(grid.half + 1)
        if self.kind == BEC:
            pm[0] = self.param
            pm[-1] += 1.0 - self.param
        elif self.kind == BSC:
            p = self.param
            if p == 0.0:
                pm[-1] = 1.0
            elif p == 0.5:
                pm[0] = 1.0
            else:
                _deposit_pair(pm, grid, math.log((1.0 - p) / p), 1.0)
        else:
            mean = 2.0 / self.param**2
            sd = 2.0 / self.param
            lam = grid.magnitudes
            half_step = grid.step / 2.0
            upper = np.minimum(lam + half_step, grid.l_max)
            lower = np.concatenate(([-(half_step)], lam[1:] - half_step))
            pos = norm.cdf(upper, loc=mean, scale=sd) - norm.cdf(
                lower, loc=mean, scale=sd
            )
            neg = norm.cdf(-lower, loc=mean, scale=sd) - norm.cdf(
                -upper, loc=mean, scale=sd
            )
            pm = pos + neg
            pm[0] = norm.cdf(half_step, loc=mean, scale=sd) - norm.cdf(
                -half_step, loc=mean, scale=sd
            )
            pm[-1] = norm.sf(grid.l_max - half_step, loc=mean, scale=sd) + norm.cdf(
                -(grid.l_max - half_step), loc=mean, scale=sd
            )
        return QuantizedDensity.from_pair_masses(grid, pm, check_symmetry=True)

    def sample_llr(self, transmitted_bit: int, rng: np.random.Generator) -> float:
        """Draw one channel LLR for the given transmitted bit.

        Saturated observations return +-inf sentinels; callers clamp as
        needed.  Deterministic given the caller-owned rng state.
        """
        sign = 1.0 if transmitted_bit == 0 else -1.0
        if self.kind == BEC:
            return 0.0 if rng.random() < self.param else sign * math.inf
        if self.kind == BSC:
            p = self.param
            if p == 0.5:
                return 0.0
            flip = rng.random() < p
            magn = math.inf if p == 0.0 else math.log((1.0 - p) / p)
            return (-sign if flip else sign) * magn
        y = sign + self.param * rng.standard_normal()
        return 2.0 * y / self.param**2

    def transmit(self, bit: int, rng: np.random.Generator):
        """Send one hard bit: BEC returns bit-or-None, soft channels an LLR."""
        if self.kind == BEC:
            return None if rng.random() < self.param else int(bit)
        return self.sample_llr(bit, rng)


def from_entropy(kind: str, entropy: float) -> ChannelModel:
    """Build the channel of a family with the requested entropy H = 1 - C."""
    if not 0.0 <= entropy <= 1.0:
        raise ChannelError(f"entropy {entropy!r} outside [0, 1]")
    if kind == BEC:
        return ChannelModel(BEC, entropy)
    if kind == BSC:
        if entropy == 0.0:
            return ChannelModel(BSC, 0.0)
        if entropy == 1.0:
            return ChannelModel(BSC, 0.5)
        p = brentq(lambda q: binary_entropy(q) - entropy, 0.0, 0.5, xtol=1e-12)
        return ChannelModel(BSC, float(p))
    if kind == BAWGNC:
        if entropy == 0.0:
            raise ChannelError("noiseless BAWGNC needs sigma = 0, not representable")
        sigma = brentq(
            lambda s: _bawgnc_capacity(s) - (1.0 - entropy), 1e-3, 80.0, xtol=1e-11
        )
        return ChannelModel(BAWGNC, float(sigma))
    raise ChannelError(f"unknown channel family {kind!r}")


def min_stability_search(kind: str, resolution: float = 1e-4):
    """Scan a channel family for the smallest C/(2D) value.

    Returns (min_value, arg_param).  For the BSC the infimum sits at the
    useless boundary p -> 1/2; it is reported as a limit value at p = 1/2,
    not an attained point.
    """
    if kind == BEC:
        # C = D = 1 - eps, ratio identically 1/2
        return 0.5, 0.0
    if kind == BSC:
        lo, hi = resolution, 0.5
        ratio = _bsc_ratio_or_limit
    elif kind == BAWGNC:
        lo, hi = 0.2, 10.0
        ratio = lambda s: ChannelModel(BAWGNC, s).stability_ratio()  # noqa: E731
    else:
        raise ChannelError(f"unknown channel family {kind!r}")

    params = np.linspace(lo, hi, 41)
    for _ in range(4):
        values = [ratio(p) for p in params]
        i = int(np.argmin(values))
        lo_i = params[max(i - 1, 0)]
        hi_i = params[min(i + 1, len(params) - 1)]
        best, best_param = values[i], params[i]
        if hi_i - lo_i < resolution:
            break
        params = np.linspace(lo_i, hi_i, 41)
    return float(best), float(best_param)


def _bsc_ratio_or_limit(p: float) -> float:
    if p == 0.5:
        return _bsc_stability_series(0.0)
    return ChannelModel(BSC, p).stability_ratio()


def _bsc_stability_series(delta: float) -> float:
    # C = sum_k delta^(2k) / (2k(2k-1) ln 2);  D = delta^2
    # ratio = (1/ln 2) (1/4 + delta^2/24 + delta^4/60 + delta^6/112)
    d2 = delta * delta
    return (0.25 + d2 / 24.0 + d2 * d2 / 60.0 + d2 * d2 * d2 / 112.0) / math.log(2.0)


@lru_cache(maxsize=16)
def _bawgnc_capacity(sigma: float) -> float:
    # C = 1 - E[log2(1 + e^{-l})] with l ~ N(2/sigma^2, 4/sigma^2)
    mean = 2.0 / sigma**2
    sd = 2.0 / sigma

    def integrand(l):
        return norm.pdf(l, loc=mean, scale=sd) * np.logaddexp(0.0, -l)

    val, _ = quad(
        integrand,
        mean - 40.0 * sd,
        mean + 40.0 * sd,
        epsabs=1e-12,
        epsrel=1e-11,
        limit=200,
    )
    return float(1.0 - val / math.log(2.0))


@dataclass(frozen=True)
class Grid:
    """Uniform symmetric LLR grid: n_bins steps across [-l_max, +l_max].

    Mass sits on the n_bins + 1 grid points k * step for k in [-half, half];
    the two end points are the saturation bins.  n_bins must be even so the
    zero-LLR point is on the grid.
    """

    n_bins: int
    l_max: float

    def __post_init__(self):
        if self.n_bins < 64 or self.n_bins % 2:
            raise ChannelError("n_bins must be even and >= 64")
        if not self.l_max > 0.0:
            raise ChannelError("l_max must be positive")

    @property
    def half(self) -> int:
        return self.n_bins // 2

    @property
    def size(self) -> int:
        return self.n_bins + 1

    @property
    def step(self) -> float:
        return self.l_max / self.half

    @cached_property
    def centers(self) -> np.ndarray:
        c = np.arange(-self.half, self.half + 1) * self.step
        c.setflags(write=False)
        return c

    @cached_property
    def magnitudes(self) -> np.ndarray:
        m = np.arange(self.half + 1) * self.step
        m.setflags(write=False)
        return m

    @cached_property
    def pair_pos_fraction(self) -> np.ndarray:
        """Positive-bin share of a symmetric pair at each magnitude."""
        f = 1.0 / (1.0 + np.exp(-self.magnitudes))
        f.setflags(write=False)
        return f

    def doubled(self) -> "Grid":
        return Grid(2 * self.n_bins, self.l_max)


DEFAULT_GRID = Grid(DEFAULT_N_BINS, DEFAULT_L_MAX)


def _deposit_pair(pm: np.ndarray, grid: Grid, magnitude: float, mass: float):
    """Split pair mass between the two neighboring grid magnitudes.

    The split preserves the pair's hard-decision error probability
    1/(1+e^l) exactly (and everything else to second order in the step),
    so e.g. a quantized BSC density keeps error probability p to the bit.
    """
    half = grid.half
    f = magnitude / grid.step
    k = int(f)
    if k >= half:
        pm[half] += mass
        return
    q = 1.0 / (1.0 + math.exp(magnitude))
    q_lo = 1.0 / (1.0 + math.exp(grid.magnitudes[k]))
    q_hi = 1.0 / (1.0 + math.exp(grid.magnitudes[k + 1]))
    alpha = (q - q_hi) / (q_lo - q_hi)
    pm[k] += mass * alpha
    pm[k + 1] += mass * (1.0 - alpha)


@dataclass(frozen=True)
class QuantizedDensity:
    """Probability masses on an LLR grid, normalized to 1 within 1e-10."""

    grid: Grid
    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float)
        if m.shape != (self.grid.size,):
            raise ChannelError(
                f"mass vector has shape {m.shape}, grid needs ({self.grid.size},)"
            )
        if np.any(m < -1e-12):
            raise ChannelError("negative mass")
        total = m.sum()
        if abs(total - 1.0) > 1e-10:
            raise ChannelError(f"density mass {total!r} not normalized")
        m = np.maximum(m, 0.0)
        m = m / m.sum()
        m.setflags(write=False)
        object.__setattr__(self, "mass", m)

    # -- constructors ------------------------------------------------------

    @classmethod
    def neutral(cls, grid: Grid = DEFAULT_GRID) -> "QuantizedDensity":
        """All mass at LLR 0 (pure erasure / no information)."""
        m = np.zeros(grid.size)
        m[grid.half] = 1.0
        return cls(grid, m)

    @classmethod
    def known(cls, grid: Grid = DEFAULT_GRID) -> "QuantizedDensity":
        """All mass at +saturation (perfectly known bit)."""
        m = np.zeros(grid.size)
        m[-1] = 1.0
        return cls(grid, m)

    @classmethod
    def from_pair_masses(
        cls, grid: Grid, pair_mass: np.ndarray, check_symmetry: bool = False
    ) -> "QuantizedDensity":
        """Expand magnitude-pair masses into the full signed grid."""
        d = cls(grid, recompose_pairs(grid, pair_mass))
        if check_symmetry:
            defect = symmetry_defect(d)
            if defect > 1e-6:
                raise ChannelError(f"symmetry defect {defect:g} exceeds 1e-6")
        return d

    # -- functionals -------------------------------------------------------

    def entropy(self) -> float:
        """Entropy functional: expected log2(1 + e^{-l}); saturations count 0/+."""
        lam = self.grid.centers
        kernel = np.logaddexp(0.0, -lam) / math.log(2.0)
        kernel[-1] = 0.0  # +saturation behaves as a perfectly known bit
        return float(self.mass @ kernel)

    def capacity(self) -> float:
        return 1.0 - self.entropy()

    def d_value(self) -> float:
        """Expected tanh(l/2); saturation bins count as +-1."""
        kernel = np.tanh(self.grid.centers / 2.0)
        kernel[0], kernel[-1] = -1.0, 1.0
        return float(self.mass @ kernel)

    def error_prob(self) -> float:
        """Hard-decision error: mass on negative LLRs plus half the zero mass."""
        half = self.grid.half
        return float(self.mass[:half].sum() + 0.5 * self.mass[half])

    def mean(self) -> float:
        return float(self.mass @ self.grid.centers)

    def var(self) -> float:
        mu = self.mean()
        return float(self.mass @ (self.grid.centers - mu) ** 2)

    def pair_masses(self) -> np.ndarray:
        return decompose_pairs(self.grid, self.mass)


def decompose_pairs(grid: Grid, mass: np.ndarray) -> np.ndarray:
    """Collapse a signed-grid mass vector to magnitude-pair masses."""
    half = grid.half
    pm = np.empty(half + 1)
    pm[0] = mass[half]
    pm[1:] = mass[half + 1 :] + mass[half - 1 :: -1]
    return pm


def recompose_pairs(grid: Grid, pair_mass: np.ndarray) -> np.ndarray:
    """Expand magnitude-pair masses onto the signed grid.

    Each pair is split with the canonical symmetric tilt
    mass(-l) = e^{-l} mass(+l), so the result satisfies the symmetry
    condition exactly.  The saturation pair goes entirely to +saturation:
    it stands for perfectly known bits, and its nominal tilt e^{-l_max}
    sits below every tolerance in use.
    """
    half = grid.half
    pm = np.asarray(pair_mass, dtype=float)
    if pm.shape != (half + 1,):
        raise ChannelError("pair mass vector has wrong length")
    pos = pm * grid.pair_pos_fraction
    mass = np.empty(grid.size)
    mass[half] = pm[0]
    mass[half + 1 :] = pos[1:]
    mass[half - 1 :: -1] = pm[1:] - pos[1:]
    mass[-1] = pm[-1]
    mass[0] = 0.0
    return mass


def symmetry_defect(density: QuantizedDensity, smooth: int = 5) -> float:
    """Largest smoothed violation of mass(-l) = e^{-l} mass(l) over bin pairs."""
    grid = density.grid
    half = grid.half
    neg = density.mass[half - 1 :: -1]
    tilted_pos = density.mass[half + 1 :] * np.exp(-grid.magnitudes[1:])
    kernel = np.ones(smooth) / smooth
    a = np.convolve(neg, kernel, mode="same")
    b = np.convolve(tilted_pos, kernel, mode="same")
    return float(np.max(np.abs(a - b)))
