"""Generator-node degree distributions and the Poisson information-bit limit.

A rateless stream draws each output symbol's degree d from a distribution
R(x) = sum_d R_d x^d.  As the number of symbols grows at fixed rate, the
information bits see a Poisson degree distribution lambda(y) = exp(l_avg(y-1)).
This module holds both objects plus the necessary-condition validator for
channel universality (no degree-1 mass, bounded degree-2 mass).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

# Upper bound on the degree-2 probability for a distribution to remain
# capacity-compatible over every binary-input symmetric channel: 1/(4 ln 2).
R2_UNIVERSAL_BOUND = 1.0 / (4.0 * math.log(2.0))

_NORMALIZATION_TOL = 1e-12


class DistributionError(ValueError):
    """Invalid degree distribution (bad mass, bad normalization, bad degree)."""


@dataclass(frozen=True, eq=False)
class DegreeDistribution:
    """Probability distribution over generator-node degrees 1..d_max.

    ``coeffs[d]`` is the probability of degree d; index 0 is kept for
    alignment and must stay zero (a degree-0 output symbol carries no
    information and is rejected).  Instances are immutable and safe to share
    across threads.
    """

    coeffs: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, DegreeDistribution):
            return NotImplemented
        return self.coeffs.shape == other.coeffs.shape and bool(
            np.all(self.coeffs == other.coeffs)
        )

    def __hash__(self):
        return hash(self.coeffs.tobytes())

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).copy()
        if c.ndim != 1 or c.size < 2:
            raise DistributionError("need at least a degree-1 slot")
        if np.any(c < 0.0):
            raise DistributionError("negative degree probability")
        if c[0] != 0.0:
            raise DistributionError("degree-0 mass is not allowed")
        total = c.sum()
        if abs(total - 1.0) > _NORMALIZATION_TOL:
            raise DistributionError(
                f"degree probabilities sum to {total!r}, expected 1 within "
                f"{_NORMALIZATION_TOL:g}"
            )
        c /= total  # absorb sub-tolerance rounding drift
        # trim trailing zero degrees so d_max has positive mass
        d_max = int(np.max(np.nonzero(c)[0]))
        c = c[: d_max + 1]
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def from_pairs(cls, pairs) -> "DegreeDistribution":
        """Build from (degree, probability) pairs, the config-file format."""
        pairs = list(pairs)
        if not pairs:
            raise DistributionError("empty distribution")
        degrees = [int(d) for d, _ in pairs]
        if len(set(degrees)) != len(degrees):
            raise DistributionError("duplicate degree entries")
        if min(degrees) < 0:
            raise DistributionError("negative degree")
        c = np.zeros(max(degrees) + 1)
        for d, p in pairs:
            c[int(d)] = float(p)
        return cls(c)

    @property
    def d_max(self) -> int:
        return len(self.coeffs) - 1

    @property
    def avg_degree(self) -> float:
        """Mean generator degree R'(1)."""
        return float(np.arange(len(self.coeffs)) @ self.coeffs)

    def coeff(self, d: int) -> float:
        """Probability of degree d (0 outside the stored range)."""
        if 0 <= d <= self.d_max:
            return float(self.coeffs[d])
        return 0.0

    def pairs(self):
        """(degree, probability) pairs with positive mass, ascending degree."""
        return [(int(d), float(self.coeffs[d])) for d in np.nonzero(self.coeffs)[0]]

    def eval(self, x: float) -> float:
        """Evaluate R(x) for x in [0, 1]."""
        _check_unit_interval(x)
        return float(np.polynomial.polynomial.polyval(x, self.coeffs))

    def eval_deriv(self, x: float) -> float:
        """Evaluate R'(x) for x in [0, 1]."""
        _check_unit_interval(x)
        dcoeffs = self.coeffs[1:] * np.arange(1, len(self.coeffs))
        return float(np.polynomial.polynomial.polyval(x, dcoeffs))

    def eval_edge(self, x: float) -> float:
        """Edge-perspective polynomial rho(x) = R'(x) / R'(1).

        Computed as an explicit ratio so eval_edge(1.0) == 1.0 exactly.
        """
        _check_unit_interval(x)
        if x == 1.0:
            return 1.0
        return self.eval_deriv(x) / self.avg_degree

    def edge_coeffs(self) -> np.ndarray:
        """rho_d = d R_d / R'(1) indexed by degree d (edge-perspective)."""
        c = self.coeffs * np.arange(len(self.coeffs)) / self.avg_degree
        c.setflags(write=False)
        return c

    @cached_property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.coeffs)
        c.setflags(write=False)
        return c

    def degree_from_uniform(self, u: float) -> int:
        """Map a uniform [0,1) draw to a degree via the inverse CDF.

        The codec uses this for counter-mode symbol derivation, so the
        mapping must stay stable: it is a plain cumulative-sum search.
        """
        return int(np.searchsorted(self.cdf, u, side="right"))

    def sample_degree(self, rng: np.random.Generator) -> int:
        """Draw one degree; deterministic given the caller-owned rng state."""
        return self.degree_from_uniform(rng.random())


@dataclass(frozen=True)
class PoissonEdgeDist:
    """Poisson degree distribution of the information bits.

    ``l_avg`` is the mean number of edges per information bit; the
    edge- and node-perspective generating functions coincide and equal
    lambda(y) = exp(l_avg (y - 1)).
    """

    l_avg: float

    def __post_init__(self):
        if not self.l_avg > 0.0:
            raise DistributionError("l_avg must be positive")

    def eval(self, y: float) -> float:
        """lambda(y) = exp(l_avg (y - 1)); equals 1 at y = 1."""
        return math.exp(self.l_avg * (y - 1.0))

    def invert(self, x: float) -> float:
        """Solve x = lambda(y) for y; defined for x >= exp(-l_avg)."""
        if not 0.0 < x <= 1.0:
            raise ValueError("lambda inverse needs x in (0, 1]")
        return 1.0 + math.log(x) / self.l_avg

    def weights(self, trunc: int) -> np.ndarray:
        """Poisson pmf over 0..trunc (untruncated weights)."""
        k = np.arange(trunc + 1)
        logs = -self.l_avg + k * math.log(self.l_avg) - _log_factorial(k)
        return np.exp(logs)


@dataclass(frozen=True)
class UniversalityReport:
    """Necessary conditions for a distribution to work on every BMS channel."""

    r1_ok: bool
    r2_ok: bool
    r2_value: float
    r2_bound: float
    avg_degree: float


def check_universality(dist: DegreeDistribution) -> UniversalityReport:
    """Check R_1 = 0 and R_2 <= 1/(4 ln 2).

    These are necessary, not sufficient; the report only flags violations.
    """
    r1 = dist.coeff(1)
    r2 = dist.coeff(2)
    return UniversalityReport(
        r1_ok=(r1 == 0.0),
        r2_ok=(r2 <= R2_UNIVERSAL_BOUND + 1e-12),
        r2_value=r2,
        r2_bound=R2_UNIVERSAL_BOUND,
        avg_degree=dist.avg_degree,
    )


def _check_unit_interval(x: float):
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"argument {x!r} outside [0, 1]")


def _log_factorial(k: np.ndarray) -> np.ndarray:
    from scipy.special import gammaln

    return gammaln(np.asarray(k, dtype=float) + 1.0)
