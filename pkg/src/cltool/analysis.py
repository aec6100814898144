"""Closed-form ensemble analysis: design rate, rate-loss scaling, error floor.

The coupled construction wastes the generator nodes near the chain boundary
whose picks all land outside [0, L-1]; the design-rate formula accounts for
them exactly, and the resulting rate loss decays like w/L.  LDGM ensembles
also carry an irreducible bit-error floor, lower-bounded in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .de_bec import Coupling, EnsembleSpec, ErasureProfile
from .degree import DegreeDistribution, PoissonEdgeDist


@dataclass(frozen=True)
class RateReport:
    design_rate: float
    underlying_rate: float  # m/n of the uncoupled ensemble
    rate_loss: float
    loss_scaling_estimate: float  # rate_loss * L / w

    def as_dict(self) -> dict:
        return {
            "design_rate": self.design_rate,
            "underlying_rate": self.underlying_rate,
            "rate_loss": self.rate_loss,
            "loss_scaling_estimate": self.loss_scaling_estimate,
        }


@dataclass(frozen=True)
class FloorReport:
    eps: float
    bound: float
    simulated_ber: Optional[float] = None

    def as_dict(self) -> dict:
        return {"eps": self.eps, "bound": self.bound, "simulated_ber": self.simulated_ber}


@dataclass(frozen=True)
class ScalingFit:
    constant: float  # c in rate_loss ~= c * (w/L)
    max_rel_residual: float
    degenerate: bool


def connected_generator_weight(dist: DegreeDistribution, L: int, w: int) -> float:
    """Expected connected generator nodes per n, i.e. the Lemma-style denominator.

    Interior positions always connect; a boundary position with only i of its
    w window slots in range connects with probability 1 - R(i/w), and there
    are two symmetric boundaries.
    """
    boundary = sum(1.0 - dist.eval(i / w) for i in range(1, w))
    return (L - w + 1) + 2.0 * boundary


def design_rate(spec: EnsembleSpec) -> RateReport:
    """Design rate of the coupled ensemble: mL over connected generator nodes."""
    if spec.coupling is None:
        raise ValueError("design_rate needs a coupled ensemble")
    L, w = spec.L, spec.w
    denom = connected_generator_weight(spec.dist, L, w)
    r = spec.m_over_n * L / denom
    loss = spec.m_over_n - r
    return RateReport(
        design_rate=r,
        underlying_rate=spec.m_over_n,
        rate_loss=loss,
        loss_scaling_estimate=loss * L / w,
    )


def error_floor_bound(
    pois: PoissonEdgeDist, dist: DegreeDistribution, eps: float
) -> float:
    """Lower bound on the residual bit error probability at erasure rate eps.

    Evaluates (1/2) lambda(eps) (1 + l_avg (1-eps) (1 - R'(1-lambda(eps))/R'(1))),
    clamped to [0, 1/2] (the bracket can only stray through rounding).
    """
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"erasure probability {eps!r} outside [0, 1]")
    lam = pois.eval(eps)
    bracket = 1.0 + pois.l_avg * (1.0 - eps) * (
        1.0 - dist.eval_deriv(1.0 - lam) / dist.avg_degree
    )
    return min(max(0.5 * lam * bracket, 0.0), 0.5)


def de_implied_ber(spec: EnsembleSpec, profile: ErasureProfile) -> float:
    """Bit error rate implied by a DE fixed point.

    Node-perspective erasure probability of an information bit, halved
    (an erased bit is guessed uniformly).  For the Poisson information-side
    distribution the node-perspective erasure equals the x-profile itself,
    averaged over positions.
    """
    return float(0.5 * np.mean(profile.x))


def rate_loss_scaling(
    dist: DegreeDistribution, m_over_n: float, w: int, L_list
) -> ScalingFit:
    """Least-squares fit of rate_loss(L) ~= c * (w/L) over the given chain lengths."""
    L_list = sorted(int(L) for L in L_list)
    if len(L_list) < 4:
        raise ValueError("need at least 4 chain lengths")
    if min(L_list) < 4 * w:
        raise ValueError("chain lengths must be at least 4w")
    l_avg = dist.avg_degree / m_over_n
    losses = []
    for L in L_list:
        spec = EnsembleSpec(dist, l_avg, m_over_n, coupling=Coupling(L, w))
        losses.append(design_rate(spec).rate_loss)
    losses = np.asarray(losses)
    ratios = np.asarray([w / L for L in L_list])
    if np.all(losses == 0.0):
        return ScalingFit(0.0, 0.0, False)
    c = float((losses @ ratios) / (ratios @ ratios))
    resid = float(np.max(np.abs(losses - c * ratios) / losses))
    return ScalingFit(c, resid, resid > 0.20)


def gap_to_capacity(threshold_entropy: float, rate: float) -> float:
    """Shannon entropy 1 - rate minus the measured threshold (positive = below)."""
    for name, v in (("threshold", threshold_entropy), ("rate", rate)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} {v!r} outside [0, 1]")
    return (1.0 - rate) - threshold_entropy


def simulate_connected_generators(
    spec: EnsembleSpec,
    m_per_position: int,
    n_graphs: int,
    symbols_per_graph: int,
    seed0: int = 0,
) -> np.ndarray:
    """Count generator nodes with at least one surviving neighbor, per graph.

    Uses the codec's deterministic symbol derivation; boundary pruning can
    empty a symbol's neighbor set, which is exactly what the design-rate
    denominator discounts.
    """
    from . import codec

    counts = np.empty(n_graphs, dtype=float)
    for t in range(n_graphs):
        s = codec.StreamSpec(seed=seed0 + t, m_per_position=m_per_position, spec=spec)
        counts[t] = sum(
            1 for idx in range(symbols_per_graph) if codec.derive_symbol(s, idx).neighbors
        )
    return counts


def lemma_rate_check(spec: EnsembleSpec, counts: np.ndarray, m: int, n_per_pos: float):
    """Compare mL / mean(connected) against the design-rate formula.

    Returns (mc_rate, formula_rate, z_score_of_counts); the z-score measures
    the distance of the observed mean count from the formula's expectation in
    standard errors.
    """
    mean_c = counts.mean()
    mc_rate = m * spec.L / mean_c
    expect = n_per_pos * connected_generator_weight(spec.dist, spec.L, spec.w)
    sd = counts.std(ddof=1) / math.sqrt(len(counts))
    z = (mean_c - expect) / sd if sd > 0 else 0.0
    return float(mc_rate), design_rate(spec).design_rate, float(z)
