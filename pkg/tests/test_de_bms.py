import numpy as np
import pytest

from cltool import de_bec, de_bms
from cltool.channel import (
    ChannelModel,
    Grid,
    QuantizedDensity,
    from_entropy,
    symmetry_defect,
)
from cltool.de_bec import EnsembleSpec
from cltool.degree import DegreeDistribution, PoissonEdgeDist

R1 = DegreeDistribution.from_pairs([(1, 0.02), (2, 0.6), (13, 0.38)])
R2 = DegreeDistribution.from_pairs([(2, 0.360), (3, 0.313), (22, 0.327)])
GRID = de_bms.DEFAULT_GRID


def bec_density(era, grid=GRID):
    m = np.zeros(grid.size)
    m[grid.half] = era
    m[-1] = 1.0 - era
    return QuantizedDensity(grid, m)


class TestVarUpdate:
    def test_perfect_messages_stay_perfect(self):
        # up to the Poisson residual-degree-0 mass e^{-l_avg}, which emits
        # the neutral density (no inputs); matches the scalar lambda(0)
        pois = PoissonEdgeDist(12.32)
        out = de_bms.var_update([QuantizedDensity.known(GRID)], pois)
        assert out.mass[-1] == pytest.approx(1.0 - pois.eval(0.0), abs=1e-12)
        assert out.mass[GRID.half] == pytest.approx(pois.eval(0.0), abs=1e-12)

    def test_degenerate_mean_gives_neutral(self):
        out = de_bms.var_update([QuantizedDensity.neutral(GRID)], PoissonEdgeDist(1e-9))
        assert out.mass[GRID.half] == pytest.approx(1.0, abs=1e-9)

    @pytest.mark.parametrize("y", [0.9, 0.6, 0.31, 0.05])
    def test_bec_embedding_matches_scalar_lambda(self, y):
        pois = PoissonEdgeDist(12.32)
        out = de_bms.var_update([bec_density(y)], pois)
        assert out.mass[GRID.half] == pytest.approx(pois.eval(y), abs=1e-6)
        # and only the two embedding bins carry mass
        assert out.mass[GRID.half] + out.mass[-1] == pytest.approx(1.0, abs=1e-12)

    def test_window_averaging(self):
        pois = PoissonEdgeDist(12.32)
        out = de_bms.var_update([bec_density(0.2), bec_density(0.8)], pois)
        assert out.mass[GRID.half] == pytest.approx(pois.eval(0.5), abs=1e-9)

    def test_truncation_parameter_respected(self):
        pois = PoissonEdgeDist(8.0)
        full = de_bms.var_update([bec_density(0.5)], pois)
        trunc = de_bms.var_update([bec_density(0.5)], pois, trunc=60)
        assert np.max(np.abs(full.mass - trunc.mass)) < 1e-9

    def test_mixed_grid_rejected(self):
        with pytest.raises(de_bec.DEError):
            de_bms.var_update(
                [bec_density(0.5), bec_density(0.5, Grid(1024, 30.0))],
                PoissonEdgeDist(2.0),
            )


class TestGenUpdate:
    def test_noiseless_channel_perfect_messages(self):
        out = de_bms.gen_update(
            [QuantizedDensity.known(GRID)], ChannelModel("BSC", 0.0), R1
        )
        assert out.mass[-1] == pytest.approx(1.0, abs=1e-12)

    def test_useless_channel_kills_d_functional(self):
        out = de_bms.gen_update([bec_density(0.3)], ChannelModel("BSC", 0.5), R1)
        assert abs(out.d_value()) < 1e-8

    @pytest.mark.parametrize("x", [0.9, 0.5, 0.12])
    def test_bec_embedding_matches_scalar_rho(self, x):
        eps = 0.37
        out = de_bms.gen_update([bec_density(x)], ChannelModel("BEC", eps), R1)
        want = 1.0 - (1.0 - eps) * R1.eval_edge(1.0 - x)
        assert out.mass[GRID.half] == pytest.approx(want, abs=1e-6)

    def test_outputs_normalized_and_symmetric(self):
        ch = ChannelModel("BSC", 0.11)
        incoming = ch.llr_density()
        out = de_bms.gen_update([incoming], ch, R2)
        assert out.mass.sum() == pytest.approx(1.0, abs=1e-9)
        assert symmetry_defect(out) < 1e-5

    def test_var_output_symmetric_too(self):
        ch = ChannelModel("BSC", 0.11)
        mixed = de_bms.gen_update([ch.llr_density()], ch, R2)
        out = de_bms.var_update([mixed], PoissonEdgeDist(17.706))
        assert out.mass.sum() == pytest.approx(1.0, abs=1e-9)
        assert symmetry_defect(out) < 1e-5


class TestErrorProb:
    def test_known_is_zero(self):
        assert de_bms.error_prob(QuantizedDensity.known(GRID)) == 0.0

    def test_neutral_is_half(self):
        assert de_bms.error_prob(QuantizedDensity.neutral(GRID)) == 0.5

    @pytest.mark.parametrize("p", [0.05, 0.11, 0.3])
    def test_bsc_density_error_is_crossover(self, p):
        d = ChannelModel("BSC", p).llr_density()
        assert de_bms.error_prob(d) == pytest.approx(p, abs=1e-9)


class TestForwardDE:
    def test_noiseless_reaches_all_known(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=4, w=2)
        res = de_bms.forward_de(spec, ChannelModel("BEC", 0.0), tol=1e-9, max_iter=300)
        assert res.converged
        # half the residual degree-0 neutral mass e^{-l_avg} remains
        assert np.max(res.profile.error_probs()) < 0.51 * spec.pois.eval(0.0)

    @pytest.mark.parametrize("eps", [0.30, 0.42])
    def test_uncoupled_bec_matches_scalar_de(self, eps):
        spec = EnsembleSpec.from_rate(R1, 0.5)
        bms = de_bms.forward_de(spec, ChannelModel("BEC", eps), tol=1e-10, max_iter=4000)
        scalar = de_bec.forward_de(spec, eps, tol=1e-10)
        assert bms.profile.info[0][GRID.half] == pytest.approx(
            scalar.profile.x[0], abs=1e-4
        )

    def test_coupled_bec_matches_scalar_de(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=8, w=2)
        eps = 0.45
        bms = de_bms.forward_de(spec, ChannelModel("BEC", eps), tol=1e-10, max_iter=20000)
        scalar = de_bec.forward_de(spec, eps, tol=1e-10)
        got = bms.profile.info[:, GRID.half]
        assert np.max(np.abs(got - scalar.profile.x)) < 1e-4

    def test_error_prob_monotone_over_iterations(self):
        spec = EnsembleSpec.from_rate(R1, 0.5)
        ch = from_entropy("BSC", 0.25)
        prev = 0.5
        info = None
        for _ in range(12):
            res = de_bms.forward_de(spec, ch, tol=1e-12, max_iter=1, info0=info)
            info = res.profile.info
            ep = float(res.profile.error_probs().max())
            assert ep <= prev + 1e-9
            prev = ep

    def test_degradation_in_channel_parameter(self):
        spec = EnsembleSpec.from_rate(R1, 0.5)
        eps = []
        for h in (0.10, 0.18, 0.26, 0.34, 0.42):
            ch = from_entropy("BSC", h)
            res = de_bms.forward_de(spec, ch, tol=1e-9, max_iter=1500)
            eps.append(float(res.profile.error_probs().max()))
        assert np.all(np.diff(eps) >= -1e-9)

    def test_small_coupled_bsc_decodes_below_threshold(self):
        spec = EnsembleSpec.from_rate(R2, 0.5, L=4, w=2)
        ch = from_entropy("BSC", 0.30)
        floor = de_bms.floor_error_prob(spec, ch, tol=1e-8, max_iter=400)
        res = de_bms.forward_de(
            spec, ch, tol=1e-8, max_iter=400, decode_target=10 * floor
        )
        assert res.decoded_early or np.max(res.profile.error_probs()) <= 10 * floor

    def test_small_coupled_bsc_stalls_above_threshold(self):
        spec = EnsembleSpec.from_rate(R2, 0.5, L=4, w=2)
        ch = from_entropy("BSC", 0.75)
        res = de_bms.forward_de(spec, ch, tol=1e-8, max_iter=400)
        assert np.max(res.profile.error_probs()) > 0.05

    def test_profile_densities_normalized(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=4, w=2)
        res = de_bms.forward_de(spec, from_entropy("BSC", 0.3), tol=1e-8, max_iter=60)
        for i in range(spec.L):
            assert res.profile.info[i].sum() == pytest.approx(1.0, abs=1e-9)
            assert symmetry_defect(res.profile.info_density(i)) < 1e-5
        for j in range(spec.n_gen_positions):
            assert res.profile.gen[j].sum() == pytest.approx(1.0, abs=1e-9)


class TestThreshold:
    def test_uncoupled_r2_has_no_threshold(self):
        # no degree-1 mass and no coupling: decoding never starts
        spec = EnsembleSpec.from_rate(R2, 0.8)
        th = de_bms.bp_threshold(spec, "BSC", tol_entropy=0.02, max_iter=200)
        assert th is None

    def test_bec_family_threshold_matches_scalar(self):
        # embedded-BEC bisection against the scalar-DE oracle
        spec = EnsembleSpec.from_rate(R1, 0.5)
        got = de_bms.bp_threshold(
            spec, "BEC", tol_entropy=5e-4, max_iter=20_000, bracket=(0.2, 0.6)
        )
        want = de_bec.bp_threshold(spec, tol_eps=5e-4)
        assert got == pytest.approx(want, abs=2e-3)


class TestExitProxy:
    def test_bec_proxy_equals_scalar_gexit_pointwise(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=8, w=2)
        grid_eps = [0.30, 0.42, 0.55]
        proxy = de_bms.exit_proxy_curve(spec, "BEC", grid_eps, tol=1e-10, max_iter=60_000)
        scalar = de_bec.ebp_sweep(spec, grid_eps, "down", tol=1e-10, max_iter=60_000)
        for p, s in zip(proxy, scalar):
            assert p.entropy == pytest.approx(s.eps, abs=0)
            assert p.proxy_gexit == pytest.approx(s.avg_gexit, abs=1e-6)

    def test_bec_transition_matches_scalar_sweep(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=8, w=2)
        th = de_bec.bp_threshold(spec, tol_eps=1e-4, max_iter=60_000)
        grid_eps = np.arange(th - 0.006, th + 0.006, 0.002)
        proxy = de_bms.exit_proxy_curve(
            spec, "BEC", grid_eps, tol=1e-10, max_iter=120_000
        )
        scalar = de_bec.ebp_sweep(spec, grid_eps, "down", tol=1e-10, max_iter=120_000)
        jump_p = _jump_location([(p.entropy, p.proxy_gexit) for p in proxy])
        jump_s = _jump_location([(s.eps, s.avg_gexit) for s in scalar])
        assert jump_p == pytest.approx(jump_s, abs=2e-3)

    def test_noiseless_endpoint_at_floor(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=4, w=2)
        pts = de_bms.exit_proxy_curve(spec, "BEC", [0.0], direction="up")
        assert pts[0].proxy_gexit == pytest.approx(0.0, abs=1e-3)

    def test_bad_direction(self):
        spec = EnsembleSpec.from_rate(R1, 0.5, L=4, w=2)
        with pytest.raises(de_bec.DEError):
            de_bms.exit_proxy_curve(spec, "BEC", [0.1], direction="bad")


def _jump_location(points):
    points = sorted(points)
    best, where = 0.0, points[0][0]
    for (e1, g1), (e2, g2) in zip(points, points[1:]):
        if g2 - g1 > best:
            best, where = g2 - g1, e2
    return where
