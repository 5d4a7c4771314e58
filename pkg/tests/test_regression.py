import numpy as np
import pytest

from ddpvf.distributions import DomainError, FrailtySpec, Variant, theta_from_cure_fraction
from ddpvf.regression import (
    DimensionError,
    ModelParameters,
    ParameterLayout,
    SurvivalData,
    SurvivalRecord,
    expit,
    link_alpha,
    link_beta,
    link_cure,
    natural_jacobian,
    pack_parameters,
    subject_model,
    unpack_parameters,
)


def rec(x=0.0, time=1.0, event=0):
    row = (1.0, x)
    return SurvivalRecord(time, event, row, row, row)


class TestLinks:
    def test_alpha(self):
        zeta = (0.7, -0.16)
        assert link_alpha((1, 0), zeta) == pytest.approx(2.01, abs=0.005)
        assert link_alpha((1, 1), zeta) == pytest.approx(1.72, abs=0.005)
        assert link_alpha((1, 1), (0.45, 0.64)) == pytest.approx(2.97, abs=0.005)
        assert link_alpha((1, 1), (0.0, 0.0)) == 1.0

    def test_beta(self):
        eta = (7.3, -1.4)
        assert 0.0006 <= link_beta((1, 0), eta) <= 0.0007
        assert link_beta((1, 1), eta) == pytest.approx(0.0027, abs=5e-5)
        assert link_beta((1, 1), (8.0, -1.5)) == pytest.approx(np.exp(-6.5), rel=1e-14)
        assert link_beta((1, 0), (0.0, 0.0)) == 1.0

    def test_cure(self):
        assert link_cure((1, 0), (-0.6, -1.5)) == pytest.approx(0.35, abs=0.005)
        assert link_cure((1, 1), (-0.6, -1.5)) == pytest.approx(0.11, abs=0.005)
        assert link_cure((1, 0), (1.5, -5.0)) == pytest.approx(0.81, abs=0.01)
        assert 0.02 <= link_cure((1, 1), (1.5, -5.0)) <= 0.03
        assert link_cure((1, 1), (0.0, 0.0)) == 0.5

    def test_expit_extremes(self):
        assert expit(800.0) == 1.0
        assert expit(-800.0) == 0.0
        assert expit(-40.0) == pytest.approx(np.exp(-40.0), rel=1e-12)

    def test_cure_depends_only_on_linear_predictor(self):
        a = link_cure((1, 2.0), (0.3, 0.5))
        b = link_cure((1, 2.0), (0.3 + 1.0, 0.5 - 0.5))
        assert a == pytest.approx(b, rel=1e-15)

    @pytest.mark.parametrize("link,sign", [(link_alpha, 1), (link_beta, -1), (link_cure, 1)])
    def test_monotone_in_coefficients(self, link, sign):
        row = (1.0, 0.7)
        for j in range(2):
            coef = np.array([0.2, -0.4])
            bumped = coef.copy()
            bumped[j] += 1e-4
            diff = link(row, bumped) - link(row, coef)
            assert np.sign(diff) == sign

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            link_alpha((1, 0, 1), (0.1, 0.2))


class TestRecords:
    def test_valid(self):
        r = rec(1.0, 2.5, 1)
        assert r.w == (1.0, 1.0)

    @pytest.mark.parametrize("kw", [dict(time=0.0), dict(time=-1.0), dict(event=2)])
    def test_domain(self, kw):
        base = dict(time=1.0, event=0, w=(1.0,), x=(1.0,), z=(1.0,))
        base.update(kw)
        with pytest.raises(DomainError):
            SurvivalRecord(**base)

    def test_intercept_required(self):
        with pytest.raises(DimensionError):
            SurvivalRecord(1.0, 0, (0.0, 1.0), (1.0,), (1.0,))

    def test_data_round_trip(self):
        records = [rec(0.0, 1.0, 1), rec(1.0, 2.0, 0), rec(1.0, 3.5, 1)]
        data = SurvivalData.from_records(records)
        assert len(data) == 3
        assert data.shape == (2, 2, 2)
        assert data.records() == records

    def test_data_rejects_bad_rows(self):
        with pytest.raises(DomainError):
            SurvivalData([1.0, 0.0], [1, 0], np.ones((2, 1)), np.ones((2, 1)), np.ones((2, 1)))
        with pytest.raises(DimensionError):
            SurvivalData([1.0, 2.0], [1, 0], np.ones((3, 1)), np.ones((2, 1)), np.ones((2, 1)))


class TestSubjectModel:
    def test_zero_coefficients(self):
        p = ModelParameters((0.0,), (0.0,), (0.0,), FrailtySpec.gamma_frailty(0.5))
        r = SurvivalRecord(1.0, 0, (1.0,), (1.0,), (1.0,))
        m = subject_model(r, p)
        assert m.dagum.alpha == 1.0 and m.dagum.beta == 1.0
        assert m.cure_fraction() == pytest.approx(0.5, rel=1e-12)
        assert m.dagum.theta == pytest.approx(
            theta_from_cure_fraction(0.5, FrailtySpec.gamma_frailty(0.5)), rel=1e-14)

    def test_scenario_one(self):
        p = ModelParameters((0.7, -0.16), (7.3, -1.4), (-0.6, -1.5), FrailtySpec.gamma_frailty(0.5))
        m = subject_model(rec(0.0), p)
        assert m.dagum.alpha == pytest.approx(2.01, abs=0.005)
        assert m.dagum.beta == pytest.approx(0.0006, abs=1e-4)
        assert m.cure_fraction() == pytest.approx(0.35, abs=0.005)

    def test_scenario_two_no_cure_group(self):
        p = ModelParameters((0.45, 0.64), (8.0, -1.5), (1.5, -5.0), FrailtySpec.pvf(0.73, 5.0))
        assert subject_model(rec(1.0), p).dagum.theta == pytest.approx(1.0, abs=1e-3)

    def test_underflowing_cure_is_proper(self):
        p = ModelParameters((0.0,), (0.0,), (-800.0,), FrailtySpec.gamma_frailty(1.0))
        r = SurvivalRecord(1.0, 0, (1.0,), (1.0,), (1.0,))
        assert subject_model(r, p).dagum.theta == 1.0


class TestPacking:
    @pytest.mark.parametrize("frailty", [FrailtySpec.none(), FrailtySpec.gamma_frailty(0.3),
                                         FrailtySpec.inverse_gaussian(2.0),
                                         FrailtySpec.pvf(0.73, 11.0)])
    def test_round_trip(self, frailty):
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = ModelParameters(rng.normal(size=2), rng.normal(size=3), rng.normal(size=1), frailty)
            layout = ParameterLayout.for_params(p)
            back = unpack_parameters(pack_parameters(p, layout), layout)
            np.testing.assert_allclose(back.natural_vector(), p.natural_vector(), rtol=1e-14)
            assert back.frailty.variant is frailty.variant

    def test_unit_points(self):
        p = ModelParameters((0.0,), (0.0,), (0.0,), FrailtySpec.pvf(0.5, 1.0))
        v = pack_parameters(p)
        assert v[-1] == 0.0 and v[-2] == 0.0

    def test_fixed_gamma_layout(self):
        p = ModelParameters((0.0,), (0.0,), (0.0,), FrailtySpec.pvf(0.3, 2.0))
        layout = ParameterLayout.for_params(p, fix_gamma=True)
        assert layout.size == 4 and not layout.free_gamma
        back = unpack_parameters(pack_parameters(p, layout), layout)
        assert back.frailty.gamma == 0.3

    def test_jacobian_matches_finite_differences(self):
        p = ModelParameters((0.1,), (0.2,), (0.3,), FrailtySpec.pvf(0.6, 2.0))
        layout = ParameterLayout.for_params(p)
        x = pack_parameters(p, layout)
        J = natural_jacobian(x, layout)
        h = 1e-6
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = h
            col = (unpack_parameters(x + e, layout).natural_vector()
                   - unpack_parameters(x - e, layout).natural_vector()) / (2 * h)
            np.testing.assert_allclose(J[:, j], col, atol=1e-8)

    def test_wrong_length(self):
        layout = ParameterLayout(1, 1, 1, Variant.GAMMA)
        with pytest.raises(DimensionError):
            unpack_parameters(np.zeros(3), layout)
