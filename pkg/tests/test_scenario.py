"""Scenario-generation tests.

Structural claims are checked over seeded draw batches; distributional claims
(designated-dose uniformity, outcome cell frequencies) use chi-square and
3-sigma Monte Carlo checks against closed-form targets computed here.
"""
import numpy as np
import pytest
from scipy import stats as sps

from obd_lab.core import Scenario, TrialError
from obd_lab.designs import DesignId, make_config, suggested_obd
from obd_lab.designs.common import ConfigError
from obd_lab.scenario import (
    CASE_STUDY_N,
    CASE_STUDY_P_HAT,
    CASE_STUDY_Q_HAT,
    ScenarioError,
    ScenarioSpec,
    align,
    gen_case_study,
    gen_no_obd,
    gen_with_obd,
    qualifying_d_high,
    qualifying_d_star,
    sample_outcomes,
    scenarios_from_csv,
    scenarios_to_csv,
)

ALL_SHAPES = ("I", "C", "U", "IP")


@pytest.fixture(scope="module")
def all_configs():
    return tuple(make_config(d) for d in DesignId)


def spec_for(shape, **kw):
    return ScenarioSpec(shape=shape, D=kw.pop("D", 4), **kw)


class TestSpecValidation:
    def test_unknown_shape(self):
        with pytest.raises(ConfigError, match="shape"):
            ScenarioSpec(shape="Z", D=4)

    def test_dimension_floor_per_shape(self):
        with pytest.raises(ConfigError):
            ScenarioSpec(shape="I", D=0)
        with pytest.raises(ConfigError, match="peak"):
            ScenarioSpec(shape="U", D=1)
        with pytest.raises(ConfigError, match="interior"):
            ScenarioSpec(shape="IP", D=2)
        ScenarioSpec(shape="U", D=2)
        ScenarioSpec(shape="IP", D=3)

    def test_bound_ordering(self):
        with pytest.raises(ConfigError, match="p_T"):
            ScenarioSpec(shape="I", D=4, p_T=0.8, p_max=0.7)
        with pytest.raises(ConfigError, match="q_E"):
            ScenarioSpec(shape="I", D=4, q_E=0.95)
        with pytest.raises(ConfigError, match="correlation"):
            ScenarioSpec(shape="I", D=4, rho=1.0)
        with pytest.raises(ConfigError, match="correlation"):
            ScenarioSpec(shape="I", D=4, rho=-0.2)

    def test_flag_mismatch_routing(self):
        with pytest.raises(ConfigError, match="gen_no_obd"):
            gen_with_obd(spec_for("I", obd_exists=False))
        with pytest.raises(ConfigError, match="gen_with_obd"):
            gen_no_obd(spec_for("I", seed=0))


class TestGenWithObd:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_structural_invariants(self, shape):
        spec = spec_for(shape)
        rng = np.random.default_rng(17)
        for _ in range(250):
            sc = gen_with_obd(spec, rng)
            d, h = sc.d_star, sc.d_high
            assert sc.true_obd == d and d <= h
            assert sc.p[d - 1] <= spec.p_T and sc.q[d - 1] >= spec.q_E
            assert max(sc.p) <= spec.p_max and max(sc.q) <= spec.q_max
            assert sc.q[h - 1] == max(sc.q)
            if shape == "C":
                assert (d, h) == (1, 1)
            if shape == "I":
                assert h == spec.D
            if shape in ("U", "IP"):
                assert h < spec.D
            if shape == "IP":
                assert h >= 2 and sc.q[h - 1] == sc.q[-1]
            if d != h:
                assert all(v > spec.p_T for v in sc.p[d:])
                assert sc.q[h - 1] >= sc.q[d - 1]

    def test_deterministic_from_spec_seed(self):
        spec = spec_for("U", seed=99)
        assert gen_with_obd(spec) == gen_with_obd(spec)
        other = gen_with_obd(spec_for("U", seed=100))
        assert other != gen_with_obd(spec)

    @pytest.mark.parametrize("shape,levels", [
        ("I", (1, 2, 3, 4)), ("U", (1, 2, 3)), ("IP", (1, 2, 3)),
    ])
    def test_designated_dose_uniform(self, shape, levels):
        spec = spec_for(shape)
        rng = np.random.default_rng(5)
        draws = np.array([gen_with_obd(spec, rng).d_star for _ in range(40_000)])
        counts = [int(np.sum(draws == lv)) for lv in levels]
        assert sum(counts) == 40_000  # nothing outside the qualifying set
        assert sps.chisquare(counts).pvalue > 0.01

    def test_constant_shape_always_dose_one(self):
        spec = spec_for("C")
        rng = np.random.default_rng(5)
        assert {gen_with_obd(spec, rng).d_star for _ in range(500)} == {1}

    def test_qualifying_tables(self):
        assert qualifying_d_star("I", 4) == [1, 2, 3, 4]
        assert qualifying_d_star("C", 4) == [1]
        assert qualifying_d_star("U", 4) == [1, 2, 3]
        assert qualifying_d_high("U", 4, 2) == [2, 3]
        assert qualifying_d_high("IP", 4, 1) == [2, 3]
        assert qualifying_d_high("I", 4, 2) == [4]

    def test_all_qualifying_pairs_reachable(self):
        spec = spec_for("U")
        want = {(d, h) for d in (1, 2, 3) for h in range(d, 4)}
        got = set()
        rng = np.random.default_rng(23)
        for _ in range(2000):
            sc = gen_with_obd(spec, rng)
            got.add((sc.d_star, sc.d_high))
        assert got == want


class TestGenNoObd:
    @pytest.mark.parametrize("shape", ALL_SHAPES)
    def test_no_dose_admissible(self, shape, all_configs):
        spec = spec_for(shape, obd_exists=False)
        rng = np.random.default_rng(31)
        for _ in range(200):
            sc = gen_no_obd(spec, rng)
            assert sc.true_obd is None and sc.d_star is None
            for d in range(1, spec.D + 1):
                assert not (sc.p[d - 1] <= spec.p_T and sc.q[d - 1] >= spec.q_E)
        for c in all_configs:
            assert suggested_obd(c.design, sc.p, sc.q, c) is None

    def test_boundary_splits_both_occur(self):
        spec = spec_for("I", obd_exists=False)
        rng = np.random.default_rng(8)
        all_toxic = all_inactive = False
        for _ in range(300):
            sc = gen_no_obd(spec, rng)
            all_toxic |= all(v > spec.p_T for v in sc.p)
            all_inactive |= all(v < spec.q_E for v in sc.q)
        assert all_toxic and all_inactive

    def test_constant_shape_restricted_to_extremes(self):
        spec = spec_for("C", obd_exists=False)
        rng = np.random.default_rng(9)
        for _ in range(200):
            sc = gen_no_obd(spec, rng)
            assert all(v == sc.q[0] for v in sc.q)
            assert all(v > spec.p_T for v in sc.p) or sc.q[0] < spec.q_E

    def test_deterministic_from_spec_seed(self):
        spec = spec_for("IP", obd_exists=False, seed=12)
        assert gen_no_obd(spec) == gen_no_obd(spec)


class TestAlign:
    def test_alignment_holds_for_all_designs(self, all_configs):
        rng = np.random.default_rng(41)
        for shape in ALL_SHAPES:
            sc, attempts = align(spec_for(shape), all_configs, rng=rng)
            assert attempts >= 1
            for c in all_configs:
                assert suggested_obd(c.design, sc.p, sc.q, c) == sc.d_star

    def test_single_design_reduces_to_own_criterion(self):
        config = make_config(DesignId.STEIN)
        sc, _ = align(spec_for("U", seed=3), [config])
        assert suggested_obd(DesignId.STEIN, sc.p, sc.q, config) == sc.d_star

    def test_published_example_pairs_pass_alignment(self, all_configs):
        # the worked example curves use (d*, d^H) = (3,4), (1,1), (2,3), (3,3)
        # for shapes I, C, U, IP; draw aligned scenarios with those exact pairs
        targets = {"I": (3, 4), "C": (1, 1), "U": (2, 3), "IP": (3, 3)}
        rng = np.random.default_rng(55)
        for shape, pair in targets.items():
            for _ in range(4000):
                sc, _ = align(spec_for(shape), all_configs, rng=rng)
                if (sc.d_star, sc.d_high) == pair:
                    break
            else:
                pytest.fail(f"no aligned scenario with (d*, d^H)={pair} for {shape}")

    def test_empty_design_list_accepts_first_draw(self):
        sc, attempts = align(spec_for("I", seed=7), [])
        assert attempts == 1 and sc == gen_with_obd(spec_for("I", seed=7))

    def test_cap_exhaustion_names_last_design(self):
        impossible = make_config(DesignId.UBI, p_T=0.01, q_E=0.95)
        with pytest.raises(ScenarioError, match="UBI"):
            align(spec_for("I", seed=2, q_max=0.949), [impossible], cap=40)

    def test_deterministic_with_seed(self, all_configs):
        a = align(spec_for("U", seed=77), all_configs)
        b = align(spec_for("U", seed=77), all_configs)
        assert a == b


class TestSampleOutcomes:
    def test_independent_cells_match_product_form(self):
        p, q, n = 0.3, 0.6, 1_000_000
        c = sample_outcomes(p, q, 0.0, n, np.random.default_rng(2))
        targets = (q * (1 - p), (1 - p) * (1 - q), p * q, p * (1 - q))
        for got, want in zip((c.y1, c.y2, c.y3, c.y4), targets):
            se = np.sqrt(want * (1 - want) / n)
            assert abs(got / n - want) < 3 * se

    def test_comonotone_equal_rates(self):
        c = sample_outcomes(0.4, 0.4, 1.0, 20_000, np.random.default_rng(3))
        assert c.y1 == 0 and c.y4 == 0  # joint cell collapses to p
        assert abs(c.y3 / c.n - 0.4) < 0.02

    def test_correlated_cells_match_formula(self):
        p, q, rho, n = 0.3, 0.5, 0.4, 1_000_000
        pi3 = p * q + rho * np.sqrt(p * (1 - p) * q * (1 - q))
        c = sample_outcomes(p, q, rho, n, np.random.default_rng(6))
        se = np.sqrt(pi3 * (1 - pi3) / n)
        assert abs(c.y3 / n - pi3) < 3 * se

    def test_frechet_clamp_applies(self):
        # p*q + rho*sd = 0.171 exceeds min(p, q) = 0.1; the tox-only cell dies
        c = sample_outcomes(0.1, 0.9, 0.9, 200_000, np.random.default_rng(7))
        assert c.y4 == 0
        assert abs(c.y3 / c.n - 0.1) < 0.005

    def test_degenerate_rates(self):
        c = sample_outcomes(0.0, 0.7, 0.5, 5000, np.random.default_rng(8))
        assert c.y3 == 0 and c.y4 == 0
        assert sample_outcomes(0.3, 0.5, 0.2, 0, np.random.default_rng(9)).n == 0

    def test_input_validation(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            sample_outcomes(1.2, 0.5, 0.0, 3, rng)
        with pytest.raises(ConfigError):
            sample_outcomes(0.5, 0.5, 1.5, 3, rng)
        with pytest.raises(ConfigError):
            sample_outcomes(0.5, 0.5, 0.0, -1, rng)


class TestCaseStudy:
    def test_posterior_parameters_from_observed_rates(self):
        a4 = 1 + CASE_STUDY_N[3] * CASE_STUDY_P_HAT[3]
        b4 = 1 + CASE_STUDY_N[3] * (1 - CASE_STUDY_P_HAT[3])
        assert a4 / (a4 + b4) == pytest.approx(0.602)
        assert CASE_STUDY_Q_HAT[3] == 1.0  # top dose responded in all patients

    @pytest.mark.parametrize("shape,obd", [("I", 2), ("I", 3), ("IP", 2), ("IP", 3)])
    def test_emitted_scenarios_aligned_and_shaped(self, shape, obd, all_configs):
        rng = np.random.default_rng(13)
        for _ in range(25):
            sc = gen_case_study(shape, obd, rng)
            assert sc.true_obd == obd
            assert sc.p[obd - 1] <= 0.35 and sc.q[obd - 1] >= 0.25
            assert all(a < b for a, b in zip(sc.p, sc.p[1:]))
            if shape == "IP":
                assert sc.q[2] == sc.q[3]
            for c in all_configs:
                assert suggested_obd(c.design, sc.p, sc.q, c) == obd

    def test_rejected_arguments(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError, match="shape"):
            gen_case_study("U", 2, rng)
        with pytest.raises(ConfigError, match="dose 2 or 3"):
            gen_case_study("I", 4, rng)

    def test_deterministic_given_rng_state(self):
        a = gen_case_study("IP", 3, np.random.default_rng(21))
        b = gen_case_study("IP", 3, np.random.default_rng(21))
        assert a == b


class TestCsv:
    def test_round_trip_with_and_without_obd(self):
        rng = np.random.default_rng(19)
        batch = [gen_with_obd(spec_for("U"), rng) for _ in range(4)]
        batch += [gen_no_obd(spec_for("I", obd_exists=False), rng) for _ in range(3)]
        back = scenarios_from_csv(scenarios_to_csv(batch))
        assert back == batch

    def test_header_and_shape_errors(self):
        with pytest.raises(ConfigError, match="header"):
            scenarios_from_csv("shape,d_star\nI,1\n")
        with pytest.raises(ConfigError, match="header"):
            scenarios_from_csv("shape,d_star,d_high,p_1,q_2\nI,1,1,0.1,0.5\n")
        with pytest.raises(ConfigError, match="fields"):
            scenarios_from_csv("shape,d_star,d_high,p_1,q_1\nI,1,1,0.1\n")
        with pytest.raises(ConfigError, match="no scenarios"):
            scenarios_to_csv([])

    def test_mixed_dimensions_rejected(self):
        a = gen_with_obd(spec_for("I", seed=1))
        b = gen_with_obd(spec_for("I", D=3, seed=1))
        with pytest.raises(ConfigError, match="dose count"):
            scenarios_to_csv([a, b])

    def test_csv_rows_match_column_contract(self):
        sc = Scenario(p=(0.1, 0.3), q=(0.5, 0.6), shape="I", true_obd=2,
                      d_star=2, d_high=2)
        lines = scenarios_to_csv([sc]).splitlines()
        assert lines[0] == "shape,d_star,d_high,p_1,p_2,q_1,q_2"
        assert lines[1] == "I,2,2,0.1,0.3,0.5,0.6"
