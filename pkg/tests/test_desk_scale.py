"""Desk-scale experiments -- slow; run with TRANSFERGRAD_DESK_SCALE=1."""

import pytest

from transfergrad import desk_scale
from transfergrad.evalharness import sweep_seeds


def desk(fn):
    return pytest.mark.integration(pytest.mark.slow(fn))


@pytest.fixture(scope="module")
def setup():
    return desk_scale.build_setup(0)


@desk
def test_white_box_potency(setup):
    assert desk_scale.white_box_potency(setup) >= desk_scale.POTENCY_THRESHOLD


@desk
def test_attack_ordering(setup):
    rates = desk_scale.attack_ordering(setup, sweep_seeds(0, 3))
    assert desk_scale.ordering_holds(rates), rates


@desk
def test_sim_degrades_while_usm_holds(setup):
    result = desk_scale.scale_degradation(setup, sweep_seeds(0, 3))
    assert result.sim_degrades, result.sim_curve
    assert result.usm_holds, (result.sim_curve, result.usm_curve)


class TestVerdicts:
    """Pure checks on the verdict helpers; these do not train anything."""

    def test_ordering_holds(self):
        rates = {"us_mm": 0.5, "admix": 0.4, "sim": 0.4, "mifgsm": 0.1}
        assert desk_scale.ordering_holds(rates)
        assert not desk_scale.ordering_holds({**rates, "sim": 0.45})

    def test_degradation_verdicts(self):
        sim = [0.2, 0.4, 0.5, 0.45] + [0.4] * 8
        usm = [0.2, 0.3, 0.45] + [0.44] * 9
        result = desk_scale.DegradationResult(sim_curve=sim, usm_curve=usm)
        assert result.sim_peak_index == 2
        assert result.sim_degrades
        assert result.usm_holds
        flat = desk_scale.DegradationResult(sim_curve=[0.1] * 11 + [0.6], usm_curve=usm)
        assert not flat.sim_degrades

    def test_ordering_needs_a_gap(self):
        assert not desk_scale.ordering_holds(dict.fromkeys(desk_scale.ORDERING, 0.0))
        assert not desk_scale.ordering_holds(dict.fromkeys(desk_scale.ORDERING, 0.7))
        rates = {"us_mm": 0.3, "admix": 0.3, "sim": 0.3, "mifgsm": 0.2}
        assert desk_scale.ordering_holds(rates)

    def test_flat_zero_curves_do_not_degrade(self):
        result = desk_scale.DegradationResult(sim_curve=[0.0] * 12, usm_curve=[0.0] * 12)
        assert not result.sim_degrades

