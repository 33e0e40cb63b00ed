import math
from dataclasses import replace

import numpy as np

from fwt.baseline import existing_equilibrium, verify_existing
from fwt.mechanism import induced_outcome, optimal_mechanism, social_welfare
from fwt.model import SystemParams


def test_lone_competitor_settles_at_grid_minimum():
    """With no second type in play there is no priority to buy: the active
    type sits at the cheapest accepted fee."""
    p = replace(SystemParams(), utility_low=1e-7)  # L never profits
    out = existing_equilibrium(p)
    assert out.rate_low_type == 0.0
    assert out.fee_high_type == p.storage_cost_per_byte
    assert out.rate_high_type > 0
    assert out.converged


def test_defaults_outcome_is_sane(table_params):
    out = existing_equilibrium(table_params)
    assert out.rate_high_type > 0 and out.rate_low_type > 0
    assert out.fee_high_type > out.fee_low_type
    cap = table_params.max_rate_per_user
    assert out.rate_high_type <= cap * (1 + 1e-12)
    assert out.rate_low_type <= cap * (1 + 1e-12)
    assert not math.isinf(out.welfare)
    # insufficiency: competition only prices a single miner's cost scale
    assert out.avg_fee_per_byte < table_params.system_storage_per_byte


def test_converged_outcome_is_fixed_point():
    p = replace(SystemParams(), utility_low=1e-7)
    out = existing_equilibrium(p)
    assert out.converged
    assert verify_existing(out, p)


def test_avg_fee_nondecreasing_in_utility(table_params):
    """Richer users bid more for priority."""
    fees = []
    for r in np.linspace(5e-4, 3e-3, 10):
        out = existing_equilibrium(replace(table_params, utility_high=float(r),
                                           utility_low=float(r) / 2.0))
        fees.append(out.avg_fee_per_byte)
    grid_step = (2 * 3e-3 / 150.0) / 199
    assert all(b >= a - grid_step for a, b in zip(fees, fees[1:]))


def test_avg_fee_nonincreasing_in_impatience_participation_regime(table_params):
    """Once waiting costs dominate, the low type's willingness to pay caps
    the fee competition, so fees fall as impatience rises. (In the
    low-impatience deterrence regime the surrogate's fee premium grows
    like sqrt(gamma) instead; see the baseline module notes.)"""
    fees = []
    for g in np.geomspace(4e-3, 1.6e-2, 10):
        out = existing_equilibrium(replace(table_params, impatience=float(g)))
        fees.append(out.avg_fee_per_byte)
    grid_step = (2 * table_params.utility_high / 150.0) / 199
    assert all(b <= a + grid_step for a, b in zip(fees, fees[1:]))
    assert fees[-1] < fees[0]


def test_welfare_dominated_by_mechanism_optimum(table_params):
    """The mechanism's welfare is the unconstrained maximum over symmetric
    rate profiles, so it weakly dominates the untaxed equilibrium."""
    for r in np.linspace(5e-4, 3e-3, 6):
        p = replace(table_params, utility_high=float(r), utility_low=float(r) / 2.0)
        mech = optimal_mechanism(p)
        out = induced_outcome(mech, p)
        w = social_welfare(out, mech.menu, mech.tax, p).total
        ex = existing_equilibrium(p)
        assert w >= ex.welfare - 1e-9 * max(1.0, abs(ex.welfare))


def test_hetero_accounting_changes_welfare_not_equilibrium(table_params):
    base = existing_equilibrium(table_params)
    hetero_bound = table_params.n_miners * 2.75e-9  # mean cost at ratio 10
    shifted = existing_equilibrium(table_params, system_cost_per_byte=hetero_bound)
    # same game, same play
    assert shifted.fee_high_type == base.fee_high_type
    assert shifted.rate_high_type == base.rate_high_type
    assert shifted.avg_fee_per_byte == base.avg_fee_per_byte
    # heavier storage cost only lowers the welfare accounting
    assert shifted.welfare < base.welfare


def test_json_shape(table_params):
    doc = existing_equilibrium(table_params).to_json_dict()
    assert set(doc) >= {"sne_kind", "fee_used", "rates", "waiting_rate",
                        "payoff", "avg_fee_per_byte", "converged"}
    assert doc["sne_kind"] == "Existing"
