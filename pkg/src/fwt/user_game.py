"""Stage-II transaction generation: waiting times, SNE rates, payoffs.

Closed forms for the two-class preemptive-priority M/M/1 queue induced by
the miners' fee-priority rule, the symmetric-equilibrium generation rates,
the high-fee/low-fee equilibrium selection, and a grid best-response oracle
that certifies the closed forms.

The rate formulas are written against type-B (bigger net utility) and
type-S (smaller net utility) and mapped back to types H/L at the end. All
branch cores accept numpy arrays so parameter sweeps and the mechanism grid
oracle can evaluate thousands of points per call.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .model import (
    FeeMenu,
    RatePair,
    SneKind,
    StrategyProfile,
    SystemParams,
    TaxVector,
)

__all__ = [
    "NetUtilities",
    "SneOutcome",
    "UserDeviation",
    "waiting_rate",
    "net_utilities",
    "sne_rates",
    "sne_select",
    "user_payoff",
    "with_payoffs",
    "best_response_check",
]

_SQRT_TOL = 1e-15


# --- waiting time ----------------------------------------------------------

def _accumulated_wait_rate(l1, l2, agg1, agg2, high_ok: bool, low_ok: bool, mu: float):
    """Time-average accumulated waiting of one user, extended reals.

    l1/l2 are the user's own rates at the high/low fee, agg1/agg2 the
    system-wide rates including this user. high_ok/low_ok say whether each
    fee class clears the miners' acceptance threshold. Scalar or array.
    """
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)
    agg1 = np.asarray(agg1, dtype=float)
    agg2 = np.asarray(agg2, dtype=float)
    inf = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        if low_ok:
            # both classes eventually included; two-class preemptive M/M/1
            t1 = np.where(l1 > 0, np.where(agg1 < mu, l1 / (mu - agg1), inf), 0.0)
            tot = agg1 + agg2
            t2 = np.where(
                l2 > 0,
                np.where((agg1 < mu) & (tot < mu),
                         mu * l2 / ((mu - agg1) * (mu - tot)), inf),
                0.0,
            )
            w = t1 + t2
        elif high_ok:
            # low-fee transactions never included
            t1 = np.where(l1 > 0, np.where(agg1 < mu, l1 / (mu - agg1), inf), 0.0)
            w = np.where(l2 > 0, inf, t1)
        else:
            w = np.where((l1 > 0) | (l2 > 0), inf, 0.0)
    if w.ndim == 0:
        return float(w)
    return w


def waiting_rate(user_type: str, profile: StrategyProfile, menu: FeeMenu,
                 params: SystemParams) -> float:
    """Time-average waiting accumulated per unit time by one user.

    Returns math.inf when the user generates transactions that are never
    included or when the relevant class is saturated.
    """
    own = profile.rates_for(user_type)
    agg1, agg2 = profile.aggregate(params)
    c_s = params.storage_cost_per_byte
    return _accumulated_wait_rate(
        own.rate_high, own.rate_low, agg1, agg2,
        menu.rho_high >= c_s, menu.rho_low >= c_s, params.block_rate,
    )


# --- net utilities and B/S roles -------------------------------------------

@dataclass(frozen=True)
class NetUtilities:
    """Per-transaction net utilities after waiting-tax outflow."""

    h_high: float
    h_low: float
    n_users_high: int
    n_users_low: int

    @property
    def b_is_high(self) -> bool:
        # ties resolve to B = H
        return self.h_high >= self.h_low

    @property
    def h_b(self) -> float:
        return self.h_high if self.b_is_high else self.h_low

    @property
    def h_s(self) -> float:
        return self.h_low if self.b_is_high else self.h_high

    @property
    def n_b(self) -> int:
        return self.n_users_high if self.b_is_high else self.n_users_low

    @property
    def n_s(self) -> int:
        return self.n_users_low if self.b_is_high else self.n_users_high


def net_utilities(params: SystemParams, tax: TaxVector) -> NetUtilities:
    """On-chain utility minus total per-transaction tax outflow, per type."""
    q_h, q_l = tax.row_sums(params)
    return NetUtilities(
        h_high=params.utility_high - q_h,
        h_low=params.utility_low - q_l,
        n_users_high=params.n_users_high,
        n_users_low=params.n_users_low,
    )


# --- SNE generation rates ---------------------------------------------------

def _checked_sqrt(arg, selected):
    """sqrt with tiny-negative clamping; beyond-tolerance negatives on a
    selected branch indicate a branch-selection bug and raise."""
    arg = np.asarray(arg, dtype=float)
    bad = selected & (arg < -_SQRT_TOL)
    if np.any(bad):
        raise ValueError("negative square-root argument on an active branch")
    return np.sqrt(np.maximum(arg, 0.0))


def _pi_rates(h_b, h_s, rho: float, n_b, n_s, params: SystemParams):
    """Equilibrium per-user rates (pi_B, pi_S) at a single active fee.

    Three branches: nobody generates, only type B generates, both types
    generate. Scalar or array inputs for h_b/h_s/n_b/n_s.
    """
    gamma = params.impatience
    mu = params.block_rate
    sbar = params.mean_tx_size
    h_b = np.asarray(h_b, dtype=float)
    h_s = np.asarray(h_s, dtype=float)
    n_b = np.asarray(n_b, dtype=float)
    n_s = np.asarray(n_s, dtype=float)
    scalar = h_b.ndim == 0 and h_s.ndim == 0

    s_rho = sbar * rho
    cap = mu / (n_b + n_s)
    margin_b = h_b - s_rho
    margin_s = h_s - s_rho

    if gamma == 0.0:
        # waiting is costless: users with positive margin generate at the cap
        pi_b = np.where(margin_b > 0, cap, 0.0)
        pi_s = np.where(margin_s > 0, cap, 0.0)
        if scalar:
            return float(pi_b), float(pi_s)
        return pi_b, pi_s

    cond_none = h_b <= s_rho + gamma / mu
    active = ~cond_none

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # only-B rate: positive root of N_B*(h_B - s*rho)*x^2
        # - gamma*(N_B - 1)*x - gamma*mu = 0 in the residual capacity x
        arg1 = gamma**2 * (n_b - 1.0) ** 2 + 4.0 * gamma * mu * n_b * margin_b
        root1 = _checked_sqrt(arg1, active)
        only_b = np.minimum(
            mu / n_b - (gamma * (n_b - 1.0) + root1) / (2.0 * n_b**2 * margin_b),
            cap,
        )
        cond_only_b = active & (h_s <= s_rho + gamma / (mu - n_b * only_b))
        cond_both = active & ~cond_only_b

        # both-types residual capacity from the joint first-order conditions
        d = n_b * margin_b + n_s * margin_s
        n_tot = n_b + n_s
        arg2 = gamma**2 * (n_tot - 1.0) ** 2 + 4.0 * gamma * mu * d
        root2 = _checked_sqrt(arg2, cond_both)
        x_both = (gamma * (n_tot - 1.0) + root2) / (2.0 * d)
        kb = margin_b * x_both - gamma
        ks = margin_s * x_both - gamma
        both_b = np.minimum(cap, (mu - x_both) * kb / (n_b * kb + n_s * ks))

        pi_b = np.where(cond_none, 0.0, np.where(cond_only_b, only_b, both_b))
        pi_b = np.maximum(pi_b, 0.0)

        mu_rem = mu - n_b * pi_b
        arg3 = gamma**2 * (n_s - 1.0) ** 2 + 4.0 * n_s * margin_s * gamma * mu_rem
        root3 = _checked_sqrt(arg3, cond_both)
        pi_s_both = mu_rem / n_s - (gamma * (n_s - 1.0) + root3) / (
            2.0 * margin_s * n_s**2
        )
        pi_s = np.where(cond_both, pi_s_both, 0.0)
        pi_s = np.maximum(pi_s, 0.0)

    if scalar:
        return float(pi_b), float(pi_s)
    return pi_b, pi_s


def sne_rates(nu: NetUtilities, rho: float, params: SystemParams) -> tuple[float, float]:
    """Per-user SNE rates (pi_B, pi_S) when everyone generates at fee rho."""
    return _pi_rates(nu.h_b, nu.h_s, rho, nu.n_b, nu.n_s, params)


def _delta(h_b, h_s, pi_b, pi_s, rho_low: float, n_b, n_s, params: SystemParams):
    """High-fee attractiveness threshold, computed at the low-fee SNE rates.

    Per type this is the per-transaction value of jumping to the (empty)
    high-fee queue; the high-fee equilibrium is selected when it exceeds
    the high fee itself. Two algebraically-equivalent-at-interior forms
    are combined: the utility-based expression alone overstates the jump
    value when the user's rate is capped (slack first-order condition) and
    understates it for non-generating users, so each type takes the
    pointwise minimum, which equals the marginal jump value in every
    branch.
    """
    gamma = params.impatience
    mu = params.block_rate
    s_rho = params.mean_tx_size * rho_low
    lam = n_b * pi_b + n_s * pi_s
    with np.errstate(divide="ignore", invalid="ignore"):
        x = mu - lam
        common = gamma * (2.0 * mu - lam) / (mu * x * x)
        raw_b = h_b - gamma / mu - pi_b * common
        raw_s = h_s - gamma / mu - pi_s * common
        sub_b = s_rho + gamma * (lam - pi_b) / (mu * x)
        sub_s = s_rho + gamma * (lam - pi_s) / (mu * x)
    term_b = np.minimum(raw_b, sub_b)
    term_s = np.minimum(raw_s, sub_s)
    return np.maximum(term_b, term_s)


# --- equilibrium selection ---------------------------------------------------

@dataclass(frozen=True)
class SneOutcome:
    """Selected symmetric equilibrium plus per-type derived quantities."""

    profile: StrategyProfile
    fee_used: float
    waiting_rate_high: float
    waiting_rate_low: float
    payoff_high: float | None = None
    payoff_low: float | None = None

    @property
    def sne_kind(self) -> SneKind:
        return self.profile.sne_kind

    def to_json_dict(self) -> dict:
        def pair(rp: RatePair) -> dict:
            return {"rate_high": rp.rate_high, "rate_low": rp.rate_low}

        return {
            "sne_kind": self.sne_kind.value,
            "fee_used": self.fee_used,
            "rates": {
                "H": pair(self.profile.rates_high_type),
                "L": pair(self.profile.rates_low_type),
            },
            "waiting_rate": {"H": self.waiting_rate_high, "L": self.waiting_rate_low},
            "payoff": {"H": self.payoff_high, "L": self.payoff_low},
        }


def _stage2_rates_core(h_high, h_low, menu: FeeMenu, params: SystemParams):
    """Per-type SNE rates and active-fee flag; array-capable.

    Handles fee menus where one or both fees sit below the miners'
    acceptance threshold (needed by the unconstrained mechanism search):
    a class that is never included supports no generation, so the game
    collapses to the remaining fee or to no generation at all.
    """
    c_s = params.storage_cost_per_byte
    h_high = np.asarray(h_high, dtype=float)
    h_low = np.asarray(h_low, dtype=float)
    b_is_high = h_high >= h_low
    h_b = np.where(b_is_high, h_high, h_low)
    h_s = np.where(b_is_high, h_low, h_high)
    n_b = np.where(b_is_high, params.n_users_high, params.n_users_low)
    n_s = np.where(b_is_high, params.n_users_low, params.n_users_high)

    shape = h_b.shape
    if menu.rho_high < c_s:
        pi_b = np.zeros(shape)
        pi_s = np.zeros(shape)
        use_high = np.zeros(shape, dtype=bool)
    elif menu.rho_low < c_s:
        pi_b, pi_s = _pi_rates(h_b, h_s, menu.rho_high, n_b, n_s, params)
        use_high = np.ones(shape, dtype=bool)
    else:
        pib_lo, pis_lo = _pi_rates(h_b, h_s, menu.rho_low, n_b, n_s, params)
        if params.impatience == 0.0:
            # waiting is free, so nobody pays the higher fee
            use_high = np.zeros(shape, dtype=bool)
        else:
            delta = _delta(h_b, h_s, pib_lo, pis_lo, menu.rho_low, n_b, n_s, params)
            use_high = delta > params.mean_tx_size * menu.rho_high
        if np.any(use_high):
            pib_hi, pis_hi = _pi_rates(h_b, h_s, menu.rho_high, n_b, n_s, params)
            pi_b = np.where(use_high, pib_hi, pib_lo)
            pi_s = np.where(use_high, pis_hi, pis_lo)
        else:
            pi_b, pi_s = pib_lo, pis_lo

    lam_h = np.where(b_is_high, pi_b, pi_s)
    lam_l = np.where(b_is_high, pi_s, pi_b)
    return lam_h, lam_l, use_high


def sne_select(nu: NetUtilities, menu: FeeMenu, params: SystemParams) -> SneOutcome:
    """Pick the Stage-II equilibrium for the menu: high-fee SNE when the
    waiting-time advantage beats the extra fee, low-fee SNE otherwise."""
    lam_h, lam_l, use_high = _stage2_rates_core(nu.h_high, nu.h_low, menu, params)
    lam_h = float(lam_h)
    lam_l = float(lam_l)
    high = bool(use_high)
    if high:
        rates_h = RatePair(rate_high=lam_h, rate_low=0.0)
        rates_l = RatePair(rate_high=lam_l, rate_low=0.0)
    else:
        rates_h = RatePair(rate_high=0.0, rate_low=lam_h)
        rates_l = RatePair(rate_high=0.0, rate_low=lam_l)
    if lam_h == 0.0 and lam_l == 0.0:
        kind = SneKind.NO_GENERATION
    elif high:
        kind = SneKind.HIGH_FEE
    else:
        kind = SneKind.LOW_FEE
    profile = StrategyProfile(rates_high_type=rates_h, rates_low_type=rates_l,
                              sne_kind=kind)
    fee_used = menu.rho_high if high else menu.rho_low
    return SneOutcome(
        profile=profile,
        fee_used=fee_used,
        waiting_rate_high=waiting_rate("H", profile, menu, params),
        waiting_rate_low=waiting_rate("L", profile, menu, params),
    )


# --- payoffs -----------------------------------------------------------------

def user_payoff(user_type: str, outcome: SneOutcome, menu: FeeMenu,
                tax: TaxVector, params: SystemParams) -> float:
    """Time-average payoff of one user of the given type.

    Includes on-chain utility, fee and tax outflow on the user's included
    transactions, waiting cost, and tax inflow from every other user's
    included transactions.
    """
    own = outcome.profile.rates_for(user_type)
    c_s = params.storage_cost_per_byte
    sbar = params.mean_tx_size
    gamma = params.impatience
    incl_hi = menu.rho_high >= c_s
    incl_lo = menu.rho_low >= c_s
    r_n = params.utility_high if user_type == "H" else params.utility_low
    q_h, q_l = tax.row_sums(params)
    q_out = q_h if user_type == "H" else q_l

    util = 0.0
    if incl_hi:
        util += own.rate_high * (r_n - sbar * menu.rho_high - q_out)
    if incl_lo:
        util += own.rate_low * (r_n - sbar * menu.rho_low - q_out)

    w = waiting_rate(user_type, outcome.profile, menu, params)
    wait_cost = 0.0 if gamma == 0.0 else gamma * w

    rates_h = outcome.profile.rates_high_type
    rates_l = outcome.profile.rates_low_type
    incl_h_tot = (rates_h.rate_high if incl_hi else 0.0) + (rates_h.rate_low if incl_lo else 0.0)
    incl_l_tot = (rates_l.rate_high if incl_hi else 0.0) + (rates_l.rate_low if incl_lo else 0.0)
    n_h, n_l = params.n_users_high, params.n_users_low
    if user_type == "H":
        inflow = (n_h - 1) * incl_h_tot * tax.p_hh + n_l * incl_l_tot * tax.p_lh
    else:
        inflow = n_h * incl_h_tot * tax.p_hl + (n_l - 1) * incl_l_tot * tax.p_ll

    return util - wait_cost + inflow


def with_payoffs(outcome: SneOutcome, menu: FeeMenu, tax: TaxVector,
                 params: SystemParams) -> SneOutcome:
    """Return a copy of the outcome with per-type payoffs filled in."""
    return dc_replace(
        outcome,
        payoff_high=user_payoff("H", outcome, menu, tax, params),
        payoff_low=user_payoff("L", outcome, menu, tax, params),
    )


# --- best-response oracle -----------------------------------------------------

@dataclass(frozen=True)
class UserDeviation:
    """A profitable unilateral rate deviation found by best_response_check."""

    user_type: str
    rate_high: float
    rate_low: float
    gain: float
    sne_payoff: float


def _deviator_payoff(l1, l2, user_type: str, outcome: SneOutcome, menu: FeeMenu,
                     tax: TaxVector, params: SystemParams):
    """Payoff of a single deviating user, excluding the (constant) tax inflow.

    The crowd stays at the SNE profile; the deviator's own rates replace one
    user of the given type in the aggregates.
    """
    own = outcome.profile.rates_for(user_type)
    agg1, agg2 = outcome.profile.aggregate(params)
    o1 = agg1 - own.rate_high
    o2 = agg2 - own.rate_low
    l1 = np.asarray(l1, dtype=float)
    l2 = np.asarray(l2, dtype=float)

    c_s = params.storage_cost_per_byte
    sbar = params.mean_tx_size
    gamma = params.impatience
    incl_hi = menu.rho_high >= c_s
    incl_lo = menu.rho_low >= c_s
    r_n = params.utility_high if user_type == "H" else params.utility_low
    q_h, q_l = tax.row_sums(params)
    q_out = q_h if user_type == "H" else q_l

    util = np.zeros_like(l1)
    if incl_hi:
        util = util + l1 * (r_n - sbar * menu.rho_high - q_out)
    if incl_lo:
        util = util + l2 * (r_n - sbar * menu.rho_low - q_out)

    w = _accumulated_wait_rate(l1, l2, o1 + l1, o2 + l2, incl_hi, incl_lo,
                               params.block_rate)
    wait_cost = 0.0 if gamma == 0.0 else gamma * np.asarray(w)
    return util - wait_cost


def best_response_check(outcome: SneOutcome, menu: FeeMenu, tax: TaxVector,
                        params: SystemParams, grid: int = 101,
                        eps: float | None = None) -> UserDeviation | None:
    """Grid-certify that no single user gains by deviating from the SNE.

    Sweeps one deviating user's (rate_high, rate_low) over the feasible
    triangle at the given per-axis resolution while everyone else holds the
    SNE profile. Returns None when no grid point beats the SNE payoff by
    more than eps (default 1e-9 * max(1, |payoff|)).
    """
    cap = params.max_rate_per_user
    xs = np.linspace(0.0, cap, grid)
    g1, g2 = np.meshgrid(xs, xs, indexing="ij")
    feasible = g1 + g2 <= cap * (1.0 + 1e-12)

    for user_type in ("H", "L"):
        own = outcome.profile.rates_for(user_type)
        u0 = float(_deviator_payoff(own.rate_high, own.rate_low, user_type,
                                    outcome, menu, tax, params))
        if eps is not None:
            tol = eps
        elif math.isfinite(u0):
            tol = 1e-9 * max(1.0, abs(u0))
        else:
            # infinitely bad base point: any finite improvement counts
            tol = 0.0
        u = _deviator_payoff(g1, g2, user_type, outcome, menu, tax, params)
        u = np.where(feasible, u, -np.inf)
        idx = np.unravel_index(int(np.nanargmax(u)), u.shape)
        gain = float(u[idx]) - u0
        if gain > tol:
            return UserDeviation(
                user_type=user_type,
                rate_high=float(g1[idx]),
                rate_low=float(g2[idx]),
                gain=gain,
                sne_payoff=u0,
            )
    return None
