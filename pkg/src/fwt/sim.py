"""Discrete-event Monte Carlo simulator of the full pipeline.

Poisson per-user-per-class transaction arrivals, exponential block
inter-arrival times, and the equilibrium selection rule (highest
fee-per-byte, earliest generation, included only when the fee covers a
single miner's per-byte storage cost) applied at every block instant.
Serves as the independent oracle for the waiting-time formulas, user
payoffs and welfare.

Reproducibility: one root seed spawns one deterministic substream per
random source (block process, winner draws, then one per user-class), so
adding users never perturbs existing streams. All exponential draws use
the inverse CDF.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .model import FeeMenu, RatePair, StrategyProfile, SystemParams, TaxVector
from .user_game import waiting_rate

__all__ = [
    "SimConfig",
    "SimReport",
    "Lemma1Result",
    "run",
    "validate_lemma1",
    "event_log_to_csv",
]


@dataclass(frozen=True)
class SimConfig:
    params: SystemParams
    menu: FeeMenu
    tax: TaxVector
    profile: StrategyProfile
    horizon: float
    seed: int = 0
    warmup: float = 0.1          # fraction of horizon discarded
    replications: int = 10
    # optional per-user override (deviation experiments); length N
    per_user_rates: tuple[RatePair, ...] | None = None
    size_exponential: bool = False   # default: every tx exactly mean size
    log_events: bool = False

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not (0.0 <= self.warmup <= 0.5):
            raise ValueError("warmup must be in [0, 0.5]")
        if self.replications < 1:
            raise ValueError("need at least one replication")
        if (self.per_user_rates is not None
                and len(self.per_user_rates) != self.params.n_users):
            raise ValueError("per_user_rates must have one entry per user")

    def user_rates(self) -> list[RatePair]:
        if self.per_user_rates is not None:
            return list(self.per_user_rates)
        p = self.params
        return ([self.profile.rates_high_type] * p.n_users_high
                + [self.profile.rates_low_type] * p.n_users_low)


def _inv_cdf_exponential(gen: np.random.Generator, rate: float, n: int) -> np.ndarray:
    return -np.log1p(-gen.random(n)) / rate


def _poisson_arrivals(gen: np.random.Generator, rate: float, horizon: float) -> np.ndarray:
    """Arrival times of a Poisson process on [0, horizon]."""
    if rate <= 0.0:
        return np.empty(0)
    expected = rate * horizon
    chunk = max(64, int(expected + 6.0 * math.sqrt(expected) + 16))
    times = np.cumsum(_inv_cdf_exponential(gen, rate, chunk))
    while times[-1] <= horizon:
        more = times[-1] + np.cumsum(_inv_cdf_exponential(gen, rate, chunk))
        times = np.concatenate([times, more])
    return times[times <= horizon]


@dataclass
class _RepResult:
    wait_rate: np.ndarray        # per user, post-warmup window
    payoff: np.ndarray           # per user
    welfare: float
    fees_debited: float
    fees_credited: float
    taxes_paid: float
    taxes_received: float
    blocks_total: int
    blocks_empty: int
    included_high: int
    included_low: int
    generated_high: int
    generated_low: int
    censored_count: np.ndarray   # per user
    censored_wait: np.ndarray    # per user
    events: list | None


def _run_replication(config: SimConfig, seed_seq: np.random.SeedSequence) -> _RepResult:
    params = config.params
    menu = config.menu
    n = params.n_users
    mu = params.block_rate
    sbar = params.mean_tx_size
    c_s = params.storage_cost_per_byte
    horizon = config.horizon
    rates = config.user_rates()

    children = seed_seq.spawn(2 + 2 * n)
    block_gen = np.random.Generator(np.random.PCG64(children[0]))
    winner_gen = np.random.Generator(np.random.PCG64(children[1]))

    block_times = _poisson_arrivals(block_gen, mu, horizon)
    n_blocks = len(block_times)
    power_cdf = np.cumsum(params.powers())
    winners = np.searchsorted(power_cdf, winner_gen.random(n_blocks), side="right")
    winners = np.minimum(winners, params.n_miners - 1)

    stream_times = []
    stream_sizes = []
    stream_ids = []
    for user in range(n):
        for cls in (0, 1):  # 0 = high fee, 1 = low fee
            gen = np.random.Generator(np.random.PCG64(children[2 + 2 * user + cls]))
            rate = rates[user].rate_high if cls == 0 else rates[user].rate_low
            times = _poisson_arrivals(gen, rate, horizon)
            if config.size_exponential:
                sizes = sbar * (-np.log1p(-gen.random(len(times))))
            else:
                sizes = np.full(len(times), sbar)
            stream_times.append(times)
            stream_sizes.append(sizes)
            stream_ids.append(np.full(len(times), 2 * user + cls, dtype=np.int64))

    ev_time = np.concatenate([block_times] + stream_times)
    ev_stream = np.concatenate(
        [np.full(n_blocks, -1, dtype=np.int64)] + stream_ids)
    ev_size = np.concatenate([np.zeros(n_blocks)] + stream_sizes)
    order = np.argsort(ev_time, kind="stable")

    hi_ok = menu.rho_high >= c_s
    lo_ok = menu.rho_low >= c_s
    q_hi: deque = deque()
    q_lo: deque = deque()

    t_start = config.warmup * horizon
    window = horizon - t_start
    incl_cnt = np.zeros(n)
    wait_sum = np.zeros(n)
    fee_paid = np.zeros(n)
    size_incl = np.zeros(n)
    incl_cls = [0, 0]
    gen_cls = [0, 0]
    tx_counter = np.zeros(n, dtype=np.int64)
    log_user: list[int] = []
    log_fee: list[float] = []
    log_winner: list[int] = []
    events = [] if config.log_events else None

    block_id = 0
    blocks_empty = 0
    for k in order:
        t = float(ev_time[k])
        s = int(ev_stream[k])
        if s < 0:
            winner = int(winners[block_id])
            entry = None
            fee = 0.0
            cls = -1
            if hi_ok and q_hi:
                entry = q_hi.popleft()
                fee = menu.rho_high
                cls = 0
            elif lo_ok and q_lo:
                entry = q_lo.popleft()
                fee = menu.rho_low
                cls = 1
            if entry is None:
                blocks_empty += 1
                if events is not None:
                    events.append((t, "block", -1, -1, 0.0, block_id, winner))
                block_id += 1
                continue
            gen_t, user, size, tx_idx = entry
            amount = size * fee
            log_user.append(user)
            log_fee.append(amount)
            log_winner.append(winner)
            if gen_t >= t_start:
                incl_cnt[user] += 1
                wait_sum[user] += t - gen_t
                fee_paid[user] += amount
                size_incl[user] += size
                incl_cls[cls] += 1
            if events is not None:
                events.append((t, "include", user, tx_idx, fee, block_id, winner))
            block_id += 1
        else:
            user, cls = divmod(s, 2)
            size = float(ev_size[k])
            tx_idx = int(tx_counter[user])
            tx_counter[user] += 1
            gen_cls[cls] += 1
            entry = (t, user, size, tx_idx)
            if cls == 0:
                q_hi.append(entry)
            else:
                q_lo.append(entry)
            if events is not None:
                fee = menu.rho_high if cls == 0 else menu.rho_low
                events.append((t, "gen", user, tx_idx, fee, -1, -1))

    censored_cnt = np.zeros(n)
    censored_wait = np.zeros(n)
    for q in (q_hi, q_lo):
        for gen_t, user, size, tx_idx in q:
            if gen_t >= t_start:
                censored_cnt[user] += 1
                censored_wait[user] += horizon - gen_t

    # per-user payoffs over the stats window
    n_h = params.n_users_high
    is_high = np.arange(n) < n_h
    r_user = np.where(is_high, params.utility_high, params.utility_low)
    q_h, q_l = config.tax.row_sums(params)
    q_user = np.where(is_high, q_h, q_l)
    cnt_h_total = float(incl_cnt[:n_h].sum())
    cnt_l_total = float(incl_cnt[n_h:].sum())
    tax = config.tax
    inflow = np.where(
        is_high,
        (cnt_h_total - incl_cnt) * tax.p_hh + cnt_l_total * tax.p_lh,
        cnt_h_total * tax.p_hl + (cnt_l_total - incl_cnt) * tax.p_ll,
    )
    gamma = params.impatience
    payoff = (incl_cnt * (r_user - q_user) - fee_paid + inflow
              - gamma * wait_sum) / window
    wait_rate = wait_sum / window

    fee_window_total = float(fee_paid.sum())
    storage_total = params.n_miners * c_s * float(size_incl.sum())
    welfare = float(payoff.sum()) + (fee_window_total - storage_total) / window

    # conservation totals: exact sums of the same addend multiset in two
    # groupings (user side vs miner side / payer side vs payee side)
    fee_arr = np.asarray(log_fee)
    user_arr = np.asarray(log_user, dtype=np.int64)
    winner_arr = np.asarray(log_winner, dtype=np.int64)
    if len(fee_arr):
        fees_debited = math.fsum(fee_arr[np.argsort(user_arr, kind="stable")])
        fees_credited = math.fsum(fee_arr[np.argsort(winner_arr, kind="stable")])
    else:
        fees_debited = fees_credited = 0.0

    p_matrix = np.array([[tax.p_hh, tax.p_hl], [tax.p_lh, tax.p_ll]])
    type_idx = (~is_high).astype(int)
    amounts = incl_cnt[:, None] * p_matrix[type_idx][:, type_idx]
    off_diag = ~np.eye(n, dtype=bool)
    taxes_paid = math.fsum(amounts[off_diag])
    taxes_received = math.fsum(amounts.T[off_diag])

    return _RepResult(
        wait_rate=wait_rate,
        payoff=payoff,
        welfare=welfare,
        fees_debited=fees_debited,
        fees_credited=fees_credited,
        taxes_paid=taxes_paid,
        taxes_received=taxes_received,
        blocks_total=n_blocks,
        blocks_empty=blocks_empty,
        included_high=incl_cls[0],
        included_low=incl_cls[1],
        generated_high=gen_cls[0],
        generated_low=gen_cls[1],
        censored_count=censored_cnt,
        censored_wait=censored_wait,
        events=events,
    )


def _mean_ci(values: np.ndarray, axis=0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and 95% t-interval half-width across replications."""
    values = np.asarray(values, dtype=float)
    r = values.shape[axis]
    mean = values.mean(axis=axis)
    if r < 2:
        return mean, np.full_like(np.asarray(mean, dtype=float), math.nan)
    sd = values.std(axis=axis, ddof=1)
    half = stats.t.ppf(0.975, r - 1) * sd / math.sqrt(r)
    return mean, half


@dataclass
class SimReport:
    """Monte Carlo estimates with 95% confidence half-widths."""

    replications: int
    horizon: float
    warmup: float
    user_wait_mean: np.ndarray
    user_wait_ci: np.ndarray
    user_payoff_mean: np.ndarray
    user_payoff_ci: np.ndarray
    type_wait_mean: dict
    type_wait_ci: dict
    type_payoff_mean: dict
    type_payoff_ci: dict
    welfare_mean: float
    welfare_ci: float
    fees_debited: list[float]
    fees_credited: list[float]
    taxes_paid: list[float]
    taxes_received: list[float]
    blocks_total: list[int]
    blocks_empty: list[int]
    included_high: int
    included_low: int
    generated_high: int
    generated_low: int
    censored_count_total: float
    censored_wait_total: float
    events: list | None

    def to_json_dict(self) -> dict:
        return {
            "replications": self.replications,
            "horizon": self.horizon,
            "warmup": self.warmup,
            "user_wait_mean": self.user_wait_mean.tolist(),
            "user_wait_ci": self.user_wait_ci.tolist(),
            "user_payoff_mean": self.user_payoff_mean.tolist(),
            "user_payoff_ci": self.user_payoff_ci.tolist(),
            "type_wait_mean": self.type_wait_mean,
            "type_wait_ci": self.type_wait_ci,
            "type_payoff_mean": self.type_payoff_mean,
            "type_payoff_ci": self.type_payoff_ci,
            "welfare_mean": self.welfare_mean,
            "welfare_ci": self.welfare_ci,
            "fees_debited": self.fees_debited,
            "fees_credited": self.fees_credited,
            "taxes_paid": self.taxes_paid,
            "taxes_received": self.taxes_received,
            "blocks_total": self.blocks_total,
            "blocks_empty": self.blocks_empty,
            "tx_counts": {
                "included_high": self.included_high,
                "included_low": self.included_low,
                "generated_high": self.generated_high,
                "generated_low": self.generated_low,
            },
            "censored": {
                "count": self.censored_count_total,
                "wait": self.censored_wait_total,
            },
        }


def run(config: SimConfig) -> SimReport:
    """Run all replications and reduce to means with 95% intervals."""
    root = np.random.SeedSequence(config.seed)
    reps = [_run_replication(config, child)
            for child in root.spawn(config.replications)]

    n_h = config.params.n_users_high
    wait = np.stack([r.wait_rate for r in reps])
    pay = np.stack([r.payoff for r in reps])
    wait_mean, wait_ci = _mean_ci(wait)
    pay_mean, pay_ci = _mean_ci(pay)

    def type_stats(per_rep: np.ndarray) -> tuple[dict, dict]:
        h = per_rep[:, :n_h].mean(axis=1)
        low = per_rep[:, n_h:].mean(axis=1)
        mh, ch = _mean_ci(h)
        ml, cl = _mean_ci(low)
        return ({"H": float(mh), "L": float(ml)}, {"H": float(ch), "L": float(cl)})

    tw_mean, tw_ci = type_stats(wait)
    tp_mean, tp_ci = type_stats(pay)
    welfare_mean, welfare_ci = _mean_ci(np.array([r.welfare for r in reps]))

    events = reps[0].events if config.log_events else None
    return SimReport(
        replications=config.replications,
        horizon=config.horizon,
        warmup=config.warmup,
        user_wait_mean=wait_mean,
        user_wait_ci=wait_ci,
        user_payoff_mean=pay_mean,
        user_payoff_ci=pay_ci,
        type_wait_mean=tw_mean,
        type_wait_ci=tw_ci,
        type_payoff_mean=tp_mean,
        type_payoff_ci=tp_ci,
        welfare_mean=float(welfare_mean),
        welfare_ci=float(welfare_ci),
        fees_debited=[r.fees_debited for r in reps],
        fees_credited=[r.fees_credited for r in reps],
        taxes_paid=[r.taxes_paid for r in reps],
        taxes_received=[r.taxes_received for r in reps],
        blocks_total=[r.blocks_total for r in reps],
        blocks_empty=[r.blocks_empty for r in reps],
        included_high=sum(r.included_high for r in reps),
        included_low=sum(r.included_low for r in reps),
        generated_high=sum(r.generated_high for r in reps),
        generated_low=sum(r.generated_low for r in reps),
        censored_count_total=float(sum(r.censored_count.sum() for r in reps)),
        censored_wait_total=float(sum(r.censored_wait.sum() for r in reps)),
        events=events,
    )


@dataclass(frozen=True)
class Lemma1Result:
    user_type: str
    analytic: float
    measured: float
    ci_half: float
    passed: bool


def validate_lemma1(params: SystemParams, menu: FeeMenu, profile: StrategyProfile,
                    tolerance: float = 0.02, replications: int = 10,
                    horizon: float | None = None, seed: int = 0) -> list[Lemma1Result]:
    """Compare simulator waiting rates to the analytic formulas per type.

    Pass when the analytic value lies inside the 95% interval or within the
    relative tolerance. Requires a strictly stable profile (finite waits).
    """
    if horizon is None:
        horizon = 1e5 / params.block_rate
    analytic = {t: waiting_rate(t, profile, menu, params) for t in ("H", "L")}
    if any(math.isinf(v) for v in analytic.values()):
        raise ValueError("validate_lemma1 requires a strictly stable profile")
    config = SimConfig(params=params, menu=menu, tax=TaxVector.zero(),
                       profile=profile, horizon=horizon, seed=seed,
                       replications=replications)
    report = run(config)
    results = []
    for t in ("H", "L"):
        a = analytic[t]
        m = report.type_wait_mean[t]
        ci = report.type_wait_ci[t]
        if a == 0.0:
            passed = m == 0.0
        else:
            passed = abs(m - a) <= tolerance * abs(a) or abs(m - a) <= ci
        results.append(Lemma1Result(user_type=t, analytic=a, measured=m,
                                    ci_half=ci, passed=passed))
    return results


_EVENT_FIELDS = ["time", "event_type", "user_id", "tx_index", "fee_per_byte",
                 "block_id", "winner_miner"]


def event_log_to_csv(events: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(_EVENT_FIELDS)
    for row in events:
        writer.writerow(row)
    return buf.getvalue()
