"""Sequential rejection sampling from the Gibbs distribution via perturb-max.

One pass fixes variables left to right.  Round j estimates, for every
candidate state x of variable j, the prefix bound phi_j(x_1..x_{j-1}, x) by
Monte Carlo (all candidates share the same perturbation realisations), then
draws from p_j(x) = exp(phi_j(..., x) - phi_{j-1}(...)); the leftover mass
is a reject symbol that restarts the pass.  The chosen candidate's phi
value becomes the next round's denominator, which is exactly the
self-reducible structure that makes accepted samples Gibbs-distributed
when the expectations are exact.  With Monte-Carlo phi the sampler is
approximate; the acceptance probability identity (accept rate =
Z / exp(upper bound)) is preserved up to that estimation error.
"""

from __future__ import annotations

import dataclasses
from typing import Optional

import numpy as np

from .errors import PreconditionError
from .gumbel import sample_gumbel, sample_perturbation, singleton_subsets
from .model import PairwiseModel, clamp_prefix
from .oracle import energy_table
from .solvers import solve

_FAST_PATH_CAP = 1 << 16
_WILSON_Z = 1.959963984540054  # 95% normal quantile


@dataclasses.dataclass(frozen=True)
class SamplerConfig:
    m_phi: int = 200
    max_restarts: int = 10_000
    seed: int = 0
    strategy: str = "auto"

    def __post_init__(self):
        if self.m_phi < 1 or self.max_restarts < 1:
            raise PreconditionError("m_phi and max_restarts must be >= 1")


@dataclasses.dataclass
class SamplerTrace:
    accepted: bool
    sample: Optional[np.ndarray]
    restarts: int
    reject_probabilities: list[float]  # per round of the final pass
    map_calls: int
    negative_reject_clamps: int


def _round_rng(seed: int, restart: int, round_idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(
        int(seed) & (2**64 - 1), spawn_key=(restart, round_idx)
    )
    return np.random.Generator(np.random.Philox(ss))


class _FastPassState:
    """Shared tables for passes over an enumerable model."""

    def __init__(self, model: PairwiseModel):
        self.model = model
        self.energies = energy_table(model)
        n = model.num_variables
        self.offsets = np.concatenate([[0], np.cumsum(model.cards)])
        self.full_digits = model.digits_of_indices(
            np.arange(model.num_configs, dtype=np.int64)
        )
        self.suffix_digits = []  # digits of the block below variable t
        for t in range(n):
            size = int(model.strides[t])
            if model.num_variables - t - 1:
                idx = np.arange(size, dtype=np.int64)
                digits = (
                    idx[:, None] // model.strides[None, t + 1 :]
                ) % model.cards[None, t + 1 :]
            else:
                digits = np.zeros((1, 0), dtype=np.int64)
            self.suffix_digits.append(digits)


def _phi_candidates_fast(state: _FastPassState, prefix, t, rng, m_phi):
    """phi values for all candidate states of variable t, shared draws."""
    model = state.model
    card = int(model.cards[t])
    base = int((np.asarray(prefix, dtype=np.int64) * model.strides[:t]).sum())
    block = int(model.strides[t])  # suffix block size per candidate
    digits = state.suffix_digits[t]
    n_suffix = model.num_variables - t - 1
    if n_suffix == 0:
        vals = state.energies[base : base + card]
        return vals.astype(np.float64), 0
    cards_suffix = model.cards[t + 1 :]
    offs = np.concatenate([[0], np.cumsum(cards_suffix)])
    draws = sample_gumbel(rng, size=(m_phi, int(offs[-1])))
    gamma = np.zeros((m_phi, block))
    for i in range(n_suffix):
        gamma += draws[:, offs[i] + digits[:, i]]
    phis = np.empty(card)
    for x in range(card):
        seg = state.energies[base + x * block : base + (x + 1) * block]
        phis[x] = (seg[None, :] + gamma).max(axis=1).mean()
    return phis, m_phi * card


def _phi_candidates_generic(model, prefix, t, rng, m_phi, strategy, seed, restart):
    """Solver-backed phi values; all candidates share perturbation draws."""
    card = int(model.cards[t])
    n = model.num_variables
    if t == n - 1:
        vals = np.array(
            [
                model.evaluate(np.concatenate([prefix, [x]]).astype(np.int64))
                for x in range(card)
            ]
        )
        return vals, 0
    subs = []
    offsets = []
    for x in range(card):
        sub, off = clamp_prefix(model, np.concatenate([prefix, [x]]).astype(np.int64))
        subs.append(sub)
        offsets.append(off)
    subsets = singleton_subsets(subs[0].num_variables)
    totals = np.zeros(card)
    # a private seed per (restart, round) keeps passes independent while the
    # candidates inside one round share realisation j
    pert_seed = int(rng.integers(0, 2**63))
    for j in range(m_phi):
        pert = sample_perturbation(subs[0], subsets, pert_seed, j)
        for x in range(card):
            totals[x] += solve(subs[x], pert, strategy).value
    return totals / m_phi + np.asarray(offsets), m_phi * card


def _single_pass(model, config, restart, fast_state):
    """One left-to-right pass; returns (sample | None, reject_probs, calls, clamps)."""
    n = model.num_variables
    prefix: list[int] = []
    reject_probs = []
    calls = 0
    clamps = 0

    # round 0 computes phi_0, the unconditional expected perturbed max
    rng = _round_rng(config.seed, restart, 0)
    if fast_state is not None:
        offs = fast_state.offsets
        draws = sample_gumbel(rng, size=(config.m_phi, int(offs[-1])))
        digits = fast_state.full_digits
        gamma = np.zeros((config.m_phi, model.num_configs))
        for i in range(n):
            gamma += draws[:, offs[i] + digits[:, i]]
        phi_prev = float((fast_state.energies[None, :] + gamma).max(axis=1).mean())
        calls += config.m_phi
    else:
        subsets = singleton_subsets(n)
        pert_seed = int(rng.integers(0, 2**63))
        vals = []
        for j in range(config.m_phi):
            pert = sample_perturbation(model, subsets, pert_seed, j)
            vals.append(solve(model, pert, config.strategy).value)
        phi_prev = float(np.mean(vals))
        calls += config.m_phi

    for t in range(n):
        rng = _round_rng(config.seed, restart, t + 1)
        if fast_state is not None:
            phis, used = _phi_candidates_fast(
                fast_state, prefix, t, rng, config.m_phi
            )
        else:
            phis, used = _phi_candidates_generic(
                model, np.asarray(prefix), t, rng, config.m_phi,
                config.strategy, config.seed, restart,
            )
        calls += used
        probs = np.exp(phis - phi_prev)
        total = float(probs.sum())
        p_reject = 1.0 - total
        if p_reject < 0.0:
            # Monte-Carlo noise: the candidate bounds overshot the parent
            clamps += 1
            p_reject = 0.0
            probs = probs / total
        reject_probs.append(p_reject)
        u = float(rng.random())
        cum = np.cumsum(probs)
        if u >= cum[-1]:
            return None, reject_probs, calls, clamps  # drew the reject symbol
        x = int(np.searchsorted(cum, u, side="right"))
        prefix.append(x)
        phi_prev = float(phis[x])

    return np.array(prefix, dtype=np.int64), reject_probs, calls, clamps


def gibbs_sample(model: PairwiseModel, config: SamplerConfig) -> SamplerTrace:
    """Run the rejection sampler until acceptance or ``max_restarts`` passes."""
    if model.domain_mask is not None:
        raise PreconditionError("sampler requires unmasked models")
    fast_state = (
        _FastPassState(model) if model.num_configs <= _FAST_PATH_CAP else None
    )
    total_calls = 0
    total_clamps = 0
    for restart in range(config.max_restarts):
        sample, rejects, calls, clamps = _single_pass(
            model, config, restart, fast_state
        )
        total_calls += calls
        total_clamps += clamps
        if sample is not None:
            return SamplerTrace(
                accepted=True,
                sample=sample,
                restarts=restart,
                reject_probabilities=rejects,
                map_calls=total_calls,
                negative_reject_clamps=total_clamps,
            )
    return SamplerTrace(
        accepted=False,
        sample=None,
        restarts=config.max_restarts,
        reject_probabilities=[],
        map_calls=total_calls,
        negative_reject_clamps=total_clamps,
    )


def sample_many(
    model: PairwiseModel, count: int, config: SamplerConfig
) -> tuple[np.ndarray, list[SamplerTrace]]:
    """Collect ``count`` accepted samples, re-seeding restarts sequentially."""
    fast_state = (
        _FastPassState(model) if model.num_configs <= _FAST_PATH_CAP else None
    )
    out = np.empty((count, model.num_variables), dtype=np.int64)
    traces = []
    restart = 0
    got = 0
    budget = config.max_restarts
    while got < count:
        if restart >= budget:
            raise PreconditionError(
                f"exceeded {config.max_restarts} restarts after {got} accepted samples"
            )
        sample, rejects, calls, clamps = _single_pass(model, config, restart, fast_state)
        restart += 1
        if sample is not None:
            out[got] = sample
            traces.append(
                SamplerTrace(True, sample, restart - 1, rejects, calls, clamps)
            )
            got += 1
            budget = restart + config.max_restarts
    return out, traces


@dataclasses.dataclass(frozen=True)
class AcceptanceEstimate:
    rate: float
    low: float
    high: float
    trials: int

    def contains(self, p: float) -> bool:
        return self.low <= p <= self.high


def acceptance_rate(
    model: PairwiseModel, trials: int, config: SamplerConfig
) -> AcceptanceEstimate:
    """Empirical single-pass acceptance frequency with a 95% Wilson interval."""
    fast_state = (
        _FastPassState(model) if model.num_configs <= _FAST_PATH_CAP else None
    )
    hits = 0
    for trial in range(trials):
        sample, _, _, _ = _single_pass(model, config, trial, fast_state)
        hits += sample is not None
    p = hits / trials
    z2 = _WILSON_Z**2
    denom = 1 + z2 / trials
    centre = (p + z2 / (2 * trials)) / denom
    half = (
        _WILSON_Z
        * np.sqrt(p * (1 - p) / trials + z2 / (4 * trials**2))
        / denom
    )
    return AcceptanceEstimate(p, float(centre - half), float(centre + half), trials)


def complexity_profile(
    specs, config: SamplerConfig, bound_samples: int = 20,
    replication: int = 100, oracle_cap: int = 1 << 16,
) -> list[dict]:
    """Upper-minus-lower gap per instance, the sampler's run-time proxy.

    For each spin-glass spec: the singleton upper bound (``bound_samples``
    draws), the extended-model lower bound, their gap, and where the model
    is exactly solvable, the true exponent upper - log Z.
    """
    from .bounds import lower_bound_logz, upper_bound_logz
    from .model import generate_spin_glass
    from .oracle import cached_summary

    rows = []
    for spec in specs:
        model = generate_spin_glass(spec)
        upper = upper_bound_logz(
            model, samples=bound_samples, seed=spec.seed, strategy=config.strategy
        )
        lower = lower_bound_logz(
            model, replication, seed=spec.seed, strategy=config.strategy
        )
        n = model.num_variables
        row = {
            "height": spec.height,
            "width": spec.width,
            "n": n,
            "seed": spec.seed,
            "c": spec.coupling_range,
            "f": spec.field_range,
            "upper_mean": upper.mean,
            "lower_value": lower.mean,
            "gap": upper.mean - lower.mean,
            "gap_per_variable": (upper.mean - lower.mean) / n,
            "oracle_logz": None,
            "upper_minus_logz": None,
        }
        try:
            summary = cached_summary(model)
            row["oracle_logz"] = summary.log_partition
            row["upper_minus_logz"] = upper.mean - summary.log_partition
        except PreconditionError:
            pass
        rows.append(row)
    return rows
