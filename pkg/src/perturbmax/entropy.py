"""Entropy bounds and statistics of perturb-max models.

A perturb-max model is the distribution of the argmax of the score plus
low-dimensional Gumbel perturbations.  Its entropy admits an upper bound
that needs nothing but MAP calls: the expected sum of the perturbation
values at the winning assignment.  The same quantity doubles as an
uncertainty measure (zero for deterministic models, maximal for uniform).
The classical marginal bound sum_i H(p_i) is provided for comparison, and
tiny models get a plug-in estimate of the true perturb-max entropy.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .bounds import BoundEstimate, _make_estimate
from .errors import PreconditionError
from .gumbel import StreamFactory, sample_perturbation, singleton_subsets
from .model import PairwiseModel
from .oracle import ExactSummary
from .solvers import solve

_DISTRIBUTION_CAP = 1 << 16


@dataclasses.dataclass(frozen=True)
class PerturbMaxSample:
    """Per-draw records of one perturb-max Monte-Carlo run."""

    argmax_indices: np.ndarray  # lexicographic config index per draw
    gumbel_sums: np.ndarray  # sum_alpha gamma_alpha(x^gamma_alpha) per draw
    max_values: np.ndarray  # perturbed max value per draw
    subsets: tuple[tuple[int, ...], ...]
    samples: int


def perturbmax_run(
    model: PairwiseModel,
    subsets=None,
    samples: int = 1000,
    seed: int = 0,
    strategy: str = "auto",
) -> PerturbMaxSample:
    """Draw perturbations, solve each MAP, record winners and their noise."""
    if subsets is None:
        subsets = singleton_subsets(model.num_variables)
    factory = StreamFactory(seed)
    idx = np.empty(samples, dtype=np.int64)
    gsum = np.empty(samples)
    vals = np.empty(samples)
    for j in range(samples):
        pert = sample_perturbation(model, subsets, seed, j, _factory=factory)
        if j == 0 and not pert.covers(model.num_variables):
            raise PreconditionError("subsets must cover all variables")
        res = solve(model, pert, strategy)
        idx[j] = model.index_of_config(res.argmax)
        gsum[j] = pert.value(res.argmax)
        vals[j] = res.value
    return PerturbMaxSample(
        idx, gsum, vals, tuple(tuple(s) for s in subsets), samples
    )


def entropy_upper_bound(
    model: PairwiseModel,
    subsets=None,
    samples: int = 1000,
    seed: int = 0,
    strategy: str = "auto",
    delta: float = 0.05,
) -> BoundEstimate:
    """Expected winning perturbation: upper-bounds the perturb-max entropy."""
    run = perturbmax_run(model, subsets, samples, seed, strategy)
    return _make_estimate("upper", run.gumbel_sums, run.subsets, delta)


def uncertainty_measure(
    model: PairwiseModel,
    subsets=None,
    samples: int = 1000,
    seed: int = 0,
    strategy: str = "auto",
) -> float:
    """The same expectation in its uncertainty-measure role.

    Non-negative up to Monte-Carlo noise; zero for deterministic models and
    maximal for the uniform one under shared perturbations.
    """
    return entropy_upper_bound(model, subsets, samples, seed, strategy).mean


@dataclasses.dataclass(frozen=True)
class EmpiricalDistribution:
    counts: np.ndarray  # per lexicographic configuration index
    samples: int

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.samples

    def tv_distance(self, probs: np.ndarray) -> float:
        return 0.5 * float(np.abs(self.frequencies - probs).sum())

    def marginals(self, model: PairwiseModel) -> list[np.ndarray]:
        digits = model.digits_of_indices(np.arange(len(self.counts), dtype=np.int64))
        out = []
        for i in range(model.num_variables):
            out.append(
                np.bincount(
                    digits[:, i], weights=self.counts, minlength=int(model.cards[i])
                )
                / self.samples
            )
        return out

    def plugin_entropy(self, miller_madow: bool = True) -> float:
        """Plug-in entropy of the frequencies, with Miller-Madow correction."""
        p = self.frequencies[self.counts > 0]
        h = -float((p * np.log(p)).sum())
        if miller_madow:
            h += (np.count_nonzero(self.counts) - 1) / (2 * self.samples)
        return h


def perturbmax_distribution(
    model: PairwiseModel,
    subsets=None,
    samples: int = 1000,
    seed: int = 0,
    strategy: str = "auto",
    run: PerturbMaxSample | None = None,
) -> EmpiricalDistribution:
    """Empirical argmax frequencies of the perturb-max model."""
    k = model.num_configs
    if k > _DISTRIBUTION_CAP:
        raise PreconditionError(
            f"distribution estimation capped at {_DISTRIBUTION_CAP} configurations"
        )
    if run is None:
        run = perturbmax_run(model, subsets, samples, seed, strategy)
    counts = np.bincount(run.argmax_indices, minlength=k)
    return EmpiricalDistribution(counts, run.samples)


def marginal_entropy_bound(source) -> float:
    """Sum of marginal entropies: the independence upper bound, in nats.

    Accepts an ExactSummary, an EmpiricalDistribution paired with a model
    via :meth:`EmpiricalDistribution.marginals`, or a plain sequence of
    per-variable distributions.
    """
    if isinstance(source, ExactSummary):
        marginals = source.marginals
    else:
        marginals = source
    total = 0.0
    for m in marginals:
        m = np.asarray(m, dtype=np.float64)
        if abs(float(m.sum()) - 1.0) > 1e-8 or np.any(m < -1e-12):
            raise PreconditionError("marginals must be distributions")
        p = m[m > 0]
        total += -float((p * np.log(p)).sum())
    return total
