"""Measure-concentration calculators for Gumbel-perturbed statistics.

Closed-form multipliers and deviation radii are implemented exactly as
printed, with no constant tightening: the Poincare route gives the
moment-generating-function multiplier alpha(lambda) = (1+la)/(1-la) and a
radius with an additive 2a floor; the log-Sobolev route gives beta(lambda)
and a radius that vanishes as the sample count grows.  For a perturb-max
statistic the gradient is an indicator over the winning local assignments,
so the gradient bound is a = sqrt(#subsets).

Also provides empirical harnesses: a variance-vs-gradient check of the
Poincare inequality, a truncated evaluation of the infinite-product bound,
and the sample-mean deviation histogram experiment.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import PreconditionError
from .gumbel import (
    PerturbationSet,
    StreamFactory,
    sample_gumbel,
    sample_perturbation,
    singleton_subsets,
)
from .model import PairwiseModel
from .oracle import energy_table
from .solvers import solve


def mgf_bound_poincare(lam: float, a: float) -> float:
    """MGF multiplier alpha(lambda) = (1 + lambda*a) / (1 - lambda*a)."""
    if a <= 0:
        raise PreconditionError("gradient bound a must be positive")
    la = lam * a
    if not 0 <= la < 1:
        raise PreconditionError(f"need 0 <= lambda*a < 1, got {la}")
    return (1.0 + la) / (1.0 - la)


def mgf_bound_sobolev(lam: float, a: float) -> float:
    """MGF multiplier beta(lambda) = exp(2a^2 l^2 (5-la)/(1-la) + 8al log(1-la))."""
    if a <= 0:
        raise PreconditionError("gradient bound a must be positive")
    la = lam * a
    if not 0 <= la < 1:
        raise PreconditionError(f"need 0 <= lambda*a < 1, got {la}")
    return float(
        np.exp(2 * a**2 * lam**2 * (5 - la) / (1 - la) + 8 * a * lam * np.log1p(-la))
    )


def deviation_radius_poincare(a: float, samples: int, delta: float) -> float:
    """Radius 2a (1 + sqrt(log(1/delta) / (2M)))^2."""
    _check_radius_args(a, samples, delta)
    return 2 * a * (1 + np.sqrt(np.log(1 / delta) / (2 * samples))) ** 2


def deviation_radius_sobolev(a: float, samples: int, delta: float) -> float:
    """Radius a * max(4 log(1/delta)/M, sqrt(32 log(1/delta)/M))."""
    _check_radius_args(a, samples, delta)
    big_l = np.log(1 / delta)
    return a * max(4 * big_l / samples, float(np.sqrt(32 * big_l / samples)))


def best_deviation(a: float, samples: int, delta: float) -> float:
    """The tighter of the two deviation radii."""
    return min(
        deviation_radius_poincare(a, samples, delta),
        deviation_radius_sobolev(a, samples, delta),
    )


def _check_radius_args(a: float, samples: int, delta: float) -> None:
    if a <= 0:
        raise PreconditionError("gradient bound a must be positive")
    if samples < 1:
        raise PreconditionError("sample count must be >= 1")
    if not 0 < delta < 1:
        raise PreconditionError("delta must be in (0, 1)")


@dataclasses.dataclass(frozen=True)
class ProductLemmaResult:
    lhs: float  # truncated product
    rhs: float  # closed-form bound
    terms: int
    tail_log_bound: float  # upper bound on the omitted log-domain mass


def product_lemma_check(
    lam: float, a: float, big_c: float, terms: int
) -> ProductLemmaResult:
    """Truncated product prod_i (1 - l^2 a^2 C / 4^(i+1))^(-2^i) vs its bound.

    Valid for lambda * a * sqrt(C) < 2.  The log-domain increments shrink by
    a factor >= 2 per term, so the omitted tail is at most the last computed
    increment.
    """
    if terms < 1:
        raise PreconditionError("need at least one product term")
    root = lam * a * np.sqrt(big_c)
    if not 0 <= root < 2:
        raise PreconditionError(f"need 0 <= lambda*a*sqrt(C) < 2, got {root}")
    z = lam**2 * a**2 * big_c
    log_lhs = 0.0
    last = 0.0
    for i in range(terms):
        last = -(2.0**i) * np.log1p(-z / 4.0 ** (i + 1))
        log_lhs += last
    rhs = (2 + root) / (2 - root)
    return ProductLemmaResult(float(np.exp(log_lhs)), float(rhs), terms, float(last))


# -- empirical Poincare harness ----------------------------------------------


class CoordinateFunction:
    """f(g) = g_k: unit gradient, variance pi^2/6."""

    def __init__(self, dim: int, k: int = 0):
        self.dim, self.k = dim, k

    def value(self, g):
        return g[:, self.k]

    def grad_sq(self, g):
        return np.ones(len(g))


class LinearFunction:
    """f(g) = w . g."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.dim = self.weights.size

    def value(self, g):
        return g @ self.weights

    def grad_sq(self, g):
        return np.full(len(g), float(self.weights @ self.weights))


class ShiftedMaxFunction:
    """f(g) = max_k (theta_k + g_k): indicator gradient."""

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=np.float64)
        self.dim = self.theta.size

    def value(self, g):
        return (self.theta[None, :] + g).max(axis=1)

    def grad_sq(self, g):
        return np.ones(len(g))


class SoftMaxFunction:
    """f(g) = log sum exp(theta + g): gradient is the softmax vector."""

    def __init__(self, theta):
        self.theta = np.asarray(theta, dtype=np.float64)
        self.dim = self.theta.size

    def value(self, g):
        return logsumexp(self.theta[None, :] + g, axis=1)

    def grad_sq(self, g):
        z = self.theta[None, :] + g
        p = np.exp(z - logsumexp(z, axis=1, keepdims=True))
        return (p**2).sum(axis=1)


class PerturbMaxValueFunction:
    """f(g) = max_x (theta(x) + sum_i g_i(x_i)) on a small model.

    The gradient points at the winning local assignments, one coordinate
    per variable, so |grad|^2 equals the number of variables.
    """

    def __init__(self, model: PairwiseModel):
        self.model = model
        self.energies = energy_table(model)
        self.offsets = np.concatenate([[0], np.cumsum(model.cards)])
        self.dim = int(self.offsets[-1])
        k = model.num_configs
        digits = model.digits_of_indices(np.arange(k, dtype=np.int64))
        self.flat_states = digits + self.offsets[:-1][None, :]

    def value(self, g):
        pert = g[:, self.flat_states].sum(axis=2)  # (m, K)
        return (self.energies[None, :] + pert).max(axis=1)

    def grad_sq(self, g):
        return np.full(len(g), float(self.model.num_variables))


@dataclasses.dataclass(frozen=True)
class PoincareCheck:
    variance: float
    variance_se: float
    gradient_bound: float  # 4 * E|grad f|^2
    gradient_bound_se: float
    samples: int

    @property
    def holds(self) -> bool:
        slack = 3 * (self.variance_se + self.gradient_bound_se)
        return self.variance <= self.gradient_bound + slack


def empirical_poincare_check(test_fn, samples: int, seed: int = 0) -> PoincareCheck:
    """Monte-Carlo estimate of Var(f) and 4 E|grad f|^2 under Gumbel measure."""
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    batch = 1 << 14
    vals = np.empty(samples)
    grads = np.empty(samples)
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        g = sample_gumbel(rng, size=(m, test_fn.dim))
        vals[done : done + m] = test_fn.value(g)
        grads[done : done + m] = test_fn.grad_sq(g)
        done += m
    var = float(np.var(vals, ddof=1))
    # normal-theory standard error of a sample variance, adequate here
    var_se = var * np.sqrt(2.0 / (samples - 1))
    gb = 4.0 * float(grads.mean())
    gb_se = 4.0 * float(grads.std(ddof=1) / np.sqrt(samples))
    return PoincareCheck(var, float(var_se), gb, gb_se, samples)


# -- deviation histograms ------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DeviationHistogram:
    statistic: str
    samples_per_mean: int
    trials: int
    reference_mean: float
    deviations: np.ndarray  # |trial mean - reference|, one per trial
    gradient_bound: float  # a = sqrt(#subsets)

    def exceedance(self, radius: float) -> float:
        return float((self.deviations > radius).mean())

    def bound_rows(self, deltas: Sequence[float]) -> list[dict]:
        rows = []
        for d in deltas:
            r_p = deviation_radius_poincare(self.gradient_bound, self.samples_per_mean, d)
            r_s = deviation_radius_sobolev(self.gradient_bound, self.samples_per_mean, d)
            r = min(r_p, r_s)
            rows.append(
                {
                    "delta": d,
                    "radius_poincare": r_p,
                    "radius_sobolev": r_s,
                    "radius_best": r,
                    "empirical_exceedance": self.exceedance(r),
                }
            )
        return rows


def _per_sample_statistic(model, subsets, statistic, seed, index, factory, strategy):
    pert = sample_perturbation(model, subsets, seed, index, _factory=factory)
    result = solve(model, pert, strategy)
    if statistic == "logz_bound":
        return result.value
    if statistic == "entropy_bound":
        return pert.value(result.argmax)
    raise PreconditionError(f"unknown statistic {statistic!r}")


def deviation_histogram(
    model: PairwiseModel,
    subsets=None,
    statistic: str = "entropy_bound",
    samples_per_mean: int = 5,
    trials: int = 500,
    seed: int = 0,
    strategy: str = "auto",
    reference_factor: int = 100,
) -> DeviationHistogram:
    """Deviation-of-sample-mean experiment for a perturb-max statistic.

    Each trial averages ``samples_per_mean`` fresh perturb-max values; the
    reference mean comes from an independent run ``reference_factor`` times
    larger (the analytic mean is unavailable).  Sample indices are laid out
    so trial and reference streams never overlap.
    """
    if subsets is None:
        subsets = singleton_subsets(model.num_variables)
    factory = StreamFactory(seed)
    m = samples_per_mean

    ref_count = reference_factor * m
    ref_vals = np.empty(ref_count)
    base = trials * m
    for j in range(ref_count):
        ref_vals[j] = _per_sample_statistic(
            model, subsets, statistic, seed, base + j, factory, strategy
        )
    reference = float(ref_vals.mean())

    devs = np.empty(trials)
    for t in range(trials):
        vals = [
            _per_sample_statistic(
                model, subsets, statistic, seed, t * m + j, factory, strategy
            )
            for j in range(m)
        ]
        devs[t] = abs(float(np.mean(vals)) - reference)

    return DeviationHistogram(
        statistic=statistic,
        samples_per_mean=m,
        trials=trials,
        reference_mean=reference,
        deviations=devs,
        gradient_bound=float(np.sqrt(len(subsets))),
    )
