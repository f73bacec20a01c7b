"""Perturbed structured learning for binary image denoising.

The denoising model is a grid spin glass whose field signs come from the
observed image: unary weights score agreement between the predicted label
and the observed pixel, pairwise weights score agreement between
neighbouring labels.  Training minimises the perturbed surrogate

    mean_data E_gamma[ max_y { theta . phi(x, y) + sum_i gamma_i(y_i) } ]
    - mean_data theta . phi(x, y_clean)  +  reg * |theta|^2

by projected subgradient descent (pairwise weights clipped to >= 0 so the
inner maximisation stays a graph cut).  With the perturbation sample count
set to zero the update rule is exactly the loss-less structured-SVM
subgradient, which serves as the ablation baseline.  The ground-truth data
term is included: without it the surrogate no longer upper-bounds the
conditional log-likelihood objective it is meant to track.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import PreconditionError
from .gumbel import sample_perturbation, singleton_subsets
from .model import PairwiseModel, grid_edges
from .solvers import solve


@dataclasses.dataclass(frozen=True)
class DenoisingDataset:
    """One clean silhouette plus independently noised observations of it."""

    clean: np.ndarray  # (h, w) in {0, 1}
    train_observed: np.ndarray  # (k_train, h, w)
    test_observed: np.ndarray  # (k_test, h, w)
    noise_rate: float
    seed: int

    @property
    def shape(self) -> tuple[int, int]:
        return self.clean.shape


@dataclasses.dataclass
class LearnedParams:
    theta_unary: np.ndarray  # one weight per pixel
    theta_pair: np.ndarray  # one weight per grid edge
    regularizer: float
    trace: list  # objective value per accepted step

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.theta_unary, self.theta_pair])


def _silhouette(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """A figure-like blob: head, torso and two thin legs, lightly jittered."""
    r = np.arange(height)[:, None]
    c = np.arange(width)[None, :]
    jit = rng.uniform(-0.03, 0.03, size=6)
    head_r, head_c = (0.22 + jit[0]) * height, (0.5 + jit[1]) * width
    torso_r, torso_c = (0.52 + jit[2]) * height, (0.5 + jit[3]) * width
    img = ((r - head_r) ** 2 + (c - head_c) ** 2) <= (0.13 * height) ** 2
    img |= ((r - torso_r) / (0.24 * height)) ** 2 + (
        (c - torso_c) / (0.16 * width)
    ) ** 2 <= 1.0
    leg_w = max(1, int(0.06 * width))
    leg_top = int(torso_r)
    leg_bot = min(height, int(0.95 * height))
    for off in (-0.10 - jit[4] * 0.5, 0.10 + jit[5] * 0.5):
        cc = int((0.5 + off) * width)
        img[leg_top:leg_bot, max(0, cc - leg_w // 2) : cc + (leg_w + 1) // 2] = True
    return img.astype(np.int64)


def generate_denoising_dataset(
    height: int = 20,
    width: int = 20,
    train_count: int = 10,
    test_count: int = 10,
    noise_rate: float = 0.1,
    seed: int = 0,
) -> DenoisingDataset:
    """Deterministic dataset: one silhouette, i.i.d. pixel-flip observations."""
    if not 0 <= noise_rate < 0.5:
        raise PreconditionError("noise rate must be in [0, 0.5)")
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    clean = _silhouette(height, width, rng)

    def noisy(count):
        flips = rng.random((count, height, width)) < noise_rate
        return np.where(flips, 1 - clean[None, :, :], clean[None, :, :])

    return DenoisingDataset(clean, noisy(train_count), noisy(test_count),
                            noise_rate, seed)


def features(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Feature map: per-pixel label/observation agreement, per-edge label agreement.

    Both blocks are +/-1 valued (+1 on agreement).  Dimension is
    #pixels + #grid edges; edge order follows :func:`grid_edges`.
    """
    if x.shape != y.shape:
        raise PreconditionError("observation and labelling shapes differ")
    h, w = x.shape
    sx = 2.0 * x.ravel() - 1.0
    sy = 2.0 * y.ravel() - 1.0
    edges = np.asarray(grid_edges(h, w))
    return np.concatenate([sx * sy, sy[edges[:, 0]] * sy[edges[:, 1]]])


def model_for_observation(
    theta_unary: np.ndarray, theta_pair: np.ndarray, x: np.ndarray
) -> PairwiseModel:
    """The labelling model theta . phi(x, .) as a pairwise grid model."""
    h, w = x.shape
    sx = 2.0 * x.ravel() - 1.0
    field = theta_unary * sx
    unaries = np.stack([-field, field], axis=1)
    edges = grid_edges(h, w)
    edge_i = np.array([e[0] for e in edges], dtype=np.int64)
    edge_j = np.array([e[1] for e in edges], dtype=np.int64)
    tables = np.empty((len(edges), 2, 2))
    tables[:, 0, 0] = tables[:, 1, 1] = theta_pair
    tables[:, 0, 1] = tables[:, 1, 0] = -theta_pair
    return PairwiseModel.from_arrays(
        np.full(h * w, 2, dtype=np.int64), unaries, edge_i, edge_j, tables,
        grid_shape=(h, w),
    )


def perturbed_objective_grad(
    theta_unary: np.ndarray,
    theta_pair: np.ndarray,
    dataset: DenoisingDataset,
    clean: np.ndarray | None = None,
    perturbation_samples: int = 5,
    seed: int = 0,
    regularizer: float = 1.0,
    strategy: str = "auto",
) -> tuple[float, np.ndarray]:
    """Estimate the surrogate objective and its (sub)gradient.

    The gradient of the expected-max term is the mean feature vector of the
    perturbed maximisers (the max-function's subgradient is an indicator),
    so each of the ``perturbation_samples`` draws costs one MAP call per
    training image.  With ``perturbation_samples=0`` the perturbation is
    omitted and the result is the loss-less structured-SVM subgradient.
    """
    y_clean = dataset.clean if clean is None else clean
    theta = np.concatenate([theta_unary, theta_pair])
    n_data = len(dataset.train_observed)
    obj_max = 0.0
    grad_max = np.zeros_like(theta)
    data_feat = np.zeros_like(theta)
    h, w = y_clean.shape
    for d, x in enumerate(dataset.train_observed):
        model = model_for_observation(theta_unary, theta_pair, x)
        if perturbation_samples == 0:
            res = solve(model, None, strategy)
            obj_max += res.value
            grad_max += features(x, res.argmax.reshape(h, w))
        else:
            subsets = singleton_subsets(model.num_variables)
            for j in range(perturbation_samples):
                pert = sample_perturbation(model, subsets, seed, d * 65536 + j)
                res = solve(model, pert, strategy)
                obj_max += res.value / perturbation_samples
                grad_max += features(x, res.argmax.reshape(h, w)) / perturbation_samples
        data_feat += features(x, y_clean)
    obj_max /= n_data
    grad_max /= n_data
    data_feat /= n_data
    objective = obj_max - float(theta @ data_feat) + regularizer * float(theta @ theta)
    gradient = grad_max - data_feat + 2.0 * regularizer * theta
    return objective, gradient


def _objective_only(theta_unary, theta_pair, dataset, M, seed, reg, strategy):
    obj, _ = perturbed_objective_grad(
        theta_unary, theta_pair, dataset,
        perturbation_samples=M, seed=seed, regularizer=reg, strategy=strategy,
    )
    return obj


def train(
    dataset: DenoisingDataset,
    iterations: int = 30,
    step_size: float = 0.25,
    perturbation_samples: int = 5,
    seed: int = 0,
    regularizer: float = 1.0,
    max_halvings: int = 10,
    strategy: str = "auto",
) -> LearnedParams:
    """Projected subgradient descent on the perturbed surrogate.

    Pairwise weights are clipped to >= 0 after every step (keeps the inner
    MAP a graph cut).  A proposed step must not increase the objective,
    compared under shared perturbation draws; otherwise the step size is
    halved, up to ``max_halvings`` times in total.
    """
    h, w = dataset.shape
    n_pix = h * w
    n_edge = len(grid_edges(h, w))
    theta_u = np.zeros(n_pix)
    theta_p = np.zeros(n_edge)
    trace = []
    eta = step_size
    halvings = 0
    it = 0
    while it < iterations:
        draw_seed = (int(seed) * 1_000_003 + it) & (2**63 - 1)
        obj, grad = perturbed_objective_grad(
            theta_u, theta_p, dataset,
            perturbation_samples=perturbation_samples, seed=draw_seed,
            regularizer=regularizer, strategy=strategy,
        )
        cand_u = theta_u - eta * grad[:n_pix]
        cand_p = np.maximum(theta_p - eta * grad[n_pix:], 0.0)
        cand_obj = _objective_only(
            cand_u, cand_p, dataset, perturbation_samples, draw_seed,
            regularizer, strategy,
        )
        it += 1
        if cand_obj <= obj:
            theta_u, theta_p = cand_u, cand_p
            trace.append(cand_obj)
        else:
            halvings += 1
            if halvings > max_halvings:
                break
            eta *= 0.5
    return LearnedParams(theta_u, theta_p, regularizer, trace)


def predict(params: LearnedParams, x: np.ndarray, strategy: str = "auto") -> np.ndarray:
    """MAP labelling of one observation under the learned weights."""
    model = model_for_observation(params.theta_unary, params.theta_pair, x)
    res = solve(model, None, strategy)
    return res.argmax.reshape(x.shape)


def pixel_error(pred: np.ndarray, truth: np.ndarray) -> float:
    """Hamming fraction between two labellings."""
    if pred.shape != truth.shape:
        raise PreconditionError("labelling shapes differ")
    return float(np.mean(pred != truth))


def test_error(params: LearnedParams, dataset: DenoisingDataset,
               strategy: str = "auto") -> float:
    errs = [
        pixel_error(predict(params, x, strategy), dataset.clean)
        for x in dataset.test_observed
    ]
    return float(np.mean(errs))


# -- plain-text image files ----------------------------------------------------


def write_text_image(path, img: np.ndarray) -> None:
    """P1-style plain text bitmap (rows of 0/1)."""
    h, w = img.shape
    with open(path, "w") as fh:
        fh.write(f"P1\n{w} {h}\n")
        for row in img:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def read_text_image(path) -> np.ndarray:
    with open(path) as fh:
        tokens = []
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                tokens.extend(line.split())
    if tokens[0] != "P1":
        raise PreconditionError(f"unsupported image header {tokens[0]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    vals = np.array([int(t) for t in tokens[3 : 3 + w * h]], dtype=np.int64)
    if vals.size != w * h:
        raise PreconditionError("truncated image file")
    return vals.reshape(h, w)
