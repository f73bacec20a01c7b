"""Discrete pairwise models: representation, spin-glass generators, enumeration.

A model assigns a score to each joint configuration of n discrete variables:
a sum of per-variable tables plus tables on edges (i, j) with i < j.  Spin
states {-1, +1} are stored as indices {0, 1}; the generators bake the spin
algebra into the tables so downstream solvers only ever see index lookups.
Infeasible configurations are expressed through an optional domain mask,
never through -inf table entries, so table arithmetic stays finite.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import EnumerationCapError, PreconditionError

NEG_INF = float("-inf")

# Exhaustive scans refuse beyond this many configurations (keeps oracle
# runtimes around a minute at desk scale).
ENUMERATION_CAP = 1 << 24

# Chunk size for vectorised sweeps over the configuration space.
_CHUNK = 1 << 16


@dataclasses.dataclass(frozen=True)
class Variable:
    index: int
    cardinality: int

    def __post_init__(self):
        if self.cardinality < 2:
            raise PreconditionError(
                f"variable {self.index}: cardinality must be >= 2, got {self.cardinality}"
            )


class PairwiseModel:
    """Immutable pairwise model over discrete variables.

    Parameters
    ----------
    cards:
        Per-variable cardinalities (each >= 2).
    unaries:
        Per-variable score tables; ``unaries[i]`` has length ``cards[i]``.
    edges:
        Sequence of ``(i, j, table)`` with ``i < j`` and ``table`` of shape
        ``(cards[i], cards[j])``.  No duplicate pairs.
    domain_mask:
        Optional feasibility predicate on a configuration (int array ->
        bool).  ``None`` means every configuration is feasible.
    grid_shape:
        Optional ``(height, width)`` when the variables form a 4-neighbour
        grid in row-major order; enables the transfer-matrix oracle.
    meta:
        Free-form generation metadata carried through JSON round-trips.
    """

    def __init__(
        self,
        cards: Sequence[int],
        unaries: Sequence[Sequence[float]],
        edges: Sequence[tuple],
        domain_mask: Optional[Callable[[np.ndarray], bool]] = None,
        grid_shape: Optional[tuple[int, int]] = None,
        meta: Optional[dict] = None,
    ):
        cards_arr = np.asarray(cards, dtype=np.int64)
        if cards_arr.ndim != 1 or cards_arr.size == 0:
            raise PreconditionError("model needs at least one variable")
        if np.any(cards_arr < 2):
            raise PreconditionError("every cardinality must be >= 2")
        n = cards_arr.size
        cmax = int(cards_arr.max())

        if len(unaries) != n:
            raise PreconditionError(f"expected {n} unary tables, got {len(unaries)}")
        unary = np.zeros((n, cmax), dtype=np.float64)
        for i, tab in enumerate(unaries):
            tab = np.asarray(tab, dtype=np.float64)
            if tab.shape != (cards_arr[i],):
                raise PreconditionError(
                    f"unary table {i} has shape {tab.shape}, expected ({cards_arr[i]},)"
                )
            unary[i, : cards_arr[i]] = tab

        e = len(edges)
        edge_i = np.empty(e, dtype=np.int64)
        edge_j = np.empty(e, dtype=np.int64)
        edge_tables = np.zeros((e, cmax, cmax), dtype=np.float64)
        seen = set()
        for k, (i, j, tab) in enumerate(edges):
            i, j = int(i), int(j)
            if not (0 <= i < j < n):
                raise PreconditionError(f"edge ({i},{j}) must satisfy 0 <= i < j < n")
            if (i, j) in seen:
                raise PreconditionError(f"duplicate edge ({i},{j})")
            seen.add((i, j))
            tab = np.asarray(tab, dtype=np.float64)
            if tab.shape != (cards_arr[i], cards_arr[j]):
                raise PreconditionError(
                    f"edge ({i},{j}) table has shape {tab.shape}, expected "
                    f"({cards_arr[i]},{cards_arr[j]})"
                )
            edge_i[k], edge_j[k] = i, j
            edge_tables[k, : cards_arr[i], : cards_arr[j]] = tab

        self._finalize(
            cards_arr, unary, edge_i, edge_j, edge_tables, domain_mask, grid_shape, meta
        )

    @classmethod
    def from_arrays(
        cls,
        cards: np.ndarray,
        unaries: np.ndarray,
        edge_i: np.ndarray,
        edge_j: np.ndarray,
        edge_tables: np.ndarray,
        domain_mask=None,
        grid_shape=None,
        meta=None,
    ) -> "PairwiseModel":
        """Vectorised constructor from padded arrays (for bulk model builds).

        ``unaries`` is (n, cmax) and ``edge_tables`` is (E, cmax, cmax);
        entries beyond a variable's cardinality must be zero padding.
        """
        cards_arr = np.ascontiguousarray(cards, dtype=np.int64)
        if cards_arr.ndim != 1 or cards_arr.size == 0:
            raise PreconditionError("model needs at least one variable")
        if np.any(cards_arr < 2):
            raise PreconditionError("every cardinality must be >= 2")
        n = cards_arr.size
        cmax = int(cards_arr.max())
        unary = np.ascontiguousarray(unaries, dtype=np.float64)
        edge_i = np.ascontiguousarray(edge_i, dtype=np.int64)
        edge_j = np.ascontiguousarray(edge_j, dtype=np.int64)
        edge_tables = np.ascontiguousarray(edge_tables, dtype=np.float64)
        if unary.shape != (n, cmax):
            raise PreconditionError(f"unaries must have shape ({n},{cmax})")
        e = edge_i.size
        if edge_j.shape != (e,) or edge_tables.shape != (e, cmax, cmax):
            raise PreconditionError("edge arrays have inconsistent shapes")
        if e:
            if np.any(edge_i < 0) or np.any(edge_i >= edge_j) or np.any(edge_j >= n):
                raise PreconditionError("edges must satisfy 0 <= i < j < n")
            pair_ids = edge_i * n + edge_j
            if np.unique(pair_ids).size != e:
                raise PreconditionError("duplicate edges")
        if not (np.all(np.isfinite(unary)) and np.all(np.isfinite(edge_tables))):
            raise PreconditionError(
                "table entries must be finite; use domain_mask for infeasibility"
            )
        self = cls.__new__(cls)
        self._finalize(
            cards_arr, unary, edge_i, edge_j, edge_tables, domain_mask, grid_shape, meta
        )
        return self

    def _finalize(
        self, cards_arr, unary, edge_i, edge_j, edge_tables, domain_mask, grid_shape, meta
    ):
        n = cards_arr.size
        for arr in (cards_arr, unary, edge_i, edge_j, edge_tables):
            arr.setflags(write=False)
        self.cards = cards_arr
        self.unaries = unary
        self.edge_i = edge_i
        self.edge_j = edge_j
        self.edge_tables = edge_tables
        self.domain_mask = domain_mask
        self.grid_shape = tuple(grid_shape) if grid_shape is not None else None
        self.meta = dict(meta) if meta else {}
        if self.grid_shape is not None and self.grid_shape[0] * self.grid_shape[1] != n:
            raise PreconditionError("grid_shape inconsistent with variable count")
        # strides for lexicographic config indexing (variable 0 most significant)
        strides = np.ones(n, dtype=np.int64)
        strides[:-1] = np.cumprod(cards_arr[::-1])[::-1][1:]
        strides.setflags(write=False)
        self.strides = strides

    # -- basic properties -------------------------------------------------

    @property
    def num_variables(self) -> int:
        return int(self.cards.size)

    @property
    def num_edges(self) -> int:
        return int(self.edge_i.size)

    @property
    def num_configs(self) -> int:
        return int(np.prod([int(c) for c in self.cards], dtype=object))

    @property
    def variables(self) -> list[Variable]:
        return [Variable(i, int(c)) for i, c in enumerate(self.cards)]

    def is_binary(self) -> bool:
        return bool(np.all(self.cards == 2))

    def edge_table(self, k: int) -> np.ndarray:
        i, j = self.edge_i[k], self.edge_j[k]
        return self.edge_tables[k, : self.cards[i], : self.cards[j]]

    def unary_table(self, i: int) -> np.ndarray:
        return self.unaries[i, : self.cards[i]]

    # -- evaluation --------------------------------------------------------

    def _check_config(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape != (self.num_variables,):
            raise PreconditionError(
                f"configuration has shape {x.shape}, expected ({self.num_variables},)"
            )
        if np.any(x < 0) or np.any(x >= self.cards):
            raise PreconditionError("configuration state out of range")
        return x

    def evaluate(self, x) -> float:
        """Score of one configuration; -inf if masked infeasible."""
        x = self._check_config(x)
        if self.domain_mask is not None and not self.domain_mask(x):
            return NEG_INF
        total = float(self.unaries[np.arange(self.num_variables), x].sum())
        if self.num_edges:
            total += float(
                self.edge_tables[
                    np.arange(self.num_edges), x[self.edge_i], x[self.edge_j]
                ].sum()
            )
        return total

    def evaluate_many(self, digits: np.ndarray) -> np.ndarray:
        """Scores for a (m, n) batch of configurations (mask applied row-wise)."""
        vals = self.unaries[np.arange(self.num_variables)[None, :], digits].sum(axis=1)
        if self.num_edges:
            vals += self.edge_tables[
                np.arange(self.num_edges)[None, :],
                digits[:, self.edge_i],
                digits[:, self.edge_j],
            ].sum(axis=1)
        if self.domain_mask is not None:
            feasible = np.fromiter(
                (self.domain_mask(row) for row in digits), dtype=bool, count=len(digits)
            )
            vals = np.where(feasible, vals, NEG_INF)
        return vals

    # -- enumeration -------------------------------------------------------

    def check_enumeration_cap(self, cap: int = ENUMERATION_CAP) -> int:
        k = self.num_configs
        if k > cap:
            raise EnumerationCapError(k, cap)
        return k

    def digits_of_indices(self, idx: np.ndarray) -> np.ndarray:
        """Decode lexicographic configuration indices into state rows."""
        idx = np.asarray(idx, dtype=np.int64)
        return (idx[:, None] // self.strides[None, :]) % self.cards[None, :]

    def index_of_config(self, x) -> int:
        x = self._check_config(x)
        return int((x * self.strides).sum())

    def iter_digit_chunks(self, chunk: int = _CHUNK) -> Iterator[np.ndarray]:
        """Yield (m, n) digit blocks covering all configurations in order."""
        k = self.check_enumeration_cap()
        for start in range(0, k, chunk):
            idx = np.arange(start, min(start + chunk, k), dtype=np.int64)
            yield self.digits_of_indices(idx)


def evaluate(model: PairwiseModel, x) -> float:
    return model.evaluate(x)


def enumerate_configurations(model: PairwiseModel) -> Iterator[np.ndarray]:
    """All feasible configurations, lexicographic order, one ndarray each."""
    model.check_enumeration_cap()
    for block in model.iter_digit_chunks():
        if model.domain_mask is None:
            for row in block:
                yield row.copy()
        else:
            for row in block:
                if model.domain_mask(row):
                    yield row.copy()


def clamp_prefix(model: PairwiseModel, prefix) -> tuple[PairwiseModel, float]:
    """Condition on the first ``len(prefix)`` variables.

    Returns the reduced model over the remaining variables plus the constant
    score contributed by the clamped part, so that for any suffix ``y``::

        model.evaluate(prefix + y) == reduced.evaluate(y) + offset

    Clamped pairwise rows are folded into suffix unaries, which keeps
    graph-cut preconditions (binary, supermodular) intact.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    j = prefix.size
    n = model.num_variables
    if j >= n:
        raise PreconditionError("prefix must leave at least one free variable")
    if np.any(prefix < 0) or np.any(prefix >= model.cards[:j]):
        raise PreconditionError("prefix state out of range")

    offset = float(model.unaries[np.arange(j), prefix].sum())
    new_unaries = [model.unary_table(i).copy() for i in range(j, n)]
    new_edges = []
    for k in range(model.num_edges):
        i, jj = int(model.edge_i[k]), int(model.edge_j[k])
        tab = model.edge_table(k)
        if jj < j:
            offset += float(tab[prefix[i], prefix[jj]])
        elif i < j:
            new_unaries[jj - j] += tab[prefix[i], :]
        else:
            new_edges.append((i - j, jj - j, tab))

    mask = None
    if model.domain_mask is not None:
        base_mask = model.domain_mask

        def mask(y, _p=prefix, _m=base_mask):
            return _m(np.concatenate([_p, np.asarray(y, dtype=np.int64)]))

    reduced = PairwiseModel(
        model.cards[j:], new_unaries, new_edges, domain_mask=mask
    )
    return reduced, offset


# -- spin glasses ----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class SpinGlassSpec:
    """Grid spin-glass ensemble: fields U[-f, f], couplings U[0, c] or U[-c, c]."""

    height: int
    width: int
    field_range: float = 1.0
    coupling_range: float = 1.0
    coupling_mode: str = "attractive"  # or "mixed"
    seed: int = 0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise PreconditionError("grid dimensions must be >= 1")
        if self.field_range < 0 or self.coupling_range < 0:
            raise PreconditionError("ranges must be non-negative")
        if self.coupling_mode not in ("attractive", "mixed"):
            raise PreconditionError(f"unknown coupling mode {self.coupling_mode!r}")


def grid_edges(height: int, width: int) -> list[tuple[int, int]]:
    """4-neighbour grid edges, row-major: right edge then down edge per cell."""
    out = []
    for r in range(height):
        for c in range(width):
            i = r * width + c
            if c + 1 < width:
                out.append((i, i + 1))
            if r + 1 < height:
                out.append((i, i + width))
    return out


def generate_spin_glass(spec: SpinGlassSpec) -> PairwiseModel:
    """Deterministic grid spin glass.

    Stream-splitting rule: a single Philox stream keyed by the seed draws
    all field parameters in row-major variable order, then all coupling
    parameters in the fixed edge order of :func:`grid_edges`.
    """
    n = spec.height * spec.width
    rng = np.random.Generator(np.random.Philox(key=spec.seed & (2**64 - 1)))
    fields = rng.uniform(-spec.field_range, spec.field_range, size=n)
    edges_ij = grid_edges(spec.height, spec.width)
    if spec.coupling_mode == "attractive":
        couplings = rng.uniform(0.0, spec.coupling_range, size=len(edges_ij))
    else:
        couplings = rng.uniform(
            -spec.coupling_range, spec.coupling_range, size=len(edges_ij)
        )

    # spin s in {-1,+1} stored as state s=(0,1): theta_i*s and theta_ij*s*s'
    unaries = [np.array([-f, f]) for f in fields]
    edges = [
        (i, j, np.array([[w, -w], [-w, w]]))
        for (i, j), w in zip(edges_ij, couplings)
    ]
    meta = dataclasses.asdict(spec)
    return PairwiseModel(
        [2] * n, unaries, edges, grid_shape=(spec.height, spec.width), meta=meta
    )


# -- JSON interchange ------------------------------------------------------


def model_to_json_dict(model: PairwiseModel) -> dict:
    out = {
        "variables": [int(c) for c in model.cards],
        "unaries": [model.unary_table(i).tolist() for i in range(model.num_variables)],
        "edges": [
            {
                "i": int(model.edge_i[k]),
                "j": int(model.edge_j[k]),
                "table": model.edge_table(k).tolist(),
            }
            for k in range(model.num_edges)
        ],
        "meta": dict(model.meta),
    }
    if model.grid_shape is not None:
        out["meta"]["grid_shape"] = list(model.grid_shape)
    return out


def model_from_json_dict(doc: dict) -> PairwiseModel:
    meta = dict(doc.get("meta", {}))
    grid_shape = meta.pop("grid_shape", None)
    edges = [(e["i"], e["j"], e["table"]) for e in doc.get("edges", [])]
    return PairwiseModel(
        doc["variables"],
        doc["unaries"],
        edges,
        grid_shape=tuple(grid_shape) if grid_shape else None,
        meta=meta,
    )


def save_model(model: PairwiseModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_json_dict(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> PairwiseModel:
    with open(path) as fh:
        return model_from_json_dict(json.load(fh))


def model_digest(model: PairwiseModel) -> str:
    """Stable content hash, used to key cached oracle results."""
    doc = model_to_json_dict(model)
    doc.pop("meta", None)
    blob = json.dumps(doc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()
