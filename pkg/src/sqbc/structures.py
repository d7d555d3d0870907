"""Structure spaces over a finite item pool.

A structure is a global hypothesis (a flat clustering, a rooted hierarchy,
a labeling, or a linear function) viewed as an answer function on atomic
questions: pair atoms ask whether two items share a cluster, triplet atoms
ask for the rooted topology of three leaves, point atoms ask for an item's
label or real-valued score. A query bundles several items and decomposes
into all atoms over them; committee disagreement on a query is measured by
the fraction of atoms answered differently (``disagreement``) or by the
normalized mean squared gap between real predictions (``sq_distance``).

All structures are immutable after construction and safe to evaluate from
any thread.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

__all__ = [
    "InvalidQueryError",
    "SpaceMismatchError",
    "Topology",
    "PointAtom",
    "PairAtom",
    "TripletAtom",
    "Atom",
    "Answer",
    "Query",
    "FlatClustering",
    "Hierarchy",
    "Labeling",
    "LinearSeparator",
    "ATOM_ARITY",
    "make_atom",
    "decompose",
    "eval_atom",
    "disagreement",
    "sq_distance",
    "answer_code",
    "answer_matrix",
    "prediction_matrix",
    "structure_to_json",
    "structure_from_json",
]


class InvalidQueryError(ValueError):
    """Query malformed for the requested space (too small, repeated items)."""


class SpaceMismatchError(TypeError):
    """Atom arity or answer type does not match the structure's space."""


class Topology(enum.Enum):
    """The four rooted trees on three leaves i < j < k."""

    CHERRY_IJ = "cherry_ij"
    CHERRY_IK = "cherry_ik"
    CHERRY_JK = "cherry_jk"
    STAR = "star"


@dataclass(frozen=True)
class PointAtom:
    """Atomic question about one item (its label or score)."""

    i: int

    def __post_init__(self):
        if self.i < 0:
            raise ValueError(f"item index must be non-negative, got {self.i}")

    @property
    def items(self) -> tuple[int, ...]:
        return (self.i,)


@dataclass(frozen=True)
class PairAtom:
    """Atomic question: do items i and j share a cluster? Stored with i < j."""

    i: int
    j: int

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair atom items must be distinct")
        if self.i > self.j:
            i, j = self.j, self.i
            object.__setattr__(self, "i", i)
            object.__setattr__(self, "j", j)
        if self.i < 0:
            raise ValueError("item indices must be non-negative")

    @property
    def items(self) -> tuple[int, ...]:
        return (self.i, self.j)


@dataclass(frozen=True)
class TripletAtom:
    """Atomic question: rooted topology of three leaves. Stored with i < j < k."""

    i: int
    j: int
    k: int

    def __post_init__(self):
        i, j, k = sorted((self.i, self.j, self.k))
        if i == j or j == k:
            raise ValueError("triplet atom items must be distinct")
        if i < 0:
            raise ValueError("item indices must be non-negative")
        object.__setattr__(self, "i", i)
        object.__setattr__(self, "j", j)
        object.__setattr__(self, "k", k)

    @property
    def items(self) -> tuple[int, ...]:
        return (self.i, self.j, self.k)


Atom = Union[PointAtom, PairAtom, TripletAtom]

# Answers are plain values: bool for same-pair, int for class labels,
# Topology for triplets, float for real-valued predictions.
Answer = Union[bool, int, Topology, float]


@dataclass(frozen=True)
class Query:
    """An ordered bundle of distinct items shown to the expert as one snapshot."""

    items: tuple[int, ...]

    def __post_init__(self):
        items = tuple(int(i) for i in self.items)
        if len(set(items)) != len(items):
            raise InvalidQueryError(f"query items must be distinct: {items}")
        object.__setattr__(self, "items", items)

    def __len__(self) -> int:
        return len(self.items)


ATOM_ARITY = {"clustering": 2, "hierarchy": 3, "labeling": 1, "linear": 1}

_ATOM_TYPE = {1: PointAtom, 2: PairAtom, 3: TripletAtom}


def make_atom(space_kind: str, items: Sequence[int]) -> Atom:
    """Build the canonical atom of the given space over ``items``."""
    arity = ATOM_ARITY[space_kind]
    if len(items) != arity:
        raise SpaceMismatchError(
            f"{space_kind} atoms take {arity} items, got {len(items)}"
        )
    return _ATOM_TYPE[arity](*items)


def decompose(query: Query, space_kind: str) -> list[Atom]:
    """All atoms of the space contained in ``query``, in canonical order.

    Returns exactly C(s, arity) atoms where s = |query|; atoms are the
    sorted combinations of the query's items in lexicographic order.
    """
    if space_kind not in ATOM_ARITY:
        raise SpaceMismatchError(f"unknown space kind {space_kind!r}")
    arity = ATOM_ARITY[space_kind]
    if len(query) < arity:
        raise InvalidQueryError(
            f"query of size {len(query)} cannot be decomposed into "
            f"{space_kind} atoms of arity {arity}"
        )
    atom_cls = _ATOM_TYPE[arity]
    items = sorted(query.items)
    return [atom_cls(*combo) for combo in itertools.combinations(items, arity)]


def _relabel_first_occurrence(assignment: Iterable[int]) -> tuple[int, ...]:
    """Relabel cluster ids by order of first occurrence, starting at 1."""
    mapping: dict[int, int] = {}
    out = []
    for z in assignment:
        z = int(z)
        if z not in mapping:
            mapping[z] = len(mapping) + 1
        out.append(mapping[z])
    return tuple(out)


class FlatClustering:
    """A partition of the pool, answering pair atoms with same/different.

    Cluster ids carry no meaning, so assignments are canonicalized by first
    occurrence at construction; two relabelings of the same partition
    compare equal and hash identically.
    """

    space = "clustering"
    arity = 2

    __slots__ = ("assignment",)

    def __init__(self, assignment: Iterable[int]):
        canon = _relabel_first_occurrence(assignment)
        if not canon:
            raise ValueError("clustering over an empty pool")
        object.__setattr__(self, "assignment", canon)

    def __setattr__(self, name, value):
        raise AttributeError("FlatClustering is immutable")

    @property
    def n_items(self) -> int:
        return len(self.assignment)

    @property
    def n_clusters(self) -> int:
        return max(self.assignment)

    def eval_atom(self, atom: PairAtom) -> bool:
        if not isinstance(atom, PairAtom):
            raise SpaceMismatchError(f"clustering answers pair atoms, got {atom!r}")
        return self.assignment[atom.i] == self.assignment[atom.j]

    def __eq__(self, other):
        return isinstance(other, FlatClustering) and self.assignment == other.assignment

    def __hash__(self):
        return hash(("clustering", self.assignment))

    def __repr__(self):
        return f"FlatClustering({list(self.assignment)})"


def _canonical_tree(node) -> tuple:
    """Normalize a nested-list tree: children sorted by smallest leaf.

    Leaves are ints; internal nodes become tuples of child trees. Raises on
    unary internal nodes or repeated leaves.
    """
    if isinstance(node, (int, np.integer)):
        return (int(node), int(node))  # (min_leaf, leaf) sentinel for sorting
    children = [_canonical_tree(c) for c in node]
    if len(children) < 2:
        raise ValueError("internal tree nodes must have at least 2 children")
    children.sort(key=lambda c: c[0])
    min_leaf = children[0][0]
    return (min_leaf, tuple(c[1] for c in children))


def _tree_leaves(node) -> list[int]:
    if isinstance(node, int):
        return [node]
    out: list[int] = []
    for c in node:
        out.extend(_tree_leaves(c))
    return out


class Hierarchy:
    """A rooted tree whose leaves are the pool items, answering triplet atoms.

    Only topology matters: child order is canonicalized (sorted by smallest
    leaf), there are no edge lengths, and evaluation depends solely on which
    pairwise lowest common ancestor is deepest.
    """

    space = "hierarchy"
    arity = 3

    __slots__ = ("root", "_leaf_path")

    def __init__(self, tree):
        canon = _canonical_tree(tree)[1]
        leaves = _tree_leaves(canon)
        if len(set(leaves)) != len(leaves):
            raise ValueError("tree leaves must be distinct items")
        # Path from root to each leaf as a tuple of node ids; the LCA of two
        # leaves sits at the length of their common path prefix.
        paths: dict[int, tuple[int, ...]] = {}
        counter = itertools.count()

        def walk(node, prefix):
            node_id = next(counter)
            if isinstance(node, int):
                paths[node] = prefix
                return
            for child in node:
                walk(child, prefix + (node_id,))

        walk(canon, ())
        object.__setattr__(self, "root", canon)
        object.__setattr__(self, "_leaf_path", paths)

    def __setattr__(self, name, value):
        raise AttributeError("Hierarchy is immutable")

    @property
    def leaves(self) -> tuple[int, ...]:
        return tuple(sorted(self._leaf_path))

    def _lca_depth(self, a: int, b: int) -> int:
        pa, pb = self._leaf_path[a], self._leaf_path[b]
        depth = 0
        for x, y in zip(pa, pb):
            if x != y:
                break
            depth += 1
        return depth

    def eval_atom(self, atom: TripletAtom) -> Topology:
        if not isinstance(atom, TripletAtom):
            raise SpaceMismatchError(f"hierarchy answers triplet atoms, got {atom!r}")
        i, j, k = atom.items
        for leaf in (i, j, k):
            if leaf not in self._leaf_path:
                raise ValueError(f"item {leaf} is not a leaf of this hierarchy")
        d_ij = self._lca_depth(i, j)
        d_ik = self._lca_depth(i, k)
        d_jk = self._lca_depth(j, k)
        if d_ij > d_ik and d_ij > d_jk:
            return Topology.CHERRY_IJ
        if d_ik > d_ij and d_ik > d_jk:
            return Topology.CHERRY_IK
        if d_jk > d_ij and d_jk > d_ik:
            return Topology.CHERRY_JK
        return Topology.STAR

    def __eq__(self, other):
        return isinstance(other, Hierarchy) and self.root == other.root

    def __hash__(self):
        return hash(("hierarchy", self.root))

    def __repr__(self):
        return f"Hierarchy({self.root!r})"


class Labeling:
    """An explicit label table over the pool, answering point atoms."""

    space = "labeling"
    arity = 1

    __slots__ = ("labels",)

    def __init__(self, labels: Iterable[int]):
        object.__setattr__(self, "labels", tuple(int(v) for v in labels))
        if not self.labels:
            raise ValueError("labeling over an empty pool")

    def __setattr__(self, name, value):
        raise AttributeError("Labeling is immutable")

    def eval_atom(self, atom: PointAtom) -> int:
        if not isinstance(atom, PointAtom):
            raise SpaceMismatchError(f"labeling answers point atoms, got {atom!r}")
        return self.labels[atom.i]

    def __eq__(self, other):
        return isinstance(other, Labeling) and self.labels == other.labels

    def __hash__(self):
        return hash(("labeling", self.labels))

    def __repr__(self):
        return f"Labeling({list(self.labels)})"


class LinearSeparator:
    """A linear function over pool features, answering point atoms.

    With ``output="real"`` the answer is the raw inner product (a real
    prediction); with ``output="sign"`` it is the +1/-1 class label.
    """

    space = "linear"
    arity = 1

    __slots__ = ("w", "features", "output")

    def __init__(self, w, features, output: str = "real"):
        w = np.asarray(w, dtype=float)
        features = np.asarray(features, dtype=float)
        if features.ndim != 2:
            raise ValueError("pool features must be a 2-D array")
        if w.shape != (features.shape[1],):
            raise ValueError(
                f"weight dimension {w.shape} does not match pool features "
                f"{features.shape}"
            )
        if output not in ("real", "sign"):
            raise ValueError(f"output must be 'real' or 'sign', got {output!r}")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "output", output)

    def __setattr__(self, name, value):
        raise AttributeError("LinearSeparator is immutable")

    def eval_atom(self, atom: PointAtom):
        if not isinstance(atom, PointAtom):
            raise SpaceMismatchError(f"linear answers point atoms, got {atom!r}")
        score = float(self.features[atom.i] @ self.w)
        if self.output == "sign":
            return 1 if score >= 0 else -1
        return score

    def __eq__(self, other):
        return (
            isinstance(other, LinearSeparator)
            and self.output == other.output
            and self.w.shape == other.w.shape
            and bool(np.all(self.w == other.w))
        )

    def __hash__(self):
        return hash(("linear", self.output, self.w.tobytes()))

    def __repr__(self):
        return f"LinearSeparator(dim={self.w.shape[0]}, output={self.output!r})"


Structure = Union[FlatClustering, Hierarchy, Labeling, LinearSeparator]


def eval_atom(structure, atom: Atom) -> Answer:
    """Evaluate a structure's answer to one atom (pure, thread-safe)."""
    return structure.eval_atom(atom)


def disagreement(g, g_prime, query: Query, space_kind: str | None = None) -> float:
    """Fraction of the query's atoms on which two structures disagree.

    Symmetric, in [0, 1], and zero iff the structures agree on every atom
    of the query.
    """
    if space_kind is None:
        space_kind = g.space
    if g.space != g_prime.space:
        raise SpaceMismatchError(
            f"structures from different spaces: {g.space} vs {g_prime.space}"
        )
    atoms = decompose(query, space_kind)
    n_diff = sum(1 for a in atoms if g.eval_atom(a) != g_prime.eval_atom(a))
    return n_diff / len(atoms)


def sq_distance(
    g,
    g_prime,
    query: Query,
    clip_bound: float = 5.0,
    d_max: float | None = None,
) -> float:
    """Normalized mean squared gap between two structures' real predictions.

    Predictions are clipped to [-clip_bound, clip_bound] before differencing
    and each squared gap is divided by ``d_max`` (default 4*clip_bound**2,
    the largest clipped gap), so the result lies in [0, 1].
    """
    if d_max is None:
        d_max = 4.0 * clip_bound * clip_bound
    if d_max <= 0:
        raise ValueError(f"d_max must be positive, got {d_max}")
    atoms = decompose(query, g.space)
    total = 0.0
    for a in atoms:
        za = _clip(float(g.eval_atom(a)), clip_bound)
        zb = _clip(float(g_prime.eval_atom(a)), clip_bound)
        total += (za - zb) ** 2 / d_max
    return total / len(atoms)


def _clip(z: float, bound: float) -> float:
    return max(-bound, min(bound, z))


_TOPOLOGY_CODE = {t: idx for idx, t in enumerate(Topology)}


def answer_code(answer: Answer) -> int:
    """Integer code for a discrete answer (bools, labels, topologies)."""
    if isinstance(answer, Topology):
        return _TOPOLOGY_CODE[answer]
    if isinstance(answer, (bool, np.bool_)):
        return int(answer)
    if isinstance(answer, (int, np.integer)):
        return int(answer)
    raise SpaceMismatchError(
        f"real-valued answer {answer!r} has no discrete code; use prediction_matrix"
    )


def answer_matrix(structures: Sequence, atoms: Sequence[Atom]) -> np.ndarray:
    """(n_structures, n_atoms) int matrix of coded discrete answers.

    The committee-side workhorse: pairwise disagreement over many sampled
    committee pairs reduces to integer comparisons on rows of this matrix.
    """
    out = np.empty((len(structures), len(atoms)), dtype=np.int64)
    for gi, g in enumerate(structures):
        row = out[gi]
        for ai, a in enumerate(atoms):
            row[ai] = answer_code(g.eval_atom(a))
    return out


def prediction_matrix(
    structures: Sequence, atoms: Sequence[Atom], clip_bound: float = 5.0
) -> np.ndarray:
    """(n_structures, n_atoms) float matrix of clipped real predictions."""
    out = np.empty((len(structures), len(atoms)), dtype=float)
    for gi, g in enumerate(structures):
        for ai, a in enumerate(atoms):
            out[gi, ai] = float(structures[gi].eval_atom(a))
    np.clip(out, -clip_bound, clip_bound, out=out)
    return out


def _tree_to_json(node):
    if isinstance(node, int):
        return node
    return [_tree_to_json(c) for c in node]


def structure_to_json(structure):
    """JSON payload: clustering as an int array, hierarchy as nested item
    lists, labeling as an int array, linear as a real array."""
    if isinstance(structure, FlatClustering):
        return {"kind": "clustering", "assignment": list(structure.assignment)}
    if isinstance(structure, Hierarchy):
        return {"kind": "hierarchy", "tree": _tree_to_json(structure.root)}
    if isinstance(structure, Labeling):
        return {"kind": "labeling", "labels": list(structure.labels)}
    if isinstance(structure, LinearSeparator):
        return {
            "kind": "linear",
            "w": [float(v) for v in structure.w],
            "output": structure.output,
        }
    raise TypeError(f"not a structure: {structure!r}")


def structure_from_json(payload, features=None):
    """Inverse of ``structure_to_json``; linear payloads need pool features."""
    kind = payload["kind"]
    if kind == "clustering":
        return FlatClustering(payload["assignment"])
    if kind == "hierarchy":
        return Hierarchy(payload["tree"])
    if kind == "labeling":
        return Labeling(payload["labels"])
    if kind == "linear":
        if features is None:
            raise ValueError("linear structures need pool features to deserialize")
        return LinearSeparator(payload["w"], features, payload.get("output", "real"))
    raise ValueError(f"unknown structure kind {kind!r}")
