"""Cliques, logical relations, and their coherent polytopes.

A clique ties ``m`` Bernoulli questions together through one logical
relation. Its coherent set -- the probability vectors realizable as
marginals of some distribution over outcome vectors consistent with the
relation -- is a closed convex polytope inside the unit box. We keep an
explicit equality/halfspace description for projection work and an exact
0/1 vertex enumeration for small ``m`` as the independent ground truth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

ENUMERATION_LIMIT = 12  # 2^m outcome scan beyond this is off the table
MEMBERSHIP_TOL = 1e-8


class RelationKind(str, Enum):
    NEGATION = "neg"
    CONJUNCTION = "and"
    DISJUNCTION = "or"
    PARTITION = "partition"
    LADDER = "ladder"
    PARAPHRASE = "paraphrase"


_FIXED_ARITY = {
    RelationKind.NEGATION: 2,
    RelationKind.CONJUNCTION: 3,
    RelationKind.DISJUNCTION: 3,
}
_MIN_ARITY = {
    RelationKind.PARTITION: 2,
    RelationKind.LADDER: 2,
    RelationKind.PARAPHRASE: 2,
}


@dataclass(frozen=True)
class Relation:
    """A relation kind plus its arity ``m``."""

    kind: RelationKind
    m: int

    def __post_init__(self):
        kind = RelationKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _FIXED_ARITY:
            if self.m != _FIXED_ARITY[kind]:
                raise ValueError(f"{kind.value} requires m={_FIXED_ARITY[kind]}, got m={self.m}")
        elif self.m < _MIN_ARITY[kind]:
            raise ValueError(f"{kind.value} requires m>={_MIN_ARITY[kind]}, got m={self.m}")


def negation() -> Relation:
    return Relation(RelationKind.NEGATION, 2)


def conjunction() -> Relation:
    return Relation(RelationKind.CONJUNCTION, 3)


def disjunction() -> Relation:
    return Relation(RelationKind.DISJUNCTION, 3)


def partition(m: int) -> Relation:
    return Relation(RelationKind.PARTITION, m)


def ladder(m: int) -> Relation:
    return Relation(RelationKind.LADDER, m)


def paraphrase(m: int) -> Relation:
    return Relation(RelationKind.PARAPHRASE, m)


@dataclass(frozen=True)
class Clique:
    """Questions plus the relation that couples them; texts are metadata."""

    id: str
    relation: Relation
    question_texts: tuple[str, ...] = ()
    labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.question_texts and len(self.question_texts) != self.relation.m:
            raise ValueError("question_texts length must equal relation arity")
        if self.labels is not None:
            labels = tuple(int(v) for v in self.labels)
            if len(labels) != self.relation.m:
                raise ValueError("labels length must equal relation arity")
            if any(v not in (0, 1) for v in labels):
                raise ValueError("labels must be 0/1")
            object.__setattr__(self, "labels", labels)

    @classmethod
    def from_json(cls, record: dict) -> "Clique":
        relation = Relation(RelationKind(record["relation"]), int(record["m"]))
        return cls(
            id=str(record["id"]),
            relation=relation,
            question_texts=tuple(record.get("questions", ())),
            labels=tuple(record["labels"]) if record.get("labels") is not None else None,
        )

    def to_json(self) -> dict:
        record = {
            "id": self.id,
            "relation": self.relation.kind.value,
            "m": self.relation.m,
            "questions": list(self.question_texts),
        }
        if self.labels is not None:
            record["labels"] = list(self.labels)
        return record


@dataclass(frozen=True)
class LinearConstraint:
    """One row of a constraint system: ``a . r = b`` or ``a . r <= b``."""

    a: tuple[float, ...]
    b: float
    name: str


def _stack(constraints: tuple[LinearConstraint, ...], dim: int) -> tuple[np.ndarray, np.ndarray]:
    if not constraints:
        A = np.zeros((0, dim))
        b = np.zeros(0)
    else:
        A = np.array([c.a for c in constraints], dtype=float)
        b = np.array([c.b for c in constraints], dtype=float)
    A.setflags(write=False)
    b.setflags(write=False)
    return A, b


@dataclass(frozen=True)
class PolytopeSpec:
    """Equality/halfspace description of a coherent set over the unit box.

    ``halfspaces`` rows mean ``a . r <= b``; the box ``[0,1]^dim`` is
    implicit. ``relation`` records provenance so callers can dispatch to
    closed-form projections.
    """

    dim: int
    equalities: tuple[LinearConstraint, ...] = ()
    halfspaces: tuple[LinearConstraint, ...] = ()
    relation: Relation | None = None
    eq_A: np.ndarray = field(init=False, repr=False, compare=False)
    eq_b: np.ndarray = field(init=False, repr=False, compare=False)
    hs_A: np.ndarray = field(init=False, repr=False, compare=False)
    hs_b: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for c in itertools.chain(self.equalities, self.halfspaces):
            if len(c.a) != self.dim:
                raise ValueError(f"constraint {c.name} has wrong dimension")
            if not any(v != 0.0 for v in c.a):
                raise ValueError(f"constraint {c.name} has zero normal")
        eq_A, eq_b = _stack(self.equalities, self.dim)
        hs_A, hs_b = _stack(self.halfspaces, self.dim)
        object.__setattr__(self, "eq_A", eq_A)
        object.__setattr__(self, "eq_b", eq_b)
        object.__setattr__(self, "hs_A", hs_A)
        object.__setattr__(self, "hs_b", hs_b)

    def violations(self, q: np.ndarray) -> list[tuple[str, float]]:
        """(name, violation) for every constraint, box included."""
        q = np.asarray(q, dtype=float)
        out: list[tuple[str, float]] = []
        if self.equalities:
            gaps = np.abs(self.eq_A @ q - self.eq_b)
            out.extend((c.name, float(g)) for c, g in zip(self.equalities, gaps))
        if self.halfspaces:
            gaps = self.hs_A @ q - self.hs_b
            out.extend((c.name, float(max(g, 0.0))) for c, g in zip(self.halfspaces, gaps))
        for i, v in enumerate(q):
            out.append((f"box:r{i + 1}>=0", float(max(-v, 0.0))))
            out.append((f"box:r{i + 1}<=1", float(max(v - 1.0, 0.0))))
        return out


@dataclass(frozen=True)
class VertexSet:
    """The 0/1 outcome vectors consistent with a relation."""

    vertices: tuple[tuple[int, ...], ...]

    def as_array(self) -> np.ndarray:
        arr = np.array(self.vertices, dtype=float)
        arr.setflags(write=False)
        return arr

    def __len__(self) -> int:
        return len(self.vertices)


def _unit(dim: int, entries: dict[int, float]) -> tuple[float, ...]:
    a = [0.0] * dim
    for i, v in entries.items():
        a[i] = v
    return tuple(a)


def build_polytope(relation: Relation) -> PolytopeSpec:
    """Materialize the coherent polytope of a relation as constraints.

    negation: r1 + r2 = 1.  conjunction/disjunction: the two-sided
    Frechet bounds on the third coordinate.  partition: unit total mass.
    ladder: non-increasing chain.  paraphrase: all coordinates equal.
    """
    m = relation.m
    kind = relation.kind
    eqs: list[LinearConstraint] = []
    hss: list[LinearConstraint] = []
    if kind is RelationKind.NEGATION:
        eqs.append(LinearConstraint((1.0, 1.0), 1.0, "neg:r1+r2=1"))
    elif kind is RelationKind.CONJUNCTION:
        hss.append(LinearConstraint((-1.0, 0.0, 1.0), 0.0, "and:r3<=r1"))
        hss.append(LinearConstraint((0.0, -1.0, 1.0), 0.0, "and:r3<=r2"))
        hss.append(LinearConstraint((1.0, 1.0, -1.0), 1.0, "and:r1+r2-r3<=1"))
        hss.append(LinearConstraint((0.0, 0.0, -1.0), 0.0, "and:r3>=0"))
    elif kind is RelationKind.DISJUNCTION:
        hss.append(LinearConstraint((1.0, 0.0, -1.0), 0.0, "or:r1<=r3"))
        hss.append(LinearConstraint((0.0, 1.0, -1.0), 0.0, "or:r2<=r3"))
        hss.append(LinearConstraint((-1.0, -1.0, 1.0), 0.0, "or:r3<=r1+r2"))
    elif kind is RelationKind.PARTITION:
        eqs.append(LinearConstraint(tuple([1.0] * m), 1.0, "partition:sum=1"))
    elif kind is RelationKind.LADDER:
        for i in range(m - 1):
            hss.append(
                LinearConstraint(_unit(m, {i: -1.0, i + 1: 1.0}), 0.0, f"ladder:r{i + 2}<=r{i + 1}")
            )
    elif kind is RelationKind.PARAPHRASE:
        for i in range(m - 1):
            eqs.append(
                LinearConstraint(_unit(m, {i: 1.0, i + 1: -1.0}), 0.0, f"paraphrase:r{i + 1}=r{i + 2}")
            )
    else:  # pragma: no cover
        raise ValueError(f"unsupported relation kind {kind}")
    return PolytopeSpec(dim=m, equalities=tuple(eqs), halfspaces=tuple(hss), relation=relation)


def is_member(spec: PolytopeSpec, q, tol: float = MEMBERSHIP_TOL) -> bool:
    """Every equality within ``tol``, halfspaces and box violated by at most ``tol``."""
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.dim,):
        raise ValueError(f"quote has dimension {q.shape}, polytope needs ({spec.dim},)")
    if np.any(q < -tol) or np.any(q > 1.0 + tol):
        return False
    if spec.equalities and np.any(np.abs(spec.eq_A @ q - spec.eq_b) > tol):
        return False
    if spec.halfspaces and np.any(spec.hs_A @ q - spec.hs_b > tol):
        return False
    return True


def outcome_consistent(kind: RelationKind, y: tuple[int, ...]) -> bool:
    if kind is RelationKind.NEGATION:
        return y[0] + y[1] == 1
    if kind is RelationKind.CONJUNCTION:
        return y[2] == (y[0] & y[1])
    if kind is RelationKind.DISJUNCTION:
        return y[2] == (y[0] | y[1])
    if kind is RelationKind.PARTITION:
        return sum(y) == 1
    if kind is RelationKind.LADDER:
        return all(y[i + 1] <= y[i] for i in range(len(y) - 1))
    if kind is RelationKind.PARAPHRASE:
        return len(set(y)) == 1
    raise ValueError(f"unsupported relation kind {kind}")  # pragma: no cover


def enumerate_vertices(relation: Relation) -> VertexSet:
    """Scan {0,1}^m for the outcomes the relation admits."""
    if relation.m > ENUMERATION_LIMIT:
        raise ValueError(f"m={relation.m} exceeds the enumeration bound {ENUMERATION_LIMIT}")
    vertices = tuple(
        y for y in itertools.product((0, 1), repeat=relation.m) if outcome_consistent(relation.kind, y)
    )
    return VertexSet(vertices)
