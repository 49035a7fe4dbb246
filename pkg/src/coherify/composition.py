"""Owner-selected composition of component quotes and its coherence certificate.

Each joint coordinate is owned by exactly one component; aggregation just
selects the owner's value. The joint coherent set is the intersection of
every component polytope (lifted to the joint coordinates) with the
cross-component coupling cuts. The certificate reports the L2 distance
from the locally repaired composition to that set, the matching
worst-case payout bound sqrt(m*) times the distance, the repaired quote,
and which constraints were binding.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .polytope import LinearConstraint, PolytopeSpec, Relation, RelationKind, is_member
from .projection import (
    InfeasibleCouplingError,
    RESIDUAL_FLOOR,
    project_hierarchical,
    project_local,
)

PRODUCT_VERTEX_LIMIT = 4096


class ProductStructuredError(ValueError):
    """Raised when a witness is requested for a product-structured composition."""


@dataclass(frozen=True)
class ComponentSpec:
    """A component's local polytope and the joint coordinates it owns."""

    polytope: PolytopeSpec
    coords: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(int(c) for c in self.coords))
        if len(self.coords) != self.polytope.dim:
            raise ValueError("owned coordinate count must match the local polytope dimension")


@dataclass(frozen=True)
class OwnershipMap:
    owner_of: tuple[int, ...]  # joint coordinate -> component index
    local_index: dict          # (component, joint coordinate) -> local coordinate

    def owner(self, j: int) -> int:
        return self.owner_of[j]


_COUPLING_KINDS = frozenset(
    {"equality", "negation-sum", "partition-sum", "frechet-halfspace", "ladder-chain"}
)


@dataclass(frozen=True)
class CouplingConstraint:
    """One cross-component cut over joint coordinates.

    kinds: equality (all listed coordinates agree), negation-sum and
    partition-sum (listed coordinates sum to b), frechet-halfspace
    (a . r <= b with explicit normal over the listed coordinates),
    ladder-chain (non-increasing along the listed order).
    """

    kind: str
    coords: tuple[int, ...]
    b: float = 1.0
    a: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in _COUPLING_KINDS:
            raise ValueError(f"unknown coupling kind {self.kind!r}")
        coords = tuple(int(c) for c in self.coords)
        object.__setattr__(self, "coords", coords)
        if len(set(coords)) < 2:
            raise ValueError("a coupling constraint must reference >= 2 distinct coordinates")
        if self.kind == "negation-sum" and len(coords) != 2:
            raise ValueError("negation-sum couples exactly 2 coordinates")
        if self.kind == "frechet-halfspace":
            if self.a is None or len(self.a) != len(coords):
                raise ValueError("frechet-halfspace needs an explicit normal over its coordinates")
            object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        elif self.a is not None:
            raise ValueError(f"{self.kind} does not take an explicit normal")

    def linear_rows(self, dim: int, name: str) -> list[tuple[np.ndarray, float, bool, str]]:
        """Materialize as (normal, offset, is_equality, name) rows over the joint space."""
        rows: list[tuple[np.ndarray, float, bool, str]] = []
        if self.kind == "equality":
            for t in range(len(self.coords) - 1):
                a = np.zeros(dim)
                a[self.coords[t]] = 1.0
                a[self.coords[t + 1]] = -1.0
                rows.append((a, 0.0, True, f"{name}:eq{t}"))
        elif self.kind in ("negation-sum", "partition-sum"):
            a = np.zeros(dim)
            a[list(self.coords)] = 1.0
            rows.append((a, self.b, True, f"{name}:sum"))
        elif self.kind == "frechet-halfspace":
            a = np.zeros(dim)
            for c, v in zip(self.coords, self.a):
                a[c] = v
            rows.append((a, self.b, False, f"{name}:hs"))
        else:  # ladder-chain
            for t in range(len(self.coords) - 1):
                a = np.zeros(dim)
                a[self.coords[t]] = -1.0
                a[self.coords[t + 1]] = 1.0
                rows.append((a, 0.0, False, f"{name}:step{t}"))
        return rows

    def to_json(self) -> dict:
        record = {"kind": self.kind, "coords": list(self.coords), "b": self.b}
        if self.a is not None:
            record["a"] = list(self.a)
        return record

    @classmethod
    def from_json(cls, record: dict) -> "CouplingConstraint":
        return cls(
            kind=str(record["kind"]),
            coords=tuple(record["coords"]),
            b=float(record.get("b", 1.0)),
            a=tuple(record["a"]) if record.get("a") is not None else None,
        )


@dataclass(frozen=True)
class CouplingSet:
    constraints: tuple[CouplingConstraint, ...] = ()

    def __len__(self) -> int:
        return len(self.constraints)


def relation_coupling(relation: Relation, coords) -> tuple[CouplingConstraint, ...]:
    """Express a catalog relation as coupling cuts over the given joint coordinates."""
    coords = tuple(int(c) for c in coords)
    if len(coords) != relation.m:
        raise ValueError("coordinate count must match the relation arity")
    kind = relation.kind
    if kind is RelationKind.NEGATION:
        return (CouplingConstraint("negation-sum", coords, 1.0),)
    if kind is RelationKind.PARTITION:
        return (CouplingConstraint("partition-sum", coords, 1.0),)
    if kind is RelationKind.LADDER:
        return (CouplingConstraint("ladder-chain", coords),)
    if kind is RelationKind.PARAPHRASE:
        return (CouplingConstraint("equality", coords, 0.0),)
    c1, c2, c3 = coords
    if kind is RelationKind.CONJUNCTION:
        return (
            CouplingConstraint("frechet-halfspace", (c1, c3), 0.0, a=(-1.0, 1.0)),
            CouplingConstraint("frechet-halfspace", (c2, c3), 0.0, a=(-1.0, 1.0)),
            CouplingConstraint("frechet-halfspace", (c1, c2, c3), 1.0, a=(1.0, 1.0, -1.0)),
        )
    # disjunction
    return (
        CouplingConstraint("frechet-halfspace", (c1, c3), 0.0, a=(1.0, -1.0)),
        CouplingConstraint("frechet-halfspace", (c2, c3), 0.0, a=(1.0, -1.0)),
        CouplingConstraint("frechet-halfspace", (c1, c2, c3), 0.0, a=(-1.0, -1.0, 1.0)),
    )


@dataclass
class CompositionSpec:
    """Components, ownership, and coupling over ``joint_dim`` coordinates.

    Treated as immutable after construction; derived artifacts (joint
    constraint system, product vertices, feasibility witness) are cached.
    """

    components: tuple[ComponentSpec, ...]
    coupling: CouplingSet = CouplingSet()
    joint_dim: int = 0
    _ownership: OwnershipMap = field(init=False, repr=False, compare=False)
    _coupling_rows: list | None = field(default=None, init=False, repr=False, compare=False)
    _joint_spec: PolytopeSpec | None = field(default=None, init=False, repr=False, compare=False)
    _feasible: bool | None = field(default=None, init=False, repr=False, compare=False)
    _feasible_known: bool = field(default=False, init=False, repr=False, compare=False)
    _product_vertices: np.ndarray | None = field(default=None, init=False, repr=False,
                                                 compare=False)

    def __post_init__(self):
        self.components = tuple(self.components)
        if isinstance(self.coupling, (list, tuple)):
            self.coupling = CouplingSet(tuple(self.coupling))
        if self.joint_dim == 0:
            self.joint_dim = sum(len(c.coords) for c in self.components)
        owner_of = [-1] * self.joint_dim
        local_index: dict = {}
        for a, component in enumerate(self.components):
            for i, j in enumerate(component.coords):
                if not (0 <= j < self.joint_dim):
                    raise ValueError(f"coordinate {j} outside the joint space")
                if owner_of[j] != -1:
                    raise ValueError(f"joint coordinate {j} owned twice")
                owner_of[j] = a
                local_index[(a, j)] = i
        if any(o == -1 for o in owner_of):
            missing = [j for j, o in enumerate(owner_of) if o == -1]
            raise ValueError(f"joint coordinates {missing} have no owner")
        for c in self.coupling.constraints:
            if any(j >= self.joint_dim for j in c.coords):
                raise ValueError("coupling constraint references coordinates outside the joint space")
        self._ownership = OwnershipMap(tuple(owner_of), local_index)

    @property
    def ownership(self) -> OwnershipMap:
        return self._ownership

    def cross_component_flags(self) -> tuple[bool, ...]:
        """True where a coupling constraint spans >= 2 owners; intra cuts are flagged off."""
        owner = self._ownership.owner_of
        return tuple(len({owner[j] for j in c.coords}) >= 2 for c in self.coupling.constraints)

    def coupling_rows(self) -> list[tuple[np.ndarray, float, float, bool, str]]:
        if self._coupling_rows is None:
            rows = []
            for idx, c in enumerate(self.coupling.constraints):
                for a, b, is_eq, name in c.linear_rows(self.joint_dim, f"c{idx}:{c.kind}"):
                    rows.append((a, b, float(a @ a), is_eq, name))
            self._coupling_rows = rows
        return self._coupling_rows

    def joint_polytope(self) -> PolytopeSpec:
        """The assembled joint constraint system: lifted locals plus coupling."""
        if self._joint_spec is None:
            eqs: list[LinearConstraint] = []
            hss: list[LinearConstraint] = []
            for a, component in enumerate(self.components):
                for c in component.polytope.equalities:
                    eqs.append(self._lift(c, component, f"m{a}:{c.name}", ))
                for c in component.polytope.halfspaces:
                    hss.append(self._lift(c, component, f"m{a}:{c.name}"))
            for row_a, row_b, _, is_eq, name in self.coupling_rows():
                constraint = LinearConstraint(tuple(row_a), row_b, name)
                (eqs if is_eq else hss).append(constraint)
            self._joint_spec = PolytopeSpec(
                dim=self.joint_dim, equalities=tuple(eqs), halfspaces=tuple(hss)
            )
        return self._joint_spec

    def _lift(self, c: LinearConstraint, component: ComponentSpec, name: str) -> LinearConstraint:
        a = [0.0] * self.joint_dim
        for local_i, joint_j in enumerate(component.coords):
            a[joint_j] = c.a[local_i]
        return LinearConstraint(tuple(a), c.b, name)

    def product_vertices(self) -> np.ndarray:
        """Vertices of the coupling-free product of lifted local polytopes."""
        if self._product_vertices is None:
            from .polytope import enumerate_vertices

            per_component: list[np.ndarray] = []
            total = 1
            for component in self.components:
                if component.polytope.relation is not None:
                    V = enumerate_vertices(component.polytope.relation).as_array()
                else:
                    grid = np.array(
                        list(itertools.product((0.0, 1.0), repeat=component.polytope.dim))
                    )
                    keep = [is_member(component.polytope, v, 1e-9) for v in grid]
                    V = grid[np.array(keep, dtype=bool)]
                per_component.append(V)
                total *= len(V)
                if total > PRODUCT_VERTEX_LIMIT:
                    raise ValueError(
                        f"product vertex count exceeds the enumeration bound {PRODUCT_VERTEX_LIMIT}"
                    )
            out = np.zeros((total, self.joint_dim))
            for row, combo in enumerate(itertools.product(*per_component)):
                for component, v in zip(self.components, combo):
                    out[row, list(component.coords)] = v
            self._product_vertices = out
        return self._product_vertices

    def has_feasible_point(self) -> bool | None:
        """True when an integral consistent point certifies nonemptiness; None = unknown."""
        if not self._feasible_known:
            self._feasible_known = True
            try:
                vertices = self.product_vertices()
            except ValueError:
                self._feasible = None
                return self._feasible
            rows = self.coupling_rows()
            feasible = False
            for v in vertices:
                ok = True
                for a, b, _, is_eq, _ in rows:
                    g = float(a @ v) - b
                    if (is_eq and abs(g) > 1e-9) or (not is_eq and g > 1e-9):
                        ok = False
                        break
                if ok:
                    feasible = True
                    break
            self._feasible = True if feasible else None
        return self._feasible


@dataclass(frozen=True)
class Certificate:
    """Runtime coherence certificate for one composed quote."""

    epsilon_star: float
    exposure_bound: float
    repaired: np.ndarray
    binding: tuple[str, ...]
    inputs_locally_coherent: bool
    composed: np.ndarray

    def __post_init__(self):
        self.repaired.setflags(write=False)
        self.composed.setflags(write=False)

    def to_json(self) -> dict:
        return {
            "eps_star": self.epsilon_star,
            "exposure_bound": self.exposure_bound,
            "repaired": [float(v) for v in self.repaired],
            "binding": list(self.binding),
        }


def _check_locals(comp: CompositionSpec, locals_: list) -> list[np.ndarray]:
    if len(locals_) != len(comp.components):
        raise ValueError(f"expected {len(comp.components)} local quotes, got {len(locals_)}")
    out = []
    for a, (component, q) in enumerate(zip(comp.components, locals_)):
        q = np.asarray(q, dtype=float)
        if q.shape != (component.polytope.dim,):
            raise ValueError(
                f"component {a} quote has shape {q.shape}, needs ({component.polytope.dim},)"
            )
        out.append(q)
    return out


def aggregate(comp: CompositionSpec, locals_: list) -> np.ndarray:
    """Owner-selected assembly: joint coordinate j takes its owner's value."""
    locals_ = _check_locals(comp, locals_)
    x = np.zeros(comp.joint_dim)
    for component, q in zip(comp.components, locals_):
        x[list(component.coords)] = q
    return x


def residual(comp: CompositionSpec, locals_: list, repair_locals: bool = True,
             tol: float = 1e-8) -> Certificate:
    """Certify one composition: local repair, aggregate, joint projection.

    ``repair_locals=False`` skips the per-component repair (the raw-composed
    evaluation paths need this); the certificate still reports whether the
    inputs were locally coherent.
    """
    locals_ = _check_locals(comp, locals_)
    locally_coherent = all(
        is_member(component.polytope, q, tol) for component, q in zip(comp.components, locals_)
    )
    if repair_locals:
        locals_ = [project_local(component.polytope, q)
                   for component, q in zip(comp.components, locals_)]
    x = aggregate(comp, locals_)
    proj = project_hierarchical(comp, x)
    if not proj.converged:
        if comp.has_feasible_point() is True:
            raise RuntimeError("joint projection did not converge within the iteration cap")
        raise InfeasibleCouplingError("joint projection did not converge; coupling may be empty")
    eps = proj.residual if proj.residual >= RESIDUAL_FLOOR else 0.0
    joint = comp.joint_polytope()
    binding = tuple(name for name, v in joint.violations(x) if v > tol)
    return Certificate(
        epsilon_star=eps,
        exposure_bound=float(np.sqrt(comp.joint_dim)) * eps,
        repaired=proj.projected,
        binding=binding,
        inputs_locally_coherent=locally_coherent,
        composed=x,
    )


def _constraint_violations_at(comp: CompositionSpec, points: np.ndarray) -> np.ndarray:
    """Violation of each coupling constraint (rows) at each point (columns)."""
    rows = comp.coupling_rows()
    out = np.zeros((len(rows), points.shape[0]))
    for i, (a, b, _, is_eq, _) in enumerate(rows):
        g = points @ a - b
        out[i] = np.abs(g) if is_eq else np.maximum(g, 0.0)
    return out


def is_product_structured(comp: CompositionSpec, tol: float = 1e-8) -> bool:
    """Whether every coupling cut is redundant over the product of local hulls.

    Decided exactly at small joint dimension by maximizing each cut's
    violation over the product vertex hull; linear violations peak at
    vertices. An empty coupling set is product-structured by definition.
    """
    if len(comp.coupling) == 0:
        return True
    vertices = comp.product_vertices()
    violations = _constraint_violations_at(comp, vertices)
    return bool(np.max(violations) <= tol)


def construct_witness(comp: CompositionSpec, tol: float = 1e-8):
    """Locally coherent component quotes whose composition is incoherent.

    Searches the product vertex hull for the point that most violates the
    worst coupling cut, then restricts it to each component. Fails only if
    the composition was product-structured after all.
    """
    if len(comp.coupling) == 0:
        raise ProductStructuredError("no coupling cuts; the composition is product-structured")
    vertices = comp.product_vertices()
    violations = _constraint_violations_at(comp, vertices)
    per_point = violations.max(axis=0)
    best = float(per_point.max())
    if best <= tol:
        raise ProductStructuredError(
            "every coupling cut is redundant over the product hull; no witness exists"
        )
    # prefer the over-mass side on ties so witnesses read naturally
    candidates = np.nonzero(per_point >= best - 1e-12)[0]
    sums = vertices[candidates].sum(axis=1)
    pick = int(candidates[int(np.argmax(sums))])
    r = vertices[pick]
    locals_ = [r[list(component.coords)].copy() for component in comp.components]
    cert = residual(comp, locals_)
    if cert.epsilon_star <= 0.0:
        raise ProductStructuredError(
            "witness candidate projected to zero residual; composition looks product-structured"
        )
    return locals_, cert


def disagreement_bound(comp: CompositionSpec, locals_: list, reference,
                       tol: float = 1e-8) -> float:
    """L2 disagreement between the repaired composition and a coherent reference.

    Upper-bounds the certificate value for any reference inside the joint
    coherent set, with equality when the reference is the repaired quote.
    """
    reference = np.asarray(reference, dtype=float)
    if not is_member(comp.joint_polytope(), reference, tol):
        raise ValueError("reference quote is not in the joint coherent set")
    locals_ = _check_locals(comp, locals_)
    repaired = [project_local(component.polytope, q)
                for component, q in zip(comp.components, locals_)]
    x = aggregate(comp, repaired)
    return float(np.linalg.norm(x - reference))


def pick_reference(comp: CompositionSpec, candidates, tol: float = 1e-8):
    """First candidate joint quote lying in the joint coherent set, else None."""
    joint = comp.joint_polytope()
    for candidate in candidates:
        candidate = np.asarray(candidate, dtype=float)
        if candidate.shape == (comp.joint_dim,) and is_member(joint, candidate, tol):
            return candidate
    return None


def attribute(comp: CompositionSpec, cert: Certificate) -> dict[int, float]:
    """Per-component share of the residual: L2 mass over owned coordinates.

    Squares sum to the squared certificate value because owners partition
    the joint coordinates.
    """
    delta = cert.composed - cert.repaired
    return {
        a: float(np.linalg.norm(delta[list(component.coords)]))
        for a, component in enumerate(comp.components)
    }


def free_components(dims: list[int]) -> tuple[ComponentSpec, ...]:
    """Box-only components of the given dimensions, coordinates assigned in order."""
    components = []
    offset = 0
    for d in dims:
        components.append(
            ComponentSpec(PolytopeSpec(dim=d), tuple(range(offset, offset + d)))
        )
        offset += d
    return tuple(components)
