"""L2 projection onto coherent polytopes.

Closed forms where the geometry is a single affine cut or a chain
(negation, partition, ladder), cyclic Boyle-Dykstra projection with
correction vectors for general constraint systems, an exact min-norm-point
oracle over vertex hulls for ground truth, and the local-then-coupling
hierarchical cycle for composed systems.

Plain alternating projection is not a substitute for Dykstra here: it
finds *a* feasible point, not the nearest one. The correction vectors are
what make the cycle converge to the exact L2 projection.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING

import numpy as np

from .polytope import (
    PolytopeSpec,
    Relation,
    RelationKind,
    build_polytope,
    enumerate_vertices,
)

if TYPE_CHECKING:  # pragma: no cover
    from .composition import CompositionSpec

DYKSTRA_TOL = 1e-10
DYKSTRA_MAX_ITER = 10_000
RESIDUAL_FLOOR = 1e-9  # certificate-level report threshold, not a projection tolerance
ORACLE_VERTEX_LIMIT = 4096

CLOSED_FORM_KINDS = frozenset(
    {RelationKind.NEGATION, RelationKind.PARTITION, RelationKind.LADDER}
)


class InfeasibleCouplingError(ValueError):
    """The joint constraint system has empty intersection."""


@dataclass(frozen=True)
class ProjectionResult:
    projected: np.ndarray
    residual: float
    iterations: int
    converged: bool
    active_constraint: str | None = None

    def __post_init__(self):
        self.projected.setflags(write=False)


@lru_cache(maxsize=None)
def _polytope(relation: Relation) -> PolytopeSpec:
    return build_polytope(relation)


@lru_cache(maxsize=None)
def _vertex_array(relation: Relation) -> np.ndarray:
    return enumerate_vertices(relation).as_array()


def _most_violated(spec: PolytopeSpec, q: np.ndarray) -> str | None:
    worst_name, worst = None, 1e-12
    for name, v in spec.violations(q):
        if v > worst:
            worst_name, worst = name, v
    return worst_name


def _result(relation: Relation | None, spec: PolytopeSpec | None, q, projected,
            iterations: int, converged: bool) -> ProjectionResult:
    q = np.asarray(q, dtype=float)
    projected = np.asarray(projected, dtype=float)
    residual = float(np.linalg.norm(q - projected))
    active = _most_violated(spec, q) if spec is not None else None
    return ProjectionResult(projected, residual, iterations, converged, active)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex, O(m log m) sort form."""
    v = np.asarray(v, dtype=float)
    n = v.size
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    idx = np.arange(1, n + 1)
    rho = int(np.nonzero(u * idx > (css - 1.0))[0][-1])
    theta = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def pav_nonincreasing(y: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators fit of a non-increasing sequence, uniform weights."""
    y = np.asarray(y, dtype=float)
    values: list[float] = []
    weights: list[int] = []
    for v in y:
        values.append(float(v))
        weights.append(1)
        # non-increasing fit: merge while an earlier block dips below its successor
        while len(values) > 1 and values[-2] < values[-1]:
            v1, w1 = values.pop(), weights.pop()
            v0, w0 = values.pop(), weights.pop()
            values.append((v0 * w0 + v1 * w1) / (w0 + w1))
            weights.append(w0 + w1)
    out = np.empty(y.size)
    pos = 0
    for v, w in zip(values, weights):
        out[pos : pos + w] = v
        pos += w
    return out


def project_closed_form(relation: Relation, q) -> ProjectionResult:
    """Closed-form projections: negation, partition, ladder.

    negation maps (q1, q2) to ((1+q1-q2)/2, (1-q1+q2)/2); partition is the
    simplex sort algorithm; ladder is non-increasing isotonic regression
    clipped to the unit box.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (relation.m,):
        raise ValueError(f"quote has shape {q.shape}, relation needs ({relation.m},)")
    kind = relation.kind
    if kind not in CLOSED_FORM_KINDS:
        raise ValueError(f"no closed-form projection for relation {kind.value}")
    if kind is RelationKind.NEGATION:
        s = q[0] + q[1] - 1.0
        projected = q - 0.5 * s
    elif kind is RelationKind.PARTITION:
        projected = project_simplex(q)
    else:
        projected = np.clip(pav_nonincreasing(q), 0.0, 1.0)
    return _result(relation, _polytope(relation), q, projected, iterations=1, converged=True)


def _dykstra_rows(spec: PolytopeSpec) -> list[tuple[np.ndarray, float, float, bool, str]]:
    rows: list[tuple[np.ndarray, float, float, bool, str]] = []
    for c in spec.equalities:
        a = np.asarray(c.a, dtype=float)
        rows.append((a, c.b, float(a @ a), True, c.name))
    for c in spec.halfspaces:
        a = np.asarray(c.a, dtype=float)
        rows.append((a, c.b, float(a @ a), False, c.name))
    # box materialized as 2*dim halfspaces
    for i in range(spec.dim):
        e = np.zeros(spec.dim)
        e[i] = 1.0
        rows.append((e, 1.0, 1.0, False, f"box:r{i + 1}<=1"))
        rows.append((-e, 0.0, 1.0, False, f"box:r{i + 1}>=0"))
    return rows


def project_dykstra(spec: PolytopeSpec, q, tol: float = DYKSTRA_TOL,
                    max_iter: int = DYKSTRA_MAX_ITER) -> ProjectionResult:
    """Boyle-Dykstra cyclic projection onto an equality/halfspace system.

    Cycles over every constraint (box included) carrying one correction
    vector per constraint; stops when the largest correction change over a
    full cycle drops below ``tol``. Non-convergence is reported through
    ``converged=False``, never silently.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.asarray(q, dtype=float)
    if q.shape != (spec.dim,):
        raise ValueError(f"quote has shape {q.shape}, polytope needs ({spec.dim},)")
    rows = _dykstra_rows(spec)
    x = q.copy()
    corrections = np.zeros((len(rows), spec.dim))
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        delta = 0.0
        for i, (a, b, aa, is_eq, _) in enumerate(rows):
            y = x + corrections[i]
            t = (float(a @ y) - b) / aa
            if not is_eq and t < 0.0:
                t = 0.0
            x = y - t * a
            p_new = t * a
            change = float(np.max(np.abs(p_new - corrections[i])))
            if change > delta:
                delta = change
            corrections[i] = p_new
        if delta < tol:
            converged = True
            break
    return _result(spec.relation, spec, q, x, iterations=iterations, converged=converged)


def project_polytope_batch(spec: PolytopeSpec, X: np.ndarray, tol: float = DYKSTRA_TOL,
                           max_iter: int = DYKSTRA_MAX_ITER) -> np.ndarray:
    """Dykstra on many quotes at once; rows of ``X`` are independent problems.

    The box is handled as a single clip set here, which changes the
    iterate path but not the limit.
    """
    X = np.asarray(X, dtype=float)
    rows: list[tuple[np.ndarray, float, float, bool]] = []
    for c in spec.equalities:
        a = np.asarray(c.a, dtype=float)
        rows.append((a, c.b, float(a @ a), True))
    for c in spec.halfspaces:
        a = np.asarray(c.a, dtype=float)
        rows.append((a, c.b, float(a @ a), False))
    x = X.copy()
    corrections = [np.zeros_like(X) for _ in rows]
    box_correction = np.zeros_like(X)
    for _ in range(max_iter):
        delta = 0.0
        for i, (a, b, aa, is_eq) in enumerate(rows):
            y = x + corrections[i]
            t = (y @ a - b) / aa
            if not is_eq:
                np.maximum(t, 0.0, out=t)
            x = y - t[:, None] * a
            p_new = y - x
            delta = max(delta, float(np.max(np.abs(p_new - corrections[i]))))
            corrections[i] = p_new
        y = x + box_correction
        x = np.clip(y, 0.0, 1.0)
        p_new = y - x
        delta = max(delta, float(np.max(np.abs(p_new - box_correction))))
        box_correction = p_new
        if delta < tol:
            break
    return x


def _min_norm_point(P: np.ndarray, tol: float = 1e-12) -> tuple[np.ndarray, int]:
    """Wolfe's min-norm-point algorithm over conv(rows of P). Exact up to float."""
    n = P.shape[0]
    norms2 = np.einsum("ij,ij->i", P, P)
    scale = max(1.0, float(norms2.max(initial=0.0)))
    support = [int(np.argmin(norms2))]
    w = np.array([1.0])
    majors = 0
    for majors in range(1, 10 * n + 101):
        x = w @ P[support]
        xx = float(x @ x)
        dots = P @ x
        j = int(np.argmin(dots))
        if dots[j] >= xx - tol * scale or j in support:
            break
        support.append(j)
        w = np.append(w, 0.0)
        while True:
            Ps = P[support]
            k = len(support)
            kkt = np.zeros((k + 1, k + 1))
            kkt[:k, :k] = Ps @ Ps.T
            kkt[:k, k] = 1.0
            kkt[k, :k] = 1.0
            rhs = np.zeros(k + 1)
            rhs[k] = 1.0
            try:
                alpha = np.linalg.solve(kkt, rhs)[:k]
            except np.linalg.LinAlgError:
                alpha = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
            if np.all(alpha >= -1e-12):
                w = np.maximum(alpha, 0.0)
                w /= w.sum()
                break
            shrink = alpha < 0.0
            denom = w - alpha
            ok = shrink & (denom > 1e-15)
            if not np.any(ok):
                w = np.maximum(alpha, 0.0)
                w /= max(w.sum(), 1e-30)
                break
            theta = float(np.min(w[ok] / denom[ok]))
            theta = min(max(theta, 0.0), 1.0)
            w = (1.0 - theta) * w + theta * alpha
            w[w < 1e-14] = 0.0
            keep = w > 0.0
            if not np.any(keep):
                keep[int(np.argmax(alpha))] = True
                w[keep] = 1.0
            support = [s for s, k_ in zip(support, keep) if k_]
            w = w[keep]
            w /= w.sum()
    x = w @ P[support]
    return x, majors


def project_oracle(vertices, q) -> ProjectionResult:
    """Exact projection onto conv(vertices) by min-norm-point search.

    Ground truth for every other projection route; independent of the
    constraint descriptions entirely.
    """
    V = vertices.as_array() if hasattr(vertices, "as_array") else np.asarray(vertices, dtype=float)
    if V.shape[0] > ORACLE_VERTEX_LIMIT:
        raise ValueError(f"{V.shape[0]} vertices exceeds the oracle limit {ORACLE_VERTEX_LIMIT}")
    q = np.asarray(q, dtype=float)
    if q.shape != (V.shape[1],):
        raise ValueError(f"quote has shape {q.shape}, vertices have dimension {V.shape[1]}")
    x, majors = _min_norm_point(V - q)
    return _result(None, None, q, q + x, iterations=majors, converged=True)


def project_relation(relation: Relation, q) -> ProjectionResult:
    """Exact projection onto a catalog relation's polytope.

    Closed forms where they exist, the all-equal mean for paraphrase, and
    the vertex-hull oracle for the two Frechet relations.
    """
    q = np.asarray(q, dtype=float)
    kind = relation.kind
    if kind in CLOSED_FORM_KINDS:
        return project_closed_form(relation, q)
    if kind is RelationKind.PARAPHRASE:
        level = float(np.clip(np.mean(q), 0.0, 1.0))
        projected = np.full(relation.m, level)
        return _result(relation, _polytope(relation), q, projected, iterations=1, converged=True)
    res = project_oracle(_vertex_array(relation), q)
    return ProjectionResult(res.projected, res.residual, res.iterations, res.converged,
                            _most_violated(_polytope(relation), q))


def project_local(polytope: PolytopeSpec, v: np.ndarray) -> np.ndarray:
    """Exact local repair: clip for free boxes, relation dispatch otherwise."""
    v = np.asarray(v, dtype=float)
    if not polytope.equalities and not polytope.halfspaces:
        return np.clip(v, 0.0, 1.0)
    if polytope.relation is not None:
        return project_relation(polytope.relation, v).projected
    # no closed route: tight generic Dykstra (approximate at tol)
    return project_dykstra(polytope, v, tol=1e-12).projected


def project_hierarchical(comp: "CompositionSpec", q, tol: float = DYKSTRA_TOL,
                         max_iter: int = DYKSTRA_MAX_ITER) -> ProjectionResult:
    """Dykstra cycle over the lifted local polytopes and each coupling cut.

    Converges to the projection onto the joint coherent set, i.e. agrees
    with running ``project_dykstra`` on the assembled joint constraint
    system. Empty intersections are caught by a vertex pre-check at small
    joint dimension and by correction-norm divergence otherwise.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (comp.joint_dim,):
        raise ValueError(f"quote has shape {q.shape}, composition needs ({comp.joint_dim},)")
    coupling_rows = comp.coupling_rows()
    n_sets = len(comp.components) + len(coupling_rows)
    x = q.copy()
    corrections = np.zeros((n_sets, comp.joint_dim))
    converged = False
    iterations = 0
    mid_norm = None
    for iterations in range(1, max_iter + 1):
        delta = 0.0
        for i, component in enumerate(comp.components):
            y = x + corrections[i]
            x = np.clip(y, 0.0, 1.0)
            coords = list(component.coords)
            x[coords] = project_local(component.polytope, y[coords])
            p_new = y - x
            change = float(np.max(np.abs(p_new - corrections[i])))
            if change > delta:
                delta = change
            corrections[i] = p_new
        for j, (a, b, aa, is_eq, _) in enumerate(coupling_rows):
            i = len(comp.components) + j
            y = x + corrections[i]
            t = (float(a @ y) - b) / aa
            if not is_eq and t < 0.0:
                t = 0.0
            x = y - t * a
            p_new = t * a
            change = float(np.max(np.abs(p_new - corrections[i])))
            if change > delta:
                delta = change
            corrections[i] = p_new
        if delta < tol:
            converged = True
            break
        if iterations == max_iter // 2:
            mid_norm = float(np.sum(np.abs(corrections)))
    if not converged:
        end_norm = float(np.sum(np.abs(corrections)))
        # empty intersections make the corrections grow without bound
        diverging = (
            mid_norm is not None and end_norm > 1.0 and end_norm > 1.5 * mid_norm + 1e-6
        )
        if diverging and comp.has_feasible_point() is not True:
            raise InfeasibleCouplingError(
                "correction vectors diverge and no feasible point is known; "
                "the coupling intersection is empty"
            )
    spec = comp.joint_polytope()
    return _result(None, spec, q, x, iterations=iterations, converged=converged)
