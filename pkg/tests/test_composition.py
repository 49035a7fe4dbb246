import numpy as np
import pytest

from coherify.composition import (
    Certificate,
    ComponentSpec,
    CompositionSpec,
    CouplingConstraint,
    ProductStructuredError,
    aggregate,
    attribute,
    construct_witness,
    disagreement_bound,
    free_components,
    is_product_structured,
    pick_reference,
    relation_coupling,
    residual,
)
from coherify.polytope import (
    build_polytope,
    conjunction,
    disjunction,
    enumerate_vertices,
    ladder,
    negation,
    paraphrase,
    partition,
)
from coherify.projection import project_relation


def negation_split() -> CompositionSpec:
    return CompositionSpec(free_components([1, 1]), relation_coupling(negation(), range(2)), 2)


def partition_split(m: int = 4) -> CompositionSpec:
    return CompositionSpec(
        free_components([1] * m), relation_coupling(partition(m), range(m)), m
    )


# --- aggregation --------------------------------------------------------------


def test_aggregate_single_component_identity():
    comp = CompositionSpec((ComponentSpec(build_polytope(negation()), (0, 1)),), (), 2)
    q = np.array([0.3, 0.7])
    assert np.array_equal(aggregate(comp, [q]), q)


def test_aggregate_partition_case():
    comp = partition_split()
    x = aggregate(comp, [[0.39], [0.73], [0.67], [0.71]])
    assert np.allclose(x, [0.39, 0.73, 0.67, 0.71])


def test_aggregate_negation_case():
    x = aggregate(negation_split(), [[0.84], [0.89]])
    assert np.allclose(x, [0.84, 0.89])


def test_aggregate_dimension_mismatch():
    with pytest.raises(ValueError):
        aggregate(negation_split(), [[0.84, 0.2], [0.89]])


def test_ownership_map_total():
    comp = partition_split()
    owner = comp.ownership
    assert owner.owner_of == (0, 1, 2, 3)
    assert owner.local_index[(2, 2)] == 0


# --- residual certificates ----------------------------------------------------


def test_residual_zero_for_locally_coherent_without_coupling():
    comp = CompositionSpec(
        (
            ComponentSpec(build_polytope(negation()), (0, 1)),
            ComponentSpec(build_polytope(partition(3)), (2, 3, 4)),
        ),
        (),
        5,
    )
    cert = residual(comp, [[0.3, 0.7], [0.2, 0.5, 0.3]])
    assert cert.epsilon_star == 0.0
    assert cert.exposure_bound == 0.0
    assert cert.inputs_locally_coherent
    assert cert.binding == ()


def test_residual_partition_golden_case():
    cert = residual(partition_split(), [[0.39], [0.73], [0.67], [0.71]])
    assert cert.epsilon_star == pytest.approx(0.750, abs=0.002)
    assert cert.exposure_bound == pytest.approx(1.500, abs=0.004)
    assert np.allclose(cert.repaired, [0.015, 0.355, 0.295, 0.335], atol=1e-9)
    assert cert.exposure_bound == pytest.approx(2.0 * cert.epsilon_star, abs=1e-12)
    assert any("partition-sum" in name for name in cert.binding)


def test_residual_negation_golden_case():
    cert = residual(negation_split(), [[0.84], [0.89]])
    assert cert.epsilon_star == pytest.approx(0.517, abs=0.002)
    assert cert.exposure_bound == pytest.approx(0.730, abs=0.003)


def test_residual_flags_unrepaired_locals():
    comp = CompositionSpec((ComponentSpec(build_polytope(negation()), (0, 1)),), (), 2)
    cert = residual(comp, [[0.8, 0.9]])
    assert not cert.inputs_locally_coherent
    assert cert.epsilon_star == 0.0  # local repair runs first, empty coupling


def test_residual_raw_path_keeps_violation():
    comp = CompositionSpec((ComponentSpec(build_polytope(negation()), (0, 1)),), (), 2)
    cert = residual(comp, [[0.8, 0.9]], repair_locals=False)
    assert cert.epsilon_star > 0.1
    assert not cert.inputs_locally_coherent


def test_repaired_quote_is_member_of_joint_set():
    from coherify.polytope import is_member

    rng = np.random.default_rng(15)
    for relation in (negation(), partition(4), conjunction(), ladder(4)):
        m = relation.m
        comp = CompositionSpec(
            free_components([1] * m), relation_coupling(relation, range(m)), m
        )
        joint = comp.joint_polytope()
        for _ in range(50):
            cert = residual(comp, [[v] for v in rng.uniform(size=m)])
            assert is_member(joint, cert.repaired, 1e-8)


def test_residual_raises_on_empty_intersection():
    from coherify.projection import InfeasibleCouplingError

    coupling = (
        CouplingConstraint("partition-sum", (0, 1), 1.0),
        CouplingConstraint("frechet-halfspace", (0, 1), 0.3, a=(1.0, 1.0)),
    )
    comp = CompositionSpec(free_components([1, 1]), coupling, 2)
    with pytest.raises(InfeasibleCouplingError):
        residual(comp, [[0.5], [0.5]])


def test_exposure_bound_is_sqrt_m_times_eps_exactly():
    rng = np.random.default_rng(0)
    comp = partition_split(5)
    for _ in range(50):
        cert = residual(comp, [[v] for v in rng.uniform(size=5)])
        assert cert.exposure_bound == pytest.approx(
            np.sqrt(5) * cert.epsilon_star, abs=1e-15
        )


# --- product structure and witnesses -------------------------------------------


def test_empty_coupling_is_product_structured():
    comp = CompositionSpec(free_components([2, 2]), (), 4)
    assert is_product_structured(comp)


def test_partition_coupling_is_not_product_structured():
    assert not is_product_structured(partition_split())


def test_redundant_halfspace_is_product_structured():
    comp = CompositionSpec(
        free_components([1, 1, 1]),
        (CouplingConstraint("frechet-halfspace", (0, 1, 2), 3.0, a=(1.0, 1.0, 1.0)),),
        3,
    )
    assert is_product_structured(comp)


def test_witness_negation():
    locals_, cert = construct_witness(negation_split())
    assert [list(v) for v in locals_] == [[1.0], [1.0]]
    assert cert.epsilon_star == pytest.approx(1.0 / np.sqrt(2), abs=1e-9)


def test_witness_partition():
    locals_, cert = construct_witness(partition_split(4))
    assert all(list(v) == [1.0] for v in locals_)
    assert cert.epsilon_star == pytest.approx(1.5, abs=1e-9)


def test_witness_refused_on_product_structured():
    comp = CompositionSpec(free_components([2, 2]), (), 4)
    with pytest.raises(ProductStructuredError):
        construct_witness(comp)


def test_product_test_respects_enumeration_bound():
    comp = CompositionSpec(
        free_components([13]), relation_coupling(partition(13), range(13)), 13
    )
    with pytest.raises(ValueError):
        is_product_structured(comp)


@pytest.mark.parametrize(
    "relation",
    [negation(), conjunction(), disjunction(), partition(4), ladder(4), paraphrase(3)],
    ids=lambda r: r.kind.value,
)
def test_witness_exists_for_every_coupled_relation(relation):
    m = relation.m
    comp = CompositionSpec(
        free_components([1] * m), relation_coupling(relation, range(m)), m
    )
    assert not is_product_structured(comp)
    locals_, cert = construct_witness(comp)
    assert cert.epsilon_star > 1e-3
    assert cert.inputs_locally_coherent


def test_dichotomy_forward_random_inputs():
    rng = np.random.default_rng(1)
    product_specs = [
        CompositionSpec(
            (
                ComponentSpec(build_polytope(negation()), (0, 1)),
                ComponentSpec(build_polytope(partition(3)), (2, 3, 4)),
            ),
            (),
            5,
        ),
        CompositionSpec(
            free_components([2, 2]),
            (CouplingConstraint("frechet-halfspace", (0, 2), 2.0, a=(1.0, 1.0)),),
            4,
        ),
    ]
    for comp in product_specs:
        assert is_product_structured(comp)
        for _ in range(200):
            locals_ = [
                rng.uniform(size=c.polytope.dim) for c in comp.components
            ]
            cert = residual(comp, locals_)
            assert cert.epsilon_star <= 1e-8


# --- disagreement bound ---------------------------------------------------------


def test_disagreement_bound_equals_eps_at_repaired_quote():
    comp = negation_split()
    locals_ = [[0.84], [0.89]]
    cert = residual(comp, locals_)
    bound = disagreement_bound(comp, locals_, cert.repaired)
    assert bound == pytest.approx(cert.epsilon_star, abs=1e-9)


def test_disagreement_bound_reported_case():
    comp = negation_split()
    bound = disagreement_bound(comp, [[0.84], [0.89]], (0.5, 0.5))
    # direct norm: ||(0.34, 0.39)||
    assert bound == pytest.approx(np.sqrt(0.34**2 + 0.39**2), abs=1e-12)
    cert = residual(comp, [[0.84], [0.89]])
    assert bound >= cert.epsilon_star


def test_disagreement_bound_vanishes_for_single_owner():
    comp = CompositionSpec((ComponentSpec(build_polytope(negation()), (0, 1)),), (), 2)
    locals_ = [[0.3, 0.7]]
    cert = residual(comp, locals_)
    assert disagreement_bound(comp, locals_, cert.composed) == pytest.approx(0.0, abs=1e-12)


def test_disagreement_bound_rejects_incoherent_reference():
    with pytest.raises(ValueError):
        disagreement_bound(negation_split(), [[0.84], [0.89]], (0.9, 0.9))


def test_disagreement_bound_dominates_on_random_trials():
    rng = np.random.default_rng(4)
    for relation in (negation(), partition(4), conjunction()):
        m = relation.m
        comp = CompositionSpec(
            free_components([1] * m), relation_coupling(relation, range(m)), m
        )
        V = enumerate_vertices(relation).as_array()
        for _ in range(200):
            locals_ = [rng.uniform(size=1) for _ in range(m)]
            reference = rng.dirichlet(np.ones(len(V))) @ V
            cert = residual(comp, locals_)
            bound = disagreement_bound(comp, locals_, reference)
            assert bound >= cert.epsilon_star - 1e-9


def test_negation_bound_closed_form_in_unclipped_regime():
    # with reference r on the sum=1 line, eps* = |delta1 + delta2| / sqrt(2)
    comp = negation_split()
    rng = np.random.default_rng(9)
    for _ in range(100):
        locals_ = [rng.uniform(0.2, 0.8, size=1) for _ in range(2)]
        reference = np.array([0.5, 0.5])
        x = aggregate(comp, locals_)
        delta = x - reference
        cert = residual(comp, locals_)
        assert cert.epsilon_star == pytest.approx(abs(delta.sum()) / np.sqrt(2), abs=1e-9)


def test_partition_bound_closed_form_in_unclipped_regime():
    m = 4
    comp = partition_split(m)
    rng = np.random.default_rng(10)
    reference = np.full(m, 1.0 / m)
    for _ in range(100):
        locals_ = [rng.uniform(0.15, 0.45, size=1) for _ in range(m)]
        x = aggregate(comp, locals_)
        cert = residual(comp, locals_)
        if np.all(cert.repaired > 1e-9):  # no clipping active
            delta = x - reference
            assert cert.epsilon_star == pytest.approx(
                abs(delta.sum()) / np.sqrt(m), abs=1e-9
            )


def test_pick_reference_finds_member():
    comp = negation_split()
    ref = pick_reference(comp, [np.array([0.9, 0.9]), np.array([0.4, 0.6])])
    assert np.allclose(ref, [0.4, 0.6])
    assert pick_reference(comp, [np.array([0.9, 0.9])]) is None


# --- attribution ----------------------------------------------------------------


def test_attribute_single_owner_gets_everything():
    comp = CompositionSpec((ComponentSpec(build_polytope(negation()), (0, 1)),), (), 2)
    cert = residual(comp, [[0.8, 0.9]], repair_locals=False)
    shares = attribute(comp, cert)
    assert shares[0] == pytest.approx(cert.epsilon_star, abs=1e-12)


def test_attribute_uniform_partition_shift():
    cert = residual(partition_split(), [[0.39], [0.73], [0.67], [0.71]])
    shares = attribute(partition_split(), cert)
    for a in range(4):
        assert shares[a] == pytest.approx(0.375, abs=1e-9)


def test_attribute_zero_certificate():
    comp = negation_split()
    cert = residual(comp, [[0.4], [0.6]])
    assert all(v == 0.0 for v in attribute(comp, cert).values())


def test_attribute_squares_sum_to_eps_squared():
    rng = np.random.default_rng(12)
    comp = CompositionSpec(
        free_components([2, 2]), relation_coupling(partition(4), range(4)), 4
    )
    for _ in range(50):
        locals_ = [rng.uniform(size=2) for _ in range(2)]
        cert = residual(comp, locals_)
        total = sum(v**2 for v in attribute(comp, cert).values())
        assert total == pytest.approx(cert.epsilon_star**2, abs=1e-12)


# --- certificates as JSON ---------------------------------------------------------


def test_certificate_json_shape():
    cert = residual(partition_split(), [[0.39], [0.73], [0.67], [0.71]])
    record = cert.to_json()
    assert set(record) == {"eps_star", "exposure_bound", "repaired", "binding"}
    assert isinstance(record["repaired"], list)


def test_cross_component_flags():
    comp = CompositionSpec(
        (ComponentSpec(build_polytope(negation()), (0, 1)),),
        relation_coupling(negation(), range(2)),
        2,
    )
    assert comp.cross_component_flags() == (False,)
    assert negation_split().cross_component_flags() == (True,)
