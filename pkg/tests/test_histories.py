
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from histkit.histories import (
    HistorySetSpec,
    NegativeProbabilityError,
    chain_probability,
    check_decoherence,
    class_operator,
    class_operators,
    coarse_grain_histories,
    completeness_defect,
    decoherence_matrix,
    history_probability,
    interference_term,
    iter_histories,
    kolmogorov_report,
    union_probability,
)
from histkit.linalg import CompositeSpace, HistkitError, random_density, random_unitary
from histkit.models import PropagatorSet, Schedule, perfect_recorder, propagators
from histkit.states import DensityOperator, family_from_basis, pure_density
from oracles import chain_D

PLUS = np.array([1, 1]) / np.sqrt(2)
MINUS = np.array([1, -1]) / np.sqrt(2)


def identity_props(times, dim):
    return PropagatorSet(tuple(times), tuple(np.eye(dim, dtype=complex) for _ in times[1:]))


@pytest.fixture
def slit_set():
    rho = pure_density(PLUS)
    fz = family_from_basis(np.eye(2), labels=["0", "1"])
    fx = family_from_basis([PLUS, MINUS], labels=["+", "-"])
    spec = HistorySetSpec(Schedule([0, 1, 2]), [fz, fx], rho)
    return rho, spec, identity_props([0, 1, 2], 2)


def test_two_slit_values_by_hand(slit_set):
    rho, spec, props = slit_set
    d = decoherence_matrix(rho, spec, props)
    # C_(0,+) = |0><0|+><+| = |0><+|/sqrt2, so p = |<+|+>|^2 |<0|+>|^2 = 1/4
    assert d[("0", "+"), ("0", "+")] == pytest.approx(0.25, abs=1e-12)
    assert d[("1", "+"), ("1", "+")] == pytest.approx(0.25, abs=1e-12)
    assert d[("0", "-"), ("0", "-")] == pytest.approx(0.25, abs=1e-12)
    assert interference_term(d, ("0", "+"), ("1", "+")) == pytest.approx(0.5, abs=1e-12)
    # p(0,+) + p(1,+) = 1/2 but the coarse history "+" has probability 1
    coarse = coarse_grain_histories(spec, [[["0", "1"]], None])
    dc = decoherence_matrix(rho, coarse, props)
    assert dc[("0|1", "+"), ("0|1", "+")] == pytest.approx(1.0, abs=1e-12)


def test_class_operator_non_hermitian(slit_set):
    _, spec, props = slit_set
    c = class_operator(spec, props, ("0", "+"))
    np.testing.assert_allclose(c.matrix, np.outer([1, 0], PLUS) / np.sqrt(2), atol=1e-15)
    assert np.max(np.abs(c.matrix - c.matrix.conj().T)) > 0.1


def test_union_probability_matches_interference(slit_set):
    rho, spec, props = slit_set
    a = class_operator(spec, props, ("0", "+"))
    b = class_operator(spec, props, ("1", "+"))
    lhs = union_probability(rho, a, b) - history_probability(rho, a) - history_probability(rho, b)
    d = decoherence_matrix(rho, spec, props)
    assert lhs == pytest.approx(interference_term(d, (0, 0), (1, 0)), abs=1e-12)


def test_kolmogorov_report_flags_two_slit(slit_set):
    rho, spec, props = slit_set
    k = kolmogorov_report(rho, spec, props)
    assert k.axiom1 and k.axiom2 and not k.axiom3
    assert k.max_additivity_defect == pytest.approx(0.5, abs=1e-12)
    assert set(k.worst_pair) == {"0,+", "1,+"}
    assert not k.weak.passed and not k.medium.passed


def test_single_time_set_is_decoherent():
    rho = DensityOperator(random_density(3, seed=4))
    f = family_from_basis(np.eye(3))
    spec = HistorySetSpec(Schedule([0, 1]), [f], rho)
    d = decoherence_matrix(rho, spec, identity_props([0, 1], 3))
    off = d.entries - np.diag(np.diag(d.entries))
    assert np.max(np.abs(off)) == 0.0
    np.testing.assert_allclose(d.probabilities, np.diag(rho.matrix).real, atol=1e-15)


@pytest.mark.parametrize("n_env", [1, 2, 4])
def test_recorder_is_medium_decoherent(n_env):
    model = perfect_recorder(n_env)
    rho = DensityOperator(np.kron(np.full((2, 2), 0.5), model.env_state), model.space)
    fz = family_from_basis(np.eye(2), factor=0)
    spec = HistorySetSpec(Schedule([0, 1, 2]), [fz, fz], rho)
    d = decoherence_matrix(rho, spec, propagators(model, spec.schedule))
    assert d.max_normalized_offdiagonal() <= 1e-10
    assert check_decoherence(d, "medium").passed


def test_vacuous_pairs_counted():
    rho = pure_density([1, 0])
    f = family_from_basis(np.eye(2))
    spec = HistorySetSpec(Schedule([0, 1]), [f], rho)
    rep = check_decoherence(decoherence_matrix(rho, spec, identity_props([0, 1], 2)), "weak")
    assert rep.passed and rep.vacuous_pairs == 1 and rep.checked_pairs == 0


def test_weak_but_not_medium():
    # D((0,+),(1,+)) = i/4 has zero real part
    psi = np.array([1, 1j]) / np.sqrt(2)
    rho = pure_density(psi)
    fz = family_from_basis(np.eye(2))
    fx = family_from_basis([PLUS, MINUS], labels=["+", "-"])
    spec = HistorySetSpec(Schedule([0, 1, 2]), [fz, fx], rho)
    d = decoherence_matrix(rho, spec, identity_props([0, 1, 2], 2))
    # Tr(|+><0| rho |1><+|)/2 = <0|rho|1>/2 = (-i/2)/2
    assert d[("0", "+"), ("1", "+")] == pytest.approx(-0.25j, abs=1e-12)
    assert check_decoherence(d, "weak").passed
    assert not check_decoherence(d, "medium").passed


def test_history_cap():
    rho = DensityOperator(np.eye(4) / 4)
    f = family_from_basis(np.eye(4))
    spec = HistorySetSpec(Schedule(range(8)), [f] * 7, rho)
    with pytest.raises(HistkitError, match="cap"):
        list(iter_histories(spec))


def test_spec_rejects_family_count_and_dimension():
    rho = DensityOperator(np.eye(2) / 2)
    f = family_from_basis(np.eye(2))
    with pytest.raises(HistkitError):
        HistorySetSpec(Schedule([0, 1, 2]), [f], rho)
    with pytest.raises(HistkitError):
        HistorySetSpec(Schedule([0, 1]), [family_from_basis(np.eye(3))], rho)


def test_negative_probability_raises():
    from histkit.histories import ClassOperator
    bad = DensityOperator.unchecked(np.diag([1.5, -0.5]).astype(complex), CompositeSpace([2]))
    with pytest.raises(NegativeProbabilityError):
        history_probability(bad, ClassOperator((1,), np.diag([0, 1]).astype(complex)))


def _random_set(seed):
    rng = np.random.default_rng(seed)
    dim = int(rng.integers(2, 5))
    n_times = int(rng.integers(1, 4))
    rho = DensityOperator(random_density(dim, rng))
    families = []
    for _ in range(n_times):
        v = random_unitary(dim, rng)
        cut = int(rng.integers(1, dim + 1))
        grouping = [list(range(cut)), list(range(cut, dim))] if cut < dim else None
        families.append(family_from_basis(v, grouping=grouping))
    steps = tuple(random_unitary(dim, rng) for _ in range(n_times))
    times = tuple(float(t) for t in range(n_times + 1))
    return rho, HistorySetSpec(Schedule(times), families, rho), PropagatorSet(times, steps)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_decoherence_matrix_matches_chain_oracle(seed):
    rho, spec, props = _random_set(seed)
    d = decoherence_matrix(rho, spec, props)
    fams = [spec.full_projectors(i) for i in range(spec.n_times)]
    hist, expected = chain_D(np.asarray(rho.matrix), props.steps, fams)
    assert list(d.labels) == hist
    np.testing.assert_allclose(d.entries, expected, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_structural_identities(seed):
    rho, spec, props = _random_set(seed)
    ops = class_operators(spec, props)
    assert completeness_defect(ops) <= 1e-10
    d = decoherence_matrix(rho, spec, props)
    assert abs(d.total() - 1) <= 1e-10
    assert d.hermiticity_defect() <= 1e-12
    for a in ops:
        assert abs(chain_probability(rho, spec, props, a.alpha) - history_probability(rho, a)) <= 1e-12


def test_coarse_graining_sums_fine_histories():
    rho, spec, props = _random_set(12)
    f0 = spec.families[0]
    coarse = coarse_grain_histories(spec, [[list(range(len(f0)))]] + [None] * (spec.n_times - 1))
    assert len(coarse.families[0]) == 1
    dc = decoherence_matrix(rho, coarse, props)
    d = decoherence_matrix(rho, spec, props)
    assert abs(dc.total() - d.total()) < 1e-12
