import numpy as np
import pytest

from histkit.linalg import CompositeSpace, DimensionError, NotHermitianError, random_hermitian
from histkit.states import (
    DensityOperator,
    InvalidFamilyError,
    InvalidStateError,
    ProjectorFamily,
    coarse_grain_family,
    family_from_basis,
    identity_family,
    product_density,
    pure_density,
    reference_env_state,
    validate_family,
)

Z0 = np.diag([1.0, 0.0])
Z1 = np.diag([0.0, 1.0])
PLUS = np.array([1, 1]) / np.sqrt(2)
MINUS = np.array([1, -1]) / np.sqrt(2)


def test_density_operator_validates():
    DensityOperator(np.eye(2) / 2)
    with pytest.raises(InvalidStateError, match="trace"):
        DensityOperator(np.eye(2))
    with pytest.raises(InvalidStateError, match="negative"):
        DensityOperator(np.diag([1.5, -0.5]))
    with pytest.raises(NotHermitianError):
        DensityOperator(np.array([[0.5, 0.3], [0.0, 0.5]]))
    with pytest.raises(DimensionError):
        DensityOperator(np.eye(4) / 4, CompositeSpace([2, 3]))


def test_density_operator_is_immutable():
    rho = DensityOperator(np.eye(2) / 2)
    with pytest.raises(ValueError):
        rho.matrix[0, 0] = 1.0


def test_pure_density_normalizes():
    rho = pure_density([1, 1j])
    np.testing.assert_allclose(rho.matrix, np.array([[1, -1j], [1j, 1]]) / 2, atol=1e-15)
    with pytest.raises(InvalidStateError):
        pure_density([0, 0])


def test_product_density_space():
    rho = product_density([pure_density([1, 0]), DensityOperator(np.eye(3) / 3)])
    assert rho.space.factor_dims == (2, 3)
    np.testing.assert_allclose(rho.matrix, np.kron(Z0, np.eye(3) / 3))


def test_family_from_basis_z_and_x():
    fz = family_from_basis([[1, 0], [0, 1]])
    np.testing.assert_allclose(fz.projectors[0], Z0)
    np.testing.assert_allclose(fz.projectors[1], Z1)
    assert fz.labels == ("0", "1")
    fx = family_from_basis([PLUS, MINUS], labels=["+", "-"])
    np.testing.assert_allclose(fx.projectors[0], np.full((2, 2), 0.5), atol=1e-15)
    assert fx.index("-") == 1


def test_family_from_basis_grouping():
    f = family_from_basis(np.eye(3), grouping=[[0, 2], [1]])
    np.testing.assert_allclose(f.projectors[0], np.diag([1, 0, 1]))
    assert f.labels == ("0+2", "1")


def test_incomplete_basis_rejected():
    with pytest.raises(InvalidFamilyError, match="exhaustivity"):
        family_from_basis([[1, 0, 0], [0, 1, 0]])


def test_non_orthonormal_rejected():
    with pytest.raises(InvalidFamilyError, match="orthonormal"):
        family_from_basis([[1, 0], [1, 1]])


def test_family_exclusivity_violation_reported():
    with pytest.raises(InvalidFamilyError, match="exclusivity"):
        ProjectorFamily([Z0, np.full((2, 2), 0.5)])
    report = validate_family(ProjectorFamily([Z0, np.full((2, 2), 0.5)], validate=False))
    assert not report.passed
    assert report.exclusivity_defect > 0.1


def test_duplicate_labels_rejected():
    with pytest.raises(InvalidFamilyError, match="duplicate"):
        ProjectorFamily([Z0, Z1], ["a", "a"])


def test_coarse_grain_family_by_label():
    f = family_from_basis(np.eye(3), labels=["a", "b", "c"])
    g = coarse_grain_family(f, [["a", "c"], ["b"]])
    assert g.labels == ("a|c", "b")
    np.testing.assert_allclose(g.projectors[0], np.diag([1, 0, 1]))
    with pytest.raises(InvalidFamilyError):
        coarse_grain_family(f, [["a"], ["b"]])
    with pytest.raises(InvalidFamilyError):
        coarse_grain_family(f, [["a", "b"], ["b", "c"]])


def test_identity_family():
    f = identity_family(3)
    assert len(f) == 1 and validate_family(f).passed


def test_reference_complete_ignorance():
    ref = reference_env_state("complete_ignorance", dim=4)
    np.testing.assert_allclose(ref.matrix, np.eye(4) / 4)
    assert ref.describe() == {"kind": "complete_ignorance"}


def test_reference_thermal_matches_direct_formula():
    h = np.diag([0.0, 1.0, 2.5])
    beta = 1.0
    w = np.exp(-beta * np.diag(h))
    ref = reference_env_state("thermal", h_env=h, beta=beta)
    np.testing.assert_allclose(ref.matrix, np.diag(w / w.sum()), atol=1e-14)


def test_reference_thermal_beta_zero_is_ignorance():
    h = random_hermitian(3, seed=1)
    ref = reference_env_state("thermal", h_env=h, beta=0.0)
    np.testing.assert_array_equal(ref.matrix, np.eye(3) / 3)


def test_reference_thermal_nondiagonal_commutes_with_h():
    h = random_hermitian(4, seed=2)
    ref = reference_env_state("thermal", h_env=h, beta=0.7)
    np.testing.assert_allclose(ref.matrix @ h, h @ ref.matrix, atol=1e-12)
    assert abs(np.trace(ref.matrix) - 1) < 1e-12


def test_reference_errors():
    with pytest.raises(InvalidStateError):
        reference_env_state("thermal", h_env=np.eye(2), beta=-1.0)
    with pytest.raises(InvalidStateError):
        reference_env_state("explicit", matrix=np.eye(2))
    with pytest.raises(InvalidStateError):
        reference_env_state("nonsense", dim=2)
