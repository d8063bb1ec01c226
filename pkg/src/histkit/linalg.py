"""Dense complex linear algebra on tensor-product spaces.

Matrices are plain ``numpy.ndarray`` objects of dtype ``complex128``.
Composite indices are lexicographic with factor 0 most significant, which
is the ordering produced by ``numpy.kron``::

    |i0 i1 ... ik>  <->  ((i0 * d1 + i1) * d2 + i2) ...

All functions are pure and never modify their inputs.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence

import numpy as np

TOL_HERM = 1e-10
TOL_PSD = 1e-10
TOL_RECON = 1e-9
TOL_UNITARY = 1e-10


class HistkitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(HistkitError, ValueError):
    """Operand shapes do not agree with the declared space."""


class NotHermitianError(HistkitError, ValueError):
    def __init__(self, asymmetry: float, tol: float):
        super().__init__(f"matrix is not Hermitian: max |A - A^dag| = {asymmetry:.3e} > {tol:.1e}")
        self.asymmetry = asymmetry


class NotPositiveError(HistkitError, ValueError):
    def __init__(self, min_eig: float, tol: float):
        super().__init__(f"matrix is not positive semidefinite: min eigenvalue {min_eig:.3e} < -{tol:.1e}")
        self.min_eig = min_eig


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a finite 2-d complex array."""
    m = np.asarray(a, dtype=complex)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise HistkitError(f"{name} contains NaN or Inf entries")
    return m


def as_square(a, name: str = "matrix") -> np.ndarray:
    m = as_matrix(a, name)
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {m.shape}")
    return m


def dagger(a: np.ndarray) -> np.ndarray:
    return np.conj(a).T


@dataclass(frozen=True)
class CompositeSpace:
    """Ordered tensor factorization ``H = H_0 (x) H_1 (x) ...``."""

    factor_dims: tuple[int, ...]

    def __init__(self, factor_dims: Iterable[int]):
        dims = tuple(int(d) for d in factor_dims)
        if not dims:
            raise DimensionError("a composite space needs at least one factor")
        if any(d < 1 for d in dims):
            raise DimensionError(f"factor dimensions must be >= 1, got {dims}")
        object.__setattr__(self, "factor_dims", dims)

    @property
    def total_dim(self) -> int:
        return prod(self.factor_dims)

    @property
    def n_factors(self) -> int:
        return len(self.factor_dims)

    def dim_of(self, factors: Iterable[int]) -> int:
        return prod(self.factor_dims[k] for k in factors)

    def complement(self, factors: Iterable[int]) -> tuple[int, ...]:
        chosen = set(factors)
        return tuple(k for k in range(self.n_factors) if k not in chosen)

    def check_factor(self, factor: int) -> int:
        if not 0 <= factor < self.n_factors:
            raise DimensionError(f"factor index {factor} out of range for {self.n_factors} factors")
        return factor

    def check_operator(self, a: np.ndarray, name: str = "operator") -> np.ndarray:
        a = as_square(a, name)
        if a.shape[0] != self.total_dim:
            raise DimensionError(
                f"{name} has dimension {a.shape[0]} but the space {self.factor_dims} has {self.total_dim}"
            )
        return a


@dataclass(frozen=True)
class Spectrum:
    eigenvalues: np.ndarray  # real, descending
    eigenvectors: np.ndarray  # orthonormal columns

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ dagger(v)


def kron(a, b) -> np.ndarray:
    return np.kron(as_matrix(a, "a"), as_matrix(b, "b"))


def kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for m in mats:
        out = np.kron(out, m)
    return out


def partial_trace(a, space: CompositeSpace, keep: Iterable[int]) -> np.ndarray:
    """Trace out every factor not in ``keep``.

    The result acts on the kept factors in their original (ascending) order,
    whatever order ``keep`` lists them in.
    """
    a = space.check_operator(a)
    kept = sorted(set(int(k) for k in keep))
    if not kept:
        raise DimensionError("keep must name at least one factor; use numpy.trace for the full trace")
    for k in kept:
        space.check_factor(k)
    n = space.n_factors
    if len(kept) == n:
        return a.copy()
    dims = space.factor_dims
    tensor = a.reshape(dims + dims)
    row_idx = list(range(n))
    col_idx = list(range(n, 2 * n))
    for k in range(n):
        if k not in kept:
            col_idx[k] = row_idx[k]
    out_idx = [row_idx[k] for k in kept] + [col_idx[k] for k in kept]
    reduced = np.einsum(tensor, row_idx + col_idx, out_idx)
    d = space.dim_of(kept)
    return reduced.reshape(d, d)


def permute_factors(a, space: CompositeSpace, order: Sequence[int]) -> np.ndarray:
    """Reorder tensor factors: output factor ``j`` is input factor ``order[j]``."""
    a = space.check_operator(a)
    n = space.n_factors
    order = list(order)
    if sorted(order) != list(range(n)):
        raise DimensionError(f"{order} is not a permutation of {n} factors")
    dims = space.factor_dims
    tensor = a.reshape(dims + dims).transpose(order + [n + k for k in order])
    return tensor.reshape(space.total_dim, space.total_dim)


def embed(x, space: CompositeSpace, factor: int) -> np.ndarray:
    """``I (x) ... (x) x (x) ... (x) I`` with ``x`` on the given factor."""
    factor = space.check_factor(factor)
    x = as_square(x, "x")
    if x.shape[0] != space.factor_dims[factor]:
        raise DimensionError(
            f"operator of dimension {x.shape[0]} cannot act on factor {factor} of dimension "
            f"{space.factor_dims[factor]}"
        )
    left = space.dim_of(range(factor))
    right = space.dim_of(range(factor + 1, space.n_factors))
    return np.kron(np.kron(np.eye(left), x), np.eye(right))


def hermiticity_defect(a: np.ndarray) -> float:
    return float(np.max(np.abs(a - dagger(a)))) if a.size else 0.0


def check_hermitian(a, tol: float = TOL_HERM, name: str = "matrix") -> np.ndarray:
    a = as_square(a, name)
    defect = hermiticity_defect(a)
    if defect > tol:
        raise NotHermitianError(defect, tol)
    return a


def hermitian_spectrum(a, tol_herm: float = TOL_HERM, tol_recon: float = TOL_RECON) -> Spectrum:
    a = check_hermitian(a, tol_herm)
    h = 0.5 * (a + dagger(a))
    vals, vecs = np.linalg.eigh(h)
    spec = Spectrum(vals[::-1].copy(), vecs[:, ::-1].copy())
    err = float(np.max(np.abs(spec.reconstruct() - h))) if h.size else 0.0
    if err > tol_recon * max(1.0, float(np.max(np.abs(h)))):
        raise HistkitError(f"eigendecomposition reconstruction error {err:.3e} exceeds {tol_recon:.1e}")
    return spec


def unitary_exp(h, t: float, tol_herm: float = TOL_HERM) -> np.ndarray:
    """``exp(-i h t)`` for Hermitian ``h`` via its eigendecomposition."""
    spec = hermitian_spectrum(h, tol_herm)
    v = spec.eigenvectors
    return (v * np.exp(-1j * spec.eigenvalues * t)) @ dagger(v)


def is_unitary(u: np.ndarray, tol: float = TOL_UNITARY) -> bool:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        return False
    return float(np.max(np.abs(dagger(u) @ u - np.eye(u.shape[0])))) <= tol


def check_unitary(u, tol: float = TOL_UNITARY, name: str = "u") -> np.ndarray:
    u = as_square(u, name)
    if not is_unitary(u, tol):
        defect = float(np.max(np.abs(dagger(u) @ u - np.eye(u.shape[0]))))
        raise HistkitError(f"{name} is not unitary: max |U^dag U - I| = {defect:.3e}")
    return u


def clipped_eigenvalues(rho, tol_psd: float = TOL_PSD) -> np.ndarray:
    """Eigenvalues of a Hermitian PSD matrix with dust in ``[-tol_psd, 0)`` set to zero."""
    rho = check_hermitian(rho)
    vals = np.linalg.eigvalsh(0.5 * (rho + dagger(rho)))
    if vals.size and vals[0] < -tol_psd:
        raise NotPositiveError(float(vals[0]), tol_psd)
    return np.clip(vals, 0.0, None)


def von_neumann_entropy(rho, tol_psd: float = TOL_PSD) -> float:
    """Entropy in bits, with ``0 log 0 = 0``."""
    vals = clipped_eigenvalues(rho, tol_psd)
    nz = vals[vals > 0.0]
    s = float(-np.sum(nz * np.log2(nz)))
    return max(s, 0.0)


def random_unitary(dim: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Haar-distributed unitary from the QR decomposition of a Ginibre matrix."""
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def random_density(dim: int, seed: int | np.random.Generator | None = None, rank: int | None = None) -> np.ndarray:
    """Random full-rank (or given-rank) density matrix ``G G^dag / Tr``."""
    if dim < 1:
        raise DimensionError("dim must be >= 1")
    rng = np.random.default_rng(seed)
    k = dim if rank is None else rank
    g = rng.standard_normal((dim, k)) + 1j * rng.standard_normal((dim, k))
    rho = g @ dagger(g)
    rho = 0.5 * (rho + dagger(rho))
    return rho / np.trace(rho).real


def random_hermitian(dim: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    return 0.5 * (g + dagger(g))


PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


def join_system_env(x, env, space: CompositeSpace, system_factor: int = 0) -> np.ndarray:
    """``x (x) env`` laid out in ``space``'s factor order.

    ``x`` acts on ``system_factor`` and ``env`` on the remaining factors in
    ascending order.
    """
    system_factor = space.check_factor(system_factor)
    x = as_square(x, "x")
    env = as_square(env, "env")
    rest = space.complement([system_factor])
    if x.shape[0] != space.factor_dims[system_factor] or env.shape[0] != space.dim_of(rest):
        raise DimensionError("system or environment operator does not match the space")
    joined = np.kron(x, env)
    if system_factor == 0:
        return joined
    current = [system_factor, *rest]
    staged = CompositeSpace([space.factor_dims[k] for k in current])
    return permute_factors(joined, staged, [current.index(j) for j in range(space.n_factors)])
