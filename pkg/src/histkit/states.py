"""Validated density operators, projector families and environment reference states."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import (
    TOL_HERM,
    TOL_PSD,
    CompositeSpace,
    DimensionError,
    HistkitError,
    as_square,
    check_hermitian,
    dagger,
    hermiticity_defect,
    hermitian_spectrum,
)

TOL_TRACE = 1e-10
TOL_PROJ = 1e-10


class InvalidStateError(HistkitError, ValueError):
    pass


class InvalidFamilyError(HistkitError, ValueError):
    pass


@dataclass(frozen=True)
class DensityOperator:
    """A Hermitian, positive, unit-trace operator on ``space``.

    Construction validates eagerly. Use :meth:`unchecked` for intermediate
    values inside a computation that are known to be valid.
    """

    matrix: np.ndarray
    space: CompositeSpace

    def __init__(self, matrix, space: CompositeSpace | None = None, *,
                 tol_herm: float = TOL_HERM, tol_psd: float = TOL_PSD, tol_trace: float = TOL_TRACE):
        m = as_square(matrix, "density matrix")
        if space is None:
            space = CompositeSpace([m.shape[0]])
        space.check_operator(m, "density matrix")
        check_hermitian(m, tol_herm, "density matrix")
        m = 0.5 * (m + dagger(m))
        tr = np.trace(m).real
        if abs(tr - 1.0) > tol_trace:
            raise InvalidStateError(f"density matrix has trace {tr:.12g}, expected 1")
        min_eig = float(np.linalg.eigvalsh(m)[0])
        if min_eig < -tol_psd:
            raise InvalidStateError(f"density matrix has negative eigenvalue {min_eig:.3e}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "space", space)

    @classmethod
    def unchecked(cls, matrix: np.ndarray, space: CompositeSpace) -> "DensityOperator":
        obj = object.__new__(cls)
        object.__setattr__(obj, "matrix", np.asarray(matrix, dtype=complex))
        object.__setattr__(obj, "space", space)
        return obj

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def validate(self) -> "DensityOperator":
        return DensityOperator(self.matrix, self.space)


def pure_density(psi, space: CompositeSpace | None = None) -> DensityOperator:
    v = np.asarray(psi, dtype=complex).reshape(-1)
    norm2 = float(np.vdot(v, v).real)
    if norm2 == 0.0 or not np.isfinite(norm2):
        raise InvalidStateError("cannot build a pure state from the zero vector")
    return DensityOperator(np.outer(v, np.conj(v)) / norm2, space)


def product_density(states: Sequence[DensityOperator]) -> DensityOperator:
    m = np.ones((1, 1), dtype=complex)
    dims = []
    for s in states:
        m = np.kron(m, s.matrix)
        dims.extend(s.space.factor_dims)
    return DensityOperator(m, CompositeSpace(dims))


@dataclass(frozen=True)
class ProjectorFamily:
    """An exclusive and exhaustive set of projectors ``{P_a}``.

    ``factor`` is ``None`` when the projectors act on the whole space the
    histories live in; otherwise they act on that tensor factor only and are
    embedded as ``P (x) I`` when histories are evaluated.
    """

    projectors: tuple[np.ndarray, ...]
    labels: tuple[str, ...]
    factor: int | None = None

    def __init__(self, projectors, labels=None, factor: int | None = None, *,
                 validate: bool = True, tol: float = TOL_PROJ):
        mats = tuple(as_square(p, "projector") for p in projectors)
        if not mats:
            raise InvalidFamilyError("a projector family needs at least one member")
        dim = mats[0].shape[0]
        if any(p.shape[0] != dim for p in mats):
            raise DimensionError("all projectors in a family must share one dimension")
        if labels is None:
            labels = [str(i) for i in range(len(mats))]
        labels = tuple(str(s) for s in labels)
        if len(labels) != len(mats):
            raise InvalidFamilyError("one label per projector is required")
        if len(set(labels)) != len(labels):
            raise InvalidFamilyError(f"duplicate labels in {labels}")
        for p in mats:
            p.setflags(write=False)
        object.__setattr__(self, "projectors", mats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "factor", factor)
        if validate:
            report = validate_family(self, tol)
            if not report.passed:
                raise InvalidFamilyError(report.describe())

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[0]

    def __len__(self) -> int:
        return len(self.projectors)

    def index(self, label: str) -> int:
        return self.labels.index(str(label))


@dataclass(frozen=True)
class FamilyReport:
    exclusivity_defect: float
    hermiticity_defect: float
    completeness_defect: float
    tol: float

    @property
    def passed(self) -> bool:
        return max(self.exclusivity_defect, self.hermiticity_defect, self.completeness_defect) <= self.tol

    def describe(self) -> str:
        parts = []
        if self.exclusivity_defect > self.tol:
            parts.append(f"exclusivity violated (defect {self.exclusivity_defect:.3e})")
        if self.hermiticity_defect > self.tol:
            parts.append(f"non-Hermitian projector (defect {self.hermiticity_defect:.3e})")
        if self.completeness_defect > self.tol:
            parts.append(f"exhaustivity violated (defect {self.completeness_defect:.3e})")
        return "; ".join(parts) or "valid projector family"


def validate_family(f: ProjectorFamily, tol: float = TOL_PROJ) -> FamilyReport:
    """Measure exclusivity, Hermiticity and completeness defects (max-abs entry norm)."""
    ps = f.projectors
    excl = 0.0
    for a, pa in enumerate(ps):
        for b, pb in enumerate(ps):
            target = pa if a == b else 0.0
            excl = max(excl, float(np.max(np.abs(pa @ pb - target))))
    herm = max(hermiticity_defect(p) for p in ps)
    total = sum(ps)
    comp = float(np.max(np.abs(total - np.eye(f.dim))))
    return FamilyReport(excl, herm, comp, tol)


def _check_partition(partition, n: int) -> list[list[int]]:
    blocks = [[int(i) for i in block] for block in partition]
    if any(not block for block in blocks):
        raise InvalidFamilyError("partition blocks must be nonempty")
    flat = [i for block in blocks for i in block]
    if len(flat) != len(set(flat)):
        raise InvalidFamilyError(f"partition blocks overlap: {blocks}")
    if sorted(flat) != list(range(n)):
        missing = sorted(set(range(n)) - set(flat))
        raise InvalidFamilyError(f"partition does not cover indices {missing or flat}")
    return blocks


def family_from_basis(vectors, grouping=None, labels=None, factor: int | None = None,
                      tol: float = TOL_PROJ) -> ProjectorFamily:
    """Projectors ``sum_{i in g} |v_i><v_i|`` for each group ``g`` of an orthonormal basis.

    ``vectors`` is a sequence of vectors (or a matrix whose columns are the
    vectors). Without ``grouping`` each vector gets its own projector.
    """
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        vecs = [vectors[:, i] for i in range(vectors.shape[1])]
    else:
        vecs = [np.asarray(v, dtype=complex).reshape(-1) for v in vectors]
    if not vecs:
        raise InvalidFamilyError("no basis vectors supplied")
    dim = vecs[0].shape[0]
    if any(v.shape[0] != dim for v in vecs):
        raise DimensionError("basis vectors differ in dimension")
    v = np.stack(vecs, axis=1).astype(complex)
    gram_defect = float(np.max(np.abs(dagger(v) @ v - np.eye(v.shape[1]))))
    if gram_defect > tol:
        raise InvalidFamilyError(f"basis vectors are not orthonormal (defect {gram_defect:.3e})")
    if v.shape[1] < dim:
        raise InvalidFamilyError(
            f"exhaustivity violated: {v.shape[1]} vectors cannot span dimension {dim}"
        )
    blocks = [[i] for i in range(v.shape[1])] if grouping is None else _check_partition(grouping, v.shape[1])
    projectors = [v[:, b] @ dagger(v[:, b]) for b in blocks]
    if labels is None:
        labels = ["+".join(str(i) for i in b) for b in blocks]
    return ProjectorFamily(projectors, labels, factor, tol=tol)


def coarse_grain_family(f: ProjectorFamily, partition, labels=None) -> ProjectorFamily:
    """Sum projectors over the blocks of ``partition``.

    Blocks may name members by index or by label.
    """
    def resolve(item):
        if isinstance(item, str):
            return f.index(item)
        return int(item)

    blocks = _check_partition([[resolve(i) for i in block] for block in partition], len(f))
    projectors = [sum(f.projectors[i] for i in block) for block in blocks]
    if labels is None:
        labels = ["|".join(f.labels[i] for i in block) for block in blocks]
    return ProjectorFamily(projectors, labels, f.factor)


def identity_family(dim: int, factor: int | None = None) -> ProjectorFamily:
    return ProjectorFamily([np.eye(dim, dtype=complex)], ["I"], factor)


@dataclass(frozen=True)
class ReferenceEnvState:
    """Reference environment state used to build the linear part of reduced dynamics."""

    kind: str
    matrix: np.ndarray
    beta: float | None = None

    def describe(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.beta is not None:
            out["beta"] = self.beta
        return out

    def same_as(self, other: "ReferenceEnvState") -> bool:
        return self.kind == other.kind and self.matrix.shape == other.matrix.shape and bool(
            np.array_equal(self.matrix, other.matrix)
        )


def reference_env_state(kind: str = "complete_ignorance", *, dim: int | None = None, h_env=None,
                        beta: float | None = None, matrix=None) -> ReferenceEnvState:
    if kind == "complete_ignorance":
        if dim is None:
            if h_env is None:
                raise InvalidStateError("complete_ignorance needs dim (or h_env to infer it)")
            dim = np.asarray(h_env).shape[0]
        m = np.eye(dim, dtype=complex) / dim
        return ReferenceEnvState(kind, m)
    if kind == "thermal":
        if h_env is None:
            raise InvalidStateError("thermal reference state requires h_env")
        if beta is None or not np.isfinite(beta) or beta < 0:
            raise InvalidStateError(f"thermal reference state requires finite beta >= 0, got {beta}")
        h = check_hermitian(h_env, name="h_env")
        if beta == 0:
            m = np.eye(h.shape[0], dtype=complex) / h.shape[0]
        else:
            spec = hermitian_spectrum(h)
            # shift by the ground energy so the largest weight is exactly 1
            weights = np.exp(-beta * (spec.eigenvalues - spec.eigenvalues[-1]))
            v = spec.eigenvectors
            m = (v * (weights / weights.sum())) @ dagger(v)
            m = 0.5 * (m + dagger(m))
        DensityOperator(m)
        return ReferenceEnvState(kind, m, float(beta))
    if kind == "explicit":
        if matrix is None:
            raise InvalidStateError("explicit reference state requires a matrix")
        rho = DensityOperator(matrix)
        return ReferenceEnvState(kind, np.array(rho.matrix))
    raise InvalidStateError(f"unknown reference state kind {kind!r}")
