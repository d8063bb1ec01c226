"""Reduced dynamics of a subsystem and its affine decomposition.

For a full-space operator ``A`` and unitary ``U`` the reduced evolution
``Tr_E[U A U^dag]`` splits exactly as ``L(Tr_E A) + K`` where::

    L(X) = Tr_E[U (X (x) w) U^dag]
    K    = Tr_E[U (A - Tr_E A (x) w) U^dag]

for any unit-trace reference environment state ``w`` (by default the
maximally mixed state). ``L`` depends only on ``U``; every system-environment
correlation sits in ``K``.

Superoperators act on column-stacked operators: for ``X = [[a, b], [c, d]]``
``vec(X) = (a, c, b, d)``, and ``vec(A X B) = (B^T (x) A) vec(X)``.
"""
from __future__ import annotations

import functools
import itertools
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Mapping, Sequence

import numpy as np

from .histories import DecoherenceMatrix, HistorySetSpec, P_FLOOR
from .linalg import (
    CompositeSpace,
    DimensionError,
    HistkitError,
    check_unitary,
    dagger,
    join_system_env,
    partial_trace,
    permute_factors,
    von_neumann_entropy,
)
from .models import Model, PropagatorSet
from .states import DensityOperator, ProjectorFamily, ReferenceEnvState, reference_env_state

log = logging.getLogger(__name__)


def vec(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray, d: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    if d is None:
        d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


@dataclass(frozen=True)
class Superoperator:
    """Linear map on ``d x d`` operators stored as a ``d^2 x d^2`` matrix."""

    matrix: np.ndarray
    d: int
    reference: ReferenceEnvState | None = field(default=None, compare=False)

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape != (self.d ** 2, self.d ** 2):
            raise DimensionError(f"superoperator for d={self.d} must be {self.d ** 2} square, got {m.shape}")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, d: int) -> "Superoperator":
        return cls(np.eye(d * d, dtype=complex), d)

    @classmethod
    def from_tensor(cls, t: np.ndarray, reference=None) -> "Superoperator":
        """Build from ``t[a, b, i, j] = L(|i><j|)[a, b]``."""
        d = t.shape[0]
        return cls(t.transpose(1, 0, 3, 2).reshape(d * d, d * d), d, reference)

    @property
    def tensor(self) -> np.ndarray:
        d = self.d
        return self.matrix.reshape(d, d, d, d).transpose(1, 0, 3, 2)

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=complex)
        if x.shape != (self.d, self.d):
            raise DimensionError(f"operator shape {x.shape} does not match superoperator d={self.d}")
        return unvec(self.matrix @ vec(x), self.d)

    def __call__(self, x) -> np.ndarray:
        return self.apply(x)

    def then(self, other: "Superoperator") -> "Superoperator":
        """``other o self``: apply ``self`` first."""
        if other.d != self.d:
            raise DimensionError("cannot compose superoperators of different dimension")
        return Superoperator(other.matrix @ self.matrix, self.d, self.reference)

    def choi(self) -> np.ndarray:
        """``J = sum_ij |i><j| (x) L(|i><j|)``."""
        d = self.d
        return self.tensor.transpose(2, 0, 3, 1).reshape(d * d, d * d)

    def choi_min_eigenvalue(self) -> float:
        j = self.choi()
        return float(np.linalg.eigvalsh(0.5 * (j + dagger(j)))[0])

    def trace_preservation_defect(self) -> float:
        t = self.tensor
        partial = np.einsum("aaij->ij", t)
        return float(np.max(np.abs(partial - np.eye(self.d))))


def _system_first(u: np.ndarray, space: CompositeSpace, system_factor: int) -> np.ndarray:
    if system_factor == 0:
        return u
    order = [system_factor, *space.complement([system_factor])]
    return permute_factors(u, space, order)


def _split(space: CompositeSpace, system_factor: int) -> tuple[int, int]:
    space.check_factor(system_factor)
    d_s = space.factor_dims[system_factor]
    return d_s, space.total_dim // d_s


def reduce_to_system(a, space: CompositeSpace, system_factor: int = 0) -> np.ndarray:
    return partial_trace(a, space, [system_factor])


def reduced_evolve(rho: DensityOperator, u, space: CompositeSpace | None = None,
                   keep: int = 0) -> DensityOperator:
    """``Tr_E[U rho U^dag]`` as a validated state on factor ``keep``."""
    space = rho.space if space is None else space
    m = space.check_operator(rho.matrix, "rho")
    u = check_unitary(space.check_operator(u, "u"))
    out = partial_trace(u @ m @ dagger(u), space, [keep])
    return DensityOperator(out, CompositeSpace([space.factor_dims[keep]]))


def _check_reference(ref: ReferenceEnvState, d_e: int):
    if ref.matrix.shape != (d_e, d_e):
        raise DimensionError(f"reference state has dimension {ref.matrix.shape[0]}, environment has {d_e}")


def jss_L(u, ref: ReferenceEnvState | None, space: CompositeSpace, system_factor: int = 0) -> Superoperator:
    """Correlation-free linear part ``L(X) = Tr_E[U (X (x) w) U^dag]``."""
    u = check_unitary(space.check_operator(u, "u"))
    d_s, d_e = _split(space, system_factor)
    if ref is None:
        ref = reference_env_state("complete_ignorance", dim=d_e)
    _check_reference(ref, d_e)
    t = _system_first(u, space, system_factor).reshape(d_s, d_e, d_s, d_e)
    # w[a,e,i,h] = sum_g U[a,e,i,g] omega[g,h]
    w = np.tensordot(t, ref.matrix, axes=([3], [0]))
    tensor = np.einsum("aeih,bejh->abij", w, np.conj(t), optimize=True)
    return Superoperator.from_tensor(tensor, ref)


def jss_K(u, a, ref: ReferenceEnvState | None, space: CompositeSpace, system_factor: int = 0) -> np.ndarray:
    """Affine correlation term ``K = Tr_E[U (A - Tr_E A (x) w) U^dag]``."""
    u = check_unitary(space.check_operator(u, "u"))
    a = space.check_operator(a, "a")
    d_s, d_e = _split(space, system_factor)
    if ref is None:
        ref = reference_env_state("complete_ignorance", dim=d_e)
    _check_reference(ref, d_e)
    a_s = partial_trace(a, space, [system_factor])
    correlated = a - join_system_env(a_s, ref.matrix, space, system_factor)
    return partial_trace(u @ correlated @ dagger(u), space, [system_factor])


@dataclass(frozen=True)
class ReducedMap:
    """The pair ``(L, K)`` for one unitary and one full-space operator.

    ``K`` belongs to the specific operator ``context``; applying the map to
    any other operator is refused.
    """

    l: Superoperator
    k: np.ndarray
    reference: ReferenceEnvState
    interval: tuple[float, float] | None
    u: np.ndarray = field(repr=False)
    context: np.ndarray = field(repr=False)
    space: CompositeSpace = field(repr=False)
    system_factor: int = 0


def reduced_map(u, a, ref: ReferenceEnvState | None, space: CompositeSpace, system_factor: int = 0,
                interval: tuple[float, float] | None = None, tol: float = 1e-10) -> ReducedMap:
    """Build and verify the affine decomposition for ``(u, a)``."""
    d_s, d_e = _split(space, system_factor)
    if ref is None:
        ref = reference_env_state("complete_ignorance", dim=d_e)
    a = np.array(space.check_operator(a, "a"))
    l = jss_L(u, ref, space, system_factor)
    k = jss_K(u, a, ref, space, system_factor)
    u = np.asarray(u, dtype=complex)
    exact = partial_trace(u @ a @ dagger(u), space, [system_factor])
    residual = float(np.linalg.norm(l.apply(partial_trace(a, space, [system_factor])) + k - exact))
    if residual > tol * max(1.0, float(np.linalg.norm(a))):
        raise HistkitError(f"affine decomposition residual {residual:.3e} exceeds {tol:.1e}")
    a.setflags(write=False)
    return ReducedMap(l, k, ref, interval, u, a, space, system_factor)


def jss_apply(m: ReducedMap, a) -> np.ndarray:
    """``M(Tr_E A) = L(Tr_E A) + K`` for the operator the map was built from."""
    a = np.asarray(a, dtype=complex)
    if a.shape != m.context.shape or not np.allclose(a, m.context, rtol=0.0, atol=1e-14):
        raise HistkitError("the affine term was built for a different full-space operator")
    return m.l.apply(partial_trace(a, m.space, [m.system_factor])) + m.k


def jss_residual(u, a, ref: ReferenceEnvState | None, space: CompositeSpace, system_factor: int = 0) -> float:
    """Frobenius norm of ``L(Tr_E A) + K - Tr_E[U A U^dag]``."""
    u = np.asarray(u, dtype=complex)
    l = jss_L(u, ref, space, system_factor)
    k = jss_K(u, a, ref, space, system_factor)
    exact = partial_trace(u @ a @ dagger(u), space, [system_factor])
    return float(np.linalg.norm(l.apply(partial_trace(a, space, [system_factor])) + k - exact))


def _system_factor_of(spec: HistorySetSpec) -> int:
    factors = {f.factor for f in spec.families}
    if len(factors) != 1 or None in factors:
        raise HistkitError("subsystem decoherence functionals need every family on one common factor")
    return factors.pop()


def interval_maps(props: PropagatorSet, ref: ReferenceEnvState | None, space: CompositeSpace,
                  system_factor: int = 0) -> list[Superoperator]:
    return [jss_L(props.step(i), ref, space, system_factor) for i in range(props.n_intervals)]


@dataclass(frozen=True)
class FactorizationReport:
    max_deviation: float
    deviations: tuple[float, ...]
    branches: tuple[tuple[int, str, str], ...]
    tol: float
    reference: dict

    @property
    def factorizable(self) -> bool:
        return self.max_deviation <= self.tol

    def to_dict(self) -> dict:
        worst = int(np.argmax(self.deviations)) if self.deviations else None
        return {
            "factorizable": self.factorizable,
            "tol": self.tol,
            "max_deviation": self.max_deviation,
            "branches": len(self.deviations),
            "worst_branch": list(self.branches[worst]) if worst is not None else None,
            "reference": self.reference,
        }


def paz_zurek_test(spec: HistorySetSpec, props: PropagatorSet, ref: ReferenceEnvState | None = None,
                   tol: float = 1e-10) -> FactorizationReport:
    """Measure how far each interval's reduced evolution is from a map on the reduced state alone.

    For every branch operator ``A`` entering interval ``i`` the deviation is
    ``|| Tr_E[U_i A U_i^dag] - L_i(Tr_E A) ||_F``, i.e. the norm of that
    branch's affine term.
    """
    s = _system_factor_of(spec)
    space = spec.space
    d_s, d_e = _split(space, s)
    if ref is None:
        ref = reference_env_state("complete_ignorance", dim=d_e)
    maps = interval_maps(props, ref, space, s)
    devs: list[float] = []
    labels: list[tuple[int, str, str]] = []
    branches = {((), ()): np.asarray(spec.initial_state.matrix)}
    for i in range(spec.n_times):
        u = props.step(i)
        projs = spec.full_projectors(i)
        nxt = {}
        for (pa, pb), x in branches.items():
            y = u @ x @ dagger(u)
            exact = partial_trace(y, space, [s])
            approx = maps[i].apply(partial_trace(x, space, [s]))
            devs.append(float(np.linalg.norm(exact - approx)))
            labels.append((i, spec.label(pa) if pa else "", spec.label(pb) if pb else ""))
            if i + 1 < spec.n_times:
                for a, p in enumerate(projs):
                    left = p @ y
                    for b, q in enumerate(projs):
                        nxt[(pa + (a,), pb + (b,))] = left @ q
        branches = nxt
    return FactorizationReport(max(devs), tuple(devs), tuple(labels), tol, ref.describe())


def subsystem_D_exact(rho: DensityOperator, spec: HistorySetSpec, props: PropagatorSet) -> DecoherenceMatrix:
    """Subsystem decoherence functional via explicit Schrodinger-picture chains.

    ``D(a,b) = Tr_S Tr_E[K_a rho K_b^dag]`` with
    ``K_a = P_{a_n} U_n ... P_{a_1} U_1`` and the projectors embedded as
    ``P (x) I``.
    """
    s = _system_factor_of(spec)
    space = spec.space
    d_s, d_e = _split(space, s)
    m = space.check_operator(rho.matrix, "rho")
    kets = {(): np.eye(space.total_dim, dtype=complex)}
    for i in range(spec.n_times):
        u = props.step(i)
        projs = spec.full_projectors(i)
        kets = {pre + (a,): p @ (u @ k) for pre, k in kets.items() for a, p in enumerate(projs)}
    labels = sorted(kets)
    left = [_system_first(kets[a] @ m, space, s).reshape(d_s, d_e, d_s, d_e) for a in labels]
    right = [_system_first(kets[b], space, s).reshape(d_s, d_e, d_s, d_e) for b in labels]
    n = len(labels)
    d = np.empty((n, n), dtype=complex)
    for x in range(n):
        for y in range(n):
            reduced = np.einsum("aejf,bejf->ab", left[x], np.conj(right[y]))
            d[x, y] = np.trace(reduced)
    return DecoherenceMatrix(d, tuple(labels), tuple(spec.label(a) for a in labels))


def subsystem_D_factored(rho_s, l_maps: Sequence[Superoperator],
                         families: Sequence[ProjectorFamily]) -> DecoherenceMatrix:
    """Chain ``Tr_S[P_{a_n} L_n{... P_{a_1} L_1{rho_S} P_{b_1} ...} P_{b_n}]``."""
    if len(l_maps) != len(families):
        raise HistkitError(f"{len(families)} history times but {len(l_maps)} interval maps")
    x = np.asarray(rho_s.matrix if isinstance(rho_s, DensityOperator) else rho_s, dtype=complex)
    d = x.shape[0]
    for f, l in zip(families, l_maps):
        if f.dim != d or l.d != d:
            raise DimensionError("families and maps must act on the subsystem dimension")
    branches = {((), ()): x}
    for f, l in zip(families, l_maps):
        nxt = {}
        for (pa, pb), xb in branches.items():
            y = l.apply(xb)
            for a, p in enumerate(f.projectors):
                left = p @ y
                for b, q in enumerate(f.projectors):
                    nxt[(pa + (a,), pb + (b,))] = left @ q
        branches = nxt
    labels = sorted({pa for pa, _ in branches})
    n = len(labels)
    out = np.empty((n, n), dtype=complex)
    for i, a in enumerate(labels):
        for j, b in enumerate(labels):
            out[i, j] = np.trace(branches[(a, b)])
    # branches[(a, b)] = P_a ... rho ... P_b, whose trace is D(a, b)
    names = tuple(",".join(f.labels[k] for k, f in zip(a, families)) for a in labels)
    return DecoherenceMatrix(out, tuple(labels), names)


def semigroup_deviation(l_first: Superoperator, l_second: Superoperator, l_total: Superoperator) -> float:
    """``|| L(0 -> 2t) - L(t -> 2t) o L(0 -> t) ||_F``."""
    refs = [l.reference for l in (l_first, l_second, l_total)]
    if any(r is None for r in refs) and not all(r is None for r in refs):
        raise HistkitError("semigroup comparison mixes maps with and without a reference state")
    if refs[0] is not None and not (refs[0].same_as(refs[1]) and refs[0].same_as(refs[2])):
        raise HistkitError("semigroup comparison needs one common reference state")
    composed = l_first.then(l_second)
    return float(np.linalg.norm(l_total.matrix - composed.matrix))


def model_semigroup_deviation(model: Model, t: float, ref: ReferenceEnvState | None = None) -> float:
    """Semigroup deviation of a time-homogeneous model over ``(0, t)``, ``(t, 2t)``, ``(0, 2t)``."""
    d_s, d_e = _split(model.space, model.system_factor)
    if ref is None:
        ref = reference_env_state("complete_ignorance", dim=d_e)
    u1 = model.evolution(t)
    u2 = model.evolution(2 * t)
    # U(t -> 2t) = U(2t) U(t)^dag for any model
    u12 = u2 @ dagger(u1)
    maps = [jss_L(u, ref, model.space, model.system_factor) for u in (u1, u12, u2)]
    return semigroup_deviation(*maps)


@dataclass(frozen=True)
class BasisScore:
    label: str
    persistence: float
    drift: float
    valid_states: int


@dataclass(frozen=True)
class PointerRanking:
    ranking: tuple[str, ...]
    scores: tuple[BasisScore, ...]
    tied_at_top: bool
    no_decoherence: bool
    tie_tol: float

    def score(self, label: str) -> BasisScore:
        return next(s for s in self.scores if s.label == label)

    def to_dict(self) -> dict:
        return {
            "ranking": list(self.ranking),
            "tied_at_top": self.tied_at_top,
            "note": "no decoherence" if self.no_decoherence else None,
            "scores": {
                s.label: {"persistence": _nan_to_none(s.persistence), "drift": s.drift,
                          "valid_states": s.valid_states}
                for s in self.scores
            },
        }


def _nan_to_none(x: float):
    return None if not np.isfinite(x) else x


def _offdiag_norm(r: np.ndarray) -> float:
    return float(np.linalg.norm(r - np.diag(np.diag(r))))


def pointer_ranking(model: Model, bases: Mapping[str, np.ndarray], initial_states: Sequence,
                    times: Sequence[float], p_floor: float = P_FLOOR, tie_tol: float = 1e-9) -> PointerRanking:
    """Rank candidate system bases by how fast coherences in them decay.

    ``bases`` maps labels to unitaries whose columns are the basis vectors.
    Over ``times`` and ``initial_states`` (full-space states) each basis gets
    the mean off-diagonal persistence ``||offdiag rho_S(t)|| / ||offdiag rho_S(0)||``
    (states without initial coherence in that basis are skipped) and the mean
    drift of its diagonal. Lower persistence ranks first, then lower drift,
    then label order. A basis with no usable state ranks after all others.
    """
    if len(bases) < 2:
        raise HistkitError("pointer ranking needs at least two candidate bases")
    if not initial_states:
        raise HistkitError("pointer ranking needs at least one initial state")
    space = model.space
    s = model.system_factor
    d_s = space.factor_dims[s]
    vs = {}
    for label, v in bases.items():
        v = check_unitary(np.asarray(v, dtype=complex), name=f"basis {label!r}")
        if v.shape[0] != d_s:
            raise DimensionError(f"basis {label!r} has dimension {v.shape[0]}, system has {d_s}")
        vs[str(label)] = v
    states = [space.check_operator(getattr(r, "matrix", r), "initial state") for r in initial_states]
    us = [model.evolution(t) for t in times]
    reduced0 = [partial_trace(r, space, [s]) for r in states]
    reduced_t = [[partial_trace(u @ r @ dagger(u), space, [s]) for u in us] for r in states]

    scores = []
    for label in sorted(vs):
        v = vs[label]
        pers, drift, valid = [], [], 0
        for r0, rts in zip(reduced0, reduced_t):
            b0 = dagger(v) @ r0 @ v
            off0 = _offdiag_norm(b0)
            usable = off0 >= p_floor
            valid += usable
            for rt in rts:
                bt = dagger(v) @ rt @ v
                if usable:
                    pers.append(_offdiag_norm(bt) / off0)
                drift.append(float(np.linalg.norm(np.real(np.diag(bt) - np.diag(b0)))))
        scores.append(BasisScore(label, float(np.mean(pers)) if pers else float("nan"),
                                 float(np.mean(drift)) if drift else 0.0, valid))
    if all(sc.valid_states == 0 for sc in scores):
        raise HistkitError("no initial state carries coherence in any candidate basis")

    def cmp(x: BasisScore, y: BasisScore) -> int:
        px = x.persistence if np.isfinite(x.persistence) else np.inf
        py = y.persistence if np.isfinite(y.persistence) else np.inf
        if not (np.isinf(px) and np.isinf(py)) and abs(px - py) > tie_tol:
            return -1 if px < py else 1
        if abs(x.drift - y.drift) > tie_tol:
            return -1 if x.drift < y.drift else 1
        return (x.label > y.label) - (x.label < y.label)

    ordered = sorted(scores, key=functools.cmp_to_key(cmp))
    top, second = ordered[0], ordered[1]
    tied = (abs(top.persistence - second.persistence) <= tie_tol
            and abs(top.drift - second.drift) <= tie_tol)
    finite = [sc.persistence for sc in scores if np.isfinite(sc.persistence)]
    no_deco = bool(finite) and all(abs(p - 1.0) <= tie_tol for p in finite)
    return PointerRanking(tuple(sc.label for sc in ordered), tuple(ordered), bool(tied), no_deco, tie_tol)


def mutual_information(rho, space: CompositeSpace, part_a: Sequence[int], part_b: Sequence[int]) -> float:
    """``S(A) + S(B) - S(AB)`` in bits for disjoint factor sets ``A`` and ``B``."""
    a, b = sorted(part_a), sorted(part_b)
    if set(a) & set(b):
        raise HistkitError("mutual information needs disjoint parts")
    rho = space.check_operator(rho)
    s_a = von_neumann_entropy(partial_trace(rho, space, a))
    s_b = von_neumann_entropy(partial_trace(rho, space, b))
    s_ab = von_neumann_entropy(partial_trace(rho, space, a + b))
    return s_a + s_b - s_ab


@dataclass(frozen=True)
class RedundancyProfile:
    fragment_sizes: tuple[int, ...]
    mean_information: tuple[float, ...]
    spread: tuple[float, ...]
    samples: tuple[int, ...]
    system_entropy: float

    def monotone(self, tol: float = 1e-8) -> bool:
        m = self.mean_information
        return all(b >= a - tol for a, b in zip(m, m[1:]))

    def to_dict(self) -> dict:
        return {
            "system_entropy_bits": self.system_entropy,
            "monotone": self.monotone(),
            "points": [
                {"fragment_size": f, "mutual_information_bits": i, "std": s, "samples": n}
                for f, i, s, n in zip(self.fragment_sizes, self.mean_information, self.spread, self.samples)
            ],
        }


def redundancy_profile(full_state: DensityOperator, system_factor: int, fragment_sizes: Sequence[int],
                       n_samples: int = 16, seed=0) -> RedundancyProfile:
    """Mean ``I(S:F)`` over environment fragments ``F`` of each requested size.

    When a size has at most ``n_samples`` distinct fragments all of them are
    used; otherwise ``n_samples`` fragments are drawn with a seeded generator.
    """
    space = full_state.space
    space.check_factor(system_factor)
    env = list(space.complement([system_factor]))
    rho = np.asarray(full_state.matrix)
    rng = np.random.default_rng(seed)
    means, spreads, counts = [], [], []
    sizes = [int(f) for f in fragment_sizes]
    for f in sizes:
        if not 1 <= f <= len(env):
            raise HistkitError(f"fragment size {f} outside 1..{len(env)}")
        if comb(len(env), f) <= n_samples:
            fragments = [list(c) for c in itertools.combinations(env, f)]
        else:
            fragments = [sorted(rng.choice(env, size=f, replace=False).tolist()) for _ in range(n_samples)]
        info = [mutual_information(rho, space, [system_factor], frag) for frag in fragments]
        means.append(float(np.mean(info)))
        spreads.append(float(np.std(info)))
        counts.append(len(fragments))
    s_sys = von_neumann_entropy(partial_trace(rho, space, [system_factor]))
    return RedundancyProfile(tuple(sizes), tuple(means), tuple(spreads), tuple(counts), s_sys)
