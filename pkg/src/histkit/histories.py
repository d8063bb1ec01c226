"""Class operators, decoherence functionals and consistency checks.

Conventions, fixed throughout the package::

    C_a   = P_{a_1}(t_1) P_{a_2}(t_2) ... P_{a_n}(t_n)
    P(t)  = U(t_0 -> t)^dag P U(t_0 -> t)
    p(a)  = Tr(C_a^dag rho C_a)
    D(a,b) = Tr(C_a^dag rho C_b)

Worked qubit example with ``U = I``, ``rho = |+><+|``, first a z
measurement then an x measurement::

    C_(0,+) = |0><0| |+><+| = |0><+| / sqrt(2)      (not Hermitian)
    p(0,+)  = Tr(|+><0| |+><+| |0><+|) / 2 = 1/4
    D((0,+),(1,+)) = Tr(|+><0| rho |1><+|) / 2 = 1/4
"""
from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass
from math import prod
from typing import Iterator, Sequence

import numpy as np

from .linalg import CompositeSpace, DimensionError, HistkitError, dagger, embed
from .models import PropagatorSet, Schedule
from .states import (
    DensityOperator,
    ProjectorFamily,
    coarse_grain_family,
    identity_family,
)

log = logging.getLogger(__name__)

MAX_HISTORIES = 4096
P_FLOOR = 1e-12
TOL_NEGATIVE = 1e-10


def _debug_enabled() -> bool:
    return os.environ.get("HISTKIT_DEBUG", "") not in ("", "0")


class NegativeProbabilityError(HistkitError, ValueError):
    pass


@dataclass(frozen=True)
class HistorySetSpec:
    """Projector families at ``t_1 .. t_n`` plus the initial state at ``t_0``."""

    schedule: Schedule
    families: tuple[ProjectorFamily, ...]
    initial_state: DensityOperator

    def __init__(self, schedule: Schedule, families: Sequence[ProjectorFamily], initial_state: DensityOperator):
        families = tuple(families)
        if len(families) != schedule.n_intervals:
            raise HistkitError(
                f"{schedule.n_intervals} history times but {len(families)} projector families"
            )
        space = initial_state.space
        for i, f in enumerate(families):
            target = space.total_dim if f.factor is None else space.factor_dims[space.check_factor(f.factor)]
            if f.dim != target:
                raise DimensionError(
                    f"family {i} has dimension {f.dim}, expected {target}"
                    + ("" if f.factor is None else f" for factor {f.factor}")
                )
        object.__setattr__(self, "schedule", schedule)
        object.__setattr__(self, "families", families)
        object.__setattr__(self, "initial_state", initial_state)

    @property
    def space(self) -> CompositeSpace:
        return self.initial_state.space

    @property
    def n_times(self) -> int:
        return len(self.families)

    @property
    def n_histories(self) -> int:
        return prod(len(f) for f in self.families)

    def full_projectors(self, i: int) -> list[np.ndarray]:
        """Projectors of family ``i`` on the full space."""
        f = self.families[i]
        if f.factor is None:
            return [np.asarray(p) for p in f.projectors]
        return [embed(p, self.space, f.factor) for p in f.projectors]

    def resolve(self, alpha: Sequence) -> tuple[int, ...]:
        """Map a history given by indices or labels to member indices."""
        if len(alpha) != self.n_times:
            raise HistkitError(f"history {tuple(alpha)} has length {len(alpha)}, expected {self.n_times}")
        out = []
        for i, (a, f) in enumerate(zip(alpha, self.families)):
            if isinstance(a, str):
                if a not in f.labels:
                    raise HistkitError(f"unknown label {a!r} at time {i}; family has {f.labels}")
                out.append(f.labels.index(a))
            else:
                a = int(a)
                if not 0 <= a < len(f):
                    raise HistkitError(f"index {a} out of range at time {i} (family size {len(f)})")
                out.append(a)
        return tuple(out)

    def label(self, alpha: Sequence[int]) -> str:
        return ",".join(f.labels[a] for a, f in zip(alpha, self.families))


def iter_histories(spec: HistorySetSpec, cap: int = MAX_HISTORIES) -> Iterator[tuple[int, ...]]:
    """Lazily enumerate index sequences, refusing sets larger than ``cap``."""
    n = spec.n_histories
    if n > cap:
        raise HistkitError(f"history set has {n} histories, above the cap of {cap}")
    return itertools.product(*(range(len(f)) for f in spec.families))


@dataclass(frozen=True)
class ClassOperator:
    alpha: tuple[int, ...]
    matrix: np.ndarray


def _heisenberg_families(spec: HistorySetSpec, props: PropagatorSet) -> list[list[np.ndarray]]:
    if props.n_intervals != spec.n_times:
        raise HistkitError("propagator set and history spec disagree on the number of intervals")
    if props.dim != spec.space.total_dim:
        raise DimensionError("propagators do not act on the history space")
    out = []
    for i in range(spec.n_times):
        w = props.cumulative[i + 1]
        out.append([dagger(w) @ p @ w for p in spec.full_projectors(i)])
    return out


def class_operator(spec: HistorySetSpec, props: PropagatorSet, alpha: Sequence) -> ClassOperator:
    idx = spec.resolve(alpha)
    heis = _heisenberg_families(spec, props)
    c = heis[0][idx[0]]
    for i in range(1, spec.n_times):
        c = c @ heis[i][idx[i]]
    return ClassOperator(idx, c)


def class_operators(spec: HistorySetSpec, props: PropagatorSet,
                    cap: int = MAX_HISTORIES) -> list[ClassOperator]:
    """All class operators in lexicographic history order, sharing prefix products."""
    histories = list(iter_histories(spec, cap))
    heis = _heisenberg_families(spec, props)
    prefixes: dict[tuple[int, ...], np.ndarray] = {(): None}
    for i in range(spec.n_times):
        nxt = {}
        for pre, m in prefixes.items():
            for a, p in enumerate(heis[i]):
                nxt[pre + (a,)] = p if m is None else m @ p
        prefixes = nxt
    return [ClassOperator(h, prefixes[h]) for h in histories]


def _clip_probability(p: float, what: str) -> float:
    if p < -TOL_NEGATIVE:
        raise NegativeProbabilityError(f"{what} is negative beyond tolerance: {p:.3e}")
    if p < 0.0:
        log.debug("clipping %s = %.3e to 0", what, p)
        return 0.0
    return p


def history_probability(rho: DensityOperator, c: ClassOperator) -> float:
    """``Tr(C^dag rho C)``, clipped at zero within tolerance."""
    m = np.asarray(rho.matrix)
    if c.matrix.shape != m.shape:
        raise DimensionError(f"class operator {c.matrix.shape} does not match state {m.shape}")
    p = float(np.real(np.trace(dagger(c.matrix) @ m @ c.matrix)))
    return _clip_probability(p, f"p{c.alpha}")


def chain_probability(rho: DensityOperator, spec: HistorySetSpec, props: PropagatorSet,
                      alpha: Sequence) -> float:
    """Probability from the sequential Schrodinger-picture rule.

    ``Tr[P_n U_n ... P_1 U_1 rho U_1^dag P_1 ... U_n^dag P_n]`` with
    ``U_i = U(t_{i-1} -> t_i)``; independent of :func:`class_operator`.
    """
    idx = spec.resolve(alpha)
    state = np.asarray(rho.matrix)
    for i, a in enumerate(idx):
        u = props.step(i)
        p = spec.full_projectors(i)[a]
        state = p @ (u @ state @ dagger(u)) @ p
    return _clip_probability(float(np.real(np.trace(state))), f"chain p{idx}")


def union_probability(rho: DensityOperator, c_alpha: ClassOperator, c_beta: ClassOperator) -> float:
    """Probability of ``alpha or beta`` from the summed class operator."""
    c = c_alpha.matrix + c_beta.matrix
    m = np.asarray(rho.matrix)
    return float(np.real(np.trace(dagger(c) @ m @ c)))


@dataclass(frozen=True)
class DecoherenceMatrix:
    entries: np.ndarray
    labels: tuple[tuple[int, ...], ...]
    names: tuple[str, ...]

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def probabilities(self) -> np.ndarray:
        return np.real(np.diag(self.entries)).copy()

    def index(self, alpha) -> int:
        if isinstance(alpha, str):
            return self.names.index(alpha)
        key = tuple(alpha)
        if key in self.labels:
            return self.labels.index(key)
        # label sequence such as ("0", "+")
        return self.names.index(",".join(str(a) for a in key))

    def __getitem__(self, pair) -> complex:
        a, b = pair
        return complex(self.entries[self.index(a), self.index(b)])

    def hermiticity_defect(self) -> float:
        return float(np.max(np.abs(self.entries - dagger(self.entries))))

    def total(self) -> complex:
        return complex(np.sum(self.entries))

    def normalized(self, p_floor: float = P_FLOOR, real_part: bool = False) -> np.ndarray:
        """``|D(a,b)| / sqrt(D(a,a) D(b,b))`` off the diagonal; NaN where a branch is below ``p_floor``."""
        p = np.clip(self.probabilities, 0.0, None)
        num = np.abs(np.real(self.entries)) if real_part else np.abs(self.entries)
        denom = np.sqrt(np.outer(p, p))
        out = np.full(self.entries.shape, np.nan)
        ok = (p[:, None] >= p_floor) & (p[None, :] >= p_floor)
        out[ok] = num[ok] / denom[ok]
        np.fill_diagonal(out, np.nan)
        return out

    def max_normalized_offdiagonal(self, p_floor: float = P_FLOOR) -> float:
        norm = self.normalized(p_floor)
        finite = norm[np.isfinite(norm)]
        return float(finite.max()) if finite.size else 0.0


def decoherence_matrix(rho: DensityOperator, spec: HistorySetSpec, props: PropagatorSet,
                       cap: int = MAX_HISTORIES, cross_check: bool | None = None) -> DecoherenceMatrix:
    """``D(a,b) = Tr(C_a^dag rho C_b)`` for every pair of histories in the set.

    With ``cross_check`` (or ``HISTKIT_DEBUG`` set) the diagonal is compared
    against :func:`chain_probability`.
    """
    ops = class_operators(spec, props, cap)
    m = np.asarray(rho.matrix)
    if m.shape[0] != spec.space.total_dim:
        raise DimensionError("state does not match the history space")
    stack = np.stack([c.matrix for c in ops])
    left = np.conj(np.transpose(stack, (0, 2, 1))) @ m
    d = np.einsum("aij,bji->ab", left, stack)
    for k in range(len(ops)):
        _clip_probability(float(d[k, k].real), f"p{ops[k].alpha}")
    labels = tuple(c.alpha for c in ops)
    out = DecoherenceMatrix(d, labels, tuple(spec.label(a) for a in labels))
    if cross_check if cross_check is not None else _debug_enabled():
        for k, a in enumerate(labels):
            chain = chain_probability(rho, spec, props, a)
            if abs(chain - d[k, k].real) > 1e-12:
                raise HistkitError(f"compact and chain probabilities disagree for {a}: {d[k, k].real} vs {chain}")
    return out


def interference_term(d: DecoherenceMatrix, alpha, beta) -> float:
    """``2 Re D(alpha, beta)``: the failure of additivity for the pair."""
    i, j = d.index(alpha), d.index(beta)
    if i == j:
        raise HistkitError("interference term needs two distinct histories")
    return 2.0 * float(np.real(d.entries[i, j]))


def coarse_grain_histories(spec: HistorySetSpec, partitions: Sequence, verify: bool = True) -> HistorySetSpec:
    """Coarse-grain each time's family; ``None`` keeps a family unchanged.

    With ``verify`` the coarse class operators (with trivial dynamics) are
    checked against sums of fine ones when the fine set is small.
    """
    if len(partitions) != spec.n_times:
        raise HistkitError(f"need one partition per history time ({spec.n_times})")
    families = []
    for f, part in zip(spec.families, partitions):
        families.append(f if part is None else coarse_grain_family(f, part))
    coarse = HistorySetSpec(spec.schedule, families, spec.initial_state)
    if verify and spec.n_histories * spec.space.total_dim ** 2 <= 1 << 16:
        _verify_coarse_sums(spec, coarse, partitions)
    return coarse


def _verify_coarse_sums(fine: HistorySetSpec, coarse: HistorySetSpec, partitions):
    ident = PropagatorSet(fine.schedule.times,
                          tuple(np.eye(fine.space.total_dim, dtype=complex) for _ in range(fine.n_times)))
    fine_ops = {c.alpha: c.matrix for c in class_operators(fine, ident)}
    blocks_per_time = []
    for f, part in zip(fine.families, partitions):
        if part is None:
            blocks_per_time.append([[i] for i in range(len(f))])
        else:
            blocks_per_time.append([[f.index(i) if isinstance(i, str) else int(i) for i in b] for b in part])
    for c in class_operators(coarse, ident):
        members = itertools.product(*(blocks_per_time[i][a] for i, a in enumerate(c.alpha)))
        total = sum(fine_ops[m] for m in members)
        if float(np.max(np.abs(total - c.matrix))) > 1e-10:
            raise HistkitError(f"coarse class operator {c.alpha} is not the sum of its fine histories")


@dataclass(frozen=True)
class DecoherenceReport:
    mode: str
    epsilon: float
    p_floor: float
    passed: bool
    worst_pair: tuple[str, str] | None
    worst_defect: float
    vacuous_pairs: int
    checked_pairs: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "epsilon": self.epsilon,
            "p_floor": self.p_floor,
            "passed": self.passed,
            "worst_pair": list(self.worst_pair) if self.worst_pair else None,
            "worst_normalized_defect": self.worst_defect,
            "checked_pairs": self.checked_pairs,
            "vacuous_pairs": self.vacuous_pairs,
        }


def check_decoherence(d: DecoherenceMatrix, mode: str = "medium", epsilon: float = 1e-8,
                      p_floor: float = P_FLOOR) -> DecoherenceReport:
    """Test weak (``Re D``) or medium (``D``) decoherence with a scale-free defect.

    Pairs where either branch probability is below ``p_floor`` count as
    vacuously decoherent.
    """
    if mode not in ("weak", "medium"):
        raise HistkitError(f"mode must be 'weak' or 'medium', got {mode!r}")
    if not epsilon > 0:
        raise HistkitError("epsilon must be positive")
    norm = d.normalized(p_floor, real_part=(mode == "weak"))
    n = d.n
    total_pairs = n * (n - 1) // 2
    iu = np.triu_indices(n, k=1)
    vals = norm[iu]
    finite = np.isfinite(vals)
    vacuous = int(np.count_nonzero(~finite))
    worst_pair = None
    worst = 0.0
    if np.any(finite):
        k = int(np.argmax(np.where(finite, vals, -1.0)))
        worst = float(vals[k])
        worst_pair = (d.names[iu[0][k]], d.names[iu[1][k]])
    return DecoherenceReport(mode, epsilon, p_floor, worst <= epsilon, worst_pair, worst,
                             vacuous, total_pairs - vacuous)


@dataclass(frozen=True)
class KolmogorovReport:
    epsilon: float
    min_probability: float
    total_probability: float
    max_additivity_defect: float
    worst_pair: tuple[str, str] | None
    weak: DecoherenceReport
    medium: DecoherenceReport

    @property
    def axiom1(self) -> bool:
        return self.min_probability >= -self.epsilon

    @property
    def axiom2(self) -> bool:
        return abs(self.total_probability - 1.0) <= self.epsilon

    @property
    def axiom3(self) -> bool:
        """Additivity, decided by weak decoherence at the same epsilon."""
        return self.weak.passed

    @property
    def passed(self) -> bool:
        return self.axiom1 and self.axiom2 and self.axiom3

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "passed": self.passed,
            "axiom1_nonnegative": {"holds": self.axiom1, "min_probability": self.min_probability},
            "axiom2_normalized": {"holds": self.axiom2, "defect": abs(self.total_probability - 1.0)},
            "axiom3_additive": {
                "holds": self.axiom3,
                "max_additivity_defect": self.max_additivity_defect,
                "worst_pair": list(self.worst_pair) if self.worst_pair else None,
                "weak_decoherence": self.weak.to_dict(),
            },
            "medium_implies_weak": (not self.medium.passed) or self.weak.passed,
        }


def kolmogorov_report(rho: DensityOperator, spec: HistorySetSpec, props: PropagatorSet,
                      epsilon: float = 1e-8, p_floor: float = P_FLOOR,
                      d: DecoherenceMatrix | None = None) -> KolmogorovReport:
    """Check the three probability axioms on the history set.

    The additivity defect of a pair is ``p(a or b) - p(a) - p(b)``, which
    equals ``2 Re D(a,b)``; it is read off the decoherence matrix.
    """
    if d is None:
        d = decoherence_matrix(rho, spec, props)
    p = d.probabilities
    n = d.n
    worst_pair = None
    worst = 0.0
    if n > 1:
        defects = np.abs(2.0 * np.real(d.entries))
        np.fill_diagonal(defects, -1.0)
        k = int(np.argmax(defects))
        i, j = divmod(k, n)
        i, j = min(i, j), max(i, j)
        worst = float(defects.flat[k])
        worst_pair = (d.names[i], d.names[j])
    weak = check_decoherence(d, "weak", epsilon, p_floor)
    medium = check_decoherence(d, "medium", epsilon, p_floor)
    if medium.passed and not weak.passed:
        raise HistkitError("medium decoherence holds but weak decoherence fails")
    return KolmogorovReport(epsilon, float(p.min()), float(p.sum()), worst, worst_pair, weak, medium)


def trivial_spec(schedule: Schedule, rho: DensityOperator) -> HistorySetSpec:
    """History set whose every family is ``{I}``."""
    fams = [identity_family(rho.space.total_dim) for _ in range(schedule.n_intervals)]
    return HistorySetSpec(schedule, fams, rho)


def completeness_defect(ops: Sequence[ClassOperator]) -> float:
    total = sum(c.matrix for c in ops)
    return float(np.max(np.abs(total - np.eye(total.shape[0]))))
