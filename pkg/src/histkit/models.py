"""Desk-scale system/environment models, schedules and propagators.

Two kinds of model are provided. :class:`HamiltonianModel` generates its
propagators as ``exp(-i H dt)``. :class:`PrescribedModel` carries explicit
step unitaries, one per history interval, which keeps the decoherence of
recorder and two-slit set-ups exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .linalg import (
    PAULI_X,
    PAULI_Z,
    CompositeSpace,
    DimensionError,
    HistkitError,
    Spectrum,
    check_hermitian,
    check_unitary,
    dagger,
    embed,
    hermitian_spectrum,
    join_system_env,
    kron_all,
    partial_trace,
)

log = logging.getLogger(__name__)

MAX_DIM = 4096
LEAKAGE_WARNING = 1e-3


@dataclass(frozen=True)
class Schedule:
    times: tuple[float, ...]

    def __init__(self, times: Sequence[float]):
        ts = tuple(float(t) for t in times)
        if len(ts) < 2:
            raise HistkitError("schedule needs t_0 and at least one history time")
        if any(not np.isfinite(t) for t in ts):
            raise HistkitError("schedule times must be finite")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise HistkitError(f"schedule times must be strictly increasing, got {list(ts)}")
        object.__setattr__(self, "times", ts)

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.times, self.times[1:]))


@dataclass(frozen=True)
class HamiltonianModel:
    h: np.ndarray
    space: CompositeSpace
    system_factor: int = 0
    description: str = ""
    env_state: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        h = check_hermitian(self.space.check_operator(self.h, "h"), 1e-12, "h")
        h = 0.5 * (h + dagger(h))
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        self.space.check_factor(self.system_factor)

    @cached_property
    def spectrum(self) -> Spectrum:
        return hermitian_spectrum(self.h)

    def evolution(self, t: float) -> np.ndarray:
        """``U(t) = exp(-i H t)``."""
        v = self.spectrum.eigenvectors
        return (v * np.exp(-1j * self.spectrum.eigenvalues * float(t))) @ dagger(v)

    def interval_unitary(self, index: int, t_start: float, t_end: float) -> np.ndarray:
        return self.evolution(t_end - t_start)


@dataclass(frozen=True)
class PrescribedModel:
    """Model defined by explicit step unitaries.

    History interval ``i`` applies ``steps[i]`` whatever its duration. Past
    the end of ``steps`` the evolution is the identity, unless ``cycle`` is
    set, in which case the steps repeat.
    """

    steps: tuple[np.ndarray, ...]
    space: CompositeSpace
    system_factor: int = 0
    description: str = ""
    env_state: np.ndarray | None = field(default=None, repr=False)
    cycle: bool = False
    h: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        steps = []
        for k, u in enumerate(self.steps):
            u = check_unitary(self.space.check_operator(u, f"step {k}"), name=f"step {k}")
            u.setflags(write=False)
            steps.append(u)
        if not steps:
            raise HistkitError("a prescribed model needs at least one step unitary")
        object.__setattr__(self, "steps", tuple(steps))
        self.space.check_factor(self.system_factor)

    def step(self, index: int) -> np.ndarray:
        if self.cycle:
            return self.steps[index % len(self.steps)]
        if index < len(self.steps):
            return self.steps[index]
        return np.eye(self.space.total_dim, dtype=complex)

    def evolution(self, n_steps: float) -> np.ndarray:
        """Product of the first ``n_steps`` step unitaries (``n_steps`` integral)."""
        n = int(round(n_steps))
        if n < 0 or abs(n - n_steps) > 1e-12:
            raise HistkitError(f"prescribed models evolve by whole steps, got {n_steps}")
        u = np.eye(self.space.total_dim, dtype=complex)
        for k in range(n):
            u = self.step(k) @ u
        return u

    def interval_unitary(self, index: int, t_start: float, t_end: float) -> np.ndarray:
        return self.step(index)


Model = HamiltonianModel | PrescribedModel


@dataclass(frozen=True)
class PropagatorSet:
    """Unitaries ``U(t_i -> t_{i+1})`` for consecutive schedule times."""

    times: tuple[float, ...]
    steps: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.steps) != len(self.times) - 1:
            raise HistkitError("one propagator per schedule interval is required")

    @property
    def n_intervals(self) -> int:
        return len(self.steps)

    @property
    def dim(self) -> int:
        return self.steps[0].shape[0]

    def step(self, i: int) -> np.ndarray:
        """``U(t_i -> t_{i+1})``."""
        return self.steps[i]

    def between(self, i: int, j: int) -> np.ndarray:
        """``U(t_i -> t_j)`` for ``i <= j`` as the ordered product of steps."""
        if not 0 <= i <= j <= self.n_intervals:
            raise HistkitError(f"invalid propagator request ({i}, {j})")
        u = np.eye(self.dim, dtype=complex)
        for k in range(i, j):
            u = self.steps[k] @ u
        return u

    @cached_property
    def cumulative(self) -> tuple[np.ndarray, ...]:
        """``U(t_0 -> t_i)`` for ``i = 0 .. n``."""
        out = [np.eye(self.dim, dtype=complex)]
        for u in self.steps:
            out.append(u @ out[-1])
        return tuple(out)

    @property
    def mapping(self) -> dict[tuple[float, float], np.ndarray]:
        return {(a, b): u for (a, b), u in zip(zip(self.times, self.times[1:]), self.steps)}


def propagators(model: Model, schedule: Schedule) -> PropagatorSet:
    steps = tuple(
        model.interval_unitary(i, a, b) for i, (a, b) in enumerate(schedule.intervals())
    )
    return PropagatorSet(schedule.times, steps)


def heisenberg_projector(p, u, tol: float = 1e-10) -> np.ndarray:
    """``P(t) = U^dag P U`` with ``U = U(t_0 -> t)``."""
    u = check_unitary(u, tol)
    p = np.asarray(p, dtype=complex)
    if p.shape != u.shape:
        raise DimensionError(f"projector shape {p.shape} does not match unitary {u.shape}")
    return dagger(u) @ p @ u


def _check_budget(dim: int):
    if dim > MAX_DIM:
        raise DimensionError(f"total dimension {dim} exceeds the budget of {MAX_DIM}")


def plus_state(n: int = 1) -> np.ndarray:
    plus = np.full((2, 2), 0.5, dtype=complex)
    return kron_all([plus] * n)


def draw_couplings(n: int, g_min: float, g_max: float, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(g_min, g_max, size=n)


def central_spin_dephasing(n_bath: int, couplings: Sequence[float]) -> HamiltonianModel:
    """``H = sum_k g_k Z_S Z_k`` on a qubit coupled to ``n_bath`` bath qubits.

    The bath starts in ``|+>^n`` by default.
    """
    g = np.asarray(couplings, dtype=float).reshape(-1)
    if g.size != n_bath:
        raise DimensionError(f"{n_bath} bath spins but {g.size} couplings")
    if not 1 <= n_bath <= 12:
        raise DimensionError("central spin model supports 1..12 bath spins")
    space = CompositeSpace([2] * (n_bath + 1))
    # diagonal in the joint z basis: z_S z_k with z = +1 for |0>, -1 for |1>
    bits = (np.arange(space.total_dim)[:, None] >> np.arange(n_bath, -1, -1)) & 1
    z = 1 - 2 * bits
    diag = z[:, 0] * (z[:, 1:] @ g)
    h = np.diag(diag.astype(complex))
    return HamiltonianModel(
        h, space, 0, f"central spin dephasing, {n_bath} bath spins", plus_state(n_bath)
    )


def ladder(d: int) -> np.ndarray:
    """Truncated annihilation operator on ``d`` levels."""
    return np.diag(np.sqrt(np.arange(1, d)), k=1).astype(complex)


def thermal_mode_state(d: int, omega: float, beta: float) -> np.ndarray:
    levels = np.arange(d)
    w = np.exp(-beta * omega * (levels - levels.min()))
    return np.diag(w / w.sum()).astype(complex)


def truncated_oscillator_bath(d_sys: int, n_bath: int, d_bath: int, omega: float,
                              bath_omegas: Sequence[float], couplings: Sequence[float],
                              bath_beta: float = 1.0) -> HamiltonianModel:
    """Oscillator coupled position-position to ``n_bath`` truncated bath oscillators.

    ``H = w a^dag a + sum_k w_k b_k^dag b_k + sum_k c_k (a + a^dag)(b_k + b_k^dag)``.
    The bath starts in the product of truncated thermal states at ``bath_beta``.
    """
    wk = np.asarray(bath_omegas, dtype=float).reshape(-1)
    ck = np.asarray(couplings, dtype=float).reshape(-1)
    if wk.size != n_bath or ck.size != n_bath:
        raise DimensionError("need one bath frequency and one coupling per bath mode")
    if d_sys < 1 or d_bath < 1 or n_bath < 0:
        raise DimensionError("level counts must be positive")
    space = CompositeSpace([d_sys] + [d_bath] * n_bath)
    _check_budget(space.total_dim)
    a = ladder(d_sys)
    b = ladder(d_bath)
    h = omega * embed(dagger(a) @ a, space, 0)
    x_sys = embed(a + dagger(a), space, 0)
    for k in range(n_bath):
        h = h + wk[k] * embed(dagger(b) @ b, space, k + 1)
        h = h + ck[k] * x_sys @ embed(b + dagger(b), space, k + 1)
    h = 0.5 * (h + dagger(h))
    env = kron_all([thermal_mode_state(d_bath, w, bath_beta) for w in wk]) if n_bath else None
    return HamiltonianModel(
        h, space, 0, f"truncated oscillator bath, {n_bath} modes x {d_bath} levels", env
    )


def truncation_leakage(rho, space: CompositeSpace, factors: Sequence[int] | None = None,
                       threshold: float = LEAKAGE_WARNING) -> list[float]:
    """Population of the top truncated level of each listed factor.

    A warning is logged for every factor whose leakage exceeds ``threshold``.
    """
    rho = space.check_operator(rho)
    factors = range(space.n_factors) if factors is None else factors
    out = []
    for k in factors:
        marginal = partial_trace(rho, space, [k])
        p_top = float(marginal[-1, -1].real)
        if p_top > threshold:
            log.warning("factor %d: top-level occupation %.3e exceeds %.1e; truncation may be inadequate",
                        k, p_top, threshold)
        out.append(p_top)
    return out


def rotation_x(angle: float) -> np.ndarray:
    """``exp(-i angle X / 2)``."""
    return np.cos(angle / 2) * np.eye(2) - 1j * np.sin(angle / 2) * PAULI_X


def third_party_two_slit(theta: float) -> PrescribedModel:
    """Slit qubit (factor 0, ``|L> = |0>``, ``|R> = |1>``) and spin qubit (factor 1).

    Passage through slit L rotates the spin by ``theta`` about x, passage
    through R by ``-theta``; later intervals are free (identity). There is no
    slit-spin coupling term, so ``h`` is zero. With the spin starting in
    ``|0>`` the two spin branches overlap by ``cos(theta)``.
    """
    proj_l = np.diag([1.0, 0.0]).astype(complex)
    proj_r = np.diag([0.0, 1.0]).astype(complex)
    u = np.kron(proj_l, rotation_x(theta)) + np.kron(proj_r, rotation_x(-theta))
    space = CompositeSpace([2, 2])
    spin0 = np.diag([1.0, 0.0]).astype(complex)
    return PrescribedModel(
        (u,), space, 0, f"third-party two-slit, theta={theta:g}", spin0,
        h=np.zeros((4, 4), dtype=complex),
    )


def _controlled_flips(n_env: int, targets: Sequence[int]) -> np.ndarray:
    """Permutation flipping each target environment qubit when the system qubit is 1."""
    n = n_env + 1
    dim = 2 ** n
    idx = np.arange(dim)
    sys_bit = (idx >> n_env) & 1
    mask = 0
    for t in targets:
        mask |= 1 << (n_env - 1 - t)
    image = np.where(sys_bit == 1, idx ^ mask, idx)
    u = np.zeros((dim, dim), dtype=complex)
    u[image, idx] = 1.0
    return u


def perfect_recorder(n_env: int, fresh: bool = False) -> PrescribedModel:
    """System qubit whose z value is copied into environment qubits starting in ``|0...0>``.

    By default the first interval copies into every environment qubit at
    once and later intervals are free. With ``fresh=True`` interval ``k``
    copies into qubit ``k`` only, so each step meets an untouched
    environment qubit.
    """
    if not 1 <= n_env <= 10:
        raise DimensionError("perfect recorder supports 1..10 environment qubits")
    space = CompositeSpace([2] * (n_env + 1))
    if fresh:
        steps = tuple(_controlled_flips(n_env, [k]) for k in range(n_env))
    else:
        steps = (_controlled_flips(n_env, range(n_env)),)
    env = np.zeros((2 ** n_env, 2 ** n_env), dtype=complex)
    env[0, 0] = 1.0
    kind = "fresh-environment" if fresh else "one-shot"
    return PrescribedModel(steps, space, 0, f"perfect recorder ({kind}), {n_env} env qubits", env)


def product_unitary_model(h_sys, h_env) -> HamiltonianModel:
    """Non-interacting model ``H = H_S (x) I + I (x) H_E``."""
    hs = check_hermitian(h_sys, name="h_sys")
    he = check_hermitian(h_env, name="h_env")
    space = CompositeSpace([hs.shape[0], he.shape[0]])
    h = embed(hs, space, 0) + embed(he, space, 1)
    return HamiltonianModel(h, space, 0, "decoupled system and environment")


def system_state_with_env(model: Model, rho_sys) -> np.ndarray:
    """Full-space state ``rho_S (x) env_state`` in the model's factor order."""
    if model.env_state is None:
        raise HistkitError(f"model {model.description!r} has no default environment state")
    return join_system_env(np.asarray(rho_sys, dtype=complex), model.env_state, model.space,
                           model.system_factor)


def sigma_z_system(model: Model) -> np.ndarray:
    return embed(PAULI_Z, model.space, model.system_factor)
