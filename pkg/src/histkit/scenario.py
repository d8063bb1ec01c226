"""JSON scenario files: schema, parsing and the batch runner.

A scenario names a model, an initial state, a schedule ``t_0 < t_1 < ...``,
one projector family per history time and a list of checks. Complex numbers
are written as ``[re, im]`` pairs. Unknown keys are rejected everywhere so a
misspelled physics parameter can never be silently ignored.
"""
from __future__ import annotations

import json
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Any, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import __version__
from .histories import (
    HistorySetSpec,
    check_decoherence,
    decoherence_matrix,
    kolmogorov_report,
)
from .linalg import CompositeSpace, HistkitError, dagger, embed, join_system_env, kron_all, partial_trace
from .models import (
    HamiltonianModel,
    Model,
    PrescribedModel,
    Schedule,
    central_spin_dephasing,
    draw_couplings,
    ladder,
    perfect_recorder,
    propagators,
    third_party_two_slit,
    truncated_oscillator_bath,
    truncation_leakage,
)
from .open_systems import (
    interval_maps,
    jss_K,
    jss_residual,
    model_semigroup_deviation,
    paz_zurek_test,
    pointer_ranking,
    redundancy_profile,
    subsystem_D_exact,
    subsystem_D_factored,
)
from .states import DensityOperator, ProjectorFamily, coarse_grain_family, family_from_basis, reference_env_state

CHECKS = ("kolmogorov", "weak", "medium", "jss", "paz_zurek", "semigroup", "pointer", "redundancy")
RANDOMIZED_CHECKS = {"redundancy"}

Complex = tuple[float, float]
Vector = list[Complex]
Matrix = list[list[Complex]]


class ScenarioError(HistkitError, ValueError):
    """Malformed or inconsistent scenario file."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CentralSpinSpec(_Strict):
    kind: Literal["central_spin"]
    couplings: list[float] | None = None
    n_bath: int | None = None
    coupling_range: tuple[float, float] | None = None

    @model_validator(mode="after")
    def _couplings_given(self):
        if self.couplings is None and (self.n_bath is None or self.coupling_range is None):
            raise ValueError("give either couplings or n_bath with coupling_range")
        if self.couplings is not None and self.n_bath is not None and self.n_bath != len(self.couplings):
            raise ValueError("n_bath does not match the number of couplings")
        return self

    @property
    def bath_size(self) -> int:
        return len(self.couplings) if self.couplings is not None else int(self.n_bath)

    def factor_dims(self) -> list[int]:
        return [2] * (self.bath_size + 1)


class OscillatorSpec(_Strict):
    kind: Literal["oscillator_bath"]
    d_sys: int
    n_bath: int
    d_bath: int
    omega: float
    bath_omegas: list[float]
    couplings: list[float]
    bath_beta: float = 1.0

    def factor_dims(self) -> list[int]:
        return [self.d_sys] + [self.d_bath] * self.n_bath


class TwoSlitSpec(_Strict):
    kind: Literal["two_slit"]
    theta: float = 0.0

    def factor_dims(self) -> list[int]:
        return [2, 2]


class RecorderSpec(_Strict):
    kind: Literal["recorder"]
    n_env: int
    fresh: bool = False

    def factor_dims(self) -> list[int]:
        return [2] * (self.n_env + 1)


class ExplicitSpec(_Strict):
    kind: Literal["explicit"]
    factor_dims_: list[int] = Field(alias="factor_dims")
    hamiltonian: Matrix
    system_factor: int = 0

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    def factor_dims(self) -> list[int]:
        return list(self.factor_dims_)


ModelSpec = Annotated[
    Union[CentralSpinSpec, OscillatorSpec, TwoSlitSpec, RecorderSpec, ExplicitSpec],
    Field(discriminator="kind"),
]


class VectorState(_Strict):
    vector: Vector


class MatrixState(_Strict):
    matrix: Matrix


FactorState = Union[str, VectorState, MatrixState]


class PureInit(_Strict):
    kind: Literal["pure"]
    vector: Vector


class MatrixInit(_Strict):
    kind: Literal["matrix"]
    matrix: Matrix


class ProductInit(_Strict):
    kind: Literal["product"]
    factors: list[FactorState]


class SystemInit(_Strict):
    kind: Literal["system"]
    system: FactorState


InitSpec = Annotated[Union[PureInit, MatrixInit, ProductInit, SystemInit], Field(discriminator="kind")]


class FamilySpec(_Strict):
    factor: int | None = None
    basis: str | None = None
    vectors: list[Vector] | None = None
    partition: list[list[int]] | None = None
    labels: list[str] | None = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.basis is None) == (self.vectors is None):
            raise ValueError("give exactly one of basis or vectors")
        return self


class ReferenceSpec(_Strict):
    kind: Literal["complete_ignorance", "thermal"] = "complete_ignorance"
    beta: float | None = None
    env_hamiltonian: Matrix | None = None


class Tolerances(_Strict):
    epsilon: float = 1e-8
    p_floor: float = 1e-12
    jss: float = 1e-10
    paz_zurek: float = 1e-10
    semigroup: float = 1e-10
    redundancy: float = 1e-8


class Options(_Strict):
    pointer_bases: list[str] = ["z", "x"]
    redundancy_fragment_sizes: list[int] | None = None
    redundancy_samples: int = 16
    reference: ReferenceSpec = ReferenceSpec()


class Scenario(_Strict):
    name: str
    description: str | None = None
    model: ModelSpec
    initial_state: InitSpec
    schedule: list[float]
    families: list[FamilySpec]
    checks: list[str] = []
    tolerances: Tolerances = Tolerances()
    options: Options = Options()
    seed: int | None = None

    @field_validator("schedule")
    @classmethod
    def _increasing(cls, v):
        if len(v) < 2:
            raise ValueError("schedule needs t_0 and at least one history time")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"schedule times must be strictly increasing, got {v}")
        return v

    @field_validator("checks")
    @classmethod
    def _known_checks(cls, v):
        unknown = [c for c in v if c not in CHECKS]
        if unknown:
            raise ValueError(f"unknown checks {unknown}; choose from {list(CHECKS)}")
        if len(set(v)) != len(v):
            raise ValueError("checks must not repeat")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        dims = self.model.factor_dims()
        if len(self.families) != len(self.schedule) - 1:
            raise ScenarioShapeError("families", f"{len(self.schedule) - 1} history times need as many families, "
                                                 f"got {len(self.families)}")
        for i, f in enumerate(self.families):
            if f.factor is not None and not 0 <= f.factor < len(dims):
                raise ScenarioShapeError(f"families.{i}.factor", f"factor {f.factor} out of range for {dims}")
            target = int(np.prod(dims)) if f.factor is None else dims[f.factor]
            if f.vectors is not None:
                for j, v in enumerate(f.vectors):
                    if len(v) != target:
                        raise ScenarioShapeError(
                            f"families.{i}.vectors.{j}",
                            f"basis vector has dimension {len(v)}, family {i} acts on dimension {target}",
                        )
            elif f.basis not in NAMED_BASES:
                raise ScenarioShapeError(f"families.{i}.basis", f"unknown basis {f.basis!r}")
            elif f.basis in ("x", "y") and target != 2:
                raise ScenarioShapeError(f"families.{i}.basis", f"basis {f.basis!r} needs a qubit, got dimension {target}")
        if isinstance(self.initial_state, ProductInit) and len(self.initial_state.factors) != len(dims):
            raise ScenarioShapeError("initial_state.factors", f"need {len(dims)} factor states")
        randomized = any(c in RANDOMIZED_CHECKS for c in self.checks) or (
            isinstance(self.model, CentralSpinSpec) and self.model.couplings is None
        )
        if randomized and self.seed is None:
            raise ScenarioShapeError("seed", "a seed is required for randomized checks or drawn couplings")
        if "paz_zurek" in self.checks:
            sys = _system_factor(self.model)
            if any(f.factor != sys for f in self.families):
                raise ScenarioShapeError("families", "paz_zurek needs every family on the system factor")
        return self


class ScenarioShapeError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


NAMED_BASES = ("z", "x", "y", "identity")


def _system_factor(model_spec) -> int:
    return model_spec.system_factor if isinstance(model_spec, ExplicitSpec) else 0


def _guess_line(text: str, loc: tuple) -> int | None:
    for part in reversed(loc):
        if isinstance(part, str):
            m = re.search(rf'"{re.escape(part)}"\s*:', text)
            if m:
                return text.count("\n", 0, m.start()) + 1
    return None


def parse_scenario_text(text: str, source: str = "<scenario>") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{source}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from None
    try:
        return Scenario.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = tuple(err["loc"])
            path = ".".join(str(p) for p in loc if p not in CHECK_TAGS) or "<root>"
            msg = err["msg"]
            ctx_err = err.get("ctx", {}).get("error")
            if isinstance(ctx_err, ScenarioShapeError):
                path, msg = ctx_err.path, str(ctx_err).split(": ", 1)[1]
            line = _guess_line(text, loc)
            where = f"{source}:{line}" if line else source
            lines.append(f"{where}: field '{path}': {msg}")
        raise ScenarioError("\n".join(lines)) from None


# discriminator tags pydantic inserts into error locations
CHECK_TAGS = {"central_spin", "oscillator_bath", "two_slit", "recorder", "explicit",
              "pure", "matrix", "product", "system"}


def parse_scenario(path) -> Scenario:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"{p}: cannot read scenario: {exc.strerror}") from None
    return parse_scenario_text(text, str(p))


def dump_scenario(scenario: Scenario) -> str:
    return json.dumps(scenario.model_dump(mode="json", by_alias=True, exclude_none=True), indent=2) + "\n"


# --- building numerical objects ---------------------------------------------------------

def _cvec(v: Vector) -> np.ndarray:
    return np.array([complex(re, im) for re, im in v], dtype=complex)


def _cmat(m: Matrix) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in m], dtype=complex)


_S = 1 / np.sqrt(2.0)
NAMED_STATES = {
    "x+": np.array([_S, _S]),
    "x-": np.array([_S, -_S]),
    "y+": np.array([_S, 1j * _S]),
    "y-": np.array([_S, -1j * _S]),
}


def factor_state(spec: FactorState, dim: int, where: str) -> np.ndarray:
    if isinstance(spec, VectorState):
        v = _cvec(spec.vector)
    elif isinstance(spec, MatrixState):
        m = _cmat(spec.matrix)
        if m.shape != (dim, dim):
            raise ScenarioError(f"{where}: matrix must be {dim}x{dim}")
        return m
    elif spec == "mixed":
        return np.eye(dim, dtype=complex) / dim
    elif spec in NAMED_STATES:
        if dim != 2:
            raise ScenarioError(f"{where}: state {spec!r} needs a qubit factor")
        v = NAMED_STATES[spec].astype(complex)
    elif re.fullmatch(r"z\d+", spec) and int(spec[1:]) < dim:
        v = np.zeros(dim, dtype=complex)
        v[int(spec[1:])] = 1.0
    else:
        raise ScenarioError(f"{where}: unknown state {spec!r}")
    if v.shape[0] != dim:
        raise ScenarioError(f"{where}: vector has dimension {v.shape[0]}, expected {dim}")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ScenarioError(f"{where}: zero vector")
    v = v / norm
    return np.outer(v, np.conj(v))


def build_model(spec, seed: int | None) -> Model:
    if isinstance(spec, CentralSpinSpec):
        g = spec.couplings if spec.couplings is not None else draw_couplings(
            spec.bath_size, spec.coupling_range[0], spec.coupling_range[1], seed)
        return central_spin_dephasing(spec.bath_size, g)
    if isinstance(spec, OscillatorSpec):
        return truncated_oscillator_bath(spec.d_sys, spec.n_bath, spec.d_bath, spec.omega,
                                         spec.bath_omegas, spec.couplings, spec.bath_beta)
    if isinstance(spec, TwoSlitSpec):
        return third_party_two_slit(spec.theta)
    if isinstance(spec, RecorderSpec):
        return perfect_recorder(spec.n_env, spec.fresh)
    if isinstance(spec, ExplicitSpec):
        space = CompositeSpace(spec.factor_dims())
        return HamiltonianModel(_cmat(spec.hamiltonian), space, spec.system_factor, "explicit Hamiltonian")
    raise ScenarioError(f"unknown model {spec!r}")


def build_state(spec, model: Model) -> DensityOperator:
    space = model.space
    if isinstance(spec, PureInit):
        v = _cvec(spec.vector)
        if v.shape[0] != space.total_dim:
            raise ScenarioError(f"initial_state.vector: dimension {v.shape[0]}, expected {space.total_dim}")
        m = np.outer(v, np.conj(v)) / np.vdot(v, v).real
    elif isinstance(spec, MatrixInit):
        m = _cmat(spec.matrix)
    elif isinstance(spec, ProductInit):
        m = kron_all([factor_state(f, d, f"initial_state.factors.{k}")
                      for k, (f, d) in enumerate(zip(spec.factors, space.factor_dims))])
    else:
        s = model.system_factor
        rho_s = factor_state(spec.system, space.factor_dims[s], "initial_state.system")
        if model.env_state is None:
            raise ScenarioError("initial_state: this model has no default environment; use a product state")
        m = join_system_env(rho_s, model.env_state, space, s)
    try:
        return DensityOperator(m, space)
    except HistkitError as exc:
        raise ScenarioError(f"initial_state: {exc}") from None


def _named_basis(name: str, dim: int) -> np.ndarray:
    if name == "z":
        return np.eye(dim, dtype=complex)
    if name == "x":
        return np.array([[_S, _S], [_S, -_S]], dtype=complex)
    if name == "y":
        return np.array([[_S, _S], [1j * _S, -1j * _S]], dtype=complex)
    raise ScenarioError(f"unknown basis {name!r}")


_BASIS_LABELS = {"x": ["+", "-"], "y": ["+i", "-i"]}


def build_family(spec: FamilySpec, space: CompositeSpace, index: int) -> ProjectorFamily:
    dim = space.total_dim if spec.factor is None else space.factor_dims[spec.factor]
    try:
        if spec.basis == "identity":
            fam = ProjectorFamily([np.eye(dim, dtype=complex)], spec.labels or ["I"], spec.factor)
        elif spec.basis is not None:
            labels = spec.labels or _BASIS_LABELS.get(spec.basis, [str(i) for i in range(dim)])
            fam = family_from_basis(_named_basis(spec.basis, dim), labels=labels, factor=spec.factor)
        else:
            fam = family_from_basis([_cvec(v) for v in spec.vectors], labels=spec.labels, factor=spec.factor)
        if spec.partition is not None:
            fam = coarse_grain_family(fam, spec.partition)
    except HistkitError as exc:
        raise ScenarioError(f"families.{index}: {exc}") from None
    return fam


def _reference(scenario: Scenario, model: Model):
    ref = scenario.options.reference
    d_e = model.space.total_dim // model.space.factor_dims[model.system_factor]
    if ref.kind == "complete_ignorance":
        return reference_env_state("complete_ignorance", dim=d_e)
    if ref.env_hamiltonian is not None:
        h_env = _cmat(ref.env_hamiltonian)
    elif isinstance(scenario.model, OscillatorSpec):
        h_env = _bath_hamiltonian(scenario.model)
    else:
        raise ScenarioError("options.reference: thermal reference needs env_hamiltonian for this model")
    return reference_env_state("thermal", h_env=h_env, beta=ref.beta if ref.beta is not None else 1.0)


def _bath_hamiltonian(spec: OscillatorSpec) -> np.ndarray:
    space = CompositeSpace([spec.d_bath] * spec.n_bath)
    b = ladder(spec.d_bath)
    return sum(w * embed(dagger(b) @ b, space, k) for k, w in enumerate(spec.bath_omegas))


class Prepared:
    """Numerical objects built from a scenario, shared by all checks."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.model = build_model(scenario.model, scenario.seed)
        self.state = build_state(scenario.initial_state, self.model)
        self.schedule = Schedule(scenario.schedule)
        self.families = [build_family(f, self.model.space, i) for i, f in enumerate(scenario.families)]
        self.spec = HistorySetSpec(self.schedule, self.families, self.state)
        self.props = propagators(self.model, self.schedule)
        self.d = decoherence_matrix(self.state, self.spec, self.props)

    @property
    def grid(self) -> list[float]:
        if isinstance(self.model, PrescribedModel):
            return [float(k) for k in range(1, self.schedule.n_intervals + 1)]
        return [t - self.schedule.times[0] for t in self.schedule.times[1:]]


def _check_kolmogorov(p: Prepared) -> dict:
    tol = p.scenario.tolerances
    return kolmogorov_report(p.state, p.spec, p.props, tol.epsilon, tol.p_floor, d=p.d).to_dict()


def _check_decoherence(mode):
    def run(p: Prepared) -> dict:
        tol = p.scenario.tolerances
        return check_decoherence(p.d, mode, tol.epsilon, tol.p_floor).to_dict()
    return run


def _check_jss(p: Prepared) -> dict:
    tol = p.scenario.tolerances.jss
    ref = _reference(p.scenario, p.model)
    s = p.model.system_factor
    residuals, traces = [], []
    for i in range(p.props.n_intervals):
        w = p.props.cumulative[i]
        a = w @ np.asarray(p.state.matrix) @ dagger(w)
        u = p.props.step(i)
        residuals.append(jss_residual(u, a, ref, p.model.space, s))
        traces.append(abs(complex(np.trace(jss_K(u, a, ref, p.model.space, s)))))
    worst = max(residuals)
    return {
        "passed": worst <= tol and max(traces) <= tol,
        "tol": tol,
        "max_residual": worst,
        "max_abs_trace_K": max(traces),
        "intervals": len(residuals),
        "reference": ref.describe(),
    }


def _check_paz_zurek(p: Prepared) -> dict:
    tol = p.scenario.tolerances.paz_zurek
    ref = _reference(p.scenario, p.model)
    s = p.model.system_factor
    report = paz_zurek_test(p.spec, p.props, ref, tol)
    exact = subsystem_D_exact(p.state, p.spec, p.props)
    rho_s = partial_trace(p.state.matrix, p.model.space, [s])
    factored = subsystem_D_factored(rho_s, interval_maps(p.props, ref, p.model.space, s), p.families)
    gap = float(np.max(np.abs(exact.entries - factored.entries)))
    out = report.to_dict()
    out["passed"] = report.factorizable
    out["factored_vs_exact_max_gap"] = gap
    out["empirical_constant"] = gap / report.max_deviation if report.max_deviation > 0 else None
    return out


def _check_semigroup(p: Prepared) -> dict:
    tol = p.scenario.tolerances.semigroup
    ref = _reference(p.scenario, p.model)
    t = p.grid[0]
    dev = model_semigroup_deviation(p.model, t, ref)
    return {"passed": dev <= tol, "tol": tol, "t": t, "deviation": dev, "reference": ref.describe()}


def _check_pointer(p: Prepared) -> dict:
    d_s = p.model.space.factor_dims[p.model.system_factor]
    bases = {name: _named_basis(name, d_s) for name in p.scenario.options.pointer_bases}
    ranking = pointer_ranking(p.model, bases, [p.state], p.grid, p.scenario.tolerances.p_floor)
    out = ranking.to_dict()
    out["passed"] = not ranking.tied_at_top
    return out


def _check_redundancy(p: Prepared) -> dict:
    tol = p.scenario.tolerances.redundancy
    w = p.props.cumulative[-1]
    final = DensityOperator.unchecked(w @ np.asarray(p.state.matrix) @ dagger(w), p.model.space)
    n_env = p.model.space.n_factors - 1
    sizes = p.scenario.options.redundancy_fragment_sizes or list(range(1, n_env + 1))
    profile = redundancy_profile(final, p.model.system_factor, sizes,
                                 p.scenario.options.redundancy_samples, p.scenario.seed)
    out = profile.to_dict()
    out["passed"] = profile.monotone(tol)
    return out


CHECK_RUNNERS = {
    "kolmogorov": _check_kolmogorov,
    "weak": _check_decoherence("weak"),
    "medium": _check_decoherence("medium"),
    "jss": _check_jss,
    "paz_zurek": _check_paz_zurek,
    "semigroup": _check_semigroup,
    "pointer": _check_pointer,
    "redundancy": _check_redundancy,
}


class RunReport(dict):
    """Report for one scenario run; a plain ordered ``dict`` with helpers."""

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self["checks"].values())


def run(scenario: Scenario, threads: int = 1, prepared: Prepared | None = None) -> tuple[RunReport, Prepared]:
    """Run every requested check; output depends only on the scenario."""
    try:
        p = prepared or Prepared(scenario)
    except ScenarioError:
        raise
    except HistkitError as exc:
        raise HistkitError(f"scenario {scenario.name!r}: {exc}") from exc
    jobs = list(scenario.checks)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda c: CHECK_RUNNERS[c](p), jobs))
    else:
        results = [CHECK_RUNNERS[c](p) for c in jobs]
    summary: dict[str, Any] = {
        "histories": list(p.d.names),
        "probabilities": [float(x) for x in p.d.probabilities],
        "total_probability": float(p.d.probabilities.sum()),
        "max_normalized_offdiagonal": p.d.max_normalized_offdiagonal(scenario.tolerances.p_floor),
    }
    if isinstance(scenario.model, OscillatorSpec):
        w = p.props.cumulative[-1]
        final = w @ np.asarray(p.state.matrix) @ dagger(w)
        summary["truncation_leakage"] = truncation_leakage(final, p.model.space)
    report = RunReport(
        scenario=scenario.name,
        model=p.model.description,
        checks={c: r for c, r in zip(jobs, results)},
        summary=summary,
        provenance={
            "toolkit": "histkit",
            "version": __version__,
            "seed": scenario.seed,
            "tolerances": scenario.tolerances.model_dump(mode="json"),
        },
    )
    report["passed"] = report.passed
    return report, p


def set_path(data: Any, path: str, value: Any) -> Any:
    """Return a copy of nested JSON ``data`` with dotted ``path`` replaced by ``value``."""
    parts = path.split(".")
    if not parts or not parts[0]:
        raise ScenarioError("empty parameter path")
    root = json.loads(json.dumps(data))
    node = root
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(node, list):
            try:
                k = int(part)
                node[k]
            except (ValueError, IndexError):
                raise ScenarioError(f"sweep path {path!r}: bad list index {part!r}") from None
        elif isinstance(node, dict):
            k = part
            if not last and k not in node:
                raise ScenarioError(f"sweep path {path!r}: no field {part!r}")
        else:
            raise ScenarioError(f"sweep path {path!r}: cannot descend into {part!r}")
        if last:
            node[k] = value
        else:
            node = node[k]
    return root
