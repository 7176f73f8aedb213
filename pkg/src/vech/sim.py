"""Run configuration, the adaptive time loop, monitors, output and resume."""

from __future__ import annotations

import configparser
import csv
import io
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import matfun
from . import model as mdl
from . import vtkio
from .assembly import divergence_residual
from .errors import InvalidConfigError, SolverFailure
from .fespace import spaces
from .initial import InitialSpec, initial_state
from .mesh import RefinementSpec, interface_band, refine_to_indicator, sign_change, transfer
from .solver import SolverConfig, StepMode, advance_with_retry
from .state import State

log = logging.getLogger(__name__)

MONITOR_COLUMNS = ("t", "F_total", "F_psi", "F_grad", "F_sigma", "F_chem", "F_kin", "F_elastic",
                   "minEigB", "maxTel", "mass", "divres")
STEP_COLUMNS = ("step", "t", "dt", "substeps", "num_vertices", "newton_iterations", "newton_linear",
                "nutrient_iterations", "saddle_iterations", "tensor_iterations", "ch_residual",
                "nutrient_residual", "saddle_residual", "tensor_residual", "dt_star_margin", "cfl_advisory",
                "clipped", "wall_time")


@dataclass(frozen=True)
class OutputSpec:
    """Output cadences are in steps; ``vtk``/``checkpoints`` switch the files off."""

    every: int = 50
    checkpoint_every: int = 100
    vtk: bool = True
    checkpoints: bool = True

    def __post_init__(self):
        if self.every < 1 or self.checkpoint_every < 1:
            raise InvalidConfigError("output cadences must be at least 1")


SECTIONS = {
    "model": mdl.ModelParams,
    "mesh": RefinementSpec,
    "solver": SolverConfig,
    "initial": InitialSpec,
    "mode": StepMode,
    "output": OutputSpec,
}


@dataclass(frozen=True)
class RunConfig:
    model: mdl.ModelParams = field(default_factory=mdl.ModelParams)
    mesh: RefinementSpec = field(default_factory=lambda: RefinementSpec(32, 1024))
    solver: SolverConfig = field(default_factory=SolverConfig)
    initial: InitialSpec = field(default_factory=InitialSpec)
    mode: StepMode = field(default_factory=StepMode)
    output: OutputSpec = field(default_factory=OutputSpec)
    tag: str = "run"
    clip_B: float | None = None
    enforce_cfl: float | None = None

    def __post_init__(self):
        if not self.model.dt > 0:
            raise InvalidConfigError("dt must be positive")
        self.num_steps  # validates t_end

    @property
    def num_steps(self) -> int:
        n = round(self.model.t_end / self.model.dt)
        if n < 0 or abs(n * self.model.dt - self.model.t_end) > 1e-12 * max(1.0, self.model.t_end):
            raise InvalidConfigError(f"t_end = {self.model.t_end!r} is not a multiple of dt = {self.model.dt!r}")
        return int(n)

    def to_dict(self) -> dict:
        out = {name: asdict(getattr(self, name)) for name in SECTIONS}
        out["run"] = {"tag": self.tag, "clip_B": self.clip_B, "enforce_cfl": self.enforce_cfl}
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        parts = {}
        for name, typ in SECTIONS.items():
            values = dict(d.get(name, {}))
            for k, v in values.items():
                if isinstance(v, list):
                    values[k] = tuple(v)
            parts[name] = typ(**values)
        return cls(**parts, **d.get("run", {}))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """``{"section.key" | "key": text_or_value}``; bare keys must be unambiguous."""
        d = self.to_dict()
        for key, value in overrides.items():
            section, name = _resolve_key(key)
            typ = _field_types(section).get(name)
            d[section][name] = _coerce(value, typ) if isinstance(value, str) else value
        return RunConfig.from_dict(d)


def _field_types(section: str) -> dict:
    if section == "run":
        return {"tag": "str", "clip_B": "float | None", "enforce_cfl": "float | None"}
    return {f.name: f.type if isinstance(f.type, str) else f.type.__name__ for f in fields(SECTIONS[section])}


def _resolve_key(key: str):
    if "." in key:
        section, name = key.split(".", 1)
        if section not in SECTIONS and section != "run":
            raise InvalidConfigError(f"unknown section {section!r} in {key!r}")
        if name not in _field_types(section):
            raise InvalidConfigError(f"unknown key {key!r}")
        return section, name
    hits = [s for s in (*SECTIONS, "run") if key in _field_types(s)]
    if len(hits) != 1:
        raise InvalidConfigError(f"key {key!r} is {'ambiguous' if hits else 'unknown'}; use section.key")
    return hits[0], key


def _coerce(text: str, typ: str | None):
    text = text.strip()
    typ = typ or "str"
    if "None" in typ and text.lower() in ("none", ""):
        return None
    base = typ.replace("| None", "").strip()
    try:
        if base == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base == "int":
            return int(text)
        if base == "float":
            return float(text)
        if base == "tuple":
            return tuple(float(x) for x in text.strip("()[] ").split(",") if x.strip())
    except ValueError as exc:
        raise InvalidConfigError(f"cannot read {text!r} as {base}") from exc
    return text


# -- config files -------------------------------------------------------------------


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise InvalidConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def load_configs(path, profile: str | None = None, overrides: dict | None = None) -> list[RunConfig]:
    """Read an experiment file and expand its ``[sweep]`` section.

    Sections ``model``, ``mesh``, ``solver``, ``initial``, ``mode``,
    ``output`` and ``run`` hold defaults; ``[profile:<name>]`` holds
    ``section.key`` overrides; command-line ``overrides`` are applied last.
    ``[sweep]`` lists comma-separated values per ``section.key``; with
    ``mode = zip`` the lists are paired, otherwise their product is taken.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if not cp.read(path):
        raise InvalidConfigError(f"cannot read config {path}")
    tag = cp.get("experiment", "tag", fallback=Path(path).stem)
    base = RunConfig(tag=tag)
    flat = {}
    for section in (*SECTIONS, "run"):
        if cp.has_section(section):
            for k, v in cp.items(section):
                flat[f"{section}.{k}"] = v
    if profile:
        name = f"profile:{profile}"
        if not cp.has_section(name):
            raise InvalidConfigError(f"config has no profile {profile!r}")
        for k, v in cp.items(name):
            flat[_qualify(k)] = v
    sweep = {}
    if cp.has_section("sweep"):
        for k, v in cp.items("sweep"):
            if k != "mode":
                sweep[_qualify(k)] = [x.strip() for x in v.split(",")]
        if profile and cp.has_section(f"sweep:{profile}"):
            for k, v in cp.items(f"sweep:{profile}"):
                if k != "mode":
                    sweep[_qualify(k)] = [x.strip() for x in v.split(",")]
    for k, v in (overrides or {}).items():
        key = _qualify(k)
        sweep.pop(key, None)
        flat[key] = v
    cfg = base.with_overrides(flat)
    if not sweep:
        return [cfg]
    keys = list(sweep)
    zipped = cp.get("sweep", "mode", fallback="product").strip() == "zip"
    if zipped and len({len(v) for v in sweep.values()}) != 1:
        raise InvalidConfigError("zipped sweep lists must have equal length")
    combos = zip(*sweep.values()) if zipped else itertools.product(*sweep.values())
    out = []
    for combo in combos:
        label = "_".join(f"{k.split('.', 1)[1]}={v}" for k, v in zip(keys, combo))
        c = cfg.with_overrides(dict(zip(keys, combo)))
        out.append(replace(c, tag=f"{cfg.tag}-{label}"))
    return out


def _qualify(key: str) -> str:
    return "%s.%s" % _resolve_key(key)


# -- monitors ---------------------------------------------------------------------------


def tumour_mass(state: State) -> float:
    return float(np.sum(spaces(state.mesh).lumped * 0.5 * (1.0 + state.phi)))


def elastic_stress_magnitude(state: State, p: mdl.ModelParams) -> np.ndarray:
    """``|T_el| = κ(φ) |B - I|`` (Frobenius) per vertex."""
    return mdl.kappa_of(state.phi, p) * matfun.frobenius(state.B - matfun.IDENTITY)


def monitor_record(state: State, p: mdl.ModelParams, energy: mdl.Energy | None = None) -> dict:
    e = energy or mdl.discrete_energy(state.mesh, state.phi, state.sigma, state.v, state.B, p)
    rec = {"t": state.t, **e.as_dict()}
    rec.update(
        minEigB=float(np.min(matfun.min_eigenvalue(state.B))),
        maxTel=float(np.max(elastic_stress_magnitude(state, p))),
        mass=tumour_mass(state),
        divres=divergence_residual(state.mesh, state.v),
    )
    return {k: rec[k] for k in MONITOR_COLUMNS}


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def read_monitors(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# -- adaptation -------------------------------------------------------------------------


def adapt(state: State, spec: RefinementSpec) -> State:
    """Refine to the interface band of the current ``φ``, coarsen elsewhere
    (hysteresis lives in the mesh) and carry every field over."""
    mesh = state.mesh
    marked = np.union1d(interface_band(mesh, state.phi, spec.band_delta), sign_change(mesh, state.phi))
    new = refine_to_indicator(mesh, marked, spec)
    if new is mesh:
        return state
    n2_old = spaces(mesh).num_p2
    (phi, mu, sigma, pr, B), (v,) = transfer(mesh, new, (state.phi, state.mu, state.sigma, state.pressure, state.B),
                                            (state.v.reshape(2, n2_old).T,))
    min_eig = float(np.min(matfun.min_eigenvalue(B)))
    if min_eig < -1e-12:
        log.warning("transferred B lost definiteness (%.3e); projecting", min_eig)
        B = matfun.spectral_apply(lambda s: np.maximum(s, 0.0), B)
    return State(new, phi, mu, sigma, pr, np.ascontiguousarray(v.T).ravel(), B, t=state.t, step=state.step)


def clip_tensor(B, delta: float):
    return matfun.spectral_apply(lambda s: matfun.beta_delta(s, delta), B)


# -- run loop ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: RunConfig
    state: State
    monitors: list
    steps: list
    output_dir: Path | None
    checkpoints: list
    validation: mdl.ValidationReport
    status: str = "completed"


class RunAborted(SolverFailure):
    def __init__(self, message, checkpoint=None, **kw):
        super().__init__(message, **kw)
        self.checkpoint = checkpoint


def validate(cfg: RunConfig, h_min: float | None = None) -> mdl.ValidationReport:
    if h_min is None:
        # fine-level right-isosceles legs: side / fine_n
        h_min = cfg.model.side / cfg.mesh.fine_n
    B0 = np.asarray(cfg.initial.B0, float)
    p = cfg.model
    if cfg.enforce_cfl is not None:
        p = p.with_updates(cfl_cstar=cfg.enforce_cfl)
    return mdl.validate_params(p, h_min=h_min, b0_min_eig=float(matfun.min_eigenvalue(B0)),
                               enforce_cfl=cfg.enforce_cfl is not None)


def run(cfg: RunConfig, output_dir=None, *, state: State | None = None, monitors=None, steps=None,
        stop_step: int | None = None) -> RunResult:
    """Execute (or continue, when ``state`` is given) a run to ``t_end``.

    ``stop_step`` ends the loop early (used for partial runs and tests).
    Output goes to ``output_dir`` if set: ``monitors.csv``, ``steps.csv``,
    VTK snapshots and checkpoints.
    """
    p = cfg.model
    report = validate(cfg)
    for line in report.text().splitlines():
        log.info("validate: %s", line)
    if not report.ok:
        raise InvalidConfigError("configuration rejected:\n" + report.text())
    if p.phase_dependent_kappa:
        log.info("phase-dependent kappa: the constant-kappa assumption is relaxed")
    out = Path(output_dir) if output_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    if state is None:
        state = initial_state(p, cfg.mesh, cfg.initial, cfg.solver)
        monitors = [monitor_record(state, p)]
        steps = []
        if out is not None and cfg.output.vtk:
            vtkio.write_state_vtk(out / "fields_000000.vtk", state, mdl.kappa_of(state.phi, p))
    monitors = list(monitors or [])
    steps = list(steps or [])
    dt_margin = report.constants.dt_star - p.dt
    cfl_ok = p.dt <= mdl.cfl_threshold(p, cfg.model.side / cfg.mesh.fine_n, cfg.enforce_cfl)
    checkpoints = []
    last_ckpt = None
    total = cfg.num_steps if stop_step is None else min(stop_step, cfg.num_steps)

    def flush():
        if out is None:
            return
        (out / "monitors.csv").write_text(_csv_text(MONITOR_COLUMNS, monitors))
        (out / "steps.csv").write_text(_csv_text(STEP_COLUMNS, steps))

    while state.step < total:
        state = adapt(state, cfg.mesh)
        step_index = state.step
        try:
            new, reps = advance_with_retry(state, p, cfg.solver, cfg.mode)
        except SolverFailure as exc:
            flush()
            raise RunAborted(f"step {step_index + 1} failed: {exc}; last checkpoint: {last_ckpt}",
                             checkpoint=last_ckpt, residual=exc.residual, history=exc.history) from exc
        # exact time stamps: no accumulation drift
        new.step = step_index + 1
        new.t = new.step * p.dt
        clipped = False
        if cfg.clip_B is not None:
            eig = float(np.min(matfun.min_eigenvalue(new.B)))
            if eig < cfg.clip_B:
                log.warning("step %d: clipping B eigenvalues below %g (min was %.3e)", new.step, cfg.clip_B, eig)
                new.B = clip_tensor(new.B, cfg.clip_B)
                clipped = True
        state = new
        monitors.append(monitor_record(state, p))
        last = reps[-1]
        steps.append({
            "step": state.step, "t": state.t, "dt": p.dt, "substeps": len(reps),
            "num_vertices": state.mesh.num_vertices,
            "newton_iterations": sum(len(r.newton) - 1 for r in reps),
            "newton_linear": sum(sum(r.newton_linear) for r in reps),
            "nutrient_iterations": sum(r.nutrient_iterations for r in reps),
            "saddle_iterations": sum(r.saddle_iterations for r in reps),
            "tensor_iterations": sum(r.tensor_iterations for r in reps),
            "ch_residual": float(last.residuals.get("ch", 0.0)),
            "nutrient_residual": float(last.residuals.get("nutrient", 0.0)),
            "saddle_residual": float(last.residuals.get("saddle", 0.0)),
            "tensor_residual": float(last.residuals.get("tensor", 0.0)),
            "dt_star_margin": float(dt_margin),
            "cfl_advisory": "pass" if cfl_ok else "advisory-fail",
            "clipped": int(clipped),
            "wall_time": sum(r.wall_time for r in reps),
        })
        rec = monitors[-1]
        log.info("step %d t=%.6g F=%.10g minEigB=%.3e maxTel=%.3e mass=%.6g nv=%d (%.2fs)", state.step, state.t,
                 rec["F_total"], rec["minEigB"], rec["maxTel"], rec["mass"], state.mesh.num_vertices,
                 steps[-1]["wall_time"])
        if out is not None:
            if cfg.output.vtk and (state.step % cfg.output.every == 0 or state.step == total):
                vtkio.write_state_vtk(out / f"fields_{state.step:06d}.vtk", state, mdl.kappa_of(state.phi, p))
            if cfg.output.checkpoints and (state.step % cfg.output.checkpoint_every == 0 or state.step == total):
                last_ckpt = out / f"checkpoint_{state.step:06d}.vech"
                vtkio.write_checkpoint(last_ckpt, state, _checkpoint_extra(cfg, monitors, steps))
                checkpoints.append(last_ckpt)
            if state.step % cfg.output.every == 0:
                flush()
    flush()
    return RunResult(cfg, state, monitors, steps, out, checkpoints, report)


def _checkpoint_extra(cfg: RunConfig, monitors, steps) -> dict:
    return {
        "config": cfg.to_dict(),
        "monitors": _csv_text(MONITOR_COLUMNS, monitors),
        "steps": _csv_text(STEP_COLUMNS, steps),
    }


def _rows(text: str) -> list[dict]:
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append({k: _parse_cell(v) for k, v in row.items()})
    return rows


def _parse_cell(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def resume(checkpoint, output_dir=None, overrides: dict | None = None, allow_dt_change: bool = False,
           stop_step: int | None = None) -> RunResult:
    """Continue from a checkpoint. The stored configuration is reused with
    ``overrides`` applied; changing ``dt`` needs ``allow_dt_change``."""
    state, header = vtkio.read_checkpoint(checkpoint)
    extra = header["extra"]
    cfg = RunConfig.from_dict(extra["config"])
    new_cfg = cfg.with_overrides(overrides or {})
    if new_cfg.model.dt != cfg.model.dt and not allow_dt_change:
        raise InvalidConfigError(f"checkpoint was written with dt = {cfg.model.dt!r}; refusing dt = "
                                 f"{new_cfg.model.dt!r} without allow_dt_change")
    if new_cfg.model.dt != cfg.model.dt:
        log.warning("time step changed from %g to %g on resume", cfg.model.dt, new_cfg.model.dt)
        # keep the step counter consistent with the new step size
        state.step = int(round(state.t / new_cfg.model.dt))
    monitors = [{k: float(v) for k, v in r.items()} for r in _rows(extra["monitors"])]
    steps = _rows(extra["steps"])
    out = output_dir if output_dir is not None else Path(checkpoint).parent
    return run(new_cfg, out, state=state, monitors=monitors, steps=steps, stop_step=stop_step)

