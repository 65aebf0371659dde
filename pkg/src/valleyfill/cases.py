"""
Case files: one TOML/JSON document holding a feeder, a fleet, a baseline
and the problem/solver settings.

Sections beyond the feeder ones read by :func:`valleyfill.grid.feeder_from_config`::

    [problem]   rho, nu_lower
    [spds]      alpha, beta, tau_u, tau_lambda, d_lambda, max_iters, tol,
                rpds_dual_reg   (or preset = "study")
    [scenario]  sampling recipe (see ScenarioConfig.from_mapping) plus seed,
                or explicit [[scenario.ev]] tables
    [baseline]  synthetic = true with voltage_floor / node_weights /
                power_factor, or p / q arrays (h x K, kW), or csv = "file"

Two cases ship with the package: ``tiny`` and ``paper`` (the 12-node feeder
with 700 vehicles).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DomainError
from .fleet import (
    Baseline,
    EvSpec,
    FleetScenario,
    Horizon,
    ScenarioConfig,
    generate_scenario,
    load_baseline,
    scale_to_voltage_floor,
    scenario_from_evs,
    synthetic_baseline,
)
from .grid import (
    FeederModel,
    NodalLoad,
    distflow_voltages,
    feeder_from_config,
    lindistflow_voltages,
    load_feeder,
    read_structured,
)
from .qp import ChargingProblem, assemble_problem
from .solvers.spds import SpdsConfig, study_config

log = logging.getLogger(__name__)

BUILTIN = {"tiny": "tiny.toml", "paper": "ieee13-mod.toml"}


@dataclass(frozen=True)
class Case:
    name: str
    feeder: FeederModel
    scenario: FleetScenario
    rho: float
    nu_lower: float
    spds: SpdsConfig
    seed: int | None = None

    def problem(self, on_violation: str = "error", **overrides) -> ChargingProblem:
        kw = dict(rho=self.rho, nu_lower=self.nu_lower, on_violation=on_violation)
        kw.update(overrides)
        return assemble_problem(self.feeder, self.scenario, **kw)

    def nodal_load_kw(self, problem: ChargingProblem, U) -> tuple[np.ndarray, np.ndarray]:
        """Baseline plus charging load per node and step, ``(h, K)`` kW / kVAr."""
        base = self.scenario.baseline
        p = np.zeros((problem.h, problem.K)) if base is None else np.array(base.p_kw)
        q = np.zeros_like(p) if base is None else np.array(base.q_kvar)
        np.add.at(p, problem.node_of_ev - 1, problem.p_bar[:, None] * np.asarray(U))
        return p, q

    def schedule_voltages(self, problem: ChargingProblem, U) -> tuple[np.ndarray, np.ndarray]:
        """Squared voltages ``(h, K)`` under the schedule: linearised, then full power flow."""
        p, q = self.nodal_load_kw(problem, U)
        load = NodalLoad(self.feeder.kw_to_pu(p), self.feeder.kw_to_pu(q))
        return lindistflow_voltages(self.feeder, load), distflow_voltages(self.feeder, load)


def builtin_path(name: str) -> Path:
    return Path(str(resources.files("valleyfill") / "feeders" / BUILTIN[name]))


def resolve_case_path(spec: str) -> Path:
    if spec in BUILTIN:
        return builtin_path(spec)
    p = Path(spec)
    if not p.exists():
        raise FileNotFoundError(f"case file not found: {spec}")
    return p


def _horizon(cfg) -> Horizon:
    hz = cfg.get("horizon", {})
    return Horizon(
        start_label=str(hz.get("start", "19:00")),
        steps_K=int(hz.get("steps", 52)),
        dt_hours=float(hz.get("dt_hours", 0.25)),
    )


def _explicit_evs(entries) -> list[EvSpec]:
    return [
        EvSpec(
            id=int(e["id"]),
            node=int(e["node"]),
            efficiency_eta=float(e.get("efficiency", 1.0)),
            max_power_kw=float(e["max_power_kw"]),
            battery_kwh=float(e["battery_kwh"]),
            soc_initial=float(e["soc_initial"]),
            soc_desired=float(e["soc_desired"]),
        )
        for e in entries
    ]


def _baseline(cfg, feeder: FeederModel, horizon: Horizon, base_dir: Path, scale: float) -> Baseline:
    if "csv" in cfg:
        path = Path(cfg["csv"])
        path = path if path.is_absolute() else base_dir / path
        return load_baseline(path, scale * float(cfg.get("scale", 1.0)), horizon.steps_K)
    if "p" in cfg:
        p = np.asarray(cfg["p"], dtype=float)
        q = np.asarray(cfg.get("q", np.zeros_like(p)), dtype=float)
        return Baseline(p * scale, q * scale)
    if cfg.get("synthetic", False):
        weights = cfg.get("node_weights", [1.0] * feeder.h)
        b = synthetic_baseline(horizon, weights, 1.0, float(cfg.get("power_factor", 0.95)))
        if "voltage_floor" in cfg:
            b = scale_to_voltage_floor(b, feeder, float(cfg["voltage_floor"]))
        elif "peak_kw" in cfg:
            b = b.scaled(float(cfg["peak_kw"]))
        return b.scaled(scale)
    raise DomainError("baseline section needs one of csv, p or synthetic = true")


def spds_from_config(cfg) -> SpdsConfig:
    cfg = dict(cfg)
    preset = cfg.pop("preset", None)
    if preset == "study":
        return study_config(**cfg)
    if preset is not None:
        raise DomainError(f"unknown spds preset {preset!r}")
    return SpdsConfig(**{k: (int(v) if k == "max_iters" else float(v)) for k, v in cfg.items()})


def case_from_config(
    cfg: dict,
    *,
    name: str = "",
    base_dir: Path = Path("."),
    seed: int | None = None,
    feeder: FeederModel | None = None,
    baseline: Baseline | None = None,
    baseline_scale: float = 1.0,
) -> Case:
    feeder = feeder if feeder is not None else feeder_from_config(cfg, name=name)
    sc_cfg = cfg.get("scenario", {})
    horizon = _horizon(sc_cfg)
    if "ev" in sc_cfg:
        evs = _explicit_evs(sc_cfg["ev"])
        scenario = scenario_from_evs(evs, horizon)
    else:
        seed = int(sc_cfg.get("seed", 0)) if seed is None else int(seed)
        scenario = generate_scenario(ScenarioConfig.from_mapping(sc_cfg), seed)
    if baseline is None:
        if "baseline" in cfg:
            baseline = _baseline(cfg["baseline"], feeder, horizon, base_dir, baseline_scale)
    if baseline is not None:
        scenario = scenario.with_baseline(baseline)
    prob = cfg.get("problem", {})
    spds = spds_from_config(cfg.get("spds", {"preset": "study"}))
    return Case(
        name=name or str(cfg.get("name", "")),
        feeder=feeder,
        scenario=scenario,
        rho=float(prob.get("rho", 1e-3)),
        nu_lower=float(prob.get("nu_lower", 0.954)),
        spds=spds,
        seed=seed,
    )


def load_case(
    spec: str,
    *,
    seed: int | None = None,
    feeder_path=None,
    baseline_path=None,
    baseline_scale: float = 1.0,
) -> Case:
    """Load a built-in case by name or a case file by path.

    ``feeder_path`` swaps in the lines of another feeder file; ``baseline_path``
    replaces the baseline with a CSV, multiplied by ``baseline_scale``.
    """
    path = resolve_case_path(spec)
    cfg = read_structured(path)
    feeder = load_feeder(feeder_path) if feeder_path is not None else None
    horizon = _horizon(cfg.get("scenario", {}))
    baseline = (
        load_baseline(baseline_path, baseline_scale, horizon.steps_K)
        if baseline_path is not None
        else None
    )
    name = spec if spec in BUILTIN else path.stem
    return case_from_config(
        cfg,
        name=name,
        base_dir=path.parent,
        seed=seed,
        feeder=feeder,
        baseline=baseline,
        baseline_scale=baseline_scale,
    )
