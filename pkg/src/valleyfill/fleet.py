"""
Vehicle charging dynamics, fleet scenarios and baseline load profiles.

Powers are in kW, energies in kWh, time in hours. A charging rate ``u`` in
``[0, 1]`` is the fraction of a vehicle's maximum power drawn during a step.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import DomainError, InfeasibleScenarioError
from .grid import FeederModel, NodalLoad, lindistflow_voltages

# slack for float round-off when a requirement sits exactly on a box corner
_FEASIBILITY_SLACK = 1e-9


@dataclass(frozen=True)
class EvSpec:
    id: int
    node: int
    efficiency_eta: float
    max_power_kw: float
    battery_kwh: float
    soc_initial: float
    soc_desired: float

    def __post_init__(self):
        if not 0 < self.efficiency_eta <= 1:
            raise DomainError(f"EV {self.id}: efficiency must lie in (0, 1]")
        if self.max_power_kw <= 0 or self.battery_kwh <= 0:
            raise DomainError(f"EV {self.id}: power and capacity must be positive")
        if not (0 <= self.soc_initial <= 1 and 0 <= self.soc_desired <= 1):
            raise DomainError(f"EV {self.id}: SOC values must lie in [0, 1]")
        if self.soc_desired < self.soc_initial:
            raise DomainError(f"EV {self.id}: desired SOC below initial SOC")


@dataclass(frozen=True)
class Horizon:
    start_label: str = "19:00"
    steps_K: int = 52
    dt_hours: float = 0.25

    def __post_init__(self):
        if self.steps_K < 1:
            raise DomainError("horizon needs at least one step")
        if self.dt_hours <= 0:
            raise DomainError("dt_hours must be positive")

    def start_hours(self) -> float:
        hh, mm = self.start_label.split(":")
        return int(hh) + int(mm) / 60.0

    def hours(self) -> np.ndarray:
        """Clock time (hours, not wrapped at midnight) at the start of each step."""
        return self.start_hours() + self.dt_hours * np.arange(self.steps_K)

    def labels(self) -> list[str]:
        out = []
        for t in self.hours():
            minutes = int(round(t * 60)) % (24 * 60)
            out.append(f"{minutes // 60:02d}:{minutes % 60:02d}")
        return out


def energy_state_initial(spec: EvSpec) -> float:
    """Energy still to be delivered at the start of the window (kWh)."""
    return spec.battery_kwh * (spec.soc_desired - spec.soc_initial)


def simulate_soc(spec: EvSpec, rates, horizon: Horizon) -> np.ndarray:
    """Roll the first-order SOC model forward; returns ``K + 1`` values."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (horizon.steps_K,):
        raise DomainError(f"expected {horizon.steps_K} rates, got shape {rates.shape}")
    if np.any(rates < 0) or np.any(rates > 1) or not np.all(np.isfinite(rates)):
        raise DomainError("charging rates must lie in [0, 1]")
    gain = spec.efficiency_eta * horizon.dt_hours * spec.max_power_kw / spec.battery_kwh
    soc = np.empty(horizon.steps_K + 1)
    soc[0] = spec.soc_initial
    soc[1:] = spec.soc_initial + gain * np.cumsum(rates)
    return soc


def local_slot_requirement(spec: EvSpec, horizon: Horizon) -> float:
    """Full-power-equivalent steps needed, ``E_r / (eta * dt * P_max)``.

    The local feasible set is ``{u in [0,1]^K : sum(u) = e}``.
    """
    e = energy_state_initial(spec) / (
        spec.efficiency_eta * horizon.dt_hours * spec.max_power_kw
    )
    K = horizon.steps_K
    if e > K * (1 + _FEASIBILITY_SLACK):
        raise InfeasibleScenarioError(
            f"EV {spec.id} needs {e:.4f} full-power steps but the window has {K}"
        )
    return min(e, float(K))


@dataclass(frozen=True)
class Baseline:
    """Non-EV load per node and step, ``(h, K)`` arrays in kW and kVAr."""

    p_kw: np.ndarray
    q_kvar: np.ndarray

    def __post_init__(self):
        p = np.array(self.p_kw, dtype=float)
        q = np.array(self.q_kvar, dtype=float)
        if p.ndim != 2 or p.shape != q.shape:
            raise DomainError("baseline arrays must share an (h, K) shape")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise DomainError("baseline contains non-finite entries")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p_kw", p)
        object.__setattr__(self, "q_kvar", q)

    @property
    def h(self):
        return self.p_kw.shape[0]

    @property
    def K(self):
        return self.p_kw.shape[1]

    @property
    def aggregate_kw(self) -> np.ndarray:
        """Aggregate baseline over all nodes, one value per step."""
        return self.p_kw.sum(axis=0)

    def scaled(self, factor: float) -> "Baseline":
        return Baseline(self.p_kw * factor, self.q_kvar * factor)

    def nodal_load(self, feeder: FeederModel) -> NodalLoad:
        return NodalLoad(feeder.kw_to_pu(self.p_kw), feeder.kw_to_pu(self.q_kvar))

    def voltages(self, feeder: FeederModel) -> np.ndarray:
        """LinDistFlow squared voltages under baseline load, ``(h, K)``."""
        return lindistflow_voltages(feeder, self.nodal_load(feeder))

    def voltage_drops(self, feeder: FeederModel) -> np.ndarray:
        """Squared-voltage drop ``2 R p + 2 X q`` caused by the baseline, ``(h, K)``."""
        return feeder.v0_squared - self.voltages(feeder)


def zero_baseline(h: int, K: int) -> Baseline:
    return Baseline(np.zeros((h, K)), np.zeros((h, K)))


def double_hump_shape(horizon: Horizon) -> np.ndarray:
    """Normalised evening-peak / overnight-valley / morning-rise profile.

    ``s(t) = 0.72 + 0.28 exp(-((t - 19) / 3)^2) + 0.25 exp(-((t - 32.5) / 2.5)^2)``
    with ``t`` in hours from the first midnight (08:00 next day is 32). Over the
    default 19:00-08:00 window the maximum is the first step and the minimum
    falls at 02:15.
    """
    t = horizon.hours()
    return (
        0.72
        + 0.28 * np.exp(-(((t - 19.0) / 3.0) ** 2))
        + 0.25 * np.exp(-(((t - 32.5) / 2.5) ** 2))
    )


def synthetic_baseline(
    horizon: Horizon,
    node_weights: Sequence[float],
    peak_kw: float = 1.0,
    power_factor: float = 0.95,
) -> Baseline:
    """Synthetic double-hump baseline split across nodes by ``node_weights``.

    The aggregate at the first step equals ``peak_kw * shape[0]``; reactive
    power follows from a constant lagging power factor.
    """
    w = np.asarray(node_weights, dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise DomainError("node weights must be nonnegative with a positive sum")
    if not 0 < power_factor <= 1:
        raise DomainError("power factor must lie in (0, 1]")
    shape = double_hump_shape(horizon)
    p = peak_kw * np.outer(w / w.sum(), shape)
    q = p * np.tan(np.arccos(power_factor))
    return Baseline(p, q)


def scale_to_voltage_floor(baseline: Baseline, feeder: FeederModel, floor_pu: float) -> Baseline:
    """Rescale a baseline so its lowest LinDistFlow voltage equals ``floor_pu``."""
    drops = baseline.voltage_drops(feeder)
    worst = drops.max()
    if worst <= 0:
        raise DomainError("baseline causes no voltage drop; cannot scale to a floor")
    target_drop = feeder.v0_squared * (1.0 - floor_pu**2)
    return baseline.scaled(target_drop / worst)


def load_baseline(path, scale: float = 1.0, steps_K: int | None = None) -> Baseline:
    """Read a baseline CSV and multiply every entry by ``scale``.

    Expected header: ``step,node_1_p,node_1_q,...,node_h_p,node_h_q`` with one
    row per time step, powers in kW / kVAr.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DomainError(f"{path}: empty baseline file")
    header = [c.strip() for c in rows[0]]
    if not header or header[0] != "step" or (len(header) - 1) % 2:
        raise DomainError(f"{path}: malformed header {header}")
    h = (len(header) - 1) // 2
    expected = ["step"] + [f"node_{k}_{c}" for k in range(1, h + 1) for c in ("p", "q")]
    if header != expected:
        raise DomainError(f"{path}: header must be {','.join(expected)}")
    body = [r for r in rows[1:] if any(c.strip() for c in r)]
    if steps_K is not None and len(body) != steps_K:
        raise DomainError(f"{path}: {len(body)} rows but horizon has {steps_K} steps")
    data = np.empty((len(body), 2 * h))
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise DomainError(f"{path}: row {i + 1} has {len(r)} cells")
        try:
            data[i] = [float(c) for c in r[1:]]
        except ValueError as exc:
            raise DomainError(f"{path}: non-numeric cell in row {i + 1}") from exc
    p = data[:, 0::2].T * scale
    q = data[:, 1::2].T * scale
    return Baseline(p, q)


def write_baseline_csv(baseline: Baseline, path) -> None:
    header = ["step"] + [f"node_{k}_{c}" for k in range(1, baseline.h + 1) for c in ("p", "q")]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t in range(baseline.K):
            row = [t]
            for k in range(baseline.h):
                row += [repr(float(baseline.p_kw[k, t])), repr(float(baseline.q_kvar[k, t]))]
            w.writerow(row)


@dataclass(frozen=True)
class ScenarioConfig:
    """Sampling recipe for a fleet.

    ``evs_per_node`` maps node id to vehicle count; the interval fields are
    ``(low, high)`` bounds of uniform distributions.
    """

    evs_per_node: Mapping[int, int]
    capacity_kwh: tuple = (18.0, 20.0)
    soc_initial: tuple = (0.3, 0.5)
    soc_desired: tuple = (0.7, 0.9)
    max_power_kw: float = 6.6
    efficiency: float = 1.0
    horizon: Horizon = field(default_factory=Horizon)
    max_retries: int = 100

    @classmethod
    def paper_default(cls) -> "ScenarioConfig":
        """70 chargers on every node of the 12-node feeder except nodes 1 and 6."""
        return cls({k: 70 for k in range(1, 13) if k not in (1, 6)})

    @classmethod
    def from_mapping(cls, cfg: Mapping) -> "ScenarioConfig":
        hz = cfg.get("horizon", {})
        horizon = Horizon(
            start_label=str(hz.get("start", "19:00")),
            steps_K=int(hz.get("steps", 52)),
            dt_hours=float(hz.get("dt_hours", 0.25)),
        )
        per_node = {int(k): int(v) for k, v in cfg.get("evs_per_node", {}).items()}
        return cls(
            evs_per_node=per_node,
            capacity_kwh=tuple(cfg.get("capacity_kwh", (18.0, 20.0))),
            soc_initial=tuple(cfg.get("soc_initial", (0.3, 0.5))),
            soc_desired=tuple(cfg.get("soc_desired", (0.7, 0.9))),
            max_power_kw=float(cfg.get("max_power_kw", 6.6)),
            efficiency=float(cfg.get("efficiency", 1.0)),
            horizon=horizon,
            max_retries=int(cfg.get("max_retries", 100)),
        )


@dataclass(frozen=True, eq=False)
class FleetScenario:
    evs: tuple
    horizon: Horizon
    energy_required_kwh: np.ndarray
    baseline: Baseline | None = None

    @property
    def n(self):
        return len(self.evs)

    def slot_requirements(self) -> np.ndarray:
        return np.array([local_slot_requirement(ev, self.horizon) for ev in self.evs])

    def with_baseline(self, baseline: Baseline) -> "FleetScenario":
        if baseline.K != self.horizon.steps_K:
            raise DomainError(
                f"baseline has {baseline.K} steps, horizon has {self.horizon.steps_K}"
            )
        return FleetScenario(self.evs, self.horizon, self.energy_required_kwh, baseline)


def scenario_from_evs(evs: Sequence[EvSpec], horizon: Horizon, baseline: Baseline | None = None):
    """Wrap explicit vehicles, checking each one can finish inside the window."""
    evs = tuple(sorted(evs, key=lambda ev: (ev.node, ev.id)))
    for ev in evs:
        local_slot_requirement(ev, horizon)
    energy = np.array([energy_state_initial(ev) for ev in evs])
    sc = FleetScenario(evs, horizon, energy)
    return sc.with_baseline(baseline) if baseline is not None else sc


def generate_scenario(config: ScenarioConfig, seed: int, baseline: Baseline | None = None):
    """Sample a fleet; a pure function of ``(config, seed)``.

    Vehicles are numbered in ascending node order. A draw that cannot meet its
    requirement inside the window is redrawn up to ``config.max_retries`` times.
    """
    rng = np.random.default_rng(seed)
    horizon = config.horizon
    evs = []
    for node in sorted(config.evs_per_node):
        for _ in range(config.evs_per_node[node]):
            for _attempt in range(config.max_retries + 1):
                cap = rng.uniform(*config.capacity_kwh)
                ini = rng.uniform(*config.soc_initial)
                des = rng.uniform(*config.soc_desired)
                spec = EvSpec(
                    id=len(evs),
                    node=int(node),
                    efficiency_eta=config.efficiency,
                    max_power_kw=config.max_power_kw,
                    battery_kwh=float(cap),
                    soc_initial=float(ini),
                    soc_desired=float(max(des, ini)),
                )
                try:
                    local_slot_requirement(spec, horizon)
                except InfeasibleScenarioError:
                    continue
                evs.append(spec)
                break
            else:
                raise InfeasibleScenarioError(
                    f"node {node}: no feasible vehicle after {config.max_retries} retries"
                )
    return scenario_from_evs(evs, horizon, baseline)
