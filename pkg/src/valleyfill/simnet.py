"""
Operator/charger message rounds over a simulated lossy channel.

Each round the operator broadcasts the aggregate load and the multipliers,
every charger rebuilds its own gradient block from that payload and sends
back only its new control sequence. The operator then takes its dual step on
the controls it held at the start of the round and stores whatever arrived.
A lost uplink leaves the previous control in place.

With a lossless channel the sequence of stored controls and multipliers is
bit-for-bit the in-process iteration of :func:`valleyfill.solvers.run_spds`.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError
from .qp import ChargingProblem, aggregate_load, constraint_values, objective
from .solvers.report import SolveReport
from .solvers.spds import SpdsConfig, dual_update, ev_gradient, primal_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UplinkMessage:
    """Charger to operator. Only the control sequence leaves the charger."""

    charger_id: int
    iteration: int
    control: tuple

    def to_json(self) -> str:
        return json.dumps(
            {"charger_id": self.charger_id, "iteration": self.iteration, "control": list(self.control)}
        )


@dataclass(frozen=True)
class DownlinkMessage:
    iteration: int
    aggregate: np.ndarray  # (K,)
    lam: np.ndarray  # (K, h)

    @property
    def size(self) -> int:
        """Numbers on the wire: ``K + hK``, whatever the fleet size."""
        return self.aggregate.size + self.lam.size


class ChannelModel:
    """Independent Bernoulli packet loss, seeded.

    Uplink and downlink draw from separate child streams so enabling one
    direction does not perturb the other's loss pattern.
    """

    def __init__(self, loss_probability=0.0, seed=0, uplink=True, downlink=False):
        if not 0.0 <= loss_probability <= 1.0:
            raise DomainError("loss_probability must lie in [0, 1]")
        self.loss_probability = float(loss_probability)
        self.seed = seed
        self.uplink = uplink
        self.downlink = downlink
        up, down = np.random.SeedSequence(seed).spawn(2)
        self._up = np.random.default_rng(up)
        self._down = np.random.default_rng(down)

    def _dropped(self, rng, n, enabled):
        if not enabled or self.loss_probability == 0.0:
            return np.zeros(n, dtype=bool)
        return rng.random(n) < self.loss_probability

    def uplink_dropped(self, n: int) -> np.ndarray:
        return self._dropped(self._up, n, self.uplink)

    def downlink_dropped(self, n: int) -> np.ndarray:
        return self._dropped(self._down, n, self.downlink)


class ChargerAgent:
    """Holds one vehicle's local data: slot requirement, rating, its column of D."""

    def __init__(self, ev_index, e_i, p_bar_i, d_col, rho, K):
        self.ev_index = int(ev_index)
        self.e_i = float(e_i)
        self.p_bar_i = float(p_bar_i)
        self.d_col = np.asarray(d_col, dtype=float).reshape(-1, 1)  # (h, 1)
        self.rho = float(rho)
        self.u = np.zeros(K)
        self.last_sent = -1

    def step(self, msg: DownlinkMessage, config: SpdsConfig) -> UplinkMessage:
        g = ev_gradient(
            np.array([self.p_bar_i]), msg.aggregate, self.u[None, :], self.rho, msg.lam, self.d_col
        )
        self.u = primal_update(
            self.u[None, :], g, np.array([self.e_i]), config.alpha, config.tau_u
        )[0]
        self.last_sent = msg.iteration
        return UplinkMessage(self.ev_index, msg.iteration, tuple(self.u.tolist()))


class OperatorAgent:
    """Keeps the last control received from every charger and the multipliers."""

    def __init__(self, problem: ChargingProblem, config: SpdsConfig):
        self.problem = problem
        self.config = config
        self.u = problem.zeros_primal()
        self.lam = problem.zeros_dual()

    def broadcast_payload(self, iteration: int) -> DownlinkMessage:
        A = aggregate_load(self.problem, self.u)
        return DownlinkMessage(iteration, A, self.lam.copy())

    def dual_step(self):
        c = self.config
        d = constraint_values(self.problem, self.u)
        self.lam = dual_update(self.lam, d, c.beta, c.tau_lambda, c.d_lambda)

    def receive(self, messages):
        seen = set()
        for m in messages:
            if m.charger_id in seen:
                raise DomainError(f"two uplinks from charger {m.charger_id} in one round")
            seen.add(m.charger_id)
            ctrl = np.asarray(m.control, dtype=float)
            if not np.all(np.isfinite(ctrl)):
                raise NumericError(f"non-finite control from charger {m.charger_id}", iteration=m.iteration)
            self.u[m.charger_id] = ctrl


@dataclass
class RoundStats:
    round: int
    eps: float
    uplink_lost: int
    downlink_lost: int
    received: int


@dataclass
class _Trace:
    path: object = None
    lines: list = field(default_factory=list)

    def log(self, rnd, direction, charger_id, dropped):
        if self.path is not None:
            self.lines.append(
                json.dumps(
                    {"round": rnd, "direction": direction, "charger_id": charger_id, "dropped": bool(dropped)}
                )
            )

    def flush(self):
        if self.path is not None:
            with open(self.path, "w") as fh:
                fh.write("\n".join(self.lines) + ("\n" if self.lines else ""))


def build_agents(problem: ChargingProblem, config: SpdsConfig):
    operator = OperatorAgent(problem, config)
    chargers = [
        ChargerAgent(i, problem.e[i], problem.p_bar[i], problem.d_matrix[:, i], problem.rho, problem.K)
        for i in range(problem.n)
    ]
    return operator, chargers


def run_round(operator, chargers, channel, config, round_index, trace=None) -> RoundStats:
    """One broadcast / local step / uplink / dual step cycle."""
    n = len(chargers)
    msg = operator.broadcast_payload(round_index)
    down_lost = channel.downlink_dropped(n)
    sent = []
    for agent, lost in zip(chargers, down_lost):
        if trace is not None:
            trace.log(round_index, "down", agent.ev_index, lost)
        if lost:
            continue  # charger sits this round out
        sent.append(agent.step(msg, config))
    up_lost = channel.uplink_dropped(len(sent))
    delivered = []
    for m, lost in zip(sent, up_lost):
        if trace is not None:
            trace.log(round_index, "up", m.charger_id, lost)
        if not lost:
            delivered.append(m)
    before = operator.u.copy()
    operator.dual_step()
    operator.receive(delivered)
    eps = float(np.linalg.norm(operator.u - before))
    return RoundStats(round_index, eps, int(up_lost.sum()), int(down_lost.sum()), len(delivered))


def run_simnet(
    problem: ChargingProblem,
    config: SpdsConfig,
    channel: ChannelModel | None = None,
    trace_path=None,
    stall_rounds: int = 5,
) -> SolveReport:
    """Drive message rounds until the operator-side change drops below ``tol``.

    Convergence is only declared on a round where every uplink arrived. If
    ``stall_rounds`` consecutive rounds deliver nothing, the run stops with
    termination ``"stalled"``.
    """
    channel = channel if channel is not None else ChannelModel()
    operator, chargers = build_agents(problem, config)
    trace = _Trace(trace_path)
    report = SolveReport("simnet")
    report.termination = "max_iters"
    lost_up = lost_down = 0
    silent = 0
    per_round_loss = []
    for it in range(1, config.max_iters + 1):
        t0 = time.perf_counter()
        stats = run_round(operator, chargers, channel, config, it, trace)
        elapsed = time.perf_counter() - t0
        lost_up += stats.uplink_lost
        lost_down += stats.downlink_lost
        per_round_loss.append(stats.uplink_lost + stats.downlink_lost)
        U, lam = operator.u, operator.lam
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(lam))):
            raise NumericError(f"non-finite iterate at iteration {it}", iteration=it)
        d = constraint_values(problem, U)
        report.record(
            objective(problem, U),
            max(0.0, float(d.max())),
            stats.eps,
            float(np.linalg.norm(lam)),
            elapsed,
            aggregate=aggregate_load(problem, U),
            lam=lam,
        )
        silent = silent + 1 if stats.received == 0 else 0
        if silent >= stall_rounds:
            report.termination = "stalled"
            log.warning("simnet: no uplink delivered for %d rounds, stopping", silent)
            break
        if stats.eps <= config.tol and stats.received == len(chargers):
            report.termination = "converged"
            break
    trace.flush()
    report.u, report.lam = operator.u.copy(), operator.lam.copy()
    report.extra.update(
        uplink_lost=lost_up,
        downlink_lost=lost_down,
        loss_per_round=per_round_loss,
        loss_probability=channel.loss_probability,
    )
    return report
