"""Per-iteration solver trajectories and their serialisation."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SolveReport:
    solver: str
    objective: list = field(default_factory=list)
    max_violation: list = field(default_factory=list)
    eps: list = field(default_factory=list)
    dual_norm: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    aggregate_history: list = field(default_factory=list)  # (K,) per iteration
    lambda_history: list = field(default_factory=list)  # (K, h) per iteration
    u: np.ndarray | None = None
    lam: np.ndarray | None = None
    termination: str = ""
    kkt: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.objective)

    @property
    def final_objective(self) -> float:
        return self.objective[-1]

    def record(self, objective, violation, eps, dual_norm, seconds, aggregate=None, lam=None):
        self.objective.append(float(objective))
        self.max_violation.append(float(violation))
        self.eps.append(float(eps))
        self.dual_norm.append(float(dual_norm))
        self.seconds.append(float(seconds))
        if aggregate is not None:
            self.aggregate_history.append(np.array(aggregate, dtype=float))
        if lam is not None:
            self.lambda_history.append(np.array(lam, dtype=float))

    def summary(self) -> dict:
        """JSON-friendly dict without the bulky histories."""
        out = {
            "solver": self.solver,
            "iterations": self.iterations,
            "termination": self.termination,
            "objective": self.objective,
            "max_violation": self.max_violation,
            "eps": self.eps,
            "dual_norm": self.dual_norm,
            "seconds": self.seconds,
            "kkt": self.kkt,
        }
        for k, v in self.extra.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.summary(), **kw)

    def write_iterations_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "objective", "max_violation", "eps", "dual_norm"])
            for i in range(self.iterations):
                w.writerow(
                    [
                        i + 1,
                        repr(self.objective[i]),
                        repr(self.max_violation[i]),
                        repr(self.eps[i]),
                        repr(self.dual_norm[i]),
                    ]
                )
