"""
Radial feeder model and nodal voltage calculations.

Squared voltage magnitudes are handled in per-unit squared throughout. The
linear model drops line losses, so for nonnegative loads it upper-bounds the
full branch-flow solution computed by :func:`distflow_voltages`.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError, StructuralError

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass(frozen=True)
class LineSegment:
    """One branch of the feeder, impedances in per-unit."""

    from_node: int
    to_node: int
    resistance: float
    reactance: float

    def __post_init__(self):
        if self.resistance < 0 or self.reactance < 0:
            raise StructuralError(
                f"line ({self.from_node}, {self.to_node}) has negative impedance"
            )
        if self.from_node == self.to_node:
            raise StructuralError(f"self loop at node {self.from_node}")


@dataclass(frozen=True, eq=False)
class FeederModel:
    """Radial feeder with path-intersection resistance/reactance matrices.

    Node ``0`` is the feeder head and is not part of the ``h`` modelled nodes;
    row/column ``k`` of the matrices refers to node ``k + 1``.
    """

    node_count_h: int
    lines: tuple
    v0_squared: float
    r_matrix: np.ndarray
    x_matrix: np.ndarray
    parent: np.ndarray  # parent[k] is the parent node id of node k+1
    line_r: np.ndarray  # impedance of the segment feeding node k+1
    line_x: np.ndarray
    order: tuple  # node ids in breadth-first order from the root
    base_kva: float = 1.0
    base_kv: float = 1.0
    name: str = ""
    node_labels: tuple = field(default=())

    @property
    def h(self):
        return self.node_count_h

    def kw_to_pu(self, power_kw):
        """Convert kW (or kVAr) to per-unit on the feeder base."""
        return np.asarray(power_kw, dtype=float) / self.base_kva

    def magnitude(self, v_squared):
        """Voltage magnitude relative to the feeder head, in p.u."""
        return np.sqrt(np.asarray(v_squared, dtype=float) / self.v0_squared)

    def children(self):
        kids = {k: [] for k in range(self.node_count_h + 1)}
        for k, p in enumerate(self.parent, start=1):
            kids[int(p)].append(k)
        return kids


@dataclass(frozen=True)
class NodalLoad:
    """Real and reactive nodal consumption in per-unit.

    Arrays are ``(h,)`` for a single snapshot or ``(h, T)`` for ``T`` time
    steps. A missing reactive part means zero.
    """

    real_power: np.ndarray
    reactive_power: np.ndarray | None = None

    def arrays(self, h):
        p = np.asarray(self.real_power, dtype=float)
        q = (
            np.zeros_like(p)
            if self.reactive_power is None
            else np.asarray(self.reactive_power, dtype=float)
        )
        if p.shape != q.shape:
            raise DomainError(f"real/reactive shapes differ: {p.shape} vs {q.shape}")
        if p.ndim not in (1, 2) or p.shape[0] != h:
            raise DomainError(f"load has shape {p.shape}, expected ({h},) or ({h}, T)")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise DomainError("load contains non-finite entries")
        return p, q


def build_feeder(
    lines: Sequence[LineSegment],
    v0_squared: float = 1.0,
    *,
    base_kva: float = 1.0,
    base_kv: float = 1.0,
    name: str = "",
    node_labels: Sequence[str] = (),
) -> FeederModel:
    """Validate a radial topology and derive its R and X matrices.

    Entry ``(i, j)`` of ``R`` is the total resistance of the segments shared
    by the root-to-``i`` and root-to-``j`` paths; ``X`` likewise.
    """
    lines = tuple(lines)
    if v0_squared <= 0:
        raise DomainError("v0_squared must be positive")
    seen = set()
    adjacency: dict[int, list[tuple[int, LineSegment]]] = {}
    nodes = {0}
    for seg in lines:
        key = frozenset((seg.from_node, seg.to_node))
        if key in seen:
            raise StructuralError(f"duplicate edge {tuple(sorted(key))}")
        seen.add(key)
        nodes.update((seg.from_node, seg.to_node))
        adjacency.setdefault(seg.from_node, []).append((seg.to_node, seg))
        adjacency.setdefault(seg.to_node, []).append((seg.from_node, seg))

    h = len(nodes) - 1
    if h < 1:
        raise StructuralError("feeder needs at least one line")
    if nodes != set(range(h + 1)):
        raise StructuralError(f"node ids must be 0..{h}, got {sorted(nodes)}")
    if len(lines) != h:
        raise StructuralError(f"{len(lines)} lines for {h} nodes: cycle detected")

    parent = np.full(h, -1, dtype=int)
    line_r = np.zeros(h)
    line_x = np.zeros(h)
    order = [0]
    visited = {0}
    queue = deque([0])
    while queue:
        k = queue.popleft()
        for nb, seg in sorted(adjacency.get(k, []), key=lambda t: t[0]):
            if nb in visited:
                if k == 0 or nb != parent[k - 1]:
                    raise StructuralError(f"cycle detected through node {nb}")
                continue
            visited.add(nb)
            parent[nb - 1] = k
            line_r[nb - 1] = seg.resistance
            line_x[nb - 1] = seg.reactance
            order.append(nb)
            queue.append(nb)
    if len(visited) != h + 1:
        missing = sorted(set(range(h + 1)) - visited)
        raise StructuralError(f"disconnected nodes: {missing}")

    # root-to-node path as a set of fed nodes (each segment named by its child)
    paths = {0: frozenset()}
    for k in order[1:]:
        paths[k] = paths[int(parent[k - 1])] | {k}
    r_matrix = np.zeros((h, h))
    x_matrix = np.zeros((h, h))
    for i in range(1, h + 1):
        for j in range(i, h + 1):
            shared = sorted(paths[i] & paths[j])
            r_matrix[i - 1, j - 1] = r_matrix[j - 1, i - 1] = sum(line_r[s - 1] for s in shared)
            x_matrix[i - 1, j - 1] = x_matrix[j - 1, i - 1] = sum(line_x[s - 1] for s in shared)
    for arr in (r_matrix, x_matrix, parent, line_r, line_x):
        arr.setflags(write=False)
    return FeederModel(
        node_count_h=h,
        lines=lines,
        v0_squared=float(v0_squared),
        r_matrix=r_matrix,
        x_matrix=x_matrix,
        parent=parent,
        line_r=line_r,
        line_x=line_x,
        order=tuple(order),
        base_kva=float(base_kva),
        base_kv=float(base_kv),
        name=name,
        node_labels=tuple(node_labels),
    )


def lindistflow_voltages(feeder: FeederModel, load: NodalLoad) -> np.ndarray:
    """Squared voltages ``V0 - 2 R p - 2 X q`` (loss-free linear model)."""
    p, q = load.arrays(feeder.h)
    return feeder.v0_squared - 2.0 * (feeder.r_matrix @ p) - 2.0 * (feeder.x_matrix @ q)


def distflow_voltages(
    feeder: FeederModel,
    load: NodalLoad,
    tol: float = 1e-10,
    max_sweeps: int = 200,
) -> np.ndarray:
    """Squared voltages from the nonlinear branch-flow equations.

    Forward-backward sweep from a flat start. The backward pass accumulates
    sending-end branch flows including the series loss ``r * l``, where
    ``l = (P^2 + Q^2) / v_parent``; the forward pass applies
    ``v_child = v_parent - 2 (r P + x Q) + (r^2 + x^2) l``.

    Raises
    ------
    NumericError
        If successive sweeps still differ by more than ``tol`` after
        ``max_sweeps`` sweeps, or values become non-finite.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    p, q = load.arrays(feeder.h)
    squeeze = p.ndim == 1
    if squeeze:
        p, q = p[:, None], q[:, None]
    h, T = p.shape
    parent = feeder.parent
    r, x = feeder.line_r[:, None], feeder.line_x[:, None]
    order = feeder.order[1:]
    reverse = order[::-1]

    v = np.full((h + 1, T), feeder.v0_squared)  # row 0 is the head
    loss = np.zeros((h, T))
    residual = np.inf
    for _ in range(max_sweeps):
        P = p.copy()
        Q = q.copy()
        for k in reverse:
            P[k - 1] += r[k - 1] * loss[k - 1]
            Q[k - 1] += x[k - 1] * loss[k - 1]
            pk = parent[k - 1]
            if pk > 0:
                P[pk - 1] += P[k - 1]
                Q[pk - 1] += Q[k - 1]
        v_new = v.copy()
        # runaway sweeps overflow; caught by the finiteness check below
        with np.errstate(over="ignore", invalid="ignore"):
            loss = (P**2 + Q**2) / v[parent]
            for k in order:
                pk = parent[k - 1]
                v_new[k] = (
                    v_new[pk]
                    - 2.0 * (r[k - 1] * P[k - 1] + x[k - 1] * Q[k - 1])
                    + (r[k - 1] ** 2 + x[k - 1] ** 2) * loss[k - 1]
                )
        if not np.all(np.isfinite(v_new)) or np.any(v_new[1:] <= 0):
            raise NumericError("sweep produced non-physical voltages", residual=residual)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        if residual < tol:
            out = v[1:]
            return out[:, 0] if squeeze else out
    raise NumericError(
        f"DistFlow sweep did not converge in {max_sweeps} sweeps (residual {residual:.3e})",
        residual=residual,
    )


def read_structured(path):
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return json.loads(text)
    return tomllib.loads(text)


def feeder_from_config(cfg: dict, name: str = "") -> FeederModel:
    """Build a feeder from a parsed config mapping.

    The mapping carries a ``base`` table (``kva``, ``kv``, ``v0`` in p.u.,
    ``units`` either ``"ohm"`` or ``"pu"``) and a ``line`` list of
    ``{from, to, r, x}`` entries.
    """
    base = cfg.get("base", {})
    kva = float(base.get("kva", 1.0))
    kv = float(base.get("kv", 1.0))
    v0 = float(base.get("v0", 1.0))
    units = base.get("units", "pu")
    if units == "ohm":
        z_base = kv**2 * 1000.0 / kva
    elif units == "pu":
        z_base = 1.0
    else:
        raise DomainError(f"unknown impedance units {units!r}")
    entries = cfg.get("line", [])
    if not entries:
        raise StructuralError("config has no [[line]] entries")
    lines = [
        LineSegment(int(e["from"]), int(e["to"]), float(e["r"]) / z_base, float(e["x"]) / z_base)
        for e in entries
    ]
    labels = cfg.get("nodes", {}).get("labels", ())
    return build_feeder(
        lines, v0**2, base_kva=kva, base_kv=kv, name=cfg.get("name", name), node_labels=labels
    )


def load_feeder(path) -> FeederModel:
    """Read a TOML or JSON feeder file."""
    return feeder_from_config(read_structured(path), name=Path(path).stem)
