"""Structured solve result: solution, status, counters, diagnostics.

The JSON form is versioned ("schema": 1) and carries everything a harness
needs to compare runs; the in-memory object additionally keeps the solution
vector and (when the solver provides it) the Lanczos workspace, so tests can
rebuild per-iteration error curves without re-running anything.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

SCHEMA_VERSION = 1


@dataclass(eq=False)
class SolveReport:
    """Outcome of one solver run."""

    x: np.ndarray
    status: str
    method: str
    iterations: Dict[str, int]
    matvecs: int
    residual_history: List[List[float]]
    kappa_m_estimate: Optional[float]
    wall_ms: float
    config_echo: Dict[str, Any]
    stop_reason: str = ""
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    workspace: Any = None  # LanczosWorkspace of the main run, not serialized
    preconditioner: Any = None  # not serialized

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def to_dict(self, include_solution: bool = False) -> dict:
        out = {
            "schema": SCHEMA_VERSION,
            "method": self.method,
            "status": self.status,
            "stop_reason": self.stop_reason,
            "iterations": dict(self.iterations),
            "matvecs": int(self.matvecs),
            "residual_history": [[int(i), float(r)] for i, r in self.residual_history],
            "kappa_m_estimate": (
                float(self.kappa_m_estimate)
                if self.kappa_m_estimate is not None
                else None
            ),
            "wall_ms": float(self.wall_ms),
            "config": _jsonable(self.config_echo),
            "diagnostics": _jsonable(self.diagnostics),
        }
        if include_solution:
            out["x"] = np.asarray(self.x, dtype=float).tolist()
        return out

    def to_json(self, include_solution: bool = False, indent: int = 2) -> str:
        return json.dumps(self.to_dict(include_solution=include_solution), indent=indent)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    return repr(obj)
