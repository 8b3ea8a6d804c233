"""Trace records shared by the solvers and the diagnostics layer."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TraceRecord"]


@dataclass(eq=False)
class TraceRecord:
    """One measurement row.

    ``pass_opt`` counts optimization passes only; ``pass_total`` also charges
    gradient recomputation sweeps, so the two accounting conventions stay
    comparable across algorithms. Array-valued fields (parameter snapshots
    and per-round gradient vectors) are carried for diagnostics and never
    serialized to CSV. Equality is identity; compare fields explicitly.
    """

    algo: str
    node: int | str
    round: int | None = None
    inner_pass: int | None = None
    pass_opt: int = 0
    pass_total: int = 0
    f: float | None = None
    excess: float | None = None
    grad_norm: float | None = None
    inner_err: float | None = None
    disc_err: float | None = None
    rho_tilde: float | None = None
    alpha_tilde: float | None = None
    omega_tilde: float | None = None
    rho_hat: float | None = None
    w: np.ndarray | None = field(default=None, repr=False)
    anchor_grad: np.ndarray | None = field(default=None, repr=False)
    global_avg_grad: np.ndarray | None = field(default=None, repr=False)
    grad_estimate: np.ndarray | None = field(default=None, repr=False)
