"""Two-level solver for (A + lam*I) x = b with symmetric PSD A.

Level 1 is preconditioned Lanczos on the original system, with the Nystrom
preconditioner applied through the inversion formula.  The Gram system that
the formula needs, (C^T C + lt*W_j) y = C^T r, is itself solved by Lanczos
(level 2) preconditioned by the prefactored sketch Gram matrix
M2 = (Phi C)^T (Phi C) + lt*W_j — a direct s x s solve per inner iteration.

Iteration budgets and inner tolerances are derived at run time: a short
warmup run supplies Ritz values, whose spread (inflated x2) estimates the
preconditioned condition number; that drives t_max, the inner tolerance
cascade, and the residual target that certifies the energy-norm error
contract.  Trivially easy systems simply converge during the warmup.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .config import DEFAULT, Tunables
from .core import MatrixHandle, as_vector, operator_of, power_method_norm
from .errors import DomainError
from .lanczos import preconditioned_lanczos, ritz_values
from .nystrom import NystromPreconditioner, apply_minv_via_formula, build_nystrom_psd
from .report import SolveReport


@dataclass
class PsdSolveConfig:
    """Knobs for one PSD solve; eps is the target relative energy-norm error."""

    l: int
    lam: float = 0.0
    eps: float = 1e-8
    delta: float = 0.01
    seed: int = 0
    t_max_override: Optional[int] = None
    inner_iters_override: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise DomainError(f"eps must be in (0,1), got {self.eps}")
        if not (0.0 < self.delta < 0.5):
            raise DomainError(f"delta must be in (0, 1/2), got {self.delta}")
        if self.lam < 0.0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if self.l < 1:
            raise DomainError(f"rank parameter must be positive, got {self.l}")


def clamp_rank(l: int, n: int) -> tuple:
    """Clamp l into [ceil(log2 n)+1, n-1]; returns (l_eff, clamped?)."""
    lo = int(math.ceil(math.log2(max(n, 2)))) + 1
    hi = max(n - 1, 1)
    lo = min(lo, hi)
    l_eff = min(max(l, lo), hi)
    return l_eff, (l_eff != l)


def _ritz_kappa(ws, tun: Tunables) -> Optional[float]:
    """Preconditioned condition estimate from a run's tridiagonal block."""
    if ws.tridiag is None or ws.tridiag.t < 1:
        return None
    theta = ritz_values(ws.tridiag)
    tmax = float(theta[-1])
    if tmax <= 0.0:
        return None
    tmin = max(float(theta[0]), 1e-14 * tmax)
    return tun.ritz_inflation * tmax / tmin


def solve_m1_psd(
    pre: NystromPreconditioner,
    r: np.ndarray,
    inner_budget: int,
    eps1: float = 1e-12,
    counters: Optional[dict] = None,
    tun: Tunables = DEFAULT,
) -> np.ndarray:
    """Approximate M^{-1} r: level-2 Lanczos on the Gram system, then the formula.

    The level-2 operator is two dense GEMVs (C and W are stored here); its
    preconditioner is the exact prefactored M2, so the only inner error is the
    level-2 truncation, driven below eps1.
    """
    c = pre.C.to_dense()
    w_j = pre.w_jittered()
    lt = pre.lambda_tilde

    def g_op(y):
        return c.T @ (c @ y) + lt * (w_j @ y)

    def m2_solve(rhs):
        return scipy.linalg.cho_solve(pre.inner, rhs, check_finite=False)

    def inner(rhs, tol):
        if float(np.linalg.norm(rhs)) == 0.0:
            return np.zeros(pre.s)
        y, ws = preconditioned_lanczos(
            g_op,
            rhs,
            m2_solve,
            t_max=inner_budget,
            residual_target=tol,
            check_every=tun.check_every,
            tun=tun,
        )
        if counters is not None:
            counters["level2_total"] = counters.get("level2_total", 0) + ws.iterations
            counters["level2_runs"] = counters.get("level2_runs", 0) + 1
        return y

    return apply_minv_via_formula(pre, r, inner, eps1)


def _trivial_report(method, x, status, reason, cfg, wall_ms, **diag) -> SolveReport:
    return SolveReport(
        x=x,
        status=status,
        method=method,
        iterations={"level1": 0, "warmup": 0, "level2_total": 0},
        matvecs=0,
        residual_history=[],
        kappa_m_estimate=None,
        wall_ms=wall_ms,
        config_echo=vars(cfg).copy(),
        stop_reason=reason,
        diagnostics=dict(diag),
    )


def solve_psd(
    a,
    b: np.ndarray,
    cfg: PsdSolveConfig,
    *,
    tun: Tunables = DEFAULT,
    exact_tail_sum: Optional[float] = None,
    trace: Optional[Callable[[dict], None]] = None,
    pre: Optional[NystromPreconditioner] = None,
) -> SolveReport:
    """Solve (A + lam*I) x = b for PSD A to relative energy-norm error eps.

    Accepts A as a MatrixHandle, dense/sparse array, or a matvec callable.
    Returns a SolveReport; non-convergence within budget is reported via
    status "budget-exhausted", never as an exception.  Pass a previously
    built `pre` (from an earlier report on the same A, lam, l, seed) to skip
    the preconditioner build when solving several right-hand sides.
    """
    t_start = time.perf_counter()
    b = as_vector(b)
    n = b.shape[0]
    if isinstance(a, np.ndarray):
        a = MatrixHandle(a, sym="spd")
    a_op = operator_of(a)
    lam = cfg.lam

    def b_op(x):
        ax = a_op(x)
        return ax + lam * x if lam != 0.0 else ax

    if float(np.linalg.norm(b)) == 0.0:
        return _trivial_report(
            "msp-psd", np.zeros(n), "converged", "zero-rhs", cfg,
            (time.perf_counter() - t_start) * 1e3,
        )

    l_eff, l_clamped = clamp_rank(cfg.l, n)
    if pre is None:
        pre = build_nystrom_psd(
            a, l_eff, lam, cfg.delta, cfg.seed,
            n=n, probes=tun.lambda0_probes, exact_tail_sum=exact_tail_sum, tun=tun,
        )
    lt = pre.lambda_tilde

    pm_a = power_method_norm(a_op, n, iters=tun.power_iters, seed=cfg.seed + 3)
    matvecs_setup = tun.lambda0_probes + tun.power_iters
    kappa_mat = (pm_a + lt) / lt  # upper estimate of cond(M): A_nys <= A

    counters: dict = {"level2_total": 0, "level2_runs": 0}
    eps0_warm = max(tun.eps_floor, cfg.eps / (kappa_mat * n))
    eps1_warm = max(tun.eps_floor, eps0_warm / kappa_mat**1.5)
    inner_budget = cfg.inner_iters_override or int(
        math.ceil(tun.inner_budget_factor * math.log(max(kappa_mat / eps1_warm, math.e)))
    )

    def solve_m(r, _tol=eps1_warm):
        return solve_m1_psd(pre, r, inner_budget, _tol, counters, tun)

    # Warmup: short run with per-iteration checks.  Easy systems converge
    # right here; otherwise its Ritz values calibrate the real run.
    kappa_b0 = max(kappa_mat**2, 4.0)
    target0 = cfg.eps / math.sqrt(kappa_b0)
    x, ws = preconditioned_lanczos(
        b_op, b, solve_m,
        t_max=tun.warmup_iters, residual_target=target0, check_every=1, tun=tun,
    )
    warmup_iters = ws.iterations
    warmup_history = [[i, r] for i, r in ws.checkpoints]
    matvecs = matvecs_setup + ws.n_matvec
    kappa_m = _ritz_kappa(ws, tun)

    diagnostics = {
        "l_effective": l_eff,
        "l_clamped": l_clamped,
        "kappa_mat_estimate": kappa_mat,
        "warmup_status": ws.status,
        "warmup_history": warmup_history,
        "preconditioner": pre.diagnostics(),
        "matvec_note": "matvecs counts every A application including setup probes",
    }
    level1 = warmup_iters
    main_ws = ws
    residual_history = warmup_history
    stop_reason = ws.stop_reason
    status = ws.status

    if ws.status not in ("converged", "breakdown"):
        if kappa_m is None:
            kappa_m = kappa_mat
        theta = ritz_values(ws.tridiag)
        theta_min = max(float(theta[0]), 1e-14 * max(float(theta[-1]), 1e-300))
        lam_min_b = theta_min * lt / tun.ritz_inflation
        lam_max_b = 1.5 * pm_a + lam
        kappa_b = max(lam_max_b / max(lam_min_b, 1e-300), 1.0)
        residual_target = max(cfg.eps / math.sqrt(kappa_b), 1e-15)

        t_max = cfg.t_max_override or int(
            math.ceil(tun.t_factor * math.sqrt(kappa_m)
                      * math.log(max(kappa_m / cfg.eps, math.e)))
        )
        t_max = min(max(t_max, tun.warmup_iters), 2 * n)

        eps0 = max(tun.eps_floor, cfg.eps / (kappa_m * n))
        eps1 = max(tun.eps_floor, eps0 / kappa_mat**1.5)
        inner_budget = cfg.inner_iters_override or int(
            math.ceil(tun.inner_budget_factor * math.log(max(kappa_mat / eps1, math.e)))
        )

        def solve_m_main(r, _tol=eps1):
            return solve_m1_psd(pre, r, inner_budget, _tol, counters, tun)

        x, main_ws = preconditioned_lanczos(
            b_op, b, solve_m_main,
            t_max=t_max,
            residual_target=residual_target,
            check_every=tun.check_every,
            trace=trace,
            tun=tun,
        )
        matvecs += main_ws.n_matvec
        level1 = main_ws.iterations
        residual_history = [[i, r] for i, r in main_ws.checkpoints]
        status = main_ws.status
        stop_reason = main_ws.stop_reason
        diagnostics.update(
            {
                "t_max": t_max,
                "eps0": eps0,
                "eps1": eps1,
                "inner_budget": inner_budget,
                "kappa_b_estimate": kappa_b,
                "residual_target": residual_target,
            }
        )

    pre.kappa_hat = kappa_m
    return SolveReport(
        x=x,
        status=status,
        method="msp-psd",
        iterations={
            "level1": level1,
            "warmup": warmup_iters,
            "level2_total": counters["level2_total"],
            "level2_runs": counters["level2_runs"],
        },
        matvecs=matvecs,
        residual_history=residual_history,
        kappa_m_estimate=kappa_m,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
        config_echo=vars(cfg).copy(),
        stop_reason=stop_reason,
        diagnostics=diagnostics,
        workspace=main_ws,
        preconditioner=pre,
    )
