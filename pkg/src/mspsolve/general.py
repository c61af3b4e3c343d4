"""Three-level solver for (A^T A + lam*I) x = c with general rectangular A.

The Nystrom preconditioner for the Gram matrix A^T A is never materialized:
with A_tilde = A S^T (m x s) the defining blocks are C = A^T A_tilde and
W = A_tilde^T A_tilde, and every product with C or C^T C is chained through
A and A_tilde.  The level hierarchy:

  level 1  Lanczos on A^T A + lam*I, preconditioned by M via the inversion
           formula (SolveM1);
  level 2  Lanczos on C^T C + lt*W_j, matrix-free, preconditioned by
           M2 = W_j^2 + lt*W_j applied through SolveM2;
  level 3  SolveM2 = two Lanczos solves, W_j u = r and (W_j + lt*I) v = r,
           each preconditioned by a prefactored sketch Gram (A_hat^T A_hat
           with the matching shifts), combined as z = (u - v)/lt.

The jitter chosen for W is used consistently in all of the above, so every
inversion identity holds exactly for the operators actually applied.
Setting lam = 0 solves a general square system A x = b through the normal
equations c = A^T b; lambda0 > 0 keeps everything invertible even then.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .config import DEFAULT, Tunables, sketch_nnz_per_column, sketch_rows
from .core import MatrixHandle, as_vector, power_method_norm
from .errors import DomainError, InconsistentEstimate, SketchRankCollapse
from .lanczos import preconditioned_lanczos, ritz_values
from .nystrom import _jitter_ladder
from .psd import PsdSolveConfig, _ritz_kappa, clamp_rank, solve_psd
from .report import SolveReport
from .sketch import make_ose, make_sparse_embedding, sketch_apply_right

_SEED_OSE = 1
_SEED_PROBE = 2
_SEED_EST = 5


@dataclass
class GeneralSolveConfig:
    """Knobs for one normal-equations solve (see PsdSolveConfig)."""

    l: int
    lam: float = 0.0
    eps: float = 1e-8
    delta: float = 0.01
    seed: int = 0
    t_max_override: Optional[int] = None
    inner_iters_override: Optional[int] = None
    level3_iters_override: Optional[int] = None

    def __post_init__(self):
        if not (0.0 < self.eps < 1.0):
            raise DomainError(f"eps must be in (0,1), got {self.eps}")
        if not (0.0 < self.delta < 0.5):
            raise DomainError(f"delta must be in (0, 1/2), got {self.delta}")
        if self.lam < 0.0:
            raise DomainError(f"lambda must be nonnegative, got {self.lam}")
        if self.l < 1:
            raise DomainError(f"rank parameter must be positive, got {self.l}")


@dataclass(eq=False)
class GeneralMspState:
    """Prebuilt sketches and factors for one (A, lam) pair."""

    a: MatrixHandle
    a_tilde: MatrixHandle
    a_hat: MatrixHandle
    m3a_factor: tuple
    m3b_factor: tuple
    w_chol: tuple
    lambda_tilde: float
    lambda0: float
    lam: float
    jitter: float
    embedding: object
    l: int
    gamma: int
    seed: int
    phi_rows: int
    w_j: np.ndarray = field(repr=False, default=None)
    pm_gram: Optional[float] = None  # cached ||A^T A|| estimate

    @property
    def m(self) -> int:
        return self.a.rows

    @property
    def n(self) -> int:
        return self.a.cols

    @property
    def s(self) -> int:
        return self.a_tilde.cols

    def diagnostics(self) -> dict:
        return {
            "s": self.s,
            "gamma": self.gamma,
            "l": self.l,
            "phi_rows": self.phi_rows,
            "lambda0": self.lambda0,
            "lambda_tilde": self.lambda_tilde,
            "jitter": self.jitter,
        }


def _frobenius_sq(a: MatrixHandle) -> float:
    raw = a.raw()
    if sp.issparse(raw):
        return float(np.sum(raw.data**2))
    return float(np.sum(raw**2))


def build_general(a, cfg: GeneralSolveConfig, *, tun: Tunables = DEFAULT) -> GeneralMspState:
    """Sketch A, estimate lambda0, and prefactor the level-3 preconditioners.

    lambda0 targets (2/l) * sum_{i>l} sigma_i^2(A) = (2/l) * tr(A^T A - Nys_l),
    probed through a dedicated l-row sketch A_l = A S_l^T.  Each Rademacher
    probe contributes the coupled difference ||A z||^2 - ||L^{-1} A_l^T (A z)||^2
    (L the Cholesky factor of the jittered A_l^T A_l): both quadratic forms
    share the same z, so the per-probe variance scales with the tail energy
    itself rather than with ||A^T A||_F^2, which would drown the tail whenever
    the spectrum has large outliers.  The exact ||A||_F^2 anchors the floor
    and the sanity check.
    """
    if not isinstance(a, MatrixHandle):
        a = MatrixHandle(np.asarray(a, dtype=np.float64))
    m, n = a.rows, a.cols
    l_eff, _ = clamp_rank(cfg.l, n)

    s = sketch_rows(l_eff, n, cfg.delta, tun)
    gamma = min(sketch_nnz_per_column(l_eff, cfg.delta, tun), s)
    emb = make_sparse_embedding(s, n, gamma, cfg.seed)
    a_tilde = sketch_apply_right(a, emb)  # m x s dense
    at = a_tilde.to_dense()
    w = at.T @ at
    w = 0.5 * (w + w.T)
    frob_sq = _frobenius_sq(a)
    if frob_sq == 0.0:
        raise DomainError("matrix is identically zero")

    phi = make_ose(m, s, cfg.delta, tun.ose_epsilon, cfg.seed + _SEED_OSE, tun=tun)
    a_hat = phi.apply(at)
    gram_hat = a_hat.T @ a_hat
    gram_hat = 0.5 * (gram_hat + gram_hat.T)

    # Tail-energy probe from a separate l-row sketch.  The main embedding has
    # s = O(l log l) rows and can reach s >= n on small problems, where its
    # Nystrom approximation is exact and the rank-s tail is ~0 even though
    # the rank-l tail (the quantity lambda0 must cover) is not.
    emb_l = make_sparse_embedding(l_eff, n, min(gamma, l_eff), cfg.seed + _SEED_EST)
    at_l = sketch_apply_right(a, emb_l).to_dense()
    w_l = at_l.T @ at_l
    w_l = 0.5 * (w_l + w_l.T)
    l_chol = None
    last_exc: Optional[Exception] = None
    for jitter_l in _jitter_ladder(float(np.trace(w_l)), l_eff, tun):
        w_lj = w_l.copy()
        w_lj[np.diag_indices_from(w_lj)] += jitter_l
        try:
            l_chol = scipy.linalg.cho_factor(w_lj, lower=True, check_finite=False)
            break
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
    if l_chol is None:
        raise SketchRankCollapse(
            f"probe Gram ({l_eff}x{l_eff}) failed Cholesky at every jitter "
            f"level: {last_exc}"
        )
    probe_rng = np.random.default_rng([cfg.seed & ((1 << 63) - 1), _SEED_PROBE])
    tail_terms = np.empty(tun.lambda0_probes)
    for p in range(tun.lambda0_probes):
        z = 2.0 * probe_rng.integers(0, 2, size=n) - 1.0
        az = a.matvec(z)
        atz = at_l.T @ az
        lz = scipy.linalg.solve_triangular(
            l_chol[0], atz, lower=True, check_finite=False
        )
        tail_terms[p] = float(az @ az) - float(lz @ lz)
    est = float(np.mean(tail_terms))
    if est < -0.1 * frob_sq:
        raise InconsistentEstimate(
            f"tail-energy estimate {est:.6e} negative beyond tolerance "
            f"(||A||_F^2 = {frob_sq:.6e})"
        )
    lambda0 = (2.0 / l_eff) * max(est, 1e-12 * frob_sq)
    lambda_tilde = cfg.lam + lambda0

    trace_w = float(np.trace(w))
    last_exc = None
    for jitter in _jitter_ladder(trace_w, s, tun):
        w_j = w.copy()
        w_j[np.diag_indices_from(w_j)] += jitter
        m3a = gram_hat.copy()
        m3a[np.diag_indices_from(m3a)] += jitter
        try:
            w_chol = scipy.linalg.cho_factor(w_j, lower=True, check_finite=False)
            m3a_factor = scipy.linalg.cho_factor(m3a, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            continue

        m3b = m3a.copy()
        m3b[np.diag_indices_from(m3b)] += lambda_tilde
        try:
            m3b_factor = scipy.linalg.cho_factor(m3b, lower=True, check_finite=False)
        except scipy.linalg.LinAlgError as exc:
            last_exc = exc
            continue

        return GeneralMspState(
            a=a,
            a_tilde=a_tilde,
            a_hat=MatrixHandle(np.asarray(a_hat)),
            m3a_factor=m3a_factor,
            m3b_factor=m3b_factor,
            w_chol=w_chol,
            lambda_tilde=lambda_tilde,
            lambda0=lambda0,
            lam=cfg.lam,
            jitter=jitter,
            embedding=emb,
            l=l_eff,
            gamma=gamma,
            seed=cfg.seed,
            phi_rows=phi.phi,
            w_j=w_j,
        )

    raise SketchRankCollapse(
        f"sketched Gram ({s}x{s}) failed Cholesky at every jitter level: {last_exc}"
    )


def solve_m2(
    state: GeneralMspState,
    r: np.ndarray,
    budgets: dict,
    counters: Optional[dict] = None,
    tun: Tunables = DEFAULT,
) -> np.ndarray:
    """Apply M2^{-1} = (W_j^2 + lt*W_j)^{-1} = (W_j^{-1} - (W_j+lt*I)^{-1})/lt.

    Each of the two resolvents is a level-3 Lanczos solve preconditioned by
    the corresponding prefactored sketch Gram factor.
    """
    r = as_vector(r, state.s)
    if float(np.linalg.norm(r)) == 0.0:
        return np.zeros(state.s)
    lt = state.lambda_tilde
    w_j = state.w_j
    t3 = budgets["t3"]
    eps2 = budgets["eps2"]

    def w_op(y):
        return w_j @ y

    def w_shift_op(y):
        return w_j @ y + lt * y

    def m3a_solve(rhs):
        return scipy.linalg.cho_solve(state.m3a_factor, rhs, check_finite=False)

    def m3b_solve(rhs):
        return scipy.linalg.cho_solve(state.m3b_factor, rhs, check_finite=False)

    u, ws_a = preconditioned_lanczos(
        w_op, r, m3a_solve, t_max=t3, residual_target=eps2,
        check_every=tun.check_every, tun=tun,
    )
    v, ws_b = preconditioned_lanczos(
        w_shift_op, r, m3b_solve, t_max=t3, residual_target=eps2,
        check_every=tun.check_every, tun=tun,
    )
    if counters is not None:
        counters["level3a_total"] = counters.get("level3a_total", 0) + ws_a.iterations
        counters["level3b_total"] = counters.get("level3b_total", 0) + ws_b.iterations
    return (u - v) / lt


def solve_m1_general(
    state: GeneralMspState,
    r: np.ndarray,
    budgets: dict,
    counters: Optional[dict] = None,
    tun: Tunables = DEFAULT,
) -> np.ndarray:
    """Approximate M^{-1} r without ever materializing C = A^T A_tilde.

    Level-2 system: (C^T C + lt*W_j) y = A_tilde^T (A r), with the operator
    chained as y -> A_tilde^T(A(A^T(A_tilde y))) + lt*(W_j y); then
    w = (r - A^T(A_tilde y)) / lt.
    """
    r = as_vector(r, state.n)
    a = state.a
    at = state.a_tilde.to_dense()
    lt = state.lambda_tilde
    w_j = state.w_j

    rhs = at.T @ a.matvec(r)
    if counters is not None:
        counters["A_applies"] = counters.get("A_applies", 0) + 1
    if float(np.linalg.norm(rhs)) == 0.0:
        return r / lt

    def g_op(y):
        if counters is not None:
            counters["A_applies"] = counters.get("A_applies", 0) + 2
        inner = a.matvec(a.rmatvec(at @ y))
        return at.T @ inner + lt * (w_j @ y)

    def m2_solve(rr):
        return solve_m2(state, rr, budgets, counters, tun)

    y, ws = preconditioned_lanczos(
        g_op, rhs, m2_solve,
        t_max=budgets["t2"], residual_target=budgets["eps1"],
        check_every=tun.check_every, tun=tun,
    )
    if counters is not None:
        counters["level2_total"] = counters.get("level2_total", 0) + ws.iterations
        counters["level2_runs"] = counters.get("level2_runs", 0) + 1
        if ws.status == "budget-exhausted":
            counters["level2_exhausted"] = counters.get("level2_exhausted", 0) + 1
        counters["A_applies"] = counters.get("A_applies", 0) + 1
    return (r - a.rmatvec(at @ y)) / lt


def _derive_budgets(
    cfg: GeneralSolveConfig, kappa_m: float, kappa_gram: float, n: int, tun: Tunables
) -> dict:
    eps0 = max(tun.eps_floor, cfg.eps / (kappa_m * n))
    eps1 = max(tun.eps_floor, eps0 / kappa_gram**1.5)
    eps2 = max(tun.eps_floor, eps0 / (4.0 * kappa_gram * cfg.l))
    t2 = cfg.inner_iters_override or int(
        math.ceil(tun.inner_budget_factor * math.log(max(kappa_gram / eps1, math.e)))
    )
    t3 = cfg.level3_iters_override or int(
        math.ceil(tun.inner_budget_factor * math.log(max(9.0 * cfg.l / eps2, math.e)))
    )
    return {"t2": t2, "t3": t3, "eps1": eps1, "eps2": eps2, "eps0": eps0}


def solve_normal(
    a,
    c: np.ndarray,
    cfg: GeneralSolveConfig,
    *,
    state: Optional[GeneralMspState] = None,
    tun: Tunables = DEFAULT,
    trace: Optional[Callable[[dict], None]] = None,
) -> SolveReport:
    """Solve (A^T A + lam*I) x = c to relative energy-norm error eps.

    Pass a prebuilt `state` to amortize the sketch factorizations over many
    right-hand sides (the least-squares driver does).  For a square general
    system A x = b, call with c = A^T b and lam = 0.
    """
    t_start = time.perf_counter()
    if not isinstance(a, MatrixHandle):
        a = MatrixHandle(np.asarray(a, dtype=np.float64))
    c = as_vector(c, a.cols)
    n = a.cols

    if state is None:
        state = build_general(a, cfg, tun=tun)
    lt = state.lambda_tilde
    lam = cfg.lam
    counters: dict = {
        "level2_total": 0, "level2_runs": 0,
        "level3a_total": 0, "level3b_total": 0,
        "level2_exhausted": 0, "A_applies": 0,
    }

    def b_op(x):
        counters["A_applies"] += 2
        gx = a.rmatvec(a.matvec(x))
        return gx + lam * x if lam != 0.0 else gx

    if float(np.linalg.norm(c)) == 0.0:
        report = SolveReport(
            x=np.zeros(n), status="converged", method="msp-general",
            iterations={"level1": 0, "warmup": 0, "level2_total": 0,
                        "level3a_total": 0, "level3b_total": 0},
            matvecs=0, residual_history=[], kappa_m_estimate=None,
            wall_ms=(time.perf_counter() - t_start) * 1e3,
            config_echo=vars(cfg).copy(), stop_reason="zero-rhs",
        )
        return report

    if state.pm_gram is None:
        def gram_op(x):
            return a.rmatvec(a.matvec(x))

        state.pm_gram = power_method_norm(gram_op, n, iters=tun.power_iters,
                                          seed=cfg.seed + 3)
    pm = state.pm_gram
    kappa_gram = (pm + lt) / lt

    budgets = _derive_budgets(cfg, kappa_gram, kappa_gram, n, tun)

    def solve_m(r, _budgets=budgets):
        return solve_m1_general(state, r, _budgets, counters, tun)

    kappa_b0 = max(kappa_gram**2, 4.0)
    target0 = cfg.eps / math.sqrt(kappa_b0)
    x, ws = preconditioned_lanczos(
        b_op, c, solve_m,
        t_max=tun.warmup_iters, residual_target=target0, check_every=1, tun=tun,
    )
    warmup_iters = ws.iterations
    warmup_history = [[i, r] for i, r in ws.checkpoints]
    kappa_m = _ritz_kappa(ws, tun)

    diagnostics = {
        "l_effective": state.l,
        "l_clamped": state.l != cfg.l,
        "kappa_gram_estimate": kappa_gram,
        "warmup_status": ws.status,
        "warmup_history": warmup_history,
        "preconditioner": state.diagnostics(),
    }
    level1 = warmup_iters
    main_ws = ws
    residual_history = warmup_history
    status, stop_reason = ws.status, ws.stop_reason

    if ws.status not in ("converged", "breakdown"):
        if kappa_m is None:
            kappa_m = kappa_gram
        theta = ritz_values(ws.tridiag)
        theta_min = max(float(theta[0]), 1e-14 * max(float(theta[-1]), 1e-300))
        lam_min_b = theta_min * lt / tun.ritz_inflation
        lam_max_b = 1.5 * pm + lam
        kappa_b = max(lam_max_b / max(lam_min_b, 1e-300), 1.0)
        residual_target = max(cfg.eps / math.sqrt(kappa_b), 1e-15)

        t_max = cfg.t_max_override or int(
            math.ceil(tun.t_factor * math.sqrt(kappa_m)
                      * math.log(max(kappa_m / cfg.eps, math.e)))
        )
        t_max = min(max(t_max, tun.warmup_iters), 2 * n)
        budgets = _derive_budgets(cfg, kappa_m, kappa_gram, n, tun)

        def solve_m_main(r, _budgets=budgets):
            return solve_m1_general(state, r, _budgets, counters, tun)

        x, main_ws = preconditioned_lanczos(
            b_op, c, solve_m_main,
            t_max=t_max, residual_target=residual_target,
            check_every=tun.check_every, trace=trace, tun=tun,
        )
        level1 = main_ws.iterations
        residual_history = [[i, r] for i, r in main_ws.checkpoints]
        status, stop_reason = main_ws.status, main_ws.stop_reason
        diagnostics.update(
            {
                "t_max": t_max,
                "kappa_b_estimate": kappa_b,
                "residual_target": residual_target,
                **{k: budgets[k] for k in ("eps0", "eps1", "eps2", "t2", "t3")},
            }
        )

    if counters["level2_exhausted"]:
        diagnostics["inner_budget_exhausted"] = counters["level2_exhausted"]

    return SolveReport(
        x=x,
        status=status,
        method="msp-general",
        iterations={
            "level1": level1,
            "warmup": warmup_iters,
            "level2_total": counters["level2_total"],
            "level3a_total": counters["level3a_total"],
            "level3b_total": counters["level3b_total"],
        },
        matvecs=counters["A_applies"] + 2 * tun.power_iters + tun.lambda0_probes,
        residual_history=residual_history,
        kappa_m_estimate=kappa_m,
        wall_ms=(time.perf_counter() - t_start) * 1e3,
        config_echo=vars(cfg).copy(),
        stop_reason=stop_reason,
        diagnostics=diagnostics,
        workspace=main_ws,
        preconditioner=state,
    )


def solve_normal_given_gram(
    g,
    c: np.ndarray,
    cfg: GeneralSolveConfig,
    *,
    tun: Tunables = DEFAULT,
) -> SolveReport:
    """Variant for callers holding A^T A itself: routes to the PSD solver.

    The Gram matrix is symmetric PSD, so the two-level path applies verbatim
    and achieves the same guarantee without access to A.
    """
    psd_cfg = PsdSolveConfig(
        l=cfg.l, lam=cfg.lam, eps=cfg.eps, delta=cfg.delta, seed=cfg.seed,
        t_max_override=cfg.t_max_override,
        inner_iters_override=cfg.inner_iters_override,
    )
    report = solve_psd(g, c, psd_cfg, tun=tun)
    report.method = "msp-general-gram"
    return report
