"""
Discrete Dirichlet solver for G(D^2u, Du) = f~(x, u, nu), u = 0 on the boundary.

G = F~(a) is the degree-one form of the curvature operator and f~ = f^(1/m). The
target is reached by a homotopy in the right-hand side starting from a frozen
field at which the initial guess is an exact discrete solution; each homotopy
step is a damped Newton solve that only accepts admissible iterates.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from app.exceptions import (
    ExprDomainError, HomotopyStallError, HypothesisError, InitialGuessError,
    LinearSolveError, LineSearchError, NewtonDivergenceError, NotInConeError,
    SolverError,
)
from app.models import HypothesisReport, ProblemConfig, SolverConfig, SolveReport, SubsolutionReport
from app.services.fexpr import Env, Expr, check_hypotheses, evaluate, parse, partials, sample_envs, variables
from app.services.geometry import GraphPoint, graph_jet, pde_coeffs
from app.services.grid import Domain, Grid, build_grid
from app.services.symfunc import PSpec, eval_F, min_p_sum, tilde_jet
from config import settings

logger = logging.getLogger(__name__)

INITIAL_GUESS_SCALE = 0.1
SUBSOLUTION_TOL = 1e-10
COMPARISON_LOWER_TOL = 1e-8
COMPARISON_UPPER_TOL = 1e-12
MIN_CHUNK = 256
REFINEMENT_STEPS = 2
ILU_DROP_TOL = 1e-4
ILU_FILL_FACTOR = 10
GMRES_RESTART = 60
GMRES_MAXITER = 20


@dataclass
class Problem:
    spec: PSpec
    dom: Domain
    f: Expr
    h: float
    f_src: str = ""
    subsolution: Optional[Expr] = None
    grid: Grid = field(default=None, repr=False)

    def __post_init__(self):
        if self.dom.dim != self.spec.n:
            raise HypothesisError(f"domain dimension {self.dom.dim} does not match n={self.spec.n}")
        if self.grid is None:
            self.grid = build_grid(self.dom, self.h)

    @classmethod
    def from_config(cls, cfg: ProblemConfig, h: Optional[float] = None) -> "Problem":
        spec = PSpec(cfg.n, cfg.p)
        dom = Domain.from_config(cfg.domain, cfg.n)
        f = parse(cfg.f, cfg.n)
        sub = None
        if cfg.subsolution is not None:
            sub = parse(cfg.subsolution, cfg.n)
            if any(kind not in ("x", "r2") for kind, _ in variables(sub)):
                raise HypothesisError("subsolution may only depend on x1..xn and r2")
        return cls(spec, dom, f, cfg.grid.h if h is None else h, cfg.f, sub)


@dataclass
class NodeState:
    """Pointwise quantities of a discrete field at every node."""
    u: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    margin: np.ndarray
    kappa: np.ndarray
    nu: np.ndarray
    value: np.ndarray
    Gij: Optional[np.ndarray] = None
    Gs: Optional[np.ndarray] = None
    dNu: Optional[np.ndarray] = None

    @property
    def admissible(self) -> bool:
        return bool(np.all(self.margin > 0))


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual: float
    margin: float
    history: List[float]


class HomotopyRHS:
    """
    f~_t(x, z, nu) = (1 - t) g0(x) + t f(x, z, nu)^(1/m) and its z / nu derivatives.
    """

    def __init__(self, f: Expr, spec: PSpec, g0: np.ndarray, t: float):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"homotopy parameter must lie in [0, 1], got {t}")
        self.f = f
        self.spec = spec
        self.g0 = np.asarray(g0, dtype=float)
        self.t = t
        self.dz, self.dnu = partials(f, spec.n)

    def __call__(self, points: np.ndarray, z: np.ndarray, nu: np.ndarray):
        """(value, d/dz, d/dnu of shape (N, n+1)); raises ExprDomainError if f is not positive."""
        N = len(points)
        if self.t == 0.0:
            return self.g0.copy(), np.zeros(N), np.zeros((N, self.spec.n + 1))
        env = Env(points, z, nu)
        f = np.asarray(evaluate(self.f, env))
        bad = ~(np.isfinite(f) & (f > 0))
        if np.any(bad):
            raise ExprDomainError(f"right-hand side is not positive at node {int(np.flatnonzero(bad)[0])}")
        m = self.spec.m
        ft = f ** (1.0 / m)
        chain = self.t * ft / (m * f)
        fz = np.asarray(evaluate(self.dz, env))
        fnu = np.stack([np.asarray(evaluate(d, env)) for d in self.dnu], axis=-1)
        value = (1.0 - self.t) * self.g0 + self.t * ft
        return value, chain * fz, chain[:, None] * fnu


def homotopy_rhs(prob: Problem, u0: np.ndarray, t: float) -> HomotopyRHS:
    g0 = DirichletSolver(prob).state(u0).value
    if not np.all(np.isfinite(g0)):
        raise InitialGuessError("the homotopy start field is not admissible")
    return HomotopyRHS(prob.f, prob.spec, g0, t)


class DirichletSolver:
    """Homotopy plus damped Newton on the grid of a Problem."""

    def __init__(self, prob: Problem, cfg: Optional[SolverConfig] = None):
        self.prob = prob
        self.cfg = cfg or SolverConfig()
        self.grid = prob.grid
        self.spec = prob.spec
        self.threads = settings.THREADS
        self._ilu = None
        self.ilu_factorizations = 0
        self._interior_hessian = {
            key: self.grid.interior_block(op) for key, op in self.grid.hessian_ops.items()
        }
        self._interior_gradient = [self.grid.interior_block(op) for op in self.grid.gradient_ops]

    # pointwise evaluation

    def state(self, u: np.ndarray, with_coeffs: bool = False) -> NodeState:
        grad = self.grid.gradient(u)
        hess = self.grid.hessian(u)
        parts = self._map_chunks(grad, hess, with_coeffs)
        merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
        return NodeState(u=np.asarray(u, dtype=float), grad=grad, hess=hess, **merged)

    def _map_chunks(self, grad: np.ndarray, hess: np.ndarray, with_coeffs: bool) -> List[Dict]:
        N = len(grad)
        workers = min(self.threads, max(1, N // MIN_CHUNK))
        if workers <= 1:
            return [self._pointwise(grad, hess, with_coeffs)]
        chunks = np.array_split(np.arange(N), workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda idx: self._pointwise(grad[idx], hess[idx], with_coeffs, int(idx[0])), chunks))

    def _pointwise(self, grad: np.ndarray, hess: np.ndarray, with_coeffs: bool, offset: int = 0) -> Dict:
        pt = GraphPoint(grad, hess)
        jet = graph_jet(pt)
        margin = np.asarray(min_p_sum(jet.kappa, self.spec))
        out = {"margin": margin, "kappa": jet.kappa, "nu": jet.nu}
        if not np.all(margin > 0):
            if with_coeffs:
                local = int(np.argmin(margin))
                node = offset + local
                raise NotInConeError(f"node {node} is not admissible (margin {margin[local]:.3e})",
                                     index=node, margin=float(margin[local]))
            out["value"] = np.full(len(margin), np.nan)
            return out
        if with_coeffs:
            coeffs = pde_coeffs(pt, self.spec)
            out.update(value=np.atleast_1d(coeffs.value), Gij=coeffs.Gij, Gs=coeffs.Gs, dNu=coeffs.dNu)
        else:
            out["value"] = np.atleast_1d(tilde_jet(jet.kappa, self.spec).value_Ft)
        return out

    def residual(self, st: NodeState, rhs: HomotopyRHS):
        value, fz, fnu = rhs(self.grid.points, st.u, st.nu)
        return st.value - value, fz, fnu

    # initial guess

    def initial_guess(self, scale: float = 1.0) -> np.ndarray:
        """u0 = eps * normalized phi with eps = 0.1 * inradius; convex, hence admissible."""
        eps = INITIAL_GUESS_SCALE * self.prob.dom.inradius() * scale
        u0 = eps * self.prob.dom.normalized_phi(self.grid.points)
        st = self.state(u0)
        if np.any(st.margin < self.cfg.eps_adm):
            node = int(np.argmin(st.margin))
            raise InitialGuessError(
                f"initial guess is not admissible at node {node} "
                f"(x={self.grid.points[node].tolist()}, margin {st.margin[node]:.3e})",
                node=node,
            )
        return u0

    # Newton

    def jacobian(self, st: NodeState, fz: np.ndarray, fnu: np.ndarray) -> sparse.csr_matrix:
        """
        J = sum G^ij D_ij + sum_s (G^s - sum_j f~_nu_j dnu_j/du_s) D_s - diag(f~_z)
        """
        n = self.spec.n
        J = sparse.diags(-fz)
        for (d, e), op in self._interior_hessian.items():
            coeff = st.Gij[:, d, e] if d == e else 2.0 * st.Gij[:, d, e]
            J = J + sparse.diags(coeff) @ op
        drift = st.Gs - np.einsum("nj,njs->ns", fnu, st.dNu)
        for s in range(n):
            J = J + sparse.diags(drift[:, s]) @ self._interior_gradient[s]
        return J.tocsr()

    def direct_solve_limit(self) -> int:
        if self.spec.n == 2:
            return settings.DIRECT_SOLVE_MAX_UNKNOWNS
        return settings.DIRECT_SOLVE_MAX_UNKNOWNS_3D

    def _linear_solve(self, J: sparse.csr_matrix, rhs: np.ndarray) -> np.ndarray:
        """
        Solve the row-equilibrated system D J delta = D rhs, D = 1 / max |row|.
        Accepted when |D (J delta - rhs)|_2 <= linear_tol * |D rhs|_2.
        """
        N = J.shape[0]
        row = abs(J).max(axis=1).toarray().reshape(-1)
        A = (sparse.diags(1.0 / np.where(row > 0, row, 1.0)) @ J).tocsc()
        b = rhs / np.where(row > 0, row, 1.0)
        b_norm = float(np.linalg.norm(b))
        if b_norm == 0.0:
            return np.zeros(N)

        def relative_residual(delta: np.ndarray) -> float:
            return float(np.linalg.norm(A @ delta - b)) / b_norm

        try:
            if N <= self.direct_solve_limit():
                lu = splinalg.splu(A)
                delta = lu.solve(b)
                for _ in range(REFINEMENT_STEPS):
                    if relative_residual(delta) <= self.cfg.linear_tol:
                        break
                    delta = delta + lu.solve(b - A @ delta)
            else:
                delta = self._krylov_solve(A, b)
        except (RuntimeError, ValueError) as e:
            raise LinearSolveError(f"linear solve failed: {e}") from e

        if not np.all(np.isfinite(delta)):
            raise LinearSolveError("linear solve produced non-finite values")
        residual = relative_residual(delta)
        if residual > self.cfg.linear_tol:
            raise LinearSolveError(f"linear solve relative residual {residual:.3e} exceeds {self.cfg.linear_tol:.1e}")
        return delta

    def _krylov_solve(self, A: sparse.csc_matrix, b: np.ndarray) -> np.ndarray:
        """ILU-preconditioned GMRES; the factorization is kept for the rest of the homotopy step."""
        info = 0
        for _ in range(2):
            fresh = self._ilu is None
            if fresh:
                self._ilu = splinalg.spilu(A, drop_tol=ILU_DROP_TOL, fill_factor=ILU_FILL_FACTOR)
                self.ilu_factorizations += 1
            precond = splinalg.LinearOperator(A.shape, self._ilu.solve)
            delta, info = splinalg.gmres(A, b, M=precond, rtol=0.1 * self.cfg.linear_tol, atol=0.0,
                                         restart=GMRES_RESTART, maxiter=GMRES_MAXITER)
            if info == 0:
                return delta
            self._ilu = None
            if fresh:
                break
            logger.debug("GMRES stalled with a reused preconditioner (info=%d); refactoring", info)
        raise LinearSolveError(f"GMRES did not converge (info={info})")

    def newton_solve(self, u: np.ndarray, rhs: HomotopyRHS) -> NewtonResult:
        cfg = self.cfg
        self._ilu = None
        st = self.state(u)
        if np.any(st.margin < cfg.eps_adm):
            node = int(np.argmin(st.margin))
            raise NotInConeError(
                f"start is not admissible at node {node} (margin {st.margin[node]:.3e})",
                index=node, margin=float(st.margin[node]),
            )
        try:
            R, fz, fnu = self.residual(st, rhs)
        except ExprDomainError as e:
            raise NewtonDivergenceError(str(e)) from e
        res = float(np.max(np.abs(R)))
        history = [res]

        for iteration in range(cfg.max_newton + 1):
            if res <= cfg.tol_residual:
                return NewtonResult(st.u, iteration, res, float(st.margin.min()), history)
            if iteration == cfg.max_newton:
                break
            st = self.state(st.u, with_coeffs=True)
            delta = self._linear_solve(self.jacobian(st, fz, fnu), -R)

            alpha = 1.0
            for _ in range(cfg.max_step_halvings + 1):
                candidate = self.state(st.u + alpha * delta)
                if np.min(candidate.margin) >= cfg.eps_adm:
                    try:
                        R_new, fz_new, fnu_new = self.residual(candidate, rhs)
                    except ExprDomainError:
                        R_new = None
                    if R_new is not None:
                        res_new = float(np.max(np.abs(R_new)))
                        if res_new <= (1.0 - cfg.armijo * alpha) * res:
                            break
                alpha *= 0.5
            else:
                raise LineSearchError(
                    f"no admissible descent step after {cfg.max_step_halvings} halvings (residual {res:.3e})"
                )

            logger.debug("newton %d: residual %.3e -> %.3e, step %.4g, margin %.3e",
                         iteration + 1, res, res_new, alpha, float(candidate.margin.min()))
            st, R, fz, fnu, res = candidate, R_new, fz_new, fnu_new, res_new
            history.append(res)

        raise NewtonDivergenceError(
            f"residual {res:.3e} above {cfg.tol_residual:.1e} after {cfg.max_newton} iterations"
        )

    # homotopy

    def solve(self, start_scale: float = 1.0) -> Tuple[np.ndarray, SolveReport]:
        prob, cfg = self.prob, self.cfg
        hypothesis = hypothesis_report(prob)
        if not hypothesis.passed:
            raise HypothesisError("; ".join(hypothesis.violations))
        for warning in hypothesis.warnings:
            logger.warning(warning)

        u = self.initial_guess(start_scale)
        g0 = self.state(u).value
        t, dt = 0.0, 1.0 / cfg.homotopy_steps
        failures = 0
        total_iterations = 0
        trace: List[Tuple[float, float]] = [(0.0, 0.0)]

        while t < 1.0:
            t_next = min(1.0, t + dt)
            try:
                result = self.newton_solve(u, HomotopyRHS(prob.f, self.spec, g0, t_next))
            except (SolverError, NotInConeError) as e:
                failures += 1
                logger.info("homotopy step t=%.6g failed (%s); halving step", t_next, e)
                if failures >= cfg.max_step_halvings:
                    raise HomotopyStallError(
                        f"homotopy stalled at t={t:.6g} after {failures} consecutive failed steps: {e}",
                        last_t=t, trace=trace,
                    ) from e
                dt *= 0.5
                continue
            u, t = result.u, t_next
            failures = 0
            total_iterations += result.iterations
            trace.append((t, result.residual))
            logger.info("homotopy t=%.6g: %d newton iterations, residual %.3e, margin %.3e",
                        t, result.iterations, result.residual, result.margin)
            dt = min(2.0 * dt, 1.0 / cfg.homotopy_steps)

        return u, self.report(u, g0, total_iterations, trace, hypothesis)

    def report(self, u: np.ndarray, g0: np.ndarray, iterations: int,
               trace: List[Tuple[float, float]], hypothesis: Optional[HypothesisReport] = None) -> SolveReport:
        cfg = self.cfg
        st = self.state(u)
        R, _, _ = self.residual(st, HomotopyRHS(self.prob.f, self.spec, g0, 1.0))
        residual_sup = float(np.max(np.abs(R)))
        margin_min = float(st.margin.min())
        curvature = np.max(np.abs(st.kappa), axis=1)
        interior = float(np.max(np.maximum(-u, 0.0) ** cfg.beta_diag * curvature))

        comparison_ok = bool(np.max(u) <= COMPARISON_UPPER_TOL)
        sub_verified = None
        if self.prob.subsolution is not None:
            ub = subsolution_field(self.prob)
            sub_report = check_subsolution(ub, self.prob)
            sub_verified = sub_report.ok
            if sub_verified:
                comparison_ok = comparison_ok and bool(np.min(u - ub) >= -COMPARISON_LOWER_TOL)
            else:
                logger.warning("subsolution failed verification (worst margin %.3e at node %d)",
                               sub_report.worst_margin, sub_report.worst_node)

        return SolveReport(
            converged=residual_sup <= cfg.tol_residual and margin_min >= cfg.eps_adm,
            newton_iterations_total=iterations,
            residual_sup=residual_sup,
            adm_margin_min=margin_min,
            sup_grad=float(np.max(np.linalg.norm(st.grad, axis=1))),
            sup_kappa=float(curvature.max()),
            interior_quantity=interior,
            beta=cfg.beta_diag,
            comparison_ok=comparison_ok,
            subsolution_verified=sub_verified,
            homotopy_trace=trace,
            final_t=trace[-1][0],
            node_count=self.grid.node_count,
            h=self.grid.h,
            hypothesis=hypothesis,
        )


def hypothesis_report(prob: Problem) -> HypothesisReport:
    """Sample f over Omega x [u_min, 0] x upper normals, u_min = -(largest half-width)."""
    u_min = -float(np.max(prob.dom.half_widths()))
    env = sample_envs(prob.grid.points, u_min, settings.HYPOTHESIS_SAMPLES, settings.HYPOTHESIS_SEED)
    return check_hypotheses(prob.f, env, prob.spec.p)


def initial_guess(prob: Problem, cfg: Optional[SolverConfig] = None) -> np.ndarray:
    return DirichletSolver(prob, cfg).initial_guess()


def newton_solve(prob: Problem, u: np.ndarray, rhs: HomotopyRHS, cfg: Optional[SolverConfig] = None) -> NewtonResult:
    return DirichletSolver(prob, cfg).newton_solve(u, rhs)


def solve(prob: Problem, cfg: Optional[SolverConfig] = None) -> Tuple[np.ndarray, SolveReport]:
    return DirichletSolver(prob, cfg).solve()


def subsolution_field(prob: Problem) -> np.ndarray:
    nu = np.zeros((prob.grid.node_count, prob.spec.n + 1))
    nu[:, -1] = 1.0
    env = Env(prob.grid.points, np.zeros(prob.grid.node_count), nu)
    return np.asarray(evaluate(prob.subsolution, env), dtype=float)


def check_subsolution(ub: np.ndarray, prob: Problem) -> SubsolutionReport:
    """
    ub is a subsolution when every node is admissible and F(kappa[ub]) >= f(x, ub, nu[ub]) - 1e-10.
    The worst margin is the smallest p-sum at an inadmissible node, else the smallest F - f.
    """
    solver = DirichletSolver(prob)
    st = solver.state(ub)
    if not st.admissible:
        node = int(np.argmin(st.margin))
        return SubsolutionReport(ok=False, admissible=False, worst_margin=float(st.margin[node]), worst_node=node)
    try:
        f = np.asarray(evaluate(prob.f, Env(prob.grid.points, st.u, st.nu)))
    except ExprDomainError as e:
        logger.warning("f undefined on the subsolution: %s", e)
        return SubsolutionReport(ok=False, admissible=True, worst_margin=float("-inf"), worst_node=0)
    gap = np.asarray(eval_F(st.kappa, prob.spec)) - f
    node = int(np.argmin(gap))
    return SubsolutionReport(
        ok=bool(gap[node] >= -SUBSOLUTION_TOL),
        admissible=True,
        worst_margin=float(gap[node]),
        worst_node=node,
    )


def uniqueness_check(prob: Problem, cfg: Optional[SolverConfig] = None) -> Dict[str, float]:
    """Solve from two admissible starts (full and half initial-guess scale) and compare."""
    cfg = cfg or SolverConfig()
    solver = DirichletSolver(prob, cfg)
    first, _ = solver.solve(start_scale=1.0)
    second, _ = solver.solve(start_scale=0.5)
    difference = float(np.max(np.abs(first - second)))
    tolerance = 10.0 * cfg.tol_residual
    logger.info("uniqueness check: sup difference %.3e (tolerance %.1e)", difference, tolerance)
    return {"difference": difference, "tolerance": tolerance, "passed": difference <= tolerance}
