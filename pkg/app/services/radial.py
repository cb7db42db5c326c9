"""
Rotationally symmetric reference solver.

For u(x) = U(|x|) the principal curvatures are kappa_rad = U''/w^3 (once) and
kappa_tan = U'/(rho w) (n-1 times), and the p-subset product reduces to

    F = (kappa_rad + (p-1) kappa_tan)^C(n-1, p-1) * (p kappa_tan)^C(n-1, p)

so F = f can be solved for kappa_rad pointwise and integrated as an ODE in rho.
U(0) is found by shooting so that U(r) = 0.
"""

import logging
from dataclasses import dataclass
from math import comb
from typing import List, Union

import numpy as np
from scipy.integrate import solve_ivp

from app.exceptions import HypothesisError, RadialConeExitError, ShootingError
from app.services.fexpr import Env, Expr, evaluate, is_radial, parse
from app.services.symfunc import PSpec

logger = logging.getLogger(__name__)

START_FRACTION = 1e-4
BLOWUP_SLOPE = 1e8
MAX_BRACKET_DOUBLINGS = 60
MAX_BISECTIONS = 200


@dataclass
class RadialProfile:
    n: int
    p: int
    r: float
    u0: float
    kappa0: float
    rho0: float
    solution: object
    iterations: int

    def __call__(self, rho) -> np.ndarray:
        rho = np.abs(np.asarray(rho, dtype=float))
        series = self.u0 + 0.5 * self.kappa0 * rho * rho
        inner = np.clip(rho, self.rho0, self.r)
        return np.where(rho < self.rho0, series, self.solution.sol(inner)[0])

    def at_points(self, points: np.ndarray) -> np.ndarray:
        return self(np.linalg.norm(np.asarray(points, dtype=float), axis=-1))

    def table(self, count: int = 201) -> List[List[float]]:
        rho = np.linspace(0.0, self.r, count)
        return [[float(a), float(b)] for a, b in zip(rho, self(rho))]


class RadialShooter:
    def __init__(self, n: int, p: int, r: float, f: Expr):
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        if not is_radial(f, n):
            raise HypothesisError("radial solves need f depending only on r2, z and w")
        self.spec = PSpec(n, p)
        self.n, self.p, self.r, self.f = n, p, r, f
        self.a = comb(n - 1, p - 1)
        self.b = comb(n - 1, p)

    def _f(self, rho: float, u: float, w: float) -> float:
        x = np.zeros(self.n)
        x[0] = rho
        nu = np.zeros(self.n + 1)
        nu[-1] = 1.0 / w
        value = float(evaluate(self.f, Env(x, np.asarray(u), nu)))
        if not value > 0:
            raise HypothesisError(f"f must be positive, got {value} at rho={rho}, u={u}")
        return value

    def kappa_rad(self, kappa_tan: float, f: float) -> float:
        """Radial curvature solving F(kappa_rad, kappa_tan, ..., kappa_tan) = f."""
        p, a, b = self.p, self.a, self.b
        return (f / (p * kappa_tan) ** b) ** (1.0 / a) - (p - 1) * kappa_tan

    def _rhs(self, rho: float, y: np.ndarray) -> List[float]:
        u, slope = y
        w = np.sqrt(1.0 + slope * slope)
        kappa_tan = slope / (rho * w)
        if self.b > 0:
            kappa_tan = max(kappa_tan, 1e-300)
        return [slope, self.kappa_rad(kappa_tan, self._f(rho, u, w)) * w ** 3]

    def integrate(self, u0: float):
        kappa0 = self._f(0.0, u0, 1.0) ** (1.0 / self.spec.m) / self.p
        rho0 = START_FRACTION * self.r
        y0 = [u0 + 0.5 * kappa0 * rho0 ** 2, kappa0 * rho0]

        def blowup(rho, y):
            return BLOWUP_SLOPE - abs(y[1])
        blowup.terminal = True

        def cone_exit(rho, y):
            return y[1]
        cone_exit.terminal = True
        cone_exit.direction = -1

        sol = solve_ivp(self._rhs, (rho0, self.r), y0, method="DOP853", rtol=1e-12, atol=1e-14,
                        dense_output=True, events=(blowup, cone_exit))
        if sol.status == -1:
            raise ShootingError(f"radial integration failed from u0={u0:.6g}: {sol.message}")
        if self.b > 0 and len(sol.t_events[1]):
            raise RadialConeExitError(
                f"tangential curvature left the cone at rho={sol.t_events[1][0]:.6g} (u0={u0:.6g})"
            )
        if len(sol.t_events[0]):
            return np.inf, sol, kappa0, rho0
        return float(sol.y[0, -1]), sol, kappa0, rho0

    def shoot(self, tol: float) -> RadialProfile:
        hi = 0.0
        end_hi = self.integrate(hi)[0]
        if end_hi <= 0:
            raise ShootingError("u(r) is not positive for u(0) = 0")

        lo = -self.r
        for _ in range(MAX_BRACKET_DOUBLINGS):
            if self.integrate(lo)[0] < 0:
                break
            hi, lo = lo, 2.0 * lo
        else:
            raise ShootingError("no shooting bracket found")

        for iteration in range(1, MAX_BISECTIONS + 1):
            mid = 0.5 * (lo + hi)
            end, sol, kappa0, rho0 = self.integrate(mid)
            if abs(end) <= tol:
                logger.info("radial shooting converged: u(0)=%.12g after %d bisections", mid, iteration)
                return RadialProfile(self.n, self.p, self.r, mid, kappa0, rho0, sol, iteration)
            if end > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= 4.0 * np.finfo(float).eps * max(1.0, abs(lo)):
                break
        raise ShootingError(f"shooting did not reach |u(r)| <= {tol:g}")


def solve_radial(n: int, p: int, r: float, f: Union[Expr, str], tol: float = 1e-10) -> RadialProfile:
    expr = parse(f, n) if isinstance(f, str) else f
    return RadialShooter(n, p, r, expr).shoot(tol)
