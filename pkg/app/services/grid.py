"""
Cartesian discretization of a strictly convex domain Omega = {phi < 0}.

Interior nodes are lattice points i*h with phi < 0. Along each axis a node has two
arms; an arm is shortened to the boundary crossing when the lattice neighbour lies
outside Omega. Difference operators are assembled once as sparse matrices acting on
the extended vector [u at nodes; u at boundary crossings], with u = 0 on the
boundary unless boundary values are given explicitly.
"""

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import optimize, sparse

from app.exceptions import DomainError, ExprDomainError, GridError
from app.models import DomainConfig, DomainType
from app.services.fexpr import Env, evaluate, parse, variables

logger = logging.getLogger(__name__)

BISECTION_REL_TOL = 1e-12
CONVEXITY_SAMPLES_PER_AXIS = 9


class Domain:
    """Ball, ellipsoid or convex level set {phi < 0} in dimension n (2 or 3)."""

    def __init__(self, kind: DomainType, dim: int, radius: float = None, semi_axes=None,
                 phi_src: str = None, box: float = None):
        if dim not in (2, 3):
            raise DomainError(f"grid dimension must be 2 or 3, got {dim}")
        self.kind = DomainType(kind)
        self.dim = dim
        self.radius = radius
        self.semi_axes = None if semi_axes is None else np.asarray(semi_axes, dtype=float)
        self.box = box
        self.phi_expr = None
        self._phi_min = -1.0
        self._center = np.zeros(dim)

        if self.kind == DomainType.BALL:
            if radius is None or radius <= 0:
                raise DomainError("ball needs a positive radius")
        elif self.kind == DomainType.ELLIPSOID:
            if self.semi_axes is None or self.semi_axes.shape != (dim,) or np.any(self.semi_axes <= 0):
                raise DomainError(f"ellipsoid needs {dim} positive semi-axes")
        else:
            if phi_src is None or box is None or box <= 0:
                raise DomainError("levelset needs phi and a positive box half-width")
            try:
                self.phi_expr = parse(phi_src, dim)
            except Exception as e:
                raise DomainError(f"levelset phi could not be parsed: {e}") from e
            if any(kind not in ("x", "r2") for kind, _ in variables(self.phi_expr)):
                raise DomainError("levelset phi may only depend on x1..xn and r2")
            self._validate_levelset()

    @classmethod
    def from_config(cls, cfg: DomainConfig, n: int) -> "Domain":
        params = cfg.typed_params()
        if cfg.type == DomainType.BALL:
            return cls(cfg.type, n, radius=params.radius)
        if cfg.type == DomainType.ELLIPSOID:
            return cls(cfg.type, n, semi_axes=params.semi_axes)
        return cls(cfg.type, n, phi_src=params.phi, box=params.box)

    def phi(self, x: np.ndarray) -> np.ndarray:
        """Defining function, negative inside; vectorized over leading axes."""
        x = np.asarray(x, dtype=float)
        if self.kind == DomainType.BALL:
            return (np.sum(x * x, axis=-1) - self.radius ** 2) / self.radius ** 2
        if self.kind == DomainType.ELLIPSOID:
            return np.sum((x / self.semi_axes) ** 2, axis=-1) - 1.0
        nu = np.zeros(x.shape[:-1] + (self.dim + 1,))
        nu[..., -1] = 1.0
        try:
            return np.asarray(evaluate(self.phi_expr, Env(x, np.zeros(x.shape[:-1]), nu)))
        except ExprDomainError as e:
            raise DomainError(f"levelset phi undefined: {e}") from e

    def normalized_phi(self, x: np.ndarray) -> np.ndarray:
        """phi scaled so that its minimum over Omega is -1."""
        return self.phi(x) / abs(self._phi_min)

    def half_widths(self) -> np.ndarray:
        if self.kind == DomainType.BALL:
            return np.full(self.dim, self.radius)
        if self.kind == DomainType.ELLIPSOID:
            return self.semi_axes.copy()
        return np.full(self.dim, self.box)

    def inradius(self) -> float:
        if self.kind == DomainType.BALL:
            return float(self.radius)
        if self.kind == DomainType.ELLIPSOID:
            return float(self.semi_axes.min())
        return self._levelset_inradius()

    def ray_crossings(self, origins: np.ndarray, directions: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        """
        Distance t in (0, length] to the first zero of phi along each ray, by vectorized
        bisection to BISECTION_REL_TOL * length. phi must be negative at the origins and
        non-negative at origin + length * direction.
        """
        origins = np.atleast_2d(origins)
        lengths = np.broadcast_to(np.asarray(lengths, dtype=float), (len(origins),))
        lo = np.zeros(len(origins))
        hi = lengths.copy()
        start = self.phi(origins)
        end = self.phi(origins + hi[:, None] * directions)
        if np.any(start >= 0) or np.any(~(end >= -1e-12)):
            raise GridError("boundary bisection has no sign change on some arm")
        for _ in range(200):
            if np.all(hi - lo <= BISECTION_REL_TOL * lengths):
                break
            mid = 0.5 * (lo + hi)
            inside = self.phi(origins + mid[:, None] * directions) < 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        else:
            raise GridError("boundary bisection did not converge")
        return 0.5 * (lo + hi)

    def _validate_levelset(self) -> None:
        axes = [np.linspace(-self.box, self.box, CONVEXITY_SAMPLES_PER_AXIS)] * self.dim
        samples = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

        # Omega must sit strictly inside the box
        faces = samples[np.any(np.isclose(np.abs(samples), self.box), axis=1)]
        if np.any(self.phi(faces) <= 0):
            raise DomainError(f"levelset domain is not contained in the box of half-width {self.box}")

        step = 1e-4 * self.box
        eye = np.eye(self.dim) * step
        hess = np.empty((len(samples), self.dim, self.dim))
        for d in range(self.dim):
            for e in range(self.dim):
                hess[:, d, e] = (
                    self.phi(samples + eye[d] + eye[e]) - self.phi(samples + eye[d] - eye[e])
                    - self.phi(samples - eye[d] + eye[e]) + self.phi(samples - eye[d] - eye[e])
                ) / (4.0 * step * step)
        smallest = np.linalg.eigvalsh(0.5 * (hess + np.swapaxes(hess, 1, 2)))[:, 0]
        if np.any(smallest <= 0):
            raise DomainError(
                f"levelset phi is not strictly convex on the box (min Hessian eigenvalue {smallest.min():.3e})"
            )

        values = self.phi(samples)
        best = samples[int(np.argmin(values))]
        result = optimize.minimize(lambda x: float(self.phi(x)), best, method="Nelder-Mead",
                                   options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 4000})
        phi_min = min(float(result.fun), float(values.min()))
        if phi_min >= 0:
            raise DomainError("levelset domain is empty")
        self._phi_min = phi_min
        self._center = result.x if float(result.fun) <= float(values.min()) else best

    def _levelset_inradius(self) -> float:
        if self.dim == 2:
            angles = np.linspace(0.0, 2.0 * np.pi, 256, endpoint=False)
            directions = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        else:
            k = np.arange(1024) + 0.5
            polar = np.arccos(1.0 - 2.0 * k / len(k))
            azimuth = np.pi * (1.0 + 5.0 ** 0.5) * k
            directions = np.stack(
                [np.cos(azimuth) * np.sin(polar), np.sin(azimuth) * np.sin(polar), np.cos(polar)], axis=1
            )
        origins = np.repeat(self._center[None, :], len(directions), axis=0)
        reach = 2.0 * self.box * np.sqrt(self.dim)
        return float(self.ray_crossings(origins, directions, reach).min())


class Grid:
    """
    Interior nodes, arms and sparse finite-difference operators of a domain.

    Columns of every operator index the extended vector of length N + B: the N node
    values followed by the B boundary-crossing values.
    """

    def __init__(self, domain: Domain, h: float, indices: np.ndarray, points: np.ndarray,
                 columns: np.ndarray, arms: np.ndarray, boundary_points: np.ndarray,
                 lookup: np.ndarray, offset: int):
        self.domain = domain
        self.h = h
        self.n = domain.dim
        self.indices = indices
        self.points = points
        self.columns = columns      # (N, n, 2): minus / plus neighbour column
        self.arms = arms            # (N, n, 2): minus / plus arm length
        self.boundary_points = boundary_points
        self._lookup = lookup
        self._offset = offset
        self.mixed_fallbacks = 0
        self._build_operators()

    @property
    def node_count(self) -> int:
        return len(self.points)

    @property
    def boundary_count(self) -> int:
        return len(self.boundary_points)

    def node_at(self, multi_index) -> int:
        """Node number of a lattice multi-index, or -1 when it is not an interior node."""
        key = np.asarray(multi_index, dtype=int) + self._offset
        if np.any(key < 0) or np.any(key >= np.array(self._lookup.shape)):
            return -1
        return int(self._lookup[tuple(key)])

    def extend(self, u: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.node_count,):
            raise GridError(f"field has {u.shape} values, grid has {self.node_count} nodes")
        if boundary_values is None:
            boundary_values = np.zeros(self.boundary_count)
        return np.concatenate([u, np.asarray(boundary_values, dtype=float)])

    def sample(self, func: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
        """Values of func at the nodes and at the boundary crossings."""
        return np.asarray(func(self.points), dtype=float), np.asarray(func(self.boundary_points), dtype=float)

    def gradient(self, u: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        ext = self.extend(u, boundary_values)
        return np.stack([op @ ext for op in self.gradient_ops], axis=-1)

    def hessian(self, u: np.ndarray, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        ext = self.extend(u, boundary_values)
        out = np.empty((self.node_count, self.n, self.n))
        for (d, e), op in self.hessian_ops.items():
            out[:, d, e] = out[:, e, d] = op @ ext
        return out

    def raw_mixed(self, u: np.ndarray, d: int, e: int, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
        """Unsymmetrized mixed derivative obtained by differencing gradient_e along d."""
        return self._raw_mixed_ops[(d, e)] @ self.extend(u, boundary_values)

    def interior_block(self, op: sparse.csr_matrix) -> sparse.csr_matrix:
        """Node-to-node part of an operator; boundary columns carry no unknowns."""
        return op[:, :self.node_count].tocsr()

    def field_rows(self, u: np.ndarray) -> List[list]:
        """CSV rows i1..in, x1..xn, u."""
        u = np.asarray(u, dtype=float)
        return [
            [int(k) for k in idx] + [float(x) for x in pt] + [float(val)]
            for idx, pt, val in zip(self.indices, self.points, u)
        ]

    def _build_operators(self) -> None:
        N, n, h = self.node_count, self.n, self.h
        shape = (N, N + self.boundary_count)
        rows = np.arange(N)

        self.gradient_ops: List[sparse.csr_matrix] = []
        second: List[sparse.csr_matrix] = []
        for d in range(n):
            hm, hp = self.arms[:, d, 0], self.arms[:, d, 1]
            cm, cp = self.columns[:, d, 0], self.columns[:, d, 1]
            den = hp * hm * (hp + hm)
            self.gradient_ops.append(sparse.csr_matrix((
                np.concatenate([hm * hm / den, -hp * hp / den, (hp * hp - hm * hm) / den]),
                (np.concatenate([rows, rows, rows]), np.concatenate([cp, cm, rows])),
            ), shape=shape))
            second.append(sparse.csr_matrix((
                np.concatenate([2.0 * hm / den, 2.0 * hp / den, -2.0 * (hp + hm) / den]),
                (np.concatenate([rows, rows, rows]), np.concatenate([cp, cm, rows])),
            ), shape=shape))

        self._raw_mixed_ops: Dict[Tuple[int, int], sparse.csr_matrix] = {}
        for d in range(n):
            for e in range(n):
                if d != e:
                    self._raw_mixed_ops[(d, e)] = self._ordered_mixed(d, e)

        self.hessian_ops: Dict[Tuple[int, int], sparse.csr_matrix] = {}
        for d in range(n):
            self.hessian_ops[(d, d)] = second[d]
            for e in range(d + 1, n):
                self.hessian_ops[(d, e)] = (
                    0.5 * (self._raw_mixed_ops[(d, e)] + self._raw_mixed_ops[(e, d)])
                ).tocsr()
        if self.mixed_fallbacks:
            logger.warning("%d mixed-derivative rows had no usable neighbour and were set to zero",
                           self.mixed_fallbacks)

    def _ordered_mixed(self, d: int, e: int) -> sparse.csr_matrix:
        """
        Mixed derivative u_de per node, by the first applicable rule:
        4-point cross; central or one-sided difference of gradient_e along d;
        the same along e of gradient_d; zero.
        """
        N, h = self.node_count, self.h
        shape = (N, N + self.boundary_count)
        unit = np.eye(self.n, dtype=int)

        diag = {}
        for sd in (-1, 1):
            for se in (-1, 1):
                diag[(sd, se)] = self._neighbours(self.indices + sd * unit[d] + se * unit[e])
        cross = np.all(np.stack([v >= 0 for v in diag.values()]), axis=0)

        rows, cols, vals = [], [], []
        idx = np.flatnonzero(cross)
        for (sd, se), sign in (((1, 1), 1.0), ((1, -1), -1.0), ((-1, 1), -1.0), ((-1, -1), 1.0)):
            rows.append(idx)
            cols.append(diag[(sd, se)][idx])
            vals.append(np.full(len(idx), sign / (4.0 * h * h)))
        result = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=shape
        )

        pending = ~cross
        along_d, used_d = self._difference_rows(d, pending)
        pending &= ~used_d
        along_e, used_e = self._difference_rows(e, pending)
        pending &= ~used_e
        self.mixed_fallbacks += int(np.count_nonzero(pending))

        return (result + along_d @ self.gradient_ops[e] + along_e @ self.gradient_ops[d]).tocsr()

    def _difference_rows(self, axis: int, mask: np.ndarray) -> Tuple[sparse.csr_matrix, np.ndarray]:
        """
        Node-to-node matrix differencing along `axis` for the masked nodes: central when
        both lattice neighbours are nodes, one-sided when only one is.
        """
        N, h = self.node_count, self.h
        minus = self.columns[:, axis, 0]
        plus = self.columns[:, axis, 1]
        has_minus = (minus < N) & mask
        has_plus = (plus < N) & mask
        central = has_minus & has_plus
        only_plus = has_plus & ~has_minus
        only_minus = has_minus & ~has_plus
        rows, cols, vals = [], [], []

        i = np.flatnonzero(central)
        rows += [i, i]
        cols += [plus[i], minus[i]]
        vals += [np.full(len(i), 0.5 / h), np.full(len(i), -0.5 / h)]

        i = np.flatnonzero(only_plus)
        rows += [i, i]
        cols += [plus[i], i]
        vals += [np.full(len(i), 1.0 / h), np.full(len(i), -1.0 / h)]

        i = np.flatnonzero(only_minus)
        rows += [i, i]
        cols += [i, minus[i]]
        vals += [np.full(len(i), 1.0 / h), np.full(len(i), -1.0 / h)]

        matrix = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
        )
        return matrix, central | only_plus | only_minus

    def _neighbours(self, multi_indices: np.ndarray) -> np.ndarray:
        keys = multi_indices + self._offset
        inside = np.all((keys >= 0) & (keys < np.array(self._lookup.shape)), axis=1)
        out = np.full(len(keys), -1)
        out[inside] = self._lookup[tuple(keys[inside].T)]
        return out


def build_grid(dom: Domain, h: float) -> Grid:
    """Classify lattice points, shorten boundary arms and assemble the stencils."""
    if h <= 0:
        raise GridError(f"grid spacing must be positive, got {h}")
    inradius = dom.inradius()
    if h >= inradius / 3.0:
        logger.warning("grid spacing h=%g is not below a third of the inradius %g", h, inradius)

    n = dom.dim
    K = np.floor(dom.half_widths() / h).astype(int) + 1
    offset = int(K.max()) + 1
    axes = [np.arange(-k, k + 1) for k in K]
    lattice = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    inside = dom.phi(lattice * h) < 0
    indices = lattice[inside]
    if len(indices) == 0:
        raise GridError(f"no interior lattice points at h={h}")
    points = indices * h
    N = len(indices)

    lookup = np.full((2 * offset + 1,) * n, -1, dtype=int)
    lookup[tuple((indices + offset).T)] = np.arange(N)

    columns = np.empty((N, n, 2), dtype=int)
    arms = np.full((N, n, 2), float(h))
    unit = np.eye(n, dtype=int)
    crossing_nodes, crossing_dirs, crossing_slots = [], [], []
    for d in range(n):
        for side, sign in enumerate((-1, 1)):
            keys = indices + sign * unit[d] + offset
            nb = lookup[tuple(keys.T)]
            columns[:, d, side] = nb
            outside = np.flatnonzero(nb < 0)
            crossing_nodes.append(outside)
            crossing_dirs.append(np.repeat((sign * unit[d])[None, :], len(outside), axis=0))
            crossing_slots.append(np.column_stack([outside, np.full(len(outside), d), np.full(len(outside), side)]))

    nodes = np.concatenate(crossing_nodes)
    directions = np.concatenate(crossing_dirs).astype(float)
    slots = np.concatenate(crossing_slots)
    if len(nodes):
        t = dom.ray_crossings(points[nodes], directions, h)
        if np.any(t <= 0) or np.any(t > h):
            raise GridError("boundary arm outside (0, h]")
        boundary_points = points[nodes] + t[:, None] * directions
        arms[slots[:, 0], slots[:, 1], slots[:, 2]] = t
        columns[slots[:, 0], slots[:, 1], slots[:, 2]] = N + np.arange(len(nodes))
    else:
        boundary_points = np.empty((0, n))

    grid = Grid(dom, h, indices, points, columns, arms, boundary_points, lookup, offset)
    logger.info("grid h=%g: %d interior nodes, %d boundary crossings", h, N, len(boundary_points))
    return grid


def fd_gradient(u: np.ndarray, g: Grid, node: int, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
    ext = g.extend(u, boundary_values)
    return np.array([(op[node] @ ext)[0] for op in g.gradient_ops])


def fd_hessian(u: np.ndarray, g: Grid, node: int, boundary_values: Optional[np.ndarray] = None) -> np.ndarray:
    ext = g.extend(u, boundary_values)
    out = np.empty((g.n, g.n))
    for (d, e), op in g.hessian_ops.items():
        out[d, e] = out[e, d] = (op[node] @ ext)[0]
    return out
