"""
Pointwise graph calculus: from (Du, D^2u) to the geometric quantities of the graph
and the linearization coefficients of G(D^2u, Du) = F~(a).

All functions accept a single point (grad of shape (n,), hess of shape (n, n)) or a
batch (grad (..., n), hess (..., n, n)); the solver passes every grid node at once.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from app.services.symfunc import PSpec, min_p_sum, spectral_decomposition, tilde_jet

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphPoint:
    grad: np.ndarray
    hess: np.ndarray

    def __post_init__(self):
        grad = np.asarray(self.grad, dtype=float)
        hess = np.asarray(self.hess, dtype=float)
        n = grad.shape[-1]
        if hess.shape[-2:] != (n, n) or hess.shape[:-2] != grad.shape[:-1]:
            raise ValueError(f"hess shape {hess.shape} does not match grad shape {grad.shape}")
        scale = 1.0 + np.max(np.abs(hess), initial=0.0)
        if np.max(np.abs(hess - np.swapaxes(hess, -1, -2)), initial=0.0) > 1e-12 * scale:
            raise ValueError("hess must be symmetric")
        object.__setattr__(self, "grad", grad)
        object.__setattr__(self, "hess", hess)

    @property
    def n(self) -> int:
        return self.grad.shape[-1]


@dataclass(frozen=True)
class GraphJet:
    w: Union[float, np.ndarray]
    gLower: np.ndarray
    gUpper: np.ndarray
    gammaLower: np.ndarray
    gammaUpper: np.ndarray
    a: np.ndarray
    kappa: np.ndarray
    frame: np.ndarray
    nu: np.ndarray
    hLower: np.ndarray


@dataclass(frozen=True)
class PDECoefficients:
    value: Union[float, np.ndarray]
    Gij: np.ndarray
    Gs: np.ndarray
    dNu: np.ndarray
    dA: np.ndarray
    jet: GraphJet


def _outer(v: np.ndarray) -> np.ndarray:
    return v[..., :, None] * v[..., None, :]


def _scalar(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def graph_jet(pt: GraphPoint) -> GraphJet:
    """Metric, square-root metric, curvature matrix a_ij and upward normal of the graph."""
    Du, D2u = pt.grad, pt.hess
    eye = np.eye(pt.n)
    w = np.asarray(np.sqrt(1.0 + np.sum(Du * Du, axis=-1)))
    w1 = w[..., None, None]
    uu = _outer(Du)

    gamma_upper = eye - uu / (w1 * (1.0 + w1))
    a = gamma_upper @ D2u @ gamma_upper / w1
    a = 0.5 * (a + np.swapaxes(a, -1, -2))
    kappa, frame = spectral_decomposition(a)

    nu = np.concatenate([-Du / w[..., None], (1.0 / w)[..., None]], axis=-1)
    return GraphJet(
        w=_scalar(w),
        gLower=eye + uu,
        gUpper=eye - uu / (w1 * w1),
        gammaLower=eye + uu / (1.0 + w1),
        gammaUpper=gamma_upper,
        a=a,
        kappa=kappa,
        frame=frame,
        nu=nu,
        hLower=D2u / w1,
    )


def shape_operator(pt: GraphPoint) -> np.ndarray:
    """The nonsymmetric curvature matrix (1/w) g^{ik} u_kj, isospectral to a_ij."""
    w = np.asarray(np.sqrt(1.0 + np.sum(pt.grad * pt.grad, axis=-1)))[..., None, None]
    g_upper = np.eye(pt.n) - _outer(pt.grad) / (w * w)
    return g_upper @ pt.hess / w


def pde_coeffs(pt: GraphPoint, spec: PSpec) -> PDECoefficients:
    """
    Value and first derivatives of G(D^2u, Du) = F~(a):

      G^ij = (1/w) gamma^{is} F~^{st} gamma^{tj}
      G^s  = -(u_s/w^2) sum_i F~_i kappa_i
             - 2/(w(1+w)) sum F~^{ij} a_it (w u_t gamma^{sj} + u_j gamma^{ts})

    Raises NotInConeError when some point is not admissible.
    """
    jet = graph_jet(pt)
    tj = tilde_jet(jet.kappa, spec)
    b = jet.frame
    dA = np.einsum("...ik,...k,...jk->...ij", b, tj.grad_diag, b)

    Du = pt.grad
    w = np.asarray(jet.w)
    w1 = w[..., None, None]
    gamma = jet.gammaUpper
    Gij = gamma @ dA @ gamma / w1
    Gij = 0.5 * (Gij + np.swapaxes(Gij, -1, -2))

    euler = np.asarray(np.einsum("...ij,...ji->...", dA, jet.a))
    col = Du[..., :, None]
    bracket = w1 * (gamma @ dA @ jet.a @ col) + gamma @ jet.a @ dA @ col
    Gs = (
        -(Du * np.asarray(euler / (w * w))[..., None])
        - np.asarray(2.0 / (w * (1.0 + w)))[..., None] * bracket[..., 0]
    )

    return PDECoefficients(
        value=tj.value_Ft,
        Gij=Gij,
        Gs=Gs,
        dNu=normal_derivative(Du),
        dA=dA,
        jet=jet,
    )


def normal_derivative(grad: np.ndarray) -> np.ndarray:
    """d nu_j / d u_k for nu = (-Du, 1)/w, shape (..., n+1, n)."""
    Du = np.asarray(grad, dtype=float)
    n = Du.shape[-1]
    w = np.asarray(np.sqrt(1.0 + np.sum(Du * Du, axis=-1)))[..., None, None]
    top = -np.eye(n) / w + _outer(Du) / w ** 3
    last = -Du[..., None, :] / w ** 3
    return np.concatenate([top, last], axis=-2)


def admissibility_margin(pt: GraphPoint, spec: PSpec):
    """Smallest p-sum of the principal curvatures; positive iff the point is admissible."""
    return min_p_sum(graph_jet(pt).kappa, spec)
