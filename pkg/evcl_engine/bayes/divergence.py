
import numpy as np

from ..autograd import ops
from ..autograd.node import Node
from .network import VariationalParams
from .snapshot import PosteriorSnapshot, check_aligned


def kl_diag_gaussian(q: VariationalParams, p: PosteriorSnapshot) -> Node:
    """
    KL(q || p) between factorised Gaussians, summed over every parameter:
    1/2 [s_q/s_p + (m_q - m_p)^2/s_p - 1 + ln s_p - rho_q], with s = sigma^2.
    Differentiable with respect to q's mu and rho.
    """
    check_aligned(q, p, "prior")
    total = None
    for key, mu, rho in q.entries():
        inv_var = 1.0 / p.var[key]
        term = (ops.exp(rho) * inv_var
                + ops.square(mu - p.mu[key]) * inv_var
                + (np.log(p.var[key]) - 1.0)
                - rho)
        term = ops.sum(term) * 0.5
        total = term if total is None else total + term
    return total
