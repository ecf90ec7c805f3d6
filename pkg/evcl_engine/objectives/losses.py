
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.node import Node
from ..bayes.divergence import kl_diag_gaussian
from ..bayes.network import VariationalParams, forward_lrt
from ..bayes.snapshot import PosteriorSnapshot, check_aligned
from ..errors import AlignmentError, DatasetError, DomainError
from ..utils.seeding import rng_for
from .fisher import FisherDiag


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    nll: float
    kl: float
    ewc: float
    node: Node = field(repr=False, compare=False)

    def backward(self):
        self.node.backward()


def _unpack(batch) -> Tuple[np.ndarray, np.ndarray]:
    if hasattr(batch, "inputs"):
        x, y = batch.inputs, batch.labels
    else:
        x, y = batch
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if y.shape[0] == 0:
        raise DatasetError("Loss requested on an empty batch")
    return x, y


def expected_nll(params: VariationalParams, x: np.ndarray, y: np.ndarray, head: int,
                 mc_samples: int, seed: int) -> Node:
    """Mean-batch NLL averaged over mc_samples sampled passes (batch tiled, noise per row)."""
    if mc_samples < 1:
        raise DomainError(f"mc_samples must be >= 1, got {mc_samples}")
    logits = forward_lrt(params, np.tile(x, (mc_samples, 1)), head, rng=rng_for(seed))
    return ops.softmax_cross_entropy(logits, np.tile(y, mc_samples))


def breakdown(nll: Node, kl: Optional[Node] = None, ewc: Optional[Node] = None) -> LossBreakdown:
    total = nll if kl is None else nll + kl
    if ewc is not None:
        total = total + ewc
    return LossBreakdown(
        total=total.item(),
        nll=nll.item(),
        kl=kl.item() if kl is not None else 0.0,
        ewc=ewc.item() if ewc is not None else 0.0,
        node=total,
    )


def _vcl_terms(params, batch, prior, mc_samples, kl_scale, head, seed) -> Tuple[Node, Node]:
    x, y = _unpack(batch)
    check_aligned(params, prior, "prior")
    nll = expected_nll(params, x, y, head, mc_samples, seed)
    kl = kl_diag_gaussian(params, prior) * float(kl_scale)
    return nll, kl


def vcl_loss(params: VariationalParams, batch, prior: PosteriorSnapshot, mc_samples: int,
             kl_scale: float, head: int, seed: int) -> LossBreakdown:
    """Negative per-example ELBO: E_q[NLL] + kl_scale * KL(q || prior), kl_scale = 1/N_t."""
    nll, kl = _vcl_terms(params, batch, prior, mc_samples, kl_scale, head, seed)
    return breakdown(nll, kl)


def ewc_penalty(params: VariationalParams, anchor: PosteriorSnapshot, fisher: FisherDiag,
                lam: float) -> Node:
    """sum_i lam/2 F_i [(mu_i - mu*_i)^2 + (sigma^2_i - sigma*^2_i)^2]"""
    if lam < 0:
        raise DomainError(f"EWC lambda must be >= 0, got {lam}")
    check_aligned(params, anchor, "anchor")
    fisher.check_aligned(params)
    total = None
    for key, mu, rho in params.entries():
        weight = fisher.values[key]
        if not weight.any():
            continue
        drift = ops.square(mu - anchor.mu[key]) + ops.square(ops.exp(rho) - anchor.var[key])
        term = ops.sum(drift * weight)
        total = term if total is None else total + term
    if total is None:
        return Node(np.asarray(0.0))
    return total * (0.5 * lam)


def evcl_loss(params: VariationalParams, batch, prior: PosteriorSnapshot,
              anchor: Optional[PosteriorSnapshot], fisher: Optional[FisherDiag], lam: float,
              mc_samples: int, kl_scale: float, head: int, seed: int) -> LossBreakdown:
    """VCL loss plus the Fisher-weighted drift penalty; on the first task the penalty is 0."""
    if (anchor is None) != (fisher is None):
        raise AlignmentError("EWC anchor and Fisher estimate must be given together")
    if lam < 0:
        raise DomainError(f"EWC lambda must be >= 0, got {lam}")
    nll, kl = _vcl_terms(params, batch, prior, mc_samples, kl_scale, head, seed)
    ewc = None
    if anchor is not None and lam > 0:
        ewc = ewc_penalty(params, anchor, fisher, lam)
    return breakdown(nll, kl, ewc)
