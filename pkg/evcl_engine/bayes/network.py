
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from ..autograd import ops
from ..autograd.node import Node, as_node, parameter
from ..config import Config
from ..errors import DimensionError, DomainError
from ..utils.seeding import rng_for

logger = logging.getLogger(__name__)

# (layer name, "w" | "b"): the unit along which params, snapshots and Fisher align.
ParamKey = Tuple[str, str]

HEAD_MODES = ("single", "multi")


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int
    hidden: Tuple[int, ...]
    output_dim: int
    head_mode: str = "single"
    num_heads: int = 1
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim <= 0 or self.output_dim <= 0 or any(h <= 0 for h in self.hidden):
            raise DimensionError("NetworkSpec", (self.input_dim, *self.hidden, self.output_dim))
        if self.head_mode not in HEAD_MODES:
            raise DomainError(f"head_mode must be one of {HEAD_MODES}, got '{self.head_mode}'")
        if self.head_mode == "single" and self.num_heads != 1:
            raise DomainError(f"single-head network cannot have {self.num_heads} heads")
        if self.num_heads < 1:
            raise DomainError("num_heads must be >= 1")
        if self.activation != "relu":
            raise DomainError(f"Unsupported activation '{self.activation}'")

    def layer_shapes(self) -> List[Tuple[str, int, int]]:
        dims = (self.input_dim, *self.hidden)
        layers = [(f"hidden{i}", dims[i], dims[i + 1]) for i in range(len(self.hidden))]
        layers += [(f"head{k}", dims[-1], self.output_dim) for k in range(self.num_heads)]
        return layers

    def parameter_shapes(self) -> List[Tuple[ParamKey, Tuple[int, ...]]]:
        shapes = []
        for name, din, dout in self.layer_shapes():
            shapes.append(((name, "w"), (din, dout)))
            shapes.append(((name, "b"), (dout,)))
        return shapes

    def head_for_task(self, task_head: int) -> int:
        return 0 if self.head_mode == "single" else task_head


@dataclass
class LayerParams:
    """Mean-field Gaussian over one dense layer; sigma^2 = exp(rho)."""
    name: str
    w_mu: Node
    w_rho: Node
    b_mu: Node
    b_rho: Node

    def nodes(self) -> List[Node]:
        return [self.w_mu, self.w_rho, self.b_mu, self.b_rho]

    def means(self) -> List[Node]:
        return [self.w_mu, self.b_mu]


@dataclass
class VariationalParams:
    spec: NetworkSpec
    shared: List[LayerParams]
    heads: List[LayerParams]
    _by_name: dict = field(init=False, repr=False)

    def __post_init__(self):
        self._by_name = {layer.name: layer for layer in self.layers()}

    def layers(self) -> List[LayerParams]:
        return list(self.shared) + list(self.heads)

    def layer(self, name: str) -> LayerParams:
        return self._by_name[name]

    def head(self, index: int) -> LayerParams:
        if not 0 <= index < len(self.heads):
            raise DomainError(f"head index {index} out of range for {len(self.heads)} head(s)")
        return self.heads[index]

    def entries(self) -> Iterator[Tuple[ParamKey, Node, Node]]:
        """(key, mu, rho) in a fixed order shared by snapshots and Fisher estimates."""
        for layer in self.layers():
            yield (layer.name, "w"), layer.w_mu, layer.w_rho
            yield (layer.name, "b"), layer.b_mu, layer.b_rho

    def trainable(self, head: Optional[int] = None, means_only: bool = False) -> List[Node]:
        """Shared layers plus one head (all heads when head is None)."""
        layers = list(self.shared) + (list(self.heads) if head is None else [self.head(head)])
        if means_only:
            return [n for layer in layers for n in layer.means()]
        return [n for layer in layers for n in layer.nodes()]

    def copy(self) -> "VariationalParams":
        def _clone(layer: LayerParams) -> LayerParams:
            return LayerParams(layer.name, *(parameter(n.value) for n in layer.nodes()))
        return VariationalParams(self.spec, [_clone(l) for l in self.shared], [_clone(l) for l in self.heads])

    def checksum(self, layer_name: str) -> str:
        digest = hashlib.sha256()
        for node in self.layer(layer_name).nodes():
            digest.update(node.value.tobytes())
        return digest.hexdigest()

    @property
    def size(self) -> int:
        return sum(mu.value.size for _, mu, _ in self.entries())


def init_posterior(spec: NetworkSpec, seed: int,
                   mean_std: float = Config.INIT_MEAN_STD,
                   log_variance: float = Config.INIT_LOG_VARIANCE) -> VariationalParams:
    """mu ~ N(0, mean_std^2) without truncation, rho = log_variance everywhere."""
    rng = rng_for(seed)
    layers = []
    for name, din, dout in spec.layer_shapes():
        layers.append(LayerParams(
            name=name,
            w_mu=parameter(rng.normal(0.0, mean_std, size=(din, dout))),
            w_rho=parameter(np.full((din, dout), log_variance)),
            b_mu=parameter(rng.normal(0.0, mean_std, size=(dout,))),
            b_rho=parameter(np.full((dout,), log_variance)),
        ))
    n_shared = len(spec.hidden)
    return VariationalParams(spec, layers[:n_shared], layers[n_shared:])


def _check_input(params: VariationalParams, x) -> Node:
    x = as_node(x)
    if x.value.ndim != 2 or x.shape[1] != params.spec.input_dim:
        raise DimensionError("forward", x.shape, (None, params.spec.input_dim))
    return x


def _lrt_layer(h: Node, layer: LayerParams, rng: np.random.Generator) -> Node:
    mean = h @ layer.w_mu + layer.b_mu
    var = ops.square(h) @ ops.exp(layer.w_rho) + ops.exp(layer.b_rho)
    eps = rng.standard_normal(mean.shape)
    return mean + ops.sqrt(var) * eps


def forward_lrt(params: VariationalParams, x, head: int = 0,
                seed: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> Node:
    """
    Sampled logits under local reparameterisation. Each pre-activation is drawn as
    m + sqrt(v) * eps with m = x mu_W + mu_b and v = x^2 sigma^2_W + sigma^2_b, so the
    noise is independent per row and gradients reach both mu and rho.
    """
    if rng is None:
        rng = rng_for(seed)
    h = _check_input(params, x)
    out_layer = params.head(head)
    for layer in params.shared:
        h = ops.relu(_lrt_layer(h, layer, rng))
    return _lrt_layer(h, out_layer, rng)


def forward_mean(params: VariationalParams, x, head: int = 0) -> Node:
    """Deterministic logits at theta = mu."""
    h = _check_input(params, x)
    out_layer = params.head(head)
    for layer in params.shared:
        h = ops.relu(h @ layer.w_mu + layer.b_mu)
    return h @ out_layer.w_mu + out_layer.b_mu


def predict(params: VariationalParams, x, head: int, n_samples: int, seed: int,
            chunk_size: int = 4096) -> np.ndarray:
    """Class probabilities averaged over n_samples independent sampled forward passes."""
    if n_samples < 1:
        raise DomainError(f"predict needs n_samples >= 1, got {n_samples}")
    x = np.asarray(x, dtype=np.float64)
    probs = np.zeros((x.shape[0], params.spec.output_dim))
    for s in range(n_samples):
        rng = rng_for(seed, s)
        for start in range(0, x.shape[0], chunk_size):
            logits = forward_lrt(params, x[start:start + chunk_size], head, rng=rng).value
            probs[start:start + chunk_size] += ops.softmax(logits)
    return probs / n_samples


def accuracy(params: VariationalParams, x, y, head: int, n_samples: int, seed: int) -> float:
    probs = predict(params, x, head, n_samples, seed)
    return float(np.mean(np.argmax(probs, axis=1) == np.asarray(y)))
