
from dataclasses import dataclass, replace
from typing import Optional

from ..bayes.network import VariationalParams
from ..config import Config
from ..errors import ConfigError
from ..objectives.losses import LossBreakdown, breakdown, evcl_loss, ewc_penalty, expected_nll, vcl_loss

METHODS = ("evcl", "vcl", "vcl-random-coreset", "vcl-kcenter-coreset", "ewc", "coreset-only", "finetune")

CORESET_STRATEGY = {
    "vcl-random-coreset": "random",
    "vcl-kcenter-coreset": "k-center",
    "coreset-only": "random",
}
EWC_METHODS = ("evcl", "ewc")
# Point-estimate baselines: only mu is trained, sigma stays at its initial value.
POINT_METHODS = ("ewc", "finetune")


@dataclass(frozen=True)
class MethodConfig:
    method: str
    ewc_lambda: float = Config.EWC_LAMBDA
    coreset_size: int = 0
    mc_train_samples: int = Config.MC_TRAIN_SAMPLES
    mc_eval_samples: int = Config.MC_EVAL_SAMPLES
    epochs: int = Config.EPOCHS
    batch_size: int = Config.BATCH_SIZE
    learning_rate: float = Config.LEARNING_RATE
    seed: int = 0
    fisher_samples: int = Config.FISHER_SAMPLES
    ewc_online: bool = False
    coreset_epochs: Optional[int] = None
    # None: the task-0 prior is the initial posterior itself.
    prior_variance: Optional[float] = Config.PRIOR_VARIANCE
    label: Optional[str] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"Unknown method '{self.method}', expected one of {METHODS}")
        if self.uses_coreset and self.coreset_size <= 0:
            raise ConfigError(f"{self.method} needs coreset_size > 0")
        if not self.uses_coreset and self.coreset_size != 0:
            raise ConfigError(f"{self.method} does not use a coreset (coreset_size={self.coreset_size})")
        if self.ewc_lambda < 0:
            raise ConfigError(f"ewc_lambda must be >= 0, got {self.ewc_lambda}")
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError(f"Invalid optimisation settings: epochs={self.epochs}, "
                              f"batch_size={self.batch_size}, learning_rate={self.learning_rate}")
        if self.mc_train_samples < 1 or self.mc_eval_samples < 1 or self.fisher_samples < 1:
            raise ConfigError("Monte-Carlo and Fisher sample counts must be >= 1")
        if self.prior_variance is not None and self.prior_variance <= 0:
            raise ConfigError(f"prior_variance must be > 0, got {self.prior_variance}")

    @property
    def name(self) -> str:
        return self.label or self.method

    @property
    def uses_coreset(self) -> bool:
        return self.method in CORESET_STRATEGY

    @property
    def coreset_strategy(self) -> Optional[str]:
        return CORESET_STRATEGY.get(self.method)

    @property
    def uses_ewc(self) -> bool:
        return self.method in EWC_METHODS

    @property
    def trains_variance(self) -> bool:
        return self.method not in POINT_METHODS

    @property
    def train_samples(self) -> int:
        return self.mc_train_samples if self.trains_variance else 1

    def with_overrides(self, **changes) -> "MethodConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def baseline_loss_dispatch(config: MethodConfig, params: VariationalParams, batch, state,
                           head: int, kl_scale: float, seed) -> LossBreakdown:
    """
    evcl -> VCL + EWC penalty; vcl and coreset variants -> VCL;
    ewc -> NLL + EWC penalty (no KL); finetune -> NLL only.
    `state` supplies prior, anchor and fisher.
    """
    method = config.method
    if method == "evcl":
        return evcl_loss(params, batch, state.prior, state.anchor, state.fisher, config.ewc_lambda,
                         config.train_samples, kl_scale, head, seed)
    if method in ("vcl", "vcl-random-coreset", "vcl-kcenter-coreset", "coreset-only"):
        return vcl_loss(params, batch, state.prior, config.train_samples, kl_scale, head, seed)
    if method in POINT_METHODS:
        x, y = (batch.inputs, batch.labels) if hasattr(batch, "inputs") else batch
        nll = expected_nll(params, x, y, head, config.train_samples, seed)
        ewc = None
        if method == "ewc" and state.anchor is not None and config.ewc_lambda > 0:
            ewc = ewc_penalty(params, state.anchor, state.fisher, config.ewc_lambda)
        return breakdown(nll, None, ewc)
    raise ConfigError(f"Unknown method '{method}'")
