
import asyncio
import logging
import uuid
from concurrent.futures import Executor, ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from ..bayes.network import NetworkSpec
from ..bayes.serialization import save_snapshot
from ..config import Config
from ..continual.methods import CORESET_STRATEGY, METHODS, MethodConfig
from ..continual.trainer import SequenceResult, run_task_sequence
from ..data.dataset import TaskStream
from ..data.loaders import load_stream
from ..errors import ConfigError
from ..objectives.fisher import save_fisher
from .metrics import MetricsRecord, MetricsWriter, records_for_row

logger = logging.getLogger(__name__)

BENCHMARKS = ("permuted-mnist", "split-mnist", "split-notmnist", "split-fashion", "split-cifar10", "synth")

# Keys of the shared `training` block that map onto MethodConfig fields.
TRAINING_KEYS = ("epochs", "batch_size", "learning_rate", "mc_train_samples", "mc_eval_samples",
                 "fisher_samples", "ewc_lambda", "coreset_size", "ewc_online", "coreset_epochs")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    benchmark: str
    data: Mapping[str, Any]
    hidden: Tuple[int, ...]
    methods: Tuple[MethodConfig, ...]
    seeds: Tuple[int, ...]
    output_dir: Path
    num_tasks: Optional[int] = None
    workers: int = 1
    fetch: Tuple[Mapping[str, Any], ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"Unknown benchmark '{self.benchmark}', expected one of {BENCHMARKS}")
        if not self.seeds:
            raise ConfigError("An experiment needs at least one seed")
        if not self.methods:
            raise ConfigError("An experiment needs at least one method")
        if not self.hidden or any(h <= 0 for h in self.hidden):
            raise ConfigError(f"Invalid hidden widths {self.hidden}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        labels = [m.name for m in self.methods]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"Method labels must be unique, got {labels}")

    def network_spec(self, stream: TaskStream) -> NetworkSpec:
        return NetworkSpec(input_dim=stream.input_dim, hidden=self.hidden, output_dim=stream.output_dim,
                           head_mode=stream.head_mode, num_heads=stream.num_heads)

    @property
    def metrics_path(self) -> Path:
        return self.output_dir / Config.METRICS_FILE


def _prior_variance(network: Mapping[str, Any]) -> Optional[float]:
    prior = network.get("prior", Config.PRIOR_VARIANCE)
    if prior == "init":
        return None
    try:
        return float(prior)
    except (TypeError, ValueError):
        raise ConfigError(f"network.prior must be 'init' or a variance, got {prior!r}") from None


def _method_entries(raw: Sequence[Any], training: Mapping[str, Any],
                    prior_variance: Optional[float]) -> List[MethodConfig]:
    methods = []
    for entry in raw:
        if isinstance(entry, str):
            entry = {"method": entry}
        if not isinstance(entry, Mapping) or "method" not in entry:
            raise ConfigError(f"Invalid method entry: {entry!r}")
        options = {k: v for k, v in training.items() if k in TRAINING_KEYS}
        options.update(entry)
        unknown = set(options) - set(TRAINING_KEYS) - {"method", "label"}
        if unknown:
            raise ConfigError(f"Unknown method options {sorted(unknown)}")
        method = options["method"]
        if method not in METHODS:
            raise ConfigError(f"Unknown method '{method}', expected one of {METHODS}")
        if method in CORESET_STRATEGY:
            options.setdefault("coreset_size", Config.CORESET_SIZE)
        else:
            options.pop("coreset_size", None)
        try:
            methods.append(MethodConfig(prior_variance=prior_variance, **options))
        except TypeError as e:
            raise ConfigError(f"Invalid method entry {entry!r}: {e}") from None
    return methods


def parse_experiment_config(raw: Mapping[str, Any], source: str = "<config>",
                            seeds: Optional[Sequence[int]] = None,
                            methods: Optional[Sequence[str]] = None,
                            epochs: Optional[int] = None,
                            output_dir: Optional[str] = None,
                            workers: Optional[int] = None) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed YAML, applying command-line overrides."""
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{source}: expected a mapping at the top level")
    if "benchmark" not in raw:
        raise ConfigError(f"{source}: missing 'benchmark'")

    network = raw.get("network") or {}
    training = dict(raw.get("training") or {})
    if epochs is not None:
        training["epochs"] = int(epochs)
    method_configs = _method_entries(raw.get("methods") or ["evcl"], training, _prior_variance(network))
    if methods:
        wanted = set(methods)
        unknown = wanted - {m.name for m in method_configs} - {m.method for m in method_configs}
        if unknown:
            raise ConfigError(f"{source}: --method {sorted(unknown)} not defined in the config")
        method_configs = [m for m in method_configs if m.name in wanted or m.method in wanted]

    seed_list = tuple(int(s) for s in (seeds if seeds else raw.get("seeds", [0])))
    data = dict(raw.get("data") or {})
    fetch = tuple(data.pop("fetch", None) or ())
    name = str(raw.get("name") or Path(source).stem)
    out = Path(output_dir or raw.get("output_dir") or Path(Config.OUTPUT_DIR) / name)
    tasks = raw.get("tasks")

    return ExperimentConfig(
        name=name,
        benchmark=str(raw["benchmark"]),
        data=data,
        hidden=tuple(int(h) for h in network.get("hidden", [100, 100])),
        methods=tuple(method_configs),
        seeds=seed_list,
        output_dir=out,
        num_tasks=int(tasks) if tasks is not None else None,
        workers=int(workers if workers is not None else raw.get("workers", Config.WORKERS)),
        fetch=fetch,
    )


def load_experiment_config(path, **overrides) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    return parse_experiment_config(raw, source=str(path), **overrides)


def execute_run(stream: TaskStream, spec: NetworkSpec, config: MethodConfig) -> SequenceResult:
    """One (method x seed) run; module level so a process pool can pickle it."""
    return run_task_sequence(stream, config, spec)


@dataclass
class ExperimentOutcome:
    metrics_path: Path
    run_ids: List[str]
    results: Dict[str, SequenceResult]
    records_written: int


class ExperimentEngine:
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.writer = MetricsWriter(config.metrics_path)
        stamp = datetime.now().strftime("%Y%m%d%H%M%S")
        self.experiment_id = f"{stamp}{uuid.uuid4().hex[:6]}"
        self.records_written = 0

    def run_id(self, method: MethodConfig) -> str:
        return f"{self.experiment_id}-{method.name}-s{method.seed}"

    def _executor(self) -> Executor:
        if self.config.workers <= 1:
            return ThreadPoolExecutor(max_workers=1)
        return ProcessPoolExecutor(max_workers=self.config.workers)

    def _save_snapshots(self, run_id: str, result: SequenceResult):
        run_dir = self.config.output_dir / run_id
        for k, snapshot in enumerate(result.snapshots, start=1):
            save_snapshot(snapshot, run_dir / f"snapshot_task{k}.evcl")
        for k, fisher in enumerate(result.fishers, start=1):
            if fisher is not None:
                save_fisher(fisher, run_dir / f"fisher_task{k}.evcl")

    async def _run_one(self, executor: Executor, stream: TaskStream, spec: NetworkSpec,
                       method: MethodConfig) -> Tuple[str, SequenceResult]:
        run_id = self.run_id(method)
        logger.info(f"Run {run_id} started ({len(stream)} tasks)")
        loop = asyncio.get_running_loop()
        result = await loop.run_in_executor(executor, execute_run, stream, spec, method)

        records: List[MetricsRecord] = []
        for t in range(len(stream)):
            records += records_for_row(run_id, method.seed, method.name, t,
                                       result.accuracy[t, :t + 1], result.eval_times[t])
        self.records_written += await self.writer.append(records)
        self._save_snapshots(run_id, result)
        final = result.average_accuracy()[-1]
        logger.info(f"Run {run_id} finished: final avg acc {final:.4f}, "
                    f"backward transfer {result.backward_transfer():+.4f}")
        return run_id, result

    async def start(self) -> ExperimentOutcome:
        cfg = self.config
        logger.info(f"Starting experiment {cfg.name} ({cfg.benchmark}): "
                    f"{len(cfg.methods)} methods x {len(cfg.seeds)} seeds, {cfg.workers} worker(s)")
        stream = load_stream(cfg.benchmark, cfg.data, cfg.num_tasks, seed=0)
        spec = cfg.network_spec(stream)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)

        runs = [replace(m, seed=s) for s in cfg.seeds for m in cfg.methods]
        with self._executor() as executor:
            finished = await asyncio.gather(*(self._run_one(executor, stream, spec, m) for m in runs))

        results = dict(finished)
        logger.info(f"Experiment {cfg.name} complete: {self.records_written} records in {cfg.metrics_path}")
        return ExperimentOutcome(cfg.metrics_path, [run_id for run_id, _ in finished], results,
                                 self.records_written)


def run_experiment(config: ExperimentConfig) -> ExperimentOutcome:
    try:
        return asyncio.run(ExperimentEngine(config).start())
    except KeyboardInterrupt:
        logger.warning(f"Experiment {config.name} interrupted; {config.metrics_path} holds whole records only")
        raise
