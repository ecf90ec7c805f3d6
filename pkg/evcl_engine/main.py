
import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import List, Optional

from evcl_engine.config import Config
from evcl_engine.data.fetch import DatasetFetcher, FetchSource
from evcl_engine.errors import ConfigError, DatasetNotFoundError, EngineError
from evcl_engine.harness.experiment import load_experiment_config, run_experiment
from evcl_engine.harness.plotting import emit_plot
from evcl_engine.harness.summary import read_summary, summarize

logger = logging.getLogger("EvclEngine")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATASET = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evcl", description="Continual-learning experiment runner")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute every (method x seed) run of an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, action="append", help="replace the config's seeds (repeatable)")
    run.add_argument("--method", action="append", help="only run these methods or labels (repeatable)")
    run.add_argument("--epochs", type=int)
    run.add_argument("--output-dir")
    run.add_argument("--workers", type=int)

    summ = sub.add_parser("summarize", help="average accuracy table from a metrics file")
    summ.add_argument("metrics")
    summ.add_argument("-o", "--output", help=f"summary path (default: {Config.SUMMARY_FILE} next to the metrics)")

    plot = sub.add_parser("plot", help="SVG of average accuracy per method")
    plot.add_argument("summary")
    plot.add_argument("-o", "--output", required=True)

    fetch = sub.add_parser("fetch", help="download the files listed under data.fetch")
    fetch.add_argument("config")
    fetch.add_argument("--data-dir")
    return parser


def _cmd_run(args) -> int:
    config = load_experiment_config(args.config, seeds=args.seed, methods=args.method, epochs=args.epochs,
                                    output_dir=args.output_dir, workers=args.workers)
    outcome = run_experiment(config)
    print(f"{outcome.records_written} records appended to {outcome.metrics_path}")
    return EXIT_OK


def _cmd_summarize(args) -> int:
    summarize(args.metrics, args.output)
    return EXIT_OK


def _cmd_plot(args) -> int:
    emit_plot(read_summary(args.summary), args.output)
    return EXIT_OK


def _cmd_fetch(args) -> int:
    config = load_experiment_config(args.config)
    if not config.fetch:
        raise ConfigError(f"{args.config} lists no data.fetch entries")
    data_dir = Path(args.data_dir or config.data.get("path") or Path(Config.DATA_DIR) / config.benchmark)
    sources = [FetchSource.from_config(entry) for entry in config.fetch]
    fetched = asyncio.run(DatasetFetcher(data_dir).fetch_all(sources))
    failed = [s.url for s, path in zip(sources, fetched) if path is None]
    if failed:
        logger.warning(f"{len(failed)} of {len(sources)} downloads failed: {failed}")
        return EXIT_DATASET
    logger.info(f"All {len(sources)} files present in {data_dir}")
    return EXIT_OK


COMMANDS = {"run": _cmd_run, "summarize": _cmd_summarize, "plot": _cmd_plot, "fetch": _cmd_fetch}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    try:
        return COMMANDS[args.command](args)
    except DatasetNotFoundError as e:
        logger.error(f"Dataset unavailable: {e}")
        return EXIT_DATASET
    except ConfigError as e:
        logger.error(f"Invalid configuration: {e}")
        return EXIT_CONFIG
    except EngineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
