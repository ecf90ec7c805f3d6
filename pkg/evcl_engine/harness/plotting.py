
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from ..errors import DatasetError  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt, no simplification and no date metadata keep the SVG bytes stable.
SVG_RC = {
    "svg.hashsalt": "evcl-plot",
    "svg.fonttype": "path",
    "path.simplify": False,
}


def series_id(method: str) -> str:
    return f"series-{method}"


def emit_plot(summary: pd.DataFrame, path, title: str = "Test set average accuracy") -> Path:
    """
    One line per method: x = tasks seen, y = average accuracy clamped to [0, 1].
    Each line is drawn without markers inside an SVG group with id series-<method>.
    """
    if summary is None or summary.empty:
        raise DatasetError("Nothing to plot: summary has no method series")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    with matplotlib.rc_context(SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        max_t = 1
        for method, group in summary.groupby("method", sort=True):
            group = group.sort_values("tasks_seen")
            x = group["tasks_seen"].to_numpy(dtype=int)
            y = np.clip(group["avg_accuracy"].to_numpy(dtype=float), 0.0, 1.0)
            ax.plot(x, y, label=method, gid=series_id(method), linewidth=1.5)
            max_t = max(max_t, int(x.max()))

        ax.set_xlabel("Number of tasks")
        ax.set_ylabel("Average accuracy")
        ax.set_title(title)
        ax.set_xticks(range(1, max_t + 1))
        ax.set_xlim(0.8, max_t + 0.2)
        ax.set_ylim(0.0, 1.0)
        ax.grid(True)
        ax.legend(loc="lower left")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)

    logger.info(f"Plot with {summary['method'].nunique()} series written to {path}")
    return path
