"""Learning curves and run summaries, read back from the metrics CSVs."""
from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from tools.metrics import read_metrics  # noqa: E402

logger = logging.getLogger(__name__)

SERIES = {"train_return": "Training return", "test_return_mean": "Test return (decentralized)"}


def find_groups(metrics_dir: str | Path) -> list[Path]:
    root = Path(metrics_dir)
    groups = sorted({p.parent for p in root.rglob("seed_*.csv")})
    if not groups:
        raise FileNotFoundError(f"no seed_*.csv files under '{root}'")
    return groups


def load_group(group: str | Path) -> dict[int, pd.DataFrame]:
    frames = {}
    for path in sorted(Path(group).glob("seed_*.csv")):
        frame = read_metrics(path)
        frames[int(path.stem.split("_", 1)[1])] = frame
    return frames


def aggregate(frames: dict[int, pd.DataFrame], column: str, smooth: int = 1) -> pd.DataFrame:
    """Mean and standard error across seeds of ``column`` per episode.

    Rows where the column is empty (e.g. non-evaluation rows) are dropped first. Seeds are
    aligned on the episode grid; mismatched grids are truncated to the shortest.
    """
    series = {}
    for seed, frame in frames.items():
        s = frame[["episode", column]].dropna().set_index("episode")[column].astype(float)
        if smooth > 1:
            s = s.rolling(smooth, min_periods=1).mean()
        series[seed] = s
    lengths = {seed: len(s) for seed, s in series.items()}
    shortest = min(lengths.values()) if lengths else 0
    if len(set(lengths.values())) > 1:
        logger.warning("Episode grids differ across seeds %s; truncating to %d points", lengths, shortest)
    table = pd.DataFrame({seed: s.iloc[:shortest] for seed, s in series.items()})
    if table.isna().any().any():
        logger.warning("Episode indices disagree across seeds; keeping common episodes only")
        table = table.dropna()
    k = table.shape[1]
    mean = table.mean(axis=1)
    stderr = table.std(axis=1, ddof=1) / np.sqrt(k) if k > 1 else pd.Series(0.0, index=table.index)
    out = pd.DataFrame({"episode": table.index, "mean": mean.values, "stderr": stderr.values, "seeds": k})
    return out.reset_index(drop=True)


def _draw(ax, agg: pd.DataFrame, label: str) -> None:
    ax.plot(agg["episode"], agg["mean"], label=label)
    ax.fill_between(agg["episode"], agg["mean"] - agg["stderr"], agg["mean"] + agg["stderr"], alpha=0.2)


def _figure(curves: dict[str, pd.DataFrame], title: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, agg in curves.items():
        _draw(ax, agg, label)
    ax.set_xlabel("Episodes")
    ax.set_ylabel("Return")
    ax.set_title(title)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    logger.info("Saved '%s'", path)
    return path


def _label(group: Path) -> str:
    manifest = group / "manifest.json"
    if manifest.exists():
        data = json.loads(manifest.read_text(encoding="utf-8"))
        algorithm = data.get("algorithm", group.name)
        sigma = data.get("config", {}).get("intrinsic", {}).get("sigma")
        return f"{algorithm} (sigma={sigma:g})" if algorithm != "IQL" and sigma is not None else algorithm
    return group.name


def plot(metrics_dir: str | Path, out_dir: str | Path | None = None, smooth: int = 1) -> list[Path]:
    """Two figures and one aggregated CSV per group; comparison figures when several groups exist."""
    root = Path(metrics_dir)
    groups = find_groups(root)
    written: list[Path] = []
    comparison: dict[str, dict[str, pd.DataFrame]] = {column: {} for column in SERIES}
    for group in groups:
        # out_dir mirrors the group layout under metrics_dir
        rel = group.relative_to(root)
        target = Path(out_dir) / rel if out_dir is not None and len(groups) > 1 else Path(out_dir or group)
        target.mkdir(parents=True, exist_ok=True)
        frames = load_group(group)
        label = _label(group)
        if label in comparison["train_return"]:
            label = f"{label} [{rel.as_posix()}]"
        parts = []
        for column, title in SERIES.items():
            agg = aggregate(frames, column, smooth if column == "train_return" else 1)
            comparison[column][label] = agg
            written.append(_figure({label: agg}, title, target / f"{column}.png"))
            parts.append(agg.assign(series=column))
        csv_path = target / "aggregated.csv"
        pd.concat(parts, ignore_index=True).to_csv(csv_path, index=False)
        written.append(csv_path)
    if len(groups) > 1:
        figures = Path(out_dir or metrics_dir)
        for column, title in SERIES.items():
            written.append(_figure(comparison[column], title, figures / f"comparison_{column}.png"))
    return written


def episodes_to_threshold(frame: pd.DataFrame, threshold: float = 9.0, consecutive: int = 3) -> float:
    """First episode at which the test return stays ``>= threshold`` for ``consecutive`` evaluations."""
    evals = frame[["episode", "test_return_mean"]].dropna()
    run = 0
    for episode, value in zip(evals["episode"], evals["test_return_mean"]):
        run = run + 1 if value >= threshold else 0
        if run >= consecutive:
            return float(episode)
    return float("inf")


def final_quartile_std(frame: pd.DataFrame) -> float:
    """Standard deviation of the test return over the last quarter of the evaluations."""
    evals = frame["test_return_mean"].dropna().to_numpy()
    if len(evals) == 0:
        return float("nan")
    tail = evals[len(evals) - max(1, len(evals) // 4):]
    return float(tail.std(ddof=1)) if len(tail) > 1 else 0.0


def summarize(metrics_dir: str | Path, threshold: float = 9.0, consecutive: int = 3) -> pd.DataFrame:
    """Per group: median episodes-to-threshold and mean final-quartile test-return std."""
    rows = []
    for group in find_groups(metrics_dir):
        frames = load_group(group)
        hits = [episodes_to_threshold(f, threshold, consecutive) for f in frames.values()]
        spreads = [final_quartile_std(f) for f in frames.values()]
        rows.append({
            "group": _label(group),
            "path": str(group),
            "seeds": len(frames),
            "median_episodes_to_threshold": float(np.median(hits)),
            "final_quartile_std": float(np.nanmean(spreads)) if spreads else float("nan"),
        })
    summary = pd.DataFrame(rows)
    summary.to_csv(Path(metrics_dir) / "summary.csv", index=False)
    return summary
