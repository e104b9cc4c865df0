"""
Channel-Forge Trajectory Analysis
Reads a repository (and the epochs.jsonl beside it when present), computes the
trajectory statistics and width structure, and writes a JSON report plus CSV
series for plotting.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from database_files.database import ModelRepository
from src.errors import DegenerateInput, EmptyRepository, GroupTooSmall, SchemaMismatch
from src.evaluation import METRIC_NAME
from src.stats.structure import ChannelCorrelations, channel_correlations, pareto_frontier, width_table
from src.stats.trajectory import (
    DEFAULT_PERMUTATIONS,
    TrajectoryStats,
    permutation_test,
    regress_epoch_max,
    t_test_one_tailed,
)

logger = logging.getLogger(__name__)

EARLY_EPOCHS = (0, 5)
LATE_EPOCHS = (16, 21)
ROLLING_WINDOW = 3

REPORT_FILE = "report.json"
EPOCH_SERIES_FILE = "epoch_series.csv"
PARAMS_FILE = "accuracy_vs_params.csv"
WIDTH_FLOW_FILE = "width_flow.csv"
CORRELATIONS_FILE = "correlations.csv"


@dataclass
class AnalysisReport:
    trajectory: TrajectoryStats
    correlations: Optional[ChannelCorrelations]
    frontier: List[dict]
    epoch_series: pd.DataFrame
    dataset_tag: str
    notes: List[str] = field(default_factory=list)
    paths: List[Path] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "dataset_tag": self.dataset_tag,
            "metric_name": METRIC_NAME,
            "trajectory": self.trajectory.to_dict(),
            "correlations": self.correlations.to_dict() if self.correlations else None,
            "pareto_frontier": self.frontier,
            "epochs": json.loads(self.epoch_series.to_json(orient="records")),
            "notes": self.notes,
        }

    def to_text(self) -> str:
        t = self.trajectory
        lines = [f"dataset {self.dataset_tag}, metric {METRIC_NAME}"]
        if t.validity_rate is not None:
            lines.append(f"validity: {t.valid}/{t.attempted} = {t.validity_rate:.2%}")
        if t.slope is not None:
            lines.append(f"epoch-max trend: slope {t.slope:+.5f}, p = {t.slope_p:.4f}")
        if t.t_test is not None:
            lines.append(f"t-test: mean early {t.t_test.mean_early:.4f} (n={t.t_test.n_early}), "
                         f"late {t.t_test.mean_late:.4f} (n={t.t_test.n_late}), "
                         f"t = {t.t_test.t:.3f}, p = {t.t_test.p:.4f}")
        if t.permutation is not None:
            lines.append(f"permutation: delta {t.permutation.delta:+.4f}, p = {t.permutation.p:.4f} "
                         f"({t.permutation.mode}, {t.permutation.n_permutations} relabelings)")
        if t.global_max is not None:
            lines.append(f"best initial {t.best_initial}, global max {t.global_max:.4f} at epoch {t.global_max_epoch}")
        if t.relative_improvement is not None:
            lines.append(f"relative improvement {t.relative_improvement:.1%}")
        if self.correlations is not None:
            c = self.correlations
            for position, rho in c.rho.items():
                lines.append(f"rho[{position}] = {'n/a' if rho is None else f'{rho:+.3f}'}")
            lines.append(f"non-power-of-two widths: {c.non_power_of_two_fraction:.1%}")
            lines.append(f"top configuration {list(c.top_configuration)} at {c.top_accuracy:.4f}")
        lines.append(f"pareto frontier: {len(self.frontier)} models")
        lines.extend(f"note: {note}" for note in self.notes)
        return "\n".join(lines) + "\n"


def _attempt_counts(repo_path: Path, records) -> pd.DataFrame:
    """Attempted/valid per generation epoch, from epochs.jsonl when available"""
    epochs_file = repo_path.parent / "epochs.jsonl"
    if epochs_file.exists():
        rows = [json.loads(line) for line in epochs_file.read_text(encoding="utf-8").splitlines() if line.strip()]
        rows = [r for r in rows if r.get("phase") == "generate"]
        if rows:
            frame = pd.DataFrame(rows)[["epoch", "attempted", "valid_count"]]
            return frame.rename(columns={"valid_count": "valid"}).groupby("epoch", as_index=False).sum()
    generated = [r for r in records if r.proposer_kind != "bootstrap"]
    if not generated:
        return pd.DataFrame({"epoch": pd.Series(dtype="int64"), "attempted": pd.Series(dtype="int64"),
                             "valid": pd.Series(dtype="int64")})
    frame = pd.DataFrame({"epoch": [r.epoch for r in generated], "valid": [int(r.valid) for r in generated]})
    return frame.groupby("epoch", as_index=False).agg(attempted=("valid", "size"), valid=("valid", "sum"))


def epoch_series(valid_frame: pd.DataFrame, attempts: pd.DataFrame, window: int) -> pd.DataFrame:
    """Per-epoch mean, max, variance, rolling mean of the mean, success rate and best-so-far"""
    grouped = valid_frame.groupby("epoch")["accuracy"]
    series = pd.DataFrame({
        "count": grouped.size(),
        "mean": grouped.mean(),
        "max": grouped.max(),
        "variance": grouped.var(ddof=1),
    })
    series = series.join(attempts.set_index("epoch"), how="outer").sort_index()
    series["success_rate"] = series["valid"] / series["attempted"]
    series["rolling_mean"] = series["mean"].rolling(window, min_periods=1).mean()
    series["best_so_far"] = series["max"].cummax()
    series.index.name = "epoch"
    return series.reset_index()[["epoch", "attempted", "valid", "success_rate", "count", "mean", "max",
                                 "variance", "rolling_mean", "best_so_far"]]


def _in_range(epoch: int, bounds: Tuple[int, int]) -> bool:
    return bounds[0] <= epoch <= bounds[1]


def analyze(repo_path: Union[str, Path], early: Tuple[int, int] = EARLY_EPOCHS, late: Tuple[int, int] = LATE_EPOCHS,
            window: int = ROLLING_WINDOW, out_dir: Optional[Union[str, Path]] = None,
            n_perm: int = DEFAULT_PERMUTATIONS, rng_seed: int = 0,
            dataset_tag: Optional[str] = None) -> AnalysisReport:
    """
    Full trajectory analysis of one repository.

    Population tests compare generated (non-bootstrap) Valid records of the
    early and late epoch ranges; the per-epoch series include the bootstrap
    population at epoch 0. Sub-analyses lacking data are left empty with a note.

    Args:
        repo_path: repository directory or .jsonl file
        early, late: inclusive epoch ranges
        window: rolling-mean window over the per-epoch mean
        out_dir: when set, report.json and the CSV series are written there

    Returns:
        AnalysisReport (paths lists the written files)
    """
    with ModelRepository(repo_path, readonly=True) as repo:
        records = repo.records()
        path = repo.path
    if not records:
        raise EmptyRepository(f"{path} holds no records")
    notes: List[str] = []

    tags = Counter(r.dataset_tag for r in records if r.metric_name == METRIC_NAME)
    if not tags:
        raise EmptyRepository(f"{path} holds no '{METRIC_NAME}' records")
    tag = dataset_tag or tags.most_common(1)[0][0]
    if len(tags) > 1:
        notes.append(f"analyzing dataset tag '{tag}' of {sorted(tags)}")
    records = [r for r in records if r.metric_name == METRIC_NAME and r.dataset_tag == tag]
    valid = [r for r in records if r.valid]

    valid_frame = pd.DataFrame({
        "id": [r.id for r in valid],
        "epoch": [r.epoch for r in valid],
        "accuracy": [r.accuracy for r in valid],
        "params": [r.params for r in valid],
        "bootstrap": [r.proposer_kind == "bootstrap" for r in valid],
    }).astype({"epoch": "int64", "accuracy": "float64", "bootstrap": "bool"})
    attempts = _attempt_counts(path, records)
    series = epoch_series(valid_frame, attempts, window)

    slope = slope_p = None
    maxima = series.dropna(subset=["max"])
    try:
        slope, slope_p = regress_epoch_max(list(zip(maxima["epoch"], maxima["max"])))
    except DegenerateInput as e:
        notes.append(f"trend regression skipped: {e}")

    generated = valid_frame[~valid_frame["bootstrap"]]
    early_acc = generated[generated["epoch"].map(lambda e: _in_range(e, early))]["accuracy"].to_numpy()
    late_acc = generated[generated["epoch"].map(lambda e: _in_range(e, late))]["accuracy"].to_numpy()
    t_result = perm_result = None
    try:
        t_result = t_test_one_tailed(early_acc, late_acc)
    except GroupTooSmall as e:
        notes.append(f"t-test skipped: {e}")
    try:
        perm_result = permutation_test(early_acc, late_acc, n_perm, rng_seed)
    except GroupTooSmall as e:
        notes.append(f"permutation test skipped: {e}")

    attempted = int(attempts["attempted"].sum()) if len(attempts) else 0
    valid_generated = int(attempts["valid"].sum()) if len(attempts) else 0
    initial = valid_frame[valid_frame["bootstrap"]]["accuracy"]
    best_initial = float(initial.max()) if len(initial) else None
    global_max = global_epoch = None
    if len(valid_frame):
        top = valid_frame.sort_values(["accuracy", "epoch"], ascending=[False, True]).iloc[0]
        global_max, global_epoch = float(top["accuracy"]), int(top["epoch"])
    improvement = None
    if best_initial and global_max is not None:
        improvement = (global_max - best_initial) / best_initial

    trajectory = TrajectoryStats(
        slope=slope, slope_p=slope_p, t_test=t_result, permutation=perm_result,
        attempted=attempted, valid=valid_generated,
        validity_rate=valid_generated / attempted if attempted else None,
        best_initial=best_initial, global_max=global_max, global_max_epoch=global_epoch,
        relative_improvement=improvement,
    )

    correlations = None
    population = valid
    if valid:
        schema_counts = Counter(width_table([r])[0] for r in valid)
        if len(schema_counts) > 1:
            common = schema_counts.most_common(1)[0][0]
            population = [r for r in valid if width_table([r])[0] == common]
            notes.append(f"correlations over {len(population)} of {len(valid)} records sharing the common schema")
    try:
        correlations = channel_correlations(population)
    except (DegenerateInput, SchemaMismatch) as e:
        notes.append(f"channel correlations skipped: {e}")

    frontier = [{"id": r.id, "epoch": r.epoch, "params": r.params, "accuracy": r.accuracy}
                for r in pareto_frontier(valid)]
    report = AnalysisReport(trajectory, correlations, frontier, series, tag, notes)
    if out_dir is not None:
        report.paths = write_report(report, valid, population, Path(out_dir))
    return report


def write_report(report: AnalysisReport, valid, population, out_dir: Path) -> List[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    path = out_dir / REPORT_FILE
    path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(path)

    path = out_dir / EPOCH_SERIES_FILE
    report.epoch_series.to_csv(path, index=False)
    paths.append(path)

    on_front = {row["id"] for row in report.frontier}
    path = out_dir / PARAMS_FILE
    pd.DataFrame({
        "id": [r.id for r in valid],
        "epoch": [r.epoch for r in valid],
        "params": [r.params for r in valid],
        "accuracy": [r.accuracy for r in valid],
        "on_frontier": [r.id in on_front for r in valid],
    }).to_csv(path, index=False)
    paths.append(path)

    if population:
        positions, vectors = width_table(population)
        flow = pd.DataFrame(np.array(vectors, dtype=np.int64).reshape(len(population), len(positions)),
                            columns=[f"{layer}.{kind}" for layer, kind in positions])
        flow.insert(0, "accuracy", [r.accuracy for r in population])
        flow.insert(0, "epoch", [r.epoch for r in population])
        flow.insert(0, "id", [r.id for r in population])
        path = out_dir / WIDTH_FLOW_FILE
        flow.to_csv(path, index=False)
        paths.append(path)

    if report.correlations is not None:
        path = out_dir / CORRELATIONS_FILE
        pd.DataFrame({
            "position": list(report.correlations.rho),
            "rho": list(report.correlations.rho.values()),
            "n": report.correlations.sample_size,
        }).to_csv(path, index=False)
        paths.append(path)

    logger.info("wrote %d analysis files to %s", len(paths), out_dir)
    return paths
