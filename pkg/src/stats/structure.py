"""
Width-versus-accuracy structure of a population: per-position rank
correlations, power-of-two usage and the accuracy/size Pareto frontier.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps

from src.dsl import parse
from src.errors import DegenerateInput, SchemaMismatch
from src.ir.arch_ir import width_positions, width_vector

logger = logging.getLogger(__name__)

MIN_CORRELATION_RECORDS = 5


def spearman(x: Sequence[float], y: Sequence[float]) -> Optional[float]:
    """Spearman rho with average tie-ranks; None when either side is constant"""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(x) != len(y):
        raise DegenerateInput(f"length mismatch {len(x)} vs {len(y)}")
    if len(x) < 2 or np.all(x == x[0]) or np.all(y == y[0]):
        return None
    rho = sps.spearmanr(x, y).statistic
    return float(np.clip(rho, -1.0, 1.0))


def is_power_of_two(width: int) -> bool:
    return width > 0 and (width & (width - 1)) == 0


def non_power_of_two_fraction(widths: Sequence[int]) -> float:
    widths = [int(w) for w in widths]
    if not widths:
        raise DegenerateInput("no widths")
    return sum(1 for w in widths if not is_power_of_two(w)) / len(widths)


@dataclass(frozen=True)
class ChannelCorrelations:
    positions: Tuple[Tuple[str, str], ...]
    rho: Dict[str, Optional[float]]
    sample_size: int
    non_power_of_two_fraction: float
    top_configuration: Tuple[int, ...]
    top_accuracy: float

    def to_dict(self) -> dict:
        return {
            "positions": [f"{layer}.{attr}" for layer, attr in self.positions],
            "rho": self.rho,
            "sample_size": self.sample_size,
            "non_power_of_two_fraction": self.non_power_of_two_fraction,
            "top_configuration": list(self.top_configuration),
            "top_accuracy": self.top_accuracy,
        }


def width_table(records) -> Tuple[Tuple[Tuple[str, str], ...], List[Tuple[int, ...]]]:
    """Shared position schema and one width vector per record; SchemaMismatch if schemas differ"""
    schemas, vectors = [], []
    for record in records:
        net = parse(record.source, validate=False)
        schemas.append(width_positions(net))
        vectors.append(width_vector(net))
    distinct = sorted(set(schemas))
    if len(distinct) > 1:
        raise SchemaMismatch(f"{len(distinct)} different layer-position schemas", tuple(distinct))
    return (distinct[0] if distinct else ()), vectors


def channel_correlations(records) -> ChannelCorrelations:
    """Spearman rho between each width position and accuracy over Valid records"""
    records = [r for r in records if r.valid]
    if len(records) < MIN_CORRELATION_RECORDS:
        raise DegenerateInput(f"need {MIN_CORRELATION_RECORDS} valid records, got {len(records)}")
    positions, vectors = width_table(records)
    widths = np.array(vectors, dtype=np.int64).reshape(len(records), len(positions))
    accuracy = np.array([r.accuracy for r in records])
    rho = {f"{layer}.{attr}": spearman(widths[:, col], accuracy)
           for col, (layer, attr) in enumerate(positions)}
    top = int(np.argmax(accuracy))
    return ChannelCorrelations(
        positions=positions,
        rho=rho,
        sample_size=len(records),
        non_power_of_two_fraction=non_power_of_two_fraction(widths.ravel()) if widths.size else 0.0,
        top_configuration=tuple(int(w) for w in widths[top]),
        top_accuracy=float(accuracy[top]),
    )


def flag_pareto_front(points: np.ndarray) -> np.ndarray:
    """
    Pareto-optimal mask for minimisation objectives, points of shape (n, d).
    Equal points are all kept.
    """
    n_points = points.shape[0]
    pareto = np.ones(n_points, dtype=bool)
    for i in range(n_points):
        if pareto[i]:
            # drop everything points[i] dominates
            pareto[pareto] = (np.any(points[pareto] < points[i], axis=1)
                              | np.all(points[pareto] == points[i], axis=1))
    return pareto


def pareto_frontier(records) -> list:
    """Records not dominated under (max accuracy, min params), sorted by params"""
    records = [r for r in records if r.valid and r.params is not None]
    if not records:
        return []
    points = np.array([[r.params, -r.accuracy] for r in records], dtype=np.float64)
    mask = flag_pareto_front(points)
    front = [r for r, keep in zip(records, mask) if keep]
    return sorted(front, key=lambda r: (r.params, -r.accuracy, r.id))
