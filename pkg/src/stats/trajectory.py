"""
Search-trajectory statistics: trend of the epoch-wise maximum and the
early-versus-late population comparisons.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import stats as sps
from scipy.special import comb

from src.errors import DegenerateInput, GroupTooSmall

logger = logging.getLogger(__name__)

DEFAULT_PERMUTATIONS = 100_000


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    mean_early: float
    mean_late: float
    n_early: int
    n_late: int
    df: float


@dataclass(frozen=True)
class PermutationResult:
    delta: float
    p: float
    n_permutations: int
    mode: str


def regress_epoch_max(series: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """
    OLS slope of max accuracy against epoch.

    Returns:
        (slope, two-sided p of the slope t statistic with n - 2 degrees of freedom)
    """
    points = np.asarray(series, dtype=np.float64).reshape(-1, 2)
    if len(points) < 3:
        raise DegenerateInput(f"regression needs at least 3 points, got {len(points)}")
    x, y = points[:, 0], points[:, 1]
    sxx = float(np.sum((x - x.mean()) ** 2))
    if sxx == 0.0:
        raise DegenerateInput("all epochs equal, slope undefined")
    slope = float(np.sum((x - x.mean()) * (y - y.mean())) / sxx)
    residuals = y - (y.mean() + slope * (x - x.mean()))
    dof = len(points) - 2
    se = float(np.sqrt(np.sum(residuals ** 2) / dof / sxx))
    if se == 0.0:
        return slope, 0.0 if slope != 0.0 else 1.0
    t = slope / se
    return slope, float(2 * sps.t.sf(abs(t), dof))


def t_test_one_tailed(early: Sequence[float], late: Sequence[float]) -> TTestResult:
    """Welch t-test for H1: mean(late) > mean(early)"""
    a = np.asarray(early, dtype=np.float64)
    b = np.asarray(late, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise GroupTooSmall(f"each group needs 2 values, got {len(a)} early and {len(b)} late")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    mean_a, mean_b = float(a.mean()), float(b.mean())
    if va + vb == 0.0:
        # both groups constant
        if mean_a == mean_b:
            return TTestResult(0.0, 0.5, mean_a, mean_b, len(a), len(b), float(len(a) + len(b) - 2))
        t = float(np.inf) if mean_b > mean_a else float(-np.inf)
        return TTestResult(t, 0.0 if t > 0 else 1.0, mean_a, mean_b, len(a), len(b), float(len(a) + len(b) - 2))
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    result = sps.ttest_ind(b, a, equal_var=False, alternative="greater")
    return TTestResult(float(result.statistic), float(result.pvalue), mean_a, mean_b, len(a), len(b), float(df))


def _mean_difference(late, early, axis):
    return np.mean(late, axis=axis) - np.mean(early, axis=axis)


def permutation_test(early: Sequence[float], late: Sequence[float], n_perm: int = DEFAULT_PERMUTATIONS,
                     rng_seed: int = 0) -> PermutationResult:
    """
    One-sided test of mean(late) - mean(early) under exchangeable labels.

    Every split is enumerated when there are at most n_perm of them;
    otherwise n_perm random relabelings are drawn and p uses the add-one
    convention (count + 1) / (n_perm + 1).
    """
    a = np.asarray(early, dtype=np.float64)
    b = np.asarray(late, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise GroupTooSmall("permutation test needs two non-empty groups")
    splits = int(comb(len(a) + len(b), len(b), exact=True))
    mode = "exact" if splits <= n_perm else "monte_carlo"
    result = sps.permutation_test((b, a), _mean_difference, permutation_type="independent",
                                  vectorized=True, n_resamples=n_perm, alternative="greater",
                                  rng=np.random.default_rng(rng_seed))
    count = splits if mode == "exact" else n_perm
    logger.debug("permutation test: %s over %d relabelings", mode, count)
    return PermutationResult(float(result.statistic), float(result.pvalue), count, mode)


@dataclass(frozen=True)
class TrajectoryStats:
    slope: Optional[float]
    slope_p: Optional[float]
    t_test: Optional[TTestResult]
    permutation: Optional[PermutationResult]
    attempted: int
    valid: int
    validity_rate: Optional[float]
    best_initial: Optional[float]
    global_max: Optional[float]
    global_max_epoch: Optional[int]
    relative_improvement: Optional[float]

    def to_dict(self) -> dict:
        return asdict(self)
