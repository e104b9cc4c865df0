from src.stats.report import AnalysisReport, analyze, epoch_series
from src.stats.structure import (
    ChannelCorrelations,
    channel_correlations,
    non_power_of_two_fraction,
    pareto_frontier,
    spearman,
)
from src.stats.trajectory import (
    PermutationResult,
    TrajectoryStats,
    TTestResult,
    permutation_test,
    regress_epoch_max,
    t_test_one_tailed,
)
