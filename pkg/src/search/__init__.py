from src.search.orchestrator import (
    EpochSummary,
    SearchConfig,
    SearchOrchestrator,
    load_config,
    make_evaluator,
    resolve_seed,
)
