from src.evaluation.dataset import Dataset, generate_toy100, load_dataset, make_blob_dataset, save_dataset
from src.evaluation.evaluator import (
    METRIC_NAME,
    EvalResult,
    MicroEvaluator,
    SurrogateConfig,
    SurrogateEvaluator,
    evaluate_accuracy,
    surrogate_eval,
    surrogate_widths,
    train_proxy,
)
