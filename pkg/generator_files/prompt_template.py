"""
Channel-Forge Prompt Template
Defines how a baseline candidate is presented to a generator and how a
generator's answer is turned back into a source text and hyperparameters.
"""

import logging
import re
from dataclasses import dataclass, field
from typing import AbstractSet, List, Optional

from pydantic import ValidationError

from src.dsl.parser import SourceText
from src.errors import TargetNotHigher
from src.ir.arch_ir import Hyperparams

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"
ABLATIONS = frozenset({"task", "metric", "dataset"})

ROLE_LINE = "You are a machine learning model designer."
TASK_LINE = ("Write a complete netdsl network that increases the '{metric}' metric value "
             "to at least {target:.4f}{dataset}.")
BASELINE_LINE = "The baseline network below reaches {metric} {accuracy:.4f}{dataset}."
ANSWER_LINE = ("Answer with the full source of the new network wrapped in <nn> tags, "
               "followed by its hyperparameters as key=value lines wrapped in <hp> tags.")

NN_BLOCK = re.compile(r"<nn>(.*?)</nn>", re.S)
HP_BLOCK = re.compile(r"<hp>(.*?)</hp>", re.S)


@dataclass(frozen=True)
class Prompt:
    text: str
    baseline_id: str
    target: float
    hp: Hyperparams
    template_version: str = TEMPLATE_VERSION


def format_candidate(source: str, hp: Hyperparams) -> str:
    """<nn> block with the source followed by an <hp> block; also the corpus completion format"""
    body = source if source.endswith("\n") else source + "\n"
    return f"<nn>\n{body}</nn>\n<hp>\n{hp.to_lines()}\n</hp>\n"


def build_prompt(baseline, target_accuracy: float, ablate: AbstractSet[str] = frozenset()) -> Prompt:
    """
    Prompt asking for a network that beats `baseline`.

    Args:
        baseline: a Valid CandidateRecord with accuracy present
        target_accuracy: must exceed the baseline accuracy
        ablate: parts to drop, any of "task", "metric", "dataset"

    Returns:
        Prompt whose text holds exactly one <nn> block and one <hp> block
    """
    unknown = set(ablate) - ABLATIONS
    if unknown:
        raise ValueError(f"unknown ablation {sorted(unknown)}")
    if baseline.accuracy is None:
        raise TargetNotHigher(f"baseline {baseline.id[:12]} has no accuracy")
    if not target_accuracy > baseline.accuracy:
        raise TargetNotHigher(f"target {target_accuracy:.4f} does not exceed baseline {baseline.accuracy:.4f}")

    dataset = "" if "dataset" in ablate else f" on the {baseline.dataset_tag} dataset"
    lines = [ROLE_LINE]
    if "task" not in ablate:
        if "metric" in ablate:
            lines.append(f"Write a complete netdsl network that improves on the baseline{dataset}.")
        else:
            lines.append(TASK_LINE.format(metric=baseline.metric_name, target=target_accuracy, dataset=dataset))
    if "metric" not in ablate:
        lines.append(BASELINE_LINE.format(metric=baseline.metric_name, accuracy=baseline.accuracy, dataset=dataset))
    lines.append(format_candidate(baseline.source, baseline.hp).rstrip("\n"))
    lines.append(ANSWER_LINE)
    return Prompt("\n".join(lines) + "\n", baseline.id, target_accuracy, baseline.hp)


# ---------------------------------------------------------------- extraction

@dataclass
class Extraction:
    """Result of extract_candidate; src is None on failure and reason says why"""
    src: Optional[SourceText]
    hp: Hyperparams
    reason: str = ""
    hp_defaulted: bool = False
    warnings: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.src is not None


def parse_hp(block: str, defaults: Hyperparams) -> Hyperparams:
    values = {}
    for line in block.splitlines():
        line = line.strip()
        if not line or "=" not in line:
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key in Hyperparams.model_fields:
            values[key] = value
    return Hyperparams(**{**defaults.model_dump(), **values})


def extract_candidate(raw: str, default_hp: Optional[Hyperparams] = None) -> Extraction:
    """First <nn> block is the source, first <hp> block the hyperparameters; never raises"""
    default_hp = default_hp or Hyperparams()
    if not isinstance(raw, str):
        return Extraction(None, default_hp, reason="response is not text")
    sources = NN_BLOCK.findall(raw)
    if not sources:
        return Extraction(None, default_hp, reason="no <nn> block")
    result = Extraction(SourceText(sources[0].strip("\n") + "\n"), default_hp)
    if len(sources) > 1:
        result.warnings.append(f"{len(sources)} <nn> blocks, using the first")
        logger.warning("response carries %d <nn> blocks, using the first", len(sources))

    hp_blocks = HP_BLOCK.findall(raw)
    if not hp_blocks:
        result.hp_defaulted = True
        result.warnings.append("no <hp> block, using default hyperparameters")
        return result
    try:
        result.hp = parse_hp(hp_blocks[0], default_hp)
    except ValidationError as e:
        result.hp_defaulted = True
        result.warnings.append(f"invalid <hp> block ({e.error_count()} errors), using defaults")
    return result
