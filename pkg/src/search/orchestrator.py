"""
Channel-Forge Search Orchestrator
Closed loop over the repository: bootstrap a population from a seed network,
then per epoch sample baselines, ask a proposer for better networks, verify,
evaluate, store every attempt and export the improving-pair corpus.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from database_files.database import CandidateRecord, ModelRepository, export_corpus
from generator_files.prompt_template import ABLATIONS, build_prompt, extract_candidate
from generator_files.proposers import Proposer, ProposerConfig, make_proposer
from src.dsl import SourceText, load_seed, parse, read_source
from src.errors import ChannelForgeError, EmptyPopulation
from src.evaluation import (
    METRIC_NAME,
    EvalResult,
    MicroEvaluator,
    SurrogateConfig,
    SurrogateEvaluator,
    generate_toy100,
    load_dataset,
)
from src.ir.arch_ir import Hyperparams
from src.mutation import bootstrap, draw_rng
from src.verify import verify
from src.verify.verifier import DEFAULT_MAX_PARAMS

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"
EPOCHS_FILE = "epochs.jsonl"
CORPUS_DIR = "corpus"
REPORT_DIR = "report"

# rng stream keys under the run seed
_PROPOSE_STREAM = 1
_SAMPLE_STREAM = 2


class SearchConfig(BaseModel):
    """Resolved settings of one search run; stored verbatim in manifest.json"""

    model_config = ConfigDict(frozen=True)

    epochs: int = Field(default=22, ge=1)
    candidates_per_epoch: int = Field(default=10, ge=1)
    delta: float = Field(default=0.02, gt=0)
    bootstrap_count: int = Field(default=100, ge=0)
    bootstrap_epoch_generates: bool = True
    policy: Literal["uniform", "topk"] = "uniform"
    top_k: int = Field(default=5, ge=1)
    evaluator: Literal["micro", "surrogate"] = "surrogate"
    surrogate: SurrogateConfig = Field(default_factory=SurrogateConfig)
    dataset_path: Optional[str] = None
    dataset_tag: Optional[str] = None
    proposer: ProposerConfig = Field(default_factory=ProposerConfig)
    seed_network: str = "alexnet_cifar"
    hp: Hyperparams = Field(default_factory=Hyperparams)
    rng_seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    max_params: int = Field(default=DEFAULT_MAX_PARAMS, ge=1)
    max_pairs: int = Field(default=1000, ge=0)
    ablate: Tuple[str, ...] = ()
    out_dir: str = "runs/default"

    @model_validator(mode="after")
    def check_ablate(self):
        unknown = set(self.ablate) - ABLATIONS
        if unknown:
            raise ValueError(f"unknown ablation {sorted(unknown)}")
        return self

    @property
    def first_generation_epoch(self) -> int:
        return 0 if self.bootstrap_epoch_generates else 1


def load_config(path: Union[str, Path], **overrides) -> SearchConfig:
    """JSON config file, then non-None keyword overrides"""
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    data.update({k: v for k, v in overrides.items() if v is not None})
    return SearchConfig.model_validate(data)


def resolve_seed(name_or_path: str) -> SourceText:
    """A seed corpus name (alexnet_cifar) or a path to a .netdsl file"""
    if Path(name_or_path).suffix == ".netdsl" or Path(name_or_path).exists():
        return read_source(name_or_path)
    return load_seed(name_or_path)


def make_evaluator(cfg: SearchConfig):
    if cfg.evaluator == "surrogate":
        return SurrogateEvaluator(cfg.surrogate, cfg.dataset_tag or "surrogate")
    if cfg.dataset_path:
        data = load_dataset(cfg.dataset_path)
        tag = cfg.dataset_tag or Path(cfg.dataset_path).stem
    else:
        data = generate_toy100(seed=cfg.rng_seed)
        tag = cfg.dataset_tag or "toy100"
    return MicroEvaluator(data, tag, cfg.rng_seed)


class EpochSummary(BaseModel):
    """Per-epoch accounting; one line of epochs.jsonl"""

    model_config = ConfigDict(frozen=True)

    epoch: int = Field(ge=0)
    phase: Literal["bootstrap", "generate"] = "generate"
    attempted: int = Field(ge=0)
    valid_count: int = Field(ge=0)
    proposer_failures: int = Field(default=0, ge=0)
    # answers whose source was already stored; they are not appended or counted as valid
    duplicates: int = Field(default=0, ge=0)
    mean_accuracy: Optional[float] = None
    max_accuracy: Optional[float] = None
    best_so_far: Optional[float] = None

    @model_validator(mode="after")
    def check_counts(self):
        if self.valid_count + self.duplicates > self.attempted:
            raise ValueError(f"valid_count {self.valid_count} plus duplicates {self.duplicates} "
                             f"exceeds attempted {self.attempted}")
        return self


class SearchOrchestrator:
    """
    Drives one run directory: <out_dir>/repository.jsonl, manifest.json,
    epochs.jsonl and corpus/epoch_XX.jsonl. Holds the repository writer lock
    until close().
    """

    def __init__(self, cfg: SearchConfig, proposer: Optional[Proposer] = None, evaluator=None):
        self.cfg = cfg
        self.out_dir = Path(cfg.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.repo = ModelRepository(self.out_dir)
        self.proposer = proposer or make_proposer(cfg.proposer)
        self.evaluator = evaluator or make_evaluator(cfg)
        self.dataset_tag = self.evaluator.dataset_tag

    # ------------------------------------------------------------ helpers

    def write_manifest(self, seed_src: SourceText) -> Path:
        path = self.out_dir / MANIFEST_FILE
        manifest = {
            "config": self.cfg.model_dump(mode="json"),
            "seed_network": self.cfg.seed_network,
            "seed_source": seed_src.text,
            "evaluator_kind": self.evaluator.kind,
            "dataset_tag": self.dataset_tag,
            "proposer_kind": self.proposer.kind,
            "written_at": datetime.now(timezone.utc).isoformat(),
        }
        path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
        return path

    def summaries(self) -> List[EpochSummary]:
        path = self.out_dir / EPOCHS_FILE
        if not path.exists():
            return []
        with open(path, encoding="utf-8") as f:
            return [EpochSummary.model_validate_json(line) for line in f if line.strip()]

    def _record_summary(self, summary: EpochSummary) -> EpochSummary:
        with open(self.out_dir / EPOCHS_FILE, "a", encoding="utf-8") as f:
            f.write(summary.model_dump_json() + "\n")
        logger.info("epoch %d (%s): %d/%d valid, best so far %s", summary.epoch, summary.phase,
                    summary.valid_count, summary.attempted, summary.best_so_far)
        return summary

    def best_so_far(self, epoch: int) -> Optional[float]:
        """Max accuracy over Valid records with epoch <= `epoch`"""
        scores = [r.accuracy for r in self.repo.valid_records(METRIC_NAME, self.dataset_tag) if r.epoch <= epoch]
        return max(scores) if scores else None

    def _summarize(self, epoch: int, phase: str, attempted: int, results: Sequence[Optional[EvalResult]],
                   failures: int = 0, duplicates: int = 0) -> EpochSummary:
        scores = [r.accuracy for r in results if r is not None]
        return EpochSummary(
            epoch=epoch, phase=phase, attempted=attempted, valid_count=len(scores), proposer_failures=failures,
            duplicates=duplicates,
            mean_accuracy=float(np.mean(scores)) if scores else None,
            max_accuracy=max(scores) if scores else None,
            best_so_far=self.best_so_far(epoch),
        )

    def _pool(self, size: int):
        return ThreadPoolExecutor(max_workers=size) if size > 1 else None

    @staticmethod
    def _map(pool, fn, items):
        return list(pool.map(fn, items)) if pool is not None else [fn(item) for item in items]

    # ------------------------------------------------------------ bootstrap

    def run_bootstrap(self, seed_src: SourceText) -> EpochSummary:
        """Epoch 0 population of `bootstrap_count` distinct verified variants of the seed"""
        cfg = self.cfg
        if cfg.bootstrap_count <= 0:
            raise EmptyPopulation("bootstrap_count must be positive to seed the search")
        report = verify(seed_src, cfg.max_params)
        if not report.valid:
            raise EmptyPopulation(f"seed network is {report.verdict_text()}")

        mutator = cfg.proposer.mutator.model_copy(update={"rng_seed": cfg.rng_seed})
        variants = bootstrap(seed_src, cfg.bootstrap_count, mutator, workers=cfg.workers)
        seed_id = CandidateRecord.create(seed_src.text, 0).id

        pool = self._pool(cfg.workers)
        try:
            results = self._map(pool, lambda v: self.evaluator.evaluate(v[0], cfg.hp), variants)
        finally:
            if pool is not None:
                pool.shutdown()
        for (src, _), result in zip(variants, results):
            self.repo.append(CandidateRecord.create(
                src.text, 0, hp=cfg.hp, metric_name=METRIC_NAME, dataset_tag=self.dataset_tag,
                accuracy=result.accuracy, params=result.params, parent_id=seed_id, proposer_kind="bootstrap"))
        return self._record_summary(self._summarize(0, "bootstrap", len(variants), results))

    # ------------------------------------------------------------ generation

    def sample_baselines(self, epoch: int) -> List[CandidateRecord]:
        cfg = self.cfg
        population = self.repo.valid_records(METRIC_NAME, self.dataset_tag)
        if not population:
            raise EmptyPopulation("repository holds no Valid record to use as a baseline")
        if cfg.policy == "topk":
            population = sorted(population, key=lambda r: (-r.accuracy, r.id))[:cfg.top_k]
        rng = draw_rng(cfg.rng_seed, _SAMPLE_STREAM, epoch)
        picks = rng.integers(len(population), size=cfg.candidates_per_epoch)
        return [population[i] for i in picks]

    def _propose(self, job: Tuple[int, int, CandidateRecord]) -> Tuple[Optional[str], str]:
        epoch, index, baseline = job
        prompt = build_prompt(baseline, baseline.accuracy + self.cfg.delta, set(self.cfg.ablate))
        try:
            text = self.proposer.propose(prompt, SourceText(baseline.source),
                                         draw_rng(self.cfg.rng_seed, _PROPOSE_STREAM, epoch, index))
        except ChannelForgeError as e:
            logger.warning("proposer %s failed on candidate %d of epoch %d: %s",
                           self.proposer.kind, index, epoch, e)
            return None, str(e)
        return text, ""

    def _assess(self, job: Tuple[int, CandidateRecord, str]) -> Tuple[CandidateRecord, Optional[EvalResult]]:
        """Extract, verify and evaluate one proposal; failures become Invalid records"""
        epoch, baseline, raw = job
        fields = dict(epoch=epoch, metric_name=METRIC_NAME, dataset_tag=self.dataset_tag,
                      parent_id=baseline.id, proposer_kind=self.proposer.kind)
        extraction = extract_candidate(raw, baseline.hp)
        if not extraction.ok:
            return CandidateRecord.create(raw, hp=extraction.hp,
                                          verdict=f"Invalid(stage 1, parse: {extraction.reason})", **fields), None
        source = extraction.src.text
        report = verify(extraction.src, self.cfg.max_params)
        if not report.valid:
            return CandidateRecord.create(source, hp=extraction.hp, verdict=report.verdict_text(), **fields), None
        try:
            result = self.evaluator.evaluate(extraction.src, extraction.hp)
        except ChannelForgeError as e:
            logger.warning("evaluation failed for a verified candidate: %s", e)
            return CandidateRecord.create(source, hp=extraction.hp, verdict=f"Invalid(evaluation, {e})",
                                          **fields), None
        return CandidateRecord.create(source, hp=extraction.hp, accuracy=result.accuracy, params=result.params,
                                      **fields), result

    def run_epoch(self, epoch: int) -> EpochSummary:
        """One generation round; every attempt is stored, Valid ones with their accuracy"""
        started = time.perf_counter()
        baselines = self.sample_baselines(epoch)
        jobs = [(epoch, i, baseline) for i, baseline in enumerate(baselines)]

        in_flight = self.cfg.proposer.max_in_flight if self.proposer.concurrent else 1
        pool = self._pool(in_flight)
        try:
            proposals = self._map(pool, self._propose, jobs)
        finally:
            if pool is not None:
                pool.shutdown()

        answered = [(epoch, baseline, text) for (_, _, baseline), (text, _) in zip(jobs, proposals)
                    if text is not None]
        failures = len(jobs) - len(answered)
        pool = self._pool(self.cfg.workers)
        try:
            assessed = self._map(pool, self._assess, answered)
        finally:
            if pool is not None:
                pool.shutdown()

        stored = self._store(epoch, assessed)
        self.export_epoch_corpus(epoch)
        summary = self._summarize(epoch, "generate", len(jobs), stored, failures, len(assessed) - len(stored))
        logger.debug("epoch %d took %.2fs", epoch, time.perf_counter() - started)
        return self._record_summary(summary)

    def _store(self, epoch: int, assessed: Sequence[Tuple[CandidateRecord, Optional[EvalResult]]]
               ) -> List[Optional[EvalResult]]:
        """Append the records not already present; results of the stored ones"""
        stored = []
        for record, result in assessed:
            if record.id in self.repo:
                logger.info("epoch %d: candidate %s is already stored, skipped", epoch, record.id[:12])
                continue
            self.repo.append(record)
            stored.append(result)
        return stored

    def export_epoch_corpus(self, epoch: int) -> Optional[Path]:
        pairs = self.repo.extract_pairs(METRIC_NAME, self.cfg.max_pairs, self.cfg.rng_seed + epoch,
                                        dataset_tag=self.dataset_tag)
        if not pairs:
            logger.info("epoch %d: no improving pairs yet, corpus not written", epoch)
            return None
        path = self.out_dir / CORPUS_DIR / f"epoch_{epoch:02d}.jsonl"
        export_corpus(pairs, path)
        return path

    # ------------------------------------------------------------ full run

    def run_search(self, seed_src: SourceText, analyze_at_end: bool = True) -> Tuple[List[EpochSummary], List[Path]]:
        """
        Bootstrap then generation epochs up to cfg.epochs - 1. Resumes after the
        last epoch recorded in epochs.jsonl when the run directory already has one.

        Returns:
            (all epoch summaries of the run, report file paths)
        """
        done = self.summaries()
        if not done:
            self.write_manifest(seed_src)
        if not any(s.phase == "bootstrap" for s in done):
            self.run_bootstrap(seed_src)
        generated = [s.epoch for s in self.summaries() if s.phase == "generate"]
        start = max(generated) + 1 if generated else self.cfg.first_generation_epoch
        if generated:
            logger.info("resuming %s at epoch %d", self.out_dir, start)

        for epoch in range(start, self.cfg.epochs):
            self.run_epoch(epoch)

        paths: List[Path] = []
        if analyze_at_end:
            from src.stats import analyze
            paths = analyze(self.repo.path, out_dir=self.out_dir / REPORT_DIR).paths
        return self.summaries(), paths

    def close(self) -> None:
        self.repo.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
