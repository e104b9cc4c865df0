"""
Channel-Forge Model Repository
Append-only store of every evaluated candidate, with pair extraction and
fine-tuning corpus export.
"""

import hashlib
import json
import logging
import os
import time
import weakref
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from generator_files.prompt_template import build_prompt, format_candidate
from src.errors import NoPairs, RepositoryError, RepositoryLocked
from src.ir.arch_ir import Hyperparams

logger = logging.getLogger(__name__)

REPOSITORY_FILE = "repository.jsonl"
VALID = "Valid"
ProposerKindName = Literal["bootstrap", "random", "external", "replay", "anthropic"]


# seconds an empty lock file is trusted
LOCK_GRACE_SECONDS = 5.0

# writers alive in this process, by resolved lock path
_HOLDERS: "weakref.WeakValueDictionary[str, ModelRepository]" = weakref.WeakValueDictionary()


def _lock_owner(lock_path: Path) -> Optional[int]:
    try:
        return int(lock_path.read_text(encoding="utf-8").strip())
    except (OSError, ValueError):
        return None


def _holder_alive(pid: Optional[int], key: str, lock_path: Path) -> bool:
    """Whether the writer that wrote the lock still exists"""
    if pid is None:
        # a racing writer may not have written its pid yet
        try:
            age = time.time() - lock_path.stat().st_mtime
        except FileNotFoundError:
            return False
        return key in _HOLDERS or age < LOCK_GRACE_SECONDS
    if pid == os.getpid():
        return key in _HOLDERS
    if os.name == "nt":
        # signal 0 does not test liveness on Windows
        return True
    try:
        os.kill(pid, 0)
    except ProcessLookupError:
        return False
    except PermissionError:
        return True
    return True


def content_id(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


class CandidateRecord(BaseModel):
    """One stored candidate; accuracy is present exactly when the verdict is Valid"""

    model_config = ConfigDict(frozen=True)

    id: str
    epoch: int = Field(ge=0)
    source: str
    hp: Hyperparams = Field(default_factory=Hyperparams)
    metric_name: str = "accuracy"
    dataset_tag: str = "surrogate"
    accuracy: Optional[float] = Field(default=None, ge=0, le=1)
    params: Optional[int] = Field(default=None, ge=0)
    verdict: str = VALID
    parent_id: Optional[str] = None
    proposer_kind: ProposerKindName = "bootstrap"
    created_at: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))

    @model_validator(mode="after")
    def check_invariants(self):
        if self.id != content_id(self.source):
            raise ValueError("id must be the sha256 of the source")
        if (self.accuracy is not None) != self.valid:
            raise ValueError(f"accuracy {self.accuracy} inconsistent with verdict {self.verdict}")
        return self

    @property
    def valid(self) -> bool:
        return self.verdict == VALID

    @classmethod
    def create(cls, source: str, epoch: int, **fields) -> "CandidateRecord":
        return cls(id=content_id(source), source=source, epoch=epoch, **fields)


@dataclass(frozen=True)
class TrainingPair:
    baseline: CandidateRecord
    addon: CandidateRecord


class ModelRepository:
    """
    Line-delimited JSON store with an in-memory index rebuilt on open.

    A writer holds `<file>.lock` (created exclusively, holding its pid) until
    close(); readers open with readonly=True and take no lock. A lock whose
    writer has exited, or was dropped without close(), is broken on open.
    """

    def __init__(self, path: Union[str, Path], readonly: bool = False):
        path = Path(path)
        self.path = path / REPOSITORY_FILE if path.suffix != ".jsonl" else path
        self.readonly = readonly
        self.lock_path = self.path.with_name(self.path.name + ".lock")
        self._records: List[CandidateRecord] = []
        self._index: Dict[str, int] = {}
        self._locked = False
        if not readonly:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._acquire()
        try:
            self._load()
        except Exception:
            self.close()
            raise

    def _acquire(self) -> None:
        key = str(self.lock_path.resolve())
        for _ in range(2):
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                owner = _lock_owner(self.lock_path)
                if _holder_alive(owner, key, self.lock_path):
                    raise RepositoryLocked(f"{self.path} is locked by writer pid {owner} ({self.lock_path})")
                logger.warning("%s: breaking stale lock left by pid %s", self.path, owner)
                self.lock_path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as f:
                f.write(str(os.getpid()))
            self._locked = True
            _HOLDERS[key] = self
            return
        raise RepositoryLocked(f"{self.path}: could not take {self.lock_path}")

    def _load(self) -> None:
        if not self.path.exists():
            return
        data = self.path.read_bytes()
        offset = 0
        good_end = 0
        while offset < len(data):
            newline = data.find(b"\n", offset)
            end = len(data) if newline < 0 else newline
            line = data[offset:end]
            is_last = newline < 0 or newline == len(data) - 1
            try:
                if newline < 0:
                    raise ValueError("unterminated line")
                if line.strip():
                    record = CandidateRecord.model_validate_json(line)
                    if record.id not in self._index:
                        self._index[record.id] = len(self._records)
                        self._records.append(record)
            except (ValueError, ValidationError) as e:
                if not is_last:
                    raise RepositoryError(f"{self.path}: corrupt record at byte {offset}: {e}") from e
                logger.warning("%s: ignoring torn final record at byte %d", self.path, offset)
                break
            offset = end + 1
            good_end = offset
        if good_end < len(data) and not self.readonly:
            with open(self.path, "r+b") as f:
                f.truncate(good_end)
        logger.info("opened %s with %d records", self.path, len(self._records))

    # ------------------------------------------------------------------

    def append(self, record: CandidateRecord) -> str:
        """Durably append; an id already present is a no-op"""
        if self.readonly:
            raise RepositoryError(f"{self.path} is open read-only")
        if record.id in self._index:
            return record.id
        line = record.model_dump_json() + "\n"
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())
        self._index[record.id] = len(self._records)
        self._records.append(record)
        return record.id

    def get(self, record_id: str) -> Optional[CandidateRecord]:
        position = self._index.get(record_id)
        return None if position is None else self._records[position]

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._index

    def __len__(self) -> int:
        return len(self._records)

    def records(self) -> List[CandidateRecord]:
        return list(self._records)

    def valid_records(self, metric_name: Optional[str] = None,
                      dataset_tag: Optional[str] = None) -> List[CandidateRecord]:
        return [r for r in self._records if r.valid
                and (metric_name is None or r.metric_name == metric_name)
                and (dataset_tag is None or r.dataset_tag == dataset_tag)]

    def epoch_records(self, epoch: int) -> List[CandidateRecord]:
        return [r for r in self._records if r.epoch == epoch]

    def stats(self) -> Dict[str, object]:
        """Record counts overall and per epoch"""
        per_epoch: Dict[int, Dict[str, int]] = {}
        for r in self._records:
            counts = per_epoch.setdefault(r.epoch, {"total": 0, "valid": 0})
            counts["total"] += 1
            counts["valid"] += int(r.valid)
        return {
            "records": len(self._records),
            "valid": sum(1 for r in self._records if r.valid),
            "epochs": dict(sorted(per_epoch.items())),
        }

    def extract_pairs(self, metric_name: str = "accuracy", max_pairs: int = 1000, rng_seed: int = 0,
                      dataset_tag: Optional[str] = None) -> List[TrainingPair]:
        return extract_pairs(self.valid_records(metric_name, dataset_tag), max_pairs, rng_seed)

    def close(self) -> None:
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            _HOLDERS.pop(str(self.lock_path.resolve()), None)
            self._locked = False

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _better_index(records: List[CandidateRecord]):
    """
    Records sorted by (metric, dataset tag, accuracy), and for each record the
    position in that order of its first strictly better peer and how many follow.
    """
    acc = np.array([r.accuracy for r in records], dtype=np.float64)
    keys = [(r.metric_name, r.dataset_tag) for r in records]
    codes = {k: c for c, k in enumerate(sorted(set(keys)))}
    key_codes = np.array([codes[k] for k in keys], dtype=np.int64)
    order = np.lexsort((np.arange(len(records)), acc, key_codes))
    first_better = np.empty(len(records), dtype=np.int64)
    group_end = np.empty(len(records), dtype=np.int64)
    bounds = np.searchsorted(key_codes[order], np.arange(len(codes) + 1))
    for code in range(len(codes)):
        lo, hi = bounds[code], bounds[code + 1]
        members = order[lo:hi]
        first_better[members] = lo + np.searchsorted(acc[members], acc[members], side="right")
        group_end[members] = hi
    return order, first_better, group_end - first_better


def improving_pairs(records: List[CandidateRecord]) -> np.ndarray:
    """(i, j) index pairs with the same metric and dataset tag and accuracy[j] > accuracy[i]"""
    if not records:
        return np.empty((0, 2), dtype=np.int64)
    order, first_better, n_better = _better_index(records)
    return _pairs_at(np.arange(int(n_better.sum()), dtype=np.int64), order, first_better, n_better)


def _pairs_at(ranks: np.ndarray, order: np.ndarray, first_better: np.ndarray, n_better: np.ndarray) -> np.ndarray:
    # rank k enumerates baselines in record order, then addons by ascending accuracy
    ends = np.cumsum(n_better)
    baseline = np.searchsorted(ends, ranks, side="right")
    offset = ranks - (ends[baseline] - n_better[baseline])
    addon = order[first_better[baseline] + offset]
    return np.stack([baseline, addon], axis=1)


def extract_pairs(records: Iterable[CandidateRecord], max_pairs: int, rng_seed: int = 0) -> List[TrainingPair]:
    """Pairs drawn uniformly without replacement from all strictly improving Valid pairs"""
    records = [r for r in records if r.valid]
    if not records or max_pairs <= 0:
        return []
    order, first_better, n_better = _better_index(records)
    total = int(n_better.sum())
    if total == 0:
        return []
    rng = np.random.default_rng(rng_seed)
    ranks = np.sort(rng.choice(total, size=min(max_pairs, total), replace=False))
    return [TrainingPair(records[i], records[j]) for i, j in _pairs_at(ranks, order, first_better, n_better)]


def export_corpus(pairs: List[TrainingPair], path: Union[str, Path]) -> int:
    """One {prompt, completion} line per pair"""
    if not pairs:
        raise NoPairs("no improving pairs to export")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for pair in pairs:
            prompt = build_prompt(pair.baseline, pair.addon.accuracy)
            completion = format_candidate(pair.addon.source, pair.addon.hp)
            f.write(json.dumps({"prompt": prompt.text, "completion": completion}, ensure_ascii=False) + "\n")
    logger.info("wrote %d corpus records to %s", len(pairs), path)
    return len(pairs)
