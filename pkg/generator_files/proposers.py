"""
Candidate proposers: where new networks come from.

Every proposer returns raw text; the orchestrator runs extract_candidate and
verify on it, so a proposer is free to return garbage.
"""

import json
import logging
import os
import time
from pathlib import Path
from typing import Callable, List, Literal, Optional
from urllib.parse import urlparse

import numpy as np
import requests
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, model_validator

from generator_files.prompt_template import Prompt, format_candidate
from src.dsl.parser import SourceText
from src.errors import ExternalUnreachable, ReplayExhausted
from src.mutation.mutator import MutatorConfig, mutate

load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_ENDPOINT = os.getenv("CHANNEL_FORGE_GENERATOR_URL", "http://127.0.0.1:8765/generate")
RETRY_ATTEMPTS = 3
BACKOFF_BASE = 0.5


class GenerationParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    temperature: float = Field(default=0.8, gt=0)
    top_k: int = Field(default=70, ge=1)
    top_p: float = Field(default=0.9, gt=0, le=1)
    max_tokens: int = Field(default=4096, ge=1)


class ProposerConfig(BaseModel):
    """Which proposer to run and its settings; `kind` selects the variant"""

    model_config = ConfigDict(frozen=True)

    kind: Literal["random", "external", "replay", "anthropic"] = "random"
    mutator: MutatorConfig = Field(default_factory=MutatorConfig)
    endpoint: Optional[str] = None
    params: GenerationParams = Field(default_factory=GenerationParams)
    replay_path: Optional[str] = None
    model: str = "claude-3-5-haiku-20241022"
    timeout: float = Field(default=60.0, gt=0)
    max_in_flight: int = Field(default=4, ge=1)

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == "external":
            url = urlparse(self.endpoint or DEFAULT_ENDPOINT)
            if url.scheme not in ("http", "https") or not url.netloc:
                raise ValueError(f"endpoint {self.endpoint!r} is not an http(s) URL")
        if self.kind == "replay" and not self.replay_path:
            raise ValueError("replay proposer needs replay_path")
        return self


def with_retries(call: Callable[[], str], endpoint: str, sleep: Callable[[float], None] = time.sleep) -> str:
    """RETRY_ATTEMPTS tries with exponential backoff between them"""
    last_error: Optional[BaseException] = None
    for attempt in range(RETRY_ATTEMPTS):
        try:
            return call()
        except (requests.RequestException, ValueError, KeyError, ConnectionError) as e:
            last_error = e
            if attempt + 1 < RETRY_ATTEMPTS:
                delay = BACKOFF_BASE * 2 ** attempt
                logger.warning("generator %s failed (%s), retry %d in %.1fs", endpoint, e, attempt + 1, delay)
                sleep(delay)
    raise ExternalUnreachable(endpoint, RETRY_ATTEMPTS, last_error)


class Proposer:
    kind = "base"
    # proposers whose calls may overlap
    concurrent = False

    def propose(self, prompt: Prompt, baseline_src: SourceText, rng: np.random.Generator) -> str:
        raise NotImplementedError


class RandomMutationProposer(Proposer):
    """Ignores the prompt text and returns one mutation round of the baseline"""

    kind = "random"

    def __init__(self, cfg: MutatorConfig):
        self.cfg = cfg

    def propose(self, prompt: Prompt, baseline_src: SourceText, rng: np.random.Generator) -> str:
        _, src = mutate(baseline_src, self.cfg, rng, rounds=1)
        return format_candidate(src.text, prompt.hp)


class ExternalProposer(Proposer):
    """POSTs {prompt, max_tokens, temperature, top_k, top_p} and returns the `text` field verbatim"""

    kind = "external"
    concurrent = True

    def __init__(self, endpoint: str, params: GenerationParams, timeout: float = 60.0,
                 session: Optional[requests.Session] = None, sleep: Callable[[float], None] = time.sleep):
        self.endpoint = endpoint
        self.params = params
        self.timeout = timeout
        self.session = session or requests.Session()
        self.sleep = sleep

    def _post(self, prompt: Prompt) -> str:
        body = {"prompt": prompt.text, **self.params.model_dump()}
        response = self.session.post(self.endpoint, json=body, timeout=self.timeout)
        response.raise_for_status()
        text = response.json()["text"]
        if not isinstance(text, str):
            raise ValueError("response field 'text' is not a string")
        return text

    def propose(self, prompt: Prompt, baseline_src: SourceText, rng: np.random.Generator) -> str:
        return with_retries(lambda: self._post(prompt), self.endpoint, self.sleep)


class ReplayProposer(Proposer):
    """Returns recorded responses in order; the transcript is JSON lines with a `text` field"""

    kind = "replay"

    def __init__(self, path):
        self.path = Path(path)
        self.responses: List[str] = []
        with open(self.path, encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    self.responses.append(json.loads(line)["text"])
        self.position = 0

    def propose(self, prompt: Prompt, baseline_src: SourceText, rng: np.random.Generator) -> str:
        if self.position >= len(self.responses):
            raise ReplayExhausted(f"{self.path} has only {len(self.responses)} responses")
        text = self.responses[self.position]
        self.position += 1
        return text


def make_proposer(cfg: ProposerConfig) -> Proposer:
    if cfg.kind == "random":
        return RandomMutationProposer(cfg.mutator)
    if cfg.kind == "external":
        return ExternalProposer(cfg.endpoint or DEFAULT_ENDPOINT, cfg.params, cfg.timeout)
    if cfg.kind == "replay":
        return ReplayProposer(cfg.replay_path)
    from generator_files.claude_api import AnthropicProposer
    return AnthropicProposer(cfg.model, cfg.params)
