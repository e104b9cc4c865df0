"""
Anthropic-backed proposer: the prompt goes through the messages API and the
answer text is handled exactly like an external generator response.
"""

import logging
import os
import time
from typing import Callable, Optional

import anthropic
import numpy as np
from dotenv import load_dotenv

from generator_files.prompt_template import Prompt
from generator_files.proposers import GenerationParams, Proposer, RETRY_ATTEMPTS, BACKOFF_BASE
from src.dsl.parser import SourceText
from src.errors import ExternalUnreachable

load_dotenv()

logger = logging.getLogger(__name__)


class AnthropicProposer(Proposer):
    kind = "anthropic"
    concurrent = True

    def __init__(self, model: str, params: GenerationParams, client: Optional[anthropic.Anthropic] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.model = model
        self.params = params
        self.client = client or anthropic.Anthropic(api_key=os.environ.get("ANTHROPIC_API_KEY"))
        self.sleep = sleep

    def _ask(self, prompt: Prompt) -> str:
        message = self.client.messages.create(
            model=self.model,
            max_tokens=self.params.max_tokens,
            temperature=self.params.temperature,
            top_k=self.params.top_k,
            top_p=self.params.top_p,
            messages=[{"role": "user", "content": prompt.text}],
        )
        return "".join(block.text for block in message.content if getattr(block, "type", "") == "text")

    def propose(self, prompt: Prompt, baseline_src: SourceText, rng: np.random.Generator) -> str:
        last_error = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                return self._ask(prompt)
            except anthropic.APIError as e:
                last_error = e
                if attempt + 1 < RETRY_ATTEMPTS:
                    delay = BACKOFF_BASE * 2 ** attempt
                    logger.warning("anthropic %s failed (%s), retry %d in %.1fs", self.model, e, attempt + 1, delay)
                    self.sleep(delay)
        raise ExternalUnreachable(f"anthropic:{self.model}", RETRY_ATTEMPTS, last_error)
