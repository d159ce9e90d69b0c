"""Minimal chat-completion HTTP client with retry/backoff.

The API key is read from a named environment variable at call time and is
never stored in configuration files or artifacts.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass

import requests

from .errors import AdvisorUnavailable

log = logging.getLogger(__name__)


@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    backoff: float = 2.0


@dataclass
class ChatClient:
    endpoint: str
    model_name: str
    api_key_env: str = "ADVISOR_API_KEY"
    retry: RetryPolicy = None  # type: ignore[assignment]
    timeout: float = 60.0

    def __post_init__(self):
        if self.retry is None:
            self.retry = RetryPolicy()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: list[dict], parse=None):
        """POST a chat request; return the reply text (or ``parse``'s result).

        ``parse`` may raise ``ValueError`` to signal an unusable reply; the
        request is then retried under the same backoff policy.
        """
        body = {"model": self.model_name, "messages": messages}
        delay = self.retry.base_delay
        last_err = None
        for attempt in range(self.retry.max_retries + 1):
            if attempt > 0:
                time.sleep(delay)
                delay *= self.retry.backoff
            try:
                resp = requests.post(
                    self.endpoint, json=body, headers=self._headers(), timeout=self.timeout
                )
                if resp.status_code >= 400:
                    last_err = f"HTTP {resp.status_code}: {resp.text[:200]}"
                    log.warning("chat request failed (%s), attempt %d", last_err, attempt + 1)
                    continue
                content = resp.json()["choices"][0]["message"]["content"]
                if parse is None:
                    return content
                return parse(content)
            except (requests.RequestException, KeyError, ValueError, json.JSONDecodeError) as exc:
                last_err = repr(exc)
                log.warning("chat request failed (%s), attempt %d", last_err, attempt + 1)
        raise AdvisorUnavailable(f"chat endpoint failed after retries: {last_err}")


def parse_json_name_list(text: str) -> list[str]:
    """Parse a strict JSON list of strings, tolerating surrounding prose."""
    text = text.strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("["), text.rfind("]")
        if start < 0 or end <= start:
            raise ValueError("reply contains no JSON list")
        value = json.loads(text[start : end + 1])
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ValueError("reply is not a JSON list of names")
    return value
