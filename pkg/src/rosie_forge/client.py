"""Retrying JSON-over-HTTP client shared by all model-serving backends."""

from __future__ import annotations

import time
from dataclasses import dataclass

import requests


class BackendError(Exception):
    """Base for failures talking to a remote backend."""


class TransportError(BackendError):
    """Connection failure or non-2xx status; the body is preserved."""

    def __init__(self, message: str, status: int | None = None, body: str | None = None):
        super().__init__(message)
        self.status = status
        self.body = body


class MalformedResponseError(BackendError):
    """Backend replied 2xx but the payload violates the wire contract."""

    def __init__(self, message: str, payload=None):
        super().__init__(message)
        self.payload = payload


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.2  # seconds before the second attempt
    factor: float = 2.0

    def delay(self, attempt: int) -> float:
        return self.backoff * self.factor**attempt


def post_json(url: str, payload: dict, retry: RetryPolicy | None = None, timeout: float = 30.0) -> dict:
    """POST JSON and return the decoded JSON reply.

    Connection errors and 5xx replies are retried with exponential backoff up
    to ``retry.attempts`` total tries; other non-2xx replies fail immediately
    with the body preserved.
    """
    retry = retry or RetryPolicy()
    last: TransportError | None = None
    for attempt in range(retry.attempts):
        try:
            resp = requests.post(url, json=payload, timeout=timeout)
        except requests.RequestException as exc:
            last = TransportError(f"POST {url} failed: {exc}")
        else:
            if 200 <= resp.status_code < 300:
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise MalformedResponseError(
                        f"POST {url}: reply is not JSON: {exc}", payload=resp.text
                    ) from exc
                if not isinstance(body, dict):
                    raise MalformedResponseError(
                        f"POST {url}: expected JSON object, got {type(body).__name__}",
                        payload=body,
                    )
                return body
            last = TransportError(
                f"POST {url} returned {resp.status_code}",
                status=resp.status_code,
                body=resp.text,
            )
            if resp.status_code < 500:
                raise last
        if attempt + 1 < retry.attempts:
            time.sleep(retry.delay(attempt))
    assert last is not None
    raise last
