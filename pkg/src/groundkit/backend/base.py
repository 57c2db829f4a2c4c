"""Model-access interfaces shared by the pipeline and the test doubles."""

from __future__ import annotations

import hashlib
from typing import Protocol, runtime_checkable

import numpy as np


class BackendError(Exception):
    """A backend could not produce a response."""


class TransportError(BackendError):
    """HTTP-level failure.

    Attributes:
        status: HTTP status code, or None when no response arrived.
        retryable: whether the retry policy treats this failure as transient.
        attempts: how many requests were sent before giving up.
    """

    def __init__(self, message: str, *, status: int | None = None, retryable: bool = False, attempts: int = 1):
        super().__init__(message)
        self.status = status
        self.retryable = retryable
        self.attempts = attempts


class ScoringFailure(BackendError):
    """The scorer could not produce a relevance score for an element image."""


@runtime_checkable
class GroundingBackend(Protocol):
    def ground(self, image: np.ndarray, instruction: str) -> str:
        """Return the model's textual answer for one image + instruction."""
        ...


@runtime_checkable
class SelectionScorer(Protocol):
    def score(self, image: np.ndarray, instruction: str) -> float:
        """Return a finite relevance score or raise :class:`ScoringFailure`."""
        ...


def request_key(image: np.ndarray, instruction: str) -> str:
    """Stable hash of one request, used to key scripted responses and noise seeds."""
    h = hashlib.sha256()
    h.update(repr((image.shape, str(image.dtype))).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    h.update(b"\0")
    h.update(instruction.encode("utf-8"))
    return h.hexdigest()


def describe(obj) -> str:
    """Short identity string for reports."""
    fn = getattr(obj, "describe", None)
    return fn() if callable(fn) else type(obj).__name__
