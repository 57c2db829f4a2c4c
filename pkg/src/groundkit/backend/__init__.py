from .base import (
    BackendError,
    GroundingBackend,
    ScoringFailure,
    SelectionScorer,
    TransportError,
    describe,
    request_key,
)
from .http import (
    BackendConfig,
    HttpClient,
    HttpGroundingBackend,
    HttpYesScorer,
    RetryPolicy,
    build_chat_request,
    http_ground,
    http_yes_score,
    request_hash,
)
from .parsing import parse_point, parse_point_xy, split_think_answer
from .testing import (
    ConstantScorer,
    IntersectOracleScorer,
    NoiseConfig,
    OracleBackend,
    ScriptedBackend,
)

__all__ = [
    "BackendConfig",
    "BackendError",
    "ConstantScorer",
    "GroundingBackend",
    "HttpClient",
    "HttpGroundingBackend",
    "HttpYesScorer",
    "IntersectOracleScorer",
    "NoiseConfig",
    "OracleBackend",
    "RetryPolicy",
    "ScoringFailure",
    "ScriptedBackend",
    "SelectionScorer",
    "TransportError",
    "build_chat_request",
    "describe",
    "http_ground",
    "http_yes_score",
    "parse_point",
    "parse_point_xy",
    "request_hash",
    "request_key",
    "split_think_answer",
]
