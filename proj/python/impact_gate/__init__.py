"""UI action impact classification, gating and evaluation."""

from ._core import (
    AnnotationStore,
    ImpactGateError,
    apply_policy,
    build_prompt,
    corpus_stats,
    dedup_consecutive,
    default_taxonomy,
    indicator,
    ingest_trace,
    jaccard,
    load_taxonomy,
    parse_response,
    render_system_text,
    run_cli,
    screen_html,
    serialize_prediction,
    validate_policy,
)

__all__ = [
    "AnnotationStore",
    "ImpactGateError",
    "apply_policy",
    "build_prompt",
    "corpus_stats",
    "dedup_consecutive",
    "default_taxonomy",
    "indicator",
    "ingest_trace",
    "jaccard",
    "load_taxonomy",
    "parse_response",
    "render_system_text",
    "run_cli",
    "screen_html",
    "serialize_prediction",
    "validate_policy",
]
