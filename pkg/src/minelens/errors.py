"""Exception hierarchy shared across the minelens package."""

from __future__ import annotations


class MinelensError(Exception):
    """Base class for all package errors."""

    code = "error"


class ConfigError(MinelensError):
    code = "config_error"


# ---------------------------------------------------------------- raster I/O


class DecodeError(MinelensError):
    code = "decode_error"


class MissingBand(MinelensError):
    code = "missing_band"

    def __init__(self, name: str):
        super().__init__(f"required band {name} is missing")
        self.name = name


class GeoreferenceMissing(MinelensError):
    code = "georeference_missing"


class EmptyScene(MinelensError):
    code = "empty_scene"


class ShapeError(MinelensError):
    code = "shape_error"


class NoViableScene(MinelensError):
    code = "no_viable_scene"


# ------------------------------------------------------------ udm classifier


class OutOfExtent(MinelensError):
    code = "out_of_extent"


class InsufficientSamples(MinelensError):
    code = "insufficient_samples"

    def __init__(self, class_name: str):
        super().__init__(f"no training samples for class {class_name}")
        self.class_name = class_name


class ModelMismatch(MinelensError):
    code = "model_mismatch"


# ------------------------------------------------------------- site registry


class UnsupportedLatitude(MinelensError):
    code = "unsupported_latitude"


class CatalogUnavailable(MinelensError):
    code = "catalog_unavailable"

    def __init__(self, message: str = "scene catalog unavailable", retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class EmptyDossier(MinelensError):
    code = "empty_dossier"


class SegmentTooLong(MinelensError):
    code = "segment_too_long"

    def __init__(self, segment: str, word_count: int):
        super().__init__(f"dossier segment {segment} has {word_count} words (limit 300)")
        self.segment = segment
        self.word_count = word_count


class StatusTransitionError(MinelensError):
    code = "status_transition"


# ------------------------------------------------------------------ provider


class ProviderError(MinelensError):
    code = "provider_error"


class ProviderRejected(ProviderError):
    """Non-retryable provider failure (4xx-style rejection)."""

    code = "provider_rejected"


class ProviderTransient(ProviderError):
    """Retryable in-flight failure (timeouts, 5xx)."""

    code = "provider_transient"


class ProviderUnavailable(ProviderError):
    """Raised once the retry budget for transient failures is exhausted."""

    code = "provider_unavailable"


class EmptyGeneration(ProviderError):
    code = "empty_generation"


class TemplateError(MinelensError):
    code = "template_error"


class CaptionViolation(MinelensError):
    """Caption still violates hard constraints after one regeneration."""

    code = "caption_violation"


# --------------------------------------------------------------------- judge


class JudgeFormatError(MinelensError):
    code = "judge_format"


class JudgeRangeError(MinelensError):
    code = "judge_range"


class NoObjectFound(MinelensError):
    code = "no_object_found"


class ParseFailed(MinelensError):
    code = "parse_failed"


# ----------------------------------------------------------------- retrieval


class MetadataMissing(MinelensError):
    code = "metadata_missing"


class EmbedderMismatch(MinelensError):
    code = "embedder_mismatch"


class InsufficientEvidence(MinelensError):
    code = "insufficient_evidence"

    def __init__(self, message: str = "insufficient evidence", trace=None):
        super().__init__(message)
        self.trace = trace


class UngroundedCitation(MinelensError):
    code = "ungrounded_citation"

    def __init__(self, cited: str):
        super().__init__(f"cited source {cited!r} is not in the evidence set")
        self.cited = cited


class FlatDocument(MinelensError):
    """No sections detectable; callers may fall back to a single section."""

    code = "flat_document"


# ------------------------------------------------------------------ pipeline


class StageError(MinelensError):
    code = "stage_error"

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class SyncFailed(MinelensError):
    code = "sync_failed"
