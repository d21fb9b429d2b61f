"""
Error Handler Module
Domain exceptions, user-facing error descriptions and logging setup.

Every exception raised by the package derives from HierSGError and carries an
error key. The CLI turns keys into readable messages and exit codes.
"""

import json
import logging
import traceback
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


class ErrorCategory(Enum):
    """Categories of errors for appropriate handling."""
    CONFIG = "config"
    VALIDATION = "validation"
    FORMAT = "format"
    NUMERIC = "numeric"
    BACKEND = "backend"
    EVALUATION = "evaluation"
    SYSTEM = "system"


@dataclass(frozen=True)
class ErrorInfo:
    """Structured error information."""
    category: ErrorCategory
    title: str
    message: str
    suggestion: str
    technical_details: Optional[str] = None
    can_retry: bool = False


ERROR_MESSAGES: Dict[str, ErrorInfo] = {
    # Configuration and input
    'config_error': ErrorInfo(
        category=ErrorCategory.CONFIG,
        title="Invalid Configuration",
        message="The run configuration could not be used.",
        suggestion="Check the config file and flag overrides against the documented sections.",
    ),
    'file_not_found': ErrorInfo(
        category=ErrorCategory.CONFIG,
        title="File Not Found",
        message="An input file does not exist.",
        suggestion="Check the path passed on the command line or in the config file.",
    ),
    'permission_denied': ErrorInfo(
        category=ErrorCategory.CONFIG,
        title="Permission Denied",
        message="A file could not be read or written.",
        suggestion="Check permissions on the input files and the --out directory.",
    ),
    'format_error': ErrorInfo(
        category=ErrorCategory.FORMAT,
        title="Malformed Input",
        message="An input file does not follow the expected format.",
        suggestion="Fix the reported line and rerun.",
    ),
    'hierarchy_invalid': ErrorInfo(
        category=ErrorCategory.VALIDATION,
        title="Invalid Relation Hierarchy",
        message="The hierarchy is not a partition of the relation vocabulary into non-empty categories.",
        suggestion="Assign every relation to exactly one super-category and remove empty categories.",
    ),
    'empty_category': ErrorInfo(
        category=ErrorCategory.VALIDATION,
        title="Empty Super-Category",
        message="A super-category has no relations.",
        suggestion="Lower k or use embeddings with more distinct relations.",
    ),
    'alignment_overlap': ErrorInfo(
        category=ErrorCategory.VALIDATION,
        title="Overlapping Alignment Sets",
        message="Some triplets are marked both aligned and violated.",
        suggestion="Rebuild the alignment sets from a single validation run.",
    ),

    # Numerics
    'dimension_mismatch': ErrorInfo(
        category=ErrorCategory.NUMERIC,
        title="Dimension Mismatch",
        message="Tensor shapes do not agree with the head parameters.",
        suggestion="Check the feature-map channel count and the checkpoint manifest.",
    ),
    'shape_mismatch': ErrorInfo(
        category=ErrorCategory.NUMERIC,
        title="Shape Mismatch",
        message="Gradient shapes do not match parameter shapes.",
        suggestion="Gradients must be computed for the same parameter set they update.",
    ),
    'missing_flat_head': ErrorInfo(
        category=ErrorCategory.NUMERIC,
        title="Flat Head Missing",
        message="The checkpoint has no flat classification head.",
        suggestion="Initialize parameters with with_flat=True to use the baseline head.",
    ),
    'target_mismatch': ErrorInfo(
        category=ErrorCategory.NUMERIC,
        title="Target Category Mismatch",
        message="A training target relation does not belong to its target super-category.",
        suggestion="Derive target_sc from the hierarchy assignment of target_rel.",
    ),
    'too_few_points': ErrorInfo(
        category=ErrorCategory.NUMERIC,
        title="Too Few Points",
        message="k-means was asked for more clusters than there are relations.",
        suggestion="Lower k.",
    ),

    # Evaluation
    'no_ground_truth': ErrorInfo(
        category=ErrorCategory.EVALUATION,
        title="No Ground Truth",
        message="The evaluation set contains no ground-truth triplets.",
        suggestion="Pass the ground-truth graphs file with gt_predicates filled in.",
    ),
    'no_zero_shot': ErrorInfo(
        category=ErrorCategory.EVALUATION,
        title="No Zero-Shot Ground Truth",
        message="Every ground-truth triplet also occurs in the training set.",
        suggestion="Zero-shot recall is undefined for this split; omit the training triplets.",
    ),

    # Backend
    'backend_unavailable': ErrorInfo(
        category=ErrorCategory.BACKEND,
        title="Language Model Unavailable",
        message="The completion backend did not answer after all retries.",
        suggestion="Check the endpoint and network, or run with the MOCK backend.",
        can_retry=True,
    ),
    'auth_error': ErrorInfo(
        category=ErrorCategory.BACKEND,
        title="Authentication Failed",
        message="The completion backend rejected the credentials.",
        suggestion="Set the API key environment variable named in the client config.",
    ),
    'malformed_response': ErrorInfo(
        category=ErrorCategory.BACKEND,
        title="Unexpected Backend Response",
        message="The backend response did not contain text at the configured JSON path.",
        suggestion="Adjust client.response_path to match the backend's response shape.",
        can_retry=True,
    ),
    'count_mismatch': ErrorInfo(
        category=ErrorCategory.BACKEND,
        title="Answer Count Mismatch",
        message="The batched answer did not contain one Yes/No per triplet.",
        suggestion="Use the per-triplet majority strategy for this backend.",
        can_retry=True,
    ),

    # System
    'unexpected_error': ErrorInfo(
        category=ErrorCategory.SYSTEM,
        title="Unexpected Error",
        message="Something unexpected went wrong.",
        suggestion="Rerun with --log-level DEBUG and inspect the log.",
    ),
}


class HierSGError(Exception):
    """Base class for all package errors."""
    error_key = 'unexpected_error'


class ConfigError(HierSGError):
    error_key = 'config_error'


class DatasetFormatError(HierSGError):
    """Malformed input record; carries the file and 1-based line number."""
    error_key = 'format_error'

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ''
        if path is not None:
            location = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(f"{location}{message}")


@dataclass(frozen=True)
class HierarchyIssue:
    """One violation found by validate_hierarchy."""
    kind: str  # MissingRelation, DuplicateAssignment, EmptyCategory, UnknownRelation
    subject: Any
    detail: str = ""

    def __str__(self) -> str:
        text = f"{self.kind}({self.subject})"
        return f"{text}: {self.detail}" if self.detail else text


class HierarchyError(HierSGError):
    error_key = 'hierarchy_invalid'

    def __init__(self, issues: List[HierarchyIssue]):
        self.issues = list(issues)
        super().__init__('; '.join(str(i) for i in self.issues))


class EmptyCategoryError(HierSGError):
    error_key = 'empty_category'


class AlignmentOverlapError(HierSGError):
    error_key = 'alignment_overlap'


class DimensionMismatch(HierSGError):
    error_key = 'dimension_mismatch'


class ShapeMismatch(HierSGError):
    error_key = 'shape_mismatch'


class MissingFlatHead(HierSGError):
    error_key = 'missing_flat_head'


class TargetCategoryMismatch(HierSGError):
    error_key = 'target_mismatch'


class TooFewPoints(HierSGError):
    error_key = 'too_few_points'


class NoGroundTruth(HierSGError):
    error_key = 'no_ground_truth'


class NoZeroShotGroundTruth(NoGroundTruth):
    error_key = 'no_zero_shot'


class BackendError(HierSGError):
    error_key = 'backend_unavailable'


class BackendUnavailable(BackendError):
    error_key = 'backend_unavailable'


class AuthError(BackendError):
    error_key = 'auth_error'


class MalformedResponse(BackendError):
    error_key = 'malformed_response'


class CountMismatch(HierSGError):
    error_key = 'count_mismatch'

    def __init__(self, expected: int, found: int):
        self.expected = expected
        self.found = found
        super().__init__(f"expected {expected} answers, found {found}")


def get_error_info(error_key: str, technical_details: Optional[str] = None) -> ErrorInfo:
    """Get error information by key, with fallback to the generic error."""
    info = ERROR_MESSAGES.get(error_key, ERROR_MESSAGES['unexpected_error'])
    if technical_details:
        info = replace(info, technical_details=technical_details)
    return info


def categorize_exception(exc: BaseException) -> str:
    """Map an exception to an ERROR_MESSAGES key."""
    if isinstance(exc, HierSGError):
        return exc.error_key
    if isinstance(exc, FileNotFoundError):
        return 'file_not_found'
    if isinstance(exc, PermissionError):
        return 'permission_denied'
    if isinstance(exc, json.JSONDecodeError):
        return 'format_error'

    try:
        import requests
        if isinstance(exc, requests.RequestException):
            return 'backend_unavailable'
    except ImportError:  # pragma: no cover
        pass

    return 'unexpected_error'


def handle_error(exception: BaseException) -> ErrorInfo:
    """Log an exception and return user-facing information about it."""
    logger.error("Exception occurred: %s: %s", type(exception).__name__, exception)
    logger.debug(''.join(traceback.format_exception(type(exception), exception, exception.__traceback__)))
    technical_details = f"{type(exception).__name__}: {exception}"
    return get_error_info(categorize_exception(exception), technical_details)


_EXIT_CODES = {
    ErrorCategory.CONFIG: 2,
    ErrorCategory.VALIDATION: 2,
    ErrorCategory.FORMAT: 2,
    ErrorCategory.NUMERIC: 2,
    ErrorCategory.EVALUATION: 2,
    ErrorCategory.BACKEND: 3,
    ErrorCategory.SYSTEM: 1,
}


def exit_code_for(info: ErrorInfo) -> int:
    """Process exit code for a handled error."""
    return _EXIT_CODES.get(info.category, 1)


def format_error(info: ErrorInfo) -> str:
    """Render an ErrorInfo for the terminal."""
    lines = [f"Error: {info.title}", info.message, f"What to try: {info.suggestion}"]
    if info.technical_details:
        lines.append(f"Details: {info.technical_details}")
    return '\n'.join(lines)


def configure_logging(level: str = 'WARNING', log_dir: Optional[str] = None) -> None:
    """Install the package log format on the root logger."""
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if log_dir:
        directory = Path(log_dir)
        directory.mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(
            directory / f'hiersg_{datetime.now().strftime("%Y%m%d")}.log', encoding='utf-8'
        ))
    logging.basicConfig(level=getattr(logging, level.upper(), logging.WARNING),
                        format=LOG_FORMAT, handlers=handlers, force=True)
