"""The ``.twin`` model description language."""

from .ast import ModelDocument
from .loader import ModelSet, check_document, load_file, load_text, patch_param, validate_document
from .parser import parse_expression, parse_model
from .printer import canonical_print

__all__ = [
    "ModelDocument",
    "ModelSet",
    "canonical_print",
    "check_document",
    "load_file",
    "load_text",
    "parse_expression",
    "parse_model",
    "patch_param",
    "validate_document",
]
