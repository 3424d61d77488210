"""Export CLIP image features and token embeddings into IOSF containers."""

from .export import ExportError, ExportJob, export_features, export_token_embeddings, run_export

__all__ = [
    "ExportError",
    "ExportJob",
    "export_features",
    "export_token_embeddings",
    "run_export",
]
