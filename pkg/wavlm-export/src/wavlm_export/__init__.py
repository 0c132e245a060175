"""One-shot exporter: pretrained speech embeddings -> XFEA feature files."""
from .export import ExportJob, ExportResult, export_features

__version__ = "0.1.0"
__all__ = ["ExportJob", "ExportResult", "export_features", "__version__"]
