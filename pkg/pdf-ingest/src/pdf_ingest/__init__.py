from .convert import IngestConfig, IngestError, convert
from .pdfread import PdfError, read_pdf

__all__ = ["IngestConfig", "IngestError", "convert", "PdfError", "read_pdf"]
