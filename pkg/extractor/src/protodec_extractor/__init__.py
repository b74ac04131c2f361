"""Masked-LM bridge for protodec: pack extraction, table dumps, serving."""

from .extract import (ExtractionJob, ModelBundle, dump_embedding_table,
                      extract, load_samples)
from .serve import build_app, serve

__version__ = "0.1.0"
