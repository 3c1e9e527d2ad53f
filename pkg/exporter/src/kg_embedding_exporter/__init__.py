"""IGTEMB1 embedding-cache exporter for causal language models."""

from .export import ExportJob, export, load_pairs_file, load_texts_file
from .models import HuggingFaceBackend, TinyCausalBackend, load_backend
from .prompt import build_prompt

__version__ = "0.1.0"
