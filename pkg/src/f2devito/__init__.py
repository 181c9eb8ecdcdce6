"""f2devito: translate legacy Fortran finite-difference programs to Devito.

The pipeline builds a local knowledge graph over a Devito-oriented corpus,
statically analyzes Fortran sources into retrieval queries, fuses multi-mode
retrieval results into an LLM conversion prompt, and validates generated code
with rule-based guardrails and a blended static/LLM quality score.
"""

__version__ = "0.1.0"
