"""Canonical similarity analysis: closed-form CCA maps between unimodal
embedding spaces and a correlation-weighted similarity in the shared space."""

__version__ = "0.1.0"

from .cca import CsaModel, FeatureMatrix, Fixed, Threshold, center, fit, load_model, project, select_s
from .similarity import ScoreMatrix, paired_scores, score_matrix, similarity

__all__ = [
    "CsaModel",
    "FeatureMatrix",
    "Fixed",
    "ScoreMatrix",
    "Threshold",
    "center",
    "fit",
    "load_model",
    "paired_scores",
    "project",
    "score_matrix",
    "select_s",
    "similarity",
]
