from . import ops
from .autodiff import FDReport, evaluate, finite_diff_check, grad, value_and_grad
from .linalg import (
    GramConditioningError, cho_inverse, cholesky_jittered, mvn_logpdf, mvn_logpdf_factored, rbf_cross,
    rbf_predict,
)
from .optim import DEFAULT_CLIP_NORM, AdamHyper, AdamState, adam_step, clip_gradients
from .params import GradVector, ParamVector, Segment
from .recurrent import gru_cell, gru_sequence, lstm_cell, lstm_sequence
from .tape import Node, NonFiniteError, backward, lift, value, variable

__all__ = [
    "AdamHyper", "AdamState", "DEFAULT_CLIP_NORM", "FDReport", "GradVector",
    "GramConditioningError", "Node", "NonFiniteError", "ParamVector", "Segment",
    "adam_step", "backward", "cho_inverse", "cholesky_jittered", "clip_gradients", "evaluate",
    "finite_diff_check", "grad", "gru_cell", "gru_sequence", "lift",
    "lstm_cell", "lstm_sequence", "mvn_logpdf", "mvn_logpdf_factored", "ops", "rbf_cross", "rbf_predict", "value",
    "value_and_grad", "variable",
]
