"""Variational and MAP inference for the GP-RNN model."""
from .elbo import GaussianModel, elbo_estimate, reparam_grad, score_function_grad
from .families import (
    FAMILIES, VariationalFamily, VariationalPosterior, bilstm_combine, gaussian_entropy,
    init_family, reparam_sample, variational_encode,
)
from .model import ModelSpec
from .train import ModelParams, TrainConfig, TrainReport, TrainState, train_gaussian

__all__ = [
    "FAMILIES", "GaussianModel", "ModelParams", "ModelSpec", "TrainConfig", "TrainReport",
    "TrainState", "VariationalFamily", "VariationalPosterior", "bilstm_combine",
    "elbo_estimate", "gaussian_entropy", "init_family", "reparam_grad", "reparam_sample",
    "score_function_grad", "train_gaussian", "variational_encode",
]
