"""Reconstruction losses for meta-embedding training.

Four kinds: plain mean squared / absolute error, KL divergence between
row softmaxes, and the squared cosine proximity that penalizes angular
error while ignoring scale.  Each call returns the scalar loss and the
gradient with respect to the predicted matrix.
"""

import numpy as np

from . import kernels
from .errors import ConfigError, LossError

RECON_KINDS = ("mse", "mae", "kl", "scp")


def recon_loss(kind, predicted, target):
    """Loss and gradient w.r.t. ``predicted`` for one batch.

    mse/mae average over batch rows; kl softmaxes both rows (natural
    log) and averages; scp sums (1 - cos)^2 over rows and is undefined
    on zero-norm rows, which raise.
    """
    predicted = np.asarray(predicted, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if predicted.shape != target.shape:
        raise ConfigError(
            f"predicted {predicted.shape} and target {target.shape} shapes differ")
    if predicted.ndim != 2 or predicted.shape[0] < 1:
        raise ConfigError("loss inputs must be non-empty 2-D matrices")
    if kind == "mse":
        return kernels.mse_value_grad(predicted, target)
    if kind == "mae":
        return kernels.mae_value_grad(predicted, target)
    if kind == "kl":
        return kernels.kl_value_grad(predicted, target)
    if kind == "scp":
        loss, grad, bad_row = kernels.scp_value_grad(predicted, target)
        if bad_row >= 0:
            raise LossError(
                f"squared cosine proximity undefined: zero-norm row {bad_row}")
        return loss, grad
    raise ConfigError(f"unknown reconstruction loss {kind!r}; use one of {RECON_KINDS}")
