"""Contrastive objectives on an image-text cosine matrix and their gradients."""

from __future__ import annotations

import numpy as np
from scipy.special import expit, log_softmax, softmax

from .model import AlignmentModel


def _check(s, L, tau):
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if L is not None and np.shape(s) != np.shape(L):
        raise ValueError(f"similarity shape {np.shape(s)} != label shape {np.shape(L)}")


def gacl_loss(s, L, tau: float = 0.07, beta: float = 0.0) -> float:
    """Mean pairwise sigmoid loss, log(1 + exp(l * (-s/tau + beta)))."""
    s, L = np.asarray(s, float), np.asarray(L, float)
    _check(s, L, tau)
    return float(np.mean(np.logaddexp(0.0, L * (-s / tau + beta))))


def gacl_loss_and_grad_s(s, L, tau: float = 0.07, beta: float = 0.0):
    """Loss, dloss/ds and dloss/dbeta."""
    s, L = np.asarray(s, float), np.asarray(L, float)
    _check(s, L, tau)
    arg = L * (-s / tau + beta)
    sig = expit(arg)
    n = s.size
    loss = float(np.mean(np.logaddexp(0.0, arg)))
    ds = -(L / tau) * sig / n
    dbeta = float(np.sum(L * sig) / n)
    return loss, ds, dbeta


def infonce_loss(s, tau: float = 0.07) -> float:
    return infonce_loss_and_grad_s(s, tau)[0]


def infonce_loss_and_grad_s(s, tau: float = 0.07):
    """Symmetric cross-entropy with the matched pair as the only positive."""
    s = np.asarray(s, float)
    _check(s, None, tau)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError("InfoNCE needs a square similarity matrix")
    n = s.shape[0]
    logits = s / tau
    row = -np.mean(np.diag(log_softmax(logits, axis=1)))
    col = -np.mean(np.diag(log_softmax(logits, axis=0)))
    eye = np.eye(n)
    dlogits = 0.5 * (softmax(logits, axis=1) - eye) / n + 0.5 * (softmax(logits, axis=0) - eye) / n
    return float(0.5 * (row + col)), dlogits / tau


def loss_and_grads(model: AlignmentModel, X_img, X_txt, L=None, loss: str = "gacl", trainable_beta=False):
    """Loss and parameter gradients for one batch.

    ``L`` is the label matrix for the sigmoid loss and ignored for InfoNCE.
    Returns ``(loss, grads, embeddings)`` where ``grads`` is keyed like
    ``model.params()`` plus ``"beta"`` when it is trainable.
    """
    U, cache_i = model.image_head.forward(X_img)
    E, cache_t = model.text_head.forward(X_txt)
    s = U @ E.T
    if loss == "gacl":
        value, ds, dbeta = gacl_loss_and_grad_s(s, L, model.temperature, model.beta)
    elif loss == "infonce":
        value, ds = infonce_loss_and_grad_s(s, model.temperature)
        dbeta = 0.0
    else:
        raise ValueError(f"unknown loss {loss!r}")
    dW_i, db_i = model.image_head.backward(cache_i, ds @ E)
    dW_t, db_t = model.text_head.backward(cache_t, ds.T @ U)
    grads = {"W_img": dW_i, "b_img": db_i, "W_txt": dW_t, "b_txt": db_t}
    if trainable_beta and loss == "gacl":
        grads["beta"] = np.array(dbeta)
    return value, grads, (U, E)


def gacl_loss_grad(model: AlignmentModel, X_img, X_txt, L, trainable_beta=True):
    """Analytic gradients of the sigmoid loss over both heads (and beta)."""
    return loss_and_grads(model, X_img, X_txt, L, "gacl", trainable_beta)[1]
