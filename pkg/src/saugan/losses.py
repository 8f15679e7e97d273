"""Loss terms with paired gradients.

Each function returns (scalar loss, gradient(s) w.r.t. its logits or
predictions); the caller applies loss weights before chaining.
"""

from __future__ import annotations

import numpy as np


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(np.asarray(0.0, dtype=x.dtype), x)


def gan_d_loss(real_logits: np.ndarray, fake_logits: np.ndarray, kind: str = "logistic"):
    """Discriminator loss over patch logits; returns (loss, d_real, d_fake).

    Logistic form applies the sigmoid inside the loss: with all logits at 0
    the per-patch value is -2*ln(0.5)."""
    nr, nf = real_logits.size, fake_logits.size
    if kind == "logistic":
        loss = float(_softplus(-real_logits).mean() + _softplus(fake_logits).mean())
        d_real = -_sigmoid(-real_logits) / nr
        d_fake = _sigmoid(fake_logits) / nf
    elif kind == "hinge":
        loss = float(np.maximum(1.0 - real_logits, 0.0).mean()
                     + np.maximum(1.0 + fake_logits, 0.0).mean())
        d_real = -(real_logits < 1.0).astype(real_logits.dtype) / nr
        d_fake = (fake_logits > -1.0).astype(fake_logits.dtype) / nf
    else:
        raise ValueError(f"unknown gan loss kind {kind!r}")
    return loss, d_real, d_fake


def gan_g_loss(fake_logits: np.ndarray, kind: str = "logistic"):
    """Non-saturating generator loss; returns (loss, d_fake_logits)."""
    n = fake_logits.size
    if kind == "logistic":
        loss = float(_softplus(-fake_logits).mean())
        d_fake = -_sigmoid(-fake_logits) / n
    elif kind == "hinge":
        loss = float(-fake_logits.mean())
        d_fake = np.full_like(fake_logits, -1.0 / n)
    else:
        raise ValueError(f"unknown gan loss kind {kind!r}")
    return loss, d_fake


def masked_l1(real: np.ndarray, class_outputs: list[np.ndarray], masks: np.ndarray) -> float:
    """Sum over classes of mean |real*mask_i - output_i| (mean over all elements)."""
    total = 0.0
    for i, out in enumerate(class_outputs):
        total += float(np.abs(real * masks[:, i : i + 1] - out).mean())
    return total


def masked_l1_backward(real: np.ndarray, class_outputs: list[np.ndarray],
                       masks: np.ndarray) -> list[np.ndarray]:
    """Per-class-output gradients of masked_l1 (zero subgradient at ties)."""
    grads = []
    for i, out in enumerate(class_outputs):
        diff = real * masks[:, i : i + 1] - out
        grads.append(-np.sign(diff) / diff.size)
    return grads


def class_ce(logits: np.ndarray, valid: np.ndarray):
    """Void-filtered cross entropy over per-class logits.

    logits is (B, N, N): one row of N class scores for each of the N
    filtered feature maps; the target of row i is class i. Rows of classes
    absent from the layout (valid 0) contribute exactly nothing. The total
    is the mean over valid rows, averaged over the batch; with no valid
    rows the loss is 0. Returns (loss, d_logits).
    """
    b, n, n2 = logits.shape
    if n != n2:
        raise ValueError(f"logits must be (B,N,N), got {logits.shape}")
    if valid.shape != (b, n):
        raise ValueError(f"valid must be (B,{n}), got {valid.shape}")
    z = logits - logits.max(axis=2, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=2, keepdims=True))
    logp = z - logsumexp
    diag = np.arange(n)
    per_row = -logp[:, diag, diag]  # (B, N)
    vmask = valid.astype(logits.dtype)
    n_valid = vmask.sum(axis=1)
    denom = np.maximum(n_valid, 1.0)
    loss = float(((per_row * vmask).sum(axis=1) / denom).mean())
    softmax = np.exp(logp)
    d_logits = softmax.copy()
    d_logits[:, diag, diag] -= 1.0
    d_logits *= (vmask / denom[:, None])[:, :, None] / b
    return loss, d_logits
