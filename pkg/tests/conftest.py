"""Shared oracle helpers: central finite differences against analytic
gradients, and tiny model configurations used across the suite."""

from __future__ import annotations

import numpy as np
import pytest

from bilip.encoders import TextEncoderConfig, VisionEncoderConfig


def finite_difference_grads(scalar_fn, params, h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``scalar_fn()`` for every coordinate of
    every named parameter. Gradient tracking is switched off around the
    perturbed evaluations so they run tape-free."""
    flags = [(p, p.requires_grad) for _, p in params]
    for p, _ in flags:
        p.requires_grad = False
    try:
        grads = {}
        for name, p in params:
            fd = np.zeros_like(p.data)
            flat = p.data.reshape(-1)
            fd_flat = fd.reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + h
                up = scalar_fn()
                flat[i] = original - h
                down = scalar_fn()
                flat[i] = original
                fd_flat[i] = (up - down) / (2.0 * h)
            grads[name] = fd
    finally:
        for p, was in flags:
            p.requires_grad = was
    return grads


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Vector-norm relative error, robust to tiny true gradients."""
    num = np.linalg.norm((a - b).ravel())
    den = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-12)
    return float(num / den)


def check_gradients(loss_fn, named_params, tol: float = 1e-4, h: float = 1e-5):
    """Backprop through one evaluation of ``loss_fn() -> Tensor`` and compare
    every parameter tensor's analytic gradient with central differences."""
    params = list(named_params)
    for _, p in params:
        p.zero_grad()
    loss_fn().backward()
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params}
    numeric = finite_difference_grads(lambda: loss_fn().item(), params, h=h)
    worst = {name: relative_error(analytic[name], numeric[name]) for name, _ in params}
    offenders = {k: v for k, v in worst.items() if v >= tol}
    assert not offenders, f"gradient mismatch beyond {tol}: {offenders}"
    return worst


@pytest.fixture
def tiny_text_cfg():
    return TextEncoderConfig(vocab_size=32, layers=2, width=16, heads=2,
                             max_len=8, embed_dim=8)


@pytest.fixture
def tiny_vision_cfg():
    return VisionEncoderConfig(patch_size=4, image_size=8, width=16, layers=2,
                               heads=2, embed_dim=8)
