"""Shared test utilities: finite differences and scalar reference math."""

import math

import numpy as np

from nacap import tensor as T


def finite_difference_grad(loss_fn, leaf, h=1e-5):
    """Central-difference gradient of loss_fn() wrt leaf.data, element-wise.

    loss_fn must re-run the forward pass from current parameter values and
    return a python float; it is called with no tape active.
    """
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss_fn()
        flat[i] = orig - h
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def analytic_grad(build_loss, leaves):
    """Tape-recorded gradients of build_loss() wrt each leaf tensor."""
    with T.Tape() as tape:
        loss = build_loss()
        T.backward(loss, tape)
    return [
        leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        for leaf in leaves
    ]


def assert_grad_close(got, want, rel=1e-4, floor=1e-6):
    """Element-wise |got - want| <= max(rel * |want|, floor)."""
    got = np.asarray(got)
    want = np.asarray(want)
    tol = np.maximum(rel * np.abs(want), floor)
    err = np.abs(got - want)
    worst = (err - tol).max()
    assert (err <= tol).all(), f"gradient mismatch, worst excess {worst:.3e}"


def scalar_softmax(row):
    """Reference softmax computed one scalar at a time."""
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]
