"""Central finite-difference check of the network's analytic gradients.

ReLU and max-pool make the loss piecewise smooth. When a probe at ``step``
flips an activation or moves a pooling winner, the difference quotient spans
a kink and says nothing about the derivative. Such entries are re-differenced
with the step shrunk by ``SHRINK`` until both probes stay on the base piece
(or ``fine_step`` is reached). Taking the largest such step keeps the loss
roundoff, which grows as 1 / step, small next to tiny gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import Network
from .training import loss_and_grads, total_loss

SHRINK = 4.0


@dataclass
class TensorCheck:
    name: str
    size: int
    max_rel_error: float   # worst entry
    norm_rel_error: float  # whole tensor
    n_refined: int


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def check_gradients(net: Network, X, target, weights=None, train: bool = False,
                    step: float = 1e-3, fine_step: float = 1e-6,
                    floor: float = 1e-6) -> list[TensorCheck]:
    """Compare every trainable entry against central differences of the total loss.

    The per-entry error is ``|g - fd| / max(|g|, |fd|, floor)``; the tensor error
    uses the same form with Euclidean norms. Use a float64
    network; with ``train=True`` batch statistics are used and running
    averages are restored after every probe.
    """
    saved = {name: arr.copy() for name, arr in net.named_tensors(include_state=True)}

    def restore_state():
        for name, arr in net.named_tensors(include_state=True):
            if ".running_" in name:
                arr[...] = saved[name]

    loss_and_grads(net, X, target, weights, train=train)
    base = [p.copy() for p in net.activation_pattern()]
    restore_state()

    def probe(p, idx, delta):
        old = p[idx]
        p[idx] = old + delta
        lp = total_loss(net, net.forward(X, train=train, keep=True), target, weights)
        pat_p = net.activation_pattern()
        restore_state()
        p[idx] = old - delta
        lm = total_loss(net, net.forward(X, train=train, keep=True), target, weights)
        pat_m = net.activation_pattern()
        restore_state()
        p[idx] = old
        smooth = _same_pattern(pat_p, base) and _same_pattern(pat_m, base)
        return (lp - lm) / (2.0 * delta), smooth

    report = []
    for name, layer, key in net.trainable_items():
        g = layer.grads[key].copy()
        p = layer.params[key]
        fd = np.empty_like(g)
        refined = 0
        for idx in np.ndindex(p.shape):
            fd[idx], smooth = probe(p, idx, step)
            if not smooth:
                refined += 1
                h = step
                while not smooth and h > fine_step:
                    h = max(h / SHRINK, fine_step)
                    fd[idx], smooth = probe(p, idx, h)
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
        norm = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), floor)
        report.append(TensorCheck(name, int(p.size), float(rel.max(initial=0.0)), float(norm),
                                  refined))
    return report
