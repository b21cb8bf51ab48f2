"""A small in-place Adam optimizer shared by the regressor and the toy classifier.

Works on plain lists of float64 numpy arrays.  Updates are performed with
preallocated scratch buffers because parameter traffic, not FLOPs, dominates
the training loop at these sizes.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np


class Adam:
    """Adam with bias correction, stepping a fixed list of parameter arrays."""

    def __init__(
        self,
        params: Sequence[np.ndarray],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self._m: List[np.ndarray] = [np.zeros_like(p) for p in params]
        self._v: List[np.ndarray] = [np.zeros_like(p) for p in params]
        self._s1: List[np.ndarray] = [np.empty_like(p) for p in params]
        self._s2: List[np.ndarray] = [np.empty_like(p) for p in params]

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """Apply one update in place; ``params[i]`` must alias the arrays given
        at construction time."""
        self.t += 1
        bc2 = np.sqrt(1.0 - self.beta2 ** self.t)
        # theta -= a * m / (sqrt(v) + eps2) is algebraically the textbook
        # update with mhat/vhat folded into the two scalars below.
        a = self.learning_rate * bc2 / (1.0 - self.beta1 ** self.t)
        eps2 = self.eps * bc2
        for p, g, m, v, s1, s2 in zip(params, grads, self._m, self._v, self._s1, self._s2):
            np.multiply(g, 1.0 - self.beta1, out=s1)
            m *= self.beta1
            m += s1
            np.multiply(g, g, out=s1)
            s1 *= 1.0 - self.beta2
            v *= self.beta2
            v += s1
            np.sqrt(v, out=s2)
            s2 += eps2
            np.divide(m, s2, out=s2)
            s2 *= a
            p -= s2
