"""Adam optimizer over named leaf tensors.

Updates run in sorted-name order with aliased tensors visited once, so a
step is a pure function of (values, gradients, state) and training is
bitwise reproducible for a fixed seed. A non-finite gradient aborts with
the offending parameter named rather than poisoning the state.
"""

import numpy as np

from ..errors import NumericError
from .params import NetworkParams


def _entries(params):
    if isinstance(params, NetworkParams):
        return params.trainable()
    seen, out = set(), []
    for name, t in sorted(params, key=lambda item: item[0]):
        if id(t) not in seen:
            seen.add(id(t))
            out.append((name, t))
    return out


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.entries = _entries(params)
        self.lr = float(lr)
        self.b1, self.b2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(t.data, dtype=np.float64) for _, t in self.entries]
        self.v = [np.zeros_like(t.data, dtype=np.float64) for _, t in self.entries]

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for (name, tensor), m, v in zip(self.entries, self.m, self.v):
            g = tensor.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in {name}")
            g = g.astype(np.float64, copy=False)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            tensor.data -= update.astype(tensor.data.dtype)

    def zero_grad(self):
        for _, tensor in self.entries:
            if tensor.grad is not None:
                tensor.grad[:] = 0.0


def optimizer_step(params, grads, lr, state=None, betas=(0.9, 0.999), eps=1e-8):
    """Single functional Adam step.

    grads maps parameter names to arrays (names absent keep their value).
    Returns the optimizer state to thread into the next call.
    """
    if state is None:
        state = Adam(params, lr=lr, betas=betas, eps=eps)
    state.lr = float(lr)
    for name, tensor in state.entries:
        if name in grads:
            tensor.grad = np.asarray(grads[name], dtype=tensor.data.dtype).reshape(tensor.shape)
        elif tensor.grad is not None:
            tensor.grad = np.zeros_like(tensor.data)
    state.step()
    return state
