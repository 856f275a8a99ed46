"""AdamW with decoupled weight decay.

The decay term is applied directly to the parameter, outside the
adaptive rescaling. Moments start at zero and live per parameter name;
they are part of the serialized training state.
"""

import numpy as np

from . import kernels
from .errors import OptimizerError


class AdamW:
    def __init__(self, parameters, lr=1e-4, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-3):
        if lr < 0:
            raise OptimizerError(f"invalid learning rate {lr}")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise OptimizerError(f"invalid betas {betas}")
        if weight_decay < 0:
            raise OptimizerError(f"invalid weight decay {weight_decay}")
        self.parameters = list(parameters)
        self.lr = float(lr)
        self.beta1, self.beta2 = float(betas[0]), float(betas[1])
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.parameters}
        self.v = {p.name: np.zeros_like(p.value) for p in self.parameters}

    def step(self):
        """Apply one update from the gradients accumulated on the nodes."""
        self.t += 1
        for p in self.parameters:
            g = p.node.grad
            if not np.all(np.isfinite(g)):
                raise OptimizerError(
                    f"non-finite gradient for parameter {p.name!r}", parameter=p.name
                )
            kernels.adamw_update(
                p.node.value, g, self.m[p.name], self.v[p.name], self.t,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )

    def zero_grad(self):
        for p in self.parameters:
            p.node.grad[...] = 0.0

    def state_dict(self):
        return {
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for name in self.m:
            self.m[name][...] = state["m"][name]
            self.v[name][...] = state["v"][name]
