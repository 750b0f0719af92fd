"""Parameter construction shared by the network modules.

Weights are uniform in +-sqrt(1/fan_in), biases zero; construction order is
fixed so a given seed always produces the same parameters.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def linear_params(rng: np.random.Generator, cin: int, cout: int, bias: bool = True):
    bound = np.sqrt(1.0 / cin)
    w = Tensor(rng.uniform(-bound, bound, size=(cin, cout)), requires_grad=True)
    if not bias:
        return w, None
    return w, Tensor(np.zeros(cout), requires_grad=True)
