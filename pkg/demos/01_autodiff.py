"""
Reverse-mode gradients on numpy arrays
======================================

Operations inside ``with Tape()`` are recorded; ``tape.backward`` walks them
in reverse. Outside a tape nothing is recorded, so inference is plain numpy.
"""

import numpy as np

from prompt_dqa.tensor import Tape, Tensor, finite_diff_gradient, gelu, layer_norm, softmax

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
gain = Tensor(np.ones(5), requires_grad=True)
bias = Tensor(np.zeros(5), requires_grad=True)
target = rng.normal(size=(3, 5))


def loss_fn():
    h = gelu(layer_norm(x, gain, bias))
    p = softmax(h, axis=-1)
    d = p - target
    return (d * d).mean()


with Tape() as tape:
    loss = loss_fn()
tape.backward(loss)
print("loss", loss.item())

# central differences perturb each scalar in place and call loss_fn again
numeric = finite_diff_gradient(lambda: loss_fn().item(), [x, gain, bias], step=1e-5)
for name, p, n in zip(("x", "gain", "bias"), (x, gain, bias), numeric):
    err = np.abs(p.grad - n).max() / np.abs(n).max()
    print(f"{name:5s} normwise relative error {err:.2e}")

# leaf gradients accumulate across backward calls
before = x.grad.copy()
tape.backward(loss)
print("second backward doubles the gradient:", np.allclose(x.grad, 2 * before))
