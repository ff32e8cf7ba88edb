"""A look inside the reverse-mode autodiff engine the models run on.

The Tensor class records every operation into a graph; backward() walks
it once and accumulates gradients.  This script fits a linear model by
plain gradient descent, then verifies a composite gradient against
central finite differences, the same oracle the test suite uses.

    python3 demos/autodiff_basics.py
"""

import numpy as np

from depthfill.tensor import Tensor, gelu, layernorm, linear

rng = np.random.default_rng(0)

# --- fit y = x @ w_true + b_true by gradient descent -------------------
x = Tensor(rng.normal(size=(64, 3)))
w_true = np.array([[1.5], [-2.0], [0.5]])
y = Tensor(x.data @ w_true + 0.25)

w = Tensor(np.zeros((3, 1)), requires_grad=True)
b = Tensor(np.zeros(1), requires_grad=True)
for step in range(200):
    pred = linear(x, w, b)
    loss = ((pred - y) * (pred - y)).mean()
    w.zero_grad()
    b.zero_grad()
    loss.backward()
    w = Tensor(w.data - 0.1 * w.grad, requires_grad=True)
    b = Tensor(b.data - 0.1 * b.grad, requires_grad=True)
    if step % 50 == 0:
        print(f"step {step:3d}  loss {float(loss.data):.6f}")
print(f"recovered w {w.data.ravel().round(3)} (true {w_true.ravel()}), "
      f"b {float(b.data[0]):.3f} (true 0.25)")

# --- check a transformer-flavored composite against finite differences --
h = 1e-5
p = rng.normal(size=(4, 6))
gain = np.ones(6)
bias = np.zeros(6)


def forward(arr):
    t = Tensor(arr, requires_grad=True)
    out = gelu(layernorm(t, Tensor(gain), Tensor(bias)))
    return t, (out * out).mean()


t, loss = forward(p)
loss.backward()

numeric = np.zeros_like(p)
for idx in np.ndindex(p.shape):
    bumped = p.copy()
    bumped[idx] += h
    hi = float(forward(bumped)[1].data)
    bumped[idx] -= 2 * h
    lo = float(forward(bumped)[1].data)
    numeric[idx] = (hi - lo) / (2 * h)

worst = np.abs(t.grad - numeric).max()
print(f"\ngelu(layernorm(x)) gradient vs central differences: worst |diff| {worst:.2e}")
