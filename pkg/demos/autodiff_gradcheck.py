"""
Reverse-mode autodiff on numpy arrays
=====================================

Builds a two-layer network by hand, backpropagates through it and compares
every gradient with central differences in float64.
"""
import numpy as np

from svsmu import tensor as T

rng = np.random.default_rng(0)

with T.precision("float64"):
    x = T.tensor(rng.normal(size=(6, 4)))
    w1 = T.Parameter(rng.normal(size=(4, 8)), name="w1")
    w2 = T.Parameter(rng.normal(size=(8, 3)), name="w2")

    def loss():
        h = T.tanh(T.matmul(x, w1))
        return T.mean(T.abs(T.log_softmax(T.matmul(h, w2))))

    print("loss:", float(loss().data))
    err = T.check_gradients(loss, [w1, w2])
    print(f"max relative gradient error, whole network: {err:.2e}")

# the same check, op by op, with random probes
for op, shapes, kw in [
    ("conv1d", [(12, 3), (3, 3, 5), (5,)], {"stride": 2, "padding": 1}),
    ("transposed_conv1d", [(6, 3), (4, 3, 2), (2,)], {"stride": 2, "padding": 1}),
    ("layer_norm", [(4, 8), (8,), (8,)], {}),
    ("scaled_dot_product_attention", [(2, 5, 4)] * 3, {}),
]:
    print(f"{op:30s} {T.grad_check(op, shapes, seed=1, **kw):.2e}")
