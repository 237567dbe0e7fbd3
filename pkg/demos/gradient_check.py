"""
Checking the autodiff tape against finite differences
=====================================================

Every model in the package is built from a handful of tensor ops recorded
on a tape.  Here we build a small two-layer classifier by hand and compare
its reverse-mode gradients with central differences.
"""

import numpy as np

from tgmz.numerics import Tensor, affine, grad_check, leaky_relu, softmax_cross_entropy

rng = np.random.default_rng(0)

# a batch of 6 inputs with 5 features, 3 classes
x = Tensor(rng.normal(size=(6, 5)), requires_grad=True)
w1 = Tensor(rng.normal(size=(5, 8)) * 0.5, requires_grad=True)
b1 = Tensor(np.zeros(8), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 3)) * 0.5, requires_grad=True)
b2 = Tensor(np.zeros(3), requires_grad=True)
labels = rng.integers(0, 3, size=6)


def loss():
    h = leaky_relu(affine(x, w1, b1), 0.2)
    return softmax_cross_entropy(affine(h, w2, b2), labels)


###############################################################################
# grad_check nudges every coordinate by +-h and re-runs the closure.  The
# report carries the worst relative error over all of them.

report = grad_check(loss, dict(x=x, w1=w1, b1=b1, w2=w2, b2=b2))
print(f"checked {report.n_checked} coordinates")
print(f"max relative error {report.max_rel_error:.2e} (tolerance {report.tolerance:g})")
print("passed" if report.passed else "FAILED")
