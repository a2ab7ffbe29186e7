"""The reverse-mode engine underneath the trainable network: paired-real
complex arithmetic, a tiny end-to-end gradient, and the full-network
finite-difference check.

Run: python demos/03_autodiff_and_gradcheck.py
"""

import numpy as np

import simfd.autograd as ag
from simfd.cli import full_grad_check
from simfd.config import miniature_config

rng = np.random.default_rng(0)

# --- paired-real complex arithmetic --------------------------------------------
z = rng.standard_normal((1, 6))          # three complex entries as [re | im]
theta = ag.Tensor(np.array([0.0, np.pi / 2, np.pi]), requires_grad=True)
rotated = ag.phase_diag_apply(theta, ag.Tensor(z))
print("input pairs:   ", np.round(z, 3))
print("rotated by diag(exp(j theta)):", np.round(rotated.data, 3))

# --- a small trainable graph ----------------------------------------------------
w = ag.Tensor(rng.standard_normal((6, 2)) * 0.5, requires_grad=True, name="w")
out = ag.sigmoid(ag.matmul(ag.phase_diag_apply(theta, ag.Tensor(z)), w))
target = np.array([[1.0, 0.0]])
hit = ag.hadamard(target, ag.log(out))
miss = ag.hadamard(1.0 - target, ag.log(ag.sub(1.0, out)))
loss = ag.scale(ag.reduce_sum(ag.add(hit, miss)), -1.0)
ag.backward(loss)
print(f"\nscalar loss {float(loss.data):.4f}")
print("d loss / d theta:", np.round(theta.grad, 4))
print("|d loss / d w| max:", f"{np.abs(w.grad).max():.4f}")

# --- verify the phase gradient by central differences ---------------------------
h = 1e-6
fd = np.zeros(3)
for i in range(3):
    keep = theta.data[i]
    for sign in (+1, -1):
        theta.data[i] = keep + sign * h
        y = ag.sigmoid(ag.matmul(ag.phase_diag_apply(theta, ag.Tensor(z)), w))
        l_val = -(target * np.log(y.data)
                  + (1 - target) * np.log(1 - y.data)).sum()
        fd[i] += sign * l_val / (2 * h)
    theta.data[i] = keep
print("finite differences:", np.round(fd, 4),
      f" max |ad - fd| = {np.abs(theta.grad - fd).max():.2e}")

# --- the full network, every trainable scalar ------------------------------------
err = full_grad_check(miniature_config(), seed=0, batch=8)
print(f"\nfull-network gradient check: max relative error {err:.3e} "
      f"({'OK' if err < 1e-5 else 'FAILED'} at 1e-5)")
