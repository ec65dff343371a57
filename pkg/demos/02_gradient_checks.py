# %% [markdown]
# # Checking the hand-written backward passes
# Central differences against the analytic gradients, first for single
# layers, then end to end for all six architectures at a tiny input size.

# %%
import numpy as np

from malvis.models import ARCHITECTURES, ModelSpec, build_model, check_indices, model_grad_check_detail, nudge_biases
from malvis.nn import ops
from malvis.nn.gradcheck import grad_check

rng = np.random.default_rng(1)

# %%
# one conv layer: loss = <w, conv(x)>, gradient w.r.t. the kernel
x = rng.normal(size=(2, 6, 6))
k = rng.normal(size=(3, 2, 3, 3))
b = np.zeros(3)
w = rng.normal(size=ops.conv2d_forward(x, k, b, 1, 1).shape)


def conv_loss(flat):
    kk = flat.reshape(k.shape)
    value = float((ops.conv2d_forward(x, kk, b, 1, 1) * w).sum())
    return value, ops.conv2d_backward(w, x, kk, 1, 1)[1].ravel()


print("conv kernel max rel err", grad_check(conv_loss, k.ravel()))

# %%
# hinge loss, both variants, away from the margin kink
s = np.array([1.7, -0.2, 0.4, -1.6])
for variant in ("L1", "L2"):
    print(variant, grad_check(lambda v: ops.multiclass_hinge(v, 2, variant), s))

# %%
# whole models; biases get a small nudge so no ReLU input sits exactly on 0
for arch in ARCHITECTURES:
    model = build_model(ModelSpec(arch, (1, 8, 8), 3, width_multiplier=0.25))
    nudge_biases(model, seed=1)
    xb = rng.uniform(0, 1, (2, 1, 8, 8))
    err, refined = model_grad_check_detail(model, xb, np.array([0, 1]), indices=check_indices(model, 100))
    print(f"{arch:15s} params={model.param_count():6d} max_rel_err={err:.2e} shorter-step coords={len(refined)}")
