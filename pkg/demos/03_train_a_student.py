"""Train one student against a random teacher and inspect what it learned.

A frozen random ReLU network of k active input features defines the target;
a smaller trainable network imitates its output distribution on fresh
uniform batches (online regime, no dataset reuse). After training we read
two things off the student: the KL gap to the teacher, and the intrinsic
dimension of its prefinal-layer activations, which should sit near k.
"""

import numpy as np

from idscaling import (
    PointCloud,
    TrainConfig,
    estimate_id_knn,
    forward_activations,
    init_mlp,
    make_teacher,
    train,
)
from idscaling.rng import make_rng

K_FEATURES = 3
teacher = make_teacher([20, 48, 48, 2], k=K_FEATURES, seed=11)

student = init_mlp([20, 24, 24, 2], seed=7)
config = TrainConfig(
    segments=((6000, 200, 0.01), (2000, 200, 0.001)),
    loss_kind="cross_entropy_logits",
    seed=42,
    eval_samples=30000,
)
print(f"training a {student.layer_sizes} student ({student.param_count} params) ...")
result = train(student, teacher, config, feature_count=K_FEATURES)

smooth = np.convolve(result.trace["loss"], np.ones(200) / 200, mode="valid")
print(f"smoothed train CE: start {smooth[0]:.4f} -> end {smooth[-1]:.4f}")
print(f"eval CE  = {result.final_loss:.6f} +- {result.final_loss_stderr:.1e}")
print(f"eval KL  = {result.final_kl:.3e} +- {result.final_kl_stderr:.1e}"
      "   (cross entropy minus teacher entropy)")

# intrinsic dimension of the trained student's prefinal activations
rng = make_rng(99)
x = np.zeros((8000, 20))
x[:, :K_FEATURES] = rng.random((8000, K_FEATURES)) - 0.5
_, hidden = forward_activations(result.net, x)
est = estimate_id_knn(PointCloud(hidden[-1]), k=2)
print(f"prefinal-activation ID = {est.d_hat:.2f}  (teacher features = {K_FEATURES})")
