"""The first-order story behind trigger robustness, checked two ways.

On a purpose-built linear model the identities are exact:
  * the mean clean-input CE gradient points along -tau, and its dot
    product with tau equals -log C;
  * the worst in-budget perturbation is delta* = -(eps/eps_t) tau, whose
    loss excess equals (eps/eps_t) log C and beats random perturbations.

On trained desk models the same quantities are measured empirically,
together with the sign-flip probe: corrupting a small fraction of the
-tau direction already destroys the attack.
"""

import numpy as np

import trigward as tw
from trigward.theory import (flip_experiment, gradient_alignment, linearization_error,
                             make_linear_oracle, theorem2_check)

C = 10
log_c = np.log(C)

print("=== exact checks on the linear construction ===")
tm, data, g = make_linear_oracle(class_count=C, input_shape=(3, 8, 8),
                                 eps_t=8 / 255, n_samples=48, seed=1)
rep = gradient_alignment(tm.model, tm.trig, data)
print(f"sign agreement with -tau: {rep.sign_agreement:.1f}")
print(f"dot product {rep.dot_product:+.12f} vs -log C {-log_c:+.12f}")

for eps in (2 / 255, 8 / 255):
    t2 = theorem2_check(tm, eps, data, n_random=10000, seed=3)
    print(f"eps={eps:.4f}: loss excess at delta* = {t2.excess_star:.9f}, "
          f"bound (eps/eps_t) log C = {t2.bound:.9f}, "
          f"beats {t2.fraction_random_below_star():.1%} of 10k random deltas")

print("\n=== the same quantities on a trained desk model ===")
train = tw.load_dataset("synth10_small", "train")
test = tw.load_dataset("synth10_small", "test", subset_fraction=0.5, seed=0)
model = tw.build_model("wide_cnn", C, 11, input_shape=train.image_shape)
trig = tw.init_fixed_trigger(train.image_shape, 8 / 255, seed=12)
tm = tw.train_fixed_trigger(model, trig, train,
                            tw.TrainSchedule(epochs=12, lr_initial=0.1, seed=11))

al = gradient_alignment(tm.model, tm.trig, train)
print(f"dot product {al.dot_product:+.3f} (theory: {-log_c:+.3f}), "
      f"sign agreement {al.sign_agreement:.3f}")
print(f"linearization residuals: {al.linearization_residuals}")

curve = flip_experiment(tm, [0.0, 0.1, 0.2, 0.3, 0.5, 1.0], test, seed=5)
print("\nsign-flip probe (perturbation = -tau with a flipped fraction):")
for p, loss, acc in zip(curve.proportions, curve.loss_values, curve.accuracies):
    print(f"  p={p:.1f}: loss={loss:6.3f}  accuracy={acc:.3f}")
print(f"(at p=0 the input is exactly clean: loss should sit near log C = {log_c:.3f})")

t2 = theorem2_check(tm, 4 / 255, test, n_random=200, seed=6)
print(f"\ntheorem-2 probe at eps = eps_t/2: delta* excess {t2.excess_star:.3f}, "
      f"bound {t2.bound:.3f}, beats {t2.fraction_random_below_star():.1%} of random deltas")
