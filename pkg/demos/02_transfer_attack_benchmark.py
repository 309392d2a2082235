"""Benchmark robustness to transferred sign-gradient attacks.

An attacker crafts perturbations on local surrogate models and replays
them against victims they have never seen. Victims compared here: an
undefended net, cheap preprocessing defenses, and a trigger-activated
model. Robust accuracy is averaged over the surrogate set per victim and
over victims per attack.
"""

import numpy as np

import trigward as tw
from trigward.defenses import DefendedModel, PreprocessorConfig
from trigward.evaluation import fill_robustness_matrix

train = tw.load_dataset("synth10_small", "train")
test = tw.load_dataset("synth10_small", "test", subset_fraction=0.4, seed=0)
sched = tw.TrainSchedule(epochs=12, lr_initial=0.1, batch_size=128, seed=0)

print("training surrogates (attacker side)...")
surrogates = {}
for sid, arch, seed in (("tiny", "tiny_cnn", 100), ("mlp", "mlp", 101)):
    m = tw.build_model(arch, 10, seed, input_shape=train.image_shape)
    tw.train_standard(m, train, sched)
    surrogates[sid] = m

print("training victims (defender side)...")
undefended = tw.build_model("wide_cnn", 10, 200, input_shape=train.image_shape)
tw.train_standard(undefended, train, sched)

trig_model = tw.build_model("wide_cnn", 10, 201, input_shape=train.image_shape)
trig = tw.init_fixed_trigger(train.image_shape, 8 / 255, seed=300)
triggered = tw.train_fixed_trigger(trig_model, trig, train, sched)

victims = {
    "w/o": undefended,
    "bdr(d=2)": DefendedModel(undefended, PreprocessorConfig("bdr", bit_depth=2)),
    "gaussian(0.6)": DefendedModel(undefended, PreprocessorConfig("gaussian", sigma=0.6)),
    "rp(1.2)": DefendedModel(undefended, PreprocessorConfig("rp", scale_max=1.2, seed=5)),
    "trigger(8/255)": triggered,
}

print("\nclean accuracy per victim:")
for vid, v in victims.items():
    print(f"  {vid:16s} {tw.clean_accuracy(v, test):.3f}")

for method in ("pgd", "ifgsm", "mifgsm", "difgsm"):
    cfg = tw.AttackConfig(method, eps=8 / 255, attack_step=2 / 255, iterations=10, seed=9)
    matrix, _ = fill_robustness_matrix(victims, surrogates, cfg, test, batch_size=256)
    print(f"\n{method}: grand-mean robust accuracy {matrix.grand_mean():.3f}")
    for vid, r in matrix.per_victim_mean().items():
        print(f"  {vid:16s} {r:.3f}")
