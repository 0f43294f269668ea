"""Adapt a sequence classifier to a noisy stream, one sample at a time.

The source model is trained on clean data, then each unlabeled stream
sample gets a short episode of entropy minimization restricted to the
feature-extractor and normalization parameters.  The model resets to the
source state between samples, so episodes are independent.  Both the
gradient-free and the first-order optimizer get the same budget of 160
forward passes per sample.

Run: python3 demos/adapt_stream.py   (about 15 seconds)
"""

from zobench import (AdaptMask, BatchSampler, DataGenConfig, FOConfig,
                     TTAEpisodeConfig, ZOConfig, fo_train, gen_data,
                     gen_shifted_stream, make_model, run_stream)

cfg = DataGenConfig(task="seq", frames=32, feat_dim=8, classes=4, hidden=8,
                    n_train=1024, n_test=512, seed=0)
model = make_model(cfg)
params = model.init(0)
train_set, _ = gen_data(cfg)
fo_train(model, BatchSampler(train_set, 32, seed=0).draw,
         FOConfig(lr=0.02, optimizer="adam", steps=600), params)

stream_cfg = DataGenConfig(**{**cfg.__dict__, "noise_sigma": 1e-2})
stream = gen_shifted_stream(stream_cfg, 250)
mask = AdaptMask(["feat.*", "norm.*"])

print("gradient-free adaptation (q=4, 20 steps = 160 forwards/sample):")
zo_cfg = TTAEpisodeConfig(steps=20,
                          optimizer=ZOConfig(epsilon=1e-3, lr=1e-3, q=4,
                                             steps=20))
agg, _ = run_stream(model, params, stream, mask, zo_cfg, master_seed=7)
print(f"  frame accuracy {agg['zero_shot_accuracy']:.3f} -> "
      f"{agg['adapted_accuracy']:.3f} "
      f"(gain {agg['accuracy_gain']:+.3f} +/- {agg['accuracy_gain_se']:.3f}, "
      f"{agg['improved_fraction']:.0%} of samples improved)")

print("first-order adaptation (Adam, 160 steps = 160 forwards/sample):")
fo_cfg = TTAEpisodeConfig(steps=160,
                          optimizer=FOConfig(lr=0.01, optimizer="adam",
                                             steps=160))
agg, _ = run_stream(model, params, stream, mask, fo_cfg, master_seed=7)
print(f"  frame accuracy {agg['zero_shot_accuracy']:.3f} -> "
      f"{agg['adapted_accuracy']:.3f} "
      f"(gain {agg['accuracy_gain']:+.3f} +/- {agg['accuracy_gain_se']:.3f}, "
      f"{agg['improved_fraction']:.0%} of samples improved)")
