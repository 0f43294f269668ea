"""Checkpoint a training run as seeds, then rebuild and undo it.

A zeroth-order run is fully determined by its initial parameters plus,
per query, the perturbation seed and one scalar (the projected
gradient).  Writing those 12-byte records instead of parameter tensors
gives a checkpoint whose size is independent of the model; replaying
them onto the initial parameters reconstructs the trained model, and
applying them backwards reverts it.

Run: python3 demos/seed_replay.py
"""

import os
import tempfile

from zobench import (BatchSampler, DataGenConfig, ZOConfig, gen_data,
                     make_model, read_log, replay, revert, train)
from zobench.seedlog import SeedLogHeader, SeedLogWriter

cfg = DataGenConfig(task="mlp", dim=20, hidden=16, classes=4,
                    n_train=512, seed=0)
model = make_model(cfg)
train_set, _ = gen_data(cfg)
params = model.init(seed=0)
initial = params.copy()

zcfg = ZOConfig(epsilon=1e-3, lr=0.05, q=4, steps=400, combine="mean",
                master_seed=7)
sampler = BatchSampler(train_set, 32, seed=0)

workdir = tempfile.mkdtemp()
log_path = os.path.join(workdir, "run.zolog")
header = SeedLogHeader.from_config(zcfg, params.schema_hash)
with SeedLogWriter(log_path, header) as writer:
    _, metrics = train(model, sampler.draw, zcfg, params, log_writer=writer)
print(f"trained {zcfg.steps} steps x q={zcfg.q}: "
      f"loss {metrics[0]['loss']:.4f} -> {metrics[-1]['loss']:.4f}")

full_ckpt = os.path.join(workdir, "full.pset")
params.save(full_ckpt)
log_bytes = os.path.getsize(log_path)
ckpt_bytes = os.path.getsize(full_ckpt)
print(f"seed log: {log_bytes} bytes for {zcfg.steps * zcfg.q} records "
      f"(full parameter snapshot: {ckpt_bytes} bytes)")

log = read_log(log_path)
rebuilt = replay(initial, log)
print(f"replay error vs live parameters: {rebuilt.max_abs_diff(params):.2e}")

restored = revert(rebuilt, log)
print(f"revert error vs initial parameters: "
      f"{restored.max_abs_diff(initial):.2e}")
