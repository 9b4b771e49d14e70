import time, itertools, json, sys
import numpy as np
from flyolf.circuit import CircuitConfig
from flyolf.odor_data import DatasetConfig, generate_dataset
from flyolf.trainer import TrainConfig, train
from flyolf.harness import variant_circuit

out = open("/root/pkg/.tuning/probe1.jsonl", "a")
datasets = {}
def get_ds(sigma, seed):
    k = (sigma, seed)
    if k not in datasets:
        datasets[k] = generate_dataset(DatasetConfig(
            n_classes=100, n_train=1500, n_test=500, noise_intensity=sigma, seed=seed))
    return datasets[k]

for gain, sigma, variant in itertools.product((0.5, 0.7, 1.0), (0.0, 0.3), ("baseline", "li", "sfa")):
    t0 = time.time()
    row = dict(gain=gain, sigma=sigma, variant=variant)
    try:
        ds = get_ds(sigma, 1)
        cfg = variant_circuit(variant, 100, "medium", 1, orn_gain=gain)
        rep, _ = train(ds, cfg, TrainConfig(epochs=20, batch_size=256, lr=1e-4, seed=1))
        row.update(acc=rep.test_acc[-1], acc10=rep.test_acc[9], loss=rep.train_loss[-1],
                   coding=rep.kc_coding_level, wall=round(time.time()-t0,1))
    except Exception as e:
        row.update(error=f"{type(e).__name__}: {e}", wall=round(time.time()-t0,1))
    out.write(json.dumps(row) + "\n"); out.flush()
    print(row, flush=True)
