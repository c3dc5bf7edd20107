import json, time
import numpy as np
from nusrecon.fileio import write_weights
from nusrecon.training import (DatasetSpec, TrainConfig, baseline_rlne,
                               evaluate_rlne, generate_dataset, train)

t0 = time.perf_counter()
split = generate_dataset(DatasetSpec(q_total=4000, n=128, density=0.25, ve=True, seed=70))
t1 = time.perf_counter()
w, hist = train(split, TrainConfig(epochs=20, batch=10, k_iters=10, seed=7), log=print)
t2 = time.perf_counter()
base = float(np.median(baseline_rlne(split.valid)))
final = float(np.median(evaluate_rlne(w, split.valid)))
curve = [hist.initial_valid_rlne] + [e.valid_rlne for e in hist.epochs]
decreases = sum(1 for a, b in zip(curve, curve[1:]) if b < a)
dec10 = sum(1 for a, b in zip(curve[:11], curve[1:11]) if b < a)
out = dict(gen_seconds=t1-t0, train_seconds=t2-t1, baseline_median=base,
           final_median=final, ratio=final/base, decreases_first10=dec10,
           initial=hist.initial_valid_rlne, best_epoch=hist.best_epoch,
           curve=curve)
print(json.dumps(out, indent=2))
write_weights(w, "/root/pkg/.scratch/c7_weights.json")
with open("/root/pkg/.scratch/c7_result.json", "w") as fh:
    json.dump(out, fh, indent=2)
