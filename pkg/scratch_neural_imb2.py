import sys, time
import numpy as np
from otcomplete.costs import CostKind
from otcomplete.experiments import ImbalanceSpec, imbalance_bench_neural
from otcomplete.trainer import TrainerConfig

epochs = int(sys.argv[1]); seed = int(sys.argv[2])
spec = ImbalanceSpec(pairs_per_class=24, n_points=48, seed=seed)
cfg = TrainerConfig(cost=CostKind("infocd", intensity_tau=0.1),
    epochs=epochs, batch_size=4, n_input=48, n_out=48,
    lr_T=2e-3, lr_v=1e-3, mixture_prob=0.5, dl_weight=10.5,
    val_interval=100, seed=seed)
t0 = time.time()
table = imbalance_bench_neural(spec, cfg)
vals = table.values("imbalance_neural")
out = ["%.0fs ep=%d seed=%d" % (time.time()-t0, epochs, seed)]
for tag in ("uot", "ot"):
    row = [vals[f"r={r}/{tag}"] for r in (0.3, 0.5, 0.7, 1.0)]
    out.append("%s %s spread=%.4f" % (tag, [round(v,4) for v in row], max(row)-min(row)))
print(" | ".join(out))
