import sys, time
import numpy as np
from otcomplete.costs import CostKind
from otcomplete.trainer import TrainerConfig, train
from scratch_toy import make_toy_dataset

ds = make_toy_dataset()
seed = int(sys.argv[1]); mix = float(sys.argv[2])
cfg = TrainerConfig(cost=CostKind("infocd", intensity_tau=0.1),
    epochs=100, batch_size=4, n_input=32, n_out=64,
    lr_T=2e-3, lr_v=1e-3, mixture_prob=mix, dl_weight=10.5,
    val_interval=200, seed=seed)
res = train(ds, cfg)
rows = [r["val_cd_l1"] for r in res.log.validation_rows()]
print(f"seed={seed} mix={mix} final={res.final_val_cd:.4f} best={res.best_val_cd:.4f} mean={np.mean(rows):.4f} last5={np.mean(rows[-5:]):.4f}")
