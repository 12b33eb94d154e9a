import sys
import numpy as np
from otcomplete.costs import CostKind
from otcomplete.geometry import CloudPair, LabeledDataset, PointCloud
from otcomplete.seeding import derive_seed
from otcomplete.trainer import TrainerConfig, train, identity_baseline_cd, train_val_split

def make_hard_toy(n_pairs=200, n_complete=64, n_incomplete=32, seed=0):
    rng = np.random.default_rng(derive_seed(seed, "toy"))
    pairs = []
    for _ in range(n_pairs):
        r = rng.uniform(0.4, 1.2)
        cx, cy = rng.uniform(-0.35, 0.35, size=2)
        theta = rng.uniform(0.0, 2*np.pi, size=n_complete)
        pts = np.column_stack([cx + r*np.cos(theta), cy + r*np.sin(theta), np.zeros(n_complete)])
        phase = rng.uniform(0.0, 2*np.pi)
        t_inc = phase + rng.uniform(0.0, np.pi, size=n_incomplete)
        inc = np.column_stack([cx + r*np.cos(t_inc), cy + r*np.sin(t_inc), np.zeros(n_incomplete)])
        pairs.append(CloudPair(incomplete=PointCloud(inc, class_label=0),
                               complete_gt=PointCloud(pts, class_label=0)))
    return LabeledDataset(pairs=pairs)

seed = int(sys.argv[1]); mix = float(sys.argv[2])
ds = make_hard_toy()
cfg = TrainerConfig(cost=CostKind("infocd", intensity_tau=0.1),
    epochs=100, batch_size=4, n_input=32, n_out=64,
    lr_T=2e-3, lr_v=1e-3, mixture_prob=mix, dl_weight=10.5,
    val_interval=200, seed=seed)
_, va = train_val_split(ds, cfg)
base = identity_baseline_cd(ds, va)
res = train(ds, cfg)
rows = [r["val_cd_l1"] for r in res.log.validation_rows()]
print(f"seed={seed} mix={mix} base={base:.4f} final={res.final_val_cd:.4f} best={res.best_val_cd:.4f} "
      f"ratio_best={res.best_val_cd/base:.3f} mean={np.mean(rows):.4f}")
