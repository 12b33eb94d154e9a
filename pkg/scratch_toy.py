"""Scratch: calibrate toy-task training (not part of the package)."""
import sys
import time

import numpy as np

from otcomplete.costs import CostKind, chamfer_l1
from otcomplete.geometry import CloudPair, LabeledDataset, PointCloud
from otcomplete.seeding import derive_seed
from otcomplete.trainer import (TrainerConfig, identity_baseline_cd, train,
                                train_val_split)


def make_toy_dataset(n_pairs=200, n_complete=64, n_incomplete=32, seed=0):
    rng = np.random.default_rng(derive_seed(seed, "toy"))
    pairs = []
    for _ in range(n_pairs):
        r = rng.uniform(0.6, 1.0)
        theta = rng.uniform(0.0, 2 * np.pi, size=n_complete)
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta),
                               np.zeros(n_complete)])
        phase = rng.uniform(0.0, 2 * np.pi)
        t_inc = phase + rng.uniform(0.0, np.pi, size=n_incomplete)
        inc = np.column_stack([r * np.cos(t_inc), r * np.sin(t_inc),
                               np.zeros(n_incomplete)])
        pairs.append(CloudPair(incomplete=PointCloud(inc, class_label=0),
                               complete_gt=PointCloud(pts, class_label=0)))
    return LabeledDataset(pairs=pairs)


if __name__ == "__main__":
    lr = float(sys.argv[1]) if len(sys.argv) > 1 else 1e-3
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 20
    mixture = float(sys.argv[3]) if len(sys.argv) > 3 else 0.5
    tau = float(sys.argv[4]) if len(sys.argv) > 4 else 0.044
    lr_v = float(sys.argv[5]) if len(sys.argv) > 5 else lr
    n_out = int(sys.argv[6]) if len(sys.argv) > 6 else 32
    ds = make_toy_dataset()
    cfg = TrainerConfig(
        cost=CostKind("infocd", intensity_tau=tau),
        epochs=epochs, batch_size=4, n_input=32, n_out=n_out,
        lr_T=lr, lr_v=lr_v, mixture_prob=mixture,
        dl_weight=10.5, val_interval=200, seed=0,
    )
    tr_idx, va_idx = train_val_split(ds, cfg)
    base = identity_baseline_cd(ds, va_idx)
    print(f"identity baseline cd_l1 = {base:.4f}")
    t0 = time.time()
    res = train(ds, cfg)
    dt = time.time() - t0
    rows = res.log.validation_rows()
    hist = [(r["iter"], round(r["val_cd_l1"], 4)) for r in rows]
    print(f"lr={lr} epochs={epochs} mixture={mixture} tau={tau}")
    print(f"time {dt:.1f}s  val history {hist}")
    print(f"final {res.final_val_cd:.4f}  best {res.best_val_cd:.4f} "
          f"ratio {res.final_val_cd / base:.3f}")
