"""Command-line entry point: gen, cost, ot, train, eval, bench, sweep.

Exit codes: 0 success, 2 configuration error, 3 numerical abort, 4 I/O or
parse error. Every run writes one manifest.json into its output directory;
re-running with the manifest's resolved config and seed reproduces every
output checksum (single-threaded mode). Relative --out paths are created
under $OTCOMPLETE_OUT_ROOT when that variable is set.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, nets
from .costs import COST_VARIANTS, CostKind, chamfer_l1, cost, fscore, MetricConfig
from .discrete import (
    CostMatrix,
    Histogram,
    SolverConfig,
    cost_matrix,
    rescaling_factors,
    sinkhorn,
    solve_exact_assignment,
    unbalanced_sinkhorn,
)
from .errors import (
    CloudParseError,
    ConfigurationError,
    ContractError,
    NumericalError,
    TrainingDiverged,
    ValidationError,
)
from .experiments import (
    DEFAULT_RETRIEVAL_KINDS,
    ImbalanceSpec,
    RetrievalConfig,
    cost_ablation,
    cost_retrieval_eval,
    imbalance_bench,
    make_toy_dataset,
    mixture_ablation,
    tau_sweep,
    toy_trainer_config,
)
from .geometry import (
    SHAPE_KINDS,
    load_dataset,
    make_dataset,
    read_cloud,
    save_dataset,
    write_cloud,
)
from .manifest import (
    RunManifest,
    cfg_to_dict,
    load_config_file,
    resolve_section,
)
from .seeding import derive_seed
from .trainer import TrainerConfig, train, train_val_split, validation_metrics

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4


def _out_dir(arg: str) -> Path:
    root = os.environ.get("OTCOMPLETE_OUT_ROOT")
    p = Path(arg)
    if root and not p.is_absolute():
        p = Path(root) / p
    return p


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, skip=()):
    """One CLI flag per scalar config field; defaults shown in --help."""
    for f in dataclasses.fields(cls):
        if f.name in skip or f.type not in ("float", "int", "str",
                                            "float | None", "str | None"):
            continue
        default = f.default
        kind = {"float": float, "int": int}.get(str(f.type).split(" ")[0], str)
        parser.add_argument(f"--{f.name.replace('_', '-').lower()}", dest=f.name,
                            type=kind, default=None,
                            help=f"{cls.__name__}.{f.name} (default {default})")


def _collect_overrides(args, cls) -> dict:
    out = {}
    for f in dataclasses.fields(cls):
        if hasattr(args, f.name) and getattr(args, f.name) is not None:
            out[f.name] = getattr(args, f.name)
    return out


def _trainer_config(args) -> TrainerConfig:
    file_data = load_config_file(args.config) if args.config else {}
    overrides = _collect_overrides(args, TrainerConfig)
    cfg = resolve_section(TrainerConfig, file_data, "trainer", overrides)
    if getattr(args, "cost_variant", None) or getattr(args, "cost_tau", None):
        kind = cfg.cost
        variant = args.cost_variant or kind.variant
        tau = args.cost_tau if args.cost_tau is not None else kind.intensity_tau
        cfg = dataclasses.replace(cfg, cost=dataclasses.replace(
            kind, variant=variant, intensity_tau=tau))
    return cfg


def _write_matrix_csv(M: np.ndarray, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "value"])
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                w.writerow([i, j, "%.17g" % M[i, j]])


def _read_matrix_csv(path: Path) -> np.ndarray:
    rows = []
    with path.open() as fh:
        for rec in csv.DictReader(fh):
            rows.append((int(rec["row"]), int(rec["col"]), float(rec["value"])))
    if not rows:
        raise ValidationError(f"{path}: empty matrix")
    m = max(r for r, _, _ in rows) + 1
    n = max(c for _, c, _ in rows) + 1
    M = np.zeros((m, n))
    for r, c, v in rows:
        M[r, c] = v
    return M


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    out = _out_dir(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ConfigurationError(
            f"{out} exists and is not empty; pass --force to overwrite")
    if args.pairs <= 0:
        raise ConfigurationError("--pairs must be positive")
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    for c in classes:
        if c not in SHAPE_KINDS and c != "ring":
            raise ConfigurationError(f"unknown class {c!r}")
    if classes == ["ring"]:
        ds = make_toy_dataset(n_pairs=args.pairs, n_complete=args.n_complete,
                              n_incomplete=args.n_incomplete, seed=args.seed)
    else:
        ds = make_dataset(classes, pairs_per_class=args.pairs,
                          n_complete=args.n_complete,
                          n_incomplete=args.n_incomplete, seed=args.seed)
    manifest = RunManifest("gen", {
        "classes": classes, "pairs": args.pairs, "n_complete": args.n_complete,
        "n_incomplete": args.n_incomplete, "seed": args.seed,
    }, args.seed)
    written = save_dataset(ds, out)
    manifest.record(*written)
    manifest.write(out)
    print(f"wrote {len(ds.pairs)} pairs to {out}")
    return EXIT_OK


def _cost_kind_from_args(args) -> CostKind:
    return CostKind(args.kind, intensity_tau=args.tau,
                    tau=args.infocd_tau, tau_prime=args.infocd_tau_prime,
                    scale_lambda=args.infocd_lambda, emd_ground=args.emd_ground)


def cmd_cost(args) -> int:
    kind = _cost_kind_from_args(args)
    if args.matrix:
        ds_a = load_dataset(args.a) if (Path(args.a) / "index.csv").exists() else None
        if ds_a is None:
            raise ConfigurationError("--matrix mode expects dataset directories")
        ds_b = load_dataset(args.b)
        X = [p.incomplete for p in ds_a.pairs]
        Y = [p.complete_gt for p in ds_b.pairs]
        M = cost_matrix(kind, X, Y)
        out = _out_dir(args.matrix)
        out.parent.mkdir(parents=True, exist_ok=True)
        _write_matrix_csv(M.entries, out)
        manifest = RunManifest("cost", {"kind": cfg_to_dict(kind)}, 0)
        manifest.record(out)
        manifest.write(out.parent)
        print(f"wrote {M.shape[0]}x{M.shape[1]} matrix to {out}")
        return EXIT_OK
    a = read_cloud(args.a)
    b = read_cloud(args.b)
    print("%.9f" % cost(kind, a, b))
    return EXIT_OK


def cmd_ot(args) -> int:
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    file_data = load_config_file(args.config) if args.config else {}
    overrides = _collect_overrides(args, SolverConfig)
    if args.rho is not None:
        overrides["rho1"] = overrides["rho2"] = \
            float("inf") if args.rho == "inf" else float(args.rho)
    cfg = resolve_section(SolverConfig, file_data, "solver", overrides)
    M = CostMatrix(_read_matrix_csv(Path(args.matrix)))
    m, n = M.shape
    a = Histogram(np.loadtxt(args.masses_a)) if args.masses_a else Histogram.uniform(m)
    b = Histogram(np.loadtxt(args.masses_b)) if args.masses_b else Histogram.uniform(n)
    if args.method == "exact":
        coupling = solve_exact_assignment(M)
    elif args.method == "sinkhorn":
        coupling = sinkhorn(a, b, M, cfg)
    else:
        coupling = unbalanced_sinkhorn(a, b, M, cfg)
    flag = "" if coupling.converged else "not_converged"
    coupling_csv = out / "coupling.csv"
    with coupling_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "mass", "flag"])
        for i in range(m):
            for j in range(n):
                w.writerow([i, j, "%.17g" % coupling.plan[i, j], flag])
    factors_csv = out / "factors.csv"
    src, tgt = rescaling_factors(coupling, a, b)
    with factors_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["side", "index", "factor", "flag"])
        for i, f in enumerate(src):
            w.writerow(["source", i, "%.17g" % f, flag])
        for j, f in enumerate(tgt):
            w.writerow(["target", j, "%.17g" % f, flag])
    manifest = RunManifest("ot", {"method": args.method,
                                  "solver": cfg_to_dict(cfg)}, 0)
    manifest.record(coupling_csv, factors_csv)
    manifest.status = "ok" if coupling.converged else "not_converged"
    manifest.write(out)
    print(f"objective {coupling.objective:.9g} residual {coupling.residual:.3g} "
          f"iterations {coupling.iterations}", file=sys.stderr)
    if not coupling.converged:
        print("solver did not converge; best iterate written", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_train(args) -> int:
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _trainer_config(args)
    cfg = dataclasses.replace(cfg, checkpoint_dir=str(out))
    ds = load_dataset(args.data)
    manifest = RunManifest("train", {"trainer": cfg_to_dict(cfg)}, cfg.seed)
    log_csv = out / "log.csv"
    try:
        result = train(ds, cfg, resume_from=args.resume)
    except TrainingDiverged as exc:
        if exc.log is not None:
            exc.log.to_csv(log_csv)
        manifest.status = "diverged"
        manifest.record(log_csv, *sorted(out.glob("*.ckpt")))
        manifest.write(out)
        print(f"training aborted: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    result.log.to_csv(log_csv)
    manifest.record(log_csv, *sorted(out.glob("*.ckpt")))
    manifest.write(out)
    if result.final_val_cd is not None:
        print(f"final val cd_l1 {result.final_val_cd:.6f} "
              f"best {result.best_val_cd:.6f}")
    else:
        print("training finished (no validation rows)")
    return EXIT_OK


def cmd_eval(args) -> int:
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _trainer_config(args)
    ds = load_dataset(args.data)
    map_params, _, _, _, _ = _load_ckpt_for_eval(args.ckpt, cfg)
    if args.split == "val":
        _, indices = train_val_split(ds, cfg)
    else:
        indices = list(range(len(ds.pairs)))
    alpha = MetricConfig(cfg.fscore_alpha)
    rows = []
    for i in indices:
        pair = ds.pairs[i]
        from .geometry import resample

        x = resample(pair.incomplete, cfg.n_input, derive_seed(cfg.seed, "val_in", i))
        pred = nets.map_cloud(map_params, x)
        rows.append((i, chamfer_l1(pred, pair.complete_gt),
                     fscore(pred, pair.complete_gt, alpha)))
    metrics_csv = out / "metrics.csv"
    with metrics_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair", "cd_l1", "fscore"])
        for i, cd, fs in rows:
            w.writerow([i, "%.17g" % cd, "%.17g" % fs])
        w.writerow(["mean", "%.17g" % np.mean([r[1] for r in rows]),
                    "%.17g" % np.mean([r[2] for r in rows])])
    manifest = RunManifest("eval", {"trainer": cfg_to_dict(cfg),
                                    "split": args.split}, cfg.seed)
    manifest.record(metrics_csv)
    manifest.write(out)
    print(f"mean cd_l1 {np.mean([r[1] for r in rows]):.6f} over {len(rows)} pairs")
    return EXIT_OK


def _load_ckpt_for_eval(path, cfg):
    from .trainer import load_train_checkpoint

    return load_train_checkpoint(path, cfg)


def cmd_bench(args) -> int:
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    file_data = load_config_file(args.config) if args.config else {}
    spec = resolve_section(ImbalanceSpec, file_data, "imbalance",
                           _collect_overrides(args, ImbalanceSpec))
    if args.mode == "neural":
        base_cfg = resolve_section(TrainerConfig, file_data, "trainer", {})
        table = imbalance_bench(spec, "neural", base_cfg)
    else:
        table = imbalance_bench(spec, "discrete")
    results_csv = out / "results.csv"
    table.to_csv(results_csv)
    manifest = RunManifest("bench", {"imbalance": cfg_to_dict(spec),
                                     "mode": args.mode}, spec.seed)
    manifest.record(results_csv)
    manifest.write(out)
    print(f"wrote {len(table.rows)} rows to {results_csv}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _out_dir(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = _trainer_config(args)
    if args.data:
        ds = load_dataset(args.data)
    else:
        ds = make_toy_dataset(seed=cfg.seed)
    if args.what == "tau":
        taus = [float(t) for t in args.taus.split(",")]
        table = tau_sweep(ds, cfg, taus)
    elif args.what == "cost":
        kinds = [CostKind(v, intensity_tau=cfg.cost.intensity_tau
                          if v == "infocd" else args.chamfer_tau)
                 for v in args.kinds.split(",")]
        table = cost_ablation(ds, kinds, cfg)
    elif args.what == "mixture":
        table = mixture_ablation(ds, cfg)
    elif args.what == "retrieval":
        file_data = load_config_file(args.config) if args.config else {}
        rcfg = resolve_section(RetrievalConfig, file_data, "retrieval",
                               _collect_overrides(args, RetrievalConfig))
        table, neighbors = cost_retrieval_eval(ds, rcfg)
        if args.dump_neighbors:
            dump_dir = out / "neighbors"
            dump_dir.mkdir(exist_ok=True)
            for variant, idx in neighbors.items():
                for q in range(min(len(idx), 5)):
                    for rank, j in enumerate(idx[q]):
                        write_cloud(ds.pairs[j].complete_gt,
                                    dump_dir / f"{variant}_q{q}_rank{rank}.xyz")
    else:
        raise ConfigurationError(f"unknown sweep {args.what!r}")
    results_csv = out / "results.csv"
    table.to_csv(results_csv)
    manifest = RunManifest("sweep", {"what": args.what,
                                     "trainer": cfg_to_dict(cfg)}, cfg.seed)
    manifest.record(results_csv)
    manifest.write(out)
    print(f"wrote {len(table.rows)} rows to {results_csv}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="otcomplete",
        description="Unpaired point-cloud completion via (unbalanced) "
                    "optimal transport: data generation, point-set costs, "
                    "discrete OT/UOT solvers, semi-dual training, and "
                    "experiment sweeps.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a labeled synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--classes", default="sphere,box",
                   help=f"comma list from {SHAPE_KINDS} or 'ring' (default sphere,box)")
    p.add_argument("--pairs", type=int, default=20, help="pairs per class (default 20)")
    p.add_argument("--n-complete", type=int, default=256, dest="n_complete",
                   help="points per complete cloud (default 256)")
    p.add_argument("--n-incomplete", type=int, default=256, dest="n_incomplete",
                   help="points per incomplete cloud (default 256)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    p.add_argument("--force", action="store_true", help="overwrite non-empty dir")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("cost", help="evaluate a cost between clouds or pools")
    p.add_argument("a", help="XYZ/PLY file (or dataset dir with --matrix)")
    p.add_argument("b", help="XYZ/PLY file (or dataset dir with --matrix)")
    p.add_argument("--kind", default="chamfer_l1", choices=COST_VARIANTS,
                   help="cost variant (default chamfer_l1)")
    p.add_argument("--tau", type=float, default=1.0,
                   help="global intensity multiplier (default 1.0)")
    p.add_argument("--infocd-tau", type=float, default=2.0,
                   help="InfoCD temperature tau (default 2.0)")
    p.add_argument("--infocd-tau-prime", type=float, default=1.0,
                   help="InfoCD temperature tau' (default 1.0)")
    p.add_argument("--infocd-lambda", type=float, default=0.0,
                   help="InfoCD normalizer stabilizer (default 0.0)")
    p.add_argument("--emd-ground", default="euclid", choices=("euclid", "sq_euclid"),
                   help="EMD ground metric (default euclid)")
    p.add_argument("--matrix", default=None,
                   help="write a cost-matrix CSV between two dataset dirs")
    p.set_defaults(fn=cmd_cost)

    p = sub.add_parser("ot", help="solve OT/UOT on a cost-matrix CSV")
    p.add_argument("--matrix", required=True, help="cost matrix CSV (row,col,value)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--method", default="sinkhorn",
                   choices=("sinkhorn", "unbalanced", "exact"))
    p.add_argument("--rho", default=None,
                   help="KL penalty for both marginals ('inf' for balanced)")
    p.add_argument("--masses-a", default=None, help="text file of source masses")
    p.add_argument("--masses-b", default=None, help="text file of target masses")
    p.add_argument("--config", default=None, help="JSON config file")
    _add_dataclass_flags(p, SolverConfig, skip=("rho1", "rho2"))
    p.set_defaults(fn=cmd_ot)

    for name, helptext in (("train", "train the completion map"),
                           ("eval", "evaluate a checkpoint on a dataset")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True, help="dataset dir from gen")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--cost-variant", default=None, choices=COST_VARIANTS,
                       help="training cost (default infocd)")
        p.add_argument("--cost-tau", type=float, default=None,
                       help="cost intensity (default 0.044)")
        _add_dataclass_flags(p, TrainerConfig,
                             skip=("checkpoint_dir", "conjugate"))
        p.add_argument("--conjugate", default=None,
                       choices=("softplus_shifted", "identity"),
                       help="divergence conjugate (default softplus_shifted)")
        if name == "train":
            p.add_argument("--resume", default=None, help="checkpoint to resume from")
            p.set_defaults(fn=cmd_train)
        else:
            p.add_argument("--ckpt", required=True, help="checkpoint file")
            p.add_argument("--split", default="val", choices=("val", "all"))
            p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="class-imbalance robustness benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", default="discrete", choices=("discrete", "neural"))
    p.add_argument("--config", default=None, help="JSON config file")
    _add_dataclass_flags(p, ImbalanceSpec)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("sweep", help="experiment sweeps (tau/cost/mixture/retrieval)")
    p.add_argument("what", choices=("tau", "cost", "mixture", "retrieval"))
    p.add_argument("--out", required=True)
    p.add_argument("--data", default=None, help="dataset dir (default: toy rings)")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--taus", default="0.02,0.025,0.044,0.1,0.25",
                   help="tau grid for 'tau' (default 0.02,0.025,0.044,0.1,0.25)")
    p.add_argument("--kinds", default="infocd,chamfer_l2,l2",
                   help="cost kinds for 'cost' (default infocd,chamfer_l2,l2)")
    p.add_argument("--chamfer-tau", type=float, default=100.0, dest="chamfer_tau",
                   help="intensity for non-InfoCD kinds in 'cost' (default 100)")
    p.add_argument("--dump-neighbors", action="store_true",
                   help="write top-k retrieved clouds as XYZ files")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel cells (default 1; cells stay deterministic)")
    p.add_argument("--cost-variant", default=None, choices=COST_VARIANTS)
    p.add_argument("--cost-tau", type=float, default=None)
    _add_dataclass_flags(p, TrainerConfig, skip=("checkpoint_dir", "conjugate"))
    p.add_argument("--conjugate", default=None,
                   choices=("softplus_shifted", "identity"))
    p.set_defaults(fn=cmd_sweep)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigurationError, ContractError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, TrainingDiverged) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CloudParseError, ValidationError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
