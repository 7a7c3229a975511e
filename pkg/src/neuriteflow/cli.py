"""Command-line pipeline driver.

Results go to stdout, logs to stderr.  Failures exit nonzero with one
machine-parsable line ``error code=<n> name=<ErrorClass>: <message>`` and
remove partial outputs.  ``--threads N`` caps BLAS/OpenMP parallelism
(set before numpy loads); ``--threads 1`` is the deterministic reference
mode.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

EXIT_USAGE = 2
_EXIT_CODES = {
    "MalformedLine": 10,
    "DuplicateId": 11,
    "DanglingParent": 12,
    "MultipleRoots": 13,
    "CycleDetected": 14,
    "NonPositiveRadius": 15,
    "DegenerateSegment": 16,
    "UnsupportedMorphology": 17,
    "HighOrderBranch": 20,
    "PathTooShort": 21,
    "NotAdjacent": 22,
    "DimensionMismatch": 30,
    "NonFiniteState": 31,
    "NegativeInput": 32,
    "NotConverged": 33,
    "ShapeMismatch": 40,
    "GraphNotBuilt": 41,
    "CorruptCheckpoint": 42,
    "ArchitectureMismatch": 43,
    "KindMismatch": 50,
    "MissingPrediction": 51,
    "SlotMismatch": 52,
    "EmptyDataset": 60,
    "UnknownKind": 61,
    "TooFewGeometries": 62,
    "EmptyInput": 63,
    "LengthMismatch": 64,
    "DegenerateRange": 65,
    "HashMismatch": 66,
}
_EXIT_FALLBACK = 69
_EXIT_UNEXPECTED = 70

SIMULATOR_CKPT = "{kind}_simulator.ckpt"
ASSEMBLY_CKPT = "assembly_{kind}.ckpt"


class UsageError(Exception):
    pass


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


@contextmanager
def _fresh_output_dir(path):
    p = Path(path)
    if p.exists() and any(p.iterdir()):
        raise UsageError(f"output directory {p} exists and is not empty")
    p.mkdir(parents=True, exist_ok=True)
    try:
        yield p
    except BaseException:
        shutil.rmtree(p, ignore_errors=True)
        raise


def _write_hashes(outdir: Path) -> None:
    hashes = {}
    for f in sorted(outdir.iterdir()):
        if f.is_file() and f.name != "hashes.json":
            hashes[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    (outdir / "hashes.json").write_text(json.dumps(hashes, indent=2, sort_keys=True))


def _verify_hashes(outdir: Path) -> None:
    from .errors import HashMismatch

    index = outdir / "hashes.json"
    if not index.exists():
        raise HashMismatch(f"{outdir} has no hashes.json")
    recorded = json.loads(index.read_text())
    for name, digest in recorded.items():
        f = outdir / name
        if not f.exists():
            raise HashMismatch(f"{outdir}: missing hashed file {name}")
        if hashlib.sha256(f.read_bytes()).hexdigest() != digest:
            raise HashMismatch(f"{outdir}: content of {name} changed")


def _load_config(path):
    from .config import RunConfig

    if path is None:
        return RunConfig()
    return RunConfig.load(path)


def _load_network(path, cfg):
    """SWC or unit-graph JSON -> (UnitGraph, network ComputationGraph)."""
    from .decomposition import decompose, unit_graph_from_dict
    from .graphs import build_network_graph
    from .morphology import parse_swc, resample

    p = Path(path)
    if p.suffix == ".json":
        ug = unit_graph_from_dict(json.loads(p.read_text()))
    else:
        m = parse_swc(p.read_text())
        skel = resample(m, cfg.decomposition.h)
        ug = decompose(skel, cfg.decomposition.sections_per_pipe)
    return ug, build_network_graph(ug, cfg.params)


def _load_simulators(models_dir: Path, cfg):
    from .simulator import SimulatorModel

    out = {}
    for kind in ("pipe", "bifurcation"):
        path = models_dir / SIMULATOR_CKPT.format(kind=kind)
        if not path.exists():
            raise UsageError(f"missing simulator checkpoint {path}")
        out[kind], _ = SimulatorModel.load(path)
    return out


def _load_components(models_dir: Path):
    from .assembly import ASSEMBLY_KINDS, AssemblyComponent

    out = {}
    for kind in ASSEMBLY_KINDS:
        path = models_dir / ASSEMBLY_CKPT.format(kind=kind)
        if not path.exists():
            raise UsageError(f"missing assembly checkpoint {path}")
        out[kind], _ = AssemblyComponent.load(path)
    return out


# --- subcommands ------------------------------------------------------------


def _cmd_parse(args) -> int:
    from .morphology import parse_swc

    m = parse_swc(Path(args.swc).read_text())
    branch_points = [r.id for r in m.records if len(m.children(r.id)) >= 2]
    tips = [r.id for r in m.records if not m.children(r.id)]
    print(f"records: {len(m.records)}")
    print(f"root: {m.root.id}")
    print(f"branch_points: {len(branch_points)}")
    print(f"tips: {len(tips)}")
    return 0


def _cmd_decompose(args) -> int:
    from .decomposition import decompose, unit_graph_to_dict
    from .morphology import parse_swc, resample

    cfg = _load_config(args.config)
    m = parse_swc(Path(args.swc).read_text())
    skel = resample(m, cfg.decomposition.h)
    ug = decompose(skel, cfg.decomposition.sections_per_pipe)
    with _fresh_output_dir(args.out) as outdir:
        (outdir / "unitgraph.json").write_text(
            json.dumps(unit_graph_to_dict(ug), sort_keys=True)
        )
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    kinds = [u.kind for u in ug.units]
    print(f"units: {len(ug.units)}")
    print(f"pipes: {kinds.count('pipe')}")
    print(f"bifurcations: {kinds.count('bifurcation')}")
    print(f"interfaces: {len(ug.interfaces)}")
    return 0


def _cmd_simulate(args) -> int:
    from .graphs import BoundaryCondition
    from .solver import run_to_steady

    cfg = _load_config(args.config)
    ug, net = _load_network(args.input, cfg)
    bc = BoundaryCondition(cfg.boundary.c_in, cfg.boundary.lambda_in)
    _log(f"integrating network of {net.n_nodes} nodes")
    series = run_to_steady(
        net, cfg.params, bc,
        tol=cfg.simulate.tol, max_time=cfg.simulate.max_time,
        store_every=cfg.simulate.store_every,
    )
    with _fresh_output_dir(args.out) as outdir:
        (outdir / "fields.csv").write_text(series.to_csv(net))
        (outdir / "series.json").write_text(json.dumps({
            "times": series.times.tolist(),
            "converged": series.converged,
            "n_nodes": net.n_nodes,
        }, sort_keys=True))
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    print(f"outputs: {series.n_outputs}")
    print(f"final_time: {series.times[-1]:g}")
    print(f"converged: {series.converged}")
    return 0


def _boundary_values(cfg) -> list[float]:
    import numpy as np

    from .config import sub_seed

    rng = np.random.default_rng(sub_seed(cfg.seed, "boundary"))
    lo, hi = cfg.dataset.boundary_range
    return [float(v) for v in rng.uniform(lo, hi, size=cfg.dataset.n_boundary_values)]


def _cmd_gen_data(args) -> int:
    from .config import sub_seed
    from .datasets import generate_dataset, generate_geometries, save_dataset

    cfg = _load_config(args.config)
    geoms = generate_geometries(
        sub_seed(cfg.seed, "geometry"),
        cfg.dataset.n_pipes,
        cfg.dataset.n_bifurcations,
        cfg.decomposition.sections_per_pipe,
    )
    values = _boundary_values(cfg)
    _log(f"running solver over {len(geoms)} geometries x {len(values)} boundary values")
    datasets, manifest = generate_dataset(
        geoms, values, cfg.params,
        seed=cfg.seed,
        tol=cfg.dataset.tol,
        max_time=cfg.dataset.max_time,
        samples_per_run=cfg.dataset.samples_per_run,
        lambda_in=cfg.boundary.lambda_in,
        settings={"n_pipes": cfg.dataset.n_pipes,
                  "n_bifurcations": cfg.dataset.n_bifurcations},
    )
    with _fresh_output_dir(args.out) as outdir:
        save_dataset(outdir, datasets, manifest)
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    for kind, count in manifest.counts.items():
        print(f"{kind}_samples: {count}")
        print(f"{kind}_hash: {manifest.hashes[kind]}")
    return 0


def _cmd_train_sim(args) -> int:
    from . import nn
    from .config import sub_seed
    from .datasets import load_dataset
    from .errors import EmptyDataset
    from .simulator import SimulatorLossConfig, TrainConfig, train_simulator

    cfg = _load_config(args.config)
    datasets, _ = load_dataset(args.data)
    if args.kind not in datasets:
        raise EmptyDataset(f"dataset at {args.data} has no {args.kind} samples")
    ds = datasets[args.kind]

    init_arrays = None
    if args.init_from:
        arrays, _ = nn.load_checkpoint(args.init_from)
        init_arrays = arrays
    tc = TrainConfig(
        epochs=cfg.training.epochs,
        batch_size=cfg.training.batch_size,
        split=cfg.training.split,
        seed=sub_seed(cfg.seed, f"init-{args.kind}"),
        schedule=nn.LrSchedule(cfg.training.lr_initial, cfg.training.lr_floor,
                               cfg.training.lr_factor, cfg.training.lr_period),
        loss=SimulatorLossConfig(residual_weight=cfg.training.residual_weight),
        init_arrays=init_arrays,
    )
    _log(f"training {args.kind} simulator on {ds.n_samples} samples")
    result = train_simulator(ds, tc)
    with _fresh_output_dir(args.out) as outdir:
        result.model.save(
            outdir / SIMULATOR_CKPT.format(kind=args.kind),
            seed=tc.seed,
            config={"epochs": tc.epochs, "batch_size": tc.batch_size,
                    "split": tc.split,
                    "residual_weight": tc.loss.residual_weight,
                    "warm_start": bool(args.init_from)},
        )
        rows = ["epoch,lr,train_loss,test_loss,test_mre"]
        rows += [
            f"{h['epoch']},{h['lr']:g},{h['train_loss']!r},"
            f"{h['test_loss']!r},{h['test_mre']!r}"
            for h in result.history
        ]
        (outdir / f"{args.kind}_history.csv").write_text("\n".join(rows) + "\n")
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    print(f"best_epoch: {result.best_epoch}")
    print(f"best_test_loss: {result.best_test_loss:.6g}")
    print(f"final_test_mre: {result.history[-1]['test_mre']:.4f}")
    return 0


def _cmd_train_asm(args) -> int:
    from . import nn
    from .assembly import AssemblyTrainConfig, train_assembly
    from .config import sub_seed
    from .datasets import generate_assembly_dataset, generate_pair_geometries
    import numpy as np

    cfg = _load_config(args.config)
    models_dir = Path(args.models)
    simulators = _load_simulators(models_dir, cfg)
    pairs = generate_pair_geometries(
        sub_seed(cfg.seed, "pairs"),
        cfg.dataset.pairs_per_kind,
        cfg.decomposition.sections_per_pipe,
    )
    rng = np.random.default_rng(sub_seed(cfg.seed, "pair-boundary"))
    lo, hi = cfg.dataset.boundary_range
    values = [float(v) for v in
              rng.uniform(lo, hi, size=cfg.dataset.pair_boundary_values)]
    _log(f"building assembly dataset from {len(pairs)} pairs")
    asm_ds = generate_assembly_dataset(
        pairs, values, cfg.params, simulators,
        tol=cfg.dataset.tol, max_time=cfg.dataset.max_time,
        samples_per_run=cfg.dataset.pair_samples_per_run,
        lambda_in=cfg.boundary.lambda_in,
    )
    tc = AssemblyTrainConfig(
        alpha=cfg.training.alpha,
        epochs=cfg.training.epochs,
        batch_size=cfg.training.batch_size,
        split=cfg.training.split,
        seed=sub_seed(cfg.seed, "init-assembly"),
        schedule=nn.LrSchedule(cfg.training.lr_initial, cfg.training.lr_floor,
                               cfg.training.lr_factor, cfg.training.lr_period),
    )
    components, histories = train_assembly(asm_ds, tc)
    with _fresh_output_dir(args.out) as outdir:
        for kind, comp in components.items():
            comp.save(
                outdir / ASSEMBLY_CKPT.format(kind=kind),
                seed=tc.seed,
                config={"alpha": tc.alpha, "epochs": tc.epochs},
            )
            hist = histories.get(kind, [])
            rows = ["epoch,lr,train_loss,test_loss"]
            rows += [
                f"{h['epoch']},{h['lr']:g},{h['train_loss']!r},{h['test_loss']!r}"
                for h in hist
            ]
            (outdir / f"assembly_{kind}_history.csv").write_text(
                "\n".join(rows) + "\n"
            )
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    for kind, hist in sorted(histories.items()):
        if hist:
            print(f"{kind}_final_test_loss: {hist[-1]['test_loss']:.6g}")
    return 0


def _cmd_predict(args) -> int:
    from .assembly import global_rollout
    from .graphs import BoundaryCondition, build_unit_graph, unit_boundary_roles

    cfg = _load_config(args.config)
    ug, net = _load_network(args.input, cfg)
    models_dir = Path(args.models)
    simulators = _load_simulators(models_dir, cfg)
    components = _load_components(models_dir)
    unit_graphs = {
        i: build_unit_graph(u, cfg.params, unit_boundary_roles(u, ug))
        for i, u in enumerate(ug.units)
    }
    bc = BoundaryCondition(cfg.boundary.c_in, cfg.boundary.lambda_in)
    steps = max(1, int(round(cfg.predict.horizon_s / cfg.params.dt)))
    _log(f"rolling out {steps} steps over {len(ug.units)} units")
    series = global_rollout(
        ug, unit_graphs, simulators, components, bc, steps, cfg.params, net,
        store_every=cfg.predict.store_every,
    )
    with _fresh_output_dir(args.out) as outdir:
        (outdir / "fields.csv").write_text(series.to_csv(net))
        (outdir / "series.json").write_text(json.dumps({
            "times": series.times.tolist(),
            "n_nodes": net.n_nodes,
        }, sort_keys=True))
        cfg.save(outdir / "config.json")
        _write_hashes(outdir)
    print(f"outputs: {series.n_outputs}")
    print(f"final_time: {series.times[-1]:g}")
    return 0


def _read_fields_csv(path: Path):
    import numpy as np

    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    c0_cols = [i for i, h in enumerate(header) if h.startswith("c0_t")]
    cp_cols = [i for i, h in enumerate(header) if h.startswith("cplus_t")]
    return data[:, c0_cols[-1]], data[:, cp_cols[-1]]


def _cmd_eval(args) -> int:
    import numpy as np

    from .errors import LengthMismatch
    from .evaluation import metric_report

    pred_dir, truth_dir = Path(args.pred), Path(args.truth)
    _verify_hashes(pred_dir)
    _verify_hashes(truth_dir)
    p0, pp = _read_fields_csv(pred_dir / "fields.csv")
    t0, tp = _read_fields_csv(truth_dir / "fields.csv")
    if p0.shape != t0.shape:
        raise LengthMismatch(
            f"prediction has {len(p0)} nodes, truth has {len(t0)}"
        )
    report = metric_report(
        np.concatenate([p0, pp]), np.concatenate([t0, tp])
    )
    sys.stdout.write(report.to_text())
    return 0


def _cmd_bench(args) -> int:
    from .assembly import global_rollout
    from .graphs import BoundaryCondition, build_unit_graph, unit_boundary_roles
    from .evaluation import benchmark
    from .solver import build_operators, run_to_steady

    cfg = _load_config(args.config)
    ug, net = _load_network(args.swc, cfg)
    models_dir = Path(args.models)
    simulators = _load_simulators(models_dir, cfg)
    components = _load_components(models_dir)
    unit_graphs = {
        i: build_unit_graph(u, cfg.params, unit_boundary_roles(u, ug))
        for i, u in enumerate(ug.units)
    }
    bc = BoundaryCondition(cfg.boundary.c_in, cfg.boundary.lambda_in)
    ops = build_operators(net)

    probe = run_to_steady(net, cfg.params, bc, tol=cfg.simulate.tol,
                          max_time=cfg.simulate.max_time, ops=ops,
                          store_every=10**9)
    steps = max(1, int(round(probe.times[-1] / cfg.params.dt)))
    _log(f"benchmark horizon: {steps} steps ({probe.times[-1]:g} s), "
         f"converged={probe.converged}")

    def oracle_side():
        run_to_steady(net, cfg.params, bc, tol=cfg.simulate.tol,
                      max_time=cfg.simulate.max_time, ops=ops,
                      store_every=10**9)

    def surrogate_side():
        global_rollout(ug, unit_graphs, simulators, components, bc, steps,
                       cfg.params, net, store_every=10**9)

    report = benchmark(oracle_side, surrogate_side, steps, runs=args.runs)
    sys.stdout.write(report.to_text())
    return 0


# --- entry point ------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="neuriteflow",
        description="Learned surrogate for neurite material transport.",
    )
    ap.add_argument("--threads", type=int, default=None,
                    help="cap BLAS/OpenMP threads (1 = deterministic reference)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", help="validate and summarize an SWC file")
    p.add_argument("swc")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("decompose", help="emit the unit-graph manifest")
    p.add_argument("swc")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_decompose)

    p = sub.add_parser("simulate", help="reference solver run")
    p.add_argument("input", help="SWC file or unitgraph.json")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gen-data", help="synthetic geometries + dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train-sim", help="train a unit simulator")
    p.add_argument("--kind", choices=["pipe", "bifurcation"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--init-from", help="warm-start checkpoint")
    p.set_defaults(func=_cmd_train_sim)

    p = sub.add_parser("train-asm", help="train assembly components")
    p.add_argument("--data", required=True,
                   help="dataset dir (provides config defaults)")
    p.add_argument("--models", required=True,
                   help="dir with trained simulator checkpoints")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_asm)

    p = sub.add_parser("predict", help="network-wide surrogate rollout")
    p.add_argument("input", help="SWC file or unitgraph.json")
    p.add_argument("--models", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="compare prediction and truth outputs")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="oracle vs surrogate wall-clock")
    p.add_argument("swc")
    p.add_argument("--models", required=True)
    p.add_argument("--config")
    p.add_argument("--runs", type=int, default=5)
    p.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error code={EXIT_USAGE} name=UsageError: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        from .errors import NeuriteFlowError

        name = type(exc).__name__
        if isinstance(exc, NeuriteFlowError):
            code = _EXIT_CODES.get(name, _EXIT_FALLBACK)
        else:
            code = _EXIT_UNEXPECTED
        message = str(exc).replace("\n", " ")
        print(f"error code={code} name={name}: {message}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
