"""Command line entry point: ``rareboost-forge <subcommand> ...``.

Exit status is 0 on success, 1 when a check or validation fails and 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import augment as aug
from . import csc, dataset_io, rebalance
from .errors import ForgeError
from .labelmap import UNIFIED_ABBREV, UNIFIED_CLASSES, default_label_map, load_label_map, map_labels
from .metrics import ConfusionMatrix, accumulate, iou
from .scene import load_scene, placement_summary
from .sensor import SensorConfig, prepare_sequence, simulate_scan

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
DATA_FORMAT = "semantickitti-bin"


class _Fail(Exception):
    """A check ran to completion and did not pass."""


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        print(text)


def _table(header: list[str], rows: list[list]) -> str:
    cells = [header] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _set_threads(n: int | None) -> int:
    n = n or dataset_io.default_threads()
    import numba
    numba.set_num_threads(max(1, min(n, numba.config.NUMBA_NUM_THREADS)))
    return n


# generate --------------------------------------------------------------------

def _load_targets(path) -> dict[str, int]:
    doc = yaml.safe_load(Path(path).read_text()) if Path(path).exists() else None
    if isinstance(doc, dict) and "additions" in doc:
        return rebalance.targets_of(rebalance.load_plan(path))
    counts = rebalance.load_counts(path)
    return {c: counts[c] for c in counts.classes()}


def cmd_generate(args) -> None:
    _set_threads(args.threads)
    spec = load_scene(args.scene).with_seed(args.seed)
    targets = _load_targets(args.targets)
    sensor = dict(spec.sensor)
    sensor["rng_seed"] = args.seed
    cfg = SensorConfig.from_dict(sensor)
    prepared = prepare_sequence(spec, targets, args.scans)
    seq_dir = Path(args.out) / args.sequence
    for sub in ("velodyne", "labels"):
        path = seq_dir / sub
        if path.exists():
            shutil.rmtree(path)
    seq_dir.mkdir(parents=True, exist_ok=True)
    counts = []
    for i, pose in enumerate(prepared.poses):
        scan = simulate_scan(prepared.bvh, pose, cfg, i)
        dataset_io.write_scan(scan, *dataset_io.scan_paths(seq_dir, i))
        counts.append(len(scan))
        if not args.json and (i + 1) % 10 == 0:
            print(f"scan {i + 1}/{args.scans}", file=sys.stderr)
    dataset_io.write_poses(seq_dir / dataset_io.POSES_FILE, prepared.poses)
    meta = {
        "format": DATA_FORMAT,
        "taxonomy": spec.taxonomy,
        "scene": spec.name,
        "seed": args.seed,
        "sensor": cfg.to_dict(),
        "targets": dict(sorted(targets.items())),
        "instances": dict(sorted(placement_summary(prepared.placements).items())),
        "scans": args.scans,
    }
    dataset_io.write_meta(seq_dir, meta)
    payload = {"sequence": str(seq_dir), "scans": args.scans, "points_min": min(counts),
               "points_max": max(counts), "instances": meta["instances"]}
    _emit(args, payload, f"wrote {args.scans} scans to {seq_dir} "
                         f"({min(counts)}-{max(counts)} points per scan, "
                         f"{len(prepared.placements)} instances)")


# plan / audit ----------------------------------------------------------------

def _plan_text(p: rebalance.RebalancePlan) -> str:
    rows = [[r["class"], r["baseline"], r["addition"], r["resulting"], "yes" if r["rare"] else ""]
            for r in p.rows()]
    return (_table(["class", "baseline", "addition", "resulting", "rare"], rows)
            + f"\nrare total before: {p.rare_total_before}\nrare total after: {p.rare_total_after}")


def cmd_plan(args) -> None:
    rare = args.rare.split(",") if args.rare else rebalance.DEFAULT_RARE
    p = rebalance.plan(rebalance.load_counts(args.baseline), rebalance.load_counts(args.additions), rare)
    _emit(args, p.to_dict(), _plan_text(p))


def cmd_audit(args) -> None:
    p = rebalance.load_plan(args.plan)
    lm = load_label_map(args.map) if args.map else None
    report = rebalance.audit(args.dataset, p, lm, args.threads)
    rows = [[r.cls, r.baseline, r.addition, r.resulting, r.realized, "MISMATCH" if r.mismatch else "ok"]
            for r in report.rows]
    text = _table(["class", "baseline", "addition", "resulting", "realized", "status"], rows)
    text += f"\nmismatches: {len(report.mismatches)}"
    _emit(args, report.to_dict(), text)
    if not report.ok:
        raise _Fail(f"{len(report.mismatches)} class(es) differ from the plan")


# map-labels ------------------------------------------------------------------

def cmd_map_labels(args) -> None:
    lm = load_label_map(args.map)
    src = Path(args.inp)
    dst = Path(args.out) if args.out else src
    n_files = 0
    for seq in dataset_io.list_sequences(src):
        out_seq = dst / seq.name
        if dst != src:
            shutil.copytree(seq, out_seq, dirs_exist_ok=True)
        for i in dataset_io.scan_indices(seq):
            sem, inst = dataset_io.read_labels(dataset_io.scan_paths(seq, i)[1])
            uni = map_labels(sem, lm)
            words = dataset_io.encode_labels(uni, inst)
            dataset_io.scan_paths(out_seq, i)[1].write_bytes(words.tobytes())
            n_files += 1
        meta = dataset_io.read_meta(out_seq)
        meta["taxonomy"] = "unified"
        meta["mapped_from"] = lm.source.name
        dataset_io.write_meta(out_seq, meta)
    _emit(args, {"files": n_files, "out": str(dst)}, f"mapped {n_files} label files into {dst}")


# augment ---------------------------------------------------------------------

def cmd_augment(args) -> None:
    src, dst = Path(args.inp), Path(args.out)
    if src.resolve() == dst.resolve():
        raise ValueError("augment needs an output directory different from its input")
    n = 0
    for s, seq in enumerate(dataset_io.list_sequences(src)):
        out_seq = dst / seq.name
        out_seq.mkdir(parents=True, exist_ok=True)
        for i in dataset_io.scan_indices(seq):
            scan = dataset_io.read_scan(*dataset_io.scan_paths(seq, i))
            rng = aug.scan_seed(args.seed, s, i)
            if args.op == "dropout":
                scan = aug.random_dropout(scan, args.keep, rng)
            else:
                scan = aug.jitter(scan, args.sigma, args.clip, rng)
            dataset_io.write_scan(scan, *dataset_io.scan_paths(out_seq, i))
            n += 1
        if (seq / dataset_io.POSES_FILE).exists():
            shutil.copyfile(seq / dataset_io.POSES_FILE, out_seq / dataset_io.POSES_FILE)
        meta = dataset_io.read_meta(seq)
        meta["augment"] = ({"op": "dropout", "keep": args.keep, "seed": args.seed} if args.op == "dropout"
                           else {"op": "jitter", "sigma": args.sigma, "clip": args.clip, "seed": args.seed})
        dataset_io.write_meta(out_seq, meta)
    _emit(args, {"scans": n, "op": args.op, "out": str(dst)}, f"{args.op}: wrote {n} scans to {dst}")


# stats / eval ----------------------------------------------------------------

def _map_for(dataset, path):
    if path:
        return load_label_map(path)
    names = {dataset_io.read_meta(s).get("taxonomy") for s in dataset_io.list_sequences(dataset)} - {None}
    return default_label_map(names.pop() if len(names) == 1 else "carla-0.9.15")


def cmd_stats(args) -> None:
    lm = _map_for(args.dataset, args.map)
    st = dataset_io.stats(args.dataset, lm, args.threads)
    inst = st.instance_counts()
    rows = [[name, int(st.points[i]), int(inst[i])] for i, name in enumerate(UNIFIED_CLASSES)]
    text = _table(["class", "points", "instances"], rows)
    text += f"\nscans: {st.n_scans}  ignored points: {st.ignored_points}"
    _emit(args, st.as_dict(), text)


def _eval_pair(gt_seq: Path, pred_seq: Path, i: int, gt_lm, pred_lm) -> ConfusionMatrix:
    g_path = dataset_io.scan_paths(gt_seq, i)[1]
    p_path = dataset_io.scan_paths(pred_seq, i)[1]
    g = map_labels(dataset_io.read_labels(g_path)[0], gt_lm)
    p = map_labels(dataset_io.read_labels(p_path)[0], pred_lm)
    if len(g) != len(p):
        raise ForgeError(f"{g_path} has {len(g)} points but {p_path} has {len(p)}")
    return accumulate(ConfusionMatrix.zeros(), g, p)


def cmd_eval(args) -> None:
    gt_lm = _map_for(args.gt, args.map)
    pred_lm = load_label_map(args.pred_map) if args.pred_map else _map_for(args.pred, args.map)
    gt_seqs = {s.name: s for s in dataset_io.list_sequences(args.gt)}
    pred_seqs = {s.name: s for s in dataset_io.list_sequences(args.pred)}
    if set(gt_seqs) != set(pred_seqs):
        raise ForgeError(f"sequence sets differ: gt {sorted(gt_seqs)} vs pred {sorted(pred_seqs)}")
    jobs = []
    for name in sorted(gt_seqs):
        idx = dataset_io.scan_indices(gt_seqs[name])
        if idx != dataset_io.scan_indices(pred_seqs[name]):
            raise ForgeError(f"sequence {name}: scan counts differ between gt and pred")
        jobs += [(gt_seqs[name], pred_seqs[name], i) for i in idx]
    cm = ConfusionMatrix.zeros()
    with ThreadPoolExecutor(max_workers=args.threads or dataset_io.default_threads()) as pool:
        for part in pool.map(lambda j: _eval_pair(*j, gt_lm, pred_lm), jobs):
            cm = cm + part
    res = iou(cm, exclude_empty=not args.count_empty)
    pct = res.as_percent()
    cells = ["-" if v is None else f"{v:.1f}" for v in pct["per_class"]]
    miou = "-" if pct["miou"] is None else f"{pct['miou']:.1f}"
    text = _table(list(UNIFIED_ABBREV) + ["mIoU"], [cells + [miou]])
    payload = {"iou": {n: (None if np.isnan(v) else float(v)) for n, v in zip(UNIFIED_CLASSES, res.per_class)},
               "miou": res.miou, "miou_percent": pct["miou"], "points": cm.total}
    _emit(args, payload, text)


# csc-check -------------------------------------------------------------------

def cmd_csc_check(args) -> None:
    n = 100 if args.full else 20
    errs = csc.gradient_check(n, seed=args.seed)
    results = {"gradient_instances": n, "gradient_max_rel_error": max(errs),
               "gradient_ok": max(errs) < 1e-4}
    # closed forms: equal logits give ln C, one class gives 0
    c = 5
    cfg = csc.CscConfig(c + 1, c)
    bank = csc.PrototypeBank(csc.REAL, np.eye(c + 1)[:, :c], np.ones(c, bool))
    batch = csc.EmbeddingBatch(np.eye(c + 1)[[c] * 4], [0, 1, 2, 3], csc.REAL)
    uniform = csc.contrastive_loss(batch, bank, cfg)[0]
    cfg1 = csc.CscConfig(3, 1)
    one = csc.contrastive_loss(csc.EmbeddingBatch(np.ones((2, 3)), [0, 0], csc.REAL),
                               csc.PrototypeBank(csc.REAL, np.ones((3, 1)) / np.sqrt(3), [True]), cfg1)[0]
    results["uniform_loss_error"] = abs(uniform - np.log(c))
    results["single_class_loss"] = one
    results["closed_forms_ok"] = results["uniform_loss_error"] <= 1e-12 and one == 0.0
    lines = [f"gradient check: {n} instances, max relative error {max(errs):.3e}",
             f"uniform logits: |loss - ln C| = {results['uniform_loss_error']:.3e}",
             f"single class: loss = {one}"]
    ok = results["gradient_ok"] and results["closed_forms_ok"]
    if args.full:
        rep = csc.toy_alignment_experiment(seed=args.seed)
        results["toy"] = rep.to_dict()
        toy_ok = (rep.aligned.mean_cosine > rep.baseline.mean_cosine
                  and rep.aligned.accuracy >= rep.baseline.accuracy)
        results["toy_ok"] = toy_ok
        ok = ok and toy_ok
        lines.append(_table(["run", "mean cosine", "accuracy"], [
            ["cross-entropy", f"{rep.baseline.mean_cosine:.4f}", f"{rep.baseline.accuracy:.3f}"],
            ["cross-entropy + csc", f"{rep.aligned.mean_cosine:.4f}", f"{rep.aligned.accuracy:.3f}"],
        ]))
    results["ok"] = ok
    lines.append("PASS" if ok else "FAIL")
    _emit(args, results, "\n".join(lines))
    if not ok:
        raise _Fail("csc checks failed")


# parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: RAREBOOST_THREADS or all cores)")

    parser = argparse.ArgumentParser(prog="rareboost-forge", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesize a labelled scan sequence")
    p.add_argument("--scene", required=True, help="scene file or shipped scene name (rural, town, city)")
    p.add_argument("--targets", required=True, help="class counts file, or a plan file (its additions are used)")
    p.add_argument("--scans", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sequence", default="00", help="sequence directory name (default 00)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("plan", parents=[common], help="combine baseline and additions into a plan")
    p.add_argument("--baseline", required=True)
    p.add_argument("--additions", required=True)
    p.add_argument("--rare", help="comma-separated rare classes")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("audit", parents=[common], help="compare realized instance counts with a plan")
    p.add_argument("--dataset", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--map", help="label map (default: from the dataset's taxonomy)")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("map-labels", parents=[common], help="rewrite label files into unified ids")
    p.add_argument("--map", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", help="destination dataset (default: rewrite in place)")
    p.set_defaults(func=cmd_map_labels)

    p = sub.add_parser("augment", parents=[common], help="apply dropout or jitter to every scan")
    p.add_argument("--op", choices=["dropout", "jitter"], required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--keep", type=float, default=0.8)
    p.add_argument("--sigma", type=float, default=0.01)
    p.add_argument("--clip", type=float, default=0.05)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("stats", parents=[common], help="points and instances per unified class")
    p.add_argument("--dataset", required=True)
    p.add_argument("--map", help="label map (default: from the dataset's taxonomy)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", parents=[common], help="per-class IoU and mIoU of predictions")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--map", help="label map for ground truth (default: from its taxonomy)")
    p.add_argument("--pred-map", help="label map for predictions (default: same rule as --map)")
    p.add_argument("--count-empty", action="store_true", help="score zero-union classes as 0 in the mean")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("csc-check", parents=[common], help="gradient checks and the toy alignment run")
    p.add_argument("--full", action="store_true", help="100 gradient instances plus the toy experiment")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_csc_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.threads is not None and args.threads < 1:
        parser.print_usage(sys.stderr)
        print("rareboost-forge: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except _Fail as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ForgeError, ValueError, OSError, yaml.YAMLError) as exc:
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def run(argv=None) -> int:
    return main(argv)


if __name__ == "__main__":
    sys.exit(main())
