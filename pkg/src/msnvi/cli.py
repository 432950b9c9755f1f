"""Experiment runner: train, evaluate, fuse, predict, impute, simulate.

Batch-oriented; every subcommand writes UTF-8 CSVs with header rows and is
byte-reproducible for a fixed seed. Config files are INI-style key = value
sections named after subcommands; command-line flags override file values.
Exit codes: 2 usage error, 3 missing dataset or input file, 4 numerical
abort.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys

import numpy as np

from . import experiments as X
from .beliefs import conflict, pmi, poe_fuse
from .datasets import (
    PendulumScene,
    bob_position,
    data_dir as default_data_dir,
    render_pendulum,
    simulate_sensor_failure,
    stack_records,
)
from .distributions import DiagGaussian, standard_normal
from .errors import (
    ConflictUndefinedError,
    FormatError,
    MsnviError,
    TrainingAbortedError,
)
from .inference import (
    conditional_log_likelihood_batch,
    conditional_predict,
    conflict_monitor,
    markov_chain_impute_batch,
)
from .objectives import KINDS, Objective
from .reports import PALETTE, read_csv, svg_lines, svg_scatter, write_csv
from .training import load_checkpoint, save_checkpoint

EXIT_USAGE = 2
EXIT_MISSING_DATA = 3
EXIT_NUMERICAL = 4


def _parse_sources(text):
    return tuple(int(s) for s in text.split(",")) if text else None


def _parse_belief(text) -> DiagGaussian:
    try:
        mean_s, std_s = text.split(";")
        mean = np.array([float(v) for v in mean_s.split(",")])
        std = np.array([float(v) for v in std_s.split(",")])
    except ValueError:
        raise MsnviError(f"belief spec {text!r} must look like 'm1,m2;s1,s2'")
    return DiagGaussian(mean, std)


def _rng(seed, salt=0):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, salt))))


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(args):
    objective = Objective(args.objective)
    config = X.default_config(
        args.experiment,
        objective,
        seed=args.seed,
        data_dir=args.data_dir,
        **{
            k: v
            for k, v in dict(
                k=args.k,
                iterations=args.iters,
                batch_size=args.batch,
                learning_rate=args.lr,
                train_size=args.train_size,
                dtype=args.dtype,
                sources=_parse_sources(args.sources),
            ).items()
            if v is not None
        },
    )
    bundle, trace = X.run_training(config)
    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "checkpoint.msnvi")
    save_checkpoint(
        bundle,
        None,
        ckpt,
        extra={
            "experiment": config.experiment,
            "objective": config.objective.kind,
            "seed": config.seed,
            "k": config.k,
            "train_size": config.train_size,
        },
    )
    write_csv(os.path.join(args.out, "loss.csv"), ["step", "objective", "value"], trace)
    print(f"trained {config.experiment}/{config.objective.kind}: {ckpt}")
    return 0


def _load_bundle(path):
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    return load_checkpoint(path)


def _test_records(meta, args, test_size=None):
    config = X.default_config(
        meta["experiment"],
        seed=int(meta.get("seed", 0)),
        data_dir=args.data_dir,
        test_size=test_size or args.test_size,
    )
    return X.test_records_for(config)


def cmd_eval(args):
    bundle, _, meta = _load_bundle(args.checkpoint)
    records = _test_records(meta, args)
    kinds = args.kinds.split(",") if args.kinds else None
    rows = X.evaluate_table(bundle, records, kinds=kinds, k=args.k, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "bounds.csv"), ["objective", "negative_bound"], rows)
    for kind, value in rows:
        print(f"{kind:8s} {value:10.4f}")
    return 0


def cmd_fuse(args):
    beliefs = [_parse_belief(b) for b in args.belief]
    dz = beliefs[0].dim
    prior = _parse_belief(args.prior) if args.prior else standard_normal(dz)
    fused = poe_fuse(beliefs, prior)
    os.makedirs(args.out, exist_ok=True)
    write_csv(
        os.path.join(args.out, "fused.csv"),
        ["dim", "mean", "stddev", "variance"],
        [
            (i, fused.mean.data[i], fused.stddev.data[i], fused.stddev.data[i] ** 2)
            for i in range(dz)
        ],
    )
    write_csv(
        os.path.join(args.out, "pmi.csv"),
        ["n_beliefs", "pmi"],
        [(len(beliefs), pmi(beliefs, prior).item())],
    )
    rows = []
    for i, qm in enumerate(beliefs):
        for j, qmp in enumerate(beliefs):
            try:
                rows.append((i, j, conflict(qm, qmp, prior), 0))
            except ConflictUndefinedError:
                rows.append((i, j, float("nan"), 1))
    write_csv(
        os.path.join(args.out, "conflict.csv"),
        ["m", "m_prime", "c", "undefined"],
        rows,
    )
    print(f"fused {len(beliefs)} beliefs -> {args.out}/fused.csv")
    return 0


def cmd_predict(args):
    bundle, _, meta = _load_bundle(args.checkpoint)
    records = _test_records(meta, args)
    record = records[args.record]
    subset = _parse_sources(args.sources) or tuple(sorted(record.sources))
    source_values = {s: record.sources[s] for s in subset}
    targets = (
        [int(t) for t in args.target.split(",")]
        if args.target
        else sorted(bundle.spec.decoders)
    )
    rng = _rng(args.seed, 0x9D)
    cols = ["sample"]
    blocks = []
    for t in targets:
        draws, means = conditional_predict(bundle, source_values, t, args.n, rng)
        dim = draws.shape[1]
        cols += [f"t{t}_draw{j}" for j in range(dim)]
        cols += [f"t{t}_mean{j}" for j in range(dim)]
        blocks.append(np.concatenate([draws, means], axis=1))
    table = np.concatenate(blocks, axis=1)
    rows = [[i] + list(table[i]) for i in range(args.n)]
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "predictions.csv"), cols, rows)

    # scatter of the first two mean columns (coordinate targets) if available
    mean_cols = [c for c in cols if "_mean" in c]
    if len(mean_cols) >= 2:
        ix = [cols.index(mean_cols[0]) - 1, cols.index(mean_cols[1]) - 1]
        pts = table[:, ix]
        svg_scatter(
            os.path.join(args.out, "predictions.svg"),
            [(f"sources {','.join(map(str, subset))}", PALETTE[0], pts)],
            title="conditional predictions",
        )
    print(f"wrote {args.n} samples -> {args.out}/predictions.csv")
    return 0


def cmd_impute(args):
    bundle, _, meta = _load_bundle(args.checkpoint)
    records = _test_records(meta, args, test_size=args.n_records)[: args.n_records]
    sources, _, _ = stack_records(records)
    missing = int(args.missing_source)
    mask = {missing: np.ones(sources[missing].shape[1], dtype=bool)}
    res = markov_chain_impute_batch(
        bundle, mask, sources, args.steps, _rng(args.seed, 0x1A)
    )
    rows = [[s, float(np.mean(res.loglik[s]))] for s in range(args.steps)]
    header = ["step", "chain_loglik"]
    if args.reference:
        ref_bundle, _, _ = _load_bundle(args.reference)
        observed = {m: v for m, v in sources.items() if m != missing}
        ref_ll = conditional_log_likelihood_batch(
            ref_bundle,
            observed,
            missing,
            sources[missing],
            args.n,
            _rng(args.seed, 0x1B),
        )
        ref_mean = float(np.mean(ref_ll))
        header.append("reference_loglik")
        rows = [r + [ref_mean] for r in rows]
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "impute.csv"), header, rows)
    print(f"chain of {args.steps} steps over {len(records)} records -> impute.csv")
    return 0


PENDULUM_SUBSETS = ((0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2))


def _subset_name(subset):
    return "s" + "".join(str(s) for s in subset)


def cmd_pendulum_sim(args):
    bundle, _, meta = _load_bundle(args.checkpoint)
    scene = PendulumScene()
    total = args.rotations * args.steps_per_rotation
    render_rng = _rng(args.seed, 0x3E)
    records = []
    thetas = []
    for t in range(total):
        theta = 2.0 * np.pi * t / args.steps_per_rotation
        rec = render_pendulum(scene, theta, render_rng)
        rec.record_id = t
        if args.fail_sensor is not None and args.fail_at is not None and t >= args.fail_at:
            rec = simulate_sensor_failure(rec, args.fail_sensor, render_rng)
        records.append(rec)
        thetas.append(theta)

    pred_rng = _rng(args.seed, 0x3F)
    header = ["step", "theta", "true_x", "true_y"]
    for subset in PENDULUM_SUBSETS:
        name = _subset_name(subset)
        header += [f"{name}_mean_x", f"{name}_mean_y", f"{name}_std_x", f"{name}_std_y"]
    rows = []
    for t, rec in enumerate(records):
        true = bob_position(scene, thetas[t])[:2]
        row = [t, thetas[t], true[0], true[1]]
        for subset in PENDULUM_SUBSETS:
            vals = {s: rec.sources[s] for s in subset}
            _, means = conditional_predict(bundle, vals, 0, args.n_samples, pred_rng)
            mu = means.mean(axis=0)
            sd = means.std(axis=0)
            row += [mu[0], mu[1], sd[0], sd[1]]
        rows.append(row)
    os.makedirs(args.out, exist_ok=True)
    write_csv(os.path.join(args.out, "pendulum_predictions.csv"), header, rows)

    trace = conflict_monitor(bundle, records)
    m = len(trace.source_ids)
    cheader = ["step", "theta"] + [
        f"c_{a}_{b}" for a in trace.source_ids for b in trace.source_ids if a != b
    ]
    crows = []
    for t in range(total):
        row = [t, thetas[t]]
        for i in range(m):
            for j in range(m):
                if i != j:
                    row.append(trace.values[t, i, j])
        crows.append(row)
    write_csv(os.path.join(args.out, "conflict_trace.csv"), cheader, crows)

    steps = np.arange(total)
    arr = np.array([[float(v) for v in r[1:]] for r in rows])

    def col(name):
        return arr[:, header.index(name) - 1]

    series = [("true x", "#000000", steps, col("true_x"))]
    for si, subset in enumerate(((0,), (1, 2), (0, 1, 2))):
        name = _subset_name(subset)
        series.append((name, PALETTE[si], steps, col(f"{name}_mean_x")))
    bands = [
        (
            PALETTE[1],
            steps,
            col("s12_mean_x") - 2 * col("s12_std_x"),
            col("s12_mean_x") + 2 * col("s12_std_x"),
        )
    ]
    vlines = [args.fail_at] if args.fail_at is not None else []
    svg_lines(
        os.path.join(args.out, "pendulum.svg"),
        series,
        bands=bands,
        title="pendulum x-coordinate predictions",
        xlabel="step",
        ylabel="x",
        vlines=vlines,
    )
    cseries = []
    pairs = [(a, b) for a in trace.source_ids for b in trace.source_ids if a != b]
    for pi, (a, b) in enumerate(pairs):
        cseries.append(
            (f"c({a}||{b})", PALETTE[pi % len(PALETTE)], steps,
             np.nan_to_num(trace.values[:, trace.source_ids.index(a), trace.source_ids.index(b)]))
        )
    svg_lines(
        os.path.join(args.out, "conflict.svg"),
        cseries,
        title="pairwise conflict",
        xlabel="step",
        ylabel="c",
        vlines=vlines,
    )
    print(f"simulated {total} steps -> {args.out}/pendulum_predictions.csv")
    return 0


KNOWN_REPORTS = ("bounds.csv", "loss.csv", "impute.csv", "pendulum_predictions.csv",
                 "conflict_trace.csv", "fused.csv", "pmi.csv")


def cmd_report(args):
    rows = []
    for name in KNOWN_REPORTS:
        path = os.path.join(args.dir, name)
        if not os.path.exists(path):
            continue
        header, data = read_csv(path)
        if name == "bounds.csv":
            for kind, value in data:
                rows.append((name, f"negative_bound[{kind}]", value))
        elif name == "loss.csv" and data:
            rows.append((name, "first_loss", data[0][2]))
            rows.append((name, "last_loss", data[-1][2]))
        elif name == "impute.csv" and data:
            rows.append((name, "chain_final_loglik", data[-1][1]))
            if len(header) > 2:
                rows.append((name, "reference_loglik", data[-1][2]))
        elif name in ("pendulum_predictions.csv", "conflict_trace.csv") and data:
            rows.append((name, "rows", len(data)))
        elif name == "pmi.csv" and data:
            rows.append((name, "pmi", data[0][1]))
        elif name == "fused.csv":
            rows.append((name, "dims", len(data)))
    out = os.path.join(args.dir, "summary.csv")
    write_csv(out, ["source", "metric", "value"], rows)
    for r in rows:
        print(f"{r[0]:28s} {r[1]:28s} {r[2]}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(
        prog="msnvi",
        description="multi-source variational inference experiments",
    )
    p.add_argument("--config", help="INI config; sections named per subcommand")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--data-dir", default=default_data_dir())
        sp.add_argument("--test-size", type=int, default=2000)
        if out:
            sp.add_argument("--out", default="out")

    t = sub.add_parser("train", help="train a model, write checkpoint + loss CSV")
    t.add_argument("--experiment", choices=X.EXPERIMENTS, required=True)
    t.add_argument("--objective", choices=KINDS, default="ind")
    t.add_argument("--k", type=int)
    t.add_argument("--iters", type=int)
    t.add_argument("--batch", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--train-size", type=int)
    t.add_argument("--dtype", choices=("float32", "float64"))
    t.add_argument("--sources", help="comma list; hardwired encoder subset (iwae)")
    common(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="negative bounds per objective on the test set")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--kinds", help="comma list of objectives to evaluate under")
    e.add_argument("--k", type=int, default=16)
    common(e)
    e.set_defaults(fn=cmd_eval)

    f = sub.add_parser("fuse", help="fuse explicit beliefs; emit PMI and conflicts")
    f.add_argument("--belief", action="append", required=True,
                   help="'m1,m2;s1,s2' (repeatable)")
    f.add_argument("--prior", help="same format; defaults to N(0, I)")
    common(f)
    f.set_defaults(fn=cmd_fuse)

    pr = sub.add_parser("predict", help="conditional samples from a source subset")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--sources", help="comma list of observed sources")
    pr.add_argument("--target", help="comma list of target observations")
    pr.add_argument("--record", type=int, default=0)
    pr.add_argument("--n", type=int, default=100)
    common(pr)
    pr.set_defaults(fn=cmd_predict)

    im = sub.add_parser("impute", help="Markov-chain imputation baseline")
    im.add_argument("--checkpoint", required=True, help="hardwired-encoder model")
    im.add_argument("--reference", help="per-source model for the comparison line")
    im.add_argument("--steps", type=int, default=150)
    im.add_argument("--missing-source", type=int, default=3)
    im.add_argument("--n-records", type=int, default=500)
    im.add_argument("--n", type=int, default=100, help="reference latent draws")
    common(im)
    im.set_defaults(fn=cmd_impute)

    ps = sub.add_parser("pendulum-sim", help="rotation sweep with optional failure")
    ps.add_argument("--checkpoint", required=True)
    ps.add_argument("--rotations", type=int, default=3)
    ps.add_argument("--steps-per-rotation", type=int, default=120)
    ps.add_argument("--fail-sensor", type=int)
    ps.add_argument("--fail-at", type=int)
    ps.add_argument("--n-samples", type=int, default=500)
    common(ps)
    ps.set_defaults(fn=cmd_pendulum_sim)

    r = sub.add_parser("report", help="collate CSVs in a directory")
    r.add_argument("--dir", required=True)
    r.set_defaults(fn=cmd_report)

    return p, sub


def _apply_config(parser, sub, argv):
    """Config-file values become subcommand defaults; flags still win."""
    if "--config" not in argv:
        return
    cfg_path = argv[argv.index("--config") + 1]
    command = next((a for a in argv if not a.startswith("-") and a != cfg_path), None)
    cp = configparser.ConfigParser()
    if not cp.read(cfg_path):
        raise FileNotFoundError(cfg_path)
    if command not in cp or command not in sub.choices:
        return
    sp = sub.choices[command]
    defaults = {}
    actions = {a.dest: a for a in sp._actions}
    for key, raw in cp[command].items():
        dest = key.replace("-", "_")
        if dest not in actions:
            continue
        action = actions[dest]
        if isinstance(action, argparse._AppendAction):
            defaults[dest] = [v for v in raw.split("\n") if v]
        elif action.type is not None:
            defaults[dest] = action.type(raw)
        else:
            defaults[dest] = raw
        action.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, sub = build_parser()
    try:
        _apply_config(parser, sub, argv)
        args = parser.parse_args(argv)
        return args.fn(args)
    except (FileNotFoundError, FormatError) as exc:
        print(f"error: missing or unreadable input: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except TrainingAbortedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MsnviError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
