"""Command-line entry point: ``canonsim <subcommand> ...``.

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
Reports go to ``-o PATH`` or standard output (``-o -``).  The
``CSA_THREADS`` environment variable caps BLAS threads (0 = library default).
"""

import argparse
import contextlib
import hashlib
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cca import FeatureMatrix, Fixed, NoDimensionError, Threshold, fit, load_model, project
from .evaluation import (
    EvalReport,
    classify,
    retrieval_metrics,
    robustness_sweep,
    roc_curve,
    s_sweep,
    two_threshold_roc,
)
from .io import encode_feature_file, load_manifest, read_feature_file, write_feature_file, write_manifest
from .similarity import paired_scores, score_matrix
from .synth import (
    SyntheticConfig,
    distance_bound_check,
    fit_pipeline,
    generate,
    make_class_task,
    random_derangement,
    tradeoff_curves,
)


class CliError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"{self.prog}: {message}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def _add_s_rule(p, default_note):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--s-threshold", type=float, metavar="C",
                   help=f"keep dimensions with canonical correlation >= C ({default_note})")
    g.add_argument("--s-fixed", type=int, metavar="K", help="keep exactly the first K canonical dimensions")


def _s_rule(args, default=None):
    if args.s_fixed is not None:
        return Fixed(args.s_fixed)
    if args.s_threshold is not None:
        return Threshold(args.s_threshold)
    return default


def _add_output(p, json_flag=True):
    p.add_argument("-o", "--output", default="-", help="output path, '-' for standard output (default: -)")
    if json_flag:
        p.add_argument("--json", action="store_true", help="write the report as JSON instead of key: value text")


def _add_eval_common(p):
    p.add_argument("model", help="model file written by 'fit'")
    p.add_argument("manifest", help="dataset manifest (JSON)")
    p.add_argument("--split", choices=("test", "train"), default="test", help="manifest split to evaluate (default: test)")
    p.add_argument("--policy", choices=("error", "zero"), default="error",
                   help="degenerate (zero-norm) projected vectors: abort or score 0 (default: error)")
    _add_s_rule(p, "default: the model's stored s")


def build_parser():
    parser = _Parser(prog="canonsim", description="Canonical similarity analysis between two embedding spaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit a CSA model on the training split of a manifest")
    p.add_argument("manifest", help="dataset manifest (JSON)")
    p.add_argument("-o", "--output", required=True, help="model file to write")
    p.add_argument("--eps", type=float, default=1e-6, help="relative ridge added to each covariance (default: 1e-6)")
    _add_s_rule(p, "default: 0.05")
    p.add_argument("--report", default=None, help="optional path for a fit summary report ('-' for standard output)")

    p = sub.add_parser("score", help="score every modality-1 item against every modality-2 item of a split")
    _add_eval_common(p)
    p.add_argument("-o", "--output", default="-", help="output path, '-' for standard output (default: -)")
    p.add_argument("--format", choices=("text", "binary"), default="text",
                   help="delimited text with ids, or a CSAF float64 file with one item per row (default: text)")
    p.add_argument("--delimiter", default=",", help="text column delimiter (default: ',')")

    p = sub.add_parser("classify", help="zero-shot classification against class caption features")
    _add_eval_common(p)
    p.add_argument("--classes", required=True, help="CSAF file of modality-2 class features; ids are class labels")
    _add_output(p)

    p = sub.add_parser("retrieve", help="cross-modal retrieval precision@1, precision@k and mAP@k")
    _add_eval_common(p)
    p.add_argument("--k", type=int, default=5, help="retrieval cutoff (default: 5)")
    p.add_argument("--direction", choices=("1to2", "2to1"), default="1to2",
                   help="query modality to reference modality (default: 1to2)")
    p.add_argument("--relevance", choices=("pair", "label"), default="pair",
                   help="relevant items: the paired item, or all items sharing the query's label (default: pair)")
    p.add_argument("--strict", action="store_true", help="error on queries with no relevant item instead of skipping")
    _add_output(p)

    p = sub.add_parser("detect", help="ROC/AUC for telling aligned pairs from misaligned ones")
    _add_eval_common(p)
    p.add_argument("--seed", type=int, default=0,
                   help="seed for shuffled negatives when the split has no 'aligned' flags (default: 0)")
    p.add_argument("--two-threshold", action="store_true",
                   help="misinformation mode: flag items whose pair score AND second score fall below thresholds")
    p.add_argument("--second-scores", default=None,
                   help="CSAF file (dim 1) of caption-caption scores keyed by pair id; required with --two-threshold")
    _add_output(p)

    p = sub.add_parser("sweep", help="classification accuracy for every s in 1..r")
    _add_eval_common(p)
    p.add_argument("--classes", required=True, help="CSAF file of modality-2 class features; ids are class labels")
    _add_output(p)

    p = sub.add_parser("robustness", help="accuracy after shuffling fractions of the training pairs")
    p.add_argument("manifest", help="dataset manifest (JSON) with train and test splits and labels")
    p.add_argument("--classes", required=True, help="CSAF file of modality-2 class features; ids are class labels")
    p.add_argument("--fractions", type=_float_list, default=[0.0, 0.25, 0.5, 0.75, 1.0],
                   help="comma-separated shuffle fractions (default: 0,0.25,0.5,0.75,1)")
    p.add_argument("--repeats", type=int, default=10, help="independent shuffles per fraction (default: 10)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--eps", type=float, default=1e-6, help="relative covariance ridge (default: 1e-6)")
    _add_s_rule(p, "default: 0.05")
    _add_output(p)

    synth = sub.add_parser("synth", help="synthetic latent-factor experiments")
    ssub = synth.add_subparsers(dest="synth_command", required=True, parser_class=_Parser)
    for name, help_text in (
        ("tradeoff", "SNR, smallest singular value and paired-vs-shuffled p-value per s"),
        ("bound", "check the distance lower bound on random pairs for several s"),
        ("task", "write a labeled synthetic dataset bundle (features, classes, manifest)"),
    ):
        p = ssub.add_parser(name, help=help_text)
        p.add_argument("--q", type=int, default=10, help="latent dimension (default: 10)")
        p.add_argument("--p1", type=int, default=40, help="modality-1 observed dimension (default: 40)")
        p.add_argument("--p2", type=int, default=60, help="modality-2 observed dimension (default: 60)")
        p.add_argument("--n", type=int, default=2000, help="number of (training) pairs (default: 2000)")
        p.add_argument("--noise-sigma", type=float, default=1.0, help="observation noise std (default: 1.0)")
        p.add_argument("--latent-sigma", type=float, default=1.0, help="latent std (default: 1.0)")
        p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
        if name == "tradeoff":
            p.add_argument("--s-grid", type=_int_list, default=None, help="comma-separated s values (default: 1..q)")
            p.add_argument("--delimiter", default=",", help="column delimiter (default: ',')")
            _add_output(p, json_flag=False)
        elif name == "bound":
            p.add_argument("--s-grid", type=_int_list, default=None, help="comma-separated s values (default: 1,q/2,q)")
            p.add_argument("--pairs", type=int, default=1000, help="random pairs per modality (default: 1000)")
            _add_output(p)
        else:
            p.add_argument("--out-dir", required=True, help="directory to write the bundle into")
            p.add_argument("--n-test", type=int, default=1000, help="number of test pairs (default: 1000)")
            p.add_argument("--n-classes", type=int, default=10, help="number of latent classes (default: 10)")
            p.add_argument("--class-sep", type=float, default=1.0, help="class-mean std (default: 1.0)")
            p.add_argument("--dtype", choices=("float32", "float64"), default="float64",
                           help="feature file precision (default: float64)")
    return parser


@contextlib.contextmanager
def _open_out(path, binary=False):
    if path == "-":
        yield sys.stdout.buffer if binary else sys.stdout
        if not binary:
            sys.stdout.flush()
    else:
        with open(path, "wb" if binary else "w", encoding=None if binary else "utf-8", newline=None if binary else "\n") as f:
            yield f


def _emit(report, args):
    with _open_out(args.output) as f:
        f.write(report.to_json() if getattr(args, "json", False) else report.to_text())


def _load_eval(args):
    model = load_model(args.model)
    rule = _s_rule(args)
    if rule is not None:
        model = model.with_s(rule)
    manifest = load_manifest(args.manifest)
    split = getattr(manifest, args.split)
    if split is None:
        raise CliError(f"manifest {args.manifest} has no {args.split} split")
    header = {
        "model_sha256": _digest(args.model),
        "manifest_sha256": _digest(args.manifest),
        "split": args.split,
        "n_pairs": split.n_pairs,
        "r": model.r,
        "s": model.s,
        "eps": model.eps,
    }
    return model, manifest, split, header


def _class_truth(split, classes, manifest_path):
    if split.labels is None:
        raise CliError(f"{manifest_path}: every evaluated pair needs a 'label'")
    index = {ident: i for i, ident in enumerate(classes.ids)}
    truth = []
    for key, label in zip(split.z1.ids, split.labels):
        if str(label) not in index:
            raise CliError(f"pair {key!r}: label {label!r} is not an id in the classes file")
        truth.append(index[str(label)])
    return np.array(truth)


def cmd_fit(args):
    manifest = load_manifest(args.manifest)
    model = fit(manifest.train.z1, manifest.train.z2, eps=args.eps, s_rule=_s_rule(args, Threshold()))
    model.save(args.output)
    if args.report:
        rho = model.rho
        report = EvalReport(
            metrics={"d1": model.d1, "d2": model.d2, "r": model.r, "s": model.s, "eps": model.eps,
                     "rho_1": float(rho[0]), "rho_s": float(rho[model.s - 1]), "rho_r": float(rho[-1])},
            header={"manifest_sha256": _digest(args.manifest), "model_sha256": _digest(args.output),
                    "n_train": manifest.train.n_pairs},
        )
        with _open_out(args.report) as f:
            f.write(report.to_text())
    return 0


def cmd_score(args):
    model, _, split, header = _load_eval(args)
    u = project(model, 1, split.z1)
    v = project(model, 2, split.z2)
    sm = score_matrix(u, v, model.rho, model.s, args.policy, row_ids=split.id1, col_ids=split.id2)
    if args.format == "binary":
        blob = encode_feature_file(FeatureMatrix(sm.scores.T, sm.row_ids), "float64")
        with _open_out(args.output, binary=True) as f:
            f.write(blob)
    else:
        lines = [f"{k}: {v}" for k, v in header.items()]
        with _open_out(args.output) as f:
            f.write(sm.to_text(args.delimiter, header=lines))
    return 0


def cmd_classify(args):
    model, _, split, header = _load_eval(args)
    classes = read_feature_file(args.classes)
    truth = _class_truth(split, classes, args.manifest)
    header["classes_sha256"] = _digest(args.classes)
    sm = score_matrix(project(model, 1, split.z1), project(model, 2, classes), model.rho, model.s, args.policy)
    acc, pred = classify(sm, truth)
    table = [{"id": k, "truth": classes.ids[t], "predicted": classes.ids[p]} for k, t, p in zip(split.z1.ids, truth, pred)]
    _emit(EvalReport({"accuracy": acc, "n_classes": classes.n_items}, header, table), args)
    return 0


def cmd_retrieve(args):
    model, _, split, header = _load_eval(args)
    sm = score_matrix(project(model, 1, split.z1), project(model, 2, split.z2), model.rho, model.s, args.policy)
    if args.relevance == "pair":
        rel = np.eye(split.n_pairs, dtype=bool)
    else:
        if split.labels is None:
            raise CliError("--relevance label needs a 'label' on every evaluated pair")
        labels = np.array([str(x) for x in split.labels])
        rel = labels[:, None] == labels[None, :]
    scores = sm.scores
    if args.direction == "2to1":
        scores, rel = scores.T, rel.T
    rep = retrieval_metrics(scores, rel, k=args.k, strict=args.strict)
    header.update(direction=args.direction, relevance=args.relevance)
    metrics = {"k": rep.k, "precision_at_1": rep.precision_at_1, "precision_at_k": rep.precision_at_k,
               "map_at_k": rep.map_at_k, "n_queries": rep.n_queries, "skipped_queries": rep.skipped}
    _emit(EvalReport(metrics, header), args)
    return 0


def cmd_detect(args):
    model, _, split, header = _load_eval(args)
    u = project(model, 1, split.z1)
    v = project(model, 2, split.z2)
    pair = paired_scores(u, v, model.rho, model.s, args.policy)
    if args.two_threshold:
        if args.second_scores is None:
            raise CliError("--two-threshold requires --second-scores")
        if split.aligned is None:
            raise CliError("--two-threshold needs an 'aligned' flag on every evaluated pair")
        second = read_feature_file(args.second_scores)
        if second.dim != 1:
            raise CliError(f"{args.second_scores}: expected one score per item (dim 1), got dim {second.dim}")
        index = {ident: i for i, ident in enumerate(second.ids)}
        missing = [k for k in split.z1.ids if k not in index]
        if missing:
            raise CliError(f"{args.second_scores}: no score for pair id {missing[0]!r}")
        cap = second.values[0, [index[k] for k in split.z1.ids]]
        labels = 1 - np.array(split.aligned)
        roc = two_threshold_roc(pair, cap, labels)
        header.update(mode="two-threshold", positive="misinformative")
    elif split.aligned is not None:
        roc = roc_curve(pair, np.array(split.aligned))
        header.update(mode="aligned-flags", positive="aligned")
    else:
        partner = random_derangement(split.n_pairs, np.random.default_rng(args.seed))
        neg = paired_scores(u, v[:, partner], model.rho, model.s, args.policy)
        roc = roc_curve(np.r_[pair, neg], np.r_[np.ones(len(pair), int), np.zeros(len(neg), int)])
        header.update(mode="shuffled-negatives", positive="aligned", seed=args.seed)
    table = [{"fpr": f, "tpr": t} for f, t in roc.points]
    _emit(EvalReport({"auc": roc.auc, "n_points": len(roc.points)}, header, table), args)
    return 0


def cmd_sweep(args):
    model, _, split, header = _load_eval(args)
    classes = read_feature_file(args.classes)
    truth = _class_truth(split, classes, args.manifest)
    rows, best = s_sweep(model, split.z1, classes, truth)
    header["classes_sha256"] = _digest(args.classes)
    metrics = {"best_s": best, "accuracy": rows[best - 1]["accuracy"]}
    _emit(EvalReport(metrics, header, rows), args)
    return 0


def cmd_robustness(args):
    manifest = load_manifest(args.manifest)
    if manifest.test is None:
        raise CliError(f"{args.manifest}: robustness needs a test split")
    classes = read_feature_file(args.classes)
    truth = _class_truth(manifest.test, classes, args.manifest)
    rows = robustness_sweep(manifest.train.z1, manifest.train.z2, manifest.test.z1, classes, truth,
                            args.fractions, args.seed, repeats=args.repeats, eps=args.eps, s_rule=_s_rule(args))
    header = {"manifest_sha256": _digest(args.manifest), "classes_sha256": _digest(args.classes),
              "seed": args.seed, "eps": args.eps, "repeats": args.repeats,
              "chance": 1.0 / classes.n_items}
    _emit(EvalReport({}, header, rows), args)
    return 0


def _synth_config(args, n=None):
    return SyntheticConfig(q=args.q, p1=args.p1, p2=args.p2, n=args.n if n is None else n,
                           noise_sigma=args.noise_sigma, latent_sigma=args.latent_sigma, seed=args.seed)


def _synth_header(cfg):
    return [f"{k}: {getattr(cfg, k)}" for k in ("q", "p1", "p2", "n", "noise_sigma", "latent_sigma", "seed")]


def cmd_synth_tradeoff(args):
    cfg = _synth_config(args)
    rows = tradeoff_curves(cfg, args.s_grid)
    d = args.delimiter
    lines = [f"# {h}" for h in _synth_header(cfg)]
    lines.append(d.join(("s", "snr_db", "lambda_min_db", "p_value")))
    for r in rows:
        lines.append(d.join((str(r.s), repr(r.snr_db), repr(r.lambda_min_db), repr(r.p_value))))
    with _open_out(args.output) as f:
        f.write("\n".join(lines) + "\n")
    return 0


def cmd_synth_bound(args):
    cfg = _synth_config(args)
    ds = generate(cfg)
    pipe = fit_pipeline(ds, cfg.q)
    grid = args.s_grid or sorted({1, max(1, cfg.q // 2), cfg.q})
    table = []
    for s in grid:
        rep = distance_bound_check(ds, pipe, s, n_pairs=args.pairs, seed=args.seed)
        table.append({"s": s, "sigma_min_1": rep.sigma_min[0], "sigma_min_2": rep.sigma_min[1],
                      "sigma_min_signal_1": rep.sigma_min_signal[0], "sigma_min_signal_2": rep.sigma_min_signal[1],
                      "min_slack_1": rep.min_slack[0], "min_slack_2": rep.min_slack[1],
                      "min_slack_signal_1": rep.min_slack_signal[0], "min_slack_signal_2": rep.min_slack_signal[1],
                      "passed": int(rep.passed)})
    header = dict(line.split(": ", 1) for line in _synth_header(cfg))
    _emit(EvalReport({"all_passed": int(all(r["passed"] for r in table))}, header, table), args)
    return 0


def cmd_synth_task(args):
    cfg = _synth_config(args)
    task = make_class_task(cfg, n_classes=args.n_classes, n_test=args.n_test, class_sep=args.class_sep)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    z1 = FeatureMatrix(np.hstack([task.train1.values, task.test1.values]), task.train1.ids + task.test1.ids)
    z2 = FeatureMatrix(np.hstack([task.train2.values, task.test2.values]),
                       tuple(f"cap{k[4:]}" for k in task.train2.ids + task.test2.ids))
    write_feature_file(out / "modality1.csaf", z1, args.dtype)
    write_feature_file(out / "modality2.csaf", z2, args.dtype)
    write_feature_file(out / "classes.csaf", task.prototypes, args.dtype)
    labels = np.r_[task.train_labels, task.test_labels]
    pairs = [
        {"id1": a, "id2": b, "split": "train" if i < cfg.n else "test", "label": f"class{labels[i]}"}
        for i, (a, b) in enumerate(zip(z1.ids, z2.ids))
    ]
    meta = {"generator": "latent-factor class task", **{k: str(v) for k, v in vars(cfg).items()},
            "n_test": str(args.n_test), "n_classes": str(args.n_classes), "class_sep": str(args.class_sep)}
    write_manifest(out / "manifest.json", "modality1.csaf", "modality2.csaf", pairs, name="synthetic-task", metadata=meta)
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "score": cmd_score,
    "classify": cmd_classify,
    "retrieve": cmd_retrieve,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "robustness": cmd_robustness,
    ("synth", "tradeoff"): cmd_synth_tradeoff,
    ("synth", "bound"): cmd_synth_bound,
    ("synth", "task"): cmd_synth_task,
}


def _thread_limit():
    raw = os.environ.get("CSA_THREADS", "0")
    try:
        n = int(raw)
    except ValueError as exc:
        raise CliError(f"CSA_THREADS must be an integer, got {raw!r}") from exc
    if n < 0:
        raise CliError("CSA_THREADS must be >= 0")
    if n == 0:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def run(argv=None):
    """Parse `argv` and execute; returns the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        key = (args.command, args.synth_command) if args.command == "synth" else args.command
        with _thread_limit():
            return COMMANDS[key](args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ArithmeticError, NoDimensionError) as exc:
        print(f"canonsim: numerical failure: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, KeyError) as exc:
        print(f"canonsim: error: {exc}", file=sys.stderr)
        return 1


def main():
    sys.exit(run())
