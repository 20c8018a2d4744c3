"""Command-line entry point: ``clime <subcommand> ...``.

Every subcommand writes into ``--out`` and records a ``manifest.json`` with
the artifact paths and a hash of the effective configuration. Exit code 2
means a contract/usage error, 3 a numeric or solver failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import boundary as bnd
from .activations import parse_activation
from .conv import ConvTeacher
from .data import bbox_of, filter_classes, load_named, make_circles, make_moons, train_test_split
from .distill import (GridSpec, LogitCache, cache_logits, consistency, distill_student, grid_search,
                      train_teacher, write_confusion_csv)
from .dnet import DNet, build_dnet, dnet_accuracy, dnet_agreement, dnet_predict
from .errors import ContractError, NumericError
from .linearize import gap_report, linearize_network
from .nn import Network, TrainConfig, accuracy, parse_arch, saliency, train
from .regions import explain

log = logging.getLogger("clime")


# helpers ---------------------------------------------------------------------

def _floats(s):
    return [float(v) for v in str(s).split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in str(s).split(",") if v.strip()]


def load_datasets(args):
    """``(train, test)`` for the dataset named by the flags."""
    name = args.dataset.lower()
    if name in ("moons", "circles"):
        if name == "moons":
            ds = make_moons(args.n_samples, args.noise, seed=args.data_seed)
        else:
            ds = make_circles(args.n_samples, args.noise, args.factor, seed=args.data_seed)
        train_ds, test_ds = train_test_split(ds, args.test_fraction, seed=args.data_seed)
    else:
        train_ds = load_named(name, "train", args.data_dir)
        test_ds = load_named(name, "test", args.data_dir)
    if getattr(args, "classes", None):
        keep = _ints(args.classes)
        train_ds, test_ds = filter_classes(train_ds, keep), filter_classes(test_ds, keep)
    return train_ds, test_ds


def load_model(path):
    path = str(path)
    if path.endswith(".npz"):
        return ConvTeacher.load(path)
    return Network.load(path)


def load_input(args, dim):
    spec = args.input
    if spec is None:
        if getattr(args, "index", None) is None:
            raise ContractError("give --input or --dataset with --index")
        train_ds, test_ds = load_datasets(args)
        return test_ds.features[args.index]
    p = Path(spec)
    if p.suffix == ".npy" and p.exists():
        x = np.load(p)
    elif p.suffix == ".json" and p.exists():
        x = np.asarray(json.loads(p.read_text()), dtype=np.float64)
    else:
        x = np.asarray(_floats(spec))
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != dim:
        raise ContractError(f"input has {x.size} values, model expects {dim}")
    return x


class Run:
    """Collects artifacts for the manifest."""

    def __init__(self, args):
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
        self.config = cfg
        self.config_hash = hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()
        self.artifacts = {}

    def path(self, key, name):
        p = self.out / name
        self.artifacts[key] = str(p)
        return p

    def write_json(self, key, name, obj):
        p = self.path(key, name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True))
        return p

    def finish(self, command):
        (self.out / "manifest.json").write_text(json.dumps({
            "command": command,
            "config": self.config,
            "config_hash": self.config_hash,
            "artifacts": self.artifacts,
        }, indent=2, sort_keys=True, default=str))


def emit(obj):
    print(json.dumps(obj, sort_keys=True), flush=True)


# subcommands -------------------------------------------------------------------

def cmd_train(args):
    dims = parse_arch(args.arch)
    train_ds, test_ds = load_datasets(args)
    if dims[0] != train_ds.dim:
        raise ContractError(f"architecture input {dims[0]} != dataset dimension {train_ds.dim}")
    run = Run(args)
    net = Network.mlp(dims, parse_activation(args.activation), seed=args.seed)
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs, seed=args.seed,
                      optimizer=args.optimizer)
    net, history = train(net, train_ds.features, train_ds.labels, cfg, on_epoch=lambda m, r: emit(r))
    net.save(run.path("model", "model.json"))
    final = {"train_accuracy": accuracy(net, train_ds.features, train_ds.labels),
             "test_accuracy": accuracy(net, test_ds.features, test_ds.labels)}
    run.write_json("metrics", "metrics.json", {"history": history, **final})
    emit(final)
    run.finish("train")


def cmd_linearize(args):
    net = Network.load(args.model)
    run = Run(args)
    reports = []
    data = load_datasets(args)[1] if args.dataset else None
    for n in _ints(args.segments):
        plnn = linearize_network(net, n)
        plnn.save(run.path(f"plnn_{n}", f"plnn_n{n}.json"))
        if data is not None:
            rep = gap_report(net, plnn, data.features, data.labels, n)
            reports.append(rep)
            emit(rep)
    if reports:
        name = Path(args.report).name if args.report else "gap_report.json"
        run.write_json("report", name, reports if len(reports) > 1 else reports[0])
    run.finish("linearize")


def cmd_explain(args):
    plnn = Network.load(args.model)
    x = load_input(args, plnn.input_dim)
    ex = explain(plnn, x, prune=args.prune)
    run = Run(args)
    run.path("explanation", "explanation.json").write_text(ex.to_json())
    emit({"pattern_size": len(ex.pattern.flat()), "constraints": int(ex.region.A.shape[0]),
          "logits": ex.affine(x).tolist()})
    run.finish("explain")


def cmd_boundary(args):
    plnn = Network.load(args.model)
    train_ds, _ = load_datasets(args)
    run = Run(args)
    queries = train_ds.features
    pairs = "all" if args.all_pairs else None
    summary = {}
    if plnn.input_dim == 2:
        bbox = bbox_of(train_ds.features)
        if args.grid:
            grid = bnd.grid_boundary_2d(plnn, bbox, args.grid)
            # the oracle's cell centers double as queries so no oracle-visible region goes unvisited
            queries = np.vstack([queries, np.column_stack([a.ravel() for a in np.meshgrid(grid.xs, grid.ys)])])
        pieces = bnd.enumerate_boundaries(plnn, queries, pairs)
        bnd.write_segments_csv(run.path("pieces", "pieces.csv"), pieces, bbox)
        if args.grid:
            bnd.write_grid_csv(run.path("grid", "grid.csv"), grid)
            summary["hausdorff_cells"] = bnd.hausdorff_cells(pieces, grid, bbox)
        summary["bbox"] = list(bbox)
    else:
        pieces = bnd.enumerate_boundaries(plnn, queries, pairs)
    run.write_json("planes", "planes.json", [
        {"normal": p.plane.normal.tolist(), "offset": p.plane.offset, "class_pair": list(p.plane.class_pair),
         "witness": p.witness.tolist(), "region": p.pattern_digest} for p in pieces])
    summary["pieces"] = len(pieces)
    run.write_json("summary", "summary.json", summary)
    emit(summary)
    run.finish("boundary")


def cmd_dnet_build(args):
    net = Network.load(args.model)
    train_ds, _ = load_datasets(args)
    run = Run(args)
    plnn = linearize_network(net, args.segments) if any(
        not l.activation.is_piecewise_linear for l in net.layers) else net
    pieces = bnd.enumerate_boundaries(plnn, train_ds.features)
    dn = build_dnet(pieces, train_ds.features, train_ds.labels, plnn, label_source=args.label_source,
                    fallback_path=str(Path(args.model).resolve()))
    dn.save(run.path("dnet", "dnet.json"))
    summary = {"planes": dn.width, "states": dn.stats["states"], "conflicts": dn.stats["conflicts"]}
    run.write_json("summary", "summary.json", summary)
    emit(summary)
    run.finish("dnet build")


def cmd_dnet_predict(args):
    dn = DNet.load(args.dnet)
    x = load_input(args, dn.planes.shape[1])
    label, source = dnet_predict(dn, x)
    emit({"label": label, "source": source})


def cmd_dnet_eval(args):
    dn = DNet.load(args.dnet)
    train_ds, test_ds = load_datasets(args)
    run = Run(args)
    res = {}
    for name, ds in (("train", train_ds), ("test", test_ds)):
        res[f"{name}_accuracy"] = dnet_accuracy(dn, ds.features, ds.labels)
        res[f"{name}_agreement"] = dnet_agreement(dn, dn.fallback, ds.features)
        res[f"{name}_original_accuracy"] = accuracy(dn.fallback, ds.features, ds.labels)
    res.update({k: v for k, v in dn.stats.items()})
    run.write_json("eval", "dnet_eval.json", res)
    emit(res)
    run.finish("dnet eval")


def _train_config(args, epochs=None):
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch,
                       epochs=args.epochs if epochs is None else epochs, seed=args.seed)


def cmd_distill_teacher(args):
    train_ds, test_ds = load_datasets(args)
    run = Run(args)
    teacher, rep = train_teacher(train_ds, _train_config(args), test_ds)
    teacher.save(run.path("teacher", "teacher.npz"))
    cache_logits(teacher, train_ds).save(run.path("train_logits", "train_logits.clgc"))
    cache_logits(teacher, test_ds).save(run.path("test_logits", "test_logits.clgc"))
    run.write_json("report", "teacher_report.json", rep)
    emit({"test_accuracy": rep["test_accuracy"]})
    run.finish("distill teacher")


def _caches(args, train_ds, test_ds):
    teacher = ConvTeacher.load(args.teacher)
    base = Path(args.teacher).parent
    train_cache = LogitCache.load(args.train_logits or base / "train_logits.clgc", train_ds, teacher)
    test_cache = LogitCache.load(args.test_logits or base / "test_logits.clgc", test_ds, teacher)
    return teacher, train_cache, test_cache


def cmd_distill_student(args):
    train_ds, test_ds = load_datasets(args)
    teacher, cache, tcache = _caches(args, train_ds, test_ds)
    run = Run(args)
    student, history = distill_student(args.arch, train_ds, cache, args.alpha, args.temperature,
                                       _train_config(args), test_ds, tcache)
    student.save(run.path("student", "student.json"))
    run.write_json("history", "student_history.json", history)
    emit(history[-1] if history else {})
    run.finish("distill student")


def cmd_distill_grid(args):
    train_ds, test_ds = load_datasets(args)
    teacher, cache, tcache = _caches(args, train_ds, test_ds)
    run = Run(args)
    spec = GridSpec(_floats(args.lrs), _ints(args.batches), _floats(args.alphas), _floats(args.temps))
    res = grid_search(spec, train_ds, cache, args.arch, args.screen_epochs, args.epochs, test_ds, tcache,
                      seed=args.seed, threads=args.threads)
    res.write_csv(run.path("grid", "grid_report.csv"))
    res.student.save(run.path("student", "student.json"))
    run.write_json("best", "best.json", {"best": res.best, "history": res.history})
    emit({"best": res.best, "final": res.history[-1] if res.history else {}})
    run.finish("distill grid")


def cmd_distill_consistency(args):
    _, test_ds = load_datasets(args)
    student = load_model(args.student)
    teacher = load_model(args.teacher)
    X = test_ds.features
    if args.samples:
        rng = np.random.default_rng(args.seed)
        X = X[np.sort(rng.choice(len(X), size=min(args.samples, len(X)), replace=False))]
    run = Run(args)
    frac, matrix = consistency(student, teacher, X)
    write_confusion_csv(run.path("confusion", "confusion.csv"), matrix, class_names=test_ds.class_names)
    run.write_json("consistency", "consistency.json", {"consistency": frac, "samples": int(len(X))})
    emit({"consistency": frac, "samples": int(len(X))})
    run.finish("distill consistency")


def cmd_saliency(args):
    net = Network.load(args.model)
    x = load_input(args, net.input_dim)
    cls = args.class_index if args.class_index is not None else int(net.predict(x)[0])
    sal = saliency(net, x, cls)
    run = Run(args)
    run.write_json("saliency", "saliency.json", {"class": cls, "saliency": sal.tolist()})
    emit({"class": cls, "l1": float(np.abs(sal).sum())})
    run.finish("saliency")


# parser ------------------------------------------------------------------------

def _common(p, dataset=True):
    p.add_argument("--out", default="out")
    p.add_argument("--config", help="JSON file of flag values; explicit flags win")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    if dataset:
        p.add_argument("--dataset", default="moons", help="moons, circles, mnist or fashionmnist")
        p.add_argument("--data-dir", default=None, help="root holding the IDX files (else $CLIME_DATA_DIR)")
        p.add_argument("--classes", default=None, help="comma list of classes to keep, relabelled in order")
        p.add_argument("--n-samples", type=int, default=10000)
        p.add_argument("--noise", type=float, default=0.05)
        p.add_argument("--factor", type=float, default=0.5)
        p.add_argument("--data-seed", type=int, default=0)
        p.add_argument("--test-fraction", type=float, default=0.2)


def _training(p, lr=3e-3, batch=128, epochs=30):
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--epochs", type=int, default=epochs)


def _input(p):
    p.add_argument("--input", default=None, help="comma list, .json or .npy vector")
    p.add_argument("--index", type=int, default=None, help="row of the test split to use instead")


def build_parser():
    parser = argparse.ArgumentParser(prog="clime", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    leaves = {}

    p = sub.add_parser("train", help="train an MLP")
    _common(p)
    _training(p)
    p.add_argument("--arch", required=True, help="d0-d1-...-dk")
    p.add_argument("--activation", default="relu")
    p.add_argument("--optimizer", default="adam", choices=["adam", "sgd"])
    p.set_defaults(func=cmd_train)
    leaves["train"] = p

    p = sub.add_parser("linearize", help="replace smooth activations by piecewise-linear ones")
    _common(p)
    p.set_defaults(dataset=None)
    p.add_argument("--model", required=True)
    p.add_argument("--segments", default="3", help="piece count(s), e.g. 2,3,5")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_linearize)
    leaves["linearize"] = p

    p = sub.add_parser("explain", help="exact affine explanation at a point")
    _common(p)
    _input(p)
    p.add_argument("--model", required=True)
    p.add_argument("--prune", action="store_true", help="drop redundant polytope rows")
    p.set_defaults(func=cmd_explain)
    leaves["explain"] = p

    p = sub.add_parser("boundary", help="decision-boundary pieces of a PLNN")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--grid", type=int, default=0, help="2-D oracle resolution (0 = off)")
    p.add_argument("--all-pairs", action="store_true")
    p.set_defaults(func=cmd_boundary)
    leaves["boundary"] = p

    p = sub.add_parser("dnet", help="DecisionNet build / predict / eval")
    dsub = p.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("build")
    _common(q)
    q.add_argument("--model", required=True)
    q.add_argument("--segments", type=int, default=3, help="pieces used if the model is not yet piecewise-linear")
    q.add_argument("--label-source", default="model", choices=["model", "labels"])
    q.set_defaults(func=cmd_dnet_build)
    leaves["dnet build"] = q
    q = dsub.add_parser("predict")
    _common(q, dataset=True)
    _input(q)
    q.add_argument("--dnet", required=True)
    q.set_defaults(func=cmd_dnet_predict)
    leaves["dnet predict"] = q
    q = dsub.add_parser("eval")
    _common(q)
    q.add_argument("--dnet", required=True)
    q.set_defaults(func=cmd_dnet_eval)
    leaves["dnet eval"] = q

    p = sub.add_parser("distill", help="teacher / student / grid / consistency")
    dsub = p.add_subparsers(dest="action", required=True)
    q = dsub.add_parser("teacher")
    _common(q)
    _training(q, lr=1e-3, batch=128, epochs=10)
    q.set_defaults(func=cmd_distill_teacher, dataset="mnist")
    leaves["distill teacher"] = q
    for name, fn in (("student", cmd_distill_student), ("grid", cmd_distill_grid)):
        q = dsub.add_parser(name)
        _common(q)
        _training(q, lr=1e-3, batch=128, epochs=20)
        q.add_argument("--teacher", required=True, help="teacher.npz from 'distill teacher'")
        q.add_argument("--train-logits", default=None)
        q.add_argument("--test-logits", default=None)
        q.add_argument("--arch", default="784-256-64-10")
        if name == "student":
            q.add_argument("--alpha", type=float, default=0.5)
            q.add_argument("--temperature", type=float, default=5.0)
        else:
            q.add_argument("--lrs", default="1e-5,3e-5,5e-5,8e-5,1e-4,3e-4,5e-4,8e-4,1e-3,3e-3,5e-3,8e-3,1e-2")
            q.add_argument("--batches", default="32,64,128,256")
            q.add_argument("--alphas", default="0.5,0.9,0.95")
            q.add_argument("--temps", default="1,3,5,10,20")
            q.add_argument("--screen-epochs", type=int, default=5)
        q.set_defaults(func=fn, dataset="mnist")
        leaves[f"distill {name}"] = q
    q = dsub.add_parser("consistency")
    _common(q)
    q.add_argument("--student", required=True)
    q.add_argument("--teacher", required=True)
    q.add_argument("--samples", type=int, default=0, help="random test subset size (0 = all)")
    q.set_defaults(func=cmd_distill_consistency, dataset="fashionmnist")
    leaves["distill consistency"] = q

    p = sub.add_parser("saliency", help="gradient x input map")
    _common(p)
    _input(p)
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.set_defaults(func=cmd_saliency)
    leaves["saliency"] = p
    return parser, leaves


def parse_args(argv):
    parser, leaves = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        try:
            cfg = json.loads(Path(known.config).read_text())
        except (OSError, ValueError) as e:
            raise ContractError(f"cannot read config {known.config}: {e}") from e
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
        for leaf in leaves.values():
            leaf.set_defaults(**cfg)
            for action in leaf._actions:
                if action.dest in cfg:
                    action.required = False
    return parser.parse_args(argv)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ContractError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
