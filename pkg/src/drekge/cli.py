"""Command line interface.

Four subcommands cover the pipeline: ``train`` fits an embedding model,
``fit-domains`` fits the per-relation ellipsoids over a trained model,
``evaluate`` runs link prediction (baseline, and side by side with the
domain penalty when a domain file is given), ``predict`` ranks
completions for one partial triple.

Option precedence is command line > config file (``--config``, JSON) >
built-in dataset presets > library defaults. Logs go to stderr; output
files are written atomically so failed runs leave nothing behind.

Exit codes: 0 success, 1 usage or configuration error, 2 broken input
data or artifact files, 3 numerical failure during training.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager

import numpy as np

from . import data, domains, ellipsoid, evaluation, models
from .errors import (ConfigurationError, DataError, DrekgeError,
                     NumericalError, UnknownLabelError)

log = logging.getLogger("drekge")

THREADS_ENV = "DREKGE_THREADS"

# best published configurations per dataset and variant
PRESETS = {
    ("wn18", "transe"): dict(dim=50, lr=0.001, margin=2.0, batch=120, dissim="l1"),
    ("fb15k", "transe"): dict(dim=50, lr=0.001, margin=1.0, batch=120, dissim="l1"),
    ("wn18", "transr"): dict(dim=50, lr=0.001, margin=4.0, batch=1440, dissim="l1"),
    ("fb15k", "transr"): dict(dim=50, lr=0.001, margin=1.0, batch=4800, dissim="l1"),
    ("wn18", "stranse"): dict(dim=50, lr=0.0005, margin=5.0, batch=120, dissim="l1"),
    ("fb15k", "stranse"): dict(dim=100, lr=0.0001, margin=1.0, batch=120, dissim="l1"),
}

# staged variants refine an existing model, so they get a shorter budget
DEFAULT_EPOCHS = {"transe": 1000, "transr": 500, "stranse": 500}


class _UsageError(ConfigurationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


@contextmanager
def _atomic_output(path: str):
    """Yield a temp path; move it into place only if the block succeeds."""
    tmp = path + ".tmp"
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def _resolve_label(label: str, vocab: data.Vocab, kind: str) -> int:
    idx = vocab.id(label)
    if idx is not None:
        return idx
    ranked = sorted(vocab.labels, key=lambda known: _edit_distance(label, known))
    raise UnknownLabelError(label, kind, ranked[:5])


def _load_config_file(path: str, known: set[str]) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    unknown = set(raw) - known
    if unknown:
        raise ConfigurationError(
            f"unknown config file keys: {', '.join(sorted(unknown))}")
    return raw


def _resolve(args: argparse.Namespace, option_names: list[str],
             presets: dict | None) -> dict:
    """Merge flag values over config file values over preset values."""
    resolved = dict(presets or {})
    if getattr(args, "config", None):
        resolved.update(_load_config_file(args.config, set(option_names)))
    for name in option_names:
        value = getattr(args, name, None)
        if value is not None:
            resolved[name] = value
    return resolved


def _default_threads(args: argparse.Namespace, fallback: int) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigurationError(
                f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return fallback


def _load_graph(args: argparse.Namespace) -> data.KnowledgeGraph:
    for name in ("train", "valid", "test"):
        if getattr(args, name) is None:
            raise _UsageError(f"--{name} is required")
    return data.load_graph(args.train, args.valid, args.test)


def _add_data_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--train", help="training triple file (tsv)")
    parser.add_argument("--valid", help="validation triple file (tsv)")
    parser.add_argument("--test", help="test triple file (tsv)")
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (or ${THREADS_ENV})")


def cmd_train(args: argparse.Namespace) -> int:
    presets = None
    if args.dataset is not None:
        key = (args.dataset, args.variant)
        if key not in PRESETS:
            raise _UsageError(f"no preset for dataset {args.dataset!r} with "
                              f"variant {args.variant!r}")
        presets = PRESETS[key]
    opts = _resolve(args, ["train", "valid", "test", "dim", "rel_dim", "lr",
                           "margin", "batch", "dissim", "epochs",
                           "neg_sampling", "seed", "eval_every", "patience"],
                    presets)
    args.train = opts.get("train", args.train)
    args.valid = opts.get("valid", args.valid)
    args.test = opts.get("test", args.test)
    graph = _load_graph(args)

    config = models.TrainConfig(
        variant=args.variant,
        dim=opts.get("dim", 50),
        rel_dim=opts.get("rel_dim"),
        lr=opts.get("lr", 0.001),
        margin=opts.get("margin", 2.0),
        batch_size=opts.get("batch", 120),
        dissimilarity=opts.get("dissim", "l1"),
        epochs=opts.get("epochs", DEFAULT_EPOCHS[args.variant]),
        negative_sampling=opts.get("neg_sampling", "uniform"),
        normalize_entities=args.normalize_entities,
        seed=opts.get("seed", 0),
        eval_every=opts.get("eval_every", 25),
        patience=opts.get("patience", 50),
    )

    init = models.load_model(args.init_model) if args.init_model else None
    threads = _default_threads(args, 1)

    def on_epoch(epoch: int, mean_loss: float) -> None:
        log.info("epoch %d mean loss %.6f", epoch, mean_loss)

    validator = None
    if graph.valid and config.eval_every > 0:
        def validator(model: models.EmbeddingModel) -> float:
            hits = evaluation.validation_hits10(graph, model, threads=threads)
            log.info("validation filtered hits@10 %.2f", hits)
            return hits

    log.info("training %s: %d entities, %d relations, %d triples",
             config.variant, graph.n_entities, graph.n_relations,
             len(graph.train))
    model = models.train(graph, config, init, validator=validator,
                         on_epoch=on_epoch)
    with _atomic_output(args.out) as tmp:
        models.save_model(model, tmp)
    log.info("wrote model to %s", args.out)
    return 0


def cmd_fit_domains(args: argparse.Namespace) -> int:
    opts = _resolve(args, ["train", "valid", "test", "fit_lr", "fit_epochs",
                           "fit_batch", "diag_floor", "min_members", "seed"],
                    None)
    args.train = opts.get("train", args.train)
    args.valid = opts.get("valid", args.valid)
    args.test = opts.get("test", args.test)
    graph = _load_graph(args)
    model = models.load_model(args.model)
    config = ellipsoid.FitConfig(
        lr=opts.get("fit_lr", 1e-5),
        epochs=opts.get("fit_epochs", 500),
        batch_size=opts.get("fit_batch", 120),
        diag_floor=opts.get("diag_floor", ellipsoid.DIAG_FLOOR),
        seed=opts.get("seed", 0),
    )
    threads = _default_threads(args, os.cpu_count() or 1)

    def on_domain(relation, side, n_members, mean_score):
        if mean_score is None:
            log.info("domain r%d/%s: %d members, skipped", relation, side,
                     n_members)
        else:
            log.info("domain r%d/%s: %d members, mean fit score %.6f",
                     relation, side, n_members, mean_score)

    domain_model = domains.fit_all_domains(
        graph, model, config, min_members=opts.get("min_members",
                                                   domains.MIN_MEMBERS),
        threads=threads, on_domain=on_domain)
    with _atomic_output(args.out) as tmp:
        domains.save_domains(domain_model, tmp)
    log.info("wrote %d ellipsoids (%d skipped) to %s",
             domain_model.n_fitted, len(domain_model.skipped), args.out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    graph = _load_graph(args)
    model = models.load_model(args.model)
    threads = _default_threads(args, os.cpu_count() or 1)

    base = evaluation.evaluate(graph, model, None, split=args.split,
                               tie_break=args.tie_break, threads=threads)
    text = evaluation.format_report(base, title="baseline")
    rows = None
    if args.domains:
        domain_model = domains.load_domains(args.domains)
        dre = evaluation.evaluate(graph, model, domain_model,
                                  split=args.split, tie_break=args.tie_break,
                                  threads=threads)
        text += evaluation.format_report(dre, title="with domain penalty")
        text += evaluation.format_comparison(base, dre)
        rows = evaluation.comparison_rows(base, dre)
        header = "setting,side,category,metric,baseline,with_domains,delta"
    else:
        rows = [row for row in evaluation.csv_rows(base)]
        header = "setting,side,category,metric,value"

    if args.report_out:
        with _atomic_output(args.report_out) as tmp:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(text)
        log.info("wrote report to %s", args.report_out)
    else:
        sys.stdout.write(text)
    if args.csv_out:
        with _atomic_output(args.csv_out) as tmp:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(header + "\n")
                for row in rows:
                    fh.write(",".join(str(x) for x in row) + "\n")
        log.info("wrote csv to %s", args.csv_out)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    if (args.head is None) == (args.tail is None):
        raise _UsageError("give exactly one of --head and --tail")
    graph = _load_graph(args)
    model = models.load_model(args.model)
    domain_model = domains.load_domains(args.domains) if args.domains else None

    relation = _resolve_label(args.relation, graph.relations, "relation")
    side = data.TAIL if args.tail is None else data.HEAD
    if args.head is not None:
        fixed = _resolve_label(args.head, graph.entities, "entity")
        base = models.score_all(model, relation, head=fixed)
    else:
        fixed = _resolve_label(args.tail, graph.entities, "entity")
        base = models.score_all(model, relation, tail=fixed)

    pens = None
    if domain_model is not None:
        pens = domains.penalties_all(domain_model, model, relation, side)
    combined = base if pens is None else base + pens

    top = min(args.top, graph.n_entities)
    order = np.argsort(combined, kind="stable")[:top]
    print("rank\tentity\tbaseline\tpenalty\tcombined\tdomain")
    for rank, ent in enumerate(order, start=1):
        pen = 0.0 if pens is None else float(pens[ent])
        flag = "-" if pens is None else ("in" if pen == 0.0 else "out")
        print(f"{rank}\t{graph.entities.labels[ent]}\t{base[ent]:.6f}"
              f"\t{pen:.6f}\t{combined[ent]:.6f}\t{flag}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="drekge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an embedding model")
    _add_data_args(p)
    p.add_argument("--variant", choices=models.VARIANTS, default="transe")
    p.add_argument("--dataset", choices=["wn18", "fb15k"], default=None,
                   help="apply the published configuration for this dataset")
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--rel-dim", type=int, default=None, dest="rel_dim")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--margin", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--dissim", choices=models.DISSIMILARITIES, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--neg-sampling", choices=["uniform", "bernoulli"],
                   default=None, dest="neg_sampling")
    p.add_argument("--normalize-entities", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None, dest="eval_every")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--init-model", default=None,
                   help="trained transe model to stage from (required for "
                        "transr/stranse)")
    p.add_argument("--out", required=True, help="output model file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fit-domains", help="fit per-relation domain ellipsoids")
    _add_data_args(p)
    p.add_argument("--model", required=True, help="trained embedding model")
    p.add_argument("--fit-lr", type=float, default=None, dest="fit_lr")
    p.add_argument("--fit-epochs", type=int, default=None, dest="fit_epochs")
    p.add_argument("--fit-batch", type=int, default=None, dest="fit_batch")
    p.add_argument("--diag-floor", type=float, default=None, dest="diag_floor")
    p.add_argument("--min-members", type=int, default=None, dest="min_members")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output domain file")
    p.set_defaults(func=cmd_fit_domains)

    p = sub.add_parser("evaluate", help="run link-prediction evaluation")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--domains", default=None,
                   help="domain file; adds a penalized run and deltas")
    p.add_argument("--split", choices=["test", "valid"], default="test")
    p.add_argument("--tie-break", choices=evaluation.TIE_BREAKS,
                   default="optimistic", dest="tie_break")
    p.add_argument("--report-out", default=None, dest="report_out")
    p.add_argument("--csv-out", default=None, dest="csv_out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="rank completions for a partial triple")
    _add_data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--domains", default=None)
    p.add_argument("--relation", required=True)
    p.add_argument("--head", default=None)
    p.add_argument("--tail", default=None)
    p.add_argument("--top", type=int, default=10)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (DataError, UnknownLabelError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except DrekgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
