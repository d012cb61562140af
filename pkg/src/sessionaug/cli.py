"""Command line entry point: ``sessionaug <stage> [flags]``.

Every stage reads and writes inside one work directory (``--out``) and
echoes its effective settings to ``manifest.<stage>.json`` there.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, pipeline
from .augment import ABLATIONS, AugmentConfig, read_training_set, write_training_set
from .corpus import corpus_documents, load_log, write_log
from .evalkit import (breakdown, evaluate, export_trec_qrels, export_trec_run, format_report, read_trec_qrels,
                      read_trec_run, run_from_rankings, run_from_trec, write_report_tsv)
from .mining import BANDS, build_windows, mine_all, read_matches, write_matches
from .ranker import RankerModel, TrainConfig, train
from .retrieval import Bm25Index, DualEncoder, DualEncoderConfig, RankingList, train_dual_encoder
from .synlog import SynConfig, generate_labeled, self_test, split_sessions
from .textproc import Vocabulary

log = logging.getLogger("sessionaug")

STAGES = ("gen", "prepare", "index", "mine", "augment", "train", "eval", "ablate")

# keys that are not fields of one of the stage dataclasses
_EXTRA = {
    "test_fraction": 0.2,
    "min_freq": 1,
    "k1": 1.2,
    "b": 0.75,
    "trec_depth": 100,
    "ks": (1, 3, 5, 10),
    "gain": "binary_click",
    "log_base": 0.0,  # 0 means natural log
    "backend": "bm25",
    "band": "medium",
}
_DENSE_PREFIX = "dense_"


class UsageError(Exception):
    pass


def _defaults() -> dict[str, object]:
    out: dict[str, object] = dict(_EXTRA)
    for cls in (SynConfig, AugmentConfig, TrainConfig):
        for f in dataclasses.fields(cls):
            if f.name != "seed":
                out.setdefault(f.name, f.default)
    for f in dataclasses.fields(DualEncoderConfig):
        if f.name != "seed":
            out[_DENSE_PREFIX + f.name] = f.default
    return out


def _coerce(key: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            kind = type(default[0])
            return tuple(kind(x) for x in raw.split(",") if x.strip())
    except ValueError:
        raise UsageError(f"bad value for {key}: {raw!r}") from None
    return raw


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    out: Path
    seed: int = 0
    settings: dict = field(default_factory=_defaults)
    drop: tuple[str, ...] = ()

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        settings = _defaults()
        raw = read_config(args.config) if args.config else {}
        for key, value in raw.items():
            if key == "seed":
                continue
            if key not in settings:
                raise UsageError(f"unknown config key {key!r}")
            settings[key] = _coerce(key, value, settings[key])
        seed = int(_coerce("seed", raw["seed"], 0)) if "seed" in raw else 0
        if args.seed is not None:
            seed = args.seed
        if args.backend:
            settings["backend"] = args.backend
        if args.band:
            settings["band"] = args.band
        if settings["backend"] not in ("bm25", "dense"):
            raise UsageError(f"unknown backend {settings['backend']!r}")
        if settings["band"] not in BANDS:
            raise UsageError(f"unknown band {settings['band']!r}")
        return cls(Path(args.out), seed, settings, tuple(args.drop or ()))

    def build(self, cls, prefix: str = ""):
        kwargs = {f.name: self.settings[prefix + f.name] for f in dataclasses.fields(cls)
                  if f.name != "seed" and prefix + f.name in self.settings}
        return cls(seed=self.seed, **kwargs)

    def augment_config(self) -> AugmentConfig:
        return self.build(AugmentConfig).without(*self.drop)

    def path(self, name: str) -> Path:
        return self.out / name

    def manifest(self, stage: str, outputs: Sequence[str], **counts) -> None:
        record = {
            "stage": stage,
            "version": __version__,
            "seed": self.seed,
            "drop": list(self.drop),
            "settings": {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.settings.items())},
            "outputs": list(outputs),
            "counts": counts,
        }
        with open(self.path(f"manifest.{stage}.json"), "w", encoding="utf-8", newline="\n") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------------------
# Stages
# --------------------------------------------------------------------------


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run `sessionaug {stage}` first")
    return path


def _load_prepared(rc: RunConfig) -> pipeline.Prepared:
    train_s = load_log(_need(rc.path("train.jsonl"), "gen"))
    test_s = load_log(_need(rc.path("test.jsonl"), "gen"))
    prep = pipeline.prepare(train_s, test_s, int(rc.settings["min_freq"]))
    prep.vocab = Vocabulary.load_tsv(_need(rc.path("vocab.tsv"), "prepare"))
    return prep


def cmd_gen(rc: RunConfig, args) -> None:
    sessions, labels = generate_labeled(rc.build(SynConfig))
    oracle, lexical = self_test(sessions, labels)
    train_s, test_s = split_sessions(sessions, float(rc.settings["test_fraction"]), rc.seed)
    write_log(train_s, rc.path("train.jsonl"))
    write_log(test_s, rc.path("test.jsonl"))
    print(f"generated {len(train_s)} train / {len(test_s)} test sessions "
          f"(self-test: oracle MRR {oracle:.4f}, query-only BM25 MRR {lexical:.4f})")
    rc.manifest("gen", ["train.jsonl", "test.jsonl"], train_sessions=len(train_s), test_sessions=len(test_s))


def cmd_prepare(rc: RunConfig, args) -> None:
    if args.train_log or args.test_log:
        if not (args.train_log and args.test_log):
            raise UsageError("--train-log and --test-log go together")
        write_log(load_log(args.train_log), rc.path("train.jsonl"))
        write_log(load_log(args.test_log), rc.path("test.jsonl"))
    train_s = load_log(_need(rc.path("train.jsonl"), "gen"))
    test_s = load_log(_need(rc.path("test.jsonl"), "gen"))
    prep = pipeline.prepare(train_s, test_s, int(rc.settings["min_freq"]))
    prep.vocab.save_tsv(rc.path("vocab.tsv"))
    print(f"vocabulary {len(prep.vocab)} terms; {len(prep.train_contexts)} train contexts, "
          f"{len(prep.test_contexts)} test contexts with history")
    rc.manifest("prepare", ["vocab.tsv"], vocab=len(prep.vocab), train_contexts=len(prep.train_contexts),
                test_contexts=len(prep.test_contexts))


def _backend(rc: RunConfig, prep: pipeline.Prepared):
    if rc.settings["backend"] == "bm25":
        docs = corpus_documents(prep.train_sessions)
        return Bm25Index({d: doc.title_tokens for d, doc in docs.items()},
                         float(rc.settings["k1"]), float(rc.settings["b"]))
    encoder = train_dual_encoder(prep.train_sessions, prep.vocab, rc.build(DualEncoderConfig, _DENSE_PREFIX))
    encoder.save(rc.path("dense.npy"))
    return encoder


def cmd_index(rc: RunConfig, args) -> None:
    prep = _load_prepared(rc)
    backend = _backend(rc, prep)
    query_ids, doc_ids, order, scores = pipeline.ranking_order(backend, prep.train_sessions)
    np.savez(rc.path("rankings.npz"), query_ids=np.array(query_ids), doc_ids=np.array(doc_ids), order=order)
    depth = int(rc.settings["trec_depth"])
    lists = (RankingList(q, [doc_ids[j] for j in row], scores[i, row].tolist())
             for i, (q, row) in enumerate(zip(query_ids, order)))
    export_trec_run(lists, rc.path("index.run"), tag=rc.settings["backend"], depth=depth or None)
    outputs = ["rankings.npz", "index.run"] + (["dense.npy"] if rc.settings["backend"] == "dense" else [])
    print(f"ranked {len(doc_ids)} documents for {len(query_ids)} queries with {rc.settings['backend']}")
    rc.manifest("index", outputs, queries=len(query_ids), documents=len(doc_ids))


def cmd_mine(rc: RunConfig, args) -> None:
    prep = _load_prepared(rc)
    with np.load(_need(rc.path("rankings.npz"), "index")) as z:
        query_ids, doc_ids, order = z["query_ids"].tolist(), z["doc_ids"].tolist(), z["order"]
    config = rc.augment_config()
    windows = build_windows(prep.train_sessions, doc_ids, order, query_ids, config.w_size)
    contexts = [c for c in prep.train_contexts if c.history]
    matches = mine_all(contexts, windows, max(config.n_ambiguous, 1), rc.settings["band"], config.mean_m_aq)
    write_matches(matches, rc.path("ambiguous.tsv"))
    n = sum(len(m) for m in matches.values())
    short = sum(1 for m in matches.values() if len(m) < config.n_ambiguous)
    print(f"{len(windows)} windows; {n} ambiguous matches for {len(contexts)} contexts "
          f"({short} with fewer than {config.n_ambiguous})")
    rc.manifest("mine", ["ambiguous.tsv"], windows=len(windows), matches=n, contexts=len(contexts),
                contexts_short=short)


def _augment(rc: RunConfig, prep: pipeline.Prepared, config: AugmentConfig, dest: Path) -> dict:
    matches = None
    if config.n_ambiguous:
        matches = read_matches(_need(rc.path("ambiguous.tsv"), "mine"))
    pairs = pipeline.training_pairs(prep, config, matches)
    write_training_set(pairs, dest)
    counts: dict[str, int] = {}
    for p in pairs:
        counts[p.strategy] = counts.get(p.strategy, 0) + 1
    return counts


def cmd_augment(rc: RunConfig, args) -> None:
    prep = _load_prepared(rc)
    counts = _augment(rc, prep, rc.augment_config(), rc.path("training_set.jsonl"))
    print("training pairs: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())))
    rc.manifest("augment", ["training_set.jsonl"], **counts)


def _train(rc: RunConfig, vocab: Vocabulary, src: Path, dest: Path) -> int:
    pairs = read_training_set(src)
    config = rc.build(TrainConfig)
    model = RankerModel.initialize(vocab, config.dim, config.hidden, config.seed)
    train(model, pairs, config).save(dest)
    return len(pairs)


def cmd_train(rc: RunConfig, args) -> None:
    vocab = Vocabulary.load_tsv(_need(rc.path("vocab.tsv"), "prepare"))
    n = _train(rc, vocab, _need(rc.path("training_set.jsonl"), "augment"), rc.path("model.ckpt"))
    print(f"trained on {n} pairs -> {rc.path('model.ckpt')}")
    rc.manifest("train", ["model.ckpt"], pairs=n)


def _eval_kwargs(rc: RunConfig) -> dict:
    base = float(rc.settings["log_base"])
    return {"ks": tuple(int(k) for k in rc.settings["ks"]), "gain": rc.settings["gain"],
            "log_base": base or None}


def _evaluate_model(rc: RunConfig, prep: pipeline.Prepared, ckpt: Path, dest: Path) -> dict:
    model = RankerModel.load(ckpt, prep.vocab)
    rankings = pipeline.rank_contexts(model, prep.test_contexts, int(rc.settings["max_len"]))
    run = run_from_rankings(rankings, prep.test_contexts)
    kw = _eval_kwargs(rc)
    report = evaluate(run, **kw)
    write_report_tsv(report, dest / "metrics.tsv")
    for mode in ("length", "position"):
        write_report_tsv(breakdown(run, prep.test_sessions, mode, kw["ks"], kw["gain"]),
                         dest / f"breakdown_{mode}.tsv")
    export_trec_run(rankings.values(), dest / "test.run")
    qrels = {}
    for c in prep.test_contexts:
        qrels[c.current.query_id] = {
            cand.doc_id: (cand.relevance if cand.relevance is not None else int(cand.clicked))
            for cand in c.current.candidates
        }
    export_trec_qrels(qrels, dest / "test.qrels")
    print(format_report(report, f"test metrics ({len(run)} queries)"))
    return report.values


def cmd_eval(rc: RunConfig, args) -> None:
    if args.run or args.qrels:
        if not (args.run and args.qrels):
            raise UsageError("--run and --qrels go together")
        run = run_from_trec(read_trec_run(args.run), read_trec_qrels(args.qrels))
        report = evaluate(run, **_eval_kwargs(rc))
        rc.out.mkdir(parents=True, exist_ok=True)
        write_report_tsv(report, rc.path("metrics.tsv"))
        print(format_report(report, f"metrics ({len(run)} queries)"))
        rc.manifest("eval", ["metrics.tsv"], queries=len(run), **report.skipped)
        return
    prep = _load_prepared(rc)
    values = _evaluate_model(rc, prep, _need(rc.path("model.ckpt"), "train"), rc.out)
    rc.manifest("eval", ["metrics.tsv", "breakdown_length.tsv", "breakdown_position.tsv", "test.run",
                         "test.qrels"], queries=len(prep.test_contexts), **{k: float(v) for k, v in values.items()})


def cmd_ablate(rc: RunConfig, args) -> None:
    prep = _load_prepared(rc)
    variants = [(d,) for d in (rc.drop or ABLATIONS)]
    if not rc.drop:
        variants.insert(0, ())
    rows = []
    for drop in variants:
        name = "ablate_" + ("_".join(drop) or "none")
        dest = rc.path(name)
        dest.mkdir(exist_ok=True)
        config = rc.build(AugmentConfig).without(*drop)
        counts = _augment(rc, prep, config, dest / "training_set.jsonl")
        _train(rc, prep.vocab, dest / "training_set.jsonl", dest / "model.ckpt")
        values = _evaluate_model(rc, prep, dest / "model.ckpt", dest)
        rows.append(("-".join(drop) or "none", counts, values))
    names = list(rows[0][2])
    with open(rc.path("ablation.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(["drop", "pairs"] + names) + "\n")
        for drop, counts, values in rows:
            fh.write("\t".join([drop, str(sum(counts.values()))] + [repr(values.get(m, float("nan"))) for m in names]))
            fh.write("\n")
    rc.manifest("ablate", ["ablation.tsv"] + [f"ablate_{r[0].replace('-', '_')}" for r in rows],
                variants=len(rows))


COMMANDS = {
    "gen": cmd_gen,
    "prepare": cmd_prepare,
    "index": cmd_index,
    "mine": cmd_mine,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value settings file")
    common.add_argument("--seed", type=int, help="global seed (overrides the config file)")
    common.add_argument("--backend", choices=("bm25", "dense"), help="ranking backend for index/mine")
    common.add_argument("--band", choices=BANDS, help="window band for ambiguous queries")
    common.add_argument("--drop", choices=tuple(ABLATIONS), action="append",
                        help="disable a strategy group (repeatable)")
    common.add_argument("--out", metavar="DIR", default="run", help="work directory (default: run)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sessionaug", description="Session-search augmentation toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    helps = {
        "gen": "generate a synthetic log and split it",
        "prepare": "tokenize, build the vocabulary, derive contexts",
        "index": "rank every document for every training query",
        "mine": "mine ambiguous queries from ranking windows",
        "augment": "build the training-pair set",
        "train": "train the ranker",
        "eval": "evaluate on the test log (or a TREC run with --run/--qrels)",
        "ablate": "re-run augment/train/eval with strategy groups dropped",
    }
    parsers = {name: sub.add_parser(name, parents=[common], help=helps[name]) for name in STAGES}
    parsers["prepare"].add_argument("--train-log", metavar="PATH", help="import an existing JSONL log")
    parsers["prepare"].add_argument("--test-log", metavar="PATH")
    parsers["eval"].add_argument("--run", metavar="PATH", help="TREC run file to score")
    parsers["eval"].add_argument("--qrels", metavar="PATH", help="TREC qrels file")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = RunConfig.from_args(args)
        rc.out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](rc, args)
    except UsageError as e:
        print(f"sessionaug: error: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as e:
        print(f"sessionaug {args.command}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
