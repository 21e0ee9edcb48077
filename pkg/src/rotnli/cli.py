"""Command line: generate, train, eval, fewshot, forget, probe, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence.
Every command writes its outputs plus ``manifest.json`` under ``--out``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import asdict, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import dataset as ds
from . import experiments as X
from . import report as R
from . import training as T
from .classifiers import probe_pretrained
from .encoder import Vocabulary, init_params, split_words
from .objectives import TrainingDivergence

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 1, 2, 3
PROXY_PREFIX = "proxy"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration


def parse_config_text(text: str) -> dict[str, object]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    types = T.RunConfig.field_types()
    out: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in types:
            raise UsageError(f"config line {lineno}: unknown key {key!r}")
        out[key] = _coerce(key, value, types[key])
    return out


def _coerce(key: str, value: str, typ: type):
    try:
        if typ is bool:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(value)
            return value.lower() in ("true", "1")
        return typ(value)
    except ValueError:
        raise UsageError(f"{key}: cannot read {value!r} as {typ.__name__}") from None


def build_config(args) -> T.RunConfig:
    values: dict[str, object] = {}
    if args.config:
        try:
            values.update(parse_config_text(Path(args.config).read_text()))
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
    for f in fields(T.RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    if getattr(args, "corpus", None):
        for mode in (*ds.MODES, PROXY_PREFIX):
            values.setdefault(mode, str(Path(args.corpus) / mode))
    try:
        return T.RunConfig(**values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def config_hash(cfg: T.RunConfig) -> str:
    return hashlib.sha256(json.dumps(asdict(cfg), sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: str, cfg: T.RunConfig | None, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "versions": {"rotnli": __version__, "numpy": np.__version__, "python": platform.python_version()},
    }
    if cfg is not None:
        manifest["config"] = asdict(cfg)
        manifest["config_hash"] = config_hash(cfg)
    if extra:
        manifest.update(extra)
    _write_json(out / "manifest.json", manifest)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# corpus access


def load_split(prefix: str) -> dict[str, list[ds.NliExample]]:
    if not prefix:
        raise ds.DataError("no corpus path configured (pass --corpus or set it in --config)")
    splits = {}
    for split in ds.SPLITS:
        splits[split] = ds.read_jsonl(f"{prefix}_{split}.jsonl")
    if not splits["train"] or not splits["test"]:
        raise ds.DataError(f"corpus {prefix} has an empty train or test split")
    return splits


def corpus_vocabulary(cfg: T.RunConfig) -> Vocabulary:
    """Vocabulary over every configured corpus that exists, in a fixed order."""
    texts = []
    for prefix in (cfg.lexicalized, cfg.delexicalized, cfg.proxy):
        if prefix and Path(f"{prefix}_train.jsonl").exists():
            for split in load_split(prefix).values():
                texts += [t for ex in split for t in (ex.premise, ex.hypothesis)]
    if not texts:
        raise ds.DataError("no corpus files found")
    return Vocabulary.from_texts(texts)


def _mode_prefix(cfg: T.RunConfig, mode: str) -> str:
    return cfg.lexicalized if mode == ds.LEXICALIZED else cfg.delexicalized


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> None:
    out = Path(args.out)
    triples = ds.load_triples(args.triples) if args.triples else ds.synthesize_triples(
        args.seed, args.n_entities, args.per_relation
    )
    corpus = ds.generate_corpus(triples, ds.SplitConfig(seed=args.seed))
    info = ds.write_corpus(corpus, out, {"seed": args.seed, "triples": len(triples)})
    proxy = X.make_proxy_corpus(args.seed, args.proxy_size)
    entity_tokens = {
        w for t in triples for w in split_words(f"{t.subject_label} {t.object_label} {t.subject_id} {t.object_id}")
    }
    X.check_proxy_disjoint(proxy, entity_tokens)
    for split, examples in proxy.items():
        ds.write_jsonl(examples, out / f"{PROXY_PREFIX}_{split}.jsonl")
    ds.write_triples(triples, out / "triples.tsv")
    write_manifest(out, "generate", None, {"seed": args.seed, "corpus": info, "proxy_size": args.proxy_size})
    print(f"wrote {sum(info['counts'].values())} examples and {args.proxy_size} proxy examples to {out}")


def _train(cfg: T.RunConfig, mode: str, out: Path | None = None):
    corpus = load_split(_mode_prefix(cfg, mode))
    params = init_params(cfg.seed, cfg.d, corpus_vocabulary(cfg), cfg.init_scale)
    start = time.perf_counter()
    result = T.train(cfg, corpus["train"], corpus["dev"], params)
    elapsed = time.perf_counter() - start
    if out is not None:
        T.save_artifact(result.artifact, out)
        (out / "train_log.jsonl").write_text("".join(json.dumps(rec, sort_keys=True) + "\n" for rec in result.log))
    return result, corpus, elapsed


def cmd_train(args) -> None:
    cfg = build_config(args)
    out = Path(args.out)
    result, _, elapsed = _train(cfg, args.mode, out)
    write_manifest(out, "train", cfg, {"mode": args.mode, "epochs": result.epochs, "steps": result.steps,
                                       "converged": result.converged})
    print(f"{cfg.method} on {args.mode}: {result.epochs} epochs, {result.steps} steps, converged={result.converged}")


def cmd_eval(args) -> None:
    cfg = build_config(args)
    artifact = T.load_artifact(args.artifact)
    corpus = load_split(_mode_prefix(cfg, args.mode))
    acc = T.evaluate(artifact, corpus[args.split])
    out = Path(args.out)
    _write_json(
        out / f"eval-{artifact.method}-{args.mode}.json",
        {"kind": "eval", "method": artifact.method, "mode": args.mode, "split": args.split,
         "seed": cfg.seed, "accuracy": acc},
    )
    write_manifest(out, "eval", cfg, {"artifact": str(args.artifact), "mode": args.mode})
    print(f"{artifact.method} {args.mode} {args.split} accuracy {acc:.4f}")


def cmd_fewshot(args) -> None:
    cfg = build_config(args)
    corpus = load_split(_mode_prefix(cfg, args.mode))
    vocab = corpus_vocabulary(cfg)
    schedule = [int(x) for x in args.schedule.split(",")] if args.schedule else list(X.DEFAULT_SCHEDULE)
    try:
        res = X.measure_few_shot(cfg, corpus, lambda s: init_params(s, cfg.d, vocab, cfg.init_scale), schedule)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    _write_json(
        out / f"fewshot-{cfg.method}-{cfg.seed}.json",
        {"kind": "fewshot", "method": cfg.method, "mode": args.mode, "seed": cfg.seed,
         "samples": res.samples, "curve": [[n, a] for n, a in res.curve], "target": cfg.accuracy_target},
    )
    write_manifest(out, "fewshot", cfg, {"schedule": schedule, "mode": args.mode})
    print(f"{cfg.method}: {'not reached' if res.samples is None else res.samples} samples")


def cmd_forget(args) -> None:
    cfg = build_config(args)
    corpus = load_split(_mode_prefix(cfg, args.mode))
    proxy = load_split(cfg.proxy)
    params = init_params(cfg.seed, cfg.d, corpus_vocabulary(cfg), cfg.init_scale)
    try:
        res = X.measure_forgetting(cfg, corpus, proxy, params)
    except X.ProxyError as exc:
        raise ds.DataError(str(exc)) from None
    out = Path(args.out)
    _write_json(
        out / f"forgetting-{cfg.method}-{cfg.seed}.json",
        {"kind": "forgetting", "method": cfg.method, "seed": cfg.seed,
         "before": res.before, "after": res.after, "delta": res.delta},
    )
    write_manifest(out, "forget", cfg, {"mode": args.mode})
    flag = " (improved)" if res.improved else ""
    print(f"{cfg.method}: proxy {res.before:.3f} -> {res.after:.3f}, delta {res.delta:+.3f}{flag}")


def cmd_probe(args) -> None:
    cfg = build_config(args)
    vocab = corpus_vocabulary(cfg)
    out = Path(args.out)
    for mode in ds.MODES:
        corpus = load_split(_mode_prefix(cfg, mode))
        params = init_params(cfg.seed, cfg.d, vocab, cfg.init_scale)
        acc = probe_pretrained(corpus["test"][: args.n], corpus["train"], params)
        _write_json(out / f"probe-{mode}.json", {"kind": "probe", "mode": mode, "seed": cfg.seed, "accuracy": acc})
        print(f"untrained 1-NN probe, {mode}: {acc:.4f}")
    write_manifest(out, "probe", cfg, {"n": args.n})


def collect_results(dirs) -> tuple[list[R.EvalReport], dict[str, list[tuple[int, float]]], float]:
    rows: dict[tuple[str, int | None], dict] = {}
    curves: dict[str, list[tuple[int, float]]] = {}
    target = T.RunConfig().accuracy_target
    for d in dirs:
        for path in sorted(Path(d).rglob("*.json")):
            try:
                rec = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ds.DataError(f"{path}: {exc}") from None
            kind = rec.get("kind") if isinstance(rec, dict) else None
            if kind is None:
                continue
            method = R.PROBE if kind == "probe" else rec["method"]
            row = rows.setdefault((method, rec.get("seed")), {"method": method, "seed": rec.get("seed")})
            if kind in ("eval", "probe"):
                row[f"accuracy_{rec['mode']}"] = rec["accuracy"]
            elif kind == "fewshot":
                row["training_samples_used"] = rec["samples"]
                curves[method] = [tuple(p) for p in rec["curve"]]
                target = rec.get("target", target)
            elif kind == "forgetting":
                row["forgetting_delta"] = rec["delta"]
    reports = [R.EvalReport(**row) for row in rows.values()]
    return reports, curves, target


def cmd_report(args) -> None:
    out = Path(args.out)
    if args.run:
        _run_all(args, out)
    reports, curves, target = collect_results(args.results or [out])
    if not reports:
        raise ds.DataError("no result files found")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.tsv").write_text(R.render(reports, R.STRUCTURED))
    (out / "report.txt").write_text(R.render(reports, R.TABLE))
    R.plot_accuracy(reports, out / "accuracy.png")
    if curves:
        R.plot_few_shot(curves, target, out / "fewshot.png")
    if any(r.forgetting_delta is not None for r in reports):
        R.plot_forgetting(reports, out / "forgetting.png")
    print(R.render(reports, R.TABLE), end="")


def _run_all(args, out: Path) -> None:
    """Train and evaluate every method on both modes, plus the untrained probe."""
    base = build_config(args)
    timings = {}
    for method in T.METHODS:
        cfg = replace(base, method=method)
        for mode in ds.MODES:
            result, corpus, elapsed = _train(cfg, mode, out / "runs" / f"{method}-{mode}")
            acc = T.evaluate(result.artifact, corpus["test"])
            _write_json(out / "results" / f"eval-{method}-{mode}.json",
                        {"kind": "eval", "method": method, "mode": mode, "split": "test", "seed": cfg.seed,
                         "accuracy": acc})
            timings[f"{method}/{mode}"] = elapsed
    vocab = corpus_vocabulary(base)
    for mode in ds.MODES:
        corpus = load_split(_mode_prefix(base, mode))
        acc = probe_pretrained(corpus["test"][:500], corpus["train"], init_params(base.seed, base.d, vocab, base.init_scale))
        _write_json(out / "results" / f"probe-{mode}.json", {"kind": "probe", "mode": mode, "seed": base.seed, "accuracy": acc})
    # wall times vary run to run, so they stay out of the report files
    _write_json(out / "timings.json", timings)
    write_manifest(out, "report", base)


# ---------------------------------------------------------------------------
# parser


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--corpus", help="directory written by `generate`")
    for f in fields(T.RunConfig):
        if f.name == "seed":
            continue
        typ = type(f.default)
        flag = "--" + f.name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, dest=f.name, type=lambda v: _coerce("flag", v, bool), default=None)
        else:
            p.add_argument(flag, dest=f.name, type=typ, default=None, help=f"RunConfig.{f.name}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rotnli", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--config", help="flat key = value file of RunConfig fields")
    common.add_argument("--out", required=True, help="output directory")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", parents=[common], help="write the corpus, proxy task and manifest")
    g.add_argument("--triples", help="5-column TSV of triples; synthesized when omitted")
    g.add_argument("--n-entities", type=int, default=200)
    g.add_argument("--per-relation", type=int, default=100)
    g.add_argument("--proxy-size", type=int, default=1000)

    for name, help_ in (
        ("train", "train one method on one corpus mode"),
        ("eval", "evaluate a saved artifact"),
        ("fewshot", "smallest training set reaching the target"),
        ("forget", "proxy-task accuracy drop caused by symmetry training"),
        ("probe", "untrained encoder with 1-NN"),
        ("report", "render the results table and figures"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        _add_run_flags(p)
        if name in ("train", "eval", "fewshot", "forget"):
            p.add_argument("--mode", choices=ds.MODES, default=ds.LEXICALIZED)
        if name == "eval":
            p.add_argument("--artifact", required=True)
            p.add_argument("--split", choices=ds.SPLITS, default="test")
        if name == "fewshot":
            p.add_argument("--schedule", help="comma-separated increasing sample counts")
        if name == "probe":
            p.add_argument("--n", type=int, default=500, help="test examples to probe")
        if name == "report":
            p.add_argument("--results", nargs="*", help="directories holding result JSON files")
            p.add_argument("--run", action="store_true", help="train and evaluate every method first")
    return parser


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "fewshot": cmd_fewshot,
    "forget": cmd_forget,
    "probe": cmd_probe,
    "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "generate":
            args.seed = 0 if args.seed is None else args.seed
        _COMMANDS[args.command](args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ds.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergence as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
