"""Command line: tokenize, fit, project, predict, effect, oos, bench.

Exit status is 0 on success, 2 for usage errors, 3 for data errors and 4
for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats as fmt
from .counts import AttributeTable, standardize
from .engine import RULES, fit_dmr_with_projection
from .errors import DataError, DmrError, FormatError, NumericalError, UsageError
from .glm import PathConfig
from .projection import project
from .tokenize import DEFAULT_STOPWORDS, TokenizerConfig, ingest_corpus

log = logging.getLogger("dmr")

_PATH_FIELDS = tuple(f.name for f in dataclasses.fields(PathConfig))


@dataclass
class RunConfig:
    """Every knob of a run; serialized verbatim into output headers."""

    n_lambda: int = 100
    lambda_min_ratio: float = 0.01
    gamma: float = 0.0
    tau: float = 1.0
    tolerance: float = 1e-7
    max_iters: int = 500
    eta_headroom: float = 30.0
    selection: str = "aicc"
    folds: int = 5
    workers: int = 1
    shards: int | None = None
    shard_policy: str = "contiguous"
    seed: int = 0
    standardize: bool = True
    controls: list[str] = field(default_factory=list)
    min_doc_count: int = 0
    stopwords: list[str] | None = None
    suffixes: list[str] = field(default_factory=lambda: ["s", "ing", "ly"])
    paths: dict[str, str] = field(default_factory=dict)

    def path_config(self) -> PathConfig:
        return PathConfig(**{k: getattr(self, k) for k in _PATH_FIELDS})

    def tokenizer(self) -> TokenizerConfig:
        stop = DEFAULT_STOPWORDS if self.stopwords is None else frozenset(self.stopwords)
        return TokenizerConfig(stopwords=stop, suffixes_to_strip=tuple(self.suffixes), min_doc_count=self.min_doc_count)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["tau"] == float("inf"):
            d["tau"] = "inf"
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise UsageError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if d.get("tau") == "inf":
            d["tau"] = float("inf")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except FileNotFoundError:
            raise FormatError(f"no such file: {path}") from None
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None

    def validate(self) -> None:
        if self.selection not in RULES:
            raise UsageError(f"--selection must be one of {RULES}")
        if self.workers < 1 or (self.shards is not None and self.shards < 1):
            raise UsageError("--workers and --shards must be at least 1")
        if self.folds < 2:
            raise UsageError("--folds must be at least 2")
        try:
            self.path_config()
        except ValueError as exc:
            raise UsageError(str(exc)) from None


# flags that override RunConfig fields: flag -> (field, type)
_OVERRIDES = {
    "gamma": float, "tau": float, "nlambda": int, "lmr": float, "selection": str,
    "folds": int, "workers": int, "shards": int, "seed": int, "tolerance": float,
}
_FIELD = {"nlambda": "n_lambda", "lmr": "lambda_min_ratio"}


def _resolve(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    for flag in _OVERRIDES:
        val = getattr(args, flag, None)
        if val is not None:
            setattr(cfg, _FIELD.get(flag, flag), val)
    if getattr(args, "controls", None) is not None:
        cfg.controls = [c for c in args.controls.split(",") if c]
    if getattr(args, "min_doc_count", None) is not None:
        cfg.min_doc_count = args.min_doc_count
    if getattr(args, "no_standardize", False):
        cfg.standardize = False
    for key in ("docs_text", "counts", "vocab", "docs", "attrs", "coef", "out", "out_dir", "projection"):
        val = getattr(args, key, None)
        if val is not None:
            cfg.paths[key] = str(val)
    cfg.validate()
    return cfg


def _fit_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--config", help="JSON run configuration; flags override it")
    sp.add_argument("--gamma", type=float, help="gamma-lasso concavity (0 is the lasso)")
    sp.add_argument("--tau", type=float, help="relative penalty divisor for control columns")
    sp.add_argument("--nlambda", type=int, help="path length")
    sp.add_argument("--lmr", type=float, help="lambda_min / lambda_max")
    sp.add_argument("--tolerance", type=float, help="relative objective tolerance")
    sp.add_argument("--selection", choices=RULES)
    sp.add_argument("--folds", type=int, help="CV folds for cvmin/cv1se")
    sp.add_argument("--workers", type=int)
    sp.add_argument("--shards", type=int)
    sp.add_argument("--seed", type=int)


def _corpus_flags(sp: argparse.ArgumentParser, attrs: bool = True) -> None:
    sp.add_argument("--counts", required=True, help="triplet file token<TAB>doc_id|count")
    sp.add_argument("--vocab", required=True, help="vocabulary file, one token per line")
    sp.add_argument("--docs", required=True, help="document totals file doc_id<TAB>m")
    if attrs:
        sp.add_argument("--attrs", required=True, help="attribute file with a leading doc_id column")
        sp.add_argument("--controls", help="comma-separated control columns (overrides the file's #controls line)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dmr", description="Distributed multinomial regression for text.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("tokenize", help="turn doc_id<TAB>text lines into count files")
    sp.add_argument("--input", dest="docs_text", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--min-doc-count", type=int, help="keep tokens in more than this many documents")
    sp.add_argument("--config")

    sp = sub.add_parser("fit", help="fit every token's Poisson path and write coefficients")
    _corpus_flags(sp)
    _fit_flags(sp)
    sp.add_argument("--no-standardize", action="store_true", help="leave target columns unscaled")
    sp.add_argument("--out", required=True, help="coefficient file")
    sp.add_argument("--projection", help="also write the SR projection here")

    sp = sub.add_parser("project", help="SR projection z = Phi c for every document")
    _corpus_flags(sp, attrs=False)
    sp.add_argument("--coef", required=True)
    sp.add_argument("--normalize", action="store_true", help="divide by document length")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("predict", help="forward regression of one attribute on its SR projection")
    _corpus_flags(sp)
    sp.add_argument("--coef", required=True)
    sp.add_argument("--target", required=True)
    sp.add_argument("--new-counts")
    sp.add_argument("--new-docs")
    sp.add_argument("--new-attrs")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("effect", help="treatment effect with SR projections as controls")
    _corpus_flags(sp)
    sp.add_argument("--response", required=True)
    sp.add_argument("--treatment", required=True)
    sp.add_argument("--interact", help="categorical attribute whose levels interact with the SR block")
    sp.add_argument("--coef", help="fitted coefficients (refit when omitted)")
    sp.add_argument("--effect-gamma", type=float, default=10.0)
    sp.add_argument("--out", required=True)
    _fit_flags(sp)

    sp = sub.add_parser("oos", help="out-of-sample DMR vs softmax comparison on glass-like data")
    sp.add_argument("--folds", type=int, default=20)
    sp.add_argument("--inner-folds", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--data-seed", type=int, default=None)
    sp.add_argument("--no-softmax", action="store_true")
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("bench", help="fit time against worker count")
    sp.add_argument("--tokens", type=int, default=2000)
    sp.add_argument("--n-docs", type=int, default=300)
    sp.add_argument("--workers", default="1,2,4,8")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    return ap


# --------------------------------------------------------------------------
# subcommands


def _read_corpus(cfg: RunConfig):
    ids, totals = fmt.read_doc_totals(cfg.paths["docs"])
    vocab = fmt.read_vocabulary(cfg.paths["vocab"])
    counts, vocab, ids = fmt.read_triplets(cfg.paths["counts"], vocab, ids)
    if not np.array_equal(counts.doc_totals, totals):
        raise FormatError(f"{cfg.paths['docs']}: totals disagree with {cfg.paths['counts']}")
    return counts, vocab, ids


def _read_attrs(path, ids, controls) -> AttributeTable:
    tids, attrs = fmt.read_attributes(path, controls or None)
    return fmt.align_rows(ids, tids, attrs)


def cmd_tokenize(args) -> int:
    cfg = _resolve(args)
    docs = []
    for ln, line in enumerate(fmt.read_lines(cfg.paths["docs_text"]), 1):
        if not line:
            continue
        doc, sep, text = line.partition("\t")
        try:
            docs.append((int(doc), text))
        except ValueError:
            raise FormatError(f"{cfg.paths['docs_text']}:{ln}: doc_id must be an integer") from None
    counts, vocab = ingest_corpus(docs, cfg.tokenizer())
    ids = np.array([d for d, _ in docs], dtype=np.int64)
    out = Path(cfg.paths["out_dir"])
    fmt.write_triplets(out / "counts.tsv", counts, vocab, ids)
    fmt.write_vocabulary(out / "vocab.txt", vocab)
    fmt.write_doc_totals(out / "docs.tsv", ids, counts.doc_totals)
    fmt.atomic_write(out / "tokenize.json", cfg.to_json())
    print(f"{counts.n_docs} documents, {counts.n_tokens} tokens, {counts.grand_total} words")
    return 0


def _fit(cfg: RunConfig, counts, vocab, attrs):
    if cfg.standardize and attrs.targets:
        attrs = standardize(attrs)
    return fit_dmr_with_projection(
        counts, attrs, cfg.path_config(), cfg.selection, cfg.workers, cfg.shards, cfg.shard_policy,
        cfg.folds, cfg.seed, vocab.tokens, accumulate=True,
    )


def _inputs(cfg: RunConfig, keys) -> dict:
    return {k: fmt.file_hash(cfg.paths[k]) for k in keys if k in cfg.paths}


def cmd_fit(args) -> int:
    cfg = _resolve(args)
    counts, vocab, ids = _read_corpus(cfg)
    attrs = _read_attrs(cfg.paths["attrs"], ids, cfg.controls)
    model, proj = _fit(cfg, counts, vocab, attrs)
    inputs = _inputs(cfg, ("counts", "vocab", "docs", "attrs"))
    run = cfg.to_dict()
    fmt.write_coefficients(cfg.paths["out"], model, run, inputs)
    if "projection" in cfg.paths:
        fmt.write_projection(cfg.paths["projection"], proj, ids, {"run": run, "inputs": inputs})
    bad = sum(s != "ok" for s in model.status)
    print(f"fitted {model.n_tokens} tokens ({bad} not ok), {model.loadings.nnz} nonzero loadings")
    return 0


def cmd_project(args) -> int:
    cfg = _resolve(args)
    counts, vocab, ids = _read_corpus(cfg)
    model = fmt.read_coefficients(cfg.paths["coef"])
    if model.token_names is not None and model.token_names != vocab.tokens:
        raise FormatError("coefficient tokens do not match the vocabulary")
    proj = project(model, counts, normalize=args.normalize)
    inputs = _inputs(cfg, ("counts", "vocab", "docs", "coef"))
    fmt.write_projection(cfg.paths["out"], proj, ids, {"inputs": inputs})
    return 0


def cmd_predict(args) -> int:
    from .forward import fit_forward, forward_design

    cfg = _resolve(args)
    counts, vocab, ids = _read_corpus(cfg)
    attrs = _read_attrs(cfg.paths["attrs"], ids, cfg.controls)
    model = fmt.read_coefficients(cfg.paths["coef"])
    fm = fit_forward(project(model, counts), attrs, counts.doc_totals, args.target)
    new = (args.new_counts, args.new_docs, args.new_attrs)
    if any(new) and not all(new):
        raise UsageError("--new-counts, --new-docs and --new-attrs go together")
    if all(new):
        nids, _ = fmt.read_doc_totals(args.new_docs)
        counts, _, ids = fmt.read_triplets(args.new_counts, vocab, nids)
        attrs = _read_attrs(args.new_attrs, ids, cfg.controls)
    z = project(model, counts).column(args.target)
    X, cols = forward_design(attrs, counts.doc_totals, z, args.target)
    yhat = fm.predict(X, cols)
    head = f"#forward\t{json.dumps(dict(zip(fm.columns, map(float, fm.coef))), sort_keys=True)}\n"
    head += f"#intercept\t{fm.intercept!r}\ndoc_id\t{args.target}_hat\n"
    fmt.atomic_write(cfg.paths["out"], head + "".join(f"{d}\t{v!r}\n" for d, v in zip(ids, yhat.tolist())))
    return 0


def cmd_effect(args) -> int:
    from .forward import TreatmentSpec, estimate_treatment_effect

    cfg = _resolve(args)
    counts, vocab, ids = _read_corpus(cfg)
    attrs = _read_attrs(cfg.paths["attrs"], ids, cfg.controls)
    spec = TreatmentSpec(args.response, args.treatment, interact_with=args.interact, gamma=args.effect_gamma)
    spec.validate(attrs)
    if args.coef:
        proj = project(fmt.read_coefficients(args.coef), counts)
    else:
        _, proj = _fit(cfg, counts, vocab, attrs)
    table = estimate_treatment_effect(spec, counts, attrs, proj)
    head = "#provenance\t" + json.dumps(table.provenance, sort_keys=True) + "\n"
    fmt.atomic_write(cfg.paths["out"], head + table.format())
    sys.stdout.write(table.format())
    return 0


def cmd_oos(args) -> int:
    from .experiment import oos_experiment
    from .simulate import GLASS_SEED, glass_like

    if args.folds < 2 or args.inner_folds < 2:
        raise UsageError("--folds and --inner-folds must be at least 2")
    onehot, attrs = glass_like(GLASS_SEED if args.data_seed is None else args.data_seed)
    res = oos_experiment(onehot, attrs, args.folds, seed=args.seed, softmax=not args.no_softmax,
                         inner_folds=args.inner_folds)
    fmt.atomic_write(args.out, res.table())
    for lab in res.labels():
        s = res.samples(lab)
        print(f"{lab}\tmean {s.mean():.4f}\tmedian {np.median(s):.4f}")
    return 0


def cmd_bench(args) -> int:
    from .experiment import scaling_benchmark

    try:
        workers = tuple(int(w) for w in args.workers.split(","))
    except ValueError:
        raise UsageError("--workers takes a comma-separated list of integers") from None
    res = scaling_benchmark(args.n_docs, args.tokens, workers=workers, seed=args.seed)
    text = f"#cpu_count\t{res.cpu_count}\n" + res.table()
    if args.out:
        fmt.atomic_write(args.out, text)
    sys.stdout.write(text)
    return 0


_COMMANDS = {
    "tokenize": cmd_tokenize, "fit": cmd_fit, "project": cmd_project, "predict": cmd_predict,
    "effect": cmd_effect, "oos": cmd_oos, "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dmr: usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"dmr: data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"dmr: numerical error: {exc}", file=sys.stderr)
        return 4
    except DmrError as exc:
        print(f"dmr: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
