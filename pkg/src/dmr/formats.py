"""Plain-text artifact formats, atomic writes and content hashes.

Every float is written with ``repr`` so that reading a file back gives the
identical binary value.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .counts import CONTROL, TARGET, AttributeTable, SparseCounts, Vocabulary, build_counts
from .engine import DmrModel
from .errors import FormatError, ShapeMismatch
from .projection import SrProjection

INTERCEPT = "(intercept)"
COEF_MAGIC = "#dmr-coefficients 1"
PROJ_MAGIC = "#dmr-projection 1"


def atomic_write(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def input_hashes(paths: Iterable) -> dict[str, str]:
    return {Path(p).name: file_hash(p) for p in paths if p is not None}


def read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except FileNotFoundError:
        raise FormatError(f"no such file: {path}") from None


def _check_token(tok: str) -> None:
    if not tok or "\t" in tok or "|" in tok or "\n" in tok:
        raise FormatError(f"token {tok!r} is empty or contains a reserved character")


# --------------------------------------------------------------------------
# counts, vocabulary, documents


def format_triplets(counts: SparseCounts, vocab: Vocabulary, doc_ids=None) -> str:
    """``token<TAB>doc_id|count`` per stored cell, token-major."""
    if len(vocab) != counts.n_tokens:
        raise ShapeMismatch("vocabulary size does not match the counts")
    ids = np.arange(counts.n_docs) if doc_ids is None else np.asarray(doc_ids)
    out = []
    for j, tok in enumerate(vocab.tokens):
        _check_token(tok)
        rows, vals = counts.column(j)
        out.extend(f"{tok}\t{ids[i]}|{c}\n" for i, c in zip(rows.tolist(), vals.tolist()))
    return "".join(out)


def write_triplets(path, counts: SparseCounts, vocab: Vocabulary, doc_ids=None) -> None:
    atomic_write(path, format_triplets(counts, vocab, doc_ids))


def read_triplets(path, vocab: Vocabulary | None = None, doc_ids=None) -> tuple[SparseCounts, Vocabulary, np.ndarray]:
    """Parse a triplet file.

    Without ``vocab`` tokens are indexed in order of first appearance;
    without ``doc_ids`` rows are the sorted distinct document ids seen.
    Tokens or documents absent from the given vocabulary or id list are
    format errors.
    """
    recs = []
    for ln, line in enumerate(read_lines(path), 1):
        if not line:
            continue
        try:
            tok, rest = line.split("\t")
            doc, cnt = rest.split("|")
            recs.append((tok, int(doc), int(cnt)))
        except ValueError:
            raise FormatError(f"{path}:{ln}: expected 'token<TAB>doc_id|count', got {line!r}") from None
    if vocab is None:
        seen: dict[str, None] = {}
        for tok, _, _ in recs:
            seen.setdefault(tok)
        vocab = Vocabulary(tuple(seen))
    if doc_ids is None:
        doc_ids = np.array(sorted({d for _, d, _ in recs}), dtype=np.int64)
    doc_ids = np.asarray(doc_ids, dtype=np.int64)
    t_index = vocab.index()
    d_index = {int(d): i for i, d in enumerate(doc_ids)}
    trip = []
    for tok, doc, cnt in recs:
        if tok not in t_index:
            raise FormatError(f"{path}: token {tok!r} is not in the vocabulary")
        if doc not in d_index:
            raise FormatError(f"{path}: document {doc} is not in the document list")
        trip.append((d_index[doc], t_index[tok], cnt))
    return build_counts(trip, len(doc_ids), len(vocab)), vocab, doc_ids


def write_vocabulary(path, vocab: Vocabulary) -> None:
    for tok in vocab.tokens:
        _check_token(tok)
    atomic_write(path, "".join(f"{t}\n" for t in vocab.tokens))


def read_vocabulary(path) -> Vocabulary:
    return Vocabulary(tuple(ln for ln in read_lines(path) if ln))


def write_doc_totals(path, doc_ids, totals) -> None:
    atomic_write(path, "doc_id\tm\n" + "".join(f"{d}\t{m}\n" for d, m in zip(doc_ids, totals)))


def read_doc_totals(path) -> tuple[np.ndarray, np.ndarray]:
    lines = read_lines(path)
    if not lines or lines[0] != "doc_id\tm":
        raise FormatError(f"{path}: expected header 'doc_id<TAB>m'")
    ids, ms = [], []
    for ln, line in enumerate(lines[1:], 2):
        try:
            d, m = line.split("\t")
            ids.append(int(d))
            ms.append(int(m))
        except ValueError:
            raise FormatError(f"{path}:{ln}: bad record {line!r}") from None
    return np.array(ids, dtype=np.int64), np.array(ms, dtype=np.int64)


# --------------------------------------------------------------------------
# attributes


def write_attributes(path, doc_ids, attrs: AttributeTable) -> None:
    head = ""
    if attrs.controls:
        head = "#controls\t" + "\t".join(attrs.names[k] for k in attrs.controls) + "\n"
    head += "doc_id\t" + "\t".join(attrs.names) + "\n"
    body = "".join(
        f"{d}\t" + "\t".join(repr(float(v)) for v in row) + "\n" for d, row in zip(doc_ids, attrs.values)
    )
    atomic_write(path, head + body)


def read_attributes(path, controls: Sequence[str] | None = None) -> tuple[np.ndarray, AttributeTable]:
    """Read ``doc_id<TAB>name...`` rows.

    Control columns come from ``controls`` if given, else from an optional
    leading ``#controls<TAB>name...`` line.
    """
    lines = [ln for ln in read_lines(path) if ln]
    sidecar: list[str] = []
    while lines and lines[0].startswith("#"):
        parts = lines.pop(0).split("\t")
        if parts[0] == "#controls":
            sidecar = parts[1:]
    if not lines:
        raise FormatError(f"{path}: missing header")
    header = lines[0].split("\t")
    if header[0] != "doc_id" or len(header) < 2:
        raise FormatError(f"{path}: header must start with doc_id and name at least one column")
    names = tuple(header[1:])
    ctrl = set(controls if controls is not None else sidecar)
    unknown = ctrl - set(names)
    if unknown:
        raise FormatError(f"{path}: unknown control columns {sorted(unknown)}")
    ids, vals = [], []
    for ln, line in enumerate(lines[1:], 2):
        parts = line.split("\t")
        if len(parts) != len(header):
            raise FormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(parts)}")
        try:
            ids.append(int(parts[0]))
            vals.append([float(x) for x in parts[1:]])
        except ValueError:
            raise FormatError(f"{path}:{ln}: non-numeric field") from None
    part = tuple(CONTROL if nm in ctrl else TARGET for nm in names)
    V = np.array(vals, dtype=np.float64).reshape(len(ids), len(names))
    return np.array(ids, dtype=np.int64), AttributeTable(names, V, part)


def align_rows(doc_ids, table_ids, attrs: AttributeTable) -> AttributeTable:
    """Reorder attribute rows to match ``doc_ids``."""
    pos = {int(d): i for i, d in enumerate(table_ids)}
    if len(pos) != len(table_ids):
        raise FormatError("duplicate doc_id in attribute file")
    try:
        rows = [pos[int(d)] for d in doc_ids]
    except KeyError as exc:
        raise ShapeMismatch(f"document {exc.args[0]} has no attribute row") from None
    return attrs.subset(np.array(rows, dtype=np.int64))


# --------------------------------------------------------------------------
# coefficients


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (tuple, set)):
        return list(x)
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _float_token(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


def format_coefficients(model: DmrModel, run_config: dict | None = None, inputs: dict | None = None) -> str:
    """Header block, then ``token|attribute|phi`` lines (intercepts included)."""
    tokens = model.token_names or tuple(str(j) for j in range(model.n_tokens))
    for nm in model.attribute_names:
        if "|" in nm or "\t" in nm or nm == INTERCEPT:
            raise FormatError(f"attribute name {nm!r} cannot be written")
    head = [
        COEF_MAGIC,
        "#config\t" + _json(model.config),
        "#run\t" + _json(run_config or {}),
        "#inputs\t" + _json(inputs or {}),
        "#attributes\t" + "\t".join(model.attribute_names),
        "#scaling\t" + _json([[repr(float(a)), repr(float(b))] for a, b in model.scaling]),
        "#selection\t" + model.selection,
        "#tokens\t" + str(model.n_tokens),
    ]
    for j, tok in enumerate(tokens):
        _check_token(tok)
        head.append(
            f"#token\t{tok}\t{model.status[j]}\t{_float_token(model.selected_lambda[j])}\t{model.selected_df[j]}"
        )
    L = model.loadings
    body = []
    for j, tok in enumerate(tokens):
        body.append(f"{tok}|{INTERCEPT}|{float(model.intercepts[j])!r}")
        for k, v in zip(L.indices[L.indptr[j]:L.indptr[j + 1]], L.data[L.indptr[j]:L.indptr[j + 1]]):
            body.append(f"{tok}|{model.attribute_names[k]}|{float(v)!r}")
    return "\n".join(head + body) + "\n"


def write_coefficients(path, model: DmrModel, run_config: dict | None = None, inputs: dict | None = None) -> None:
    atomic_write(path, format_coefficients(model, run_config, inputs))


def read_header(path) -> dict:
    """The ``#key<TAB>value`` lines of an artifact (JSON values decoded)."""
    out: dict = {}
    for line in read_lines(path):
        if not line.startswith("#"):
            break
        key, _, val = line[1:].partition("\t")
        if key in ("config", "run", "inputs", "scaling"):
            out[key] = json.loads(val)
        elif key != "token":
            out[key] = val
    return out


def read_coefficients(path) -> DmrModel:
    lines = read_lines(path)
    if not lines or lines[0] != COEF_MAGIC:
        raise FormatError(f"{path}: not a coefficient file")
    meta: dict = {}
    tok_info = []
    i = 1
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].partition("\t")
        if key == "token":
            tok, status, lam, df = val.split("\t")
            tok_info.append((tok, status, float(lam), int(df)))
        else:
            meta[key] = val
        i += 1
    try:
        names = tuple(meta["attributes"].split("\t")) if meta["attributes"] else ()
        config = json.loads(meta["config"])
        scaling = tuple((float(a), float(b)) for a, b in json.loads(meta["scaling"]))
        selection = meta["selection"]
    except KeyError as exc:
        raise FormatError(f"{path}: header lacks {exc.args[0]!r}") from None
    tokens = [t for t, _, _, _ in tok_info]
    if len(tokens) != int(meta.get("tokens", -1)):
        raise FormatError(f"{path}: token count mismatch")
    t_index = {t: j for j, t in enumerate(tokens)}
    a_index = {a: k for k, a in enumerate(names)}
    alpha = np.full(len(tokens), np.nan)
    rows, cols, vals = [], [], []
    for ln, line in enumerate(lines[i:], i + 1):
        if not line:
            continue
        parts = line.split("|")
        if len(parts) != 3 or parts[0] not in t_index:
            raise FormatError(f"{path}:{ln}: bad coefficient line {line!r}")
        tok, attr, val = parts
        j = t_index[tok]
        if attr == INTERCEPT:
            alpha[j] = float(val)
        elif attr in a_index:
            rows.append(a_index[attr])
            cols.append(j)
            vals.append(float(val))
        else:
            raise FormatError(f"{path}:{ln}: unknown attribute {attr!r}")
    if np.isnan(alpha).any():
        raise FormatError(f"{path}: some tokens lack an intercept")
    L = sp.csc_matrix(
        (np.array(vals, dtype=np.float64), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))),
        shape=(len(names), len(tokens)),
    )
    L.sort_indices()
    numeric = all(t == str(j) for j, t in enumerate(tokens))
    return DmrModel(
        intercepts=alpha,
        loadings=L,
        attribute_names=names,
        selection=selection,
        config=config,
        selected_lambda=np.array([lam for _, _, lam, _ in tok_info], dtype=np.float64),
        selected_df=np.array([df for _, _, _, df in tok_info], dtype=np.int64),
        status=tuple(s for _, s, _, _ in tok_info),
        token_names=None if numeric else tuple(tokens),
        scaling=scaling,
    )


# --------------------------------------------------------------------------
# projections


def format_projection(proj: SrProjection, doc_ids=None, header: dict | None = None) -> str:
    ids = np.arange(proj.n_docs) if doc_ids is None else np.asarray(doc_ids)
    names = proj.attribute_names or tuple(f"z{k}" for k in range(proj.z.shape[1]))
    lines = [PROJ_MAGIC, "#normalized\t" + str(bool(proj.normalized).real)]
    lines += [f"#{k}\t{_json(v)}" for k, v in sorted((header or {}).items())]
    lines.append("doc_id\t" + "\t".join(names))
    lines += [f"{d}\t" + "\t".join(repr(float(x)) for x in row) for d, row in zip(ids, proj.z)]
    return "\n".join(lines) + "\n"


def write_projection(path, proj: SrProjection, doc_ids=None, header: dict | None = None) -> None:
    atomic_write(path, format_projection(proj, doc_ids, header))


def read_projection(path, m=None) -> tuple[np.ndarray, SrProjection]:
    """Parse a projection file; document totals are not stored, pass them as ``m``."""
    lines = read_lines(path)
    if not lines or lines[0] != PROJ_MAGIC:
        raise FormatError(f"{path}: not a projection file")
    i, normalized = 1, False
    while i < len(lines) and lines[i].startswith("#"):
        key, _, val = lines[i][1:].partition("\t")
        if key == "normalized":
            normalized = val == "1"
        i += 1
    names = tuple(lines[i].split("\t")[1:])
    ids, rows = [], []
    for line in lines[i + 1:]:
        if line:
            parts = line.split("\t")
            ids.append(int(parts[0]))
            rows.append([float(x) for x in parts[1:]])
    z = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    m = np.zeros(len(ids)) if m is None else np.asarray(m, dtype=np.float64)
    return np.array(ids, dtype=np.int64), SrProjection(z, m, normalized, names)
