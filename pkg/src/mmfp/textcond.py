"""Text conditioning: text -> 768-d task vector -> learned low-dimensional embedding.

Two encoders produce the 768-d task vector: a signed feature-hashing encoder
over character 3-grams and word unigrams (the default), and a lookup table
loaded from an embeddings file for vectors computed elsewhere.
"""

import hashlib
import json
import logging
import re
from dataclasses import dataclass

import numpy as np

from .errors import MissingEmbeddingError, ParseError, ShapeError, ValidationError
from .nncore import Mlp

log = logging.getLogger(__name__)

TEXT_DIM = 768
DEFAULT_HEAD_HIDDEN = (256, 64)
_WORD = re.compile(r"\w+", re.UNICODE)


def _features(text):
    norm = " ".join(text.lower().split())
    padded = f" {norm} "
    feats = [f"c3:{padded[i:i + 3]}" for i in range(len(padded) - 2)]
    feats += [f"w:{w}" for w in _WORD.findall(norm)]
    return feats


class HashTextEncoder:
    """Signed hashing of character 3-grams and word unigrams into 768 bins."""

    kind = "hash"

    def __init__(self, dim=TEXT_DIM):
        self.dim = dim

    def __call__(self, text):
        if not isinstance(text, str) or not text.strip():
            raise ValidationError("text must be a non-empty string")
        v = np.zeros(self.dim)
        for f in _features(text):
            h = int.from_bytes(hashlib.blake2b(f.encode("utf-8"), digest_size=8).digest(), "little")
            v[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
        n = np.linalg.norm(v)
        if n == 0.0:
            # every feature cancelled; fall back to a single deterministic bin
            v[0] = 1.0
            return v
        return v / n

    def to_dict(self):
        return {"kind": "hash", "dim": self.dim}


class LookupTextEncoder:
    """Table of externally computed vectors; rows are L2-normalized on load.

    The vectors are serialized as supplied, so a saved encoder reloads to
    bit-identical task vectors.
    """

    kind = "lookup"

    def __init__(self, table):
        self.raw = {}
        self.table = {}
        for text, vec in table.items():
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (TEXT_DIM,):
                raise ShapeError(f"embedding for {text!r} has shape {vec.shape}, expected ({TEXT_DIM},)")
            n = np.linalg.norm(vec)
            if not np.isfinite(n) or n == 0.0:
                raise ValidationError(f"embedding for {text!r} is zero or non-finite")
            self.raw[text] = vec
            self.table[text] = vec / n

    @classmethod
    def load(cls, path):
        records = _load_records(path, ("text", "vector"))
        return cls({r["text"]: r["vector"] for r, _ in records})

    def __call__(self, text):
        try:
            return self.table[text].copy()
        except KeyError:
            raise MissingEmbeddingError(text) from None

    def to_dict(self):
        return {"kind": "lookup", "table": [{"text": t, "vector": v.tolist()} for t, v in sorted(self.raw.items())]}


def encoder_from_dict(d):
    if d["kind"] == "hash":
        return HashTextEncoder(d.get("dim", TEXT_DIM))
    if d["kind"] == "lookup":
        return LookupTextEncoder({r["text"]: r["vector"] for r in d["table"]})
    raise ValidationError(f"unknown text encoder kind {d['kind']!r}")


def encode_text(encoder, text):
    return encoder(text)


def encode_many(encoder, texts):
    return np.stack([encoder(t) for t in texts]) if texts else np.zeros((0, TEXT_DIM))


# ---------------------------------------------------------------------------
# embedding head
# ---------------------------------------------------------------------------


def make_text_head(p=3, hidden=DEFAULT_HEAD_HIDDEN, seed=0):
    return Mlp.create((TEXT_DIM, *hidden, p), seed, "text-head")


def embed_task(head, c):
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != head.spec.n_in:
        raise ShapeError(f"task vector has dim {c.shape[-1]}, head expects {head.spec.n_in}")
    return head(c)


# ---------------------------------------------------------------------------
# paraphrase and embedding files
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ParaphraseSet:
    canonical: str
    variants: tuple = ()

    @property
    def K(self):
        return len(self.variants)


def _line_of(text, pos):
    return text.count("\n", 0, pos) + 1


def _load_records(path, fields):
    """Parse a JSON list of objects, reporting the line of the first bad record."""
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if not text.strip():
        return []
    dec = json.JSONDecoder()
    try:
        doc, _ = dec.raw_decode(text, len(text) - len(text.lstrip()))
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    if not isinstance(doc, list):
        raise ParseError("top level must be a JSON list", 1)
    # Recover record start offsets for error reporting.
    starts = []
    pos = text.index("[") + 1
    for _ in doc:
        while text[pos] in " \t\r\n,":
            pos += 1
        starts.append(pos)
        _, pos = dec.raw_decode(text, pos)
    out = []
    for rec, start in zip(doc, starts):
        line = _line_of(text, start)
        if not isinstance(rec, dict) or set(rec) != set(fields):
            raise ParseError(f"record must have exactly the keys {sorted(fields)}", line)
        out.append((rec, line))
    return out


def load_paraphrases(path):
    """Map canonical text -> :class:`ParaphraseSet` from ``[{"text", "paraphrases"}]``."""
    out = {}
    for rec, line in _load_records(path, ("text", "paraphrases")):
        text, variants = rec["text"], rec["paraphrases"]
        if not isinstance(text, str) or not isinstance(variants, list) or not all(isinstance(v, str) for v in variants):
            raise ParseError("text must be a string and paraphrases a list of strings", line)
        if text in variants:
            raise ParseError(f"paraphrases of {text!r} repeat the canonical text", line)
        if text in out:
            raise ParseError(f"duplicate canonical text {text!r}", line)
        out[text] = ParaphraseSet(text, tuple(variants))
    return out


def save_paraphrases(path, paraphrases):
    """Write ``{canonical: ParaphraseSet | list[str]}`` in canonical-text order."""
    records = []
    for text in sorted(paraphrases):
        v = paraphrases[text]
        variants = list(v.variants) if isinstance(v, ParaphraseSet) else list(v)
        records.append({"text": text, "paraphrases": variants})
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(records, ensure_ascii=False, indent=1) + "\n")


def save_embeddings(path, table):
    records = [{"text": t, "vector": np.asarray(v, dtype=np.float64).tolist()} for t, v in sorted(table.items())]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(records, ensure_ascii=False) + "\n")


def paraphrase_vectors(encoder, paraphrases, texts):
    """Per text, the ``(K, 768)`` stack of its paraphrase vectors (``K`` may be 0)."""
    out = []
    for t in texts:
        ps = paraphrases.get(t) if paraphrases else None
        variants = list(ps.variants if isinstance(ps, ParaphraseSet) else (ps or []))
        out.append(encode_many(encoder, variants))
    return out
