"""Frozen text side: prompt templates and embedding providers.

Two providers exist. ``precomputed`` reads vectors produced offline by a real
clinical language model from an embedding file. ``stub`` hashes text into
vectors deterministically, so tests and CI need no model at all.

Embedding file format (UTF-8)::

    dim=<D>
    <rendered prompt>\t<v1> <v2> ... <vD>
"""

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from types import MappingProxyType

import numpy as np

from .errors import EmbeddingFormatError, MissingEmbeddingError
from .tensor import Tensor

REPORT_PREFIX = "The report of the ECG is that "
LABEL_TEMPLATES = {
    "diagnostic": "The ECG of {}, a type of diagnostic.",
    "form": "The ECG of {}, a type of form.",
    # no published rhythm wording; same pattern as the other two
    "rhythm": "The ECG of {}, a type of rhythm.",
}
TEMPLATE_KINDS = ("report", "diagnostic_label", "form_label", "rhythm_label")

_TOKEN = re.compile(r"\w+", re.UNICODE)


@dataclass(frozen=True)
class PromptedText:
    raw_text: str
    template_kind: str
    rendered: str


def render_report_prompt(text):
    if not isinstance(text, str) or not text:
        raise ValueError("report text must be a nonempty string")
    return PromptedText(text, "report", REPORT_PREFIX + text)


def render_label_prompt(label, task):
    if task not in LABEL_TEMPLATES:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(LABEL_TEMPLATES)}")
    if not isinstance(label, str) or not label:
        raise ValueError("label must be a nonempty string")
    return PromptedText(label, f"{task}_label", LABEL_TEMPLATES[task].format(label))


def _as_rendered(prompt):
    return prompt.rendered if isinstance(prompt, PromptedText) else str(prompt)


# ---------------------------------------------------------------------------
# hashing stub
# ---------------------------------------------------------------------------

def _hash_gaussian(key, dim):
    """``dim`` standard normals derived from blake2b(key); identical on every platform."""
    n_words = dim + (dim % 2)
    words = bytearray()
    counter = 0
    while len(words) < 8 * n_words:
        words += hashlib.blake2b(key + counter.to_bytes(4, "little"), digest_size=64).digest()
        counter += 1
    u = np.frombuffer(bytes(words[:8 * n_words]), dtype="<u8")
    # 53-bit uniforms in (0, 1], then Box-Muller
    u = ((u >> np.uint64(11)).astype(np.float64) + 1.0) / 9007199254740992.0
    u1, u2 = u[0::2], u[1::2]
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(n_words)
    z[0::2] = r * np.cos(2 * np.pi * u2)
    z[1::2] = r * np.sin(2 * np.pi * u2)
    return z[:dim]


@lru_cache(maxsize=65536)
def _token_vector(seed, dim, token):
    return _hash_gaussian(f"tok:{seed}:{token}".encode("utf-8"), dim)


def stub_vector(text, dim, seed=0, signature_weight=0.5):
    """Unit vector for ``text``: hashed bag of lowercase word tokens plus a whole-string signature.

    Strings sharing words land closer together (so label prompts and reports
    naming the same finding correlate); the signature term keeps distinct
    strings distinct even when their token multisets coincide.
    """
    v = signature_weight * _hash_gaussian(f"str:{seed}:{text}".encode("utf-8"), dim)
    for tok in _TOKEN.findall(text.lower()):
        v = v + _token_vector(seed, dim, tok)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

class EmbeddingProvider:
    """Immutable text-embedding source; vectors never carry gradients."""

    __slots__ = ("kind", "dimension", "_table", "stub_seed")

    def __init__(self, kind, dimension, table=None, stub_seed=0):
        if kind not in ("precomputed", "stub"):
            raise ValueError(f"unknown provider kind {kind!r}")
        if int(dimension) <= 0:
            raise ValueError("dimension must be positive")
        frozen = {}
        for key, vec in (table or {}).items():
            arr = np.array(vec, dtype=np.float64)
            if arr.shape != (int(dimension),):
                raise EmbeddingFormatError(f"vector for {key!r} has shape {arr.shape}, expected ({dimension},)")
            arr.setflags(write=False)
            frozen[key] = arr
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "dimension", int(dimension))
        object.__setattr__(self, "_table", MappingProxyType(frozen))
        object.__setattr__(self, "stub_seed", int(stub_seed))

    def __setattr__(self, name, value):
        raise AttributeError("EmbeddingProvider is frozen")

    @classmethod
    def stub(cls, dimension=128, seed=0):
        return cls("stub", dimension, stub_seed=seed)

    @property
    def table(self):
        return self._table

    def __len__(self):
        return len(self._table)

    def __contains__(self, text):
        return self.kind == "stub" or _as_rendered(text) in self._table

    def vector(self, text):
        text = _as_rendered(text)
        if self.kind == "stub":
            return stub_vector(text, self.dimension, self.stub_seed)
        try:
            return self._table[text].copy()
        except KeyError:
            raise MissingEmbeddingError([text]) from None

    def describe(self):
        return {"kind": self.kind, "dimension": self.dimension, "stub_seed": self.stub_seed}

    def __repr__(self):
        return f"EmbeddingProvider(kind={self.kind!r}, dimension={self.dimension}, size={len(self)})"


def embed(provider, prompts, dtype=np.float64):
    """Frozen embeddings ``[N, dimension]`` for rendered prompts (strings or PromptedText)."""
    texts = [_as_rendered(p) for p in prompts]
    if provider.kind == "precomputed":
        missing = [t for t in texts if t not in provider.table]
        if missing:
            raise MissingEmbeddingError(missing)
    if not texts:
        return Tensor(np.zeros((0, provider.dimension), dtype=dtype))
    return Tensor(np.stack([provider.vector(t) for t in texts]).astype(dtype))


def load_precomputed(path):
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("dim="):
        raise EmbeddingFormatError(f"{path}: first line must be 'dim=<D>'")
    try:
        dim = int(lines[0][4:])
    except ValueError:
        raise EmbeddingFormatError(f"{path}: bad dimension header {lines[0]!r}") from None
    if dim <= 0:
        raise EmbeddingFormatError(f"{path}: dimension must be positive")
    table = {}
    for i, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        key, sep, values = line.partition("\t")
        if not sep:
            raise EmbeddingFormatError(f"{path}:{i}: missing tab separator")
        parts = values.split()
        if len(parts) != dim:
            raise EmbeddingFormatError(f"{path}:{i}: expected {dim} values, got {len(parts)}")
        if key in table:
            raise EmbeddingFormatError(f"{path}:{i}: duplicate prompt {key!r}")
        try:
            table[key] = np.array([float(x) for x in parts])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:{i}: non-numeric value") from None
    return EmbeddingProvider("precomputed", dim, table)


def write_embedding_file(path, table, dim=None):
    """Write ``{rendered prompt: vector}``; floats use shortest round-trip repr."""
    rows = list(table.items())
    if dim is None:
        if not rows:
            raise ValueError("dim is required for an empty table")
        dim = len(rows[0][1])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={int(dim)}\n")
        for key, vec in rows:
            if "\t" in key or "\n" in key or "\r" in key:
                raise EmbeddingFormatError(f"prompt contains a tab or newline: {key!r}")
            vec = np.asarray(vec, dtype=np.float64)
            if vec.shape != (dim,):
                raise EmbeddingFormatError(f"vector for {key!r} has shape {vec.shape}, expected ({dim},)")
            fh.write(key + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


def provider_fingerprint(provider, prompts):
    """SHA-256 over the embeddings of ``prompts``; changes iff any vector changes."""
    h = hashlib.sha256()
    for p in prompts:
        h.update(_as_rendered(p).encode("utf-8"))
        h.update(np.ascontiguousarray(provider.vector(p), dtype="<f8").tobytes())
    return h.hexdigest()


def text_adapter(in_dim, out_dim, seed=0):
    """Fixed random map ``in_dim -> out_dim`` used when the provider width differs from D.

    Never trained; regenerated from ``seed`` and stored alongside checkpoints.
    """
    rng = np.random.default_rng([int(seed), int(in_dim), int(out_dim)])
    return rng.standard_normal((in_dim, out_dim)) / np.sqrt(out_dim)
