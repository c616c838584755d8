"""Zero-shot classification by prompt similarity, plus confusion-matrix metrics."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CatalogMismatchError, DegenerateEmbeddingError, DimensionError
from .encoder import embed_ecg
from .tensor import no_grad
from .text_embed import embed, render_label_prompt
from .trainer import text_targets

TASKS = ("diagnostic", "form", "rhythm", "external")
# external datasets (unseen classes) reuse the diagnostic wording
_TEMPLATE_FOR_TASK = {"diagnostic": "diagnostic", "form": "form", "rhythm": "rhythm", "external": "diagnostic"}


@dataclass(frozen=True)
class ClassCatalog:
    task: str
    labels: tuple

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        labels = tuple(self.labels)
        if not labels or any(not isinstance(x, str) or not x for x in labels):
            raise ValueError("catalog labels must be nonempty strings")
        if len(set(labels)) != len(labels):
            raise ValueError("catalog labels must be unique")
        object.__setattr__(self, "labels", labels)

    @property
    def template(self):
        return _TEMPLATE_FOR_TASK[self.task]

    def prompts(self):
        return [render_label_prompt(label, self.template) for label in self.labels]

    def index(self, label):
        return self.labels.index(label)

    def to_dict(self):
        return {"task": self.task, "labels": list(self.labels)}

    @classmethod
    def load(cls, path):
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(obj["task"], tuple(obj["labels"]))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def build_class_embeddings(catalog, provider, model=None):
    """``[K, D]`` frozen embeddings of the rendered class prompts.

    With ``model`` given they are mapped into its space (adapter applied if the
    provider width differs); otherwise the provider's raw vectors are returned.
    """
    if model is None:
        return embed(provider, catalog.prompts()).data
    return text_targets(model, provider, catalog.prompts()).data


def _unit_rows(x, what):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= 1e-12):
        raise DegenerateEmbeddingError(f"zero-norm {what}")
    return x / norms


def classify(ecg_embedding, class_embeddings, tau):
    """Softmax over cosine similarities / tau; argmax with ties to the lowest index."""
    cls = np.asarray(class_embeddings, dtype=np.float64)
    e = np.asarray(ecg_embedding, dtype=np.float64)
    if cls.ndim != 2 or cls.shape[0] < 2:
        raise DimensionError(f"need at least 2 class rows, got shape {cls.shape}")
    if e.shape != (cls.shape[1],):
        raise DimensionError(f"ECG embedding shape {e.shape} vs class width {cls.shape[1]}")
    if not tau > 0:
        raise ValueError("temperature must be positive")
    sims = np.clip(_unit_rows(cls, "class embedding") @ _unit_rows(e, "ECG embedding"), -1.0, 1.0)
    z = sims / tau
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    return p, int(np.argmax(sims))


@dataclass
class EvalReport:
    labels: tuple
    confusion: np.ndarray
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list = field(default_factory=list)
    task: str = None

    @property
    def n(self):
        return int(self.confusion.sum())

    def to_dict(self):
        return {
            "task": self.task,
            "labels": list(self.labels),
            "n": self.n,
            "confusion": self.confusion.astype(int).tolist(),
            "per_class": self.per_class,
            "macro": {
                "accuracy": self.accuracy,
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
            },
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def summary(self):
        head = f"{'Accuracy':>10} {'Precision':>10} {'Recall':>10} {'F1':>10}"
        row = (f"{self.accuracy:>10.4f} {self.macro_precision:>10.4f} "
               f"{self.macro_recall:>10.4f} {self.macro_f1:>10.4f}")
        return head + "\n" + row + "\n"


def report_from_confusion(confusion, labels=None, task=None):
    """Accuracy and macro precision/recall/F1 over classes present in the truth rows.

    Per-class precision is 0 for a never-predicted class, recall 0 for an
    absent class (excluded from the macro means anyway), F1 0 when both are 0.
    """
    c = np.asarray(confusion, dtype=np.int64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DimensionError(f"confusion must be square, got {c.shape}")
    k = c.shape[0]
    labels = tuple(labels) if labels is not None else tuple(str(i) for i in range(k))
    total = int(c.sum())
    tp = np.diag(c).astype(np.float64)
    col = c.sum(axis=0).astype(np.float64)
    row = c.sum(axis=1).astype(np.float64)
    prec = np.divide(tp, col, out=np.zeros(k), where=col > 0)
    rec = np.divide(tp, row, out=np.zeros(k), where=row > 0)
    denom = prec + rec
    f1 = np.divide(2 * prec * rec, denom, out=np.zeros(k), where=denom > 0)
    present = row > 0
    per_class = [
        {"label": labels[i], "support": int(row[i]), "precision": float(prec[i]),
         "recall": float(rec[i]), "f1": float(f1[i]), "present": bool(present[i])}
        for i in range(k)
    ]

    def macro(v):
        return float(v[present].mean()) if present.any() else 0.0

    return EvalReport(labels, c, float(tp.sum() / total) if total else 0.0,
                      macro(prec), macro(rec), macro(f1), per_class, task)


def predict(samples, model, class_embeddings, batch_size=64):
    """Predicted class index for every sample (eval-mode encoder)."""
    tau = model.temperature
    out = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            x = np.stack([getattr(s, "signal", s) for s in chunk]).astype(model.dtype)
            emb = embed_ecg(model, x, mode="eval").data
            out.extend(classify(e, class_embeddings, tau)[1] for e in emb)
    return out


def evaluate(test_split, model, catalog, provider, batch_size=64):
    """Zero-shot evaluation of single-label samples against the catalog's prompts."""
    samples = list(test_split)
    truth_labels = []
    for s in samples:
        if len(s.labels) != 1:
            raise ValueError(f"test item needs exactly one label, got {list(s.labels)}")
        truth_labels.append(s.labels[0])
    unknown = [lab for lab in truth_labels if lab not in catalog.labels]
    if unknown:
        raise CatalogMismatchError(unknown)

    class_emb = build_class_embeddings(catalog, provider, model)
    preds = predict(samples, model, class_emb, batch_size)
    k = len(catalog.labels)
    conf = np.zeros((k, k), dtype=np.int64)
    for lab, p in zip(truth_labels, preds):
        conf[catalog.index(lab), p] += 1
    return report_from_confusion(conf, catalog.labels, catalog.task)
