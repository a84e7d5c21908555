"""Retrieval and classification harnesses over frozen embeddings.

Rankings and class assignments use cosine similarity with deterministic
tie-breaking (lower index wins), so reports are identical across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, row_l2_normalize
from .data import PairedDataset
from .errors import ConfigError, CoverageError, IoError, LabelError, SampleCountError, ShapeError
from .nn import MlpParams, encode


@dataclass(frozen=True)
class RetrievalReport:
    recall_at: dict
    n_queries: int
    direction: str

    def to_json(self) -> dict:
        return {
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "n_queries": self.n_queries,
            "direction": self.direction,
        }


@dataclass(frozen=True)
class ClassificationReport:
    accuracy: float
    n_classes: int
    confusion: tuple

    def to_json(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "n_classes": self.n_classes,
            "confusion": [list(row) for row in self.confusion],
        }


def _unit_rows(z: Tensor) -> np.ndarray:
    return row_l2_normalize(z if isinstance(z, Tensor) else Tensor(z)).data


def retrieval_recall(zq: Tensor, zg: Tensor, ks, direction: str = "t2v") -> RetrievalReport:
    """Recall@k for aligned query/gallery embeddings.

    Query i's true match is gallery row i. Gallery items are ranked by
    cosine similarity, descending, ties broken toward the lower index.
    """
    if not ks:
        raise ShapeError("ks must be non-empty")
    if direction not in ("t2v", "v2t"):
        raise ShapeError(f"direction must be t2v or v2t, got {direction!r}")
    if zq.rows == 0:
        raise SampleCountError("retrieval needs at least one query")
    if zq.rows != zg.rows:
        raise ShapeError(f"query/gallery counts differ: {zq.rows} vs {zg.rows}")
    sims = _unit_rows(zq) @ _unit_rows(zg).T
    n = sims.shape[0]
    ranks = np.empty(n, dtype=np.intp)
    for i in range(n):
        order = np.argsort(-sims[i], kind="stable")
        ranks[i] = int(np.nonzero(order == i)[0][0])
    recall = {int(k): float(np.mean(ranks < int(k))) for k in ks}
    return RetrievalReport(recall_at=recall, n_queries=n, direction=direction)


def build_prototypes(zt: Tensor, labels, n_classes: int) -> Tensor:
    """Row c = normalized mean of the zt rows labeled c."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size != zt.rows:
        raise ShapeError(f"{labels.size} labels for {zt.rows} embeddings")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    means = np.empty((n_classes, zt.cols))
    for c in range(n_classes):
        members = zt.data[labels == c]
        if members.shape[0] == 0:
            raise CoverageError(f"class {c} has no samples")
        means[c] = members.mean(axis=0)
    return row_l2_normalize(Tensor(means))


def prototype_classify(zv: Tensor, prototypes: Tensor, labels) -> ClassificationReport:
    """Assign each sample to its most-cosine-similar prototype."""
    labels = np.asarray(labels, dtype=np.intp)
    if labels.size != zv.rows:
        raise ShapeError(f"{labels.size} labels for {zv.rows} embeddings")
    n_classes = prototypes.rows
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    sims = _unit_rows(zv) @ _unit_rows(prototypes).T
    preds = np.argmax(sims, axis=1)  # first max, so ties pick the lower class
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (labels, preds), 1)
    accuracy = float(np.trace(confusion)) / max(1, labels.size)
    return ClassificationReport(
        accuracy=accuracy,
        n_classes=n_classes,
        confusion=tuple(tuple(int(x) for x in row) for row in confusion),
    )


@dataclass(frozen=True)
class EvalOptions:
    """Held-out evaluation settings shared by the eval and sweep paths."""

    n_eval: int = 512
    recall_ks: tuple = (1, 5, 10)
    direction: str = "t2v"

    def __post_init__(self):
        if self.n_eval < 2:
            raise ConfigError("n_eval must be >= 2")
        if not self.recall_ks or any(k < 1 for k in self.recall_ks):
            raise ConfigError("recall_ks must be non-empty positive ints")
        if self.direction not in ("t2v", "v2t"):
            raise ConfigError(f"direction must be t2v or v2t, got {self.direction!r}")


@dataclass(frozen=True)
class EvalResult:
    retrieval: RetrievalReport
    classification: object  # ClassificationReport | None


def evaluate_encoders(
    encoder_v: MlpParams,
    encoder_t: MlpParams,
    dataset: PairedDataset,
    opts: EvalOptions,
) -> EvalResult:
    """Cross-modal retrieval plus prototype classification on one dataset.

    Retrieval uses all samples. Classification, when labels are present,
    builds prototypes from the even rows' modality-t embeddings and
    classifies the odd rows' modality-v embeddings, so no sample
    contributes to its own prototype.
    """
    zv = encode(encoder_v.frozen(), dataset.xv)
    zt = encode(encoder_t.frozen(), dataset.xt)
    if opts.direction == "t2v":
        retrieval = retrieval_recall(zt, zv, opts.recall_ks, "t2v")
    else:
        retrieval = retrieval_recall(zv, zt, opts.recall_ks, "v2t")

    classification = None
    if dataset.labels is not None:
        labels = np.asarray(dataset.labels, dtype=np.intp)
        n_classes = int(labels.max()) + 1
        # alternate each class's own occurrences between the two sides, so
        # every class appears on the prototype side regardless of layout
        seen = np.zeros(n_classes, dtype=np.intp)
        proto_mask = np.zeros(dataset.n, dtype=bool)
        for i, c in enumerate(labels):
            proto_mask[i] = seen[c] % 2 == 0
            seen[c] += 1
        query_rows = np.nonzero(~proto_mask)[0]
        if query_rows.size:
            prototypes = build_prototypes(
                Tensor(zt.data[proto_mask]), labels[proto_mask], n_classes
            )
            classification = prototype_classify(
                Tensor(zv.data[query_rows]), prototypes, labels[query_rows]
            )
    return EvalResult(retrieval=retrieval, classification=classification)


def export_embeddings(z: Tensor, path, labels=None) -> None:
    """Write embeddings as CSV with columns dim_0..dim_{d-1}[,label].

    Values are printed with 17 significant digits so a reload through the
    CSV ingestion path reproduces the float64 bits exactly.
    """
    if labels is not None and len(labels) != z.rows:
        raise ShapeError(f"{len(labels)} labels for {z.rows} embeddings")
    header = [f"dim_{j}" for j in range(z.cols)]
    if labels is not None:
        header.append("label")
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(",".join(header) + "\n")
            for i in range(z.rows):
                cells = [format(v, ".17g") for v in z.data[i]]
                if labels is not None:
                    cells.append(str(int(labels[i])))
                f.write(",".join(cells) + "\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
