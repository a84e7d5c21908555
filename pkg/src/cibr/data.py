"""Synthetic paired-modality data with closed-form mutual information.

Two generator families back all quantitative verification:

* Gaussian pairs: a shared latent signal mixed into both modalities plus
  independent noise. The implied joint covariance is known exactly, so
  I(Xv; Xt) and conditional variants have closed forms to test neural
  estimates against.
* Clustered pairs: a per-class prototype projected into each modality,
  the stand-in for labeled image/text data in retrieval and
  classification harnesses.

Every generator is a pure function of its spec, including the seed, with
per-sample random streams so parallel generation cannot reorder draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import AlignmentError, ConstructionError, IllConditionedError, ParseError
from .rng import SampleStreams, stream

MAX_CONDITION = 1e12


@dataclass(frozen=True)
class GaussianPairSpec:
    """Linear-Gaussian paired source.

    Either give `rho` (per-shared-coordinate correlation, unit marginal
    variances, optional extra pure-noise dims) or explicit mixing matrices
    `mix_v`/`mix_t` with scalar noise scales. xv = A s + sv * eps_v and
    xt = B s + st * eps_t with s, eps standard normal.
    """

    n_samples: int
    seed: int
    dim_shared: int = 0
    dim_v_noise: int = 0
    dim_t_noise: int = 0
    rho: object = None
    mix_v: object = None
    mix_t: object = None
    noise_v: float = 1.0
    noise_t: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConstructionError(f"n_samples must be >= 1, got {self.n_samples}")
        if self.seed < 0:
            raise ConstructionError("seed must be non-negative")
        if (self.mix_v is None) != (self.mix_t is None):
            raise ConstructionError("mix_v and mix_t must be given together")
        if self.mix_v is not None:
            a = np.asarray(self.mix_v, dtype=np.float64)
            b = np.asarray(self.mix_t, dtype=np.float64)
            if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
                raise ConstructionError(
                    f"mixing matrices need matching latent dims, got {a.shape} and {b.shape}"
                )
            if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
                raise ConstructionError("mixing matrices must be finite")
            if self.noise_v < 0 or self.noise_t < 0:
                raise ConstructionError("noise scales must be >= 0")
            if self.rho is not None:
                raise ConstructionError("give either rho or mixing matrices, not both")
            object.__setattr__(self, "mix_v", a)
            object.__setattr__(self, "mix_t", b)
        else:
            if min(self.dim_shared, self.dim_v_noise, self.dim_t_noise) < 0:
                raise ConstructionError("dimension counts must be >= 0")
            if self.dim_shared > 0:
                if self.rho is None:
                    raise ConstructionError("rho is required when dim_shared > 0")
                rho = np.atleast_1d(np.asarray(self.rho, dtype=np.float64))
                if rho.size == 1:
                    rho = np.full(self.dim_shared, rho[0])
                if rho.size != self.dim_shared:
                    raise ConstructionError(
                        f"rho has {rho.size} entries for {self.dim_shared} shared dims"
                    )
                if np.any(np.abs(rho) >= 1.0):
                    raise ConstructionError("each rho must lie in (-1, 1)")
                object.__setattr__(self, "rho", tuple(float(r) for r in rho))
            if self.dims_v == 0 or self.dims_t == 0:
                raise ConstructionError("each modality needs at least one dimension")
        # generative by construction, so PSD can only fail on pathological input
        w = np.linalg.eigvalsh(self.joint_covariance())
        if w.min() < -1e-9 * max(1.0, w.max()):
            raise ConstructionError("implied joint covariance is not positive semidefinite")

    @property
    def dims_v(self) -> int:
        if self.mix_v is not None:
            return self.mix_v.shape[0]
        return self.dim_shared + self.dim_v_noise

    @property
    def dims_t(self) -> int:
        if self.mix_t is not None:
            return self.mix_t.shape[0]
        return self.dim_shared + self.dim_t_noise

    def _canonical(self):
        """(A, B, sv_vec, st_vec) with A: dv x k, B: dt x k."""
        if self.mix_v is not None:
            dv, dt = self.mix_v.shape[0], self.mix_t.shape[0]
            return (
                self.mix_v,
                self.mix_t,
                np.full(dv, float(self.noise_v)),
                np.full(dt, float(self.noise_t)),
            )
        k, dv, dt = self.dim_shared, self.dims_v, self.dims_t
        rho = np.asarray(self.rho if k else (), dtype=np.float64)
        a = np.zeros((dv, k))
        b = np.zeros((dt, k))
        sv = np.ones(dv)
        st = np.ones(dt)
        for i in range(k):
            a[i, i] = math.sqrt(abs(rho[i]))
            b[i, i] = math.copysign(math.sqrt(abs(rho[i])), rho[i]) if rho[i] else 0.0
            sv[i] = math.sqrt(1.0 - abs(rho[i]))
            st[i] = math.sqrt(1.0 - abs(rho[i]))
        return a, b, sv, st

    def joint_covariance(self) -> np.ndarray:
        """Implied covariance of the stacked (Xv, Xt) vector."""
        a, b, sv, st = self._canonical()
        top = np.hstack([a @ a.T + np.diag(sv**2), a @ b.T])
        bot = np.hstack([b @ a.T, b @ b.T + np.diag(st**2)])
        return np.vstack([top, bot])


@dataclass(frozen=True)
class ClusteredPairSpec:
    """Per-class shared prototype observed through two random projections."""

    n_classes: int
    dim_v: int
    dim_t: int
    class_separation: float
    noise_scale: float
    n_per_class: int
    seed: int

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConstructionError(f"need >= 2 classes, got {self.n_classes}")
        if self.dim_v < 1 or self.dim_t < 1:
            raise ConstructionError("modality dims must be >= 1")
        if self.class_separation <= 0:
            raise ConstructionError("class_separation must be > 0")
        if self.noise_scale < 0:
            raise ConstructionError("noise_scale must be >= 0")
        if self.n_per_class < 1:
            raise ConstructionError("n_per_class must be >= 1")
        if self.seed < 0:
            raise ConstructionError("seed must be non-negative")

    @property
    def n_samples(self) -> int:
        return self.n_classes * self.n_per_class


@dataclass(frozen=True)
class FileDataSpec:
    """Paired feature CSVs on disk, labels optional."""

    path_v: str
    path_t: str
    path_labels: object = None


@dataclass
class PairedDataset:
    """N aligned samples from two modalities, labels optional."""

    xv: Tensor
    xt: Tensor
    labels: object = None
    provenance: dict = None

    def __post_init__(self):
        if self.xv.rows != self.xt.rows:
            raise AlignmentError(
                f"modalities disagree on sample count: {self.xv.rows} vs {self.xt.rows}"
            )
        if self.labels is not None and len(self.labels) != self.xv.rows:
            raise AlignmentError(
                f"{len(self.labels)} labels for {self.xv.rows} samples"
            )

    @property
    def n(self) -> int:
        return self.xv.rows

    def manifest(self) -> dict:
        return {
            "n": self.n,
            "dim_v": self.xv.cols,
            "dim_t": self.xt.cols,
            "has_labels": self.labels is not None,
            "provenance": self.provenance,
        }


def subset(ds: PairedDataset, indices) -> PairedDataset:
    """Row-subset of a dataset, preserving alignment and labels."""
    idx = np.asarray(indices, dtype=np.intp)
    labels = None if ds.labels is None else [ds.labels[i] for i in idx]
    return PairedDataset(
        xv=Tensor(ds.xv.data[idx]),
        xt=Tensor(ds.xt.data[idx]),
        labels=labels,
        provenance=ds.provenance,
    )


def gen_gaussian_pairs(spec: GaussianPairSpec) -> PairedDataset:
    """Sample the linear-Gaussian pair model, one stream per sample."""
    a, b, sv, st = spec._canonical()
    k = a.shape[1]
    dv, dt = spec.dims_v, spec.dims_t
    xv = np.empty((spec.n_samples, dv))
    xt = np.empty((spec.n_samples, dt))
    streams = SampleStreams(spec.seed, "data")
    for i in range(spec.n_samples):
        g = streams.generator(i)
        s = g.standard_normal(k)
        ev = g.standard_normal(dv)
        et = g.standard_normal(dt)
        xv[i] = a @ s + sv * ev
        xt[i] = b @ s + st * et
    prov = {"kind": "gaussian", "seed": spec.seed, "n": spec.n_samples,
            "dim_v": dv, "dim_t": dt}
    return PairedDataset(xv=Tensor(xv), xt=Tensor(xt), labels=None, provenance=prov)


def gen_mvn(cov, n_samples: int, seed: int) -> Tensor:
    """Zero-mean multivariate normal samples, one stream per sample.

    Accepts any symmetric positive-semidefinite covariance; used to realize
    (Z, X, X') triples with a prescribed joint distribution.
    """
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConstructionError(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ConstructionError("covariance must be symmetric")
    w, vecs = np.linalg.eigh(cov)
    if w.min() < -1e-9 * max(1.0, w.max()):
        raise ConstructionError("covariance is not positive semidefinite")
    root = vecs @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
    d = cov.shape[0]
    out = np.empty((n_samples, d))
    streams = SampleStreams(seed, "mvn")
    for i in range(n_samples):
        out[i] = root @ streams.generator(i).standard_normal(d)
    return Tensor(out)


def gen_clustered_pairs(spec: ClusteredPairSpec) -> PairedDataset:
    """Sample the clustered pair model; labels interleave as i mod C.

    Prototypes are a seed-random orthonormal frame scaled by
    class_separation, so every pair of classes is equally far apart and
    the prototype matrix has full row rank by construction.
    """
    latent = spec.n_classes
    raw = stream(spec.seed, "proto").standard_normal((latent, spec.n_classes))
    q, r = np.linalg.qr(raw)
    protos = (q * np.sign(np.diag(r))).T * spec.class_separation
    if np.linalg.matrix_rank(protos) < spec.n_classes:
        raise ConstructionError("class prototype matrix is rank-deficient")
    proj_v = stream(spec.seed, "proj_v").standard_normal((spec.dim_v, latent)) / math.sqrt(latent)
    proj_t = stream(spec.seed, "proj_t").standard_normal((spec.dim_t, latent)) / math.sqrt(latent)

    n = spec.n_samples
    xv = np.empty((n, spec.dim_v))
    xt = np.empty((n, spec.dim_t))
    labels = []
    streams = SampleStreams(spec.seed, "data")
    for i in range(n):
        c = i % spec.n_classes
        g = streams.generator(i)
        xv[i] = proj_v @ protos[c] + spec.noise_scale * g.standard_normal(spec.dim_v)
        xt[i] = proj_t @ protos[c] + spec.noise_scale * g.standard_normal(spec.dim_t)
        labels.append(c)
    prov = {"kind": "clustered", "seed": spec.seed, "n": n,
            "dim_v": spec.dim_v, "dim_t": spec.dim_t, "n_classes": spec.n_classes}
    return PairedDataset(xv=Tensor(xv), xt=Tensor(xt), labels=labels, provenance=prov)


# -- closed-form oracles -------------------------------------------------------


def _checked_cov(cov: np.ndarray, what: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
        raise ConstructionError(f"{what} must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, atol=1e-10):
        raise ConstructionError(f"{what} must be symmetric")
    if np.linalg.cond(cov) > MAX_CONDITION or np.linalg.eigvalsh(cov).min() <= 0:
        raise IllConditionedError(f"{what} is singular or near-singular")
    return cov


def gaussian_mi_cov(cov, dims: tuple) -> float:
    """I(U; V) in nats for a joint Gaussian split into blocks of size dims."""
    du, dv = dims
    cov = _checked_cov(cov, "joint covariance")
    if du + dv != cov.shape[0]:
        raise ConstructionError(f"block dims {dims} do not tile a {cov.shape[0]}-dim covariance")
    _, ld_u = np.linalg.slogdet(cov[:du, :du])
    _, ld_v = np.linalg.slogdet(cov[du:, du:])
    _, ld = np.linalg.slogdet(cov)
    return 0.5 * (ld_u + ld_v - ld)


def gaussian_mi(spec: GaussianPairSpec) -> float:
    """Closed-form I(Xv; Xt) of the spec's implied joint covariance."""
    return gaussian_mi_cov(spec.joint_covariance(), (spec.dims_v, spec.dims_t))


def gaussian_conditional_mi(cov, dims: tuple) -> float:
    """I(Z; X | X') for a joint Gaussian over (Z, X, X').

    `dims` gives the block sizes (dz, dx, dxc) in that order. Uses the
    determinant identity
    I(Z;X|X') = 1/2 ln( det S_{Z,X'} det S_{X,X'} / (det S_{X'} det S) ).
    """
    dz, dx, dxc = dims
    cov = _checked_cov(cov, "joint covariance")
    if dz + dx + dxc != cov.shape[0]:
        raise ConstructionError(f"block dims {dims} do not tile a {cov.shape[0]}-dim covariance")
    iz = np.arange(dz)
    ix = np.arange(dz, dz + dx)
    ic = np.arange(dz + dx, dz + dx + dxc)

    def logdet(idx):
        sub = cov[np.ix_(idx, idx)]
        if np.linalg.cond(sub) > MAX_CONDITION:
            raise IllConditionedError("covariance block is near-singular")
        _, ld = np.linalg.slogdet(sub)
        return ld

    zc = np.concatenate([iz, ic])
    xc = np.concatenate([ix, ic])
    return 0.5 * (logdet(zc) + logdet(xc) - logdet(ic) - logdet(np.arange(cov.shape[0])))


# -- CSV ingestion --------------------------------------------------------------


def _read_numeric_csv(path, what: str):
    """Parse a comma-separated numeric file; auto-detects one header row.

    Returns (matrix rows as lists, header or None). Cell coordinates in
    errors are 0-based over data rows (header excluded) and columns.
    """
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.rstrip("\n").rstrip("\r") for ln in f]
    while lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError(f"{what} file {path} is empty")

    header = None
    first = lines[0].split(",")
    try:
        [float(c) for c in first]
    except ValueError:
        header = [c.strip() for c in first]
        lines = lines[1:]

    rows = []
    width = None
    for r, line in enumerate(lines):
        cells = line.split(",")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise ParseError(f"{what} row {r} has {len(cells)} cells, expected {width}")
        parsed = []
        for c, cell in enumerate(cells):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ParseError(
                    f"{what} cell at row {r} col {c} is not a number: {cell.strip()!r}"
                ) from None
        rows.append(parsed)
    if not rows:
        raise ParseError(f"{what} file {path} has a header but no data rows")
    return rows, header


def load_paired_csv(path_v, path_t, path_labels=None) -> PairedDataset:
    """Load aligned per-modality feature CSVs (and optionally labels)."""
    rows_v, _ = _read_numeric_csv(path_v, "modality-v")
    rows_t, _ = _read_numeric_csv(path_t, "modality-t")
    if len(rows_v) != len(rows_t):
        raise AlignmentError(
            f"row counts differ: {path_v} has {len(rows_v)}, {path_t} has {len(rows_t)}"
        )
    labels = None
    if path_labels is not None:
        rows_l, _ = _read_numeric_csv(path_labels, "labels")
        if len(rows_l) != len(rows_v):
            raise AlignmentError(
                f"row counts differ: features have {len(rows_v)}, labels have {len(rows_l)}"
            )
        labels = []
        for r, row in enumerate(rows_l):
            if len(row) != 1 or row[0] != int(row[0]):
                raise ParseError(f"labels row {r} must hold a single integer")
            labels.append(int(row[0]))
    prov = {"kind": "file", "path_v": str(path_v), "path_t": str(path_t),
            "path_labels": None if path_labels is None else str(path_labels)}
    return PairedDataset(
        xv=Tensor(np.array(rows_v)),
        xt=Tensor(np.array(rows_t)),
        labels=labels,
        provenance=prov,
    )
