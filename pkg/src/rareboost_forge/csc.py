"""Prototype-contrastive alignment across the real and synthetic domains.

Each domain keeps a D x C bank of class prototypes. A query is scored against
every prototype of a bank by cosine similarity over a temperature, and the loss
is the negative log-softmax at the query's own class. Banks are constants
during a step (no gradient reaches them) and are refreshed afterwards by an
exponential moving average of per-class batch means.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FormatError, ShapeError, UninitializedPrototype

REAL = "real"
SYNTHETIC = "synthetic"
DOMAINS = (REAL, SYNTHETIC)
BANK_MAGIC = b"CSCB"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class CscConfig:
    dim: int
    n_classes: int
    temperature: float = 0.07
    momentum: float = 0.99
    normalize: bool = True
    # score each query only against the bank of its own domain
    mask_cross_domain: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if not self.temperature > 0:
            raise ValueError("temperature must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _check_domain(tag: str) -> str:
    if tag not in DOMAINS:
        raise ValueError(f"domain must be one of {DOMAINS}, got {tag!r}")
    return tag


@dataclass(frozen=True, eq=False)
class PrototypeBank:
    domain: str
    prototypes: np.ndarray  # (D, C)
    initialized: np.ndarray  # (C,) bool

    def __post_init__(self):
        _check_domain(self.domain)
        protos = np.array(self.prototypes, dtype=np.float64)
        init = np.array(self.initialized, dtype=bool)
        if protos.ndim != 2 or init.shape != (protos.shape[1],):
            raise ShapeError("prototypes must be D x C with one initialized flag per class")
        protos[:, ~init] = 0.0
        protos.flags.writeable = False
        init.flags.writeable = False
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "initialized", init)

    @classmethod
    def empty(cls, domain: str, cfg: CscConfig) -> "PrototypeBank":
        return cls(domain, np.zeros((cfg.dim, cfg.n_classes)), np.zeros(cfg.n_classes, bool))

    @property
    def dim(self) -> int:
        return self.prototypes.shape[0]

    @property
    def n_classes(self) -> int:
        return self.prototypes.shape[1]


@dataclass(frozen=True, eq=False)
class EmbeddingBatch:
    """Raw (pre-normalization) query rows with class ids and domain tags."""

    queries: np.ndarray
    class_ids: np.ndarray
    domains: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.queries, dtype=np.float64)
        y = np.asarray(self.class_ids, dtype=np.int64).reshape(-1)
        dom = np.asarray(self.domains, dtype=object)
        if dom.ndim == 0:
            dom = np.full(len(y), dom.item(), dtype=object)
        if q.ndim != 2 or len(q) != len(y) or len(dom) != len(y):
            raise ShapeError("queries must be N x D with N class ids and N domain tags")
        if len(y) < 1:
            raise ShapeError("a batch needs at least one row")
        for tag in set(dom):
            _check_domain(tag)
        object.__setattr__(self, "queries", q)
        object.__setattr__(self, "class_ids", y)
        object.__setattr__(self, "domains", dom)

    def __len__(self) -> int:
        return len(self.class_ids)

    def of_domain(self, domain: str) -> np.ndarray:
        return self.domains == domain


def _normalize_rows(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    return q / norms, norms


def _embed(batch: EmbeddingBatch, cfg: CscConfig) -> np.ndarray:
    if batch.queries.shape[1] != cfg.dim:
        raise ShapeError(f"queries have dim {batch.queries.shape[1]}, config expects {cfg.dim}")
    return _normalize_rows(batch.queries)[0] if cfg.normalize else batch.queries


def update_prototypes(bank: PrototypeBank, batch: EmbeddingBatch, cfg: CscConfig) -> PrototypeBank:
    """Fold the batch rows of the bank's domain into the bank.

    A class seen for the first time takes its (normalized) batch mean; later
    updates blend ``momentum * old + (1 - momentum) * mean``.
    """
    rows = batch.of_domain(bank.domain)
    if not rows.any():
        return bank
    z = _embed(batch, cfg)[rows]
    y = batch.class_ids[rows]
    protos = bank.prototypes.copy()
    init = bank.initialized.copy()
    for c in np.unique(y):
        mean = z[y == c].mean(axis=0)
        new = cfg.momentum * protos[:, c] + (1.0 - cfg.momentum) * mean if init[c] else mean
        if cfg.normalize:
            new = new / np.linalg.norm(new)
        protos[:, c] = new
        init[c] = True
    return PrototypeBank(bank.domain, protos, init)


def _log_softmax_loss(z: np.ndarray, y: np.ndarray, bank: PrototypeBank, tau: float, n: int):
    """Sum over rows of -log softmax at the true class, divided by n, and d/dz."""
    logits = z @ bank.prototypes / tau
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    s = e.sum(axis=1, keepdims=True)
    lse = top[:, 0] + np.log(s[:, 0])
    rows = np.arange(len(y))
    loss = float(np.sum(lse - logits[rows, y]) / n)
    p = e / s
    p[rows, y] -= 1.0
    return loss, (p @ bank.prototypes.T) / (tau * n)


def contrastive_loss(batch: EmbeddingBatch, bank: PrototypeBank, cfg: CscConfig) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of each query against all C prototypes of ``bank``.

    Returns the loss and its gradient with respect to the raw queries. Rows of
    the other domain get zero gradient when ``mask_cross_domain`` is set.
    """
    if bank.dim != cfg.dim or bank.n_classes != cfg.n_classes:
        raise ShapeError("bank shape does not match the config")
    y = batch.class_ids
    if y.min() < 0 or y.max() >= cfg.n_classes:
        raise ShapeError(f"class ids must lie in [0, {cfg.n_classes})")
    rows = batch.of_domain(bank.domain) if cfg.mask_cross_domain else np.ones(len(y), bool)
    grad = np.zeros_like(batch.queries)
    if not rows.any():
        return 0.0, grad
    missing = ~bank.initialized[y[rows]]
    if missing.any():
        raise UninitializedPrototype(int(y[rows][missing][0]), bank.domain)
    q = batch.queries[rows]
    if cfg.normalize:
        z, norms = _normalize_rows(q)
    else:
        z, norms = q, None
    loss, gz = _log_softmax_loss(z, y[rows], bank, cfg.temperature, int(rows.sum()))
    if cfg.normalize:
        # d z / d q = (I - z z^T) / |q|
        gz = (gz - z * np.sum(gz * z, axis=1, keepdims=True)) / norms
    grad[rows] = gz
    return loss, grad


@dataclass(frozen=True)
class CscTerms:
    seg: float
    rc: float
    sc: float

    @property
    def total(self) -> float:
        return self.seg + self.rc + self.sc


def csc_loss(batch: EmbeddingBatch, real_bank: PrototypeBank, syn_bank: PrototypeBank, cfg: CscConfig,
             seg_loss: float = 0.0, seg_grad=None, return_terms: bool = False):
    """Segmentation loss plus the contrastive losses against both banks, with summed gradients."""
    if real_bank.domain != REAL or syn_bank.domain != SYNTHETIC:
        raise ValueError("expected a real bank and a synthetic bank")
    rc, g_rc = contrastive_loss(batch, real_bank, cfg)
    sc, g_sc = contrastive_loss(batch, syn_bank, cfg)
    grad = g_rc + g_sc
    if seg_grad is not None:
        grad = grad + np.asarray(seg_grad, dtype=np.float64)
    terms = CscTerms(float(seg_loss), rc, sc)
    total = float(seg_loss) + rc + sc
    return (total, grad, terms) if return_terms else (total, grad)


def save_bank(bank: PrototypeBank) -> bytes:
    """Header (magic, D, C, domain index) then D x C little-endian float32, row-major."""
    head = _HEADER.pack(BANK_MAGIC, bank.dim, bank.n_classes, DOMAINS.index(bank.domain))
    return head + bank.prototypes.astype("<f4").tobytes(order="C")


def load_bank(blob: bytes) -> PrototypeBank:
    if len(blob) < _HEADER.size:
        raise FormatError("bank blob shorter than its header")
    magic, d, c, dom = _HEADER.unpack_from(blob)
    if magic != BANK_MAGIC:
        raise FormatError(f"bad bank magic {magic!r}")
    if dom >= len(DOMAINS):
        raise FormatError(f"bad domain index {dom}")
    body = blob[_HEADER.size:]
    if len(body) != 4 * d * c:
        raise FormatError(f"bank body has {len(body)} bytes, expected {4 * d * c}")
    protos = np.frombuffer(body, dtype="<f4").reshape(d, c).astype(np.float64)
    return PrototypeBank(DOMAINS[dom], protos, np.any(protos != 0, axis=0))


# gradient checking -----------------------------------------------------------

def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-6)
    return float(np.abs(analytic - numeric).max() / scale)


def numeric_gradient(batch: EmbeddingBatch, bank: PrototypeBank, cfg: CscConfig, h: float = 1e-5) -> np.ndarray:
    q = batch.queries
    grad = np.zeros_like(q)
    for idx in np.ndindex(q.shape):
        up, down = q.copy(), q.copy()
        up[idx] += h
        down[idx] -= h
        lp = contrastive_loss(replace(batch, queries=up), bank, cfg)[0]
        lm = contrastive_loss(replace(batch, queries=down), bank, cfg)[0]
        grad[idx] = (lp - lm) / (2 * h)
    return grad


def random_instance(rng: np.random.Generator, n_max=32, d_max=16, c_max=8, temperatures=(0.05, 0.07, 0.2)):
    """A random batch, a fully initialized bank of random domain, and its config."""
    n = int(rng.integers(1, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    c = int(rng.integers(2, c_max + 1))
    cfg = CscConfig(d, c, temperature=float(rng.choice(temperatures)))
    domain = DOMAINS[int(rng.integers(2))]
    protos = rng.normal(size=(d, c))
    protos /= np.linalg.norm(protos, axis=0)
    bank = PrototypeBank(domain, protos, np.ones(c, bool))
    doms = np.array(DOMAINS, dtype=object)[rng.integers(0, 2, n)]
    batch = EmbeddingBatch(rng.normal(size=(n, d)), rng.integers(0, c, n), doms)
    return batch, bank, cfg


def gradient_check(n_instances: int = 100, seed: int = 0, h: float = 1e-5) -> list[float]:
    """Relative errors of analytic vs. central-difference gradients on random instances."""
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n_instances):
        batch, bank, cfg = random_instance(rng)
        analytic = contrastive_loss(batch, bank, cfg)[1]
        errs.append(relative_error(analytic, numeric_gradient(batch, bank, cfg, h)))
    return errs


# toy two-domain experiment ----------------------------------------------------

@dataclass(frozen=True)
class ToyConfig:
    n_classes: int = 5
    input_dim: int = 16
    embed_dim: int = 8
    class_spread: float = 3.0
    noise: float = 1.0
    domain_offset: float = 4.0
    n_syn_per_class: int = 200
    n_real_per_class: int = 8
    n_eval_per_class: int = 200
    epochs: int = 300
    lr: float = 0.05
    temperature: float = 0.2
    momentum: float = 0.9


@dataclass(frozen=True)
class ToyRun:
    cosine: np.ndarray  # per-class cosine between real and synthetic embedding centroids
    accuracy: float  # held-out accuracy on the real domain
    losses: np.ndarray  # training objective per epoch

    @property
    def mean_cosine(self) -> float:
        return float(self.cosine.mean())


@dataclass(frozen=True)
class ToyReport:
    baseline: ToyRun  # cross-entropy only
    aligned: ToyRun  # cross-entropy plus both contrastive terms

    def to_dict(self) -> dict:
        def run(r: ToyRun):
            return {"mean_cosine": r.mean_cosine, "cosine": r.cosine.tolist(), "accuracy": r.accuracy,
                    "final_loss": float(r.losses[-1])}
        return {"cross_entropy": run(self.baseline), "cross_entropy_plus_csc": run(self.aligned)}


def _make_domains(tc: ToyConfig, rng: np.random.Generator):
    means = rng.normal(size=(tc.n_classes, tc.input_dim))
    means *= tc.class_spread / np.linalg.norm(means, axis=1, keepdims=True)
    offset = rng.normal(size=tc.input_dim)
    offset *= tc.domain_offset / np.linalg.norm(offset)

    def draw(per_class, shift):
        y = np.repeat(np.arange(tc.n_classes), per_class)
        x = means[y] + shift + tc.noise * rng.normal(size=(len(y), tc.input_dim))
        return x, y

    return {
        "syn": draw(tc.n_syn_per_class, offset),
        "real": draw(tc.n_real_per_class, 0.0),
        "syn_eval": draw(tc.n_eval_per_class, offset),
        "real_eval": draw(tc.n_eval_per_class, 0.0),
    }


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    top = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - top)
    p = e / e.sum(axis=1, keepdims=True)
    n = len(y)
    loss = float(-np.mean(np.log(p[np.arange(n), y])))
    p[np.arange(n), y] -= 1.0
    return loss, p / n


def _centroid_cosine(f_real, y_real, f_syn, y_syn, n_classes) -> np.ndarray:
    zr = _normalize_rows(f_real)[0]
    zs = _normalize_rows(f_syn)[0]
    out = np.empty(n_classes)
    for c in range(n_classes):
        a = zr[y_real == c].mean(axis=0)
        b = zs[y_syn == c].mean(axis=0)
        out[c] = a @ b / (np.linalg.norm(a) * np.linalg.norm(b))
    return out


def _train(tc: ToyConfig, data, init, use_csc: bool) -> ToyRun:
    (xs, ys), (xr, yr) = data["syn"], data["real"]
    x = np.vstack([xs, xr])
    y = np.concatenate([ys, yr])
    doms = np.array([SYNTHETIC] * len(ys) + [REAL] * len(yr), dtype=object)
    w, v, b = (a.copy() for a in init)
    cfg = CscConfig(tc.embed_dim, tc.n_classes, temperature=tc.temperature, momentum=tc.momentum)
    banks = {d: PrototypeBank.empty(d, cfg) for d in DOMAINS}
    if use_csc:
        start = EmbeddingBatch(x @ w, y, doms)
        banks = {d: update_prototypes(banks[d], start, cfg) for d in DOMAINS}
    losses = []
    for _ in range(tc.epochs):
        f = x @ w
        loss, g_logits = _cross_entropy(f @ v + b, y)
        g_f = g_logits @ v.T
        g_v = f.T @ g_logits
        g_b = g_logits.sum(axis=0)
        if use_csc:
            batch = EmbeddingBatch(f, y, doms)
            loss, g_f = csc_loss(batch, banks[REAL], banks[SYNTHETIC], cfg, loss, g_f)
            banks = {d: update_prototypes(banks[d], batch, cfg) for d in DOMAINS}
        losses.append(loss)
        w -= tc.lr * (x.T @ g_f)
        v -= tc.lr * g_v
        b -= tc.lr * g_b
    (xe, ye), (xse, yse) = data["real_eval"], data["syn_eval"]
    acc = float(np.mean(np.argmax(xe @ w @ v + b, axis=1) == ye))
    cos = _centroid_cosine(xe @ w, ye, xse @ w, yse, tc.n_classes)
    return ToyRun(cos, acc, np.asarray(losses))


def toy_alignment_experiment(tc: ToyConfig | None = None, seed: int = 0) -> ToyReport:
    """Train a linear embedder and head on many synthetic and few real samples, with and without CSC.

    Both runs share data and initial weights, so the only difference is the
    contrastive terms.
    """
    tc = tc or ToyConfig()
    rng = np.random.default_rng(seed)
    data = _make_domains(tc, rng)
    init = (0.1 * rng.normal(size=(tc.input_dim, tc.embed_dim)),
            0.1 * rng.normal(size=(tc.embed_dim, tc.n_classes)),
            np.zeros(tc.n_classes))
    return ToyReport(_train(tc, data, init, False), _train(tc, data, init, True))
