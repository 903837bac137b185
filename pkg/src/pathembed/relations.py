"""Relation metrics between node embeddings and their algebra.

Three backends turn an embedding pair into a relation value:

* ``2n``   -> non-negative scalar, the Euclidean distance.
* ``mlp``  -> K-vector, a one-hidden-layer perceptron over the
  concatenation of the two embeddings.
* ``vi``   -> diagonal Gaussian over K dims, an encoder applied to the
  embedding difference (mean head + log-variance head).

Relations compose along paths by summation: scalars and vectors add
elementwise, Gaussians add means and variances. The module also provides
the discrepancy between two composed relations, the diagonal-Gaussian KL,
the reparameterization map, and the ELBO used by the ``vi`` backend.

Per-pair functions are plain numpy. The ``*_t`` variants run the same
math on autodiff tensors over whole batches; tests pin the two routes to
each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pathembed.autodiff import Tensor

BACKENDS = ("2n", "mlp", "vi")
DEFAULT_HIDDEN = 128
LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0

LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeError(ValueError):
    """Raised when parameter shapes do not chain."""


@dataclass
class EmbeddingMatrix:
    """The trainable N x K node-embedding table."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ShapeError("embeddings must be a 2-D matrix")
        if not np.isfinite(self.values).all():
            raise ValueError("embeddings contain non-finite entries")

    @property
    def num_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ScalarRelation:
    value: float


@dataclass(frozen=True)
class VectorRelation:
    value: np.ndarray


@dataclass(frozen=True)
class GaussianRelation:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.var) <= 0) or not np.all(np.isfinite(self.var)):
            raise ValueError("Gaussian relation requires positive finite variances")


Relation = ScalarRelation | VectorRelation | GaussianRelation


# -- parameters ---------------------------------------------------------------


def init_metric_params(
    backend: str, k: int, rng: np.random.Generator, hidden: int = DEFAULT_HIDDEN
) -> dict[str, np.ndarray]:
    """Fan-in uniform weights, zero biases, only the groups a backend needs."""

    def linear(name, fan_in, fan_out, params):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{name}_w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        params[f"{name}_b"] = np.zeros(fan_out)

    params: dict[str, np.ndarray] = {}
    if backend == "mlp":
        linear("mlp1", 2 * k, hidden, params)
        linear("mlp2", hidden, k, params)
    elif backend == "vi":
        linear("enc1", k, hidden, params)
        linear("enc_mu", hidden, k, params)
        linear("enc_lv", hidden, k, params)
        linear("dec1", k, hidden, params)
        linear("dec2", hidden, 2 * k, params)
    elif backend != "2n":
        raise ShapeError(f"unknown backend {backend!r}")
    return params


def validate_params(backend: str, k: int, params: dict[str, np.ndarray]) -> None:
    """Check that every layer chains; raises ShapeError otherwise."""
    def check(name, fan_in, fan_out):
        w, b = params.get(f"{name}_w"), params.get(f"{name}_b")
        if w is None or b is None:
            raise ShapeError(f"missing parameter group {name!r}")
        if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
            raise ShapeError(
                f"{name}: expected {(fan_in, fan_out)}/{(fan_out,)}, "
                f"got {w.shape}/{b.shape}"
            )

    if backend == "2n":
        return
    if backend == "mlp":
        hidden = params["mlp1_w"].shape[1] if "mlp1_w" in params else 0
        check("mlp1", 2 * k, hidden)
        check("mlp2", hidden, k)
    elif backend == "vi":
        hidden = params["enc1_w"].shape[1] if "enc1_w" in params else 0
        check("enc1", k, hidden)
        check("enc_mu", hidden, k)
        check("enc_lv", hidden, k)
        check("dec1", k, hidden)
        check("dec2", hidden, 2 * k)
    else:
        raise ShapeError(f"unknown backend {backend!r}")


# -- per-pair relation functions (numpy route) --------------------------------


def g_2norm(phi_i: np.ndarray, phi_j: np.ndarray) -> ScalarRelation:
    d = np.asarray(phi_i, dtype=np.float64) - np.asarray(phi_j, dtype=np.float64)
    return ScalarRelation(float(np.sqrt((d * d).sum())))


def g_mlp(phi_i, phi_j, params: dict[str, np.ndarray]) -> VectorRelation:
    x = np.concatenate([np.asarray(phi_i, dtype=np.float64),
                        np.asarray(phi_j, dtype=np.float64)])
    if x.shape[0] != params["mlp1_w"].shape[0]:
        raise ShapeError("embedding size does not match perceptron input")
    h = np.maximum(x @ params["mlp1_w"] + params["mlp1_b"], 0.0)
    return VectorRelation(h @ params["mlp2_w"] + params["mlp2_b"])


def _encode(diff: np.ndarray, params) -> tuple[np.ndarray, np.ndarray]:
    h = np.maximum(diff @ params["enc1_w"] + params["enc1_b"], 0.0)
    mu = h @ params["enc_mu_w"] + params["enc_mu_b"]
    logvar = np.clip(h @ params["enc_lv_w"] + params["enc_lv_b"], LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def g_vi(phi_i, phi_j, params: dict[str, np.ndarray]) -> GaussianRelation:
    diff = np.asarray(phi_i, dtype=np.float64) - np.asarray(phi_j, dtype=np.float64)
    if diff.shape[0] != params["enc1_w"].shape[0]:
        raise ShapeError("embedding size does not match encoder input")
    mu, logvar = _encode(diff, params)
    rel = GaussianRelation(mu, np.exp(logvar))
    if not (np.isfinite(mu).all() and np.isfinite(rel.var).all()):
        raise FloatingPointError(f"non-finite relation for pair inputs {phi_i}, {phi_j}")
    return rel


def relation(backend: str, phi_i, phi_j, params) -> Relation:
    if backend == "2n":
        return g_2norm(phi_i, phi_j)
    if backend == "mlp":
        return g_mlp(phi_i, phi_j, params)
    if backend == "vi":
        return g_vi(phi_i, phi_j, params)
    raise ShapeError(f"unknown backend {backend!r}")


# -- relation algebra ----------------------------------------------------------


def add_relations(r1: Relation, r2: Relation) -> Relation:
    if isinstance(r1, ScalarRelation) and isinstance(r2, ScalarRelation):
        return ScalarRelation(r1.value + r2.value)
    if isinstance(r1, VectorRelation) and isinstance(r2, VectorRelation):
        return VectorRelation(r1.value + r2.value)
    if isinstance(r1, GaussianRelation) and isinstance(r2, GaussianRelation):
        return GaussianRelation(r1.mean + r2.mean, r1.var + r2.var)
    raise TypeError(f"cannot add {type(r1).__name__} and {type(r2).__name__}")


def path_sum(path, backend: str, emb: EmbeddingMatrix, params) -> Relation:
    """R_P: the relation summed over consecutive pairs along the path."""
    nodes = path.nodes if hasattr(path, "nodes") else tuple(path)
    if len(nodes) < 2:
        raise ValueError("path_sum needs at least one edge")
    total: Relation | None = None
    for a, b in zip(nodes, nodes[1:]):
        r = relation(backend, emb.values[a], emb.values[b], params)
        total = r if total is None else add_relations(total, r)
    return total


def kl_gaussian(p: GaussianRelation, q: GaussianRelation) -> float:
    """D_KL(p || q) for diagonal Gaussians, summed over dimensions."""
    ratio = p.var / q.var
    md = q.mean - p.mean
    return float(0.5 * np.sum(ratio + md * md / q.var - 1.0 + np.log(q.var / p.var)))


def discrepancy(r1: Relation, r2: Relation, symmetric: bool = False) -> float:
    """How far two composed relations disagree (0 iff they match).

    Scalars: squared difference. Vectors: squared Euclidean distance.
    Gaussians: squared KL in the given argument order, or the squared
    symmetrized KL when requested.
    """
    if isinstance(r1, ScalarRelation) and isinstance(r2, ScalarRelation):
        return float((r1.value - r2.value) ** 2)
    if isinstance(r1, VectorRelation) and isinstance(r2, VectorRelation):
        d = r1.value - r2.value
        return float((d * d).sum())
    if isinstance(r1, GaussianRelation) and isinstance(r2, GaussianRelation):
        if symmetric:
            kl = 0.5 * (kl_gaussian(r1, r2) + kl_gaussian(r2, r1))
        else:
            kl = kl_gaussian(r1, r2)
        return float(kl ** 2)
    raise TypeError(f"variant mismatch: {type(r1).__name__} vs {type(r2).__name__}")


def scalarize(rel: Relation) -> float:
    """Collapse any relation to a single comparable magnitude."""
    if isinstance(rel, ScalarRelation):
        return float(rel.value)
    if isinstance(rel, VectorRelation):
        return float(np.sqrt((rel.value * rel.value).sum()))
    if isinstance(rel, GaussianRelation):
        return float(np.sqrt((rel.mean * rel.mean).sum()))
    raise TypeError(f"unknown relation {type(rel).__name__}")


def reparameterize(rel: GaussianRelation, noise: np.ndarray) -> np.ndarray:
    """Z = mu + sigma * eps for eps of shape (K,) or (L, K)."""
    noise = np.asarray(noise, dtype=np.float64)
    return rel.mean + np.sqrt(rel.var) * noise


def elbo(
    phi_i: np.ndarray,
    phi_j: np.ndarray,
    params: dict[str, np.ndarray],
    num_samples: int = 1,
    noise: np.ndarray | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Evidence lower bound for one pair under the vi backend.

    Monte Carlo average over `num_samples` reparameterized draws of the
    unit-variance decoder log-density of the target (phi_i, phi_j)
    concatenation, minus KL(q || N(0, I)).
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    phi_i = np.asarray(phi_i, dtype=np.float64)
    phi_j = np.asarray(phi_j, dtype=np.float64)
    k = phi_i.shape[0]
    rel = g_vi(phi_i, phi_j, params)
    if noise is None:
        if rng is None:
            raise ValueError("provide noise draws or an rng")
        noise = rng.standard_normal((num_samples, k))
    noise = np.asarray(noise, dtype=np.float64).reshape(num_samples, k)

    z = reparameterize(rel, noise)                       # (L, K)
    h = np.maximum(z @ params["dec1_w"] + params["dec1_b"], 0.0)
    mean = h @ params["dec2_w"] + params["dec2_b"]       # (L, 2K)
    target = np.concatenate([phi_i, phi_j])
    sq = ((target - mean) ** 2).sum(axis=1)
    recon = -0.5 * sq - k * LOG_2PI                      # 2K dims of log N(t; m, 1)
    logvar = np.log(rel.var)
    kl = 0.5 * np.sum(rel.var + rel.mean ** 2 - 1.0 - logvar)
    return float(recon.mean() - kl)


# -- batched tensor-mode forwards (autodiff route) -----------------------------


def mlp_forward_t(x: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Batched perceptron relation: x is (M, 2K) -> (M, K)."""
    h = (x @ p["mlp1_w"] + p["mlp1_b"]).relu()
    return h @ p["mlp2_w"] + p["mlp2_b"]


def encoder_forward_t(diff: Tensor, p: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """Batched encoder: diff is (M, K) -> (mu, logvar), both (M, K)."""
    h = (diff @ p["enc1_w"] + p["enc1_b"]).relu()
    mu = h @ p["enc_mu_w"] + p["enc_mu_b"]
    logvar = (h @ p["enc_lv_w"] + p["enc_lv_b"]).clamp(LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def decoder_forward_t(z: Tensor, p: dict[str, Tensor]) -> Tensor:
    """Batched decoder: z is (M, K) -> reconstruction means (M, 2K)."""
    h = (z @ p["dec1_w"] + p["dec1_b"]).relu()
    return h @ p["dec2_w"] + p["dec2_b"]
