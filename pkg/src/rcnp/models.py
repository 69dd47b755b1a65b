"""CNP, GNP and their relational counterparts (RCNP, RGNP, FullRCNP, FullRGNP).

All variants share one code path: build encoder input rows for a batch of
tasks, push them through the encoder MLP, aggregate contiguous blocks into one
representation per target, and decode every target in parallel.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoding
from .encoding import ComparisonFn
from .numcore import ad
from .numcore.autodiff import Var

VARIANTS = ("CNP", "GNP", "RCNP", "RGNP", "FullRCNP", "FullRGNP")
HEADS = ("meanfield", "linear", "kvv")
STD_FLOOR = 1e-3


class ModelError(ValueError):
    pass


def canonical_variant(name: str) -> str:
    for v in VARIANTS:
        if v.lower() == name.lower():
            return v
    raise ModelError(f"unknown model variant {name!r}")


@dataclass(frozen=True)
class ModelSpec:
    variant: str
    d_x: int = 1
    comparison: str | None = None
    head: str | None = None
    d_y: int = 1
    width: int = 128
    d_emb: int = 128
    # hidden-layer counts; 2 and 5 give three- and six-layer MLPs
    enc_hidden: int = 2
    dec_hidden: int = 5
    d_sigma: int = 16
    aggregate: str = "sum"
    normalize_loglik: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", canonical_variant(self.variant))
        if self.is_relational:
            if self.comparison is None:
                default = encoding.DIFFERENCE if self.variant in ("RCNP", "RGNP") else encoding.DISTANCE
                object.__setattr__(self, "comparison", default)
            ComparisonFn(self.comparison)
        elif self.comparison is not None:
            raise ModelError(f"{self.variant} takes no comparison function")
        gaussian = self.variant in ("GNP", "RGNP", "FullRGNP")
        if self.head is None:
            object.__setattr__(self, "head", "linear" if gaussian else "meanfield")
        if self.head not in HEADS:
            raise ModelError(f"unknown head {self.head!r}")
        if gaussian and self.head == "meanfield":
            raise ModelError(f"{self.variant} needs a low-rank head (linear or kvv)")
        if not gaussian and self.head != "meanfield":
            raise ModelError(f"{self.variant} uses the mean-field head")
        if self.d_y != 1:
            raise ModelError("only scalar outputs (d_y = 1) are supported")
        if self.d_sigma < 1:
            raise ModelError("d_sigma must be >= 1")
        if self.aggregate not in ("sum", "mean"):
            raise ModelError(f"unknown aggregation {self.aggregate!r}")

    @property
    def is_relational(self):
        return self.variant not in ("CNP", "GNP")

    @property
    def is_full(self):
        return self.variant.startswith("Full")

    @property
    def comparison_fn(self) -> ComparisonFn | None:
        return ComparisonFn(self.comparison) if self.is_relational else None

    def encoder_in(self) -> int:
        if not self.is_relational:
            return self.d_x + self.d_y
        dc = self.comparison_fn.d_comp(self.d_x)
        return 2 * dc + 2 * self.d_y if self.is_full else dc + self.d_y

    def decoder_in(self) -> int:
        return self.d_emb if self.is_relational else self.d_emb + self.d_x

    def decoder_out(self) -> int:
        return {"meanfield": 2, "linear": self.d_sigma + 2, "kvv": self.d_sigma + 3}[self.head]

    def layer_sizes(self) -> dict[str, list[int]]:
        return {
            "enc": [self.encoder_in()] + [self.width] * self.enc_hidden + [self.d_emb],
            "dec": [self.decoder_in()] + [self.width] * self.dec_hidden + [self.decoder_out()],
        }

    def to_dict(self):
        return asdict(self)


INIT_FACTOR = 1.0


def init(spec: ModelSpec, seed: int, factor: float = INIT_FACTOR) -> dict[str, np.ndarray]:
    """Uniform(+-sqrt(factor/fan_in)) weights and zero biases.

    ``factor=6`` is He-uniform. With sum aggregation that scale lets the
    encoding grow with the context size and the first steps produce losses
    near 1e6, so the default is the smaller ``factor=1``.
    """
    if not factor > 0:
        raise ModelError("init factor must be positive")
    rng = np.random.default_rng(seed)
    params = {}
    for prefix, sizes in spec.layer_sizes().items():
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = np.sqrt(factor / fan_in)
            params[f"{prefix}.{i}.w"] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            params[f"{prefix}.{i}.b"] = np.zeros(fan_out)
    return params


def mlp(params, prefix: str, h):
    i = 0
    while f"{prefix}.{i}.w" in params:
        h = ad.linear(h, params[f"{prefix}.{i}.w"], params[f"{prefix}.{i}.b"])
        if not np.all(np.isfinite(ad.value(h))):
            raise FloatingPointError(f"non-finite activation in layer {prefix}.{i}")
        i += 1
        if f"{prefix}.{i}.w" in params:
            h = ad.relu(h)
    if i == 0:
        raise ModelError(f"no layers named {prefix!r}")
    return h


# ---------------------------------------------------------------- predictives


@dataclass
class MeanField:
    means: object  # (M, 1)
    stds: object  # (M, 1)

    def marginals(self):
        return ad.value(self.means).reshape(-1), ad.value(self.stds).reshape(-1)

    def dense(self):
        mu, sd = self.marginals()
        return mu, np.diag(sd * sd)


@dataclass
class LowRank:
    """Mean plus covariance ``k(F) * v v^T + diag(noise_std^2)``.

    ``kind == "linear"``: k(F) = F F^T and no scales. ``kind == "kvv"``:
    k(F) is the unit-lengthscale EQ Gram of the rows of F.
    """

    mean: object  # (M,)
    factors: object  # (M, d_sigma)
    noise_std: object  # (M,)
    kind: str = "linear"
    scales: object = None  # (M,) for kvv

    def covariance(self):
        f = self.factors
        if self.kind == "linear":
            cov = ad.matmul(f, ad.transpose(f))
        else:
            v = ad.reshape(self.scales, (-1, 1))
            cov = ad.mul(ad.eq_gram(f), ad.matmul(v, ad.transpose(v)))
        return ad.add_diag(cov, ad.square(self.noise_std))

    def variances(self):
        """Diagonal of the covariance as a differentiable expression."""
        if self.kind == "linear":
            var = ad.reduce_sum(ad.square(self.factors), axis=1)
        else:
            var = ad.square(self.scales)  # the EQ Gram has a unit diagonal
        return ad.add(var, ad.square(self.noise_std))

    def marginals(self):
        cov = ad.value(self.covariance())
        return ad.value(self.mean).reshape(-1), np.sqrt(np.diagonal(cov))

    def dense(self):
        return ad.value(self.mean).reshape(-1), ad.value(self.covariance())


@dataclass
class DenseGaussian:
    mean: np.ndarray
    cov: np.ndarray

    def marginals(self):
        return np.asarray(self.mean).reshape(-1), np.sqrt(np.diagonal(self.cov))

    def dense(self):
        return np.asarray(self.mean).reshape(-1), np.asarray(self.cov)


# -------------------------------------------------------------------- forward


def _target_representations(spec: ModelSpec, params, tasks):
    """Decoder input rows for all targets of all tasks, concatenated in task order."""
    if not spec.is_relational:
        rows = np.concatenate([encoding.deepset_inputs(t.context_x, t.context_y) for t in tasks])
        offsets = np.concatenate([[0], np.cumsum([t.n_context for t in tasks])])
        emb = encoding.aggregate_blocks(mlp(params, "enc", rows), offsets, spec.aggregate)
        owner = np.repeat(np.arange(len(tasks)), [t.n_target for t in tasks])
        xs = np.concatenate([t.target_x for t in tasks])
        return ad.concat([ad.take(emb, owner), xs], axis=1)
    g = spec.comparison_fn
    build = encoding.full_inputs if spec.is_full else encoding.diag_inputs
    rows = np.concatenate([build(g, t.context_x, t.context_y, t.target_x) for t in tasks])
    block = [t.n_context**2 if spec.is_full else t.n_context for t in tasks]
    sizes = np.repeat(block, [t.n_target for t in tasks])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    return encoding.aggregate_blocks(mlp(params, "enc", rows), offsets, spec.aggregate)


def _check_tasks(spec, tasks):
    if not tasks:
        raise ModelError("empty batch")
    for t in tasks:
        if t.d_x != spec.d_x:
            raise ModelError(f"task has d_x={t.d_x} but model expects d_x={spec.d_x}")


def decode(spec: ModelSpec, params, tasks):
    """Raw decoder output, shape (sum of M, decoder_out)."""
    _check_tasks(spec, tasks)
    return mlp(params, "dec", _target_representations(spec, params, tasks))


def _positive(x):
    return ad.add(ad.softplus(x), STD_FLOOR)


def forward_batch(spec: ModelSpec, params, tasks) -> list:
    out = decode(spec, params, tasks)
    bounds = np.concatenate([[0], np.cumsum([t.n_target for t in tasks])])
    preds = []
    if spec.head == "meanfield":
        means = out[:, 0:1]
        stds = _positive(out[:, 1:2])
        for a, b in zip(bounds[:-1], bounds[1:]):
            preds.append(MeanField(means[a:b], stds[a:b]))
        return preds
    d = spec.d_sigma
    for a, b in zip(bounds[:-1], bounds[1:]):
        mean = out[a:b, 0]
        factors = out[a:b, 1 : 1 + d]
        noise = _positive(out[a:b, 1 + d])
        scales = ad.softplus(out[a:b, 2 + d]) if spec.head == "kvv" else None
        preds.append(LowRank(mean, factors, noise, spec.head, scales))
    return preds


def forward(spec: ModelSpec, params, task):
    return forward_batch(spec, params, [task])[0]


# --------------------------------------------------------------- likelihoods


def loglik(pred, target_y, joint=True):
    """Log-likelihood of the targets under a predictive.

    ``joint=False`` scores a low-rank predictive by its marginals only.
    """
    y = np.asarray(target_y, dtype=np.float64)
    if isinstance(pred, MeanField):
        y = y.reshape(ad.value(pred.means).shape)
        return ad.reduce_sum(ad.gaussian_logpdf(y, pred.means, pred.stds))
    if isinstance(pred, LowRank) and not joint:
        return ad.reduce_sum(ad.gaussian_logpdf(y.reshape(-1), pred.mean, ad.sqrt(pred.variances())))
    if isinstance(pred, LowRank):
        return ad.mvn_logpdf(y.reshape(-1), pred.mean, pred.covariance())
    if isinstance(pred, DenseGaussian):
        return ad.mvn_logpdf(y.reshape(-1), pred.mean, pred.cov)
    raise TypeError(f"unsupported predictive {type(pred).__name__}")


def nll_objective(spec: ModelSpec, params, tasks, joint=True):
    """Mean over tasks of -loglik / M (or -loglik with normalization off)."""
    preds = forward_batch(spec, params, tasks)
    total = None
    for pred, t in zip(preds, tasks):
        ll = loglik(pred, t.target_y, joint)
        if spec.normalize_loglik:
            ll = ad.mul(ll, 1.0 / t.n_target)
        total = ll if total is None else ad.add(total, ll)
    return ad.mul(total, -1.0 / len(tasks))


def value_and_grad(spec: ModelSpec, params: dict, tasks, joint=True):
    """Objective value and gradients for every parameter."""
    from .numcore import Tape

    tape = Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    loss = nll_objective(spec, leaves, tasks, joint)
    grads = tape.grad(loss, list(leaves.values()))
    return float(ad.value(loss)), dict(zip(leaves.keys(), grads))


def flatten(params: dict) -> np.ndarray:
    return np.concatenate([p.reshape(-1) for p in params.values()])


def unflatten_like(vec, template: dict) -> dict:
    """Split a flat vector (array or Var) into tensors shaped like ``template``."""
    out, i = {}, 0
    for k, p in template.items():
        n = p.size
        piece = vec[i : i + n]
        out[k] = ad.reshape(piece, p.shape) if isinstance(piece, Var) else np.asarray(piece).reshape(p.shape)
        i += n
    return out


def params_equal(a: dict, b: dict) -> bool:
    return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
