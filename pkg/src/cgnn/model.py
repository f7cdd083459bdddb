"""Encoder/decoder, loss, optimizers, and the full node-classification trainer.

The pipeline is encode -> (augment) -> dynamics to t1 -> deaugment -> decode.
Per-node diffusion rates are kept unconstrained and squashed through a
logistic, so the materialized rates always stay in (0, 1). Gradients flow
through the dynamics via the adjoint method (continuous variants) or a
stored-trajectory backward pass (discrete variant).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import expit

from cgnn import memtrack
from cgnn.closed_form import discrete_propagate
from cgnn.datasets import Dataset
from cgnn.dynamics import (
    AdjointGradients,
    NodeStates,
    NumericsError,
    OdeSpec,
    SolverConfig,
    adjoint_backward,
    integrate,
)
from cgnn.graph import PropagationOperator, SymNormAdj, build_sym_norm
from cgnn.spectral import (
    EIGEN_CLAMP,
    WeightSpec,
    materialize_weight,
    orthogonality_retraction,
    random_orthogonal,
)

VARIANTS = ("cgnn", "cgnn-weight", "cgnn-discrete", "cgnn-no-restart")


class ConfigError(ValueError):
    """Invalid training configuration."""


@dataclass
class TrainConfig:
    variant: str = "cgnn"
    lr: float = 5e-3
    optimizer: str = "rmsprop"
    weight_decay: float = 5e-4
    dropout: float = 0.5
    decoder_dropout: float = 0.0
    epochs: int = 400
    beta: float = 0.5
    t1: float = 12.0
    seed: int = 0
    hidden_dim: int = 16
    alpha_init: float = 0.95
    per_node_alpha: bool = True
    gamma: float = 0.5
    discrete_steps: int = 50
    solver: str = "fixed-rk4"
    step_size: float | None = None
    rtol: float = 1e-3
    atol: float = 1e-4
    max_steps: int = 1_000_000
    augment: bool = False
    row_normalize: bool = False
    encoder_relu: bool = False

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not (0.0 <= self.decoder_dropout < 1.0):
            raise ConfigError(f"decoder_dropout must lie in [0, 1), got {self.decoder_dropout}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if not (0.0 < self.beta <= 1.0):
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.t1 < 0:
            raise ConfigError(f"t1 must be nonnegative, got {self.t1}")
        if not (0.0 < self.alpha_init < 1.0):
            raise ConfigError(f"alpha_init must lie in (0, 1), got {self.alpha_init}")
        if not (0.0 < self.gamma < 1.0):
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim must be positive")
        if self.discrete_steps < 0:
            raise ConfigError("discrete_steps must be nonnegative")
        self.solver_config().validate()

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            method=self.solver,
            t1=self.t1,
            step=self.step_size,
            rtol=self.rtol,
            atol=self.atol,
            max_steps=self.max_steps,
        )

    @property
    def ode_width(self) -> int:
        return 2 * self.hidden_dim if self.augment else self.hidden_dim


@dataclass
class ModelParams:
    enc_weight: np.ndarray
    enc_bias: np.ndarray
    dec_weight: np.ndarray
    dec_bias: np.ndarray
    alpha_raw: np.ndarray
    weight_spec: WeightSpec | None = None

    def alpha(self, num_nodes: int) -> np.ndarray:
        a = expit(self.alpha_raw)
        if a.shape == (1,):
            return np.full(num_nodes, float(a[0]))
        return a

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {
            "enc_weight": self.enc_weight,
            "enc_bias": self.enc_bias,
            "dec_weight": self.dec_weight,
            "dec_bias": self.dec_bias,
            "alpha_raw": self.alpha_raw,
        }
        if self.weight_spec is not None:
            out["weight_basis"] = self.weight_spec.basis
            out["weight_eigen"] = self.weight_spec.eigen_params
        return out

    def copy(self) -> "ModelParams":
        spec = None
        if self.weight_spec is not None:
            spec = WeightSpec(
                basis=self.weight_spec.basis.copy(),
                eigen_params=self.weight_spec.eigen_params.copy(),
            )
        return ModelParams(
            enc_weight=self.enc_weight.copy(),
            enc_bias=self.enc_bias.copy(),
            dec_weight=self.dec_weight.copy(),
            dec_bias=self.dec_bias.copy(),
            alpha_raw=self.alpha_raw.copy(),
            weight_spec=spec,
        )


@dataclass
class Metrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    test_acc: float


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


def init_params(
    num_nodes: int, num_features: int, num_classes: int, cfg: TrainConfig,
    rng: np.random.Generator,
) -> ModelParams:
    d = cfg.hidden_dim

    def glorot(fan_in: int, fan_out: int) -> np.ndarray:
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, (fan_in, fan_out))

    alpha_shape = num_nodes if cfg.per_node_alpha else 1
    weight_spec = None
    if cfg.variant == "cgnn-weight":
        width = cfg.ode_width
        weight_spec = WeightSpec(
            basis=random_orthogonal(width, rng),
            eigen_params=rng.uniform(0.25, 0.75, width),
        )
    return ModelParams(
        enc_weight=glorot(num_features, d),
        enc_bias=np.zeros(d),
        dec_weight=glorot(d, num_classes),
        dec_bias=np.zeros(num_classes),
        alpha_raw=np.full(alpha_shape, _logit(cfg.alpha_init)),
        weight_spec=weight_spec,
    )


# -- forward pieces --------------------------------------------------------------


def prepare_features(data: Dataset, cfg: TrainConfig) -> np.ndarray:
    x = data.features
    if cfg.row_normalize:
        sums = x.sum(axis=1, keepdims=True)
        sums[sums == 0] = 1.0
        x = x / sums
    return x


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-scaling dropout mask: surviving entries are scaled by 1/(1-p)."""
    return (rng.random(shape) >= p) / (1.0 - p)


def encode(params: ModelParams, x: np.ndarray, drop_mask: np.ndarray | None = None,
           relu: bool = False) -> np.ndarray:
    if drop_mask is not None:
        x = x * drop_mask
    e = x @ params.enc_weight + params.enc_bias
    return np.maximum(e, 0.0) if relu else e


def decode(params: ModelParams, h: np.ndarray,
           drop_mask: np.ndarray | None = None) -> np.ndarray:
    r = np.maximum(h, 0.0)
    if drop_mask is not None:
        r = r * drop_mask
    logits = r @ params.dec_weight + params.dec_bias
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    return expl / expl.sum(axis=1, keepdims=True)


def loss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray,
         params: ModelParams, weight_decay: float) -> float:
    """Masked mean negative log-likelihood plus ridge penalty on enc/dec weights."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("loss mask is empty")
    picked = probs[mask, labels[mask]]
    nll = float(-np.mean(np.log(np.clip(picked, 1e-300, None))))
    reg = weight_decay * (
        float(np.sum(params.enc_weight**2)) + float(np.sum(params.dec_weight**2))
    )
    return nll + reg


def accuracy_from_probs(probs: np.ndarray, labels: np.ndarray, mask) -> float:
    """Fraction of masked nodes whose argmax class (ties -> lowest index) is correct."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValueError("evaluation mask is empty")
    pred = np.argmax(probs[mask], axis=1)
    return float(np.mean(pred == labels[mask]))


@dataclass
class _ForwardCache:
    x_dropped: np.ndarray
    e_pre: np.ndarray          # pre-ReLU encoder output (equals e when affine)
    e: np.ndarray              # encoder output, width d
    h_ode_final: np.ndarray    # state at t1 at full ODE width
    h: np.ndarray              # post-deaugment state, width d
    relu_h: np.ndarray
    dec_drop: np.ndarray | None
    probs: np.ndarray
    trajectory: list[np.ndarray] | None = None
    w_mat: np.ndarray | None = None


def _build_operator(params: ModelParams, sym: SymNormAdj, cfg: TrainConfig) -> PropagationOperator:
    return PropagationOperator(
        base=sym, alpha=params.alpha(sym.num_nodes), gamma=cfg.gamma
    )


def _make_ode_spec(params: ModelParams, op: PropagationOperator, e_ode: np.ndarray,
                   cfg: TrainConfig) -> OdeSpec:
    return OdeSpec(
        operator=op,
        restart=e_ode,
        weight=params.weight_spec if cfg.variant == "cgnn-weight" else None,
        use_restart=cfg.variant != "cgnn-no-restart",
    )


def forward(
    params: ModelParams,
    data: Dataset,
    cfg: TrainConfig,
    *,
    sym: SymNormAdj | None = None,
    x: np.ndarray | None = None,
    dropout_rng: np.random.Generator | None = None,
    collect: bool = False,
):
    """Class probabilities for every node; optionally the cache for backprop.

    `dropout_rng` enables the training-time dropout; evaluation passes None.
    """
    cfg.validate()
    if sym is None:
        sym = build_sym_norm(data.graph)
    if x is None:
        x = prepare_features(data, cfg)

    in_mask = None
    if dropout_rng is not None and cfg.dropout > 0.0:
        in_mask = dropout_mask(x.shape, cfg.dropout, dropout_rng)
    x_dropped = x * in_mask if in_mask is not None else x
    e_pre = x_dropped @ params.enc_weight + params.enc_bias
    e = np.maximum(e_pre, 0.0) if cfg.encoder_relu else e_pre

    e_ode = np.hstack([e, np.zeros_like(e)]) if cfg.augment else e
    op = _build_operator(params, sym, cfg)

    trajectory = None
    w_mat = None
    if cfg.t1 == 0.0 and cfg.variant != "cgnn-discrete":
        h_ode = e_ode.copy()
    elif cfg.variant == "cgnn-discrete":
        h_ode, trajectory = discrete_propagate(
            op, e_ode, None, n=cfg.discrete_steps, collect=True
        )
    else:
        spec = _make_ode_spec(params, op, e_ode, cfg)
        if spec.weight is not None:
            w_mat = materialize_weight(spec.weight)
        h_ode = integrate(spec, NodeStates(e_ode.copy()), cfg.solver_config()).h

    h = h_ode[:, : cfg.hidden_dim] if cfg.augment else h_ode

    relu_h = np.maximum(h, 0.0)
    dec_drop = None
    if dropout_rng is not None and cfg.decoder_dropout > 0.0:
        dec_drop = dropout_mask(relu_h.shape, cfg.decoder_dropout, dropout_rng)
        relu_inner = relu_h * dec_drop
    else:
        relu_inner = relu_h
    logits = relu_inner @ params.dec_weight + params.dec_bias
    logits = logits - logits.max(axis=1, keepdims=True)
    expl = np.exp(logits)
    probs = expl / expl.sum(axis=1, keepdims=True)

    if not collect:
        return probs
    return probs, _ForwardCache(
        x_dropped=x_dropped,
        e_pre=e_pre,
        e=e,
        h_ode_final=h_ode,
        h=h,
        relu_h=relu_inner,
        dec_drop=dec_drop,
        probs=probs,
        trajectory=trajectory,
        w_mat=w_mat,
    )


# -- backward ---------------------------------------------------------------------


def _discrete_backward(
    op: PropagationOperator,
    trajectory: list[np.ndarray],
    grad_out: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Backprop through H_{k+1} = A H_k + H_0 using the stored trajectory.

    Returns (d_restart_total, d_alpha); the restart gradient already includes
    the initial-state contribution since H_0 is the restart matrix here.
    """
    n = len(trajectory) - 1
    g = grad_out.copy()
    d_restart = np.zeros_like(grad_out)
    d_alpha = np.zeros(op.num_nodes)
    for k in range(n, 0, -1):
        d_restart += g
        d_alpha += (g * op.neighbor_mix(trajectory[k - 1])).sum(axis=1)
        g = op.apply_transpose(g)
        memtrack.note(g)
    d_restart += g
    return d_restart, d_alpha


def gradients(
    params: ModelParams,
    data: Dataset,
    cfg: TrainConfig,
    *,
    sym: SymNormAdj | None = None,
    x: np.ndarray | None = None,
    dropout_rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Training loss on the train mask and its gradient for every parameter."""
    if sym is None:
        sym = build_sym_norm(data.graph)
    if x is None:
        x = prepare_features(data, cfg)
    probs, cache = forward(
        params, data, cfg, sym=sym, x=x, dropout_rng=dropout_rng, collect=True
    )
    mask = data.mask("train")
    labels = data.labels
    loss_value = loss(probs, labels, mask, params, cfg.weight_decay)

    n, c = probs.shape
    d_logits = np.zeros((n, c))
    d_logits[mask] = probs[mask]
    d_logits[mask, labels[mask]] -= 1.0
    d_logits /= mask.size

    grads: dict[str, np.ndarray] = {}
    grads["dec_weight"] = cache.relu_h.T @ d_logits + 2.0 * cfg.weight_decay * params.dec_weight
    grads["dec_bias"] = d_logits.sum(axis=0)
    d_relu_inner = d_logits @ params.dec_weight.T
    if cache.dec_drop is not None:
        d_relu_inner = d_relu_inner * cache.dec_drop
    d_h = d_relu_inner * (cache.h > 0.0)

    if cfg.augment:
        d_h_ode = np.zeros_like(cache.h_ode_final)
        d_h_ode[:, : cfg.hidden_dim] = d_h
    else:
        d_h_ode = d_h

    op = _build_operator(params, sym, cfg)
    if cfg.t1 == 0.0 and cfg.variant != "cgnn-discrete":
        d_e_ode = d_h_ode
        d_alpha_vec = np.zeros(op.num_nodes)
    elif cfg.variant == "cgnn-discrete":
        d_e_ode, d_alpha_vec = _discrete_backward(op, cache.trajectory, d_h_ode)
    else:
        e_ode = np.hstack([cache.e, np.zeros_like(cache.e)]) if cfg.augment else cache.e
        spec = _make_ode_spec(params, op, e_ode, cfg)
        adj: AdjointGradients = adjoint_backward(
            spec, NodeStates(e_ode.copy()), cfg.solver_config(), d_h_ode
        )
        # The encoder output is both the restart matrix and the initial state.
        d_e_ode = adj.d_restart + adj.d_initial
        d_alpha_vec = adj.d_alpha
        if adj.d_basis is not None:
            grads["weight_basis"] = adj.d_basis
            grads["weight_eigen"] = adj.d_eigen_params

    d_e = d_e_ode[:, : cfg.hidden_dim] if cfg.augment else d_e_ode

    if cfg.encoder_relu:
        d_e = d_e * (cache.e_pre > 0.0)
    grads["enc_weight"] = cache.x_dropped.T @ d_e + 2.0 * cfg.weight_decay * params.enc_weight
    grads["enc_bias"] = d_e.sum(axis=0)

    alpha = params.alpha(op.num_nodes)
    d_alpha_raw = d_alpha_vec * alpha * (1.0 - alpha)
    if params.alpha_raw.shape == (1,):
        grads["alpha_raw"] = np.array([d_alpha_raw.sum()])
    else:
        grads["alpha_raw"] = d_alpha_raw

    return loss_value, grads


# -- optimizers --------------------------------------------------------------------


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        for name, g in grads.items():
            p = arrays[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1**self.t)
            v_hat = v / (1.0 - self.beta2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class RMSprop:
    def __init__(self, lr: float, decay: float = 0.99, eps: float = 1e-8) -> None:
        self.lr, self.decay, self.eps = lr, decay, eps
        self.sq: dict[str, np.ndarray] = {}

    def step(self, arrays: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            p = arrays[name]
            sq = self.sq.setdefault(name, np.zeros_like(p))
            sq *= self.decay
            sq += (1.0 - self.decay) * g * g
            p -= self.lr * g / (np.sqrt(sq) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(cfg.lr)
    return RMSprop(cfg.lr)


# -- training loop -----------------------------------------------------------------


@dataclass
class TrainResult:
    best_params: ModelParams
    history: list[Metrics]
    best_val_acc: float
    test_acc_at_best_val: float
    best_epoch: int


def evaluate(params: ModelParams, data: Dataset, cfg: TrainConfig, mask) -> float:
    probs = forward(params, data, cfg)
    return accuracy_from_probs(probs, data.labels, mask)


def train(data: Dataset, cfg: TrainConfig) -> TrainResult:
    """Full-batch training; deterministic given seed + config + data."""
    cfg.validate()
    data.validate()
    rng = np.random.default_rng(cfg.seed)
    params = init_params(data.num_nodes, data.num_features, data.num_classes, cfg, rng)
    sym = build_sym_norm(data.graph)
    x = prepare_features(data, cfg)
    opt = make_optimizer(cfg)

    history: list[Metrics] = []
    best_val = -1.0
    best_test = 0.0
    best_epoch = -1
    best_params = params.copy()

    for epoch in range(cfg.epochs):
        loss_value, grads = gradients(
            params, data, cfg, sym=sym, x=x, dropout_rng=rng
        )
        if not np.isfinite(loss_value):
            raise NumericsError(f"non-finite training loss at epoch {epoch}")
        opt.step(params.named_arrays(), grads)
        if params.weight_spec is not None:
            np.clip(
                params.weight_spec.eigen_params,
                EIGEN_CLAMP,
                1.0 - EIGEN_CLAMP,
                out=params.weight_spec.eigen_params,
            )
            params.weight_spec.basis = orthogonality_retraction(
                params.weight_spec.basis, cfg.beta
            )

        eval_probs = forward(params, data, cfg, sym=sym, x=x)
        metrics = Metrics(
            epoch=epoch,
            train_loss=loss_value,
            train_acc=accuracy_from_probs(eval_probs, data.labels, data.mask("train")),
            val_acc=accuracy_from_probs(eval_probs, data.labels, data.mask("val")),
            test_acc=accuracy_from_probs(eval_probs, data.labels, data.mask("test")),
        )
        history.append(metrics)
        if metrics.val_acc > best_val:
            best_val = metrics.val_acc
            best_test = metrics.test_acc
            best_epoch = epoch
            best_params = params.copy()

    return TrainResult(
        best_params=best_params,
        history=history,
        best_val_acc=best_val,
        test_acc_at_best_val=best_test,
        best_epoch=best_epoch,
    )


# -- checkpoints --------------------------------------------------------------------

_MANIFEST_NAME = "checkpoint.manifest"
_BLOB_NAME = "checkpoint.bin"


def save_checkpoint(dir_path: str | Path, params: ModelParams) -> None:
    """Manifest (name / shape / dtype per line) + one little-endian float32 blob."""
    root = Path(dir_path)
    root.mkdir(parents=True, exist_ok=True)
    arrays = params.named_arrays()
    with open(root / _MANIFEST_NAME, "w", encoding="utf-8", newline="\n") as fh:
        for name, arr in arrays.items():
            shape = ",".join(str(s) for s in arr.shape)
            fh.write(f"{name}\t{shape}\tfloat32\n")
    with open(root / _BLOB_NAME, "wb") as fh:
        for arr in arrays.values():
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(dir_path: str | Path) -> ModelParams:
    root = Path(dir_path)
    entries: list[tuple[str, tuple[int, ...]]] = []
    with open(root / _MANIFEST_NAME, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            name, shape_s, dtype = line.split("\t")
            if dtype != "float32":
                raise ValueError(f"unsupported checkpoint dtype {dtype!r}")
            shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
            entries.append((name, shape))
    blob = Path(root / _BLOB_NAME).read_bytes()
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in entries:
        count = int(np.prod(shape)) if shape else 1
        nbytes = 4 * count
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f4").astype(float)
        arrays[name] = arr.reshape(shape)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(
            f"checkpoint blob has {len(blob)} bytes, manifest describes {offset}"
        )
    weight_spec = None
    if "weight_basis" in arrays:
        weight_spec = WeightSpec(
            basis=arrays["weight_basis"], eigen_params=arrays["weight_eigen"]
        )
    return ModelParams(
        enc_weight=arrays["enc_weight"],
        enc_bias=arrays["enc_bias"],
        dec_weight=arrays["dec_weight"],
        dec_bias=arrays["dec_bias"],
        alpha_raw=arrays["alpha_raw"],
        weight_spec=weight_spec,
    )
