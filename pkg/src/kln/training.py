"""Optimizers, minibatch sampling, and the training loops.

Supervised mode copies the dataset into two independently shuffled pools and
matches true labels on one side against softmax predictions on the other
through the conditional-discrepancy loss, plus a reconstruction regularizer.
Semi-supervised mode draws the labeled side from the small labeled subset,
the other side from the full pool, and adds a confidence loss on the
unlabeled predictions.  All randomness flows through named substreams of the
run seed, so runs are bit-reproducible.
"""

import enum
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import network
from .cmmd import build_gram_pack, cmmd_gradients, cmmd_value
from .data import Dataset, class_prior, onehot, split_labeled, train_test_split
from .errors import ConfigError, DataError
from .kernels import DEFAULT_BANDWIDTHS, gaussian_mixture, linear
from .network import (
    ModelGrads,
    ModelParams,
    identity_params,
    init_params,
    model_backward,
    model_forward,
)
from .rng import substream


class Mode(enum.Enum):
    SUPERVISED = "supervised"
    SEMI_SUPERVISED = "semi"
    IDENTITY_ABLATION = "identity"
    AE_PRETRAIN_ABLATION = "ae-pretrain"


DEFAULT_LR = {"sgd": 0.02, "adam": 1e-3}


@dataclass
class TrainConfig:
    batch_size: int = 100
    lam: float = 0.01
    beta: float = 0.1
    beta1: float = 0.1
    beta2: float = 1.0
    optimizer: Optional[str] = None      # "sgd" | "adam"; default depends on mode
    lr: Optional[float] = None           # default depends on optimizer
    momentum: float = 0.9
    weight_decay: float = 0.0005
    adam_gamma1: float = 0.9
    adam_gamma2: float = 0.99
    adam_eps: float = 1e-8
    lr_schedule: tuple = ((50, 0.2), (100, 0.2), (130, 0.2))
    epochs: int = 30
    seed: int = 0
    bandwidths: tuple = DEFAULT_BANDWIDTHS
    latent_dim: int = 128
    hidden_dims: tuple = (512, 256)
    label_kernel: str = "gaussian"       # "gaussian" | "linear"
    n_labeled: int = 100                 # semi-supervised only
    validation_fraction: float = 0.0
    hard_labels: bool = False            # diagnostic: harden predictions in the label Gram

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        for name in ("beta", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.optimizer not in (None, "sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.bandwidths or any(s <= 0 for s in self.bandwidths):
            raise ConfigError(f"bandwidths must be positive, got {self.bandwidths}")
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.label_kernel not in ("gaussian", "linear"):
            raise ConfigError(f"unknown label kernel {self.label_kernel!r}")
        for e, m in self.lr_schedule:
            if e < 0 or not 0 < m <= 1:
                raise ConfigError(
                    f"lr_schedule entries need epoch >= 0 and multiplier in (0,1], got {(e, m)}"
                )
        if not 0 <= self.validation_fraction < 1:
            raise ConfigError("validation_fraction must be in [0, 1)")
        if self.n_labeled < 1:
            raise ConfigError("n_labeled must be >= 1")

    def optimizer_kind(self, mode: Mode) -> str:
        if self.optimizer is not None:
            return self.optimizer
        return "adam" if mode is Mode.SEMI_SUPERVISED else "sgd"

    def base_lr(self, mode: Mode) -> float:
        return self.lr if self.lr is not None else DEFAULT_LR[self.optimizer_kind(mode)]

    def data_spec(self):
        return gaussian_mixture(self.bandwidths)

    def label_spec(self):
        return gaussian_mixture(self.bandwidths) if self.label_kernel == "gaussian" else linear()


def schedule_multiplier(schedule, epoch) -> float:
    m = 1.0
    for e, mult in schedule:
        if epoch >= e:
            m *= mult
    return m


class SgdMomentum:
    """v <- momentum*v + (g + weight_decay*w);  w <- w - lr*v"""

    def __init__(self, lr=0.02, momentum=0.9, weight_decay=0.0005):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = None

    def step(self, params, grads, lr=None):
        rate = self.lr if lr is None else lr
        if self._velocity is None:
            self._velocity = [np.zeros_like(p) for p in params]
        if len(params) != len(self._velocity) or len(grads) != len(params):
            raise ValueError("optimizer state does not match the parameter list")
        for p, g, v in zip(params, grads, self._velocity):
            if g is None:
                continue
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p
            p -= rate * v


class Adam:
    """Standard bias-corrected recurrence; step counts are per parameter so
    masked sections keep an honest correction when they resume."""

    def __init__(self, lr=1e-3, gamma1=0.9, gamma2=0.99, eps=1e-8):
        self.lr = lr
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.eps = eps
        self._m = None
        self._v = None
        self._t = None

    def step(self, params, grads, lr=None):
        rate = self.lr if lr is None else lr
        if self._m is None:
            self._m = [np.zeros_like(p) for p in params]
            self._v = [np.zeros_like(p) for p in params]
            self._t = [0] * len(params)
        if len(params) != len(self._m) or len(grads) != len(params):
            raise ValueError("optimizer state does not match the parameter list")
        for i, (p, g) in enumerate(zip(params, grads)):
            if g is None:
                continue
            self._t[i] += 1
            t = self._t[i]
            m = self._m[i]
            v = self._v[i]
            m *= self.gamma1
            m += (1 - self.gamma1) * g
            v *= self.gamma2
            v += (1 - self.gamma2) * (g * g)
            m_hat = m / (1 - self.gamma1**t)
            v_hat = v / (1 - self.gamma2**t)
            p -= rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(config: TrainConfig, mode: Mode):
    kind = config.optimizer_kind(mode)
    lr = config.base_lr(mode)
    if kind == "sgd":
        return SgdMomentum(lr, config.momentum, config.weight_decay)
    return Adam(lr, config.adam_gamma1, config.adam_gamma2, config.adam_eps)


def _param_arrays(params: ModelParams):
    out = []
    for layers in (params.encoder, params.decoder, params.classifier):
        for layer in layers:
            out.append(layer.weight)
            out.append(layer.bias)
    return out


def _grad_arrays(params: ModelParams, grads, train_sections):
    """Flatten grads to match _param_arrays order; None entries are skipped
    by the optimizer (inactive loss path or frozen section)."""
    out = []
    for name in ("encoder", "decoder", "classifier"):
        layers = getattr(params, name)
        section = getattr(grads, name) if grads is not None else None
        active = name in train_sections and section is not None
        for i in range(len(layers)):
            if active:
                out.append(section[i][0])
                out.append(section[i][1])
            else:
                out.extend([None, None])
    return out


@dataclass(frozen=True)
class StepLosses:
    cmmd: float
    ae: float
    conf: float
    total: float


def _objective_pass(params, config, x_s, y_s, x_t, beta, beta2, prior, want_grads):
    """Shared forward (and optional backward) for both training objectives.

    Returns (StepLosses, ModelGrads | None).  Both batches ride one fused
    encoder/decoder pass (the classifier sees only the t half); fan-in of the
    discrepancy, reconstruction and confidence gradients happens at the
    latent node.  The reconstruction term is the mean summed squared error
    over the union of both batches; with beta == 0 the decoder is skipped
    entirely and the term reported as 0.
    """
    n_classes = params.n_classes
    n_s = x_s.shape[0]
    want_dec = beta > 0
    x_u = np.concatenate([x_s, x_t], axis=0)
    z_u, enc_cache = network.stack_forward(params.encoder, x_u)
    z_s = z_u[:n_s]
    z_t = z_u[n_s:]
    x_hat = dec_cache = None
    if want_dec:
        x_hat, dec_cache = network.stack_forward(params.decoder, z_u)
    probs_t, cls_cache = network.stack_forward(params.classifier, z_t)

    y_s_vec = onehot(y_s, n_classes)
    if config.hard_labels:
        y_t_vec = onehot(np.argmax(probs_t, axis=1), n_classes)
    else:
        y_t_vec = probs_t
    pack = build_gram_pack(
        config.data_spec(), config.label_spec(),
        z_s, y_s_vec, z_t, y_t_vec,
        config.lam, retain=want_grads,
    )
    val = cmmd_value(pack)

    n_union = x_u.shape[0]
    ae = float(np.sum((x_u - x_hat) ** 2) / n_union) if want_dec else 0.0
    conf = network.confidence_loss(probs_t, prior) if beta2 > 0 else 0.0
    losses = StepLosses(
        cmmd=val.total, ae=ae, conf=conf,
        total=val.total + beta * ae + beta2 * conf,
    )
    if not want_grads:
        return losses, None

    d_z_s, d_z_t, d_y_t = cmmd_gradients(pack, 1.0)
    d_probs = None if config.hard_labels else d_y_t
    if beta2 > 0:
        d_conf = beta2 * network.confidence_backward(probs_t, prior)
        d_probs = d_conf if d_probs is None else d_probs + d_conf

    d_z_u = np.concatenate([d_z_s, d_z_t], axis=0)
    dec_grads = None
    if want_dec:
        d_hat = (2.0 * beta / n_union) * (x_hat - x_u)
        d_from_dec, dec_grads = network.stack_backward(params.decoder, dec_cache, d_hat)
        d_z_u += d_from_dec
    cls_grads = None
    if d_probs is not None:
        d_from_cls, cls_grads = network.stack_backward(params.classifier, cls_cache, d_probs)
        d_z_u[n_s:] += d_from_cls
    _, enc_grads = network.stack_backward(params.encoder, enc_cache, d_z_u)
    return losses, ModelGrads(encoder=enc_grads, decoder=dec_grads, classifier=cls_grads)


def supervised_loss(params, config, x_s, y_s, x_t) -> StepLosses:
    """Pure objective value for the supervised step (used by gradient checks)."""
    losses, _ = _objective_pass(params, config, x_s, y_s, x_t,
                                beta=config.beta, beta2=0.0, prior=None, want_grads=False)
    return losses


def semi_supervised_loss(params, config, x_l, y_l, x_u, prior) -> StepLosses:
    losses, _ = _objective_pass(params, config, x_l, y_l, x_u,
                                beta=config.beta1, beta2=config.beta2, prior=prior,
                                want_grads=False)
    return losses


def supervised_step(params, optimizer, config, x_s, y_s, x_t, lr=None) -> StepLosses:
    """One labeled-vs-predicted step; the decoder sees only reconstruction
    gradients and is untouched when beta == 0."""
    losses, grads = _objective_pass(params, config, x_s, y_s, x_t,
                                    beta=config.beta, beta2=0.0, prior=None, want_grads=True)
    sections = ("encoder", "decoder", "classifier") if config.beta > 0 else ("encoder", "classifier")
    optimizer.step(_param_arrays(params), _grad_arrays(params, grads, sections), lr=lr)
    return losses


def semi_supervised_step(params, optimizer, config, x_l, y_l, x_u, prior, lr=None) -> StepLosses:
    """Labeled batch against the full-pool batch, plus the confidence loss on
    the unlabeled predictions (which touches encoder and classifier only)."""
    losses, grads = _objective_pass(params, config, x_l, y_l, x_u,
                                    beta=config.beta1, beta2=config.beta2, prior=prior,
                                    want_grads=True)
    sections = ("encoder", "decoder", "classifier") if config.beta1 > 0 else ("encoder", "classifier")
    optimizer.step(_param_arrays(params), _grad_arrays(params, grads, sections), lr=lr)
    return losses


def _ae_step(params, optimizer, config, x, lr=None) -> float:
    """Reconstruction-only step for the pretraining ablation's first phase."""
    state = model_forward(params, x, want_decoder=True, want_classifier=False)
    ae = float(np.sum((state.x - state.x_hat) ** 2) / x.shape[0])
    d_hat = (2.0 / x.shape[0]) * (state.x_hat - state.x)
    grads = model_backward(params, state, d_x_hat=d_hat)
    optimizer.step(_param_arrays(params), _grad_arrays(params, grads, ("encoder", "decoder")), lr=lr)
    return ae


def evaluate(params: ModelParams, ds: Dataset, batch=2048) -> float:
    """Fraction of argmax misclassifications; argmax ties go to the lowest class."""
    if not ds.labeled:
        raise DataError("evaluate needs a labeled dataset")
    wrong = 0
    for start in range(0, ds.n, batch):
        x = ds.x[start:start + batch]
        pred = np.argmax(network.classify(params, network.encode(params, x)), axis=1)
        wrong += int(np.sum(pred != ds.y[start:start + batch]))
    return wrong / ds.n


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    cmmd: float
    ae: float
    conf: float
    lr: float
    test_error: float


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    wall_time: float = 0.0
    val_errors: Optional[list] = None

    @property
    def best_test_error(self):
        return min((r.test_error for r in self.records), default=None)

    @property
    def final_test_error(self):
        return self.records[-1].test_error if self.records else None


REPORT_HEADER = "epoch,cmmd,ae,conf,lr,test_error"


def report_to_text(report: TrainReport) -> str:
    lines = [REPORT_HEADER]
    for r in report.records:
        lines.append(
            f"{r.epoch},{r.cmmd!r},{r.ae!r},{r.conf!r},{r.lr!r},{r.test_error!r}"
        )
    return "\n".join(lines) + "\n"


def write_report(path, report: TrainReport):
    with open(path, "w") as f:
        f.write(report_to_text(report))


def read_report(path) -> TrainReport:
    with open(path) as f:
        lines = f.read().strip().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"unrecognized report header in {path}")
    records = []
    for line in lines[1:]:
        e, cmmd, ae, conf, lr, err = line.split(",")
        records.append(EpochRecord(int(e), float(cmmd), float(ae), float(conf),
                                   float(lr), float(err)))
    return TrainReport(records=records)


class _CycleSampler:
    """Endless stream of indices cycling reshuffled permutations of a pool;
    small labeled pools are re-drawn across epochs this way."""

    def __init__(self, n, rng):
        self.n = n
        self.rng = rng
        self._perm = rng.permutation(n)
        self._cursor = 0

    def draw(self, count):
        out = []
        while count > 0:
            if self._cursor >= self.n:
                self._perm = self.rng.permutation(self.n)
                self._cursor = 0
            take = min(count, self.n - self._cursor)
            out.append(self._perm[self._cursor:self._cursor + take])
            self._cursor += take
            count -= take
        return np.concatenate(out)


def train(train_ds: Dataset, test_ds: Dataset, config: TrainConfig, mode: Mode,
          on_epoch=None):
    """Run the configured mode; returns (TrainReport, ModelParams).

    Supervised and the two ablations copy the training set into the two pools
    (independently shuffled each epoch); semi-supervised draws the labeled
    side from a class-balanced subset of size n_labeled.  The identity
    ablation classifies raw features with no encoder; the pretraining
    ablation first fits the autoencoder alone for the full epoch budget, then
    freezes it and trains only the classifier.
    """
    config.validate()
    if not isinstance(mode, Mode):
        mode = Mode(mode)
    if not train_ds.labeled:
        raise DataError("training needs a labeled dataset")
    t0 = time.perf_counter()

    val_ds = None
    if config.validation_fraction > 0:
        train_ds, val_ds = train_test_split(train_ds, config.validation_fraction, config.seed)

    n_classes = train_ds.n_classes
    init_rng = substream(config.seed, "init")
    if mode is Mode.IDENTITY_ABLATION:
        params = identity_params(train_ds.dim, n_classes, init_rng)
    else:
        params = init_params(train_ds.dim, config.hidden_dims, config.latent_dim,
                             n_classes, init_rng)

    prior = None
    labeled_ds = train_ds
    pool_ds = train_ds
    if mode is Mode.SEMI_SUPERVISED:
        labeled_ds, pool_ds = split_labeled(train_ds, config.n_labeled, config.seed)
        prior = class_prior(labeled_ds.y, n_classes)
        if np.any(prior == 0):
            warnings.warn("labeled subset is missing some class; prior re-estimated")

    base_lr = config.base_lr(mode)
    shuffle_s = substream(config.seed, "shuffle-s")
    shuffle_t = substream(config.seed, "shuffle-t")
    steps_per_epoch = max(1, pool_ds.n // config.batch_size)

    main_epochs = config.epochs
    if mode is Mode.AE_PRETRAIN_ABLATION:
        # split the epoch budget between reconstruction pretraining and the
        # frozen-encoder classifier phase so total optimizer work matches the
        # end-to-end runs
        ae_epochs = config.epochs // 2
        main_epochs = config.epochs - ae_epochs
        ae_opt = make_optimizer(config, mode)
        for epoch in range(ae_epochs):
            lr = base_lr * schedule_multiplier(config.lr_schedule, epoch)
            perm = shuffle_s.permutation(pool_ds.n)
            for step in range(steps_per_epoch):
                idx = perm[step * config.batch_size:(step + 1) * config.batch_size]
                if idx.size == 0:
                    idx = perm
                _ae_step(params, ae_opt, config, pool_ds.x[idx], lr=lr)

    optimizer = make_optimizer(config, mode)
    labeled_sampler = None
    if mode is Mode.SEMI_SUPERVISED:
        labeled_sampler = _CycleSampler(labeled_ds.n, shuffle_s)

    report = TrainReport(val_errors=[] if val_ds is not None else None)
    for epoch in range(main_epochs):
        lr = base_lr * schedule_multiplier(config.lr_schedule, epoch)
        perm_t = shuffle_t.permutation(pool_ds.n)
        perm_s = None
        if mode is not Mode.SEMI_SUPERVISED:
            perm_s = shuffle_s.permutation(pool_ds.n)
        sums = np.zeros(3)
        for step in range(steps_per_epoch):
            sl = slice(step * config.batch_size, (step + 1) * config.batch_size)
            idx_t = perm_t[sl]
            if idx_t.size == 0:
                idx_t = perm_t
            if mode is Mode.SEMI_SUPERVISED:
                idx_l = labeled_sampler.draw(min(config.batch_size, labeled_ds.n))
                losses = semi_supervised_step(
                    params, optimizer, config,
                    labeled_ds.x[idx_l], labeled_ds.y[idx_l], pool_ds.x[idx_t],
                    prior, lr=lr,
                )
            else:
                idx_s = perm_s[sl]
                if idx_s.size == 0:
                    idx_s = perm_s
                if mode is Mode.AE_PRETRAIN_ABLATION:
                    # frozen encoder: only the classifier sees updates
                    losses, grads = _objective_pass(
                        params, config, pool_ds.x[idx_s], pool_ds.y[idx_s],
                        pool_ds.x[idx_t], beta=0.0, beta2=0.0, prior=None, want_grads=True,
                    )
                    optimizer.step(_param_arrays(params),
                                   _grad_arrays(params, grads, ("classifier",)), lr=lr)
                else:
                    losses = supervised_step(
                        params, optimizer, config,
                        pool_ds.x[idx_s], pool_ds.y[idx_s], pool_ds.x[idx_t], lr=lr,
                    )
            sums += (losses.cmmd, losses.ae, losses.conf)
        record = EpochRecord(
            epoch=epoch,
            cmmd=float(sums[0] / steps_per_epoch),
            ae=float(sums[1] / steps_per_epoch),
            conf=float(sums[2] / steps_per_epoch),
            lr=float(lr),
            test_error=evaluate(params, test_ds),
        )
        report.records.append(record)
        if val_ds is not None:
            report.val_errors.append(evaluate(params, val_ds))
        if on_epoch is not None:
            on_epoch(record)

    report.wall_time = time.perf_counter() - t0
    return report, params
