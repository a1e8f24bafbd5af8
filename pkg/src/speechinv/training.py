"""Losses, Adam with hold-then-decay schedule, and the training algorithms.

Three trainers share one mini-batch engine:

* ``train_single_task``: tract-variable regression only (MAE).
* ``train_algorithm2``: joint optimization of MAE + alpha * cross-entropy,
  one optimizer step per batch, early stopping on validation loss.
* ``train_algorithm1``: per epoch, one full pass minimizing the TV loss, then
  one full pass minimizing the phoneme loss; fixed epoch count with
  best-validation weight retention.

All trainers consume pre-featurized examples, shuffle with a seeded stream
(identical across trainers for a given seed) and return the weights of the
best validation epoch.
"""

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .corpus import PAD_INDEX, one_hot
from .errors import BadSpec, DimensionMismatch, NumericalError, SpeechInvError
from .frontend import featurize_segment
from .model import Model, ModelConfig, init_params, softmax

ALGORITHMS = ("single_task", "mtl_algo1", "mtl_algo2")
EPOCHS_CSV_COLUMNS = ("epoch", "l_tv", "l_ph", "l_joint", "val_loss", "lr", "seconds")


@dataclass(frozen=True)
class TrainConfig:
    algorithm: str = "mtl_algo2"
    alpha: float = 0.5
    patience: int = 10
    base_lr: float = 1e-3
    lr_hold_epochs: int = 10
    lr_decay_interval: int = 5
    lr_decay_factor: float = 0.5
    batch_size: int = 128
    max_epochs: int = 50
    seed: int = 0
    early_stop_rule: str = "best"  # "best" or the literal "sliding" window rule
    selector: str = "loss"  # retain weights by dev "loss" or dev "ppmc"

    def validate(self):
        if self.algorithm not in ALGORITHMS:
            raise BadSpec(f"unknown algorithm {self.algorithm!r}, expected one of {ALGORITHMS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise BadSpec(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.patience < 1:
            raise BadSpec("patience must be >= 1")
        if not 0.0 < self.lr_decay_factor <= 1.0:
            raise BadSpec("lr_decay_factor must lie in (0, 1]")
        if self.base_lr <= 0:
            raise BadSpec("base_lr must be positive")
        if self.lr_hold_epochs < 0 or self.lr_decay_interval < 1:
            raise BadSpec("lr_hold_epochs must be >= 0 and lr_decay_interval >= 1")
        if self.batch_size < 1:
            raise BadSpec("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise BadSpec("max_epochs must be >= 0")
        if self.early_stop_rule not in ("best", "sliding"):
            raise BadSpec(f"unknown early_stop_rule {self.early_stop_rule!r}")
        if self.selector not in ("loss", "ppmc"):
            raise BadSpec(f"unknown selector {self.selector!r}")


@dataclass
class EpochLog:
    epoch: int
    l_tv: float
    l_ph: float
    l_joint: float
    val_loss: float
    lr: float
    seconds: float


@dataclass
class TrainingExample:
    """One featurized utterance ready for the trainers."""

    id: str
    features: np.ndarray  # (200, 13)
    tv: np.ndarray  # (200, 9)
    onehot: np.ndarray  # (200, 41)
    labels: np.ndarray  # (200,)

    @property
    def pad_mask(self) -> np.ndarray:
        return self.labels == PAD_INDEX


@dataclass
class TrainResult:
    params: "object"  # ModelParams of the retained (best-validation) epoch
    logs: list
    best_epoch: int
    train_seconds: float
    total_steps: int
    diverged: bool = False


def prepare_examples(utterances) -> list:
    """Featurize utterances into trainer inputs (float64 features and targets)."""
    examples = []
    for u in utterances:
        examples.append(
            TrainingExample(
                id=u.id,
                features=featurize_segment(u.audio),
                tv=u.tv_targets.astype(np.float64),
                onehot=one_hot(u.phoneme_labels),
                labels=np.asarray(u.phoneme_labels),
            )
        )
    return examples


def mae_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error over all entries."""
    if pred.shape != target.shape:
        raise DimensionMismatch(f"shapes {pred.shape} and {target.shape} differ")
    return float(np.mean(np.abs(pred - target)))


def mae_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    return np.sign(pred - target) / pred.size


def cross_entropy_loss(logits: np.ndarray, target_onehot: np.ndarray) -> float:
    """Mean over frames of -log softmax(logits)[true class], via log-sum-exp."""
    if logits.shape != target_onehot.shape:
        raise DimensionMismatch(f"shapes {logits.shape} and {target_onehot.shape} differ")
    rows = target_onehot.sum(axis=1)
    is_binary = np.all((target_onehot == 0.0) | (target_onehot == 1.0))
    if not is_binary or not np.all(rows == 1.0):
        raise BadSpec("target rows must be one-hot")
    shifted = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(shifted), axis=1))
    true_logit = np.sum(shifted * target_onehot, axis=1)
    return float(np.mean(lse - true_logit))


def cross_entropy_grad(logits: np.ndarray, target_onehot: np.ndarray) -> np.ndarray:
    return (softmax(logits) - target_onehot) / logits.shape[0]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Hold base_lr, then decay by gamma every lr_decay_interval epochs."""
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    if epoch <= cfg.lr_hold_epochs:
        return cfg.base_lr
    buckets = math.ceil((epoch - cfg.lr_hold_epochs) / cfg.lr_decay_interval)
    return cfg.base_lr * cfg.lr_decay_factor ** buckets


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One Adam update in place on every parameter present in grads."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.t[name] = 0
        state.t[name] += 1
        t = state.t[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def _add_into(acc: dict, grads: dict):
    for name, g in grads.items():
        acc[name] += g


def _validation_loss(model: Model, dev, alpha: float, multi: bool) -> float:
    total = 0.0
    for ex in dev:
        out = model.forward(ex.features)
        loss = mae_loss(out.tv, ex.tv)
        if multi and alpha != 0.0:
            loss += alpha * cross_entropy_loss(out.ph_logits, ex.onehot)
        total += loss
    return total / len(dev)


def _selector_score(model: Model, dev, val_loss: float, selector: str) -> float:
    """Lower is better for both selectors."""
    if selector == "loss":
        return val_loss
    avg = metrics.dev_average_ppmc(model, dev)
    return -avg if avg is not None else math.inf


class _BestTracker:
    def __init__(self, params):
        self.score = math.inf
        self.epoch = 0
        self.params = params.copy()

    def offer(self, score, epoch, params):
        if score < self.score:
            self.score = score
            self.epoch = epoch
            self.params = params.copy()


def _should_stop(rule: str, patience: int, val_history, best_epoch: int) -> bool:
    epoch = len(val_history)
    if rule == "best":
        return epoch - best_epoch >= patience
    if epoch <= patience:
        return False
    return not (val_history[epoch - 1] < val_history[epoch - 1 - patience])


def _joint_batch_pass(model, examples, order, batch_size, state, lr, alpha, multi):
    """One pass of joint mini-batch steps; returns (mean_tv, mean_ph, steps)."""
    sum_tv = 0.0
    sum_ph = 0.0
    n_batches = 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        b = len(idx)
        acc = None
        batch_tv = 0.0
        batch_ph = 0.0
        for i in idx:
            ex = examples[i]
            out = model.forward(ex.features)
            batch_tv += mae_loss(out.tv, ex.tv)
            d_tv = mae_grad(out.tv, ex.tv) / b
            d_ph = None
            if multi:
                batch_ph += cross_entropy_loss(out.ph_logits, ex.onehot)
                if alpha != 0.0:
                    d_ph = (alpha / b) * cross_entropy_grad(out.ph_logits, ex.onehot)
            grads = model.backward(d_tv=d_tv, d_ph=d_ph)
            if acc is None:
                acc = grads
            else:
                _add_into(acc, grads)
        batch_tv /= b
        batch_ph /= b
        if not (math.isfinite(batch_tv) and math.isfinite(batch_ph)):
            raise NumericalError(f"loss diverged (tv={batch_tv}, ph={batch_ph})")
        adam_step(model.params.as_dict(), acc, state, lr)
        sum_tv += batch_tv
        sum_ph += batch_ph
        n_batches += 1
    return sum_tv / n_batches, sum_ph / n_batches, n_batches


def _train_joint(model: Model, train, dev, cfg: TrainConfig, multi: bool) -> TrainResult:
    """Shared engine for single-task and joint (algorithm 2) training."""
    cfg.validate()
    if not train or not dev:
        raise BadSpec("train and dev sets must be nonempty")
    alpha = cfg.alpha if multi else 0.0
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    best = _BestTracker(model.params)
    logs = []
    val_history = []
    total_steps = 0
    train_seconds = 0.0
    diverged = False
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        lr = lr_at(epoch, cfg)
        try:
            l_tv, l_ph, steps = _joint_batch_pass(
                model, train, order, cfg.batch_size, state, lr, alpha, multi
            )
        except NumericalError:
            diverged = True
            break
        total_steps += steps
        val_loss = _validation_loss(model, dev, alpha, multi)
        l_joint = l_tv + alpha * l_ph
        val_history.append(val_loss)
        best.offer(_selector_score(model, dev, val_loss, cfg.selector), epoch, model.params)
        seconds = time.perf_counter() - t0
        train_seconds += seconds
        logs.append(EpochLog(epoch, l_tv, l_ph, l_joint, val_loss, lr, seconds))
        if _should_stop(cfg.early_stop_rule, cfg.patience, val_history, best.epoch):
            break
    return TrainResult(
        params=best.params,
        logs=logs,
        best_epoch=best.epoch,
        train_seconds=train_seconds,
        total_steps=total_steps,
        diverged=diverged,
    )


def train_single_task(model: Model, train, dev, cfg: TrainConfig) -> TrainResult:
    """TV regression only; the phoneme loss never enters."""
    if cfg.algorithm != "single_task":
        raise BadSpec(f"config algorithm is {cfg.algorithm!r}, expected 'single_task'")
    if model.config.multi_task:
        raise BadSpec("single-task training expects a model without a phoneme head")
    return _train_joint(model, train, dev, cfg, multi=False)


def train_algorithm2(model: Model, train, dev, cfg: TrainConfig) -> TrainResult:
    """Joint loss L_tv + alpha * L_ph, one optimizer step per mini-batch."""
    if cfg.algorithm != "mtl_algo2":
        raise BadSpec(f"config algorithm is {cfg.algorithm!r}, expected 'mtl_algo2'")
    if not model.config.multi_task:
        raise BadSpec("joint training expects a model with a phoneme head")
    return _train_joint(model, train, dev, cfg, multi=True)


def _head_subset(grads: dict, drop_prefix: str) -> dict:
    return {name: g for name, g in grads.items() if not name.startswith(drop_prefix)}


def _single_loss_pass(model, examples, order, batch_size, state, lr, task: str):
    """One pass of steps on a single loss; task is "tv" or "ph"."""
    total = 0.0
    n_batches = 0
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        b = len(idx)
        acc = None
        batch_loss = 0.0
        for i in idx:
            ex = examples[i]
            out = model.forward(ex.features)
            if task == "tv":
                batch_loss += mae_loss(out.tv, ex.tv)
                grads = model.backward(d_tv=mae_grad(out.tv, ex.tv) / b)
            else:
                batch_loss += cross_entropy_loss(out.ph_logits, ex.onehot)
                grads = model.backward(d_ph=cross_entropy_grad(out.ph_logits, ex.onehot) / b)
            if acc is None:
                acc = grads
            else:
                _add_into(acc, grads)
        batch_loss /= b
        if not math.isfinite(batch_loss):
            raise NumericalError(f"{task} loss diverged ({batch_loss})")
        acc = _head_subset(acc, "ph_" if task == "tv" else "tv_")
        adam_step(model.params.as_dict(), acc, state, lr)
        total += batch_loss
        n_batches += 1
    return total / n_batches, n_batches


def train_algorithm1(model: Model, train, dev, cfg: TrainConfig) -> TrainResult:
    """Alternating optimization: a TV pass then a phoneme pass each epoch.

    Both passes update the shared trunk; each head moves only during its own
    pass. Runs the full max_epochs (no early stop) and returns the weights of
    the best validation epoch, where validation loss is L_tv + L_ph. The
    alpha weight is never read.
    """
    if cfg.algorithm != "mtl_algo1":
        raise BadSpec(f"config algorithm is {cfg.algorithm!r}, expected 'mtl_algo1'")
    if not model.config.multi_task:
        raise BadSpec("alternating training expects a model with a phoneme head")
    cfg.validate()
    if not train or not dev:
        raise BadSpec("train and dev sets must be nonempty")
    rng = np.random.default_rng([cfg.seed, 1])
    state = AdamState()
    best = _BestTracker(model.params)
    logs = []
    total_steps = 0
    train_seconds = 0.0
    diverged = False
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train))
        lr = lr_at(epoch, cfg)
        try:
            l_tv, steps_tv = _single_loss_pass(
                model, train, order, cfg.batch_size, state, lr, "tv"
            )
            l_ph, steps_ph = _single_loss_pass(
                model, train, order, cfg.batch_size, state, lr, "ph"
            )
        except NumericalError:
            diverged = True
            break
        total_steps += steps_tv + steps_ph
        val_loss = _validation_loss(model, dev, 1.0, True)
        val_for_selection = _selector_score(model, dev, val_loss, cfg.selector)
        best.offer(val_for_selection, epoch, model.params)
        seconds = time.perf_counter() - t0
        train_seconds += seconds
        logs.append(EpochLog(epoch, l_tv, l_ph, l_tv + l_ph, val_loss, lr, seconds))
    return TrainResult(
        params=best.params,
        logs=logs,
        best_epoch=best.epoch,
        train_seconds=train_seconds,
        total_steps=total_steps,
        diverged=diverged,
    )


def train(model: Model, train_examples, dev_examples, cfg: TrainConfig) -> TrainResult:
    """Dispatch on cfg.algorithm."""
    fn = {
        "single_task": train_single_task,
        "mtl_algo1": train_algorithm1,
        "mtl_algo2": train_algorithm2,
    }[cfg.algorithm]
    return fn(model, train_examples, dev_examples, cfg)


@dataclass
class GridCell:
    lr: float
    batch_size: int
    seed: int
    score: float | None  # dev-set average PPMC; None if the run failed
    status: str


@dataclass
class GridSearchResult:
    rows: list
    best_lr: float
    best_batch: int


def grid_search(
    train_examples,
    dev_examples,
    base_cfg: TrainConfig,
    model_config: ModelConfig,
    lr_grid=(1e-3, 3e-4, 1e-4),
    batch_grid=(16, 32, 64, 128),
    score_fn=None,
) -> GridSearchResult:
    """Train one model per (lr, batch) cell, pick the best dev-set PPMC.

    Ties break toward larger batch, then larger lr. Failed cells are recorded
    and excluded from the argmax. score_fn(cfg) -> float replaces the full
    train-and-evaluate step (used to exercise the selection logic cheaply).
    """
    rows = []
    cell_index = 0
    for lr in lr_grid:
        for batch in batch_grid:
            cfg = replace(base_cfg, base_lr=lr, batch_size=batch, seed=base_cfg.seed + cell_index)
            try:
                if score_fn is not None:
                    score = float(score_fn(cfg))
                else:
                    model = Model(init_params(model_config, cfg.seed))
                    result = train(model, train_examples, dev_examples, cfg)
                    eval_model = Model(result.params)
                    score = metrics.dev_average_ppmc(eval_model, dev_examples)
                    if score is None:
                        raise NumericalError("all dev TV correlations undefined")
                rows.append(GridCell(lr, batch, cfg.seed, score, "ok"))
            except SpeechInvError as e:
                rows.append(GridCell(lr, batch, cfg.seed, None, f"failed: {e}"))
            cell_index += 1
    ok = [r for r in rows if r.score is not None]
    if not ok:
        raise SpeechInvError("every grid cell failed")
    winner = max(ok, key=lambda r: (r.score, r.batch_size, r.lr))
    return GridSearchResult(rows=rows, best_lr=winner.lr, best_batch=winner.batch_size)


def write_epochs_csv(logs, path):
    """Epoch log table; the seconds column is wall-clock and varies run to run."""
    with open(path, "w") as fh:
        fh.write(",".join(EPOCHS_CSV_COLUMNS) + "\n")
        for log in logs:
            fh.write(
                f"{log.epoch},{log.l_tv:.10g},{log.l_ph:.10g},{log.l_joint:.10g},"
                f"{log.val_loss:.10g},{log.lr:.10g},{log.seconds:.6f}\n"
            )
