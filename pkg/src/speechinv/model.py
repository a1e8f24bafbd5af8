"""Bidirectional GRU trunk with tract-variable and phoneme heads.

The network is a fixed composition: 3 stacked BiGRU layers, a time-distributed
tanh dense layer, a linear TV regression head, and (multi-task only) a linear
phoneme-logit head. Reverse-mode gradients are computed layer by layer against
a tape recorded during forward; the recurrent steps run in the kernels module.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionMismatch, GraphError, NumericalError
from .tensorio import read_tensor, write_tensor

N_INPUTS = 13
N_TVS = 9
N_PHONES = 41


@dataclass(frozen=True)
class ModelConfig:
    hidden: int = 16  # GRU units per direction
    dense: int = 32  # shared time-distributed dense width
    n_layers: int = 3
    n_inputs: int = N_INPUTS
    n_tvs: int = N_TVS
    n_phones: int = N_PHONES
    multi_task: bool = True


# Full-scale profile sized to about 2.2 M trainable parameters.
PAPER_SCALE = ModelConfig(hidden=218, dense=400)
DESK_SCALE = ModelConfig(hidden=16, dense=32)


@dataclass
class GruCellParams:
    """One direction of one GRU layer."""

    wz: np.ndarray
    wr: np.ndarray
    wh: np.ndarray
    uz: np.ndarray
    ur: np.ndarray
    uh: np.ndarray
    bz: np.ndarray
    br: np.ndarray
    bh: np.ndarray

    def arrays(self):
        return (
            self.wz, self.wr, self.wh,
            self.uz, self.ur, self.uh,
            self.bz, self.br, self.bh,
        )

    FIELDS = ("wz", "wr", "wh", "uz", "ur", "uh", "bz", "br", "bh")


@dataclass
class ModelParams:
    """All trainable weights; layers holds (forward, backward) cell pairs."""

    config: ModelConfig
    layers: list[tuple[GruCellParams, GruCellParams]]
    dense_w: np.ndarray
    dense_b: np.ndarray
    tv_w: np.ndarray
    tv_b: np.ndarray
    ph_w: np.ndarray | None = None
    ph_b: np.ndarray | None = None

    def named(self):
        """Yield (name, array) for every trainable tensor, in a fixed order."""
        for i, (fwd, bwd) in enumerate(self.layers):
            for tag, cell in (("fwd", fwd), ("bwd", bwd)):
                for f in GruCellParams.FIELDS:
                    yield f"gru{i}_{tag}_{f}", getattr(cell, f)
        yield "dense_w", self.dense_w
        yield "dense_b", self.dense_b
        yield "tv_w", self.tv_w
        yield "tv_b", self.tv_b
        if self.ph_w is not None:
            yield "ph_w", self.ph_w
            yield "ph_b", self.ph_b

    def as_dict(self):
        return dict(self.named())

    def copy(self):
        layers = [
            (
                GruCellParams(*(a.copy() for a in fwd.arrays())),
                GruCellParams(*(a.copy() for a in bwd.arrays())),
            )
            for fwd, bwd in self.layers
        ]
        return ModelParams(
            config=self.config,
            layers=layers,
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
            tv_w=self.tv_w.copy(),
            tv_b=self.tv_b.copy(),
            ph_w=None if self.ph_w is None else self.ph_w.copy(),
            ph_b=None if self.ph_b is None else self.ph_b.copy(),
        )


def count_params(params: ModelParams) -> int:
    """Exact number of trainable scalars."""
    return sum(a.size for _, a in params.named())


def _init_matrix(rng, n_out, fan_in):
    s = np.sqrt(1.0 / fan_in)
    return rng.uniform(-s, s, size=(n_out, fan_in))


def _init_cell(rng, n_in, n_hidden):
    return GruCellParams(
        wz=_init_matrix(rng, n_hidden, n_in),
        wr=_init_matrix(rng, n_hidden, n_in),
        wh=_init_matrix(rng, n_hidden, n_in),
        uz=_init_matrix(rng, n_hidden, n_hidden),
        ur=_init_matrix(rng, n_hidden, n_hidden),
        uh=_init_matrix(rng, n_hidden, n_hidden),
        bz=np.zeros(n_hidden),
        br=np.zeros(n_hidden),
        bh=np.zeros(n_hidden),
    )


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Seeded uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init, zero biases.

    The phoneme head is drawn last so single-task and multi-task models with
    the same seed share identical trunk, dense, and TV-head weights.
    """
    rng = np.random.default_rng([seed, 0])
    h = config.hidden
    layers = []
    n_in = config.n_inputs
    for _ in range(config.n_layers):
        fwd = _init_cell(rng, n_in, h)
        bwd = _init_cell(rng, n_in, h)
        layers.append((fwd, bwd))
        n_in = 2 * h
    dense_w = _init_matrix(rng, config.dense, 2 * h)
    dense_b = np.zeros(config.dense)
    tv_w = _init_matrix(rng, config.n_tvs, config.dense)
    tv_b = np.zeros(config.n_tvs)
    ph_w = ph_b = None
    if config.multi_task:
        ph_w = _init_matrix(rng, config.n_phones, config.dense)
        ph_b = np.zeros(config.n_phones)
    return ModelParams(
        config=config,
        layers=layers,
        dense_w=dense_w,
        dense_b=dense_b,
        tv_w=tv_w,
        tv_b=tv_b,
        ph_w=ph_w,
        ph_b=ph_b,
    )


def sigmoid(x):
    return 0.5 * (np.tanh(0.5 * np.asarray(x, dtype=np.float64)) + 1.0)


def gru_step(x_t, h_prev, cell: GruCellParams):
    """One GRU update; the kernels run this same recurrence over a sequence."""
    x_t = np.asarray(x_t, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x_t.shape[0] != cell.wz.shape[1] or h_prev.shape[0] != cell.uz.shape[1]:
        raise DimensionMismatch(
            f"gru_step got input {x_t.shape}, hidden {h_prev.shape} for cell "
            f"{cell.wz.shape}/{cell.uz.shape}"
        )
    z = sigmoid(cell.wz @ x_t + cell.uz @ h_prev + cell.bz)
    r = sigmoid(cell.wr @ x_t + cell.ur @ h_prev + cell.br)
    c = np.tanh(cell.wh @ x_t + cell.uh @ (r * h_prev) + cell.bh)
    return (1.0 - z) * h_prev + z * c


def softmax(logits):
    """Row-wise softmax via the log-sum-exp shift."""
    x = np.asarray(logits, dtype=np.float64)
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ModelOutput:
    tv: np.ndarray  # (L, 9)
    ph_logits: np.ndarray | None  # (L, 41) or None in single-task mode


@dataclass
class _Tape:
    x: np.ndarray
    layer_inputs: list = field(default_factory=list)
    layer_caches: list = field(default_factory=list)  # per layer: fwd/bwd kernel caches
    dense_in: np.ndarray | None = None
    dense_out: np.ndarray | None = None


def _bigru_forward(x, fwd: GruCellParams, bwd: GruCellParams, K):
    hf, zf, rf, cf = K.gru_forward(x, *fwd.arrays())
    xr = np.ascontiguousarray(x[::-1])
    hb, zb, rb, cb = K.gru_forward(xr, *bwd.arrays())
    out = np.concatenate([hf, hb[::-1]], axis=1)
    return out, ((hf, zf, rf, cf), (hb, zb, rb, cb))


def _bigru_backward(dout, x, cache, fwd: GruCellParams, bwd: GruCellParams, K):
    h = fwd.bz.shape[0]
    (fcache, bcache) = cache
    xr = np.ascontiguousarray(x[::-1])
    df = np.ascontiguousarray(dout[:, :h])
    db = np.ascontiguousarray(dout[::-1, h:])
    fres = K.gru_backward(df, np.ascontiguousarray(x), *fcache, fwd.wz, fwd.wr, fwd.wh, fwd.uz, fwd.ur, fwd.uh)
    bres = K.gru_backward(db, xr, *bcache, bwd.wz, bwd.wr, bwd.wh, bwd.uz, bwd.ur, bwd.uh)
    dx = fres[0] + bres[0][::-1]
    return dx, fres[1:], bres[1:]


class Model:
    """Holds parameters plus the tape from the most recent forward pass."""

    def __init__(self, params: ModelParams, backend: str | None = None):
        self.params = params
        self.kernels = kernels.get_kernels(backend)
        self._tape: _Tape | None = None

    @property
    def config(self) -> ModelConfig:
        return self.params.config

    def forward(self, x: np.ndarray) -> ModelOutput:
        """Run the trunk and heads on one (L, n_inputs) feature matrix."""
        p = self.params
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != p.config.n_inputs:
            raise DimensionMismatch(
                f"expected (L, {p.config.n_inputs}) input, got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite values in input features")
        tape = _Tape(x=x)
        a = x
        for i, (fwd, bwd) in enumerate(p.layers):
            tape.layer_inputs.append(a)
            a, cache = _bigru_forward(a, fwd, bwd, self.kernels)
            if not np.all(np.isfinite(a)):
                raise NumericalError(f"non-finite values leaving BiGRU layer {i}")
            tape.layer_caches.append(cache)
        tape.dense_in = a
        dense_pre = a @ p.dense_w.T + p.dense_b
        hd = np.tanh(dense_pre)
        tape.dense_out = hd
        tv = hd @ p.tv_w.T + p.tv_b
        ph = None
        if p.ph_w is not None:
            ph = hd @ p.ph_w.T + p.ph_b
        if not np.all(np.isfinite(tv)) or (ph is not None and not np.all(np.isfinite(ph))):
            raise NumericalError("non-finite values in head outputs")
        self._tape = tape
        return ModelOutput(tv=tv, ph_logits=ph)

    def backward(self, d_tv=None, d_ph=None) -> dict[str, np.ndarray]:
        """Backpropagate output gradients to every parameter.

        Either head gradient may be omitted; omitted heads contribute nothing
        and their weight gradients come back as zeros.
        """
        if self._tape is None:
            raise GraphError("backward called before forward")
        p = self.params
        tape = self._tape
        hd = tape.dense_out
        grads: dict[str, np.ndarray] = {}
        d_hd = np.zeros_like(hd)
        grads["tv_w"] = np.zeros_like(p.tv_w)
        grads["tv_b"] = np.zeros_like(p.tv_b)
        if d_tv is not None:
            d_tv = np.asarray(d_tv, dtype=np.float64)
            grads["tv_w"] = d_tv.T @ hd
            grads["tv_b"] = d_tv.sum(axis=0)
            d_hd += d_tv @ p.tv_w
        if p.ph_w is not None:
            grads["ph_w"] = np.zeros_like(p.ph_w)
            grads["ph_b"] = np.zeros_like(p.ph_b)
            if d_ph is not None:
                d_ph = np.asarray(d_ph, dtype=np.float64)
                grads["ph_w"] = d_ph.T @ hd
                grads["ph_b"] = d_ph.sum(axis=0)
                d_hd += d_ph @ p.ph_w
        elif d_ph is not None:
            raise GraphError("phoneme gradient supplied to a single-task model")
        d_pre = d_hd * (1.0 - hd * hd)
        grads["dense_w"] = d_pre.T @ tape.dense_in
        grads["dense_b"] = d_pre.sum(axis=0)
        da = d_pre @ p.dense_w
        for i in range(len(p.layers) - 1, -1, -1):
            fwd, bwd = p.layers[i]
            da, fgrads, bgrads = _bigru_backward(
                da, tape.layer_inputs[i], tape.layer_caches[i], fwd, bwd, self.kernels
            )
            for tag, cell_grads in (("fwd", fgrads), ("bwd", bgrads)):
                for fname, g in zip(GruCellParams.FIELDS, cell_grads):
                    grads[f"gru{i}_{tag}_{fname}"] = g
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient for {name}")
        self._tape = None
        return grads


def save_checkpoint(params: ModelParams, out_dir, seed=None, epoch=None, algorithm=None):
    """One tensor file per parameter plus a JSON header."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for name, a in params.named():
        write_tensor(os.path.join(out_dir, f"{name}.atv"), a.astype(np.float32))
        names.append(name)
    cfg = params.config
    header = {
        "config": {
            "hidden": cfg.hidden,
            "dense": cfg.dense,
            "n_layers": cfg.n_layers,
            "n_inputs": cfg.n_inputs,
            "n_tvs": cfg.n_tvs,
            "n_phones": cfg.n_phones,
            "multi_task": cfg.multi_task,
        },
        "seed": seed,
        "epoch": epoch,
        "algorithm": algorithm,
        "parameters": names,
    }
    with open(os.path.join(out_dir, "checkpoint.json"), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(ckpt_dir):
    """Rebuild ModelParams (float64) from a checkpoint directory."""
    with open(os.path.join(ckpt_dir, "checkpoint.json")) as fh:
        header = json.load(fh)
    config = ModelConfig(**header["config"])
    params = init_params(config, seed=0)
    arrays = params.as_dict()
    for name in header["parameters"]:
        loaded = read_tensor(os.path.join(ckpt_dir, f"{name}.atv"), np.float32)
        if loaded.shape != arrays[name].shape:
            raise DimensionMismatch(
                f"checkpoint tensor {name} has shape {loaded.shape}, "
                f"expected {arrays[name].shape}"
            )
        arrays[name][...] = loaded.astype(np.float64)
    return params, header
