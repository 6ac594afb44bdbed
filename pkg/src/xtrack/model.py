"""X-TRAJ / X-TRACK assembly, loss, and checkpoints.

Pipeline per scenario: embed every vehicle's history (linear + LeakyReLU),
encode it with a shared recurrent cell, run star-graph attention over the
final hidden states, decode [h_target ; g_target] for t_f steps, and map each
decoder state to two outputs. X-TRAJ reads those as positions; X-TRACK reads
them as (a_x, psi_dot), saturates them and integrates the kinematic layer.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import cells
from .graph import InteractionModule, build_star_graph
from .kinematics import DEFAULT_LIMITS, clamp_controls, derive_motion, rollout_states
from .numcore import Adam, Linear, Module, SeededRng, Tensor, clip_grad_norm, no_grad
from .numcore import tensor as T
from .scenario.scenes import SLOT_NAMES

VARIANTS = ("xtraj", "xtrack")
FEATURES = {"xtraj": 4, "xtrack": 2}
# Fixed input normalisation (x - offset) / scale per variant:
# xtraj (x, y, v, a), xtrack (a_x, psi_dot).
DEFAULT_FEATURE_OFFSET = {"xtraj": (0.0, 0.0, 30.0, 0.0), "xtrack": (0.0, 0.0)}
DEFAULT_FEATURE_SCALE = {"xtraj": (50.0, 1.0, 3.0, 1.0), "xtrack": (3.0, 0.1)}
# Fixed output scaling: xtraj position offsets (m), xtrack raw controls before
# saturation. The lateral xtraj gain is large because the output LeakyReLU
# shrinks the negative half-line tenfold.
DEFAULT_OUTPUT_SCALE = {"xtraj": (50.0, 50.0), "xtrack": (3.0, 0.1)}


class ConfigError(ValueError):
    pass


class FeatureMismatchError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "xtrack"
    encoder_cell: str = "slstm"
    decoder_cell: str = "lstm"
    embed_dim: int = 32
    encoder_hidden: int = 64
    decoder_hidden: int = 128
    gat_heads: int = 4
    gat_dim: int = 64
    interaction_dim: int = 64
    gat_concat2: bool = True
    leaky_slope: float = 0.1
    slstm_heads: int = 1
    slstm_forget: str = "exp"
    t_obs: int = 15
    t_f: int = 25
    dt: float = 0.2
    num_neighbors: int = 8
    input_features: int = 0  # 0 = derive from variant
    feature_offset: tuple = ()
    feature_scale: tuple = ()
    output_scale: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("encoder_cell", "decoder_cell"):
            if getattr(self, name) not in cells.CELL_TYPES:
                raise ConfigError(f"{name} must be one of {cells.CELL_TYPES}, got {getattr(self, name)!r}")
        if not self.input_features:
            self.input_features = FEATURES[self.variant]
        if self.input_features != FEATURES[self.variant]:
            raise ConfigError(f"variant {self.variant} takes {FEATURES[self.variant]} input features, not {self.input_features}")
        self.feature_offset = tuple(float(v) for v in (self.feature_offset or DEFAULT_FEATURE_OFFSET[self.variant]))
        self.feature_scale = tuple(float(v) for v in (self.feature_scale or DEFAULT_FEATURE_SCALE[self.variant]))
        self.output_scale = tuple(float(v) for v in (self.output_scale or DEFAULT_OUTPUT_SCALE[self.variant]))
        if len(self.feature_scale) != self.input_features or len(self.feature_offset) != self.input_features:
            raise ConfigError("feature_offset and feature_scale need one entry per input feature")
        if len(self.output_scale) != 2:
            raise ConfigError("output_scale needs two entries")
        if not all(v > 0 for v in self.feature_scale + self.output_scale):
            raise ConfigError("feature_scale and output_scale entries must be positive")
        for name in ("embed_dim", "encoder_hidden", "decoder_hidden", "gat_heads", "gat_dim", "interaction_dim",
                     "slstm_heads", "t_obs", "t_f"):
            if int(getattr(self, name)) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_obs < 3:
            raise ConfigError("t_obs must be at least 3 (control derivation needs 3 samples)")
        if not 0 <= self.num_neighbors <= len(SLOT_NAMES):
            raise ConfigError(f"num_neighbors must be in 0..{len(SLOT_NAMES)}")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")

    def architecture(self) -> dict:
        d = asdict(self)
        d.pop("seed")
        for k in ("feature_offset", "feature_scale", "output_scale"):
            d[k] = list(getattr(self, k))
        return d

    def fingerprint(self) -> str:
        blob = json.dumps(self.architecture(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class Prediction:
    scenario_id: str
    positions: np.ndarray  # (t_f, 2), m
    controls: np.ndarray | None = None  # (t_f, 2): a_x m/s^2, psi_dot rad/s


@dataclass
class Batch:
    """Array form of a list of scenarios, ready for the model."""

    ids: list
    feats: np.ndarray  # (B, V, t_obs, F), raw units
    init_state: np.ndarray  # (B, 4): x, y, v, psi at the last observed sample
    gt_positions: np.ndarray  # (B, t_f, 2)
    gt_controls: np.ndarray  # (B, t_f, 2)

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch([self.ids[i] for i in idx], self.feats[idx], self.init_state[idx], self.gt_positions[idx],
                     self.gt_controls[idx])


def make_batch(scenarios, config: ModelConfig) -> Batch:
    n_nodes = config.num_neighbors + 1
    feats, inits, gts, gtc, ids = [], [], [], [], []
    for s in scenarios:
        if s.t_obs != config.t_obs or s.t_f != config.t_f:
            raise FeatureMismatchError(
                f"scenario {s.scenario_id} has t_obs/t_f {s.t_obs}/{s.t_f}, model expects {config.t_obs}/{config.t_f}")
        if abs(s.dt - config.dt) > 1e-9:
            raise FeatureMismatchError(f"scenario {s.scenario_id} has dt {s.dt}, model expects {config.dt}")
        members = s.members()
        if len(members) < n_nodes:
            raise FeatureMismatchError(f"scenario {s.scenario_id} is missing neighbor slots")
        members = members[:n_nodes]
        per = []
        for tr in members:
            if config.variant == "xtraj":
                per.append(tr.features()[: s.t_obs])
            else:
                prof = derive_motion(tr.x[: s.t_obs], tr.y[: s.t_obs], s.dt)
                per.append(np.stack([prof.a_x, prof.psi_dot], axis=-1))
        feats.append(np.stack(per))
        hist = derive_motion(s.target.x[: s.t_obs], s.target.y[: s.t_obs], s.dt)
        k = s.t_obs - 1
        inits.append([hist.x[k], hist.y[k], hist.v[k], hist.psi[k]])
        gts.append(s.future_xy())
        full = derive_motion(s.target.x, s.target.y, s.dt)
        gtc.append(np.stack([full.a_x[k:k + s.t_f], full.psi_dot[k:k + s.t_f]], axis=-1))
        ids.append(s.scenario_id)
    if not ids:
        return Batch([], np.zeros((0, n_nodes, config.t_obs, config.input_features)), np.zeros((0, 4)),
                     np.zeros((0, config.t_f, 2)), np.zeros((0, config.t_f, 2)))
    return Batch(ids, np.stack(feats), np.array(inits, dtype=np.float64), np.stack(gts), np.stack(gtc))


@dataclass
class ModelOutput:
    positions: Tensor  # (B, t_f, 2)
    controls: Tensor | None = None  # (B, t_f, 2), saturated


class TrajectoryModel(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = SeededRng(config.seed).child("init")
        c = config
        self.graph = build_star_graph(c.num_neighbors)
        self.embed = self.add_child("embed", Linear(c.input_features, c.embed_dim, rng.child("embed")))
        self.encoder = self.add_child(
            "encoder",
            cells.make_cell(c.encoder_cell, c.embed_dim, c.encoder_hidden, rng.child("encoder"),
                            num_heads=c.slstm_heads, forget=c.slstm_forget if c.encoder_cell == "slstm" else None),
        )
        self.interaction = self.add_child(
            "interaction",
            InteractionModule(c.encoder_hidden, rng.child("interaction"), heads=c.gat_heads, gat_dim=c.gat_dim,
                              out_dim=c.interaction_dim, concat2=c.gat_concat2, slope=c.leaky_slope),
        )
        self.decoder = self.add_child(
            "decoder",
            cells.make_cell(c.decoder_cell, c.encoder_hidden + c.interaction_dim, c.decoder_hidden, rng.child("decoder"),
                            num_heads=c.slstm_heads, forget=c.slstm_forget if c.decoder_cell == "slstm" else None),
        )
        self.head = self.add_child("head", Linear(c.decoder_hidden, 2, rng.child("head")))

    def __call__(self, batch: Batch) -> ModelOutput:
        return self.forward(batch)

    def forward(self, batch: Batch) -> ModelOutput:
        c = self.config
        B, V, steps, F = batch.feats.shape
        if F != c.input_features:
            raise FeatureMismatchError(f"batch has {F} features per step, {c.variant} expects {c.input_features}")
        if V != c.num_neighbors + 1 or steps != c.t_obs:
            raise FeatureMismatchError(f"batch has {V} vehicles x {steps} steps, expected {c.num_neighbors + 1} x {c.t_obs}")
        x = Tensor(((batch.feats - np.asarray(c.feature_offset)) / np.asarray(c.feature_scale)).reshape(B * V, steps, F))
        e = T.leaky_relu(self.embed(x), c.leaky_slope)
        _, final = cells.encode_sequence(e, self.encoder)
        nodes = final.h.reshape((B, V, c.encoder_hidden))
        g = self.interaction(nodes, self.graph)
        dec_in = T.concat([nodes[:, 0], g], axis=-1)
        hs = cells.decode_constant(dec_in, self.decoder, c.t_f)
        out = T.leaky_relu(self.head(hs), c.leaky_slope) * np.asarray(c.output_scale)
        if c.variant == "xtraj":
            # offsets from the last observed target position
            return ModelOutput(out + batch.init_state[:, None, 0:2])
        controls = clamp_controls(out, DEFAULT_LIMITS)
        states = rollout_states(Tensor(batch.init_state), controls, c.dt)
        return ModelOutput(states[..., 0:2], controls)


XTrackModel = TrajectoryModel


def forward(scenarios, model: TrajectoryModel) -> list:
    return predict(model, scenarios)


def mse(pred: Tensor, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {target.shape}")
    return T.square(pred - target).mean()


def loss(output: ModelOutput, batch: Batch, aux_weight: float = 0.0) -> Tensor:
    """Position MSE (after rollout for X-TRACK) plus optional control MSE."""
    total = mse(output.positions, batch.gt_positions)
    if aux_weight and output.controls is not None:
        total = total + mse(output.controls, batch.gt_controls) * aux_weight
    return total


def predict(model: TrajectoryModel, scenarios, batch_size: int = 64) -> list:
    scenarios = list(scenarios)
    preds = []
    with no_grad():
        for start in range(0, len(scenarios), batch_size):
            chunk = scenarios[start:start + batch_size]
            out = model(make_batch(chunk, model.config))
            for k, s in enumerate(chunk):
                ctrl = None if out.controls is None else out.controls.data[k].copy()
                preds.append(Prediction(s.scenario_id, out.positions.data[k].copy(), ctrl))
    return preds


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "xtrack-checkpoint"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(model: TrajectoryModel, path, extra: dict | None = None):
    """Write a JSON checkpoint: header, config, fingerprint, and every parameter
    as ``{"shape": [...], "values": [...]}`` in row-major order (repr floats)."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "fingerprint": model.config.fingerprint(),
        "config": asdict(model.config),
        "params": {name: {"shape": list(p.shape), "values": [float(v) for v in p.data.reshape(-1)]}
                   for name, p in model.named_parameters()},
        "extra": extra or {},
    }
    for k in ("feature_offset", "feature_scale", "output_scale"):
        doc["config"][k] = list(getattr(model.config, k))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, allow_nan=False)


def load_params(path, config: ModelConfig | None = None) -> TrajectoryModel:
    """Rebuild a model from a checkpoint; rejects a ``config`` whose fingerprint differs."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        cfg = dict(doc["config"])
        for k in ("feature_offset", "feature_scale", "output_scale"):
            cfg[k] = tuple(cfg[k])
        stored = ModelConfig.from_dict(cfg)
        params = doc["params"]
    except (KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    if stored.fingerprint() != doc.get("fingerprint"):
        raise CheckpointError(f"checkpoint {path} fingerprint does not match its stored config")
    if config is not None and config.fingerprint() != stored.fingerprint():
        diff = {k: (v, stored.architecture()[k]) for k, v in config.architecture().items() if stored.architecture()[k] != v}
        raise CheckpointError(f"config mismatch with checkpoint {path}: {diff}")
    model = TrajectoryModel(stored)
    try:
        state = {name: np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"]) for name, rec in params.items()}
        model.load_state_dict(state)
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: {exc}") from exc
    return model


# ---------------------------------------------------------------- training

class TrainingError(RuntimeError):
    def __init__(self, msg, epoch=None, batch=None):
        super().__init__(msg)
        self.epoch, self.batch = epoch, batch


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    learning_rate: float = 1e-3
    clip_norm: float | None = None
    checkpoint: str | None = None
    seed: int = 0
    aux_weight: float = 0.0
    lr_decay: float = 1.0  # multiplicative learning-rate factor applied after every epoch

    def __post_init__(self):
        if not 0 < self.lr_decay <= 1:
            raise ConfigError("lr_decay must be in (0, 1]")
        if int(self.batch_size) < 1:
            raise ConfigError("batch_size must be at least 1")
        if int(self.epochs) < 0:
            raise ConfigError("epochs must be non-negative")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ConfigError("clip_norm must be positive when set")


@dataclass
class TrainResult:
    model: TrajectoryModel
    history: list = field(default_factory=list)  # dicts: epoch, train_loss, val_loss
    best_epoch: int = -1


def evaluate_loss(model: TrajectoryModel, batch: Batch, chunk: int = 64, aux_weight: float = 0.0) -> float:
    if len(batch) == 0:
        return float("nan")
    total = 0.0
    with no_grad():
        for start in range(0, len(batch), chunk):
            part = batch.take(np.arange(start, min(len(batch), start + chunk)))
            total += float(loss(model(part), part, aux_weight).data) * len(part)
    return total / len(batch)


def train(dataset, model_config: ModelConfig, train_config: TrainConfig, val_dataset=None, log=None) -> TrainResult:
    """Mini-batch Adam with a seeded per-epoch shuffle.

    The best parameters by validation loss (training loss if no validation
    set) are restored at the end and written to ``train_config.checkpoint``.
    """
    dataset = list(dataset)
    if not dataset:
        raise TrainingError("cannot train on an empty dataset")
    tc = train_config
    model = TrajectoryModel(model_config)
    data = make_batch(dataset, model_config)
    val = make_batch(val_dataset, model_config) if val_dataset else None
    params = model.parameters()

    opt = Adam(params, lr=tc.learning_rate)
    rng = SeededRng(tc.seed).child("shuffle")
    result = TrainResult(model)
    best, best_state = np.inf, model.state_dict()
    n = len(data)
    for epoch in range(tc.epochs):
        order = rng.child(f"epoch-{epoch}").permutation(n)
        running = 0.0
        for b, start in enumerate(range(0, n, tc.batch_size)):
            part = data.take(order[start:start + tc.batch_size])
            value = loss(model(part), part, tc.aux_weight)
            lv = float(value.data)
            if not np.isfinite(lv):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            opt.zero_grad()
            value.backward()
            if tc.clip_norm:
                clip_grad_norm(params, tc.clip_norm)
            opt.step()
            running += lv * len(part)
        train_loss = running / n
        opt.state.learning_rate *= tc.lr_decay
        val_loss = evaluate_loss(model, val, aux_weight=tc.aux_weight) if val is not None else None
        result.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        score = val_loss if val_loss is not None else train_loss
        if score < best:
            best, best_state, result.best_epoch = score, model.state_dict(), epoch
        if log:
            log(result.history[-1])
    if tc.epochs:
        # the last epoch's loss was measured before its final update; score the end state too
        end = evaluate_loss(model, val if val is not None else data, aux_weight=tc.aux_weight)
        if end < best:
            best, best_state, result.best_epoch = end, model.state_dict(), tc.epochs
    model.load_state_dict(best_state)
    if tc.checkpoint:
        save_params(model, tc.checkpoint, extra={"history": result.history, "best_epoch": result.best_epoch})
    return result
