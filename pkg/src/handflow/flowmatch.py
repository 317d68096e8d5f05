"""The flow-matching motion model.

An encoder organizes past-motion tokens, waypoint tokens and future query
slots on one temporal axis (positional IDs are 10 FPS frame indices offset so
past frames occupy 1..H and the future occupies H+1..H+T), with the intent
embedding and visual features attached as non-temporal context tokens. A
decoder regresses the conditional velocity field over the T future slots;
training interpolates noise toward data and regresses x1 - x0, inference
Euler-integrates the field from seeded noise.

Trajectories are standardized with the dataset manifest's position mean/std
so the unit-normal noise scale is meaningful for positions and rotations
alike.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass

import numpy as np

from . import geometry, nn
from .dataio import DEFAULT_CTX_DIM, DEFAULT_EMB_DIM, DatasetManifest
from .losses import LossWeights, fm_loss
from .nn import tensor as T
from .nn.tensor import Tensor
from .trajectory import FPS, BiHandState, Pose6DoF, flatten_state

log = logging.getLogger(__name__)

# modality embedding rows
_PAST, _WAYPOINT, _QUERY, _CTX_INTENT, _CTX_VISUAL = range(5)

PAST_FEAT_DIM = 20  # pos6 + rot12 + 2 validity flags
WP_FEAT_DIM = 24  # kind one-hot 3 + timestamp + pos6 + rot12 + 2 visibility flags
STATE_DIM = 18  # pos6 + rot12


class BadTimestamp(ValueError):
    """Waypoint timestamp is beyond the representable horizon plus slack."""


@dataclass(frozen=True)
class MotionExpertConfig:
    """Motion model hyperparameters (reference scale by default)."""

    hidden_dim: int = 768
    enc_layers: int = 6
    dec_layers: int = 6
    heads: int = 8
    time_embed_dim: int = 256
    past_len: int = 5
    max_future: int = 50
    euler_steps: int = 150
    fps: int = FPS
    ctx_dim: int = DEFAULT_CTX_DIM
    emb_dim: int = DEFAULT_EMB_DIM
    use_waypoints: bool = True
    use_action_embedding: bool = True

    def __post_init__(self):
        if self.past_len < 1 or not (1 <= self.max_future <= 50):
            raise ValueError("need past_len >= 1 and 1 <= max_future <= 50")
        if self.euler_steps < 1:
            raise ValueError("euler_steps must be >= 1")
        if self.fps != FPS:
            raise ValueError(f"fps must be {FPS}")

    @staticmethod
    def desk():
        """Small CPU-friendly configuration used by the test and demo suites."""
        return MotionExpertConfig(
            hidden_dim=64,
            enc_layers=2,
            dec_layers=2,
            heads=4,
            time_embed_dim=32,
            past_len=5,
            max_future=20,
            euler_steps=50,
        )

    def to_dict(self):
        return dataclasses.asdict(self)


def waypoint_position_id(timestamp, cfg: MotionExpertConfig):
    """Temporal position ID for a waypoint: its 10 FPS frame index offset by H.

    IDs are clamped into the future range [H+1, H+T]; a timestamp more than
    1 s beyond the horizon raises BadTimestamp, anything between gets clamped
    with a logged warning.
    """
    horizon = cfg.max_future / cfg.fps
    if timestamp > horizon + 1.0:
        raise BadTimestamp(
            f"waypoint timestamp {timestamp:.2f} s exceeds horizon {horizon:.2f} s + 1 s"
        )
    frame = int(round(timestamp * cfg.fps))
    if frame > cfg.max_future:
        log.warning(
            "waypoint timestamp %.2f s beyond %.1f s horizon; clamping position id",
            timestamp,
            horizon,
        )
    return cfg.past_len + min(max(frame, 1), cfg.max_future)


def normalize_positions(pos6, manifest: DatasetManifest):
    mean = np.tile(manifest.pos_mean, 2)
    std = np.tile(manifest.pos_std, 2)
    return (np.asarray(pos6) - mean) / std


def denormalize_positions(pos6, manifest: DatasetManifest):
    mean = np.tile(manifest.pos_mean, 2)
    std = np.tile(manifest.pos_std, 2)
    return np.asarray(pos6) * std + mean


def build_batch(samples, bundles, manifest, cfg: MotionExpertConfig, dtype=np.float32):
    """Pack samples + token bundles into fixed-shape arrays for the model.

    Futures shorter than cfg.max_future keep the full T-slot layout; the
    returned step_mask marks real steps for loss masking and truncation.
    """
    b = len(samples)
    h, t_max = cfg.past_len, cfg.max_future
    past = np.zeros((b, h, PAST_FEAT_DIM), dtype=dtype)
    wps = np.zeros((b, 3, WP_FEAT_DIM), dtype=dtype)
    wp_ids = np.zeros((b, 3), dtype=int)
    intent = np.zeros((b, cfg.emb_dim), dtype=dtype)
    ctx = np.zeros((b, 1, cfg.ctx_dim), dtype=dtype)
    x1 = np.zeros((b, t_max, STATE_DIM), dtype=dtype)
    mask = np.zeros((b, t_max), dtype=dtype)

    for i, (sample, bundle) in enumerate(zip(samples, bundles)):
        if len(sample.past) < h:
            raise ValueError(f"{sample.sample_id}: needs at least {h} past states")
        for j, st in enumerate(sample.past[-h:]):
            pos6, rot12 = flatten_state(st)
            past[i, j] = np.concatenate(
                [
                    normalize_positions(pos6, manifest),
                    rot12,
                    [float(st.left_valid), float(st.right_valid)],
                ]
            )
        for j, wp in enumerate(bundle.waypoints()):
            onehot = np.zeros(3)
            onehot[j] = 1.0
            pos6 = np.concatenate([wp.left.position, wp.right.position])
            rot12 = np.concatenate([wp.left.rotation, wp.right.rotation])
            wps[i, j] = np.concatenate(
                [
                    onehot,
                    [wp.timestamp],
                    normalize_positions(pos6, manifest),
                    rot12,
                    [float(wp.left_visible), float(wp.right_visible)],
                ]
            )
            wp_ids[i, j] = waypoint_position_id(wp.timestamp, cfg)
        if bundle.act is not None:
            act = np.asarray(bundle.act, dtype=dtype)
            if act.shape != (cfg.emb_dim,):
                raise ValueError(
                    f"{sample.sample_id}: action embedding dim {act.shape} != {cfg.emb_dim}"
                )
            intent[i] = act
        feats = np.asarray(sample.context_features, dtype=dtype)
        if feats.shape != (cfg.ctx_dim,):
            raise ValueError(
                f"{sample.sample_id}: context feature dim {feats.shape} != ({cfg.ctx_dim},)"
            )
        ctx[i, 0] = feats
        n_future = min(len(sample.future), t_max)
        for j, st in enumerate(sample.future[:n_future]):
            pos6, rot12 = flatten_state(st)
            x1[i, j] = np.concatenate([normalize_positions(pos6, manifest), rot12])
        mask[i, :n_future] = 1.0

    return {
        "past": past,
        "waypoints": wps,
        "waypoint_ids": wp_ids,
        "intent": intent,
        "context": ctx,
        "x1": x1,
        "step_mask": mask,
        "future_len": np.array([min(len(s.future), t_max) for s in samples], dtype=int),
    }


class MotionExpert(nn.Module):
    def __init__(self, cfg: MotionExpertConfig, manifest: DatasetManifest, seed=0, dtype=np.float32):
        rng = np.random.default_rng(seed)
        d = cfg.hidden_dim
        self.cfg = cfg
        self.manifest = manifest
        self.dtype = dtype

        self.proj_past = nn.Linear(PAST_FEAT_DIM, d, rng, dtype)
        self.proj_wp = nn.Linear(WP_FEAT_DIM, d, rng, dtype)
        self.proj_intent = nn.Linear(cfg.emb_dim, d, rng, dtype)
        self.proj_ctx = nn.Linear(cfg.ctx_dim, d, rng, dtype)
        self.proj_query_x = nn.Linear(STATE_DIM, d, rng, dtype)
        self.pos_embed = nn.Embedding(cfg.past_len + cfg.max_future + 1, d, rng, dtype)
        self.modality_embed = nn.Embedding(5, d, rng, dtype)
        self.encoder = [
            nn.TransformerLayer(d, cfg.heads, rng, dtype=dtype) for _ in range(cfg.enc_layers)
        ]
        self.enc_norm = nn.LayerNorm(d, dtype)
        # self-attention stack over query tokens applied before decoding
        self.pre_decoder = [nn.TransformerLayer(d, cfg.heads, rng, dtype=dtype) for _ in range(2)]
        self.decoder = [
            nn.TransformerLayer(d, cfg.heads, rng, with_cross=True, dtype=dtype)
            for _ in range(cfg.dec_layers)
        ]
        self.dec_norm = nn.LayerNorm(d, dtype)
        self.head = nn.Linear(d, STATE_DIM, rng, dtype)
        self.film_gen = nn.FiLMGenerator(cfg.time_embed_dim, d, rng, dtype)

    # -- encoding ---------------------------------------------------------

    def _query_base(self, b):
        cfg = self.cfg
        ids = np.arange(cfg.past_len + 1, cfg.past_len + cfg.max_future + 1)
        base = self.pos_embed(np.tile(ids, (b, 1))) + self.modality_embed(
            np.full((b, cfg.max_future), _QUERY)
        )
        return base

    def encode(self, batch, extra_context=None):
        """Encode one batch into the memory the decoder cross-attends to.

        extra_context: optional (B, n, ctx_dim) array appended as additional
        visual-type context tokens (used by the permutation tests).
        """
        cfg = self.cfg
        b = batch["past"].shape[0]
        past_ids = np.tile(np.arange(1, cfg.past_len + 1), (b, 1))
        tokens = [
            self.proj_past(Tensor(batch["past"].astype(self.dtype)))
            + self.pos_embed(past_ids)
            + self.modality_embed(np.full((b, cfg.past_len), _PAST))
        ]
        if cfg.use_waypoints:
            tokens.append(
                self.proj_wp(Tensor(batch["waypoints"].astype(self.dtype)))
                + self.pos_embed(batch["waypoint_ids"])
                + self.modality_embed(np.full((b, 3), _WAYPOINT))
            )
        tokens.append(self._query_base(b))
        if cfg.use_action_embedding:
            intent_tok = T.reshape(
                self.proj_intent(Tensor(batch["intent"].astype(self.dtype))),
                (b, 1, cfg.hidden_dim),
            ) + self.modality_embed(np.full((b, 1), _CTX_INTENT))
            tokens.append(intent_tok)
        ctx = batch["context"]
        if extra_context is not None:
            ctx = np.concatenate([ctx, np.asarray(extra_context, dtype=self.dtype)], axis=1)
        tokens.append(
            self.proj_ctx(Tensor(ctx.astype(self.dtype)))
            + self.modality_embed(np.full((b, ctx.shape[1]), _CTX_VISUAL))
        )
        x = T.concat(tokens, axis=1)
        for layer in self.encoder:
            x = layer(x)
        return self.enc_norm(x)

    # -- velocity field ------------------------------------------------------

    def velocity(self, memory, x, t):
        """Velocity field over the T future slots.

        x: (B, T, 18) current flow state (array or Tensor); t: (B,) flow times
        in [0, 1]. Time conditioning enters through a sinusoidal embedding
        mapped to FiLM parameters over the query features.
        """
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        b = x.shape[0]
        q = self.proj_query_x(x) + self._query_base(b)
        temb = nn.sinusoidal_time_embedding(np.asarray(t, dtype=np.float64), cfg.time_embed_dim)
        gamma, beta = self.film_gen(Tensor(temb.astype(self.dtype)))
        q = nn.film(
            q,
            T.reshape(gamma, (b, 1, cfg.hidden_dim)),
            T.reshape(beta, (b, 1, cfg.hidden_dim)),
        )
        for layer in self.pre_decoder:
            q = layer(q)
        for layer in self.decoder:
            q = layer(q, memory=memory)
        return self.head(self.dec_norm(q))

    # -- sampling ----------------------------------------------------------------

    def initial_noise(self, seed, batch_size=1):
        """The standard-normal x0 a given seed produces (exposed for oracles)."""
        rng = np.random.default_rng(seed)
        return rng.standard_normal((batch_size, self.cfg.max_future, STATE_DIM)).astype(
            self.dtype
        )

    def sample_batch(self, memory, seeds, n_steps=None, velocity_fn=None, chunk_size=64):
        """Euler-integrate the velocity field from per-seed noise.

        Returns (raw, diagnostics): raw is the integrated (B, T, 18) endpoint
        in normalized coordinates. velocity_fn overrides the trained field
        (signature (x, t) -> array), which the exactness tests use. Rows are
        independent, so large batches are integrated in fixed-size chunks to
        stay inside cache.
        """
        n = n_steps or self.cfg.euler_steps
        b = len(seeds)
        dt = 1.0 / n
        out = []
        with T.no_grad():
            for lo in range(0, b, chunk_size):
                hi = min(lo + chunk_size, b)
                x = np.concatenate(
                    [self.initial_noise(s) for s in seeds[lo:hi]], axis=0
                )
                mem_chunk = Tensor(memory.data[lo:hi])
                for k in range(n):
                    t = np.full(hi - lo, k / n)
                    if velocity_fn is not None:
                        v = np.asarray(velocity_fn(x, t))
                    else:
                        v = self.velocity(mem_chunk, x, t).data
                    x = x + dt * v
                out.append(x)
        return np.concatenate(out, axis=0), {"euler_steps": n}

    def states_from_raw(self, raw_row, n_future=None):
        """Decode one raw (T, 18) row into BiHandStates on the future grid.

        Rotations are orthonormalized; a degenerate step falls back to the
        previous step's rotation (identity at step 0) and is counted in the
        returned diagnostics.
        """
        cfg = self.cfg
        n = cfg.max_future if n_future is None else min(n_future, cfg.max_future)
        pos6 = denormalize_positions(raw_row[:, :6].astype(np.float64), self.manifest)
        rot12 = raw_row[:, 6:].astype(np.float64)
        states, degenerate = [], 0
        prev = [np.eye(3), np.eye(3)]
        for i in range(n):
            mats, ok = geometry.try_rot6d_to_matrix(rot12[i].reshape(2, 6))
            for h in range(2):
                if ok[h]:
                    prev[h] = mats[h]
                else:
                    degenerate += 1
            states.append(
                BiHandState(
                    timestamp=round((i + 1) / cfg.fps, 6),
                    left=Pose6DoF(pos6[i, :3], geometry.matrix_to_rot6d(prev[0])),
                    right=Pose6DoF(pos6[i, 3:], geometry.matrix_to_rot6d(prev[1])),
                )
            )
        return states, degenerate


def derive_seeds(master_seed, count):
    """Deterministic child seeds for best-of-K sampling."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(master_seed).spawn(count)]


def predict_best_of_k(model: MotionExpert, sample, bundle, k, master_seed=0, n_steps=None):
    """k independently seeded trajectories for one sample, in seed order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    batch = build_batch([sample], [bundle], model.manifest, model.cfg, dtype=model.dtype)
    with T.no_grad():
        memory = model.encode(batch)
    mem_tiled = Tensor(np.repeat(memory.data, k, axis=0))
    seeds = derive_seeds(master_seed, k)
    raw, _ = model.sample_batch(mem_tiled, seeds, n_steps=n_steps)
    n_future = int(batch["future_len"][0])
    return [model.states_from_raw(raw[i], n_future)[0] for i in range(k)]


def train_step(model: MotionExpert, optimizer, batch, rng, weights: LossWeights):
    """One flow-matching update on a prepared batch.

    Draws x0 ~ N(0, 1) and t ~ U(0, 1) per element, forms the interpolant
    x_t = (1 - t) x0 + t x1, regresses the velocity toward x1 - x0 with
    padded future steps masked out, and applies one optimizer step. Returns
    the per-term loss breakdown as plain floats.
    """
    x1 = batch["x1"].astype(model.dtype)
    b, t_max, _ = x1.shape
    t = rng.uniform(size=b)
    x0 = rng.standard_normal(x1.shape).astype(model.dtype)
    xt = ((1.0 - t)[:, None, None] * x0 + t[:, None, None] * x1).astype(model.dtype)

    memory = model.encode(batch)
    v = model.velocity(memory, xt, t)
    loss = fm_loss(v, x0, x1, rot_weight=weights.rot_weight_fm, step_mask=batch["step_mask"])

    optimizer.zero_grad()
    loss.backward()
    lr = optimizer.step()

    # per-term diagnostics, computed outside the graph
    r = v.data - (x1 - x0)
    w = batch["step_mask"][..., None]
    denom = w.sum()
    pos_mse = float((r[..., :6] ** 2 * w).sum() / (denom * 6))
    rot_mse = float((r[..., 6:] ** 2 * w).sum() / (denom * 12))
    return {
        "fm": float(loss.data),
        "fm_pos": pos_mse,
        "fm_rot": rot_mse,
        "lr": float(lr),
    }


# -- model persistence -----------------------------------------------------------

def save_model(path, model: MotionExpert, opt=None, step=0, config_hash="", rng_state=None):
    m = model.manifest
    extra = {
        "model_config": model.cfg.to_dict(),
        # full-precision normalization constants: reloading must reproduce
        # the exact same de-normalized trajectories
        "manifest": {
            "name": m.name,
            "n_samples": m.n_samples,
            "scene_ids": list(m.scene_ids),
            "pos_mean": [float(v) for v in m.pos_mean],
            "pos_std": [float(v) for v in m.pos_std],
            "fps": m.fps,
            "schema_version": m.schema_version,
        },
        "dtype": np.dtype(model.dtype).name,
    }
    nn.save_checkpoint(
        path,
        model.state(),
        opt_state=None if opt is None else opt.state_dict(),
        step=step,
        config_hash=config_hash,
        rng_state=rng_state,
        extra=extra,
    )


def load_model(path):
    """Rebuild a MotionExpert (and optimizer state, if stored) from one file."""
    params, opt_state, meta = nn.load_checkpoint(path)
    extra = meta["extra"]
    cfg = MotionExpertConfig(**extra["model_config"])
    manifest = DatasetManifest.from_json(json.dumps(extra["manifest"]))
    model = MotionExpert(cfg, manifest, seed=0, dtype=np.dtype(extra["dtype"]))
    model.load_state(params)
    return model, opt_state, meta
