"""Spiral autoencoder: per-frame mesh -> C-dim code -> reconstructed mesh.

Encoder: 4 x (spiral conv -> ELU -> downsample) with widths [16,32,64,128],
then one fully connected layer from the flattened coarsest level to the
code. Decoder: fully connected back to the coarsest level, then 5 spiral
convs of widths [128,64,32,32,16] with an upsample before each of the
first 4 (mirroring the encoder's 4 downsamples), and a final spiral
projection to 3 coordinate channels with no activation.

Frames are processed in mini-batches by stacking them into one
(batch*V, F) feature matrix and offsetting the spiral/sampling index
tables per frame, which keeps all compute inside a few large matmuls.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from . import engine
from .checkpoint import save_checkpoint
from .engine import Tensor
from .errors import FormatError, NonFiniteError
from .hierarchy import MeshHierarchy
from .optim import AdamState, adam_step, glorot_uniform, lr_decay, zeros_param
from .sampling import SamplingOperator
from .spiral import PAD_SENTINEL, SpiralIndexTable

ENCODER_WIDTHS = (16, 32, 64, 128)
DECODER_WIDTHS = (128, 64, 32, 32, 16)

EMB_MAGIC = b"SPTE"
EMB_VERSION = 1


def init_spae_params(hierarchy: MeshHierarchy, latent_dim: int,
                     rng: np.random.Generator, dtype=np.float32) -> dict:
    """Fresh parameter dict; names are stable and checkpoint-friendly."""
    if hierarchy.level_count != len(ENCODER_WIDTHS) + 1:
        raise ValueError(
            f"autoencoder needs {len(ENCODER_WIDTHS)} downsampling steps, "
            f"hierarchy has {hierarchy.level_count - 1}")
    params = {}
    widths_in = (3,) + ENCODER_WIDTHS[:-1]
    for i, (f_in, f_out) in enumerate(zip(widths_in, ENCODER_WIDTHS)):
        l = hierarchy.spirals[i].length
        params[f"spae.enc.{i}.weight"] = glorot_uniform(
            rng, l * f_in, f_out, dtype=dtype)
        params[f"spae.enc.{i}.bias"] = zeros_param((f_out,), dtype=dtype)
    v_coarsest = hierarchy.levels[-1].vertex_count
    flat = v_coarsest * ENCODER_WIDTHS[-1]
    params["spae.fc1.weight"] = glorot_uniform(rng, flat, latent_dim,
                                               dtype=dtype)
    params["spae.fc1.bias"] = zeros_param((latent_dim,), dtype=dtype)
    params["spae.fc2.weight"] = glorot_uniform(rng, latent_dim, flat,
                                               dtype=dtype)
    params["spae.fc2.bias"] = zeros_param((flat,), dtype=dtype)

    # Decoder conv i runs at level (levels-2-i) after upsampling for i < 4;
    # conv 4 and the output projection stay at level 0.
    dec_in = (ENCODER_WIDTHS[-1],) + DECODER_WIDTHS[:-1]
    for i, (f_in, f_out) in enumerate(zip(dec_in, DECODER_WIDTHS)):
        level = _decoder_level(hierarchy, i)
        l = hierarchy.spirals[level].length
        params[f"spae.dec.{i}.weight"] = glorot_uniform(
            rng, l * f_in, f_out, dtype=dtype)
        params[f"spae.dec.{i}.bias"] = zeros_param((f_out,), dtype=dtype)
    l0 = hierarchy.spirals[0].length
    params["spae.out.weight"] = glorot_uniform(
        rng, l0 * DECODER_WIDTHS[-1], 3, dtype=dtype)
    params["spae.out.bias"] = zeros_param((3,), dtype=dtype)
    return params


def _decoder_level(hierarchy: MeshHierarchy, conv_index: int) -> int:
    top = hierarchy.level_count - 1
    return max(top - 1 - conv_index, 0)


def batched_spiral_indices(table: SpiralIndexTable, batch: int) -> np.ndarray:
    """Tile a (V, l) spiral table for `batch` stacked frames.

    Non-sentinel entries of copy b are offset by b*V; sentinels stay put.
    """
    idx = table.indices
    v = len(idx)
    offsets = (np.arange(batch, dtype=np.int64) * v)[:, None, None]
    tiled = idx[None].astype(np.int64) + np.where(idx[None] == PAD_SENTINEL,
                                                  0, offsets)
    return tiled.reshape(batch * v, table.length)


def batched_sampling(op: SamplingOperator, batch: int):
    """Block-diagonal COO triples for a per-frame operator."""
    n = len(op.row_idx)
    b = np.repeat(np.arange(batch, dtype=np.int64), n)
    row_idx = np.tile(op.row_idx.astype(np.int64), batch) + b * op.rows
    col_idx = np.tile(op.col_idx.astype(np.int64), batch) + b * op.cols
    weights = np.tile(op.weights, batch)
    return op.rows * batch, row_idx, col_idx, weights


def spiral_conv(features: Tensor, indices: np.ndarray, weight: Tensor,
                bias: Tensor) -> Tensor:
    """Gather spiral neighborhoods, concatenate, apply the shared filter."""
    v, l = indices.shape
    f_in = features.shape[1]
    if weight.shape[0] != l * f_in:
        raise ValueError(
            f"spiral filter expects {weight.shape[0]} inputs per vertex, "
            f"got spiral length {l} x {f_in} features")
    gathered = engine.gather_rows(features, indices)
    flat = engine.reshape(gathered, (v, l * f_in))
    return engine.add_bias(engine.matmul(flat, weight), bias)


def encode_batch(params: dict, hierarchy: MeshHierarchy, frames) -> Tensor:
    """frames: (B, V, 3) array or Tensor -> (B, C) codes."""
    if not isinstance(frames, Tensor):
        frames = Tensor(np.asarray(frames))
    b, v, _ = frames.shape
    if v != hierarchy.levels[0].vertex_count:
        raise ValueError(f"frames have {v} vertices, hierarchy level 0 has "
                         f"{hierarchy.levels[0].vertex_count}")
    x = engine.reshape(frames, (b * v, 3))
    for i in range(len(ENCODER_WIDTHS)):
        idx = batched_spiral_indices(hierarchy.spirals[i], b)
        x = engine.elu(spiral_conv(x, idx, params[f"spae.enc.{i}.weight"],
                                   params[f"spae.enc.{i}.bias"]))
        x = engine.sparse_mm(*batched_sampling(hierarchy.downs[i], b), x)
    v_top = hierarchy.levels[-1].vertex_count
    x = engine.reshape(x, (b, v_top * ENCODER_WIDTHS[-1]))
    return engine.add_bias(engine.matmul(x, params["spae.fc1.weight"]),
                           params["spae.fc1.bias"])


def decode_batch(params: dict, hierarchy: MeshHierarchy,
                 codes: Tensor) -> Tensor:
    """codes: (B, C) -> reconstructed frames (B, V, 3)."""
    b = codes.shape[0]
    v_top = hierarchy.levels[-1].vertex_count
    x = engine.add_bias(engine.matmul(codes, params["spae.fc2.weight"]),
                        params["spae.fc2.bias"])
    x = engine.reshape(x, (b * v_top, ENCODER_WIDTHS[-1]))
    n_up = hierarchy.level_count - 1
    for i in range(len(DECODER_WIDTHS)):
        if i < n_up:
            up = hierarchy.ups[n_up - 1 - i]
            x = engine.sparse_mm(*batched_sampling(up, b), x)
        level = _decoder_level(hierarchy, i)
        idx = batched_spiral_indices(hierarchy.spirals[level], b)
        x = engine.elu(spiral_conv(x, idx, params[f"spae.dec.{i}.weight"],
                                   params[f"spae.dec.{i}.bias"]))
    idx0 = batched_spiral_indices(hierarchy.spirals[0], b)
    x = spiral_conv(x, idx0, params["spae.out.weight"], params["spae.out.bias"])
    v0 = hierarchy.levels[0].vertex_count
    return engine.reshape(x, (b, v0, 3))


def encode_frame(params: dict, hierarchy: MeshHierarchy,
                 frame: np.ndarray) -> np.ndarray:
    """Single-frame convenience wrapper returning a plain (C,) array."""
    codes = encode_batch(frozen_params(params), hierarchy, frame[None])
    return codes.data[0].copy()


def frozen_params(params: dict) -> dict:
    """A no-gradient view for inference (skips graph construction)."""
    return {name: (p.detach() if isinstance(p, Tensor) else Tensor(p))
            for name, p in params.items()}


def reconstruction_loss(params: dict, hierarchy: MeshHierarchy,
                        frames) -> Tensor:
    codes = encode_batch(params, hierarchy, frames)
    recon = decode_batch(params, hierarchy, codes)
    target = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames))
    return engine.l1_loss(recon, target)


def train_spae(frames: np.ndarray, hierarchy: MeshHierarchy, *,
               latent_dim: int, epochs: int, batch_size: int,
               learning_rate: float, decay_rate: float, weight_decay: float,
               seed: int, checkpoint_dir=None, checkpoint_every: int = 50,
               extra_tensors=None, log=None):
    """Reconstruction training over individual (already normalized) frames.

    Returns (params, AdamState, per-epoch mean loss list). Frames are
    shuffled each epoch; the learning rate decays per epoch. A non-finite
    loss aborts with the epoch/iteration in the message.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or len(frames) == 0:
        raise ValueError("training frames must be a nonempty (N, V, 3) array")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xAE]))
    params = init_spae_params(hierarchy, latent_dim, rng)
    state = AdamState()
    n = len(frames)
    curve = []
    for epoch in range(1, epochs + 1):
        lr = lr_decay(learning_rate, epoch - 1, decay_rate)
        order = rng.permutation(n)
        total, count = 0.0, 0
        for it, start in enumerate(range(0, n, batch_size)):
            batch = frames[order[start:start + batch_size]]
            try:
                loss = reconstruction_loss(params, hierarchy, batch)
                loss.backward()
            except NonFiniteError as e:
                raise NonFiniteError(
                    f"epoch {epoch} iteration {it}: {e}") from e
            adam_step(params, state, lr, weight_decay)
            total += loss.item() * len(batch)
            count += len(batch)
        curve.append(total / count)
        if log is not None:
            log(epoch, curve[-1])
        if checkpoint_dir is not None and (
                epoch % checkpoint_every == 0 or epoch == epochs):
            _save(checkpoint_dir, params, state, extra_tensors)
    if checkpoint_dir is not None and epochs == 0:
        _save(checkpoint_dir, params, state, extra_tensors)
    return params, state, curve


def _save(checkpoint_dir, params, state, extra_tensors):
    os.makedirs(checkpoint_dir, exist_ok=True)
    tensors = dict(params)
    if extra_tensors:
        tensors.update(extra_tensors)
    save_checkpoint(os.path.join(checkpoint_dir, "spae.ckpt"), tensors, state)


def encode_dataset(params: dict, hierarchy: MeshHierarchy, sequences,
                   chunk: int = 32):
    """Per-frame embeddings for whole sequences.

    `sequences` yields (frames (L, V, 3) normalized, label) pairs; returns a
    list of ((L, C) float32 array, label). Order is preserved and frames are
    independent, so chunking is purely a batching detail.
    """
    frozen = frozen_params(params)
    out = []
    for frames, label in sequences:
        frames = np.asarray(frames, dtype=np.float32)
        rows = []
        for start in range(0, len(frames), chunk):
            codes = encode_batch(frozen, hierarchy, frames[start:start + chunk])
            rows.append(codes.data.astype(np.float32))
        out.append((np.concatenate(rows, axis=0), int(label)))
    return out


def save_embeddings(path, embedded) -> None:
    """Embedding cache: per-sequence (L, C) f32 blocks with labels."""
    if not embedded:
        raise ValueError("refusing to write an empty embedding cache")
    c = embedded[0][0].shape[1]
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<III", EMB_VERSION, c, len(embedded)))
        for emb, label in embedded:
            if emb.ndim != 2 or emb.shape[1] != c:
                raise ValueError(f"embedding block {emb.shape} does not have "
                                 f"width {c}")
            fh.write(struct.pack("<II", emb.shape[0], label))
            fh.write(np.ascontiguousarray(emb, dtype="<f4").tobytes())


def load_embeddings(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMB_MAGIC:
            raise FormatError(f"bad embedding cache magic: expected "
                              f"{EMB_MAGIC!r}, got {magic!r}")
        raw = fh.read(12)
        if len(raw) != 12:
            raise FormatError("truncated embedding cache header")
        version, c, count = struct.unpack("<III", raw)
        if version != EMB_VERSION:
            raise FormatError(f"unsupported embedding cache version {version}")
        out = []
        for i in range(count):
            raw = fh.read(8)
            if len(raw) != 8:
                raise FormatError(f"truncated embedding cache at sequence {i}")
            length, label = struct.unpack("<II", raw)
            payload = fh.read(4 * length * c)
            if len(payload) != 4 * length * c:
                raise FormatError(f"truncated embedding payload at sequence {i}")
            emb = np.frombuffer(payload, dtype="<f4").reshape(length, c).copy()
            out.append((emb, label))
    return out
