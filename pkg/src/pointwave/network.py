"""Point-cloud network: quantity stacking, feature transforms,
shared-kernel MLPs, local/global extraction, implicit-quantity encoding
and per-domain solver heads.

Widths follow the 50/32/128 contract: the encoded implicit parameters
(50), the local feature sequence (32) and the max-pooled global feature
(128) concatenate into a width-210 solving sequence that three
domain-specific heads map to pointwise predictions.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class NetworkError(Exception):
    pass


@dataclass(frozen=True)
class ArchConfig:
    output_channels: int = 2      # (Re, Im); 1 reproduces real-only mode
    implicit_dim: int = 50
    local_width: int = 32
    global_width: int = 128

    @property
    def criteria_width(self):
        return self.implicit_dim + self.local_width + self.global_width


HEAD_NAMES = ("interior", "radiation", "coupling")


def _dense_shapes(sizes):
    return [((m, n), (1, n)) for m, n in zip(sizes[:-1], sizes[1:])]


def _tnet_shapes(m):
    # per-point MLP m -> 32 -> 64, max-pool, dense 64 -> 32 -> m*m
    return _dense_shapes([m, 32, 64]) + _dense_shapes([64, 32, m * m])


def parameter_shapes(arch):
    """Ordered parameter names and shapes (declaration order is the
    checkpoint layout)."""
    shapes = {}

    def add(prefix, layer_shapes):
        for i, (w, b) in enumerate(layer_shapes, start=1):
            shapes[f"{prefix}.lin{i}.w"] = w
            shapes[f"{prefix}.lin{i}.b"] = b

    add("tnet1", _tnet_shapes(3))
    add("local1", _dense_shapes([3, 64, 64]))
    add("tnet2", _tnet_shapes(64))
    add("local2", _dense_shapes([64, arch.local_width]))
    add("global", _dense_shapes([arch.local_width, 64, arch.global_width]))
    for name in HEAD_NAMES:
        add(f"head_{name}",
            _dense_shapes([arch.criteria_width, 128, 64, 32,
                           arch.output_channels]))
    shapes["encoder.mu"] = (1, arch.implicit_dim)
    shapes["encoder.sigma"] = (1, arch.implicit_dim)
    return shapes


@dataclass
class ModelParams:
    arch: ArchConfig
    tensors: dict    # name -> float64 array, in declaration order

    def trainable_names(self):
        return [n for n in self.tensors if not n.startswith("encoder.")]

    def copy(self):
        return ModelParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})


def init_params(seed, arch=ArchConfig()):
    """Deterministic initialisation: fan-in uniform weights, zero biases,
    and T-Nets whose final layer is zeroed so they emit the identity."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in parameter_shapes(arch).items():
        if name.endswith(".b") or name == "encoder.mu":
            tensors[name] = np.zeros(shape)
        elif name == "encoder.sigma":
            tensors[name] = np.ones(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    for tnet in ("tnet1", "tnet2"):
        tensors[f"{tnet}.lin4.w"] = np.zeros_like(tensors[f"{tnet}.lin4.w"])
    return ModelParams(arch=arch, tensors=tensors)


# ---------------------------------------------------------------------------
# forward pieces (operate on tape Vars; params enter as leaves or consts)


def _dense(x, w, b, activate=True):
    h = ad.affine(x, w, b)
    return ad.mish(h) if activate else h


def stack_quantities(coords, freq):
    """Columnwise fusion (x, y, f): spatial cloud + explicit quantity."""
    if coords.shape[1] != 2 or freq.shape != (1, 1):
        raise NetworkError(
            f"stack expects (N,2) coords and (1,1) frequency, got "
            f"{coords.shape} and {freq.shape}")
    if coords.shape[0] == 0:
        raise NetworkError("cannot stack an empty cloud")
    return ad.concat_cols([coords, ad.broadcast_rows(freq, coords.shape[0])])


def _tnet_matrix(x, p, prefix):
    """Cloud-level m x m transform: per-point MLP, max-pool, dense layers,
    plus an identity bias so the zero-initialised net gives T = I."""
    m = x.shape[1]
    h = _dense(x, p[f"{prefix}.lin1.w"], p[f"{prefix}.lin1.b"])
    h = _dense(h, p[f"{prefix}.lin2.w"], p[f"{prefix}.lin2.b"])
    pooled = ad.maxpool_rows(h)
    h = _dense(pooled, p[f"{prefix}.lin3.w"], p[f"{prefix}.lin3.b"])
    flat = _dense(h, p[f"{prefix}.lin4.w"], p[f"{prefix}.lin4.b"], activate=False)
    t = ad.reshape(flat, (m, m))
    return t + x.tape.constant(np.eye(m))


def feature_transform(x, p, prefix):
    """Right-multiply every point row by the learned cloud-level matrix."""
    return x @ _tnet_matrix(x, p, prefix)


def matrix_mlp(x, p, prefix, n_layers, final_linear=False):
    """Shared-kernel pointwise MLP (1x1 kernels = a dense map per point)."""
    h = x
    for i in range(1, n_layers + 1):
        last = i == n_layers
        h = _dense(h, p[f"{prefix}.lin{i}.w"], p[f"{prefix}.lin{i}.b"],
                   activate=not (last and final_linear))
    return h


def local_extractor(stacked, p):
    """Transform(3x3) -> MLP 3-64-64 -> Transform(64x64) -> MLP 64-32."""
    if stacked.shape[1] != 3:
        raise NetworkError(f"local extractor expects width 3, got {stacked.shape}")
    h = feature_transform(stacked, p, "tnet1")
    h = matrix_mlp(h, p, "local1", 2)
    h = feature_transform(h, p, "tnet2")
    return matrix_mlp(h, p, "local2", 1)


def _global_row(local_features, p):
    if local_features.shape[0] == 0:
        raise NetworkError("global extractor needs a nonempty cloud")
    h = matrix_mlp(local_features, p, "global", 2)
    return ad.maxpool_rows(h)


def global_extractor(local_features, p):
    """MLP 32-64-128 per point, feature-wise max over the domain's cloud,
    broadcast back to every point."""
    return ad.broadcast_rows(_global_row(local_features, p),
                             local_features.shape[0])


def encode_implicit(raw, mu, sigma):
    """Z-score the 50 implicit parameters with frozen training-set stats."""
    raw = np.asarray(raw, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    sigma = np.asarray(sigma, dtype=float).reshape(-1)
    if raw.shape != mu.shape or raw.shape != sigma.shape:
        raise NetworkError("implicit vector and stats sizes differ")
    if np.any(sigma <= 0):
        raise NetworkError("degenerate implicit statistics: sigma must be > 0")
    return (raw - mu) / sigma


def criteria_solver(criteria, p, head):
    """Head for one domain: MLP 210-128-64-32-out, linear output."""
    if head not in HEAD_NAMES:
        raise NetworkError(f"unknown domain head '{head}'")
    return matrix_mlp(criteria, p, f"head_{head}", 4, final_linear=True)


def _head_from_parts(sp_row, s_local, sg_row, p, head, arch):
    """Same map as criteria_solver, fed the criteria parts.

    The implicit and global parts are identical across rows (one is a
    per-condition constant, the other a broadcast max-pool), so their
    share of the first layer reduces to two row products added to the
    bias; only the local part multiplies per point.  This is the first
    head layer reassociated, nothing more.
    """
    w1 = p[f"{head}.lin1.w"]
    d_p, d_l = arch.implicit_dim, arch.local_width
    w_top = ad.gather_rows(w1, np.arange(d_p))
    w_mid = ad.gather_rows(w1, np.arange(d_p, d_p + d_l))
    w_bot = ad.gather_rows(w1, np.arange(d_p + d_l, arch.criteria_width))
    row = (sp_row @ w_top) + (sg_row @ w_bot) + p[f"{head}.lin1.b"]
    h = ad.mish((s_local @ w_mid)
                + ad.broadcast_rows(row, s_local.shape[0]))
    for i in (2, 3):
        h = _dense(h, p[f"{head}.lin{i}.w"], p[f"{head}.lin{i}.b"])
    return _dense(h, p[f"{head}.lin4.w"], p[f"{head}.lin4.b"], activate=False)


def forward(tape, model, clouds, condition, param_vars=None):
    """Full pass over each domain's cloud under one parametric condition.

    ``clouds`` maps head names to (N, 2) coordinate arrays.  Parameters
    enter the tape as differentiable leaves unless ``param_vars``
    (an existing name -> Var mapping) is supplied.  Returns
    (domain -> dict with coords/freq/pred Vars, param_vars).
    """
    if param_vars is None:
        param_vars = {name: tape.input(model.tensors[name])
                      for name in model.trainable_names()}
    code = encode_implicit(condition.implicit_vector,
                           model.tensors["encoder.mu"],
                           model.tensors["encoder.sigma"])
    sp_row = tape.constant(code.reshape(1, -1))
    out = {}
    for head, coords in clouds.items():
        if len(coords) == 0:
            continue
        xv = tape.input(np.asarray(coords, dtype=float))
        fv = tape.input(np.array([[condition.f]]))
        stacked = stack_quantities(xv, fv)
        s_local = local_extractor(stacked, param_vars)
        g_row = _global_row(s_local, param_vars)
        s_global = ad.broadcast_rows(g_row, xv.shape[0])
        s_param = ad.broadcast_rows(sp_row, xv.shape[0])
        criteria = ad.concat_cols([s_param, s_local, s_global])
        if criteria.shape[1] != model.arch.criteria_width:
            raise NetworkError(
                f"criteria width {criteria.shape[1]} != "
                f"{model.arch.criteria_width}")
        pred = _head_from_parts(sp_row, s_local, g_row, param_vars,
                                f"head_{head}", model.arch)
        out[head] = {"coords": xv, "freq": fv, "criteria": criteria,
                     "pred": pred}
    return out, param_vars


def predict(model, clouds, condition):
    """Plain-array predictions per domain (complex scattered pressure)."""
    tape = ad.Tape(check_nan=False)
    outs, _ = forward(tape, model, clouds, condition)
    result = {}
    for head, o in outs.items():
        arr = o["pred"].value
        if model.arch.output_channels == 2:
            result[head] = arr[:, 0] + 1j * arr[:, 1]
        else:
            result[head] = arr[:, 0] + 0j
    return result


# ---------------------------------------------------------------------------
# checkpoints: versioned binary with magic, widths, flat little-endian
# float64 tensors in declaration order and a trailing CRC-32


CHECKPOINT_MAGIC = b"PWCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(model, path):
    arch = model.arch
    widths = [arch.output_channels, arch.implicit_dim, arch.local_width,
              arch.global_width]
    payload = bytearray()
    payload += CHECKPOINT_MAGIC
    payload += struct.pack("<I", CHECKPOINT_VERSION)
    payload += struct.pack("<I", len(widths))
    payload += struct.pack(f"<{len(widths)}I", *widths)
    payload += struct.pack("<I", len(model.tensors))
    for name, shape in parameter_shapes(arch).items():
        arr = np.ascontiguousarray(model.tensors[name], dtype="<f8")
        if arr.shape != shape:
            raise NetworkError(f"tensor {name} has shape {arr.shape}, "
                               f"expected {shape}")
        payload += arr.tobytes()
    payload += struct.pack("<I", zlib.crc32(bytes(payload)) & 0xFFFFFFFF)
    with open(path, "wb") as f:
        f.write(bytes(payload))


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise NetworkError(f"{path} is not a checkpoint file")
    (crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != crc:
        raise NetworkError(f"checkpoint {path} failed its checksum")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off); off += 4
    if version != CHECKPOINT_VERSION:
        raise NetworkError(f"unsupported checkpoint version {version}")
    (nw,) = struct.unpack_from("<I", blob, off); off += 4
    widths = struct.unpack_from(f"<{nw}I", blob, off); off += 4 * nw
    arch = ArchConfig(output_channels=widths[0], implicit_dim=widths[1],
                      local_width=widths[2], global_width=widths[3])
    (ntens,) = struct.unpack_from("<I", blob, off); off += 4
    shapes = parameter_shapes(arch)
    if ntens != len(shapes):
        raise NetworkError("checkpoint tensor count does not match layout")
    tensors = {}
    for name, shape in shapes.items():
        count = shape[0] * shape[1]
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        off += 8 * count
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return ModelParams(arch=arch, tensors=tensors)
