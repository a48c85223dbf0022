"""Bit-exact binary checkpoint persistence.

Layout (all little-endian):

    magic  b"PVB1"
    u32    format version (currently 1)
    payload
    u32    CRC32 of the payload bytes

Payload:

    u32 x 5   dims: input, hidden, feature, classes, rank
    u32 x 3   flags: adapter kind (0 polar, 1 lora), head kind (0 vbll, 1 mle),
              laplace present (0/1)
    config    u64 steps, batch, eval_every, seed;
              f64 lr_polar, lr_vbll, landing_lambda, prior_var, kl_weight, alpha;
              u32 scheduler (0 cosine-restarts, 1 constant)
    rng       u64 x 6: PCG64 state hi/lo, increment hi/lo, has_uint32, uinteger
    arrays    each as u64 rows, u64 cols, then rows*cols f64 row-major:
              base weights per layer; adapter factors per layer
              (polar: U, core, V; lora: B, A); head means; per-class head
              Cholesky factors (vbll only); per-class Laplace covariances
              (only when the laplace flag is set).

The version is checked before the checksum so files from a newer format fail
with VersionUnsupported instead of a checksum complaint; any byte flip inside
the payload fails with ChecksumMismatch.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .adapters import LoraAdapter, PolarAdapter
from .errors import BadMagic, ChecksumMismatch, TruncatedFile, VersionUnsupported
from .features import FeatureExtractor
from .laplace import LaplacePosterior
from .stiefel import StiefelFactor
from .train import CheckpointState, MleHead, TrainConfig
from .vbll import VbllHead

MAGIC = b"PVB1"
VERSION = 1

_ADAPTER_CODE = {"polar": 0, "lora": 1}
_HEAD_CODE = {"vbll": 0, "mle": 1}
_SCHED_CODE = {"cosine-restarts": 0, "constant": 1}
_ADAPTER_NAME = {v: k for k, v in _ADAPTER_CODE.items()}
_HEAD_NAME = {v: k for k, v in _HEAD_CODE.items()}
_SCHED_NAME = {v: k for k, v in _SCHED_CODE.items()}

_U64_MASK = (1 << 64) - 1


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    rows, cols = arr.shape
    return struct.pack("<QQ", rows, cols) + arr.astype("<f8", copy=False).tobytes()


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self) -> np.ndarray:
        rows, cols = self.unpack("<QQ")
        data = self.take(rows * cols * 8)
        return np.frombuffer(data, dtype="<f8").reshape(rows, cols).copy()

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _payload_bytes(state: CheckpointState) -> bytes:
    cfg = state.config
    fx = state.extractor
    parts: list[bytes] = []
    parts.append(
        struct.pack(
            "<5I",
            fx.input_dim,
            cfg.hidden_dim,
            cfg.feature_dim,
            state.head.means.shape[0],
            cfg.rank,
        )
    )
    parts.append(
        struct.pack(
            "<3I",
            _ADAPTER_CODE[cfg.adapter],
            _HEAD_CODE[cfg.head],
            1 if state.laplace is not None else 0,
        )
    )
    parts.append(struct.pack("<4Q", cfg.steps, cfg.batch, cfg.eval_every, cfg.seed))
    parts.append(
        struct.pack(
            "<6d",
            cfg.lr_polar,
            cfg.lr_vbll,
            cfg.landing_lambda,
            cfg.prior_var,
            cfg.kl_weight if cfg.kl_weight is not None else float("nan"),
            cfg.alpha,
        )
    )
    parts.append(struct.pack("<I", _SCHED_CODE[cfg.scheduler]))
    st, inc, has32, uint = state.rng_words
    parts.append(
        struct.pack(
            "<6Q",
            (st >> 64) & _U64_MASK,
            st & _U64_MASK,
            (inc >> 64) & _U64_MASK,
            inc & _U64_MASK,
            has32,
            uint,
        )
    )
    for base in fx.layer_bases:
        parts.append(_pack_array(base))
    for adapter in fx.adapters:
        if isinstance(adapter, PolarAdapter):
            parts.append(_pack_array(adapter.u.mat))
            parts.append(_pack_array(adapter.lam))
            parts.append(_pack_array(adapter.v.mat))
        elif isinstance(adapter, LoraAdapter):
            parts.append(_pack_array(adapter.b))
            parts.append(_pack_array(adapter.a))
    parts.append(_pack_array(state.head.means))
    if isinstance(state.head, VbllHead):
        for c in range(state.head.means.shape[0]):
            parts.append(_pack_array(state.head.chols[c]))
    if state.laplace is not None:
        for c in range(state.laplace.num_classes):
            parts.append(_pack_array(state.laplace.sigmas[c]))
    return b"".join(parts)


def save(state: CheckpointState, path) -> None:
    payload = _payload_bytes(state)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload)))


def load(path) -> CheckpointState:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise TruncatedFile("file shorter than the fixed header")
    if blob[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise VersionUnsupported(f"format version {version}, this build reads {VERSION}")
    if len(blob) < 12:
        raise TruncatedFile("missing checksum")
    payload = blob[8:-4]
    (crc_stored,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) != crc_stored:
        raise ChecksumMismatch("payload CRC32 does not match")

    cur = _Cursor(payload)
    d0, hidden, feat, classes, rank = cur.unpack("<5I")
    adapter_code, head_code, laplace_flag = cur.unpack("<3I")
    steps, batch, eval_every, seed = cur.unpack("<4Q")
    lr_polar, lr_vbll, landing_lambda, prior_var, kl_weight, alpha = cur.unpack("<6d")
    (sched_code,) = cur.unpack("<I")
    st_hi, st_lo, inc_hi, inc_lo, has32, uint = cur.unpack("<6Q")

    config = TrainConfig(
        steps=steps,
        batch=batch,
        lr_polar=lr_polar,
        lr_vbll=lr_vbll,
        landing_lambda=landing_lambda,
        prior_var=prior_var,
        kl_weight=None if np.isnan(kl_weight) else kl_weight,
        adapter=_ADAPTER_NAME[adapter_code],
        head=_HEAD_NAME[head_code],
        rank=rank,
        alpha=alpha,
        seed=seed,
        scheduler=_SCHED_NAME[sched_code],
        eval_every=eval_every,
        hidden_dim=hidden,
        feature_dim=feat,
    )

    dims = (d0, hidden, feat)
    bases = [cur.array() for _ in range(len(dims) - 1)]
    adapters = []
    for _ in bases:
        if config.adapter == "polar":
            u = StiefelFactor.from_matrix(cur.array())
            lam = cur.array()
            v = StiefelFactor.from_matrix(cur.array())
            adapters.append(PolarAdapter(u=u, v=v, lam=lam, alpha_scale=alpha / rank))
        else:
            b = cur.array()
            a = cur.array()
            adapters.append(LoraAdapter(b=b, a=a, alpha_scale=alpha / rank))
    extractor = FeatureExtractor(layer_bases=bases, adapters=adapters)

    means = cur.array()
    if config.head == "vbll":
        chols = np.stack([cur.array() for _ in range(classes)])
        head: VbllHead | MleHead = VbllHead(
            means=means,
            chols=np.ascontiguousarray(chols),
            prior_var=prior_var,
            kl_weight=config.kl_weight if config.kl_weight is not None else 0.0,
        )
    else:
        head = MleHead(means=means)

    laplace = None
    if laplace_flag:
        sigmas = np.stack([cur.array() for _ in range(classes)])
        laplace = LaplacePosterior(means=means.copy(), sigmas=sigmas)

    if not cur.done():
        raise TruncatedFile("trailing bytes after the last array")
    return CheckpointState(
        config=config,
        extractor=extractor,
        head=head,
        laplace=laplace,
        rng_words=((st_hi << 64) | st_lo, (inc_hi << 64) | inc_lo, has32, uint),
    )
