"""Adam optimizer, objective-agnostic training loop, checkpoint files.

Training is bit-deterministic for a fixed seed: minibatch indices come
from one PCG64 stream, estimator noise from counter-keyed streams derived
from (seed, step), and gradient accumulation order is fixed by sorted
parameter names.

Checkpoints are one file: a text manifest (version, bundle blueprint,
tensor table, config echo), a blank line, then a little-endian float32
blob followed by its CRC32. Loads verify version and checksum and restore
parameters bit-exactly at the stored precision.
"""

from __future__ import annotations

import io
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, TrainingAbortedError
from .models import BundleSpec, DecoderSpec, EncoderSpec, ModelBundle
from .objectives import Objective, estimate_batch
from .rng import StreamRNG
from .tensor import Tape, grads_for
from . import tensor as T

CKPT_MAGIC = "MSNVI-CKPT"
CKPT_VERSION = 1


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict, lr: float) -> AdamState:
    state = AdamState(lr=lr)
    for name, p in sorted(params.items()):
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """In-place update theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in sorted(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        params[name].data -= (state.lr * update).astype(params[name].data.dtype, copy=False)


@dataclass(frozen=True)
class TrainConfig:
    objective: Objective
    k: int
    batch_size: int
    learning_rate: float
    iterations: int
    seed: int = 0
    log_every: int = 1


def train(bundle: ModelBundle, config: TrainConfig, dataset):
    """Minimize the negative objective over `dataset`; returns (bundle, trace).

    dataset exposes n and epoch_arrays(epoch) -> (sources, targets, ids).
    The trace is a list of (step, objective-kind, value) with value the
    minimized negative bound. NaN or Inf losses abort with diagnostics.
    """
    params = bundle.params
    state = adam_init(params, config.learning_rate)
    batch_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((config.seed, 0xB0)))
    )
    noise_root = StreamRNG(config.seed, 0xE5)
    n = dataset.n
    trace = []
    cur_epoch = -1
    arrays = None
    for step in range(config.iterations):
        epoch = (step * config.batch_size) // max(n, 1)
        if epoch != cur_epoch:
            arrays = dataset.epoch_arrays(epoch)
            cur_epoch = epoch
        sources, targets, ids = arrays
        idx = batch_rng.integers(0, n, size=config.batch_size)
        sb = {k: v[idx].astype(bundle.dtype, copy=False) for k, v in sources.items()}
        tb = {k: v[idx].astype(bundle.dtype, copy=False) for k, v in targets.items()}
        ib = ids[idx]

        tape = Tape()
        with tape:
            est = estimate_batch(
                bundle, config.objective, sb, tb, ib, config.k, noise_root.child(step)
            )
            loss = -T.tmean(est)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingAbortedError(step, ib.tolist(), value)
        grads = grads_for(tape, loss, params)
        adam_step(state, params, grads)
        if step % config.log_every == 0:
            trace.append((step, config.objective.kind, value))
    return bundle, trace


# ---------------------------------------------------------------------------
# checkpoint serialization


def _spec_lines(spec: BundleSpec):
    lines = [f"dz = {spec.dz}"]
    for eid in sorted(spec.encoders):
        es = spec.encoders[eid]
        stem = ",".join(f"{w}:{a}" for w, a in es.stem)
        srcs = ",".join(str(s) for s in es.sources)
        lines.append(f"encoder {eid} in={es.in_dim} stem={stem} sources={srcs}")
    for did in sorted(spec.decoders):
        ds = spec.decoders[did]
        stem = ",".join(f"{w}:{a}" for w, a in ds.stem)
        lines.append(f"decoder {did} out={ds.out_dim} head={ds.head} stem={stem}")
    return lines


def _parse_stem(text):
    if not text:
        return ()
    return tuple((int(w), a) for w, a in (part.split(":") for part in text.split(",")))


def _parse_spec(lines):
    dz = None
    encoders, decoders = {}, {}
    for line in lines:
        if line.startswith("dz"):
            dz = int(line.split("=", 1)[1])
        elif line.startswith("encoder "):
            eid = int(line.split()[1])
            kv = dict(item.split("=", 1) for item in line.split()[2:])
            encoders[eid] = EncoderSpec(
                in_dim=int(kv["in"]),
                stem=_parse_stem(kv.get("stem", "")),
                dz=dz,
                sources=tuple(int(s) for s in kv["sources"].split(",")),
            )
        elif line.startswith("decoder "):
            did = int(line.split()[1])
            kv = dict(item.split("=", 1) for item in line.split()[2:])
            decoders[did] = DecoderSpec(
                dz=dz,
                stem=_parse_stem(kv.get("stem", "")),
                out_dim=int(kv["out"]),
                head=kv["head"],
            )
    return BundleSpec(dz=dz, encoders=encoders, decoders=decoders)


def save_checkpoint(bundle: ModelBundle, state, path, extra=None) -> None:
    """Write manifest + float32 blob + CRC32. `state` may be None."""
    names = [n for n, _ in bundle.param_items()]
    blob = io.BytesIO()
    table = []
    offset = 0

    def put(name, arr):
        nonlocal offset
        a32 = np.ascontiguousarray(arr, dtype="<f4")
        blob.write(a32.tobytes())
        shape = ",".join(str(s) for s in arr.shape) or "()"
        table.append(f"tensor {name} {shape} {offset}")
        offset += a32.nbytes

    for name in names:
        put(f"param:{name}", bundle.params[name].data)
    if state is not None:
        for name in names:
            put(f"adam.m:{name}", state.m[name])
        for name in names:
            put(f"adam.v:{name}", state.v[name])

    payload = blob.getvalue()
    lines = [f"{CKPT_MAGIC} {CKPT_VERSION}"]
    lines += _spec_lines(bundle.spec)
    lines.append(f"dtype = {np.dtype(bundle.dtype).name}")
    if state is not None:
        lines.append(
            f"adam t={state.t} lr={state.lr!r} beta1={state.beta1!r} "
            f"beta2={state.beta2!r} eps={state.eps!r}"
        )
    for key, val in (extra or {}).items():
        lines.append(f"meta {key} = {val}")
    lines += table
    lines.append(f"blob_bytes = {len(payload)}")
    manifest = "\n".join(lines) + "\n\n"
    with open(path, "wb") as f:
        f.write(manifest.encode("utf-8"))
        f.write(payload)
        f.write(zlib.crc32(payload).to_bytes(4, "little"))


def load_checkpoint(path):
    """Returns (bundle, adam_state_or_None, meta dict)."""
    with open(path, "rb") as f:
        raw = f.read()
    sep = raw.find(b"\n\n")
    if sep < 0:
        raise FormatError(f"{path}: no manifest terminator")
    manifest = raw[:sep].decode("utf-8").splitlines()
    payload = raw[sep + 2 :]
    if len(payload) < 4:
        raise FormatError(f"{path}: missing checksum")
    blob, crc = payload[:-4], payload[-4:]

    head = manifest[0].split()
    if head[0] != CKPT_MAGIC or int(head[1]) != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported header {manifest[0]!r}")
    blob_bytes = None
    for line in manifest:
        if line.startswith("blob_bytes"):
            blob_bytes = int(line.split("=", 1)[1])
    if blob_bytes != len(blob):
        raise FormatError(f"{path}: blob length {len(blob)} != declared {blob_bytes}")
    if zlib.crc32(blob).to_bytes(4, "little") != crc:
        raise FormatError(f"{path}: checksum mismatch")

    spec = _parse_spec([l for l in manifest if l.startswith(("dz", "encoder ", "decoder "))])
    dtype = np.float64
    meta = {}
    adam_line = None
    for line in manifest:
        if line.startswith("dtype"):
            dtype = np.dtype(line.split("=", 1)[1].strip()).type
        elif line.startswith("meta "):
            key, val = line[5:].split(" = ", 1)
            meta[key] = val
        elif line.startswith("adam "):
            adam_line = line

    tensors = {}
    for line in manifest:
        if not line.startswith("tensor "):
            continue
        _, name, shape_s, off_s = line.split()
        shape = () if shape_s == "()" else tuple(int(s) for s in shape_s.split(","))
        count = int(np.prod(shape)) if shape else 1
        off = int(off_s)
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).reshape(shape)
        tensors[name] = arr.astype(dtype)

    params = {
        name[len("param:") :]: T.parameter(arr)
        for name, arr in tensors.items()
        if name.startswith("param:")
    }
    bundle = ModelBundle(spec, params, dtype=dtype)

    state = None
    if adam_line is not None:
        kv = dict(item.split("=", 1) for item in adam_line.split()[1:])
        state = AdamState(
            lr=float(kv["lr"]),
            beta1=float(kv["beta1"]),
            beta2=float(kv["beta2"]),
            eps=float(kv["eps"]),
            t=int(kv["t"]),
        )
        for name in params:
            state.m[name] = tensors[f"adam.m:{name}"].copy()
            state.v[name] = tensors[f"adam.v:{name}"].copy()
    return bundle, state, meta
