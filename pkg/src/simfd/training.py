"""Loss, optimizer, initialization, batch generation, the base/fine-tune
transfer-learning workflow, and checkpoint persistence.

Base training redraws the channel every batch (statistical operation);
fine-tuning freezes one realization and continues from the base model.
Checkpoints are a versioned binary container (JSON header + named float64
tensors, little endian) that round-trips byte-identically; the per-epoch
history is additionally emitted as CSV next to the checkpoint.
"""

import json
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autograd as ag
from . import emnn
from .channel import ChannelSource
from .config import config_from_dict

CHECKPOINT_MAGIC = b"SIMFDCKP"
CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient encountered."""


class CheckpointError(ValueError):
    """Unreadable, corrupt, or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# loss / init / optimizer / schedule
# ---------------------------------------------------------------------------

def bce_loss(bits, soft):
    """Binary cross-entropy, summed over bits, averaged over the batch."""
    b = np.asarray(bits, dtype=float)
    if b.shape != soft.data.shape:
        raise ag.GraphError(f"bit block {b.shape} vs soft output {soft.data.shape}")
    hit = ag.hadamard(b, ag.log(soft))
    miss = ag.hadamard(1.0 - b, ag.log(ag.sub(1.0, soft)))
    return ag.scale(ag.reduce_sum(ag.add(hit, miss)), -1.0 / b.shape[0])


def xavier_init(shape, rng):
    """Uniform Xavier/Glorot weight tensor for a 2-D shape."""
    if len(shape) != 2:
        raise ValueError("xavier_init expects a 2-D weight shape")
    lim = emnn.xavier_limit(shape[0], shape[1])
    return ag.Tensor(rng.uniform(-lim, lim, shape), requires_grad=True, decay=True)


def adamw_step(data, grad, m, v, step, lr, beta1=0.9, beta2=0.999, eps=1e-8,
               weight_decay=0.0):
    """One decoupled-weight-decay Adam update, in place on `data`, `m`, `v`."""
    if not np.isfinite(grad).all():
        raise TrainingDiverged("non-finite gradient")
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** step)
    v_hat = v / (1.0 - beta2 ** step)
    update = m_hat / (np.sqrt(v_hat) + eps)
    if weight_decay:
        update = update + weight_decay * data
    data -= lr * update


class AdamW:
    """Moment state over a parameter list; decay applies only where flagged.

    Phase vectors, biases, and batchnorm parameters carry decay=False and are
    excluded from weight decay.
    """

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.data) for p in self.params}
        self.v = {p.name: np.zeros_like(p.data) for p in self.params}

    def step(self, lr):
        self.step_count += 1
        for p in self.params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            try:
                adamw_step(p.data, grad, self.m[p.name], self.v[p.name],
                           self.step_count, lr, self.beta1, self.beta2, self.eps,
                           self.weight_decay if p.decay else 0.0)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} in {p.name}") from exc

    def state_arrays(self):
        return ({k: a.copy() for k, a in self.m.items()},
                {k: a.copy() for k, a in self.v.items()})

    def load_state(self, m, v, step_count):
        for key in self.m:
            if key not in m or m[key].shape != self.m[key].shape:
                raise CheckpointError(f"optimizer state missing or mismatched for {key}")
            self.m[key] = m[key].copy()
            self.v[key] = v[key].copy()
        self.step_count = int(step_count)


def lr_schedule(epoch, train_config):
    """Stepped decay: lr0 * decay^(epoch // interval), floored."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    tc = train_config
    lr = tc.learning_rate * tc.lr_decay ** (epoch // tc.lr_decay_interval)
    return max(lr, tc.lr_floor)


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass
class BitBlock:
    """One batch: bit rows [b1 | b2] plus the per-sample power budget (dBm)."""

    bits: np.ndarray
    power_dbm: np.ndarray


def sample_batch(rng, config):
    """Uniform i.i.d. bits; per-sample power from a scaled Beta distribution."""
    tc = config.training
    bits = rng.integers(0, 2, (tc.batch_size, config.total_bits)).astype(float)
    u = rng.beta(tc.power_alpha, tc.power_beta, tc.batch_size)
    power = tc.power_min_dbm + (tc.power_max_dbm - tc.power_min_dbm) * u
    return BitBlock(bits, power)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

class Checkpoint:
    """Snapshot of a training run: config, params, optimizer, rng, history."""

    def __init__(self, config, params, opt_m, opt_v, opt_step, rng_state,
                 history, epoch, diverged=False):
        self.config = config
        self.params = params
        self.opt_m = opt_m
        self.opt_v = opt_v
        self.opt_step = opt_step
        self.rng_state = rng_state
        self.history = history          # list of (epoch, loss, lr)
        self.epoch = epoch
        self.diverged = diverged

    def final_loss(self):
        return self.history[-1][1] if self.history else float("nan")


def _checkpoint_arrays(ck):
    arrays = {}
    for name, t in ck.params.named_tensors().items():
        arrays[name] = t.data
    for key, st in ck.params.named_states().items():
        arrays[f"{key}.running_mean"] = st.running_mean
        arrays[f"{key}.running_var"] = st.running_var
    for key in sorted(ck.opt_m):
        arrays[f"opt.m.{key}"] = ck.opt_m[key]
        arrays[f"opt.v.{key}"] = ck.opt_v[key]
    return arrays


def save_checkpoint(ck, path):
    """Write the checkpoint container plus `<stem>.history.csv` alongside."""
    path = str(path)
    arrays = _checkpoint_arrays(ck)
    header = {
        "version": CHECKPOINT_VERSION,
        "config": ck.config.to_dict(),
        "config_digest": ck.config.digest(),
        "rng_state": ck.rng_state,
        "epoch": ck.epoch,
        "opt_step": ck.opt_step,
        "diverged": ck.diverged,
        "history": [[int(e), float(l), float(r)] for e, l, r in ck.history],
        "tensors": [{"name": n, "shape": list(arrays[n].shape)} for n in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in arrays:
            fh.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    csv_path = path + ".history.csv"
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,lr\n")
        for e, loss, lr in ck.history:
            fh.write(f"{int(e)},{loss!r},{lr!r}\n")


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError("not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        try:
            header = json.loads(fh.read(header_len).decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
        arrays = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(8 * count)
            if len(raw) != 8 * count:
                raise CheckpointError("truncated tensor data")
            arrays[spec["name"]] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    config = config_from_dict(header["config"])
    if config.digest() != header["config_digest"]:
        raise CheckpointError("config digest mismatch")
    arch = emnn.build(config)
    params = emnn.init_params(arch, np.random.default_rng(0), config.trainable_power)
    for name, t in params.named_tensors().items():
        if name not in arrays:
            raise CheckpointError(f"checkpoint missing tensor {name}")
        if arrays[name].shape != t.data.shape:
            raise CheckpointError(f"tensor {name} shape {arrays[name].shape} "
                                  f"!= {t.data.shape}")
        t.data = arrays[name]
    for key, st in params.named_states().items():
        st.running_mean = arrays[f"{key}.running_mean"]
        st.running_var = arrays[f"{key}.running_var"]
    opt_m, opt_v = {}, {}
    for name in params.named_tensors():
        opt_m[name] = arrays[f"opt.m.{name}"]
        opt_v[name] = arrays[f"opt.v.{name}"]
    return Checkpoint(config, params, opt_m, opt_v, header["opt_step"],
                      header["rng_state"], [tuple(row) for row in header["history"]],
                      header["epoch"], header.get("diverged", False))


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _loss_on_batch(model, block, realization, rng):
    soft = model.forward(block.bits, block.power_dbm, realization, rng=rng,
                         training=True, noise=True)
    return bce_loss(block.bits, soft)


def _train_run(config, source, seed, epochs, frozen=None, lr_override=None):
    """One optimization run from a fresh init; statistical draws unless a
    frozen realization is given."""
    tc = config.training
    rng = np.random.default_rng(seed)
    model = emnn.Emnn(config, rng=rng)
    opt = AdamW(model.params.trainables(), weight_decay=tc.weight_decay)
    history = []
    diverged = False
    for epoch in range(epochs):
        lr = lr_schedule(epoch, tc) if lr_override is None else lr_override
        realization = frozen if frozen is not None else source.statistical(rng)
        block = sample_batch(rng, config)
        loss = _loss_on_batch(model, block, realization, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            diverged = True
            break
        ag.backward(loss)
        opt.step(lr)
        history.append((epoch, value, lr))
    return model.params, opt, history, diverged, rng


def train_base(config, seed=None, epochs=None):
    """Train the base model against the statistical channel source.

    Per epoch: one fresh batch, one fresh statistical channel draw (the
    innovation around the experiment's persistent component is redrawn,
    shadowing included), forward, BCE, backward, AdamW step. With restarts
    configured, independent runs are trained and the one with the lowest
    final smoothed training loss is kept. A non-finite loss aborts the run
    and returns the last good state.
    """
    config.validate()
    if seed is not None and seed != config.training.seed:
        config = replace(config, training=replace(config.training, seed=seed))
    tc = config.training
    seed = tc.seed
    epochs = tc.epochs if epochs is None else epochs
    source = ChannelSource(config)
    best = None
    best_score = np.inf
    for restart in range(tc.restarts):
        run_seed = seed if restart == 0 else _restart_seed(seed, restart)
        params, opt, history, diverged, rng = _train_run(
            config, source, run_seed, epochs)
        tail = [h[1] for h in history[-50:]] or [np.inf]
        score = float(np.mean(tail)) if not diverged else np.inf
        if score < best_score or best is None:
            best_score = score
            opt_m, opt_v = opt.state_arrays()
            best = Checkpoint(config, params, opt_m, opt_v, opt.step_count,
                              rng.bit_generator.state, history, len(history),
                              diverged)
    return best


def _restart_seed(seed, restart):
    from .channel import derive_seed
    return derive_seed(seed, 0x52535452 + restart)


def finetune(base, realization, rng, epochs=None, lr=None):
    """Continue training from a base checkpoint on one frozen realization.

    All parameters stay trainable and batchnorm running statistics keep
    updating; only the channel layer is pinned to `realization`. The
    optimizer continues from the base checkpoint's moments.
    """
    config = base.config
    tc = config.training
    epochs = tc.finetune_epoch_count if epochs is None else epochs
    lr = tc.finetune_learning_rate if lr is None else lr
    model = emnn.Emnn(config, params=base.params.copy())
    try:
        model.check_realization(realization)
    except emnn.ArchitectureError as exc:
        raise emnn.ArchitectureError(f"invalid transfer: {exc}") from exc
    opt = AdamW(model.params.trainables(), weight_decay=tc.weight_decay)
    opt.load_state(base.opt_m, base.opt_v, base.opt_step)
    history = []
    diverged = False
    for epoch in range(epochs):
        block = sample_batch(rng, config)
        loss = _loss_on_batch(model, block, realization, rng)
        value = float(loss.data)
        if not np.isfinite(value):
            diverged = True
            break
        ag.backward(loss)
        opt.step(lr)
        history.append((epoch, value, lr))
    opt_m, opt_v = opt.state_arrays()
    return Checkpoint(config, model.params, opt_m, opt_v, opt.step_count,
                      rng.bit_generator.state, history, len(history), diverged)


def smoothed(series, window=50):
    """Trailing moving average; entry i averages series[max(0, i-w+1) .. i]."""
    series = np.asarray(series, dtype=float)
    out = np.empty_like(series)
    csum = np.cumsum(series)
    for i in range(len(series)):
        lo = max(0, i - window + 1)
        total = csum[i] - (csum[lo - 1] if lo > 0 else 0.0)
        out[i] = total / (i - lo + 1)
    return out
