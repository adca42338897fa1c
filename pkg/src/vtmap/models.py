"""The three frame-to-spectrum regressors, their training loop and checkpoints.

``fc_dnn``   flattened 68x68 image -> 5 x 1000 relu -> 25
``cnn``      3 x (3x3 conv relu + 2x2 pool) with 8/16/32 filters -> 500 -> 500 -> 25
``cnn_lstm`` the same conv trunk on each of 10 frames -> LSTM(500) -> LSTM(500)
             (last step) -> 500 -> 500 -> 25

All outputs are z-scored 25-dimensional MGC-LSP vectors.
"""

import copy
import logging
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from . import neuralcore as nc
from .corpus import WINDOW_LENGTH, Normalizer, iterate_batches, window_indices
from .formats import BadMagicError, CountMismatchError, FormatError, TruncatedError, atomic_write

log = logging.getLogger(__name__)

OUTPUT_DIM = 25
IMAGE_SIZE = 68
ARCHITECTURES = ("fc_dnn", "cnn", "cnn_lstm")
ARCH_ALIASES = {"fc": "fc_dnn", "fc_dnn": "fc_dnn", "fc-dnn": "fc_dnn", "cnn": "cnn",
                "cnn_lstm": "cnn_lstm", "cnn-lstm": "cnn_lstm"}


class TrainingError(RuntimeError):
    pass


def _conv_trunk():
    return [nc.ConvPool(1, 8, "conv1"), nc.ConvPool(8, 16, "conv2"),
            nc.ConvPool(16, 32, "conv3"), nc.Flatten("flatten")]


def _head(n_in):
    return [nc.Dense(n_in, 500, "relu", "fc1"), nc.Dense(500, 500, "relu", "fc2"),
            nc.Dense(500, OUTPUT_DIM, "linear", "out")]


def build_fc_dnn(seed=0):
    layers = [nc.Flatten("flatten"), nc.Dense(IMAGE_SIZE * IMAGE_SIZE, 1000, "relu", "hidden1")]
    layers += [nc.Dense(1000, 1000, "relu", f"hidden{k}") for k in range(2, 6)]
    layers.append(nc.Dense(1000, OUTPUT_DIM, "linear", "out"))
    return nc.ModelGraph(layers, kind="fc_dnn", input_shape=(IMAGE_SIZE, IMAGE_SIZE)).init(seed)


def build_cnn(seed=0):
    flat = 9 * 9 * 32
    return nc.ModelGraph(_conv_trunk() + _head(flat), kind="cnn",
                         input_shape=(IMAGE_SIZE, IMAGE_SIZE, 1)).init(seed)


def build_cnn_lstm(seed=0):
    flat = 9 * 9 * 32
    layers = [nc.TimeDistributed(_conv_trunk(), "trunk"),
              nc.LSTM(flat, 500, return_sequence=True, name="lstm1"),
              nc.LSTM(500, 500, return_sequence=False, name="lstm2")] + _head(500)
    return nc.ModelGraph(layers, kind="cnn_lstm",
                         input_shape=(WINDOW_LENGTH, IMAGE_SIZE, IMAGE_SIZE, 1)).init(seed)


BUILDERS = {"fc_dnn": build_fc_dnn, "cnn": build_cnn, "cnn_lstm": build_cnn_lstm}


def build_model(arch, seed=0):
    try:
        kind = ARCH_ALIASES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCH_ALIASES)}") from None
    return BUILDERS[kind](seed)


def count_parameters(model):
    return model.count_parameters()


# ------------------------------------------------------------ data feeding


class FrameData:
    """Frames and normalized targets of several utterances, ready for batching.

    ``windows[i]`` lists the global frame indices of the causal window ending
    at frame ``i``; windows never cross an utterance boundary.
    """

    def __init__(self, utterances, normalizer, window=WINDOW_LENGTH):
        if not utterances:
            raise ValueError("empty split")
        frames, targets, windows = [], [], []
        offset = 0
        for utt in utterances:
            t = utt.frames.shape[0]
            if utt.targets is None or utt.targets.shape[0] != t:
                raise ValueError(f"utterance {utt.utt_id}: frames and targets are not aligned")
            frames.append(np.asarray(utt.frames, dtype=np.float32))
            targets.append(normalizer.apply(utt.targets).astype(np.float32))
            windows.append(window_indices(t, window) + offset)
            offset += t
        self.frames = np.concatenate(frames)
        self.targets = np.concatenate(targets)
        self.windows = np.concatenate(windows)

    def __len__(self):
        return self.frames.shape[0]

    def inputs(self, kind, idx):
        return model_inputs(kind, self.frames, idx, self.windows)


def model_inputs(kind, frames, idx, windows=None):
    """Network input for the frames (or windows ending at) ``idx``."""
    if kind == "fc_dnn":
        return frames[idx]
    if kind == "cnn":
        return frames[idx][..., None]
    if kind == "cnn_lstm":
        index = windows[idx]
        unique, local = np.unique(index, return_inverse=True)
        return nc.WindowBatch(frames[unique][..., None], local.reshape(index.shape))
    raise ValueError(f"unknown model kind {kind!r}")


def evaluate_loss(model, data, batch_size=256):
    """MSE on normalized targets over a :class:`FrameData`, frame-weighted."""
    total = 0.0
    with nc.no_grad():
        for start in range(0, len(data), batch_size):
            idx = np.arange(start, min(start + batch_size, len(data)))
            pred = model(data.inputs(model.kind, idx)).data.astype(np.float64)
            total += float(np.sum((pred - data.targets[idx]) ** 2))
    return total / (len(data) * OUTPUT_DIM)


# --------------------------------------------------------------- training


@dataclass
class TrainConfig:
    lr: float = 1e-3
    max_epochs: int = 100
    patience: int = 5
    batch_size: int = 128
    seed: int = 0
    window: int = WINDOW_LENGTH
    # contiguous run length when shuffling windows; 1 shuffles fully
    chunk: int = 16
    # stop as soon as the validation loss falls below this value
    target_loss: float = None

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0          # 1-based; 0 before the first epoch
    stop_reason: str = ""
    seconds: float = 0.0

    @property
    def best_val_loss(self):
        return self.val_loss[self.best_epoch - 1]


class EarlyStopping:
    """Track the best validation loss and keep a copy of its weights."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.best_state = None

    def update(self, epoch, loss, model):
        """Record epoch ``epoch`` (1-based); returns True when training should stop."""
        if loss < self.best:
            self.best, self.best_epoch = loss, epoch
            self.best_state = model.state_dict()
        return epoch - self.best_epoch >= self.patience

    def restore(self, model):
        if self.best_state is not None:
            model.load_state_dict(self.best_state)


def fit_loop(model, train_epoch, validate, max_epochs=100, patience=5, target_loss=None):
    """Generic epoch loop with early stopping and best-weight restoration.

    Parameters
    ----------
    model : ModelGraph
    train_epoch : callable
        ``train_epoch(epoch) -> float`` runs one epoch, returns its mean loss.
    validate : callable
        ``validate() -> float`` validation loss of the current weights.
    """
    history = TrainHistory()
    stopper = EarlyStopping(patience)
    start = time.perf_counter()
    for epoch in range(1, max_epochs + 1):
        train_loss = float(train_epoch(epoch))
        if not np.isfinite(train_loss):
            raise TrainingError(f"training loss became {train_loss} in epoch {epoch}")
        val_loss = float(validate())
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became {val_loss} in epoch {epoch}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        log.info("epoch %d train %.5f val %.5f", epoch, train_loss, val_loss)
        stop = stopper.update(epoch, val_loss, model)
        if target_loss is not None and val_loss < target_loss:
            history.stop_reason = "target"
            break
        if stop:
            history.stop_reason = "patience"
            break
    else:
        history.stop_reason = "max_epochs"
    stopper.restore(model)
    history.best_epoch = stopper.best_epoch
    history.seconds = time.perf_counter() - start
    return model, history


def train_model(model, train, validation, normalizer, config=TrainConfig()):
    """Fit ``model`` with Adam on normalized targets; returns ``(model, history)``.

    ``train`` and ``validation`` are lists of aligned utterances. The
    weights of the epoch with the lowest validation loss are restored at
    the end. Runs are deterministic for a fixed ``config.seed``.
    """
    train_data = FrameData(train, normalizer, config.window)
    val_data = FrameData(validation, normalizer, config.window)
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    state = nc.AdamState(params, lr=config.lr)
    chunk = config.chunk if model.kind == "cnn_lstm" else 1

    def train_epoch(epoch):
        total, count = 0.0, 0
        for b, idx in enumerate(iterate_batches(len(train_data), config.batch_size, rng, chunk)):
            pred = model(train_data.inputs(model.kind, idx))
            loss = nc.mse_loss(pred, train_data.targets[idx])
            value = float(loss.data)
            if not np.isfinite(value):
                raise TrainingError(f"loss became {value} in epoch {epoch}, batch {b}")
            nc.backward(loss)
            nc.adam_step(params, state)
            total += value * idx.size
            count += idx.size
        return total / count

    return fit_loop(model, train_epoch, lambda: evaluate_loss(model, val_data),
                    config.max_epochs, config.patience, config.target_loss)


def predict_utterance(model, frames, normalizer, batch_size=256):
    """Denormalized ``[T, 25]`` predictions for a frame sequence."""
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 3 or frames.shape[1:] != (IMAGE_SIZE, IMAGE_SIZE):
        raise nc.DimensionError(f"expected [T, {IMAGE_SIZE}, {IMAGE_SIZE}] frames, got {frames.shape}")
    t = frames.shape[0]
    windows = window_indices(t) if model.kind == "cnn_lstm" else None
    out = np.empty((t, OUTPUT_DIM))
    with nc.no_grad():
        for start in range(0, t, batch_size):
            idx = np.arange(start, min(start + batch_size, t))
            out[idx] = model(model_inputs(model.kind, frames, idx, windows)).data
    return normalizer.invert(out)


# ------------------------------------------------------------- checkpoints

_ARCH_TAGS = {"fc_dnn": 0, "cnn": 1, "cnn_lstm": 2}


def save_checkpoint(path, model, normalizer):
    """Write a VTMM checkpoint: weights in registration order plus the normalizer."""
    params = model.parameters()
    head = b"VTMM" + struct.pack("<HBQ", 1, _ARCH_TAGS[model.kind], model.count_parameters())
    chunks = [head]
    for name, p in params.items():
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f4").tobytes())
    chunks.append(np.asarray(normalizer.mean, dtype="<f4").tobytes())
    chunks.append(np.asarray(normalizer.std, dtype="<f4").tobytes())
    with atomic_write(path) as fh:
        fh.write(b"".join(chunks))


def load_checkpoint(path):
    """Read a VTMM checkpoint; returns ``(model, normalizer)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != b"VTMM":
        raise BadMagicError(f"{path}: expected magic b'VTMM', found {blob[:4]!r}")
    if len(blob) < 15:
        raise TruncatedError(f"{path}: header truncated")
    version, tag, declared = struct.unpack_from("<HBQ", blob, 4)
    if version != 1:
        raise FormatError(f"{path}: unsupported version {version}")
    kinds = {v: k for k, v in _ARCH_TAGS.items()}
    if tag not in kinds:
        raise FormatError(f"{path}: unknown architecture tag {tag}")
    model = BUILDERS[kinds[tag]](0)
    state = {}
    off, seen = 15, 0

    def need(n):
        if off + n > len(blob):
            raise TruncatedError(f"{path}: payload ends inside tensor {len(state) + 1}")

    while seen < declared:
        need(2)
        (n_name,) = struct.unpack_from("<H", blob, off)
        off += 2
        need(n_name + 1)
        name = blob[off:off + n_name].decode("utf-8")
        rank = blob[off + n_name]
        off += n_name + 1
        need(4 * rank)
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        size = int(np.prod(shape, dtype=np.int64))
        need(4 * size)
        state[name] = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        seen += size
    if seen != declared:
        raise CountMismatchError(f"{path}: header declares {declared} parameters, tensors hold {seen}")
    norm_bytes = 2 * OUTPUT_DIM * 4
    if len(blob) - off < norm_bytes:
        raise TruncatedError(f"{path}: normalizer block truncated")
    if len(blob) - off > norm_bytes:
        raise CountMismatchError(f"{path}: {len(blob) - off - norm_bytes} unexpected trailing bytes")
    stats = np.frombuffer(blob, dtype="<f4", offset=off).astype(np.float64)
    try:
        model.load_state_dict(state)
    except (KeyError, nc.DimensionError) as err:
        raise CountMismatchError(f"{path}: tensors do not match the {kinds[tag]} layout ({err})") from None
    return model, Normalizer(stats[:OUTPUT_DIM], stats[OUTPUT_DIM:])


def clone_model(model):
    return copy.deepcopy(model)
