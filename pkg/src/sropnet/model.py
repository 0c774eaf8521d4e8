"""Branch / sensor / trunk operator networks and their combination.

Two output forms are supported:

* ``spacetime``: ``u(y) = sum_k B_k S_k T_k(y) + bias`` with ``y = (x, t)``.
* ``temporal``: ``u_i(y) = sum_k B_ik S_ik T_k(y) + bias``, one value per
  output frame ``i`` and ``y`` spatial only.

Variants change what the subnetworks see: ``three_net`` uses all three,
``two_net`` fixes ``S = 1``, ``stack`` feeds the sensor coordinates stacked
over the field to the branch, ``distance`` feeds the trunk the differences
``y - x_j``, and ``init_state_only`` gives the branch only the
high-resolution initial frame.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DataFormatError
from .tensor import Tensor

VARIANTS = ("three_net", "two_net", "stack", "distance", "init_state_only")
LAYOUTS = ("temporal", "spacetime")
KINDS = ("mlp", "lstm_mlp", "cnn_lstm_mlp")
CKPT_TAG = "SROPCKPT1"


@dataclass
class SubnetSpec:
    kind: str = "mlp"
    widths: list[int] = field(default_factory=lambda: [128, 128, 128])
    activation: str = "tanh"
    time_upscale: bool = False
    lstm_hidden: int = 64
    conv_channels: list[int] = field(default_factory=lambda: [8, 16])
    conv_kernel: int = 4
    conv_stride: int = 2
    conv_padding: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown subnetwork kind {self.kind!r}")
        if self.activation not in tn.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if any(int(w) < 1 for w in self.widths) or self.lstm_hidden < 1:
            raise ConfigError("all layer widths must be >= 1")
        self.widths = [int(w) for w in self.widths]
        self.conv_channels = [int(c) for c in self.conv_channels]


@dataclass
class ModelSpec:
    layout: str = "temporal"
    variant: str = "two_net"
    d: int = 1
    K: int = 64
    # per-sample branch input shape before variant preprocessing
    lr_shape: list[int] = field(default_factory=lambda: [40, 16])
    # high-resolution spatial grid (temporal layout), used by init_state_only
    hr_grid: list[int] | None = None
    T_plus: int | None = None
    s: int = 16
    domain: list[list[float]] = field(default_factory=lambda: [[-1.0, 1.0], [0.0, 2.0]])
    branch: SubnetSpec = field(default_factory=lambda: SubnetSpec(kind="lstm_mlp", time_upscale=True))
    sensor: SubnetSpec = field(default_factory=SubnetSpec)
    trunk: SubnetSpec = field(default_factory=SubnetSpec)
    # scale the branch input to unit RMS and the output back (scale-equivariant model)
    amplitude_norm: bool = False
    # fraction of the output time interval covered by the LR frames (partial input)
    lr_time_fraction: float = 1.0

    def __post_init__(self):
        for name in ("branch", "sensor", "trunk"):
            val = getattr(self, name)
            if isinstance(val, dict):
                setattr(self, name, SubnetSpec(**val))
        if self.layout not in LAYOUTS:
            raise ConfigError(f"unknown layout {self.layout!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.K < 1:
            raise ConfigError("latent width K must be >= 1")
        if not 0.0 < self.lr_time_fraction <= 1.0:
            raise ConfigError("lr_time_fraction must lie in (0, 1]")
        if self.layout == "temporal":
            if self.T_plus is None:
                raise ConfigError("temporal layout needs T_plus")
            if self.branch.kind == "mlp":
                raise ConfigError("temporal layout needs an lstm_mlp or cnn_lstm_mlp branch")
            if self.variant != "init_state_only" and not self.branch.time_upscale and self.lr_shape[0] != self.T_plus:
                raise ConfigError(
                    f"branch sees {self.lr_shape[0]} frames but the model outputs {self.T_plus}; "
                    "enable time_upscale"
                )
            if self.branch.time_upscale and self.T_plus < self.lr_shape[0]:
                raise ConfigError("time upscaling needs T_plus >= T")
            if self.branch.kind == "cnn_lstm_mlp" and self.d != 2:
                raise ConfigError("cnn_lstm_mlp branches need 2D fields")
        else:
            if self.branch.kind != "mlp":
                raise ConfigError("spacetime layout uses an mlp branch")
            if self.variant == "init_state_only":
                raise ConfigError("init_state_only is defined for the temporal layout only")
        if self.variant == "init_state_only" and self.hr_grid is None:
            raise ConfigError("init_state_only needs hr_grid")

    @property
    def coord_width(self) -> int:
        """Width of a sensor/query coordinate: d (temporal) or d+1 (spacetime)."""
        return self.d + (1 if self.layout == "spacetime" else 0)

    @property
    def uses_sensor_net(self) -> bool:
        return self.variant == "three_net"

    def branch_input_shape(self) -> tuple[int, ...]:
        """Per-sample branch input shape after variant preprocessing."""
        c = self.coord_width
        if self.variant == "init_state_only":
            return (1, *self.hr_grid)
        if self.layout == "spacetime":
            return (c + 1, self.s) if self.variant == "stack" else (self.s,)
        if self.variant == "stack":
            return (self.lr_shape[0], c + 1, *self.lr_shape[1:])
        return tuple(self.lr_shape)

    def trunk_input_width(self) -> int:
        c = self.coord_width
        return c * self.s if self.variant == "distance" else c

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        data = dict(data)
        for name in ("branch", "sensor", "trunk"):
            if isinstance(data.get(name), dict):
                data[name] = SubnetSpec(**data[name])
        return cls(**data)


@dataclass
class ModelParams:
    spec: ModelSpec
    tensors: dict[str, Tensor]

    @property
    def variant(self) -> str:
        return self.spec.variant

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            {k: Tensor(v.data.copy(), requires_grad=v.requires_grad, name=k) for k, v in self.tensors.items()},
        )

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.tensors[k].data = v.copy()

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.tensors.items()}

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.tensors):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.tensors[k].data, dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------------------
# parameter layout
# ---------------------------------------------------------------------------


def _mlp_shapes(prefix: str, sizes: Sequence[int]) -> list[tuple[str, tuple[int, ...], str]]:
    out = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        out.append((f"{prefix}.{i}.weight", (a, b), "weight"))
        out.append((f"{prefix}.{i}.bias", (b,), "bias"))
    return out


def _conv_out(n: int, sub: SubnetSpec) -> int:
    span = n + 2 * sub.conv_padding - sub.conv_kernel
    if span < 0 or span % sub.conv_stride:
        raise ConfigError(
            f"conv layer on size {n} with kernel {sub.conv_kernel}, stride {sub.conv_stride}, "
            f"padding {sub.conv_padding} gives a non-integer output size"
        )
    return span // sub.conv_stride + 1


def _frame_features(spec: ModelSpec) -> tuple[int, list[tuple[str, tuple[int, ...], str]]]:
    """Per-frame feature width entering the LSTM, plus conv parameter shapes."""
    shape = spec.branch_input_shape()[1:]  # one frame
    sub = spec.branch
    if sub.kind == "lstm_mlp":
        return int(np.prod(shape)), []
    if len(shape) == 2:
        channels, h, w = 1, shape[0], shape[1]
    else:
        channels, h, w = shape[0], shape[1], shape[2]
    convs = []
    for i, cout in enumerate(sub.conv_channels):
        k = sub.conv_kernel
        convs.append((f"branch.conv.{i}.weight", (cout, channels, k, k), "weight"))
        convs.append((f"branch.conv.{i}.bias", (cout,), "bias"))
        h, w = _conv_out(h, sub), _conv_out(w, sub)
        channels = cout
    return channels * h * w, convs


def param_shapes(spec: ModelSpec) -> list[tuple[str, tuple[int, ...], str]]:
    """Ordered ``(name, shape, role)`` for every trainable tensor."""
    K = spec.K
    shapes: list[tuple[str, tuple[int, ...], str]] = []
    b = spec.branch
    if spec.layout == "spacetime":
        n_in = int(np.prod(spec.branch_input_shape()))
        shapes += _mlp_shapes("branch.mlp", [n_in, *b.widths, K])
    else:
        n_feat, convs = _frame_features(spec)
        shapes += convs
        dh = b.lstm_hidden
        shapes += [
            ("branch.lstm.w_input", (n_feat, 4 * dh), "weight"),
            ("branch.lstm.w_hidden", (dh, 4 * dh), "weight"),
            ("branch.lstm.bias", (4 * dh,), "bias"),
        ]
        shapes += _mlp_shapes("branch.head", [dh, *b.widths, K])
    if spec.uses_sensor_net:
        n_in = spec.coord_width * spec.s
        n_out = K if spec.layout == "spacetime" else spec.T_plus * K
        shapes += _mlp_shapes("sensor.mlp", [n_in, *spec.sensor.widths, n_out])
    shapes += _mlp_shapes("trunk.mlp", [spec.trunk_input_width(), *spec.trunk.widths, K])
    shapes.append(("combination_bias", (1,), "bias"))
    return shapes


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 4:
        rf = shape[2] * shape[3]
        fan_in, fan_out = shape[1] * rf, shape[0] * rf
    else:
        fan_in, fan_out = shape[0], shape[1]
    return math.sqrt(6.0 / (fan_in + fan_out))


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, zero biases; values are float32-representable."""
    tensors = {}
    for name, shape, role in param_shapes(spec):
        if role == "weight":
            bound = glorot_bound(shape)
            b32 = np.float32(bound)
            if b32 > bound:
                b32 = np.nextafter(b32, np.float32(0))
            w = rng.uniform(-bound, bound, size=shape).astype(np.float32)
            data = np.clip(w, -b32, b32).astype(np.float64)
        else:
            data = np.zeros(shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return ModelParams(spec, tensors)


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def mlp_forward(params: ModelParams | dict, prefix: str, x, activation: str = "tanh") -> Tensor:
    """Affine/activation stack with a linear last layer."""
    tensors = params.tensors if isinstance(params, ModelParams) else params
    act = tn.ACTIVATIONS[activation]
    n = 0
    while f"{prefix}.{n}.weight" in tensors:
        n += 1
    if n == 0:
        raise ConfigError(f"no layers named {prefix}.*")
    h = x
    for i in range(n):
        w = tensors[f"{prefix}.{i}.weight"]
        if h.shape[-1] != w.shape[0]:
            raise tn.DimensionError(f"{prefix}.{i}: input width {h.shape[-1]} but layer expects {w.shape[0]}")
        h = tn.linear(h, w, tensors[f"{prefix}.{i}.bias"])
        if i < n - 1:
            h = act(h)
    return h


def upscale_matrix(T: int, T_plus: int, span: float = 1.0) -> np.ndarray:
    """[T_plus, T] weights of piecewise-linear interpolation along frames.

    ``span`` is the fraction of the output time interval covered by the
    input frames (starting at the same time). Output frames past the input
    window repeat the last input frame.
    """
    if T < 2 and T_plus != T:
        raise ConfigError("time upscaling needs at least 2 input frames")
    if T_plus < T:
        raise ConfigError(f"cannot upscale {T} frames to {T_plus}")
    if not 0.0 < span <= 1.0:
        raise ConfigError(f"input time span fraction must lie in (0, 1], got {span}")
    W = np.zeros((T_plus, T))
    if T_plus == 1:
        W[0, 0] = 1.0
        return W
    if span < 1.0:
        pos = np.minimum(np.arange(T_plus) / (T_plus - 1) / span * (T - 1), T - 1)
        j = np.minimum(np.floor(pos).astype(int), T - 2)
        w = pos - j
        rows = np.arange(T_plus)
        W[rows, j] = 1.0 - w
        W[rows, j + 1] += w
        return W
    for i in range(T_plus):
        num = i * (T - 1)
        j, rem = divmod(num, T_plus - 1)
        w = rem / (T_plus - 1)
        W[i, j] += 1.0 - w
        if w:
            W[i, j + 1] += w
    return W


def time_upscale(field, T_plus: int, axis: int = 0, span: float = 1.0):
    """Linear interpolation onto ``T_plus`` frames.

    With ``span = 1`` input and output cover the same interval; a smaller
    ``span`` aligns partial input (the leading fraction of the interval)
    by time. Accepts a numpy array or a Tensor; the frame axis is ``axis``
    (0 or 1).
    """
    is_tensor = isinstance(field, Tensor)
    data = field if is_tensor else tn.Tensor(field)
    shape = data.shape
    T = shape[axis]
    W = upscale_matrix(T, T_plus, span)
    lead = shape[:axis]
    flat = tn.reshape(data, (*lead, T, int(np.prod(shape[axis + 1 :], dtype=int))))
    out = tn.matmul(Tensor(W), flat)
    out = tn.reshape(out, (*lead, T_plus, *shape[axis + 1 :]))
    return out if is_tensor else out.data


def normalize_coords(coords: np.ndarray, bounds: Sequence[Sequence[float]], axis: int) -> np.ndarray:
    """Affine map of each coordinate component to [-1, 1]; components along ``axis``."""
    coords = np.asarray(coords, dtype=np.float64)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    shape = [1] * coords.ndim
    shape[axis] = len(bounds)
    lo = lo.reshape(shape)
    hi = hi.reshape(shape)
    return 2.0 * (coords - lo) / (hi - lo) - 1.0


# ---------------------------------------------------------------------------
# subnetworks
# ---------------------------------------------------------------------------


@dataclass
class SubnetInputs:
    branch: np.ndarray
    sensor: np.ndarray | None
    trunk: np.ndarray


def variant_preprocess(
    variant: str,
    u_lr: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    hr_initial: np.ndarray | None = None,
    layout: str = "spacetime",
) -> SubnetInputs:
    """Assemble subnetwork inputs for one sample or a batch.

    Single-sample shapes: ``u_lr`` [s] or [T, N...], ``x`` [c, s], ``y`` [M, c].
    A leading batch axis on all three is carried through.
    """
    u_lr = np.asarray(u_lr, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    batched = x.ndim == 3
    if variant in ("three_net", "two_net"):
        return SubnetInputs(u_lr, x if variant == "three_net" else None, y)
    if variant == "stack":
        if layout == "spacetime":
            xs = x
            us = u_lr[..., None, :]
            return SubnetInputs(np.concatenate([xs, us], axis=-2), None, y)
        # per-frame stack: [.., T, c+1, N...]
        frame_axis = 1 if batched else 0
        T = u_lr.shape[frame_axis]
        grid_shape = u_lr.shape[frame_axis + 1 :]
        coords = x.reshape(x.shape[:-1] + grid_shape)  # [.., c, N...]
        coords = np.expand_dims(coords, frame_axis)
        reps = [1] * coords.ndim
        reps[frame_axis] = T
        coords = np.tile(coords, reps)
        us = np.expand_dims(u_lr, frame_axis + 1)
        return SubnetInputs(np.concatenate([coords, us], axis=frame_axis + 1), None, y)
    if variant == "distance":
        c = x.shape[-2]
        if y.shape[-1] != c:
            raise ConfigError(
                f"distance variant needs equal input/output coordinate widths, got {c} and {y.shape[-1]}"
            )
        if batched and y.ndim == 2:
            y = np.broadcast_to(y, (x.shape[0],) + y.shape)
        diff = y[..., :, :, None] - x[..., None, :, :]  # [.., M, c, s]
        return SubnetInputs(u_lr, None, diff)
    if variant == "init_state_only":
        if hr_initial is None:
            raise ConfigError("init_state_only needs the high-resolution initial frame")
        hr_initial = np.asarray(hr_initial, dtype=np.float64)
        return SubnetInputs(np.expand_dims(hr_initial, 1 if batched else 0), None, y)
    raise ConfigError(f"unknown variant {variant!r}")


def _amplitude(u: np.ndarray) -> np.ndarray:
    """Per-sample RMS of a batched branch input, floored away from zero."""
    rms = np.sqrt(np.mean(u.reshape(u.shape[0], -1) ** 2, axis=1))
    return np.maximum(rms, 1e-12)


def branch_forward(params: ModelParams, u: np.ndarray | Tensor) -> Tensor:
    """Batched branch: [B, *branch_input_shape] -> [B, K] or [B, T_plus, K]."""
    spec = params.spec
    sub = spec.branch
    u = u if isinstance(u, Tensor) else Tensor(u)
    expected = spec.branch_input_shape()
    if tuple(u.shape[1:]) != expected:
        raise tn.DimensionError(f"branch input has shape {u.shape[1:]}, expected {expected}")
    nb = u.shape[0]
    if spec.layout == "spacetime":
        return mlp_forward(params, "branch.mlp", tn.reshape(u, (nb, -1)), sub.activation)

    T_plus = spec.T_plus
    if spec.variant == "init_state_only":
        frames = tn.broadcast_to(u, (nb, T_plus) + tuple(u.shape[2:]))
    elif sub.time_upscale:
        frames = time_upscale(u, T_plus, axis=1, span=spec.lr_time_fraction)
    else:
        frames = u
    frame_shape = tuple(frames.shape[2:])
    if sub.kind == "cnn_lstm_mlp":
        if len(frame_shape) == 2:
            h = tn.reshape(frames, (nb * T_plus, 1) + frame_shape)
        else:
            h = tn.reshape(frames, (nb * T_plus,) + frame_shape)
        act = tn.ACTIVATIONS[sub.activation]
        for i in range(len(sub.conv_channels)):
            h = conv_layer(params, i, h)
            h = act(h)
        feats = tn.reshape(h, (nb, T_plus, -1))
    else:
        feats = tn.reshape(frames, (nb, T_plus, -1))
    dh = sub.lstm_hidden
    hstate = Tensor(np.zeros((nb, dh)))
    cstate = Tensor(np.zeros((nb, dh)))
    wi = params["branch.lstm.w_input"]
    wh = params["branch.lstm.w_hidden"]
    bl = params["branch.lstm.bias"]
    outs = []
    for i in range(T_plus):
        hstate, cstate = tn.lstm_step(feats[:, i, :], hstate, cstate, wi, wh, bl)
        outs.append(hstate)
    hs = tn.stack(outs, axis=1)  # [B, T_plus, dh]
    return mlp_forward(params, "branch.head", hs, sub.activation)


def conv_layer(params: ModelParams, i: int, h: Tensor) -> Tensor:
    sub = params.spec.branch
    return tn.conv2d(
        h,
        params[f"branch.conv.{i}.weight"],
        params[f"branch.conv.{i}.bias"],
        stride=sub.conv_stride,
        padding=sub.conv_padding,
    )


def sensor_forward(params: ModelParams, x: np.ndarray | Tensor | None, batch: int | None = None) -> Tensor:
    """Batched sensor net: [B, c, s] -> [B, K] or [B, T_plus, K]; all-ones when disabled."""
    spec = params.spec
    if not spec.uses_sensor_net:
        shape = (spec.K,) if spec.layout == "spacetime" else (spec.T_plus, spec.K)
        nb = batch if batch is not None else (x.shape[0] if x is not None else 1)
        return Tensor(np.ones((nb,) + shape))
    x = x if isinstance(x, Tensor) else Tensor(x)
    if tuple(x.shape[1:]) != (spec.coord_width, spec.s):
        raise tn.DimensionError(f"sensor input has shape {x.shape[1:]}, expected {(spec.coord_width, spec.s)}")
    nb = x.shape[0]
    out = mlp_forward(params, "sensor.mlp", tn.reshape(x, (nb, -1)), spec.sensor.activation)
    if spec.layout == "temporal":
        out = tn.reshape(out, (nb, spec.T_plus, spec.K))
    return out


def trunk_forward(params: ModelParams, y: np.ndarray | Tensor) -> Tensor:
    """Trunk on query points [..., M, width] (width = c, or c*s for distance)."""
    spec = params.spec
    y = y if isinstance(y, Tensor) else Tensor(y)
    if spec.variant == "distance":
        y = tn.reshape(y, tuple(y.shape[:-2]) + (y.shape[-2] * y.shape[-1],))
    if y.shape[-1] != spec.trunk_input_width():
        raise tn.DimensionError(f"trunk input width {y.shape[-1]}, expected {spec.trunk_input_width()}")
    return mlp_forward(params, "trunk.mlp", y, spec.trunk.activation)


def combine(B: Tensor, S: Tensor, Tq: Tensor, bias: Tensor, layout: str) -> Tensor:
    """Latent contraction plus scalar bias.

    spacetime: ``B, S`` [Bt, K], ``Tq`` [Bt, M, K] -> [Bt, M]
    temporal:  ``B, S`` [Bt, T+, K], ``Tq`` [Bt or 1, M, K] -> [Bt, T+, M]
    """
    if B.shape[-1] != S.shape[-1] or B.shape[-1] != Tq.shape[-1]:
        raise ConfigError(f"latent widths differ: branch {B.shape[-1]}, sensor {S.shape[-1]}, trunk {Tq.shape[-1]}")
    bs = B * S
    if layout == "spacetime":
        out = tn.matmul(Tq, tn.reshape(bs, tuple(bs.shape) + (1,)))
        out = tn.reshape(out, tuple(out.shape[:-1]))
    else:
        out = tn.matmul(bs, tn.swap_last(Tq))
    return out + bias


# ---------------------------------------------------------------------------
# full model
# ---------------------------------------------------------------------------


def forward(
    params: ModelParams,
    u_lr: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    hr_initial: np.ndarray | None = None,
) -> Tensor:
    """Batched evaluation with raw (unnormalized) coordinates.

    ``u_lr`` [B, ...], ``x`` [B, c, s], ``y`` [B, M, c] or shared [M, c].
    Returns [B, M] (spacetime) or [B, T_plus, M] (temporal).
    """
    spec = params.spec
    bounds = spec.domain if spec.layout == "spacetime" else spec.domain[: spec.d]
    xn = normalize_coords(x, bounds, axis=-2)
    yn = normalize_coords(y, bounds, axis=-1)
    if spec.variant == "init_state_only":
        u_in = hr_initial
    else:
        u_in = u_lr
    if spec.amplitude_norm:
        scale = _amplitude(np.asarray(u_in, dtype=np.float64))
        shaped = scale.reshape((-1,) + (1,) * (np.ndim(u_in) - 1))
        u_in = np.asarray(u_in) / shaped
    inputs = variant_preprocess(spec.variant, u_in, xn, yn, hr_initial=u_in, layout=spec.layout)
    B = branch_forward(params, inputs.branch)
    S = sensor_forward(params, inputs.sensor, batch=B.shape[0])
    trunk_in = inputs.trunk
    Tq = trunk_forward(params, trunk_in)
    if Tq.ndim == 2:
        Tq = tn.reshape(Tq, (1,) + tuple(Tq.shape))
    out = combine(B, S, Tq, params["combination_bias"], spec.layout)
    if spec.amplitude_norm:
        out = out * Tensor(scale.reshape((-1,) + (1,) * (out.ndim - 1)))
    return out


def sropnet_eval(params: ModelParams, u_lr, x, y, hr_initial=None) -> np.ndarray:
    """Single-sample prediction: [M] (spacetime) or [T_plus, M] (temporal)."""
    with tn.no_grad():
        out = forward(
            params,
            np.asarray(u_lr)[None],
            np.asarray(x)[None],
            np.asarray(y)[None],
            None if hr_initial is None else np.asarray(hr_initial)[None],
        )
    return out.data[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


@dataclass
class TruthOracle:
    """Stand-in model that returns each sample's stored targets."""

    variant: str = "truth_oracle"


def _manifest(spec_dict, variant: str, table: list[dict], blob_bytes: int) -> bytes:
    doc = {"format": CKPT_TAG, "variant": variant, "spec": spec_dict, "tensors": table, "blob_bytes": blob_bytes}
    return (json.dumps(doc, separators=(",", ":")) + "\n").encode("utf-8")


def save_checkpoint(path, params: ModelParams | TruthOracle) -> None:
    """JSON manifest line followed by a little-endian float32 blob."""
    if isinstance(params, TruthOracle):
        with open(path, "wb") as fh:
            fh.write(_manifest(None, params.variant, [], 0))
        return
    table = []
    chunks = []
    offset = 0
    for name, shape, _ in param_shapes(params.spec):
        arr = params.tensors[name].data.astype("<f4")
        table.append({"name": name, "shape": list(shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(_manifest(params.spec.to_dict(), params.spec.variant, table, offset))
        for c in chunks:
            fh.write(c)


def load_checkpoint(path) -> ModelParams | TruthOracle:
    with open(path, "rb") as fh:
        blob = fh.read()
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataFormatError("checkpoint has no manifest line", 0)
    try:
        doc = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"unreadable checkpoint manifest: {exc}", 0) from None
    if not isinstance(doc, dict) or doc.get("format") != CKPT_TAG:
        raise DataFormatError(f"not an {CKPT_TAG} checkpoint", 0)
    base = nl + 1
    if doc.get("variant") == "truth_oracle":
        if len(blob) != base:
            raise DataFormatError("unexpected payload in oracle checkpoint", base)
        return TruthOracle()
    try:
        spec = ModelSpec.from_dict(doc["spec"])
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"invalid model spec in checkpoint: {exc}", 0) from None
    expected = {name: shape for name, shape, _ in param_shapes(spec)}
    if len(blob) - base != doc.get("blob_bytes"):
        raise DataFormatError(
            f"blob holds {len(blob) - base} bytes, manifest declares {doc.get('blob_bytes')}", len(blob)
        )
    tensors = {}
    for entry in doc["tensors"]:
        name = entry["name"]
        shape = tuple(entry["shape"])
        if expected.get(name) != shape:
            raise DataFormatError(f"tensor {name} has shape {shape}, spec implies {expected.get(name)}", 0)
        start = base + entry["offset"]
        n = int(np.prod(shape))
        if start + 4 * n > len(blob):
            raise DataFormatError(f"tensor {name} runs past the end of the file", start)
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=start).astype(np.float64).reshape(shape)
        if not np.all(np.isfinite(data)):
            raise DataFormatError(f"tensor {name} holds non-finite values", start)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    missing = set(expected) - set(tensors)
    if missing:
        raise DataFormatError(f"checkpoint lacks tensors {sorted(missing)}", base)
    ordered = {name: tensors[name] for name in expected}
    return ModelParams(spec, ordered)


# ---------------------------------------------------------------------------
# dataset glue
# ---------------------------------------------------------------------------


def _lr_time_fraction(header: dict) -> float:
    t0, t1 = header["domain"][header["d"]]
    lo, hi = header.get("lr_time_span") or (t0, t1)
    return 1.0 if hi >= t1 else (hi - t0) / (t1 - t0)


def spec_for_dataset(header: dict, **overrides) -> ModelSpec:
    """Fill the data-dependent fields of a ModelSpec from an SROP1 header."""
    layout = header["layout"]
    d = header["d"]
    base = dict(
        layout=layout,
        d=d,
        lr_shape=list(header["lr_shape"]),
        s=header["s"],
        domain=[list(b) for b in header["domain"]],
    )
    if layout == "temporal":
        base["T_plus"] = header["hr_frames"]
        base["hr_grid"] = list(header["hr_shape"][1:])
        base["lr_time_fraction"] = _lr_time_fraction(header)
        base.setdefault("variant", "two_net")
    else:
        base["variant"] = "three_net"
        base["branch"] = SubnetSpec(kind="mlp")
    base.update(overrides)
    return ModelSpec.from_dict(base)


def check_compatible(spec: ModelSpec, header: dict) -> None:
    """Raise ConfigError when a dataset cannot feed a model."""
    problems = []
    if spec.layout != header["layout"]:
        problems.append(f"layout {spec.layout} vs dataset {header['layout']}")
    if spec.d != header["d"]:
        problems.append(f"spatial dimension {spec.d} vs dataset {header['d']}")
    if spec.s != header["s"]:
        problems.append(f"sensor count {spec.s} vs dataset {header['s']}")
    if spec.variant != "init_state_only" and list(spec.lr_shape) != list(header["lr_shape"]):
        problems.append(f"LR shape {spec.lr_shape} vs dataset {header['lr_shape']}")
    if spec.layout == "temporal" and spec.T_plus != header["hr_frames"]:
        problems.append(f"output frames {spec.T_plus} vs dataset {header['hr_frames']}")
    if spec.layout == "temporal" and not math.isclose(spec.lr_time_fraction, _lr_time_fraction(header)):
        problems.append(f"LR time fraction {spec.lr_time_fraction} vs dataset {_lr_time_fraction(header)}")
    if problems:
        raise ConfigError("model and dataset are incompatible: " + "; ".join(problems))
