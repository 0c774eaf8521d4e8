"""Losses, training loop, evaluation metrics and interpolation baselines."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn
from .datagen import Dataset, ForcingSpec, SampleRecord, forcing_eval, make_rng
from .errors import ConfigError, NumericalError
from .model import ModelParams, TruthOracle, check_compatible, forward
from .tensor import ContractError, Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    seed: int = 0
    lambda_data: float = 1.0
    lambda_physics: float = 0.0
    n_collocation: int = 64
    fd_step: float = 1e-3
    val_fraction: float = 0.1
    # random subset of query points per sample and step (None = all)
    queries_per_sample: int | None = None
    # "amplitude" divides each sample's squared error by its LR mean square
    sample_weighting: str = "none"
    # "cosine" anneals the learning rate to lr_min over the run
    lr_schedule: str = "constant"
    lr_min: float = 0.0
    # global gradient-norm cap (None disables)
    grad_clip: float | None = None

    def __post_init__(self):
        if self.lambda_data < 0 or self.lambda_physics < 0 or self.lambda_data + self.lambda_physics <= 0:
            raise ConfigError("loss weights must be nonnegative with a positive sum")
        if self.fd_step <= 0:
            raise ConfigError("fd_step must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")
        if self.sample_weighting not in ("none", "amplitude"):
            raise ConfigError(f"unknown sample_weighting {self.sample_weighting!r}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    u_lr: np.ndarray
    x: np.ndarray
    y: np.ndarray  # [B, M, c] or shared [M, c]
    targets: np.ndarray  # [B, M] or [B, T+, M]
    params: np.ndarray  # [B, p]
    hr_initial: np.ndarray | None = None

    def __len__(self) -> int:
        return self.u_lr.shape[0]


def make_batch(
    dataset: Dataset,
    indices: Sequence[int],
    queries: int | None = None,
    rng: np.random.Generator | None = None,
) -> Batch:
    recs = [dataset.records[i] for i in indices]
    u = np.stack([r.lr_field for r in recs])
    x = np.stack([r.sensor_coords for r in recs])
    p = np.stack([r.params for r in recs])
    if dataset.layout == "temporal":
        y = recs[0].query_coords
        targets = np.stack([r.hr_targets for r in recs])
        grid = dataset.header["hr_shape"][1:]
        hr_initial = targets[:, 0, :].reshape((len(recs), *grid))
        return Batch(u, x, y, targets, p, hr_initial)
    y = np.stack([r.query_coords for r in recs])
    targets = np.stack([r.hr_targets for r in recs])
    if queries is not None and queries < y.shape[1]:
        if rng is None:
            raise ConfigError("query subsampling needs an rng")
        pick = np.stack([rng.choice(y.shape[1], size=queries, replace=False) for _ in recs])
        rows = np.arange(len(recs))[:, None]
        y = y[rows, pick]
        targets = targets[rows, pick]
    return Batch(u, x, y, targets, p, None)


def model_output(model, batch: Batch) -> Tensor:
    if isinstance(model, TruthOracle):
        return Tensor(batch.targets)
    if callable(model) and not isinstance(model, ModelParams):
        return model(batch)
    return forward(model, batch.u_lr, batch.x, batch.y, batch.hr_initial)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def data_loss(model, batch: Batch, weights: np.ndarray | None = None) -> Tensor:
    """Mean squared error over every (sample, query) pair of the batch.

    ``weights`` [B] optionally rescales each sample's squared errors.
    """
    if len(batch) == 0:
        raise ContractError("empty batch")
    diff = model_output(model, batch) - batch.targets
    sq = tn.square(diff)
    if weights is not None:
        sq = sq * Tensor(np.reshape(weights, (-1,) + (1,) * (sq.ndim - 1)))
    return tn.mean(sq)


def amplitude_weights(batch: Batch) -> np.ndarray:
    """1 / mean square of each sample's branch input (floored)."""
    u = batch.hr_initial if batch.u_lr is None else batch.u_lr
    ms = np.mean(u.reshape(len(batch), -1) ** 2, axis=1)
    return 1.0 / np.maximum(ms, 1e-12)


def forcing_from_params(family: str, names: Sequence[str], params: np.ndarray) -> ForcingSpec:
    p = dict(zip(names, params))
    if family in ("exp1", "exp3"):
        return ForcingSpec(family, alpha=float(p["alpha"]), beta=float(p["beta"]))
    if family == "exp2":
        return ForcingSpec("exp2")
    if family in ("diff2d", "diff2d-var"):
        return ForcingSpec("none")
    if family == "forced2d":
        return ForcingSpec(
            "spiral2d",
            center=(float(p["center1"]), float(p["center2"])),
            amplitude=float(p["amplitude"]),
            pitch=float(p["pitch"]),
            width=float(p["width"]),
            r0=float(p["r0"]),
        )
    raise ConfigError(f"no forcing model for family {family!r}")


def _forcing_values(header: dict, params: np.ndarray, points: np.ndarray, t) -> np.ndarray:
    """Forcing per sample at spatial ``points`` [B, P, d] and times ``t`` (broadcastable)."""
    names = header["param_names"]
    out = []
    for b in range(params.shape[0]):
        spec = forcing_from_params(header["family"], names, params[b])
        D = float(params[b][names.index("D")])
        tb = t[b] if np.ndim(t) and np.shape(t)[0] == params.shape[0] else t
        if header["d"] == 1:
            out.append(forcing_eval(spec, D, points[b, ..., 0], tb))
        else:
            out.append(forcing_eval(spec, D, (points[b, ..., 0], points[b, ..., 1]), tb))
    return np.stack(out)


def sample_collocation(
    rng: np.random.Generator, n: int, bounds: Sequence[Sequence[float]], h: float, batch: int
) -> np.ndarray:
    """[batch, n, len(bounds)] points at distance > h from every face."""
    cols = []
    for lo, hi in bounds:
        margin = 2.0 * h
        if hi - lo <= 2 * margin:
            raise ConfigError(f"stencil step {h} too large for interval [{lo}, {hi}]")
        cols.append(rng.uniform(lo + margin, hi - margin, size=(batch, n)))
    return np.stack(cols, axis=-1)


def _check_margin(points: np.ndarray, bounds, h: float) -> None:
    for j, (lo, hi) in enumerate(bounds):
        c = points[..., j]
        if np.any(c - h <= lo) or np.any(c + h >= hi):
            raise ContractError(f"collocation points closer than h={h} to the boundary on axis {j}")


def physics_residual(model, batch: Batch, collocation: np.ndarray, h: float, header: dict) -> Tensor:
    """Mean squared heat-equation residual ``D_t u - D lap u - F`` at collocation points.

    Derivatives are central differences of the model's own evaluations with
    step ``h``. Spacetime models are evaluated at ``2(d+1)+1`` stencil points;
    temporal models at ``2d+1`` spatial points, with the time derivative taken
    between neighbouring output frames.

    ``model`` is a ModelParams or a callable ``(batch) -> Tensor`` that reads
    ``batch.y``.
    """
    d = header["d"]
    names = header["param_names"]
    bounds = [tuple(b) for b in header["domain"]]
    D = batch.params[:, names.index("D")]
    collocation = np.asarray(collocation, dtype=np.float64)
    nb = len(batch)
    if header["layout"] == "spacetime":
        _check_margin(collocation, bounds, h)
        n = collocation.shape[1]
        shifts = [np.zeros(d + 1)]
        for j in range(d + 1):
            e = np.zeros(d + 1)
            e[j] = h
            shifts += [e, -e]
        pts = np.concatenate([collocation + s for s in shifts], axis=1)
        sub = Batch(batch.u_lr, batch.x, pts, np.zeros(pts.shape[:2]), batch.params, batch.hr_initial)
        u = model_output(model, sub)  # [B, (2(d+1)+1) n]
        centre = u[:, 0:n]
        lap = None
        for j in range(d):
            plus = u[:, (1 + 2 * j) * n : (2 + 2 * j) * n]
            minus = u[:, (2 + 2 * j) * n : (3 + 2 * j) * n]
            term = (plus + minus - 2.0 * centre) * (1.0 / (h * h))
            lap = term if lap is None else lap + term
        jt = d
        ut = (u[:, (1 + 2 * jt) * n : (2 + 2 * jt) * n] - u[:, (2 + 2 * jt) * n : (3 + 2 * jt) * n]) * (
            1.0 / (2.0 * h)
        )
        force = _forcing_values(header, batch.params, collocation[..., :d], collocation[..., d])
        resid = ut - lap * Tensor(D[:, None]) - force
        return tn.mean(tn.square(resid))

    space_bounds = bounds[:d]
    _check_margin(collocation, space_bounds, h)
    if collocation.ndim == 3:
        if not np.allclose(collocation, collocation[:1]):
            raise ContractError("temporal models share collocation points across a batch")
        collocation = collocation[0]
    n = collocation.shape[0]
    shifts = [np.zeros(d)]
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        shifts += [e, -e]
    pts = np.concatenate([collocation + s for s in shifts], axis=0)
    T_plus = header["hr_frames"]
    sub = Batch(batch.u_lr, batch.x, pts, np.zeros((nb, T_plus, pts.shape[0])), batch.params, batch.hr_initial)
    u = model_output(model, sub)  # [B, T+, (2d+1) n]
    centre = u[:, :, 0:n]
    lap = None
    for j in range(d):
        plus = u[:, :, (1 + 2 * j) * n : (2 + 2 * j) * n]
        minus = u[:, :, (2 + 2 * j) * n : (3 + 2 * j) * n]
        term = (plus + minus - 2.0 * centre) * (1.0 / (h * h))
        lap = term if lap is None else lap + term
    t0, t1 = bounds[d]
    dt = (t1 - t0) / (T_plus - 1)
    ut = (centre[:, 2:, :] - centre[:, :-2, :]) * (1.0 / (2.0 * dt))
    times = np.linspace(t0, t1, T_plus)[1:-1]
    pts_b = np.broadcast_to(collocation, (nb, T_plus - 2, n, d))
    force = _forcing_values(header, batch.params, pts_b, times[:, None])
    resid = ut - lap[:, 1:-1, :] * Tensor(D[:, None, None]) - force
    return tn.mean(tn.square(resid))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    params: ModelParams
    history: list[tuple[int, float, float]]
    best_epoch: int
    seconds: float

    def history_csv(self) -> str:
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{tr!r},{va!r}" for e, tr, va in self.history]
        return "\n".join(lines) + "\n"


def split_indices(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if n < 2:
        idx = np.arange(n)
        return idx, idx
    perm = make_rng(seed, 1).permutation(n)
    n_val = min(n - 1, max(1, int(round(val_fraction * n))))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def learning_rate_at(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate used throughout ``epoch`` (1-based)."""
    if cfg.lr_schedule == "constant" or cfg.epochs <= 1:
        return cfg.learning_rate
    frac = (epoch - 1) / (cfg.epochs - 1)
    return cfg.lr_min + 0.5 * (cfg.learning_rate - cfg.lr_min) * (1.0 + math.cos(math.pi * frac))


def clip_gradients(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``; returns the norm."""
    total = math.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in params if p.grad is not None))
    if total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / total)
    return total


def _param_norms(model: ModelParams) -> str:
    return ", ".join(f"{k}={np.linalg.norm(v.data):.3g}" for k, v in model.tensors.items())


def batch_loss(model: ModelParams, batch: Batch, cfg: TrainConfig, header: dict, rng) -> Tensor:
    loss = None
    if cfg.lambda_data > 0:
        weights = amplitude_weights(batch) if cfg.sample_weighting == "amplitude" else None
        loss = data_loss(model, batch, weights) * cfg.lambda_data
    if cfg.lambda_physics > 0:
        bounds = [tuple(b) for b in header["domain"]]
        if header["layout"] == "spacetime":
            col = sample_collocation(rng, cfg.n_collocation, bounds, cfg.fd_step, len(batch))
        else:
            col = sample_collocation(rng, cfg.n_collocation, bounds[: header["d"]], cfg.fd_step, 1)
        phys = physics_residual(model, batch, col, cfg.fd_step, header) * cfg.lambda_physics
        loss = phys if loss is None else loss + phys
    return loss


def evaluate_loss(model, dataset: Dataset, indices, batch_size: int = 32) -> float:
    if len(indices) == 0:
        return float("nan")
    total = 0.0
    count = 0
    with tn.no_grad():
        for start in range(0, len(indices), batch_size):
            chunk = indices[start : start + batch_size]
            batch = make_batch(dataset, chunk)
            total += data_loss(model, batch).item() * batch.targets.size
            count += batch.targets.size
    return total / count


def train(
    model: ModelParams,
    dataset: Dataset,
    cfg: TrainConfig,
    callback: Callable[[int, float, float], None] | None = None,
) -> TrainResult:
    """Mini-batch Adam on ``lambda_d * L_data + lambda_p * L_physics``.

    The parameters with the lowest validation loss are restored at the end.
    """
    check_compatible(model.spec, dataset.header)
    start = time.perf_counter()
    train_idx, val_idx = split_indices(len(dataset), cfg.val_fraction, cfg.seed)
    rng = make_rng(cfg.seed, 2)
    opt = tn.Adam(model.parameters(), lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, epsilon=cfg.epsilon)
    history: list[tuple[int, float, float]] = []
    best = (math.inf, 0, model.state())
    for epoch in range(1, cfg.epochs + 1):
        opt.learning_rate = learning_rate_at(cfg, epoch)
        order = rng.permutation(train_idx)
        losses = []
        for bi, startb in enumerate(range(0, len(order), cfg.batch_size)):
            chunk = order[startb : startb + cfg.batch_size]
            batch = make_batch(dataset, chunk, cfg.queries_per_sample, rng)
            loss = batch_loss(model, batch, cfg, dataset.header, rng)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch {bi}; parameter norms: {_param_norms(model)}"
                )
            loss.backward()
            if cfg.grad_clip is not None:
                clip_gradients(opt.params, cfg.grad_clip)
            opt.step()
            losses.append(value)
        train_loss = float(np.mean(losses)) if losses else float("nan")
        val_loss = evaluate_loss(model, dataset, val_idx)
        history.append((epoch, train_loss, val_loss))
        if val_loss < best[0]:
            best = (val_loss, epoch, model.state())
        if callback is not None:
            callback(epoch, train_loss, val_loss)
    if history:
        model.load_state(best[2])
    return TrainResult(model, history, best[1], time.perf_counter() - start)


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------


def catmull_rom_weights(p: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices [.., 4] and weights [.., 4] at fractional grid positions ``p``.

    Positions are clamped to [0, n-1] and neighbour indices to the grid.
    """
    p = np.clip(np.asarray(p, dtype=np.float64), 0.0, n - 1)
    i = np.clip(np.floor(p).astype(int), 0, max(n - 2, 0))
    f = p - i
    f2 = f * f
    f3 = f2 * f
    w = np.stack(
        [
            0.5 * (-f3 + 2.0 * f2 - f),
            0.5 * (3.0 * f3 - 5.0 * f2 + 2.0),
            0.5 * (-3.0 * f3 + 4.0 * f2 + f),
            0.5 * (f3 - f2),
        ],
        axis=-1,
    )
    idx = np.clip(i[..., None] + np.arange(-1, 3), 0, n - 1)
    return idx, w


def catmull_rom_1d(values: np.ndarray, axis_coords: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Interpolate ``values`` [..., n] (uniform ``axis_coords``) at ``query`` [M] -> [..., M]."""
    n = len(axis_coords)
    p = (np.asarray(query) - axis_coords[0]) / (axis_coords[1] - axis_coords[0])
    idx, w = catmull_rom_weights(p, n)
    return np.sum(values[..., idx] * w, axis=-1)


def catmull_rom_2d(values: np.ndarray, a1: np.ndarray, a2: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Tensor-product interpolation of ``values`` [..., n1, n2] at points ``q`` [M, 2]."""
    i1, w1 = catmull_rom_weights((q[:, 0] - a1[0]) / (a1[1] - a1[0]), len(a1))
    i2, w2 = catmull_rom_weights((q[:, 1] - a2[0]) / (a2[1] - a2[0]), len(a2))
    patch = values[..., i1[:, :, None], i2[:, None, :]]  # [..., M, 4, 4]
    return np.einsum("...mij,mi,mj->...m", patch, w1, w2)


def _lr_times(header: dict, n_frames: int) -> np.ndarray:
    t0, t1 = header["lr_time_span"]
    return np.linspace(t0, t1, n_frames) if n_frames > 1 else np.array([t0])


def _hr_times(header: dict) -> np.ndarray:
    t0, t1 = header["domain"][header["d"]]
    return np.linspace(t0, t1, header["hr_frames"])


def linear_in_time(frames: np.ndarray, t_src: np.ndarray, t_dst: np.ndarray) -> np.ndarray:
    """Interpolate [T, M] frames to times ``t_dst`` (clamped beyond the ends)."""
    if len(t_src) == 1:
        return np.repeat(frames, len(t_dst), axis=0)
    pos = np.clip((t_dst - t_src[0]) / (t_src[1] - t_src[0]), 0.0, len(t_src) - 1)
    j = np.clip(np.floor(pos).astype(int), 0, len(t_src) - 2)
    w = (pos - j)[:, None]
    return (1.0 - w) * frames[j] + w * frames[j + 1]


def baseline_interpolate(sample: SampleRecord, method: str, header: dict) -> np.ndarray:
    """Parameter-free prediction of ``sample.hr_targets`` from its LR data."""
    if method == "bicubic_grid":
        if header["layout"] != "temporal":
            raise ContractError("bicubic interpolation needs LR data on a regular grid")
        d = header["d"]
        lr = sample.lr_field
        if d == 1:
            axis = sample.sensor_coords[0]
            spatial = catmull_rom_1d(lr, axis, sample.query_coords[:, 0])
        else:
            n = lr.shape[1]
            grid = sample.sensor_coords.reshape(2, n, n)
            spatial = catmull_rom_2d(lr, grid[0][:, 0], grid[1][0, :], sample.query_coords)
        return linear_in_time(spatial, _lr_times(header, lr.shape[0]), _hr_times(header))
    if method == "idw_scattered":
        src, vals = _spacetime_sensors(sample, header)
        dst = _spacetime_queries(sample, header)
        bounds = [tuple(b) for b in header["domain"]]
        src_n = _normalize(src, bounds)
        dst_n = _normalize(dst, bounds)
        d2 = ((dst_n[:, None, :] - src_n[None, :, :]) ** 2).sum(-1)
        dist = np.sqrt(d2)
        out = np.empty(dst.shape[0])
        hit = dist.min(axis=1) < 1e-12
        if hit.any():
            out[hit] = vals[dist[hit].argmin(axis=1)]
        miss = ~hit
        w = 1.0 / d2[miss]
        out[miss] = (w @ vals) / w.sum(axis=1)
        if header["layout"] == "temporal":
            return out.reshape(header["hr_frames"], -1)
        return out
    raise ConfigError(f"unknown baseline {method!r}")


def _normalize(points: np.ndarray, bounds) -> np.ndarray:
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    return 2.0 * (points - lo) / (hi - lo) - 1.0


def _spacetime_sensors(sample: SampleRecord, header: dict) -> tuple[np.ndarray, np.ndarray]:
    if header["layout"] == "spacetime":
        return sample.sensor_coords.T, sample.lr_field
    T = sample.lr_field.shape[0]
    times = _lr_times(header, T)
    xs = sample.sensor_coords.T  # [s, d]
    pts = np.concatenate(
        [np.repeat(xs[None], T, axis=0), np.broadcast_to(times[:, None, None], (T, xs.shape[0], 1))], axis=-1
    )
    return pts.reshape(-1, xs.shape[1] + 1), sample.lr_field.reshape(-1)


def _spacetime_queries(sample: SampleRecord, header: dict) -> np.ndarray:
    if header["layout"] == "spacetime":
        return sample.query_coords
    times = _hr_times(header)
    q = sample.query_coords
    pts = np.concatenate(
        [np.repeat(q[None], len(times), axis=0), np.broadcast_to(times[:, None, None], (len(times), q.shape[0], 1))],
        axis=-1,
    )
    return pts.reshape(-1, q.shape[1] + 1)


def default_baseline(header: dict) -> str:
    return "bicubic_grid" if header["layout"] == "temporal" else "idw_scattered"


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def relative_l2(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(pred - truth) / np.linalg.norm(truth))


def _summary(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return {"mean": None, "median": None, "max": None}
    return {"mean": float(arr.mean()), "median": float(np.median(arr)), "max": float(arr.max())}


@dataclass
class EvalReport:
    relative_l2: list[float]
    mse: list[float]
    aggregate: dict
    baselines: dict = field(default_factory=dict)
    seconds: float = 0.0
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls(**json.loads(text))


def predict_dataset(model, dataset: Dataset, batch_size: int = 16) -> list[np.ndarray]:
    preds: list[np.ndarray] = []
    idx = np.arange(len(dataset))
    with tn.no_grad():
        for start in range(0, len(idx), batch_size):
            batch = make_batch(dataset, idx[start : start + batch_size])
            out = model_output(model, batch).data
            preds.extend(np.asarray(o) for o in out)
    return preds


def evaluate(
    model,
    dataset: Dataset,
    baselines: Sequence[str] | None = None,
    config: dict | None = None,
) -> EvalReport:
    """Per-sample and aggregate relative L2 / MSE, with baseline comparisons."""
    start = time.perf_counter()
    if isinstance(model, ModelParams):
        check_compatible(model.spec, dataset.header)
    preds = predict_dataset(model, dataset)
    rel = [relative_l2(p, r.hr_targets) for p, r in zip(preds, dataset.records)]
    mse = [float(np.mean((p - r.hr_targets) ** 2)) for p, r in zip(preds, dataset.records)]
    if baselines is None:
        baselines = [default_baseline(dataset.header)]
    base_out = {}
    for method in baselines:
        b_rel = []
        b_mse = []
        for r in dataset.records:
            pred = baseline_interpolate(r, method, dataset.header)
            b_rel.append(relative_l2(pred, r.hr_targets))
            b_mse.append(float(np.mean((pred - r.hr_targets) ** 2)))
        base_out[method] = {"relative_l2": b_rel, "mse": b_mse, "aggregate": {"relative_l2": _summary(b_rel), "mse": _summary(b_mse)}}
    return EvalReport(
        relative_l2=rel,
        mse=mse,
        aggregate={"relative_l2": _summary(rel), "mse": _summary(mse)},
        baselines=base_out,
        seconds=time.perf_counter() - start,
        config=config or {},
    )
