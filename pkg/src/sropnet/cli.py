"""Command-line entry point: generate, train, evaluate, predict, plot.

Exit codes: 0 success, 2 configuration error, 3 data-format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import tensor as tn
from .datagen import FAMILIES, DatasetConfig, build_dataset, make_rng, read_dataset
from .errors import ConfigError, DataFormatError, NumericalError
from .model import (
    ModelParams,
    ModelSpec,
    SubnetSpec,
    TruthOracle,
    check_compatible,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
    spec_for_dataset,
)
from .training import TrainConfig, _hr_times, evaluate, linear_in_time, make_batch, train

log = logging.getLogger("sropnet")

FIELD_TAG = "SROPFIELD1"
SECTIONS = ("experiment", "data", "model", "train", "eval", "paths")
# model-section keys that are not ModelSpec fields
MODEL_EXTRA = ("init_seed",)
# ModelSpec fields derived from the dataset header
MODEL_DERIVED = ("layout", "d", "lr_shape", "hr_grid", "T_plus", "s", "domain", "lr_time_fraction")
EVAL_KEYS = ("baselines",)
EXPERIMENT_KEYS = ("name", "notes")
PATH_KEYS = ("dataset", "out", "checkpoint", "report")


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


def _names(cls) -> set[str]:
    return {f.name for f in fields(cls)}


def _reject_unknown(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    extra = sorted(set(given) - set(allowed))
    if extra:
        raise ConfigError(f"unknown keys in {section!r}: {extra}")


def validate_run_config(doc: dict) -> dict:
    """Check every section and key; return the document with all sections present."""
    if not isinstance(doc, dict):
        raise ConfigError("run config must be a JSON object")
    _reject_unknown("<root>", doc, SECTIONS)
    out = {name: dict(doc.get(name) or {}) for name in SECTIONS}
    _reject_unknown("experiment", out["experiment"], EXPERIMENT_KEYS)
    _reject_unknown("data", out["data"], _names(DatasetConfig))
    model_keys = (_names(ModelSpec) - set(MODEL_DERIVED)) | set(MODEL_EXTRA)
    _reject_unknown("model", out["model"], model_keys)
    for sub in ("branch", "sensor", "trunk"):
        if sub in out["model"]:
            _reject_unknown(f"model.{sub}", out["model"][sub], _names(SubnetSpec))
    _reject_unknown("train", out["train"], _names(TrainConfig))
    _reject_unknown("eval", out["eval"], EVAL_KEYS)
    _reject_unknown("paths", out["paths"], PATH_KEYS)
    # construct once so value errors surface before any work starts
    if out["data"]:
        DatasetConfig(**out["data"])
    train_cfg(out)
    for sub in ("branch", "sensor", "trunk"):
        if sub in out["model"]:
            SubnetSpec(**out["model"][sub])
    return out


def load_run_config(path) -> dict:
    if path is None:
        return validate_run_config({})
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    return validate_run_config(doc)


def train_cfg(run: dict) -> TrainConfig:
    try:
        return TrainConfig(**run["train"])
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def model_spec(run: dict, header: dict) -> ModelSpec:
    overrides = {k: v for k, v in run["model"].items() if k not in MODEL_EXTRA}
    for sub in ("branch", "sensor", "trunk"):
        if sub in overrides:
            overrides[sub] = SubnetSpec(**overrides[sub])
    return spec_for_dataset(header, **overrides)


# ---------------------------------------------------------------------------
# field files
# ---------------------------------------------------------------------------


def write_field(path, name: str, data: np.ndarray, axes: dict | None = None) -> None:
    """JSON header line followed by the field as little-endian float32."""
    arr = np.ascontiguousarray(data, dtype="<f4")
    header = {"format": FIELD_TAG, "name": name, "shape": list(arr.shape), "axes": axes or {}}
    with open(path, "wb") as fh:
        fh.write((json.dumps(header, separators=(",", ":")) + "\n").encode("utf-8"))
        fh.write(arr.tobytes())


def read_field(path) -> tuple[dict, np.ndarray]:
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataFormatError(f"{path}: no header line", 0)
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataFormatError(f"{path}: unreadable header: {exc}", 0) from None
    if not isinstance(header, dict) or header.get("format") != FIELD_TAG:
        raise DataFormatError(f"{path}: not an {FIELD_TAG} file", 0)
    shape = tuple(int(n) for n in header.get("shape", ()))
    need = 4 * int(np.prod(shape))
    have = len(blob) - nl - 1
    if have < need:
        raise DataFormatError(f"{path}: field truncated, expected {need} payload bytes, found {have}", len(blob))
    if have > need:
        raise DataFormatError(f"{path}: {have - need} trailing bytes after field", nl + 1 + need)
    data = np.frombuffer(blob, dtype="<f4", count=need // 4, offset=nl + 1).reshape(shape)
    return header, data.astype(np.float64)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------


def to_gray(
    frame: np.ndarray, lo: float | None = None, hi: float | None = None, flat: int = 128
) -> tuple[np.ndarray, dict]:
    """Min-max scale to 0..255; a degenerate range (min == max) fills with ``flat``."""
    frame = np.asarray(frame, dtype=np.float64)
    lo = float(frame.min()) if lo is None else lo
    hi = float(frame.max()) if hi is None else hi
    if hi > lo:
        pix = np.rint((frame - lo) / (hi - lo) * 255.0)
        img = np.clip(pix, 0, 255).astype(np.uint8)
        degenerate = False
    else:
        img = np.full(frame.shape, flat, dtype=np.uint8)
        degenerate = True
    return img, {"min": lo, "max": hi, "degenerate": degenerate}


def write_pgm(path, img: np.ndarray) -> None:
    img = np.atleast_2d(img)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise DataFormatError(f"{path}: not a binary PGM", 0)
    cols, rows = int(parts[1]), int(parts[2])
    if len(blob) < rows * cols:
        raise DataFormatError(f"{path}: pixel data truncated", len(blob))
    return np.frombuffer(blob[len(blob) - rows * cols :], dtype=np.uint8).reshape(rows, cols)


def write_csv(path, frame: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(frame), delimiter=",", fmt="%.9g")


def read_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _frames(data: np.ndarray) -> list[np.ndarray]:
    """Split a [T, X] / [T, X, Y] field into 2-D images (one per frame in 2-D)."""
    if data.ndim <= 2:
        return [np.atleast_2d(data)]
    return [data[i] for i in range(data.shape[0])]


def emit_panel(out_dir: Path, name: str, data: np.ndarray, error_panel: bool = False) -> list[str]:
    written = []
    scales = []
    lo = hi = None
    flat = 128
    if error_panel:
        # errors are scaled on [0, max] so a perfect prediction is black
        lo, hi, flat = 0.0, float(np.max(data)) if data.size else 0.0, 0
    for i, frame in enumerate(_frames(data)):
        img, scale = to_gray(frame, lo, hi, flat)
        stem = f"{name}_{i:03d}" if data.ndim > 2 else name
        write_pgm(out_dir / f"{stem}.pgm", img)
        write_csv(out_dir / f"{stem}.csv", frame)
        scales.append({"image": f"{stem}.pgm", **scale})
        written.append(stem)
    (out_dir / f"{name}.scale.json").write_text(json.dumps(scales, indent=1))
    return written


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=list) + "\n")


def cmd_generate(args) -> int:
    run = load_run_config(args.config)
    data = dict(run["data"])
    data["family"] = args.problem or data.get("family")
    if data["family"] is None:
        raise ConfigError("--problem is required")
    for flag, key in (
        ("n_samples", "n_samples"),
        ("seed", "seed"),
        ("lr_frames", "lr_frames"),
        ("lr_nodes", "lr_nodes"),
        ("hr_frames", "hr_frames"),
        ("hr_nodes", "hr_nodes"),
        ("lr_mode", "lr_mode"),
        ("lr_fraction", "lr_fraction"),
    ):
        val = getattr(args, flag)
        if val is not None:
            data[key] = val
    cfg = DatasetConfig(**data)
    out = args.out or run["paths"].get("dataset")
    if out is None:
        raise ConfigError("--out is required")
    try:
        ds = build_dataset(cfg, out)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None
    h = ds.header
    print(f"wrote {out}: {len(ds)} samples, family {h['family']}, layout {h['layout']}")
    print(f"  LR shape {h['lr_shape']}, HR shape {h['hr_shape'] or [h['hr_query_count']]}")
    for name, (lo, hi) in cfg.ranges().items():
        print(f"  {name} in [{lo:g}, {hi:g}]")
    return 0


def cmd_train(args) -> int:
    run = load_run_config(args.config)
    ds = read_dataset(args.dataset or run["paths"].get("dataset"))
    out = Path(args.out or run["paths"].get("out") or "run")
    out.mkdir(parents=True, exist_ok=True)
    spec = model_spec(run, ds.header)
    check_compatible(spec, ds.header)
    cfg = train_cfg(run)
    seed = run["model"].get("init_seed", cfg.seed)
    params = init_params(spec, make_rng(seed, 0))
    echo = {
        "run": run,
        "resolved": {"model": spec.to_dict(), "train": asdict(cfg), "init_seed": seed},
        "dataset": {"path": str(args.dataset), "header": ds.header},
    }
    _dump(out / "config.json", echo)

    def report(epoch, tr, va):
        if epoch == 1 or epoch % max(1, cfg.epochs // 10) == 0:
            log.info("epoch %d train %.4g val %.4g", epoch, tr, va)

    res = train(params, ds, cfg, callback=report)
    save_checkpoint(out / "checkpoint.sropckpt", res.params)
    (out / "loss.csv").write_text(res.history_csv())
    print(f"trained {params.count()} parameters for {cfg.epochs} epochs in {res.seconds:.1f}s; best epoch {res.best_epoch}")
    return 0


def cmd_evaluate(args) -> int:
    run = load_run_config(args.config)
    model = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    baselines = run["eval"].get("baselines")
    rep = evaluate(model, ds, baselines, config={"run": run, "checkpoint": str(args.checkpoint), "dataset": str(args.dataset)})
    Path(args.report).write_text(rep.to_json())
    agg = rep.aggregate["relative_l2"]
    print(f"relative L2 mean {agg['mean']} median {agg['median']} max {agg['max']}")
    for name, b in rep.baselines.items():
        print(f"  {name}: mean {b['aggregate']['relative_l2']['mean']}")
    return 0


def parse_grid(text: str, d: int) -> tuple[list[int], int]:
    try:
        nums = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad --grid {text!r}") from None
    if len(nums) != d + 1 or min(nums) < 1:
        raise ConfigError(f"--grid needs {d + 1} positive counts (NX{',NY' if d == 2 else ''},NT), got {text!r}")
    return nums[:d], nums[d]


def predict_on_grid(model, dataset, index: int, nodes: list[int], nt: int) -> np.ndarray:
    """Evaluate one sample on a uniform grid covering the dataset domain; [NT, NX(, NY)]."""
    header = dataset.header
    if not 0 <= index < len(dataset):
        raise ConfigError(f"sample {index} out of range for {len(dataset)} samples")
    d = header["d"]
    bounds = header["domain"]
    axes = [np.linspace(bounds[j][0], bounds[j][1], nodes[j]) for j in range(d)]
    times = np.linspace(bounds[d][0], bounds[d][1], nt)
    space = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=-1)  # [M, d]
    rec = dataset.records[index]
    if isinstance(model, TruthOracle):
        if header["layout"] != "temporal" or list(header["hr_shape"]) != [nt, *nodes]:
            raise ConfigError("the truth oracle can only predict on the stored high-resolution grid")
        return rec.hr_targets.reshape(nt, *nodes)
    check_compatible(model.spec, header)
    batch = make_batch(dataset, [index])
    with tn.no_grad():
        if header["layout"] == "temporal":
            out = forward(model, batch.u_lr, batch.x, space, batch.hr_initial).data[0]  # [T+, M]
            t_model = _hr_times(header)
            if len(t_model) != nt or not np.allclose(t_model, times):
                out = linear_in_time(out, t_model, times)
            return out.reshape(nt, *nodes)
        pts = np.concatenate(
            [np.repeat(space[None], nt, axis=0), np.broadcast_to(times[:, None, None], (nt, len(space), 1))], axis=-1
        ).reshape(1, -1, d + 1)
        out = forward(model, batch.u_lr, batch.x, pts).data[0]
    return out.reshape(nt, *nodes)


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint)
    ds = read_dataset(args.dataset)
    nodes, nt = parse_grid(args.grid, ds.header["d"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    field = predict_on_grid(model, ds, args.sample, nodes, nt)
    axes = {"domain": ds.header["domain"], "nodes": nodes, "frames": nt}
    write_field(out / "prediction.field", "prediction", field, axes)
    rec = ds.records[args.sample]
    if ds.header["layout"] == "temporal":
        write_field(out / "lr.field", "lr", rec.lr_field, {"time_span": ds.header["lr_time_span"]})
        if list(ds.header["hr_shape"]) == [nt, *nodes]:
            write_field(out / "truth.field", "truth", rec.hr_targets.reshape(field.shape), axes)
    print(f"wrote {out / 'prediction.field'} with shape {list(field.shape)}")
    return 0


def cmd_plot(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    loaded = {}
    for path in args.fields:
        header, data = read_field(path)
        loaded[header.get("name") or Path(path).stem] = data
    for name, data in loaded.items():
        emit_panel(out, name, data)
    truth = loaded.get("truth")
    if truth is not None:
        for name, data in loaded.items():
            if name != "truth" and data.shape == truth.shape:
                emit_panel(out, f"{name}_error", np.abs(data - truth), error_panel=True)
    print(f"wrote panels for {sorted(loaded)} to {out}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sropnet", description="Super-resolution operator networks for heat problems.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset and write an SROP1 file")
    g.add_argument("--problem", choices=FAMILIES)
    g.add_argument("--n-samples", dest="n_samples", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out")
    g.add_argument("--config")
    g.add_argument("--lr-frames", dest="lr_frames", type=int)
    g.add_argument("--lr-nodes", dest="lr_nodes", type=int)
    g.add_argument("--hr-frames", dest="hr_frames", type=int)
    g.add_argument("--hr-nodes", dest="hr_nodes", type=int)
    g.add_argument("--lr-mode", dest="lr_mode", choices=("coarse_solve", "downsample"))
    g.add_argument("--lr-fraction", dest="lr_fraction", type=float)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model on an SROP1 dataset")
    t.add_argument("--dataset")
    t.add_argument("--config")
    t.add_argument("--out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="score a checkpoint against a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("predict", help="evaluate one sample on a user-chosen grid")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--dataset", required=True)
    r.add_argument("--sample", type=int, default=0)
    r.add_argument("--grid", required=True, help="NX[,NY],NT")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    q = sub.add_parser("plot", help="write PGM images and CSV grids for field files")
    q.add_argument("fields", nargs="+")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data format error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TypeError as exc:
        # dataclass constructors reject bad keyword values this way
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
