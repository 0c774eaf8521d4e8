"""Shared output helpers for the experiment scripts."""

import json
import time
from pathlib import Path


def progress(every: int):
    start = time.perf_counter()

    def cb(epoch, tr, va):
        if epoch == 1 or epoch % every == 0:
            print(f"epoch {epoch:4d}  train {tr:.4e}  val {va:.4e}  {time.perf_counter() - start:6.0f}s", flush=True)

    return cb


def save_outcome(out_dir, name: str, outcome, extra: dict | None = None) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.report.json").write_text(outcome.report.to_json())
    (out / f"{name}.loss.csv").write_text(outcome.result.history_csv())
    if extra:
        (out / f"{name}.summary.json").write_text(json.dumps(extra, indent=2))
