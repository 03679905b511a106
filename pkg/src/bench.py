"""Experiment runner: boundary caching, single points, sweeps and result files."""

from __future__ import annotations

import hashlib
import json
import math
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
import pandas as pd

from . import __version__
from .analysis import summarize_sweep, time_ratio
from .boundary_mps import BoundaryResult, power_converge
from .config import ExperimentConfig
from .exact_solutions import baseline_for, delta_f
from .finetune import FineTuneTrace, finetune_loop, load_checkpoint
from .logger import get_logger
from .models import ModelError, ModelSpec, parse_model
from .tailoring import TailoredEnsemble, free_energy, scissor_and_stitch
from .tensor_core import NumericalError
from .trotter_net import ThetaTensor, build_theta

logger = get_logger("bench")

CSV_COLUMNS = (
    "model", "h", "beta", "K", "tau", "chi", "finetuned", "f", "f_exact", "delta_f",
    "boundary_s", "finetune_s", "eval_s", "total_s", "steps", "seed",
)


@dataclass
class RunRecord:
    model: str
    h: float
    beta: float
    K: int
    tau: float
    chi: int
    finetuned: bool
    f: float
    f_exact: float
    delta_f: float
    boundary_s: float
    finetune_s: float
    eval_s: float
    total_s: float
    steps: int
    seed: int
    status: str = "ok"
    error: str = ""
    finetune_status: str = ""
    code_version: str = __version__

    def csv_row(self) -> Dict[str, object]:
        return {column: getattr(self, column) for column in CSV_COLUMNS}


@dataclass(frozen=True, eq=False)
class CachedBoundary:
    A: np.ndarray
    B: np.ndarray
    iterations: int
    final_delta: float
    seconds: float
    hit: bool = False


def boundary_key(model: ModelSpec, tau: float, chi: int, tol: float) -> str:
    text = f"{model.describe()}|tau={tau!r}|chi={chi}|tol={tol!r}"
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:20]


class BoundaryCache:
    """Converged boundaries keyed by (model, tau, chi, tol), in memory and optionally on disk.

    Each key has its own lock, so threads asking for different boundaries
    converge them concurrently while a repeated key waits for the first.
    """

    def __init__(self, directory: str | Path | None = None) -> None:
        self.directory = Path(directory) if directory else None
        self._memory: Dict[str, CachedBoundary] = {}
        self._lock = threading.Lock()
        self._key_locks: Dict[str, threading.Lock] = {}

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def _path(self, key: str) -> Path | None:
        return self.directory / f"boundary-{key}.npz" if self.directory else None

    def _load(self, key: str) -> CachedBoundary | None:
        path = self._path(key)
        if path is None or not path.exists():
            return None
        with np.load(path, allow_pickle=False) as archive:
            return CachedBoundary(
                A=archive["A"],
                B=archive["B"],
                iterations=int(archive["iterations"]),
                final_delta=float(archive["final_delta"]),
                seconds=0.0,
                hit=True,
            )

    def _store(self, key: str, entry: CachedBoundary) -> None:
        path = self._path(key)
        if path is None:
            return
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as handle:
            np.savez(
                handle,
                A=entry.A,
                B=entry.B,
                iterations=np.int64(entry.iterations),
                final_delta=np.float64(entry.final_delta),
            )

    def get_or_compute(
        self,
        theta: ThetaTensor,
        chi: int,
        tol: float,
        max_iters: int,
        seed: int | None,
    ) -> CachedBoundary:
        key = boundary_key(theta.model, theta.tau, chi, tol)
        with self._key_lock(key):
            entry = self._memory.get(key) or self._load(key)
            if entry is not None:
                logger.info("Boundary cache hit for %s chi=%s tau=%s.", theta.model.label, chi, theta.tau)
                hit = CachedBoundary(entry.A, entry.B, entry.iterations, entry.final_delta, 0.0, True)
                self._memory[key] = hit
                return hit

            start = time.perf_counter()
            result: BoundaryResult = power_converge(theta, chi, tol=tol, max_iters=max_iters, seed=seed, parallel=True)
            entry = CachedBoundary(
                A=np.array(result.L.array),
                B=np.array(result.R.array),
                iterations=result.iterations,
                final_delta=result.final_delta,
                seconds=time.perf_counter() - start,
            )
            self._memory[key] = entry
            self._store(key, entry)
            return entry


def _failed_record(config: ExperimentConfig, model_text: str, beta: float, chi: int, error: Exception) -> RunRecord:
    nan = float("nan")
    return RunRecord(
        model=model_text, h=nan, beta=beta, K=max(1, int(round(beta / config.tau))), tau=config.tau,
        chi=chi, finetuned=config.finetune, f=nan, f_exact=nan, delta_f=nan, boundary_s=nan,
        finetune_s=nan, eval_s=nan, total_s=nan, steps=0, seed=config.seed,
        status="failed", error=f"{type(error).__name__}: {error}",
    )


def _reference(model: ModelSpec, beta: float) -> float:
    """Analytic f at the realized beta, NaN for chains without a closed form."""
    try:
        return baseline_for(model).f_exact(1.0 / beta)
    except ModelError:
        return float("nan")


def _finetune_point(
    config: ExperimentConfig, ensemble: TailoredEnsemble, point: str
) -> Tuple[TailoredEnsemble, FineTuneTrace]:
    """Fine-tune one grid point, resuming from and writing to its checkpoint directory."""
    checkpoint = config.checkpoint_dir / point if config.checkpoint_dir else None
    if config.resume and checkpoint is not None and (checkpoint / "A.npz").exists():
        ensemble = load_checkpoint(ensemble, checkpoint)
        logger.info("Resuming %s from %s.", point, checkpoint)
    ensemble, trace = finetune_loop(ensemble, config.finetune_config, checkpoint_dir=checkpoint)
    if config.trace_out:
        trace.write_csv(config.trace_out / f"trace-{point}.csv")
    return ensemble, trace


def run_point(
    config: ExperimentConfig,
    beta: float,
    chi: int | None = None,
    cache: BoundaryCache | None = None,
) -> RunRecord:
    """boundary -> scissor and stitch -> optional fine-tune -> free energy -> delta f."""
    chi = chi or config.chi
    cache = cache or BoundaryCache(config.boundary_cache)
    seed = config.seed if config.deterministic else None
    total_start = time.perf_counter()
    try:
        model = parse_model(config.model)
        theta = build_theta(model, config.tau)
        boundary = cache.get_or_compute(theta, chi, config.boundary_tol, config.boundary_max_iters, seed)

        ensemble = scissor_and_stitch(boundary.A, boundary.B, theta, beta, config.tau)
        finetune_s, steps, finetune_status = 0.0, 0, ""
        if config.finetune:
            start = time.perf_counter()
            ensemble, trace = _finetune_point(config, ensemble, f"chi{chi}-beta{beta:g}")
            finetune_s = time.perf_counter() - start
            steps, finetune_status = trace.steps, trace.status

        start = time.perf_counter()
        report = free_energy(ensemble)
        eval_s = time.perf_counter() - start

        f_exact = _reference(model, ensemble.beta)
        error = delta_f(report.f, f_exact) if not math.isnan(f_exact) else float("nan")
    except (NumericalError, ValueError, OSError) as exc:
        logger.warning("Point beta=%s chi=%s failed: %s", beta, chi, exc)
        return _failed_record(config, config.model, beta, chi, exc)

    record = RunRecord(
        model=model.label,
        h=model.h,
        beta=ensemble.beta,
        K=ensemble.K,
        tau=config.tau,
        chi=chi,
        finetuned=config.finetune,
        f=report.f,
        f_exact=f_exact,
        delta_f=error,
        boundary_s=boundary.seconds,
        finetune_s=finetune_s,
        eval_s=eval_s,
        total_s=time.perf_counter() - total_start,
        steps=steps,
        seed=config.seed,
        finetune_status=finetune_status,
    )
    logger.info(
        "%s beta=%s chi=%s f=%.17g delta_f=%.3e (%.3fs)",
        record.model, record.beta, chi, record.f, record.delta_f, record.total_s,
    )
    return record


def grid_points(config: ExperimentConfig) -> List[Tuple[int, float]]:
    """(chi, beta) pairs in output order: chi-major, then beta as given."""
    return [(chi, beta) for chi in config.chis for beta in config.betas]


def sweep(config: ExperimentConfig) -> List[RunRecord]:
    """Run every grid point, reusing one boundary per chi, and write the requested files."""
    cache = BoundaryCache(config.boundary_cache)
    points = grid_points(config)
    logger.info("Sweeping %s points with %s job(s).", len(points), config.jobs)

    if config.jobs == 1:
        records = [run_point(config, beta, chi, cache) for chi, beta in points]
    else:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            records = list(pool.map(lambda point: run_point(config, point[1], point[0], cache), points))

    failures = sum(record.status != "ok" for record in records)
    if failures:
        logger.warning("%s of %s sweep points failed.", failures, len(records))
    if config.out:
        write_csv(records, config.out)
    if config.json_out:
        write_json(records, config.json_out, config)
    return records


def records_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([record.csv_row() for record in records], columns=list(CSV_COLUMNS))


def write_csv(records: Sequence[RunRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(path, index=False, float_format="%.17g")
    logger.info("Wrote %s rows to %s.", len(records), path)
    return path


def sweep_summary(records: Sequence[RunRecord]) -> Dict[str, object]:
    """Per-group delta_f and timing plus, per chi, the cost ratio between the largest and smallest beta."""
    ok = [record for record in records if record.status == "ok"]
    if not ok:
        return {"groups": [], "time_ratios": []}
    frame = records_frame(ok)
    ratios = []
    for chi, group in frame.groupby("chi"):
        if group["beta"].nunique() < 2:
            continue
        high, low = float(group["beta"].max()), float(group["beta"].min())
        ratios.append(
            {"chi": int(chi), "beta_high": high, "beta_low": low, "ratio": time_ratio(group, high, low)}
        )
    return {
        "groups": json.loads(summarize_sweep(frame).to_json(orient="records")),
        "time_ratios": ratios,
    }


def write_json(records: Sequence[RunRecord], path: str | Path, config: ExperimentConfig) -> Path:
    """Records with full provenance: code version, effective config and per-point status."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "code_version": __version__,
        "config": config.as_flat(),
        "records": [asdict(record) for record in records],
        "summary": sweep_summary(records),
    }
    path.write_text(json.dumps(payload, indent=2, allow_nan=True))
    return path
