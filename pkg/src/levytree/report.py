"""Experiment reports and deterministic chunked Monte Carlo execution."""

from __future__ import annotations

import concurrent.futures
import dataclasses
import json
import time
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np


@dataclass
class ExperimentReport:
    """Outcome of a seeded experiment run.

    `statistics` holds every computed number (point estimates, standard
    errors, defects); `tolerance` the acceptance thresholds actually
    applied; `reference` a plain description of the oracle or identity
    the run was checked against.  Reports are reproducible bit for bit
    from (seed, workers); wall_time_s is the only nondeterministic field.
    """

    name: str
    seed: int | None
    params: dict
    statistics: dict
    tolerance: Any
    passed: bool
    reference: str = ""
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def comparable_dict(self) -> dict:
        """Everything except wall time, for determinism comparisons."""
        d = self.to_dict()
        d.pop("wall_time_s")
        return d

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True, default=_scrub)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")


def _scrub(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")


class timer:
    """Context manager measuring wall time for report bookkeeping."""

    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        return False


def chunk_seeds(seed: int, n_chunks: int) -> list[np.random.SeedSequence]:
    """Independent child seeds, fixed by (seed, chunk index) alone."""
    return np.random.SeedSequence(seed).spawn(n_chunks)


def run_chunks(
    kernel: Callable,
    seeds: list[np.random.SeedSequence],
    args: tuple,
    workers: int = 1,
):
    """Run kernel(seed, *args) over chunks, reducing in fixed chunk order.

    The reduction order never depends on the worker count or scheduling,
    so results are byte-identical for any `workers`.  Kernels must be
    module-level functions when workers > 1 (process pool pickling).
    """
    if workers <= 1:
        return [kernel(s, *args) for s in seeds]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(kernel, s, *args) for s in seeds]
        return [f.result() for f in futures]
