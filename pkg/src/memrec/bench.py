"""Embedding-lookup microbenchmark: pooled gathers against tables of
sweepable size, reporting latency percentiles and cache-sensitivity trends.

The measured kernel is gather-and-sum (pooling_factor rows per query), the
arithmetic pattern of embedding-bag inference. Index streams are generated
up front so the timed region contains only the memory traffic; an optional
flag folds token hashing into the timed region to measure the end-to-end
encode-and-pool cost instead.
"""

from __future__ import annotations

import csv
import io
import threading
import time
from dataclasses import asdict, dataclass

import numpy as np

from .encoder import EncoderConfig
from .errors import ConfigError
from .hashing import hash_token
from .validation import check_positive_int, check_seed64

WARMUP_FRACTION = 0.1

REPORT_COLUMNS = [
    "table_rows",
    "row_len",
    "pooling_factor",
    "num_queries",
    "num_threads",
    "seed",
    "access_distribution",
    "include_hashing",
    "working_set_bytes",
    "mean_ns",
    "p50_ns",
    "p95_ns",
    "p99_ns",
    "throughput_qps",
    "checksum",
]


@dataclass(frozen=True)
class BenchSpec:
    table_rows: int
    row_len: int = 128
    pooling_factor: int = 120
    num_queries: int = 1000
    num_threads: int = 1
    seed: int = 0
    access_distribution: str = "uniform"  # or "zipf" (exponent 1.05)
    include_hashing: bool = False

    def __post_init__(self):
        for name in ("table_rows", "row_len", "pooling_factor", "num_queries",
                     "num_threads"):
            check_positive_int(name, getattr(self, name))
        check_seed64("seed", self.seed)
        if self.pooling_factor > self.table_rows:
            raise ConfigError(
                f"pooling_factor ({self.pooling_factor}) must not exceed "
                f"table_rows ({self.table_rows})"
            )
        if self.access_distribution not in ("uniform", "zipf"):
            raise ConfigError(
                f"access_distribution must be uniform or zipf, "
                f"got {self.access_distribution!r}"
            )

    @property
    def working_set_bytes(self) -> int:
        return self.table_rows * self.row_len * 4  # float32 table


@dataclass(frozen=True)
class BenchReport:
    spec: BenchSpec
    mean_ns: float
    p50_ns: float
    p95_ns: float
    p99_ns: float
    throughput_qps: float
    working_set_bytes: int
    checksum: float

    def __post_init__(self):
        if not self.p50_ns <= self.p95_ns <= self.p99_ns:
            raise ValueError("latency percentiles out of order")

    def as_row(self) -> dict:
        row = asdict(self.spec)
        row.update(
            working_set_bytes=self.working_set_bytes,
            mean_ns=round(self.mean_ns, 1),
            p50_ns=round(self.p50_ns, 1),
            p95_ns=round(self.p95_ns, 1),
            p99_ns=round(self.p99_ns, 1),
            throughput_qps=round(self.throughput_qps, 1),
            checksum=self.checksum,
        )
        return row


def _zipf_indices(
    rng: np.random.Generator, n: int, upper: int, exponent: float = 1.05
) -> np.ndarray:
    """Zipf(exponent) ranks truncated to [0, upper), rank 0 most popular.

    Rejection-free inverse-CDF sampling over the truncated support would
    need the full probability vector; for large tables that vector is the
    same size as the table, so sample untruncated and fold the tail back
    uniformly instead.
    """
    draws = rng.zipf(exponent, size=n).astype(np.int64) - 1
    oversize = draws >= upper
    if oversize.any():
        draws[oversize] = rng.integers(0, upper, size=int(oversize.sum()))
    return draws


def _make_index_stream(spec: BenchSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    shape = (spec.num_queries, spec.pooling_factor)
    if spec.access_distribution == "uniform":
        return rng.integers(0, spec.table_rows, size=shape, dtype=np.int64)
    return _zipf_indices(
        rng, spec.num_queries * spec.pooling_factor, spec.table_rows
    ).reshape(shape)


def _make_token_stream(spec: BenchSpec) -> list[list[bytes]]:
    rng = np.random.default_rng((spec.seed, 1))
    raw = rng.integers(0, 1 << 62, size=(spec.num_queries, spec.pooling_factor))
    return [[b"%016x" % t for t in row] for row in raw]


def run_bench(spec: BenchSpec) -> BenchReport:
    """Time pooled lookups; warmup queries are timed but excluded from the
    latency statistics, while every query feeds the checksum."""
    try:
        rng = np.random.default_rng((spec.seed, 2))
        table = rng.random((spec.table_rows, spec.row_len), dtype=np.float32)
        indices = _make_index_stream(spec)
    except MemoryError as exc:
        raise ConfigError(
            f"cannot allocate benchmark state: table needs "
            f"{spec.working_set_bytes / 1e9:.2f} GB "
            f"({spec.table_rows} x {spec.row_len} float32)"
        ) from exc

    tokens = _make_token_stream(spec) if spec.include_hashing else None
    hash_cfg = EncoderConfig(k=1, k_prime=1, d=spec.table_rows, d_prime=1,
                             l=spec.row_len, hash_seed=spec.seed)
    family = hash_cfg.token_family

    latencies = np.zeros(spec.num_queries, dtype=np.float64)
    checksums = np.zeros(spec.num_threads, dtype=np.float64)

    def worker(tid: int, lo: int, hi: int) -> None:
        acc = 0.0
        for q in range(lo, hi):
            if tokens is None:
                idx = indices[q]
                t0 = time.perf_counter_ns()
                pooled = table[idx].sum(axis=0, dtype=np.float64)
                t1 = time.perf_counter_ns()
            else:
                toks = tokens[q]
                t0 = time.perf_counter_ns()
                idx = np.array(
                    [hash_token(family, 0, t)[0] for t in toks], dtype=np.int64
                )
                pooled = table[idx].sum(axis=0, dtype=np.float64)
                t1 = time.perf_counter_ns()
            latencies[q] = t1 - t0
            acc += float(pooled.sum())
        checksums[tid] = acc

    if spec.num_threads == 1:
        worker(0, 0, spec.num_queries)
    else:
        bounds = np.linspace(0, spec.num_queries, spec.num_threads + 1).astype(int)
        threads = [
            threading.Thread(target=worker, args=(t, bounds[t], bounds[t + 1]))
            for t in range(spec.num_threads)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    warmup = int(spec.num_queries * WARMUP_FRACTION)
    timed = latencies[warmup:] if warmup < spec.num_queries else latencies
    p50, p95, p99 = np.percentile(timed, [50, 95, 99])
    mean_ns = float(timed.mean())
    return BenchReport(
        spec=spec,
        mean_ns=mean_ns,
        p50_ns=float(p50),
        p95_ns=float(p95),
        p99_ns=float(p99),
        throughput_qps=1e9 / mean_ns if mean_ns > 0 else float("inf"),
        working_set_bytes=spec.working_set_bytes,
        checksum=float(checksums.sum()),
    )


def sweep_table_sizes(spec: BenchSpec, sizes: list[int]) -> list[BenchReport]:
    """One report per table size; all other spec fields (and the seed) fixed."""
    reports = []
    for rows in sizes:
        sized = BenchSpec(
            table_rows=int(rows),
            row_len=spec.row_len,
            pooling_factor=spec.pooling_factor,
            num_queries=spec.num_queries,
            num_threads=spec.num_threads,
            seed=spec.seed,
            access_distribution=spec.access_distribution,
            include_hashing=spec.include_hashing,
        )
        reports.append(run_bench(sized))
    return reports


def reports_to_csv(reports: list[BenchReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(rep.as_row())
    return buf.getvalue()


def detect_llc_bytes() -> int | None:
    """Last-level cache size from sysfs; None when undeterminable."""
    best = None
    for level in (4, 3, 2):
        path = f"/sys/devices/system/cpu/cpu0/cache/index{level}/size"
        try:
            with open(path) as fh:
                text = fh.read().strip()
        except OSError:
            continue
        if text.endswith("K"):
            best = int(text[:-1]) * 1024
        elif text.endswith("M"):
            best = int(text[:-1]) * 1024 * 1024
        elif text.isdigit():
            best = int(text)
        if best:
            return best
    return best
