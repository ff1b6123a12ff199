#!/usr/bin/env python3
"""
Performance Utils - Shared Utility
Wall time and memory of the fitting pipeline, and worker thread resolution
"""
import functools
import logging
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import psutil

THREADS_ENV_VAR = "LPCRASH_THREADS"


def resolve_thread_count(requested: Optional[int] = None) -> int:
    """Flag value, else LPCRASH_THREADS, else physical core count"""
    if requested is not None:
        return max(1, int(requested))

    env_value = os.environ.get(THREADS_ENV_VAR)
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logging.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={env_value!r}")

    return psutil.cpu_count(logical=False) or os.cpu_count() or 1


def rss_mb() -> float:
    try:
        return psutil.Process().memory_info().rss / (1024**2)
    except psutil.Error:
        return 0.0


@dataclass
class CallStats:
    calls: int = 0
    failures: int = 0
    seconds: float = 0.0
    slowest: float = 0.0
    rss_delta_mb: float = 0.0

    def add(self, seconds: float, rss_delta: float, failed: bool):
        self.calls += 1
        self.failures += int(failed)
        self.seconds += seconds
        self.slowest = max(self.slowest, seconds)
        self.rss_delta_mb += rss_delta


class PerformanceProfiler:
    """Accumulates CallStats per profiled pipeline stage (fits, inference, diagnostics)"""

    def __init__(self):
        self.stats: Dict[str, CallStats] = {}
        self._lock = threading.Lock()

    def profile(self, func_name=None):
        def decorator(func):
            name = func_name or f"{func.__module__}.{func.__name__}"

            @functools.wraps(func)
            def wrapper(*args, **kwargs):
                start, start_rss = time.perf_counter(), rss_mb()
                failed = True
                try:
                    result = func(*args, **kwargs)
                    failed = False
                    return result
                finally:
                    elapsed = time.perf_counter() - start
                    delta = rss_mb() - start_rss
                    with self._lock:
                        self.stats.setdefault(name, CallStats()).add(elapsed, delta, failed)
                    logging.debug(f"{name} took {elapsed:.3f}s (RSS {delta:+.1f}MB)")

            return wrapper
        return decorator

    def get_profile_report(self, sort_by='total_time_seconds') -> List[Dict[str, Any]]:
        """One row per stage, slowest first"""
        with self._lock:
            report = [{
                'function': name,
                'call_count': s.calls,
                'error_count': s.failures,
                'total_time_seconds': s.seconds,
                'average_time_seconds': s.seconds / s.calls,
                'max_time_seconds': s.slowest,
                'total_memory_delta_mb': s.rss_delta_mb
            } for name, s in self.stats.items()]
        report.sort(key=lambda row: row.get(sort_by, 0), reverse=True)
        return report


class Stopwatch:
    """with Stopwatch() as watch: ...; watch.elapsed is set on exit"""

    def __enter__(self):
        self.start = time.perf_counter()
        self.elapsed = 0.0
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        return False


# Global instance
performance_profiler = PerformanceProfiler()


def profile_function(func_name=None):
    return performance_profiler.profile(func_name)
