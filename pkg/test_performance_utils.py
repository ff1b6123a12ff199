#!/usr/bin/env python3
"""
Test Performance Utils
Thread resolution, stage profiling and the stopwatch
"""
import pytest

from utils.performance_utils import THREADS_ENV_VAR, PerformanceProfiler, Stopwatch, resolve_thread_count


def test_thread_count_precedence(monkeypatch):
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    assert resolve_thread_count(2) == 2
    assert resolve_thread_count(0) == 1
    assert resolve_thread_count() == 3
    monkeypatch.setenv(THREADS_ENV_VAR, "many")
    assert resolve_thread_count() >= 1
    monkeypatch.delenv(THREADS_ENV_VAR)
    assert resolve_thread_count() >= 1


def test_profiler_counts_calls_and_failures():
    profiler = PerformanceProfiler()

    @profiler.profile("stage.ok")
    def ok(x):
        return x * 2

    @profiler.profile()
    def broken():
        raise ValueError("boom")

    assert ok(2) == 4
    assert ok(3) == 6
    with pytest.raises(ValueError):
        broken()

    rows = {row['function']: row for row in profiler.get_profile_report()}
    assert rows['stage.ok']['call_count'] == 2
    assert rows['stage.ok']['error_count'] == 0
    [broken_name] = [name for name in rows if name.endswith('broken')]
    assert rows[broken_name]['error_count'] == 1
    assert all(row['total_time_seconds'] >= row['max_time_seconds'] >= 0 for row in rows.values())


def test_stopwatch():
    with Stopwatch() as watch:
        sum(range(1000))
    assert watch.elapsed >= 0.0
