"""Tests for lcflow.utils.pool."""

import threading

import pytest

from lcflow.utils.pool import run_parallel


def _jobs(n):
    return [(f"job{i}", lambda i=i: i * i) for i in range(n)]


class TestRunParallel:
    @pytest.mark.parametrize("threads", [1, 4])
    def test_results_in_job_order(self, threads):
        assert run_parallel(_jobs(9), threads=threads) == [i * i for i in range(9)]

    def test_empty(self):
        assert run_parallel([], threads=3) == []

    def test_messages_from_caller_thread(self):
        caller = threading.get_ident()
        seen = []

        def on_message(msg):
            assert threading.get_ident() == caller
            seen.append(msg[:2])

        run_parallel(_jobs(5), threads=3, on_message=on_message)
        assert sorted(key for tag, key in seen if tag == "done") == [f"job{i}" for i in range(5)]
        assert sum(tag == "started" for tag, _ in seen) == 5

    @pytest.mark.parametrize("threads", [1, 3])
    def test_error_is_reraised(self, threads):
        def boom():
            raise RuntimeError("worker failed")

        jobs = _jobs(2) + [("bad", boom)]
        with pytest.raises(RuntimeError, match="worker failed"):
            run_parallel(jobs, threads=threads)

    def test_error_message_reported(self):
        def boom():
            raise KeyError("missing")

        seen = []
        with pytest.raises(KeyError):
            run_parallel([("bad", boom)] + _jobs(1), threads=2, on_message=seen.append)
        assert any(msg[0] == "error" and msg[1] == "bad" for msg in seen)
