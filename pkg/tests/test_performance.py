import logging
import threading

import pytest

from hiersg.performance import ParallelMap, PerformanceMetrics, timed


class TestTimed:
    def test_logs_success(self, caplog):
        @timed('double')
        def double(x):
            return 2 * x

        with caplog.at_level(logging.INFO, logger='hiersg.performance'):
            assert double(4) == 8
        assert len(caplog.records) == 1
        message = caplog.records[0].getMessage()
        assert message.startswith('[PERF] double: ')
        assert message.endswith('ms (OK)')

    def test_logs_failure_and_reraises(self, caplog):
        @timed()
        def broken():
            raise KeyError('x')

        with caplog.at_level(logging.INFO, logger='hiersg.performance'):
            with pytest.raises(KeyError):
                broken()
        assert caplog.records[0].getMessage().startswith('[PERF] broken: ')
        assert caplog.records[0].getMessage().endswith('(FAIL)')

    def test_metrics_fields(self):
        metrics = PerformanceMetrics(operation='op', duration_ms=1.5, success=True)
        assert metrics.timestamp == ""


class TestParallelMap:
    @pytest.mark.parametrize('workers', [1, 4])
    def test_keeps_input_order(self, workers):
        assert ParallelMap(workers).map(lambda x: x * x, range(20)) == [x * x for x in range(20)]

    def test_progress_callback(self):
        seen = []
        ParallelMap(3).map(str, 'abcd', lambda done, total: seen.append((done, total)))
        assert seen == [(1, 4), (2, 4), (3, 4), (4, 4)]

    def test_single_worker_runs_inline(self):
        threads = ParallelMap(1).map(lambda _: threading.get_ident(), range(3))
        assert set(threads) == {threading.get_ident()}

    def test_exception_propagates(self):
        def fail_on_three(x):
            if x == 3:
                raise ValueError(x)
            return x

        with pytest.raises(ValueError):
            ParallelMap(2).map(fail_on_three, range(6))

    def test_rejects_zero_workers(self):
        with pytest.raises(ValueError):
            ParallelMap(0)
