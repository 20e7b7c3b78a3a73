import threading

import pytest

from lib.worker import run_jobs


def test_results_come_back_in_key_order():
    jobs = [(k, (lambda k=k: k * k)) for k in (3, 1, 2, 0)]
    assert list(run_jobs(jobs, n_workers=1).items()) == [(0, 0), (1, 1), (2, 4), (3, 9)]
    assert list(run_jobs(jobs, n_workers=3).items()) == [(0, 0), (1, 1), (2, 4), (3, 9)]


def test_jobs_run_on_worker_threads():
    names = []
    lock = threading.Lock()

    def job():
        with lock:
            names.append(threading.current_thread().name)
        return True

    run_jobs([(i, job) for i in range(6)], n_workers=2)
    assert len(names) == 6
    assert all(name.startswith('worker-') for name in names)


def test_first_failure_by_key_is_raised():
    def fail(message):
        raise ValueError(message)

    jobs = [(2, lambda: fail('two')), (0, lambda: 'ok'), (1, lambda: fail('one'))]
    with pytest.raises(ValueError, match='one'):
        run_jobs(jobs, n_workers=3)


def test_no_jobs():
    assert run_jobs([], n_workers=4) == {}
