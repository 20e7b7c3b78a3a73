import queue
import threading
from datetime import datetime


class SeedWorker(threading.Thread):
    """Drains (key, job) pairs from a shared queue, recording each result or the
    exception the job raised. Clear `running` to stop after the current job."""

    def __init__(self, name, jobs, results, lock, verbose=False):
        super().__init__(name=name, daemon=True)
        self.jobs = jobs
        self.results = results
        self.lock = lock
        self.verbose = verbose
        self.running = True

    def run(self):
        if self.verbose:
            print(f"[{datetime.now()}] Starting {self.name}...")
        while self.running:
            try:
                key, job = self.jobs.get_nowait()
            except queue.Empty:
                break
            try:
                outcome = (True, job())
            except Exception as e:
                print(f"Error in {self.name} job {key}: {e}")
                outcome = (False, e)
            with self.lock:
                self.results[key] = outcome
            self.jobs.task_done()


def run_jobs(jobs, n_workers=1, verbose=False):
    """Runs every (key, callable) pair and returns {key: result} in key order.

    The first failing job (by key order) re-raises its exception once all workers
    are done, so a failure never depends on thread scheduling.
    """
    jobs = list(jobs)
    results = {}
    if n_workers <= 1:
        for key, job in jobs:
            results[key] = (True, job())
    else:
        pending = queue.Queue()
        for item in jobs:
            pending.put(item)
        lock = threading.Lock()
        workers = [SeedWorker(f"worker-{i}", pending, results, lock, verbose) for i in range(min(n_workers, len(jobs)))]
        for w in workers:
            w.start()
        for w in workers:
            w.join()

    ordered = {}
    for key in sorted(results):
        ok, value = results[key]
        if not ok:
            raise value
        ordered[key] = value
    return ordered
