from __future__ import annotations

import logging
import queue
import threading
from collections.abc import Callable, Hashable, Sequence
from typing import Any

logger = logging.getLogger(__name__)


def run_parallel(
    jobs: Sequence[tuple[Hashable, Callable[[], Any]]],
    threads: int = 1,
    on_message: Callable[[tuple], None] | None = None,
) -> list[Any]:
    """Run independent jobs on worker threads; results come back in job order.

    Workers never touch shared state. They push ("started", key),
    ("done", key, result) or ("error", key, exc) onto a queue that the
    calling thread drains, so progress reporting and error handling stay on
    the caller's side. The first error is re-raised after all workers stop.
    """
    n_workers = max(1, min(int(threads), len(jobs)))
    if n_workers == 1:
        results = []
        for key, fn in jobs:
            if on_message:
                on_message(("started", key))
            result = fn()
            if on_message:
                on_message(("done", key, result))
            results.append(result)
        return results

    todo: queue.Queue = queue.Queue()
    for index, job in enumerate(jobs):
        todo.put((index, job))
    messages: queue.Queue = queue.Queue()
    stop = threading.Event()

    def _worker() -> None:
        while not stop.is_set():
            try:
                index, (key, fn) = todo.get_nowait()
            except queue.Empty:
                return
            messages.put(("started", key))
            try:
                messages.put(("done", key, index, fn()))
            except Exception as exc:
                messages.put(("error", key, index, exc))
                stop.set()

    workers = [
        threading.Thread(target=_worker, name=f"lcflow-worker-{i}", daemon=True)
        for i in range(n_workers)
    ]
    for w in workers:
        w.start()

    results: list[Any] = [None] * len(jobs)
    first_error: BaseException | None = None
    pending = len(jobs)
    while (pending and any(w.is_alive() for w in workers)) or not messages.empty():
        try:
            msg = messages.get(timeout=0.05)
        except queue.Empty:
            continue
        tag = msg[0]
        if tag == "started":
            if on_message:
                on_message(msg)
            continue
        pending -= 1
        _, key, index, payload = msg
        if tag == "done":
            results[index] = payload
            if on_message:
                on_message(("done", key, payload))
        else:
            logger.debug("Job %s failed", key, exc_info=payload)
            if on_message:
                on_message(("error", key, payload))
            if first_error is None:
                first_error = payload
    for w in workers:
        w.join()
    if first_error is not None:
        raise first_error
    if pending:
        raise RuntimeError(f"{pending} jobs did not complete")
    return results
