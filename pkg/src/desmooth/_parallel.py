import os
from concurrent.futures import ThreadPoolExecutor


def worker_count() -> int:
    """Worker cap from ``DESMOOTH_THREADS``, else the machine's CPU count."""
    raw = os.environ.get("DESMOOTH_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"DESMOOTH_THREADS must be an integer, got {raw!r}") from None
        return max(n, 1)
    return os.cpu_count() or 1


def parallel_map(fn, items, workers: int | None = None) -> list:
    """Ordered map; results come back in input order whatever the thread count."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
