import os
from concurrent.futures import ThreadPoolExecutor


def worker_count():
    """Thread cap from LEAKYWAVE_THREADS (default 1)."""
    raw = os.environ.get("LEAKYWAVE_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        n = 1
    return max(1, n)


def ordered_map(fn, items):
    """map() that may use threads but always returns results in input order."""
    items = list(items)
    n = min(worker_count(), len(items))
    if n <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
