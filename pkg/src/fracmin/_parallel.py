"""Thread configuration. Every parallel kernel writes per-row partial sums
that are reduced sequentially, so results do not depend on the thread count."""
import os

import numba


def configure_threads(count=None) -> int:
    if count is None:
        env = os.environ.get("FRACMIN_THREADS")
        count = int(env) if env else numba.config.NUMBA_NUM_THREADS
    count = max(1, min(int(count), numba.config.NUMBA_NUM_THREADS))
    numba.set_num_threads(count)
    return count
