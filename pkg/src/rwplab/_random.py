"""Counter-based random substreams.

Every random draw in the package goes through :func:`substream`, keyed by a
user seed plus integer labels (sample index, trial index, ...).  A Philox
generator keyed this way does not depend on how work is split across
workers, which is what keeps parallel runs bit-identical to serial ones.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed, *keys):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *keys)``."""
    words = [int(seed) & _MASK64] + [int(k) & _MASK64 for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))
