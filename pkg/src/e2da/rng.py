"""Named random substreams derived from one master seed.

Every source of randomness in a run (per-user workloads, channel gains,
weight init, exploration, minibatch sampling, ...) pulls from its own
generator so that adding draws to one stream never perturbs another.
"""

import hashlib

import numpy as np


def _label_entropy(label) -> int:
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def substream(master_seed: int, *labels) -> np.random.Generator:
    """Generator whose stream is a pure function of (master_seed, labels)."""
    entropy = [int(master_seed)] + [_label_entropy(lab) for lab in labels]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
