"""
Named random substreams derived from a single root seed.

Each component draws from its own stream (init, shuffle, attack, data, eval),
so switching one component on or off never shifts the numbers another sees.
Streams are keyed by extra integers (epoch, example id) which keeps
per-example noise identical whether a batch is processed serially or in parallel.
"""
import numpy as np

STREAMS = {
    'init': 0,
    'shuffle': 1,
    'attack': 2,
    'data': 3,
    'eval': 4,
    'histogram': 5,
}


def substream(root_seed: int, name: str, *keys: int) -> np.random.Generator:
    """Returns a Generator for the named stream and keys."""
    if name not in STREAMS:
        raise KeyError(f"Unknown random stream '{name}'. Known streams: {sorted(STREAMS)}")
    entropy = [int(root_seed), STREAMS[name]] + [int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def per_example_uniform(root_seed, name, epoch, ids, low, high, width):
    """
    Draws one row of `width` uniform values per example id.
    Row i depends only on (root_seed, name, epoch, ids[i]).
    """
    rows = np.empty((len(ids), width), dtype=np.float64)
    for row, example_id in enumerate(ids):
        rows[row] = substream(root_seed, name, epoch, example_id).uniform(low, high, width)
    return rows

