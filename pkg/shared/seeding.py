import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed keys must be non-negative, got {key}")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_seed_sequence(seed: int, *keys) -> np.random.SeedSequence:
    """
    Expand the single top-level seed into an independent stream per
    (subsystem, counter, ...) key path, e.g. derive_seed_sequence(0, "outer", 3).
    The same key path always yields the same stream, whatever ran before it.
    """
    return np.random.SeedSequence([_key_to_int(seed), *(_key_to_int(k) for k in keys)])


def derive_rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def derive_seed(seed: int, *keys) -> int:
    """A plain integer seed for the key path, for APIs that take an int."""
    return int(derive_seed_sequence(seed, *keys).generate_state(1)[0])
