"""Named seed derivation.

Every random draw in the package comes from a generator keyed by a
top-level seed plus a path of names, e.g. ``derive_seed(7, "data", "train")``.
Keys are hashed, so the result does not depend on call order or on which
worker thread asks for it.
"""

import hashlib

import numpy as np


def derive_seed(seed: int, *names) -> int:
    """Return a 64-bit integer seed for ``seed`` and a path of names."""
    path = "/".join(str(n) for n in names)
    digest = hashlib.blake2b(f"{int(seed)}:{path}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def generator(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=derive_seed(seed, *names)))


class SeedLog:
    """Records every derivation name used by a run, for the manifest."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.names: list[str] = []

    def derive(self, *names) -> int:
        path = "/".join(str(n) for n in names)
        if path not in self.names:
            self.names.append(path)
        return derive_seed(self.seed, *names)
