"""Counter-based random streams keyed by (master seed, replica index, role).

Every replica owns its streams, so results never depend on how replicas are
scheduled across workers.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy-Philox4x64-10/SeedSequence(entropy=master_seed, spawn_key=(index, role_code))"

_FIXED_ROLES = {"fast": 0, "slow": 1, "bootstrap": 2}
_RESTART_BASE = 16


def role_code(role: str) -> int:
    """Integer code of a role name: ``fast``, ``slow``, ``bootstrap`` or ``restart_<n>``."""
    if role in _FIXED_ROLES:
        return _FIXED_ROLES[role]
    if role.startswith("restart_"):
        n = int(role[len("restart_"):])
        if n < 0:
            raise ValueError("restart index must be nonnegative")
        return _RESTART_BASE + n
    raise ValueError(f"unknown stream role {role!r}")


def rng_stream(master_seed: int, replica_index: int, role: str) -> np.random.Generator:
    """Independent, reproducible generator for one (seed, index, role) triple."""
    if master_seed < 0 or replica_index < 0:
        raise ValueError("seed and replica index must be nonnegative")
    seq = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(replica_index), role_code(role)))
    return np.random.Generator(np.random.Philox(seq))
