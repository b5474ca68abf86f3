"""Order-independent seed derivation.

Every random stream in the pipeline is keyed by a tuple such as
``(global_seed, "train", patient_id)`` so that results do not depend on the
order (or thread) in which patients, folds or draws are processed.
"""
import hashlib

_MASK = (1 << 64) - 1


def mix64(x: int) -> int:
    """splitmix64 finalizer."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def _part_to_int(part) -> int:
    if isinstance(part, bool):
        part = int(part)
    if isinstance(part, int):
        return part & _MASK
    digest = hashlib.blake2b(str(part).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed(*parts) -> int:
    """Fold ``parts`` (ints or strings) into a single 64-bit seed."""
    h = 0
    for part in parts:
        h = mix64(h ^ _part_to_int(part))
    return h
