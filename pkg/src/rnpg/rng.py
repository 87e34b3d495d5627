"""Seeding contract shared by every entry point.

Macro-replication ``r`` of a run with ``base_seed`` uses
``Generator(PCG64(SeedSequence(base_seed + r)))`` and nothing else, so a rep's
output does not depend on how many reps run or in which order.
"""
import numpy as np

RNG_CONTRACT = "numpy-PCG64/SeedSequence(base_seed+rep)/v1"


def rep_generator(base_seed: int, rep: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(base_seed) + int(rep))))
