"""Per-member random streams.

Every ensemble member owns a PCG64 generator seeded from ``(seed, member)``, so a member's
draws do not depend on how many other members run alongside it.
"""

from __future__ import annotations

import numpy as np

from .errors import StructuralError


def member_generator(seed: int, member: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(member),))))


class MemberRNG:
    """A stack of member generators that draws batched arrays with leading axis M."""

    def __init__(self, seed: int, members: int, offset: int = 0):
        self.seed = int(seed)
        self.members = int(members)
        self.offset = int(offset)
        self.generators = [member_generator(seed, offset + m) for m in range(members)]

    def __len__(self):
        return self.members

    def standard_normal(self, size) -> np.ndarray:
        size = tuple(np.atleast_1d(size))
        if size[0] != self.members:
            raise StructuralError(f"leading axis must equal the member count {self.members}, got {size}")
        return np.stack([g.standard_normal(size[1:]) for g in self.generators])

    def subset(self, index: slice) -> "MemberRNG":
        """View onto a contiguous block of members (shares generator state)."""
        out = MemberRNG.__new__(MemberRNG)
        out.seed = self.seed
        out.generators = self.generators[index]
        out.members = len(out.generators)
        out.offset = self.offset + range(self.members)[index].start
        return out
