from __future__ import annotations

import hashlib
import math


class BloomFilter:
    """Bit-array Bloom filter sized for ``capacity`` items at ``fp_rate``.

    Index positions use Kirsch-Mitzenmacher double hashing over one
    blake2b digest, so membership answers are deterministic across runs.
    """

    def __init__(self, capacity: int = 1024, fp_rate: float = 0.01):
        if capacity < 1 or not 0 < fp_rate < 1:
            raise ValueError("capacity must be >= 1 and fp_rate in (0, 1)")
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.size = max(8, math.ceil(-capacity * math.log(fp_rate) / math.log(2) ** 2))
        self.hash_count = max(1, round(self.size / capacity * math.log(2)))
        self.bits = bytearray((self.size + 7) // 8)
        self.count = 0

    def _indexes(self, item: str):
        d = hashlib.blake2b(item.encode("utf-8"), digest_size=16).digest()
        h1 = int.from_bytes(d[:8], "big")
        h2 = int.from_bytes(d[8:], "big") | 1
        for i in range(self.hash_count):
            yield (h1 + i * h2) % self.size

    def add(self, item: str) -> None:
        for idx in self._indexes(item):
            self.bits[idx >> 3] |= 1 << (idx & 7)
        self.count += 1

    def __contains__(self, item: str) -> bool:
        return all(self.bits[idx >> 3] & (1 << (idx & 7)) for idx in self._indexes(item))

    def __len__(self) -> int:
        return self.count

    def expected_fp_rate(self) -> float:
        return (1 - math.exp(-self.hash_count * self.count / self.size)) ** self.hash_count

    def clear(self) -> None:
        self.bits = bytearray(len(self.bits))
        self.count = 0
