"""Compression-length arithmetic shared by the explicit and implicit compressors."""

import math


def compressed_length(n: int, gamma: float) -> int:
    """max(1, ceil(gamma * n)), with float noise such as 0.7 * 10 = 7.000000000000001 rounded away."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"compression ratio must lie in (0, 1], got {gamma}")
    return max(1, math.ceil(round(gamma * n, 9)))
