"""The 4x4-bit marker dictionary.

Sixteen codes taken from one coset of the first-order Reed-Muller code
RM(1, 4): any two codes differ in at least 8 bits, and every 90/180/270
degree rotation of a code stays at least 4 bits away from all codes
(itself included), so exact-match decoding is unambiguous in id and
orientation.

Bit ``k`` (MSB first) is cell ``(row=k // 4, col=k % 4)`` in canonical
orientation; 1 is a white cell.
"""

import numpy as np

MARKER_CODES = (
    0x00FC, 0x0F0C, 0x0FF3, 0x3330, 0x33CF, 0x3C3F, 0x3CC0, 0x5556,
    0x55A9, 0x5A59, 0x5AA6, 0x6665, 0x669A, 0x696A, 0x6995, 0x966A,
)  # fmt: skip

MARKER_BITS = 4
MARKER_CELLS = MARKER_BITS + 2  # black border on each side


def code_bits(code: int) -> np.ndarray:
    """4x4 bit array (1 = white) for an integer code."""
    return np.array([(code >> (15 - k)) & 1 for k in range(16)], dtype=np.uint8).reshape(4, 4)


def bits_code(bits) -> int:
    flat = np.asarray(bits, dtype=np.int64).ravel()
    return int(sum(int(b) << (15 - k) for k, b in enumerate(flat)))


def marker_pattern(marker_id: int) -> np.ndarray:
    """6x6 cell pattern including the black border, 1 = white."""
    pat = np.zeros((MARKER_CELLS, MARKER_CELLS), dtype=np.uint8)
    pat[1:-1, 1:-1] = code_bits(MARKER_CODES[marker_id])
    return pat


def match_code(bits) -> tuple[int, int] | None:
    """Exact dictionary lookup under the four rotations.

    Returns ``(marker_id, k)`` where rotating the observed bits clockwise by
    ``k`` quarter turns gives the canonical pattern, or ``None``.
    """
    bits = np.asarray(bits)
    for k in range(4):
        code = bits_code(np.rot90(bits, -k))
        if code in MARKER_CODES:
            return MARKER_CODES.index(code), k
    return None
