"""MSB-first bit packing used by the feedback codecs."""

from dataclasses import dataclass


@dataclass(frozen=True)
class CodewordBits:
    """A fixed-length feedback payload. ``length`` counts bits; ``data``
    holds them MSB-first with zero padding in the final byte."""

    data: bytes
    length: int
    scheme: str  # "TYPE2" or "NEURAL"

    def __post_init__(self):
        if len(self.data) != (self.length + 7) // 8:
            raise ValueError(
                f"payload of {len(self.data)} bytes cannot hold {self.length} bits exactly"
            )


class BitWriter:
    def __init__(self):
        self._bits = []

    def write(self, value: int, width: int) -> None:
        if width < 0 or value < 0 or value >= (1 << width):
            raise ValueError(f"value {value} does not fit in {width} bits")
        for i in range(width - 1, -1, -1):
            self._bits.append((value >> i) & 1)

    def payload(self, scheme: str) -> CodewordBits:
        out = bytearray((len(self._bits) + 7) // 8)
        for i, b in enumerate(self._bits):
            if b:
                out[i // 8] |= 0x80 >> (i % 8)
        return CodewordBits(data=bytes(out), length=len(self._bits), scheme=scheme)

    def __len__(self) -> int:
        return len(self._bits)


class BitReader:
    def __init__(self, codeword: CodewordBits):
        self._data = codeword.data
        self._length = codeword.length
        self._pos = 0

    def read(self, width: int) -> int:
        if self._pos + width > self._length:
            raise ValueError("bitstream exhausted")
        value = 0
        for _ in range(width):
            byte = self._data[self._pos // 8]
            bit = (byte >> (7 - self._pos % 8)) & 1
            value = (value << 1) | bit
            self._pos += 1
        return value

    @property
    def exhausted(self) -> bool:
        return self._pos == self._length
