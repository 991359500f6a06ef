#!/usr/bin/env python3
"""Write the tiny IDX and CIFAR-10 fixtures used by the loader tests.

Pixel bytes follow closed-form patterns so tests can recompute them:
  IDX:   image i, row r, col c -> (97*i + 28*r + c) % 256; labels [3, 7]
  CIFAR: one record, label 6; byte k of the 3072 pixel bytes -> (k * 7) % 251
"""
import struct
import sys
from pathlib import Path

out = Path(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures")
out.mkdir(parents=True, exist_ok=True)

pixels = bytes((97 * i + 28 * r + c) % 256 for i in range(2) for r in range(28) for c in range(28))
(out / "two-images-idx3-ubyte").write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + pixels)
(out / "two-labels-idx1-ubyte").write_bytes(struct.pack(">II", 0x801, 2) + bytes([3, 7]))

record = bytes([6]) + bytes((k * 7) % 251 for k in range(3072))
(out / "one-record-cifar.bin").write_bytes(record)
