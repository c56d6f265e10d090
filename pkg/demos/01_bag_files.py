"""Writing and reading `.da3d` slice-embedding files.

A bag is one volume's N x d float32 matrix of per-slice embeddings.  The
file layout is 16 header bytes (magic, version, d, N, all little-endian)
followed by the row-major float32 payload, so a bag with N=3, d=384 is
exactly 16 + 3*384*4 = 4624 bytes.  Run this script from anywhere.
"""

import io
import tempfile
from pathlib import Path

import numpy as np

from da3d import (
    BadMagicError,
    SliceBag,
    TruncatedFileError,
    read_bag,
    read_bag_file,
    write_bag,
    write_bag_file,
)

work_dir = Path(tempfile.mkdtemp(prefix="da3d-demo-"))

# ----------------------------------------------------------------------
# Round-trip: the matrix comes back bit for bit.
# ----------------------------------------------------------------------
rng = np.random.default_rng(0)
matrix = rng.standard_normal((12, 384)).astype(np.float32)
bag = SliceBag(subject_id="demo-0", label=0, slices=matrix)

path = work_dir / "demo-0.da3d"
written = write_bag_file(bag, path)
print(f"wrote {written} bytes (expected {16 + 12 * 384 * 4})")

loaded = read_bag_file(path)
print("bit-exact round trip:", loaded.tobytes() == matrix.tobytes())

# ----------------------------------------------------------------------
# The header is fixed and trivially parseable in any language.
# ----------------------------------------------------------------------
raw = path.read_bytes()
print("magic:", raw[:4], "version:", int.from_bytes(raw[4:8], "little"))
print("d:", int.from_bytes(raw[8:12], "little"),
      "N:", int.from_bytes(raw[12:16], "little"))

# ----------------------------------------------------------------------
# Corruption is rejected with a distinct error per category.
# ----------------------------------------------------------------------
try:
    read_bag(io.BytesIO(b"DA3E" + raw[4:]))
except BadMagicError as err:
    print("bad magic ->", err)

try:
    read_bag(io.BytesIO(raw[: len(raw) // 2]))
except TruncatedFileError as err:
    print("truncation ->", err)

# Non-finite rows never reach disk; the writer names the offender.
broken = matrix.copy()
broken[3, 0] = np.nan
try:
    write_bag(SliceBag("demo-1", 0, broken), io.BytesIO())
except ValueError as err:
    print("writer rejects ->", err)
