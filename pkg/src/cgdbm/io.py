"""Artifact files: model snapshots, matrix containers, PGM images, CSVs.

Both binary formats share one framing: an ascii magic line, ascii
``key=value`` header lines closed by one blank line, a little-endian
float64 payload, and a trailing 8-byte little-endian CRC-64 of the payload
bytes.  Model snapshots use magic ``CGDBM1`` and carry the parameter
arrays in a fixed order; everything else (datasets, frames, whiteners)
travels in ``CGMAT1`` matrix containers with free-form metadata keys.

Writers emit headers in sorted key order and never include timestamps, so
rewriting the same content produces byte-identical files.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .model import ModelParams, Offsets

MODEL_MAGIC = b"CGDBM1\n"
MATRIX_MAGIC = b"CGMAT1\n"

_CRC64_POLY = 0xC96C5795D7870F42  # reflected ECMA polynomial
_CRC64_INIT = 0xFFFFFFFFFFFFFFFF


def _build_crc_tables() -> list[list[int]]:
    t0 = []
    for b in range(256):
        crc = b
        for _ in range(8):
            crc = (crc >> 1) ^ (_CRC64_POLY if crc & 1 else 0)
        t0.append(crc)
    tables = [t0]
    for i in range(1, 8):
        prev = tables[i - 1]
        tables.append([t0[v & 0xFF] ^ (v >> 8) for v in prev])
    return tables


_CRC_TABLES = _build_crc_tables()


def crc64(data: bytes) -> int:
    """CRC-64 of a byte string (reflected ECMA polynomial), eight bytes
    at a time."""
    t0, t1, t2, t3, t4, t5, t6, t7 = _CRC_TABLES
    crc = _CRC64_INIT
    n8 = len(data) // 8
    if n8:
        words = np.frombuffer(data, dtype="<u8", count=n8)
        for w in words.tolist():
            v = crc ^ w
            crc = (t7[v & 0xFF] ^ t6[(v >> 8) & 0xFF]
                   ^ t5[(v >> 16) & 0xFF] ^ t4[(v >> 24) & 0xFF]
                   ^ t3[(v >> 32) & 0xFF] ^ t2[(v >> 40) & 0xFF]
                   ^ t1[(v >> 48) & 0xFF] ^ t0[(v >> 56) & 0xFF])
    for b in data[n8 * 8:]:
        crc = t0[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ _CRC64_INIT


def _write_framed(path, magic: bytes, header: dict[str, str],
                  payload: bytes) -> None:
    lines = b"".join(f"{k}={header[k]}\n".encode("ascii") for k in sorted(header))
    check = crc64(payload).to_bytes(8, "little")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(lines)
        fh.write(b"\n")
        fh.write(payload)
        fh.write(check)


def _read_framed(path, magic: bytes) -> tuple[dict[str, str], bytes]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if not blob.startswith(magic):
        raise FormatError(f"{path}: bad magic, expected {magic!r}")
    pos = len(magic)
    header: dict[str, str] = {}
    while True:
        end = blob.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: header never terminated")
        line = blob[pos:pos + (end - pos)]
        pos = end + 1
        if line == b"":
            break
        if b"=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        k, v = line.split(b"=", 1)
        header[k.decode("ascii")] = v.decode("ascii")
    body = blob[pos:]
    if len(body) < 8:
        raise FormatError(f"{path}: truncated, no checksum")
    payload, check = body[:-8], body[-8:]
    if crc64(payload) != int.from_bytes(check, "little"):
        raise FormatError(f"{path}: checksum mismatch")
    return header, payload


def _header_int(header: dict[str, str], key: str, path) -> int:
    try:
        return int(header[key])
    except KeyError:
        raise FormatError(f"{path}: missing header key {key!r}") from None
    except ValueError:
        raise FormatError(f"{path}: header key {key!r} is not an integer") from None


def save_model(path, p: ModelParams, c: Offsets) -> None:
    L, M, N = p.dims
    header = {"L": str(L), "M": str(M), "N": str(N)}
    parts = [p.W, p.U, p.b_y, p.b_z, p.sigma2, c.c_x, c.c_y, c.c_z]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in parts)
    _write_framed(path, MODEL_MAGIC, header, payload)


def load_model(path) -> tuple[ModelParams, Offsets]:
    header, payload = _read_framed(path, MODEL_MAGIC)
    L = _header_int(header, "L", path)
    M = _header_int(header, "M", path)
    N = _header_int(header, "N", path)
    counts = [L * M, M * N, M, N, L, L, M, N]
    total = sum(counts)
    if len(payload) != total * 8:
        raise FormatError(f"{path}: dims ({L},{M},{N}) imply {total * 8} payload "
                          f"bytes, found {len(payload)}")
    flat = np.frombuffer(payload, dtype="<f8")
    out = []
    pos = 0
    for n in counts:
        out.append(flat[pos:pos + n].copy())
        pos += n
    W, U, b_y, b_z, sigma2, c_x, c_y, c_z = out
    p = ModelParams(W=W.reshape(L, M), U=U.reshape(M, N), b_y=b_y, b_z=b_z,
                    sigma2=sigma2)
    c = Offsets(c_x=c_x, c_y=c_y, c_z=c_z)
    return p, c


def save_matrix(path, array, meta: dict[str, str] | None = None) -> None:
    a = np.atleast_2d(np.asarray(array, dtype=np.float64))
    header = dict(meta or {})
    for key in ("rows", "cols"):
        if key in header:
            raise ValueError(f"meta must not override {key!r}")
    header["rows"] = str(a.shape[0])
    header["cols"] = str(a.shape[1])
    _write_framed(path, MATRIX_MAGIC, header,
                  np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_matrix(path) -> tuple[np.ndarray, dict[str, str]]:
    header, payload = _read_framed(path, MATRIX_MAGIC)
    rows = _header_int(header, "rows", path)
    cols = _header_int(header, "cols", path)
    if len(payload) != rows * cols * 8:
        raise FormatError(f"{path}: shape ({rows},{cols}) implies "
                          f"{rows * cols * 8} payload bytes, found {len(payload)}")
    a = np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy()
    meta = {k: v for k, v in header.items() if k not in ("rows", "cols")}
    return a, meta


# --- PGM images -----------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """P2 or P5 grayscale image as floats in [0, 1].  16-bit P5 files
    store the most significant byte first."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] not in (b"P2", b"P5"):
        raise FormatError(f"{path}: not a P2/P5 PGM file")
    binary = blob[:2] == b"P5"

    tokens = []
    pos = 2
    while len(tokens) < 3:
        if pos >= len(blob):
            raise FormatError(f"{path}: incomplete PGM header")
        ch = blob[pos:pos + 1]
        if ch == b"#":
            pos = blob.find(b"\n", pos)
            if pos < 0:
                raise FormatError(f"{path}: unterminated comment")
            pos += 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(blob) and not blob[end:end + 1].isspace():
                end += 1
            tokens.append(blob[pos:end])
            pos = end
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError(f"{path}: non-numeric PGM header") from None
    if not (0 < maxval < 65536):
        raise FormatError(f"{path}: maxval {maxval} out of range")

    if binary:
        pos += 1  # single whitespace byte after maxval
        dtype = ">u2" if maxval > 255 else "u1"
        count = width * height
        need = count * (2 if maxval > 255 else 1)
        if len(blob) - pos < need:
            raise FormatError(f"{path}: truncated pixel data")
        data = np.frombuffer(blob, dtype=dtype, count=count, offset=pos)
    else:
        try:
            data = np.array(blob[pos:].split(), dtype=np.int64)
        except ValueError:
            raise FormatError(f"{path}: non-numeric pixel data") from None
        if data.size != width * height:
            raise FormatError(f"{path}: expected {width * height} pixels, "
                              f"found {data.size}")
    if data.size and int(data.max()) > maxval:
        raise FormatError(f"{path}: pixel value exceeds maxval")
    return data.reshape(height, width).astype(np.float64) / maxval


def write_pgm(path, image, maxval: int = 255) -> None:
    """Binary (P5) PGM from floats in [0, 1]; values are clipped."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError("image must be 2-d")
    if not (0 < maxval < 65536):
        raise ValueError("maxval out of range")
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(q.astype(dtype).tobytes())


# --- CSV ------------------------------------------------------------------

def format_float(x: float) -> str:
    """17 significant digits: enough to round-trip any float64."""
    return format(float(x), ".17g")


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [cell if isinstance(cell, str) else format_float(cell)
                     for cell in row]
            fh.write(",".join(cells) + "\n")
