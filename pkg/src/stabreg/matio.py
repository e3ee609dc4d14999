"""Plain-text matrix serialization and CSV emission.

Matrix format: first line ``rows cols``, then one row per line with complex
entries as ``a+bi`` tokens separated by spaces.  CSV diagnostics always carry a
header row and are written atomically (temp file + rename) with a fixed float
format so identical inputs produce byte-identical files.
"""

import os
import tempfile

import numpy as np

from .errors import ConfigError

FLOAT_FMT = ".12g"
TOKEN_FMT = ".17g"


def format_complex(z):
    """Render a complex number as an ``a+bi`` token (full precision)."""
    z = complex(z)
    return f"{z.real:{TOKEN_FMT}}{z.imag:+{TOKEN_FMT}}i"


def parse_complex(token):
    """Parse an ``a+bi`` token; plain reals are accepted too."""
    s = token.strip()
    if not s:
        raise ConfigError("empty complex token")
    try:
        if s.endswith("i") or s.endswith("j"):
            return complex(s[:-1].replace(" ", "") + "j")
        return complex(float(s))
    except ValueError as exc:
        raise ConfigError(f"cannot parse complex token {token!r}") from exc


def _atomic_write(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_matrix(path, matrix):
    """Write a 2-D array in the plain-text ``rows cols`` + tokens format."""
    m = np.atleast_2d(np.asarray(matrix))
    if m.ndim != 2:
        raise ConfigError("matrix serialization expects a 2-D array")
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    for row in m:
        lines.append(" ".join(format_complex(z) for z in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_matrix(path):
    """Read a matrix written by :func:`write_matrix`.

    Returns a complex array; callers may take the real part when appropriate.
    """
    with open(path) as fh:
        raw = [line.strip() for line in fh if line.strip()]
    if not raw:
        raise ConfigError(f"{path}: empty matrix file")
    head = raw[0].split()
    if len(head) != 2:
        raise ConfigError(f"{path}: first line must be 'rows cols'")
    try:
        rows, cols = int(head[0]), int(head[1])
    except ValueError as exc:
        raise ConfigError(f"{path}: bad header {raw[0]!r}") from exc
    if len(raw) - 1 != rows:
        raise ConfigError(f"{path}: expected {rows} rows, found {len(raw) - 1}")
    out = np.empty((rows, cols), dtype=complex)
    for i, line in enumerate(raw[1:]):
        toks = line.split()
        if len(toks) != cols:
            raise ConfigError(f"{path}: row {i + 1} has {len(toks)} entries, expected {cols}")
        out[i] = [parse_complex(t) for t in toks]
    return out


def format_value(v):
    """Deterministic CSV cell rendering for str/int/float/complex values."""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (complex, np.complexfloating)):
        return format_complex(v)
    x = float(v)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:{FLOAT_FMT}}"


def write_csv(path, header, rows):
    """Write a CSV with the given header string and iterable of row tuples."""
    lines = [header]
    ncol = len(header.split(","))
    for row in rows:
        if len(row) != ncol:
            raise ConfigError(f"CSV row width {len(row)} != header width {ncol}")
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")


def write_text(path, text):
    """Atomically write a plain text file (manifests, reports)."""
    _atomic_write(path, text)
