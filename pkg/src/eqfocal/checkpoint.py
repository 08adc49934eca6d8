"""Versioned plain-text container shared by state and model checkpoints.

Layout::

    <MAGIC> v<version> key=value key=value ...
    <record>
    <record>
    ...

Floats are written with ``repr`` so that reading them back is bit-exact.
"""
import os
import tempfile

from .errors import ParseError


def format_header(magic, version, fields):
    parts = [magic, f"v{version}"]
    parts += [f"{k}={_fmt(v)}" for k, v in fields.items()]
    return " ".join(parts)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_floats(values):
    return " ".join(repr(float(v)) for v in values)


def parse_header(line, magic, version):
    tokens = line.split()
    if not tokens or tokens[0] != magic:
        raise ParseError(f"expected {magic!r} header", line=1, column=1)
    if len(tokens) < 2 or tokens[1] != f"v{version}":
        got = tokens[1] if len(tokens) > 1 else "<missing>"
        raise ParseError(f"unsupported version {got!r}, expected v{version}", line=1,
                         column=len(tokens[0]) + 2)
    fields = {}
    col = len(tokens[0]) + len(tokens[1]) + 3
    for tok in tokens[2:]:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ParseError(f"malformed header field {tok!r}", line=1, column=col)
        fields[key] = (value, col)
        col += len(tok) + 1
    return fields


def header_value(fields, key, kind, line=1):
    if key not in fields:
        raise ParseError(f"header is missing field {key!r}", line=line)
    raw, col = fields[key]
    try:
        return kind(raw)
    except ValueError:
        raise ParseError(f"bad value {raw!r} for header field {key!r}", line=line, column=col) from None


def parse_numbers(line, lineno, kind=float):
    out = []
    col = 1
    for tok in line.split(" "):
        if tok:
            try:
                out.append(kind(tok))
            except ValueError:
                raise ParseError(f"bad number {tok!r}", line=lineno, column=col) from None
        col += len(tok) + 1
    return out


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
