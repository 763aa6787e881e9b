"""SAS Transport (XPORT v5) reader.

The format is a sequence of 80-byte records: a library header, per-member
headers, packed 140-byte variable descriptors (NAMESTR), then observation
rows packed back to back across records. Numeric values are 8-byte IBM
hexadecimal floats (sign bit, 7-bit excess-64 base-16 exponent, 56-bit
mantissa); a first byte of '.', 'A'-'Z', or '_' over seven zero bytes is a
typed missing value. Values stored shorter than 8 bytes are zero-padded
before conversion.

Only v5 is handled; v8/v9 transports (long names) are rejected up front.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from typing import Optional, Union

from .pipeline import VariableTable

log = logging.getLogger(__name__)

RECORD_LEN = 80
NAMESTR_LEN = 140


class BadMagicError(ValueError):
    """Header record does not carry the expected magic at the given offset."""


class TruncatedRecordError(ValueError):
    """Input ended before a complete record or observation."""


class MalformedNamestrError(ValueError):
    """Variable descriptor fails to parse at the given offset."""


class MissingIdVariableError(KeyError):
    """Requested subject-id variable not in the member."""


def _magic(kind: bytes) -> bytes:
    assert len(kind) == 8
    return b"HEADER RECORD*******" + kind + b"HEADER RECORD!!!!!!!"


LIBRARY_MAGIC = _magic(b"LIBRARY ")
MEMBER_MAGIC = _magic(b"MEMBER  ")
DSCRPTR_MAGIC = _magic(b"DSCRPTR ")
NAMESTR_MAGIC = _magic(b"NAMESTR ")
OBS_MAGIC = _magic(b"OBS     ")
V8_MARKERS = (b"LIBV8   ", b"MEMBV8  ", b"DSCPTV8 ", b"NAMSTV8 ", b"OBSV8   ")


@dataclass(frozen=True)
class MissingValue:
    """Typed numeric missing: '.' or one of the 27 special codes .A-.Z, ._"""

    tag: str

    def __str__(self):
        return f".{self.tag}" if self.tag != "." else "."


@dataclass
class NamestrEntry:
    name: str
    type: str  # "numeric" | "character"
    length: int
    position: int
    varnum: int
    label: str = ""
    format: str = ""
    format_length: int = 0
    format_decimals: int = 0
    justify: int = 0
    informat: str = ""
    informat_length: int = 0
    informat_decimals: int = 0


@dataclass
class XptMember:
    name: str
    label: str
    dstype: str
    sas_version: str
    os_name: str
    created: str
    modified: str
    variables: list
    observations: list  # rows of typed values: float | str | MissingValue


@dataclass
class XptDocument:
    sas_version: str
    os_name: str
    created: str
    modified: str
    members: list = field(default_factory=list)


def ibm_to_ieee(raw: bytes) -> Union[float, MissingValue]:
    """Decode one IBM hexadecimal float; total over all 8-byte inputs.

    value = (-1)^sign * mantissa * 16^(exponent-64) / 16^14
          = (-1)^sign * mantissa * 2^(4*exponent - 312)
    """
    if len(raw) != 8:
        raise ValueError(f"expected 8 bytes, got {len(raw)}")
    first = raw[0]
    if raw[1:] == b"\x00" * 7:
        if first == 0x2E:
            return MissingValue(".")
        if 0x41 <= first <= 0x5A:
            return MissingValue(chr(first))
        if first == 0x5F:
            return MissingValue("_")
    mantissa = int.from_bytes(raw[1:], "big")
    if mantissa == 0:
        return 0.0  # zero mantissa is zero whatever the exponent says
    sign = -1.0 if first & 0x80 else 1.0
    exponent = first & 0x7F
    return sign * math.ldexp(float(mantissa), 4 * exponent - 312)


def decode_numeric(raw: bytes) -> Union[float, MissingValue]:
    """Field values may be stored in 2..8 bytes; short ones are zero-padded."""
    if not 2 <= len(raw) <= 8:
        raise ValueError(f"numeric field must be 2..8 bytes, got {len(raw)}")
    return ibm_to_ieee(raw.ljust(8, b"\x00"))


_NAMESTR_STRUCT = struct.Struct(">hhhh8s40s8shhh2s8shhl52s")


def _parse_namestr(raw: bytes, offset: int) -> NamestrEntry:
    if len(raw) < NAMESTR_LEN:
        raise MalformedNamestrError(f"descriptor truncated at byte {offset}")
    (
        ntype,
        _nhfun,
        nlng,
        nvar0,
        nname,
        nlabel,
        nform,
        nfl,
        nfd,
        nfj,
        _nfill,
        niform,
        nifl,
        nifd,
        npos,
        _rest,
    ) = _NAMESTR_STRUCT.unpack(raw[:NAMESTR_LEN])
    if ntype not in (1, 2):
        raise MalformedNamestrError(f"variable type {ntype} at byte {offset} is not 1 or 2")
    if nlng <= 0:
        raise MalformedNamestrError(f"non-positive field length at byte {offset}")
    if ntype == 1 and not 2 <= nlng <= 8:
        raise MalformedNamestrError(f"numeric length {nlng} at byte {offset} outside 2..8")
    return NamestrEntry(
        name=nname.decode("ascii", "replace").rstrip(),
        type="numeric" if ntype == 1 else "character",
        length=nlng,
        position=npos,
        varnum=nvar0,
        label=nlabel.decode("ascii", "replace").rstrip(),
        format=nform.decode("ascii", "replace").rstrip(),
        format_length=nfl,
        format_decimals=nfd,
        justify=nfj,
        informat=niform.decode("ascii", "replace").rstrip(),
        informat_length=nifl,
        informat_decimals=nifd,
    )


def _is_header(record: bytes) -> bool:
    return record.startswith(b"HEADER RECORD*******")


def _reject_v8(record: bytes, offset: int):
    kind = record[20:28]
    if kind in V8_MARKERS:
        raise BadMagicError(
            f"XPORT v8/v9 transport at byte {offset}; only v5 files are supported"
        )


def parse_document(data: bytes) -> XptDocument:
    """Parse a whole transport byte stream into members, variables, and rows."""
    if len(data) == 0 or len(data) % RECORD_LEN != 0:
        raise TruncatedRecordError(
            f"stream length {len(data)} is not a positive multiple of {RECORD_LEN}"
        )
    n_records = len(data) // RECORD_LEN

    def record(i: int) -> bytes:
        if i >= n_records:
            raise TruncatedRecordError(f"expected a record at byte {i * RECORD_LEN}, past end")
        return data[i * RECORD_LEN : (i + 1) * RECORD_LEN]

    rec0 = record(0)
    if not rec0.startswith(LIBRARY_MAGIC):
        _reject_v8(rec0, 0)
        raise BadMagicError("library header magic missing at byte 0")
    first_real = record(1)
    second_real = record(2)
    doc = XptDocument(
        sas_version=first_real[24:32].decode("ascii", "replace").rstrip(),
        os_name=first_real[32:40].decode("ascii", "replace").rstrip(),
        created=first_real[64:80].decode("ascii", "replace").rstrip(),
        modified=second_real[0:16].decode("ascii", "replace").rstrip(),
    )

    i = 3
    while i < n_records:
        rec = record(i)
        if not rec.startswith(MEMBER_MAGIC):
            _reject_v8(rec, i * RECORD_LEN)
            raise BadMagicError(f"member header magic missing at byte {i * RECORD_LEN}")
        try:
            namestr_len = int(rec[74:78])
        except ValueError:
            raise BadMagicError(f"unreadable descriptor size at byte {i * RECORD_LEN + 74}")
        if namestr_len not in (136, 140):
            raise BadMagicError(f"descriptor size {namestr_len} at byte {i * RECORD_LEN + 74}")
        if not record(i + 1).startswith(DSCRPTR_MAGIC):
            raise BadMagicError(f"descriptor header magic missing at byte {(i + 1) * RECORD_LEN}")
        desc1 = record(i + 2)
        desc2 = record(i + 3)
        member = XptMember(
            name=desc1[8:16].decode("ascii", "replace").rstrip(),
            label=desc2[32:72].decode("ascii", "replace").rstrip(),
            dstype=desc2[72:80].decode("ascii", "replace").rstrip(),
            sas_version=desc1[24:32].decode("ascii", "replace").rstrip(),
            os_name=desc1[32:40].decode("ascii", "replace").rstrip(),
            created=desc1[64:80].decode("ascii", "replace").rstrip(),
            modified=desc2[0:16].decode("ascii", "replace").rstrip(),
            variables=[],
            observations=[],
        )
        rec = record(i + 4)
        if not rec.startswith(NAMESTR_MAGIC):
            raise BadMagicError(f"namestr header magic missing at byte {(i + 4) * RECORD_LEN}")
        try:
            n_vars = int(rec[54:58])
        except ValueError:
            raise MalformedNamestrError(f"unreadable variable count at byte {(i + 4) * RECORD_LEN + 54}")
        if n_vars <= 0:
            raise MalformedNamestrError(f"variable count {n_vars} at byte {(i + 4) * RECORD_LEN + 54}")
        namestr_records = (n_vars * namestr_len + RECORD_LEN - 1) // RECORD_LEN
        start = (i + 5) * RECORD_LEN
        if start + namestr_records * RECORD_LEN > len(data):
            raise TruncatedRecordError(f"descriptors run past end of input at byte {start}")
        blob = data[start : start + namestr_records * RECORD_LEN]
        for v in range(n_vars):
            off = v * namestr_len
            member.variables.append(_parse_namestr(blob[off : off + NAMESTR_LEN], start + off))
        member.variables.sort(key=lambda e: e.position)

        i = i + 5 + namestr_records
        if not record(i).startswith(OBS_MAGIC):
            raise BadMagicError(f"observation header magic missing at byte {i * RECORD_LEN}")
        i += 1
        obs_start = i
        while i < n_records and not _is_header(record(i)):
            i += 1
        obs_bytes = data[obs_start * RECORD_LEN : i * RECORD_LEN]
        member.observations = _parse_observations(member.variables, obs_bytes, obs_start * RECORD_LEN)
        doc.members.append(member)
    return doc


def _parse_observations(variables: list, obs_bytes: bytes, base_offset: int) -> list:
    row_len = sum(v.length for v in variables)
    rows = []
    pos = 0
    while pos + row_len <= len(obs_bytes):
        raw = obs_bytes[pos : pos + row_len]
        # blank-padded tail of the final record is padding, not data
        if raw == b" " * row_len and pos >= len(obs_bytes) - RECORD_LEN:
            break
        row = []
        cursor = 0
        for v in variables:
            chunk = raw[cursor : cursor + v.length]
            if v.type == "numeric":
                row.append(decode_numeric(chunk))
            else:
                row.append(chunk.decode("ascii", "replace").rstrip())
            cursor += v.length
        rows.append(tuple(row))
        pos += row_len
    tail = obs_bytes[pos:]
    if tail.strip(b" "):
        raise TruncatedRecordError(
            f"trailing {len(tail)} bytes at byte {base_offset + pos} are not a full row"
        )
    return rows


def to_variable_tables(
    document: XptDocument,
    id_variable: str,
    counters: Optional[dict] = None,
) -> list:
    """One VariableTable per non-id variable, keyed by the id variable's values.

    Duplicate subject rows keep the last occurrence and bump the
    'duplicate_subjects' counter. Typed missings become plain missing.
    """
    tables = []
    for member in document.members:
        names = [v.name for v in member.variables]
        if id_variable not in names:
            raise MissingIdVariableError(
                f"{id_variable!r} not in member {member.name!r} (has {names})"
            )
        id_idx = names.index(id_variable)
        if member.variables[id_idx].type != "numeric":
            raise MissingIdVariableError(f"{id_variable!r} must be numeric")
        for col, var in enumerate(member.variables):
            if col == id_idx:
                continue
            seen: dict = {}
            dupes = 0
            for row in member.observations:
                sid_raw = row[id_idx]
                if isinstance(sid_raw, MissingValue):
                    continue
                sid = int(sid_raw)
                value = row[col]
                if isinstance(value, MissingValue):
                    value = None
                elif isinstance(value, str) and value == "":
                    value = None
                if sid in seen:
                    dupes += 1
                seen[sid] = value
            if dupes:
                log.warning("variable %s: %d duplicate subject rows, last wins", var.name, dupes)
                if counters is not None:
                    counters["duplicate_subjects"] = counters.get("duplicate_subjects", 0) + dupes
            declared = None if var.type == "numeric" else "categorical"
            tables.append(
                VariableTable(
                    var.name,
                    list(seen.keys()),
                    list(seen.values()),
                    declared_kind=declared,
                )
            )
    return tables


def inventory(document: XptDocument) -> str:
    """Human-readable member/variable summary for a parsed transport."""
    lines = []
    for m in document.members:
        lines.append(f"member {m.name}: {len(m.variables)} variables, {len(m.observations)} rows")
        for v in m.variables:
            lines.append(f"  {v.name:<8} {v.type:<9} length {v.length}")
    return "\n".join(lines)
