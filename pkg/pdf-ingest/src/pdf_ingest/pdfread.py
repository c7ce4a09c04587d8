"""Small self-contained PDF reader.

Covers the common subset produced by mainstream generators: classic
cross-reference layout, FlateDecode streams, text shown with Tj/TJ inside
BT/ET blocks, and image XObjects placed with ``cm ... Do``.  Object
positions are recovered by scanning for ``N G obj`` markers rather than
trusting the xref table, which tolerates mild damage.
"""

from __future__ import annotations

import base64
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional


class PdfError(Exception):
    """The file is not a readable, supported PDF."""


@dataclass(frozen=True)
class Ref:
    num: int
    gen: int


@dataclass(frozen=True)
class PlacedImage:
    """An image XObject and where its unit square landed on the page."""

    bbox: tuple[float, float, float, float]  # points, origin bottom-left
    width: int
    height: int
    filter: Optional[str]
    color_space: Optional[str]
    bits: int
    data: bytes


@dataclass(frozen=True)
class TextLine:
    x: float
    y: float
    text: str


@dataclass(frozen=True)
class PdfPage:
    number: int
    width: float
    height: float
    lines: tuple[TextLine, ...]  # reading order: top to bottom
    images: tuple[PlacedImage, ...]

    @property
    def text(self) -> str:
        return "\n".join(ln.text for ln in self.lines)


@dataclass(frozen=True)
class PdfDocument:
    pages: tuple[PdfPage, ...]


# Object-level syntax -------------------------------------------------------

_WS = b"\x00\t\n\x0c\r "
_DELIM = b"()<>[]{}/%"


class _Lexer:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def _skip_ws(self):
        data, n = self.data, len(self.data)
        while self.pos < n:
            c = self.data[self.pos]
            if c in _WS:
                self.pos += 1
            elif c == 0x25:  # comment to end of line
                while self.pos < n and data[self.pos] not in b"\r\n":
                    self.pos += 1
            else:
                return

    def peek_keyword(self) -> Optional[bytes]:
        self._skip_ws()
        m = re.match(rb"[A-Za-z'\"*]+", self.data[self.pos:self.pos + 16])
        return m.group(0) if m else None

    def parse(self):
        self._skip_ws()
        if self.pos >= len(self.data):
            raise PdfError("unexpected end of data")
        c = self.data[self.pos]
        if self.data.startswith(b"<<", self.pos):
            return self._parse_dict()
        if c == 0x3C:  # '<'
            return self._parse_hex_string()
        if c == 0x28:  # '('
            return self._parse_literal_string()
        if c == 0x2F:  # '/'
            return self._parse_name()
        if c == 0x5B:  # '['
            return self._parse_array()
        if c in b"+-.0123456789":
            return self._parse_number_or_ref()
        kw = self.peek_keyword()
        if kw in (b"true", b"false", b"null"):
            self.pos += len(kw)
            return {b"true": True, b"false": False, b"null": None}[kw]
        raise PdfError(f"unexpected byte {bytes([c])!r} at offset {self.pos}")

    def _parse_dict(self) -> dict:
        self.pos += 2
        out = {}
        while True:
            self._skip_ws()
            if self.data.startswith(b">>", self.pos):
                self.pos += 2
                return out
            key = self._parse_name()
            out[key] = self.parse()

    def _parse_array(self) -> list:
        self.pos += 1
        out = []
        while True:
            self._skip_ws()
            if self.data[self.pos] == 0x5D:  # ']'
                self.pos += 1
                return out
            out.append(self.parse())

    def _parse_name(self) -> str:
        if self.data[self.pos] != 0x2F:
            raise PdfError(f"expected name at offset {self.pos}")
        self.pos += 1
        start = self.pos
        while (self.pos < len(self.data)
               and self.data[self.pos] not in _WS
               and self.data[self.pos] not in _DELIM):
            self.pos += 1
        raw = self.data[start:self.pos]
        # #xx escapes in names
        return re.sub(
            rb"#([0-9A-Fa-f]{2})", lambda m: bytes([int(m.group(1), 16)]), raw
        ).decode("latin-1")

    def _parse_number_or_ref(self):
        m = re.match(rb"[+-]?(\d+\.\d*|\.\d+|\d+)", self.data[self.pos:])
        if not m:
            raise PdfError(f"bad number at offset {self.pos}")
        text = m.group(0)
        end = self.pos + len(text)
        if b"." not in text:
            # lookahead for "G R" making this an indirect reference
            m2 = re.match(rb"\s+(\d+)\s+R(?![A-Za-z])", self.data[end:end + 24])
            if m2:
                self.pos = end + m2.end()
                return Ref(int(text), int(m2.group(1)))
            self.pos = end
            return int(text)
        self.pos = end
        return float(text)

    def _parse_hex_string(self) -> bytes:
        end = self.data.index(b">", self.pos)
        hexpart = re.sub(rb"\s", b"", self.data[self.pos + 1:end])
        if len(hexpart) % 2:
            hexpart += b"0"
        self.pos = end + 1
        return bytes.fromhex(hexpart.decode("ascii"))

    def _parse_literal_string(self) -> bytes:
        self.pos += 1
        out = bytearray()
        depth = 1
        data = self.data
        while self.pos < len(data):
            c = data[self.pos]
            if c == 0x5C:  # backslash
                self.pos += 1
                e = data[self.pos]
                simple = {0x6E: 10, 0x72: 13, 0x74: 9, 0x62: 8, 0x66: 12,
                          0x28: 40, 0x29: 41, 0x5C: 92}
                if e in simple:
                    out.append(simple[e])
                    self.pos += 1
                elif e in b"01234567":
                    m = re.match(rb"[0-7]{1,3}", data[self.pos:self.pos + 3])
                    out.append(int(m.group(0), 8) & 0xFF)
                    self.pos += len(m.group(0))
                elif e in b"\r\n":  # line continuation
                    self.pos += 1
                    if e == 0x0D and data[self.pos] == 0x0A:
                        self.pos += 1
                else:
                    out.append(e)
                    self.pos += 1
            elif c == 0x28:
                depth += 1
                out.append(c)
                self.pos += 1
            elif c == 0x29:
                depth -= 1
                if depth == 0:
                    self.pos += 1
                    return bytes(out)
                out.append(c)
                self.pos += 1
            else:
                out.append(c)
                self.pos += 1
        raise PdfError("unterminated string")


# Document structure --------------------------------------------------------

_OBJ_RE = re.compile(rb"(?<![0-9])(\d+)\s+(\d+)\s+obj\b")


class _Document:
    def __init__(self, data: bytes):
        if not data.lstrip()[:5].startswith(b"%PDF-"):
            raise PdfError("not a PDF (missing %PDF header)")
        self.data = data
        self.offsets = {}
        for m in _OBJ_RE.finditer(data):
            self.offsets[int(m.group(1))] = m.end()
        if not self.offsets:
            raise PdfError("no objects found (corrupt file?)")
        self._cache = {}
        self.trailer = self._read_trailer()
        if self.resolve(self.trailer.get("Encrypt")) is not None:
            raise PdfError("encrypted PDF is not supported")

    def _read_trailer(self) -> dict:
        merged = {}
        for m in re.finditer(rb"trailer\b", self.data):
            lexer = _Lexer(self.data, m.end())
            try:
                d = lexer.parse()
            except PdfError:
                continue
            if isinstance(d, dict):
                merged.update(d)
        if "Root" not in merged:
            for num in self.offsets:
                obj, _ = self.get(num)
                if isinstance(obj, dict) and obj.get("Type") == "Catalog":
                    merged["Root"] = Ref(num, 0)
                    break
        if "Root" not in merged:
            raise PdfError("no document catalog found")
        return merged

    def get(self, num: int):
        """Return (object, stream-bytes-or-None)."""
        if num in self._cache:
            return self._cache[num]
        if num not in self.offsets:
            raise PdfError(f"missing object {num}")
        lexer = _Lexer(self.data, self.offsets[num])
        obj = lexer.parse()
        stream = None
        if lexer.peek_keyword() == b"stream":
            lexer._skip_ws()
            start = lexer.pos + len(b"stream")
            if self.data[start:start + 2] == b"\r\n":
                start += 2
            elif self.data[start:start + 1] in (b"\n", b"\r"):
                start += 1
            length = self.resolve(obj.get("Length"))
            if isinstance(length, int) and self.data[
                start + length:start + length + 32
            ].lstrip().startswith(b"endstream"):
                stream = self.data[start:start + length]
            else:
                end = self.data.index(b"endstream", start)
                stream = self.data[start:end].rstrip(b"\r\n")
        self._cache[num] = (obj, stream)
        return self._cache[num]

    def resolve(self, obj):
        while isinstance(obj, Ref):
            obj, _ = self.get(obj.num)
        return obj

    def stream_bytes(self, ref) -> bytes:
        if not isinstance(ref, Ref):
            raise PdfError("expected a stream reference")
        obj, stream = self.get(ref.num)
        if stream is None:
            raise PdfError(f"object {ref.num} has no stream")
        return _decode_stream(self.resolve(obj.get("Filter")), stream)


def _decode_stream(filters, raw: bytes) -> bytes:
    if filters is None:
        return raw
    if isinstance(filters, str):
        filters = [filters]
    out = raw
    for f in filters:
        if f in ("FlateDecode", "Fl"):
            try:
                out = zlib.decompress(out)
            except zlib.error as exc:
                raise PdfError(f"bad Flate stream: {exc}") from exc
        elif f in ("ASCII85Decode", "A85"):
            body = out.strip()
            if body.startswith(b"<~"):
                body = body[2:]
            if body.endswith(b"~>"):
                body = body[:-2]
            try:
                out = base64.a85decode(body, ignorechars=b" \t\n\r\v")
            except ValueError as exc:
                raise PdfError(f"bad ASCII85 stream: {exc}") from exc
        else:
            raise PdfError(f"unsupported stream filter {f!r}")
    return out


def _page_leaves(doc: _Document):
    root = doc.resolve(doc.trailer["Root"])
    node = doc.resolve(root.get("Pages"))
    if node is None:
        raise PdfError("catalog has no page tree")

    def walk(node, inherited):
        attrs = dict(inherited)
        for key in ("MediaBox", "Resources"):
            if key in node:
                attrs[key] = node[key]
        if node.get("Type") == "Page":
            yield node, attrs
            return
        for kid in doc.resolve(node.get("Kids", [])) or []:
            yield from walk(doc.resolve(kid), attrs)

    yield from walk(node, {})


# Content streams -----------------------------------------------------------

def _mat_mul(m1, m2):
    a1, b1, c1, d1, e1, f1 = m1
    a2, b2, c2, d2, e2, f2 = m2
    return (
        a1 * a2 + b1 * c2, a1 * b2 + b1 * d2,
        c1 * a2 + d1 * c2, c1 * b2 + d1 * d2,
        e1 * a2 + f1 * c2 + e2, e1 * b2 + f1 * d2 + f2,
    )


_IDENTITY = (1.0, 0.0, 0.0, 1.0, 0.0, 0.0)


class _Op(bytes):
    """Marker distinguishing operator keywords from byte-string operands."""


def _content_tokens(data: bytes):
    """Yield operands and operator keywords in stream order."""
    lexer = _Lexer(data)
    while True:
        lexer._skip_ws()
        if lexer.pos >= len(data):
            return
        c = data[lexer.pos]
        if c in b"/<([+-.0123456789":
            yield lexer.parse()
            continue
        m = re.match(rb"[A-Za-z'\"*][A-Za-z0-9'\"*]*", data[lexer.pos:])
        if not m:
            lexer.pos += 1  # unknown byte: skip
            continue
        op = m.group(0)
        lexer.pos += len(op)
        if op == b"BI":  # inline image: skip to EI
            end = data.find(b"EI", lexer.pos)
            lexer.pos = len(data) if end == -1 else end + 2
            continue
        yield _Op(op)


def _extract_page(doc: _Document, node: dict, attrs: dict, number: int) -> PdfPage:
    media = [float(doc.resolve(v)) for v in doc.resolve(attrs.get(
        "MediaBox", [0, 0, 612, 792]))]
    width, height = media[2] - media[0], media[3] - media[1]

    contents = node.get("Contents")
    chunks = []
    if contents is not None:
        resolved = doc.resolve(contents)
        refs = resolved if isinstance(resolved, list) else [contents]
        for ref in refs:
            chunks.append(doc.stream_bytes(ref))
    stream = b"\n".join(chunks)

    resources = doc.resolve(attrs.get("Resources", {})) or {}
    xobjects = doc.resolve(resources.get("XObject", {})) or {}

    fragments = []  # (y, x, text)
    images = []
    ctm = _IDENTITY
    stack = []
    tm = tlm = _IDENTITY
    leading = 0.0
    in_text = False
    operands: list = []

    def show(raw: bytes):
        if not raw:
            return
        text = raw.decode("latin-1")
        fragments.append((tm[5], tm[4], text))

    for token in _content_tokens(stream):
        if not isinstance(token, _Op):
            operands.append(token)
            continue
        op = token
        try:
            if op == b"q":
                stack.append(ctm)
            elif op == b"Q":
                ctm = stack.pop() if stack else _IDENTITY
            elif op == b"cm" and len(operands) >= 6:
                ctm = _mat_mul(tuple(float(v) for v in operands[-6:]), ctm)
            elif op == b"BT":
                in_text = True
                tm = tlm = _IDENTITY
            elif op == b"ET":
                in_text = False
            elif op == b"TL" and operands:
                leading = float(operands[-1])
            elif op in (b"Td", b"TD") and len(operands) >= 2:
                tx, ty = float(operands[-2]), float(operands[-1])
                if op == b"TD":
                    leading = -ty
                tlm = _mat_mul((1, 0, 0, 1, tx, ty), tlm)
                tm = tlm
            elif op == b"Tm" and len(operands) >= 6:
                tlm = tm = tuple(float(v) for v in operands[-6:])
            elif op == b"T*":
                tlm = _mat_mul((1, 0, 0, 1, 0, -leading), tlm)
                tm = tlm
            elif op == b"Tj" and in_text and operands:
                if isinstance(operands[-1], bytes):
                    show(operands[-1])
            elif op in (b"'", b'"') and in_text and operands:
                tlm = _mat_mul((1, 0, 0, 1, 0, -leading), tlm)
                tm = tlm
                if isinstance(operands[-1], bytes):
                    show(operands[-1])
            elif op == b"TJ" and in_text and operands:
                if isinstance(operands[-1], list):
                    show(b"".join(
                        piece for piece in operands[-1]
                        if isinstance(piece, bytes)
                    ))
            elif op == b"Do" and operands:
                name = operands[-1]
                target = xobjects.get(name)
                if target is not None:
                    placed = _placed_image(doc, target, ctm)
                    if placed is not None:
                        images.append(placed)
        finally:
            operands = []

    return PdfPage(
        number=number,
        width=width,
        height=height,
        lines=_group_lines(fragments),
        images=tuple(images),
    )


def _placed_image(doc: _Document, ref, ctm) -> Optional[PlacedImage]:
    obj, stream = doc.get(ref.num) if isinstance(ref, Ref) else (None, None)
    if not isinstance(obj, dict) or obj.get("Subtype") != "Image" or stream is None:
        return None
    xs, ys = [], []
    for u, v in ((0, 0), (1, 0), (0, 1), (1, 1)):
        a, b, c, d, e, f = ctm
        xs.append(a * u + c * v + e)
        ys.append(b * u + d * v + f)
    filters = doc.resolve(obj.get("Filter"))
    if filters is None:
        filters = []
    elif isinstance(filters, str):
        filters = [filters]
    # peel transport encodings so only the image compression (if any) remains
    while filters and filters[0] in ("ASCII85Decode", "A85"):
        stream = _decode_stream([filters[0]], stream)
        filters = filters[1:]
    if len(filters) > 1:
        return None
    cs = doc.resolve(obj.get("ColorSpace"))
    if isinstance(cs, list):
        cs = cs[0] if cs else None
    return PlacedImage(
        bbox=(min(xs), min(ys), max(xs), max(ys)),
        width=int(doc.resolve(obj.get("Width", 0))),
        height=int(doc.resolve(obj.get("Height", 0))),
        filter=filters[0] if filters else None,
        color_space=cs,
        bits=int(doc.resolve(obj.get("BitsPerComponent", 8))),
        data=stream,
    )


def _group_lines(fragments) -> tuple[TextLine, ...]:
    """Merge fragments sharing a baseline; order top-down, left-right."""
    rows: list[tuple[float, list[tuple[float, str]]]] = []
    for y, x, text in fragments:
        for ry, items in rows:
            if abs(ry - y) < 2.0:
                items.append((x, text))
                break
        else:
            rows.append((y, [(x, text)]))
    rows.sort(key=lambda r: -r[0])
    lines = []
    for y, items in rows:
        items.sort(key=lambda i: i[0])
        text = " ".join(t.strip() for _, t in items if t.strip())
        if text:
            lines.append(TextLine(x=items[0][0], y=y, text=text))
    return tuple(lines)


def read_pdf(path) -> PdfDocument:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PdfError(f"cannot read {path}: {exc}") from exc
    doc = _Document(data)
    pages = []
    for number, (node, attrs) in enumerate(_page_leaves(doc), start=1):
        pages.append(_extract_page(doc, node, attrs, number))
    if not pages:
        raise PdfError("PDF has no pages")
    return PdfDocument(pages=tuple(pages))
