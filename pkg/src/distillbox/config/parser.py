"""A small parser for the strict YAML subset used by experiment configs.

Supported: block mappings and sequences (including the compact ``- key: v``
form), flow sequences/mappings on one or more lines, plain, single- and
double-quoted scalars, comments, and the two instantiation tags
``!import_call`` and ``!ref``.  Anchors, aliases, block scalars (``|``/``>``),
and multiple documents are rejected.

Parsed trees use plain Python containers (``dict`` keeps key order) plus
:class:`Tagged` for tagged nodes, which are kept unevaluated.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

TAGS = ("import_call", "ref")


class ConfigSyntaxError(ValueError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass(frozen=True)
class Tagged:
    tag: str
    value: object
    line: int = field(default=0, compare=False)


@dataclass
class _Line:
    indent: int
    text: str
    lineno: int


_INT = re.compile(r"[-+]?[0-9]+\Z")
_FLOAT = re.compile(r"[-+]?(\.[0-9]+|[0-9]+(\.[0-9]*)?)([eE][-+]?[0-9]+)?\Z")
_SPECIAL_FLOATS = {".inf": math.inf, "+.inf": math.inf, "-.inf": -math.inf, ".nan": math.nan,
                   ".Inf": math.inf, "-.Inf": -math.inf, ".NaN": math.nan}


def resolve_plain(text: str):
    """Map a plain (unquoted) scalar to None/bool/int/float/str."""
    if text in ("", "~", "null", "Null", "NULL"):
        return None
    if text in ("true", "True", "TRUE"):
        return True
    if text in ("false", "False", "FALSE"):
        return False
    if _INT.match(text):
        return int(text)
    if _FLOAT.match(text):
        return float(text)
    if text in _SPECIAL_FLOATS:
        return _SPECIAL_FLOATS[text]
    return text


def _strip_comment(raw: str) -> str:
    quote = None
    i = 0
    while i < len(raw):
        ch = raw[i]
        if quote:
            if quote == '"' and ch == "\\":
                i += 2
                continue
            if ch == quote:
                if quote == "'" and raw[i + 1:i + 2] == "'":
                    i += 2
                    continue
                quote = None
        elif ch in "\"'" and (i == 0 or raw[i - 1] in " \t[{,:-"):
            quote = ch
        elif ch == "#" and (i == 0 or raw[i - 1] in " \t"):
            return raw[:i].rstrip()
        i += 1
    return raw.rstrip()


class _Parser:
    def __init__(self, text: str):
        self.lines: list[_Line] = []
        for n, raw in enumerate(text.splitlines(), start=1):
            stripped = _strip_comment(raw)
            if not stripped.strip():
                continue
            body = stripped.lstrip(" ")
            indent = len(stripped) - len(body)
            if body.startswith("\t"):
                raise ConfigSyntaxError("tab characters are not allowed in indentation", n, indent + 1)
            if indent == 0 and body.rstrip() in ("---", "..."):
                raise ConfigSyntaxError("multiple documents are not supported", n, 1)
            self.lines.append(_Line(indent, body, n))
        self.pos = 0

    # -- helpers ------------------------------------------------------------
    def peek(self) -> _Line | None:
        return self.lines[self.pos] if self.pos < len(self.lines) else None

    def parse(self):
        if not self.lines:
            return None
        first = self.lines[0]
        if first.text.startswith("!"):
            # a tagged document root; its payload may sit at the same indent
            self.pos += 1
            value = self.value(first.text, first.lineno, first.indent + 1, parent_indent=first.indent - 1)
        else:
            value = self.block(first.indent)
        line = self.peek()
        if line is not None:
            raise ConfigSyntaxError("unexpected content (bad indentation?)", line.lineno, line.indent + 1)
        return value

    def block(self, indent: int):
        line = self.peek()
        if _is_seq_item(line.text):
            return self.sequence(indent)
        return self.mapping(indent)

    def sequence(self, indent: int, under_key: bool = False) -> list:
        """Block sequence; with ``under_key`` it shares its parent key's indent and ends at the next key."""
        items = []
        while True:
            line = self.peek()
            if line is None or line.indent < indent:
                return items
            if line.indent > indent:
                raise ConfigSyntaxError("unexpected indentation", line.lineno, line.indent + 1)
            if not _is_seq_item(line.text):
                if under_key:
                    return items
                raise ConfigSyntaxError("expected a '- ' sequence item", line.lineno, line.indent + 1)
            rest = line.text[1:]
            offset = len(rest) - len(rest.lstrip(" "))
            rest = rest.strip()
            col = line.indent + 1 + offset
            if rest and (_is_seq_item(rest) or _split_key(rest, line.lineno, col) is not None):
                # compact nested block: re-read the remainder as a line at its own column
                self.lines[self.pos] = _Line(col, rest, line.lineno)
                items.append(self.block(col))
            else:
                self.pos += 1
                items.append(self.value(rest, line.lineno, col, parent_indent=indent))

    def mapping(self, indent: int) -> dict:
        out: dict = {}
        while True:
            line = self.peek()
            if line is None or line.indent < indent:
                return out
            if line.indent > indent:
                raise ConfigSyntaxError("unexpected indentation", line.lineno, line.indent + 1)
            if _is_seq_item(line.text):
                return out
            split = _split_key(line.text, line.lineno, line.indent + 1)
            if split is None:
                raise ConfigSyntaxError(f"expected 'key: value', got {line.text!r}", line.lineno, line.indent + 1)
            key, rest, rest_col = split
            if key in out:
                raise ConfigSyntaxError(f"duplicate key {key!r}", line.lineno, line.indent + 1)
            self.pos += 1
            out[key] = self.value(rest, line.lineno, line.indent + rest_col, parent_indent=indent,
                                  seq_same_indent=True)

    def value(self, text: str, lineno: int, col: int, parent_indent: int, seq_same_indent: bool = False):
        text = text.strip()
        if text.startswith("!"):
            m = re.match(r"!([A-Za-z_][\w.-]*)", text)
            tag = m.group(1) if m else text[1:].split(" ")[0]
            if tag not in TAGS:
                raise ConfigSyntaxError(f"unknown tag '!{tag}' (supported: !import_call, !ref)", lineno, col)
            payload = text[m.end():].strip()
            if payload:
                return Tagged(tag, self.inline(payload, lineno, col + m.end() + 1), lineno)
            return Tagged(tag, self.nested(parent_indent, False), lineno)
        if not text:
            return self.nested(parent_indent, seq_same_indent)
        return self.inline(text, lineno, col)

    def nested(self, parent_indent: int, seq_same_indent: bool):
        line = self.peek()
        if line is None:
            return None
        if line.indent > parent_indent:
            return self.block(line.indent)
        if seq_same_indent and line.indent == parent_indent and _is_seq_item(line.text):
            return self.sequence(line.indent, under_key=True)
        return None

    def inline(self, text: str, lineno: int, col: int):
        ch = text[0]
        if ch in "&*":
            raise ConfigSyntaxError("anchors and aliases are not supported; use !ref", lineno, col)
        if ch in "|>":
            raise ConfigSyntaxError("block scalars are not supported", lineno, col)
        if ch in "[{":
            # flow collections may continue over following lines
            while not _balanced(text):
                nxt = self.peek()
                if nxt is None:
                    raise ConfigSyntaxError("unterminated flow collection", lineno, col)
                text = text + " " + nxt.text
                self.pos += 1
            flow = _Flow(text, lineno, col)
            value = flow.parse_value()
            flow.skip_ws()
            if flow.i != len(text):
                flow.fail("trailing characters after flow collection")
            return value
        if ch in "\"'":
            value, end = _quoted(text, 0, lineno, col)
            if text[end:].strip():
                raise ConfigSyntaxError("trailing characters after quoted scalar", lineno, col + end)
            return value
        return resolve_plain(text)


def _is_seq_item(text: str) -> bool:
    return text == "-" or text.startswith("- ")


def _split_key(text: str, lineno: int, col: int):
    """Return (key, rest, rest_offset) if ``text`` is a ``key: value`` entry."""
    if not text or text[0] in "[{!&*|>":
        return None
    if text[0] in "\"'":
        key, end = _quoted(text, 0, lineno, col)
        tail = text[end:]
        stripped = tail.lstrip(" ")
        if not stripped.startswith(":"):
            return None
        after = end + (len(tail) - len(stripped)) + 1
        if after < len(text) and text[after] != " ":
            return None
        return key, text[after:], after
    m = re.search(r":( |$)", text)
    if m is None:
        return None
    raw_key = text[:m.start()].rstrip()
    if not raw_key:
        return None
    key = resolve_plain(raw_key)
    if not isinstance(key, str):
        key = raw_key
    return key, text[m.end():], m.end()


def _balanced(text: str) -> bool:
    depth, quote, i = 0, None, 0
    while i < len(text):
        ch = text[i]
        if quote:
            if quote == '"' and ch == "\\":
                i += 1
            elif ch == quote:
                quote = None
        elif ch in "\"'":
            quote = ch
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        i += 1
    return depth <= 0


def _quoted(text: str, start: int, lineno: int, col: int):
    q = text[start]
    i = start + 1
    if q == "'":
        chunks = []
        while i < len(text):
            if text[i] == "'":
                if text[i + 1:i + 2] == "'":
                    chunks.append("'")
                    i += 2
                    continue
                return "".join(chunks), i + 1
            chunks.append(text[i])
            i += 1
        raise ConfigSyntaxError("unterminated single-quoted scalar", lineno, col + start)
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == '"':
            try:
                return json.loads(text[start:i + 1]), i + 1
            except json.JSONDecodeError as exc:
                raise ConfigSyntaxError(f"bad escape in double-quoted scalar: {exc.msg}",
                                        lineno, col + start) from None
        i += 1
    raise ConfigSyntaxError("unterminated double-quoted scalar", lineno, col + start)


class _Flow:
    def __init__(self, text: str, lineno: int, col: int):
        self.text, self.lineno, self.col, self.i = text, lineno, col, 0

    def fail(self, msg: str):
        raise ConfigSyntaxError(msg, self.lineno, self.col + self.i)

    def skip_ws(self):
        while self.i < len(self.text) and self.text[self.i] == " ":
            self.i += 1

    def parse_value(self):
        self.skip_ws()
        if self.i >= len(self.text):
            self.fail("unexpected end of flow collection")
        ch = self.text[self.i]
        if ch == "[":
            return self.parse_seq()
        if ch == "{":
            return self.parse_map()
        if ch in "\"'":
            value, self.i = _quoted(self.text, self.i, self.lineno, self.col)
            return value
        if ch == "!":
            m = re.compile(r"!([A-Za-z_][\w.-]*)").match(self.text, self.i)
            tag = m.group(1) if m else ""
            if tag not in TAGS:
                self.fail(f"unknown tag '!{tag}' (supported: !import_call, !ref)")
            self.i = m.end()
            return Tagged(tag, self.parse_value(), self.lineno)
        if ch in "&*":
            self.fail("anchors and aliases are not supported; use !ref")
        start = self.i
        while self.i < len(self.text) and self.text[self.i] not in ",]}":
            if self.text[self.i] == ":" and self.text[self.i + 1:self.i + 2] in (" ", ""):
                break
            self.i += 1
        return resolve_plain(self.text[start:self.i].strip())

    def parse_seq(self) -> list:
        self.i += 1
        items = []
        self.skip_ws()
        if self.text[self.i:self.i + 1] == "]":
            self.i += 1
            return items
        while True:
            items.append(self.parse_value())
            self.skip_ws()
            ch = self.text[self.i:self.i + 1]
            self.i += 1
            if ch == "]":
                return items
            if ch != ",":
                self.fail("expected ',' or ']' in flow sequence")

    def parse_map(self) -> dict:
        self.i += 1
        out: dict = {}
        self.skip_ws()
        if self.text[self.i:self.i + 1] == "}":
            self.i += 1
            return out
        while True:
            self.skip_ws()
            key = self.parse_value()
            if not isinstance(key, str):
                key = str(key)
            self.skip_ws()
            if self.text[self.i:self.i + 1] != ":":
                self.fail("expected ':' in flow mapping")
            self.i += 1
            if key in out:
                self.fail(f"duplicate key {key!r}")
            out[key] = self.parse_value()
            self.skip_ws()
            ch = self.text[self.i:self.i + 1]
            self.i += 1
            if ch == "}":
                return out
            if ch != ",":
                self.fail("expected ',' or '}' in flow mapping")


def parse_config(text: str):
    """Parse config text into nested dict/list/scalar/:class:`Tagged` values."""
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# serialization


def _format_scalar(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ".nan"
        if math.isinf(value):
            return ".inf" if value > 0 else "-.inf"
        return repr(value)
    if isinstance(value, str):
        plain_safe = (
            value
            and resolve_plain(value) == value
            and re.fullmatch(r"[A-Za-z_/.][\w./+-]*", value) is not None
        )
        return value if plain_safe else json.dumps(value, ensure_ascii=False)
    raise TypeError(f"cannot serialize {type(value).__name__} into a config")


def _is_scalar(value) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


def _emit(value, indent: int) -> list[str]:
    pad = " " * indent
    if isinstance(value, dict):
        if not value:
            return [pad + "{}"]
        lines = []
        for k, v in value.items():
            key = _format_scalar(str(k))
            lines += _emit_entry(pad + key + ":", v, indent)
        return lines
    if isinstance(value, list):
        if not value:
            return [pad + "[]"]
        lines = []
        for item in value:
            lines += _emit_entry(pad + "-", item, indent)
        return lines
    return [pad + _format_scalar(value)]


def _emit_entry(head: str, value, indent: int) -> list[str]:
    if _is_scalar(value):
        return [f"{head} {_format_scalar(value)}"]
    if isinstance(value, list) and all(_is_scalar(v) for v in value):
        return [f"{head} [{', '.join(_format_scalar(v) for v in value)}]"]
    if isinstance(value, dict) and not value:
        return [f"{head} {{}}"]
    if isinstance(value, Tagged):
        if _is_scalar(value.value):
            return [f"{head} !{value.tag} {_format_scalar(value.value)}"]
        return [f"{head} !{value.tag}"] + _emit(value.value, indent + 2)
    return [head] + _emit(value, indent + 2)


def serialize_config(value) -> str:
    """Render a parsed tree back to config text (block style)."""
    if isinstance(value, Tagged):
        lines = _emit_entry("", value, 0)
        lines[0] = lines[0].lstrip()
        return "\n".join(lines) + "\n"
    if _is_scalar(value):
        return _format_scalar(value) + "\n"
    return "\n".join(_emit(value, 0)) + "\n"
