"""Verilog module-header parsing, rendering, and interface degradation.

Only ANSI-style headers (``module name #(params) (ports);``) are handled.
Bodies, expressions, generate blocks and the rest of the language are out
of scope; anything beyond the supported header subset raises a typed error
instead of guessing.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum, Flag, auto
from random import Random


class HeaderError(ValueError):
    """Base class for module-header parsing failures."""


class NoModuleFound(HeaderError):
    """No module declaration (or no module with the requested name)."""


class MalformedHeader(HeaderError):
    """A header was found but is structurally broken."""


class UnsupportedSyntax(HeaderError):
    """Legal-looking Verilog outside the supported ANSI header subset."""


class Direction(str, Enum):
    INPUT = "input"
    OUTPUT = "output"
    INOUT = "inout"


class KeptFields(Flag):
    """Which facts about a port survive degradation. NAME is always kept."""

    NAME = auto()
    DIRECTION = auto()
    WIDTH = auto()


KEEP_ALL = KeptFields.NAME | KeptFields.DIRECTION | KeptFields.WIDTH

_IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")
_RANGE_RE = re.compile(r"^\[\s*([+-]?\d+)\s*:\s*([+-]?\d+)\s*\]$")

# Words that may appear in a header but can never be a port/module name.
VERILOG_KEYWORDS = frozenset(
    {
        "module", "endmodule", "input", "output", "inout", "parameter",
        "localparam", "wire", "reg", "logic", "tri", "wand", "wor",
        "signed", "unsigned", "integer", "real", "time", "realtime",
        "supply0", "supply1", "genvar", "begin", "end",
    }
)

_NET_WORDS = frozenset({"wire", "logic", "tri", "wand", "wor", "signed", "unsigned"})


def _valid_identifier(name: str) -> bool:
    return bool(_IDENTIFIER_RE.match(name)) and name not in VERILOG_KEYWORDS


def range_width(range_text: str) -> int:
    """Width in bits of a numeric ``[H:L]`` range. Raises on anything else."""
    m = _RANGE_RE.match(range_text.strip())
    if not m:
        raise UnsupportedSyntax(f"non-constant range not supported: {range_text!r}")
    high, low = int(m.group(1)), int(m.group(2))
    return abs(high - low) + 1


@dataclass(frozen=True)
class PortSpec:
    """One port of a module header.

    ``range_text`` carries the original range annotation for diagnostics and
    faithful re-rendering; it is excluded from equality so that semantically
    identical ports compare equal regardless of spelling.
    """

    name: str
    direction: Direction
    width_bits: int = 1
    is_reg: bool = False
    range_text: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not _valid_identifier(self.name):
            raise ValueError(f"illegal port name: {self.name!r}")
        if self.width_bits < 1:
            raise ValueError(f"width_bits must be >= 1, got {self.width_bits}")
        if self.is_reg and self.direction is Direction.INPUT:
            raise ValueError("input ports cannot be reg")
        if self.range_text and range_width(self.range_text) != self.width_bits:
            raise ValueError(
                f"range {self.range_text!r} disagrees with width {self.width_bits}"
            )


@dataclass(frozen=True)
class ModuleInterface:
    """Parsed ANSI module header: name, raw-text parameters, ports."""

    module_name: str
    parameters: tuple[tuple[str, str], ...] = ()
    ports: tuple[PortSpec, ...] = ()

    def __post_init__(self) -> None:
        if not _valid_identifier(self.module_name):
            raise ValueError(f"illegal module name: {self.module_name!r}")
        port_names = [p.name for p in self.ports]
        if len(set(port_names)) != len(port_names):
            raise ValueError("duplicate port names")
        param_names = [n for n, _ in self.parameters]
        if len(set(param_names)) != len(param_names):
            raise ValueError("duplicate parameter names")
        if set(param_names) & set(port_names):
            raise ValueError("parameter name collides with port name")

    def port(self, name: str) -> PortSpec:
        for p in self.ports:
            if p.name == name:
                return p
        raise KeyError(name)


def strip_comments_and_attributes(text: str) -> str:
    """Blank out //, /* */ comments and (* ... *) attributes.

    Replacement preserves newlines so later diagnostics could map offsets.
    """

    def _blank(m: re.Match[str]) -> str:
        return re.sub(r"[^\n]", " ", m.group(0))

    text = re.sub(r"/\*.*?\*/", _blank, text, flags=re.S)
    text = re.sub(r"//[^\n]*", _blank, text)
    # [^)] keeps this from swallowing `@(*)` sensitivity lists in bodies
    text = re.sub(r"\(\*[^)]*\*\)", _blank, text, flags=re.S)
    return text


def _balanced_parens(text: str, start: int) -> tuple[str, int]:
    """Return (inner text, index just past the closing paren); text[start] == '('."""
    depth = 0
    for i in range(start, len(text)):
        ch = text[i]
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth == 0:
                return text[start + 1 : i], i + 1
    raise MalformedHeader("unbalanced parentheses in module header")


def _split_top_level(text: str) -> list[str]:
    """Split on commas not nested in (), [] or {}."""
    chunks, depth, cur = [], 0, []
    for ch in text:
        if ch in "([{":
            depth += 1
        elif ch in ")]}":
            depth -= 1
        if ch == "," and depth == 0:
            chunks.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    chunks.append("".join(cur))
    return chunks


def _parse_parameters(text: str) -> tuple[tuple[str, str], ...]:
    params: list[tuple[str, str]] = []
    for chunk in _split_top_level(text):
        chunk = chunk.strip()
        if not chunk:
            raise MalformedHeader("empty parameter entry")
        if "=" not in chunk:
            raise MalformedHeader(f"parameter without default: {chunk!r}")
        left, default = chunk.split("=", 1)
        words = left.split()
        if not words:
            raise MalformedHeader(f"cannot parse parameter: {chunk!r}")
        name = words[-1]
        if not _valid_identifier(name):
            raise MalformedHeader(f"illegal parameter name: {name!r}")
        params.append((name, default.strip()))
    return tuple(params)


_PORT_TOKEN_RE = re.compile(r"\[[^\[\]]*\]|[A-Za-z_$][A-Za-z0-9_$]*|\S")


def _parse_ports(text: str) -> tuple[PortSpec, ...]:
    ports: list[PortSpec] = []
    prev: PortSpec | None = None
    for chunk in _split_top_level(text):
        chunk = chunk.strip()
        if not chunk:
            raise MalformedHeader("empty port entry")
        tokens = _PORT_TOKEN_RE.findall(chunk)
        direction: Direction | None = None
        is_reg = False
        range_text = ""
        name: str | None = None
        for tok in tokens:
            if tok in ("input", "output", "inout"):
                if direction is not None or name is not None:
                    raise MalformedHeader(f"cannot parse port: {chunk!r}")
                direction = Direction(tok)
            elif tok == "reg":
                is_reg = True
            elif tok in _NET_WORDS:
                continue
            elif tok.startswith("["):
                if name is not None:
                    raise UnsupportedSyntax(f"unpacked array port not supported: {chunk!r}")
                if range_text:
                    raise UnsupportedSyntax(f"multi-dimensional port not supported: {chunk!r}")
                range_text = re.sub(r"\s+", "", tok)
            elif _valid_identifier(tok):
                if name is not None:
                    raise MalformedHeader(f"cannot parse port: {chunk!r}")
                name = tok
            else:
                raise MalformedHeader(f"unexpected token {tok!r} in port: {chunk!r}")
        if name is None:
            raise MalformedHeader(f"port entry has no name: {chunk!r}")
        if direction is None:
            if prev is None:
                raise UnsupportedSyntax(
                    "port list without directions (non-ANSI header not supported)"
                )
            # bare identifier continues the previous declaration
            direction = prev.direction
            if not range_text and not is_reg and len(tokens) == 1:
                is_reg = prev.is_reg
                range_text = prev.range_text
        if direction is Direction.INPUT and is_reg:
            raise MalformedHeader(f"input ports cannot be reg: {chunk!r}")
        width = range_width(range_text) if range_text else 1
        try:
            port = PortSpec(name, direction, width, is_reg, range_text)
        except ValueError as exc:
            raise MalformedHeader(str(exc)) from exc
        ports.append(port)
        prev = port
    return tuple(ports)


def _skip_ws(text: str, pos: int) -> int:
    while pos < len(text) and text[pos].isspace():
        pos += 1
    return pos


_NAME_AT_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_$]*)")


def parse_module_header(source_text: str, module_name: str | None = None) -> ModuleInterface:
    """Parse the first ANSI module header in ``source_text``.

    With ``module_name`` given, parse that module instead of the first one.
    Raises NoModuleFound / MalformedHeader / UnsupportedSyntax.
    """
    text = strip_comments_and_attributes(source_text)
    found_any = False
    for m in re.finditer(r"\bmodule\b", text):
        name_m = _NAME_AT_RE.match(text, m.end())
        if not name_m:
            raise MalformedHeader("module keyword without a name")
        name = name_m.group(1)
        found_any = True
        if module_name is not None and name != module_name:
            continue
        cursor = _skip_ws(text, name_m.end())
        params: tuple[tuple[str, str], ...] = ()
        if cursor < len(text) and text[cursor] == "#":
            cursor = _skip_ws(text, cursor + 1)
            if cursor >= len(text) or text[cursor] != "(":
                raise MalformedHeader("expected '(' after '#'")
            param_text, cursor = _balanced_parens(text, cursor)
            params = _parse_parameters(param_text)
            cursor = _skip_ws(text, cursor)
        if cursor < len(text) and text[cursor] == ";":
            raise UnsupportedSyntax(
                f"module {name!r} has no header port list (non-ANSI style not supported)"
            )
        if cursor >= len(text) or text[cursor] != "(":
            raise MalformedHeader(f"expected port list after module {name!r}")
        port_text, cursor = _balanced_parens(text, cursor)
        cursor = _skip_ws(text, cursor)
        if cursor >= len(text) or text[cursor] != ";":
            raise MalformedHeader(f"missing ';' after module {name!r} header")
        ports = _parse_ports(port_text) if port_text.strip() else ()
        try:
            return ModuleInterface(name, params, ports)
        except ValueError as exc:
            raise MalformedHeader(str(exc)) from exc
    if module_name is not None and found_any:
        raise NoModuleFound(f"no module named {module_name!r}")
    raise NoModuleFound("no module declaration found")


def _port_decl(port: PortSpec) -> str:
    parts = [port.direction.value]
    if port.is_reg:
        parts.append("reg")
    rng = port.range_text or (f"[{port.width_bits - 1}:0]" if port.width_bits > 1 else "")
    if rng:
        parts.append(rng)
    parts.append(port.name)
    return " ".join(parts)


def render_interface(iface: ModuleInterface, style: str = "header_block") -> str:
    """Render an interface as a Verilog header block or a prose port list.

    ``header_block`` output re-parses to an equal interface (round-trip).
    """
    if style == "header_block":
        lines = []
        if iface.parameters:
            lines.append(f"module {iface.module_name} #(")
            for i, (pname, default) in enumerate(iface.parameters):
                comma = "," if i < len(iface.parameters) - 1 else ""
                lines.append(f"    parameter {pname} = {default}{comma}")
            lines.append(")(")
        else:
            lines.append(f"module {iface.module_name} (")
        for i, port in enumerate(iface.ports):
            comma = "," if i < len(iface.ports) - 1 else ""
            lines.append(f"    {_port_decl(port)}{comma}")
        lines.append(");")
        return "\n".join(lines)
    if style == "prose_list":
        out = []
        for port in iface.ports:
            suffix = f" ({port.width_bits} bits)" if port.width_bits > 1 else ""
            out.append(f"- {port.direction.value} {port.name}{suffix}")
        return "\n".join(out)
    raise ValueError(f"unknown render style: {style!r}")


@dataclass(frozen=True)
class DegradationPolicy:
    """Probabilities controlling how much interface detail a task keeps."""

    p_full_retain: float = 0.2
    p_keep_element: float = 0.5

    def __post_init__(self) -> None:
        for name in ("p_full_retain", "p_keep_element"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0,1], got {v}")


@dataclass(frozen=True)
class DegradedInterface:
    """A lossy view of an interface: some ports dropped, some facts elided.

    ``fully_retained`` marks interfaces kept wholesale (nothing dropped).
    Port names are never elided and inout ports never lose their direction.
    """

    source: ModuleInterface
    retained_ports: tuple[tuple[PortSpec, KeptFields], ...]
    fully_retained: bool

    def __post_init__(self) -> None:
        source_names = {p.name for p in self.source.ports}
        for port, kept in self.retained_ports:
            if port.name not in source_names:
                raise ValueError(f"retained port {port.name!r} not in source interface")
            if KeptFields.NAME not in kept:
                raise ValueError("port names are always kept")
            if port.direction is Direction.INOUT and KeptFields.DIRECTION not in kept:
                raise ValueError("inout ports never lose their direction")
        if self.fully_retained:
            if len(self.retained_ports) != len(self.source.ports):
                raise ValueError("fully_retained requires every port present")
            if any(kept != KEEP_ALL for _, kept in self.retained_ports):
                raise ValueError("fully_retained requires every field kept")


def degrade_interface(
    iface: ModuleInterface,
    policy: DegradationPolicy = DegradationPolicy(),
    rng_seed: int = 0,
) -> DegradedInterface:
    """Deterministically degrade an interface under ``rng_seed``.

    Draw order: one full-retention draw; then per port, in declaration order,
    an inclusion draw followed (for included ports) by direction and width
    draws. Inout ports skip the direction draw.
    """
    rng = Random(rng_seed)
    if rng.random() < policy.p_full_retain:
        retained = tuple((p, KEEP_ALL) for p in iface.ports)
        return DegradedInterface(iface, retained, fully_retained=True)
    retained_list: list[tuple[PortSpec, KeptFields]] = []
    for port in iface.ports:
        if rng.random() >= policy.p_keep_element:
            continue
        kept = KeptFields.NAME
        if port.direction is Direction.INOUT:
            kept |= KeptFields.DIRECTION
        elif rng.random() < policy.p_keep_element:
            kept |= KeptFields.DIRECTION
        if rng.random() < policy.p_keep_element:
            kept |= KeptFields.WIDTH
        retained_list.append((port, kept))
    return DegradedInterface(iface, tuple(retained_list), fully_retained=False)


def render_degraded_interface(degraded: DegradedInterface) -> str:
    """Render a degraded interface as the prose block spliced into task text."""
    lines = [f"Module name: {degraded.source.module_name}"]
    for pname, default in degraded.source.parameters:
        lines.append(f"Parameter: {pname} = {default}")
    if degraded.retained_ports:
        lines.append("Ports (one bit unless stated otherwise):")
    for port, kept in degraded.retained_ports:
        parts = []
        if KeptFields.DIRECTION in kept:
            parts.append(port.direction.value)
        parts.append(port.name)
        suffix = ""
        if KeptFields.WIDTH in kept and port.width_bits > 1:
            suffix = f" ({port.width_bits} bits)"
        lines.append("- " + " ".join(parts) + suffix)
    return "\n".join(lines)
