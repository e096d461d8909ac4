"""Line-oriented pulse-sequence language.

    seq "red_map"
    field B=0.6T
    sweep t_red log 1us..2ms 50
    init nuclear m_I=1/2
    laser red power=1mW duration=$t_red
    rf freq=1.653MHz rabi=25kHz duration=100us
    readout
    end

A sweep can also be declared where it is used:
``duration=sweep(t_red, 1us..2ms, 50 log)``. Quantities are stored in base
units (Hz, s, W, T).
"""
import itertools
import logging
import re
from dataclasses import dataclass, field, replace
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path

import numpy as np

from core.errors import ExecutionError, InvariantError, ParseError, UsageError

logger = logging.getLogger(__name__)

MAX_SWEEP_DIMENSIONS = 2


class Dimension(Enum):
    FREQUENCY = "frequency"
    TIME = "time"
    POWER = "power"
    FIELD = "field"


# unit -> (dimension, power of ten relative to the base unit)
UNITS = {
    "Hz": (Dimension.FREQUENCY, 0),
    "kHz": (Dimension.FREQUENCY, 3),
    "MHz": (Dimension.FREQUENCY, 6),
    "ns": (Dimension.TIME, -9),
    "us": (Dimension.TIME, -6),
    "ms": (Dimension.TIME, -3),
    "s": (Dimension.TIME, 0),
    "nW": (Dimension.POWER, -9),
    "uW": (Dimension.POWER, -6),
    "mW": (Dimension.POWER, -3),
    "W": (Dimension.POWER, 0),
    "mT": (Dimension.FIELD, -3),
    "T": (Dimension.FIELD, 0),
}


class LaserColor(Enum):
    RED = "red"
    GREEN = "green"


class GridType(Enum):
    LIN = "lin"
    LOG = "log"


@dataclass(frozen=True)
class SweepRef:
    name: str


@dataclass(frozen=True)
class Sweep:
    name: str
    grid: GridType
    start: float
    stop: float
    count: int
    dimension: Dimension

    def values(self):
        if self.count < 1:
            raise UsageError(f"sweep {self.name!r} has an empty grid")
        if self.grid is GridType.LOG:
            return np.geomspace(self.start, self.stop, self.count)
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class InitNuclear:
    m_I: Fraction


@dataclass(frozen=True)
class LaserPulse:
    color: LaserColor
    power: object  # W or SweepRef
    duration: object  # s or SweepRef


@dataclass(frozen=True)
class RfPulse:
    frequency: object  # Hz or SweepRef
    rabi: object  # Hz or SweepRef
    duration: object  # s or SweepRef


@dataclass(frozen=True)
class Wait:
    duration: object


@dataclass(frozen=True)
class Readout:
    pass


# field name -> dimension for every quantity-valued instruction field
_FIELDS = {
    LaserPulse: {"power": Dimension.POWER, "duration": Dimension.TIME},
    RfPulse: {"freq": Dimension.FREQUENCY, "rabi": Dimension.FREQUENCY, "duration": Dimension.TIME},
    Wait: {"duration": Dimension.TIME},
}
_ATTR = {"freq": "frequency"}
_CONTROL_CHARS = re.compile(r"[\x00-\x1f\x7f]")


def _quantities(instruction):
    for key, dim in _FIELDS.get(type(instruction), {}).items():
        yield key, dim, getattr(instruction, _ATTR.get(key, key))


@dataclass(frozen=True)
class PulseProgram:
    name: str
    instructions: tuple
    sweeps: tuple = ()
    field_T: object = None
    point: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "instructions", tuple(self.instructions))
        object.__setattr__(self, "sweeps", tuple(self.sweeps))
        self.validate()

    def validate(self):
        if _CONTROL_CHARS.search(self.name):
            raise InvariantError(f"program name {self.name!r} contains a control character")
        readouts = [i for i, ins in enumerate(self.instructions) if isinstance(ins, Readout)]
        if len(readouts) != 1 or readouts[0] != len(self.instructions) - 1:
            raise InvariantError("program needs exactly one readout, as the last instruction")
        seen_init = False
        for ins in self.instructions:
            if isinstance(ins, InitNuclear):
                seen_init = True
            if isinstance(ins, RfPulse) and not seen_init:
                raise InvariantError("rf pulse before nuclear initialization")
            for key, _, value in _quantities(ins):
                if isinstance(value, SweepRef):
                    continue
                if value < 0:
                    raise InvariantError(f"{key} must be >= 0")
                if key == "freq" and value <= 0:
                    raise InvariantError("rf frequency must be > 0")
        names = [s.name for s in self.sweeps]
        if len(set(names)) != len(names):
            raise InvariantError("duplicate sweep names")
        used = self.referenced_sweeps()
        for name in names:
            if name not in used:
                raise InvariantError(f"sweep {name!r} is never used")
        for name in used:
            if name not in names:
                raise InvariantError(f"sweep {name!r} is not declared")

    def referenced_sweeps(self):
        used = []
        for ins in self.instructions:
            for _, _, value in _quantities(ins):
                if isinstance(value, SweepRef) and value.name not in used:
                    used.append(value.name)
        return used

    @property
    def nuclear_targets(self):
        return [ins.m_I for ins in self.instructions if isinstance(ins, InitNuclear)]

    def check_isotope(self, isotope):
        """Raise if an init target is not a level of the isotope"""
        for m_I in self.nuclear_targets:
            if m_I not in isotope.m_values:
                raise ExecutionError(
                    f"program references an undefined transition: m_I={m_I} "
                    f"is not a level of {isotope.kind.value}"
                )


# ---------------------------------------------------------------- tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<STRING>"(?:[^"\\]|\\.)*")
  | (?P<RANGE>\.\.)
  | (?P<NUMBER>[+-]?\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<REF>\$[A-Za-z_]\w*)
  | (?P<WORD>[A-Za-z_]\w*)
  | (?P<OP>[=(),])
  | (?P<COMMENT>\#.*)
  | (?P<SKIP>[ \t]+)
  | (?P<BAD>.)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    column: int


def _tokenize(line, line_no):
    tokens = []
    for match in _TOKEN_RE.finditer(line):
        kind = match.lastgroup
        if kind == "SKIP":
            continue
        if kind == "COMMENT":
            break
        if kind == "BAD":
            raise ParseError(line_no, match.start() + 1, f"unexpected character {match.group()!r}")
        tokens.append(_Token(kind, match.group(), match.start() + 1))
    return tokens


def _to_base(number, unit):
    """Decimal string and unit -> float in base units, exact in the decimal domain"""
    return float(Decimal(number).scaleb(UNITS[unit][1]))


class _LineParser:
    def __init__(self, tokens, line_no, line_length):
        self.tokens = tokens
        self.pos = 0
        self.line_no = line_no
        self.end_column = max(1, line_length)

    def error(self, message, token=None):
        column = token.column if token is not None else self.end_column
        return ParseError(self.line_no, column, message)

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, what):
        token = self.peek()
        if token is None:
            raise self.error(f"expected {what}")
        self.pos += 1
        return token

    def expect(self, kind, text=None, what=None):
        label = what or (repr(text) if text is not None else kind.lower())
        token = self.next(label)
        if token.kind != kind or (text is not None and token.text != text):
            raise self.error(f"expected {label}", token)
        return token

    def done(self):
        token = self.peek()
        if token is not None:
            raise self.error(f"unexpected {token.text!r}", token)

    def quantity(self, expected=None):
        number = self.next("quantity")
        if number.kind != "NUMBER" or "/" in number.text:
            raise self.error(f"malformed quantity {number.text!r}", number)
        if number.text.startswith("-"):
            raise self.error("quantities must be nonnegative", number)
        unit = self.peek()
        if unit is None or unit.kind != "WORD":
            raise self.error("malformed quantity: missing unit", unit)
        self.pos += 1
        if unit.text not in UNITS:
            raise self.error(f"malformed quantity: unknown unit {unit.text!r}", unit)
        dimension = UNITS[unit.text][0]
        if expected is not None and dimension is not expected:
            raise self.error(f"unit mismatch: expected {expected.value}", number)
        return _to_base(number.text.lstrip("+"), unit.text), dimension, number

    def count(self):
        token = self.next("grid point count")
        if token.kind != "NUMBER" or not token.text.isdigit():
            raise self.error("grid point count must be a positive integer", token)
        value = int(token.text)
        if value < 1:
            raise self.error("grid point count must be a positive integer", token)
        return value

    def grid_type(self):
        token = self.expect("WORD", what="'lin' or 'log'")
        try:
            return GridType(token.text)
        except ValueError:
            raise self.error("expected 'lin' or 'log'", token)

    def sweep_body(self, name_token, grid=None, inline=False):
        """LO..HI COUNT [grid]; grid precedes the bounds on a standalone line"""
        start, dimension, start_token = self.quantity()
        self.expect("RANGE", what="'..'")
        stop, stop_dimension, stop_token = self.quantity()
        if stop_dimension is not dimension:
            raise self.error("unit mismatch: sweep bounds have different units", stop_token)
        count = self.count()
        if inline:
            grid = self.grid_type()
        if grid is GridType.LOG and (start <= 0 or stop <= 0):
            raise self.error("log sweep bounds must be positive", start_token)
        return Sweep(name_token.text, grid, start, stop, count, dimension)


class _ProgramParser:
    def __init__(self, text):
        self.lines = text.replace("\r\n", "\n").split("\n")
        self.name = None
        self.field_T = None
        self.instructions = []
        self.sweeps = {}
        self.sweep_lines = {}
        self.refs = []  # (name, key, dimension, line, column)
        self.readout_seen = False
        self.init_seen = False

    def parse(self):
        ended = False
        last_line = 1
        for index, line in enumerate(self.lines, start=1):
            tokens = _tokenize(line, index)
            if not tokens:
                continue
            last_line = index
            if ended:
                raise ParseError(index, tokens[0].column, "content after 'end'")
            p = _LineParser(tokens, index, len(line))
            if self.name is None:
                self.header(p)
                continue
            keyword = tokens[0]
            if keyword.kind != "WORD":
                raise p.error(f"unknown keyword {keyword.text!r}", keyword)
            if keyword.text == "end":
                p.next("end")
                p.done()
                if not self.readout_seen:
                    raise p.error("program has no readout", keyword)
                ended = True
                continue
            handler = getattr(self, f"kw_{keyword.text}", None)
            if handler is None:
                raise p.error(f"unknown keyword {keyword.text!r}", keyword)
            if self.readout_seen and keyword.text in ("init", "laser", "rf", "wait", "readout"):
                raise p.error("readout must be the last instruction", keyword)
            p.next(keyword.text)
            handler(p, keyword)
            p.done()
        if self.name is None:
            raise ParseError(1, 1, "expected 'seq \"name\"' header")
        if not ended:
            raise ParseError(last_line, 1, "missing 'end'")
        self.check_sweeps()
        return PulseProgram(self.name, self.instructions, tuple(self.sweeps.values()), self.field_T)

    def header(self, p):
        p.expect("WORD", "seq", what="'seq \"name\"' header")
        token = p.expect("STRING", what="quoted program name")
        self.name = re.sub(r"\\(.)", r"\1", token.text[1:-1])
        if _CONTROL_CHARS.search(self.name):
            raise p.error("program name contains a control character", token)
        p.done()

    def declare(self, p, sweep, token):
        if sweep.name in self.sweeps:
            raise p.error(f"duplicate sweep name {sweep.name!r}", token)
        self.sweeps[sweep.name] = sweep
        self.sweep_lines[sweep.name] = (p.line_no, token.column)

    def value(self, p, key, dimension):
        token = p.peek()
        if token is None:
            raise p.error(f"expected value for {key}")
        if token.kind == "REF":
            p.pos += 1
            self.refs.append((token.text[1:], key, dimension, p.line_no, token.column))
            return SweepRef(token.text[1:])
        if token.kind == "WORD" and token.text == "sweep":
            p.pos += 1
            p.expect("OP", "(")
            name = p.expect("WORD", what="sweep name")
            p.expect("OP", ",")
            sweep = p.sweep_body(name, inline=True)
            p.expect("OP", ")")
            self.declare(p, sweep, name)
            self.refs.append((sweep.name, key, dimension, p.line_no, name.column))
            return SweepRef(sweep.name)
        quantity, _, _ = p.quantity(dimension)
        return quantity

    def keywords(self, p, fields):
        values = {}
        while p.peek() is not None:
            key = p.expect("WORD", what="parameter name")
            if key.text not in fields:
                raise p.error(f"unknown parameter {key.text!r}", key)
            if key.text in values:
                raise p.error(f"duplicate parameter {key.text!r}", key)
            p.expect("OP", "=")
            values[key.text] = self.value(p, key.text, fields[key.text])
        missing = [k for k in fields if k not in values]
        if missing:
            raise p.error(f"missing parameter {missing[0]!r}")
        return values

    def kw_field(self, p, keyword):
        if self.field_T is not None:
            raise p.error("duplicate field directive", keyword)
        if self.instructions:
            raise p.error("field must precede all instructions", keyword)
        p.expect("WORD", "B", what="'B'")
        p.expect("OP", "=")
        self.field_T, _, _ = p.quantity(Dimension.FIELD)

    def kw_sweep(self, p, keyword):
        name = p.expect("WORD", what="sweep name")
        grid = p.grid_type()
        self.declare(p, p.sweep_body(name, grid=grid), name)

    def kw_init(self, p, keyword):
        p.expect("WORD", "nuclear", what="'nuclear'")
        p.expect("WORD", "m_I", what="'m_I'")
        p.expect("OP", "=")
        token = p.expect("NUMBER", what="nuclear spin projection")
        if "." in token.text:
            raise p.error("m_I must be an integer or half-integer", token)
        m_I = Fraction(token.text)
        if m_I.denominator not in (1, 2):
            raise p.error("m_I must be an integer or half-integer", token)
        self.init_seen = True
        self.instructions.append(InitNuclear(m_I))

    def kw_laser(self, p, keyword):
        color = p.expect("WORD", what="'red' or 'green'")
        try:
            laser = LaserColor(color.text)
        except ValueError:
            raise p.error("expected 'red' or 'green'", color)
        values = self.keywords(p, _FIELDS[LaserPulse])
        self.instructions.append(LaserPulse(laser, values["power"], values["duration"]))

    def kw_rf(self, p, keyword):
        if not self.init_seen:
            raise p.error("rf pulse before nuclear initialization", keyword)
        values = self.keywords(p, _FIELDS[RfPulse])
        if not isinstance(values["freq"], SweepRef) and values["freq"] <= 0:
            raise p.error("rf frequency must be > 0", keyword)
        self.instructions.append(RfPulse(values["freq"], values["rabi"], values["duration"]))

    def kw_wait(self, p, keyword):
        values = self.keywords(p, _FIELDS[Wait])
        self.instructions.append(Wait(values["duration"]))

    def kw_readout(self, p, keyword):
        self.readout_seen = True
        self.instructions.append(Readout())

    def check_sweeps(self):
        used = set()
        for name, key, dimension, line, column in self.refs:
            sweep = self.sweeps.get(name)
            if sweep is None:
                raise ParseError(line, column, f"undefined sweep {name!r}")
            if sweep.dimension is not dimension:
                raise ParseError(
                    line, column,
                    f"unit mismatch: sweep {name!r} is {sweep.dimension.value}, expected {dimension.value}",
                )
            if key == "freq" and min(sweep.start, sweep.stop) <= 0:
                raise ParseError(line, column, "rf frequency must be > 0")
            used.add(name)
        for name, (line, column) in self.sweep_lines.items():
            if name not in used:
                raise ParseError(line, column, f"sweep {name!r} is never used")


def parse(text):
    """Parse pulse-program text; raises ParseError with line and column"""
    return _ProgramParser(text).parse()


def parse_quantity(text, dimension=None):
    """'120us' -> 0.00012 (base units); used for command-line values"""
    tokens = _tokenize(text, 1)
    p = _LineParser(tokens, 1, len(text))
    value, _, _ = p.quantity(dimension)
    p.done()
    return value


def load_program(path):
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    program = parse(text)
    logger.info("parsed %s: %d instructions, %d sweeps", path.name, len(program.instructions), len(program.sweeps))
    return program


# --------------------------------------------------------------- serializer

def format_quantity(value, dimension):
    """Largest unit whose magnitude is >= 1, e.g. 2e6 Hz -> '2MHz'"""
    exact = Decimal(repr(float(value)))
    units = sorted(
        ((name, exp) for name, (dim, exp) in UNITS.items() if dim is dimension),
        key=lambda item: item[1],
        reverse=True,
    )
    chosen = units[-1]
    if exact != 0:
        for name, exp in units:
            if abs(exact.scaleb(-exp)) >= 1:
                chosen = (name, exp)
                break
    else:
        chosen = next(u for u in units if u[1] == 0)
    scaled = exact.scaleb(-chosen[1]).normalize()
    return f"{scaled:f}{chosen[0]}"


def _format_value(value, dimension):
    if isinstance(value, SweepRef):
        return f"${value.name}"
    return format_quantity(value, dimension)


def _format_instruction(ins):
    if isinstance(ins, InitNuclear):
        return f"init nuclear m_I={ins.m_I}"
    if isinstance(ins, Readout):
        return "readout"
    head = {LaserPulse: lambda i: f"laser {i.color.value}", RfPulse: lambda i: "rf", Wait: lambda i: "wait"}
    parts = [head[type(ins)](ins)]
    for key, dim, value in _quantities(ins):
        parts.append(f"{key}={_format_value(value, dim)}")
    return " ".join(parts)


def serialize(program):
    """Canonical text: LF line endings, standalone sweep lines in declared order"""
    name = program.name.replace("\\", "\\\\").replace('"', '\\"')
    lines = [f'seq "{name}"']
    if program.field_T is not None:
        lines.append(f"field B={format_quantity(program.field_T, Dimension.FIELD)}")
    for sweep in program.sweeps:
        lines.append(
            f"sweep {sweep.name} {sweep.grid.value} "
            f"{format_quantity(sweep.start, sweep.dimension)}..{format_quantity(sweep.stop, sweep.dimension)} "
            f"{sweep.count}"
        )
    lines.extend(_format_instruction(ins) for ins in program.instructions)
    lines.append("end")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ sweeps

def _substitute(ins, values):
    if not _FIELDS.get(type(ins)):
        return ins
    changes = {}
    for key, _, value in _quantities(ins):
        if isinstance(value, SweepRef):
            changes[_ATTR.get(key, key)] = float(values[value.name])
    return replace(ins, **changes) if changes else ins


def expand_sweeps(program):
    """Concrete programs over the sweep grid, first-declared sweep outermost"""
    if len(program.sweeps) > MAX_SWEEP_DIMENSIONS:
        raise UsageError(f"{len(program.sweeps)} sweep dimensions (at most {MAX_SWEEP_DIMENSIONS})")
    if not program.sweeps:
        return [program]
    grids = [sweep.values() for sweep in program.sweeps]
    names = [sweep.name for sweep in program.sweeps]
    expanded = []
    for combo in itertools.product(*grids):
        values = dict(zip(names, combo))
        instructions = [_substitute(ins, values) for ins in program.instructions]
        expanded.append(
            PulseProgram(
                program.name, instructions, (), program.field_T,
                point=tuple((name, float(values[name])) for name in names),
            )
        )
    logger.debug("expanded %s into %d programs", program.name, len(expanded))
    return expanded
