"""SMT-LIB v2 encoding of the car-following safety queries, plus parsing of
solver verdicts and counterexample models.

The unsafe-transition query asks for a state where some follower-leader pair
has barrier B >= 0 while dB/dt < 0. With g = x_{i-1} - x_i - L and
d = v_i - v_{i-1}, both asserted positive, the conditions are encoded
division-free:

    B >= 0      becomes   T_safe * d <= g
    dB/dt < 0   becomes   -(d * d) < g * (a_i - a_{i-1})

(multiplying through by d and d^2, both positive). This keeps every query in
polynomial arithmetic (QF_NRA), which solvers decide far more reliably than
formulas with symbolic division. The closed-loop variant adds, per pair, the
safety-filter constraint a_i * g <= a_{i-1} * g - d * d, the division-free
form of a_f <= a_l - d^2/g; it makes the same goal unsatisfiable.

Vehicle 0 is the lead vehicle; symbols are named ``x_<i>``, ``v_<i>``,
``a_<i>`` so emitted queries and golden files stay stable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from typing import Iterator, Union

from .kinematics import BarrierParams

Expr = tuple
"""Constraint expression: ("num", float) | ("sym", str) | (op, *children)
with op in {"add", "sub", "neg", "mul", "le", "lt", "eq", "and", "or"}."""


class InvalidSpec(ValueError):
    """Query specification cannot produce a well-formed constraint system."""


class ParseError(ValueError):
    """Solver output does not match the accepted grammar."""

    def __init__(self, message: str, offset: int) -> None:
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class MissingModel(ValueError):
    """Solver answered sat but no model block followed."""


class IncompleteModel(KeyError):
    """A declared symbol is absent from the model."""


def num(value: float) -> Expr:
    return ("num", float(value))


def sym(name: str) -> Expr:
    return ("sym", name)


def add(*xs: Expr) -> Expr:
    return ("add", *xs)


def sub(a: Expr, b: Expr) -> Expr:
    return ("sub", a, b)


def neg(a: Expr) -> Expr:
    return ("neg", a)


def mul(a: Expr, b: Expr) -> Expr:
    return ("mul", a, b)


def le(a: Expr, b: Expr) -> Expr:
    return ("le", a, b)


def lt(a: Expr, b: Expr) -> Expr:
    return ("lt", a, b)


def eq(a: Expr, b: Expr) -> Expr:
    return ("eq", a, b)


def and_(*xs: Expr) -> Expr:
    return ("and", *xs)


def or_(*xs: Expr) -> Expr:
    return ("or", *xs)


_SMT_OPS = {
    "add": "+",
    "sub": "-",
    "neg": "-",
    "mul": "*",
    "le": "<=",
    "lt": "<",
    "eq": "=",
    "and": "and",
    "or": "or",
}


def format_real(value: float) -> str:
    """Exact decimal text for a float, as SMT-LIB wants it: always with a
    fractional part, negatives wrapped as (- c)."""
    if value < 0.0:
        return f"(- {format_real(-value)})"
    text = format(Decimal(repr(value)), "f")
    if "." not in text:
        text += ".0"
    return text


def to_smt(expr: Expr) -> str:
    head = expr[0]
    if head == "num":
        return format_real(expr[1])
    if head == "sym":
        return expr[1]
    op = _SMT_OPS[head]
    args = " ".join(to_smt(child) for child in expr[1:])
    return f"({op} {args})"


def evaluate(expr: Expr, env: dict[str, float], eps: float) -> Union[float, bool]:
    """Native-arithmetic evaluation of an expression under a model.

    Comparisons get eps of slack so that exact rational models survive the
    round trip through floating point.
    """
    head = expr[0]
    if head == "num":
        return expr[1]
    if head == "sym":
        name = expr[1]
        if name not in env:
            raise IncompleteModel(name)
        return env[name]
    args = [evaluate(child, env, eps) for child in expr[1:]]
    if head == "add":
        return sum(args)
    if head == "sub":
        return args[0] - args[1]
    if head == "neg":
        return -args[0]
    if head == "mul":
        return args[0] * args[1]
    if head == "le":
        return args[0] <= args[1] + eps
    if head == "lt":
        return args[0] < args[1] + eps
    if head == "eq":
        return abs(args[0] - args[1]) <= eps
    if head == "and":
        return all(args)
    if head == "or":
        return any(args)
    raise ValueError(f"unknown expression head: {head!r}")


def symbols_of(expr: Expr) -> Iterator[str]:
    head = expr[0]
    if head == "sym":
        yield expr[1]
    elif head != "num":
        for child in expr[1:]:
            yield from symbols_of(child)


class QueryMode(Enum):
    OPEN_LOOP = "open"
    CLOSED_LOOP = "closed"


@dataclass(frozen=True)
class StateBounds:
    """Box bounds on positions and velocities, beyond strict positivity.

    Lower bounds are strict, upper bounds inclusive; the defaults keep
    counterexamples physically plausible without constraining anything a
    highway cannot reach.
    """

    x_min: float = 0.0
    x_max: float = 10000.0
    v_min: float = 0.0
    v_max: float = 60.0

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.v_min < self.v_max):
            raise ValueError(f"bounds must be non-empty intervals: {self}")


@dataclass(frozen=True)
class QuerySpec:
    """Parameters of one verification query over n vehicles.

    ``length`` is the numeric value substituted for the vehicle length L in
    the gap terms; it is configuration, not a solver variable.
    """

    n: int
    mode: QueryMode = QueryMode.OPEN_LOOP
    params: BarrierParams = field(default_factory=BarrierParams)
    bounds: StateBounds = field(default_factory=StateBounds)
    length: float = 5.0


@dataclass(frozen=True)
class ConstraintSystem:
    """Declarations, assertions and the existential counterexample goal.

    Assertions use only {+, -, *, <=, <, =, and, or}; division never
    appears (see module docstring), which the emitter relies on.
    """

    declarations: tuple[str, ...]
    assertions: tuple[Expr, ...]
    goal: Expr | None

    def validate(self) -> None:
        declared = set(self.declarations)
        exprs = list(self.assertions)
        if self.goal is not None:
            exprs.append(self.goal)
        for expr in exprs:
            for name in symbols_of(expr):
                if name not in declared:
                    raise InvalidSpec(f"symbol {name!r} used but not declared")


def _symbols(n: int) -> tuple[list[str], list[str], list[str]]:
    xs = [f"x_{i}" for i in range(n)]
    vs = [f"v_{i}" for i in range(n)]
    accs = [f"a_{i}" for i in range(n)]
    return xs, vs, accs


def _pair_gap(spec: QuerySpec, i: int) -> Expr:
    # g_i = x_{i-1} - x_i - L
    return sub(sub(sym(f"x_{i - 1}"), sym(f"x_{i}")), num(spec.length))


def _pair_closing(i: int) -> Expr:
    # d_i = v_i - v_{i-1}
    return sub(sym(f"v_{i}"), sym(f"v_{i - 1}"))


def _base_assertions(spec: QuerySpec) -> list[Expr]:
    p = spec.params
    b = spec.bounds
    assertions: list[Expr] = []
    for i in range(spec.n):
        x, v, a = sym(f"x_{i}"), sym(f"v_{i}"), sym(f"a_{i}")
        assertions.append(
            and_(
                lt(num(b.x_min), x),
                le(x, num(b.x_max)),
                lt(num(b.v_min), v),
                le(v, num(b.v_max)),
            )
        )
        assertions.append(and_(le(num(p.a_min), a), le(a, num(p.a_max))))
    for i in range(1, spec.n):
        assertions.append(lt(sym(f"x_{i}"), sym(f"x_{i - 1}")))
        assertions.append(lt(sym(f"v_{i - 1}"), sym(f"v_{i}")))
        assertions.append(lt(num(0.0), _pair_gap(spec, i)))
    return assertions


def _goal(spec: QuerySpec) -> Expr:
    terms = []
    for i in range(1, spec.n):
        g = _pair_gap(spec, i)
        d = _pair_closing(i)
        da = sub(sym(f"a_{i}"), sym(f"a_{i - 1}"))
        b_nonneg = le(mul(num(spec.params.t_safe), d), g)
        bdot_neg = lt(neg(mul(d, d)), mul(g, da))
        terms.append(and_(b_nonneg, bdot_neg))
    return terms[0] if len(terms) == 1 else or_(*terms)


def build_open_loop_query(spec: QuerySpec) -> ConstraintSystem:
    """Unsafe-transition query for followers free to pick any bounded
    acceleration: sat means a state with B >= 0 and dB/dt < 0 exists."""
    if spec.n < 2:
        raise InvalidSpec(f"need at least 2 vehicles for a pair, got n={spec.n}")
    xs, vs, accs = _symbols(spec.n)
    system = ConstraintSystem(
        declarations=tuple(xs + vs + accs),
        assertions=tuple(_base_assertions(spec)),
        goal=_goal(spec),
    )
    system.validate()
    return system


def build_closed_loop_query(spec: QuerySpec) -> ConstraintSystem:
    """Same goal with the safety filter asserted for every pair; unsat means
    the filtered system admits no barrier-decreasing state on B >= 0."""
    if spec.n < 2:
        raise InvalidSpec(f"need at least 2 vehicles for a pair, got n={spec.n}")
    xs, vs, accs = _symbols(spec.n)
    assertions = _base_assertions(spec)
    for i in range(1, spec.n):
        g = _pair_gap(spec, i)
        d = _pair_closing(i)
        assertions.append(
            le(
                mul(sym(f"a_{i}"), g),
                sub(mul(sym(f"a_{i - 1}"), g), mul(d, d)),
            )
        )
    system = ConstraintSystem(
        declarations=tuple(xs + vs + accs),
        assertions=tuple(assertions),
        goal=_goal(spec),
    )
    system.validate()
    return system


def build_query(spec: QuerySpec) -> ConstraintSystem:
    if spec.mode is QueryMode.CLOSED_LOOP:
        return build_closed_loop_query(spec)
    return build_open_loop_query(spec)


def emit_smtlib(system: ConstraintSystem) -> str:
    """Deterministic SMT-LIB v2 text for a constraint system.

    Byte-stable: one line per declaration/assertion in system order, exact
    decimal numerals, trailing newline.
    """
    lines = ["(set-logic QF_NRA)"]
    for name in system.declarations:
        lines.append(f"(declare-const {name} Real)")
    for assertion in system.assertions:
        lines.append(f"(assert {to_smt(assertion)})")
    if system.goal is not None:
        lines.append(f"(assert {to_smt(system.goal)})")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ModelAssignment:
    """Symbol-to-value map extracted from a sat answer; values are exact
    rationals as printed by the solver."""

    values: dict[str, Fraction]

    def as_floats(self) -> dict[str, float]:
        return {name: float(v) for name, v in self.values.items()}

    def __getitem__(self, name: str) -> Fraction:
        return self.values[name]

    def __contains__(self, name: str) -> bool:
        return name in self.values


@dataclass(frozen=True)
class SolverResponse:
    status: str  # "sat" | "unsat" | "unknown"
    model: ModelAssignment | None = None


_TOKEN_RE = re.compile(rb'\(|\)|"(?:[^"\\]|\\.)*"|;[^\n]*|[^\s()";]+')
_NUMERAL_RE = re.compile(r"^-?\d+(\.\d+)?$")


def _tokenize(data: bytes) -> Iterator[tuple[str, int]]:
    for m in _TOKEN_RE.finditer(data):
        tok = m.group(0)
        if tok.startswith(b";"):
            continue
        yield tok.decode("utf-8", errors="replace"), m.start()


def _read_sexprs(tokens: list[tuple[str, int]]):
    """Parse a token stream into nested lists; atoms stay (text, offset)."""
    items = []
    stack = [items]
    for tok, offset in tokens:
        if tok == "(":
            new: list = []
            stack[-1].append(new)
            stack.append(new)
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", offset)
            stack.pop()
        else:
            stack[-1].append((tok, offset))
    if len(stack) != 1:
        raise ParseError("unclosed '('", tokens[-1][1] if tokens else 0)
    return items


def _parse_value(node) -> Fraction:
    if isinstance(node, tuple):
        text, offset = node
        if _NUMERAL_RE.match(text):
            return Fraction(text)
        raise ParseError(f"expected a numeric literal, got {text!r}", offset)
    if not node:
        raise ParseError("empty value expression", 0)
    head = node[0]
    if isinstance(head, tuple) and head[0] == "-" and len(node) == 2:
        return -_parse_value(node[1])
    if isinstance(head, tuple) and head[0] == "/" and len(node) == 3:
        return _parse_value(node[1]) / _parse_value(node[2])
    offset = head[1] if isinstance(head, tuple) else 0
    text = head[0] if isinstance(head, tuple) else "(...)"
    raise ParseError(f"unsupported value expression starting with {text!r}", offset)


def _parse_model_block(block) -> ModelAssignment:
    entries = block
    if entries and isinstance(entries[0], tuple) and entries[0][0] == "model":
        entries = entries[1:]
    values: dict[str, Fraction] = {}
    for entry in entries:
        if not isinstance(entry, list) or not entry:
            continue
        head = entry[0]
        if not (isinstance(head, tuple) and head[0] == "define-fun"):
            continue
        if len(entry) != 5:
            offset = head[1]
            raise ParseError("malformed define-fun entry", offset)
        name_node, args_node, _sort_node, value_node = entry[1:]
        if not isinstance(name_node, tuple):
            raise ParseError("define-fun name must be an atom", head[1])
        if args_node != []:
            continue  # only zero-arity constants carry model values we use
        values[name_node[0]] = _parse_value(value_node)
    return ModelAssignment(values)


def parse_solver_output(text: str) -> SolverResponse:
    """Parse the full stdout of an SMT-LIB-compliant solver.

    The first bare ``sat``/``unsat``/``unknown`` token decides the status;
    on sat the following parenthesized block is read as the model,
    accepting integer, decimal, negated and rational literals.
    """
    data = text.encode("utf-8", errors="replace") if isinstance(text, str) else text
    tokens = list(_tokenize(data))
    items = _read_sexprs(tokens)
    status = None
    rest = []
    for idx, item in enumerate(items):
        if isinstance(item, tuple) and item[0] in ("sat", "unsat", "unknown"):
            status = item[0]
            rest = items[idx + 1 :]
            break
    if status is None:
        raise ParseError("no sat/unsat/unknown status token found", len(data))
    if status != "sat":
        return SolverResponse(status)
    for item in rest:
        if isinstance(item, list):
            return SolverResponse("sat", _parse_model_block(item))
    raise MissingModel("solver answered sat but printed no model block")


def validate_counterexample(model: ModelAssignment, spec: QuerySpec) -> bool:
    """Check a model against the regenerated constraint system.

    True iff every assertion and the goal hold under native float
    arithmetic with eps slack. Guards against encoding bugs: a solver model
    that fails here means the emitted query and the intended semantics have
    drifted apart.
    """
    system = build_query(spec)
    env = {}
    for name in system.declarations:
        if name not in model:
            raise IncompleteModel(name)
        env[name] = float(model[name])
    eps = spec.params.eps
    for assertion in system.assertions:
        if not evaluate(assertion, env, eps):
            return False
    return bool(evaluate(system.goal, env, eps))
