"""Problem files, command line and sweep CSV output.

A problem file is a list of ``[section]`` blocks; polynomial expressions use
``+ - * / ^`` with the usual precedence and may refer to declared variables and
numeric parameters.  ``print(parse_problem(text))`` reparses to an equal
``ProblemFile``.  The grammar is documented in ``docs/problem_format.md``.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from . import boundengine, hbalance, sdpcore, simulate
from .boundengine import LOWER, UPPER, BoundQuery, BoundResult
from .dynsys import DynSystem, SemialgebraicSet
from .polyring import Polynomial
from .sdpcore import SolverOptions

JOBS_ENV = "SOSBOUND_JOBS"
SWEEP_COLUMNS = ("omega", "lower", "upper", "gap", "hb_R_1", "hb_R_2", "hb_R_3",
                 "hb_E_1", "hb_E_2", "hb_E_3", "status", "degree")
HB_COLUMNS = 3

EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_SOLVER = 3
EXIT_DIVERGENCE = 4


# ---------------------------------------------------------------------------
# errors

class ProblemError(ValueError):
    """Problem-file error with a 1-based source position (column 0 when unknown)."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        where = f"line {line}" + (f", column {col}" if col else "") if line else ""
        super().__init__(f"{where}: {message}" if where else message)
        self.message = message
        self.line = line
        self.col = col


class ProblemSyntaxError(ProblemError):
    pass


class UndeclaredVariable(ProblemError):
    def __init__(self, name: str, line: int = 0, col: int = 0):
        super().__init__(f"undeclared name {name!r}", line, col)
        self.name = name


class DuplicateField(ProblemError):
    pass


class MissingSection(ProblemError):
    pass


# ---------------------------------------------------------------------------
# expressions

@dataclass(frozen=True)
class Num:
    value: float
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Name:
    id: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Expr = Union[Num, Name, Neg, BinOp]

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}
_TOKEN = re.compile(r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)"
                    r"|(?P<op>\*\*|[-+*/^()]))")


def _tokenize(text: str, line: int, col0: int) -> List[Tuple[str, str, int]]:
    toks, pos = [], 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None:
            bad = len(text) - len(text[pos:].lstrip())
            raise ProblemSyntaxError(f"unexpected character {text[bad]!r}", line, col0 + bad)
        kind = m.lastgroup
        val = m.group(kind)
        toks.append((kind, "^" if val == "**" else val, col0 + m.start(kind)))
        pos = m.end()
    toks.append(("end", "", col0 + len(text.rstrip())))
    return toks


class _ExprParser:
    """``expr := term (('+'|'-') term)*``, ``term := unary (('*'|'/') unary)*``,
    ``unary := '-' unary | '+' unary | power``, ``power := atom ['^' exponent]``,
    ``exponent := '-' exponent | power``."""

    def __init__(self, text: str, line: int, col0: int):
        self.toks = _tokenize(text, line, col0)
        self.i = 0
        self.line = line

    def peek(self):
        return self.toks[self.i]

    def take(self):
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def fail(self, msg: str):
        raise ProblemSyntaxError(msg, self.line, self.peek()[2])

    def parse(self) -> Expr:
        if self.peek()[0] == "end":
            self.fail("expected an expression")
        e = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return e

    def expr(self) -> Expr:
        left = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            _, op, col = self.take()
            left = BinOp(op, left, self.term(), self.line, col)
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            _, op, col = self.take()
            left = BinOp(op, left, self.unary(), self.line, col)
        return left

    def unary(self) -> Expr:
        kind, val, col = self.peek()
        if kind == "op" and val in ("-", "+"):
            self.take()
            inner = self.unary()
            return Neg(inner, self.line, col) if val == "-" else inner
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek()[1] == "^" and self.peek()[0] == "op":
            _, _, col = self.take()
            return BinOp("^", base, self.exponent(), self.line, col)
        return base

    def exponent(self) -> Expr:
        kind, val, col = self.peek()
        if kind == "op" and val == "-":
            self.take()
            return Neg(self.exponent(), self.line, col)
        return self.power()

    def atom(self) -> Expr:
        kind, val, col = self.take()
        if kind == "num":
            return Num(float(val), self.line, col)
        if kind == "name":
            return Name(val, self.line, col)
        if kind == "op" and val == "(":
            e = self.expr()
            if self.peek()[1] != ")":
                self.fail("expected ')'")
            self.take()
            return e
        self.i -= 1
        self.fail("expected a number, name or '('" if kind != "end" else "expression ended early")
        raise AssertionError


def parse_expression(text: str, line: int = 1, col0: int = 1) -> Expr:
    return _ExprParser(text, line, col0).parse()


def _prec(e: Expr) -> int:
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return _PREC["neg"]
    return _PREC["atom"]


def _fmt_num(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def format_expression(e: Expr) -> str:
    """Minimal parenthesization that reparses to the same tree."""
    if isinstance(e, Num):
        return _fmt_num(e.value)
    if isinstance(e, Name):
        return e.id
    if isinstance(e, Neg):
        inner = format_expression(e.operand)
        return "-" + (inner if _prec(e.operand) >= _PREC["neg"] else f"({inner})")
    left, right = format_expression(e.left), format_expression(e.right)
    p = _PREC[e.op]
    if e.op == "^":
        if _prec(e.left) < _PREC["atom"]:
            left = f"({left})"
        if _prec(e.right) < p and not isinstance(e.right, Neg):
            right = f"({right})"
        return f"{left}^{right}"
    if _prec(e.left) < p:
        left = f"({left})"
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {e.op} {right}"


def expression_names(e: Expr):
    if isinstance(e, Name):
        yield e
    elif isinstance(e, Neg):
        yield from expression_names(e.operand)
    elif isinstance(e, BinOp):
        yield from expression_names(e.left)
        yield from expression_names(e.right)


def evaluate_expression(e: Expr, env: Mapping[str, Union[float, Polynomial]]):
    """Float when ``e`` only involves parameters, otherwise a Polynomial."""
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Name):
        if e.id not in env:
            raise UndeclaredVariable(e.id, e.line, e.col)
        return env[e.id]
    if isinstance(e, Neg):
        return -evaluate_expression(e.operand, env)
    a = evaluate_expression(e.left, env)
    b = evaluate_expression(e.right, env)
    if e.op == "+":
        return a + b
    if e.op == "-":
        return a - b
    if e.op == "*":
        return b * a if isinstance(b, Polynomial) and not isinstance(a, Polynomial) else a * b
    if isinstance(b, Polynomial):
        if b.degree() > 0:
            raise ProblemSyntaxError("only constants may appear in a denominator or exponent", e.line, e.col)
        b = b.constant_term()
    if e.op == "/":
        if b == 0:
            raise ProblemSyntaxError("division by zero", e.line, e.col)
        return a / b
    if not (float(b).is_integer() and b >= 0):
        raise ProblemSyntaxError("exponent must be a non-negative integer", e.line, e.col)
    return a ** int(b)


# ---------------------------------------------------------------------------
# problem files

@dataclass(frozen=True)
class Constraint:
    lhs: Expr
    op: str
    rhs: Expr

    @property
    def is_equality(self) -> bool:
        return self.op == "="


@dataclass(frozen=True)
class SweepSpec:
    param: str
    start: float
    stop: float
    step: float
    degrees: Tuple[int, ...] = ()
    simulate: int = 0
    seed: int = 0

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("sweep step must be positive")
        if self.stop < self.start:
            raise ValueError("sweep stop is below start")

    def grid(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9))
        return np.round(self.start + self.step * np.arange(n + 1), 12)


_SOLVER_KEYS = {"gap_tol": float, "feas_tol": float, "max_iter": int, "polish": bool,
                "equality_mode": str, "symmetry": bool, "scale": "scale"}
_SECTIONS = ("parameters", "variables", "field", "constraints", "observable", "objective",
             "degrees", "solver", "sweep", "metadata")
_REQUIRED = ("variables", "field", "observable")


@dataclass(frozen=True)
class ProblemFile:
    variables: Tuple[str, ...]
    field: Tuple[Expr, ...]
    observable: Expr
    parameters: Tuple[Tuple[str, Expr], ...] = ()
    constraints: Tuple[Constraint, ...] = ()
    direction: str = UPPER
    v_degree: int = 2
    multiplier_degree: Optional[int] = None
    solver: Tuple[Tuple[str, object], ...] = ()
    sweep: Optional[SweepSpec] = None
    metadata: Tuple[Tuple[str, str], ...] = ()

    # parameters and polynomials ------------------------------------------

    def parameter_values(self, overrides: Optional[Mapping[str, float]] = None) -> Dict[str, float]:
        """Parameters in file order; later ones may use earlier ones; overrides replace definitions."""
        overrides = dict(overrides or {})
        unknown = set(overrides) - {n for n, _ in self.parameters}
        if unknown:
            raise UndeclaredVariable(sorted(unknown)[0])
        env: Dict[str, float] = {}
        for name, e in self.parameters:
            env[name] = float(overrides[name]) if name in overrides else float(evaluate_expression(e, env))
        return env

    def _env(self, values: Mapping[str, float]) -> Dict[str, object]:
        env: Dict[str, object] = dict(values)
        env.update(zip(self.variables, Polynomial.variables(len(self.variables))))
        return env

    def _poly(self, e: Expr, env) -> Polynomial:
        v = evaluate_expression(e, env)
        return v if isinstance(v, Polynomial) else Polynomial.constant(float(v), len(self.variables))

    def system(self, overrides: Optional[Mapping[str, float]] = None) -> DynSystem:
        values = self.parameter_values(overrides)
        env = self._env(values)
        f = tuple(self._poly(e, env) for e in self.field)
        ineq, eq = [], []
        for c in self.constraints:
            p = self._poly(c.lhs, env) - self._poly(c.rhs, env)
            if c.op == "=":
                eq.append(p)
            elif c.op == ">=":
                ineq.append(p)
            else:
                ineq.append(-p)
        meta: Dict[str, object] = dict(values)
        meta.update(self.meta)
        return DynSystem(self.variables, f, SemialgebraicSet(tuple(ineq), tuple(eq)), meta)

    def observable_poly(self, overrides: Optional[Mapping[str, float]] = None) -> Polynomial:
        return self._poly(self.observable, self._env(self.parameter_values(overrides)))

    @property
    def meta(self) -> Dict[str, str]:
        return dict(self.metadata)

    @property
    def solver_options(self) -> Dict[str, object]:
        return dict(self.solver)

    def query(self, direction: Optional[str] = None, degree: Optional[int] = None,
              overrides: Optional[Mapping[str, float]] = None) -> BoundQuery:
        opts = self.solver_options
        sopts = SolverOptions(**{k: opts[k] for k in ("gap_tol", "feas_tol", "max_iter", "polish") if k in opts})
        extra = {k: opts[k] for k in ("equality_mode", "symmetry", "scale") if k in opts}
        return BoundQuery(self.system(overrides), self.observable_poly(overrides), direction or self.direction,
                          degree or self.v_degree, multiplier_degree=self.multiplier_degree, solver=sopts, **extra)

    # printing ----------------------------------------------------------------

    def to_text(self) -> str:
        out: List[str] = []
        if self.parameters:
            out.append("[parameters]")
            out += [f"{n} = {format_expression(e)}" for n, e in self.parameters]
            out.append("")
        out += ["[variables]", ", ".join(self.variables), "", "[field]"]
        out += [f"d{v}/dt = {format_expression(e)}" for v, e in zip(self.variables, self.field)]
        out.append("")
        if self.constraints:
            out.append("[constraints]")
            out += [f"{format_expression(c.lhs)} {c.op} {format_expression(c.rhs)}" for c in self.constraints]
            out.append("")
        out += ["[observable]", format_expression(self.observable), ""]
        out += ["[objective]", f"direction = {self.direction}", ""]
        mult = "auto" if self.multiplier_degree is None else str(self.multiplier_degree)
        out += ["[degrees]", f"V = {self.v_degree}", f"multipliers = {mult}", ""]
        if self.solver:
            out.append("[solver]")
            out += [f"{k} = {_fmt_option(v)}" for k, v in self.solver]
            out.append("")
        if self.sweep is not None:
            s = self.sweep
            out += ["[sweep]", f"param = {s.param}", f"start = {_fmt_num(s.start)}", f"stop = {_fmt_num(s.stop)}",
                    f"step = {_fmt_num(s.step)}"]
            if s.degrees:
                out.append("degrees = " + ", ".join(str(d) for d in s.degrees))
            if s.simulate:
                out.append(f"simulate = {s.simulate}")
            out += [f"seed = {s.seed}", ""]
        if self.metadata:
            out.append("[metadata]")
            out += [f"{k} = {v}" for k, v in self.metadata]
            out.append("")
        return "\n".join(out)

    def __str__(self) -> str:
        return self.to_text()


def _fmt_option(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, float):
        return _fmt_num(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt_num(float(x)) for x in v)
    return str(v)


_SECTION = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_KEYVAL = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")
_FIELD = re.compile(r"^(?:d([A-Za-z_]\w*)\s*/\s*dt|([A-Za-z_]\w*)\s*')\s*=\s*(.*)$")
_COMPARE = re.compile(r">=|<=|==|=")
_NAME = re.compile(r"^[A-Za-z_]\w*$")


@dataclass
class _Line:
    no: int
    text: str
    col: int  # 1-based column of the first character of ``text``


def _strip_comment(raw: str) -> str:
    k = raw.find("#")
    return raw if k < 0 else raw[:k]


def _split_sections(text: str) -> Dict[str, Tuple[int, List[_Line]]]:
    sections: Dict[str, Tuple[int, List[_Line]]] = {}
    current: Optional[str] = None
    for no, raw in enumerate(text.splitlines(), start=1):
        body = _strip_comment(raw).rstrip()
        stripped = body.strip()
        if not stripped:
            continue
        col = len(body) - len(body.lstrip()) + 1
        m = _SECTION.match(stripped)
        if m:
            name = m.group(1).lower()
            if name not in _SECTIONS:
                raise ProblemSyntaxError(f"unknown section [{name}]", no, col)
            if name in sections:
                raise DuplicateField(f"section [{name}] appears twice", no, col)
            sections[name] = (no, [])
            current = name
            continue
        if current is None:
            raise ProblemSyntaxError("text before the first [section]", no, col)
        sections[current][1].append(_Line(no, stripped, col))
    return sections


def _keyvals(lines: List[_Line], allowed: Optional[Sequence[str]] = None) -> Dict[str, Tuple[str, _Line, int]]:
    out: Dict[str, Tuple[str, _Line, int]] = {}
    for ln in lines:
        m = _KEYVAL.match(ln.text)
        if not m:
            raise ProblemSyntaxError("expected 'key = value'", ln.no, ln.col)
        key = m.group(1)
        if allowed is not None and key not in allowed:
            raise ProblemSyntaxError(f"unknown key {key!r}", ln.no, ln.col)
        if key in out:
            raise DuplicateField(f"{key!r} given twice", ln.no, ln.col)
        out[key] = (m.group(2).strip(), ln, ln.col + m.start(2))
    return out


def _number(text: str, ln: _Line, col: int, kind=float):
    try:
        v = float(text)
    except ValueError:
        raise ProblemSyntaxError(f"expected a number, got {text!r}", ln.no, col) from None
    if kind is int:
        if not v.is_integer():
            raise ProblemSyntaxError(f"expected an integer, got {text!r}", ln.no, col)
        return int(v)
    return v


def _bool(text: str, ln: _Line, col: int) -> bool:
    t = text.lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ProblemSyntaxError(f"expected true or false, got {text!r}", ln.no, col)


def _solver_value(key: str, text: str, ln: _Line, col: int):
    kind = _SOLVER_KEYS[key]
    if kind is bool:
        return _bool(text, ln, col)
    if kind is str:
        return text
    if kind == "scale":
        if text.lower() in ("auto", "none"):
            return None if text.lower() == "none" else "auto"
        return tuple(_number(t.strip(), ln, col) for t in text.split(","))
    return _number(text, ln, col, kind)


def parse_problem(text: str) -> ProblemFile:
    """Parse problem-file text; errors carry the offending line and column."""
    sections = _split_sections(text)
    for name in _REQUIRED:
        if name not in sections:
            raise MissingSection(f"missing [{name}] section")

    params: List[Tuple[str, Expr]] = []
    for key, (val, ln, col) in _keyvals(sections.get("parameters", (0, []))[1]).items():
        params.append((key, parse_expression(val, ln.no, col)))

    variables: List[str] = []
    for ln in sections["variables"][1]:
        for part in ln.text.split(","):
            name = part.strip()
            col = ln.col + ln.text.find(part) + len(part) - len(part.lstrip())
            if not _NAME.match(name):
                raise ProblemSyntaxError(f"bad variable name {name!r}", ln.no, col)
            if name in variables:
                raise DuplicateField(f"variable {name!r} declared twice", ln.no, col)
            variables.append(name)
    if not variables:
        raise MissingSection("[variables] declares nothing", sections["variables"][0])
    clash = set(variables) & {n for n, _ in params}
    if clash:
        raise DuplicateField(f"{sorted(clash)[0]!r} is both a parameter and a variable", sections["variables"][0])

    fields: Dict[str, Expr] = {}
    for ln in sections["field"][1]:
        m = _FIELD.match(ln.text)
        if not m:
            raise ProblemSyntaxError("expected 'dx/dt = expression'", ln.no, ln.col)
        var = m.group(1) or m.group(2)
        if var not in variables:
            raise UndeclaredVariable(var, ln.no, ln.col + 1)
        if var in fields:
            raise DuplicateField(f"second equation for {var!r}", ln.no, ln.col)
        fields[var] = parse_expression(m.group(3), ln.no, ln.col + m.start(3))
    for v in variables:
        if v not in fields:
            raise MissingSection(f"no field equation for {v!r}", sections["field"][0])

    constraints: List[Constraint] = []
    for ln in sections.get("constraints", (0, []))[1]:
        ops = list(_COMPARE.finditer(ln.text))
        if len(ops) != 1:
            raise ProblemSyntaxError("expected exactly one of '>=', '<=', '='", ln.no, ln.col)
        m = ops[0]
        op = "=" if m.group() == "==" else m.group()
        lhs = parse_expression(ln.text[:m.start()], ln.no, ln.col)
        rhs = parse_expression(ln.text[m.end():], ln.no, ln.col + m.end())
        constraints.append(Constraint(lhs, op, rhs))

    obs_lines = sections["observable"][1]
    if len(obs_lines) != 1:
        raise ProblemSyntaxError("[observable] takes exactly one expression", sections["observable"][0])
    observable = parse_expression(obs_lines[0].text, obs_lines[0].no, obs_lines[0].col)

    direction = UPPER
    for key, (val, ln, col) in _keyvals(sections.get("objective", (0, []))[1], ("direction",)).items():
        if val not in (UPPER, LOWER):
            raise ProblemSyntaxError(f"direction must be upper or lower, got {val!r}", ln.no, col)
        direction = val

    v_degree, mult = 2, None
    for key, (val, ln, col) in _keyvals(sections.get("degrees", (0, []))[1], ("V", "multipliers")).items():
        if key == "V":
            v_degree = _number(val, ln, col, int)
            if v_degree < 1:
                raise ProblemSyntaxError("V degree must be at least 1", ln.no, col)
        elif val.lower() != "auto":
            mult = _number(val, ln, col, int)

    solver = tuple((k, _solver_value(k, v, ln, col))
                   for k, (v, ln, col) in _keyvals(sections.get("solver", (0, []))[1], tuple(_SOLVER_KEYS)).items())

    sweep = None
    if "sweep" in sections:
        kv = _keyvals(sections["sweep"][1], ("param", "start", "stop", "step", "degrees", "simulate", "seed"))
        for need in ("param", "start", "stop", "step"):
            if need not in kv:
                raise MissingSection(f"[sweep] needs {need!r}", sections["sweep"][0])
        pval, pln, pcol = kv["param"]
        if pval not in {n for n, _ in params}:
            raise UndeclaredVariable(pval, pln.no, pcol)
        degrees: Tuple[int, ...] = ()
        if "degrees" in kv:
            dval, dln, dcol = kv["degrees"]
            degrees = tuple(_number(t.strip(), dln, dcol, int) for t in dval.split(","))
        try:
            sweep = SweepSpec(pval, *(_number(*kv[k]) for k in ("start", "stop", "step")), degrees=degrees,
                              simulate=_number(*kv["simulate"], int) if "simulate" in kv else 0,
                              seed=_number(*kv["seed"], int) if "seed" in kv else 0)
        except ValueError as exc:
            if isinstance(exc, ProblemError):
                raise
            raise ProblemSyntaxError(str(exc), sections["sweep"][0]) from None

    metadata = tuple((k, v) for k, (v, _, _) in _keyvals(sections.get("metadata", (0, []))[1]).items())

    pf = ProblemFile(tuple(variables), tuple(fields[v] for v in variables), observable, tuple(params),
                     tuple(constraints), direction, v_degree, mult, solver, sweep, metadata)
    _check_names(pf)
    return pf


def _check_names(pf: ProblemFile) -> None:
    declared_params: List[str] = []
    for name, e in pf.parameters:
        for n in expression_names(e):
            if n.id not in declared_params:
                raise UndeclaredVariable(n.id, n.line, n.col)
        declared_params.append(name)
    known = set(declared_params) | set(pf.variables)
    exprs = list(pf.field) + [pf.observable]
    for c in pf.constraints:
        exprs += [c.lhs, c.rhs]
    for e in exprs:
        for n in expression_names(e):
            if n.id not in known:
                raise UndeclaredVariable(n.id, n.line, n.col)


def bundled_problems() -> List[str]:
    root = resources.files("sosbound") / "problems"
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".prob"))


def read_problem_text(path: str) -> str:
    """Read ``path``, falling back to the bundled problem of that name."""
    p = Path(path)
    if p.exists():
        return p.read_text(encoding="utf-8")
    name = p.name if p.suffix == ".prob" else p.name + ".prob"
    ref = resources.files("sosbound") / "problems" / name
    if ref.is_file():
        return ref.read_text(encoding="utf-8")
    raise FileNotFoundError(f"no problem file {path!r} (bundled: {', '.join(bundled_problems())})")


def load_problem(path: str) -> ProblemFile:
    return parse_problem(read_problem_text(path))


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepRow:
    omega: float
    degree: int
    lower: float
    upper: float
    status: str
    hb_R: List[float] = field(default_factory=list)
    hb_E: List[float] = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.upper - self.lower


@dataclass
class SpotCheck:
    omega: float
    count: int
    diverged: int
    lo: float
    hi: float


def hb_columns(pf: ProblemFile, values: Mapping[str, float], omega: float) -> Tuple[List[float], List[float]]:
    """Harmonic-balance amplitudes and observable means for registered presets, else empty."""
    preset = pf.meta.get("preset", "")
    try:
        if preset == "duffing":
            pt = hbalance.duffing_response(values["delta"], values["alpha"], values["beta"], values["F"], omega)
            return list(pt.amplitudes), hbalance.duffing_mean_square(pt)
        if preset == "pendulum":
            about_pi = pf.meta.get("hb_about_pi", "false").lower() in ("true", "yes", "1")
            pt = hbalance.pendulum_response(values["gamma"], values["F"], omega, about_pi)
            # the observable adds z1^2 on the unit rotator, whose mean is 1/2
            return list(pt.amplitudes), [e + 0.5 for e in hbalance.hb_mean_energy(pt, about_pi)]
    except (KeyError, ValueError):
        return [], []
    return [], []


def _status(res: Optional[BoundResult], err: str) -> str:
    if res is None:
        return err or "Error"
    s = res.status.value
    return s if res.status is sdpcore.SolverStatus.OPTIMAL or not res.reliable else s + "~"


def sweep_point(pf: ProblemFile, value: float, degrees: Sequence[int], simulate_count: int = 0,
                seed: int = 0) -> Tuple[List[SweepRow], Optional[SpotCheck]]:
    """Bounds at every degree, harmonic balance and an optional simulation at one sweep value."""
    assert pf.sweep is not None
    over = {pf.sweep.param: value}
    values = pf.parameter_values(over)
    R, E = hb_columns(pf, values, value)
    rows = []
    for deg in degrees:
        out: Dict[str, Tuple[Optional[BoundResult], str]] = {}
        for d in (LOWER, UPPER):
            try:
                out[d] = (boundengine.bound(pf.query(d, deg, over)), "")
            except Exception as exc:  # recorded in the status column
                out[d] = (None, type(exc).__name__)
        lo, up = out[LOWER][0], out[UPPER][0]
        status = f"{_status(lo, out[LOWER][1])}/{_status(up, out[UPPER][1])}"
        rows.append(SweepRow(value, deg, lo.value if lo else math.nan, up.value if up else math.nan, status,
                             R[:HB_COLUMNS], E[:HB_COLUMNS]))
    check = None
    if simulate_count > 0:
        sysm = pf.system(over)
        ens = simulate.ensemble_average(sysm, pf.observable_poly(over), simulate_count, box=2.0, seed=seed,
                                        dt=1e-2, whole_periods=True)
        ok = ens.bounded
        check = SpotCheck(value, simulate_count, int(simulate_count - ok.size),
                          float(ok.min()) if ok.size else math.nan, float(ok.max()) if ok.size else math.nan)
    return rows, check


def default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_sweep(pf: ProblemFile, degrees: Optional[Sequence[int]] = None, jobs: Optional[int] = None,
              simulate_count: Optional[int] = None, seed: Optional[int] = None):
    """Rows ordered by sweep value then degree, plus simulation spot checks."""
    if pf.sweep is None:
        raise ValueError("problem has no [sweep] section")
    spec = pf.sweep
    degrees = tuple(degrees or spec.degrees or (pf.v_degree,))
    simulate_count = spec.simulate if simulate_count is None else simulate_count
    seed = spec.seed if seed is None else seed
    grid = spec.grid()
    jobs = default_jobs() if jobs is None else max(1, int(jobs))
    if jobs == 1 or len(grid) == 1:
        results = [sweep_point(pf, float(w), degrees, simulate_count, seed) for w in grid]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(sweep_point, pf, float(w), degrees, simulate_count, seed) for w in grid]
            results = [f.result() for f in futs]
    rows = [r for rs, _ in results for r in rs]
    checks = [c for _, c in results if c is not None]
    return rows, checks


def _cell(v: float) -> str:
    return "" if v is None or not math.isfinite(v) else f"{v:.10g}"


def sweep_csv(pf: ProblemFile, rows: Sequence[SweepRow], checks: Sequence[SpotCheck] = (),
              degrees: Sequence[int] = (), seed: int = 0, source: str = "") -> str:
    """CSV with a commented run header and a trailing status comment line."""
    assert pf.sweep is not None
    opts = pf.solver_options
    base = SolverOptions()
    out = io.StringIO()
    if source:
        out.write(f"# problem: {source}\n")
    s = pf.sweep
    out.write(f"# sweep: {s.param} from {_fmt_num(s.start)} to {_fmt_num(s.stop)} step {_fmt_num(s.step)}\n")
    out.write("# degrees: " + ",".join(str(d) for d in (degrees or sorted({r.degree for r in rows}))) + "\n")
    out.write(f"# gap_tol={opts.get('gap_tol', base.gap_tol)} feas_tol={opts.get('feas_tol', base.feas_tol)} "
              f"max_iter={opts.get('max_iter', base.max_iter)} seed={seed}\n")
    out.write("# status: lower/upper solver status; '~' marks a stalled solve kept within tolerance 1e-5\n")
    out.write(",".join(SWEEP_COLUMNS) + "\n")
    for r in rows:
        R = [_cell(v) for v in r.hb_R] + [""] * (HB_COLUMNS - len(r.hb_R))
        E = [_cell(v) for v in r.hb_E] + [""] * (HB_COLUMNS - len(r.hb_E))
        cells = [_cell(r.omega), _cell(r.lower), _cell(r.upper), _cell(r.gap)] + R + E + [r.status, str(r.degree)]
        out.write(",".join(cells) + "\n")
    for c in checks:
        out.write(f"# simulate {s.param}={_cell(c.omega)} runs={c.count} diverged={c.diverged} "
                  f"min={_cell(c.lo)} max={_cell(c.hi)}\n")
    failed = sum(1 for r in rows if not (math.isfinite(r.lower) and math.isfinite(r.upper)))
    out.write(f"# status: complete rows={len(rows)} failed={failed}\n")
    return out.getvalue()


# ---------------------------------------------------------------------------
# command line

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sosbound", description="SOS bounds on long-time averages of polynomial ODEs")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    b = sub.add_parser("bound", help="upper or lower bound on the observable's long-time average")
    b.add_argument("file")
    b.add_argument("--direction", choices=(UPPER, LOWER))
    b.add_argument("--degree", type=int)
    b.add_argument("--escalate", action="store_true", help="raise the degree by 2 until the bound settles")
    b.add_argument("--max-degree", type=int)
    b.add_argument("--show-v", action="store_true", help="also print the auxiliary function")
    b.add_argument("--out")

    s = sub.add_parser("sweep", help="bounds and harmonic balance over a parameter grid (CSV)")
    s.add_argument("file")
    s.add_argument("--param")
    s.add_argument("--from", dest="start", type=float)
    s.add_argument("--to", dest="stop", type=float)
    s.add_argument("--step", type=float)
    s.add_argument("--degrees", type=_ints)
    s.add_argument("--jobs", type=int, help=f"worker processes (default ${JOBS_ENV} or 1)")
    s.add_argument("--simulate", type=int, help="random initial conditions per point for spot checks")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")

    h = sub.add_parser("hb", help="harmonic-balance amplitudes (CSV)")
    h.add_argument("--model", choices=("duffing", "pendulum"), required=True)
    h.add_argument("--params", type=_floats, required=True,
                   help="duffing: delta,alpha,beta,F; pendulum: gamma,F")
    h.add_argument("--omega", type=float)
    h.add_argument("--from", dest="start", type=float)
    h.add_argument("--to", dest="stop", type=float)
    h.add_argument("--step", type=float)
    h.add_argument("--about-pi", action="store_true", help="pendulum ansatz about the inverted position")
    h.add_argument("--branches", action="store_true", help="one row per continued branch point")
    h.add_argument("--out")

    m = sub.add_parser("simulate", help="RK4 time averages of the observable (CSV)")
    m.add_argument("file")
    g = m.add_mutually_exclusive_group(required=True)
    g.add_argument("--x0", type=_floats)
    g.add_argument("--random", type=int)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--box", type=float, default=1.0)
    m.add_argument("--t-transient", type=float, default=simulate.DEFAULT_TRANSIENT)
    m.add_argument("--t-average", type=float, default=simulate.DEFAULT_WINDOW)
    m.add_argument("--dt", type=float, default=simulate.DEFAULT_DT)
    m.add_argument("--set", action="append", default=[], metavar="NAME=VALUE", help="override a parameter")
    m.add_argument("--trajectory", help="with --x0, write the full trajectory to this CSV")
    m.add_argument("--out")

    e = sub.add_parser("export-sdpa", help="write the bound SDP in sparse SDPA format")
    e.add_argument("file")
    e.add_argument("--out", required=True)
    e.add_argument("--direction", choices=(UPPER, LOWER))
    e.add_argument("--degree", type=int)
    for q in (b, s, e):
        q.add_argument("--set", action="append", default=[], metavar="NAME=VALUE", help="override a parameter")
    return p


def _overrides(pairs: Sequence[str]) -> Dict[str, float]:
    out = {}
    for item in pairs:
        name, sep, val = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"--set expects NAME=VALUE, got {item!r}")
        out[name.strip()] = float(val)
    return out


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_bound(args, pf: ProblemFile) -> int:
    q = pf.query(args.direction, args.degree, _overrides(args.set))
    if args.escalate:
        q = replace(q, max_degree=args.max_degree)
        res = boundengine.escalate(q)
    else:
        res = boundengine.bound(q)
    text = res.record(pf.variables, with_v=args.show_v) + "\n"
    if args.escalate and res.escalation_trace:
        text += "trace=" + ",".join(f"{d}:{_cell(v) or 'nan'}" for d, v in res.escalation_trace) + "\n"
    _emit(text, args.out)
    return 0 if res.reliable else EXIT_SOLVER


def _cmd_sweep(args, pf: ProblemFile) -> int:
    base = pf.sweep
    param = args.param or (base.param if base else None)
    start = args.start if args.start is not None else (base.start if base else None)
    stop = args.stop if args.stop is not None else (base.stop if base else None)
    step = args.step if args.step is not None else (base.step if base else None)
    if None in (param, start, stop, step):
        raise argparse.ArgumentTypeError("sweep needs --param, --from, --to and --step or a [sweep] section")
    if param not in {n for n, _ in pf.parameters}:
        raise argparse.ArgumentTypeError(f"sweep parameter {param!r} is not a declared parameter")
    spec = SweepSpec(param, start, stop, step, tuple(args.degrees or (base.degrees if base else ())),
                     args.simulate if args.simulate is not None else (base.simulate if base else 0),
                     args.seed if args.seed is not None else (base.seed if base else 0))
    over = _overrides(args.set)
    params = tuple((n, Num(over[n]) if n in over else e) for n, e in pf.parameters)
    pf = replace(pf, sweep=spec, parameters=params)
    degrees = spec.degrees or (pf.v_degree,)
    rows, checks = run_sweep(pf, degrees, args.jobs)
    _emit(sweep_csv(pf, rows, checks, degrees, spec.seed, Path(args.file).name), args.out)
    return 0


def hb_table(model: str, params: Sequence[float], omegas: Sequence[float], about_pi: bool = False,
             branches: bool = False) -> str:
    if model == "duffing":
        if len(params) != 4:
            raise argparse.ArgumentTypeError("duffing needs --params delta,alpha,beta,F")
        response = lambda w: hbalance.duffing_response(*params, w)  # noqa: E731
        energy = hbalance.duffing_mean_square
    else:
        if len(params) != 2:
            raise argparse.ArgumentTypeError("pendulum needs --params gamma,F")
        response = lambda w: hbalance.pendulum_response(params[0], params[1], w, about_pi)  # noqa: E731
        energy = lambda pt: hbalance.hb_mean_energy(pt, about_pi)  # noqa: E731
    out = io.StringIO()
    if branches:
        res = hbalance.sweep(response, omegas, energy)
        out.write("omega,branch_id,R,mean_energy,regime\n")
        for r in res.rows:
            out.write(f"{_cell(r.omega)},{r.branch_id},{_cell(r.R)},{_cell(r.mean_energy)},{r.regime.value}\n")
        for w, bid, kind in res.folds:
            out.write(f"# fold omega={_cell(w)} branch={bid} {kind}\n")
        return out.getvalue()
    pts = [response(w) for w in omegas]
    k = max([HB_COLUMNS] + [len(p.amplitudes) for p in pts])
    out.write(",".join(["omega", "regime", "roots"] + [f"R_{i}" for i in range(1, k + 1)]
                       + [f"E_{i}" for i in range(1, k + 1)]) + "\n")
    for p in pts:
        E = energy(p)
        R = [_cell(v) for v in p.amplitudes] + [""] * (k - len(p.amplitudes))
        Ec = [_cell(v) for v in E] + [""] * (k - len(E))
        out.write(",".join([_cell(p.omega), p.regime.value, str(len(p.amplitudes))] + R + Ec) + "\n")
    return out.getvalue()


def _cmd_hb(args) -> int:
    if args.omega is not None:
        omegas = [args.omega]
    elif None not in (args.start, args.stop, args.step):
        omegas = list(SweepSpec("omega", args.start, args.stop, args.step).grid())
    else:
        raise argparse.ArgumentTypeError("hb needs --omega or --from/--to/--step")
    _emit(hb_table(args.model, args.params, omegas, args.about_pi, args.branches), args.out)
    return 0


def _cmd_simulate(args, pf: ProblemFile) -> int:
    over = _overrides(args.set)
    sysm, phi = pf.system(over), pf.observable_poly(over)
    if args.x0 is not None:
        if len(args.x0) != sysm.dim:
            raise argparse.ArgumentTypeError(f"--x0 needs {sysm.dim} values ({', '.join(sysm.var_names)})")
        x0s = np.array([args.x0])
    else:
        x0s = simulate.random_initial_conditions(sysm, args.random, args.box, args.seed)
    values, escape = simulate.time_averages(sysm, phi, x0s, args.t_transient, args.t_average, args.dt)
    out = io.StringIO()
    out.write(f"# t_transient={args.t_transient} t_average={args.t_average} dt={args.dt} seed={args.seed}\n")
    out.write(",".join(["run"] + [f"x0_{n}" for n in sysm.var_names] + ["average", "escape_time"]) + "\n")
    for k, (x0, v, t) in enumerate(zip(x0s, values, escape)):
        out.write(",".join([str(k)] + [_cell(c) for c in x0] + [_cell(v), _cell(t)]) + "\n")
    diverged = int(np.isfinite(escape).sum())
    out.write(f"# status: runs={len(values)} diverged={diverged}\n")
    _emit(out.getvalue(), args.out)
    if args.trajectory and args.x0 is not None and not diverged:
        simulate.integrate(sysm, x0s[0], args.t_transient + args.t_average, args.dt).to_csv(args.trajectory)
    return EXIT_DIVERGENCE if diverged else 0


def _cmd_export(args, pf: ProblemFile) -> int:
    q = pf.query(args.direction, args.degree, _overrides(args.set))
    prob, _ = boundengine.build_program(q).to_sdp()
    sdpcore.export_sdpa(prob, args.out)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "hb":
            return _cmd_hb(args)
        try:
            pf = load_problem(args.file)
        except FileNotFoundError as exc:
            print(f"sosbound: {exc}", file=sys.stderr)
            return EXIT_USAGE
        except ProblemError as exc:
            print(f"sosbound: {args.file}: {exc}", file=sys.stderr)
            return EXIT_PARSE
        cmd = {"bound": _cmd_bound, "sweep": _cmd_sweep, "simulate": _cmd_simulate, "export-sdpa": _cmd_export}
        return cmd[args.command](args, pf)
    except argparse.ArgumentTypeError as exc:
        print(f"sosbound: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProblemError as exc:
        print(f"sosbound: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except simulate.Divergence as exc:
        print(f"sosbound: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (boundengine.BoundError, np.linalg.LinAlgError) as exc:
        print(f"sosbound: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
