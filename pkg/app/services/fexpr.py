"""
Expression language for the right-hand side f(x, z, nu).

Grammar (recursive descent, "-" and U+2212 both accepted as minus):

    expr    := term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*
    factor  := unary ("^" factor)?          exponent must fold to a constant
    unary   := "-" unary | primary
    primary := number | ident | ident "(" expr ")" | "(" expr ")"

Unary minus binds tighter than "^", so "-x1^2" is (-x1)^2.

Identifiers: x1..xn, z, nu1..nu{n+1}, w (= 1/nu_{n+1}, substituted at parse time),
r2 (= |x|^2) and the functions exp, log, sqrt.
"""

import logging
import re
from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Tuple, Union

import numpy as np

from app.exceptions import ExprDomainError, ExprNameError, ExprSyntaxError
from app.models import HypothesisReport

logger = logging.getLogger(__name__)

FUNCTIONS = ("exp", "log", "sqrt")
HYPOTHESIS_FZ_TOL = 1e-12

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()−]))"
)
_INDEXED_RE = re.compile(r"^(x|nu)(\d+)$")


# AST

class Expr:
    """Base class of the immutable expression tree."""


@dataclass(frozen=True)
class Const(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    kind: str       # "x", "z", "nu" or "r2"
    index: int = 0  # 0-based for x and nu


@dataclass(frozen=True)
class Neg(Expr):
    arg: Expr


@dataclass(frozen=True)
class BinOp(Expr):
    op: str
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Pow(Expr):
    base: Expr
    exponent: float


@dataclass(frozen=True)
class Call(Expr):
    func: str
    arg: Expr


ZERO = Const(0.0)
ONE = Const(1.0)


@dataclass(frozen=True)
class Env:
    """Evaluation point(s): x (..., n), z (...), nu (..., n+1)."""
    x: np.ndarray
    z: np.ndarray
    nu: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        z = np.asarray(self.z, dtype=float)
        nu = np.asarray(self.nu, dtype=float)
        if x.shape[:-1] != z.shape or nu.shape[:-1] != z.shape or nu.shape[-1] != x.shape[-1] + 1:
            raise ValueError(
                f"inconsistent env shapes x={x.shape}, z={z.shape}, nu={nu.shape}"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "nu", nu)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.z.shape

    @property
    def n(self) -> int:
        return self.x.shape[-1]


# Parsing

@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    offset: int


class ExpressionParser:
    """Recursive-descent parser for expressions over dimension n."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError(f"n must be positive, got {n}")
        self.n = n
        self.tokens: List[_Token] = []
        self.pos = 0
        self.src = ""

    def parse(self, src: str) -> Expr:
        self.src = src
        self.tokens = self._tokenize(src)
        self.pos = 0
        node = self._expr()
        tok = self._peek()
        if tok.kind != "end":
            raise ExprSyntaxError(f"unexpected token {tok.text!r}", tok.offset)
        return node

    def _byte_offset(self, pos: int) -> int:
        return len(self.src[:pos].encode("utf-8"))

    def _tokenize(self, src: str) -> List[_Token]:
        tokens = []
        pos = 0
        while True:
            match = _TOKEN_RE.match(src, pos)
            if match is None or match.end() == pos:
                rest = src[pos:]
                if rest.strip():
                    bad = pos + len(rest) - len(rest.lstrip())
                    raise ExprSyntaxError(f"unexpected character {src[bad]!r}", self._byte_offset(bad))
                break
            kind = match.lastgroup
            start = match.start(kind)
            text = match.group(kind)
            if text == "−":
                text = "-"
            tokens.append(_Token(kind, text, self._byte_offset(start)))
            pos = match.end()
        tokens.append(_Token("end", "", self._byte_offset(len(src))))
        return tokens

    def _peek(self) -> _Token:
        return self.tokens[self.pos]

    def _advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def _expect(self, text: str) -> _Token:
        tok = self._peek()
        if tok.kind != "op" or tok.text != text:
            found = tok.text or "end of input"
            raise ExprSyntaxError(f"expected {text!r}, found {found!r}", tok.offset)
        return self._advance()

    def _expr(self) -> Expr:
        node = self._term()
        while self._peek().kind == "op" and self._peek().text in "+-":
            op = self._advance().text
            node = BinOp(op, node, self._term())
        return node

    def _term(self) -> Expr:
        node = self._factor()
        while self._peek().kind == "op" and self._peek().text in "*/":
            op = self._advance().text
            node = BinOp(op, node, self._factor())
        return node

    def _factor(self) -> Expr:
        base = self._unary()
        if self._peek().kind == "op" and self._peek().text == "^":
            self._advance()
            offset = self._peek().offset
            exponent = self._factor()
            value = constant_value(exponent)
            if value is None:
                raise ExprSyntaxError("exponent must be a constant", offset)
            return Pow(base, value)
        return base

    def _unary(self) -> Expr:
        if self._peek().kind == "op" and self._peek().text == "-":
            self._advance()
            return Neg(self._unary())
        return self._primary()

    def _primary(self) -> Expr:
        tok = self._advance()
        if tok.kind == "num":
            return Const(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            node = self._expr()
            self._expect(")")
            return node
        if tok.kind == "ident":
            nxt = self._peek()
            if nxt.kind == "op" and nxt.text == "(":
                if tok.text not in FUNCTIONS:
                    raise ExprNameError(f"unknown function {tok.text!r} at byte {tok.offset}")
                self._advance()
                arg = self._expr()
                self._expect(")")
                return Call(tok.text, arg)
            if tok.text in FUNCTIONS:
                raise ExprSyntaxError(f"function {tok.text!r} needs an argument", tok.offset)
            return self._variable(tok)
        found = tok.text or "end of input"
        raise ExprSyntaxError(f"unexpected token {found!r}", tok.offset)

    def _variable(self, tok: _Token) -> Expr:
        name = tok.text
        if name == "z":
            return Var("z")
        if name == "r2":
            return Var("r2")
        if name == "w":
            return Pow(Var("nu", self.n), -1.0)
        match = _INDEXED_RE.match(name)
        if match:
            kind, index = match.group(1), int(match.group(2))
            limit = self.n if kind == "x" else self.n + 1
            if not 1 <= index <= limit:
                raise ExprNameError(
                    f"variable {name!r} out of range for n={self.n} (at byte {tok.offset})"
                )
            return Var(kind, index - 1)
        raise ExprNameError(f"unknown identifier {name!r} at byte {tok.offset}")


def parse(src: str, n: int) -> Expr:
    return ExpressionParser(n).parse(src)


# Inspection

def variables(e: Expr) -> FrozenSet[Tuple[str, int]]:
    if isinstance(e, Var):
        return frozenset({(e.kind, e.index)})
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, (Neg, Call)):
        return variables(e.arg)
    if isinstance(e, Pow):
        return variables(e.base)
    return variables(e.left) | variables(e.right)


def depends_on_nu(e: Expr) -> bool:
    return any(kind == "nu" for kind, _ in variables(e))


def is_radial(e: Expr, n: int) -> bool:
    """True if e only uses r2, z and nu_{n+1} (i.e. w)."""
    allowed = {("r2", 0), ("z", 0), ("nu", n)}
    return variables(e) <= allowed


def constant_value(e: Expr) -> Optional[float]:
    if variables(e):
        return None
    value = evaluate(e, Env(np.zeros(1), np.zeros(()), np.array([0.0, 1.0])))
    return float(value)


def to_source(e: Expr) -> str:
    """Fully parenthesized source that parses back to an equivalent tree."""
    if isinstance(e, Const):
        text = repr(float(e.value))
        return f"({text})" if e.value < 0 else text
    if isinstance(e, Var):
        if e.kind in ("x", "nu"):
            return f"{e.kind}{e.index + 1}"
        return e.kind
    if isinstance(e, Neg):
        return f"(-{to_source(e.arg)})"
    if isinstance(e, Call):
        return f"{e.func}({to_source(e.arg)})"
    if isinstance(e, Pow):
        return f"({to_source(e.base)}^({repr(float(e.exponent))}))"
    return f"({to_source(e.left)} {e.op} {to_source(e.right)})"


# Evaluation

def evaluate(e: Expr, env: Env) -> Union[float, np.ndarray]:
    """IEEE double evaluation, vectorized over the env's leading shape."""
    result = np.broadcast_to(np.asarray(_eval(e, env), dtype=float), env.shape)
    return float(result) if result.ndim == 0 else result.copy()


def _eval(e: Expr, env: Env):
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        if e.kind == "x":
            return env.x[..., e.index]
        if e.kind == "nu":
            return env.nu[..., e.index]
        if e.kind == "z":
            return env.z
        return np.sum(env.x * env.x, axis=-1)
    if isinstance(e, Neg):
        return -_eval(e.arg, env)
    if isinstance(e, BinOp):
        left = _eval(e.left, env)
        right = _eval(e.right, env)
        if e.op == "+":
            return left + right
        if e.op == "-":
            return left - right
        if e.op == "*":
            return left * right
        if np.any(np.asarray(right) == 0):
            raise ExprDomainError("division by zero")
        return left / right
    if isinstance(e, Pow):
        base = np.asarray(_eval(e.base, env), dtype=float)
        if e.exponent < 0 and np.any(base == 0):
            raise ExprDomainError("zero raised to a negative power")
        if not float(e.exponent).is_integer() and np.any(base < 0):
            raise ExprDomainError("negative base with non-integer exponent")
        return base ** e.exponent
    if isinstance(e, Call):
        arg = np.asarray(_eval(e.arg, env), dtype=float)
        if e.func == "exp":
            with np.errstate(over="ignore"):
                return np.exp(arg)
        if e.func == "log":
            if np.any(arg <= 0):
                raise ExprDomainError("log of a non-positive number")
            return np.log(arg)
        if np.any(arg < 0):
            raise ExprDomainError("sqrt of a negative number")
        return np.sqrt(arg)
    raise TypeError(f"unknown node {e!r}")


# Differentiation

def _add(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return b
    if b == ZERO:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value + b.value)
    return BinOp("+", a, b)


def _sub(a: Expr, b: Expr) -> Expr:
    if b == ZERO:
        return a
    if a == ZERO:
        return _neg(b)
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value - b.value)
    return BinOp("-", a, b)


def _neg(a: Expr) -> Expr:
    if isinstance(a, Const):
        return Const(-a.value)
    if isinstance(a, Neg):
        return a.arg
    return Neg(a)


def _mul(a: Expr, b: Expr) -> Expr:
    if a == ZERO or b == ZERO:
        return ZERO
    if a == ONE:
        return b
    if b == ONE:
        return a
    if isinstance(a, Const) and isinstance(b, Const):
        return Const(a.value * b.value)
    return BinOp("*", a, b)


def _div(a: Expr, b: Expr) -> Expr:
    if a == ZERO:
        return ZERO
    if b == ONE:
        return a
    if isinstance(b, Pow):
        return _mul(a, _pow(b.base, -b.exponent))
    if isinstance(a, Const) and isinstance(b, Const) and b.value != 0:
        return Const(a.value / b.value)
    return BinOp("/", a, b)


def _pow(base: Expr, exponent: float) -> Expr:
    if exponent == 0:
        return ONE
    if exponent == 1:
        return base
    if isinstance(base, Const) and base.value > 0:
        return Const(base.value ** exponent)
    if isinstance(base, Pow):
        inner = base.exponent * exponent
        # (b^c)^d = b^(cd) only holds when b^c keeps the sign of b
        if float(base.exponent).is_integer() and float(exponent).is_integer():
            return _pow(base.base, inner)
    return Pow(base, exponent)


def simplify(e: Expr) -> Expr:
    """Bottom-up rebuild through the folding constructors."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, Neg):
        return _neg(simplify(e.arg))
    if isinstance(e, Call):
        return Call(e.func, simplify(e.arg))
    if isinstance(e, Pow):
        return _pow(simplify(e.base), e.exponent)
    left, right = simplify(e.left), simplify(e.right)
    return {"+": _add, "-": _sub, "*": _mul, "/": _div}[e.op](left, right)


def derivative(e: Expr, wrt: Var) -> Expr:
    """Symbolic derivative with respect to one variable, simplified."""
    return simplify(_diff(simplify(e), wrt))


def _diff(e: Expr, v: Var) -> Expr:
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        if e == v:
            return ONE
        if e.kind == "r2" and v.kind == "x":
            return _mul(Const(2.0), v)
        return ZERO
    if isinstance(e, Neg):
        return _neg(_diff(e.arg, v))
    if isinstance(e, BinOp):
        da, db = _diff(e.left, v), _diff(e.right, v)
        if e.op == "+":
            return _add(da, db)
        if e.op == "-":
            return _sub(da, db)
        if e.op == "*":
            return _add(_mul(da, e.right), _mul(e.left, db))
        # (a/b)' = a'/b - a b' / b^2
        return _sub(_div(da, e.right), _div(_mul(e.left, db), _pow(e.right, 2.0)))
    if isinstance(e, Pow):
        inner = _diff(e.base, v)
        return _mul(_mul(Const(e.exponent), _pow(e.base, e.exponent - 1.0)), inner)
    if isinstance(e, Call):
        inner = _diff(e.arg, v)
        if e.func == "exp":
            return _mul(e, inner)
        if e.func == "log":
            return _div(inner, e.arg)
        return _div(inner, _mul(Const(2.0), e))
    raise TypeError(f"unknown node {e!r}")


def partials(e: Expr, n: int) -> Tuple[Expr, List[Expr]]:
    """(df/dz, [df/dnu_1, ..., df/dnu_{n+1}])."""
    dz = derivative(e, Var("z"))
    dnu = [derivative(e, Var("nu", j)) for j in range(n + 1)]
    return dz, dnu


# Hypothesis sampling

def sample_envs(points: np.ndarray, u_min: float, count: int, seed: int,
                max_slope: float = 3.0) -> Env:
    """
    Sample Omega x [u_min, 0] x upper-hemisphere caps.

    x is drawn from the given interior points, z uniformly in [u_min, 0] and nu as the
    upward normal of a random slope Du with |Du| <= max_slope, so nu_{n+1} >= 1/sqrt(1+max_slope^2).
    The first sample of each call is horizontal (nu = e_{n+1}).
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[1]
    x = pts[rng.integers(0, len(pts), size=count)]
    z = rng.uniform(min(u_min, 0.0), 0.0, size=count)
    direction = rng.standard_normal((count, n))
    direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
    slope = direction * rng.uniform(0.0, max_slope, size=(count, 1))
    slope[0] = 0.0
    w = np.sqrt(1.0 + np.sum(slope * slope, axis=1, keepdims=True))
    nu = np.concatenate([-slope / w, 1.0 / w], axis=1)
    return Env(x, z, nu)


def check_hypotheses(e: Expr, env: Env, p: Optional[int] = None) -> HypothesisReport:
    """Sampled check of f > 0 and f_z >= 0 over the given envs; report-only."""
    n = env.n
    violations: List[str] = []
    warnings: List[str] = []
    nu_dependent = depends_on_nu(e)

    try:
        values = np.asarray(evaluate(e, env))
        dz, _ = partials(e, n)
        fz = np.asarray(evaluate(dz, env))
    except ExprDomainError as err:
        violations.append(f"f is undefined on the sample set: {err}")
        return HypothesisReport(
            passed=False, min_f=float("nan"), min_fz=float("nan"),
            depends_on_nu=nu_dependent, samples=int(np.prod(env.shape)),
            violations=violations,
        )

    min_f = float(np.min(values))
    min_fz = float(np.min(fz))
    if not np.all(np.isfinite(values)):
        violations.append("f is not finite on the sample set")
    if min_f <= 0:
        violations.append(f"f must be positive, min f = {min_f:.6g}")
    if min_fz < -HYPOTHESIS_FZ_TOL:
        violations.append(f"f_z must be non-negative, min f_z = {min_fz:.6g}")
    if nu_dependent and p is not None and 2 * p < n:
        warnings.append(
            f"f depends on nu with p={p} < n/2={n / 2:g}; existence is only known for nu-free f here"
        )

    report = HypothesisReport(
        passed=not violations,
        min_f=min_f,
        min_fz=min_fz,
        depends_on_nu=nu_dependent,
        samples=int(np.prod(env.shape)),
        violations=violations,
        warnings=warnings,
    )
    logger.debug("hypothesis check: min f=%.6g, min f_z=%.6g, passed=%s", min_f, min_fz, report.passed)
    return report
