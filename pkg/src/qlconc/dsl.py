"""A small total expression language for potentials.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | '+' unary | power
    power   := primary ('^' unary)?          # right associative, binds tighter than unary minus
    primary := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

Variables are ``r`` and ``x1 .. x3``; other names must be supplied as
constants.  Evaluation never returns NaN or inf: every failing operation raises
``EvalError`` carrying the source span of the offending node.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

VARIABLES = ("r", "x1", "x2", "x3")
FUNCTIONS = {"exp": 1, "log": 1, "sqrt": 1, "abs": 1, "min": -2, "max": -2}


class DSLError(ValueError):
    pass


class ParseError(DSLError):
    def __init__(self, msg, line, col, expected=()):
        self.line, self.col = line, col
        self.expected = tuple(sorted(expected))
        exp = f"; expected one of {', '.join(self.expected)}" if self.expected else ""
        super().__init__(f"line {line}, column {col}: {msg}{exp}")


class UnknownIdentifier(ParseError):
    pass


class EvalError(DSLError):
    def __init__(self, msg, span=None, witness=None):
        self.span = span
        self.witness = witness
        where = f" at line {span.line}, column {span.col}" if span is not None else ""
        super().__init__(f"{msg}{where}")


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    line: int
    col: int


# -- AST ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float
    span: Span = field(default=None, compare=False)


@dataclass(frozen=True)
class Name:
    name: str
    span: Span = field(default=None, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str
    operand: object
    span: Span = field(default=None, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str
    left: object
    right: object
    span: Span = field(default=None, compare=False)


@dataclass(frozen=True)
class Call:
    fn: str
    args: tuple
    span: Span = field(default=None, compare=False)


@dataclass(frozen=True)
class Expr:
    root: object
    source: str = field(compare=False)
    constants: tuple = ()

    @property
    def constant_map(self) -> dict:
        return dict(self.constants)

    def free_variables(self) -> set:
        out = set()

        def walk(n):
            if isinstance(n, Name):
                if n.name in VARIABLES:
                    out.add(n.name)
            elif isinstance(n, Unary):
                walk(n.operand)
            elif isinstance(n, Binary):
                walk(n.left)
                walk(n.right)
            elif isinstance(n, Call):
                for a in n.args:
                    walk(a)

        walk(self.root)
        return out

    def __call__(self, **bindings):
        return evaluate(self, bindings)


# -- lexer -------------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^(),])"
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    span: Span


def _line_col(src, pos):
    line = src.count("\n", 0, pos) + 1
    col = pos - (src.rfind("\n", 0, pos) + 1) + 1
    return line, col


def tokenize(src: str) -> list:
    toks = []
    pos = 0
    while pos < len(src):
        mt = _TOKEN.match(src, pos)
        if mt is None:
            line, col = _line_col(src, pos)
            raise ParseError(f"unexpected character {src[pos]!r}", line, col)
        kind = mt.lastgroup
        if kind != "ws":
            line, col = _line_col(src, pos)
            toks.append(Token(kind, mt.group(), Span(pos, mt.end(), line, col)))
        pos = mt.end()
    line, col = _line_col(src, len(src))
    toks.append(Token("eof", "", Span(len(src), len(src), line, col)))
    return toks


# -- parser ------------------------------------------------------------------------

_OPERAND_START = ("number", "name", "'('", "'-'", "'+'")


class _Parser:
    def __init__(self, src, names):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0
        self.names = names

    @property
    def tok(self):
        return self.toks[self.i]

    def advance(self):
        t = self.toks[self.i]
        self.i += 1
        return t

    def fail(self, msg, expected):
        t = self.tok
        if t.kind == "eof" and self.i > 0:
            # report at the token that is missing its continuation
            prev = self.toks[self.i - 1]
            raise ParseError(f"unexpected end of input after {prev.text!r}",
                             prev.span.line, prev.span.col, expected)
        raise ParseError(msg, t.span.line, t.span.col, expected)

    def join(self, a: Span, b: Span) -> Span:
        return Span(a.start, b.end, a.line, a.col)

    def parse(self):
        node = self.expr()
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}", ("operator", "end of input"))
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.advance().text
            rhs = self.term()
            node = Binary(op, node, rhs, self.join(node.span, rhs.span))
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.advance().text
            rhs = self.unary()
            node = Binary(op, node, rhs, self.join(node.span, rhs.span))
        return node

    def unary(self):
        if self.tok.kind == "op" and self.tok.text in "+-":
            t = self.advance()
            operand = self.unary()
            if t.text == "+":
                return operand
            return Unary("-", operand, self.join(t.span, operand.span))
        return self.power()

    def power(self):
        base = self.primary()
        if self.tok.kind == "op" and self.tok.text == "^":
            self.advance()
            expo = self.unary()
            return Binary("^", base, expo, self.join(base.span, expo.span))
        return base

    def primary(self):
        t = self.tok
        if t.kind == "num":
            self.advance()
            val = float(t.text)
            if not math.isfinite(val):
                raise ParseError(f"numeric literal {t.text!r} overflows", t.span.line, t.span.col)
            return Num(val, t.span)
        if t.kind == "name":
            self.advance()
            if self.tok.kind == "op" and self.tok.text == "(":
                if t.text not in FUNCTIONS:
                    raise UnknownIdentifier(f"unknown function {t.text!r}", t.span.line,
                                            t.span.col, FUNCTIONS)
                self.advance()
                args = [self.expr()]
                while self.tok.kind == "op" and self.tok.text == ",":
                    self.advance()
                    args.append(self.expr())
                if not (self.tok.kind == "op" and self.tok.text == ")"):
                    self.fail(f"unexpected {self.tok.text!r}", ("','", "')'"))
                end = self.advance()
                arity = FUNCTIONS[t.text]
                if (arity > 0 and len(args) != arity) or (arity < 0 and len(args) < -arity):
                    raise ParseError(f"{t.text} takes {abs(arity)}{'+' if arity < 0 else ''} "
                                     f"argument(s), got {len(args)}", t.span.line, t.span.col)
                return Call(t.text, tuple(args), self.join(t.span, end.span))
            if t.text not in self.names:
                raise UnknownIdentifier(f"unknown identifier {t.text!r}", t.span.line,
                                        t.span.col, self.names)
            return Name(t.text, t.span)
        if t.kind == "op" and t.text == "(":
            self.advance()
            node = self.expr()
            if not (self.tok.kind == "op" and self.tok.text == ")"):
                self.fail(f"unexpected {self.tok.text!r}", ("')'", "operator"))
            end = self.advance()
            # the parentheses belong to the span so error messages quote them
            return replace(node, span=self.join(t.span, end.span))
        self.fail(f"unexpected {t.text!r}" if t.kind != "eof" else "unexpected end of input",
                  _OPERAND_START)


def parse(src: str, constants: Mapping[str, float] | None = None) -> Expr:
    """Parse ``src``; names other than ``r, x1..x3`` must appear in ``constants``."""
    constants = dict(constants or {})
    for k, v in constants.items():
        if k in VARIABLES or k in FUNCTIONS:
            raise DSLError(f"constant name {k!r} shadows a variable or function")
        if not math.isfinite(float(v)):
            raise DSLError(f"constant {k!r} must be finite")
    names = set(VARIABLES) | set(constants)
    root = _Parser(src, names).parse()
    return Expr(root, src, tuple(sorted((k, float(v)) for k, v in constants.items())))


# -- scalar evaluation ---------------------------------------------------------------


def _check(x, node):
    if not math.isfinite(x):
        raise EvalError("non-finite result", node.span)
    return x


def _pow(a, b, node):
    if a == 0.0 and b < 0:
        raise EvalError("zero raised to a negative power", node.span)
    if a < 0 and b != math.floor(b):
        raise EvalError("negative base with non-integer exponent", node.span)
    try:
        return _check(math.pow(a, b), node)
    except OverflowError:
        raise EvalError("overflow in power", node.span) from None


def _call(fn, args, node):
    try:
        if fn == "exp":
            return _check(math.exp(args[0]), node)
        if fn == "log":
            if args[0] <= 0:
                raise EvalError("log of a nonpositive number", node.span)
            return math.log(args[0])
        if fn == "sqrt":
            if args[0] < 0:
                raise EvalError("sqrt of a negative number", node.span)
            return math.sqrt(args[0])
        if fn == "abs":
            return abs(args[0])
        if fn == "min":
            return min(args)
        if fn == "max":
            return max(args)
    except OverflowError:
        raise EvalError(f"overflow in {fn}", node.span) from None
    raise EvalError(f"unknown function {fn}", node.span)


def evaluate(e: Expr, bindings: Mapping[str, float]) -> float:
    """IEEE double evaluation of ``e`` with variables from ``bindings``."""
    env = e.constant_map
    for k, v in bindings.items():
        env[k] = float(v)

    def ev(n):
        if isinstance(n, Num):
            return n.value
        if isinstance(n, Name):
            if n.name not in env:
                raise EvalError(f"unbound variable {n.name!r}", n.span)
            return _check(env[n.name], n)
        if isinstance(n, Unary):
            return -ev(n.operand)
        if isinstance(n, Binary):
            a, b = ev(n.left), ev(n.right)
            if n.op == "+":
                return _check(a + b, n)
            if n.op == "-":
                return _check(a - b, n)
            if n.op == "*":
                return _check(a * b, n)
            if n.op == "/":
                if b == 0.0:
                    raise EvalError("division by zero", n.span)
                return _check(a / b, n)
            return _pow(a, b, n)
        if isinstance(n, Call):
            return _call(n.fn, [ev(a) for a in n.args], n)
        raise EvalError(f"bad node {n!r}")

    return float(ev(e.root))


eval_expr = evaluate


# -- vectorized evaluation --------------------------------------------------------------


def _fail_at(mask, msg, node, points):
    idx = int(np.argmax(mask))
    witness = None if points is None else np.asarray(points)[idx].tolist()
    raise EvalError(msg + (f" (e.g. at point {witness})" if witness is not None else ""),
                    node.span, witness)


def evaluate_array(e: Expr, bindings: Mapping[str, np.ndarray], points=None) -> np.ndarray:
    """Elementwise evaluation over arrays; same rejection rules as ``evaluate``."""
    env = {k: np.float64(v) for k, v in e.constant_map.items()}
    shape = None
    for k, v in bindings.items():
        arr = np.asarray(v, dtype=float)
        env[k] = arr
        shape = arr.shape if shape is None else np.broadcast_shapes(shape, arr.shape)
    shape = () if shape is None else shape

    def fin(x, node):
        bad = ~np.isfinite(x)
        if np.any(bad):
            _fail_at(np.broadcast_to(bad, shape), "non-finite result", node, points)
        return x

    def ev(n):
        if isinstance(n, Num):
            return np.float64(n.value)
        if isinstance(n, Name):
            if n.name not in env:
                raise EvalError(f"unbound variable {n.name!r}", n.span)
            return fin(env[n.name], n)
        if isinstance(n, Unary):
            return -ev(n.operand)
        if isinstance(n, Binary):
            a, b = ev(n.left), ev(n.right)
            with np.errstate(all="ignore"):
                if n.op == "+":
                    return fin(a + b, n)
                if n.op == "-":
                    return fin(a - b, n)
                if n.op == "*":
                    return fin(a * b, n)
                if n.op == "/":
                    zero = np.broadcast_to(b == 0.0, shape)
                    if np.any(zero):
                        _fail_at(zero, "division by zero", n, points)
                    return fin(a / b, n)
                a_b, b_b = np.broadcast_arrays(a, b)
                if np.any((a_b == 0.0) & (b_b < 0)):
                    _fail_at(np.broadcast_to((a_b == 0.0) & (b_b < 0), shape),
                             "zero raised to a negative power", n, points)
                neg = (a_b < 0) & (b_b != np.floor(b_b))
                if np.any(neg):
                    _fail_at(np.broadcast_to(neg, shape),
                             "negative base with non-integer exponent", n, points)
                return fin(np.power(a_b, b_b), n)
        if isinstance(n, Call):
            args = [ev(a) for a in n.args]
            with np.errstate(all="ignore"):
                if n.fn == "exp":
                    return fin(np.exp(args[0]), n)
                if n.fn == "log":
                    bad = np.broadcast_to(args[0] <= 0, shape)
                    if np.any(bad):
                        _fail_at(bad, "log of a nonpositive number", n, points)
                    return np.log(args[0])
                if n.fn == "sqrt":
                    bad = np.broadcast_to(args[0] < 0, shape)
                    if np.any(bad):
                        _fail_at(bad, "sqrt of a negative number", n, points)
                    return np.sqrt(args[0])
                if n.fn == "abs":
                    return np.abs(args[0])
                red = np.minimum if n.fn == "min" else np.maximum
                out = args[0]
                for a in args[1:]:
                    out = red(out, a)
                return out
        raise EvalError(f"bad node {n!r}")

    out = np.broadcast_to(np.asarray(ev(e.root), dtype=float), shape)
    return np.array(out, dtype=float)


def as_point_function(e: Expr):
    """Callable on an ``(n, d)`` point array binding ``r`` and ``x1..x3``."""

    def fn(points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        b = {"r": np.linalg.norm(pts, axis=1)}
        for k in range(3):
            b[f"x{k + 1}"] = pts[:, k] if k < pts.shape[1] else np.zeros(len(pts))
        return evaluate_array(e, b, points=pts)

    return fn


# -- printer -------------------------------------------------------------------------------

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4}


def to_source(e) -> str:
    """Minimal-parenthesis source text; ``parse(to_source(e))`` reproduces the tree."""
    root = e.root if isinstance(e, Expr) else e

    def fmt_num(x):
        s = repr(float(x))
        return s

    def pr(n):
        if isinstance(n, Num):
            return fmt_num(n.value), 5
        if isinstance(n, Name):
            return n.name, 5
        if isinstance(n, Call):
            return f"{n.fn}({', '.join(pr(a)[0] for a in n.args)})", 5
        if isinstance(n, Unary):
            s, p = pr(n.operand)
            if p < _PREC["neg"]:
                s = f"({s})"
            return "-" + s, _PREC["neg"]
        if isinstance(n, Binary):
            p = _PREC[n.op]
            ls, lp = pr(n.left)
            rs, rp = pr(n.right)
            if n.op == "^":
                # base must be atomic; exponent may be a unary or another power
                if lp <= p:
                    ls = f"({ls})"
                if rp < _PREC["neg"]:
                    rs = f"({rs})"
                return f"{ls}^{rs}", p
            if lp < p:
                ls = f"({ls})"
            if rp <= p:
                rs = f"({rs})"
            return f"{ls} {n.op} {rs}", p
        raise DSLError(f"cannot print {n!r}")

    return pr(root)[0]


# -- assumption checks ------------------------------------------------------------------------


@dataclass
class Violation:
    assumption: str
    message: str
    witness: list


@dataclass
class AssumptionReport:
    ok: bool
    V0: float
    V_sup: float
    m: float
    K_sup: float
    boundary_max_K: float
    M_points: list
    M_center: list
    M_radius: float
    violations: list

    def to_dict(self) -> dict:
        return {
            "ok": self.ok, "V0": self.V0, "V_sup": self.V_sup, "m": self.m,
            "K_sup": self.K_sup, "boundary_max_K": self.boundary_max_K,
            "M_estimate": {"center": self.M_center, "radius": self.M_radius,
                           "n_points": len(self.M_points)},
            "violations": [v.__dict__ for v in self.violations],
        }


def _box_samples(d, R, n):
    if d <= 3:
        ax = np.linspace(-R, R, n)
        mesh = np.meshgrid(*([ax] * d), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = np.random.default_rng(1)
    dirs = rng.standard_normal((n * 8, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(0, R, n)
    return (dirs[:, None, :] * radii[None, :, None]).reshape(-1, d)


def _region_samples(region, d, n):
    """Interior samples of a ball or box region."""
    if region.kind == "ball":
        c = region._pad(region.center, d)
        pts = c + _box_samples(d, region.radius, n)
        return pts[region.contains(pts)]
    lo, hi = region._pad(region.lo, d), region._pad(region.hi, d)
    k = len(region.lo)
    if d <= 3:
        axes = [np.linspace(lo[j], hi[j], n)[1:-1] if j < k else np.array([0.0]) for j in range(d)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)
    rng = np.random.default_rng(2)
    pts = np.zeros((n**2, d))
    pts[:, :k] = lo[:k] + (hi[:k] - lo[:k]) * rng.random((n**2, k))
    return pts


def validate_assumptions(V: Expr, K: Expr, region_O, samples: int = 81, dim: int = 2,
                         K0: float | None = None, box_radii=(1.0, 4.0, 16.0, 64.0),
                         gap_tol: float = 1e-9) -> AssumptionReport:
    """Sample ``V`` and ``K`` to check the positivity/boundedness and boundary-gap assumptions.

    ``V`` is sampled on nested boxes: the infimum must be positive and the
    supremum must settle (shrinking increments across boxes).  ``K`` is sampled
    inside ``region_O``, on its boundary and on the boxes; the maximum over the
    boundary must fall strictly below ``m = max_O K``.
    """
    Vf, Kf = as_point_function(V), as_point_function(K)
    viol = []
    sups, infs = [], []
    V0 = np.inf
    V_sup = -np.inf
    K_sup = -np.inf
    for R in box_radii:
        pts = _box_samples(dim, R, samples if dim <= 2 else max(17, samples // 4))
        try:
            vals = Vf(pts)
        except EvalError as exc:
            viol.append(Violation("V", f"V is not finite on the sample box: {exc}", exc.witness))
            break
        i_min, i_max = int(np.argmin(vals)), int(np.argmax(vals))
        if vals[i_min] < V0:
            V0, w_min = float(vals[i_min]), pts[i_min].tolist()
        V_sup = max(V_sup, float(vals[i_max]))
        sups.append((float(vals[i_max]), pts[i_max].tolist()))
        infs.append(float(vals[i_min]))
        try:
            kv = Kf(pts)
            K_sup = max(K_sup, float(kv.max()))
        except EvalError as exc:
            viol.append(Violation("K", f"K is not finite on the sample box: {exc}", exc.witness))
    if np.isfinite(V0) and V0 <= 0:
        viol.append(Violation("V", f"inf V = {V0:.6g} is not positive", w_min))
    if len(sups) >= 3:
        inc = np.diff([s for s, _ in sups])
        if inc[-1] > 1e-9 * max(1.0, abs(sups[-1][0])) and inc[-1] >= inc[-2]:
            viol.append(Violation(
                "V", f"sup V keeps growing with the sample box (sup = {sups[-1][0]:.6g} "
                     f"at the largest box)", sups[-1][1]))

    inside = _region_samples(region_O, dim, samples)
    bnd = region_O.boundary_samples(dim, 4 * samples)
    try:
        k_in = Kf(inside)
        k_bd = Kf(bnd)
    except EvalError as exc:
        viol.append(Violation("K", f"K is not finite on O: {exc}", exc.witness))
        return AssumptionReport(False, float(V0), float(V_sup), float("nan"), float(K_sup),
                                float("nan"), [], [], float("nan"), viol)
    m = float(max(k_in.max(), k_bd.max()))
    bmax = float(k_bd.max())
    K_sup = max(K_sup, m)
    if not m > 0:
        viol.append(Violation("K", f"sup_O K = {m:.6g} is not positive", inside[int(np.argmax(k_in))].tolist()))
    if not bmax < m - gap_tol * max(1.0, abs(m)):
        viol.append(Violation(
            "K", f"max of K on the boundary of O ({bmax:.6g}) is not strictly below sup_O K = {m:.6g}",
            bnd[int(np.argmax(k_bd))].tolist()))
    if K0 is not None and not K_sup < K0:
        viol.append(Violation("K", f"sup K = {K_sup:.6g} is not below K0 = {K0:.6g}", []))

    tol = 1e-6 * max(1.0, abs(m))
    Mpts = inside[k_in >= m - tol]
    if Mpts.size == 0:
        Mpts = inside[[int(np.argmax(k_in))]]
    center = Mpts.mean(axis=0)
    radius = float(np.mean(np.linalg.norm(Mpts - center, axis=1))) if len(Mpts) > 1 else 0.0
    if radius < 2 * float(np.max(np.ptp(inside, axis=0))) / samples:
        radius = 0.0
    return AssumptionReport(not viol, float(V0), float(V_sup), m, float(K_sup), bmax,
                            Mpts.tolist(), center.tolist(), radius, viol)
