"""Symbolic scalar expressions in the coordinates x, y, w.

A small, closed expression language: constants, the three coordinate
variables, unary functions (neg, sin, cos, exp, sinh, cosh, tanh, sqrt)
and binary arithmetic (+, -, *, / and ^ with a constant integer
exponent).  Every vector-field coefficient in the package is one of
these ASTs, so the module provides exact differentiation, scalar
evaluation with explicit domain errors, and a vectorised evaluator used
by the numeric hot paths.

There is deliberately no algebraic simplifier beyond constant folding
and 0/1 absorption in the smart constructors: correctness downstream is
by evaluation, not by canonical form.
"""

from functools import singledispatch
import math
import re

import numpy as np

VARIABLES = ("x", "y", "w")

_FUNCTIONS = ("sin", "cos", "exp", "sinh", "cosh", "tanh", "sqrt")


class ExprError(ValueError):
    """Base class for every error raised by this module."""


class ExprSyntaxError(ExprError):
    """Malformed input text.

    Carries the byte offset of the offending position and the set of
    token descriptions that would have been accepted there.
    """

    def __init__(self, offset, expected, found=None):
        self.offset = offset
        self.expected = frozenset(expected)
        self.found = found
        what = f"found {found}" if found else "unexpected end of input"
        menu = ", ".join(sorted(self.expected))
        super().__init__(f"syntax error at offset {offset}: {what}; expected one of: {menu}")


class UnknownIdentifierError(ExprError):
    """An identifier that is neither a variable (x, y, w) nor a known function."""

    def __init__(self, name, offset):
        self.name = name
        self.offset = offset
        super().__init__(f"unknown identifier {name!r} at offset {offset}")


class EvalDomainError(ExprError):
    """Evaluation left the regular domain (division by zero, sqrt of a negative, overflow)."""


class Expr:
    """Base AST node.  Immutable after construction."""

    precedence = 100
    operands = ()

    def __repr__(self):
        return f"{type(self).__name__}{self.operands!r}"

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and getattr(self, "value", None) == getattr(other, "value", None)
            and getattr(self, "name", None) == getattr(other, "name", None)
            and self.operands == other.operands
        )

    def __hash__(self):
        h = getattr(self, "_hash", None)
        if h is None:
            h = hash((type(self), getattr(self, "value", None),
                      getattr(self, "name", None), self.operands))
            object.__setattr__(self, "_hash", h)
        return h

    # Convenience arithmetic; everything funnels through the folding
    # constructors below.
    def __add__(self, other):
        return add(self, _coerce(other))

    def __radd__(self, other):
        return add(_coerce(other), self)

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    def __rmul__(self, other):
        return mul(_coerce(other), self)

    def __truediv__(self, other):
        return div(self, _coerce(other))

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __pow__(self, n):
        return pow_(self, n)

    def __neg__(self):
        return neg(self)


def _coerce(v):
    if isinstance(v, Expr):
        return v
    return Number(v)


class Number(Expr):
    def __init__(self, value):
        value = float(value)
        if not math.isfinite(value):
            raise ExprError(f"non-finite constant {value!r}")
        self.value = value

    def __repr__(self):
        return f"Number({self.value})"

    def __str__(self):
        if self.value == int(self.value) and abs(self.value) < 1e16:
            return str(int(self.value))
        return repr(self.value)


class Var(Expr):
    def __init__(self, name):
        if name not in VARIABLES:
            raise ExprError(f"variable must be one of {VARIABLES}, got {name!r}")
        self.name = name

    def __repr__(self):
        return f"Var({self.name!r})"

    def __str__(self):
        return self.name


X, Y, W = Var("x"), Var("y"), Var("w")


class _Binary(Expr):
    def __init__(self, left, right):
        self.operands = (_coerce(left), _coerce(right))

    def __str__(self):
        left, right = self.operands
        lhs = self._wrap(left, left.precedence < self.precedence)
        # The grammar is left-associative at each level, so a right
        # operand of equal precedence needs parentheses to round-trip.
        rhs = self._wrap(right, right.precedence <= self.precedence)
        if self.precedence == 1:
            return f"{lhs} {self.op_symbol} {rhs}"
        return f"{lhs}{self.op_symbol}{rhs}"

    @staticmethod
    def _wrap(operand, needed):
        return f"({operand})" if needed else str(operand)


class Add(_Binary):
    precedence = 1
    op_symbol = "+"


class Sub(_Binary):
    precedence = 1
    op_symbol = "-"


class Mul(_Binary):
    precedence = 2
    op_symbol = "*"


class Div(_Binary):
    precedence = 2
    op_symbol = "/"


class Pow(Expr):
    """base ^ n with a constant integer exponent n (kept as an int)."""

    precedence = 4
    op_symbol = "^"

    def __init__(self, base, exponent):
        if isinstance(exponent, Number):
            exponent = exponent.value
        if isinstance(exponent, float) and not exponent.is_integer():
            raise ExprError(f"exponent must be an integer, got {exponent!r}")
        self.exponent = int(exponent)
        self.operands = (_coerce(base),)

    def __repr__(self):
        return f"Pow({self.operands[0]!r}, {self.exponent})"

    def __eq__(self, other):
        return (
            type(other) is Pow
            and self.exponent == other.exponent
            and self.operands == other.operands
        )

    def __hash__(self):
        h = getattr(self, "_hash", None)
        if h is None:
            h = hash((Pow, self.exponent, self.operands))
            object.__setattr__(self, "_hash", h)
        return h

    def __str__(self):
        base = self.operands[0]
        shown = f"({base})" if base.precedence <= self.precedence else str(base)
        return f"{shown}^{self.exponent}"


class Neg(Expr):
    precedence = 3

    def __init__(self, operand):
        self.operands = (_coerce(operand),)

    def __str__(self):
        inner = self.operands[0]
        if inner.precedence < self.precedence:
            return f"-({inner})"
        return f"-{inner}"


class _Call(Expr):
    def __init__(self, operand):
        self.operands = (_coerce(operand),)

    def __str__(self):
        return f"{self.fn_name}({self.operands[0]})"


class Sin(_Call):
    fn_name = "sin"


class Cos(_Call):
    fn_name = "cos"


class Exp(_Call):
    fn_name = "exp"


class Sinh(_Call):
    fn_name = "sinh"


class Cosh(_Call):
    fn_name = "cosh"


class Tanh(_Call):
    fn_name = "tanh"


class Sqrt(_Call):
    fn_name = "sqrt"


_CALL_CLASSES = {
    "sin": Sin, "cos": Cos, "exp": Exp,
    "sinh": Sinh, "cosh": Cosh, "tanh": Tanh, "sqrt": Sqrt,
}


# ---------------------------------------------------------------------------
# Folding constructors.  These implement the only simplifications the
# module performs: constant folding and absorption of 0/1.

def _is_num(e, value=None):
    return isinstance(e, Number) and (value is None or e.value == value)


def add(u, v):
    u, v = _coerce(u), _coerce(v)
    if _is_num(u) and _is_num(v):
        return Number(u.value + v.value)
    if _is_num(u, 0.0):
        return v
    if _is_num(v, 0.0):
        return u
    return Add(u, v)


def sub(u, v):
    u, v = _coerce(u), _coerce(v)
    if _is_num(u) and _is_num(v):
        return Number(u.value - v.value)
    if _is_num(v, 0.0):
        return u
    if _is_num(u, 0.0):
        return neg(v)
    return Sub(u, v)


def mul(u, v):
    u, v = _coerce(u), _coerce(v)
    if _is_num(u) and _is_num(v):
        return Number(u.value * v.value)
    if _is_num(u, 0.0) or _is_num(v, 0.0):
        return Number(0.0)
    if _is_num(u, 1.0):
        return v
    if _is_num(v, 1.0):
        return u
    return Mul(u, v)


def div(u, v):
    u, v = _coerce(u), _coerce(v)
    if _is_num(v) and v.value != 0.0:
        if _is_num(u):
            return Number(u.value / v.value)
        if v.value == 1.0:
            return u
    if _is_num(u, 0.0) and not _is_num(v, 0.0):
        return Number(0.0)
    return Div(u, v)


def neg(u):
    u = _coerce(u)
    if _is_num(u):
        return Number(-u.value)
    return Neg(u)


def pow_(u, n):
    u = _coerce(u)
    if isinstance(n, Number):
        n = n.value
    if isinstance(n, float) and not n.is_integer():
        raise ExprError(f"exponent must be an integer, got {n!r}")
    n = int(n)
    if n == 0:
        return Number(1.0)
    if n == 1:
        return u
    if _is_num(u) and not (u.value == 0.0 and n < 0):
        try:
            return Number(u.value ** n)
        except OverflowError:
            pass
    return Pow(u, n)


def sin(u):
    return Sin(u)


def cos(u):
    return Cos(u)


def exp(u):
    return Exp(u)


def sinh(u):
    return Sinh(u)


def cosh(u):
    return Cosh(u)


def tanh(u):
    return Tanh(u)


def sqrt(u):
    return Sqrt(u)


# ---------------------------------------------------------------------------
# Parser: hand-rolled recursive descent over a regex token stream.
#
#   expr   = term { ("+" | "-") term }
#   term   = unary { ("*" | "/") unary }
#   unary  = "-" unary | power
#   power  = atom [ "^" integer ]
#   atom   = number | variable | function "(" expr ")" | "(" expr ")"
#
# '^' binds tighter than unary minus; '+ - * /' associate to the left.

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+)"
    r"|(?P<number>(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()])"
)

_START_TOKENS = frozenset({"number", "identifier", "'('", "'-'"})


class _Token:
    __slots__ = ("kind", "text", "offset")

    def __init__(self, kind, text, offset):
        self.kind = kind
        self.text = text
        self.offset = offset


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ExprSyntaxError(pos, {"number", "identifier", "operator"},
                                  found=repr(text[pos]))
        pos = m.end()
        if m.lastgroup == "ws":
            continue
        kind = m.lastgroup
        if kind == "op":
            kind = m.group()
        tokens.append(_Token(kind, m.group(), m.start()))
    tokens.append(_Token("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text):
        self.text = text
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def advance(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected):
        tok = self.peek()
        found = repr(tok.text) if tok.kind != "end" else None
        raise ExprSyntaxError(tok.offset, expected, found=found)

    def parse(self):
        e = self.expr()
        if self.peek().kind != "end":
            self.fail({"'+'", "'-'", "'*'", "'/'", "'^'", "end of input"})
        return e

    def expr(self):
        e = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.advance().kind
            rhs = self.term()
            e = add(e, rhs) if op == "+" else sub(e, rhs)
        return e

    def term(self):
        e = self.unary()
        while self.peek().kind in ("*", "/"):
            op = self.advance().kind
            rhs = self.unary()
            e = mul(e, rhs) if op == "*" else div(e, rhs)
        return e

    def unary(self):
        if self.peek().kind == "-":
            self.advance()
            return neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek().kind == "^":
            self.advance()
            return pow_(base, self.integer())
        return base

    def integer(self):
        sign = 1
        if self.peek().kind == "-":
            self.advance()
            sign = -1
        tok = self.peek()
        if tok.kind != "number":
            self.fail({"integer exponent"})
        value = float(tok.text)
        if not value.is_integer():
            self.fail({"integer exponent"})
        self.advance()
        return sign * int(value)

    def atom(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return Number(float(tok.text))
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if name in _CALL_CLASSES:
                if self.peek().kind != "(":
                    self.fail({"'('"})
                self.advance()
                arg = self.expr()
                if self.peek().kind != ")":
                    self.fail({"')'"})
                self.advance()
                return _CALL_CLASSES[name](arg)
            if name in VARIABLES:
                return Var(name)
            raise UnknownIdentifierError(name, tok.offset)
        if tok.kind == "(":
            self.advance()
            e = self.expr()
            if self.peek().kind != ")":
                self.fail({"')'"})
            self.advance()
            return e
        self.fail(_START_TOKENS)


def parse(text):
    """Parse ``text`` into an AST.

    Raises ExprSyntaxError (with byte offset and expected-token set) on
    malformed input and UnknownIdentifierError for identifiers other
    than x, y, w and the known function names.
    """
    if not isinstance(text, str):
        raise ExprError(f"expected a string, got {type(text).__name__}")
    return _Parser(text).parse()


# ---------------------------------------------------------------------------
# Scalar evaluation.

def evaluate(e, point):
    """Evaluate ``e`` at ``point`` = (x, y, w).

    Division by zero, sqrt of a negative and overflow raise
    EvalDomainError rather than producing NaN/inf silently.
    """
    x, y, w = point
    env = {"x": float(x), "y": float(y), "w": float(w)}
    return _eval(e, env, {})


def _eval(e, env, cache):
    key = id(e)
    if key in cache:
        return cache[key][1]
    v = _eval_node(e, env, cache)
    cache[key] = (e, v)
    return v


def _eval_node(e, env, cache):
    if isinstance(e, Number):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -_eval(e.operands[0], env, cache)
    if isinstance(e, (Add, Sub, Mul, Div)):
        a = _eval(e.operands[0], env, cache)
        b = _eval(e.operands[1], env, cache)
        if isinstance(e, Add):
            return a + b
        if isinstance(e, Sub):
            return a - b
        if isinstance(e, Mul):
            return a * b
        if b == 0.0:
            raise EvalDomainError(f"division by zero in {e}")
        return a / b
    if isinstance(e, Pow):
        base = _eval(e.operands[0], env, cache)
        if base == 0.0 and e.exponent < 0:
            raise EvalDomainError(f"zero raised to negative power in {e}")
        try:
            return float(base ** e.exponent)
        except OverflowError as err:
            raise EvalDomainError(f"overflow in {e}") from err
    if isinstance(e, _Call):
        arg = _eval(e.operands[0], env, cache)
        if isinstance(e, Sqrt) and arg < 0.0:
            raise EvalDomainError(f"sqrt of negative value {arg} in {e}")
        try:
            return getattr(math, e.fn_name)(arg)
        except (ValueError, OverflowError) as err:
            raise EvalDomainError(f"domain error in {e}: {err}") from err
    raise ExprError(f"cannot evaluate {type(e).__name__}")


# ---------------------------------------------------------------------------
# Differentiation.  The public entry point memoizes on node identity so
# shared subexpressions (the ASTs here are DAGs in practice) are
# differentiated once.

def differentiate(e, var):
    """Exact symbolic derivative of ``e`` with respect to ``var`` in {x, y, w}."""
    if var not in VARIABLES:
        raise ExprError(f"variable must be one of {VARIABLES}, got {var!r}")
    cache = {}

    def walk(node):
        key = id(node)
        hit = cache.get(key)
        if hit is not None:
            return hit[1]
        d = _diff(node, var, walk)
        cache[key] = (node, d)
        return d

    return walk(e)


@singledispatch
def _diff(e, var, rec):
    raise ExprError(f"cannot differentiate {type(e).__name__}")


@_diff.register(Number)
def _(e, var, rec):
    return Number(0.0)


@_diff.register(Var)
def _(e, var, rec):
    return Number(1.0 if e.name == var else 0.0)


@_diff.register(Add)
def _(e, var, rec):
    u, v = e.operands
    return add(rec(u), rec(v))


@_diff.register(Sub)
def _(e, var, rec):
    u, v = e.operands
    return sub(rec(u), rec(v))


@_diff.register(Mul)
def _(e, var, rec):
    u, v = e.operands
    return add(mul(rec(u), v), mul(u, rec(v)))


@_diff.register(Div)
def _(e, var, rec):
    u, v = e.operands
    return div(sub(mul(rec(u), v), mul(u, rec(v))), pow_(v, 2))


@_diff.register(Pow)
def _(e, var, rec):
    base = e.operands[0]
    n = e.exponent
    return mul(mul(Number(n), pow_(base, n - 1)), rec(base))


@_diff.register(Neg)
def _(e, var, rec):
    return neg(rec(e.operands[0]))


@_diff.register(Sin)
def _(e, var, rec):
    u = e.operands[0]
    return mul(cos(u), rec(u))


@_diff.register(Cos)
def _(e, var, rec):
    u = e.operands[0]
    return neg(mul(sin(u), rec(u)))


@_diff.register(Exp)
def _(e, var, rec):
    u = e.operands[0]
    return mul(e, rec(u))


@_diff.register(Sinh)
def _(e, var, rec):
    u = e.operands[0]
    return mul(cosh(u), rec(u))


@_diff.register(Cosh)
def _(e, var, rec):
    u = e.operands[0]
    return mul(sinh(u), rec(u))


@_diff.register(Tanh)
def _(e, var, rec):
    u = e.operands[0]
    return mul(sub(Number(1.0), pow_(tanh(u), 2)), rec(u))


@_diff.register(Sqrt)
def _(e, var, rec):
    u = e.operands[0]
    return div(rec(u), mul(Number(2.0), sqrt(u)))


# ---------------------------------------------------------------------------
# Substitution (used for dilations and frame rebasing).

def substitute(e, mapping):
    """Replace variables by expressions: ``mapping`` maps names to Exprs.

    Unmentioned variables are left alone.  Rebuilding goes through the
    folding constructors, so substituting constants folds on the fly.
    """
    mapping = {k: _coerce(v) for k, v in mapping.items()}
    for k in mapping:
        if k not in VARIABLES:
            raise ExprError(f"cannot substitute unknown variable {k!r}")
    cache = {}

    def walk(node):
        key = id(node)
        hit = cache.get(key)
        if hit is not None:
            return hit[1]
        out = _subst_node(node, mapping, walk)
        cache[key] = (node, out)
        return out

    return walk(e)


def _subst_node(e, mapping, rec):
    if isinstance(e, Number):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Add):
        return add(rec(e.operands[0]), rec(e.operands[1]))
    if isinstance(e, Sub):
        return sub(rec(e.operands[0]), rec(e.operands[1]))
    if isinstance(e, Mul):
        return mul(rec(e.operands[0]), rec(e.operands[1]))
    if isinstance(e, Div):
        return div(rec(e.operands[0]), rec(e.operands[1]))
    if isinstance(e, Pow):
        return pow_(rec(e.operands[0]), e.exponent)
    if isinstance(e, Neg):
        return neg(rec(e.operands[0]))
    if isinstance(e, _Call):
        return type(e)(rec(e.operands[0]))
    raise ExprError(f"cannot substitute into {type(e).__name__}")


# ---------------------------------------------------------------------------
# Vectorised evaluation.
#
# to_callable flattens the DAG into a post-order instruction list over
# value slots, evaluated with numpy.  Shared nodes are computed once.
# This path trades the scalar evaluator's domain errors for numpy
# semantics (inf/nan propagate); callers in the sampling loops guard for
# that explicitly, and tests pin it against `evaluate`.

def to_callable(e):
    """Compile ``e`` to a function f(x, y, w) accepting floats or ndarrays."""
    nodes = _postorder(e)
    slot = {id(n): i for i, n in enumerate(nodes)}
    program = []
    for n in nodes:
        i = slot[id(n)]
        if isinstance(n, Number):
            program.append(("const", i, np.float64(n.value), None))
        elif isinstance(n, Var):
            program.append(("var", i, n.name, None))
        elif isinstance(n, Pow):
            program.append(("pow", i, slot[id(n.operands[0])], n.exponent))
        elif isinstance(n, Neg):
            program.append(("neg", i, slot[id(n.operands[0])], None))
        elif isinstance(n, _Call):
            program.append((n.fn_name, i, slot[id(n.operands[0])], None))
        else:
            a, b = n.operands
            kind = {Add: "add", Sub: "sub", Mul: "mul", Div: "div"}[type(n)]
            program.append((kind, i, slot[id(a)], slot[id(b)]))
    out_slot = slot[id(e)]
    n_slots = len(nodes)

    ufuncs = {
        "sin": np.sin, "cos": np.cos, "exp": np.exp, "sinh": np.sinh,
        "cosh": np.cosh, "tanh": np.tanh, "sqrt": np.sqrt,
    }

    def run(x, y, w):
        # np.float64 scalars (unlike Python floats) follow np.errstate,
        # so 0/0 propagates as nan here instead of raising; callers that
        # need hard domain errors use `evaluate`.
        if not isinstance(x, np.ndarray):
            x = np.float64(x)
        if not isinstance(y, np.ndarray):
            y = np.float64(y)
        if not isinstance(w, np.ndarray):
            w = np.float64(w)
        env = {"x": x, "y": y, "w": w}
        slots = [None] * n_slots
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            for kind, dst, a, b in program:
                if kind == "const":
                    slots[dst] = a
                elif kind == "var":
                    slots[dst] = env[a]
                elif kind == "add":
                    slots[dst] = slots[a] + slots[b]
                elif kind == "sub":
                    slots[dst] = slots[a] - slots[b]
                elif kind == "mul":
                    slots[dst] = slots[a] * slots[b]
                elif kind == "div":
                    slots[dst] = slots[a] / slots[b]
                elif kind == "pow":
                    slots[dst] = slots[a] ** b
                elif kind == "neg":
                    slots[dst] = -slots[a]
                else:
                    slots[dst] = ufuncs[kind](slots[a])
        result = slots[out_slot]
        if isinstance(result, float):
            shape = np.broadcast(x, y, w).shape
            if shape:
                result = np.full(shape, result)
        return result

    return run


def _postorder(root):
    """Unique nodes of the DAG, children before parents, iteratively."""
    seen = set()
    order = []
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if id(node) in seen:
            continue
        if expanded:
            seen.add(id(node))
            order.append(node)
        else:
            stack.append((node, True))
            for child in node.operands:
                if id(child) not in seen:
                    stack.append((child, False))
    return order
