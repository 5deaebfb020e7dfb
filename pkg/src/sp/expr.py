"""Guard and action expressions over named variables.

Predicates are plain trees: conjunction, disjunction, negation and the
three atom shapes (var == literal, var != literal, var == var) plus the
constants.  There is deliberately no arithmetic.  Actions are ordered
assignments of a literal or of another variable's current value.

The concrete syntax used in model files and on the CLI:

    !tr? && ti? && rc?
    up! == BP || b == placed
    tr! := true, ti! := false

``&&``/``||``/``!`` have the usual precedence, parentheses group.  A bare
boolean variable stands for ``var == true``.  On the right-hand side of a
comparison an identifier resolves to a variable when one of that name is
declared, otherwise to a literal; quote with single quotes to force a
literal.  Variable names may end in ``?`` or ``!`` (measured / output by
convention), so ``up!=BP`` reads as ``up! == BP`` when ``up!`` is declared
and ``up`` is not.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from typing import Iterator, Mapping


class ExprError(ValueError):
    """Raised for syntax or resolution problems in guards/actions."""

    def __init__(self, message: str, text: str = "", pos: int | None = None):
        if pos is not None:
            message = f"{message} (at column {pos + 1} in {text!r})"
        super().__init__(message)
        self.pos = pos


Value = bool | int | str


class Predicate:
    __slots__ = ()

    def variables(self) -> set[str]:
        return _collect_vars(self)


@dataclass(frozen=True, slots=True)
class Top(Predicate):
    pass


@dataclass(frozen=True, slots=True)
class Bot(Predicate):
    pass


@dataclass(frozen=True, slots=True)
class Eq(Predicate):
    var: str
    value: Value


@dataclass(frozen=True, slots=True)
class Ne(Predicate):
    var: str
    value: Value


@dataclass(frozen=True, slots=True)
class EqVar(Predicate):
    left: str
    right: str


@dataclass(frozen=True, slots=True)
class Not(Predicate):
    child: Predicate


@dataclass(frozen=True, slots=True)
class And(Predicate):
    children: tuple[Predicate, ...]


@dataclass(frozen=True, slots=True)
class Or(Predicate):
    children: tuple[Predicate, ...]


class OpaquePredicate(Predicate):
    """A predicate evaluated by code rather than by structure.

    Guard refinement produces these: the synthesized conjunct is a
    membership test against a computed state set, which has no compact
    tree form.  Subclasses implement ``holds`` and, optionally,
    ``compile_tuple`` for the fast engine.
    """

    __slots__ = ()

    def holds(self, get: Mapping[str, "Value"]) -> bool:
        raise NotImplementedError

    def describe(self) -> str:
        return "<opaque>"


TOP = Top()
BOT = Bot()


def conj(*parts: Predicate) -> Predicate:
    """Flattened conjunction; drops Top, collapses to Bot."""
    flat: list[Predicate] = []
    for p in parts:
        if isinstance(p, Top):
            continue
        if isinstance(p, Bot):
            return BOT
        if isinstance(p, And):
            flat.extend(p.children)
        else:
            flat.append(p)
    if not flat:
        return TOP
    if len(flat) == 1:
        return flat[0]
    return And(tuple(flat))


def disj(*parts: Predicate) -> Predicate:
    flat: list[Predicate] = []
    for p in parts:
        if isinstance(p, Bot):
            continue
        if isinstance(p, Top):
            return TOP
        if isinstance(p, Or):
            flat.extend(p.children)
        else:
            flat.append(p)
    if not flat:
        return BOT
    if len(flat) == 1:
        return flat[0]
    return Or(tuple(flat))


def negate(p: Predicate) -> Predicate:
    if isinstance(p, Top):
        return BOT
    if isinstance(p, Bot):
        return TOP
    if isinstance(p, Not):
        return p.child
    return Not(p)


def _collect_vars(p: Predicate) -> set[str]:
    out: set[str] = set()
    stack = [p]
    while stack:
        node = stack.pop()
        if isinstance(node, (Eq, Ne)):
            out.add(node.var)
        elif isinstance(node, EqVar):
            out.add(node.left)
            out.add(node.right)
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, (And, Or)):
            stack.extend(node.children)
        elif isinstance(node, OpaquePredicate):
            for name in getattr(node, "base_variables", lambda: set())():
                out.add(name)
    return out


@dataclass(frozen=True, slots=True)
class Assign:
    """target := literal"""

    target: str
    value: Value


@dataclass(frozen=True, slots=True)
class Copy:
    """target := source-variable (reads the pre-transition value)"""

    target: str
    source: str


Action = Assign | Copy


# --- tokenizer ----------------------------------------------------------

# Identifiers may contain any non-ASCII codepoint so combining marks in
# names survive; \w alone would reject them.
_IDENT_START = re.compile(r"[A-Za-z_-\U0010FFFF]")
_IDENT_CONT = re.compile(r"[A-Za-z0-9_/.-\U0010FFFF]")
_INT = re.compile(r"-?\d+")

_ALIASES = {"∧": "&&", "∨": "||", "¬": "!", "=": "=="}


@dataclass(frozen=True, slots=True)
class _Tok:
    kind: str  # op | ident | int | str | end
    text: str
    pos: int


def _tokenize(text: str, known: frozenset[str]) -> list[_Tok]:
    toks: list[_Tok] = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "(),":
            toks.append(_Tok("op", c, i))
            i += 1
            continue
        two = text[i : i + 2]
        if two in ("&&", "||", "==", ":="):
            toks.append(_Tok("op", two, i))
            i += 2
            continue
        if c in _ALIASES and c != "=":
            toks.append(_Tok("op", _ALIASES[c], i))
            i += 1
            continue
        if c == "=":
            toks.append(_Tok("op", "==", i))
            i += 1
            continue
        if c == "'":
            j = text.find("'", i + 1)
            if j < 0:
                raise ExprError("unterminated quoted literal", text, i)
            toks.append(_Tok("str", text[i + 1 : j], i))
            i = j + 1
            continue
        if c == "!":
            if two == "!=":
                toks.append(_Tok("op", "!=", i))
                i += 2
            else:
                toks.append(_Tok("op", "!", i))
                i += 1
            continue
        m = _INT.match(text, i)
        if m and not _IDENT_START.match(c):
            toks.append(_Tok("int", m.group(), i))
            i = m.end()
            continue
        if _IDENT_START.match(c):
            j = i + 1
            while j < n and _IDENT_CONT.match(text[j]):
                j += 1
            name = text[i:j]
            # optional ? / ! suffix; a trailing "!=" stays an operator
            # unless the suffixed name (and not the bare one) is declared
            if j < n and text[j] == "?":
                name, j = name + "?", j + 1
            elif j < n and text[j] == "!":
                suffixed = name + "!"
                if j + 1 >= n or text[j + 1] != "=" or (suffixed in known and name not in known):
                    name, j = suffixed, j + 1
            toks.append(_Tok("ident", name, i))
            i = j
            continue
        raise ExprError(f"unexpected character {c!r}", text, i)
    toks.append(_Tok("end", "", n))
    return toks


class _Parser:
    def __init__(self, text: str, known: frozenset[str]):
        self.text = text
        self.toks = _tokenize(text, known)
        self.i = 0

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def next(self) -> _Tok:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, op: str) -> _Tok:
        t = self.next()
        if t.kind != "op" or t.text != op:
            raise ExprError(f"expected {op!r}, found {t.text or 'end'!r}", self.text, t.pos)
        return t


class Vocabulary:
    """Resolution context for parsing: which names are variables, whether
    a variable is boolean, and whether a literal fits a variable's domain.
    The model layer supplies a concrete implementation."""

    def is_variable(self, name: str) -> bool:
        raise NotImplementedError

    def is_boolean(self, name: str) -> bool:
        raise NotImplementedError

    def check_literal(self, var: str, value: Value) -> Value:
        """Return the (possibly coerced) literal or raise ExprError."""
        raise NotImplementedError

    def names(self) -> frozenset[str]:
        raise NotImplementedError


class _DictVocab(Vocabulary):
    def __init__(self, booleans: set[str], others: set[str]):
        self._bools = booleans
        self._others = others

    def is_variable(self, name: str) -> bool:
        return name in self._bools or name in self._others

    def is_boolean(self, name: str) -> bool:
        return name in self._bools

    def check_literal(self, var: str, value: Value) -> Value:
        return value

    def names(self) -> frozenset[str]:
        return frozenset(self._bools) | frozenset(self._others)


def loose_vocabulary(booleans: set[str], others: set[str] = frozenset()) -> Vocabulary:
    """Unchecked vocabulary, handy in tests."""
    return _DictVocab(set(booleans), set(others))


def parse_predicate(text: str, vocab: Vocabulary) -> Predicate:
    text = unicodedata.normalize("NFC", text)
    p = _Parser(text, vocab.names())
    out = _parse_or(p, vocab)
    end = p.next()
    if end.kind != "end":
        raise ExprError(f"trailing input {end.text!r}", text, end.pos)
    return out


def _parse_or(p: _Parser, vocab: Vocabulary) -> Predicate:
    parts = [_parse_and(p, vocab)]
    while p.peek().kind == "op" and p.peek().text == "||":
        p.next()
        parts.append(_parse_and(p, vocab))
    return parts[0] if len(parts) == 1 else Or(tuple(parts))


def _parse_and(p: _Parser, vocab: Vocabulary) -> Predicate:
    parts = [_parse_unary(p, vocab)]
    while p.peek().kind == "op" and p.peek().text == "&&":
        p.next()
        parts.append(_parse_unary(p, vocab))
    return parts[0] if len(parts) == 1 else And(tuple(parts))


def _parse_unary(p: _Parser, vocab: Vocabulary) -> Predicate:
    t = p.peek()
    if t.kind == "op" and t.text == "!":
        p.next()
        return Not(_parse_unary(p, vocab))
    return _parse_atom(p, vocab)


def _parse_atom(p: _Parser, vocab: Vocabulary) -> Predicate:
    t = p.next()
    if t.kind == "op" and t.text == "(":
        inner = _parse_or(p, vocab)
        p.expect(")")
        return inner
    if t.kind == "ident" and t.text == "true":
        return TOP
    if t.kind == "ident" and t.text == "false":
        return BOT
    if t.kind != "ident":
        raise ExprError(f"expected a variable, found {t.text or 'end'!r}", p.text, t.pos)
    var = t.text
    if not vocab.is_variable(var):
        raise ExprError(f"unknown variable {var!r}", p.text, t.pos)
    nxt = p.peek()
    if nxt.kind == "op" and nxt.text in ("==", "!="):
        op = p.next().text
        rhs = p.next()
        if rhs.kind == "int":
            value: Value = int(rhs.text)
            value = vocab.check_literal(var, value)
            return Eq(var, value) if op == "==" else Ne(var, value)
        if rhs.kind == "str":
            value = vocab.check_literal(var, rhs.text)
            return Eq(var, value) if op == "==" else Ne(var, value)
        if rhs.kind != "ident":
            raise ExprError("expected a literal or variable after comparison", p.text, rhs.pos)
        if rhs.text in ("true", "false"):
            value = vocab.check_literal(var, rhs.text == "true")
            return Eq(var, value) if op == "==" else Ne(var, value)
        if vocab.is_variable(rhs.text):
            if op == "!=":
                raise ExprError(
                    "only equality is supported between two variables; "
                    f"quote {rhs.text!r} to compare against the literal",
                    p.text,
                    rhs.pos,
                )
            return EqVar(var, rhs.text)
        value = vocab.check_literal(var, rhs.text)
        return Eq(var, value) if op == "==" else Ne(var, value)
    # bare variable: boolean shorthand
    if not vocab.is_boolean(var):
        raise ExprError(f"{var!r} is not boolean; compare it explicitly", p.text, t.pos)
    return Eq(var, True)


def parse_actions(text: str, vocab: Vocabulary) -> tuple[Action, ...]:
    text = unicodedata.normalize("NFC", text)
    if not text.strip():
        return ()
    p = _Parser(text, vocab.names())
    out: list[Action] = []
    while True:
        t = p.next()
        if t.kind != "ident" or not vocab.is_variable(t.text):
            raise ExprError(f"expected a variable to assign, found {t.text or 'end'!r}", text, t.pos)
        target = t.text
        p.expect(":=")
        rhs = p.next()
        if rhs.kind == "int":
            out.append(Assign(target, vocab.check_literal(target, int(rhs.text))))
        elif rhs.kind == "str":
            out.append(Assign(target, vocab.check_literal(target, rhs.text)))
        elif rhs.kind == "ident" and rhs.text in ("true", "false"):
            out.append(Assign(target, vocab.check_literal(target, rhs.text == "true")))
        elif rhs.kind == "ident" and vocab.is_variable(rhs.text):
            out.append(Copy(target, rhs.text))
        elif rhs.kind == "ident":
            out.append(Assign(target, vocab.check_literal(target, rhs.text)))
        else:
            raise ExprError("expected a literal or variable after ':='", text, rhs.pos)
        nxt = p.next()
        if nxt.kind == "end":
            break
        if not (nxt.kind == "op" and nxt.text == ","):
            raise ExprError(f"expected ',' between actions, found {nxt.text!r}", text, nxt.pos)
    seen: set[str] = set()
    for a in out:
        if a.target in seen:
            raise ExprError(f"variable {a.target!r} assigned twice in one action set", text)
        seen.add(a.target)
    return tuple(out)


# --- serialization ------------------------------------------------------

_BARE_OK = re.compile(r"[A-Za-z_-\U0010FFFF][A-Za-z0-9_/.-\U0010FFFF]*[?!]?\Z")


def _format_value(value: Value, known: frozenset[str]) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if value in known or value in ("true", "false") or not _BARE_OK.match(value):
        return f"'{value}'"
    return value


def format_predicate(p: Predicate, known: frozenset[str] = frozenset()) -> str:
    return _fmt(p, known, 0)


def _fmt(p: Predicate, known: frozenset[str], level: int) -> str:
    # level: 0 or-context, 1 and-context, 2 atom-context
    if isinstance(p, OpaquePredicate):
        return p.describe()
    if isinstance(p, Top):
        return "true"
    if isinstance(p, Bot):
        return "false"
    if isinstance(p, Eq):
        if p.value is True:
            return p.var
        return f"{p.var} == {_format_value(p.value, known)}"
    if isinstance(p, Ne):
        return f"{p.var} != {_format_value(p.value, known)}"
    if isinstance(p, EqVar):
        return f"{p.left} == {p.right}"
    if isinstance(p, Not):
        inner = _fmt(p.child, known, 2)
        if isinstance(p.child, (And, Or)):
            inner = f"({inner})"
        elif isinstance(p.child, Eq) and p.child.value is not True:
            inner = f"({inner})"
        elif isinstance(p.child, (Ne, EqVar)):
            inner = f"({inner})"
        return f"!{inner}"
    if isinstance(p, And):
        body = " && ".join(
            f"({_fmt(c, known, 0)})" if isinstance(c, Or) else _fmt(c, known, 1)
            for c in p.children
        )
        return body
    if isinstance(p, Or):
        return " || ".join(_fmt(c, known, 0) for c in p.children)
    raise TypeError(f"not a predicate: {p!r}")


def format_actions(actions: tuple[Action, ...], known: frozenset[str] = frozenset()) -> str:
    parts = []
    for a in actions:
        if isinstance(a, Assign):
            parts.append(f"{a.target} := {_format_value(a.value, known)}")
        else:
            parts.append(f"{a.target} := {a.source}")
    return ", ".join(parts)


def iter_atoms(p: Predicate) -> Iterator[Predicate]:
    stack = [p]
    while stack:
        node = stack.pop()
        if isinstance(node, (And, Or)):
            stack.extend(node.children)
        elif isinstance(node, Not):
            stack.append(node.child)
        else:
            yield node


def eval_with(p: Predicate, get: Mapping[str, Value]) -> bool:
    """Reference evaluator over any mapping; the engine compiles instead."""
    if isinstance(p, Top):
        return True
    if isinstance(p, Bot):
        return False
    if isinstance(p, Eq):
        return get[p.var] == p.value
    if isinstance(p, Ne):
        return get[p.var] != p.value
    if isinstance(p, EqVar):
        return get[p.left] == get[p.right]
    if isinstance(p, Not):
        return not eval_with(p.child, get)
    if isinstance(p, And):
        return all(eval_with(c, get) for c in p.children)
    if isinstance(p, Or):
        return any(eval_with(c, get) for c in p.children)
    if isinstance(p, OpaquePredicate):
        return p.holds(get)
    raise TypeError(f"not a predicate: {p!r}")
