"""Protocol mini-language: staged feedback rules for ablation procedures.

A protocol program is a sequence of phases, each holding WHEN rules that set
controlled variables, advance to the next phase, or end the procedure:

    PHASE main
    WHEN temperature_avg > 105 SET power = power - 10
    WHEN time > 720 END

Expressions use floats, + - * / ^, comparisons, && || !, parentheses and
if(cond, a, b). Rules are evaluated top to bottom each tick; SET effects are
visible to later rules in the same tick; the first ADVANCE or END
short-circuits the rest. The full grammar lives in docs/protocol-grammar.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

KEYWORDS = ("PHASE", "WHEN", "SET", "ADVANCE", "END")


class ProtocolSyntaxError(Exception):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        loc = f" at line {line}, column {column}" if line else ""
        super().__init__(message + loc)
        self.line = line
        self.column = column


class UnknownVariableError(Exception):
    def __init__(self, name: str, line: int, column: int):
        super().__init__(f"unknown variable {name!r} at line {line}, column {column}")
        self.name = name
        self.line = line
        self.column = column


class ProtocolEvalError(Exception):
    """Runtime evaluation failure, naming the offending rule."""

    def __init__(self, message: str, rule_line: int):
        super().__init__(f"{message} (rule at line {rule_line})")
        self.rule_line = rule_line


# --- AST --------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str
    line: int = 0
    column: int = 0

    def __eq__(self, other):
        return isinstance(other, Var) and other.name == self.name

    def __hash__(self):
        return hash(self.name)


@dataclass(frozen=True)
class Unary:
    op: str  # "-" | "!"
    operand: "Expr"


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class IfExpr:
    cond: "Expr"
    then: "Expr"
    otherwise: "Expr"


Expr = Union[Num, Var, Unary, Binary, IfExpr]


@dataclass(frozen=True)
class SetAction:
    target: str
    expr: Expr


@dataclass(frozen=True)
class AdvanceAction:
    pass


@dataclass(frozen=True)
class EndAction:
    pass


Action = Union[SetAction, AdvanceAction, EndAction]


@dataclass(frozen=True)
class Rule:
    guard: Expr
    action: Action
    line: int = 0

    def __eq__(self, other):
        return (
            isinstance(other, Rule)
            and other.guard == self.guard
            and other.action == self.action
        )

    def __hash__(self):
        return hash((self.guard, self.action))


@dataclass(frozen=True)
class Phase:
    name: str
    rules: tuple[Rule, ...]


@dataclass(frozen=True)
class ProtocolProgram:
    phases: tuple[Phase, ...]

    def set_targets(self) -> set[str]:
        return {
            r.action.target
            for p in self.phases
            for r in p.rules
            if isinstance(r.action, SetAction)
        }


# --- lexer ------------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str  # NUMBER IDENT OP NEWLINE EOF
    text: str
    line: int
    column: int


_TWO_CHAR_OPS = ("<=", ">=", "==", "!=", "&&", "||")
_ONE_CHAR_OPS = "+-*/^<>!()=,"


def _tokenize(source: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            tokens.append(_Token("NEWLINE", "\n", line, col))
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
                col += 1
            continue
        if source[i:i + 2] in _TWO_CHAR_OPS:
            tokens.append(_Token("OP", source[i:i + 2], line, col))
            i += 2
            col += 2
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            start = i
            while i < n and (source[i].isdigit() or source[i] == "."):
                i += 1
            if i < n and source[i] in "eE":
                j = i + 1
                if j < n and source[j] in "+-":
                    j += 1
                if j < n and source[j].isdigit():
                    i = j
                    while i < n and source[i].isdigit():
                        i += 1
            text = source[start:i]
            try:
                float(text)
            except ValueError:
                raise ProtocolSyntaxError(f"bad number {text!r}", line, col) from None
            tokens.append(_Token("NUMBER", text, line, col))
            col += i - start
            continue
        if ch.isalpha() or ch == "_":
            start = i
            while i < n and (source[i].isalnum() or source[i] == "_"):
                i += 1
            tokens.append(_Token("IDENT", source[start:i], line, col))
            col += i - start
            continue
        if ch in _ONE_CHAR_OPS:
            tokens.append(_Token("OP", ch, line, col))
            i += 1
            col += 1
            continue
        raise ProtocolSyntaxError(f"unexpected character {ch!r}", line, col)
    last = tokens[-1] if tokens else None
    # EOF carries the last token's location so end-of-input errors point at
    # the final thing actually seen.
    tokens.append(
        _Token("EOF", "", last.line if last else 1, last.column if last else 1)
    )
    return tokens


# --- parser -----------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def current(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.current
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def fail(self, message: str):
        tok = self.current
        raise ProtocolSyntaxError(message, tok.line, tok.column)

    def expect_op(self, op: str) -> _Token:
        tok = self.current
        if tok.kind != "OP" or tok.text != op:
            self.fail(f"expected {op!r}")
        return self.advance()

    def expect_ident(self, what: str = "identifier") -> _Token:
        tok = self.current
        if tok.kind != "IDENT":
            self.fail(f"expected {what}")
        return self.advance()

    def skip_newlines(self):
        while self.current.kind == "NEWLINE":
            self.advance()

    def end_statement(self):
        tok = self.current
        if tok.kind == "EOF":
            return
        if tok.kind != "NEWLINE":
            self.fail("expected end of statement")
        self.skip_newlines()

    # expression grammar, loosest binding first
    def expression(self) -> Expr:
        return self.or_expr()

    def or_expr(self) -> Expr:
        node = self.and_expr()
        while self.current.kind == "OP" and self.current.text == "||":
            self.advance()
            node = Binary("||", node, self.and_expr())
        return node

    def and_expr(self) -> Expr:
        node = self.not_expr()
        while self.current.kind == "OP" and self.current.text == "&&":
            self.advance()
            node = Binary("&&", node, self.not_expr())
        return node

    def not_expr(self) -> Expr:
        if self.current.kind == "OP" and self.current.text == "!":
            self.advance()
            return Unary("!", self.not_expr())
        return self.comparison()

    def comparison(self) -> Expr:
        node = self.sum_expr()
        if self.current.kind == "OP" and self.current.text in ("<", "<=", ">", ">=", "==", "!="):
            op = self.advance().text
            node = Binary(op, node, self.sum_expr())
        return node

    def sum_expr(self) -> Expr:
        node = self.term()
        while self.current.kind == "OP" and self.current.text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.current.kind == "OP" and self.current.text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.current.kind == "OP" and self.current.text == "-":
            self.advance()
            return Unary("-", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.current.kind == "OP" and self.current.text == "^":
            self.advance()
            return Binary("^", base, self.unary())  # right associative
        return base

    def atom(self) -> Expr:
        tok = self.current
        if tok.kind == "NUMBER":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "IDENT":
            self.advance()
            if tok.text == "if" and self.current.kind == "OP" and self.current.text == "(":
                self.advance()
                cond = self.expression()
                self.expect_op(",")
                then = self.expression()
                self.expect_op(",")
                otherwise = self.expression()
                self.expect_op(")")
                return IfExpr(cond, then, otherwise)
            return Var(tok.text, tok.line, tok.column)
        if tok.kind == "OP" and tok.text == "(":
            self.advance()
            node = self.expression()
            self.expect_op(")")
            return node
        self.fail("expected a value")

    # statements
    def rule(self) -> Rule:
        when = self.advance()  # WHEN, already checked
        guard = self.expression()
        tok = self.current
        if tok.kind != "IDENT" or tok.text not in ("SET", "ADVANCE", "END"):
            self.fail("expected SET, ADVANCE or END")
        self.advance()
        if tok.text == "SET":
            target = self.expect_ident("variable name")
            self.expect_op("=")
            expr = self.expression()
            action: Action = SetAction(target.text, expr)
        elif tok.text == "ADVANCE":
            action = AdvanceAction()
        else:
            action = EndAction()
        self.end_statement()
        return Rule(guard=guard, action=action, line=when.line)

    def phase(self) -> Phase:
        self.advance()  # PHASE
        name = self.expect_ident("phase name")
        self.end_statement()
        rules = []
        while self.current.kind == "IDENT" and self.current.text == "WHEN":
            rules.append(self.rule())
        return Phase(name.text, tuple(rules))

    def program(self) -> ProtocolProgram:
        self.skip_newlines()
        if self.current.kind == "EOF":
            raise ProtocolSyntaxError("empty program", self.current.line,
                                      self.current.column)
        phases = []
        while self.current.kind != "EOF":
            tok = self.current
            if tok.kind == "IDENT" and tok.text == "PHASE":
                phases.append(self.phase())
            else:
                self.fail("expected PHASE")
        if not phases:
            raise ProtocolSyntaxError("empty program", 1, 1)
        program = ProtocolProgram(tuple(phases))
        if not any(
            isinstance(r.action, EndAction) for p in program.phases for r in p.rules
        ):
            raise ProtocolSyntaxError("program has no END rule", 1, 1)
        return program


def parse_protocol(source: str) -> ProtocolProgram:
    """Parse protocol source into a program.

    Raises ProtocolSyntaxError with line/column on malformed input, including
    the empty program.
    """
    return _Parser(_tokenize(source)).program()


def link_program(
    program: ProtocolProgram,
    arguments: Sequence[str],
    parameters: Sequence[str] = (),
) -> None:
    """Check that every free variable is a declared argument, a parameter
    name, or a SET target; raises UnknownVariableError otherwise."""
    known = set(arguments) | set(parameters) | program.set_targets()

    def walk(expr: Expr):
        if isinstance(expr, Var):
            if expr.name not in known:
                raise UnknownVariableError(expr.name, expr.line, expr.column)
        elif isinstance(expr, Unary):
            walk(expr.operand)
        elif isinstance(expr, Binary):
            walk(expr.left)
            walk(expr.right)
        elif isinstance(expr, IfExpr):
            walk(expr.cond)
            walk(expr.then)
            walk(expr.otherwise)

    for phase in program.phases:
        for rule in phase.rules:
            walk(rule.guard)
            if isinstance(rule.action, SetAction):
                walk(rule.action.expr)


# --- printing (canonical source) --------------------------------------------

_PRECEDENCE = {"||": 1, "&&": 2, "<": 4, "<=": 4, ">": 4, ">=": 4, "==": 4,
               "!=": 4, "+": 5, "-": 5, "*": 6, "/": 6, "^": 8}


def _fmt(expr: Expr, parent: int = 0) -> str:
    if isinstance(expr, Num):
        return repr(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, IfExpr):
        return f"if({_fmt(expr.cond)}, {_fmt(expr.then)}, {_fmt(expr.otherwise)})"
    if isinstance(expr, Unary):
        prec = 3 if expr.op == "!" else 7
        text = expr.op + _fmt(expr.operand, prec)
        return f"({text})" if prec < parent else text
    prec = _PRECEDENCE[expr.op]
    if expr.op == "^":
        text = f"{_fmt(expr.left, prec + 1)} ^ {_fmt(expr.right, prec)}"
    elif prec == 4:  # comparisons do not chain
        text = f"{_fmt(expr.left, prec + 1)} {expr.op} {_fmt(expr.right, prec + 1)}"
    else:
        text = f"{_fmt(expr.left, prec)} {expr.op} {_fmt(expr.right, prec + 1)}"
    return f"({text})" if prec < parent else text


def format_program(program: ProtocolProgram) -> str:
    """Canonical source text; parse(format(p)) reproduces p exactly."""
    lines = []
    for phase in program.phases:
        lines.append(f"PHASE {phase.name}")
        for rule in phase.rules:
            if isinstance(rule.action, SetAction):
                action = f"SET {rule.action.target} = {_fmt(rule.action.expr)}"
            elif isinstance(rule.action, AdvanceAction):
                action = "ADVANCE"
            else:
                action = "END"
            lines.append(f"WHEN {_fmt(rule.guard)} {action}")
    return "\n".join(lines) + "\n"


# --- evaluation -------------------------------------------------------------


@dataclass
class EvalContext:
    """Complete bindings for one tick."""

    variables: dict[str, float] = field(default_factory=dict)
    parameters: dict[str, float] = field(default_factory=dict)
    phase: int = 0
    time: float = 0.0


@dataclass(frozen=True)
class TickResult:
    variables: dict[str, float]
    phase: int
    terminated: bool


def _truthy(value: float) -> bool:
    return value != 0.0


def _eval(expr: Expr, scope: dict[str, float], rule_line: int) -> float:
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        try:
            return scope[expr.name]
        except KeyError:
            raise ProtocolEvalError(f"unbound variable {expr.name!r}", rule_line) from None
    if isinstance(expr, Unary):
        if expr.op == "!":
            return 0.0 if _truthy(_eval(expr.operand, scope, rule_line)) else 1.0
        return -_eval(expr.operand, scope, rule_line)
    if isinstance(expr, IfExpr):
        if _truthy(_eval(expr.cond, scope, rule_line)):
            return _eval(expr.then, scope, rule_line)
        return _eval(expr.otherwise, scope, rule_line)
    # Binary
    if expr.op == "&&":
        if not _truthy(_eval(expr.left, scope, rule_line)):
            return 0.0
        return 1.0 if _truthy(_eval(expr.right, scope, rule_line)) else 0.0
    if expr.op == "||":
        if _truthy(_eval(expr.left, scope, rule_line)):
            return 1.0
        return 1.0 if _truthy(_eval(expr.right, scope, rule_line)) else 0.0
    left = _eval(expr.left, scope, rule_line)
    right = _eval(expr.right, scope, rule_line)
    try:
        if expr.op == "+":
            return left + right
        if expr.op == "-":
            return left - right
        if expr.op == "*":
            return left * right
        if expr.op == "/":
            return left / right
        if expr.op == "^":
            return left ** right
    except (ZeroDivisionError, OverflowError, ValueError) as exc:
        raise ProtocolEvalError(str(exc), rule_line) from exc
    # comparisons are exact: protocols express clinical thresholds
    if expr.op == "<":
        return 1.0 if left < right else 0.0
    if expr.op == "<=":
        return 1.0 if left <= right else 0.0
    if expr.op == ">":
        return 1.0 if left > right else 0.0
    if expr.op == ">=":
        return 1.0 if left >= right else 0.0
    if expr.op == "==":
        return 1.0 if left == right else 0.0
    if expr.op == "!=":
        return 1.0 if left != right else 0.0
    raise ProtocolEvalError(f"unknown operator {expr.op!r}", rule_line)


def tick(program: ProtocolProgram, ctx: EvalContext) -> TickResult:
    """Evaluate the current phase's rules against the context.

    Pure function of (program, ctx): SET effects are visible to later rules
    within the tick, and the first ADVANCE/END stops rule processing.
    ADVANCE out of the last phase terminates the program.
    """
    if not (0 <= ctx.phase < len(program.phases)):
        raise ProtocolEvalError(f"phase index {ctx.phase} out of range", 0)
    scope: dict[str, float] = dict(ctx.parameters)
    scope.update(ctx.variables)
    scope["time"] = ctx.time
    scope["phase"] = float(ctx.phase)

    variables = dict(ctx.variables)
    next_phase = ctx.phase
    terminated = False
    for rule in program.phases[ctx.phase].rules:
        if not _truthy(_eval(rule.guard, scope, rule.line)):
            continue
        if isinstance(rule.action, SetAction):
            value = _eval(rule.action.expr, scope, rule.line)
            scope[rule.action.target] = value
            variables[rule.action.target] = value
        elif isinstance(rule.action, AdvanceAction):
            next_phase += 1
            if next_phase >= len(program.phases):
                next_phase = len(program.phases) - 1
                terminated = True
            break
        else:
            terminated = True
            break
    return TickResult(variables=variables, phase=next_phase, terminated=terminated)
