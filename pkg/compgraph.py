"""Append-only computation graphs for symbolic parameter expressions.

Every node writes exactly one value computed from earlier nodes, so the node
list is always a topological order. Inputs and constants are interned and Op
nodes are hash-consed, which gives structural sharing when many expressions
are merged into one graph. Algebraic simplification around literal zeros and
ones, and constant folding, happen at construction time in ``apply``.
"""

import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from errors import ExprDomainError, ExprError, MissingBindingError

logger = logging.getLogger(__name__)


class PrimitiveOp(Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    DIV = "DIV"
    NEG = "NEG"
    SQUARE = "SQUARE"
    SQRT = "SQRT"
    EXP = "EXP"
    LOG = "LOG"
    POW_CONST = "POW_CONST"
    # log|Gamma(x)|; only needed by the log-density tapes
    LGAMMA = "LGAMMA"

    @property
    def arity(self):
        return 2 if self in _BINARY else 1


_BINARY = frozenset({PrimitiveOp.ADD, PrimitiveOp.SUB, PrimitiveOp.MUL, PrimitiveOp.DIV})


@dataclass(frozen=True, order=True)
class ExprRef:
    index: int

    def __repr__(self):
        return f"%{self.index}"


@dataclass(frozen=True)
class Input:
    var_id: int


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Op:
    kind: PrimitiveOp
    operands: tuple
    exponent: float = None


def apply_numeric(kind, args, exponent=None, node_index=None):
    """Compute one primitive on floats or numpy arrays.

    Raises ExprDomainError for LOG of non-positive values, SQRT of negative
    values, division by zero and non-real powers.
    """
    a = args[0]
    if kind is PrimitiveOp.ADD:
        return a + args[1]
    if kind is PrimitiveOp.SUB:
        return a - args[1]
    if kind is PrimitiveOp.MUL:
        return a * args[1]
    if kind is PrimitiveOp.DIV:
        if np.any(np.asarray(args[1]) == 0):
            raise ExprDomainError(f"division by zero at %{node_index}", node_index)
        return a / args[1]
    if kind is PrimitiveOp.NEG:
        return -a
    if kind is PrimitiveOp.SQUARE:
        return a * a
    if kind is PrimitiveOp.SQRT:
        if np.any(np.asarray(a) < 0):
            raise ExprDomainError(f"SQRT of a negative value at %{node_index}", node_index)
        return np.sqrt(a)
    if kind is PrimitiveOp.EXP:
        with np.errstate(over="ignore", under="ignore"):
            return np.exp(a)
    if kind is PrimitiveOp.LOG:
        if np.any(np.asarray(a) <= 0):
            raise ExprDomainError(f"LOG of a non-positive value at %{node_index}", node_index)
        return np.log(a)
    if kind is PrimitiveOp.POW_CONST:
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            out = np.power(a, exponent)
        if np.any(np.isnan(out)) and not np.any(np.isnan(np.asarray(a))):
            raise ExprDomainError(f"non-real power at %{node_index}", node_index)
        return out
    if kind is PrimitiveOp.LGAMMA:
        return special.gammaln(a)
    raise ExprError(f"unknown primitive {kind}")


def _as_output(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


class ExprGraph:
    """Shared, append-only store of symbolic expressions.

    With ``simplify=False`` no folding or algebraic rewriting happens;
    nodes are still hash-consed.
    """

    def __init__(self, simplify=True):
        self.simplify = simplify
        self.nodes = []
        self._inputs = {}
        self._consts = {}
        self._ops = {}
        self._frozen = False
        self.simplified = 0

    def __len__(self):
        return len(self.nodes)

    def __getitem__(self, ref):
        return self.nodes[ref.index]

    # -------------------------------------------------------
    # construction
    # -------------------------------------------------------
    @property
    def frozen(self):
        return self._frozen

    def freeze(self):
        self._frozen = True
        return self

    def copy(self):
        """Unfrozen copy; ExprRefs stay valid in both graphs."""
        out = ExprGraph(simplify=self.simplify)
        out.nodes = list(self.nodes)
        out._inputs = dict(self._inputs)
        out._consts = dict(self._consts)
        out._ops = dict(self._ops)
        out.simplified = self.simplified
        return out

    def _append(self, node):
        if self._frozen:
            raise ExprError("graph is frozen")
        self.nodes.append(node)
        return ExprRef(len(self.nodes) - 1)

    def input(self, var_id):
        ref = self._inputs.get(var_id)
        if ref is None:
            ref = self._append(Input(var_id))
            self._inputs[var_id] = ref
        return ref

    def find_input(self, var_id):
        """ExprRef of Input(var_id) if it exists, without appending."""
        return self._inputs.get(var_id)

    def constant(self, value):
        value = float(value)
        if not np.isfinite(value):
            raise ExprError(f"constant must be finite, got {value}")
        value += 0.0  # -0.0 and 0.0 intern to the same node
        ref = self._consts.get(value)
        if ref is None:
            ref = self._append(Const(value))
            self._consts[value] = ref
        return ref

    def is_const(self, ref):
        return isinstance(self.nodes[ref.index], Const)

    def const_value(self, ref):
        node = self.nodes[ref.index]
        return node.value if isinstance(node, Const) else None

    def is_zero(self, ref):
        return ref == self._consts.get(0.0)

    def is_one(self, ref):
        return ref == self._consts.get(1.0)

    def is_input(self, ref, var_id=None):
        node = self.nodes[ref.index]
        return isinstance(node, Input) and (var_id is None or node.var_id == var_id)

    def apply(self, kind, operands, exponent=None):
        operands = tuple(operands)
        if len(operands) != kind.arity:
            raise ExprError(f"{kind.value} expects {kind.arity} operands, got {len(operands)}")
        for ref in operands:
            if not 0 <= ref.index < len(self.nodes):
                raise ExprError(f"operand {ref!r} is not a node of this graph")
        if kind is PrimitiveOp.POW_CONST:
            if exponent is None or not np.isfinite(exponent):
                raise ExprError("POW_CONST needs a finite exponent")
            exponent = float(exponent)
        elif exponent is not None:
            raise ExprError(f"{kind.value} takes no exponent")
        if kind is PrimitiveOp.DIV and self.is_zero(operands[1]):
            raise ExprError("division by literal zero")

        if self.simplify and all(self.is_const(ref) for ref in operands):
            value = apply_numeric(kind, [self.nodes[r.index].value for r in operands], exponent)
            if not np.isfinite(value):
                raise ExprDomainError(f"folding {kind.value} gave a non-finite value")
            self.simplified += 1
            return self.constant(value)

        simplified = self._simplify(kind, operands, exponent) if self.simplify else None
        if simplified is not None:
            self.simplified += 1
            return simplified

        key = (kind, operands, exponent)
        ref = self._ops.get(key)
        if ref is None:
            ref = self._append(Op(kind, operands, exponent))
            self._ops[key] = ref
        return ref

    def _simplify(self, kind, operands, exponent):
        if kind is PrimitiveOp.ADD:
            a, b = operands
            if self.is_zero(b):
                return a
            if self.is_zero(a):
                return b
        elif kind is PrimitiveOp.SUB:
            if self.is_zero(operands[1]):
                return operands[0]
        elif kind is PrimitiveOp.MUL:
            a, b = operands
            if self.is_zero(a) or self.is_zero(b):
                return self.constant(0.0)
            if self.is_one(b):
                return a
            if self.is_one(a):
                return b
        elif kind is PrimitiveOp.DIV:
            a, b = operands
            if self.is_zero(a):
                return a
            if self.is_one(b):
                return a
        elif kind is PrimitiveOp.POW_CONST and exponent == 1.0:
            return operands[0]
        return None

    # sugar used throughout the transformation code
    def add(self, a, b):
        return self.apply(PrimitiveOp.ADD, (a, b))

    def sub(self, a, b):
        return self.apply(PrimitiveOp.SUB, (a, b))

    def mul(self, a, b):
        return self.apply(PrimitiveOp.MUL, (a, b))

    def div(self, a, b):
        return self.apply(PrimitiveOp.DIV, (a, b))

    def neg(self, a):
        return self.apply(PrimitiveOp.NEG, (a,))

    def square(self, a):
        return self.apply(PrimitiveOp.SQUARE, (a,))

    def sqrt(self, a):
        return self.apply(PrimitiveOp.SQRT, (a,))

    def exp(self, a):
        return self.apply(PrimitiveOp.EXP, (a,))

    def log(self, a):
        return self.apply(PrimitiveOp.LOG, (a,))

    def pow_const(self, a, exponent):
        return self.apply(PrimitiveOp.POW_CONST, (a,), exponent=exponent)

    def lgamma(self, a):
        return self.apply(PrimitiveOp.LGAMMA, (a,))

    def sum(self, refs):
        total = self.constant(0.0)
        for ref in refs:
            total = self.add(total, ref)
        return total

    # -------------------------------------------------------
    # queries
    # -------------------------------------------------------
    def reachable(self, roots):
        """Indices reachable from ``roots``, ascending (a valid evaluation order)."""
        if isinstance(roots, ExprRef):
            roots = (roots,)
        seen = set()
        stack = [r.index for r in roots]
        while stack:
            idx = stack.pop()
            if idx in seen:
                continue
            seen.add(idx)
            node = self.nodes[idx]
            if isinstance(node, Op):
                stack.extend(o.index for o in node.operands)
        return sorted(seen)

    def inputs_of(self, roots):
        return frozenset(
            self.nodes[i].var_id for i in self.reachable(roots) if isinstance(self.nodes[i], Input)
        )

    def evaluate(self, root, bindings):
        return self.evaluate_many((root,), bindings)[0]

    def evaluate_many(self, roots, bindings):
        """Evaluate several roots in one forward pass.

        Bindings may be floats or numpy arrays of a common shape; each node
        is computed exactly once.
        """
        roots = tuple(roots)
        values = {}
        for idx in self.reachable(roots):
            node = self.nodes[idx]
            if isinstance(node, Const):
                values[idx] = node.value
            elif isinstance(node, Input):
                if node.var_id not in bindings:
                    raise MissingBindingError(node.var_id)
                values[idx] = bindings[node.var_id]
            else:
                args = [values[o.index] for o in node.operands]
                values[idx] = apply_numeric(node.kind, args, node.exponent, node_index=idx)
        return [_as_output(values[r.index]) for r in roots]

    def substitute(self, root, mapping, target=None, memo=None):
        """Rebuild ``root`` in ``target`` with Input(v) replaced by ``mapping[v]``.

        ``mapping`` values are ExprRefs of ``target``. Inputs without a
        mapping are re-created as inputs of ``target``. Sharing a ``memo``
        across calls keeps common subexpressions shared in the target.
        """
        target = self if target is None else target
        memo = {} if memo is None else memo
        for idx in self.reachable(root):
            if idx in memo:
                continue
            node = self.nodes[idx]
            if isinstance(node, Input):
                if node.var_id in mapping:
                    memo[idx] = mapping[node.var_id]
                else:
                    memo[idx] = target.input(node.var_id)
            elif isinstance(node, Const):
                memo[idx] = target.constant(node.value)
            else:
                memo[idx] = target.apply(
                    node.kind, [memo[o.index] for o in node.operands], node.exponent
                )
        return memo[root.index]

    def format(self, root, names=None):
        """Infix rendering of one expression, e.g. ``(mu + (tau ^ 2))``."""
        names = names or {}
        text = {}
        infix = {
            PrimitiveOp.ADD: "+",
            PrimitiveOp.SUB: "-",
            PrimitiveOp.MUL: "*",
            PrimitiveOp.DIV: "/",
        }
        for idx in self.reachable(root):
            node = self.nodes[idx]
            if isinstance(node, Input):
                text[idx] = str(names.get(node.var_id, f"x{node.var_id}"))
            elif isinstance(node, Const):
                text[idx] = f"{node.value:g}"
            else:
                args = [text[o.index] for o in node.operands]
                if node.kind in infix:
                    text[idx] = f"({args[0]} {infix[node.kind]} {args[1]})"
                elif node.kind is PrimitiveOp.SQUARE:
                    text[idx] = f"({args[0]} ^ 2)"
                elif node.kind is PrimitiveOp.POW_CONST:
                    text[idx] = f"({args[0]} ^ {node.exponent:g})"
                elif node.kind is PrimitiveOp.NEG:
                    text[idx] = f"-{args[0]}"
                else:
                    text[idx] = f"{node.kind.value.lower()}({args[0]})"
        return text[root.index]

    def dump(self, roots=None, names=None):
        """Listing with one node per line: ``%<idx> = <OP> %<operand>...``."""
        names = names or {}
        indices = range(len(self.nodes)) if roots is None else self.reachable(roots)
        lines = []
        for idx in indices:
            node = self.nodes[idx]
            if isinstance(node, Input):
                label = names.get(node.var_id, node.var_id)
                lines.append(f"%{idx} = INPUT {label}")
            elif isinstance(node, Const):
                lines.append(f"%{idx} = CONST {node.value!r}")
            else:
                op = node.kind.value
                if node.kind is PrimitiveOp.POW_CONST:
                    op = f"{op}[{node.exponent!r}]"
                args = " ".join(repr(o) for o in node.operands)
                lines.append(f"%{idx} = {op} {args}")
        return "\n".join(lines)
