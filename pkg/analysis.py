"""Dependency and affinity analyses over an ExprGraph.

All queries are answered bottom-up over the nodes reachable from the
queried expression, memoised per (node, variable). Because the graph is
append-only, cached results stay valid while it grows.
"""

import logging
from dataclasses import dataclass

from compgraph import Const, ExprRef, Input, PrimitiveOp
from errors import NonAffineError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AffineTriple:
    is_affine: bool
    slope_nonzero: bool
    intercept_nonzero: bool


NOT_AFFINE = AffineTriple(False, False, False)


class AnalysisCache:
    def __init__(self):
        self.dependent = {}
        self.affine = {}
        self.coeff = {}

    def clear(self):
        self.dependent.clear()
        self.affine.clear()
        self.coeff.clear()


class Analyzer:
    """Answers dependent / affine / linear / affine_coeff queries for one graph.

    ``visits`` counts node evaluations; each (node, variable) pair is
    evaluated at most once per cache.
    """

    def __init__(self, graph, cache=None):
        self.graph = graph
        self.cache = cache if cache is not None else AnalysisCache()
        self.visits = 0

    def _pending(self, expr, var, table):
        return [i for i in self.graph.reachable(expr) if (i, var) not in table]

    # ---------------------------------------------------------
    # dependency
    # ---------------------------------------------------------
    def dependent(self, expr, var):
        table = self.cache.dependent
        for idx in self._pending(expr, var, table):
            self.visits += 1
            node = self.graph.nodes[idx]
            if isinstance(node, Input):
                table[idx, var] = node.var_id == var
            elif isinstance(node, Const):
                table[idx, var] = False
            else:
                table[idx, var] = any(table[o.index, var] for o in node.operands)
        return table[expr.index, var]

    # ---------------------------------------------------------
    # affinity
    # ---------------------------------------------------------
    def affine_all(self, expr, var):
        table = self.cache.affine
        for idx in self._pending(expr, var, table):
            self.visits += 1
            table[idx, var] = self._affine_node(idx, var, table)
        return table[expr.index, var]

    def _affine_node(self, idx, var, table):
        node = self.graph.nodes[idx]
        if isinstance(node, Input):
            if node.var_id == var:
                return AffineTriple(True, True, False)
            return AffineTriple(True, False, True)
        if isinstance(node, Const):
            return AffineTriple(True, False, node.value != 0.0)

        args = [table[o.index, var] for o in node.operands]
        if not all(a.is_affine for a in args):
            return NOT_AFFINE
        kind = node.kind
        if kind in (PrimitiveOp.ADD, PrimitiveOp.SUB):
            a, b = args
            return AffineTriple(
                True,
                a.slope_nonzero or b.slope_nonzero,
                a.intercept_nonzero or b.intercept_nonzero,
            )
        if kind is PrimitiveOp.MUL:
            a, b = args
            if a.slope_nonzero and b.slope_nonzero:
                return NOT_AFFINE
            return AffineTriple(
                True,
                (a.slope_nonzero and b.intercept_nonzero) or (b.slope_nonzero and a.intercept_nonzero),
                a.intercept_nonzero and b.intercept_nonzero,
            )
        if kind is PrimitiveOp.DIV:
            a, b = args
            if b.slope_nonzero:
                return NOT_AFFINE
            return AffineTriple(True, a.slope_nonzero, a.intercept_nonzero)
        # every other primitive is opaque: affine only when var-free
        if any(a.slope_nonzero for a in args):
            return NOT_AFFINE
        return AffineTriple(True, False, True)

    def affine(self, expr, var):
        return self.affine_all(expr, var).is_affine

    def linear(self, expr, var):
        triple = self.affine_all(expr, var)
        return triple.is_affine and not triple.intercept_nonzero

    # ---------------------------------------------------------
    # coefficients
    # ---------------------------------------------------------
    def affine_coeff(self, expr, var):
        """(p, q) with expr == p * x_var + q; neither contains Input(var).

        Zero coefficients come back as the interned Const(0).
        """
        g = self.graph
        table = self.cache.coeff
        zero = g.constant(0.0)
        self.dependent(expr, var)
        dep = self.cache.dependent
        for idx in self._pending(expr, var, table):
            self.visits += 1
            node = g.nodes[idx]
            if not dep[idx, var]:
                table[idx, var] = (zero, ExprRef(idx))
                continue
            if isinstance(node, Input):
                table[idx, var] = (g.constant(1.0), zero)
                continue
            kind = node.kind
            ops = node.operands
            if kind in (PrimitiveOp.ADD, PrimitiveOp.SUB):
                (p1, q1), (p2, q2) = table[ops[0].index, var], table[ops[1].index, var]
                combine = g.add if kind is PrimitiveOp.ADD else g.sub
                table[idx, var] = (combine(p1, p2), combine(q1, q2))
            elif kind is PrimitiveOp.MUL:
                a, b = ops
                dep_a, dep_b = dep[a.index, var], dep[b.index, var]
                if dep_a and dep_b:
                    raise NonAffineError(f"%{idx}: both factors depend on variable {var}")
                if dep_a:
                    p1, q1 = table[a.index, var]
                    table[idx, var] = (g.mul(p1, b), g.mul(q1, b))
                else:
                    p2, q2 = table[b.index, var]
                    table[idx, var] = (g.mul(a, p2), g.mul(a, q2))
            elif kind is PrimitiveOp.DIV:
                a, b = ops
                if dep[b.index, var]:
                    raise NonAffineError(f"%{idx}: divisor depends on variable {var}")
                p1, q1 = table[a.index, var]
                table[idx, var] = (g.div(p1, b), g.div(q1, b))
            else:
                raise NonAffineError(f"%{idx}: {kind.value} of an expression depending on variable {var}")
        return table[expr.index, var]
