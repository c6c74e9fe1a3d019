# grad.py
# ---------------------------------------------------------
# Differentiable log-joint of a model on the unconstrained
# latent space.
#
# build_logdensity flattens everything (bijections, parameter
# expressions, per-family log-densities) into one ExprGraph
# tape; LogDensityFn runs a scalar forward pass over it and a
# reverse sweep accumulating adjoints.
# ---------------------------------------------------------

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

import dists
from compgraph import Const, ExprGraph, Input, PrimitiveOp
from errors import IneligibleModelError, MissingBindingError

logger = logging.getLogger(__name__)

P = PrimitiveOp


@dataclass(frozen=True)
class LatentSlot:
    node_id: int
    name: str
    family: dists.DistFamily
    bijection: dists.Bijection


class LogDensityFn:
    """z (unconstrained, shape (dim,)) -> (log density incl. Jacobian, gradient)."""

    def __init__(self, slots, graph, root):
        self.slots = tuple(slots)
        self.graph = graph
        self.root = root
        order = graph.reachable(root)
        pos = {idx: i for i, idx in enumerate(order)}
        self._init = [0.0] * len(order)
        self._inputs = []
        code = []
        for i, idx in enumerate(order):
            node = graph.nodes[idx]
            if isinstance(node, Input):
                self._inputs.append((i, node.var_id))
            elif isinstance(node, Const):
                self._init[i] = node.value
            else:
                ops = [pos[o.index] for o in node.operands]
                b = ops[1] if len(ops) > 1 else -1
                code.append((i, node.kind, ops[0], b, node.exponent))
        self._code = tuple(code)
        self._out = pos[root.index]

    @property
    def dim(self):
        return len(self.slots)

    @property
    def names(self):
        return [s.name for s in self.slots]

    @property
    def tape_size(self):
        """Number of primitive operations on the tape."""
        return len(self._code)

    def _forward(self, z):
        vals = list(self._init)
        for slot, k in self._inputs:
            vals[slot] = z[k]
        for out, kind, a, b, e in self._code:
            x = vals[a]
            if kind is P.ADD:
                vals[out] = x + vals[b]
            elif kind is P.SUB:
                vals[out] = x - vals[b]
            elif kind is P.MUL:
                vals[out] = x * vals[b]
            elif kind is P.DIV:
                vals[out] = x / vals[b]
            elif kind is P.NEG:
                vals[out] = -x
            elif kind is P.SQUARE:
                vals[out] = x * x
            elif kind is P.SQRT:
                vals[out] = math.sqrt(x)
            elif kind is P.EXP:
                vals[out] = math.exp(x)
            elif kind is P.LOG:
                vals[out] = math.log(x)
            elif kind is P.POW_CONST:
                if x < 0 and not float(e).is_integer():
                    raise ValueError("non-real power")
                vals[out] = x**e
            else:
                vals[out] = math.lgamma(x)
        return vals

    def _backward(self, vals):
        adj = [0.0] * len(vals)
        adj[self._out] = 1.0
        for out, kind, a, b, e in reversed(self._code):
            g = adj[out]
            if g == 0.0:
                continue
            x = vals[a]
            if kind is P.ADD:
                adj[a] += g
                adj[b] += g
            elif kind is P.SUB:
                adj[a] += g
                adj[b] -= g
            elif kind is P.MUL:
                adj[a] += g * vals[b]
                adj[b] += g * x
            elif kind is P.DIV:
                adj[a] += g / vals[b]
                adj[b] -= g * vals[out] / vals[b]
            elif kind is P.NEG:
                adj[a] -= g
            elif kind is P.SQUARE:
                adj[a] += 2.0 * g * x
            elif kind is P.SQRT:
                adj[a] += g / (2.0 * vals[out])
            elif kind is P.EXP:
                adj[a] += g * vals[out]
            elif kind is P.LOG:
                adj[a] += g / x
            elif kind is P.POW_CONST:
                adj[a] += g * e * x ** (e - 1.0)
            else:
                adj[a] += g * float(special.digamma(x))
        grad = np.zeros(self.dim)
        for slot, k in self._inputs:
            grad[k] += adj[slot]
        return grad

    def log_prob(self, z):
        z = self._check(z)
        try:
            value = self._forward(z)[self._out]
        except (ValueError, ZeroDivisionError, OverflowError):
            return -math.inf
        return value if math.isfinite(value) else -math.inf

    def __call__(self, z):
        z = self._check(z)
        try:
            vals = self._forward(z)
            value = vals[self._out]
            if not math.isfinite(value):
                return -math.inf, np.zeros(self.dim)
            grad = self._backward(vals)
        except (ValueError, ZeroDivisionError, OverflowError):
            return -math.inf, np.zeros(self.dim)
        if not np.all(np.isfinite(grad)):
            return -math.inf, np.zeros(self.dim)
        return value, grad

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"expected a vector of length {self.dim}, got shape {z.shape}")
        return [float(v) for v in z]

    # ---------------------------------------------------------
    # coordinate maps
    # ---------------------------------------------------------
    def constrain(self, z):
        """Map unconstrained points (..., dim) to model space."""
        z = np.asarray(z, dtype=float)
        out = np.empty_like(z)
        for k, slot in enumerate(self.slots):
            out[..., k] = slot.bijection.inverse(z[..., k])
        return out

    def unconstrain(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for k, slot in enumerate(self.slots):
            out[..., k] = slot.bijection.forward(x[..., k])
        return out

    def to_assignment(self, x):
        """Constrained values (..., dim) as {NodeId: value(s)}."""
        x = np.asarray(x, dtype=float)
        return {slot.node_id: x[..., k] for k, slot in enumerate(self.slots)}


def _numeric_params(model, node):
    try:
        return model.graph.evaluate_many(node.params, {})
    except MissingBindingError:
        raise IneligibleModelError(
            f"support of {node.name} ~ {node.family} depends on other variables"
        ) from None


def build_logdensity(model):
    """Compile the log-joint of ``model`` over its unobserved nodes."""
    tape = ExprGraph()
    slots = []
    mapping = {}
    terms = []
    for k, v in enumerate(model.latent_ids()):
        node = model.nodes[v]
        if node.family.discrete:
            raise IneligibleModelError(f"latent node {node.name} ~ {node.family} is discrete")
        needs_bounds = node.family in (dists.DistFamily.UNIFORM, dists.DistFamily.PARETO)
        params = _numeric_params(model, node) if needs_bounds else None
        bijection = dists.unconstraining(node.family, params)
        x, logjac = bijection.inverse_expr(tape, tape.input(k))
        mapping[v] = x
        terms.append(logjac)
        slots.append(LatentSlot(v, node.name, node.family, bijection))
    for v in model.observed_ids():
        mapping[v] = tape.constant(model.nodes[v].observed)

    memo = {}
    for v in model.topo_order():
        node = model.nodes[v]
        params = [model.graph.substitute(p, mapping, target=tape, memo=memo) for p in node.params]
        terms.append(dists.log_density_expr(tape, node.family, params, mapping[v]))
    root = tape.sum(terms)
    tape.freeze()
    fn = LogDensityFn(slots, tape, root)
    logger.info("log-density tape: dim=%d, %d primitive operations", fn.dim, fn.tape_size)
    return fn


def gradient_check(fn, point, h=1e-5):
    """Max relative error between fn's gradient and central differences.

    Relative error per coordinate is |a - b| / max(1, |a|, |b|).
    """
    if h <= 0:
        raise ValueError("h must be positive")
    point = np.asarray(point, dtype=float)
    _, grad = fn(point)
    worst = 0.0
    for k in range(point.size):
        step = np.zeros_like(point)
        step[k] = h
        fd = (fn.log_prob(point + step) - fn.log_prob(point - step)) / (2.0 * h)
        err = abs(grad[k] - fd) / max(1.0, abs(grad[k]), abs(fd))
        worst = max(worst, err)
    return worst
