# transform.py
# ---------------------------------------------------------
# Model rewrites:
#   conjugacy detection over the five supported prior/likelihood
#   pairs, edge reversal, whole-model marginalisation with a
#   recovery stack, and the non-centred reparameterisation.
# ---------------------------------------------------------

import fnmatch
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

import dists
from analysis import Analyzer
from dists import DistFamily as F
from errors import ModelStructureError, TransformError

logger = logging.getLogger(__name__)


class Condition(Enum):
    AFFINE = "affine"
    LINEAR = "linear"
    IDENTITY = "identity"


@dataclass(frozen=True)
class ConjugacyPattern:
    prior: F
    likelihood: F
    condition: Condition
    # parameter slot of the child that must be affine/linear/identical in x_v
    target_slot: int
    # parameter slot of the child that must not depend on x_v
    independent_slot: int = None

    @property
    def name(self):
        return f"{self.prior}/{self.likelihood}"


CONJUGACY_PATTERNS = (
    ConjugacyPattern(F.NORMAL, F.NORMAL, Condition.AFFINE, 0, 1),
    ConjugacyPattern(F.GAMMA, F.GAMMA, Condition.LINEAR, 1, 0),
    ConjugacyPattern(F.GAMMA, F.EXPONENTIAL, Condition.LINEAR, 0),
    ConjugacyPattern(F.BETA, F.BINOMIAL, Condition.IDENTITY, 1, 0),
    ConjugacyPattern(F.BETA, F.BERNOULLI, Condition.IDENTITY, 0),
)


@dataclass(frozen=True)
class ReversalEvent:
    v: str
    c: str
    pattern: str

    def as_tuple(self):
        return (self.v, self.c, self.pattern)


# ---------------------------------------------------------
# conjugacy
# ---------------------------------------------------------
def match_pattern(model, v, c, analyzer=None):
    """The ConjugacyPattern making v locally conjugate to c, or None."""
    analyzer = analyzer or Analyzer(model.graph)
    vn, cn = model.nodes[v], model.nodes[c]
    if v not in cn.parents:
        return None
    for pattern in CONJUGACY_PATTERNS:
        if vn.family is not pattern.prior or cn.family is not pattern.likelihood:
            continue
        target = cn.params[pattern.target_slot]
        if pattern.condition is Condition.AFFINE:
            ok = analyzer.affine(target, v)
        elif pattern.condition is Condition.LINEAR:
            ok = analyzer.linear(target, v)
        else:
            ok = model.graph.is_input(target, v)
        if ok and pattern.independent_slot is not None:
            ok = not analyzer.dependent(cn.params[pattern.independent_slot], v)
        if ok:
            return pattern
    return None


def conjugate(model, v, c, analyzer=None):
    return match_pattern(model, v, c, analyzer) is not None


# ---------------------------------------------------------
# edge reversal
# ---------------------------------------------------------
def reverse(model, v, c, analyzer=None, pattern=None):
    """Reverse the edge v -> c in place, keeping the joint density.

    Afterwards c carries the marginal p(x_c | ...) and v the conditional
    p(x_v | x_c, ...). Raises CycleError if another path v -> c existed.
    """
    analyzer = analyzer or Analyzer(model.graph)
    pattern = pattern or match_pattern(model, v, c, analyzer)
    if pattern is None:
        raise TransformError(f"{model.name_of(v)} is not conjugate to {model.name_of(c)}")
    g = model.graph
    vn, cn = model.nodes[v], model.nodes[c]
    x_c = g.input(c)

    if pattern.prior is F.NORMAL:
        mu_v, var_v = vn.params
        mu_c, var_c = cn.params
        p, q = analyzer.affine_coeff(mu_c, v)
        marg_mu = g.add(g.mul(p, mu_v), q)
        marg_var = g.add(g.mul(g.square(p), var_v), var_c)
        # gain and conditional variance share var_v / marg_var
        ratio = g.div(var_v, marg_var)
        gain = g.mul(ratio, p)
        cond_mu = g.add(mu_v, g.mul(gain, g.sub(x_c, marg_mu)))
        cond_var = g.mul(ratio, var_c)
        c_new = (F.NORMAL, (marg_mu, marg_var))
        v_new = (F.NORMAL, (cond_mu, cond_var))

    elif pattern.prior is F.BETA:
        a_v, b_v = vn.params
        n_c = g.constant(1.0) if cn.family is F.BERNOULLI else cn.params[0]
        v_new = (F.BETA, (g.add(a_v, x_c), g.sub(g.add(b_v, n_c), x_c)))
        c_new = (F.BETA_BINOMIAL, (n_c, a_v, b_v))

    elif pattern.prior is F.GAMMA:
        a_v, b_v = vn.params
        if cn.family is F.EXPONENTIAL:
            a_c, rate_c = g.constant(1.0), cn.params[0]
        else:
            a_c, rate_c = cn.params
        p, q = analyzer.affine_coeff(rate_c, v)
        if not g.is_zero(q):
            raise TransformError(f"rate of {cn.name} has a non-zero intercept in {vn.name}")
        v_new = (F.GAMMA, (g.add(a_v, a_c), g.add(b_v, g.mul(p, x_c))))
        c_new = (F.COMPOUND_GAMMA, (a_c, a_v, g.div(b_v, p)))

    else:
        raise TransformError(f"unsupported pair {pattern.name}")

    model.set_distribution(c, *c_new)
    model.set_distribution(v, *v_new)
    # a second path v -> c shows up as a cycle here
    model.topo_order()
    logger.debug("reversed %s -> %s (%s)", vn.name, cn.name, pattern.name)
    return pattern


# ---------------------------------------------------------
# marginalisation / recovery
# ---------------------------------------------------------
@dataclass(frozen=True)
class RecoveryEntry:
    node_id: int
    name: str
    family: F
    params: tuple


@dataclass
class RecoveryStack:
    """Marginalised nodes with their conditionals, in push order.

    ``graph`` is the graph the parameter expressions live in.
    """

    graph: object
    entries: list = field(default_factory=list)

    def push(self, entry):
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def names(self):
        return [e.name for e in self.entries]


def resolve_exempt(model, exempt):
    """NodeIds whose names match any of the glob patterns in ``exempt``."""
    patterns = [exempt] if isinstance(exempt, str) else list(exempt or ())
    out = set()
    for pat in patterns:
        hits = [v for v in model.live_ids() if fnmatch.fnmatchcase(model.name_of(v), pat)]
        if not hits:
            raise ModelStructureError(f"exemption {pat!r} matches no node")
        out.update(hits)
    return out


def marginalize(model, exempt=()):
    """Marginalise every unobserved node whose children are all conjugate to it.

    Works on a copy. Candidates are visited in descending order of the
    initial topological order; each one has its child edges reversed in
    ascending topological order, then becomes a leaf and is removed.
    Returns (reduced model, RecoveryStack).
    """
    reduced = model.copy()
    stack = RecoveryStack(reduced.graph)
    skip = resolve_exempt(reduced, exempt)
    for v in reversed(reduced.topo_order()):
        node = reduced.nodes[v]
        if node.is_observed or v in skip:
            continue
        analyzer = Analyzer(reduced.graph)
        kids = reduced.children(v)
        if not all(conjugate(reduced, v, c, analyzer) for c in kids):
            continue
        rank = {u: i for i, u in enumerate(reduced.topo_order())}
        for c in sorted(kids, key=rank.__getitem__):
            pattern = reverse(reduced, v, c, analyzer)
            reduced.history.append(ReversalEvent(node.name, reduced.name_of(c), pattern.name))
        if reduced.children(v):
            raise TransformError(f"{node.name} still has children after reversal")
        stack.push(RecoveryEntry(v, node.name, node.family, node.params))
        reduced.remove_node(v)
        logger.debug("marginalised %s", node.name)
    logger.info(
        "marginalised %d of %d latent nodes (%d reversals)",
        len(stack),
        len(model.latent_ids()),
        len(reduced.history) - len(model.history),
    )
    return reduced, stack


def recover(stack, assignment, rng):
    """Sample the marginalised nodes given the surviving ones, LIFO.

    ``assignment`` maps NodeId to value for every surviving node, observed
    ones included. Values may be arrays of draws; each marginalised node
    is then sampled once per draw. The stack is not consumed.
    """
    values = dict(assignment)
    shape = next((np.shape(x) for x in values.values() if np.ndim(x) > 0), None)
    for entry in reversed(stack.entries):
        params = stack.graph.evaluate_many(entry.params, values)
        values[entry.node_id] = dists.sample(entry.family, params, rng, size=shape)
    return values


# ---------------------------------------------------------
# non-centred reparameterisation
# ---------------------------------------------------------
def reparam_noncentered(model, v):
    """Copy of ``model`` with Normal latent v written as mu + sd * eps.

    The node becomes ``<name>_eps ~ Normal(0, 1)``; its children read the
    substituted expression and ``deterministic[name]`` records it.
    """
    out = model.copy()
    v = out.node_id(v)
    node = out.nodes[v]
    if node.is_observed:
        raise TransformError(f"{node.name} is observed")
    if node.family is not F.NORMAL:
        raise TransformError(f"{node.name} is {node.family}, only Normal latents can be reparameterised")
    g = out.graph
    mu, var = node.params
    eps = g.input(v)
    x_expr = g.add(mu, g.mul(g.sqrt(var), eps))
    mapping = {v: x_expr}
    memo = {}
    for c in out.children(v):
        cn = out.nodes[c]
        params = [g.substitute(p, mapping, memo=memo) for p in cn.params]
        out.set_distribution(c, cn.family, params)
    for name, ref in out.deterministic.items():
        out.deterministic[name] = g.substitute(ref, mapping, memo=memo)
    name = node.name
    out.rename(v, f"{name}_eps")
    out.set_distribution(v, F.NORMAL, (g.constant(0.0), g.constant(1.0)))
    out.deterministic[name] = x_expr
    return out


def reparam_hierarchical(model):
    """Non-centre every unobserved Normal node that has an unobserved parent."""
    targets = [
        v
        for v in model.latent_ids()
        if model.nodes[v].family is F.NORMAL
        and any(not model.nodes[p].is_observed for p in model.nodes[v].parents)
    ]
    if not targets:
        raise TransformError("no hierarchical Normal latents to reparameterise")
    out = model
    for v in targets:
        out = reparam_noncentered(out, v)
    logger.info("reparameterised %d nodes", len(targets))
    return out
