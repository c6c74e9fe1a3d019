# model.py
# ---------------------------------------------------------
# Directed graphical model over scalar nodes.
#
# Node i is referenced inside parameter expressions as
# Input(i) of the shared ExprGraph, so the parents of a node
# are exactly the inputs reachable from its parameters.
# Removed nodes are tombstoned; NodeIds never shift.
# ---------------------------------------------------------

import heapq
import logging
from dataclasses import dataclass, replace

import numpy as np

import dists
from compgraph import ExprGraph, ExprRef
from errors import CycleError, MissingBindingError, ModelStructureError, SupportError

logger = logging.getLogger(__name__)


@dataclass
class Node:
    name: str
    family: dists.DistFamily
    params: tuple
    parents: frozenset
    observed: float = None
    removed: bool = False

    @property
    def is_observed(self):
        return self.observed is not None


class GraphicalModel:
    def __init__(self, graph=None):
        self.graph = graph if graph is not None else ExprGraph()
        self.nodes = []
        self._by_name = {}
        # (v, c, pattern) reversal events, appended by transform
        self.history = []
        # name -> ExprRef for quantities defined from node values (HMC-R)
        self.deterministic = {}

    def __len__(self):
        return sum(1 for n in self.nodes if not n.removed)

    def __contains__(self, name):
        return name in self._by_name

    # ---------------------------------------------------------
    # lookup
    # ---------------------------------------------------------
    def node_id(self, key):
        """NodeId for a name (ints pass through after a range check)."""
        if isinstance(key, (int, np.integer)):
            if not 0 <= key < len(self.nodes):
                raise ModelStructureError(f"no node with id {key}")
            return int(key)
        if key not in self._by_name:
            raise ModelStructureError(f"no node named {key!r}")
        return self._by_name[key]

    def name_of(self, v):
        return self.nodes[v].name

    def names(self):
        return {i: n.name for i, n in enumerate(self.nodes)}

    def var(self, key):
        """ExprRef reading the value of node ``key``."""
        return self.graph.input(self.node_id(key))

    def live_ids(self):
        return [i for i, n in enumerate(self.nodes) if not n.removed]

    def latent_ids(self):
        """Unobserved live nodes in topological order."""
        return [v for v in self.topo_order() if not self.nodes[v].is_observed]

    def observed_ids(self):
        return [v for v in self.live_ids() if self.nodes[v].is_observed]

    # ---------------------------------------------------------
    # building
    # ---------------------------------------------------------
    def _as_ref(self, value):
        if isinstance(value, ExprRef):
            return value
        return self.graph.constant(value)

    def _parents_of(self, params, owner=None):
        parents = self.graph.inputs_of(params)
        for p in parents:
            if p >= len(self.nodes) or self.nodes[p].removed or p == owner:
                raise ModelStructureError(f"parameter expression references unknown node {p}")
        return frozenset(parents)

    def add_node(self, name, family, params):
        """Append ``name ~ family(params)``; numbers in ``params`` become constants."""
        if name in self._by_name:
            raise ModelStructureError(f"duplicate node name {name!r}")
        params = tuple(self._as_ref(p) for p in params)
        if len(params) != family.arity:
            raise ModelStructureError(
                f"{family} takes {family.arity} parameters ({', '.join(family.param_names)}), got {len(params)}"
            )
        parents = self._parents_of(params)
        self.nodes.append(Node(name, family, params, parents))
        v = len(self.nodes) - 1
        self._by_name[name] = v
        return v

    def observe(self, key, value):
        v = self.node_id(key)
        node = self.nodes[v]
        value = float(value)
        # slots that read other nodes stay unknown
        numeric = [
            None if self.graph.inputs_of([p]) else self.graph.evaluate(p, {})
            for p in node.params
        ]
        if not dists.in_support(node.family, value, numeric):
            raise SupportError(f"{value} is outside the support of {node.name} ~ {node.family}")
        node.observed = value
        return v

    def set_distribution(self, key, family, params):
        """Replace the family and parameters of a node; parents are recomputed."""
        v = self.node_id(key)
        params = tuple(self._as_ref(p) for p in params)
        if len(params) != family.arity:
            raise ModelStructureError(f"{family} takes {family.arity} parameters")
        node = self.nodes[v]
        node.family = family
        node.params = params
        node.parents = self._parents_of(params, owner=v)

    def rename(self, key, new_name):
        v = self.node_id(key)
        if new_name in self._by_name:
            raise ModelStructureError(f"duplicate node name {new_name!r}")
        del self._by_name[self.nodes[v].name]
        self.nodes[v].name = new_name
        self._by_name[new_name] = v

    def remove_node(self, key):
        v = self.node_id(key)
        if self.children(v):
            raise ModelStructureError(f"cannot remove {self.nodes[v].name}: it still has children")
        self.nodes[v].removed = True
        del self._by_name[self.nodes[v].name]

    # ---------------------------------------------------------
    # structure
    # ---------------------------------------------------------
    def children(self, key):
        v = self.node_id(key)
        return [i for i, n in enumerate(self.nodes) if not n.removed and v in n.parents]

    def topo_order(self):
        """Kahn's algorithm; ties broken by ascending NodeId."""
        live = self.live_ids()
        indegree = {v: len(self.nodes[v].parents) for v in live}
        kids = {v: [] for v in live}
        for v in live:
            for p in self.nodes[v].parents:
                if p not in kids:
                    raise ModelStructureError(f"{self.nodes[v].name} has a removed parent {p}")
                kids[p].append(v)
        ready = [v for v in live if indegree[v] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            v = heapq.heappop(ready)
            order.append(v)
            for c in kids[v]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != len(live):
            stuck = sorted(self.nodes[v].name for v in live if indegree[v] > 0)
            raise CycleError(f"cycle among nodes {stuck}")
        return order

    def validate(self):
        """Check acyclicity and that every parent set equals its parameter inputs."""
        order = self.topo_order()
        for v in order:
            node = self.nodes[v]
            inputs = self.graph.inputs_of(node.params)
            if inputs != node.parents:
                raise ModelStructureError(
                    f"parents of {node.name} {sorted(node.parents)} differ from its inputs {sorted(inputs)}"
                )
        return order

    # ---------------------------------------------------------
    # densities and sampling
    # ---------------------------------------------------------
    def complete(self, assignment):
        """Copy of ``assignment`` with the observed values filled in."""
        out = dict(assignment)
        for v in self.observed_ids():
            out[v] = self.nodes[v].observed
        return out

    def log_joint(self, assignment):
        """Sum of per-node log-densities; observed nodes use their stored value."""
        values = self.complete(assignment)
        live = self.live_ids()
        missing = [self.nodes[v].name for v in live if v not in values]
        if missing:
            raise MissingBindingError(missing[0])
        roots = [p for v in live for p in self.nodes[v].params]
        flat = iter(self.graph.evaluate_many(roots, values))
        total = 0.0
        for v in live:
            node = self.nodes[v]
            params = [next(flat) for _ in node.params]
            total += dists.log_density(node.family, params, values[v])
        return total

    def forward_sample(self, rng, clamp_observed=True, size=None):
        """Ancestral sample of every live node.

        With ``clamp_observed`` the observed nodes keep their values,
        otherwise they are drawn too (prior predictive). ``size`` draws
        that many joint samples at once as arrays.
        """
        values = {}
        for v in self.topo_order():
            node = self.nodes[v]
            if clamp_observed and node.is_observed:
                values[v] = node.observed if size is None else np.full(size, node.observed)
                continue
            params = self.graph.evaluate_many(node.params, values)
            values[v] = dists.sample(node.family, params, rng, size=size)
        return values

    def evaluate_deterministic(self, assignment):
        """Values of the recorded deterministic quantities, keyed by name."""
        names = list(self.deterministic)
        if not names:
            return {}
        vals = self.graph.evaluate_many([self.deterministic[n] for n in names], self.complete(assignment))
        return dict(zip(names, vals))

    # ---------------------------------------------------------
    # misc
    # ---------------------------------------------------------
    def copy(self):
        out = GraphicalModel(self.graph.copy())
        out.nodes = [replace(n) for n in self.nodes]
        out._by_name = dict(self._by_name)
        out.history = list(self.history)
        out.deterministic = dict(self.deterministic)
        return out

    def freeze(self):
        self.graph.freeze()
        return self

    def by_name(self, assignment):
        return {self.nodes[v].name: value for v, value in assignment.items()}

    def from_names(self, values):
        return {self.node_id(name): value for name, value in values.items()}

    def dump(self):
        """``name ~ Family(params) [observed=v]  parents: ...`` per live node."""
        names = self.names()
        lines = []
        for v in self.topo_order():
            node = self.nodes[v]
            params = ", ".join(self.graph.format(p, names) for p in node.params)
            line = f"{node.name} ~ {node.family}({params})"
            if node.is_observed:
                line += f" [observed={node.observed:g}]"
            parents = ", ".join(names[p] for p in sorted(node.parents)) or "-"
            lines.append(f"{line}  parents: {parents}")
        return "\n".join(lines)
