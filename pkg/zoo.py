# zoo.py
# ---------------------------------------------------------
# Hierarchical models used by the experiments, a registry
# tying each one to its dataset schema, and seeded synthetic
# datasets drawn from the models' own priors.
#
# Plates are unrolled: every element is its own scalar node,
# named <var>_<k> with 1-based k.
# ---------------------------------------------------------

import logging
from dataclasses import dataclass

import numpy as np

from dists import DistFamily as F
from errors import DatasetSchemaError, ModelStructureError
from model import GraphicalModel

logger = logging.getLogger(__name__)


def _observe_all(model, ids, values):
    if values is None:
        return
    for v, value in zip(ids, values):
        model.observe(v, value)


def _check_lengths(**columns):
    sizes = {k: len(v) for k, v in columns.items() if v is not None}
    if len(set(sizes.values())) > 1:
        raise ModelStructureError(f"column lengths differ: {sizes}")
    return next(iter(sizes.values()))


def _indices(values, name):
    idx = np.asarray(values)
    if not np.all(np.floor(idx) == idx) or np.any(idx < 1):
        raise ModelStructureError(f"{name} must hold 1-based integer indices")
    return idx.astype(int)


# ---------------------------------------------------------
# ✅ builders
# ---------------------------------------------------------
def eight_schools(sigma, y=None):
    """mu ~ N(0, 5^2), tau ~ HalfCauchy(5), x_i ~ N(mu, tau^2), y_i ~ N(x_i, sigma_i^2)."""
    n = _check_lengths(sigma=sigma, y=y)
    m = GraphicalModel()
    g = m.graph
    mu = m.add_node("mu", F.NORMAL, (0.0, 25.0))
    tau = m.add_node("tau", F.HALF_CAUCHY, (5.0,))
    tau2 = g.square(m.var(tau))
    xs = [m.add_node(f"x_{i + 1}", F.NORMAL, (m.var(mu), tau2)) for i in range(n)]
    ys = [
        m.add_node(f"y_{i + 1}", F.NORMAL, (m.var(x), float(s) ** 2))
        for i, (x, s) in enumerate(zip(xs, sigma))
    ]
    _observe_all(m, ys, y)
    return m


def repeated_binary_trials(K, y=None):
    """m ~ U(0, 1), kappa ~ Pareto(1, 1.5), theta_i ~ Beta(m kappa, (1 - m) kappa), y_i ~ Bin(K_i, theta_i)."""
    n = _check_lengths(K=K, y=y)
    if y is not None:
        bad = [i + 1 for i in range(n) if not 0 <= y[i] <= K[i]]
        if bad:
            raise ModelStructureError(f"y outside [0, K] for rows {bad}")
    mdl = GraphicalModel()
    g = mdl.graph
    m = mdl.add_node("m", F.UNIFORM, (0.0, 1.0))
    kappa = mdl.add_node("kappa", F.PARETO, (1.0, 1.5))
    a = g.mul(mdl.var(m), mdl.var(kappa))
    b = g.mul(g.sub(g.constant(1.0), mdl.var(m)), mdl.var(kappa))
    thetas = [mdl.add_node(f"theta_{i + 1}", F.BETA, (a, b)) for i in range(n)]
    ys = [
        mdl.add_node(f"y_{i + 1}", F.BINOMIAL, (float(k), mdl.var(t)))
        for i, (k, t) in enumerate(zip(K, thetas))
    ]
    _observe_all(mdl, ys, y)
    return mdl


def electric_company(grade, pair, treatment, y=None):
    """Grade-level effects with treatment/control pairs.

    mu_i ~ N(0, 1), a_j ~ N(100 mu_gp[j], 1), b_i ~ N(0, 100^2),
    log_sigma_i ~ N(0, 1), y_k ~ N(a_p[k] + t_k b_g[k], exp(log_sigma_g[k])^2).
    ``grade`` and ``pair`` are 1-based.
    """
    _check_lengths(grade=grade, pair=pair, treatment=treatment, y=y)
    gk = _indices(grade, "grade")
    pk = _indices(pair, "pair")
    G, P = int(gk.max()), int(pk.max())
    gp = {}
    for gi, pj in zip(gk, pk):
        if gp.setdefault(pj, gi) != gi:
            raise ModelStructureError(f"pair {pj} spans grades {gp[pj]} and {gi}")
    if set(gp) != set(range(1, P + 1)):
        raise ModelStructureError(f"pairs must be numbered 1..{P}")

    m = GraphicalModel()
    g = m.graph
    # grade effects first: the pair effects then precede them in the
    # marginalisation scan and are eliminated independently of each other
    b = [m.add_node(f"b_{i}", F.NORMAL, (0.0, 1e4)) for i in range(1, G + 1)]
    mus = [m.add_node(f"mu_{i}", F.NORMAL, (0.0, 1.0)) for i in range(1, G + 1)]
    a = [
        m.add_node(f"a_{j}", F.NORMAL, (g.mul(g.constant(100.0), m.var(mus[gp[j] - 1])), 1.0))
        for j in range(1, P + 1)
    ]
    log_sigma = [m.add_node(f"log_sigma_{i}", F.NORMAL, (0.0, 1.0)) for i in range(1, G + 1)]
    ys = []
    for k, (gi, pj, t) in enumerate(zip(gk, pk, treatment)):
        mean = g.add(m.var(a[pj - 1]), g.mul(g.constant(float(t)), m.var(b[gi - 1])))
        var = g.square(g.exp(m.var(log_sigma[gi - 1])))
        ys.append(m.add_node(f"y_{k + 1}", F.NORMAL, (mean, var)))
    _observe_all(m, ys, y)
    return m


def electric_company_small(t, y=None):
    """Single pair: log_sigma, mu_a ~ N(0, 1), a ~ N(100 mu_a, 1), b_i ~ N(0, 100^2), y_i ~ N(a + b_i t_i, sigma^2)."""
    n = _check_lengths(t=t, y=y)
    m = GraphicalModel()
    g = m.graph
    b = [m.add_node(f"b_{i + 1}", F.NORMAL, (0.0, 1e4)) for i in range(n)]
    log_sigma = m.add_node("log_sigma", F.NORMAL, (0.0, 1.0))
    mu_a = m.add_node("mu_a", F.NORMAL, (0.0, 1.0))
    a = m.add_node("a", F.NORMAL, (g.mul(g.constant(100.0), m.var(mu_a)), 1.0))
    var = g.square(g.exp(m.var(log_sigma)))
    ys = [
        m.add_node(f"y_{i + 1}", F.NORMAL, (g.add(m.var(a), g.mul(g.constant(float(ti)), m.var(bi))), var))
        for i, (ti, bi) in enumerate(zip(t, b))
    ]
    _observe_all(m, ys, y)
    return m


def pulmonary_fibrosis(patient, t, y=None):
    """Per-patient linear FVC trends.

    mu_alpha ~ N(0, 500^2), sigma_alpha ~ HalfCauchy(100), mu_beta ~ N(0, 3^2),
    sigma_beta ~ HalfCauchy(3), alpha_j ~ N(mu_alpha, sigma_alpha^2),
    beta_j ~ N(mu_beta, sigma_beta^2), sigma ~ HalfCauchy(100),
    y_i ~ N(alpha_ID + t_i beta_ID, sigma^2). Patient ids are dense 1..J.
    """
    _check_lengths(patient=patient, t=t, y=y)
    ids = _indices(patient, "patient")
    J = int(ids.max())
    if set(ids.tolist()) != set(range(1, J + 1)):
        raise ModelStructureError(f"patient ids must cover 1..{J}")

    m = GraphicalModel()
    g = m.graph
    mu_alpha = m.add_node("mu_alpha", F.NORMAL, (0.0, 500.0**2))
    sigma_alpha = m.add_node("sigma_alpha", F.HALF_CAUCHY, (100.0,))
    mu_beta = m.add_node("mu_beta", F.NORMAL, (0.0, 9.0))
    sigma_beta = m.add_node("sigma_beta", F.HALF_CAUCHY, (3.0,))
    va = g.square(m.var(sigma_alpha))
    vb = g.square(m.var(sigma_beta))
    alpha = [m.add_node(f"alpha_{j}", F.NORMAL, (m.var(mu_alpha), va)) for j in range(1, J + 1)]
    beta = [m.add_node(f"beta_{j}", F.NORMAL, (m.var(mu_beta), vb)) for j in range(1, J + 1)]
    sigma = m.add_node("sigma", F.HALF_CAUCHY, (100.0,))
    noise = g.square(m.var(sigma))
    ys = []
    for i, (j, ti) in enumerate(zip(ids, t)):
        mean = g.add(m.var(alpha[j - 1]), g.mul(g.constant(float(ti)), m.var(beta[j - 1])))
        ys.append(m.add_node(f"y_{i + 1}", F.NORMAL, (mean, noise)))
    _observe_all(m, ys, y)
    return m


def funnel(y=None, n=8):
    """log_scale ~ N(0, 1.5^2), x_i ~ N(0, exp(log_scale)), y_i ~ N(x_i, 1)."""
    n = len(y) if y is not None else n
    m = GraphicalModel()
    g = m.graph
    ls = m.add_node("log_scale", F.NORMAL, (0.0, 2.25))
    scale = g.exp(m.var(ls))
    xs = [m.add_node(f"x_{i + 1}", F.NORMAL, (0.0, scale)) for i in range(n)]
    ys = [m.add_node(f"y_{i + 1}", F.NORMAL, (m.var(x), 1.0)) for i, x in enumerate(xs)]
    _observe_all(m, ys, y)
    return m


def cauchy_location(y=None, n=10):
    """loc ~ Cauchy(0, 1), scale ~ HalfCauchy(1), y_i ~ N(loc, scale^2); nothing is conjugate."""
    n = len(y) if y is not None else n
    m = GraphicalModel()
    g = m.graph
    loc = m.add_node("loc", F.CAUCHY, (0.0, 1.0))
    scale = m.add_node("scale", F.HALF_CAUCHY, (1.0,))
    var = g.square(m.var(scale))
    ys = [m.add_node(f"y_{i + 1}", F.NORMAL, (m.var(loc), var)) for i in range(n)]
    _observe_all(m, ys, y)
    return m


# ---------------------------------------------------------
# ✅ registry
# ---------------------------------------------------------
@dataclass(frozen=True)
class ZooEntry:
    name: str
    builder: object
    # column -> "real" | "int"; order matches the builder's arguments
    schema: dict
    dataset: str
    default_exempt: tuple = ()
    # latent dimension after marginalisation with default_exempt
    reduced_dim: int = None
    # exact row count for fixed-size datasets
    rows: int = None

    def build(self, columns):
        missing = [c for c in self.schema if c not in columns]
        if missing:
            raise DatasetSchemaError(f"{self.name} needs column {missing[0]!r}", missing[0])
        first = next(iter(self.schema))
        if self.rows is not None and len(columns[first]) != self.rows:
            raise DatasetSchemaError(
                f"{self.name} needs exactly {self.rows} rows, got {len(columns[first])}", first
            )
        args = [np.asarray(columns[c], dtype=float) for c in self.schema]
        return self.builder(*args)


REGISTRY = {
    e.name: e
    for e in (
        ZooEntry("eight_schools", eight_schools, {"sigma": "real", "y": "real"}, "eight_schools.csv", ("mu",), 2, rows=8),
        ZooEntry("repeated_binary_trials", repeated_binary_trials, {"K": "int", "y": "int"}, "baseball1970.csv", (), 2),
        ZooEntry(
            "electric_company",
            electric_company,
            {"grade": "int", "pair": "int", "treatment": "real", "y": "real"},
            "electric_company.csv",
            ("mu_*",),
            8,
        ),
        ZooEntry("electric_company_small", electric_company_small, {"t": "real", "y": "real"}, "electric_company_small.csv", (), 1, rows=2),
        ZooEntry(
            "pulmonary_fibrosis",
            pulmonary_fibrosis,
            {"patient": "int", "t": "real", "y": "real"},
            "pulmonary_fibrosis.csv",
            ("mu_alpha", "mu_beta"),
            5,
        ),
        ZooEntry("funnel", funnel, {"y": "real"}, "funnel.csv", (), 1),
        ZooEntry("cauchy_location", cauchy_location, {"y": "real"}, "cauchy_location.csv", (), 2),
    )
}


def get(name):
    if name not in REGISTRY:
        raise ModelStructureError(f"unknown model {name!r}; choose from {sorted(REGISTRY)}")
    return REGISTRY[name]


# ---------------------------------------------------------
# ✅ synthetic datasets
# ---------------------------------------------------------
def _prior_predictive(model, prefix, rng):
    values = model.forward_sample(rng, clamp_observed=False)
    by_name = model.by_name(values)
    n = sum(1 for name in by_name if name.startswith(prefix))
    return np.array([by_name[f"{prefix}{i + 1}"] for i in range(n)])


def _binary_trials(n, k_lo, k_hi):
    def make(rng):
        K = rng.integers(k_lo, k_hi + 1, size=n).astype(float)
        y = _prior_predictive(repeated_binary_trials(K), "y_", rng)
        return {"K": K.astype(int), "y": y.astype(int)}

    return make


def _electric(G=4, P=24):
    def make(rng):
        per_grade = P // G
        pair = np.repeat(np.arange(1, P + 1), 2)
        grade = (pair - 1) // per_grade + 1
        # control row first in each pair
        treatment = np.tile([0.0, 1.0], P)
        y = _prior_predictive(electric_company(grade, pair, treatment), "y_", rng)
        return {"grade": grade, "pair": pair, "treatment": treatment, "y": y}

    return make


def _electric_small(rng):
    t = np.array([1.0, 1.0])
    return {"t": t, "y": _prior_predictive(electric_company_small(t), "y_", rng)}


def _pulmonary(J=20, visits=3):
    def make(rng):
        patient = np.repeat(np.arange(1, J + 1), visits)
        # visit times in years: baseline, then every six months
        t = np.tile(np.arange(visits) * 0.5, J)
        y = _prior_predictive(pulmonary_fibrosis(patient, t), "y_", rng)
        return {"patient": patient, "t": t, "y": y}

    return make


def _single_column(builder, n):
    def make(rng):
        return {"y": _prior_predictive(builder(n=n), "y_", rng)}

    return make


SYNTHETIC = {
    "rat_tumors": ("repeated_binary_trials", _binary_trials(71, 14, 52)),
    "baseball1996": ("repeated_binary_trials", _binary_trials(308, 10, 650)),
    "electric_company": ("electric_company", _electric()),
    "electric_company_small": ("electric_company_small", _electric_small),
    "pulmonary_fibrosis": ("pulmonary_fibrosis", _pulmonary()),
    "funnel": ("funnel", _single_column(funnel, 8)),
    "cauchy_location": ("cauchy_location", _single_column(cauchy_location, 10)),
}


def synthetic_dataset(name, seed=0):
    """Columns of a desk-scale dataset drawn from its model's prior."""
    if name not in SYNTHETIC:
        raise ModelStructureError(f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC)}")
    _, make = SYNTHETIC[name]
    columns = make(np.random.default_rng(seed))
    logger.info("generated %s (%d rows, seed %d)", name, len(columns["y"]), seed)
    return columns
