"""Distribution families: log-densities, samplers and unconstraining bijections.

Gamma-like families use the rate parameterisation and Normal uses the
variance, matching the reversal algebra in ``transform``. Every family also
has a symbolic log-density (``log_density_expr``) written in the ExprGraph
IR so the gradient tape in ``grad`` is one graph.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from errors import IneligibleModelError, InvalidParameterError

LOG_2PI = math.log(2.0 * math.pi)
LOG_PI = math.log(math.pi)
LOG_2 = math.log(2.0)


class DistFamily(Enum):
    NORMAL = ("Normal", ("mu", "var"), False)
    HALF_CAUCHY = ("HalfCauchy", ("scale",), False)
    CAUCHY = ("Cauchy", ("loc", "scale"), False)
    BETA = ("Beta", ("alpha", "beta"), False)
    BINOMIAL = ("Binomial", ("n", "p"), True)
    BERNOULLI = ("Bernoulli", ("p",), True)
    GAMMA = ("Gamma", ("alpha", "rate"), False)
    EXPONENTIAL = ("Exponential", ("rate",), False)
    UNIFORM = ("Uniform", ("lo", "hi"), False)
    PARETO = ("Pareto", ("scale", "shape"), False)
    BETA_BINOMIAL = ("BetaBinomial", ("n", "alpha", "beta"), True)
    COMPOUND_GAMMA = ("CompoundGamma", ("alpha_c", "alpha_v", "scale"), False)

    def __init__(self, label, param_names, discrete):
        self.label = label
        self.param_names = param_names
        self.discrete = discrete

    @property
    def arity(self):
        return len(self.param_names)

    def __str__(self):
        return self.label


F = DistFamily


# ---------------------------------------------------------
# parameter validation / support
# ---------------------------------------------------------
def _all(cond):
    return bool(np.all(cond))


def _is_count(x):
    x = np.asarray(x, dtype=float)
    return _all(np.isfinite(x)) and _all(x >= 0) and _all(np.floor(x) == x)


def check_params(family, params):
    """Raise InvalidParameterError unless ``params`` are valid for ``family``."""
    if len(params) != family.arity:
        raise InvalidParameterError(f"{family} takes {family.arity} parameters, got {len(params)}")
    p = [np.asarray(v, dtype=float) for v in params]
    if not all(_all(np.isfinite(v)) for v in p):
        raise InvalidParameterError(f"{family} parameters must be finite: {params}")
    ok = True
    if family is F.NORMAL:
        ok = _all(p[1] > 0)
    elif family in (F.HALF_CAUCHY, F.EXPONENTIAL):
        ok = _all(p[0] > 0)
    elif family is F.CAUCHY:
        ok = _all(p[1] > 0)
    elif family in (F.BETA, F.GAMMA):
        ok = _all(p[0] > 0) and _all(p[1] > 0)
    elif family is F.BINOMIAL:
        ok = _is_count(p[0]) and _all((p[1] >= 0) & (p[1] <= 1))
    elif family is F.BERNOULLI:
        ok = _all((p[0] >= 0) & (p[0] <= 1))
    elif family is F.UNIFORM:
        ok = _all(p[0] < p[1])
    elif family is F.PARETO:
        ok = _all(p[0] > 0) and _all(p[1] > 0)
    elif family is F.BETA_BINOMIAL:
        ok = _is_count(p[0]) and _all(p[1] > 0) and _all(p[2] > 0)
    elif family is F.COMPOUND_GAMMA:
        ok = _all(p[0] > 0) and _all(p[1] > 0) and _all(p[2] > 0)
    if not ok:
        raise InvalidParameterError(f"invalid parameters for {family}: {params}")


def _bound(params, k):
    """Parameter ``k`` when known; ``params`` may hold None for slots that depend on latents."""
    if params is None:
        return None
    return params[k]


def in_support(family, x, params=None):
    """Support test; a parameter-dependent bound is checked only when that parameter is known."""
    x = float(x)
    if not math.isfinite(x):
        return False
    if family.discrete and not x.is_integer():
        return False
    if family is F.BERNOULLI:
        return x in (0.0, 1.0)
    if family in (F.BINOMIAL, F.BETA_BINOMIAL):
        n = _bound(params, 0)
        return x >= 0 and (n is None or x <= n)
    if family in (F.HALF_CAUCHY, F.GAMMA, F.EXPONENTIAL, F.COMPOUND_GAMMA):
        return x >= 0
    if family is F.BETA:
        return 0.0 <= x <= 1.0
    if family is F.UNIFORM:
        lo, hi = _bound(params, 0), _bound(params, 1)
        return (lo is None or lo <= x) and (hi is None or x <= hi)
    if family is F.PARETO:
        lo = _bound(params, 0)
        return lo is None or x >= lo
    return True


# ---------------------------------------------------------
# numeric log-densities
# ---------------------------------------------------------
def _log_choose(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def log_density(family, params, x):
    """Natural-log density (or mass) of ``x``; -inf outside the support."""
    check_params(family, params)
    if not in_support(family, x, params):
        return -math.inf
    x = float(x)
    p = [float(v) for v in params]
    if family is F.NORMAL:
        mu, var = p
        return -0.5 * (LOG_2PI + math.log(var)) - (x - mu) ** 2 / (2.0 * var)
    if family is F.CAUCHY:
        loc, scale = p
        return -LOG_PI - math.log(scale) - math.log1p(((x - loc) / scale) ** 2)
    if family is F.HALF_CAUCHY:
        (scale,) = p
        return LOG_2 - LOG_PI - math.log(scale) - math.log1p((x / scale) ** 2)
    if family is F.BETA:
        a, b = p
        return float(special.xlogy(a - 1, x) + special.xlog1py(b - 1, -x) - special.betaln(a, b))
    if family is F.BINOMIAL:
        n, prob = p
        return float(_log_choose(n, x) + special.xlogy(x, prob) + special.xlog1py(n - x, -prob))
    if family is F.BERNOULLI:
        (prob,) = p
        return float(special.xlogy(x, prob) + special.xlog1py(1 - x, -prob))
    if family is F.GAMMA:
        a, rate = p
        return float(a * math.log(rate) - special.gammaln(a) + special.xlogy(a - 1, x) - rate * x)
    if family is F.EXPONENTIAL:
        (rate,) = p
        return math.log(rate) - rate * x
    if family is F.UNIFORM:
        lo, hi = p
        return -math.log(hi - lo)
    if family is F.PARETO:
        m, alpha = p
        return math.log(alpha) + alpha * math.log(m) - (alpha + 1) * math.log(x)
    if family is F.BETA_BINOMIAL:
        n, a, b = p
        return float(_log_choose(n, x) + special.betaln(x + a, n - x + b) - special.betaln(a, b))
    if family is F.COMPOUND_GAMMA:
        a, b, q = p
        return float(
            special.gammaln(a + b) - special.gammaln(a) - special.gammaln(b)
            + b * math.log(q) + special.xlogy(a - 1, x) - (a + b) * math.log(q + x)
        )
    raise InvalidParameterError(f"unknown family {family}")


# ---------------------------------------------------------
# samplers
# ---------------------------------------------------------
def sample(family, params, rng, size=None):
    """Draw from ``family``; array parameters broadcast like numpy's generators."""
    check_params(family, params)
    shape = size if size is not None else (np.broadcast(*params).shape or None)
    if family is F.NORMAL:
        mu, var = params
        out = rng.normal(mu, np.sqrt(var), shape)
    elif family is F.CAUCHY:
        loc, scale = params
        out = loc + scale * rng.standard_cauchy(shape)
    elif family is F.HALF_CAUCHY:
        out = np.abs(params[0] * rng.standard_cauchy(shape))
    elif family is F.BETA:
        out = rng.beta(params[0], params[1], shape)
    elif family is F.BINOMIAL:
        n, prob = params
        out = rng.binomial(np.asarray(n, dtype=np.int64), prob, shape)
    elif family is F.BERNOULLI:
        out = rng.uniform(size=shape) < params[0]
    elif family is F.GAMMA:
        a, rate = params
        out = rng.gamma(a, 1.0 / np.asarray(rate, dtype=float), shape)
    elif family is F.EXPONENTIAL:
        out = rng.exponential(1.0 / np.asarray(params[0], dtype=float), shape)
    elif family is F.UNIFORM:
        out = rng.uniform(params[0], params[1], shape)
    elif family is F.PARETO:
        m, alpha = params
        out = m * (1.0 + rng.pareto(alpha, shape))
    elif family is F.BETA_BINOMIAL:
        n, a, b = params
        theta = rng.beta(a, b, shape)
        out = rng.binomial(np.asarray(n, dtype=np.int64), theta)
    elif family is F.COMPOUND_GAMMA:
        a, b, q = params
        rate = rng.gamma(b, 1.0 / np.asarray(q, dtype=float), shape)
        out = rng.gamma(a, 1.0 / rate)
    else:
        raise InvalidParameterError(f"unknown family {family}")
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------
# unconstraining bijections
# ---------------------------------------------------------
@dataclass(frozen=True)
class Bijection:
    """Map from a family's support to the real line.

    ``kind`` is "identity", "log" (x = lo + exp(z)) or "logit"
    (x = lo + (hi - lo) * sigmoid(z)).
    """

    kind: str
    lo: float = 0.0
    hi: float = 1.0

    def forward(self, x):
        if self.kind == "identity":
            return x
        if self.kind == "log":
            return np.log(np.asarray(x) - self.lo)
        return special.logit((np.asarray(x) - self.lo) / (self.hi - self.lo))

    def inverse(self, z):
        if self.kind == "identity":
            return z
        if self.kind == "log":
            return self.lo + np.exp(z)
        return self.lo + (self.hi - self.lo) * special.expit(z)

    def log_abs_det_jacobian(self, z):
        """log |dx/dz| of the inverse at ``z``."""
        if self.kind == "identity":
            return np.zeros_like(np.asarray(z, dtype=float))
        if self.kind == "log":
            return np.asarray(z, dtype=float)
        return math.log(self.hi - self.lo) - np.logaddexp(0.0, -z) - np.logaddexp(0.0, z)

    def inverse_expr(self, g, z):
        """Symbolic (x, log|dx/dz|) for an unconstrained input ``z``."""
        if self.kind == "identity":
            return z, g.constant(0.0)
        if self.kind == "log":
            return g.add(g.constant(self.lo), g.exp(z)), z
        one = g.constant(1.0)
        sig = g.div(one, g.add(one, g.exp(g.neg(z))))
        x = g.add(g.constant(self.lo), g.mul(g.constant(self.hi - self.lo), sig))
        logjac = g.sub(
            g.sub(g.constant(math.log(self.hi - self.lo)), g.log(g.add(one, g.exp(g.neg(z))))),
            g.log(g.add(one, g.exp(z))),
        )
        return x, logjac


def unconstraining(family, params=None):
    """Bijection for a continuous family.

    Uniform bounds and the Pareto scale must be supplied as numbers in
    ``params``. Discrete families have none and raise IneligibleModelError.
    """
    if family.discrete:
        raise IneligibleModelError(f"{family} is discrete and has no unconstraining bijection")
    if family in (F.NORMAL, F.CAUCHY):
        return Bijection("identity")
    if family in (F.HALF_CAUCHY, F.GAMMA, F.EXPONENTIAL, F.COMPOUND_GAMMA):
        return Bijection("log")
    if family is F.BETA:
        return Bijection("logit", 0.0, 1.0)
    if family is F.UNIFORM:
        lo, hi = (float(v) for v in params)
        return Bijection("logit", lo, hi)
    if family is F.PARETO:
        return Bijection("log", float(params[0]))
    raise IneligibleModelError(f"no bijection for {family}")


# ---------------------------------------------------------
# symbolic log-densities
# ---------------------------------------------------------
def _lbeta(g, a, b):
    return g.sub(g.add(g.lgamma(a), g.lgamma(b)), g.lgamma(g.add(a, b)))


def _log_choose_expr(g, n, k):
    one = g.constant(1.0)
    return g.sub(
        g.sub(g.lgamma(g.add(n, one)), g.lgamma(g.add(k, one))),
        g.lgamma(g.add(g.sub(n, k), one)),
    )


def log_density_expr(g, family, params, x):
    """Log-density of ``family`` at ``x`` as an expression in ``g``.

    Support constraints are not encoded; callers only evaluate it at points
    inside the support (observed data, or latents mapped through a bijection).
    """
    c = g.constant
    one = c(1.0)
    if family is F.NORMAL:
        mu, var = params
        quad = g.div(g.square(g.sub(x, mu)), g.mul(c(2.0), var))
        return g.sub(g.sub(c(-0.5 * LOG_2PI), g.mul(c(0.5), g.log(var))), quad)
    if family is F.CAUCHY:
        loc, scale = params
        z2 = g.square(g.div(g.sub(x, loc), scale))
        return g.sub(g.sub(c(-LOG_PI), g.log(scale)), g.log(g.add(one, z2)))
    if family is F.HALF_CAUCHY:
        (scale,) = params
        z2 = g.square(g.div(x, scale))
        return g.sub(g.sub(c(LOG_2 - LOG_PI), g.log(scale)), g.log(g.add(one, z2)))
    if family is F.BETA:
        a, b = params
        body = g.add(g.mul(g.sub(a, one), g.log(x)), g.mul(g.sub(b, one), g.log(g.sub(one, x))))
        return g.sub(body, _lbeta(g, a, b))
    if family is F.BINOMIAL:
        n, prob = params
        body = g.add(g.mul(x, g.log(prob)), g.mul(g.sub(n, x), g.log(g.sub(one, prob))))
        return g.add(_log_choose_expr(g, n, x), body)
    if family is F.BERNOULLI:
        (prob,) = params
        return g.add(g.mul(x, g.log(prob)), g.mul(g.sub(one, x), g.log(g.sub(one, prob))))
    if family is F.GAMMA:
        a, rate = params
        head = g.sub(g.mul(a, g.log(rate)), g.lgamma(a))
        return g.sub(g.add(head, g.mul(g.sub(a, one), g.log(x))), g.mul(rate, x))
    if family is F.EXPONENTIAL:
        (rate,) = params
        return g.sub(g.log(rate), g.mul(rate, x))
    if family is F.UNIFORM:
        lo, hi = params
        return g.neg(g.log(g.sub(hi, lo)))
    if family is F.PARETO:
        m, alpha = params
        head = g.add(g.log(alpha), g.mul(alpha, g.log(m)))
        return g.sub(head, g.mul(g.add(alpha, one), g.log(x)))
    if family is F.BETA_BINOMIAL:
        n, a, b = params
        post = _lbeta(g, g.add(x, a), g.add(g.sub(n, x), b))
        return g.add(_log_choose_expr(g, n, x), g.sub(post, _lbeta(g, a, b)))
    if family is F.COMPOUND_GAMMA:
        a, b, q = params
        head = g.sub(g.sub(g.lgamma(g.add(a, b)), g.lgamma(a)), g.lgamma(b))
        body = g.add(g.mul(b, g.log(q)), g.mul(g.sub(a, one), g.log(x)))
        return g.sub(g.add(head, body), g.mul(g.add(a, b), g.log(g.add(q, x))))
    raise InvalidParameterError(f"unknown family {family}")
