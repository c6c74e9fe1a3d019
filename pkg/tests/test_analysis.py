import numpy as np
import pytest

from analysis import NOT_AFFINE, AffineTriple, AnalysisCache, Analyzer
from compgraph import Const, ExprGraph, ExprRef, Input, PrimitiveOp, apply_numeric
from errors import ExprDomainError, NonAffineError

X, Y, Z = 0, 1, 2


@pytest.fixture
def g():
    return ExprGraph()


def random_expr(g, rng, depth):
    """Random expression over inputs X, Y, Z and small constants."""
    if depth == 0 or rng.uniform() < 0.2:
        if rng.uniform() < 0.3:
            return g.constant(float(rng.choice([0.0, 1.0, 2.0, -0.5])))
        return g.input(int(rng.integers(3)))
    kind = rng.choice(
        [PrimitiveOp.ADD, PrimitiveOp.SUB, PrimitiveOp.MUL, PrimitiveOp.DIV, PrimitiveOp.EXP, PrimitiveOp.SQUARE]
    )
    a = random_expr(g, rng, depth - 1)
    if kind.arity == 1:
        return g.apply(kind, (a,))
    b = random_expr(g, rng, depth - 1)
    if kind is PrimitiveOp.DIV and g.is_zero(b):
        b = g.constant(3.0)
    return g.apply(kind, (a, b))


class TestDependent:
    def test_basic(self, g):
        x, y = g.input(X), g.input(Y)
        expr = g.mul(g.exp(x), y)
        an = Analyzer(g)
        assert an.dependent(expr, X)
        assert an.dependent(expr, Y)
        assert not an.dependent(expr, Z)
        assert not an.dependent(g.constant(2.0), X)

    def test_memoised(self, g):
        x = g.input(X)
        expr = x
        for k in range(50):
            expr = g.add(expr, g.constant(float(k + 1)))
        an = Analyzer(g)
        an.affine(expr, X)
        first = an.visits
        assert first <= len(g.reachable(expr))
        an.affine(expr, X)
        an.dependent(expr, X)
        an.dependent(expr, X)
        assert an.visits == first + len(g.reachable(expr))

    def test_shared_cache(self, g):
        x = g.input(X)
        expr = g.mul(g.constant(2.0), x)
        cache = AnalysisCache()
        Analyzer(g, cache).affine(expr, X)
        second = Analyzer(g, cache)
        second.affine(expr, X)
        assert second.visits == 0
        cache.clear()
        second.affine(expr, X)
        assert second.visits > 0


class TestAffine:
    @pytest.mark.parametrize(
        "build, triple",
        [
            (lambda g, x, y: g.add(g.mul(g.constant(2.0), x), g.constant(3.0)), AffineTriple(True, True, True)),
            (lambda g, x, y: g.mul(g.constant(2.0), x), AffineTriple(True, True, False)),
            (lambda g, x, y: g.div(x, y), AffineTriple(True, True, False)),
            (lambda g, x, y: g.mul(g.exp(y), x), AffineTriple(True, True, False)),
            (lambda g, x, y: g.add(x, g.square(y)), AffineTriple(True, True, True)),
            (lambda g, x, y: g.exp(y), AffineTriple(True, False, True)),
            (lambda g, x, y: g.mul(x, x), NOT_AFFINE),
            (lambda g, x, y: g.div(y, x), NOT_AFFINE),
            (lambda g, x, y: g.exp(x), NOT_AFFINE),
            (lambda g, x, y: g.square(g.add(x, y)), NOT_AFFINE),
        ],
    )
    def test_cases(self, g, build, triple):
        expr = build(g, g.input(X), g.input(Y))
        an = Analyzer(g)
        assert an.affine_all(expr, X) == triple
        assert an.affine(expr, X) == triple.is_affine
        assert an.linear(expr, X) == (triple.is_affine and not triple.intercept_nonzero)

    def test_linear_requires_zero_intercept(self, g):
        x, y = g.input(X), g.input(Y)
        an = Analyzer(g)
        assert an.linear(g.mul(y, x), X)
        assert not an.linear(g.add(g.mul(y, x), y), X)
        assert not an.linear(g.exp(x), X)


class TestAffineCoeff:
    def test_coefficients(self, g):
        x, y = g.input(X), g.input(Y)
        expr = g.div(g.add(g.mul(g.constant(3.0), x), y), g.constant(2.0))
        p, q = Analyzer(g).affine_coeff(expr, X)
        assert g.const_value(p) == 1.5
        assert g.evaluate(q, {Y: 4.0}) == 2.0
        assert X not in g.inputs_of([p, q])

    def test_intercept_plus_scaled_effect(self, g):
        a, b, t = g.input(X), g.input(Y), g.input(Z)
        p, q = Analyzer(g).affine_coeff(g.add(a, g.mul(b, t)), Y)
        bindings = {X: 0.7, Z: -2.5}
        assert g.evaluate(p, bindings) == -2.5
        assert g.evaluate(q, bindings) == 0.7

    def test_zero_intercept_is_interned_zero(self, g):
        x = g.input(X)
        p, q = Analyzer(g).affine_coeff(g.mul(g.constant(2.0), x), X)
        assert g.is_zero(q)
        assert g.const_value(p) == 2.0

    def test_independent_expression(self, g):
        y = g.input(Y)
        expr = g.exp(y)
        p, q = Analyzer(g).affine_coeff(expr, X)
        assert g.is_zero(p)
        assert q == expr

    @pytest.mark.parametrize("build", [lambda g, x: g.mul(x, x), lambda g, x: g.log(x), lambda g, x: g.div(g.constant(1.0), x)])
    def test_non_affine_raises(self, g, build):
        with pytest.raises(NonAffineError):
            Analyzer(g).affine_coeff(build(g, g.input(X)), X)


class TestRandomExpressions:
    """affine() is sound: whenever it says yes, p x + q reproduces the expression."""

    def test_soundness_against_evaluation(self, g):
        rng = np.random.default_rng(7)
        checked = 0
        for _ in range(400):
            try:
                expr = random_expr(g, rng, depth=4)
            except ExprDomainError:
                # constant folding overflowed
                continue
            an = Analyzer(g)
            if not an.affine(expr, X):
                continue
            p, q = an.affine_coeff(expr, X)
            assert X not in g.inputs_of([p, q])
            triple = an.affine_all(expr, X)
            every = [ExprRef(i) for i in g.reachable([expr, p, q])]
            for _ in range(5):
                point = {k: float(v) for k, v in enumerate(rng.uniform(0.5, 2.0, size=3))}
                try:
                    values = g.evaluate_many(every, point)
                except ExprDomainError:
                    continue
                if not np.all(np.isfinite(values)):
                    continue
                direct, pv, qv = g.evaluate_many([expr, p, q], point)
                scale = 1.0 + max(abs(v) for v in values)
                assert abs(pv * point[X] + qv - direct) <= 1e-9 * scale
                # a zero flag means the coefficient really is zero
                if not triple.slope_nonzero:
                    assert pv == pytest.approx(0.0, abs=1e-12)
                if not triple.intercept_nonzero:
                    assert qv == pytest.approx(0.0, abs=1e-12)
                checked += 1
        assert checked > 100

    def test_linear_combinations_are_recognised(self, g):
        rng = np.random.default_rng(8)
        x = g.input(X)
        for _ in range(50):
            expr = x
            for _ in range(int(rng.integers(1, 6))):
                other = g.exp(g.input(int(rng.integers(1, 3))))
                step = int(rng.integers(3))
                if step == 0:
                    expr = g.add(expr, other)
                elif step == 1:
                    expr = g.mul(other, expr)
                else:
                    expr = g.div(g.sub(expr, other), g.add(other, g.constant(1.0)))
            assert Analyzer(g).affine(expr, X)


def naive_triple(g, idx, var):
    """Uncached recursive restatement of the affinity rules."""
    node = g.nodes[idx]
    if isinstance(node, Input):
        return AffineTriple(True, node.var_id == var, node.var_id != var)
    if isinstance(node, Const):
        return AffineTriple(True, False, node.value != 0.0)
    args = [naive_triple(g, o.index, var) for o in node.operands]
    if not all(a.is_affine for a in args):
        return NOT_AFFINE
    slope = [a.slope_nonzero for a in args]
    icpt = [a.intercept_nonzero for a in args]
    if node.kind in (PrimitiveOp.ADD, PrimitiveOp.SUB):
        return AffineTriple(True, any(slope), any(icpt))
    if node.kind is PrimitiveOp.MUL:
        if all(slope):
            return NOT_AFFINE
        return AffineTriple(True, (slope[0] and icpt[1]) or (slope[1] and icpt[0]), all(icpt))
    if node.kind is PrimitiveOp.DIV:
        if slope[1]:
            return NOT_AFFINE
        return AffineTriple(True, slope[0], icpt[0])
    if any(slope):
        return NOT_AFFINE
    return AffineTriple(True, False, True)


def naive_coeff(g, idx, var, point):
    """Numeric (p, q) of an affine node at ``point``, by plain recursion."""
    node = g.nodes[idx]
    if isinstance(node, Input):
        return (1.0, 0.0) if node.var_id == var else (0.0, point[node.var_id])
    if isinstance(node, Const):
        return 0.0, node.value
    (p1, q1), *rest = [naive_coeff(g, o.index, var, point) for o in node.operands]
    if node.kind is PrimitiveOp.ADD:
        p2, q2 = rest[0]
        return p1 + p2, q1 + q2
    if node.kind is PrimitiveOp.SUB:
        p2, q2 = rest[0]
        return p1 - p2, q1 - q2
    if node.kind is PrimitiveOp.MUL:
        p2, q2 = rest[0]
        return (p1 * q2 if p1 else p2 * q1), q1 * q2
    if node.kind is PrimitiveOp.DIV:
        q2 = rest[0][1]
        return p1 / q2, q1 / q2
    args = [q1] + [q for _, q in rest]
    return 0.0, apply_numeric(node.kind, args, node.exponent)


def random_graph(rng, limit=160):
    """A shared graph of shallow random expressions, at most about 200 nodes."""
    g = ExprGraph()
    while len(g) < limit:
        try:
            random_expr(g, rng, depth=4)
        except ExprDomainError:
            continue
    return g


class TestAgainstUncachedRecursion:
    @pytest.mark.parametrize("seed", range(10))
    def test_every_node_and_variable(self, seed):
        rng = np.random.default_rng(seed)
        g = random_graph(rng)
        size = len(g)
        assert size <= 200
        an = Analyzer(g)
        checked = 0
        for var in (X, Y, Z, 7):
            for idx in range(size):
                expected = naive_triple(g, idx, var)
                assert an.affine_all(ExprRef(idx), var) == expected
                assert an.dependent(ExprRef(idx), var) == (var in g.inputs_of(ExprRef(idx)))
                if not expected.is_affine:
                    with pytest.raises(NonAffineError):
                        an.affine_coeff(ExprRef(idx), var)
                    continue
                p, q = an.affine_coeff(ExprRef(idx), var)
                assert var not in g.inputs_of([p, q])
                point = {k: float(v) for k, v in enumerate(rng.uniform(0.5, 2.0, size=3))}
                try:
                    with np.errstate(all="ignore"):
                        want = naive_coeff(g, idx, var, point)
                    got = g.evaluate_many([p, q], point)
                except (ExprDomainError, ZeroDivisionError, OverflowError):
                    continue
                if not np.all(np.isfinite([*want, *got])):
                    continue
                scale = 1.0 + max(abs(v) for v in (*want, *got))
                assert abs(got[0] - want[0]) <= 1e-9 * scale
                assert abs(got[1] - want[1]) <= 1e-9 * scale
                checked += 1
        assert checked > 100
