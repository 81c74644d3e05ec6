import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from fluctlab.polynomial import LocalFunction

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@st.composite
def polynomials(draw, sites=4, max_exp=3, max_terms=4, min_terms=1):
    """Random LocalFunction on sites 0..sites-1 with small integer-ish coefficients."""
    n = draw(st.integers(min_terms, max_terms))
    f = LocalFunction()
    for _ in range(n):
        exps = draw(st.lists(st.integers(0, max_exp), min_size=sites, max_size=sites))
        if not any(exps):
            exps[draw(st.integers(0, sites - 1))] = 1
        c = draw(st.floats(-2, 2, allow_nan=False).filter(lambda v: abs(v) > 0.05))
        f = f + LocalFunction.monomial({s: e for s, e in enumerate(exps) if e}, c)
    return f


def to_sympy(f, syms):
    """LocalFunction -> sympy expression with site s mapped to syms[s]."""
    import sympy as sp
    return sp.Add(*[c * sp.Mul(*[syms[s] ** e for s, e in m]) for m, c in f.terms.items()])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
