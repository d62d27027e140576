"""Property-based checks over randomly drawn inputs."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from annalloc.baseline import solve_box_qp
from annalloc.effectiveness import DEFAULT_BOX, BoxSet, SyntheticModel, project_box
from annalloc.stability import ClassKSpec, Monomial, rho_bound

finite = st.floats(-1e3, 1e3, allow_nan=False)
MODEL = SyntheticModel()


@given(arrays(float, 5, elements=finite))
def test_projection_idempotent_and_admissible(u):
    once = project_box(u, DEFAULT_BOX)
    assert DEFAULT_BOX.contains(once).all()
    np.testing.assert_array_equal(project_box(once, DEFAULT_BOX), once)


@given(arrays(float, 5, elements=st.floats(0, 1)), st.floats(0, 8), st.floats(-12, 12))
def test_model_odd_in_controls(z, alpha, beta):
    # flipping every deflection flips every moment except the e|e| term, which is odd as well
    u = DEFAULT_BOX.lower + z * DEFAULT_BOX.width
    np.testing.assert_allclose(MODEL.evaluate(-u, [alpha, beta]), -MODEL.evaluate(u, [alpha, beta]),
                               rtol=0, atol=1e-17)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_qp_never_worse_than_any_vertex_or_center(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 5))
    b = rng.normal(scale=3.0, size=3)
    box = BoxSet(-rng.uniform(0.1, 2.0, 5), rng.uniform(0.1, 2.0, 5))
    sol = solve_box_qp(a, b, box=box)
    corners = box.lower + rng.integers(0, 2, size=(32, 5)) * box.width
    cands = np.vstack([corners, box.center, box.lower + rng.random((64, 5)) * box.width])
    best = np.min(np.sum((cands @ a.T - b) ** 2, axis=1))
    assert sol.objective <= best + 1e-12
    assert box.contains(sol.u).all()


@given(st.floats(0.1, 0.9), st.floats(0.1, 10.0), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_rho_monotone_and_inside_domain(theta, r, f1, f2):
    half_sq = Monomial(0.5, 2.0)
    spec = ClassKSpec(half_sq, half_sq, Monomial(1.0, 2.0), Monomial(1.0, 1.0), theta, r)
    d1, d2 = sorted((f1 * spec.delta_limit, f2 * spec.delta_limit))
    assert rho_bound(spec, d1) <= rho_bound(spec, d2)
    assert rho_bound(spec, d2) <= r * (1 + 1e-12)
