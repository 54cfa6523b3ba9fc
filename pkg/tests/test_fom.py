"""Full-order reference solver."""

import numpy as np
import pytest

from supgdlr import (
    ConfigError, FomState, SchemeConfig, build_structured_mesh,
    constant_adr, delta_experiment, fom_run, fom_step, make_monte_carlo,
    prepare_workspace, rotating_body,
)


def make_ws(mesh, space, model, dt=1e-3, scheme="semi_implicit"):
    cfg = SchemeConfig(dt=dt, scheme=scheme, stabilization="supg",
                       delta=delta_experiment(mesh))
    return prepare_workspace(model, mesh, space, cfg)


def test_identical_samples_stay_identical():
    mesh = build_structured_mesh(4)
    # two samples with the same parameter vector
    from supgdlr import SampleSpace
    space = SampleSpace([[0.3, 0.1, -0.2]] * 2, [0.5, 0.5])
    ws = make_ws(mesh, space, rotating_body())
    rng = np.random.default_rng(0)
    col = rng.standard_normal(mesh.n_vertices)
    col[mesh.boundary_index()] = 0.0
    state = FomState(np.column_stack([col, col]))
    for _ in range(5):
        state = fom_step(state, ws)
    assert np.array_equal(state.fields[:, 0], state.fields[:, 1])


def test_zero_field_stays_zero_without_forcing():
    mesh = build_structured_mesh(4)
    space = make_monte_carlo([(-1.0, 1.0)] * 3, 6, seed=1)
    ws = make_ws(mesh, space, rotating_body())
    state = FomState(np.zeros((mesh.n_vertices, space.count)))
    final, norms = fom_run(state, ws, 5e-3)
    assert np.max(np.abs(final.fields)) == 0.0
    assert norms == [0.0] * 6


def test_heat_equation_decays_monotonically():
    mesh = build_structured_mesh(8)
    space = make_monte_carlo([(-1.0, 1.0)], 3, seed=2)
    model = constant_adr(eps_value=0.5, b=(0.0, 0.0))
    ws = make_ws(mesh, space, model, dt=0.01)
    rng = np.random.default_rng(3)
    fields = rng.standard_normal((mesh.n_vertices, space.count))
    fields[mesh.boundary_index()] = 0.0
    final, norms = fom_run(FomState(fields), ws, 0.1)
    diffs = np.diff(norms)
    assert np.all(diffs <= 1e-14)
    assert norms[-1] < 0.5 * norms[0]


def test_column_count_validation():
    mesh = build_structured_mesh(3)
    space = make_monte_carlo([(-1.0, 1.0)], 4, seed=0)
    ws = make_ws(mesh, space, constant_adr(eps_value=0.1))
    with pytest.raises(ConfigError):
        fom_step(FomState(np.zeros((mesh.n_vertices, 3))), ws)
    with pytest.raises(ConfigError):
        FomState(np.zeros(mesh.n_vertices))
