import numpy as np
import pytest

from oracles import layered_state, picard_director, picard_layer, random_state
from smectic_flow.experiments import initial_state, preset_accuracy, preset_chevron, simulate
from smectic_flow.fields import (
    BC, NEUMANN, NO_SLIP, PhysParams, ScalarField, SchemeParams, State, VectorField2, make_grid,
)
from smectic_flow.energy import total_energy
from smectic_flow.ops import context
from smectic_flow.scheme import (
    _jacobian,
    advance,
    director_matrices,
    divergence,
    dissipation,
    momentum_forces,
    step1_layer,
    step2_director,
    step3_velocity,
    step4_project,
)

CHEVRON_PHYS = PhysParams(h=(1.0, 0.0))


# --- step 1 ----------------------------------------------------------------

def test_step1_stationary_layer():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    st = layered_state(grid)
    phi, phi_dot, u_star = step1_layer(st, CHEVRON_PHYS, SchemeParams())
    _, Y = grid.mesh()
    assert np.max(np.abs(phi.values - Y)) < 1e-12
    assert np.max(np.abs(phi_dot.values)) < 1e-9
    assert np.max(np.abs(u_star.values)) < 1e-12


def test_step1_flat_phi_keeps_velocity():
    grid = make_grid(8, 9, 4.0, 0.0, 2.0)
    rng = np.random.default_rng(3)
    u = rng.normal(size=(2,) + grid.shape)
    u[..., [0, -1]] = 0
    st = layered_state(grid, u=u, dirichlet=False, phi=np.full(grid.shape, 0.7))
    _, _, u_star = step1_layer(st, PhysParams(), SchemeParams())
    assert np.array_equal(u_star.values, u)


@pytest.mark.parametrize("seed", range(20))
def test_step1_matches_fixed_point_oracle(seed):
    st = random_state(seed, dirichlet=bool(seed % 2))
    phys = PhysParams() if seed % 2 == 0 else CHEVRON_PHYS
    scheme = SchemeParams()
    phi, phi_dot, u_star = step1_layer(st, phys, scheme)
    phi_o, phi_dot_o, u_star_o, _ = picard_layer(st, phys, scheme)
    assert np.max(np.abs(phi.values - phi_o)) < 1e-9
    assert np.max(np.abs(phi_dot.values - phi_dot_o)) < 1e-9 * max(1, np.max(np.abs(phi_dot_o)))
    assert np.max(np.abs(u_star.values - u_star_o)) < 1e-9


def test_step1_accuracy_data_matches_oracle():
    cfg = preset_accuracy()
    st = initial_state(cfg)
    phi, phi_dot, u_star = step1_layer(st, cfg.phys, cfg.scheme)
    phi_o, phi_dot_o, u_star_o, _ = picard_layer(st, cfg.phys, cfg.scheme)
    assert np.max(np.abs(phi.values - phi_o)) < 1e-9
    assert np.max(np.abs(u_star.values - u_star_o)) < 1e-9


# --- step 2 ----------------------------------------------------------------

def test_step2_equilibrium_without_field():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    st = layered_state(grid)
    phys = PhysParams(tau=0.0, h=(1.0, 0.0))
    d, d_dot, u_ss = step2_director(st, st.phi, st.u, phys, SchemeParams())
    assert np.max(np.abs(d.values - st.d.values)) < 1e-12
    assert np.max(np.abs(d_dot.values)) < 1e-9
    assert np.max(np.abs(u_ss.values)) < 1e-12


def test_step2_constant_director_keeps_velocity():
    grid = make_grid(8, 9, 4.0, 0.0, 2.0)
    rng = np.random.default_rng(5)
    u = rng.normal(size=(2,) + grid.shape)
    d = np.stack([np.full(grid.shape, 0.6), np.full(grid.shape, 0.8)])
    st = layered_state(grid, u=u, dirichlet=False, d=d)
    _, _, u_ss = step2_director(st, st.phi, st.u, PhysParams(), SchemeParams())
    assert np.array_equal(u_ss.values, u)


@pytest.mark.parametrize("seed", range(20))
def test_step2_matches_fixed_point_oracle(seed):
    st = random_state(100 + seed, dirichlet=bool(seed % 2))
    phys = PhysParams() if seed % 2 == 0 else CHEVRON_PHYS
    scheme = SchemeParams()
    phi_o, _, u_star_o, _ = picard_layer(st, phys, scheme)
    phi_next = st.phi.with_values(phi_o)
    u_star = st.u.with_values(u_star_o)
    d, d_dot, u_ss = step2_director(st, phi_next, u_star, phys, scheme)
    d_o, d_dot_o, u_ss_o, _ = picard_director(st, phi_o, u_star_o, phys, scheme)
    assert np.max(np.abs(d.values - d_o)) < 1e-9
    assert np.max(np.abs(d_dot.values - d_dot_o)) < 1e-9 * max(1, np.max(np.abs(d_dot_o)))
    assert np.max(np.abs(u_ss.values - u_ss_o)) < 1e-9


def test_step2_chevron_data_matches_oracle():
    cfg = preset_chevron(42)
    st = initial_state(cfg)
    phys, scheme = cfg.phys, cfg.scheme
    phi, _, u_star = step1_layer(st, phys, scheme)
    d, d_dot, u_ss = step2_director(st, phi, u_star, phys, scheme)
    d_o, d_dot_o, u_ss_o, _ = picard_director(st, phi.values, u_star.values, phys, scheme)
    assert np.max(np.abs(d.values - d_o)) < 1e-9
    assert np.max(np.abs(u_ss.values - u_ss_o)) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_director_matrix_eigen_bound(seed):
    st = random_state(200 + seed, dirichlet=True)
    ctx = context(st.grid)
    dt, m2 = 1e-2, 2.0
    st.d.x.values[:, 1:-1] *= 20          # steep gradients
    J, Q, P = director_matrices(ctx, st.d.values, "dirichlet", dt, m2)
    s = np.linalg.norm(J, ord=2, axis=(-2, -1))
    bound = 1 / dt - s**2 / (m2 + dt * s**2)
    eig = np.linalg.eigvalsh(P)
    assert np.allclose(P, np.swapaxes(P, -1, -2), atol=1e-12)
    assert np.all(eig[..., 0] >= bound * (1 - 1e-12))
    assert np.all(eig[..., 0] > 0)


def test_jacobian_convention():
    grid = make_grid(16, 9, 2 * np.pi, 0.0, 1.0)
    X, Y = grid.mesh()
    d = np.stack([np.sin(X), np.zeros(grid.shape)])
    J = _jacobian(context(grid), d, "neumann")
    # d d_1 / dx sits in J[0, 0]; nothing else depends on x
    assert np.allclose(J[..., 0, 0], np.cos(X), atol=1e-12)
    assert np.allclose(J[..., 1, 0], 0) and np.allclose(J[..., 0, 1], 0)


# --- step 3 ----------------------------------------------------------------

def test_step3_zero_data():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    st = layered_state(grid)
    zero = ScalarField.zeros(grid)
    zd = VectorField2.zeros(grid)
    u_t, rep = step3_velocity(st, zero, zd, CHEVRON_PHYS, SchemeParams())
    assert np.max(np.abs(u_t.values)) == 0.0


def test_step3_couette_steady_state():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    _, Y = grid.mesh()
    st = layered_state(grid, phi=np.zeros(grid.shape), d=np.zeros((2,) + grid.shape))
    bcs = (BC("dirichlet", -10.0, 10.0), NO_SLIP)
    zero = ScalarField.zeros(grid)
    zd = VectorField2.zeros(grid)
    scheme = SchemeParams(dt=0.05)
    u = st.u
    for _ in range(400):
        st = State(u, st.p, st.phi, st.d)
        u, _ = step3_velocity(st, zero, zd, CHEVRON_PHYS, scheme, velocity_bcs=bcs)
    assert np.max(np.abs(u.values[0] - 10 * Y)) < 1e-8
    assert np.max(np.abs(u.values[1])) < 1e-8


def test_step3_manufactured_forcing():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    ctx = context(grid)
    X, Y = grid.mesh()
    st = random_state(7, dirichlet=True)
    st = layered_state(grid, u=np.stack([np.sin(np.pi * X / 2) * (1 - Y**2), np.cos(np.pi * X / 2) * (1 - Y**2)]),
                       p=np.cos(np.pi * X / 2) * Y)
    phys, scheme = CHEVRON_PHYS, SchemeParams(dt=1e-2)
    rng = np.random.default_rng(1)
    phi_dot = ScalarField(grid, rng.normal(size=grid.shape))
    d_dot = VectorField2.from_arrays(grid, rng.normal(size=(2,) + grid.shape))
    target = np.stack([np.exp(np.cos(np.pi * X / 2)) * (1 - Y**2) * Y, np.sin(np.pi * X) * (1 - Y**2) ** 2])
    un = st.u.values
    conv = np.stack([ctx.convect_skew(un, target[i], "dirichlet") - phys.mu4 * ctx.laplacian(target[i], "dirichlet")
                     for i in range(2)])
    forcing = ((target - un) / scheme.dt + conv + ctx.grad(st.p.values, "neumann")
               + momentum_forces(ctx, st, phi_dot.values, d_dot.values, phys))
    u_t, _ = step3_velocity(st, phi_dot, d_dot, phys, scheme, forcing=forcing)
    assert np.max(np.abs(u_t.values - target)) < 1e-9


def test_step3_requires_dirichlet_velocity():
    grid = make_grid(8, 9, 4.0, -1.0, 1.0)
    st = layered_state(grid)
    with pytest.raises(ValueError):
        step3_velocity(st, ScalarField.zeros(grid), VectorField2.zeros(grid), CHEVRON_PHYS, SchemeParams(),
                       velocity_bcs=(NEUMANN, NEUMANN))


# --- step 4 ----------------------------------------------------------------

def _projection_grid():
    return make_grid(32, 33, 4.0, -1.0, 1.0)


def test_step4_zero():
    grid = _projection_grid()
    p = ScalarField(grid, np.random.default_rng(0).normal(size=grid.shape))
    u, p_next, info = step4_project(VectorField2.zeros(grid, (NO_SLIP, NO_SLIP)), p, SchemeParams())
    assert np.max(np.abs(u.values)) == 0
    assert np.array_equal(p_next.values, p.values)


def test_step4_constant_flow_unchanged():
    grid = _projection_grid()
    ut = VectorField2.from_arrays(grid, np.stack([np.full(grid.shape, 3.0), np.zeros(grid.shape)]))
    u, p_next, info = step4_project(ut, ScalarField.zeros(grid), SchemeParams())
    assert np.max(np.abs(u.values - ut.values)) < 1e-12
    assert np.max(np.abs(p_next.values)) < 1e-12
    assert info["warnings"] == []


def test_step4_gradient_field_removed():
    grid = _projection_grid()
    ctx = context(grid)
    X, Y = grid.mesh()
    chi = np.cos(2 * np.pi * X / grid.lx) * np.cos(np.pi * (Y - grid.y0) / (grid.y1 - grid.y0))
    dt = 1e-2
    ut = VectorField2.from_arrays(grid, ctx.grad(chi, "neumann"))
    u, p_next, info = step4_project(ut, ScalarField.zeros(grid), SchemeParams(dt=dt))
    assert np.max(np.abs(u.values)) < 1e-9
    psi = p_next.values
    assert np.max(np.abs((psi - psi.mean()) - (chi - chi.mean()) / dt)) < 1e-8


def test_step4_divergence_free_random():
    grid = _projection_grid()
    ctx = context(grid)
    rng = np.random.default_rng(2)
    v = rng.normal(size=(2,) + grid.shape)
    v[1][:, [0, -1]] = 0
    u, _, info = step4_project(VectorField2.from_arrays(grid, v), ScalarField.zeros(grid), SchemeParams())
    assert info["div_rel"] <= 1e-9
    assert ctx.norm(divergence(ctx, u.values)) <= 1e-9 * ctx.norm(divergence(ctx, v))


def test_step4_warns_on_wall_flux():
    grid = _projection_grid()
    v = np.zeros((2,) + grid.shape)
    v[1][:, -1] = 1.0
    _, _, info = step4_project(VectorField2.from_arrays(grid, v), ScalarField.zeros(grid), SchemeParams())
    assert any("crosses the walls" in w for w in info["warnings"])


# --- full step ---------------------------------------------------------------

def test_advance_equilibrium_with_flow():
    grid = make_grid(16, 17, 4.0, -1.0, 1.0)
    st = layered_state(grid)
    phys = PhysParams(tau=0.0, h=(1.0, 0.0))
    new, out, rep = advance(st, phys, SchemeParams())
    for a, b in [(new.u.values, st.u.values), (new.p.values, st.p.values),
                 (new.phi.values, st.phi.values), (new.d.values, st.d.values)]:
        assert np.max(np.abs(a - b)) < 1e-9
    assert new.step == 1 and new.time == pytest.approx(1e-3)


def _small_chevron(flow, **kw):
    from dataclasses import replace
    cfg = replace(preset_chevron(42), nx=32, ny=33, t_final=0.01, flow=flow, snapshot_times=(), **kw)
    return cfg


@pytest.mark.parametrize("flow", [False, True])
def test_chevron_ten_steps_energy_non_increasing(flow):
    res = simulate(_small_chevron(flow))
    assert len(res.energies) == 11
    assert res.violations == 0
    e = [r.e_modified for r in res.energies]
    assert all(b <= a + 1e-8 * max(1, abs(a)) for a, b in zip(e, e[1:]))


def test_advance_deterministic():
    a = simulate(_small_chevron(True))
    b = simulate(_small_chevron(True))
    assert [r.as_dict() for r in a.energies] == [r.as_dict() for r in b.energies]
    assert np.array_equal(a.final.phi.values, b.final.phi.values)


def test_dissipation_bound_no_slip_flow():
    from dataclasses import replace
    cfg = replace(preset_accuracy(), nx=32, ny=33, t_final=0.02, snapshot_times=())
    st = initial_state(cfg)
    ctx = context(st.grid)
    prev = total_energy(st, cfg.phys, cfg.scheme.dt)
    for _ in range(20):
        st, out, rep = advance(st, cfg.phys, cfg.scheme, prev_report=prev)
        drop = prev.e_modified - rep.e_modified
        assert out.dissipation > 0
        assert drop >= out.dissipation * (1 - 1e-6) - 1e-10
        assert out.div_rel <= 1e-9
        prev = rep
    assert out.dissipation == pytest.approx(
        dissipation(ctx, cfg.phys, cfg.scheme.dt, out.phi_dot.values, out.d_dot.values, out.u_tilde.values))


def test_advance_reports_iterations_and_definiteness():
    st = initial_state(_small_chevron(True))
    new, out, rep = advance(st, CHEVRON_PHYS, SchemeParams())
    assert set(out.reports) == {"layer", "director", "momentum"}
    assert all(r.converged for r in out.reports.values())
    assert out.p_min_eig > 0
