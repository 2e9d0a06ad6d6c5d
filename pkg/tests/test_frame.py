import json

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gridform import frame
from gridform.frame import (
    FIXED, PINNED, Element, GridModel, LoadCase, Material, MechanismError, Section, analyze,
    assemble_stiffness, build_load_vector, element_strain_energies, max_stress, solve_displacements,
    strain_energy, total_mass,
)
from gridform.geom import NurbsSurface, extract_grid

MAT = Material(E=10e9, G=4e9, density=420.0)
SEC = Section(b=0.1, h=0.2)


def bar(n_el=1, length=2.0, axis=(1, 0, 0)):
    axis = np.asarray(axis, float)
    nodes = [axis * length * k / n_el for k in range(n_el + 1)]
    els = [Element(k, k + 1, MAT, SEC) for k in range(n_el)]
    return GridModel(nodes, els, {0: FIXED})


def random_grid_model(rng, nu=3, nv=3):
    pts = np.zeros((4, 3, 3))
    for i in range(4):
        for j in range(3):
            pts[i, j] = (3 * i, 3 * j, rng.uniform(0, 2))
    s = NurbsSurface(3, 2, pts, rng.uniform(0.5, 2, (4, 3)), [0, 0, 0, 0, 1, 1, 1, 1], [0, 0, 0, 1, 1, 1])
    return GridModel.from_grid(extract_grid(s, nu, nv), MAT, SEC)


def test_axial_block_closed_form():
    m = bar()
    K = assemble_stiffness(m).toarray()
    ea_l = MAT.E * SEC.A / 2.0
    np.testing.assert_allclose(K[np.ix_([0, 6], [0, 6])], ea_l * np.array([[1, -1], [-1, 1]]), rtol=1e-14)


def test_stiffness_symmetric(rng):
    K = assemble_stiffness(random_grid_model(rng)).toarray()
    assert np.max(np.abs(K - K.T)) < 1e-9 * np.max(np.abs(K))


def test_rigid_body_modes_in_nullspace(rng):
    m = random_grid_model(rng)
    K = assemble_stiffness(m)
    knorm = np.max(np.abs(K.toarray()))
    d = np.zeros(m.n_dofs)
    d[0::6] = 1.0
    assert np.linalg.norm(K @ d) < 1e-6 * knorm * np.linalg.norm(d)
    # infinitesimal rigid rotation: u = w x X, theta = w
    w = np.array([0.3, -0.2, 0.5])
    d = np.zeros((m.n_nodes, 6))
    d[:, :3] = np.cross(w, m.nodes)
    d[:, 3:] = w
    d = d.ravel()
    assert np.linalg.norm(K @ d) < 1e-6 * knorm * np.linalg.norm(d)
    eig = np.linalg.eigvalsh(K.toarray())
    assert np.sum(np.abs(eig) < 1e-8 * eig.max()) == 6


def test_zero_length_element():
    with pytest.raises(frame.GeometryError):
        assemble_stiffness(GridModel([(0, 0, 0), (0, 0, 0)], [Element(0, 1)], {}))


def test_mesh_load_vector():
    s = NurbsSurface(1, 1, [[(0, 0, 0), (0, 1, 0)], [(1, 0, 0), (1, 1, 0)]], np.ones((2, 2)),
                     [0, 0, 1, 1], [0, 0, 1, 1])
    m = GridModel.from_grid(extract_grid(s, 2, 2))
    assert not build_load_vector(m, LoadCase("mesh", 0.0)).any()
    F = build_load_vector(m, LoadCase("mesh", 0.02))
    assert F.sum() == pytest.approx(-0.18, abs=1e-15)
    assert not F[np.arange(m.n_dofs) % 6 != 2].any()


def test_gravity_load_vector():
    m = GridModel([(0, 0, 0), (2, 0, 0)], [Element(0, 1, Material(density=420), Section(0.1, 0.2))], {})
    F = build_load_vector(m, LoadCase("gravity"))
    assert F[2] == pytest.approx(-82.404, rel=1e-12)
    assert F[8] == pytest.approx(-82.404, rel=1e-12)


def test_zero_force_zero_displacement():
    m = bar(3)
    d = solve_displacements(assemble_stiffness(m), np.zeros(m.n_dofs), m.constrained_dofs())
    assert not d.any()


def test_axial_bar_tip_displacement():
    m = bar(1, 2.0)
    P = 1000.0
    F = np.zeros(m.n_dofs)
    F[6] = P
    d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
    exact = P * 2.0 / (MAT.E * SEC.A)
    assert abs(d[6] - exact) <= 1e-10 * exact
    assert strain_energy(F, d) == pytest.approx(P ** 2 * 2.0 / (2 * MAT.E * SEC.A), rel=1e-10)
    assert max_stress(m, d) == pytest.approx(P / SEC.A, rel=1e-10)
    assert np.all(d[m.constrained_dofs()] == 0)


def test_cantilever_tip_deflection_and_root_stress():
    L, P = 5.0, 1500.0
    m = bar(10, L)
    F = np.zeros(m.n_dofs)
    F[6 * 10 + 2] = -P
    K = assemble_stiffness(m)
    d = solve_displacements(K, F, m.constrained_dofs())
    exact = P * L ** 3 / (3 * MAT.E * SEC.Iy)
    assert abs(-d[6 * 10 + 2] - exact) <= 0.005 * exact
    sigma = P * L * (SEC.h / 2) / SEC.Iy
    assert abs(max_stress(m, d) - sigma) <= 0.01 * sigma


def test_mechanism_detected():
    m = GridModel([(0, 0, 0), (1, 0, 0)], [Element(0, 1, MAT, SEC)], {0: PINNED})
    F = np.zeros(m.n_dofs)
    F[8] = -1.0
    with pytest.raises(MechanismError):
        solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())


def test_single_element_energy_equals_total():
    m = bar(1)
    F = np.zeros(m.n_dofs)
    F[6:9] = (10.0, -20.0, 30.0)
    d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
    ue = element_strain_energies(m, d)
    assert ue[0] == pytest.approx(strain_energy(F, d), rel=1e-12)


def test_unloaded_branch_has_no_energy():
    nodes = [(0, 0, 0), (1, 0, 0), (2, 0, 0), (2, 1, 0)]
    m = GridModel(nodes, [Element(0, 1, MAT, SEC), Element(1, 2, MAT, SEC), Element(2, 3, MAT, SEC)], {0: FIXED})
    F = np.zeros(m.n_dofs)
    F[6 * 1 + 2] = -100.0
    d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
    ue = element_strain_energies(m, d)
    assert abs(ue[1]) < 1e-12 * ue[0] and abs(ue[2]) < 1e-12 * ue[0]


def test_energy_identity_random_grids(rng):
    for _ in range(5):
        m = random_grid_model(rng, 4, 3)
        res = analyze(m)
        for r in res.results.values():
            assert r.strain_energy >= 0
            assert np.all(r.element_energies >= -1e-12)
            assert abs(r.strain_energy - r.element_energies.sum()) <= 1e-9 * max(r.strain_energy, 1e-300)


def test_rotation_invariance(rng):
    m = random_grid_model(rng, 4, 3)
    R = Rotation.from_rotvec(rng.normal(size=3)).as_matrix()
    rot = GridModel(m.nodes @ R.T, [Element(e.i, e.j, e.material, e.section, tuple(R @ [0, 0, 1]))
                                    for e in m.elements], m.supports)
    F = build_load_vector(m, LoadCase("gravity")) + build_load_vector(m, LoadCase("mesh", 3.0))
    Fr = (F.reshape(-1, 3) @ R.T).ravel()
    d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
    dr = solve_displacements(assemble_stiffness(rot), Fr, rot.constrained_dofs())
    U, Ur = strain_energy(F, d), strain_energy(Fr, dr)
    assert abs(U - Ur) <= 1e-9 * U


def test_superposition(rng):
    m = random_grid_model(rng)
    K = assemble_stiffness(m)
    c = m.constrained_dofs()
    F1, F2 = rng.normal(size=m.n_dofs), rng.normal(size=m.n_dofs)
    d12 = solve_displacements(K, F1 + F2, c)
    d1, d2 = solve_displacements(K, F1, c), solve_displacements(K, F2, c)
    assert np.linalg.norm(d12 - d1 - d2) <= 1e-9 * np.linalg.norm(d12)


def test_stiffening_reduces_energy(rng):
    m = random_grid_model(rng)
    stiff = GridModel(m.nodes, [Element(e.i, e.j, Material(2 * e.material.E, 2 * e.material.G,
                                                           e.material.density), e.section)
                                for e in m.elements], m.supports)
    assert analyze(stiff).energy("gravity") < analyze(m).energy("gravity")


def test_solver_residual(rng):
    m = random_grid_model(rng)
    K = assemble_stiffness(m)
    F = build_load_vector(m, LoadCase("gravity"))
    d = solve_displacements(K, F, m.constrained_dofs())
    free = np.setdiff1d(np.arange(m.n_dofs), m.constrained_dofs())
    r = (K @ d)[free] - F[free]
    assert np.linalg.norm(r) <= 1e-8 * np.linalg.norm(F[free])


def test_mass():
    m = GridModel([(0, 0, 0), (2, 0, 0)], [Element(0, 1, Material(density=420), Section(0.1, 0.2))], {})
    assert total_mass(m) == pytest.approx(16.8, rel=1e-14)
    m2 = GridModel(m.nodes, [Element(0, 1, Material(density=420), Section(0.2, 0.2))], {})
    assert total_mass(m2) == 2 * total_mass(m)
    assert total_mass(GridModel(m.nodes, [], {})) == 0


def test_analyze_zero_loads(rng):
    m = random_grid_model(rng)
    res = analyze(m, [LoadCase("gravity", 0.0), LoadCase("mesh", 0.0)])
    U_g, U_m, mass, sig = res.objectives()
    assert (U_g, U_m, sig, res.max_uz) == (0, 0, 0, 0)
    assert mass > 0


def test_mesh_load_linearity(rng):
    m = random_grid_model(rng)
    a = analyze(m, [LoadCase("mesh", 0.02)]).results["mesh"]
    b = analyze(m, [LoadCase("mesh", 0.06)]).results["mesh"]
    assert b.strain_energy == pytest.approx(9 * a.strain_energy, rel=1e-9)
    assert b.max_uz == pytest.approx(3 * a.max_uz, rel=1e-9)


def test_analyze_deterministic_and_json(rng):
    m = random_grid_model(rng)
    a, b = analyze(m), analyze(m)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    m2 = GridModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert json.dumps(analyze(m2).to_dict()) == json.dumps(a.to_dict())
    back = frame.AnalysisResult.from_dict(json.loads(json.dumps(a.results["mesh"].to_dict())))
    assert back.strain_energy == a.results["mesh"].strain_energy


def test_curvature_cap_default():
    assert frame.default_curvature_cap() == pytest.approx(1 / 30)
