"""
Linear-elastic space-frame analysis for grid shells.

Each member is a 12-DOF Euler-Bernoulli beam (no shear deformation).  Nodes
carry six DOFs ordered ``ux, uy, uz, rx, ry, rz``.  The section width ``b``
lies along the local y axis and the height ``h`` along local z, so ``I_y``
is the strong-axis inertia for a vertical-ish member.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import scipy.linalg
import scipy.sparse as sps

G_ACC = 9.81
DOF_PER_NODE = 6
PINNED = (0, 1, 2)
FIXED = (0, 1, 2, 3, 4, 5)
MIN_LENGTH = 1e-9


class FrameError(ValueError):
    pass


class GeometryError(FrameError):
    pass


class MechanismError(FrameError):
    """The reduced stiffness matrix is not positive definite."""


@dataclass(frozen=True)
class Material:
    E: float = 11.5e9
    G: float = 0.72e9
    density: float = 420.0

    def __post_init__(self):
        if min(self.E, self.G, self.density) <= 0:
            raise FrameError("material constants must be positive")


@dataclass(frozen=True)
class Section:
    b: float = 0.1
    h: float = 0.2

    def __post_init__(self):
        if self.b <= 0 or self.h <= 0:
            raise FrameError("section dimensions must be positive")

    @property
    def A(self):
        return self.b * self.h

    @property
    def Iy(self):
        return self.b * self.h ** 3 / 12

    @property
    def Iz(self):
        return self.h * self.b ** 3 / 12

    @property
    def J(self):
        # Roark's approximation for a solid rectangle
        a, c = max(self.b, self.h), min(self.b, self.h)
        return a * c ** 3 * (1 / 3 - 0.21 * (c / a) * (1 - c ** 4 / (12 * a ** 4)))


GLT = Material()
GLT_SECTION = Section()


def default_curvature_cap(section: Section = GLT_SECTION) -> float:
    """Largest member curvature admitted for a bent lamella stack, 1/(150 h)."""
    return 1.0 / (150.0 * section.h)


@dataclass(frozen=True)
class Element:
    i: int
    j: int
    material: Material = GLT
    section: Section = GLT_SECTION
    ref: tuple | None = None  # vector fixing local z; None -> global z


@dataclass(eq=False)
class GridModel:
    nodes: np.ndarray
    elements: list[Element]
    supports: dict[int, tuple[int, ...]] = field(default_factory=dict)
    boundary: np.ndarray | None = None

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float).reshape(-1, 3)
        n = len(self.nodes)
        for e in self.elements:
            if not (0 <= e.i < n and 0 <= e.j < n) or e.i == e.j:
                raise FrameError(f"element ({e.i}, {e.j}) references invalid nodes")
        for node, dofs in self.supports.items():
            if not 0 <= node < n or any(d not in range(6) for d in dofs):
                raise FrameError(f"invalid support at node {node}: {dofs}")
        if self.boundary is None:
            self.boundary = np.zeros(n, dtype=bool)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_dofs(self):
        return DOF_PER_NODE * len(self.nodes)

    @classmethod
    def from_grid(cls, grid, material=GLT, section=GLT_SECTION, support_dofs=PINNED):
        """Frame model on a :class:`~gridform.geom.GridSkeleton`; boundary nodes
        receive ``support_dofs``."""
        elements = [Element(int(a), int(b), material, section) for a, b in grid.edges]
        supports = {int(k): tuple(support_dofs) for k in np.flatnonzero(grid.boundary)}
        return cls(grid.nodes, elements, supports, np.array(grid.boundary, dtype=bool))

    def constrained_dofs(self) -> np.ndarray:
        return np.array(sorted(DOF_PER_NODE * n + d for n, dofs in self.supports.items() for d in dofs),
                        dtype=int)

    def to_dict(self) -> dict:
        mats = sorted({e.material for e in self.elements}, key=lambda m: (m.E, m.G, m.density))
        secs = sorted({e.section for e in self.elements}, key=lambda s: (s.b, s.h))
        if len(mats) > 1 or len(secs) > 1:
            raise FrameError("model JSON supports a single material and section")
        mat = mats[0] if mats else GLT
        sec = secs[0] if secs else GLT_SECTION
        d = {"nodes": self.nodes.tolist(),
             "elements": [[e.i, e.j] for e in self.elements],
             "supports": [{"node": n, "dofs": list(dofs)} for n, dofs in sorted(self.supports.items())],
             "material": {"E": mat.E, "G": mat.G, "density": mat.density},
             "section": {"b": sec.b, "h": sec.h},
             "boundary": [int(k) for k in np.flatnonzero(self.boundary)]}
        refs = [e.ref for e in self.elements]
        if any(r is not None for r in refs):
            d["element_refs"] = [None if r is None else list(r) for r in refs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GridModel":
        try:
            mat = Material(**d.get("material", {}))
            sec = Section(**d.get("section", {}))
            refs = d.get("element_refs") or [None] * len(d["elements"])
            elements = [Element(int(i), int(j), mat, sec, None if r is None else tuple(r))
                        for (i, j), r in zip(d["elements"], refs)]
            supports = {int(s["node"]): tuple(int(x) for x in s["dofs"]) for s in d.get("supports", [])}
            nodes = np.asarray(d["nodes"], dtype=float)
            boundary = np.zeros(len(nodes), dtype=bool)
            boundary[list(d.get("boundary", []))] = True
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, FrameError):
                raise
            raise FrameError(f"malformed model record: {exc!r}") from None
        return cls(nodes, elements, supports, boundary)


@dataclass(frozen=True)
class LoadCase:
    """``gravity``: self weight with ``magnitude`` as the gravitational
    acceleration.  ``mesh``: ``magnitude`` force units downward at every node."""
    kind: str
    magnitude: float | None = None

    def __post_init__(self):
        if self.kind not in ("gravity", "mesh"):
            raise FrameError(f"unknown load case kind {self.kind!r}")
        if self.magnitude is None:
            object.__setattr__(self, "magnitude", G_ACC if self.kind == "gravity" else 0.02)
        if self.magnitude < 0:
            raise FrameError("load magnitude must be >= 0")


DEFAULT_CASES = (LoadCase("gravity"), LoadCase("mesh"))


# ---------------------------------------------------------------------------
# element matrices
# ---------------------------------------------------------------------------

def _axes_batch(xi, xj, refs) -> np.ndarray:
    """Rotation matrices ``(n, 3, 3)`` whose rows are each element's local x, y, z axes."""
    ex = xj - xi
    length = np.linalg.norm(ex, axis=1)
    if len(length) and length.min() < MIN_LENGTH:
        k = int(np.argmin(length))
        raise GeometryError(f"zero-length element {k} (L={length[k]:.3e})")
    ex = ex / length[:, None]
    ez = refs - np.sum(refs * ex, axis=1)[:, None] * ex
    weak = np.linalg.norm(ez, axis=1) < 1e-6 * np.linalg.norm(refs, axis=1)
    if weak.any():
        # member parallel to the reference direction: fall back to global Y
        y = np.array([0.0, 1.0, 0.0])
        ez[weak] = y - (ex[weak] @ y)[:, None] * ex[weak]
    ez /= np.linalg.norm(ez, axis=1)[:, None]
    ey = np.cross(ez, ex)
    return np.stack([ex, ey, ez], axis=1)


def local_axes(xi, xj, ref=None) -> np.ndarray:
    """Rotation matrix whose rows are the local x, y, z axes."""
    up = np.array([0.0, 0.0, 1.0]) if ref is None else np.asarray(ref, float)
    return _axes_batch(np.asarray(xi, float)[None], np.asarray(xj, float)[None], up[None])[0]


def _stiffness_batch(L, E, G, A, Iy, Iz, J) -> np.ndarray:
    """Local 12x12 stiffness matrices for arrays of element properties."""
    k = np.zeros((len(L), 12, 12))
    ea, gj = E * A / L, G * J / L
    k[:, 0, 0] = k[:, 6, 6] = ea
    k[:, 0, 6] = -ea
    k[:, 3, 3] = k[:, 9, 9] = gj
    k[:, 3, 9] = -gj
    # bending in the local x-y plane (v, rz)
    a, b, c, d = 12 * E * Iz / L ** 3, 6 * E * Iz / L ** 2, 4 * E * Iz / L, 2 * E * Iz / L
    k[:, 1, 1] = k[:, 7, 7] = a
    k[:, 1, 7] = -a
    k[:, 1, 5] = k[:, 1, 11] = b
    k[:, 5, 7] = k[:, 7, 11] = -b
    k[:, 5, 5] = k[:, 11, 11] = c
    k[:, 5, 11] = d
    # bending in the local x-z plane (w, ry)
    a, b, c, d = 12 * E * Iy / L ** 3, 6 * E * Iy / L ** 2, 4 * E * Iy / L, 2 * E * Iy / L
    k[:, 2, 2] = k[:, 8, 8] = a
    k[:, 2, 8] = -a
    k[:, 2, 4] = k[:, 2, 10] = -b
    k[:, 4, 8] = k[:, 8, 10] = b
    k[:, 4, 4] = k[:, 10, 10] = c
    k[:, 4, 10] = d
    return np.triu(k) + np.swapaxes(np.triu(k, 1), 1, 2)


def local_stiffness(length: float, material: Material, section: Section) -> np.ndarray:
    args = [np.array([v], dtype=float) for v in
            (length, material.E, material.G, section.A, section.Iy, section.Iz, section.J)]
    return _stiffness_batch(*args)[0]


@dataclass
class ElementArrays:
    """Per-element quantities stacked for vectorized assembly and recovery."""
    length: np.ndarray      # (n,)
    R: np.ndarray           # (n, 3, 3)
    k: np.ndarray           # (n, 12, 12) local stiffness
    dofs: np.ndarray        # (n, 12) global DOF indices
    A: np.ndarray
    b: np.ndarray
    h: np.ndarray
    Iy: np.ndarray
    Iz: np.ndarray
    density: np.ndarray

    def T(self) -> np.ndarray:
        """Block-diagonal 12x12 transformations, global to local."""
        T = np.zeros((len(self.R), 12, 12))
        for a in range(4):
            T[:, 3 * a:3 * a + 3, 3 * a:3 * a + 3] = self.R
        return T

    def to_local(self, d) -> np.ndarray:
        """Local DOF vectors ``(n, 12)`` from a global displacement vector."""
        dg = np.asarray(d, dtype=float)[self.dofs].reshape(-1, 4, 3)
        return (dg @ np.swapaxes(self.R, 1, 2)).reshape(-1, 12)


def element_arrays(model: GridModel) -> ElementArrays:
    els = model.elements
    n = len(els)
    ij = np.array([(e.i, e.j) for e in els], dtype=int).reshape(n, 2)
    xi, xj = model.nodes[ij[:, 0]], model.nodes[ij[:, 1]]
    refs = np.array([(0.0, 0.0, 1.0) if e.ref is None else e.ref for e in els], dtype=float).reshape(n, 3)
    R = _axes_batch(xi, xj, refs)
    L = np.linalg.norm(xj - xi, axis=1)

    def prop(fn):
        return np.array([fn(e) for e in els], dtype=float)

    A, Iy, Iz = prop(lambda e: e.section.A), prop(lambda e: e.section.Iy), prop(lambda e: e.section.Iz)
    k = _stiffness_batch(L, prop(lambda e: e.material.E), prop(lambda e: e.material.G), A, Iy, Iz,
                         prop(lambda e: e.section.J))
    dofs = np.concatenate([6 * ij[:, :1] + np.arange(6), 6 * ij[:, 1:] + np.arange(6)], axis=1)
    return ElementArrays(L, R, k, dofs, A, prop(lambda e: e.section.b), prop(lambda e: e.section.h),
                         Iy, Iz, prop(lambda e: e.material.density))


def element_dofs(e: Element) -> np.ndarray:
    return np.concatenate([np.arange(6) + 6 * e.i, np.arange(6) + 6 * e.j])


def assemble_stiffness(model: GridModel, arrays: ElementArrays | None = None) -> sps.csr_matrix:
    n = model.n_dofs
    if not model.elements:
        return sps.csr_matrix((n, n))
    ea = element_arrays(model) if arrays is None else arrays
    T = ea.T()
    kg = np.swapaxes(T, 1, 2) @ ea.k @ T
    rows = np.repeat(ea.dofs, 12, axis=1).ravel()
    cols = np.tile(ea.dofs, (1, 12)).ravel()
    K = sps.coo_matrix((kg.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    K.sum_duplicates()
    return K


def build_load_vector(model: GridModel, case: LoadCase) -> np.ndarray:
    F = np.zeros(model.n_dofs)
    if case.kind == "mesh":
        F[2::DOF_PER_NODE] -= case.magnitude
    elif model.elements:
        ea = element_arrays(model)
        half = 0.5 * ea.density * ea.A * ea.length * case.magnitude
        np.subtract.at(F, ea.dofs[:, 2], half)
        np.subtract.at(F, ea.dofs[:, 8], half)
    return F


class ReducedSolver:
    """Cholesky factorization of the stiffness restricted to the free DOFs.

    A reduced matrix that is not positive definite means the supports leave
    a mechanism.
    """

    def __init__(self, K, constrained, rtol: float = 1e-8):
        n = K.shape[0]
        self.n, self.rtol = n, rtol
        self.free = np.setdiff1d(np.arange(n), np.asarray(constrained, dtype=int))
        self._factor = None
        if len(self.free):
            Kff = K[self.free][:, self.free]
            self.Kff = Kff.toarray() if sps.issparse(Kff) else np.asarray(Kff)

    def _factorize(self):
        try:
            c, low = scipy.linalg.cho_factor(self.Kff, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise MechanismError(f"reduced stiffness is not positive definite ({exc})") from None
        piv = np.abs(np.diag(c))
        if piv.min() ** 2 < 1e-14 * piv.max() ** 2:
            raise MechanismError("reduced stiffness is numerically singular; supports leave a mechanism")
        self._factor = (c, low)

    def solve(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        d = np.zeros(self.n)
        if len(self.free) == 0:
            return d
        Ff = F[self.free]
        if not np.any(Ff):
            return d
        if self._factor is None:
            self._factorize()
        df = scipy.linalg.cho_solve(self._factor, Ff)
        resid = np.linalg.norm(self.Kff @ df - Ff)
        if not np.all(np.isfinite(df)) or resid > self.rtol * np.linalg.norm(Ff):
            raise MechanismError(f"solve residual {resid:.3e} exceeds tolerance")
        d[self.free] = df
        return d


def solve_displacements(K, F, constrained, rtol: float = 1e-8) -> np.ndarray:
    """Solve ``K d = F`` with the listed DOFs held at zero."""
    return ReducedSolver(K, constrained, rtol).solve(F)


def strain_energy(F, d) -> float:
    return 0.5 * float(np.dot(F, d))


def _end_forces(ea: ElementArrays, d) -> np.ndarray:
    return (ea.k @ ea.to_local(d)[:, :, None])[:, :, 0]


def element_end_forces(model: GridModel, d) -> list[np.ndarray]:
    """Local end-force vectors ``k_local @ d_local`` per element."""
    if not model.elements:
        return []
    return list(_end_forces(element_arrays(model), d))


def _energies(ea: ElementArrays, d) -> np.ndarray:
    dl = ea.to_local(d)
    return 0.5 * np.sum(dl * (ea.k @ dl[:, :, None])[:, :, 0], axis=1)


def element_strain_energies(model: GridModel, d) -> np.ndarray:
    if not model.elements:
        return np.zeros(0)
    return _energies(element_arrays(model), d)


def total_mass(model: GridModel) -> float:
    if not model.elements:
        return 0.0
    ea = element_arrays(model)
    return float(np.sum(ea.density * ea.A * ea.length))


def _max_stress(ea: ElementArrays, d) -> float:
    f = np.abs(_end_forces(ea, d))
    sig = [f[:, n] / ea.A + f[:, my] * (ea.h / 2) / ea.Iy + f[:, mz] * (ea.b / 2) / ea.Iz
           for n, my, mz in ((0, 4, 5), (6, 10, 11))]
    return float(np.max(sig)) if len(ea.length) else 0.0


def max_stress(model: GridModel, d) -> float:
    """Largest extreme-fibre normal stress |N|/A + |My| c_z / Iy + |Mz| c_y / Iz
    over both ends of every element."""
    if not model.elements:
        return 0.0
    return _max_stress(element_arrays(model), d)


@dataclass
class AnalysisResult:
    case: LoadCase
    forces: np.ndarray
    displacements: np.ndarray   # (n_nodes, 6)
    strain_energy: float
    element_energies: np.ndarray
    mass: float
    sigma_max: float
    max_uz: float

    def to_dict(self) -> dict:
        return {"case": {"kind": self.case.kind, "magnitude": self.case.magnitude},
                "strain_energy": self.strain_energy,
                "element_energies": self.element_energies.tolist(),
                "mass": self.mass,
                "sigma_max": self.sigma_max,
                "max_abs_uz": self.max_uz,
                "forces": self.forces.reshape(-1, 6).tolist(),
                "displacements": self.displacements.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "AnalysisResult":
        return cls(LoadCase(d["case"]["kind"], d["case"]["magnitude"]),
                   np.asarray(d["forces"], float).ravel(), np.asarray(d["displacements"], float),
                   float(d["strain_energy"]), np.asarray(d["element_energies"], float),
                   float(d["mass"]), float(d["sigma_max"]), float(d["max_abs_uz"]))


def analyze_case(model, K, case, constrained=None, arrays: ElementArrays | None = None,
                 solver: ReducedSolver | None = None) -> AnalysisResult:
    if solver is None:
        solver = ReducedSolver(K, model.constrained_dofs() if constrained is None else constrained)
    F = build_load_vector(model, case)
    d = solver.solve(F)
    U = strain_energy(F, d)
    disp = d.reshape(-1, 6)
    if model.elements:
        ea = element_arrays(model) if arrays is None else arrays
        ue, mass, sig = _energies(ea, d), float(np.sum(ea.density * ea.A * ea.length)), _max_stress(ea, d)
    else:
        ue, mass, sig = np.zeros(0), 0.0, 0.0
    return AnalysisResult(case, F, disp, U, ue, mass, sig,
                          float(np.max(np.abs(disp[:, 2]))) if len(disp) else 0.0)


@dataclass
class Analysis:
    results: dict[str, AnalysisResult]
    mass: float

    def energy(self, kind: str) -> float:
        return self.results[kind].strain_energy if kind in self.results else 0.0

    @property
    def sigma_max(self):
        return max((r.sigma_max for r in self.results.values()), default=0.0)

    @property
    def max_uz(self):
        return max((r.max_uz for r in self.results.values()), default=0.0)

    def objectives(self) -> tuple[float, float, float, float]:
        """``(U_gravity, U_mesh, mass, sigma_max)``."""
        return (self.energy("gravity"), self.energy("mesh"), self.mass, self.sigma_max)

    def to_dict(self) -> dict:
        U_g, U_m, mass, sig = self.objectives()
        return {"objectives": {"U_gravity": U_g, "U_mesh": U_m, "mass": mass, "sigma_max": sig,
                               "max_abs_uz": self.max_uz},
                "cases": {k: r.to_dict() for k, r in self.results.items()}}


def analyze(model: GridModel, cases: Iterable[LoadCase] = DEFAULT_CASES) -> Analysis:
    """Assemble once, solve each load case.  Case results are keyed by kind;
    solver failures are re-raised with the case label attached."""
    arrays = element_arrays(model) if model.elements else None
    K = assemble_stiffness(model, arrays)
    solver = ReducedSolver(K, model.constrained_dofs())
    results = {}
    for case in cases:
        if case.kind in results:
            raise FrameError(f"duplicate load case {case.kind!r}")
        try:
            results[case.kind] = analyze_case(model, K, case, arrays=arrays, solver=solver)
        except FrameError as exc:
            raise type(exc)(f"[{case.kind}] {exc}") from None
    return Analysis(results, total_mass(model))
