"""
Form-finding problem: lofted grid shell whose section curves expose
control-point heights and weights as design variables.

A design vector is applied to the section curves, the sections are made
knot-compatible, lofted, sampled into a grid of beams and analysed under
gravity and a uniform nodal mesh load.  Objectives are the two strain
energies, the mass and the peak extreme-fibre stress, all minimized.
Designs whose grid lines bend tighter than the curvature cap, or whose
geometry or analysis fails, are infeasible and score ``+inf``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import frame
from .frame import GLT, GLT_SECTION, Analysis, GridModel, LoadCase, Material, Section
from .geom import (
    GeometryError, NurbsCurve, NurbsSurface, clamped_knots, extract_grid, greville, interpolate,
    loft_surface, max_grid_curvature, refit_to_knots,
)

OBJECTIVES = ("U_gravity", "U_mesh", "mass", "sigma")


class InfeasibleDesign(ValueError):
    pass


@dataclass(frozen=True)
class DesignVariable:
    """One design variable acting on control points of one section curve.

    ``kind`` is ``"z"`` (control-point height) or ``"weight"``.  When several
    indices are listed they move together and must share a baseline value.
    """
    curve: int
    indices: tuple
    kind: str
    lower: float
    upper: float

    def __post_init__(self):
        object.__setattr__(self, "indices", tuple(int(i) for i in np.atleast_1d(self.indices)))
        if self.kind not in ("z", "weight"):
            raise ValueError(f"unknown variable kind {self.kind!r}")
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)) or self.lower >= self.upper:
            raise ValueError("variable bounds must be finite with lower < upper")
        if self.kind == "weight" and self.lower <= 0:
            raise ValueError("weight lower bound must be positive")
        if not self.indices:
            raise ValueError("variable needs at least one control-point index")

    @property
    def name(self) -> str:
        idx = "+".join(str(i) for i in self.indices)
        return f"c{self.curve}_{self.kind}{idx}"

    def read(self, curves: Sequence[NurbsCurve]) -> float:
        c = curves[self.curve]
        vals = c.points[list(self.indices), 2] if self.kind == "z" else c.weights[list(self.indices)]
        if np.ptp(vals) > 1e-12 * max(1.0, np.max(np.abs(vals))):
            raise ValueError(f"variable {self.name}: tied control points differ at baseline")
        return float(vals[0])

    def to_dict(self) -> dict:
        return {"curve": self.curve, "indices": list(self.indices), "kind": self.kind,
                "lower": self.lower, "upper": self.upper}

    @classmethod
    def from_dict(cls, d: dict) -> "DesignVariable":
        return cls(int(d["curve"]), tuple(d["indices"]), str(d["kind"]), float(d["lower"]), float(d["upper"]))


@dataclass(eq=False)
class FormFindingProblem:
    """Section curves plus design variables, grid resolution and load cases."""
    curves: list
    variables: list
    grid: tuple = (12, 6)
    loft_degree: int = 2
    material: Material = GLT
    section: Section = GLT_SECTION
    curvature_cap: float | None = None
    cases: tuple = frame.DEFAULT_CASES
    support_dofs: tuple = frame.PINNED
    objective_names: tuple = OBJECTIVES
    baseline: np.ndarray = field(init=False)

    def __post_init__(self):
        self.curves = list(self.curves)
        self.variables = list(self.variables)
        if len(self.curves) < self.loft_degree + 1:
            raise ValueError(f"need at least {self.loft_degree + 1} section curves")
        for v in self.variables:
            if not 0 <= v.curve < len(self.curves):
                raise ValueError(f"variable {v.name} refers to a missing curve")
            if max(v.indices) >= self.curves[v.curve].n_ctrl or min(v.indices) < 0:
                raise ValueError(f"variable {v.name} refers to a missing control point")
        if self.curvature_cap is None:
            self.curvature_cap = frame.default_curvature_cap(self.section)
        self.baseline = np.array([v.read(self.curves) for v in self.variables])
        if np.any(self.baseline < self.bounds[:, 0]) or np.any(self.baseline > self.bounds[:, 1]):
            raise ValueError("baseline design lies outside the variable bounds")

    @property
    def bounds(self) -> np.ndarray:
        return np.array([(v.lower, v.upper) for v in self.variables], dtype=float).reshape(-1, 2)

    @property
    def variable_names(self) -> tuple:
        return tuple(v.name for v in self.variables)

    def apply(self, design) -> list[NurbsCurve]:
        """Section curves with the design values written into them."""
        design = np.asarray(design, dtype=float)
        if design.shape != (len(self.variables),):
            raise ValueError(f"design has {design.size} values, expected {len(self.variables)}")
        b = self.bounds
        if np.any(design < b[:, 0]) or np.any(design > b[:, 1]):
            raise ValueError("design lies outside the variable bounds")
        pts = [c.points.copy() for c in self.curves]
        wts = [c.weights.copy() for c in self.curves]
        for v, val in zip(self.variables, design):
            if v.kind == "z":
                pts[v.curve][list(v.indices), 2] = val
            else:
                wts[v.curve][list(v.indices)] = val
        return [c.replace(points=p, weights=w) for c, p, w in zip(self.curves, pts, wts)]

    def sections(self, design) -> list[NurbsCurve]:
        """Knot-compatible sections of a design, ready for lofting.

        Weight variables act on their whole control-point column: after the
        sections share one knot vector, the other sections' weights at those
        indices are scaled by the same factor (value / baseline).  A weight
        on a single section would blend control points of different sections
        unevenly and kink the lofted surface in plan.
        """
        design = np.asarray(design, dtype=float)
        secs = compatible_sections(self.apply(design))
        for v, val, base in zip(self.variables, design, self.baseline):
            if v.kind != "weight" or val == base:
                continue
            idx = list(v.indices)
            secs = [c if k == v.curve else c.replace(weights=_scaled(c.weights, idx, val / base))
                    for k, c in enumerate(secs)]
        return secs

    def surface(self, design) -> NurbsSurface:
        return loft_surface(self.sections(design), self.loft_degree)

    def model(self, design) -> tuple[NurbsSurface, GridModel]:
        """Lofted surface and beam model of a design; raises :class:`InfeasibleDesign`."""
        try:
            surf = self.surface(design)
            nu, nv = self.grid
            kmax = max_grid_curvature(surf, nu, nv)
            if not kmax <= self.curvature_cap:
                raise InfeasibleDesign(f"grid curvature {kmax:.6g} exceeds cap {self.curvature_cap:.6g}")
            grid = extract_grid(surf, nu, nv)
        except GeometryError as exc:
            raise InfeasibleDesign(str(exc)) from exc
        return surf, GridModel.from_grid(grid, self.material, self.section, self.support_dofs)

    def analyze(self, design) -> tuple[NurbsSurface, GridModel, Analysis]:
        surf, model = self.model(design)
        try:
            res = frame.analyze(model, self.cases)
        except frame.FrameError as exc:
            raise InfeasibleDesign(str(exc)) from exc
        return surf, model, res

    def evaluate(self, design) -> np.ndarray:
        """Objective vector; ``+inf`` everywhere when the design is infeasible."""
        try:
            _, _, res = self.analyze(design)
        except InfeasibleDesign:
            return np.full(len(self.objective_names), np.inf)
        return np.array(res.objectives(), dtype=float)

    def to_dict(self) -> dict:
        return {
            "curves": [c.to_dict() for c in self.curves],
            "variables": [v.to_dict() for v in self.variables],
            "grid": list(self.grid),
            "loft_degree": self.loft_degree,
            "material": {"E": self.material.E, "G": self.material.G, "density": self.material.density},
            "section": {"b": self.section.b, "h": self.section.h},
            "curvature_cap": self.curvature_cap,
            "cases": [{"kind": c.kind, "magnitude": c.magnitude} for c in self.cases],
            "support_dofs": list(self.support_dofs),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FormFindingProblem":
        return cls(
            curves=[NurbsCurve.from_dict(c) for c in d["curves"]],
            variables=[DesignVariable.from_dict(v) for v in d["variables"]],
            grid=tuple(int(n) for n in d.get("grid", (12, 6))),
            loft_degree=int(d.get("loft_degree", 2)),
            material=Material(**d["material"]) if "material" in d else GLT,
            section=Section(**d["section"]) if "section" in d else GLT_SECTION,
            curvature_cap=d.get("curvature_cap"),
            cases=tuple(LoadCase(c["kind"], float(c["magnitude"])) for c in d["cases"])
            if "cases" in d else frame.DEFAULT_CASES,
            support_dofs=tuple(d.get("support_dofs", frame.PINNED)),
        )


def _scaled(arr, idx, factor):
    out = np.array(arr, dtype=float)
    out[idx] *= factor
    return out


def compatible_sections(curves: Sequence[NurbsCurve]) -> list[NurbsCurve]:
    """Re-express every curve on the knot vector of the richest curve.

    Exact when the richer knot vector contains the others' knots, as for a
    single-segment cubic placed next to a clamped cubic spline.
    """
    ref = max(curves, key=lambda c: c.n_ctrl)
    out = []
    for c in curves:
        if c.degree != ref.degree:
            raise GeometryError("section curves must share one degree")
        same = c.knots.shape == ref.knots.shape and np.array_equal(c.knots, ref.knots)
        out.append(c if same else refit_to_knots(c, ref.knots))
    return out


def reference_problem(span: float = 30.0, width: float = 20.0, side_rise: float = 2.8,
                      mid_rise: float = 2.4, n_mid: int = 22, grid=(12, 6)) -> FormFindingProblem:
    """Three-section vault used as the default optimization case.

    Two side curves at ``y = -width/2`` and ``+width/2`` are single cubic
    segments with 4 control points whose two interior points share one
    height variable.  The middle curve at ``y = 0`` is a clamped cubic with
    ``n_mid`` control points tracing a parabola; the weights of its 11th and
    12th control points are the remaining variables.  Height bounds are
    +/-25% of the surface rise around the baseline; weights lie in [0.2, 5].
    """
    half = width / 2.0
    sides = [NurbsCurve.clamped([(0.0, y, 0.0), (span / 3, y, side_rise), (2 * span / 3, y, side_rise),
                                 (span, y, 0.0)], 3) for y in (-half, half)]
    knots = clamped_knots(n_mid, 3)
    g = greville(knots, 3)
    pts = np.column_stack([span * g, np.zeros_like(g), 4.0 * mid_rise * g * (1.0 - g)])
    ctrl, _ = interpolate(g, pts, 3, knots)
    middle = NurbsCurve(3, ctrl, np.ones(n_mid), knots)
    curves = [sides[0], middle, sides[1]]
    rise = max(mid_rise, 0.75 * side_rise)
    dz = 0.25 * rise
    variables = [DesignVariable(0, (1, 2), "z", side_rise - dz, side_rise + dz),
                 DesignVariable(2, (1, 2), "z", side_rise - dz, side_rise + dz)]
    mid_w = n_mid // 2
    variables += [DesignVariable(1, (k,), "weight", 0.2, 5.0) for k in (mid_w - 1, mid_w)]
    return FormFindingProblem(curves, variables, tuple(grid))
