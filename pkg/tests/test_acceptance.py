"""
End-to-end acceptance checks, one test per criterion.  Each test prints a
single ``CRITERION n: PASS|FAIL`` line (visible even under captured output)
and then asserts.  Run on its own with ``pytest tests/test_acceptance.py -v``.
"""
import contextlib
import csv
import json
import math
import time

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from gridform import cli
from gridform.evo import GAConfig, FunctionProblem, dominates, non_dominated_sort, run
from gridform.frame import (
    FIXED, Element, GridModel, LoadCase, Material, Section, analyze, assemble_stiffness, build_load_vector,
    max_stress, solve_displacements, strain_energy,
)
from gridform.geom import NurbsCurve, NurbsSurface, basis_functions, curvature_and_tangent, curve_point, extract_grid
from gridform.seqnet import ModelConfig, TrainConfig, init_params, loss_and_grad

STAGES = ("extract", "train", "predict", "analyze", "optimize", "report")


class Verdict:
    """Collects named checks for one criterion and prints a single result line."""

    def __init__(self, number, title, capsys):
        self.number, self.title, self.capsys = number, title, capsys
        self.checks = []
        self.start = time.perf_counter()

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    def elapsed(self):
        return time.perf_counter() - self.start

    def finish(self, error=None):
        failed = [c for c in self.checks if not c[1]]
        ok = error is None and not failed and self.checks
        parts = [f"{n}{' (' + d + ')' if d else ''}" for n, _, d in (failed if failed else self.checks)]
        if error is not None:
            parts.append(f"error: {error!r}")
        with self.capsys.disabled():
            print(f"\nCRITERION {self.number}: {'PASS' if ok else 'FAIL'} - {self.title}"
                  f" [{self.elapsed():.1f} s] {'; '.join(parts)}")
        assert ok, f"criterion {self.number} failed: {'; '.join(parts)}"


@pytest.fixture
def verdict(capsys):
    @contextlib.contextmanager
    def make(number, title):
        v = Verdict(number, title, capsys)
        try:
            yield v
        except Exception as exc:
            v.finish(exc)
        else:
            v.finish()
    return make


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run_pipeline(out):
    """All stages with the default configuration and seed; returns per-stage seconds."""
    times = {}
    for stage in STAGES:
        t0 = time.perf_counter()
        code = cli.main([stage, "--out", str(out)])
        times[stage] = time.perf_counter() - t0
        if code != 0:
            raise RuntimeError(f"stage {stage} exited with {code}")
    return times


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("full_run")
    return out, run_pipeline(out)


# ---------------------------------------------------------------------------

def test_criterion_1_quarter_circle(verdict):
    with verdict(1, "NURBS exactness on the rational quarter circle") as v:
        c = NurbsCurve.clamped([(1, 0, 0), (1, 1, 0), (0, 1, 0)], 2, weights=[1.0, math.sqrt(2) / 2, 1.0])
        dev = max(abs(np.linalg.norm(curve_point(c, u)) - 1.0) for u in np.linspace(0, 1, 1000))
        v.check("radial deviation < 1e-12", dev < 1e-12, f"{dev:.2e}")
        kerr = max(abs(curvature_and_tangent(c, u)[0] - 1.0) for u in np.linspace(0, 1, 100))
        v.check("curvature = 1 within 1e-9", kerr < 1e-9, f"{kerr:.2e}")
        v.check("runtime < 1 s", v.elapsed() < 1.0, f"{v.elapsed():.2f} s")


def random_curve(rng):
    p = int(rng.integers(1, 6))
    n = int(rng.integers(p + 1, p + 7))
    knots = np.concatenate([np.zeros(p + 1), np.sort(rng.uniform(0, 1, n - p - 1)), np.ones(p + 1)])
    return NurbsCurve(p, rng.normal(size=(n, 3)), rng.uniform(0.3, 3.0, n), knots)


def test_criterion_2_curve_properties(verdict):
    with verdict(2, "partition of unity, weight scaling and endpoints on 1000 random curves") as v:
        rng = np.random.default_rng(2024)
        pu = ws = ep = 0.0
        for _ in range(1000):
            c = random_curve(rng)
            for u in rng.uniform(0, 1, 3):
                pu = max(pu, abs(sum(b for _, b in basis_functions(u, c.degree, c.knots)) - 1.0))
            lam = float(rng.uniform(0.01, 100))
            scaled = c.replace(weights=c.weights * lam)
            u = rng.uniform()
            ws = max(ws, np.abs(curve_point(scaled, u) - curve_point(c, u)).max())
            ep = max(ep, np.abs(curve_point(c, 0.0) - c.points[0]).max(),
                     np.abs(curve_point(c, 1.0) - c.points[-1]).max())
        v.check("partition of unity 1e-12", pu <= 1e-12, f"{pu:.1e}")
        v.check("weight scaling 1e-12", ws <= 1e-12, f"{ws:.1e}")
        v.check("endpoint interpolation 1e-12", ep <= 1e-12, f"{ep:.1e}")
        v.check("runtime < 5 s", v.elapsed() < 5.0, f"{v.elapsed():.2f} s")


MAT = Material(E=10e9, G=4e9, density=420.0)
SEC = Section(b=0.1, h=0.2)


def straight_bar(n_el, length):
    nodes = [(length * k / n_el, 0.0, 0.0) for k in range(n_el + 1)]
    return GridModel(nodes, [Element(k, k + 1, MAT, SEC) for k in range(n_el)], {0: FIXED})


def test_criterion_3_frame_oracles(verdict):
    with verdict(3, "frame closed forms and identities") as v:
        # axial bar
        m = straight_bar(1, 2.0)
        F = np.zeros(m.n_dofs)
        F[6] = 1000.0
        d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
        exact = 1000.0 * 2.0 / (MAT.E * SEC.A)
        rel = abs(d[6] - exact) / exact
        v.check("axial PL/EA 1e-10", rel <= 1e-10, f"{rel:.1e}")
        # cantilever
        L, P = 5.0, 1500.0
        m = straight_bar(10, L)
        F = np.zeros(m.n_dofs)
        F[6 * 10 + 2] = -P
        d = solve_displacements(assemble_stiffness(m), F, m.constrained_dofs())
        tip = P * L ** 3 / (3 * MAT.E * SEC.Iy)
        rel = abs(-d[62] - tip) / tip
        v.check("cantilever PL^3/3EI 0.5%", rel <= 0.005, f"{rel:.1e}")
        sig = P * L * (SEC.h / 2) / SEC.Iy
        rel = abs(max_stress(m, d) - sig) / sig
        v.check("support stress Mc/I 1%", rel <= 0.01, f"{rel:.1e}")
        # energy identity and rotation invariance on a curved grid
        rng = np.random.default_rng(3)
        pts = np.array([[(3 * i, 3 * j, rng.uniform(0, 2)) for j in range(3)] for i in range(4)])
        s = NurbsSurface(3, 2, pts, rng.uniform(0.5, 2, (4, 3)), [0, 0, 0, 0, 1, 1, 1, 1], [0, 0, 0, 1, 1, 1])
        g = GridModel.from_grid(extract_grid(s, 4, 3), MAT, SEC)
        worst = 0.0
        for r in analyze(g).results.values():
            worst = max(worst, abs(0.5 * r.forces @ r.displacements.ravel() - r.element_energies.sum())
                        / r.strain_energy)
        v.check("1/2 F.d = sum of element energies 1e-9", worst <= 1e-9, f"{worst:.1e}")
        R = Rotation.from_rotvec([0.4, -1.1, 0.7]).as_matrix()
        rot = GridModel(g.nodes @ R.T, [Element(e.i, e.j, e.material, e.section, tuple(R @ [0, 0, 1]))
                                        for e in g.elements], g.supports)
        F = build_load_vector(g, LoadCase("gravity")) + build_load_vector(g, LoadCase("mesh", 3.0))
        Fr = (F.reshape(-1, 3) @ R.T).ravel()
        U = strain_energy(F, solve_displacements(assemble_stiffness(g), F, g.constrained_dofs()))
        Ur = strain_energy(Fr, solve_displacements(assemble_stiffness(rot), Fr, rot.constrained_dofs()))
        rel = abs(U - Ur) / U
        v.check("rotation invariance of U 1e-9", rel <= 1e-9, f"{rel:.1e}")
        v.check("runtime < 5 s", v.elapsed() < 5.0, f"{v.elapsed():.2f} s")


def test_criterion_4_gradient_check(verdict):
    with verdict(4, "encoder gradients against central differences") as v:
        cfg = ModelConfig()
        params = init_params(cfg, 11)
        rng = np.random.default_rng(4)
        for w in params.weights.values():
            if w.ndim == 1:
                w += 0.1 * rng.normal(size=w.shape)
        x = rng.normal(size=(3, cfg.seq_len, 4))
        t = rng.normal(size=(3, cfg.seq_len, 4))
        _, grads = loss_and_grad(params, x, t)
        h = 1e-5
        layers = sorted({n.split(".")[1] for n in params.weights if n.startswith("layers.")})
        for layer in layers:
            entries = [(n, i) for n, w in params.weights.items() if n.startswith(f"layers.{layer}.")
                       for i in range(w.size)]
            pick = rng.choice(len(entries), min(250, len(entries)), replace=False)
            worst = 0.0
            for e in pick:
                name, i = entries[e]
                w = params.weights[name].reshape(-1)
                old = w[i]
                w[i] = old + h
                lp = loss_and_grad(params, x, t)[0]
                w[i] = old - h
                lm = loss_and_grad(params, x, t)[0]
                w[i] = old
                num = (lp - lm) / (2 * h)
                ana = grads[name].reshape(-1)[i]
                worst = max(worst, abs(num - ana) / max(abs(num), abs(ana), 1e-8))
            v.check(f"layer {layer}: {len(pick)} params, rel err < 1e-4", len(pick) >= 200 and worst < 1e-4,
                    f"{worst:.1e}")
        v.check("runtime < 60 s", v.elapsed() < 60.0, f"{v.elapsed():.1f} s")


def test_criterion_5_counts(verdict, full_run):
    out, _ = full_run
    with verdict(5, "dataset, fold, epoch and generation counts") as v:
        rows = read_rows(out / "dataset.csv")[1:]
        per_curve = {}
        for r in rows:
            per_curve[r[0]] = per_curve.get(r[0], 0) + 1
        v.check("336 records", len(rows) == 336, str(len(rows)))
        v.check("16 curves x 21 samples", len(per_curve) == 16 and set(per_curve.values()) == {21})
        folds = json.loads((out / "folds.json").read_text())["folds"]
        v.check("fold sizes 3,3,3,3,4", [len(f) for f in folds] == [3, 3, 3, 3, 4])
        v.check("100 epochs", len(read_rows(out / "loss.csv")) - 1 == 100)
        v.check("batch size 32", TrainConfig().batch_size == 32)
        v.check("60 generations", len(read_rows(out / "history.csv")) - 1 == 60)


def test_criterion_6_training_efficacy(verdict, full_run):
    out, times = full_run
    with verdict(6, "final training loss at most half the first") as v:
        loss = np.array([[float(x) for x in r] for r in read_rows(out / "loss.csv")[1:]])
        ratio = loss[-1, 1] / loss[0, 1]
        v.check("final <= 0.5 x first", ratio <= 0.5, f"ratio {ratio:.3f}")
        v.check("runtime < 10 min", times["train"] < 600, f"{times['train']:.1f} s")


def brute_force_fronts(F):
    remaining = list(range(len(F)))
    fronts = []
    while remaining:
        front = [i for i in remaining
                 if not any(np.all(F[j] <= F[i]) and np.any(F[j] < F[i]) for j in remaining if j != i)]
        fronts.append(sorted(front))
        remaining = [i for i in remaining if i not in front]
    return fronts


def test_criterion_7_moea(verdict):
    with verdict(7, "non-dominated sorting and convergence on two parabolas") as v:
        rng = np.random.default_rng(7)
        agree = 0
        for trial in range(100):
            n = int(rng.integers(1, 51))
            F = rng.integers(0, 4, size=(n, 4)).astype(float) if trial % 2 else rng.random((n, 4))
            agree += [sorted(f) for f in non_dominated_sort(F)] == brute_force_fronts(F)
        v.check("sort equals brute force on 100 populations", agree == 100, f"{agree}/100")
        prob = FunctionProblem(np.array([[-3.0, 5.0]]), lambda x: np.array([x[0] ** 2, (x[0] - 2) ** 2]),
                               ("f1", "f2"))
        h = run(prob, GAConfig(population=40, generations=60, seed=0))
        final = h.records[-1].F
        front = final[non_dominated_sort(final)[0]]
        x = np.linspace(0, 2, 20001)
        true = np.stack([x ** 2, (x - 2) ** 2], axis=1)
        gd = np.sqrt(((front[:, None] - true[None]) ** 2).sum(-1)).min(axis=1).mean()
        v.check("generational distance < 0.05", gd < 0.05, f"{gd:.2e}")
        v.check("final front mutually non-dominated", not any(dominates(a, b) for a in front for b in front))
        v.check("runtime < 30 s", v.elapsed() < 30.0, f"{v.elapsed():.1f} s")


def test_criterion_8_form_finding(verdict, full_run):
    out, times = full_run
    with verdict(8, "form-finding run on the reference problem") as v:
        rows = read_rows(out / "history.csv")
        names = [h[len("best_"):] for h in rows[0][1:]]
        best = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
        base = json.loads((out / "report.json").read_text())["designs"]["baseline"]["objectives"]
        base = np.array([base[n] for n in names])
        v.check("best so far non-increasing", np.all(np.diff(best, axis=0) <= 0))
        v.check("final best <= baseline", np.all(best[-1] <= base),
                ", ".join(f"{n} {100 * (b - f) / b:.2f}%" for n, b, f in zip(names, base, best[-1])))
        k = names.index("U_mesh")
        v.check("U_mesh strictly below baseline", best[-1, k] < base[k])
        v.check("runtime < 15 min", times["optimize"] < 900, f"{times['optimize']:.1f} s")


def test_criterion_9_determinism(verdict, full_run, tmp_path):
    out, _ = full_run
    with verdict(9, "two pipeline runs with one seed give identical files") as v:
        run_pipeline(tmp_path)
        names = sorted(p.name for p in out.iterdir())
        v.check("same file set", names == sorted(p.name for p in tmp_path.iterdir()))
        data_files = [n for n in names if n.endswith((".csv", ".json"))]
        diff = [n for n in names if (out / n).read_bytes() != (tmp_path / n).read_bytes()]
        v.check(f"{len(data_files)} CSV/JSON files identical", not [n for n in diff if n in data_files],
                ", ".join(diff))
        v.check("figures identical", not diff)
