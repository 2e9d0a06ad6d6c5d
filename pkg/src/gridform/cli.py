"""
Command line pipeline: ``gridform {extract,train,predict,analyze,optimize,report}``.

Every command reads one JSON config (``--config``), derives its random
seeds from one global seed (``--seed`` overrides the config) and writes its
files into ``--out``.  Outputs are computed in memory first and then moved
into place by rename, so a failing command leaves no partial files.

Exit codes: 0 success, 2 input error, 3 training failure, 4 analysis or
optimization failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data, evo, frame, seqnet, svg
from .formfinding import FormFindingProblem, reference_problem

EXIT_OK, EXIT_INPUT, EXIT_TRAINING, EXIT_ANALYSIS = 0, 2, 3, 4

DEFAULT_CONFIG = {
    "seed": 0,
    "paths": {},
    "corpus": {"n_curves": 16, "n_segments": 20, "curvature_cap": None},
    "folds": {"sizes": [3, 3, 3, 3, 4], "holdout": -1},
    "model": {},
    "train": {},
    "ga": {},
    "analysis": {"cases": [{"kind": "gravity", "magnitude": frame.G_ACC}, {"kind": "mesh", "magnitude": 0.02}]},
}

PREDICTION_COLUMNS = ("u", "actual_curvature", "pred_curvature", "actual_tx", "pred_tx",
                      "actual_ty", "pred_ty", "actual_tz", "pred_tz", "curve_id")


class StageError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def input_error(msg) -> StageError:
    return StageError(EXIT_INPUT, str(msg))


@dataclass
class RunConfig:
    seed: int
    out: Path
    base: Path                  # directory that relative config paths refer to
    raw: dict

    def section(self, name) -> dict:
        return dict(self.raw.get(name) or {})

    def path(self, key, default_name=None) -> Path | None:
        p = (self.raw.get("paths") or {}).get(key)
        if p is None:
            return None if default_name is None else self.out / default_name
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    # one global seed fixes every stage
    @property
    def corpus_seed(self):
        return self.seed

    @property
    def fold_seed(self):
        return self.seed + 1

    @property
    def train_seed(self):
        return self.seed + 2

    @property
    def ga_seed(self):
        return self.seed + 3


def load_config(path=None, seed=None, out=".") -> RunConfig:
    raw = copy.deepcopy(DEFAULT_CONFIG)
    base = Path.cwd()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise input_error(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise input_error("config must be a JSON object")
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(raw.get(k), dict):
                raw[k].update(v)
            else:
                raw[k] = v
        base = Path(path).resolve().parent
    if seed is not None:
        raw["seed"] = seed
    if not isinstance(raw.get("seed"), int) or isinstance(raw.get("seed"), bool):
        raise input_error("config needs an integer 'seed'")
    return RunConfig(raw["seed"], Path(out), base, raw)


# ---------------------------------------------------------------------------
# serialization helpers
# ---------------------------------------------------------------------------

def _num(v) -> str:
    return format(float(v), ".17g")


def to_json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, np.generic):
            return o.item()
        raise TypeError(f"not serializable: {type(o).__name__}")
    return json.dumps(obj, indent=1, allow_nan=False, default=default) + "\n"


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _read_json(path: Path, what: str):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise input_error(f"{what} not found: {path}") from None
    except (OSError, json.JSONDecodeError) as exc:
        raise input_error(f"cannot read {what} {path}: {exc}") from None


def write_outputs(out: Path, files: dict[str, str]) -> list[Path]:
    """Write every file to a temporary name first, then rename them all into place."""
    out.mkdir(parents=True, exist_ok=True)
    umask = os.umask(0)
    os.umask(umask)
    staged = []
    try:
        for name, text in files.items():
            fd, tmp = tempfile.mkstemp(dir=out, prefix=f".{name}.", suffix=".tmp")
            staged.append((tmp, out / name))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
            os.chmod(tmp, 0o666 & ~umask)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, final in staged:
        os.replace(tmp, final)
    return [final for _, final in staged]


# ---------------------------------------------------------------------------
# loaders
# ---------------------------------------------------------------------------

def _load_dataset(cfg: RunConfig) -> data.SequenceDataset:
    path = cfg.path("dataset", "dataset.csv")
    try:
        return data.read_dataset_csv(path)
    except FileNotFoundError:
        raise input_error(f"dataset not found: {path}") from None
    except (OSError, data.DatasetError) as exc:
        raise input_error(f"dataset {path}: {exc}") from None


def _load_folds(cfg: RunConfig, dataset: data.SequenceDataset) -> data.FoldSpec:
    path = cfg.path("folds", "folds.json")
    d = _read_json(path, "fold file")
    try:
        folds = data.FoldSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise input_error(f"fold file {path}: {exc}") from None
    if folds.all_ids() != sorted(int(c) for c in dataset.curve_ids):
        raise input_error(f"fold file {path} does not partition the dataset's curves")
    return folds


def _load_model(cfg: RunConfig) -> seqnet.ModelParameters:
    path = cfg.path("model", "model.json")
    d = _read_json(path, "model file")
    try:
        return seqnet.ModelParameters.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise input_error(f"model file {path}: {exc}") from None


def _load_problem(cfg: RunConfig) -> FormFindingProblem:
    path = cfg.path("problem")
    if path is None:
        return reference_problem()
    d = _read_json(path, "problem file")
    try:
        return FormFindingProblem.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise input_error(f"problem file {path}: {exc}") from None


def _load_cases(cfg: RunConfig) -> tuple:
    try:
        return tuple(frame.LoadCase(c["kind"], None if c.get("magnitude") is None else float(c["magnitude"]))
                     for c in cfg.section("analysis")["cases"])
    except (KeyError, TypeError, ValueError) as exc:
        raise input_error(f"bad analysis cases: {exc}") from None


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------

def displacement_figure(model: frame.GridModel, analysis: frame.Analysis, title: str) -> str:
    """Plan view coloured by the largest |uz| over the analysed load cases."""
    uz = np.zeros(model.n_nodes)
    for r in analysis.results.values():
        uz = np.maximum(uz, np.abs(r.displacements[:, 2]))
    edges = [(e.i, e.j) for e in model.elements]
    return svg.grid_plan(model.nodes, edges, uz, title)


def convergence_figure(history: evo.RunHistory) -> str:
    gens = [r.generation for r in history.records]
    best = history.best_so_far()
    pop = history.population_best()
    charts = []
    for k, name in enumerate(history.objective_names):
        series = [svg.Series("best so far", gens, best[:, k]),
                  svg.Series("population best", gens, pop[:, k], dashed=True)]
        if history.baseline_F is not None:
            series.append(svg.Series("baseline", [gens[0], gens[-1]], [history.baseline_F[k]] * 2, dashed=True))
        charts.append(svg.Chart(name, series, xlabel="generation"))
    return svg.panels(charts, ncols=2)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_extract(cfg: RunConfig) -> dict[str, str]:
    corpus_cfg = cfg.section("corpus")
    fold_cfg = cfg.section("folds")
    path = cfg.path("curves")
    cap = corpus_cfg.get("curvature_cap")
    if path is None:
        try:
            curves = data.synth_corpus(cfg.corpus_seed, int(corpus_cfg["n_curves"]), cap)
        except (TypeError, ValueError) as exc:
            raise input_error(f"corpus settings: {exc}") from None
        seed = cfg.corpus_seed
    else:
        try:
            curves = data.corpus_from_dict(_read_json(path, "curve file"))
        except (KeyError, TypeError, ValueError) as exc:
            raise input_error(f"curve file {path}: {exc}") from None
        seed = None
    try:
        ds = data.curves_to_dataset(curves, int(corpus_cfg["n_segments"]))
        folds = data.kfold_split(ds, [int(s) for s in fold_cfg["sizes"]], cfg.fold_seed)
    except (KeyError, TypeError, ValueError) as exc:
        raise input_error(exc) from None
    return {"corpus.json": to_json(data.corpus_to_dict(curves, seed, cap)),
            "dataset.csv": data.dataset_to_csv(ds),
            "folds.json": to_json(folds.to_dict())}


def cmd_train(cfg: RunConfig) -> dict[str, str]:
    ds = _load_dataset(cfg)
    folds = _load_folds(cfg, ds)
    try:
        model_cfg = seqnet.ModelConfig(**{"seq_len": ds.seq_len, **cfg.section("model")})
        train_cfg = seqnet.TrainConfig(**{**cfg.section("train"), "seed": cfg.train_seed})
        holdout = int(cfg.section("folds").get("holdout", -1))
    except (TypeError, ValueError) as exc:
        raise input_error(f"model/train settings: {exc}") from None
    try:
        res = seqnet.train(ds, folds, model_cfg, train_cfg, holdout=holdout)
    except (seqnet.TrainingError, seqnet.NumericError) as exc:
        raise StageError(EXIT_TRAINING, f"training failed: {exc}") from None
    except ValueError as exc:
        raise input_error(exc) from None
    epochs = np.arange(1, len(res.history) + 1)
    chart = svg.Chart("Training loss", [svg.Series("train", epochs, res.history[:, 0]),
                                        svg.Series("validation", epochs, res.history[:, 1], dashed=True)],
                      xlabel="epoch", ylabel="MSE (normalized)", log_y=True)
    summary = {"holdout": res.holdout,
               "fold_val_losses": [_finite_or_none(v) for v in res.fold_val_losses],
               "first_train_loss": float(res.history[0, 0]),
               "final_train_loss": float(res.history[-1, 0]),
               "epochs": len(res.history)}
    return {"model.json": to_json(res.params.to_dict()),
            "loss.csv": res.history_csv(),
            "loss.svg": svg.line_chart(chart),
            "training.json": to_json(summary)}


def predictions_table(params: seqnet.ModelParameters, ds: data.SequenceDataset, ids) -> list[tuple]:
    rows = []
    sub = ds.subset(ids)
    for cid, f, t in zip(sub.curve_ids, sub.features, sub.targets):
        kappa, tan = seqnet.predict_curve_properties(params, f)
        for s in range(len(f)):
            rows.append((f[s, 3], t[s, 0], kappa[s], t[s, 1], tan[s, 0], t[s, 2], tan[s, 1],
                         t[s, 3], tan[s, 2], int(cid)))
    return rows


def cmd_predict(cfg: RunConfig) -> dict[str, str]:
    params = _load_model(cfg)
    ds = _load_dataset(cfg)
    folds = _load_folds(cfg, ds)
    holdout = int(cfg.section("folds").get("holdout", -1))
    if not folds.folds:
        raise input_error("fold file has no folds")
    test_ids = list(folds.folds[holdout % len(folds.folds)])
    if not test_ids:
        raise input_error("test fold is empty; nothing to predict")
    try:
        rows = predictions_table(params, ds, test_ids)
    except seqnet.NumericError as exc:
        raise StageError(EXIT_TRAINING, f"prediction failed: {exc}") from None
    except ValueError as exc:
        raise input_error(f"model does not fit the dataset: {exc}") from None
    lines = [",".join(PREDICTION_COLUMNS)]
    lines += [",".join([*(_num(v) for v in r[:-1]), str(r[-1])]) for r in rows]
    arr = np.array([r[:-1] for r in rows])
    idx = np.arange(len(rows))
    charts = []
    for k, name in enumerate(("curvature", "tangent x", "tangent y", "tangent z")):
        charts.append(svg.Chart(name, [svg.Series("actual", idx, arr[:, 1 + 2 * k], markers=True),
                                       svg.Series("predicted", idx, arr[:, 2 + 2 * k], dashed=True)],
                                xlabel="test sample"))
    err = np.abs(arr[:, 2::2] - arr[:, 1::2])
    metrics = {"test_curves": [int(c) for c in test_ids],
               "mae": dict(zip(("curvature", "tx", "ty", "tz"), err.mean(axis=0).tolist())),
               "curvature_std": float(ds.targets[..., 0].std())}
    return {"predictions.csv": "\n".join(lines) + "\n",
            "predictions.svg": svg.panels(charts, ncols=2),
            "metrics.json": to_json(metrics)}


def _analysis_document(model: frame.GridModel, res: frame.Analysis) -> dict:
    return {"model": model.to_dict(), "analysis": res.to_dict()}


def read_analysis(text: str) -> tuple[frame.GridModel, dict[str, frame.AnalysisResult]]:
    """Parse and validate an ``analysis.json`` document."""
    d = json.loads(text)
    model = frame.GridModel.from_dict(d["model"])
    cases = {k: frame.AnalysisResult.from_dict(v) for k, v in d["analysis"]["cases"].items()}
    for r in cases.values():
        if r.displacements.shape != (model.n_nodes, 6) or r.forces.shape != (model.n_dofs,):
            raise ValueError("analysis arrays do not match the model")
    return model, cases


def cmd_analyze(cfg: RunConfig) -> dict[str, str]:
    cases = _load_cases(cfg)
    path = cfg.path("structure")
    if path is None:
        problem = reference_problem()
        try:
            _, model = problem.model(problem.baseline)
        except ValueError as exc:
            raise StageError(EXIT_ANALYSIS, f"reference model: {exc}") from None
    else:
        try:
            model = frame.GridModel.from_dict(_read_json(path, "structure file"))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, StageError):
                raise
            raise input_error(f"structure file {path}: {exc}") from None
    try:
        res = frame.analyze(model, cases)
    except frame.FrameError as exc:
        raise StageError(EXIT_ANALYSIS, f"analysis failed: {exc}") from None
    return {"analysis.json": to_json(_analysis_document(model, res)),
            "displacement.svg": displacement_figure(model, res, "Vertical displacement |uz|")}


def best_compromise(F) -> int:
    """Index of the member with the smallest sum of range-normalized objectives."""
    F = np.asarray(F, dtype=float)
    lo, hi = F.min(axis=0), F.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return int(np.argmin(((F - lo) / span).sum(axis=1)))


def cmd_optimize(cfg: RunConfig) -> dict[str, str]:
    problem = _load_problem(cfg)
    try:
        ga = evo.GAConfig(**{**cfg.section("ga"), "seed": cfg.ga_seed})
    except (TypeError, ValueError) as exc:
        raise input_error(f"ga settings: {exc}") from None
    try:
        history = evo.run(problem, ga)
    except evo.OptimizationError as exc:
        raise StageError(EXIT_ANALYSIS, f"optimization failed: {exc}") from None
    k = best_compromise(history.archive_F)
    designs = {}
    for label, x in (("baseline", problem.baseline), ("best_compromise", history.archive_X[k])):
        try:
            _, model, res = problem.analyze(x)
        except ValueError as exc:
            raise StageError(EXIT_ANALYSIS, f"{label} design: {exc}") from None
        designs[label] = (x, model, res)
    report = {
        "objective_names": list(history.objective_names),
        "variable_names": list(history.variable_names),
        "generations": len(history.records),
        "evaluations": history.n_evaluations,
        "convergence": evo.convergence_report(history),
        "designs": {label: {"x": [float(v) for v in x],
                            "objectives": dict(zip(history.objective_names, map(float, res.objectives()))),
                            "max_abs_uz": res.max_uz}
                    for label, (x, _, res) in designs.items()},
    }
    _, m0, r0 = designs["baseline"]
    _, m1, r1 = designs["best_compromise"]
    return {"problem.json": to_json(problem.to_dict()),
            "history.csv": history.history_csv(),
            "population.csv": history.population_csv(),
            "archive.json": to_json(history.archive_dict()),
            "report.json": to_json(report),
            "convergence.svg": convergence_figure(history),
            "displacement_initial.svg": displacement_figure(m0, r0, "Vertical displacement |uz|"),
            "displacement_final.svg": displacement_figure(m1, r1, "Vertical displacement |uz|")}


def _read_csv(path: Path, what: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        return header, np.array([[float(v) for v in r] for r in body], dtype=float).reshape(len(body), len(header))
    except FileNotFoundError:
        raise input_error(f"{what} not found: {path}") from None
    except (OSError, IndexError, ValueError) as exc:
        raise input_error(f"cannot read {what} {path}: {exc}") from None


def cmd_report(cfg: RunConfig) -> dict[str, str]:
    """Summary of the optimization (and training, when present) recomputed from the CSV files."""
    header, hist = _read_csv(cfg.out / "history.csv", "history CSV")
    names = [h[len("best_"):] for h in header[1:]]
    series = hist[:, 1:]
    rep_path = cfg.out / "report.json"
    if rep_path.exists():
        base = _read_json(rep_path, "optimization report")["designs"]["baseline"]["objectives"]
        series = np.vstack([[base[n] for n in names], series])
    summary = {"generations": int(len(hist)), "objectives": evo.reduction_report(series, names)}
    loss_path = cfg.out / "loss.csv"
    if loss_path.exists():
        _, loss = _read_csv(loss_path, "loss CSV")
        summary["training"] = {"epochs": int(len(loss)), "first_train_loss": float(loss[0, 1]),
                               "final_train_loss": float(loss[-1, 1]),
                               "ratio": float(loss[-1, 1] / loss[0, 1])}
    buf = io.StringIO()
    buf.write(f"{'objective':<12}{'initial':>16}{'best':>16}{'reduction %':>14}\n")
    for n, r in summary["objectives"].items():
        buf.write(f"{n:<12}{r['initial']:>16.6g}{r['best']:>16.6g}{r['reduction_percent']:>14.2f}\n")
    summary["table"] = buf.getvalue()
    return {"summary.json": to_json(summary)}


COMMANDS = {"extract": cmd_extract, "train": cmd_train, "predict": cmd_predict,
            "analyze": cmd_analyze, "optimize": cmd_optimize, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gridform", description="Curve learning and grid-shell form finding pipeline.")
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--seed", type=int, help="global seed (overrides the config)")
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed, args.out)
        files = COMMANDS[args.command](cfg)
        written = write_outputs(cfg.out, files)
    except StageError as exc:
        print(f"gridform {args.command}: error: {exc}", file=sys.stderr)
        return exc.code
    for path in written:
        print(path)
    if args.command == "report":
        print(json.loads(files["summary.json"])["table"], end="")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
