"""Experiment harness: model generation, sweeps, dual-filter runs and CSV emission.

Nothing here touches the filesystem.  Reports carry their CSV/JSON payloads
as strings keyed by relative path; the CLI decides where they go.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import dual_filter as df
from .errors import AlphaOutOfRange, ValidationError
from .forward import forward_filter, predict
from .hmm import (HmmModel, alpha_for_lambda2, homotopy_transition, random_stochastic_matrix,
                  sample_path, second_eigenvalue_magnitude, validate_model)

MODES = ("single-shot", "iterative")


# --- CSV --------------------------------------------------------------------

def fmt(x) -> str:
    """17 significant digits for floats, plain text for everything else."""
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


# --- configuration --------------------------------------------------------

@dataclass
class ExperimentConfig:
    d: int = 8
    m: int = 3
    T: int = 16
    alpha: float | list = 1.0
    lambda2: float | None = None
    temperature: float = 1.0
    model_seed: int = 0
    seeds: list = field(default_factory=lambda: [0])
    mode: str = "single-shot"
    layers: int = 1
    topk: int = 10
    selected_times: list = field(default_factory=list)
    recovery: str = "adjoint"
    reduction: str = "max-abs"
    spectrum_grid: list = field(default_factory=list)

    def validate(self) -> "ExperimentConfig":
        for name in ("d", "m", "T", "layers", "topk"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be at least 1")
        for a in self.alphas() + [float(a) for a in self.spectrum_grid]:
            if not 0.0 <= a <= 1.0:
                raise AlphaOutOfRange(f"alpha {a} outside [0, 1]")
        if self.lambda2 is not None and not 0.0 <= self.lambda2 <= 1.0:
            raise ValidationError(f"lambda2 target {self.lambda2} outside [0, 1]")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        if self.recovery not in ("adjoint", "solve"):
            raise ValidationError("recovery must be 'adjoint' or 'solve'")
        if self.reduction not in df.REDUCTIONS:
            raise ValidationError(f"reduction must be one of {df.REDUCTIONS}")
        if not self.temperature > 0:
            raise ValidationError("temperature must be positive")
        if not self.seeds:
            raise ValidationError("at least one path seed is required")
        for t in self.selected_times:
            if not 1 <= int(t) <= self.T:
                raise ValidationError(f"selected time {t} outside 1..{self.T}")
        return self

    def alphas(self) -> list:
        if isinstance(self.alpha, (list, tuple)):
            return [float(a) for a in self.alpha]
        return [float(self.alpha)]

    def times(self) -> list:
        if self.selected_times:
            return [int(t) for t in self.selected_times]
        return default_times(self.T)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(data) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


def default_times(T: int, n: int = 5) -> list:
    return sorted({int(round(t)) for t in np.linspace(1, T, n)})


PRESETS = {
    "nanogpt-char": dict(d=384, m=65, T=256, alpha=1.0, temperature=1.0, model_seed=0,
                         seeds=[0], mode="iterative", layers=6),
    "lambda2-0.3": dict(d=384, m=65, T=256, lambda2=0.3, temperature=1.0, model_seed=0,
                        seeds=list(range(10)), mode="single-shot"),
    "lambda2-0.9": dict(d=384, m=65, T=256, lambda2=0.9, temperature=1.0, model_seed=0,
                        seeds=list(range(10)), mode="single-shot"),
    "alpha-sweep": dict(d=384, m=65, T=256, alpha=1.0, temperature=1.0, model_seed=0,
                        seeds=[0], mode="single-shot",
                        spectrum_grid=[round(0.1 * i, 1) for i in range(11)]),
    "small": dict(d=8, m=3, T=16, alpha=1.0, seeds=[0], mode="single-shot"),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    if name not in PRESETS:
        raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(ExperimentConfig(**PRESETS[name]), **overrides).validate()


# --- models -------------------------------------------------------------------

def stochastic_components(d: int, m: int, temperature: float, seed: int):
    """``(A_stoch, C)`` drawn from one generator, in that order."""
    rng = np.random.default_rng(seed)
    a_stoch = random_stochastic_matrix(d, d, temperature, rng)
    emission = random_stochastic_matrix(d, m + 1, temperature, rng)
    return a_stoch, emission


def build_model(d: int, m: int, alpha: float, temperature: float = 1.0, seed: int = 0,
                lambda2: float | None = None) -> HmmModel:
    """Uniform prior, homotopy transition, softmax emission.

    With ``lambda2`` set, ``alpha`` is solved for so that the transition's
    second eigenvalue has that magnitude.
    """
    a_stoch, emission = stochastic_components(d, m, temperature, seed)
    if lambda2 is not None:
        alpha = alpha_for_lambda2(lambda2, a_stoch)
    A = homotopy_transition(alpha, a_stoch)
    return validate_model(np.full(d, 1.0 / d), A, emission,
                          meta={"seed": int(seed), "alpha": float(alpha),
                                "temperature": float(temperature)})


def spectrum_table(d: int, temperature: float, seed: int, alphas, m: int = 1):
    """Rows ``(alpha, |lambda_2|)`` along the homotopy for one draw of ``A_stoch``."""
    a_stoch, _ = stochastic_components(d, m, temperature, seed)
    return [(float(a), second_eigenvalue_magnitude(homotopy_transition(a, a_stoch))[0])
            for a in alphas]


# --- single runs -------------------------------------------------------------

@dataclass
class RunResult:
    alpha: float
    seed: int
    lambda2: float
    mode: str
    tokens: np.ndarray
    reference: np.ndarray
    predictions: np.ndarray
    errors: np.ndarray
    controls: np.ndarray
    topk: list
    fallbacks: int = 0

    @property
    def mean_errors(self) -> np.ndarray:
        return self.errors.mean(axis=1)


def run_dual(model: HmmModel, tokens, mode: str = "single-shot", layers: int = 1,
             recovery: str = "adjoint", topk: int = 10, selected_times=None,
             seed: int = 0, lambda2: float | None = None) -> RunResult:
    """Forward filter as the reference, then the dual filter in the chosen mode.

    ``errors`` row 0 is the initialization (normalized emission columns);
    rows ``1..L`` are the layers.  In single-shot mode there is one layer.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    tokens = np.asarray(tokens)
    T = len(tokens)
    times = default_times(T) if selected_times is None else list(selected_times)
    pi = forward_filter(model, tokens)
    reference = predict(pi[1:], model)
    if mode == "iterative":
        res = df.iterate(model, tokens, layers, reference=reference, recovery=recovery,
                         topk=topk, selected_times=times)
        rho = res.rho
        errors = res.diagnostics.errors
        controls = res.passes[-1].controls
        fallbacks = 0
    else:
        ss = df.single_shot(model, tokens)
        rho, controls, fallbacks = ss.rho, ss.controls, ss.fallbacks
        init = df.predict_all(df.init_rho(model, tokens), model)
        errors = np.stack([df.error_trace(init, reference),
                           df.error_trace(df.predict_all(rho, model), reference)])
    preds = df.predict_all(rho, model)
    tables = []
    for t in times:
        rt, rp = df.top_k(reference[t - 1], topk)
        dt, dp = df.top_k(preds[t - 1], topk)
        tables.append(df.TopK(t, rt, rp, dt, dp))
    if lambda2 is None:
        lambda2 = second_eigenvalue_magnitude(model.transition)[0]
    return RunResult(float(model.meta.get("alpha", np.nan)), int(seed), float(lambda2), mode,
                     tokens, reference, preds, errors, controls, tables, int(fallbacks))


def run_files(run: RunResult) -> dict:
    """``predictions.csv``, ``errors.csv``, ``controls.csv`` and ``topk.csv`` for one run."""
    T = len(run.tokens)
    m1 = run.predictions.shape[1]
    files = {}
    files["predictions.csv"] = csv_text(
        ["t"] + [f"p_{z}" for z in range(m1)],
        ([t] + list(run.predictions[t - 1]) for t in range(1, T + 1)))
    files["errors.csv"] = csv_text(
        ["layer"] + [f"t_{t}" for t in range(1, T + 1)],
        ([layer] + list(row) for layer, row in enumerate(run.errors)))
    rows, maxabs = df.control_trace(run.controls, "max-abs")
    _, norms = df.control_trace(run.controls, "norm")
    d = rows.shape[1]
    files["controls.csv"] = csv_text(
        ["t", "max_abs", "norm"] + [f"u_{x}" for x in range(d)],
        ([t, maxabs[t], norms[t]] + list(rows[t]) for t in range(len(rows))))
    topk_rows = []
    for tab in run.topk:
        for rank in range(len(tab.reference_tokens)):
            topk_rows.append([tab.time, rank + 1, tab.reference_tokens[rank],
                              tab.reference_probs[rank], tab.dual_tokens[rank],
                              tab.dual_probs[rank]])
    files["topk.csv"] = csv_text(
        ["t", "rank", "reference_token", "reference_prob", "dual_token", "dual_prob"], topk_rows)
    return files


# --- envelopes ----------------------------------------------------------------

def control_envelope(traces: dict):
    """Per-time ``(min, max)`` across seeds.

    ``traces`` maps seed to a per-time trace; returns ``(lo, hi, stacked)``.
    """
    if len(traces) < 2:
        raise ValidationError("an envelope needs at least two traces")
    stacked = np.stack([np.asarray(traces[s], dtype=float) for s in sorted(traces)])
    return stacked.min(axis=0), stacked.max(axis=0), stacked


# --- full experiments ---------------------------------------------------------

@dataclass
class ExperimentReport:
    config: ExperimentConfig
    runs: list
    spectrum: list
    envelopes: dict
    files: dict

    @property
    def manifest(self) -> dict:
        return json.loads(self.files["manifest.json"])


def _reduce(controls, reduction):
    _, vals = df.control_trace(controls, reduction)
    return vals if vals.ndim == 1 else np.abs(vals).max(axis=1)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    config.validate()
    targets = [("lambda2", config.lambda2)] if config.lambda2 is not None else \
        [("alpha", a) for a in config.alphas()]
    runs = []
    files = {}
    envelopes = {}
    summary = []
    for kind, value in targets:
        model = build_model(config.d, config.m, value if kind == "alpha" else 1.0,
                            config.temperature, config.model_seed,
                            lambda2=value if kind == "lambda2" else None)
        alpha = model.meta["alpha"]
        lam2 = second_eigenvalue_magnitude(model.transition)[0]
        tag = f"alpha-{alpha:.6g}" if kind == "alpha" else f"lambda2-{value:g}"
        traces = {}
        for seed in config.seeds:
            path = sample_path(model, config.T, int(seed))
            run = run_dual(model, path.tokens, config.mode, config.layers, config.recovery,
                           config.topk, config.times(), seed=int(seed), lambda2=lam2)
            runs.append(run)
            for name, text in run_files(run).items():
                files[f"{tag}/seed-{seed}/{name}"] = text
            files[f"{tag}/seed-{seed}/tokens.txt"] = "".join(f"{z}\n" for z in path.tokens)
            traces[int(seed)] = _reduce(run.controls, config.reduction)
            summary.append([tag, alpha, lam2, seed, run.fallbacks] + list(run.mean_errors))
        if len(traces) >= 2:
            lo, hi, stacked = control_envelope(traces)
            envelopes[tag] = (lo, hi, stacked)
            seeds = sorted(traces)
            files[f"{tag}/envelope.csv"] = csv_text(
                ["t", "min", "max"] + [f"seed_{s}" for s in seeds],
                ([t, lo[t], hi[t]] + list(stacked[:, t]) for t in range(len(lo))))
        files[f"{tag}/model.json"] = json.dumps(model.to_dict(), sort_keys=True) + "\n"
    n_err = max(len(r.errors) for r in runs)
    files["summary.csv"] = csv_text(
        ["target", "alpha", "lambda2", "seed", "fallbacks"]
        + [f"mean_error_layer_{i}" for i in range(n_err)], summary)
    spectrum = []
    if config.spectrum_grid:
        spectrum = spectrum_table(config.d, config.temperature, config.model_seed,
                                  config.spectrum_grid, config.m)
        files["spectrum.csv"] = csv_text(["alpha", "lambda2"], spectrum)
    cfg = asdict(config)
    files["config.json"] = json.dumps(cfg, sort_keys=True, indent=2) + "\n"
    manifest = {"config": cfg, "files": sorted(files) + ["manifest.json"]}
    files["manifest.json"] = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    return ExperimentReport(config, runs, spectrum, envelopes, files)
