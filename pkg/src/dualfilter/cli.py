"""Command-line interface.

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
Outputs go under ``--out``, defaulting to ``$DUALFILTER_OUT`` (or
``./dualfilter-out``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import NumericalError, ValidationError
from .experiments import (PRESETS, ExperimentConfig, build_model, csv_text, preset,
                          run_dual, run_experiment, run_files, spectrum_table)
from .forward import forward_filter, predict
from .hmm import HmmModel, eigen_spectrum, sample_path, second_eigenvalue_magnitude
from .theorems import run_suite

OUT_ENV = "DUALFILTER_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors, not argparse's default status 2
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "dualfilter-out"))


def _out_dir(args) -> Path:
    out = Path(args.out) if args.out else default_out()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, files: dict):
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def load_model(path) -> HmmModel:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from exc
    return HmmModel.from_dict(data)


def load_tokens(path) -> np.ndarray:
    """One integer per line, or a JSON array."""
    text = Path(path).read_text().strip()
    if text.startswith("["):
        try:
            vals = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not a valid JSON array ({exc})") from exc
    else:
        vals = []
        for i, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            try:
                vals.append(int(line))
            except ValueError as exc:
                raise ValidationError(f"{path}:{i}: not an integer: {line!r}") from exc
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals):
        raise ValidationError(f"{path}: tokens must be integers")
    return np.asarray(vals, dtype=np.intp)


# --- subcommands --------------------------------------------------------------

def cmd_gen_model(args):
    model = build_model(args.d, args.m, args.alpha, args.temperature, args.seed,
                        lambda2=args.lambda2)
    out = Path(args.output) if args.output else _out_dir(args) / "model.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")
    lam2 = second_eigenvalue_magnitude(model.transition)[0]
    print(f"wrote {out} (d={args.d}, m={args.m}, alpha={model.meta['alpha']:.6g}, "
          f"|lambda2|={lam2:.6g})")


def cmd_sample(args):
    model = load_model(args.model)
    path = sample_path(model, args.T, args.seed)
    out = Path(args.output) if args.output else _out_dir(args) / "tokens.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(f"{z}\n" for z in path.tokens))
    if args.states:
        Path(args.states).write_text("".join(f"{x}\n" for x in path.states))
    print(f"wrote {len(path.tokens)} tokens to {out}")


def cmd_filter(args):
    model = load_model(args.model)
    tokens = load_tokens(args.tokens)
    pi = forward_filter(model, tokens)
    preds = predict(pi[1:], model)
    out = _out_dir(args)
    _write(out, {
        "posterior.csv": csv_text(["t"] + [f"x_{x}" for x in range(model.num_states)],
                                  ([t] + list(row) for t, row in enumerate(pi))),
        "predictions.csv": csv_text(["t"] + [f"p_{z}" for z in range(model.vocab_size)],
                                    ([t] + list(row) for t, row in enumerate(preds, start=1))),
    })
    print(f"filtered {len(tokens)} tokens; wrote posterior.csv and predictions.csv to {out}")


def cmd_dual_filter(args):
    model = load_model(args.model)
    tokens = load_tokens(args.tokens)
    if len(tokens) == 0:
        raise ValidationError("token sequence is empty")
    run = run_dual(model, tokens, args.mode, args.layers, args.recovery, args.topk,
                   args.times, seed=args.seed)
    out = _out_dir(args)
    _write(out, run_files(run))
    final = run.errors[-1]
    print(f"{args.mode}: layers={len(run.errors) - 1} max error={final.max():.3e} "
          f"mean error={final.mean():.3e}; wrote {out}")


def cmd_verify(args):
    results = run_suite(args.seed, args.scale)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  cases  max deviation  tolerance  result")
    for r in results:
        print(f"{r.name:<{width}}  {r.cases:5d}  {r.max_deviation:13.3e}  {r.tolerance:9.0e}  "
              f"{'pass' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_spectrum(args):
    out = _out_dir(args)
    files = {}
    if args.model:
        model = load_model(args.model)
        eig = eigen_spectrum(model.transition)
        files["eigenvalues.csv"] = csv_text(["real", "imag", "abs"],
                                            ([e.real, e.imag, abs(e)] for e in eig))
        print(f"|lambda2| = {second_eigenvalue_magnitude(model.transition)[0]:.17g}")
    else:
        alphas = args.alphas if args.alphas else list(np.linspace(0.0, 1.0, args.steps))
        rows = spectrum_table(args.d, args.temperature, args.seed, alphas)
        files["spectrum.csv"] = csv_text(["alpha", "lambda2"], rows)
        for a, lam in rows:
            print(f"alpha={a:.4f}  |lambda2|={lam:.12f}")
    _write(out, files)


def cmd_experiment(args):
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{args.config}: not valid JSON ({exc})") from exc
        base = ExperimentConfig.from_dict(data)
    else:
        base = preset(args.preset)
    over = {k: v for k, v in dict(d=args.d, m=args.m, T=args.T, alpha=args.alpha,
                                   lambda2=args.lambda2, mode=args.mode, layers=args.layers,
                                   seeds=args.seeds, topk=args.topk,
                                   selected_times=args.times, recovery=args.recovery,
                                   temperature=args.temperature).items() if v is not None}
    if args.seed is not None:
        over["model_seed"] = args.seed
    if "alpha" in over:
        over["alpha"] = over["alpha"][0] if len(over["alpha"]) == 1 else over["alpha"]
        over.setdefault("lambda2", None)
    cfg = ExperimentConfig(**{**base.__dict__, **over}).validate()
    report = run_experiment(cfg)
    out = _out_dir(args)
    _write(out, report.files)
    for run in report.runs:
        errs = " ".join(f"{e:.3e}" for e in run.mean_errors)
        print(f"alpha={run.alpha:.6g} |lambda2|={run.lambda2:.6g} seed={run.seed} "
              f"mean error per layer: {errs}")
    print(f"wrote {len(report.files)} files to {out}")


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dualfilter", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seed_default=0):
        sp.add_argument("--seed", type=int, default=seed_default, help="random seed")
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dualfilter-out)")

    g = sub.add_parser("gen-model", help="random homotopy HMM as JSON")
    common(g)
    g.add_argument("--d", type=int, default=8)
    g.add_argument("--m", type=int, default=3)
    g.add_argument("--alpha", type=float, default=1.0)
    g.add_argument("--lambda2", type=float, help="solve for alpha giving this |lambda2|")
    g.add_argument("--temperature", type=float, default=1.0)
    g.add_argument("-o", "--output", help="model path (default OUT/model.json)")
    g.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("sample", help="sample a token sequence from a model")
    common(s)
    s.add_argument("--model", required=True)
    s.add_argument("--T", type=int, required=True)
    s.add_argument("-o", "--output", help="token path (default OUT/tokens.txt)")
    s.add_argument("--states", help="also write the hidden states here")
    s.set_defaults(func=cmd_sample)

    f = sub.add_parser("filter", help="forward filter: posteriors and predictions")
    common(f)
    f.add_argument("--model", required=True)
    f.add_argument("--tokens", required=True)
    f.set_defaults(func=cmd_filter)

    d = sub.add_parser("dual-filter", help="dual filter against the forward filter")
    common(d)
    d.add_argument("--model", required=True)
    d.add_argument("--tokens", required=True)
    d.add_argument("--mode", choices=("single-shot", "iterative"), default="single-shot")
    d.add_argument("--layers", type=int, default=1)
    d.add_argument("--recovery", choices=("adjoint", "solve"), default="adjoint")
    d.add_argument("--topk", type=int, default=10)
    d.add_argument("--times", type=int, nargs="+", help="times for the top-k table")
    d.set_defaults(func=cmd_dual_filter)

    v = sub.add_parser("verify", help="run the identity checks on random small models")
    common(v)
    v.add_argument("--scale", type=float, default=1.0, help="multiply the case counts")
    v.set_defaults(func=cmd_verify)

    sp = sub.add_parser("spectrum", help="|lambda2| along the homotopy, or a model's spectrum")
    common(sp)
    sp.add_argument("--model", help="report the eigenvalues of this model instead")
    sp.add_argument("--d", type=int, default=384)
    sp.add_argument("--temperature", type=float, default=1.0)
    sp.add_argument("--alphas", type=float, nargs="+")
    sp.add_argument("--steps", type=int, default=11)
    sp.set_defaults(func=cmd_spectrum)

    e = sub.add_parser("experiment", help="run a preset or a JSON config")
    e.add_argument("--seed", type=int, help="model seed (overrides the config)")
    e.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./dualfilter-out)")
    src = e.add_mutually_exclusive_group()
    src.add_argument("--preset", choices=sorted(PRESETS), default="small")
    src.add_argument("--config", help="JSON config file; flags override it")
    e.add_argument("--d", type=int)
    e.add_argument("--m", type=int)
    e.add_argument("--T", type=int)
    e.add_argument("--alpha", type=float, nargs="+")
    e.add_argument("--lambda2", type=float)
    e.add_argument("--temperature", type=float)
    e.add_argument("--mode", choices=("single-shot", "iterative"))
    e.add_argument("--layers", type=int)
    e.add_argument("--seeds", type=int, nargs="+", help="sample path seeds")
    e.add_argument("--topk", type=int)
    e.add_argument("--times", type=int, nargs="+")
    e.add_argument("--recovery", choices=("adjoint", "solve"))
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        status = args.func(args)
    except (ValidationError, ValueError, TypeError) as exc:
        # ragged or mistyped JSON surfaces as plain ValueError/TypeError from numpy
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK if status is None else status


if __name__ == "__main__":
    sys.exit(main())
