"""``naf`` command line: training, exact checks, audits, protected sampling, sweeps, memorization.

Every command prints one ``naf-report/1`` JSON document on stdout.  Exit
codes: 0 success, 1 validation or usage error (nothing on stdout), 2
runtime failure (report carries the error).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .audit import (
    FloorViolated,
    alpha_floor_randomized_response,
    alpha_floor_top_p,
    dpg_check,
    kappa_sweep_exact,
    mc_naf_estimate,
    sweep,
)
from .core import NafError, RandomSource, ValidationError
from .divergence import (
    DivergenceKind,
    EnumerationTooLarge,
    naf_divergences_exact,
)
from .fixtures import duplication_fixture
from .memorization import SCHEMES, run_memorization_experiment
from .models import (
    SafeModelSet,
    load_model,
    randomized_response_wrap,
    read_corpus,
    sample_sequence,
    save_model,
    temperature_wrap,
    top_p_wrap,
    train_ngram,
)
from .protect import (
    CPDeltaModel,
    RejectionExhausted,
    cp_delta_rejection_sample,
    cp_kappa_sample,
    estimate_nu,
)

REPORT_FORMAT = "naf-report/1"


class UsageError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def _digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# Shared argument groups
# ---------------------------------------------------------------------------

def _add_models(p, model_required=True):
    p.add_argument("--model", required=model_required, help="audited model file")
    p.add_argument("--safe", action="append", default=[], help="safe model file (repeatable)")


def _add_prompt(p):
    p.add_argument("--prompt", default="", help="whitespace-separated prompt tokens")
    p.add_argument("--length", type=int, required=True, help="continuation length T")


def _add_wrappers(p):
    p.add_argument("--ensemble", choices=["min", "geo"], help="audit the ensemble of the first two safe models instead of --model")
    p.add_argument("--temperature", type=float, help="decoding temperature applied to the audited model")
    p.add_argument("--top-p", type=float, help="nucleus truncation applied to the audited model")
    p.add_argument("--rr", type=float, help="randomized-response weight applied to the audited model")
    p.add_argument("--heat-safe", action="store_true", help="apply --temperature to the safe models too")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="naf", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--timing", action="store_true", help="add wall-clock seconds to the report (breaks byte-identity)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train an n-gram model from a corpus file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--vocab-from", help="reuse the vocabulary of this model file")
    p.add_argument("--output", required=True, help="model file to write")

    p = sub.add_parser("exact", help="exact k_x by enumeration")
    _add_models(p, model_required=False)
    _add_prompt(p)
    _add_wrappers(p)
    p.add_argument("--divergence", default="max", choices=[k.value for k in DivergenceKind])
    p.add_argument("--cap", type=int, default=10**6)

    p = sub.add_parser("audit", help="Monte Carlo k_x estimate with confidence half-width")
    _add_models(p, model_required=False)
    _add_prompt(p)
    _add_wrappers(p)
    p.add_argument("--samples", type=int, required=True)
    p.add_argument("--variant", choices=["basic", "variance-reduced"], default="basic")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--alpha", help="explicit:<v> | top-p:<p> | rr:<lambda>")
    p.add_argument("--divergence", default="kl", choices=[k.value for k in DivergenceKind])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("protect", help="protected sampling and certification")
    psub = p.add_subparsers(dest="action", required=True, parser_class=_Parser)
    ps = psub.add_parser("sample", help="draw one protected sample")
    _add_models(ps, model_required=False)
    _add_prompt(ps)
    ps.add_argument("--mode", required=True, choices=["cp-kappa", "cp-delta-min", "cp-delta-geo", "cp-delta-reject"])
    ps.add_argument("--kappa", type=float, default=0.0)
    ps.add_argument("--divergence", default="max", choices=[k.value for k in DivergenceKind])
    ps.add_argument("--max-attempts", type=int, default=1000)
    ps.add_argument("--fixed-index", action="store_true", help="cp-delta-reject: draw the proposing model once per call")
    ps.add_argument("--kl-rule", choices=["threshold", "capped"], default="threshold")
    ps.add_argument("--seed", type=int, default=0)
    pc = psub.add_parser("certify", help="estimate the acceptance probability and the implied bound")
    _add_models(pc)
    _add_prompt(pc)
    pc.add_argument("--kappa", type=float, required=True)
    pc.add_argument("--samples", type=int, required=True)
    pc.add_argument("--level", type=float, default=0.95)
    pc.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="audit across a parameter grid")
    _add_models(p, model_required=False)
    _add_prompt(p)
    p.add_argument("--ensemble", choices=["min", "geo"])
    p.add_argument("--param", required=True, choices=["temperature", "top-p", "rr", "kappa"])
    p.add_argument("--grid", required=True, help="comma-separated values")
    p.add_argument("--heat-safe", action="store_true", help="temperature sweeps: heat the safe models too")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--variant", choices=["basic", "variance-reduced"], default="basic")
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cap", type=int, default=10**6)

    p = sub.add_parser("memorize", help="duplication memorization experiment")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--corpus", help="corpus file (one document per line)")
    src.add_argument("--fixture", action="store_true", help="use the built-in synthetic corpus for --seed")
    p.add_argument("--units", help="comma-separated document indices to duplicate")
    p.add_argument("--num-units", type=int, default=20, help="with --corpus and no --units: pick this many by seed")
    p.add_argument("--times", type=int, default=40)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--prompt-len", type=int, default=10)
    p.add_argument("--gen-len", type=int, default=20)
    p.add_argument("--schemes", default=",".join(SCHEMES))
    p.add_argument("--kappa", type=float, default=5.0)
    p.add_argument("--decoding", choices=["greedy", "sample"], default="greedy")
    p.add_argument("--max-attempts", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("dpg", help="symmetrized exact divergence between two models")
    p.add_argument("--model-a", required=True)
    p.add_argument("--model-b", required=True)
    _add_prompt(p)
    p.add_argument("--divergence", default="max", choices=[k.value for k in DivergenceKind])
    p.add_argument("--cap", type=int, default=10**6)
    return parser


# ---------------------------------------------------------------------------
# Loading and validation (all of it happens before any computation)
# ---------------------------------------------------------------------------

class _Inputs:
    def __init__(self):
        self.digests: dict[str, str] = {}

    def model(self, path):
        m = load_model(path)
        self.digests[str(path)] = _digest(path)
        return m

    def corpus(self, path, vocab=None):
        c = read_corpus(path, vocab)
        self.digests[str(path)] = _digest(path)
        return c


def _load_audit_models(args, inputs: _Inputs, need_wrappers=True):
    safe_models = [inputs.model(path) for path in args.safe]
    if not safe_models:
        raise UsageError("at least one --safe model is required")
    safe = SafeModelSet.of(*safe_models)
    ensemble = getattr(args, "ensemble", None)
    if ensemble:
        if len(safe_models) < 2:
            raise UsageError("--ensemble needs two --safe models")
        p = CPDeltaModel(safe_models[0], safe_models[1], "max" if ensemble == "min" else "kl")
    elif args.model:
        p = inputs.model(args.model)
    else:
        raise UsageError("give --model or --ensemble")
    if p.vocab != safe.vocab:
        raise ValidationError("audited and safe models must share a vocabulary")
    if need_wrappers:
        p, safe = _apply_wrappers(p, safe, args)
    return p, safe


def _apply_wrappers(p, safe, args):
    if args.temperature is not None:
        p = temperature_wrap(p, args.temperature)
        if args.heat_safe:
            tau = args.temperature
            safe = safe.map(lambda m: temperature_wrap(m, tau))
    if args.top_p is not None:
        p = top_p_wrap(p, args.top_p)
    if args.rr is not None:
        p = randomized_response_wrap(p, args.rr)
    return p, safe


def _prompt(vocab, args):
    ids = vocab.encode(args.prompt)
    if args.length < 0:
        raise UsageError("--length must be >= 0")
    return ids


def _parse_alpha(spec, k, t):
    if spec is None:
        return None, None
    kind, _, value = spec.partition(":")
    try:
        v = float(value)
    except ValueError:
        raise UsageError(f"bad --alpha value {spec!r}") from None
    if kind == "explicit":
        return v, "explicit"
    if kind == "top-p":
        return alpha_floor_top_p(k, t, v), f"top-p:{v!r} (K={k}, T={t})"
    if kind == "rr":
        return alpha_floor_randomized_response(k, t, v), f"rr:{v!r} (K={k}, T={t})"
    raise UsageError(f"--alpha must be explicit:<v>, top-p:<p> or rr:<lambda>, got {spec!r}")


def _grid(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad --grid {text!r}") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_train(args, inputs):
    vocab = inputs.model(args.vocab_from).vocab if args.vocab_from else None
    corpus = inputs.corpus(args.corpus, vocab)
    m = train_ngram(corpus, args.order, args.smoothing)
    save_model(m, args.output)
    return {
        "output": args.output,
        "output_sha256": _digest(args.output),
        "vocab_size": len(m.vocab),
        "order": m.order,
        "contexts": len(m.table),
        "documents": len(corpus),
    }


def cmd_exact(args, inputs):
    p, safe = _load_audit_models(args, inputs)
    prompt = _prompt(p.vocab, args)
    per_model = naf_divergences_exact(p, safe, prompt, args.length, args.divergence, args.cap)
    return {"divergence": args.divergence, "k_x": max(per_model.values()), "per_model": per_model}


def cmd_audit(args, inputs):
    if args.divergence != "kl":
        raise UsageError("audit estimates the kl divergence only; use `exact` for the others")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    p, safe = _load_audit_models(args, inputs)
    prompt = _prompt(p.vocab, args)
    alpha, source = _parse_alpha(args.alpha, len(p.vocab), args.length)
    est = mc_naf_estimate(
        p, safe, prompt, args.length, args.samples, args.variant,
        RandomSource(args.seed, "audit"), delta=args.delta if alpha is not None else None,
        alpha=alpha, alpha_source=source, workers=args.workers,
    )
    return {"estimate": est.to_dict()}


def cmd_protect_sample(args, inputs):
    r = RandomSource(args.seed, "protect-sample")
    if args.mode == "cp-kappa":
        p, safe = _load_audit_models(args, inputs, need_wrappers=False)
        prompt = _prompt(p.vocab, args)
        y, attempts = cp_kappa_sample(p, safe, args.kappa, prompt, args.length, r, args.max_attempts)
        vocab = p.vocab
    else:
        safe_models = [inputs.model(path) for path in args.safe]
        if len(safe_models) != 2:
            raise UsageError(f"--mode {args.mode} needs exactly two --safe models")
        q1, q2 = safe_models
        if q1.vocab != q2.vocab:
            raise ValidationError("safe models must share a vocabulary")
        vocab = q1.vocab
        prompt = _prompt(vocab, args)
        if args.mode == "cp-delta-reject":
            if args.divergence not in ("max", "kl"):
                raise UsageError("cp-delta-reject supports --divergence max or kl")
            y, attempts = cp_delta_rejection_sample(
                q1, q2, args.divergence, args.kappa, prompt, args.length, r, args.max_attempts,
                redraw_index=not args.fixed_index, kl_rule=args.kl_rule,
            )
        else:
            kind = "max" if args.mode == "cp-delta-min" else "kl"
            y, _ = sample_sequence(CPDeltaModel(q1, q2, kind), prompt, args.length, r)
            attempts = 1
    return {"mode": args.mode, "tokens": vocab.decode(y), "ids": list(y), "attempts": attempts}


def cmd_protect_certify(args, inputs):
    p, safe = _load_audit_models(args, inputs, need_wrappers=False)
    prompt = _prompt(p.vocab, args)
    cert = estimate_nu(p, safe, args.kappa, prompt, args.length, args.samples, args.level,
                       RandomSource(args.seed, "protect-certify"))
    return {"certificate": cert.to_dict()}


def cmd_sweep(args, inputs):
    args.temperature = args.top_p = args.rr = None
    p, safe = _load_audit_models(args, inputs, need_wrappers=False)
    prompt = _prompt(p.vocab, args)
    grid = _grid(args.grid)
    if not grid:
        raise UsageError("--grid is empty")
    if args.param == "kappa":
        points = kappa_sweep_exact(p, safe, grid, prompt, args.length, args.cap)
        return {"param": "kappa", "divergence": "max", "points": [vars(pt) for pt in points]}

    def build(value):
        if args.param == "temperature":
            if args.heat_safe:
                return temperature_wrap(p, value), safe.map(lambda m: temperature_wrap(m, value))
            return temperature_wrap(p, value)
        if args.param == "top-p":
            return top_p_wrap(p, value)
        return randomized_response_wrap(p, value)

    results = sweep(build, grid, safe, prompt, args.length, args.samples,
                    RandomSource(args.seed, "sweep"), args.variant)
    return {
        "param": args.param,
        "heat_safe": bool(args.heat_safe),
        "points": [{"value": v, "estimate": est.to_dict()} for v, est in results],
    }


def cmd_memorize(args, inputs):
    r = RandomSource(args.seed, "memorize")
    if args.fixture:
        corpus, units = duplication_fixture(args.seed)
    else:
        corpus = inputs.corpus(args.corpus)
        units = None
    if args.units:
        try:
            units = [int(u) for u in args.units.split(",") if u.strip()]
        except ValueError:
            raise UsageError(f"bad --units {args.units!r}") from None
    elif units is None:
        pick = np.random.Generator(np.random.Philox(args.seed))
        units = sorted(int(u) for u in pick.choice(len(corpus), min(args.num_units, len(corpus)), replace=False))
    schemes = [s for s in args.schemes.split(",") if s]
    report = run_memorization_experiment(
        corpus, units, args.times, args.order, args.smoothing, args.prompt_len, args.gen_len,
        schemes, r, kappa=args.kappa, decoding=args.decoding, max_attempts=args.max_attempts,
    )
    return {"memorization": report.to_dict(corpus.vocab)}


def cmd_dpg(args, inputs):
    a = inputs.model(args.model_a)
    b = inputs.model(args.model_b)
    if a.vocab != b.vocab:
        raise ValidationError("models must share a vocabulary")
    prompt = _prompt(a.vocab, args)
    eps = dpg_check(a, b, prompt, args.length, args.divergence, args.cap)
    return {"divergence": args.divergence, "epsilon": eps}


COMMANDS = {
    "train": cmd_train,
    "exact": cmd_exact,
    "audit": cmd_audit,
    ("protect", "sample"): cmd_protect_sample,
    ("protect", "certify"): cmd_protect_certify,
    "sweep": cmd_sweep,
    "memorize": cmd_memorize,
    "dpg": cmd_dpg,
}

RUNTIME_ERRORS = (RejectionExhausted, EnumerationTooLarge, FloorViolated, NafError)


def dispatch(argv, stdout=None, stderr=None) -> int:
    """Run one command; returns the exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    started = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        key = (args.command, args.action) if args.command == "protect" else args.command
        invocation = {k: v for k, v in sorted(vars(args).items()) if k != "timing"}
        inputs = _Inputs()
        report = {
            "format": REPORT_FORMAT,
            "version": __version__,
            "command": " ".join(key) if isinstance(key, tuple) else key,
            "invocation": {"argv": list(argv), "flags": invocation},
        }
        try:
            report["result"] = COMMANDS[key](args, inputs)
            code = 0
        except ValidationError:
            raise
        except RUNTIME_ERRORS as e:
            report["error"] = {"type": type(e).__name__, "message": str(e)}
            code = 2
        report["inputs"] = dict(sorted(inputs.digests.items()))
        if args.timing:
            report["wall_clock_seconds"] = time.perf_counter() - started
    except (ValidationError, ValueError, OSError) as e:
        print(f"naf: error: {e}", file=stderr)
        return 1
    stdout.write(json.dumps(_jsonable(report), indent=2, sort_keys=True, ensure_ascii=False) + "\n")
    if code == 2:
        print(f"naf: {report['error']['type']}: {report['error']['message']}", file=stderr)
    return code


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)
