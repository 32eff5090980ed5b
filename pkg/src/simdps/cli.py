"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (bad audio, config or
geometry), 3 external denoiser failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from . import _kernels
from .baselines import gap_metrics
from .config import METHODS, load_config
from .dsp import resample
from .errors import DataError, ExternalDenoiserError, SimDPSError
from .external import ExternalDenoiser
from .pipeline import layout_for, make_denoiser, report_json, run_inpaint, synth_demo_track
from .priors import GaussianPrior, fit_gaussian_demo
from .search import build_corpus, search
from .signal import AudioSignal, GapMask, apply_mask
from .wavio import load_wav, save_wav

log = logging.getLogger("simdps")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_EXTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _config_args(p):
    p.add_argument("--config", help="JSON config file or a previous run report")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key (dotted path, JSON value); repeatable")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--denoiser", help="gaussian-demo, gmm-demo, stdio:<cmd> or tcp:host:port")
    p.add_argument("--seed", type=int)


def _resolve_config(args):
    extra = list(args.overrides)
    for key in ("method", "denoiser", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            extra.append(f"{key}={json.dumps(val)}")
    return load_config(args.config, extra)


def _load(path):
    try:
        return load_wav(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from None


def _save(signal, path, fmt):
    try:
        save_wav(signal, path, fmt)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def _write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc.strerror or exc}") from None


def _emit(obj):
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def cmd_inpaint(args):
    cfg = _resolve_config(args)
    track = _load(args.input)
    corpus = [_load(p) for p in args.corpus] or None
    reference = _load(args.reference) if args.reference else None
    res = run_inpaint(cfg, track, corpus, reference)
    _save(res.output, args.output, cfg.output_format)
    report_path = args.report or os.path.splitext(args.output)[0] + ".json"
    _write_text(report_path, report_json(res.report))
    log.info("wrote %s and %s", args.output, report_path)
    return EXIT_OK


def cmd_search(args):
    cfg = _resolve_config(args)
    track = _load(args.input)
    if track.sample_rate != cfg.working_rate:
        track = resample(track, cfg.working_rate)
    layout = layout_for(cfg, len(track))
    excerpt = track.samples[layout.excerpt_start:layout.excerpt_stop]
    obs = apply_mask(AudioSignal(excerpt, track.sample_rate), layout.mask)
    corpus = [_load(p) for p in args.corpus]
    if not corpus:
        corpus = build_corpus(track, layout.excerpt_start, layout.excerpt_stop)
    match = search(corpus, obs, cfg.search)
    if args.guide_out:
        _save(match.guide, args.guide_out, cfg.output_format)
    _emit({"layout": layout.to_dict(), "candidate": match.summary(), "search": cfg.search.to_dict()})
    return EXIT_OK


def _check_denoiser(den, n, sigmas, rng, expect=None, check_vjp=True):
    checks = []
    for sigma in sigmas:
        x = rng.standard_normal(n) * np.sqrt(1.0 + sigma * sigma)
        t = time.perf_counter()
        x0 = den.denoise(x, sigma)
        elapsed = time.perf_counter() - t
        row = {"sigma": sigma, "seconds": elapsed, "finite": bool(np.all(np.isfinite(x0))),
               "shape_ok": np.shape(x0) == x.shape}
        score = (x0 - x) / (sigma * sigma)
        row["tweedie_residual"] = float(np.max(np.abs(x + sigma * sigma * score - x0)))
        if expect is not None:
            ref = expect.denoise(x, sigma)
            rel = np.abs(x0 - ref) / np.maximum(1.0, np.abs(ref))
            row["max_rel_diff_vs_expected"] = float(rel.max())
        if check_vjp and getattr(den, "has_vjp", True):
            v = rng.standard_normal(n)
            e = rng.standard_normal(n)
            h = 1e-5 * max(1.0, sigma)
            fd = (den.denoise(x + h * e, sigma) - den.denoise(x - h * e, sigma)) / (2 * h)
            lhs = float(np.dot(den.vjp(x, sigma, v), e))
            rhs = float(np.dot(v, fd))
            row["vjp_rel_error"] = abs(lhs - rhs) / max(1e-12, abs(rhs))
        checks.append(row)
    return checks


def cmd_denoise_check(args):
    rng = np.random.default_rng(args.seed)
    expect = None
    if args.expect:
        kind, _, params = args.expect.partition(":")
        if kind != "gaussian":
            raise DataError("--expect supports gaussian:MEAN:VAR")
        try:
            mean, var = (float(v) for v in params.split(":"))
        except ValueError:
            raise DataError("--expect must look like gaussian:MEAN:VAR") from None
        expect = GaussianPrior(np.array([mean]), np.array([var]))
    spec = args.denoiser
    result = {"denoiser": spec, "n": args.n, "backend": _kernels.BACKEND}
    if spec.startswith(("stdio:", "tcp:")):
        t = time.perf_counter()
        with ExternalDenoiser(spec, timeout=args.timeout) as den:
            result["handshake_seconds"] = time.perf_counter() - t
            checks = _check_denoiser(den, args.n, args.sigmas, rng, expect)
    else:
        training = [_load(args.input)] if args.input else [synth_demo_track(16000.0, 4.0)]
        cfg = load_config(None, [f"denoiser={json.dumps(spec)}"])
        den = make_denoiser(cfg, training)
        if spec == "gaussian-demo" and expect is None:
            expect = fit_gaussian_demo(training)
        checks = _check_denoiser(den, args.n, args.sigmas, rng, expect)
    ok = all(c["finite"] and c["shape_ok"] and c["tweedie_residual"] < 1e-9 for c in checks)
    ok = ok and all(c.get("max_rel_diff_vs_expected", 0.0) < args.tolerance for c in checks)
    ok = ok and all(c.get("vjp_rel_error", 0.0) < 1e-4 for c in checks)
    result.update(checks=checks, ok=ok)
    _emit(result)
    if ok:
        return EXIT_OK
    return EXIT_EXTERNAL if spec.startswith(("stdio:", "tcp:")) else EXIT_DATA


def cmd_evaluate(args):
    rec = _load(args.input)
    ref = _load(args.reference)
    if rec.sample_rate != ref.sample_rate:
        raise DataError(f"sample rates differ: {rec.sample_rate} vs {ref.sample_rate}")
    n = len(rec)
    if args.report:
        with open(args.report, encoding="utf-8") as fh:
            lay = json.load(fh)["layout"]
        mask = GapMask(n, lay["t_s"], lay["t_e"])
    else:
        g = int(round(args.gap_duration * rec.sample_rate))
        t_s = (n - g) // 2 if args.gap_start is None else int(round(args.gap_start * rec.sample_rate))
        mask = GapMask(n, t_s, t_s + g - 1)
    metrics = gap_metrics(rec, ref, mask)
    _emit({"t_s": mask.t_s, "t_e": mask.t_e, "metrics": metrics})
    return EXIT_OK


def cmd_demo(args):
    os.makedirs(args.out, exist_ok=True)
    track = synth_demo_track(args.rate, args.seconds, seed=args.seed)
    base = [f"working_rate={args.rate}", f"seed={args.seed}"] + list(args.overrides)
    summary = {"rate": args.rate, "seed": args.seed, "methods": {}}
    timing = {}
    _save(track, os.path.join(args.out, "track.wav"), "float32")
    for method in args.methods:
        cfg = load_config(args.config, base + [f"method={json.dumps(method)}"])
        log.info("demo: running %s", method)
        res = run_inpaint(cfg, track)
        if method == args.methods[0]:
            _save(res.observation.y, os.path.join(args.out, "observed.wav"), "float32")
        _save(res.output, os.path.join(args.out, f"{method}.wav"), cfg.output_format)
        # wall-clock numbers go to their own file so repeated demos match byte for byte
        timing[method] = res.report.pop("timing")
        _write_text(os.path.join(args.out, f"{method}.json"), report_json(res.report))
        summary["methods"][method] = res.report["metrics"]
    _write_text(os.path.join(args.out, "summary.json"), json.dumps(summary, indent=2) + "\n")
    _write_text(os.path.join(args.out, "timing.json"), json.dumps(timing, indent=2) + "\n")
    for method, m in summary["methods"].items():
        print(f"{method:9s} gap_rmse={m['gap_rmse']:.4f} boundary_jump={m['boundary_jump']:.4f}")
    return EXIT_OK


def build_parser():
    ap = _Parser(prog="simdps", description="Similarity-guided diffusion inpainting of long audio gaps.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inpaint", help="reconstruct the gap of an excerpt")
    p.add_argument("input", help="input WAV (the excerpt, or a longer track)")
    p.add_argument("-o", "--output", required=True, help="output WAV")
    p.add_argument("--corpus", nargs="*", default=[], help="corpus WAVs (default: rest of the input)")
    p.add_argument("--reference", help="clean excerpt for metrics")
    p.add_argument("--report", help="report path (default: output with .json)")
    _config_args(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("search", help="retrieve the most similar corpus segment")
    p.add_argument("input")
    p.add_argument("--corpus", nargs="*", default=[])
    p.add_argument("--guide-out", help="write the aligned guide to this WAV")
    _config_args(p)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("denoise-check", help="Tweedie, VJP and protocol diagnostics for a denoiser")
    p.add_argument("--denoiser", default="gmm-demo")
    p.add_argument("--input", help="WAV to fit a demo denoiser on")
    p.add_argument("--n", type=int, default=1024)
    p.add_argument("--sigmas", type=float, nargs="+", default=[8.0, 1.0, 0.1, 0.01])
    p.add_argument("--expect", help="compare against gaussian:MEAN:VAR")
    p.add_argument("--tolerance", type=float, default=1e-6)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_denoise_check)

    p = sub.add_parser("evaluate", help="gap metrics of a reconstruction against a reference")
    p.add_argument("input", help="reconstructed WAV")
    p.add_argument("--reference", required=True)
    p.add_argument("--report", help="take the gap position from a run report")
    p.add_argument("--gap-start", type=float, help="seconds (default: centred)")
    p.add_argument("--gap-duration", type=float, default=2.0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("demo", help="synthesize a repetitive track and run every method")
    p.add_argument("--out", default="simdps-demo")
    p.add_argument("--rate", type=float, default=44100.0)
    p.add_argument("--seconds", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--methods", nargs="+", choices=METHODS, default=list(METHODS))
    p.add_argument("--config")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.set_defaults(func=cmd_demo)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ExternalDenoiserError as exc:
        print(f"simdps: external denoiser failure: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (SimDPSError, OSError, KeyError, json.JSONDecodeError) as exc:
        where = getattr(exc, "stage", None)
        prefix = f"[{where}] " if where else ""
        print(f"simdps: error: {prefix}{exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
