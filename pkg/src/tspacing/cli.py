"""Command-line entry point: ``tspacing {test,calibrate,power,sigma-study,synth}``.

Exit status: 0 on success, 1 on usage errors, 2 on runtime failures. Logs
go to stderr; data goes to ``--out`` or, when absent, to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import SpacingError
from .models import LAMBDA0_UNIT, Observation, make_model, synthesize_observation
from .montecarlo import ExperimentConfig, default_t0, run_experiment, summary_path
from .stattest import run_test

log = logging.getLogger("tspacing")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_common(p, batch=False):
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    p.add_argument("--config", help="JSON file with defaults for any flag")
    p.add_argument("--model", choices=["tensor", "twospiked", "superres"])
    p.add_argument("--n", type=int, help="ambient dimension (tensor models)")
    p.add_argument("--k", type=int, help="tensor order (tensor models)")
    p.add_argument("--f", type=int, help="cut-off frequency (super-resolution)")
    p.add_argument("--sigma", type=float, help="noise level")
    p.add_argument("--seed", type=int, help="64-bit seed")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--starts", type=int, help="random starts per search")
    p.add_argument("--grad-tol", dest="grad_tol", type=float)
    p.add_argument("--pole-radius", dest="pole_radius", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    if batch:
        p.add_argument("--replicas", type=int)
        p.add_argument("--gamma", type=float, nargs="+", help="signal levels")
        p.add_argument("--sigma-known", dest="sigma_known", action=argparse.BooleanOptionalAction,
                       default=None, help="compute the known-sigma spacing p-value too")
        p.add_argument("--random-t0", dest="random_t0", action="store_true", default=None,
                       help="draw t0 uniformly per replica instead of fixing it")
        p.add_argument("--workers", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="tspacing", description="Spacing and t-spacing tests for Gaussian fields.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("test", help="test one observation file, print a report")
    p.add_argument("input", help="observation JSON")
    _add_common(p)
    p.add_argument("--sigma-known", dest="sigma_known", action="store_true", default=None,
                   help="use the sigma stored in the observation file")

    for name, helptext in [("calibrate", "null-hypothesis batch"),
                           ("power", "batch over a gamma grid"),
                           ("sigma-study", "noise-level estimator batch")]:
        _add_common(sub.add_parser(name, help=helptext), batch=True)

    p = sub.add_parser("synth", help="write a synthetic observation")
    _add_common(p)
    p.add_argument("--gamma", type=float, nargs=1)
    p.add_argument("--lambda0", type=float, help="signal amplitude (overrides --gamma)")
    p.add_argument("--t0", type=float, nargs="+", help="true location (ambient coordinates)")
    return ap


def _settings(args) -> dict:
    """Merge ``--config`` (if any) under the explicit flags."""
    cfg = {}
    if getattr(args, "config", None):
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
        cfg = {k.replace("-", "_"): v for k, v in cfg.items()}
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "command", "verbose"):
            cfg[k] = v
    return cfg


def _model_spec(cfg) -> dict:
    kind = cfg.get("model", "tensor")
    if kind == "superres":
        return {"model": kind, "f": int(cfg.get("f", 3))}
    return {"model": kind, "n": int(cfg.get("n", 3 if kind == "tensor" else 4)), "k": int(cfg.get("k", 3))}


def _opts(cfg) -> dict:
    out = {}
    for key in ("starts", "grad_tol", "pole_radius", "max_iters"):
        if key in cfg:
            out[key] = cfg[key]
    return out


def _emit(text: str, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)
        sys.stdout.flush()


def cmd_synth(cfg) -> int:
    model = make_model(_model_spec(cfg))
    gamma = cfg.get("gamma", [0.0])
    gamma = float(gamma[0] if isinstance(gamma, list) else gamma)
    sigma = float(cfg.get("sigma", 1.0))
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.get("seed", 0))))
    t0 = np.asarray(cfg["t0"], float) if "t0" in cfg else default_t0(model)
    model.manifold.check(t0, atol=1e-9)
    obs = synthesize_observation(model, gamma, sigma, t0, rng,
                                 lambda0=cfg.get("lambda0", LAMBDA0_UNIT * gamma * sigma))
    _emit(json.dumps(obs.to_json(), indent=2) + "\n", cfg.get("out"))
    return EXIT_OK


def cmd_test(cfg) -> int:
    try:
        obs = Observation.from_json(json.loads(Path(cfg["input"]).read_text()))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"cannot read observation: {exc}") from None
    sigma = cfg.get("sigma")
    if sigma is None and cfg.get("sigma_known"):
        sigma = obs.sigma
        if sigma is None:
            raise UsageError("--sigma-known given but the file stores no sigma")
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.get("seed", 0))))
    report = run_test(obs.model, obs.payload, sigma=sigma, rng=rng, options=_opts(cfg))
    _emit(report.to_json() + "\n", cfg.get("out"))
    return EXIT_OK


def _batch_config(cfg, default_gammas, sigma_known_default=True) -> ExperimentConfig:
    gammas = cfg.get("gamma", default_gammas)
    if not isinstance(gammas, list):
        gammas = [gammas]
    return ExperimentConfig(
        model=_model_spec(cfg),
        gamma_grid=gammas,
        replicas=int(cfg.get("replicas", 1000)),
        sigma_true=float(cfg.get("sigma", 1.0)),
        sigma_known=bool(cfg.get("sigma_known", sigma_known_default)),
        seed=int(cfg.get("seed", 0)),
        fixed_t0=not cfg.get("random_t0", False),
        workers=int(cfg.get("workers", 1)),
        output=cfg.get("out"),
        **_opts(cfg),
    )


def cmd_batch(cfg, command) -> int:
    defaults = {"calibrate": [0.0], "power": [0.0, 1.0, 2.0, 3.0, 5.0], "sigma-study": [0.0, 1.0, 5.0]}
    config = _batch_config(cfg, defaults[command])

    def progress(done, total):
        if done % 1000 == 0 or done == total:
            log.info("%d/%d replicas", done, total)

    result = run_experiment(config, progress=progress)
    s = result.summary
    if command == "calibrate":
        for e in s["per_gamma"]:
            log.info("gamma=%g KS spacing=%s t-spacing=%s (threshold %.4f), failed=%d",
                     e["gamma"], e.get("ks_p_spacing"), e.get("ks_p_tspacing"),
                     e.get("ks_p_tspacing_threshold", float("nan")), e["failed"])
    if config.output:
        log.info("summary in %s", summary_path(config.output))
    else:
        # no file: CSV then summary on stdout, separated by a blank line
        data = {k: v for k, v in s.items() if k != "runtime_seconds"}
        sys.stdout.write(result.csv_text() + "\n" + json.dumps(data, indent=2, sort_keys=True) + "\n")
    failed = sum(e["failed"] for e in s["per_gamma"])
    total = sum(e["replicas"] for e in s["per_gamma"])
    if failed > 0.001 * total:
        log.error("%d of %d replicas failed", failed, total)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help (0) or usage error (1)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        if args.command == "synth":
            return cmd_synth(cfg)
        if args.command == "test":
            return cmd_test(cfg)
        return cmd_batch(cfg, args.command)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (SpacingError, ValueError) as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
