"""Batch driver: config file, cache lifecycle, subcommands, reports.

Precedence for every setting is flags > QDL_CACHE_DIR (cache path only)
> config file > built-in defaults.  Exit codes: 0 success, 1 a verified
inequality failed (witness printed), 2 usage or configuration trouble.
"""

from __future__ import annotations

import argparse
import math
import os
import random
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

from . import figures
from .arith import sieve_family
from .errors import (CacheFormatError, ConfigError, CoverageError,
                     DomainError, ResourceError)
from .lvalues import FamilyCache, sweep_to_cache
from .machinery import (HeuristicConfig, MomentParameters, custom_blocks,
                        dirichlet_expansion, ell_sequence, evaluate_expansion,
                        pointwise_rhs_family, prime_block_sum, truncated_exp,
                        verify_e_lemmas)
from .moments import (averaged_bound_check, distribution_report, holder_variant,
                      moment_sum, smoothed_char_sum, twisted_second_moment)
from .reports import write_json_object, write_reports
from .smoothing import smoothing_weight


@dataclass(frozen=True)
class RunConfig:
    """Resolved settings; every field's default is the documented one."""

    cache_path: str = "qdlab.cache"
    threads: int = 1
    seed: int = 1
    tol: float = 1e-9       # per-L-value sweep tolerance
    slack: float = 1e-9     # relative slack for inequality checks
    X: float = 1e5
    x_grid: tuple = ()
    k: tuple = (0.0, 1.0, 2.0)
    n: float = 2.0
    mode: str = "paper"
    ells: tuple = ()
    boundaries: tuple = ()
    out: str = "csv"
    report_dir: str = "reports"
    figures: bool = True
    weighting: str = "sharp"


_KINDS = {
    "cache_path": "str", "threads": "int", "seed": "int", "tol": "float",
    "slack": "float", "X": "float", "n": "float", "x_grid": "float_list",
    "k": "float_list", "ells": "int_list", "boundaries": "float_list",
    "mode": "str", "out": "str", "report_dir": "str", "figures": "bool",
    "weighting": "str",
}

_CHOICES = {
    "mode": ("paper", "custom"),
    "out": ("csv", "json"),
    "weighting": ("sharp", "smooth"),
}


def _split_list(rhs: str) -> list[str]:
    return [p for chunk in rhs.split(",") for p in chunk.split()]


def _convert(key: str, rhs: str, line_no: int):
    kind = _KINDS[key]
    try:
        if kind == "int":
            return int(rhs, 10)
        if kind == "float":
            return float(rhs)
        if kind == "bool":
            low = rhs.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(rhs)
        if kind == "int_list":
            return tuple(int(p, 10) for p in _split_list(rhs))
        if kind == "float_list":
            return tuple(float(p) for p in _split_list(rhs))
    except ValueError:
        wanted = {"int": "an integer", "float": "a number",
                  "bool": "a boolean", "int_list": "a list of integers",
                  "float_list": "a list of numbers"}[kind]
        raise ConfigError(
            f"config key {key!r} expects {wanted}, got {rhs!r}",
            line_no) from None
    return rhs  # str


def _validate(key: str, value, line_no: int):
    if key == "threads" and value < 1:
        raise ConfigError("threads must be >= 1", line_no)
    if key == "seed" and not 0 <= value < 2 ** 64:
        raise ConfigError("seed must fit in 64 unsigned bits", line_no)
    if key in ("tol", "slack") and not value > 0:
        raise ConfigError(f"{key} must be positive", line_no)
    choices = _CHOICES.get(key)
    if choices and value not in choices:
        raise ConfigError(
            f"config key {key!r} must be one of {', '.join(choices)}", line_no)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Line-oriented `key = value` grammar; # comments; later keys win."""
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"expected 'key = value', got {line!r}", line_no)
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if key not in _KINDS:
            raise ConfigError(f"unknown config key {key!r}", line_no)
        value = _convert(key, rhs, line_no)
        _validate(key, value, line_no)
        values[key] = value
    return replace(base or RunConfig(), **values)


def resolve_config(args) -> RunConfig:
    """Apply the documented precedence to produce the effective config."""
    cfg = RunConfig()
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            text = Path(config_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        cfg = parse_config(text, base=cfg)
    env_dir = os.environ.get("QDL_CACHE_DIR")
    if env_dir:
        cfg = replace(cfg, cache_path=str(
            Path(env_dir) / Path(cfg.cache_path).name))
    overrides = {}
    for flag, field in (("cache", "cache_path"), ("threads", "threads"),
                        ("seed", "seed"), ("tol", "tol"), ("slack", "slack"),
                        ("out", "out"), ("report_dir", "report_dir")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[field] = v
    if getattr(args, "no_figures", False):
        overrides["figures"] = False
    if overrides:
        if "threads" in overrides and overrides["threads"] < 1:
            raise ConfigError("threads must be >= 1")
        cfg = replace(cfg, **overrides)
    return cfg


# --------------------------------------------------------------- helpers


def _pick(flag, fallback):
    return fallback if flag is None else flag


def _scalar_k(args, cfg) -> float:
    ks = _pick(getattr(args, "k", None), None)
    if ks is None:
        return cfg.k[0] if len(cfg.k) == 1 else 0.5
    if len(ks) != 1:
        raise ConfigError("this subcommand takes a single k value")
    return ks[0]


def _block_structure(cfg: RunConfig, args):
    mode = _pick(getattr(args, "mode", None), cfg.mode)
    if mode == "custom":
        ells = _pick(getattr(args, "ells", None), cfg.ells)
        bounds = _pick(getattr(args, "boundaries", None), cfg.boundaries)
        if not ells or not bounds:
            raise ConfigError("custom mode needs --ells and --boundaries")
        return custom_blocks(ells, bounds)
    return ell_sequence(_pick(getattr(args, "X", None), cfg.X))


def _open_cache(cfg: RunConfig, lo: int | None = None, hi: int | None = None):
    path = Path(cfg.cache_path)
    if not path.exists():
        if lo is not None and hi is not None:
            raise CoverageError([(lo, hi)])
        raise ConfigError(f"cache file {path} does not exist; run sweep first")
    return FamilyCache(path)


def _report_path(cfg: RunConfig, stem: str, ext: str) -> Path:
    return Path(cfg.report_dir) / f"{stem}.{ext}"


def _emit_table(cfg: RunConfig, stem: str, reports) -> Path:
    path = write_reports(reports, _report_path(cfg, stem, cfg.out), cfg.out)
    print(f"wrote {path}")
    return path


def _witness(**kv) -> str:
    return "witness: " + " ".join(f"{k}={v}" for k, v in kv.items())


# ----------------------------------------------------------- subcommands


def cmd_sweep(cfg: RunConfig, args) -> int:
    x_max = int(_pick(args.X, cfg.X))
    t0 = time.perf_counter()
    count = sweep_to_cache(1, x_max, cfg.tol, cfg.threads, cfg.cache_path)
    dt = time.perf_counter() - t0
    print(f"swept {count} family members in [1, {x_max}] "
          f"({cfg.threads} worker(s), {dt:.1f}s) -> {cfg.cache_path}")
    return 0


def cmd_blocks(cfg: RunConfig, args) -> int:
    bs = _block_structure(cfg, args)
    print(f"mode: {bs.mode}")
    if bs.X is not None:
        print(f"X: {bs.X:g}")
    if not bs.ells:
        print("cutoff exponents: (none)")
    for l, (lo, hi) in zip(bs.ells, bs.blocks):
        note = " (empty)" if hi <= lo or hi < 3.0 else ""
        print(f"  ell = {l}: primes in ({lo:g}, {hi:g}]{note}")
    retained = sum(1 for l in bs.ells if l > bs.tail_threshold)
    print(f"blocks above tail threshold {bs.tail_threshold:g}: R = {retained}")
    f = bs.flags
    print(f"flags: monotone_decreasing={f.monotone_decreasing} "
          f"square_gap={f.square_gap} tail_condition={f.tail_condition}")
    valid = f.monotone_decreasing and f.square_gap and f.tail_condition
    print(f"asymptotic regime flags all hold: {valid}")
    return 0


def _verify_elemmas(cfg: RunConfig, args) -> int:
    trials = _pick(args.trials, 100000)
    rep = verify_e_lemmas(trials, cfg.seed)
    for cat in sorted(rep.passes):
        print(f"{cat}: {rep.passes[cat]}/{trials} pass, "
              f"{rep.failures[cat]} fail")
    write_json_object(
        {"trials": rep.trials, "seed": rep.seed, "passes": rep.passes,
         "failures": rep.failures, "witnesses": rep.witnesses, "ok": rep.ok},
        _report_path(cfg, "verify_elemmas", "json"))
    if not rep.ok:
        for cat, wit in rep.witnesses:
            print(_witness(category=cat, detail=wit))
        return 1
    return 0


def _verify_charsum(cfg: RunConfig, args) -> int:
    ns = _pick(args.n_values, (1, 9, 15))
    X = _pick(args.X, cfg.X)
    band = _pick(args.band, 0.02)
    phi = smoothing_weight()
    rows = []
    status = 0
    for n in ns:
        n = int(n)
        value, main, budget = smoothed_char_sum(n, X, phi)
        if main != 0.0:
            ok = abs(value / main - 1.0) <= band
            kind = f"ratio {value / main:.6f} vs 1 within {band:g}"
        else:
            ok = abs(value) <= budget
            kind = f"|value| {abs(value):.3f} vs budget {budget:.3f}"
        rows.append({"n": n, "X": X, "value": value, "main": main,
                     "budget": budget, "ok": ok})
        print(f"n={n}: {kind}: {'pass' if ok else 'FAIL'}")
        if not ok:
            print(_witness(n=n, X=X, value=value, main=main, budget=budget))
            status = 1
    write_json_object({"X": X, "band": band, "results": rows},
                      _report_path(cfg, "verify_charsum", "json"))
    return status


def _verify_pointwise(cfg: RunConfig, args) -> int:
    X = _pick(args.X, cfg.X)
    lo, hi = int(math.floor(X)) + 1, int(math.floor(2 * X))
    cache = _open_cache(cfg, lo, hi)
    cache.require_coverage(lo, hi)
    ds, vals, _ = cache.slice_arrays(lo, hi)
    keep = ds >= 3  # the pointwise bound divides by log d
    ds, vals = ds[keep], vals[keep]
    mp = MomentParameters(_pick(args.n, cfg.n), _scalar_k(args, cfg))
    bs = _block_structure(cfg, args)
    lhs, rhs = pointwise_rhs_family(ds, vals, mp, bs)
    bad = lhs * (1.0 - cfg.slack) > rhs
    margin = float((rhs - lhs).min()) if ds.size else 0.0
    write_json_object(
        {"X": X, "n": mp.n, "k": mp.k, "sample_count": int(ds.size),
         "violations": int(bad.sum()), "min_margin": margin},
        _report_path(cfg, "verify_pointwise", "json"))
    if bad.any():
        i = int(bad.argmax())
        print(_witness(d=int(ds[i]), n=mp.n, k=mp.k,
                       lhs=float(lhs[i]), rhs=float(rhs[i])))
        return 1
    print(f"pointwise bound holds on {ds.size} members of ({lo - 1}, {hi}] "
          f"(min margin {margin:.3e})")
    return 0


_EXPANSION_CONFIGS = (
    ((2, 2), (10.0, 30.0)),
    ((4,), (50.0,)),
    ((2, 4), (20.0, 60.0)),
)


def _verify_expansion(cfg: RunConfig, args) -> int:
    count = _pick(args.count, 100)
    mp = MomentParameters(_pick(args.n, cfg.n), _scalar_k(args, cfg))
    rng = random.Random(cfg.seed)
    pool = [int(d) for d in sieve_family(100000)]
    sample = rng.sample(pool, min(count, len(pool)))
    worst = 0.0
    checked = 0
    for ells, bounds in _EXPANSION_CONFIGS:
        bs = custom_blocks(ells, bounds)
        for j, ell in enumerate(bs.ells):
            for kind in ("B", "P_power"):
                coeffs = dirichlet_expansion(kind, mp, bs, j)
                # both routes round at the scale of the unsigned term
                # mass, so a near-cancelling block sum must not inflate
                # the measured gap
                scale = sum(abs(c) for c in coeffs.values())
                for d in sample:
                    s = prime_block_sum(d, bs.blocks[j])
                    if kind == "B":
                        want = truncated_exp(ell, mp.nk * s)
                    else:
                        want = s ** ell / math.factorial(ell)
                    got = evaluate_expansion(coeffs, d)
                    rel = abs(got - want) / max(abs(want), abs(got), scale)
                    worst = max(worst, rel)
                    checked += 1
                    if rel > 1e-10:
                        print(_witness(kind=kind, d=d, ells=ells,
                                       block=j, got=got, want=want))
                        return 1
    print(f"expansions match direct evaluation on {checked} cases "
          f"(worst relative gap {worst:.3e})")
    write_json_object(
        {"count": len(sample), "seed": cfg.seed, "checked": checked,
         "worst_relative_gap": worst, "configs": _EXPANSION_CONFIGS},
        _report_path(cfg, "verify_expansion", "json"))
    return 0


def _verify_holder(cfg: RunConfig, args) -> int:
    X = _pick(args.X, cfg.X)
    lo, hi = int(math.floor(X * 0.5)) + 1, int(math.floor(X * 2.5))
    cache = _open_cache(cfg, lo, hi)
    mp = MomentParameters(_pick(args.n, cfg.n), _scalar_k(args, cfg))
    bs = _block_structure(cfg, args)
    phi = smoothing_weight()
    rep = holder_variant(mp, bs, X, phi, cache)
    print(f"split sum {rep.s_value:.6e} <= two-factor bound "
          f"{rep.two_factor_bound:.6e}: "
          f"{'pass' if rep.two_factor_holds else 'FAIL'}")
    print(f"pointwise pair product min {rep.pointwise_min:.12f}, "
          f"violations {rep.pointwise_violations}")
    if rep.chain_m:
        print(f"{rep.chain_m}-factor chain bound {rep.chain_bound:.6e}: "
              f"{'pass' if rep.chain_holds else 'FAIL'} "
              f"(pair min {rep.chain_pointwise_min:.12f}, "
              f"violations {rep.chain_pointwise_violations})")
    write_json_object(rep, _report_path(cfg, "verify_holder", "json"))
    ok = (rep.two_factor_holds and rep.pointwise_violations == 0
          and rep.chain_holds in (None, True)
          and rep.chain_pointwise_violations in (None, 0))
    if not ok:
        print(_witness(X=X, n=mp.n, k=mp.k, s_value=rep.s_value,
                       two_factor_bound=rep.two_factor_bound,
                       chain_bound=rep.chain_bound))
        return 1
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    handlers = {"elemmas": _verify_elemmas, "charsum": _verify_charsum,
                "pointwise": _verify_pointwise, "expansion": _verify_expansion,
                "holder": _verify_holder}
    return handlers[args.what](cfg, args)


def cmd_moments(cfg: RunConfig, args) -> int:
    ks = _pick(args.k, cfg.k)
    xs = _pick(args.x_grid, None) or cfg.x_grid or (_pick(args.X, cfg.X),)
    weighting = _pick(args.weighting, cfg.weighting)
    lo = 1 if weighting == "sharp" else int(min(xs) * 0.5) + 1
    hi = int(max(xs)) if weighting == "sharp" else int(max(xs) * 2.5)
    cache = _open_cache(cfg, lo, hi)
    phi = smoothing_weight() if weighting == "smooth" else None
    reps = [moment_sum(k, x, weighting, cache, phi) for k in ks for x in xs]
    for rep in reps:
        ratio = "n/a" if rep.ratio is None else f"{rep.ratio:.4f}"
        print(f"k={rep.k:g} X={rep.X:g} {rep.weighting}: "
              f"value {rep.value:.6e}, ratio {ratio}")
    _emit_table(cfg, "moments", reps)
    if cfg.figures:
        print(f"wrote {figures.moment_figure(reps, _report_path(cfg, 'moments', 'png'))}")
    return 0


def cmd_twisted(cfg: RunConfig, args) -> int:
    ls = _pick(args.l_values, (1, 3))
    X = _pick(args.X, cfg.X)
    lo, hi = int(X * 0.5) + 1, int(X * 2.5)
    cache = _open_cache(cfg, lo, hi)
    phi = smoothing_weight()
    reps = [twisted_second_moment(int(l), X, phi, cache) for l in ls]
    for l, rep in zip(ls, reps):
        print(f"l={l}: value {rep.value:.6e}, predicted {rep.predicted_main:.6e}, "
              f"ratio {rep.ratio:.4f}")
    _emit_table(cfg, "twisted", reps)
    if cfg.figures:
        print(f"wrote {figures.ratio_figure(reps, _report_path(cfg, 'twisted', 'png'), x_values=[int(l) for l in ls], x_label='twist l')}")
    return 0


def cmd_bounds(cfg: RunConfig, args) -> int:
    which = _pick(args.which, "both")
    tags = ("prop27", "prop31") if which == "both" else (which,)
    xs = _pick(args.x_grid, None) or cfg.x_grid or (_pick(args.X, cfg.X),)
    lo, hi = int(min(xs) * 0.5) + 1, int(max(xs) * 2.5)
    cache = _open_cache(cfg, lo, hi)
    mp = MomentParameters(_pick(args.n, cfg.n), _scalar_k(args, cfg))
    bs = _block_structure(cfg, args)
    phi = smoothing_weight()
    reps = [averaged_bound_check(tag, mp, bs, x, phi, cache)
            for tag in tags for x in xs]
    for tag, rep in zip([t for t in tags for _ in xs], reps):
        print(f"{tag} X={rep.X:g}: value {rep.value:.6e}, "
              f"ratio {rep.ratio:.4f}")
    _emit_table(cfg, "bounds", reps)
    if cfg.figures:
        print(f"wrote {figures.ratio_figure(reps, _report_path(cfg, 'bounds', 'png'))}")
    return 0


def cmd_distribution(cfg: RunConfig, args) -> int:
    X = _pick(args.X, cfg.X)
    lo, hi = int(math.floor(X)) + 1, int(math.floor(2 * X))
    cache = _open_cache(cfg, lo, hi)
    proxy = HeuristicConfig(args.z) if args.z is not None else None
    rep = distribution_report(X, cache, bins=_pick(args.bins, 40),
                              proxy_cfg=proxy)
    print(f"{rep.sample_count} members, {rep.zero_count} zero values, "
          f"proxy cutoff {rep.proxy_cutoff:g}")
    print(f"sup CDF distance to normal: true {rep.ks_true_normal:.4f}, "
          f"proxy {rep.ks_proxy_normal:.4f}; true vs proxy "
          f"{rep.ks_true_proxy:.4f}")
    write_json_object(rep, _report_path(cfg, "distribution", "json"))
    print(f"wrote {_report_path(cfg, 'distribution', 'json')}")
    if cfg.figures:
        print(f"wrote {figures.distribution_figure(rep, _report_path(cfg, 'distribution', 'png'))}")
    return 0


# -------------------------------------------------------------- dispatch


def _float_list(text: str) -> tuple:
    try:
        return tuple(float(p) for p in _split_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}")


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(p, 10) for p in _split_list(text))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key = value config file")
    common.add_argument("--cache", help="L-value cache file")
    common.add_argument("--threads", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--slack", type=float)
    common.add_argument("--out", choices=("csv", "json"))
    common.add_argument("--report-dir", dest="report_dir")
    common.add_argument("--no-figures", dest="no_figures", action="store_true")

    blockish = argparse.ArgumentParser(add_help=False)
    blockish.add_argument("--mode", choices=("paper", "custom"))
    blockish.add_argument("--ells", type=_int_list)
    blockish.add_argument("--boundaries", type=_float_list)

    parser = argparse.ArgumentParser(
        prog="qdlab",
        description="Sweeps, moment sums, and inequality verification for "
                    "the quadratic-family central-value laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sweep", parents=[common],
                       help="populate the L-value cache up to X")
    p.add_argument("--X", type=float)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("blocks", parents=[common, blockish],
                       help="print a block structure and its flags")
    p.add_argument("--X", type=float)
    p.set_defaults(handler=cmd_blocks)

    p = sub.add_parser("verify", parents=[common, blockish],
                       help="run one verification suite")
    p.add_argument("what", choices=("elemmas", "charsum", "pointwise",
                                    "expansion", "holder"))
    p.add_argument("--trials", type=int)
    p.add_argument("--X", type=float)
    p.add_argument("--n", type=float)
    p.add_argument("--k", type=_float_list)
    p.add_argument("--band", type=float,
                   help="relative band for charsum square terms")
    p.add_argument("--n-values", dest="n_values", type=_int_list,
                   help="charsum twist values")
    p.add_argument("--count", type=int, help="expansion sample size")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("moments", parents=[common],
                       help="moment sums over an X grid")
    p.add_argument("--X", type=float)
    p.add_argument("--x-grid", dest="x_grid", type=_float_list)
    p.add_argument("--k", type=_float_list)
    p.add_argument("--weighting", choices=("sharp", "smooth"))
    p.set_defaults(handler=cmd_moments)

    p = sub.add_parser("twisted", parents=[common],
                       help="twisted second moments against the prediction")
    p.add_argument("--X", type=float)
    p.add_argument("--l", dest="l_values", type=_int_list)
    p.set_defaults(handler=cmd_twisted)

    p = sub.add_parser("bounds", parents=[common, blockish],
                       help="family averages of the bracketed bound sides")
    p.add_argument("--which", choices=("prop27", "prop31", "both"))
    p.add_argument("--X", type=float)
    p.add_argument("--x-grid", dest="x_grid", type=_float_list)
    p.add_argument("--n", type=float)
    p.add_argument("--k", type=_float_list)
    p.set_defaults(handler=cmd_bounds)

    p = sub.add_parser("distribution", parents=[common],
                       help="standardized log-value statistics and proxy")
    p.add_argument("--X", type=float)
    p.add_argument("--bins", type=int)
    p.add_argument("--z", type=float, help="proxy prime cutoff override")
    p.set_defaults(handler=cmd_distribution)

    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse prints its own message; normalize the exit status
        return 0 if exc.code == 0 else 2
    try:
        cfg = resolve_config(args)
        return args.handler(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except CoverageError as exc:
        print(f"cache coverage error: {exc}", file=sys.stderr)
        print("run the sweep subcommand over the missing ranges first",
              file=sys.stderr)
        return 2
    except CacheFormatError as exc:
        print(f"cache rejected: {exc}", file=sys.stderr)
        return 2
    except (DomainError, ResourceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
