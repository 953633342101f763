"""Command-line entry point.

Settings are layered: benchmark defaults for a built-in dataset, then a
``key = value`` config file, then explicit flags. Every output is CSV with a
header; floats carry 17 significant digits; allocation and shell indices are
1-based in files.

Exit codes: 0 success, 1 usage, 2 data, 3 numeric or engine failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from .bounds import bound_report
from .datasets import BUILTIN_SIZES, benchmark_config, load_dataset, read_config
from .diffeo import h_inverse
from .engine import DPTarget, EngineConfig, estimate_shells, sample_iid
from .errors import DataError, DpiidError, InvalidInputError
from .geometry import fit_frame
from .model import HyperParams
from .postprocess import k_posterior, predictive_density
from .tmcmc import ChainOutput, TmcmcConfig, run_chain

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _opt_float(v):
    return None if str(v).lower() in ("none", "") else float(v)


def _bool(v):
    s = str(v).lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# setting name -> converter; names double as config-file keys
SETTINGS = {
    "data": str, "seed": int, "workers": int, "out": str,
    "M": int, "N": int, "s": float, "S": float, "nu0": float, "c": float,
    "a_alpha": float, "b_alpha": float, "weight_mode": str, "psi_mean": float, "psi_sd": float,
    "keep": int, "burnin": int, "thin": int, "scale": float, "acf_out": str, "warm": str,
    "nmc": int, "eta": float, "shells": int, "c1": float, "step": float, "b": _opt_float,
    "draws": int, "max_steps": int, "time_budget": float, "lazy": _bool,
    "grid_min": float, "grid_max": float, "grid_points": int, "samples": str,
    "variance_scale": float, "occupied": _bool,
}

_GENERIC = dict(M=30, N=50, s=4.0, S=2.0, c=33.3, a_alpha=2.0, b_alpha=4.0, weight_mode="fixed",
                psi_mean=0.0, psi_sd=1.0, keep=10_000, burnin=100_000, thin=10, scale=0.5 ** 0.5,
                nmc=5000, eta=1e-10, shells=10_000, c1=9.0, step=0.0005, b=None, draws=1,
                max_steps=10 ** 8, lazy=True, seed=0, workers=1, grid_points=200,
                variance_scale=1.0, occupied=False)


def _add_common(p):
    g = p.add_argument_group("common")
    g.add_argument("--data")
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--out")
    m = p.add_argument_group("model")
    for name in ("M", "N"):
        m.add_argument(f"--{name}", type=int)
    for name in ("s", "S", "nu0", "c", "a-alpha", "b-alpha", "psi-mean", "psi-sd"):
        m.add_argument(f"--{name}", type=float)
    m.add_argument("--weight-mode", choices=["fixed", "random_psi"])
    t = p.add_argument_group("tmcmc")
    t.add_argument("--keep", type=int)
    t.add_argument("--burnin", type=int)
    t.add_argument("--thin", type=int)
    t.add_argument("--scale", type=float)
    t.add_argument("--acf-out")
    t.add_argument("--warm", help="reuse a tmcmc samples CSV instead of running a chain")
    e = p.add_argument_group("engine")
    e.add_argument("--nmc", type=int)
    e.add_argument("--eta", type=float)
    e.add_argument("--shells", type=int)
    e.add_argument("--c1", type=float, help="square root of the innermost radius")
    e.add_argument("--step", type=float)
    e.add_argument("--b", type=_opt_float, help="diffeomorphism rate, or 'none'")
    e.add_argument("--draws", type=int)
    e.add_argument("--max-steps", type=int)
    e.add_argument("--time-budget", type=float)
    e.add_argument("--fixed-shells", dest="lazy", action="store_const", const=False)
    q = p.add_argument_group("post-processing")
    q.add_argument("--samples")
    q.add_argument("--grid-min", type=float)
    q.add_argument("--grid-max", type=float)
    q.add_argument("--grid-points", type=int)
    q.add_argument("--variance-scale", type=float)
    q.add_argument("--occupied", action="store_const", const=True)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dpiid", description="Exact i.i.d. sampling for truncated DP mixtures.",
                allow_abbrev=False)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    b = sub.add_parser("bound", help="truncation error bounds", allow_abbrev=False)
    b.add_argument("--M", type=int, required=True)
    b.add_argument("--N", type=int, required=True)
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--n", type=int, action="append", help="sample size; repeatable")
    b.add_argument("--out")
    for name, text in (("tmcmc", "run the additive TMCMC chain"),
                       ("estimate", "shell mass and minorization estimates"),
                       ("sample", "exact i.i.d. posterior draws"),
                       ("predict", "posterior predictive density from a samples CSV"),
                       ("report", "posterior of the number of components")):
        # suppressed defaults: only flags actually given appear, so "--b none" survives
        _add_common(sub.add_parser(name, help=text, allow_abbrev=False,
                                   argument_default=argparse.SUPPRESS))
    return p


def resolve_settings(args) -> dict:
    """Benchmark defaults, then the config file, then explicit flags."""
    st = dict(_GENERIC)
    data = getattr(args, "data", None)
    cfg = {}
    if getattr(args, "config", None):
        cfg = read_config(args.config)
        unknown = set(cfg) - set(SETTINGS)
        if unknown:
            raise InvalidInputError(f"unknown config keys: {', '.join(sorted(unknown))}")
        data = data or cfg.get("data")
    if data in BUILTIN_SIZES:
        bc = benchmark_config(data)
        hp, tm, en = bc.hp, bc.tmcmc, bc.engine
        st.update(M=hp.M, N=hp.N, s=hp.s, S=hp.S, nu0=hp.nu0, c=hp.c, a_alpha=hp.a_alpha,
                  b_alpha=hp.b_alpha, keep=tm.keep, burnin=tm.burn_in, thin=tm.thin,
                  scale=float(tm.scale), nmc=en.n_mc, eta=en.eta, shells=en.shells, c1=en.c1,
                  step=en.step, b=en.b, draws=en.draws)
    for k, v in cfg.items():
        try:
            st[k] = SETTINGS[k](v)
        except ValueError as exc:
            raise InvalidInputError(f"config key {k}: {exc}") from None
    for k in SETTINGS:
        if hasattr(args, k):
            st[k] = getattr(args, k)
    st["data"] = data
    return st


# ---------------------------------------------------------------------------- csv helpers

def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if v is None:
        return ""
    return "%.17g" % v


def write_csv(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    if path in (None, "-"):
        sys.stdout.write(buf.getvalue())
    else:
        Path(path).write_text(buf.getvalue())


def read_samples_csv(path, hp: HyperParams) -> ChainOutput:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"samples file not found: {p}")
    with p.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataError(f"{p}: no sample rows")
    header = rows[0]
    names = hp.param_names()
    alloc_names = [f"c_{j}" for j in range(1, hp.M + 1)]
    try:
        ti = [header.index(n) for n in names]
        ai = [header.index(n) for n in alloc_names]
    except ValueError as exc:
        raise DataError(f"{p}: header does not match the model ({exc})") from None
    try:
        body = np.array([[float(x) for x in r] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{p}: {exc}") from None
    alloc = body[:, ai].astype(np.int64) - 1
    if alloc.min() < 0 or alloc.max() >= hp.N:
        raise DataError(f"{p}: allocation index out of range")
    return ChainOutput(body[:, ti], alloc, float("nan"), hp)


# ---------------------------------------------------------------------------- commands

def _hp(st) -> HyperParams:
    return HyperParams(M=st["M"], N=st["N"], s=st["s"], S=st["S"], nu0=st["nu0"], c=st["c"],
                       a_alpha=st["a_alpha"], b_alpha=st["b_alpha"], weight_mode=st["weight_mode"],
                       psi_mean=st["psi_mean"], psi_sd=st["psi_sd"])


def _data(st):
    if not st.get("data"):
        raise InvalidInputError("--data is required")
    ds = load_dataset(st["data"])
    if "nu0" not in st:
        st["nu0"] = float(ds.y.mean())
    return ds


def _tm(st) -> TmcmcConfig:
    return TmcmcConfig(scale=st["scale"], burn_in=st["burnin"], thin=st["thin"], keep=st["keep"],
                       seed=st["seed"])


def _engine(st) -> EngineConfig:
    return EngineConfig(n_mc=st["nmc"], eta=st["eta"], c1=st["c1"], step=st["step"],
                        shells=st["shells"], b=st["b"], draws=st["draws"], seed=st["seed"],
                        workers=st["workers"], lazy=st["lazy"], max_steps=st["max_steps"])


def _sample_rows(hp, theta, alloc, extra=()):
    for k in range(theta.shape[0]):
        yield [*theta[k], *(alloc[k] + 1), *(e[k] for e in extra)]


def cmd_bound(args):
    ns = args.n or [None]
    rows = []
    for n in ns:
        r = bound_report(args.M, args.N, args.alpha, n)
        rows.append([r.M, r.N, r.alpha, r.exact_bound, r.approx_bound, r.n, r.traditional_bound_n])
    write_csv(args.out, ["M", "N", "alpha", "exact_bound", "approx_bound", "n", "traditional_bound"], rows)


def cmd_tmcmc(st):
    ds = _data(st)
    hp = _hp(st)
    out = run_chain(ds.y, hp, _tm(st))
    header = hp.param_names() + [f"c_{j}" for j in range(1, hp.M + 1)]
    write_csv(st.get("out"), header, _sample_rows(hp, out.theta, out.alloc))
    if out.acf:
        names = list(out.acf)
        lags = range(len(out.acf[names[0]]))
        acf_path = st.get("acf_out")
        if acf_path is None and st.get("out") not in (None, "-"):
            p = Path(st["out"])
            acf_path = str(p.with_name(p.stem + "_acf" + p.suffix))
        if acf_path is not None:
            write_csv(acf_path, ["lag"] + names, ([k] + [out.acf[n][k] for n in names] for k in lags))
    print(f"acceptance rate {out.acceptance_rate:.4f}", file=sys.stderr)


def _warm(st, ds, hp):
    if st.get("warm"):
        return read_samples_csv(st["warm"], hp)
    return run_chain(ds.y, hp, _tm(st), track=[])


def _prepare(st):
    ds = _data(st)
    hp = _hp(st)
    cfg = _engine(st)
    chain = _warm(st, ds, hp)
    frame = fit_frame(h_inverse(chain.theta, cfg.b))
    return ds, hp, cfg, DPTarget(ds.y, hp, cfg.b), frame


def cmd_estimate(st):
    _, _, cfg, target, frame = _prepare(st)
    est = estimate_shells(frame, cfg.schedule(), target, cfg)
    write_csv(st.get("out"), ["shell", "log_mass", "log_s", "log_S", "p_hat", "n_mc"],
              ([e.shell + 1, e.log_mass, e.log_s_hat, e.log_S_hat, e.p_hat, e.n_mc] for e in est))


def cmd_sample(st):
    _, hp, cfg, target, frame = _prepare(st)
    s = sample_iid(target, frame, cfg, time_budget=st.get("time_budget"))
    header = hp.param_names() + [f"c_{j}" for j in range(1, hp.M + 1)] + ["shell", "T", "rejections"]
    write_csv(st.get("out"), header,
              _sample_rows(hp, s.theta, s.alloc, (s.shell + 1, s.regen_time, s.residual_rejections)))


def _samples_for_post(st):
    # the prior location never enters the predictive or K summaries
    st.setdefault("nu0", 0.0)
    hp = _hp(st)
    if not st.get("samples"):
        raise InvalidInputError("--samples is required")
    return hp, read_samples_csv(st["samples"], hp)


def cmd_predict(st):
    hp, smp = _samples_for_post(st)
    lo, hi = st.get("grid_min"), st.get("grid_max")
    if lo is None or hi is None:
        if not st.get("data"):
            raise InvalidInputError("give --grid-min and --grid-max, or --data to derive them")
        y = load_dataset(st["data"]).y
        pad = 0.25 * (y.max() - y.min())
        lo = y.min() - pad if lo is None else lo
        hi = y.max() + pad if hi is None else hi
    if not hi > lo or st["grid_points"] < 2:
        raise InvalidInputError("need grid_max > grid_min and at least two grid points")
    pg = predictive_density(smp, hp, np.linspace(lo, hi, st["grid_points"]))
    sv = pg.scaled_variance(st["variance_scale"])
    write_csv(st.get("out"), ["x", "mean_density", "pointwise_variance", "scaled_variance"],
              zip(pg.x, pg.mean_density, pg.pointwise_variance, sv))


def cmd_report(st):
    hp, smp = _samples_for_post(st)
    kw = {}
    if st["occupied"]:
        kw = dict(theta=smp.theta, hp=hp, y=_data(st).y, occupied=True)
    table = k_posterior(smp.alloc, **kw)
    n = smp.alloc.shape[0]
    write_csv(st.get("out"), ["K", "count", "probability"],
              ([k, int(p * n), float(p)] for k, p in table.items()))


_COMMANDS = {"tmcmc": cmd_tmcmc, "estimate": cmd_estimate, "sample": cmd_sample,
             "predict": cmd_predict, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        if args.command == "bound":
            cmd_bound(args)
        else:
            st = resolve_settings(args)
            _COMMANDS[args.command](st)
    except UsageError as exc:
        print(f"dpiid: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"dpiid: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"dpiid: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (DpiidError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"dpiid: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
