"""``npisup`` command-line harness.

Exit codes: 0 ok, 2 usage/configuration, 3 I/O or file format, 4 trend check failed.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench, npinet, sinrest
from .errors import ConfigError, DependencyError, FormatError, InputShapeError, NpiError
from .gridsim import Dataset, SimConfig, generate_dataset
from .neural import TrainConfig

log = logging.getLogger("npisup")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_TREND = 0, 2, 3, 4
CONFIG_SCHEMA = 1
DATASET_FILE = "dataset.npis"


class UsageError(Exception):
    pass


# -- config file ------------------------------------------------------------------
#
# [npisup]        schema = 1
# [sim]           any SimConfig field; tuples as comma lists
# [train.PHASE]   any TrainConfig field, PHASE in refine|npi1|npi2|sinr|baseline


def _parse_value(raw: str, default):
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return tuple(kind(p.strip()) for p in raw.split(",") if p.strip())
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes")
    return type(default)(raw.strip())


def _section_to(cls, section, base=None):
    base = base or cls()
    fields = {f.name: getattr(base, f.name) for f in dataclasses.fields(cls)}
    changes = {}
    for key, raw in section.items():
        if key not in fields:
            raise ConfigError(f"unknown key {key!r} in [{section.name}]")
        try:
            changes[key] = _parse_value(raw, fields[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return dataclasses.replace(base, **changes)


@dataclasses.dataclass
class RunConfig:
    sim: SimConfig
    train: dict[str, TrainConfig]


def load_config(path) -> RunConfig:
    train = {p: getattr(npinet.PhaseDefaults(), p) for p in npinet.PHASES}
    if path is None:
        return RunConfig(SimConfig(), train)
    cp = configparser.ConfigParser()
    cp.optionxform = str  # field names like K_ext are case-sensitive
    try:
        with open(path, encoding="utf-8") as f:
            cp.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    schema = cp.get("npisup", "schema", fallback=str(CONFIG_SCHEMA))
    if schema != str(CONFIG_SCHEMA):
        raise ConfigError(f"{path}: unsupported config schema {schema}")
    sim = _section_to(SimConfig, cp["sim"]) if cp.has_section("sim") else SimConfig()
    for name in cp.sections():
        if name.startswith("train."):
            phase = name.split(".", 1)[1]
            if phase not in train:
                raise ConfigError(f"unknown training phase section [{name}]")
            train[phase] = _section_to(TrainConfig, cp[name], train[phase])
    return RunConfig(sim, train)


# -- helpers ------------------------------------------------------------------------


def _dataset_path(p) -> Path:
    p = Path(p)
    return p / DATASET_FILE if p.is_dir() or not p.suffix else p


def _load_dataset(p) -> Dataset:
    return Dataset.load(_dataset_path(p))


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"expected a comma-separated number list, got {text!r}") from exc


def _methods(text: str) -> list[str]:
    methods = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in methods if m not in bench.METHODS]
    if bad or not methods:
        raise UsageError(f"unknown method(s) {bad}; choose from {','.join(bench.METHODS)}")
    return methods


def _open_bundle(path, cfg: SimConfig, create: bool, seed: int = 0):
    path = Path(path)
    if (path / "manifest.ini").exists():
        return npinet.load_bundle(path, cfg)
    if not create:
        raise FormatError(f"no trained bundle at {path}")
    return npinet.build_bundle(cfg, seed=seed)


# -- subcommands ---------------------------------------------------------------------


def cmd_gen(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    rc = load_config(args.config)
    cfg = rc.sim
    if args.sinr_min is not None or args.sinr_max is not None:
        lo = cfg.sinr_range_db[0] if args.sinr_min is None else args.sinr_min
        hi = cfg.sinr_range_db[1] if args.sinr_max is None else args.sinr_max
        cfg = cfg.replace(sinr_range_db=(lo, hi))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    ds = generate_dataset(cfg, args.count, sinr_sampling=args.sinr_sampling, seed=cfg.seed,
                          fixed_sinr_db=args.fixed_sinr)
    out = _dataset_path(args.out)
    ds.save(out)
    print(f"wrote {len(ds)} slots to {out} (splits {ds.splits})")
    return EXIT_OK


def cmd_train(args) -> int:
    rc = load_config(args.config)
    ds = _load_dataset(args.data)
    cfg = ds.config
    bundle = _open_bundle(args.bundle, cfg, create=True, seed=args.seed)
    phase = args.phase
    if phase in ("npi1", "npi2"):
        bundle.require(phase)
    tc = rc.train[phase]
    if args.epochs is not None:
        tc = dataclasses.replace(tc, epochs=args.epochs)
    train = ds.split("pretrain")
    progress = (lambda e, v: log.info("%s epoch %d loss %.6g", phase, e, v))
    if phase == "refine":
        hist = npinet.train_refine(train, bundle, tc, progress)
    elif phase == "npi1":
        hist = npinet.train_step1_npi(train, bundle, tc, progress)
    elif phase == "npi2":
        hist = npinet.train_step2_joint(train, bundle, tc, progress)
    elif phase == "baseline":
        hist = npinet.train_baselines(train, bundle, tc, progress)
    else:
        model = sinrest.build_sinr_model(cfg.M, np.random.default_rng(args.seed + 101))
        hist = sinrest.train_sinr(train, model, tc, progress)
        bundle.sinr_model = model
        bundle.mark("sinr", hist)
    npinet.save_bundle(bundle, args.bundle)
    first, last = (hist[0], hist[-1]) if hist else (float("nan"), float("nan"))
    print(f"{phase}: {len(hist)} epochs, loss {first:.6g} -> {last:.6g}; saved to {args.bundle}")
    return EXIT_OK


def _maybe_bundle(path, cfg, methods):
    needs = {"transformer", "proposed", "perfect"} & set(methods)
    if not needs and (path is None or not (Path(path) / "manifest.ini").exists()):
        return None
    if path is None:
        raise UsageError(f"methods {sorted(needs)} need --bundle")
    return _open_bundle(path, cfg, create=False)


def cmd_eval(args) -> int:
    methods = _methods(args.methods)
    grid = _float_list(args.sinr_grid)
    ds = _load_dataset(args.data)
    bundle = _maybe_bundle(args.bundle, ds.config, methods)
    rep = bench.evaluate(ds.split("test"), bundle, methods, grid, seed=ds.seed, sinr_source=args.sinr_source)
    rep.write(args.out)
    for r in rep.rows:
        if r.metric_name == bench.METRIC_RECON:
            print(f"{r.method:12s} {r.sinr_db:6.1f} dB  nmse {r.value:.5g}")
    return EXIT_OK


def cmd_downstream(args) -> int:
    methods = _methods(args.methods)
    ds = _load_dataset(args.data)
    np_grid = [int(v) for v in _float_list(args.np_grid)]
    rt_grid = _float_list(args.rt_grid)
    fixed_np = min(16, ds.config.K_ext) if args.fixed_np is None else args.fixed_np
    for n in (*np_grid, fixed_np):
        if not 1 <= n <= ds.config.K_ext:
            raise UsageError(f"N_p={n} exceeds K_ext={ds.config.K_ext}")
    bundle = _maybe_bundle(args.bundle, ds.config, methods)
    rep = bench.evaluate_downstream(bench.downstream_pool(ds), bundle, methods, args.sinr, np_grid, rt_grid,
                                    fixed_np=fixed_np, seed=ds.seed, sinr_source=args.sinr_source)
    rep.write(args.out)
    for r in rep.rows:
        if r.metric_name == bench.METRIC_DOWNSTREAM:
            print(f"{r.method:12s} N_p={r.N_p:2d} R_t={r.R_t:.2f}  nmse {r.value:.5g}")
    return EXIT_OK


def cmd_report(args) -> int:
    rep = bench.EvalReport()
    for p in args.inputs:
        rep.extend(bench.EvalReport.read(p))
    if not rep.rows:
        raise UsageError("report inputs contain no rows")
    _, checks, summary = bench.write_report(rep, args.out)
    sys.stdout.write(summary)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_TREND


def cmd_gradcheck(args) -> int:
    from . import selfcheck

    results = selfcheck.gradient_suite(seeds=tuple(range(args.seeds)))
    for name, err in results:
        print(f"{'PASS' if err < selfcheck.GRAD_TOL else 'FAIL'} {name}: max rel err {err:.3g}")
    return EXIT_OK if all(err < selfcheck.GRAD_TOL for _, err in results) else EXIT_TREND


def cmd_selftest(args) -> int:
    from . import selfcheck

    results = selfcheck.algebra_suite(n=args.count)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_TREND


# -- entry point -------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="npisup", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate a labeled dataset")
    g.add_argument("--config")
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int)
    g.add_argument("--sinr-min", type=float)
    g.add_argument("--sinr-max", type=float)
    g.add_argument("--sinr-sampling", choices=("uniform", "fixed"), default="uniform")
    g.add_argument("--fixed-sinr", type=float)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="run one training phase")
    t.add_argument("phase", choices=npinet.PHASES)
    t.add_argument("--data", required=True)
    t.add_argument("--bundle", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="reconstruction NMSE versus SINR")
    e.add_argument("--data", required=True)
    e.add_argument("--bundle")
    e.add_argument("--methods", default=",".join(bench.METHODS))
    e.add_argument("--sinr-grid", default=",".join(f"{s:g}" for s in bench.SINR_GRID_DB))
    e.add_argument("--sinr-source", choices=("estimator", "label"), default="estimator")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("downstream", help="downstream subcarrier prediction over N_p and R_t")
    d.add_argument("--data", required=True)
    d.add_argument("--bundle")
    d.add_argument("--methods", default=",".join(bench.METHODS))
    d.add_argument("--sinr", type=float, default=8.0)
    d.add_argument("--np-grid", default=",".join(str(n) for n in bench.NP_GRID))
    d.add_argument("--rt-grid", default=",".join(f"{r:g}" for r in bench.RT_GRID))
    d.add_argument("--fixed-np", type=int, help="N_p held during the R_t sweep (default min(16, K_ext))")
    d.add_argument("--sinr-source", choices=("estimator", "label"), default="estimator")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_downstream)

    r = sub.add_parser("report", help="per-axis CSVs and trend checks")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)

    gc = sub.add_parser("gradcheck", help="finite-difference check of every layer and the joint graph")
    gc.add_argument("--seeds", type=int, default=3)
    gc.set_defaults(func=cmd_gradcheck)

    st = sub.add_parser("selftest", help="projection and simulator identities")
    st.add_argument("--count", type=int, default=200)
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, InputShapeError, DependencyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NpiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
