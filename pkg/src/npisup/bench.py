"""Method evaluation, the downstream subcarrier-prediction task, and CSV reports."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import linest, npinet
from .errors import ConfigError, DependencyError, FormatError
from .gridsim import Dataset, resimulate
from .npinet import PilotEstimate, PipelineBundle, SlotBatch

METHODS = ("ls-li", "lmmse", "transformer", "proposed", "perfect")
SINR_GRID_DB = (0.0, 4.0, 8.0, 12.0, 16.0)
NP_GRID = (4, 8, 16)
RT_GRID = (0.25, 0.5, 0.8)
RIDGE_LAMBDAS = (1e-4, 1e-2, 1.0)
REPORT_COLUMNS = ("method", "sinr_db", "N_p", "R_t", "metric_name", "value", "slot_count", "seed")
CI_Z = 1.96

METRIC_RECON = "nmse_recon"
METRIC_DOWNSTREAM = "nmse_downstream"
STDERR_SUFFIX = "_se"


@dataclass
class EvalRow:
    method: str
    sinr_db: float
    N_p: int
    R_t: float
    metric_name: str
    value: float
    slot_count: int
    seed: int

    def cells(self) -> list[str]:
        return [self.method, repr(float(self.sinr_db)), str(self.N_p), repr(float(self.R_t)), self.metric_name,
                repr(float(self.value)), str(self.slot_count), str(self.seed)]


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    def add(self, row: EvalRow) -> None:
        if row.method not in METHODS:
            raise ConfigError(f"unknown method {row.method!r}")
        if not math.isfinite(row.value):
            raise FormatError(f"non-finite value for {row.method} {row.metric_name}")
        self.rows.append(row)

    def add_samples(self, method, sinr_db, N_p, R_t, metric, samples, seed) -> None:
        """Mean and standard error rows for per-slot ``samples``."""
        samples = np.asarray(samples, float)
        n = samples.size
        se = float(samples.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        self.add(EvalRow(method, sinr_db, N_p, R_t, metric, float(samples.mean()), n, seed))
        self.add(EvalRow(method, sinr_db, N_p, R_t, metric + STDERR_SUFFIX, se, n, seed))

    def value(self, method, metric=METRIC_RECON, **where) -> float:
        hits = [r for r in self.rows if r.method == method and r.metric_name == metric
                and all(getattr(r, k) == v for k, v in where.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {method} {metric} {where}")
        return hits[0].value

    def write(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow(r.cells())

    @classmethod
    def read(cls, path) -> "EvalReport":
        with open(path, encoding="utf-8", newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header is None or tuple(header) != REPORT_COLUMNS:
                raise FormatError(f"{path}: expected header {','.join(REPORT_COLUMNS)}")
            rep = cls()
            for cells in reader:
                m, s, n_p, r_t, metric, v, count, seed = cells
                rep.add(EvalRow(m, float(s), int(n_p), float(r_t), metric, float(v), int(count), int(seed)))
        return rep

    def extend(self, other: "EvalReport") -> None:
        self.rows.extend(other.rows)


# -- CSI recovery per method -------------------------------------------------------


def recover(method: str, ds: Dataset, bundle: PipelineBundle, sinr_db=None, sinr_source: str = "estimator"):
    """Full in-band CSI ``(n, L, K, M)`` recovered by ``method`` from the slots of ``ds``.

    ``sinr_db`` is the operating SINR assumed by LMMSE; the proposed method
    takes its SINR input from ``sinr_source``.
    """
    cfg, pattern = ds.config, ds.pattern
    batch = SlotBatch.from_dataset(ds)
    if method == "perfect":
        _require(bundle, "baseline", method)
        truth = PilotEstimate(ds.pilot_channels().astype(complex), pattern)
        return npinet.complete_csi(truth, bundle.perfect_net, cfg.L, cfg.K)
    est = linest.ls_estimate(batch.x_p, batch.y_p, pattern)
    if method == "ls-li":
        return linest.linear_interpolate(est, cfg.L, cfg.K)
    if method == "lmmse":
        rho = bundle.lmmse_rho if bundle is not None and bundle.lmmse_rho else linest.fit_exponential_correlation(cfg)
        sinr = ds.sinr_db if sinr_db is None else np.full(len(ds), float(sinr_db))
        return linest.lmmse_estimate(est, rho[0], rho[1], 10.0 ** (-np.asarray(sinr) / 10.0), cfg.L, cfg.K)
    if method == "transformer":
        _require(bundle, "baseline", method)
        return npinet.transformer_baseline(est, bundle.transformer_net, bundle.transformer_head, cfg.L, cfg.K,
                                           bundle.sizes.pos_dim)
    if method == "proposed":
        _require(bundle, "npi2", method)
        return npinet.run_pipeline_batch(batch, bundle, sinr_source)
    raise ConfigError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def _require(bundle, phase, method):
    if bundle is None or phase not in bundle.phases_done:
        raise DependencyError(phase, f"method {method!r} needs trained phase {phase!r}")


def in_band_truth(ds: Dataset) -> np.ndarray:
    return ds.h[:, :, : ds.config.K, :].astype(complex)


def evaluate(test: Dataset, bundle: PipelineBundle | None, methods=METHODS, sinr_grid=SINR_GRID_DB,
             seed: int = 0, sinr_source: str = "estimator") -> EvalReport:
    """Reconstruction NMSE per method and SINR over ``test`` regenerated at each grid point."""
    rep = EvalReport()
    for s in sinr_grid:
        ds = resimulate(test, float(s))
        truth = in_band_truth(ds)
        for m in methods:
            per = linest.nmse_per_slot(recover(m, ds, bundle, s, sinr_source), truth)
            rep.add_samples(m, s, 0, 0.0, METRIC_RECON, per, seed)
    return rep


# -- downstream prediction -----------------------------------------------------------


@dataclass(frozen=True)
class DownstreamTask:
    N_p: int
    R_t: float
    lambdas: tuple[float, ...] = RIDGE_LAMBDAS
    val_fraction: float = 0.2

    def validate(self, K_ext: int) -> None:
        if not 1 <= self.N_p <= K_ext:
            raise ConfigError(f"N_p must be in [1, {K_ext}], got {self.N_p}")
        if not 0 < self.R_t < 1:
            raise ConfigError(f"R_t must be in (0, 1), got {self.R_t}")


def _antenna_rows(grid: np.ndarray) -> np.ndarray:
    """``(n, L, K, M)`` -> symbol-averaged real rows ``(n, M, 2K)``."""
    return npinet.c2r(grid.mean(axis=1).transpose(0, 2, 1))


def ridge_fit(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Closed-form ridge with an unpenalized bias column; returns ``(d + 1, out)`` weights."""
    Xb = np.hstack([X, np.ones((len(X), 1))])
    reg = lam * np.eye(Xb.shape[1])
    reg[-1, -1] = 0.0
    return np.linalg.solve(Xb.T @ Xb + reg, Xb.T @ Y)


def ridge_predict(W: np.ndarray, X: np.ndarray) -> np.ndarray:
    return X @ W[:-1] + W[-1]


def _slot_nmse(pred, target):
    """Per-slot NMSE over ``(n, M, 2N_p)`` real rows."""
    return np.sum((pred - target) ** 2, axis=(1, 2)) / np.sum(target**2, axis=(1, 2))


def downstream_split(n: int, R_t: float) -> tuple[np.ndarray, np.ndarray]:
    n_train = int(round(R_t * n))
    if n_train < 2 or n_train >= n:
        raise ConfigError(f"R_t={R_t} leaves no usable train/test split of {n} slots")
    return np.arange(n_train), np.arange(n_train, n)


def run_downstream(recovered: np.ndarray, truth_full: np.ndarray, K: int, task: DownstreamTask,
                   return_samples: bool = False):
    """Ridge prediction of ``N_p`` extension subcarriers from recovered in-band CSI.

    ``recovered`` is ``(n, L, K, M)``; ``truth_full`` holds the true channel over
    the full ``(L, K + K_ext)`` grid. Each antenna gets its own regressor. The
    first ``R_t`` fraction of slots trains it; its tail ``val_fraction`` picks
    lambda before refitting on all training slots. The remaining slots are the
    test set.
    """
    task.validate(truth_full.shape[2] - K)
    X = _antenna_rows(recovered)
    Y = _antenna_rows(truth_full[:, :, K:K + task.N_p, :])
    tr, te = downstream_split(len(X), task.R_t)
    n_val = max(1, int(round(task.val_fraction * len(tr))))
    fit_idx, val_idx = tr[:-n_val], tr[-n_val:]
    pred = np.empty_like(Y[te])
    for m in range(X.shape[1]):
        best = None
        for lam in task.lambdas:
            W = ridge_fit(X[fit_idx, m], Y[fit_idx, m], lam)
            err = float(np.mean((ridge_predict(W, X[val_idx, m]) - Y[val_idx, m]) ** 2))
            if best is None or err < best[0]:
                best = (err, lam)
        pred[:, m] = ridge_predict(ridge_fit(X[tr, m], Y[tr, m], best[1]), X[te, m])
    per = _slot_nmse(pred, Y[te])
    return per if return_samples else float(per.mean())


def downstream_pool(ds: Dataset) -> Dataset:
    """Slots never seen by pre-training: the downstream-train split followed by the test split."""
    idx = np.concatenate([ds.split_indices("downstream_train"), ds.split_indices("test")])
    return ds.subset(idx, "test")


def evaluate_downstream(pool: Dataset, bundle: PipelineBundle | None, methods=METHODS, sinr_db: float = 8.0,
                        np_grid=NP_GRID, rt_grid=RT_GRID, fixed_np: int = 16, fixed_rt: float = 0.5,
                        seed: int = 0, sinr_source: str = "estimator") -> EvalReport:
    """Downstream NMSE over the N_p sweep (at ``fixed_rt``) and the R_t sweep (at ``fixed_np``)."""
    ds = resimulate(pool, float(sinr_db))
    truth = ds.h.astype(complex)
    K = ds.config.K
    rep = EvalReport()
    points = [(n, fixed_rt) for n in np_grid] + [(fixed_np, r) for r in rt_grid if (fixed_np, r) not in
                                                 [(n, fixed_rt) for n in np_grid]]
    for m in methods:
        rec = recover(m, ds, bundle, sinr_db, sinr_source)
        for n_p, r_t in points:
            per = run_downstream(rec, truth, K, DownstreamTask(n_p, r_t), return_samples=True)
            rep.add_samples(m, sinr_db, n_p, r_t, METRIC_DOWNSTREAM, per, seed)
    return rep


# -- reports and trend checks ---------------------------------------------------------

AXES = {"sinr": "sinr_db", "np": "N_p", "rt": "R_t"}


@dataclass
class AxisSeries:
    method: str
    x: list[float]
    value: list[float]
    ci95: list[float]


def axis_series(rep: EvalReport, axis: str) -> list[AxisSeries]:
    """Series along one figure axis. sinr uses reconstruction rows; np and rt use downstream rows
    at the other axis' most common value."""
    key = AXES[axis]
    metric = METRIC_RECON if axis == "sinr" else METRIC_DOWNSTREAM
    rows = [r for r in rep.rows if r.metric_name == metric]
    if axis != "sinr" and rows:
        other = "R_t" if axis == "np" else "N_p"
        vals = [getattr(r, other) for r in rows]
        mode = max(sorted(set(vals)), key=vals.count)
        rows = [r for r in rows if getattr(r, other) == mode]
    se = {(r.method, r.sinr_db, r.N_p, r.R_t): r.value for r in rep.rows if r.metric_name == metric + STDERR_SUFFIX}
    out = []
    for m in [m for m in METHODS if any(r.method == m for r in rows)]:
        mine = sorted((r for r in rows if r.method == m), key=lambda r: getattr(r, key))
        out.append(AxisSeries(m, [float(getattr(r, key)) for r in mine], [r.value for r in mine],
                              [CI_Z * se.get((r.method, r.sinr_db, r.N_p, r.R_t), 0.0) for r in mine]))
    return out


def write_axis_csv(series: list[AxisSeries], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["method", "x", "value", "ci95"])
        for s in series:
            for x, v, c in zip(s.x, s.value, s.ci95):
                w.writerow([s.method, repr(x), repr(v), repr(c)])


@dataclass
class TrendCheck:
    name: str
    passed: bool
    detail: str


def _monotone(v, strict: bool, increasing: bool) -> bool:
    d = np.diff(np.asarray(v, float))
    if not increasing:
        d = -d
    return bool(np.all(d > 0) if strict else np.all(d >= 0))


def trend_checks(rep: EvalReport, fixed_sinr: float = 8.0) -> list[TrendCheck]:
    """Qualitative trend and ordering checks over whatever axes the report contains.

    perfect-CSI does not depend on SINR (its input is the true pilot channel),
    so along the SINR axis it is required to be constant; every other method
    must strictly improve.
    """
    out = []
    for s in axis_series(rep, "sinr"):
        if len(s.x) < 2:
            continue
        if s.method == "perfect":
            ok = bool(np.all(np.asarray(s.value) == s.value[0]))
            out.append(TrendCheck(f"sinr/{s.method}", ok, "constant (SINR-independent input)"))
        else:
            out.append(TrendCheck(f"sinr/{s.method}", _monotone(s.value, True, False), "strictly decreasing"))
    sinr = {s.method: s for s in axis_series(rep, "sinr")}
    if fixed_sinr in sinr.get("proposed", AxisSeries("", [], [], [])).x:
        def at(m):
            ser = sinr[m]
            i = ser.x.index(fixed_sinr)
            return ser.value[i], ser.ci95[i]

        chain = [m for m in ("perfect", "proposed", "transformer") if m in sinr]
        classic = [m for m in ("lmmse", "ls-li") if m in sinr]
        vals = [at(m)[0] for m in chain] + ([min(at(m)[0] for m in classic)] if classic else [])
        out.append(TrendCheck(f"order@{fixed_sinr:g}dB", _monotone(vals, True, True),
                              " < ".join(chain + (["min(" + ",".join(classic) + ")"] if classic else []))))
        if "ls-li" in sinr:
            (p, pc), (l, lc) = at("proposed"), at("ls-li")
            out.append(TrendCheck(f"ci_gap@{fixed_sinr:g}dB", p + pc < l - lc, "proposed and ls-li 95% CIs disjoint"))
    for s in axis_series(rep, "np"):
        if len(s.x) >= 2:
            out.append(TrendCheck(f"np/{s.method}", _monotone(s.value, False, True), "non-decreasing"))
    np_series = {s.method: s for s in axis_series(rep, "np")}
    if "proposed" in np_series and "ls-li" in np_series:
        ok = all(a < b for a, b in zip(np_series["proposed"].value, np_series["ls-li"].value))
        out.append(TrendCheck("np/proposed<ls-li", ok, "proposed below ls-li at every N_p"))
    rt = {s.method: s for s in axis_series(rep, "rt")}
    for s in rt.values():
        if len(s.x) >= 2:
            out.append(TrendCheck(f"rt/{s.method}", _monotone(s.value, False, False), "non-increasing"))
    if "proposed" in rt and "ls-li" in rt:
        p, l = rt["proposed"], rt["ls-li"]
        ok = p.value[0] < l.value[-1]
        out.append(TrendCheck("rt/proposed@min<ls-li@max", ok,
                              f"proposed at R_t={p.x[0]:g} below ls-li at R_t={l.x[-1]:g}"))
    return out


def write_report(rep: EvalReport, out_dir) -> tuple[list[Path], list[TrendCheck], str]:
    """Per-axis CSVs plus a summary; returns (written files, checks, summary text)."""
    if not rep.rows:
        raise ConfigError("empty report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for axis in AXES:
        series = axis_series(rep, axis)
        if series:
            p = out_dir / f"{axis}.csv"
            write_axis_csv(series, p)
            written.append(p)
    checks = trend_checks(rep)
    lines = [f"{'PASS' if c.passed else 'FAIL'} {c.name}: {c.detail}" for c in checks]
    summary = "\n".join(lines) + "\n"
    (out_dir / "summary.txt").write_text(summary, encoding="utf-8")
    return written, checks, summary
