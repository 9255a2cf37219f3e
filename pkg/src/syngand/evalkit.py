"""Distribution fidelity and machine-learning-efficiency (MLE) evaluation.

The MLE experiment trains a regressor on real data alone ("Real") or on
real plus synthetic data ("Aug") and scores it on real or augmented test
sets. Regressors here are closed-form ridge and depth-1 boosted stumps (a
dependency-free stand-in for gradient-boosted trees).
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .seeding import derive_rng

log = logging.getLogger(__name__)

N_BINS = 50
METRICS = ("MSE", "MAE", "R2", "PCC")
PAIRS = ("Aug-Aug", "Aug-Real", "Real-Real")


# ---------------------------------------------------------------------------
# distribution fidelity

def hellinger(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"bin mismatch: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0) or p.sum() <= 0 or q.sum() <= 0:
        raise ValueError("histograms must be non-negative with positive mass")
    bc = np.sqrt((p / p.sum()) * (q / q.sum())).sum()
    return float(np.sqrt(min(1.0, max(0.0, 1.0 - bc))))


def shared_histograms(a, b, bins: int = N_BINS):
    """Counts of ``a`` and ``b`` on equal-width bins spanning both samples."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    return np.histogram(a, edges)[0], np.histogram(b, edges)[0], edges


def hellinger_samples(a, b, bins: int = N_BINS) -> float:
    p, q, _ = shared_histograms(a, b, bins)
    return hellinger(p, q)


@dataclass
class SummaryStats:
    real_mean: float
    real_std: float
    synth_mean: float
    synth_std: float
    mean_deviation_pct: float
    std_ratio: float


def summary_stats(real, synth) -> SummaryStats:
    """Mean/std comparison; std uses ddof=1 and ratio is real std / synth std."""
    real = np.asarray(real, dtype=np.float64)
    synth = np.asarray(synth, dtype=np.float64)
    if len(real) == 0 or len(synth) == 0:
        raise ValueError("empty input")
    rm, sm = real.mean(), synth.mean()
    rs = real.std(ddof=1) if len(real) > 1 else 0.0
    ss = synth.std(ddof=1) if len(synth) > 1 else 0.0
    dev = abs(sm - rm) / abs(rm) * 100.0 if rm != 0 else (0.0 if sm == rm else np.inf)
    ratio = rs / ss if ss > 0 else (1.0 if rs == ss else np.inf)
    return SummaryStats(float(rm), float(rs), float(sm), float(ss), float(dev), float(ratio))


# ---------------------------------------------------------------------------
# outliers and splits

def iqr_bounds(reference):
    ref = np.asarray(reference, dtype=np.float64)
    if len(ref) == 0:
        raise ValueError("empty reference")
    q1, q3 = np.quantile(ref, [0.25, 0.75], method="linear")
    iqr = q3 - q1
    return float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr)


def iqr_filter(values, reference):
    """Bounds from the reference (type-7 quartiles) and a keep-mask for ``values``."""
    lo, hi = iqr_bounds(reference)
    v = np.asarray(values, dtype=np.float64)
    return (lo, hi), (v >= lo) & (v <= hi)


@dataclass
class SplitPlan:
    A_r: np.ndarray      # indices into the real records
    B_r: np.ndarray
    A_s: np.ndarray      # indices into the synthetic records
    B_s: np.ndarray
    dropped_s: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def train_test(self):
        """{name: ((real idx, synth idx) train, (real idx, synth idx) test)}."""
        return {
            "Real": (self.A_r, np.zeros(0, np.int64)),
            "Aug": (self.A_r, self.A_s),
            "test_Real": (self.B_r, np.zeros(0, np.int64)),
            "test_Aug": (self.B_r, self.B_s),
        }


def _cut(n, frac):
    return int(np.floor(n * frac + 0.5))


def make_splits(n_real: int, n_synth: int, rng, real_keys=None, synth_keys=None) -> SplitPlan:
    """Real 50/50 and synthetic 85/15 index splits.

    With identity keys supplied, synthetic records whose key also occurs on
    the opposite side of the real split are dropped so no molecule is both
    trained and tested on.
    """
    if n_real < 4:
        raise ValueError(f"need at least 4 real records, got {n_real}")
    if n_synth < 1:
        raise ValueError("need at least 1 synthetic record")
    pr = rng.permutation(n_real)
    ps = rng.permutation(n_synth)
    k_r = _cut(n_real, 0.5)
    k_s = _cut(n_synth, 0.85)
    plan = SplitPlan(np.sort(pr[:k_r]), np.sort(pr[k_r:]), np.sort(ps[:k_s]), np.sort(ps[k_s:]))
    if real_keys is None or synth_keys is None:
        return plan
    train_r = {real_keys[i] for i in plan.A_r}
    test_r = {real_keys[i] for i in plan.B_r}
    test_s = {synth_keys[i] for i in plan.B_s}
    keep_A = [i for i in plan.A_s if synth_keys[i] not in test_r and synth_keys[i] not in test_s]
    train_keys = train_r | {synth_keys[i] for i in keep_A}
    keep_B = [i for i in plan.B_s if synth_keys[i] not in train_keys]
    dropped = sorted(set(plan.A_s) - set(keep_A) | set(plan.B_s) - set(keep_B))
    return SplitPlan(plan.A_r, plan.B_r, np.array(keep_A, np.int64), np.array(keep_B, np.int64),
                     np.array(dropped, np.int64))


def leakage(plan: SplitPlan, real_keys, synth_keys):
    """Keys that appear in both a train and a test set of either experiment."""
    def keys(r, s):
        return {real_keys[i] for i in r} | {synth_keys[i] for i in s}

    real_train, real_test = keys(plan.A_r, []), keys(plan.B_r, [])
    aug_train, aug_test = keys(plan.A_r, plan.A_s), keys(plan.B_r, plan.B_s)
    return (real_train & real_test) | (aug_train & aug_test) | (aug_train & real_test)


# ---------------------------------------------------------------------------
# regressors

@dataclass
class RidgeModel:
    coef: np.ndarray
    intercept: float


def ridge_fit(X, y, lam: float = 1.0) -> RidgeModel:
    """Closed-form ridge with an unpenalized intercept (centered normal equations)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y) or len(y) < 2:
        raise ValueError("need |X| == |y| >= 2")
    xm = X.mean(0)
    ym = y.mean()
    Xc = X - xm
    A = Xc.T @ Xc + lam * np.eye(X.shape[1])
    b = Xc.T @ (y - ym)
    if lam == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise np.linalg.LinAlgError("singular system at lambda=0; retry with lambda > 0")
    w = np.linalg.solve(A, b)
    return RidgeModel(w, float(ym - xm @ w))


def ridge_predict(model: RidgeModel, X):
    return np.asarray(X, dtype=np.float64) @ model.coef + model.intercept


@dataclass
class StumpModel:
    base: float
    lr: float
    stumps: list          # (feature, threshold, left value, right value)

    def predict(self, X):
        X = np.asarray(X, dtype=np.float64)
        out = np.full(len(X), self.base)
        for f, thr, lv, rv in self.stumps:
            out += self.lr * np.where(X[:, f] <= thr, lv, rv)
        return out


def _best_stump(X, order, Xs, r):
    """Best single-feature threshold split of residuals ``r`` under squared loss."""
    n = len(r)
    rs = r[order]                                   # (n, F) residuals sorted per feature
    csum = np.cumsum(rs, axis=0)[:-1]               # left sums for split after row i
    total = r.sum()
    nl = np.arange(1, n)[:, None]
    gain = csum ** 2 / nl + (total - csum) ** 2 / (n - nl)
    valid = Xs[1:] > Xs[:-1]                        # only split between distinct values
    gain = np.where(valid, gain, -np.inf)
    if not np.isfinite(gain).any():
        return None
    i, f = np.unravel_index(np.argmax(gain), gain.shape)
    thr = 0.5 * (Xs[i, f] + Xs[i + 1, f])
    lv = csum[i, f] / (i + 1)
    rv = (total - csum[i, f]) / (n - i - 1)
    return int(f), float(thr), float(lv), float(rv)


def gbt_stumps_fit(X, y, rounds: int = 200, lr: float = 0.1) -> StumpModel:
    """Gradient boosting of depth-1 regression trees on squared loss."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    base = float(y.mean())
    model = StumpModel(base, float(lr), [])
    order = np.argsort(X, axis=0, kind="stable")
    Xs = np.take_along_axis(X, order, axis=0)
    pred = np.full(len(y), base)
    for _ in range(rounds):
        r = y - pred
        if np.ptp(r) == 0:       # no split can beat a constant residual
            break
        st = _best_stump(X, order, Xs, r)
        if st is None:           # constant features: stay with the mean predictor
            break
        model.stumps.append(st)
        f, thr, lv, rv = st
        pred = pred + lr * np.where(X[:, f] <= thr, lv, rv)
    return model


def fit_regressor(kind: str, X, y, lam=1.0, rounds=200, lr=0.1):
    if kind == "ridge":
        m = ridge_fit(X, y, lam)
        return lambda Z: ridge_predict(m, Z)
    if kind == "stumps":
        m = gbt_stumps_fit(X, y, rounds, lr)
        return m.predict
    raise ValueError(f"unknown regressor {kind!r}")


# ---------------------------------------------------------------------------
# metrics and the MLE experiment

def regression_metrics(y_true, y_pred):
    """(MSE, MAE, R2, PCC); R2 and PCC are NaN when y_true has no variance."""
    t = np.asarray(y_true, dtype=np.float64)
    p = np.asarray(y_pred, dtype=np.float64)
    if t.shape != p.shape or t.size == 0:
        raise ValueError("need equal nonzero lengths")
    err = p - t
    mse = float(np.mean(err ** 2))
    mae = float(np.mean(np.abs(err)))
    sst = float(((t - t.mean()) ** 2).sum())
    if sst == 0:
        return mse, mae, float("nan"), float("nan")
    r2 = 1.0 - float((err ** 2).sum()) / sst
    tc, pc = t - t.mean(), p - p.mean()
    den = np.sqrt((tc ** 2).sum() * (pc ** 2).sum())
    pcc = float((tc * pc).sum() / den) if den > 0 else float("nan")
    return mse, mae, r2, pcc


@dataclass
class MleConfig:
    model: str = "ridge"          # ridge | stumps
    trials: int = 30
    ridge_lambda: float = 1.0
    rounds: int = 200
    lr: float = 0.1
    alpha: float = 0.05
    test: str = "welch"           # welch | mannwhitney
    iqr_scope: str = "trial"      # trial | global
    seed: int = 0


@dataclass
class MleReport:
    dataset: str
    cfg: MleConfig
    trials_used: int
    per_trial: dict               # pair -> (trials, 4) metric array
    skipped: list = field(default_factory=list)

    def mean(self, pair):
        return np.nanmean(self.per_trial[pair], axis=0)

    def std(self, pair):
        return np.nanstd(self.per_trial[pair], axis=0, ddof=1)

    def p_values(self):
        a, b = self.per_trial["Aug-Real"], self.per_trial["Real-Real"]
        out = []
        for k in range(len(METRICS)):
            x, y = a[:, k], b[:, k]
            x, y = x[np.isfinite(x)], y[np.isfinite(y)]
            if len(x) < 2 or len(y) < 2:
                out.append(float("nan"))
            elif self.cfg.test == "welch":
                out.append(float(stats.ttest_ind(x, y, equal_var=False).pvalue))
            else:
                out.append(float(stats.mannwhitneyu(x, y, alternative="two-sided").pvalue))
        return out

    def rows(self):
        pv = self.p_values()
        for pair in PAIRS:
            mean, std = self.mean(pair), self.std(pair)
            for k, metric in enumerate(METRICS):
                p = pv[k] if pair == "Aug-Real" else float("nan")
                sig = bool(p < self.cfg.alpha) if np.isfinite(p) else False
                yield {"dataset": self.dataset, "pair": pair, "metric": metric,
                       "mean": mean[k], "std": std[k], "p_value": p, "significant": sig}


def _mle_trial(trial, real_X, real_y, synth_X, synth_y, cfg: MleConfig, real_keys, synth_keys,
               global_bounds):
    """One seeded trial; returns {pair: metrics} or None when the split is unusable."""
    rng = derive_rng(cfg.seed, "mle", trial)
    plan = make_splits(len(real_y), len(synth_y), rng, real_keys, synth_keys)
    lo, hi = global_bounds if cfg.iqr_scope == "global" else iqr_bounds(synth_y[plan.A_s])

    def keep(idx, y):
        return idx[(y[idx] >= lo) & (y[idx] <= hi)]

    A_r, B_r = keep(plan.A_r, real_y), keep(plan.B_r, real_y)
    A_s, B_s = keep(plan.A_s, synth_y), keep(plan.B_s, synth_y)
    if len(A_r) < 2 or len(B_r) < 1:
        return None
    fit = lambda X, y: fit_regressor(cfg.model, X, y, cfg.ridge_lambda, cfg.rounds, cfg.lr)  # noqa: E731
    real_model = fit(real_X[A_r], real_y[A_r])
    aug_model = fit(np.vstack([real_X[A_r], synth_X[A_s]]),
                    np.concatenate([real_y[A_r], synth_y[A_s]]))
    aug_tX = np.vstack([real_X[B_r], synth_X[B_s]])
    aug_ty = np.concatenate([real_y[B_r], synth_y[B_s]])
    return {
        "Aug-Aug": regression_metrics(aug_ty, aug_model(aug_tX)),
        "Aug-Real": regression_metrics(real_y[B_r], aug_model(real_X[B_r])),
        "Real-Real": regression_metrics(real_y[B_r], real_model(real_X[B_r])),
    }


def run_mle(real_X, real_y, synth_X, synth_y, cfg: MleConfig, dataset="dataset",
            real_keys=None, synth_keys=None, jobs: int = 1) -> MleReport:
    """Repeated Aug/Real train-test experiment over ``cfg.trials`` seeded trials.

    Each trial draws fresh splits from its own seed stream, so results do
    not depend on ``jobs``.
    """
    if cfg.trials < 2:
        raise ValueError("trials must be >= 2")
    if cfg.iqr_scope not in ("trial", "global"):
        raise ValueError(f"unknown iqr_scope {cfg.iqr_scope!r}")
    real_X, synth_X = np.asarray(real_X, float), np.asarray(synth_X, float)
    real_y, synth_y = np.asarray(real_y, float), np.asarray(synth_y, float)
    common = (real_X, real_y, synth_X, synth_y, cfg, real_keys, synth_keys, iqr_bounds(synth_y))
    trials = range(cfg.trials)
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_mle_trial, trials, *[[c] * cfg.trials for c in common]))
    else:
        results = [_mle_trial(t, *common) for t in trials]
    per_trial = {p: [] for p in PAIRS}
    skipped = []
    for trial, res in zip(trials, results):
        if res is None:
            skipped.append(trial)
            log.warning("trial %d skipped: empty split after outlier removal", trial)
            continue
        for p in PAIRS:
            per_trial[p].append(res[p])
    arrays = {p: np.array(v, dtype=np.float64).reshape(-1, len(METRICS)) for p, v in per_trial.items()}
    return MleReport(dataset, cfg, cfg.trials - len(skipped), arrays, skipped)


def _num(v):
    return "nan" if not np.isfinite(v) else repr(float(v))


def write_mle_csv(reports, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["dataset", "pair", "metric", "mean", "std", "p_value",
                                           "significant"], lineterminator="\n")
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                w.writerow({**row, "mean": _num(row["mean"]), "std": _num(row["std"]),
                            "p_value": _num(row["p_value"]), "significant": int(row["significant"])})


def format_mle_table(reports) -> str:
    """Plain-text table: one row per metric and dataset, one column per train/test pair."""
    lines = []
    for rep in reports:
        model = "ridge" if rep.cfg.model == "ridge" else "boosted stumps (stand-in for GBT)"
        lines.append(f"{rep.dataset}  model={model}  trials={rep.trials_used}  test={rep.cfg.test}")
        lines.append(f"{'metric':<8}" + "".join(f"{p:>22}" for p in PAIRS) + f"{'p(Aug-Real vs Real)':>22}")
        pv = rep.p_values()
        for k, metric in enumerate(METRICS):
            cells = []
            for pair in PAIRS:
                m, s = rep.mean(pair)[k], rep.std(pair)[k]
                cells.append(f"{m:.3f} ({s:.3f})")
            mark = "*" if np.isfinite(pv[k]) and pv[k] < rep.cfg.alpha else " "
            lines.append(f"{metric:<8}" + "".join(f"{c:>22}" for c in cells) + f"{pv[k]:>21.4f}{mark}")
        lines.append("")
    return "\n".join(lines)


def write_hist_csv(real, synth, path, bins: int = N_BINS):
    p, q, edges = shared_histograms(real, synth, bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "real_count", "synth_count"])
        for i in range(bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(p[i]), int(q[i])])
