"""Numerical kernels shared by the dose-finding designs.

Everything here is a pure function of its arguments: Beta posterior tails,
interval-design boundary calibration, isotonic and unimodal regression,
fractional-polynomial efficacy fits, rectangle posterior mass (JUPM), utility
posterior ranking (RDS), and strongest-interval scoring.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special
from scipy.stats import binom as _binom

__all__ = [
    "BetaParams",
    "Boundaries",
    "FPModel",
    "StatsError",
    "beta_tail",
    "boin_boundaries",
    "boinet_boundaries",
    "pava",
    "unimodal_fit",
    "unimodal_models",
    "unimodal_average",
    "fp2_fit",
    "jupm",
    "rds_rank",
    "strongest_interval",
    "FP_POWERS",
]


class StatsError(ValueError):
    """Invalid input to a numerical kernel."""


@dataclass(frozen=True)
class BetaParams:
    """Shape parameters of a Beta distribution."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a > 0 and self.b > 0):
            raise StatsError(f"Beta shapes must be positive, got ({self.a}, {self.b})")

    def cdf(self, x: float) -> float:
        return float(special.betainc(self.a, self.b, np.clip(x, 0.0, 1.0)))

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)


@dataclass(frozen=True)
class Boundaries:
    """Interval-design cutoffs.

    lambda_e / lambda_d are the escalation / de-escalation cutoffs on the
    empirical toxicity rate. Designs with an efficacy cutoff additionally carry
    (lambda1, lambda2, eta1); for those, lambda_e == lambda1 and
    lambda_d == lambda2.
    """

    lambda_e: float
    lambda_d: float
    lambda1: float | None = None
    lambda2: float | None = None
    eta1: float | None = None
    objective: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.lambda_e < self.lambda_d < 1.0:
            raise StatsError(
                f"need 0 < lambda_e < lambda_d < 1, got ({self.lambda_e}, {self.lambda_d})")
        if self.eta1 is not None and not 0.0 < self.eta1 < 1.0:
            raise StatsError(f"eta1 {self.eta1} outside (0,1)")


# ---------------------------------------------------------------------------
# Beta posterior tails


def beta_tail(prior: BetaParams, successes: int, n: int, threshold: float,
              direction: str) -> float:
    """Posterior tail mass Pr(rate > threshold) or Pr(rate < threshold).

    Posterior is Beta(a + successes, b + n - successes); evaluation is the
    regularized incomplete Beta function, exact to ~1e-15.
    """
    if not 0 <= successes <= n:
        raise StatsError(f"successes {successes} outside 0..{n}")
    if not 0.0 < threshold < 1.0:
        raise StatsError(f"threshold {threshold} outside (0,1)")
    if direction not in ("above", "below"):
        raise StatsError(f"direction must be 'above' or 'below', got {direction!r}")
    post = BetaParams(prior.a + successes, prior.b + n - successes)
    below = post.cdf(threshold)
    return below if direction == "below" else 1.0 - below


# ---------------------------------------------------------------------------
# Interval-design boundaries


def boin_boundaries(p_T: float, phi1_frac: float = 0.6,
                    phi2_frac: float = 1.4) -> Boundaries:
    """Optimal escalation/de-escalation cutoffs for a target toxicity rate.

    lambda_e = log((1-phi1)/(1-p_T)) / log(p_T(1-phi1) / (phi1(1-p_T))) with
    phi1 = phi1_frac * p_T, and lambda_d analogously with phi2 = phi2_frac * p_T.
    """
    if not 0.0 < p_T < 1.0:
        raise StatsError(f"p_T {p_T} outside (0,1)")
    phi1 = phi1_frac * p_T
    phi2 = phi2_frac * p_T
    if not 0.0 < phi1 < p_T:
        raise StatsError(f"phi1={phi1} must lie strictly below p_T={p_T}")
    if not p_T < phi2 < 1.0:
        raise StatsError(f"phi2={phi2} must lie strictly between p_T and 1")

    def cutoff(lo: float, hi: float) -> float:
        return math.log((1 - lo) / (1 - hi)) / math.log(hi * (1 - lo) / (lo * (1 - hi)))

    return Boundaries(lambda_e=cutoff(phi1, p_T), lambda_d=cutoff(p_T, phi2))


def boinet_boundaries(phi_p: float, delta_E: float, grid_step: float = 0.01,
                      calibration_n: int = 30,
                      override: tuple | None = None) -> Boundaries:
    """Joint toxicity/efficacy cutoffs (lambda1, lambda2, eta1) by grid search.

    The decision grid classifies (phat, qhat) into escalate
    {phat <= lambda1, qhat <= eta1}, de-escalate {phat >= lambda2}, and stay
    (everything else). Six equally weighted calibration hypotheses pair
    toxicity phi1 = 0.1*phi_p, phi_p, phi2 = 1.4*phi_p with efficacy
    delta1 = 0.6*delta_E, delta_E; correct actions are E for (phi1, delta1),
    D for both phi2 rows, S otherwise. The returned triple minimizes the mean
    misclassification probability of binomial rates at the calibration sample
    size, resolving plateau ties to the plateau center.

    ``override`` pins the triple verbatim and skips the search; the objective
    reconstruction here is a documented reimplementation (the calibration used
    for published cutoffs is not fully determined by its sources), so default
    design configurations pin published values through this path.
    """
    if override is not None:
        l1, l2, e1 = override
        return Boundaries(lambda_e=l1, lambda_d=l2, lambda1=l1, lambda2=l2, eta1=e1)
    phi1, phi2 = 0.1 * phi_p, 1.4 * phi_p
    delta1 = 0.6 * delta_E
    if not (0.0 < phi1 < phi_p < phi2 < 1.0 and 0.0 < delta1 < delta_E < 1.0):
        raise StatsError(f"degenerate calibration box for phi_p={phi_p}, delta_E={delta_E}")

    def grid(lo: float, hi: float) -> np.ndarray:
        g = np.round(np.arange(np.ceil(lo / grid_step + 1e-9) * grid_step,
                               hi, grid_step), 10)
        return g[(g > lo) & (g < hi)]

    l1s, l2s, e1s = grid(phi1, phi_p), grid(phi_p, phi2), grid(delta1, delta_E)
    if min(len(l1s), len(l2s), len(e1s)) == 0:
        raise StatsError("constraint box contains no grid points; reduce grid_step")

    n = calibration_n
    a = np.floor(n * l1s + 1e-9).astype(int)       # phat <= lambda1  <=>  xT <= a
    c = np.ceil(n * l2s - 1e-9).astype(int)        # phat >= lambda2  <=>  xT >= c
    e = np.floor(n * e1s + 1e-9).astype(int)       # qhat <= eta1     <=>  xE <= e
    cdf = {p: _binom.cdf(np.arange(-1, n + 1), n, p)
           for p in (phi1, phi_p, phi2, delta1, delta_E)}

    def F(p: float, k: np.ndarray) -> np.ndarray:
        return cdf[p][k + 1]

    A, C, E = np.meshgrid(a, c, e, indexing="ij")

    def stay_mass(tox: float, eff: float) -> np.ndarray:
        # stay region: {phat <= lambda1, qhat > eta1} plus the whole mid column
        return F(tox, A) * (1.0 - F(eff, E)) + (F(tox, C - 1) - F(tox, A))

    p_correct = (F(phi1, A) * F(delta1, E)
                 + stay_mass(phi1, delta_E)
                 + stay_mass(phi_p, delta1)
                 + stay_mass(phi_p, delta_E)
                 + 2.0 * (1.0 - F(phi2, C - 1)))
    objective = 1.0 - p_correct / 6.0

    best = objective.min()
    tied = np.argwhere(objective <= best + 1e-12)
    center = np.median(tied, axis=0)
    pick = tied[np.lexsort((tied[:, 2], tied[:, 1], tied[:, 0],
                            np.abs(tied - center).sum(axis=1)))][0]
    l1, l2, e1 = float(l1s[pick[0]]), float(l2s[pick[1]]), float(e1s[pick[2]])
    return Boundaries(lambda_e=l1, lambda_d=l2, lambda1=l1, lambda2=l2, eta1=e1,
                      objective=float(objective[tuple(pick)]))


# ---------------------------------------------------------------------------
# Isotonic and unimodal regression


def pava(values, weights, direction: str = "increasing") -> np.ndarray:
    """Weighted least-squares isotonic fit by pool-adjacent-violators.

    Zero-weight entries (untried doses) are allowed: they do not influence the
    fit and receive the nearest feasible fitted value. Pooling comparisons
    cross-multiply weighted sums, so no divisions happen until expansion.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.ndim != 1 or v.shape != w.shape or v.size == 0:
        raise StatsError("values and weights must be equal-length nonempty vectors")
    if np.any(w < 0):
        raise StatsError("weights must be nonnegative")
    if direction not in ("increasing", "decreasing"):
        raise StatsError(f"direction must be increasing|decreasing, got {direction!r}")
    sign = 1.0 if direction == "increasing" else -1.0

    pos = np.flatnonzero(w > 0)
    if pos.size == 0:
        raise StatsError("at least one positive weight required")
    blocks = _pava_blocks(sign * v[pos], w[pos])
    fit_pos = sign * _expand_blocks(blocks)

    out = np.empty_like(v)
    out[pos] = fit_pos
    # clamp zero-weight positions onto the monotone staircase
    left = -np.inf if direction == "increasing" else np.inf
    j = 0
    for i in range(v.size):
        if w[i] > 0:
            left = out[i]
            j += 1
        else:
            nxt = fit_pos[j] if j < fit_pos.size else None
            if not np.isfinite(left):
                out[i] = nxt if nxt is not None else 0.0
            else:
                out[i] = left
    return out


def _pava_blocks(v: np.ndarray, w: np.ndarray) -> list:
    """Increasing-direction pooling. Blocks are [wsum, wvsum, count]."""
    blocks: list = []
    for vi, wi in zip(v, w):
        blocks.append([wi, wi * vi, 1])
        while len(blocks) >= 2:
            w2, s2, c2 = blocks[-1]
            w1, s1, c1 = blocks[-2]
            if s1 * w2 <= s2 * w1:  # mean(prev) <= mean(cur): feasible
                break
            blocks.pop()
            blocks[-1] = [w1 + w2, s1 + s2, c1 + c2]
    return blocks


def _expand_blocks(blocks: list) -> np.ndarray:
    out = np.empty(sum(b[2] for b in blocks))
    i = 0
    for wsum, wvsum, cnt in blocks:
        out[i:i + cnt] = wvsum / wsum
        i += cnt
    return out


def unimodal_fit(values, weights, mode: int) -> np.ndarray:
    """Weighted LS fit under x_1 <= ... <= x_mode >= ... >= x_D (mode 1-indexed).

    Exact solution via the peak-value parameterization: for a fixed peak value
    t, each flank's optimum is its unconstrained pool-adjacent-violators fit
    clipped from above at t, and the total cost is convex piecewise-quadratic
    in t, minimized by scanning the block-value breakpoints.
    """
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if v.ndim != 1 or v.shape != w.shape or v.size == 0:
        raise StatsError("values and weights must be equal-length nonempty vectors")
    if not 1 <= mode <= v.size:
        raise StatsError(f"mode {mode} outside 1..{v.size}")
    if not np.any(w > 0):
        raise StatsError("at least one positive weight required")
    k = mode - 1

    # flanks exclude the peak; zero-weight entries are filtered, filled later
    lpos = [i for i in range(0, k) if w[i] > 0]
    rpos = [i for i in range(k + 1, v.size) if w[i] > 0]
    lfit = _expand_blocks(_pava_blocks(v[lpos], w[lpos])) if lpos else np.empty(0)
    rfit = -_expand_blocks(_pava_blocks(-np.asarray(v[rpos]), w[rpos])) \
        if rpos else np.empty(0)
    lv, lw = v[lpos], w[lpos]
    rv, rw = v[rpos], w[rpos]
    wk = w[k]

    # With the peak value fixed at t, each flank's optimum is its unconstrained
    # isotonic fit clipped from above at t, so the total cost
    #   G(t) = wk*(v_k - t)^2 + sum w*(v - min(fit, t))^2
    # is convex piecewise-quadratic with breakpoints at the block values.
    def cost(t: float) -> float:
        c = wk * (v[k] - t) ** 2 if wk > 0 else 0.0
        if lv.size:
            c += float(np.sum(lw * (lv - np.minimum(lfit, t)) ** 2))
        if rv.size:
            c += float(np.sum(rw * (rv - np.minimum(rfit, t)) ** 2))
        return c

    breaks = np.unique(np.concatenate([lfit, rfit]))
    lo = -np.inf
    best_t, best_c = None, np.inf
    for j in range(breaks.size + 1):
        hi = breaks[j] if j < breaks.size else np.inf
        # on (lo, hi]: clipped elements are those whose block value > t, i.e. >= hi
        mask_l = lfit >= hi if lv.size else np.empty(0, bool)
        mask_r = rfit >= hi if rv.size else np.empty(0, bool)
        wsum = (wk if wk > 0 else 0.0) + float(lw[mask_l].sum()) + float(rw[mask_r].sum())
        vsum = (wk * v[k] if wk > 0 else 0.0) + \
            float((lw[mask_l] * lv[mask_l]).sum()) + float((rw[mask_r] * rv[mask_r]).sum())
        if wsum > 0:
            t = vsum / wsum
            t = min(max(t, lo), hi)
            if not np.isfinite(t):  # top piece with nothing clipped and wk=0
                t = breaks[-1] if breaks.size else 0.0
        else:
            # constant piece: pick its upper end (no clipping, zero extra cost)
            t = hi if np.isfinite(hi) else (breaks[-1] if breaks.size else 0.0)
        c = cost(t)
        if c < best_c - 1e-15:
            best_t, best_c = t, c
        lo = hi
    t = best_t if best_t is not None else (float(v[k]) if wk > 0 else 0.0)

    out = np.full_like(v, np.nan)
    out[k] = t
    if lpos:
        out[lpos] = np.minimum(lfit, t)
    if rpos:
        out[rpos] = np.minimum(rfit, t)

    # zero-weight positions: clamp onto the fitted profile (cost-free, feasible)
    last = t
    for i in range(k - 1, -1, -1):  # ascending flank, right to left
        if np.isnan(out[i]):
            out[i] = last
        else:
            last = out[i]
    last = t
    for i in range(k + 1, v.size):  # descending flank, left to right
        if np.isnan(out[i]):
            out[i] = last
        else:
            last = out[i]
    return out


def unimodal_models(eff_counts):
    """Per-peak unimodal fits and their pseudo-likelihood model weights.

    eff_counts: sequence of (yE, n) per dose; n may be 0 (weight 0 in each fit).
    For every candidate peak d', fit the unimodal profile and score it by the
    binomial pseudo-likelihood L_d' = prod_d C(n_d, yE_d) qtilde^yE (1-qtilde)^(n-yE).
    Returns (fits, pi) where fits[m-1] is the profile with peak at m and
    pi = L / sum(L).
    """
    counts = [(int(y), int(n)) for y, n in eff_counts]
    D = len(counts)
    if D == 0 or all(n == 0 for _, n in counts):
        raise StatsError("unimodal averaging needs at least one dose with data")
    for y, n in counts:
        if not 0 <= y <= n:
            raise StatsError(f"bad efficacy count ({y}, {n})")
    values = np.array([y / n if n else 0.0 for y, n in counts])
    weights = np.array([n for _, n in counts], dtype=float)

    fits = np.empty((D, D))
    like = np.empty(D)
    ys = np.array([y for y, _ in counts], dtype=float)
    ns = np.array([n for _, n in counts], dtype=float)
    coef = special.comb(ns, ys)
    for m in range(1, D + 1):
        q = np.clip(unimodal_fit(values, weights, m), 0.0, 1.0)
        fits[m - 1] = q
        with np.errstate(invalid="ignore"):
            terms = coef * q ** ys * (1.0 - q) ** (ns - ys)
        like[m - 1] = np.prod(np.nan_to_num(terms, nan=1.0))
    return fits, like / like.sum()


def unimodal_average(eff_counts) -> np.ndarray:
    """Model-averaged efficacy estimates: sum over peaks of pi_d' * qtilde_d'."""
    fits, pi = unimodal_models(eff_counts)
    return pi @ fits


# ---------------------------------------------------------------------------
# Fractional-polynomial efficacy regression

FP_POWERS = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 3.0)


@dataclass(frozen=True)
class FPModel:
    """Second-degree fractional-polynomial binomial fit."""

    powers: tuple
    coefficients: tuple
    deviance: float

    def design_row(self, x: float) -> np.ndarray:
        return np.array([1.0, *_fp_terms(np.array([x]), self.powers).ravel()])

    def predict(self, x_values) -> np.ndarray:
        """Fitted efficacy probabilities at the given (positive) dose values."""
        x = np.asarray(x_values, dtype=float)
        if np.any(x <= 0):
            raise StatsError("dose values must be positive")
        T = _fp_terms(x, self.powers)
        eta = self.coefficients[0] + T @ np.asarray(self.coefficients[1:])
        return 1.0 / (1.0 + np.exp(-eta))


def _fp_terms(x: np.ndarray, powers: tuple) -> np.ndarray:
    """Columns for one power pair; x^(0) means log x, repeated powers add a log factor."""
    k1, k2 = powers
    t1 = np.log(x) if k1 == 0 else x ** k1
    if k1 == k2:
        t2 = t1 * np.log(x)
    else:
        t2 = np.log(x) if k2 == 0 else x ** k2
    return np.column_stack([t1, t2])


def fp2_fit(eff_counts, dose_values=None) -> FPModel:
    """Best two-power fractional polynomial for per-dose efficacy counts.

    Fits all 36 unordered power pairs from FP_POWERS by IRLS on the logit
    scale, picks minimum deviance, ties broken by the lexicographically
    smallest pair. Doses with n = 0 are excluded from the fit.
    """
    counts = [(int(y), int(n)) for y, n in eff_counts]
    if dose_values is None:
        dose_values = np.arange(1.0, len(counts) + 1.0)
    x_all = np.asarray(dose_values, dtype=float)
    if x_all.size != len(counts):
        raise StatsError("dose_values length must match eff_counts")
    if np.any(x_all <= 0):
        raise StatsError("dose values must be positive")
    used = [i for i, (_, n) in enumerate(counts) if n > 0]
    if not used:
        raise StatsError("fp2_fit needs at least one dose with data")
    y = np.array([counts[i][0] for i in used], dtype=float)
    n = np.array([counts[i][1] for i in used], dtype=float)
    x = x_all[used]

    if np.unique(x).size == 1:
        # saturated: a single dose value carries all the data
        q = min(max(y.sum() / n.sum(), 1e-10), 1 - 1e-10)
        b0 = math.log(q / (1 - q))
        return FPModel(powers=(FP_POWERS[0], FP_POWERS[0]),
                       coefficients=(b0, 0.0, 0.0),
                       deviance=float(_binomial_deviance(y, n, np.full_like(y, q))))

    best: FPModel | None = None
    failed = 0
    for i, k1 in enumerate(FP_POWERS):
        for k2 in FP_POWERS[i:]:
            try:
                beta, dev = _irls_binomial(np.column_stack(
                    [np.ones_like(x), _fp_terms(x, (k1, k2))]), y, n)
            except np.linalg.LinAlgError:
                failed += 1
                continue
            if best is None or dev < best.deviance - 1e-9:
                best = FPModel(powers=(k1, k2), coefficients=tuple(beta),
                               deviance=float(dev))
    if best is None:
        raise StatsError(f"all {failed} power-pair fits failed")
    if failed:
        warnings.warn(f"fp2_fit: {failed} power pair(s) skipped after IRLS failure",
                      RuntimeWarning, stacklevel=2)
    return best


def _binomial_deviance(y, n, mu) -> float:
    # xlogy(0, .) == 0 covers the y == 0 and y == n corners exactly
    mu = np.clip(mu, 1e-12, 1 - 1e-12)
    t1 = special.xlogy(y, y / (n * mu))
    t2 = special.xlogy(n - y, (n - y) / (n - n * mu))
    return float(2.0 * np.sum(t1 + t2))


def _irls_binomial(X, y, n, max_iter: int = 100, tol: float = 1e-8,
                   ridge: float = 1e-6):
    """Logistic-link binomial IRLS. Returns (beta, deviance).

    Convergence is judged on the deviance, which keeps quasi-separated fits
    from spinning while their coefficients drift; each iteration reuses its
    working mu for the deviance, so the stop test costs no extra exp.
    """
    q = min(max(float(y.sum() / n.sum()), 1e-10), 1 - 1e-10)
    beta = np.zeros(X.shape[1])
    beta[0] = math.log(q / (1 - q))
    dev = np.inf
    for _ in range(max_iter):
        eta = X @ beta
        mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -30, 30)))
        mu = np.clip(mu, 1e-10, 1 - 1e-10)
        new_dev = _binomial_deviance(y, n, mu)
        done = abs(dev - new_dev) <= tol * (abs(new_dev) + 0.1)
        dev = new_dev
        if done:
            break
        w = mu * (1 - mu)
        wt = n * w
        z = eta + (y / n - mu) / w
        XtW = X.T * wt
        A = XtW @ X
        b = XtW @ z
        try:
            beta_new = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            beta_new = np.linalg.solve(A + ridge * np.eye(A.shape[0]), b)
        if not np.all(np.isfinite(beta_new)):
            raise np.linalg.LinAlgError("IRLS diverged")
        beta = beta_new
    return beta, dev


# ---------------------------------------------------------------------------
# Rectangle posterior mass, utility ranking, interval scoring


def jupm(tox: BetaParams, eff: BetaParams, rect) -> float:
    """Joint posterior mass of a (toxicity x efficacy) rectangle, per unit area."""
    (a1, b1), (a2, b2) = rect
    if not (0.0 <= a1 < b1 <= 1.0 and 0.0 <= a2 < b2 <= 1.0):
        raise StatsError(f"degenerate rectangle {rect}")
    mass = (tox.cdf(b1) - tox.cdf(a1)) * (eff.cdf(b2) - eff.cdf(a2))
    return mass / ((b1 - a1) * (b2 - a2))


def rds_rank(candidates, prior: BetaParams, u_b: float) -> list:
    """Rank doses by Pr(posterior mean-utility rate > u_b).

    candidates: sequence of (OutcomeCounts, UtilityScores). The utility tally
    sum(u_i * y_i)/100 acts as a (possibly fractional) success count on a
    Beta-binomial model. Returns [(index, score)] sorted by descending score,
    ties to the lower index.
    """
    if not candidates:
        raise StatsError("rds_rank needs at least one candidate")
    if not 0.0 < u_b < 1.0:
        raise StatsError(f"benchmark {u_b} outside (0,1)")
    scored = []
    for i, (counts, utilities) in enumerate(candidates):
        x = utilities.utility_successes(counts)
        post = BetaParams(prior.a + x, prior.b + counts.n - x)
        scored.append((i, 1.0 - post.cdf(u_b)))
    return sorted(scored, key=lambda t: (-t[1], t[0]))


def default_interval_edges(num: int = 10) -> np.ndarray:
    return np.linspace(0.0, 1.0, num + 1)


def strongest_interval(posterior: BetaParams, edges=None, tie: str = "low") -> int:
    """1-based index of the bin holding the most posterior mass.

    Equal-width default bins [0.1(k-1), 0.1k). Ties resolve to the lower index
    unless tie="high".
    """
    if edges is None:
        edges = default_interval_edges()
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise StatsError("edges must be strictly increasing with >= 2 entries")
    if tie not in ("low", "high"):
        raise StatsError(f"tie must be low|high, got {tie!r}")
    cdf = special.betainc(posterior.a, posterior.b, np.clip(edges, 0.0, 1.0))
    mass = np.diff(cdf)
    best = mass.max()
    idx = np.flatnonzero(mass >= best - 1e-12)
    return int(idx[0] + 1) if tie == "low" else int(idx[-1] + 1)
