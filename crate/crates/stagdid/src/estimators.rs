//! Effect estimators for the building-block cells `(g, t)` — the average
//! effect at period `t` on the group adopting at `g` — plus the two-way
//! fixed-effects baseline and the observation-weight representation used
//! for pooled inference.
//!
//! The doubly robust estimators compare the treated group's outcome changes,
//! net of the modeled untreated trend `δ̂_{∞,k}`, against a weighted pool of
//! not-yet-treated units:
//!
//! `τ̂_{g,t} = (1/P̂ₙ{G=g}) P̂ₙ[ I(G=g) Σ_{k=g}^t {ΔY_k − δ̂_{∞,k}(X_k)}`
//! `          − Σ_{k=g}^t I(G>k) (π̂_g(X_k)/π̂_G(X_k)) Ŵ_{G,k}(X_k) {ΔY_k − δ̂_{∞,k}(X_k)} ]`
//!
//! where the pooling weight `Ŵ_{l,k}` over comparison groups `l > k` is
//! proportional to `π̂_l/σ̂²_{l,k}` (inverse-variance pooling) or reduces the
//! whole multiplier to `π̂_g/Σ_{l>k} π̂_l` (propensity pooling). Either model
//! being correct — outcome trend or adoption propensity — gives consistency.
//!
//! Baselines: `reg` uses modeled increments only; `wt-nt`/`wt-ny` reweight
//! raw changes of never-treated / not-yet-treated units; `twfe` is the
//! classical two-way fixed-effects regression of the outcome on unit and
//! period effects plus the treatment indicator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linmod::NuisanceSet;
use crate::panel::{Group, Panel};

/// Estimator identifiers, matching their command-line names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Two-way fixed-effects regression (no cell-level version).
    Twfe,
    /// Regression-only: modeled own-group minus untreated increments.
    Reg,
    /// Propensity weighting of never-treated changes.
    WtNt,
    /// Propensity weighting of not-yet-treated changes.
    WtNy,
    /// Doubly robust with propensity pooling of comparison groups.
    Aipw,
    /// Doubly robust with inverse-variance pooling of comparison groups.
    Aivw,
}

impl Method {
    /// All methods, in reporting order.
    pub const ALL: [Method; 6] =
        [Method::Twfe, Method::Reg, Method::WtNt, Method::WtNy, Method::Aipw, Method::Aivw];

    /// True for methods defined cell-by-cell (everything except `twfe`).
    pub fn has_cells(self) -> bool {
        self != Method::Twfe
    }

    /// True for the doubly robust estimators with influence-function theory.
    pub fn is_doubly_robust(self) -> bool {
        matches!(self, Method::Aipw | Method::Aivw)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Twfe => "twfe",
            Method::Reg => "reg",
            Method::WtNt => "wt-nt",
            Method::WtNy => "wt-ny",
            Method::Aipw => "aipw",
            Method::Aivw => "aivw",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "twfe" => Ok(Method::Twfe),
            "reg" => Ok(Method::Reg),
            "wt-nt" => Ok(Method::WtNt),
            "wt-ny" => Ok(Method::WtNy),
            "aipw" => Ok(Method::Aipw),
            "aivw" => Ok(Method::Aivw),
            other => Err(Error::Validation(format!(
                "unknown estimator '{other}' (expected twfe, reg, wt-nt, wt-ny, aipw, or aivw)"
            ))),
        }
    }
}

/// How comparison groups are pooled inside the doubly robust estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Weight group `l` by `π̂_l/σ̂²_{l,k}` (efficient under heteroskedasticity).
    InverseVariance,
    /// Weight group `l` by `π̂_l` alone.
    Propensity,
}

/// Normalized inverse-variance pooling weights over a comparison set:
/// `W_l ∝ π_l/σ²_l`, scaled to sum to one. Invariant to rescaling all
/// variances by a common factor; with equal variances they reduce to
/// propensity shares.
pub fn ivw_weights(pi: &[f64], sigma2: &[f64]) -> Vec<f64> {
    debug_assert_eq!(pi.len(), sigma2.len());
    let mut w: Vec<f64> = pi
        .iter()
        .zip(sigma2)
        .map(|(&p, &s2)| p / s2.max(1e-300))
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for v in &mut w {
            *v /= total;
        }
    }
    w
}

/// One estimated cell effect.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellEstimate {
    /// Estimator used.
    pub method: Method,
    /// Adoption period of the treated group.
    pub g: usize,
    /// Outcome period (`g ≤ t ≤ T`).
    pub t: usize,
    /// Estimated average effect on the treated.
    pub estimate: f64,
    /// Units in the treated group.
    pub n_treated: usize,
    /// Units available as comparisons (never-treated for `wt-nt`, adopters
    /// after `g` plus never-treated otherwise).
    pub n_comparison: usize,
    /// Ratio evaluations whose denominator was floored at `eta`.
    pub floored_ratios: usize,
}

fn count_group(panel: &Panel, g: Group) -> usize {
    (0..panel.n_units()).filter(|&i| panel.group(i) == g).count()
}

fn count_not_yet(panel: &Panel, k: usize) -> usize {
    (0..panel.n_units())
        .filter(|&i| panel.group(i).not_yet_treated_at(k))
        .count()
}

/// A cell `(g, t)` is estimable when its treated group is non-empty and
/// every period `k ∈ g..=t` retains at least one not-yet-treated comparison
/// unit (`G > k`).
pub fn cell_is_estimable(panel: &Panel, g: usize, t: usize) -> bool {
    if g < 1 || g > panel.t_max() || t < g || t > panel.t_max() {
        return false;
    }
    if count_group(panel, Group::At(g)) == 0 {
        return false;
    }
    (g..=t).all(|k| count_not_yet(panel, k) > 0)
}

fn check_cell_indices(panel: &Panel, g: usize, t: usize) -> Result<()> {
    let t_max = panel.t_max();
    if !(1..=t_max).contains(&g) || t < g || t > t_max {
        return Err(Error::Validation(format!(
            "cell (g={g}, t={t}) is outside the triangle 1 ≤ g ≤ t ≤ {t_max}"
        )));
    }
    Ok(())
}

fn check_base_period(g: usize, s: usize) -> Result<()> {
    if s >= g {
        return Err(Error::Validation(format!(
            "base period {s} is not strictly before adoption period {g}"
        )));
    }
    Ok(())
}

/// Ratio with denominator floored at `eta`; bumps the floor counter when the
/// floor binds.
fn floored_ratio(num: f64, den: f64, eta: f64, floored: &mut usize) -> f64 {
    if den < eta {
        *floored += 1;
        num / eta
    } else {
        num / den
    }
}

/// Comparison multiplier at period `k` for unit `i` toward target group `g`:
/// `(π̂_g/π̂_{G_i})·Ŵ_{G_i,k}` under inverse-variance pooling, or
/// `π̂_g/Σ_{l>k} π̂_l` under propensity pooling, all evaluated at `X_{ik}`.
fn comparison_multiplier(
    ns: &NuisanceSet,
    i: usize,
    k: usize,
    g: usize,
    pooling: Pooling,
    panel: &Panel,
    floored: &mut usize,
) -> f64 {
    let eta = ns.eta();
    let pi_g = ns.pi(i, k, Group::At(g));
    match pooling {
        Pooling::Propensity => {
            let tail = ns.pi_tail_sum(i, k, k);
            floored_ratio(pi_g, tail, eta, floored)
        }
        Pooling::InverseVariance => {
            let own = panel.group(i);
            let comparisons = ns.comparison_groups(k);
            let pis: Vec<f64> = comparisons.iter().map(|&l| ns.pi(i, k, l)).collect();
            let s2s: Vec<f64> = comparisons.iter().map(|&l| ns.sigma2(i, k, l)).collect();
            let w = ivw_weights(&pis, &s2s);
            let idx = comparisons
                .iter()
                .position(|&l| l == own)
                .expect("comparison unit's group appears in its comparison set");
            let pi_own = ns.pi(i, k, own);
            floored_ratio(pi_g, pi_own, eta, floored) * w[idx]
        }
    }
}

/// Per-unit bracket contributions `b_i` for a cell estimator, such that
/// `τ̂_{g,t} = Σᵢ b_i / #{G = g}`. Shared by point estimation and
/// influence-function construction. Returns the contributions and the count
/// of floored ratio denominators. `base_period` applies to `reg`, `wt-nt`,
/// and `wt-ny` (defaulting to `g−1`) and is ignored by the doubly robust
/// estimators, whose changes always accumulate from `g−1`.
pub fn cell_contributions(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    t: usize,
    base_period: Option<usize>,
    method: Method,
) -> Result<(Vec<f64>, usize)> {
    check_cell_indices(panel, g, t)?;
    let n = panel.n_units();
    let mut b = vec![0.0; n];
    let mut floored = 0usize;
    let target = Group::At(g);

    match method {
        Method::Twfe => {
            return Err(Error::Validation(
                "twfe has no cell-level decomposition; use the panel-level fit".to_string(),
            ))
        }
        Method::Aipw | Method::Aivw => {
            let pooling = if method == Method::Aivw {
                Pooling::InverseVariance
            } else {
                Pooling::Propensity
            };
            for i in 0..n {
                let gi = panel.group(i);
                if gi == target {
                    let mut s = 0.0;
                    for k in g..=t {
                        s += panel.dy(i, k) - ns.delta_inf(i, k);
                    }
                    b[i] = s;
                } else {
                    let mut s = 0.0;
                    for k in g..=t {
                        if gi.not_yet_treated_at(k) {
                            let m = comparison_multiplier(ns, i, k, g, pooling, panel, &mut floored);
                            s -= m * (panel.dy(i, k) - ns.delta_inf(i, k));
                        }
                    }
                    b[i] = s;
                }
            }
        }
        Method::Reg => {
            let s0 = base_period.unwrap_or(g - 1);
            check_base_period(g, s0)?;
            for i in 0..n {
                if panel.group(i) == target {
                    let mut s = 0.0;
                    for k in (s0 + 1)..=t {
                        s += ns.delta_own(i, k) - ns.delta_inf(i, k);
                    }
                    b[i] = s;
                }
            }
        }
        Method::WtNt | Method::WtNy => {
            let s0 = base_period.unwrap_or(g - 1);
            check_base_period(g, s0)?;
            for i in 0..n {
                let gi = panel.group(i);
                if gi == target {
                    b[i] = panel.y(i, t) - panel.y(i, s0);
                    continue;
                }
                let mut s = 0.0;
                for k in (s0 + 1)..=t {
                    let active = match method {
                        Method::WtNt => gi == Group::Never,
                        _ => gi.not_yet_treated_at(k),
                    };
                    if active {
                        let den = match method {
                            Method::WtNt => ns.pi(i, k, Group::Never),
                            _ => ns.pi_tail_sum(i, k, k),
                        };
                        let w =
                            floored_ratio(ns.pi(i, k, Group::At(g)), den, ns.eta(), &mut floored);
                        s -= w * panel.dy(i, k);
                    }
                }
                b[i] = s;
            }
        }
    }
    Ok((b, floored))
}

fn finish_cell(
    panel: &Panel,
    g: usize,
    t: usize,
    method: Method,
    b: Vec<f64>,
    floored: usize,
) -> Result<CellEstimate> {
    let n_treated = count_group(panel, Group::At(g));
    if n_treated == 0 {
        return Err(Error::Computation(format!(
            "cell (g={g}, t={t}) has no units in the treated group"
        )));
    }
    let n_comparison = match method {
        Method::WtNt => count_group(panel, Group::Never),
        _ => count_not_yet(panel, g),
    };
    let needs_comparisons = method != Method::Reg;
    if needs_comparisons {
        match method {
            Method::WtNt => {
                if n_comparison == 0 {
                    return Err(Error::Computation(format!(
                        "cell (g={g}, t={t}) has no never-treated comparison units"
                    )));
                }
            }
            _ => {
                for k in g..=t {
                    if count_not_yet(panel, k) == 0 {
                        return Err(Error::Computation(format!(
                            "cell (g={g}, t={t}) has no not-yet-treated comparison units at period {k}"
                        )));
                    }
                }
            }
        }
    }
    let estimate = b.iter().sum::<f64>() / n_treated as f64;
    Ok(CellEstimate { method, g, t, estimate, n_treated, n_comparison, floored_ratios: floored })
}

/// Doubly robust cell estimate with inverse-variance pooling.
pub fn att_cell_aivw(panel: &Panel, ns: &NuisanceSet, g: usize, t: usize) -> Result<CellEstimate> {
    let (b, fl) = cell_contributions(panel, ns, g, t, None, Method::Aivw)?;
    finish_cell(panel, g, t, Method::Aivw, b, fl)
}

/// Doubly robust cell estimate with propensity pooling.
pub fn att_cell_aipw(panel: &Panel, ns: &NuisanceSet, g: usize, t: usize) -> Result<CellEstimate> {
    let (b, fl) = cell_contributions(panel, ns, g, t, None, Method::Aipw)?;
    finish_cell(panel, g, t, Method::Aipw, b, fl)
}

/// Regression-only cell estimate from modeled increments, accumulated from
/// `base_period` (default `g−1`) through `t`.
pub fn att_cell_reg(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    t: usize,
    base_period: Option<usize>,
) -> Result<CellEstimate> {
    let (b, fl) = cell_contributions(panel, ns, g, t, base_period, Method::Reg)?;
    finish_cell(panel, g, t, Method::Reg, b, fl)
}

/// Comparison pool for the weighting-only estimator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WtComparison {
    /// Never-treated units only.
    Never,
    /// All units not yet treated at each summed period.
    NotYet,
}

/// Weighting-only cell estimate: raw treated change from `base_period`
/// (default `g−1`) to `t` minus propensity-reweighted comparison changes.
pub fn att_cell_wt(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    t: usize,
    base_period: Option<usize>,
    comparison: WtComparison,
) -> Result<CellEstimate> {
    let method = match comparison {
        WtComparison::Never => Method::WtNt,
        WtComparison::NotYet => Method::WtNy,
    };
    let (b, fl) = cell_contributions(panel, ns, g, t, base_period, method)?;
    finish_cell(panel, g, t, method, b, fl)
}

/// Dispatch on a cell-level method name.
pub fn att_cell(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    t: usize,
    base_period: Option<usize>,
    method: Method,
) -> Result<CellEstimate> {
    match method {
        Method::Aivw => att_cell_aivw(panel, ns, g, t),
        Method::Aipw => att_cell_aipw(panel, ns, g, t),
        Method::Reg => att_cell_reg(panel, ns, g, t, base_period),
        Method::WtNt => att_cell_wt(panel, ns, g, t, base_period, WtComparison::Never),
        Method::WtNy => att_cell_wt(panel, ns, g, t, base_period, WtComparison::NotYet),
        Method::Twfe => Err(Error::Validation(
            "twfe has no cell-level decomposition; use the panel-level fit".to_string(),
        )),
    }
}

/// Standard-error convention for the two-way fixed-effects baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwfeSeKind {
    /// Homoskedastic OLS standard error with degrees of freedom
    /// `N − (units + periods + 1)`, treating all fixed effects as estimated.
    Classical,
    /// Cluster-robust by unit with the small-sample factor
    /// `(n/(n−1))·((N−1)/(N−K))`.
    ClusterRobust,
}

/// Two-way fixed-effects fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwfeFit {
    /// Coefficient on the treatment indicator.
    pub estimate: f64,
    /// Standard error under `se_kind`.
    pub se: f64,
    /// Which standard-error convention `se` uses.
    pub se_kind: TwfeSeKind,
    /// Units in the panel.
    pub n_units: usize,
    /// Total observations `n(T+1)`.
    pub n_rows: usize,
    /// Residual degrees of freedom `N − (units + periods + 1)`.
    pub dof: usize,
}

/// Two-way fixed-effects regression of `Y_{it}` on unit effects, period
/// effects, and `D_{it}`, computed by double demeaning (exact for balanced
/// panels).
pub fn twfe(panel: &Panel, se_kind: TwfeSeKind) -> Result<TwfeFit> {
    let n = panel.n_units();
    let n_periods = panel.t_max() + 1;
    let n_rows = n * n_periods;

    let mut unit_mean_y = vec![0.0; n];
    let mut period_mean_y = vec![0.0; n_periods];
    let mut unit_mean_d = vec![0.0; n];
    let mut period_mean_d = vec![0.0; n_periods];
    let mut grand_y = 0.0;
    let mut grand_d = 0.0;
    for i in 0..n {
        for t in 0..n_periods {
            let y = panel.y(i, t);
            let d = if panel.d(i, t) { 1.0 } else { 0.0 };
            unit_mean_y[i] += y;
            period_mean_y[t] += y;
            unit_mean_d[i] += d;
            period_mean_d[t] += d;
            grand_y += y;
            grand_d += d;
        }
    }
    for v in &mut unit_mean_y {
        *v /= n_periods as f64;
    }
    for v in &mut unit_mean_d {
        *v /= n_periods as f64;
    }
    for v in &mut period_mean_y {
        *v /= n as f64;
    }
    for v in &mut period_mean_d {
        *v /= n as f64;
    }
    grand_y /= n_rows as f64;
    grand_d /= n_rows as f64;

    let mut sdd = 0.0;
    let mut sdy = 0.0;
    for i in 0..n {
        for t in 0..n_periods {
            let dt = (if panel.d(i, t) { 1.0 } else { 0.0 }) - unit_mean_d[i] - period_mean_d[t]
                + grand_d;
            let yt = panel.y(i, t) - unit_mean_y[i] - period_mean_y[t] + grand_y;
            sdd += dt * dt;
            sdy += dt * yt;
        }
    }
    if sdd <= 1e-12 {
        return Err(Error::Computation(
            "two-way fixed-effects design has no treatment variation after demeaning".to_string(),
        ));
    }
    let estimate = sdy / sdd;

    // K counts intercept, n−1 unit effects, T period effects, and the slope.
    let k_params = n + panel.t_max() + 1;
    if n_rows <= k_params {
        return Err(Error::Computation(
            "two-way fixed-effects fit has no residual degrees of freedom".to_string(),
        ));
    }
    let dof = n_rows - k_params;

    let mut ssr = 0.0;
    let mut meat = 0.0;
    for i in 0..n {
        let mut cluster_sum = 0.0;
        for t in 0..n_periods {
            let dt = (if panel.d(i, t) { 1.0 } else { 0.0 }) - unit_mean_d[i] - period_mean_d[t]
                + grand_d;
            let yt = panel.y(i, t) - unit_mean_y[i] - period_mean_y[t] + grand_y;
            let e = yt - estimate * dt;
            ssr += e * e;
            cluster_sum += dt * e;
        }
        meat += cluster_sum * cluster_sum;
    }

    let se = match se_kind {
        TwfeSeKind::Classical => (ssr / dof as f64 / sdd).sqrt(),
        TwfeSeKind::ClusterRobust => {
            if n < 2 {
                return Err(Error::Computation(
                    "cluster-robust errors need at least two units".to_string(),
                ));
            }
            let c = (n as f64 / (n as f64 - 1.0)) * ((n_rows as f64 - 1.0) / dof as f64);
            (c * meat).sqrt() / sdd
        }
    };

    Ok(TwfeFit { estimate, se, se_kind, n_units: n, n_rows, dof })
}

/// Deviation of an observed outcome from its modeled untreated mean:
/// `R_{it} = Y_{it} − μ̂⁰_{G_i,t}(X_{it})`.
pub fn outcome_residual(panel: &Panel, ns: &NuisanceSet, i: usize, t: usize) -> f64 {
    panel.y(i, t) - ns.mu0(i, t, panel.group(i))
}

/// Observation weights `H^{g,r}_{G_i,t}` expressing the cell estimator as a
/// single weighted sum over all `(i, t)` observations:
///
/// `H^{g,r}_{G,t} = I(G=g){I(t=r) − I(t=g−1)}`
/// `              − Σ_{k=g}^r I(G>k)(π̂_g/π̂_G)Ŵ_{G,k}(X_k){I(t=k) − I(t=k−1)}`
///
/// so that `τ̂_{g,r} = Σ_{i,t} H_{it} R_{it} / #{G=g}` with `R` from
/// [`outcome_residual`]. Returned flat as `i·(T+1)+t`, with the floored-ratio
/// count.
pub fn h_weights(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    r: usize,
    pooling: Pooling,
) -> Result<(Vec<f64>, usize)> {
    check_cell_indices(panel, g, r)?;
    let n = panel.n_units();
    let n_periods = panel.t_max() + 1;
    let mut h = vec![0.0; n * n_periods];
    let mut floored = 0usize;
    for i in 0..n {
        let gi = panel.group(i);
        if gi == Group::At(g) {
            h[i * n_periods + r] += 1.0;
            h[i * n_periods + (g - 1)] -= 1.0;
        }
        for k in g..=r {
            if gi.not_yet_treated_at(k) {
                let m = comparison_multiplier(ns, i, k, g, pooling, panel, &mut floored);
                h[i * n_periods + k] -= m;
                h[i * n_periods + (k - 1)] += m;
            }
        }
    }
    Ok((h, floored))
}

/// Cell estimate evaluated through its observation-weight representation;
/// numerically identical to the direct estimator because the two forms are
/// algebraic rearrangements of the same sum.
pub fn att_cell_via_h(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    r: usize,
    pooling: Pooling,
) -> Result<f64> {
    let (h, _) = h_weights(panel, ns, g, r, pooling)?;
    let n_treated = count_group(panel, Group::At(g));
    if n_treated == 0 {
        return Err(Error::Computation(format!(
            "cell (g={g}, t={r}) has no units in the treated group"
        )));
    }
    let n_periods = panel.t_max() + 1;
    let mut s = 0.0;
    for i in 0..panel.n_units() {
        for t in 0..n_periods {
            let w = h[i * n_periods + t];
            if w != 0.0 {
                s += w * outcome_residual(panel, ns, i, t);
            }
        }
    }
    Ok(s / n_treated as f64)
}

/// Observation weights for the overall effect: the sum of `H^{g,r}` over all
/// cells `1 ≤ g ≤ r ≤ T`. The overall estimate divides the weighted residual
/// sum by the total count of treated observations.
pub fn h_weights_overall(
    panel: &Panel,
    ns: &NuisanceSet,
    pooling: Pooling,
) -> Result<(Vec<f64>, usize)> {
    let n_periods = panel.t_max() + 1;
    let mut total = vec![0.0; panel.n_units() * n_periods];
    let mut floored = 0usize;
    for r in 1..=panel.t_max() {
        for g in 1..=r {
            let (h, fl) = h_weights(panel, ns, g, r, pooling)?;
            floored += fl;
            for (acc, v) in total.iter_mut().zip(&h) {
                *acc += v;
            }
        }
    }
    Ok((total, floored))
}

/// Closed form of the overall observation weights under propensity pooling,
/// writing `F_t = Σ_{s≤t} π̂_s(X_t)` and `S_t = Σ_{s>t} π̂_s(X_t)`:
///
/// `H_{G,t} = D_t − (T−G+1) I(t=G−1) − (F_t/S_t)(T−t+1)(1−D_t)`
/// `        + (F_{t+1}/S_{t+1})(T−t)(1−D_{t+1})`
///
/// where the last term evaluates propensities at the period-`t+1` covariates
/// and vanishes at `t = T`. Equals the cell-sum of `h_weights` exactly.
pub fn h_weights_overall_closed_form(panel: &Panel, ns: &NuisanceSet) -> Result<(Vec<f64>, usize)> {
    let t_max = panel.t_max();
    let n_periods = t_max + 1;
    let mut h = vec![0.0; panel.n_units() * n_periods];
    let mut floored = 0usize;
    let eta = ns.eta();
    for i in 0..panel.n_units() {
        let gi = panel.group(i);
        for t in 0..=t_max {
            let mut v = if panel.d(i, t) { 1.0 } else { 0.0 };
            if let Group::At(gv) = gi {
                if t + 1 == gv {
                    v -= (t_max - gv + 1) as f64;
                }
            }
            if !panel.d(i, t) && t >= 1 {
                let tail = ns.pi_tail_sum(i, t, t);
                let cum = 1.0 - tail;
                v -= floored_ratio(cum, tail, eta, &mut floored) * (t_max - t + 1) as f64;
            }
            if t + 1 <= t_max && !panel.d(i, t + 1) {
                let tail = ns.pi_tail_sum(i, t + 1, t + 1);
                let cum = 1.0 - tail;
                v += floored_ratio(cum, tail, eta, &mut floored) * (t_max - t) as f64;
            }
            h[i * n_periods + t] = v;
        }
    }
    Ok((h, floored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmod::{fit_nuisances, NuisanceOptions};

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    /// Four units over periods 0..=1: two adopt at period 1 (outcomes 0→3),
    /// two never treated (0→2 and 0→1). Untreated trend 1.5; every cell
    /// estimator lands on 3 − 1.5 = 1.5.
    fn micro_panel() -> Panel {
        let group = vec![Group::At(1), Group::At(1), Group::Never, Group::Never];
        let outcome = vec![0.0, 3.0, 0.0, 3.0, 0.0, 2.0, 0.0, 1.0];
        Panel::from_parts(1, group, outcome, vec![], vec![]).unwrap()
    }

    #[test]
    fn every_cell_method_agrees_on_micro_panel() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        for method in [Method::Aivw, Method::Aipw, Method::Reg, Method::WtNt, Method::WtNy] {
            let cell = att_cell(&panel, &ns, 1, 1, None, method).unwrap();
            assert!(
                approx(cell.estimate, 1.5, 1e-9),
                "{method} gave {}",
                cell.estimate
            );
            assert_eq!(cell.n_treated, 2);
            assert_eq!(cell.n_comparison, 2);
        }
        let fit = twfe(&panel, TwfeSeKind::Classical).unwrap();
        assert!(approx(fit.estimate, 1.5, 1e-12), "twfe gave {}", fit.estimate);
    }

    #[test]
    fn twfe_standard_errors_match_hand_computation() {
        // Within-transformed residuals on the micro panel are ±0.25 on the
        // four never-treated observations and 0 on the adopters, giving
        // SSR = 0.25, Σd̃² = 0.5, N = 8, K = 6:
        // classical SE = √(0.125/0.5) = 0.5; cluster-robust SE with
        // meat = 2·(0.125)² and c = (4/3)(7/2) is √(0.583…)/… = 0.76376.
        let panel = micro_panel();
        let classical = twfe(&panel, TwfeSeKind::Classical).unwrap();
        assert!(approx(classical.se, 0.5, 1e-12), "classical {}", classical.se);
        assert_eq!(classical.dof, 2);
        let cluster = twfe(&panel, TwfeSeKind::ClusterRobust).unwrap();
        assert!(approx(cluster.se, 0.7637626158259734, 1e-9), "cluster {}", cluster.se);
    }

    #[test]
    fn ivw_weights_match_hand_arithmetic_and_scale_invariance() {
        let pi = [0.2, 0.3, 0.5];
        let s2 = [1.0, 2.0, 4.0];
        let w = ivw_weights(&pi, &s2);
        // π/σ² = (0.2, 0.15, 0.125), total 0.475.
        assert!(approx(w[0], 0.2 / 0.475, 1e-12));
        assert!(approx(w[1], 0.15 / 0.475, 1e-12));
        assert!(approx(w[2], 0.125 / 0.475, 1e-12));
        assert!(approx(w.iter().sum::<f64>(), 1.0, 1e-12));

        let s2_scaled: Vec<f64> = s2.iter().map(|v| v * 37.5).collect();
        let w_scaled = ivw_weights(&pi, &s2_scaled);
        for j in 0..3 {
            assert!(approx(w[j], w_scaled[j], 1e-12), "weight {j} changed under rescaling");
        }
    }

    #[test]
    fn constant_variance_makes_ivw_match_propensity_pooling() {
        let panel = micro_panel();
        let opts = NuisanceOptions { homoskedastic: true, ..Default::default() };
        let ns = fit_nuisances(&panel, &opts).unwrap();
        let (b_ivw, _) = cell_contributions(&panel, &ns, 1, 1, None, Method::Aivw).unwrap();
        let (b_ipw, _) = cell_contributions(&panel, &ns, 1, 1, None, Method::Aipw).unwrap();
        for i in 0..panel.n_units() {
            assert!(
                approx(b_ivw[i], b_ipw[i], 1e-12),
                "unit {i}: {} vs {}",
                b_ivw[i],
                b_ipw[i]
            );
        }
    }

    #[test]
    fn h_weight_path_reproduces_direct_estimates() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let direct = att_cell_aivw(&panel, &ns, 1, 1).unwrap().estimate;
        let via_h = att_cell_via_h(&panel, &ns, 1, 1, Pooling::InverseVariance).unwrap();
        assert!(approx(direct, via_h, 1e-12), "{direct} vs {via_h}");
        // Adopters carry weight 1 on their treated observation.
        let (h, _) = h_weights(&panel, &ns, 1, 1, Pooling::InverseVariance).unwrap();
        assert!(approx(h[0 * 2 + 1], 1.0, 1e-12));
        assert!(approx(h[0 * 2 + 0], -1.0, 1e-12));
    }

    #[test]
    fn closed_form_overall_weights_match_cell_sum() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let (by_cells, _) = h_weights_overall(&panel, &ns, Pooling::Propensity).unwrap();
        let (closed, _) = h_weights_overall_closed_form(&panel, &ns).unwrap();
        for (idx, (a, b)) in by_cells.iter().zip(&closed).enumerate() {
            assert!(approx(*a, *b, 1e-12), "slot {idx}: {a} vs {b}");
        }
    }

    #[test]
    fn missing_comparison_units_make_cells_non_estimable() {
        // Both groups adopt by period 2; no one is untreated at period 2.
        let group = vec![Group::At(1), Group::At(2), Group::At(2)];
        let outcome = vec![0.0; 9];
        let panel = Panel::from_parts(2, group, outcome, vec![], vec![]).unwrap();
        assert!(cell_is_estimable(&panel, 1, 1));
        assert!(!cell_is_estimable(&panel, 1, 2));
        assert!(!cell_is_estimable(&panel, 2, 2));
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let err = att_cell_aivw(&panel, &ns, 1, 2).unwrap_err();
        assert!(err.to_string().contains("no not-yet-treated"), "{err}");
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            let parsed: Method = m.to_string().parse().unwrap();
            assert_eq!(parsed, m);
        }
        assert!("banana".parse::<Method>().is_err());
    }

    #[test]
    fn base_period_must_precede_adoption() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let err = att_cell_reg(&panel, &ns, 1, 1, Some(1)).unwrap_err();
        assert!(err.to_string().contains("base period"), "{err}");
    }
}
