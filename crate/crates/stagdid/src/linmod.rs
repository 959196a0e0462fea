//! Linear and logistic model fitting, and the fitted-nuisance bundle
//! consumed by the effect estimators.
//!
//! Least squares uses a column-pivoted QR factorization and returns a basic
//! solution when the design is rank-deficient: coefficients of non-pivot
//! columns are set to zero and reported as dropped. Logistic regression is
//! Newton–Raphson implemented as iteratively reweighted least squares with
//! step halving, declaring convergence when the score `‖Xᵀ(y − p̂)‖₂` falls
//! below an absolute tolerance.
//!
//! [`fit_nuisances`] fits the outcome, variance, and adoption-propensity
//! working models on a panel and precomputes every nuisance evaluation the
//! estimators need: untreated means `μ̂⁰_{g,t}(X_t)`, untreated trend
//! increments `δ̂_{∞,k}`, model-implied own-group increments `δ̂_{G,k}`,
//! group propensities `π̂_g(X_t)` (monotonicity-repaired, clipped,
//! renormalized), and conditional variances `σ̂²_{g,t}(X_t)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::design::{
    build_outcome_design, build_propensity_design, build_variance_design, threshold_response,
};
use crate::error::{Error, Result};
use crate::panel::{Group, Panel};

/// Relative rank tolerance: a pivot counts toward the rank when its absolute
/// value exceeds this multiple of the largest pivot.
pub const RANK_TOL: f64 = 1e-10;

/// Absolute convergence tolerance on the logistic score norm `‖Xᵀ(y − p̂)‖₂`.
pub const LOGISTIC_SCORE_TOL: f64 = 1e-8;

/// Linear-predictor magnitude treated as numerically 0/1 fitted
/// probability: `sigmoid(30) ≈ 1 − 1e−13`. Fits driving observations past
/// this margin carry the perfect-separation signature.
const SEPARATION_MARGIN: f64 = 30.0;

const LOGISTIC_MAX_ITER: usize = 100;
const MAX_STEP_HALVINGS: usize = 30;

/// Result of a least-squares fit.
#[derive(Clone, Debug)]
pub struct LinearFit {
    /// Coefficients in original column order; dropped columns hold zero.
    pub coef: DVector<f64>,
    /// Fitted values `X β̂` on the unweighted design.
    pub fitted: DVector<f64>,
    /// Residuals `y − X β̂`.
    pub residuals: DVector<f64>,
    /// Numerical rank of the design.
    pub rank: usize,
    /// Original indices of non-pivot columns excluded from the basic solution.
    pub dropped: Vec<usize>,
}

/// Ordinary least squares via column-pivoted QR.
///
/// Rank-deficient designs yield the basic solution: the factorization's
/// non-pivot columns get zero coefficients and are listed in `dropped`.
/// The residuals remain orthogonal to the full column space either way.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    if x.nrows() != y.len() {
        return Err(Error::Computation(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Computation("empty design matrix".to_string()));
    }
    let (coef, rank, dropped) = ls_basic_solution(x.clone(), y);
    let fitted = x * &coef;
    let residuals = y - &fitted;
    Ok(LinearFit { coef, fitted, residuals, rank, dropped })
}

/// Weighted least squares with per-row weights `w ≥ 0`, minimizing
/// `Σ w_i (y_i − x_iᵀβ)²`. Fitted values and residuals refer to the
/// unweighted design.
pub fn ols_weighted(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<LinearFit> {
    if x.nrows() != y.len() || x.nrows() != w.len() {
        return Err(Error::Computation(format!(
            "design has {} rows, response {}, weights {}",
            x.nrows(),
            y.len(),
            w.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Computation("empty design matrix".to_string()));
    }
    if w.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::Computation("weights must be finite and non-negative".to_string()));
    }
    let mut xs = x.clone();
    let mut ys = y.clone();
    for (i, &wi) in w.iter().enumerate() {
        let s = wi.sqrt();
        for c in 0..xs.ncols() {
            xs[(i, c)] *= s;
        }
        ys[i] *= s;
    }
    let (coef, rank, dropped) = ls_basic_solution(xs, &ys);
    let fitted = x * &coef;
    let residuals = y - &fitted;
    Ok(LinearFit { coef, fitted, residuals, rank, dropped })
}

/// Core rank-revealing solve: returns (coefficients, rank, dropped columns).
fn ls_basic_solution(x: DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize, Vec<usize>) {
    let k = x.ncols();
    let qr = x.col_piv_qr();
    let r = qr.r();
    let m = r.nrows().min(r.ncols());

    // Pivoting orders |r_00| ≥ |r_11| ≥ …; rank counts pivots above the
    // relative tolerance.
    let r00 = r[(0, 0)].abs();
    let tol = RANK_TOL * r00;
    let mut rank = 0;
    for i in 0..m {
        if r[(i, i)].abs() > tol && r00 > 0.0 {
            rank += 1;
        } else {
            break;
        }
    }

    // Recover the column permutation empirically: replay the recorded swaps
    // on an index row, so perm[j] is the original index of pivot column j.
    let mut probe = DMatrix::from_fn(1, k, |_, j| j as f64);
    qr.p().permute_columns(&mut probe);
    let perm: Vec<usize> = (0..k).map(|j| probe[(0, j)] as usize).collect();

    let mut coef = DVector::zeros(k);
    if rank > 0 {
        let qty = qr.q().transpose() * y;
        // Back-substitute the leading rank×rank block of R.
        let mut z = vec![0.0; rank];
        for i in (0..rank).rev() {
            let mut s = qty[i];
            for j in (i + 1)..rank {
                s -= r[(i, j)] * z[j];
            }
            z[i] = s / r[(i, i)];
        }
        for (j, &zj) in z.iter().enumerate() {
            coef[perm[j]] = zj;
        }
    }
    let dropped = perm[rank..].to_vec();
    (coef, rank, dropped)
}

/// Worst-case cosine between the residual vector and a design column:
/// `max_j |X_jᵀ r| / (‖X_j‖‖r‖)`. Near zero for a converged least-squares
/// fit; used as a numerical health check.
pub fn residual_orthogonality(x: &DMatrix<f64>, residuals: &DVector<f64>) -> f64 {
    let rn = residuals.norm();
    if rn == 0.0 {
        return 0.0;
    }
    let mut worst: f64 = 0.0;
    for j in 0..x.ncols() {
        let col = x.column(j);
        let cn = col.norm();
        if cn == 0.0 {
            continue;
        }
        worst = worst.max((col.dot(residuals)).abs() / (cn * rn));
    }
    worst
}

/// Result of a logistic regression fit.
#[derive(Clone, Debug)]
pub struct LogisticFit {
    /// Coefficients in original column order.
    pub coef: DVector<f64>,
    /// Fitted probabilities per row.
    pub probs: DVector<f64>,
    /// True when the score norm reached [`LOGISTIC_SCORE_TOL`].
    pub converged: bool,
    /// Newton iterations used.
    pub iterations: usize,
    /// Final score norm `‖Xᵀ(y − p̂)‖₂`.
    pub score_norm: f64,
    /// True when some fitted probability reached numerical 0/1 — the
    /// signature of (quasi-)separated data, where the maximizer sits at
    /// infinity. The returned probabilities are still usable downstream
    /// because group propensities are clipped anyway.
    pub separated: bool,
}

/// Numerically stable `1/(1 + e^{−u})`.
pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

fn log_likelihood(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    let mut ll = 0.0;
    for i in 0..y.len() {
        let p = sigmoid(eta[i]).clamp(1e-12, 1.0 - 1e-12);
        ll += y[i] * p.ln() + (1.0 - y[i]) * (1.0 - p).ln();
    }
    ll
}

/// Logistic regression of a 0/1 response via iteratively reweighted least
/// squares with step halving. Collinear designs are handled by the
/// rank-revealing inner solve.
pub fn logistic(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LogisticFit> {
    if x.nrows() != y.len() {
        return Err(Error::Computation(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(Error::Computation("empty design matrix".to_string()));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Computation("logistic response must be 0 or 1".to_string()));
    }

    let n = x.nrows();
    let mut beta = DVector::zeros(x.ncols());
    let mut eta = DVector::zeros(n);
    let mut converged = false;
    let mut iterations = 0;
    let mut score_norm = f64::INFINITY;

    for iter in 0..LOGISTIC_MAX_ITER {
        iterations = iter + 1;
        let probs = eta.map(sigmoid);
        let score = x.transpose() * (y - &probs);
        score_norm = score.norm();
        if score_norm <= LOGISTIC_SCORE_TOL {
            converged = true;
            iterations = iter;
            break;
        }

        // Newton step as weighted least squares on the working response
        // z = η + (y − p)/w with weights w = p(1 − p).
        let mut w = vec![0.0; n];
        let mut z = DVector::zeros(n);
        for i in 0..n {
            let wi = (probs[i] * (1.0 - probs[i])).max(1e-10);
            w[i] = wi;
            z[i] = eta[i] + (y[i] - probs[i]) / wi;
        }
        let proposal = ols_weighted(x, &z, &w)?.coef;

        // Step-halve until the log-likelihood does not decrease.
        let ll_old = log_likelihood(y, &eta);
        let delta = &proposal - &beta;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_STEP_HALVINGS {
            let beta_try = &beta + &delta * lambda;
            let eta_try = x * &beta_try;
            if log_likelihood(y, &eta_try) >= ll_old - 1e-12 {
                beta = beta_try;
                eta = eta_try;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            // No productive step remains; report the current state.
            break;
        }
    }

    if !beta.iter().all(|v| v.is_finite()) {
        return Err(Error::Computation(
            "logistic regression produced non-finite coefficients".to_string(),
        ));
    }
    if !converged {
        let probs = eta.map(sigmoid);
        score_norm = (x.transpose() * (y - &probs)).norm();
    }
    let separated = eta.amax() > SEPARATION_MARGIN;
    let probs = eta.map(sigmoid);
    Ok(LogisticFit { coef: beta, probs, converged, iterations, score_norm, separated })
}

/// Options controlling nuisance fitting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NuisanceOptions {
    /// Propensity clipping bound: each `π̂_g` is clamped to `[eta, 1−eta]`
    /// before renormalization, and ratio denominators are floored at `eta`.
    pub eta: f64,
    /// Skip the log-variance regression and use a constant conditional
    /// variance (the pooled mean squared residual increment), making
    /// inverse-variance weights coincide with plain propensity weights.
    pub homoskedastic: bool,
}

impl Default for NuisanceOptions {
    fn default() -> Self {
        NuisanceOptions { eta: 0.01, homoskedastic: false }
    }
}

/// Which working model to deliberately break, for robustness experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Misspecification {
    /// Zero out every outcome-model evaluation (`μ̂⁰`, `δ̂_∞`, `δ̂_G`).
    Outcome,
    /// Replace all group propensities with the uniform distribution.
    Propensity,
}

/// Numerical health measures recorded while fitting nuisances.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    /// Worst residual/column cosine across the least-squares fits.
    pub ols_orthogonality: f64,
    /// Largest final score norm across the adoption-propensity logits.
    pub max_logistic_score: f64,
    /// Number of propensity logits flagged as separated.
    pub n_separated: usize,
    /// Number of propensity values clamped to `[eta, 1−eta]`.
    pub clipped_pi: usize,
    /// True when a constant variance replaced the log-variance regression
    /// because no untreated later-period rows existed.
    pub variance_fallback: bool,
}

/// Precomputed nuisance evaluations for one panel.
///
/// Group-indexed quantities use codes `0..=T`: code `g−1` for adoption
/// period `g` and code `T` for the never-treated group.
#[derive(Clone, Debug)]
pub struct NuisanceSet {
    t_max: usize,
    n_units: usize,
    eta: f64,
    /// `μ̂⁰_{g,t}(X_{it})`, indexed `(i·(T+1) + t)·(T+1) + gcode`.
    mu0: Vec<f64>,
    /// `δ̂_{∞,k}` per unit, indexed `i·T + (k−1)`, `k = 1..=T`.
    delta_inf: Vec<f64>,
    /// Model-implied own-group increment `δ̂_{G_i,k}`, same indexing.
    delta_own: Vec<f64>,
    /// `π̂_g(X_{it})`, same indexing as `mu0`.
    pi: Vec<f64>,
    /// `σ̂²_{g,t}(X_{it})`, same indexing as `mu0`.
    sigma2: Vec<f64>,
    outcome_misspecified: bool,
    propensity_misspecified: bool,
    diagnostics: NuisanceDiagnostics,
}

impl NuisanceSet {
    /// Builds a nuisance set directly from value arrays (primarily for
    /// tests and cross-checks). Indexing follows the accessor conventions;
    /// lengths are validated.
    #[allow(clippy::too_many_arguments)]
    pub fn from_values(
        t_max: usize,
        n_units: usize,
        eta: f64,
        mu0: Vec<f64>,
        delta_inf: Vec<f64>,
        delta_own: Vec<f64>,
        pi: Vec<f64>,
        sigma2: Vec<f64>,
    ) -> Result<NuisanceSet> {
        let per_row = (t_max + 1) * (t_max + 1) * n_units;
        if mu0.len() != per_row || pi.len() != per_row || sigma2.len() != per_row {
            return Err(Error::Computation(
                "group-indexed nuisance arrays must have n·(T+1)² entries".to_string(),
            ));
        }
        if delta_inf.len() != n_units * t_max || delta_own.len() != n_units * t_max {
            return Err(Error::Computation(
                "increment arrays must have n·T entries".to_string(),
            ));
        }
        Ok(NuisanceSet {
            t_max,
            n_units,
            eta,
            mu0,
            delta_inf,
            delta_own,
            pi,
            sigma2,
            outcome_misspecified: false,
            propensity_misspecified: false,
            diagnostics: NuisanceDiagnostics::default(),
        })
    }

    /// Last period index `T`.
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Number of units the set was fitted on.
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Clipping bound / ratio floor in force.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Numerical health measures from fitting.
    pub fn diagnostics(&self) -> &NuisanceDiagnostics {
        &self.diagnostics
    }

    /// True when outcome evaluations were deliberately zeroed.
    pub fn outcome_misspecified(&self) -> bool {
        self.outcome_misspecified
    }

    /// True when propensities were deliberately made uniform.
    pub fn propensity_misspecified(&self) -> bool {
        self.propensity_misspecified
    }

    fn gcode(&self, g: Group) -> usize {
        match g {
            Group::At(v) => v - 1,
            Group::Never => self.t_max,
        }
    }

    fn cell(&self, i: usize, t: usize, g: Group) -> usize {
        (i * (self.t_max + 1) + t) * (self.t_max + 1) + self.gcode(g)
    }

    /// Untreated conditional mean `μ̂⁰_{g,t}(X_{it})`.
    pub fn mu0(&self, i: usize, t: usize, g: Group) -> f64 {
        self.mu0[self.cell(i, t, g)]
    }

    /// Untreated trend increment `δ̂_{∞,k}` evaluated on unit `i`'s
    /// covariates (`k = 1..=T`).
    pub fn delta_inf(&self, i: usize, k: usize) -> f64 {
        debug_assert!(k >= 1);
        self.delta_inf[i * self.t_max + (k - 1)]
    }

    /// Own-group model-implied increment `δ̂_{G_i,k}` for unit `i`.
    pub fn delta_own(&self, i: usize, k: usize) -> f64 {
        debug_assert!(k >= 1);
        self.delta_own[i * self.t_max + (k - 1)]
    }

    /// Group propensity `π̂_g(X_{it})`.
    pub fn pi(&self, i: usize, t: usize, g: Group) -> f64 {
        self.pi[self.cell(i, t, g)]
    }

    /// Sum of propensities of groups still untreated after period `k`,
    /// `Σ_{l>k} π̂_l(X_{it})`, evaluated at period-`t` covariates.
    pub fn pi_tail_sum(&self, i: usize, t: usize, k: usize) -> f64 {
        let mut s = self.pi(i, t, Group::Never);
        for l in (k + 1)..=self.t_max {
            s += self.pi(i, t, Group::At(l));
        }
        s
    }

    /// Conditional variance `σ̂²_{g,t}(X_{it})` of the one-period outcome
    /// change.
    pub fn sigma2(&self, i: usize, t: usize, g: Group) -> f64 {
        self.sigma2[self.cell(i, t, g)]
    }

    /// Groups that can serve as comparisons at period `k`: adopters after
    /// `k` plus the never-treated.
    pub fn comparison_groups(&self, k: usize) -> Vec<Group> {
        let mut out: Vec<Group> = ((k + 1)..=self.t_max).map(Group::At).collect();
        out.push(Group::Never);
        out
    }

    /// Returns a copy with one working model deliberately broken; see
    /// [`Misspecification`].
    pub fn misspecify(&self, which: Misspecification) -> NuisanceSet {
        let mut out = self.clone();
        match which {
            Misspecification::Outcome => {
                out.mu0.fill(0.0);
                out.delta_inf.fill(0.0);
                out.delta_own.fill(0.0);
                out.outcome_misspecified = true;
            }
            Misspecification::Propensity => {
                let u = 1.0 / (self.t_max as f64 + 1.0);
                out.pi.fill(u);
                out.propensity_misspecified = true;
            }
        }
        out
    }
}

/// Returns a copy of `ns` with the requested working model broken; free
/// function counterpart of [`NuisanceSet::misspecify`].
pub fn misspecify(ns: &NuisanceSet, which: Misspecification) -> NuisanceSet {
    ns.misspecify(which)
}

/// Fits all working models on a panel and precomputes nuisance evaluations.
///
/// Steps: (1) outcome regression on all rows; (2) log-variance regression of
/// squared residual increments on untreated later-period rows (or a pooled
/// constant under `homoskedastic`, or as fallback when no such rows exist);
/// (3) for every covariate period `t` and threshold `k`, a logistic
/// regression of `I(G ≤ k)` on `(1, X_t)`; cumulative probabilities are
/// sorted into monotone order, differenced into group propensities, clamped
/// to `[eta, 1−eta]`, and renormalized. Thresholds whose response is
/// constant skip the logit and use the clamped empirical frequency.
pub fn fit_nuisances(panel: &Panel, opts: &NuisanceOptions) -> Result<NuisanceSet> {
    if !(opts.eta > 0.0 && opts.eta < 0.5) {
        return Err(Error::Validation(format!(
            "eta must lie in (0, 0.5), got {}",
            opts.eta
        )));
    }
    let t_max = panel.t_max();
    let n = panel.n_units();
    let n_periods = t_max + 1;
    let n_groups = t_max + 1;
    let mut diag = NuisanceDiagnostics::default();

    // Outcome model.
    let od = build_outcome_design(panel);
    let outcome_fit = ols(&od.x, &od.y)?;
    diag.ols_orthogonality = residual_orthogonality(&od.x, &outcome_fit.residuals);

    // Variance model (or pooled constant).
    let vd = build_variance_design(panel, &outcome_fit.residuals);
    let pooled_constant = vd.as_ref().map_or(1.0, |d| {
        let mut s = 0.0;
        for &(i, t) in &d.rows {
            let idx = i * n_periods + t;
            let dr = outcome_fit.residuals[idx] - outcome_fit.residuals[idx - 1];
            s += dr * dr;
        }
        (s / d.rows.len() as f64).max(1e-12)
    });
    let variance_fit = if opts.homoskedastic {
        None
    } else if let Some(d) = &vd {
        let fit = ols(&d.x, &d.y)?;
        diag.ols_orthogonality = diag
            .ols_orthogonality
            .max(residual_orthogonality(&d.x, &fit.residuals));
        Some((fit, d.layout))
    } else {
        diag.variance_fallback = true;
        None
    };

    // Adoption-propensity logits: cumulative thresholds per covariate period.
    enum ThresholdFit {
        Coef(DVector<f64>),
        Constant(f64),
    }
    let mut fits: Vec<Vec<ThresholdFit>> = Vec::with_capacity(n_periods);
    for t in 0..=t_max {
        let x = build_propensity_design(panel, t);
        let mut per_threshold = Vec::with_capacity(t_max);
        for k in 1..=t_max {
            let y = threshold_response(panel, k);
            let mean = y.sum() / n as f64;
            if mean == 0.0 || mean == 1.0 {
                per_threshold.push(ThresholdFit::Constant(
                    mean.clamp(opts.eta, 1.0 - opts.eta),
                ));
                continue;
            }
            let fit = logistic(&x, &y)?;
            diag.max_logistic_score = diag.max_logistic_score.max(fit.score_norm);
            if fit.separated {
                diag.n_separated += 1;
            }
            per_threshold.push(ThresholdFit::Coef(fit.coef));
        }
        fits.push(per_threshold);
    }

    // Precompute dense nuisance arrays.
    let mut mu0 = vec![0.0; n * n_periods * n_groups];
    let mut pi = vec![0.0; n * n_periods * n_groups];
    let mut sigma2 = vec![0.0; n * n_periods * n_groups];
    let mut delta_inf = vec![0.0; n * t_max];
    let mut delta_own = vec![0.0; n * t_max];
    let groups: Vec<Group> = {
        let mut v: Vec<Group> = (1..=t_max).map(Group::At).collect();
        v.push(Group::Never);
        v
    };

    let mut cum = vec![0.0; t_max];
    for i in 0..n {
        for t in 0..=t_max {
            let x = panel.x(i, t);

            // Cumulative adoption probabilities, repaired to monotone order.
            for k in 1..=t_max {
                cum[k - 1] = match &fits[t][k - 1] {
                    ThresholdFit::Constant(c) => *c,
                    ThresholdFit::Coef(coef) => {
                        let mut u = coef[0];
                        for (j, &xv) in x.iter().enumerate() {
                            u += coef[1 + j] * xv;
                        }
                        sigmoid(u)
                    }
                };
            }
            cum.sort_by(f64::total_cmp);

            // Difference into group propensities, clamp, renormalize.
            let base = (i * n_periods + t) * n_groups;
            let mut sum = 0.0;
            for gi in 0..n_groups {
                let raw = if gi == 0 {
                    cum[0]
                } else if gi < t_max {
                    cum[gi] - cum[gi - 1]
                } else {
                    1.0 - cum[t_max - 1]
                };
                let clipped = raw.clamp(opts.eta, 1.0 - opts.eta);
                if clipped != raw {
                    diag.clipped_pi += 1;
                }
                pi[base + gi] = clipped;
                sum += clipped;
            }
            for gi in 0..n_groups {
                pi[base + gi] /= sum;
            }

            // Untreated means and conditional variances for every group.
            for (gi, &g) in groups.iter().enumerate() {
                mu0[base + gi] = od.layout.mu0(&outcome_fit.coef, g, t, x);
                sigma2[base + gi] = match &variance_fit {
                    Some((fit, layout)) => {
                        let lv = layout.log_sigma2(&fit.coef, g, t, x).clamp(-700.0, 700.0);
                        lv.exp()
                    }
                    None => pooled_constant,
                };
            }
        }

        // Trend increments: the untreated model difference is group-free, so
        // evaluate it at the never-treated reference.
        for k in 1..=t_max {
            let d_inf = od.layout.mu0(&outcome_fit.coef, Group::Never, k, panel.x(i, k))
                - od.layout.mu0(&outcome_fit.coef, Group::Never, k - 1, panel.x(i, k - 1));
            delta_inf[i * t_max + (k - 1)] = d_inf;
            let g = panel.group(i);
            delta_own[i * t_max + (k - 1)] = od.layout.mu(&outcome_fit.coef, g, k, panel.x(i, k))
                - od.layout.mu(&outcome_fit.coef, g, k - 1, panel.x(i, k - 1));
        }
    }

    Ok(NuisanceSet {
        t_max,
        n_units: n,
        eta: opts.eta,
        mu0,
        delta_inf,
        delta_own,
        pi,
        sigma2,
        outcome_misspecified: false,
        propensity_misspecified: false,
        diagnostics: diag,
    })
}
