//! Design matrices for the three working models fitted on a panel.
//!
//! - Outcome model (all `(i, t)` rows):
//!   `Y_t = λ_t + γ_G + Σ_k α_k I(t−G=k) + β₁ᵀX_t + β₂ᵀX_t D_t + β₃ᵀX_t t + ε_t`
//!   with a global intercept; `λ_0` and the never-treated `γ` are reference
//!   levels. The exposure dummies `I(t−G=k)`, `k = 0..T−1`, span every
//!   treated (group, period) combination, so a separate level shift `αD_t`
//!   would be collinear and is omitted. The untreated conditional mean is
//!   `μ⁰_{g,t}(x) = intercept + λ_t + γ_g + β₁ᵀx + β₃ᵀx·t`.
//! - Variance model (rows with `D_t = 0`, `t ≥ 1`): regression of
//!   `log{(ε̂_t − ε̂_{t−1})² + 1e−12}` on period and group levels plus `X_t`,
//!   giving the conditional heteroskedasticity profile used by
//!   inverse-variance weighting; `λ*_1` and γ* of both the never-treated and
//!   group 1 (which has no untreated rows with `t ≥ 1`) are references.
//! - Adoption-propensity models: for each covariate period `t` and each
//!   threshold `k ∈ 1..=T`, a logistic regression of `I(G ≤ k)` on
//!   `(1, X_t)` over all units; cumulative probabilities are assembled into
//!   per-group propensities downstream.

use nalgebra::{DMatrix, DVector};

use crate::panel::{Group, Panel};

/// Column layout of the outcome design; all indices derive from `t_max` and
/// the covariate dimension `p`.
///
/// Order: intercept, `λ_t` for `t = 1..=T`, `γ_g` for `g = 1..=T`, exposure
/// dummies `I(t−G=k)` for `k = 0..=T−1`, then the covariate blocks `X`,
/// `X·D`, `X·t`.
#[derive(Clone, Copy, Debug)]
pub struct OutcomeLayout {
    /// Last period index `T`.
    pub t_max: usize,
    /// Covariate dimension.
    pub p: usize,
}

impl OutcomeLayout {
    /// Total number of columns: `1 + 3T + 3p`.
    pub fn n_cols(&self) -> usize {
        1 + 3 * self.t_max + 3 * self.p
    }

    fn col_lambda(&self, t: usize) -> usize {
        debug_assert!((1..=self.t_max).contains(&t));
        t
    }

    fn col_gamma(&self, g: usize) -> usize {
        debug_assert!((1..=self.t_max).contains(&g));
        self.t_max + g
    }

    fn col_exposure(&self, k: usize) -> usize {
        debug_assert!(k < self.t_max);
        2 * self.t_max + 1 + k
    }

    fn col_x(&self, j: usize) -> usize {
        3 * self.t_max + 1 + j
    }

    fn col_xd(&self, j: usize) -> usize {
        3 * self.t_max + 1 + self.p + j
    }

    fn col_xt(&self, j: usize) -> usize {
        3 * self.t_max + 1 + 2 * self.p + j
    }

    /// Fills one design row for a unit in group `g` observed at period `t`
    /// with covariates `x`.
    pub fn fill_row(&self, row: &mut [f64], g: Group, t: usize, x: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols());
        debug_assert_eq!(x.len(), self.p);
        row.fill(0.0);
        row[0] = 1.0;
        if t >= 1 {
            row[self.col_lambda(t)] = 1.0;
        }
        let treated = g.treated_by(t);
        if let Group::At(gv) = g {
            row[self.col_gamma(gv)] = 1.0;
            if treated {
                row[self.col_exposure(t - gv)] = 1.0;
            }
        }
        for (j, &xv) in x.iter().enumerate() {
            row[self.col_x(j)] = xv;
            if treated {
                row[self.col_xd(j)] = xv;
            }
            row[self.col_xt(j)] = xv * t as f64;
        }
    }

    /// Untreated conditional mean `μ⁰_{g,t}(x)` implied by fitted
    /// coefficients: intercept + `λ_t` + `γ_g` + `β₁ᵀx` + `β₃ᵀx·t`
    /// (treatment terms forced to zero).
    pub fn mu0(&self, coef: &DVector<f64>, g: Group, t: usize, x: &[f64]) -> f64 {
        let mut v = coef[0];
        if t >= 1 {
            v += coef[self.col_lambda(t)];
        }
        if let Group::At(gv) = g {
            v += coef[self.col_gamma(gv)];
        }
        for (j, &xv) in x.iter().enumerate() {
            v += coef[self.col_x(j)] * xv + coef[self.col_xt(j)] * xv * t as f64;
        }
        v
    }

    /// Conditional mean including treatment terms: `μ⁰_{g,t}(x)` plus, when
    /// the unit is treated at `t`, the exposure effect `α_{t−g} + β₂ᵀx`.
    pub fn mu(&self, coef: &DVector<f64>, g: Group, t: usize, x: &[f64]) -> f64 {
        let mut v = self.mu0(coef, g, t, x);
        if let Group::At(gv) = g {
            if g.treated_by(t) {
                v += coef[self.col_exposure(t - gv)];
                for (j, &xv) in x.iter().enumerate() {
                    v += coef[self.col_xd(j)] * xv;
                }
            }
        }
        v
    }
}

/// Outcome design over all `(i, t)` rows, ordered row-major by unit then
/// period (row index `i·(T+1) + t`).
pub struct OutcomeDesign {
    /// `n(T+1) × (1 + 3T + 3p)` design matrix.
    pub x: DMatrix<f64>,
    /// Outcome vector in the same row order.
    pub y: DVector<f64>,
    /// Column layout for downstream evaluation.
    pub layout: OutcomeLayout,
}

/// Builds the outcome design for the full panel.
pub fn build_outcome_design(panel: &Panel) -> OutcomeDesign {
    let layout = OutcomeLayout { t_max: panel.t_max(), p: panel.n_covariates() };
    let n_rows = panel.n_units() * (panel.t_max() + 1);
    let n_cols = layout.n_cols();
    let mut x = DMatrix::zeros(n_rows, n_cols);
    let mut y = DVector::zeros(n_rows);
    let mut row_buf = vec![0.0; n_cols];
    for i in 0..panel.n_units() {
        for t in 0..=panel.t_max() {
            let r = i * (panel.t_max() + 1) + t;
            layout.fill_row(&mut row_buf, panel.group(i), t, panel.x(i, t));
            for (c, &v) in row_buf.iter().enumerate() {
                x[(r, c)] = v;
            }
            y[r] = panel.y(i, t);
        }
    }
    OutcomeDesign { x, y, layout }
}

/// Column layout of the variance design.
///
/// Order: intercept, `λ*_t` for `t = 2..=T`, `γ*_g` for `g = 2..=T`, then
/// `X_t`. Rows exist only for untreated observations with `t ≥ 1`, so
/// `t = 1` is the period reference and groups never treated or adopting at
/// period 1 (which contributes no untreated `t ≥ 1` rows) are the group
/// reference.
#[derive(Clone, Copy, Debug)]
pub struct VarianceLayout {
    /// Last period index `T`.
    pub t_max: usize,
    /// Covariate dimension.
    pub p: usize,
}

impl VarianceLayout {
    /// Total number of columns: `1 + 2(T−1) + p`.
    pub fn n_cols(&self) -> usize {
        1 + 2 * (self.t_max - 1) + self.p
    }

    fn col_lambda(&self, t: usize) -> usize {
        debug_assert!((2..=self.t_max).contains(&t));
        t - 1
    }

    fn col_gamma(&self, g: usize) -> usize {
        debug_assert!((2..=self.t_max).contains(&g));
        self.t_max - 1 + g - 1
    }

    fn col_x(&self, j: usize) -> usize {
        2 * (self.t_max - 1) + 1 + j
    }

    /// Fills one variance-design row for group `g` at period `t`.
    pub fn fill_row(&self, row: &mut [f64], g: Group, t: usize, x: &[f64]) {
        debug_assert_eq!(row.len(), self.n_cols());
        row.fill(0.0);
        row[0] = 1.0;
        if t >= 2 {
            row[self.col_lambda(t)] = 1.0;
        }
        if let Group::At(gv) = g {
            if gv >= 2 {
                row[self.col_gamma(gv)] = 1.0;
            }
        }
        for (j, &xv) in x.iter().enumerate() {
            row[self.col_x(j)] = xv;
        }
    }

    /// Fitted log conditional variance `log σ̂²_{g,t}(x)`.
    pub fn log_sigma2(&self, coef: &DVector<f64>, g: Group, t: usize, x: &[f64]) -> f64 {
        let mut v = coef[0];
        if t >= 2 {
            v += coef[self.col_lambda(t)];
        }
        if let Group::At(gv) = g {
            if gv >= 2 {
                v += coef[self.col_gamma(gv)];
            }
        }
        for (j, &xv) in x.iter().enumerate() {
            v += coef[self.col_x(j)] * xv;
        }
        v
    }
}

/// Variance design built from outcome-fit residuals.
pub struct VarianceDesign {
    /// Design matrix over untreated rows with `t ≥ 1`.
    pub x: DMatrix<f64>,
    /// Response `log{(ε̂_t − ε̂_{t−1})² + 1e−12}` per row.
    pub y: DVector<f64>,
    /// `(unit, period)` of each row, in order.
    pub rows: Vec<(usize, usize)>,
    /// Column layout for downstream evaluation.
    pub layout: VarianceLayout,
}

/// Small ridge inside the log so exactly-zero residual differences stay
/// finite; it perturbs fitted log-variances only at the 1e−12 scale.
const LOG_FLOOR: f64 = 1e-12;

/// Builds the variance design from outcome residuals (indexed `i·(T+1)+t`
/// like the outcome design). Returns `None` when no unit is untreated at any
/// period `t ≥ 1`, in which case no heteroskedasticity profile is
/// identifiable and callers fall back to a constant variance.
pub fn build_variance_design(panel: &Panel, residuals: &DVector<f64>) -> Option<VarianceDesign> {
    let t_max = panel.t_max();
    let layout = VarianceLayout { t_max, p: panel.n_covariates() };
    let mut rows = Vec::new();
    for i in 0..panel.n_units() {
        for t in 1..=t_max {
            if !panel.d(i, t) {
                rows.push((i, t));
            }
        }
    }
    if rows.is_empty() {
        return None;
    }
    let mut x = DMatrix::zeros(rows.len(), layout.n_cols());
    let mut y = DVector::zeros(rows.len());
    let mut row_buf = vec![0.0; layout.n_cols()];
    for (r, &(i, t)) in rows.iter().enumerate() {
        layout.fill_row(&mut row_buf, panel.group(i), t, panel.x(i, t));
        for (c, &v) in row_buf.iter().enumerate() {
            x[(r, c)] = v;
        }
        let idx = i * (t_max + 1) + t;
        let d = residuals[idx] - residuals[idx - 1];
        y[r] = (d * d + LOG_FLOOR).ln();
    }
    Some(VarianceDesign { x, y, rows, layout })
}

/// Design matrix `(1, X_t)` over all units for the adoption-propensity
/// logits evaluated at period-`t` covariates.
pub fn build_propensity_design(panel: &Panel, t: usize) -> DMatrix<f64> {
    let p = panel.n_covariates();
    let mut x = DMatrix::zeros(panel.n_units(), 1 + p);
    for i in 0..panel.n_units() {
        x[(i, 0)] = 1.0;
        for (j, &xv) in panel.x(i, t).iter().enumerate() {
            x[(i, 1 + j)] = xv;
        }
    }
    x
}

/// Binary response `I(G ≤ k)` per unit for the threshold-`k` adoption logit.
pub fn threshold_response(panel: &Panel, k: usize) -> DVector<f64> {
    DVector::from_fn(panel.n_units(), |i, _| {
        if panel.group(i).treated_by(k) { 1.0 } else { 0.0 }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two units over periods 0..=2: one adopting at 1, one never treated,
    /// one covariate equal to `10t + unit`.
    fn tiny_panel() -> Panel {
        let group = vec![Group::At(1), Group::Never];
        let outcome = vec![0.0, 1.0, 2.0, 0.5, 1.5, 2.5];
        let covariates = vec![0.0, 10.0, 20.0, 1.0, 11.0, 21.0];
        Panel::from_parts(2, group, outcome, covariates, vec!["x1".to_string()]).unwrap()
    }

    #[test]
    fn outcome_design_has_expected_shape_and_entries() {
        let panel = tiny_panel();
        let d = build_outcome_design(&panel);
        // T = 2, p = 1 → 1 + 3·2 + 3·1 = 10 columns, 6 rows.
        assert_eq!(d.x.nrows(), 6);
        assert_eq!(d.x.ncols(), 10);

        // Unit 0 (group 1) at t = 2: intercept, λ_2, γ_1, exposure k = 1,
        // x = 20, x·D = 20, x·t = 40.
        let r = 2;
        assert_eq!(d.x[(r, 0)], 1.0);
        assert_eq!(d.x[(r, 2)], 1.0, "λ_2");
        assert_eq!(d.x[(r, 3)], 1.0, "γ_1");
        assert_eq!(d.x[(r, 6)], 1.0, "exposure t−g = 1");
        assert_eq!(d.x[(r, 7)], 20.0, "x");
        assert_eq!(d.x[(r, 8)], 20.0, "x·D");
        assert_eq!(d.x[(r, 9)], 40.0, "x·t");
        assert_eq!(d.y[r], 2.0);

        // Unit 1 (never treated) at t = 1: no γ, no exposure, no x·D.
        let r = 4;
        assert_eq!(d.x[(r, 1)], 1.0, "λ_1");
        assert_eq!(d.x[(r, 3)], 0.0);
        assert_eq!(d.x[(r, 4)], 0.0);
        assert_eq!(d.x[(r, 8)], 0.0);
        assert_eq!(d.x[(r, 7)], 11.0);
        assert_eq!(d.x[(r, 9)], 11.0);
    }

    #[test]
    fn mu0_matches_hand_dot_product() {
        let layout = OutcomeLayout { t_max: 2, p: 1 };
        let coef = DVector::from_vec(vec![
            1.0, // intercept
            0.5, 0.25, // λ_1, λ_2
            2.0, 3.0, // γ_1, γ_2
            10.0, 20.0, // exposure 0, 1
            0.1, // β₁
            100.0, // β₂ (must not enter μ⁰)
            0.01, // β₃
        ]);
        // μ⁰ for g = 1, t = 2, x = 4: 1 + 0.25 + 2 + 0.1·4 + 0.01·4·2 = 3.73.
        let v = layout.mu0(&coef, Group::At(1), 2, &[4.0]);
        assert!((v - 3.73).abs() < 1e-12, "got {v}");
        // Treated mean adds exposure (t−g = 1 → 20) and β₂ᵀx = 400.
        let m = layout.mu(&coef, Group::At(1), 2, &[4.0]);
        assert!((m - 423.73).abs() < 1e-12, "got {m}");
        // Never-treated drops γ and all treatment terms.
        let v = layout.mu0(&coef, Group::Never, 1, &[1.0]);
        assert!((v - (1.0 + 0.5 + 0.1 + 0.01)).abs() < 1e-12, "got {v}");
        assert_eq!(layout.mu(&coef, Group::Never, 1, &[1.0]), v);
    }

    #[test]
    fn variance_design_selects_untreated_later_rows() {
        let panel = tiny_panel();
        let residuals = DVector::from_vec(vec![0.1, 0.3, 0.2, 0.0, 2.0, 1.0]);
        let d = build_variance_design(&panel, &residuals).expect("has untreated rows");
        // Unit 0 is treated from t = 1, so only unit 1 contributes (t = 1, 2).
        assert_eq!(d.rows, vec![(1, 1), (1, 2)]);
        assert_eq!(d.x.ncols(), 1 + 2 * (2 - 1) + 1);
        // Response at (1, 1): log((2.0 − 0.0)² + 1e−12).
        assert!((d.y[0] - (4.0f64 + 1e-12).ln()).abs() < 1e-15);
        // Never-treated rows carry no group dummy.
        assert_eq!(d.x[(0, 2)], 0.0);
    }

    #[test]
    fn variance_design_empty_when_everyone_treated_after_period_zero() {
        let group = vec![Group::At(1), Group::At(1)];
        let outcome = vec![0.0; 4];
        let panel = Panel::from_parts(1, group, outcome, vec![], vec![]).unwrap();
        let residuals = DVector::zeros(4);
        assert!(build_variance_design(&panel, &residuals).is_none());
    }

    #[test]
    fn propensity_design_and_threshold_response() {
        let panel = tiny_panel();
        let x = build_propensity_design(&panel, 2);
        assert_eq!((x.nrows(), x.ncols()), (2, 2));
        assert_eq!(x[(0, 1)], 20.0);
        assert_eq!(x[(1, 1)], 21.0);
        let y1 = threshold_response(&panel, 1);
        assert_eq!(y1.as_slice(), &[1.0, 0.0]);
        let y2 = threshold_response(&panel, 2);
        assert_eq!(y2.as_slice(), &[1.0, 0.0]);
    }
}
