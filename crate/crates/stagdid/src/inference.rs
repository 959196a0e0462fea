//! Influence-function inference: cell-level standard errors, aggregation of
//! cell effects by group / period / exposure duration / overall, the pooled
//! observation-weight form of the overall effect, and confidence intervals.
//!
//! Every cell estimator here has the form `τ̂ = P̂ₙ[b_i]/P̂(g)` with per-unit
//! bracket contributions `b_i`; its influence function is
//! `ψ_i = (b_i − I(G_i=g) τ̂)/P̂(g)`, which has exact sample mean zero, and
//! `SE = √(P̂ₙ ψ² / n)`. Aggregates `τ̂ = Σ_c ω_c τ̂_c / Ω` (with `ω_c = 1`
//! within a group, `ω_c = P̂(g_c)` otherwise, and `Ω = Σ_c ω_c`) inherit
//!
//! `IF_i = (1/Ω) Σ_c [ ω_c ψ_{c,i} + (ω_c/P̂(g_c)) I(G_i=g_c)(τ̂_c − τ̂) ]`,
//!
//! the delta-method influence function accounting for the estimated group
//! shares; it also has exact sample mean zero. When some cells in an
//! aggregate's index set are not estimable, the weights renormalize over the
//! estimable ones and the aggregate is flagged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    att_cell, cell_is_estimable, h_weights_overall, outcome_residual, twfe, CellEstimate, Method,
    Pooling, TwfeSeKind,
};
use crate::linmod::NuisanceSet;
use crate::panel::{tally, Group, Panel};

/// Inverse standard normal CDF (Acklam's rational approximation, absolute
/// error below 1.2e−9). Defined for `p ∈ (0, 1)`.
pub fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| -> f64 {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p > 1.0 - P_LOW {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Two-sided normal confidence interval `estimate ± z_{(1+level)/2} · se`.
pub fn ci(estimate: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Validation(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let z = normal_quantile(0.5 + level / 2.0);
    Ok((estimate - z * se, estimate + z * se))
}

/// A cell estimate together with its influence function.
#[derive(Clone, Debug)]
pub struct CellInference {
    /// The point estimate and cell metadata.
    pub cell: CellEstimate,
    /// Influence-function standard error.
    pub se: f64,
    /// Per-unit influence values `ψ_i`; sample mean is exactly zero.
    pub psi: Vec<f64>,
}

/// Estimates one cell and its influence function
/// `ψ_i = (b_i − I(G_i=g) τ̂)/P̂(g)`.
pub fn cell_if(
    panel: &Panel,
    ns: &NuisanceSet,
    g: usize,
    t: usize,
    base_period: Option<usize>,
    method: Method,
) -> Result<CellInference> {
    let cell = att_cell(panel, ns, g, t, base_period, method)?;
    let (b, _) = crate::estimators::cell_contributions(panel, ns, g, t, base_period, method)?;
    let n = panel.n_units() as f64;
    let p_g = cell.n_treated as f64 / n;
    let target = Group::At(g);
    let psi: Vec<f64> = (0..panel.n_units())
        .map(|i| {
            let ind = if panel.group(i) == target { 1.0 } else { 0.0 };
            (b[i] - ind * cell.estimate) / p_g
        })
        .collect();
    let se = (psi.iter().map(|v| v * v).sum::<f64>()).sqrt() / n;
    Ok(CellInference { cell, se, psi })
}

/// Ways to combine the cell effects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggregationKind {
    /// No combination: report the cells themselves.
    Cell,
    /// Average over periods within each adopting group.
    Group,
    /// Share-weighted average over groups treated at each period.
    Period,
    /// Share-weighted average at each exposure duration `s ≥ 1`
    /// (cells `(g, g+s−1)`), i.e. the event-study curve.
    Dynamic,
    /// Share-weighted average over all cells.
    Overall,
}

impl std::fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AggregationKind::Cell => "cell",
            AggregationKind::Group => "group",
            AggregationKind::Period => "period",
            AggregationKind::Dynamic => "dynamic",
            AggregationKind::Overall => "overall",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cell" => Ok(AggregationKind::Cell),
            "group" => Ok(AggregationKind::Group),
            "period" => Ok(AggregationKind::Period),
            "dynamic" => Ok(AggregationKind::Dynamic),
            "overall" => Ok(AggregationKind::Overall),
            other => Err(Error::Validation(format!(
                "unknown aggregation '{other}' (expected cell, group, period, dynamic, or overall)"
            ))),
        }
    }
}

/// An aggregated effect with its influence function.
#[derive(Clone, Debug)]
pub struct AggregateInference {
    /// Aggregation kind.
    pub kind: AggregationKind,
    /// Group for `Group`, period for `Period`, exposure duration for
    /// `Dynamic`, `None` for `Overall`.
    pub index: Option<usize>,
    /// Weighted cell-effect combination.
    pub estimate: f64,
    /// Influence-function standard error.
    pub se: f64,
    /// Number of estimable cells combined.
    pub cells_used: usize,
    /// True when non-estimable cells forced weight renormalization.
    pub missing_cells: bool,
    /// Per-unit influence values; sample mean is exactly zero.
    pub if_values: Vec<f64>,
}

fn combine(
    panel: &Panel,
    cells: &[&CellInference],
    kind: AggregationKind,
    index: Option<usize>,
    expected: usize,
) -> AggregateInference {
    let n = panel.n_units();
    let shares = tally(panel);
    let omega: Vec<f64> = cells
        .iter()
        .map(|c| match kind {
            AggregationKind::Group => 1.0,
            _ => shares.proportion(Group::At(c.cell.g)),
        })
        .collect();
    let total: f64 = omega.iter().sum();
    let estimate = cells
        .iter()
        .zip(&omega)
        .map(|(c, w)| w * c.cell.estimate)
        .sum::<f64>()
        / total;

    let mut if_values = vec![0.0; n];
    for (c, w) in cells.iter().zip(&omega) {
        let p_g = shares.proportion(Group::At(c.cell.g));
        let recenter = (w / p_g) * (c.cell.estimate - estimate);
        let target = Group::At(c.cell.g);
        for i in 0..n {
            let ind = if panel.group(i) == target { 1.0 } else { 0.0 };
            if_values[i] += w * c.psi[i] + ind * recenter;
        }
    }
    for v in &mut if_values {
        *v /= total;
    }
    let se = if_values.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;

    AggregateInference {
        kind,
        index,
        estimate,
        se,
        cells_used: cells.len(),
        missing_cells: cells.len() < expected,
        if_values,
    }
}

/// Aggregates estimated cells of a single method. Cells absent from the
/// input (because they were not estimable) renormalize the weights of the
/// remaining cells and set `missing_cells`. Returns one entry per non-empty
/// index; `Cell` yields an empty list.
pub fn aggregate(
    panel: &Panel,
    cells: &[CellInference],
    kind: AggregationKind,
) -> Result<Vec<AggregateInference>> {
    if kind == AggregationKind::Cell {
        return Ok(Vec::new());
    }
    if cells.is_empty() {
        return Ok(Vec::new());
    }
    let method = cells[0].cell.method;
    for c in cells {
        if c.cell.method != method {
            return Err(Error::Validation(
                "cannot aggregate cells from different estimators".to_string(),
            ));
        }
        if c.psi.len() != panel.n_units() {
            return Err(Error::Computation(
                "cell influence length does not match the panel".to_string(),
            ));
        }
    }
    let t_max = panel.t_max();
    let mut out = Vec::new();
    match kind {
        AggregationKind::Cell => unreachable!(),
        AggregationKind::Group => {
            for g in 1..=t_max {
                let set: Vec<&CellInference> = cells.iter().filter(|c| c.cell.g == g).collect();
                if !set.is_empty() {
                    out.push(combine(panel, &set, kind, Some(g), t_max - g + 1));
                }
            }
        }
        AggregationKind::Period => {
            for t in 1..=t_max {
                let set: Vec<&CellInference> = cells.iter().filter(|c| c.cell.t == t).collect();
                if !set.is_empty() {
                    out.push(combine(panel, &set, kind, Some(t), t));
                }
            }
        }
        AggregationKind::Dynamic => {
            for s in 1..=t_max {
                let set: Vec<&CellInference> = cells
                    .iter()
                    .filter(|c| c.cell.t == c.cell.g + s - 1)
                    .collect();
                if !set.is_empty() {
                    out.push(combine(panel, &set, kind, Some(s), t_max - s + 1));
                }
            }
        }
        AggregationKind::Overall => {
            let set: Vec<&CellInference> = cells.iter().collect();
            out.push(combine(panel, &set, kind, None, t_max * (t_max + 1) / 2));
        }
    }
    Ok(out)
}

/// Overall effect computed through the summed observation weights `H_{G,t}`
/// rather than cell by cell.
#[derive(Clone, Debug)]
pub struct OverallViaH {
    /// Weighted residual sum divided by the count of treated observations.
    pub estimate: f64,
    /// Influence-function standard error.
    pub se: f64,
    /// Per-unit influence values
    /// `φ_i = Σ_t H_{it}(R_{it} − D_{it} τ̂) / P̂ₙ[Σ_t D_t]`.
    pub if_values: Vec<f64>,
    /// Ratio evaluations whose denominator was floored.
    pub floored_ratios: usize,
}

/// Computes the overall effect via pooled observation weights,
/// `τ̂ = Σ_{i,t} H_{it} R_{it} / Σ_{i,t} D_{it}`, with its influence
/// function. Algebraically identical to aggregating every cell with weights
/// `P̂(g)` — a useful cross-check and a single-pass formula.
pub fn overall_via_h(panel: &Panel, ns: &NuisanceSet, method: Method) -> Result<OverallViaH> {
    let pooling = match method {
        Method::Aivw => Pooling::InverseVariance,
        Method::Aipw => Pooling::Propensity,
        other => {
            return Err(Error::Validation(format!(
                "pooled observation weights are defined for aipw and aivw, not {other}"
            )))
        }
    };
    let (h, floored) = h_weights_overall(panel, ns, pooling)?;
    let n = panel.n_units();
    let n_periods = panel.t_max() + 1;

    let mut treated_obs = 0usize;
    for i in 0..n {
        for t in 0..n_periods {
            if panel.d(i, t) {
                treated_obs += 1;
            }
        }
    }
    if treated_obs == 0 {
        return Err(Error::Computation(
            "panel has no treated observations".to_string(),
        ));
    }

    let mut num = 0.0;
    for i in 0..n {
        for t in 0..n_periods {
            let w = h[i * n_periods + t];
            if w != 0.0 {
                num += w * outcome_residual(panel, ns, i, t);
            }
        }
    }
    let estimate = num / treated_obs as f64;

    // C = P̂ₙ[Σ_t D_t]; φ_i sums H (R − D τ̂) over the unit's periods.
    let c = treated_obs as f64 / n as f64;
    let mut if_values = vec![0.0; n];
    for i in 0..n {
        let mut s = 0.0;
        for t in 0..n_periods {
            let w = h[i * n_periods + t];
            if w != 0.0 {
                let d = if panel.d(i, t) { 1.0 } else { 0.0 };
                s += w * (outcome_residual(panel, ns, i, t) - d * estimate);
            }
        }
        if_values[i] = s / c;
    }
    let se = if_values.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;
    Ok(OverallViaH { estimate, se, if_values, floored_ratios: floored })
}

/// One reported cell effect.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellReport {
    /// Estimator used.
    pub method: Method,
    /// Adoption period.
    pub g: usize,
    /// Outcome period.
    pub t: usize,
    /// Point estimate.
    pub estimate: f64,
    /// Influence-function standard error.
    pub se: f64,
    /// Confidence bounds at the run's level.
    pub lo: f64,
    /// Upper confidence bound.
    pub hi: f64,
    /// Treated units.
    pub n_treated: usize,
    /// Comparison units.
    pub n_comparison: usize,
}

/// One reported aggregate effect.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AggregateReport {
    /// Estimator used.
    pub method: Method,
    /// Aggregation kind.
    pub kind: AggregationKind,
    /// Group / period / exposure index (`None` for overall and `twfe`).
    pub index: Option<usize>,
    /// Point estimate.
    pub estimate: f64,
    /// Standard error.
    pub se: f64,
    /// Confidence bounds at the run's level.
    pub lo: f64,
    /// Upper confidence bound.
    pub hi: f64,
    /// Cells combined (0 for `twfe`).
    pub cells_used: usize,
    /// True when non-estimable cells forced weight renormalization.
    pub missing_cells: bool,
}

/// A cell excluded from estimation, with the reason.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SkippedCell {
    /// Estimator affected.
    pub method: Method,
    /// Adoption period.
    pub g: usize,
    /// Outcome period.
    pub t: usize,
    /// Why the cell was skipped.
    pub reason: String,
}

/// Numerical and data-quality notes accumulated during a run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Propensity values clamped plus ratio denominators floored.
    pub clipped_evals: usize,
    /// Cells excluded from estimation.
    pub skipped_cells: Vec<SkippedCell>,
    /// Propensity logits with numerically 0/1 fitted probabilities.
    pub n_separated: usize,
    /// True when a constant variance replaced the log-variance regression.
    pub variance_fallback: bool,
}

/// Options for a full estimation run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimationOptions {
    /// Estimators to run.
    pub methods: Vec<Method>,
    /// Aggregations to compute (cells are always reported).
    pub aggregates: Vec<AggregationKind>,
    /// Base period for `reg` / `wt-nt` / `wt-ny` (default: `g−1` per cell).
    pub base_period: Option<usize>,
    /// Confidence level for reported intervals.
    pub level: f64,
    /// Standard-error convention for `twfe`.
    pub twfe_se: TwfeSeKind,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            methods: vec![Method::Aivw],
            aggregates: vec![
                AggregationKind::Cell,
                AggregationKind::Group,
                AggregationKind::Period,
                AggregationKind::Dynamic,
                AggregationKind::Overall,
            ],
            base_period: None,
            level: 0.95,
            twfe_se: TwfeSeKind::ClusterRobust,
        }
    }
}

/// Full estimation output: cells, aggregates, and diagnostics.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EstimationSummary {
    /// Estimated cells for every cell-level method.
    pub cells: Vec<CellReport>,
    /// Aggregated effects (plus the `twfe` panel coefficient when requested).
    pub aggregates: Vec<AggregateReport>,
    /// Run diagnostics.
    pub diagnostics: Diagnostics,
}

/// Runs the requested estimators over every estimable cell and aggregation.
///
/// Non-estimable cells are skipped and recorded; aggregates over partially
/// missing index sets renormalize their weights and carry a flag. `twfe`
/// contributes a single overall row.
pub fn estimate_all(
    panel: &Panel,
    ns: &NuisanceSet,
    opts: &EstimationOptions,
) -> Result<EstimationSummary> {
    if opts.methods.is_empty() {
        return Err(Error::Validation("no estimators requested".to_string()));
    }
    let t_max = panel.t_max();
    let shares = tally(panel);
    let mut summary = EstimationSummary::default();
    let mut floored_total = 0usize;

    for &method in &opts.methods {
        if method == Method::Twfe {
            let fit = twfe(panel, opts.twfe_se)?;
            let (lo, hi) = ci(fit.estimate, fit.se, opts.level)?;
            summary.aggregates.push(AggregateReport {
                method,
                kind: AggregationKind::Overall,
                index: None,
                estimate: fit.estimate,
                se: fit.se,
                lo,
                hi,
                cells_used: 0,
                missing_cells: false,
            });
            continue;
        }

        let mut inferences: Vec<CellInference> = Vec::new();
        for g in 1..=t_max {
            for t in g..=t_max {
                let estimable = match method {
                    Method::Reg => shares.count(Group::At(g)) > 0,
                    Method::WtNt => {
                        shares.count(Group::At(g)) > 0 && shares.count(Group::Never) > 0
                    }
                    _ => cell_is_estimable(panel, g, t),
                };
                if !estimable {
                    summary.diagnostics.skipped_cells.push(SkippedCell {
                        method,
                        g,
                        t,
                        reason: if shares.count(Group::At(g)) == 0 {
                            format!("no units adopt at period {g}")
                        } else if method == Method::WtNt {
                            "no never-treated comparison units".to_string()
                        } else {
                            "no not-yet-treated comparison units at some summed period"
                                .to_string()
                        },
                    });
                    continue;
                }
                let inf = cell_if(panel, ns, g, t, opts.base_period, method)?;
                floored_total += inf.cell.floored_ratios;
                let (lo, hi) = ci(inf.cell.estimate, inf.se, opts.level)?;
                summary.cells.push(CellReport {
                    method,
                    g,
                    t,
                    estimate: inf.cell.estimate,
                    se: inf.se,
                    lo,
                    hi,
                    n_treated: inf.cell.n_treated,
                    n_comparison: inf.cell.n_comparison,
                });
                inferences.push(inf);
            }
        }

        for &kind in &opts.aggregates {
            for agg in aggregate(panel, &inferences, kind)? {
                let (lo, hi) = ci(agg.estimate, agg.se, opts.level)?;
                summary.aggregates.push(AggregateReport {
                    method,
                    kind: agg.kind,
                    index: agg.index,
                    estimate: agg.estimate,
                    se: agg.se,
                    lo,
                    hi,
                    cells_used: agg.cells_used,
                    missing_cells: agg.missing_cells,
                });
            }
        }
    }

    summary.diagnostics.clipped_evals = ns.diagnostics().clipped_pi + floored_total;
    summary.diagnostics.n_separated = ns.diagnostics().n_separated;
    summary.diagnostics.variance_fallback = ns.diagnostics().variance_fallback;
    Ok(summary)
}

/// Writes the cell table as CSV with columns
/// `g,t,estimate,se,n_treated,n_comparison,method`.
pub fn write_cells_csv<P: AsRef<std::path::Path>>(
    path: P,
    cells: &[CellReport],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["g", "t", "estimate", "se", "n_treated", "n_comparison", "method"])?;
    for c in cells {
        w.write_record(&[
            c.g.to_string(),
            c.t.to_string(),
            format!("{}", c.estimate),
            format!("{}", c.se),
            c.n_treated.to_string(),
            c.n_comparison.to_string(),
            c.method.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the event-study curve (dynamic aggregates of one method) as CSV
/// with columns `s,estimate,lo,hi`.
pub fn write_event_study_csv<P: AsRef<std::path::Path>>(
    path: P,
    aggregates: &[AggregateReport],
    method: Method,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["s", "estimate", "lo", "hi"])?;
    for a in aggregates {
        if a.method == method && a.kind == AggregationKind::Dynamic {
            let s = a.index.ok_or_else(|| {
                Error::Computation("dynamic aggregate without an exposure index".to_string())
            })?;
            w.write_record(&[
                s.to_string(),
                format!("{}", a.estimate),
                format!("{}", a.lo),
                format!("{}", a.hi),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linmod::{fit_nuisances, NuisanceOptions};

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn micro_panel() -> Panel {
        let group = vec![Group::At(1), Group::At(1), Group::Never, Group::Never];
        let outcome = vec![0.0, 3.0, 0.0, 3.0, 0.0, 2.0, 0.0, 1.0];
        Panel::from_parts(1, group, outcome, vec![], vec![]).unwrap()
    }

    #[test]
    fn normal_quantile_matches_reference_values() {
        assert!(approx(normal_quantile(0.975), 1.959963985, 1e-8));
        assert!(approx(normal_quantile(0.5), 0.0, 1e-12));
        assert!(approx(normal_quantile(0.9), 1.2815515655, 1e-8));
        // Symmetry, including the far tails.
        for p in [0.001, 0.01, 0.2, 0.4] {
            assert!(approx(normal_quantile(p), -normal_quantile(1.0 - p), 1e-9));
        }
    }

    #[test]
    fn ci_matches_hand_computation() {
        let (lo, hi) = ci(1.0, 0.1, 0.95).unwrap();
        assert!(approx(lo, 0.804, 1e-3), "lo {lo}");
        assert!(approx(hi, 1.196, 1e-3), "hi {hi}");
        assert!(ci(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cell_if_on_micro_panel_has_known_values() {
        // Contributions b = (1.5, 1.5, −0.5, 0.5), P̂(1) = 1/2, τ̂ = 1.5
        // give ψ = (0, 0, −1, 1) and SE = √2/4.
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let inf = cell_if(&panel, &ns, 1, 1, None, Method::Aivw).unwrap();
        assert!(approx(inf.cell.estimate, 1.5, 1e-9));
        let expected = [0.0, 0.0, -1.0, 1.0];
        for (i, &e) in expected.iter().enumerate() {
            assert!(approx(inf.psi[i], e, 1e-9), "ψ_{i} = {}", inf.psi[i]);
        }
        assert!(approx(inf.se, 0.3535533906, 1e-9), "se {}", inf.se);
        let mean: f64 = inf.psi.iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12, "ψ mean {mean}");
    }

    /// Hand-built cells on a 4-unit panel with groups (1, 2, Inf, Inf):
    /// τ̂_{1,1} = 1, τ̂_{1,2} = 2, τ̂_{2,2} = 3, shares P̂(1) = P̂(2) = 1/4.
    fn synthetic_cells(panel: &Panel) -> Vec<CellInference> {
        let mk = |g: usize, t: usize, estimate: f64| CellInference {
            cell: CellEstimate {
                method: Method::Aivw,
                g,
                t,
                estimate,
                n_treated: 1,
                n_comparison: 2,
                floored_ratios: 0,
            },
            se: 0.0,
            psi: vec![0.0; panel.n_units()],
        };
        vec![mk(1, 1, 1.0), mk(1, 2, 2.0), mk(2, 2, 3.0)]
    }

    fn aggregation_panel() -> Panel {
        let group = vec![Group::At(1), Group::At(2), Group::Never, Group::Never];
        let outcome = vec![0.0; 12];
        Panel::from_parts(2, group, outcome, vec![], vec![]).unwrap()
    }

    #[test]
    fn aggregation_weights_match_hand_arithmetic() {
        let panel = aggregation_panel();
        let cells = synthetic_cells(&panel);

        // Overall: Σ P̂(g) τ̂ / Σ = (0.25·1 + 0.25·2 + 0.25·3) / 0.75 = 2.
        let overall = aggregate(&panel, &cells, AggregationKind::Overall).unwrap();
        assert_eq!(overall.len(), 1);
        assert!(approx(overall[0].estimate, 2.0, 1e-12));
        assert!(!overall[0].missing_cells);

        // Groups: mean over periods → 1.5 and 3.
        let groups = aggregate(&panel, &cells, AggregationKind::Group).unwrap();
        assert_eq!(groups.len(), 2);
        assert!(approx(groups[0].estimate, 1.5, 1e-12));
        assert_eq!(groups[0].index, Some(1));
        assert!(approx(groups[1].estimate, 3.0, 1e-12));

        // Periods: t=1 → 1; t=2 → (0.25·2 + 0.25·3)/0.5 = 2.5.
        let periods = aggregate(&panel, &cells, AggregationKind::Period).unwrap();
        assert!(approx(periods[0].estimate, 1.0, 1e-12));
        assert!(approx(periods[1].estimate, 2.5, 1e-12));

        // Exposure durations: s=1 pools (1,1) and (2,2) → 2; s=2 is (1,2) → 2.
        let dyn_ = aggregate(&panel, &cells, AggregationKind::Dynamic).unwrap();
        assert!(approx(dyn_[0].estimate, 2.0, 1e-12));
        assert!(approx(dyn_[1].estimate, 2.0, 1e-12));

        // All aggregate influence functions have exact sample mean zero.
        for agg in overall.iter().chain(&groups).chain(&periods).chain(&dyn_) {
            let mean: f64 = agg.if_values.iter().sum::<f64>() / panel.n_units() as f64;
            assert!(mean.abs() < 1e-14, "{:?} IF mean {mean}", agg.kind);
        }
    }

    #[test]
    fn missing_cells_renormalize_and_flag() {
        let panel = aggregation_panel();
        let mut cells = synthetic_cells(&panel);
        cells.remove(1); // drop cell (1,2)
        let overall = aggregate(&panel, &cells, AggregationKind::Overall).unwrap();
        // (0.25·1 + 0.25·3)/0.5 = 2.
        assert!(approx(overall[0].estimate, 2.0, 1e-12));
        assert!(overall[0].missing_cells);
        assert_eq!(overall[0].cells_used, 2);
    }

    #[test]
    fn overall_via_h_matches_cell_aggregation() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        for method in [Method::Aivw, Method::Aipw] {
            let via_h = overall_via_h(&panel, &ns, method).unwrap();
            let inf = cell_if(&panel, &ns, 1, 1, None, method).unwrap();
            let agg = aggregate(&panel, &[inf], AggregationKind::Overall).unwrap();
            assert!(
                approx(via_h.estimate, agg[0].estimate, 1e-12),
                "{method}: {} vs {}",
                via_h.estimate,
                agg[0].estimate
            );
            assert!(approx(via_h.se, agg[0].se, 1e-12));
            for i in 0..panel.n_units() {
                assert!(
                    approx(via_h.if_values[i], agg[0].if_values[i], 1e-12),
                    "unit {i}"
                );
            }
            let mean: f64 = via_h.if_values.iter().sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn estimate_all_produces_cells_aggregates_and_diagnostics() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let opts = EstimationOptions {
            methods: vec![Method::Aivw, Method::Twfe],
            ..Default::default()
        };
        let summary = estimate_all(&panel, &ns, &opts).unwrap();
        assert_eq!(summary.cells.len(), 1);
        assert!(approx(summary.cells[0].estimate, 1.5, 1e-9));
        // Aggregates: group, period, dynamic, overall for aivw + twfe overall.
        assert_eq!(summary.aggregates.len(), 5);
        let twfe_row = summary
            .aggregates
            .iter()
            .find(|a| a.method == Method::Twfe)
            .unwrap();
        assert!(approx(twfe_row.estimate, 1.5, 1e-12));
        assert!(summary.diagnostics.skipped_cells.is_empty());
    }

    #[test]
    fn csv_writers_produce_expected_headers() {
        let panel = micro_panel();
        let ns = fit_nuisances(&panel, &NuisanceOptions::default()).unwrap();
        let summary = estimate_all(&panel, &ns, &EstimationOptions::default()).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let cells_path = dir.path().join("cells.csv");
        write_cells_csv(&cells_path, &summary.cells).unwrap();
        let content = std::fs::read_to_string(&cells_path).unwrap();
        assert!(content.starts_with("g,t,estimate,se,n_treated,n_comparison,method"));
        assert!(content.contains("aivw"));

        let es_path = dir.path().join("es.csv");
        write_event_study_csv(&es_path, &summary.aggregates, Method::Aivw).unwrap();
        let content = std::fs::read_to_string(&es_path).unwrap();
        assert!(content.starts_with("s,estimate,lo,hi"));
        assert_eq!(content.lines().count(), 2, "one exposure row for T = 1");
    }
}
