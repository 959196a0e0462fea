//! Seeded Monte Carlo laboratory for the staggered-adoption estimators.
//!
//! Six scenarios share one panel design: periods 0–4, adoption at periods
//! 1–4 or never, and four covariates per period. A latent index
//! `v = 0.3 Z₁ + 0.4 Z₂` drives adoption through logistic thresholds, so the
//! propensity working model is correctly specified; the untreated outcome is
//! linear in the covariates, their interactions with time, period steps, and
//! a group shift, so the outcome working model is correctly specified too.
//! Scenarios differ in the error structure (independent homoskedastic,
//! heteroskedastic, or cumulative heteroskedastic) and in whether the
//! treatment effect is homogeneous (centered at 1) or grows with exposure.
//!
//! Replicates are reproducible and independent of the worker count: each
//! replicate derives its randomness from the base seed plus its own stream
//! index, replicate results are collected in replicate order, and summary
//! statistics are accumulated sequentially, so reports from runs with
//! different thread counts are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Method, TwfeSeKind};
use crate::inference::{
    estimate_all, normal_quantile, AggregationKind, EstimationOptions,
};
use crate::linmod::{fit_nuisances, Misspecification, NuisanceOptions};
use crate::panel::{Group, Panel};

/// Identifier of the random number generator used by the lab.
pub const RNG_ID: &str = "ChaCha8";

/// Number of post-baseline periods in the simulated design.
pub const SIM_T_MAX: usize = 4;

/// Logistic thresholds: `P(G ≤ k | v) = sigmoid(ζ_k + v)` for `k = 1..4`.
const ZETA: [f64; 4] = [-1.5, -0.5, 0.0, 1.0];

/// Standard deviation of the latent adoption index `v = 0.3 Z₁ + 0.4 Z₂`.
const SIGMA_V: f64 = 0.5;

/// How the idiosyncratic errors are built.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorStructure {
    /// `u_t` i.i.d. standard normal.
    Independent,
    /// `u_t` independent with variance `exp(0.2 Z₂ + 0.3 t − 0.3 G̃)`.
    Heteroskedastic,
    /// `u_t = Σ_{k≤t} u*_k` with `u*_k` independent, variance
    /// `exp(0.2 Z₂ + 0.3 k − 0.3 G̃)`.
    Cumulative,
}

/// One of the six simulation scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Scenario {
    id: u8,
}

impl Scenario {
    /// Looks up a scenario by its identifier (1–6).
    pub fn from_id(id: u8) -> Result<Scenario> {
        if (1..=6).contains(&id) {
            Ok(Scenario { id })
        } else {
            Err(Error::Validation(format!(
                "scenario must be between 1 and 6, got {id}"
            )))
        }
    }

    /// Scenario identifier (1–6).
    pub fn id(&self) -> u8 {
        self.id
    }

    /// Even scenarios let the effect grow by 0.5 per period of exposure.
    pub fn heterogeneous(&self) -> bool {
        self.id % 2 == 0
    }

    /// Error structure: 1–2 independent, 3–4 heteroskedastic, 5–6 cumulative.
    pub fn errors(&self) -> ErrorStructure {
        match self.id {
            1 | 2 => ErrorStructure::Independent,
            3 | 4 => ErrorStructure::Heteroskedastic,
            _ => ErrorStructure::Cumulative,
        }
    }
}

/// Draws one simulated panel. The stream of draws per unit is fixed
/// (`Z₁, Z₂, Z₃,₀…Z₃,₄, U, ξ, u₀…u₄`), so a (seed, replicate) pair fully
/// determines the panel regardless of scenario or caller.
pub fn generate(scenario: Scenario, n: usize, seed: u64, replicate: u64) -> Panel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate);

    let n_periods = SIM_T_MAX + 1;
    let p = 4;
    let mut groups = Vec::with_capacity(n);
    let mut outcome = vec![0.0; n * n_periods];
    let mut covariates = vec![0.0; n * n_periods * p];

    for i in 0..n {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        let mut z3 = [0.0_f64; 5];
        for (t, z) in z3.iter_mut().enumerate() {
            let draw: f64 = rng.sample(StandardNormal);
            *z = (1.0 + 0.1 * t as f64) * draw;
        }

        // Adoption period: smallest k with U ≤ sigmoid(ζ_k + v), else never.
        let v = 0.3 * z1 + 0.4 * z2;
        let u: f64 = rng.gen();
        let mut group = Group::Never;
        for (k, zeta) in ZETA.iter().enumerate() {
            if u <= sigmoid(zeta + v) {
                group = Group::At(k + 1);
                break;
            }
        }
        groups.push(group);
        let g_tilde = group.numeric_code(SIM_T_MAX) as f64;

        let xi: f64 = rng.sample(StandardNormal);

        let mut errs = [0.0_f64; 5];
        match scenario.errors() {
            ErrorStructure::Independent => {
                for e in errs.iter_mut() {
                    *e = rng.sample(StandardNormal);
                }
            }
            ErrorStructure::Heteroskedastic => {
                for (t, e) in errs.iter_mut().enumerate() {
                    let sd = (0.5 * (0.2 * z2 + 0.3 * t as f64 - 0.3 * g_tilde)).exp();
                    let draw: f64 = rng.sample(StandardNormal);
                    *e = sd * draw;
                }
            }
            ErrorStructure::Cumulative => {
                let mut acc = 0.0;
                for (k, e) in errs.iter_mut().enumerate() {
                    let sd = (0.5 * (0.2 * z2 + 0.3 * k as f64 - 0.3 * g_tilde)).exp();
                    let draw: f64 = rng.sample(StandardNormal);
                    acc += sd * draw;
                    *e = acc;
                }
            }
        }

        for t in 0..n_periods {
            let tf = t as f64;
            let mut y = 0.5 * (1.0 + tf) * z1 + z2 + 0.2 * tf + 0.1 * g_tilde + xi + errs[t];
            if let Group::At(g) = group {
                if g <= t {
                    y += 1.0 + z3[t];
                    if scenario.heterogeneous() {
                        y += (0.5 + 0.2 * z3[t]) * (t - g) as f64;
                    }
                }
            }
            outcome[i * n_periods + t] = y;

            let base = (i * n_periods + t) * p;
            covariates[base] = z1;
            covariates[base + 1] = z2;
            covariates[base + 2] = z3[t];
            covariates[base + 3] = if t == 0 { 0.0 } else { z3[t - 1] };
        }
    }

    let names = ["z1", "z2", "z3", "z3_lag"].map(String::from).to_vec();
    Panel::from_parts(SIM_T_MAX, groups, outcome, covariates, names)
        .expect("simulated panel is well-formed by construction")
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Expectation `E[f(v)]` for `v ~ N(0, SIGMA_V²)` by composite Simpson
/// quadrature on `v/σ ∈ [−14, 14]`, doubling the grid until two successive
/// refinements agree to 1e−12.
fn normal_expectation(f: impl Fn(f64) -> f64) -> f64 {
    let (a, b) = (-14.0_f64, 14.0_f64);
    let g = |u: f64| f(SIGMA_V * u) * (-0.5 * u * u).exp()
        / (2.0 * std::f64::consts::PI).sqrt();
    let mut m = 128usize;
    let mut prev = f64::NAN;
    loop {
        let h = (b - a) / m as f64;
        let mut s = g(a) + g(b);
        for j in 1..m {
            let w = if j % 2 == 1 { 4.0 } else { 2.0 };
            s += w * g(a + j as f64 * h);
        }
        let val = s * h / 3.0;
        if (val - prev).abs() <= 1e-12 || m >= (1 << 16) {
            return val;
        }
        prev = val;
        m *= 2;
    }
}

/// Population adoption shares `(π₁, π₂, π₃, π₄, π_never)`:
/// `π_g = E_v[sigmoid(ζ_g + v) − sigmoid(ζ_{g−1} + v)]`. Sums to one.
pub fn true_group_props() -> [f64; 5] {
    let mut out = [0.0; 5];
    for g in 1..=4 {
        out[g - 1] = normal_expectation(|v| {
            let hi = sigmoid(ZETA[g - 1] + v);
            let lo = if g > 1 { sigmoid(ZETA[g - 2] + v) } else { 0.0 };
            hi - lo
        });
    }
    out[4] = normal_expectation(|v| 1.0 - sigmoid(ZETA[3] + v));
    out
}

/// True cell effect: 1 everywhere for homogeneous scenarios,
/// `1 + 0.5 (t − g)` for the exposure-growing ones.
pub fn true_cell_att(scenario: Scenario, g: usize, t: usize) -> f64 {
    debug_assert!(g >= 1 && g <= t && t <= SIM_T_MAX);
    if scenario.heterogeneous() {
        1.0 + 0.5 * (t - g) as f64
    } else {
        1.0
    }
}

/// True effect at exposure duration `s ≥ 1` (constant across groups).
pub fn true_dynamic_att(scenario: Scenario, s: usize) -> f64 {
    if scenario.heterogeneous() {
        1.0 + 0.5 * (s - 1) as f64
    } else {
        1.0
    }
}

/// True group effect: the per-group average of its cell effects.
pub fn true_group_att(scenario: Scenario, g: usize) -> f64 {
    let m = (SIM_T_MAX - g + 1) as f64;
    let total: f64 = (g..=SIM_T_MAX).map(|t| true_cell_att(scenario, g, t)).sum();
    total / m
}

/// True overall effect: share-weighted average of all cell effects,
/// `Σ_g π_g Σ_{t≥g} τ_{g,t} / Σ_g (T−g+1) π_g`. Equals 1 for homogeneous
/// scenarios and ≈ 1.514 for the exposure-growing ones.
pub fn true_overall_att(scenario: Scenario) -> f64 {
    if !scenario.heterogeneous() {
        return 1.0;
    }
    let pi = true_group_props();
    let mut num = 0.0;
    let mut den = 0.0;
    for g in 1..=SIM_T_MAX {
        let cell_sum: f64 = (g..=SIM_T_MAX).map(|t| true_cell_att(scenario, g, t)).sum();
        num += pi[g - 1] * cell_sum;
        den += pi[g - 1] * (SIM_T_MAX - g + 1) as f64;
    }
    num / den
}

/// Configuration of one Monte Carlo run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Scenario identifier (1–6).
    pub scenario: u8,
    /// Units per replicate.
    pub n: usize,
    /// Number of replicates.
    pub reps: usize,
    /// Base seed; replicate `r` uses stream `r` of this seed.
    pub seed: u64,
    /// Estimators to evaluate.
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Worker threads (0 = automatic). Does not affect results.
    #[serde(default)]
    pub workers: usize,
    /// Zero out the fitted outcome model before estimating.
    #[serde(default)]
    pub misspecify_outcome: bool,
    /// Replace fitted adoption probabilities with uniform ones.
    #[serde(default)]
    pub misspecify_propensity: bool,
}

fn default_methods() -> Vec<Method> {
    vec![Method::Twfe, Method::Aipw, Method::Aivw]
}

impl McConfig {
    /// A run of `reps` replicates of scenario `scenario` at size `n`.
    pub fn new(scenario: u8, n: usize, reps: usize, seed: u64) -> McConfig {
        McConfig {
            scenario,
            n,
            reps,
            seed,
            methods: default_methods(),
            workers: 0,
            misspecify_outcome: false,
            misspecify_propensity: false,
        }
    }
}

/// Sampling summary for one estimator's overall effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMethodStats {
    /// Estimator.
    pub method: Method,
    /// Replicates that produced an estimate.
    pub reps_used: usize,
    /// Replicates that failed for this estimator.
    pub n_failures: usize,
    /// Mean estimate minus the true overall effect.
    pub bias: f64,
    /// Sample standard deviation of the estimates.
    pub sd: f64,
    /// Mean of the reported standard errors.
    pub mean_se: f64,
    /// Share of replicates whose nominal 95% interval covers the truth.
    pub coverage: f64,
}

/// Sampling summary for one estimator's cell effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McCellStats {
    /// Estimator.
    pub method: Method,
    /// Adoption period.
    pub g: usize,
    /// Outcome period.
    pub t: usize,
    /// True cell effect.
    pub truth: f64,
    /// Mean estimate across replicates.
    pub mean: f64,
    /// Monte Carlo standard error of the mean (sd/√reps).
    pub mc_se: f64,
    /// Replicates contributing.
    pub reps_used: usize,
}

/// Sampling summary for one estimator's exposure-duration effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McDynamicStats {
    /// Estimator.
    pub method: Method,
    /// Exposure duration (1 = period of adoption).
    pub s: usize,
    /// True effect at this duration.
    pub truth: f64,
    /// Mean estimate across replicates.
    pub mean: f64,
    /// Monte Carlo standard error of the mean (sd/√reps).
    pub mc_se: f64,
    /// Replicates contributing.
    pub reps_used: usize,
}

/// A replicate that failed for one estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McFailure {
    /// Replicate index.
    pub replicate: usize,
    /// Estimator affected.
    pub method: Method,
    /// Error message.
    pub message: String,
}

/// Full Monte Carlo report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    /// Random number generator identifier.
    pub rng: String,
    /// The configuration that produced this report.
    pub config: McConfig,
    /// True overall effect under the configured scenario.
    pub truth_overall: f64,
    /// Overall-effect sampling summaries, one per estimator.
    pub methods: Vec<McMethodStats>,
    /// Cell-effect summaries for cell-based estimators.
    pub cells: Vec<McCellStats>,
    /// Exposure-duration summaries for cell-based estimators.
    pub dynamics: Vec<McDynamicStats>,
    /// Failed (replicate, estimator) pairs, excluded from the summaries.
    pub failures: Vec<McFailure>,
}

struct RepData {
    overall: Vec<(Method, f64, f64)>,
    cells: Vec<(Method, usize, usize, f64)>,
    dynamics: Vec<(Method, usize, f64)>,
    failures: Vec<(Method, String)>,
}

fn run_replicate(config: &McConfig, scenario: Scenario, rep: usize) -> RepData {
    let mut data = RepData {
        overall: Vec::new(),
        cells: Vec::new(),
        dynamics: Vec::new(),
        failures: Vec::new(),
    };
    let panel = generate(scenario, config.n, config.seed, rep as u64);
    let mut ns = match fit_nuisances(&panel, &NuisanceOptions::default()) {
        Ok(ns) => ns,
        Err(e) => {
            for &m in &config.methods {
                data.failures.push((m, format!("nuisance fit: {e}")));
            }
            return data;
        }
    };
    if config.misspecify_outcome {
        ns = ns.misspecify(Misspecification::Outcome);
    }
    if config.misspecify_propensity {
        ns = ns.misspecify(Misspecification::Propensity);
    }

    for &method in &config.methods {
        let opts = EstimationOptions {
            methods: vec![method],
            aggregates: vec![AggregationKind::Dynamic, AggregationKind::Overall],
            base_period: None,
            level: 0.95,
            twfe_se: TwfeSeKind::Classical,
        };
        match estimate_all(&panel, &ns, &opts) {
            Ok(summary) => {
                let overall = summary
                    .aggregates
                    .iter()
                    .find(|a| a.kind == AggregationKind::Overall);
                match overall {
                    Some(row) => data.overall.push((method, row.estimate, row.se)),
                    None => {
                        data.failures
                            .push((method, "no estimable cells".to_string()));
                        continue;
                    }
                }
                for c in &summary.cells {
                    data.cells.push((method, c.g, c.t, c.estimate));
                }
                for a in &summary.aggregates {
                    if a.kind == AggregationKind::Dynamic {
                        let s = a.index.expect("dynamic aggregates carry an index");
                        data.dynamics.push((method, s, a.estimate));
                    }
                }
            }
            Err(e) => data.failures.push((method, e.to_string())),
        }
    }
    data
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let ss = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    (mean, (ss / (k - 1) as f64).sqrt())
}

/// Runs the configured Monte Carlo study. Replicates run in parallel but the
/// report is bit-identical for any worker count.
pub fn run_mc(config: &McConfig) -> Result<McReport> {
    let scenario = Scenario::from_id(config.scenario)?;
    if config.reps == 0 {
        return Err(Error::Validation("reps must be positive".to_string()));
    }
    if config.n < 10 {
        return Err(Error::Validation(format!(
            "simulated panels need at least 10 units, got {}",
            config.n
        )));
    }
    if config.methods.is_empty() {
        return Err(Error::Validation("no estimators requested".to_string()));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Computation(format!("failed to build thread pool: {e}")))?;
    let reps: Vec<RepData> = pool.install(|| {
        (0..config.reps)
            .into_par_iter()
            .map(|rep| run_replicate(config, scenario, rep))
            .collect()
    });

    let truth = true_overall_att(scenario);
    let z = normal_quantile(0.975);
    let mut report = McReport {
        rng: RNG_ID.to_string(),
        config: config.clone(),
        truth_overall: truth,
        methods: Vec::new(),
        cells: Vec::new(),
        dynamics: Vec::new(),
        failures: Vec::new(),
    };

    for (rep, data) in reps.iter().enumerate() {
        for (method, message) in &data.failures {
            report.failures.push(McFailure {
                replicate: rep,
                method: *method,
                message: message.clone(),
            });
        }
    }

    for &method in &config.methods {
        let mut ests = Vec::new();
        let mut ses = Vec::new();
        for data in &reps {
            if let Some((_, est, se)) = data.overall.iter().find(|(m, _, _)| *m == method) {
                ests.push(*est);
                ses.push(*se);
            }
        }
        let (mean, sd) = mean_and_sd(&ests);
        let reps_used = ests.len();
        let mean_se = if reps_used > 0 {
            ses.iter().sum::<f64>() / reps_used as f64
        } else {
            0.0
        };
        let covered = ests
            .iter()
            .zip(&ses)
            .filter(|(est, se)| (*est - truth).abs() <= z * **se)
            .count();
        let coverage = if reps_used > 0 {
            covered as f64 / reps_used as f64
        } else {
            0.0
        };
        report.methods.push(McMethodStats {
            method,
            reps_used,
            n_failures: config.reps - reps_used,
            bias: mean - truth,
            sd,
            mean_se,
            coverage,
        });

        if method.has_cells() {
            for g in 1..=SIM_T_MAX {
                for t in g..=SIM_T_MAX {
                    let values: Vec<f64> = reps
                        .iter()
                        .flat_map(|d| {
                            d.cells
                                .iter()
                                .find(|(m, cg, ct, _)| *m == method && *cg == g && *ct == t)
                                .map(|(_, _, _, est)| *est)
                        })
                        .collect();
                    if values.is_empty() {
                        continue;
                    }
                    let (mean, sd) = mean_and_sd(&values);
                    report.cells.push(McCellStats {
                        method,
                        g,
                        t,
                        truth: true_cell_att(scenario, g, t),
                        mean,
                        mc_se: sd / (values.len() as f64).sqrt(),
                        reps_used: values.len(),
                    });
                }
            }
            for s in 1..=SIM_T_MAX {
                let values: Vec<f64> = reps
                    .iter()
                    .flat_map(|d| {
                        d.dynamics
                            .iter()
                            .find(|(m, ds, _)| *m == method && *ds == s)
                            .map(|(_, _, est)| *est)
                    })
                    .collect();
                if values.is_empty() {
                    continue;
                }
                let (mean, sd) = mean_and_sd(&values);
                report.dynamics.push(McDynamicStats {
                    method,
                    s,
                    truth: true_dynamic_att(scenario, s),
                    mean,
                    mc_se: sd / (values.len() as f64).sqrt(),
                    reps_used: values.len(),
                });
            }
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn true_group_props_match_quadrature_oracle() {
        // Frozen against an independent adaptive-quadrature evaluation of
        // E_v[sigmoid(ζ_g + v) − sigmoid(ζ_{g−1} + v)], v ~ N(0, 0.25).
        let pi = true_group_props();
        let expected = [
            0.193690720577,
            0.190333228358,
            0.115976051065,
            0.220580815243,
            0.279419184757,
        ];
        for (g, (&have, &want)) in pi.iter().zip(&expected).enumerate() {
            assert!(approx(have, want, 1e-9), "π_{g}: {have} vs {want}");
        }
        let total: f64 = pi.iter().sum();
        assert!(approx(total, 1.0, 1e-10), "shares sum to {total}");
    }

    #[test]
    fn true_overall_att_matches_oracle() {
        for id in [1, 3, 5] {
            let s = Scenario::from_id(id).unwrap();
            assert!(approx(true_overall_att(s), 1.0, 1e-12));
        }
        for id in [2, 4, 6] {
            let s = Scenario::from_id(id).unwrap();
            // Frozen: (7π₁ + 4.5π₂ + 2.5π₃ + π₄)/(4π₁ + 3π₂ + 2π₃ + π₄).
            assert!(approx(true_overall_att(s), 1.514131319151, 1e-9));
        }
        assert!(approx(true_dynamic_att(Scenario::from_id(2).unwrap(), 3), 2.0, 1e-12));
        assert!(approx(true_group_att(Scenario::from_id(2).unwrap(), 4), 1.0, 1e-12));
        assert!(approx(true_group_att(Scenario::from_id(2).unwrap(), 1), 1.75, 1e-12));
    }

    #[test]
    fn scenario_ids_map_to_effects_and_errors() {
        assert!(Scenario::from_id(0).is_err());
        assert!(Scenario::from_id(7).is_err());
        let s3 = Scenario::from_id(3).unwrap();
        assert!(!s3.heterogeneous());
        assert_eq!(s3.errors(), ErrorStructure::Heteroskedastic);
        let s6 = Scenario::from_id(6).unwrap();
        assert!(s6.heterogeneous());
        assert_eq!(s6.errors(), ErrorStructure::Cumulative);
    }

    #[test]
    fn generate_is_deterministic_per_stream() {
        let s = Scenario::from_id(4).unwrap();
        let a = generate(s, 25, 99, 3);
        let b = generate(s, 25, 99, 3);
        for i in 0..25 {
            assert_eq!(a.group(i), b.group(i));
            for t in 0..=SIM_T_MAX {
                assert_eq!(a.y(i, t).to_bits(), b.y(i, t).to_bits(), "unit {i} period {t}");
            }
        }
        let c = generate(s, 25, 99, 4);
        let differs = (0..25).any(|i| a.y(i, 0) != c.y(i, 0));
        assert!(differs, "different replicate streams must differ");
    }

    #[test]
    fn generated_covariates_follow_the_layout() {
        let s = Scenario::from_id(1).unwrap();
        let panel = generate(s, 40, 5, 0);
        assert_eq!(panel.n_units(), 40);
        assert_eq!(panel.t_max(), SIM_T_MAX);
        assert_eq!(panel.n_covariates(), 4);
        assert_eq!(panel.covariate_names()[3], "z3_lag");
        for i in 0..40 {
            // The lagged covariate starts at zero and then tracks its lead.
            assert_eq!(panel.x(i, 0)[3], 0.0);
            for t in 1..=SIM_T_MAX {
                assert_eq!(panel.x(i, t)[3].to_bits(), panel.x(i, t - 1)[2].to_bits());
            }
            // Z₁ and Z₂ are time-invariant.
            for t in 1..=SIM_T_MAX {
                assert_eq!(panel.x(i, t)[0].to_bits(), panel.x(i, 0)[0].to_bits());
                assert_eq!(panel.x(i, t)[1].to_bits(), panel.x(i, 0)[1].to_bits());
            }
        }
    }

    #[test]
    fn group_shares_approach_their_population_values() {
        let s = Scenario::from_id(1).unwrap();
        let panel = generate(s, 20_000, 7, 0);
        let tally = crate::panel::tally(&panel);
        let pi = true_group_props();
        for g in 1..=4 {
            let have = tally.proportion(Group::At(g));
            assert!(
                approx(have, pi[g - 1], 0.012),
                "group {g}: {have} vs {}",
                pi[g - 1]
            );
        }
        assert!(approx(tally.proportion(Group::Never), pi[4], 0.012));
    }

    #[test]
    fn run_mc_reports_are_worker_count_invariant() {
        let mut config = McConfig::new(1, 80, 3, 11);
        config.methods = vec![Method::Twfe, Method::Aivw];
        config.workers = 1;
        let one = run_mc(&config).unwrap();
        config.workers = 2;
        let two = run_mc(&config).unwrap();
        // Reports must agree bit for bit apart from the worker count itself.
        let mut two_cmp = two.clone();
        two_cmp.config.workers = 1;
        assert_eq!(one, two_cmp);

        assert_eq!(one.methods.len(), 2);
        for m in &one.methods {
            assert!(m.reps_used + m.n_failures == 3);
            assert!((0.0..=1.0).contains(&m.coverage));
            assert!(m.bias.is_finite());
        }
        assert_eq!(one.rng, "ChaCha8");
        // Cell summaries exist only for the cell-based estimator.
        assert!(one.cells.iter().all(|c| c.method == Method::Aivw));
        assert!(!one.cells.is_empty());
    }

    #[test]
    fn misspecification_flags_change_estimates() {
        let mut config = McConfig::new(2, 150, 2, 21);
        config.methods = vec![Method::Aipw];
        let base = run_mc(&config).unwrap();
        config.misspecify_outcome = true;
        config.misspecify_propensity = true;
        let broken = run_mc(&config).unwrap();
        assert!(
            (base.methods[0].bias - broken.methods[0].bias).abs() > 1e-8,
            "double misspecification must move the estimate"
        );
    }
}
