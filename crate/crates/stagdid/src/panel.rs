//! Panel data model: long-format ingestion, structural validation, and
//! group bookkeeping for staggered-adoption designs.
//!
//! A panel holds `n_units` units observed over periods `0..=T`. Each unit
//! belongs to a group `g ∈ {1, …, T}` (the period it initiates treatment,
//! after which it stays treated) or to the never-treated group, displayed as
//! `Inf`. Period 0 is pre-treatment for everyone, so group 0 is invalid.
//! The implied treatment indicator is `D_t = I(G ≤ t)`, non-decreasing in t.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Group label: the period in which a unit initiates treatment, or `Never`
/// for units that are untreated throughout (displayed as `Inf`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    /// Treatment initiated at this period index (1-based; period 0 is
    /// pre-treatment for everyone).
    At(usize),
    /// Never treated within the observation window.
    Never,
}

impl Group {
    /// Treatment status at period `t`: `D_t = I(G ≤ t)`.
    pub fn treated_by(self, t: usize) -> bool {
        match self {
            Group::At(g) => g <= t,
            Group::Never => false,
        }
    }

    /// True when this group is still untreated strictly after period `k`,
    /// i.e. it can serve as a not-yet-treated comparison at period `k`.
    pub fn not_yet_treated_at(self, k: usize) -> bool {
        match self {
            Group::At(g) => g > k,
            Group::Never => true,
        }
    }

    /// Numeric code used where formulas need a finite group value:
    /// the adoption period for treated groups, `T + 1` for `Never`.
    pub fn numeric_code(self, t_max: usize) -> usize {
        match self {
            Group::At(g) => g,
            Group::Never => t_max + 1,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::At(g) => write!(f, "{g}"),
            Group::Never => write!(f, "Inf"),
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") || s == "∞" {
            return Ok(Group::Never);
        }
        let g: i64 = s
            .parse()
            .map_err(|_| Error::Validation(format!("group label '{s}' is not an integer or 'Inf'")))?;
        if g <= 0 {
            return Err(Error::Validation(format!(
                "group label {g} is invalid: groups are positive periods or 'Inf' (period 0 is pre-treatment for everyone)"
            )));
        }
        Ok(Group::At(g as usize))
    }
}

/// Column-name map for long-format CSV ingestion.
///
/// Exactly one of `group` / `treat` must be set: `group` reads adoption
/// periods directly; `treat` reads a 0/1 indicator and infers the group as
/// the first period with value 1 (`Inf` when always 0).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelSchema {
    /// Unit identifier column.
    pub unit: String,
    /// Period column (integers; arbitrary sorted values are re-indexed to 0..T).
    pub period: String,
    /// Adoption-period column (`1..T` or `Inf`), if groups are given directly.
    pub group: Option<String>,
    /// 0/1 treatment-indicator column, if groups are to be inferred.
    pub treat: Option<String>,
    /// Outcome column.
    pub outcome: String,
    /// Covariate columns, in the order they become covariate indices.
    pub covariates: Vec<String>,
}

impl PanelSchema {
    /// Schema with conventional column names `unit`, `period`, `group`, `y`.
    pub fn with_defaults(group: &str, outcome: &str, covariates: &[String]) -> Self {
        PanelSchema {
            unit: "unit".to_string(),
            period: "period".to_string(),
            group: Some(group.to_string()),
            treat: None,
            outcome: outcome.to_string(),
            covariates: covariates.to_vec(),
        }
    }
}

/// Balanced unit×period panel with group labels and fixed-width covariates.
///
/// Immutable after construction; all estimators read it concurrently.
#[derive(Clone, Debug)]
pub struct Panel {
    n_units: usize,
    t_max: usize,
    group: Vec<Group>,
    /// Outcomes, `n_units * (T+1)`, row-major by unit.
    outcome: Vec<f64>,
    /// Covariates, `n_units * (T+1) * p`, row-major by (unit, period).
    covariates: Vec<f64>,
    covariate_names: Vec<String>,
    /// Original period labels in ascending order; index = internal period.
    period_labels: Vec<i64>,
    /// Original unit identifiers; index = internal unit.
    unit_ids: Vec<String>,
}

impl Panel {
    /// Builds a panel from pre-indexed parts and enforces the structural
    /// invariants (balance is implied by the dense layout; group labels must
    /// lie in `1..=T` or be `Never`).
    pub fn from_parts(
        t_max: usize,
        group: Vec<Group>,
        outcome: Vec<f64>,
        covariates: Vec<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Panel> {
        let n_units = group.len();
        let n_rows = n_units * (t_max + 1);
        if outcome.len() != n_rows {
            return Err(Error::Validation(format!(
                "outcome length {} does not match {} units × {} periods",
                outcome.len(),
                n_units,
                t_max + 1
            )));
        }
        let p = covariate_names.len();
        if covariates.len() != n_rows * p {
            return Err(Error::Validation(format!(
                "covariate length {} does not match {} rows × {} covariates",
                covariates.len(),
                n_rows,
                p
            )));
        }
        for (i, g) in group.iter().enumerate() {
            if let Group::At(v) = g {
                if *v == 0 || *v > t_max {
                    return Err(Error::Validation(format!(
                        "unit {i} has group label {v}, outside 1..={t_max} (use Inf for never-treated)"
                    )));
                }
            }
        }
        Ok(Panel {
            n_units,
            t_max,
            group,
            outcome,
            covariates,
            covariate_names,
            period_labels: (0..=t_max as i64).collect(),
            unit_ids: (0..n_units).map(|i| i.to_string()).collect(),
        })
    }

    /// Number of units.
    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Last period index `T` (periods run `0..=T`).
    pub fn t_max(&self) -> usize {
        self.t_max
    }

    /// Covariate dimension `p` (may be 0).
    pub fn n_covariates(&self) -> usize {
        self.covariate_names.len()
    }

    /// Covariate column labels.
    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Group label of unit `i`.
    pub fn group(&self, i: usize) -> Group {
        self.group[i]
    }

    /// All group labels, unit-indexed.
    pub fn groups(&self) -> &[Group] {
        &self.group
    }

    /// Outcome `Y_{it}`.
    pub fn y(&self, i: usize, t: usize) -> f64 {
        self.outcome[i * (self.t_max + 1) + t]
    }

    /// One-period outcome change `ΔY_{it} = Y_{it} − Y_{i,t−1}` (t ≥ 1).
    pub fn dy(&self, i: usize, t: usize) -> f64 {
        debug_assert!(t >= 1);
        self.y(i, t) - self.y(i, t - 1)
    }

    /// Covariate vector `X_{it}` (empty slice when p = 0).
    pub fn x(&self, i: usize, t: usize) -> &[f64] {
        let p = self.covariate_names.len();
        let start = (i * (self.t_max + 1) + t) * p;
        &self.covariates[start..start + p]
    }

    /// Treatment indicator `D_{it} = I(G_i ≤ t)`.
    pub fn d(&self, i: usize, t: usize) -> bool {
        self.group[i].treated_by(t)
    }

    /// Original period labels (ascending); internal period `t` had label
    /// `period_labels()[t]` in the source data.
    pub fn period_labels(&self) -> &[i64] {
        &self.period_labels
    }

    /// Original unit identifiers, internal-unit-indexed.
    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// All treated group labels `1..=T` plus `Never`, in display order.
    pub fn group_labels(&self) -> Vec<Group> {
        let mut labels: Vec<Group> = (1..=self.t_max).map(Group::At).collect();
        labels.push(Group::Never);
        labels
    }

    /// Writes the panel in the long CSV format accepted by the loader
    /// (`unit, period, group, y, x1..xp`); numeric fields round-trip
    /// bit-identically through Rust's shortest-representation formatting.
    pub fn write_long_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header = vec!["unit".to_string(), "period".to_string(), "group".to_string(), "y".to_string()];
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n_units {
            for t in 0..=self.t_max {
                let mut rec = vec![
                    self.unit_ids[i].clone(),
                    self.period_labels[t].to_string(),
                    match self.group[i] {
                        Group::At(g) => self.period_labels[g].to_string(),
                        Group::Never => "Inf".to_string(),
                    },
                    format!("{}", self.y(i, t)),
                ];
                for v in self.x(i, t) {
                    rec.push(format!("{v}"));
                }
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a long-format CSV into a validated [`Panel`].
///
/// Requirements: a header row; one row per (unit, period) pair; integer
/// periods (arbitrary sorted values are re-indexed to 0..T with the mapping
/// recorded); groups given directly (`group` column: adoption-period label or
/// `Inf`) or inferred from a 0/1 `treat` column as the first period with
/// treatment 1 (`Inf` when always 0). Unbalanced panels, non-monotone
/// treatment paths, and group label 0 are rejected.
pub fn load_long_csv<P: AsRef<Path>>(path: P, schema: &PanelSchema) -> Result<Panel> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Validation(format!("missing column '{name}' in CSV header")))
    };

    let unit_col = col(&schema.unit)?;
    let period_col = col(&schema.period)?;
    let outcome_col = col(&schema.outcome)?;
    let group_col = schema.group.as_deref().map(col).transpose()?;
    let treat_col = schema.treat.as_deref().map(col).transpose()?;
    if group_col.is_some() == treat_col.is_some() {
        return Err(Error::Validation(
            "exactly one of a group column or a treatment column must be specified".to_string(),
        ));
    }
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    struct RawRow {
        unit: String,
        period: i64,
        group: Option<String>,
        treat: Option<f64>,
        outcome: f64,
        covariates: Vec<f64>,
    }

    let parse_f64 = |s: &str, what: &str, line: u64| -> Result<f64> {
        s.parse::<f64>().map_err(|_| {
            Error::Validation(format!("non-numeric {what} '{s}' at CSV line {line}"))
        })
    };

    let mut rows: Vec<RawRow> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let period: i64 = record[period_col].parse().map_err(|_| {
            Error::Validation(format!(
                "non-integer period '{}' at CSV line {line}",
                &record[period_col]
            ))
        })?;
        let outcome = parse_f64(&record[outcome_col], "outcome", line)?;
        let covariates = cov_cols
            .iter()
            .map(|&c| parse_f64(&record[c], "covariate", line))
            .collect::<Result<Vec<f64>>>()?;
        let treat = treat_col
            .map(|c| parse_f64(&record[c], "treatment indicator", line))
            .transpose()?;
        if let Some(v) = treat {
            if v != 0.0 && v != 1.0 {
                return Err(Error::Validation(format!(
                    "treatment indicator must be 0 or 1, found {v} at CSV line {line}"
                )));
            }
        }
        rows.push(RawRow {
            unit: record[unit_col].to_string(),
            period,
            group: group_col.map(|c| record[c].to_string()),
            treat,
            outcome,
            covariates,
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation("CSV contains no data rows".to_string()));
    }

    // Re-index periods: arbitrary sorted integer labels map to 0..T.
    let mut period_labels: Vec<i64> = rows.iter().map(|r| r.period).collect();
    period_labels.sort_unstable();
    period_labels.dedup();
    let period_index: BTreeMap<i64, usize> = period_labels
        .iter()
        .enumerate()
        .map(|(idx, &label)| (label, idx))
        .collect();
    let t_max = period_labels.len() - 1;
    if t_max == 0 {
        return Err(Error::Validation(
            "panel has a single period; at least one pre-treatment and one later period are required".to_string(),
        ));
    }

    // Units in first-appearance order.
    let mut unit_ids: Vec<String> = Vec::new();
    let mut unit_index: BTreeMap<String, usize> = BTreeMap::new();
    for r in &rows {
        if !unit_index.contains_key(&r.unit) {
            unit_index.insert(r.unit.clone(), unit_ids.len());
            unit_ids.push(r.unit.clone());
        }
    }
    let n_units = unit_ids.len();
    let n_periods = t_max + 1;
    let p = cov_cols.len();

    let mut seen = vec![false; n_units * n_periods];
    let mut outcome = vec![0.0; n_units * n_periods];
    let mut covariates = vec![0.0; n_units * n_periods * p];
    let mut group_raw: Vec<Option<String>> = vec![None; n_units];
    let mut treat_mat = vec![0.0; n_units * n_periods];

    for r in &rows {
        let i = unit_index[&r.unit];
        let t = period_index[&r.period];
        let cell = i * n_periods + t;
        if seen[cell] {
            return Err(Error::Validation(format!(
                "duplicate row for unit '{}' at period {}",
                r.unit, r.period
            )));
        }
        seen[cell] = true;
        outcome[cell] = r.outcome;
        covariates[cell * p..cell * p + p].copy_from_slice(&r.covariates);
        if let Some(g) = &r.group {
            if let Some(prev) = &group_raw[i] {
                if prev != g {
                    return Err(Error::Validation(format!(
                        "unit '{}' has conflicting group labels '{prev}' and '{g}'",
                        r.unit
                    )));
                }
            } else {
                group_raw[i] = Some(g.clone());
            }
        }
        if let Some(v) = r.treat {
            treat_mat[cell] = v;
        }
    }

    // Balance: every (unit, period) cell exactly once.
    for i in 0..n_units {
        for t in 0..n_periods {
            if !seen[i * n_periods + t] {
                return Err(Error::Validation(format!(
                    "unbalanced panel: unit '{}' is missing period {}",
                    unit_ids[i], period_labels[t]
                )));
            }
        }
    }

    // Resolve groups to internal period indices.
    let mut group = Vec::with_capacity(n_units);
    if group_col.is_some() {
        for (i, raw) in group_raw.iter().enumerate() {
            let raw = raw.as_ref().expect("balanced panel rows carry the group column");
            let g = match raw.parse::<Group>()? {
                Group::Never => Group::Never,
                Group::At(label) => {
                    let idx = period_index.get(&(label as i64)).copied().ok_or_else(|| {
                        Error::Validation(format!(
                            "unit '{}' has group label {label}, which is not an observed period (use Inf for never-treated)",
                            unit_ids[i]
                        ))
                    })?;
                    if idx == 0 {
                        return Err(Error::Validation(format!(
                            "unit '{}' initiates treatment in the first period; period 0 must be pre-treatment for everyone",
                            unit_ids[i]
                        )));
                    }
                    Group::At(idx)
                }
            };
            group.push(g);
        }
    } else {
        for i in 0..n_units {
            let path = &treat_mat[i * n_periods..(i + 1) * n_periods];
            for t in 1..n_periods {
                if path[t] < path[t - 1] {
                    return Err(Error::Validation(format!(
                        "non-monotone treatment path for unit '{}': treatment reverts at period {}",
                        unit_ids[i], period_labels[t]
                    )));
                }
            }
            let first = path.iter().position(|&v| v == 1.0);
            group.push(match first {
                None => Group::Never,
                Some(0) => {
                    return Err(Error::Validation(format!(
                        "unit '{}' is treated from the first period; period 0 must be pre-treatment for everyone",
                        unit_ids[i]
                    )))
                }
                Some(idx) => Group::At(idx),
            });
        }
    }

    let covariate_names = schema.covariates.clone();
    let mut panel = Panel::from_parts(t_max, group, outcome, covariates, covariate_names)?;
    panel.period_labels = period_labels;
    panel.unit_ids = unit_ids;
    Ok(panel)
}

/// Outcome of one structural check; `validate` is report-only.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    /// Short machine-readable name of the check.
    pub name: String,
    /// True when the check passed.
    pub passed: bool,
    /// Human-readable detail.
    pub message: String,
}

impl CheckResult {
    fn pass(name: &str, message: impl Into<String>) -> Self {
        CheckResult { name: name.to_string(), passed: true, message: message.into() }
    }
    fn fail(name: &str, message: impl Into<String>) -> Self {
        CheckResult { name: name.to_string(), passed: false, message: message.into() }
    }
}

/// Structural validation report: balance and monotonicity (enforced at
/// construction, re-asserted here), group support (a treated group with no
/// units drops its cells from the estimable set), and empirical positivity
/// (for every period `k < T` some unit must still be untreated at `k+1`,
/// or cells touching `k+1` have no comparison set).
pub fn validate(panel: &Panel) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let t_max = panel.t_max();

    // Balance and monotone treatment hold by construction of Panel; record
    // them so reports are explicit about what was checked.
    out.push(CheckResult::pass(
        "balance",
        format!(
            "{} units × {} periods, every cell present",
            panel.n_units(),
            t_max + 1
        ),
    ));
    out.push(CheckResult::pass(
        "monotone-treatment",
        "treatment indicator D_t = I(G ≤ t) is non-decreasing for every unit",
    ));

    // Group support: warn about empty treated groups.
    let tally = tally(panel);
    let mut empty: Vec<String> = Vec::new();
    for (g, &count) in tally.groups.iter().zip(&tally.counts) {
        if let Group::At(_) = g {
            if count == 0 {
                empty.push(g.to_string());
            }
        }
    }
    if empty.is_empty() {
        out.push(CheckResult::pass("group-support", "every treated group 1..=T has units"));
    } else {
        out.push(CheckResult::fail(
            "group-support",
            format!(
                "treated groups with no units: {}; their cells drop from the estimable set",
                empty.join(", ")
            ),
        ));
    }

    // Empirical positivity: each period k in 1..=T needs not-yet-treated
    // units (G > k) to serve as comparisons; k = T needs never-treated units.
    let mut bad_periods: Vec<String> = Vec::new();
    for k in 1..=t_max {
        let has_comparison = (0..panel.n_units()).any(|i| panel.group(i).not_yet_treated_at(k));
        if !has_comparison {
            bad_periods.push(k.to_string());
        }
    }
    if bad_periods.is_empty() {
        out.push(CheckResult::pass(
            "positivity",
            "every period 1..=T has not-yet-treated comparison units",
        ));
    } else {
        out.push(CheckResult::fail(
            "positivity",
            format!(
                "no not-yet-treated comparison units at periods: {}; cells whose sums touch these periods are not estimable",
                bad_periods.join(", ")
            ),
        ));
    }

    out
}

/// Group counts and sample proportions over `{1..=T, Never}`.
#[derive(Clone, Debug, Serialize)]
pub struct GroupTally {
    /// Group labels in display order: `1, …, T, Inf`.
    #[serde(serialize_with = "serialize_groups")]
    pub groups: Vec<Group>,
    /// Unit counts per group (zero counts included).
    pub counts: Vec<usize>,
    /// Sample proportions `P̂(G = g)`; sums to 1 up to rounding.
    pub proportions: Vec<f64>,
}

fn serialize_groups<S: serde::Serializer>(groups: &[Group], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(groups.len()))?;
    for g in groups {
        seq.serialize_element(&g.to_string())?;
    }
    seq.end()
}

impl GroupTally {
    /// Sample proportion `P̂(G = g)`; 0 for groups outside the label set.
    pub fn proportion(&self, g: Group) -> f64 {
        self.groups
            .iter()
            .position(|&h| h == g)
            .map_or(0.0, |idx| self.proportions[idx])
    }

    /// Unit count for group `g`.
    pub fn count(&self, g: Group) -> usize {
        self.groups
            .iter()
            .position(|&h| h == g)
            .map_or(0, |idx| self.counts[idx])
    }
}

/// Exact sample frequencies `P̂ₙ{I(G = g)}` over `{1..=T, Never}`.
pub fn tally(panel: &Panel) -> GroupTally {
    let groups = panel.group_labels();
    let mut counts = vec![0usize; groups.len()];
    for i in 0..panel.n_units() {
        let idx = match panel.group(i) {
            Group::At(g) => g - 1,
            Group::Never => groups.len() - 1,
        };
        counts[idx] += 1;
    }
    let n = panel.n_units() as f64;
    let proportions = counts.iter().map(|&c| c as f64 / n).collect();
    GroupTally { groups, counts, proportions }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().expect("temp file");
        f.write_all(content.as_bytes()).expect("write");
        f
    }

    fn default_schema() -> PanelSchema {
        PanelSchema::with_defaults("group", "y", &[])
    }

    #[test]
    fn loads_minimal_panel() {
        let csv = "unit,period,group,y\n\
                   a,0,1,0.0\na,1,1,3.0\n\
                   b,0,1,0.0\nb,1,1,3.0\n\
                   c,0,Inf,0.0\nc,1,Inf,2.0\n\
                   d,0,Inf,0.0\nd,1,Inf,1.0\n";
        let f = write_temp_csv(csv);
        let panel = load_long_csv(f.path(), &default_schema()).expect("load");
        assert_eq!(panel.t_max(), 1);
        assert_eq!(panel.n_units(), 4);
        assert_eq!(panel.group(0), Group::At(1));
        assert_eq!(panel.group(2), Group::Never);
        assert_eq!(panel.y(1, 1), 3.0);
    }

    #[test]
    fn infers_group_from_treatment_matrix() {
        // Treatment rows (0,0,1,1,1) over periods 0..4 imply adoption at
        // period 2 by the definition of the group label.
        let mut csv = String::from("unit,period,treat,y\n");
        for (t, d) in [0, 0, 1, 1, 1].iter().enumerate() {
            csv.push_str(&format!("a,{t},{d},0.0\n"));
        }
        for t in 0..5 {
            csv.push_str(&format!("b,{t},0,0.0\n"));
        }
        let f = write_temp_csv(&csv);
        let schema = PanelSchema {
            group: None,
            treat: Some("treat".to_string()),
            ..default_schema()
        };
        let panel = load_long_csv(f.path(), &schema).expect("load");
        assert_eq!(panel.group(0), Group::At(2));
        assert_eq!(panel.group(1), Group::Never);
    }

    #[test]
    fn rejects_non_monotone_treatment() {
        let mut csv = String::from("unit,period,treat,y\n");
        for (t, d) in [0, 1, 0, 1, 1].iter().enumerate() {
            csv.push_str(&format!("a,{t},{d},0.0\n"));
        }
        let f = write_temp_csv(&csv);
        let schema = PanelSchema {
            group: None,
            treat: Some("treat".to_string()),
            ..default_schema()
        };
        let err = load_long_csv(f.path(), &schema).unwrap_err();
        assert!(
            err.to_string().contains("non-monotone"),
            "unexpected error: {err}"
        );
    }

    #[test]
    fn rejects_missing_cell() {
        let csv = "unit,period,group,y\n\
                   a,0,1,0.0\na,1,1,3.0\n\
                   b,0,Inf,0.0\n";
        let f = write_temp_csv(csv);
        let err = load_long_csv(f.path(), &default_schema()).unwrap_err();
        assert!(err.to_string().contains("missing period"), "unexpected error: {err}");
    }

    #[test]
    fn rejects_group_zero() {
        let csv = "unit,period,group,y\n\
                   a,0,0,0.0\na,1,0,3.0\n\
                   b,0,Inf,0.0\nb,1,Inf,1.0\n";
        let f = write_temp_csv(csv);
        let err = load_long_csv(f.path(), &default_schema()).unwrap_err();
        assert!(err.to_string().contains("group label 0"), "unexpected error: {err}");
    }

    #[test]
    fn reindexes_noncontiguous_periods() {
        let csv = "unit,period,group,y\n\
                   a,2001,2003,1.0\na,2003,2003,2.0\na,2005,2003,3.0\n\
                   b,2001,Inf,1.0\nb,2003,Inf,1.5\nb,2005,Inf,2.0\n";
        let f = write_temp_csv(csv);
        let panel = load_long_csv(f.path(), &default_schema()).expect("load");
        assert_eq!(panel.t_max(), 2);
        assert_eq!(panel.period_labels(), &[2001, 2003, 2005]);
        assert_eq!(panel.group(0), Group::At(1), "group 2003 maps to period index 1");
    }

    #[test]
    fn tally_matches_hand_counts() {
        let csv = "unit,period,group,y\n\
                   a,0,1,0.0\na,1,1,0.0\na,2,1,0.0\n\
                   b,0,2,0.0\nb,1,2,0.0\nb,2,2,0.0\n\
                   c,0,2,0.0\nc,1,2,0.0\nc,2,2,0.0\n\
                   d,0,Inf,0.0\nd,1,Inf,0.0\nd,2,Inf,0.0\n";
        let f = write_temp_csv(csv);
        let panel = load_long_csv(f.path(), &default_schema()).expect("load");
        let tally = tally(&panel);
        assert_eq!(tally.proportion(Group::At(1)), 0.25);
        assert_eq!(tally.proportion(Group::At(2)), 0.5);
        assert_eq!(tally.proportion(Group::Never), 0.25);
        let total: f64 = tally.proportions.iter().sum();
        assert!((total - 1.0).abs() < 1e-15, "proportions sum to {total}");
    }

    #[test]
    fn validate_flags_positivity_gap() {
        // No never-treated units and nobody untreated after period 1:
        // period 2 has an empty comparison set.
        let csv = "unit,period,group,y\n\
                   a,0,1,0.0\na,1,1,0.0\na,2,1,0.0\n\
                   b,0,1,0.0\nb,1,1,0.0\nb,2,1,0.0\n\
                   c,0,2,0.0\nc,1,2,0.0\nc,2,2,0.0\n";
        let f = write_temp_csv(csv);
        let panel = load_long_csv(f.path(), &default_schema()).expect("load");
        let checks = validate(&panel);
        let positivity = checks.iter().find(|c| c.name == "positivity").expect("check");
        assert!(!positivity.passed);
        assert!(positivity.message.contains('2'), "message: {}", positivity.message);
    }

    #[test]
    fn well_formed_panel_passes_all_checks() {
        let csv = "unit,period,group,y\n\
                   a,0,1,0.0\na,1,1,0.0\na,2,1,0.0\n\
                   b,0,2,0.0\nb,1,2,0.0\nb,2,2,0.0\n\
                   c,0,Inf,0.0\nc,1,Inf,0.0\nc,2,Inf,0.0\n";
        let f = write_temp_csv(csv);
        let panel = load_long_csv(f.path(), &default_schema()).expect("load");
        assert!(validate(&panel).iter().all(|c| c.passed));
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let csv = "unit,period,group,y,x1\n\
                   a,0,1,0.123456789012345,-1.5\na,1,1,3.0000000001,0.25\n\
                   b,0,Inf,2e-13,7.0\nb,1,Inf,1.0,0.1\n";
        let f = write_temp_csv(csv);
        let schema = PanelSchema::with_defaults("group", "y", &["x1".to_string()]);
        let panel = load_long_csv(f.path(), &schema).expect("load");
        let out = tempfile::NamedTempFile::new().expect("temp");
        panel.write_long_csv(out.path()).expect("write");
        let reloaded = load_long_csv(out.path(), &schema).expect("reload");
        for i in 0..panel.n_units() {
            for t in 0..=panel.t_max() {
                assert_eq!(panel.y(i, t).to_bits(), reloaded.y(i, t).to_bits());
                for (a, b) in panel.x(i, t).iter().zip(reloaded.x(i, t)) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn group_label_parses_inf_variants() {
        assert_eq!("Inf".parse::<Group>().unwrap(), Group::Never);
        assert_eq!("inf".parse::<Group>().unwrap(), Group::Never);
        assert_eq!("3".parse::<Group>().unwrap(), Group::At(3));
        assert!("0".parse::<Group>().is_err());
        assert!("-1".parse::<Group>().is_err());
        assert!("x".parse::<Group>().is_err());
    }

    #[test]
    fn treatment_indicator_is_monotone() {
        for g in [Group::At(2), Group::Never] {
            let mut prev = false;
            for t in 0..5 {
                let d = g.treated_by(t);
                assert!(!prev || d, "D_t reverted for {g} at t={t}");
                prev = d;
            }
        }
    }
}
