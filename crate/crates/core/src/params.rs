//! System and algorithm parameters and the seven feasibility constraints.
//!
//! `alpha`, `f` and `ns_min` describe the environment (churn rate, Byzantine
//! bound, minimum server count); `gamma` and `beta` are the join-bound and
//! read/write-bound fractions the algorithm is configured with. The register
//! is only guaranteed correct when all seven constraints hold.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("invalid parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("constraint ({0}) does not hold; no admissible interval exists")]
    Precondition(u8),
    #[error("no ns_min up to {cap} admits a feasible (gamma, beta) region")]
    SearchExhausted { cap: u64 },
    #[error("malformed parameter file: {0}")]
    Parse(String),
}

/// Parameter bundle; `gamma`/`beta` may be unset while exploring.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params<S> {
    pub alpha: S,
    pub f: u64,
    pub ns_min: u64,
    #[serde(default)]
    pub gamma: Option<S>,
    #[serde(default)]
    pub beta: Option<S>,
    pub d: S,
}

impl<S: Scalar> Params<S> {
    pub fn new(alpha: S, f: u64, ns_min: u64, gamma: Option<S>, beta: Option<S>) -> Self {
        Params { alpha, f, ns_min, gamma, beta, d: S::one() }
    }

    /// Field-level invariants (not the seven constraints).
    pub fn validate(&self) -> Result<(), ParamsError> {
        let invalid = |field, reason: &str| Err(ParamsError::Invalid { field, reason: reason.to_string() });
        if self.alpha < S::zero() {
            return invalid("alpha", "must be >= 0");
        }
        if self.f < 1 {
            return invalid("f", "must be >= 1");
        }
        if self.ns_min < 1 {
            return invalid("ns_min", "must be >= 1");
        }
        if let Some(g) = &self.gamma {
            if *g <= S::zero() || *g > S::one() {
                return invalid("gamma", "must lie in (0, 1]");
            }
        }
        if let Some(b) = &self.beta {
            if *b <= S::zero() || *b > S::one() {
                return invalid("beta", "must lie in (0, 1]");
            }
        }
        if self.d <= S::zero() {
            return invalid("d", "must be > 0");
        }
        Ok(())
    }

    /// Parses a `key=value` listing or a flat JSON object with the keys
    /// `alpha`, `f`, `ns_min`, `gamma`, `beta` and optionally `d`.
    ///
    /// Values go through [`Scalar::from_decimal`], so exact scalar types see
    /// `0.01` as exactly one hundredth.
    pub fn from_text(text: &str) -> Result<Self, ParamsError> {
        let pairs = if text.trim_start().starts_with('{') { json_pairs(text)? } else { kv_pairs(text)? };
        let mut alpha = None;
        let mut f = None;
        let mut ns_min = None;
        let mut gamma = None;
        let mut beta = None;
        let mut d = None;
        for (key, value) in pairs {
            let scalar =
                || S::from_decimal(&value).ok_or_else(|| ParamsError::Parse(format!("{key}: not a number: {value}")));
            let integer = || {
                value.trim().parse::<u64>().map_err(|_| ParamsError::Parse(format!("{key}: not an integer: {value}")))
            };
            let unset = |v: &str| matches!(v.trim(), "" | "none" | "null" | "N/A" | "n/a");
            match key.as_str() {
                "alpha" => alpha = Some(scalar()?),
                "f" => f = Some(integer()?),
                "ns_min" => ns_min = Some(integer()?),
                "gamma" if unset(&value) => gamma = None,
                "gamma" => gamma = Some(scalar()?),
                "beta" if unset(&value) => beta = None,
                "beta" => beta = Some(scalar()?),
                "d" => d = Some(scalar()?),
                other => return Err(ParamsError::Parse(format!("unknown key {other}"))),
            }
        }
        let missing = |k: &str| ParamsError::Parse(format!("missing key {k}"));
        let params = Params {
            alpha: alpha.ok_or_else(|| missing("alpha"))?,
            f: f.ok_or_else(|| missing("f"))?,
            ns_min: ns_min.ok_or_else(|| missing("ns_min"))?,
            gamma,
            beta,
            d: d.unwrap_or_else(S::one),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn to_f64(&self) -> Params<f64> {
        Params {
            alpha: self.alpha.to_f64_lossy(),
            f: self.f,
            ns_min: self.ns_min,
            gamma: self.gamma.as_ref().map(Scalar::to_f64_lossy),
            beta: self.beta.as_ref().map(Scalar::to_f64_lossy),
            d: self.d.to_f64_lossy(),
        }
    }
}

fn kv_pairs(text: &str) -> Result<Vec<(String, String)>, ParamsError> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| ParamsError::Parse(format!("expected key=value, got {l:?}")))
        })
        .collect()
}

fn json_pairs(text: &str) -> Result<Vec<(String, String)>, ParamsError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ParamsError::Parse(e.to_string()))?;
    let object = value.as_object().ok_or_else(|| ParamsError::Parse("expected a JSON object".into()))?;
    Ok(object
        .iter()
        .map(|(k, v)| {
            let v = match v {
                serde_json::Value::Null => "none".to_string(),
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), v)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `lhs <= rhs`
    Le,
    /// `lhs >= rhs`
    Ge,
    /// `lhs > rhs`
    Gt,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Gt => ">",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    Evaluated,
    /// The constraint bounds `gamma` or `beta`, which is unset.
    NotApplicable,
    /// A denominator of the bound is `<= 0`.
    DomainError,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintRecord<S> {
    pub index: u8,
    pub relation: Relation,
    pub status: ConstraintStatus,
    pub lhs: Option<S>,
    pub rhs: Option<S>,
    /// Positive when satisfied with room to spare.
    pub slack: Option<S>,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintReport<S> {
    pub per_constraint: Vec<ConstraintRecord<S>>,
    pub feasible: bool,
}

impl<S: Scalar> ConstraintReport<S> {
    pub fn record(&self, index: u8) -> &ConstraintRecord<S> {
        &self.per_constraint[index as usize - 1]
    }

    pub fn failing(&self) -> impl Iterator<Item = &ConstraintRecord<S>> {
        self.per_constraint.iter().filter(|r| !r.satisfied)
    }

    /// The most negative slack among failing constraints, if any fail.
    pub fn worst_slack(&self) -> Option<S> {
        self.failing().filter_map(|r| r.slack.clone()).fold(None, |acc: Option<S>, s| match acc {
            Some(a) if a <= s => Some(a),
            _ => Some(s),
        })
    }

    pub fn to_f64(&self) -> ConstraintReport<f64> {
        ConstraintReport {
            per_constraint: self
                .per_constraint
                .iter()
                .map(|r| ConstraintRecord {
                    index: r.index,
                    relation: r.relation,
                    status: r.status,
                    lhs: r.lhs.as_ref().map(Scalar::to_f64_lossy),
                    rhs: r.rhs.as_ref().map(Scalar::to_f64_lossy),
                    slack: r.slack.as_ref().map(Scalar::to_f64_lossy),
                    satisfied: r.satisfied,
                })
                .collect(),
            feasible: self.feasible,
        }
    }
}

/// Which form of the seventh constraint's numerator to use.
///
/// The printed form carries a `+ 1` term; an alternative draft of the same
/// bound omits it. Reports can be produced under either.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeventhForm {
    #[default]
    AsPrinted,
    WithoutUnitTerm,
}

/// The right-hand sides of constraints (3)-(7) for fixed `(alpha, f, ns_min)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBounds<S> {
    pub gamma_lower: S,
    pub gamma_upper: S,
    pub beta_upper: S,
    /// `None` when the denominator of (6) is `<= 0`.
    pub beta_lower_6: Option<S>,
    /// `None` when the denominator of (7) is `<= 0`.
    pub beta_lower_7: Option<S>,
}

impl<S: Scalar> ConstraintBounds<S> {
    pub fn compute(alpha: &S, f: u64, ns_min: u64, seventh: SeventhForm) -> Self {
        let one = S::one();
        let two = S::from_u64_lossy(2);
        let f_s = S::from_u64_lossy(f);
        let n = S::from_u64_lossy(ns_min);
        let up = one.clone() + alpha.clone();
        let down = one.clone() - alpha.clone();
        let down3 = down.powi(3);
        let up2 = up.powi(2);
        let up3 = up.powi(3);

        let gamma_lower = (one.clone() + two.clone() * f_s.clone()) / (down3.clone() * n.clone())
            + up3.clone() / down3.clone()
            - one.clone();
        let gamma_upper = down3.clone() / up3.clone() - f_s.clone() / (up3.clone() * n.clone());
        let beta_upper = down3.clone() / up2.clone() - f_s.clone() / (up2.clone() * n.clone());

        let f_over_n = f_s.clone() / n.clone();
        let denom6 = down.powi(4) - f_over_n.clone();
        let beta_lower_6 =
            (denom6 > S::zero()).then(|| (up.powi(5) - one.clone() + two.clone() * f_over_n.clone()) / denom6.clone());

        let three = S::from_u64_lossy(3);
        let unit = match seventh {
            SeventhForm::AsPrinted => one.clone(),
            SeventhForm::WithoutUnitTerm => S::zero(),
        };
        let numer7 = up3 - down3 + unit + (one.clone() + three * f_s) / n;
        let quad = two.clone() + two.clone() * alpha.clone() + alpha.clone() * alpha.clone();
        let denom7 = quad * down.powi(2) / up2 - two * f_over_n;
        let beta_lower_7 = (denom7 > S::zero()).then(|| numer7 / denom7);

        ConstraintBounds { gamma_lower, gamma_upper, beta_upper, beta_lower_6, beta_lower_7 }
    }

    /// Strict lower bound on `beta`: the larger of (6) and (7).
    pub fn beta_lower(&self) -> Option<S> {
        match (&self.beta_lower_6, &self.beta_lower_7) {
            (Some(a), Some(b)) => Some(if a >= b { a.clone() } else { b.clone() }),
            _ => None,
        }
    }
}

/// `1 - 2^(-1/4)`, the churn-rate ceiling of constraint (1).
pub const CHURN_RATE_CEILING: f64 = 0.159_103_584_746_285_5;

fn churn_rate_ok<S: Scalar>(alpha: &S) -> bool {
    // alpha <= 1 - 2^(-1/4)  <=>  alpha <= 1 and (1 - alpha)^4 >= 1/2
    let one = S::one();
    let half = one.clone() / S::from_u64_lossy(2);
    *alpha <= one && (one - alpha.clone()).powi(4) >= half
}

fn evaluated<S: Scalar>(index: u8, relation: Relation, lhs: S, rhs: S) -> ConstraintRecord<S> {
    let slack = match relation {
        Relation::Le => rhs.clone() - lhs.clone(),
        Relation::Ge | Relation::Gt => lhs.clone() - rhs.clone(),
    };
    let satisfied = match relation {
        Relation::Gt => slack > S::zero(),
        _ => slack >= S::zero(),
    };
    ConstraintRecord {
        index,
        relation,
        status: ConstraintStatus::Evaluated,
        lhs: Some(lhs),
        rhs: Some(rhs),
        slack: Some(slack),
        satisfied,
    }
}

fn not_applicable<S>(index: u8, relation: Relation) -> ConstraintRecord<S> {
    ConstraintRecord {
        index,
        relation,
        status: ConstraintStatus::NotApplicable,
        lhs: None,
        rhs: None,
        slack: None,
        satisfied: true,
    }
}

fn domain_error<S>(index: u8, relation: Relation, lhs: Option<S>) -> ConstraintRecord<S> {
    ConstraintRecord {
        index,
        relation,
        status: ConstraintStatus::DomainError,
        lhs,
        rhs: None,
        slack: None,
        satisfied: false,
    }
}

/// Evaluates constraints (1)-(7) as printed.
pub fn check_constraints<S: Scalar>(p: &Params<S>) -> ConstraintReport<S> {
    check_constraints_with(p, SeventhForm::AsPrinted)
}

pub fn check_constraints_with<S: Scalar>(p: &Params<S>, seventh: SeventhForm) -> ConstraintReport<S> {
    let bounds = ConstraintBounds::compute(&p.alpha, p.f, p.ns_min, seventh);
    let mut records = Vec::with_capacity(7);

    let ceiling = S::from_f64(CHURN_RATE_CEILING).expect("finite");
    let mut first = evaluated(1, Relation::Le, p.alpha.clone(), ceiling);
    first.satisfied = churn_rate_ok(&p.alpha);
    records.push(first);

    let one = S::one();
    let size_margin =
        (one.clone() - p.alpha.clone()).powi(3) * S::from_u64_lossy(p.ns_min) - S::from_u64_lossy(2 * p.f);
    records.push(evaluated(2, Relation::Le, one, size_margin));

    match &p.gamma {
        Some(g) => {
            records.push(evaluated(3, Relation::Ge, g.clone(), bounds.gamma_lower.clone()));
            records.push(evaluated(4, Relation::Le, g.clone(), bounds.gamma_upper.clone()));
        }
        None => {
            records.push(not_applicable(3, Relation::Ge));
            records.push(not_applicable(4, Relation::Le));
        }
    }
    match &p.beta {
        Some(b) => {
            records.push(evaluated(5, Relation::Le, b.clone(), bounds.beta_upper.clone()));
            for (index, lower) in [(6, &bounds.beta_lower_6), (7, &bounds.beta_lower_7)] {
                records.push(match lower {
                    Some(l) => evaluated(index, Relation::Gt, b.clone(), l.clone()),
                    None => domain_error(index, Relation::Gt, Some(b.clone())),
                });
            }
        }
        None => {
            records.push(not_applicable(5, Relation::Le));
            for index in [6, 7] {
                let lower = if index == 6 { &bounds.beta_lower_6 } else { &bounds.beta_lower_7 };
                records.push(match lower {
                    Some(_) => not_applicable(index, Relation::Gt),
                    None => domain_error(index, Relation::Gt, None),
                });
            }
        }
    }

    let feasible = records.iter().all(|r| r.satisfied);
    ConstraintReport { per_constraint: records, feasible }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Endpoint<S> {
    pub value: S,
    pub inclusive: bool,
}

/// A possibly empty interval of the real line.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Interval<S> {
    Empty,
    Range { lower: Endpoint<S>, upper: Endpoint<S> },
}

impl<S: Scalar> Interval<S> {
    pub fn new(lower: Endpoint<S>, upper: Endpoint<S>) -> Self {
        let both_closed = lower.inclusive && upper.inclusive;
        let nonempty = if both_closed { lower.value <= upper.value } else { lower.value < upper.value };
        if nonempty {
            Interval::Range { lower, upper }
        } else {
            Interval::Empty
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Interval::Empty)
    }

    pub fn contains(&self, x: &S) -> bool {
        match self {
            Interval::Empty => false,
            Interval::Range { lower, upper } => {
                let above = if lower.inclusive { *x >= lower.value } else { *x > lower.value };
                let below = if upper.inclusive { *x <= upper.value } else { *x < upper.value };
                above && below
            }
        }
    }

    pub fn lower(&self) -> Option<&S> {
        match self {
            Interval::Empty => None,
            Interval::Range { lower, .. } => Some(&lower.value),
        }
    }

    pub fn upper(&self) -> Option<&S> {
        match self {
            Interval::Empty => None,
            Interval::Range { upper, .. } => Some(&upper.value),
        }
    }

    /// Midpoint of a non-empty interval.
    pub fn midpoint(&self) -> Option<S> {
        match self {
            Interval::Empty => None,
            Interval::Range { lower, upper } => {
                Some((lower.value.clone() + upper.value.clone()) / S::from_u64_lossy(2))
            }
        }
    }
}

/// Admissible `gamma` and `beta` for a fixed environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibleRegion<S> {
    pub gamma: Interval<S>,
    pub beta: Interval<S>,
}

impl<S: Scalar> FeasibleRegion<S> {
    pub fn is_empty(&self) -> bool {
        self.gamma.is_empty() || self.beta.is_empty()
    }
}

/// Closes constraints (3)-(4) over `gamma` and (5)-(7) over `beta`.
///
/// Requires constraints (1) and (2) to hold for `(alpha, f, ns_min)`; any
/// `gamma`/`beta` set on `p` is ignored.
pub fn feasible_interval<S: Scalar>(p: &Params<S>) -> Result<FeasibleRegion<S>, ParamsError> {
    feasible_interval_with(p, SeventhForm::AsPrinted)
}

pub fn feasible_interval_with<S: Scalar>(
    p: &Params<S>,
    seventh: SeventhForm,
) -> Result<FeasibleRegion<S>, ParamsError> {
    let environment = Params { gamma: None, beta: None, ..p.clone() };
    let report = check_constraints_with(&environment, seventh);
    for index in [1, 2] {
        if !report.record(index).satisfied {
            return Err(ParamsError::Precondition(index));
        }
    }
    let bounds = ConstraintBounds::compute(&p.alpha, p.f, p.ns_min, seventh);
    let gamma = Interval::new(
        Endpoint { value: bounds.gamma_lower.clone(), inclusive: true },
        Endpoint { value: bounds.gamma_upper.clone(), inclusive: true },
    );
    let beta = match bounds.beta_lower() {
        Some(lower) => Interval::new(
            Endpoint { value: lower, inclusive: false },
            Endpoint { value: bounds.beta_upper.clone(), inclusive: true },
        ),
        None => Interval::Empty,
    };
    Ok(FeasibleRegion { gamma, beta })
}

pub const DEFAULT_NS_MIN_CAP: u64 = 1_000_000;

/// Smallest `ns_min` for which constraints (2)-(7) leave a non-empty
/// `(gamma, beta)` region, scanning upward from `max(1, f + 1)`.
pub fn min_ns_min<S: Scalar>(alpha: &S, f: u64, cap: u64) -> Result<u64, ParamsError> {
    let probe = Params::new(alpha.clone(), f.max(1), 1, None, None);
    if !churn_rate_ok(alpha) {
        return Err(ParamsError::Precondition(1));
    }
    probe.validate()?;
    let start = 1.max(f + 1);
    for ns_min in start..=cap {
        let candidate = Params { ns_min, ..probe.clone() };
        if let Ok(region) = feasible_interval(&candidate) {
            if !region.is_empty() {
                return Ok(ns_min);
            }
        }
    }
    Err(ParamsError::SearchExhausted { cap })
}

/// One row of the reference parameter table, kept as decimal literals so
/// exact scalar types read the intended values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TableRow {
    pub f: u64,
    pub ns_min: u64,
    pub alpha: &'static str,
    /// `None` where the table prints "N/A".
    pub gamma: Option<&'static str>,
    pub beta: &'static str,
}

impl TableRow {
    pub fn params<S: Scalar>(&self) -> Params<S> {
        let parse = |s: &str| S::from_decimal(s).expect("table literal");
        Params::new(parse(self.alpha), self.f, self.ns_min, self.gamma.map(parse), Some(parse(self.beta)))
    }
}

const fn row(f: u64, ns_min: u64, alpha: &'static str, gamma: &'static str, beta: &'static str) -> TableRow {
    TableRow { f, ns_min, alpha, gamma: Some(gamma), beta }
}

pub const PARAMETER_TABLE: [TableRow; 19] = [
    TableRow { f: 1, ns_min: 8, alpha: "0", gamma: None, beta: "0.86" },
    row(1, 10, "0.01", "0.82", "0.84"),
    row(1, 13, "0.02", "0.79", "0.80"),
    row(1, 190, "0.05", "0.79", "0.80"),
    row(2, 19, "0.01", "0.80", "0.83"),
    row(2, 24, "0.02", "0.81", "0.82"),
    row(2, 347, "0.05", "0.70", "0.77"),
    row(5, 44, "0.01", "0.80", "0.83"),
    row(5, 57, "0.02", "0.79", "0.82"),
    row(5, 826, "0.05", "0.79", "0.82"),
    row(10, 85, "0.01", "0.80", "0.83"),
    row(10, 113, "0.02", "0.79", "0.82"),
    row(10, 1630, "0.05", "0.79", "0.82"),
    row(100, 838, "0.01", "0.79", "0.82"),
    row(100, 1107, "0.02", "0.79", "0.82"),
    row(100, 16015, "0.05", "0.79", "0.82"),
    row(1000, 8360, "0.01", "0.79", "0.82"),
    row(1000, 11042, "0.02", "0.79", "0.82"),
    row(1000, 159935, "0.05", "0.79", "0.82"),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RowAudit<S> {
    pub row: usize,
    pub params: Params<S>,
    pub as_printed: ConstraintReport<S>,
    pub without_unit_term: ConstraintReport<S>,
    /// Smallest `ns_min` admitting a region for this row's `(alpha, f)`,
    /// searched in `f64`.
    pub min_ns_min: Option<u64>,
}

/// Evaluates every table row under both forms of constraint (7).
pub fn audit_table<S: Scalar>() -> Vec<RowAudit<S>> {
    PARAMETER_TABLE
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let params = r.params::<S>();
            RowAudit {
                row: i + 1,
                as_printed: check_constraints_with(&params, SeventhForm::AsPrinted),
                without_unit_term: check_constraints_with(&params, SeventhForm::WithoutUnitTerm),
                min_ns_min: min_ns_min(&params.alpha.to_f64_lossy(), params.f, params.ns_min.max(16) * 2).ok(),
                params,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    fn p64(alpha: f64, f: u64, ns_min: u64, gamma: Option<f64>, beta: Option<f64>) -> Params<f64> {
        Params::new(alpha, f, ns_min, gamma, beta)
    }

    // Straight transcription of the seven bounds, evaluated independently of
    // `ConstraintBounds` (powf instead of integer powers, no shared terms).
    fn oracle_bounds(a: f64, f: f64, n: f64) -> [f64; 5] {
        let g3 = (1.0 + 2.0 * f) / ((1.0 - a).powf(3.0) * n) + (1.0 + a).powf(3.0) / (1.0 - a).powf(3.0) - 1.0;
        let g4 = (1.0 - a).powf(3.0) / (1.0 + a).powf(3.0) - f / ((1.0 + a).powf(3.0) * n);
        let b5 = (1.0 - a).powf(3.0) / (1.0 + a).powf(2.0) - f / ((1.0 + a).powf(2.0) * n);
        let b6 = ((1.0 + a).powf(5.0) - 1.0 + 2.0 * f / n) / ((1.0 - a).powf(4.0) - f / n);
        let b7 = ((1.0 + a).powf(3.0) - (1.0 - a).powf(3.0) + 1.0 + (1.0 + 3.0 * f) / n)
            / ((2.0 + 2.0 * a + a * a) * (1.0 - a).powf(2.0) * (1.0 + a).powf(-2.0) - 2.0 * f / n);
        [g3, g4, b5, b6, b7]
    }

    #[test]
    fn bounds_match_independent_transcription() {
        for (a, f, n) in [(0.01, 1, 10), (0.0, 1, 8), (0.02, 5, 57), (0.05, 2, 347)] {
            let b = ConstraintBounds::compute(&a, f, n, SeventhForm::AsPrinted);
            let o = oracle_bounds(a, f as f64, n as f64);
            let got = [b.gamma_lower, b.gamma_upper, b.beta_upper, b.beta_lower_6.unwrap(), b.beta_lower_7.unwrap()];
            for (x, y) in got.iter().zip(o) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn second_table_row_is_feasible() {
        let report = check_constraints(&p64(0.01, 1, 10, Some(0.82), Some(0.84)));
        assert!(report.feasible, "{report:?}");
    }

    #[test]
    fn first_table_row_without_gamma() {
        let report = check_constraints(&p64(0.0, 1, 8, None, Some(0.86)));
        assert!(report.feasible);
        assert_eq!(report.record(3).status, ConstraintStatus::NotApplicable);
        assert_eq!(report.record(4).status, ConstraintStatus::NotApplicable);
        for i in [1, 2, 5, 6, 7] {
            assert_eq!(report.record(i).status, ConstraintStatus::Evaluated);
        }
    }

    #[test]
    fn excessive_churn_fails_first_constraint() {
        let report = check_constraints(&p64(0.2, 1, 100, Some(0.8), Some(0.8)));
        assert!(!report.feasible);
        assert!(!report.record(1).satisfied);
    }

    #[test]
    fn strictness_follows_relation() {
        // beta exactly on the (7) bound fails, exactly on the (5) bound passes.
        let b = ConstraintBounds::compute(&0.01, 1, 10, SeventhForm::AsPrinted);
        let on_seven = check_constraints(&p64(0.01, 1, 10, Some(0.8), b.beta_lower_7));
        assert!(!on_seven.record(7).satisfied);
        let on_five = check_constraints(&p64(0.01, 1, 10, Some(0.8), Some(b.beta_upper)));
        assert!(on_five.record(5).satisfied);
    }

    #[test]
    fn domain_error_is_reported_not_raised() {
        // f / ns_min > (1 - alpha)^4 makes the (6) denominator negative.
        let report = check_constraints(&p64(0.0, 5, 4, Some(0.5), Some(0.5)));
        assert_eq!(report.record(6).status, ConstraintStatus::DomainError);
        assert!(!report.feasible);
    }

    #[test]
    fn interval_for_second_row_environment() {
        let region = feasible_interval(&p64(0.01, 1, 10, None, None)).unwrap();
        let (gl, gu) = (*region.gamma.lower().unwrap(), *region.gamma.upper().unwrap());
        let (bl, bu) = (*region.beta.lower().unwrap(), *region.beta.upper().unwrap());
        for (got, want) in [(gl, 0.3711), (gu, 0.8447), (bl, 0.8387), (bu, 0.8531)] {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn beta_upper_without_churn_is_one_minus_f_over_n() {
        let region = feasible_interval(&p64(0.0, 1, 8, None, None)).unwrap();
        assert!((region.beta.upper().unwrap() - 0.875).abs() < 1e-12);
    }

    #[test]
    fn interval_requires_size_constraint() {
        let err = feasible_interval(&p64(0.159, 1000, 10, None, None)).unwrap_err();
        assert_eq!(err, ParamsError::Precondition(2));
    }

    #[test]
    fn minimum_sizes_reproduce_table_column() {
        assert_eq!(min_ns_min(&0.01, 1, DEFAULT_NS_MIN_CAP), Ok(10));
        assert_eq!(min_ns_min(&0.0, 1, DEFAULT_NS_MIN_CAP), Ok(8));
        assert_eq!(min_ns_min(&0.01, 2, DEFAULT_NS_MIN_CAP), Ok(19));
        assert!(min_ns_min(&0.02, 1, DEFAULT_NS_MIN_CAP).unwrap() <= 13);
    }

    #[test]
    fn search_cap_is_echoed() {
        assert_eq!(min_ns_min(&0.01, 1, 5), Err(ParamsError::SearchExhausted { cap: 5 }));
    }

    #[test]
    fn exact_and_float_agree_on_table() {
        let exact = audit_table::<BigRational>();
        let float = audit_table::<f64>();
        for (e, f) in exact.iter().zip(&float) {
            for (re, rf) in e.as_printed.per_constraint.iter().zip(&f.as_printed.per_constraint) {
                assert_eq!(re.satisfied, rf.satisfied, "row {} constraint {}", e.row, re.index);
            }
        }
    }

    #[test]
    fn marginal_row_passes_only_without_unit_term() {
        let audit = &audit_table::<f64>()[6];
        assert_eq!((audit.params.f, audit.params.ns_min), (2, 347));
        assert!(!audit.as_printed.record(7).satisfied);
        let lower = audit.as_printed.record(7).rhs.unwrap();
        assert!((lower - 0.7724).abs() < 1e-4, "{lower}");
        assert!(audit.without_unit_term.record(7).satisfied);
    }

    #[test]
    fn parses_key_value_and_json() {
        let kv = Params::<f64>::from_text("alpha = 0.01\nf=1\nns_min=10\ngamma=0.82\nbeta=0.84 # row 2\n").unwrap();
        let js = Params::<f64>::from_text(r#"{"alpha":0.01,"f":1,"ns_min":10,"gamma":0.82,"beta":0.84}"#).unwrap();
        assert_eq!(kv, js);
        let na = Params::<f64>::from_text("alpha=0\nf=1\nns_min=8\ngamma=N/A\nbeta=0.86").unwrap();
        assert_eq!(na.gamma, None);
        assert!(Params::<f64>::from_text("alpha=0\nf=0\nns_min=8").is_err());
        assert!(Params::<f64>::from_text("alpha=0\nns_min=8").is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn growing_ns_min_never_breaks_a_constraint(
                alpha in 0.0f64..0.05, f in 1u64..20, ns in 10u64..2000, extra in 1u64..500,
                gamma in 0.3f64..0.9, beta in 0.5f64..0.95,
            ) {
                let small = check_constraints(&p64(alpha, f, ns, Some(gamma), Some(beta)));
                let large = check_constraints(&p64(alpha, f, ns + extra, Some(gamma), Some(beta)));
                if small.feasible {
                    for (s, l) in small.per_constraint.iter().zip(&large.per_constraint) {
                        prop_assert!(!s.satisfied || l.satisfied, "constraint {} flipped", s.index);
                    }
                }
            }

            #[test]
            fn growing_f_never_repairs_a_constraint(
                alpha in 0.0f64..0.05, f in 1u64..20, ns in 10u64..2000, extra in 1u64..10,
                gamma in 0.3f64..0.9, beta in 0.5f64..0.95,
            ) {
                let low = check_constraints(&p64(alpha, f, ns, Some(gamma), Some(beta)));
                let high = check_constraints(&p64(alpha, f + extra, ns, Some(gamma), Some(beta)));
                for (l, h) in low.per_constraint.iter().zip(&high.per_constraint).skip(1) {
                    if h.status == ConstraintStatus::Evaluated && l.status == ConstraintStatus::Evaluated {
                        prop_assert!(l.satisfied || !h.satisfied, "constraint {} repaired", l.index);
                    }
                }
            }

            #[test]
            fn interval_round_trip(
                alpha in 0.0f64..0.05, f in 1u64..5, ns in 5u64..400, u in 0.0f64..1.0, v in 0.0f64..1.0,
            ) {
                let env = p64(alpha, f, ns, None, None);
                if let Ok(region) = feasible_interval(&env) {
                    if let (Interval::Range { lower: gl, upper: gu }, Interval::Range { lower: bl, upper: bu }) =
                        (&region.gamma, &region.beta)
                    {
                        let gamma = gl.value + u * (gu.value - gl.value);
                        let beta = bl.value + v * (bu.value - bl.value);
                        if region.gamma.contains(&gamma) && region.beta.contains(&beta) {
                            let report = check_constraints(&p64(alpha, f, ns, Some(gamma), Some(beta)));
                            prop_assert!(report.feasible, "{report:?}");
                        }
                        let outside = check_constraints(&p64(alpha, f, ns, Some(gu.value + 0.01), Some(beta)));
                        prop_assert!((3..=7).any(|i| !outside.record(i).satisfied));
                        let outside = check_constraints(&p64(alpha, f, ns, Some(gamma), Some(bl.value)));
                        prop_assert!((3..=7).any(|i| !outside.record(i).satisfied));
                    }
                }
            }
        }
    }

    #[test]
    fn no_feasible_point_above_five_percent_churn_for_table_sizes() {
        for row in PARAMETER_TABLE {
            let mut alpha = 0.0505;
            while alpha <= CHURN_RATE_CEILING {
                if let Ok(region) = feasible_interval(&p64(alpha, row.f, row.ns_min, None, None)) {
                    assert!(region.is_empty(), "f={} ns_min={} alpha={alpha}", row.f, row.ns_min);
                }
                alpha += 0.0005;
            }
        }
    }
}
