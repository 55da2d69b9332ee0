//! Parameter sequences (α_n)_{n≥1} and (β_n)_{n≥0} driving the urn.
//!
//! Named regimes are described by [`ScheduleSpec`], which is what gets
//! serialized. Arbitrary closures are available through [`Schedule::custom`]
//! for library users but have no serialized form.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest index shift searched by [`example2`].
pub const MAX_EXAMPLE2_OFFSET: u64 = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("parameter out of range: {0}")]
    OutOfRange(String),
    #[error("beta_n < 0 starting at n={first_offending}; formula is valid from n={first_valid}")]
    Degenerate { first_offending: u64, first_valid: u64 },
    #[error("positivity failure: {reason}{}", suggested_offset.map(|o| format!(" (smallest valid offset: {o})")).unwrap_or_default())]
    PositivityFailure {
        reason: String,
        suggested_offset: Option<u64>,
    },
    #[error("schedule {which}_{n} = {value} is outside its domain")]
    Domain { which: &'static str, n: u64, value: f64 },
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

/// How Example-3.1 style schedules handle the early indices where the
/// β formula is negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurnIn {
    /// Refuse to build the schedule.
    Reject,
    /// Clamp β_n to 0 and set α_{n+1} = c|b₀|(1 − β_n), which keeps r*_n
    /// constant through the clamped steps.
    Clamp,
}

/// Serializable description of a named schedule.
///
/// Serializes as `{"variant": "...", "params": {...}}` with fields in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "params", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// β_n = 1 − (1+c)(1+n)^{−ε}, α_n = c|b₀|(1+c)n^{−ε}; ε_n = (1+n)^{−ε}, δ_n = cε_n.
    Example1 {
        c: f64,
        eps: f64,
        b0_norm: f64,
        burn_in: BurnIn,
    },
    /// r*_n = (n+offset)^{ε−δ}, 1 − β_n = (1+n+offset)^{−δ}/|b₀|; δ_n ~ (n+1)^{−δ}/|b₀|.
    Example2 {
        eps: f64,
        delta: f64,
        b0_norm: f64,
        offset: u64,
    },
    StandardPolya { alpha: f64 },
    RescaledPolya { alpha: f64, beta: f64 },
    /// α_n = a·n^{−exponent}, β_n = 1.
    PemantlePower { a: f64, exponent: f64 },
    /// Σ_{h≤n} α_h = exp(b n^a), β_n = 1.
    PemantleExp { b: f64, a: f64 },
    /// Constant α, β_n = 0.
    MemoryOne { alpha: f64 },
}

pub const VARIANT_NAMES: [&str; 7] = [
    "Example1",
    "Example2",
    "StandardPolya",
    "RescaledPolya",
    "PemantlePower",
    "PemantleExp",
    "MemoryOne",
];

impl ScheduleSpec {
    pub fn variant_name(&self) -> &'static str {
        match self {
            ScheduleSpec::Example1 { .. } => VARIANT_NAMES[0],
            ScheduleSpec::Example2 { .. } => VARIANT_NAMES[1],
            ScheduleSpec::StandardPolya { .. } => VARIANT_NAMES[2],
            ScheduleSpec::RescaledPolya { .. } => VARIANT_NAMES[3],
            ScheduleSpec::PemantlePower { .. } => VARIANT_NAMES[4],
            ScheduleSpec::PemantleExp { .. } => VARIANT_NAMES[5],
            ScheduleSpec::MemoryOne { .. } => VARIANT_NAMES[6],
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("schedule specs always serialize")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// Validates the parameters against the variant's admissible range.
    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ScheduleError::OutOfRange(format!("{name} must be > 0, got {v}")))
            }
        }
        match *self {
            ScheduleSpec::Example1 { c, eps, b0_norm, burn_in } => {
                positive("c", c)?;
                positive("b0_norm", b0_norm)?;
                if !(eps > 0.0 && eps <= 1.0) {
                    return Err(ScheduleError::OutOfRange(format!("eps must be in (0,1], got {eps}")));
                }
                if burn_in == BurnIn::Reject {
                    let first_valid = example1_first_valid_index(c, eps);
                    if first_valid > 0 {
                        return Err(ScheduleError::Degenerate { first_offending: 0, first_valid });
                    }
                }
                Ok(())
            }
            ScheduleSpec::Example2 { eps, delta, b0_norm, offset } => {
                check_example2_ranges(eps, delta, b0_norm)?;
                check_example2_offset(eps, delta, b0_norm, offset)
            }
            ScheduleSpec::StandardPolya { alpha } | ScheduleSpec::MemoryOne { alpha } => {
                positive("alpha", alpha)
            }
            ScheduleSpec::RescaledPolya { alpha, beta } => {
                positive("alpha", alpha)?;
                if beta >= 0.0 && beta.is_finite() {
                    Ok(())
                } else {
                    Err(ScheduleError::OutOfRange(format!("beta must be >= 0, got {beta}")))
                }
            }
            ScheduleSpec::PemantlePower { a, exponent } => {
                positive("a", a)?;
                if exponent.is_finite() {
                    Ok(())
                } else {
                    Err(ScheduleError::OutOfRange("exponent must be finite".into()))
                }
            }
            ScheduleSpec::PemantleExp { b, a } => {
                positive("b", b)?;
                if a > 0.0 && a < 0.5 {
                    Ok(())
                } else {
                    Err(ScheduleError::OutOfRange(format!("a must be in (0, 0.5), got {a}")))
                }
            }
        }
    }

    fn alpha_raw(&self, n: u64) -> f64 {
        match *self {
            ScheduleSpec::Example1 { c, .. } => c * self.b0_norm_or_one() * (1.0 - self.beta_raw(n - 1)),
            ScheduleSpec::Example2 { eps, delta, b0_norm, offset } => {
                example2_alpha_next(eps - delta, delta, b0_norm, (n - 1 + offset) as f64)
            }
            ScheduleSpec::StandardPolya { alpha }
            | ScheduleSpec::RescaledPolya { alpha, .. }
            | ScheduleSpec::MemoryOne { alpha } => alpha,
            ScheduleSpec::PemantlePower { a, exponent } => a * (n as f64).powf(-exponent),
            ScheduleSpec::PemantleExp { b, a } => {
                let hi = b * (n as f64).powf(a);
                let lo = b * ((n - 1) as f64).powf(a);
                hi.exp() * -(lo - hi).exp_m1()
            }
        }
    }

    fn beta_raw(&self, n: u64) -> f64 {
        match *self {
            ScheduleSpec::Example1 { c, eps, burn_in, .. } => {
                let b = 1.0 - (1.0 + c) * (1.0 + n as f64).powf(-eps);
                match burn_in {
                    BurnIn::Clamp => b.max(0.0),
                    BurnIn::Reject => b,
                }
            }
            ScheduleSpec::Example2 { delta, b0_norm, offset, .. } => {
                1.0 - (1.0 + (n + offset) as f64).powf(-delta) / b0_norm
            }
            ScheduleSpec::StandardPolya { .. }
            | ScheduleSpec::PemantlePower { .. }
            | ScheduleSpec::PemantleExp { .. } => 1.0,
            ScheduleSpec::RescaledPolya { beta, .. } => beta,
            ScheduleSpec::MemoryOne { .. } => 0.0,
        }
    }

    fn b0_norm_or_one(&self) -> f64 {
        match *self {
            ScheduleSpec::Example1 { b0_norm, .. } | ScheduleSpec::Example2 { b0_norm, .. } => b0_norm,
            _ => 1.0,
        }
    }

    /// The |B₀| an urn must start with for this schedule's closed-form r*_n
    /// to hold, when the variant imposes one.
    pub fn required_big_b0_norm(&self) -> Option<f64> {
        match *self {
            ScheduleSpec::Example1 { c, b0_norm, .. } => Some(c * b0_norm),
            ScheduleSpec::Example2 { eps, delta, b0_norm, offset } => {
                Some((offset as f64).powf(eps - delta) - b0_norm)
            }
            _ => None,
        }
    }

    /// The |b₀| the variant was built for, when it depends on one.
    pub fn b0_norm(&self) -> Option<f64> {
        match *self {
            ScheduleSpec::Example1 { b0_norm, .. } | ScheduleSpec::Example2 { b0_norm, .. } => Some(b0_norm),
            _ => None,
        }
    }
}

/// Smallest n with (1+c)(1+n)^{−ε} ≤ 1.
fn example1_first_valid_index(c: f64, eps: f64) -> u64 {
    let mut n = ((1.0 + c).powf(1.0 / eps) - 1.0).max(0.0).floor() as u64;
    while n > 0 && (1.0 + c) * ((n as f64)).powf(-eps) <= 1.0 {
        n -= 1;
    }
    while (1.0 + c) * (1.0 + n as f64).powf(-eps) > 1.0 {
        n += 1;
    }
    n
}

/// α_{n+1} of Example 3.2 written in terms of m = n + offset.
fn example2_alpha_next(gamma: f64, delta: f64, b0_norm: f64, m: f64) -> f64 {
    let decay = (1.0 + m).powf(-delta);
    (m + 1.0).powf(gamma) - m.powf(gamma) * (1.0 - decay / b0_norm) - decay
}

fn check_example2_ranges(eps: f64, delta: f64, b0_norm: f64) -> Result<()> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(ScheduleError::OutOfRange(format!("eps must be in (0,1), got {eps}")));
    }
    if !(delta > eps / 2.0 && delta < eps) {
        return Err(ScheduleError::OutOfRange(format!(
            "delta must be in (eps/2, eps) = ({}, {eps}), got {delta}",
            eps / 2.0
        )));
    }
    if !(b0_norm > 0.0 && b0_norm.is_finite()) {
        return Err(ScheduleError::OutOfRange(format!("b0_norm must be > 0, got {b0_norm}")));
    }
    Ok(())
}

/// Why `offset` is unusable for Example 3.2, if it is.
fn example2_offset_problem(eps: f64, delta: f64, b0_norm: f64, offset: u64) -> Option<String> {
    let gamma = eps - delta;
    let m = offset as f64;
    let alpha_first = example2_alpha_next(gamma, delta, b0_norm, m);
    if !(alpha_first > 0.0) {
        return Some(format!("alpha_1 = {alpha_first} is not positive at offset {offset}"));
    }
    // r*_0 = offset^γ must cover |b₀| since |B₀| ≥ 0.
    if m.powf(gamma) < b0_norm {
        return Some(format!(
            "r*_0 = offset^gamma = {} is below |b0| = {b0_norm} at offset {offset}",
            m.powf(gamma)
        ));
    }
    // β_n is increasing in n, so β_0 ≥ 0 suffices.
    let beta0 = 1.0 - (1.0 + m).powf(-delta) / b0_norm;
    if beta0 < 0.0 {
        return Some(format!("beta_0 = {beta0} is negative at offset {offset}"));
    }
    // Once m^γ ≥ |b₀| every later α_{n+1} is a sum of non-negative terms with a
    // strictly positive increment, so checking the first index is enough.
    None
}

fn check_example2_offset(eps: f64, delta: f64, b0_norm: f64, offset: u64) -> Result<()> {
    match example2_offset_problem(eps, delta, b0_norm, offset) {
        None => Ok(()),
        Some(reason) => Err(ScheduleError::PositivityFailure {
            reason,
            suggested_offset: find_example2_offset(eps, delta, b0_norm),
        }),
    }
}

fn find_example2_offset(eps: f64, delta: f64, b0_norm: f64) -> Option<u64> {
    (0..=MAX_EXAMPLE2_OFFSET).find(|&o| example2_offset_problem(eps, delta, b0_norm, o).is_none())
}

type SeqFn = Arc<dyn Fn(u64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Rule {
    Named(ScheduleSpec),
    Custom { alpha: SeqFn, beta: SeqFn },
}

/// A validated, immutable parameter schedule.
#[derive(Clone)]
pub struct Schedule {
    rule: Rule,
}

impl fmt::Debug for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            Rule::Named(spec) => f.debug_tuple("Schedule").field(spec).finish(),
            Rule::Custom { .. } => f.write_str("Schedule(<custom>)"),
        }
    }
}

impl Schedule {
    pub fn from_spec(spec: ScheduleSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { rule: Rule::Named(spec) })
    }

    /// Library-level schedule from arbitrary sequences. Not serializable.
    pub fn custom<A, B>(alpha: A, beta: B) -> Self
    where
        A: Fn(u64) -> f64 + Send + Sync + 'static,
        B: Fn(u64) -> f64 + Send + Sync + 'static,
    {
        Self {
            rule: Rule::Custom { alpha: Arc::new(alpha), beta: Arc::new(beta) },
        }
    }

    pub fn spec(&self) -> Option<&ScheduleSpec> {
        match &self.rule {
            Rule::Named(spec) => Some(spec),
            Rule::Custom { .. } => None,
        }
    }

    /// α_n for n ≥ 1.
    pub fn alpha(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(ScheduleError::Domain { which: "alpha", n, value: f64::NAN });
        }
        let value = match &self.rule {
            Rule::Named(spec) => spec.alpha_raw(n),
            Rule::Custom { alpha, .. } => alpha(n),
        };
        if value > 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(ScheduleError::Domain { which: "alpha", n, value })
        }
    }

    /// β_n for n ≥ 0.
    pub fn beta(&self, n: u64) -> Result<f64> {
        let value = match &self.rule {
            Rule::Named(spec) => spec.beta_raw(n),
            Rule::Custom { beta, .. } => beta(n),
        };
        if value >= 0.0 && value.is_finite() {
            Ok(value)
        } else {
            Err(ScheduleError::Domain { which: "beta", n, value })
        }
    }
}

/// Example 3.1 schedule. Returns the schedule and the |B₀| = c|b₀| the urn
/// must start with for r*_n = (1+c)|b₀| to hold at every step.
pub fn example1(c: f64, eps: f64, b0_norm: f64, burn_in: BurnIn) -> Result<(Schedule, f64)> {
    let spec = ScheduleSpec::Example1 { c, eps, b0_norm, burn_in };
    let schedule = Schedule::from_spec(spec)?;
    Ok((schedule, c * b0_norm))
}

/// First index at which the unclamped Example 3.1 β_n is non-negative.
pub fn example1_first_valid(c: f64, eps: f64) -> u64 {
    example1_first_valid_index(c, eps)
}

/// Example 3.2 schedule with the index shift `offset`. When `offset` is
/// `None` the smallest admissible shift up to [`MAX_EXAMPLE2_OFFSET`] is
/// used. Returns the schedule and the required |B₀| = offset^γ − |b₀|.
pub fn example2(eps: f64, delta: f64, b0_norm: f64, offset: Option<u64>) -> Result<(Schedule, f64)> {
    check_example2_ranges(eps, delta, b0_norm)?;
    let offset = match offset {
        Some(o) => o,
        None => find_example2_offset(eps, delta, b0_norm).ok_or_else(|| ScheduleError::PositivityFailure {
            reason: format!("no offset <= {MAX_EXAMPLE2_OFFSET} yields positive alpha and beta >= 0"),
            suggested_offset: None,
        })?,
    };
    let spec = ScheduleSpec::Example2 { eps, delta, b0_norm, offset };
    let required = spec.required_big_b0_norm().unwrap_or(0.0);
    Ok((Schedule::from_spec(spec)?, required))
}

pub fn standard_polya(alpha: f64) -> Result<Schedule> {
    Schedule::from_spec(ScheduleSpec::StandardPolya { alpha })
}

pub fn rescaled_polya(alpha: f64, beta: f64) -> Result<Schedule> {
    Schedule::from_spec(ScheduleSpec::RescaledPolya { alpha, beta })
}

pub fn pemantle_power(a: f64, exponent: f64) -> Result<Schedule> {
    Schedule::from_spec(ScheduleSpec::PemantlePower { a, exponent })
}

pub fn pemantle_exp(b: f64, a: f64) -> Result<Schedule> {
    Schedule::from_spec(ScheduleSpec::PemantleExp { b, a })
}

/// β_n ≡ 0 with an arbitrary α sequence.
pub fn memory_one<A>(alpha: A) -> Schedule
where
    A: Fn(u64) -> f64 + Send + Sync + 'static,
{
    Schedule::custom(alpha, |_| 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example1_rejects_negative_beta_at_zero() {
        let err = example1(1.0, 0.5, 1.0, BurnIn::Reject).unwrap_err();
        assert_eq!(err, ScheduleError::Degenerate { first_offending: 0, first_valid: 3 });
        assert_eq!(example1_first_valid(1.0, 1.0), 1);
    }

    #[test]
    fn example1_first_valid_index_solves_inequality() {
        // (1+n)^{0.5} >= 2  <=>  n >= 3
        let (s, _) = example1(1.0, 0.5, 1.0, BurnIn::Clamp).unwrap();
        assert_eq!(s.beta(2).unwrap(), 0.0);
        assert!(s.beta(3).unwrap() >= 0.0);
        assert_eq!(s.beta(3).unwrap(), 0.0);
        assert!(s.beta(4).unwrap() > 0.0);
    }

    #[test]
    fn example1_direct_formula() {
        let (s, need) = example1(1.0, 1.0, 1.0, BurnIn::Clamp).unwrap();
        assert_eq!(need, 1.0);
        assert!((s.beta(10).unwrap() - 9.0 / 11.0).abs() < 1e-15);
        assert!((s.alpha(10).unwrap() - 2.0 / 10.0).abs() < 1e-15);
        // |b0| = 3 scales α linearly
        let (s3, need3) = example1(1.0, 1.0, 3.0, BurnIn::Clamp).unwrap();
        assert_eq!(need3, 3.0);
        assert!((s3.alpha(10).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn example1_ranges() {
        assert!(matches!(example1(0.0, 0.5, 1.0, BurnIn::Clamp), Err(ScheduleError::OutOfRange(_))));
        assert!(matches!(example1(1.0, 1.5, 1.0, BurnIn::Clamp), Err(ScheduleError::OutOfRange(_))));
        assert!(matches!(example1(1.0, 0.0, 1.0, BurnIn::Clamp), Err(ScheduleError::OutOfRange(_))));
    }

    #[test]
    fn example2_offset_zero_fails_and_search_finds_one() {
        let err = example2(0.75, 0.5, 1.0, Some(0)).unwrap_err();
        match err {
            ScheduleError::PositivityFailure { suggested_offset, .. } => assert_eq!(suggested_offset, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
        let (s, need) = example2(0.75, 0.5, 1.0, None).unwrap();
        assert_eq!(need, 0.0);
        match s.spec().unwrap() {
            ScheduleSpec::Example2 { offset, .. } => assert_eq!(*offset, 1),
            _ => unreachable!(),
        }
    }

    #[test]
    fn example2_ranges() {
        assert!(example2(0.75, 0.75, 1.0, None).is_err());
        assert!(example2(0.75, 0.3, 1.0, None).is_err());
        assert!(example2(1.0, 0.75, 1.0, None).is_err());
    }

    #[test]
    fn example2_beta_tends_to_one() {
        let (s, _) = example2(0.6, 0.4, 2.0, None).unwrap();
        let far = s.beta(1_000_000_000).unwrap();
        assert!(far > 0.999 && far < 1.0);
    }

    #[test]
    fn example2_small_b0_needs_larger_offset() {
        let (s, need) = example2(0.8, 0.5, 0.5, None).unwrap();
        assert!(need >= 0.0);
        assert!(s.beta(0).unwrap() >= 0.0);
        assert!(s.alpha(1).unwrap() > 0.0);
    }

    #[test]
    fn constant_variants() {
        let s = standard_polya(2.0).unwrap();
        for n in 1..20 {
            assert_eq!(s.alpha(n).unwrap(), 2.0);
            assert_eq!(s.beta(n).unwrap(), 1.0);
        }
        let rp = rescaled_polya(1.0, 0.5).unwrap();
        assert_eq!(rp.beta(7).unwrap(), 0.5);
        assert!(standard_polya(0.0).is_err());
        assert!(rescaled_polya(1.0, -0.1).is_err());
        let m1 = memory_one(|n| 1.0 + n as f64);
        assert_eq!(m1.beta(5).unwrap(), 0.0);
        assert_eq!(m1.alpha(5).unwrap(), 6.0);
    }

    #[test]
    fn pemantle_variants() {
        let p = pemantle_power(1.0, 2.0).unwrap();
        assert_eq!(p.alpha(4).unwrap(), 1.0 / 16.0);
        assert_eq!(p.beta(4).unwrap(), 1.0);
        let e = pemantle_exp(1.0, 0.3).unwrap();
        // partial sums telescope to exp(b n^a) - 1
        let total: f64 = (1..=50).map(|n| e.alpha(n).unwrap()).sum();
        assert!((total - ((50f64).powf(0.3).exp() - 1.0)).abs() < 1e-9);
        assert!(pemantle_exp(1.0, 0.6).is_err());
    }

    #[test]
    fn alpha_index_zero_is_domain_error() {
        let s = standard_polya(1.0).unwrap();
        assert!(matches!(s.alpha(0), Err(ScheduleError::Domain { .. })));
    }

    #[test]
    fn json_shape() {
        let spec = ScheduleSpec::RescaledPolya { alpha: 1.0, beta: 0.5 };
        assert_eq!(spec.to_json(), r#"{"variant":"RescaledPolya","params":{"alpha":1.0,"beta":0.5}}"#);
        let e1 = ScheduleSpec::Example1 { c: 1.0, eps: 0.5, b0_norm: 1.0, burn_in: BurnIn::Clamp };
        assert_eq!(
            e1.to_json(),
            r#"{"variant":"Example1","params":{"c":1.0,"eps":0.5,"b0_norm":1.0,"burn_in":"clamp"}}"#
        );
        assert!(ScheduleSpec::from_json(r#"{"variant":"Nope","params":{}}"#).is_err());
    }
}
