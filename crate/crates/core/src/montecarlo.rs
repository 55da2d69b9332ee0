//! Seeded replica experiments and the CLT diagnostics computed from them.
//!
//! Each replica runs a single trajectory up to the largest horizon and is
//! summarized at every horizon on the way, so horizons are checkpoints of one
//! path rather than independent restarts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{Schedule, ScheduleError, ScheduleSpec};
use crate::urn::{new_state, UrnError, UrnParams};

/// Default cap on replicas × largest horizon.
pub const DEFAULT_STEP_BUDGET: u64 = 20_000_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("horizons must be >= 1 and strictly increasing (got {0:?})")]
    MinimumHorizon(Vec<u64>),
    #[error("at least {needed} replicas required, got {got}")]
    Replicas { needed: usize, got: usize },
    #[error("experiment needs {requested} steps, budget is {budget}")]
    ResourceLimit { requested: u64, budget: u64 },
    #[error("schedule {got} is not valid for this report (expected {expected})")]
    WrongRegime { expected: &'static str, got: &'static str },
    #[error("urn parameters incompatible with schedule: {0}")]
    Incompatible(String),
    #[error("p0 has a zero component at index {0}")]
    ZeroProbability(usize),
    #[error("late-trajectory variance was not recorded")]
    NotRecorded,
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Urn(#[from] UrnError),
}

pub type Result<T> = std::result::Result<T, MonteCarloError>;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replica `r`'s random stream.
pub fn replica_seed(base_seed: u64, replica: u64) -> u64 {
    base_seed ^ splitmix64(replica)
}

pub fn replica_rng(base_seed: u64, replica: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replica_seed(base_seed, replica))
}

/// Streaming count/mean/sum-of-squares with an exact-order-free merge.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan et al. pairwise combination.
    pub fn merge(&self, other: &Moments) -> Moments {
        if self.count == 0 {
            return *other;
        }
        if other.count == 0 {
            return *self;
        }
        let count = self.count + other.count;
        let (na, nb) = (self.count as f64, other.count as f64);
        let d = other.mean - self.mean;
        let mean = self.mean + d * nb / count as f64;
        let m2 = self.m2 + other.m2 + d * d * na * nb / count as f64;
        Moments { count, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance (NaN below two observations).
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn population_variance(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.m2 / self.count as f64
        }
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Optional per-step statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFlags {
    /// Within-replica variance of ψ_n over n ∈ (H/2, H] for each horizon H.
    pub late_psi_variance: bool,
}

impl Default for RecordFlags {
    fn default() -> Self {
        Self { late_psi_variance: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub params: UrnParams,
    pub schedule: ScheduleSpec,
    pub horizons: Vec<u64>,
    pub replicas: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub record: RecordFlags,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_STEP_BUDGET
}

impl ExperimentConfig {
    pub fn new(params: UrnParams, schedule: ScheduleSpec, horizons: Vec<u64>, replicas: usize, base_seed: u64) -> Self {
        Self {
            params,
            schedule,
            horizons,
            replicas,
            base_seed,
            record: RecordFlags::default(),
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<Schedule> {
        if self.horizons.is_empty()
            || self.horizons[0] == 0
            || self.horizons.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(MonteCarloError::MinimumHorizon(self.horizons.clone()));
        }
        if self.replicas == 0 {
            return Err(MonteCarloError::Replicas { needed: 1, got: 0 });
        }
        let max_h = *self.horizons.last().unwrap();
        let requested = max_h.saturating_mul(self.replicas as u64);
        if requested > self.step_budget {
            return Err(MonteCarloError::ResourceLimit { requested, budget: self.step_budget });
        }
        let schedule = Schedule::from_spec(self.schedule.clone())?;
        if let Some(b0_norm) = self.schedule.b0_norm() {
            let got = self.params.b0_norm();
            if ((got - b0_norm) / b0_norm).abs() > 1e-9 {
                return Err(MonteCarloError::Incompatible(format!(
                    "schedule built for |b0| = {b0_norm}, urn has |b0| = {got}"
                )));
            }
        }
        if let Some(need) = self.schedule.required_big_b0_norm() {
            let got = self.params.big_b0_norm();
            if (got - need).abs() > 1e-9 * need.abs().max(1.0) {
                return Err(MonteCarloError::Incompatible(format!(
                    "{} requires |B0| = {need}, urn has |B0| = {got}",
                    self.schedule.variant_name()
                )));
            }
        }
        Ok(schedule)
    }
}

/// One replica observed at one horizon N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: usize,
    pub horizon: u64,
    pub counts: Vec<u64>,
    /// ξ̄_N
    pub xi_bar: Vec<f64>,
    /// ψ̄_{N−1} = Σ_{n=0}^{N−1} ψ_n / N
    pub psi_bar: Vec<f64>,
    /// θ̄_{N−1} = ψ̄_{N−1} − p₀
    pub theta_bar: Vec<f64>,
    /// ψ_N
    pub psi_final: Vec<f64>,
    /// (1/N) Σ ΔM_n accumulated step by step.
    pub mean_delta_m: Vec<f64>,
    /// Σ_i (O_i − N p₀ᵢ)²/(N p₀ᵢ); NaN when some p₀ᵢ = 0.
    pub chi2_stat: f64,
    pub psi_late_variance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonResult {
    pub horizon: u64,
    pub replicas: Vec<ReplicaSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub horizons: Vec<HorizonResult>,
}

impl ExperimentResult {
    pub fn at(&self, horizon: u64) -> Option<&HorizonResult> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }

    pub fn last(&self) -> &HorizonResult {
        self.horizons.last().expect("experiments have at least one horizon")
    }
}

/// Runs every replica (in parallel on the current rayon pool) and collects
/// the per-horizon summaries in replica order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let schedule = config.validate()?;
    let per_replica: Vec<Vec<ReplicaSummary>> = (0..config.replicas)
        .into_par_iter()
        .map(|r| run_replica(config, &schedule, r))
        .collect::<Result<_>>()?;

    let horizons = config
        .horizons
        .iter()
        .enumerate()
        .map(|(hi, &horizon)| HorizonResult {
            horizon,
            replicas: per_replica.iter().map(|v| v[hi].clone()).collect(),
        })
        .collect();
    Ok(ExperimentResult { horizons })
}

fn run_replica(config: &ExperimentConfig, schedule: &Schedule, replica: usize) -> Result<Vec<ReplicaSummary>> {
    let params = &config.params;
    let k = params.k();
    let p0 = params.p0();
    let mut rng = replica_rng(config.base_seed, replica as u64);
    let mut state = new_state(params);
    let mut psi_sum = vec![0.0; k];
    let mut dm_sum = vec![0.0; k];
    let mut psi_before = vec![0.0; k];
    let horizons = &config.horizons;
    let mut late: Vec<Vec<Moments>> = if config.record.late_psi_variance {
        vec![vec![Moments::new(); k]; horizons.len()]
    } else {
        Vec::new()
    };
    let mut out = Vec::with_capacity(horizons.len());
    let mut next = 0usize;

    while next < horizons.len() {
        psi_before.copy_from_slice(state.psi());
        for (s, p) in psi_sum.iter_mut().zip(&psi_before) {
            *s += p;
        }
        let draw = state.advance(params, schedule, &mut rng)?;
        for (i, (d, p)) in dm_sum.iter_mut().zip(&psi_before).enumerate() {
            *d += if i == draw.color { 1.0 - p } else { -p };
        }
        let n = state.n();
        for (hi, moments) in late.iter_mut().enumerate().skip(next) {
            let h = horizons[hi];
            if 2 * n > h {
                for (m, &p) in moments.iter_mut().zip(state.psi()) {
                    m.push(p);
                }
            }
        }
        if n == horizons[next] {
            let nf = n as f64;
            let counts = state.counts().to_vec();
            let xi_bar: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
            let psi_bar: Vec<f64> = psi_sum.iter().map(|s| s / nf).collect();
            let theta_bar = psi_bar.iter().zip(p0).map(|(a, b)| a - b).collect();
            let chi2_stat = classical_statistic(&counts, p0).unwrap_or(f64::NAN);
            out.push(ReplicaSummary {
                replica,
                horizon: n,
                counts,
                xi_bar,
                psi_bar,
                theta_bar,
                psi_final: state.psi().to_vec(),
                mean_delta_m: dm_sum.iter().map(|d| d / nf).collect(),
                chi2_stat,
                psi_late_variance: late
                    .get(next)
                    .map(|ms| ms.iter().map(Moments::population_variance).collect()),
            });
            next += 1;
        }
    }
    Ok(out)
}

/// Σ_i (O_i − N p₀ᵢ)²/(N p₀ᵢ).
pub fn classical_statistic(counts: &[u64], p0: &[f64]) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    counts
        .iter()
        .zip(p0)
        .enumerate()
        .map(|(i, (&o, &p))| {
            if p <= 0.0 {
                return Err(MonteCarloError::ZeroProbability(i));
            }
            let expected = n * p;
            Ok((o as f64 - expected).powi(2) / expected)
        })
        .sum()
}

/// N^{−(1−2e)} Σ_i (O_i − N p₀ᵢ)²/(N p₀ᵢ).
pub fn chi2_scaled_statistic(counts: &[u64], p0: &[f64], e: f64) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    Ok(classical_statistic(counts, p0)? * (n as f64).powf(-(1.0 - 2.0 * e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// ε_n = (n+1)^{−ε}, δ_n = cε_n.
    SameRate,
    /// ε_n = (n+1)^{−ε}, δ_n ~ c(n+1)^{−δ} with δ < ε.
    DifferentRates,
}

/// CLT diagnostics for one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub regime: Regime,
    pub horizon: u64,
    pub e: f64,
    pub lambda_theory: f64,
    pub lambda_hat: f64,
    /// Var_R[N^e(ξ̄ᵢ − p₀ᵢ)] / (p₀ᵢ(1 − p₀ᵢ)) per component.
    pub variance_ratio: Vec<f64>,
    /// R × k: N^e(ξ̄ᵢ − p₀ᵢ)/sqrt(λ̂ p₀ᵢ(1 − p₀ᵢ)).
    pub standardized: Vec<Vec<f64>>,
    /// R × k dominant term of the decomposition.
    pub dominant: Vec<Vec<f64>>,
    /// R × k remainder term of the decomposition.
    pub remainder: Vec<Vec<f64>>,
    pub remainder_norms: Vec<f64>,
}

impl CltReport {
    pub fn mean_remainder_norm(&self) -> f64 {
        self.remainder_norms.iter().sum::<f64>() / self.remainder_norms.len() as f64
    }

    /// Replica mean of each remainder component.
    pub fn remainder_component_means(&self) -> Vec<f64> {
        let k = self.remainder.first().map_or(0, Vec::len);
        let r = self.remainder.len() as f64;
        (0..k).map(|i| self.remainder.iter().map(|row| row[i]).sum::<f64>() / r).collect()
    }
}

/// λ from the limit theorems for the same-rate regime.
pub fn lambda_same_rate(c: f64, eps: f64) -> f64 {
    if eps < 1.0 {
        (c + 1.0).powi(2)
    } else {
        2.0 * c * (c + 1.0) + 1.0
    }
}

/// λ from the limit theorem for the different-rates regime.
pub fn lambda_different_rates(c: f64, eps: f64, delta: f64) -> f64 {
    c * c / (1.0 + 2.0 * (eps - delta))
}

/// λ̂ = (1/k) Σᵢ Var_R[N^e(ξ̄ᵢ − p₀ᵢ)] / (p₀ᵢ(1 − p₀ᵢ)), plus the per-component ratios.
pub fn lambda_hat(horizon: &HorizonResult, p0: &[f64], e: f64) -> Result<(f64, Vec<f64>)> {
    if horizon.replicas.len() < 2 {
        return Err(MonteCarloError::Replicas { needed: 2, got: horizon.replicas.len() });
    }
    if let Some(i) = p0.iter().position(|&p| p <= 0.0 || p >= 1.0) {
        return Err(MonteCarloError::ZeroProbability(i));
    }
    let scale = (horizon.horizon as f64).powf(e);
    let ratios: Vec<f64> = p0
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let m: Moments = horizon.replicas.iter().map(|s| scale * (s.xi_bar[i] - p)).collect();
            m.variance() / (p * (1.0 - p))
        })
        .collect();
    Ok((ratios.iter().sum::<f64>() / ratios.len() as f64, ratios))
}

fn build_report(
    regime: Regime,
    horizon: &HorizonResult,
    p0: &[f64],
    e: f64,
    lambda_theory: f64,
    split: impl Fn(&ReplicaSummary) -> (Vec<f64>, Vec<f64>),
) -> Result<CltReport> {
    let (lambda_hat, variance_ratio) = lambda_hat(horizon, p0, e)?;
    let scale = (horizon.horizon as f64).powf(e);
    let mut standardized = Vec::with_capacity(horizon.replicas.len());
    let mut dominant = Vec::with_capacity(horizon.replicas.len());
    let mut remainder = Vec::with_capacity(horizon.replicas.len());
    let mut remainder_norms = Vec::with_capacity(horizon.replicas.len());
    for s in &horizon.replicas {
        standardized.push(
            s.xi_bar
                .iter()
                .zip(p0)
                .map(|(x, p)| scale * (x - p) / (lambda_hat * p * (1.0 - p)).sqrt())
                .collect(),
        );
        let (dom, rem) = split(s);
        remainder_norms.push(rem.iter().map(|x| x * x).sum::<f64>().sqrt());
        dominant.push(dom);
        remainder.push(rem);
    }
    Ok(CltReport {
        regime,
        horizon: horizon.horizon,
        e,
        lambda_theory,
        lambda_hat,
        variance_ratio,
        standardized,
        dominant,
        remainder,
        remainder_norms,
    })
}

/// Same-rate regime: √N(ξ̄ − p₀) = (c+1)√N(ξ̄ − ψ̄_{N−1}) − √N D_N with
/// D_N = c(ξ̄ − ψ̄_{N−1}) − (ψ̄_{N−1} − p₀).
pub fn clt_report_same_rate(horizon: &HorizonResult, p0: &[f64], spec: &ScheduleSpec) -> Result<CltReport> {
    let (c, eps) = match *spec {
        ScheduleSpec::Example1 { c, eps, .. } => (c, eps),
        ref other => {
            return Err(MonteCarloError::WrongRegime { expected: "Example1", got: other.variant_name() })
        }
    };
    let root_n = (horizon.horizon as f64).sqrt();
    build_report(Regime::SameRate, horizon, p0, 0.5, lambda_same_rate(c, eps), |s| {
        let mut dom = Vec::with_capacity(p0.len());
        let mut rem = Vec::with_capacity(p0.len());
        for i in 0..p0.len() {
            let gap = s.xi_bar[i] - s.psi_bar[i];
            dom.push((c + 1.0) * root_n * gap);
            rem.push(root_n * (c * gap - (s.psi_bar[i] - p0[i])));
        }
        (dom, rem)
    })
}

/// Different-rates regime: e = 1/2 − (ε − δ), dominant term N^e θ̄_{N−1},
/// remainder N^e(ξ̄ − p₀) − N^e θ̄_{N−1}.
pub fn clt_report_different_rates(horizon: &HorizonResult, p0: &[f64], spec: &ScheduleSpec) -> Result<CltReport> {
    let (eps, delta, b0_norm) = match *spec {
        ScheduleSpec::Example2 { eps, delta, b0_norm, .. } => (eps, delta, b0_norm),
        ref other => {
            return Err(MonteCarloError::WrongRegime { expected: "Example2", got: other.variant_name() })
        }
    };
    let e = 0.5 - (eps - delta);
    let c = 1.0 / b0_norm;
    let scale = (horizon.horizon as f64).powf(e);
    build_report(Regime::DifferentRates, horizon, p0, e, lambda_different_rates(c, eps, delta), |s| {
        let dom: Vec<f64> = s.theta_bar.iter().map(|t| scale * t).collect();
        let rem = s
            .xi_bar
            .iter()
            .zip(p0)
            .zip(&dom)
            .map(|((x, p), d)| scale * (x - p) - d)
            .collect();
        (dom, rem)
    })
}

/// Picks the CLT report matching the schedule variant, if there is one.
pub fn clt_report_for(horizon: &HorizonResult, p0: &[f64], spec: &ScheduleSpec) -> Option<Result<CltReport>> {
    match spec {
        ScheduleSpec::Example1 { .. } => Some(clt_report_same_rate(horizon, p0, spec)),
        ScheduleSpec::Example2 { .. } => Some(clt_report_different_rates(horizon, p0, spec)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomLimitReport {
    pub horizon: u64,
    /// Across-replica variance of ψ_{N,i}.
    pub across_variance: Vec<f64>,
    /// Replica-averaged variance of ψ_{n,i} over n ∈ (N/2, N].
    pub within_late_variance: Vec<f64>,
    pub random_limit_detected: bool,
}

/// Ratio above which the spread between replicas is attributed to a random limit.
pub const RANDOM_LIMIT_RATIO: f64 = 10.0;

/// Compares the spread of ψ_N between replicas with its late fluctuation
/// inside each replica.
pub fn random_limit_check(horizon: &HorizonResult) -> Result<RandomLimitReport> {
    let first = horizon.replicas.first().ok_or(MonteCarloError::Replicas { needed: 2, got: 0 })?;
    if horizon.replicas.len() < 2 {
        return Err(MonteCarloError::Replicas { needed: 2, got: horizon.replicas.len() });
    }
    let k = first.psi_final.len();
    let mut across_variance = Vec::with_capacity(k);
    let mut within_late_variance = Vec::with_capacity(k);
    for i in 0..k {
        let across: Moments = horizon.replicas.iter().map(|s| s.psi_final[i]).collect();
        across_variance.push(across.variance());
        let within: Moments = horizon
            .replicas
            .iter()
            .map(|s| s.psi_late_variance.as_ref().map(|v| v[i]).ok_or(MonteCarloError::NotRecorded))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .collect();
        within_late_variance.push(within.mean());
    }
    let random_limit_detected = across_variance
        .iter()
        .zip(&within_late_variance)
        .any(|(a, w)| *a > RANDOM_LIMIT_RATIO * w);
    Ok(RandomLimitReport { horizon: horizon.horizon, across_variance, within_late_variance, random_limit_detected })
}

/// Replica mean, standard deviation and Monte Carlo standard error of ξ̄ᵢ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanProfile {
    pub horizon: u64,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub standard_error: Vec<f64>,
}

pub fn mean_profile(horizon: &HorizonResult) -> MeanProfile {
    let k = horizon.replicas.first().map_or(0, |s| s.xi_bar.len());
    let r = horizon.replicas.len() as f64;
    let moments: Vec<Moments> = (0..k)
        .map(|i| horizon.replicas.iter().map(|s| s.xi_bar[i]).collect())
        .collect();
    MeanProfile {
        horizon: horizon.horizon,
        mean: moments.iter().map(Moments::mean).collect(),
        sd: moments.iter().map(|m| m.variance().sqrt()).collect(),
        standard_error: moments.iter().map(|m| (m.variance() / r).sqrt()).collect(),
    }
}

/// Replica average of ‖θ_N‖² = ‖ψ_N − p₀‖².
pub fn mean_theta_sq(horizon: &HorizonResult, p0: &[f64]) -> f64 {
    let total: f64 = horizon
        .replicas
        .iter()
        .map(|s| s.psi_final.iter().zip(p0).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum();
    total / horizon.replicas.len() as f64
}

/// Least-squares slope of ln y against ln x.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
