//! Goodness-of-fit testing for clustered, correlated categorical data.
//!
//! Each cluster ℓ contributes the classical distance T_ℓ, deflated by its size
//! as Q_ℓ = T_ℓ / N_ℓ^η. Under the model Q_ℓ ≈ λ·χ²(k−1), so (η, λ) are
//! estimated by maximum likelihood across clusters and the Q_ℓ are then tested
//! against Γ((k−1)/2, 1/(2λ)).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::{GammaDist, SpecFunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GofError {
    #[error("reference probability {index} is not positive (cluster {cluster:?})")]
    ZeroProbability { cluster: Option<String>, index: usize },
    #[error("cluster {0:?} has no observations")]
    EmptyCluster(String),
    #[error("cluster {cluster:?} has {got} categories, expected {expected}")]
    Dimension { cluster: String, expected: usize, got: usize },
    #[error("cluster {0:?} has no reference probabilities")]
    MissingReference(String),
    #[error("at least 2 clusters are required, got {0}")]
    TooFewClusters(usize),
    #[error("all clusters have size {size}; only λ·N^η = {lambda_n_eta} is identifiable")]
    DegenerateClusters { size: u64, lambda_n_eta: f64 },
    #[error("all cluster statistics are zero")]
    ZeroStatistics,
    #[error("series has zero variance")]
    ZeroVariance,
    #[error("max lag {max_lag} needs a series longer than the lag (length {len})")]
    InvalidLag { max_lag: usize, len: usize },
    #[error("unknown benchmark cluster {0:?}")]
    UnknownBenchmark(String),
    #[error("{0}")]
    Domain(String),
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

pub type Result<T> = std::result::Result<T, GofError>;

/// Counts of one cluster together with its reference probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSample {
    pub label: String,
    pub counts: Vec<u64>,
    pub p_star: Option<Vec<f64>>,
}

impl ClusterSample {
    pub fn new(label: impl Into<String>, counts: Vec<u64>) -> Self {
        Self { label: label.into(), counts, p_star: None }
    }

    pub fn with_p_star(mut self, p_star: Vec<f64>) -> Self {
        self.p_star = Some(p_star);
        self
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    /// N_ℓ
    pub fn size(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn reference(&self) -> Result<&[f64]> {
        self.p_star.as_deref().ok_or_else(|| GofError::MissingReference(self.label.clone()))
    }

    /// T_ℓ against the attached reference probabilities.
    pub fn t_statistic(&self) -> Result<f64> {
        let p = self.reference()?;
        if p.len() != self.k() {
            return Err(GofError::Dimension { cluster: self.label.clone(), expected: p.len(), got: self.k() });
        }
        if self.size() == 0 {
            return Err(GofError::EmptyCluster(self.label.clone()));
        }
        t_statistic(&self.counts, p).map_err(|e| match e {
            GofError::ZeroProbability { index, .. } => {
                GofError::ZeroProbability { cluster: Some(self.label.clone()), index }
            }
            other => other,
        })
    }
}

/// T = Σᵢ (Oᵢ − N p*ᵢ)²/(N p*ᵢ).
pub fn t_statistic(counts: &[u64], p_star: &[f64]) -> Result<f64> {
    let n = counts.iter().sum::<u64>() as f64;
    let mut t = 0.0;
    for (i, (&o, &p)) in counts.iter().zip(p_star).enumerate() {
        if !(p > 0.0) {
            return Err(GofError::ZeroProbability { cluster: None, index: i });
        }
        let expected = n * p;
        t += (o as f64 - expected).powi(2) / expected;
    }
    Ok(t)
}

/// Q = T / N^η.
pub fn q_statistic(t: f64, n: u64, eta: f64) -> f64 {
    t / (n as f64).powf(eta)
}

/// Expected count and chi-squared contributions of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub observed: u64,
    pub expected: f64,
    pub chi2: f64,
    /// chi2 / N^η
    pub chi2_corrected: f64,
}

pub fn cell_breakdown(cluster: &ClusterSample, eta: f64) -> Result<Vec<Cell>> {
    let p = cluster.reference()?;
    let n = cluster.size();
    let scale = (n as f64).powf(-eta);
    cluster
        .counts
        .iter()
        .zip(p)
        .enumerate()
        .map(|(i, (&o, &pi))| {
            if !(pi > 0.0) {
                return Err(GofError::ZeroProbability { cluster: Some(cluster.label.clone()), index: i });
            }
            let expected = n as f64 * pi;
            let chi2 = (o as f64 - expected).powi(2) / expected;
            Ok(Cell { observed: o, expected, chi2, chi2_corrected: chi2 * scale })
        })
        .collect()
}

/// Divisor used for the number of independent clusters.
///
/// `LMinus1` accounts for a reference vector estimated from the pooled data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DfConvention {
    #[serde(rename = "L")]
    L,
    #[serde(rename = "L-1")]
    LMinus1,
}

impl DfConvention {
    pub fn clusters(self, l: usize) -> f64 {
        match self {
            DfConvention::L => l as f64,
            DfConvention::LMinus1 => l as f64 - 1.0,
        }
    }
}

impl fmt::Display for DfConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DfConvention::L => "L",
            DfConvention::LMinus1 => "L-1",
        })
    }
}

impl FromStr for DfConvention {
    type Err = GofError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(DfConvention::L),
            "L-1" | "L_minus_1" | "LMinus1" => Ok(DfConvention::LMinus1),
            other => Err(GofError::Domain(format!("unknown df convention {other:?} (expected L or L-1)"))),
        }
    }
}

fn check_inputs(t: &[f64], n: &[u64]) -> Result<()> {
    if t.len() != n.len() {
        return Err(GofError::Domain(format!("{} statistics for {} cluster sizes", t.len(), n.len())));
    }
    if t.len() < 2 {
        return Err(GofError::TooFewClusters(t.len()));
    }
    if let Some(x) = t.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(GofError::Domain(format!("cluster statistic must be finite and >= 0, got {x}")));
    }
    if n.iter().any(|&x| x == 0) {
        return Err(GofError::EmptyCluster(String::new()));
    }
    if t.iter().all(|&x| x == 0.0) {
        return Err(GofError::ZeroStatistics);
    }
    Ok(())
}

/// Log-weights ln t_ℓ − η ln N_ℓ, with −∞ for t_ℓ = 0.
fn log_weights(eta: f64, t: &[f64], ln_n: &[f64]) -> Vec<f64> {
    t.iter().zip(ln_n).map(|(&ti, &l)| ti.ln() - eta * l).collect()
}

fn log_sum_exp(w: &[f64]) -> f64 {
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + w.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// ln S(η) with S(η) = Σ t_ℓ / N_ℓ^η.
fn ln_s(eta: f64, t: &[f64], ln_n: &[f64]) -> f64 {
    log_sum_exp(&log_weights(eta, t, ln_n))
}

fn g_raw(eta: f64, t: &[f64], ln_n: &[f64], m: f64) -> f64 {
    let w = log_weights(eta, t, ln_n);
    let max = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (wi, l) in w.iter().zip(ln_n) {
        let e = (wi - max).exp();
        num += e * l;
        den += e;
    }
    num / den - ln_n.iter().sum::<f64>() / m
}

/// g(η) = Σ_ℓ p(η,ℓ) ln N_ℓ − (1/m) Σ_ℓ ln N_ℓ, where p(η,ℓ) ∝ t_ℓ/N_ℓ^η and
/// m is L or L−1 according to `df`.
pub fn g_function(eta: f64, t: &[f64], n: &[u64], df: DfConvention) -> Result<f64> {
    check_inputs(t, n)?;
    if n.iter().all(|&x| x == n[0]) {
        return Err(degenerate(t, n[0], t.len(), df));
    }
    let ln_n: Vec<f64> = n.iter().map(|&x| (x as f64).ln()).collect();
    Ok(g_raw(eta, t, &ln_n, df.clusters(t.len())))
}

fn degenerate(t: &[f64], size: u64, l: usize, df: DfConvention) -> GofError {
    // k is unknown here; callers with k rescale.
    GofError::DegenerateClusters { size, lambda_n_eta: t.iter().sum::<f64>() / df.clusters(l) }
}

/// λ(η) = S(η) / (m (k−1)).
pub fn lambda_of_eta(eta: f64, t: &[f64], n: &[u64], k: usize, df: DfConvention) -> f64 {
    let s: f64 = t.iter().zip(n).map(|(&ti, &ni)| ti / (ni as f64).powf(eta)).sum();
    s / (df.clusters(t.len()) * (k as f64 - 1.0))
}

/// Profile log-likelihood in η (λ maximized out), up to an additive constant:
/// −(m(k−1)/2) ln S(η) − ((k−1)/2) η Σ ln N_ℓ.
pub fn profile_loglik(eta: f64, t: &[f64], n: &[u64], k: usize, df: DfConvention) -> Result<f64> {
    check_inputs(t, n)?;
    let ln_n: Vec<f64> = n.iter().map(|&x| (x as f64).ln()).collect();
    let half = (k as f64 - 1.0) / 2.0;
    Ok(-half * df.clusters(t.len()) * ln_s(eta, t, &ln_n) - half * eta * ln_n.iter().sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MleCase {
    /// g(0) ≤ 0: the statistics do not grow with cluster size, η̂ = 0.
    CovNonPositive,
    /// g(0) > 0 > g(1): unique root in (0, 1).
    Interior,
    /// g(1) ≥ 0: T_ℓ grows at least linearly in N_ℓ; the model does not fit.
    BoundaryBadFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MleResult {
    pub eta_hat: f64,
    pub lambda_hat: f64,
    pub case: MleCase,
    pub g0: f64,
    pub g1: f64,
    /// Population covariance of (ln N_ℓ, T_ℓ) across clusters.
    pub cov_ln_n_t: f64,
    /// Population covariance of (ln N_ℓ, T_ℓ/N_ℓ).
    pub cov_ln_n_t_over_n: f64,
    pub normalization: DfConvention,
    pub clusters: usize,
    pub k: usize,
    /// Set for `BoundaryBadFit` and for λ̂ ≤ 1 with η̂ = 0.
    pub misfit: bool,
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n
}

const BISECTION_WIDTH: f64 = 1e-14;

/// Maximum-likelihood (η̂, λ̂) from per-cluster statistics t and sizes n.
pub fn mle_estimate(t: &[f64], n: &[u64], k: usize, df: DfConvention) -> Result<MleResult> {
    if k < 2 {
        return Err(GofError::Domain(format!("need k >= 2 categories, got {k}")));
    }
    check_inputs(t, n)?;
    let l = t.len();
    if df.clusters(l) < 1.0 {
        return Err(GofError::TooFewClusters(l));
    }
    if n.iter().all(|&x| x == n[0]) {
        return Err(match degenerate(t, n[0], l, df) {
            GofError::DegenerateClusters { size, lambda_n_eta } => {
                GofError::DegenerateClusters { size, lambda_n_eta: lambda_n_eta / (k as f64 - 1.0) }
            }
            e => e,
        });
    }
    let ln_n: Vec<f64> = n.iter().map(|&x| (x as f64).ln()).collect();
    let m = df.clusters(l);
    let g = |eta: f64| g_raw(eta, t, &ln_n, m);
    let g0 = g(0.0);
    let g1 = g(1.0);
    let t_over_n: Vec<f64> = t.iter().zip(n).map(|(&a, &b)| a / b as f64).collect();
    let cov_ln_n_t = covariance(&ln_n, t);
    let cov_ln_n_t_over_n = covariance(&ln_n, &t_over_n);

    let (case, eta_hat) = if g0 <= 0.0 {
        (MleCase::CovNonPositive, 0.0)
    } else if g1 < 0.0 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        while hi - lo > BISECTION_WIDTH {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (MleCase::Interior, 0.5 * (lo + hi))
    } else {
        (MleCase::BoundaryBadFit, 1.0)
    };
    let lambda_hat = lambda_of_eta(eta_hat, t, n, k, df);
    let misfit = case == MleCase::BoundaryBadFit || (case == MleCase::CovNonPositive && lambda_hat <= 1.0);
    Ok(MleResult {
        eta_hat,
        lambda_hat,
        case,
        g0,
        g1,
        cov_ln_n_t,
        cov_ln_n_t_over_n,
        normalization: df,
        clusters: l,
        k,
        misfit,
    })
}

/// Upper-tail p-value of Q under Γ((k−1)/2, 1/(2λ)).
pub fn cluster_test(q: f64, lambda: f64, k: usize) -> Result<f64> {
    if k < 2 {
        return Err(GofError::Domain(format!("need k >= 2 categories, got {k}")));
    }
    Ok(GammaDist::scaled_chi_squared(k as f64 - 1.0, lambda)?.sf(q)?)
}

/// Aggregate statistic ΣQ, its p-value and the Gamma shape m(k−1)/2 used.
pub fn aggregate_test(q: &[f64], lambda: f64, k: usize, df: DfConvention) -> Result<(f64, f64, f64)> {
    if k < 2 {
        return Err(GofError::Domain(format!("need k >= 2 categories, got {k}")));
    }
    let m = df.clusters(q.len());
    if m < 1.0 {
        return Err(GofError::TooFewClusters(q.len()));
    }
    let stat: f64 = q.iter().sum();
    let dist = GammaDist::scaled_chi_squared(m * (k as f64 - 1.0), lambda)?;
    Ok((stat, dist.sf(stat)?, dist.shape()))
}

/// Rejection threshold for a single Q_ℓ at level `alpha`.
pub fn cluster_threshold(lambda: f64, k: usize, alpha: f64) -> Result<f64> {
    Ok(GammaDist::scaled_chi_squared(k as f64 - 1.0, lambda)?.quantile(1.0 - alpha)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    pub label: String,
    pub size: u64,
    pub t: f64,
    pub q: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofResult {
    pub per_cluster: Vec<ClusterResult>,
    pub aggregate_stat: f64,
    pub aggregate_p: f64,
    pub df_shape: f64,
    pub eta_used: f64,
    pub lambda_used: f64,
    pub normalization: DfConvention,
}

/// Per-cluster and aggregate tests at a given (η, λ).
pub fn gof_test(clusters: &[ClusterSample], eta: f64, lambda: f64, df: DfConvention) -> Result<GofResult> {
    let k = common_k(clusters)?;
    let per_cluster = clusters
        .iter()
        .map(|c| {
            let t = c.t_statistic()?;
            let q = q_statistic(t, c.size(), eta);
            Ok(ClusterResult { label: c.label.clone(), size: c.size(), t, q, p_value: cluster_test(q, lambda, k)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = per_cluster.iter().map(|c| c.q).collect();
    let (aggregate_stat, aggregate_p, df_shape) = aggregate_test(&q, lambda, k, df)?;
    Ok(GofResult { per_cluster, aggregate_stat, aggregate_p, df_shape, eta_used: eta, lambda_used: lambda, normalization: df })
}

/// (T_ℓ, N_ℓ) vectors for the MLE.
pub fn cluster_statistics(clusters: &[ClusterSample]) -> Result<(Vec<f64>, Vec<u64>)> {
    common_k(clusters)?;
    let t = clusters.iter().map(ClusterSample::t_statistic).collect::<Result<Vec<_>>>()?;
    Ok((t, clusters.iter().map(ClusterSample::size).collect()))
}

/// Estimates (η, λ) from clusters whose reference probabilities are set.
pub fn estimate(clusters: &[ClusterSample], df: DfConvention) -> Result<MleResult> {
    let k = common_k(clusters)?;
    let (t, n) = cluster_statistics(clusters)?;
    mle_estimate(&t, &n, k, df)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicalResult {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

/// ΣT_ℓ against χ²(m(k−1)).
pub fn classical_chi2(clusters: &[ClusterSample], df: DfConvention) -> Result<ClassicalResult> {
    let k = common_k(clusters)?;
    let (t, _) = cluster_statistics(clusters)?;
    let dof = df.clusters(clusters.len()) * (k as f64 - 1.0);
    if dof <= 0.0 {
        return Err(GofError::TooFewClusters(clusters.len()));
    }
    let statistic: f64 = t.iter().sum();
    Ok(ClassicalResult { statistic, dof, p_value: GammaDist::chi_squared(dof)?.sf(statistic)? })
}

fn common_k(clusters: &[ClusterSample]) -> Result<usize> {
    let first = clusters.first().ok_or(GofError::TooFewClusters(0))?;
    let k = first.k();
    for c in clusters {
        if c.k() != k {
            return Err(GofError::Dimension { cluster: c.label.clone(), expected: k, got: c.k() });
        }
        if c.size() == 0 {
            return Err(GofError::EmptyCluster(c.label.clone()));
        }
    }
    Ok(k)
}

/// How the reference probabilities p*(ℓ) are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PStarMode {
    /// 1/k for every category.
    Uniform,
    /// Frequencies of an earlier, separate sample.
    Reference(Vec<u64>),
    /// Frequencies of the named cluster, which is then dropped from testing.
    Benchmark(String),
    /// Frequencies of all clusters combined.
    Pooled,
}

impl FromStr for PStarMode {
    type Err = GofError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(PStarMode::Uniform),
            "pooled" => Ok(PStarMode::Pooled),
            _ => {
                if let Some(label) = s.strip_prefix("benchmark:") {
                    Ok(PStarMode::Benchmark(label.to_string()))
                } else if let Some(list) = s.strip_prefix("reference:") {
                    list.split(',')
                        .map(|x| x.trim().parse::<u64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map(PStarMode::Reference)
                        .map_err(|e| GofError::Domain(format!("bad reference counts {list:?}: {e}")))
                } else {
                    Err(GofError::Domain(format!(
                        "unknown p* mode {s:?} (expected uniform, pooled, benchmark:<label> or reference:<c1,c2,..>)"
                    )))
                }
            }
        }
    }
}

fn frequencies(counts: &[u64]) -> Result<Vec<f64>> {
    let n = counts.iter().sum::<u64>() as f64;
    if n == 0.0 {
        return Err(GofError::EmptyCluster(String::new()));
    }
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    if let Some(index) = p.iter().position(|&x| x == 0.0) {
        return Err(GofError::ZeroProbability { cluster: None, index });
    }
    Ok(p)
}

/// Attaches p* to each cluster. Benchmark mode removes the benchmark cluster.
pub fn build_p_star(clusters: &[ClusterSample], mode: &PStarMode) -> Result<Vec<ClusterSample>> {
    let k = common_k(clusters)?;
    let (p, skip) = match mode {
        PStarMode::Uniform => (vec![1.0 / k as f64; k], None),
        PStarMode::Reference(counts) => {
            if counts.len() != k {
                return Err(GofError::Dimension { cluster: "reference".into(), expected: k, got: counts.len() });
            }
            (frequencies(counts)?, None)
        }
        PStarMode::Benchmark(label) => {
            let idx = clusters
                .iter()
                .position(|c| &c.label == label)
                .ok_or_else(|| GofError::UnknownBenchmark(label.clone()))?;
            let p = frequencies(&clusters[idx].counts).map_err(|e| match e {
                GofError::ZeroProbability { index, .. } => GofError::ZeroProbability { cluster: Some(label.clone()), index },
                other => other,
            })?;
            (p, Some(idx))
        }
        PStarMode::Pooled => {
            let mut total = vec![0u64; k];
            for c in clusters {
                for (t, x) in total.iter_mut().zip(&c.counts) {
                    *t += x;
                }
            }
            (frequencies(&total)?, None)
        }
    };
    Ok(clusters
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, c)| c.clone().with_p_star(p.clone()))
        .collect())
}

/// Degrees-of-freedom convention matching a p* mode: pooled estimates cost one cluster.
pub fn default_convention(mode: &PStarMode) -> DfConvention {
    match mode {
        PStarMode::Pooled => DfConvention::LMinus1,
        _ => DfConvention::L,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PortmanteauKind {
    /// n(n+2) Σ ρ̂_h²/(n−h)
    LjungBox,
    /// n Σ ρ̂_h²
    BoxPierce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortmanteauRow {
    pub lag: usize,
    pub statistic: f64,
    pub p_value: f64,
}

/// Sample autocorrelations ρ̂_1..ρ̂_H (mean-centred, common denominator).
pub fn autocorrelations(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag == 0 || n <= max_lag {
        return Err(GofError::InvalidLag { max_lag, len: n });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let denom: f64 = dev.iter().map(|d| d * d).sum();
    if !(denom > 0.0) {
        return Err(GofError::ZeroVariance);
    }
    Ok((1..=max_lag)
        .map(|h| dev[h..].iter().zip(&dev).map(|(a, b)| a * b).sum::<f64>() / denom)
        .collect())
}

/// Cumulative portmanteau statistics for lags 1..=H with χ²(h) p-values.
pub fn portmanteau(series: &[f64], max_lag: usize, kind: PortmanteauKind) -> Result<Vec<PortmanteauRow>> {
    let rho = autocorrelations(series, max_lag)?;
    let n = series.len() as f64;
    let mut acc = 0.0;
    rho.iter()
        .enumerate()
        .map(|(i, r)| {
            let lag = i + 1;
            acc += match kind {
                PortmanteauKind::LjungBox => r * r / (n - lag as f64),
                PortmanteauKind::BoxPierce => r * r,
            };
            let statistic = match kind {
                PortmanteauKind::LjungBox => n * (n + 2.0) * acc,
                PortmanteauKind::BoxPierce => n * acc,
            };
            Ok(PortmanteauRow { lag, statistic, p_value: GammaDist::chi_squared(lag as f64)?.sf(statistic)? })
        })
        .collect()
}

pub fn ljung_box(series: &[f64], max_lag: usize) -> Result<Vec<PortmanteauRow>> {
    portmanteau(series, max_lag, PortmanteauKind::LjungBox)
}

pub fn box_pierce(series: &[f64], max_lag: usize) -> Result<Vec<PortmanteauRow>> {
    portmanteau(series, max_lag, PortmanteauKind::BoxPierce)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_and_q_by_hand() {
        assert_eq!(t_statistic(&[50, 50], &[0.5, 0.5]).unwrap(), 0.0);
        assert!((t_statistic(&[60, 40], &[0.5, 0.5]).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(q_statistic(7.5, 1000, 0.0), 7.5);
        assert!((q_statistic(8.0, 100, 0.5) - 0.8).abs() < 1e-15);
        assert!(matches!(
            t_statistic(&[1, 1], &[1.0, 0.0]),
            Err(GofError::ZeroProbability { index: 1, .. })
        ));
    }

    #[test]
    fn g_by_hand() {
        let n = [100, 10_000];
        let g = g_function(0.0, &[1.0, 1.0], &n, DfConvention::L).unwrap();
        assert!(g.abs() < 1e-12);
        let g = g_function(0.0, &[5.0, 1.0], &n, DfConvention::L).unwrap();
        let expect = (5.0 * 100f64.ln() + 10_000f64.ln()) / 6.0 - (100f64.ln() + 10_000f64.ln()) / 2.0;
        assert!((g - expect).abs() < 1e-12);
        assert!((g + 1.535).abs() < 1e-3);
    }

    #[test]
    fn g_survives_huge_weights() {
        let t = [1e300, 1e-300, 1.0];
        let n = [u64::MAX / 2, 2, 1000];
        for eta in [0.0, 0.5, 1.0] {
            assert!(g_function(eta, &t, &n, DfConvention::L).unwrap().is_finite());
        }
    }

    #[test]
    fn mle_case_one_by_hand() {
        let r = mle_estimate(&[5.0, 1.0], &[100, 10_000], 2, DfConvention::L).unwrap();
        assert_eq!(r.case, MleCase::CovNonPositive);
        assert_eq!(r.eta_hat, 0.0);
        assert!((r.lambda_hat - 3.0).abs() < 1e-12);
        assert!(r.cov_ln_n_t < 0.0);
        assert!(!r.misfit);
    }

    #[test]
    fn mle_boundary_and_degenerate() {
        // T grows faster than N: bad fit
        let r = mle_estimate(&[1.0, 1e4], &[10, 1000], 2, DfConvention::L).unwrap();
        assert_eq!(r.case, MleCase::BoundaryBadFit);
        assert_eq!(r.eta_hat, 1.0);
        assert!(r.misfit);
        assert!(r.cov_ln_n_t_over_n >= 0.0);

        match mle_estimate(&[2.0, 4.0], &[1000, 1000], 3, DfConvention::L) {
            Err(GofError::DegenerateClusters { size, lambda_n_eta }) => {
                assert_eq!(size, 1000);
                assert!((lambda_n_eta - 1.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(mle_estimate(&[1.0], &[10], 2, DfConvention::L), Err(GofError::TooFewClusters(1))));
        assert!(matches!(mle_estimate(&[0.0, 0.0], &[10, 20], 2, DfConvention::L), Err(GofError::ZeroStatistics)));
    }

    #[test]
    fn mle_interior_root() {
        let n = [100u64, 1000, 10_000, 100_000];
        let t: Vec<f64> = n.iter().map(|&x| 2.0 * (x as f64).powf(0.4)).collect();
        let r = mle_estimate(&t, &n, 2, DfConvention::L).unwrap();
        assert_eq!(r.case, MleCase::Interior);
        assert!((r.eta_hat - 0.4).abs() < 1e-10);
        assert!((r.lambda_hat - 2.0).abs() < 1e-9);
        assert!(g_function(r.eta_hat, &t, &n, DfConvention::L).unwrap().abs() < 1e-10);
    }

    #[test]
    fn tests_and_thresholds() {
        assert_eq!(cluster_test(0.0, 2.0, 2).unwrap(), 1.0);
        // λ=1, k=2 is the classical χ²(1) tail
        let p = cluster_test(3.841458820694124, 1.0, 2).unwrap();
        assert!((p - 0.05).abs() < 1e-10);
        let thr = cluster_threshold(2.0, 2, 0.05).unwrap();
        assert!((thr - 2.0 * 3.841458820694124).abs() < 1e-8);
        let (stat, p, shape) = aggregate_test(&[1.0, 2.0, 3.0], 1.0, 3, DfConvention::LMinus1).unwrap();
        assert_eq!(stat, 6.0);
        assert_eq!(shape, 2.0);
        // χ²(4) sf at 6 = e^{-3}(1 + 3)
        assert!((p - 4.0 * (-3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn classical_by_hand() {
        let clusters = vec![ClusterSample::new("a", vec![60, 40]), ClusterSample::new("b", vec![40, 60])];
        let pooled = build_p_star(&clusters, &PStarMode::Pooled).unwrap();
        assert_eq!(pooled[0].p_star.as_deref(), Some(&[0.5, 0.5][..]));
        let r = classical_chi2(&pooled, DfConvention::LMinus1).unwrap();
        assert!((r.statistic - 8.0).abs() < 1e-12);
        assert_eq!(r.dof, 1.0);
        let perfect = vec![ClusterSample::new("a", vec![5, 5]), ClusterSample::new("b", vec![7, 7])];
        let r = classical_chi2(&build_p_star(&perfect, &PStarMode::Uniform).unwrap(), DfConvention::L).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn p_star_modes() {
        let clusters = vec![
            ClusterSample::new("d1", vec![3, 1]),
            ClusterSample::new("d2", vec![5, 5]),
            ClusterSample::new("d3", vec![2, 8]),
        ];
        let u = build_p_star(&clusters, &PStarMode::Uniform).unwrap();
        assert!(u.iter().all(|c| c.p_star.as_deref() == Some(&[0.5, 0.5][..])));
        let b = build_p_star(&clusters, &"benchmark:d1".parse().unwrap()).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].p_star.as_deref(), Some(&[0.75, 0.25][..]));
        let r = build_p_star(&clusters, &"reference:1,3".parse().unwrap()).unwrap();
        assert_eq!(r[2].p_star.as_deref(), Some(&[0.25, 0.75][..]));
        assert!(matches!(
            build_p_star(&clusters, &PStarMode::Reference(vec![4, 0])),
            Err(GofError::ZeroProbability { index: 1, .. })
        ));
        assert!(matches!(
            build_p_star(&clusters, &"benchmark:zz".parse().unwrap()),
            Err(GofError::UnknownBenchmark(_))
        ));
        assert_eq!(default_convention(&PStarMode::Pooled), DfConvention::LMinus1);
    }

    #[test]
    fn ljung_box_by_hand() {
        let rho = autocorrelations(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!((rho[0] - 0.25).abs() < 1e-15);
        let lb = ljung_box(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!((lb[0].statistic - 0.5).abs() < 1e-12);
        let bp = box_pierce(&[1.0, 2.0, 3.0, 4.0], 1).unwrap();
        assert!((bp[0].statistic - 0.25).abs() < 1e-12);
        assert!(matches!(ljung_box(&[2.0; 5], 1), Err(GofError::ZeroVariance)));
        assert!(matches!(ljung_box(&[1.0, 2.0], 2), Err(GofError::InvalidLag { .. })));
        assert!(matches!(ljung_box(&[1.0, 2.0], 0), Err(GofError::InvalidLag { .. })));
    }

    #[test]
    fn df_convention_strings() {
        assert_eq!("L".parse::<DfConvention>().unwrap(), DfConvention::L);
        assert_eq!("L-1".parse::<DfConvention>().unwrap(), DfConvention::LMinus1);
        assert_eq!(DfConvention::LMinus1.to_string(), "L-1");
        assert_eq!(serde_json::to_string(&DfConvention::LMinus1).unwrap(), "\"L-1\"");
        assert!("M".parse::<DfConvention>().is_err());
    }
}
