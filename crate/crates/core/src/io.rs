//! Contingency CSV files, the bundled COVID-Twitter counts, report tables and
//! simulation output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gof::{
    self, build_p_star, cell_breakdown, ClassicalResult, ClusterSample, DfConvention, GofError, MleResult, PStarMode,
    PortmanteauKind, PortmanteauRow,
};
use crate::montecarlo::{CltReport, ExperimentConfig, HorizonResult};
use crate::schedule::Schedule;
use crate::urn::{new_state, UrnError, UrnParams, WeightProfile};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("file has no data rows")]
    EmptyFile,
    #[error(transparent)]
    Gof(#[from] GofError),
    #[error(transparent)]
    Urn(#[from] UrnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

const FIXTURE: &str = include_str!("../data/covid_table3.csv");

fn parse_err(line: usize, message: impl Into<String>) -> IoError {
    IoError::ParseError { line, message: message.into() }
}

/// Parses `label,count_1,...,count_k` rows; k comes from the header.
pub fn parse_contingency(text: &str) -> Result<Vec<ClusterSample>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(IoError::EmptyFile)?;
    let k = header.split(',').count().saturating_sub(1);
    if k == 0 {
        return Err(parse_err(1, "header needs a label column and at least one count column"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != k + 1 {
            return Err(parse_err(line_no, format!("expected {} fields, found {}", k + 1, fields.len())));
        }
        let label = fields[0].trim();
        let counts = fields[1..]
            .iter()
            .map(|f| {
                let f = f.trim();
                f.parse::<u64>()
                    .map_err(|_| parse_err(line_no, format!("row {label:?}: {f:?} is not a non-negative integer count")))
            })
            .collect::<Result<Vec<u64>>>()?;
        if counts.iter().all(|&c| c == 0) {
            return Err(parse_err(line_no, format!("row {label:?} has no positive count")));
        }
        rows.push(ClusterSample::new(label, counts));
    }
    if rows.is_empty() {
        return Err(IoError::EmptyFile);
    }
    Ok(rows)
}

pub fn read_contingency(path: impl AsRef<Path>) -> Result<Vec<ClusterSample>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IoError::Io { path: path.display().to_string(), source })?;
    parse_contingency(&text)
}

/// Canonical CSV text: `label,count_1,..` header, LF endings.
pub fn format_contingency(rows: &[ClusterSample]) -> String {
    let k = rows.first().map_or(0, ClusterSample::k);
    let mut out = String::from("label");
    for i in 1..=k {
        let _ = write!(out, ",count_{i}");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.label);
        for c in &r.counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn write_contingency(path: impl AsRef<Path>, rows: &[ClusterSample]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_contingency(rows)).map_err(|source| IoError::Io { path: path.display().to_string(), source })
}

/// Keeps rows offset, offset+stride, offset+2·stride, ...
pub fn thin_clusters<T: Clone>(rows: &[T], stride: usize, offset: usize) -> Vec<T> {
    assert!(stride >= 1, "stride must be >= 1");
    rows.iter().skip(offset).step_by(stride).cloned().collect()
}

/// The 21 COVID-Twitter clusters (positive, negative counts).
pub fn covid_fixture() -> Vec<ClusterSample> {
    parse_contingency(FIXTURE).expect("bundled fixture parses")
}

pub fn covid_fixture_csv() -> &'static str {
    FIXTURE
}

/// `x` with `digits` significant digits in fixed notation.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (digits as i64 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Row-per-cluster mirror of a Obs/Exp/χ²/χ²⁽ᶜ⁾ contingency table.
pub fn contingency_table(clusters: &[ClusterSample], eta: f64) -> Result<String> {
    let k = clusters.first().map_or(0, ClusterSample::k);
    let mut out = String::from("label");
    for prefix in ["obs", "exp", "chi2", "chi2c"] {
        for i in 1..=k {
            let _ = write!(out, ",{prefix}_{i}");
        }
    }
    out.push('\n');
    for c in clusters {
        let cells = cell_breakdown(c, eta)?;
        out.push_str(&c.label);
        for cell in &cells {
            let _ = write!(out, ",{}", cell.observed);
        }
        for cell in &cells {
            let _ = write!(out, ",{:.2}", cell.expected);
        }
        for cell in &cells {
            let _ = write!(out, ",{:.2}", cell.chi2);
        }
        for cell in &cells {
            let _ = write!(out, ",{:.2}", cell.chi2_corrected);
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QPoint {
    pub label: String,
    pub q: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovidReport {
    pub clusters: usize,
    pub total_size: u64,
    pub p_star: Vec<f64>,
    pub classical: ClassicalResult,
    /// Estimate under the pooled-reference convention (L−1).
    pub mle: MleResult,
    /// Estimate under the plain L convention, for comparison.
    pub mle_l: MleResult,
    pub aggregate_stat: f64,
    pub aggregate_shape: f64,
    pub aggregate_p: f64,
    /// 95% quantile of the single-cluster law.
    pub threshold: f64,
    pub q_series: Vec<QPoint>,
    /// (η, profile log-likelihood) on a uniform grid over [0, 1].
    pub profile: Vec<(f64, f64)>,
    pub ljung_box: Vec<PortmanteauRow>,
    pub box_pierce: Vec<PortmanteauRow>,
    pub table: String,
}

pub const PROFILE_POINTS: usize = 200;
pub const PORTMANTEAU_LAGS: usize = 10;

/// Runs the pooled-reference pipeline on a cluster list (the COVID fixture in practice).
pub fn clustered_report(raw: &[ClusterSample]) -> Result<CovidReport> {
    let clusters = build_p_star(raw, &PStarMode::Pooled)?;
    let k = clusters[0].k();
    let df = DfConvention::LMinus1;
    let classical = gof::classical_chi2(&clusters, df)?;
    let (t, n) = gof::cluster_statistics(&clusters)?;
    let mle = gof::mle_estimate(&t, &n, k, df)?;
    let mle_l = gof::mle_estimate(&t, &n, k, DfConvention::L)?;
    let result = gof::gof_test(&clusters, mle.eta_hat, mle.lambda_hat, df)?;
    let threshold = gof::cluster_threshold(mle.lambda_hat, k, 0.05)?;
    let profile = (0..PROFILE_POINTS)
        .map(|i| {
            let eta = i as f64 / (PROFILE_POINTS - 1) as f64;
            Ok((eta, gof::profile_loglik(eta, &t, &n, k, df)?))
        })
        .collect::<std::result::Result<Vec<_>, GofError>>()?;
    let q: Vec<f64> = result.per_cluster.iter().map(|c| c.q).collect();
    let lags = PORTMANTEAU_LAGS.min(q.len().saturating_sub(1));
    Ok(CovidReport {
        clusters: clusters.len(),
        total_size: n.iter().sum(),
        p_star: clusters[0].p_star.clone().unwrap_or_default(),
        classical,
        aggregate_stat: result.aggregate_stat,
        aggregate_shape: result.df_shape,
        aggregate_p: result.aggregate_p,
        threshold,
        q_series: result
            .per_cluster
            .iter()
            .map(|c| QPoint { label: c.label.clone(), q: c.q, p_value: c.p_value })
            .collect(),
        profile,
        ljung_box: gof::portmanteau(&q, lags, PortmanteauKind::LjungBox)?,
        box_pierce: gof::portmanteau(&q, lags, PortmanteauKind::BoxPierce)?,
        table: contingency_table(&clusters, mle.eta_hat)?,
        mle,
        mle_l,
    })
}

pub fn replicate_covid() -> Result<CovidReport> {
    clustered_report(&covid_fixture())
}

fn mle_line(out: &mut String, tag: &str, m: &MleResult) {
    let _ = writeln!(
        out,
        "[{tag}] case={:?} eta_hat={} lambda_hat={} g0={} g1={}",
        m.case,
        fmt_sig(m.eta_hat, 7),
        fmt_sig(m.lambda_hat, 7),
        fmt_sig(m.g0, 7),
        fmt_sig(m.g1, 7)
    );
}

/// Human-readable summary with estimates at 7 significant digits.
pub fn render_covid_report(r: &CovidReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "clusters={} total_size={} p_star={}", r.clusters, r.total_size, fmt_sig(r.p_star[0], 7));
    let _ = writeln!(
        out,
        "classical_chi2={:.3} dof={} p_value={:.3e}",
        r.classical.statistic, r.classical.dof, r.classical.p_value
    );
    let _ = writeln!(out, "eta_hat={}", fmt_sig(r.mle.eta_hat, 7));
    let _ = writeln!(out, "lambda_hat={}", fmt_sig(r.mle.lambda_hat, 7));
    mle_line(&mut out, "L-1", &r.mle);
    mle_line(&mut out, "L", &r.mle_l);
    let _ = writeln!(
        out,
        "aggregate_stat={} shape={} aggregate_p={}",
        fmt_sig(r.aggregate_stat, 7),
        r.aggregate_shape,
        fmt_sig(r.aggregate_p, 7)
    );
    let _ = writeln!(out, "threshold_95={:.2}", r.threshold);
    out.push_str("\nlabel,q,p_value,above_threshold\n");
    for p in &r.q_series {
        let _ = writeln!(out, "{},{:.4},{:.4},{}", p.label, p.q, p.p_value, p.q > r.threshold);
    }
    out.push_str("\nlag,ljung_box,lb_p_value,box_pierce,bp_p_value\n");
    for (lb, bp) in r.ljung_box.iter().zip(&r.box_pierce) {
        let _ = writeln!(out, "{},{:.3},{:.3},{:.3},{:.3}", lb.lag, lb.statistic, lb.p_value, bp.statistic, bp.p_value);
    }
    out.push_str("\neta,profile_loglik\n");
    for (eta, ll) in &r.profile {
        let _ = writeln!(out, "{eta:.6},{ll:.6}");
    }
    out.push('\n');
    out.push_str(&r.table);
    out
}

/// Simulates one path and writes `n,xi_index,psi_1..psi_k,r_star` rows for n = 0..=steps.
pub fn trajectory_csv<R: Rng + ?Sized>(
    params: &UrnParams,
    schedule: &Schedule,
    steps: u64,
    rng: &mut R,
) -> Result<String> {
    let k = params.k();
    let mut out = String::from("n,xi_index");
    for i in 1..=k {
        let _ = write!(out, ",psi_{i}");
    }
    out.push_str(",r_star\n");
    let mut state = new_state(params);
    let row = |out: &mut String, n: u64, color: Option<usize>, psi: &[f64], r: f64| {
        let _ = write!(out, "{n},{}", color.map(|c| (c + 1).to_string()).unwrap_or_default());
        for p in psi {
            let _ = write!(out, ",{p}");
        }
        let _ = writeln!(out, ",{r}");
    };
    row(&mut out, 0, None, state.psi(), state.r_star());
    for _ in 0..steps {
        let d = state.advance(params, schedule, rng)?;
        row(&mut out, state.n(), Some(d.color), state.psi(), state.r_star());
    }
    Ok(out)
}

/// `replica,component,xi_bar,psi_bar,theta_bar,standardized,remainder`; the last
/// two are empty without a CLT report. Components are 1-based.
pub fn horizon_csv(horizon: &HorizonResult, report: Option<&CltReport>) -> String {
    let mut out = String::from("replica,component,xi_bar,psi_bar,theta_bar,standardized,remainder\n");
    for (r, s) in horizon.replicas.iter().enumerate() {
        for i in 0..s.xi_bar.len() {
            let (std, rem) = match report {
                Some(rep) => (rep.standardized[r][i].to_string(), rep.remainder[r][i].to_string()),
                None => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                s.replica,
                i + 1,
                s.xi_bar[i],
                s.psi_bar[i],
                s.theta_bar[i],
                std,
                rem
            );
        }
    }
    out
}

/// `h,weight,log_weight` for h = 1..=n.
pub fn weights_csv(profile: &WeightProfile) -> String {
    let mut out = String::from("h,weight,log_weight\n");
    for (i, (w, lw)) in profile.weights.iter().zip(&profile.log_weights).enumerate() {
        let _ = writeln!(out, "{},{w},{lw}", i + 1);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaRow {
    pub horizon: u64,
    pub e: f64,
    pub lambda_theory: f64,
    pub lambda_hat: f64,
    pub mean_remainder_norm: f64,
}

/// Everything needed to rerun a simulation and compare its λ̂ values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub threads: usize,
    pub lambda_table: Vec<LambdaRow>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn from_reports(config: &ExperimentConfig, threads: usize, reports: &[CltReport], files: Vec<String>) -> Self {
        Self {
            config: config.clone(),
            seed: config.base_seed,
            threads,
            lambda_table: reports
                .iter()
                .map(|r| LambdaRow {
                    horizon: r.horizon,
                    e: r.e,
                    lambda_theory: r.lambda_theory,
                    lambda_hat: r.lambda_hat,
                    mean_remainder_norm: r.mean_remainder_norm(),
                })
                .collect(),
            files,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
