//! Urn state, the one-step reinforcement update, and the quantities derived
//! from it (predictive mean, drift and noise gains, weight profile).

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schedule::{Schedule, ScheduleError};

/// Steps between consistency re-syncs of r*_n against b₀ and B_n.
pub const RESYNC_INTERVAL: u64 = 10_000;
/// Largest relative disagreement tolerated at a re-sync.
pub const MAX_RELATIVE_DRIFT: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UrnError {
    #[error("invalid urn parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("color index {index} out of range for k={k}")]
    ColorOutOfRange { index: usize, k: usize },
    #[error("numerical failure at step {n}: {detail}")]
    Numerical { n: u64, detail: String },
}

pub type Result<T> = std::result::Result<T, UrnError>;

/// Immutable urn configuration: b₀ (fixed part) and B₀ (rescaled part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct UrnParams {
    b0: Vec<f64>,
    big_b0: Vec<f64>,
    p0: Vec<f64>,
    b0_norm: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    b0: Vec<f64>,
    #[serde(rename = "B0")]
    big_b0: Vec<f64>,
}

impl TryFrom<RawParams> for UrnParams {
    type Error = UrnError;

    fn try_from(raw: RawParams) -> Result<Self> {
        UrnParams::new(raw.b0, raw.big_b0)
    }
}

impl From<UrnParams> for RawParams {
    fn from(p: UrnParams) -> Self {
        RawParams { b0: p.b0, big_b0: p.big_b0 }
    }
}

impl UrnParams {
    pub fn new(b0: Vec<f64>, big_b0: Vec<f64>) -> Result<Self> {
        if b0.is_empty() {
            return Err(UrnError::InvalidParams("k must be at least 1".into()));
        }
        if b0.len() != big_b0.len() {
            return Err(UrnError::InvalidParams(format!(
                "b0 has {} colors but B0 has {}",
                b0.len(),
                big_b0.len()
            )));
        }
        for (i, (&b, &bb)) in b0.iter().zip(&big_b0).enumerate() {
            if !(b >= 0.0 && b.is_finite()) || !(bb >= 0.0 && bb.is_finite()) {
                return Err(UrnError::InvalidParams(format!(
                    "b0[{i}]={b} and B0[{i}]={bb} must be finite and non-negative"
                )));
            }
            if b + bb <= 0.0 {
                return Err(UrnError::InvalidParams(format!("b0[{i}] + B0[{i}] must be > 0")));
            }
        }
        let b0_norm: f64 = b0.iter().sum();
        if b0_norm <= 0.0 {
            return Err(UrnError::InvalidParams("|b0| must be > 0".into()));
        }
        let p0 = b0.iter().map(|b| b / b0_norm).collect();
        Ok(Self { b0, big_b0, p0, b0_norm })
    }

    /// Parameters with b₀ = p₀·|b₀| and B₀ spread proportionally to p₀ with
    /// total mass `big_b0_norm`.
    pub fn proportional(p0: &[f64], b0_norm: f64, big_b0_norm: f64) -> Result<Self> {
        let total: f64 = p0.iter().sum();
        let b0 = p0.iter().map(|p| p / total * b0_norm).collect();
        let big_b0 = p0.iter().map(|p| p / total * big_b0_norm).collect();
        Self::new(b0, big_b0)
    }

    pub fn k(&self) -> usize {
        self.b0.len()
    }

    pub fn b0(&self) -> &[f64] {
        &self.b0
    }

    pub fn big_b0(&self) -> &[f64] {
        &self.big_b0
    }

    pub fn p0(&self) -> &[f64] {
        &self.p0
    }

    pub fn b0_norm(&self) -> f64 {
        self.b0_norm
    }

    pub fn big_b0_norm(&self) -> f64 {
        self.big_b0.iter().sum()
    }
}

/// Live state of one trajectory after `n` extractions.
#[derive(Debug, Clone, PartialEq)]
pub struct UrnState {
    n: u64,
    big_b: Vec<f64>,
    r_star: f64,
    psi: Vec<f64>,
    counts: Vec<u64>,
}

/// Lightweight outcome of a step, used by streaming callers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub color: usize,
    /// ε_{n−1}, the drift gain applied in this step.
    pub eps: f64,
    /// δ_{n−1}, the noise gain applied in this step.
    pub del: f64,
}

/// Full record of a step: ξ_n, ψ_{n−1}, ΔM_n and the gains used.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: u64,
    pub color: usize,
    pub psi_before: Vec<f64>,
    pub delta_m: Vec<f64>,
    pub eps: f64,
    pub del: f64,
}

impl StepRecord {
    /// One-hot ξ_n.
    pub fn xi(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.psi_before.len()];
        v[self.color] = 1.0;
        v
    }
}

/// Initial state: n = 0, B = B₀, ψ₀ = (b₀ + B₀)/r*₀.
pub fn new_state(params: &UrnParams) -> UrnState {
    let big_b = params.big_b0.clone();
    let r_star = params.b0_norm + big_b.iter().sum::<f64>();
    let psi = params.b0.iter().zip(&big_b).map(|(b, bb)| (b + bb) / r_star).collect();
    UrnState {
        n: 0,
        big_b,
        r_star,
        psi,
        counts: vec![0; params.k()],
    }
}

/// Categorical draw by inversion of one uniform over the cumulative sums of
/// `probs`. A uniform landing exactly on a bin boundary goes to the lower
/// index; zero-probability colors are never returned.
pub fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last_positive = i;
        cum += p;
        if u <= cum {
            return i;
        }
    }
    last_positive
}

impl UrnState {
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn big_b(&self) -> &[f64] {
        &self.big_b
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// θ_n = ψ_n − p₀.
    pub fn theta(&self, params: &UrnParams) -> Vec<f64> {
        self.psi.iter().zip(params.p0()).map(|(s, p)| s - p).collect()
    }

    /// ξ̄_n (undefined before the first draw).
    pub fn empirical_mean(&self) -> Option<Vec<f64>> {
        if self.n == 0 {
            return None;
        }
        let n = self.n as f64;
        Some(self.counts.iter().map(|&c| c as f64 / n).collect())
    }

    /// Draws ξ_{n+1} from ψ_n and applies the update.
    pub fn advance<R: Rng + ?Sized>(&mut self, params: &UrnParams, schedule: &Schedule, rng: &mut R) -> Result<Draw> {
        let u: f64 = rng.gen();
        let color = sample_categorical(&self.psi, u);
        self.advance_with(params, schedule, color)
    }

    /// Applies the update with a prescribed color ξ_{n+1}.
    pub fn advance_with(&mut self, params: &UrnParams, schedule: &Schedule, color: usize) -> Result<Draw> {
        let k = params.k();
        if color >= k {
            return Err(UrnError::ColorOutOfRange { index: color, k });
        }
        let beta = schedule.beta(self.n)?;
        let alpha = schedule.alpha(self.n + 1)?;

        for b in self.big_b.iter_mut() {
            *b *= beta;
        }
        self.big_b[color] += alpha;
        let b0_norm = params.b0_norm;
        let r_next = beta * self.r_star + (1.0 - beta) * b0_norm + alpha;
        if !(r_next > 0.0 && r_next.is_finite()) {
            return Err(UrnError::Numerical {
                n: self.n + 1,
                detail: format!("r*_{} = {r_next}", self.n + 1),
            });
        }
        let eps = b0_norm * (1.0 - beta) / r_next;
        let del = alpha / r_next;

        self.n += 1;
        self.r_star = r_next;
        self.counts[color] += 1;
        if self.n % RESYNC_INTERVAL == 0 {
            self.resync(params)?;
        }
        for (i, psi) in self.psi.iter_mut().enumerate() {
            *psi = (params.b0[i] + self.big_b[i]) / self.r_star;
        }
        Ok(Draw { color, eps, del })
    }

    fn resync(&mut self, params: &UrnParams) -> Result<()> {
        let direct = params.b0_norm + self.big_b.iter().sum::<f64>();
        let drift = (direct - self.r_star).abs() / direct;
        if drift > MAX_RELATIVE_DRIFT {
            return Err(UrnError::Numerical {
                n: self.n,
                detail: format!("r* drifted by {drift:e} relative to |b0| + |B|"),
            });
        }
        self.r_star = direct;
        Ok(())
    }

    /// One step with a full [`StepRecord`].
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        params: &UrnParams,
        schedule: &Schedule,
        rng: &mut R,
    ) -> Result<StepRecord> {
        let u: f64 = rng.gen();
        let color = sample_categorical(&self.psi, u);
        self.step_with(params, schedule, color)
    }

    /// Like [`UrnState::step`] with a forced color.
    pub fn step_with(&mut self, params: &UrnParams, schedule: &Schedule, color: usize) -> Result<StepRecord> {
        let psi_before = self.psi.clone();
        let draw = self.advance_with(params, schedule, color)?;
        let delta_m = psi_before
            .iter()
            .enumerate()
            .map(|(i, p)| if i == draw.color { 1.0 - p } else { -p })
            .collect();
        Ok(StepRecord {
            n: self.n,
            color: draw.color,
            psi_before,
            delta_m,
            eps: draw.eps,
            del: draw.del,
        })
    }
}

/// ψ_n from the explicit product/sum formula over the history of colors.
pub fn closed_form_psi(params: &UrnParams, schedule: &Schedule, history: &[usize]) -> Result<Vec<f64>> {
    let k = params.k();
    let n = history.len();
    if let Some(&bad) = history.iter().find(|&&c| c >= k) {
        return Err(UrnError::ColorOutOfRange { index: bad, k });
    }
    let mut num = vec![0.0; k];
    let mut den = 0.0;
    // Walk h = n..1 so the running product Π_{j=h}^{n−1} β_j is built once.
    let mut prod = 1.0;
    for h in (1..=n).rev() {
        if h < n {
            prod *= schedule.beta(h as u64)?;
        }
        let f = schedule.alpha(h as u64)? * prod;
        num[history[h - 1]] += f;
        den += f;
    }
    if n > 0 {
        prod *= schedule.beta(0)?;
    }
    let b0 = params.b0();
    let big_b0 = params.big_b0();
    for i in 0..k {
        num[i] += b0[i] + big_b0[i] * prod;
    }
    den += params.b0_norm() + params.big_b0_norm() * prod;
    Ok(num.into_iter().map(|x| x / den).collect())
}

/// f(1,n)..f(n,n) with f(h,n) = α_h Π_{j=h}^{n−1} β_j, and the start of the
/// final non-decreasing run.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightProfile {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    /// Smallest h (1-based) from which the profile is non-decreasing up to n;
    /// `None` when only the last entry qualifies.
    pub h_star: Option<u64>,
}

pub fn weight_profile(schedule: &Schedule, n: u64) -> Result<WeightProfile> {
    if n == 0 {
        return Err(UrnError::InvalidParams("weight profile needs n >= 1".into()));
    }
    let len = n as usize;
    let mut log_weights = vec![0.0; len];
    let mut log_prod = 0.0_f64;
    for h in (1..=n).rev() {
        if h < n {
            let beta = schedule.beta(h)?;
            log_prod += if beta == 0.0 { f64::NEG_INFINITY } else { beta.ln() };
        }
        log_weights[(h - 1) as usize] = schedule.alpha(h)?.ln() + log_prod;
    }
    let weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
    let mut start = len - 1;
    while start > 0 && log_weights[start - 1] <= log_weights[start] {
        start -= 1;
    }
    let h_star = if start + 1 < len { Some(start as u64 + 1) } else { None };
    Ok(WeightProfile { weights, log_weights, h_star })
}

/// ε_n = |b₀|(1−β_n)/r*_{n+1} and δ_n = α_{n+1}/r*_{n+1}.
pub fn epsilon_delta(schedule: &Schedule, params: &UrnParams, r_star_next: f64, n: u64) -> Result<(f64, f64)> {
    if !(r_star_next > 0.0) {
        return Err(UrnError::InvalidParams(format!("r*_(n+1) must be > 0, got {r_star_next}")));
    }
    let beta = schedule.beta(n)?;
    let alpha = schedule.alpha(n + 1)?;
    Ok((params.b0_norm() * (1.0 - beta) / r_star_next, alpha / r_star_next))
}
