//! Special functions used by the inference and Monte Carlo code: log-gamma,
//! regularized incomplete gamma, the Gamma distribution (rate
//! parameterization), the standard normal CDF and a one-sample
//! Kolmogorov–Smirnov test.

use thiserror::Error;

/// Iteration cap shared by the incomplete-gamma series and continued fraction.
const MAX_ITER: usize = 300;
/// Relative convergence tolerance for both expansions.
const EPS: f64 = 1e-15;
/// Smallest representable scale used by the modified Lentz method.
const FPMIN: f64 = f64::MIN_POSITIVE / EPS;
/// Number of terms of the Kolmogorov series.
const KS_TERMS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecFunError {
    #[error("argument out of domain: {0}")]
    Domain(String),
    #[error("{what} did not converge within {iters} iterations (a={a}, x={x})")]
    NoConvergence {
        what: &'static str,
        iters: usize,
        a: f64,
        x: f64,
    },
    #[error("empty sample")]
    EmptySample,
}

pub type Result<T> = std::result::Result<T, SpecFunError>;

const LANCZOS_G: f64 = 671.0 / 128.0;
const LANCZOS_COF: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// Natural log of the gamma function for `a > 0` (14-term Lanczos series).
pub fn ln_gamma(a: f64) -> Result<f64> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(SpecFunError::Domain(format!("ln_gamma requires a > 0, got {a}")));
    }
    Ok(ln_gamma_unchecked(a))
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    let tmp = x + LANCZOS_G;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut y = x;
    let mut ser = 0.999_999_999_999_997_092;
    for c in LANCZOS_COF {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

/// Regularized incomplete gamma pair `(P(a, x), Q(a, x))`.
///
/// The smaller of the two is always computed directly, so neither side loses
/// precision to cancellation.
pub fn incomplete_gamma(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(SpecFunError::Domain(format!("shape must be > 0, got {a}")));
    }
    if x.is_nan() {
        return Err(SpecFunError::Domain("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok((0.0, 1.0));
    }
    if x == f64::INFINITY {
        return Ok((1.0, 0.0));
    }
    let log_prefactor = -x + a * x.ln() - ln_gamma_unchecked(a);
    if x < a + 1.0 {
        let p = lower_series(a, x)? * log_prefactor.exp();
        let p = p.min(1.0);
        Ok((p, 1.0 - p))
    } else {
        let q = upper_continued_fraction(a, x)? * log_prefactor.exp();
        let q = q.min(1.0);
        Ok((1.0 - q, q))
    }
}

fn lower_series(a: f64, x: f64) -> Result<f64> {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            return Ok(sum);
        }
    }
    Err(SpecFunError::NoConvergence {
        what: "incomplete gamma series",
        iters: MAX_ITER,
        a,
        x,
    })
}

fn upper_continued_fraction(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / FPMIN;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = b + an / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() <= EPS {
            return Ok(h);
        }
    }
    Err(SpecFunError::NoConvergence {
        what: "incomplete gamma continued fraction",
        iters: MAX_ITER,
        a,
        x,
    })
}

/// Gamma distribution with density proportional to `x^(shape-1) exp(-rate x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaDist {
    shape: f64,
    rate: f64,
}

impl GammaDist {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return Err(SpecFunError::Domain(format!(
                "Gamma requires shape > 0 and rate > 0, got shape={shape}, rate={rate}"
            )));
        }
        Ok(Self { shape, rate })
    }

    /// Chi-squared with `df` degrees of freedom, i.e. Γ(df/2, 1/2).
    pub fn chi_squared(df: f64) -> Result<Self> {
        Self::new(df / 2.0, 0.5)
    }

    /// The scaled chi-squared law λ·χ²(df) = Γ(df/2, 1/(2λ)).
    pub fn scaled_chi_squared(df: f64, lambda: f64) -> Result<Self> {
        Self::new(df / 2.0, 1.0 / (2.0 * lambda))
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        if x == 0.0 {
            return match self.shape.partial_cmp(&1.0) {
                Some(std::cmp::Ordering::Less) => f64::INFINITY,
                Some(std::cmp::Ordering::Equal) => self.rate,
                _ => 0.0,
            };
        }
        (self.shape * self.rate.ln() + (self.shape - 1.0) * x.ln()
            - self.rate * x
            - ln_gamma_unchecked(self.shape))
        .exp()
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        Ok(incomplete_gamma(self.shape, self.rate * x)?.0)
    }

    /// Survival function `1 - cdf`, computed directly in the upper tail.
    pub fn sf(&self, x: f64) -> Result<f64> {
        Ok(incomplete_gamma(self.shape, self.rate * x)?.1)
    }

    /// Inverse CDF by bracketing and safeguarded Newton steps.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(SpecFunError::Domain(format!("quantile requires 0 < p < 1, got {p}")));
        }
        // Work in the unit-rate variable and rescale at the end.
        let unit = GammaDist { shape: self.shape, rate: 1.0 };
        let a = self.shape;

        // Wilson–Hilferty starting point for χ²(2a), halved.
        let z = standard_normal_quantile_guess(p);
        let t = 1.0 / (9.0 * a);
        let mut guess = a * (1.0 - t + z * t.sqrt()).powi(3);
        if !(guess > 0.0) || !guess.is_finite() {
            guess = a.max(1e-3);
        }

        let mut lo = 0.0_f64;
        let mut hi = guess;
        while unit.cdf(hi)? < p {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(SpecFunError::Domain(format!("quantile bracket overflow for p={p}")));
            }
        }
        let mut x = guess.clamp(lo, hi);
        for _ in 0..200 {
            let f = unit.cdf(x)? - p;
            if f.abs() <= 1e-14 {
                break;
            }
            if f < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let dens = unit.pdf(x);
            let mut next = if dens > 0.0 && dens.is_finite() { x - f / dens } else { f64::NAN };
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (hi - lo) <= 4.0 * f64::EPSILON * hi {
                x = next;
                break;
            }
            x = next;
        }
        Ok(x / self.rate)
    }
}

// Acklam-style rational approximation; only used to seed the Newton iteration.
fn standard_normal_quantile_guess(p: f64) -> f64 {
    let q = if p < 0.5 { p } else { 1.0 - p };
    let t = (-2.0 * q.ln()).sqrt();
    let z = t - (2.515_517 + 0.802_853 * t + 0.010_328 * t * t)
        / (1.0 + 1.432_788 * t + 0.189_269 * t * t + 0.001_308 * t * t * t);
    if p < 0.5 {
        -z
    } else {
        z
    }
}

/// Standard normal CDF, via Φ(z) = ½(1 ± P(½, z²/2)).
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    let (_, q) = incomplete_gamma(0.5, 0.5 * z * z).unwrap_or((1.0, 0.0));
    if z < 0.0 {
        0.5 * q
    } else {
        1.0 - 0.5 * q
    }
}

/// Complementary Kolmogorov distribution `P(K > lambda)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    // Below 0.2 the truncated alternating series is inaccurate and the true
    // value differs from 1 by less than 1e-20.
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=KS_TERMS {
        let j = j as f64;
        sum += sign * (-2.0 * j * j * lambda * lambda).exp();
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test of `sample` against `cdf`.
pub fn ks_test<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Result<KsResult> {
    if sample.is_empty() {
        return Err(SpecFunError::EmptySample);
    }
    if sample.iter().any(|x| x.is_nan()) {
        return Err(SpecFunError::Domain("sample contains NaN".into()));
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let statistic = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i as f64 + 1.0) / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0_f64, f64::max);
    Ok(KsResult {
        statistic,
        p_value: kolmogorov_sf(n.sqrt() * statistic),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn ln_gamma_known_values() {
        assert!(close(ln_gamma(1.0).unwrap(), 0.0, 1e-14));
        assert!(close(ln_gamma(2.0).unwrap(), 0.0, 1e-14));
        let half = ln_gamma(0.5).unwrap();
        assert!(close(half, std::f64::consts::PI.sqrt().ln(), 1e-14), "{half}");
        // ln(9!) = ln(362880)
        let ten = ln_gamma(10.0).unwrap();
        assert!(((ten - 362_880f64.ln()) / ten).abs() < 1e-13, "{ten}");
        assert!(close(ten, 12.801_827_480_1, 1e-9));
    }

    #[test]
    fn ln_gamma_recurrence_and_stirling() {
        for i in 1..200 {
            let x = 0.05 * i as f64 + 0.01;
            let lhs = ln_gamma(x + 1.0).unwrap();
            let rhs = ln_gamma(x).unwrap() + x.ln();
            assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0), "x={x}");
        }
        // Stirling series with four correction terms is exact to double
        // precision for large arguments.
        for &x in &[50.0_f64, 123.4, 1000.0] {
            let stirling = (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln()
                + 1.0 / (12.0 * x)
                - 1.0 / (360.0 * x.powi(3))
                + 1.0 / (1260.0 * x.powi(5))
                - 1.0 / (1680.0 * x.powi(7));
            let got = ln_gamma(x).unwrap();
            assert!(((got - stirling) / stirling).abs() < 1e-13, "x={x}");
        }
    }

    #[test]
    fn ln_gamma_rejects_non_positive() {
        assert!(matches!(ln_gamma(0.0), Err(SpecFunError::Domain(_))));
        assert!(matches!(ln_gamma(-1.5), Err(SpecFunError::Domain(_))));
    }

    #[test]
    fn gamma_cdf_support_and_exponential() {
        let d = GammaDist::new(1.0, 0.5).unwrap();
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert_eq!(d.cdf(-3.0).unwrap(), 0.0);
        assert!(close(d.cdf(2.0).unwrap(), 1.0 - (-1.0f64).exp(), 1e-14));
        assert!(close(d.sf(2.0).unwrap(), (-1.0f64).exp(), 1e-14));
    }

    #[test]
    fn gamma_cdf_integer_shape_closed_form() {
        // P(n, x) = 1 - e^{-x} Σ_{j<n} x^j / j!
        for n in 1..8 {
            for &x in &[0.1, 1.0, 3.5, 7.0, 15.0] {
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..n {
                    term *= x / j as f64;
                    sum += term;
                }
                let expected_q = (-x).exp() * sum;
                let (_, q) = incomplete_gamma(n as f64, x).unwrap();
                assert!(close(q, expected_q, 1e-13), "n={n} x={x}");
            }
        }
    }

    #[test]
    fn gamma_quantile_examples() {
        let d = GammaDist::new(1.0, 1.0).unwrap();
        let x = d.quantile(1.0 - (-1.0f64).exp()).unwrap();
        assert!(close(x, 1.0, 1e-9));

        // Median of χ²(1), bisection oracle on the cdf.
        let chi1 = GammaDist::chi_squared(1.0).unwrap();
        let (mut lo, mut hi) = (0.0, 5.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi1.cdf(mid).unwrap() < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let median = chi1.quantile(0.5).unwrap();
        assert!(close(median, 0.5 * (lo + hi), 1e-10));
        assert!(close(median, 0.4549, 1e-3));
    }

    #[test]
    fn quantile_rejects_bad_probability() {
        let d = GammaDist::new(2.0, 1.0).unwrap();
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
        assert!(GammaDist::new(0.0, 1.0).is_err());
        assert!(GammaDist::new(1.0, -1.0).is_err());
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!(close(normal_cdf(1.959964), 0.975, 1e-6));
        assert!(close(normal_cdf(-1.959964), 0.025, 1e-6));
        // Φ(1) from erf(1/√2) = 0.682689492137086
        assert!(close(normal_cdf(1.0) - normal_cdf(-1.0), 0.682_689_492_137_086, 1e-13));
    }

    #[test]
    fn ks_statistic_on_exact_quantiles() {
        let n = 50;
        let d = GammaDist::new(2.0, 1.0).unwrap();
        let sample: Vec<f64> = (1..=n)
            .map(|i| d.quantile((i as f64 - 0.5) / n as f64).unwrap())
            .collect();
        let r = ks_test(&sample, |x| d.cdf(x).unwrap()).unwrap();
        assert!(close(r.statistic, 0.5 / n as f64, 1e-9), "{}", r.statistic);
        assert!(r.p_value > 0.99);
        assert_eq!(ks_test(&[], normal_cdf), Err(SpecFunError::EmptySample));
    }

    #[test]
    fn kolmogorov_sf_reference_points() {
        // Classical critical values of the Kolmogorov distribution.
        assert!(close(kolmogorov_sf(1.358), 0.05, 5e-4));
        assert!(close(kolmogorov_sf(1.628), 0.01, 5e-4));
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }
}
