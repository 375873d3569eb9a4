//! Regression and hypothesis-testing kernels.
//!
//! Tail probabilities come from the regularized incomplete beta function
//! (Student t) and the complementary error function (chi-square with one
//! degree of freedom).

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Newton iterations stop once no coefficient moves by more than this.
pub const LOGISTIC_TOLERANCE: f64 = 1e-10;
pub const LOGISTIC_MAX_ITERATIONS: usize = 50;
/// A slope past this magnitude is treated as divergence from separation.
pub const SEPARATION_SLOPE: f64 = 50.0;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum InferenceError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("outcome has a single class")]
    DegenerateOutcome,
    #[error("regressor is constant")]
    SingularDesign,
    #[error("outcomes are completely separated by the regressor")]
    Separation,
    #[error("one-tailed test needs a direction")]
    MissingDirection,
    #[error("alpha must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("non-finite input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticResult {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the slope from the inverse Fisher information.
    pub slope_se: f64,
    /// McFadden: 1 - ll_full / ll_null.
    pub pseudo_r2: f64,
    /// Likelihood-ratio test against the intercept-only model, 1 df.
    pub p_value: f64,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl LogisticResult {
    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.intercept + self.slope * x)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of `logit P(y) = intercept + slope * x`.
pub fn logistic_log_likelihood(x: &[f64], y: &[bool], intercept: f64, slope: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| {
            let eta = intercept + slope * xi;
            if yi {
                -softplus(-eta)
            } else {
                -softplus(eta)
            }
        })
        .sum()
}

/// Gradient of [`logistic_log_likelihood`] with respect to (intercept, slope).
pub fn logistic_gradient(x: &[f64], y: &[bool], intercept: f64, slope: f64) -> [f64; 2] {
    x.iter().zip(y).fold([0.0, 0.0], |[g0, g1], (&xi, &yi)| {
        let r = yi as u8 as f64 - sigmoid(intercept + slope * xi);
        [g0 + r, g1 + r * xi]
    })
}

fn check_xy<T>(x: &[f64], y: &[T], min: usize) -> Result<(), InferenceError> {
    if x.len() != y.len() {
        return Err(InferenceError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(InferenceError::TooFewObservations {
            needed: min,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite);
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

/// Fits a one-regressor logistic model by Newton-Raphson with step halving.
pub fn logistic_fit(x: &[f64], y: &[bool]) -> Result<LogisticResult, InferenceError> {
    check_xy(x, y, 3)?;
    let n = x.len();
    let ones = y.iter().filter(|&&v| v).count();
    if ones == 0 || ones == n {
        return Err(InferenceError::DegenerateOutcome);
    }
    if is_constant(x) {
        return Err(InferenceError::SingularDesign);
    }
    let class_range = |want: bool| {
        x.iter()
            .zip(y)
            .filter(|(_, &yi)| yi == want)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&xi, _)| (lo.min(xi), hi.max(xi)))
    };
    let ((lo0, hi0), (lo1, hi1)) = (class_range(false), class_range(true));
    if hi0 <= lo1 || hi1 <= lo0 {
        return Err(InferenceError::Separation);
    }

    let mean = ones as f64 / n as f64;
    let null_ll = ones as f64 * mean.ln() + (n - ones) as f64 * (1.0 - mean).ln();
    let mut b = [(mean / (1.0 - mean)).ln(), 0.0];
    let mut ll = logistic_log_likelihood(x, y, b[0], b[1]);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < LOGISTIC_MAX_ITERATIONS {
        iterations += 1;
        let g = logistic_gradient(x, y, b[0], b[1]);
        let info = information(x, b);
        let Some(step) = solve2(info, g) else {
            return Err(InferenceError::SingularDesign);
        };
        let mut scale = 1.0;
        let mut next = [b[0] + step[0], b[1] + step[1]];
        let mut next_ll = logistic_log_likelihood(x, y, next[0], next[1]);
        // Halve only on a real decrease; near the optimum rounding noise in
        // the likelihood would otherwise stall the iteration.
        while next_ll < ll - 1e-9 * (1.0 + ll.abs()) && scale > 1e-6 {
            scale *= 0.5;
            next = [b[0] + scale * step[0], b[1] + scale * step[1]];
            next_ll = logistic_log_likelihood(x, y, next[0], next[1]);
        }
        let change = (next[0] - b[0]).abs().max((next[1] - b[1]).abs());
        b = next;
        ll = next_ll.max(ll);
        if b[1].abs() > SEPARATION_SLOPE {
            return Err(InferenceError::Separation);
        }
        if change < LOGISTIC_TOLERANCE {
            converged = true;
            break;
        }
    }
    ll = logistic_log_likelihood(x, y, b[0], b[1]);
    let info = information(x, b);
    let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
    let slope_se = (info[0][0] / det).sqrt();
    let lr = (2.0 * (ll - null_ll)).max(0.0);
    Ok(LogisticResult {
        intercept: b[0],
        slope: b[1],
        slope_se,
        pseudo_r2: (1.0 - ll / null_ll).clamp(0.0, 1.0),
        p_value: chi2_1_sf(lr),
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        n,
        converged,
        iterations,
    })
}

/// Fisher information `sum w [1 x; x x^2]` with `w = p(1-p)`.
fn information(x: &[f64], b: [f64; 2]) -> [[f64; 2]; 2] {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &xi in x {
        let p = sigmoid(b[0] + b[1] * xi);
        let w = p * (1.0 - p);
        s0 += w;
        s1 += w * xi;
        s2 += w * xi * xi;
    }
    [[s0, s1], [s1, s2]]
}

fn solve2(m: [[f64; 2]; 2], v: [f64; 2]) -> Option<[f64; 2]> {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() < 1e-300 || !det.is_finite() {
        return None;
    }
    Some([
        (m[1][1] * v[0] - m[0][1] * v[1]) / det,
        (m[0][0] * v[1] - m[1][0] * v[0]) / det,
    ])
}

/// Upper tail of chi-square with one degree of freedom.
pub fn chi2_1_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OlsResult {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
    pub r2: f64,
    /// Two-sided test of slope = 0 on `df` degrees of freedom. Reported as
    /// 1.0 when `df` is 0.
    pub p_value: f64,
    pub df: usize,
    pub n: usize,
}

impl OlsResult {
    pub fn predict(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsResult, InferenceError> {
    check_xy(x, y, 2)?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::NonFinite);
    }
    if is_constant(x) {
        return Err(InferenceError::SingularDesign);
    }
    let n = x.len();
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let df = n - 2;
    let r2 = if syy > 0.0 { (1.0 - sse / syy).clamp(0.0, 1.0) } else { 0.0 };
    if df == 0 {
        return Ok(OlsResult {
            intercept,
            slope,
            slope_se: 0.0,
            r2: 1.0,
            p_value: 1.0,
            df,
            n,
        });
    }
    let slope_se = (sse / df as f64 / sxx).sqrt();
    let p_value = if slope_se > 0.0 {
        let t = slope / slope_se;
        student_t_two_sided(t, df as f64)
    } else if slope == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(OlsResult {
        intercept,
        slope,
        slope_se,
        r2,
        p_value,
        df,
        n,
    })
}

fn student_t(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("positive finite degrees of freedom")
}

pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    (2.0 * student_t(df).sf(t.abs())).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tails {
    One,
    Two,
}

/// Alternative hypothesis for a one-tailed test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    GreaterA,
    GreaterB,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    pub tails: Tails,
    pub mean_a: f64,
    pub mean_b: f64,
    pub sd_a: f64,
    pub sd_b: f64,
    pub n_a: usize,
    pub n_b: usize,
}

fn mean_var(s: &[f64]) -> (f64, f64) {
    let n = s.len() as f64;
    let m = s.iter().sum::<f64>() / n;
    let v = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Unequal-variance two-sample t-test with Welch-Satterthwaite degrees
/// of freedom.
pub fn welch_t_test(
    a: &[f64],
    b: &[f64],
    tails: Tails,
    direction: Option<Direction>,
) -> Result<TestResult, InferenceError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(InferenceError::TooFewObservations { needed: 2, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::NonFinite);
        }
    }
    if tails == Tails::One && direction.is_none() {
        return Err(InferenceError::MissingDirection);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (qa, qb) = (va / na, vb / nb);
    let se2 = qa + qb;

    let (t, df) = if se2 > 0.0 {
        let t = (ma - mb) / se2.sqrt();
        let df = se2 * se2 / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0));
        (t, df)
    } else {
        let diff = ma - mb;
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        (t, na + nb - 2.0)
    };
    let p = match (tails, direction) {
        (Tails::Two, _) => {
            if t == 0.0 {
                1.0
            } else {
                student_t_two_sided(t, df)
            }
        }
        (Tails::One, Some(d)) => {
            let dist = student_t(df);
            match d {
                Direction::GreaterA => dist.sf(t),
                Direction::GreaterB => dist.cdf(t),
            }
        }
        (Tails::One, None) => unreachable!("checked above"),
    };
    Ok(TestResult {
        t,
        df,
        p: p.clamp(0.0, 1.0),
        tails,
        mean_a: ma,
        mean_b: mb,
        sd_a: va.sqrt(),
        sd_b: vb.sqrt(),
        n_a: a.len(),
        n_b: b.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonferroniRow {
    pub p: f64,
    pub adjusted_threshold: f64,
    pub significant: bool,
}

/// Flags each p-value against `alpha / m`.
pub fn bonferroni(p_values: &[f64], alpha: f64) -> Result<Vec<BonferroniRow>, InferenceError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(InferenceError::BadAlpha(alpha));
    }
    let threshold = alpha / p_values.len().max(1) as f64;
    Ok(p_values
        .iter()
        .map(|&p| BonferroniRow {
            p,
            adjusted_threshold: threshold,
            significant: p <= threshold,
        })
        .collect())
}
