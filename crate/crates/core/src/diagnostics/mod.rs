//! Price-discovery and stylised-fact diagnostics on evaluation traces.
//!
//! Pricing errors `e(n) = v - p(n)` are pooled across episodes for an AR(1)
//! fit without intercept, using only lag pairs inside an episode. Returns
//! for kurtosis, normality and ARCH tests are log differences of each
//! episode's price path, concatenated. All t statistics are plain OLS with
//! Gaussian p-values.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

use crate::env::EpisodeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("regressor has no variation")]
    DegenerateRegressor,
    #[error("sample has zero variance")]
    DegenerateVariance,
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Two-sided Gaussian p-value of a t statistic.
fn two_sided_p(t: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    2.0 * std_normal().cdf(-t.abs())
}

/// `-ln 2 / ln|phi|`: zero at `phi = 0`, infinite at `|phi| = 1`, negative
/// for explosive estimates.
pub fn half_life(phi: f64) -> f64 {
    let a = phi.abs();
    if a == 0.0 {
        0.0
    } else if a == 1.0 {
        f64::INFINITY
    } else {
        -std::f64::consts::LN_2 / a.ln()
    }
}

/// Slope of a regression through the origin with its OLS t statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OriginFit {
    pub slope: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n: usize,
}

fn fit_through_origin(pairs: impl Iterator<Item = (f64, f64)>) -> Result<OriginFit, DiagnosticsError> {
    let (mut sxx, mut sxy, mut syy, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (x, y) in pairs {
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        n += 1;
    }
    if n < 2 {
        return Err(DiagnosticsError::InsufficientData(format!("{n} observations")));
    }
    if sxx == 0.0 {
        return Err(DiagnosticsError::DegenerateRegressor);
    }
    let slope = sxy / sxx;
    let ssr = (syy - slope * sxy).max(0.0);
    let s2 = ssr / (n - 1) as f64;
    let se = (s2 / sxx).sqrt();
    let t_stat = if se == 0.0 { f64::INFINITY.copysign(slope) } else { slope / se };
    Ok(OriginFit { slope, t_stat, p_value: two_sided_p(t_stat), n })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1Fit {
    pub phi: f64,
    pub p_value: f64,
    pub half_life: f64,
    pub n: usize,
}

/// AR(1) without intercept on the pooled within-episode lag pairs.
pub fn ar1_half_life(episodes: &[Vec<f64>]) -> Result<Ar1Fit, DiagnosticsError> {
    if episodes.is_empty() {
        return Err(DiagnosticsError::InsufficientData("no episodes".into()));
    }
    if let Some(short) = episodes.iter().find(|e| e.len() < 3) {
        return Err(DiagnosticsError::InsufficientData(format!("episode with {} observations", short.len())));
    }
    let pairs = episodes.iter().flat_map(|e| e.windows(2).map(|w| (w[0], w[1])));
    let fit = fit_through_origin(pairs)?;
    Ok(Ar1Fit { phi: fit.slope, p_value: fit.p_value, half_life: half_life(fit.slope), n: fit.n })
}

/// Price change on net order flow, no intercept.
pub fn kyle_regression(delta_p: &[f64], q: &[f64]) -> Result<OriginFit, DiagnosticsError> {
    if delta_p.len() != q.len() {
        return Err(DiagnosticsError::LengthMismatch(delta_p.len(), q.len()));
    }
    if q.len() < 3 {
        return Err(DiagnosticsError::InsufficientData(format!("{} observations", q.len())));
    }
    fit_through_origin(q.iter().copied().zip(delta_p.iter().copied()))
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population fourth standardised moment minus 3.
pub fn excess_kurtosis(x: &[f64]) -> Result<f64, DiagnosticsError> {
    if x.len() < 4 {
        return Err(DiagnosticsError::InsufficientData(format!("{} observations", x.len())));
    }
    let m = mean(x);
    let (mut m2, mut m4) = (0.0, 0.0);
    for v in x {
        let d = (v - m).powi(2);
        m2 += d;
        m4 += d * d;
    }
    let n = x.len() as f64;
    let (m2, m4) = (m2 / n, m4 / n);
    if m2 == 0.0 {
        return Err(DiagnosticsError::DegenerateVariance);
    }
    Ok(m4 / (m2 * m2) - 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Anderson-Darling test against a normal with estimated mean and variance.
/// The statistic is the small-sample corrected `A*^2`.
pub fn anderson_darling_normality(sample: &[f64]) -> Result<TestResult, DiagnosticsError> {
    let n = sample.len();
    if n < 8 {
        return Err(DiagnosticsError::InsufficientData(format!("{n} observations")));
    }
    let m = mean(sample);
    let var = sample.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(DiagnosticsError::InsufficientData("zero variance".into()));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = sample.iter().map(|v| (v - m) / sd).collect();
    z.sort_by(f64::total_cmp);
    let norm = std_normal();
    let nf = n as f64;
    let mut s = 0.0;
    for i in 0..n {
        // ln(1 - Phi(z)) = ln Phi(-z), which keeps precision in the tails.
        let lo = norm.cdf(z[i]).max(f64::MIN_POSITIVE).ln();
        let hi = norm.cdf(-z[n - 1 - i]).max(f64::MIN_POSITIVE).ln();
        s += (2 * i + 1) as f64 * (lo + hi);
    }
    let a2 = -nf - s / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Ok(TestResult { statistic: a, p_value: p.clamp(0.0, 1.0) })
}

/// Engle's LM test for ARCH effects: squared demeaned returns on a constant
/// and `lags` of themselves; `LM = n_reg R^2 ~ chi2(lags)`.
pub fn arch_lm(returns: &[f64], lags: usize) -> Result<TestResult, DiagnosticsError> {
    let n = returns.len();
    if lags == 0 || n <= lags + 2 {
        return Err(DiagnosticsError::InsufficientData(format!("{n} observations for {lags} lags")));
    }
    let m = mean(returns);
    let e2: Vec<f64> = returns.iter().map(|r| (r - m).powi(2)).collect();
    let k = lags + 1;
    let rows = n - lags;
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut row = vec![0.0; k];
    for t in lags..n {
        row[0] = 1.0;
        for j in 1..=lags {
            row[j] = e2[t - j];
        }
        for a in 0..k {
            xty[a] += row[a] * e2[t];
            for b in 0..k {
                xtx[(a, b)] += row[a] * row[b];
            }
        }
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => xtx.lu().solve(&xty).ok_or(DiagnosticsError::DegenerateRegressor)?,
    };
    let y = &e2[lags..];
    let ybar = mean(y);
    let (mut ssr, mut sst) = (0.0, 0.0);
    for (i, t) in (lags..n).enumerate() {
        let mut fit = beta[0];
        for j in 1..=lags {
            fit += beta[j] * e2[t - j];
        }
        ssr += (y[i] - fit).powi(2);
        sst += (y[i] - ybar).powi(2);
    }
    if sst == 0.0 {
        return Err(DiagnosticsError::DegenerateVariance);
    }
    let r2 = (1.0 - ssr / sst).clamp(0.0, 1.0);
    let lm = rows as f64 * r2;
    let chi = ChiSquared::new(lags as f64).expect("positive dof");
    Ok(TestResult { statistic: lm, p_value: chi.sf(lm) })
}

pub const ARCH_LAGS: usize = 5;

/// One row of the price-discovery table. Fields are `None` when the
/// corresponding estimator could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscoveryReport {
    pub phi: Option<f64>,
    pub p_phi: Option<f64>,
    pub half_life: Option<f64>,
    pub lambda_hat: Option<f64>,
    pub p_lambda: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    pub ad_p: Option<f64>,
    pub archlm_p: Option<f64>,
}

/// Pooled pricing errors `v - p(n)` for `n = 0..=N`, one vector per episode.
pub fn pricing_errors(traces: &[EpisodeSeries]) -> Vec<Vec<f64>> {
    traces
        .iter()
        .map(|t| t.price_path().iter().map(|p| t.fundamental - p).collect())
        .collect()
}

/// Log returns of every episode's price path, concatenated.
pub fn log_returns(traces: &[EpisodeSeries]) -> Vec<f64> {
    traces
        .iter()
        .flat_map(|t| {
            let p = t.price_path();
            p.windows(2)
                .filter(|w| w[0] > 0.0 && w[1] > 0.0)
                .map(|w| (w[1] / w[0]).ln())
                .collect::<Vec<_>>()
        })
        .collect()
}

pub fn full_report(traces: &[EpisodeSeries]) -> Result<DiscoveryReport, DiagnosticsError> {
    if traces.is_empty() {
        return Err(DiagnosticsError::InsufficientData("no traces".into()));
    }
    let mut r = DiscoveryReport::default();
    if let Ok(fit) = ar1_half_life(&pricing_errors(traces)) {
        r.phi = Some(fit.phi);
        r.p_phi = Some(fit.p_value);
        r.half_life = Some(fit.half_life);
    }
    let mut dp = Vec::new();
    let mut q = Vec::new();
    for t in traces {
        let p = t.price_path();
        dp.extend(p.windows(2).map(|w| w[1] - w[0]));
        q.extend_from_slice(&t.total_flow);
    }
    if let Ok(fit) = kyle_regression(&dp, &q) {
        r.lambda_hat = Some(fit.slope);
        r.p_lambda = Some(fit.p_value);
    }
    let ret = log_returns(traces);
    r.excess_kurtosis = excess_kurtosis(&ret).ok();
    r.ad_p = anderson_darling_normality(&ret).ok().map(|t| t.p_value);
    r.archlm_p = arch_lm(&ret, ARCH_LAGS).ok().map(|t| t.p_value);
    Ok(r)
}

/// Labels identifying a report row.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub act_type: String,
    pub n_mm: usize,
    pub lob: u8,
    pub mode: String,
    pub report: DiscoveryReport,
}

fn cell(x: Option<f64>) -> String {
    match x {
        None => "NA".into(),
        Some(v) if v.is_nan() => "NA".into(),
        Some(v) => v.to_string(),
    }
}

pub fn write_report_csv<W: Write>(mut out: W, rows: &[ReportRow], manifest_hash: &str) -> Result<(), csv::Error> {
    writeln!(out, "# manifest: {manifest_hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "act_type", "n_mm", "lob", "mode", "phi", "p_phi", "half_life", "lambda", "p_lambda", "kurt", "ad_p", "archlm_p",
    ])?;
    for row in rows {
        let r = &row.report;
        w.write_record([
            row.act_type.clone(),
            row.n_mm.to_string(),
            row.lob.to_string(),
            row.mode.clone(),
            cell(r.phi),
            cell(r.p_phi),
            cell(r.half_life),
            cell(r.lambda_hat),
            cell(r.p_lambda),
            cell(r.excess_kurtosis),
            cell(r.ad_p),
            cell(r.archlm_p),
        ])?;
    }
    w.flush()?;
    Ok(())
}
