//! Aggregation of convergence traces and power-law fits.

use crate::error::{Error, Result};

/// Mean squared Bures distance at one sample size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n: f64,
    pub mean: f64,
    pub std_of_mean: f64,
}

/// Run-averaged `d_B^2(N)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub label: String,
    pub runs: usize,
    pub points: Vec<CurvePoint>,
}

impl ConvergenceCurve {
    pub fn new(label: impl Into<String>, runs: usize, points: Vec<CurvePoint>) -> Result<Self> {
        if points.windows(2).any(|w| !(w[0].n < w[1].n)) {
            return Err(Error::Curve("N must be strictly increasing".into()));
        }
        if let Some(p) = points
            .iter()
            .find(|p| !(p.mean > 0.0) || !(p.std_of_mean >= 0.0))
        {
            return Err(Error::Curve(format!(
                "invalid point at N = {}: mean {}, std {}",
                p.n, p.mean, p.std_of_mean
            )));
        }
        Ok(Self {
            label: label.into(),
            runs,
            points,
        })
    }

    /// Linear interpolation in log-log coordinates; `None` outside the support.
    pub fn mean_at(&self, n: f64) -> Option<f64> {
        let xs: Vec<(f64, f64)> = self.points.iter().map(|p| (p.n, p.mean)).collect();
        interpolate(&xs, n)
    }
}

/// Interpolates a sampled `d(N)` at `n`, linearly in `(ln N, ln d)`.
///
/// Brackets containing a zero value fall back to interpolation linear in `d`.
/// Returns `None` when `n` lies outside the sampled range.
pub fn interpolate(points: &[(f64, f64)], n: f64) -> Option<f64> {
    let first = points.first()?;
    let last = points.last()?;
    let eps = 1e-12 * n.abs();
    if n < first.0 - eps || n > last.0 + eps {
        return None;
    }
    let k = points.partition_point(|p| p.0 < n);
    if k < points.len() && (points[k].0 - n).abs() <= eps {
        return Some(points[k].1);
    }
    if k == 0 {
        return Some(first.1);
    }
    if k == points.len() {
        return Some(last.1);
    }
    let (n0, d0) = points[k - 1];
    let (n1, d1) = points[k];
    let s = (n.ln() - n0.ln()) / (n1.ln() - n0.ln());
    if d0 > 0.0 && d1 > 0.0 {
        Some((d0.ln() + s * (d1.ln() - d0.ln())).exp())
    } else {
        Some(d0 + s * (d1 - d0))
    }
}

/// `count` logarithmically spaced values from `lo` to `hi`, endpoints exact.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == count - 1 {
                    hi
                } else {
                    (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (count - 1) as f64).exp()
                }
            })
            .collect(),
    }
}

/// Averages `(N, d_B^2)` traces on the logarithmic grid spanning their
/// common support, `points_per_decade` points per decade.
pub fn average_curves(
    label: &str,
    traces: &[Vec<(f64, f64)>],
    points_per_decade: usize,
) -> Result<ConvergenceCurve> {
    if traces.len() < 2 {
        return Err(Error::Curve(format!(
            "need at least 2 traces, got {}",
            traces.len()
        )));
    }
    if points_per_decade == 0 {
        return Err(Error::Curve("points per decade must be positive".into()));
    }
    for t in traces {
        if t.is_empty() || t.windows(2).any(|w| !(w[0].0 < w[1].0)) || t[0].0 <= 0.0 {
            return Err(Error::Curve(
                "trace N values must be positive and increasing".into(),
            ));
        }
    }
    let lo = traces.iter().map(|t| t[0].0).fold(f64::MIN, f64::max);
    let hi = traces
        .iter()
        .map(|t| t[t.len() - 1].0)
        .fold(f64::MAX, f64::min);
    if lo > hi {
        return Err(Error::Curve(format!(
            "traces share no N support ({lo} > {hi})"
        )));
    }
    let count = if hi > lo {
        ((hi / lo).log10() * points_per_decade as f64)
            .round()
            .max(1.0) as usize
            + 1
    } else {
        1
    };
    let runs = traces.len() as f64;
    let mut points = Vec::with_capacity(count);
    for n in log_grid(lo, hi, count) {
        let values: Vec<f64> = traces
            .iter()
            .map(|t| interpolate(t, n).expect("grid inside common support"))
            .collect();
        let mean = values.iter().sum::<f64>() / runs;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (runs - 1.0);
        points.push(CurvePoint {
            n,
            mean,
            std_of_mean: (var / runs).sqrt(),
        });
    }
    ConvergenceCurve::new(label, traces.len(), points)
}

/// `d_B^2(N) = alpha N^beta` over `[window.0, window.1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub alpha: f64,
    pub beta: f64,
    pub alpha_err: f64,
    pub beta_err: f64,
    pub window: (f64, f64),
    pub points: usize,
    /// Largest absolute residual in `ln d_B^2`.
    pub max_residual: f64,
}

impl PowerLawFit {
    pub fn eval(&self, n: f64) -> f64 {
        self.alpha * n.powf(self.beta)
    }
}

/// Weighted least squares of `ln d_B^2` against `ln N`.
///
/// Weights are `(mean / std)^2`, the inverse variance of the log mean; when
/// any point in the window lacks a positive spread all weights are 1.
pub fn fit_power_law(curve: &ConvergenceCurve, window: (f64, f64)) -> Result<PowerLawFit> {
    let (n1, n2) = window;
    if !(n1 > 0.0 && n1 < n2) {
        return Err(Error::Fit(format!("degenerate window [{n1}, {n2}]")));
    }
    let tol = 1e-9;
    let selected: Vec<&CurvePoint> = curve
        .points
        .iter()
        .filter(|p| p.n >= n1 * (1.0 - tol) && p.n <= n2 * (1.0 + tol))
        .collect();
    if selected.len() < 5 {
        return Err(Error::Fit(format!(
            "window [{n1}, {n2}] holds {} points, need 5",
            selected.len()
        )));
    }
    let weighted = selected.iter().all(|p| p.std_of_mean > 0.0);
    let data: Vec<(f64, f64, f64)> = selected
        .iter()
        .map(|p| {
            let w = if weighted {
                (p.mean / p.std_of_mean).powi(2)
            } else {
                1.0
            };
            (p.n.ln(), p.mean.ln(), w)
        })
        .collect();

    let sw: f64 = data.iter().map(|d| d.2).sum();
    let xm = data.iter().map(|d| d.2 * d.0).sum::<f64>() / sw;
    let ym = data.iter().map(|d| d.2 * d.1).sum::<f64>() / sw;
    let sxx: f64 = data.iter().map(|d| d.2 * (d.0 - xm).powi(2)).sum();
    let sxy: f64 = data.iter().map(|d| d.2 * (d.0 - xm) * (d.1 - ym)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit("window spans a single N".into()));
    }
    let beta = sxy / sxx;
    let intercept = ym - beta * xm;
    let residuals: Vec<f64> = data.iter().map(|d| d.1 - intercept - beta * d.0).collect();
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));

    // Parameter covariance: (X^T W X)^-1, rescaled by the residual variance
    // when the weights carry no absolute scale.
    let scale = if weighted {
        1.0
    } else {
        residuals.iter().map(|r| r * r).sum::<f64>() / (data.len() - 2) as f64
    };
    let var_beta = scale / sxx;
    let var_intercept = scale * (1.0 / sw + xm * xm / sxx);
    let alpha = intercept.exp();
    Ok(PowerLawFit {
        alpha,
        beta,
        alpha_err: alpha * var_intercept.sqrt(),
        beta_err: var_beta.sqrt(),
        window,
        points: data.len(),
        max_residual,
    })
}

/// Geometric mean over the window edges of `d_2^2(N) / d_1^2(N)`.
///
/// Values above 1 mean the first fit reaches lower error at equal `N`.
pub fn efficiency_ratio(fit1: &PowerLawFit, fit2: &PowerLawFit, n1: f64, n2: f64) -> f64 {
    (fit2.alpha / fit1.alpha) * (n1 * n2).powf((fit2.beta - fit1.beta) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateKind {
    MixedQubit,
    PureQubit,
}

/// Asymptotic squared-Bures limit of optimal local qubit tomography.
pub fn gill_massar_bound(n: f64, kind: StateKind) -> f64 {
    match kind {
        StateKind::MixedQubit => 9.0 / (4.0 * n),
        StateKind::PureQubit => 1.0 / n,
    }
}
