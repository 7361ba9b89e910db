//! Poissonian likelihood of photon counts and its maximization over density matrices.
//!
//! Each record is a normalized measurement operator `M_j` held for an
//! exposition time `t_j` with `n_j` detected counts. With a known source
//! intensity `I` the counts are Poisson with mean `I Tr(M_j rho) t_j`.
//!
//! The estimator is a diluted `R rho R` fixed-point iteration. Records whose
//! elements do not sum to a multiple of the identity (transformed, incomplete
//! measurement sets) are handled by pairing each record with its unregistered
//! complement `1 - M_j`, whose expected count `I t_j (1 - p_j)` is known once
//! `I` is. The augmented set is complete with total weight `I * sum t_j`, so
//! the iteration operator is
//!
//! ```text
//! A = G^{-1/2} R G^{-1/2},  R = sum_j [ n_j / p_j M_j + I t_j (1 - M_j) ],  G = I sum_j t_j 1
//! ```
//!
//! whose fixed points are exactly the stationary points of the known-intensity
//! likelihood on unit-trace states.
//!
//! Each step moves from `rho` towards the normalized image `A rho A / Tr`.
//! The log-likelihood is concave along that ray, so by default the step
//! length is found by an exact one-dimensional search that may extend past
//! the image up to the edge of the positive cone.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, trace_norm, CMatrix};
use crate::quantum::{born_probability, maximally_mixed, DensityMatrix, PovmElement};

/// Floor applied to modeled probabilities of events that did fire.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

const MAX_HALVINGS: usize = 60;

/// Fraction of the distance to the edge of the positive cone left untaken.
const BOUNDARY_MARGIN: f64 = 1e-9;

/// One exposure of a normalized measurement operator.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    element: PovmElement,
    time: f64,
    counts: u64,
}

impl MeasurementRecord {
    /// `element` must have unit trace; zero time requires zero counts.
    pub fn new(element: PovmElement, time: f64, counts: u64) -> Result<Self> {
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::InvalidRecord(format!("exposition time {time}")));
        }
        if time == 0.0 && counts > 0 {
            return Err(Error::InvalidRecord(format!(
                "{counts} counts recorded with zero exposition time"
            )));
        }
        if (element.weight() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidRecord(format!(
                "element trace {} is not 1",
                element.weight()
            )));
        }
        Ok(Self {
            element,
            time,
            counts,
        })
    }

    pub fn element(&self) -> &PovmElement {
        &self.element
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn counts(&self) -> u64 {
        self.counts
    }
}

/// Records plus the independently known source intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodData {
    records: Vec<MeasurementRecord>,
    intensity: f64,
}

impl LikelihoodData {
    pub fn new(records: Vec<MeasurementRecord>, intensity: f64) -> Result<Self> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::InvalidParameter(format!("intensity {intensity}")));
        }
        if let Some(first) = records.first() {
            let dim = first.element.dim();
            if let Some(bad) = records.iter().find(|r| r.element.dim() != dim) {
                return Err(Error::DimensionMismatch(dim, bad.element.dim()));
            }
        }
        Ok(Self { records, intensity })
    }

    pub fn records(&self) -> &[MeasurementRecord] {
        &self.records
    }

    pub fn intensity(&self) -> f64 {
        self.intensity
    }

    pub fn total_counts(&self) -> u64 {
        self.records.iter().map(|r| r.counts).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).sum()
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.element.dim())
    }
}

/// Poissonian log-likelihood `sum_j [n_j ln(I p_j t_j) - I p_j t_j]`, without
/// the model-independent `-ln n_j!`.
pub fn log_likelihood(data: &LikelihoodData, rho: &DensityMatrix) -> Result<f64> {
    let mut total = 0.0;
    for r in &data.records {
        if r.time == 0.0 {
            continue;
        }
        let p = born_probability(&r.element, rho)?;
        total += term(data.intensity, p, r.time, r.counts);
    }
    Ok(total)
}

fn term(intensity: f64, p: f64, time: f64, counts: u64) -> f64 {
    if counts == 0 {
        return -intensity * p * time;
    }
    let p = p.max(PROBABILITY_FLOOR);
    let mean = intensity * p * time;
    counts as f64 * mean.ln() - mean
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleOptions {
    pub max_iter: usize,
    /// Stop once the trace-norm change of one step drops below this.
    pub tol: f64,
    /// Largest step towards the `A rho A` image when `line_search` is off.
    pub dilution: f64,
    /// Choose each step length by maximizing the likelihood along the ray.
    pub line_search: bool,
    /// Mixing with `1_D/D` applied to the returned estimate; zero disables it.
    pub mix_floor: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-10,
            dilution: 0.5,
            line_search: true,
            mix_floor: 0.0,
        }
    }
}

impl MleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter(
                "max_iter must be at least 1".into(),
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol {}", self.tol)));
        }
        if !(self.dilution > 0.0 && self.dilution <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "dilution {}",
                self.dilution
            )));
        }
        if !(0.0..1.0).contains(&self.mix_floor) {
            return Err(Error::InvalidParameter(format!(
                "mix floor {}",
                self.mix_floor
            )));
        }
        Ok(())
    }
}

/// Result of an estimation together with its convergence history.
#[derive(Debug, Clone)]
pub struct MleReport {
    pub estimate: DensityMatrix,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood at the start point followed by one value per accepted step.
    pub log_likelihood: Vec<f64>,
}

/// Maximum-likelihood state for `data`, started from `1_D/D`.
pub fn mle_estimate(data: &LikelihoodData, opts: &MleOptions) -> Result<DensityMatrix> {
    Ok(mle_estimate_from(data, opts, None)?.estimate)
}

/// As [`mle_estimate`], optionally warm-started from `start`.
pub fn mle_estimate_from(
    data: &LikelihoodData,
    opts: &MleOptions,
    start: Option<&DensityMatrix>,
) -> Result<MleReport> {
    opts.validate()?;
    let active: Vec<&MeasurementRecord> = data.records.iter().filter(|r| r.time > 0.0).collect();
    let Some(first) = active.first() else {
        return Err(Error::NonIdentifiable(
            "no measurement record has a positive exposition time".into(),
        ));
    };
    let dim = first.element.dim();
    let mut rho = match start {
        Some(s) if s.dim() != dim => return Err(Error::DimensionMismatch(dim, s.dim())),
        Some(s) => s.clone(),
        None => maximally_mixed(dim),
    };
    let mut loglik = log_likelihood(data, &rho)?;
    let mut history = vec![loglik];
    if data.total_counts() == 0 {
        return Ok(MleReport {
            estimate: finish(rho, opts.mix_floor)?,
            iterations: 0,
            converged: true,
            log_likelihood: history,
        });
    }

    let intensity = data.intensity;
    let weight = intensity * active.iter().map(|r| r.time).sum::<f64>();
    let identity = CMatrix::identity(dim);
    let mut eps = opts.dilution;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        // A = 1 + sum_j (n_j / p_j - I t_j) M_j / (I T)
        let mut a = identity.clone();
        for r in &active {
            let p = born_probability(&r.element, &rho)?;
            let c = if r.counts == 0 {
                -intensity * r.time
            } else {
                r.counts as f64 / p.max(PROBABILITY_FLOOR) - intensity * r.time
            };
            a.add_scaled(r.element.matrix(), c / weight);
        }
        let image = DensityMatrix::from_unnormalized(&a.sandwich(rho.matrix()))?;
        let direction = image.matrix() - rho.matrix();
        if opts.line_search {
            eps = ray_maximum(&active, intensity, &rho, &direction)?;
            if eps <= 0.0 {
                converged = true;
                break;
            }
        }

        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let step = rho
                .matrix()
                .add_scaled_copy(&direction, eps)
                .hermitian_part();
            if let Ok(candidate) = DensityMatrix::from_unnormalized(&step) {
                let candidate_loglik = log_likelihood(data, &candidate)?;
                if candidate_loglik >= loglik {
                    accepted = Some((candidate, candidate_loglik));
                    break;
                }
            }
            eps *= 0.5;
        }
        let Some((candidate, candidate_loglik)) = accepted else {
            // No ascent left at machine precision.
            converged = true;
            break;
        };
        let change = trace_norm(&(candidate.matrix() - rho.matrix()))?;
        rho = candidate;
        loglik = candidate_loglik;
        history.push(loglik);
        if !opts.line_search {
            eps = (eps * 2.0).min(opts.dilution);
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    Ok(MleReport {
        estimate: finish(rho, opts.mix_floor)?,
        iterations,
        converged,
        log_likelihood: history,
    })
}

/// Step length in `[0, eps_max]` maximizing the likelihood on
/// `rho + eps * direction`, where `eps_max` is the edge of the positive cone.
fn ray_maximum(
    active: &[&MeasurementRecord],
    intensity: f64,
    rho: &DensityMatrix,
    direction: &CMatrix,
) -> Result<f64> {
    // (n_j, p_j, q_j) with p_j + eps q_j the probability along the ray.
    let mut terms = Vec::with_capacity(active.len());
    let mut linear = 0.0;
    for r in active {
        let q = r.element.matrix().trace_product(direction).re;
        linear += intensity * r.time * q;
        if r.counts > 0 {
            let p = r.element.matrix().trace_product(rho.matrix()).re;
            terms.push((r.counts as f64, p, q));
        }
    }
    let slope = |eps: f64| -> (f64, f64) {
        let mut first = -linear;
        let mut second = 0.0;
        for &(n, p, q) in &terms {
            let prob = p + eps * q;
            if prob <= 0.0 {
                return (f64::NEG_INFINITY, f64::NEG_INFINITY);
            }
            first += n * q / prob;
            second -= n * (q / prob).powi(2);
        }
        (first, second)
    };

    if !(slope(0.0).0 > 0.0) {
        return Ok(0.0);
    }
    let eps_max = positive_cone_limit(rho.matrix(), direction)? * (1.0 - BOUNDARY_MARGIN);
    if slope(eps_max).0 >= 0.0 {
        return Ok(eps_max);
    }
    // Safeguarded Newton on the decreasing slope.
    let (mut lo, mut hi) = (0.0, eps_max);
    let mut x = eps_max.min(1.0);
    for _ in 0..100 {
        let (s, ds) = slope(x);
        if s > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
        let newton = x - s / ds;
        x = if s.is_finite() && ds < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Ok(lo)
}

/// Largest `eps >= 1` (capped at `1e15`) keeping `rho + eps * direction`
/// positive semidefinite; `eps = 1` lands on a state by construction.
fn positive_cone_limit(rho: &CMatrix, direction: &CMatrix) -> Result<f64> {
    let psd = |eps: f64| -> Result<bool> {
        let m = rho.add_scaled_copy(direction, eps).hermitian_part();
        Ok(hermitian_eig(&m)?.eigenvalues[0] >= 0.0)
    };
    let (mut lo, mut hi) = (1.0, 2.0);
    while psd(hi)? {
        lo = hi;
        hi *= 2.0;
        if hi > 1e15 {
            return Ok(lo);
        }
    }
    while hi - lo > 1e-15 * lo {
        let mid = 0.5 * (lo + hi);
        if psd(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn finish(rho: DensityMatrix, mix_floor: f64) -> Result<DensityMatrix> {
    if mix_floor > 0.0 {
        regularize_full_rank(&rho, mix_floor)
    } else {
        Ok(rho)
    }
}

/// `(1 - delta) rho + delta 1_D/D`; every eigenvalue ends up at least `delta / D`.
pub fn regularize_full_rank(rho: &DensityMatrix, delta: f64) -> Result<DensityMatrix> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::InvalidParameter(format!(
            "regularization {delta} outside [0, 1)"
        )));
    }
    let floor = maximally_mixed(rho.dim()).matrix().scale(delta);
    DensityMatrix::from_unnormalized(&(&rho.matrix().scale(1.0 - delta) + &floor))
}
