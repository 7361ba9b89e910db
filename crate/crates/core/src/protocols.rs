//! Adaptive measurement selection.
//!
//! The rank-preserving protocols transform a base measurement set with an
//! operator `Lmap` satisfying `Lmap rho Lmap^dagger = 1_D/D` for the current
//! (regularized) estimate `rho = U Lambda U^dagger`. Any
//! `V D^{-1/2} Lambda^{-1/2} U^dagger` with unitary `V` qualifies; the default
//! is `V = U`, the symmetric root `(D rho)^{-1/2}`. Every transformed element
//! `M_new = Lmap^dagger M Lmap` fires with the probability it would have on the
//! maximally mixed state. Transformed elements are not normalized; their trace
//! becomes the exposition time of the normalized projector.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::estimation::regularize_full_rank;
use crate::linalg::{hermitian_eig, numeric_rank, CMatrix};
use crate::quantum::{
    gram_schmidt, random_haar_vector, random_unitary_haar, sum_elements, DensityMatrix, Povm,
    PovmElement,
};

/// Default mixing of the estimate with `1_D/D` before it is transformed.
pub const DEFAULT_REGULARIZATION: f64 = 1e-4;

/// Elements with a smaller trace get no exposure.
pub const MIN_TIME_WEIGHT: f64 = 1e-12;

const ORTHOGONALITY_TOL: f64 = 1e-8;

/// Full-rank operator taking the regularized estimate to `1_D/D`.
#[derive(Debug, Clone)]
pub struct TransformOperator {
    lmap: CMatrix,
    source: DensityMatrix,
}

impl TransformOperator {
    pub fn lmap(&self) -> &CMatrix {
        &self.lmap
    }

    /// The regularized estimate the operator was built from.
    pub fn source(&self) -> &DensityMatrix {
        &self.source
    }

    /// `Lmap rho Lmap^dagger`.
    pub fn apply_to_state(&self, rho: &CMatrix) -> CMatrix {
        self.lmap.sandwich(rho)
    }
}

/// Builds the transformation for `estimate` after mixing it with `delta` of `1_D/D`.
pub fn rank_preserving_map(estimate: &DensityMatrix, delta: f64) -> Result<TransformOperator> {
    let source = regularize_full_rank(estimate, delta)?;
    let eig = hermitian_eig(source.matrix())?;
    let dim = source.dim();
    if eig.eigenvalues[0] <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "estimate is rank deficient (min eigenvalue {:e}); use a positive regularization",
            eig.eigenvalues[0]
        )));
    }
    let u = &eig.eigenvectors;
    // Symmetric member of the family: (D rho)^(-1/2), free of any
    // eigenvector phase or ordering convention.
    let lmap = CMatrix::from_fn(dim, |i, j| {
        (0..dim)
            .map(|k| u[(i, k)] * u[(j, k)].conj() / (dim as f64 * eig.eigenvalues[k]).sqrt())
            .sum()
    });
    Ok(TransformOperator { lmap, source })
}

/// `M_new = L M L^dagger` with `L = Lmap^dagger`.
pub fn transform_measurement(op: &TransformOperator, m: &PovmElement) -> Result<PovmElement> {
    PovmElement::new(op.lmap.adjoint().sandwich(m.matrix()).hermitian_part())
}

/// Left-multiplies the map by a unitary `V`; the estimate still goes to `1_D/D`.
pub fn apply_unitary_freedom(op: &TransformOperator, v: &CMatrix) -> Result<TransformOperator> {
    let deviation = v.unitarity_deviation();
    if deviation > 1e-10 {
        return Err(Error::NotUnitary(deviation));
    }
    Ok(TransformOperator {
        lmap: v * &op.lmap,
        source: op.source.clone(),
    })
}

/// A unit-trace projector with its exposition-time multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedMeasurement {
    pub projector: PovmElement,
    pub time_weight: f64,
}

impl TimedMeasurement {
    pub fn unit(projector: PovmElement) -> Self {
        Self {
            projector,
            time_weight: 1.0,
        }
    }

    /// `projector * time_weight`.
    pub fn operator(&self) -> CMatrix {
        self.projector.matrix().scale(self.time_weight)
    }
}

/// Splits `M_new` into `M_new / Tr M_new` and the time weight `Tr M_new`;
/// `None` for a vanishing trace.
pub fn normalize_with_time(m: &PovmElement) -> Option<TimedMeasurement> {
    let weight = m.weight();
    if weight <= MIN_TIME_WEIGHT {
        return None;
    }
    Some(TimedMeasurement {
        projector: m.scale(1.0 / weight),
        time_weight: weight,
    })
}

/// Measurements plus their partition into simultaneity groups. A group is a
/// set of mutually orthogonal projectors read out in a single exposure.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementPlan {
    measurements: Vec<TimedMeasurement>,
    groups: Vec<Vec<usize>>,
}

impl MeasurementPlan {
    pub fn new(measurements: Vec<TimedMeasurement>, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = measurements.len();
        let mut seen = vec![false; n];
        for group in &groups {
            for &i in group {
                if i >= n || seen[i] {
                    return Err(Error::InvalidParameter(format!(
                        "measurement index {i} missing or repeated in plan groups"
                    )));
                }
                seen[i] = true;
            }
            if let Some(&first) = group.first() {
                let dim = measurements[first].projector.dim();
                if group.len() > dim {
                    return Err(Error::InvalidParameter(format!(
                        "group of {} projectors exceeds dimension {dim}",
                        group.len()
                    )));
                }
            }
            for (a, &i) in group.iter().enumerate() {
                for &j in &group[a + 1..] {
                    let overlap = measurements[i]
                        .projector
                        .matrix()
                        .trace_product(measurements[j].projector.matrix())
                        .norm();
                    if overlap > ORTHOGONALITY_TOL {
                        return Err(Error::InvalidParameter(format!(
                            "grouped projectors {i} and {j} overlap by {overlap:e}"
                        )));
                    }
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidParameter(
                "ungrouped measurement in plan".into(),
            ));
        }
        Ok(Self {
            measurements,
            groups,
        })
    }

    /// Every measurement in its own exposure.
    pub fn singletons(measurements: Vec<TimedMeasurement>) -> Self {
        let groups = (0..measurements.len()).map(|i| vec![i]).collect();
        Self {
            measurements,
            groups,
        }
    }

    /// Greedily groups consecutive runs of mutually orthogonal projectors.
    pub fn grouped_by_orthogonality(measurements: Vec<TimedMeasurement>) -> Result<Self> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut assigned = vec![false; measurements.len()];
        for i in 0..measurements.len() {
            if assigned[i] {
                continue;
            }
            let dim = measurements[i].projector.dim();
            let mut group = vec![i];
            assigned[i] = true;
            for j in i + 1..measurements.len() {
                if group.len() == dim {
                    break;
                }
                let orthogonal = !assigned[j]
                    && group.iter().all(|&k| {
                        measurements[k]
                            .projector
                            .matrix()
                            .trace_product(measurements[j].projector.matrix())
                            .norm()
                            <= ORTHOGONALITY_TOL
                    });
                if orthogonal {
                    group.push(j);
                    assigned[j] = true;
                }
            }
            groups.push(group);
        }
        Self::new(measurements, groups)
    }

    pub fn measurements(&self) -> &[TimedMeasurement] {
        &self.measurements
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Exposure multiplier of each group: the largest time weight it contains.
    pub fn group_exposure_weights(&self) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| {
                g.iter()
                    .map(|&i| self.measurements[i].time_weight)
                    .fold(0.0, f64::max)
            })
            .collect()
    }

    pub fn total_exposure_weight(&self) -> f64 {
        self.group_exposure_weights().iter().sum()
    }

    /// `sum_j time_weight_j * projector_j`.
    pub fn weighted_sum(&self) -> CMatrix {
        let dim = self.measurements[0].projector.dim();
        self.measurements
            .iter()
            .fold(CMatrix::zeros(dim), |acc, m| &acc + &m.operator())
    }

    fn append(&mut self, other: MeasurementPlan) {
        let offset = self.measurements.len();
        self.measurements.extend(other.measurements);
        self.groups.extend(
            other
                .groups
                .into_iter()
                .map(|g| g.into_iter().map(|i| i + offset).collect()),
        );
    }

    fn empty() -> Self {
        Self {
            measurements: Vec::new(),
            groups: Vec::new(),
        }
    }
}

/// Unit vector spanning a rank-1 operator.
fn principal_vector(m: &PovmElement) -> Vec<Complex64> {
    let eig = hermitian_eig(m.matrix()).expect("POVM elements are Hermitian");
    eig.eigenvector(eig.dim() - 1)
}

/// Completes a rank-1 measurement to an orthonormal basis (Gram-Schmidt
/// against Haar-random vectors), every member carrying the input's time weight.
pub fn complement_to_basis<R: Rng + ?Sized>(m: &TimedMeasurement, rng: &mut R) -> MeasurementPlan {
    let dim = m.projector.dim();
    let mut columns = vec![principal_vector(&m.projector)];
    columns.extend((1..dim).map(|_| random_haar_vector(dim, rng)));
    let measurements: Vec<TimedMeasurement> = gram_schmidt(columns)
        .iter()
        .map(|v| TimedMeasurement {
            projector: PovmElement::projector(v),
            time_weight: m.time_weight,
        })
        .collect();
    let group = (0..dim).collect();
    MeasurementPlan {
        measurements,
        groups: vec![group],
    }
}

/// Minimal completion of a measurement set: every element is divided by the
/// largest eigenvalue `mu_max` of `S = sum M`, and the spectral decomposition
/// `1 - S/mu_max = sum lambda_j |phi_j><phi_j|` supplies the extra elements
/// `lambda_j |phi_j><phi_j|`. Zero-weight extras are kept (they are inert).
pub fn complement_minimal(set: &[PovmElement]) -> Result<(Vec<PovmElement>, Vec<PovmElement>)> {
    if set.is_empty() {
        return Err(Error::InvalidParameter("empty measurement set".into()));
    }
    let sum = sum_elements(set);
    let mu_max = *hermitian_eig(&sum)?
        .eigenvalues
        .last()
        .expect("non-empty spectrum");
    if !(mu_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "measurement sum has largest eigenvalue {mu_max:e}"
        )));
    }
    let scaled: Vec<PovmElement> = set.iter().map(|m| m.scale(1.0 / mu_max)).collect();
    let dim = sum.dim();
    let residual = &CMatrix::identity(dim) - &sum.scale(1.0 / mu_max);
    let eig = hermitian_eig(&residual.hermitian_part())?;
    let extra = eig
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(k, &lambda)| PovmElement::scaled_projector(&eig.eigenvector(k), lambda.max(0.0)))
        .collect();
    Ok((scaled, extra))
}

/// Measurement-selection strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Protocol {
    /// A fresh Haar-random basis each iteration.
    Random,
    /// The base set aligned with the eigenbasis of the current estimate.
    Eigen,
    /// Transformed base set, no complementation.
    RankpNc,
    /// Transformed elements, each completed to a basis.
    RankpB,
    /// Transformed set rescaled and completed to a decomposition of unity.
    RankpM,
}

impl Protocol {
    pub const ALL: [Protocol; 5] = [
        Protocol::Random,
        Protocol::Eigen,
        Protocol::RankpNc,
        Protocol::RankpB,
        Protocol::RankpM,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Random => "random",
            Protocol::Eigen => "eigen",
            Protocol::RankpNc => "rankp-nc",
            Protocol::RankpB => "rankp-b",
            Protocol::RankpM => "rankp-m",
        }
    }

    pub fn is_rank_preserving(self) -> bool {
        matches!(
            self,
            Protocol::RankpNc | Protocol::RankpB | Protocol::RankpM
        )
    }

    /// Stable small integer used to derive per-protocol random streams.
    pub fn tag(self) -> u64 {
        match self {
            Protocol::Random => 1,
            Protocol::Eigen => 2,
            Protocol::RankpNc => 3,
            Protocol::RankpB => 4,
            Protocol::RankpM => 5,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown protocol '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanOptions {
    /// Regularization of the estimate before the rank-preserving map.
    pub delta: f64,
    /// Left-multiply the map by a fresh Haar-random unitary each iteration.
    pub random_v: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            delta: DEFAULT_REGULARIZATION,
            random_v: false,
        }
    }
}

/// The untransformed base set, orthogonal members measured together.
pub fn base_plan(base: &Povm) -> Result<MeasurementPlan> {
    let measurements = base
        .elements()
        .iter()
        .filter_map(normalize_with_time)
        .collect();
    MeasurementPlan::grouped_by_orthogonality(measurements)
}

fn basis_plan(vectors: impl IntoIterator<Item = Vec<Complex64>>) -> MeasurementPlan {
    let measurements: Vec<TimedMeasurement> = vectors
        .into_iter()
        .map(|v| TimedMeasurement::unit(PovmElement::projector(&v)))
        .collect();
    let group = (0..measurements.len()).collect();
    MeasurementPlan {
        measurements,
        groups: vec![group],
    }
}

/// Chooses the next measurements for `protocol` given the current estimate.
///
/// `Eigen` measures the base set rotated into the estimate's eigenframe, so
/// the eigenbasis is one of its bases and the others stay unbiased to it.
pub fn next_plan<R: Rng + ?Sized>(
    protocol: Protocol,
    estimate: &DensityMatrix,
    base: &Povm,
    opts: &PlanOptions,
    rng: &mut R,
) -> Result<MeasurementPlan> {
    let dim = estimate.dim();
    if base.dim() != dim {
        return Err(Error::DimensionMismatch(base.dim(), dim));
    }
    match protocol {
        Protocol::Random => {
            let u = random_unitary_haar(dim, rng);
            Ok(basis_plan((0..dim).map(|k| u.column(k))))
        }
        Protocol::Eigen => {
            let eig = hermitian_eig(estimate.matrix())?;
            let rotated = base
                .elements()
                .iter()
                .map(|m| PovmElement::new(eig.eigenvectors.sandwich(m.matrix()).hermitian_part()))
                .collect::<Result<Vec<_>>>()?;
            MeasurementPlan::grouped_by_orthogonality(
                rotated.iter().filter_map(normalize_with_time).collect(),
            )
        }
        Protocol::RankpNc | Protocol::RankpB | Protocol::RankpM => {
            let mut op = rank_preserving_map(estimate, opts.delta)?;
            if opts.random_v {
                op = apply_unitary_freedom(&op, &random_unitary_haar(dim, rng))?;
            }
            let transformed = base
                .elements()
                .iter()
                .map(|m| transform_measurement(&op, m))
                .collect::<Result<Vec<_>>>()?;
            match protocol {
                Protocol::RankpNc => Ok(MeasurementPlan::singletons(
                    transformed.iter().filter_map(normalize_with_time).collect(),
                )),
                Protocol::RankpB => {
                    let mut plan = MeasurementPlan::empty();
                    for m in transformed.iter().filter_map(normalize_with_time) {
                        plan.append(complement_to_basis(&m, rng));
                    }
                    Ok(plan)
                }
                _ => {
                    let (scaled, extra) = complement_minimal(&transformed)?;
                    Ok(MeasurementPlan::singletons(
                        scaled
                            .iter()
                            .chain(&extra)
                            .filter_map(normalize_with_time)
                            .collect(),
                    ))
                }
            }
        }
    }
}

/// True when every measurement in the plan is a rank-1 projector.
pub fn all_rank_one(plan: &MeasurementPlan) -> bool {
    plan.measurements()
        .iter()
        .all(|m| numeric_rank(m.projector.matrix(), 1e-8) == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::{maximally_mixed, mub_qubit, mub_qubit_vectors, random_bures_mixed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_state(a: f64, b: f64) -> DensityMatrix {
        DensityMatrix::new(CMatrix::from_real_diagonal(&[a, b])).unwrap()
    }

    #[test]
    fn mixed_estimate_needs_no_transformation() {
        let op = rank_preserving_map(&maximally_mixed(2), 0.0).unwrap();
        assert!(op.lmap().max_abs_diff(&CMatrix::identity(2)) < 1e-15);
        let mub = mub_qubit();
        let m = &mub.elements()[2];
        let new = transform_measurement(&op, m).unwrap();
        assert!(new.matrix().max_abs_diff(m.matrix()) < 1e-15);
    }

    #[test]
    fn diagonal_estimate_map() {
        let rho = diag_state(0.9, 0.1);
        let op = rank_preserving_map(&rho, 0.0).unwrap();
        let expected = CMatrix::from_real_diagonal(&[1.0 / 1.8f64.sqrt(), 1.0 / 0.2f64.sqrt()]);
        assert!(op.lmap().max_abs_diff(&expected) < 1e-12);
        assert!((op.lmap()[(0, 0)].re - 0.74536).abs() < 1e-5);
        assert!((op.lmap()[(1, 1)].re - 2.23607).abs() < 1e-5);
        let image = op.apply_to_state(rho.matrix());
        assert!(image.max_abs_diff(&CMatrix::from_real_diagonal(&[0.5, 0.5])) < 1e-12);

        let mub = mub_qubit();
        let d = &mub.elements()[2];
        let new = transform_measurement(&op, d).unwrap();
        let off = 0.5 / 0.36f64.sqrt();
        let expected = CMatrix::from_fn(2, |i, j| {
            Complex64::new(
                match (i, j) {
                    (0, 0) => 0.5 / 1.8,
                    (1, 1) => 0.5 / 0.2,
                    _ => off,
                },
                0.0,
            )
        });
        assert!(new.matrix().max_abs_diff(&expected) < 1e-12);
        assert!((new.weight() - 2.7778).abs() < 1e-4);
        assert!((new.matrix().trace_product(rho.matrix()).re - 0.5).abs() < 1e-12);

        let timed = normalize_with_time(&new).unwrap();
        assert!((timed.time_weight - new.weight()).abs() < 1e-15);
        assert!((timed.projector.weight() - 1.0).abs() < 1e-12);
        assert!(timed.operator().max_abs_diff(new.matrix()) < 1e-12);
    }

    #[test]
    fn rotated_estimate_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_unitary_haar(2, &mut rng);
        let rho =
            DensityMatrix::new(w.sandwich(&CMatrix::from_real_diagonal(&[0.7, 0.3]))).unwrap();
        let op = rank_preserving_map(&rho, 0.0).unwrap();
        let image = op.apply_to_state(rho.matrix());
        assert!(image.max_abs_diff(maximally_mixed(2).matrix()) < 1e-12);
    }

    #[test]
    fn unitary_freedom() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rho = random_bures_mixed(2, &mut rng);
        let op = rank_preserving_map(&rho, 1e-4).unwrap();
        let same = apply_unitary_freedom(&op, &CMatrix::identity(2)).unwrap();
        assert_eq!(same.lmap(), op.lmap());
        for _ in 0..20 {
            let v = random_unitary_haar(2, &mut rng);
            let rotated = apply_unitary_freedom(&op, &v).unwrap();
            let image = rotated.apply_to_state(rotated.source().matrix());
            assert!(image.max_abs_diff(maximally_mixed(2).matrix()) < 1e-9);
            for m in mub_qubit().elements() {
                let new = transform_measurement(&rotated, m).unwrap();
                let p = new.matrix().trace_product(rotated.source().matrix()).re;
                assert!((p - 0.5).abs() < 1e-9);
            }
        }
        let not_unitary = CMatrix::identity(2).scale(2.0);
        assert!(matches!(
            apply_unitary_freedom(&op, &not_unitary),
            Err(Error::NotUnitary(_))
        ));
    }

    #[test]
    fn untransformed_element_has_unit_time() {
        let t = normalize_with_time(&mub_qubit().elements()[4]).unwrap();
        assert!((t.time_weight - 1.0).abs() < 1e-15);
        assert!(
            normalize_with_time(&PovmElement::scaled_projector(&mub_qubit_vectors()[0], 0.0))
                .is_none()
        );
    }

    #[test]
    fn basis_completion() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = TimedMeasurement::unit(mub_qubit().elements()[0].clone());
        let plan = complement_to_basis(&h, &mut rng);
        assert_eq!(plan.groups(), &[vec![0, 1]]);
        assert!(
            plan.measurements()[0]
                .projector
                .matrix()
                .max_abs_diff(h.projector.matrix())
                < 1e-15
        );
        let v = CMatrix::from_real_diagonal(&[0.0, 1.0]);
        assert!(plan.measurements()[1].projector.matrix().max_abs_diff(&v) < 1e-15);

        for dim in [2, 3] {
            for _ in 0..100 {
                let psi = random_haar_vector(dim, &mut rng);
                let m = TimedMeasurement {
                    projector: PovmElement::projector(&psi),
                    time_weight: 3.5,
                };
                let plan = complement_to_basis(&m, &mut rng);
                assert_eq!(plan.measurements().len(), dim);
                assert_eq!(plan.groups().len(), 1);
                let sum = plan
                    .measurements()
                    .iter()
                    .fold(CMatrix::zeros(dim), |acc, t| &acc + t.projector.matrix());
                assert!(sum.max_abs_diff(&CMatrix::identity(dim)) < 1e-9);
                assert!(plan.measurements().iter().all(|t| t.time_weight == 3.5));
            }
        }
    }

    #[test]
    fn minimal_completion_of_untransformed_mub() {
        let (scaled, extra) = complement_minimal(mub_qubit().elements()).unwrap();
        for (s, m) in scaled.iter().zip(mub_qubit().elements()) {
            assert!(s.matrix().max_abs_diff(&m.matrix().scale(1.0 / 3.0)) < 1e-15);
        }
        assert_eq!(extra.len(), 2);
        assert!(extra.iter().all(|e| e.weight() < 1e-15));
    }

    #[test]
    fn minimal_completion_of_synthetic_sum() {
        let set = vec![
            PovmElement::new(CMatrix::from_real_diagonal(&[2.0, 0.0])).unwrap(),
            PovmElement::new(CMatrix::from_real_diagonal(&[0.0, 1.0])).unwrap(),
        ];
        let (scaled, extra) = complement_minimal(&set).unwrap();
        assert!(
            scaled[0]
                .matrix()
                .max_abs_diff(&CMatrix::from_real_diagonal(&[1.0, 0.0]))
                < 1e-15
        );
        let weights: Vec<f64> = extra.iter().map(|e| e.weight()).collect();
        assert!(weights[0].abs() < 1e-15);
        assert!((weights[1] - 0.5).abs() < 1e-15);
        assert!(
            extra[1]
                .matrix()
                .max_abs_diff(&CMatrix::from_real_diagonal(&[0.0, 0.5]))
                < 1e-15
        );
        let total = &sum_elements(&scaled) + &sum_elements(&extra);
        assert!(total.max_abs_diff(&CMatrix::identity(2)) < 1e-12);
    }

    #[test]
    fn eigen_plan_on_diagonal_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plan = next_plan(
            Protocol::Eigen,
            &diag_state(0.9, 0.1),
            &mub_qubit(),
            &PlanOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(plan.groups().len(), 3);
        let eigenbasis: Vec<CMatrix> = plan.groups()[0]
            .iter()
            .map(|&i| plan.measurements()[i].projector.matrix().clone())
            .collect();
        let mut diagonals = eigenbasis.clone();
        diagonals.sort_by(|a, b| b[(0, 0)].re.total_cmp(&a[(0, 0)].re));
        assert!(diagonals[0].max_abs_diff(&CMatrix::from_real_diagonal(&[1.0, 0.0])) < 1e-15);
        assert!(diagonals[1].max_abs_diff(&CMatrix::from_real_diagonal(&[0.0, 1.0])) < 1e-15);
        for group in &plan.groups()[1..] {
            for &i in group {
                let m = plan.measurements()[i].projector.matrix();
                for e in &eigenbasis {
                    assert!((e.trace_product(m).re - 0.5).abs() < 1e-12);
                }
            }
        }

        // Degenerate estimate: computational basis.
        let plan = next_plan(
            Protocol::Eigen,
            &maximally_mixed(2),
            &mub_qubit(),
            &PlanOptions::default(),
            &mut rng,
        )
        .unwrap();
        assert!(
            plan.measurements()[0]
                .projector
                .matrix()
                .max_abs_diff(&CMatrix::from_real_diagonal(&[1.0, 0.0]))
                < 1e-15
        );
    }

    #[test]
    fn rankp_nc_plan_on_mixed_estimate_is_the_base_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let opts = PlanOptions {
            delta: 0.0,
            random_v: false,
        };
        let plan = next_plan(
            Protocol::RankpNc,
            &maximally_mixed(2),
            &mub_qubit(),
            &opts,
            &mut rng,
        )
        .unwrap();
        assert_eq!(plan.measurements().len(), 6);
        assert_eq!(plan.groups().len(), 6);
        for (t, m) in plan.measurements().iter().zip(mub_qubit().elements()) {
            assert!((t.time_weight - 1.0).abs() < 1e-15);
            assert!(t.projector.matrix().max_abs_diff(m.matrix()) < 1e-15);
        }
    }

    #[test]
    fn base_plan_pairs_orthogonal_mub_vectors() {
        let plan = base_plan(&mub_qubit()).unwrap();
        assert_eq!(plan.groups(), &[vec![0, 1], vec![2, 3], vec![4, 5]]);
        assert_eq!(plan.total_exposure_weight(), 3.0);
    }

    #[test]
    fn plan_rejects_non_orthogonal_groups() {
        let mub = mub_qubit();
        let ms = vec![
            TimedMeasurement::unit(mub.elements()[0].clone()),
            TimedMeasurement::unit(mub.elements()[2].clone()),
        ];
        assert!(MeasurementPlan::new(ms, vec![vec![0, 1]]).is_err());
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in Protocol::ALL {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
        }
        assert!("rankp".parse::<Protocol>().is_err());
    }
}
