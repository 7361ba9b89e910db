//! States, measurement operators, state metrics and random-state ensembles.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eig, inner, normalize, CMatrix, HERMITIAN_TOL, PSD_CLAMP};

/// Trace tolerance for density matrices.
pub const TRACE_TOL: f64 = 1e-10;

/// Tolerance on `sum M = 1` for a POVM to count as complete.
pub const COMPLETENESS_TOL: f64 = 1e-9;

fn hermitian_tolerance(m: &CMatrix) -> f64 {
    HERMITIAN_TOL * m.max_abs().max(1.0)
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    /// Validates `matrix` as a quantum state.
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let tolerance = hermitian_tolerance(&matrix);
        let deviation = matrix.hermitian_deviation();
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        let trace = matrix.trace().re;
        if (trace - 1.0).abs() > TRACE_TOL {
            return Err(Error::InvalidTrace(trace));
        }
        let min = hermitian_eig(&matrix)?.eigenvalues[0];
        if min < -PSD_CLAMP {
            return Err(Error::NotPsd(min));
        }
        Ok(Self {
            matrix: matrix.hermitian_part(),
        })
    }

    /// Hermitizes and rescales `matrix` to unit trace before validating it.
    pub fn from_unnormalized(matrix: &CMatrix) -> Result<Self> {
        let h = matrix.hermitian_part();
        let trace = h.trace().re;
        if !(trace > 0.0 && trace.is_finite()) {
            return Err(Error::InvalidTrace(trace));
        }
        Self::new(h.scale(1.0 / trace))
    }

    /// `|psi><psi|` for a (not necessarily normalized) vector.
    pub fn pure(psi: &[Complex64]) -> Self {
        let mut v = psi.to_vec();
        normalize(&mut v);
        Self {
            matrix: CMatrix::outer(&v),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.trace_product(&self.matrix).re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eig(&self.matrix)
            .expect("density matrices are Hermitian")
            .eigenvalues
    }

    /// Bloch vector `(Tr rho X, Tr rho Y, Tr rho Z)`; qubits only.
    pub fn bloch_vector(&self) -> [f64; 3] {
        bloch_components(&self.matrix)
    }
}

/// A positive semidefinite measurement operator with weight `Tr M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PovmElement {
    matrix: CMatrix,
    weight: f64,
}

impl PovmElement {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        let tolerance = hermitian_tolerance(&matrix);
        let deviation = matrix.hermitian_deviation();
        if deviation > tolerance {
            return Err(Error::NotHermitian {
                deviation,
                tolerance,
            });
        }
        let h = matrix.hermitian_part();
        let min = hermitian_eig(&h)?.eigenvalues[0];
        if min < -PSD_CLAMP * h.max_abs().max(1.0) {
            return Err(Error::NotPsd(min));
        }
        Ok(Self::from_hermitian(h))
    }

    fn from_hermitian(matrix: CMatrix) -> Self {
        let weight = matrix.trace().re.max(0.0);
        Self { matrix, weight }
    }

    /// Rank-1 projector onto the normalized `psi`.
    pub fn projector(psi: &[Complex64]) -> Self {
        let mut v = psi.to_vec();
        normalize(&mut v);
        Self::from_hermitian(CMatrix::outer(&v))
    }

    /// `scale * |psi><psi|` with `psi` normalized.
    pub fn scaled_projector(psi: &[Complex64], scale: f64) -> Self {
        Self::projector(psi).scale(scale)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// `Tr M`.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    /// Zero-weight elements never fire.
    pub fn is_inert(&self) -> bool {
        self.weight <= 1e-300
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_hermitian(self.matrix.scale(s))
    }

    pub fn bloch_vector(&self) -> [f64; 3] {
        bloch_components(&self.matrix)
    }
}

fn bloch_components(m: &CMatrix) -> [f64; 3] {
    assert_eq!(m.dim(), 2, "Bloch vectors are defined for qubits");
    [
        2.0 * m[(0, 1)].re,
        -2.0 * m[(0, 1)].im,
        (m[(0, 0)] - m[(1, 1)]).re,
    ]
}

/// An ordered set of measurement operators.
#[derive(Debug, Clone, PartialEq)]
pub struct Povm {
    elements: Vec<PovmElement>,
    complete: bool,
}

impl Povm {
    /// Collects elements and flags the set complete when they sum to the identity.
    pub fn new(elements: Vec<PovmElement>) -> Result<Self> {
        let first = elements
            .first()
            .ok_or_else(|| Error::InvalidParameter("empty POVM".into()))?;
        let dim = first.dim();
        if let Some(bad) = elements.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch(dim, bad.dim()));
        }
        let complete =
            sum_elements(&elements).max_abs_diff(&CMatrix::identity(dim)) <= COMPLETENESS_TOL;
        Ok(Self { elements, complete })
    }

    pub fn elements(&self) -> &[PovmElement] {
        &self.elements
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn sum(&self) -> CMatrix {
        sum_elements(&self.elements)
    }
}

pub fn sum_elements(elements: &[PovmElement]) -> CMatrix {
    let dim = elements[0].dim();
    elements
        .iter()
        .fold(CMatrix::zeros(dim), |acc, e| &acc + e.matrix())
}

/// Born rule `Tr(M rho)`, clamped to `[0, Tr M]`.
pub fn born_probability(m: &PovmElement, rho: &DensityMatrix) -> Result<f64> {
    if m.dim() != rho.dim() {
        return Err(Error::DimensionMismatch(m.dim(), rho.dim()));
    }
    Ok(m.matrix()
        .trace_product(rho.matrix())
        .re
        .clamp(0.0, m.weight()))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2`.
///
/// Qubits use `Tr(rho sigma) + 2 sqrt(det rho det sigma)`, which stays
/// accurate for nearly pure states; other dimensions go through matrix roots.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    if rho.matrix() == sigma.matrix() {
        return Ok(1.0);
    }
    if rho.dim() == 2 {
        let overlap = rho.matrix().trace_product(sigma.matrix()).re;
        // Pure inputs carry determinants of order 1e-17 from round-off.
        let det = |m: &CMatrix| {
            let d = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]).re;
            if d > 1e-15 {
                d
            } else {
                0.0
            }
        };
        let f = overlap + 2.0 * (det(rho.matrix()) * det(sigma.matrix())).sqrt();
        return Ok(f.clamp(0.0, 1.0));
    }
    fidelity_by_roots(rho, sigma)
}

/// Dimension-generic fidelity through `sqrt(rho)`.
///
/// Eigenvalues below `ROOT_CUTOFF` times the largest are round-off from
/// rank-deficient inputs and are zeroed before taking square roots.
pub fn fidelity_by_roots(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    const ROOT_CUTOFF: f64 = 1e-13;
    if rho.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(rho.dim(), sigma.dim()));
    }
    let root_of = |eigenvalues: &[f64]| {
        let max = eigenvalues.iter().copied().fold(0.0, f64::max);
        move |l: f64| if l > ROOT_CUTOFF * max { l.sqrt() } else { 0.0 }
    };
    let eig = hermitian_eig(rho.matrix())?;
    let root = eig.map_eigenvalues(root_of(&eig.eigenvalues));
    let inner_eig = hermitian_eig(&root.sandwich(sigma.matrix()).hermitian_part())?;
    let t: f64 = inner_eig
        .eigenvalues
        .iter()
        .map(|&l| root_of(&inner_eig.eigenvalues)(l))
        .sum();
    Ok((t * t).clamp(0.0, 1.0))
}

/// Squared Bures distance `2 - 2 sqrt(F)`.
pub fn bures_sq(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    let f = fidelity(rho, sigma)?;
    Ok((2.0 - 2.0 * f.sqrt()).max(0.0))
}

/// `1_D / D`.
pub fn maximally_mixed(dim: usize) -> DensityMatrix {
    assert!(dim >= 1, "dimension must be positive");
    DensityMatrix {
        matrix: CMatrix::identity(dim).scale(1.0 / dim as f64),
    }
}

/// Polarization qubit vectors in the order H, V, D, A, R, L.
pub fn mub_qubit_vectors() -> [[Complex64; 2]; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re = |x: f64| Complex64::new(x, 0.0);
    let im = |x: f64| Complex64::new(0.0, x);
    [
        [re(1.0), re(0.0)],
        [re(0.0), re(1.0)],
        [re(s), re(s)],
        [re(s), re(-s)],
        [re(s), im(s)],
        [re(s), im(-s)],
    ]
}

/// The six qubit MUB projectors `|H>, |V>, |D>, |A>, |R>, |L>`; they sum to `3 * 1_2`.
pub fn mub_qubit() -> Povm {
    let elements = mub_qubit_vectors()
        .iter()
        .map(|v| PovmElement::projector(v))
        .collect();
    Povm::new(elements).expect("MUB elements are valid")
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// Haar-random unit vector: a normalized complex Gaussian vector.
pub fn random_haar_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
    normalize(&mut v);
    v
}

/// Haar-random pure state.
pub fn random_pure_haar<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    assert!(dim >= 2, "dimension must be at least 2");
    DensityMatrix::pure(&random_haar_vector(dim, rng))
}

/// Square matrix of independent standard complex Gaussians.
pub fn ginibre<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(dim, |_, _| complex_gaussian(rng))
}

/// Haar-random unitary: Gram-Schmidt on Ginibre columns, which is the QR
/// factorization with a positive diagonal in `R`.
pub fn random_unitary_haar<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = ginibre(dim, rng);
    let columns: Vec<Vec<Complex64>> = (0..dim).map(|k| g.column(k)).collect();
    CMatrix::from_columns(&gram_schmidt(columns))
}

/// Modified Gram-Schmidt; input columns must be linearly independent.
pub fn gram_schmidt(columns: Vec<Vec<Complex64>>) -> Vec<Vec<Complex64>> {
    let mut basis: Vec<Vec<Complex64>> = Vec::with_capacity(columns.len());
    for mut v in columns {
        for _ in 0..2 {
            for b in &basis {
                let proj = inner(b, &v);
                for (x, y) in v.iter_mut().zip(b) {
                    *x -= proj * y;
                }
            }
        }
        normalize(&mut v);
        basis.push(v);
    }
    basis
}

/// Bures-ensemble mixed state `(1 + W) G G^dagger (1 + W)^dagger`, normalized,
/// with `G` Ginibre and `W` Haar-random unitary.
pub fn random_bures_mixed<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    assert!(dim >= 2, "dimension must be at least 2");
    let w = random_unitary_haar(dim, rng);
    let g = ginibre(dim, rng);
    let a = &(&CMatrix::identity(dim) + &w) * &g;
    let unnormalized = &a * &a.adjoint();
    DensityMatrix::from_unnormalized(&unnormalized).expect("Bures sample has positive trace")
}
