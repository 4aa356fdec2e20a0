//! Shared domain types: system parameters, qubit states in both the
//! density-matrix and Bloch pictures, piecewise-constant control grids and
//! the terminal-state objectives.

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;

use crate::error::{GrapeError, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;

/// Absolute tolerance for Hermiticity, unit trace and positivity checks.
pub const VALIDATION_TOL: f64 = 1e-9;

pub(crate) const fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn sigma_x() -> CMatrix {
    DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
}

pub fn sigma_y() -> CMatrix {
    DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(0., -1.), c(0., 1.), c(0., 0.)])
}

pub fn sigma_z() -> CMatrix {
    DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
}

pub fn paulis() -> [CMatrix; 3] {
    [sigma_x(), sigma_y(), sigma_z()]
}

/// Physical constants of the driven, damped qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Transition frequency.
    pub omega: f64,
    /// Dipole coupling of the coherent control.
    pub mu: f64,
    /// Coupling strength to the environment.
    pub gamma: f64,
}

impl SystemParams {
    pub fn new(omega: f64, mu: f64, gamma: f64) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(GrapeError::InvalidParams(format!("omega must be > 0, got {omega}")));
        }
        if !(mu.is_finite() && mu > 0.0) {
            return Err(GrapeError::InvalidParams(format!("mu must be > 0, got {mu}")));
        }
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(GrapeError::InvalidParams(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(Self { omega, mu, gamma })
    }

    /// omega = 1, mu = 0.1, gamma = 0.01: the parameter set of the
    /// state-transfer experiments.
    pub fn reference() -> Self {
        Self { omega: 1.0, mu: 0.1, gamma: 0.01 }
    }
}

/// A qubit state as a point of the Bloch ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochVector(pub Vector3<f64>);

impl BlochVector {
    pub fn new(r1: f64, r2: f64, r3: f64) -> Self {
        Self(Vector3::new(r1, r2, r3))
    }

    pub fn zero() -> Self {
        Self(Vector3::zeros())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        (self.0 - other.0).norm()
    }
}

impl From<Vector3<f64>> for BlochVector {
    fn from(v: Vector3<f64>) -> Self {
        Self(v)
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(CMatrix);

impl DensityMatrix {
    /// Validates Hermiticity, trace and positivity to [`VALIDATION_TOL`].
    pub fn new(m: CMatrix) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(GrapeError::InvalidState(format!(
                "expected a non-empty square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(GrapeError::InvalidState("non-finite entry".into()));
        }
        let herm_err = hermiticity_error(&m);
        if herm_err > VALIDATION_TOL {
            return Err(GrapeError::InvalidState(format!(
                "not Hermitian (max |rho - rho^dagger| = {herm_err:.3e})"
            )));
        }
        let tr = m.trace();
        if (tr.re - 1.0).abs() > VALIDATION_TOL || tr.im.abs() > VALIDATION_TOL {
            return Err(GrapeError::InvalidState(format!("trace is {tr}, expected 1")));
        }
        let min_eig = hermitian_eigenvalues(&m).iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -VALIDATION_TOL {
            return Err(GrapeError::InvalidState(format!(
                "not positive semidefinite (min eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self(m))
    }

    /// Symmetrizes `(m + m^dagger)/2` before validating; used on propagated
    /// states that accumulate tiny anti-Hermitian round-off.
    pub fn hermitized(m: CMatrix) -> Result<Self> {
        let h = (&m + m.adjoint()) * c(0.5, 0.0);
        Self::new(h)
    }

    pub fn diagonal(probs: &[f64]) -> Result<Self> {
        let n = probs.len();
        let mut m = CMatrix::zeros(n, n);
        for (i, p) in probs.iter().enumerate() {
            m[(i, i)] = c(*p, 0.0);
        }
        Self::new(m)
    }

    pub fn pure(amplitudes: &[C64]) -> Result<Self> {
        let v = nalgebra::DVector::from_column_slice(amplitudes);
        let nrm = v.norm();
        if nrm == 0.0 {
            return Err(GrapeError::InvalidState("zero state vector".into()));
        }
        let v = v.unscale(nrm);
        Self::new(&v * v.adjoint())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self(CMatrix::identity(n, n) * c(1.0 / n as f64, 0.0))
    }
}

pub(crate) fn hermiticity_error(m: &CMatrix) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Eigenvalues of a Hermitian matrix (the anti-Hermitian part is ignored).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    h.symmetric_eigenvalues().iter().cloned().collect()
}

/// Square root of a Hermitian positive semidefinite matrix; negative
/// round-off eigenvalues are clamped to zero.
pub fn hermitian_sqrt(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()) * c(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let mut d = CMatrix::zeros(m.nrows(), m.ncols());
    for (i, l) in eig.eigenvalues.iter().enumerate() {
        d[(i, i)] = c(l.max(0.0).sqrt(), 0.0);
    }
    &eig.eigenvectors * d * eig.eigenvectors.adjoint()
}

/// `r_i = Tr(rho sigma_i)`.
pub fn bloch_from_density(rho: &DensityMatrix) -> Result<BlochVector> {
    if rho.dim() != 2 {
        return Err(GrapeError::DimensionMismatch { expected: 2, got: rho.dim() });
    }
    let m = rho.matrix();
    let herm_err = hermiticity_error(m);
    if herm_err > VALIDATION_TOL {
        return Err(GrapeError::InvalidState(format!("not Hermitian ({herm_err:.3e})")));
    }
    let [sx, sy, sz] = paulis();
    let r = |s: &CMatrix| (m * s).trace().re;
    Ok(BlochVector::new(r(&sx), r(&sy), r(&sz)))
}

/// `rho = (I + r . sigma)/2`; rejects vectors outside the unit ball.
pub fn density_from_bloch(r: &BlochVector) -> Result<DensityMatrix> {
    let nrm = r.norm();
    if !nrm.is_finite() || nrm > 1.0 + VALIDATION_TOL {
        return Err(GrapeError::InvalidState(format!("Bloch vector norm {nrm} exceeds 1")));
    }
    Ok(DensityMatrix(bloch_matrix(r)))
}

/// The matrix `(I + r . sigma)/2` without the ball check. Trace is exactly
/// one and the result is exactly Hermitian by construction.
pub fn bloch_matrix(r: &BlochVector) -> CMatrix {
    let [x, y, z] = [r.0[0], r.0[1], r.0[2]];
    DMatrix::from_row_slice(
        2,
        2,
        &[c(0.5 * (1.0 + z), 0.0), c(0.5 * x, -0.5 * y), c(0.5 * x, 0.5 * y), c(0.5 * (1.0 - z), 0.0)],
    )
}

/// Breakpoints plus per-segment coherent values `u` and incoherent
/// parameters `w`, with the incoherent control `n = w^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    times: Vec<f64>,
    u: Vec<f64>,
    w: Vec<f64>,
}

impl ControlGrid {
    pub fn new(times: Vec<f64>, u: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(GrapeError::InvalidGrid(format!(
                "need at least one segment (got {} breakpoints)",
                times.len()
            )));
        }
        let m = times.len() - 1;
        if u.len() != m || w.len() != m {
            return Err(GrapeError::InvalidGrid(format!(
                "expected {m} control values, got u: {}, w: {}",
                u.len(),
                w.len()
            )));
        }
        if times.iter().chain(&u).chain(&w).any(|x| !x.is_finite()) {
            return Err(GrapeError::InvalidGrid("non-finite entry".into()));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(GrapeError::InvalidGrid("breakpoints must be strictly increasing".into()));
        }
        Ok(Self { times, u, w })
    }

    /// `m` equal segments on `[0, total_time]` with zero controls.
    pub fn uniform(total_time: f64, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(GrapeError::InvalidGrid("segment count must be positive".into()));
        }
        if !(total_time.is_finite() && total_time > 0.0) {
            return Err(GrapeError::InvalidGrid(format!("total time must be > 0, got {total_time}")));
        }
        let times = uniform_breakpoints(total_time, m);
        Self::new(times, vec![0.0; m], vec![0.0; m])
    }

    pub fn with_controls(&self, u: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        Self::new(self.times.clone(), u, w)
    }

    /// Rebuilds the grid from the flat `[u..., w...]` layout used by the
    /// optimizer.
    pub fn with_flat_controls(&self, x: &[f64]) -> Result<Self> {
        let m = self.segments();
        if x.len() != 2 * m {
            return Err(GrapeError::DimensionMismatch { expected: 2 * m, got: x.len() });
        }
        self.with_controls(x[..m].to_vec(), x[m..].to_vec())
    }

    pub fn flat_controls(&self) -> Vec<f64> {
        self.u.iter().chain(&self.w).cloned().collect()
    }

    pub fn segments(&self) -> usize {
        self.u.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn n(&self, k: usize) -> f64 {
        self.w[k] * self.w[k]
    }

    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    pub fn total_time(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }
}

pub(crate) fn uniform_breakpoints(total_time: f64, m: usize) -> Vec<f64> {
    (0..=m).map(|k| total_time * k as f64 / m as f64).collect()
}

/// Terminal-state objectives.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// `Tr(rho_T O)`, to be maximized.
    ObservableExpectation(CMatrix),
    /// Hilbert-Schmidt `Tr(rho_T - rho_target)^2`, to be minimized.
    StateTransfer(DensityMatrix),
    /// `(Tr sqrt(sqrt(rho_T) rho_target sqrt(rho_T)))^2 in [0, 1]`, to be maximized.
    UhlmannJozsa(DensityMatrix),
}

impl Objective {
    pub fn observable(o: CMatrix) -> Result<Self> {
        if !o.is_square() {
            return Err(GrapeError::InvalidState("observable must be square".into()));
        }
        let e = hermiticity_error(&o);
        if e > VALIDATION_TOL {
            return Err(GrapeError::InvalidState(format!("observable not Hermitian ({e:.3e})")));
        }
        Ok(Self::ObservableExpectation(o))
    }

    pub fn dim(&self) -> usize {
        match self {
            Objective::ObservableExpectation(o) => o.nrows(),
            Objective::StateTransfer(t) | Objective::UhlmannJozsa(t) => t.dim(),
        }
    }

    fn check_dim(&self, rho: &CMatrix) -> Result<()> {
        if rho.nrows() != self.dim() {
            return Err(GrapeError::DimensionMismatch { expected: self.dim(), got: rho.nrows() });
        }
        Ok(())
    }

    /// The objective value as defined (not sign-adjusted).
    pub fn evaluate(&self, rho_t: &DensityMatrix) -> Result<f64> {
        self.evaluate_matrix(rho_t.matrix())
    }

    pub(crate) fn evaluate_matrix(&self, rho: &CMatrix) -> Result<f64> {
        self.check_dim(rho)?;
        Ok(match self {
            Objective::ObservableExpectation(o) => (rho * o).trace().re,
            Objective::StateTransfer(target) => {
                let d = rho - target.matrix();
                (&d * &d).trace().re
            }
            Objective::UhlmannJozsa(target) => uhlmann_jozsa(rho, target.matrix()),
        })
    }

    /// Non-negative cost that the optimizer drives to zero:
    /// `lambda_max(O) - Tr(rho O)`, the HS distance, or `1 - fidelity`.
    pub fn cost(&self, rho_t: &DensityMatrix) -> Result<f64> {
        self.cost_matrix(rho_t.matrix())
    }

    pub(crate) fn cost_matrix(&self, rho: &CMatrix) -> Result<f64> {
        let v = self.evaluate_matrix(rho)?;
        Ok(match self {
            Objective::ObservableExpectation(o) => max_eigenvalue(o) - v,
            Objective::StateTransfer(_) => v,
            Objective::UhlmannJozsa(_) => 1.0 - v,
        })
    }

    /// Whether `cost = sign * evaluate + const` has `sign = -1`.
    pub(crate) fn cost_sign(&self) -> f64 {
        match self {
            Objective::StateTransfer(_) => 1.0,
            _ => -1.0,
        }
    }
}

fn max_eigenvalue(o: &CMatrix) -> f64 {
    hermitian_eigenvalues(o).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Uhlmann-Jozsa fidelity for density matrices of any dimension.
pub fn uhlmann_jozsa(rho: &CMatrix, sigma: &CMatrix) -> f64 {
    let s = hermitian_sqrt(rho);
    let inner = &s * sigma * &s;
    let tr: f64 = hermitian_eigenvalues(&inner).iter().map(|l| l.max(0.0).sqrt()).sum();
    (tr * tr).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_mat_close(a: &CMatrix, b: &CMatrix, tol: f64) {
        let d = (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(d <= tol, "matrices differ by {d}:\n{a}\n{b}");
    }

    #[test]
    fn bloch_of_excited_state() {
        let rho = DensityMatrix::diagonal(&[0.0, 1.0]).unwrap();
        let r = bloch_from_density(&rho).unwrap();
        assert_eq!(r, BlochVector::new(0.0, 0.0, -1.0));
    }

    #[test]
    fn bloch_of_mixed_and_plus() {
        let r = bloch_from_density(&DensityMatrix::maximally_mixed(2)).unwrap();
        assert!(r.norm() < 1e-15);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = DensityMatrix::pure(&[c(s, 0.0), c(s, 0.0)]).unwrap();
        let r = bloch_from_density(&plus).unwrap();
        assert!((r.0 - Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn bloch_rejects_wrong_dimension_and_non_hermitian() {
        let rho3 = DensityMatrix::maximally_mixed(3);
        assert!(matches!(bloch_from_density(&rho3), Err(GrapeError::DimensionMismatch { .. })));
        let bad = DensityMatrix(DMatrix::from_row_slice(
            2,
            2,
            &[c(0.5, 0.), c(0.3, 0.), c(0.0, 0.), c(0.5, 0.)],
        ));
        assert!(matches!(bloch_from_density(&bad), Err(GrapeError::InvalidState(_))));
    }

    #[test]
    fn density_examples() {
        let north = density_from_bloch(&BlochVector::new(0., 0., 1.)).unwrap();
        assert_mat_close(north.matrix(), DensityMatrix::diagonal(&[1., 0.]).unwrap().matrix(), 0.0);
        let target = density_from_bloch(&BlochVector::new(0., 0., 0.5)).unwrap();
        assert_mat_close(target.matrix(), DensityMatrix::diagonal(&[0.75, 0.25]).unwrap().matrix(), 0.0);
        let center = density_from_bloch(&BlochVector::zero()).unwrap();
        assert_mat_close(center.matrix(), DensityMatrix::maximally_mixed(2).matrix(), 0.0);
    }

    #[test]
    fn density_rejects_outside_ball() {
        assert!(density_from_bloch(&BlochVector::new(0.8, 0.8, 0.0)).is_err());
    }

    #[test]
    fn density_validation() {
        let not_unit_trace = DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)]);
        assert!(DensityMatrix::new(not_unit_trace).is_err());
        let negative = DMatrix::from_row_slice(2, 2, &[c(1.5, 0.), c(0., 0.), c(0., 0.), c(-0.5, 0.)]);
        assert!(DensityMatrix::new(negative).is_err());
    }

    #[test]
    fn objective_examples() {
        let target = DensityMatrix::diagonal(&[0.75, 0.25]).unwrap();
        let st = Objective::StateTransfer(target.clone());
        assert_eq!(st.evaluate(&target).unwrap(), 0.0);
        let uj = Objective::UhlmannJozsa(target.clone());
        assert!((uj.evaluate(&target).unwrap() - 1.0).abs() < 1e-12);

        let rho_t = DensityMatrix::diagonal(&[0.0, 1.0]).unwrap();
        assert!((st.evaluate(&rho_t).unwrap() - 1.125).abs() < 1e-15);
        let half = 0.5 * (BlochVector::new(0., 0., -1.).0 - BlochVector::new(0., 0., 0.5).0).norm_squared();
        assert!((half - 1.125).abs() < 1e-15);
    }

    #[test]
    fn objective_dimension_mismatch() {
        let st = Objective::StateTransfer(DensityMatrix::maximally_mixed(2));
        assert!(matches!(
            st.evaluate(&DensityMatrix::maximally_mixed(3)),
            Err(GrapeError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn uhlmann_jozsa_matches_qubit_closed_form() {
        let a = density_from_bloch(&BlochVector::new(0.3, -0.2, 0.5)).unwrap();
        let b = density_from_bloch(&BlochVector::new(-0.1, 0.6, 0.2)).unwrap();
        let f = uhlmann_jozsa(a.matrix(), b.matrix());
        let closed = (a.matrix() * b.matrix()).trace().re
            + 2.0 * (a.matrix().determinant().re * b.matrix().determinant().re).sqrt();
        assert!((f - closed).abs() < 1e-12);
    }

    #[test]
    fn observable_cost_is_gap_to_max() {
        let obj = Objective::observable(sigma_z()).unwrap();
        let up = DensityMatrix::diagonal(&[1.0, 0.0]).unwrap();
        assert!(obj.cost(&up).unwrap().abs() < 1e-15);
        let down = DensityMatrix::diagonal(&[0.0, 1.0]).unwrap();
        assert!((obj.cost(&down).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn grid_validation() {
        assert!(ControlGrid::uniform(5.0, 0).is_err());
        assert!(ControlGrid::new(vec![0.0, 1.0, 1.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(ControlGrid::new(vec![0.0, 1.0], vec![0.0; 2], vec![0.0; 1]).is_err());
        let g = ControlGrid::uniform(5.0, 10).unwrap();
        assert_eq!(g.segments(), 10);
        assert!((g.dt(3) - 0.5).abs() < 1e-15);
        let g = g.with_controls(vec![0.0; 10], vec![-2.0; 10]).unwrap();
        assert_eq!(g.n(4), 4.0);
    }
}
