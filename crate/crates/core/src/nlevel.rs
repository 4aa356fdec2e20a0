//! N-level open systems in Liouville space.
//!
//! Density matrices are column-stacked, so `A rho B` becomes
//! `(B^T (x) A) vec(rho)` and `-i[H, .]` becomes `-i (I (x) H - H^T (x) I)`.
//! The generator is
//!
//! ```text
//! L = -i[H0, .] + sum_{i<j} A_ij M_ij + sum_k u_k (-i[V_k, .])
//!     + sum_{i<j} n_ij A_ij (M_ij + M_ji)
//! ```
//!
//! with `M_ij(rho) = 2 |i><j| rho |j><i| - |j><j| rho - rho |j><j|`, the
//! dissipator that moves population from level `j` to level `i`.
//! Levels are indexed from 0.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{GrapeError, Result};
use crate::expm::{expm, expm_frechet};
use crate::gradient::state_derivative_matrix;
use crate::types::{
    hermitian_eigenvalues, hermiticity_error, paulis, sigma_x, CMatrix, ControlGrid, DensityMatrix,
    Objective, SystemParams, C64, VALIDATION_TOL,
};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct NLevelSystem {
    h0: CMatrix,
    controls: Vec<CMatrix>,
    einstein: DMatrix<f64>,
}

impl NLevelSystem {
    /// `einstein[(i, j)]` for `i < j` is `A_ij`; other entries must be zero.
    pub fn new(h0: CMatrix, controls: Vec<CMatrix>, einstein: DMatrix<f64>) -> Result<Self> {
        let n = h0.nrows();
        if n < 2 || !h0.is_square() {
            return Err(GrapeError::InvalidParams("H0 must be square with N >= 2".into()));
        }
        for m in std::iter::once(&h0).chain(controls.iter()) {
            if m.nrows() != n || m.ncols() != n {
                return Err(GrapeError::DimensionMismatch { expected: n, got: m.nrows() });
            }
            let e = hermiticity_error(m);
            if e > VALIDATION_TOL {
                return Err(GrapeError::InvalidParams(format!("operator not Hermitian ({e:.3e})")));
            }
        }
        if einstein.nrows() != n || einstein.ncols() != n {
            return Err(GrapeError::DimensionMismatch { expected: n, got: einstein.nrows() });
        }
        for i in 0..n {
            for j in 0..n {
                let a = einstein[(i, j)];
                if !a.is_finite() || a < 0.0 {
                    return Err(GrapeError::InvalidParams(format!("A[{i},{j}] = {a} must be finite and >= 0")));
                }
                if i >= j && a != 0.0 {
                    return Err(GrapeError::InvalidParams(format!("A[{i},{j}] must be zero (only i < j is used)")));
                }
            }
        }
        Ok(Self { h0, controls, einstein })
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn h0(&self) -> &CMatrix {
        &self.h0
    }

    pub fn controls(&self) -> &[CMatrix] {
        &self.controls
    }

    pub fn einstein(&self, i: usize, j: usize) -> f64 {
        self.einstein[(i, j)]
    }

    /// All pairs `i < j`, in the order incoherent controls are supplied.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let n = self.dim();
        (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
    }
}

/// The qubit with `H0 = omega diag(0, 1)`, `V = mu sigma_x` and `A_12 = gamma / 2`,
/// which reproduces the Bloch-ball generator.
pub fn qubit_system(params: &SystemParams) -> NLevelSystem {
    let h0 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![ZERO, C64::new(params.omega, 0.0)]));
    let v = sigma_x() * C64::new(params.mu, 0.0);
    let a = DMatrix::from_row_slice(2, 2, &[0.0, params.gamma / 2.0, 0.0, 0.0]);
    NLevelSystem::new(h0, vec![v], a).expect("qubit system is valid by construction")
}

/// A generator or propagator acting on column-stacked `N x N` matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Superoperator {
    pub matrix: CMatrix,
    dim: usize,
}

pub fn vectorize(m: &CMatrix) -> nalgebra::DVector<C64> {
    nalgebra::DVector::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &nalgebra::DVector<C64>, n: usize) -> CMatrix {
    DMatrix::from_column_slice(n, n, v.as_slice())
}

impl Superoperator {
    pub fn new(matrix: CMatrix, dim: usize) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(GrapeError::DimensionMismatch { expected: dim * dim, got: matrix.nrows() });
        }
        Ok(Self { matrix, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        unvectorize(&(&self.matrix * vectorize(rho)), self.dim)
    }

    /// `max |vec(I)^dagger L|`, zero for a trace-preserving generator.
    pub fn trace_residual(&self) -> f64 {
        let id = vectorize(&CMatrix::identity(self.dim, self.dim));
        (id.adjoint() * &self.matrix).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `e^{L dt}`.
    pub fn exp(&self, dt: f64) -> Superoperator {
        Superoperator { matrix: expm(&(&self.matrix * C64::new(dt, 0.0))), dim: self.dim }
    }
}

/// `-i[H, .]`.
pub fn commutator_superoperator(h: &CMatrix) -> CMatrix {
    let n = h.nrows();
    let id = CMatrix::identity(n, n);
    (id.kronecker(h) - h.transpose().kronecker(&id)) * C64::new(0.0, -1.0)
}

fn ket_bra(i: usize, j: usize, n: usize) -> CMatrix {
    let mut m = CMatrix::zeros(n, n);
    m[(i, j)] = ONE;
    m
}

pub fn build_dissipator_m(i: usize, j: usize, n: usize) -> Result<Superoperator> {
    if i >= n || j >= n || i == j {
        return Err(GrapeError::IndexOutOfRange { i, j, n });
    }
    let l = ket_bra(i, j, n);
    let pj = ket_bra(j, j, n);
    let id = CMatrix::identity(n, n);
    let jump = l.conjugate().kronecker(&l) * C64::new(2.0, 0.0);
    let m = jump - id.kronecker(&pj) - pj.transpose().kronecker(&id);
    Superoperator::new(m, n)
}

/// Incoherent part `sum n_ij A_ij (M_ij + M_ji)` differentiated in `n_p`.
fn incoherent_direction(sys: &NLevelSystem, p: usize) -> CMatrix {
    let (i, j) = sys.transitions()[p];
    let n = sys.dim();
    let a = sys.einstein(i, j);
    let m = build_dissipator_m(i, j, n).unwrap().matrix + build_dissipator_m(j, i, n).unwrap().matrix;
    m * C64::new(a, 0.0)
}

pub fn build_full_generator(sys: &NLevelSystem, u: &[f64], n: &[f64]) -> Result<Superoperator> {
    let d = sys.dim();
    if u.len() != sys.controls().len() {
        return Err(GrapeError::DimensionMismatch { expected: sys.controls().len(), got: u.len() });
    }
    let pairs = sys.transitions();
    if n.len() != pairs.len() {
        return Err(GrapeError::DimensionMismatch { expected: pairs.len(), got: n.len() });
    }
    let mut l = commutator_superoperator(sys.h0());
    for &(i, j) in &pairs {
        let a = sys.einstein(i, j);
        if a != 0.0 {
            l += build_dissipator_m(i, j, d)?.matrix * C64::new(a, 0.0);
        }
    }
    for (uk, v) in u.iter().zip(sys.controls()) {
        if *uk != 0.0 {
            l += commutator_superoperator(v) * C64::new(*uk, 0.0);
        }
    }
    for (p, &np) in n.iter().enumerate() {
        if np.is_nan() || np < 0.0 {
            return Err(GrapeError::NegativeIncoherentControl(np));
        }
        if np != 0.0 {
            l += incoherent_direction(sys, p) * C64::new(np, 0.0);
        }
    }
    Superoperator::new(l, d)
}

/// Affine Bloch generator `(A, b)` induced by a qubit superoperator:
/// `A_kl = Tr(sigma_k L(sigma_l)) / 2`, `b_k = Tr(sigma_k L(I / 2))`.
pub fn induced_bloch_generator(l: &Superoperator) -> Result<(Matrix3<f64>, Vector3<f64>)> {
    if l.dim() != 2 {
        return Err(GrapeError::DimensionMismatch { expected: 2, got: l.dim() });
    }
    let s = paulis();
    let half_id = CMatrix::identity(2, 2) * C64::new(0.5, 0.0);
    let a = Matrix3::from_fn(|k, j| (&s[k] * l.apply(&s[j])).trace().re / 2.0);
    let b = Vector3::from_fn(|k, _| (&s[k] * l.apply(&half_id)).trace().re);
    Ok((a, b))
}

/// Choi matrix `sum_ij |i><j| (x) Phi(|i><j|)` of a propagator.
pub fn choi_matrix(phi: &Superoperator) -> CMatrix {
    let n = phi.dim();
    let mut c = CMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let out = phi.apply(&ket_bra(i, j, n));
            c.view_mut((i * n, j * n), (n, n)).copy_from(&out);
        }
    }
    c
}

pub fn choi_min_eigenvalue(phi: &Superoperator) -> f64 {
    let c = choi_matrix(phi);
    let h = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    hermitian_eigenvalues(&h).into_iter().fold(f64::INFINITY, f64::min)
}

/// Piecewise-constant controls for an N-level system: `u[m][k]` for the
/// coherent operators and `w[m][p]` for the transitions, `n = w^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NLevelGrid {
    times: Vec<f64>,
    u: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
}

impl NLevelGrid {
    pub fn new(times: Vec<f64>, u: Vec<Vec<f64>>, w: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() {
            return Err(GrapeError::InvalidGrid("need at least one breakpoint".into()));
        }
        let m = times.len() - 1;
        if u.len() != m || w.len() != m {
            return Err(GrapeError::InvalidGrid(format!(
                "{} breakpoints need {m} control rows, got {} and {}",
                times.len(),
                u.len(),
                w.len()
            )));
        }
        if times.iter().chain(u.iter().flatten()).chain(w.iter().flatten()).any(|x| !x.is_finite()) {
            return Err(GrapeError::InvalidGrid("non-finite value".into()));
        }
        if times.windows(2).any(|p| p[1] <= p[0]) {
            return Err(GrapeError::InvalidGrid("breakpoints must increase strictly".into()));
        }
        Ok(Self { times, u, w })
    }

    /// The qubit grid with one coherent and one incoherent control.
    pub fn from_qubit(grid: &ControlGrid) -> Self {
        Self {
            times: grid.times().to_vec(),
            u: grid.u().iter().map(|&x| vec![x]).collect(),
            w: grid.w().iter().map(|&x| vec![x]).collect(),
        }
    }

    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dt(&self, m: usize) -> f64 {
        self.times[m + 1] - self.times[m]
    }

    pub fn u(&self) -> &[Vec<f64>] {
        &self.u
    }

    pub fn w(&self) -> &[Vec<f64>] {
        &self.w
    }

    pub fn n(&self, m: usize) -> Vec<f64> {
        self.w[m].iter().map(|x| x * x).collect()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// All `u` rows, then all `w` rows; the layout of `NLevelGradient::flat`.
    pub fn flat_controls(&self) -> Vec<f64> {
        self.u.iter().flatten().chain(self.w.iter().flatten()).copied().collect()
    }

    pub fn with_flat_controls(&self, x: &[f64]) -> Result<Self> {
        let nu: usize = self.u.iter().map(Vec::len).sum();
        let nw: usize = self.w.iter().map(Vec::len).sum();
        if x.len() != nu + nw {
            return Err(GrapeError::DimensionMismatch { expected: nu + nw, got: x.len() });
        }
        let mut it = x.iter().copied();
        let mut take = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
            rows.iter().map(|r| (&mut it).take(r.len()).collect()).collect()
        };
        let u = take(&self.u);
        let w = take(&self.w);
        Self::new(self.times.clone(), u, w)
    }

    fn check(&self, sys: &NLevelSystem) -> Result<()> {
        let (k, p) = (sys.controls().len(), sys.transitions().len());
        for m in 0..self.segments() {
            if self.u[m].len() != k {
                return Err(GrapeError::DimensionMismatch { expected: k, got: self.u[m].len() });
            }
            if self.w[m].len() != p {
                return Err(GrapeError::DimensionMismatch { expected: p, got: self.w[m].len() });
            }
        }
        Ok(())
    }
}

/// `rho_T = e^{dt_M L^M} ... e^{dt_1 L^1} rho_0`, re-Hermitized and validated.
pub fn propagate_nlevel(rho0: &DensityMatrix, grid: &NLevelGrid, sys: &NLevelSystem) -> Result<DensityMatrix> {
    let rho = propagate_raw(rho0, grid, sys)?;
    DensityMatrix::hermitized(rho)
}

fn propagate_raw(rho0: &DensityMatrix, grid: &NLevelGrid, sys: &NLevelSystem) -> Result<CMatrix> {
    if rho0.dim() != sys.dim() {
        return Err(GrapeError::DimensionMismatch { expected: sys.dim(), got: rho0.dim() });
    }
    grid.check(sys)?;
    let mut v = vectorize(rho0.matrix());
    for m in 0..grid.segments() {
        let l = build_full_generator(sys, &grid.u[m], &grid.n(m))?;
        v = l.exp(grid.dt(m)).matrix * v;
    }
    Ok(unvectorize(&v, sys.dim()))
}

/// How the derivative of each segment's `e^{L dt}` is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NLevelDerivative {
    /// Upper-right block of `exp([[X, E], [0, X]])`.
    #[default]
    BlockExponential,
    /// Trapezoid rule on `dt int_0^1 e^{a L dt} E e^{(1-a) L dt} da`.
    Trapezoid { nodes: usize },
}

/// Cost gradient over `u[m][k]` and `w[m][p]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NLevelGradient {
    pub d_u: Vec<Vec<f64>>,
    pub d_w: Vec<Vec<f64>>,
}

impl NLevelGradient {
    /// All `d_u` rows, then all `d_w` rows.
    pub fn flat(&self) -> Vec<f64> {
        self.d_u.iter().flatten().chain(self.d_w.iter().flatten()).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn frechet(x: &CMatrix, e: &CMatrix, how: NLevelDerivative) -> Result<CMatrix> {
    match how {
        NLevelDerivative::BlockExponential => Ok(expm_frechet(x, e)),
        NLevelDerivative::Trapezoid { nodes } => {
            if nodes < 2 {
                return Err(GrapeError::TooFewNodes(nodes));
            }
            let h = 1.0 / (nodes - 1) as f64;
            let ex: Vec<CMatrix> = (0..nodes).map(|k| expm(&(x * C64::new(k as f64 * h, 0.0)))).collect();
            let mut acc = CMatrix::zeros(x.nrows(), x.ncols());
            for k in 0..nodes {
                let wk = if k == 0 || k == nodes - 1 { 0.5 } else { 1.0 };
                acc += &ex[k] * e * &ex[nodes - 1 - k] * C64::new(wk * h, 0.0);
            }
            Ok(acc)
        }
    }
}

pub fn gradient_nlevel(
    obj: &Objective,
    rho0: &DensityMatrix,
    grid: &NLevelGrid,
    sys: &NLevelSystem,
) -> Result<NLevelGradient> {
    Ok(cost_and_gradient_nlevel(obj, rho0, grid, sys, NLevelDerivative::default())?.1)
}

/// Cost and gradient by a forward sweep and an adjoint backward sweep:
/// `kappa_M = vec(G)`, `kappa_{m-1} = E_m^dagger kappa_m`,
/// `dJ = Re(kappa_m^dagger dE_m vec(rho_{m-1}))`.
pub fn cost_and_gradient_nlevel(
    obj: &Objective,
    rho0: &DensityMatrix,
    grid: &NLevelGrid,
    sys: &NLevelSystem,
    how: NLevelDerivative,
) -> Result<(f64, NLevelGradient)> {
    let d = sys.dim();
    if rho0.dim() != d {
        return Err(GrapeError::DimensionMismatch { expected: d, got: rho0.dim() });
    }
    if obj.dim() != d {
        return Err(GrapeError::DimensionMismatch { expected: d, got: obj.dim() });
    }
    grid.check(sys)?;
    let m_count = grid.segments();

    let mut states = Vec::with_capacity(m_count + 1);
    let mut gens = Vec::with_capacity(m_count);
    let mut props = Vec::with_capacity(m_count);
    let mut v = vectorize(rho0.matrix());
    states.push(v.clone());
    for m in 0..m_count {
        let l = build_full_generator(sys, &grid.u[m], &grid.n(m))?;
        let e = l.exp(grid.dt(m)).matrix;
        v = &e * v;
        states.push(v.clone());
        gens.push(l.matrix);
        props.push(e);
    }
    let rho_t = unvectorize(&v, d);
    let rho_t = (&rho_t + rho_t.adjoint()) * C64::new(0.5, 0.0);
    let cost = obj.cost_matrix(&rho_t)?;
    let g = state_derivative_matrix(obj, &rho_t)?;
    let sign = obj.cost_sign();

    let coherent_dirs: Vec<CMatrix> = sys.controls().iter().map(commutator_superoperator).collect();
    let incoherent_dirs: Vec<CMatrix> = (0..sys.transitions().len()).map(|p| incoherent_direction(sys, p)).collect();

    let mut d_u = vec![Vec::new(); m_count];
    let mut d_w = vec![Vec::new(); m_count];
    let mut kappa = vectorize(&g);
    for m in (0..m_count).rev() {
        let dt = C64::new(grid.dt(m), 0.0);
        let x = &gens[m] * dt;
        let sens = |dir: &CMatrix| -> Result<f64> {
            let de = frechet(&x, &(dir * dt), how)?;
            Ok((kappa.adjoint() * de * &states[m])[(0, 0)].re * sign)
        };
        d_u[m] = coherent_dirs.iter().map(&sens).collect::<Result<_>>()?;
        d_w[m] = incoherent_dirs
            .iter()
            .zip(&grid.w[m])
            .map(|(dir, &w)| if w == 0.0 { Ok(0.0) } else { Ok(sens(dir)? * 2.0 * w) })
            .collect::<Result<_>>()?;
        kappa = props[m].adjoint() * kappa;
    }
    Ok((cost, NLevelGradient { d_u, d_w }))
}

/// Cost of the state reached under `grid`.
pub fn cost_nlevel(obj: &Objective, rho0: &DensityMatrix, grid: &NLevelGrid, sys: &NLevelSystem) -> Result<f64> {
    let rho = propagate_raw(rho0, grid, sys)?;
    obj.cost_matrix(&((&rho + rho.adjoint()) * C64::new(0.5, 0.0)))
}
