//! Exact gradients of the final Bloch state and of terminal objectives with
//! respect to the piecewise-constant controls `(u_j, w_j)`, `n_j = w_j^2`.
//!
//! Per segment the derivative of `e^{A dt}` along `B^u` (or `B^n`) is
//! `dt int_0^1 e^{a A dt} B e^{(1-a) A dt} da`. In the spectral basis of
//! `A_bar` this is a matrix of divided differences of `exp(tau z)`, which is
//! the default evaluator. A trapezoid rule on the same integral is available
//! as an independent check. The final-state Jacobian is assembled in one
//! backward sweep.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{GrapeError, Result};
use crate::expm::{expm3, expm_frechet};
use crate::qubit::{
    coherent_matrix, incoherent_matrix, inhomogeneity, HatControls, Segment,
};
use crate::types::{
    bloch_matrix, paulis, BlochVector, CMatrix, ControlGrid, DensityMatrix, Objective,
    SystemParams, C64,
};

pub const DEFAULT_TRAPEZOID_NODES: usize = 129;

/// How the derivative of a segment exponential is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DexpEvaluator {
    /// Closed form in the spectral basis.
    #[default]
    DividedDifference,
    /// Trapezoid rule on the integral with the given number of nodes.
    Trapezoid { nodes: usize },
    /// Trapezoid rule plus the leading Euler-Maclaurin endpoint term.
    CorrectedTrapezoid { nodes: usize },
}

impl DexpEvaluator {
    pub fn trapezoid() -> Self {
        Self::Trapezoid { nodes: DEFAULT_TRAPEZOID_NODES }
    }
}

/// Derivatives of one segment's `(e^{A dt}, g)` with respect to `u` and `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentDerivatives {
    pub dexp_du: Matrix3<f64>,
    pub dexp_dw: Matrix3<f64>,
    pub dg_du: Vector3<f64>,
    pub dg_dw: Vector3<f64>,
}

/// `d r_T / d u_j` and `d r_T / d w_j` for every segment.
#[derive(Debug, Clone, PartialEq)]
pub struct StateJacobian {
    pub d_u: Vec<Vector3<f64>>,
    pub d_w: Vec<Vector3<f64>>,
}

/// Gradient of the objective's cost with respect to `u_j` and `w_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGradient {
    pub d_u: Vec<f64>,
    pub d_w: Vec<f64>,
}

impl ControlGradient {
    /// `[d_u..., d_w...]`, the layout of `ControlGrid::flat_controls`.
    pub fn flat(&self) -> Vec<f64> {
        self.d_u.iter().chain(self.d_w.iter()).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.d_u.iter().chain(self.d_w.iter()).map(|x| x * x).sum::<f64>().sqrt()
    }
}

fn scaled_directions(params: &SystemParams) -> (Matrix3<f64>, Matrix3<f64>) {
    (coherent_matrix(params) / params.omega, incoherent_matrix(params) / params.omega)
}

/// Derivatives of a single segment. `w` only enters through the chain-rule
/// factor `2 w`; the segment already carries `n = w^2`.
pub fn segment_derivatives(
    seg: &Segment,
    w: f64,
    params: &SystemParams,
    evaluator: DexpEvaluator,
) -> Result<SegmentDerivatives> {
    let (du, dn) = match evaluator {
        DexpEvaluator::DividedDifference => match &seg.decomposition {
            Some(_) => (spectral_derivative(seg, params, true), spectral_derivative(seg, params, false)),
            None => (numeric_derivative(seg, params, true), numeric_derivative(seg, params, false)),
        },
        DexpEvaluator::Trapezoid { nodes } | DexpEvaluator::CorrectedTrapezoid { nodes } => {
            if nodes < 2 {
                return Err(GrapeError::TooFewNodes(nodes));
            }
            let corrected = matches!(evaluator, DexpEvaluator::CorrectedTrapezoid { .. });
            let ex = trapezoid_exponentials(seg, nodes);
            let x = seg.hc.scaled_generator() * seg.tau;
            let dt = seg.tau / params.omega;
            let (bu, bn) = (coherent_matrix(params), incoherent_matrix(params));
            let deu = trapezoid_integral(&ex, &x, &bu, dt, corrected);
            let den = trapezoid_integral(&ex, &x, &bn, dt, corrected);
            let dgu = inverse_form_offset(seg, params, &deu, &bu)
                .unwrap_or_else(|| numeric_derivative(seg, params, true).1);
            let dgn = inverse_form_offset(seg, params, &den, &bn)
                .unwrap_or_else(|| numeric_derivative(seg, params, false).1);
            ((deu, dgu), (den, dgn))
        }
    };
    let f = 2.0 * w;
    Ok(SegmentDerivatives { dexp_du: du.0, dexp_dw: dn.0 * f, dg_du: du.1, dg_dw: dn.1 * f })
}

/// Divided-difference form: `S L(Lambda, S^-1 B_bar S) S^-1`, and the same
/// for `int_0^tau e^{A_bar s} ds` applied to `b / omega`.
fn spectral_derivative(seg: &Segment, params: &SystemParams, coherent: bool) -> (Matrix3<f64>, Vector3<f64>) {
    let d = seg.decomposition.as_ref().expect("spectral decomposition");
    let (bu, bn) = scaled_directions(params);
    let e = d.to_basis(if coherent { &bu } else { &bn });
    let dexp = d.from_basis(&d.frechet_lambda(&e, seg.tau, false));
    let dg = if params.gamma == 0.0 {
        Vector3::zeros()
    } else {
        let b = inhomogeneity(params).map(|x| C64::new(x, 0.0));
        (d.s * d.frechet_lambda(&e, seg.tau, true) * d.s_inv * b).map(|z| z.re) / params.omega
    };
    (dexp, dg)
}

/// Block-triangular Fréchet derivative of the augmented 4x4 exponential,
/// used where the spectral basis is unavailable.
fn numeric_derivative(seg: &Segment, params: &SystemParams, coherent: bool) -> (Matrix3<f64>, Vector3<f64>) {
    let (bu, bn) = scaled_directions(params);
    let dir = if coherent { bu } else { bn };
    let a = seg.hc.scaled_generator() * seg.tau;
    let b = inhomogeneity(params) * (seg.tau / params.omega);
    let x = DMatrix::from_fn(4, 4, |i, j| match (i, j) {
        (3, _) => C64::new(0.0, 0.0),
        (_, 3) => C64::new(b[i], 0.0),
        _ => C64::new(a[(i, j)], 0.0),
    });
    let e = DMatrix::from_fn(4, 4, |i, j| {
        if i < 3 && j < 3 {
            C64::new(dir[(i, j)] * seg.tau, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let l = expm_frechet(&x, &e);
    (
        Matrix3::from_fn(|i, j| l[(i, j)].re),
        Vector3::from_fn(|i, _| l[(i, 3)].re),
    )
}

/// `e^{a_k A dt}` at the trapezoid nodes `a_k = k / (nodes - 1)`.
fn trapezoid_exponentials(seg: &Segment, nodes: usize) -> Vec<Matrix3<f64>> {
    (0..nodes)
        .map(|k| {
            let s = seg.tau * k as f64 / (nodes - 1) as f64;
            match &seg.decomposition {
                Some(d) => d.expm(s),
                None => expm3(&(seg.hc.scaled_generator() * s)),
            }
        })
        .collect()
}

/// `dt int_0^1 f(a) da` with `f(a) = e^{a X} B e^{(1-a) X}`. The correction
/// subtracts `h^2 (f'(1) - f'(0)) / 12`, where `f'(a) = e^{a X} [X, B] e^{(1-a) X}`.
fn trapezoid_integral(ex: &[Matrix3<f64>], x: &Matrix3<f64>, b: &Matrix3<f64>, dt: f64, corrected: bool) -> Matrix3<f64> {
    let n = ex.len();
    let h = 1.0 / (n - 1) as f64;
    let mut acc = Matrix3::zeros();
    for k in 0..n {
        let wk = if k == 0 || k == n - 1 { 0.5 } else { 1.0 };
        acc += ex[k] * b * ex[n - 1 - k] * wk;
    }
    acc *= h;
    if corrected {
        let c = x * b - b * x;
        let e = &ex[n - 1];
        acc -= (e * c - c * e) * (h * h / 12.0);
    }
    acc * dt
}

/// `(dexp - (e^{A dt} - I) A^-1 B) A^-1 b`; `None` when `A` is singular.
fn inverse_form_offset(
    seg: &Segment,
    params: &SystemParams,
    dexp: &Matrix3<f64>,
    b_dir: &Matrix3<f64>,
) -> Option<Vector3<f64>> {
    if params.gamma == 0.0 {
        return Some(Vector3::zeros());
    }
    let a_inv = (seg.hc.scaled_generator() * params.omega).try_inverse()?;
    let rhs = a_inv * inhomogeneity(params);
    Some((dexp - (seg.propagator - Matrix3::identity()) * a_inv * b_dir) * rhs)
}

fn hat_segment(hc: &HatControls, dt: f64, params: &SystemParams) -> Result<Segment> {
    if hc.n_hat < 0.0 && params.gamma > 0.0 {
        return Err(GrapeError::NegativeIncoherentControl(hc.n_hat));
    }
    Segment::from_hat(*hc, dt, params)
}

pub fn dexp_du(hc: &HatControls, dt: f64, params: &SystemParams) -> Result<Matrix3<f64>> {
    dexp_du_with(hc, dt, params, DexpEvaluator::default())
}

pub fn dexp_du_with(hc: &HatControls, dt: f64, params: &SystemParams, ev: DexpEvaluator) -> Result<Matrix3<f64>> {
    Ok(segment_derivatives(&hat_segment(hc, dt, params)?, 0.0, params, ev)?.dexp_du)
}

pub fn dexp_dw(hc: &HatControls, w: f64, dt: f64, params: &SystemParams) -> Result<Matrix3<f64>> {
    dexp_dw_with(hc, w, dt, params, DexpEvaluator::default())
}

pub fn dexp_dw_with(hc: &HatControls, w: f64, dt: f64, params: &SystemParams, ev: DexpEvaluator) -> Result<Matrix3<f64>> {
    Ok(segment_derivatives(&hat_segment(hc, dt, params)?, w, params, ev)?.dexp_dw)
}

pub fn dg_du(hc: &HatControls, dt: f64, params: &SystemParams) -> Result<Vector3<f64>> {
    Ok(segment_derivatives(&hat_segment(hc, dt, params)?, 0.0, params, DexpEvaluator::default())?.dg_du)
}

pub fn dg_dw(hc: &HatControls, w: f64, dt: f64, params: &SystemParams) -> Result<Vector3<f64>> {
    Ok(segment_derivatives(&hat_segment(hc, dt, params)?, w, params, DexpEvaluator::default())?.dg_dw)
}

/// `dg/du` through `A^-1`, for comparison with the default form.
pub fn dg_du_inverse_form(hc: &HatControls, dt: f64, params: &SystemParams) -> Result<Vector3<f64>> {
    let seg = hat_segment(hc, dt, params)?;
    let d = segment_derivatives(&seg, 0.0, params, DexpEvaluator::default())?;
    inverse_form_offset(&seg, params, &d.dexp_du, &coherent_matrix(params))
        .ok_or_else(|| GrapeError::Unsupported("generator is singular".into()))
}

struct Forward {
    trajectory: Vec<Vector3<f64>>,
    segments: Vec<Segment>,
}

fn forward(r0: &BlochVector, grid: &ControlGrid, params: &SystemParams) -> Result<Forward> {
    let m = grid.segments();
    let mut trajectory = Vec::with_capacity(m + 1);
    let mut segments = Vec::with_capacity(m);
    let mut r = r0.0;
    trajectory.push(r);
    for k in 0..m {
        let seg = Segment::new(grid.u()[k], grid.n(k), grid.dt(k), params)?;
        r = seg.apply(&r);
        trajectory.push(r);
        segments.push(seg);
    }
    Ok(Forward { trajectory, segments })
}

fn local_terms(
    fw: &Forward,
    grid: &ControlGrid,
    params: &SystemParams,
    ev: DexpEvaluator,
) -> Result<Vec<(Vector3<f64>, Vector3<f64>)>> {
    fw.segments
        .iter()
        .enumerate()
        .map(|(j, seg)| {
            let d = segment_derivatives(seg, grid.w()[j], params, ev)?;
            let r = &fw.trajectory[j];
            Ok((d.dexp_du * r + d.dg_du, d.dexp_dw * r + d.dg_dw))
        })
        .collect()
}

fn jacobian_from(fw: &Forward, grid: &ControlGrid, params: &SystemParams, ev: DexpEvaluator) -> Result<StateJacobian> {
    let local = local_terms(fw, grid, params, ev)?;
    let m = local.len();
    let mut d_u = vec![Vector3::zeros(); m];
    let mut d_w = vec![Vector3::zeros(); m];
    let mut r = Matrix3::identity();
    for j in (0..m).rev() {
        d_u[j] = r * local[j].0;
        d_w[j] = r * local[j].1;
        r *= fw.segments[j].propagator;
    }
    Ok(StateJacobian { d_u, d_w })
}

pub fn state_jacobian(r0: &BlochVector, grid: &ControlGrid, params: &SystemParams) -> Result<StateJacobian> {
    state_jacobian_with(r0, grid, params, DexpEvaluator::default())
}

pub fn state_jacobian_with(
    r0: &BlochVector,
    grid: &ControlGrid,
    params: &SystemParams,
    ev: DexpEvaluator,
) -> Result<StateJacobian> {
    jacobian_from(&forward(r0, grid, params)?, grid, params, ev)
}

/// Same Jacobian with the propagator product rebuilt for every segment.
pub fn state_jacobian_naive(r0: &BlochVector, grid: &ControlGrid, params: &SystemParams) -> Result<StateJacobian> {
    let fw = forward(r0, grid, params)?;
    let local = local_terms(&fw, grid, params, DexpEvaluator::default())?;
    let m = local.len();
    let mut d_u = Vec::with_capacity(m);
    let mut d_w = Vec::with_capacity(m);
    for (j, (lu, lw)) in local.iter().enumerate() {
        let mut r = Matrix3::identity();
        for k in (j + 1..m).rev() {
            r *= fw.segments[k].propagator;
        }
        d_u.push(r * lu);
        d_w.push(r * lw);
    }
    Ok(StateJacobian { d_u, d_w })
}

/// Hermitian `G` with `dJ(rho_T)[X] = Tr(G X)`, for the objective value `J`
/// as returned by `Objective::evaluate`.
pub fn objective_state_derivative(obj: &Objective, rho_t: &DensityMatrix) -> Result<CMatrix> {
    state_derivative_matrix(obj, rho_t.matrix())
}

pub(crate) fn state_derivative_matrix(obj: &Objective, rho: &CMatrix) -> Result<CMatrix> {
    if rho.nrows() != obj.dim() {
        return Err(GrapeError::DimensionMismatch { expected: obj.dim(), got: rho.nrows() });
    }
    match obj {
        Objective::ObservableExpectation(o) => Ok(o.clone()),
        Objective::StateTransfer(target) => Ok((rho - target.matrix()) * C64::new(2.0, 0.0)),
        Objective::UhlmannJozsa(target) => {
            if rho.nrows() != 2 {
                return Err(GrapeError::Unsupported(
                    "Uhlmann-Jozsa derivative is implemented for qubits only".into(),
                ));
            }
            let det_rho = rho.determinant().re;
            if det_rho <= 1e-14 {
                return Err(GrapeError::SingularFinalState);
            }
            let det_t = target.matrix().determinant().re.max(0.0);
            let inv = rho.clone().try_inverse().ok_or(GrapeError::SingularFinalState)?;
            Ok(target.matrix() + inv * C64::new((det_t * det_rho).sqrt(), 0.0))
        }
    }
}

/// `dJ / dr_i = Tr(G sigma_i) / 2` at the qubit state with Bloch vector `r`.
pub fn bloch_space_derivative(obj: &Objective, r: &BlochVector) -> Result<Vector3<f64>> {
    let g = state_derivative_matrix(obj, &bloch_matrix(r))?;
    let s = paulis();
    Ok(Vector3::from_fn(|i, _| (&g * &s[i]).trace().re / 2.0))
}

/// Cost of the qubit state reached from `r0` under `grid`.
pub fn qubit_cost(obj: &Objective, r0: &BlochVector, grid: &ControlGrid, params: &SystemParams) -> Result<f64> {
    let fw = forward(r0, grid, params)?;
    obj.cost_matrix(&bloch_matrix(&BlochVector(*fw.trajectory.last().unwrap())))
}

pub fn control_gradient(
    obj: &Objective,
    r0: &BlochVector,
    grid: &ControlGrid,
    params: &SystemParams,
) -> Result<ControlGradient> {
    Ok(cost_and_gradient(obj, r0, grid, params, DexpEvaluator::default())?.1)
}

/// Cost and its control gradient from a single forward sweep.
pub fn cost_and_gradient(
    obj: &Objective,
    r0: &BlochVector,
    grid: &ControlGrid,
    params: &SystemParams,
    ev: DexpEvaluator,
) -> Result<(f64, ControlGradient)> {
    if obj.dim() != 2 {
        return Err(GrapeError::DimensionMismatch { expected: 2, got: obj.dim() });
    }
    let fw = forward(r0, grid, params)?;
    let r_t = BlochVector(*fw.trajectory.last().unwrap());
    let cost = obj.cost_matrix(&bloch_matrix(&r_t))?;
    let dj = bloch_space_derivative(obj, &r_t)? * obj.cost_sign();
    let jac = jacobian_from(&fw, grid, params, ev)?;
    let grad = ControlGradient {
        d_u: jac.d_u.iter().map(|v| dj.dot(v)).collect(),
        d_w: jac.d_w.iter().map(|v| dj.dot(v)).collect(),
    };
    Ok((cost, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubit::{hat_controls, propagate};
    use crate::types::{density_from_bloch, sigma_z};

    fn params() -> SystemParams {
        SystemParams::new(1.0, 0.1, 0.05).unwrap()
    }

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    fn fd_exp_u(u: f64, n: f64, dt: f64, p: &SystemParams) -> (Matrix3<f64>, Vector3<f64>) {
        let h = 1e-6 * (1.0 + u.abs());
        let a = Segment::new(u + h, n, dt, p).unwrap();
        let b = Segment::new(u - h, n, dt, p).unwrap();
        ((a.propagator - b.propagator) / (2.0 * h), (a.offset - b.offset) / (2.0 * h))
    }

    fn fd_exp_w(u: f64, w: f64, dt: f64, p: &SystemParams) -> (Matrix3<f64>, Vector3<f64>) {
        let h = 1e-6 * (1.0 + w.abs());
        let a = Segment::new(u, (w + h).powi(2), dt, p).unwrap();
        let b = Segment::new(u, (w - h).powi(2), dt, p).unwrap();
        ((a.propagator - b.propagator) / (2.0 * h), (a.offset - b.offset) / (2.0 * h))
    }

    #[test]
    fn zero_duration_and_zero_w() {
        let p = params();
        let hc = hat_controls(1.0, 0.3, &p);
        assert_eq!(max_abs(&dexp_du(&hc, 0.0, &p).unwrap()), 0.0);
        assert!(dg_du(&hc, 0.0, &p).unwrap().norm() == 0.0);
        assert_eq!(max_abs(&dexp_dw(&hc, 0.0, 2.0, &p).unwrap()), 0.0);
        let a = dexp_dw(&hc, 0.7, 2.0, &p).unwrap();
        let b = dexp_dw(&hc, -0.7, 2.0, &p).unwrap();
        assert!(max_abs(&(a + b)) < 1e-15);
    }

    #[test]
    fn closed_system_offset_derivative_vanishes() {
        let p = SystemParams::new(1.0, 0.1, 0.0).unwrap();
        let hc = hat_controls(2.0, 0.4, &p);
        assert_eq!(dg_du(&hc, 1.5, &p).unwrap(), Vector3::zeros());
        assert_eq!(dg_dw(&hc, 0.3, 1.5, &p).unwrap(), Vector3::zeros());
    }

    #[test]
    fn segment_derivatives_match_finite_differences() {
        let p = params();
        for &(u, w, dt) in &[(0.7, 0.4, 1.3), (-3.0, 1.5, 0.5), (0.0, 0.9, 2.0), (4.2, 0.0, 0.8)] {
            let n = w * w;
            let hc = hat_controls(u, n, &p);
            let (fe, fg) = fd_exp_u(u, n, dt, &p);
            let e = dexp_du(&hc, dt, &p).unwrap();
            let g = dg_du(&hc, dt, &p).unwrap();
            assert!(max_abs(&(e - fe)) <= 1e-5 * max_abs(&fe).max(1e-3), "{u} {w}");
            assert!((g - fg).norm() <= 1e-5 * fg.norm().max(1e-3));
            let (fe, fg) = fd_exp_w(u, w, dt, &p);
            let e = dexp_dw(&hc, w, dt, &p).unwrap();
            let g = dg_dw(&hc, w, dt, &p).unwrap();
            assert!(max_abs(&(e - fe)) <= 1e-5 * max_abs(&fe).max(1e-3));
            assert!((g - fg).norm() <= 1e-5 * fg.norm().max(1e-3));
        }
    }

    #[test]
    fn inverse_form_agrees() {
        let p = params();
        let hc = hat_controls(1.1, 0.5, &p);
        let a = dg_du(&hc, 1.7, &p).unwrap();
        let b = dg_du_inverse_form(&hc, 1.7, &p).unwrap();
        assert!((a - b).norm() < 1e-11);
    }

    #[test]
    fn trapezoid_agrees_and_converges() {
        let p = params();
        let hc = hat_controls(2.0, 0.6, &p);
        let exact = dexp_du(&hc, 1.0, &p).unwrap();
        let t129 = dexp_du_with(&hc, 1.0, &p, DexpEvaluator::trapezoid()).unwrap();
        let t65 = dexp_du_with(&hc, 1.0, &p, DexpEvaluator::Trapezoid { nodes: 65 }).unwrap();
        let (e129, e65) = (max_abs(&(t129 - exact)), max_abs(&(t65 - exact)));
        assert!(e129 < 1e-5, "{e129}");
        assert!(e65 / e129 >= 3.5, "{e65} / {e129}");
        let c129 = dexp_du_with(&hc, 1.0, &p, DexpEvaluator::CorrectedTrapezoid { nodes: 129 }).unwrap();
        assert!(max_abs(&(c129 - exact)) < 1e-8);
        assert!(matches!(
            dexp_du_with(&hc, 1.0, &p, DexpEvaluator::Trapezoid { nodes: 1 }),
            Err(GrapeError::TooFewNodes(1))
        ));
    }

    #[test]
    fn triple_point_derivative_matches_block_form() {
        let p = SystemParams::new(1.0, 0.5, 1.0).unwrap();
        let hc = HatControls::new(2.0 * 2.0_f64.sqrt(), 3.0 * 3.0_f64.sqrt());
        let seg = Segment::from_hat(hc, 0.4, &p).unwrap();
        let d = segment_derivatives(&seg, 0.0, &p, DexpEvaluator::DividedDifference).unwrap();
        let (e, g) = numeric_derivative(&seg, &p, true);
        assert!(max_abs(&(d.dexp_du - e)) < 1e-12);
        assert!((d.dg_du - g).norm() < 1e-12);
    }

    #[test]
    fn jacobian_linear_equals_naive() {
        let p = params();
        let grid = ControlGrid::new(
            vec![0.0, 0.5, 1.2, 2.0, 3.1],
            vec![0.3, -1.2, 2.0, 0.0],
            vec![0.5, 0.0, -0.8, 1.1],
        )
        .unwrap();
        let r0 = BlochVector::new(0.0, 0.0, -1.0);
        let a = state_jacobian(&r0, &grid, &p).unwrap();
        let b = state_jacobian_naive(&r0, &grid, &p).unwrap();
        for j in 0..4 {
            assert!((a.d_u[j] - b.d_u[j]).norm() < 1e-12);
            assert!((a.d_w[j] - b.d_w[j]).norm() < 1e-12);
        }
        assert_eq!(a.d_w[1], Vector3::zeros());
    }

    #[test]
    fn zero_controls_closed_system_w_jacobian_vanishes() {
        let p = SystemParams::new(1.0, 0.1, 0.0).unwrap();
        let grid = ControlGrid::uniform(3.0, 6).unwrap();
        let jac = state_jacobian(&BlochVector::new(0.2, 0.1, -0.9), &grid, &p).unwrap();
        assert!(jac.d_w.iter().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = params();
        let grid = ControlGrid::new(vec![0.0, 0.7, 1.5, 2.5], vec![1.0, -0.5, 2.5], vec![0.6, 1.2, -0.4]).unwrap();
        let r0 = BlochVector::new(0.0, 0.0, -1.0);
        let jac = state_jacobian(&r0, &grid, &p).unwrap();
        let x = grid.flat_controls();
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let rp = propagate(&r0, &grid.with_flat_controls(&xp).unwrap(), &p).unwrap();
            let rm = propagate(&r0, &grid.with_flat_controls(&xm).unwrap(), &p).unwrap();
            let fd = (rp.last().unwrap().0 - rm.last().unwrap().0) / (2.0 * h);
            let an = if k < 3 { jac.d_u[k] } else { jac.d_w[k - 3] };
            assert!((fd - an).norm() <= 1e-5 * an.norm().max(1e-4), "component {k}");
        }
    }

    #[test]
    fn objective_derivative_examples() {
        let target = density_from_bloch(&BlochVector::new(0.0, 0.0, 0.5)).unwrap();
        let st = Objective::StateTransfer(target.clone());
        let g = objective_state_derivative(&st, &target).unwrap();
        assert!(g.iter().all(|z| z.norm() < 1e-15));

        let obs = Objective::observable(sigma_z()).unwrap();
        let d = bloch_space_derivative(&obs, &BlochVector::new(0.1, 0.2, 0.3)).unwrap();
        assert!((d - Vector3::new(0.0, 0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn uhlmann_jozsa_derivative_matches_finite_differences() {
        let target = density_from_bloch(&BlochVector::new(0.3, -0.2, 0.6)).unwrap();
        let obj = Objective::UhlmannJozsa(target);
        let r = BlochVector::new(-0.1, 0.4, 0.2);
        let d = bloch_space_derivative(&obj, &r).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let (mut rp, mut rm) = (r.0, r.0);
            rp[i] += h;
            rm[i] -= h;
            let fp = obj.evaluate_matrix(&bloch_matrix(&BlochVector(rp))).unwrap();
            let fm = obj.evaluate_matrix(&bloch_matrix(&BlochVector(rm))).unwrap();
            assert!(((fp - fm) / (2.0 * h) - d[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn uhlmann_jozsa_pure_final_state_is_an_error() {
        let target = density_from_bloch(&BlochVector::new(0.0, 0.0, 0.5)).unwrap();
        let obj = Objective::UhlmannJozsa(target);
        let pure = density_from_bloch(&BlochVector::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(objective_state_derivative(&obj, &pure), Err(GrapeError::SingularFinalState));
    }

    #[test]
    fn control_gradient_matches_finite_differences() {
        let p = SystemParams::reference();
        let target = density_from_bloch(&BlochVector::new(0.0, 0.0, 0.5)).unwrap();
        let obj = Objective::StateTransfer(target);
        let grid = ControlGrid::new(vec![0.0, 1.0, 2.5, 5.0], vec![0.5, -2.0, 1.0], vec![0.3, 0.0, 1.4]).unwrap();
        let r0 = BlochVector::new(0.0, 0.0, -1.0);
        let g = control_gradient(&obj, &r0, &grid, &p).unwrap();
        assert_eq!(g.d_w[1], 0.0);
        let x = grid.flat_controls();
        let flat = g.flat();
        for k in 0..x.len() {
            let h = 1e-6 * (1.0 + x[k].abs());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[k] += h;
            xm[k] -= h;
            let fp = qubit_cost(&obj, &r0, &grid.with_flat_controls(&xp).unwrap(), &p).unwrap();
            let fm = qubit_cost(&obj, &r0, &grid.with_flat_controls(&xm).unwrap(), &p).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - flat[k]).abs() <= 1e-5 * flat[k].abs().max(1e-4), "component {k}");
        }
    }

    #[test]
    fn transfer_gradient_vanishes_at_target() {
        let p = SystemParams::reference();
        let grid = ControlGrid::new(vec![0.0, 1.0, 2.0], vec![0.5, -1.0], vec![0.2, 0.7]).unwrap();
        let r0 = BlochVector::new(0.0, 0.0, -1.0);
        let r_t = *propagate(&r0, &grid, &p).unwrap().last().unwrap();
        let obj = Objective::StateTransfer(density_from_bloch(&r_t).unwrap());
        let g = control_gradient(&obj, &r0, &grid, &p).unwrap();
        assert!(g.norm() < 1e-14);
    }
}
