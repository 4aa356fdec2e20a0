//! Exact qubit evolution in the Bloch ball.
//!
//! The Bloch vector obeys the affine equation `dr/dt = A r + b` with
//! `A = B + B^u u + B^n n`. Scaling by the transition frequency gives
//! `A_bar = A / omega`, whose characteristic polynomial
//!
//! ```text
//! l^3 + 4 n^ l^2 + (5 n^2 + u^2 + 1) l + u^2 n^ + 2 n^3 + 2 n^ = 0
//! ```
//!
//! (hatted controls `u^ = 2 mu u / omega`, `n^ = gamma (n + 1/2) / omega`) is
//! solved in closed form by Cardano's method. The exponential `e^{A dt}` is
//! then `S e^{Lambda tau} S^-1` with `tau = omega dt`, where `Lambda` is
//! diagonal for three distinct roots and bidiagonal (Jordan) when roots
//! coincide.
//!
//! For repeated roots the columns of `S` are the Jordan chain `(h, h', h''/2)`
//! of the eigenvector function `h(l)`. We build them as divided differences
//! of `h` over the computed roots, which reduces to the Jordan chain when the
//! roots coincide exactly and stays well conditioned when they are merely
//! close. Exponentials of the bidiagonal `Lambda` are divided differences of
//! `exp(tau z)` along its diagonal.

use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::divdiff::dd_exp;
use crate::error::{GrapeError, Result};
use crate::expm::expm3;
use crate::types::{BlochVector, ControlGrid, SystemParams, C64};

/// Condition number above which the analytic basis is rejected.
pub const MAX_BASIS_CONDITION: f64 = 1e12;
/// Reconstruction residual above which `expm_scaled` uses the numeric path.
pub const MAX_RECONSTRUCTION_RESIDUAL: f64 = 1e-8;
/// Relative tolerance for classifying repeated roots.
pub const DEGENERACY_TOL: f64 = 1e-10;

const I: C64 = C64::new(0.0, 1.0);
const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// `A = B + B^u u + B^n n` and the constant inhomogeneity `b = (0, 0, gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGenerator {
    pub a: Matrix3<f64>,
    pub b: Vector3<f64>,
}

/// The drift matrix `B` (free precession plus vacuum damping).
pub fn drift_matrix(params: &SystemParams) -> Matrix3<f64> {
    let (w, g) = (params.omega, params.gamma);
    Matrix3::new(-g / 2.0, w, 0.0, -w, -g / 2.0, 0.0, 0.0, 0.0, -g)
}

/// `B^u`, the generator of the coherent control.
pub fn coherent_matrix(params: &SystemParams) -> Matrix3<f64> {
    let m = 2.0 * params.mu;
    Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -m, 0.0, m, 0.0)
}

/// `B^n`, the generator of the incoherent control.
pub fn incoherent_matrix(params: &SystemParams) -> Matrix3<f64> {
    let g = params.gamma;
    Matrix3::new(-g, 0.0, 0.0, 0.0, -g, 0.0, 0.0, 0.0, -2.0 * g)
}

pub fn inhomogeneity(params: &SystemParams) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, params.gamma)
}

pub fn build_generator(u: f64, n: f64, params: &SystemParams) -> Result<AffineGenerator> {
    check_n(n)?;
    Ok(AffineGenerator {
        a: drift_matrix(params) + coherent_matrix(params) * u + incoherent_matrix(params) * n,
        b: inhomogeneity(params),
    })
}

fn check_n(n: f64) -> Result<()> {
    if n.is_nan() || n < 0.0 {
        return Err(GrapeError::NegativeIncoherentControl(n));
    }
    Ok(())
}

/// Dimensionless controls of the scaled generator `A / omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HatControls {
    pub u_hat: f64,
    pub n_hat: f64,
}

impl HatControls {
    pub fn new(u_hat: f64, n_hat: f64) -> Self {
        Self { u_hat, n_hat }
    }

    /// `A / omega`.
    pub fn scaled_generator(&self) -> Matrix3<f64> {
        let (u, n) = (self.u_hat, self.n_hat);
        Matrix3::new(-n, 1.0, 0.0, -1.0, -n, -u, 0.0, u, -2.0 * n)
    }

    pub fn char_poly(&self, l: C64) -> C64 {
        let (u2, n) = (self.u_hat * self.u_hat, self.n_hat);
        ((l + 4.0 * n) * l + (5.0 * n * n + u2 + 1.0)) * l + (u2 * n + 2.0 * n * n * n + 2.0 * n)
    }

    fn char_poly_derivative(&self, l: C64) -> C64 {
        let (u2, n) = (self.u_hat * self.u_hat, self.n_hat);
        (l * 3.0 + 8.0 * n) * l + (5.0 * n * n + u2 + 1.0)
    }

    /// `1 + n^2 + u^2`, the natural magnitude of the cubic's coefficients.
    pub fn scale(&self) -> f64 {
        1.0 + self.n_hat * self.n_hat + self.u_hat * self.u_hat
    }
}

pub fn hat_controls(u: f64, n: f64, params: &SystemParams) -> HatControls {
    HatControls {
        u_hat: 2.0 * params.mu * u / params.omega,
        n_hat: params.gamma / params.omega * (n + 0.5),
    }
}

/// Which square root of `Delta` feeds the cube root.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeRootBranch {
    /// Sign chosen so that `-q + sqrt(Delta)` does not cancel.
    Stable,
    /// Principal square root (non-negative imaginary part).
    Principal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CardanoRoots {
    /// Sorted by real part, then imaginary part.
    pub lambdas: [C64; 3],
    pub p: f64,
    pub q: f64,
    pub delta: f64,
}

pub fn cardano_coefficients(hc: &HatControls) -> (f64, f64, f64) {
    let (u2, n) = (hc.u_hat * hc.u_hat, hc.n_hat);
    let p = u2 / 3.0 - n * n / 9.0 + 1.0 / 3.0;
    let q = -u2 * n / 6.0 + n * n * n / 27.0 + n / 3.0;
    (p, q, p * p * p + q * q)
}

fn is_triple(hc: &HatControls, p: f64, q: f64) -> bool {
    let tol = DEGENERACY_TOL * hc.scale().powf(1.5);
    p.abs() <= tol && q.abs() <= tol
}

fn is_double(hc: &HatControls, delta: f64) -> bool {
    delta.abs() <= DEGENERACY_TOL * hc.scale().powi(3)
}

pub fn cardano_roots(hc: &HatControls) -> CardanoRoots {
    cardano_roots_with(hc, CubeRootBranch::Stable)
}

pub fn cardano_roots_with(hc: &HatControls, branch: CubeRootBranch) -> CardanoRoots {
    let (p, q, delta) = cardano_coefficients(hc);
    let shift = C64::new(-4.0 * hc.n_hat / 3.0, 0.0);
    if is_triple(hc, p, q) {
        return CardanoRoots { lambdas: [shift; 3], p, q, delta };
    }

    let rot = C64::new(-0.5, 3.0_f64.sqrt() / 2.0);
    let rots = [ONE, rot, rot * rot];
    let mut lambdas = [ZERO; 3];
    if p == 0.0 {
        let xi = C64::new(-2.0 * q, 0.0).cbrt();
        for k in 0..3 {
            lambdas[k] = shift + xi * rots[k];
        }
    } else {
        let mut sqrt_delta = C64::new(delta, 0.0).sqrt();
        if branch == CubeRootBranch::Stable && delta >= 0.0 && q > 0.0 {
            sqrt_delta = -sqrt_delta;
        }
        let xi0 = (-q + sqrt_delta).cbrt();
        for k in 0..3 {
            let xi = xi0 * rots[k];
            lambdas[k] = shift + xi - p / xi;
        }
    }

    enforce_real_structure(&mut lambdas, delta);
    for l in lambdas.iter_mut() {
        *l = polish(hc, *l);
    }
    enforce_real_structure(&mut lambdas, delta);
    sort_roots(&mut lambdas);
    CardanoRoots { lambdas, p, q, delta }
}

/// Real coefficients: three real roots when `Delta < 0`, otherwise one real
/// root and a conjugate pair.
fn enforce_real_structure(l: &mut [C64; 3], delta: f64) {
    if delta < 0.0 {
        for z in l.iter_mut() {
            z.im = 0.0;
        }
        return;
    }
    let real_idx = (0..3)
        .min_by(|&a, &b| l[a].im.abs().partial_cmp(&l[b].im.abs()).unwrap())
        .unwrap();
    l[real_idx].im = 0.0;
    let others: Vec<usize> = (0..3).filter(|&k| k != real_idx).collect();
    let (a, b) = (others[0], others[1]);
    let mean = (l[a] + l[b].conj()) * 0.5;
    l[a] = mean;
    l[b] = mean.conj();
}

/// Newton steps, kept only while they reduce the residual.
fn polish(hc: &HatControls, mut l: C64) -> C64 {
    let mut res = hc.char_poly(l).norm();
    for _ in 0..6 {
        let d = hc.char_poly_derivative(l);
        if d.norm() <= f64::EPSILON * hc.scale() {
            break;
        }
        let cand = l - hc.char_poly(l) / d;
        let cres = hc.char_poly(cand).norm();
        if !(cres < res) {
            break;
        }
        l = cand;
        res = cres;
    }
    l
}

fn sort_roots(l: &mut [C64; 3]) {
    l.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap().then(a.im.partial_cmp(&b.im).unwrap()));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralCase {
    /// Three distinct eigenvalues, diagonal `Lambda`.
    ThreeDistinct,
    /// A simple and a double eigenvalue, one 2x2 Jordan block.
    OneDouble,
    /// One triple eigenvalue, a single 3x3 Jordan block.
    Triple,
    /// `u^ = 0`: eigenvalues `-n^ +- i` and `-2 n^` with a fixed basis.
    CoherentFree,
}

/// `A_bar = S Lambda S^-1` where `Lambda` carries `lambdas` on its diagonal
/// and a unit superdiagonal wherever `links` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub case: SpectralCase,
    pub lambdas: [C64; 3],
    pub links: [bool; 2],
    pub s: Matrix3<C64>,
    pub s_inv: Matrix3<C64>,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    /// `||S||_1 ||S^-1||_1`.
    pub condition: f64,
}

impl SpectralDecomposition {
    pub fn lambda_matrix(&self) -> Matrix3<C64> {
        let mut m = Matrix3::from_diagonal(&Vector3::from(self.lambdas));
        for k in 0..2 {
            if self.links[k] {
                m[(k, k + 1)] = ONE;
            }
        }
        m
    }

    /// Whether indices `i..=j` form a run of the superdiagonal.
    pub(crate) fn chained(&self, i: usize, j: usize) -> bool {
        i <= j && (i..j).all(|k| self.links[k])
    }

    fn run(&self, i: usize, j: usize) -> Vec<C64> {
        self.lambdas[i..=j].to_vec()
    }

    /// `e^{Lambda tau}`.
    pub fn exp_lambda(&self, tau: f64) -> Matrix3<C64> {
        self.lambda_function(|nodes| dd_exp(nodes, tau))
    }

    /// `int_0^tau e^{Lambda s} ds`.
    pub fn integral_lambda(&self, tau: f64) -> Matrix3<C64> {
        self.lambda_function(|nodes| {
            let mut v = nodes.to_vec();
            v.push(ZERO);
            dd_exp(&v, tau)
        })
    }

    fn lambda_function(&self, f: impl Fn(&[C64]) -> C64) -> Matrix3<C64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            for j in i..3 {
                if self.chained(i, j) {
                    m[(i, j)] = f(&self.run(i, j));
                }
            }
        }
        m
    }

    /// Fréchet derivative of `X -> e^{X tau}` at `Lambda` in direction
    /// `e` (already expressed in the `S` basis). With `integral` set, the
    /// function is `X -> int_0^tau e^{X s} ds` instead.
    pub fn frechet_lambda(&self, e: &Matrix3<C64>, tau: f64, integral: bool) -> Matrix3<C64> {
        let mut out = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = ZERO;
                for k in i..3 {
                    if !self.chained(i, k) {
                        break;
                    }
                    for l in 0..=j {
                        if !self.chained(l, j) || e[(k, l)] == ZERO {
                            continue;
                        }
                        let mut nodes = self.run(i, k);
                        nodes.extend(self.run(l, j));
                        if integral {
                            nodes.push(ZERO);
                        }
                        acc += e[(k, l)] * dd_exp(&nodes, tau);
                    }
                }
                out[(i, j)] = acc;
            }
        }
        out
    }

    /// `S e^{Lambda tau} S^-1` (real part).
    pub fn expm(&self, tau: f64) -> Matrix3<f64> {
        (self.s * self.exp_lambda(tau) * self.s_inv).map(|z| z.re)
    }

    /// Largest imaginary part of `S e^{Lambda tau} S^-1`; round-off only.
    pub fn expm_imaginary_residual(&self, tau: f64) -> f64 {
        (self.s * self.exp_lambda(tau) * self.s_inv).iter().map(|z| z.im.abs()).fold(0.0, f64::max)
    }

    /// Max-entry residual of `S Lambda S^-1 - A_bar`.
    pub fn reconstruction_residual(&self, hc: &HatControls) -> f64 {
        let rec = self.s * self.lambda_matrix() * self.s_inv;
        let a = hc.scaled_generator();
        (0..9).map(|k| (rec[k] - C64::new(a[k], 0.0)).norm()).fold(0.0, f64::max)
    }

    /// Expresses a real matrix in the `S` basis: `S^-1 m S`.
    pub fn to_basis(&self, m: &Matrix3<f64>) -> Matrix3<C64> {
        self.s_inv * m.map(|x| C64::new(x, 0.0)) * self.s
    }

    pub fn from_basis(&self, m: &Matrix3<C64>) -> Matrix3<f64> {
        (self.s * m * self.s_inv).map(|z| z.re)
    }
}

/// Divided difference of the eigenvector function
/// `h(l) = (u^ / D, u^ x / D, -1)`, `x = n^ + l`, `D = 1 + x^2`, over the
/// given roots. Uses the partial fractions
/// `1/D = (1/(x-i) - 1/(x+i)) / 2i` and `x/D = (1/(x-i) + 1/(x+i)) / 2`, so
/// repeated nodes give the Jordan chain vectors `h'` and `h''/2` exactly.
pub fn eigenvector_divided_difference(hc: &HatControls, nodes: &[C64]) -> Vector3<C64> {
    let m = nodes.len() - 1;
    let (mut pm, mut pp) = (ONE, ONE);
    for l in nodes {
        let x = l + hc.n_hat;
        pm *= x - I;
        pp *= x + I;
    }
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    let (rm, rp) = (pm.inv() * sign, pp.inv() * sign);
    let u = hc.u_hat;
    Vector3::new(
        (rm - rp) * u / (2.0 * I),
        (rm + rp) * (u / 2.0),
        if m == 0 { C64::new(-1.0, 0.0) } else { ZERO },
    )
}

/// Eigenvector for a simple root, picking between `h(l)` and the rescaled
/// form `(1, x, u^ x / (l + 2 n^))` according to which has the larger
/// denominator. The second form is the one that survives `u^ -> 0` on the
/// `-n^ +- i` pair.
fn simple_eigenvector(hc: &HatControls, l: C64) -> Vector3<C64> {
    let x = l + hc.n_hat;
    let d = x * x + 1.0;
    let shifted = l + 2.0 * hc.n_hat;
    if d.norm() >= shifted.norm() {
        eigenvector_divided_difference(hc, &[l])
    } else {
        Vector3::new(ONE, x, x * hc.u_hat / shifted)
    }
}

pub fn classify(hc: &HatControls, p: f64, q: f64, delta: f64) -> SpectralCase {
    if hc.u_hat == 0.0 {
        SpectralCase::CoherentFree
    } else if is_triple(hc, p, q) {
        SpectralCase::Triple
    } else if is_double(hc, delta) {
        SpectralCase::OneDouble
    } else {
        SpectralCase::ThreeDistinct
    }
}

pub fn spectral_decompose(hc: &HatControls) -> Result<SpectralDecomposition> {
    let (p, q, delta) = cardano_coefficients(hc);
    let case = classify(hc, p, q, delta);
    let n = hc.n_hat;

    let (lambdas, links, cols): ([C64; 3], [bool; 2], [Vector3<C64>; 3]) = match case {
        SpectralCase::CoherentFree => {
            let mut l = [C64::new(-n, 1.0), C64::new(-n, -1.0), C64::new(-2.0 * n, 0.0)];
            sort_roots(&mut l);
            let col = |z: C64| {
                if z.im > 0.0 {
                    Vector3::new(ONE, I, ZERO)
                } else if z.im < 0.0 {
                    Vector3::new(ONE, -I, ZERO)
                } else {
                    Vector3::new(ZERO, ZERO, ONE)
                }
            };
            (l, [false, false], [col(l[0]), col(l[1]), col(l[2])])
        }
        SpectralCase::Triple => {
            let l = cardano_roots(hc).lambdas;
            let h = |k: usize| eigenvector_divided_difference(hc, &l[..k]);
            (l, [true, true], [h(1), h(2), h(3)])
        }
        SpectralCase::OneDouble => {
            let r = cardano_roots(hc).lambdas;
            let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
            let &(a, b, single) = pairs
                .iter()
                .min_by(|x, y| {
                    (r[x.0] - r[x.1]).norm().partial_cmp(&(r[y.0] - r[y.1]).norm()).unwrap()
                })
                .unwrap();
            let l = [r[single], r[a], r[b]];
            (
                l,
                [false, true],
                [
                    eigenvector_divided_difference(hc, &l[..1]),
                    eigenvector_divided_difference(hc, &l[1..2]),
                    eigenvector_divided_difference(hc, &l[1..3]),
                ],
            )
        }
        SpectralCase::ThreeDistinct => {
            let l = cardano_roots(hc).lambdas;
            (l, [false, false], [
                simple_eigenvector(hc, l[0]),
                simple_eigenvector(hc, l[1]),
                simple_eigenvector(hc, l[2]),
            ])
        }
    };

    let s = Matrix3::from_columns(&cols);
    let s_inv = s.try_inverse().ok_or(GrapeError::SingularBasis(f64::INFINITY))?;
    let condition = norm1(&s) * norm1(&s_inv);
    if !condition.is_finite() || condition > MAX_BASIS_CONDITION {
        return Err(GrapeError::SingularBasis(condition));
    }
    Ok(SpectralDecomposition { case, lambdas, links, s, s_inv, p, q, delta, condition })
}

fn norm1(m: &Matrix3<C64>) -> f64 {
    (0..3).map(|j| (0..3).map(|i| m[(i, j)].norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// `e^{A_bar tau}` from the spectral decomposition, without any fallback.
pub fn expm_scaled_analytic(hc: &HatControls, tau: f64) -> Result<Matrix3<f64>> {
    Ok(spectral_decompose(hc)?.expm(tau))
}

/// `e^{A_bar tau}`: the analytic path, or the numeric exponential when the
/// basis is singular or reconstructs `A_bar` poorly.
pub fn expm_scaled(hc: &HatControls, tau: f64) -> Matrix3<f64> {
    match spectral_decompose(hc) {
        Ok(d) if d.reconstruction_residual(hc) <= MAX_RECONSTRUCTION_RESIDUAL => d.expm(tau),
        _ => expm3(&(hc.scaled_generator() * tau)),
    }
}

/// Closed form for `u^ = 0`: damped rotation in the xy-plane by angle
/// `tau` with decay `e^{-n^ tau}`, and decay `e^{-2 n^ tau}` along z.
pub fn expm_coherent_free(n_hat: f64, tau: f64) -> Matrix3<f64> {
    let d = (-n_hat * tau).exp();
    let (s, c) = tau.sin_cos();
    Matrix3::new(d * c, d * s, 0.0, -d * s, d * c, 0.0, 0.0, 0.0, (-2.0 * n_hat * tau).exp())
}

/// Closed form for `gamma = 0`: rotation about `(u^, 0, -1)` by angle
/// `tau sqrt(1 + u^2)`.
pub fn expm_closed(u_hat: f64, tau: f64) -> Matrix3<f64> {
    let k = 1.0 + u_hat * u_hat;
    let sk = k.sqrt();
    let (s, c) = (sk * tau).sin_cos();
    Matrix3::new(
        (u_hat * u_hat + c) / k,
        s / sk,
        u_hat / k * (c - 1.0),
        -s / sk,
        c,
        -u_hat / sk * s,
        u_hat / k * (c - 1.0),
        u_hat / sk * s,
        (1.0 + u_hat * u_hat * c) / k,
    )
}

/// One piecewise-constant segment: the propagator `e^{A dt}`, the offset
/// `g = int_0^dt e^{A s} ds b`, and the decomposition when available.
#[derive(Debug, Clone)]
pub struct Segment {
    pub hc: HatControls,
    pub tau: f64,
    pub decomposition: Option<SpectralDecomposition>,
    pub propagator: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

impl Segment {
    pub fn new(u: f64, n: f64, dt: f64, params: &SystemParams) -> Result<Self> {
        check_n(n)?;
        if dt.is_nan() || dt < 0.0 {
            return Err(GrapeError::InvalidGrid(format!("segment duration must be >= 0, got {dt}")));
        }
        Self::from_hat(hat_controls(u, n, params), dt, params)
    }

    /// Segment for already scaled controls; `dt` is in physical time.
    pub fn from_hat(hc: HatControls, dt: f64, params: &SystemParams) -> Result<Self> {
        if dt.is_nan() || dt < 0.0 {
            return Err(GrapeError::InvalidGrid(format!("segment duration must be >= 0, got {dt}")));
        }
        let tau = params.omega * dt;
        let decomposition = spectral_decompose(&hc)
            .ok()
            .filter(|d| d.reconstruction_residual(&hc) <= MAX_RECONSTRUCTION_RESIDUAL);
        let b = inhomogeneity(params);
        let (propagator, offset) = match &decomposition {
            Some(d) => {
                let offset = if params.gamma == 0.0 {
                    Vector3::zeros()
                } else {
                    let bc = b.map(|x| C64::new(x, 0.0));
                    (d.s * d.integral_lambda(tau) * d.s_inv * bc).map(|z| z.re) / params.omega
                };
                (d.expm(tau), offset)
            }
            None => numeric_segment(&hc, tau, &b, params.omega),
        };
        Ok(Self { hc, tau, decomposition, propagator, offset })
    }

    pub fn apply(&self, r: &Vector3<f64>) -> Vector3<f64> {
        self.propagator * r + self.offset
    }
}

/// Augmented 4x4 exponential `exp([[A_bar tau, b tau / omega], [0, 0]])`.
pub(crate) fn numeric_segment(hc: &HatControls, tau: f64, b: &Vector3<f64>, omega: f64) -> (Matrix3<f64>, Vector3<f64>) {
    let mut aug = Matrix4::zeros();
    aug.fixed_view_mut::<3, 3>(0, 0).copy_from(&(hc.scaled_generator() * tau));
    aug.fixed_view_mut::<3, 1>(0, 3).copy_from(&(b * (tau / omega)));
    let e = aug.exp();
    (e.fixed_view::<3, 3>(0, 0).into_owned(), e.fixed_view::<3, 1>(0, 3).into_owned())
}

/// `g = (e^{A dt} - I) A^-1 b`, the explicit form that needs invertible `A`.
pub fn offset_via_inverse(gen: &AffineGenerator, propagator: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let a_inv = gen.a.try_inverse()?;
    Some((propagator - Matrix3::identity()) * a_inv * gen.b)
}

/// `r_next = e^{A dt} r + g`; returns `(r_next, g)`.
pub fn step(r: &BlochVector, u: f64, n: f64, dt: f64, params: &SystemParams) -> Result<(BlochVector, Vector3<f64>)> {
    let seg = Segment::new(u, n, dt, params)?;
    Ok((BlochVector(seg.apply(&r.0)), seg.offset))
}

/// Trajectory `r^0 = r0, ..., r^M = r_T` under the grid's controls.
pub fn propagate(r0: &BlochVector, grid: &ControlGrid, params: &SystemParams) -> Result<Vec<BlochVector>> {
    let mut traj = Vec::with_capacity(grid.segments() + 1);
    traj.push(*r0);
    let mut r = r0.0;
    for k in 0..grid.segments() {
        let seg = Segment::new(grid.u()[k], grid.n(k), grid.dt(k), params)?;
        r = seg.apply(&r);
        traj.push(BlochVector(r));
    }
    Ok(traj)
}
