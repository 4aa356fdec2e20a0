//! Spectral densities of an incoherent environment and the decoherence
//! rates they induce.
//!
//! `gamma_ij(t) = gamma0_ij (n_{omega_ij}(t) + kappa_ij)` with `kappa = 1`
//! for emission and `0` for absorption; the mode integral over the coupling
//! is folded into the constant `gamma0_ij`.

use std::f64::consts::PI;

use crate::error::{GrapeError, Result};
use crate::nlevel::NLevelSystem;

/// Thermal photon density `omega^3 / (pi^2 (e^{beta omega} - 1))`.
/// Returns the limit `0` at `omega = 0`.
pub fn planck_density(omega: f64, beta: f64) -> f64 {
    if omega <= 0.0 {
        return 0.0;
    }
    let d = (beta * omega).exp_m1();
    if d.is_infinite() {
        return 0.0;
    }
    omega * omega * omega / (PI * PI * d)
}

/// Planck density times a sum of unit-peak Gaussian windows
/// `exp(-(omega - omega0)^2 / (2 variance))`.
pub fn filtered_density(omega: f64, beta: f64, centers: &[f64], variance: f64) -> f64 {
    let window: f64 = centers.iter().map(|c| (-(omega - c).powi(2) / (2.0 * variance)).exp()).sum();
    planck_density(omega, beta) * window
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpectralDensity {
    Planck { beta: f64 },
    FilteredPlanck { beta: f64, centers: Vec<f64>, variance: f64 },
    /// `beta(t)` tabulated at increasing `times`, linearly interpolated and
    /// held constant outside the table.
    TimeVaryingPlanck { times: Vec<f64>, betas: Vec<f64> },
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(GrapeError::InvalidDensity(format!("beta must be finite and > 0, got {beta}")));
    }
    Ok(())
}

impl SpectralDensity {
    pub fn planck(beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self::Planck { beta })
    }

    pub fn filtered(beta: f64, centers: Vec<f64>, variance: f64) -> Result<Self> {
        check_beta(beta)?;
        if !(variance.is_finite() && variance > 0.0) {
            return Err(GrapeError::InvalidDensity(format!("variance must be > 0, got {variance}")));
        }
        if centers.iter().any(|c| !c.is_finite()) {
            return Err(GrapeError::InvalidDensity("window centers must be finite".into()));
        }
        Ok(Self::FilteredPlanck { beta, centers, variance })
    }

    pub fn time_varying(times: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.len() != betas.len() {
            return Err(GrapeError::InvalidDensity("beta table needs matching non-empty columns".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(GrapeError::InvalidDensity("beta table times must increase strictly".into()));
        }
        for &b in &betas {
            check_beta(b)?;
        }
        Ok(Self::TimeVaryingPlanck { times, betas })
    }

    pub fn beta_at(&self, t: f64) -> f64 {
        match self {
            Self::Planck { beta } | Self::FilteredPlanck { beta, .. } => *beta,
            Self::TimeVaryingPlanck { times, betas } => {
                if t <= times[0] {
                    return betas[0];
                }
                let last = times.len() - 1;
                if t >= times[last] {
                    return betas[last];
                }
                let k = times.partition_point(|&x| x <= t) - 1;
                let a = (t - times[k]) / (times[k + 1] - times[k]);
                betas[k] + a * (betas[k + 1] - betas[k])
            }
        }
    }

    /// `n_omega(t)`.
    pub fn density(&self, omega: f64, t: f64) -> f64 {
        match self {
            Self::FilteredPlanck { beta, centers, variance } => filtered_density(omega, *beta, centers, *variance),
            _ => planck_density(omega, self.beta_at(t)),
        }
    }
}

/// One transition `lower < upper` with frequency `omega` and base rate `gamma0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub lower: usize,
    pub upper: usize,
    pub omega: f64,
    pub gamma0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateModel {
    transitions: Vec<Transition>,
}

impl RateModel {
    pub fn new(transitions: Vec<Transition>) -> Result<Self> {
        for tr in &transitions {
            if !(tr.gamma0.is_finite() && tr.gamma0 >= 0.0) {
                return Err(GrapeError::InvalidParams(format!("gamma0 must be >= 0, got {}", tr.gamma0)));
            }
            if !(tr.omega.is_finite() && tr.omega > 0.0) {
                return Err(GrapeError::InvalidParams(format!("transition frequency must be > 0, got {}", tr.omega)));
            }
        }
        Ok(Self { transitions })
    }

    /// Transitions of `sys` with `omega_ij = |E_j - E_i|` read off the
    /// diagonal of `H0`, each with the given base rate. Degenerate pairs
    /// are skipped.
    pub fn from_system(sys: &NLevelSystem, gamma0: f64) -> Result<Self> {
        let e: Vec<f64> = (0..sys.dim()).map(|i| sys.h0()[(i, i)].re).collect();
        let transitions = sys
            .transitions()
            .into_iter()
            .filter(|&(i, j)| e[j] != e[i])
            .map(|(i, j)| Transition { lower: i, upper: j, omega: (e[j] - e[i]).abs(), gamma0 })
            .collect();
        Self::new(transitions)
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionRates {
    pub lower: usize,
    pub upper: usize,
    /// `gamma0 (n + 1)`.
    pub emission: f64,
    /// `gamma0 n`.
    pub absorption: f64,
}

pub fn decoherence_rates(model: &RateModel, density: &SpectralDensity, t: f64) -> Vec<TransitionRates> {
    model
        .transitions()
        .iter()
        .map(|tr| {
            let n = density.density(tr.omega, t);
            TransitionRates {
                lower: tr.lower,
                upper: tr.upper,
                emission: tr.gamma0 * (n + 1.0),
                absorption: tr.gamma0 * n,
            }
        })
        .collect()
}

/// Incoherent control `n_m = n_omega(t_{m-1})`, sampled at the left end of
/// each segment.
pub fn density_to_control(density: &SpectralDensity, omega: f64, times: &[f64]) -> Vec<f64> {
    times[..times.len().saturating_sub(1)].iter().map(|&t| density.density(omega, t)).collect()
}

/// `points` equally spaced frequencies on `[lo, hi]`.
pub fn omega_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo && lo >= 0.0) || points < 2 {
        return Err(GrapeError::InvalidDensity(format!("bad frequency grid [{lo}, {hi}] with {points} points")));
    }
    Ok((0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect())
}

/// `(omega, n_omega(t))` rows.
pub fn spectrum_table(density: &SpectralDensity, omegas: &[f64], t: f64) -> Vec<(f64, f64)> {
    omegas.iter().map(|&w| (w, density.density(w, t))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn planck_examples() {
        let expect = 1.0 / (PI * PI * (1f64.exp() - 1.0));
        assert!((planck_density(1.0, 1.0) - expect).abs() < 1e-15);
        assert!((planck_density(1.0, 1.0) - 0.05897).abs() < 1e-5);
        assert!((planck_density(2.0, 1.0) - 0.126_868_422_594_437_5).abs() < 1e-15);
        assert_eq!(planck_density(0.0, 1.0), 0.0);
        let w = 1e-6;
        assert!((planck_density(w, 2.0) / (w * w / (PI * PI * 2.0)) - 1.0).abs() < 1e-5);
        assert_eq!(planck_density(1e3, 10.0), 0.0);
    }

    #[test]
    fn planck_peak_location() {
        // Root of x = 3 (1 - e^{-x}) by bisection.
        let (mut lo, mut hi) = (1.0_f64, 4.0_f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid - 3.0 * (1.0 - (-mid).exp()) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((lo - 2.8214).abs() < 1e-4);
        let p = planck_density(lo, 1.0);
        assert!(p > planck_density(lo - 1e-3, 1.0) && p > planck_density(lo + 1e-3, 1.0));
    }

    #[test]
    fn planck_integral_converges() {
        let beta = 1.0;
        let f = |w| planck_density(w, beta);
        let i1 = simpson(f, 0.0, 50.0 / beta, 20_000);
        let i2 = simpson(f, 0.0, 100.0 / beta, 40_000);
        assert!(((i2 - i1) / i2).abs() < 1e-10);
        assert!((i2 - PI * PI / 15.0).abs() < 1e-10);
    }

    #[test]
    fn filtered_examples() {
        assert_eq!(filtered_density(2.0, 1.0, &[2.0], 0.5), planck_density(2.0, 1.0));
        let far = filtered_density(10.0, 1.0, &[2.0], 0.5);
        assert!(far < 1e-10 * planck_density(10.0, 1.0));
        let near2 = filtered_density(2.0, 1.0, &[2.0, 6.0], 0.5);
        let near6 = filtered_density(6.0, 1.0, &[2.0, 6.0], 0.5);
        assert!(near2 > near6 && near6 > 0.0);
        assert!(SpectralDensity::filtered(1.0, vec![2.0], -0.5).is_err());
        assert!(SpectralDensity::planck(0.0).is_err());
    }

    #[test]
    fn non_negative_on_log_sweep() {
        let d = SpectralDensity::filtered(1.0, vec![2.0, 6.0], 0.5).unwrap();
        for k in 0..=900 {
            let w = 10f64.powf(-6.0 + k as f64 / 100.0);
            assert!(planck_density(w, 1.0) >= 0.0);
            assert!(d.density(w, 0.0) >= 0.0);
        }
    }

    #[test]
    fn rate_examples() {
        let model = RateModel::new(vec![Transition { lower: 0, upper: 1, omega: 1.0, gamma0: 0.3 }]).unwrap();
        let cold = SpectralDensity::planck(1e6).unwrap();
        let r = decoherence_rates(&model, &cold, 0.0)[0];
        assert_eq!((r.emission, r.absorption), (0.3, 0.0));

        // beta with n(omega = 1) = 1: e^{beta} - 1 = 1 / pi^2.
        let beta = (1.0 / (PI * PI)).ln_1p();
        let d = SpectralDensity::planck(beta).unwrap();
        let r = decoherence_rates(&model, &d, 0.0)[0];
        assert!((r.emission - 0.6).abs() < 1e-12 && (r.absorption - 0.3).abs() < 1e-12);
        assert!(RateModel::new(vec![Transition { lower: 0, upper: 1, omega: 1.0, gamma0: -1.0 }]).is_err());
    }

    #[test]
    fn time_varying_rates_follow_beta() {
        let d = SpectralDensity::time_varying(vec![0.0, 10.0], vec![0.5, 3.0]).unwrap();
        let model = RateModel::new(vec![Transition { lower: 0, upper: 1, omega: 1.5, gamma0: 1.0 }]).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=20 {
            let r = decoherence_rates(&model, &d, k as f64 * 0.5)[0];
            assert!(r.emission >= r.absorption);
            assert!(r.absorption < prev);
            prev = r.absorption;
        }
        assert_eq!(d.beta_at(-1.0), 0.5);
        assert_eq!(d.beta_at(5.0), 1.75);
        assert_eq!(d.beta_at(11.0), 3.0);
    }

    #[test]
    fn control_sampling() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.5).collect();
        let n = density_to_control(&SpectralDensity::planck(1.0).unwrap(), 2.0, &times);
        assert_eq!(n.len(), 10);
        assert!(n.iter().all(|&x| x == planck_density(2.0, 1.0)));

        let ramp = SpectralDensity::time_varying(vec![0.0, 5.0], vec![0.5, 2.0]).unwrap();
        let n = density_to_control(&ramp, 2.0, &times);
        assert!(n.windows(2).all(|p| p[1] < p[0]));
        assert_eq!(n[0], planck_density(2.0, 0.5));
    }

    #[test]
    fn rates_from_system_frequencies() {
        let sys = crate::nlevel::qubit_system(&crate::types::SystemParams::new(2.0, 0.1, 0.01).unwrap());
        let m = RateModel::from_system(&sys, 0.1).unwrap();
        assert_eq!(m.transitions(), &[Transition { lower: 0, upper: 1, omega: 2.0, gamma0: 0.1 }]);
    }

    #[test]
    fn grid_and_table() {
        let g = omega_grid(0.01, 12.0, 5).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(g[4], 12.0);
        assert!(omega_grid(1.0, 0.5, 5).is_err());
        let d = SpectralDensity::planck(1.0).unwrap();
        for (w, n) in spectrum_table(&d, &g, 0.0) {
            assert_eq!(n, planck_density(w, 1.0));
        }
    }
}
