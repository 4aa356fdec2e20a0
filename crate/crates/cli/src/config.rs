//! Run configuration: the JSON schema, built-in presets, and resolution
//! into library objects.

use nalgebra::DMatrix;
use opengrape::nlevel::{qubit_system, NLevelGrid, NLevelSystem};
use opengrape::optimizer::{sine_gaussian_guess, OptimizerConfig};
use opengrape::{density_from_bloch, BlochVector, ControlGrid, DensityMatrix, Objective, SystemParams, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub initial_state: Option<StateSpec>,
    #[serde(default)]
    pub objective: Option<ObjectiveSpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub initial_guess: GuessSpec,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub spectrum: Option<SpectrumSpec>,
    #[serde(default)]
    pub test_hooks: TestHooks,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Analytic Bloch-ball propagation (qubit systems only).
    #[default]
    Bloch,
    /// Dense superoperator propagation.
    Superoperator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Qubit {
        omega: f64,
        mu: f64,
        gamma: f64,
    },
    /// Real symmetric `h0` and control operators; `einstein` holds the
    /// coefficients on its strict upper triangle.
    Nlevel {
        h0: Vec<Vec<f64>>,
        controls: Vec<Vec<Vec<f64>>>,
        einstein: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StateSpec {
    Bloch([f64; 3]),
    Diagonal(Vec<f64>),
    Matrix { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    StateTransfer { target: StateSpec },
    Observable { re: Vec<Vec<f64>>, im: Vec<Vec<f64>> },
    UhlmannJozsa { target: StateSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Uniform { total_time: f64, segments: usize },
    Breakpoints(Vec<f64>),
}

/// Either one value per segment or one row of values per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Rows {
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

impl Rows {
    fn nested(&self) -> Vec<Vec<f64>> {
        match self {
            Rows::Flat(v) => v.iter().map(|x| vec![*x]).collect(),
            Rows::Nested(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GuessSpec {
    /// `u = sin(2 pi t / T)`, `w = exp(-4 (t / T - 1/2)^2)` at left endpoints.
    #[default]
    SineGaussian,
    Constant {
        u: f64,
        w: f64,
    },
    Explicit {
        u: Rows,
        w: Rows,
    },
    /// Uniform in `[-u_max, u_max]` and `[-w_max, w_max]`, drawn from `seed`.
    Random {
        u_max: f64,
        w_max: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSpec {
    pub h0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iters: usize,
    pub min_step: f64,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::from(OptimizerConfig::default())
    }
}

impl From<OptimizerConfig> for OptimizerSpec {
    fn from(c: OptimizerConfig) -> Self {
        Self { h0: c.h0, alpha: c.alpha, beta: c.beta, eps1: c.eps1, eps2: c.eps2, max_iters: c.max_iters, min_step: c.min_step }
    }
}

impl From<OptimizerSpec> for OptimizerConfig {
    fn from(s: OptimizerSpec) -> Self {
        Self { h0: s.h0, alpha: s.alpha, beta: s.beta, eps1: s.eps1, eps2: s.eps2, max_iters: s.max_iters, min_step: s.min_step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumSpec {
    pub density: DensitySpec,
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    #[serde(default)]
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensitySpec {
    Planck { beta: f64 },
    Filtered { beta: f64, centers: Vec<f64>, variance: f64 },
    TimeVarying { times: Vec<f64>, betas: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestHooks {
    /// Scales the analytic gradient by 1.01 before `gradcheck` compares it.
    pub corrupt_gradient: bool,
}

pub const PRESETS: [&str; 6] = [
    "fig3-reachable",
    "fig3-reachable-m100",
    "fig4-unreachable-plus",
    "fig4-unreachable-minus",
    "fig1-spectrum",
    "planck-spectrum",
];

fn reference_qubit() -> SystemSpec {
    let p = SystemParams::reference();
    SystemSpec::Qubit { omega: p.omega, mu: p.mu, gamma: p.gamma }
}

fn spectrum_only(density: DensitySpec) -> RunConfig {
    RunConfig {
        version: SCHEMA_VERSION,
        seed: 0,
        backend: Backend::Bloch,
        system: None,
        initial_state: None,
        objective: None,
        grid: None,
        initial_guess: GuessSpec::SineGaussian,
        optimizer: OptimizerSpec::default(),
        spectrum: Some(SpectrumSpec { density, omega_min: 0.01, omega_max: 12.0, points: 400, t: 0.0 }),
        test_hooks: TestHooks::default(),
    }
}

/// Transfer from `(0,0,-1)` to `diag(3/4, 1/4)`, and the unreachable
/// transfers from `(0,0,1)` to `(+-1, 0, 0)`.
pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let qubit = |r0: [f64; 3], target: [f64; 3], segments: usize, optimizer: OptimizerConfig| RunConfig {
        version: SCHEMA_VERSION,
        seed: 0,
        backend: Backend::Bloch,
        system: Some(reference_qubit()),
        initial_state: Some(StateSpec::Bloch(r0)),
        objective: Some(ObjectiveSpec::StateTransfer { target: StateSpec::Bloch(target) }),
        grid: Some(GridSpec::Uniform { total_time: 5.0, segments }),
        initial_guess: GuessSpec::SineGaussian,
        optimizer: optimizer.into(),
        spectrum: None,
        test_hooks: TestHooks::default(),
    };
    // The gradient stop is for the unreachable runs only; with it active
    // the reachable descent halts near F ~ 1e-2.
    let reachable = |h0| OptimizerConfig { h0, eps1: 1e-8, eps2: 0.0, max_iters: 200, ..OptimizerConfig::default() };
    let unreachable = OptimizerConfig { h0: 1.0, ..OptimizerConfig::default() };
    Ok(match name {
        "fig3-reachable" => qubit([0.0, 0.0, -1.0], [0.0, 0.0, 0.5], 10, reachable(10.0)),
        "fig3-reachable-m100" => qubit([0.0, 0.0, -1.0], [0.0, 0.0, 0.5], 100, reachable(100.0)),
        "fig4-unreachable-plus" => qubit([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 10, unreachable),
        "fig4-unreachable-minus" => qubit([0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], 10, unreachable),
        "fig1-spectrum" => spectrum_only(DensitySpec::Filtered { beta: 1.0, centers: vec![2.0, 6.0], variance: 0.5 }),
        "planck-spectrum" => spectrum_only(DensitySpec::Planck { beta: 1.0 }),
        other => {
            return Err(CliError::Config(format!("unknown preset `{other}`; available: {}", PRESETS.join(", "))));
        }
    })
}

pub fn parse(text: &str) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
    if cfg.version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "config: unsupported version {} (expected {SCHEMA_VERSION})",
            cfg.version
        )));
    }
    Ok(cfg)
}

fn invalid(what: &str) -> impl Fn(opengrape::GrapeError) -> CliError + '_ {
    move |e| CliError::Config(format!("{what}: {e}"))
}

fn real_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<C64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{what}: expected a non-empty square matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j], 0.0)))
}

fn complex_matrix(re: &[Vec<f64>], im: &[Vec<f64>], what: &str) -> Result<DMatrix<C64>, CliError> {
    let r = real_matrix(re, what)?;
    let i = real_matrix(im, what)?;
    if r.shape() != i.shape() {
        return Err(CliError::Config(format!("{what}: re and im shapes differ")));
    }
    Ok(r.zip_map(&i, |a, b| C64::new(a.re, b.re)))
}

fn state(spec: &StateSpec, dim: usize, what: &str) -> Result<DensityMatrix, CliError> {
    let rho = match spec {
        StateSpec::Bloch(r) => {
            if dim != 2 {
                return Err(CliError::Config(format!("{what}: Bloch vectors need a two-level system, got N = {dim}")));
            }
            density_from_bloch(&BlochVector::new(r[0], r[1], r[2])).map_err(invalid(what))?
        }
        StateSpec::Diagonal(p) => DensityMatrix::diagonal(p).map_err(invalid(what))?,
        StateSpec::Matrix { re, im } => DensityMatrix::new(complex_matrix(re, im, what)?).map_err(invalid(what))?,
    };
    if rho.dim() != dim {
        return Err(CliError::Config(format!("{what}: dimension {} does not match the system's {dim}", rho.dim())));
    }
    Ok(rho)
}

/// The resolved system: analytic qubit parameters or an N-level model.
#[derive(Debug, Clone)]
pub enum System {
    Qubit(SystemParams),
    NLevel(NLevelSystem),
}

impl System {
    pub fn dim(&self) -> usize {
        match self {
            System::Qubit(_) => 2,
            System::NLevel(s) => s.dim(),
        }
    }

    pub fn control_count(&self) -> usize {
        match self {
            System::Qubit(_) => 1,
            System::NLevel(s) => s.controls().len(),
        }
    }

    pub fn transition_count(&self) -> usize {
        match self {
            System::Qubit(_) => 1,
            System::NLevel(s) => s.transitions().len(),
        }
    }
}

/// Everything a simulation, optimization or gradient check needs.
#[derive(Debug, Clone)]
pub struct Problem {
    pub system: System,
    pub backend: Backend,
    pub rho0: DensityMatrix,
    pub grid: NLevelGrid,
    pub objective: Option<Objective>,
    pub optimizer: OptimizerConfig,
}

impl Problem {
    /// The qubit view used by the Bloch backend.
    pub fn qubit(&self) -> Option<(SystemParams, BlochVector, ControlGrid)> {
        match (&self.system, self.backend) {
            (System::Qubit(p), Backend::Bloch) => {
                let r0 = opengrape::bloch_from_density(&self.rho0).ok()?;
                let u = self.grid.u().iter().map(|r| r[0]).collect();
                let w = self.grid.w().iter().map(|r| r[0]).collect();
                let grid = ControlGrid::new(self.grid.times().to_vec(), u, w).ok()?;
                Some((*p, r0, grid))
            }
            _ => None,
        }
    }

    /// The N-level view used by the superoperator backend.
    pub fn nlevel_system(&self) -> NLevelSystem {
        match &self.system {
            System::Qubit(p) => qubit_system(p),
            System::NLevel(s) => s.clone(),
        }
    }
}

fn breakpoints(spec: &GridSpec) -> Result<Vec<f64>, CliError> {
    match spec {
        GridSpec::Uniform { total_time, segments } => {
            if *segments == 0 {
                return Err(CliError::Config("grid: segments must be at least 1".into()));
            }
            let g = ControlGrid::uniform(*total_time, *segments).map_err(invalid("grid"))?;
            Ok(g.times().to_vec())
        }
        GridSpec::Breakpoints(t) => {
            if t.len() < 2 {
                return Err(CliError::Config("grid: need at least two breakpoints".into()));
            }
            Ok(t.clone())
        }
    }
}

fn guess(spec: &GuessSpec, times: &[f64], controls: usize, transitions: usize, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), CliError> {
    let m = times.len() - 1;
    Ok(match spec {
        GuessSpec::SineGaussian => {
            let (u, w) = sine_gaussian_guess(times);
            (u.iter().map(|x| vec![*x; controls]).collect(), w.iter().map(|x| vec![*x; transitions]).collect())
        }
        GuessSpec::Constant { u, w } => (vec![vec![*u; controls]; m], vec![vec![*w; transitions]; m]),
        GuessSpec::Explicit { u, w } => {
            let (u, w) = (u.nested(), w.nested());
            if u.len() != m || w.len() != m {
                return Err(CliError::Config(format!(
                    "initial_guess: {m} segments need {m} rows, got {} (u) and {} (w)",
                    u.len(),
                    w.len()
                )));
            }
            if u.iter().any(|r| r.len() != controls) || w.iter().any(|r| r.len() != transitions) {
                return Err(CliError::Config(format!(
                    "initial_guess: rows need {controls} coherent and {transitions} incoherent values"
                )));
            }
            (u, w)
        }
        GuessSpec::Random { u_max, w_max } => {
            if !(*u_max >= 0.0 && *w_max >= 0.0 && u_max.is_finite() && w_max.is_finite()) {
                return Err(CliError::Config("initial_guess: u_max and w_max must be finite and >= 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |a: f64| if a == 0.0 { 0.0 } else { rng.random_range(-a..=a) };
            let u = (0..m).map(|_| (0..controls).map(|_| draw(*u_max)).collect()).collect();
            let w = (0..m).map(|_| (0..transitions).map(|_| draw(*w_max)).collect()).collect();
            (u, w)
        }
    })
}

impl RunConfig {
    pub fn resolve_system(&self) -> Result<System, CliError> {
        let spec = self.system.as_ref().ok_or_else(|| CliError::Config("config: missing `system`".into()))?;
        let system = match spec {
            SystemSpec::Qubit { omega, mu, gamma } => {
                System::Qubit(SystemParams::new(*omega, *mu, *gamma).map_err(invalid("system"))?)
            }
            SystemSpec::Nlevel { h0, controls, einstein } => {
                let h0 = real_matrix(h0, "system.h0")?;
                let controls =
                    controls.iter().map(|c| real_matrix(c, "system.controls")).collect::<Result<Vec<_>, _>>()?;
                let a = real_matrix(einstein, "system.einstein")?.map(|z| z.re);
                System::NLevel(NLevelSystem::new(h0, controls, a).map_err(invalid("system"))?)
            }
        };
        if self.backend == Backend::Bloch && !matches!(system, System::Qubit(_)) {
            return Err(CliError::Config("backend: `bloch` needs a qubit system; use `superoperator`".into()));
        }
        Ok(system)
    }

    pub fn resolve(&self) -> Result<Problem, CliError> {
        let system = self.resolve_system()?;
        let dim = system.dim();
        let rho0 = state(
            self.initial_state.as_ref().ok_or_else(|| CliError::Config("config: missing `initial_state`".into()))?,
            dim,
            "initial_state",
        )?;
        let times = breakpoints(self.grid.as_ref().ok_or_else(|| CliError::Config("config: missing `grid`".into()))?)?;
        let (u, w) = guess(&self.initial_guess, &times, system.control_count(), system.transition_count(), self.seed)?;
        let grid = NLevelGrid::new(times, u, w).map_err(invalid("grid"))?;
        let objective = match &self.objective {
            None => None,
            Some(ObjectiveSpec::StateTransfer { target }) => {
                Some(Objective::StateTransfer(state(target, dim, "objective.target")?))
            }
            Some(ObjectiveSpec::UhlmannJozsa { target }) => {
                Some(Objective::UhlmannJozsa(state(target, dim, "objective.target")?))
            }
            Some(ObjectiveSpec::Observable { re, im }) => {
                let o = complex_matrix(re, im, "objective")?;
                if o.nrows() != dim {
                    return Err(CliError::Config(format!("objective: observable is {}x{0}, system is N = {dim}", o.nrows())));
                }
                Some(Objective::observable(o).map_err(invalid("objective"))?)
            }
        };
        let optimizer: OptimizerConfig = self.optimizer.into();
        optimizer.validate().map_err(invalid("optimizer"))?;
        Ok(Problem { system, backend: self.backend, rho0, grid, objective, optimizer })
    }
}
