use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ambient::{ConformalPerturbation, MetricDescriptor};
use crate::error::{Error, Result};
use crate::reduction::{OptimizerConfig, ReductionConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    VerifyModels,
    Spectrum,
    Estimates,
    Reduce,
    Sweep,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::VerifyModels,
        Suite::Spectrum,
        Suite::Estimates,
        Suite::Reduce,
        Suite::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::VerifyModels => "verify-models",
            Suite::Spectrum => "spectrum",
            Suite::Estimates => "estimates",
            Suite::Reduce => "reduce",
            Suite::Sweep => "sweep",
        }
    }

    /// `t` list used when the config gives none.
    pub fn default_t(self) -> Vec<f64> {
        match self {
            Suite::Estimates => vec![0.1, 0.05, 0.025],
            Suite::Sweep => vec![0.08, 0.04, 0.02],
            _ => vec![0.05],
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelDescriptor {
    Torus { radii: Vec<f64> },
    Ln { n: usize },
}

impl ModelDescriptor {
    pub fn label(&self) -> String {
        match self {
            ModelDescriptor::Torus { radii } => {
                let r: Vec<String> = radii.iter().map(|a| a.to_string()).collect();
                format!("torus_{}", r.join("_"))
            }
            ModelDescriptor::Ln { n } => format!("l{n}"),
        }
    }

    pub fn default_pair() -> Vec<ModelDescriptor> {
        vec![
            ModelDescriptor::Torus { radii: vec![1.0, 1.3] },
            ModelDescriptor::Ln { n: 2 },
        ]
    }
}

/// Thresholds of the suite assertions. Each is the bound of one acceptance
/// criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Max-norm of `d*α_H` on the models.
    pub stationarity: f64,
    /// Relative error of the `L_n` eigenvalues.
    pub spectrum: f64,
    /// Numerical-zero threshold for the kernel.
    pub kernel: f64,
    /// Required ratio between the first nonzero eigenvalue and `kernel`.
    pub gap_ratio: f64,
    /// Sine of the angle between a moment restriction and the kernel.
    pub moment_span: f64,
    /// Lower bound `−stability` on the spectrum.
    pub stability: f64,
    /// Relative error of the five-point second variation.
    pub second_variation: f64,
    /// Largest over smallest scaled sup-norm across the `t` list.
    pub estimate_spread: f64,
    pub moser_pullback: f64,
    pub moser_origin: f64,
    /// `‖ΠP^t(f)‖` and `|⟨f, b_i⟩|` at a converged solve.
    pub solve: f64,
    pub uniqueness: f64,
    pub scaling_slope: f64,
    /// Relative disagreement of the two gradients of `K^t`.
    pub identity: f64,
    /// Components of `dK^t` along `G`.
    pub g_directions: f64,
    pub gradient: f64,
    /// `‖d*α_H‖/‖α_H‖` of the constructed Lagrangian.
    pub geometric: f64,
    /// Relative error of the kernel-orthogonal block of `Q^t`.
    pub quadratic_form: f64,
    pub cross_terms: f64,
    /// Lower bound `−frame_block` on the frame block of `Q^t`.
    pub frame_block: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            stationarity: 1e-8,
            spectrum: 1e-4,
            kernel: 1e-5,
            gap_ratio: 100.0,
            moment_span: 1e-5,
            stability: 1e-6,
            second_variation: 1e-4,
            estimate_spread: 2.0,
            moser_pullback: 1e-6,
            moser_origin: 1e-8,
            solve: 1e-10,
            uniqueness: 1e-9,
            scaling_slope: 0.8,
            identity: 1e-3,
            g_directions: 1e-8,
            gradient: 1e-8,
            geometric: 1e-5,
            quadratic_form: 0.1,
            cross_terms: 1e-3,
            frame_block: 1e-8,
        }
    }
}

impl Tolerances {
    fn entries(&self) -> [(&'static str, f64); 20] {
        [
            ("stationarity", self.stationarity),
            ("spectrum", self.spectrum),
            ("kernel", self.kernel),
            ("gap_ratio", self.gap_ratio),
            ("moment_span", self.moment_span),
            ("stability", self.stability),
            ("second_variation", self.second_variation),
            ("estimate_spread", self.estimate_spread),
            ("moser_pullback", self.moser_pullback),
            ("moser_origin", self.moser_origin),
            ("solve", self.solve),
            ("uniqueness", self.uniqueness),
            ("scaling_slope", self.scaling_slope),
            ("identity", self.identity),
            ("g_directions", self.g_directions),
            ("gradient", self.gradient),
            ("geometric", self.geometric),
            ("quadratic_form", self.quadratic_form),
            ("cross_terms", self.cross_terms),
            ("frame_block", self.frame_block),
        ]
    }
}

/// Parameters of the reduction that are not fixed by the model, metric and
/// grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub chart_radius: f64,
    pub epsilon: f64,
    pub solve_tolerance: f64,
    pub max_iterations: usize,
    pub newton: bool,
    pub frame_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let r = ReductionConfig::default();
        Self {
            chart_radius: r.chart_radius,
            epsilon: r.epsilon,
            solve_tolerance: r.solve_tolerance,
            max_iterations: r.max_iterations,
            newton: r.newton,
            frame_step: r.frame_step,
        }
    }
}

/// The exact perturbation `ω₀ + ε·d(φλ)`, `φ = |z|² + κz₀²z₁`, integrated by
/// the Moser check, and its sample lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoserSettings {
    pub epsilon: f64,
    pub kappa: f64,
    pub sample_radius: f64,
    pub per_axis: usize,
}

impl Default for MoserSettings {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            kappa: 0.5,
            sample_radius: 0.5,
            per_axis: 3,
        }
    }
}

impl MoserSettings {
    pub fn form(&self, dim: usize) -> ConformalPerturbation {
        ConformalPerturbation {
            dim,
            epsilon: self.epsilon,
            kappa: self.kappa,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// When present, must name the suite requested on the command line.
    pub suite: Option<Suite>,
    /// `None` runs both default models where a suite accepts either.
    pub model: Option<ModelDescriptor>,
    pub metric: MetricDescriptor,
    pub grid_sizes: Vec<usize>,
    /// `None` selects the suite default.
    pub t: Option<Vec<f64>>,
    /// Master seed of every random draw.
    pub seed: u64,
    /// Optimization starts of `reduce`.
    pub starts: usize,
    /// Random frames of the gradient-identity and estimate checks.
    pub frames: usize,
    /// Random test functions of the second-variation check.
    pub test_functions: usize,
    pub tolerances: Tolerances,
    pub solver: SolverSettings,
    pub optimizer: OptimizerConfig,
    pub moser: MoserSettings,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            suite: None,
            model: None,
            metric: ReductionConfig::default().metric,
            grid_sizes: vec![32],
            t: None,
            seed: 7,
            starts: 3,
            frames: 5,
            test_functions: 10,
            tolerances: Tolerances::default(),
            solver: SolverSettings::default(),
            optimizer: OptimizerConfig::default(),
            moser: MoserSettings::default(),
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn t_values(&self, suite: Suite) -> Vec<f64> {
        self.t.clone().unwrap_or_else(|| suite.default_t())
    }

    /// Models a suite runs on, in order.
    pub fn models(&self) -> Vec<ModelDescriptor> {
        match &self.model {
            Some(m) => vec![m.clone()],
            None => ModelDescriptor::default_pair(),
        }
    }

    /// Torus radii of the reduction suites.
    pub fn torus_radii(&self) -> Result<Vec<f64>> {
        match &self.model {
            None => Ok(vec![1.0, 1.3]),
            Some(ModelDescriptor::Torus { radii }) => Ok(radii.clone()),
            Some(ModelDescriptor::Ln { .. }) => Err(Error::Config(
                "the reduction is implemented for product tori only".into(),
            )),
        }
    }

    pub fn reduction_config(&self, grid_size: usize) -> Result<ReductionConfig> {
        let s = &self.solver;
        let config = ReductionConfig {
            radii: self.torus_radii()?,
            grid_size,
            metric: self.metric.clone(),
            chart_radius: s.chart_radius,
            epsilon: s.epsilon,
            solve_tolerance: s.solve_tolerance,
            max_iterations: s.max_iterations,
            newton: s.newton,
            frame_step: s.frame_step,
        };
        config.validate()?;
        Ok(config)
    }

    /// Checks everything a suite relies on before any work starts.
    pub fn validate(&self, suite: Suite) -> Result<()> {
        if let Some(s) = self.suite {
            if s != suite {
                return Err(Error::Config(format!(
                    "config is for suite {s}, but {suite} was requested"
                )));
            }
        }
        for (name, v) in self.tolerances.entries() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("tolerance {name} must be positive, got {v}")));
            }
        }
        if self.grid_sizes.is_empty() || self.grid_sizes.iter().any(|&g| g < 8 || g % 2 != 0) {
            return Err(Error::Config(format!(
                "grid_sizes must be even and at least 8, got {:?}",
                self.grid_sizes
            )));
        }
        let ts = self.t_values(suite);
        if ts.is_empty() || ts.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::Config(format!("t values must be positive, got {ts:?}")));
        }
        for model in self.models() {
            match model {
                ModelDescriptor::Torus { radii } => {
                    if radii.len() != 2 || radii.iter().any(|&a| !(a > 0.0)) {
                        return Err(Error::Config(format!(
                            "torus radii must be two positive numbers, got {radii:?}"
                        )));
                    }
                }
                ModelDescriptor::Ln { n } => {
                    if n != 2 {
                        return Err(Error::Config(format!("only L_2 is discretized, got n = {n}")));
                    }
                }
            }
        }
        self.metric.build(2)?;
        match suite {
            Suite::Reduce | Suite::Sweep => {
                let config = self.reduction_config(self.grid_sizes[0])?;
                let t0 = config.t_max();
                if let Some(&t) = ts.iter().find(|&&t| t > t0) {
                    return Err(Error::Config(format!("t = {t} exceeds t₀ = {t0}")));
                }
                if suite == Suite::Reduce && self.starts == 0 {
                    return Err(Error::Config("reduce needs at least one start".into()));
                }
                if suite == Suite::Sweep {
                    let monotone = ts.windows(2).all(|w| w[0] > w[1])
                        || ts.windows(2).all(|w| w[0] < w[1]);
                    if ts.len() < 2 || !monotone {
                        return Err(Error::Config(format!(
                            "sweep needs at least two strictly monotone t values, got {ts:?}"
                        )));
                    }
                }
            }
            Suite::Estimates => {
                if self.frames == 0 {
                    return Err(Error::Config("estimates needs at least one frame".into()));
                }
                let m = &self.moser;
                if !(m.sample_radius > 0.0 && m.per_axis >= 2 && m.kappa.is_finite() && m.epsilon.is_finite()) {
                    return Err(Error::Config("invalid moser settings".into()));
                }
            }
            Suite::Spectrum => {
                if self.test_functions == 0 {
                    return Err(Error::Config("spectrum needs at least one test function".into()));
                }
            }
            Suite::VerifyModels => {}
        }
        Ok(())
    }
}
