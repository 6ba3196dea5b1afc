use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use starflow::flow::{built_in, Lorenz, SharedSystem, UserSystem, UserSystemConfig};
use starflow::measures::BoxBounds;

use crate::error::CliError;

/// Every free constant of the pipeline. Fields left out of the TOML take
/// the defaults below; `None` on an `auto` field means it is derived at run
/// time and logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    pub system: SystemConfig,
    #[serde(default)]
    pub orbit: OrbitConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub strings: StringsConfig,
    #[serde(default)]
    pub shadow: ShadowConfig,
    #[serde(default)]
    pub measures: MeasuresConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// "lorenz", "hopf", or any name when `equations` are given.
    pub name: String,
    /// Lorenz parameters (σ, ρ, β).
    #[serde(default)]
    pub lorenz: Option<[f64; 3]>,
    /// A user system: component expressions in x1..xd.
    #[serde(default)]
    pub equations: Option<Vec<String>>,
    #[serde(default)]
    pub parameters: std::collections::BTreeMap<String, f64>,
    #[serde(default)]
    pub singularities: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrbitConfig {
    pub seed_state: Vec<f64>,
    /// Discarded transient before the window.
    pub warmup: f64,
    pub window: f64,
    /// Sampling stride Δ.
    pub stride: f64,
    pub tol: f64,
}

impl Default for OrbitConfig {
    fn default() -> Self {
        OrbitConfig { seed_state: vec![1.0, 1.0, 1.0], warmup: 20.0, window: 2000.0, stride: 0.01, tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Smallest admissible min |λ_i|.
    pub min_gap: f64,
    /// Spectral ε of the block construction; auto = χ/8.
    pub epsilon: Option<f64>,
    /// Horizon of the finite-window splitting used as a cross-check.
    pub agreement_horizon: f64,
    pub agreement_tolerance: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { min_gap: 0.05, epsilon: None, agreement_horizon: 10.0, agreement_tolerance: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StringsConfig {
    /// Rate η of the Pliss selection; auto = `eta_fraction` · gap.
    pub eta: Option<f64>,
    pub eta_fraction: f64,
    /// Largest partition step of the Pliss selection.
    pub t_gap: f64,
    /// Base block length T₀.
    pub t0: f64,
    /// Block constant C; auto = smallest power of two reaching `target_fraction`.
    pub c: Option<f64>,
    pub target_fraction: f64,
    pub c_max: f64,
    /// Forward horizon of each membership test.
    pub horizon: f64,
}

impl Default for StringsConfig {
    fn default() -> Self {
        StringsConfig {
            eta: None,
            eta_fraction: 0.3,
            t_gap: 1.0,
            t0: 1.0,
            c: None,
            target_fraction: 0.9,
            c_max: 1024.0,
            horizon: 200.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowConfig {
    /// Decreasing close-return gaps D. Bucket k holds returns with gap in
    /// [D_{k+1}, D_k), the last one [0, D_last).
    pub d_schedule: Vec<f64>,
    /// Closest candidates closed up per bucket.
    pub candidates_per_bucket: usize,
    /// ε of the shadowing check (θ′ band and scaled distance).
    pub verify_epsilon: f64,
    /// Acceptance bound on the multiple-shooting residual.
    pub max_residual: f64,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        ShadowConfig { d_schedule: vec![1.0, 0.5, 0.25], candidates_per_bucket: 3, verify_epsilon: 0.2, max_residual: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasuresConfig {
    /// Number of test functions.
    pub n: usize,
    /// Target ε for d_M.
    pub epsilon: f64,
    /// Test-function box; defaults per built-in system.
    pub box_lower: Option<Vec<f64>>,
    pub box_upper: Option<Vec<f64>>,
}

impl Default for MeasuresConfig {
    fn default() -> Self {
        MeasuresConfig { n: 6, epsilon: 0.1, box_lower: None, box_upper: None }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl PipelineConfig {
    pub fn lorenz() -> Self {
        PipelineConfig {
            system: SystemConfig {
                name: "lorenz".into(),
                lorenz: None,
                equations: None,
                parameters: Default::default(),
                singularities: Vec::new(),
            },
            orbit: OrbitConfig::default(),
            spectrum: SpectrumConfig::default(),
            strings: StringsConfig::default(),
            shadow: ShadowConfig::default(),
            measures: MeasuresConfig::default(),
            out: default_out(),
        }
    }

    /// Hopf normal form: ten periods of the unit circle after a warm-up.
    pub fn hopf() -> Self {
        let mut c = Self::lorenz();
        c.system.name = "hopf".into();
        c.orbit = OrbitConfig { seed_state: vec![0.5, 0.0, 0.3], warmup: 30.0, window: 20.0 * std::f64::consts::PI, stride: 0.01, tol: 1e-12 };
        c.measures.epsilon = 0.05;
        c
    }

    pub fn from_toml(src: &str) -> Result<Self, CliError> {
        let cfg: PipelineConfig = toml::from_str(src).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let src = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_toml(&src)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Positivity and ordering constraints.
    pub fn validate(&self) -> Result<(), CliError> {
        let o = &self.orbit;
        let positive = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(bad(format!("{name} must be positive, got {v}"))) };
        positive("orbit.window", o.window)?;
        positive("orbit.stride", o.stride)?;
        positive("orbit.tol", o.tol)?;
        if !(o.warmup >= 0.0) {
            return Err(bad("orbit.warmup must be nonnegative"));
        }
        if o.stride >= o.window {
            return Err(bad("orbit.stride must be shorter than the window"));
        }
        if o.seed_state.iter().any(|v| !v.is_finite()) {
            return Err(bad("orbit.seed_state must be finite"));
        }
        positive("spectrum.min_gap", self.spectrum.min_gap)?;
        positive("spectrum.agreement_horizon", self.spectrum.agreement_horizon)?;
        positive("spectrum.agreement_tolerance", self.spectrum.agreement_tolerance)?;
        if let Some(e) = self.spectrum.epsilon {
            positive("spectrum.epsilon", e)?;
        }
        let s = &self.strings;
        if let Some(eta) = s.eta {
            positive("strings.eta", eta)?;
        }
        positive("strings.eta_fraction", s.eta_fraction)?;
        positive("strings.t_gap", s.t_gap)?;
        positive("strings.t0", s.t0)?;
        positive("strings.horizon", s.horizon)?;
        if let Some(c) = s.c {
            if !(c >= 1.0) {
                return Err(bad(format!("strings.c must be at least 1, got {c}")));
            }
        }
        if !(s.target_fraction > 0.0 && s.target_fraction <= 1.0) {
            return Err(bad("strings.target_fraction must lie in (0, 1]"));
        }
        if !(s.c_max >= 1.0) {
            return Err(bad("strings.c_max must be at least 1"));
        }
        let d = &self.shadow.d_schedule;
        if d.is_empty() || d.iter().any(|v| !(*v > 0.0)) || d.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad(format!("shadow.d_schedule must be positive and strictly decreasing, got {d:?}")));
        }
        if self.shadow.candidates_per_bucket == 0 {
            return Err(bad("shadow.candidates_per_bucket must be at least 1"));
        }
        if !(self.shadow.verify_epsilon > 0.0 && self.shadow.verify_epsilon < 1.0) {
            return Err(bad("shadow.verify_epsilon must lie in (0, 1)"));
        }
        positive("shadow.max_residual", self.shadow.max_residual)?;
        if self.measures.n == 0 || self.measures.n > 1000 {
            return Err(bad("measures.n must lie in 1..=1000"));
        }
        positive("measures.epsilon", self.measures.epsilon)?;
        if self.measures.box_lower.is_some() != self.measures.box_upper.is_some() {
            return Err(bad("measures.box_lower and measures.box_upper go together"));
        }
        let system = self.build_system()?;
        if o.seed_state.len() != system.dim() {
            return Err(bad(format!("seed_state has {} entries, system dimension is {}", o.seed_state.len(), system.dim())));
        }
        let bounds = self.bounds(&system)?;
        if bounds.dim() != system.dim() {
            return Err(bad("test-function box dimension does not match the system"));
        }
        Ok(())
    }

    pub fn build_system(&self) -> Result<SharedSystem, CliError> {
        let sys = &self.system;
        if let Some(equations) = &sys.equations {
            let user = UserSystem::new(UserSystemConfig {
                name: sys.name.clone(),
                dim: equations.len(),
                equations: equations.clone(),
                parameters: sys.parameters.clone(),
                singularities: sys.singularities.clone(),
            })
            .map_err(|e| bad(e.to_string()))?;
            return Ok(Arc::new(user));
        }
        if sys.name == "lorenz" {
            if let Some([sigma, rho, beta]) = sys.lorenz {
                return Ok(Arc::new(Lorenz { sigma, rho, beta }));
            }
        }
        built_in(&sys.name).ok_or_else(|| bad(format!("unknown system {:?}; give equations for a user system", sys.name)))
    }

    /// The test-function box: configured, or the default of a built-in system.
    pub fn bounds(&self, system: &SharedSystem) -> Result<BoxBounds, CliError> {
        match (&self.measures.box_lower, &self.measures.box_upper) {
            (Some(lo), Some(hi)) => BoxBounds::new(lo.clone(), hi.clone()).map_err(|e| bad(e.to_string())),
            _ => match system.name() {
                "lorenz" => Ok(BoxBounds::lorenz()),
                "hopf" => Ok(BoxBounds::hopf()),
                other => Err(bad(format!("system {other} has no default box; set measures.box_lower/box_upper"))),
            },
        }
    }
}
