//! Experiment configuration (TOML).

use crate::fields::GridSpec;
use crate::gibbs::Observable;
use crate::kernels::{make_cutoff, CutOff, CutOffKind};
use crate::potentials::{builtin_potential, Potential, PotentialFamily};
use crate::solver::SolveConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Smallest replica count accepted for a statistical claim.
pub const MIN_REPLICAS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn invalid(path: &str, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutOffName {
    ExpSqrt,
    FlatTop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutOffConfig {
    pub kind: CutOffName,
    pub b: f64,
    /// Flat-top radius; ignored for `exp-sqrt`.
    #[serde(default)]
    pub radius: f64,
}

impl CutOffConfig {
    pub fn kind(&self) -> CutOffKind {
        match self.kind {
            CutOffName::ExpSqrt => CutOffKind::ExpSqrt,
            CutOffName::FlatTop => CutOffKind::FlatTop {
                radius: self.radius,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservableSpec {
    /// Monomials `y_c^p`, `1 ≤ p ≤ max_degree`, in every component.
    pub max_degree: u32,
    /// Histogram bins of component 0.
    pub bins: usize,
    /// Half-width of the histogram window; defaults to four Gaussian standard deviations.
    pub bin_half_width: Option<f64>,
    pub extra: Vec<Observable>,
}

impl Default for ObservableSpec {
    fn default() -> Self {
        Self {
            max_degree: 4,
            bins: 32,
            bin_half_width: None,
            extra: vec![Observable::One],
        }
    }
}

impl ObservableSpec {
    pub fn half_width(&self, m2: f64) -> f64 {
        self.bin_half_width
            .unwrap_or(4.0 / (4.0 * std::f64::consts::PI * m2).sqrt())
    }

    pub fn moment_list(&self, n: usize) -> Vec<Observable> {
        let mut out = self.extra.clone();
        out.extend(Observable::monomials(n, self.max_degree));
        out
    }

    pub fn bin_list(&self, m2: f64) -> Vec<Observable> {
        if self.bins == 0 {
            return Vec::new();
        }
        Observable::bins(0, self.half_width(m2), self.bins)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    /// Also dump `φ` of the first replica in the binary field format.
    pub dump_first_field: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub grid: GridSpec,
    pub potential: PotentialFamily,
    pub cutoff: CutOffConfig,
    #[serde(default)]
    pub solver: SolveConfig,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub observables: ObservableSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

/// Validated, built objects of a config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub potential: Potential,
    pub cutoff: CutOff,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<Resolved, ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!(
                    "unsupported version {} (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        self.grid.validate().map_err(|e| invalid("grid", e))?;
        let potential =
            builtin_potential(self.potential.clone(), self.grid.components, self.grid.m2)
                .map_err(|e| invalid("potential", e))?;
        let cutoff = make_cutoff(self.cutoff.kind(), self.cutoff.b, self.grid.m2)
            .map_err(|e| invalid("cutoff", e))?;
        self.solver.validate().map_err(|e| invalid("solver", e))?;
        if self.replicas < MIN_REPLICAS {
            return Err(invalid(
                "replicas",
                format!("{} is below the minimum {MIN_REPLICAS}", self.replicas),
            ));
        }
        if self.observables.max_degree > 8 {
            return Err(invalid("observables.max_degree", "at most 8"));
        }
        if let Some(w) = self.observables.bin_half_width {
            if !(w > 0.0) {
                return Err(invalid(
                    "observables.bin_half_width",
                    format!("{w} must be positive"),
                ));
            }
        }
        for (i, h) in self.observables.extra.iter().enumerate() {
            if h.component().is_some_and(|c| c >= self.grid.components) {
                return Err(invalid(
                    &format!("observables.extra[{i}]"),
                    "component out of range",
                ));
            }
        }
        Ok(Resolved { potential, cutoff })
    }

    /// Default convex-quartic reduction run.
    pub fn quartic_default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            name: "quartic".into(),
            grid: GridSpec {
                l: 16.0,
                n_side: 256,
                components: 1,
                m2: 1.0,
            },
            potential: PotentialFamily::Quartic { lambda: 0.2 },
            cutoff: CutOffConfig {
                kind: CutOffName::ExpSqrt,
                b: 1.0,
                radius: 0.0,
            },
            solver: SolveConfig {
                damping: 1.0,
                ..SolveConfig::default()
            },
            replicas: 4000,
            master_seed: 1,
            observables: ObservableSpec::default(),
            output: OutputSpec::default(),
        }
    }
}
