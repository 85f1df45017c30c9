//! Experiment configuration: a single TOML file describes the network, the
//! model and role, the simulation parameters, the diagnostics to execute,
//! and the output layout. One file reproduces one experiment end to end.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use opinion_dynamics::{AgentRoleSpec, DriftLaw, InitSpec, SimConfig, TrustMatrix};

/// Registered diagnostic names.
pub const DIAGNOSTIC_NAMES: &[&str] = &[
    "supermartingale",
    "conditional_variance",
    "increment_moment_decay",
    "tail_concentration",
    "trust_layers",
    "layer_herding",
    "counterexample",
    "increment_variance",
    "rowsum_contraction",
];

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Degroot,
    Ra,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Model,
    pub network: NetworkSection,
    #[serde(default)]
    pub role: RoleSection,
    pub sim: SimSection,
    #[serde(default)]
    pub diagnostics: Vec<DiagnosticConfig>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Path to an edge-list file, resolved relative to the config file.
    pub edge_list: Option<PathBuf>,
    /// Inline row-major matrix, alternative to `edge_list`.
    pub inline: Option<Vec<Vec<f64>>>,
    /// Stubborn agent index (inline networks only; edge lists carry their
    /// own header directive).
    pub stubborn: Option<usize>,
    #[serde(default)]
    pub normalize: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSection {
    #[serde(default)]
    pub kind: RoleKindName,
    pub law: Option<String>,
    pub c: Option<f64>,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleKindName {
    #[default]
    None,
    Stubborn,
    Drifting,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub alpha: Option<f64>,
    pub horizon: u64,
    pub replicas: Option<u64>,
    pub seed: Option<u64>,
    pub eps: Option<f64>,
    pub tol: Option<f64>,
    pub init: Option<InitConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitConfig {
    Constant { value: f64 },
    Uniform,
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticConfig {
    pub name: String,
    pub replica: Option<u64>,
    pub samples: Option<u64>,
    pub order: Option<u32>,
    pub threshold: Option<f64>,
    pub horizon: Option<u64>,
    pub alpha: Option<f64>,
    pub y: Option<Vec<f64>>,
    pub x: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

/// Everything resolved and validated: the loaded network plus the core
/// simulation config and the diagnostic list.
pub struct Experiment {
    pub model: Model,
    pub trust: TrustMatrix,
    pub sim: SimConfig,
    pub tol: f64,
    pub diagnostics: Vec<DiagnosticConfig>,
    pub out_dir: PathBuf,
    pub write_csv: bool,
    pub write_json: bool,
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| ConfigError(format!("invalid config: {e}")))
}

pub fn resolve(config: &ExperimentConfig, config_path: &Path) -> Result<Experiment, ConfigError> {
    let trust = load_network(&config.network, config_path)?;
    let role = build_role(config, &trust)?;
    let sim = build_sim(config, &trust, role)?;
    validate_diagnostics(config, &trust)?;

    let mut write_csv = false;
    let mut write_json = false;
    for format in &config.output.formats {
        match format.as_str() {
            "csv" => write_csv = true,
            "json" => write_json = true,
            other => return err(format!("unknown output format '{other}'")),
        }
    }

    Ok(Experiment {
        model: config.model,
        trust,
        sim,
        tol: config.sim.tol.unwrap_or(1e-10),
        diagnostics: config.diagnostics.clone(),
        out_dir: config.output.dir.clone(),
        write_csv,
        write_json,
    })
}

fn load_network(section: &NetworkSection, config_path: &Path) -> Result<TrustMatrix, ConfigError> {
    match (&section.edge_list, &section.inline) {
        (Some(path), None) => {
            if section.stubborn.is_some() {
                return err("stubborn belongs in the edge-list header, not the config");
            }
            let resolved = if path.is_relative() {
                config_path.parent().unwrap_or(Path::new(".")).join(path)
            } else {
                path.clone()
            };
            let text = fs::read_to_string(&resolved)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", resolved.display())))?;
            TrustMatrix::parse_edge_list(&text).map_err(|e| ConfigError(e.to_string()))
        }
        (None, Some(rows)) => TrustMatrix::from_rows(rows, section.stubborn, section.normalize)
            .map_err(|e| ConfigError(e.to_string())),
        (Some(_), Some(_)) => err("network: give either edge_list or inline, not both"),
        (None, None) => err("network: missing edge_list or inline"),
    }
}

fn build_role(config: &ExperimentConfig, trust: &TrustMatrix) -> Result<AgentRoleSpec, ConfigError> {
    let section = &config.role;
    if config.model == Model::Degroot && section.kind != RoleKindName::None {
        return err("degroot: stubbornness lives in the trust matrix; drop the [role] section");
    }
    let spec = match section.kind {
        RoleKindName::None => AgentRoleSpec::none(),
        RoleKindName::Stubborn => AgentRoleSpec::stubborn(),
        RoleKindName::Drifting => {
            let law = match section.law.as_deref() {
                Some("power") => DriftLaw::Power {
                    c: section.c.unwrap_or(1.0),
                    p: section
                        .p
                        .ok_or_else(|| ConfigError("drifting power law needs p".into()))?,
                },
                Some("exp") => DriftLaw::Exp {
                    c: section.c.unwrap_or(1.0),
                    gamma: section
                        .gamma
                        .ok_or_else(|| ConfigError("drifting exp law needs gamma".into()))?,
                },
                Some(other) => return err(format!("unknown drift law '{other}'")),
                None => return err("drifting role needs a law (power or exp)"),
            };
            law.validate().map_err(|e| ConfigError(e.to_string()))?;
            AgentRoleSpec::drifting(law)
        }
    };
    if spec.has_role_agent() && trust.stubborn().is_none() {
        return err("stubborn/drifting roles need a stubborn agent in the network");
    }
    Ok(spec)
}

fn build_sim(
    config: &ExperimentConfig,
    trust: &TrustMatrix,
    role: AgentRoleSpec,
) -> Result<SimConfig, ConfigError> {
    let section = &config.sim;
    let init = match section.init.clone().unwrap_or(InitConfig::Uniform) {
        InitConfig::Constant { value } => InitSpec::Constant(value),
        InitConfig::Uniform => InitSpec::UniformRandom,
        InitConfig::Explicit { values } => InitSpec::Explicit(values),
    };
    let needs_seed = config.model == Model::Ra || matches!(init, InitSpec::UniformRandom);
    let seed = match (section.seed, needs_seed) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => {
            return err(match config.model {
                Model::Ra => "sim.seed is mandatory for ra runs",
                Model::Degroot => "sim.seed is required when init is uniform",
            })
        }
    };

    match config.model {
        Model::Degroot => {
            if section.alpha.is_some() {
                return err("sim.alpha applies to the ra model only");
            }
            if section.replicas.is_some() {
                return err("sim.replicas applies to the ra model only");
            }
            if trust.stubborn().is_none() {
                return err("degroot runs need a stubborn agent in the network");
            }
            // alpha/replicas unused by the degroot path; fill valid dummies
            Ok(SimConfig {
                alpha: 0.5,
                horizon: config.sim.horizon,
                replicas: 1,
                seed,
                role,
                init,
                eps: section.eps.unwrap_or(0.05),
            })
        }
        Model::Ra => {
            if section.tol.is_some() {
                return err("sim.tol applies to the degroot model only");
            }
            let alpha = section
                .alpha
                .ok_or_else(|| ConfigError("sim.alpha is required for ra runs".into()))?;
            let cfg = SimConfig {
                alpha,
                horizon: section.horizon,
                replicas: section.replicas.unwrap_or(1),
                seed,
                role,
                init,
                eps: section.eps.unwrap_or(0.05),
            };
            cfg.validate(trust).map_err(|e| ConfigError(e.to_string()))?;
            Ok(cfg)
        }
    }
}

fn validate_diagnostics(
    config: &ExperimentConfig,
    trust: &TrustMatrix,
) -> Result<(), ConfigError> {
    let has_role = config.role.kind != RoleKindName::None;
    for diag in &config.diagnostics {
        if !DIAGNOSTIC_NAMES.contains(&diag.name.as_str()) {
            return err(format!(
                "unknown diagnostic '{}'; registered: {}",
                diag.name,
                DIAGNOSTIC_NAMES.join(", ")
            ));
        }
        let needs_batch = matches!(
            diag.name.as_str(),
            "supermartingale" | "increment_moment_decay" | "tail_concentration" | "layer_herding"
        );
        if needs_batch && config.model != Model::Ra {
            return err(format!("diagnostic '{}' needs the ra model", diag.name));
        }
        if needs_batch && diag.name != "tail_concentration" && !has_role {
            return err(format!(
                "diagnostic '{}' needs a stubborn or drifting role",
                diag.name
            ));
        }
        match diag.name.as_str() {
            "conditional_variance" | "trust_layers" | "layer_herding" | "rowsum_contraction" => {
                if trust.stubborn().is_none() {
                    return err(format!(
                        "diagnostic '{}' needs a stubborn agent in the network",
                        diag.name
                    ));
                }
            }
            "increment_variance" => {
                if trust.stubborn().is_some() {
                    return err(
                        "diagnostic 'increment_variance' applies to networks without a \
                         stubborn agent",
                    );
                }
            }
            "increment_moment_decay" => {
                if let Some(order) = diag.order {
                    if order != 2 && order != 4 {
                        return err(format!("increment_moment_decay: order must be 2 or 4, got {order}"));
                    }
                }
            }
            "counterexample" if diag.horizon.is_some_and(|h| h < 2) => {
                return err("counterexample: horizon must be >= 2");
            }
            _ => {}
        }
    }
    Ok(())
}
