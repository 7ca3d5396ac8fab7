//! Configuration: JSON file ingestion, command-line overrides, and the
//! resolution of every default into a manifest-ready record.
//!
//! Precedence is flags over file over problem defaults. The resolved record
//! is serialized verbatim into the run manifest so a run can be reproduced
//! from the manifest alone.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::custom::CustomSpec;
use crate::CliError;
use odesens_core::{hypersonic, zermelo, BenchmarkProblem};

/// Problem selector as it appears in config files and the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemChoice {
    Zermelo,
    Hypersonic,
    CustomFile(PathBuf),
}

/// Weight matrix of the L2 trajectory norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QWeight {
    Identity,
    Diag(Vec<f64>),
}

/// Grid section of a config file. A fixed grid integrates directly on `n`
/// uniform intervals; an adaptive grid integrates under `(rtol, atol)` and
/// resamples onto `n` uniform intervals (problem default when omitted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridConfig {
    Fixed {
        n: usize,
    },
    Adaptive {
        rtol: f64,
        atol: f64,
        n: Option<usize>,
    },
}

/// On-disk configuration; every field is optional so flags and problem
/// defaults can fill the gaps.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub problem: Option<ProblemChoice>,
    pub epsilon: Option<f64>,
    pub grid: Option<GridConfig>,
    pub q_weight: Option<QWeight>,
    pub lipschitz: Option<f64>,
    pub cap: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub eps_list: Option<Vec<f64>>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Command-line values that override the config file.
#[derive(Debug, Default)]
pub struct Overrides {
    pub problem: Option<ProblemChoice>,
    pub epsilon: Option<f64>,
    pub grid_n: Option<usize>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub q_diag: Option<Vec<f64>>,
    pub lipschitz: Option<f64>,
    pub cap: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub eps_list: Option<Vec<f64>>,
}

/// Fully resolved grid settings.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedGrid {
    pub adaptive: bool,
    pub rtol: f64,
    pub atol: f64,
    /// Output resolution: the integration grid for fixed runs, the resample
    /// grid for adaptive runs.
    pub n: usize,
}

/// Complete configuration with every default resolved.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub problem: ProblemChoice,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub grid: ResolvedGrid,
    pub q_weight: QWeight,
    pub lipschitz: f64,
    pub cap: f64,
    pub restarts: usize,
    pub seed: u64,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
}

/// Which command the configuration is being resolved for; decides which
/// fields are mandatory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Run,
    Sweep,
    Check,
}

/// A loaded problem source that can be instantiated at any epsilon.
pub enum ProblemHandle {
    Zermelo,
    Hypersonic,
    Custom(Box<CustomSpec>),
}

impl ProblemHandle {
    pub fn load(choice: &ProblemChoice) -> Result<Self, CliError> {
        match choice {
            ProblemChoice::Zermelo => Ok(Self::Zermelo),
            ProblemChoice::Hypersonic => Ok(Self::Hypersonic),
            ProblemChoice::CustomFile(path) => {
                Ok(Self::Custom(Box::new(CustomSpec::load(path)?)))
            }
        }
    }

    pub fn build(&self, epsilon: f64) -> BenchmarkProblem {
        match self {
            Self::Zermelo => zermelo(epsilon),
            Self::Hypersonic => hypersonic(epsilon),
            Self::Custom(spec) => spec.build(epsilon),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            Self::Zermelo => 2,
            Self::Hypersonic => 4,
            Self::Custom(spec) => spec.state_dim,
        }
    }
}

fn require_finite(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Config(format!("{name} must be finite, got {v}")))
    }
}

/// Merges flags over the file config and fills problem defaults, validating
/// along the way.
pub fn resolve(
    file: FileConfig,
    flags: Overrides,
    kind: CommandKind,
) -> Result<(ResolvedConfig, ProblemHandle), CliError> {
    let problem = flags
        .problem
        .or(file.problem)
        .ok_or_else(|| {
            CliError::Config(
                "no problem selected; use --problem, --problem-file, or a config file".into(),
            )
        })?;
    let handle = ProblemHandle::load(&problem)?;
    // Probe instance used only to read the problem's defaults.
    let defaults = handle.build(0.0);

    let (mut adaptive, mut rtol, mut atol, mut n) = (
        defaults.default_adaptive,
        1e-8,
        1e-10,
        defaults.default_grid_n,
    );
    match file.grid {
        Some(GridConfig::Fixed { n: fixed_n }) => {
            adaptive = false;
            n = fixed_n;
        }
        Some(GridConfig::Adaptive {
            rtol: r,
            atol: a,
            n: out_n,
        }) => {
            adaptive = true;
            rtol = r;
            atol = a;
            if let Some(v) = out_n {
                n = v;
            }
        }
        None => {}
    }
    if let Some(v) = flags.grid_n {
        n = v;
    }
    if let Some(v) = flags.rtol {
        adaptive = true;
        rtol = v;
    }
    if let Some(v) = flags.atol {
        adaptive = true;
        atol = v;
    }
    if n < 2 {
        return Err(CliError::Config(format!("grid needs n >= 2, got {n}")));
    }
    let tols_ok = rtol.is_finite() && rtol > 0.0 && atol.is_finite() && atol > 0.0;
    if adaptive && !tols_ok {
        return Err(CliError::Config(format!(
            "adaptive tolerances must be positive and finite, got rtol = {rtol}, atol = {atol}"
        )));
    }
    let grid = ResolvedGrid {
        adaptive,
        rtol,
        atol,
        n,
    };

    let epsilon = match (kind, flags.epsilon.or(file.epsilon)) {
        (CommandKind::Sweep, _) => None,
        (CommandKind::Run, None) => {
            return Err(CliError::Config("run needs --epsilon".into()));
        }
        (CommandKind::Check, None) => Some(1e-2),
        (_, Some(e)) => Some(require_finite("epsilon", e)?),
    };

    let eps_list = if kind == CommandKind::Sweep {
        let mut list = flags
            .eps_list
            .or(file.eps_list)
            .ok_or_else(|| CliError::Config("sweep needs --eps-list".into()))?;
        if list.is_empty() {
            return Err(CliError::Config("eps-list must not be empty".into()));
        }
        for &e in &list {
            require_finite("eps-list entry", e)?;
        }
        list.sort_by(f64::total_cmp);
        Some(list)
    } else {
        None
    };

    let q_weight = flags
        .q_diag
        .map(QWeight::Diag)
        .or(file.q_weight)
        .unwrap_or(QWeight::Identity);
    if let QWeight::Diag(d) = &q_weight {
        if d.len() != handle.state_dim() {
            return Err(CliError::Config(format!(
                "q diagonal has {} entries but the problem has {} states",
                d.len(),
                handle.state_dim()
            )));
        }
        if d.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(CliError::Config(
                "q diagonal entries must be positive and finite".into(),
            ));
        }
    }

    let lipschitz = require_finite(
        "lipschitz",
        flags
            .lipschitz
            .or(file.lipschitz)
            .unwrap_or(defaults.default_lipschitz),
    )?;
    if lipschitz < 0.0 {
        return Err(CliError::Config(format!(
            "lipschitz must be nonnegative, got {lipschitz}"
        )));
    }
    let cap = require_finite("cap", flags.cap.or(file.cap).unwrap_or(1e10))?;
    if cap <= 0.0 {
        return Err(CliError::Config(format!("cap must be positive, got {cap}")));
    }

    let restarts = flags.restarts.or(file.restarts).unwrap_or(8);
    let seed = flags.seed.or(file.seed).unwrap_or(42);
    let workers = flags.workers.or(file.workers).unwrap_or_else(|| {
        std::thread::available_parallelism().map_or(1, usize::from)
    });
    if workers == 0 {
        return Err(CliError::Config("workers must be at least 1".into()));
    }

    let out = flags.out.or(file.out);
    if out.is_none() && kind != CommandKind::Check {
        return Err(CliError::Config("an output directory is required; use --out".into()));
    }

    Ok((
        ResolvedConfig {
            problem,
            epsilon,
            grid,
            q_weight,
            lipschitz,
            cap,
            restarts,
            seed,
            workers,
            out,
            eps_list,
        },
        handle,
    ))
}
