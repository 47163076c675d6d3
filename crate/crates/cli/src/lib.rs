//! Plumbing behind the `tgx` binary: file formats, run configuration,
//! batch drivers and DOT export.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use tgx_core::explainer::ExplainerConfig;
use tgx_numkernel::KernelError;

pub mod dot;
pub mod files;
pub mod pipeline;

/// Bad flags, malformed configuration or inconsistent options.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

/// Usage errors exit 2, numerical failures 4, everything else 3.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<tgx_core::Error>() {
            if e.is_numerical() {
                return EXIT_NUMERICAL;
            }
        }
        if let Some(KernelError::NonFinite { .. } | KernelError::NonFiniteGradient { .. }) = cause.downcast_ref() {
            return EXIT_NUMERICAL;
        }
    }
    EXIT_DATA
}

/// A reproducible run description. Values given on the command line
/// override the document; the document overrides built-in defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    /// Explicit targets as `SRC,DST,T`; takes precedence over `sample`.
    pub edges: Vec<String>,
    /// Number of validation-range targets to draw.
    pub sample: Option<usize>,
    /// Minimum candidate edges in a sampled target's context.
    pub min_candidates: usize,
    pub explainer: ExplainerConfig,
    pub out_dir: Option<PathBuf>,
    /// Seeds both target sampling and the explainer.
    pub seed: Option<u64>,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: None,
            edges: Vec::new(),
            sample: None,
            min_candidates: 0,
            explainer: ExplainerConfig::default(),
            out_dir: None,
            seed: None,
            workers: 1,
        }
    }
}

impl RunConfig {
    /// Checks invariants that do not need the data.
    pub fn validate(&self) -> Result<(), UsageError> {
        self.explainer.validate().map_err(|e| UsageError(e.to_string()))?;
        if self.sample == Some(0) {
            return Err(UsageError("sample must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(UsageError("workers must be at least 1".into()));
        }
        for (what, path) in [("data", &self.data), ("model", &self.model)] {
            match path {
                None => return Err(UsageError(format!("no {what} path given"))),
                Some(p) if !p.exists() => return Err(UsageError(format!("{what} path {} does not exist", p.display()))),
                Some(_) => {}
            }
        }
        if self.edges.is_empty() && self.sample.is_none() {
            return Err(UsageError("give target edges or a sample count".into()));
        }
        Ok(())
    }
}
