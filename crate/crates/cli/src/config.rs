use std::path::PathBuf;

use graphskel::em::{EmConfig, MStepConfig};
use graphskel::ReconstructionConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_RATIOS: [f64; 4] = [12.0, 10.0, 8.0, 6.0];

/// Everything a command ran with. Embedded verbatim in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: String,
    pub r: Option<f64>,
    pub eps: f64,
    pub sigma: f64,
    pub seed: u64,
    pub max_iters: usize,
    pub tol: f64,
    pub ratios: Vec<f64>,
    pub spacing: Option<f64>,
    pub noise: Option<f64>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub header: bool,
    pub threads: Option<usize>,
}

/// Raw values as they come off the command line.
#[derive(Debug, Clone, Default)]
pub struct RawOptions {
    pub r: Option<f64>,
    pub eps: Option<f64>,
    pub ratio: Option<f64>,
    pub sigma: Option<f64>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub ratios: Option<Vec<f64>>,
    pub spacing: Option<f64>,
    pub noise: Option<f64>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub header: bool,
    pub threads: Option<usize>,
}

fn positive(name: &str, v: f64) -> CliResult<f64> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::usage(format!("--{name} must be positive and finite, got {v}")))
    }
}

impl RunConfig {
    pub fn resolve(command: &str, raw: RawOptions) -> CliResult<Self> {
        let eps = positive("eps", raw.eps.unwrap_or(0.1))?;
        let r = match (raw.r, raw.ratio) {
            (Some(_), Some(_)) => return Err(CliError::usage("give either --R or --ratio, not both")),
            (Some(r), None) => Some(positive("R", r)?),
            (None, Some(k)) => Some(positive("ratio", k)? * eps),
            (None, None) => None,
        };
        let sigma = positive("sigma", raw.sigma.unwrap_or(eps / 2.0))?;
        let tol = positive("tol", raw.tol.unwrap_or(1e-8))?;
        let ratios = raw.ratios.unwrap_or_else(|| DEFAULT_RATIOS.to_vec());
        if ratios.is_empty() {
            return Err(CliError::usage("--ratios must list at least one ratio"));
        }
        for &k in &ratios {
            positive("ratios", k)?;
        }
        if let Some(s) = raw.spacing {
            positive("spacing", s)?;
        }
        if let Some(b) = raw.noise {
            if !(b.is_finite() && b >= 0.0) {
                return Err(CliError::usage(format!("--noise must be non-negative, got {b}")));
            }
        }
        if raw.threads == Some(0) {
            return Err(CliError::usage("thread count must be positive"));
        }
        Ok(Self {
            command: command.to_string(),
            r,
            eps,
            sigma,
            seed: raw.seed.unwrap_or(0),
            max_iters: raw.max_iters.unwrap_or(200),
            tol,
            ratios,
            spacing: raw.spacing,
            noise: raw.noise,
            input: raw.input,
            output: raw.output,
            graph: raw.graph,
            header: raw.header,
            threads: raw.threads,
        })
    }

    pub fn reconstruction(&self) -> CliResult<ReconstructionConfig> {
        let r = self
            .r
            .ok_or_else(|| CliError::usage(format!("{} needs --R or --ratio", self.command)))?;
        Ok(ReconstructionConfig::new(r, self.eps)?)
    }

    pub fn em(&self) -> EmConfig {
        EmConfig {
            max_iters: self.max_iters,
            tol: self.tol,
            mstep: MStepConfig::default(),
            ..EmConfig::default()
        }
    }

    pub fn input(&self) -> CliResult<&PathBuf> {
        self.input
            .as_ref()
            .ok_or_else(|| CliError::usage(format!("{} needs --input", self.command)))
    }

    pub fn output(&self) -> CliResult<&PathBuf> {
        self.output
            .as_ref()
            .ok_or_else(|| CliError::usage(format!("{} needs --output", self.command)))
    }
}
