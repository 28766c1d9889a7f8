//! Merging of flags with an optional JSON config file, and range checks.

use std::fmt::Debug;
use std::path::Path;

use log::warn;
use ndarray::Array1;
use serde::Deserialize;

use mixmiss_core::estimation::{EcmOptions, InitOptions};
use mixmiss_core::evaluation::{study1_missingness, study1_truth, study2_missingness, study2_truth};
use mixmiss_core::{CovStructure, MarWeighting, McarMode, MissingnessParams, MixtureParams};

use crate::args::{EstimationArgs, McarModeArg, ModelArgs, Preset, WeightingArg};
use crate::error::{CliError, CliResult, Context};
use crate::io::{load_json, matrix_from_rows};

/// Keys accepted in a `--config` file; names follow the long flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub n: Option<usize>,
    pub n_test: Option<usize>,
    pub g: Option<usize>,
    pub ncov: Option<u8>,
    pub pi: Option<Vec<f64>>,
    pub mu: Option<Vec<Vec<f64>>>,
    pub sigma: Option<Vec<Vec<Vec<f64>>>>,
    pub alpha: Option<f64>,
    pub xi0: Option<f64>,
    pub xi1: Option<f64>,
    pub seed: Option<u64>,
    pub mcar_mode: Option<McarModeArg>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub warm_up_iter: Option<usize>,
    pub alpha_init: Option<f64>,
    pub weighting: Option<WeightingArg>,
    pub replicates: Option<usize>,
    pub seed_base: Option<u64>,
    pub jobs: Option<usize>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => load_json(p),
            None => Ok(Self::default()),
        }
    }
}

/// The config-file value wins; a differing flag value is reported.
pub fn pick<T: PartialEq + Debug>(name: &str, flag: Option<T>, file: Option<T>) -> Option<T> {
    match (flag, file) {
        (Some(f), Some(c)) => {
            if f != c {
                warn!("--{name} {f:?} overridden by config file value {c:?}");
            }
            Some(c)
        }
        (f, c) => c.or(f),
    }
}

fn parse_list(flag: &str, s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("--{flag}: '{t}' is not a number")))
        })
        .collect()
}

fn parse_sigma(s: &str) -> CliResult<Vec<Vec<f64>>> {
    let v = parse_list("sigma", s)?;
    let p = (v.len() as f64).sqrt().round() as usize;
    if p == 0 || p * p != v.len() {
        return Err(CliError::Usage(format!("--sigma: {} values do not form a square matrix", v.len())));
    }
    Ok(v.chunks(p).map(<[f64]>::to_vec).collect())
}

pub fn require_positive(name: &str, v: usize) -> CliResult<usize> {
    if v == 0 {
        return Err(CliError::Usage(format!("--{name} must be at least 1")));
    }
    Ok(v)
}

pub fn structure_of(ncov: u8) -> CliResult<CovStructure> {
    CovStructure::from_code(ncov).ok_or_else(|| CliError::Usage(format!("--ncov must be 1 or 2, got {ncov}")))
}

fn probability(name: &str, v: f64) -> CliResult<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(CliError::Usage(format!("--{name} must lie in [0, 1], got {v}")));
    }
    Ok(v)
}

/// Resolves the mixture and missingness parameters of `simulate`.
pub fn resolve_model(
    args: &ModelArgs,
    file: &ConfigFile,
) -> CliResult<(MixtureParams<f64>, MissingnessParams<f64>)> {
    let (base, base_miss) = match args.preset {
        Some(Preset::Study1) => (Some(study1_truth::<f64>()), study1_missingness::<f64>()),
        Some(Preset::Study2) => (Some(study2_truth::<f64>()), study2_missingness::<f64>()),
        None => (None, MissingnessParams { alpha: 0.0, xi0: 0.0, xi1: 0.0 }),
    };
    let mu_flag = if args.mu.is_empty() {
        None
    } else {
        Some(args.mu.iter().map(|s| parse_list("mu", s)).collect::<CliResult<Vec<_>>>()?)
    };
    let sigma_flag = if args.sigma.is_empty() {
        None
    } else {
        Some(args.sigma.iter().map(|s| parse_sigma(s)).collect::<CliResult<Vec<_>>>()?)
    };
    let mu = pick("mu", mu_flag, file.mu.clone())
        .or_else(|| base.as_ref().map(|b| crate::io::matrix_rows(b.means())))
        .ok_or_else(|| CliError::Usage("component means required (--mu or --preset)".into()))?;
    let sigma = pick("sigma", sigma_flag, file.sigma.clone())
        .or_else(|| base.as_ref().map(|b| b.distinct_covariances().iter().map(crate::io::matrix_rows).collect()))
        .ok_or_else(|| CliError::Usage("covariances required (--sigma or --preset)".into()))?;
    let g = pick("g", args.g, file.g).unwrap_or(mu.len());
    require_positive("g", g)?;
    if mu.len() != g {
        return Err(CliError::Usage(format!("{} mean vectors given for g = {g}", mu.len())));
    }
    let pi = pick("pi", args.pi.clone(), file.pi.clone())
        .or_else(|| base.as_ref().map(|b| b.weights().to_vec()))
        .unwrap_or_else(|| vec![1.0 / g as f64; g]);
    let default_ncov = base.as_ref().map(|b| b.structure().code()).unwrap_or(if sigma.len() == 1 { 1 } else { 2 });
    let structure = structure_of(pick("ncov", args.ncov, file.ncov).unwrap_or(default_ncov))?;
    let means = matrix_from_rows(&mu, "mu").map_err(|e| CliError::Usage(e.to_string()))?;
    let covs = sigma.iter().map(|s| matrix_from_rows(s, "sigma")).collect::<CliResult<Vec<_>>>()?;
    let params = MixtureParams::new(Array1::from(pi), means, covs, structure)
        .map_err(|e| CliError::Usage(format!("mixture parameters: {e}")))?;
    let alpha = probability("alpha", pick("alpha", args.alpha, file.alpha).unwrap_or(base_miss.alpha))?;
    let miss = MissingnessParams::new(
        alpha,
        pick("xi0", args.xi0, file.xi0).unwrap_or(base_miss.xi0),
        pick("xi1", args.xi1, file.xi1).unwrap_or(base_miss.xi1),
    )
    .context("missingness parameters")?;
    Ok((params, miss))
}

pub fn mcar_mode(flag: Option<McarModeArg>, file: &ConfigFile) -> McarMode {
    match pick("mcar-mode", flag, file.mcar_mode) {
        Some(McarModeArg::Fixed) => McarMode::FixedCount,
        _ => McarMode::BernoulliPerRow,
    }
}

/// Initialisation and ECM options from flags, config file and defaults.
pub fn resolve_estimation(args: &EstimationArgs, file: &ConfigFile) -> CliResult<(InitOptions<f64>, EcmOptions<f64>)> {
    let mut init = InitOptions::<f64>::default();
    let mut ecm = EcmOptions::<f64>::default();
    if let Some(v) = pick("max-iter", args.max_iter, file.max_iter) {
        ecm.max_iter = require_positive("max-iter", v)?;
    }
    if let Some(v) = pick("tol", args.tol, file.tol) {
        if !(v > 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("--tol must be positive, got {v}")));
        }
        ecm.tol = v;
        init.tol = v;
    }
    if let Some(v) = pick("warm-up-iter", args.warm_up_iter, file.warm_up_iter) {
        init.warm_up_iter = v;
    }
    if let Some(v) = pick("alpha-init", args.alpha_init, file.alpha_init) {
        init.alpha_init = probability("alpha-init", v)?;
    }
    if let Some(w) = pick("weighting", args.weighting, file.weighting) {
        let w = match w {
            WeightingArg::Observed => MarWeighting::ObservedLikelihood,
            WeightingArg::Unit => MarWeighting::UnitWeights,
        };
        init.weighting = w;
        ecm.weighting = w;
    }
    Ok((init, ecm))
}
