//! One function per subcommand. Each returns the line printed on success.

use std::path::PathBuf;

use log::info;
use serde::Serialize;

use mixmiss_core::estimation::{ecm_fit, full_loglik, init_semisupervised, EcmOptions, InitOptions};
use mixmiss_core::evaluation::{
    bayes_error_of, mc_error_seeded, run_study1_replicates, run_study2, Study1Config, Study1Record, Study2Config,
    StudyReport,
};
use mixmiss_core::{bayes_classify, empirical_accuracy, simulate, CovStructure, PartialDataset, SimConfig};

use crate::args::{ErrorRateArgs, FitArgs, PredictArgs, SimulateArgs, StudyArgs};
use crate::config::{mcar_mode, pick, require_positive, resolve_estimation, resolve_model, structure_of, ConfigFile};
use crate::error::{CliError, CliResult, Context};
use crate::io::{load_dataset, load_json, save_dataset, save_json, save_table, ParamsJson};

fn cell(v: f64) -> String {
    v.to_string()
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or(String::new(), cell)
}

pub fn cmd_simulate(args: &SimulateArgs) -> CliResult<String> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let (params, miss) = resolve_model(&args.model, &file)?;
    let n = require_positive("n", pick("n", args.n, file.n).unwrap_or(1000))?;
    let seed = pick("seed", args.seed, file.seed).unwrap_or(1);
    let config = SimConfig::new(n, params, miss, seed)
        .with_stream(args.stream.unwrap_or(0))
        .with_mcar_mode(mcar_mode(args.mcar_mode, &file));
    let data = simulate(&config).context("simulation")?;
    save_dataset(&args.out, &data)?;
    let (lab, mcar, mar) = data.code_counts();
    Ok(format!("labelled={lab} mcar={mcar} mar={mar}"))
}

struct FitSetup {
    data: PartialDataset<f64>,
    g: usize,
    structure: CovStructure,
    init: InitOptions<f64>,
    ecm: EcmOptions<f64>,
}

fn fit_setup(args: &FitArgs) -> CliResult<FitSetup> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let g = require_positive("g", pick("g", args.g, file.g).unwrap_or(2))?;
    let structure = structure_of(pick("ncov", args.ncov, file.ncov).unwrap_or(2))?;
    let (init, ecm) = resolve_estimation(&args.est, &file)?;
    let data = load_dataset(&args.data)?;
    Ok(FitSetup { data, g, structure, init, ecm })
}

pub fn cmd_init(args: &FitArgs) -> CliResult<String> {
    let s = fit_setup(args)?;
    let init = init_semisupervised(&s.data, s.g, s.structure, &s.init).context("initialisation")?;
    let loglik = full_loglik(&s.data, &init.params, &init.miss, s.init.weighting).context("initialisation")?;
    let mut json = ParamsJson::new(&init.params, &init.miss);
    json.loglik = Some(loglik);
    save_json(&args.out, &json)?;
    Ok(format!("loglik={loglik} alpha={} xi0={} xi1={}", init.miss.alpha, init.miss.xi0, init.miss.xi1))
}

pub fn cmd_fit(args: &FitArgs) -> CliResult<String> {
    let s = fit_setup(args)?;
    let init = init_semisupervised(&s.data, s.g, s.structure, &s.init).context("initialisation")?;
    let fit = ecm_fit(&s.data, s.g, (init.params, init.miss), s.structure, &s.ecm).context("estimation")?;
    let mut json = ParamsJson::new(&fit.params, &fit.miss);
    json.loglik = Some(fit.loglik);
    json.iterations = fit.iterations;
    json.converged = fit.converged;
    if let Some(path) = &args.trace {
        let rows: Vec<Vec<String>> = fit
            .trace
            .iter()
            .enumerate()
            .map(|(k, r)| vec![(k + 1).to_string(), cell(r.loglik), cell(r.alpha), cell(r.xi0), cell(r.xi1)])
            .collect();
        save_table(path, &["iteration", "loglik", "alpha", "xi0", "xi1"], &rows)?;
    }
    save_json(&args.out, &json)?;
    Ok(format!("loglik={} iterations={} converged={}", fit.loglik, fit.iterations, fit.converged))
}

pub fn cmd_predict(args: &PredictArgs) -> CliResult<String> {
    let params = load_json::<ParamsJson>(&args.params)?.mixture()?;
    let data = load_dataset(&args.data)?;
    if data.dim() != params.dim() {
        return Err(CliError::Data(format!(
            "{}: {} features but the parameters have p = {}",
            args.data.display(),
            data.dim(),
            params.dim()
        )));
    }
    let pred = bayes_classify(data.features().view(), &params).context("prediction")?;
    let rows: Vec<Vec<String>> = pred.iter().map(|l| vec![l.to_string()]).collect();
    save_table(&args.out, &["label"], &rows)?;
    match data.truth() {
        Some(truth) => {
            let acc = empirical_accuracy(&pred, truth).context("evaluation")?;
            Ok(format!("accuracy={acc}"))
        }
        None => Ok(format!("predicted={}", pred.len())),
    }
}

#[derive(Debug, Serialize)]
struct ErrorRateJson {
    method: &'static str,
    error: f64,
    std_error: Option<f64>,
    degenerate: bool,
}

pub fn cmd_error_rate(args: &ErrorRateArgs) -> CliResult<String> {
    let params = load_json::<ParamsJson>(&args.params)?.mixture()?;
    let out = match args.mc {
        Some(n_mc) => {
            let n_mc = require_positive("mc", n_mc)?;
            let mc = mc_error_seeded(&params, &params, n_mc, args.seed.unwrap_or(1), 0).context("evaluation")?;
            ErrorRateJson { method: "monte-carlo", error: mc.error, std_error: Some(mc.std_error), degenerate: false }
        }
        None => {
            let be = bayes_error_of(&params).map_err(|e| match e {
                mixmiss_core::Error::UnsupportedStructure(m) => CliError::Core {
                    context: "evaluation",
                    source: mixmiss_core::Error::UnsupportedStructure(format!("{m} (pass --mc N)")),
                },
                other => CliError::Core { context: "evaluation", source: other },
            })?;
            ErrorRateJson { method: "closed-form", error: be.value, std_error: None, degenerate: be.degenerate }
        }
    };
    if let Some(path) = &args.out {
        save_json(path, &out)?;
    }
    Ok(match out.std_error {
        Some(se) => format!("{} (se {se})", out.error),
        None => out.error.to_string(),
    })
}

struct StudySetup {
    replicates: usize,
    seed_base: u64,
    jobs: usize,
    n: Option<usize>,
    n_test: Option<usize>,
    init: InitOptions<f64>,
    ecm: EcmOptions<f64>,
    records: PathBuf,
}

fn study_setup(args: &StudyArgs, default_replicates: usize, default_seed: u64) -> CliResult<StudySetup> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let (init, ecm) = resolve_estimation(&args.est, &file)?;
    let n = pick("n", args.n, file.n).map(|v| require_positive("n", v)).transpose()?;
    let n_test = pick("n-test", args.n_test, file.n_test).map(|v| require_positive("n-test", v)).transpose()?;
    Ok(StudySetup {
        replicates: require_positive(
            "replicates",
            pick("replicates", args.replicates, file.replicates).unwrap_or(default_replicates),
        )?,
        seed_base: pick("seed-base", args.seed_base, file.seed_base).unwrap_or(default_seed),
        jobs: pick("jobs", args.jobs, file.jobs).unwrap_or(0),
        n,
        n_test,
        init,
        ecm,
        records: args.records.clone().unwrap_or_else(|| args.out.with_extension("csv")),
    })
}

#[derive(Debug, Serialize)]
struct Study1Summary {
    replicates: usize,
    seed_base: u64,
    n: usize,
    n_test: usize,
    mean_accuracy: Option<f64>,
    min_accuracy: Option<f64>,
    max_accuracy: Option<f64>,
    mean_oracle_accuracy: Option<f64>,
    n_failed: usize,
}

fn study1_row(seed: u64, rec: &Result<Study1Record<f64>, mixmiss_core::Error>, g: usize, p: usize) -> Vec<String> {
    let mut row = vec![seed.to_string()];
    match rec {
        Ok(r) => {
            row.extend([cell(r.accuracy), cell(r.oracle_accuracy), cell(r.miss.alpha), cell(r.miss.xi0), cell(r.miss.xi1)]);
            row.extend(r.params.means().iter().map(|&v| cell(v)));
            let (a, b, c) = r.train_counts;
            row.extend([
                cell(r.loglik),
                r.iterations.to_string(),
                r.converged.to_string(),
                a.to_string(),
                b.to_string(),
                c.to_string(),
                String::new(),
            ]);
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), 5 + g * p + 6));
            row.push(e.to_string());
        }
    }
    row
}

pub fn cmd_study1(args: &StudyArgs) -> CliResult<String> {
    let s = study_setup(args, 10, 1)?;
    let defaults = Study1Config::<f64>::default();
    let config = Study1Config {
        n_train: s.n.unwrap_or(defaults.n_train),
        n_test: s.n_test.unwrap_or(defaults.n_test),
        init: s.init,
        ecm: s.ecm,
    };
    let results = run_study1_replicates(s.replicates, s.seed_base, s.jobs, &config).context("study1")?;
    let (g, p) = (2, 2);
    let mut header: Vec<String> =
        ["seed", "accuracy", "oracle_accuracy", "alpha", "xi0", "xi1"].iter().map(|h| h.to_string()).collect();
    for i in 1..=g {
        for k in 1..=p {
            header.push(format!("mu{i}_{k}"));
        }
    }
    header.extend(
        ["loglik", "iterations", "converged", "n_labelled", "n_mcar", "n_mar", "failure"].iter().map(|h| h.to_string()),
    );
    let rows: Vec<Vec<String>> = results
        .iter()
        .enumerate()
        .map(|(i, r)| study1_row(s.seed_base + i as u64, r, g, p))
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    save_table(&s.records, &header_refs, &rows)?;

    let ok: Vec<&Study1Record<f64>> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    let mean = |f: fn(&Study1Record<f64>) -> f64| {
        (!ok.is_empty()).then(|| ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64)
    };
    let summary = Study1Summary {
        replicates: s.replicates,
        seed_base: s.seed_base,
        n: config.n_train,
        n_test: config.n_test,
        mean_accuracy: mean(|r| r.accuracy),
        min_accuracy: ok.iter().map(|r| r.accuracy).reduce(f64::min),
        max_accuracy: ok.iter().map(|r| r.accuracy).reduce(f64::max),
        mean_oracle_accuracy: mean(|r| r.oracle_accuracy),
        n_failed: results.len() - ok.len(),
    };
    save_json(&args.out, &summary)?;
    info!("study1 records written to {}", s.records.display());
    Ok(format!("mean_accuracy={}", summary.mean_accuracy.map_or("NA".into(), |v| v.to_string())))
}

#[derive(Debug, Serialize)]
struct Study2Summary {
    replicates: usize,
    seed_base: u64,
    n: usize,
    mean_proposed: f64,
    mean_complete: f64,
    true_error: f64,
    are: Option<f64>,
    are_degenerate: bool,
    are_euclidean: Option<f64>,
    n_used: usize,
    n_failed: usize,
    n_not_converged: usize,
}

fn nan_to_none(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn study2_summary(report: &StudyReport<f64>, config: &Study2Config<f64>) -> Study2Summary {
    let s = &report.summary;
    Study2Summary {
        replicates: config.n_replicates,
        seed_base: config.seed_base,
        n: config.n,
        mean_proposed: s.mean_proposed,
        mean_complete: s.mean_complete,
        true_error: s.true_error,
        are: s.are.value.and_then(nan_to_none),
        are_degenerate: s.are.degenerate,
        are_euclidean: s.are_euclidean.value.and_then(nan_to_none),
        n_used: s.n_used,
        n_failed: s.n_failed,
        n_not_converged: s.n_not_converged,
    }
}

pub fn cmd_study2(args: &StudyArgs) -> CliResult<String> {
    let s = study_setup(args, 100, 2024)?;
    let defaults = Study2Config::<f64>::default();
    let config = Study2Config {
        n_replicates: s.replicates,
        seed_base: s.seed_base,
        n: s.n.unwrap_or(defaults.n),
        jobs: s.jobs,
        init: s.init,
        ecm: s.ecm,
    };
    let report = run_study2(&config).context("study2")?;
    let rows: Vec<Vec<String>> = report
        .records
        .iter()
        .map(|r| {
            vec![
                r.index.to_string(),
                r.seed.to_string(),
                opt_cell(r.error_proposed),
                opt_cell(r.error_complete),
                opt_cell(r.error_proposed_euclidean),
                opt_cell(r.error_complete_euclidean),
                r.iterations.to_string(),
                r.converged.to_string(),
                r.failure.clone().unwrap_or_default(),
            ]
        })
        .collect();
    save_table(
        &s.records,
        &[
            "replicate",
            "seed",
            "error_proposed",
            "error_complete",
            "error_proposed_euclidean",
            "error_complete_euclidean",
            "iterations",
            "converged",
            "failure",
        ],
        &rows,
    )?;
    let summary = study2_summary(&report, &config);
    save_json(&args.out, &summary)?;
    Ok(format!("are={}", summary.are.map_or("NA".into(), |v| v.to_string())))
}

