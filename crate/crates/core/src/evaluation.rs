//! Classifier evaluation: closed-form Bayes error for two equal-covariance
//! Gaussian classes, a Monte-Carlo error oracle, empirical accuracy, the
//! excess-error ratio, and the two replicate harnesses.

use log::{info, warn};
use ndarray::{array, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimation::{complete_data_mle, ecm_fit, init_semisupervised, EcmOptions, InitOptions};
use crate::linalg::Cholesky;
use crate::missingness::MissingnessParams;
use crate::mixture::{bayes_classify, CovStructure, MixtureParams};
use crate::scalar::normal_cdf;
use crate::simulation::{rng_stream, sample_mixture, simulate, SimConfig};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesError<T> {
    pub value: T,
    /// The two means coincide; `value` is then the error of always picking
    /// the larger class.
    pub degenerate: bool,
}

struct Discriminant<T> {
    beta0: T,
    beta1: ndarray::Array1<T>,
    pi: (T, T),
    degenerate: bool,
}

fn discriminant<T: Scalar>(
    mu1: ArrayView1<T>,
    mu2: ArrayView1<T>,
    sigma: ArrayView2<T>,
    pi: (T, T),
) -> Result<(Discriminant<T>, Cholesky<T>)> {
    let p = mu1.len();
    if mu2.len() != p || sigma.dim() != (p, p) {
        return Err(Error::Shape("means and covariance disagree in dimension".into()));
    }
    if !(pi.0 > T::zero() && pi.1 > T::zero()) || ((pi.0 + pi.1) - T::one()).abs() > T::of(1e-9) {
        return Err(Error::InvalidParameter("mixing proportions must be positive and sum to 1".into()));
    }
    let chol = Cholesky::new(sigma).ok_or_else(|| Error::CholeskyFailure { what: "shared covariance".into() })?;
    let diff = &mu1 - &mu2;
    let beta1 = chol.solve(diff.view());
    let mid = (&mu1 + &mu2).mapv(|v| v * T::of(0.5));
    let beta0 = -mid.dot(&beta1) + (pi.0 / pi.1).ln();
    let degenerate = beta1.iter().all(|&b| b == T::zero());
    Ok((Discriminant { beta0, beta1, pi, degenerate }, chol))
}

fn error_from_scale<T: Scalar>(d: &Discriminant<T>, mu1: ArrayView1<T>, mu2: ArrayView1<T>, scale: T) -> T {
    let s1 = -(d.beta0 + d.beta1.dot(&mu1)) / scale;
    let s2 = (d.beta0 + d.beta1.dot(&mu2)) / scale;
    d.pi.0 * normal_cdf(s1) + d.pi.1 * normal_cdf(s2)
}

/// Error rate of the linear discriminant rule `β0 + β1ᵀy > 0 ⇒ class 1` with
/// `β1 = Σ⁻¹(μ1 - μ2)` and `β0 = -½(μ1 + μ2)ᵀβ1 + log(π1/π2)`.
///
/// Under class `i` the score `β1ᵀy` has standard deviation `sqrt(β1ᵀΣβ1)`,
/// which is the normaliser used here, so this is the exact Bayes error.
pub fn bayes_error_equal_cov<T: Scalar>(
    mu1: ArrayView1<T>,
    mu2: ArrayView1<T>,
    sigma: ArrayView2<T>,
    pi: (T, T),
) -> Result<BayesError<T>> {
    let (d, _) = discriminant(mu1, mu2, sigma, pi)?;
    if d.degenerate {
        return Ok(BayesError { value: pi.0.min(pi.1), degenerate: true });
    }
    let spread = d.beta1.dot(&sigma.dot(&d.beta1)).sqrt();
    Ok(BayesError { value: error_from_scale(&d, mu1, mu2, spread), degenerate: false })
}

/// The same rule normalised by the Euclidean norm `‖β1‖` instead of the
/// score's standard deviation. Equal to [`bayes_error_equal_cov`] only when
/// `Σ` is a multiple of the identity with unit scale; kept for comparison
/// with reference numbers computed this way.
pub fn discriminant_error_euclidean<T: Scalar>(
    mu1: ArrayView1<T>,
    mu2: ArrayView1<T>,
    sigma: ArrayView2<T>,
    pi: (T, T),
) -> Result<BayesError<T>> {
    let (d, _) = discriminant(mu1, mu2, sigma, pi)?;
    if d.degenerate {
        return Ok(BayesError { value: pi.0.min(pi.1), degenerate: true });
    }
    let norm = d.beta1.dot(&d.beta1).sqrt();
    Ok(BayesError { value: error_from_scale(&d, mu1, mu2, norm), degenerate: false })
}

/// [`bayes_error_equal_cov`] at a two-component shared-covariance parameter set.
pub fn bayes_error_of<T: Scalar>(params: &MixtureParams<T>) -> Result<BayesError<T>> {
    let (mu1, mu2, sigma, pi) = two_class_parts(params)?;
    bayes_error_equal_cov(mu1, mu2, sigma, pi)
}

pub fn euclidean_error_of<T: Scalar>(params: &MixtureParams<T>) -> Result<BayesError<T>> {
    let (mu1, mu2, sigma, pi) = two_class_parts(params)?;
    discriminant_error_euclidean(mu1, mu2, sigma, pi)
}

type TwoClass<'a, T> = (ArrayView1<'a, T>, ArrayView1<'a, T>, ArrayView2<'a, T>, (T, T));

fn two_class_parts<T: Scalar>(params: &MixtureParams<T>) -> Result<TwoClass<'_, T>> {
    if params.n_components() != 2 {
        return Err(Error::UnsupportedStructure(format!(
            "closed-form error needs g = 2, got {}",
            params.n_components()
        )));
    }
    if params.structure() != CovStructure::Shared {
        return Err(Error::UnsupportedStructure(
            "closed-form error needs a shared covariance; use the Monte-Carlo oracle".into(),
        ));
    }
    let w = params.weights();
    Ok((params.mean(0), params.mean(1), params.covariance(0).view(), (w[0], w[1])))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McError<T> {
    pub error: T,
    pub std_error: T,
}

/// Draws `n_mc` labelled points from `truth`, classifies them with the Bayes
/// rule of `rule`, and returns the misclassification fraction.
pub fn mc_error_oracle<T: Scalar, R: rand::Rng>(
    truth: &MixtureParams<T>,
    rule: &MixtureParams<T>,
    n_mc: usize,
    rng: &mut R,
) -> Result<McError<T>> {
    if n_mc == 0 {
        return Err(Error::EmptyData);
    }
    const CHUNK: usize = 1 << 16;
    let mut wrong = 0usize;
    let mut left = n_mc;
    while left > 0 {
        let m = left.min(CHUNK);
        let (y, labels) = sample_mixture(truth, m, rng)?;
        let pred = bayes_classify(y.view(), rule)?;
        wrong += pred.iter().zip(&labels).filter(|(a, b)| a != b).count();
        left -= m;
    }
    let err = wrong as f64 / n_mc as f64;
    Ok(McError { error: T::of(err), std_error: T::of((err * (1.0 - err) / n_mc as f64).sqrt()) })
}

/// Fraction of positions where `pred` equals `truth`.
pub fn empirical_accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    if pred.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64 / pred.len() as f64)
}

/// Ratio of excess errors `(complete - truth) / (proposed - truth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcessErrorRatio<T> {
    pub value: Option<T>,
    pub degenerate: bool,
}

pub fn excess_error_ratio<T: Scalar>(mean_proposed: T, mean_complete: T, true_error: T) -> ExcessErrorRatio<T> {
    let tiny = T::of(1e-12);
    let num = mean_complete - true_error;
    let den = mean_proposed - true_error;
    if den.abs() <= tiny {
        ExcessErrorRatio { value: None, degenerate: true }
    } else {
        ExcessErrorRatio { value: Some(num / den), degenerate: false }
    }
}

/// Two-class bivariate mixture with means `(±δ/2, 0)`.
pub fn symmetric_mixture<T: Scalar>(
    pi1: T,
    delta: T,
    covs: Vec<Array2<T>>,
    structure: CovStructure,
) -> Result<MixtureParams<T>> {
    let half = delta * T::of(0.5);
    MixtureParams::new(
        array![pi1, T::one() - pi1],
        array![[half, T::zero()], [-half, T::zero()]],
        covs,
        structure,
    )
}

fn corr<T: Scalar>(rho: f64) -> Array2<T> {
    array![[T::one(), T::of(rho)], [T::of(rho), T::one()]]
}

/// Truth of the prediction experiment: `π = (0.5, 0.5)`, means `(±1, 0)`,
/// unit variances with correlations 0.6 and 0.3.
pub fn study1_truth<T: Scalar>() -> MixtureParams<T> {
    symmetric_mixture(T::of(0.5), T::of(2.0), vec![corr(0.6), corr(0.3)], CovStructure::PerComponent)
        .expect("valid constants")
}

pub fn study1_missingness<T: Scalar>() -> MissingnessParams<T> {
    MissingnessParams { alpha: T::of(0.1), xi0: T::one(), xi1: T::of(3.0) }
}

/// Truth of the error-rate experiment: `π = (0.6, 0.4)`, means `(±1, 0)`,
/// shared covariance with correlation 0.3.
pub fn study2_truth<T: Scalar>() -> MixtureParams<T> {
    symmetric_mixture(T::of(0.6), T::of(2.0), vec![corr(0.3)], CovStructure::Shared).expect("valid constants")
}

pub fn study2_missingness<T: Scalar>() -> MissingnessParams<T> {
    MissingnessParams { alpha: T::zero(), xi0: T::of(2.0), xi1: T::of(2.0) }
}

#[derive(Debug, Clone, Copy)]
pub struct Study1Config<T> {
    pub n_train: usize,
    pub n_test: usize,
    pub init: InitOptions<T>,
    pub ecm: EcmOptions<T>,
}

impl<T: Scalar> Default for Study1Config<T> {
    fn default() -> Self {
        Self { n_train: 1000, n_test: 5000, init: InitOptions::default(), ecm: EcmOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study1Record<T> {
    pub seed: u64,
    pub accuracy: f64,
    /// Accuracy of the true-parameter classifier on the same test draw.
    pub oracle_accuracy: f64,
    pub params: MixtureParams<T>,
    pub miss: MissingnessParams<T>,
    pub loglik: T,
    pub iterations: usize,
    pub converged: bool,
    /// (labelled, MCAR, MAR) counts of the training set.
    pub train_counts: (usize, usize, usize),
}

/// One run of the prediction experiment. Training data come from stream 0
/// of `seed`, the `alpha = 0` test set from stream 1.
pub fn run_study1<T: Scalar>(seed: u64, config: &Study1Config<T>) -> Result<Study1Record<T>> {
    let truth = study1_truth::<T>();
    let miss = study1_missingness::<T>();
    let train = simulate(&SimConfig::new(config.n_train, truth.clone(), miss, seed))?;
    let init = init_semisupervised(&train, 2, CovStructure::PerComponent, &config.init)?;
    let fit = ecm_fit(&train, 2, (init.params, init.miss), CovStructure::PerComponent, &config.ecm)?;

    let test_miss = MissingnessParams { alpha: T::zero(), ..miss };
    let test = simulate(&SimConfig::new(config.n_test, truth.clone(), test_miss, seed).with_stream(1))?;
    let truth_labels = test.truth().expect("simulated data carry truth");
    let pred = bayes_classify(test.features().view(), &fit.params)?;
    let oracle = bayes_classify(test.features().view(), &truth)?;
    Ok(Study1Record {
        seed,
        accuracy: empirical_accuracy(&pred, truth_labels)?,
        oracle_accuracy: empirical_accuracy(&oracle, truth_labels)?,
        params: fit.params,
        miss: fit.miss,
        loglik: fit.loglik,
        iterations: fit.iterations,
        converged: fit.converged,
        train_counts: train.code_counts(),
    })
}

/// Outcome of one replicate of the error-rate experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord<T> {
    pub index: usize,
    pub seed: u64,
    pub error_proposed: Option<T>,
    pub error_complete: Option<T>,
    pub error_proposed_euclidean: Option<T>,
    pub error_complete_euclidean: Option<T>,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
}

impl<T> ReplicateRecord<T> {
    pub fn usable(&self) -> bool {
        self.failure.is_none() && self.converged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary<T> {
    pub mean_proposed: T,
    pub mean_complete: T,
    pub true_error: T,
    pub are: ExcessErrorRatio<T>,
    /// The same ratio with every error computed by the Euclidean-normalised rule.
    pub are_euclidean: ExcessErrorRatio<T>,
    pub n_used: usize,
    pub n_failed: usize,
    pub n_not_converged: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport<T> {
    pub records: Vec<ReplicateRecord<T>>,
    pub summary: StudySummary<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct Study2Config<T> {
    pub n_replicates: usize,
    pub seed_base: u64,
    pub n: usize,
    /// Worker threads; `0` uses rayon's default.
    pub jobs: usize,
    pub init: InitOptions<T>,
    pub ecm: EcmOptions<T>,
}

impl<T: Scalar> Default for Study2Config<T> {
    fn default() -> Self {
        Self {
            n_replicates: 100,
            seed_base: 2024,
            n: 500,
            jobs: 0,
            init: InitOptions::default(),
            ecm: EcmOptions::default(),
        }
    }
}

fn study2_replicate<T: Scalar>(index: usize, config: &Study2Config<T>) -> ReplicateRecord<T> {
    let seed = config.seed_base + index as u64;
    let mut rec = ReplicateRecord {
        index,
        seed,
        error_proposed: None,
        error_complete: None,
        error_proposed_euclidean: None,
        error_complete_euclidean: None,
        iterations: 0,
        converged: false,
        failure: None,
    };
    let mut run = || -> Result<()> {
        let truth = study2_truth::<T>();
        let data = simulate(&SimConfig::new(config.n, truth, study2_missingness(), seed))?;
        let init = init_semisupervised(&data, 2, CovStructure::Shared, &config.init)?;
        let fit = ecm_fit(&data, 2, (init.params, init.miss), CovStructure::Shared, &config.ecm)?;
        rec.iterations = fit.iterations;
        rec.converged = fit.converged;
        rec.error_proposed = Some(bayes_error_of(&fit.params)?.value);
        rec.error_proposed_euclidean = Some(euclidean_error_of(&fit.params)?.value);
        let full = complete_data_mle(data.features().view(), data.truth().expect("truth"), 2, CovStructure::Shared)?;
        rec.error_complete = Some(bayes_error_of(&full)?.value);
        rec.error_complete_euclidean = Some(euclidean_error_of(&full)?.value);
        Ok(())
    };
    if let Err(e) = run() {
        warn!("replicate {index} (seed {seed}) failed: {e}");
        rec.failure = Some(e.to_string());
    }
    rec
}

fn mean_of<T: Scalar>(xs: impl Iterator<Item = T>) -> T {
    let (s, k) = xs.fold((T::zero(), 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        T::nan()
    } else {
        s / T::from_usize(k).unwrap()
    }
}

/// Aggregates replicate records in index order.
pub fn summarise_study2<T: Scalar>(records: Vec<ReplicateRecord<T>>) -> Result<StudyReport<T>> {
    let truth = study2_truth::<T>();
    let true_error = bayes_error_of(&truth)?.value;
    let true_euclid = euclidean_error_of(&truth)?.value;
    let used: Vec<&ReplicateRecord<T>> = records.iter().filter(|r| r.usable()).collect();
    let mean_proposed = mean_of(used.iter().filter_map(|r| r.error_proposed));
    let mean_complete = mean_of(used.iter().filter_map(|r| r.error_complete));
    let eu_prop = mean_of(used.iter().filter_map(|r| r.error_proposed_euclidean));
    let eu_comp = mean_of(used.iter().filter_map(|r| r.error_complete_euclidean));
    let summary = StudySummary {
        mean_proposed,
        mean_complete,
        true_error,
        are: excess_error_ratio(mean_proposed, mean_complete, true_error),
        are_euclidean: excess_error_ratio(eu_prop, eu_comp, true_euclid),
        n_used: used.len(),
        n_failed: records.iter().filter(|r| r.failure.is_some()).count(),
        n_not_converged: records.iter().filter(|r| r.failure.is_none() && !r.converged).count(),
    };
    Ok(StudyReport { records, summary })
}

/// The error-rate experiment: replicate `i` simulates from seed
/// `seed_base + i`, fits the proposed model and the complete-data model, and
/// evaluates both plug-in error rates.
pub fn run_study2<T: Scalar>(config: &Study2Config<T>) -> Result<StudyReport<T>> {
    let work = || -> Vec<ReplicateRecord<T>> {
        (0..config.n_replicates).into_par_iter().map(|i| study2_replicate(i, config)).collect()
    };
    let records = if config.jobs == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(work)
    };
    let report = summarise_study2(records)?;
    info!(
        "study II: {} used, {} failed, {} not converged, ratio {:?}",
        report.summary.n_used, report.summary.n_failed, report.summary.n_not_converged, report.summary.are.value
    );
    Ok(report)
}

/// Runs [`run_study1`] for `seed_base + i`, `i < replicates`, in parallel.
pub fn run_study1_replicates<T: Scalar>(
    replicates: usize,
    seed_base: u64,
    jobs: usize,
    config: &Study1Config<T>,
) -> Result<Vec<Result<Study1Record<T>>>> {
    let work = || (0..replicates).into_par_iter().map(|i| run_study1(seed_base + i as u64, config)).collect();
    if jobs == 0 {
        Ok(work())
    } else {
        Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidParameter(e.to_string()))?
            .install(work))
    }
}

/// Monte-Carlo error of `rule` against `truth` on stream `stream_id` of `seed`.
pub fn mc_error_seeded<T: Scalar>(
    truth: &MixtureParams<T>,
    rule: &MixtureParams<T>,
    n_mc: usize,
    seed: u64,
    stream_id: u64,
) -> Result<McError<T>> {
    mc_error_oracle(truth, rule, n_mc, &mut rng_stream(seed, stream_id))
}
