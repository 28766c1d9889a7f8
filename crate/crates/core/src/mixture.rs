//! Gaussian mixture data model: parameters, partially labelled datasets,
//! component densities, class posteriors, entropy, Bayes classification and
//! the labelled / unlabelled log-likelihood terms.
//!
//! Class labels at every public surface are 1-based (`1..=g`).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, Cholesky};
use crate::scalar::log_sum_exp;
use crate::Scalar;

/// Whether the components share one covariance matrix or carry their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovStructure {
    Shared,
    PerComponent,
}

impl CovStructure {
    /// Number of distinct covariance matrices for `g` components.
    pub fn n_matrices(self, g: usize) -> usize {
        match self {
            CovStructure::Shared => 1,
            CovStructure::PerComponent => g,
        }
    }

    /// The numeric code used by the CLI and JSON (`1` shared, `2` per component).
    pub fn code(self) -> u8 {
        match self {
            CovStructure::Shared => 1,
            CovStructure::PerComponent => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(CovStructure::Shared),
            2 => Some(CovStructure::PerComponent),
            _ => None,
        }
    }
}

fn weight_tol<T: Scalar>() -> T {
    T::of(1e-12).max(T::epsilon() * T::of(64.0))
}

fn symmetry_tol<T: Scalar>() -> T {
    T::of(1e-10).max(T::epsilon() * T::of(1024.0))
}

/// Mixing proportions, component means and covariances of a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams<T> {
    weights: Array1<T>,
    /// g × p, one mean per row.
    means: Array2<T>,
    /// Always `g` matrices; identical slots when the structure is shared.
    covariances: Vec<Array2<T>>,
    structure: CovStructure,
}

impl<T: Scalar> MixtureParams<T> {
    /// Builds and validates a parameter set.
    ///
    /// `covariances` holds either one matrix or `g` matrices. A single matrix
    /// is replicated. Under [`CovStructure::Shared`] all matrices must agree.
    pub fn new(
        weights: Array1<T>,
        means: Array2<T>,
        covariances: Vec<Array2<T>>,
        structure: CovStructure,
    ) -> Result<Self> {
        let g = weights.len();
        if g == 0 {
            return Err(Error::Shape("mixture needs at least one component".into()));
        }
        if means.nrows() != g {
            return Err(Error::Shape(format!("{} means for {} weights", means.nrows(), g)));
        }
        let p = means.ncols();
        if p == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        let covariances = match covariances.len() {
            1 if g > 1 => vec![covariances[0].clone(); g],
            n if n == g => covariances,
            n => return Err(Error::Shape(format!("{n} covariance matrices for {g} components"))),
        };
        let params = Self { weights, means, covariances, structure };
        params.validate()?;
        Ok(params)
    }

    fn validate(&self) -> Result<()> {
        let g = self.n_components();
        let p = self.dim();
        let total: T = self.weights.iter().copied().sum();
        if (total - T::one()).abs() > weight_tol() {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, not 1")));
        }
        if self.weights.iter().any(|&w| !(w > T::zero())) {
            return Err(Error::InvalidParameter("every weight must be positive".into()));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("non-finite mean".into()));
        }
        for (i, cov) in self.covariances.iter().enumerate() {
            if cov.dim() != (p, p) {
                return Err(Error::Shape(format!("covariance {} is {:?}, expected {p}x{p}", i + 1, cov.dim())));
            }
            if asymmetry(cov.view()) > symmetry_tol() {
                return Err(Error::InvalidParameter(format!("covariance {} is not symmetric", i + 1)));
            }
            if Cholesky::new(cov.view()).is_none() {
                return Err(Error::CholeskyFailure { what: format!("component {}", i + 1) });
            }
        }
        if self.structure == CovStructure::Shared && g > 1 {
            let first = &self.covariances[0];
            if self.covariances[1..].iter().any(|c| c != first) {
                return Err(Error::InvalidParameter(
                    "shared structure requires identical covariance matrices".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<T> {
        &self.means
    }

    /// Mean of component `i` (0-based index).
    pub fn mean(&self, i: usize) -> ArrayView1<'_, T> {
        self.means.row(i)
    }

    /// Covariance of component `i` (0-based index).
    pub fn covariance(&self, i: usize) -> &Array2<T> {
        &self.covariances[i]
    }

    pub fn covariances(&self) -> &[Array2<T>] {
        &self.covariances
    }

    /// The distinct covariance matrices: one when shared, `g` otherwise.
    pub fn distinct_covariances(&self) -> &[Array2<T>] {
        &self.covariances[..self.structure.n_matrices(self.n_components())]
    }

    pub fn structure(&self) -> CovStructure {
        self.structure
    }

    /// Cholesky factors of every component covariance.
    pub fn factors(&self) -> Result<Vec<Cholesky<T>>> {
        self.covariances
            .iter()
            .enumerate()
            .map(|(i, c)| {
                Cholesky::new(c.view()).ok_or_else(|| Error::CholeskyFailure { what: format!("component {}", i + 1) })
            })
            .collect()
    }
}

/// Per-row missingness status of a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MissingCode {
    Labelled = 0,
    Mcar = 1,
    Mar = 2,
}

impl MissingCode {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(MissingCode::Labelled),
            1 => Some(MissingCode::Mcar),
            2 => Some(MissingCode::Mar),
            _ => None,
        }
    }

    pub fn is_missing(self) -> bool {
        self != MissingCode::Labelled
    }
}

/// Feature matrix together with label-missingness codes and observed labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialDataset<T> {
    features: Array2<T>,
    missing: Vec<MissingCode>,
    obs_label: Vec<Option<usize>>,
    truth: Option<Vec<usize>>,
    entropy: Option<Array1<T>>,
}

impl<T: Scalar> PartialDataset<T> {
    /// `obs_label[j]` must be `Some` exactly when `missing[j]` is
    /// [`MissingCode::Labelled`]. Labels are 1-based.
    pub fn new(features: Array2<T>, missing: Vec<MissingCode>, obs_label: Vec<Option<usize>>) -> Result<Self> {
        let n = features.nrows();
        if missing.len() != n || obs_label.len() != n {
            return Err(Error::Shape(format!(
                "{n} feature rows, {} missing codes, {} labels",
                missing.len(),
                obs_label.len()
            )));
        }
        for (j, (m, l)) in missing.iter().zip(&obs_label).enumerate() {
            match (m.is_missing(), l) {
                (false, None) => {
                    return Err(Error::InvalidParameter(format!("row {j} is labelled but has no label")));
                }
                (true, Some(_)) => {
                    return Err(Error::InvalidParameter(format!("row {j} is unlabelled but carries a label")));
                }
                (false, Some(0)) => {
                    return Err(Error::InvalidParameter(format!("row {j}: labels are 1-based")));
                }
                _ => {}
            }
        }
        Ok(Self { features, missing, obs_label, truth: None, entropy: None })
    }

    /// Fully labelled dataset.
    pub fn labelled(features: Array2<T>, labels: Vec<usize>) -> Result<Self> {
        let n = labels.len();
        let ds = Self::new(features, vec![MissingCode::Labelled; n], labels.iter().map(|&l| Some(l)).collect())?;
        ds.with_truth(labels)
    }

    pub fn with_truth(mut self, truth: Vec<usize>) -> Result<Self> {
        if truth.len() != self.n() {
            return Err(Error::Shape(format!("{} truth labels for {} rows", truth.len(), self.n())));
        }
        if truth.contains(&0) {
            return Err(Error::InvalidParameter("labels are 1-based".into()));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn with_entropy(mut self, entropy: Array1<T>) -> Result<Self> {
        if entropy.len() != self.n() {
            return Err(Error::Shape(format!("{} entropy values for {} rows", entropy.len(), self.n())));
        }
        self.entropy = Some(entropy);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<T> {
        &self.features
    }

    pub fn missing(&self) -> &[MissingCode] {
        &self.missing
    }

    pub fn obs_label(&self) -> &[Option<usize>] {
        &self.obs_label
    }

    pub fn truth(&self) -> Option<&[usize]> {
        self.truth.as_deref()
    }

    pub fn entropy(&self) -> Option<&Array1<T>> {
        self.entropy.as_ref()
    }

    /// `m_j = 1{label missing}`.
    pub fn is_unlabelled(&self, j: usize) -> bool {
        self.missing[j].is_missing()
    }

    pub fn n_unlabelled(&self) -> usize {
        self.missing.iter().filter(|m| m.is_missing()).count()
    }

    /// Counts of (labelled, MCAR, MAR) rows.
    pub fn code_counts(&self) -> (usize, usize, usize) {
        self.missing.iter().fold((0, 0, 0), |(a, b, c), m| match m {
            MissingCode::Labelled => (a + 1, b, c),
            MissingCode::Mcar => (a, b + 1, c),
            MissingCode::Mar => (a, b, c + 1),
        })
    }

    /// Errors if an observed label exceeds `g`.
    pub fn check_labels(&self, g: usize) -> Result<()> {
        if let Some(j) = self.obs_label.iter().position(|l| matches!(l, Some(l) if *l > g)) {
            return Err(Error::Shape(format!("row {j} has label {} but g = {g}", self.obs_label[j].unwrap())));
        }
        Ok(())
    }
}

/// Posterior class probabilities and the derived entropy quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities<T> {
    /// n × g.
    pub tau: Array2<T>,
    /// Shannon entropy of each row of `tau`.
    pub entropy: Array1<T>,
    /// Clamped `log(max(entropy, floor))`.
    pub log_entropy: Array1<T>,
}

/// Lower / upper clamp applied to log-entropy values.
pub const LOG_ENTROPY_RANGE: (f64, f64) = (-700.0, 50.0);

/// Shannon entropy with `0 log 0 = 0`.
pub fn shannon_entropy<T: Scalar>(probs: ArrayView1<T>) -> T {
    let e = probs
        .iter()
        .filter(|&&t| t > T::zero())
        .map(|&t| -t * t.ln())
        .sum::<T>();
    e.max(T::zero())
}

/// `log(max(e, floor))` clamped to [`LOG_ENTROPY_RANGE`].
pub fn clamped_log_entropy<T: Scalar>(e: T) -> T {
    let (lo, hi) = LOG_ENTROPY_RANGE;
    e.max(T::entropy_floor()).ln().max(T::of(lo)).min(T::of(hi))
}

/// Log of the multivariate normal density, via Cholesky.
pub fn log_component_density<T: Scalar>(y: ArrayView1<T>, mean: ArrayView1<T>, cov: ArrayView2<T>) -> Result<T> {
    let p = y.len();
    if mean.len() != p || cov.dim() != (p, p) {
        return Err(Error::Shape(format!(
            "y has length {p}, mean {}, covariance {:?}",
            mean.len(),
            cov.dim()
        )));
    }
    let chol = Cholesky::new(cov).ok_or_else(|| Error::CholeskyFailure { what: "covariance".into() })?;
    Ok(log_density_factored(y, mean, &chol))
}

pub(crate) fn log_density_factored<T: Scalar>(y: ArrayView1<T>, mean: ArrayView1<T>, chol: &Cholesky<T>) -> T {
    let p = T::from_usize(y.len()).unwrap();
    let half = T::of(0.5);
    -half * (p * T::TAU().ln() + chol.log_det() + chol.mahalanobis_sq(y, mean))
}

fn check_cols<T: Scalar>(y: ArrayView2<T>, params: &MixtureParams<T>) -> Result<()> {
    if y.ncols() != params.dim() {
        return Err(Error::Shape(format!("data has {} columns, model expects {}", y.ncols(), params.dim())));
    }
    Ok(())
}

/// n × g matrix of `log π_i + log φ(y_j; μ_i, Σ_i)`.
pub fn log_joint<T: Scalar>(y: ArrayView2<T>, params: &MixtureParams<T>) -> Result<Array2<T>> {
    check_cols(y, params)?;
    let factors = params.factors()?;
    Ok(log_joint_factored(y, params, &factors))
}

pub(crate) fn log_joint_factored<T: Scalar>(
    y: ArrayView2<T>,
    params: &MixtureParams<T>,
    factors: &[Cholesky<T>],
) -> Array2<T> {
    let g = params.n_components();
    let log_w: Vec<T> = params.weights().iter().map(|w| w.ln()).collect();
    let mut out = Array2::<T>::zeros((y.nrows(), g));
    for (row, mut dst) in y.outer_iter().zip(out.outer_iter_mut()) {
        for i in 0..g {
            dst[i] = log_w[i] + log_density_factored(row, params.mean(i), &factors[i]);
        }
    }
    out
}

/// Posteriors, entropies and log-entropies from an n × g log-joint matrix.
pub fn responsibilities_from_log_joint<T: Scalar>(log_joint: &Array2<T>) -> Responsibilities<T> {
    let n = log_joint.nrows();
    let mut tau = Array2::<T>::zeros(log_joint.raw_dim());
    let mut entropy = Array1::<T>::zeros(n);
    let mut log_entropy = Array1::<T>::zeros(n);
    for (j, (src, mut dst)) in log_joint.outer_iter().zip(tau.outer_iter_mut()).enumerate() {
        let row: Vec<T> = src.to_vec();
        let lse = log_sum_exp(&row);
        for (d, &l) in dst.iter_mut().zip(&row) {
            *d = (l - lse).exp();
        }
        let s: T = dst.sum();
        dst.mapv_inplace(|t| t / s);
        let e = shannon_entropy(dst.view());
        entropy[j] = e;
        log_entropy[j] = clamped_log_entropy(e);
    }
    Responsibilities { tau, entropy, log_entropy }
}

/// Posterior class probabilities τ, entropy and log-entropy for every row.
pub fn class_posteriors<T: Scalar>(y: ArrayView2<T>, params: &MixtureParams<T>) -> Result<Responsibilities<T>> {
    let lj = log_joint(y, params)?;
    Ok(responsibilities_from_log_joint(&lj))
}

/// Bayes rule: the 1-based label maximising `log π_h + log φ_h`, ties to the
/// smallest index.
pub fn bayes_classify<T: Scalar>(y: ArrayView2<T>, params: &MixtureParams<T>) -> Result<Vec<usize>> {
    let lj = log_joint(y, params)?;
    Ok(lj.outer_iter().map(|row| argmax_first(row) + 1).collect())
}

/// Classifies a single observation.
pub fn bayes_classify_one<T: Scalar>(y: ArrayView1<T>, params: &MixtureParams<T>) -> Result<usize> {
    let row = y.insert_axis(Axis(0));
    Ok(bayes_classify(row, params)?[0])
}

fn argmax_first<T: Scalar>(row: ArrayView1<T>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_dataset<T: Scalar>(data: &PartialDataset<T>, params: &MixtureParams<T>) -> Result<()> {
    check_cols(data.features().view(), params)?;
    data.check_labels(params.n_components())
}

/// `Σ_j (1 - m_j) log{π_{z_j} f_{z_j}(y_j)}`.
pub fn loglik_labelled<T: Scalar>(data: &PartialDataset<T>, params: &MixtureParams<T>) -> Result<T> {
    check_dataset(data, params)?;
    let factors = params.factors()?;
    let mut total = T::zero();
    for (j, row) in data.features().outer_iter().enumerate() {
        if let Some(label) = data.obs_label()[j] {
            let i = label - 1;
            total += params.weights()[i].ln() + log_density_factored(row, params.mean(i), &factors[i]);
        }
    }
    Ok(total)
}

/// `Σ_j m_j log Σ_i π_i f_i(y_j)`.
pub fn loglik_unlabelled<T: Scalar>(data: &PartialDataset<T>, params: &MixtureParams<T>) -> Result<T> {
    check_dataset(data, params)?;
    let factors = params.factors()?;
    let g = params.n_components();
    let log_w: Vec<T> = params.weights().iter().map(|w| w.ln()).collect();
    let mut buf = vec![T::zero(); g];
    let mut total = T::zero();
    for (j, row) in data.features().outer_iter().enumerate() {
        if !data.is_unlabelled(j) {
            continue;
        }
        for i in 0..g {
            buf[i] = log_w[i] + log_density_factored(row, params.mean(i), &factors[i]);
        }
        total += log_sum_exp(&buf);
    }
    Ok(total)
}

/// Log-likelihood under ignorable missingness: labelled plus unlabelled parts.
pub fn loglik_ignorable<T: Scalar>(data: &PartialDataset<T>, params: &MixtureParams<T>) -> Result<T> {
    Ok(loglik_labelled(data, params)? + loglik_unlabelled(data, params)?)
}
