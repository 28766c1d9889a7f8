//! Parameter estimation: packing of the mixture parameters into an
//! unconstrained vector, the complete-data MLE, labelled-subset
//! initialisation with a missingness warm-up, the CM-step Q-function and its
//! numerical maximisation, and the full ECM loop.

use log::{debug, info, warn};
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::missingness::{
    channel_posteriors, fit_weighted_logistic, loglik_missingness, loglik_missingness_observed, mar_link,
    update_alpha, ChannelPosteriors, MarResponse, MarWeighting, MissingnessParams,
};
use crate::mixture::{
    log_joint, loglik_ignorable, responsibilities_from_log_joint, CovStructure, MixtureParams, PartialDataset,
    Responsibilities,
};
use crate::optim::{bfgs_maximize, BfgsOptions};
use crate::Scalar;

/// Unconstrained coordinates of a [`MixtureParams`]:
/// `g - 1` weight logits against the last component, the means in
/// component-major order, then the lower triangle (row-major) of each
/// distinct covariance's Cholesky factor with a log-transformed diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedTheta<T>(pub Vec<T>);

/// Length of the packed vector.
pub fn packed_len(g: usize, p: usize, structure: CovStructure) -> usize {
    (g - 1) + g * p + structure.n_matrices(g) * p * (p + 1) / 2
}

pub fn pack_theta<T: Scalar>(params: &MixtureParams<T>) -> Result<PackedTheta<T>> {
    let g = params.n_components();
    let p = params.dim();
    let mut v = Vec::with_capacity(packed_len(g, p, params.structure()));
    let w = params.weights();
    let last = w[g - 1].ln();
    v.extend(w.iter().take(g - 1).map(|wi| wi.ln() - last));
    v.extend(params.means().iter().copied());
    for (i, cov) in params.distinct_covariances().iter().enumerate() {
        let chol = Cholesky::new(cov.view())
            .ok_or_else(|| Error::CholeskyFailure { what: format!("component {}", i + 1) })?;
        let l = chol.lower();
        for r in 0..p {
            for c in 0..=r {
                v.push(if r == c { l[[r, c]].ln() } else { l[[r, c]] });
            }
        }
    }
    Ok(PackedTheta(v))
}

pub fn unpack_theta<T: Scalar>(
    v: &PackedTheta<T>,
    g: usize,
    p: usize,
    structure: CovStructure,
) -> Result<MixtureParams<T>> {
    let v = &v.0;
    let expected = packed_len(g, p, structure);
    if v.len() != expected {
        return Err(Error::Shape(format!("packed vector has length {}, expected {expected}", v.len())));
    }
    let mut logits = v[..g - 1].to_vec();
    logits.push(T::zero());
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let weights = Array1::from_iter(exps.iter().map(|&e| e / total));

    let mut off = g - 1;
    let means = Array2::from_shape_vec((g, p), v[off..off + g * p].to_vec())
        .map_err(|e| Error::Shape(e.to_string()))?;
    off += g * p;
    let mut covs = Vec::with_capacity(structure.n_matrices(g));
    for _ in 0..structure.n_matrices(g) {
        let mut l = Array2::<T>::zeros((p, p));
        for r in 0..p {
            for c in 0..=r {
                l[[r, c]] = if r == c { v[off].exp() } else { v[off] };
                off += 1;
            }
        }
        covs.push(Cholesky::from_lower(l).reconstruct());
    }
    MixtureParams::new(weights, means, covs, structure)
}

/// Weighted sufficient statistics before any positive-definiteness check.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassMoments<T> {
    pub weights: Array1<T>,
    pub means: Array2<T>,
    /// One matrix when shared, `g` otherwise.
    pub covariances: Vec<Array2<T>>,
}

/// Weighted MLE moments: `w` is n × g (one-hot labels or responsibilities).
/// Covariances use the MLE divisor (total weight, not weight minus one).
pub fn weighted_moments<T: Scalar>(
    y: ArrayView2<T>,
    w: ArrayView2<T>,
    structure: CovStructure,
) -> Result<ClassMoments<T>> {
    let (n, p) = y.dim();
    let g = w.ncols();
    if w.nrows() != n {
        return Err(Error::Shape(format!("{} weight rows for {n} observations", w.nrows())));
    }
    if n == 0 {
        return Err(Error::EmptyData);
    }
    let mass: Vec<T> = (0..g).map(|i| w.column(i).sum()).collect();
    if let Some(i) = mass.iter().position(|&m| !(m > T::zero())) {
        return Err(Error::EmptyClass { class: i + 1 });
    }
    let total: T = mass.iter().copied().sum();
    let weights = Array1::from_iter(mass.iter().map(|&m| m / total));

    let mut means = Array2::<T>::zeros((g, p));
    for (j, row) in y.outer_iter().enumerate() {
        for i in 0..g {
            let wij = w[[j, i]];
            if wij != T::zero() {
                for k in 0..p {
                    means[[i, k]] += wij * row[k];
                }
            }
        }
    }
    for i in 0..g {
        for k in 0..p {
            means[[i, k]] /= mass[i];
        }
    }

    let mut scatter = vec![Array2::<T>::zeros((p, p)); g];
    for (j, row) in y.outer_iter().enumerate() {
        for i in 0..g {
            let wij = w[[j, i]];
            if wij == T::zero() {
                continue;
            }
            for r in 0..p {
                let dr = row[r] - means[[i, r]];
                for c in 0..=r {
                    scatter[i][[r, c]] += wij * dr * (row[c] - means[[i, c]]);
                }
            }
        }
    }
    let covariances = match structure {
        CovStructure::Shared => {
            let mut pooled = Array2::<T>::zeros((p, p));
            for s in &scatter {
                pooled += s;
            }
            pooled.mapv_inplace(|x| x / total);
            vec![pooled]
        }
        CovStructure::PerComponent => scatter
            .into_iter()
            .zip(&mass)
            .map(|(s, &m)| s.mapv(|x| x / m))
            .collect(),
    };
    let covariances = covariances
        .into_iter()
        .map(|mut c| {
            for r in 0..p {
                for col in (r + 1)..p {
                    c[[r, col]] = c[[col, r]];
                }
            }
            c
        })
        .collect();
    Ok(ClassMoments { weights, means, covariances })
}

fn moments_to_params<T: Scalar>(m: ClassMoments<T>, structure: CovStructure) -> Result<MixtureParams<T>> {
    MixtureParams::new(m.weights, m.means, m.covariances, structure)
}

/// One-hot n × g matrix from 1-based labels.
pub fn one_hot<T: Scalar>(labels: &[usize], g: usize) -> Result<Array2<T>> {
    let mut w = Array2::<T>::zeros((labels.len(), g));
    for (j, &l) in labels.iter().enumerate() {
        if l == 0 || l > g {
            return Err(Error::Shape(format!("label {l} at row {j} outside 1..={g}")));
        }
        w[[j, l - 1]] = T::one();
    }
    Ok(w)
}

/// Maximum-likelihood fit from fully labelled data.
pub fn complete_data_mle<T: Scalar>(
    y: ArrayView2<T>,
    labels: &[usize],
    g: usize,
    structure: CovStructure,
) -> Result<MixtureParams<T>> {
    if labels.len() != y.nrows() {
        return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), y.nrows())));
    }
    let w = one_hot::<T>(labels, g)?;
    moments_to_params(weighted_moments(y, w.view(), structure)?, structure)
}

/// Closed-form maximiser of the first (mixture) sum of the Q-function.
pub fn weighted_mle<T: Scalar>(
    y: ArrayView2<T>,
    w: ArrayView2<T>,
    structure: CovStructure,
) -> Result<MixtureParams<T>> {
    moments_to_params(weighted_moments(y, w, structure)?, structure)
}

#[derive(Debug, Clone, Copy)]
pub struct InitOptions<T> {
    pub alpha_init: T,
    pub warm_up_iter: usize,
    pub tol: T,
    pub weighting: MarWeighting,
}

impl<T: Scalar> Default for InitOptions<T> {
    fn default() -> Self {
        Self { alpha_init: T::of(0.01), warm_up_iter: 20, tol: T::of(1e-6), weighting: MarWeighting::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmUpRecord<T> {
    pub alpha: T,
    pub xi0: T,
    pub xi1: T,
    /// `Σ_j m2_j` after the update.
    pub mar_mass: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitResult<T> {
    pub params: MixtureParams<T>,
    pub miss: MissingnessParams<T>,
    /// `false` when there was nothing to calibrate (no unlabelled rows).
    pub calibrated: bool,
    pub trace: Vec<WarmUpRecord<T>>,
}

fn labelled_subset<T: Scalar>(data: &PartialDataset<T>) -> (Array2<T>, Vec<usize>) {
    let rows: Vec<usize> = (0..data.n()).filter(|&j| !data.is_unlabelled(j)).collect();
    let y = data.features().select(ndarray::Axis(0), &rows);
    let labels = rows.iter().map(|&j| data.obs_label()[j].unwrap()).collect();
    (y, labels)
}

/// Two-stage initialisation: complete-data MLE on the labelled rows, then a
/// warm-up that iterates only `(alpha, xi)` with the mixture held fixed.
///
/// The starting `xi` is the logistic regression of the binary missing
/// indicator on the log-entropy.
pub fn init_semisupervised<T: Scalar>(
    data: &PartialDataset<T>,
    g: usize,
    structure: CovStructure,
    opts: &InitOptions<T>,
) -> Result<InitResult<T>> {
    data.check_labels(g)?;
    let (y_lab, labels) = labelled_subset(data);
    if labels.is_empty() {
        return Err(Error::EmptyClass { class: 1 });
    }
    let params = complete_data_mle(y_lab.view(), &labels, g, structure)?;
    if data.n_unlabelled() == 0 {
        return Ok(InitResult {
            params,
            miss: MissingnessParams::new(T::zero(), T::zero(), T::zero())?,
            calibrated: false,
            trace: Vec::new(),
        });
    }

    let resp = responsibilities_from_log_joint(&log_joint(data.features().view(), &params)?);
    let d = resp.log_entropy.view();
    let missing: Array1<T> =
        (0..data.n()).map(|j| if data.is_unlabelled(j) { T::one() } else { T::zero() }).collect();
    let start = fit_weighted_logistic(d, missing.view(), T::of(1e-8), 100)?;
    let mut miss = MissingnessParams::new(opts.alpha_init, start.xi0, start.xi1)?;
    let mut trace = Vec::with_capacity(opts.warm_up_iter);

    for iter in 1..=opts.warm_up_iter {
        let q = mar_link(d, &miss);
        let ch = channel_posteriors(data, q.view(), miss.alpha)?;
        let alpha = update_alpha(&ch, data.n())?;
        let fit = MarResponse::new(data, &ch, opts.weighting).fit(d, T::of(1e-8), 100)?;
        if fit.separated {
            warn!("warm-up {iter}: logistic fit hit the separation cap");
        }
        let next = MissingnessParams::new(alpha, fit.xi0, fit.xi1)?;
        let change = (next.alpha - miss.alpha)
            .abs()
            .max((next.xi0 - miss.xi0).abs())
            .max((next.xi1 - miss.xi1).abs());
        miss = next;
        let rec = WarmUpRecord { alpha: miss.alpha, xi0: miss.xi0, xi1: miss.xi1, mar_mass: ch.m2.sum() };
        debug!(
            "warm-up {iter}: alpha={:.4} xi0={:.4} xi1={:.4} sum(m2)={:.1}/{}",
            rec.alpha,
            rec.xi0,
            rec.xi1,
            rec.mar_mass,
            data.n_unlabelled()
        );
        trace.push(rec);
        if change < opts.tol {
            break;
        }
    }
    Ok(InitResult { params, miss, calibrated: true, trace })
}

/// Class weights for the Q-function: one-hot on labelled rows, model
/// posteriors on unlabelled rows.
pub fn fixed_responsibilities<T: Scalar>(data: &PartialDataset<T>, model: &Responsibilities<T>) -> Array2<T> {
    let mut w = model.tau.clone();
    for (j, label) in data.obs_label().iter().enumerate() {
        if let Some(l) = label {
            let mut row = w.row_mut(j);
            row.fill(T::zero());
            row[l - 1] = T::one();
        }
    }
    w
}

/// CM-step objective for the mixture parameters:
/// `Σ_j Σ_i w_ij [log π_i + log φ(y_j; μ_i, Σ_i)] + Σ_j [m2 log q_j(θ) + (1 - m2) log(1 - q_j(θ))]`
/// where `q_j(θ)` is recomputed from the entropy at `params` with `xi` fixed.
pub fn q_theta<T: Scalar>(
    data: &PartialDataset<T>,
    params: &MixtureParams<T>,
    miss: &MissingnessParams<T>,
    tau_fixed: ArrayView2<T>,
    channels: &ChannelPosteriors<T>,
) -> Result<T> {
    if channels.len() != data.n() {
        return Err(Error::Shape("Q-function inputs do not match the data".into()));
    }
    q_theta_with(data, params, miss, tau_fixed, &MarResponse::new(data, channels, MarWeighting::UnitWeights))
}

/// [`q_theta`] with an arbitrary MAR response: the second sum becomes
/// `Σ_j w_j [t_j log q_j(θ) + (1 - t_j) log(1 - q_j(θ))]`.
pub fn q_theta_with<T: Scalar>(
    data: &PartialDataset<T>,
    params: &MixtureParams<T>,
    miss: &MissingnessParams<T>,
    tau_fixed: ArrayView2<T>,
    response: &MarResponse<T>,
) -> Result<T> {
    let n = data.n();
    if tau_fixed.dim() != (n, params.n_components()) || response.targets.len() != n || response.weights.len() != n
    {
        return Err(Error::Shape("Q-function inputs do not match the data".into()));
    }
    let lj = log_joint(data.features().view(), params)?;
    let first: T = lj.iter().zip(tau_fixed.iter()).map(|(&l, &w)| if w == T::zero() { T::zero() } else { w * l }).sum();
    let second = if miss.xi1 == T::zero() {
        // constant in θ, but still part of the objective value
        response.objective(Array1::zeros(n).view(), miss)
    } else {
        let resp = responsibilities_from_log_joint(&lj);
        response.objective(resp.log_entropy.view(), miss)
    };
    Ok(first + second)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmStepOutcome<T> {
    pub params: MixtureParams<T>,
    pub q_value: T,
    /// The optimiser did not improve on the start point.
    pub not_improved: bool,
}

/// Numerically maximises [`q_theta_with`] over the packed parameters.
///
/// Starts from the better of `start` and the closed-form maximiser of the
/// mixture sum, then runs BFGS with central finite differences. The result
/// never has a lower Q than `start`; otherwise `start`
/// is returned unchanged with `not_improved` set.
pub fn maximize_q_theta<T: Scalar>(
    data: &PartialDataset<T>,
    miss: &MissingnessParams<T>,
    tau_fixed: ArrayView2<T>,
    response: &MarResponse<T>,
    start: &MixtureParams<T>,
    structure: CovStructure,
    bfgs: &BfgsOptions<T>,
) -> Result<CmStepOutcome<T>> {
    let g = start.n_components();
    let p = start.dim();
    let start = if start.structure() == structure {
        start.clone()
    } else {
        MixtureParams::new(
            start.weights().clone(),
            start.means().clone(),
            start.covariances().to_vec(),
            structure,
        )?
    };
    let q_start = q_theta_with(data, &start, miss, tau_fixed, response)?;

    let mut origin = start.clone();
    let mut q_origin = q_start;
    if let Ok(closed) = weighted_mle(data.features().view(), tau_fixed, structure) {
        if let Ok(qc) = q_theta_with(data, &closed, miss, tau_fixed, response) {
            if qc > q_origin {
                origin = closed;
                q_origin = qc;
            }
        }
    }

    let objective = |x: &[T]| -> T {
        match unpack_theta(&PackedTheta(x.to_vec()), g, p, structure) {
            Ok(theta) => q_theta_with(data, &theta, miss, tau_fixed, response).unwrap_or(T::neg_infinity()),
            Err(_) => T::neg_infinity(),
        }
    };
    let x0 = pack_theta(&origin)?.0;
    let scale = T::one() + q_origin.abs();
    let opts = BfgsOptions { grad_tol: bfgs.grad_tol * scale, ..*bfgs };
    let res = bfgs_maximize(objective, &x0, &opts);

    let (best, q_best) = if res.value > q_origin {
        (unpack_theta(&PackedTheta(res.x), g, p, structure)?, res.value)
    } else {
        (origin, q_origin)
    };
    if res.line_search_failed && !res.converged {
        debug!("CM-step line search stopped after {} iterations", res.iterations);
    }
    if q_best > q_start {
        Ok(CmStepOutcome { params: best, q_value: q_best, not_improved: false })
    } else {
        Ok(CmStepOutcome { params: start, q_value: q_start, not_improved: true })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EcmOptions<T> {
    pub max_iter: usize,
    /// Relative change of the full log-likelihood that ends the loop.
    pub tol: T,
    /// When `false`, `alpha` and `xi` stay at their initial values.
    pub update_missingness: bool,
    pub weighting: MarWeighting,
    pub logistic_tol: T,
    pub logistic_max_iter: usize,
    pub bfgs: BfgsOptions<T>,
}

impl<T: Scalar> Default for EcmOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: T::of(1e-6),
            update_missingness: true,
            weighting: MarWeighting::default(),
            logistic_tol: T::of(1e-8),
            logistic_max_iter: 100,
            bfgs: BfgsOptions { max_iter: 100, grad_tol: T::of(1e-9), rel_tol: T::of(1e-14) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord<T> {
    pub loglik: T,
    pub alpha: T,
    pub xi0: T,
    pub xi1: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T> {
    pub params: MixtureParams<T>,
    pub miss: MissingnessParams<T>,
    /// Full log-likelihood at the returned parameters.
    pub loglik: T,
    /// Full log-likelihood at the initial parameters.
    pub initial_loglik: T,
    pub trace: Vec<TraceRecord<T>>,
    pub iterations: usize,
    pub converged: bool,
}

/// State of one E-step: model posteriors, MAR probabilities and channels.
struct EStep<T> {
    resp: Responsibilities<T>,
    q: Array1<T>,
    channels: ChannelPosteriors<T>,
}

fn e_step<T: Scalar>(
    data: &PartialDataset<T>,
    params: &MixtureParams<T>,
    miss: &MissingnessParams<T>,
) -> Result<EStep<T>> {
    let resp = responsibilities_from_log_joint(&log_joint(data.features().view(), params)?);
    let q = mar_link(resp.log_entropy.view(), miss);
    let channels = channel_posteriors(data, q.view(), miss.alpha)?;
    Ok(EStep { resp, q, channels })
}

/// Log-likelihood tracked by the ECM loop.
///
/// With [`MarWeighting::ObservedLikelihood`] this is the observed-data
/// log-likelihood `log L_ig(θ) + Σ_lab log((1 - α)(1 - q)) + Σ_unl log(α + (1 - α) q)`.
/// With [`MarWeighting::UnitWeights`] the missingness part is the
/// soft-channel form evaluated with the channel posteriors implied by `Ψ`.
pub fn full_loglik<T: Scalar>(
    data: &PartialDataset<T>,
    params: &MixtureParams<T>,
    miss: &MissingnessParams<T>,
    weighting: MarWeighting,
) -> Result<T> {
    let ign = loglik_ignorable(data, params)?;
    match weighting {
        MarWeighting::ObservedLikelihood => {
            let resp = responsibilities_from_log_joint(&log_joint(data.features().view(), params)?);
            let q = mar_link(resp.log_entropy.view(), miss);
            Ok(ign + loglik_missingness_observed(data, q.view(), miss.alpha)?)
        }
        MarWeighting::UnitWeights => {
            let e = e_step(data, params, miss)?;
            Ok(ign + loglik_missingness(data, e.q.view(), miss.alpha, &e.channels)?)
        }
    }
}

/// Expectation–conditional-maximisation fit of the mixture and the
/// missingness mechanism.
pub fn ecm_fit<T: Scalar>(
    data: &PartialDataset<T>,
    g: usize,
    init: (MixtureParams<T>, MissingnessParams<T>),
    structure: CovStructure,
    opts: &EcmOptions<T>,
) -> Result<FitResult<T>> {
    data.check_labels(g)?;
    let (mut params, mut miss) = init;
    if params.n_components() != g || params.dim() != data.dim() {
        return Err(Error::Shape("initial parameters do not match g or the data dimension".into()));
    }
    let n = data.n();
    let has_unlabelled = data.n_unlabelled() > 0;
    let initial_loglik = full_loglik(data, &params, &miss, opts.weighting)?;
    let mut loglik = initial_loglik;
    let mut trace = Vec::with_capacity(opts.max_iter);
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        iterations = iter;
        // E-steps
        let e = e_step(data, &params, &miss)?;
        let tau_fixed = fixed_responsibilities(data, &e.resp);
        let response = MarResponse::new(data, &e.channels, opts.weighting);

        // CM-step 1: alpha and xi
        if opts.update_missingness {
            let alpha = if has_unlabelled { update_alpha(&e.channels, n)? } else { T::zero() };
            let (mut xi0, mut xi1) = (miss.xi0, miss.xi1);
            if has_unlabelled {
                match response.fit(e.resp.log_entropy.view(), opts.logistic_tol, opts.logistic_max_iter) {
                    Ok(fit) => {
                        if fit.separated {
                            warn!("iteration {iter}: logistic fit hit the separation cap");
                        }
                        xi0 = fit.xi0;
                        xi1 = fit.xi1;
                    }
                    Err(err) => warn!("iteration {iter}: keeping xi ({err})"),
                }
            }
            miss = MissingnessParams::new(alpha, xi0, xi1)?;
        }

        // CM-step 2: theta
        let cm = maximize_q_theta(data, &miss, tau_fixed.view(), &response, &params, structure, &opts.bfgs)?;
        if cm.not_improved {
            debug!("iteration {iter}: CM-step kept the previous mixture parameters");
        }
        params = cm.params;

        let next = full_loglik(data, &params, &miss, opts.weighting)?;
        trace.push(TraceRecord { loglik: next, alpha: miss.alpha, xi0: miss.xi0, xi1: miss.xi1 });
        info!(
            "iter {iter:>3}: loglik={:.6} | alpha={:.4} | xi0={:.4} | xi1={:.4}",
            next, miss.alpha, miss.xi0, miss.xi1
        );
        let rel = (next - loglik).abs() / (T::one() + next.abs());
        loglik = next;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(FitResult { params, miss, loglik, initial_loglik, trace, iterations, converged })
}
