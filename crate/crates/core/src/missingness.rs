//! The mixed MCAR + entropy-based MAR label-missingness mechanism: the
//! logistic MAR link, channel posteriors, the missingness log-likelihood and
//! the conditional-maximisation updates for `alpha` and `xi`.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::mixture::PartialDataset;
use crate::scalar::sigmoid;
use crate::Scalar;

/// Largest magnitude allowed for either logistic coefficient.
pub const XI_CAP: f64 = 30.0;

/// MCAR proportion `alpha` and logistic MAR coefficients `(xi0, xi1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MissingnessParams<T> {
    pub alpha: T,
    pub xi0: T,
    pub xi1: T,
}

impl<T: Scalar> MissingnessParams<T> {
    pub fn new(alpha: T, xi0: T, xi1: T) -> Result<Self> {
        if !(alpha >= T::zero() && alpha <= T::one()) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} outside [0, 1]")));
        }
        if xi0.is_nan() || xi1.is_nan() {
            return Err(Error::InvalidParameter("xi is NaN".into()));
        }
        Ok(Self { alpha, xi0, xi1 })
    }

    /// Linear predictor `xi0 + xi1 d`.
    #[inline]
    pub fn eta(&self, d: T) -> T {
        self.xi0 + self.xi1 * d
    }
}

/// Soft assignment of each missing label to the MCAR (`m1`) or MAR (`m2`)
/// channel. Both are zero on labelled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPosteriors<T> {
    pub m1: Array1<T>,
    pub m2: Array1<T>,
}

impl<T: Scalar> ChannelPosteriors<T> {
    /// Hard indicators read from the observed missing codes.
    pub fn from_codes(data: &PartialDataset<T>) -> Self {
        use crate::mixture::MissingCode::*;
        let m1 = data.missing().iter().map(|&c| if c == Mcar { T::one() } else { T::zero() }).collect();
        let m2 = data.missing().iter().map(|&c| if c == Mar { T::one() } else { T::zero() }).collect();
        Self { m1, m2 }
    }

    pub fn len(&self) -> usize {
        self.m1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m1.is_empty()
    }
}

/// MAR probability `q_j = logistic(xi0 + xi1 d_j)`, kept strictly inside (0, 1).
pub fn mar_link<T: Scalar>(d: ArrayView1<T>, xi: &MissingnessParams<T>) -> Array1<T> {
    d.mapv(|dj| mar_prob(xi.eta(dj)))
}

#[inline]
pub(crate) fn mar_prob<T: Scalar>(eta: T) -> T {
    let hi = T::one() - T::epsilon() / (T::one() + T::one());
    sigmoid(eta).max(T::min_positive_value()).min(hi)
}

/// E-step over the missingness channel of every unlabelled row.
///
/// The observed code (MCAR vs MAR) is deliberately ignored: only whether the
/// label is missing enters.
pub fn channel_posteriors<T: Scalar>(
    data: &PartialDataset<T>,
    q: ArrayView1<T>,
    alpha: T,
) -> Result<ChannelPosteriors<T>> {
    let n = data.n();
    if q.len() != n {
        return Err(Error::Shape(format!("{} MAR probabilities for {n} rows", q.len())));
    }
    let mut m1 = Array1::<T>::zeros(n);
    let mut m2 = Array1::<T>::zeros(n);
    for j in 0..n {
        if !data.is_unlabelled(j) {
            continue;
        }
        let mar = (T::one() - alpha) * q[j];
        let denom = alpha + mar;
        if !(denom > T::zero()) {
            return Err(Error::DegenerateChannel { row: j });
        }
        m1[j] = alpha / denom;
        m2[j] = mar / denom;
    }
    Ok(ChannelPosteriors { m1, m2 })
}

/// `w log(p)` with `0 log 0 = 0` and `w log 0 = -inf` for `w > 0`.
fn weighted_log<T: Scalar>(w: T, p: T) -> T {
    if w == T::zero() {
        T::zero()
    } else if p == T::zero() {
        T::neg_infinity()
    } else {
        w * p.ln()
    }
}

/// Missingness log-likelihood
/// `Σ_j m1 log α + (1 - m1) log(1 - α) + m2 log q + (1 - m2) log(1 - q)`
/// with hard or soft indicators. `q` is clamped away from {0, 1}; an `alpha`
/// of exactly 0 or 1 contradicted by the indicators yields `-inf`.
pub fn loglik_missingness<T: Scalar>(
    data: &PartialDataset<T>,
    q: ArrayView1<T>,
    alpha: T,
    channels: &ChannelPosteriors<T>,
) -> Result<T> {
    let n = data.n();
    if q.len() != n || channels.len() != n {
        return Err(Error::Shape(format!("q has {}, channels {} entries for {n} rows", q.len(), channels.len())));
    }
    let mut total = T::zero();
    for j in 0..n {
        let (m1, m2) = (channels.m1[j], channels.m2[j]);
        let qj = q[j].max(T::prob_floor()).min(T::prob_ceil());
        total += weighted_log(m1, alpha) + weighted_log(T::one() - m1, T::one() - alpha);
        total += m2 * qj.ln() + (T::one() - m2) * (T::one() - qj).ln();
    }
    Ok(total)
}

/// Observed-data missingness log-likelihood with the channel summed out:
/// labelled rows contribute `log(1 - α) + log(1 - q)`, unlabelled rows
/// `log(α + (1 - α) q)`.
pub fn loglik_missingness_observed<T: Scalar>(data: &PartialDataset<T>, q: ArrayView1<T>, alpha: T) -> Result<T> {
    let n = data.n();
    if q.len() != n {
        return Err(Error::Shape(format!("{} MAR probabilities for {n} rows", q.len())));
    }
    let mut total = T::zero();
    for j in 0..n {
        let qj = q[j].max(T::prob_floor()).min(T::prob_ceil());
        total += if data.is_unlabelled(j) {
            (alpha + (T::one() - alpha) * qj).ln()
        } else {
            (T::one() - alpha).ln() + (T::one() - qj).ln()
        };
    }
    Ok(total)
}

/// How rows enter the MAR logistic regression (and the θ-dependent MAR term
/// of the mixture CM-step).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MarWeighting {
    /// Response `m2` with unit weight on every row. Unlabelled rows assigned
    /// to the MCAR channel then count as MAR failures, so the ECM steps do not
    /// ascend any single likelihood.
    UnitWeights,
    /// Unlabelled rows weighted by `1 - m1` with response 1, labelled rows
    /// weight 1 with response 0. Exact conditional maximisation of the
    /// observed-data likelihood, so the ECM iterations ascend it.
    #[default]
    ObservedLikelihood,
}

/// Per-row response and case weight of the MAR logistic regression.
#[derive(Debug, Clone, PartialEq)]
pub struct MarResponse<T> {
    pub targets: Array1<T>,
    pub weights: Array1<T>,
}

impl<T: Scalar> MarResponse<T> {
    pub fn new(data: &PartialDataset<T>, channels: &ChannelPosteriors<T>, weighting: MarWeighting) -> Self {
        match weighting {
            MarWeighting::UnitWeights => {
                Self { targets: channels.m2.clone(), weights: Array1::from_elem(channels.len(), T::one()) }
            }
            MarWeighting::ObservedLikelihood => {
                let n = data.n();
                let mut targets = Array1::<T>::zeros(n);
                let mut weights = Array1::<T>::ones(n);
                for j in 0..n {
                    if data.is_unlabelled(j) {
                        targets[j] = T::one();
                        weights[j] = channels.m2[j];
                    }
                }
                Self { targets, weights }
            }
        }
    }

    /// `Σ_j w_j [t_j log σ(η_j) + (1 - t_j) log σ(-η_j)]` at the given log-entropies.
    pub fn objective(&self, d: ArrayView1<T>, xi: &MissingnessParams<T>) -> T {
        logistic_objective(d, self.targets.view(), Some(self.weights.view()), xi.xi0, xi.xi1)
    }

    /// Weighted logistic fit of the response on `d`.
    pub fn fit(&self, d: ArrayView1<T>, tol: T, max_iter: usize) -> Result<LogisticFit<T>> {
        fit_logistic_with_weights(d, self.targets.view(), Some(self.weights.view()), tol, max_iter)
    }
}

/// `alpha = (1/n) Σ_j m1_j` over all rows, labelled rows contributing zero.
pub fn update_alpha<T: Scalar>(channels: &ChannelPosteriors<T>, n: usize) -> Result<T> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    if channels.len() != n {
        return Err(Error::Shape(format!("{} channel weights for n = {n}", channels.len())));
    }
    Ok(channels.m1.sum() / T::from_usize(n).unwrap())
}

/// Result of a two-parameter logistic fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit<T> {
    pub xi0: T,
    pub xi1: T,
    pub iterations: usize,
    pub converged: bool,
    /// The coefficients hit the separation cap.
    pub separated: bool,
}

/// Fractional-response logistic regression of `targets` on `d` with unit
/// case weights, by Newton / IRLS started at zero.
pub fn fit_weighted_logistic<T: Scalar>(
    d: ArrayView1<T>,
    targets: ArrayView1<T>,
    tol: T,
    max_iter: usize,
) -> Result<LogisticFit<T>> {
    fit_logistic_with_weights(d, targets, None, tol, max_iter)
}

/// Logistic log-likelihood `Σ w [t log σ(η) + (1 - t) log(1 - σ(η))]`.
pub fn logistic_objective<T: Scalar>(
    d: ArrayView1<T>,
    targets: ArrayView1<T>,
    weights: Option<ArrayView1<T>>,
    xi0: T,
    xi1: T,
) -> T {
    use crate::scalar::ln_sigmoid;
    let mut total = T::zero();
    for j in 0..d.len() {
        let w = weights.map_or(T::one(), |w| w[j]);
        if w == T::zero() {
            continue;
        }
        let eta = xi0 + xi1 * d[j];
        let t = targets[j];
        total += w * (t * ln_sigmoid(eta) + (T::one() - t) * ln_sigmoid(-eta));
    }
    total
}

/// Weighted variant of [`fit_weighted_logistic`]; `None` means unit weights.
pub fn fit_logistic_with_weights<T: Scalar>(
    d: ArrayView1<T>,
    targets: ArrayView1<T>,
    weights: Option<ArrayView1<T>>,
    tol: T,
    max_iter: usize,
) -> Result<LogisticFit<T>> {
    let n = d.len();
    if targets.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::Shape("logistic inputs differ in length".into()));
    }
    if targets.iter().any(|&t| !(t >= T::zero() && t <= T::one())) {
        return Err(Error::LogisticFit("targets must lie in [0, 1]".into()));
    }
    let active = |j: usize| weights.is_none_or(|w| w[j] > T::zero());
    let mut first = None;
    let distinct = (0..n).filter(|&j| active(j)).any(|j| match first {
        None => {
            first = Some(d[j]);
            false
        }
        Some(f) => d[j] != f,
    });
    if !distinct {
        return Err(Error::LogisticFit("need at least two distinct covariate values".into()));
    }

    let cap = T::of(XI_CAP);
    let ridge = T::of(1e-8);
    let objective = |a: T, b: T| logistic_objective(d, targets, weights, a, b);
    let (mut b0, mut b1) = (T::zero(), T::zero());
    let mut current = objective(b0, b1);
    let mut singular_streak = 0usize;

    for iter in 1..=max_iter {
        // score and information
        let (mut g0, mut g1) = (T::zero(), T::zero());
        let (mut h00, mut h01, mut h11) = (T::zero(), T::zero(), T::zero());
        for j in 0..n {
            let w = weights.map_or(T::one(), |w| w[j]);
            if w == T::zero() {
                continue;
            }
            let s = sigmoid(b0 + b1 * d[j]);
            let r = w * (targets[j] - s);
            g0 += r;
            g1 += r * d[j];
            let v = w * s * (T::one() - s);
            h00 += v;
            h01 += v * d[j];
            h11 += v * d[j] * d[j];
        }
        if g0.abs().max(g1.abs()) < tol {
            return Ok(LogisticFit { xi0: b0, xi1: b1, iterations: iter - 1, converged: true, separated: false });
        }
        let scale = T::one() + h00.max(h11);
        let mut det = h00 * h11 - h01 * h01;
        if !(det > T::epsilon() * scale * scale) {
            singular_streak += 1;
            h00 += ridge * scale;
            h11 += ridge * scale;
            det = h00 * h11 - h01 * h01;
            if !(det > T::zero()) {
                if singular_streak >= max_iter {
                    return Err(Error::LogisticFit("singular information matrix".into()));
                }
                continue;
            }
        }
        let s0 = (h11 * g0 - h01 * g1) / det;
        let s1 = (h00 * g1 - h01 * g0) / det;

        // step halving keeps the concave objective from going down
        let mut step = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let (c0, c1) = (b0 + step * s0, b1 + step * s1);
            let val = objective(c0, c1);
            if val >= current {
                accepted = Some((c0, c1, val));
                break;
            }
            step *= T::of(0.5);
        }
        let Some((c0, c1, val)) = accepted else {
            return Ok(LogisticFit { xi0: b0, xi1: b1, iterations: iter, converged: true, separated: false });
        };
        let moved = (c0 - b0).abs().max((c1 - b1).abs());
        b0 = c0;
        b1 = c1;
        current = val;
        if b0.abs() > cap || b1.abs() > cap {
            return Ok(LogisticFit {
                xi0: b0.max(-cap).min(cap),
                xi1: b1.max(-cap).min(cap),
                iterations: iter,
                converged: false,
                separated: true,
            });
        }
        if moved < tol {
            return Ok(LogisticFit { xi0: b0, xi1: b1, iterations: iter, converged: true, separated: false });
        }
    }
    Ok(LogisticFit { xi0: b0, xi1: b1, iterations: max_iter, converged: false, separated: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::MissingCode;
    use ndarray::{array, Array2};

    fn dataset(codes: &[MissingCode]) -> PartialDataset<f64> {
        let n = codes.len();
        let labels = codes.iter().map(|c| if c.is_missing() { None } else { Some(1) }).collect();
        PartialDataset::new(Array2::zeros((n, 1)), codes.to_vec(), labels).unwrap()
    }

    #[test]
    fn link_examples() {
        let zero = MissingnessParams::new(0.1, 0.0, 0.0).unwrap();
        assert!(mar_link(array![-3.0, -0.5, -690.0].view(), &zero).iter().all(|&q| q == 0.5));
        let xi = MissingnessParams::new(0.1, 1.0, 3.0).unwrap();
        let d = std::f64::consts::LN_2.ln();
        assert!((d + 0.366_512_920_581_664_3).abs() < 1e-12);
        let q = mar_link(array![d].view(), &xi)[0];
        let direct = 1.0 / (1.0 + (-(1.0 + 3.0 * d)).exp());
        assert!((q - direct).abs() < 1e-15);
        assert!((q - 0.475_136).abs() < 1e-6);
        let tail = mar_link(array![-700.0].view(), &xi)[0];
        assert!(tail > 0.0 && tail <= f64::MIN_POSITIVE);
    }

    #[test]
    fn channel_examples() {
        use MissingCode::*;
        let ds = dataset(&[Labelled, Mcar, Mar]);
        let q = array![0.3, 0.475_136, 0.9];
        let c = channel_posteriors(&ds, q.view(), 0.0).unwrap();
        assert_eq!(c.m1.to_vec(), vec![0.0, 0.0, 0.0]);
        assert_eq!(c.m2.to_vec(), vec![0.0, 1.0, 1.0]);

        let c = channel_posteriors(&ds, array![0.3, 1.0, 1.0].view(), 0.37).unwrap();
        assert!((c.m1[1] - 0.37).abs() < 1e-15);

        let c = channel_posteriors(&ds, q.view(), 0.1).unwrap();
        let by_hand_m1 = 0.1 / (0.1 + 0.9 * 0.475_136);
        assert!((c.m1[1] - by_hand_m1).abs() < 1e-12);
        assert!((c.m1[1] - 0.189_53).abs() < 1e-5);
        assert!((c.m2[1] - 0.810_47).abs() < 1e-5);
        assert_eq!(c.m1[0] + c.m2[0], 0.0);
    }

    #[test]
    fn degenerate_channel() {
        let ds = dataset(&[MissingCode::Mar]);
        let err = channel_posteriors(&ds, array![0.0].view(), 0.0).unwrap_err();
        assert_eq!(err, Error::DegenerateChannel { row: 0 });
    }

    #[test]
    fn missingness_loglik_examples() {
        use MissingCode::*;
        let ds = dataset(&[Labelled; 4]);
        let hard = ChannelPosteriors::from_codes(&ds);
        let v = loglik_missingness(&ds, Array1::from_elem(4, 0.5).view(), 0.0, &hard).unwrap();
        assert!((v - 4.0 * 0.5_f64.ln()).abs() < 1e-14);

        let ds = dataset(&[Mar]);
        let hard = ChannelPosteriors::from_codes(&ds);
        let v = loglik_missingness(&ds, array![0.5].view(), 0.5, &hard).unwrap();
        assert!((v + 1.386_294_361_119_890_6).abs() < 1e-12);

        // MCAR row with alpha = 0 contradicts the indicator
        let ds = dataset(&[Mcar]);
        let hard = ChannelPosteriors::from_codes(&ds);
        assert_eq!(loglik_missingness(&ds, array![0.5].view(), 0.0, &hard).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn alpha_update() {
        use MissingCode::*;
        let ds = dataset(&[Labelled, Labelled]);
        let c = ChannelPosteriors::from_codes(&ds);
        assert_eq!(update_alpha(&c, 2).unwrap(), 0.0);
        let c = ChannelPosteriors { m1: array![0.0, 0.0, 1.0, 1.0], m2: array![0.0, 0.0, 0.0, 0.0] };
        assert_eq!(update_alpha(&c, 4).unwrap(), 0.5);
        let empty = ChannelPosteriors::<f64> { m1: Array1::zeros(0), m2: Array1::zeros(0) };
        assert_eq!(update_alpha(&empty, 0).unwrap_err(), Error::EmptyData);
    }

    #[test]
    fn logistic_flat_and_errors() {
        let d = array![-3.0, -2.0, -1.0, -0.5];
        let fit = fit_weighted_logistic(d.view(), Array1::from_elem(4, 0.5).view(), 1e-10, 50).unwrap();
        assert_eq!((fit.xi0, fit.xi1), (0.0, 0.0));
        assert!(fit.converged);
        assert!(fit_weighted_logistic(array![1.0, 1.0].view(), array![0.0, 1.0].view(), 1e-8, 50).is_err());
        assert!(fit_weighted_logistic(d.view(), array![0.0, 1.5, 0.0, 0.0].view(), 1e-8, 50).is_err());
    }

    #[test]
    fn logistic_separation_is_capped() {
        let d = array![-4.0_f64, -3.0, -2.0, -1.0];
        let t = array![0.0, 0.0, 1.0, 1.0];
        let fit = fit_weighted_logistic(d.view(), t.view(), 1e-10, 500).unwrap();
        assert!(fit.separated);
        assert!(fit.xi0.abs() <= XI_CAP && fit.xi1.abs() <= XI_CAP);
    }
}
