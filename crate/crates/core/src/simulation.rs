//! Synthetic partially labelled data from a Gaussian mixture with mixed
//! MCAR + entropy-based MAR label missingness.

use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::mixture::{
    clamped_log_entropy, responsibilities_from_log_joint, log_joint, MissingCode, MixtureParams, PartialDataset,
};
use crate::missingness::MissingnessParams;
use crate::scalar::sigmoid;
use crate::Scalar;

/// How the MCAR pass chooses rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum McarMode {
    /// Each row independently with probability `alpha`.
    #[default]
    BernoulliPerRow,
    /// Exactly `round(alpha n)` rows without replacement.
    FixedCount,
}

/// Deterministic generator for `(seed, stream_id)`: ChaCha20 keyed by the
/// seed with the stream id selecting an independent stream.
pub fn rng_stream(seed: u64, stream_id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig<T> {
    pub n: usize,
    pub params: MixtureParams<T>,
    pub miss: MissingnessParams<T>,
    pub seed: u64,
    pub stream_id: u64,
    pub mcar_mode: McarMode,
}

impl<T: Scalar> SimConfig<T> {
    pub fn new(n: usize, params: MixtureParams<T>, miss: MissingnessParams<T>, seed: u64) -> Self {
        Self { n, params, miss, seed, stream_id: 0, mcar_mode: McarMode::default() }
    }

    pub fn with_stream(mut self, stream_id: u64) -> Self {
        self.stream_id = stream_id;
        self
    }

    pub fn with_mcar_mode(mut self, mode: McarMode) -> Self {
        self.mcar_mode = mode;
        self
    }
}

/// Draws `n` labelled observations (1-based labels) from the mixture.
pub fn sample_mixture<T: Scalar, R: Rng>(params: &MixtureParams<T>, n: usize, rng: &mut R) -> Result<(Array2<T>, Vec<usize>)> {
    let g = params.n_components();
    let p = params.dim();
    let factors = params.factors()?;
    let cumulative: Vec<f64> = params
        .weights()
        .iter()
        .scan(0.0, |acc, w| {
            *acc += w.as_f64();
            Some(*acc)
        })
        .collect();
    let mut y = Array2::<T>::zeros((n, p));
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![T::zero(); p];
    for j in 0..n {
        let u: f64 = rng.random();
        let class = cumulative.iter().position(|&c| u < c).unwrap_or(g - 1);
        labels.push(class + 1);
        for zk in z.iter_mut() {
            let s: f64 = rng.sample(StandardNormal);
            *zk = T::of(s);
        }
        let l = factors[class].lower();
        for r in 0..p {
            let mut v = params.means()[[class, r]];
            for c in 0..=r {
                v += l[[r, c]] * z[c];
            }
            y[[j, r]] = v;
        }
    }
    Ok((y, labels))
}

/// Simulates a dataset: labels and features, entropy under the true
/// parameters, an MCAR pass over all rows, then an entropy-MAR pass over the
/// rows still labelled.
pub fn simulate<T: Scalar>(config: &SimConfig<T>) -> Result<PartialDataset<T>> {
    let mut rng = rng_stream(config.seed, config.stream_id);
    let n = config.n;
    let (y, truth) = sample_mixture(&config.params, n, &mut rng)?;
    let resp = responsibilities_from_log_joint(&log_joint(y.view(), &config.params)?);
    let entropy: Array1<T> = resp.entropy;

    let alpha = config.miss.alpha.as_f64();
    let mut codes = vec![MissingCode::Labelled; n];
    match config.mcar_mode {
        McarMode::BernoulliPerRow => {
            for c in codes.iter_mut() {
                let u: f64 = rng.random();
                if u < alpha {
                    *c = MissingCode::Mcar;
                }
            }
        }
        McarMode::FixedCount => {
            let k = ((alpha * n as f64).round() as usize).min(n);
            for j in sample(&mut rng, n, k).into_iter() {
                codes[j] = MissingCode::Mcar;
            }
        }
    }
    for (j, c) in codes.iter_mut().enumerate() {
        if *c != MissingCode::Labelled {
            continue;
        }
        let q = sigmoid(config.miss.eta(clamped_log_entropy(entropy[j]))).as_f64();
        let u: f64 = rng.random();
        if u < q {
            *c = MissingCode::Mar;
        }
    }
    let obs = codes
        .iter()
        .zip(&truth)
        .map(|(c, &t)| if c.is_missing() { None } else { Some(t) })
        .collect();
    PartialDataset::new(y, codes, obs)?.with_truth(truth)?.with_entropy(entropy)
}
