mod common;

use approx::assert_abs_diff_eq;
use mixmiss_core::estimation::{
    complete_data_mle, ecm_fit, fixed_responsibilities, full_loglik, init_semisupervised, maximize_q_theta,
    pack_theta, packed_len, q_theta, q_theta_with, unpack_theta, EcmOptions, InitOptions, PackedTheta,
};
use mixmiss_core::evaluation::{study1_missingness, study1_truth, study2_missingness, study2_truth};
use mixmiss_core::missingness::{channel_posteriors, mar_link};
use mixmiss_core::mixture::loglik_labelled;
use mixmiss_core::optim::BfgsOptions;
use mixmiss_core::{
    class_posteriors, simulate, ChannelPosteriors, CovStructure, MarResponse, MarWeighting, MissingCode,
    MissingnessParams, MixtureParams, PartialDataset, SimConfig,
};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::Rng;

use common::{naive_log_density, random_params, rng, sigmoid};

fn max_abs_diff(a: &MixtureParams<f64>, b: &MixtureParams<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for (x, y) in a.weights().iter().zip(b.weights()) {
        m = m.max((x - y).abs());
    }
    for (x, y) in a.means().iter().zip(b.means()) {
        m = m.max((x - y).abs());
    }
    for (s, t) in a.covariances().iter().zip(b.covariances()) {
        for (x, y) in s.iter().zip(t) {
            m = m.max((x - y).abs());
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn pack_round_trip(g in 1usize..=4, p in 1usize..=4, shared: bool, seed: u64) {
        let s = if shared { CovStructure::Shared } else { CovStructure::PerComponent };
        let params = random_params(&mut rng(seed), g, p, s);
        let v = pack_theta(&params).unwrap();
        prop_assert_eq!(v.0.len(), packed_len(g, p, s));
        let back = unpack_theta(&v, g, p, s).unwrap();
        prop_assert!(max_abs_diff(&params, &back) < 1e-12);
    }
}

#[test]
fn packed_lengths() {
    assert_eq!(packed_len(2, 2, CovStructure::PerComponent), 11);
    assert_eq!(packed_len(3, 2, CovStructure::Shared), 2 + 6 + 3);
    assert!(unpack_theta(&PackedTheta(vec![0.0; 10]), 2, 2, CovStructure::PerComponent).is_err());
}

/// Textbook MLE: class proportions, means, and divisor-n covariances.
fn mle_oracle(y: &Array2<f64>, labels: &[usize], g: usize, shared: bool) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Array2<f64>>) {
    let (n, p) = y.dim();
    let mut counts = vec![0usize; g];
    let mut sums = vec![vec![0.0; p]; g];
    for (j, &l) in labels.iter().enumerate() {
        counts[l - 1] += 1;
        for k in 0..p {
            sums[l - 1][k] += y[[j, k]];
        }
    }
    let means: Vec<Vec<f64>> = (0..g).map(|i| sums[i].iter().map(|s| s / counts[i] as f64).collect()).collect();
    let mut scatter = vec![Array2::<f64>::zeros((p, p)); g];
    for (j, &l) in labels.iter().enumerate() {
        for a in 0..p {
            for b in 0..p {
                scatter[l - 1][[a, b]] += (y[[j, a]] - means[l - 1][a]) * (y[[j, b]] - means[l - 1][b]);
            }
        }
    }
    let covs = if shared {
        let total = scatter.iter().fold(Array2::zeros((p, p)), |acc, s| acc + s);
        vec![total / n as f64]
    } else {
        scatter.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
    };
    (counts.iter().map(|&c| c as f64 / n as f64).collect(), means, covs)
}

#[test]
fn complete_data_mle_matches_textbook() {
    let mut r = rng(31);
    let y = Array2::from_shape_fn((50, 3), |_| r.random_range(-2.0..2.0));
    let labels: Vec<usize> = (0..50).map(|j| 1 + (j % 3 == 0) as usize).collect();
    for shared in [true, false] {
        let s = if shared { CovStructure::Shared } else { CovStructure::PerComponent };
        let fit = complete_data_mle(y.view(), &labels, 2, s).unwrap();
        let (pi, mu, covs) = mle_oracle(&y, &labels, 2, shared);
        for i in 0..2 {
            assert_abs_diff_eq!(fit.weights()[i], pi[i], epsilon = 1e-12);
            for k in 0..3 {
                assert_abs_diff_eq!(fit.means()[[i, k]], mu[i][k], epsilon = 1e-12);
            }
        }
        for (a, b) in fit.distinct_covariances().iter().zip(&covs) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn warm_up_on_study_one_data() {
    let data = simulate(&SimConfig::new(1000, study1_truth::<f64>(), study1_missingness(), 1)).unwrap();
    let init = init_semisupervised(&data, 2, CovStructure::PerComponent, &InitOptions::default()).unwrap();
    assert!(init.calibrated);
    let rows: Vec<usize> = (0..data.n()).filter(|&j| !data.is_unlabelled(j)).collect();
    let labels: Vec<usize> = rows.iter().map(|&j| data.obs_label()[j].unwrap()).collect();
    let y_lab = data.features().select(ndarray::Axis(0), &rows);
    let stage1 = complete_data_mle(y_lab.view(), &labels, 2, CovStructure::PerComponent).unwrap();
    assert_eq!(init.params, stage1);
    // entropy-driven removal thins the overlap region, pushing the labelled means apart
    let m = init.params.means();
    assert!(m[[0, 0]] > 1.0 && m[[1, 0]] < -1.0);
    assert!(m[[0, 1]].abs() < 0.15 && m[[1, 1]].abs() < 0.15);
    assert!((init.miss.alpha - 0.0912).abs() < 0.05, "alpha {}", init.miss.alpha);
    assert!((init.miss.xi0 - 0.6446).abs() < 0.5, "xi0 {}", init.miss.xi0);
    assert!((init.miss.xi1 - 2.6497).abs() < 1.0, "xi1 {}", init.miss.xi1);
    assert!(init.trace.len() <= 20);
}

fn labelled_toy(seed: u64, n: usize) -> PartialDataset<f64> {
    let mut r = rng(seed);
    let truth = study2_truth::<f64>();
    let (y, z) = mixmiss_core::simulation::sample_mixture(&truth, n, &mut r).unwrap();
    PartialDataset::labelled(y, z).unwrap()
}

#[test]
fn q_theta_all_labelled_reduces_to_labelled_loglik() {
    let data = labelled_toy(2, 40);
    let params = study2_truth::<f64>();
    let miss = MissingnessParams::new(0.0, 0.7, 0.0).unwrap();
    let resp = class_posteriors(data.features().view(), &params).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    let ch = ChannelPosteriors::from_codes(&data);
    let q = q_theta(&data, &params, &miss, tau.view(), &ch).unwrap();
    let expected = loglik_labelled(&data, &params).unwrap() + 40.0 * (1.0 - sigmoid(0.7)).ln();
    assert_abs_diff_eq!(q, expected, epsilon = 1e-9);
}

#[test]
fn q_theta_first_sum_is_classic_em_q() {
    let mut r = rng(9);
    let params = random_params(&mut r, 2, 2, CovStructure::PerComponent);
    let y = Array2::from_shape_fn((20, 2), |_| r.random_range(-3.0..3.0));
    let codes: Vec<MissingCode> = (0..20).map(|j| if j % 3 == 0 { MissingCode::Labelled } else { MissingCode::Mcar }).collect();
    let labels = (0..20).map(|j| if j % 3 == 0 { Some(1 + j % 2) } else { None }).collect();
    let data = PartialDataset::new(y.clone(), codes, labels).unwrap();
    let resp = class_posteriors(y.view(), &params).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    // alpha = 1: every unlabelled row sits in the MCAR channel
    let ch = channel_posteriors(&data, Array1::from_elem(20, 0.3).view(), 1.0).unwrap();
    assert!(ch.m2.iter().all(|&v| v == 0.0));
    let miss = MissingnessParams::new(1.0, -0.4, 0.0).unwrap();
    let q = q_theta(&data, &params, &miss, tau.view(), &ch).unwrap();

    let mut classic = 0.0;
    for j in 0..20 {
        let row = y.row(j).to_vec();
        for i in 0..2 {
            let w = match data.obs_label()[j] {
                Some(l) => (l - 1 == i) as u8 as f64,
                None => resp.tau[[j, i]],
            };
            classic += w * (params.weights()[i].ln() + naive_log_density(&row, &params.mean(i).to_vec(), params.covariance(i)));
        }
    }
    let constant = 20.0 * (1.0 - sigmoid(-0.4)).ln();
    assert_abs_diff_eq!(q - constant, classic, epsilon = 1e-10);
}

#[test]
fn q_theta_prefers_truth_over_perturbed_means() {
    let truth = study1_truth::<f64>();
    let miss = study1_missingness::<f64>();
    let data = simulate(&SimConfig::new(10_000, truth.clone(), miss, 77)).unwrap();
    let resp = class_posteriors(data.features().view(), &truth).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    let q = mar_link(resp.log_entropy.view(), &miss);
    let ch = channel_posteriors(&data, q.view(), miss.alpha).unwrap();
    let mut means = truth.means().clone();
    means[[0, 0]] += 0.5;
    let perturbed =
        MixtureParams::new(truth.weights().clone(), means, truth.covariances().to_vec(), truth.structure()).unwrap();
    let q_true = q_theta(&data, &truth, &miss, tau.view(), &ch).unwrap();
    let q_pert = q_theta(&data, &perturbed, &miss, tau.view(), &ch).unwrap();
    assert!(q_true > q_pert);
}

#[test]
fn maximize_fixed_point_on_complete_data() {
    let data = labelled_toy(12, 60);
    let mle = complete_data_mle(data.features().view(), &data.obs_label().iter().map(|l| l.unwrap()).collect::<Vec<_>>(), 2, CovStructure::Shared).unwrap();
    let miss = MissingnessParams::new(0.0, 0.3, 0.0).unwrap();
    let resp = class_posteriors(data.features().view(), &mle).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    let response = MarResponse::new(&data, &ChannelPosteriors::from_codes(&data), MarWeighting::UnitWeights);
    let out = maximize_q_theta(&data, &miss, tau.view(), &response, &mle, CovStructure::Shared, &BfgsOptions::default())
        .unwrap();
    assert!(max_abs_diff(&out.params, &mle) < 1e-6);
}

#[test]
fn maximize_single_component_closed_form() {
    let y = array![[0.3_f64], [1.7], [-0.4], [2.2], [0.9], [1.1]];
    let data = PartialDataset::new(
        y.clone(),
        vec![MissingCode::Labelled, MissingCode::Mcar, MissingCode::Labelled, MissingCode::Mar, MissingCode::Labelled, MissingCode::Mcar],
        vec![Some(1), None, Some(1), None, Some(1), None],
    )
    .unwrap();
    let start = MixtureParams::new(array![1.0], array![[0.0]], vec![array![[1.0]]], CovStructure::Shared).unwrap();
    let miss = MissingnessParams::new(0.3, 0.1, 0.0).unwrap();
    let resp = class_posteriors(y.view(), &start).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    let response = MarResponse::new(&data, &channel_posteriors(&data, Array1::from_elem(6, 0.5).view(), 0.3).unwrap(), MarWeighting::ObservedLikelihood);
    let out = maximize_q_theta(&data, &miss, tau.view(), &response, &start, CovStructure::Shared, &BfgsOptions::default())
        .unwrap();
    let mean = y.mean().unwrap();
    let var = y.mapv(|v| (v - mean).powi(2)).mean().unwrap();
    assert_abs_diff_eq!(out.params.means()[[0, 0]], mean, epsilon = 1e-6);
    assert_abs_diff_eq!(out.params.covariance(0)[[0, 0]], var, epsilon = 1e-6);
}

/// Plain Nelder–Mead maximiser.
fn nelder_mead<F: Fn(&[f64]) -> f64>(f: &F, x0: &[f64], scale: f64, iters: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..n {
        let mut v = x0.to_vec();
        v[k] += scale;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    for _ in 0..iters {
        let mut idx: Vec<usize> = (0..=n).collect();
        idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        simplex = idx.iter().map(|&i| simplex[i].clone()).collect();
        vals = idx.iter().map(|&i| vals[i]).collect();
        if (vals[0] - vals[n]).abs() < 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (simplex[n][k] - centroid[k])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr > vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe > fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr > vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            if fc > vals[n] {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|k| simplex[0][k] + 0.5 * (simplex[i][k] - simplex[0][k])).collect();
                    vals[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).max_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    (simplex[best].clone(), vals[best])
}

#[test]
fn maximize_matches_nelder_mead_oracle() {
    let truth = MixtureParams::new(array![0.5, 0.5], array![[1.0], [-1.0]], vec![array![[0.8]], array![[1.3]]], CovStructure::PerComponent).unwrap();
    let miss = MissingnessParams::new(0.1, 1.0, 3.0).unwrap();
    let data = simulate(&SimConfig::new(30, truth.clone(), miss, 5)).unwrap();
    let start = MixtureParams::new(array![0.6, 0.4], array![[0.5], [-0.5]], vec![array![[1.0]], array![[1.0]]], CovStructure::PerComponent).unwrap();
    let resp = class_posteriors(data.features().view(), &start).unwrap();
    let tau = fixed_responsibilities(&data, &resp);
    let q = mar_link(resp.log_entropy.view(), &miss);
    let ch = channel_posteriors(&data, q.view(), miss.alpha).unwrap();
    for weighting in [MarWeighting::UnitWeights, MarWeighting::ObservedLikelihood] {
        let response = MarResponse::new(&data, &ch, weighting);
        let out = maximize_q_theta(&data, &miss, tau.view(), &response, &start, CovStructure::PerComponent, &BfgsOptions::default()).unwrap();
        let f = |x: &[f64]| match unpack_theta(&PackedTheta(x.to_vec()), 2, 1, CovStructure::PerComponent) {
            Ok(t) => q_theta_with(&data, &t, &miss, tau.view(), &response).unwrap_or(f64::NEG_INFINITY),
            Err(_) => f64::NEG_INFINITY,
        };
        let mut r = rng(17);
        let mut best = f64::NEG_INFINITY;
        let x_start = pack_theta(&start).unwrap().0;
        for restart in 0..20 {
            let x0: Vec<f64> = if restart == 0 { x_start.clone() } else { x_start.iter().map(|v| v + r.random_range(-1.0..1.0)).collect() };
            let (mut x, mut v) = nelder_mead(&f, &x0, 0.5, 5000);
            // restart from the incumbent to escape a collapsed simplex
            for _ in 0..3 {
                let (x2, v2) = nelder_mead(&f, &x, 0.05, 5000);
                x = x2;
                v = v.max(v2);
            }
            best = best.max(v);
        }
        assert!(out.q_value >= best - 1e-4, "{weighting:?}: bfgs {} vs nelder-mead {best}", out.q_value);
    }
}

#[test]
fn ecm_on_complete_data_is_the_mle() {
    let data = labelled_toy(40, 80);
    let labels: Vec<usize> = data.obs_label().iter().map(|l| l.unwrap()).collect();
    for s in [CovStructure::Shared, CovStructure::PerComponent] {
        let mle = complete_data_mle(data.features().view(), &labels, 2, s).unwrap();
        let init = init_semisupervised(&data, 2, s, &InitOptions::default()).unwrap();
        let fit = ecm_fit(&data, 2, (init.params, init.miss), s, &EcmOptions::default()).unwrap();
        assert!(max_abs_diff(&fit.params, &mle) < 1e-6);
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
        assert_eq!(fit.miss.alpha, 0.0);
    }
}

/// Semi-supervised EM ignoring the missingness mechanism, closed-form M-step.
fn classic_em(data: &PartialDataset<f64>, start: &MixtureParams<f64>, iters: usize) -> MixtureParams<f64> {
    let y = data.features();
    let (n, p) = y.dim();
    let mut params = start.clone();
    for _ in 0..iters {
        let resp = class_posteriors(y.view(), &params).unwrap();
        let w = fixed_responsibilities(data, &resp);
        let nk: Vec<f64> = (0..2).map(|i| w.column(i).sum()).collect();
        let mut means = Array2::<f64>::zeros((2, p));
        for i in 0..2 {
            for j in 0..n {
                for k in 0..p {
                    means[[i, k]] += w[[j, i]] * y[[j, k]] / nk[i];
                }
            }
        }
        let mut cov = Array2::<f64>::zeros((p, p));
        for i in 0..2 {
            for j in 0..n {
                for a in 0..p {
                    for b in 0..p {
                        cov[[a, b]] += w[[j, i]] * (y[[j, a]] - means[[i, a]]) * (y[[j, b]] - means[[i, b]]) / n as f64;
                    }
                }
            }
        }
        let pi = Array1::from(nk.iter().map(|v| v / n as f64).collect::<Vec<_>>());
        params = MixtureParams::new(pi, means, vec![cov], CovStructure::Shared).unwrap();
    }
    params
}

#[test]
fn ecm_without_mar_term_is_classic_em() {
    let miss = MissingnessParams::new(0.4, 0.0, 0.0).unwrap();
    let data = simulate(&SimConfig::new(50, study2_truth::<f64>(), miss, 3)).unwrap();
    let init = init_semisupervised(&data, 2, CovStructure::Shared, &InitOptions { warm_up_iter: 0, ..InitOptions::default() }).unwrap();
    let opts = EcmOptions { max_iter: 500, tol: 1e-14, update_missingness: false, ..EcmOptions::default() };
    let fit = ecm_fit(&data, 2, (init.params.clone(), MissingnessParams::new(0.4, 0.2, 0.0).unwrap()), CovStructure::Shared, &opts).unwrap();
    let oracle = classic_em(&data, &init.params, 2000);
    assert!(max_abs_diff(&fit.params, &oracle) < 1e-4, "max diff {}", max_abs_diff(&fit.params, &oracle));
}

fn worst_step(fit: &mixmiss_core::FitResultF64) -> f64 {
    std::iter::once(fit.initial_loglik)
        .chain(fit.trace.iter().map(|r| r.loglik))
        .collect::<Vec<_>>()
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn ecm_trace_is_monotone_shared_covariance() {
    for seed in 0..5 {
        let data = simulate(&SimConfig::new(500, study2_truth::<f64>(), study2_missingness(), 900 + seed)).unwrap();
        let init = init_semisupervised(&data, 2, CovStructure::Shared, &InitOptions::default()).unwrap();
        let fit = ecm_fit(&data, 2, (init.params, init.miss), CovStructure::Shared, &EcmOptions::default()).unwrap();
        assert!(worst_step(&fit) >= -1e-6, "seed {seed}: step {}", worst_step(&fit));
    }
}

#[test]
fn study_one_fit_reproduces_reference_loglik_scale() {
    let data = simulate(&SimConfig::new(1000, study1_truth::<f64>(), study1_missingness(), 1)).unwrap();
    let init = init_semisupervised(&data, 2, CovStructure::PerComponent, &InitOptions::default()).unwrap();
    let fit = ecm_fit(&data, 2, (init.params, init.miss), CovStructure::PerComponent, &EcmOptions::default()).unwrap();
    let soft = full_loglik(&data, &fit.params, &fit.miss, MarWeighting::UnitWeights).unwrap();
    assert!((soft - -3889.313).abs() < 30.0, "soft-channel loglik {soft}");
    assert!((fit.miss.alpha - 0.1115).abs() < 0.04);
    assert!((fit.miss.xi0 - 0.9373).abs() < 1.0 && (fit.miss.xi1 - 3.5197).abs() < 1.0);
    assert!(fit.loglik > soft);
}

#[test]
fn ecm_runs_in_single_precision() {
    let truth = MixtureParams::<f32>::new(
        array![0.5, 0.5],
        array![[1.0, 0.0], [-1.0, 0.0]],
        vec![array![[1.0, 0.3], [0.3, 1.0]]],
        CovStructure::Shared,
    )
    .unwrap();
    let miss = MissingnessParams::new(0.1f32, 1.0, 3.0).unwrap();
    let data = simulate(&SimConfig::new(300, truth, miss, 6)).unwrap();
    let init = init_semisupervised(&data, 2, CovStructure::Shared, &InitOptions::default()).unwrap();
    let fit = ecm_fit(&data, 2, (init.params, init.miss), CovStructure::Shared, &EcmOptions::default()).unwrap();
    assert!(fit.loglik.is_finite());
    assert!((fit.params.means()[[0, 0]] - 1.0).abs() < 0.3);
    assert!(fit.loglik >= fit.initial_loglik - 1e-2);
}
