use club_core::env::NoiseModel;
use club_core::numerics::*;
use club_core::rng::substream;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

fn unit_ball_vec<R: Rng>(d: usize, rng: &mut R) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let r: f64 = rng.random();
    v.iter().map(|x| x / n * r).collect()
}

#[test]
fn inverse_and_logdet_survive_many_updates() {
    let d = 5;
    let mut cov = CovarianceState::new(d, 1);
    let mut rng = substream(11, "cov");
    for _ in 0..10_000 {
        cov.update(0, &unit_ball_vec(d, &mut rng)).unwrap();
    }
    let s = cov.step(0);
    let prod = &s.gram * &s.inverse;
    let err = (prod - DMatrix::<f64>::identity(d, d)).norm();
    assert!(err < 1e-10, "Λ·Λ⁻¹ off by {err}");
    let dense = s.gram.clone().cholesky().unwrap().determinant().ln();
    assert!((dense - s.logdet).abs() < 1e-6);
    // log det Λ <= d log d + d log(count + λ)
    let bound = d as f64 * (d as f64).ln() + d as f64 * (s.count as f64 + 1.0).ln();
    assert!(s.logdet <= bound);
    // Λ ⪰ I
    let min_eig = SymmetricEigen::new(s.gram.clone()).eigenvalues.min();
    assert!(min_eig >= 1.0 - 1e-9);
}

#[test]
fn weighted_norm_matches_eigen_recomputation() {
    let mut rng = substream(2, "wn");
    for _ in 0..200 {
        let d = 4;
        let a = DMatrix::<f64>::from_fn(d, d, |_, _| rng.sample(StandardNormal));
        let pd = &a * a.transpose() + DMatrix::identity(d, d) * 0.1;
        let phi = unit_ball_vec(d, &mut rng);
        let eig = SymmetricEigen::new(pd.clone());
        let coeffs = eig.eigenvectors.transpose() * DVector::from_column_slice(&phi);
        let direct: f64 = coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c * c * l).sum::<f64>().sqrt();
        assert!((weighted_norm(&phi, &pd) - direct).abs() < 1e-10);
    }
    let id = DMatrix::<f64>::identity(3, 3);
    assert_eq!(weighted_norm(&[1.0, 0.0, 0.0], &id), 1.0);
}

/// `Λ_old⁻¹ ⪰ 2Λ_new⁻¹` checked on explicit inverses.
fn dense_inverse_dominance(new: &DMatrix<f64>, old: &DMatrix<f64>) -> bool {
    let lhs = old.clone().try_inverse().unwrap() - new.clone().try_inverse().unwrap() * 2.0;
    let sym = (&lhs + lhs.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min() >= -1e-10
}

#[test]
fn dominance_agrees_with_dense_inverses() {
    let mut rng = substream(5, "dom");
    let mut fired = 0;
    for _ in 0..1000 {
        let d = 3;
        let mut cov = CovarianceState::new(d, 1);
        for _ in 0..rng.random_range(0..6) {
            cov.update(0, &unit_ball_vec(d, &mut rng)).unwrap();
        }
        let old = cov.step(0).gram.clone();
        for _ in 0..rng.random_range(0..40) {
            cov.update(0, &unit_ball_vec(d, &mut rng)).unwrap();
        }
        let new = cov.step(0).gram.clone();
        let fast = psd_double_dominance(&new, &old).unwrap();
        assert_eq!(fast, dense_inverse_dominance(&new, &old));
        fired += usize::from(fast);
    }
    assert!(fired > 0 && fired < 1000, "both outcomes exercised ({fired})");
}

#[test]
fn dominance_is_monotone_in_new_information() {
    let mut rng = substream(6, "mono");
    for _ in 0..300 {
        let d = 3;
        let old = DMatrix::<f64>::identity(d, d);
        let mut cov = CovarianceState::new(d, 1);
        for _ in 0..rng.random_range(0..30) {
            cov.update(0, &unit_ball_vec(d, &mut rng)).unwrap();
        }
        let before = psd_double_dominance(&cov.step(0).gram, &old).unwrap();
        let any_before = psd_direction_doubling(&cov.step(0).gram, &old).unwrap();
        cov.update(0, &unit_ball_vec(d, &mut rng)).unwrap();
        if before {
            assert!(psd_double_dominance(&cov.step(0).gram, &old).unwrap());
        }
        if any_before {
            assert!(psd_direction_doubling(&cov.step(0).gram, &old).unwrap());
        }
    }
}

#[test]
fn scalar_trigger_sequence_is_near_geometric() {
    // one direction revisited: Λ = 1 + count; trigger when 1 + c >= 2(1 + c_old)
    let mut cov = CovarianceState::new(1, 1);
    let mut old = cov.step(0).gram.clone();
    let mut fires = Vec::new();
    for c in 1..=200usize {
        cov.update(0, &[1.0]).unwrap();
        if psd_double_dominance(&cov.step(0).gram, &old).unwrap() {
            fires.push(c);
            old = cov.step(0).gram.clone();
        }
    }
    assert_eq!(fires, vec![1, 3, 7, 15, 31, 63, 127]);
}

fn one_hot(d: usize, j: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[j] = 1.0;
    v
}

/// Truthful two-bidder rounds on one-hot features, zero reserves: bidder 0
/// faces threshold `b_1`.
fn known_f_data(theta: &[f64], rival: &[f64], rounds: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<(f64, bool)>) {
    let d = theta.len();
    let noise = NoiseModel::Uniform;
    let mut rng = substream(seed, "known-data");
    let mut phis = Vec::with_capacity(rounds);
    let mut obs = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let j = rng.random_range(0..d);
        let v0 = 1.0 + theta[j] + noise.sample(&mut rng);
        let v1 = 1.0 + rival[j] + noise.sample(&mut rng);
        phis.push(one_hot(d, j));
        obs.push((v1, v0 >= v1));
    }
    (phis, obs)
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn known_fit_recovers_theta_from_5000_rounds() {
    let theta = [0.2, 0.9, 0.5, 0.35, 0.7, 0.05];
    let rival = [0.6, 0.3, 0.5, 0.8, 0.1, 0.4];
    let (phis, obs) = known_f_data(&theta, &rival, 5000, 1);
    let data: Vec<WinObservation<'_>> = phis
        .iter()
        .zip(&obs)
        .map(|(p, &(m, won))| WinObservation { phi: p, threshold: m, won })
        .collect();
    let radius = 2.0 * 6f64.sqrt();
    let fit = fit_theta_known_f(&data, &NoiseModel::Uniform, radius, KnownFitOptions::default(), None, &mut substream(0, "fit")).unwrap();
    let err = l2(&fit.theta, &theta);
    assert!(err <= 0.1, "error {err}");
    assert!(fit.theta.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius + 1e-12);
    assert!(fit.objective <= known_f_objective(&data, &NoiseModel::Uniform, &theta) + 1e-6);
}

#[test]
fn known_fit_beats_truth_when_theta_is_zero() {
    let theta = [0.0; 3];
    let rival = [0.3, 0.6, 0.9];
    let (phis, obs) = known_f_data(&theta, &rival, 3000, 2);
    let data: Vec<WinObservation<'_>> = phis
        .iter()
        .zip(&obs)
        .map(|(p, &(m, won))| WinObservation { phi: p, threshold: m, won })
        .collect();
    let noise = NoiseModel::truncated_gaussian(0.5).unwrap();
    let fit = fit_theta_known_f(&data, &noise, 2.0 * 3f64.sqrt(), KnownFitOptions::default(), None, &mut substream(0, "fit")).unwrap();
    assert!(fit.objective <= known_f_objective(&data, &noise, &theta) + 1e-6);
}

fn sim_data(theta: &[f64], n_bidders: usize, rounds: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
    let d = theta.len();
    let mut rng = substream(seed, "sim-data");
    let (mut phis, mut qs) = (Vec::new(), Vec::new());
    for _ in 0..rounds {
        let j = rng.random_range(0..d);
        let b = 1.0 + theta[j] + NoiseModel::Uniform.sample(&mut rng);
        let selected = rng.random_range(0..n_bidders) == 0;
        let rho = 3.0 * rng.random::<f64>();
        phis.push(one_hot(d, j));
        qs.push(selected && b >= rho);
    }
    (phis, qs)
}

#[test]
fn unknown_fit_recovers_theta() {
    let theta = [0.2, 0.9, 0.5, 0.35, 0.7, 0.05];
    let (phis, qs) = sim_data(&theta, 2, 40_000, 3);
    let data: Vec<SimObservation<'_>> = phis.iter().zip(&qs).map(|(p, &q)| SimObservation { phi: p, q_sim: q }).collect();
    let fit = fit_theta_unknown_f(&data, 2, 2.0 * 6f64.sqrt()).unwrap();
    let err = l2(&fit.theta, &theta);
    assert!(err <= 0.15, "error {err}");
}

/// Stationarity of `Σ(y - φᵀθ)² + λ(‖θ‖² - r²)`.
fn kkt_residual(phis: &[Vec<f64>], ys: &[f64], theta: &[f64], lambda: f64) -> f64 {
    let d = theta.len();
    let mut g = vec![0.0; d];
    for (p, y) in phis.iter().zip(ys) {
        let r = y - p.iter().zip(theta).map(|(a, b)| a * b).sum::<f64>();
        for k in 0..d {
            g[k] -= 2.0 * r * p[k];
        }
    }
    for k in 0..d {
        g[k] += 2.0 * (lambda + 1e-8) * theta[k];
    }
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn unknown_fit_satisfies_kkt() {
    let mut rng = substream(4, "kkt");
    for case in 0..50 {
        let d = 3;
        let n = 40;
        let phis: Vec<Vec<f64>> = (0..n).map(|_| unit_ball_vec(d, &mut rng)).collect();
        let qs: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.4).collect();
        let data: Vec<SimObservation<'_>> = phis.iter().zip(&qs).map(|(p, &q)| SimObservation { phi: p, q_sim: q }).collect();
        let radius = if case % 2 == 0 { 0.5 } else { 50.0 };
        let fit = fit_theta_unknown_f(&data, 2, radius).unwrap();
        let ys: Vec<f64> = qs.iter().map(|&q| 6.0 * f64::from(u8::from(q)) - 1.0).collect();
        let norm = fit.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm <= radius + 1e-9);
        if fit.multiplier > 0.0 {
            assert!((norm - radius).abs() < 1e-8);
        }
        assert!(kkt_residual(&phis, &ys, &fit.theta, fit.multiplier) <= 1e-8, "case {case}");
    }
}

#[test]
fn unknown_fit_matches_brute_force_grid() {
    let mut rng = substream(8, "grid");
    for d in 1..=2usize {
        let n = 25;
        let phis: Vec<Vec<f64>> = (0..n).map(|_| unit_ball_vec(d, &mut rng)).collect();
        let qs: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
        let data: Vec<SimObservation<'_>> = phis.iter().zip(&qs).map(|(p, &q)| SimObservation { phi: p, q_sim: q }).collect();
        let radius = 0.8;
        let fit = fit_theta_unknown_f(&data, 2, radius).unwrap();
        let obj = |t: &[f64]| -> f64 {
            phis.iter()
                .zip(&qs)
                .map(|(p, &q)| (6.0 * f64::from(u8::from(q)) - 1.0 - p.iter().zip(t).map(|(a, b)| a * b).sum::<f64>()).powi(2))
                .sum()
        };
        let step = 0.005;
        let steps = (2.0 * radius / step) as i64;
        let mut best = (f64::INFINITY, vec![0.0; d]);
        let grid: Vec<f64> = (0..=steps).map(|k| -radius + k as f64 * step).collect();
        let mut visit = |t: Vec<f64>| {
            if t.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
                let v = obj(&t);
                if v < best.0 {
                    best = (v, t);
                }
            }
        };
        if d == 1 {
            grid.iter().for_each(|&a| visit(vec![a]));
        } else {
            for &a in &grid {
                for &b in &grid {
                    visit(vec![a, b]);
                }
            }
        }
        assert!(obj(&fit.theta) <= best.0 + 1e-9);
        assert!(l2(&fit.theta, &best.1) <= 2.0 * step, "d={d}: {:?} vs {:?}", fit.theta, best.1);
    }
}

#[test]
fn ecdf_within_dkw_band_at_99_percent() {
    let t = 100_000;
    let band = dkw_band(t, 0.01).unwrap();
    let mut inside = 0;
    for seed in 0..100 {
        let mut rng = substream(seed, "dkw");
        let xs: Vec<f64> = (0..t).map(|_| NoiseModel::Uniform.sample(&mut rng)).collect();
        let f = EmpiricalDist::build(&xs).unwrap();
        if f.sup_distance(|x| NoiseModel::Uniform.cdf(x)) <= band {
            inside += 1;
        }
    }
    // P(inside) >= 0.99 per seed; 95 of 100 is far below its expectation
    assert!(inside >= 95, "{inside}/100 inside the band");
}

#[test]
fn histogram_density_of_uniform_residuals() {
    let mut rng = substream(9, "hist");
    let xs: Vec<f64> = (0..200_000).map(|_| NoiseModel::Uniform.sample(&mut rng)).collect();
    let f = EmpiricalDist::build(&xs).unwrap();
    let h = HistogramPdf::new(&f, 8).unwrap();
    for k in 0..16 {
        let x = -1.0 + (k as f64 + 0.5) / 8.0;
        assert!((h.density(x) - 0.5).abs() <= 0.05, "bin {k}: {}", h.density(x));
        assert!(h.density(x) >= 0.0);
    }
    assert!((h.total_mass() - 1.0).abs() < 1e-9);
    let single = HistogramPdf::new(&f, 1).unwrap();
    assert!((single.density(-0.5) - single.masses[0]).abs() < 1e-15);
}

#[test]
fn refreshed_inverse_survives_a_tiny_ridge() {
    let mut cov = CovarianceState::with_regularization(4, 1, 1e-12);
    for j in 0..4 {
        let mut phi = vec![0.0; 4];
        phi[j] = 1.0;
        cov.update(0, &phi).unwrap();
    }
    let drift = (&cov.step(0).gram * &cov.step(0).inverse - DMatrix::<f64>::identity(4, 4)).amax();
    cov.refresh_inverses().unwrap();
    let fresh = (&cov.step(0).gram * &cov.step(0).inverse - DMatrix::<f64>::identity(4, 4)).amax();
    assert!(fresh <= 1e-14, "{fresh}");
    assert!(fresh <= drift);
}
