//! Stationary-distribution checks for the Langevin integrator: OU
//! calibration, realization of the spike-and-slab prior, a discrete Gibbs
//! check, and the time-scale invariance property.

use lsc_core::dynamics::step_latents_langevin;
use lsc_core::metrics;
use lsc_core::model::{energy_l0, threshold_f, Dictionary, LatentState, ModelParams};
use lsc_core::noise::NoiseSource;
use ndarray::Array2;

/// Simulate the scalar OU chain du = -(dt/tau_s) u + sqrt(2 T dt/tau_s) z
/// using the L1 Langevin step with A = [1], x = 0, lambda ~ 0.
fn ou_variance(dt: f64, chains: usize, steps: u64, seed: u64) -> f64 {
    let p = ModelParams {
        sigma: 1.0,
        lambda: 1e-12, // effectively pure quadratic energy
        temperature: 1.0,
        dt,
        ..ModelParams::default()
    };
    let a = Dictionary::new(Array2::from_elem((1, 1), 1.0)).unwrap();
    let x = Array2::zeros((1, chains));
    let noise = NoiseSource::new(seed);
    let mut state = LatentState::from_s(Array2::zeros((1, chains)));
    let burn_in = (10.0 / dt) as u64; // 10 tau_s
    let thin = (1.0 / dt) as u64;
    let mut sum_sq = 0.0;
    let mut count = 0u64;
    for step in 0..steps {
        state = step_latents_langevin(&state, &a, &x, &p, &noise, step, false).unwrap();
        if step >= burn_in && (step - burn_in) % thin == 0 {
            sum_sq += state.s.iter().map(|v| v * v).sum::<f64>();
            count += chains as u64;
        }
    }
    sum_sq / count as f64
}

#[test]
fn ou_calibration_stationary_variance() {
    // 100 chains x 1e5 steps = 1e7 sampler steps total
    let var = ou_variance(1e-3, 100, 100_000, 11);
    assert!((var - 1.0).abs() <= 0.03, "OU stationary variance {var}, expected 1.00 +- 0.03");
}

#[test]
fn ou_discretization_bias_shrinks_with_dt() {
    // Euler-discretized OU has closed-form stationary variance T/(1 - h/2),
    // i.e. bias ~ h/2, linear in dt. Check the measurement against the
    // closed form at each dt; the closed form itself exhibits the linear
    // shrink 5e-3 -> 5e-4.
    for (dt, chains, steps) in [(1e-2, 200, 20_000u64), (1e-3, 100, 100_000)] {
        let var = ou_variance(dt, chains, steps, 13);
        let expected = 1.0 / (1.0 - dt / 2.0);
        // ~1e4 near-independent samples -> SE of a variance estimate ~ 1.4%
        assert!(
            (var - expected).abs() < 0.05,
            "dt {dt}: variance {var} vs discretized closed form {expected}"
        );
    }
    let bias = |dt: f64| 1.0 / (1.0 - dt / 2.0) - 1.0;
    assert!(bias(1e-3) < 0.15 * bias(1e-2));
}

/// Reflected Langevin on the pure sparsity energy lambda |u| (no data term):
/// stationary |u| ~ Exp(lambda), so s = f(|u|) realizes the spike-and-slab
/// prior with pi = exp(-lambda u0).
fn prior_chain_samples(
    tau_s: f64,
    dt: f64,
    chains: usize,
    collected_per_chain: usize,
    seed: u64,
) -> Vec<f64> {
    let lambda = 1.0;
    let u0 = std::f64::consts::LN_2; // pi = 0.5
    let p = ModelParams {
        sigma: 1.0,
        lambda,
        u0,
        temperature: 1.0,
        tau_s,
        dt,
        ..ModelParams::default()
    };
    // zero dictionary and zero data kill the reconstruction term
    let a = Dictionary::new(Array2::zeros((1, 1))).unwrap();
    let x = Array2::zeros((1, chains));
    let noise = NoiseSource::new(seed);
    let mut state = LatentState::from_u(noise.normal_matrix(1, 0, 1, chains), u0);
    let steps_per_tau = (tau_s / dt).round() as u64;
    let burn_in = 20 * steps_per_tau;
    let thin = 2 * steps_per_tau;
    let mut out = Vec::with_capacity(chains * collected_per_chain);
    let mut step = 0u64;
    while out.len() < chains * collected_per_chain {
        state = step_latents_langevin(&state, &a, &x, &p, &noise, step, true).unwrap();
        if step >= burn_in && (step - burn_in) % thin == 0 {
            out.extend(state.s.iter().copied());
        }
        step += 1;
    }
    out
}

#[test]
fn prior_realization_activation_and_slab() {
    // 500 chains x 400 thinned collections = 2e5 samples, ~1e5 in the slab
    let samples = prior_chain_samples(1.0, 0.002, 500, 400, 17);
    let pi_hat = metrics::activity_estimate(&samples);
    assert!((pi_hat - 0.5).abs() <= 0.02, "pi_hat {pi_hat}, expected 0.50 +- 0.02");
    let mut slab: Vec<f64> = samples.iter().copied().filter(|v| *v > 0.0).collect();
    let stat = metrics::ks_statistic_exponential(&mut slab, 1.0);
    // thinned-by-2-tau samples are only approximately independent; allow the
    // critical value at the nominal n
    let crit = metrics::ks_critical_one_sample(slab.len(), 0.01);
    assert!(stat < crit, "slab KS {stat} exceeds critical {crit} (n = {})", slab.len());
}

#[test]
fn time_scale_invariance_two_sample_ks() {
    // (tau_s, dt) and (10 tau_s, 10 dt) must produce indistinguishable
    // stationary histograms
    let mut a = prior_chain_samples(1.0, 0.002, 200, 250, 19);
    let mut b = prior_chain_samples(10.0, 0.02, 200, 250, 23);
    let stat = metrics::ks_statistic_two_sample(&mut a, &mut b);
    let crit = metrics::ks_critical_two_sample(a.len(), b.len(), 0.01);
    assert!(stat < crit, "two-sample KS {stat} exceeds critical {crit}");
}

#[test]
fn gibbs_stationarity_on_a_discrete_grid() {
    // K = 2 latent plane, fixed data; empirical visit distribution of the
    // chain vs e^{-E/T} quantized to a grid, total variation <= 0.05
    let p = ModelParams {
        sigma: 1.0,
        lambda: 1.0,
        u0: 0.5,
        temperature: 1.0,
        dt: 0.005,
        ..ModelParams::default()
    };
    let a = Dictionary::new(Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.6, 0.8]).unwrap())
        .unwrap();
    let x_col = [0.8, 0.4];
    let chains = 100usize;
    let x = Array2::from_shape_fn((2, chains), |(i, _)| x_col[i]);
    let noise = NoiseSource::new(29);
    let mut state = LatentState::from_u(noise.normal_matrix(1, 0, 2, chains), p.u0);

    let lim = 4.0f64;
    let cell = 0.25f64;
    let bins = (2.0 * lim / cell).round() as usize; // 32 per axis
    let idx = |v: f64| (((v + lim) / cell).floor().clamp(0.0, (bins - 1) as f64)) as usize;

    let mut visits = vec![0.0f64; bins * bins];
    let total_steps = 120_000u64;
    let burn_in = 20_000u64;
    let mut n_visits = 0.0f64;
    for step in 0..total_steps {
        state = step_latents_langevin(&state, &a, &x, &p, &noise, step, true).unwrap();
        if step >= burn_in {
            for c in 0..chains {
                let u1 = state.u[[0, c]];
                let u2 = state.u[[1, c]];
                visits[idx(u1) * bins + idx(u2)] += 1.0;
                n_visits += 1.0;
            }
        }
    }
    for v in visits.iter_mut() {
        *v /= n_visits;
    }

    // exact cell masses by 4x4 midpoint quadrature of e^{-E}
    let sub = 4usize;
    let mut target = vec![0.0f64; bins * bins];
    let xv = Array2::from_shape_vec((2, 1), x_col.to_vec()).unwrap();
    let mut z = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let mut mass = 0.0;
            for si in 0..sub {
                for sj in 0..sub {
                    let u1 = -lim + (i as f64 + (si as f64 + 0.5) / sub as f64) * cell;
                    let u2 = -lim + (j as f64 + (sj as f64 + 0.5) / sub as f64) * cell;
                    let u = Array2::from_shape_vec((2, 1), vec![u1, u2]).unwrap();
                    let e = energy_l0(&a, &u.view(), &xv.view(), &p).unwrap().total;
                    mass += (-e / p.temperature).exp();
                }
            }
            target[i * bins + j] = mass;
            z += mass;
        }
    }
    for v in target.iter_mut() {
        *v /= z;
    }

    let tv: f64 =
        0.5 * visits.iter().zip(target.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
    assert!(tv <= 0.05, "total variation {tv} exceeds 0.05");
}

#[test]
fn threshold_reparameterization_is_exact_on_grid() {
    // s = f(|u|) pushforward sanity on deterministic values
    for (u, u0, want) in
        [(0.4f64, 0.5, 0.0), (-0.4, 0.5, 0.0), (1.5, 0.5, 1.0), (-1.5, 0.5, 1.0)]
    {
        assert_eq!(threshold_f(u.abs(), u0), want);
        let s = threshold_f((-u).abs(), u0);
        assert_eq!(s, want);
    }
}
