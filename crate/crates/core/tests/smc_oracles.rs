use nalgebra::DMatrix;
use nasmc::metrics::{kalman_filter, lgssm_one_step_posterior};
use nasmc::models::{simulate, BenchmarkNssm, LinearGaussianSsm, StateSpaceModel};
use nasmc::nnet::activations::logsumexp;
use nasmc::prng::{tags, RngStream};
use nasmc::proposals::{ProposalModel, ProposalVariant};
use nasmc::smc::{resample_indices, run_smc, ResampleScheme, ResampleTrigger, SmcConfig};
use proptest::prelude::*;

/// Straight-line bootstrap filter that shares only the stream layout with
/// the library: draws from root/PROPOSE/t/n, resampling from root/RESAMPLE/t.
fn reference_bootstrap<M: StateSpaceModel>(model: &M, xs: &[Vec<f64>], n: usize, root: &RngStream) -> f64 {
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut w = vec![1.0 / n as f64; n];
    let mut lml = 0.0;
    for (k, x) in xs.iter().enumerate() {
        let t = k + 1;
        if t > 1 {
            let anc = resample_indices(&w, ResampleScheme::Multinomial, &mut root.substream(tags::RESAMPLE).substream(t as u64));
            z = anc.iter().map(|&a| z[a].clone()).collect();
            w = vec![1.0 / n as f64; n];
        }
        let mut lw = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = root.substream(tags::PROPOSE).substream(t as u64).substream(i as u64);
            z[i] = if t == 1 {
                model.sample_init(&mut rng)
            } else {
                model.sample_trans(t, &z[i], &mut rng)
            };
            lw.push(w[i].ln() + model.log_obs(t, &z[i], x));
        }
        let lz = logsumexp(&lw);
        lml += lz;
        w = lw.iter().map(|l| (l - lz).exp()).collect();
    }
    lml
}

#[test]
fn bootstrap_matches_reference_filter_seed_for_seed() {
    let model = BenchmarkNssm::paper();
    for seed in 0..5 {
        let seq = simulate(&model, 40, &mut RngStream::new(seed, 1)).unwrap();
        let root = RngStream::new(seed, 2);
        let lib = run_smc(&SmcConfig::new(64), &model, None, &seq.x, root.clone())
            .unwrap()
            .log_marginal_likelihood();
        let reference = reference_bootstrap(&model, &seq.x, 64, &root);
        assert!((lib - reference).abs() < 1e-9, "{lib} vs {reference}");
    }
}

#[test]
fn prior_family_equals_bootstrap_path() {
    let bench = BenchmarkNssm::paper();
    let lg = LinearGaussianSsm::scalar(0.8, 1.5, 0.7, 0.3, 1.0, 2.0).unwrap();
    let q = ProposalModel::prior();
    for seed in 0..4 {
        for trigger in [ResampleTrigger::Always, ResampleTrigger::EssBelow(0.5)] {
            let mut cfg = SmcConfig::new(32);
            cfg.trigger = trigger;
            cfg.scheme = ResampleScheme::Systematic;
            let seq = simulate(&bench, 30, &mut RngStream::new(seed, 3)).unwrap();
            let a = run_smc(&cfg, &bench, None, &seq.x, RngStream::new(seed, 4)).unwrap();
            let b = run_smc(&cfg, &bench, Some(&q), &seq.x, RngStream::new(seed, 4)).unwrap();
            assert!((a.log_marginal_likelihood() - b.log_marginal_likelihood()).abs() < 1e-12);
            assert_eq!(a.step_ancestors(), b.step_ancestors());

            let seq = simulate(&lg, 30, &mut RngStream::new(seed, 5)).unwrap();
            let a = run_smc(&cfg, &lg, None, &seq.x, RngStream::new(seed, 6)).unwrap();
            let b = run_smc(&cfg, &lg, Some(&q), &seq.x, RngStream::new(seed, 6)).unwrap();
            assert!((a.log_marginal_likelihood() - b.log_marginal_likelihood()).abs() < 1e-12);
        }
    }
}

#[test]
fn two_dimensional_lgssm_matches_kalman() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, -0.2, 0.8]);
    let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.5]);
    let m = LinearGaussianSsm::new(a, c, &[0.5, 0.3], &[0.4], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
    let seq = simulate(&m, 25, &mut RngStream::new(7, 0)).unwrap();
    let exact = kalman_filter(&m, &seq.x).unwrap().log_marginal_likelihood;
    let est = run_smc(&SmcConfig::new(4000), &m, None, &seq.x, RngStream::new(7, 1)).unwrap();
    assert!((est.log_marginal_likelihood() - exact).abs() < 0.3);
}

#[test]
fn filtering_means_track_kalman() {
    let m = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 0.5, 0.0, 1.0).unwrap();
    let seq = simulate(&m, 30, &mut RngStream::new(8, 0)).unwrap();
    let k = kalman_filter(&m, &seq.x).unwrap();
    let ps = run_smc(&SmcConfig::new(20_000), &m, None, &seq.x, RngStream::new(8, 1)).unwrap();
    for (t, (pm, km)) in ps.posterior_means().iter().zip(&k.means).enumerate() {
        let sd = k.covs[t][(0, 0)].sqrt();
        assert!((pm[0] - km[0]).abs() < 0.1 * sd, "t={}", t + 1);
    }
}

#[test]
fn locally_optimal_proposal_gives_exact_single_step_weights() {
    // with q = p(z_1 | x_1) every particle carries the exact evidence p(x_1)
    let m = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 0.5, 0.3, 2.0).unwrap();
    let x = vec![vec![1.7]];
    let (mean, cov) = lgssm_one_step_posterior(&m, None, &x[0]).unwrap();
    let mut rng = RngStream::new(9, 0);
    let exact = kalman_filter(&m, &x).unwrap().log_marginal_likelihood;
    for _ in 0..20 {
        let z = vec![mean[0] + cov[(0, 0)].sqrt() * rng.std_normal()];
        let lq = -0.5 * ((z[0] - mean[0]).powi(2) / cov[(0, 0)] + (2.0 * std::f64::consts::PI * cov[(0, 0)]).ln());
        let lw = m.log_init(&z) + m.log_obs(1, &z, &x[0]) - lq;
        assert!((lw - exact).abs() < 1e-10);
    }
}

#[test]
fn ess_trigger_skips_resampling_when_weights_are_even() {
    let m = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1e6, 0.0, 1.0).unwrap();
    let seq = simulate(&m, 10, &mut RngStream::new(10, 0)).unwrap();
    let mut cfg = SmcConfig::new(50);
    cfg.trigger = ResampleTrigger::EssBelow(0.5);
    let ps = run_smc(&cfg, &m, None, &seq.x, RngStream::new(10, 1)).unwrap();
    assert!(ps.step_resampled().iter().all(|r| !r));
    assert!(ps.ess_trace().iter().all(|e| *e > 49.9));
}

#[test]
fn trained_style_proposal_keeps_lml_unbiased_on_lgssm() {
    // any valid proposal leaves the evidence estimate unbiased
    let m = LinearGaussianSsm::scalar(0.9, 1.0, 1.0, 1.0, 0.0, 1.0).unwrap();
    let seq = simulate(&m, 10, &mut RngStream::new(11, 0)).unwrap();
    let exact = kalman_filter(&m, &seq.x).unwrap().log_marginal_likelihood;
    let q = ProposalModel::for_model(ProposalVariant::parse("nn-f", 1).unwrap(), &m, Some(8), &mut RngStream::new(11, 1)).unwrap();
    let reps = 2000;
    let ratios: Vec<f64> = (0..reps)
        .map(|r| {
            (run_smc(&SmcConfig::new(20), &m, Some(&q), &seq.x, RngStream::new(11, 2).substream(r))
                .unwrap()
                .log_marginal_likelihood()
                - exact)
                .exp()
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / reps as f64;
    let sd = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    assert!((mean - 1.0).abs() < 3.0 * sd / (reps as f64).sqrt(), "{mean} {sd}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trajectories_match_brute_force_tracker(
        seed in 0u64..10_000,
        n in 1usize..8,
        t_len in 1usize..10,
        systematic in any::<bool>(),
        adaptive in any::<bool>(),
    ) {
        let model = BenchmarkNssm::paper();
        let seq = simulate(&model, t_len, &mut RngStream::new(seed, 0)).unwrap();
        let mut cfg = SmcConfig::new(n);
        if systematic { cfg.scheme = ResampleScheme::Systematic; }
        if adaptive { cfg.trigger = ResampleTrigger::EssBelow(0.6); }
        let ps = run_smc(&cfg, &model, None, &seq.x, RngStream::new(seed, 1)).unwrap();

        let mut paths: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n];
        for t in 1..=t_len {
            let anc = &ps.step_ancestors()[t - 1];
            let mut next: Vec<Vec<Vec<f64>>> = anc.iter().map(|&a| paths[a].clone()).collect();
            for (i, p) in next.iter_mut().enumerate() {
                p.push(ps.state_at(t, i).to_vec());
            }
            paths = next;
            for (i, p) in paths.iter().enumerate() {
                prop_assert_eq!(&ps.trajectory(t, i), p);
            }
            if !ps.step_resampled()[t - 1] {
                prop_assert!(anc.iter().enumerate().all(|(i, &a)| i == a));
            }
        }
        let w: f64 = ps.normalized_weights().iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-12);
    }
}
