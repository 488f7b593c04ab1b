//! End-to-end runs that cross module boundaries: scheduler, oracle, diamond
//! map, kernels, estimators and alignment together.

use diamond_core::align::{best_of_n, draw_batch, guide_exact, smc, GuidanceConfig, OneStepSampler, SmcConfig};
use diamond_core::distill::{rollout_regression_train, Architecture, DistilledDiamondMap, SmallNet, TrainConfig};
use diamond_core::glass::GlassField;
use diamond_core::maps::{chained_sample, OracleDiamondMap, PosteriorDiamondMap, StepKernel};
use diamond_core::mixture::{GaussianMixture, MixtureOracle};
use diamond_core::reward::{posterior_value, Reward, RewardFn};
use diamond_core::sched::{ScheduleKind, Scheduler};
use diamond_core::stats::{ks_test_1d, mean_with_se};
use diamond_core::{rng, Matrix, Vector};

fn v(xs: &[f64]) -> Vector {
    Vector::from_row_slice(xs)
}

fn bimodal(sched: Scheduler) -> MixtureOracle {
    let mix = GaussianMixture::new(
        vec![0.35, 0.65],
        vec![v(&[-1.5]), v(&[1.0])],
        vec![Matrix::from_element(1, 1, 0.2), Matrix::from_element(1, 1, 0.3)],
    )
    .unwrap();
    MixtureOracle::new(mix, sched)
}

fn target_draws(oracle: &MixtureOracle, n: usize, seed: u64) -> Vec<f64> {
    (0..n).map(|i| oracle.mixture().sample(&mut rng::stream(seed, i as u64))[0]).collect()
}

#[test]
fn chained_early_stop_recovers_a_bimodal_target_under_vp() {
    let oracle = bimodal(Scheduler::vp());
    let map = OracleDiamondMap::new(oracle.clone(), 24).unwrap();
    let t0 = oracle.scheduler().t_min;
    let times = [t0, 0.3, 0.6, 0.85, 1.0];
    let draws = draw_batch(3000, 11, |s| {
        let x = oracle.sample_marginal(t0, &mut rng::stream(s, 0));
        chained_sample(&map, StepKernel::DiamondEarlyStop, &x, &times, rng::derive_seed(s, &[1]))
    })
    .unwrap();
    let xs: Vec<f64> = draws.iter().map(|z| z[0]).collect();
    let (stat, p) = ks_test_1d(&xs, &target_draws(&oracle, 3000, 12)).unwrap();
    assert!(p > 1e-3, "KS statistic {stat}, p {p}");
}

#[test]
fn exact_guidance_lands_on_the_tilted_gaussian() {
    let mix = GaussianMixture::gaussian(v(&[0.3]), Matrix::from_element(1, 1, 0.5)).unwrap();
    let oracle = MixtureOracle::new(mix, Scheduler::linear());
    let reward = Reward::linear(v(&[0.8]));
    let cfg = GuidanceConfig::full_window(200, 1);
    let draws = draw_batch(4000, 3, |s| guide_exact(&oracle, &reward, &cfg, s)).unwrap();
    let (mean, se) = mean_with_se(&draws)[0];
    // Tilting N(m, v) by exp(c z) shifts the mean by v c.
    let expected = 0.3 + 0.5 * 0.8;
    assert!((mean - expected).abs() < 4.0 * se + 0.02, "{mean} vs {expected} (se {se})");
}

#[test]
fn smc_is_identical_across_thread_pools() {
    let oracle = bimodal(Scheduler::linear());
    let map = OracleDiamondMap::new(oracle.clone(), 8).unwrap();
    let reward = Reward::linear(v(&[0.7]));
    let cfg = SmcConfig { particles: 64, n_steps: 4, inner_samples: 8, ..Default::default() };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| smc(&oracle, &map, &reward, &cfg, 21).unwrap())
    };
    let (one, many) = (run(1), run(4));
    assert_eq!(one.particles, many.particles);
    assert_eq!(one.log_potentials, many.log_potentials);
    assert_eq!(one.history, many.history);
}

#[test]
fn smc_shifts_mass_towards_high_reward() {
    let oracle = bimodal(Scheduler::linear());
    let map = OracleDiamondMap::new(oracle.clone(), 12).unwrap();
    let reward = Reward::linear(v(&[1.0]));
    let cfg = SmcConfig { particles: 1024, n_steps: 6, inner_samples: 16, ..Default::default() };
    let out = smc(&oracle, &map, &reward, &cfg, 5).unwrap();
    let (mean, _) = mean_with_se(&out.particles)[0];
    let base = oracle.mixture().mean()[0];
    let tilted = oracle.mixture().tilt_linear(&v(&[1.0])).unwrap().mean()[0];
    assert!(mean > base + 0.5 * (tilted - base), "smc mean {mean}, base {base}, tilted {tilted}");
    assert_eq!(out.history.len(), 6);
    assert!(out.history.iter().all(|r| r.ess > 0.0 && r.ess <= 1.0 + 1e-12));
}

#[test]
fn best_of_n_reward_grows_with_budget() {
    let oracle = bimodal(Scheduler::linear());
    let map = OracleDiamondMap::new(oracle.clone(), 8).unwrap();
    let sampler = OneStepSampler { oracle: &oracle, map: &map };
    let reward = Reward::linear(v(&[1.0]));
    let mean_reward = |n: usize| {
        let picks = draw_batch(60, 9, |s| best_of_n(&sampler, &reward, n, s)).unwrap();
        picks.iter().map(|z| reward.eval(z)).sum::<f64>() / picks.len() as f64
    };
    let (one, four, sixteen) = (mean_reward(1), mean_reward(4), mean_reward(16));
    assert!(one < four && four < sixteen, "{one} {four} {sixteen}");
}

#[test]
fn distilled_map_checkpoint_round_trips_into_estimators() {
    let oracle = MixtureOracle::new(bimodal(Scheduler::linear()).mixture().clone(), Scheduler::linear());
    let field = GlassField::new(oracle.clone());
    let arch = Architecture::new(1, vec![24, 24], 3).unwrap();
    let cfg = TrainConfig { n_iters: 300, batch: 32, lr: 3e-3, teacher_steps: 8, seed: 2, ..Default::default() };
    let (net, report) = rollout_regression_train(&field, SmallNet::new(arch, 2), &cfg).unwrap();
    let early = report.losses[..30].iter().sum::<f64>();
    let late = report.losses[report.losses.len() - 30..].iter().sum::<f64>();
    assert!(late < early, "loss did not fall: {early} -> {late}");

    let student = DistilledDiamondMap::new(net, *oracle.scheduler());
    let restored = DistilledDiamondMap::from_bytes(&student.to_bytes()).unwrap();
    let (x_bar, x_t) = (v(&[0.4]), v(&[0.2]));
    assert_eq!(
        student.apply(&x_bar, 0.0, 1.0, &x_t, 0.5).unwrap(),
        restored.apply(&x_bar, 0.0, 1.0, &x_t, 0.5).unwrap()
    );

    let reward = Reward::linear(v(&[0.5]));
    let from_student = posterior_value(&restored, &x_t, 0.5, &reward, 256, 4).unwrap().value.unwrap();
    let (exact, _) = oracle.value_exact(&x_t, 0.5, &reward).unwrap();
    assert!(from_student.is_finite());
    // A briefly trained student is only roughly right, but the value is a
    // log-mean of bounded rewards and cannot drift far.
    assert!((from_student - exact).abs() < 1.0, "{from_student} vs {exact}");
}

#[test]
fn ve_kernel_refuses_steps_towards_more_noise() {
    // Under VE noise grows with t, so t < t' is not a denoising step.
    let sched = Scheduler::new(ScheduleKind::VarianceExploding);
    let oracle = bimodal(sched);
    let map = OracleDiamondMap::new(oracle.clone(), 16).unwrap();
    let x = oracle.sample_marginal(0.2, &mut rng::stream(1, 0));
    let err = chained_sample(&map, StepKernel::DiamondEarlyStop, &x, &[0.2, 0.5], 1).unwrap_err();
    assert!(err.is_numerical(), "{err}");
}
