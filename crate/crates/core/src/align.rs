//! Alignment algorithms targeting the reward-tilted distribution
//! `p^r(z) ∝ p(z) exp r(z)`.
//!
//! Guidance integrates the corrected field `u_t(x) + b_t grad V_t(x)` with
//! explicit Euler steps, where the value gradient comes from the exact
//! oracle, posterior diamond draws or the weighted estimator. SMC and search
//! move particles with the early-stop DDPM kernel and reweight by value
//! increments. Best-of-N is the reference baseline.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error};
use crate::maps::{diamond_ddpm_step, FlowMap, PosteriorDiamondMap};
use crate::mixture::MixtureOracle;
use crate::reward::{
    ess, posterior_value, posterior_value_gradient, softmax, weighted_diamond_gradient, Reward, RewardFn, Sensitivity,
    WeightedOptions,
};
use crate::rng;
use crate::{Result, Vector};

/// Outer loop settings shared by every guidance variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    /// Uniform Euler steps from `t_min` to `t_max`.
    pub n_steps: usize,
    /// Particles per value-gradient estimate.
    pub particles: usize,
    /// SNR factor of the weighted estimator.
    pub lambda: f64,
    /// Guidance is applied at step times in `[t_lo, t_hi]`.
    pub t_lo: f64,
    pub t_hi: f64,
    /// Scale on `b_t` in the guidance term.
    pub multiplier: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { n_steps: 100, particles: 4, lambda: 20.0, t_lo: 0.05, t_hi: 0.25, multiplier: 1.0 }
    }
}

impl GuidanceConfig {
    /// Guidance everywhere on `[0, 1]`.
    pub fn full_window(n_steps: usize, particles: usize) -> Self {
        GuidanceConfig { n_steps, particles, t_lo: 0.0, t_hi: 1.0, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_steps == 0 || self.particles == 0 {
            return Err(Error::InvalidArgument("n_steps and particles must be positive".into()));
        }
        if !(0.0 <= self.t_lo && self.t_lo < self.t_hi && self.t_hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "guidance window must satisfy 0 <= t_lo < t_hi <= 1, got [{}, {}]",
                self.t_lo, self.t_hi
            )));
        }
        if !self.multiplier.is_finite() || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument("multiplier and lambda must be finite".into()));
        }
        Ok(())
    }

    fn in_window(&self, t: f64) -> bool {
        self.t_lo <= t && t <= self.t_hi
    }
}

/// Source of the value gradient used by [`guide`].
pub enum GuidanceGradient<'a> {
    /// No correction: plain Euler sampling of the base field.
    None,
    /// Closed-form gradient of the oracle.
    Exact(&'a Reward),
    /// Softmax-weighted pullbacks through posterior diamond draws.
    Posterior { map: &'a dyn PosteriorDiamondMap, reward: &'a dyn RewardFn, sensitivity: Sensitivity },
    /// Renoised flow-map particles with weights.
    Weighted { flowmap: &'a dyn FlowMap, reward: &'a dyn RewardFn, options: WeightedOptions },
}

/// Euler integration of `u_t + multiplier b_t grad V_t` from a draw of
/// `p_{t_min}`. Seed stream 0 draws the start; step `k` estimates with
/// `derive_seed(seed, [1, k])`, so guidance never perturbs the start.
pub fn guide(oracle: &MixtureOracle, gradient: &GuidanceGradient, cfg: &GuidanceConfig, seed: u64) -> Result<Vector> {
    cfg.validate()?;
    let sched = *oracle.scheduler();
    let mut rng = rng::stream(seed, 0);
    let mut x = oracle.sample_marginal(sched.t_min, &mut rng);
    let h = (sched.t_max - sched.t_min) / cfg.n_steps as f64;
    for k in 0..cfg.n_steps {
        let t = sched.t_min + h * k as f64;
        let mut u = oracle.velocity(&x, t)?;
        if cfg.in_window(t) {
            let step_seed = rng::derive_seed(seed, &[1, k as u64]);
            if let Some(g) = value_gradient(oracle, gradient, &x, t, cfg, step_seed)? {
                let (_, b) = sched.velocity_coeffs(t)?;
                u += (cfg.multiplier * b) * g;
            }
        }
        x += h * u;
    }
    Ok(x)
}

fn value_gradient(
    oracle: &MixtureOracle,
    gradient: &GuidanceGradient,
    x: &Vector,
    t: f64,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<Option<Vector>> {
    Ok(match gradient {
        GuidanceGradient::None => None,
        GuidanceGradient::Exact(reward) => Some(oracle.value_exact(x, t, reward)?.1),
        GuidanceGradient::Posterior { map, reward, sensitivity } => {
            posterior_value_gradient(*map, x, t, *reward, cfg.particles, seed, *sensitivity)?.gradient
        }
        GuidanceGradient::Weighted { flowmap, reward, options } => {
            weighted_diamond_gradient(*flowmap, oracle, x, t, cfg.lambda, *reward, cfg.particles, seed, options)?
                .gradient
        }
    })
}

/// Base sampler: Euler on the oracle velocity with `n_steps` uniform steps.
pub fn unguided_sample(oracle: &MixtureOracle, n_steps: usize, seed: u64) -> Result<Vector> {
    guide(oracle, &GuidanceGradient::None, &GuidanceConfig { n_steps, ..Default::default() }, seed)
}

/// Guidance with posterior diamond draws.
pub fn guide_posterior(
    oracle: &MixtureOracle,
    map: &dyn PosteriorDiamondMap,
    reward: &dyn RewardFn,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<Vector> {
    let gradient = GuidanceGradient::Posterior { map, reward, sensitivity: Sensitivity::Tangent };
    guide(oracle, &gradient, cfg, seed)
}

/// Guidance with the weighted estimator at `t' = snr_shift_time(t, lambda)`.
pub fn guide_weighted(
    oracle: &MixtureOracle,
    flowmap: &dyn FlowMap,
    reward: &dyn RewardFn,
    cfg: &GuidanceConfig,
    seed: u64,
) -> Result<Vector> {
    let gradient = GuidanceGradient::Weighted { flowmap, reward, options: WeightedOptions::default() };
    guide(oracle, &gradient, cfg, seed)
}

/// Guidance with the closed-form value gradient.
pub fn guide_exact(oracle: &MixtureOracle, reward: &Reward, cfg: &GuidanceConfig, seed: u64) -> Result<Vector> {
    guide(oracle, &GuidanceGradient::Exact(reward), cfg, seed)
}

/// `n` independent draws; draw `i` is seeded with `derive_seed(seed, [i])`.
pub fn draw_batch<F>(n: usize, seed: u64, draw: F) -> Result<Vec<Vector>>
where
    F: Fn(u64) -> Result<Vector> + Sync,
{
    (0..n).into_par_iter().map(|i| draw(rng::derive_seed(seed, &[i as u64]))).collect()
}

/// How SMC potentials relate to the value estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialMode {
    /// Weight by the value increment of the step, reset after resampling.
    #[default]
    PerStepReset,
    /// Accumulate increments and carry them through resampling.
    LiteralCarry,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
    /// Never resample; potentials accumulate along each lineage.
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmcConfig {
    /// Particle count `M`.
    pub particles: usize,
    /// Kernel steps `N` on a uniform grid from `t_min` to 1.
    pub n_steps: usize,
    /// Posterior draws `K` per value estimate.
    pub inner_samples: usize,
    pub mode: PotentialMode,
    pub resampling: Resampling,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig {
            particles: 256,
            n_steps: 16,
            inner_samples: 64,
            mode: PotentialMode::PerStepReset,
            resampling: Resampling::Multinomial,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.n_steps == 0 || self.inner_samples == 0 {
            return Err(Error::InvalidArgument("particles, n_steps and inner_samples must be positive".into()));
        }
        Ok(())
    }
}

/// Per-step diagnostics of an SMC or search run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    /// Normalised ESS of the resampling weights.
    pub ess: f64,
    pub resampled: bool,
    /// Mean value estimate over the particles after the move.
    pub mean_value: f64,
}

#[derive(Clone, Debug)]
pub struct SmcOutcome {
    pub particles: Vec<Vector>,
    /// Value estimates at the start, per final particle lineage.
    pub initial_values: Vec<f64>,
    /// Value estimates at time one, i.e. the rewards.
    pub values: Vec<f64>,
    /// Accumulated log-potentials of the final particles.
    pub log_potentials: Vec<f64>,
    pub history: Vec<StepRecord>,
}

/// Uniform grid `t_min = t_0 < ... < t_N = 1`.
pub fn kernel_grid(t_min: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps).map(|k| if k == n_steps { 1.0 } else { t_min + (1.0 - t_min) * k as f64 / n_steps as f64 }).collect()
}

struct Ensemble {
    states: Vec<Vector>,
    values: Vec<f64>,
    initial: Vec<f64>,
    potentials: Vec<f64>,
}

impl Ensemble {
    fn start(
        oracle: &MixtureOracle,
        map: &dyn PosteriorDiamondMap,
        reward: &dyn RewardFn,
        m: usize,
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        let t0 = map.scheduler().t_min;
        let init_seed = rng::derive_seed(seed, &[0]);
        let states: Vec<Vector> =
            (0..m).into_par_iter().map(|i| oracle.sample_marginal(t0, &mut rng::stream(init_seed, i as u64))).collect();
        let values = estimate_values(map, reward, &states, t0, k, rng::derive_seed(seed, &[3, 0]))?;
        Ok(Ensemble { initial: values.clone(), values, potentials: vec![0.0; m], states })
    }

    /// Moves every particle from `t` to `t_next` and returns the new values.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &mut self,
        map: &dyn PosteriorDiamondMap,
        reward: &dyn RewardFn,
        t: f64,
        t_next: f64,
        k: usize,
        seed: u64,
        step: usize,
    ) -> Result<Vec<f64>> {
        let move_seed = rng::derive_seed(seed, &[1, step as u64]);
        self.states = self
            .states
            .par_iter()
            .enumerate()
            .map(|(i, x)| diamond_ddpm_step(map, x, t, t_next, rng::derive_seed(move_seed, &[i as u64])))
            .collect::<Result<_>>()?;
        estimate_values(map, reward, &self.states, t_next, k, rng::derive_seed(seed, &[3, step as u64 + 1]))
    }

    fn select(&mut self, ancestors: &[usize]) {
        self.states = ancestors.iter().map(|&a| self.states[a].clone()).collect();
        self.values = ancestors.iter().map(|&a| self.values[a]).collect();
        self.initial = ancestors.iter().map(|&a| self.initial[a]).collect();
        self.potentials = ancestors.iter().map(|&a| self.potentials[a]).collect();
    }
}

fn estimate_values(
    map: &dyn PosteriorDiamondMap,
    reward: &dyn RewardFn,
    states: &[Vector],
    t: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    states
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let est = posterior_value(map, x, t, reward, k, rng::derive_seed(seed, &[i as u64]))?;
            Ok(est.value.unwrap_or(0.0))
        })
        .collect()
}

/// Sequential Monte Carlo with the early-stop DDPM kernel as proposal and
/// value increments `V_{t'} - V_t` as potentials.
pub fn smc(
    oracle: &MixtureOracle,
    map: &dyn PosteriorDiamondMap,
    reward: &dyn RewardFn,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<SmcOutcome> {
    cfg.validate()?;
    check_dim(oracle.dim(), map.dim())?;
    let m = cfg.particles;
    let grid = kernel_grid(map.scheduler().t_min, cfg.n_steps);
    let mut ens = Ensemble::start(oracle, map, reward, m, cfg.inner_samples, seed)?;
    let mut history = Vec::with_capacity(cfg.n_steps);
    for (step, w) in grid.windows(2).enumerate() {
        let new_values = ens.advance(map, reward, w[0], w[1], cfg.inner_samples, seed, step)?;
        for i in 0..m {
            ens.potentials[i] += new_values[i] - ens.values[i];
        }
        ens.values = new_values;
        let e = ess(&ens.potentials)?;
        if e <= (1.0 + 1e-9) / m as f64 && m > 1 {
            log::warn!("degenerate SMC ensemble at t = {}: ess {e:.3e} with {m} particles", w[1]);
        }
        let resampled = cfg.resampling != Resampling::Never;
        if resampled {
            let mut rng = rng::stream(rng::derive_seed(seed, &[2, step as u64]), 0);
            let ancestors = resample(&softmax(&ens.potentials), cfg.resampling, &mut rng);
            ens.select(&ancestors);
            if cfg.mode == PotentialMode::PerStepReset {
                ens.potentials.iter_mut().for_each(|u| *u = 0.0);
            }
        }
        history.push(StepRecord { t: w[1], ess: e, resampled, mean_value: ens.values.iter().sum::<f64>() / m as f64 });
    }
    Ok(SmcOutcome {
        particles: ens.states,
        initial_values: ens.initial,
        values: ens.values,
        log_potentials: ens.potentials,
        history,
    })
}

/// Ancestor indices drawn from normalised `weights`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], scheme: Resampling, rng: &mut R) -> Vec<usize> {
    let m = weights.len();
    let mut cdf = Vec::with_capacity(m);
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let total = acc;
    let find = |u: f64| cdf.partition_point(|&c| c <= u * total).min(m - 1);
    match scheme {
        Resampling::Never => (0..m).collect(),
        Resampling::Multinomial => (0..m).map(|_| find(rng.random::<f64>())).collect(),
        Resampling::Systematic => {
            let u0: f64 = rng.random();
            (0..m).map(|i| find((i as f64 + u0) / m as f64)).collect()
        }
    }
}

/// One step of a search run.
#[derive(Clone, Debug)]
pub struct SearchStep {
    pub t: f64,
    /// Particle states after the move, before selection.
    pub candidates: Vec<Vector>,
    /// Potentials of the candidates.
    pub potentials: Vec<f64>,
    pub chosen: usize,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub state: Vector,
    pub steps: Vec<SearchStep>,
}

/// Zero-temperature SMC: after every step all particles become copies of the
/// one with the largest potential (lowest index on ties).
pub fn search(
    oracle: &MixtureOracle,
    map: &dyn PosteriorDiamondMap,
    reward: &dyn RewardFn,
    cfg: &SmcConfig,
    seed: u64,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    check_dim(oracle.dim(), map.dim())?;
    let m = cfg.particles;
    let grid = kernel_grid(map.scheduler().t_min, cfg.n_steps);
    let mut ens = Ensemble::start(oracle, map, reward, m, cfg.inner_samples, seed)?;
    let mut steps = Vec::with_capacity(cfg.n_steps);
    for (step, w) in grid.windows(2).enumerate() {
        let new_values = ens.advance(map, reward, w[0], w[1], cfg.inner_samples, seed, step)?;
        let potentials: Vec<f64> = match cfg.mode {
            PotentialMode::PerStepReset => new_values.iter().zip(&ens.values).map(|(n, o)| n - o).collect(),
            PotentialMode::LiteralCarry => {
                ens.potentials.iter().zip(new_values.iter().zip(&ens.values)).map(|(u, (n, o))| u + n - o).collect()
            }
        };
        ens.values = new_values;
        let chosen = argmax(&potentials);
        steps.push(SearchStep { t: w[1], candidates: ens.states.clone(), potentials: potentials.clone(), chosen });
        ens.potentials = potentials;
        ens.select(&vec![chosen; m]);
    }
    Ok(SearchOutcome { state: ens.states.swap_remove(0), steps })
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Anything that produces one terminal sample per seed.
pub trait Sampler: Sync {
    fn sample(&self, seed: u64) -> Result<Vector>;

    /// Map evaluations spent per sample.
    fn evaluations_per_sample(&self) -> usize {
        1
    }
}

impl<F> Sampler for F
where
    F: Fn(u64) -> Result<Vector> + Sync,
{
    fn sample(&self, seed: u64) -> Result<Vector> {
        self(seed)
    }
}

/// One-step posterior sampler: `X_{0,1}(x_bar | x_{t_min}, t_min)` with
/// `x_{t_min}` drawn from the oracle marginal.
pub struct OneStepSampler<'a> {
    pub oracle: &'a MixtureOracle,
    pub map: &'a dyn PosteriorDiamondMap,
}

impl Sampler for OneStepSampler<'_> {
    fn sample(&self, seed: u64) -> Result<Vector> {
        let t0 = self.map.scheduler().t_min;
        let mut rng = rng::stream(seed, 0);
        let x_t = self.oracle.sample_marginal(t0, &mut rng);
        let x0 = rng::std_normal_vector(&mut rng, self.map.dim());
        self.map.apply(&x0, 0.0, 1.0, &x_t, t0)
    }
}

/// Draws `n` samples (sample `i` seeded with `derive_seed(seed, [i])`) and
/// keeps the one with the largest reward, lowest index on ties.
pub fn best_of_n(sampler: &dyn Sampler, reward: &dyn RewardFn, n: usize, seed: u64) -> Result<Vector> {
    if n == 0 {
        return Err(Error::InvalidArgument("best-of-n needs n >= 1".into()));
    }
    let mut draws = draw_batch(n, seed, |s| sampler.sample(s))?;
    let rewards: Vec<f64> = draws.iter().map(|z| reward.eval(z)).collect();
    Ok(draws.swap_remove(argmax(&rewards)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{OracleDiamondMap, OracleFlowMap};
    use crate::mixture::GaussianMixture;
    use crate::sched::Scheduler;
    use crate::stats::sliced_w2;
    use nalgebra::{dmatrix, dvector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std1() -> MixtureOracle {
        MixtureOracle::new(GaussianMixture::standard_normal(1).unwrap(), Scheduler::linear())
    }

    fn two_bumps() -> MixtureOracle {
        let mix = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![dvector![-1.5, 0.0], dvector![1.5, 0.5]],
            vec![dmatrix![0.3, 0.0; 0.0, 0.3], dmatrix![0.2, 0.05; 0.05, 0.4]],
        )
        .unwrap();
        MixtureOracle::new(mix, Scheduler::linear())
    }

    #[test]
    fn config_validation_and_serde() {
        assert!(GuidanceConfig::default().validate().is_ok());
        let bad = GuidanceConfig { t_lo: 0.3, t_hi: 0.2, ..Default::default() };
        assert!(bad.validate().is_err());
        let json = r#"{"n_steps": 10, "particles": 2}"#;
        let cfg: GuidanceConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.lambda, 20.0);
        assert!(serde_json::from_str::<GuidanceConfig>(r#"{"steps": 3}"#).is_err());
        let smc: SmcConfig = serde_json::from_str(r#"{"mode": "literal-carry"}"#).unwrap();
        assert_eq!(smc.mode, PotentialMode::LiteralCarry);
    }

    #[test]
    fn zero_reward_guidance_is_bitwise_unguided() {
        let o = two_bumps();
        let map = OracleDiamondMap::new(o.clone(), 8).unwrap();
        let zero = Reward::zero(2);
        let cfg = GuidanceConfig { n_steps: 40, particles: 3, t_lo: 0.0, t_hi: 1.0, ..Default::default() };
        for seed in 0..4 {
            let base = unguided_sample(&o, 40, seed).unwrap();
            assert_eq!(guide_posterior(&o, &map, &zero, &cfg, seed).unwrap(), base);
            assert_eq!(guide_exact(&o, &zero, &cfg, seed).unwrap(), base);
        }
    }

    #[test]
    fn unguided_euler_reaches_data() {
        let o = std1();
        let xs = draw_batch(20_000, 3, |s| unguided_sample(&o, 100, s)).unwrap();
        let target: Vec<Vector> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..20_000).map(|_| o.mixture().sample(&mut rng)).collect()
        };
        assert!(sliced_w2(&xs, &target, 16, 0).unwrap() < 0.03);
    }

    #[test]
    fn exact_guidance_shifts_gaussian_mean() {
        // Tilting N(0, 1) by exp(c z) gives N(c, 1).
        let o = std1();
        let reward = Reward::linear(dvector![0.8]);
        let cfg = GuidanceConfig::full_window(200, 1);
        let xs = draw_batch(20_000, 9, |s| guide_exact(&o, &reward, &cfg, s)).unwrap();
        let m = xs.iter().map(|x| x[0]).sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x[0] - m).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!((m - 0.8).abs() < 0.03, "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn weighted_guidance_rejects_non_shrinking_lambda() {
        let o = std1();
        let fm = OracleFlowMap::new(o.clone(), 8).unwrap();
        let cfg = GuidanceConfig { lambda: 0.5, n_steps: 10, ..Default::default() };
        let err = guide_weighted(&o, &fm, &Reward::linear(dvector![1.0]), &cfg, 0).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn resampling_draws_from_weights() {
        let w = [0.1, 0.0, 0.6, 0.3];
        let mut rng = rng::stream(4, 0);
        let mut counts = [0usize; 4];
        for _ in 0..5_000 {
            for a in resample(&w, Resampling::Multinomial, &mut rng) {
                counts[a] += 1;
            }
        }
        assert_eq!(counts[1], 0);
        for (c, p) in counts.iter().zip(w) {
            assert!((*c as f64 / 20_000.0 - p).abs() < 0.01);
        }
        let sys = resample(&w, Resampling::Systematic, &mut rng);
        // Systematic draws give index 2 either floor(2.4) or ceil(2.4) copies.
        let copies = sys.iter().filter(|&&a| a == 2).count();
        assert!(copies == 2 || copies == 3);
        assert!(!sys.contains(&1));
        assert_eq!(resample(&w, Resampling::Never, &mut rng), vec![0, 1, 2, 3]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn smc_potentials_telescope_without_resampling() {
        let o = two_bumps();
        let map = OracleDiamondMap::new(o.clone(), 8).unwrap();
        let reward = Reward::linear(dvector![0.7, -0.4]);
        let cfg = SmcConfig {
            particles: 6,
            n_steps: 5,
            inner_samples: 8,
            resampling: Resampling::Never,
            ..Default::default()
        };
        let out = smc(&o, &map, &reward, &cfg, 11).unwrap();
        for i in 0..6 {
            let want = out.values[i] - out.initial_values[i];
            assert!((out.log_potentials[i] - want).abs() < 1e-10);
            assert!((out.values[i] - reward.eval(&out.particles[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_smc_is_the_plain_chain() {
        let o = two_bumps();
        let map = OracleDiamondMap::new(o.clone(), 8).unwrap();
        let reward = Reward::linear(dvector![2.0, 0.0]);
        let cfg = SmcConfig { particles: 1, n_steps: 4, inner_samples: 4, ..Default::default() };
        let a = smc(&o, &map, &reward, &cfg, 2).unwrap();
        let b = smc(&o, &map, &Reward::zero(2), &cfg, 2).unwrap();
        assert_eq!(a.particles, b.particles);
    }

    #[test]
    fn search_keeps_argmax_lineage() {
        let o = two_bumps();
        let map = OracleDiamondMap::new(o.clone(), 8).unwrap();
        let reward = Reward::linear(dvector![1.0, 1.0]);
        let cfg = SmcConfig { particles: 3, n_steps: 4, inner_samples: 8, ..Default::default() };
        let out = search(&o, &map, &reward, &cfg, 5).unwrap();
        assert_eq!(out.steps.len(), 4);
        let last = out.steps.last().unwrap();
        assert_eq!(out.state, last.candidates[last.chosen]);
        for s in &out.steps {
            assert_eq!(s.chosen, argmax(&s.potentials));
        }
    }

    #[test]
    fn best_of_one_is_a_plain_sample() {
        let o = two_bumps();
        let map = OracleDiamondMap::new(o.clone(), 8).unwrap();
        let sampler = OneStepSampler { oracle: &o, map: &map };
        let r = Reward::linear(dvector![1.0, 0.0]);
        assert_eq!(best_of_n(&sampler, &r, 1, 7).unwrap(), sampler.sample(rng::derive_seed(7, &[0])).unwrap());
        let best = best_of_n(&sampler, &r, 8, 7).unwrap();
        let all = draw_batch(8, 7, |s| sampler.sample(s)).unwrap();
        assert!(all.iter().all(|z| r.eval(z) <= r.eval(&best)));
        assert!(best_of_n(&sampler, &r, 0, 7).is_err());
    }

    #[test]
    fn kernel_grid_ends_at_one() {
        let g = kernel_grid(1e-3, 4);
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 1e-3);
        assert_eq!(g[4], 1.0);
    }
}
