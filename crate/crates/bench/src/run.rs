//! Dispatch from a resolved config to one algorithm, and the report files
//! each algorithm produces.

use std::path::{Path, PathBuf};

use diamond_core::align::{
    draw_batch, guide, kernel_grid, search, smc, unguided_sample, GuidanceGradient, OneStepSampler, Sampler,
};
use diamond_core::distill::{
    rollout_regression_train, Architecture, DistilledDiamondMap, SmallNet, TimeSampling, TrainConfig,
};
use diamond_core::glass::GlassField;
use diamond_core::maps::{
    chained_sample, ddpm_reference_sample, diamond_ddpm_step, naive_renoise_step, r_star_surface, OracleDiamondMap,
    OracleFlowMap, PosteriorDiamondMap, StepKernel,
};
use diamond_core::mixture::{GaussianMixture, MixtureOracle};
use diamond_core::reward::{
    denoiser_value, posterior_draws, posterior_value_gradient, weighted_diamond_gradient, weighted_diamond_value,
    Reward, RewardFn, Sensitivity, ValueEstimate, WeightedOptions,
};
use diamond_core::rng::{self, derive_seed};
use diamond_core::sched::Scheduler;
use diamond_core::stats::{ks_test_1d, mean, mean_with_se, sliced_w2, variance_with_se};
use diamond_core::{Matrix, Vector};
use serde_json::{json, Value};

use crate::config::*;
use crate::output::{self, finite_json, vector_json};
use crate::svg::{self, Series};
use crate::{BenchError, Result};

/// Projections used by every sliced-W2 metric.
const PROJECTIONS: usize = 64;

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub inner_steps: Option<usize>,
    /// Symmetric clamp: `t_min = c`, `t_max = 1 - c`.
    pub t_clamp: Option<f64>,
    pub estimator: Option<Estimator>,
    /// Inner draws for `value` and `guide`, particles for `smc` and `search`,
    /// candidates for `bon`.
    pub particles: Option<usize>,
    pub lambda: Option<f64>,
    pub seeds: Option<usize>,
    pub map: Option<String>,
    pub figure: Option<Figure>,
}

/// Merges the subcommand, config file and overrides into the config that is
/// run and echoed.
pub fn resolve(command: &str, mut cfg: ExperimentConfig, o: &Overrides) -> Result<ExperimentConfig> {
    let mut algorithm = match cfg.algorithm.take() {
        Some(a) if a.name() != command => {
            return Err(BenchError::Config(format!(
                "config algorithm `{}` does not match subcommand `{command}`",
                a.name()
            )))
        }
        Some(a) => a,
        None => AlgorithmSpec::default_for(command)
            .ok_or_else(|| BenchError::Config(format!("unknown subcommand `{command}`")))?,
    };
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.out {
        cfg.output = out.clone();
    }
    if let Some(n) = o.inner_steps {
        cfg.inner_steps = n;
    }
    if let Some(c) = o.t_clamp {
        cfg.scheduler.t_min = c;
        cfg.scheduler.t_max = 1.0 - c;
    }
    if let Some(map) = &o.map {
        cfg.map = map.clone();
    }
    let unused = |flag: &str| log::warn!("--{flag} has no effect on `{command}`");
    match &mut algorithm {
        AlgorithmSpec::Value(p) => {
            set(&mut p.estimator, o.estimator);
            set(&mut p.particles, o.particles);
            set(&mut p.lambda, o.lambda);
            set(&mut p.seeds, o.seeds);
        }
        AlgorithmSpec::Guide(p) => {
            set(&mut p.estimator, o.estimator);
            set(&mut p.guidance.particles, o.particles);
            set(&mut p.guidance.lambda, o.lambda);
            if o.seeds.is_some() {
                unused("seeds");
            }
        }
        AlgorithmSpec::Smc(p) => set(&mut p.particles, o.particles),
        AlgorithmSpec::Search(p) => {
            set(&mut p.particles, o.particles);
            set(&mut p.runs, o.seeds);
        }
        AlgorithmSpec::Bon(p) => set(&mut p.budget, o.particles),
        AlgorithmSpec::Report(p) => set(&mut p.figure, o.figure),
        _ => {
            for (flag, given) in [
                ("estimator", o.estimator.is_some()),
                ("particles", o.particles.is_some()),
                ("lambda", o.lambda.is_some()),
                ("seeds", o.seeds.is_some()),
            ] {
                if given {
                    unused(flag);
                }
            }
        }
    }
    if cfg.inner_steps == 0 {
        return Err(BenchError::Config("inner_steps must be positive".into()));
    }
    cfg.algorithm = Some(algorithm);
    Ok(cfg)
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Everything one run writes.
struct Report {
    samples: Vec<Vector>,
    metrics: Vec<Value>,
    svg: String,
    /// Additional `(file name, bytes)` pairs.
    extra: Vec<(String, Vec<u8>)>,
}

/// Runs a resolved config and writes its report directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let algorithm = cfg
        .algorithm
        .as_ref()
        .ok_or_else(|| BenchError::Config("config has no algorithm; resolve it against a subcommand first".into()))?;
    let ctx = Context::new(cfg)?;
    let report = match algorithm {
        AlgorithmSpec::Oracle(p) => ctx.oracle_report(p)?,
        AlgorithmSpec::Sample(p) => ctx.sample(p)?,
        AlgorithmSpec::Posterior(p) => ctx.posterior(p)?,
        AlgorithmSpec::DdpmStep(p) => ctx.ddpm_step(p)?,
        AlgorithmSpec::Value(p) => ctx.value(p)?,
        AlgorithmSpec::Guide(p) => ctx.guide(p)?,
        AlgorithmSpec::Smc(p) => ctx.smc(p)?,
        AlgorithmSpec::Search(p) => ctx.search(p)?,
        AlgorithmSpec::Bon(p) => ctx.bon(p)?,
        AlgorithmSpec::Distill(p) => ctx.distill(p)?,
        AlgorithmSpec::Report(p) => ctx.figure(p)?,
    };
    let dir = &cfg.output;
    output::write_atomic(&dir.join(output::SAMPLES), &output::samples_csv(&report.samples)?)?;
    output::write_atomic(&dir.join(output::METRICS), &output::jsonl(&report.metrics))?;
    output::write_atomic(&dir.join(output::CONFIG_ECHO), &output::pretty_json(cfg)?)?;
    output::write_atomic(&dir.join(output::REPORT), report.svg.as_bytes())?;
    for (name, bytes) in &report.extra {
        output::write_atomic(&dir.join(name), bytes)?;
    }
    Ok(dir.clone())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    sched: Scheduler,
    oracle: Option<MixtureOracle>,
}

impl<'a> Context<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Result<Self> {
        let sched = cfg.scheduler()?;
        let oracle = match &cfg.mixture {
            Some(_) => Some(MixtureOracle::new(cfg.mixture()?, sched)),
            None => None,
        };
        Ok(Context { cfg, sched, oracle })
    }

    fn seed(&self, role: u64) -> u64 {
        derive_seed(self.cfg.seed, &[role])
    }

    fn oracle(&self) -> Result<&MixtureOracle> {
        self.oracle.as_ref().ok_or_else(|| BenchError::Config("this subcommand needs a `mixture` section".into()))
    }

    fn reward(&self) -> Result<Reward> {
        self.cfg.reward(self.oracle()?.dim())
    }

    /// The oracle diamond map, or the checkpoint named by `map`.
    fn diamond_map(&self) -> Result<Box<dyn PosteriorDiamondMap>> {
        let oracle = self.oracle()?;
        if self.cfg.map == "oracle" {
            return Ok(Box::new(OracleDiamondMap::new(oracle.clone(), self.cfg.inner_steps)?));
        }
        let path = Path::new(&self.cfg.map);
        let map = DistilledDiamondMap::load(path).map_err(|e| match e {
            diamond_core::Error::Io(source) => BenchError::Io { path: path.to_path_buf(), source },
            other => BenchError::Config(format!("{}: {other}", path.display())),
        })?;
        if map.dim() != oracle.dim() {
            return Err(BenchError::Config(format!(
                "checkpoint has dimension {}, mixture has {}",
                map.dim(),
                oracle.dim()
            )));
        }
        if map.scheduler().kind != self.sched.kind {
            return Err(BenchError::Config("checkpoint was trained with a different scheduler kind".into()));
        }
        Ok(Box::new(map))
    }

    fn require_oracle_map(&self, what: &str) -> Result<()> {
        if self.cfg.map != "oracle" {
            return Err(BenchError::Config(format!("{what} needs a flow map; only `--map oracle` provides one")));
        }
        Ok(())
    }

    fn data_samples(&self, n: usize, role: u64) -> Result<Vec<Vector>> {
        let mix = self.oracle()?.mixture();
        Ok(mixture_samples(mix, n, self.seed(role)))
    }

    /// Exact tilt for linear rewards, the data law otherwise.
    fn tilted_target(&self, reward: &Reward) -> Result<(GaussianMixture, bool)> {
        let mix = self.oracle()?.mixture();
        match reward {
            Reward::Linear { c } => Ok((mix.tilt_linear(c)?, true)),
            _ => Ok((mix.clone(), false)),
        }
    }

    fn marginal_draw(&self, t: f64, given: &Option<Vec<f64>>, role: u64) -> Result<Vector> {
        let oracle = self.oracle()?;
        match given {
            Some(x) if x.len() != oracle.dim() => {
                Err(BenchError::Config(format!("state has dimension {}, mixture has {}", x.len(), oracle.dim())))
            }
            Some(x) => Ok(Vector::from_vec(x.clone())),
            None => Ok(oracle.sample_marginal(t, &mut rng::stream(self.seed(role), 0))),
        }
    }

    fn oracle_report(&self, p: &OracleParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let t = p.t;
        let samples = draw_batch(p.n, self.seed(0), |s| Ok(oracle.sample_marginal(t, &mut rng::stream(s, 0))))?;
        let mut metrics = Vec::new();
        for x in samples.iter().take(p.n_report) {
            metrics.push(json!({
                "kind": "point",
                "t": t,
                "x": vector_json(x),
                "log_density": finite_json(oracle.log_marginal(x, t)?),
                "score": vector_json(&oracle.score(x, t)?),
                "denoiser": vector_json(&oracle.denoiser(x, t)?),
                "velocity": vector_json(&oracle.velocity(x, t)?),
            }));
        }
        let marginal = marginal_mixture(oracle.mixture(), &self.sched, t)?;
        metrics.push(json!({
            "kind": "moments",
            "t": t,
            "n": p.n,
            "sample_mean": vector_json(&mean(&samples)),
            "exact_mean": vector_json(&marginal.mean()),
        }));
        let svg =
            plot(&format!("marginal at t = {t}"), &[Series { label: "samples", points: &samples }], Some(&marginal));
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn sample(&self, p: &SampleParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let grid = kernel_grid(self.sched.t_min, p.n_steps);
        let chain_start = |s: u64| oracle.sample_marginal(grid[0], &mut rng::stream(s, 1));
        let seed = self.seed(0);
        let samples = match p.kernel {
            SampleKernel::Euler => draw_batch(p.n, seed, |s| unguided_sample(oracle, p.n_steps, s))?,
            SampleKernel::Diamond | SampleKernel::Naive => {
                let map = self.diamond_map()?;
                let kernel = if p.kernel == SampleKernel::Diamond {
                    StepKernel::DiamondEarlyStop
                } else {
                    StepKernel::NaiveRenoise
                };
                draw_batch(p.n, seed, |s| chained_sample(map.as_ref(), kernel, &chain_start(s), &grid, s))?
            }
            SampleKernel::Reference => draw_batch(p.n, seed, |s| {
                let mut x = chain_start(s);
                for (i, w) in grid.windows(2).enumerate() {
                    x = ddpm_reference_sample(oracle, &x, w[0], w[1], derive_seed(s, &[i as u64]))?;
                }
                Ok(x)
            })?,
        };
        let reward = self.reward()?;
        let data = self.data_samples(p.n.max(2000), 1)?;
        let mut summary = reward_summary(&samples, &reward);
        let fields = summary.as_object_mut().expect("object");
        fields.insert("kernel".into(), json!(p.kernel));
        fields.insert("n".into(), json!(p.n));
        fields.insert("n_steps".into(), json!(p.n_steps));
        fields.insert("sample_mean".into(), vector_json(&mean(&samples)));
        fields.insert("data_mean".into(), vector_json(&oracle.mixture().mean()));
        fields.insert("sliced_w2_to_data".into(), distance(&samples, &data, self.seed(2)));
        let metrics = vec![summary];
        let svg = plot("unguided samples", &[Series { label: "samples", points: &samples }], Some(oracle.mixture()));
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn posterior(&self, p: &PosteriorParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let x_t = self.marginal_draw(p.t, &p.x_t, 1)?;
        let exact = oracle.posterior(&x_t, p.t)?;
        let samples = match p.method {
            PosteriorMethod::Map => posterior_draws(self.diamond_map()?.as_ref(), &x_t, p.t, p.n, self.seed(0))?,
            PosteriorMethod::Exact => mixture_samples(&exact, p.n, self.seed(0)),
        };
        let reference = mixture_samples(&exact, p.n.max(2000), self.seed(2));
        let metrics = vec![json!({
            "kind": "summary",
            "method": p.method,
            "t": p.t,
            "x_t": vector_json(&x_t),
            "n": p.n,
            "sample_mean": vector_json(&mean(&samples)),
            "exact_mean": vector_json(&exact.mean()),
            "sliced_w2_to_exact": distance(&samples, &reference, self.seed(3)),
        })];
        let svg = plot(
            &format!("posterior given x_t at t = {}", p.t),
            &[Series { label: "samples", points: &samples }],
            Some(&exact),
        );
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn ddpm_step(&self, p: &DdpmStepParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let map = self.diamond_map()?;
        let x_t = self.marginal_draw(p.t, &p.x_t, 1)?;
        let (t, tp) = (p.t, p.t_prime);
        let seed = self.seed(0);
        let early = draw_batch(p.n, seed, |s| diamond_ddpm_step(map.as_ref(), &x_t, t, tp, s))?;
        let naive = draw_batch(p.n, seed, |s| naive_renoise_step(map.as_ref(), &x_t, t, tp, s))?;
        let reference = draw_batch(p.n, self.seed(2), |s| ddpm_reference_sample(oracle, &x_t, t, tp, s))?;
        let mut metrics = Vec::new();
        for (name, set) in [("early-stop", &early), ("naive", &naive), ("reference", &reference)] {
            let ks: Vec<Value> = (0..x_t.len())
                .map(|j| {
                    let (stat, p_value) = ks_test_1d(&column(set, j), &column(&reference, j))?;
                    Ok(json!({"statistic": stat, "p_value": p_value}))
                })
                .collect::<Result<_>>()?;
            metrics.push(json!({
                "kind": "kernel",
                "kernel": name,
                "t": t,
                "t_prime": tp,
                "x_t": vector_json(&x_t),
                "mean": pairs_json(&mean_with_se(set)),
                "variance": pairs_json(&variance_with_se(set)),
                "ks_vs_reference": ks,
                "sliced_w2_to_reference": distance(set, &reference, self.seed(3)),
            }));
        }
        let svg = plot(
            &format!("one step from t = {t} to t' = {tp}"),
            &[
                Series { label: "early-stop", points: &early },
                Series { label: "naive", points: &naive },
                Series { label: "reference", points: &reference },
            ],
            None,
        );
        let extra = vec![
            ("samples-naive.csv".to_string(), output::samples_csv(&naive)?),
            ("samples-reference.csv".to_string(), output::samples_csv(&reference)?),
        ];
        Ok(Report { samples: early, metrics, svg, extra })
    }

    fn value(&self, p: &ValueParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let reward = self.reward()?;
        let x = self.marginal_draw(p.t, &p.x, 1)?;
        let t = p.t;
        let (exact_value, exact_grad) = oracle.value_exact(&x, t, &reward)?;
        let mut metrics = Vec::new();
        let map = match p.estimator {
            Estimator::Posterior => Some(self.diamond_map()?),
            Estimator::Weighted => {
                self.require_oracle_map("the weighted estimator")?;
                None
            }
            Estimator::None => return Err(BenchError::Config("`value` needs an estimator other than none".into())),
            _ => None,
        };
        let flow = OracleFlowMap::new(oracle.clone(), self.cfg.inner_steps)?;
        let opts = WeightedOptions::default();
        for i in 0..p.seeds.max(1) {
            let seed = derive_seed(self.seed(0), &[i as u64]);
            let est = match p.estimator {
                Estimator::Posterior => posterior_value_gradient(
                    map.as_deref().expect("map loaded"),
                    &x,
                    t,
                    &reward,
                    p.particles,
                    seed,
                    Sensitivity::Tangent,
                )?,
                Estimator::Weighted => {
                    let mut est =
                        weighted_diamond_gradient(&flow, oracle, &x, t, p.lambda, &reward, p.particles, seed, &opts)?;
                    let value = weighted_diamond_value(
                        &flow,
                        oracle,
                        &x,
                        t,
                        p.lambda,
                        &reward,
                        p.particles,
                        p.probes,
                        derive_seed(seed, &[1]),
                        &opts,
                    )?;
                    est.value = value.value;
                    est.std_error = value.std_error;
                    est
                }
                Estimator::Denoiser => denoiser_value(oracle, &x, t, &reward)?,
                Estimator::Exact => ValueEstimate {
                    value: Some(exact_value),
                    gradient: Some(exact_grad.clone()),
                    gradient_std_error: None,
                    ess: 1.0,
                    n_particles: 0,
                    std_error: None,
                },
                Estimator::None => unreachable!("rejected above"),
            };
            metrics.push(json!({
                "estimator": p.estimator,
                "K": est.n_particles,
                "value": est.value.map(finite_json),
                "grad": est.gradient.as_ref().map(vector_json),
                "grad_stderr": est.gradient_std_error.as_ref().map(vector_json),
                "ess": est.ess,
                "stderr": est.std_error.map(finite_json),
                "seed_index": i,
                "lambda": (p.estimator == Estimator::Weighted).then_some(p.lambda),
                "t": t,
                "x": vector_json(&x),
                "exact_value": exact_value,
                "exact_grad": vector_json(&exact_grad),
            }));
        }
        let posterior = oracle.posterior(&x, t)?;
        let samples = match &map {
            Some(m) => posterior_draws(m.as_ref(), &x, t, p.particles, self.seed(0))?,
            None => mixture_samples(&posterior, p.particles, self.seed(0)),
        };
        let svg = plot(
            &format!("posterior draws at t = {t}"),
            &[Series { label: "draws", points: &samples }],
            Some(&posterior),
        );
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn guide(&self, p: &GuideParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let reward = self.reward()?;
        p.guidance.validate()?;
        let map;
        let flow;
        let gradient = match p.estimator {
            Estimator::None => GuidanceGradient::None,
            Estimator::Exact => GuidanceGradient::Exact(&reward),
            Estimator::Posterior => {
                map = self.diamond_map()?;
                GuidanceGradient::Posterior { map: map.as_ref(), reward: &reward, sensitivity: Sensitivity::Tangent }
            }
            Estimator::Weighted => {
                self.require_oracle_map("weighted guidance")?;
                flow = OracleFlowMap::new(oracle.clone(), self.cfg.inner_steps)?;
                GuidanceGradient::Weighted { flowmap: &flow, reward: &reward, options: WeightedOptions::default() }
            }
            Estimator::Denoiser => {
                return Err(BenchError::Config(
                    "guidance supports estimators exact, posterior, weighted and none".into(),
                ))
            }
        };
        let samples = draw_batch(p.n, self.seed(0), |s| guide(oracle, &gradient, &p.guidance, s))?;
        let metrics =
            self.alignment_summary(&samples, &reward, json!({"estimator": p.estimator, "guidance": p.guidance}))?;
        let svg = self.alignment_plot("guided samples", &samples, &reward)?;
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn smc(&self, p: &diamond_core::align::SmcConfig) -> Result<Report> {
        let oracle = self.oracle()?;
        let reward = self.reward()?;
        let map = self.diamond_map()?;
        let run = smc(oracle, map.as_ref(), &reward, p, self.seed(0))?;
        let mut metrics: Vec<Value> = run
            .history
            .iter()
            .map(|h| {
                json!({
                    "kind": "step",
                    "t": h.t,
                    "ess": h.ess,
                    "resampled": h.resampled,
                    "mean_value": finite_json(h.mean_value),
                })
            })
            .collect();
        metrics.extend(self.alignment_summary(&run.particles, &reward, json!({"smc": p}))?);
        let svg = self.alignment_plot("SMC particles", &run.particles, &reward)?;
        Ok(Report { samples: run.particles, metrics, svg, extra: Vec::new() })
    }

    fn search(&self, p: &SearchParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let reward = self.reward()?;
        let map = self.diamond_map()?;
        let cfg = p.smc_config();
        let runs = (0..p.runs)
            .map(|i| search(oracle, map.as_ref(), &reward, &cfg, derive_seed(self.seed(0), &[i as u64])))
            .collect::<diamond_core::Result<Vec<_>>>()?;
        let mut metrics = Vec::new();
        for k in 0..p.n_steps {
            let best: Vec<f64> = runs.iter().map(|r| r.steps[k].potentials[r.steps[k].chosen]).collect();
            metrics.push(json!({
                "kind": "step",
                "t": runs.first().map(|r| r.steps[k].t),
                "mean_chosen_potential": finite_json(best.iter().sum::<f64>() / best.len().max(1) as f64),
            }));
        }
        let samples: Vec<Vector> = runs.into_iter().map(|r| r.state).collect();
        metrics.extend(self.alignment_summary(&samples, &reward, json!({"search": p}))?);
        let svg = self.alignment_plot("search terminals", &samples, &reward)?;
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    /// Best-of-N with a reward-versus-budget curve. The candidates of each
    /// sample are the draws `best_of_n` would make, so every prefix is the
    /// best-of-N result at that budget.
    fn bon(&self, p: &BonParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let reward = self.reward()?;
        if p.budget == 0 {
            return Err(BenchError::Config("bon budget must be at least 1".into()));
        }
        let map = self.diamond_map()?;
        let sampler = OneStepSampler { oracle, map: map.as_ref() };
        let per_sample = sampler.evaluations_per_sample();
        let seeds: Vec<u64> = (0..p.n).map(|i| derive_seed(self.seed(0), &[i as u64])).collect();
        let candidates = seeds
            .iter()
            .map(|&s| {
                let draws = draw_batch(p.budget, s, |c| sampler.sample(c))?;
                Ok(draws.into_iter().map(|z| (reward.eval(&z), z)).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut metrics = Vec::new();
        let mut budget = 1;
        while budget <= p.budget {
            let best: Vec<f64> = candidates
                .iter()
                .map(|c| c[..budget].iter().map(|(r, _)| *r).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            metrics.push(json!({
                "kind": "curve",
                "n": budget,
                "nfe": budget * per_sample,
                "mean_reward": best.iter().sum::<f64>() / best.len().max(1) as f64,
            }));
            if budget == p.budget {
                break;
            }
            budget = (budget * 2).min(p.budget);
        }
        let samples: Vec<Vector> = candidates
            .into_iter()
            .map(|c| {
                let rewards: Vec<f64> = c.iter().map(|(r, _)| *r).collect();
                c.into_iter().nth(diamond_core::align::argmax(&rewards)).map(|(_, z)| z).expect("budget >= 1")
            })
            .collect();
        metrics.extend(self.alignment_summary(&samples, &reward, json!({"budget": p.budget}))?);
        let svg = self.alignment_plot("best-of-n samples", &samples, &reward)?;
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }

    fn alignment_summary(&self, samples: &[Vector], reward: &Reward, settings: Value) -> Result<Vec<Value>> {
        let (target, exact) = self.tilted_target(reward)?;
        let reference = mixture_samples(&target, samples.len().max(2000), self.seed(2));
        let data = self.data_samples(samples.len().max(2000), 4)?;
        let mut summary = reward_summary(samples, reward);
        let fields = summary.as_object_mut().expect("object");
        fields.insert("settings".into(), settings);
        fields.insert("n".into(), json!(samples.len()));
        fields.insert("sliced_w2_to_data".into(), distance(samples, &data, self.seed(3)));
        if exact {
            fields.insert("sliced_w2_to_tilted".into(), distance(samples, &reference, self.seed(3)));
            fields.insert("tilted_mean_reward".into(), finite_json(reward.eval(&target.mean())));
        }
        Ok(vec![summary])
    }

    fn alignment_plot(&self, title: &str, samples: &[Vector], reward: &Reward) -> Result<String> {
        let (target, _) = self.tilted_target(reward)?;
        Ok(plot(title, &[Series { label: "samples", points: samples }], Some(&target)))
    }

    fn distill(&self, p: &DistillParams) -> Result<Report> {
        let oracle = self.oracle()?;
        let field = GlassField::new(oracle.clone());
        let arch = Architecture::new(oracle.dim(), p.hidden.clone(), p.n_freq)?;
        let train = TrainConfig {
            n_iters: p.n_iters,
            batch: p.batch,
            lr: p.lr,
            teacher_steps: p.teacher_steps,
            sampling: match p.sampling {
                TimeSamplingSpec::Triangle => TimeSampling::Triangle,
                TimeSamplingSpec::Anchored => TimeSampling::Anchored,
            },
            seed: self.seed(0),
        };
        let (net, report) = rollout_regression_train(&field, SmallNet::new(arch, self.seed(1)), &train)?;
        let student = DistilledDiamondMap::new(net, self.sched);
        let window = (p.n_iters / 100).max(1);
        let mut metrics: Vec<Value> = report
            .windowed(window)
            .iter()
            .enumerate()
            .map(|(k, loss)| json!({"kind": "loss", "iteration": (k + 1) * window, "loss": finite_json(*loss)}))
            .collect();

        let mut rng = rng::stream(self.seed(2), 0);
        for k in 0..p.eval_pairs {
            let t: f64 = rand::Rng::random_range(&mut rng, 0.1..0.9);
            let x_t = oracle.sample_marginal(t, &mut rng);
            let ours = posterior_draws(&student, &x_t, t, p.eval_samples, derive_seed(self.seed(3), &[k as u64]))?;
            let exact =
                mixture_samples(&oracle.posterior(&x_t, t)?, p.eval_samples, derive_seed(self.seed(4), &[k as u64]));
            metrics.push(json!({
                "kind": "held-out",
                "t": t,
                "x_t": vector_json(&x_t),
                "one_step_sliced_w2": distance(&ours, &exact, self.seed(5)),
            }));
        }

        let grid = kernel_grid(self.sched.t_min, p.chain_steps);
        let chain = |kernel| {
            draw_batch(p.eval_samples, self.seed(6), |s| {
                let x0 = oracle.sample_marginal(grid[0], &mut rng::stream(s, 1));
                chained_sample(&student, kernel, &x0, &grid, s)
            })
        };
        let early = chain(StepKernel::DiamondEarlyStop)?;
        let naive = chain(StepKernel::NaiveRenoise)?;
        let data = self.data_samples(p.eval_samples.max(2000), 7)?;
        metrics.push(json!({
            "kind": "chained",
            "chain_steps": p.chain_steps,
            "early_stop_sliced_w2": distance(&early, &data, self.seed(8)),
            "naive_sliced_w2": distance(&naive, &data, self.seed(8)),
        }));
        let svg = plot(
            "distilled map, chained sampling",
            &[Series { label: "early-stop", points: &early }, Series { label: "naive", points: &naive }],
            Some(oracle.mixture()),
        );
        let extra = vec![("model.ckpt".to_string(), student.to_bytes())];
        Ok(Report { samples: early, metrics, svg, extra })
    }

    fn figure(&self, p: &ReportParams) -> Result<Report> {
        match p.figure {
            Figure::Fig2 => self.fig2(p.grid),
        }
    }

    /// Early-stop time `r*(t, t')` over the upper triangle of `(0, 1]^2`.
    fn fig2(&self, n: usize) -> Result<Report> {
        if n < 2 {
            return Err(BenchError::Config("report grid needs at least 2 points".into()));
        }
        let ts: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let tps: Vec<f64> = (0..n).map(|k| (k + 1) as f64 / n as f64).collect();
        let surface = r_star_surface(&self.sched, &ts, &tps);
        let mut samples = Vec::new();
        let mut diagonal = Vec::new();
        let mut top_error: f64 = 0.0;
        let mut monotone = true;
        for (i, &t) in ts.iter().enumerate() {
            let mut last = f64::NEG_INFINITY;
            for (j, &tp) in tps.iter().enumerate() {
                let r = surface[(i, j)];
                if !r.is_finite() {
                    continue;
                }
                samples.push(Vector::from_vec(vec![t, tp, r]));
                if tp - t < 1.0 / n as f64 {
                    diagonal.push(r);
                }
                if j + 1 == n {
                    top_error = top_error.max((r - 1.0).abs());
                }
                monotone &= r >= last;
                last = r;
            }
        }
        let metrics = vec![json!({
            "kind": "fig2",
            "grid": n,
            "scheduler": self.cfg.scheduler,
            "cells": samples.len(),
            "mean_r_star_next_to_diagonal": diagonal.iter().sum::<f64>() / diagonal.len().max(1) as f64,
            "max_deviation_from_one_at_t_prime_one": top_error,
            "nondecreasing_in_t_prime": monotone,
        })];
        let svg = svg::heatmap("early-stop time r*(t, t')", "t'", "t", &tps, &ts, &surface);
        Ok(Report { samples, metrics, svg, extra: Vec::new() })
    }
}

/// `p_t` of a mixture: component means scaled by `alpha_t`, covariances
/// `alpha_t^2 Sigma + sigma_t^2 I`.
fn marginal_mixture(mix: &GaussianMixture, sched: &Scheduler, t: f64) -> Result<GaussianMixture> {
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    let d = mix.dim();
    let means = mix.means().into_iter().map(|m| a * m).collect();
    let covs = mix.covs().into_iter().map(|c| a * a * c + s * s * Matrix::identity(d, d)).collect();
    Ok(GaussianMixture::new(mix.weights(), means, covs)?)
}

/// Marginal of a mixture on its first two coordinates.
fn leading_plane(mix: &GaussianMixture) -> Option<GaussianMixture> {
    let means = mix.means().into_iter().map(|m| m.rows(0, 2).into_owned()).collect();
    let covs = mix.covs().into_iter().map(|c| c.view((0, 0), (2, 2)).into_owned()).collect();
    GaussianMixture::new(mix.weights(), means, covs).ok()
}

fn plot(title: &str, series: &[Series], target: Option<&GaussianMixture>) -> String {
    let d = series.first().and_then(|s| s.points.first()).map_or(2, |p| p.len());
    if d == 1 {
        let density = target.map(|m| move |x: f64| m.log_density(&Vector::from_vec(vec![x])).map_or(0.0, f64::exp));
        match &density {
            Some(f) => svg::histogram(title, series, Some(f)),
            None => svg::histogram(title, series, None),
        }
    } else {
        let plane = target.and_then(leading_plane);
        let density = plane
            .as_ref()
            .map(|m| move |x: f64, y: f64| m.log_density(&Vector::from_vec(vec![x, y])).map_or(0.0, f64::exp));
        match &density {
            Some(f) => svg::scatter(title, series, Some(f)),
            None => svg::scatter(title, series, None),
        }
    }
}

fn mixture_samples(mix: &GaussianMixture, n: usize, seed: u64) -> Vec<Vector> {
    let mut rng = rng::stream(seed, 0);
    (0..n).map(|_| mix.sample(&mut rng)).collect()
}

fn column(samples: &[Vector], j: usize) -> Vec<f64> {
    samples.iter().map(|x| x[j]).collect()
}

/// Sliced-W2, or null when either set is too small to compare.
fn distance(a: &[Vector], b: &[Vector], seed: u64) -> Value {
    sliced_w2(a, b, PROJECTIONS, seed).map_or(Value::Null, finite_json)
}

fn pairs_json(pairs: &[(f64, f64)]) -> Value {
    pairs.iter().map(|(v, se)| json!({"value": finite_json(*v), "stderr": finite_json(*se)})).collect()
}

fn reward_summary(samples: &[Vector], reward: &Reward) -> Value {
    let rewards: Vec<f64> = samples.iter().map(|z| reward.eval(z)).collect();
    let n = rewards.len() as f64;
    let m = rewards.iter().sum::<f64>() / n.max(1.0);
    let var = rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    json!({
        "kind": "summary",
        "mean_reward": finite_json(m),
        "mean_reward_stderr": finite_json((var / n.max(1.0)).sqrt()),
    })
}
