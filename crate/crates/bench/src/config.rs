//! Experiment configuration: what to sample from, what to reward and which
//! algorithm to run. Unknown keys are rejected everywhere.

use std::path::PathBuf;

use diamond_core::align::{GuidanceConfig, PotentialMode, Resampling, SmcConfig};
use diamond_core::mixture::GaussianMixture;
use diamond_core::reward::Reward;
use diamond_core::sched::{ScheduleKind, Scheduler, DEFAULT_T_MAX, DEFAULT_T_MIN};
use diamond_core::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::BenchError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scheduler: SchedulerSpec,
    /// Data distribution. Only `report` runs without one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<MixtureSpec>,
    /// Defaults to the zero reward.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<RewardSpec>,
    /// Hyperparameters of the subcommand. Defaults apply when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// RK4 steps of every oracle flow and diamond map.
    #[serde(default = "default_inner_steps")]
    pub inner_steps: usize,
    /// `"oracle"` or the path of a distilled checkpoint.
    #[serde(default = "default_map")]
    pub map: String,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

fn default_inner_steps() -> usize {
    32
}

fn default_map() -> String {
    "oracle".into()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheduler: SchedulerSpec::default(),
            mixture: None,
            reward: None,
            algorithm: None,
            seed: 0,
            output: default_output(),
            inner_steps: default_inner_steps(),
            map: default_map(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        serde_json::from_str(text).map_err(|e| BenchError::Config(format!("invalid config: {e}")))
    }

    pub fn scheduler(&self) -> Result<Scheduler, BenchError> {
        self.scheduler.build()
    }

    pub fn mixture(&self) -> Result<GaussianMixture, BenchError> {
        self.mixture
            .as_ref()
            .ok_or_else(|| BenchError::Config("this subcommand needs a `mixture` section".into()))?
            .build()
    }

    pub fn reward(&self, dim: usize) -> Result<Reward, BenchError> {
        let reward = match &self.reward {
            None => Reward::zero(dim),
            Some(reward) => reward.build(dim)?,
        };
        if reward.dim() != dim {
            return Err(BenchError::Config(format!("reward has dimension {}, mixture has {dim}", reward.dim())));
        }
        Ok(reward)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerSpec {
    pub kind: ScheduleKind,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn default_t_min() -> f64 {
    DEFAULT_T_MIN
}

fn default_t_max() -> f64 {
    DEFAULT_T_MAX
}

impl Default for SchedulerSpec {
    fn default() -> Self {
        SchedulerSpec { kind: ScheduleKind::Linear, t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX }
    }
}

impl SchedulerSpec {
    pub fn build(&self) -> Result<Scheduler, BenchError> {
        Scheduler::with_clamp(self.kind, self.t_min, self.t_max).map_err(|e| BenchError::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl MixtureSpec {
    pub fn build(&self) -> Result<GaussianMixture, BenchError> {
        let means = self.means.iter().map(|m| Vector::from_vec(m.clone())).collect();
        let covs = self.covs.iter().map(|c| matrix(c, "covariance")).collect::<Result<Vec<_>, _>>()?;
        GaussianMixture::new(self.weights.clone(), means, covs).map_err(|e| BenchError::Config(e.to_string()))
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<Matrix, BenchError> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(BenchError::Config(format!("{what} must be a square matrix")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RewardSpec {
    Zero,
    /// `c^T z`.
    Linear {
        c: Vec<f64>,
    },
    /// `z^T A z / 2 + b^T z`.
    Quadratic {
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
    },
    /// `-scale ||z - target||^2 / 2`.
    Radial {
        target: Vec<f64>,
        scale: f64,
    },
}

impl RewardSpec {
    pub fn build(&self, dim: usize) -> Result<Reward, BenchError> {
        let config = |e: diamond_core::Error| BenchError::Config(e.to_string());
        match self {
            RewardSpec::Zero => Ok(Reward::zero(dim)),
            RewardSpec::Linear { c } => Ok(Reward::linear(Vector::from_vec(c.clone()))),
            RewardSpec::Quadratic { a, b } => {
                Reward::quadratic(matrix(a, "quadratic reward matrix")?, Vector::from_vec(b.clone())).map_err(config)
            }
            RewardSpec::Radial { target, scale } => {
                Reward::radial(Vector::from_vec(target.clone()), *scale).map_err(config)
            }
        }
    }
}

/// Hyperparameters, tagged by subcommand name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum AlgorithmSpec {
    Oracle(OracleParams),
    Sample(SampleParams),
    Posterior(PosteriorParams),
    DdpmStep(DdpmStepParams),
    Value(ValueParams),
    Guide(GuideParams),
    Smc(SmcConfig),
    Search(SearchParams),
    Bon(BonParams),
    Distill(DistillParams),
    Report(ReportParams),
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::Oracle(_) => "oracle",
            AlgorithmSpec::Sample(_) => "sample",
            AlgorithmSpec::Posterior(_) => "posterior",
            AlgorithmSpec::DdpmStep(_) => "ddpm-step",
            AlgorithmSpec::Value(_) => "value",
            AlgorithmSpec::Guide(_) => "guide",
            AlgorithmSpec::Smc(_) => "smc",
            AlgorithmSpec::Search(_) => "search",
            AlgorithmSpec::Bon(_) => "bon",
            AlgorithmSpec::Distill(_) => "distill",
            AlgorithmSpec::Report(_) => "report",
        }
    }

    /// Defaults for a subcommand name.
    pub fn default_for(name: &str) -> Option<Self> {
        Some(match name {
            "oracle" => AlgorithmSpec::Oracle(Default::default()),
            "sample" => AlgorithmSpec::Sample(Default::default()),
            "posterior" => AlgorithmSpec::Posterior(Default::default()),
            "ddpm-step" => AlgorithmSpec::DdpmStep(Default::default()),
            "value" => AlgorithmSpec::Value(Default::default()),
            "guide" => AlgorithmSpec::Guide(Default::default()),
            "smc" => AlgorithmSpec::Smc(Default::default()),
            "search" => AlgorithmSpec::Search(Default::default()),
            "bon" => AlgorithmSpec::Bon(Default::default()),
            "distill" => AlgorithmSpec::Distill(Default::default()),
            "report" => AlgorithmSpec::Report(Default::default()),
            _ => return None,
        })
    }
}

/// Draws from the noisy marginal at `t` and reports oracle quantities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleParams {
    pub t: f64,
    pub n: usize,
    /// Samples whose density, score and denoiser are written as metrics.
    pub n_report: usize,
}

impl Default for OracleParams {
    fn default() -> Self {
        OracleParams { t: 0.5, n: 1000, n_report: 16 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKernel {
    /// Euler integration of the marginal velocity.
    #[default]
    Euler,
    /// Chained early-stop DDPM steps through the diamond map.
    Diamond,
    /// Chained naive renoise steps through the diamond map.
    Naive,
    /// Chained exact DDPM transitions.
    Reference,
}

/// Unguided sampling from the data distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleParams {
    pub n: usize,
    pub n_steps: usize,
    pub kernel: SampleKernel,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams { n: 1000, n_steps: 100, kernel: SampleKernel::Euler }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorMethod {
    /// Endpoints of the inner posterior flow.
    #[default]
    Map,
    /// Exact mixture posterior draws.
    Exact,
}

/// Posterior draws given one noisy observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PosteriorParams {
    pub n: usize,
    pub t: f64,
    /// Observation; drawn from the marginal at `t` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_t: Option<Vec<f64>>,
    pub method: PosteriorMethod,
}

impl Default for PosteriorParams {
    fn default() -> Self {
        PosteriorParams { n: 1000, t: 0.5, x_t: None, method: PosteriorMethod::Map }
    }
}

/// One transition from `t` to `t_prime` with every kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpmStepParams {
    pub n: usize,
    pub t: f64,
    pub t_prime: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x_t: Option<Vec<f64>>,
}

impl Default for DdpmStepParams {
    fn default() -> Self {
        DdpmStepParams { n: 1000, t: 0.3, t_prime: 0.5, x_t: None }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// Log-mean-exp over posterior draws of the diamond map.
    #[default]
    Posterior,
    /// Renoise-and-flow importance weights.
    Weighted,
    /// Reward of the denoiser.
    Denoiser,
    /// Closed form.
    Exact,
    /// No guidance.
    None,
}

/// Value and gradient estimates at one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValueParams {
    pub t: f64,
    /// State; drawn from the marginal at `t` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    pub estimator: Estimator,
    /// Inner draws `K` or renoised particles `N`.
    pub particles: usize,
    /// SNR shift of the weighted estimator.
    pub lambda: f64,
    /// Independent repetitions, one JSONL row each.
    pub seeds: usize,
    /// Hutchinson probes per node of the weighted value offset.
    pub probes: usize,
}

impl Default for ValueParams {
    fn default() -> Self {
        ValueParams {
            t: 0.5,
            x: None,
            estimator: Estimator::Posterior,
            particles: 256,
            lambda: 20.0,
            seeds: 4,
            probes: 16,
        }
    }
}

/// Guided sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuideParams {
    pub n: usize,
    pub estimator: Estimator,
    pub guidance: GuidanceConfig,
}

impl Default for GuideParams {
    fn default() -> Self {
        GuideParams { n: 256, estimator: Estimator::Posterior, guidance: GuidanceConfig::default() }
    }
}

/// Independent greedy search runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    /// Terminal samples, one search run each.
    pub runs: usize,
    pub particles: usize,
    pub n_steps: usize,
    pub inner_samples: usize,
    pub mode: PotentialMode,
}

impl Default for SearchParams {
    fn default() -> Self {
        SearchParams { runs: 64, particles: 16, n_steps: 16, inner_samples: 64, mode: PotentialMode::PerStepReset }
    }
}

impl SearchParams {
    pub fn smc_config(&self) -> SmcConfig {
        SmcConfig {
            particles: self.particles,
            n_steps: self.n_steps,
            inner_samples: self.inner_samples,
            mode: self.mode,
            resampling: Resampling::Never,
        }
    }
}

/// Best-of-N over one-step posterior samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BonParams {
    /// Terminal samples written.
    pub n: usize,
    /// Candidates per terminal sample.
    pub budget: usize,
}

impl Default for BonParams {
    fn default() -> Self {
        BonParams { n: 256, budget: 16 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSamplingSpec {
    Triangle,
    #[default]
    Anchored,
}

/// Trains a small diamond map on the oracle teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillParams {
    pub hidden: Vec<usize>,
    pub n_freq: usize,
    pub n_iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub teacher_steps: usize,
    pub sampling: TimeSamplingSpec,
    /// Held-out observations for the one-step check.
    pub eval_pairs: usize,
    /// Samples per held-out observation and per chained run.
    pub eval_samples: usize,
    /// Kernel steps of the chained samplers.
    pub chain_steps: usize,
}

impl Default for DistillParams {
    fn default() -> Self {
        DistillParams {
            hidden: vec![128, 128, 128],
            n_freq: 4,
            n_iters: 20_000,
            batch: 64,
            lr: 1e-3,
            teacher_steps: 16,
            sampling: TimeSamplingSpec::Anchored,
            eval_pairs: 10,
            eval_samples: 2000,
            chain_steps: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Figure {
    /// Heatmap of the early-stop time over `(t, t')`.
    #[default]
    Fig2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportParams {
    pub figure: Figure,
    /// Grid points per axis.
    pub grid: usize,
}

impl Default for ReportParams {
    fn default() -> Self {
        ReportParams { figure: Figure::Fig2, grid: 64 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"mixture": {"weights": [1.0], "means": [[0.0]], "covs": [[[1.0]]]}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.scheduler, SchedulerSpec::default());
        assert_eq!(cfg.inner_steps, 32);
        assert_eq!(cfg.map, "oracle");
        assert_eq!(cfg.mixture().unwrap().dim(), 1);
        assert_eq!(cfg.reward(1).unwrap(), Reward::zero(1));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"seeed": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"scheduler": {"kind": "linear", "tmin": 0.1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"reward": {"kind": "linear", "c": [1.0], "d": 2}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"algorithm": {"name": "sample", "steps": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"algorithm": {"name": "smc", "particle": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"algorithm": {"name": "walk"}}"#).is_err());
    }

    #[test]
    fn algorithm_sections_parse() {
        let cfg = ExperimentConfig::from_json(
            r#"{"algorithm": {"name": "guide", "n": 3, "guidance": {"n_steps": 10, "lambda": 4.0}}}"#,
        )
        .unwrap();
        let Some(AlgorithmSpec::Guide(g)) = cfg.algorithm else { panic!("wrong variant") };
        assert_eq!((g.n, g.guidance.n_steps, g.guidance.lambda, g.guidance.particles), (3, 10, 4.0, 4));
        let cfg = ExperimentConfig::from_json(r#"{"algorithm": {"name": "ddpm-step", "t_prime": 0.9}}"#).unwrap();
        assert_eq!(cfg.algorithm.unwrap().name(), "ddpm-step");
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        cfg.reward = Some(RewardSpec::Quadratic { a: vec![vec![-1.0]], b: vec![0.5] });
        cfg.algorithm = AlgorithmSpec::default_for("value");
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn every_subcommand_has_defaults() {
        for name in crate::SUBCOMMANDS {
            assert_eq!(AlgorithmSpec::default_for(name).unwrap().name(), *name);
        }
    }

    #[test]
    fn bad_values_are_config_errors() {
        let cfg = ExperimentConfig::from_json(
            r#"{"mixture": {"weights": [1.0], "means": [[0.0, 0.0]], "covs": [[[1.0, 2.0], [2.0, 1.0]]]}}"#,
        )
        .unwrap();
        assert!(matches!(cfg.mixture(), Err(BenchError::Config(_))));
        let cfg = ExperimentConfig::from_json(r#"{"scheduler": {"kind": "vp", "t_min": 0.6, "t_max": 0.4}}"#).unwrap();
        assert!(matches!(cfg.scheduler(), Err(BenchError::Config(_))));
        let cfg = ExperimentConfig::from_json(r#"{"reward": {"kind": "linear", "c": [1.0, 2.0]}}"#).unwrap();
        assert!(matches!(cfg.reward(3), Err(BenchError::Config(_))));
    }
}
