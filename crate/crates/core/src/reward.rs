//! Rewards and value-function estimators.
//!
//! The value of a noisy state is `V_t(x_t) = log E[exp r(z) | x_t]` over the
//! posterior of clean data. Estimators here sample that posterior through a
//! posterior diamond map, reweight a deterministic flow map after renoising,
//! or plug in the denoiser. All Monte Carlo estimates carry jackknife
//! standard errors and the effective sample size of their weights.

use rayon::prelude::*;

use crate::error::{check_dim, Error};
use crate::maps::{renoise_coeffs, FlowMap, PosteriorDiamondMap};
use crate::mixture::{log_sum_exp, MarginalField, MixtureOracle};
use crate::rng;
use crate::{Matrix, Result, Vector};

/// A scalar reward on clean data.
pub trait RewardFn: Sync {
    fn eval(&self, z: &Vector) -> f64;

    fn grad(&self, z: &Vector) -> Vector;

    /// True when the reward is identically zero.
    fn is_zero(&self) -> bool {
        false
    }
}

/// Closed-form reward families.
#[derive(Clone, Debug, PartialEq)]
pub enum Reward {
    /// `c^T z`.
    Linear { c: Vector },
    /// `z^T A z / 2 + b^T z` with `A` symmetric.
    Quadratic { a: Matrix, b: Vector },
    /// `-scale ||z - target||^2 / 2`.
    Radial { target: Vector, scale: f64 },
}

impl Reward {
    pub fn linear(c: Vector) -> Self {
        Reward::Linear { c }
    }

    pub fn zero(dim: usize) -> Self {
        Reward::Linear { c: Vector::zeros(dim) }
    }

    pub fn quadratic(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() || a.ncols() != b.len() {
            return Err(Error::InvalidArgument("quadratic reward shape mismatch".into()));
        }
        if (&a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
            return Err(Error::InvalidArgument("quadratic reward matrix must be symmetric".into()));
        }
        Ok(Reward::Quadratic { a, b })
    }

    pub fn radial(target: Vector, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!("radial scale must be positive, got {scale}")));
        }
        Ok(Reward::Radial { target, scale })
    }

    pub fn dim(&self) -> usize {
        match self {
            Reward::Linear { c } => c.len(),
            Reward::Quadratic { b, .. } => b.len(),
            Reward::Radial { target, .. } => target.len(),
        }
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        check_dim(dim, self.dim())
    }

    /// `(A, b, c0)` with `r(z) = z^T A z / 2 + b^T z + c0`.
    pub fn quadratic_form(&self) -> (Matrix, Vector, f64) {
        let d = self.dim();
        match self {
            Reward::Linear { c } => (Matrix::zeros(d, d), c.clone(), 0.0),
            Reward::Quadratic { a, b } => (a.clone(), b.clone(), 0.0),
            Reward::Radial { target, scale } => {
                (-*scale * Matrix::identity(d, d), *scale * target, -0.5 * scale * target.norm_squared())
            }
        }
    }
}

impl RewardFn for Reward {
    fn eval(&self, z: &Vector) -> f64 {
        match self {
            Reward::Linear { c } => c.dot(z),
            Reward::Quadratic { a, b } => 0.5 * z.dot(&(a * z)) + b.dot(z),
            Reward::Radial { target, scale } => -0.5 * scale * (z - target).norm_squared(),
        }
    }

    fn grad(&self, z: &Vector) -> Vector {
        match self {
            Reward::Linear { c } => c.clone(),
            Reward::Quadratic { a, b } => a * z + b,
            Reward::Radial { target, scale } => -*scale * (z - target),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Reward::Linear { c } if c.iter().all(|v| *v == 0.0))
    }
}

/// Monte Carlo estimate of a value and/or its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueEstimate {
    pub value: Option<f64>,
    pub gradient: Option<Vector>,
    /// Per-coordinate jackknife standard error of `gradient`.
    pub gradient_std_error: Option<Vector>,
    /// Normalised effective sample size of the weights, in `(0, 1]`.
    pub ess: f64,
    pub n_particles: usize,
    /// Jackknife standard error of `value`.
    pub std_error: Option<f64>,
}

impl ValueEstimate {
    fn exact(value: f64, gradient: Vector, n: usize) -> Self {
        let d = gradient.len();
        ValueEstimate {
            value: Some(value),
            gradient: Some(gradient),
            gradient_std_error: Some(Vector::zeros(d)),
            ess: 1.0,
            n_particles: n,
            std_error: Some(0.0),
        }
    }
}

/// One renoised particle of the weighted estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedParticle {
    pub eps: Vector,
    /// Renoised state at the earlier time.
    pub x_tp: Vector,
    /// Flow-map image of `x_tp` at time one.
    pub z: Vector,
    /// `r(z) - ||x_t - alpha_t z||^2 / (2 sigma_t^2)`.
    pub r_local: f64,
    /// Path integral of the earlier score from `x_t` to `x_tp`.
    pub gamma: f64,
    /// Log-weight `r_local + gamma + ||eps||^2 / 2`.
    pub v: f64,
    /// `(alpha_{t'} / alpha_t) score_{t'}(x_tp) - score_t(x_t)`.
    pub delta_score: Vector,
    /// Gradient of `r_local` in `x_t`.
    pub grad_local: Vector,
}

/// How gradients in `x_t` are propagated through a map.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sensitivity {
    /// Forward tangents of the map.
    #[default]
    Tangent,
    /// Central differences with common random numbers.
    FiniteDifference,
}

/// Quadrature for the score path integral `gamma`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GammaQuadrature {
    #[default]
    Trapezoid,
    Midpoint,
}

/// Knobs of the weighted estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedOptions {
    pub quadrature: GammaQuadrature,
    pub sensitivity: Sensitivity,
    /// Trapezoid nodes over `[t', t]` for the log-density offset.
    pub offset_nodes: usize,
}

impl Default for WeightedOptions {
    fn default() -> Self {
        WeightedOptions { quadrature: GammaQuadrature::Trapezoid, sensitivity: Sensitivity::Tangent, offset_nodes: 32 }
    }
}

const FD_STEP: f64 = 1e-5;

/// Normalised effective sample size `(sum w)^2 / (n sum w^2)` of log-weights.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::InvalidArgument("effective sample size of no weights".into()));
    }
    if log_weights.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::InvalidArgument("log-weights must be finite or -inf".into()));
    }
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument("all log-weights are -inf".into()));
    }
    let sum_sq: f64 = log_weights.iter().map(|l| (2.0 * (l - lse)).exp()).sum();
    Ok((1.0 / (log_weights.len() as f64 * sum_sq)).min(1.0))
}

/// Softmax of log-weights.
pub fn softmax(log_weights: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(log_weights);
    log_weights.iter().map(|l| (l - lse).exp()).collect()
}

/// `log mean exp` of `values` with its jackknife standard error and the ESS
/// of the implied weights. Leave-one-out sums are formed in `O(n)` as
/// `log S + log1p(-w_i)`.
pub fn jackknife_log_mean_exp(values: &[f64]) -> Result<(f64, f64, f64)> {
    let n = values.len();
    let e = ess(values)?;
    let lse = log_sum_exp(values);
    let value = lse - (n as f64).ln();
    if n < 2 {
        return Ok((value, f64::NAN, e));
    }
    let loo_norm = ((n - 1) as f64).ln();
    let loo: Vec<f64> = values.iter().map(|v| lse + (-(v - lse).exp()).ln_1p() - loo_norm).collect();
    Ok((value, jackknife_se(&loo), e))
}

/// Jackknife standard error from leave-one-out replicates.
fn jackknife_se(loo: &[f64]) -> f64 {
    let n = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / n;
    ((n - 1.0) / n * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
}

/// Softmax-weighted average of `grads` under `log_weights`, with per-coordinate
/// jackknife standard errors from `G_{-i} = (G - w_i g_i) / (1 - w_i)`.
fn weighted_gradient(log_weights: &[f64], grads: &[Vector]) -> (Vector, Vector) {
    let d = grads[0].len();
    let w = softmax(log_weights);
    let mut g = Vector::zeros(d);
    for (wi, gi) in w.iter().zip(grads) {
        g.axpy(*wi, gi, 1.0);
    }
    if grads.len() < 2 {
        return (g, Vector::from_element(d, f64::NAN));
    }
    let se = Vector::from_fn(d, |j, _| {
        let loo: Vec<f64> = w.iter().zip(grads).map(|(wi, gi)| (g[j] - wi * gi[j]) / (1.0 - wi)).collect();
        jackknife_se(&loo)
    });
    (g, se)
}

fn require_particles(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidArgument("need at least one particle".into()));
    }
    Ok(())
}

/// Inner noise for particle `k` under `seed`.
fn inner_noise(seed: u64, k: usize, dim: usize) -> Vector {
    let mut rng = rng::stream(seed, k as u64);
    rng::std_normal_vector(&mut rng, dim)
}

/// Posterior draws through a diamond map: `z_k = X_{0,1}(x_bar_k | x_t, t)`.
pub fn posterior_draws(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    k: usize,
    seed: u64,
) -> Result<Vec<Vector>> {
    let d = map.dim();
    (0..k).into_par_iter().map(|i| map.apply(&inner_noise(seed, i, d), 0.0, 1.0, x_t, t)).collect()
}

/// Value estimate `log (1/K) sum_k exp r(z_k)` over posterior diamond draws.
///
/// At `sigma_t = 0` the posterior is the point `x_t / alpha_t` and the value is
/// returned exactly.
pub fn posterior_value(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    reward: &dyn RewardFn,
    k: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    require_particles(k)?;
    check_dim(map.dim(), x_t.len())?;
    if let Some(exact) = trivial_value(map, x_t, t, reward, k) {
        return Ok(exact);
    }
    let rewards: Vec<f64> = posterior_draws(map, x_t, t, k, seed)?.iter().map(|z| reward.eval(z)).collect();
    let (value, se, e) = jackknife_log_mean_exp(&rewards)?;
    Ok(ValueEstimate {
        value: Some(value),
        gradient: None,
        gradient_std_error: None,
        ess: e,
        n_particles: k,
        std_error: Some(se),
    })
}

fn trivial_value(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    reward: &dyn RewardFn,
    k: usize,
) -> Option<ValueEstimate> {
    let d = x_t.len();
    if reward.is_zero() {
        return Some(ValueEstimate::exact(0.0, Vector::zeros(d), k));
    }
    let sched = map.scheduler();
    if sched.sigma(t) == 0.0 && sched.alpha(t) > 0.0 {
        let a = sched.alpha(t);
        let z = x_t / a;
        return Some(ValueEstimate::exact(reward.eval(&z), reward.grad(&z) / a, k));
    }
    None
}

/// Value and its gradient in `x_t`: softmax-weighted pullbacks of the reward
/// gradient through the diamond map.
pub fn posterior_value_gradient(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    reward: &dyn RewardFn,
    k: usize,
    seed: u64,
    sensitivity: Sensitivity,
) -> Result<ValueEstimate> {
    require_particles(k)?;
    let d = map.dim();
    check_dim(d, x_t.len())?;
    if let Some(exact) = trivial_value(map, x_t, t, reward, k) {
        return Ok(exact);
    }
    let per: Vec<(f64, Vector)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let x0 = inner_noise(seed, i, d);
            match sensitivity {
                Sensitivity::Tangent => {
                    let (z, jac) = map.apply_with_tangent(&x0, 0.0, 1.0, x_t, t)?;
                    Ok((reward.eval(&z), jac.tr_mul(&reward.grad(&z))))
                }
                Sensitivity::FiniteDifference => {
                    let z = map.apply(&x0, 0.0, 1.0, x_t, t)?;
                    let g = fd_gradient(x_t, |x| Ok(reward.eval(&map.apply(&x0, 0.0, 1.0, x, t)?)))?;
                    Ok((reward.eval(&z), g))
                }
            }
        })
        .collect::<Result<_>>()?;
    let (rewards, grads): (Vec<f64>, Vec<Vector>) = per.into_iter().unzip();
    let (value, se, e) = jackknife_log_mean_exp(&rewards)?;
    let (gradient, gse) = weighted_gradient(&rewards, &grads);
    Ok(ValueEstimate {
        value: Some(value),
        gradient: Some(gradient),
        gradient_std_error: Some(gse),
        ess: e,
        n_particles: k,
        std_error: Some(se),
    })
}

fn fd_gradient(x: &Vector, f: impl Fn(&Vector) -> Result<f64>) -> Result<Vector> {
    let mut g = Vector::zeros(x.len());
    for j in 0..x.len() {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += FD_STEP;
        m[j] -= FD_STEP;
        g[j] = (f(&p)? - f(&m)?) / (2.0 * FD_STEP);
    }
    Ok(g)
}

/// Plug-in value `r(D_t(x_t))` and its gradient through the denoiser Jacobian.
pub fn denoiser_value(oracle: &MixtureOracle, x_t: &Vector, t: f64, reward: &dyn RewardFn) -> Result<ValueEstimate> {
    let den = oracle.denoiser(x_t, t)?;
    let jac = oracle.denoiser_jacobian(x_t, t)?;
    let mut est = ValueEstimate::exact(reward.eval(&den), jac.tr_mul(&reward.grad(&den)), 1);
    est.std_error = None;
    est.gradient_std_error = None;
    Ok(est)
}

/// Renoises `x_t` to `t' = snr_shift_time(t, lambda)`, maps each particle to
/// time one and scores it. Particle `i` uses noise stream `i` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_particles(
    flowmap: &dyn FlowMap,
    field: &dyn MarginalField,
    x_t: &Vector,
    t: f64,
    t_prime: f64,
    reward: &dyn RewardFn,
    n: usize,
    seed: u64,
    opts: &WeightedOptions,
) -> Result<Vec<WeightedParticle>> {
    particles_with(flowmap, field, x_t, t, t_prime, reward, n, seed, opts, true)
}

/// Without `with_grad` the map Jacobian is skipped and `grad_local` is zero.
#[allow(clippy::too_many_arguments)]
fn particles_with(
    flowmap: &dyn FlowMap,
    field: &dyn MarginalField,
    x_t: &Vector,
    t: f64,
    t_prime: f64,
    reward: &dyn RewardFn,
    n: usize,
    seed: u64,
    opts: &WeightedOptions,
    with_grad: bool,
) -> Result<Vec<WeightedParticle>> {
    require_particles(n)?;
    let d = field.dim();
    check_dim(d, x_t.len())?;
    let sched = *field.scheduler();
    if !(t_prime < t) {
        return Err(Error::domain(format!("renoise time {t_prime} must precede {t}")));
    }
    let (scale, std) = renoise_coeffs(&sched, t, t_prime)?;
    let (a_t, s_t) = (sched.alpha(t), sched.sigma(t));
    let s2 = s_t * s_t;
    let score_t = field.score(x_t, t)?;
    let score_tp_at_xt = field.score(x_t, t_prime)?;

    let local = |x: &Vector, eps: &Vector| -> Result<f64> {
        let z = flowmap.apply(&(scale * x + std * eps), t_prime, 1.0)?;
        Ok(reward.eval(&z) - (x - a_t * &z).norm_squared() / (2.0 * s2))
    };

    (0..n)
        .into_par_iter()
        .map(|i| {
            let eps = inner_noise(seed, i, d);
            let x_tp = scale * x_t + std * &eps;
            let (z, grad_local) = match opts.sensitivity {
                _ if !with_grad => (flowmap.apply(&x_tp, t_prime, 1.0)?, Vector::zeros(d)),
                Sensitivity::Tangent => {
                    let (z, jac) = flowmap.apply_with_jacobian(&x_tp, t_prime, 1.0)?;
                    let resid = x_t - a_t * &z;
                    let pulled = jac.tr_mul(&(reward.grad(&z) + (a_t / s2) * &resid));
                    (z, scale * pulled - resid / s2)
                }
                Sensitivity::FiniteDifference => {
                    let z = flowmap.apply(&x_tp, t_prime, 1.0)?;
                    (z, fd_gradient(x_t, |x| local(x, &eps))?)
                }
            };
            let r_local = reward.eval(&z) - (x_t - a_t * &z).norm_squared() / (2.0 * s2);
            let score_tp = field.score(&x_tp, t_prime)?;
            let step = &x_tp - x_t;
            let gamma = match opts.quadrature {
                GammaQuadrature::Trapezoid => 0.5 * (&score_tp_at_xt + &score_tp).dot(&step),
                GammaQuadrature::Midpoint => field.score(&(0.5 * (x_t + &x_tp)), t_prime)?.dot(&step),
            };
            let v = r_local + gamma + 0.5 * eps.norm_squared();
            let delta_score = scale * score_tp - &score_t;
            Ok(WeightedParticle { eps, x_tp, z, r_local, gamma, v, delta_score, grad_local })
        })
        .collect()
}

/// Consistent estimate of the value gradient from a deterministic flow map
/// made stochastic by renoising to `t' = snr_shift_time(t, lambda)`.
#[allow(clippy::too_many_arguments)]
pub fn weighted_diamond_gradient(
    flowmap: &dyn FlowMap,
    field: &dyn MarginalField,
    x_t: &Vector,
    t: f64,
    lambda: f64,
    reward: &dyn RewardFn,
    n: usize,
    seed: u64,
    opts: &WeightedOptions,
) -> Result<ValueEstimate> {
    let t_prime = renoise_time(field, t, lambda)?;
    let parts = weighted_particles(flowmap, field, x_t, t, t_prime, reward, n, seed, opts)?;
    let v: Vec<f64> = parts.iter().map(|p| p.v).collect();
    let grads: Vec<Vector> = parts.iter().map(|p| &p.grad_local + &p.delta_score).collect();
    let (gradient, gse) = weighted_gradient(&v, &grads);
    Ok(ValueEstimate {
        value: None,
        gradient: Some(gradient),
        gradient_std_error: Some(gse),
        ess: ess(&v)?,
        n_particles: n,
        std_error: None,
    })
}

/// `t' = snr_shift_time(t, lambda)`, required to precede `t`.
pub fn renoise_time(field: &dyn MarginalField, t: f64, lambda: f64) -> Result<f64> {
    let t_prime = field.scheduler().snr_shift_time(t, lambda)?;
    if !(t_prime < t) {
        return Err(Error::domain(format!("SNR factor {lambda} gives renoise time {t_prime} not before {t}")));
    }
    Ok(t_prime)
}

/// Value estimate from weighted particles plus the log-density offset
/// `log p_{t'}(x_t) - log p_t(x_t)`, the latter by trapezoid quadrature in time
/// with Hutchinson divergence probes.
#[allow(clippy::too_many_arguments)]
pub fn weighted_diamond_value(
    flowmap: &dyn FlowMap,
    field: &dyn MarginalField,
    x_t: &Vector,
    t: f64,
    lambda: f64,
    reward: &dyn RewardFn,
    n: usize,
    n_hutchinson: usize,
    seed: u64,
    opts: &WeightedOptions,
) -> Result<ValueEstimate> {
    let t_prime = renoise_time(field, t, lambda)?;
    let parts = particles_with(flowmap, field, x_t, t, t_prime, reward, n, seed, opts, false)?;
    let sched = field.scheduler();
    let (_, std) = renoise_coeffs(sched, t, t_prime)?;
    let d = x_t.len() as f64;
    // Gaussian normalisers of p_t(x_t | z) and q(x_tp | x_t) dropped from v.
    let shift = -0.5 * d * (sched.sigma(t).powi(2) / (std * std)).ln();
    let full: Vec<f64> = parts.iter().map(|p| p.v + shift).collect();
    let (lme, se, e) = jackknife_log_mean_exp(&full)?;
    let (offset, offset_se) = log_density_offset_hutchinson(
        field,
        x_t,
        t_prime,
        t,
        opts.offset_nodes,
        n_hutchinson,
        rng::derive_seed(seed, &[u64::MAX]),
    )?;
    Ok(ValueEstimate {
        value: Some(lme + offset),
        gradient: None,
        gradient_std_error: None,
        ess: e,
        n_particles: n,
        std_error: Some((se * se + offset_se * offset_se).sqrt()),
    })
}

/// Trapezoid nodes and weights on `[a, b]`.
fn trapezoid(a: f64, b: f64, n_intervals: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / n_intervals as f64;
    (0..=n_intervals)
        .map(|j| {
            let w = if j == 0 || j == n_intervals { 0.5 * h } else { h };
            let r = if j == n_intervals { b } else { a + h * j as f64 };
            (r, w)
        })
        .collect()
}

/// `int_{t'}^{t} [score_r(x)^T u_r(x) + div u_r(x)] dr = log p_{t'}(x) - log p_t(x)`
/// with the divergence estimated by `n_probes` Gaussian probes per node.
/// Returns the estimate and its standard error.
pub fn log_density_offset_hutchinson(
    field: &dyn MarginalField,
    x: &Vector,
    t_prime: f64,
    t: f64,
    n_nodes: usize,
    n_probes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_nodes == 0 || n_probes == 0 {
        return Err(Error::InvalidArgument("need at least one node and one probe".into()));
    }
    let d = x.len();
    let nodes = trapezoid(t_prime, t, n_nodes);
    let per_node: Vec<(f64, f64)> = nodes
        .par_iter()
        .enumerate()
        .map(|(j, &(r, w))| {
            let drift = field.score(x, r)?.dot(&field.velocity(x, r)?);
            let jac = field.velocity_jacobian(x, r)?;
            let mut rng = rng::stream(seed, j as u64);
            let probes: Vec<f64> = (0..n_probes)
                .map(|_| {
                    let e = rng::std_normal_vector(&mut rng, d);
                    e.dot(&(&jac * &e))
                })
                .collect();
            let mean = probes.iter().sum::<f64>() / n_probes as f64;
            let var = if n_probes > 1 {
                probes.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n_probes - 1) as f64
            } else {
                0.0
            };
            Ok((w * (drift + mean), w * w * var / n_probes as f64))
        })
        .collect::<Result<_>>()?;
    let value = per_node.iter().map(|p| p.0).sum();
    let var: f64 = per_node.iter().map(|p| p.1).sum();
    Ok((value, var.sqrt()))
}

/// Same quadrature as [`log_density_offset_hutchinson`] with the exact trace.
pub fn log_density_offset_analytic(
    field: &dyn MarginalField,
    x: &Vector,
    t_prime: f64,
    t: f64,
    n_nodes: usize,
) -> Result<f64> {
    if n_nodes == 0 {
        return Err(Error::InvalidArgument("need at least one node".into()));
    }
    trapezoid(t_prime, t, n_nodes)
        .iter()
        .map(
            |&(r, w)| Ok(w * (field.score(x, r)?.dot(&field.velocity(x, r)?) + field.velocity_jacobian(x, r)?.trace())),
        )
        .sum()
}
