//! Gaussian-mixture data and the closed-form flow-matching oracle over it.
//!
//! Every component covariance is eigendecomposed once at construction. In the
//! eigenbasis of component `k`, observing `x = alpha z + sigma eps` decouples
//! into independent scalar conjugate updates, so the marginal, posterior and
//! all their derivatives cost `O(K d^2)` per evaluation without any further
//! factorisation. Zero eigenvalues (point masses and degenerate directions)
//! go through the same formulas.

use nalgebra::SymmetricEigen;
use rand::{Rng, RngCore};

use crate::error::{check_dim, Error};
use crate::reward::{jackknife_log_mean_exp, Reward, RewardFn, ValueEstimate};
use crate::rng::{self, fill_std_normal};
use crate::sched::Scheduler;
use crate::{Matrix, Result, Vector, MAX_DIM};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug)]
struct Component {
    weight: f64,
    mean: Vector,
    cov: Matrix,
    /// Eigenvectors, row-major: `basis[i * d + j]` is entry `(i, j)` of `Q`.
    basis: Vec<f64>,
    /// Eigenvalues, clipped at zero.
    eig: Vec<f64>,
    /// Mean in the eigenbasis, `Q^T mu`.
    mean_rot: Vec<f64>,
}

/// Weighted sum of Gaussians, possibly with singular covariances.
#[derive(Clone, Debug)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<Component>,
}

impl GaussianMixture {
    /// Builds a mixture, validating weights and covariances.
    ///
    /// Weights must be nonnegative and sum to one within `1e-12`. Covariances
    /// must be symmetric and positive semidefinite; tiny negative eigenvalues
    /// from round-off are clipped to zero.
    pub fn new(weights: Vec<f64>, means: Vec<Vector>, covs: Vec<Matrix>) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::InvalidMixture("no components".into()));
        }
        if means.len() != n || covs.len() != n {
            return Err(Error::InvalidMixture(format!(
                "{n} weights, {} means, {} covariances",
                means.len(),
                covs.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidMixture("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::InvalidMixture(format!("dimension {dim} outside 1..={MAX_DIM}")));
        }
        let components = weights
            .into_iter()
            .zip(means)
            .zip(covs)
            .map(|((w, m), c)| Component::new(w, m, c, dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(GaussianMixture { dim, components })
    }

    /// Same as [`GaussianMixture::new`] but rescales weights to sum to one.
    pub fn normalized(weights: Vec<f64>, means: Vec<Vector>, covs: Vec<Matrix>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        Self::new(weights.iter().map(|w| w / total).collect(), means, covs)
    }

    pub fn gaussian(mean: Vector, cov: Matrix) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    pub fn standard_normal(dim: usize) -> Result<Self> {
        Self::gaussian(Vector::zeros(dim), Matrix::identity(dim, dim))
    }

    pub fn point_mass(at: Vector) -> Result<Self> {
        let d = at.len();
        Self::gaussian(at, Matrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<Vector> {
        self.components.iter().map(|c| c.mean.clone()).collect()
    }

    pub fn covs(&self) -> Vec<Matrix> {
        self.components.iter().map(|c| c.cov.clone()).collect()
    }

    pub fn mean(&self) -> Vector {
        self.components.iter().fold(Vector::zeros(self.dim), |acc, c| acc + c.weight * &c.mean)
    }

    /// Mixture covariance, within-component plus between-component spread.
    pub fn covariance(&self) -> Matrix {
        let mu = self.mean();
        self.components.iter().fold(Matrix::zeros(self.dim, self.dim), |acc, c| {
            let dm = &c.mean - &mu;
            acc + c.weight * (&c.cov + &dm * dm.transpose())
        })
    }

    /// Log density of the mixture itself. Errors if any component is singular.
    pub fn log_density(&self, z: &Vector) -> Result<f64> {
        check_dim(self.dim, z.len())?;
        if self.components.iter().any(|c| c.eig.iter().any(|&l| l <= 0.0)) {
            return Err(Error::domain("density of a singular mixture"));
        }
        let mut ws = Workspace::new(self);
        Ok(self.posterior_stats(z.as_slice(), 1.0, 0.0, &mut ws))
    }

    /// Gradient of [`GaussianMixture::log_density`].
    pub fn score(&self, z: &Vector) -> Result<Vector> {
        self.log_density(z)?;
        let d = self.dim;
        let mut ws = Workspace::new(self);
        self.posterior_stats(z.as_slice(), 1.0, 0.0, &mut ws);
        let mut out = Vector::zeros(d);
        for (k, comp) in self.components.iter().enumerate() {
            let diff = z - &comp.mean;
            let rot = comp.rotate(diff.as_slice());
            let scaled: Vec<f64> = rot.iter().zip(&comp.eig).map(|(r, l)| r / l).collect();
            let back = comp.unrotate(&scaled);
            for i in 0..d {
                out[i] -= ws.resp[k] * back[i];
            }
        }
        Ok(out)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vector {
        let k = pick(rng, self.components.iter().map(|c| c.weight));
        let comp = &self.components[k];
        let mut eps = vec![0.0; self.dim];
        fill_std_normal(rng, &mut eps);
        for (e, l) in eps.iter_mut().zip(&comp.eig) {
            *e *= l.sqrt();
        }
        &comp.mean + Vector::from_vec(comp.unrotate(&eps))
    }

    /// Exponential tilt by `exp(c^T z)`: means shift by `Sigma c`, weights by the
    /// component moment-generating function.
    pub fn tilt_linear(&self, c: &Vector) -> Result<GaussianMixture> {
        check_dim(self.dim, c.len())?;
        let log_w: Vec<f64> = self
            .components
            .iter()
            .map(|comp| comp.weight.ln() + c.dot(&comp.mean) + 0.5 * c.dot(&(&comp.cov * c)))
            .collect();
        let lse = log_sum_exp(&log_w);
        let weights = log_w.iter().map(|lw| (lw - lse).exp()).collect();
        let means = self.components.iter().map(|comp| &comp.mean + &comp.cov * c).collect();
        Self::normalized(weights, means, self.covs())
    }

    /// Core conjugate update. Fills `ws.resp` with responsibilities,
    /// `ws.means` with component posterior means (original basis) and
    /// `ws.vars` with component posterior variances (eigenbasis), and returns
    /// `log p(x)` for `x = alpha z + sigma eps`.
    pub(crate) fn posterior_stats(&self, x: &[f64], alpha: f64, sigma2: f64, ws: &mut Workspace) -> f64 {
        let d = self.dim;
        for (k, comp) in self.components.iter().enumerate() {
            comp.rotate_into(x, &mut ws.y);
            let mut log_p = comp.weight.ln();
            let mrot = &mut ws.mrot;
            for j in 0..d {
                let lam = comp.eig[j];
                let v = alpha * alpha * lam + sigma2;
                let resid = ws.y[j] - alpha * comp.mean_rot[j];
                log_p -= 0.5 * (resid * resid / v + LN_2PI + v.ln());
                mrot[j] = comp.mean_rot[j] + alpha * lam * resid / v;
                ws.vars[k * d + j] = lam * sigma2 / v;
            }
            comp.unrotate_into(mrot, &mut ws.means[k * d..(k + 1) * d]);
            ws.resp[k] = log_p;
        }
        let lse = log_sum_exp(&ws.resp);
        for r in ws.resp.iter_mut() {
            *r = (*r - lse).exp();
        }
        lse
    }

    /// Posterior mean into `out`, given a prior call to `posterior_stats`.
    pub(crate) fn mean_from_stats(&self, ws: &Workspace, out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, r) in ws.resp.iter().enumerate() {
            for i in 0..d {
                out[i] += r * ws.means[k * d + i];
            }
        }
    }

    /// Posterior covariance (row-major) given a prior call to `posterior_stats`
    /// and the posterior mean `mean`.
    pub(crate) fn cov_from_stats(&self, ws: &Workspace, mean: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (k, comp) in self.components.iter().enumerate() {
            let r = ws.resp[k];
            if r == 0.0 {
                continue;
            }
            let mk = &ws.means[k * d..(k + 1) * d];
            let vk = &ws.vars[k * d..(k + 1) * d];
            for i in 0..d {
                let di = mk[i] - mean[i];
                for j in 0..=i {
                    let mut c = 0.0;
                    for l in 0..d {
                        c += comp.basis[i * d + l] * vk[l] * comp.basis[j * d + l];
                    }
                    out[i * d + j] += r * (c + di * (mk[j] - mean[j]));
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                out[j * d + i] = out[i * d + j];
            }
        }
    }

    /// Component posterior covariance `Q diag(vars) Q^T`.
    fn component_cov(&self, k: usize, vars: &[f64]) -> Matrix {
        let comp = &self.components[k];
        let d = self.dim;
        Matrix::from_fn(d, d, |i, j| (0..d).map(|l| comp.basis[i * d + l] * vars[l] * comp.basis[j * d + l]).sum())
    }

    /// Symmetric square root of a component posterior covariance.
    fn component_cov_sqrt(&self, k: usize, vars: &[f64]) -> Matrix {
        let roots: Vec<f64> = vars.iter().map(|v| v.max(0.0).sqrt()).collect();
        self.component_cov(k, &roots)
    }

    fn sample_from_stats<R: RngCore + ?Sized>(&self, ws: &Workspace, rng: &mut R) -> Vector {
        let d = self.dim;
        let k = pick(rng, ws.resp.iter().copied());
        let mut eps = vec![0.0; d];
        fill_std_normal(rng, &mut eps);
        for (e, v) in eps.iter_mut().zip(&ws.vars[k * d..(k + 1) * d]) {
            *e *= v.sqrt();
        }
        let noise = self.components[k].unrotate(&eps);
        Vector::from_fn(d, |i, _| ws.means[k * d + i] + noise[i])
    }
}

impl Component {
    fn new(weight: f64, mean: Vector, cov: Matrix, dim: usize) -> Result<Self> {
        check_dim(dim, mean.len())?;
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(Error::InvalidMixture(format!(
                "covariance is {}x{}, expected {dim}x{dim}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMixture("non-finite mean or covariance".into()));
        }
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-10 * scale {
            return Err(Error::InvalidMixture("covariance is not symmetric".into()));
        }
        let eig = SymmetricEigen::new(cov.clone());
        if eig.eigenvalues.iter().any(|&l| l < -1e-10 * scale) {
            return Err(Error::InvalidMixture("covariance has a negative eigenvalue".into()));
        }
        let q = eig.eigenvectors;
        let basis = (0..dim).flat_map(|i| (0..dim).map(move |j| (i, j))).map(|(i, j)| q[(i, j)]).collect();
        let eigs = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
        let mut comp = Component { weight, mean, cov, basis, eig: eigs, mean_rot: vec![0.0; dim] };
        comp.mean_rot = comp.rotate(comp.mean.as_slice());
        Ok(comp)
    }

    fn rotate_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for j in 0..d {
            out[j] = (0..d).map(|i| self.basis[i * d + j] * x[i]).sum();
        }
    }

    fn unrotate_into(&self, y: &[f64], out: &mut [f64]) {
        let d = y.len();
        for i in 0..d {
            out[i] = (0..d).map(|j| self.basis[i * d + j] * y[j]).sum();
        }
    }

    fn rotate(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.rotate_into(x, &mut out);
        out
    }

    fn unrotate(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; y.len()];
        self.unrotate_into(y, &mut out);
        out
    }
}

/// Scratch buffers for repeated posterior evaluations against one mixture.
#[derive(Clone, Debug)]
pub(crate) struct Workspace {
    y: Vec<f64>,
    mrot: Vec<f64>,
    pub(crate) resp: Vec<f64>,
    pub(crate) means: Vec<f64>,
    pub(crate) vars: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(mixture: &GaussianMixture) -> Self {
        let (d, k) = (mixture.dim, mixture.components.len());
        Workspace {
            y: vec![0.0; d],
            mrot: vec![0.0; d],
            resp: vec![0.0; k],
            means: vec![0.0; k * d],
            vars: vec![0.0; k * d],
        }
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Index drawn from nonnegative weights summing to one.
fn pick<R: RngCore + ?Sized>(rng: &mut R, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, w) in weights.enumerate() {
        acc += w;
        if w > 0.0 {
            last = k;
        }
        if u < acc {
            return k;
        }
    }
    last
}

/// Closed-form marginal, score, denoiser, velocity and Jacobians at a time `t`.
///
/// Implemented by [`MixtureOracle`]; the weighted estimators only need this
/// interface.
pub trait MarginalField: Sync {
    fn dim(&self) -> usize;
    fn scheduler(&self) -> &Scheduler;
    fn score(&self, x: &Vector, t: f64) -> Result<Vector>;
    fn velocity(&self, x: &Vector, t: f64) -> Result<Vector>;
    fn velocity_jacobian(&self, x: &Vector, t: f64) -> Result<Matrix>;
}

/// Exact flow-matching quantities for Gaussian-mixture data under a scheduler.
#[derive(Clone, Debug)]
pub struct MixtureOracle {
    mixture: GaussianMixture,
    sched: Scheduler,
}

impl MixtureOracle {
    pub fn new(mixture: GaussianMixture, sched: Scheduler) -> Self {
        MixtureOracle { mixture, sched }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.mixture
    }

    pub fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim
    }

    /// Same oracle over the linearly tilted data.
    pub fn tilted(&self, c: &Vector) -> Result<MixtureOracle> {
        Ok(MixtureOracle::new(self.mixture.tilt_linear(c)?, self.sched))
    }

    pub(crate) fn workspace(&self) -> Workspace {
        Workspace::new(&self.mixture)
    }

    /// `(alpha, sigma)` at `t`, after checking `t` is inside the clamp.
    fn coeffs(&self, x: &Vector, t: f64) -> Result<(f64, f64)> {
        check_dim(self.dim(), x.len())?;
        let (lo, hi) = (self.sched.t_min, self.sched.t_max);
        if !(t >= lo - 1e-12 && t <= hi + 1e-12) {
            return Err(Error::domain(format!("time {t} outside [{lo}, {hi}]")));
        }
        let sigma = self.sched.sigma(t);
        if sigma <= 0.0 {
            return Err(Error::domain(format!("sigma vanishes at t = {t}")));
        }
        Ok((self.sched.alpha(t), sigma))
    }

    /// Denoiser at explicit path coefficients, written into `out`.
    /// Requires `sigma > 0`; used by inner integrators at times past the clamp.
    pub(crate) fn denoise_at(&self, x: &[f64], alpha: f64, sigma: f64, ws: &mut Workspace, out: &mut [f64]) {
        self.mixture.posterior_stats(x, alpha, sigma * sigma, ws);
        self.mixture.mean_from_stats(ws, out);
    }

    /// Denoiser and its Jacobian (row-major) at explicit path coefficients.
    pub(crate) fn denoise_jac_at(
        &self,
        x: &[f64],
        alpha: f64,
        sigma: f64,
        ws: &mut Workspace,
        out: &mut [f64],
        jac: &mut [f64],
    ) {
        let s2 = sigma * sigma;
        self.mixture.posterior_stats(x, alpha, s2, ws);
        self.mixture.mean_from_stats(ws, out);
        self.mixture.cov_from_stats(ws, out, jac);
        let scale = alpha / s2;
        jac.iter_mut().for_each(|j| *j *= scale);
    }

    pub fn log_marginal(&self, x: &Vector, t: f64) -> Result<f64> {
        let (a, s) = self.coeffs(x, t)?;
        let mut ws = self.workspace();
        Ok(self.mixture.posterior_stats(x.as_slice(), a, s * s, &mut ws))
    }

    pub fn denoiser(&self, x: &Vector, t: f64) -> Result<Vector> {
        let (a, s) = self.coeffs(x, t)?;
        let mut ws = self.workspace();
        let mut out = Vector::zeros(self.dim());
        self.denoise_at(x.as_slice(), a, s, &mut ws, out.as_mut_slice());
        Ok(out)
    }

    /// Jacobian of the denoiser: `(alpha / sigma^2)` times the posterior covariance.
    pub fn denoiser_jacobian(&self, x: &Vector, t: f64) -> Result<Matrix> {
        let (a, s) = self.coeffs(x, t)?;
        let d = self.dim();
        let mut ws = self.workspace();
        let mut out = vec![0.0; d];
        let mut jac = vec![0.0; d * d];
        self.denoise_jac_at(x.as_slice(), a, s, &mut ws, &mut out, &mut jac);
        Ok(Matrix::from_row_slice(d, d, &jac))
    }

    pub fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        let (a, s) = self.coeffs(x, t)?;
        let den = self.denoiser(x, t)?;
        Ok((a * den - x) / (s * s))
    }

    pub fn score_jacobian(&self, x: &Vector, t: f64) -> Result<Matrix> {
        let (a, s) = self.coeffs(x, t)?;
        let jd = self.denoiser_jacobian(x, t)?;
        let d = self.dim();
        Ok((a * jd - Matrix::identity(d, d)) / (s * s))
    }

    pub fn velocity(&self, x: &Vector, t: f64) -> Result<Vector> {
        let (w1, w2) = self.sched.conditional_coeffs(t)?;
        Ok(w1 * x + w2 * self.denoiser(x, t)?)
    }

    pub fn velocity_jacobian(&self, x: &Vector, t: f64) -> Result<Matrix> {
        let (w1, w2) = self.sched.conditional_coeffs(t)?;
        let d = self.dim();
        Ok(w1 * Matrix::identity(d, d) + w2 * self.denoiser_jacobian(x, t)?)
    }

    /// Velocity of the straight conditional path through clean point `z`.
    pub fn conditional_velocity(&self, x: &Vector, z: &Vector, t: f64) -> Result<Vector> {
        check_dim(self.dim(), z.len())?;
        self.coeffs(x, t)?;
        let (w1, w2) = self.sched.conditional_coeffs(t)?;
        Ok(w1 * x + w2 * z)
    }

    /// Exact posterior over clean data given `x` at time `t`.
    pub fn posterior(&self, x: &Vector, t: f64) -> Result<GaussianMixture> {
        let (a, s) = self.coeffs(x, t)?;
        let d = self.dim();
        let mut ws = self.workspace();
        self.mixture.posterior_stats(x.as_slice(), a, s * s, &mut ws);
        let n = self.mixture.n_components();
        let means = (0..n).map(|k| Vector::from_column_slice(&ws.means[k * d..(k + 1) * d])).collect();
        let covs = (0..n)
            .map(|k| {
                let c = self.mixture.component_cov(k, &ws.vars[k * d..(k + 1) * d]);
                0.5 * (&c + c.transpose())
            })
            .collect();
        GaussianMixture::normalized(ws.resp.clone(), means, covs)
    }

    pub fn sample_posterior<R: RngCore + ?Sized>(&self, x: &Vector, t: f64, rng: &mut R) -> Result<Vector> {
        let (a, s) = self.coeffs(x, t)?;
        let mut ws = self.workspace();
        self.mixture.posterior_stats(x.as_slice(), a, s * s, &mut ws);
        Ok(self.mixture.sample_from_stats(&ws, rng))
    }

    /// Draw from `p_t`: a data sample pushed through the Gaussian path.
    pub fn sample_marginal<R: RngCore + ?Sized>(&self, t: f64, rng: &mut R) -> Vector {
        let z = self.mixture.sample(rng);
        let eps = rng::std_normal_vector(rng, self.dim());
        self.sched.alpha(t) * z + self.sched.sigma(t) * eps
    }

    /// Exact value `log E[exp r(z) | x_t = x]` and its gradient in `x`.
    ///
    /// Closed form for linear, quadratic and radial rewards. Errors with
    /// [`Error::Curvature`] when the tilted posterior is improper.
    pub fn value_exact(&self, x: &Vector, t: f64, reward: &Reward) -> Result<(f64, Vector)> {
        let (a, s) = self.coeffs(x, t)?;
        let d = self.dim();
        reward.check_dim(d)?;
        if reward.is_zero() {
            return Ok((0.0, Vector::zeros(d)));
        }
        let (qa, qb, q0) = reward.quadratic_form();
        let mut ws = self.workspace();
        self.mixture.posterior_stats(x.as_slice(), a, s * s, &mut ws);
        let mut den = vec![0.0; d];
        self.mixture.mean_from_stats(&ws, &mut den);
        let den = Vector::from_vec(den);
        let scale = a / (s * s);
        let n = self.mixture.n_components();
        let mut log_terms = Vec::with_capacity(n);
        let mut grads = Vec::with_capacity(n);
        for k in 0..n {
            let vars = &ws.vars[k * d..(k + 1) * d];
            let m = Vector::from_column_slice(&ws.means[k * d..(k + 1) * d]);
            let cov = self.mixture.component_cov(k, vars);
            let root = self.mixture.component_cov_sqrt(k, vars);
            let g = &qa * &m + &qb;
            let b = Matrix::identity(d, d) - &root * &qa * &root;
            let chol = b
                .clone()
                .cholesky()
                .ok_or_else(|| Error::Curvature("reward curvature exceeds posterior precision".into()))?;
            let h = &root * chol.solve(&root);
            let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            let f = 0.5 * m.dot(&(&qa * &m)) + qb.dot(&m) + q0;
            let hg = &h * &g;
            log_terms.push(ws.resp[k].ln() + f + 0.5 * g.dot(&hg) - 0.5 * logdet);
            let inner = &g + &qa * &hg;
            grads.push(scale * (&cov * inner + (&m - &den)));
        }
        let value = log_sum_exp(&log_terms);
        let mut grad = Vector::zeros(d);
        for (lt, gk) in log_terms.iter().zip(&grads) {
            let rho = (lt - value).exp();
            if rho > 0.0 {
                grad += rho * gk;
            }
        }
        Ok((value, grad))
    }

    /// Self-normalised Monte Carlo value over `n` exact posterior draws.
    pub fn value_monte_carlo(
        &self,
        x: &Vector,
        t: f64,
        reward: &dyn RewardFn,
        n: usize,
        seed: u64,
    ) -> Result<ValueEstimate> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let (a, s) = self.coeffs(x, t)?;
        let mut ws = self.workspace();
        self.mixture.posterior_stats(x.as_slice(), a, s * s, &mut ws);
        let mut rng = rng::stream(seed, 0);
        let rewards: Vec<f64> = (0..n).map(|_| reward.eval(&self.mixture.sample_from_stats(&ws, &mut rng))).collect();
        let (value, std_error, ess) = jackknife_log_mean_exp(&rewards)?;
        Ok(ValueEstimate {
            value: Some(value),
            gradient: None,
            gradient_std_error: None,
            ess,
            n_particles: n,
            std_error: Some(std_error),
        })
    }
}

impl MarginalField for MixtureOracle {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    fn score(&self, x: &Vector, t: f64) -> Result<Vector> {
        MixtureOracle::score(self, x, t)
    }

    fn velocity(&self, x: &Vector, t: f64) -> Result<Vector> {
        MixtureOracle::velocity(self, x, t)
    }

    fn velocity_jacobian(&self, x: &Vector, t: f64) -> Result<Matrix> {
        MixtureOracle::velocity_jacobian(self, x, t)
    }
}
