//! Flow maps and the one-step stochastic kernels built from them.

use crate::error::{check_dim, Error};
use crate::glass::{sufficient_statistic, GlassField};
use crate::mixture::MixtureOracle;
use crate::ode::Rk4;
use crate::rng;
use crate::sched::Scheduler;
use crate::{Matrix, Result, Vector};

const FD_STEP: f64 = 1e-6;

/// Deterministic map `X_{t,r}` moving a state of the marginal flow from `t` to `r >= t`.
pub trait FlowMap: Sync {
    fn dim(&self) -> usize;

    fn scheduler(&self) -> &Scheduler;

    fn apply(&self, x: &Vector, t: f64, r: f64) -> Result<Vector>;

    /// Map value and Jacobian in `x`. Defaults to central differences.
    fn apply_with_jacobian(&self, x: &Vector, t: f64, r: f64) -> Result<(Vector, Matrix)> {
        let y = self.apply(x, t, r)?;
        let d = x.len();
        let mut jac = Matrix::zeros(d, d);
        for j in 0..d {
            let mut p = x.clone();
            let mut m = x.clone();
            p[j] += FD_STEP;
            m[j] -= FD_STEP;
            let col = (self.apply(&p, t, r)? - self.apply(&m, t, r)?) / (2.0 * FD_STEP);
            jac.set_column(j, &col);
        }
        Ok((y, jac))
    }
}

/// Stochastic flow map `X_{s,r}(x_bar | x_t, t)` transporting inner noise at
/// `s = 0` to a posterior draw given `x_t` at `r = 1`.
pub trait PosteriorDiamondMap: Sync {
    fn dim(&self) -> usize;

    fn scheduler(&self) -> &Scheduler;

    fn apply(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector>;

    /// Map value and Jacobian in `x_t`. Defaults to central differences with
    /// the same `x_bar`.
    fn apply_with_tangent(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<(Vector, Matrix)> {
        let y = self.apply(x_bar, s, r, x_t, t)?;
        let d = x_t.len();
        let mut jac = Matrix::zeros(d, d);
        for j in 0..d {
            let mut p = x_t.clone();
            let mut m = x_t.clone();
            p[j] += FD_STEP;
            m[j] -= FD_STEP;
            let col = (self.apply(x_bar, s, r, &p, t)? - self.apply(x_bar, s, r, &m, t)?) / (2.0 * FD_STEP);
            jac.set_column(j, &col);
        }
        Ok((y, jac))
    }

    /// `d/dr X_{s,r}`. Defaults to a one-sided difference pointing into `[s, 1]`.
    fn d_dr(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector> {
        let h = FD_STEP;
        if r + h <= 1.0 && r - h >= s {
            let p = self.apply(x_bar, s, r + h, x_t, t)?;
            let m = self.apply(x_bar, s, r - h, x_t, t)?;
            Ok((p - m) / (2.0 * h))
        } else if r + h <= 1.0 {
            Ok((self.apply(x_bar, s, r + h, x_t, t)? - self.apply(x_bar, s, r, x_t, t)?) / h)
        } else {
            Ok((self.apply(x_bar, s, r, x_t, t)? - self.apply(x_bar, s, r - h, x_t, t)?) / h)
        }
    }

    /// Directional derivative `d/ds X_{s,r} + (dX_{s,r}/dx_bar) v`.
    /// Defaults to a central difference along `(s, x_bar) + h (1, v)`.
    fn jvp_s_xbar(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64, v: &Vector) -> Result<Vector> {
        let h = FD_STEP;
        let lo = (s - h).max(0.0);
        let hi = (s + h).min(r);
        if hi <= lo {
            return Ok(Vector::zeros(x_bar.len()));
        }
        let p = self.apply(&(x_bar + (hi - s) * v), hi, r, x_t, t)?;
        let m = self.apply(&(x_bar + (lo - s) * v), lo, r, x_t, t)?;
        Ok((p - m) / (hi - lo))
    }
}

/// Flow map of the exact marginal velocity, integrated with RK4.
///
/// When `r` reaches the upper clamp the output is the denoiser at the final
/// state, the clean endpoint of the trajectory.
#[derive(Clone, Debug)]
pub struct OracleFlowMap {
    oracle: MixtureOracle,
    n_steps: usize,
}

impl OracleFlowMap {
    pub fn new(oracle: MixtureOracle, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        Ok(OracleFlowMap { oracle, n_steps })
    }

    pub fn oracle(&self) -> &MixtureOracle {
        &self.oracle
    }

    fn run(&self, x: &Vector, t: f64, r: f64, with_jac: bool) -> Result<(Vector, Option<Matrix>)> {
        let d = self.oracle.dim();
        check_dim(d, x.len())?;
        if r < t {
            return Err(Error::InvalidArgument(format!("flow map needs t <= r, got ({t}, {r})")));
        }
        let identity = || if with_jac { Some(Matrix::identity(d, d)) } else { None };
        if r == t {
            return Ok((x.clone(), identity()));
        }
        let sched = *self.oracle.scheduler();
        let lo = t.clamp(sched.t_min, sched.t_max);
        let hi = r.clamp(sched.t_min, sched.t_max);
        let terminal = r >= sched.t_max;
        let n = if with_jac { d + d * d } else { d };
        let mut y = vec![0.0; n];
        y[..d].copy_from_slice(x.as_slice());
        if with_jac {
            for i in 0..d {
                y[d + i * d + i] = 1.0;
            }
        }
        let mut ws = self.oracle.workspace();
        let mut den = vec![0.0; d];
        let mut jd = vec![0.0; d * d];
        if hi > lo {
            Rk4::new(n).integrate(&mut y, lo, hi, self.n_steps, |s, y, dy| {
                let (w1, w2) = sched.conditional_coeffs(s)?;
                let (a, sg) = (sched.alpha(s), sched.sigma(s));
                if with_jac {
                    self.oracle.denoise_jac_at(&y[..d], a, sg, &mut ws, &mut den, &mut jd);
                    outer_tangent(d, w1, w2, &jd, &y[d..], &mut dy[d..]);
                } else {
                    self.oracle.denoise_at(&y[..d], a, sg, &mut ws, &mut den);
                }
                for i in 0..d {
                    dy[i] = w1 * y[i] + w2 * den[i];
                }
                Ok(())
            })?;
        }
        if !terminal {
            let jac = with_jac.then(|| Matrix::from_row_slice(d, d, &y[d..]));
            return Ok((Vector::from_column_slice(&y[..d]), jac));
        }
        let (a, sg) = (sched.alpha(hi), sched.sigma(hi));
        self.oracle.denoise_jac_at(&y[..d], a, sg, &mut ws, &mut den, &mut jd);
        let jac = with_jac.then(|| Matrix::from_row_slice(d, d, &jd) * Matrix::from_row_slice(d, d, &y[d..]));
        Ok((Vector::from_vec(den), jac))
    }
}

/// `dJ/dt = (w1 I + w2 J_D) J`, all row-major.
fn outer_tangent(d: usize, w1: f64, w2: f64, jd: &[f64], tangent: &[f64], out: &mut [f64]) {
    for i in 0..d {
        for j in 0..d {
            let mut acc = 0.0;
            for l in 0..d {
                acc += jd[i * d + l] * tangent[l * d + j];
            }
            out[i * d + j] = w1 * tangent[i * d + j] + w2 * acc;
        }
    }
}

impl FlowMap for OracleFlowMap {
    fn dim(&self) -> usize {
        self.oracle.dim()
    }

    fn scheduler(&self) -> &Scheduler {
        self.oracle.scheduler()
    }

    fn apply(&self, x: &Vector, t: f64, r: f64) -> Result<Vector> {
        Ok(self.run(x, t, r, false)?.0)
    }

    fn apply_with_jacobian(&self, x: &Vector, t: f64, r: f64) -> Result<(Vector, Matrix)> {
        let (y, jac) = self.run(x, t, r, true)?;
        Ok((y, jac.expect("tangent requested")))
    }
}

/// Posterior diamond map given by integrating the inner posterior field.
#[derive(Clone, Debug)]
pub struct OracleDiamondMap {
    field: GlassField,
    n_steps: usize,
}

impl OracleDiamondMap {
    pub fn new(oracle: MixtureOracle, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        Ok(OracleDiamondMap { field: GlassField::new(oracle), n_steps })
    }

    pub fn field(&self) -> &GlassField {
        &self.field
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
}

impl PosteriorDiamondMap for OracleDiamondMap {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn scheduler(&self) -> &Scheduler {
        self.field.scheduler()
    }

    fn apply(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector> {
        self.field.flow(x_bar, s, r, x_t, t, self.n_steps)
    }

    fn apply_with_tangent(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<(Vector, Matrix)> {
        self.field.flow_with_tangent(x_bar, s, r, x_t, t, self.n_steps)
    }

    /// The inner field at the mapped state, inside the clamp.
    fn d_dr(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector> {
        let sched = self.scheduler();
        if r >= sched.t_max || r <= sched.t_min {
            return Err(Error::domain(format!("inner time derivative needs r inside the clamp, got {r}")));
        }
        let y = self.apply(x_bar, s, r, x_t, t)?;
        self.field.velocity(&y, x_t, r, t)
    }
}

/// `(alpha_{t'} / alpha_t) x_t + sqrt(sigma_{t'}^2 - (alpha_{t'} / alpha_t)^2 sigma_t^2) eps`
/// for `t' < t`: a draw of `x_{t'}` given `x_t` under the forward process.
pub fn renoise(sched: &Scheduler, x_t: &Vector, t: f64, t_prime: f64, eps: &Vector) -> Result<Vector> {
    check_dim(x_t.len(), eps.len())?;
    let (scale, std) = renoise_coeffs(sched, t, t_prime)?;
    Ok(scale * x_t + std * eps)
}

/// `(scale, std)` of [`renoise`].
pub(crate) fn renoise_coeffs(sched: &Scheduler, t: f64, t_prime: f64) -> Result<(f64, f64)> {
    let a_t = sched.alpha(t);
    if !(a_t > 0.0) {
        return Err(Error::domain(format!("renoise from t = {t} where alpha vanishes")));
    }
    let scale = sched.alpha(t_prime) / a_t;
    let var = sched.sigma(t_prime).powi(2) - (scale * sched.sigma(t)).powi(2);
    if var < 0.0 || t_prime > t {
        return Err(Error::domain(format!("renoise needs t' <= t, got t' = {t_prime}, t = {t}")));
    }
    Ok((scale, var.sqrt()))
}

/// One step `x_t -> x_{t'}` of the reverse-time DDPM chain through a diamond
/// map stopped early at `r*(t, t')`, then fused back with `x_t`.
pub fn diamond_ddpm_step(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    t_prime: f64,
    seed: u64,
) -> Result<Vector> {
    let sched = *map.scheduler();
    if !(t_prime > t && t_prime <= 1.0) {
        return Err(Error::domain(format!("early-stop step needs t < t' <= 1, got ({t}, {t_prime})")));
    }
    let r = sched.r_star(t, t_prime)?;
    let mut rng = rng::stream(seed, 0);
    let x0 = rng::std_normal_vector(&mut rng, map.dim());
    let a_tp = sched.alpha(t_prime);
    if r >= sched.t_max {
        return Ok(a_tp * map.apply(&x0, 0.0, 1.0, x_t, t)?);
    }
    let x_r = map.apply(&x0, 0.0, r, x_t, t)?;
    Ok(a_tp * sufficient_statistic(&sched, &x_r, x_t, r, t)?)
}

/// Baseline `x_t -> x_{t'}`: full denoising to a posterior draw, then fresh
/// forward noise `alpha_{t'} x_1 + sigma_{t'} eps`.
pub fn naive_renoise_step(
    map: &dyn PosteriorDiamondMap,
    x_t: &Vector,
    t: f64,
    t_prime: f64,
    seed: u64,
) -> Result<Vector> {
    if !(0.0..=1.0).contains(&t_prime) {
        return Err(Error::domain(format!("target time {t_prime} outside [0, 1]")));
    }
    let sched = map.scheduler();
    let mut rng = rng::stream(seed, 0);
    let x0 = rng::std_normal_vector(&mut rng, map.dim());
    let x1 = map.apply(&x0, 0.0, 1.0, x_t, t)?;
    let eps = rng::std_normal_vector(&mut rng, map.dim());
    Ok(sched.alpha(t_prime) * x1 + sched.sigma(t_prime) * eps)
}

/// Exact DDPM transition: `z` from the posterior given `x_t`, then `x_{t'}`
/// from the Gaussian conditional of the forward process given `(x_t, z)`.
pub fn ddpm_reference_sample(oracle: &MixtureOracle, x_t: &Vector, t: f64, t_prime: f64, seed: u64) -> Result<Vector> {
    let (mean_coef, var) = ddpm_reference_coeffs(oracle.scheduler(), t, t_prime)?;
    let mut rng = rng::stream(seed, 0);
    let z = oracle.sample_posterior(x_t, t, &mut rng)?;
    let eps = rng::std_normal_vector(&mut rng, oracle.dim());
    let a_t = oracle.scheduler().alpha(t);
    let a_tp = oracle.scheduler().alpha(t_prime);
    Ok(a_tp * &z + mean_coef * (x_t - a_t * &z) + var.sqrt() * eps)
}

/// `(c, v)` such that `x_{t'} | x_t, z ~ N(alpha_{t'} z + c (x_t - alpha_t z), v I)`.
pub fn ddpm_reference_coeffs(sched: &Scheduler, t: f64, t_prime: f64) -> Result<(f64, f64)> {
    if !(t_prime > t) {
        return Err(Error::domain(format!("reference kernel needs t < t', got ({t}, {t_prime})")));
    }
    let (a_t, s_t) = (sched.alpha(t), sched.sigma(t));
    let (a_tp, s_tp) = (sched.alpha(t_prime), sched.sigma(t_prime));
    if !(a_tp > 0.0 && s_t > 0.0) {
        return Err(Error::domain(format!("reference kernel undefined at ({t}, {t_prime})")));
    }
    let ratio = a_t * s_tp * s_tp / (a_tp * s_t * s_t);
    let var = s_tp * s_tp * (1.0 - a_t * a_t * s_tp * s_tp / (a_tp * a_tp * s_t * s_t));
    if var < -1e-15 {
        return Err(Error::domain(format!("negative reference variance at ({t}, {t_prime})")));
    }
    Ok((ratio, var.max(0.0)))
}

/// Which one-step kernel a chained sampler uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKernel {
    DiamondEarlyStop,
    NaiveRenoise,
}

/// Runs `x` through `times` (increasing, starting at the time of `x`) with
/// one kernel step per interval.
pub fn chained_sample(
    map: &dyn PosteriorDiamondMap,
    kernel: StepKernel,
    x: &Vector,
    times: &[f64],
    seed: u64,
) -> Result<Vector> {
    let mut x = x.clone();
    for (i, w) in times.windows(2).enumerate() {
        let step_seed = rng::derive_seed(seed, &[i as u64]);
        x = match kernel {
            StepKernel::DiamondEarlyStop => diamond_ddpm_step(map, &x, w[0], w[1], step_seed)?,
            StepKernel::NaiveRenoise => naive_renoise_step(map, &x, w[0], w[1], step_seed)?,
        };
    }
    Ok(x)
}

/// `r*(t, t')` on a grid, row per `t`, column per `t'`; NaN where `t >= t'`.
pub fn r_star_surface(sched: &Scheduler, grid_t: &[f64], grid_t_prime: &[f64]) -> Matrix {
    Matrix::from_fn(grid_t.len(), grid_t_prime.len(), |i, j| {
        let (t, tp) = (grid_t[i], grid_t_prime[j]);
        if t >= tp {
            f64::NAN
        } else {
            sched.r_star(t, tp).unwrap_or(f64::NAN)
        }
    })
}
