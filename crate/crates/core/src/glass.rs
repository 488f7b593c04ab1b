//! Posterior sampling as an ODE in an inner time `s`.
//!
//! An inner state `x_bar` at time `s` and the outer observation `x_t` are two
//! independent noisy views of the same clean point. Fusing them gives the
//! sufficient statistic `S`, an observation of the clean point with noise ratio
//! `g(t*) = sigma_t^2 sigma_s^2 / (sigma_t^2 alpha_s^2 + alpha_t^2 sigma_s^2)`.
//! The inner field is the conditional field with the denoiser replaced by the
//! posterior mean given `S`, so its flow carries noise to the posterior.

use crate::error::{check_dim, Error};
use crate::mixture::{MixtureOracle, Workspace};
use crate::ode::Rk4;
use crate::rng;
use crate::sched::{ScheduleKind, Scheduler};
use crate::{Matrix, Result, Vector};

/// `(alpha_s sigma_t^2 x_bar + alpha_t sigma_s^2 x_t) / (sigma_t^2 alpha_s^2 + alpha_t^2 sigma_s^2)`.
pub fn sufficient_statistic(sched: &Scheduler, x_bar: &Vector, x_t: &Vector, s: f64, t: f64) -> Result<Vector> {
    check_dim(x_bar.len(), x_t.len())?;
    let c = InnerCoeffs::new(sched, s, t)?;
    Ok(c.fuse_bar * x_bar + c.fuse_t * x_t)
}

/// Scalar coefficients of the inner field at `(s, t)`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct InnerCoeffs {
    /// Weight of `x_bar` in the sufficient statistic.
    pub(crate) fuse_bar: f64,
    /// Weight of `x_t` in the sufficient statistic.
    pub(crate) fuse_t: f64,
    /// Noise-to-signal ratio `g(t*)` of the fused observation.
    pub(crate) ratio: f64,
    pub(crate) w1: f64,
    pub(crate) w2: f64,
}

impl InnerCoeffs {
    pub(crate) fn new(sched: &Scheduler, s: f64, t: f64) -> Result<Self> {
        let (a_s, s_s) = (sched.alpha(s), sched.sigma(s));
        let (a_t, s_t) = (sched.alpha(t), sched.sigma(t));
        let den = s_t * s_t * a_s * a_s + a_t * a_t * s_s * s_s;
        if !(den > 0.0) {
            return Err(Error::domain(format!("sufficient statistic undefined at s = {s}, t = {t}")));
        }
        let (w1, w2) = if s_s > 0.0 { sched.conditional_coeffs(s)? } else { (0.0, 0.0) };
        Ok(InnerCoeffs {
            fuse_bar: a_s * s_t * s_t / den,
            fuse_t: a_t * s_s * s_s / den,
            ratio: s_t * s_t * s_s * s_s / den,
            w1,
            w2,
        })
    }
}

/// Inner posterior-sampling field over a mixture oracle. The inner schedule
/// equals the outer one.
#[derive(Clone, Debug)]
pub struct GlassField {
    oracle: MixtureOracle,
}

impl GlassField {
    pub fn new(oracle: MixtureOracle) -> Self {
        GlassField { oracle }
    }

    pub fn oracle(&self) -> &MixtureOracle {
        &self.oracle
    }

    pub fn scheduler(&self) -> &Scheduler {
        self.oracle.scheduler()
    }

    pub fn dim(&self) -> usize {
        self.oracle.dim()
    }

    pub fn sufficient_statistic(&self, x_bar: &Vector, x_t: &Vector, s: f64, t: f64) -> Result<Vector> {
        sufficient_statistic(self.scheduler(), x_bar, x_t, s, t)
    }

    /// `w1(s) x_bar + w2(s) D_{t*}(alpha_{t*} S)`.
    pub fn velocity(&self, x_bar: &Vector, x_t: &Vector, s: f64, t: f64) -> Result<Vector> {
        let d = self.dim();
        check_dim(d, x_bar.len())?;
        check_dim(d, x_t.len())?;
        let mut inner = Inner::new(self, x_t.as_slice(), t, false);
        let mut out = Vector::zeros(d);
        inner.velocity(s, x_bar.as_slice(), out.as_mut_slice())?;
        Ok(out)
    }

    /// Flow of the inner field from `s` to `r`, with `n_steps` RK4 steps.
    ///
    /// Times are clamped to the scheduler range. When `r` reaches the upper
    /// clamp the result is the posterior mean given the fused statistic at the
    /// final state, which is the clean endpoint of the flow.
    pub fn flow(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64, n_steps: usize) -> Result<Vector> {
        let d = self.dim();
        check_dim(d, x_bar.len())?;
        check_dim(d, x_t.len())?;
        let Some((lo, hi, terminal)) = self.span(s, r, n_steps)? else {
            return Ok(x_bar.clone());
        };
        let mut inner = Inner::new(self, x_t.as_slice(), t, false);
        let mut y = x_bar.as_slice().to_vec();
        if hi > lo {
            let mut rk = Rk4::new(d);
            rk.integrate(&mut y, lo, hi, n_steps, |s, y, dy| inner.velocity(s, y, dy))?;
        }
        if terminal {
            let mut out = vec![0.0; d];
            inner.clean_endpoint(hi, &y, &mut out)?;
            y = out;
        }
        Ok(Vector::from_vec(y))
    }

    /// [`GlassField::flow`] together with its Jacobian in `x_t`, by forward
    /// sensitivity integration along the same RK4 grid.
    pub fn flow_with_tangent(
        &self,
        x_bar: &Vector,
        s: f64,
        r: f64,
        x_t: &Vector,
        t: f64,
        n_steps: usize,
    ) -> Result<(Vector, Matrix)> {
        let d = self.dim();
        check_dim(d, x_bar.len())?;
        check_dim(d, x_t.len())?;
        let Some((lo, hi, terminal)) = self.span(s, r, n_steps)? else {
            return Ok((x_bar.clone(), Matrix::zeros(d, d)));
        };
        let mut inner = Inner::new(self, x_t.as_slice(), t, true);
        // State layout: x_bar, then the d x d tangent row-major.
        let mut y = vec![0.0; d + d * d];
        y[..d].copy_from_slice(x_bar.as_slice());
        if hi > lo {
            let mut rk = Rk4::new(d + d * d);
            rk.integrate(&mut y, lo, hi, n_steps, |s, y, dy| inner.velocity_tangent(s, y, dy))?;
        }
        let (state, tangent) = y.split_at(d);
        if terminal {
            let mut out = vec![0.0; d];
            let mut jac = vec![0.0; d * d];
            inner.clean_endpoint_tangent(hi, state, tangent, &mut out, &mut jac)?;
            return Ok((Vector::from_vec(out), Matrix::from_row_slice(d, d, &jac)));
        }
        Ok((Vector::from_column_slice(state), Matrix::from_row_slice(d, d, tangent)))
    }

    /// Draws `x_bar ~ N(0, I)` at inner time 0 and flows it to the clean
    /// endpoint: one exact-in-the-limit posterior draw given `x_t`.
    pub fn sample_posterior_ode(&self, x_t: &Vector, t: f64, n_steps: usize, seed: u64) -> Result<Vector> {
        let mut rng = rng::stream(seed, 0);
        let x0 = rng::std_normal_vector(&mut rng, self.dim());
        self.flow(&x0, 0.0, 1.0, x_t, t, n_steps)
    }

    /// Clamped integration interval and whether the endpoint is terminal.
    /// `None` means the map is the identity.
    fn span(&self, s: f64, r: f64, n_steps: usize) -> Result<Option<(f64, f64, bool)>> {
        if n_steps == 0 {
            return Err(Error::InvalidArgument("n_steps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&r) {
            return Err(Error::domain(format!("inner times ({s}, {r}) outside [0, 1]")));
        }
        if r < s {
            return Err(Error::InvalidArgument(format!("flow map needs s <= r, got ({s}, {r})")));
        }
        if r == s {
            return Ok(None);
        }
        let sched = self.scheduler();
        // The linear inner field is regular at s = 0, so only the top is clamped.
        let floor = if sched.kind == ScheduleKind::Linear { 0.0 } else { sched.t_min };
        let lo = s.clamp(floor, sched.t_max);
        let hi = r.clamp(floor, sched.t_max);
        let terminal = r >= sched.t_max;
        if hi <= lo && !terminal {
            return Ok(None);
        }
        Ok(Some((lo, hi.max(lo), terminal)))
    }
}

/// Per-call state for evaluating the inner field against a fixed `x_t`.
struct Inner<'a> {
    field: &'a GlassField,
    x_t: &'a [f64],
    t: f64,
    ws: Workspace,
    stat: Vec<f64>,
    den: Vec<f64>,
    jac: Vec<f64>,
}

impl<'a> Inner<'a> {
    fn new(field: &'a GlassField, x_t: &'a [f64], t: f64, with_jac: bool) -> Self {
        let d = field.dim();
        Inner {
            field,
            x_t,
            t,
            ws: field.oracle.workspace(),
            stat: vec![0.0; d],
            den: vec![0.0; d],
            jac: vec![0.0; if with_jac { d * d } else { 0 }],
        }
    }

    fn fuse(&mut self, s: f64, x_bar: &[f64]) -> Result<InnerCoeffs> {
        let c = InnerCoeffs::new(self.field.scheduler(), s, self.t)?;
        for ((o, b), xt) in self.stat.iter_mut().zip(x_bar).zip(self.x_t) {
            *o = c.fuse_bar * b + c.fuse_t * xt;
        }
        Ok(c)
    }

    fn velocity(&mut self, s: f64, x_bar: &[f64], out: &mut [f64]) -> Result<()> {
        let c = self.fuse(s, x_bar)?;
        self.field.oracle.denoise_at(&self.stat, 1.0, c.ratio.sqrt(), &mut self.ws, &mut self.den);
        for ((o, b), dn) in out.iter_mut().zip(x_bar).zip(&self.den) {
            *o = c.w1 * b + c.w2 * dn;
        }
        Ok(())
    }

    /// Field and tangent derivative: `dJ/ds = w1 J + w2 J_D (fuse_bar J + fuse_t I)`.
    fn velocity_tangent(&mut self, s: f64, y: &[f64], dy: &mut [f64]) -> Result<()> {
        let d = self.stat.len();
        let c = self.fuse(s, &y[..d])?;
        self.denoise_with_jac(&c);
        let jd = &self.jac;
        let (state, tangent) = y.split_at(d);
        let (dstate, dtangent) = dy.split_at_mut(d);
        for i in 0..d {
            dstate[i] = c.w1 * state[i] + c.w2 * self.den[i];
        }
        for i in 0..d {
            for j in 0..d {
                let mut acc = c.fuse_t * jd[i * d + j];
                for l in 0..d {
                    acc += c.fuse_bar * jd[i * d + l] * tangent[l * d + j];
                }
                dtangent[i * d + j] = c.w1 * tangent[i * d + j] + c.w2 * acc;
            }
        }
        Ok(())
    }

    /// Denoiser at the current statistic and its Jacobian in the statistic.
    fn denoise_with_jac(&mut self, c: &InnerCoeffs) {
        self.field.oracle.denoise_jac_at(&self.stat, 1.0, c.ratio.sqrt(), &mut self.ws, &mut self.den, &mut self.jac);
    }

    fn clean_endpoint(&mut self, s: f64, x_bar: &[f64], out: &mut [f64]) -> Result<()> {
        let c = self.fuse(s, x_bar)?;
        self.field.oracle.denoise_at(&self.stat, 1.0, c.ratio.sqrt(), &mut self.ws, out);
        Ok(())
    }

    fn clean_endpoint_tangent(
        &mut self,
        s: f64,
        x_bar: &[f64],
        tangent: &[f64],
        out: &mut [f64],
        jac_out: &mut [f64],
    ) -> Result<()> {
        let d = x_bar.len();
        let c = self.fuse(s, x_bar)?;
        self.denoise_with_jac(&c);
        out.copy_from_slice(&self.den);
        for i in 0..d {
            for j in 0..d {
                let mut acc = c.fuse_t * self.jac[i * d + j];
                for l in 0..d {
                    acc += c.fuse_bar * self.jac[i * d + l] * tangent[l * d + j];
                }
                jac_out[i * d + j] = acc;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::GaussianMixture;
    use crate::stats::sliced_w2;
    use nalgebra::{dmatrix, dvector};
    use rand::RngCore;

    fn field(mix: GaussianMixture) -> GlassField {
        GlassField::new(MixtureOracle::new(mix, Scheduler::linear()))
    }

    fn two_bumps() -> GaussianMixture {
        GaussianMixture::new(
            vec![0.4, 0.6],
            vec![dvector![-1.0, 0.5], dvector![1.0, -0.5]],
            vec![dmatrix![0.2, 0.05; 0.05, 0.3], dmatrix![0.25, 0.0; 0.0, 0.1]],
        )
        .unwrap()
    }

    #[test]
    fn statistic_recovers_shared_clean_point() {
        let sched = Scheduler::linear();
        let c = dvector![0.7, -1.3];
        let (s, t) = (0.35, 0.8);
        let st = sufficient_statistic(&sched, &(s * &c), &(t * &c), s, t).unwrap();
        assert!((st - c).amax() < 1e-14);
        let st = sufficient_statistic(&sched, &dvector![5.0, 5.0], &dvector![0.4, 0.2], 0.0, 0.5).unwrap();
        assert!((st - dvector![0.8, 0.4]).amax() < 1e-14);
    }

    #[test]
    fn statistic_rejects_double_pure_noise() {
        let sched = Scheduler::linear();
        assert!(sufficient_statistic(&sched, &dvector![0.0], &dvector![0.0], 0.0, 0.0).is_err());
    }

    #[test]
    fn statistic_is_unbiased() {
        let sched = Scheduler::linear();
        let z = 0.9;
        let (s, t) = (0.3, 0.6);
        let mut rng = rng::stream(1, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let e = rng::std_normal_vector(&mut rng, 2);
                let xb = dvector![s * z + (1.0 - s) * e[0]];
                let xt = dvector![t * z + (1.0 - t) * e[1]];
                sufficient_statistic(&sched, &xb, &xt, s, t).unwrap()[0]
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((mean - z).abs() < 4.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn fused_ratio_matches_t_star() {
        for sched in [Scheduler::linear(), Scheduler::vp()] {
            for (s, t) in [(0.2, 0.5), (0.7, 0.3), (0.9, 0.95)] {
                let c = InnerCoeffs::new(&sched, s, t).unwrap();
                let ts = sched.t_star(s, t).unwrap();
                assert!((c.ratio - sched.g(ts).unwrap()).abs() < 1e-12 * (1.0 + c.ratio));
            }
        }
    }

    #[test]
    fn coefficient_identity() {
        for sched in [Scheduler::linear(), Scheduler::vp()] {
            for s in [0.01, 0.3, 0.77, 0.99] {
                let (w1, w2) = sched.conditional_coeffs(s).unwrap();
                assert!((w2 - (sched.alpha_dot(s) - sched.alpha(s) * w1)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_reduces_to_conditional_field() {
        let c = dvector![0.3, -0.8];
        let f = field(GaussianMixture::point_mass(c.clone()).unwrap());
        let xb = dvector![1.0, 2.0];
        let s = 0.4;
        let v = f.velocity(&xb, &dvector![0.1, 0.1], s, 0.6).unwrap();
        let want = f.oracle().conditional_velocity(&xb, &c, s).unwrap();
        assert!((v - want).amax() < 1e-12);
        let end = f.sample_posterior_ode(&dvector![0.1, 0.1], 0.6, 16, 3).unwrap();
        assert!((end - c).amax() < 1e-9);
    }

    #[test]
    fn conditioning_on_pure_noise_recovers_marginal_field() {
        let f = field(two_bumps());
        let t = f.scheduler().t_min;
        let xb = dvector![0.4, 0.1];
        let s = 0.5;
        let v = f.velocity(&xb, &dvector![0.3, -0.3], s, t).unwrap();
        let u = f.oracle().velocity(&xb, s).unwrap();
        assert!((v - u).amax() < 1e-2);
    }

    #[test]
    fn velocity_matches_brute_force_bayes() {
        // Posterior given x_t, reweighted by the likelihood of x_bar at s.
        let f = field(two_bumps());
        let o = f.oracle();
        let (s, t) = (0.4, 0.5);
        let x_t = dvector![0.3, 0.2];
        let z0 = dvector![0.8, -0.2];
        let x_bar = s * &z0;
        let mut rng = rng::stream(4, 0);
        let n = 100_000;
        let zs: Vec<Vector> = (0..n).map(|_| o.sample_posterior(&x_t, t, &mut rng).unwrap()).collect();
        let logw: Vec<f64> =
            zs.iter().map(|z| -(&x_bar - s * z).norm_squared() / (2.0 * (1.0 - s) * (1.0 - s))).collect();
        let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
        let sw: f64 = w.iter().sum();
        let (w1, w2) = f.scheduler().conditional_coeffs(s).unwrap();
        let v = f.velocity(&x_bar, &x_t, s, t).unwrap();
        for i in 0..2 {
            let vals: Vec<f64> = zs.iter().map(|z| w1 * x_bar[i] + w2 * z[i]).collect();
            let mean: f64 = vals.iter().zip(&w).map(|(v, w)| v * w).sum::<f64>() / sw;
            // Delta-method standard error of a self-normalised estimate.
            let se = (vals.iter().zip(&w).map(|(v, w)| (w * (v - mean)).powi(2)).sum::<f64>()).sqrt() / sw;
            assert!((mean - v[i]).abs() < 4.0 * se, "coord {i}: {mean} vs {} (se {se})", v[i]);
        }
    }

    #[test]
    fn tangent_matches_finite_differences() {
        let f = field(two_bumps());
        let xb = dvector![0.2, -0.4];
        let x_t = dvector![0.5, 0.1];
        let t = 0.55;
        for (s, r) in [(0.0, 1.0), (0.1, 0.6), (0.3, 0.999)] {
            let (_, jac) = f.flow_with_tangent(&xb, s, r, &x_t, t, 64).unwrap();
            for j in 0..2 {
                let h = 1e-6;
                let mut p = x_t.clone();
                let mut m = x_t.clone();
                p[j] += h;
                m[j] -= h;
                let fd = (f.flow(&xb, s, r, &p, t, 64).unwrap() - f.flow(&xb, s, r, &m, t, 64).unwrap()) / (2.0 * h);
                assert!((jac.column(j) - &fd).amax() < 1e-6 * (1.0 + fd.amax()), "({s},{r}) col {j}");
            }
            let plain = f.flow(&xb, s, r, &x_t, t, 64).unwrap();
            let (with, _) = f.flow_with_tangent(&xb, s, r, &x_t, t, 64).unwrap();
            assert!((plain - with).amax() < 1e-13);
        }
    }

    #[test]
    fn flow_identity_and_ordering() {
        let f = field(two_bumps());
        let xb = dvector![0.2, -0.4];
        let x_t = dvector![0.5, 0.1];
        assert_eq!(f.flow(&xb, 0.3, 0.3, &x_t, 0.5, 8).unwrap(), xb);
        assert!(f.flow(&xb, 0.6, 0.3, &x_t, 0.5, 8).is_err());
        assert!(f.flow(&xb, 0.1, 0.3, &x_t, 0.5, 0).is_err());
    }

    #[test]
    fn endpoints_match_single_gaussian_posterior() {
        let f = GlassField::new(MixtureOracle::new(GaussianMixture::standard_normal(1).unwrap(), Scheduler::linear()));
        let x_t = dvector![1.0];
        let n = 50_000;
        let mut seeds = rng::stream(77, 0);
        let ends: Vec<Vector> =
            (0..n).map(|_| f.sample_posterior_ode(&x_t, 0.5, 128, seeds.next_u64()).unwrap()).collect();
        let mut rng = rng::stream(78, 0);
        let exact: Vec<Vector> = (0..n).map(|_| f.oracle().sample_posterior(&x_t, 0.5, &mut rng).unwrap()).collect();
        let dist = sliced_w2(&ends, &exact, 64, 5).unwrap();
        assert!(dist <= 0.02, "sliced W2 {dist}");
    }
}
