//! Schedulers and scalar time algebra.
//!
//! A scheduler fixes the Gaussian path `x_t = alpha_t z + sigma_t eps`. Time 0
//! is noise and time 1 is data for the linear and variance-preserving kinds.
//! Everything else in the crate only talks to the path through this module:
//! the noise-to-signal ratio `g`, its inverse, the fused time `t_star`, the
//! early-stop time `r_star` and the velocity coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// `alpha_t = t`, `sigma_t = 1 - t`.
    #[serde(rename = "linear")]
    Linear,
    /// `alpha_t = sqrt(t)`, `sigma_t = sqrt(1 - t)`.
    #[serde(rename = "vp")]
    VariancePreserving,
    /// `alpha_t = 1`, `sigma_t = sqrt(t)`. Noise grows with `t`, so the
    /// boundary conventions of the other two kinds do not apply.
    #[serde(rename = "ve")]
    VarianceExploding,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "vp" => Ok(ScheduleKind::VariancePreserving),
            "ve" => Ok(ScheduleKind::VarianceExploding),
            other => {
                Err(Error::InvalidArgument(format!("unknown scheduler kind {other:?} (expected linear, vp or ve)")))
            }
        }
    }
}

pub const DEFAULT_T_MIN: f64 = 1e-3;
pub const DEFAULT_T_MAX: f64 = 1.0 - 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scheduler {
    pub kind: ScheduleKind,
    pub t_min: f64,
    pub t_max: f64,
}

impl Scheduler {
    pub fn new(kind: ScheduleKind) -> Self {
        Scheduler { kind, t_min: DEFAULT_T_MIN, t_max: DEFAULT_T_MAX }
    }

    pub fn linear() -> Self {
        Self::new(ScheduleKind::Linear)
    }

    pub fn vp() -> Self {
        Self::new(ScheduleKind::VariancePreserving)
    }

    pub fn with_clamp(kind: ScheduleKind, t_min: f64, t_max: f64) -> Result<Self> {
        if !(0.0 < t_min && t_min < t_max && t_max < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clamp bounds must satisfy 0 < t_min < t_max < 1, got [{t_min}, {t_max}]"
            )));
        }
        Ok(Scheduler { kind, t_min, t_max })
    }

    /// Symmetric clamp `[c, 1 - c]`.
    pub fn with_symmetric_clamp(kind: ScheduleKind, c: f64) -> Result<Self> {
        Self::with_clamp(kind, c, 1.0 - c)
    }

    pub fn clamp(&self, t: f64) -> f64 {
        t.clamp(self.t_min, self.t_max)
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t,
            ScheduleKind::VariancePreserving => t.max(0.0).sqrt(),
            ScheduleKind::VarianceExploding => 1.0,
        }
    }

    pub fn sigma(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0 - t,
            ScheduleKind::VariancePreserving => (1.0 - t).max(0.0).sqrt(),
            ScheduleKind::VarianceExploding => t.max(0.0).sqrt(),
        }
    }

    /// `d alpha / dt`; infinite at the VP endpoint `t = 0`.
    pub fn alpha_dot(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => 1.0,
            ScheduleKind::VariancePreserving => 0.5 / t.sqrt(),
            ScheduleKind::VarianceExploding => 0.0,
        }
    }

    /// `d sigma / dt`; infinite at the VP endpoint `t = 1` and the VE endpoint `t = 0`.
    pub fn sigma_dot(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => -1.0,
            ScheduleKind::VariancePreserving => -0.5 / (1.0 - t).sqrt(),
            ScheduleKind::VarianceExploding => 0.5 / t.sqrt(),
        }
    }

    /// Noise-to-signal ratio `sigma_t^2 / alpha_t^2`.
    pub fn g(&self, t: f64) -> Result<f64> {
        check_unit(t)?;
        let a = self.alpha(t);
        if a == 0.0 {
            return Err(Error::domain(format!("g({t}) is undefined where alpha = 0")));
        }
        let s = self.sigma(t);
        Ok(match self.kind {
            ScheduleKind::Linear => {
                let q = s / a;
                q * q
            }
            ScheduleKind::VariancePreserving => (1.0 - t) / t,
            ScheduleKind::VarianceExploding => t,
        })
    }

    /// Inverse of [`Scheduler::g`]. `y = 0` maps to the clean time and
    /// `y = inf` to the pure-noise time.
    pub fn g_inv(&self, y: f64) -> Result<f64> {
        if y.is_nan() || y < 0.0 {
            return Err(Error::domain(format!("g_inv requires y >= 0, got {y}")));
        }
        Ok(match self.kind {
            ScheduleKind::Linear => {
                if y.is_infinite() {
                    0.0
                } else {
                    1.0 / (1.0 + y.sqrt())
                }
            }
            ScheduleKind::VariancePreserving => {
                if y.is_infinite() {
                    0.0
                } else {
                    1.0 / (1.0 + y)
                }
            }
            ScheduleKind::VarianceExploding => y,
        })
    }

    /// Time whose noise-to-signal ratio fuses the observations at `s` and `t`:
    /// `1/g(t*) = 1/g(s) + 1/g(t)`.
    pub fn t_star(&self, s: f64, t: f64) -> Result<f64> {
        check_unit(s)?;
        check_unit(t)?;
        let (a_s, s_s) = (self.alpha(s), self.sigma(s));
        let (a_t, s_t) = (self.alpha(t), self.sigma(t));
        // A clean observation dominates; pure noise contributes nothing.
        if s_s == 0.0 || s_t == 0.0 {
            return self.g_inv(0.0);
        }
        if a_s == 0.0 && a_t > 0.0 {
            return Ok(t);
        }
        if a_t == 0.0 && a_s > 0.0 {
            return Ok(s);
        }
        let (s2, t2) = (s_s * s_s, s_t * s_t);
        let den = t2 * a_s * a_s + a_t * a_t * s2;
        if den <= 0.0 {
            return Err(Error::domain(format!("t_star({s}, {t}): both observations are pure noise")));
        }
        self.g_inv(t2 * s2 / den)
    }

    /// Inner time at which stopping the posterior flow and fusing back with
    /// `x_t` lands exactly on outer time `t_prime`, i.e. `t_star(r_star, t) = t_prime`.
    pub fn r_star(&self, t: f64, t_prime: f64) -> Result<f64> {
        let gt = self.g(t)?;
        let gtp = self.g(t_prime)?;
        if gtp == 0.0 {
            return self.g_inv(0.0);
        }
        if gt <= gtp {
            return Err(Error::domain(format!(
                "r_star({t}, {t_prime}) requires t_prime to be strictly less noisy than t"
            )));
        }
        self.g_inv(gt * gtp / (gt - gtp))
    }

    /// `sigma_t * d sigma / dt`, finite at every endpoint.
    pub fn sigma_sigma_dot(&self, t: f64) -> f64 {
        match self.kind {
            ScheduleKind::Linear => t - 1.0,
            ScheduleKind::VariancePreserving => -0.5,
            ScheduleKind::VarianceExploding => 0.5,
        }
    }

    /// `(a_t, b_t)` such that `u_t(x) = a_t x + b_t grad log p_t(x)`.
    pub fn velocity_coeffs(&self, t: f64) -> Result<(f64, f64)> {
        check_unit(t)?;
        let a = self.alpha(t);
        if a == 0.0 {
            return Err(Error::domain(format!("velocity coefficients undefined at alpha({t}) = 0")));
        }
        let s = self.sigma(t);
        let ad = self.alpha_dot(t);
        Ok((ad / a, s * s * ad / a - self.sigma_sigma_dot(t)))
    }

    /// Coefficients `(w1, w2)` of the conditional field
    /// `u_t(x|z) = w1 x + w2 z`, which also weight the posterior flow.
    pub fn conditional_coeffs(&self, t: f64) -> Result<(f64, f64)> {
        check_unit(t)?;
        let s = self.sigma(t);
        if s == 0.0 {
            return Err(Error::domain(format!("conditional field undefined at sigma({t}) = 0")));
        }
        let w1 = self.sigma_dot(t) / s;
        Ok((w1, self.alpha_dot(t) - self.alpha(t) * w1))
    }

    /// Renoising time whose noise-to-signal ratio is `lambda` times that at `t`.
    pub fn snr_shift_time(&self, t: f64, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::domain(format!("SNR factor must be positive, got {lambda}")));
        }
        self.g_inv(lambda * self.g(t)?)
    }
}

impl Default for Scheduler {
    fn default() -> Self {
        Self::linear()
    }
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::domain(format!("time {t} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn boundary_and_midpoint_values() {
        let lin = Scheduler::linear();
        assert_eq!(lin.alpha(0.0), 0.0);
        assert_eq!(lin.sigma(0.0), 1.0);
        assert_eq!(lin.alpha(1.0), 1.0);
        assert_eq!(lin.sigma(1.0), 0.0);
        assert_eq!(lin.alpha(0.5), 0.5);
        assert_eq!(lin.sigma(0.5), 0.5);
        let vp = Scheduler::vp();
        assert!(close(vp.alpha(0.25), 0.5, 1e-15));
        assert_eq!(vp.alpha(0.0), 0.0);
        assert_eq!(vp.sigma(1.0), 0.0);
    }

    #[test]
    fn g_closed_forms() {
        let lin = Scheduler::linear();
        assert!(close(lin.g(0.5).unwrap(), 1.0, 1e-15));
        assert!(close(lin.g_inv(1.0).unwrap(), 0.5, 1e-15));
        assert!(close(lin.g(0.2).unwrap(), 16.0, 1e-12));
        assert_eq!(Scheduler::vp().g_inv(0.0).unwrap(), 1.0);
        assert_eq!(Scheduler::vp().g(1.0).unwrap(), 0.0);
        assert!(matches!(lin.g(0.0), Err(Error::Domain(_))));
        assert!(lin.g_inv(-1.0).is_err());
    }

    #[test]
    fn ve_g_round_trip() {
        let ve = Scheduler::new(ScheduleKind::VarianceExploding);
        // VE time lives in [0, 1], so g only reaches ratios up to 1.
        for &y in &[1e-6, 1e-3, 0.3, 0.77, 1.0] {
            let t = ve.g_inv(y).unwrap();
            assert!(((ve.g(t).unwrap() - y) / y).abs() <= 1e-12);
        }
    }

    #[test]
    fn t_star_special_cases() {
        let lin = Scheduler::linear();
        for &t in &[0.1, 0.37, 0.9] {
            assert_eq!(lin.t_star(0.0, t).unwrap(), t);
            assert_eq!(lin.t_star(1.0, t).unwrap(), 1.0);
        }
        let expected = 1.0 / (1.0 + 1.0 / 2f64.sqrt());
        assert!(close(lin.t_star(0.5, 0.5).unwrap(), expected, 1e-12));
        assert!(close(expected, 0.585786, 1e-6));
        assert!(lin.t_star(0.0, 0.0).is_err());
    }

    #[test]
    fn r_star_examples() {
        let lin = Scheduler::linear();
        for &t in &[0.05, 0.5, 0.95] {
            assert_eq!(lin.r_star(t, 1.0).unwrap(), 1.0);
        }
        let expected = 1.0 / (1.0 + (144.0f64 / 7.0).sqrt());
        assert!(close(lin.r_star(0.2, 0.25).unwrap(), expected, 1e-12));
        assert!(close(expected, 0.180650, 1e-6));
        assert!(lin.r_star(0.5, 0.5 + 1e-6).unwrap() < 1e-2);
        assert!(matches!(lin.r_star(0.5, 0.5), Err(Error::Domain(_))));
        assert!(lin.r_star(0.6, 0.5).is_err());
    }

    #[test]
    fn velocity_coefficients() {
        let lin = Scheduler::linear();
        let (a, b) = lin.velocity_coeffs(0.5).unwrap();
        assert!(close(a, 2.0, 1e-15));
        assert!(close(b, 1.0, 1e-15));
        let vp = Scheduler::vp();
        for &t in &[0.1, 0.5, 1.0 - 1e-9, 1.0] {
            let (a, b) = vp.velocity_coeffs(t).unwrap();
            assert!(close(a, 0.5 / t, 1e-12));
            assert!(close(b, 0.5 / t, 1e-12));
        }
        assert!(lin.velocity_coeffs(0.0).is_err());
    }

    #[test]
    fn snr_shift_examples() {
        let lin = Scheduler::linear();
        assert!(close(lin.snr_shift_time(0.3, 1.0).unwrap(), 0.3, 1e-15));
        assert!(close(lin.snr_shift_time(0.5, 4.0).unwrap(), 1.0 / 3.0, 1e-15));
        assert!(close(Scheduler::vp().snr_shift_time(0.5, 20.0).unwrap(), 1.0 / 21.0, 1e-15));
        assert!(lin.snr_shift_time(0.5, 0.0).is_err());
    }

    /// Five-point central difference; the VP endpoints make the three-point
    /// stencil's truncation error exceed 1e-8 near the clamp.
    fn central_diff(f: impl Fn(f64) -> f64, t: f64, h: f64) -> f64 {
        (f(t - 2.0 * h) - 8.0 * f(t - h) + 8.0 * f(t + h) - f(t + 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn derivatives_match_central_differences() {
        for sched in [Scheduler::linear(), Scheduler::vp()] {
            let n = 500;
            for i in 0..=n {
                let t = sched.t_min + (sched.t_max - sched.t_min) * i as f64 / n as f64;
                let fd_a = central_diff(|u| sched.alpha(u), t, 1e-6);
                let fd_s = central_diff(|u| sched.sigma(u), t, 1e-6);
                assert!((sched.alpha_dot(t) - fd_a).abs() <= 1e-8, "{:?} alpha at {t}", sched.kind);
                assert!((sched.sigma_dot(t) - fd_s).abs() <= 1e-8, "{:?} sigma at {t}", sched.kind);
            }
        }
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("vp".parse::<ScheduleKind>().unwrap(), ScheduleKind::VariancePreserving);
        assert!("cosine".parse::<ScheduleKind>().is_err());
    }

    fn schedulers() -> impl Strategy<Value = Scheduler> {
        prop_oneof![Just(Scheduler::linear()), Just(Scheduler::vp())]
    }

    proptest! {
        #[test]
        fn g_is_strictly_decreasing(sched in schedulers(), a in 0.001f64..0.999, b in 0.001f64..0.999) {
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(sched.g(lo).unwrap() > sched.g(hi).unwrap());
        }

        #[test]
        fn g_inverse_round_trip(sched in schedulers(), log_y in -6.0f64..6.0) {
            let y = 10f64.powf(log_y);
            let t = sched.g_inv(y).unwrap();
            let back = sched.g(t).unwrap();
            // A time near 1 is resolved only to one ulp, which bounds the
            // attainable relative accuracy of small ratios.
            let dg = (sched.g(t - f64::EPSILON).unwrap() - back).abs();
            prop_assert!(((back - y) / y).abs() <= 1e-12_f64.max(4.0 * dg / y));
        }

        #[test]
        fn t_star_is_snr_additive_and_dominant(sched in schedulers(), s in 0.01f64..0.99, t in 0.01f64..0.99) {
            let ts = sched.t_star(s, t).unwrap();
            let lhs = 1.0 / sched.g(ts).unwrap();
            let rhs = 1.0 / sched.g(s).unwrap() + 1.0 / sched.g(t).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs);
            prop_assert!(ts >= s.max(t));
        }

        #[test]
        fn r_star_round_trip(sched in schedulers(), a in 0.01f64..0.99, b in 0.01f64..0.99) {
            prop_assume!((a - b).abs() > 1e-6);
            let (t, tp) = if a < b { (a, b) } else { (b, a) };
            let r = sched.r_star(t, tp).unwrap();
            prop_assert!((sched.t_star(r, t).unwrap() - tp).abs() <= 1e-10);
        }

        #[test]
        fn r_star_increasing_in_t_prime(sched in schedulers(), t in 0.01f64..0.9) {
            let grid: Vec<f64> = (1..=50).map(|i| (t + (1.0 - t) * i as f64 / 50.0).min(1.0)).collect();
            let vals: Vec<f64> = grid.iter().map(|&tp| sched.r_star(t, tp).unwrap()).collect();
            prop_assert!(vals.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
