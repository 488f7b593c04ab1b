//! Classical fourth-order Runge-Kutta on a uniform grid over flat state slices.

use crate::Result;

pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Rk4 { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// Integrates `dy/ds = f(s, y)` from `s0` to `s1` in `n_steps` equal steps.
    /// `f` writes the derivative into its last argument.
    pub(crate) fn integrate<F>(&mut self, y: &mut [f64], s0: f64, s1: f64, n_steps: usize, mut f: F) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]) -> Result<()>,
    {
        let h = (s1 - s0) / n_steps as f64;
        for i in 0..n_steps {
            let s = s0 + h * i as f64;
            // Land exactly on s1 so callers can rely on the endpoint.
            let s_next = if i + 1 == n_steps { s1 } else { s + h };
            let s_mid = 0.5 * (s + s_next);
            f(s, y, &mut self.k1)?;
            axpy_into(&mut self.tmp, y, 0.5 * h, &self.k1);
            f(s_mid, &self.tmp, &mut self.k2)?;
            axpy_into(&mut self.tmp, y, 0.5 * h, &self.k2);
            f(s_mid, &self.tmp, &mut self.k3)?;
            axpy_into(&mut self.tmp, y, h, &self.k3);
            f(s_next, &self.tmp, &mut self.k4)?;
            let c = h / 6.0;
            for j in 0..y.len() {
                y[j] += c * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
            }
        }
        Ok(())
    }
}

fn axpy_into(out: &mut [f64], y: &[f64], a: f64, k: &[f64]) {
    for ((o, &yi), &ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}
