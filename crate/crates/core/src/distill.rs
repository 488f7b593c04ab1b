//! A small trainable posterior diamond map and the flow-map losses.
//!
//! The student predicts an average velocity and realises the map as
//! `X_{s,r}(x_bar | x_t, t) = x_bar + (r - s) v(x_bar, x_t, s, r - s, t)`, so
//! `X_{s,s}` is the identity for every parameter vector. Training regresses
//! the student onto RK4 rollouts of the oracle posterior field.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrixView;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{check_dim, Error};
use crate::glass::GlassField;
use crate::maps::PosteriorDiamondMap;
use crate::mixture::MixtureOracle;
use crate::rng;
use crate::sched::{ScheduleKind, Scheduler};
use crate::{Matrix, Result, Vector};

/// Layer widths and time-embedding size of a [`SmallNet`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub dim: usize,
    pub hidden: Vec<usize>,
    /// Frequencies per time input; each time contributes `2 n_freq + 1` features.
    pub n_freq: usize,
}

impl Architecture {
    pub fn new(dim: usize, hidden: Vec<usize>, n_freq: usize) -> Result<Self> {
        if dim == 0 || dim > crate::MAX_DIM {
            return Err(Error::InvalidArgument(format!("dimension {dim} outside 1..={}", crate::MAX_DIM)));
        }
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::InvalidArgument("need at least one non-empty hidden layer".into()));
        }
        Ok(Architecture { dim, hidden, n_freq })
    }

    pub fn input_dim(&self) -> usize {
        2 * self.dim + 3 * (2 * self.n_freq + 1)
    }

    /// `(n_in, n_out)` per layer, output layer last.
    fn layers(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Tanh MLP over a flat parameter vector. Each layer stores its weight
/// matrix column-major (`n_out x n_in`) followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallNet {
    arch: Architecture,
    params: Vec<f64>,
}

/// Inputs of one evaluation.
#[derive(Clone, Copy, Debug)]
pub struct NetInput<'a> {
    pub x_bar: &'a Vector,
    pub x_t: &'a Vector,
    pub s: f64,
    pub r: f64,
    pub t: f64,
}

impl SmallNet {
    /// Weights `N(0, 1/n_in)`, zero biases, output layer scaled by 0.1.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let mut rng = rng::stream(seed, 0);
        let layers = arch.layers();
        let mut params = Vec::with_capacity(arch.n_params());
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            let scale = if l + 1 == layers.len() { 0.1 } else { 1.0 } / (n_in as f64).sqrt();
            for _ in 0..n_in * n_out {
                let w: f64 = StandardNormal.sample(&mut rng);
                params.push(scale * w);
            }
            params.extend(std::iter::repeat_n(0.0, n_out));
        }
        SmallNet { arch, params }
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.n_params() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameters, got {}",
                arch.n_params(),
                params.len()
            )));
        }
        Ok(SmallNet { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check(&self, input: &NetInput) -> Result<()> {
        check_dim(self.arch.dim, input.x_bar.len())?;
        check_dim(self.arch.dim, input.x_t.len())
    }

    fn features_into(&self, input: &NetInput, out: &mut [f64]) {
        let d = self.arch.dim;
        out[..d].copy_from_slice(input.x_bar.as_slice());
        out[d..2 * d].copy_from_slice(input.x_t.as_slice());
        let mut at = 2 * d;
        for tau in [input.s, input.r - input.s, input.t] {
            out[at] = tau;
            for k in 1..=self.arch.n_freq {
                let w = PI * k as f64;
                out[at + 2 * k - 1] = (w * tau).sin();
                out[at + 2 * k] = (w * tau).cos();
            }
            at += 2 * self.arch.n_freq + 1;
        }
    }

    /// Feature tangent for unit rates `(ds, d(r - s), dt)` of the three times.
    fn time_tangent_into(&self, input: &NetInput, rates: [f64; 3], out: &mut [f64]) {
        let mut at = 2 * self.arch.dim;
        for (tau, rate) in [input.s, input.r - input.s, input.t].into_iter().zip(rates) {
            out[at] = rate;
            for k in 1..=self.arch.n_freq {
                let w = PI * k as f64;
                out[at + 2 * k - 1] = rate * w * (w * tau).cos();
                out[at + 2 * k] = -rate * w * (w * tau).sin();
            }
            at += 2 * self.arch.n_freq + 1;
        }
    }

    fn weights(&self, offset: usize, n_in: usize, n_out: usize) -> (DMatrixView<'_, f64>, &[f64]) {
        let w = DMatrixView::from_slice(&self.params[offset..offset + n_in * n_out], n_out, n_in);
        (w, &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out])
    }

    /// Activations of every layer for a column batch; the last entry is the output.
    fn forward_batch(&self, input: Matrix) -> Vec<Matrix> {
        let layers = self.arch.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input);
        let mut offset = 0;
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            let (w, b) = self.weights(offset, n_in, n_out);
            let mut z = w * acts.last().expect("input present");
            for mut col in z.column_iter_mut() {
                for (v, bias) in col.iter_mut().zip(b) {
                    *v += bias;
                }
            }
            if l + 1 < layers.len() {
                z.apply(|v| *v = v.tanh());
            }
            acts.push(z);
            offset += n_in * n_out + n_out;
        }
        acts
    }

    /// Average velocity `v(x_bar, x_t, s, r - s, t)`.
    pub fn velocity(&self, input: &NetInput) -> Result<Vector> {
        self.check(input)?;
        let mut f = Matrix::zeros(self.arch.input_dim(), 1);
        self.features_into(input, f.as_mut_slice());
        let out = self.forward_batch(f).pop().expect("output layer");
        Ok(Vector::from_column_slice(out.as_slice()))
    }

    /// Velocity and its directional derivatives along the feature tangents
    /// in the columns of `tangents`.
    fn velocity_tangents(&self, input: &NetInput, tangents: Matrix) -> (Vector, Matrix) {
        let mut a = Vector::zeros(self.arch.input_dim());
        self.features_into(input, a.as_mut_slice());
        let mut da = tangents;
        let layers = self.arch.layers();
        let mut offset = 0;
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            let (w, b) = self.weights(offset, n_in, n_out);
            let mut z = w * &a;
            for (v, bias) in z.iter_mut().zip(b) {
                *v += bias;
            }
            let mut dz = w * &da;
            if l + 1 < layers.len() {
                z.apply(|v| *v = v.tanh());
                for (i, zi) in z.iter().enumerate() {
                    let slope = 1.0 - zi * zi;
                    dz.row_mut(i).scale_mut(slope);
                }
            }
            a = z;
            da = dz;
            offset += n_in * n_out + n_out;
        }
        (a, da)
    }

    /// Mean squared error of `X = x_bar + (r - s) v` against `targets`, and its
    /// gradient in the parameters.
    pub fn regression_loss_and_grad(&self, inputs: &[NetInput], targets: &[Vector]) -> Result<(f64, Vec<f64>)> {
        if inputs.len() != targets.len() || inputs.is_empty() {
            return Err(Error::InvalidArgument("need matching, non-empty inputs and targets".into()));
        }
        let n = inputs.len();
        let d = self.arch.dim;
        let mut f = Matrix::zeros(self.arch.input_dim(), n);
        for (j, inp) in inputs.iter().enumerate() {
            self.check(inp)?;
            check_dim(d, targets[j].len())?;
            self.features_into(inp, f.column_mut(j).as_mut_slice());
        }
        let acts = self.forward_batch(f);
        let out = acts.last().expect("output layer");
        let mut d_out = Matrix::zeros(d, n);
        let mut loss = 0.0;
        for (j, (inp, target)) in inputs.iter().zip(targets).enumerate() {
            let span = inp.r - inp.s;
            for i in 0..d {
                let resid = inp.x_bar[i] + span * out[(i, j)] - target[i];
                loss += resid * resid;
                d_out[(i, j)] = 2.0 * span * resid / n as f64;
            }
        }
        Ok((loss / n as f64, self.backward(&acts, d_out)))
    }

    fn backward(&self, acts: &[Matrix], d_out: Matrix) -> Vec<f64> {
        let layers = self.arch.layers();
        let mut grad = vec![0.0; self.params.len()];
        let mut offsets = Vec::with_capacity(layers.len());
        let mut off = 0;
        for &(n_in, n_out) in &layers {
            offsets.push(off);
            off += n_in * n_out + n_out;
        }
        let mut dz = d_out;
        for l in (0..layers.len()).rev() {
            let (n_in, n_out) = layers[l];
            let a_prev = &acts[l];
            let dw = &dz * a_prev.transpose();
            let o = offsets[l];
            grad[o..o + n_in * n_out].copy_from_slice(dw.as_slice());
            for (i, g) in grad[o + n_in * n_out..o + n_in * n_out + n_out].iter_mut().enumerate() {
                *g = dz.row(i).sum();
            }
            if l > 0 {
                let (w, _) = self.weights(o, n_in, n_out);
                let mut da = w.transpose() * &dz;
                da.zip_apply(a_prev, |g, a| *g *= 1.0 - a * a);
                dz = da;
            }
        }
        grad
    }
}

/// A trained [`SmallNet`] viewed as a posterior diamond map.
#[derive(Clone, Debug)]
pub struct DistilledDiamondMap {
    net: SmallNet,
    sched: Scheduler,
}

impl DistilledDiamondMap {
    pub fn new(net: SmallNet, sched: Scheduler) -> Self {
        DistilledDiamondMap { net, sched }
    }

    pub fn net(&self) -> &SmallNet {
        &self.net
    }

    fn check_times(s: f64, r: f64) -> Result<()> {
        if !(0.0 <= s && s <= r && r <= 1.0) {
            return Err(Error::domain(format!("map times need 0 <= s <= r <= 1, got ({s}, {r})")));
        }
        Ok(())
    }
}

impl PosteriorDiamondMap for DistilledDiamondMap {
    fn dim(&self) -> usize {
        self.net.arch.dim
    }

    fn scheduler(&self) -> &Scheduler {
        &self.sched
    }

    fn apply(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector> {
        Self::check_times(s, r)?;
        if r == s {
            check_dim(self.dim(), x_bar.len())?;
            return Ok(x_bar.clone());
        }
        let v = self.net.velocity(&NetInput { x_bar, x_t, s, r, t })?;
        Ok(x_bar + (r - s) * v)
    }

    fn apply_with_tangent(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<(Vector, Matrix)> {
        Self::check_times(s, r)?;
        let input = NetInput { x_bar, x_t, s, r, t };
        self.net.check(&input)?;
        let d = self.dim();
        let mut tangents = Matrix::zeros(self.net.arch.input_dim(), d);
        for j in 0..d {
            tangents[(d + j, j)] = 1.0;
        }
        let (v, dv) = self.net.velocity_tangents(&input, tangents);
        Ok((x_bar + (r - s) * v, (r - s) * dv))
    }

    fn d_dr(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64) -> Result<Vector> {
        Self::check_times(s, r)?;
        let input = NetInput { x_bar, x_t, s, r, t };
        self.net.check(&input)?;
        let mut tangent = Matrix::zeros(self.net.arch.input_dim(), 1);
        self.net.time_tangent_into(&input, [0.0, 1.0, 0.0], tangent.as_mut_slice());
        let (v, dv) = self.net.velocity_tangents(&input, tangent);
        Ok(v + (r - s) * dv.column(0))
    }

    fn jvp_s_xbar(&self, x_bar: &Vector, s: f64, r: f64, x_t: &Vector, t: f64, dir: &Vector) -> Result<Vector> {
        Self::check_times(s, r)?;
        let input = NetInput { x_bar, x_t, s, r, t };
        self.net.check(&input)?;
        check_dim(self.dim(), dir.len())?;
        let d = self.dim();
        let mut tangent = Matrix::zeros(self.net.arch.input_dim(), 1);
        self.net.time_tangent_into(&input, [1.0, -1.0, 0.0], tangent.as_mut_slice());
        tangent.rows_mut(0, d).copy_from(dir);
        let (v, dv) = self.net.velocity_tangents(&input, tangent);
        Ok(dir - v + (r - s) * dv.column(0))
    }
}

/// Adam with per-parameter second-moment scaling.
#[derive(Clone, Debug)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// `lr0 (1 + cos(pi k / n)) / 2`.
pub fn cosine_lr(lr0: f64, k: usize, n: usize) -> f64 {
    0.5 * lr0 * (1.0 + (PI * k as f64 / n.max(1) as f64).cos())
}

/// One training or evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillSample {
    pub z: Vector,
    pub x_bar: Vector,
    pub s: f64,
    pub r: f64,
    pub x_t: Vector,
    pub t: f64,
}

impl DistillSample {
    pub fn input(&self) -> NetInput<'_> {
        NetInput { x_bar: &self.x_bar, x_t: &self.x_t, s: self.s, r: self.r, t: self.t }
    }
}

/// How `(s, r)` pairs are drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TimeSampling {
    /// Uniform on `{t_min <= s <= r <= t_max}`.
    Triangle,
    /// A third each of the full span `(0, 1)`, early stops `(0, r)` and the triangle.
    #[default]
    Anchored,
}

pub type DistillBatch = Vec<DistillSample>;

/// Draws `z ~ p_data`, `t` uniform in the clamp, `x_t ~ p_t(. | z)` and
/// `x_bar ~ p_s(. | z)` with the same `z`.
pub fn sample_batch(oracle: &MixtureOracle, n: usize, sampling: TimeSampling, seed: u64) -> DistillBatch {
    let sched = *oracle.scheduler();
    let (lo, hi) = (sched.t_min, sched.t_max);
    (0..n)
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let z = oracle.mixture().sample(&mut rng);
            let t = rng.random_range(lo..hi);
            let triangle = |rng: &mut rng::StreamRng| {
                let (a, b): (f64, f64) = (rng.random_range(lo..hi), rng.random_range(lo..hi));
                (a.min(b), a.max(b))
            };
            let (s, r) = match sampling {
                TimeSampling::Triangle => triangle(&mut rng),
                TimeSampling::Anchored => match i % 3 {
                    0 => (0.0, 1.0),
                    1 => (0.0, rng.random_range(lo..hi)),
                    _ => triangle(&mut rng),
                },
            };
            let noise = |rng: &mut rng::StreamRng| rng::std_normal_vector(rng, z.len());
            let x_t = sched.alpha(t) * &z + sched.sigma(t) * noise(&mut rng);
            let x_bar = sched.alpha(s) * &z + sched.sigma(s) * noise(&mut rng);
            DistillSample { z, x_bar, s, r, x_t, t }
        })
        .collect()
}

/// RK4 rollouts of the oracle posterior field for every sample.
pub fn teacher_targets(field: &GlassField, batch: &[DistillSample], n_steps: usize) -> Result<Vec<Vector>> {
    batch.par_iter().map(|p| field.flow(&p.x_bar, p.s, p.r, &p.x_t, p.t, n_steps)).collect()
}

/// Mean `||X_{s,r}(x_bar | x_t, t) - target||^2` of any map.
pub fn rollout_loss_eval(
    student: &dyn PosteriorDiamondMap,
    batch: &[DistillSample],
    targets: &[Vector],
) -> Result<f64> {
    if batch.len() != targets.len() || batch.is_empty() {
        return Err(Error::InvalidArgument("need matching, non-empty batch and targets".into()));
    }
    let total: f64 = batch
        .par_iter()
        .zip(targets)
        .map(|(p, y)| Ok((student.apply(&p.x_bar, p.s, p.r, &p.x_t, p.t)? - y).norm_squared()))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / batch.len() as f64)
}

/// Mean `||d/dr X_{s,r} - u_r(X_{s,r} | x_t, t)||^2` against the posterior field.
pub fn lagrangian_loss_eval(
    student: &dyn PosteriorDiamondMap,
    field: &GlassField,
    batch: &[DistillSample],
) -> Result<f64> {
    mean_sq(batch, |p| {
        let x = student.apply(&p.x_bar, p.s, p.r, &p.x_t, p.t)?;
        let dx = student.d_dr(&p.x_bar, p.s, p.r, &p.x_t, p.t)?;
        Ok(dx - field.velocity(&x, &p.x_t, p.r, p.t)?)
    })
}

/// Mean `||d/ds X_{s,r} + (dX_{s,r}/dx_bar) u_s(x_bar | x_t, t)||^2`, one
/// forward tangent per sample.
pub fn eulerian_loss_eval(
    student: &dyn PosteriorDiamondMap,
    field: &GlassField,
    batch: &[DistillSample],
) -> Result<f64> {
    mean_sq(batch, |p| {
        let v = field.velocity(&p.x_bar, &p.x_t, p.s, p.t)?;
        student.jvp_s_xbar(&p.x_bar, p.s, p.r, &p.x_t, p.t, &v)
    })
}

fn mean_sq<F>(batch: &[DistillSample], residual: F) -> Result<f64>
where
    F: Fn(&DistillSample) -> Result<Vector> + Sync,
{
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let sq: Vec<f64> = batch.par_iter().map(|p| Ok(residual(p)?.norm_squared())).collect::<Result<_>>()?;
    Ok(sq.iter().sum::<f64>() / batch.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub n_iters: usize,
    pub batch: usize,
    /// Initial Adam step size, decayed by a cosine to zero.
    pub lr: f64,
    /// RK4 steps of each teacher rollout.
    pub teacher_steps: usize,
    pub sampling: TimeSampling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_iters: 20_000,
            batch: 64,
            lr: 1e-3,
            teacher_steps: 32,
            sampling: TimeSampling::Anchored,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Means over consecutive windows of `width` iterations.
    pub fn windowed(&self, width: usize) -> Vec<f64> {
        self.losses.chunks(width.max(1)).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    }
}

/// Regresses the student map onto teacher rollouts with Adam. Fails with
/// [`Error::Divergence`] once a batch loss exceeds ten times the first one.
pub fn rollout_regression_train(
    field: &GlassField,
    mut net: SmallNet,
    cfg: &TrainConfig,
) -> Result<(SmallNet, TrainReport)> {
    check_dim(field.dim(), net.arch.dim)?;
    if cfg.n_iters == 0 || cfg.batch == 0 || cfg.teacher_steps == 0 || !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument("n_iters, batch, teacher_steps and lr must be positive".into()));
    }
    let mut adam = Adam::new(net.params.len());
    let mut losses = Vec::with_capacity(cfg.n_iters);
    for it in 0..cfg.n_iters {
        let batch = sample_batch(field.oracle(), cfg.batch, cfg.sampling, rng::derive_seed(cfg.seed, &[it as u64]));
        let targets = teacher_targets(field, &batch, cfg.teacher_steps)?;
        let inputs: Vec<NetInput> = batch.iter().map(|p| p.input()).collect();
        let (loss, grad) = net.regression_loss_and_grad(&inputs, &targets)?;
        let initial = losses.first().copied().unwrap_or(loss);
        if !loss.is_finite() || loss > 10.0 * initial {
            return Err(Error::Divergence { iteration: it, loss, initial });
        }
        losses.push(loss);
        adam.update(&mut net.params, &grad, cosine_lr(cfg.lr, it, cfg.n_iters));
        if (it + 1) % 1000 == 0 {
            log::info!("distill iteration {}: loss {loss:.4e}", it + 1);
        }
    }
    log::info!("distill finished: final loss {:.4e}", losses.last().copied().unwrap_or(f64::NAN));
    Ok((net, TrainReport { losses }))
}

const MAGIC: &[u8; 8] = b"DIAMAPNN";
const VERSION: u64 = 1;

fn kind_code(kind: ScheduleKind) -> u64 {
    match kind {
        ScheduleKind::Linear => 0,
        ScheduleKind::VariancePreserving => 1,
        ScheduleKind::VarianceExploding => 2,
    }
}

impl DistilledDiamondMap {
    /// Little-endian checkpoint: magic and version, scheduler, architecture,
    /// then the flat parameters as `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let arch = &self.net.arch;
        let mut out = Vec::with_capacity(16 + 8 * (8 + arch.hidden.len() + self.net.params.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&kind_code(self.sched.kind).to_le_bytes());
        out.extend_from_slice(&self.sched.t_min.to_le_bytes());
        out.extend_from_slice(&self.sched.t_max.to_le_bytes());
        for v in [arch.dim, arch.n_freq, arch.hidden.len()] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for &w in &arch.hidden {
            out.extend_from_slice(&(w as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.net.params.len() as u64).to_le_bytes());
        for p in &self.net.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut rd, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u64(&mut rd)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = match read_u64(&mut rd)? {
            0 => ScheduleKind::Linear,
            1 => ScheduleKind::VariancePreserving,
            2 => ScheduleKind::VarianceExploding,
            k => return Err(Error::Checkpoint(format!("unknown scheduler code {k}"))),
        };
        let t_min = f64::from_bits(read_u64(&mut rd)?);
        let t_max = f64::from_bits(read_u64(&mut rd)?);
        let sched = Scheduler::with_clamp(kind, t_min, t_max).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let dim = read_len(&mut rd)?;
        let n_freq = read_len(&mut rd)?;
        let n_hidden = read_len(&mut rd)?;
        if n_hidden > 64 {
            return Err(Error::Checkpoint(format!("implausible layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden).map(|_| read_len(&mut rd)).collect::<Result<Vec<_>>>()?;
        let arch = Architecture::new(dim, hidden, n_freq).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let n = read_len(&mut rd)?;
        if n != arch.n_params() || rd.len() != 8 * n {
            return Err(Error::Checkpoint(format!(
                "parameter block holds {} bytes, architecture needs {} parameters",
                rd.len(),
                arch.n_params()
            )));
        }
        let params = (0..n).map(|_| read_u64(&mut rd).map(f64::from_bits)).collect::<Result<Vec<_>>>()?;
        Ok(DistilledDiamondMap { net: SmallNet { arch, params }, sched })
    }

    /// Writes the checkpoint through a temporary file and a rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(rd: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    rd.read_exact(buf).map_err(|_| Error::Checkpoint("truncated checkpoint".into()))
}

fn read_u64(rd: &mut &[u8]) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(rd, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_len(rd: &mut &[u8]) -> Result<usize> {
    let v = read_u64(rd)?;
    usize::try_from(v).ok().filter(|&n| n <= 1 << 32).ok_or_else(|| Error::Checkpoint(format!("implausible size {v}")))
}
