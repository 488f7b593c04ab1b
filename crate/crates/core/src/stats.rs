//! Sample-based distances and tests.

use rand::Rng;

use crate::error::{check_dim, Error};
use crate::rng;
use crate::{Matrix, Result, Vector};

/// Samples with a label and the seed that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub samples: Vec<Vector>,
    pub label: String,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(samples: Vec<Vector>, label: impl Into<String>, seed: Option<u64>) -> Result<Self> {
        if samples.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
        if let Some(first) = samples.first() {
            for s in &samples {
                check_dim(first.len(), s.len())?;
            }
        }
        Ok(SampleSet { samples, label: label.into(), seed })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples.first().map_or(0, |s| s.len())
    }

    pub fn mean(&self) -> Vector {
        mean(&self.samples)
    }

    pub fn covariance(&self) -> Matrix {
        covariance(&self.samples)
    }
}

pub fn mean(samples: &[Vector]) -> Vector {
    let d = samples.first().map_or(0, |s| s.len());
    samples.iter().fold(Vector::zeros(d), |acc, s| acc + s) / samples.len() as f64
}

/// Unbiased sample covariance.
pub fn covariance(samples: &[Vector]) -> Matrix {
    let mu = mean(samples);
    let d = mu.len();
    let n = samples.len() as f64;
    samples.iter().fold(Matrix::zeros(d, d), |acc, s| {
        let c = s - &mu;
        acc + &c * c.transpose()
    }) / (n - 1.0)
}

fn check_pair(a: &[Vector], b: &[Vector]) -> Result<usize> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("distances need at least two samples per set".into()));
    }
    let d = a[0].len();
    for s in a.iter().chain(b) {
        check_dim(d, s.len())?;
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("samples must be finite".into()));
        }
    }
    Ok(d)
}

/// `int_0^1 |Fa^{-1}(u) - Fb^{-1}(u)|^p du` for sorted samples, exact for
/// empirical quantile functions of any sizes.
fn quantile_cost(a: &[f64], b: &[f64], p: i32) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut cost = 0.0;
    while i < na && j < nb {
        let next_a = (i + 1) as f64 / na as f64;
        let next_b = (j + 1) as f64 / nb as f64;
        let next = next_a.min(next_b);
        cost += (next - u) * (a[i] - b[j]).abs().powi(p);
        u = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    cost
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Exact 1-Wasserstein distance between two 1-D empirical distributions.
pub fn w1_1d(a: &[Vector], b: &[Vector]) -> Result<f64> {
    let d = check_pair(a, b)?;
    check_dim(1, d)?;
    let xa = sorted(a.iter().map(|s| s[0]).collect());
    let xb = sorted(b.iter().map(|s| s[0]).collect());
    Ok(quantile_cost(&xa, &xb, 1))
}

/// Sliced 2-Wasserstein distance: root mean over `n_projections` random unit
/// directions of the squared 1-D distance between projections.
pub fn sliced_w2(a: &[Vector], b: &[Vector], n_projections: usize, seed: u64) -> Result<f64> {
    let d = check_pair(a, b)?;
    if n_projections == 0 {
        return Err(Error::InvalidArgument("need at least one projection".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let mut total = 0.0;
    for _ in 0..n_projections {
        let dir = loop {
            let v = rng::std_normal_vector(&mut rng, d);
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        let pa = sorted(a.iter().map(|s| s.dot(&dir)).collect());
        let pb = sorted(b.iter().map(|s| s.dot(&dir)).collect());
        total += quantile_cost(&pa, &pb, 2);
    }
    Ok((total / n_projections as f64).sqrt())
}

/// Unbiased RBF-kernel MMD^2 and a standard error from the leading term of
/// its U-statistic variance over paired samples.
pub fn rbf_mmd(a: &[Vector], b: &[Vector], bandwidth: f64) -> Result<(f64, f64)> {
    check_pair(a, b)?;
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::InvalidArgument(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let k = |x: &Vector, y: &Vector| (-(x - y).norm_squared() / (2.0 * bandwidth * bandwidth)).exp();
    let (na, nb) = (a.len(), b.len());
    let mean_within = |s: &[Vector]| {
        let n = s.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                acc += k(&s[i], &s[j]);
            }
        }
        2.0 * acc / (n * (n - 1)) as f64
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y);
        }
    }
    let mmd2 = mean_within(a) + mean_within(b) - 2.0 * cross / (na * nb) as f64;

    let n = na.min(nb);
    let h = |i: usize, j: usize| k(&a[i], &a[j]) + k(&b[i], &b[j]) - k(&a[i], &b[j]) - k(&a[j], &b[i]);
    let row_means: Vec<f64> =
        (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| h(i, j)).sum::<f64>() / (n - 1) as f64).collect();
    let m = row_means.iter().sum::<f64>() / n as f64;
    let var = row_means.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    Ok((mmd2, (4.0 * var / n as f64).sqrt()))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_test_1d(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InvalidArgument("KS test needs at least two samples per set".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite".into()));
    }
    let xa = sorted(a.to_vec());
    let xb = sorted(b.to_vec());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut stat: f64 = 0.0;
    while i < xa.len() && j < xb.len() {
        let x = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= x {
            i += 1;
        }
        while j < xb.len() && xb[j] <= x {
            j += 1;
        }
        stat = stat.max((i as f64 / na - j as f64 / nb).abs());
    }
    let en = (na * nb / (na + nb)).sqrt();
    Ok((stat, kolmogorov_survival((en + 0.12 + 0.11 / en) * stat)))
}

/// `P(K > lambda)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Largest relative error between `grad` and central differences of `f` at `x`
/// with step `h`, relative to `max(|grad|_inf, 1e-12)`.
pub fn fd_grad_check(f: impl Fn(&Vector) -> f64, grad: &Vector, x: &Vector, h: f64) -> Result<f64> {
    check_dim(x.len(), grad.len())?;
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    let scale = grad.amax().max(1e-12);
    let mut worst: f64 = 0.0;
    for j in 0..x.len() {
        let mut p = x.clone();
        let mut m = x.clone();
        p[j] += h;
        m[j] -= h;
        let fd = (f(&p) - f(&m)) / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / scale);
    }
    Ok(worst)
}

/// Per-coordinate `(mean, standard error of the mean)`.
pub fn mean_with_se(samples: &[Vector]) -> Vec<(f64, f64)> {
    let mu = mean(samples);
    let n = samples.len() as f64;
    (0..mu.len())
        .map(|i| {
            let var = samples.iter().map(|s| (s[i] - mu[i]).powi(2)).sum::<f64>() / (n - 1.0);
            (mu[i], (var / n).sqrt())
        })
        .collect()
}

/// Per-coordinate sample variance and its standard error under normality.
pub fn variance_with_se(samples: &[Vector]) -> Vec<(f64, f64)> {
    let cov = covariance(samples);
    let n = samples.len() as f64;
    (0..cov.nrows())
        .map(|i| {
            let v = cov[(i, i)];
            (v, v * (2.0 / (n - 1.0)).sqrt())
        })
        .collect()
}

/// Uniform random subsample without replacement, for quadratic-cost metrics.
pub fn subsample(samples: &[Vector], n: usize, seed: u64) -> Vec<Vector> {
    if n >= samples.len() {
        return samples.to_vec();
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng::stream(seed, 0);
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    idx[..n].iter().map(|&i| samples[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn gaussian(n: usize, d: usize, shift: f64, seed: u64) -> Vec<Vector> {
        let mut rng = rng::stream(seed, 0);
        (0..n).map(|_| rng::std_normal_vector(&mut rng, d).add_scalar(shift)).collect()
    }

    #[test]
    fn w1_identical_and_shift() {
        let a = gaussian(1000, 1, 0.0, 1);
        assert_eq!(w1_1d(&a, &a).unwrap(), 0.0);
        let b: Vec<Vector> = a.iter().map(|v| v.add_scalar(0.7)).collect();
        assert!((w1_1d(&a, &b).unwrap() - 0.7).abs() < 1e-12);
        assert!(w1_1d(&gaussian(10, 2, 0.0, 1), &gaussian(10, 2, 0.0, 2)).is_err());
    }

    #[test]
    fn w1_mean_shifted_gaussians() {
        let a = gaussian(100_000, 1, 0.0, 2);
        let b = gaussian(100_000, 1, 1.0, 3);
        assert!((w1_1d(&a, &b).unwrap() - 1.0).abs() < 0.02);
    }

    #[test]
    fn w1_unequal_sizes_exact() {
        // {0, 1} vs {0, 0.5, 1}: quantile functions differ on [1/3, 1/2) by 0.5
        // and on [1/2, 2/3) by 0.5.
        let a = vec![dvector![0.0], dvector![1.0]];
        let b = vec![dvector![0.0], dvector![0.5], dvector![1.0]];
        assert!((w1_1d(&a, &b).unwrap() - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn sliced_w2_shift_law() {
        let a = gaussian(40_000, 2, 0.0, 4);
        let b: Vec<Vector> = gaussian(40_000, 2, 0.0, 5).iter().map(|v| v + dvector![0.6, 0.8]).collect();
        let dist = sliced_w2(&a, &b, 256, 1).unwrap();
        let want = (1.0f64 / 2.0).sqrt();
        assert!((dist - want).abs() < 0.05, "{dist} vs {want}");
        assert_eq!(sliced_w2(&a, &a, 8, 1).unwrap(), 0.0);
    }

    #[test]
    fn mmd_of_identical_sets_is_small() {
        let a = gaussian(300, 2, 0.0, 6);
        // Against itself the paired kernel vanishes, so the standard error is
        // zero and only the diagonal of the cross term survives.
        let (m, se) = rbf_mmd(&a, &a, 1.0).unwrap();
        assert_eq!(se, 0.0);
        let n = a.len() as f64;
        let mut off = 0.0;
        for i in 0..a.len() {
            for j in 0..a.len() {
                if i != j {
                    off += (-(&a[i] - &a[j]).norm_squared() / 2.0).exp();
                }
            }
        }
        let want = -2.0 * (1.0 - off / (n * (n - 1.0))) / n;
        assert!((m - want).abs() < 1e-12, "{m} vs {want}");
        let (m2, se2) = rbf_mmd(&a, &gaussian(300, 2, 0.0, 7), 1.0).unwrap();
        assert!(m2.abs() <= 3.0 * se2 + 1e-3);
        let (m3, se3) = rbf_mmd(&a, &gaussian(300, 2, 1.5, 8), 1.0).unwrap();
        assert!(m3 > 3.0 * se3);
        assert!(rbf_mmd(&a, &a, 0.0).is_err());
    }

    #[test]
    fn ks_detects_shift_and_accepts_null() {
        let a: Vec<f64> = gaussian(5000, 1, 0.0, 9).iter().map(|v| v[0]).collect();
        let b: Vec<f64> = gaussian(5000, 1, 0.0, 10).iter().map(|v| v[0]).collect();
        let c: Vec<f64> = gaussian(5000, 1, 0.2, 11).iter().map(|v| v[0]).collect();
        assert!(ks_test_1d(&a, &b).unwrap().1 > 0.001);
        assert!(ks_test_1d(&a, &c).unwrap().1 < 1e-6);
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn fd_check_on_quadratic() {
        let f = |x: &Vector| x.norm_squared();
        let x = dvector![0.5, -1.0];
        assert!(fd_grad_check(f, &(2.0 * &x), &x, 1e-5).unwrap() < 1e-9);
        assert!(fd_grad_check(f, &x, &x, 1e-5).unwrap() > 0.1);
    }

    proptest! {
        #[test]
        fn metrics_are_symmetric_and_nonnegative(seed_a in 0u64..500, seed_b in 500u64..1000, shift in -1.0..1.0f64) {
            let a = gaussian(60, 2, 0.0, seed_a);
            let b = gaussian(45, 2, shift, seed_b);
            let ab = sliced_w2(&a, &b, 8, 3).unwrap();
            let ba = sliced_w2(&b, &a, 8, 3).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() < 1e-12);
            let a1: Vec<Vector> = a.iter().map(|v| dvector![v[0]]).collect();
            let b1: Vec<Vector> = b.iter().map(|v| dvector![v[0]]).collect();
            prop_assert!((w1_1d(&a1, &b1).unwrap() - w1_1d(&b1, &a1).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn sliced_w2_permutation_invariant(seed in 0u64..1000) {
            let a = gaussian(50, 2, 0.0, seed);
            let b = gaussian(50, 2, 0.3, seed + 1);
            let mut r = a.clone();
            r.reverse();
            prop_assert_eq!(sliced_w2(&a, &b, 8, 1).unwrap(), sliced_w2(&r, &b, 8, 1).unwrap());
        }
    }
}
