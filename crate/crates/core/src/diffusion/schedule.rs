use ndarray::{Array, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    #[default]
    Cosine,
    Linear,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(ScheduleKind::Cosine),
            "linear" => Ok(ScheduleKind::Linear),
            _ => Err(Error::rejected(format!("unknown schedule kind {s:?}"))),
        }
    }
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-step coefficients; index 0 is the least noisy step.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub n: usize,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
    pub posterior_var: Vec<f64>,
}

/// Builds the noise schedule for `n` steps.
pub fn make_schedule(n: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if n < 1 {
        return Err(Error::rejected("schedule needs at least one step"));
    }
    let beta: Vec<f64> = match kind {
        ScheduleKind::Cosine => {
            let f = |t: f64| (((t + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (0..n)
                .map(|k| {
                    let a0 = f(k as f64 / n as f64);
                    let a1 = f((k + 1) as f64 / n as f64);
                    (1.0 - a1 / a0).clamp(0.0, MAX_BETA)
                })
                .collect()
        }
        ScheduleKind::Linear => {
            // The usual 1e-4..0.02 over 1000 steps, rescaled to n steps.
            let lo = (0.1 / n as f64).min(MAX_BETA);
            let hi = (20.0 / n as f64).min(MAX_BETA);
            if n == 1 {
                vec![hi]
            } else {
                (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
            }
        }
    };
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(n);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    let mut posterior_var: Vec<f64> = (0..n)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            beta[i] * (1.0 - prev) / (1.0 - alpha_bar[i])
        })
        .collect();
    // The first entry is zero by formula; borrow the next one so guidance
    // still acts on the final step.
    if n > 1 {
        posterior_var[0] = posterior_var[1];
    }
    Ok(NoiseSchedule {
        kind,
        n,
        beta,
        alpha,
        alpha_bar,
        posterior_var,
    })
}

impl NoiseSchedule {
    pub fn check_step(&self, i: usize) -> Result<()> {
        if i >= self.n {
            return Err(Error::rejected(format!("step {i} outside [0, {}]", self.n - 1)));
        }
        Ok(())
    }

    /// `sqrt(abar_i) * x0 + sqrt(1 - abar_i) * eps`.
    pub fn q_sample<D: Dimension>(&self, x0: &Array<f64, D>, i: usize, eps: &Array<f64, D>) -> Result<Array<f64, D>> {
        self.check_step(i)?;
        if x0.shape() != eps.shape() {
            return Err(Error::rejected("noise shape differs from trajectory shape"));
        }
        let (a, b) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        let mut out = x0 * a;
        out.zip_mut_with(eps, |o, e| *o += b * e);
        Ok(out)
    }

    /// Reverse-process mean from a noise estimate.
    pub fn posterior_mean<D: Dimension>(
        &self,
        x: &Array<f64, D>,
        eps_hat: &Array<f64, D>,
        i: usize,
    ) -> Result<Array<f64, D>> {
        self.check_step(i)?;
        if x.shape() != eps_hat.shape() {
            return Err(Error::rejected("noise estimate shape differs from trajectory shape"));
        }
        let coef = (1.0 - self.alpha[i]) / (1.0 - self.alpha_bar[i]).sqrt();
        let inv = 1.0 / self.alpha[i].sqrt();
        let mut out = x.clone();
        out.zip_mut_with(eps_hat, |o, e| *o = inv * (*o - coef * e));
        Ok(out)
    }

    /// Posterior mean through the implied clean estimate
    /// `x0 = (x - sqrt(1 - abar) * eps_hat) / sqrt(abar)`, with `x0` clamped to
    /// `[-bound, bound]`. Without clamping this equals [`Self::posterior_mean`]
    /// up to rounding.
    pub fn posterior_mean_clamped<D: Dimension>(
        &self,
        x: &Array<f64, D>,
        eps_hat: &Array<f64, D>,
        i: usize,
        bound: f64,
    ) -> Result<Array<f64, D>> {
        self.check_step(i)?;
        if x.shape() != eps_hat.shape() {
            return Err(Error::rejected("noise estimate shape differs from trajectory shape"));
        }
        let ab = self.alpha_bar[i];
        let prev = if i == 0 { 1.0 } else { self.alpha_bar[i - 1] };
        let c0 = self.beta[i] * prev.sqrt() / (1.0 - ab);
        let ct = (1.0 - prev) * self.alpha[i].sqrt() / (1.0 - ab);
        let (ra, rb) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
        let mut out = x.clone();
        out.zip_mut_with(eps_hat, |o, e| {
            let x0 = (ra * (*o - rb * e)).clamp(-bound, bound);
            *o = c0 * x0 + ct * *o;
        });
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn rejects_zero_steps() {
        assert!(make_schedule(0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn single_step_is_nearly_pure_noise() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(1, kind).unwrap();
            assert_eq!(s.alpha_bar.len(), 1);
            assert!(s.alpha_bar[0] <= 0.05);
        }
    }

    #[test]
    fn invariants_at_twenty_steps() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(20, kind).unwrap();
            assert_eq!(s.alpha_bar.len(), 20);
            assert!(s.alpha.iter().all(|a| *a > 0.0 && *a <= 1.0));
            assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
            assert!(s.alpha_bar[0] >= 0.99, "{kind:?} {}", s.alpha_bar[0]);
            assert!(s.alpha_bar[19] <= 0.05);
            assert!(s.posterior_var.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn cosine_matches_closed_form() {
        // abar(k) = cos^2(((k/N + s)/(1 + s)) * pi/2) / cos^2((s/(1 + s)) * pi/2),
        // valid while no beta hits the clip.
        let n = 20;
        let s = make_schedule(n, ScheduleKind::Cosine).unwrap();
        let g = |t: f64| ((t + 0.008) / 1.008 * std::f64::consts::PI / 2.0).cos().powi(2);
        for k in 0..n - 1 {
            let expect = g((k + 1) as f64 / n as f64) / g(0.0);
            assert!((s.alpha_bar[k] - expect).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn q_sample_cases() {
        let s = make_schedule(20, ScheduleKind::Cosine).unwrap();
        let x0 = Array2::from_shape_fn((4, 3), |(a, b)| a as f64 - b as f64 * 0.5);
        let zero = Array2::zeros((4, 3));
        let y = s.q_sample(&x0, 7, &zero).unwrap();
        assert_eq!(y, &x0 * s.alpha_bar[7].sqrt());
        assert!(s.q_sample(&x0, 20, &zero).is_err());

        let mut ident = s.clone();
        ident.alpha_bar[3] = 1.0;
        assert_eq!(ident.q_sample(&x0, 3, &x0.mapv(|v| v + 1.0)).unwrap(), x0);
    }

    #[test]
    fn q_sample_monte_carlo_moments() {
        let s = make_schedule(20, ScheduleKind::Cosine).unwrap();
        let i = 9;
        let x0 = Array2::from_shape_fn((1, 3), |(_, b)| b as f64 - 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 10_000;
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for _ in 0..n {
            let eps = Array2::from_shape_fn((1, 3), |_| rng.sample::<f64, _>(StandardNormal));
            let y = s.q_sample(&x0, i, &eps).unwrap();
            for j in 0..3 {
                let d = y[[0, j]] - s.alpha_bar[i].sqrt() * x0[[0, j]];
                sum[j] += d;
                sq[j] += d * d;
            }
        }
        let sd = (1.0 - s.alpha_bar[i]).sqrt();
        for j in 0..3 {
            let mean = sum[j] / n as f64;
            assert!(mean.abs() < 4.0 * sd / (n as f64).sqrt());
            let var = sq[j] / n as f64 - mean * mean;
            assert!((var / (1.0 - s.alpha_bar[i]) - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn posterior_mean_cases() {
        let s = make_schedule(20, ScheduleKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let e = Array2::from_shape_fn((5, 4), |_| rng.random_range(-1.0..1.0));
        let zero = Array2::zeros((5, 4));
        let m = s.posterior_mean(&x, &zero, 4).unwrap();
        assert!((&m - &(&x / s.alpha[4].sqrt())).iter().all(|d| d.abs() < 1e-15));
        for i in 0..20 {
            let m = s.posterior_mean(&x, &e, i).unwrap();
            for ((mv, xv), ev) in m.iter().zip(&x).zip(&e) {
                let b = 1.0 - s.alpha[i];
                let expect = (xv - b * ev / (1.0 - s.alpha_bar[i]).sqrt()) / (1.0 - b).sqrt();
                assert!((mv - expect).abs() < 1e-12);
            }
        }
        let mut ident = s.clone();
        ident.alpha[2] = 1.0;
        assert_eq!(ident.posterior_mean(&x, &e, 2).unwrap(), x);
        assert!(s.posterior_mean(&x, &e, 20).is_err());
    }

    #[test]
    fn clamped_mean_agrees_when_bound_is_inactive() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(20, kind).unwrap();
            for i in 0..19 {
                let x = Array2::from_shape_simple_fn((4, 3), || rng.sample::<f64, _>(StandardNormal));
                let e = Array2::from_shape_simple_fn((4, 3), || rng.sample::<f64, _>(StandardNormal));
                let a = s.posterior_mean(&x, &e, i).unwrap();
                let b = s.posterior_mean_clamped(&x, &e, i, f64::INFINITY).unwrap();
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "{kind:?} step {i}: {u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn clamped_mean_bounds_the_clean_estimate() {
        let s = make_schedule(20, ScheduleKind::Cosine).unwrap();
        let x = Array2::from_elem((1, 2), 50.0);
        let e = Array2::zeros((1, 2));
        let m = s.posterior_mean_clamped(&x, &e, 19, 1.0).unwrap();
        let prev = s.alpha_bar[18];
        let want = s.beta[19] * prev.sqrt() / (1.0 - s.alpha_bar[19]) + (1.0 - prev) * s.alpha[19].sqrt() / (1.0 - s.alpha_bar[19]) * 50.0;
        assert!((m[[0, 0]] - want).abs() < 1e-9);
    }
}
