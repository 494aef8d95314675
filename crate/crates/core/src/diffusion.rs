//! EDM-preconditioned denoising, scores, denoising score matching and
//! probability-flow ODE sampling.
//!
//! The sampler integrates `dx/dσ = (x − D(x; σ)) / σ` along a decreasing
//! noise schedule, which is the probability-flow ODE written in σ instead of
//! time. Closed-form Gaussian and Gaussian-mixture denoisers are provided as
//! analytic stand-ins for a trained network.

use std::any::Any;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const DEFAULT_SIGMA_DATA: f64 = 0.5;
pub const DEFAULT_SIGMA_MIN: f64 = 0.002;
pub const DEFAULT_SIGMA_MAX: f64 = 80.0;
pub const DEFAULT_RHO: f64 = 7.0;
pub const DEFAULT_STEPS: usize = 25;

/// Opaque conditioning payload, passed through to the denoiser untouched.
pub type Cond<'a> = Option<&'a (dyn Any + Send + Sync)>;

/// `D(x; σ, cond)`: maps a noisy state to an estimate of the clean state.
pub trait Denoiser<T: Real> {
    fn denoise(&self, x: &[T], sigma: T, cond: Cond<'_>) -> Result<Vec<T>>;
}

impl<T: Real, D: Denoiser<T> + ?Sized> Denoiser<T> for &D {
    fn denoise(&self, x: &[T], sigma: T, cond: Cond<'_>) -> Result<Vec<T>> {
        (**self).denoise(x, sigma, cond)
    }
}

/// Wraps a closure `(x, σ) -> D(x; σ)`.
pub struct FnDenoiser<F>(pub F);

impl<T: Real, F: Fn(&[T], T) -> Vec<T>> Denoiser<T> for FnDenoiser<F> {
    fn denoise(&self, x: &[T], sigma: T, _cond: Cond<'_>) -> Result<Vec<T>> {
        Ok((self.0)(x, sigma))
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if sigma > T::zero() && sigma.is_finite_value() {
        Ok(())
    } else {
        Err(Error::InvalidSigma(format!("sigma must be positive and finite, got {sigma}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmCoefficients<T: Real> {
    pub c_skip: T,
    pub c_out: T,
    pub c_in: T,
    pub c_noise: T,
}

/// Preconditioning coefficients for noise level `sigma` and data scale `sigma_data`.
pub fn edm_coeffs<T: Real>(sigma: T, sigma_data: T) -> Result<EdmCoefficients<T>> {
    check_sigma(sigma)?;
    if !(sigma_data > T::zero()) {
        return Err(Error::InvalidSigma(format!("sigma_data must be positive, got {sigma_data}")));
    }
    let sd2 = sigma_data * sigma_data;
    let total = sigma * sigma + sd2;
    let root = total.sqrt();
    Ok(EdmCoefficients {
        c_skip: sd2 / total,
        c_out: sigma * sigma_data / root,
        c_in: T::one() / root,
        c_noise: sigma.ln() / T::lit(4.0),
    })
}

/// `D(x) = c_skip·x + c_out·F(c_in·x; c_noise)` around a raw network `F`.
pub struct EdmPreconditioned<T, F> {
    pub sigma_data: T,
    pub network: F,
}

impl<T: Real, F: Fn(&[T], T, Cond<'_>) -> Vec<T>> Denoiser<T> for EdmPreconditioned<T, F> {
    fn denoise(&self, x: &[T], sigma: T, cond: Cond<'_>) -> Result<Vec<T>> {
        let c = edm_coeffs(sigma, self.sigma_data)?;
        let scaled: Vec<T> = x.iter().map(|&v| v * c.c_in).collect();
        let raw = (self.network)(&scaled, c.c_noise, cond);
        if raw.len() != x.len() {
            return Err(Error::DimensionMismatch(format!(
                "network returned {} values for a {}-dimensional state",
                raw.len(),
                x.len()
            )));
        }
        Ok(x.iter().zip(&raw).map(|(&xi, &fi)| c.c_skip * xi + c.c_out * fi).collect())
    }
}

fn checked_denoise<T: Real>(d: &impl Denoiser<T>, x: &[T], sigma: T, cond: Cond<'_>) -> Result<Vec<T>> {
    let out = d.denoise(x, sigma, cond)?;
    if out.len() != x.len() {
        return Err(Error::DimensionMismatch(format!(
            "denoiser returned {} values for a {}-dimensional state",
            out.len(),
            x.len()
        )));
    }
    Ok(out)
}

/// `∇ log p(x; σ) ≈ (D(x; σ) − x) / σ²`
pub fn score<T: Real>(denoiser: &impl Denoiser<T>, x: &[T], sigma: T, cond: Cond<'_>) -> Result<Vec<T>> {
    check_sigma(sigma)?;
    let d = checked_denoise(denoiser, x, sigma, cond)?;
    let s2 = sigma * sigma;
    Ok(d.iter().zip(x).map(|(&di, &xi)| (di - xi) / s2).collect())
}

/// Decreasing noise levels `σ_0 = σ_max > … > σ_{n−1} = σ_min`, then `0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSchedule<T: Real> {
    sigmas: Vec<T>,
    pub sigma_min: T,
    pub sigma_max: T,
    pub rho: T,
    pub n_steps: usize,
}

impl<T: Real> SigmaSchedule<T> {
    /// All levels including the terminal zero.
    pub fn sigmas(&self) -> &[T] {
        &self.sigmas
    }
}

/// ρ-spaced schedule interpolating `σ^{1/ρ}` linearly between the endpoints.
pub fn sigma_schedule<T: Real>(n_steps: usize, sigma_min: T, sigma_max: T, rho: T) -> Result<SigmaSchedule<T>> {
    if n_steps < 2 {
        return Err(Error::InvalidSchedule(format!("need at least 2 steps, got {n_steps}")));
    }
    if !(sigma_min > T::zero() && sigma_min < sigma_max && sigma_max.is_finite_value()) {
        return Err(Error::InvalidSchedule(format!("need 0 < sigma_min < sigma_max, got [{sigma_min}, {sigma_max}]")));
    }
    if !(rho > T::zero() && rho.is_finite_value()) {
        return Err(Error::InvalidSchedule(format!("rho must be positive, got {rho}")));
    }
    let inv_rho = T::one() / rho;
    let hi = sigma_max.powf(inv_rho);
    let lo = sigma_min.powf(inv_rho);
    let last = T::from_count(n_steps - 1);
    let mut sigmas: Vec<T> = (0..n_steps)
        .map(|i| match i {
            0 => sigma_max,
            i if i == n_steps - 1 => sigma_min,
            i => (hi + T::from_count(i) / last * (lo - hi)).powf(rho),
        })
        .collect();
    if sigmas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidSchedule("noise levels are not strictly decreasing".into()));
    }
    sigmas.push(T::zero());
    Ok(SigmaSchedule { sigmas, sigma_min, sigma_max, rho, n_steps })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OdeMethod {
    Euler,
    #[default]
    Heun,
}

fn drift<T: Real>(x: &[T], d: &[T], sigma: T) -> Vec<T> {
    x.iter().zip(d).map(|(&xi, &di)| (xi - di) / sigma).collect()
}

/// Integrates the probability-flow ODE from `x_init` at `σ_max` down to `σ = 0`,
/// returning every visited state (`n_steps + 1` entries, the first being `x_init`).
///
/// Heun adds a trapezoidal corrector to each Euler step except the last one:
/// its corrector would evaluate the denoiser at `σ = 0`. That final Euler step
/// `x + (0 − σ)·(x − D)/σ` is evaluated in its reduced form `D(x; σ)`.
pub fn pf_ode_trajectory<T: Real>(
    denoiser: &impl Denoiser<T>,
    x_init: &[T],
    schedule: &SigmaSchedule<T>,
    method: OdeMethod,
    cond: Cond<'_>,
) -> Result<Vec<Vec<T>>> {
    let mut states = Vec::with_capacity(schedule.sigmas.len());
    let mut x = x_init.to_vec();
    states.push(x.clone());
    for w in schedule.sigmas.windows(2) {
        let (sigma, next) = (w[0], w[1]);
        let d = checked_denoise(denoiser, &x, sigma, cond)?;
        if next == T::zero() {
            x = d;
        } else {
            let h = next - sigma;
            let slope = drift(&x, &d, sigma);
            let euler: Vec<T> = x.iter().zip(&slope).map(|(&xi, &si)| xi + h * si).collect();
            x = match method {
                OdeMethod::Euler => euler,
                OdeMethod::Heun => {
                    let d2 = checked_denoise(denoiser, &euler, next, cond)?;
                    let slope2 = drift(&euler, &d2, next);
                    let half = T::lit(0.5);
                    x.iter().zip(slope.iter().zip(&slope2)).map(|(&xi, (&s1, &s2))| xi + h * half * (s1 + s2)).collect()
                }
            };
        }
        states.push(x.clone());
    }
    Ok(states)
}

/// Terminal state of [`pf_ode_trajectory`].
pub fn pf_ode_sample<T: Real>(
    denoiser: &impl Denoiser<T>,
    x_init: &[T],
    schedule: &SigmaSchedule<T>,
    method: OdeMethod,
    cond: Cond<'_>,
) -> Result<Vec<T>> {
    let mut traj = pf_ode_trajectory(denoiser, x_init, schedule, method, cond)?;
    Ok(traj.pop().expect("trajectory holds at least the initial state"))
}

/// ChaCha8 stream `stream` of `seed`. Stream 0 is the sequential stream.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn standard_normal<T: Real>(rng: &mut ChaCha8Rng, dim: usize) -> Vec<T> {
    (0..dim).map(|_| T::lit(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))).collect()
}

/// Per-sample squared errors `‖D(x₀ + σε; σ, cond) − x₀‖²` with `ε ~ N(0, I)`
/// drawn from `rng_seed`, in sample order.
pub fn dsm_loss_per_sample<T: Real>(
    denoiser: &impl Denoiser<T>,
    clean_samples: &[Vec<T>],
    sigma: T,
    cond: Cond<'_>,
    rng_seed: u64,
) -> Result<Vec<T>> {
    check_sigma(sigma)?;
    if clean_samples.is_empty() {
        return Err(Error::EmptyInput("denoising loss needs at least one clean sample".into()));
    }
    let mut rng = seeded_rng(rng_seed, 0);
    clean_samples
        .iter()
        .map(|x0| {
            let eps = standard_normal::<T>(&mut rng, x0.len());
            let noisy: Vec<T> = x0.iter().zip(&eps).map(|(&a, &e)| a + sigma * e).collect();
            let d = checked_denoise(denoiser, &noisy, sigma, cond)?;
            Ok(d.iter().zip(x0).fold(T::zero(), |acc, (&di, &xi)| acc + (di - xi) * (di - xi)))
        })
        .collect()
}

/// Monte Carlo denoising score-matching loss: the mean of [`dsm_loss_per_sample`].
pub fn dsm_loss<T: Real>(
    denoiser: &impl Denoiser<T>,
    clean_samples: &[Vec<T>],
    sigma: T,
    cond: Cond<'_>,
    rng_seed: u64,
) -> Result<T> {
    let losses = dsm_loss_per_sample(denoiser, clean_samples, sigma, cond, rng_seed)?;
    let n = T::from_count(losses.len());
    Ok(losses.into_iter().fold(T::zero(), |a, b| a + b) / n)
}

/// Posterior mean for data `~ N(μ, s²I)`: `D(x; σ) = (s²x + σ²μ) / (s² + σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior<T: Real> {
    pub mu: Vec<T>,
    pub s: T,
}

pub fn gaussian_posterior_denoiser<T: Real>(mu: Vec<T>, s: T) -> Result<GaussianPosterior<T>> {
    if !(s > T::zero()) {
        return Err(Error::InvalidConfig(format!("data scale s must be positive, got {s}")));
    }
    Ok(GaussianPosterior { mu, s })
}

impl<T: Real> Denoiser<T> for GaussianPosterior<T> {
    fn denoise(&self, x: &[T], sigma: T, _cond: Cond<'_>) -> Result<Vec<T>> {
        check_sigma(sigma)?;
        if x.len() != self.mu.len() {
            return Err(Error::DimensionMismatch(format!("state has {} dims, mean has {}", x.len(), self.mu.len())));
        }
        let s2 = self.s * self.s;
        let v2 = sigma * sigma;
        let denom = s2 + v2;
        Ok(x.iter().zip(&self.mu).map(|(&xi, &mi)| (s2 * xi + v2 * mi) / denom).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<T: Real> {
    pub weight: T,
    pub mu: Vec<T>,
    pub s: T,
}

/// Isotropic Gaussian mixture with its exact posterior-mean denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T: Real> {
    components: Vec<MixtureComponent<T>>,
}

impl<T: Real> GaussianMixture<T> {
    /// Weights are renormalized to sum to one.
    pub fn new(mut components: Vec<MixtureComponent<T>>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::EmptyInput("mixture needs at least one component".into()));
        };
        let dim = first.mu.len();
        let mut total = T::zero();
        for c in &components {
            if c.mu.len() != dim {
                return Err(Error::DimensionMismatch("mixture components differ in dimension".into()));
            }
            if !(c.weight > T::zero() && c.s > T::zero()) {
                return Err(Error::InvalidConfig("mixture weights and scales must be positive".into()));
            }
            total += c.weight;
        }
        for c in &mut components {
            c.weight /= total;
        }
        Ok(Self { components })
    }

    pub fn components(&self) -> &[MixtureComponent<T>] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mu.len()
    }

    /// Posterior component probabilities of `x` under the σ-smoothed mixture.
    pub fn responsibilities(&self, x: &[T], sigma: T) -> Vec<T> {
        let half = T::lit(0.5);
        let dim = T::from_count(x.len());
        let logs: Vec<T> = self
            .components
            .iter()
            .map(|c| {
                let var = c.s * c.s + sigma * sigma;
                let sq = x.iter().zip(&c.mu).fold(T::zero(), |a, (&xi, &mi)| a + (xi - mi) * (xi - mi));
                c.weight.ln() - half * dim * var.ln() - half * sq / var
            })
            .collect();
        let max = logs.iter().copied().reduce(T::max).unwrap_or_else(T::zero);
        let exps: Vec<T> = logs.iter().map(|&l| (l - max).exp()).collect();
        let z = exps.iter().fold(T::zero(), |a, &b| a + b);
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Index of the most responsible component for a (clean) sample.
    pub fn assign(&self, x: &[T]) -> usize {
        let r = self.responsibilities(x, T::zero());
        (0..r.len()).fold(0, |best, i| if r[i] > r[best] { i } else { best })
    }

    /// Draws `x₀` from the mixture.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<T> {
        let u = T::lit(rand::Rng::random::<f64>(rng));
        let mut acc = T::zero();
        let mut pick = self.components.len() - 1;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                pick = i;
                break;
            }
        }
        let c = &self.components[pick];
        standard_normal::<T>(rng, c.mu.len()).into_iter().zip(&c.mu).map(|(e, &m)| m + c.s * e).collect()
    }
}

impl<T: Real> Denoiser<T> for GaussianMixture<T> {
    fn denoise(&self, x: &[T], sigma: T, _cond: Cond<'_>) -> Result<Vec<T>> {
        check_sigma(sigma)?;
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!("state has {} dims, mixture has {}", x.len(), self.dim())));
        }
        let r = self.responsibilities(x, sigma);
        let v2 = sigma * sigma;
        let mut out = vec![T::zero(); x.len()];
        for (c, &g) in self.components.iter().zip(&r) {
            let s2 = c.s * c.s;
            for ((o, &xi), &mi) in out.iter_mut().zip(x).zip(&c.mu) {
                *o += g * (s2 * xi + v2 * mi) / (s2 + v2);
            }
        }
        Ok(out)
    }
}

/// How initial noise for a batch of trajectories is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharding {
    /// One RNG stream, trajectories run in order.
    Sequential,
    /// `n` contiguous shards, shard `k` drawing from stream `k + 1` of the
    /// seed and running on the rayon pool. Output is reproducible for a fixed
    /// shard count but differs from the sequential stream.
    Shards(usize),
}

/// Runs `count` trajectories from `x_init = σ_max·ε`, `ε ~ N(0, I_dim)`, and
/// returns their terminal states in draw order.
pub fn sample_batch<T, D>(
    denoiser: &D,
    dim: usize,
    count: usize,
    schedule: &SigmaSchedule<T>,
    method: OdeMethod,
    seed: u64,
    sharding: Sharding,
) -> Result<Vec<Vec<T>>>
where
    T: Real + Send + Sync,
    D: Denoiser<T> + Sync,
{
    let run = |rng: &mut ChaCha8Rng, n: usize| -> Result<Vec<Vec<T>>> {
        (0..n)
            .map(|_| {
                let x0: Vec<T> = standard_normal::<T>(rng, dim).into_iter().map(|e| e * schedule.sigma_max).collect();
                pf_ode_sample(denoiser, &x0, schedule, method, None)
            })
            .collect()
    };
    match sharding {
        Sharding::Sequential => run(&mut seeded_rng(seed, 0), count),
        Sharding::Shards(k) => {
            let k = k.max(1);
            let base = count / k;
            let extra = count % k;
            let parts: Vec<Result<Vec<Vec<T>>>> = (0..k)
                .into_par_iter()
                .map(|shard| {
                    let n = base + usize::from(shard < extra);
                    run(&mut seeded_rng(seed, shard as u64 + 1), n)
                })
                .collect();
            let mut out = Vec::with_capacity(count);
            for p in parts {
                out.extend(p?);
            }
            Ok(out)
        }
    }
}

/// Per-dimension sample mean and (population) variance.
pub fn moments<T: Real>(samples: &[Vec<T>]) -> Result<(Vec<T>, Vec<T>)> {
    let first = samples.first().ok_or_else(|| Error::EmptyInput("no samples".into()))?;
    let n = T::from_count(samples.len());
    let mut mean = vec![T::zero(); first.len()];
    for s in samples {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); first.len()];
    for s in samples {
        for ((acc, &v), &m) in var.iter_mut().zip(s).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    Ok((mean, var))
}
