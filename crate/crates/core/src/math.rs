//! Special functions and probability kernels shared by both inference engines.
//!
//! All probability arithmetic runs in log space; normalization goes through
//! [`log_sum_exp`]. Stochastic operations take an explicit generator — there
//! is no global randomness anywhere in this crate.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Seeded generator used throughout; parallel callers take independently
/// seeded streams of the same type.
pub type Rng64 = rand_chacha::ChaCha8Rng;

/// Derive an independent stream of `rng_from_seed(seed)` for worker `stream`.
pub fn substream(seed: u64, stream: u64) -> Rng64 {
    use rand::SeedableRng;
    let mut rng = Rng64::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn rng_from_seed(seed: u64) -> Rng64 {
    use rand::SeedableRng;
    Rng64::seed_from_u64(seed)
}

const SIMPLEX_TOL: f64 = 1e-10;

/// Nonnegative vector summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("SimplexVector::new", "empty vector"));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "SimplexVector::new",
                format!("entry {v} is negative or non-finite"),
            ));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(
                "SimplexVector::new",
                format!("entries sum to {sum}, not 1"),
            ));
        }
        Ok(SimplexVector(values))
    }

    /// Normalize arbitrary nonnegative weights into a simplex point.
    pub fn normalized(weights: &[f64]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(Error::degenerate(
                "SimplexVector::normalized",
                format!("weight sum {sum}"),
            ));
        }
        let mut v: Vec<f64> = weights.iter().map(|w| w / sum).collect();
        // Forced exact renormalization: f64 division can leave the sum a few
        // ulps off, which the constructor rejects.
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|x| *x /= s);
        SimplexVector::new(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for SimplexVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Strictly positive, finite vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveVector(Vec<f64>);

impl PositiveVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("PositiveVector::new", "empty vector"));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "PositiveVector::new",
                format!("entry {v} is not strictly positive and finite"),
            ));
        }
        Ok(PositiveVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for PositiveVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Digamma function Ψ(x) for x > 0.
///
/// Upward recurrence to x ≥ 8, then the asymptotic series through the
/// x⁻¹² term; relative accuracy is better than 1e-10 on (0, 100].
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("digamma", format!("x = {x} not in (0, inf)")));
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < 8.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let u = inv * inv;
    let series = u * (1.0 / 12.0
        - u * (1.0 / 120.0
            - u * (1.0 / 252.0 - u * (1.0 / 240.0 - u * (1.0 / 132.0 - u * 691.0 / 32760.0)))));
    Ok(acc + x.ln() - 0.5 * inv - series)
}

/// Trigamma function Ψ'(x) for x > 0 (same recurrence + series scheme).
pub fn trigamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("trigamma", format!("x = {x} not in (0, inf)")));
    }
    let mut acc = 0.0;
    let mut x = x;
    while x < 8.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let u = inv * inv;
    let series =
        inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 - u * (1.0 / 30.0 - u * (1.0 / 42.0 - u * (1.0 / 30.0 - u * 5.0 / 66.0))))));
    Ok(acc + series)
}

/// Natural log of the gamma function for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Expected log of a Dirichlet coordinate: g_t(γ) = Ψ(γ_t) − Ψ(Σ_j γ_j).
pub fn e_log_theta(gamma: &PositiveVector) -> Result<Vec<f64>> {
    let total: f64 = gamma.iter().sum();
    let psi_total = digamma(total)?;
    gamma.iter().map(|&g| Ok(digamma(g)? - psi_total)).collect()
}

/// Log of the Dirichlet-multinomial compound pmf of `counts` under Dir(alpha),
/// in the ordered-sequence convention (no multinomial coefficient):
///
/// log Γ(Σα) − log Γ(Σα + n) + Σ_t [log Γ(α_t + n_t) − log Γ(α_t)]
pub fn dirichlet_multinomial_log_prob(counts: &[u32], alpha: &PositiveVector) -> Result<f64> {
    if counts.len() != alpha.dim() {
        return Err(Error::dims(
            "dirichlet_multinomial_log_prob",
            format!("counts dim {} vs alpha dim {}", counts.len(), alpha.dim()),
        ));
    }
    let a_sum: f64 = alpha.iter().sum();
    let n: u64 = counts.iter().map(|&c| c as u64).sum();
    let mut lp = ln_gamma(a_sum) - ln_gamma(a_sum + n as f64);
    for (&c, &a) in counts.iter().zip(alpha.iter()) {
        if c > 0 {
            lp += ln_gamma(a + c as f64) - ln_gamma(a);
        }
    }
    Ok(lp)
}

/// Numerically stable log(Σ exp(x_i)).
pub fn log_sum_exp(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::degenerate("log_sum_exp", "empty input"));
    }
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::degenerate("log_sum_exp", "all inputs are -inf"));
    }
    if max.is_nan() {
        return Err(Error::degenerate("log_sum_exp", "NaN input"));
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    Ok(max + sum.ln())
}

/// Exponentiate log weights into a normalized probability vector.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(log_w)?;
    Ok(log_w.iter().map(|lw| (lw - lse).exp()).collect())
}

/// Seeded Dirichlet draw via normalized Gamma variates.
pub fn sample_dirichlet<R: Rng>(alpha: &PositiveVector, rng: &mut R) -> Result<SimplexVector> {
    if alpha.dim() == 1 {
        return SimplexVector::new(vec![1.0]);
    }
    for _ in 0..100 {
        let mut draws = Vec::with_capacity(alpha.dim());
        for &a in alpha.iter() {
            let gamma = Gamma::new(a, 1.0)
                .map_err(|e| Error::domain("sample_dirichlet", e.to_string()))?;
            draws.push(gamma.sample(rng));
        }
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return SimplexVector::normalized(&draws);
        }
    }
    Err(Error::degenerate(
        "sample_dirichlet",
        "gamma draws underflowed to zero repeatedly",
    ))
}

/// Single draw from Cat(p). `p` need not be normalized but must have a
/// positive, finite sum.
pub fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::degenerate("sample_categorical", "zero-size draw"));
    }
    let total: f64 = probs.iter().sum();
    if !(total > 0.0) || !total.is_finite() || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(Error::degenerate(
            "sample_categorical",
            format!("weights must be nonnegative with positive finite sum (sum = {total})"),
        ));
    }
    let u: f64 = rng.random::<f64>() * total;
    let mut cum = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(i);
        }
    }
    Ok(probs.len() - 1)
}

/// Draw from a categorical given unnormalized log weights.
pub fn sample_categorical_log<R: Rng>(log_w: &[f64], rng: &mut R) -> Result<usize> {
    let probs = normalize_log_weights(log_w)?;
    sample_categorical(&probs, rng)
}

/// Precomputed cumulative table for repeated categorical draws from one
/// distribution (binary search per draw).
pub struct CatSampler {
    cum: Vec<f64>,
}

impl CatSampler {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::degenerate("CatSampler::new", "zero-size distribution"));
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) || !total.is_finite() || probs.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::degenerate(
                "CatSampler::new",
                format!("weights must be nonnegative with positive finite sum (sum = {total})"),
            ));
        }
        let mut cum = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in probs {
            acc += p;
            cum.push(acc / total);
        }
        *cum.last_mut().unwrap() = 1.0;
        Ok(CatSampler { cum })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        match self.cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => (i + 1).min(self.cum.len() - 1),
            Err(i) => i.min(self.cum.len() - 1),
        }
    }
}

/// Seeded multinomial draw: counts of `n` categorical draws from `p`.
pub fn sample_multinomial<R: Rng>(n: u32, probs: &[f64], rng: &mut R) -> Result<Vec<u32>> {
    let sampler = CatSampler::new(probs)?;
    let mut counts = vec![0u32; probs.len()];
    for _ in 0..n {
        counts[sampler.sample(rng)] += 1;
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

    #[test]
    fn digamma_at_one_is_negative_euler() {
        assert_relative_eq!(digamma(1.0).unwrap(), -EULER_MASCHERONI, max_relative = 1e-10);
    }

    #[test]
    fn digamma_recurrence() {
        assert_relative_eq!(
            digamma(2.0).unwrap(),
            digamma(1.0).unwrap() + 1.0,
            max_relative = 1e-10
        );
        // Ψ(x+1) = Ψ(x) + 1/x across the range used by the engines.
        let mut x = 0.05;
        while x <= 100.0 {
            let lhs = digamma(x + 1.0).unwrap();
            let rhs = digamma(x).unwrap() + 1.0 / x;
            assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "x = {x}");
            x += 0.173;
        }
    }

    #[test]
    fn digamma_matches_log_gamma_finite_difference() {
        // Central finite difference of lnΓ is an independent oracle.
        for &x in &[0.7, 1.3, 2.9, 10.5, 42.0] {
            let h = 1e-5;
            let fd = (ln_gamma(x + h) - ln_gamma(x - h)) / (2.0 * h);
            assert_relative_eq!(digamma(x).unwrap(), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn digamma_rejects_nonpositive() {
        assert!(digamma(0.0).is_err());
        assert!(digamma(-1.5).is_err());
        assert!(digamma(f64::NAN).is_err());
    }

    #[test]
    fn trigamma_matches_digamma_finite_difference() {
        for &x in &[0.4, 1.0, 3.7, 12.0, 80.0] {
            let h = 1e-5;
            let fd = (digamma(x + h).unwrap() - digamma(x - h).unwrap()) / (2.0 * h);
            assert_relative_eq!(trigamma(x).unwrap(), fd, max_relative = 1e-5);
        }
        // Ψ'(1) = π²/6.
        assert_relative_eq!(
            trigamma(1.0).unwrap(),
            std::f64::consts::PI.powi(2) / 6.0,
            max_relative = 1e-10
        );
    }

    #[test]
    fn e_log_theta_symmetric_ones() {
        let g = PositiveVector::new(vec![1.0, 1.0]).unwrap();
        let v = e_log_theta(&g).unwrap();
        // Ψ(1) − Ψ(2) = −1 by the recurrence.
        assert_relative_eq!(v[0], -1.0, max_relative = 1e-10);
        assert_relative_eq!(v[1], -1.0, max_relative = 1e-10);
    }

    #[test]
    fn e_log_theta_constant_vector_is_constant() {
        let g = PositiveVector::new(vec![3.3; 5]).unwrap();
        let v = e_log_theta(&g).unwrap();
        for &x in &v {
            assert_relative_eq!(x, v[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn e_log_theta_jensen_gap() {
        // exp(E[log θ_t]) < E[θ_t] strictly (Jensen), checked against the
        // Monte Carlo Dirichlet mean.
        let alpha = PositiveVector::new(vec![2.0, 3.0, 0.7]).unwrap();
        let g = e_log_theta(&alpha).unwrap();
        let total: f64 = alpha.iter().sum();
        let mut rng = rng_from_seed(7);
        let n = 100_000;
        let mut mc_mean = vec![0.0; 3];
        for _ in 0..n {
            let th = sample_dirichlet(&alpha, &mut rng).unwrap();
            for (m, v) in mc_mean.iter_mut().zip(th.iter()) {
                *m += v / n as f64;
            }
        }
        for t in 0..3 {
            let analytic = alpha[t] / total;
            assert!((mc_mean[t] - analytic).abs() < 0.005);
            assert!(g[t].exp() < analytic, "Jensen gap violated at {t}");
        }
    }

    #[test]
    fn dirmult_hand_values() {
        let a = PositiveVector::new(vec![1.0, 1.0]).unwrap();
        // Γ(2)/Γ(4) · Γ(3)/Γ(1) = 1/3
        assert_relative_eq!(
            dirichlet_multinomial_log_prob(&[2, 0], &a).unwrap(),
            (1.0f64 / 3.0).ln(),
            max_relative = 1e-12
        );
        // all-zero counts: empty product
        assert_eq!(dirichlet_multinomial_log_prob(&[0, 0], &a).unwrap(), 0.0);
        // single draw under a uniform prior: log(1/K)
        let k = 5;
        let a = PositiveVector::new(vec![2.5; k]).unwrap();
        let mut counts = vec![0u32; k];
        counts[0] = 1;
        assert_relative_eq!(
            dirichlet_multinomial_log_prob(&counts, &a).unwrap(),
            (1.0 / k as f64).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn dirmult_dim_mismatch() {
        let a = PositiveVector::new(vec![1.0, 1.0]).unwrap();
        assert!(dirichlet_multinomial_log_prob(&[1, 2, 3], &a).is_err());
    }

    #[test]
    fn dirmult_matches_monte_carlo_compound() {
        // Average multinomial multiset probability over θ ~ Dir(α) should
        // agree with the closed form (sequence convention: drop the
        // multinomial coefficient by dividing it out of the pmf).
        let alpha = PositiveVector::new(vec![1.5, 0.8, 2.0]).unwrap();
        let counts = [2u32, 1, 0];
        let n: u32 = counts.iter().sum();
        let mut rng = rng_from_seed(99);
        let reps = 200_000;
        let mut acc = 0.0;
        for _ in 0..reps {
            let th = sample_dirichlet(&alpha, &mut rng).unwrap();
            let mut p = 1.0;
            for (&c, &t) in counts.iter().zip(th.iter()) {
                p *= t.powi(c as i32);
            }
            acc += p / reps as f64;
        }
        let _ = n;
        let exact = dirichlet_multinomial_log_prob(&counts, &alpha).unwrap().exp();
        assert!((acc - exact).abs() < 5e-4, "mc {acc} vs exact {exact}");
    }

    #[test]
    fn log_sum_exp_basics() {
        let a = -3.7;
        assert_relative_eq!(log_sum_exp(&[a, a]).unwrap(), a + 2.0f64.ln(), max_relative = 1e-12);
        assert!(log_sum_exp(&[]).is_err());
        assert!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).is_err());
        // one -inf among finite entries is fine
        assert_relative_eq!(
            log_sum_exp(&[0.0, f64::NEG_INFINITY]).unwrap(),
            0.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn dirichlet_moments() {
        let alpha = PositiveVector::new(vec![2.0, 2.0]).unwrap();
        let mut rng = rng_from_seed(1234);
        let n = 100_000usize;
        let mut mean = 0.0;
        for _ in 0..n {
            mean += sample_dirichlet(&alpha, &mut rng).unwrap()[0] / n as f64;
        }
        // Var of a Dir(2,2) coordinate is 1/20; 3 MC standard errors.
        let se = (0.05f64 / n as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn samplers_are_deterministic_under_seed() {
        let alpha = PositiveVector::new(vec![0.5, 1.5, 3.0]).unwrap();
        let mut a = rng_from_seed(42);
        let mut b = rng_from_seed(42);
        for _ in 0..50 {
            assert_eq!(
                sample_dirichlet(&alpha, &mut a).unwrap().values(),
                sample_dirichlet(&alpha, &mut b).unwrap().values()
            );
        }
        let mut a = rng_from_seed(7);
        let mut b = rng_from_seed(7);
        let p = [0.2, 0.3, 0.5];
        for _ in 0..200 {
            assert_eq!(
                sample_categorical(&p, &mut a).unwrap(),
                sample_categorical(&p, &mut b).unwrap()
            );
        }
    }

    #[test]
    fn multinomial_moments() {
        let p = [0.1, 0.6, 0.3];
        let mut rng = rng_from_seed(5);
        let reps = 100_000;
        let mut mean = vec![0.0; 3];
        for _ in 0..reps {
            let c = sample_multinomial(4, &p, &mut rng).unwrap();
            for (m, x) in mean.iter_mut().zip(c.iter()) {
                *m += *x as f64 / reps as f64;
            }
        }
        for t in 0..3 {
            let expect = 4.0 * p[t];
            let se = (4.0 * p[t] * (1.0 - p[t]) / reps as f64).sqrt();
            assert!((mean[t] - expect).abs() < 3.0 * se, "component {t}");
        }
    }

    #[test]
    fn categorical_rejects_degenerate() {
        let mut rng = rng_from_seed(0);
        assert!(sample_categorical(&[], &mut rng).is_err());
        assert!(sample_categorical(&[0.0, 0.0], &mut rng).is_err());
        assert!(sample_categorical(&[1.0, -0.5], &mut rng).is_err());
    }

    #[test]
    fn simplex_and_positive_vector_invariants() {
        assert!(SimplexVector::new(vec![0.5, 0.5]).is_ok());
        assert!(SimplexVector::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexVector::new(vec![-0.1, 1.1]).is_err());
        assert!(PositiveVector::new(vec![1e-300, 1.0]).is_ok());
        assert!(PositiveVector::new(vec![0.0, 1.0]).is_err());
        assert!(PositiveVector::new(vec![f64::INFINITY]).is_err());
    }
}
