//! Coverage-time Monte Carlo: how many draws until every topic has been seen
//! at least once, for a follower of a cluster's average member or of all its
//! individual members, including cluster pairs and the probability of
//! covering first within a cohort.

use serde::{Deserialize, Serialize};

use crate::math::{sample_dirichlet, substream, CatSampler, PositiveVector, SimplexVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoConfig {
    /// Cluster Dirichlet rows from a fit (G×T, strictly positive).
    pub alpha: Vec<Vec<f64>>,
    /// Users per cluster, length G.
    pub cluster_sizes: Vec<usize>,
    /// Cluster subsets to evaluate; defaults to singletons plus all pairs.
    pub subsets: Option<Vec<Vec<usize>>>,
    /// Monte Carlo replicates per subset and regime.
    pub n_mc: usize,
    /// Maximum draws per replicate before truncation.
    pub cap: u64,
    pub seed: u64,
}

impl EchoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mc < 1 {
            return Err(Error::param("n_mc", "must be >= 1"));
        }
        let t = self.alpha.first().map_or(0, |r| r.len());
        if t == 0 {
            return Err(Error::param("alpha", "no topics"));
        }
        if self.cap < t as u64 {
            return Err(Error::param("cap", format!("must be >= T = {t}")));
        }
        for (g, row) in self.alpha.iter().enumerate() {
            if row.len() != t {
                return Err(Error::dims("EchoConfig", format!("alpha row {g} has wrong length")));
            }
            if row.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
                return Err(Error::param("alpha", format!("row {g} must be strictly positive")));
            }
        }
        if self.cluster_sizes.len() != self.alpha.len() {
            return Err(Error::dims("EchoConfig", "cluster_sizes length != alpha rows".to_string()));
        }
        if let Some(subsets) = &self.subsets {
            for s in subsets {
                if s.is_empty() || s.len() > 2 {
                    return Err(Error::param("subsets", "each subset must hold 1 or 2 clusters"));
                }
                if s.iter().any(|&g| g >= self.alpha.len()) {
                    return Err(Error::param("subsets", "cluster index out of range"));
                }
            }
        }
        Ok(())
    }

    fn effective_subsets(&self) -> Vec<Vec<usize>> {
        if let Some(s) = &self.subsets {
            return s.clone();
        }
        let g = self.alpha.len();
        let mut out: Vec<Vec<usize>> = (0..g).map(|i| vec![i]).collect();
        for i in 0..g {
            for j in (i + 1)..g {
                out.push(vec![i, j]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// Draws from the cluster-level expected topic distribution.
    Average,
    /// Draws from a uniform mixture over per-user topic distributions
    /// sampled from the cluster Dirichlet rows.
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoRow {
    pub clusters: Vec<usize>,
    pub regime: Regime,
    pub median: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean: f64,
    pub pr_first: f64,
    /// Replicates that hit the cap before covering every topic.
    pub truncated: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoReport {
    pub n_topics: usize,
    pub n_mc: usize,
    pub cap: u64,
    pub seed: u64,
    pub rows: Vec<EchoRow>,
}

/// One coverage-time draw: topics sampled i.i.d. from `p` until all appear.
/// Every probability must be strictly positive (a zero makes the time
/// infinite). Returns the draw count and whether the cap cut it off.
pub fn coverage_time_average<R: rand::Rng>(p: &SimplexVector, cap: u64, rng: &mut R) -> Result<(u64, bool)> {
    if let Some((t, _)) = p.iter().enumerate().find(|(_, &x)| x == 0.0) {
        return Err(Error::InfiniteCoverage { topic: t });
    }
    let sampler = CatSampler::new(p.values())?;
    draw_until_covered(p.dim(), cap, rng, |rng| sampler.sample(rng))
}

/// One coverage-time draw in the mixture regime: per included cluster, draw
/// that many per-user topic distributions from Dir(alpha_g); each topic draw
/// picks a user uniformly, then a topic from that user's distribution.
/// Distributions that underflow to an exact zero are redrawn.
pub fn coverage_time_mixture<R: rand::Rng>(
    alpha_rows: &[&[f64]],
    sizes: &[usize],
    cap: u64,
    rng: &mut R,
) -> Result<(u64, bool)> {
    if alpha_rows.is_empty() || alpha_rows.len() != sizes.len() {
        return Err(Error::dims("coverage_time_mixture", "rows/sizes mismatch".to_string()));
    }
    let t = alpha_rows[0].len();
    let mut users: Vec<CatSampler> = Vec::new();
    for (&row, &n) in alpha_rows.iter().zip(sizes.iter()) {
        let alpha = PositiveVector::new(row.to_vec())?;
        for _ in 0..n.max(1) {
            let theta = loop {
                let draw = sample_dirichlet(&alpha, rng)?;
                if draw.iter().all(|&x| x > 0.0) {
                    break draw;
                }
                log::debug!("resampled a user topic distribution with an exact zero");
            };
            users.push(CatSampler::new(theta.values())?);
        }
    }
    let user_count = users.len();
    draw_until_covered(t, cap, rng, |rng| {
        let u = rng.random_range(0..user_count);
        users[u].sample(rng)
    })
}

fn draw_until_covered<R: rand::Rng>(
    n_topics: usize,
    cap: u64,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> usize,
) -> Result<(u64, bool)> {
    let mut seen = vec![false; n_topics];
    let mut remaining = n_topics;
    let mut count = 0u64;
    while remaining > 0 {
        if count >= cap {
            return Ok((cap, true));
        }
        let t = draw(rng);
        count += 1;
        if !seen[t] {
            seen[t] = true;
            remaining -= 1;
        }
    }
    Ok((count, false))
}

/// Average-regime distribution for a cluster pair: the mean of the two
/// normalized rows.
pub fn combine_clusters_average(alpha_a: &[f64], alpha_b: &[f64]) -> Result<SimplexVector> {
    let a = SimplexVector::normalized(alpha_a)?;
    let b = SimplexVector::normalized(alpha_b)?;
    let mixed: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| 0.5 * (x + y)).collect();
    SimplexVector::normalized(&mixed)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Full report over every cluster subset and both regimes. Pr(First) is
/// computed within each cohort of same-size subsets per regime: replicate r
/// pairs one draw per cohort member, the minimum wins, ties split evenly.
pub fn echo_report(cfg: &EchoConfig) -> Result<EchoReport> {
    cfg.validate()?;
    let subsets = cfg.effective_subsets();
    let t = cfg.alpha[0].len();

    struct SetSamples {
        clusters: Vec<usize>,
        regime: Regime,
        draws: Vec<u64>,
        truncated: u64,
    }

    let mut all: Vec<SetSamples> = Vec::new();
    for (set_idx, clusters) in subsets.iter().enumerate() {
        for (regime_idx, regime) in [Regime::Average, Regime::Mixture].into_iter().enumerate() {
            let stream_base = ((set_idx * 2 + regime_idx) as u64) << 32;
            let mut draws = Vec::with_capacity(cfg.n_mc);
            let mut truncated = 0u64;
            match regime {
                Regime::Average => {
                    let p = if clusters.len() == 1 {
                        SimplexVector::normalized(&cfg.alpha[clusters[0]])?
                    } else {
                        combine_clusters_average(&cfg.alpha[clusters[0]], &cfg.alpha[clusters[1]])?
                    };
                    for r in 0..cfg.n_mc {
                        let mut rng = substream(cfg.seed, stream_base | r as u64);
                        let (n, trunc) = coverage_time_average(&p, cfg.cap, &mut rng)?;
                        if trunc {
                            truncated += 1;
                        }
                        draws.push(n);
                    }
                }
                Regime::Mixture => {
                    let rows: Vec<&[f64]> =
                        clusters.iter().map(|&g| cfg.alpha[g].as_slice()).collect();
                    let sizes: Vec<usize> = clusters.iter().map(|&g| cfg.cluster_sizes[g]).collect();
                    for r in 0..cfg.n_mc {
                        let mut rng = substream(cfg.seed, stream_base | r as u64);
                        let (n, trunc) = coverage_time_mixture(&rows, &sizes, cfg.cap, &mut rng)?;
                        if trunc {
                            truncated += 1;
                        }
                        draws.push(n);
                    }
                }
            }
            all.push(SetSamples { clusters: clusters.clone(), regime, draws, truncated });
        }
    }

    // Pr(First) within cohorts of equal subset size, per regime.
    let mut pr_first = vec![0.0f64; all.len()];
    for regime in [Regime::Average, Regime::Mixture] {
        for cohort_size in [1usize, 2] {
            let members: Vec<usize> = all
                .iter()
                .enumerate()
                .filter(|(_, s)| s.regime == regime && s.clusters.len() == cohort_size)
                .map(|(i, _)| i)
                .collect();
            if members.len() < 2 {
                // a cohort of one trivially covers first
                if let Some(&lone) = members.first() {
                    pr_first[lone] = 1.0;
                }
                continue;
            }
            for r in 0..cfg.n_mc {
                let min = members.iter().map(|&i| all[i].draws[r]).min().unwrap();
                let winners: Vec<usize> =
                    members.iter().copied().filter(|&i| all[i].draws[r] == min).collect();
                let credit = 1.0 / (winners.len() as f64 * cfg.n_mc as f64);
                for i in winners {
                    pr_first[i] += credit;
                }
            }
        }
    }

    let rows = all
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut sorted: Vec<f64> = s.draws.iter().map(|&d| d as f64).collect();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            EchoRow {
                clusters: s.clusters,
                regime: s.regime,
                median: percentile(&sorted, 0.5),
                ci_low: percentile(&sorted, 0.025),
                ci_high: percentile(&sorted, 0.975),
                mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
                pr_first: pr_first[i],
                truncated: s.truncated,
            }
        })
        .collect();
    Ok(EchoReport { n_topics: t, n_mc: cfg.n_mc, cap: cfg.cap, seed: cfg.seed, rows })
}
