//! Collapsed Gibbs sampler over (Z, G_u, φ, α) with the user topic
//! distributions and topic-word rows integrated out analytically.
//!
//! The topic sweep is strictly sequential: each document's full conditional
//! depends on every previously updated topic through the shared topic-word
//! counts. Cluster proportions, cluster assignments, and the cluster
//! Dirichlet rows are refreshed several times after each sweep; the extra
//! refreshes do not change the stationary distribution, they only speed up
//! mixing of the non-collapsed parameters.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::math::{
    dirichlet_multinomial_log_prob, ln_gamma, log_sum_exp, rng_from_seed, sample_categorical,
    sample_dirichlet, PositiveVector, Rng64, SimplexVector,
};
use crate::model::{Hyperparams, PosteriorSummary, SufficientStats};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_sweeps: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Rounds of {phi, clusters, alpha} refreshes after each topic sweep.
    pub inner_updates_per_sweep: usize,
    /// Random-walk scale on the logit-simplex coordinates of m_g.
    pub mh_step_m: f64,
    /// Random-walk scale on log c_g.
    pub mh_step_c: f64,
    /// Tune MH step sizes during burn-in towards 20-40% acceptance.
    pub adapt_during_burnin: bool,
    /// Visit documents in a random order each sweep instead of the fixed
    /// user-major order.
    pub randomize_scan: bool,
    /// Align cluster labels across samples when summarizing.
    pub align_cluster_labels: bool,
    /// Warm-start sweeps that ignore the per-user topic counts (a
    /// corpus-level mixture pass) before the chain proper starts.
    pub dmm_init_sweeps: usize,
    /// Seed cluster assignments by k-means on user topic profiles after the
    /// warm-start sweeps. With purely random assignments the cluster layer
    /// reliably falls into a merged local mode it cannot leave: single-user
    /// moves must pass through a freshly prior-drawn row, and a prior draw
    /// essentially never fits a 100-document profile.
    pub profile_cluster_init: bool,
    /// Mix a moment-matched independence proposal into the alpha update
    /// during burn-in. It re-centers rows on their members in one move,
    /// which speeds adaptation enormously but also chases stray members, so
    /// it is confined to burn-in; the recorded phase uses the random walk
    /// alone.
    pub independence_mh_during_burnin: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_sweeps: 200,
            burn_in: 100,
            thin: 1,
            inner_updates_per_sweep: 5,
            mh_step_m: 0.1,
            mh_step_c: 0.1,
            adapt_during_burnin: true,
            randomize_scan: false,
            align_cluster_labels: true,
            dmm_init_sweeps: 20,
            profile_cluster_init: true,
            independence_mh_during_burnin: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sweeps > 0 && self.n_sweeps <= self.burn_in {
            return Err(Error::param("n_sweeps", format!("must exceed burn_in ({})", self.burn_in)));
        }
        if self.thin < 1 {
            return Err(Error::param("thin", "must be >= 1"));
        }
        if !(self.mh_step_m > 0.0) || !(self.mh_step_c > 0.0) {
            return Err(Error::param("mh_step", "step sizes must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct MhTuning {
    step_m: Vec<f64>,
    step_c: Vec<f64>,
    window_proposed: Vec<u32>,
    window_accepted: Vec<u32>,
}

impl MhTuning {
    fn new(n_clusters: usize, cfg: &GibbsConfig) -> Self {
        MhTuning {
            step_m: vec![cfg.mh_step_m; n_clusters],
            step_c: vec![cfg.mh_step_c; n_clusters],
            window_proposed: vec![0; n_clusters],
            window_accepted: vec![0; n_clusters],
        }
    }

    fn record(&mut self, g: usize, accepted: bool, adapt: bool) {
        if !adapt {
            return;
        }
        self.window_proposed[g] += 1;
        if accepted {
            self.window_accepted[g] += 1;
        }
        if self.window_proposed[g] >= 25 {
            let rate = self.window_accepted[g] as f64 / self.window_proposed[g] as f64;
            let factor = if rate < 0.2 {
                0.7
            } else if rate > 0.4 {
                1.4
            } else {
                1.0
            };
            self.step_m[g] = (self.step_m[g] * factor).clamp(1e-3, 10.0);
            self.step_c[g] = (self.step_c[g] * factor).clamp(1e-3, 10.0);
            self.window_proposed[g] = 0;
            self.window_accepted[g] = 0;
        }
    }
}

/// Full sampler state. `stats` stays consistent with (z, g, corpus) after
/// every operation.
#[derive(Debug, Clone)]
pub struct GibbsState {
    /// Per-user, per-document topic ids.
    pub z: Vec<Vec<usize>>,
    /// Per-user cluster ids.
    pub g: Vec<usize>,
    /// Simplex part of each cluster row.
    m: Vec<Vec<f64>>,
    /// Concentration part of each cluster row.
    c: Vec<f64>,
    /// Cached m_g * c_g rows.
    alpha: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub stats: SufficientStats,
    rng: Rng64,
    pub iteration: usize,
    tuning: MhTuning,
}

fn truncated_normal_positive<R: Rng>(mean: f64, sd: f64, rng: &mut R) -> Result<f64> {
    let normal = Normal::new(mean, sd).map_err(|e| Error::domain("truncated_normal", e.to_string()))?;
    for _ in 0..10_000 {
        let x = normal.sample(rng);
        if x > 0.0 {
            return Ok(x);
        }
    }
    Err(Error::degenerate(
        "truncated_normal",
        format!("no positive draw from N({mean}, {sd}) after 10000 tries"),
    ))
}

fn draw_m_prior<R: Rng>(conc: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let conc = PositiveVector::new(conc.to_vec())?;
    for _ in 0..100 {
        let m = sample_dirichlet(&conc, rng)?;
        if m.iter().all(|&x| x > 0.0) {
            return Ok(m.into_vec());
        }
    }
    Err(Error::degenerate("draw_m_prior", "Dirichlet draw kept underflowing to zero"))
}

impl GibbsState {
    /// Random initialization: uniform z and g, prior draws for alpha and phi.
    pub fn init(corpus: &Corpus, hp: &Hyperparams, seed: u64) -> Result<Self> {
        Self::init_with(corpus, hp, &GibbsConfig::default(), seed)
    }

    fn init_with(corpus: &Corpus, hp: &Hyperparams, cfg: &GibbsConfig, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = rng_from_seed(seed);
        let n_users = corpus.n_users();
        if n_users == 0 {
            return Err(Error::EmptyCorpus);
        }
        let z: Vec<Vec<usize>> = corpus
            .docs()
            .iter()
            .map(|docs| docs.iter().map(|_| rng.random_range(0..hp.n_topics)).collect())
            .collect();
        let g: Vec<usize> = (0..n_users).map(|_| rng.random_range(0..hp.n_clusters)).collect();
        let mut m = Vec::with_capacity(hp.n_clusters);
        let mut c = Vec::with_capacity(hp.n_clusters);
        for _ in 0..hp.n_clusters {
            m.push(draw_m_prior(&hp.alpha_prior.m_concentration, &mut rng)?);
            c.push(truncated_normal_positive(hp.alpha_prior.c_mean, hp.alpha_prior.c_sd, &mut rng)?);
        }
        let alpha = m.iter().zip(&c).map(|(mg, &cg)| mg.iter().map(|x| x * cg).collect()).collect();
        let nu = PositiveVector::new(vec![hp.nu; hp.n_clusters])?;
        let phi = sample_dirichlet(&nu, &mut rng)?.into_vec();
        let stats = SufficientStats::from_assignments(corpus, &z, &g, hp.n_topics, hp.n_clusters)?;
        Ok(GibbsState {
            z,
            g,
            m,
            c,
            alpha,
            phi,
            stats,
            rng,
            iteration: 0,
            tuning: MhTuning::new(hp.n_clusters, cfg),
        })
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    /// Override the cluster rows (decomposed into mean and concentration).
    pub fn set_alpha(&mut self, rows: Vec<Vec<f64>>) -> Result<()> {
        if rows.len() != self.alpha.len() {
            return Err(Error::dims("set_alpha", "wrong number of rows".to_string()));
        }
        for row in &rows {
            PositiveVector::new(row.clone())?;
        }
        self.m = rows
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                r.iter().map(|x| x / s).collect()
            })
            .collect();
        self.c = rows.iter().map(|r| r.iter().sum()).collect();
        self.alpha = rows;
        Ok(())
    }
}

/// Unnormalized log full-conditional over topics for document (u, d), with
/// that document's contributions already removed from `stats`.
fn topic_log_weights(
    state: &GibbsState,
    corpus: &Corpus,
    hp: &Hyperparams,
    u: usize,
    d: usize,
    ignore_user_factor: bool,
) -> Result<Vec<f64>> {
    let doc = &corpus.user_docs(u)[d];
    let zc = &state.stats.user_topic[u];
    let have: u32 = zc.iter().sum();
    if have as usize != corpus.user_docs(u).len() - 1 {
        return Err(Error::Inconsistency(format!(
            "topic_full_conditional requires stats excluding doc ({u}, {d}); user topic counts sum to {have} for {} docs",
            corpus.user_docs(u).len()
        )));
    }
    let a_row = &state.alpha[state.g[u]];
    let v_eta = corpus.vocab_size() as f64 * hp.eta;
    let n_d = doc.len();
    let denom: f64 = a_row.iter().zip(zc.iter()).map(|(&a, &n)| a + n as f64).sum();
    let log_denom = denom.ln();
    let mut log_w = Vec::with_capacity(hp.n_topics);
    for t in 0..hp.n_topics {
        let mut lw = if ignore_user_factor {
            0.0
        } else {
            (a_row[t] + zc[t] as f64).ln() - log_denom
        };
        // posterior predictive of the document's words under topic t, written
        // as products of ratios of consecutive gamma arguments
        let base = v_eta + state.stats.topic_totals[t] as f64;
        for k in 0..n_d {
            lw -= (base + k as f64).ln();
        }
        let tw = &state.stats.topic_word[t];
        for &(w, c) in doc.counts() {
            let start = hp.eta + tw[w as usize] as f64;
            for k in 0..c {
                lw += (start + k as f64).ln();
            }
        }
        log_w.push(lw);
    }
    Ok(log_w)
}

/// Normalized topic full conditional for document (u, d). `stats` must
/// currently exclude the document's own contributions.
pub fn topic_full_conditional(
    state: &GibbsState,
    corpus: &Corpus,
    hp: &Hyperparams,
    u: usize,
    d: usize,
) -> Result<SimplexVector> {
    let log_w = topic_log_weights(state, corpus, hp, u, d, false)?;
    let lse = log_sum_exp(&log_w)?;
    if !lse.is_finite() {
        return Err(Error::NonFinite {
            context: "topic_full_conditional",
            msg: format!("log normalizer {lse} for doc ({u}, {d})"),
        });
    }
    SimplexVector::normalized(&log_w.iter().map(|lw| (lw - lse).exp()).collect::<Vec<_>>())
}

fn sweep_topics_inner(
    state: &mut GibbsState,
    corpus: &Corpus,
    hp: &Hyperparams,
    randomize: bool,
    ignore_user_factor: bool,
) -> Result<()> {
    let mut order: Vec<(usize, usize)> = (0..corpus.n_users())
        .flat_map(|u| (0..corpus.user_docs(u).len()).map(move |d| (u, d)))
        .collect();
    if randomize {
        use rand::seq::SliceRandom;
        order.shuffle(&mut state.rng);
    }
    for (u, d) in order {
        let old = state.z[u][d];
        let counts = corpus.user_docs(u)[d].counts().to_vec();
        state.stats.remove_doc(u, old, &counts)?;
        let log_w = topic_log_weights(state, corpus, hp, u, d, ignore_user_factor)?;
        let lse = log_sum_exp(&log_w)?;
        let probs: Vec<f64> = log_w.iter().map(|lw| (lw - lse).exp()).collect();
        let new = sample_categorical(&probs, &mut state.rng)?;
        state.stats.add_doc(u, new, &counts);
        state.z[u][d] = new;
    }
    Ok(())
}

/// One sequential pass resampling every document's topic in scan order.
pub fn sweep_topics(state: &mut GibbsState, corpus: &Corpus, hp: &Hyperparams) -> Result<()> {
    sweep_topics_inner(state, corpus, hp, false, false)
}

// --- Profile-based cluster seeding ------------------------------------------
//
// k-means (plus-plus seeding) over normalized per-user topic counts. Runs
// once before the chain proper; the stationary distribution is untouched.

fn kmeans_clusters(profiles: &[Vec<f64>], k: usize, iters: usize, rng: &mut Rng64) -> Vec<usize> {
    let n = profiles.len();
    let dim = profiles[0].len();
    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    // seeding: first center uniform, then proportional to squared distance
    let mut centers: Vec<Vec<f64>> = vec![profiles[rng.random_range(0..n)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = profiles
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            sample_categorical(&d2, rng).unwrap_or(0)
        } else {
            rng.random_range(0..n)
        };
        centers.push(profiles[next].clone());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..iters {
        for (u, p) in profiles.iter().enumerate() {
            let mut best = (0usize, f64::INFINITY);
            for (g, c) in centers.iter().enumerate() {
                let d = dist2(p, c);
                if d < best.1 {
                    best = (g, d);
                }
            }
            assign[u] = best.0;
        }
        for (g, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> =
                profiles.iter().zip(&assign).filter(|(_, &a)| a == g).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for t in 0..dim {
                center[t] = members.iter().map(|p| p[t]).sum::<f64>() / members.len() as f64;
            }
        }
    }
    assign
}

fn profile_cluster_init(state: &mut GibbsState, hp: &Hyperparams) -> Result<()> {
    let profiles: Vec<Vec<f64>> = state
        .stats
        .user_topic
        .iter()
        .map(|counts| {
            let total: f64 = counts.iter().map(|&c| c as f64).sum::<f64>().max(1.0);
            counts.iter().map(|&c| c as f64 / total).collect()
        })
        .collect();
    let assign = kmeans_clusters(&profiles, hp.n_clusters, 20, &mut state.rng);
    state.g = assign;
    let mut counts = vec![0u32; hp.n_clusters];
    for &g in &state.g {
        counts[g] += 1;
    }
    state.stats.cluster_counts = counts;
    // rows for occupied clusters start at the member-mean profile with the
    // prior-mean concentration; empty clusters keep their prior draw
    let floor = 1e-4;
    for g in 0..hp.n_clusters {
        let members: Vec<usize> =
            (0..state.g.len()).filter(|&u| state.g[u] == g).collect();
        if members.is_empty() {
            continue;
        }
        let mut m: Vec<f64> = vec![0.0; hp.n_topics];
        for &u in &members {
            for t in 0..hp.n_topics {
                m[t] += profiles[u][t] / members.len() as f64;
            }
        }
        for x in m.iter_mut() {
            *x += floor;
        }
        let total: f64 = m.iter().sum();
        m.iter_mut().for_each(|x| *x /= total);
        let c = hp.alpha_prior.c_mean;
        state.alpha[g] = m.iter().map(|&x| x * c).collect();
        state.m[g] = m;
        state.c[g] = c;
    }
    let total = state.g.len() as f64 + hp.nu * hp.n_clusters as f64;
    state.phi = state
        .stats
        .cluster_counts
        .iter()
        .map(|&n| (n as f64 + hp.nu) / total)
        .collect();
    Ok(())
}

/// Conjugate draw of the corpus cluster proportions: Dir(nu + cluster counts).
pub fn resample_phi(state: &mut GibbsState, hp: &Hyperparams) -> Result<()> {
    let params: Vec<f64> = state
        .stats
        .cluster_counts
        .iter()
        .map(|&n| hp.nu + n as f64)
        .collect();
    state.phi = sample_dirichlet(&PositiveVector::new(params)?, &mut state.rng)?.into_vec();
    Ok(())
}

/// Resample one user's cluster: P(g) ∝ phi_g × DirMult(Z^(u); alpha_g).
pub fn resample_user_cluster(state: &mut GibbsState, hp: &Hyperparams, u: usize) -> Result<usize> {
    let zc = &state.stats.user_topic[u];
    let mut log_w = Vec::with_capacity(hp.n_clusters);
    for g in 0..hp.n_clusters {
        let a = PositiveVector::new(state.alpha[g].clone())?;
        let lw = if state.phi[g] > 0.0 {
            state.phi[g].ln() + dirichlet_multinomial_log_prob(zc, &a)?
        } else {
            f64::NEG_INFINITY
        };
        log_w.push(lw);
    }
    let lse = log_sum_exp(&log_w)?;
    let probs: Vec<f64> = log_w.iter().map(|lw| (lw - lse).exp()).collect();
    let new = sample_categorical(&probs, &mut state.rng)?;
    let old = state.g[u];
    if new != old {
        state.stats.move_user_cluster(old, new)?;
        state.g[u] = new;
    }
    Ok(new)
}

// --- Metropolis update for alpha_g = m_g * c_g -----------------------------
//
// The walk runs on unconstrained coordinates: additive log-ratio of m_g
// (T-1 values, last topic as reference) and log c_g. The target density in
// those coordinates picks up the change-of-variable terms sum_t ln m_t and
// ln c.

fn alr(m: &[f64]) -> Vec<f64> {
    let last = *m.last().unwrap();
    m[..m.len() - 1].iter().map(|&x| (x / last).ln()).collect()
}

fn alr_inv(y: &[f64]) -> Vec<f64> {
    let mut ext: Vec<f64> = y.to_vec();
    ext.push(0.0);
    let lse = log_sum_exp(&ext).expect("finite alr coordinates");
    ext.iter().map(|&v| (v - lse).exp()).collect()
}

fn log_dirichlet_pdf(x: &[f64], conc: &[f64]) -> f64 {
    let mut lp = ln_gamma(conc.iter().sum());
    for (&xi, &a) in x.iter().zip(conc.iter()) {
        lp -= ln_gamma(a);
        lp += (a - 1.0) * xi.ln();
    }
    lp
}

/// Log posterior density of (m, c) for cluster `g` up to a constant, plus the
/// Jacobian terms of the (alr(m), log c) parameterization. Returns -inf when
/// the point is outside the support or the density is non-finite.
fn mh_log_target(state: &GibbsState, hp: &Hyperparams, g: usize, m: &[f64], c: f64) -> f64 {
    if !(c > 0.0) || !c.is_finite() || m.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return f64::NEG_INFINITY;
    }
    let alpha: Vec<f64> = m.iter().map(|&x| x * c).collect();
    let alpha = match PositiveVector::new(alpha) {
        Ok(a) => a,
        Err(_) => return f64::NEG_INFINITY,
    };
    let mut lp = 0.0;
    for (u, &gu) in state.g.iter().enumerate() {
        if gu == g {
            match dirichlet_multinomial_log_prob(&state.stats.user_topic[u], &alpha) {
                Ok(l) => lp += l,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
    }
    lp += log_dirichlet_pdf(m, &hp.alpha_prior.m_concentration);
    // truncated normal prior on c; the truncation constant cancels in ratios
    let z = (c - hp.alpha_prior.c_mean) / hp.alpha_prior.c_sd;
    lp += -0.5 * z * z;
    // change of variables
    lp += m.iter().map(|&x| x.ln()).sum::<f64>();
    lp += c.ln();
    if lp.is_finite() {
        lp
    } else {
        f64::NEG_INFINITY
    }
}

/// Metropolis update of one cluster row. Empty clusters are refreshed with a
/// prior draw instead (an exact Gibbs move). Occupied clusters alternate a
/// symmetric random walk in (alr(m), log c) with a moment-matched
/// independence proposal; the acceptance ratio corrects both, so the
/// stationary distribution is the exact conditional either way. Returns
/// whether the move was accepted (prior refreshes always are).
pub fn mh_update_alpha(state: &mut GibbsState, hp: &Hyperparams, g: usize) -> Result<bool> {
    Ok(mh_update_alpha_detailed(state, hp, g, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum MhMove {
    PriorRefresh,
    RandomWalk,
    Independence,
}

pub(crate) fn mh_update_alpha_detailed(
    state: &mut GibbsState,
    hp: &Hyperparams,
    g: usize,
    allow_independence: bool,
) -> Result<(bool, MhMove)> {
    if state.stats.cluster_counts[g] == 0 {
        let m = draw_m_prior(&hp.alpha_prior.m_concentration, &mut state.rng)?;
        let c = truncated_normal_positive(hp.alpha_prior.c_mean, hp.alpha_prior.c_sd, &mut state.rng)?;
        state.alpha[g] = m.iter().map(|&x| x * c).collect();
        state.m[g] = m;
        state.c[g] = c;
        return Ok((true, MhMove::PriorRefresh));
    }
    if allow_independence && state.rng.random::<bool>() {
        Ok((mh_alpha_independence(state, hp, g)?, MhMove::Independence))
    } else {
        Ok((mh_alpha_random_walk(state, hp, g)?, MhMove::RandomWalk))
    }
}

fn mh_alpha_random_walk(state: &mut GibbsState, hp: &Hyperparams, g: usize) -> Result<bool> {
    let y = alr(&state.m[g]);
    let s = state.c[g].ln();
    let step_m = state.tuning.step_m[g];
    let step_c = state.tuning.step_c[g];
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let y_prop: Vec<f64> = y.iter().map(|&v| v + step_m * normal.sample(&mut state.rng)).collect();
    let s_prop = s + step_c * normal.sample(&mut state.rng);
    let m_prop = alr_inv(&y_prop);
    let c_prop = s_prop.exp();

    let cur = mh_log_target(state, hp, g, &state.m[g], state.c[g]);
    let prop = mh_log_target(state, hp, g, &m_prop, c_prop);
    // a proposal with non-finite log density is rejected outright
    let accept = if prop == f64::NEG_INFINITY {
        false
    } else {
        let log_ratio = prop - cur;
        log_ratio >= 0.0 || state.rng.random::<f64>().ln() < log_ratio
    };
    if accept {
        state.alpha[g] = m_prop.iter().map(|&x| x * c_prop).collect();
        state.m[g] = m_prop;
        state.c[g] = c_prop;
    }
    Ok(accept)
}

/// Data-informed proposal parameters for cluster `g`: the member-mean topic
/// profile and the concentration that maximizes the member likelihood along
/// that mean direction.
fn alpha_proposal_params(state: &GibbsState, hp: &Hyperparams, g: usize) -> (Vec<f64>, f64) {
    let members: Vec<usize> = (0..state.g.len()).filter(|&u| state.g[u] == g).collect();
    let t_count = hp.n_topics;
    let mut mean = vec![1e-4; t_count];
    for &u in &members {
        let counts = &state.stats.user_topic[u];
        let total: f64 = counts.iter().map(|&c| c as f64).sum::<f64>().max(1.0);
        for t in 0..t_count {
            mean[t] += counts[t] as f64 / total / members.len() as f64;
        }
    }
    let s: f64 = mean.iter().sum();
    mean.iter_mut().for_each(|x| *x /= s);
    // coarse 1-d scan for the best concentration given the mean direction
    let mut best = (f64::NEG_INFINITY, hp.alpha_prior.c_mean);
    let mut c = 0.5;
    while c < 8.0 * hp.alpha_prior.c_mean {
        if let Ok(alpha) = PositiveVector::new(mean.iter().map(|&x| x * c).collect()) {
            let mut lp = -0.5 * ((c - hp.alpha_prior.c_mean) / hp.alpha_prior.c_sd).powi(2);
            for &u in &members {
                match dirichlet_multinomial_log_prob(&state.stats.user_topic[u], &alpha) {
                    Ok(l) => lp += l,
                    Err(_) => {
                        lp = f64::NEG_INFINITY;
                        break;
                    }
                }
            }
            if lp > best.0 {
                best = (lp, c);
            }
        }
        c *= 1.25;
    }
    (mean, best.1)
}

const INDEP_M_CONCENTRATION: f64 = 200.0;
const INDEP_LOG_C_SD: f64 = 0.4;

fn mh_alpha_independence(state: &mut GibbsState, hp: &Hyperparams, g: usize) -> Result<bool> {
    let (center, c_hat) = alpha_proposal_params(state, hp, g);
    let proposal_conc: Vec<f64> =
        center.iter().map(|&x| INDEP_M_CONCENTRATION * x + 1.0).collect();
    let m_prop = match draw_m_prior(&proposal_conc, &mut state.rng) {
        Ok(m) => m,
        Err(_) => return Ok(false),
    };
    let normal = Normal::new(c_hat.ln(), INDEP_LOG_C_SD).expect("proposal scale");
    let c_prop = normal.sample(&mut state.rng).exp();

    // proposal densities in (m, c) space; the log c normal contributes a
    // 1/c Jacobian as a LogNormal density
    let log_q = |m: &[f64], c: f64| -> f64 {
        let z = (c.ln() - c_hat.ln()) / INDEP_LOG_C_SD;
        log_dirichlet_pdf(m, &proposal_conc) - 0.5 * z * z - c.ln()
    };
    // the target here is the plain (m, c) posterior density: no alr terms
    let log_pi = |s: &GibbsState, m: &[f64], c: f64| -> f64 {
        let base = mh_log_target(s, hp, g, m, c);
        if base == f64::NEG_INFINITY {
            base
        } else {
            // strip the change-of-variable terms mh_log_target adds
            base - m.iter().map(|&x| x.ln()).sum::<f64>() - c.ln()
        }
    };
    let cur_pi = log_pi(state, &state.m[g], state.c[g]);
    let prop_pi = log_pi(state, &m_prop, c_prop);
    if prop_pi == f64::NEG_INFINITY {
        return Ok(false);
    }
    let log_ratio = prop_pi - cur_pi + log_q(&state.m[g], state.c[g]) - log_q(&m_prop, c_prop);
    if !log_ratio.is_finite() && log_ratio != f64::INFINITY {
        return Ok(false);
    }
    let accept = log_ratio >= 0.0 || state.rng.random::<f64>().ln() < log_ratio;
    if accept {
        state.alpha[g] = m_prop.iter().map(|&x| x * c_prop).collect();
        state.m[g] = m_prop;
        state.c[g] = c_prop;
    }
    Ok(accept)
}

/// Collapsed log joint of (Z, G, W) given (alpha, phi) plus the parameter
/// priors; recorded per sample as a convergence diagnostic.
pub fn collapsed_log_joint(state: &GibbsState, corpus: &Corpus, hp: &Hyperparams) -> Result<f64> {
    let v = corpus.vocab_size() as f64;
    let mut lp = 0.0;
    for (u, &gu) in state.g.iter().enumerate() {
        let a = PositiveVector::new(state.alpha[gu].clone())?;
        lp += dirichlet_multinomial_log_prob(&state.stats.user_topic[u], &a)?;
        lp += state.phi[gu].max(f64::MIN_POSITIVE).ln();
    }
    for t in 0..hp.n_topics {
        lp += ln_gamma(v * hp.eta) - ln_gamma(v * hp.eta + state.stats.topic_totals[t] as f64);
        for &w in &state.stats.topic_word[t] {
            if w > 0 {
                lp += ln_gamma(hp.eta + w as f64) - ln_gamma(hp.eta);
            }
        }
    }
    lp += log_dirichlet_pdf(&state.phi, &vec![hp.nu; hp.n_clusters]);
    for g in 0..hp.n_clusters {
        lp += log_dirichlet_pdf(&state.m[g], &hp.alpha_prior.m_concentration);
        let z = (state.c[g] - hp.alpha_prior.c_mean) / hp.alpha_prior.c_sd;
        lp += -0.5 * z * z;
    }
    Ok(lp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsSample {
    /// Flattened user-major document topics.
    pub z: Vec<usize>,
    pub g: Vec<usize>,
    pub alpha: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    pub log_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsTraceMeta {
    pub seed: u64,
    pub config: GibbsConfig,
    pub hyperparams: Hyperparams,
    pub corpus_hash: String,
    pub n_topics: usize,
    pub n_clusters: usize,
    pub vocab_size: usize,
    pub user_ids: Vec<String>,
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GibbsTrace {
    pub meta: GibbsTraceMeta,
    pub samples: Vec<GibbsSample>,
    /// Post burn-in Metropolis proposals per cluster.
    pub mh_proposed: Vec<u64>,
    /// Post burn-in Metropolis acceptances per cluster.
    pub mh_accepted: Vec<u64>,
}

impl GibbsTrace {
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.mh_proposed
            .iter()
            .zip(&self.mh_accepted)
            .map(|(&p, &a)| if p == 0 { f64::NAN } else { a as f64 / p as f64 })
            .collect()
    }
}

/// Run the chain from a fresh random initialization.
pub fn run_chain(
    corpus: &Corpus,
    hp: &Hyperparams,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<(GibbsTrace, GibbsState)> {
    cfg.validate()?;
    let state = GibbsState::init_with(corpus, hp, cfg, seed)?;
    run_from(state, corpus, hp, cfg, seed)
}

/// Run the chain from an existing state (used to continue chains and to pin
/// parameters in exactness tests).
pub fn run_from(
    mut state: GibbsState,
    corpus: &Corpus,
    hp: &Hyperparams,
    cfg: &GibbsConfig,
    seed: u64,
) -> Result<(GibbsTrace, GibbsState)> {
    cfg.validate()?;
    let mut samples = Vec::new();
    let mut mh_proposed = vec![0u64; hp.n_clusters];
    let mut mh_accepted = vec![0u64; hp.n_clusters];

    if cfg.n_sweeps > 0 {
        for _ in 0..cfg.dmm_init_sweeps {
            sweep_topics_inner(&mut state, corpus, hp, cfg.randomize_scan, true)?;
        }
        if cfg.profile_cluster_init {
            profile_cluster_init(&mut state, hp)?;
        }
    }

    for sweep in 0..cfg.n_sweeps {
        sweep_topics_inner(&mut state, corpus, hp, cfg.randomize_scan, false)?;
        for _ in 0..cfg.inner_updates_per_sweep {
            resample_phi(&mut state, hp)?;
            for u in 0..corpus.n_users() {
                resample_user_cluster(&mut state, hp, u)?;
            }
            let in_burnin = sweep < cfg.burn_in;
            for g in 0..hp.n_clusters {
                let allow_indep = cfg.independence_mh_during_burnin && in_burnin;
                let (accepted, mv) = mh_update_alpha_detailed(&mut state, hp, g, allow_indep)?;
                if mv == MhMove::RandomWalk {
                    state.tuning.record(g, accepted, cfg.adapt_during_burnin && in_burnin);
                }
                if mv != MhMove::PriorRefresh && !in_burnin {
                    mh_proposed[g] += 1;
                    if accepted {
                        mh_accepted[g] += 1;
                    }
                }
            }
        }
        state.iteration += 1;
        let done = sweep + 1;
        if done > cfg.burn_in && (done - cfg.burn_in) % cfg.thin == 0 {
            samples.push(GibbsSample {
                z: state.z.iter().flatten().copied().collect(),
                g: state.g.clone(),
                alpha: state.alpha.clone(),
                phi: state.phi.clone(),
                log_joint: collapsed_log_joint(&state, corpus, hp)?,
            });
        }
    }

    let trace = GibbsTrace {
        meta: GibbsTraceMeta {
            seed,
            config: cfg.clone(),
            hyperparams: hp.clone(),
            corpus_hash: corpus.content_hash(),
            n_topics: hp.n_topics,
            n_clusters: hp.n_clusters,
            vocab_size: corpus.vocab_size(),
            user_ids: corpus.users().to_vec(),
            doc_ids: corpus.doc_ids(),
        },
        samples,
        mh_proposed,
        mh_accepted,
    };
    Ok((trace, state))
}

/// Greedy label matching between consecutive samples on user-overlap counts.
/// Returns perm such that `perm[new_label] = aligned_label`.
fn greedy_cluster_match(prev: &[usize], new: &[usize], n_clusters: usize) -> Vec<usize> {
    let mut contingency = vec![vec![0u32; n_clusters]; n_clusters];
    for (&a, &b) in prev.iter().zip(new.iter()) {
        contingency[a][b] += 1;
    }
    let mut perm = vec![usize::MAX; n_clusters];
    let mut used_prev = vec![false; n_clusters];
    let mut used_new = vec![false; n_clusters];
    for _ in 0..n_clusters {
        let mut best = (0u32, 0usize, 0usize);
        let mut found = false;
        for a in 0..n_clusters {
            if used_prev[a] {
                continue;
            }
            for b in 0..n_clusters {
                if used_new[b] {
                    continue;
                }
                if !found || contingency[a][b] > best.0 {
                    best = (contingency[a][b], a, b);
                    found = true;
                }
            }
        }
        let (_, a, b) = best;
        perm[b] = a;
        used_prev[a] = true;
        used_new[b] = true;
    }
    perm
}

/// Posterior summaries from a thinned trace: empirical topic frequencies per
/// document, aligned cluster frequencies per user, and posterior-mean
/// parameter estimates averaged over samples.
pub fn summarize(trace: &GibbsTrace, corpus: &Corpus) -> Result<PosteriorSummary> {
    if trace.samples.is_empty() {
        return Err(Error::degenerate("summarize", "empty trace"));
    }
    let t_count = trace.meta.n_topics;
    let g_count = trace.meta.n_clusters;
    let v = trace.meta.vocab_size;
    let eta = trace.meta.hyperparams.eta;
    let n_users = corpus.n_users();
    let n_docs = corpus.total_docs();
    if trace.meta.doc_ids.len() != n_docs || trace.meta.user_ids.len() != n_users {
        return Err(Error::dims("summarize", "trace does not match corpus shape".to_string()));
    }
    let n_samples = trace.samples.len() as f64;
    let doc_counts: Vec<usize> = corpus.docs().iter().map(|d| d.len()).collect();

    let mut doc_topic = vec![vec![0.0; t_count]; n_docs];
    let mut user_cluster = vec![vec![0.0; g_count]; n_users];
    let mut theta_mean = vec![vec![0.0; t_count]; n_users];
    let mut beta_mean = vec![vec![0.0; v]; t_count];
    let mut alpha_mean = vec![vec![0.0; t_count]; g_count];
    let mut phi_mean = vec![0.0; g_count];

    let mut reference_g: Option<Vec<usize>> = None;
    let mut alignment_fires = 0usize;
    for sample in &trace.samples {
        // align cluster labels to the previous aligned sample
        let perm: Vec<usize> = match (&reference_g, trace.meta.config.align_cluster_labels) {
            (Some(prev), true) => greedy_cluster_match(prev, &sample.g, g_count),
            _ => (0..g_count).collect(),
        };
        if perm.iter().enumerate().any(|(i, &p)| i != p) {
            alignment_fires += 1;
        }
        let g_aligned: Vec<usize> = sample.g.iter().map(|&b| perm[b]).collect();
        let mut alpha_aligned = vec![vec![0.0; t_count]; g_count];
        let mut phi_aligned = vec![0.0; g_count];
        for b in 0..g_count {
            alpha_aligned[perm[b]] = sample.alpha[b].clone();
            phi_aligned[perm[b]] = sample.phi[b];
        }
        reference_g = Some(g_aligned.clone());

        for (u, &g) in g_aligned.iter().enumerate() {
            user_cluster[u][g] += 1.0 / n_samples;
        }
        for g in 0..g_count {
            phi_mean[g] += phi_aligned[g] / n_samples;
            for t in 0..t_count {
                alpha_mean[g][t] += alpha_aligned[g][t] / n_samples;
            }
        }

        // per-sample sufficient statistics from the flattened topics
        let mut topic_word = vec![vec![0u32; v]; t_count];
        let mut topic_totals = vec![0u64; t_count];
        let mut user_topic = vec![vec![0u32; t_count]; n_users];
        let mut flat = 0usize;
        for (u, docs) in corpus.docs().iter().enumerate() {
            for doc in docs {
                let z = sample.z[flat];
                doc_topic[flat][z] += 1.0 / n_samples;
                user_topic[u][z] += 1;
                for &(w, c) in doc.counts() {
                    topic_word[z][w as usize] += c;
                    topic_totals[z] += c as u64;
                }
                flat += 1;
            }
        }
        for u in 0..n_users {
            let a = &alpha_aligned[g_aligned[u]];
            let total: f64 = a.iter().sum::<f64>() + doc_counts[u] as f64;
            for t in 0..t_count {
                theta_mean[u][t] += (a[t] + user_topic[u][t] as f64) / total / n_samples;
            }
        }
        for t in 0..t_count {
            let total = v as f64 * eta + topic_totals[t] as f64;
            for j in 0..v {
                beta_mean[t][j] += (eta + topic_word[t][j] as f64) / total / n_samples;
            }
        }
    }
    if alignment_fires > 0 {
        log::warn!(
            "cluster label alignment fired on {alignment_fires} of {} samples",
            trace.samples.len()
        );
    }
    Ok(PosteriorSummary {
        doc_ids: trace.meta.doc_ids.clone(),
        user_ids: trace.meta.user_ids.clone(),
        doc_topic_probs: doc_topic,
        user_cluster_probs: user_cluster,
        theta_mean,
        beta_mean,
        alpha_mean,
        phi_mean,
    })
}
