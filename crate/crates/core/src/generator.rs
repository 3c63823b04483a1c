//! Seeded simulation of corpora from the clustered single-topic process, its
//! single-cluster submodel, and the concatenate-then-chunk baseline process.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::math::{sample_categorical, sample_dirichlet, substream, CatSampler, PositiveVector, Rng64, SimplexVector};
use crate::model::{Hyperparams, SimTruth};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BetaSource {
    Synthetic { sparsity: f64, seed: u64 },
    Provided(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum UserLayout {
    /// Fixed number of users per cluster, cluster labels assigned in blocks.
    FixedClusterSizes(Vec<usize>),
    /// Sample phi ~ Dir(nu) and each user's cluster from it.
    SampledClusters { n_users: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub hp: Hyperparams,
    pub vocab_size: usize,
    pub layout: UserLayout,
    pub docs_per_user: usize,
    pub words_per_doc: usize,
    pub beta_source: BetaSource,
    /// G×T, nonnegative; zero entries give the topic exactly probability 0
    /// for that cluster's users.
    pub alpha_spec: Vec<Vec<f64>>,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.hp.validate()?;
        if self.vocab_size < 1 {
            return Err(Error::param("vocab_size", "must be >= 1"));
        }
        if self.docs_per_user < 1 {
            return Err(Error::param("docs_per_user", "must be >= 1"));
        }
        if self.words_per_doc < 1 {
            return Err(Error::param("words_per_doc", "must be >= 1"));
        }
        if self.alpha_spec.len() != self.hp.n_clusters {
            return Err(Error::dims(
                "SimConfig::validate",
                format!("alpha_spec has {} rows, expected G = {}", self.alpha_spec.len(), self.hp.n_clusters),
            ));
        }
        for (g, row) in self.alpha_spec.iter().enumerate() {
            if row.len() != self.hp.n_topics {
                return Err(Error::dims(
                    "SimConfig::validate",
                    format!("alpha_spec row {g} has {} entries, expected T = {}", row.len(), self.hp.n_topics),
                ));
            }
            if row.iter().any(|&a| a < 0.0 || !a.is_finite()) {
                return Err(Error::param("alpha_spec", format!("row {g} contains a negative or non-finite entry")));
            }
            if row.iter().all(|&a| a == 0.0) {
                return Err(Error::param("alpha_spec", format!("row {g} is entirely zero")));
            }
        }
        if let UserLayout::FixedClusterSizes(sizes) = &self.layout {
            if sizes.len() != self.hp.n_clusters {
                return Err(Error::dims(
                    "SimConfig::validate",
                    format!("{} cluster sizes for G = {}", sizes.len(), self.hp.n_clusters),
                ));
            }
        }
        if let BetaSource::Provided(beta) = &self.beta_source {
            if beta.len() != self.hp.n_topics || beta.iter().any(|r| r.len() != self.vocab_size) {
                return Err(Error::dims("SimConfig::validate", "provided beta has wrong shape".to_string()));
            }
        }
        Ok(())
    }

    fn n_users(&self) -> usize {
        match &self.layout {
            UserLayout::FixedClusterSizes(sizes) => sizes.iter().sum(),
            UserLayout::SampledClusters { n_users } => *n_users,
        }
    }
}

/// Sample a Dirichlet restricted to the positive support of `alpha`, embedding
/// exact zeros elsewhere.
pub fn sample_theta_on_support<R: rand::Rng>(alpha: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let support: Vec<usize> = alpha.iter().enumerate().filter(|(_, &a)| a > 0.0).map(|(t, _)| t).collect();
    if support.is_empty() {
        return Err(Error::param("alpha", "row is entirely zero"));
    }
    let sub = PositiveVector::new(support.iter().map(|&t| alpha[t]).collect())?;
    let draw = sample_dirichlet(&sub, rng)?;
    let mut theta = vec![0.0; alpha.len()];
    for (k, &t) in support.iter().enumerate() {
        theta[t] = draw[k];
    }
    Ok(theta)
}

/// Generate T topic-word rows with ≈ sparsity×V positive entries each and
/// pairwise total-variation distance at least 0.5 (rejection with bounded
/// retries).
pub fn make_synthetic_beta(
    n_topics: usize,
    vocab_size: usize,
    sparsity: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return Err(Error::param("sparsity", format!("must be in (0, 1], got {sparsity}")));
    }
    let support_size = ((sparsity * vocab_size as f64).round() as usize).clamp(1, vocab_size);
    let mut rng = substream(seed, u64::MAX);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n_topics);
    const MAX_RETRIES: usize = 500;
    for t in 0..n_topics {
        let mut ok = false;
        for _ in 0..MAX_RETRIES {
            let support = rand::seq::index::sample(&mut rng, vocab_size, support_size);
            let weights =
                sample_dirichlet(&PositiveVector::new(vec![1.0; support_size])?, &mut rng)?;
            let mut row = vec![0.0; vocab_size];
            for (k, j) in support.iter().enumerate() {
                row[j] = weights[k];
            }
            if rows.iter().all(|prev| total_variation(prev, &row) >= 0.5) {
                rows.push(row);
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::degenerate(
                "make_synthetic_beta",
                format!("could not separate topic {t} after {MAX_RETRIES} retries (TV >= 0.5)"),
            ));
        }
    }
    Ok(rows)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn resolve_beta(cfg: &SimConfig) -> Result<Vec<Vec<f64>>> {
    match &cfg.beta_source {
        BetaSource::Synthetic { sparsity, seed } => {
            make_synthetic_beta(cfg.hp.n_topics, cfg.vocab_size, *sparsity, *seed)
        }
        BetaSource::Provided(beta) => {
            for (t, row) in beta.iter().enumerate() {
                SimplexVector::new(row.clone()).map_err(|e| {
                    Error::param("beta_source", format!("row {t} is not on the simplex: {e}"))
                })?;
            }
            Ok(beta.clone())
        }
    }
}

fn synthetic_vocabulary(vocab_size: usize) -> Result<Vocabulary> {
    let width = (vocab_size.max(2) - 1).to_string().len();
    Vocabulary::new((0..vocab_size).map(|j| format!("w{j:0width$}")).collect())
}

fn user_label(u: usize, n_users: usize) -> String {
    let width = (n_users.max(2) - 1).to_string().len();
    format!("user{u:0width$}")
}

struct Assignments {
    phi: Vec<f64>,
    clusters: Vec<usize>,
}

fn assign_clusters(cfg: &SimConfig, rng: &mut Rng64) -> Result<Assignments> {
    match &cfg.layout {
        UserLayout::FixedClusterSizes(sizes) => {
            let total: usize = sizes.iter().sum();
            let mut clusters = Vec::with_capacity(total);
            for (g, &n) in sizes.iter().enumerate() {
                clusters.extend(std::iter::repeat(g).take(n));
            }
            let phi = sizes.iter().map(|&n| n as f64 / total.max(1) as f64).collect();
            Ok(Assignments { phi, clusters })
        }
        UserLayout::SampledClusters { n_users } => {
            let nu = PositiveVector::new(vec![cfg.hp.nu; cfg.hp.n_clusters])?;
            let phi = sample_dirichlet(&nu, rng)?.into_vec();
            let mut clusters = Vec::with_capacity(*n_users);
            for _ in 0..*n_users {
                clusters.push(sample_categorical(&phi, rng)?);
            }
            Ok(Assignments { phi, clusters })
        }
    }
}

fn build_corpus(
    cfg: &SimConfig,
    docs_per_user: &[Vec<Document>],
    n_users: usize,
) -> Result<Corpus> {
    let vocabulary = synthetic_vocabulary(cfg.vocab_size)?;
    let users: Vec<String> = (0..n_users).map(|u| user_label(u, n_users)).collect();
    Corpus::new(vocabulary, users, docs_per_user.to_vec())
}

fn doc_from_counts(
    user: &str,
    doc_idx: usize,
    docs_per_user: usize,
    counts: Vec<u32>,
) -> Result<Document> {
    let width = (docs_per_user.max(2) - 1).to_string().len();
    let sparse: Vec<(u32, u32)> = counts
        .into_iter()
        .enumerate()
        .filter(|&(_, c)| c > 0)
        .map(|(j, c)| (j as u32, c))
        .collect();
    Document::new(format!("{user}-doc{doc_idx:0width$}"), user.to_string(), sparse)
}

/// Simulate from the clustered single-topic generative process.
pub fn simulate_stldac(cfg: &SimConfig, seed: u64) -> Result<(Corpus, SimTruth)> {
    cfg.validate()?;
    let beta = resolve_beta(cfg)?;
    let mut rng = substream(seed, 0);
    let assignments = assign_clusters(cfg, &mut rng)?;
    let n_users = cfg.n_users();
    let topic_samplers: Vec<CatSampler> =
        beta.iter().map(|row| CatSampler::new(row)).collect::<Result<_>>()?;

    let mut docs: Vec<Vec<Document>> = Vec::with_capacity(n_users);
    let mut truth_z = BTreeMap::new();
    let mut truth_g = BTreeMap::new();
    let mut truth_theta = BTreeMap::new();
    for u in 0..n_users {
        let mut urng = substream(seed, 1 + u as u64);
        let g = assignments.clusters[u];
        let theta = sample_theta_on_support(&cfg.alpha_spec[g], &mut urng)?;
        let label = user_label(u, n_users);
        let mut user_docs = Vec::with_capacity(cfg.docs_per_user);
        for d in 0..cfg.docs_per_user {
            let z = sample_categorical(&theta, &mut urng)?;
            let mut counts = vec![0u32; cfg.vocab_size];
            for _ in 0..cfg.words_per_doc {
                counts[topic_samplers[z].sample(&mut urng)] += 1;
            }
            let doc = doc_from_counts(&label, d, cfg.docs_per_user, counts)?;
            truth_z.insert(doc.doc_id.clone(), z);
            user_docs.push(doc);
        }
        truth_g.insert(label.clone(), g);
        truth_theta.insert(label, theta);
        docs.push(user_docs);
    }
    let corpus = build_corpus(cfg, &docs, n_users)?;
    let truth = SimTruth {
        doc_topics: truth_z,
        word_topics: BTreeMap::new(),
        user_clusters: truth_g,
        theta: truth_theta,
        beta,
        alpha: cfg.alpha_spec.clone(),
        phi: assignments.phi,
    };
    Ok((corpus, truth))
}

/// Single-cluster submodel: every user's topic distribution is a uniform draw
/// over the simplex (Dir(1,...,1)), no clustering layer.
pub fn simulate_stlda(cfg: &SimConfig, seed: u64) -> Result<(Corpus, SimTruth)> {
    let mut flat = cfg.clone();
    flat.hp.n_clusters = 1;
    flat.hp.alpha_prior = crate::model::AlphaPrior::default_for(flat.hp.n_topics);
    flat.layout = UserLayout::FixedClusterSizes(vec![cfg.n_users()]);
    flat.alpha_spec = vec![vec![1.0; flat.hp.n_topics]];
    simulate_stldac(&flat, seed)
}

/// Concatenate-then-chunk baseline process: one long per-user document with
/// per-word topics from θ_u, chunked sequentially into short documents. The
/// recorded per-document label is the majority per-word topic (ties to the
/// lowest topic id); per-word labels are kept alongside.
pub fn simulate_clda(cfg: &SimConfig, seed: u64) -> Result<(Corpus, SimTruth)> {
    cfg.validate()?;
    let beta = resolve_beta(cfg)?;
    let mut rng = substream(seed, 0);
    let assignments = assign_clusters(cfg, &mut rng)?;
    let n_users = cfg.n_users();
    let topic_samplers: Vec<CatSampler> =
        beta.iter().map(|row| CatSampler::new(row)).collect::<Result<_>>()?;

    let mut docs: Vec<Vec<Document>> = Vec::with_capacity(n_users);
    let mut truth_z = BTreeMap::new();
    let mut word_topics = BTreeMap::new();
    let mut truth_g = BTreeMap::new();
    let mut truth_theta = BTreeMap::new();
    for u in 0..n_users {
        let mut urng = substream(seed, 1 + u as u64);
        let g = assignments.clusters[u];
        let theta = sample_theta_on_support(&cfg.alpha_spec[g], &mut urng)?;
        let label = user_label(u, n_users);
        let mut user_docs = Vec::with_capacity(cfg.docs_per_user);
        for d in 0..cfg.docs_per_user {
            // sequential chunk of the long document
            let mut counts = vec![0u32; cfg.vocab_size];
            let mut labels = Vec::with_capacity(cfg.words_per_doc);
            for _ in 0..cfg.words_per_doc {
                let z = sample_categorical(&theta, &mut urng)?;
                labels.push(z);
                counts[topic_samplers[z].sample(&mut urng)] += 1;
            }
            let mut tally = vec![0u32; cfg.hp.n_topics];
            for &z in &labels {
                tally[z] += 1;
            }
            let majority = tally
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(t, _)| t)
                .unwrap();
            let doc = doc_from_counts(&label, d, cfg.docs_per_user, counts)?;
            truth_z.insert(doc.doc_id.clone(), majority);
            word_topics.insert(doc.doc_id.clone(), labels);
            user_docs.push(doc);
        }
        truth_g.insert(label.clone(), g);
        truth_theta.insert(label, theta);
        docs.push(user_docs);
    }
    let corpus = build_corpus(cfg, &docs, n_users)?;
    let truth = SimTruth {
        doc_topics: truth_z,
        word_topics,
        user_clusters: truth_g,
        theta: truth_theta,
        beta,
        alpha: cfg.alpha_spec.clone(),
        phi: assignments.phi,
    };
    Ok((corpus, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            hp: Hyperparams::new(3, 2).unwrap(),
            vocab_size: 20,
            layout: UserLayout::FixedClusterSizes(vec![2, 2]),
            docs_per_user: 5,
            words_per_doc: 6,
            beta_source: BetaSource::Synthetic { sparsity: 0.5, seed: 11 },
            alpha_spec: vec![vec![5.0, 5.0, 5.0], vec![10.0, 10.0, 0.0]],
        }
    }

    #[test]
    fn stldac_shapes_and_determinism() {
        let cfg = small_cfg();
        let (c1, t1) = simulate_stldac(&cfg, 42).unwrap();
        let (c2, t2) = simulate_stldac(&cfg, 42).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(t1, t2);
        assert_eq!(c1.n_users(), 4);
        assert_eq!(c1.total_docs(), 20);
        assert_eq!(c1.total_tokens(), 120);
        let (c3, _) = simulate_stldac(&cfg, 43).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn paper_scale_document_count() {
        // 4 clusters × 10 users × 100 docs × 13 words
        let hp = Hyperparams::new(10, 4).unwrap();
        let cfg = SimConfig {
            hp,
            vocab_size: 200,
            layout: UserLayout::FixedClusterSizes(vec![10, 10, 10, 10]),
            docs_per_user: 100,
            words_per_doc: 13,
            beta_source: BetaSource::Synthetic { sparsity: 0.3, seed: 1 },
            alpha_spec: paper_alpha_design(),
        };
        let (corpus, truth) = simulate_stldac(&cfg, 5).unwrap();
        assert_eq!(corpus.total_docs(), 4_000);
        assert_eq!(corpus.n_users(), 40);
        assert_eq!(truth.doc_topics.len(), 4_000);
    }

    fn paper_alpha_design() -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; 10]; 4];
        for t in 0..10 {
            a[0][t] = 10.0;
        }
        for t in 0..5 {
            a[1][t] = 20.0;
        }
        for t in 5..10 {
            a[2][t] = 20.0;
        }
        for t in 1..5 {
            a[3][t] = 25.0;
        }
        a
    }

    #[test]
    fn single_topic_degenerates() {
        let mut cfg = small_cfg();
        cfg.hp = Hyperparams::new(1, 1).unwrap();
        cfg.layout = UserLayout::FixedClusterSizes(vec![3]);
        cfg.alpha_spec = vec![vec![4.0]];
        let (_, truth) = simulate_stldac(&cfg, 9).unwrap();
        assert!(truth.doc_topics.values().all(|&z| z == 0));
        assert!(truth.theta.values().all(|th| th == &vec![1.0]));
    }

    #[test]
    fn zero_support_topics_are_never_emitted() {
        let mut cfg = small_cfg();
        cfg.docs_per_user = 200;
        let (_, truth) = simulate_stldac(&cfg, 17).unwrap();
        for (user, &g) in &truth.user_clusters {
            if g == 1 {
                // cluster 1 has support {0, 1} only
                assert_eq!(truth.theta[user][2], 0.0);
                for (doc, &z) in &truth.doc_topics {
                    if doc.starts_with(user) {
                        assert_ne!(z, 2, "doc {doc} from {user} emitted unsupported topic");
                    }
                }
            }
        }
    }

    #[test]
    fn all_zero_alpha_row_rejected() {
        let mut cfg = small_cfg();
        cfg.alpha_spec[1] = vec![0.0, 0.0, 0.0];
        assert!(simulate_stldac(&cfg, 1).is_err());
    }

    #[test]
    fn stlda_theta_mean_is_uniform() {
        let mut cfg = small_cfg();
        cfg.layout = UserLayout::FixedClusterSizes(vec![300, 0]);
        cfg.docs_per_user = 1;
        cfg.words_per_doc = 2;
        let (_, truth) = simulate_stlda(&cfg, 21).unwrap();
        assert!(truth.user_clusters.values().all(|&g| g == 0));
        let n = truth.theta.len() as f64;
        let mut mean = vec![0.0; 3];
        for th in truth.theta.values() {
            for (m, v) in mean.iter_mut().zip(th) {
                *m += v / n;
            }
        }
        // Dir(1,1,1) coordinate mean 1/3, var 1/18
        let se = (1.0 / 18.0f64 / n).sqrt();
        for t in 0..3 {
            assert!((mean[t] - 1.0 / 3.0).abs() < 4.0 * se, "mean[{t}] = {}", mean[t]);
        }
        // one doc per topic draw: n_u equals docs_per_user
        assert_eq!(truth.doc_topics.len(), 300);
    }

    #[test]
    fn clda_chunks_and_mixed_word_topics() {
        let mut cfg = small_cfg();
        cfg.docs_per_user = 8;
        cfg.words_per_doc = 10;
        let (corpus, truth) = simulate_clda(&cfg, 3).unwrap();
        for u in 0..corpus.n_users() {
            assert_eq!(corpus.user_docs(u).len(), 8);
        }
        // with non-degenerate theta some chunk must contain more than one
        // distinct per-word topic
        let mixed = truth
            .word_topics
            .values()
            .any(|labels| labels.iter().any(|&z| z != labels[0]));
        assert!(mixed, "no chunk contained words from more than one topic");
        // majority label consistent with per-word labels
        for (doc, labels) in &truth.word_topics {
            let mut tally = vec![0u32; cfg.hp.n_topics];
            for &z in labels {
                tally[z] += 1;
            }
            let best = tally.iter().max().unwrap();
            assert_eq!(tally[truth.doc_topics[doc]], *best);
        }
    }

    #[test]
    fn synthetic_beta_separation_and_sparsity() {
        let beta = make_synthetic_beta(4, 100, 0.3, 7).unwrap();
        for row in &beta {
            let nnz = row.iter().filter(|&&x| x > 0.0).count();
            assert_eq!(nnz, 30);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        for i in 0..4 {
            for j in 0..i {
                assert!(total_variation(&beta[i], &beta[j]) >= 0.5);
            }
        }
        // sparsity=1, T=1: a single full-support row
        let full = make_synthetic_beta(1, 16, 1.0, 1).unwrap();
        assert!(full[0].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn word_marginals_match_mixture() {
        // Empirical word frequencies converge to Σ_t P(t)·β_t.
        let mut cfg = small_cfg();
        cfg.layout = UserLayout::FixedClusterSizes(vec![10, 0]);
        cfg.docs_per_user = 1_000;
        cfg.words_per_doc = 5;
        cfg.alpha_spec = vec![vec![2.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]];
        let (corpus, truth) = simulate_stldac(&cfg, 77).unwrap();
        // topic marginal P(t) averaged over users' true theta
        let mut p_t = vec![0.0; 3];
        for th in truth.theta.values() {
            for (p, v) in p_t.iter_mut().zip(th) {
                *p += v / truth.theta.len() as f64;
            }
        }
        let mut expected = vec![0.0; cfg.vocab_size];
        for t in 0..3 {
            for j in 0..cfg.vocab_size {
                expected[j] += p_t[t] * truth.beta[t][j];
            }
        }
        let total = corpus.total_tokens() as f64;
        let mut observed = vec![0.0; cfg.vocab_size];
        for docs in corpus.docs() {
            for doc in docs {
                for &(w, c) in doc.counts() {
                    observed[w as usize] += c as f64 / total;
                }
            }
        }
        for j in 0..cfg.vocab_size {
            let se = (expected[j] * (1.0 - expected[j]) / total).sqrt().max(1e-4);
            assert!(
                (observed[j] - expected[j]).abs() < 4.0 * se,
                "word {j}: observed {} expected {}",
                observed[j],
                expected[j]
            );
        }
    }
}
