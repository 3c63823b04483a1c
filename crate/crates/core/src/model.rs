//! Shared model definition: hyperparameters, parameter containers, sufficient
//! statistics, and versioned artifact serialization.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::{Error, Result};

/// Prior over a cluster's Dirichlet parameter row through the mean/concentration
/// decomposition α_g = m_g · c_g: m_g ~ Dir(m_concentration) on the topic
/// simplex, c_g ~ Normal(c_mean, c_sd) truncated to (0, ∞).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPrior {
    pub m_concentration: Vec<f64>,
    pub c_mean: f64,
    pub c_sd: f64,
}

impl AlphaPrior {
    pub fn default_for(n_topics: usize) -> Self {
        AlphaPrior {
            m_concentration: vec![1.0; n_topics],
            c_mean: 100.0,
            c_sd: 50.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Number of topics (T).
    pub n_topics: usize,
    /// Maximum number of author clusters (G).
    pub n_clusters: usize,
    /// Symmetric Dirichlet parameter for the topic-word rows (η).
    pub eta: f64,
    /// Symmetric Dirichlet parameter for the corpus cluster proportions (ν).
    pub nu: f64,
    pub alpha_prior: AlphaPrior,
}

impl Hyperparams {
    /// Diffuse defaults: η = ν = 1, m ~ Dir(1), c ~ N(100, 50) truncated positive.
    pub fn new(n_topics: usize, n_clusters: usize) -> Result<Self> {
        let hp = Hyperparams {
            n_topics,
            n_clusters,
            eta: 1.0,
            nu: 1.0,
            alpha_prior: AlphaPrior::default_for(n_topics),
        };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_topics < 1 {
            return Err(Error::param("n_topics", "must be >= 1"));
        }
        if self.n_clusters < 1 {
            return Err(Error::param("n_clusters", "must be >= 1"));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::param("eta", format!("must be > 0, got {}", self.eta)));
        }
        if !(self.nu > 0.0) || !self.nu.is_finite() {
            return Err(Error::param("nu", format!("must be > 0, got {}", self.nu)));
        }
        if self.alpha_prior.m_concentration.len() != self.n_topics {
            return Err(Error::param(
                "alpha_prior.m_concentration",
                format!(
                    "length {} does not match n_topics {}",
                    self.alpha_prior.m_concentration.len(),
                    self.n_topics
                ),
            ));
        }
        if self.alpha_prior.m_concentration.iter().any(|&a| !(a > 0.0)) {
            return Err(Error::param("alpha_prior.m_concentration", "entries must be > 0"));
        }
        if !(self.alpha_prior.c_sd > 0.0) {
            return Err(Error::param("alpha_prior.c_sd", "must be > 0"));
        }
        Ok(())
    }
}

/// Model-level parameters: cluster Dirichlet rows, topic-word rows, and
/// corpus cluster proportions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// G×T, strictly positive.
    pub alpha: Vec<Vec<f64>>,
    /// T×V, each row on the simplex.
    pub beta: Vec<Vec<f64>>,
    /// Length G, on the simplex.
    pub phi: Vec<f64>,
}

const SIMPLEX_TOL: f64 = 1e-8;

/// Check every container invariant, reporting the first violation found.
pub fn validate(params: &ModelParams, hp: &Hyperparams, vocab_size: usize) -> Result<()> {
    if params.alpha.len() != hp.n_clusters {
        return Err(Error::dims(
            "validate",
            format!("alpha has {} rows, expected G = {}", params.alpha.len(), hp.n_clusters),
        ));
    }
    for (g, row) in params.alpha.iter().enumerate() {
        if row.len() != hp.n_topics {
            return Err(Error::dims(
                "validate",
                format!("alpha row {g} has {} entries, expected T = {}", row.len(), hp.n_topics),
            ));
        }
        if let Some((t, &v)) = row.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "validate",
                format!("alpha[{g}][{t}] = {v} violates positivity"),
            ));
        }
    }
    if params.beta.len() != hp.n_topics {
        return Err(Error::dims(
            "validate",
            format!("beta has {} rows, expected T = {}", params.beta.len(), hp.n_topics),
        ));
    }
    for (t, row) in params.beta.iter().enumerate() {
        if row.len() != vocab_size {
            return Err(Error::dims(
                "validate",
                format!("beta row {t} has {} entries, expected V = {vocab_size}", row.len()),
            ));
        }
        if let Some((j, &v)) = row.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain(
                "validate",
                format!("beta[{t}][{j}] = {v} is negative or non-finite"),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::domain(
                "validate",
                format!("beta row {t} sums to {sum}, violating the simplex constraint"),
            ));
        }
    }
    if params.phi.len() != hp.n_clusters {
        return Err(Error::dims(
            "validate",
            format!("phi has {} entries, expected G = {}", params.phi.len(), hp.n_clusters),
        ));
    }
    if let Some((g, &v)) = params.phi.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::domain("validate", format!("phi[{g}] = {v} is negative or non-finite")));
    }
    let sum: f64 = params.phi.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::domain(
            "validate",
            format!("phi sums to {sum}, violating the simplex constraint"),
        ));
    }
    Ok(())
}

/// Integer count tables maintained incrementally by the Gibbs sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    /// Per-user topic counts, U×T.
    pub user_topic: Vec<Vec<u32>>,
    /// Topic-word counts, T×V.
    pub topic_word: Vec<Vec<u32>>,
    /// Per-topic total word counts, length T.
    pub topic_totals: Vec<u64>,
    /// Users per cluster, length G.
    pub cluster_counts: Vec<u32>,
}

impl SufficientStats {
    /// Rebuild every table from scratch from the assignments.
    pub fn from_assignments(
        corpus: &Corpus,
        z: &[Vec<usize>],
        g: &[usize],
        n_topics: usize,
        n_clusters: usize,
    ) -> Result<Self> {
        let n_users = corpus.n_users();
        let v = corpus.vocab_size();
        if z.len() != n_users || g.len() != n_users {
            return Err(Error::dims(
                "SufficientStats::from_assignments",
                format!("{} users in corpus, {} topic rows, {} cluster labels", n_users, z.len(), g.len()),
            ));
        }
        let mut stats = SufficientStats {
            user_topic: vec![vec![0; n_topics]; n_users],
            topic_word: vec![vec![0; v]; n_topics],
            topic_totals: vec![0; n_topics],
            cluster_counts: vec![0; n_clusters],
        };
        for (u, docs) in corpus.docs().iter().enumerate() {
            if z[u].len() != docs.len() {
                return Err(Error::dims(
                    "SufficientStats::from_assignments",
                    format!("user {u} has {} docs but {} topic labels", docs.len(), z[u].len()),
                ));
            }
            for (d, doc) in docs.iter().enumerate() {
                let t = z[u][d];
                stats.user_topic[u][t] += 1;
                for &(w, c) in doc.counts() {
                    stats.topic_word[t][w as usize] += c;
                    stats.topic_totals[t] += c as u64;
                }
            }
        }
        for &gu in g {
            stats.cluster_counts[gu] += 1;
        }
        Ok(stats)
    }

    /// Remove one document's contributions (its topic count and word counts).
    pub fn remove_doc(&mut self, u: usize, topic: usize, counts: &[(u32, u32)]) -> Result<()> {
        self.user_topic[u][topic] = self.user_topic[u][topic]
            .checked_sub(1)
            .ok_or_else(|| Error::Inconsistency(format!("user {u} topic {topic} count underflow")))?;
        for &(w, c) in counts {
            let cell = &mut self.topic_word[topic][w as usize];
            *cell = cell.checked_sub(c).ok_or_else(|| {
                Error::Inconsistency(format!("topic {topic} word {w} count underflow"))
            })?;
            self.topic_totals[topic] = self.topic_totals[topic]
                .checked_sub(c as u64)
                .ok_or_else(|| Error::Inconsistency(format!("topic {topic} total underflow")))?;
        }
        Ok(())
    }

    /// Add one document's contributions back under `topic`.
    pub fn add_doc(&mut self, u: usize, topic: usize, counts: &[(u32, u32)]) {
        self.user_topic[u][topic] += 1;
        for &(w, c) in counts {
            self.topic_word[topic][w as usize] += c;
            self.topic_totals[topic] += c as u64;
        }
    }

    /// Move a user between clusters.
    pub fn move_user_cluster(&mut self, from: usize, to: usize) -> Result<()> {
        self.cluster_counts[from] = self.cluster_counts[from]
            .checked_sub(1)
            .ok_or_else(|| Error::Inconsistency(format!("cluster {from} count underflow")))?;
        self.cluster_counts[to] += 1;
        Ok(())
    }
}

/// Posterior summaries in corpus order (users as in `Corpus::users`, documents
/// user-major in document index order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub doc_ids: Vec<String>,
    pub user_ids: Vec<String>,
    pub doc_topic_probs: Vec<Vec<f64>>,
    pub user_cluster_probs: Vec<Vec<f64>>,
    pub theta_mean: Vec<Vec<f64>>,
    pub beta_mean: Vec<Vec<f64>>,
    pub alpha_mean: Vec<Vec<f64>>,
    pub phi_mean: Vec<f64>,
}

/// Ground-truth record emitted by the simulators, keyed by doc/user ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub doc_topics: BTreeMap<String, usize>,
    /// Per-word topic labels (document chunking generator only).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub word_topics: BTreeMap<String, Vec<usize>>,
    pub user_clusters: BTreeMap<String, usize>,
    pub theta: BTreeMap<String, Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub alpha: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
}

// ---------------------------------------------------------------------------
// Versioned artifact files
// ---------------------------------------------------------------------------

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    version: u32,
    payload: T,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Write a versioned artifact as pretty JSON (floats keep full round-trip
/// precision).
pub fn save_artifact<T: Serialize>(path: &Path, schema: &str, payload: &T) -> Result<()> {
    let env = Envelope { schema: schema.to_string(), version: SCHEMA_VERSION, payload };
    let bytes = serde_json::to_vec_pretty(&env).map_err(|e| Error::CorruptFile {
        path: path.display().to_string(),
        msg: format!("serialization failed: {e}"),
    })?;
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&bytes).map_err(|e| io_err(path, e))?;
    f.write_all(b"\n").map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a versioned artifact, refusing unknown schemas or versions.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    // Parse the envelope header first so schema mismatches are reported as
    // such rather than as payload parse noise.
    #[derive(Deserialize)]
    struct Header {
        schema: String,
        version: u32,
    }
    let header: Header = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(Error::Schema {
            expected: schema.to_string(),
            expected_version: SCHEMA_VERSION,
            found: header.schema,
            found_version: header.version,
        });
    }
    let env: Envelope<T> = serde_json::from_slice(&bytes).map_err(|e| Error::CorruptFile {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok(env.payload)
}

pub mod schema {
    pub const CORPUS: &str = "stldac/corpus";
    pub const MODEL_PARAMS: &str = "stldac/model-params";
    pub const SIM_TRUTH: &str = "stldac/sim-truth";
    pub const GIBBS_TRACE: &str = "stldac/gibbs-trace";
    pub const POSTERIOR_SUMMARY: &str = "stldac/posterior-summary";
    pub const USER_VARIATIONAL: &str = "stldac/user-variational";
    pub const METRICS_REPORT: &str = "stldac/metrics-report";
    pub const ECHO_REPORT: &str = "stldac/echo-report";
}
