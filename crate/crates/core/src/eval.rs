//! Evaluation metrics: normalized mutual information, per-cluster true/false
//! positive rates, topic coherence on a reference corpus of long documents,
//! and argmax classification of posterior summaries.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document, Vocabulary};
use crate::math::{substream, CatSampler};
use crate::model::PosteriorSummary;
use crate::{Error, Result};

/// Item ids mapped to integer labels.
pub type LabelAssignment = BTreeMap<String, usize>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NmiNormalization {
    Arithmetic,
    Geometric,
    Min,
    Max,
}

/// Mutual information between two labelings of the same items, normalized by
/// the arithmetic mean of the label entropies (other normalizations
/// selectable via [`nmi_with`]). 1 when either labeling is a relabeling of
/// the other; defined as 1 when both entropies are zero.
pub fn nmi(a: &LabelAssignment, b: &LabelAssignment) -> Result<f64> {
    nmi_with(a, b, NmiNormalization::Arithmetic)
}

pub fn nmi_with(a: &LabelAssignment, b: &LabelAssignment, norm: NmiNormalization) -> Result<f64> {
    if a.len() != b.len() || a.keys().any(|k| !b.contains_key(k)) {
        return Err(Error::dims("nmi", "labelings cover different item sets".to_string()));
    }
    let n = a.len() as f64;
    if a.is_empty() {
        return Err(Error::degenerate("nmi", "empty labelings"));
    }
    let mut joint: HashMap<(usize, usize), f64> = HashMap::new();
    let mut pa: HashMap<usize, f64> = HashMap::new();
    let mut pb: HashMap<usize, f64> = HashMap::new();
    for (item, &la) in a {
        let lb = b[item];
        *joint.entry((la, lb)).or_insert(0.0) += 1.0 / n;
        *pa.entry(la).or_insert(0.0) += 1.0 / n;
        *pb.entry(lb).or_insert(0.0) += 1.0 / n;
    }
    let mut mi = 0.0;
    for (&(la, lb), &p) in &joint {
        if p > 0.0 {
            mi += p * (p / (pa[&la] * pb[&lb])).ln();
        }
    }
    let ha: f64 = -pa.values().map(|&p| p * p.ln()).sum::<f64>();
    let hb: f64 = -pb.values().map(|&p| p * p.ln()).sum::<f64>();
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    let denom = match norm {
        NmiNormalization::Arithmetic => 0.5 * (ha + hb),
        NmiNormalization::Geometric => (ha * hb).sqrt(),
        NmiNormalization::Min => ha.min(hb),
        NmiNormalization::Max => ha.max(hb),
    };
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Per-true-cluster recovery rates. For each true cluster c, the estimated
/// cluster e* capturing most of c's members defines TPR_c (that share) and
/// FPR_c (share of items outside c that carry label e*). Empty true clusters
/// are reported as absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfusion {
    /// (true cluster, mapped estimated cluster, TPR, FPR) sorted by cluster.
    pub rows: Vec<ConfusionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub true_cluster: usize,
    pub mapped_estimate: usize,
    pub tpr: f64,
    pub fpr: f64,
}

pub fn cluster_confusion(truth: &LabelAssignment, est: &LabelAssignment) -> Result<ClusterConfusion> {
    if truth.len() != est.len() || truth.keys().any(|k| !est.contains_key(k)) {
        return Err(Error::dims("cluster_confusion", "labelings cover different item sets".to_string()));
    }
    let mut members: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (item, &c) in truth {
        members.entry(c).or_default().push(item);
    }
    let n = truth.len();
    let mut rows = Vec::new();
    for (&c, items) in &members {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for item in items {
            *votes.entry(est[*item]).or_insert(0) += 1;
        }
        // ties break to the lowest estimated label (BTreeMap order)
        let (&e_star, &captured) = votes.iter().max_by_key(|&(e, n)| (*n, std::cmp::Reverse(*e))).unwrap();
        let tpr = captured as f64 / items.len() as f64;
        let outside = n - items.len();
        let false_hits = truth
            .iter()
            .filter(|(item, &tc)| tc != c && est[*item] == e_star)
            .count();
        let fpr = if outside == 0 { 0.0 } else { false_hits as f64 / outside as f64 };
        rows.push(ConfusionRow { true_cluster: c, mapped_estimate: e_star, tpr, fpr });
    }
    Ok(ClusterConfusion { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceConfig {
    /// Number of top words scored per topic.
    pub top_words: usize,
}

impl Default for CoherenceConfig {
    fn default() -> Self {
        CoherenceConfig { top_words: 15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceReport {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    /// Topics containing a selected word that never occurs in the reference
    /// corpus (their score used the guard value for those pairs).
    pub guarded_topics: Vec<usize>,
}

/// Pairwise co-occurrence coherence of each topic's top words on a reference
/// corpus: Σ_{i=2..V_top} Σ_{j<i} log((p(w_i, w_j) + 1/D) / p(w_j)), with
/// document-presence probabilities. Raw scores are reported; ranking treats
/// less-negative as more coherent.
pub fn topic_coherence(
    beta: &[Vec<f64>],
    reference: &Corpus,
    cfg: &CoherenceConfig,
) -> Result<CoherenceReport> {
    if cfg.top_words < 2 {
        return Err(Error::param("top_words", "must be >= 2"));
    }
    if reference.total_docs() == 0 {
        return Err(Error::param("reference", "reference corpus is empty"));
    }
    let v = reference.vocab_size();
    if beta.iter().any(|row| row.len() != v) {
        return Err(Error::dims(
            "topic_coherence",
            format!("beta has {} columns, reference vocabulary has {v}", beta[0].len()),
        ));
    }
    let d = reference.total_docs() as f64;
    let smoothing = 1.0 / d;

    // top words per topic: descending probability, ties to the lower word id
    let mut selections: Vec<Vec<u32>> = Vec::with_capacity(beta.len());
    for row in beta {
        let mut idx: Vec<u32> = (0..v as u32).collect();
        idx.sort_by(|&a, &b| {
            row[b as usize]
                .partial_cmp(&row[a as usize])
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(cfg.top_words.min(v));
        selections.push(idx);
    }

    // presence bitmaps for every selected word
    let mut needed: Vec<u32> = selections.iter().flatten().copied().collect();
    needed.sort_unstable();
    needed.dedup();
    let slot: HashMap<u32, usize> = needed.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    let n_docs = reference.total_docs();
    let mut presence = vec![vec![false; n_docs]; needed.len()];
    let mut flat = 0usize;
    for docs in reference.docs() {
        for doc in docs {
            for &(w, _) in doc.counts() {
                if let Some(&s) = slot.get(&w) {
                    presence[s][flat] = true;
                }
            }
            flat += 1;
        }
    }
    let doc_freq: Vec<f64> = presence
        .iter()
        .map(|bits| bits.iter().filter(|&&b| b).count() as f64 / d)
        .collect();

    let mut per_topic = Vec::with_capacity(beta.len());
    let mut guarded = Vec::new();
    for (t, words) in selections.iter().enumerate() {
        let mut score = 0.0;
        let mut used_guard = false;
        for i in 1..words.len() {
            for j in 0..i {
                let si = slot[&words[i]];
                let sj = slot[&words[j]];
                let co = presence[si]
                    .iter()
                    .zip(&presence[sj])
                    .filter(|(a, b)| **a && **b)
                    .count() as f64
                    / d;
                let p_j = doc_freq[sj];
                if p_j > 0.0 {
                    score += ((co + smoothing) / p_j).ln();
                } else {
                    // marginal never observed: neutral guard at 1/D
                    score += ((co + smoothing) / smoothing).ln();
                    used_guard = true;
                }
            }
        }
        if used_guard {
            guarded.push(t);
        }
        per_topic.push(score);
    }
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(CoherenceReport { per_topic, mean, guarded_topics: guarded })
}

/// Reference corpus of long documents for coherence scoring: per user,
/// `n_docs` documents of `doc_len` words with per-word topics drawn from the
/// user's topic distribution.
pub fn coherence_reference_corpus(
    theta: &BTreeMap<String, Vec<f64>>,
    beta: &[Vec<f64>],
    n_docs: usize,
    doc_len: usize,
    seed: u64,
) -> Result<Corpus> {
    if theta.is_empty() {
        return Err(Error::param("theta", "no users"));
    }
    let v = beta[0].len();
    let width = (v.max(2) - 1).to_string().len();
    let vocab = Vocabulary::new((0..v).map(|j| format!("w{j:0width$}")).collect())?;
    let word_samplers: Vec<CatSampler> =
        beta.iter().map(|row| CatSampler::new(row)).collect::<Result<_>>()?;
    let mut users = Vec::new();
    let mut docs = Vec::new();
    let doc_width = (n_docs.max(2) - 1).to_string().len();
    for (u, (user, th)) in theta.iter().enumerate() {
        let mut rng = substream(seed, u as u64);
        let topic_sampler = CatSampler::new(th)?;
        let mut user_docs = Vec::with_capacity(n_docs);
        for d in 0..n_docs {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for _ in 0..doc_len {
                let t = topic_sampler.sample(&mut rng);
                let w = word_samplers[t].sample(&mut rng) as u32;
                *counts.entry(w).or_insert(0) += 1;
            }
            user_docs.push(Document::new(
                format!("{user}-ref{d:0doc_width$}"),
                user.clone(),
                counts.into_iter().collect(),
            )?);
        }
        users.push(user.clone());
        docs.push(user_docs);
    }
    Corpus::new(vocab, users, docs)
}

/// Argmax classification of a posterior summary; ties break to the lowest
/// index.
pub fn classify(summary: &PosteriorSummary) -> (LabelAssignment, LabelAssignment) {
    let doc_topics = summary
        .doc_ids
        .iter()
        .zip(&summary.doc_topic_probs)
        .map(|(id, probs)| (id.clone(), argmax(probs)))
        .collect();
    let user_clusters = summary
        .user_ids
        .iter()
        .zip(&summary.user_cluster_probs)
        .map(|(id, probs)| (id.clone(), argmax(probs)))
        .collect();
    (doc_topics, user_clusters)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Labels from a simulation truth record, for scoring against estimates.
pub fn truth_labels(truth: &crate::model::SimTruth) -> (LabelAssignment, LabelAssignment) {
    (
        truth.doc_topics.iter().map(|(k, &v)| (k.clone(), v)).collect(),
        truth.user_clusters.iter().map(|(k, &v)| (k.clone(), v)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn labels(pairs: &[(&str, usize)]) -> LabelAssignment {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn nmi_relabeling_is_one() {
        let a = labels(&[("a", 1), ("b", 1), ("c", 2), ("d", 2)]);
        let b = labels(&[("a", 2), ("b", 2), ("c", 1), ("d", 1)]);
        assert_relative_eq!(nmi(&a, &b).unwrap(), 1.0, max_relative = 1e-12);
        assert_relative_eq!(nmi(&a, &a).unwrap(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn nmi_independent_is_zero() {
        let a = labels(&[("a", 1), ("b", 1), ("c", 2), ("d", 2)]);
        let b = labels(&[("a", 1), ("b", 2), ("c", 1), ("d", 2)]);
        assert!(nmi(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn nmi_zero_entropy_cases() {
        let a = labels(&[("a", 0), ("b", 0)]);
        let b = labels(&[("a", 3), ("b", 3)]);
        assert_eq!(nmi(&a, &b).unwrap(), 1.0);
        let c = labels(&[("a", 0), ("b", 1)]);
        assert_eq!(nmi(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn nmi_rejects_mismatched_items() {
        let a = labels(&[("a", 0), ("b", 0)]);
        let b = labels(&[("a", 0), ("z", 0)]);
        assert!(nmi(&a, &b).is_err());
    }

    proptest! {
        #[test]
        fn nmi_is_symmetric_and_permutation_invariant(
            raw in proptest::collection::vec((0usize..4, 0usize..4), 2..40),
            shift in 1usize..3,
        ) {
            let a: LabelAssignment = raw.iter().enumerate()
                .map(|(i, (la, _))| (format!("i{i}"), *la)).collect();
            let b: LabelAssignment = raw.iter().enumerate()
                .map(|(i, (_, lb))| (format!("i{i}"), *lb)).collect();
            let ab = nmi(&a, &b).unwrap();
            let ba = nmi(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            // relabeling either argument leaves the score unchanged
            let a_shifted: LabelAssignment =
                a.iter().map(|(k, &v)| (k.clone(), (v + shift) % 7)).collect();
            let shifted = nmi(&a_shifted, &b).unwrap();
            prop_assert!((ab - shifted).abs() < 1e-10);
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn confusion_perfect_and_merged() {
        let truth = labels(&[("a", 0), ("b", 0), ("c", 1), ("d", 1)]);
        let perfect = cluster_confusion(&truth, &truth).unwrap();
        for row in &perfect.rows {
            assert_eq!(row.tpr, 1.0);
            assert_eq!(row.fpr, 0.0);
        }
        // everything mapped to a single estimated cluster
        let merged = labels(&[("a", 1), ("b", 1), ("c", 1), ("d", 1)]);
        let conf = cluster_confusion(&truth, &merged).unwrap();
        for row in &conf.rows {
            assert_eq!(row.tpr, 1.0);
            assert_eq!(row.fpr, 1.0);
        }
    }

    #[test]
    fn confusion_skips_empty_true_cluster() {
        // cluster ids 0 and 2 exist; 1 never appears → only two rows
        let truth = labels(&[("a", 0), ("b", 2)]);
        let est = labels(&[("a", 0), ("b", 0)]);
        let conf = cluster_confusion(&truth, &est).unwrap();
        assert_eq!(conf.rows.len(), 2);
        assert_eq!(conf.rows[0].true_cluster, 0);
        assert_eq!(conf.rows[1].true_cluster, 2);
    }

    fn reference_two_docs() -> Corpus {
        // two docs, both containing words 0 and 1
        let vocab = Vocabulary::new(vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let docs = vec![vec![
            Document::new("d0".into(), "u".into(), vec![(0, 1), (1, 2)]).unwrap(),
            Document::new("d1".into(), "u".into(), vec![(0, 2), (1, 1)]).unwrap(),
        ]];
        Corpus::new(vocab, vec!["u".into()], docs).unwrap()
    }

    #[test]
    fn coherence_hand_value() {
        // topic top-2 = (a, b), both words in both docs:
        // log((1 + 0.5)/1) = log 1.5
        let reference = reference_two_docs();
        let beta = vec![vec![0.5, 0.4, 0.1]];
        let cfg = CoherenceConfig { top_words: 2 };
        let report = topic_coherence(&beta, &reference, &cfg).unwrap();
        assert_relative_eq!(report.per_topic[0], 1.5f64.ln(), max_relative = 1e-12);
        assert!(report.guarded_topics.is_empty());
    }

    #[test]
    fn coherence_never_cooccurring_words_negative() {
        // words 0 and 1 never co-occur across 4 docs
        let vocab = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
        let mk = |id: &str, w: u32| Document::new(id.into(), "u".into(), vec![(w, 2)]).unwrap();
        let docs = vec![vec![mk("d0", 0), mk("d1", 0), mk("d2", 1), mk("d3", 1)]];
        let reference = Corpus::new(vocab, vec!["u".into()], docs).unwrap();
        let beta = vec![vec![0.6, 0.4]];
        let report = topic_coherence(&beta, &reference, &CoherenceConfig { top_words: 2 }).unwrap();
        // log((0 + 1/4)/0.5) = log(0.5) < 0
        assert_relative_eq!(report.per_topic[0], 0.5f64.ln(), max_relative = 1e-12);
    }

    #[test]
    fn coherence_identical_topics_same_score() {
        let reference = reference_two_docs();
        let beta = vec![vec![0.5, 0.4, 0.1], vec![0.5, 0.4, 0.1]];
        let report = topic_coherence(&beta, &reference, &CoherenceConfig { top_words: 2 }).unwrap();
        assert_eq!(report.per_topic[0], report.per_topic[1]);
        assert_relative_eq!(report.mean, report.per_topic[0], max_relative = 1e-12);
    }

    #[test]
    fn coherence_monotone_in_cooccurrence() {
        // same marginals, co-occurrence increasing: score must not decrease
        let vocab = Vocabulary::new(vec!["a".into(), "b".into(), "x".into()]).unwrap();
        let mk = |id: &str, counts: Vec<(u32, u32)>| {
            Document::new(id.into(), "u".into(), counts).unwrap()
        };
        // low: a and b in separate docs (each in 2 of 4)
        let low = Corpus::new(
            vocab.clone(),
            vec!["u".into()],
            vec![vec![
                mk("d0", vec![(0, 1), (2, 1)]),
                mk("d1", vec![(0, 1), (2, 1)]),
                mk("d2", vec![(1, 1), (2, 1)]),
                mk("d3", vec![(1, 1), (2, 1)]),
            ]],
        )
        .unwrap();
        // high: a and b together (each still in 2 of 4)
        let high = Corpus::new(
            vocab,
            vec!["u".into()],
            vec![vec![
                mk("d0", vec![(0, 1), (1, 1)]),
                mk("d1", vec![(0, 1), (1, 1)]),
                mk("d2", vec![(2, 1)]),
                mk("d3", vec![(2, 1)]),
            ]],
        )
        .unwrap();
        let beta = vec![vec![0.5, 0.4, 0.1]];
        let cfg = CoherenceConfig { top_words: 2 };
        let s_low = topic_coherence(&beta, &low, &cfg).unwrap().per_topic[0];
        let s_high = topic_coherence(&beta, &high, &cfg).unwrap().per_topic[0];
        assert!(s_high > s_low);
    }

    #[test]
    fn coherence_guard_flags_unseen_selected_word() {
        let reference = reference_two_docs();
        // word 2 ("c") never occurs in the reference docs
        let beta = vec![vec![0.1, 0.0, 0.9]];
        let report = topic_coherence(&beta, &reference, &CoherenceConfig { top_words: 2 }).unwrap();
        assert_eq!(report.guarded_topics, vec![0]);
    }

    #[test]
    fn reference_corpus_shapes_and_determinism() {
        let mut theta: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for u in 0..40 {
            theta.insert(format!("user{u:02}"), vec![0.25, 0.25, 0.5]);
        }
        let beta = vec![
            vec![0.5, 0.3, 0.1, 0.1],
            vec![0.1, 0.5, 0.3, 0.1],
            vec![0.1, 0.1, 0.3, 0.5],
        ];
        let a = coherence_reference_corpus(&theta, &beta, 100, 100, 9).unwrap();
        let b = coherence_reference_corpus(&theta, &beta, 100, 100, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_docs(), 4_000);
        for docs in a.docs() {
            for doc in docs {
                assert_eq!(doc.len(), 100);
            }
        }
    }

    #[test]
    fn classify_argmax_and_ties() {
        let summary = PosteriorSummary {
            doc_ids: vec!["d0".into(), "d1".into()],
            user_ids: vec!["u0".into()],
            doc_topic_probs: vec![vec![0.1, 0.8, 0.1], vec![0.5, 0.5, 0.0]],
            user_cluster_probs: vec![vec![0.0, 1.0]],
            theta_mean: vec![],
            beta_mean: vec![],
            alpha_mean: vec![],
            phi_mean: vec![],
        };
        let (docs, users) = classify(&summary);
        assert_eq!(docs["d0"], 1);
        assert_eq!(docs["d1"], 0); // exact tie goes to the lowest index
        assert_eq!(users["u0"], 1);
    }

    proptest! {
        #[test]
        fn classify_matches_brute_force(probs in proptest::collection::vec(0.0f64..1.0, 1..8)) {
            let best = argmax(&probs);
            let brute = probs
                .iter()
                .enumerate()
                .fold((0usize, f64::NEG_INFINITY), |acc, (i, &p)| {
                    if p > acc.1 { (i, p) } else { acc }
                })
                .0;
            prop_assert_eq!(best, brute);
        }
    }
}
