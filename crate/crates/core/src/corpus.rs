//! Corpus ingestion, preprocessing, vocabulary construction, and held-out
//! splitting.
//!
//! Everything here is a pure function over immutable inputs. Filtering order
//! is fixed: lowercase, stopword/URL removal, rare-word removal, then the
//! short-document drop.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::math::substream;
use crate::model::{load_artifact, save_artifact, schema};
use crate::{Error, Result};

/// Dense token ⟷ id bijection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::domain("Vocabulary::new", "vocabulary must contain at least one token"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::domain(
                    "Vocabulary::new",
                    format!("duplicate token {tok:?}"),
                ));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }
}

/// A single short document as sparse word counts (ids into the vocabulary).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub user_id: String,
    /// (word id, count) pairs sorted by word id, counts >= 1.
    counts: Vec<(u32, u32)>,
}

impl Document {
    pub fn new(doc_id: String, user_id: String, mut counts: Vec<(u32, u32)>) -> Result<Self> {
        counts.sort_unstable_by_key(|&(w, _)| w);
        if counts.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::domain("Document::new", "duplicate word id in counts"));
        }
        if counts.iter().any(|&(_, c)| c == 0) {
            return Err(Error::domain("Document::new", "zero count entry"));
        }
        Ok(Document { doc_id, user_id, counts })
    }

    pub fn counts(&self) -> &[(u32, u32)] {
        &self.counts
    }

    /// Total token count n_ud.
    pub fn len(&self) -> u32 {
        self.counts.iter().map(|&(_, c)| c).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

/// A corpus: vocabulary plus per-user collections of documents.
///
/// Users are kept in a fixed order; documents are user-major in document
/// index order wherever a flat ordering is needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    vocabulary: Vocabulary,
    users: Vec<String>,
    /// Indexed parallel to `users`.
    docs: Vec<Vec<Document>>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(vocabulary: Vocabulary, users: Vec<String>, docs: Vec<Vec<Document>>) -> Result<Self> {
        if users.len() != docs.len() {
            return Err(Error::dims(
                "Corpus::new",
                format!("{} users but {} doc lists", users.len(), docs.len()),
            ));
        }
        let v = vocabulary.len() as u32;
        for (u, list) in docs.iter().enumerate() {
            for doc in list {
                if doc.user_id != users[u] {
                    return Err(Error::domain(
                        "Corpus::new",
                        format!("document {} filed under user {} but carries user_id {}", doc.doc_id, users[u], doc.user_id),
                    ));
                }
                if let Some(&(w, _)) = doc.counts.iter().find(|&&(w, _)| w >= v) {
                    return Err(Error::domain(
                        "Corpus::new",
                        format!("document {} references word id {w} outside vocabulary of size {v}", doc.doc_id),
                    ));
                }
            }
        }
        let user_index = users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        Ok(Corpus { vocabulary, users, docs, user_index })
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn users(&self) -> &[String] {
        &self.users
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn user_position(&self, user_id: &str) -> Option<usize> {
        self.user_index.get(user_id).copied()
    }

    pub fn docs(&self) -> &[Vec<Document>] {
        &self.docs
    }

    pub fn user_docs(&self, u: usize) -> &[Document] {
        &self.docs[u]
    }

    pub fn total_docs(&self) -> usize {
        self.docs.iter().map(|d| d.len()).sum()
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs
            .iter()
            .flatten()
            .map(|d| d.len() as u64)
            .sum()
    }

    /// Document ids user-major in document index order (the flat ordering used
    /// by traces and summaries).
    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().flatten().map(|d| d.doc_id.clone()).collect()
    }

    /// Content hash over the canonical serialized form.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("corpus serialization cannot fail");
        let digest = Sha256::digest(&bytes);
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_artifact(path, schema::CORPUS, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut corpus: Corpus = load_artifact(path, schema::CORPUS)?;
        corpus.vocabulary.rebuild_index();
        corpus.user_index = corpus.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        Ok(corpus)
    }
}

/// One raw input record: either untokenized text or pre-tokenized counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawRecord {
    Text {
        user_id: String,
        doc_id: String,
        text: String,
    },
    Tokens {
        user_id: String,
        doc_id: String,
        tokens: BTreeMap<String, u32>,
    },
}

impl RawRecord {
    fn user_id(&self) -> &str {
        match self {
            RawRecord::Text { user_id, .. } | RawRecord::Tokens { user_id, .. } => user_id,
        }
    }

    fn doc_id(&self) -> &str {
        match self {
            RawRecord::Text { doc_id, .. } | RawRecord::Tokens { doc_id, .. } => doc_id,
        }
    }
}

/// Whitespace tokenizer with punctuation stripped from token edges.
/// URL-like tokens (prefix http/https/www after lowercasing) are dropped here.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    lower
        .split_whitespace()
        .filter(|raw| !(raw.starts_with("http") || raw.starts_with("www")))
        .map(|raw| raw.trim_matches(|c: char| !c.is_alphanumeric()).to_string())
        .filter(|t| !t.is_empty())
        .collect()
}

fn record_tokens(record: &RawRecord, stopwords: &HashSet<String>) -> Vec<(String, u32)> {
    let mut counts: BTreeMap<String, u32> = BTreeMap::new();
    match record {
        RawRecord::Text { text, .. } => {
            for tok in tokenize(text) {
                if stopwords.contains(&tok) {
                    continue;
                }
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        RawRecord::Tokens { tokens, .. } => {
            for (tok, &c) in tokens {
                if c == 0 {
                    continue;
                }
                let lower = tok.to_lowercase();
                if lower.starts_with("http") || lower.starts_with("www") || stopwords.contains(&lower) {
                    continue;
                }
                *counts.entry(lower).or_insert(0) += c;
            }
        }
    }
    counts.into_iter().collect()
}

/// Build a corpus from raw records.
///
/// Tokens are lowercased; stopwords and URL-like tokens are removed; tokens
/// appearing in fewer than ceil(min_doc_frac × D_raw) documents are removed;
/// documents with ≤ 1 remaining token are dropped. Users are sorted and the
/// vocabulary is built over sorted surviving tokens, so ids do not depend on
/// input ordering.
pub fn preprocess(
    raw_docs: &[RawRecord],
    min_doc_frac: f64,
    stopwords: &HashSet<String>,
) -> Result<Corpus> {
    if !(0.0..1.0).contains(&min_doc_frac) {
        return Err(Error::param("min_doc_frac", format!("must be in [0, 1), got {min_doc_frac}")));
    }
    let d_raw = raw_docs.len();
    let tokenized: Vec<Vec<(String, u32)>> =
        raw_docs.iter().map(|r| record_tokens(r, stopwords)).collect();

    // Document frequency over post-stopword documents.
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &tokenized {
        for (tok, _) in doc {
            *df.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let threshold = (min_doc_frac * d_raw as f64).ceil() as usize;

    let mut surviving_tokens: HashSet<&str> = HashSet::new();
    let mut kept: Vec<(usize, Vec<(String, u32)>)> = Vec::new();
    for (i, doc) in tokenized.iter().enumerate() {
        let filtered: Vec<(String, u32)> = doc
            .iter()
            .filter(|(tok, _)| df[tok.as_str()] >= threshold)
            .cloned()
            .collect();
        let total: u32 = filtered.iter().map(|&(_, c)| c).sum();
        if total <= 1 {
            continue;
        }
        kept.push((i, filtered));
    }
    if kept.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for (_, doc) in &kept {
        for (tok, _) in doc {
            surviving_tokens.insert(tok.as_str());
        }
    }
    let mut tokens: Vec<String> = surviving_tokens.into_iter().map(str::to_string).collect();
    tokens.sort_unstable();
    let vocabulary = Vocabulary::new(tokens)?;

    let mut users: Vec<String> = kept
        .iter()
        .map(|(i, _)| raw_docs[*i].user_id().to_string())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    users.sort_unstable();
    let user_pos: HashMap<&str, usize> = users.iter().enumerate().map(|(p, u)| (u.as_str(), p)).collect();

    let mut docs: Vec<Vec<Document>> = vec![Vec::new(); users.len()];
    for (i, toks) in kept {
        let record = &raw_docs[i];
        let counts: Vec<(u32, u32)> = toks
            .iter()
            .map(|(tok, c)| (vocabulary.id(tok).expect("surviving token indexed"), *c))
            .collect();
        let doc = Document::new(record.doc_id().to_string(), record.user_id().to_string(), counts)?;
        docs[user_pos[record.user_id()]].push(doc);
    }
    Corpus::new(vocabulary, users, docs)
}

/// Split a corpus into train and test. Each user with at least `min_docs`
/// documents contributes floor(frac × n_u) sampled documents to the test set;
/// users below the threshold stay entirely in train.
pub fn holdout_split(
    corpus: &Corpus,
    frac: f64,
    min_docs: usize,
    seed: u64,
) -> Result<(Corpus, Corpus)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::param("frac", format!("must be in (0, 1), got {frac}")));
    }
    if min_docs < 1 {
        return Err(Error::param("min_docs", "must be >= 1"));
    }
    let mut train_users = Vec::new();
    let mut train_docs = Vec::new();
    let mut test_users = Vec::new();
    let mut test_docs = Vec::new();
    for (u, docs) in corpus.docs().iter().enumerate() {
        let n_u = docs.len();
        let k = if n_u >= min_docs { (frac * n_u as f64).floor() as usize } else { 0 };
        if k == 0 {
            train_users.push(corpus.users()[u].clone());
            train_docs.push(docs.clone());
            continue;
        }
        // Per-user substream: the draw does not depend on other users.
        let mut rng = substream(seed, u as u64);
        let chosen = rand::seq::index::sample(&mut rng, n_u, k);
        let mut mask = vec![false; n_u];
        for i in chosen.iter() {
            mask[i] = true;
        }
        let (mut tr, mut te) = (Vec::new(), Vec::new());
        for (i, doc) in docs.iter().enumerate() {
            if mask[i] {
                te.push(doc.clone());
            } else {
                tr.push(doc.clone());
            }
        }
        train_users.push(corpus.users()[u].clone());
        train_docs.push(tr);
        if !te.is_empty() {
            test_users.push(corpus.users()[u].clone());
            test_docs.push(te);
        }
    }
    if test_users.is_empty() {
        log::warn!("holdout_split produced an empty test corpus (frac = {frac}, min_docs = {min_docs})");
    }
    let train = Corpus::new(corpus.vocabulary().clone(), train_users, train_docs)?;
    let test = Corpus::new(corpus.vocabulary().clone(), test_users, test_docs)?;
    Ok((train, test))
}

/// Parse line-delimited JSON records (`user_id`, `doc_id`, and either `text`
/// or `tokens`).
pub fn parse_jsonl(input: &str) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line).map_err(|e| Error::CorruptFile {
            path: format!("<input line {}>", lineno + 1),
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}
