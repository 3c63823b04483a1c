//! Named simulation presets for the validation studies: a four-cluster
//! design with overlapping and disjoint topic supports, its single-cluster
//! submodel, the concatenate-then-chunk baseline, and a three-cluster design
//! for comparing the two inference engines.

use crate::generator::{BetaSource, SimConfig, UserLayout};
use crate::model::Hyperparams;

/// Four-cluster design over ten topics: one cluster uses every topic
/// (weight 10), two use disjoint halves (weight 20), and one uses four of
/// one half's five topics (weight 25).
pub fn four_cluster_alpha() -> Vec<Vec<f64>> {
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

/// Three-cluster design over ten topics: all topics, first five, last five.
pub fn three_cluster_alpha() -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; 10]; 3];
    for t in 0..10 {
        a[0][t] = 10.0;
    }
    for t in 0..5 {
        a[1][t] = 20.0;
    }
    for t in 5..10 {
        a[2][t] = 20.0;
    }
    a
}

/// Four clusters × 10 users × 100 documents × 13 words, T=10, V=4534,
/// synthetic sparse topics.
pub fn stldac_preset() -> SimConfig {
    SimConfig {
        hp: Hyperparams::new(10, 4).expect("valid preset"),
        vocab_size: 4534,
        layout: UserLayout::FixedClusterSizes(vec![10, 10, 10, 10]),
        docs_per_user: 100,
        words_per_doc: 13,
        beta_source: BetaSource::Synthetic { sparsity: 0.2, seed: 20 },
        alpha_spec: four_cluster_alpha(),
    }
}

/// Single-cluster submodel data: same shape, every user's topic distribution
/// uniform on the simplex.
pub fn stlda_preset() -> SimConfig {
    let mut cfg = stldac_preset();
    cfg.hp = Hyperparams::new(10, 1).expect("valid preset");
    cfg.layout = UserLayout::FixedClusterSizes(vec![40]);
    cfg.alpha_spec = vec![vec![1.0; 10]];
    cfg
}

/// Concatenate-then-chunk baseline data with the four-cluster design.
pub fn clda_preset() -> SimConfig {
    stldac_preset()
}

/// Three-cluster engine-comparison design; scale it to the desired document
/// count via users per cluster and documents per user.
pub fn comparison_preset(users_per_cluster: usize, docs_per_user: usize) -> SimConfig {
    SimConfig {
        hp: Hyperparams::new(10, 3).expect("valid preset"),
        vocab_size: 4534,
        layout: UserLayout::FixedClusterSizes(vec![users_per_cluster; 3]),
        docs_per_user,
        words_per_doc: 13,
        beta_source: BetaSource::Synthetic { sparsity: 0.2, seed: 20 },
        alpha_spec: three_cluster_alpha(),
    }
}
