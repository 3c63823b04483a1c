// Cluster-layer exactness: with topics and alpha fixed, the chain over
// (G, phi) must match the enumerated marginal over G.

use stldac_core::corpus::{Corpus, Document, Vocabulary};
use stldac_core::gibbs::{resample_phi, resample_user_cluster, GibbsState};
use stldac_core::math::{dirichlet_multinomial_log_prob, ln_gamma, PositiveVector};
use stldac_core::model::Hyperparams;

#[test]
#[ignore]
fn probe_cluster_layer_exactness() {
    let vocab = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
    let users = vec!["u0".to_string(), "u1".to_string()];
    let docs = vec![
        vec![
            Document::new("u0-a".into(), "u0".into(), vec![(0, 2)]).unwrap(),
            Document::new("u0-b".into(), "u0".into(), vec![(0, 1), (1, 1)]).unwrap(),
            Document::new("u0-c".into(), "u0".into(), vec![(1, 2)]).unwrap(),
        ],
        vec![
            Document::new("u1-a".into(), "u1".into(), vec![(1, 2)]).unwrap(),
            Document::new("u1-b".into(), "u1".into(), vec![(1, 1), (0, 1)]).unwrap(),
        ],
    ];
    let corpus = Corpus::new(vocab, users, docs).unwrap();
    let mut hp = Hyperparams::new(2, 2).unwrap();
    hp.nu = 1.0;

    let mut state = GibbsState::init(&corpus, &hp, 3).unwrap();
    // fix topics: user 0 has counts (2,1), user 1 has (0,2)
    state.z = vec![vec![0, 0, 1], vec![1, 1]];
    state.stats = stldac_core::model::SufficientStats::from_assignments(
        &corpus, &state.z, &state.g, 2, 2,
    )
    .unwrap();
    let alpha = vec![vec![3.0, 1.0], vec![0.5, 2.0]];
    state.set_alpha(alpha.clone()).unwrap();

    // enumerate P(g0, g1) ∝ ClusterCountDirMult(counts; nu) × Π DirMult(Z^u; α_g)
    let zc = [vec![2u32, 1], vec![0u32, 2]];
    let rows: Vec<PositiveVector> =
        alpha.iter().map(|r| PositiveVector::new(r.clone()).unwrap()).collect();
    let mut log_post = Vec::new();
    for g0 in 0..2 {
        for g1 in 0..2 {
            let mut counts = [0u32; 2];
            counts[g0] += 1;
            counts[g1] += 1;
            // integral of phi_g0 * phi_g1 under Dir(nu, nu)
            let lp_counts = ln_gamma(2.0 * hp.nu) - ln_gamma(2.0 * hp.nu + 2.0)
                + (ln_gamma(hp.nu + counts[0] as f64) - ln_gamma(hp.nu))
                + (ln_gamma(hp.nu + counts[1] as f64) - ln_gamma(hp.nu));
            let lp = lp_counts
                + dirichlet_multinomial_log_prob(&zc[0], &rows[g0]).unwrap()
                + dirichlet_multinomial_log_prob(&zc[1], &rows[g1]).unwrap();
            log_post.push(lp);
        }
    }
    let lse = stldac_core::math::log_sum_exp(&log_post).unwrap();
    let exact: Vec<f64> = log_post.iter().map(|lp| (lp - lse).exp()).collect();

    // chain over (phi, G) only
    let reps = 2_000_000usize;
    let mut freq = vec![0.0; 4];
    for _ in 0..reps {
        resample_phi(&mut state, &hp).unwrap();
        resample_user_cluster(&mut state, &hp, 0).unwrap();
        resample_user_cluster(&mut state, &hp, 1).unwrap();
        freq[state.g[0] * 2 + state.g[1]] += 1.0 / reps as f64;
    }
    println!("exact:  {exact:?}");
    println!("chain:  {freq:?}");
    let tv: f64 =
        0.5 * exact.iter().zip(&freq).map(|(a, b)| (a - b).abs()).sum::<f64>();
    println!("total variation: {tv:.5}");
    assert!(tv < 0.01);
}
