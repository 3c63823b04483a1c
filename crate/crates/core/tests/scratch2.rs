// Trace the forces dissolving the published pattern on chunked data.

use stldac_core::generator::simulate_clda;
use stldac_core::gibbs::{run_chain, run_from, GibbsConfig, GibbsState};
use stldac_core::math::{dirichlet_multinomial_log_prob, PositiveVector};
use stldac_core::model::SufficientStats;
use stldac_core::presets;

#[test]
#[ignore]
fn probe_dissolution_forces() {
    let cfg = presets::clda_preset();
    let (corpus, truth) = simulate_clda(&cfg, 3003).unwrap();
    let hp = &cfg.hp;

    // converge topics first
    let warm = GibbsConfig { n_sweeps: 100, burn_in: 50, ..Default::default() };
    let (_, mut state) = run_chain(&corpus, hp, &warm, 1).unwrap();

    // force published pattern: {0} -> 0, {1,3} -> 1, {2} -> 2
    state.g = corpus
        .users()
        .iter()
        .map(|u| match truth.user_clusters[u] {
            0 => 0,
            1 | 3 => 1,
            2 => 2,
            _ => unreachable!(),
        })
        .collect();
    state.stats =
        SufficientStats::from_assignments(&corpus, &state.z, &state.g, 10, 4).unwrap();

    // snap alpha to members via scan (reuse the probe logic)
    let mut rows = Vec::new();
    for g in 0..4 {
        let members: Vec<usize> = (0..40).filter(|&u| state.g[u] == g).collect();
        if members.is_empty() {
            rows.push(state.alpha()[g].to_vec());
            continue;
        }
        let mut m = vec![1e-4; 10];
        for &u in &members {
            let counts = &state.stats.user_topic[u];
            let tot: f64 = counts.iter().map(|&c| c as f64).sum();
            for t in 0..10 {
                m[t] += counts[t] as f64 / tot / members.len() as f64;
            }
        }
        let s: f64 = m.iter().sum();
        m.iter_mut().for_each(|x| *x /= s);
        let mut best = (f64::NEG_INFINITY, 1.0);
        let mut c = 0.5;
        while c < 400.0 {
            let alpha = PositiveVector::new(m.iter().map(|&x| x * c).collect()).unwrap();
            let mut lp = -0.5 * ((c - 100.0) / 50.0f64).powi(2);
            for &u in &members {
                lp += dirichlet_multinomial_log_prob(&state.stats.user_topic[u], &alpha).unwrap();
            }
            if lp > best.0 {
                best = (lp, c);
            }
            c *= 1.07;
        }
        println!("cluster {g}: {} members, c_hat = {:.1}", members.len(), best.1);
        rows.push(m.iter().map(|&x| x * best.1).collect());
    }
    state.set_alpha(rows).unwrap();
    state.phi = vec![11.0 / 44.0, 21.0 / 44.0, 11.0 / 44.0, 1.0 / 44.0];

    // per-user log-weight gaps at the snapped state: own cluster vs others
    println!("per-user own-vs-best-other log weight gap (negative = wants to leave):");
    for target in [0usize, 1, 2] {
        let mut gaps = Vec::new();
        for u in 0..40 {
            if state.g[u] != target {
                continue;
            }
            let zc = &state.stats.user_topic[u];
            let own = state.phi[target].ln()
                + dirichlet_multinomial_log_prob(
                    zc,
                    &PositiveVector::new(state.alpha()[target].to_vec()).unwrap(),
                )
                .unwrap();
            let other = (0..4)
                .filter(|&g| g != target)
                .map(|g| {
                    state.phi[g].ln()
                        + dirichlet_multinomial_log_prob(
                            zc,
                            &PositiveVector::new(state.alpha()[g].to_vec()).unwrap(),
                        )
                        .unwrap()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            gaps.push(own - other);
        }
        let mn = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
        let avg: f64 = gaps.iter().sum::<f64>() / gaps.len() as f64;
        println!("  cluster {target}: min gap {mn:.1}, mean gap {avg:.1}");
    }

    // run and watch
    let run = GibbsConfig {
        n_sweeps: 300,
        burn_in: 300,
        dmm_init_sweeps: 0,
        profile_cluster_init: false,
        ..Default::default()
    };
    let run = GibbsConfig { n_sweeps: 300, burn_in: 299, ..run };
    let mut st = state;
    for stage in 0..6 {
        let stage_cfg = GibbsConfig { n_sweeps: 50, burn_in: 49, ..run.clone() };
        let (_, s2) = run_from(st, &corpus, hp, &stage_cfg, 77 + stage).unwrap();
        st = s2;
        let c_sums: Vec<f64> =
            st.alpha().iter().map(|r| r.iter().sum::<f64>().round()).collect();
        let mut cont = vec![vec![0usize; 4]; 4];
        for (u, user) in corpus.users().iter().enumerate() {
            cont[truth.user_clusters[user]][st.g[u]] += 1;
        }
        println!(
            "after {} sweeps: counts {:?} c {:?} cont {:?}",
            (stage + 1) * 50,
            st.stats.cluster_counts,
            c_sums,
            cont
        );
    }
}
