//! Variational EM: per-user fixed-point updates for (λ, γ, ξ) and
//! model-parameter maximization for (φ, β, α).
//!
//! The E-step touches only one user's variational state plus read-only model
//! parameters, so it runs in parallel across users; results are collected in
//! user order, which keeps runs bit-identical at any thread count. Naming
//! follows the model definition: φ is the corpus cluster proportions and
//! ξ_ud the per-document topic probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::math::{
    digamma, e_log_theta, ln_gamma, log_sum_exp, rng_from_seed, sample_dirichlet, trigamma,
    PositiveVector,
};
use crate::model::{Hyperparams, ModelParams};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBConfig {
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    /// Relative ELBO change below which the outer loop (and each user's inner
    /// loop) stops.
    pub elbo_rel_tol: f64,
    pub newton_max_iters: usize,
    /// Max-abs gradient component at which the Newton update stops.
    pub newton_tol: f64,
    /// Width of the Uniform(0, init_noise) jitter on the initial beta rows.
    pub init_noise: f64,
}

impl Default for VBConfig {
    fn default() -> Self {
        VBConfig {
            max_outer_iters: 500,
            max_inner_iters: 50,
            elbo_rel_tol: 1e-6,
            newton_max_iters: 50,
            newton_tol: 1e-8,
            init_noise: 0.5,
        }
    }
}

impl VBConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elbo_rel_tol > 0.0) || !(self.newton_tol > 0.0) {
            return Err(Error::param("tolerances", "must be > 0"));
        }
        if !(self.init_noise > 0.0) {
            return Err(Error::param("init_noise", "must be > 0"));
        }
        Ok(())
    }
}

/// One user's variational posterior: cluster probabilities, Dirichlet
/// parameter over topics, and per-document topic probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserVariational {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
}

/// The seven per-user bound terms, in order: cluster prior, topic-mixture
/// prior, topic assignments, word likelihood, and the three entropy terms.
pub const ELBO_TERM_NAMES: [&str; 7] = [
    "cluster_prior",
    "mixture_prior",
    "topic_assignment",
    "word_likelihood",
    "cluster_entropy",
    "mixture_entropy",
    "assignment_entropy",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub per_user: Vec<[f64; 7]>,
    pub terms: [f64; 7],
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VBFit {
    pub params: ModelParams,
    pub users: Vec<UserVariational>,
    /// One row per outer iteration: the seven terms plus the total.
    pub elbo_trace: Vec<ElboTraceRow>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboTraceRow {
    pub iter: usize,
    pub terms: [f64; 7],
    pub total: f64,
}

/// Cluster membership probabilities:
/// λ_g ∝ φ_g exp(logΓ(Σ_t α_gt) − Σ_t logΓ(α_gt) + Σ_t (α_gt − 1) g_t(γ)).
pub fn update_lambda(user: &UserVariational, params: &ModelParams) -> Result<Vec<f64>> {
    let glog = e_log_theta(&PositiveVector::new(user.gamma.clone())?)?;
    let mut log_w = Vec::with_capacity(params.alpha.len());
    for (g, row) in params.alpha.iter().enumerate() {
        if params.phi[g] == 0.0 {
            log_w.push(f64::NEG_INFINITY);
            continue;
        }
        let sum: f64 = row.iter().sum();
        let mut lw = params.phi[g].ln() + ln_gamma(sum);
        for (t, &a) in row.iter().enumerate() {
            lw += -ln_gamma(a) + (a - 1.0) * glog[t];
        }
        log_w.push(lw);
    }
    let lse = log_sum_exp(&log_w)?;
    Ok(log_w.iter().map(|lw| (lw - lse).exp()).collect())
}

/// Topic-mixture parameter: γ_t = Σ_g λ_g α_gt + Σ_d ξ_dt.
pub fn update_gamma(user: &UserVariational, params: &ModelParams) -> Vec<f64> {
    let t_count = params.alpha[0].len();
    let mut gamma = vec![0.0; t_count];
    for (g, row) in params.alpha.iter().enumerate() {
        for t in 0..t_count {
            gamma[t] += user.lambda[g] * row[t];
        }
    }
    for xi_d in &user.xi {
        for t in 0..t_count {
            gamma[t] += xi_d[t];
        }
    }
    gamma
}

/// Per-document topic probabilities:
/// log ξ_dt = g_t(γ) + Σ_j W_dj log β_tj, normalized.
///
/// Word ids outside the model vocabulary are unseen words and contribute no
/// likelihood term; a word no topic can emit is an error.
pub fn update_xi(
    user: &UserVariational,
    params: &ModelParams,
    docs: &[Document],
    d: usize,
) -> Result<Vec<f64>> {
    let glog = e_log_theta(&PositiveVector::new(user.gamma.clone())?)?;
    let v = params.beta[0].len();
    let doc = &docs[d];
    let mut log_w = glog;
    for (t, lw) in log_w.iter_mut().enumerate() {
        for &(w, c) in doc.counts() {
            let j = w as usize;
            if j >= v {
                continue; // unseen word
            }
            let b = params.beta[t][j];
            *lw += if b > 0.0 { c as f64 * b.ln() } else { f64::NEG_INFINITY };
        }
    }
    let lse = log_sum_exp(&log_w).map_err(|_| {
        // every topic got -inf: find a word no topic can emit
        let culprit = doc
            .counts()
            .iter()
            .map(|&(w, _)| w as usize)
            .find(|&j| j < v && params.beta.iter().all(|row| row[j] == 0.0));
        match culprit {
            Some(j) => Error::UnemittableWord { word: format!("#{j}"), word_id: j },
            None => Error::degenerate(
                "update_xi",
                format!("all topics have zero weight for doc {}", doc.doc_id),
            ),
        }
    })?;
    Ok(log_w.iter().map(|lw| (lw - lse).exp()).collect())
}

fn log_multinomial_coef(doc: &Document) -> f64 {
    let n = doc.len() as f64;
    let mut lc = ln_gamma(n + 1.0);
    for &(_, c) in doc.counts() {
        lc -= ln_gamma(c as f64 + 1.0);
    }
    lc
}

fn elbo_user_with(
    user: &UserVariational,
    params: &ModelParams,
    docs: &[Document],
    log_coefs: &[f64],
) -> Result<[f64; 7]> {
    let glog = e_log_theta(&PositiveVector::new(user.gamma.clone())?)?;
    let t_count = params.beta.len();
    let v = params.beta[0].len();
    let mut terms = [0.0f64; 7];

    // (1) E[log p(g | phi)]
    for (g, &l) in user.lambda.iter().enumerate() {
        if l > 0.0 {
            terms[0] += l * params.phi[g].ln();
        }
    }
    // (2) E[log p(theta | g, alpha)]
    for (g, row) in params.alpha.iter().enumerate() {
        if user.lambda[g] == 0.0 {
            continue;
        }
        let sum: f64 = row.iter().sum();
        let mut inner = ln_gamma(sum);
        for (t, &a) in row.iter().enumerate() {
            inner += -ln_gamma(a) + (a - 1.0) * glog[t];
        }
        terms[1] += user.lambda[g] * inner;
    }
    // (3) E[log p(Z | theta)]
    for xi_d in &user.xi {
        for t in 0..t_count {
            terms[2] += xi_d[t] * glog[t];
        }
    }
    // (4) E[log p(W | Z, beta)] including the multinomial coefficient
    for (d, doc) in docs.iter().enumerate() {
        terms[3] += log_coefs[d];
        for t in 0..t_count {
            let xi = user.xi[d][t];
            if xi == 0.0 {
                continue;
            }
            for &(w, c) in doc.counts() {
                let j = w as usize;
                if j >= v {
                    continue;
                }
                let b = params.beta[t][j];
                terms[3] += if b > 0.0 { xi * c as f64 * b.ln() } else { f64::NEG_INFINITY };
            }
        }
    }
    // (5) -E[log q(g)]
    for &l in &user.lambda {
        if l > 0.0 {
            terms[4] -= l * l.ln();
        }
    }
    // (6) -E[log q(theta)]
    let gamma_sum: f64 = user.gamma.iter().sum();
    terms[5] -= ln_gamma(gamma_sum);
    for (t, &g) in user.gamma.iter().enumerate() {
        terms[5] += ln_gamma(g) - (g - 1.0) * glog[t];
    }
    // (7) -E[log q(Z)]
    for xi_d in &user.xi {
        for &x in xi_d {
            if x > 0.0 {
                terms[6] -= x * x.ln();
            }
        }
    }
    for (i, t) in terms.iter().enumerate() {
        if t.is_nan() {
            return Err(Error::NonFinite {
                context: "elbo_user",
                msg: format!("term {} ({}) is NaN", i + 1, ELBO_TERM_NAMES[i]),
            });
        }
    }
    Ok(terms)
}

/// The seven bound terms for one user.
pub fn elbo_user(user: &UserVariational, params: &ModelParams, docs: &[Document]) -> Result<[f64; 7]> {
    let coefs: Vec<f64> = docs.iter().map(log_multinomial_coef).collect();
    elbo_user_with(user, params, docs, &coefs)
}

/// Full bound over all users, with per-user and per-term breakdowns.
pub fn compute_elbo(
    users: &[UserVariational],
    params: &ModelParams,
    corpus: &Corpus,
) -> Result<ElboBreakdown> {
    let mut per_user = Vec::with_capacity(users.len());
    let mut terms = [0.0f64; 7];
    for (u, user) in users.iter().enumerate() {
        let t = elbo_user(user, params, corpus.user_docs(u))?;
        for i in 0..7 {
            terms[i] += t[i];
        }
        per_user.push(t);
    }
    let total: f64 = terms.iter().sum();
    if total.is_nan() {
        return Err(Error::NonFinite { context: "compute_elbo", msg: "total is NaN".to_string() });
    }
    Ok(ElboBreakdown { per_user, terms, total })
}

/// Cycle ξ (all documents) → γ → λ until the user's bound stabilizes.
/// Returns the refreshed state and the final per-user bound.
pub fn fit_user(
    user: &UserVariational,
    params: &ModelParams,
    docs: &[Document],
    cfg: &VBConfig,
) -> Result<(UserVariational, f64)> {
    let coefs: Vec<f64> = docs.iter().map(log_multinomial_coef).collect();
    let mut state = user.clone();
    let mut prev: Option<f64> = None;
    let mut last = f64::NEG_INFINITY;
    for _ in 0..cfg.max_inner_iters.max(1) {
        for d in 0..docs.len() {
            state.xi[d] = update_xi(&state, params, docs, d)?;
        }
        state.gamma = update_gamma(&state, params);
        state.lambda = update_lambda(&state, params)?;
        last = elbo_user_with(&state, params, docs, &coefs)?.iter().sum();
        if let Some(p) = prev {
            if (last - p).abs() <= cfg.elbo_rel_tol * p.abs().max(1.0) {
                break;
            }
        }
        prev = Some(last);
    }
    Ok((state, last))
}

/// Corpus cluster proportions: φ_g ∝ Σ_u λ_ug.
pub fn update_phi_model(users: &[UserVariational]) -> Result<Vec<f64>> {
    if users.is_empty() {
        return Err(Error::degenerate("update_phi_model", "no users"));
    }
    let g_count = users[0].lambda.len();
    let mut phi = vec![0.0; g_count];
    for user in users {
        for g in 0..g_count {
            phi[g] += user.lambda[g];
        }
    }
    let total: f64 = phi.iter().sum();
    Ok(phi.into_iter().map(|x| x / total).collect())
}

/// Topic-word rows: β_tj ∝ Σ_u Σ_d ξ_udt W_udj. Rows that receive no mass
/// anywhere fall back to uniform so downstream log-space updates stay defined.
pub fn update_beta(users: &[UserVariational], corpus: &Corpus, n_topics: usize) -> Vec<Vec<f64>> {
    let v = corpus.vocab_size();
    let mut beta = vec![vec![0.0; v]; n_topics];
    for (u, user) in users.iter().enumerate() {
        for (d, doc) in corpus.user_docs(u).iter().enumerate() {
            for t in 0..n_topics {
                let xi = user.xi[d][t];
                if xi == 0.0 {
                    continue;
                }
                for &(w, c) in doc.counts() {
                    beta[t][w as usize] += xi * c as f64;
                }
            }
        }
    }
    for row in &mut beta {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        } else {
            row.iter_mut().for_each(|x| *x = 1.0 / v as f64);
        }
    }
    beta
}

/// The per-cluster bound terms maximized by the Newton update:
/// f(α_g) = M_g (logΓ(Σ_t α_t) − Σ_t logΓ(α_t)) + Σ_t (α_t − 1) s_t.
pub fn alpha_objective(alpha_g: &[f64], weight: f64, suff: &[f64]) -> f64 {
    let sum: f64 = alpha_g.iter().sum();
    let mut f = weight * ln_gamma(sum);
    for (&a, &s) in alpha_g.iter().zip(suff.iter()) {
        f += -weight * ln_gamma(a) + (a - 1.0) * s;
    }
    f
}

/// Gradient of [`alpha_objective`]: ∂f/∂α_t = M_g (Ψ(Σα) − Ψ(α_t)) + s_t.
pub fn alpha_gradient(alpha_g: &[f64], weight: f64, suff: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = alpha_g.iter().sum();
    let psi_sum = digamma(sum)?;
    alpha_g
        .iter()
        .zip(suff.iter())
        .map(|(&a, &s)| {
            let g = weight * (psi_sum - digamma(a)?) + s;
            if g.is_finite() {
                Ok(g)
            } else {
                Err(Error::NonFinite {
                    context: "alpha_gradient",
                    msg: format!("gradient at alpha = {a}"),
                })
            }
        })
        .collect()
}

/// One cluster's Newton-Raphson maximization with backtracking line search.
/// The Hessian is diagonal plus a constant matrix, so the Newton direction is
/// solved in O(T). Returns the new row and whether the line search ever
/// exhausted (the best iterate is still returned).
fn newton_alpha_row(
    alpha0: &[f64],
    weight: f64,
    suff: &[f64],
    cfg: &VBConfig,
) -> Result<(Vec<f64>, bool)> {
    let mut alpha = alpha0.to_vec();
    let mut exhausted = false;
    for _ in 0..cfg.newton_max_iters {
        let grad = alpha_gradient(&alpha, weight, suff)?;
        if grad.iter().all(|g| g.abs() < cfg.newton_tol) {
            break;
        }
        let sum: f64 = alpha.iter().sum();
        // H = diag(q) + z 11', q_t = -M Ψ'(α_t), z = M Ψ'(Σα)
        let z = weight * trigamma(sum)?;
        let q: Vec<f64> =
            alpha.iter().map(|&a| Ok(-weight * trigamma(a)?)).collect::<Result<_>>()?;
        let sum_gq: f64 = grad.iter().zip(&q).map(|(g, qt)| g / qt).sum();
        let sum_iq: f64 = q.iter().map(|qt| 1.0 / qt).sum();
        let b = sum_gq / (1.0 / z + sum_iq);
        let mut direction: Vec<f64> = grad.iter().zip(&q).map(|(g, qt)| (g - b) / qt).collect();
        if direction.iter().any(|d| !d.is_finite()) {
            // fall back to a scaled gradient step
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            direction = grad.iter().map(|g| -g / norm.max(1.0)).collect();
        }
        // Newton step for a maximum: α ← α − H⁻¹∇; backtrack to keep
        // positivity and never decrease the objective.
        let f0 = alpha_objective(&alpha, weight, suff);
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..60 {
            let cand: Vec<f64> =
                alpha.iter().zip(&direction).map(|(&a, &d)| a - step * d).collect();
            if cand.iter().all(|&a| a > 0.0) {
                let f1 = alpha_objective(&cand, weight, suff);
                if f1.is_finite() && f1 >= f0 {
                    alpha = cand;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            exhausted = true;
            break;
        }
    }
    Ok((alpha, exhausted))
}

/// Newton update of every cluster row. Clusters with negligible total
/// membership (M_g ≈ 0) hold their current row: the objective is flat there.
pub fn update_alpha_newton(
    users: &[UserVariational],
    alpha: &[Vec<f64>],
    cfg: &VBConfig,
) -> Result<Vec<Vec<f64>>> {
    let g_count = alpha.len();
    let t_count = alpha[0].len();
    let glogs: Vec<Vec<f64>> = users
        .iter()
        .map(|u| e_log_theta(&PositiveVector::new(u.gamma.clone())?))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let weight: f64 = users.iter().map(|u| u.lambda[g]).sum();
        if weight < 1e-10 {
            out.push(alpha[g].clone());
            continue;
        }
        let mut suff = vec![0.0; t_count];
        for (u, user) in users.iter().enumerate() {
            if user.lambda[g] == 0.0 {
                continue;
            }
            for t in 0..t_count {
                suff[t] += user.lambda[g] * glogs[u][t];
            }
        }
        let (row, exhausted) = newton_alpha_row(&alpha[g], weight, &suff, cfg)?;
        if exhausted {
            log::warn!("alpha Newton line search exhausted for cluster {g}; keeping best iterate");
        }
        out.push(row);
    }
    Ok(out)
}

fn init_params(corpus: &Corpus, hp: &Hyperparams, cfg: &VBConfig, seed: u64) -> Result<ModelParams> {
    let mut rng = rng_from_seed(seed);
    use rand::Rng;
    let v = corpus.vocab_size();
    // perturbed-random starts: identical rows would make every cluster (and
    // every topic) indistinguishable
    let mut beta = Vec::with_capacity(hp.n_topics);
    for _ in 0..hp.n_topics {
        let mut row: Vec<f64> =
            (0..v).map(|_| 1.0 + rng.random::<f64>() * cfg.init_noise).collect();
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
        beta.push(row);
    }
    let ones = PositiveVector::new(vec![1.0; hp.n_topics])?;
    let mut alpha = Vec::with_capacity(hp.n_clusters);
    for _ in 0..hp.n_clusters {
        let point = sample_dirichlet(&ones, &mut rng)?;
        let row: Vec<f64> =
            point.iter().map(|&x| (x * hp.alpha_prior.c_mean).max(1e-6)).collect();
        alpha.push(row);
    }
    let phi = vec![1.0 / hp.n_clusters as f64; hp.n_clusters];
    Ok(ModelParams { alpha, beta, phi })
}

fn init_user(
    params: &ModelParams,
    n_docs: usize,
    n_topics: usize,
    n_clusters: usize,
) -> UserVariational {
    let lambda = vec![1.0 / n_clusters as f64; n_clusters];
    let xi = vec![vec![1.0 / n_topics as f64; n_topics]; n_docs];
    let mut gamma = vec![0.0; n_topics];
    for (g, row) in params.alpha.iter().enumerate() {
        for t in 0..n_topics {
            gamma[t] += lambda[g] * row[t];
        }
    }
    for gm in gamma.iter_mut() {
        *gm += n_docs as f64 / n_topics as f64;
    }
    UserVariational { lambda, gamma, xi }
}

/// Variational inference for a held-out user against fixed model parameters.
pub fn infer_user(params: &ModelParams, docs: &[Document], cfg: &VBConfig) -> Result<UserVariational> {
    let user = init_user(params, docs.len(), params.beta.len(), params.alpha.len());
    Ok(fit_user(&user, params, docs, cfg)?.0)
}

/// Full variational EM loop.
pub fn fit(corpus: &Corpus, hp: &Hyperparams, cfg: &VBConfig, seed: u64) -> Result<VBFit> {
    hp.validate()?;
    cfg.validate()?;
    if corpus.n_users() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut params = init_params(corpus, hp, cfg, seed)?;
    let mut users: Vec<UserVariational> = (0..corpus.n_users())
        .map(|u| init_user(&params, corpus.user_docs(u).len(), hp.n_topics, hp.n_clusters))
        .collect();

    let mut trace: Vec<ElboTraceRow> = Vec::new();
    let mut prev_total: Option<f64> = None;
    let mut converged = false;
    for iter in 0..cfg.max_outer_iters {
        // E-step: independent per user
        users = users
            .par_iter()
            .enumerate()
            .map(|(u, user)| {
                fit_user(user, &params, corpus.user_docs(u), cfg)
                    .map(|(state, _)| state)
                    .map_err(|e| enrich_word_error(e, corpus))
            })
            .collect::<Result<Vec<_>>>()?;
        // M-step
        params.phi = update_phi_model(&users)?;
        params.beta = update_beta(&users, corpus, hp.n_topics);
        params.alpha = update_alpha_newton(&users, &params.alpha, cfg)?;

        let elbo = compute_elbo(&users, &params, corpus)?;
        trace.push(ElboTraceRow { iter, terms: elbo.terms, total: elbo.total });
        if let Some(p) = prev_total {
            if elbo.total < p - 1e-6 * p.abs().max(1.0) {
                log::warn!("bound decreased at iteration {iter}: {p} -> {}", elbo.total);
            }
            if (elbo.total - p).abs() <= cfg.elbo_rel_tol * p.abs().max(1.0) {
                converged = true;
                break;
            }
        }
        prev_total = Some(elbo.total);
    }
    Ok(VBFit { params, users, elbo_trace: trace, converged })
}

fn enrich_word_error(err: Error, corpus: &Corpus) -> Error {
    match err {
        Error::UnemittableWord { word_id, .. } if word_id < corpus.vocab_size() => Error::UnemittableWord {
            word: corpus.vocabulary().token(word_id as u32).to_string(),
            word_id,
        },
        other => other,
    }
}
