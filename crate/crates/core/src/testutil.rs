// Shared test fixtures and independent oracles. Compiled into the library's
// unit tests and included by path from the integration tests, so every path
// goes through the crate name.

#![allow(dead_code)]

use mr3::data::{
    rebuild_counts, Assignments, Corpus, ModelParams, Rating, SocialGraph, SparseRatings,
    TopicCounts,
};
use mr3::model::{Gradients, TrainingSet, VariantConfig};
use mr3::social::PageRankOptions;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub params: ModelParams,
    pub data: TrainingSet,
    pub assignments: Assignments,
    pub counts: TopicCounts,
}

/// Random ratings (1..5, ~40% density), `n_edges` random trust edges,
/// `n_tokens` tokens scattered over the item docs (the last doc stays empty),
/// and parameters drawn at a scale where every term is active.
pub fn random_instance(
    seed: u64,
    n_users: usize,
    n_items: usize,
    n_factors: usize,
    vocab_len: usize,
    n_tokens: usize,
    n_edges: usize,
) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for i in 0..n_users {
        for j in 0..n_items {
            if rng.random_bool(0.4) || j == i % n_items {
                triples.push(Rating {
                    user: i,
                    item: j,
                    value: rng.random_range(1..=5) as f64,
                    doc_ref: None,
                });
            }
        }
    }
    let raw = SparseRatings::new(n_users, n_items, triples).unwrap();
    let mut edges = std::collections::BTreeSet::new();
    while edges.len() < n_edges.min(n_users * (n_users - 1)) {
        let a = rng.random_range(0..n_users);
        let b = rng.random_range(0..n_users);
        if a != b {
            edges.insert((a, b));
        }
    }
    let graph = SocialGraph::new(n_users, edges.into_iter().collect()).unwrap();
    let mut docs = vec![Vec::new(); n_items];
    for _ in 0..n_tokens {
        let d = rng.random_range(0..n_items.saturating_sub(1).max(1));
        docs[d].push(rng.random_range(0..vocab_len as u32));
    }
    let vocab = (0..vocab_len).map(|w| format!("w{w}")).collect();
    let corpus = Corpus::new(vocab, docs).unwrap();
    let data = TrainingSet::new(&raw, graph, corpus, &PageRankOptions::default()).unwrap();
    let mut params = ModelParams::random(
        n_users,
        n_items,
        n_factors,
        vocab_len,
        data.mu(),
        0.5,
        &mut rng,
    );
    params
        .b_user
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5..0.5));
    params
        .b_item
        .iter_mut()
        .for_each(|b| *b = rng.random_range(-0.5..0.5));
    params.kappa = rng.random_range(0.5..1.5);
    let assignments = Assignments::uniform(&data.corpus, n_factors, &mut rng);
    let counts = rebuild_counts(&data.corpus, &assignments).unwrap();
    Instance {
        params,
        data,
        assignments,
        counts,
    }
}

fn naive_softmax(x: &[f64]) -> Vec<f64> {
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    x.iter().map(|v| v.exp() / z).collect()
}

fn naive_dot(p: &ModelParams, i: usize, j: usize) -> f64 {
    (0..p.n_factors()).map(|f| p.u[[i, f]] * p.v[[j, f]]).sum()
}

fn naive_bilinear(p: &ModelParams, i: usize, k: usize) -> f64 {
    let f = p.n_factors();
    let mut s = 0.0;
    for a in 0..f {
        for b in 0..f {
            s += p.u[[i, a]] * p.h[[a, b]] * p.u[[k, b]];
        }
    }
    s
}

fn frobenius_sq(p: &ModelParams) -> f64 {
    p.u.iter()
        .chain(p.v.iter())
        .chain(p.h.iter())
        .map(|x| x * x)
        .sum()
}

/// Joint objective by explicit loops over observations, edges and tokens.
pub fn brute_force_objective(inst: &Instance, cfg: &VariantConfig) -> f64 {
    brute_force_objective_at(inst, &inst.params, cfg)
}

pub fn brute_force_objective_at(inst: &Instance, p: &ModelParams, cfg: &VariantConfig) -> f64 {
    let d = &inst.data;
    let mut rating = 0.0;
    for t in d.ratings.triples() {
        let pred = p.mu + p.b_user[t.user] + p.b_item[t.item] + naive_dot(p, t.user, t.item);
        let w = if cfg.use_social_weights {
            d.context.weight_per_user[t.user]
        } else {
            1.0
        };
        rating += w * (d.ratings.absolute(t) - pred).powi(2);
    }
    let mut review = 0.0;
    for j in 0..d.corpus.n_docs() {
        let scaled: Vec<f64> = (0..p.n_factors()).map(|f| p.kappa * p.v[[j, f]]).collect();
        let theta = naive_softmax(&scaled);
        for (n, &w) in d.corpus.doc(j).iter().enumerate() {
            let z = inst.assignments.doc(j)[n] as usize;
            let phi = naive_softmax(&p.psi.row(z).to_vec());
            review += theta[z].ln() + phi[w as usize].ln();
        }
    }
    let mut social = 0.0;
    for (e, &(i, k)) in d.graph.edges().iter().enumerate() {
        let c = if cfg.use_trust_values {
            d.context.trust[e]
        } else {
            1.0
        };
        social += c * (d.context.similarity[e] - naive_bilinear(p, i, k)).powi(2);
    }
    rating - cfg.lambda_rev * review + cfg.lambda_rel * social + cfg.lambda * frobenius_sq(p)
}

/// Rating-only objective with biases. H plays no part in it beyond its
/// norm, which stays in the shared penalty.
pub fn pmf_objective(inst: &Instance, lambda: f64) -> f64 {
    let p = &inst.params;
    let mut s = 0.0;
    for t in inst.data.ratings.triples() {
        let r = inst.data.ratings.absolute(t);
        s += (r - (p.mu + p.b_user[t.user] + p.b_item[t.item] + naive_dot(p, t.user, t.item)))
            .powi(2);
    }
    s + lambda * frobenius_sq(p)
}

/// Ratings plus review likelihood written as ln(θ_z φ_zw).
pub fn hft_objective(inst: &Instance, lambda: f64, lambda_rev: f64) -> f64 {
    let p = &inst.params;
    let mut ll = 0.0;
    for j in 0..inst.data.corpus.n_docs() {
        let scaled: Vec<f64> = p.v.row(j).iter().map(|x| p.kappa * x).collect();
        let theta = naive_softmax(&scaled);
        for (n, &w) in inst.data.corpus.doc(j).iter().enumerate() {
            let z = inst.assignments.doc(j)[n] as usize;
            let phi = naive_softmax(&p.psi.row(z).to_vec());
            ll += (theta[z] * phi[w as usize]).ln();
        }
    }
    pmf_objective(inst, lambda) - lambda_rev * ll
}

/// Reputation-weighted ratings plus the unweighted social term.
pub fn locabal_objective(inst: &Instance, lambda: f64, lambda_rel: f64) -> f64 {
    social_mf_objective(inst, lambda, lambda_rel, false)
}

/// LOCABAL with trust values on the social residuals.
pub fn esmf_objective(inst: &Instance, lambda: f64, lambda_rel: f64) -> f64 {
    social_mf_objective(inst, lambda, lambda_rel, true)
}

fn social_mf_objective(inst: &Instance, lambda: f64, lambda_rel: f64, trust: bool) -> f64 {
    let p = &inst.params;
    let d = &inst.data;
    let out = d.graph.out_degree();
    let ind = d.graph.in_degree();
    // rank by descending PageRank score, ties by id, recomputed here
    let mut order: Vec<usize> = (0..d.ratings.n_users()).collect();
    order.sort_by(|&a, &b| {
        d.context.score[b]
            .partial_cmp(&d.context.score[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut weight = vec![0.0; order.len()];
    for (pos, &u) in order.iter().enumerate() {
        weight[u] = 1.0 / (1.0 + ((pos + 1) as f64).ln());
    }
    let mut rating = 0.0;
    for t in d.ratings.triples() {
        let pred = p.mu + p.b_user[t.user] + p.b_item[t.item] + naive_dot(p, t.user, t.item);
        rating += weight[t.user] * (d.ratings.absolute(t) - pred).powi(2);
    }
    let mut social = 0.0;
    for (e, &(i, k)) in d.graph.edges().iter().enumerate() {
        let c = if trust {
            (ind[k] as f64 / (out[i] + ind[k]) as f64).sqrt()
        } else {
            1.0
        };
        social += c * (d.context.similarity[e] - naive_bilinear(p, i, k)).powi(2);
    }
    rating + lambda_rel * social + lambda * frobenius_sq(p)
}

/// Visits every fitted scalar of `p` mutably, in a fixed order.
pub fn for_each_param(p: &mut ModelParams, mut f: impl FnMut(&str, &mut f64)) {
    p.b_user.iter_mut().for_each(|x| f("b_user", x));
    p.b_item.iter_mut().for_each(|x| f("b_item", x));
    p.u.iter_mut().for_each(|x| f("U", x));
    p.v.iter_mut().for_each(|x| f("V", x));
    p.h.iter_mut().for_each(|x| f("H", x));
    p.psi.iter_mut().for_each(|x| f("psi", x));
    f("kappa", &mut p.kappa);
}

pub fn flatten_gradients(g: &Gradients) -> Vec<f64> {
    g.b_user
        .iter()
        .chain(g.b_item.iter())
        .chain(g.u.iter())
        .chain(g.v.iter())
        .chain(g.h.iter())
        .chain(g.psi.iter())
        .cloned()
        .chain(std::iter::once(g.kappa))
        .collect()
}

/// Central finite differences of the brute-force objective, one entry per
/// fitted scalar in `for_each_param` order, tagged with the block name.
pub fn finite_difference_gradient(
    inst: &Instance,
    cfg: &VariantConfig,
    h: f64,
) -> Vec<(String, f64)> {
    let mut n = 0;
    let mut probe = inst.params.clone();
    for_each_param(&mut probe, |_, _| n += 1);
    let mut out = Vec::with_capacity(n);
    for idx in 0..n {
        let eval = |delta: f64| {
            let mut shifted = inst.params.clone();
            let mut k = 0;
            for_each_param(&mut shifted, |_, x| {
                if k == idx {
                    *x += delta;
                }
                k += 1;
            });
            brute_force_objective_at(inst, &shifted, cfg)
        };
        let mut name = String::new();
        let mut k = 0;
        let mut tmp = inst.params.clone();
        for_each_param(&mut tmp, |block, _| {
            if k == idx {
                name = block.to_string();
            }
            k += 1;
        });
        out.push((name, (eval(h) - eval(-h)) / (2.0 * h)));
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
