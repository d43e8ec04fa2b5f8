//! Prediction rule, the factor-to-topic transform, the joint objective over
//! ratings, trust edges and reviews, and its analytic gradient.
//!
//! The objective is
//!
//! ```text
//! L = Σ_(i,j) W_i (R_ij − R̂_ij)²
//!   − λ_rev Σ_d Σ_n (ln θ_(d,z) + ln φ_(z,w))
//!   + λ_rel Σ_(i,k) C_ik (S_ik − U_iᵀ H U_k)²
//!   + λ (‖U‖² + ‖V‖² + ‖H‖²)
//! ```
//!
//! with `θ_j = softmax(κ V_j)` and `φ_f = softmax(ψ_f)`. Switching the
//! weights off and zeroing `λ_rel` / `λ_rev` recovers PMF, HFT, LOCABAL and
//! eSMF exactly. Biases are fitted but not penalised.

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rayon::prelude::*;

use crate::data::{Corpus, ModelParams, SocialGraph, SparseRatings, TopicCounts};
use crate::error::{Error, Result};
use crate::social::{PageRankOptions, SocialContext};

/// Which terms of the joint objective are active, and their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantConfig {
    pub lambda: f64,
    pub lambda_rel: f64,
    pub lambda_rev: f64,
    pub use_social_weights: bool,
    pub use_trust_values: bool,
}

impl VariantConfig {
    pub fn pmf(lambda: f64) -> Self {
        VariantConfig {
            lambda,
            lambda_rel: 0.0,
            lambda_rev: 0.0,
            use_social_weights: false,
            use_trust_values: false,
        }
    }

    pub fn hft(lambda: f64, lambda_rev: f64) -> Self {
        VariantConfig {
            lambda_rev,
            ..Self::pmf(lambda)
        }
    }

    pub fn locabal(lambda: f64, lambda_rel: f64) -> Self {
        VariantConfig {
            lambda,
            lambda_rel,
            lambda_rev: 0.0,
            use_social_weights: true,
            use_trust_values: false,
        }
    }

    pub fn esmf(lambda: f64, lambda_rel: f64) -> Self {
        VariantConfig {
            use_trust_values: true,
            ..Self::locabal(lambda, lambda_rel)
        }
    }

    pub fn mr3(lambda: f64, lambda_rel: f64, lambda_rev: f64) -> Self {
        VariantConfig {
            lambda_rev,
            ..Self::esmf(lambda, lambda_rel)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.lambda) && ok(self.lambda_rel) && ok(self.lambda_rev)) {
            return Err(Error::InvalidArgument(format!(
                "penalties must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Everything the objective reads besides the parameters and topic counts.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// Centered training ratings.
    pub ratings: SparseRatings,
    pub graph: SocialGraph,
    pub context: SocialContext,
    pub corpus: Corpus,
}

impl TrainingSet {
    /// Centers the ratings and freezes the social constants.
    pub fn new(
        raw_ratings: &SparseRatings,
        graph: SocialGraph,
        corpus: Corpus,
        pagerank: &PageRankOptions,
    ) -> Result<Self> {
        if corpus.n_docs() != raw_ratings.n_items() {
            return Err(Error::InvalidData(format!(
                "corpus has {} docs but there are {} items",
                corpus.n_docs(),
                raw_ratings.n_items()
            )));
        }
        let (ratings, _) = crate::data::center_ratings(raw_ratings)?;
        let context = SocialContext::build(&graph, &ratings, pagerank)?;
        Ok(TrainingSet {
            ratings,
            graph,
            context,
            corpus,
        })
    }

    pub fn mu(&self) -> f64 {
        self.ratings.global_mean()
    }

    fn rating_weight(&self, user: usize, cfg: &VariantConfig) -> f64 {
        if cfg.use_social_weights {
            self.context.weight_per_user[user]
        } else {
            1.0
        }
    }

    fn edge_weight(&self, edge: usize, cfg: &VariantConfig) -> f64 {
        if cfg.use_trust_values {
            self.context.trust[edge]
        } else {
            1.0
        }
    }
}

/// `μ + b_i + b_j + U_iᵀ V_j`, unclamped.
pub fn predict(params: &ModelParams, user: usize, item: usize) -> f64 {
    params.mu
        + params.b_user[user]
        + params.b_item[item]
        + params.u.row(user).dot(&params.v.row(item))
}

/// Parameters plus which users and items were seen in training. Unseen
/// sides fall back to μ and the bias of whichever side is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub params: ModelParams,
    pub known_users: Vec<bool>,
    pub known_items: Vec<bool>,
}

impl FittedModel {
    pub fn new(params: ModelParams, train: &SparseRatings) -> Self {
        let known_users = (0..train.n_users())
            .map(|i| train.user_count(i) > 0)
            .collect();
        let known_items = (0..train.n_items())
            .map(|j| train.item_count(j) > 0)
            .collect();
        FittedModel {
            params,
            known_users,
            known_items,
        }
    }

    /// Global-mean predictor.
    pub fn mean_only(train: &SparseRatings, mu: f64) -> Self {
        FittedModel::new(
            ModelParams::zeros(train.n_users(), train.n_items(), 0, 0, mu),
            train,
        )
    }

    pub fn predict(&self, user: usize, item: usize) -> f64 {
        let p = &self.params;
        match (self.known_users[user], self.known_items[item]) {
            (true, true) => predict(p, user, item),
            (true, false) => p.mu + p.b_user[user],
            (false, true) => p.mu + p.b_item[item],
            (false, false) => p.mu,
        }
    }
}

/// `softmax(κ V_j)`.
pub fn topic_transform(v_j: ArrayView1<f64>, kappa: f64) -> Array1<f64> {
    softmax(v_j.mapv(|x| kappa * x))
}

/// `softmax(ψ_f)`.
pub fn word_dist(psi_f: ArrayView1<f64>) -> Array1<f64> {
    softmax(psi_f.to_owned())
}

fn softmax(mut x: Array1<f64>) -> Array1<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    x.mapv_inplace(|v| (v - max).exp());
    let z = x.sum();
    x /= z;
    x
}

fn log_sum_exp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = x.clone().fold(f64::NEG_INFINITY, f64::max);
    max + x.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// The four terms of the objective, already multiplied by their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    pub rating: f64,
    pub review: f64,
    pub social: f64,
    pub penalty: f64,
}

impl ObjectiveTerms {
    pub fn total(&self) -> f64 {
        self.rating + self.review + self.social + self.penalty
    }
}

pub fn objective_terms(
    params: &ModelParams,
    data: &TrainingSet,
    counts: &TopicCounts,
    cfg: &VariantConfig,
) -> ObjectiveTerms {
    let rating: f64 = data
        .ratings
        .triples()
        .iter()
        .map(|t| {
            let e = predict(params, t.user, t.item) - data.ratings.absolute(t);
            data.rating_weight(t.user, cfg) * e * e
        })
        .sum();

    let review = if cfg.lambda_rev != 0.0 {
        -cfg.lambda_rev * review_log_likelihood(params, counts)
    } else {
        0.0
    };

    let social = if cfg.lambda_rel != 0.0 {
        let hu = params.u.dot(&params.h.t());
        let s: f64 = data
            .graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, k))| {
                let r = data.context.similarity[e] - params.u.row(i).dot(&hu.row(k));
                data.edge_weight(e, cfg) * r * r
            })
            .sum();
        cfg.lambda_rel * s
    } else {
        0.0
    };

    let sq = |a: &Array2<f64>| a.iter().map(|x| x * x).sum::<f64>();
    let penalty = cfg.lambda * (sq(&params.u) + sq(&params.v) + sq(&params.h));

    ObjectiveTerms {
        rating,
        review,
        social,
        penalty,
    }
}

/// Σ_j Σ_f M_jf ln θ_jf + Σ_f Σ_w M_fw ln φ_fw.
pub fn review_log_likelihood(params: &ModelParams, counts: &TopicCounts) -> f64 {
    let kappa = params.kappa;
    let docs: f64 = params
        .v
        .outer_iter()
        .zip(counts.doc_topic.outer_iter())
        .filter(|(_, m)| m.iter().any(|&c| c > 0))
        .map(|(v, m)| {
            let lz = log_sum_exp(v.iter().map(|&x| kappa * x));
            v.iter()
                .zip(m)
                .filter(|(_, &c)| c > 0)
                .map(|(&x, &c)| c as f64 * (kappa * x - lz))
                .sum::<f64>()
        })
        .sum();
    let words: f64 = params
        .psi
        .outer_iter()
        .zip(counts.word_topic.outer_iter())
        .filter(|(_, m)| m.iter().any(|&c| c > 0))
        .map(|(psi, m)| {
            let lz = log_sum_exp(psi.iter().cloned());
            psi.iter()
                .zip(m)
                .filter(|(_, &c)| c > 0)
                .map(|(&x, &c)| c as f64 * (x - lz))
                .sum::<f64>()
        })
        .sum();
    docs + words
}

/// Objective value; a non-finite result is reported as divergence.
pub fn objective(
    params: &ModelParams,
    data: &TrainingSet,
    counts: &TopicCounts,
    cfg: &VariantConfig,
) -> Result<f64> {
    let total = objective_terms(params, data, counts, cfg).total();
    if total.is_finite() {
        Ok(total)
    } else {
        Err(Error::NonFinite("objective"))
    }
}

/// Gradient with respect to every fitted block. Also used for momentum
/// velocities, which live in the same space.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub b_user: Array1<f64>,
    pub b_item: Array1<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub h: Array2<f64>,
    pub psi: Array2<f64>,
    pub kappa: f64,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            b_user: Array1::zeros(p.b_user.raw_dim()),
            b_item: Array1::zeros(p.b_item.raw_dim()),
            u: Array2::zeros(p.u.raw_dim()),
            v: Array2::zeros(p.v.raw_dim()),
            h: Array2::zeros(p.h.raw_dim()),
            psi: Array2::zeros(p.psi.raw_dim()),
            kappa: 0.0,
        }
    }

    pub fn matches_shape(&self, p: &ModelParams) -> bool {
        self.b_user.raw_dim() == p.b_user.raw_dim()
            && self.b_item.raw_dim() == p.b_item.raw_dim()
            && self.u.raw_dim() == p.u.raw_dim()
            && self.v.raw_dim() == p.v.raw_dim()
            && self.h.raw_dim() == p.h.raw_dim()
            && self.psi.raw_dim() == p.psi.raw_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.kappa.is_finite()
            && [&self.b_user, &self.b_item]
                .iter()
                .all(|a| a.iter().all(|x| x.is_finite()))
            && [&self.u, &self.v, &self.h, &self.psi]
                .iter()
                .all(|a| a.iter().all(|x| x.is_finite()))
    }
}

pub fn gradients(
    params: &ModelParams,
    data: &TrainingSet,
    counts: &TopicCounts,
    cfg: &VariantConfig,
) -> Result<Gradients> {
    let ratings = &data.ratings;
    let graph = &data.graph;
    let lambda = cfg.lambda;
    let social_on = cfg.lambda_rel != 0.0;
    let review_on = cfg.lambda_rev != 0.0;

    // 2 W_i (R̂ − R) per triple, indexed like ratings.triples()
    let scaled_err: Vec<f64> = ratings
        .triples()
        .iter()
        .map(|t| {
            let e = predict(params, t.user, t.item) - ratings.absolute(t);
            2.0 * data.rating_weight(t.user, cfg) * e
        })
        .collect();
    let err_of = |t: &crate::data::Rating| -> f64 {
        // triples are unique per (user, item) and sorted, so binary search is exact
        let k = ratings
            .triples()
            .binary_search_by_key(&(t.user, t.item), |x| (x.user, x.item))
            .expect("triple present");
        scaled_err[k]
    };

    // rows of U Hᵀ are H U_k; rows of U H are Hᵀ U_i
    let (h_uk, ht_ui, edge_coef) = if social_on {
        let h_uk = params.u.dot(&params.h.t());
        let ht_ui = params.u.dot(&params.h);
        // 2 λ_rel C_ik (U_iᵀ H U_k − S_ik) per edge
        let coef: Vec<f64> = graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, &(i, k))| {
                let r = params.u.row(i).dot(&h_uk.row(k)) - data.context.similarity[e];
                2.0 * cfg.lambda_rel * data.edge_weight(e, cfg) * r
            })
            .collect();
        (h_uk, ht_ui, coef)
    } else {
        (Array2::zeros((0, 0)), Array2::zeros((0, 0)), Vec::new())
    };

    let mut g = Gradients::zeros_like(params);

    // user rows
    let user_offset: Vec<usize> = {
        let mut off = Vec::with_capacity(ratings.n_users());
        let mut acc = 0;
        for i in 0..ratings.n_users() {
            off.push(acc);
            acc += ratings.user_count(i);
        }
        off
    };
    g.u.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(g.b_user.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(i, (mut row, mut bias))| {
            let mut b = 0.0;
            for (off, t) in ratings.user_ratings(i).iter().enumerate() {
                let e = scaled_err[user_offset[i] + off];
                b += e;
                row.scaled_add(e, &params.v.row(t.item));
            }
            bias.fill(b);
            row.scaled_add(2.0 * lambda, &params.u.row(i));
            if social_on {
                for e in graph.out_edges(i) {
                    let k = graph.edges()[e].1;
                    row.scaled_add(edge_coef[e], &h_uk.row(k));
                }
                for &e in graph.in_edges(i) {
                    let a = graph.edges()[e].0;
                    row.scaled_add(edge_coef[e], &ht_ui.row(a));
                }
            }
        });

    // item rows
    let kappa = params.kappa;
    g.v.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(g.b_item.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(j, (mut row, mut bias))| {
            let mut b = 0.0;
            for t in ratings.item_ratings(j) {
                let e = err_of(t);
                b += e;
                row.scaled_add(e, &params.u.row(t.user));
            }
            bias.fill(b);
            row.scaled_add(2.0 * lambda, &params.v.row(j));
            if review_on && counts.doc_len[j] > 0 {
                let theta = topic_transform(params.v.row(j), kappa);
                let m = counts.doc_len[j] as f64;
                Zip::from(&mut row)
                    .and(&counts.doc_topic.row(j))
                    .and(&theta)
                    .for_each(|g, &c, &th| *g -= cfg.lambda_rev * kappa * (c as f64 - m * th));
            }
        });

    g.h.scaled_add(2.0 * lambda, &params.h);
    if social_on {
        for (e, &(i, k)) in graph.edges().iter().enumerate() {
            let ui = params.u.row(i);
            let uk = params.u.row(k);
            let c = edge_coef[e];
            for (a, mut hrow) in g.h.outer_iter_mut().enumerate() {
                hrow.scaled_add(c * ui[a], &uk);
            }
        }
    }

    if review_on {
        for (f, mut grow) in g.psi.outer_iter_mut().enumerate() {
            let phi = word_dist(params.psi.row(f));
            let m = counts.topic_total[f] as f64;
            Zip::from(&mut grow)
                .and(&counts.word_topic.row(f))
                .and(&phi)
                .for_each(|g, &c, &p| *g = -cfg.lambda_rev * (c as f64 - m * p));
        }
        let mut gk = 0.0;
        for (j, v) in params.v.outer_iter().enumerate() {
            if counts.doc_len[j] == 0 {
                continue;
            }
            let theta = topic_transform(v, kappa);
            let m = counts.doc_len[j] as f64;
            for f in 0..v.len() {
                gk += v[f] * (counts.doc_topic[[j, f]] as f64 - m * theta[f]);
            }
        }
        g.kappa = -cfg.lambda_rev * gk;
    }

    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite("gradient"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{rebuild_counts, Assignments, Rating};
    use crate::testutil::random_instance;
    use ndarray::array;

    #[test]
    fn predict_zero_params_is_mu() {
        let p = ModelParams::zeros(2, 2, 3, 4, 3.7);
        assert_eq!(predict(&p, 1, 0), 3.7);
    }

    #[test]
    fn predict_direct_arithmetic() {
        let mut p = ModelParams::zeros(1, 1, 2, 1, 3.0);
        p.b_user[0] = 0.5;
        p.b_item[0] = -0.2;
        p.u.row_mut(0).assign(&array![0.5, 0.1]);
        p.v.row_mut(0).assign(&array![0.2, 0.0]);
        assert!((predict(&p, 0, 0) - 3.4).abs() < 1e-12);
    }

    #[test]
    fn predict_matches_loop_dot_product() {
        let inst = random_instance(1, 6, 7, 4, 10, 30, 12);
        let p = &inst.params;
        for i in 0..6 {
            for j in 0..7 {
                let mut dot = 0.0;
                for f in 0..4 {
                    dot += p.u[[i, f]] * p.v[[j, f]];
                }
                let oracle = p.mu + p.b_user[i] + p.b_item[j] + dot;
                assert!((predict(p, i, j) - oracle).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transform_spot_values() {
        let t = topic_transform(array![0.3, -1.0, 2.0].view(), 0.0);
        assert!(t.iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let t = topic_transform(array![1.0, 0.0].view(), 1.0);
        let e = std::f64::consts::E;
        assert!((t[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((t[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((t[0] - 0.73106).abs() < 1e-5);
        let t = topic_transform(array![2.0, 2.0, 2.0, 2.0].view(), 5.0);
        assert!(t.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        // no overflow on large inputs
        let t = topic_transform(array![1000.0, 0.0].view(), 3.0);
        assert!((t[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn word_dist_spot_values() {
        let p = word_dist(array![0.0, 0.0, 0.0, 0.0, 0.0].view());
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let p = word_dist(array![3f64.ln(), 0.0].view());
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let base = array![0.3, -1.2, 2.5];
        let a = word_dist(base.view());
        let b = word_dist(base.mapv(|x| x + 17.0).view());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    fn perfect_fit_instance() -> (ModelParams, TrainingSet, TopicCounts) {
        let triples = vec![
            Rating {
                user: 0,
                item: 0,
                value: 4.0,
                doc_ref: None,
            },
            Rating {
                user: 1,
                item: 1,
                value: 2.0,
                doc_ref: None,
            },
        ];
        let raw = SparseRatings::new(2, 2, triples).unwrap();
        let graph = SocialGraph::new(2, vec![(0, 1)]).unwrap();
        let corpus = Corpus::new(vec!["a".into()], vec![vec![0], vec![]]).unwrap();
        let data = TrainingSet::new(&raw, graph, corpus, &PageRankOptions::default()).unwrap();
        let mut p = ModelParams::zeros(2, 2, 2, 1, data.mu());
        p.b_user[0] = 1.0;
        p.b_user[1] = -1.0;
        let z = Assignments::new(&data.corpus, 2, vec![vec![0], vec![]]).unwrap();
        let counts = rebuild_counts(&data.corpus, &z).unwrap();
        (p, data, counts)
    }

    #[test]
    fn objective_vanishes_at_perfect_fit_without_penalties() {
        let (p, data, counts) = perfect_fit_instance();
        let cfg = VariantConfig::mr3(0.0, 0.0, 0.0);
        assert_eq!(objective(&p, &data, &counts, &cfg).unwrap(), 0.0);
        let g = gradients(&p, &data, &counts, &cfg).unwrap();
        assert_eq!(g, Gradients::zeros_like(&p));
    }

    #[test]
    fn objective_flags_divergence() {
        let (mut p, data, counts) = perfect_fit_instance();
        p.u[[0, 0]] = f64::INFINITY;
        let cfg = VariantConfig::pmf(0.5);
        assert!(matches!(
            objective(&p, &data, &counts, &cfg),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn review_gradients_vanish_without_review_weight() {
        let inst = random_instance(9, 8, 10, 3, 20, 50, 15);
        let cfg = VariantConfig::esmf(0.3, 0.2);
        let g = gradients(&inst.params, &inst.data, &inst.counts, &cfg).unwrap();
        assert!(g.psi.iter().all(|&x| x == 0.0));
        assert_eq!(g.kappa, 0.0);
    }

    #[test]
    fn objective_matches_term_by_term_summation() {
        for seed in 0..3 {
            let inst = random_instance(seed, 8, 10, 3, 20, 50, 15);
            let cfg = VariantConfig::mr3(0.37, 0.21, 0.13);
            let fast = objective(&inst.params, &inst.data, &inst.counts, &cfg).unwrap();
            let slow = crate::testutil::brute_force_objective(&inst, &cfg);
            assert!(
                (fast - slow).abs() <= 1e-10 * slow.abs().max(1.0),
                "{fast} vs {slow}"
            );
        }
    }

    #[test]
    fn objective_is_invariant_under_factor_permutation() {
        let inst = random_instance(4, 8, 10, 3, 20, 50, 15);
        let cfg = VariantConfig::mr3(0.4, 0.3, 0.2);
        let base = objective(&inst.params, &inst.data, &inst.counts, &cfg).unwrap();
        let perm = [2usize, 0, 1];
        let p = &inst.params;
        let mut q = p.clone();
        for (new, &old) in perm.iter().enumerate() {
            q.u.column_mut(new).assign(&p.u.column(old));
            q.v.column_mut(new).assign(&p.v.column(old));
            q.psi.row_mut(new).assign(&p.psi.row(old));
            for (new2, &old2) in perm.iter().enumerate() {
                q.h[[new, new2]] = p.h[[old, old2]];
            }
        }
        let inv = |t: u32| perm.iter().position(|&o| o == t as usize).unwrap() as u32;
        let z: Vec<Vec<u32>> = inst
            .assignments
            .all()
            .iter()
            .map(|d| d.iter().map(|&t| inv(t)).collect())
            .collect();
        let z = Assignments::new(&inst.data.corpus, 3, z).unwrap();
        let counts = rebuild_counts(&inst.data.corpus, &z).unwrap();
        let permuted = objective(&q, &inst.data, &counts, &cfg).unwrap();
        assert!((base - permuted).abs() < 1e-10 * base.abs());
    }

    fn max_fd_error(
        inst: &crate::testutil::Instance,
        cfg: &VariantConfig,
        g: &Gradients,
    ) -> (f64, String) {
        let numeric = crate::testutil::finite_difference_gradient(inst, cfg, 1e-5);
        let analytic = crate::testutil::flatten_gradients(g);
        numeric
            .iter()
            .zip(&analytic)
            .map(|((name, n), &a)| (crate::testutil::relative_error(a, *n, 1e-6), name.clone()))
            .fold(
                (0.0, String::new()),
                |acc, x| if x.0 > acc.0 { x } else { acc },
            )
    }

    #[test]
    fn gradients_match_finite_differences() {
        let inst = random_instance(11, 8, 10, 3, 20, 50, 15);
        for cfg in [
            VariantConfig::mr3(0.3, 0.4, 0.2),
            VariantConfig::pmf(0.3),
            VariantConfig::locabal(0.1, 0.7),
        ] {
            let g = gradients(&inst.params, &inst.data, &inst.counts, &cfg).unwrap();
            let (err, block) = max_fd_error(&inst, &cfg, &g);
            assert!(err < 1e-4, "{cfg:?}: {err} in {block}");
        }
    }

    #[test]
    fn dropping_incoming_edge_terms_breaks_the_check() {
        let inst = random_instance(12, 8, 10, 3, 20, 50, 15);
        let cfg = VariantConfig::mr3(0.3, 0.8, 0.2);
        let mut g = gradients(&inst.params, &inst.data, &inst.counts, &cfg).unwrap();
        let p = &inst.params;
        let ht_u = p.u.dot(&p.h);
        for (e, &(a, i)) in inst.data.graph.edges().iter().enumerate() {
            let r = p.u.row(a).dot(&p.h.dot(&p.u.row(i))) - inst.data.context.similarity[e];
            let coef = 2.0 * cfg.lambda_rel * inst.data.context.trust[e] * r;
            g.u.row_mut(i).scaled_add(-coef, &ht_u.row(a));
        }
        let (err, block) = max_fd_error(&inst, &cfg, &g);
        assert!(err > 1e-2, "{err}");
        assert_eq!(block, "U");
    }

    #[test]
    fn objective_reduces_to_baselines() {
        use crate::testutil::{esmf_objective, hft_objective, locabal_objective, pmf_objective};
        for seed in 0..5 {
            let inst = random_instance(100 + seed, 8, 10, 3, 20, 50, 15);
            let (l, lrel, lrev) = (0.35, 0.45, 0.15);
            let eval = |cfg: VariantConfig| {
                objective(&inst.params, &inst.data, &inst.counts, &cfg).unwrap()
            };
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-10 * a.abs().max(1.0);
            let mut plain = VariantConfig::mr3(l, 0.0, 0.0);
            plain.use_social_weights = false;
            assert!(close(eval(plain), pmf_objective(&inst, l)));
            let mut hft = VariantConfig::mr3(l, 0.0, lrev);
            hft.use_social_weights = false;
            assert!(close(eval(hft), hft_objective(&inst, l, lrev)));
            let mut locabal = VariantConfig::mr3(l, lrel, 0.0);
            locabal.use_trust_values = false;
            assert!(close(eval(locabal), locabal_objective(&inst, l, lrel)));
            assert!(close(
                eval(VariantConfig::mr3(l, lrel, 0.0)),
                esmf_objective(&inst, l, lrel)
            ));
            assert_eq!(
                eval(VariantConfig::esmf(l, lrel)),
                eval(VariantConfig::mr3(l, lrel, 0.0))
            );
        }
    }
}
