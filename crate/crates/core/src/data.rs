//! In-memory containers for ratings, the trust graph, review corpora and
//! model parameters.
//!
//! Every container is immutable once built. Index views (user-major and
//! item-major for ratings, out/in adjacency for the graph) are computed at
//! construction so the gradient code can walk observations by either side.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// One observed rating. `doc_ref` points into the review store of the
/// dataset the rating came from, when the rating carried a review.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
    pub doc_ref: Option<usize>,
}

/// Sparse user×item ratings in coordinate form.
///
/// Triples are sorted by `(user, item)`. `value + global_mean` is the rating
/// on the original scale, so raw data carries `global_mean == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRatings {
    n_users: usize,
    n_items: usize,
    triples: Vec<Rating>,
    global_mean: f64,
    user_ptr: Vec<usize>,
    item_ptr: Vec<usize>,
    item_order: Vec<usize>,
}

impl SparseRatings {
    pub fn new(n_users: usize, n_items: usize, mut triples: Vec<Rating>) -> Result<Self> {
        for t in &triples {
            if t.user >= n_users || t.item >= n_items {
                return Err(Error::InvalidData(format!(
                    "rating ({}, {}) outside {}x{} matrix",
                    t.user, t.item, n_users, n_items
                )));
            }
            if !t.value.is_finite() {
                return Err(Error::InvalidData(format!(
                    "non-finite rating for ({}, {})",
                    t.user, t.item
                )));
            }
        }
        triples.sort_by_key(|t| (t.user, t.item));
        if let Some(w) = triples
            .windows(2)
            .find(|w| (w[0].user, w[0].item) == (w[1].user, w[1].item))
        {
            return Err(Error::InvalidData(format!(
                "duplicate rating for ({}, {})",
                w[0].user, w[0].item
            )));
        }
        Ok(Self::from_sorted(n_users, n_items, triples, 0.0))
    }

    fn from_sorted(n_users: usize, n_items: usize, triples: Vec<Rating>, global_mean: f64) -> Self {
        let user_ptr = offsets(n_users, triples.iter().map(|t| t.user));
        let mut item_order: Vec<usize> = (0..triples.len()).collect();
        item_order.sort_by_key(|&k| (triples[k].item, triples[k].user));
        let item_ptr = offsets(n_items, item_order.iter().map(|&k| triples[k].item));
        SparseRatings {
            n_users,
            n_items,
            triples,
            global_mean,
            user_ptr,
            item_ptr,
            item_order,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub fn triples(&self) -> &[Rating] {
        &self.triples
    }

    pub fn user_ratings(&self, user: usize) -> &[Rating] {
        &self.triples[self.user_ptr[user]..self.user_ptr[user + 1]]
    }

    pub fn item_ratings(&self, item: usize) -> impl Iterator<Item = &Rating> + '_ {
        self.item_order[self.item_ptr[item]..self.item_ptr[item + 1]]
            .iter()
            .map(move |&k| &self.triples[k])
    }

    pub fn user_count(&self, user: usize) -> usize {
        self.user_ptr[user + 1] - self.user_ptr[user]
    }

    pub fn item_count(&self, item: usize) -> usize {
        self.item_ptr[item + 1] - self.item_ptr[item]
    }

    /// Rating on the original scale.
    pub fn absolute(&self, r: &Rating) -> f64 {
        r.value + self.global_mean
    }

    /// Keeps the triples at the given positions (positions into `triples()`).
    pub fn select(&self, positions: &[usize]) -> SparseRatings {
        let mut kept: Vec<Rating> = positions.iter().map(|&k| self.triples[k]).collect();
        kept.sort_by_key(|t| (t.user, t.item));
        SparseRatings::from_sorted(self.n_users, self.n_items, kept, self.global_mean)
    }
}

fn offsets(n: usize, keys: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut ptr = vec![0usize; n + 1];
    for k in keys {
        ptr[k + 1] += 1;
    }
    for i in 0..n {
        ptr[i + 1] += ptr[i];
    }
    ptr
}

/// Subtracts the mean rating. Returns the centered ratings and μ.
pub fn center_ratings(raw: &SparseRatings) -> Result<(SparseRatings, f64)> {
    if raw.is_empty() {
        return Err(Error::NoObservations);
    }
    let mu = raw.triples.iter().map(|t| raw.absolute(t)).sum::<f64>() / raw.len() as f64;
    let triples = raw
        .triples
        .iter()
        .map(|t| Rating {
            value: raw.absolute(t) - mu,
            ..*t
        })
        .collect();
    Ok((
        SparseRatings::from_sorted(raw.n_users, raw.n_items, triples, mu),
        mu,
    ))
}

/// Directed trust graph. An edge `(i, k)` means user `i` trusts user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialGraph {
    n_users: usize,
    edges: Vec<(usize, usize)>,
    out_degree: Vec<usize>,
    in_degree: Vec<usize>,
    out_ptr: Vec<usize>,
    in_ptr: Vec<usize>,
    in_edges: Vec<usize>,
}

impl SocialGraph {
    pub fn new(n_users: usize, mut edges: Vec<(usize, usize)>) -> Result<Self> {
        for &(a, b) in &edges {
            if a >= n_users || b >= n_users {
                return Err(Error::InvalidData(format!(
                    "edge ({a}, {b}) outside {n_users} users"
                )));
            }
            if a == b {
                return Err(Error::InvalidData(format!("self-loop on user {a}")));
            }
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidData(format!(
                "duplicate edge ({}, {})",
                w[0].0, w[0].1
            )));
        }
        let mut out_degree = vec![0; n_users];
        let mut in_degree = vec![0; n_users];
        for &(a, b) in &edges {
            out_degree[a] += 1;
            in_degree[b] += 1;
        }
        let out_ptr = offsets(n_users, edges.iter().map(|e| e.0));
        let mut in_edges: Vec<usize> = (0..edges.len()).collect();
        in_edges.sort_by_key(|&e| (edges[e].1, edges[e].0));
        let in_ptr = offsets(n_users, in_edges.iter().map(|&e| edges[e].1));
        Ok(SocialGraph {
            n_users,
            edges,
            out_degree,
            in_degree,
            out_ptr,
            in_ptr,
            in_edges,
        })
    }

    pub fn empty(n_users: usize) -> Self {
        SocialGraph::new(n_users, Vec::new()).expect("empty graph is valid")
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    /// Edges sorted by `(truster, trustee)`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn out_degree(&self) -> &[usize] {
        &self.out_degree
    }

    pub fn in_degree(&self) -> &[usize] {
        &self.in_degree
    }

    /// Indices (into `edges()`) of the edges leaving `user`.
    pub fn out_edges(&self, user: usize) -> std::ops::Range<usize> {
        self.out_ptr[user]..self.out_ptr[user + 1]
    }

    /// Indices (into `edges()`) of the edges pointing at `user`.
    pub fn in_edges(&self, user: usize) -> &[usize] {
        &self.in_edges[self.in_ptr[user]..self.in_ptr[user + 1]]
    }
}

/// Per-item review documents. Document `j` aggregates every review of item `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    vocab: Vec<String>,
    docs: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn new(vocab: Vec<String>, docs: Vec<Vec<u32>>) -> Result<Self> {
        let l = vocab.len();
        for (d, doc) in docs.iter().enumerate() {
            if let Some(&w) = doc.iter().find(|&&w| w as usize >= l) {
                return Err(Error::InvalidData(format!(
                    "doc {d} has token {w} outside vocabulary of {l}"
                )));
            }
        }
        Ok(Corpus { vocab, docs })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    pub fn doc(&self, d: usize) -> &[u32] {
        &self.docs[d]
    }

    pub fn n_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }
}

/// Topic assignment per token, congruent with a [`Corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignments {
    n_topics: usize,
    z: Vec<Vec<u32>>,
}

impl Assignments {
    pub fn new(corpus: &Corpus, n_topics: usize, z: Vec<Vec<u32>>) -> Result<Self> {
        if z.len() != corpus.n_docs()
            || z.iter().zip(corpus.docs()).any(|(a, d)| a.len() != d.len())
        {
            return Err(Error::InvalidData(
                "assignments do not match corpus shape".into(),
            ));
        }
        if let Some(&t) = z.iter().flatten().find(|&&t| t as usize >= n_topics) {
            return Err(Error::InvalidTopic {
                topic: t as usize,
                n_topics,
            });
        }
        Ok(Assignments { n_topics, z })
    }

    /// Draws every assignment uniformly from `[0, n_topics)`.
    pub fn uniform<R: Rng + ?Sized>(corpus: &Corpus, n_topics: usize, rng: &mut R) -> Self {
        let z = corpus
            .docs()
            .iter()
            .map(|doc| {
                doc.iter()
                    .map(|_| rng.random_range(0..n_topics as u32))
                    .collect()
            })
            .collect();
        Assignments { n_topics, z }
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn doc(&self, d: usize) -> &[u32] {
        &self.z[d]
    }

    pub fn all(&self) -> &[Vec<u32>] {
        &self.z
    }
}

/// Topic occurrence statistics derived from a corpus and its assignments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopicCounts {
    /// J×F topic occurrences per document.
    pub doc_topic: Array2<u64>,
    /// Words per document.
    pub doc_len: Vec<u64>,
    /// F×L word-topic occurrences.
    pub word_topic: Array2<u64>,
    /// Occurrences of each topic across the corpus.
    pub topic_total: Vec<u64>,
}

impl TopicCounts {
    pub fn n_topics(&self) -> usize {
        self.topic_total.len()
    }

    /// Checks the row-sum and grand-total identities.
    pub fn is_consistent(&self) -> bool {
        let docs_ok = self
            .doc_topic
            .rows()
            .into_iter()
            .zip(&self.doc_len)
            .all(|(row, &n)| row.sum() == n);
        let words_ok = self
            .word_topic
            .rows()
            .into_iter()
            .zip(&self.topic_total)
            .all(|(row, &n)| row.sum() == n);
        let total_docs: u64 = self.doc_len.iter().sum();
        let total_topics: u64 = self.topic_total.iter().sum();
        docs_ok && words_ok && total_docs == total_topics
    }
}

/// Tallies topic statistics from the current assignments.
pub fn rebuild_counts(corpus: &Corpus, assignments: &Assignments) -> Result<TopicCounts> {
    let f = assignments.n_topics();
    let l = corpus.vocab_len();
    let j = corpus.n_docs();
    if assignments.all().len() != j {
        return Err(Error::InvalidData(
            "assignments do not match corpus shape".into(),
        ));
    }
    let mut doc_topic = Array2::<u64>::zeros((j, f));
    let mut doc_len = vec![0u64; j];
    let mut word_topic = Array2::<u64>::zeros((f, l));
    let mut topic_total = vec![0u64; f];
    for d in 0..j {
        let (words, topics) = (corpus.doc(d), assignments.doc(d));
        if words.len() != topics.len() {
            return Err(Error::InvalidData(format!(
                "doc {d}: {} tokens but {} assignments",
                words.len(),
                topics.len()
            )));
        }
        for (&w, &z) in words.iter().zip(topics) {
            let z = z as usize;
            if z >= f {
                return Err(Error::InvalidTopic {
                    topic: z,
                    n_topics: f,
                });
            }
            doc_topic[[d, z]] += 1;
            word_topic[[z, w as usize]] += 1;
            topic_total[z] += 1;
        }
        doc_len[d] = words.len() as u64;
    }
    Ok(TopicCounts {
        doc_topic,
        doc_len,
        word_topic,
        topic_total,
    })
}

/// Fitted parameters. Latent factors are stored one row per user or item:
/// `u` is I×F, `v` is J×F, `h` is F×F and `psi` is F×L.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub b_user: Array1<f64>,
    pub b_item: Array1<f64>,
    pub u: Array2<f64>,
    pub v: Array2<f64>,
    pub h: Array2<f64>,
    pub psi: Array2<f64>,
    pub kappa: f64,
}

impl ModelParams {
    /// All blocks zero, κ = 1.
    pub fn zeros(
        n_users: usize,
        n_items: usize,
        n_factors: usize,
        vocab_len: usize,
        mu: f64,
    ) -> Self {
        ModelParams {
            mu,
            b_user: Array1::zeros(n_users),
            b_item: Array1::zeros(n_items),
            u: Array2::zeros((n_users, n_factors)),
            v: Array2::zeros((n_items, n_factors)),
            h: Array2::zeros((n_factors, n_factors)),
            psi: Array2::zeros((n_factors, vocab_len)),
            kappa: 1.0,
        }
    }

    /// U, V, H and ψ drawn from N(0, std²); biases zero; κ = 1.
    pub fn random<R: Rng + ?Sized>(
        n_users: usize,
        n_items: usize,
        n_factors: usize,
        vocab_len: usize,
        mu: f64,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let normal = Normal::new(0.0, std).expect("std must be finite and non-negative");
        let mut p = ModelParams::zeros(n_users, n_items, n_factors, vocab_len, mu);
        for block in [&mut p.u, &mut p.v, &mut p.h, &mut p.psi] {
            block.iter_mut().for_each(|x| *x = normal.sample(rng));
        }
        p
    }

    pub fn n_users(&self) -> usize {
        self.u.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.v.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.h.nrows()
    }

    pub fn vocab_len(&self) -> usize {
        self.psi.ncols()
    }

    /// θ, one row per item.
    pub fn theta(&self) -> Array2<f64> {
        let mut theta = self.v.clone();
        for mut row in theta.rows_mut() {
            let t = crate::model::topic_transform(row.view(), self.kappa);
            row.assign(&t);
        }
        theta
    }

    /// φ, one row per topic.
    pub fn phi(&self) -> Array2<f64> {
        let mut phi = self.psi.clone();
        for mut row in phi.rows_mut() {
            let t = crate::model::word_dist(row.view());
            row.assign(&t);
        }
        phi
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite()
            && self.kappa.is_finite()
            && [&self.b_user, &self.b_item]
                .iter()
                .all(|a| a.iter().all(|x| x.is_finite()))
            && [&self.u, &self.v, &self.h, &self.psi]
                .iter()
                .all(|a| a.iter().all(|x| x.is_finite()))
    }
}
