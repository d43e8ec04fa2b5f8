//! Social constants consumed by the objective: per-user rating weights from
//! PageRank rank, per-edge trust values from degrees, and per-edge rating
//! cosine similarities. All of them are computed once from training data.

use std::io::Write;

use rayon::prelude::*;

use crate::data::{SocialGraph, SparseRatings};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageRankOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PageRankOptions {
    fn default() -> Self {
        PageRankOptions {
            damping: 0.85,
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

/// PageRank by power iteration. Score flows along trust edges, from the
/// truster to the trustee. Dangling users spread their mass uniformly.
pub fn pagerank(graph: &SocialGraph, opts: &PageRankOptions) -> Result<Vec<f64>> {
    if !(opts.damping > 0.0 && opts.damping < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "damping must lie in (0, 1), got {}",
            opts.damping
        )));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidArgument("tol must be positive".into()));
    }
    let n = graph.n_users();
    if n == 0 {
        return Ok(Vec::new());
    }
    let nf = n as f64;
    let d = opts.damping;
    let out = graph.out_degree();
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..opts.max_iter {
        let dangling: f64 = (0..n).filter(|&u| out[u] == 0).map(|u| rank[u]).sum();
        let base = (1.0 - d) / nf + d * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for &(a, b) in graph.edges() {
            next[b] += d * rank[a] / out[a] as f64;
        }
        // renormalise against drift so the scores stay a distribution
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        let delta: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut rank, &mut next);
        if delta < opts.tol {
            break;
        }
    }
    Ok(rank)
}

/// 1-based ranks by descending score; ties go to the smaller user id.
pub fn ranks_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut rank = vec![0; scores.len()];
    for (pos, &u) in order.iter().enumerate() {
        rank[u] = pos + 1;
    }
    rank
}

/// Rating weight `1 / (1 + ln rank)` for a 1-based rank.
pub fn rating_weight(rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    Ok(1.0 / (1.0 + (rank as f64).ln()))
}

/// Trust value of edge `(i, k)`: `sqrt(d⁻_k / (d⁺_i + d⁻_k))`.
pub fn trust_value(out_deg_i: usize, in_deg_k: usize) -> Result<f64> {
    if out_deg_i + in_deg_k == 0 {
        return Err(Error::InvalidArgument(
            "both degrees zero is impossible for an existing edge".into(),
        ));
    }
    Ok((in_deg_k as f64 / (out_deg_i + in_deg_k) as f64).sqrt())
}

/// Cosine similarity of two sparse vectors given as `(index, value)` pairs
/// sorted by index. Zero when either vector is empty or all-zero.
pub fn rating_cosine(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let norm = |v: &[(usize, f64)]| v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let (mut i, mut k, mut dot) = (0, 0, 0.0);
    while i < a.len() && k < b.len() {
        match a[i].0.cmp(&b[k].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => k += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[k].1;
                i += 1;
                k += 1;
            }
        }
    }
    dot / (na * nb)
}

/// Frozen social constants for one training split.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialContext {
    pub score: Vec<f64>,
    pub rank: Vec<usize>,
    pub weight_per_user: Vec<f64>,
    /// Trust value per edge, aligned with `SocialGraph::edges()`.
    pub trust: Vec<f64>,
    /// Rating cosine per edge, aligned with `SocialGraph::edges()`.
    pub similarity: Vec<f64>,
}

impl SocialContext {
    /// `ratings` may be centered or raw; similarities always use the
    /// absolute rating values.
    pub fn build(
        graph: &SocialGraph,
        ratings: &SparseRatings,
        opts: &PageRankOptions,
    ) -> Result<Self> {
        if graph.n_users() != ratings.n_users() {
            return Err(Error::InvalidData(format!(
                "graph has {} users but ratings have {}",
                graph.n_users(),
                ratings.n_users()
            )));
        }
        let score = pagerank(graph, opts)?;
        let rank = ranks_from_scores(&score);
        let weight_per_user = rank
            .iter()
            .map(|&r| rating_weight(r))
            .collect::<Result<Vec<_>>>()?;
        let (outd, ind) = (graph.out_degree(), graph.in_degree());
        let trust = graph
            .edges()
            .iter()
            .map(|&(i, k)| trust_value(outd[i], ind[k]))
            .collect::<Result<Vec<_>>>()?;
        let vectors: Vec<Vec<(usize, f64)>> = (0..ratings.n_users())
            .into_par_iter()
            .map(|u| {
                ratings
                    .user_ratings(u)
                    .iter()
                    .map(|t| (t.item, ratings.absolute(t)))
                    .collect()
            })
            .collect();
        let similarity = graph
            .edges()
            .par_iter()
            .map(|&(i, k)| rating_cosine(&vectors[i], &vectors[k]))
            .collect();
        Ok(SocialContext {
            score,
            rank,
            weight_per_user,
            trust,
            similarity,
        })
    }

    /// `user  rank  score  weight` rows.
    pub fn write_users_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "user\trank\tscore\tweight")?;
        for u in 0..self.rank.len() {
            writeln!(
                w,
                "{u}\t{}\t{}\t{}",
                self.rank[u], self.score[u], self.weight_per_user[u]
            )?;
        }
        Ok(())
    }

    /// `truster  trustee  trust  similarity` rows.
    pub fn write_edges_tsv<W: Write>(&self, graph: &SocialGraph, mut w: W) -> std::io::Result<()> {
        writeln!(w, "truster\ttrustee\ttrust\tsimilarity")?;
        for (e, &(i, k)) in graph.edges().iter().enumerate() {
            writeln!(w, "{i}\t{k}\t{}\t{}", self.trust[e], self.similarity[e])?;
        }
        Ok(())
    }
}
