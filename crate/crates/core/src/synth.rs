//! Synthetic data drawn from the model's own generative story.
//!
//! Latent factors and biases are Gaussian. Trust edges prefer popular users
//! with similar factor vectors, so U-cosine shapes the graph. Rating noise
//! grows with a user's PageRank rank, `σ_i² = σ²(1 + ln rank_i)`, which is the
//! inverse of the reputation weight. Each item gets a fixed number of review
//! tokens drawn from `θ_j = softmax(κV_j)` and `φ_f = softmax(ψ_f)`, spread over
//! the reviews attached to its ratings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample_weighted;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ModelParams, SocialGraph};
use crate::error::{Error, Result};
use crate::ingest::{RatingRecord, RawDataset};
use crate::social::{pagerank, ranks_from_scores, PageRankOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_factors: usize,
    pub vocab_len: usize,
    /// Fraction of the user×item grid that is rated.
    pub density: f64,
    /// Out-degrees are drawn uniformly from `1..=2·mean_out_degree − 1`.
    pub mean_out_degree: usize,
    /// Review tokens per item, before any split.
    pub tokens_per_item: usize,
    pub mu: f64,
    pub factor_std: f64,
    pub bias_std: f64,
    /// Noise standard deviation of the top-ranked user.
    pub noise_std: f64,
    pub kappa: f64,
    /// Standard deviation of the word weights ψ; larger means sharper topics.
    pub word_std: f64,
    /// How strongly edges prefer users with similar factors.
    pub homophily: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 300,
            n_factors: 5,
            vocab_len: 100,
            density: 0.05,
            mean_out_degree: 5,
            tokens_per_item: 30,
            mu: 3.5,
            factor_std: 0.6,
            bias_std: 0.3,
            noise_std: 0.2,
            kappa: 3.0,
            word_std: 2.5,
            homophily: 4.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub raw: RawDataset,
    /// Generating parameters, with dense ids equal to the numeric suffix of
    /// the `u<i>` / `i<j>` keys.
    pub truth: ModelParams,
    pub graph: SocialGraph,
    pub noise_std: Vec<f64>,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_users < 2 || self.n_items == 0 || self.n_factors == 0 || self.vocab_len == 0 {
            return bad("need at least 2 users, 1 item, 1 factor and 1 word");
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return bad("density must lie in (0, 1]");
        }
        if self.mean_out_degree == 0 || self.mean_out_degree >= self.n_users {
            return bad("mean out-degree must lie in [1, n_users)");
        }
        Ok(())
    }
}

fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let d = a.dot(&a).sqrt() * b.dot(&b).sqrt();
    if d == 0.0 {
        0.0
    } else {
        a.dot(&b) / d
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let (n_users, n_items, f) = (cfg.n_users, cfg.n_items, cfg.n_factors);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut truth = ModelParams::zeros(n_users, n_items, f, cfg.vocab_len, cfg.mu);
    let factor =
        Normal::new(0.0, cfg.factor_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let bias = Normal::new(0.0, cfg.bias_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let word = Normal::new(0.0, cfg.word_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    truth.u.mapv_inplace(|_| factor.sample(&mut rng));
    truth.v.mapv_inplace(|_| factor.sample(&mut rng));
    truth.b_user.mapv_inplace(|_| bias.sample(&mut rng));
    truth.b_item.mapv_inplace(|_| bias.sample(&mut rng));
    truth.psi.mapv_inplace(|_| word.sample(&mut rng));
    truth.kappa = cfg.kappa;

    // trust edges: popularity (Zipf-like) times similarity
    let popularity: Vec<f64> = (0..n_users)
        .map(|k| 1.0 / (1.0 + k as f64).sqrt())
        .collect();
    let mut edges = Vec::new();
    for i in 0..n_users {
        let d = rng.random_range(1..=(2 * cfg.mean_out_degree - 1).min(n_users - 1));
        let weights: Vec<f64> = (0..n_users)
            .map(|k| {
                if k == i {
                    0.0
                } else {
                    popularity[k] * (cfg.homophily * cosine(truth.u.row(i), truth.u.row(k))).exp()
                }
            })
            .collect();
        let picked = sample_weighted(&mut rng, n_users, |k| weights[k], d)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        edges.extend(picked.into_iter().map(|k| (i, k)));
    }
    let graph = SocialGraph::new(n_users, edges)?;
    let ranks = ranks_from_scores(&pagerank(&graph, &PageRankOptions::default())?);
    let noise_std: Vec<f64> = ranks
        .iter()
        .map(|&r| cfg.noise_std * (1.0 + (r as f64).ln()).sqrt())
        .collect();

    // ratings, every user and item at least once
    let mut cells = vec![false; n_users * n_items];
    for i in 0..n_users {
        cells[i * n_items + rng.random_range(0..n_items)] = true;
    }
    for j in 0..n_items {
        cells[rng.random_range(0..n_users) * n_items + j] = true;
    }
    let target = ((n_users * n_items) as f64 * cfg.density).round() as usize;
    let mut filled = cells.iter().filter(|&&c| c).count();
    while filled < target {
        let c = rng.random_range(0..cells.len());
        if !cells[c] {
            cells[c] = true;
            filled += 1;
        }
    }

    let theta = truth.theta();
    let phi = truth.phi();
    let topic_of: Vec<WeightedIndex<f64>> = (0..n_items)
        .map(|j| WeightedIndex::new(theta.row(j).to_vec()).expect("softmax row"))
        .collect();
    let word_of: Vec<WeightedIndex<f64>> = (0..f)
        .map(|t| WeightedIndex::new(phi.row(t).to_vec()).expect("softmax row"))
        .collect();

    let mut by_item: Vec<Vec<usize>> = vec![Vec::new(); n_items];
    let mut records = Vec::with_capacity(filled);
    for i in 0..n_users {
        for j in 0..n_items {
            if !cells[i * n_items + j] {
                continue;
            }
            let clean =
                truth.mu + truth.b_user[i] + truth.b_item[j] + truth.u.row(i).dot(&truth.v.row(j));
            let noisy = clean + noise_std[i] * rng.sample::<f64, _>(rand_distr::StandardNormal);
            by_item[j].push(records.len());
            records.push(RatingRecord {
                user: format!("u{i}"),
                item: format!("i{j}"),
                score: noisy.clamp(1.0, 5.0),
                review: None,
            });
        }
    }
    let mut words: Vec<Vec<String>> = vec![Vec::new(); records.len()];
    for (j, raters) in by_item.iter().enumerate() {
        for n in 0..cfg.tokens_per_item {
            let t = topic_of[j].sample(&mut rng);
            let w = word_of[t].sample(&mut rng);
            words[raters[n % raters.len()]].push(format!("w{w}"));
        }
    }
    for (r, w) in records.iter_mut().zip(words) {
        if !w.is_empty() {
            r.review = Some(w.join(" "));
        }
    }

    let relation_records = graph
        .edges()
        .iter()
        .map(|&(a, b)| (format!("u{a}"), format!("u{b}")))
        .collect();
    Ok(SynthData {
        raw: RawDataset {
            rating_records: records,
            relation_records,
        },
        truth,
        graph,
        noise_std,
    })
}

/// Writes `ratings.tsv` and `relations.tsv` in the ingestion format.
pub fn write_tsv(raw: &RawDataset, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("ratings.tsv"))?);
    for r in &raw.rating_records {
        write!(w, "{}\t{}\t{}", r.user, r.item, r.score)?;
        if let Some(text) = &r.review {
            write!(w, "\t{text}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    let mut w = BufWriter::new(File::create(dir.join("relations.tsv"))?);
    for (a, b) in &raw.relation_records {
        writeln!(w, "{a}\t{b}")?;
    }
    w.flush()?;
    Ok(())
}
