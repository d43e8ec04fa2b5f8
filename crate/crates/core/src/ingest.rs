//! Reading ratings, trust relations and review text from tab-separated files
//! and turning them into a [`Dataset`].
//!
//! Ratings: `user \t item \t score [\t review text]`. Relations:
//! `truster \t trustee`. Blank lines and lines starting with `#` are skipped.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::data::{Rating, SocialGraph, SparseRatings};
use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 8000;

/// Minimum number of ratings a user or item needs to survive pruning.
pub const MIN_OCCURRENCES: usize = 3;

pub const TOKENIZER_RULE: &str =
    "lowercase; split on runs of non-alphanumeric characters; drop stopwords and tokens shorter than 2 characters";

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub user: String,
    pub item: String,
    pub score: f64,
    pub review: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub rating_records: Vec<RatingRecord>,
    pub relation_records: Vec<(String, String)>,
}

impl RawDataset {
    /// Drops repeated `(user, item)` ratings, keeping the first. Returns how
    /// many were dropped.
    pub fn dedup_ratings(&mut self) -> usize {
        let before = self.rating_records.len();
        let mut seen = HashSet::new();
        self.rating_records
            .retain(|r| seen.insert((r.user.clone(), r.item.clone())));
        before - self.rating_records.len()
    }
}

fn parse_error(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn data_lines(path: &Path) -> Result<impl Iterator<Item = Result<(usize, String)>>> {
    let path_buf: PathBuf = path.to_path_buf();
    let reader = BufReader::new(File::open(path)?);
    Ok(reader
        .lines()
        .enumerate()
        .map(move |(n, line)| match line {
            Ok(l) => Ok((n + 1, l)),
            Err(e) => Err(parse_error(&path_buf, n + 1, e.to_string())),
        })
        .filter(|r| match r {
            Ok((_, l)) => {
                let t = l.trim();
                !t.is_empty() && !t.starts_with('#')
            }
            Err(_) => true,
        }))
}

pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for line in data_lines(path)? {
        let (n, line) = line?;
        let line = line.trim_end_matches('\r');
        let mut fields = line.splitn(4, '\t');
        let (user, item, score) = match (fields.next(), fields.next(), fields.next()) {
            (Some(u), Some(i), Some(s)) => (u.trim(), i.trim(), s.trim()),
            _ => {
                return Err(parse_error(
                    path,
                    n,
                    "expected user, item and score columns",
                ))
            }
        };
        if user.is_empty() || item.is_empty() {
            return Err(parse_error(path, n, "empty user or item key"));
        }
        let score: f64 = score
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| parse_error(path, n, format!("invalid score {score:?}")))?;
        out.push(RatingRecord {
            user: user.to_string(),
            item: item.to_string(),
            score,
            review: fields.next().map(str::to_string),
        });
    }
    Ok(out)
}

pub fn read_relations(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in data_lines(path)? {
        let (n, line) = line?;
        let mut fields = line.trim_end_matches('\r').split('\t');
        match (fields.next(), fields.next()) {
            (Some(a), Some(b)) if !a.trim().is_empty() && !b.trim().is_empty() => {
                out.push((a.trim().to_string(), b.trim().to_string()))
            }
            _ => return Err(parse_error(path, n, "expected truster and trustee columns")),
        }
    }
    Ok(out)
}

/// One lowercase word per line.
pub fn read_stoplist(path: &Path) -> Result<HashSet<String>> {
    let mut out = HashSet::new();
    for line in data_lines(path)? {
        out.insert(line?.1.trim().to_lowercase());
    }
    Ok(out)
}

const BUNDLED_STOPLIST: &str = include_str!("../data/stoplist.txt");

/// A general-purpose English stoplist shipped with the crate, already split
/// the way [`tokenize`] splits contractions.
pub fn bundled_stoplist() -> HashSet<String> {
    BUNDLED_STOPLIST
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// The stoplist at `path`, or the bundled one when no path is given.
pub fn load_stoplist(path: Option<&Path>) -> Result<HashSet<String>> {
    match path {
        Some(p) => read_stoplist(p),
        None => Ok(bundled_stoplist()),
    }
}

pub fn read_raw(ratings: &Path, relations: Option<&Path>) -> Result<RawDataset> {
    Ok(RawDataset {
        rating_records: read_ratings(ratings)?,
        relation_records: match relations {
            Some(p) => read_relations(p)?,
            None => Vec::new(),
        },
    })
}

pub fn tokenize(text: &str, stoplist: &HashSet<String>) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| t.chars().count() >= 2 && !stoplist.contains(t))
        .collect()
}

/// The `size` most frequent tokens, most frequent first; ties broken by
/// ascending lexicographic order.
pub fn build_vocabulary<'a>(
    docs: impl IntoIterator<Item = &'a Vec<String>>,
    size: usize,
) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        for t in doc {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(size)
        .map(|(w, _)| w.to_string())
        .collect()
}

/// Repeatedly drops users and items with fewer than [`MIN_OCCURRENCES`]
/// ratings until none remain, then keeps only relations between surviving
/// users.
pub fn prune_rare(raw: &RawDataset) -> Result<RawDataset> {
    let mut ratings: Vec<&RatingRecord> = raw.rating_records.iter().collect();
    loop {
        let mut by_user: HashMap<&str, usize> = HashMap::new();
        let mut by_item: HashMap<&str, usize> = HashMap::new();
        for r in &ratings {
            *by_user.entry(&r.user).or_default() += 1;
            *by_item.entry(&r.item).or_default() += 1;
        }
        let before = ratings.len();
        ratings.retain(|r| {
            by_user[r.user.as_str()] >= MIN_OCCURRENCES
                && by_item[r.item.as_str()] >= MIN_OCCURRENCES
        });
        if ratings.len() == before {
            break;
        }
    }
    if ratings.is_empty() {
        return Err(Error::DegenerateDataset);
    }
    let users: HashSet<&str> = ratings.iter().map(|r| r.user.as_str()).collect();
    Ok(RawDataset {
        rating_records: ratings.into_iter().cloned().collect(),
        relation_records: raw
            .relation_records
            .iter()
            .filter(|(a, b)| users.contains(a.as_str()) && users.contains(b.as_str()))
            .cloned()
            .collect(),
    })
}

/// Assigns dense ids in first-seen order, builds the vocabulary from all
/// review text, and links every reviewed rating to its tokenized review.
/// Relations to unknown users, self-loops and repeated edges are dropped.
pub fn assemble(
    raw: &RawDataset,
    vocab_size: usize,
    stoplist: &HashSet<String>,
) -> Result<Dataset> {
    if raw.rating_records.is_empty() {
        return Err(Error::NoObservations);
    }
    if vocab_size == 0 {
        return Err(Error::InvalidArgument(
            "vocabulary size must be at least 1".into(),
        ));
    }
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut user_keys = Vec::new();
    let mut item_keys = Vec::new();
    for r in &raw.rating_records {
        user_ids.entry(&r.user).or_insert_with(|| {
            user_keys.push(r.user.clone());
            user_keys.len() - 1
        });
        item_ids.entry(&r.item).or_insert_with(|| {
            item_keys.push(r.item.clone());
            item_keys.len() - 1
        });
    }

    let tokenized: Vec<Option<Vec<String>>> = raw
        .rating_records
        .iter()
        .map(|r| r.review.as_deref().map(|t| tokenize(t, stoplist)))
        .collect();
    let vocab = build_vocabulary(tokenized.iter().flatten(), vocab_size);
    let word_ids: HashMap<&str, u32> = vocab
        .iter()
        .enumerate()
        .map(|(k, w)| (w.as_str(), k as u32))
        .collect();

    let mut reviews = Vec::new();
    let mut triples = Vec::with_capacity(raw.rating_records.len());
    for (r, toks) in raw.rating_records.iter().zip(&tokenized) {
        let doc_ref = toks.as_ref().map(|toks| {
            reviews.push(
                toks.iter()
                    .filter_map(|t| word_ids.get(t.as_str()).copied())
                    .collect(),
            );
            reviews.len() - 1
        });
        triples.push(Rating {
            user: user_ids[r.user.as_str()],
            item: item_ids[r.item.as_str()],
            value: r.score,
            doc_ref,
        });
    }
    let ratings = SparseRatings::new(user_keys.len(), item_keys.len(), triples)?;

    let mut edges: Vec<(usize, usize)> = raw
        .relation_records
        .iter()
        .filter_map(|(a, b)| Some((*user_ids.get(a.as_str())?, *user_ids.get(b.as_str())?)))
        .filter(|(a, b)| a != b)
        .collect();
    edges.sort_unstable();
    edges.dedup();
    let graph = SocialGraph::new(user_keys.len(), edges)?;

    Ok(Dataset {
        ratings,
        reviews,
        graph,
        vocab,
        user_keys,
        item_keys,
    })
}

/// Summary statistics written next to an ingested dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub users: usize,
    pub items: usize,
    pub ratings: usize,
    pub relations: usize,
    pub words: usize,
    pub vocabulary: usize,
    pub rating_density: f64,
    pub social_density: f64,
    pub avg_words_per_item: f64,
    pub duplicate_ratings_dropped: usize,
    pub pruned: bool,
    pub tokenizer: String,
}

impl Manifest {
    pub fn describe(ds: &Dataset, duplicate_ratings_dropped: usize, pruned: bool) -> Self {
        let (i, j) = (ds.n_users(), ds.n_items());
        let words: usize = ds.reviews.iter().map(Vec::len).sum();
        Manifest {
            users: i,
            items: j,
            ratings: ds.ratings.len(),
            relations: ds.graph.len(),
            words,
            vocabulary: ds.vocab.len(),
            rating_density: ds.ratings.len() as f64 / (i as f64 * j as f64),
            social_density: ds.graph.len() as f64 / (i as f64 * i as f64),
            avg_words_per_item: words as f64 / j as f64,
            duplicate_ratings_dropped,
            pruned,
            tokenizer: TOKENIZER_RULE.to_string(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}
