//! An assembled dataset: raw ratings with links to tokenized reviews, the
//! trust graph, the vocabulary, and the original string keys.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::data::{Corpus, Rating, SocialGraph, SparseRatings};
use crate::error::Result;

const MAGIC: &[u8; 8] = b"MR3DATA\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Raw (uncentered) ratings. `doc_ref` indexes `reviews`.
    pub ratings: SparseRatings,
    /// Tokenized reviews in input order, restricted to the vocabulary.
    pub reviews: Vec<Vec<u32>>,
    pub graph: SocialGraph,
    pub vocab: Vec<String>,
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
}

impl Dataset {
    pub fn n_users(&self) -> usize {
        self.ratings.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.ratings.n_items()
    }

    /// One document per item, concatenating the reviews attached to the
    /// given ratings in input order. Items without reviews get empty docs.
    pub fn corpus_for(&self, ratings: &SparseRatings) -> Result<Corpus> {
        let mut refs: Vec<(usize, usize)> = ratings
            .triples()
            .iter()
            .filter_map(|t| t.doc_ref.map(|d| (d, t.item)))
            .collect();
        refs.sort_unstable();
        let mut docs = vec![Vec::new(); ratings.n_items()];
        for (d, item) in refs {
            docs[item].extend_from_slice(&self.reviews[d]);
        }
        Corpus::new(self.vocab.clone(), docs)
    }

    /// Corpus over every review in the dataset.
    pub fn full_corpus(&self) -> Result<Corpus> {
        self.corpus_for(&self.ratings)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        w.usize(self.n_users())?;
        w.usize(self.n_items())?;
        w.usize(self.ratings.len())?;
        for t in self.ratings.triples() {
            w.usize(t.user)?;
            w.usize(t.item)?;
            w.f64(t.value)?;
            w.u64(t.doc_ref.map_or(u64::MAX, |d| d as u64))?;
        }
        w.usize(self.reviews.len())?;
        for r in &self.reviews {
            w.usize(r.len())?;
            for &tok in r {
                w.u32(tok)?;
            }
        }
        w.usize(self.graph.len())?;
        for &(a, b) in self.graph.edges() {
            w.usize(a)?;
            w.usize(b)?;
        }
        for keys in [&self.vocab, &self.user_keys, &self.item_keys] {
            w.usize(keys.len())?;
            for k in keys {
                w.str(k)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r, "dataset");
        if &r.bytes::<8>()? != MAGIC {
            return Err(r.malformed("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.malformed(format!("unsupported version {version}")));
        }
        const MAX: usize = 1 << 40;
        let n_users = r.len(MAX)?;
        let n_items = r.len(MAX)?;
        let n_ratings = r.len(MAX)?;
        let mut triples = Vec::with_capacity(n_ratings.min(1 << 24));
        for _ in 0..n_ratings {
            let user = r.len(MAX)?;
            let item = r.len(MAX)?;
            let value = r.f64()?;
            let d = r.u64()?;
            triples.push(Rating {
                user,
                item,
                value,
                doc_ref: (d != u64::MAX).then_some(d as usize),
            });
        }
        let n_reviews = r.len(MAX)?;
        let mut reviews = Vec::with_capacity(n_reviews.min(1 << 24));
        for _ in 0..n_reviews {
            let n = r.len(MAX)?;
            reviews.push((0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?);
        }
        let n_edges = r.len(MAX)?;
        let mut edges = Vec::with_capacity(n_edges.min(1 << 24));
        for _ in 0..n_edges {
            edges.push((r.len(MAX)?, r.len(MAX)?));
        }
        let mut key_lists = Vec::new();
        for _ in 0..3 {
            let n = r.len(MAX)?;
            key_lists.push((0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?);
        }
        r.expect_eof()?;
        let item_keys = key_lists.pop().unwrap();
        let user_keys = key_lists.pop().unwrap();
        let vocab = key_lists.pop().unwrap();
        if triples
            .iter()
            .any(|t| t.doc_ref.is_some_and(|d| d >= reviews.len()))
        {
            return Err(r.malformed("rating links to a missing review"));
        }
        let l = vocab.len();
        if reviews.iter().flatten().any(|&w| w as usize >= l) {
            return Err(r.malformed("token outside vocabulary"));
        }
        Ok(Dataset {
            ratings: SparseRatings::new(n_users, n_items, triples)?,
            reviews,
            graph: SocialGraph::new(n_users, edges)?,
            vocab,
            user_keys,
            item_keys,
        })
    }
}
