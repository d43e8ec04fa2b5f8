//! Versioned binary checkpoint of a fitted model.
//!
//! Layout (little-endian): magic `MR3CKPT\0`, `u32` version, then the
//! dimensions `I J F L` as `u64`, `μ`, `κ`, the bias vectors, `U` (I×F),
//! `V` (J×F), `H` (F×F), `ψ` (F×L) as raw `f64` bit patterns, the
//! seen-in-training masks, and finally string key/value metadata. Floats are
//! stored bit-for-bit, so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::data::ModelParams;
use crate::error::Result;
use crate::model::FittedModel;

const MAGIC: &[u8; 8] = b"MR3CKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: FittedModel,
    /// Free-form provenance, e.g. the training configuration and split.
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)
            .expect("writing to memory cannot fail");
        buf
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let p = &self.model.params;
        let mut w = Writer(w);
        w.bytes(MAGIC)?;
        w.u32(VERSION)?;
        for dim in [p.n_users(), p.n_items(), p.n_factors(), p.vocab_len()] {
            w.usize(dim)?;
        }
        w.f64(p.mu)?;
        w.f64(p.kappa)?;
        w.f64s(p.b_user.iter())?;
        w.f64s(p.b_item.iter())?;
        for block in [&p.u, &p.v, &p.h, &p.psi] {
            w.f64s(block.iter())?;
        }
        for mask in [&self.model.known_users, &self.model.known_items] {
            let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
            w.bytes(&bytes)?;
        }
        w.usize(self.meta.len())?;
        for (k, v) in &self.meta {
            w.str(k)?;
            w.str(v)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r, "checkpoint");
        if &r.bytes::<8>()? != MAGIC {
            return Err(r.malformed("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.malformed(format!("unsupported version {version}")));
        }
        const MAX: usize = 1 << 32;
        let (i, j, f, l) = (r.len(MAX)?, r.len(MAX)?, r.len(1 << 16)?, r.len(MAX)?);
        for (a, b) in [(i, f), (j, f), (f, f), (f, l)] {
            if a.checked_mul(b).is_none_or(|n| n > 1 << 34) {
                return Err(r.malformed("dimensions too large"));
            }
        }
        let mut p = ModelParams::zeros(i, j, f, l, r.f64()?);
        p.kappa = r.f64()?;
        for x in p.b_user.iter_mut().chain(p.b_item.iter_mut()) {
            *x = r.f64()?;
        }
        for block in [&mut p.u, &mut p.v, &mut p.h, &mut p.psi] {
            for x in block.iter_mut() {
                *x = r.f64()?;
            }
        }
        let mut read_mask = |n: usize| -> Result<Vec<bool>> {
            (0..n)
                .map(|_| match r.bytes::<1>()?[0] {
                    0 => Ok(false),
                    1 => Ok(true),
                    b => Err(r.malformed(format!("bad mask byte {b}"))),
                })
                .collect()
        };
        let known_users = read_mask(i)?;
        let known_items = read_mask(j)?;
        let n_meta = r.len(1 << 16)?;
        let mut meta = BTreeMap::new();
        for _ in 0..n_meta {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        r.expect_eof()?;
        Ok(Checkpoint {
            model: FittedModel {
                params: p,
                known_users,
                known_items,
            },
            meta,
        })
    }
}
