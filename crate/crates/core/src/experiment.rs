//! Evaluation harness: random holdout splits, RMSE, and the grid of
//! (method, split, seed, hyperparameter) cells behind the comparison,
//! ablation and sensitivity reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::{ModelParams, SparseRatings};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::inference::{train_with, LrPolicy, TrainConfig, TrainObserver};
use crate::ingest;
use crate::model::{FittedModel, TrainingSet, VariantConfig};
use crate::social::PageRankOptions;

/// Uniform random partition of the rating triples. `round(n·x/100)` ratings
/// go to training.
pub fn split(
    ratings: &SparseRatings,
    train_percent: u32,
    seed: u64,
) -> Result<(SparseRatings, SparseRatings)> {
    if !(1..=99).contains(&train_percent) {
        return Err(Error::InvalidArgument(format!(
            "training percentage must lie in [1, 99], got {train_percent}"
        )));
    }
    let n = ratings.len();
    let n_train = ((n as f64) * f64::from(train_percent) / 100.0).round() as usize;
    if n_train == 0 {
        return Err(Error::EmptyPartition("train"));
    }
    if n_train == n {
        return Err(Error::EmptyPartition("test"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, test) = order.split_at_mut(n_train);
    train.sort_unstable();
    test.sort_unstable();
    Ok((ratings.select(train), ratings.select(test)))
}

/// Root-mean-square error over the (raw) test ratings.
pub fn rmse(model: &FittedModel, test: &SparseRatings) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::NoObservations);
    }
    let sse: f64 = test
        .triples()
        .iter()
        .map(|t| (test.absolute(t) - model.predict(t.user, t.item)).powi(2))
        .sum();
    Ok((sse / test.len() as f64).sqrt())
}

/// Training set for a split: centered training ratings, the full trust
/// graph, and a corpus built only from reviews attached to training ratings.
pub fn training_set(ds: &Dataset, train: &SparseRatings) -> Result<TrainingSet> {
    TrainingSet::new(
        train,
        ds.graph.clone(),
        ds.corpus_for(train)?,
        &PageRankOptions::default(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Mean,
    Pmf,
    Hft,
    Locabal,
    Esmf,
    Mr3,
    /// MR3 with the review term switched off.
    Mr3NoContent,
    /// MR3 with the social term switched off.
    Mr3NoSocial,
    Mr3NoContentSocial,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Mean,
        Variant::Pmf,
        Variant::Hft,
        Variant::Locabal,
        Variant::Esmf,
        Variant::Mr3,
        Variant::Mr3NoContent,
        Variant::Mr3NoSocial,
        Variant::Mr3NoContentSocial,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mean => "Mean",
            Variant::Pmf => "PMF",
            Variant::Hft => "HFT",
            Variant::Locabal => "LOCABAL",
            Variant::Esmf => "eSMF",
            Variant::Mr3 => "MR3",
            Variant::Mr3NoContent => "MR3\\content",
            Variant::Mr3NoSocial => "MR3\\social",
            Variant::Mr3NoContentSocial => "MR3\\content\\social",
        }
    }

    /// Whether the λ_rel / λ_rev sweep axes apply.
    pub fn is_mr3_family(self) -> bool {
        matches!(
            self,
            Variant::Mr3
                | Variant::Mr3NoContent
                | Variant::Mr3NoSocial
                | Variant::Mr3NoContentSocial
        )
    }

    /// Objective configuration, or `None` for the global-mean predictor.
    /// The ablations zero weights of the full model and keep its other
    /// switches.
    pub fn config(self, h: &Hyper, lambda_rel: f64, lambda_rev: f64) -> Option<VariantConfig> {
        let l = h.lambda;
        Some(match self {
            Variant::Mean => return None,
            Variant::Pmf => VariantConfig::pmf(l),
            Variant::Hft => VariantConfig::hft(l, h.hft_lambda_rev),
            Variant::Locabal => VariantConfig::locabal(l, h.social_lambda_rel),
            Variant::Esmf => VariantConfig::esmf(l, h.social_lambda_rel),
            Variant::Mr3 => VariantConfig::mr3(l, lambda_rel, lambda_rev),
            Variant::Mr3NoContent => VariantConfig::mr3(l, lambda_rel, 0.0),
            Variant::Mr3NoSocial => VariantConfig::mr3(l, 0.0, lambda_rev),
            Variant::Mr3NoContentSocial => VariantConfig::mr3(l, 0.0, 0.0),
        })
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('/', "\\");
        Variant::ALL
            .into_iter()
            .find(|v| v.name().to_ascii_lowercase() == norm)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!(
                    "unknown variant {s:?} (expected one of {})",
                    names.join(", ")
                ))
            })
    }
}

/// Fixed hyperparameters of the baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub lambda: f64,
    /// λ_rev of HFT.
    pub hft_lambda_rev: f64,
    /// λ_rel of LOCABAL and eSMF.
    pub social_lambda_rel: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lambda: 0.5,
            hft_lambda_rev: 0.1,
            social_lambda_rel: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// Output of `ingest`.
    Binary(PathBuf),
    Raw {
        ratings: PathBuf,
        relations: Option<PathBuf>,
        stoplist: Option<PathBuf>,
        vocab_size: usize,
        prune: bool,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Binary(p) => Dataset::load(p),
            DataSource::Raw {
                ratings,
                relations,
                stoplist,
                vocab_size,
                prune,
            } => {
                let mut raw = ingest::read_raw(ratings, relations.as_deref())?;
                raw.dedup_ratings();
                if *prune {
                    raw = ingest::prune_rare(&raw)?;
                }
                ingest::assemble(
                    &raw,
                    *vocab_size,
                    &ingest::load_stoplist(stoplist.as_deref())?,
                )
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub train_percents: Vec<u32>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub factors: Vec<usize>,
    /// Swept for the MR3 family only.
    pub lambda_rel: Vec<f64>,
    pub lambda_rev: Vec<f64>,
    pub hyper: Hyper,
    /// Optimiser settings shared by every cell. Its factor count, seed and
    /// variant are overwritten per cell.
    pub train: TrainConfig,
    pub out_dir: PathBuf,
    /// Worker threads; `Some(1)` runs everything sequentially.
    pub threads: Option<usize>,
}

pub const SPEC_KEYS: &[&str] = &[
    "dataset",
    "ratings",
    "relations",
    "stoplist",
    "vocab_size",
    "prune",
    "train_percent",
    "seeds",
    "variants",
    "factors",
    "lambda",
    "lambda_rel",
    "lambda_rev",
    "hft_lambda_rev",
    "social_lambda_rel",
    "learning_rate",
    "momentum",
    "passes",
    "epochs_per_pass",
    "lr_policy",
    "init_std",
    "out",
    "threads",
];

impl ExperimentSpec {
    /// Relative paths are resolved against `base_dir`.
    pub fn from_key_values(kv: &KeyValues, base_dir: &Path) -> Result<Self> {
        kv.reject_unknown(SPEC_KEYS)?;
        let path = |key: &str| kv.raw(key).map(|p| base_dir.join(p));
        let source = match (path("dataset"), path("ratings")) {
            (Some(d), None) => DataSource::Binary(d),
            (None, Some(r)) => DataSource::Raw {
                ratings: r,
                relations: path("relations"),
                stoplist: path("stoplist"),
                vocab_size: kv.get_or("vocab_size", ingest::DEFAULT_VOCAB_SIZE)?,
                prune: kv.get_or("prune", true)?,
            },
            _ => {
                return Err(Error::InvalidArgument(
                    "specify exactly one of `dataset` (ingested) or `ratings` (raw tsv)".into(),
                ))
            }
        };
        let d = TrainConfig::default();
        let dh = Hyper::default();
        let train = TrainConfig {
            learning_rate: kv.get_or("learning_rate", d.learning_rate)?,
            momentum: kv.get_or("momentum", d.momentum)?,
            passes: kv.get_or("passes", d.passes)?,
            epochs_per_pass: kv.get_or("epochs_per_pass", d.epochs_per_pass)?,
            lr_policy: kv.get_or::<LrPolicy>("lr_policy", d.lr_policy)?,
            init_std: kv.get_or("init_std", d.init_std)?,
            ..d
        };
        let spec = ExperimentSpec {
            source,
            train_percents: kv.get_list("train_percent")?.unwrap_or_else(|| vec![80]),
            seeds: kv.get_list("seeds")?.unwrap_or_else(|| vec![1]),
            variants: kv.get_list("variants")?.unwrap_or_else(|| {
                vec![
                    Variant::Mean,
                    Variant::Pmf,
                    Variant::Hft,
                    Variant::Locabal,
                    Variant::Esmf,
                    Variant::Mr3,
                ]
            }),
            factors: kv.get_list("factors")?.unwrap_or_else(|| vec![d.n_factors]),
            lambda_rel: kv
                .get_list("lambda_rel")?
                .unwrap_or_else(|| vec![d.variant.lambda_rel]),
            lambda_rev: kv
                .get_list("lambda_rev")?
                .unwrap_or_else(|| vec![d.variant.lambda_rev]),
            hyper: Hyper {
                lambda: kv.get_or("lambda", dh.lambda)?,
                hft_lambda_rev: kv.get_or("hft_lambda_rev", dh.hft_lambda_rev)?,
                social_lambda_rel: kv.get_or("social_lambda_rel", dh.social_lambda_rel)?,
            },
            train,
            out_dir: path("out").unwrap_or_else(|| base_dir.join("report")),
            threads: kv.get("threads")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kv = KeyValues::load(path)?;
        Self::from_key_values(&kv, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.variants.is_empty() {
            return bad("at least one variant is required");
        }
        if self.train_percents.is_empty()
            || self.train_percents.iter().any(|p| !(1..=99).contains(p))
        {
            return bad("train_percent values must lie in [1, 99]");
        }
        if self.seeds.is_empty()
            || self.factors.is_empty()
            || self.lambda_rel.is_empty()
            || self.lambda_rev.is_empty()
        {
            return bad("seeds, factors, lambda_rel and lambda_rev need at least one value");
        }
        if self.factors.contains(&0) {
            return bad("factors must be at least 1");
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1");
        }
        self.train.validate()
    }

    /// Every cell of the grid, in a fixed order, without duplicates.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for &train_percent in &self.train_percents {
            for &seed in &self.seeds {
                for &variant in &self.variants {
                    let settings: Vec<(usize, f64, f64)> = if variant == Variant::Mean {
                        vec![(0, 0.0, 0.0)]
                    } else {
                        let mut s = Vec::new();
                        for &f in &self.factors {
                            if variant.is_mr3_family() {
                                for &rel in &self.lambda_rel {
                                    for &rev in &self.lambda_rev {
                                        let c = variant.config(&self.hyper, rel, rev).unwrap();
                                        s.push((f, c.lambda_rel, c.lambda_rev));
                                    }
                                }
                            } else {
                                let c = variant.config(&self.hyper, 0.0, 0.0).unwrap();
                                s.push((f, c.lambda_rel, c.lambda_rev));
                            }
                        }
                        s
                    };
                    for (factors, lambda_rel, lambda_rev) in settings {
                        let key = CellKey {
                            variant,
                            train_percent,
                            seed,
                            factors,
                            lambda_rel,
                            lambda_rev,
                        };
                        if seen.insert(key.identity()) {
                            out.push(key);
                        }
                    }
                }
            }
        }
        out
    }

    /// Training configuration of a cell, or `None` for the mean predictor.
    pub fn train_config(&self, key: &CellKey) -> Option<TrainConfig> {
        let mut variant = key
            .variant
            .config(&self.hyper, key.lambda_rel, key.lambda_rev)?;
        variant.lambda_rel = key.lambda_rel;
        variant.lambda_rev = key.lambda_rev;
        Some(TrainConfig {
            n_factors: key.factors,
            seed: key.seed,
            sampling_seed: None,
            variant,
            ..self.train.clone()
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub variant: Variant,
    pub train_percent: u32,
    pub seed: u64,
    /// 0 for the mean predictor.
    pub factors: usize,
    /// Effective weights after the variant's own settings.
    pub lambda_rel: f64,
    pub lambda_rev: f64,
}

impl CellKey {
    fn identity(&self) -> (Variant, u32, u64, usize, u64, u64) {
        (
            self.variant,
            self.train_percent,
            self.seed,
            self.factors,
            self.lambda_rel.to_bits(),
            self.lambda_rev.to_bits(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub key: CellKey,
    pub outcome: std::result::Result<CellScores, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellScores {
    /// Lowest per-pass test RMSE.
    pub best_rmse: f64,
    /// 1-based pass of `best_rmse`; 0 for the mean predictor.
    pub best_pass: usize,
    /// Test RMSE of the parameters with the lowest training objective.
    pub selected_rmse: f64,
    /// Test RMSE after the final pass.
    pub final_rmse: f64,
    /// Test RMSE after each pass.
    pub curve: Vec<f64>,
}

struct TestCurve<'a> {
    train: &'a SparseRatings,
    test: &'a SparseRatings,
    curve: Vec<f64>,
}

impl TrainObserver for TestCurve<'_> {
    fn on_pass(&mut self, _pass: usize, params: &ModelParams) {
        let model = FittedModel::new(params.clone(), self.train);
        self.curve.push(rmse(&model, self.test).unwrap_or(f64::NAN));
    }
}

/// Trains and scores one cell on a prepared split.
pub fn run_cell(
    spec: &ExperimentSpec,
    key: &CellKey,
    data: &TrainingSet,
    train: &SparseRatings,
    test: &SparseRatings,
) -> Result<CellScores> {
    let Some(config) = spec.train_config(key) else {
        let r = rmse(&FittedModel::mean_only(train, data.mu()), test)?;
        return Ok(CellScores {
            best_rmse: r,
            best_pass: 0,
            selected_rmse: r,
            final_rmse: r,
            curve: vec![r],
        });
    };
    let mut obs = TestCurve {
        train,
        test,
        curve: Vec::new(),
    };
    let out = train_with(data, &config, &mut obs)?;
    let (best_pass, best_rmse) =
        obs.curve
            .iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (p, r)| if r < acc.1 { (p + 1, r) } else { acc },
            );
    Ok(CellScores {
        best_rmse,
        best_pass,
        selected_rmse: rmse(&FittedModel::new(out.best, train), test)?,
        final_rmse: *obs.curve.last().unwrap_or(&f64::NAN),
        curve: obs.curve,
    })
}

/// Runs every cell of `spec` on `ds`. Failed cells are recorded, not fatal.
pub fn run(spec: &ExperimentSpec, ds: &Dataset) -> Result<Vec<CellResult>> {
    spec.validate()?;
    let work = || -> Result<Vec<CellResult>> {
        let mut splits = BTreeMap::new();
        for &p in &spec.train_percents {
            for &s in &spec.seeds {
                let (train, test) = split(&ds.ratings, p, s)?;
                let data = training_set(ds, &train)?;
                splits.insert((p, s), (train, test, data));
            }
        }
        Ok(spec
            .cells()
            .into_par_iter()
            .map(|key| {
                let (train, test, data) = &splits[&(key.train_percent, key.seed)];
                CellResult {
                    key,
                    outcome: run_cell(spec, &key, data, train, test).map_err(|e| e.to_string()),
                }
            })
            .collect())
    };
    match spec.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(work),
        None => work(),
    }
}

/// Mean of best test RMSE over seeds, per (variant, split, F, λ_rel, λ_rev).
/// Settings with any failed seed are left out.
fn seed_means(results: &[CellResult]) -> BTreeMap<(Variant, u32, usize, u64, u64), f64> {
    let mut acc: BTreeMap<_, (f64, usize, bool)> = BTreeMap::new();
    for r in results {
        let k = r.key;
        let e = acc
            .entry((
                k.variant,
                k.train_percent,
                k.factors,
                k.lambda_rel.to_bits(),
                k.lambda_rev.to_bits(),
            ))
            .or_insert((0.0, 0, true));
        match &r.outcome {
            Ok(s) => {
                e.0 += s.best_rmse;
                e.1 += 1;
            }
            Err(_) => e.2 = false,
        }
    }
    acc.into_iter()
        .filter(|(_, (_, n, ok))| *ok && *n > 0)
        .map(|(k, (s, n, _))| (k, s / n as f64))
        .collect()
}

/// Best (over hyperparameter settings) seed-averaged RMSE per split and
/// variant, as in a grid-searched comparison table.
pub fn comparison(results: &[CellResult]) -> BTreeMap<(u32, Variant), f64> {
    let mut out: BTreeMap<(u32, Variant), f64> = BTreeMap::new();
    for ((v, p, ..), r) in seed_means(results) {
        let e = out.entry((p, v)).or_insert(f64::INFINITY);
        *e = e.min(r);
    }
    out
}

/// `(baseline − mr3) / mr3`, the convention of the published table.
pub fn improvement_over_mr3(baseline: f64, mr3: f64) -> f64 {
    (baseline - mr3) / mr3
}

/// `(baseline − mr3) / baseline`, relative to the baseline's error.
pub fn improvement_over_baseline(baseline: f64, mr3: f64) -> f64 {
    (baseline - mr3) / baseline
}

fn fmt_f(x: f64) -> String {
    format!("{x:.4}")
}

fn write_cells(results: &[CellResult]) -> String {
    let mut s = String::from(
        "variant\ttrain_percent\tseed\tfactors\tlambda_rel\tlambda_rev\tbest_rmse\tbest_pass\tselected_rmse\tfinal_rmse\tstatus\n",
    );
    for r in results {
        let k = &r.key;
        let _ = write!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t",
            k.variant, k.train_percent, k.seed, k.factors, k.lambda_rel, k.lambda_rev
        );
        match &r.outcome {
            Ok(c) => {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\tok",
                    c.best_rmse, c.best_pass, c.selected_rmse, c.final_rmse
                );
            }
            Err(e) => {
                let _ = writeln!(s, "\t\t\t\tfailed: {}", e.replace(['\t', '\n'], " "));
            }
        }
    }
    s
}

fn write_curves(results: &[CellResult]) -> String {
    let mut s = String::from(
        "variant\ttrain_percent\tseed\tfactors\tlambda_rel\tlambda_rev\tpass\ttest_rmse\n",
    );
    for r in results {
        let k = &r.key;
        if let Ok(c) = &r.outcome {
            for (p, v) in c.curve.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    k.variant,
                    k.train_percent,
                    k.seed,
                    k.factors,
                    k.lambda_rel,
                    k.lambda_rev,
                    p + 1,
                    v
                );
            }
        }
    }
    s
}

/// Comparison table as TSV and as aligned text.
pub fn render_table(spec: &ExperimentSpec, results: &[CellResult]) -> (String, String) {
    let table = comparison(results);
    let baselines: Vec<Variant> = spec
        .variants
        .iter()
        .copied()
        .filter(|&v| v != Variant::Mr3 && spec.variants.contains(&Variant::Mr3))
        .collect();
    let mut header: Vec<String> = vec!["train_percent".into()];
    header.extend(spec.variants.iter().map(|v| v.name().to_string()));
    for b in &baselines {
        header.push(format!("vs_{}_over_mr3", b.name()));
        header.push(format!("vs_{}_over_baseline", b.name()));
    }
    let mut rows: Vec<Vec<String>> = Vec::new();
    for &p in &spec.train_percents {
        let mut row = vec![format!("{p}%")];
        for v in &spec.variants {
            row.push(table.get(&(p, *v)).map_or("-".into(), |&x| fmt_f(x)));
        }
        let mr3 = table.get(&(p, Variant::Mr3)).copied();
        for b in &baselines {
            match (table.get(&(p, *b)), mr3) {
                (Some(&base), Some(m)) => {
                    row.push(format!("{:.2}%", 100.0 * improvement_over_mr3(base, m)));
                    row.push(format!(
                        "{:.2}%",
                        100.0 * improvement_over_baseline(base, m)
                    ));
                }
                _ => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        rows.push(row);
    }

    let mut tsv = header.join("\t");
    tsv.push('\n');
    for r in &rows {
        tsv.push_str(&r.join("\t"));
        tsv.push('\n');
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut txt = String::from(
        "Test RMSE: best over passes, mean over seeds, best over hyperparameter settings.\n",
    );
    let line = |cells: &[String]| -> String {
        let mut l = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect::<Vec<_>>()
            .join("  ");
        l.push('\n');
        l
    };
    txt.push_str(&line(&header));
    for r in &rows {
        txt.push_str(&line(r));
    }
    if !baselines.is_empty() {
        txt.push_str(
            "\nvs_X_over_mr3 = (X - MR3) / MR3, the convention of the published comparison table.\n\
             vs_X_over_baseline = (X - MR3) / X. The two differ; both are shown.\n",
        );
    }
    let failed = results.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        let _ = writeln!(txt, "\n{failed} cell(s) failed; see cells.tsv.");
    }
    (tsv, txt)
}

/// gnuplot data for the sensitivity axes of MR3, one block per split.
fn render_sweeps(spec: &ExperimentSpec, results: &[CellResult]) -> Vec<(String, String)> {
    let means = seed_means(results);
    let mut files = Vec::new();
    if spec.factors.len() > 1 {
        let mut s = String::from("# factors\ttest_rmse (one block per train_percent)\n");
        for &p in &spec.train_percents {
            let _ = writeln!(s, "# train_percent {p}");
            for &f in &spec.factors {
                let best = means
                    .iter()
                    .filter(|((v, pp, ff, ..), _)| *v == Variant::Mr3 && *pp == p && *ff == f)
                    .map(|(_, &r)| r)
                    .fold(f64::INFINITY, f64::min);
                if best.is_finite() {
                    let _ = writeln!(s, "{f}\t{best}");
                }
            }
            s.push_str("\n\n");
        }
        files.push(("sweep_factors.dat".to_string(), s));
    }
    if spec.lambda_rel.len() > 1 || spec.lambda_rev.len() > 1 {
        let mut s = String::from(
            "# lambda_rel\tlambda_rev\ttest_rmse (one block per train_percent and factors)\n",
        );
        for &p in &spec.train_percents {
            for &f in &spec.factors {
                let _ = writeln!(s, "# train_percent {p} factors {f}");
                for &rel in &spec.lambda_rel {
                    for &rev in &spec.lambda_rev {
                        if let Some(r) =
                            means.get(&(Variant::Mr3, p, f, rel.to_bits(), rev.to_bits()))
                        {
                            let _ = writeln!(s, "{rel}\t{rev}\t{r}");
                        }
                    }
                    s.push('\n');
                }
                s.push('\n');
            }
        }
        files.push(("sweep_lambda.dat".to_string(), s));
    }
    files
}

/// Writes `cells.tsv`, `curves.tsv`, `table.tsv`, `table.txt` and any sweep
/// `.dat` files into `dir`. Returns the aligned table.
pub fn write_report(spec: &ExperimentSpec, results: &[CellResult], dir: &Path) -> Result<String> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("cells.tsv"), write_cells(results))?;
    fs::write(dir.join("curves.tsv"), write_curves(results))?;
    let (tsv, txt) = render_table(spec, results);
    fs::write(dir.join("table.tsv"), tsv)?;
    fs::write(dir.join("table.txt"), &txt)?;
    for (name, body) in render_sweeps(spec, results) {
        fs::write(dir.join(name), body)?;
    }
    Ok(txt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Rating, SocialGraph};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn ratings(n: usize) -> SparseRatings {
        let triples = (0..n)
            .map(|k| Rating {
                user: k / 50,
                item: k % 50,
                value: (k % 5 + 1) as f64,
                doc_ref: None,
            })
            .collect();
        SparseRatings::new(n.div_ceil(50), 50, triples).unwrap()
    }

    #[test]
    fn split_counts() {
        let r = ratings(1000);
        let (train, test) = split(&r, 99, 3).unwrap();
        assert_eq!((train.len(), test.len()), (990, 10));
        let (train, test) = split(&r, 80, 3).unwrap();
        assert_eq!((train.len(), test.len()), (800, 200));
    }

    #[test]
    fn split_is_deterministic_and_a_partition() {
        let r = ratings(500);
        let a = split(&r, 50, 11).unwrap();
        assert_eq!(a, split(&r, 50, 11).unwrap());
        assert_ne!(a.0, split(&r, 50, 12).unwrap().0);
        let mut all: Vec<(usize, usize)> =
            a.0.triples()
                .iter()
                .chain(a.1.triples())
                .map(|t| (t.user, t.item))
                .collect();
        all.sort_unstable();
        let expected: Vec<_> = r.triples().iter().map(|t| (t.user, t.item)).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn split_rejects_empty_sides() {
        let r = ratings(10);
        assert!(matches!(
            split(&r, 1, 0),
            Err(Error::EmptyPartition("train"))
        ));
        assert!(matches!(
            split(&r, 99, 0),
            Err(Error::EmptyPartition("test"))
        ));
        assert!(split(&r, 0, 0).is_err());
        assert!(split(&r, 100, 0).is_err());
    }

    fn constant_model(n_users: usize, n_items: usize, value: f64) -> FittedModel {
        FittedModel {
            params: ModelParams::zeros(n_users, n_items, 1, 1, value),
            known_users: vec![true; n_users],
            known_items: vec![true; n_items],
        }
    }

    #[test]
    fn rmse_examples() {
        let triples = vec![
            Rating {
                user: 0,
                item: 0,
                value: 2.0,
                doc_ref: None,
            },
            Rating {
                user: 1,
                item: 1,
                value: 4.0,
                doc_ref: None,
            },
        ];
        let test = SparseRatings::new(2, 2, triples).unwrap();
        let m = constant_model(2, 2, 3.0);
        assert_eq!(rmse(&m, &test).unwrap(), 1.0);
        let mut exact = constant_model(2, 2, 0.0);
        exact.params.b_user[0] = 2.0;
        exact.params.b_user[1] = 4.0;
        assert_eq!(rmse(&exact, &test).unwrap(), 0.0);
        assert!(rmse(&m, &SparseRatings::new(2, 2, vec![]).unwrap()).is_err());
    }

    #[test]
    fn mean_baseline_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let normal = Normal::new(3.0, 1.0).unwrap();
        let mut triples = Vec::new();
        for k in 0..20_000 {
            triples.push(Rating {
                user: k / 100,
                item: k % 100,
                value: normal.sample(&mut rng),
                doc_ref: None,
            });
        }
        let all = SparseRatings::new(200, 100, triples).unwrap();
        let (train, test) = split(&all, 50, 4).unwrap();
        assert_eq!(test.len(), 10_000);
        let mu = train.triples().iter().map(|t| t.value).sum::<f64>() / train.len() as f64;
        let model = FittedModel::mean_only(&train, mu);
        let direct = (test
            .triples()
            .iter()
            .map(|t| (t.value - mu).powi(2))
            .sum::<f64>()
            / test.len() as f64)
            .sqrt();
        assert!((rmse(&model, &test).unwrap() - direct).abs() < 1e-12);
        // mean-only model equals prediction with all-zero factors
        let zero = FittedModel::new(ModelParams::zeros(200, 100, 3, 2, mu), &train);
        assert_eq!(rmse(&zero, &test).unwrap(), rmse(&model, &test).unwrap());
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(
            "mr3/content".parse::<Variant>().unwrap(),
            Variant::Mr3NoContent
        );
        assert!("SVD".parse::<Variant>().is_err());
    }

    #[test]
    fn ablations_zero_the_right_weights() {
        let h = Hyper::default();
        let c = Variant::Mr3NoContent.config(&h, 0.001, 0.05).unwrap();
        assert_eq!((c.lambda_rel, c.lambda_rev), (0.001, 0.0));
        let s = Variant::Mr3NoSocial.config(&h, 0.001, 0.05).unwrap();
        assert_eq!((s.lambda_rel, s.lambda_rev), (0.0, 0.05));
        let b = Variant::Mr3NoContentSocial.config(&h, 0.001, 0.05).unwrap();
        assert_eq!((b.lambda_rel, b.lambda_rev), (0.0, 0.0));
        assert_eq!(Variant::Hft.config(&h, 9.0, 9.0).unwrap().lambda_rev, 0.1);
        assert_eq!(Variant::Esmf.config(&h, 9.0, 9.0).unwrap().lambda_rel, 0.1);
        assert!(Variant::Mean.config(&h, 0.0, 0.0).is_none());
    }

    #[test]
    fn improvement_conventions() {
        // published 80% row: PMF 1.1502, MR3 1.0648
        assert!((100.0 * improvement_over_mr3(1.1502, 1.0648) - 8.02).abs() < 0.005);
        assert!((100.0 * improvement_over_baseline(1.1502, 1.0648) - 7.42).abs() < 0.005);
    }

    fn spec_from(text: &str) -> Result<ExperimentSpec> {
        let kv = KeyValues::parse(text, Path::new("spec.conf"))?;
        ExperimentSpec::from_key_values(&kv, Path::new("/data"))
    }

    #[test]
    fn spec_parsing_and_cells() {
        let spec = spec_from(
            "ratings = r.tsv\nvariants = Mean, PMF, MR3, MR3\\content\nseeds = 1,2\nfactors = 5,10\nlambda_rev = 0.05, 0.1\n",
        )
        .unwrap();
        assert!(
            matches!(&spec.source, DataSource::Raw { ratings, .. } if ratings == Path::new("/data/r.tsv"))
        );
        let cells = spec.cells();
        // per seed: Mean 1, PMF 2, MR3 2×2, MR3\content 2 (λ_rev sweep collapses)
        assert_eq!(cells.len(), 2 * (1 + 2 + 4 + 2));
        let cfg = spec.train_config(&cells[1]).unwrap();
        assert_eq!(cfg.variant, VariantConfig::pmf(0.5));
        assert_eq!(cfg.n_factors, 5);
        assert!(spec_from("ratings = r\nvariants =").is_err());
        assert!(spec_from("ratings = r\ntrain_percent = 100").is_err());
        assert!(spec_from("dataset = a\nratings = b").is_err());
        assert!(spec_from("ratings = r\nbogus = 1").is_err());
    }

    fn toy_dataset(seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n_users, n_items) = (30, 40);
        let mut triples = Vec::new();
        let mut reviews = Vec::new();
        for i in 0..n_users {
            for j in 0..n_items {
                if rng.random_bool(0.3) {
                    reviews.push((0..5).map(|_| rng.random_range(0..10u32)).collect());
                    triples.push(Rating {
                        user: i,
                        item: j,
                        value: rng.random_range(1..=5) as f64,
                        doc_ref: Some(reviews.len() - 1),
                    });
                }
            }
        }
        let edges = (0..n_users).map(|i| (i, (i + 1) % n_users)).collect();
        Dataset {
            ratings: SparseRatings::new(n_users, n_items, triples).unwrap(),
            reviews,
            graph: SocialGraph::new(n_users, edges).unwrap(),
            vocab: (0..10).map(|w| format!("w{w}")).collect(),
            user_keys: (0..n_users).map(|i| format!("u{i}")).collect(),
            item_keys: (0..n_items).map(|j| format!("i{j}")).collect(),
        }
    }

    #[test]
    fn run_is_reproducible_and_writes_report() {
        let ds = toy_dataset(1);
        let mut spec = spec_from(
            "dataset = unused\nvariants = Mean,PMF,HFT,eSMF,MR3\nseeds = 1,2\nfactors = 2,3\npasses = 3\nlearning_rate = 0.01\ntrain_percent = 70",
        )
        .unwrap();
        spec.threads = Some(1);
        let a = run(&spec, &ds).unwrap();
        spec.threads = None;
        let b = run(&spec, &ds).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.outcome.is_ok()));
        let mean = a.iter().find(|r| r.key.variant == Variant::Mean).unwrap();
        let scores = mean.outcome.as_ref().unwrap();
        assert_eq!(scores.best_pass, 0);
        let pmf = a
            .iter()
            .find(|r| r.key.variant == Variant::Pmf)
            .unwrap()
            .outcome
            .as_ref()
            .unwrap();
        assert_eq!(pmf.curve.len(), 3);
        assert_eq!(
            pmf.best_rmse,
            pmf.curve.iter().copied().fold(f64::INFINITY, f64::min)
        );

        let dir = tempfile::tempdir().unwrap();
        let txt = write_report(&spec, &a, dir.path()).unwrap();
        assert!(txt.contains("vs_PMF_over_mr3"));
        for f in [
            "cells.tsv",
            "curves.tsv",
            "table.tsv",
            "table.txt",
            "sweep_factors.dat",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let cells = fs::read_to_string(dir.path().join("cells.tsv")).unwrap();
        assert_eq!(cells.lines().count(), 1 + a.len());
    }

    #[test]
    fn failed_cells_are_recorded() {
        let ds = toy_dataset(2);
        let mut spec = spec_from("dataset = unused\nvariants = Mean,PMF\npasses = 2\nlearning_rate = 100\nlr_policy = fixed").unwrap();
        spec.threads = Some(1);
        let res = run(&spec, &ds).unwrap();
        assert!(res
            .iter()
            .find(|r| r.key.variant == Variant::Mean)
            .unwrap()
            .outcome
            .is_ok());
        let pmf = res.iter().find(|r| r.key.variant == Variant::Pmf).unwrap();
        assert!(pmf.outcome.as_ref().unwrap_err().contains("divergence"));
        let (_, txt) = render_table(&spec, &res);
        assert!(txt.contains("1 cell(s) failed"));
    }
}
