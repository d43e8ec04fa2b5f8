use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mr3::checkpoint::Checkpoint;
use mr3::config::{self, KeyValues};
use mr3::dataset::Dataset;
use mr3::experiment::{self, ExperimentSpec};
use mr3::inference::{train_with, TrainObserver, TsvProgress};
use mr3::ingest::{self, Manifest};
use mr3::model::FittedModel;
use mr3::social::{PageRankOptions, SocialContext};
use mr3::synth::{self, SynthConfig};
use mr3::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "mr3",
    version,
    about = "Rating prediction from ratings, trust relations and reviews"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse tab-separated ratings/relations into a binary dataset and manifest.
    Ingest {
        #[arg(long)]
        ratings: PathBuf,
        #[arg(long)]
        relations: Option<PathBuf>,
        /// One stopword per line. Defaults to the bundled English list; pass an
        /// empty file to keep every word.
        #[arg(long)]
        stoplist: Option<PathBuf>,
        #[arg(long, default_value_t = ingest::DEFAULT_VOCAB_SIZE)]
        vocab_size: usize,
        /// Keep users and items with fewer than three ratings.
        #[arg(long)]
        no_prune: bool,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out>.manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Also write users.tsv (rank, weight) and edges.tsv (trust, similarity) here.
        #[arg(long)]
        social_tsv: Option<PathBuf>,
    },
    /// Fit a model and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// key = value file; see README for keys.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set factors=5`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Train on a random split instead of all ratings.
        #[arg(long)]
        train_percent: Option<u32>,
        #[arg(long, default_value_t = 1)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Print `pass epoch objective lr` per epoch.
        #[arg(long, short)]
        verbose: bool,
    },
    /// RMSE of a checkpoint on held-out ratings.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the split recorded in the checkpoint.
        #[arg(long)]
        train_percent: Option<u32>,
        #[arg(long)]
        split_seed: Option<u64>,
    },
    /// Run a comparison / ablation / sensitivity grid from a spec file.
    Experiment {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides `out` from the spec.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate a synthetic dataset in the ingestion format.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 300)]
        items: usize,
        #[arg(long, default_value_t = 5)]
        factors: usize,
        #[arg(long, default_value_t = 0.05)]
        density: f64,
        #[arg(long, default_value_t = 30)]
        tokens_per_item: usize,
        #[arg(long, default_value_t = 100)]
        vocab: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_divergence() => EXIT_DIVERGENCE,
        Error::InvalidArgument(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> mr3::Result<()> {
    match cmd {
        Command::Ingest {
            ratings,
            relations,
            stoplist,
            vocab_size,
            no_prune,
            out,
            manifest,
            social_tsv,
        } => {
            let mut raw = ingest::read_raw(&ratings, relations.as_deref())?;
            let dups = raw.dedup_ratings();
            if !no_prune {
                raw = ingest::prune_rare(&raw)?;
            }
            let stop = ingest::load_stoplist(stoplist.as_deref())?;
            let ds = ingest::assemble(&raw, vocab_size, &stop)?;
            ds.save(&out)?;
            let m = Manifest::describe(&ds, dups, !no_prune);
            let manifest = manifest.unwrap_or_else(|| with_suffix(&out, ".manifest.json"));
            std::fs::write(&manifest, m.to_json())?;
            if let Some(dir) = social_tsv {
                std::fs::create_dir_all(&dir)?;
                let ctx =
                    SocialContext::build(&ds.graph, &ds.ratings, &PageRankOptions::default())?;
                ctx.write_users_tsv(BufWriter::new(File::create(dir.join("users.tsv"))?))?;
                ctx.write_edges_tsv(
                    &ds.graph,
                    BufWriter::new(File::create(dir.join("edges.tsv"))?),
                )?;
            }
            println!("{}", m.to_json());
            Ok(())
        }
        Command::Train {
            data,
            config,
            overrides,
            train_percent,
            split_seed,
            out,
            verbose,
        } => {
            let mut kv = match &config {
                Some(p) => KeyValues::load(p)?,
                None => KeyValues::default(),
            };
            for o in &overrides {
                let (k, v) = o.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("--set expects KEY=VALUE, got {o:?}"))
                })?;
                kv.set(k.trim(), v.trim());
            }
            kv.reject_unknown(config::TRAIN_KEYS)?;
            let cfg = config::train_config(&kv)?;
            let ds = Dataset::load(&data)?;
            let train = match train_percent {
                Some(p) => experiment::split(&ds.ratings, p, split_seed)?.0,
                None => ds.ratings.clone(),
            };
            let set = experiment::training_set(&ds, &train)?;

            let mut progress = TsvProgress(io::stdout().lock());
            let mut quiet = ();
            let observer: &mut dyn TrainObserver = if verbose { &mut progress } else { &mut quiet };
            let outcome = match train_with(&set, &cfg, observer) {
                Ok(o) => o,
                Err(Error::Divergence {
                    pass,
                    epoch,
                    last_finite,
                }) => {
                    let path = with_suffix(&out, ".last-finite");
                    let ck = Checkpoint {
                        model: FittedModel::new(*last_finite, &train),
                        meta: BTreeMap::from([("status".to_string(), "diverged".to_string())]),
                    };
                    ck.save(&path)?;
                    eprintln!("last finite parameters written to {}", path.display());
                    return Err(Error::Divergence {
                        pass,
                        epoch,
                        last_finite: Box::new(ck.model.params),
                    });
                }
                Err(e) => return Err(e),
            };
            drop(progress);

            let mut meta: BTreeMap<String, String> = config::train_config_entries(&cfg)
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect();
            if let Some(p) = train_percent {
                meta.insert("train_percent".into(), p.to_string());
                meta.insert("split_seed".into(), split_seed.to_string());
            }
            meta.insert("best_objective".into(), outcome.best_objective.to_string());
            meta.insert("best_pass".into(), (outcome.best_at.0 + 1).to_string());
            let ck = Checkpoint {
                model: FittedModel::new(outcome.best, &train),
                meta,
            };
            ck.save(&out)?;
            eprintln!(
                "best objective {} at pass {}, epoch {}; checkpoint {}",
                outcome.best_objective,
                outcome.best_at.0 + 1,
                outcome.best_at.1 + 1,
                out.display()
            );
            Ok(())
        }
        Command::Eval {
            data,
            checkpoint,
            train_percent,
            split_seed,
        } => {
            let ds = Dataset::load(&data)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let p = ck.model.params.n_users();
            if p != ds.n_users() || ck.model.params.n_items() != ds.n_items() {
                return Err(Error::InvalidData(
                    "checkpoint dimensions do not match the dataset".into(),
                ));
            }
            let recorded = |k: &str| -> mr3::Result<Option<u64>> {
                ck.meta
                    .get(k)
                    .map(|v| {
                        v.parse()
                            .map_err(|_| Error::InvalidData(format!("bad {k} in checkpoint")))
                    })
                    .transpose()
            };
            let percent = match train_percent {
                Some(p) => Some(p),
                None => recorded("train_percent")?.map(|p| p as u32),
            };
            let (test, label) = match percent {
                Some(pc) => {
                    let seed = match split_seed {
                        Some(s) => s,
                        None => recorded("split_seed")?.unwrap_or(1),
                    };
                    (
                        experiment::split(&ds.ratings, pc, seed)?.1,
                        format!("test split ({pc}% train, seed {seed})"),
                    )
                }
                None => (ds.ratings.clone(), "all ratings".to_string()),
            };
            let r = experiment::rmse(&ck.model, &test)?;
            println!("rmse\t{r}\t{label}\t{} ratings", test.len());
            Ok(())
        }
        Command::Experiment { spec, out, threads } => {
            let mut s = ExperimentSpec::load(&spec)?;
            if let Some(o) = out {
                s.out_dir = o;
            }
            if threads.is_some() {
                s.threads = threads;
            }
            s.validate()?;
            let ds = s.source.load()?;
            let results = experiment::run(&s, &ds)?;
            let table = experiment::write_report(&s, &results, &s.out_dir)?;
            print!("{table}");
            Ok(())
        }
        Command::Synth {
            out,
            users,
            items,
            factors,
            density,
            tokens_per_item,
            vocab,
            seed,
        } => {
            let cfg = SynthConfig {
                n_users: users,
                n_items: items,
                n_factors: factors,
                density,
                tokens_per_item,
                vocab_len: vocab,
                seed,
                ..Default::default()
            };
            let d = synth::generate(&cfg)?;
            synth::write_tsv(&d.raw, &out)?;
            println!(
                "wrote {} ratings and {} relations to {}",
                d.raw.rating_records.len(),
                d.raw.relation_records.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
