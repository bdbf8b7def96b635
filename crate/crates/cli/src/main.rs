//! `crossmedia` command line: synthetic data, training, embedding,
//! retrieval, evaluation and constraint ablation.

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use crossmedia::config::RunConfig;
use crossmedia::eval::{ablation_table, full_report, AblationRow};
use crossmedia::manifest::{materialize, Manifest};
use crossmedia::objective::TermMask;
use crossmedia::pipeline::{self, encode_dataset, encode_with, infer_classes, load_bundle, save_bundle};
use crossmedia::retrieval::{embed_items, EmbeddingStore, Index, RetrievalTask};
use crossmedia::synth::{generate, SynthSpec};
use crossmedia::train::{write_log_csv, Trainer};
use crossmedia::{ErrorKind, MediaInstance};

#[derive(Parser)]
#[command(name = "crossmedia", version, about = "Cross-media retrieval engine")]
struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.learning_rate=0.01`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with training and test manifests.
    Synth {
        /// Output directory [default: <data root>/synth].
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        classes: Option<usize>,
        /// Training instances per media type and class.
        #[arg(long)]
        per_class: Option<usize>,
        /// Test instances per media type and class.
        #[arg(long, default_value_t = 20)]
        test_per_class: usize,
    },
    /// Train on a manifest and write a checkpoint, state file and CSV log.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Training manifest [default: data.manifest].
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Continue from a state file written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop once this many epochs in total are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Embed a manifest with a trained checkpoint.
    Embed {
        #[arg(long)]
        model: PathBuf,
        /// [default: data.test_manifest, else data.manifest]
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank candidates for one query.
    Retrieve {
        #[arg(long)]
        store: PathBuf,
        /// Task such as I2T or V2All.
        #[arg(long)]
        task: String,
        /// Query id [default: first record of the query media].
        #[arg(long)]
        query: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// MAP report over all sixteen tasks.
    Eval {
        #[arg(long)]
        store: PathBuf,
        /// Directory for report.csv and per_query.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train cls, cls+cen and cls+cen+rank variants and compare them.
    Ablate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        test_manifest: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 configuration, 3 data, 4 numerical, 1 anything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<crossmedia::Error>()).map(|e| e.kind()) {
        Some(ErrorKind::Config) => 2,
        Some(ErrorKind::Data) => 3,
        Some(ErrorKind::Numerical) => 4,
        None => 1,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(base.with_overrides(&cli.overrides)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Synth {
            out,
            seed,
            classes,
            per_class,
            test_per_class,
        } => cmd_synth(&cfg, out, seed, classes, per_class, test_per_class),
        Command::Train {
            out,
            manifest,
            resume,
            stop_after,
        } => cmd_train(&cfg, &out, manifest, resume, stop_after),
        Command::Embed { model, manifest, out } => cmd_embed(&cfg, &model, manifest, &out),
        Command::Retrieve { store, task, query, k } => cmd_retrieve(&store, &task, query.as_deref(), k),
        Command::Eval { store, out } => cmd_eval(&store, out.as_deref()),
        Command::Ablate {
            out,
            manifest,
            test_manifest,
        } => cmd_ablate(&cfg, &out, manifest, test_manifest),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
}

fn cmd_synth(
    cfg: &RunConfig,
    out: Option<PathBuf>,
    seed: Option<u64>,
    classes: Option<usize>,
    per_class: Option<usize>,
    test_per_class: usize,
) -> Result<()> {
    let mut spec = cfg.synth.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(c) = classes {
        spec.classes = c;
    }
    if let Some(n) = per_class {
        spec.per_media_per_class = n;
    }
    spec.validate()?;
    if spec.classes < 3 {
        log::warn!(
            "{} classes: quadruplet sampling needs at least 3, so all-media training stages will be infeasible",
            spec.classes
        );
        eprintln!("warning: quadruplet sampler will be infeasible with fewer than 3 classes");
    }
    let dir = out.unwrap_or_else(|| cfg.data.resolve(Path::new("synth")));
    create_dir(&dir)?;
    let train = generate(&spec)?;
    let manifest = materialize(&train, &dir.join("train"))?;
    let rebased = rebase(manifest, &dir, "train");
    rebased.save(&dir.join("manifest.tsv"))?;
    if test_per_class > 0 {
        let test_spec = SynthSpec {
            per_media_per_class: test_per_class,
            instance_seed: spec.instance_seed.wrapping_add(1),
            ..spec.clone()
        };
        let test = generate(&test_spec)?;
        let manifest = materialize(&test, &dir.join("test"))?;
        rebase(manifest, &dir, "test").save(&dir.join("test.tsv"))?;
    }
    fs::write(dir.join("synth.toml"), toml::to_string_pretty(&spec)?)?;
    println!(
        "wrote {} training instances to {}",
        train.len(),
        dir.join("manifest.tsv").display()
    );
    if test_per_class > 0 {
        println!("test manifest: {}", dir.join("test.tsv").display());
    }
    Ok(())
}

/// Prefixes entry paths with `sub` so the manifest can live in `base`.
fn rebase(mut m: Manifest, base: &Path, sub: &str) -> Manifest {
    for e in &mut m.entries {
        e.path = Path::new(sub).join(&e.path);
    }
    m.base = base.to_path_buf();
    m
}

fn load_manifest(cfg: &RunConfig, path: &Path) -> Result<Vec<MediaInstance>> {
    let path = cfg.data.resolve(path);
    let manifest = Manifest::load(&path).with_context(|| format!("reading manifest {}", path.display()))?;
    let (instances, failed) = manifest.load_instances();
    for (id, e) in &failed {
        log::warn!("skipping `{id}`: {e}");
    }
    if !failed.is_empty() {
        eprintln!("warning: {} of {} entries could not be loaded", failed.len(), manifest.entries.len());
    }
    if instances.is_empty() {
        return Err(crossmedia::Error::Format(format!("{}: no loadable instances", path.display())).into());
    }
    Ok(instances)
}

fn cmd_train(
    cfg: &RunConfig,
    out: &Path,
    manifest: Option<PathBuf>,
    resume: Option<PathBuf>,
    stop_after: Option<usize>,
) -> Result<()> {
    create_dir(out)?;
    let instances = load_manifest(cfg, manifest.as_deref().unwrap_or(&cfg.data.manifest))?;
    let classes = cfg.data.classes.unwrap_or_else(|| infer_classes(&instances));
    for i in &instances {
        i.validate(classes)?;
    }
    let data = encode_dataset(cfg, &instances)?;
    let mut trainer = match &resume {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            Trainer::resume(cfg.train.clone(), cfg.objective, &data.items, &mut BufReader::new(f))?
        }
        None => {
            let model = pipeline::new_model(cfg, classes, &data.encoder)?;
            Trainer::new(cfg.train.clone(), cfg.objective, model, &data.items)?
        }
    };
    let log_path = out.join("train_log.csv");
    let mut log_file = if resume.is_some() && log_path.exists() {
        OpenOptions::new().append(true).open(&log_path)?
    } else {
        let mut f = File::create(&log_path)?;
        write_log_csv(&mut f, &[], true)?;
        f
    };
    let cadence = cfg.train.checkpoint_every;
    let limit = stop_after.unwrap_or(usize::MAX);
    let result = trainer.run_until(limit, |t, rows| {
        write_log_csv(&mut log_file, rows, false)?;
        let epoch = t.state().epoch;
        if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
            log::info!(
                "epoch {} [{}] lr {} loss {:.4}",
                epoch - 1,
                first.stage,
                first.lr,
                last.loss.total
            );
        }
        if cadence > 0 && epoch % cadence == 0 {
            save_state(t, &out.join(format!("state_epoch{epoch:03}.bin")))?;
        }
        Ok(())
    });
    if let Err(e) = result {
        if e.kind() == ErrorKind::Numerical {
            let snap = out.join("nan_snapshot.bin");
            save_state(&trainer, &snap)?;
            eprintln!("state before the failing step saved to {}", snap.display());
        }
        return Err(e.into());
    }
    save_state(&trainer, &out.join("state.bin"))?;
    save_bundle(&out.join("model.ckpt"), &trainer.state().model, &data.encoder)?;
    let state = trainer.state();
    println!(
        "epochs {}/{} steps {} digest {}",
        state.epoch,
        cfg.train.total_epochs(),
        state.step,
        state.digest()
    );
    Ok(())
}

fn save_state(t: &Trainer<'_>, path: &Path) -> crossmedia::Result<()> {
    let f = File::create(path).map_err(|e| crossmedia::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut w = std::io::BufWriter::new(f);
    t.save_state(&mut w)?;
    w.flush()?;
    Ok(())
}

fn eval_manifest(cfg: &RunConfig, explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| cfg.data.test_manifest.clone())
        .unwrap_or_else(|| cfg.data.manifest.clone())
}

fn cmd_embed(cfg: &RunConfig, model: &Path, manifest: Option<PathBuf>, out: &Path) -> Result<()> {
    let (model, encoder) = load_bundle(model).with_context(|| format!("loading {}", model.display()))?;
    let instances = load_manifest(cfg, &eval_manifest(cfg, manifest))?;
    let data = encode_with(encoder, &instances)?;
    let embedded = embed_items(&model, &data.items);
    let failures = data.failures.len() + embedded.failures.len();
    for (id, e) in &embedded.failures {
        log::warn!("no embedding for `{id}`: {e}");
    }
    if embedded.store.is_empty() {
        bail!(crossmedia::Error::Format("no instance could be embedded".into()));
    }
    embedded.store.save(out)?;
    println!(
        "embedded {} records ({} failed) into {}",
        embedded.store.len(),
        failures,
        out.display()
    );
    Ok(())
}

fn cmd_retrieve(store: &Path, task: &str, query: Option<&str>, k: usize) -> Result<()> {
    let task: RetrievalTask = task.parse()?;
    let store = EmbeddingStore::load(store)?;
    let index = Index::build(&store)?;
    let record = match query {
        Some(id) => store
            .records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| crossmedia::Error::Config(format!("no record with id `{id}`")))?,
        None => store
            .records
            .iter()
            .find(|r| r.media == task.query)
            .ok_or_else(|| crossmedia::Error::EmptyQuerySet(task.code()))?,
    };
    if record.media != task.query {
        return Err(anyhow!(crossmedia::Error::Config(format!(
            "`{}` is {}, task {} expects {} queries",
            record.id,
            record.media,
            task.code(),
            task.query
        ))));
    }
    let result = index.query(record, task)?;
    eprintln!("query {} (label {}), task {task}", record.id, record.label);
    for hit in result.hits.iter().take(k) {
        println!("{}\t{}\t{:.6}", hit.id, hit.label, hit.similarity);
    }
    Ok(())
}

fn cmd_eval(store: &Path, out: Option<&Path>) -> Result<()> {
    let store = EmbeddingStore::load(store)?;
    let report = full_report(&store)?;
    print!("{}", report.to_table());
    if let Some(dir) = out {
        create_dir(dir)?;
        fs::write(dir.join("report.csv"), report.to_csv())?;
        fs::write(dir.join("per_query.csv"), report.per_query_csv())?;
    }
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, out: &Path, manifest: Option<PathBuf>, test_manifest: Option<PathBuf>) -> Result<()> {
    create_dir(out)?;
    let train = load_manifest(cfg, manifest.as_deref().unwrap_or(&cfg.data.manifest))?;
    let test = load_manifest(cfg, &eval_manifest(cfg, test_manifest))?;
    let mut rows = Vec::new();
    let mut csv = String::from("variant,task,map\n");
    for mask in [TermMask::CLS, TermMask::CLS_CEN, TermMask::ALL] {
        let mut c = cfg.clone();
        c.train = cfg.train.with_terms(mask);
        log::info!("training variant {}", mask.label());
        let outcome = pipeline::run_experiment(&c, &train, &test)?;
        for (l, r) in &outcome.report.bi {
            let v = r.as_ref().map_or(String::new(), |r| r.map.to_string());
            csv += &format!("{},{},{v}\n", mask.label(), l.code);
        }
        let avg = outcome.report.bi_average.map_or(String::new(), |v| v.to_string());
        csv += &format!("{},average,{avg}\n", mask.label());
        rows.push(AblationRow {
            variant: mask.label(),
            report: outcome.report,
        });
    }
    let table = ablation_table(&rows, cfg.eval.min_gap);
    print!("{table}");
    fs::write(out.join("ablation.csv"), csv)?;
    fs::write(out.join("ablation.txt"), table)?;
    Ok(())
}
