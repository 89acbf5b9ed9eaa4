use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hipal::checkpoint::Container;
use hipal::config::KvConfig;
use hipal::embed::{pretrain_skipgram, ActionEmbedding, SkipGramConfig};
use hipal::encoders::Arch;
use hipal::harness::{
    compute_metrics, offset_evaluation, operating_point, risk_map, run_cv, CvConfig, FeatureConfig, Recipe, RunConfig,
    Target, Trained,
};
use hipal::hipal::{train_supervised, HiPALModel, SingleLevelModel, TrainConfig};
use hipal::logstore::{
    assemble_dataset, dataset_stats, group_by_participant, parse_events, parse_surveys, read_dataset_jsonl,
    write_dataset_jsonl, Dataset, EventFormat, MonthRecord, Vocabulary, DEFAULT_GAP_THRESHOLD,
};
use hipal::seqae::{pretrain_unsupervised, transfer_weights, SeqAEConfig, SeqAEModel};
use hipal::synthgen::{generate_dataset, write_outputs, GeneratorConfig};

/// Burnout prediction from clinician activity logs.
#[derive(Parser)]
#[command(name = "hipal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Line-oriented `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (`key=value`); repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed applied to every random stage.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DataArg {
    /// Assembled dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ModelArg {
    /// Trained model checkpoint.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct EmbeddingArgs {
    /// Pretrained action embedding.
    #[arg(long)]
    actions: Option<PathBuf>,
    /// Action vocabulary CSV.
    #[arg(long)]
    vocab: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Parse raw events and surveys into a dataset.
    Ingest {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        surveys: PathBuf,
        #[arg(long)]
        vocab_size: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a dataset as JSON.
    Stats {
        #[command(flatten)]
        data: DataArg,
        #[command(flatten)]
        common: Common,
    },
    /// Train action embeddings with skip-gram.
    PretrainEmbed {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Pretrain the sequence autoencoder on every shift.
    PretrainAe {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "c")]
        arch: String,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model on every labeled month.
    Train {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "hipal-c")]
        recipe: String,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        /// Pretrained autoencoder for the semi-supervised recipe.
        #[arg(long)]
        ae: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Grouped cross-validation of one recipe.
    Cv {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        recipe: String,
        #[command(flatten)]
        embedding: EmbeddingArgs,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Metrics of a trained model on labeled months.
    Eval {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        /// Report the operating point reaching this sensitivity.
        #[arg(long)]
        sensitivity: Option<f64>,
        /// Report the operating point reaching this specificity.
        #[arg(long)]
        specificity: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Monthly burnout probabilities.
    Predict {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// AUROC after removing the final days of each month.
    OffsetEval {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
        offsets: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Daily risk grid of one participant.
    Riskmap {
        #[command(flatten)]
        model: ModelArg,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        participant: String,
        #[arg(long)]
        out: PathBuf,
        /// Also render a heatmap.
        #[arg(long)]
        png: Option<PathBuf>,
        #[arg(long, default_value_t = 12)]
        cell: u32,
        #[command(flatten)]
        common: Common,
    },
}

const SEEDED_SECTIONS: [&str; 5] = ["gen", "train", "cv", "ae", "skipgram"];

fn load_config(common: &Common) -> Result<KvConfig> {
    let mut kv = match &common.config {
        Some(p) => KvConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => KvConfig::new(),
    };
    if let Some(seed) = common.seed {
        for s in SEEDED_SECTIONS {
            kv.set(&format!("{s}.seed"), seed.to_string());
        }
    }
    kv.apply_overrides(&common.overrides)?;
    Ok(kv)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_dataset_jsonl(BufReader::new(file)).with_context(|| format!("reading dataset {}", path.display()))
}

fn read_vocab(path: Option<&Path>, ds: &Dataset) -> Result<Vocabulary> {
    match path {
        Some(p) => {
            let v = Vocabulary::read_csv(File::open(p).with_context(|| format!("opening {}", p.display()))?)?;
            if v.len() != ds.vocab_size {
                bail!("vocabulary has {} actions but the dataset uses {}", v.len(), ds.vocab_size);
            }
            Ok(v)
        }
        None => Ok(Vocabulary::anonymous(ds.vocab_size)),
    }
}

fn run_config(kv: &KvConfig, emb: &EmbeddingArgs, ds: &Dataset) -> Result<RunConfig> {
    let vocab = read_vocab(emb.vocab.as_deref(), ds)?;
    let actions = emb.actions.as_deref().map(|p| ActionEmbedding::load(p, &vocab)).transpose()?;
    let mut run = RunConfig {
        model: kv.sub("model."),
        single: kv.sub("single."),
        train: TrainConfig::from_kv(&kv.sub("train."))?,
        actions,
        vocabulary: Some(vocab),
        ..Default::default()
    };
    kv.read_into("ae.epochs", &mut run.ae_epochs)?;
    kv.read_into("ae.batch_size", &mut run.ae_batch_size)?;
    kv.read_into("logreg.l2", &mut run.logreg_l2)?;
    kv.read_into("logreg.iterations", &mut run.logreg_iterations)?;
    kv.read_into("logreg.lr", &mut run.logreg_lr)?;
    run.features = feature_config(kv)?;
    Ok(run)
}

fn feature_config(kv: &KvConfig) -> Result<FeatureConfig> {
    let mut f = FeatureConfig::default();
    kv.read_into("features.tz_offset_seconds", &mut f.tz_offset_seconds)?;
    kv.read_into("features.work_start_hour", &mut f.work_start_hour)?;
    kv.read_into("features.work_end_hour", &mut f.work_end_hour)?;
    kv.read_into("features.entropy_bins", &mut f.entropy_bins)?;
    Ok(f)
}

fn parse_arch(s: &str) -> Result<Arch> {
    let recipe: Recipe = format!("hipal-{s}").parse()?;
    match recipe {
        Recipe::Hipal(a) => Ok(a),
        _ => bail!("unknown architecture {s}"),
    }
}

fn autoencoder_config(kv: &KvConfig, model: &HiPALModel) -> Result<SeqAEConfig> {
    let mut c = SeqAEConfig::new(model.cfg.vocab_size, model.cfg.embedding.clone(), model.cfg.encoder.clone());
    kv.read_into("ae.n_bins", &mut c.n_bins)?;
    kv.read_into("ae.epochs", &mut c.epochs)?;
    kv.read_into("ae.batch_size", &mut c.batch_size)?;
    kv.read_into("ae.lr", &mut c.learning_rate)?;
    kv.read_into("ae.seed", &mut c.seed)?;
    Ok(c)
}

fn pretrain_autoencoder(kv: &KvConfig, ds: &Dataset, model: &HiPALModel, actions: ActionEmbedding) -> Result<SeqAEModel> {
    let cfg = autoencoder_config(kv, model)?;
    let shifts: Vec<_> = ds.shifts().collect();
    let mut ae = SeqAEModel::for_corpus(&cfg, actions, &shifts)?;
    let events: Vec<_> = shifts.iter().map(|s| s.events()).collect();
    let losses = pretrain_unsupervised(&mut ae, &events)?;
    if let Some(l) = losses.last() {
        eprintln!("autoencoder: {} epochs, final loss {l:.4}", losses.len());
    }
    Ok(ae)
}

fn require_labels(ds: &Dataset) -> Result<Vec<&MonthRecord>> {
    let labeled: Vec<&MonthRecord> = ds.labeled().collect();
    if labeled.is_empty() {
        bail!(
            "the dataset has no burnout labels: none of its {} months carries a survey label",
            ds.months.len()
        );
    }
    Ok(labeled)
}

fn load_model(path: &Path) -> Result<Trained> {
    let c = Container::load(path).with_context(|| format!("loading {}", path.display()))?;
    match c.kind.as_str() {
        "hipal" => Ok(Trained::Hipal(Box::new(HiPALModel::from_container(&c)?))),
        "single_level" => Ok(Trained::Single(Box::new(SingleLevelModel::load(path)?))),
        other => bail!("{} holds a {other} checkpoint, not a prediction model", path.display()),
    }
}

fn synth(kv: &KvConfig, out: &Path) -> Result<()> {
    let cfg = GeneratorConfig::from_kv(&kv.sub("gen."))?;
    let (ds, truth) = generate_dataset(&cfg)?;
    write_outputs(out, &cfg, &ds, &truth)?;
    eprintln!("{} months of {} participants written to {}", ds.months.len(), cfg.n_participants, out.display());
    Ok(())
}

fn ingest(kv: &KvConfig, events: &Path, surveys: &Path, vocab_size: usize, out: &Path) -> Result<()> {
    let mut format = if events.extension().is_some_and(|e| e == "jsonl") { EventFormat::Jsonl } else { EventFormat::Csv };
    kv.read_into("ingest.format", &mut format)?;
    let mut gap = DEFAULT_GAP_THRESHOLD;
    kv.read_into("ingest.gap_threshold", &mut gap)?;
    let file = File::open(events).with_context(|| format!("opening {}", events.display()))?;
    let parsed = parse_events(BufReader::new(file), format, Some(vocab_size))?;
    let file = File::open(surveys).with_context(|| format!("opening {}", surveys.display()))?;
    let windows = parse_surveys(BufReader::new(file))?;
    let (ds, report) = assemble_dataset(&group_by_participant(parsed), &windows, gap, vocab_size)?;
    write_dataset_jsonl(create(out)?, &ds)?;
    eprintln!(
        "{} months assembled; {} events outside every window, {} empty windows",
        ds.months.len(),
        report.dropped_events,
        report.empty_windows
    );
    Ok(())
}

fn pretrain_embed(kv: &KvConfig, ds: &Dataset, vocab: &Vocabulary, out: &Path) -> Result<()> {
    let mut cfg = SkipGramConfig::default();
    kv.read_into("skipgram.dim", &mut cfg.dim)?;
    kv.read_into("skipgram.window", &mut cfg.window)?;
    kv.read_into("skipgram.epochs", &mut cfg.epochs)?;
    kv.read_into("skipgram.lr", &mut cfg.learning_rate)?;
    kv.read_into("skipgram.batch_size", &mut cfg.batch_size)?;
    kv.read_into("skipgram.seed", &mut cfg.seed)?;
    let seqs: Vec<Vec<u32>> = ds.shifts().map(|s| s.events().iter().map(|a| a.code).collect()).collect();
    let result = pretrain_skipgram(&seqs, ds.vocab_size, &cfg)?;
    result.embedding.save(out, vocab)?;
    if let Some(l) = result.epoch_losses.last() {
        eprintln!("skip-gram: {} epochs, final loss {l:.4}", result.epoch_losses.len());
    }
    Ok(())
}

fn pretrain_ae(kv: &KvConfig, ds: &Dataset, arch: &str, emb: &EmbeddingArgs, out: &Path) -> Result<()> {
    let run = run_config(kv, emb, ds)?;
    let seed = kv.get("train.seed")?.unwrap_or(0);
    let cfg = run.hipal_config(ds.vocab_size, parse_arch(arch)?, seed)?;
    let actions = run.actions_for(ds.vocab_size, cfg.embedding.d_a, seed)?;
    let shell = HiPALModel::new(&cfg, actions.clone())?;
    pretrain_autoencoder(kv, ds, &shell, actions)?.save(out)?;
    Ok(())
}

fn train(kv: &KvConfig, ds: &Dataset, recipe: &str, emb: &EmbeddingArgs, ae: Option<&Path>, out: &Path, history: Option<&Path>) -> Result<()> {
    let labeled = require_labels(ds)?;
    let run = run_config(kv, emb, ds)?;
    let recipe: Recipe = recipe.parse()?;
    let seed = run.train.seed;
    let h = match recipe {
        Recipe::Hipal(arch) | Recipe::SemiHipal(arch) => {
            let cfg = run.hipal_config(ds.vocab_size, arch, seed)?;
            let actions = run.actions_for(ds.vocab_size, cfg.embedding.d_a, seed)?;
            let mut model = HiPALModel::new(&cfg, actions.clone())?;
            if matches!(recipe, Recipe::SemiHipal(_)) {
                let source = match ae {
                    Some(p) => SeqAEModel::load(p).with_context(|| format!("loading {}", p.display()))?,
                    None => pretrain_autoencoder(kv, ds, &model, actions)?,
                };
                transfer_weights(&source, &mut model)?;
            } else if ae.is_some() {
                bail!("--ae only applies to semi-hipal recipes");
            }
            let h = train_supervised(&mut model, &labeled, &[], &run.train)?;
            model.save(out)?;
            h
        }
        Recipe::SingleLevel(arch) => {
            let cfg = run.single_config(ds.vocab_size, arch, seed)?;
            let actions = run.actions_for(ds.vocab_size, cfg.embedding.d_a, seed)?;
            let mut model = SingleLevelModel::new(&cfg, actions)?;
            let h = train_supervised(&mut model, &labeled, &[], &run.train)?;
            model.save(out)?;
            h
        }
        Recipe::BaselineFeatures => bail!("baseline-features has no checkpoint format; evaluate it with `cv`"),
    };
    if let Some(p) = history {
        h.write_csv(create(p)?)?;
    }
    eprintln!("trained {recipe} on {} labeled months; saved {}", labeled.len(), out.display());
    Ok(())
}

fn cv(kv: &KvConfig, ds: &Dataset, recipe: &str, emb: &EmbeddingArgs, out: &Path) -> Result<()> {
    require_labels(ds)?;
    let run = run_config(kv, emb, ds)?;
    let cv = CvConfig::from_kv(&kv.sub("cv."))?;
    let report = run_cv(ds, recipe.parse()?, &cv, &run)?;
    report.write_csv(create(out)?)?;
    if let Some(s) = report.auroc() {
        eprintln!("{}: AUROC {:.4} ± {:.4} over {} splits", report.recipe, s.mean, s.std, s.n);
    }
    Ok(())
}

fn eval(ds: &Dataset, model: &Trained, sensitivity: Option<f64>, specificity: Option<f64>) -> Result<()> {
    let labeled = require_labels(ds)?;
    let labels: Vec<bool> = labeled.iter().filter_map(|m| m.label).collect();
    let scores = model.predict(&labeled)?;
    let m = compute_metrics(&labels, &scores, 0.5);
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "months\t{}", labels.len())?;
    writeln!(stdout, "auroc\t{}", opt(m.auroc))?;
    writeln!(stdout, "auprc\t{}", opt(m.auprc))?;
    writeln!(stdout, "accuracy\t{:.6}", m.accuracy)?;
    let targets = sensitivity.map(Target::Sensitivity).into_iter().chain(specificity.map(Target::Specificity));
    for t in targets {
        let p = operating_point(&labels, &scores, t)?;
        writeln!(
            stdout,
            "operating_point\t{t:?}\tthreshold {:.6}\tsensitivity {:.6}\tspecificity {:.6}",
            p.threshold, p.sensitivity, p.specificity
        )?;
    }
    Ok(())
}

fn predict(ds: &Dataset, model: &Trained, out: &Path) -> Result<()> {
    let months: Vec<&MonthRecord> = ds.months.iter().collect();
    let scores = model.predict(&months)?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["participant_id", "month_index", "probability", "label"])?;
    for (m, p) in months.iter().zip(scores) {
        let label = m.label.map_or(String::new(), |l| u8::from(l).to_string());
        w.write_record([m.participant_id.clone(), m.month_index.to_string(), format!("{p}"), label])?;
    }
    w.flush()?;
    Ok(())
}

fn offset_eval(ds: &Dataset, model: &Trained, offsets: &[u32], out: &Path) -> Result<()> {
    let labeled = require_labels(ds)?;
    let rows = offset_evaluation(&labeled, offsets, |ms| model.predict(ms))?;
    let mut w = csv::Writer::from_writer(create(out)?);
    w.write_record(["offset_days", "auroc"])?;
    for (o, a) in rows {
        w.write_record([o.to_string(), a.map_or(String::new(), |x| format!("{x:.6}"))])?;
    }
    w.flush()?;
    Ok(())
}

fn riskmap(ds: &Dataset, model: &Trained, participant: &str, out: &Path, png: Option<&Path>, cell: u32) -> Result<()> {
    let Trained::Hipal(model) = model else {
        bail!("risk maps need a hierarchical model; single-level models produce no daily risks");
    };
    let map = risk_map(model, ds, participant)?;
    map.write_csv(create(out)?)?;
    if let Some(p) = png {
        map.save_png(p, cell)?;
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth { out, common } => synth(&load_config(&common)?, &out),
        Command::Ingest {
            events,
            surveys,
            vocab_size,
            out,
            common,
        } => ingest(&load_config(&common)?, &events, &surveys, vocab_size, &out),
        Command::Stats { data, common } => {
            load_config(&common)?;
            let ds = read_dataset(&data.data)?;
            println!("{}", serde_json::to_string_pretty(&dataset_stats(&ds))?);
            Ok(())
        }
        Command::PretrainEmbed { data, vocab, out, common } => {
            let kv = load_config(&common)?;
            let ds = read_dataset(&data.data)?;
            let vocab = read_vocab(vocab.as_deref(), &ds)?;
            pretrain_embed(&kv, &ds, &vocab, &out)
        }
        Command::PretrainAe {
            data,
            arch,
            embedding,
            out,
            common,
        } => pretrain_ae(&load_config(&common)?, &read_dataset(&data.data)?, &arch, &embedding, &out),
        Command::Train {
            data,
            recipe,
            embedding,
            ae,
            out,
            history,
            common,
        } => train(
            &load_config(&common)?,
            &read_dataset(&data.data)?,
            &recipe,
            &embedding,
            ae.as_deref(),
            &out,
            history.as_deref(),
        ),
        Command::Cv {
            data,
            recipe,
            embedding,
            out,
            common,
        } => cv(&load_config(&common)?, &read_dataset(&data.data)?, &recipe, &embedding, &out),
        Command::Eval {
            model,
            data,
            sensitivity,
            specificity,
            common,
        } => {
            load_config(&common)?;
            eval(&read_dataset(&data.data)?, &load_model(&model.model)?, sensitivity, specificity)
        }
        Command::Predict { model, data, out, common } => {
            load_config(&common)?;
            predict(&read_dataset(&data.data)?, &load_model(&model.model)?, &out)
        }
        Command::OffsetEval {
            model,
            data,
            offsets,
            out,
            common,
        } => {
            load_config(&common)?;
            offset_eval(&read_dataset(&data.data)?, &load_model(&model.model)?, &offsets, &out)
        }
        Command::Riskmap {
            model,
            data,
            participant,
            out,
            png,
            cell,
            common,
        } => {
            load_config(&common)?;
            riskmap(&read_dataset(&data.data)?, &load_model(&model.model)?, &participant, &out, png.as_deref(), cell)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
