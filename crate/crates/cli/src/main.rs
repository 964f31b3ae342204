//! `cbrqa`: world generation, training, evaluation, experiments and serving.
//!
//! A world directory holds `world/`, `data/` and, once trained,
//! `encoder.bin`, `memory.bin` and `transe.bin`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use cbrqa::experiments::{run_experiment, run_experiment_on, train_case, ExperimentConfig, ExperimentKind, StructureCheck};
use cbrqa::memory::CaseMemory;
use cbrqa::pipeline::{retrieval_recall, Flags, Pipeline};
use cbrqa::retriever::{train_retriever, Encoder, TrainItem};
use cbrqa::revise::{train_transe, EmbeddingTable, ReviseMode};
use cbrqa::worldgen::{generate_dataset, generate_world, Dataset, SplitKind, World};
use cbrqa::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "cbrqa", version, about = "Case-based question answering over a synthetic knowledge graph")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a world and a dataset split.
    Worldgen {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Split::Standard)]
        split: Split,
    },
    /// Train the question encoder and build the case memory from the training split.
    TrainRetriever {
        #[command(flatten)]
        common: Common,
    },
    /// Train TransE embeddings on the incomplete KB.
    TrainTranse {
        #[command(flatten)]
        common: Common,
    },
    /// Run the pipeline on a split and score it.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: FlagArgs,
        #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
        on: EvalSplit,
    },
    /// Run one experiment end to end.
    Experiment {
        #[arg(value_enum)]
        kind: Kind,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: FlagArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: FlagArgs,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Write the memory back after every injection or removal.
        #[arg(long)]
        persist: bool,
    },
}

#[derive(Args)]
struct Common {
    /// World seed for worldgen and experiment, training seed otherwise.
    #[arg(long)]
    seed: Option<u64>,
    /// World directory.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Case memory file; defaults to `<world>/memory.bin`.
    #[arg(long)]
    memory: Option<PathBuf>,
    /// Output directory; defaults to the world directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON experiment config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct FlagArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    beam: Option<u64>,
    #[arg(long, value_enum)]
    revise: Option<Revise>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Standard,
    NovelCombination,
    HeldoutRelation,
    McdLike,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Valid,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    HeldoutInjection,
    KAblation,
    NovelCombination,
    ReviseAblation,
}

#[derive(Clone, Copy, ValueEnum)]
enum Revise {
    Off,
    Surface,
    Transe,
}

impl Kind {
    fn kind(self) -> ExperimentKind {
        match self {
            Kind::HeldoutInjection => ExperimentKind::HeldoutInjection,
            Kind::KAblation => ExperimentKind::KAblation,
            Kind::NovelCombination => ExperimentKind::NovelCombination,
            Kind::ReviseAblation => ExperimentKind::ReviseAblation,
        }
    }
}

impl FlagArgs {
    fn apply(&self, flags: &mut Flags) {
        if let Some(k) = self.k {
            flags.k = k;
        }
        if let Some(b) = self.beam {
            let b = b as usize;
            flags.generator.beam = b;
            flags.revise_beam = b;
        }
        if let Some(r) = self.revise {
            flags.revise = match r {
                Revise::Off => ReviseMode::Off,
                Revise::Surface => ReviseMode::Surface,
                Revise::Transe => ReviseMode::Transe,
            };
        }
    }
}

type Result<T> = std::result::Result<T, Error>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).map_err(io(p))?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.world.seed = s;
    }
    Ok(cfg)
}

fn world_dir(common: &Common) -> Result<&Path> {
    common
        .world
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--world <DIR> is required".into()))
}

fn out_dir(common: &Common) -> Result<PathBuf> {
    let dir = match (&common.out, &common.world) {
        (Some(o), _) => o.clone(),
        (None, Some(w)) => w.clone(),
        (None, None) => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(io(&dir))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(io(path))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    fs::write(path, text).map_err(io(path))
}

fn load_world(dir: &Path) -> Result<(World, Dataset)> {
    Ok((World::load(dir.join("world"))?, Dataset::load(dir.join("data"))?))
}

fn load_pipeline(common: &Common) -> Result<(World, Dataset, Pipeline)> {
    let dir = world_dir(common)?;
    let (world, data) = load_world(dir)?;
    let encoder = Encoder::load(dir.join("encoder.bin"))?;
    let memory_path = common.memory.clone().unwrap_or_else(|| dir.join("memory.bin"));
    let memory = CaseMemory::load(&memory_path, &encoder)?;
    let transe_path = dir.join("transe.bin");
    let transe = if transe_path.exists() { Some(EmbeddingTable::load(&transe_path)?) } else { None };
    let pipeline = Pipeline::new(world.incomplete.clone(), world.aliases.clone(), encoder, memory, transe)?;
    Ok((world, data, pipeline))
}

fn split_kind(split: Split, cfg: &ExperimentConfig) -> SplitKind {
    match split {
        Split::Standard => SplitKind::Standard,
        Split::NovelCombination => SplitKind::NovelCombination,
        Split::HeldoutRelation => SplitKind::HeldoutRelation {
            relations: cfg.heldout_relations.clone(),
        },
        Split::McdLike => SplitKind::McdLike,
    }
}

fn worldgen(common: &Common, split: Split) -> Result<()> {
    let cfg = config(common)?;
    let out = out_dir(common)?;
    let world = generate_world(&cfg.world)?;
    let data = generate_dataset(&world, &cfg.templates, &split_kind(split, &cfg), cfg.dataset_seed)?;
    world.save(out.join("world"))?;
    data.save(out.join("data"))?;
    write_json(&out.join("experiment_config.json"), &cfg)?;
    let report = json!({
        "command": "worldgen",
        "world_seed": cfg.world.seed,
        "dataset_seed": cfg.dataset_seed,
        "split": data.spec.kind.name(),
        "kb_triples": world.full.len(),
        "kb_incomplete_triples": world.incomplete.len(),
        "entities": world.full.num_entities(),
        "relations": world.full.num_relations(),
        "aliases": world.aliases.len(),
        "train": data.train.len(),
        "valid": data.valid.len(),
        "test": data.test.len(),
        "stats": data.spec.stats,
    });
    write_json(&out.join("worldgen_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn saved_config(dir: &Path, common: &Common) -> Result<ExperimentConfig> {
    let path = dir.join("experiment_config.json");
    let mut cfg = if common.config.is_none() && path.exists() {
        serde_json::from_str(&fs::read_to_string(&path).map_err(io(&path))?)?
    } else {
        config(common)?
    };
    if let Some(s) = common.seed {
        cfg.retriever_training.seed = s;
        cfg.encoder.seed = s;
        cfg.transe.seed = s;
    }
    Ok(cfg)
}

fn cmd_train_retriever(common: &Common) -> Result<()> {
    let dir = world_dir(common)?;
    let cfg = saved_config(dir, common)?;
    let out = out_dir(common)?;
    let (_, data) = load_world(dir)?;
    let t0 = Instant::now();
    let mut encoder = Encoder::new(cfg.encoder.clone())?;
    let cases = || data.train.iter().map(train_case).collect::<Vec<_>>();
    let untrained = retrieval_recall(&CaseMemory::build(cases(), &encoder)?, &encoder, &data.valid, 20)?;
    let items: Vec<TrainItem> = data
        .train
        .iter()
        .map(|e| TrainItem {
            question: &e.question,
            mentions: &e.mentions,
            lf: &e.gold_lf,
        })
        .collect();
    let train = train_retriever(&mut encoder, &items, &cfg.retriever_training)?;
    let memory = CaseMemory::build(cases(), &encoder)?;
    let trained = retrieval_recall(&memory, &encoder, &data.valid, 20)?;
    encoder.save(out.join("encoder.bin"))?;
    memory.snapshot(common.memory.clone().unwrap_or_else(|| out.join("memory.bin")))?;

    let mut log = Vec::new();
    for ex in &data.valid {
        let hits = memory.retrieve(&encoder, &ex.question, &ex.mentions, 20, Some(&ex.id))?;
        let ids: Vec<&str> = hits.iter().map(|(c, _)| c.id.as_str()).collect();
        log.push(serde_json::to_string(&json!({ "id": ex.id, "question": ex.question, "retrieved": ids }))?);
    }
    write_lines(&out.join("retriever_log.jsonl"), &log)?;
    fs::write(out.join("retriever_loss.csv"), train.to_csv()).map_err(io(&out))?;
    let report = json!({
        "command": "train-retriever",
        "encoder_version": encoder.version(),
        "cases": memory.len(),
        "steps": train.steps,
        "epoch_loss": train.epoch_loss,
        "dev_recall_at_20": { "untrained": untrained, "trained": trained },
        "seconds": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("retriever_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_train_transe(common: &Common) -> Result<()> {
    let dir = world_dir(common)?;
    let cfg = saved_config(dir, common)?;
    let out = out_dir(common)?;
    let world = World::load(dir.join("world"))?;
    let t0 = Instant::now();
    let (table, report) = train_transe(&world.incomplete, &cfg.transe)?;
    table.save(out.join("transe.bin"))?;
    let log: Vec<String> = report
        .epoch_loss
        .iter()
        .enumerate()
        .map(|(i, l)| json!({ "epoch": i + 1, "mean_loss": l }).to_string())
        .collect();
    write_lines(&out.join("transe_log.jsonl"), &log)?;
    let report = json!({
        "command": "train-transe",
        "version": table.version(),
        "entities": table.num_entities(),
        "relations": table.num_relations(),
        "dim": table.dim(),
        "final_loss": report.epoch_loss.last(),
        "seconds": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("transe_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn cmd_eval(common: &Common, args: &FlagArgs, on: EvalSplit) -> Result<()> {
    let (_, data, pipeline) = load_pipeline(common)?;
    let out = out_dir(common)?;
    let mut flags = Flags::default();
    args.apply(&mut flags);
    let examples = match on {
        EvalSplit::Valid => &data.valid,
        EvalSplit::Test => &data.test,
    };
    let t0 = Instant::now();
    let (metrics, results) = pipeline.evaluate(examples, &flags)?;
    let log: Vec<String> = examples
        .iter()
        .zip(&results)
        .map(|(ex, r)| {
            let mut v = serde_json::to_value(r)?;
            v["id"] = json!(ex.id);
            Ok(serde_json::to_string(&v)?)
        })
        .collect::<Result<_>>()?;
    write_lines(&out.join("predictions.jsonl"), &log)?;
    let report = json!({
        "command": "eval",
        "split": data.spec.kind.name(),
        "on": match on { EvalSplit::Valid => "valid", EvalSplit::Test => "test" },
        "flags": flags,
        "metrics": metrics.summary(),
        "structure": StructureCheck::of(&results),
        "errors": results.iter().filter(|r| r.error.is_some()).count(),
        "seconds": t0.elapsed().as_secs_f64(),
    });
    write_json(&out.join("eval_report.json"), &report)?;
    println!("{}", serde_json::to_string(&report["metrics"])?);
    Ok(())
}

fn cmd_experiment(kind: Kind, common: &Common, args: &FlagArgs) -> Result<()> {
    let mut cfg = config(common)?;
    args.apply(&mut cfg.flags);
    let out = out_dir(common)?;
    let output = match &common.world {
        Some(dir) => {
            let (world, data) = load_world(dir)?;
            run_experiment_on(kind.kind(), &world, &data, &cfg)?
        }
        None => run_experiment(kind.kind(), &cfg)?,
    };
    let name = kind.kind().as_str();
    write_json(&out.join(format!("{name}_report.json")), &output.report)?;
    write_lines(&out.join(format!("{name}_log.jsonl")), &output.log)?;
    println!("{}", serde_json::to_string(&output.report.result)?);
    Ok(())
}

fn cmd_serve(common: &Common, args: &FlagArgs, addr: &str, persist: bool) -> Result<()> {
    let (world, _, pipeline) = load_pipeline(common)?;
    let mut flags = Flags::default();
    args.apply(&mut flags);
    let world_id = format!("seed-{}", world.config.seed);
    let mut service = cbrqa_service::Service::new(pipeline, flags, world_id);
    if persist {
        let dir = world_dir(common)?;
        service = service.persist_to(common.memory.clone().unwrap_or_else(|| dir.join("memory.bin")));
    }
    let runtime = tokio::runtime::Runtime::new().map_err(io(Path::new(addr)))?;
    runtime
        .block_on(async move {
            let listener = tokio::net::TcpListener::bind(addr).await?;
            println!("listening on {}", listener.local_addr()?);
            cbrqa_service::serve(Arc::new(service), listener).await
        })
        .map_err(io(Path::new(addr)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Worldgen { common, split } => worldgen(common, *split),
        Command::TrainRetriever { common } => cmd_train_retriever(common),
        Command::TrainTranse { common } => cmd_train_transe(common),
        Command::Eval { common, flags, on } => cmd_eval(common, flags, *on),
        Command::Experiment { kind, common, flags } => cmd_experiment(*kind, common, flags),
        Command::Serve {
            common,
            flags,
            addr,
            persist,
        } => cmd_serve(common, flags, addr, *persist),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
