use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use kgicl::checkpoint::Checkpoint;
use kgicl::config::RunConfig;
use kgicl::dataset::{Dataset, GraphRole, Split};
use kgicl::eval::evaluate;
use kgicl::model::FactMask;
use kgicl::prompt::{PromptSettings, PromptVariant};
use kgicl::similarity::{export_prompt_similarity, select_relations};
use kgicl::synth::{make_synthetic_kg, SynthSpec};
use kgicl::train::{finetune, pretrain, EpochLog, TrainConfig};

#[derive(Parser)]
#[command(
    name = "kgicl",
    version,
    about = "In-context knowledge graph reasoning"
)]
struct Cli {
    /// Worker threads; 1 gives bit-for-bit replay.
    #[arg(long, global = true, env = "KGICL_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample examples and build the prompt graph cache of a dataset.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: u32,
        #[arg(long, default_value_t = 5)]
        shots: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = PromptVariant::NeighborAndPath)]
        variant: PromptVariant,
        #[arg(long, default_value_t = 4096)]
        fact_cap: usize,
        /// Defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a fresh model on the source datasets of a config file.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra source dataset directories.
        #[arg(long)]
        source: Vec<PathBuf>,
    },
    /// Continue training a checkpoint on one dataset.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        /// Training settings other than the model shape.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Filtered ranking of a split; writes per-query and aggregate CSVs.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// Aggregate CSV path; defaults to `<out stem>.aggregate.csv`.
        #[arg(long)]
        aggregate: Option<PathBuf>,
        /// Directory holding preprocessed prompt caches.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Print the top-K answers of one query.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        head: String,
        /// Relation name; a `^-1` suffix asks the inverse direction.
        #[arg(long)]
        relation: String,
        #[arg(long, default_value_t = 10)]
        topk: usize,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Write a synthetic dataset with the rule r3 = r1 . r2.
    GenSynth {
        #[arg(long, default_value_t = 20)]
        entities: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        noise: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cosine similarity of prompt representations across two datasets.
    ExportPromptSim {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_a: PathBuf,
        #[arg(long)]
        data_b: PathBuf,
        /// Relations of the first dataset (repeatable); default all.
        #[arg(long)]
        relations_a: Vec<String>,
        #[arg(long)]
        relations_b: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            bail!(kgicl::Error::Config("--threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    b.build_global().context("thread pool")?;
    log::info!("using {} threads", rayon::current_num_threads());
    Ok(())
}

fn write_history(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut text = String::from("epoch,loss,valid_mrr\n");
    for h in history {
        let v = h.valid_mrr.map(|m| format!("{m}")).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", h.epoch, h.loss, v));
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn aggregate_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.aggregate.csv"))
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::File::create(path).map_err(|e| {
        kgicl::Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Preprocess {
            data,
            k,
            shots,
            seed,
            variant,
            fact_cap,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let settings = PromptSettings {
                shots,
                k,
                variant,
                fact_cap,
            };
            let dir = out.unwrap_or(data);
            for p in ds.write_prompt_caches(settings, seed, &dir)? {
                log::info!("wrote {}", p.display());
                println!("{}", p.display());
            }
        }
        Command::Pretrain {
            config,
            out,
            source,
        } => {
            let mut rc = RunConfig::load(&config)?;
            rc.sources.extend(source);
            let out = out
                .or(rc.out.clone())
                .ok_or_else(|| kgicl::Error::Config("no output directory".into()))?;
            let tc = rc.train_config()?;
            let datasets = rc
                .sources
                .iter()
                .map(Dataset::load)
                .collect::<kgicl::Result<Vec<_>>>()?;
            log::info!("seed {}", tc.seed);
            let outcome = pretrain(&datasets, &tc)?;
            outcome.checkpoint.save(&out)?;
            write_history(&out.join("history.csv"), &outcome.history)?;
            println!(
                "best epoch {} valid mrr {}",
                outcome.best_epoch,
                outcome
                    .best_valid_mrr
                    .map(|m| format!("{m:.4}"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
        Command::Finetune {
            checkpoint,
            data,
            epochs,
            out,
            config,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let mut tc = match config {
                Some(p) => RunConfig::load(p)?.train_config()?,
                None => TrainConfig::default(),
            };
            tc.model = ckpt.model.config;
            tc.seed = ckpt.seed;
            let ds = Dataset::load(&data)?;
            let outcome = finetune(&ckpt, &ds, epochs, &tc)?;
            outcome.checkpoint.save(&out)?;
            write_history(&out.join("history.csv"), &outcome.history)?;
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            aggregate,
            cache,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = Dataset::load(&data)?;
            let role = ds.role_of(split);
            let dir = cache.unwrap_or_else(|| data.clone());
            let (pc, reused) =
                ds.prompt_cache(role, ckpt.model.config.prompt, ckpt.seed, Some(&dir))?;
            if !reused {
                log::info!("no reusable prompt cache in {}", dir.display());
            }
            let (graph, triples) = ds.split(split);
            let report = evaluate(&ckpt.model, graph, &pc, triples, &ds.name, split, ckpt.seed)?;
            if report.unrankable > 0 {
                log::warn!("{} queries had no prompt graphs", report.unrankable);
            }
            report.write_queries_csv(create(&out)?)?;
            let agg = aggregate.unwrap_or_else(|| aggregate_path(&out));
            report.write_aggregate_csv(create(&agg)?)?;
            report.write_aggregate_csv(std::io::stdout().lock())?;
        }
        Command::Predict {
            checkpoint,
            data,
            head,
            relation,
            topk,
            cache,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let ds = Dataset::load(&data)?;
            let graph = ds.graph(GraphRole::Inference);
            let s = graph.vocab.entity_id(&head)?;
            let q = graph.vocab.resolve_relation(&relation)?;
            let dir = cache.unwrap_or_else(|| data.clone());
            let (pc, _) = ds.prompt_cache(
                GraphRole::Inference,
                ckpt.model.config.prompt,
                ckpt.seed,
                Some(&dir),
            )?;
            let Some(hbar) = ckpt
                .model
                .relation_prompts(&graph.kg, pc.prompts(q), ckpt.seed)?
            else {
                bail!(kgicl::Error::NoExamples(q));
            };
            let sv = ckpt
                .model
                .score(&graph.kg, s, q, &hbar, &FactMask::none())?;
            let mut order: Vec<usize> = (0..sv.scores.len()).collect();
            order.sort_by(|&a, &b| sv.scores[b].total_cmp(&sv.scores[a]).then(a.cmp(&b)));
            let mut stdout = std::io::stdout().lock();
            for (rank, &e) in order.iter().take(topk).enumerate() {
                let name = graph.vocab.entity_name(e as u32).unwrap_or("?");
                writeln!(stdout, "{}\t{}\t{:.6}", rank + 1, name, sv.scores[e])?;
            }
        }
        Command::GenSynth {
            entities,
            seed,
            noise,
            out,
        } => {
            make_synthetic_kg(&SynthSpec {
                entities,
                noise,
                seed,
            })?
            .write(&out)?;
            println!("{}", out.display());
        }
        Command::ExportPromptSim {
            checkpoint,
            data_a,
            data_b,
            relations_a,
            relations_b,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let settings = ckpt.model.config.prompt;
            let a = Dataset::load(&data_a)?;
            let b = Dataset::load(&data_b)?;
            let (ca, _) =
                a.prompt_cache(GraphRole::Inference, settings, ckpt.seed, Some(&data_a))?;
            let (cb, _) =
                b.prompt_cache(GraphRole::Inference, settings, ckpt.seed, Some(&data_b))?;
            let (ga, gb) = (a.graph(GraphRole::Inference), b.graph(GraphRole::Inference));
            let ra = select_relations(ga, &relations_a)?;
            let rb = select_relations(gb, &relations_b)?;
            let m =
                export_prompt_similarity(&ckpt.model, ckpt.seed, (ga, &ca, &ra), (gb, &cb, &rb))?;
            m.write_csv(create(&out)?)?;
        }
    }
    Ok(())
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<kgicl::Error>())
        .map(kgicl::Error::kind)
        .unwrap_or("other");
    let msg = format!("{err:#}")
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', " ");
    format!("error: kind={kind} msg=\"{msg}\"")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage msg=\"{}\"", first.replace('"', "\\\""));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
