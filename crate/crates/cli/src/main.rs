use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cogharness_core::corpus::{apply_splits, write_manifest, Split};
use cogharness_core::experiment::{
    cmd_error_analysis, cmd_report, cmd_run, embed_corpus, latest_run_dir, write_text, AnalysisOptions,
    ExperimentConfig, ExperimentError, RunOverrides,
};
use cogharness_core::selection::DemoPool;
use cogharness_core::{load_corpus, partition_summary, select_demonstrations, stratified_split, SelectionPolicy};

/// Experiment harness for LLM-based cognitive-status classification.
#[derive(Parser)]
#[command(name = "cogharness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults depend on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the manifest and transcripts and print the partition table.
    Ingest(Common),
    /// Stratified train/validation split of the non-test subjects.
    Split {
        #[command(flatten)]
        common: Common,
        /// Validation size; falls back to `validation_n` in the config.
        #[arg(long)]
        validation_n: Option<usize>,
    },
    /// Embed every transcript and save the vectors.
    Embed(Common),
    /// Print the demonstrations chosen for one subject as JSON.
    SelectDemos {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "most_similar")]
        policy: SelectionPolicy,
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Run every configured strategy.
    Run(Common),
    /// Recompute metrics for a run directory (default: the latest run).
    Report {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Linguistic profiles and group comparisons for one results file.
    ErrorAnalysis {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        results: PathBuf,
        /// Directory of `<subject_id>.tsv` files from an external tagger.
        #[arg(long)]
        tagged_dir: Option<PathBuf>,
    },
    /// Write subject embeddings as CSV.
    ExportEmbeddings(Common),
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    RunOverrides { output_dir: None, seed: common.seed }.apply(&mut config);
    Ok(config)
}

/// Config with `--out` also taking over as the output root (embedding cache, runs).
fn load_config_into_out(common: &Common) -> Result<ExperimentConfig> {
    let mut config = load_config(common)?;
    RunOverrides { output_dir: common.out.clone(), seed: None }.apply(&mut config);
    Ok(config)
}

fn default_out(common: &Common, config: &ExperimentConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| config.output_dir.join(&config.name))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest(common) => {
            let config = load_config(&common)?;
            let records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let summary = partition_summary(&records)?;
            print!("{}", summary.to_table());
            if let Some(out) = &common.out {
                create_dir(out)?;
                let json = serde_json::to_string_pretty(&summary)?;
                write_text(&out.join("partition_summary.json"), &(json + "\n"))?;
            }
            log::info!("{} subjects validated", records.len());
        }
        Command::Split { common, validation_n } => {
            let config = load_config(&common)?;
            let target = validation_n
                .or(config.validation_n)
                .ok_or_else(|| ExperimentError::Config("no validation size (--validation-n or validation_n)".into()))?;
            let mut records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let dev: Vec<_> = records
                .iter()
                .filter(|r| r.split != Split::Test)
                .cloned()
                .map(|mut r| {
                    r.split = Split::Unassigned;
                    r
                })
                .collect();
            let assignments = stratified_split(&dev, target, config.seed)?;
            apply_splits(&mut records, &assignments);
            let out = default_out(&common, &config);
            create_dir(&out)?;
            let path = out.join("manifest.csv");
            write_manifest(&records, &path)?;
            print!("{}", partition_summary(&records)?.to_table());
            println!("wrote {}", path.display());
        }
        Command::Embed(common) => {
            let config = load_config_into_out(&common)?;
            let records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let store = embed_corpus(&config, &records)?;
            let out = default_out(&common, &config);
            create_dir(&out)?;
            let stem = out.join("embeddings");
            store.save(&stem).map_err(ExperimentError::from)?;
            println!("{} vectors of dimension {} saved to {}.bin", store.len(), store.dimension(), stem.display());
        }
        Command::SelectDemos { common, subject, policy, n } => {
            let config = load_config_into_out(&common)?;
            let records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let target = records
                .iter()
                .find(|r| r.subject_id == subject)
                .ok_or_else(|| ExperimentError::Input(format!("unknown subject {subject}")))?;
            let store = if policy == SelectionPolicy::Random { None } else { Some(embed_corpus(&config, &records)?) };
            let pool = DemoPool::new(&records, store.as_ref()).map_err(|e| anyhow!(e))?;
            let embedding = store.as_ref().and_then(|s| s.get(&subject));
            let set = select_demonstrations(policy, n, embedding, &pool, config.seed).map_err(|e| anyhow!(e))?;
            let json = serde_json::to_string_pretty(&set.audit_json())?;
            println!("{json}");
            if let Some(out) = &common.out {
                create_dir(out)?;
                write_text(&out.join(format!("demos_{}_{policy}_{n}.json", target.subject_id)), &(json + "\n"))?;
            }
        }
        Command::Run(common) => {
            let config = load_config_into_out(&common)?;
            let summary = cmd_run(&config)?;
            for s in &summary.strategies {
                let metrics = summary.metrics.iter().find(|m| m.strategy == s.strategy);
                println!(
                    "{:<28} records={:<4} failed={:<3} F1_CI={}",
                    s.strategy,
                    s.records,
                    s.failed,
                    metrics.map(|m| format!("{:.4}", m.f1_ci)).unwrap_or_default()
                );
            }
            println!("results in {}", summary.run_dir.display());
        }
        Command::Report { common, results } => {
            let config = load_config_into_out(&common)?;
            let dir = match results {
                Some(dir) => dir,
                None => latest_run_dir(&config)?,
            };
            let report = cmd_report(&dir)?;
            print!("{}", report.to_text());
        }
        Command::ErrorAnalysis { common, results, tagged_dir } => {
            let config = load_config(&common)?;
            if !results.is_file() {
                bail!(ExperimentError::Input(format!("{} is not a file", results.display())));
            }
            let corpus = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let out = common.out.clone().unwrap_or_else(|| results.with_extension("analysis"));
            let options = AnalysisOptions { tagged_dir: tagged_dir.as_deref(), ..Default::default() };
            let report = cmd_error_analysis(&results, &corpus, &out, &options)?;
            for (group, ids) in &report.groups {
                println!("{}: {}", group.as_str(), ids.len());
            }
            for flagged in &report.flagged {
                println!("p < 0.10: {flagged}");
            }
            for note in &report.notes {
                println!("note: {note}");
            }
            println!("written to {}", out.display());
        }
        Command::ExportEmbeddings(common) => {
            let config = load_config_into_out(&common)?;
            let records = load_corpus(&config.corpus.manifest, &config.corpus.transcripts_dir)?;
            let store = embed_corpus(&config, &records)?;
            let out = default_out(&common, &config);
            create_dir(&out)?;
            let path = out.join("embeddings.csv");
            store.export_csv(&path).map_err(ExperimentError::from)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<ExperimentError>() {
        Some(e) => e.exit_code() as u8,
        None if err.downcast_ref::<std::io::Error>().is_some() => 2,
        None => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
