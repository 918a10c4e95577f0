use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use syntaxeval::backend::BACKEND_URL_ENV;
use syntaxeval::causal::{run_causal_analysis, EvaluationRecord};
use syntaxeval::corpus::{self, Corpus};
use syntaxeval::pipeline::{self, ConfigFile, PipelineConfig};
use syntaxeval::report::report_summary;
use syntaxeval::{Error, Result};

#[derive(Parser)]
#[command(
    name = "syntaxeval",
    version,
    about = "Causal evaluation of syntax learning in masked language models of code"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Pipeline settings shared by every stage. Precedence: flags, then the
/// TOML file given with --config, then defaults.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated AST node types to study
    #[arg(long, value_delimiter = ',')]
    node_types: Option<Vec<String>>,
    /// http | oracle | constant:<tok> | random:<seed> | corruptor
    #[arg(long)]
    backend: Option<String>,
    /// Base URL of the fill-mask server
    #[arg(long, env = BACKEND_URL_ENV)]
    backend_url: Option<String>,
    #[arg(long = "mask-token")]
    mask_sentinel: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long = "variants")]
    control_variants: Option<usize>,
    #[arg(long)]
    bootstrap_resamples: Option<usize>,
    #[arg(long)]
    max_mask_fraction: Option<f64>,
    #[arg(long)]
    max_bytes: Option<usize>,
    #[arg(long)]
    min_group_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    retries: Option<u32>,
}

impl ConfigArgs {
    fn resolve(
        &self,
        corpus_path: Option<PathBuf>,
        output_dir: Option<PathBuf>,
    ) -> Result<PipelineConfig> {
        let file = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        let flags = ConfigFile {
            corpus_path,
            node_types: self.node_types.clone(),
            backend: self.backend.clone(),
            backend_url: self.backend_url.clone(),
            mask_sentinel: self.mask_sentinel.clone(),
            sample_size: self.sample_size,
            seed: self.seed,
            control_variants: self.control_variants,
            bootstrap_resamples: self.bootstrap_resamples,
            max_mask_fraction: self.max_mask_fraction,
            max_bytes: self.max_bytes,
            min_group_size: self.min_group_size,
            top_k: self.top_k,
            jobs: self.jobs,
            retries: self.retries,
            output_dir,
            ..Default::default()
        };
        file.overlay(flags).resolve()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Read a JSONL corpus, drop oversize snippets and duplicates
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Attach the seven code confounders to every snippet
    Features {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Write treatment and matched control samples as JSONL
    Mask {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Query the backend for masked samples and write evaluation records
    Evaluate {
        /// Corpus the masked samples were built from
        #[arg(long)]
        corpus: PathBuf,
        /// Masked-sample JSONL from `mask`
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Estimate causal effects from a records file
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Run every stage end to end
    Run {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Render causal_results.json as a table
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn load_corpus(path: &Path, config: &PipelineConfig) -> Result<Corpus> {
    let (c, stats) = corpus::ingest_jsonl_with_limit(path, config.max_bytes)?;
    if stats.skipped_oversize > 0 {
        info!("skipped {} oversize snippet(s)", stats.skipped_oversize);
    }
    Ok(c)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            output,
            opts,
        } => {
            let config = opts.resolve(Some(input.clone()), None)?;
            let (raw, stats) = corpus::ingest_jsonl_with_limit(&input, config.max_bytes)?;
            let deduped = corpus::dedup(&raw);
            deduped.write_jsonl(&output)?;
            println!(
                "read {} line(s), skipped {} oversize, kept {} after dedup",
                stats.lines,
                stats.skipped_oversize,
                deduped.len()
            );
        }
        Command::Features {
            input,
            output,
            opts,
        } => {
            let config = opts.resolve(Some(input.clone()), None)?;
            let corpus = pipeline::attach_features(&load_corpus(&input, &config)?)?;
            corpus.write_jsonl(&output)?;
            println!("wrote features for {} snippet(s)", corpus.len());
        }
        Command::Mask {
            input,
            output,
            opts,
        } => {
            let config = opts.resolve(Some(input.clone()), None)?;
            let corpus = load_corpus(&input, &config)?;
            let masked = pipeline::mask_corpus(&corpus, &config)?;
            pipeline::write_masked_samples(&output, &masked.groups)?;
            for (nt, c) in &masked.counts {
                println!(
                    "{nt}: {} treated, {} absent, {} too dense, {} sentinel conflicts",
                    c.treated, c.skipped_absent, c.skipped_too_dense, c.skipped_sentinel_conflict
                );
            }
        }
        Command::Evaluate {
            corpus,
            input,
            output_dir,
            opts,
        } => {
            let config = opts.resolve(Some(corpus.clone()), Some(output_dir.clone()))?;
            std::fs::create_dir_all(&output_dir).map_err(|e| Error::Io {
                path: output_dir.clone(),
                source: e,
            })?;
            let corpus = load_corpus(&corpus, &config)?;
            let groups = pipeline::read_masked_samples(&input)?;
            let backend = config.backend.build(
                config.http_config(),
                Some(&output_dir.join(pipeline::CACHE_FILE)),
            )?;
            let (records, scored) =
                pipeline::evaluate_groups(&groups, &corpus, backend.as_ref(), &config)?;
            pipeline::write_jsonl(&output_dir.join(pipeline::RECORDS_FILE), &records)?;
            pipeline::write_scores_csv(&output_dir.join(pipeline::SCORES_FILE), &scored)?;
            println!("wrote {} record(s)", records.len());
        }
        Command::Analyze {
            input,
            output_dir,
            opts,
        } => {
            let config = opts.resolve(None, Some(output_dir.clone()))?;
            let records: Vec<EvaluationRecord> = pipeline::read_jsonl(&input)?;
            let results = run_causal_analysis(&records, &config.causal_config())?;
            std::fs::create_dir_all(&output_dir).map_err(|e| Error::Io {
                path: output_dir.clone(),
                source: e,
            })?;
            pipeline::write_analysis(&output_dir, &results)?;
            print!("{}", report_summary(&results));
        }
        Command::Run {
            corpus,
            output_dir,
            opts,
        } => {
            let config = opts.resolve(corpus, output_dir)?;
            let summary = pipeline::run_pipeline(&config)?;
            print!("{}", summary.report);
            println!(
                "\n{} record(s), {} result row(s) written to {}",
                summary.manifest.records,
                summary.results.len(),
                config.output_dir.display()
            );
        }
        Command::Report { input } => {
            let results = pipeline::read_results_json(&input)?;
            print!("{}", report_summary(&results));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
