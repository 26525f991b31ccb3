//! `moma` — experiment runner CLI. Exit codes: 0 success, 2 configuration
//! error, 3 data error, 4 partial run (some items unanswered).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use moma_core::datasets::{load_bbq, load_stereoset};
use moma_core::parse::{load_corpus, run_corpus};
use moma_core::runner::{
    load_costs, render_report, rescore, run_experiment, RunConfig, RunnerError,
};
use moma_core::types::{validate_item, MethodKind, StereoTask};

#[derive(Parser)]
#[command(name = "moma", version, about = "Multi-agent bias-mitigation experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Default)]
struct RunOverrides {
    /// Dataset: bbq, stereoset-intra, stereoset-inter, or synthetic.
    #[arg(long)]
    dataset: Option<String>,
    /// BBQ directory or StereoSet dev.json.
    #[arg(long)]
    data_path: Option<PathBuf>,
    /// Comma-separated BBQ categories.
    #[arg(long, value_delimiter = ',')]
    categories: Option<Vec<String>>,
    /// Comma-separated methods, e.g. sp,cot,abp-0,som-3x2,sc-5,moma-mask,moma-balance-balancing.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodKind>>,
    /// Model profile: gpt or llama.
    #[arg(long)]
    model: Option<String>,
    /// Backend: oracle, live, or scripted:<script.jsonl>.
    #[arg(long)]
    backend: Option<String>,
    /// Stratified subsample size.
    #[arg(long)]
    sample_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Item count for the synthetic dataset.
    #[arg(long)]
    synthetic_n: Option<usize>,
    /// Mask token preset: letter-pair, math-symbol, emoji.
    #[arg(long)]
    mask_scheme: Option<String>,
    /// Also rewrite option texts through the mask map.
    #[arg(long)]
    mask_option_texts: bool,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Directory of prompt-template overrides.
    #[arg(long)]
    prompt_dir: Option<PathBuf>,
    /// Anti-bias prompt set file.
    #[arg(long)]
    abp_file: Option<PathBuf>,
    /// Self-consistency sampling temperature.
    #[arg(long)]
    sc_temperature: Option<f64>,
    #[arg(long)]
    max_tokens: Option<u32>,
}

impl RunOverrides {
    fn apply(self, config: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { config.$field = v; })*
            };
        }
        set!(dataset, methods, model, backend, seed, synthetic_n, mask_scheme, concurrency,
            out_dir, sc_temperature);
        if let Some(v) = self.data_path {
            config.data_path = Some(v);
        }
        if let Some(v) = self.categories {
            config.categories = Some(v);
        }
        if let Some(v) = self.sample_n {
            config.sample_n = Some(v);
        }
        if let Some(v) = self.prompt_dir {
            config.prompt_dir = Some(v);
        }
        if let Some(v) = self.abp_file {
            config.abp_file = Some(v);
        }
        if let Some(v) = self.max_tokens {
            config.max_tokens = Some(v);
        }
        if self.mask_option_texts {
            config.mask_option_texts = true;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute (method, item) pairs and persist records, scores, and costs.
    Run {
        /// TOML config file; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: RunOverrides,
    },
    /// Recompute scores.json from the persisted records.
    Score { run_dir: PathBuf },
    /// Render report.md and pareto.csv from scores.json.
    Report {
        run_dir: PathBuf,
        /// Method the delta columns compare against.
        #[arg(long, default_value = "sp")]
        reference: String,
    },
    /// Print the persisted cost breakdown as a table.
    Costs { run_dir: PathBuf },
    /// Load a dataset and report invariant violations and rejected lines.
    ValidateData {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        data_path: PathBuf,
        #[arg(long, value_delimiter = ',')]
        categories: Option<Vec<String>>,
    },
    /// Run the answer-parser regression corpus.
    ParseCorpus {
        #[arg(long, default_value = "data/parse_corpus.jsonl")]
        file: PathBuf,
    },
    /// Configuration helpers.
    Config {
        /// Print every config field with its default as TOML.
        #[arg(long)]
        print_defaults: bool,
    },
}

fn run(command: Command) -> Result<ExitCode, RunnerError> {
    match command {
        Command::Run { config, overrides } => {
            let mut cfg = match config {
                Some(path) => RunConfig::load(&path)?,
                None => RunConfig::default(),
            };
            overrides.apply(&mut cfg);
            let summary = run_experiment(&cfg)?;
            // Best effort: a missing reference method only degrades deltas.
            render_report(&summary.out_dir, "sp")?;
            println!(
                "run complete: {} items x {} methods -> {} ({} executed, {} resumed, {} unanswered)",
                summary.items,
                summary.total_pairs / summary.items.max(1),
                summary.out_dir.display(),
                summary.executed_pairs,
                summary.resumed_pairs,
                summary.unanswered,
            );
            if summary.rejected_lines > 0 {
                eprintln!("warning: {} data lines were rejected at load", summary.rejected_lines);
            }
            Ok(ExitCode::from(summary.exit_code() as u8))
        }
        Command::Score { run_dir } => {
            let scores = rescore(&run_dir)?;
            println!("{}", serde_json::to_string_pretty(&scores).expect("scores serialize"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run_dir, reference } => {
            render_report(&run_dir, &reference)?;
            println!("wrote {}", run_dir.join("report.md").display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Costs { run_dir } => {
            let report = load_costs(&run_dir)?;
            println!(
                "{:<24} {:>8} {:>9} {:>12} {:>12} {:>12} {:>12}",
                "method", "calls", "attempts", "prompt_tok", "compl_tok", "generation", "overall"
            );
            for (method, cost) in &report.per_method {
                println!(
                    "{:<24} {:>8} {:>9} {:>12} {:>12} {:>12.6} {:>12.6}",
                    method,
                    cost.logical_calls,
                    cost.attempts,
                    cost.prompt_tokens,
                    cost.completion_tokens,
                    cost.generation_cost,
                    cost.overall_cost,
                );
            }
            if let Some(ratios) = &report.ratios_vs_cot {
                println!("\nratios vs cot (overall cost):");
                for (method, ratio) in ratios {
                    println!("  {method:<22} {ratio:.2}x");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateData { dataset, data_path, categories } => {
            let outcome = match dataset.as_str() {
                "bbq" => load_bbq(&data_path, categories.as_deref())?,
                "stereoset-intra" => load_stereoset(&data_path, StereoTask::Intrasentence)?,
                "stereoset-inter" => load_stereoset(&data_path, StereoTask::Intersentence)?,
                other => {
                    return Err(RunnerError::Config(format!("unknown dataset `{other}`")));
                }
            };
            let mut invalid = 0usize;
            for item in &outcome.items {
                let result = validate_item(item);
                if !result.is_ok() {
                    invalid += 1;
                    for violation in &result.violations {
                        eprintln!("{}: {violation}", item.id);
                    }
                }
            }
            for rejected in &outcome.rejected {
                eprintln!("{}:{}: rejected: {}", rejected.file, rejected.line, rejected.reason);
            }
            println!(
                "{} items loaded, {} invalid, {} lines rejected",
                outcome.items.len(),
                invalid,
                outcome.rejected.len()
            );
            if invalid > 0 || !outcome.rejected.is_empty() {
                Ok(ExitCode::from(3))
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
        Command::ParseCorpus { file } => {
            let cases = load_corpus(&file)?;
            let report = run_corpus(&cases);
            println!(
                "{}/{} passed; expected absent {}, observed absent {}",
                report.passed, report.total, report.expected_absent, report.observed_absent
            );
            for (index, got) in &report.failures {
                eprintln!("case {index}: got {got:?}, expected {:?}", cases[*index].expected);
            }
            if report.failures.is_empty() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Config { print_defaults } => {
            if print_defaults {
                let defaults = RunConfig::default();
                print!("{}", toml::to_string_pretty(&defaults).expect("defaults serialize"));
            } else {
                eprintln!("nothing to do; try --print-defaults");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
