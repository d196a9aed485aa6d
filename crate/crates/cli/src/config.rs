//! Run configuration: an optional JSON file merged with command-line flags.
//! Flags win over file values. Everything is resolved and validated before
//! a command touches the filesystem.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use numcore::SgdConfig;
use serde::Deserialize;
use tslm_core::data::GrammarConfig;
use tslm_core::encoder::EncoderConfig;
use tslm_core::evaluation::EvalMode;
use tslm_core::train::{FitTargets, TrainConfig};
use tslm_core::{Result, TslmError};

#[derive(Debug, Parser)]
#[command(name = "tslm", version, about = "Entity state tracking over procedural text")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    Train,
    Predict,
    Evaluate,
    GenerateData,
    Convert,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    /// Canonical procedure JSON.
    #[default]
    Propara,
    /// Recipe JSON with sparse ingredient annotations.
    Npn,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Decode every entity of a dataset into a state-change TSV.
    Predict(PredictArgs),
    /// Score predictions against gold.
    Evaluate(EvaluateArgs),
    /// Write a synthetic corpus in canonical JSON.
    GenerateData(GenerateArgs),
    /// Convert a grid TSV into canonical JSON.
    Convert(ConvertArgs),
}

impl Command {
    fn name(&self) -> CommandName {
        match self {
            Command::Train(_) => CommandName::Train,
            Command::Predict(_) => CommandName::Predict,
            Command::Evaluate(_) => CommandName::Evaluate,
            Command::GenerateData(_) => CommandName::GenerateData,
            Command::Convert(_) => CommandName::Convert,
        }
    }
}

#[derive(Debug, Default, Args)]
pub struct TrainArgs {
    #[arg(long = "train")]
    pub train_data: Option<PathBuf>,
    #[arg(long = "dev")]
    pub dev_data: Option<PathBuf>,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Score every intra-sentence span instead of the noun-phrase candidates.
    #[arg(long)]
    pub no_np_filter: bool,
    /// Hold the timestamp table at zero throughout training.
    #[arg(long)]
    pub zero_timestamp: bool,
    /// Training log destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<DataFormat>,
    /// Skip timeline repair and report rule violations instead.
    #[arg(long)]
    pub no_constraints: bool,
    #[arg(long)]
    pub no_np_filter: bool,
    /// Predictions TSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct EvaluateArgs {
    /// Predictions: state-change TSV or procedure JSON.
    #[arg(long = "pred")]
    pub predictions: Option<PathBuf>,
    /// Gold: state-change TSV, procedure JSON, or recipe JSON in npn mode.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// sentence, document or npn.
    #[arg(long)]
    pub mode: Option<String>,
    /// Metrics JSON destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// File form of the run configuration.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub command: Option<CommandName>,
    pub train_data: Option<PathBuf>,
    pub dev_data: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: DataFormat,
    pub mode: Option<String>,
    pub encoder: Option<EncoderConfig>,
    pub sgd: Option<SgdConfig>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub stop_at: Option<FitTargets>,
    pub count: Option<usize>,
    pub grammar: GrammarConfig,
    pub no_np_filter: bool,
    pub no_constraints: bool,
    pub zero_timestamp: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TslmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| TslmError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug)]
pub struct TrainJob {
    pub train_data: PathBuf,
    pub dev_data: Option<PathBuf>,
    pub model_dir: PathBuf,
    pub format: DataFormat,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub np_filter: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct PredictJob {
    pub data: PathBuf,
    pub model_dir: PathBuf,
    pub format: DataFormat,
    pub constraints: bool,
    pub np_filter: bool,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct EvaluateJob {
    pub predictions: PathBuf,
    pub gold: PathBuf,
    pub mode: EvalMode,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct GenerateJob {
    pub seed: u64,
    pub count: usize,
    pub grammar: GrammarConfig,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ConvertJob {
    pub input: PathBuf,
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum Job {
    Train(TrainJob),
    Predict(PredictJob),
    Evaluate(EvaluateJob),
    Generate(GenerateJob),
    Convert(ConvertJob),
}

fn required(value: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    value.ok_or_else(|| TslmError::Config(format!("missing {what}")))
}

fn existing(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(TslmError::Config(format!("{} does not exist", path.display())))
    }
}

/// Merges flags over the file configuration and validates the result.
pub fn resolve(cli: Cli) -> Result<Job> {
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let name = match (&cli.command, file.command) {
        (Some(c), Some(f)) if c.name() != f => {
            return Err(TslmError::Config(format!(
                "command line asks for {:?} but the config file is for {f:?}",
                c.name()
            )))
        }
        (Some(c), _) => c.name(),
        (None, Some(f)) => f,
        (None, None) => return Err(TslmError::Config("no command given".into())),
    };
    let command = cli.command.unwrap_or(match name {
        CommandName::Train => Command::Train(TrainArgs::default()),
        CommandName::Predict => Command::Predict(PredictArgs::default()),
        CommandName::Evaluate => Command::Evaluate(EvaluateArgs::default()),
        CommandName::GenerateData => Command::GenerateData(GenerateArgs::default()),
        CommandName::Convert => Command::Convert(ConvertArgs::default()),
    });

    let job = match command {
        Command::Train(a) => {
            let mut train = TrainConfig {
                epochs: a.epochs.or(file.epochs).unwrap_or(TrainConfig::default().epochs),
                seed: a.seed.or(file.seed).unwrap_or(0),
                sgd: file.sgd.unwrap_or_default(),
                zero_timestamp: a.zero_timestamp || file.zero_timestamp,
                stop_at: file.stop_at,
            };
            if let Some(lr) = a.learning_rate {
                train.sgd.learning_rate = lr;
            }
            train.validate()?;
            let encoder = file.encoder.unwrap_or_default();
            // vocab size is only known once data is read; check the rest now
            let placeholder = tslm_core::tokenizer::RESERVED.len() + 1;
            EncoderConfig { vocab_size: encoder.vocab_size.max(placeholder), ..encoder.clone() }.validate()?;
            Job::Train(TrainJob {
                train_data: existing(required(a.train_data.or(file.train_data), "training data (--train)")?)?,
                dev_data: a.dev_data.or(file.dev_data).map(existing).transpose()?,
                model_dir: required(a.model_dir.or(file.model_dir), "model directory (--model-dir)")?,
                format: a.format.unwrap_or(file.format),
                encoder,
                train,
                np_filter: !(a.no_np_filter || file.no_np_filter),
                out: a.out.or(file.out),
            })
        }
        Command::Predict(a) => {
            let model_dir = required(a.model_dir.or(file.model_dir), "model directory (--model-dir)")?;
            Job::Predict(PredictJob {
                data: existing(required(a.data.or(file.data), "input data (--data)")?)?,
                model_dir: existing(model_dir)?,
                format: a.format.unwrap_or(file.format),
                constraints: !(a.no_constraints || file.no_constraints),
                np_filter: !(a.no_np_filter || file.no_np_filter),
                out: a.out.or(file.out),
            })
        }
        Command::Evaluate(a) => {
            let mode = a.mode.or(file.mode).unwrap_or_else(|| "document".into());
            Job::Evaluate(EvaluateJob {
                predictions: existing(required(a.predictions.or(file.predictions), "predictions (--pred)")?)?,
                gold: existing(required(a.gold.or(file.gold), "gold (--gold)")?)?,
                mode: mode.parse().map_err(TslmError::Config)?,
                out: a.out.or(file.out),
            })
        }
        Command::GenerateData(a) => {
            file.grammar.validate()?;
            let count = a.count.or(file.count).unwrap_or(10);
            if count == 0 {
                return Err(TslmError::Config("count must be positive".into()));
            }
            Job::Generate(GenerateJob {
                seed: a.seed.or(file.seed).unwrap_or(0),
                count,
                grammar: file.grammar,
                out: a.out.or(file.out),
            })
        }
        Command::Convert(a) => Job::Convert(ConvertJob {
            input: existing(required(a.input.or(file.input), "input TSV (--input)")?)?,
            out: a.out.or(file.out),
        }),
    };
    Ok(job)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("tslm").chain(args.iter().copied())).unwrap()
    }

    fn write_config(dir: &Path, json: &str) -> PathBuf {
        let p = dir.join("run.json");
        std::fs::write(&p, json).unwrap();
        p
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(dir.path(), r#"{"command": "convert", "learning_rate": 0.1}"#);
        let err = resolve(parse(&["--config", p.to_str().unwrap()])).unwrap_err();
        assert!(matches!(err, TslmError::Config(_)), "{err}");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("train.json");
        std::fs::write(&data, "[]").unwrap();
        let p = write_config(
            dir.path(),
            &format!(
                r#"{{"command": "train", "train_data": {:?}, "model_dir": "m", "epochs": 7, "seed": 3,
                    "sgd": {{"learning_rate": 0.01, "decay_factor": 0.5, "decay_every": 10}}}}"#,
                data
            ),
        );
        let job = resolve(parse(&["--config", p.to_str().unwrap(), "train", "--epochs", "2", "--lr", "0.2"])).unwrap();
        let Job::Train(t) = job else { panic!("expected a train job") };
        assert_eq!(t.train.epochs, 2);
        assert_eq!(t.train.seed, 3);
        assert_eq!(t.train.sgd.learning_rate, 0.2);
        assert_eq!(t.train.sgd.decay_every, 10);
        assert!(t.np_filter);
    }

    #[test]
    fn conflicting_commands_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_config(dir.path(), r#"{"command": "convert"}"#);
        assert!(resolve(parse(&["--config", p.to_str().unwrap(), "generate-data"])).is_err());
    }

    #[test]
    fn invalid_hyperparameters_fail_before_any_work() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("train.json");
        std::fs::write(&data, "[]").unwrap();
        let args = ["train", "--train", data.to_str().unwrap(), "--model-dir", "m", "--lr=-1"];
        assert!(matches!(resolve(parse(&args)), Err(TslmError::Num(_)) | Err(TslmError::Config(_))));
        assert!(!Path::new("m").exists());
    }

    #[test]
    fn unknown_mode_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("x.tsv");
        std::fs::write(&f, "").unwrap();
        let s = f.to_str().unwrap();
        let err = resolve(parse(&["evaluate", "--pred", s, "--gold", s, "--mode", "token"])).unwrap_err();
        assert!(matches!(err, TslmError::Config(_)));
    }
}
