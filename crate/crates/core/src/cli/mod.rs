//! Command-line front end: configuration layering and the subcommands.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_export_embeddings, cmd_gradcheck, cmd_prepare, cmd_synthesize, cmd_train,
    config_mismatches, describe_gradcheck, eval_drop, generate_all, gradcheck_batch, labels_path,
    load_compatible, score_generations, training_manifest, EvalResult, TrainSummary,
};
pub use config::{file_preset, ConfigBuilder, RunConfig};

use crate::datapipe::Split;
use crate::error::{Error, Result};
use crate::model::Preset;
use crate::textcodec::Task;

#[derive(Debug, Parser)]
#[command(
    name = "unimse",
    version,
    about = "Unified multimodal sentiment and emotion modelling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML file of run settings
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one setting (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = ["paper", "desk"])]
    pub preset: Option<String>,
    /// Remove the fusion adapters (and with them the contrastive layers)
    #[arg(long)]
    pub no_pmf: bool,
    /// Set both contrastive weights to zero
    #[arg(long)]
    pub no_cl: bool,
    #[arg(long, value_parser = ["a", "v", "av"])]
    pub drop_modality: Option<String>,
    /// Output directory (same as --set out_dir=...)
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

impl ConfigArgs {
    /// Preset defaults, then the file, then `--set`, then the dedicated flags.
    pub fn builder(&self) -> Result<ConfigBuilder> {
        let preset = match (&self.preset, &self.config) {
            (Some(p), _) => p.parse()?,
            (None, Some(path)) => file_preset(path)?.unwrap_or(Preset::Desk),
            (None, None) => Preset::Desk,
        };
        let mut b = ConfigBuilder::new(preset);
        if let Some(path) = &self.config {
            b.merge_file(path)?;
        }
        for s in &self.set {
            b.set(s)?;
        }
        if let Some(seed) = self.seed {
            let seed =
                i64::try_from(seed).map_err(|_| Error::Config(format!("seed {seed} too large")))?;
            b.set_value("seed", seed)?;
        }
        if self.no_pmf {
            b.set_value("no_pmf", true)?;
        }
        if self.no_cl {
            b.set_value("no_cl", true)?;
        }
        if let Some(d) = &self.drop_modality {
            b.set_value("drop_modality", d.as_str())?;
        }
        if let Some(out) = &self.out {
            b.set_value("out_dir", out.display().to_string())?;
        }
        Ok(b)
    }

    pub fn build(&self) -> Result<RunConfig> {
        self.builder()?.build()
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write raw synthetic MSA and ERC manifests with planted cues
    Synthesize {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Complete universal labels across an MSA and an ERC manifest
    Prepare {
        #[arg(long, value_name = "PATH")]
        msa: PathBuf,
        #[arg(long, value_name = "PATH")]
        erc: PathBuf,
        #[arg(long, default_value = "bow-cosine")]
        oracle: String,
        /// Fall back to all donors when no donor shares the polarity
        #[arg(long)]
        widen: bool,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train a model; writes checkpoints, the loss curve and the effective config
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate for every record and report MSA and ERC metrics
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, default_value = "all", value_parser = ["msa", "erc", "all"])]
        task: String,
        #[arg(long, default_value = "test", value_parser = ["train", "valid", "test", "all"])]
        split: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compare analytic gradients of the full loss with central differences
    Gradcheck {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Dump time-pooled fusion states of one adapter layer
    ExportEmbeddings {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        /// Adapter layer, 1-based
        #[arg(long)]
        layer: usize,
        /// Output matrix file
        #[arg(long = "file", value_name = "PATH")]
        file: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn task_filter(s: &str) -> Result<Option<Task>> {
    match s {
        "all" => Ok(None),
        t => t.parse().map(Some),
    }
}

fn split_filter(s: &str) -> Result<Option<Split>> {
    match s {
        "all" => Ok(None),
        t => t.parse().map(Some),
    }
}

/// Runs one parsed command and returns what it prints.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Synthesize { cfg } => cmd_synthesize(&cfg.build()?),
        Command::Prepare {
            msa,
            erc,
            oracle,
            widen,
            out,
        } => cmd_prepare(&msa, &erc, &oracle, widen, &out),
        Command::Train { cfg } => Ok(cmd_train(&cfg.build()?)?.describe()),
        Command::Eval {
            checkpoint,
            manifest,
            task,
            split,
            cfg,
        } => {
            let b = cfg.builder()?;
            let run = b.build()?;
            let out = match &cfg.out {
                Some(o) => o.clone(),
                None => checkpoint
                    .parent()
                    .map(|p| p.join("eval"))
                    .unwrap_or_else(|| "eval".into()),
            };
            let r = cmd_eval(
                &checkpoint,
                &manifest,
                task_filter(&task)?,
                split_filter(&split)?,
                &run,
                b.explicit_keys(),
                &out,
            )?;
            Ok(format!(
                "{}metrics written to {}\n",
                r.to_text(),
                out.join("metrics.txt").display()
            ))
        }
        Command::Gradcheck { cfg } => {
            let run = cfg.build()?;
            run.save(&run.out_dir())?;
            let r = cmd_gradcheck(&run)?;
            let text = describe_gradcheck(&r);
            if r.passed() {
                Ok(text)
            } else {
                let worst: Vec<String> = r
                    .failures
                    .iter()
                    .take(10)
                    .map(|c| {
                        format!(
                            "{}[{}] ({}) rel {:.3e}",
                            c.param, c.index, c.group, c.rel_error
                        )
                    })
                    .collect();
                Err(Error::invalid(
                    "gradcheck",
                    format!("{text}worst coordinates: {}", worst.join(", ")),
                ))
            }
        }
        Command::ExportEmbeddings {
            checkpoint,
            manifest,
            layer,
            file,
            cfg,
        } => {
            let b = cfg.builder()?;
            let run = b.build()?;
            let m = cmd_export_embeddings(
                &checkpoint,
                &manifest,
                layer,
                &file,
                &run,
                b.explicit_keys(),
            )?;
            Ok(format!(
                "wrote {}x{} matrix to {} and labels to {}\n",
                m.len(),
                m.dim(),
                file.display(),
                labels_path(&file).display()
            ))
        }
    }
}

#[cfg(test)]
mod tests;
