use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use spbox_core::benchmark::{
    run_ablation, run_benchmark, run_refinement, synth_corpus_with, DatasetManifest, Instance, RunConfig, SynthParams,
};
use spbox_core::segmenter::{BackendRegistry, GraphCutParams};
use spbox_core::service::SessionStore;
use spbox_core::{BoxMode, EncoderVariant};

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Interactive segmentation benchmarks and session server"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clicks-to-target benchmark for one encoder.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sp+spbox")]
        encoder: EncoderVariant,
        /// Report path; a CSV is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// The benchmark once per encoder, one table row each.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "eu,sp,sp+bbox,sp+dt,sp+spbox")]
        encoders: Vec<EncoderVariant>,
        /// Table path (JSON); a CSV is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Refine each instance's initial mask under growing click budgets.
    Refine {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sp+spbox")]
        encoder: EncoderVariant,
        #[arg(long, value_delimiter = ',', default_value = "1,4,10")]
        budgets: Vec<u32>,
        /// Backends to compare; defaults to `--backend`.
        #[arg(long, value_delimiter = ',')]
        backends: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded synthetic corpus with a manifest.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = SynthParams::default().width)]
        width: u32,
        #[arg(long, default_value_t = SynthParams::default().height)]
        height: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the interactive session protocol over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[command(flatten)]
        params: ParamArgs,
    },
}

#[derive(Args)]
struct ParamArgs {
    /// Graph-cut parameters as `key=value`, comma separated.
    #[arg(long)]
    params: Option<String>,
    /// File of graph-cut `key=value` lines, applied before `--params`.
    #[arg(long)]
    params_file: Option<PathBuf>,
}

impl ParamArgs {
    fn resolve(&self) -> Result<GraphCutParams> {
        let mut p = GraphCutParams::default();
        if let Some(path) = &self.params_file {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            p.apply(&text)?;
        }
        if let Some(text) = &self.params {
            p.apply(text)?;
        }
        Ok(p)
    }
}

#[derive(Args)]
struct Common {
    /// Tab-separated manifest: image, mask, instance id, optional initial mask.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 0.90)]
    threshold: f64,
    #[arg(long, default_value_t = 20)]
    max_clicks: u32,
    #[arg(long, default_value_t = 1000)]
    superpixels: u32,
    #[arg(long, default_value = "graphcut")]
    backend: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "center_corner")]
    box_mode: BoxMode,
    #[command(flatten)]
    params: ParamArgs,
}

impl Common {
    fn config(&self, encoder: EncoderVariant) -> Result<RunConfig> {
        let config = RunConfig {
            encoder,
            superpixels: self.superpixels,
            threshold: self.threshold,
            max_clicks: self.max_clicks,
            backend: self.backend.clone(),
            seed: self.seed,
            box_mode: self.box_mode,
            graphcut: self.params.resolve()?,
        };
        config.validate()?;
        Ok(config)
    }

    fn instances(&self) -> Result<Vec<Instance>> {
        let manifest = DatasetManifest::load(&self.dataset)?;
        Ok(manifest.load_instances()?)
    }
}

fn write_with_csv(path: &Path, json: String, csv: impl FnOnce(fs::File) -> spbox_core::Result<()>) -> Result<()> {
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    let csv_path = path.with_extension("csv");
    csv(fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { common, encoder, out } => {
            let config = common.config(encoder)?;
            let report = run_benchmark(&common.instances()?, &config)?;
            for s in &report.skipped {
                log::warn!("skipped {}: {}", s.id, s.reason);
            }
            match report.mean_clicks {
                Some(m) => println!(
                    "{encoder}: mean clicks {m:.3} over {} instances",
                    report.instances.len()
                ),
                None => bail!("every instance was skipped"),
            }
            if let Some(path) = out {
                report.save(&path)?;
            }
        }
        Command::Ablation { common, encoders, out } => {
            if encoders.is_empty() {
                bail!("--encoders must name at least one encoder");
            }
            let configs = encoders.iter().map(|&e| common.config(e)).collect::<Result<Vec<_>>>()?;
            let table = run_ablation(&common.instances()?, &configs)?;
            print!("{}", table.render());
            if let Some(path) = out {
                write_with_csv(&path, serde_json::to_string_pretty(&table)?, |f| table.write_csv(f))?;
            }
        }
        Command::Refine {
            common,
            encoder,
            budgets,
            mut backends,
            out,
        } => {
            let config = common.config(encoder)?;
            if backends.is_empty() {
                backends.push(config.backend.clone());
            }
            let table = run_refinement(&common.instances()?, &config, &budgets, &backends)?;
            print!("{}", table.render());
            if let Some(path) = out {
                write_with_csv(&path, serde_json::to_string_pretty(&table)?, |f| table.write_csv(f))?;
            }
        }
        Command::Synth {
            n,
            seed,
            width,
            height,
            out,
        } => {
            let manifest = synth_corpus_with(n, seed, &SynthParams::at_size(width, height))?.write(&out)?;
            println!(
                "wrote {} instances to {}",
                manifest.entries.len(),
                out.join("manifest.tsv").display()
            );
        }
        Command::Serve { addr, params } => {
            let store = Arc::new(SessionStore::new(BackendRegistry::with_defaults(params.resolve()?)));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(spbox_server::serve(addr, store))?;
        }
    }
    Ok(())
}
