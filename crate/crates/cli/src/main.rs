use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use vsrag_core::pipeline::eval::{format_table, run_eval, run_sweep, summarize, sweep_configs, SweepParam};
use vsrag_core::pipeline::record::{read_records, write_records, RunRecord};
use vsrag_core::pipeline::synth::{generate_synthetic_corpus, SynthConfig};
use vsrag_core::pipeline::{config::open_endpoint, load_documents, Dataset, Engine, Mode, RunConfig};
use vsrag_core::protocol::server::MockServer;
use vsrag_core::protocol::MockBackend;
use vsrag_core::verifier::StrategyKind;

#[derive(Parser)]
#[command(
    name = "vsrag",
    version,
    about = "Video question answering with speculative drafting and two-stage verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Document index management.
    Index {
        #[command(subcommand)]
        command: IndexCommand,
    },
    /// Answer every dataset item under one configuration.
    Run(RunArgs),
    /// Summarize a record file.
    Eval {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one configuration per parameter value over the same items.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Summary JSON path.
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Generate a synthetic misleading-document corpus.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        size: usize,
        #[arg(long, default_value_t = 0.5)]
        transfer_fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        substitution_fraction: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a fixture file over HTTP.
    MockServe {
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Let simulated latency actually elapse.
        #[arg(long)]
        real_sleep: bool,
    },
}

#[derive(Subcommand)]
enum IndexCommand {
    /// Embed a JSONL document file and write an index.
    Build {
        #[arg(long)]
        docs: PathBuf,
        /// HTTP base URL or `mock:<fixtures.json>`.
        #[arg(long)]
        embed_endpoint: String,
        /// Output path; `.jsonl` writes JSON lines, anything else the binary format.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        bins_per_channel: u32,
        #[arg(long, default_value_t = 8)]
        max_parallel: usize,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Index file overriding the dataset's.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Record measured wall-clock stage times instead of simulated ones.
    #[arg(long)]
    wall_clock: bool,
    /// Record output (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<(RunConfig, Dataset)> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg.apply_env_overrides();
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(s) = self.strategy {
            cfg.verify.strategy = s;
        }
        if let Some(d) = self.delta {
            cfg.verify.delta = d;
        }
        if let Some(k) = self.k {
            cfg.retrieval.k = k;
        }
        if let Some(t) = self.theta {
            cfg.keyframe.theta = t;
        }
        if let Some(s) = self.seed {
            cfg.verify.rng_seed = s;
        }
        cfg.record_wall_clock |= self.wall_clock;
        cfg.validate()?;
        let mut dataset =
            Dataset::load(&self.dataset).with_context(|| format!("loading dataset {}", self.dataset.display()))?;
        if let Some(i) = &self.index {
            dataset.index = Some(i.clone());
        }
        Ok((cfg, dataset))
    }
}

fn write_record_file(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn report(records: &[RunRecord], summary_path: Option<&Path>) -> Result<()> {
    let summaries = summarize(records);
    print!("{}", format_table(&summaries));
    if let Some(p) = summary_path {
        std::fs::write(p, serde_json::to_vec_pretty(&summaries)?)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Index {
            command:
                IndexCommand::Build {
                    docs,
                    embed_endpoint,
                    out,
                    bins_per_channel,
                    max_parallel,
                },
        } => {
            let embedder = open_endpoint(&embed_endpoint)?;
            let index = load_documents(&docs, embedder.as_ref(), max_parallel.max(1), bins_per_channel)?;
            let w = BufWriter::new(File::create(&out).with_context(|| format!("creating {}", out.display()))?);
            if out.extension().is_some_and(|e| e == "jsonl") {
                index.write_jsonl(w)?;
            } else {
                index.write_binary(w)?;
            }
            eprintln!(
                "indexed {} documents (dim {}) into {}",
                index.len(),
                index.dim(),
                out.display()
            );
        }
        Command::Run(args) => {
            let (cfg, dataset) = args.load()?;
            let engine = Engine::from_config(cfg, &dataset)?;
            let records = run_eval(&engine, &dataset.items);
            write_record_file(&args.out, &records)?;
            report(&records, None)?;
        }
        Command::Eval { records, out } => {
            let f = File::open(&records).with_context(|| format!("opening {}", records.display()))?;
            let records = read_records(BufReader::new(f))?;
            if records.is_empty() {
                bail!("no records found");
            }
            report(&records, out.as_deref())?;
        }
        Command::Sweep {
            run,
            param,
            values,
            summary,
        } => {
            let (cfg, dataset) = run.load()?;
            let configs = sweep_configs(&cfg, param, &values)?;
            let engine = Engine::from_config(cfg, &dataset)?;
            let records = run_sweep(&engine, &configs, &dataset.items)?;
            write_record_file(&run.out, &records)?;
            report(&records, summary.as_deref())?;
        }
        Command::Synth {
            seed,
            size,
            transfer_fraction,
            substitution_fraction,
            out,
        } => {
            let mut cfg = SynthConfig::new(seed, size);
            cfg.transfer_fraction = transfer_fraction;
            cfg.substitution_fraction = substitution_fraction;
            let corpus = generate_synthetic_corpus(&cfg, &out)?;
            eprintln!(
                "wrote {} items to {} (manifest {}, config {})",
                corpus.items.len(),
                corpus.root.display(),
                corpus.manifest.display(),
                corpus.run_config.display()
            );
        }
        Command::MockServe {
            fixtures,
            port,
            host,
            real_sleep,
        } => {
            let mock = MockBackend::from_path(&fixtures)?.with_real_sleep(real_sleep);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            let server = MockServer::start(Arc::new(mock), addr)?;
            println!("listening on {}", server.url());
            std::io::stdout().flush()?;
            server.wait();
        }
    }
    Ok(())
}
