use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use flowaug::config::RunConfig;
use flowaug::corpus::{generate_rows, reference_profiles};
use flowaug::error::Error;
use flowaug::experiment::{build_synthesizers, run_experiment, split_for};
use flowaug::formats::{
    dataset_hash, flows_json, read_checkpoint, read_dataset, read_flows_or_packets,
    read_packet_csv, write_dataset, write_json, write_packet_csv, ReportFile,
};
use flowaug_core::augment::{synthesize_flow, BalancePlan};
use flowaug_core::eval::{confusion, metrics};
use flowaug_core::flows::{class_stats, ClassStats};
use flowaug_core::seed::named_rng;
use flowaug_core::{CrnnModel, Dataset, FlowRecord, Variant};

#[derive(Parser, Debug)]
#[command(
    name = "flowaug",
    version,
    about = "Augment imbalanced flow datasets and compare classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assemble a packet CSV into a flow dataset and print class statistics
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Packet CSV (defaults to data.packets)
        #[arg(long)]
        packets: Option<PathBuf>,
    },
    /// Print class statistics for a flow dataset or packet CSV
    Stats {
        #[command(flatten)]
        common: Common,
        /// Flow dataset JSON or packet CSV (defaults to data.flows)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate the configured dataset variants
    Experiment {
        #[command(flatten)]
        common: Common,
    },
    /// Print synthetic flows for one class
    SynthDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        class: String,
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Re-evaluate a model checkpoint
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate on this dataset instead of the configured test split
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant, default_value = "actual")]
        variant: Variant,
    },
    /// Write the built-in synthetic imbalanced corpus as a packet CSV
    GenCorpus {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::ALL
        .into_iter()
        .find(|v| v.as_str() == s)
        .ok_or_else(|| format!("unknown variant {s:?}; expected actual, sampled or augmented"))
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output.dir = o.clone();
    }
    Ok(cfg)
}

fn flows_path(cfg: &RunConfig) -> PathBuf {
    cfg.data
        .flows
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("flows.json"))
}

fn load_flows(cfg: &RunConfig) -> anyhow::Result<Dataset> {
    let path = flows_path(cfg);
    if path.exists() || cfg.data.packets.is_none() {
        return Ok(read_dataset(&path)?);
    }
    let packets = cfg.data.packets.as_ref().expect("checked above");
    Ok(read_packet_csv(packets, cfg.data.idle_timeout)?)
}

fn print_stats(stats: &ClassStats) {
    println!("{:<24} {:>10} {:>9}", "class", "flows", "percent");
    for c in &stats.classes {
        println!("{:<24} {:>10} {:>8.3}%", c.name, c.count, c.percent);
    }
    println!("{:<24} {:>10}", "total", stats.total);
}

fn ingest(common: &Common, packets: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let Some(src) = packets.or(cfg.data.packets.clone()) else {
        return Err(
            Error::Config("no packet CSV given (use --packets or data.packets)".into()).into(),
        );
    };
    let ds = read_packet_csv(&src, cfg.data.idle_timeout)?;
    let dest = flows_path(&cfg);
    write_dataset(&dest, &ds)?;
    eprintln!("wrote {} flows to {}", ds.len(), dest.display());
    print_stats(&class_stats(&ds)?);
    Ok(())
}

fn stats(common: &Common, data: Option<PathBuf>) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let ds = match data {
        Some(p) => read_flows_or_packets(&p, cfg.data.idle_timeout)?,
        None => load_flows(&cfg)?,
    };
    print_stats(&class_stats(&ds)?);
    Ok(())
}

fn experiment(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let ds = load_flows(&cfg)?;
    let out = cfg.output.dir.clone();
    let result = run_experiment(&cfg, &ds, Some(&out), &mut |m| eprintln!("{m}"))?;
    if let Some(c) = &result.comparison {
        print!("{}", c.summary);
    }
    eprintln!("artifacts in {}", out.display());
    Ok(())
}

fn synth_demo(common: &Common, class: &str, count: usize) -> anyhow::Result<()> {
    if count == 0 {
        return Err(Error::Config("--count must be at least 1".into()).into());
    }
    let cfg = load_config(common)?;
    let ds = load_flows(&cfg)?;
    let (train, _) = split_for(&cfg, &ds)?;
    let plan = BalancePlan {
        targets: [(class.to_string(), 0)].into(),
    };
    let (synths, _) = build_synthesizers(&cfg, &train, &plan, &mut |m| eprintln!("{m}"))?;
    let mut rng = named_rng(cfg.seed, "synthesis");
    let mut flows: Vec<FlowRecord> = Vec::with_capacity(count);
    for _ in 0..count {
        let f = synthesize_flow(&synths[0], &mut rng).map_err(Error::from)?;
        f.validate().map_err(Error::from)?;
        flows.push(f);
    }
    print!("{}", flows_json(&flows));
    Ok(())
}

fn eval(
    common: &Common,
    checkpoint: &Path,
    data: Option<PathBuf>,
    variant: Variant,
) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let ck = read_checkpoint(checkpoint)?;
    let mut model = CrnnModel::from_checkpoint(&ck).map_err(Error::from)?;
    let test = match data {
        Some(p) => read_flows_or_packets(&p, cfg.data.idle_timeout)?,
        None => split_for(&cfg, &load_flows(&cfg)?)?.1,
    };
    if test.classes != model.classes {
        bail!(Error::Config(
            "checkpoint and dataset have different class indices".into()
        ));
    }
    let flows: Vec<&FlowRecord> = test.flows.iter().collect();
    let preds: Vec<usize> = model
        .predict(&flows)
        .map_err(Error::from)?
        .into_iter()
        .map(|p| p.0)
        .collect();
    let cm = confusion(
        &preds,
        &test.label_ids().map_err(Error::from)?,
        &test.classes,
    )
    .map_err(Error::from)?;
    let report = ReportFile {
        report: metrics(&cm, variant).map_err(Error::from)?,
        test_set_sha256: dataset_hash(&test),
        train_flows: 0,
    };
    let dest = cfg.output.dir.join("eval").join(format!("{variant}.json"));
    write_json(&dest, &report)?;
    let o = &report.report.overall;
    println!(
        "accuracy {:.4}  macro f1 {:.4}  weighted f1 {:.4}",
        o.accuracy, o.macro_avg.f1, o.weighted.f1
    );
    eprintln!("report written to {}", dest.display());
    Ok(())
}

fn gen_corpus(common: &Common) -> anyhow::Result<()> {
    let cfg = load_config(common)?;
    let mut corpus = cfg.corpus.clone();
    if common.seed.is_some() {
        corpus.seed = cfg.seed;
    }
    let rows = generate_rows(&reference_profiles(), &corpus)?;
    let dest = cfg
        .data
        .packets
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("packets.csv"));
    write_packet_csv(&dest, &rows)?;
    eprintln!("wrote {} packets to {}", rows.len(), dest.display());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest { common, packets } => ingest(&common, packets),
        Command::Stats { common, data } => stats(&common, data),
        Command::Experiment { common } => experiment(&common).context("experiment failed"),
        Command::SynthDemo {
            common,
            class,
            count,
        } => synth_demo(&common, &class, count),
        Command::Eval {
            common,
            checkpoint,
            data,
            variant,
        } => eval(&common, &checkpoint, data, variant),
        Command::GenCorpus { common } => gen_corpus(&common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .chain()
                .find_map(|c| c.downcast_ref::<Error>())
                .map_or(1, |e| e.kind().exit_code());
            ExitCode::from(code as u8)
        }
    }
}
