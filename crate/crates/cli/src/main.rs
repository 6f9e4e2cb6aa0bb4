use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hnmvts::bench::{
    read_results, render_csv, render_text, run_experiment, run_single, summarize, ExperimentConfig,
    RESULTS_FILE,
};
use hnmvts::checkpoint::Checkpoint;
use hnmvts::data::{chrono_split, gen_synthetic, load_csv, write_csv, WindowSet};
use hnmvts::trainer::evaluate;

// Training allocates and frees large gradient buffers every step; the
// system allocator hands those back to the kernel and pays page faults on
// each reuse.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(
    name = "hnmvts",
    version,
    about = "Hypernetwork final layers for multivariate forecasting"
)]
struct Cli {
    /// Print the full default configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a checkpoint plus its history.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: the config's output directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replace the hypernetwork of a checkpoint by the weights it generates.
    Bake {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of a CSV file; prints JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
    },
    /// Run the full grid and write results plus summary tables.
    Bench {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Write the synthetic dataset described by a config.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the channel embeddings of a hypernetwork checkpoint as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if cli.print_config {
        print!("{}", ExperimentConfig::default().to_toml()?);
        return Ok(());
    }
    match cli.command {
        Some(Command::Train { config, seed, out }) => train(&config, seed, out),
        Some(Command::Bake { checkpoint, out }) => bake(&checkpoint, &out),
        Some(Command::Eval {
            checkpoint,
            data,
            split,
        }) => eval(&checkpoint, &data, split),
        Some(Command::Bench { spec }) => bench(&spec),
        Some(Command::Synth { spec, out }) => synth(&spec, &out),
        Some(Command::ExportEmbeddings { checkpoint, out }) => export_embeddings(&checkpoint, &out),
        None => bail!("no command given (see --help)"),
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn train(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(config)?;
    let seed = seed.unwrap_or(cfg.train.seed);
    let out = out.unwrap_or_else(|| cfg.output_dir());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let data = cfg.prepare()?;
    let run = run_single(&cfg, &data, cfg.model.variant, cfg.train.horizon, seed)?;

    let mut ck = Checkpoint::new(run.trained);
    ck.scaler = data.scaler;
    let mut echo = cfg.clone();
    echo.train.seed = seed;
    ck.echo = serde_json::to_value(&echo)?;
    ck.save(out.join("checkpoint.json"))?;
    run.history.write_csv(out.join("history.csv"))?;
    println!("{}", serde_json::to_string_pretty(&run.record)?);
    Ok(())
}

fn bake(checkpoint: &Path, out: &Path) -> Result<()> {
    let mut ck = Checkpoint::load(checkpoint)?;
    let before = ck.model.n_trainable();
    ck.model = ck.model.bake()?;
    ck.save(out)?;
    log::info!(
        "baked {} -> {} ({before} -> {} parameters)",
        checkpoint.display(),
        out.display(),
        ck.model.n_trainable()
    );
    Ok(())
}

fn eval(checkpoint: &Path, data: &Path, split: Split) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg: ExperimentConfig = if ck.echo.is_null() {
        ExperimentConfig::default()
    } else {
        serde_json::from_value(ck.echo.clone())
            .context("checkpoint carries an unreadable config")?
    };
    let table = load_csv(data, cfg.data.timestamp_column.as_deref())?;
    let (train, val, test) = chrono_split(&table, &cfg.split)?;
    let part = match split {
        Split::Train => train,
        Split::Val => val,
        Split::Test => test,
    };
    let part = match &ck.scaler {
        Some(s) => s.transform(&part)?,
        None => part,
    };
    let mc = ck.model.config();
    let windows = WindowSet::new(part, mc.lookback, mc.horizon)?;
    let m = evaluate(&ck.model, &windows)?;
    let report = serde_json::json!({
        "mse": m.mse,
        "mae": m.mae,
        "windows": windows.len(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn bench(spec: &Path) -> Result<()> {
    let cfg = load_config(spec)?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    run_experiment(&cfg, &out)?;
    // Summarise everything in the results file, including earlier runs.
    let records = read_results(out.join(RESULTS_FILE))?;
    let rows = summarize(&records)?;
    let text = render_text(&rows);
    fs::write(out.join("summary.txt"), &text)?;
    fs::write(out.join("summary.csv"), render_csv(&rows))?;
    print!("{text}");
    Ok(())
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(spec)?;
    let s = &cfg.data.synthetic;
    let table = gen_synthetic(&s.spec(), s.seed)?;
    write_csv(&table, out)?;
    log::info!(
        "wrote {} rows x {} channels to {}",
        table.len(),
        table.n_channels(),
        out.display()
    );
    Ok(())
}

fn export_embeddings(checkpoint: &Path, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let Some(z) = ck.model.embeddings() else {
        bail!(
            "{} has no channel embeddings (baseline or baked model)",
            checkpoint.display()
        );
    };
    let d = z.shape()[1];
    let mut text = String::from("channel");
    for j in 0..d {
        text.push_str(&format!(",z{j}"));
    }
    text.push('\n');
    for (name, row) in ck
        .model
        .channel_names()
        .iter()
        .zip(z.data().chunks_exact(d))
    {
        text.push_str(name);
        for v in row {
            text.push_str(&format!(",{v:?}"));
        }
        text.push('\n');
    }
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
