//! Command-line driver: each subcommand runs one pipeline stage against a
//! working directory of artifacts; `pipeline` runs them all in order.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mantra::config::RunConfig;
use mantra::error::{Error, Result};
use mantra::eval::online_experiment;
use mantra::memory::{online_ingest, Controller, MemoryStore};
use mantra::persist::{
    load_checkpoint, load_memory, save_checkpoint, save_memory, save_memory_inspection,
    save_online_curve, save_online_svg, save_report, Checkpoint,
};
use mantra::pipeline::{
    baselines_stage, eval_config, generate_data, load_split, memory_stage, pipeline_run,
    pretrain_stage, refine_stage,
};

#[derive(Parser)]
#[command(name = "mantra", about = "Memory-augmented multimodal trajectory prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides applied after the config file, e.g. --set seed=7.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Working directory for datasets, checkpoints, snapshots, and reports.
    #[arg(long, default_value = "run")]
    dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic scenario suite and write the train/test split.
    GenData(Common),
    /// Train the past/future encoders and the decoder as an autoencoder.
    Pretrain(Common),
    /// Train the memory write controller against the pretrained model.
    TrainController(Common),
    /// Fill the memory from the training split (controller-gated by default).
    FillMemory(Common),
    /// Jointly train the map refinement module and finetune the decoder.
    TrainRefine(Common),
    /// Evaluate on the test split against the baselines and write report.csv.
    Evaluate(Common),
    /// Run the incremental-ingestion experiment on the test split.
    Online {
        #[command(flatten)]
        common: Common,
        /// Also write an SVG plot of error versus samples observed.
        #[arg(long)]
        svg: bool,
    },
    /// Stream a trajectory file through the write controller into the memory.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Dataset file of new trajectories to offer to the controller.
        #[arg(long)]
        input: PathBuf,
    },
    /// Dump every memory entry with its decoded future to a CSV.
    InspectMemory(Common),
    /// Run every stage in order: gen-data through evaluate.
    Pipeline(Common),
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut text = match &common.config {
        Some(path) => std::fs::read_to_string(path)?,
        None => String::new(),
    };
    for kv in &common.set {
        text.push('\n');
        text.push_str(kv);
    }
    RunConfig::parse(&text)
}

fn checkpoint_path(common: &Common) -> PathBuf {
    common.dir.join("model.ckpt")
}

fn memory_path(common: &Common) -> PathBuf {
    common.dir.join("memory.snap")
}

fn load_artifacts(common: &Common, config: &RunConfig) -> Result<Checkpoint> {
    load_checkpoint(&checkpoint_path(common), Some(&config.hash()))
}

fn require_controller(config: &RunConfig, ckpt: &Checkpoint) -> Result<Controller> {
    if config.no_controller {
        return Err(Error::Config(
            "this command needs a controller but no_controller is set".into(),
        ));
    }
    ckpt.controller.clone().ok_or_else(|| {
        Error::Input("checkpoint has no controller; run train-controller first".into())
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let config = load_config(&c)?;
            std::fs::create_dir_all(&c.dir)?;
            generate_data(&config, &c.dir)?;
            println!("wrote train/test split and maps to {}", c.dir.display());
        }
        Command::Pretrain(c) => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let model = pretrain_stage(&config, &data.train)?;
            save_checkpoint(&checkpoint_path(&c), &config.hash(), &model, None, None)?;
            println!("pretrained on {} samples", data.train.len());
        }
        Command::TrainController(c) => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let ckpt = load_artifacts(&c, &config)?;
            let (controller, memory) = memory_stage(&config, &data.train, &ckpt.encdec)?;
            save_checkpoint(
                &checkpoint_path(&c),
                &config.hash(),
                &ckpt.encdec,
                ckpt.refiner.as_ref(),
                controller.as_ref(),
            )?;
            save_memory(&memory_path(&c), &memory, &config.hash())?;
            println!(
                "controller trained; memory holds {} of {} samples",
                memory.len(),
                data.train.len()
            );
        }
        Command::FillMemory(c) => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let ckpt = load_artifacts(&c, &config)?;
            let memory = if config.no_controller {
                mantra::memory::fill_memory_all(&data.train, &ckpt.encdec)?
            } else {
                let controller = require_controller(&config, &ckpt)?;
                mantra::memory::fill_memory(&data.train, &ckpt.encdec, &controller)?
            };
            save_memory(&memory_path(&c), &memory, &config.hash())?;
            println!(
                "memory holds {} of {} samples",
                memory.len(),
                data.train.len()
            );
        }
        Command::TrainRefine(c) => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let mut ckpt = load_artifacts(&c, &config)?;
            let memory = load_memory(&memory_path(&c), Some(&config.hash()))?;
            let refiner = refine_stage(&config, &data, &mut ckpt.encdec, &memory)?;
            save_checkpoint(
                &checkpoint_path(&c),
                &config.hash(),
                &ckpt.encdec,
                refiner.as_ref(),
                ckpt.controller.as_ref(),
            )?;
            println!("refinement trained over {} samples", data.train.len());
        }
        Command::Evaluate(c) => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let ckpt = load_artifacts(&c, &config)?;
            let memory = load_memory(&memory_path(&c), Some(&config.hash()))?;
            let baselines = baselines_stage(&config, &data.train)?;
            let report = mantra::eval::evaluate(
                &data.test,
                &ckpt.encdec,
                &memory,
                ckpt.refiner.as_ref().map(|r| (r, &data.maps)),
                Some(&baselines),
                &eval_config(&config),
            )?;
            let path = c.dir.join("report.csv");
            save_report(&path, &report)?;
            for row in &report.rows {
                println!(
                    "{:<10} K={:<3} ADE@4s={:.3} FDE@4s={:.3}",
                    row.method, row.k, row.ade[3], row.fde[3]
                );
            }
            println!("report written to {}", path.display());
        }
        Command::Online { common: c, svg } => {
            let config = load_config(&c)?;
            let data = load_split(&config, &c.dir)?;
            let ckpt = load_artifacts(&c, &config)?;
            let controller = require_controller(&config, &ckpt)?;
            let curve = online_experiment(
                &data.test,
                &ckpt.encdec,
                &controller,
                &MemoryStore::default(),
                config.online_batch,
                config.online_runs,
                config.sub_seed("online"),
            )?;
            let path = c.dir.join("online.csv");
            save_online_curve(&path, &curve, &config.hash())?;
            println!("online curve ({} points) written to {}", curve.points.len(), path.display());
            if svg {
                let svg_path = c.dir.join("online.svg");
                save_online_svg(&svg_path, &curve)?;
                println!("plot written to {}", svg_path.display());
            }
        }
        Command::Ingest { common: c, input } => {
            let config = load_config(&c)?;
            let ckpt = load_artifacts(&c, &config)?;
            let controller = require_controller(&config, &ckpt)?;
            let mut memory = load_memory(&memory_path(&c), Some(&config.hash()))?;
            let tracks = mantra::data::files::load_dataset(&input, None, &[])?;
            let epoch = memory.entries.iter().map(|e| e.write_epoch).max().map_or(0, |e| e + 1);
            let (mut offered, mut written) = (0usize, 0usize);
            for track in &tracks {
                for sample in mantra::data::sliding_window_chunks(
                    track,
                    config.past_len(),
                    config.future_len(),
                    1,
                )? {
                    offered += 1;
                    if online_ingest(&sample, &mut memory, &ckpt.encdec, &controller, epoch)? {
                        written += 1;
                    }
                }
            }
            save_memory(&memory_path(&c), &memory, &config.hash())?;
            println!("wrote {written} of {offered} offered samples; memory now {}", memory.len());
        }
        Command::InspectMemory(c) => {
            let config = load_config(&c)?;
            let ckpt = load_artifacts(&c, &config)?;
            let memory = load_memory(&memory_path(&c), Some(&config.hash()))?;
            let path = c.dir.join("memory_dump.csv");
            save_memory_inspection(&path, &memory, &ckpt.encdec, &config.hash())?;
            println!("{} entries dumped to {}", memory.len(), path.display());
        }
        Command::Pipeline(c) => {
            let config = load_config(&c)?;
            let out = pipeline_run(&config, &c.dir)?;
            for row in &out.report.rows {
                println!(
                    "{:<10} K={:<3} ADE@4s={:.3} FDE@4s={:.3}",
                    row.method, row.k, row.ade[3], row.fde[3]
                );
            }
            println!("report written to {}", out.report_path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Error::Stage { stage, source }) => {
            eprintln!("stage `{stage}` failed: {source}");
            if matches!(*source, Error::Config(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
