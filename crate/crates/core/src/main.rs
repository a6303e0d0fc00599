use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vesrnet::analysis::{count_flops, count_params, gradcheck_config, gradcheck_model, GRADCHECK_TOL_ALIGN, GRADCHECK_TOL_CORE};
use vesrnet::attention::attention_memory_footprint;
use vesrnet::data::{degrade_clip, generate_synthetic_clip, read_clip, write_clip, write_ppm_frames, DegradationSpec};
use vesrnet::model::{preset, VesrNet};
use vesrnet::train::{
    evaluate, parse_config, psnr, restore_clip, write_history_csv, SyntheticDataset, TrainConfig, Trainer,
};
use vesrnet::Result;

#[derive(Parser)]
#[command(name = "vesrnet", version, about = "Multi-frame 4x video super-resolution")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic HR clips and their degraded LR counterparts.
    GenData {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 7)]
        frames: usize,
        /// HR frame side.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        clips: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f32,
    },
    /// Train on synthetic clips.
    Train {
        #[arg(long, default_value = "tiny")]
        preset: String,
        /// `key = value` file overriding training and model fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the data seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the number of updates.
        #[arg(long)]
        steps: Option<usize>,
        /// Checkpoint to write; resumed from when `--resume` is given.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        resume: bool,
        /// Loss-history CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Super-resolve an LR clip with a checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Directory for PPM frames; defaults to `<output>.frames`.
        #[arg(long)]
        frames_dir: Option<PathBuf>,
    },
    /// PSNR between two clips of equal shape.
    Psnr { a: PathBuf, b: PathBuf },
    /// Parameter counts per module.
    CountParams {
        #[arg(long, default_value = "full")]
        preset: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Operation counts per module for one forward pass.
    CountFlops {
        #[arg(long, default_value = "full")]
        preset: String,
        /// LR frame side.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Finite-difference check of the model gradient.
    Gradcheck {
        /// Defaults to the width-8 tiny variant.
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
    },
    /// Relation-matrix entries of full and separate attention.
    Footprint {
        #[arg(long, default_value_t = 7)]
        frames: u64,
        #[arg(long, default_value_t = 64)]
        size: u64,
        #[arg(long, default_value_t = 128)]
        channels: u64,
    },
}

fn model_for(name: &str, checkpoint: Option<&Path>) -> Result<VesrNet<f32>> {
    match checkpoint {
        Some(path) => VesrNet::load(path),
        None => VesrNet::new(&preset(name)?, 0),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            output,
            seed,
            frames,
            size,
            clips,
            noise,
        } => {
            fs::create_dir_all(&output)?;
            let spec = DegradationSpec {
                noise_sigma: noise,
                ..Default::default()
            };
            for i in 0..clips {
                let s = seed.wrapping_add(i as u64);
                let hr = generate_synthetic_clip(s, frames, size, size)?;
                let lr = degrade_clip(&hr, &spec, s)?;
                write_clip(output.join(format!("clip{i:03}_hr.vesr")), &hr)?;
                write_clip(output.join(format!("clip{i:03}_lr.vesr")), &lr)?;
            }
            println!("wrote {clips} clip pairs to {}", output.display());
        }
        Command::Train {
            preset: name,
            config,
            seed,
            steps,
            checkpoint,
            resume,
            output,
        } => {
            let text = match &config {
                Some(path) => fs::read_to_string(path)?,
                None => String::new(),
            };
            let (mut tcfg, mcfg) = parse_config(&text, TrainConfig::default(), preset(&name)?)?;
            if let Some(s) = seed {
                tcfg.seed = s;
            }
            let steps = steps.unwrap_or(tcfg.total_steps());
            let mut trainer = if resume {
                Trainer::resume(&checkpoint, tcfg.clone())?
            } else {
                Trainer::new(VesrNet::new(&mcfg, tcfg.model_seed)?, tcfg.clone())?
            };
            let data = SyntheticDataset::generate(&tcfg, trainer.net.config.n_frames)?;
            let done = trainer.steps_done() as usize;
            let result = trainer.run(&data, steps.saturating_sub(done), Some(&checkpoint));
            if let Some(path) = &output {
                write_history_csv(path, &trainer.history)?;
            }
            result?;
            if let (Some(first), Some(last)) = (trainer.history.first(), trainer.history.last()) {
                println!("step {} loss {:.6} -> step {} loss {:.6}", first.step, first.loss, last.step, last.loss);
            }
            print!("{}", evaluate(&trainer.net, &data.pairs(), 1)?.table());
        }
        Command::Infer {
            checkpoint,
            input,
            output,
            frames_dir,
        } => {
            let net = VesrNet::load(&checkpoint)?;
            let lr = read_clip(&input)?;
            let hr = restore_clip(&net, &lr)?;
            write_clip(&output, &hr)?;
            let dir = frames_dir.unwrap_or_else(|| {
                let mut s = output.clone().into_os_string();
                s.push(".frames");
                s.into()
            });
            let written = write_ppm_frames(&dir, &hr)?;
            println!(
                "{} x {} -> {} x {}, {} frames; PPM in {}",
                lr.height(),
                lr.width(),
                hr.height(),
                hr.width(),
                written.len(),
                dir.display()
            );
        }
        Command::Psnr { a, b } => {
            let (a, b) = (read_clip(a)?, read_clip(b)?);
            println!("{:.2} dB", psnr(a.frames(), b.frames(), 1.0)?);
        }
        Command::CountParams { preset: name, checkpoint } => {
            let report = count_params(&model_for(&name, checkpoint.as_deref())?);
            print!("{}\n{}", report.table(), report.csv());
        }
        Command::CountFlops { preset: name, size } => {
            let report = count_flops(&model_for(&name, None)?, size, size)?;
            print!("{}\n{}", report.table(), report.csv());
        }
        Command::Gradcheck { preset: name, seed, samples } => {
            let cfg = match name {
                Some(name) => preset(&name)?,
                None => gradcheck_config(),
            };
            let r = gradcheck_model(&cfg, seed, samples)?;
            println!(
                "{} samples ({} kinked draws skipped); max rel err {:.3e} (core {:.3e} <= {GRADCHECK_TOL_CORE:e}, align {:.3e} <= {GRADCHECK_TOL_ALIGN:e})",
                r.samples.len(),
                r.kinks_skipped,
                r.max_rel_err,
                r.max_rel_err_core,
                r.max_rel_err_align
            );
        }
        Command::Footprint { frames, size, channels } => {
            let f = attention_memory_footprint(frames, size, size, channels)?;
            println!(
                "full {} entries, separate {} entries, ratio {:.1}",
                f.full_entries, f.separate_entries, f.ratio
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
