use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splatmae::error::{Error, Result};
use splatmae::gradcheck;
use splatmae::mae::Checkpoint;
use splatmae::pointcloud::ply::PlyFormat;
use splatmae::scene::SceneSpec;
use splatmae::train::{self, Dataset, RenderOptions, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "splatmae", version, about = "Masked-autoencoder and Gaussian-splatting pre-training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run stage-1 or stage-2 pre-training.
    Pretrain {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        #[arg(long)]
        config: PathBuf,
        /// Scene directory (or directory of scene directories); synthetic
        /// scenes are generated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Stage-1 checkpoint to start stage 2 from [default: <out>/stage1.ckpt].
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// Render a checkpoint's Gaussians on a scene described by a TOML file.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        views: usize,
        /// Stored Gaussian set to render instead of rebuilding from the network.
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, default_value_t = 200)]
        gs_iters: usize,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        /// One of autodiff, chamfer, raster, losses.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Report PSNR and reconstruction Chamfer for a checkpoint.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a checkpoint's Gaussians as a PLY file.
    ExportPly {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Scene index of the Gaussian set [default: first stored].
        #[arg(long)]
        index: Option<usize>,
        #[arg(long)]
        ascii: bool,
    },
}

fn pretrain(
    stage: u8,
    config: &Path,
    data: Option<&Path>,
    fraction: Option<f64>,
    seed: Option<u64>,
    out: &Path,
    init: Option<&Path>,
) -> Result<()> {
    let mut cfg = TrainConfig::read(config)?;
    cfg.stage = stage;
    cfg.fraction = fraction.unwrap_or(cfg.fraction);
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.validate()?;
    let dataset = match data {
        Some(dir) => Dataset::load(dir)?,
        None => Dataset::synthetic(&cfg)?,
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let resolved = out.join("config.toml");
    std::fs::write(&resolved, cfg.to_toml()).map_err(|e| Error::io(&resolved, e))?;
    if stage == 1 {
        let run = train::train_stage1(&dataset, &cfg, Some(out))?;
        if let Some(last) = run.reports.last() {
            println!("{} steps, final stage-1 loss {:.6}", run.reports.len(), last.l_stage1);
        }
    } else {
        let init = init.map(Path::to_path_buf).unwrap_or_else(|| out.join("stage1.ckpt"));
        let trainer = Trainer::from_checkpoint(&Checkpoint::read(&init)?, cfg.lr, cfg.weight_decay)?;
        let run = train::train_stage2(&dataset, &cfg, trainer, Some(out))?;
        let s = &run.summary;
        for (i, scene) in s.scenes.iter().enumerate() {
            println!(
                "scene {scene}: chamfer(P_GS, P_rec) {:.6} -> {:.6}",
                s.chamfer_before[i], s.chamfer_after[i]
            );
        }
        for scene in &s.skipped {
            println!("scene {scene}: skipped (splatting diverged)");
        }
    }
    println!("outputs in {}", out.display());
    Ok(())
}

fn render(ckpt: &Path, scene: &Path, out: &Path, views: usize, index: Option<usize>, gs_iters: usize) -> Result<()> {
    let ck = Checkpoint::read(ckpt)?;
    let spec = SceneSpec::read(scene)?;
    let opts = RenderOptions {
        views,
        gaussians: index,
        gs_iters,
        ..RenderOptions::default()
    };
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (i, v) in train::render_checkpoint(&ck, &spec, &opts)?.iter().enumerate() {
        v.render.write_ppm(out.join(format!("render_{i:04}.ppm")))?;
        v.ground_truth.write_ppm(out.join(format!("gt_{i:04}.ppm")))?;
        println!("view {i}: PSNR {}", train::metric_value(v.psnr));
    }
    Ok(())
}

fn run_gradcheck(module: Option<&str>, instances: usize, seed: u64) -> Result<bool> {
    let results = gradcheck::run_all(module, instances, seed)?;
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        println!(
            "{} {}/{}: max relative error {:.3e} over {} instances",
            if r.passed() { "PASS" } else { "FAIL" },
            r.module,
            r.name,
            r.max_rel_error,
            r.instances
        );
    }
    Ok(ok)
}

fn export_ply(ckpt: &Path, out: &Path, index: Option<usize>, ascii: bool) -> Result<()> {
    let sets = Checkpoint::read(ckpt)?.gaussians()?;
    let (scene, gs) = match index {
        Some(i) => sets.into_iter().find(|(s, _)| *s == i),
        None => sets.into_iter().next(),
    }
    .ok_or_else(|| Error::invalid("checkpoint holds no matching Gaussian set"))?;
    let format = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
    gs.write_ply(out, format)?;
    println!("wrote {} Gaussians of scene {scene} to {}", gs.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Pretrain {
            stage,
            config,
            data,
            fraction,
            seed,
            out,
            init,
        } => pretrain(*stage, config, data.as_deref(), *fraction, *seed, out, init.as_deref()).map(|_| true),
        Command::Render {
            ckpt,
            scene,
            out,
            views,
            index,
            gs_iters,
        } => render(ckpt, scene, out, *views, *index, *gs_iters).map(|_| true),
        Command::Gradcheck { module, instances, seed } => run_gradcheck(module.as_deref(), *instances, *seed),
        Command::Evaluate { ckpt, data } => Checkpoint::read(ckpt)
            .and_then(|ck| train::evaluate(&ck, &Dataset::load(data)?))
            .map(|r| {
                println!("{}", r.to_json());
                true
            }),
        Command::ExportPly { ckpt, out, index, ascii } => export_ply(ckpt, out, *index, *ascii).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
