//! Writes the synthetic scenes a training config would generate as an
//! on-disk dataset (frames, depth, cameras and a point cloud per scene).
//!
//! cargo run --release --example synth_dataset -- configs/tiny.toml data/tiny

use splatmae::train::{Dataset, TrainConfig};

fn main() -> splatmae::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(config), Some(out)) = (args.next(), args.next()) else {
        eprintln!("usage: synth_dataset <config.toml> <out_dir>");
        std::process::exit(2);
    };
    let cfg = TrainConfig::read(&config)?;
    let data = Dataset::synthetic(&cfg)?;
    data.write(&out)?;
    for s in &data.scenes {
        println!("{}: {} views, {} points", s.name, s.frames.len(), s.cloud.len());
    }
    let back = Dataset::load(&out)?;
    println!("reloaded {} scenes from {out}", back.scenes.len());
    Ok(())
}
