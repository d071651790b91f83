//! Stage-1 then stage-2 pre-training on small synthetic scenes, followed by
//! evaluation, all in-process.
//!
//! cargo run --release --example two_stage_pretrain -- [out_dir]

use splatmae::mae::Checkpoint;
use splatmae::train::{evaluate, train_stage1, train_stage2, Dataset, TrainConfig, Trainer};

fn main() -> splatmae::Result<()> {
    let out = match std::env::args().nth(1) {
        Some(d) => std::path::PathBuf::from(d),
        None => std::env::temp_dir().join("splatmae_two_stage"),
    };
    std::fs::create_dir_all(&out).map_err(|e| splatmae::Error::io(&out, e))?;
    let mut cfg = TrainConfig::from_toml(include_str!("../../../configs/tiny.toml"))?;
    let data = Dataset::synthetic(&cfg)?;

    let s1 = train_stage1(&data, &cfg, Some(&out))?;
    let (a, b) = (&s1.reports[0], &s1.reports[s1.reports.len() - 1]);
    println!("stage 1: {} steps, L_stage1 {:.4} -> {:.4}", s1.reports.len(), a.l_stage1, b.l_stage1);

    cfg.stage = 2;
    cfg.epochs = 1;
    let ck = Checkpoint::read(out.join("stage1.ckpt"))?;
    let trainer = Trainer::from_checkpoint(&ck, cfg.lr, cfg.weight_decay)?;
    let s2 = train_stage2(&data, &cfg, trainer, Some(&out))?;
    for r in &s2.reports {
        println!(
            "stage 2 scene {}: L_stage1 {:.4}, L_GS-image {:.4}, L_GS-point {:.5}, PSNR {:.2} dB",
            r.scene.unwrap_or(0),
            r.l_stage1,
            r.l_gs_image.unwrap_or(f64::NAN),
            r.l_gs_point.unwrap_or(f64::NAN),
            r.psnr.unwrap_or(f64::NAN)
        );
    }
    println!(
        "mean chamfer(P_GS, P_rec): at visit {:.5}, after the epoch {:.5}",
        s2.summary.mean_before(),
        s2.summary.mean_after()
    );

    let report = evaluate(&Checkpoint::read(out.join("stage2.ckpt"))?, &data)?;
    println!("{}", report.to_json());
    Ok(())
}
