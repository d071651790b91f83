//! Fits 100 Gaussians to one ray-cast view of a synthetic room.
//!
//! cargo run --release --example fit_gaussians -- [iters] [out_dir]

use std::time::Instant;

use splatmae::gsplat::{optimize_gaussians, psnr, rasterize, GaussianSet, GsHyper, RenderSettings};
use splatmae::pointcloud::downsample;
use splatmae::scene::{back_project, generate_scene, render_ground_truth, SceneSpec};

fn main() -> splatmae::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let out = args.next();

    let scene = generate_scene(&SceneSpec {
        seed: 5,
        ..Default::default()
    })?;
    let cam = scene.ring_cameras(1, 64, 64, 48.0)?.remove(0);
    let frame = render_ground_truth(&scene, &cam)?;
    let cloud = downsample(&back_project(&frame)?, 100)?;
    let init = GaussianSet::from_points(&cloud)?;

    let settings = RenderSettings::default();
    let before = rasterize(&init, &cam, &settings)?.image;
    println!("initial PSNR {:.2} dB", psnr(&before, &frame.image)?);

    let start = Instant::now();
    let views = [(cam.clone(), frame.image.clone())];
    let (fitted, report) = optimize_gaussians(&init, &views, iters, &GsHyper::default(), &settings)?;
    let after = rasterize(&fitted, &cam, &settings)?.image;
    println!(
        "{iters} iterations in {:.1}s: loss {:.4} -> {:.4}, PSNR {:.2} dB",
        start.elapsed().as_secs_f64(),
        report.losses.first().copied().unwrap_or(f64::NAN),
        report.final_loss,
        psnr(&after, &frame.image)?
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| splatmae::Error::io(&dir, e))?;
        frame.image.write_ppm(format!("{dir}/target.ppm"))?;
        after.write_ppm(format!("{dir}/fit.ppm"))?;
    }
    Ok(())
}
