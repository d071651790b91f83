//! Overfits the dual-branch masked autoencoder to one fixed example.
//!
//! cargo run --release --example stage1_overfit -- [steps]

use splatmae::mae::{reconstruct_full_cloud, DualMae, MaeConfig, Stage1Example};
use splatmae::pointcloud::chamfer;
use splatmae::scene::{generate_scene, render_ground_truth, sample_point_cloud, SceneSpec};
use splatmae::train::Trainer;

fn main() -> splatmae::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(200);
    let cfg = MaeConfig::tiny();
    let scene = generate_scene(&SceneSpec::default())?;
    let cam = scene.ring_cameras(1, cfg.image_width, cfg.image_height, 24.0)?.remove(0);
    let frame = render_ground_truth(&scene, &cam)?;
    let cloud = sample_point_cloud(&scene, 2048, 0)?;
    let ex = Stage1Example::new(&cfg, &cloud, &frame.image, &cam, 0)?;

    let masked_chamfer = |t: &Trainer| -> splatmae::Result<f64> {
        let (_, g, out) = t.model.evaluate(&ex)?;
        let recon = out.recon_points.map(|v| g.value(v).to_vec());
        chamfer(&reconstruct_full_cloud(&ex, recon.as_deref())?, &ex.cloud)
    };

    let mut trainer = Trainer::new(DualMae::new(cfg, 0)?, 1e-3, 0.05);
    let before = masked_chamfer(&trainer)?;
    let mut first = None;
    let mut last = 0.0;
    for step in 0..steps {
        let l = trainer.step(&[&ex])?.expect("finite loss");
        first.get_or_insert(l.total);
        last = l.total;
        if step % 25 == 0 || step + 1 == steps {
            println!(
                "step {step:4}: L_stage1 {:.5} (point {:.5}, image {:.5}, cross {:.5})",
                l.total, l.point, l.image, l.cross
            );
        }
    }
    let first = first.unwrap_or(f64::NAN);
    println!("L_stage1 {first:.5} -> {last:.5} ({:.1}% of initial)", 100.0 * last / first);
    println!("chamfer(P_rec, input) {before:.5} -> {:.5}", masked_chamfer(&trainer)?);
    Ok(())
}
