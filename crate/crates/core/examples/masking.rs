//! Aligns point patches to image patches and draws complementary masks:
//! every masked point patch keeps its image patch visible.
//!
//! cargo run --release --example masking -- [seed]

use splatmae::camera::{align_patches, complementary_masks, mask_count};
use splatmae::pointcloud::{downsample, fps_knn_patches};
use splatmae::scene::{generate_scene, sample_point_cloud, SceneSpec};

fn main() -> splatmae::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let scene = generate_scene(&SceneSpec::default())?;
    let cam = scene.ring_cameras(1, 128, 96, 90.0)?.remove(0);
    let cloud = downsample(&sample_point_cloud(&scene, 8192, 0)?, 2048)?;
    let patches = fps_knn_patches(&cloud, 64, 32)?;
    let (rows, cols, px) = (6, 8, 16);
    let alignment = align_patches(&patches, &cam, px, (rows, cols))?;
    let in_view = alignment.iter().flatten().count();
    println!("{in_view} of {} patch centers project into the image", patches.len());

    let masks = complementary_masks(&alignment, patches.len(), rows * cols, 0.6, seed)?;
    println!(
        "masked: {} of {} point patches (expected {}), {} of {} image patches",
        masks.masked_points().len(),
        patches.len(),
        mask_count(0.6, patches.len()),
        masks.masked_image().len(),
        rows * cols
    );
    if let Some(w) = &masks.warning {
        println!("warning: {w}");
    }
    let violations = masks
        .masked_points()
        .into_iter()
        .filter(|&i| matches!(alignment[i], Some(j) if !masks.image_visible[j]))
        .count();
    println!("complementarity violations: {violations}");

    // '#' masked, '+' visible and paired with a masked point patch, '.' visible
    let mut forced = vec![false; rows * cols];
    for i in masks.masked_points() {
        if let Some(j) = alignment[i] {
            forced[j] = true;
        }
    }
    for r in 0..rows {
        let line: String = (0..cols)
            .map(|c| {
                let j = r * cols + c;
                match (masks.image_visible[j], forced[j]) {
                    (false, _) => '#',
                    (true, true) => '+',
                    (true, false) => '.',
                }
            })
            .collect();
        println!("  {line}");
    }
    Ok(())
}
