//! Samples a synthetic room, downsamples it with farthest-point sampling and
//! groups it into FPS + kNN patches.
//!
//! cargo run --release --example point_patches -- [out_dir]

use splatmae::pointcloud::ply::{write_ply, PlyFormat};
use splatmae::pointcloud::{chamfer, downsample, fps_knn_patches, PointCloud};
use splatmae::scene::{generate_scene, sample_point_cloud, SceneSpec};

fn main() -> splatmae::Result<()> {
    let out = std::env::args().nth(1);
    let scene = generate_scene(&SceneSpec::default())?;
    let dense = sample_point_cloud(&scene, 8192, 0)?;
    let cloud = downsample(&dense, 2048)?;
    let patches = fps_knn_patches(&cloud, 64, 32)?;

    let radius: Vec<f64> = (0..patches.len())
        .map(|m| {
            patches
                .patch_local(m)
                .chunks(3)
                .map(|c| (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt())
                .fold(0.0, f64::max)
        })
        .collect();
    let mean_r = radius.iter().sum::<f64>() / radius.len() as f64;
    let max_r = radius.iter().cloned().fold(0.0, f64::max);
    println!(
        "{} points -> {} points -> {} patches of {}; patch radius mean {mean_r:.3}, max {max_r:.3}",
        dense.len(),
        cloud.len(),
        patches.len(),
        patches.k
    );

    let members: Vec<_> = (0..patches.len())
        .flat_map(|m| patches.patch_members(m).iter().map(|&i| cloud.points()[i]))
        .collect();
    let covered = PointCloud::new(members)?;
    println!("chamfer(patch members, downsampled cloud) = {:.5}", chamfer(&covered, &cloud)?);
    println!("chamfer(downsampled, dense) = {:.5}", chamfer(&cloud, &dense)?);

    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| splatmae::Error::io(&dir, e))?;
        write_ply(format!("{dir}/cloud.ply"), &cloud, PlyFormat::Ascii)?;
        write_ply(format!("{dir}/centers.ply"), &PointCloud::new(patches.centers.clone())?, PlyFormat::Ascii)?;
    }
    Ok(())
}
