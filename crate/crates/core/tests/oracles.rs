mod common;

use common::*;
use proptest::prelude::*;
use splatmae::camera::{align_patches, complementary_masks, mask_count};
use splatmae::gsplat::{build_covariance, rasterize, GaussianSet, RenderSettings};
use splatmae::mae::{Checkpoint, DualMae, MaeConfig, Stage1Example};
use splatmae::pointcloud::{chamfer, farthest_point_sampling, fps_knn_patches, knn, nearest, PointCloud, EXHAUSTIVE_LIMIT};
use splatmae::scene::{generate_scene, render_ground_truth, sample_point_cloud, SceneSpec};
use splatmae::train::{select_fraction, LossReport};

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tiled_render_matches_naive_compositor(seed in any::<u64>(), n in 1usize..=64) {
        let mut r = rng(seed);
        let gs = random_gaussians(&mut r, n);
        let cam = random_camera(&mut r, 32);
        let tiled = rasterize(&gs, &cam, &RenderSettings::default()).unwrap();
        let naive = naive_render(&gs, &cam, ALPHA_MIN, T_MIN);
        prop_assert!(max_abs_diff(&tiled.image.data, &naive.image.data) <= 1e-9);
        prop_assert!(max_abs_diff(&tiled.transmittance, &naive.transmittance) <= 1e-9);
    }

    #[test]
    fn exact_render_matches_full_sum(seed in any::<u64>(), n in 1usize..=32) {
        let mut r = rng(seed);
        let gs = random_gaussians(&mut r, n);
        let cam = random_camera(&mut r, 20);
        let tiled = rasterize(&gs, &cam, &RenderSettings::exact()).unwrap();
        let naive = naive_render(&gs, &cam, 0.0, 0.0);
        prop_assert!(max_abs_diff(&tiled.image.data, &naive.image.data) <= 1e-9);
    }

    #[test]
    fn weights_and_transmittance_sum_to_one(seed in any::<u64>(), n in 1usize..=64) {
        let mut r = rng(seed);
        let gs = random_gaussians(&mut r, n);
        let cam = random_camera(&mut r, 24);
        let out = rasterize(&gs, &cam, &RenderSettings::default()).unwrap();
        for (w, t) in out.weight_sum.iter().zip(&out.transmittance) {
            prop_assert!((w + t - 1.0).abs() <= 1e-12);
            prop_assert!(*t >= 0.0 && *t <= 1.0);
        }
    }

    #[test]
    fn covariance_is_symmetric_psd_and_scale_invariant_in_quat(
        q in prop::array::uniform4(-1.0f64..1.0),
        s in prop::array::uniform3(-3.0f64..1.0),
        k in 0.1f64..10.0,
    ) {
        prop_assume!(q.iter().map(|v| v * v).sum::<f64>() > 1e-3);
        let c = build_covariance(&q, &s).unwrap();
        let c2 = build_covariance(&q.map(|v| v * k), &s).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((c[i][j] - c[j][i]).abs() <= 1e-12);
                prop_assert!((c[i][j] - c2[i][j]).abs() <= 1e-12 * (1.0 + c[i][j].abs()));
            }
        }
        let trace = c[0][0] + c[1][1] + c[2][2];
        let want: f64 = s.iter().map(|v| (2.0 * v).exp()).sum();
        prop_assert!((trace - want).abs() <= 1e-10 * want);
        prop_assert!(c[0][0] > 0.0 && c[1][1] > 0.0 && c[2][2] > 0.0);
    }

    #[test]
    fn chamfer_matches_brute_force(seed in any::<u64>(), n in 1usize..=256, m in 1usize..=256, ties in any::<bool>()) {
        let mut r = rng(seed);
        let (a, b) = if ties {
            (lattice_points(&mut r, n), lattice_points(&mut r, m))
        } else {
            (uniform_points(&mut r, n), uniform_points(&mut r, m))
        };
        let got = chamfer(&PointCloud::new(a.clone()).unwrap(), &PointCloud::new(b.clone()).unwrap()).unwrap();
        prop_assert_eq!(got, brute_chamfer(&a, &b));
    }

    #[test]
    fn knn_matches_brute_force(seed in any::<u64>(), n in 1usize..=256, k in 1usize..=40) {
        let mut r = rng(seed);
        let refs = lattice_points(&mut r, n);
        let queries = lattice_points(&mut r, 16);
        let got = knn(&refs, &queries, k);
        for (q, g) in queries.iter().zip(&got) {
            prop_assert_eq!(g, &brute_knn(&refs, q, k));
        }
        let near = nearest(&refs, &queries);
        for (q, j) in queries.iter().zip(near) {
            prop_assert_eq!(j, brute_knn(&refs, q, 1)[0]);
        }
    }

    #[test]
    fn fps_matches_brute_force(seed in any::<u64>(), n in 1usize..=256, count in 1usize..=64) {
        let mut r = rng(seed);
        let pts = uniform_points(&mut r, n);
        prop_assert_eq!(farthest_point_sampling(&pts, count), brute_fps(&pts, count));
    }

    #[test]
    fn patches_are_fps_centers_with_their_knn(seed in any::<u64>(), n in 32usize..=256) {
        let mut r = rng(seed);
        let pts = uniform_points(&mut r, n);
        let pc = PointCloud::new(pts.clone()).unwrap();
        let (m, k) = (8, 16);
        let p = fps_knn_patches(&pc, m, k).unwrap();
        prop_assert_eq!(&p.center_index, &brute_fps(&pts, m));
        for (i, &c) in p.center_index.iter().enumerate() {
            prop_assert_eq!(p.patch_members(i), &brute_knn(&pts, &pts[c], k)[..]);
            for (j, &idx) in p.patch_members(i).iter().enumerate() {
                for d in 0..3 {
                    prop_assert_eq!(p.patch_local(i)[j * 3 + d], pts[idx][d] - pts[c][d]);
                }
            }
        }
    }

    #[test]
    fn masks_have_exact_counts_and_complementarity(
        seed in any::<u64>(),
        m in 1usize..=96,
        t in 1usize..=96,
        ratio in 0.05f64..0.95,
    ) {
        let mut r = rng(seed);
        let alignment: Vec<Option<usize>> = (0..m)
            .map(|_| if rand::Rng::gen_bool(&mut r, 0.7) { Some(rand::Rng::gen_range(&mut r, 0..t)) } else { None })
            .collect();
        let masks = complementary_masks(&alignment, m, t, ratio, seed).unwrap();
        prop_assert_eq!(masks.masked_points().len(), mask_count(ratio, m));
        for i in masks.masked_points() {
            if let Some(j) = alignment[i] {
                prop_assert!(masks.image_visible[j]);
            }
        }
        let masked_img = masks.masked_image().len();
        prop_assert!(masked_img <= mask_count(ratio, t));
        prop_assert_eq!(masks.warning.is_some(), masked_img < mask_count(ratio, t));
    }

    #[test]
    fn loss_report_identities(
        p in 0.0f64..10.0, i in 0.0f64..10.0, c in 0.0f64..10.0,
        img in 0.0f64..10.0, pt in 0.0f64..10.0,
        alpha in 0.0f64..5.0, beta in 0.0f64..5.0,
    ) {
        let r = LossReport::stage1(0, 0, p, i, c).with_branch(alpha, beta, img, pt);
        prop_assert!(r.identity_error(alpha, beta) <= 1e-12);
        prop_assert_eq!(r.l_stage1, p + i + c);
    }

    #[test]
    fn fraction_selects_nested_prefixes(n in 1usize..200, f1 in 0.01f64..=1.0, f2 in 0.01f64..=1.0, seed in any::<u64>()) {
        let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
        let a = select_fraction(n, lo, seed).unwrap();
        let b = select_fraction(n, hi, seed).unwrap();
        prop_assert!(b.starts_with(&a));
        prop_assert_eq!(select_fraction(n, 1.0, seed).unwrap().len(), n);
    }
}

#[test]
fn grid_knn_matches_brute_force_above_exhaustive_limit() {
    let mut r = rng(11);
    let refs = lattice_points(&mut r, EXHAUSTIVE_LIMIT + 500);
    let queries = uniform_points(&mut r, 40);
    let got = knn(&refs, &queries, 12);
    for (q, g) in queries.iter().zip(&got) {
        assert_eq!(g, &brute_knn(&refs, q, 12));
    }
}

#[test]
fn checkpoint_reload_is_bit_exact() {
    let cfg = MaeConfig::tiny();
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let cam = scene.ring_cameras(1, cfg.image_width, cfg.image_height, 24.0).unwrap().remove(0);
    let frame = render_ground_truth(&scene, &cam).unwrap();
    let cloud = sample_point_cloud(&scene, 1024, 0).unwrap();
    let ex = Stage1Example::new(&cfg, &cloud, &frame.image, &cam, 4).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let reload = |m: &DualMae, name: &str| {
        let path = dir.path().join(name);
        Checkpoint::from_model(m).write(&path).unwrap();
        Checkpoint::read(&path).unwrap().model().unwrap()
    };
    let model = DualMae::new(cfg, 9).unwrap();
    let once = reload(&model, "a.ckpt");
    for ((_, a), (_, b)) in model.params.iter().zip(once.params.iter()) {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*x as f32, *y as f32);
        }
    }
    let twice = reload(&once, "b.ckpt");
    let (l1, g1, o1) = once.evaluate(&ex).unwrap();
    let (l2, g2, o2) = twice.evaluate(&ex).unwrap();
    assert_eq!(l1, l2);
    for (a, b) in [(o1.recon_image, o2.recon_image), (o1.recon_points, o2.recon_points), (o1.pred_feats, o2.pred_feats)] {
        assert_eq!(g1.value(a.unwrap()), g2.value(b.unwrap()));
    }
}

#[test]
fn alignment_points_at_the_patch_under_each_center() {
    let scene = generate_scene(&SceneSpec::default()).unwrap();
    let cam = scene.ring_cameras(1, 64, 48, 45.0).unwrap().remove(0);
    let pc = sample_point_cloud(&scene, 2048, 1).unwrap();
    let patches = fps_knn_patches(&pc, 64, 16).unwrap();
    let align = align_patches(&patches, &cam, 16, (3, 4)).unwrap();
    for (c, a) in patches.centers.iter().zip(&align) {
        let t = cam.to_camera(c);
        let (u, v) = (cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy);
        let inside = t[2] > 1e-4 && u >= 0.0 && v >= 0.0 && u < 64.0 && v < 48.0;
        match a {
            Some(j) => {
                assert!(inside);
                assert_eq!(*j, (v as usize / 16) * 4 + u as usize / 16);
            }
            None => assert!(!inside),
        }
    }
}

#[test]
fn gaussians_from_points_sit_on_the_points() {
    let mut r = rng(5);
    let pts = uniform_points(&mut r, 50);
    let gs = GaussianSet::from_points(&PointCloud::new(pts.clone()).unwrap()).unwrap();
    assert_eq!(gs.centers().unwrap().points(), &pts[..]);
    for (i, p) in pts.iter().enumerate() {
        let d: Vec<f64> = {
            let mut all: Vec<f64> = pts.iter().map(|q| sq_dist(p, q).sqrt()).collect();
            all.sort_by(|a, b| a.partial_cmp(b).unwrap());
            all[1..4].to_vec()
        };
        let want = (d.iter().sum::<f64>() / 3.0).ln();
        assert!((gs.log_scale[i * 3] - want).abs() < 1e-12);
    }
}
