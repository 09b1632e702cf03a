mod common;

use common::{acceptance_run_config, acceptance_scene, scene_input};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparseseg::eval::{pixel_metrics, Scoring};
use sparseseg::model::{
    argmax_labels, loss_gradient, predict, train, train_in_region, weighted_ce_loss, Batch, ClampPolicy,
    SegmenterConfig, SegmenterParams,
};
use sparseseg::pipeline::RunSetup;
use sparseseg::pseudo::region_counts;
use sparseseg::weights::{class_weights, ClassWeights};
use sparseseg::{ClassId, GeoTransform, GrayRaster, LabelGrid};

/// Left half dark waterhole, right half bright omuti, a tree stripe, background elsewhere.
fn separable_scene() -> (GrayRaster, LabelGrid) {
    let (w, h) = (48, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut values = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (class, gray) = match (row, col) {
                (4..=11, 4..=15) => (ClassId::Waterhole, 20.0),
                (4..=11, 30..=41) => (ClassId::Omuti, 230.0),
                (20..=25, 4..=41) => (ClassId::BigTree, 80.0),
                _ => (ClassId::Unknown, 150.0),
            };
            values.push((gray + rng.gen_range(-5.0..5.0f64)).round() as u8);
            labels.push(class);
        }
    }
    let geo = GeoTransform::unit();
    (GrayRaster::new(w, h, values, geo).unwrap(), LabelGrid::new(w, h, labels, geo).unwrap())
}

fn small_config() -> SegmenterConfig {
    SegmenterConfig {
        patch_size: 3,
        learning_rate: 0.5,
        max_epochs: 10,
        seed: 9,
        ..SegmenterConfig::default()
    }
}

#[test]
fn loss_decreases_on_separable_scene() {
    let (raster, mask) = separable_scene();
    let w: ClassWeights<f64> = class_weights(&region_counts(&mask, None)).unwrap();
    let (_, report) = train(&raster, &mask, &w, &small_config()).unwrap();
    assert_eq!(report.epoch_losses.len(), 10);
    assert!(report.final_loss < report.epoch_losses[0]);
}

#[test]
fn same_seed_gives_identical_params() {
    let (raster, mask) = separable_scene();
    let w: ClassWeights<f32> = class_weights(&region_counts(&mask, None)).unwrap();
    let (a, _) = train(&raster, &mask, &w, &small_config()).unwrap();
    let (b, _) = train(&raster, &mask, &w, &small_config()).unwrap();
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let other = SegmenterConfig {
        seed: 10,
        ..small_config()
    };
    let (c, _) = train(&raster, &mask, &w, &other).unwrap();
    assert_ne!(a, c);
}

#[test]
fn f32_and_f64_training_agree_closely() {
    let (raster, mask) = separable_scene();
    let w32: ClassWeights<f32> = class_weights(&region_counts(&mask, None)).unwrap();
    let w64: ClassWeights<f64> = class_weights(&region_counts(&mask, None)).unwrap();
    let (p32, _) = train(&raster, &mask, &w32, &small_config()).unwrap();
    let (p64, _) = train(&raster, &mask, &w64, &small_config()).unwrap();
    let l32 = argmax_labels(&predict(&p32, &raster).unwrap());
    let l64 = argmax_labels(&predict(&p64, &raster).unwrap());
    let agree = l32.labels().iter().zip(l64.labels()).filter(|(a, b)| a == b).count();
    assert!(agree as f64 >= 0.99 * l32.len() as f64);
}

#[test]
fn params_json_round_trip() {
    let (raster, mask) = separable_scene();
    let w: ClassWeights<f64> = class_weights(&region_counts(&mask, None)).unwrap();
    let (p, _) = train(&raster, &mask, &w, &small_config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("params.json");
    p.save(&path).unwrap();
    assert_eq!(SegmenterParams::<f64>::load(&path).unwrap(), p);
}

fn crop(r: &GrayRaster, c0: usize, r0: usize, w: usize, h: usize) -> GrayRaster {
    let values = (r0..r0 + h).flat_map(|row| (c0..c0 + w).map(move |col| r.get(col, row))).collect();
    GrayRaster::new(w, h, values, *r.geo()).unwrap()
}

#[test]
fn prediction_is_the_same_whole_or_in_tiles() {
    let (raster, mask) = separable_scene();
    let w: ClassWeights<f64> = class_weights(&region_counts(&mask, None)).unwrap();
    let cfg = small_config();
    let (params, _) = train(&raster, &mask, &w, &cfg).unwrap();
    let whole = predict(&params, &raster).unwrap();
    let halo = cfg.patch_size / 2;
    let (tw, th) = (20, 12);
    for ty in (0..raster.height()).step_by(th) {
        for tx in (0..raster.width()).step_by(tw) {
            let (c0, r0) = (tx.saturating_sub(halo), ty.saturating_sub(halo));
            let c1 = (tx + tw + halo).min(raster.width());
            let r1 = (ty + th + halo).min(raster.height());
            let tile = predict(&params, &crop(&raster, c0, r0, c1 - c0, r1 - r0)).unwrap();
            for row in ty..(ty + th).min(raster.height()) {
                for col in tx..(tx + tw).min(raster.width()) {
                    assert_eq!(tile.get(col - c0, row - r0), whole.get(col, row), "pixel ({col}, {row})");
                }
            }
        }
    }
}

#[test]
fn prediction_does_not_depend_on_thread_count() {
    let (raster, mask) = separable_scene();
    let w: ClassWeights<f32> = class_weights(&region_counts(&mask, None)).unwrap();
    let (params, _) = train(&raster, &mask, &w, &small_config()).unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = single.install(|| predict(&params, &raster).unwrap());
    let b = many.install(|| predict(&params, &raster).unwrap());
    assert_eq!(a.probs(), b.probs());
    for p in a.probs() {
        assert!((p.iter().sum::<f32>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn gradient_matches_finite_differences_on_five_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = small_config();
    let d = cfg.feature_dim();
    let mut params = SegmenterParams::<f64>::zeros(&cfg);
    for v in params.weights.iter_mut().flatten() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let features: Vec<f64> = (0..5 * d).map(|_| rng.gen_range(0.0..1.0)).collect();
    let labels = [ClassId::Unknown, ClassId::Waterhole, ClassId::Omuti, ClassId::BigTree, ClassId::Waterhole];
    let w = ClassWeights {
        lambda_u: 0.1,
        lambda_w: 12.0,
        lambda_o: 2.0,
        lambda_b: 1.5,
    };
    let batch = Batch::new(&features, &labels).unwrap();
    let grad = loss_gradient(&params, &batch, &w).unwrap();
    let loss = |p: &SegmenterParams<f64>| {
        let probs: Vec<[f64; 4]> = features.chunks(d).map(|x| p.probabilities(x)).collect();
        weighted_ce_loss(&probs, &labels, &w, ClampPolicy::Floor).unwrap()
    };
    let h = 1e-5;
    for j in 0..d {
        for k in 0..4 {
            let (mut up, mut down) = (params.clone(), params.clone());
            up.weights[j][k] += h;
            down.weights[j][k] -= h;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            let analytic = grad.weights[j][k];
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(rel <= 1e-4, "weight ({j}, {k}): {analytic} vs {numeric}");
        }
    }
    // linear in a uniform scaling of the class weights
    let scaled = loss_gradient(&params, &batch, &w.scaled(3.0)).unwrap();
    for (a, b) in grad.weights.iter().flatten().zip(scaled.weights.iter().flatten()) {
        assert!((3.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn default_config_reaches_pixel_f1_on_held_out_tiles() {
    let spec = acceptance_scene(0);
    let input = scene_input(&spec);
    let mut cfg = acceptance_run_config(0);
    cfg.model = SegmenterConfig::default();
    let setup = RunSetup::for_input(&cfg, &input).unwrap();
    let region = Some(setup.train_region.as_slice());
    let w: ClassWeights<f32> = class_weights(&region_counts(&setup.expert_mask, region)).unwrap();
    let (params, _) = train_in_region(&input.raster, &setup.expert_mask, region, &w, &cfg.model_config()).unwrap();
    let pred = argmax_labels(&predict(&params, &input.raster).unwrap()).restricted(&setup.test_region).unwrap();
    let m = pixel_metrics(&pred, &setup.truth_test, Some(&setup.test_region), Scoring::ExcludeUnknown).unwrap();
    assert!(m.macro_f1 >= 0.7, "pixel macro F1 {}", m.macro_f1);
}
