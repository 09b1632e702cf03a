mod common;

use common::{acceptance_run_config, acceptance_scene, scene_input};
use sparseseg::annot::AnnotationSet;
use sparseseg::model::{train_in_region, SegmenterConfig, SegmenterParams};
use sparseseg::pipeline::{run_ablation, RunSetup, Strategy};
use sparseseg::pseudo::{
    generate_pseudo_labels, merge_pseudo, pseudo_label_rounds, region_counts, retrain_with_pseudo, PseudoLabelConfig,
    WeightPolicy,
};
use sparseseg::weights::{class_weights, ClassWeights};
use sparseseg::{ClassId, GeoTransform, GrayRaster, LabelGrid};

/// Model that calls dark patches waterhole and everything else background.
fn dark_detector() -> SegmenterParams<f64> {
    let cfg = SegmenterConfig {
        patch_size: 3,
        ..SegmenterConfig::default()
    };
    let mut p = SegmenterParams::zeros(&cfg);
    // the patch mean is the second-to-last feature
    p.weights[cfg.feature_dim() - 2][ClassId::Waterhole.index()] = -40.0;
    p.bias[ClassId::Waterhole.index()] = 20.0;
    p
}

fn dark_square() -> GrayRaster {
    let (w, h) = (24, 24);
    let values = (0..w * h)
        .map(|i| if (8..16).contains(&(i % w)) && (8..16).contains(&(i / w)) { 0 } else { 255 })
        .collect();
    GrayRaster::new(w, h, values, GeoTransform::unit()).unwrap()
}

fn reference() -> [Vec<f64>; 4] {
    [vec![], vec![60.0, 64.0, 70.0], vec![], vec![]]
}

#[test]
fn one_pixel_of_expert_overlap_excludes_a_component() {
    let raster = dark_square();
    let mut mask = LabelGrid::unknown(24, 24, GeoTransform::unit()).unwrap();
    let params = dark_detector();
    let cfg = PseudoLabelConfig::default();
    let clear = generate_pseudo_labels(&params, &raster, &mask, None, &reference(), &cfg).unwrap();
    assert_eq!(clear.count_per_class(), [1, 0, 0]);
    assert!(clear.labels[0].confidence >= 0.9);

    mask.set(12, 12, ClassId::Waterhole);
    let touched = generate_pseudo_labels(&params, &raster, &mask, None, &reference(), &cfg).unwrap();
    assert!(touched.is_empty());
    let keep = PseudoLabelConfig {
        exclude_overlapping_expert: false,
        ..cfg
    };
    assert_eq!(generate_pseudo_labels(&params, &raster, &mask, None, &reference(), &keep).unwrap().len(), 1);
}

#[test]
fn pseudo_labels_stay_inside_the_training_region() {
    let raster = dark_square();
    let mask = LabelGrid::unknown(24, 24, GeoTransform::unit()).unwrap();
    let region: Vec<bool> = (0..24 * 24).map(|i| i % 24 < 12).collect();
    let labels =
        generate_pseudo_labels(&dark_detector(), &raster, &mask, Some(&region), &reference(), &PseudoLabelConfig::default())
            .unwrap();
    assert_eq!(labels.len(), 1);
    assert!(labels.labels[0].component.pixels.iter().all(|&p| region[p]));
}

struct Trained {
    input: sparseseg::pipeline::AblationInput,
    setup: RunSetup,
    cfg: sparseseg::pipeline::RunConfig,
    weights: ClassWeights<f32>,
    params: SegmenterParams<f32>,
}

fn trained_scene(seed: u64) -> Trained {
    let input = scene_input(&acceptance_scene(seed));
    let cfg = acceptance_run_config(seed);
    let setup = RunSetup::for_input(&cfg, &input).unwrap();
    let region = Some(setup.train_region.as_slice());
    let weights = class_weights(&region_counts(&setup.expert_mask, region)).unwrap();
    let (params, _) = train_in_region(&input.raster, &setup.expert_mask, region, &weights, &cfg.model_config()).unwrap();
    Trained {
        input,
        setup,
        cfg,
        weights,
        params,
    }
}

#[test]
fn empty_pseudo_set_equals_plain_training() {
    let t = trained_scene(1);
    let region = Some(t.setup.train_region.as_slice());
    for policy in [WeightPolicy::RecomputeWeights, WeightPolicy::KeepOriginal] {
        let (p, _) = retrain_with_pseudo(
            &t.input.raster,
            &t.setup.expert_mask,
            region,
            &AnnotationSet::new(),
            policy,
            &t.weights,
            &t.cfg.model_config(),
        )
        .unwrap();
        assert_eq!(p, t.params);
    }
}

#[test]
fn recruitment_shrinks_as_confidence_rises() {
    let t = trained_scene(2);
    let region = Some(t.setup.train_region.as_slice());
    let mut counts = Vec::new();
    for threshold in [0.5, 0.7, 0.9, 0.99, 1.0] {
        let cfg = PseudoLabelConfig {
            confidence_threshold: threshold,
            ..PseudoLabelConfig::default()
        };
        let labels = generate_pseudo_labels(
            &t.params,
            &t.input.raster,
            &t.setup.expert_mask,
            region,
            &t.setup.reference_areas,
            &cfg,
        )
        .unwrap();
        counts.push(labels.len());
    }
    assert!(counts.windows(2).all(|w| w[0] >= w[1]), "{counts:?}");
    assert!(counts[0] > 0);

    // an empty recruitment still retrains on the expert labels alone
    let strict = PseudoLabelConfig {
        confidence_threshold: 1.0,
        ..PseudoLabelConfig::default()
    };
    let out = pseudo_label_rounds(
        &t.params,
        &t.input.raster,
        &t.setup.expert_mask,
        region,
        &t.setup.reference_areas,
        &t.weights,
        WeightPolicy::RecomputeWeights,
        &strict,
        &t.cfg.model_config(),
    )
    .unwrap();
    assert_eq!(out.rounds.len(), 1);
    assert!(out.params.is_finite());
}

#[test]
fn merged_mask_keeps_every_expert_pixel() {
    let t = trained_scene(3);
    let region = Some(t.setup.train_region.as_slice());
    let labels = generate_pseudo_labels(
        &t.params,
        &t.input.raster,
        &t.setup.expert_mask,
        region,
        &t.setup.reference_areas,
        &PseudoLabelConfig::default(),
    )
    .unwrap();
    let merged = merge_pseudo(&t.setup.expert_mask, region, &labels.annotations).unwrap();
    for (i, (&e, &m)) in t.setup.expert_mask.labels().iter().zip(merged.labels()).enumerate() {
        if e != ClassId::Unknown {
            assert_eq!(e, m);
        }
        if !t.setup.train_region[i] {
            assert_eq!(m, ClassId::Unknown);
        }
    }
}

#[test]
fn independent_mode_starts_pseudo_rows_from_baseline() {
    let input = scene_input(&acceptance_scene(4));
    let mut cfg = acceptance_run_config(4);
    cfg.model.max_epochs = 5;
    let stacked = run_ablation::<f32>(&input, &cfg).unwrap();
    cfg.independent = true;
    let alone = run_ablation::<f32>(&input, &cfg).unwrap();
    for s in [Strategy::Baseline, Strategy::ClassWeighting] {
        assert_eq!(stacked.run(s).params, alone.run(s).params);
    }
    let pl = alone.run(Strategy::PseudoLabeling);
    assert_eq!(pl.report.weights, ClassWeights::uniform());
    // stacked pseudo rows keep class weighting
    assert!(stacked.run(Strategy::PseudoLabeling).report.weights.lambda_u < 1.0);
}
