//! Pseudo-label recruitment from confident predictions on unlabeled training
//! pixels, and retraining on the merged expert + pseudo mask.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::annot::{burn_annotations, feature_collection, geojson_feature, AnnotationSet, Source};
use crate::error::{Error, Result};
use crate::eval::component_pvalues;
use crate::filter::filter_by_threshold;
use crate::model::{argmax_labels, predict, train_in_region, SegmenterConfig, SegmenterParams, TrainReport};
use crate::polyops::{component_to_polygon, connected_components, Component, Connectivity};
use crate::raster::{ClassId, GrayRaster, LabelGrid};
use crate::scalar::Scalar;
use crate::weights::{class_weights, ClassWeights, PixelCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelConfig {
    /// Minimum mean probability of the predicted class over a component.
    pub confidence_threshold: f64,
    pub apply_pvalue_filter: bool,
    pub e_th: f64,
    pub rounds: usize,
    pub exclude_overlapping_expert: bool,
    pub connectivity: Connectivity,
}

impl Default for PseudoLabelConfig {
    fn default() -> Self {
        Self {
            confidence_threshold: 0.9,
            apply_pvalue_filter: false,
            e_th: 1.0,
            rounds: 1,
            exclude_overlapping_expert: true,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PseudoLabelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold <= 1.0) {
            return Err(Error::InvalidConfig("confidence_threshold must lie in (0,1]".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if !(self.e_th > 0.0) {
            return Err(Error::InvalidConfig("e_th must be positive".into()));
        }
        Ok(())
    }
}

/// Which class weights the retraining pass uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightPolicy {
    /// Recompute from the merged mask.
    #[default]
    RecomputeWeights,
    /// Reuse the weights supplied by the caller.
    KeepOriginal,
}

/// One recruited pseudo-label.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub component: Component,
    pub confidence: f64,
    pub pvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PseudoLabels {
    pub labels: Vec<PseudoLabel>,
    pub annotations: AnnotationSet,
}

impl PseudoLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn count_per_class(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for l in &self.labels {
            n[l.component.class.index() - 1] += 1;
        }
        n
    }

    /// GeoJSON with area, confidence and (when filtered) p-value per feature.
    pub fn to_geojson(&self) -> Value {
        let features = self
            .labels
            .iter()
            .zip(self.annotations.iter())
            .map(|(l, a)| {
                let mut extra = Map::new();
                extra.insert("area_m2".into(), Value::from(l.component.area_m2));
                extra.insert("confidence".into(), Value::from(l.confidence));
                if let Some(p) = l.pvalue {
                    extra.insert("pvalue".into(), Value::from(p));
                }
                geojson_feature(a.class, &a.polygon, Source::Pseudo, extra)
            })
            .collect();
        feature_collection(features)
    }
}

/// Pixel counts of `mask` inside `region`.
pub fn region_counts(mask: &LabelGrid, region: Option<&[bool]>) -> PixelCounts {
    let mut c = [0u64; 4];
    for (i, &l) in mask.labels().iter().enumerate() {
        if region.map_or(true, |r| r[i]) {
            c[l.index()] += 1;
        }
    }
    PixelCounts::from_array(c)
}

/// Predict over the training region and recruit confident components that do
/// not touch expert labels. `annot_areas` are reference areas indexed by class code.
pub fn generate_pseudo_labels<T: Scalar>(
    params: &SegmenterParams<T>,
    raster: &GrayRaster,
    train_mask: &LabelGrid,
    train_region: Option<&[bool]>,
    annot_areas: &[Vec<f64>; 4],
    cfg: &PseudoLabelConfig,
) -> Result<PseudoLabels> {
    cfg.validate()?;
    if raster.width() != train_mask.width() || raster.height() != train_mask.height() {
        return Err(Error::DimensionMismatch("raster vs train mask".into()));
    }
    let probs = predict(params, raster)?;
    let mut pred = argmax_labels(&probs);
    if let Some(r) = train_region {
        pred = pred.restricted(r)?;
    }
    let expert = train_mask.labels();
    let mut candidates = Vec::new();
    let components = connected_components(&pred, cfg.connectivity);
    let n_components = components.len();
    let mut n_clear = 0;
    for c in components {
        if cfg.exclude_overlapping_expert && c.pixels.iter().any(|&i| expert[i] != ClassId::Unknown) {
            continue;
        }
        n_clear += 1;
        let k = c.class.index();
        let confidence = c.pixels.iter().map(|&i| probs.probs()[i][k].to_f64_lossy()).sum::<f64>() / c.len() as f64;
        log::trace!("{} component of {} px, confidence {confidence:.3}", c.class, c.len());
        if confidence >= cfg.confidence_threshold {
            candidates.push(PseudoLabel {
                component: c,
                confidence,
                pvalue: None,
            });
        }
    }

    log::debug!(
        "{n_components} predicted components, {n_clear} clear of expert labels, {} confident",
        candidates.len()
    );
    if cfg.apply_pvalue_filter {
        let comps: Vec<Component> = candidates.iter().map(|l| l.component.clone()).collect();
        let records = component_pvalues(&comps, annot_areas)?;
        let scored: Vec<usize> = (0..comps.len()).filter(|&i| records[i].is_some()).collect();
        let flat: Vec<_> = scored.iter().map(|&i| records[i].expect("scored")).collect();
        let mut keep: Vec<bool> = records.iter().map(|r| r.is_none()).collect();
        if !flat.is_empty() {
            for k in filter_by_threshold(&flat, cfg.e_th)?.kept {
                keep[scored[k]] = true;
            }
        }
        candidates = candidates
            .into_iter()
            .zip(records)
            .zip(keep)
            .filter(|(_, k)| *k)
            .map(|((mut l, r), _)| {
                l.pvalue = r.map(|r| r.pvalue);
                l
            })
            .collect();
    }

    let mut annotations = AnnotationSet::new();
    for l in &candidates {
        let (poly, _) = component_to_polygon(&l.component, raster.geo())?;
        annotations.push(l.component.class, poly, Source::Pseudo)?;
    }
    Ok(PseudoLabels {
        labels: candidates,
        annotations,
    })
}

/// Burn pseudo polygons into a copy of `expert_mask`, only on Unknown pixels
/// inside `region`. Expert labels always win.
pub fn merge_pseudo(expert_mask: &LabelGrid, region: Option<&[bool]>, pseudo: &AnnotationSet) -> Result<LabelGrid> {
    if let Some(bad) = pseudo.iter().find(|a| a.source != Source::Pseudo) {
        return Err(Error::InvalidConfig(format!("pseudo set contains a {} entry", bad.source.name())));
    }
    let mut burned = LabelGrid::unknown(expert_mask.width(), expert_mask.height(), *expert_mask.geo())?;
    burn_annotations(&mut burned, pseudo.iter());
    let mut merged = expert_mask.clone();
    for (i, (m, &p)) in merged.labels_mut().iter_mut().zip(burned.labels()).enumerate() {
        if *m == ClassId::Unknown && p != ClassId::Unknown && region.map_or(true, |r| r[i]) {
            *m = p;
        }
    }
    Ok(merged)
}

/// Train from scratch on the expert mask merged with pseudo-labels.
pub fn retrain_with_pseudo<T: Scalar>(
    raster: &GrayRaster,
    expert_mask: &LabelGrid,
    region: Option<&[bool]>,
    pseudo: &AnnotationSet,
    w_policy: WeightPolicy,
    original_weights: &ClassWeights<T>,
    cfg: &SegmenterConfig,
) -> Result<(SegmenterParams<T>, TrainReport<T>)> {
    let merged = merge_pseudo(expert_mask, region, pseudo)?;
    let w = match w_policy {
        WeightPolicy::RecomputeWeights => class_weights(&region_counts(&merged, region))?,
        WeightPolicy::KeepOriginal => *original_weights,
    };
    train_in_region(raster, &merged, region, &w, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub n_pseudo_per_class: BTreeMap<String, usize>,
    pub weights: ClassWeights<f64>,
    pub final_loss: f64,
}

/// Outcome of the recursive pseudo-labeling loop.
#[derive(Debug, Clone)]
pub struct PseudoTraining<T> {
    pub params: SegmenterParams<T>,
    pub report: TrainReport<T>,
    /// Pseudo-labels used by the last retraining pass.
    pub pseudo: PseudoLabels,
    pub rounds: Vec<RoundReport>,
}

/// `cfg.rounds` retraining passes; round k recruits with the round k-1 model.
#[allow(clippy::too_many_arguments)]
pub fn pseudo_label_rounds<T: Scalar>(
    initial: &SegmenterParams<T>,
    raster: &GrayRaster,
    expert_mask: &LabelGrid,
    region: Option<&[bool]>,
    annot_areas: &[Vec<f64>; 4],
    original_weights: &ClassWeights<T>,
    w_policy: WeightPolicy,
    cfg: &PseudoLabelConfig,
    seg_cfg: &SegmenterConfig,
) -> Result<PseudoTraining<T>> {
    cfg.validate()?;
    let mut params = initial.clone();
    let mut pseudo = PseudoLabels::default();
    let mut last_report = None;
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        pseudo = generate_pseudo_labels(&params, raster, expert_mask, region, annot_areas, cfg)?;
        let (p, report) =
            retrain_with_pseudo(raster, expert_mask, region, &pseudo.annotations, w_policy, original_weights, seg_cfg)?;
        let n = pseudo.count_per_class();
        log::info!("pseudo round {round}: {} labels {:?}", pseudo.len(), n);
        rounds.push(RoundReport {
            round,
            n_pseudo_per_class: ClassId::ANNOTATED
                .iter()
                .map(|c| (c.name().to_string(), n[c.index() - 1]))
                .collect(),
            weights: report.weights.to_f64(),
            final_loss: report.final_loss.to_f64_lossy(),
        });
        params = p;
        last_report = Some(report);
    }
    Ok(PseudoTraining {
        params,
        report: last_report.expect("at least one round"),
        pseudo,
        rounds,
    })
}
