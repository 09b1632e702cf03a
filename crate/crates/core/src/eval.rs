//! Pixel- and polygon-level detection metrics for the annotated classes.
//! The background class is never scored.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{filter_by_threshold, AreaReference, PValueRecord};
use crate::polyops::Component;
use crate::raster::{ClassId, LabelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// Pixels whose truth is Unknown are left out entirely.
    #[default]
    ExcludeUnknown,
    /// Predictions of a class on Unknown truth count as false positives.
    UnknownAsFp,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassScore {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Undefined at polygon level.
    pub accuracy: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl ClassScore {
    pub fn from_counts(tp: u64, tn: u64, fp: u64, fn_: u64, with_accuracy: bool) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            tn,
            fp,
            fn_,
            accuracy: with_accuracy.then(|| ratio(tp + tn, tp + tn + fp + fn_)),
            precision,
            recall,
            f1: f1_score(precision, recall),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    /// Waterhole, Omuti, BigTree.
    pub classes: [ClassScore; 3],
    pub macro_accuracy: Option<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl ClassMetrics {
    fn from_scores(classes: [ClassScore; 3]) -> Self {
        let mean = |f: fn(&ClassScore) -> f64| classes.iter().map(f).sum::<f64>() / 3.0;
        let macro_accuracy = classes
            .iter()
            .map(|c| c.accuracy)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / 3.0);
        Self {
            macro_accuracy,
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            classes,
        }
    }

    pub fn class(&self, class: ClassId) -> &ClassScore {
        assert!(class.is_annotated(), "the unknown class is not scored");
        &self.classes[class.index() - 1]
    }

    pub fn total_tp(&self) -> u64 {
        self.classes.iter().map(|c| c.tp).sum()
    }
}

/// One-vs-rest pixel counts per annotated class inside `region`.
pub fn pixel_metrics(pred: &LabelGrid, truth: &LabelGrid, region: Option<&[bool]>, scoring: Scoring) -> Result<ClassMetrics> {
    if !pred.same_geometry(truth) {
        return Err(Error::DimensionMismatch(format!(
            "pred {}x{} vs truth {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    if region.is_some_and(|r| r.len() != truth.len()) {
        return Err(Error::DimensionMismatch("region mask size".into()));
    }
    let mut counts = [[0u64; 4]; 3];
    for (i, (&p, &t)) in pred.labels().iter().zip(truth.labels()).enumerate() {
        if region.is_some_and(|r| !r[i]) {
            continue;
        }
        if t == ClassId::Unknown && scoring == Scoring::ExcludeUnknown {
            continue;
        }
        for (k, class) in ClassId::ANNOTATED.iter().enumerate() {
            let slot = match (p == *class, t == *class) {
                (true, true) => 0,
                (false, false) => 1,
                (true, false) => 2,
                (false, true) => 3,
            };
            counts[k][slot] += 1;
        }
    }
    Ok(ClassMetrics::from_scores(
        counts.map(|[tp, tn, fp, fn_]| ClassScore::from_counts(tp, tn, fp, fn_, true)),
    ))
}

fn check_same_grid(components: &[&Component]) -> Result<()> {
    if let Some(first) = components.first() {
        if components
            .iter()
            .any(|c| c.grid_width != first.grid_width || c.grid_height != first.grid_height)
        {
            return Err(Error::GeometryMismatch("components from different grids".into()));
        }
    }
    Ok(())
}

/// Overlap-threshold matching of predicted to true components, per class.
///
/// A same-class pair is a candidate when either component covers at least
/// `overlap_threshold` of the other; candidates are matched one-to-one greedily
/// in descending overlap (ties by pred then truth order).
pub fn polygon_metrics(pred: &[Component], truth: &[Component], overlap_threshold: f64) -> Result<ClassMetrics> {
    if !(overlap_threshold > 0.0 && overlap_threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "overlap_threshold must lie in (0,1], got {overlap_threshold}"
        )));
    }
    let all: Vec<&Component> = pred.iter().chain(truth.iter()).collect();
    check_same_grid(&all)?;

    // truth owner of each pixel, for linear-time intersections
    let mut owner: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for (t, comp) in truth.iter().enumerate() {
        for &px in &comp.pixels {
            owner.insert(px, t);
        }
    }

    let mut scores = [ClassScore::default(); 3];
    for (k, class) in ClassId::ANNOTATED.iter().enumerate() {
        let preds: Vec<usize> = (0..pred.len()).filter(|&i| pred[i].class == *class).collect();
        let truths: Vec<usize> = (0..truth.len()).filter(|&i| truth[i].class == *class).collect();
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for &p in &preds {
            let mut shared: std::collections::BTreeMap<usize, usize> = Default::default();
            for px in &pred[p].pixels {
                if let Some(&t) = owner.get(px) {
                    if truth[t].class == *class {
                        *shared.entry(t).or_default() += 1;
                    }
                }
            }
            for (t, n) in shared {
                let of_pred = n as f64 / pred[p].len() as f64;
                let of_truth = n as f64 / truth[t].len() as f64;
                let overlap = of_pred.max(of_truth);
                if overlap >= overlap_threshold {
                    candidates.push((overlap, p, t));
                }
            }
        }
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut pred_used = vec![false; pred.len()];
        let mut truth_used = vec![false; truth.len()];
        let mut tp = 0u64;
        for (_, p, t) in candidates {
            if !pred_used[p] && !truth_used[t] {
                pred_used[p] = true;
                truth_used[t] = true;
                tp += 1;
            }
        }
        let fp = preds.len() as u64 - tp;
        let fn_ = truths.len() as u64 - tp;
        scores[k] = ClassScore::from_counts(tp, 0, fp, fn_, false);
    }
    Ok(ClassMetrics::from_scores(scores))
}

/// One row of a strategy × filter results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub strategy: String,
    /// `None` is the unfiltered ("raw") column.
    pub e_th: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub n_pred: usize,
    pub n_truth: usize,
}

impl MetricsRow {
    pub fn filter_label(&self) -> String {
        match self.e_th {
            None => "raw".to_string(),
            Some(e) => format!("{e:.1}"),
        }
    }
}

/// Strategy evaluation result with the indices of predictions that survived filtering.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyEvaluation {
    pub row: MetricsRow,
    pub metrics: ClassMetrics,
    pub kept: Vec<usize>,
}

/// Score predicted components against truth, optionally after discarding
/// predictions whose area p-value (against `reference_areas`, indexed by class
/// code) falls outside the `eval_filter` band. Classes without reference
/// areas pass through unfiltered.
pub fn evaluate_strategy(
    strategy: &str,
    pred: &[Component],
    truth: &[Component],
    reference_areas: &[Vec<f64>; 4],
    eval_filter: Option<f64>,
    overlap_threshold: f64,
) -> Result<StrategyEvaluation> {
    let kept: Vec<usize> = match eval_filter {
        None => (0..pred.len()).collect(),
        Some(e_th) => filter_components(pred, reference_areas, e_th)?,
    };
    let kept_pred: Vec<Component> = kept.iter().map(|&i| pred[i].clone()).collect();
    let metrics = polygon_metrics(&kept_pred, truth, overlap_threshold)?;
    Ok(StrategyEvaluation {
        row: MetricsRow {
            strategy: strategy.to_string(),
            e_th: eval_filter,
            precision: metrics.macro_precision,
            recall: metrics.macro_recall,
            f1: metrics.macro_f1,
            tp: metrics.total_tp(),
            n_pred: kept_pred.len(),
            n_truth: truth.len(),
        },
        metrics,
        kept,
    })
}

/// Area p-value records for components; `None` where the class has no reference.
pub fn component_pvalues(pred: &[Component], reference_areas: &[Vec<f64>; 4]) -> Result<Vec<Option<PValueRecord<f64>>>> {
    let refs: Vec<Option<AreaReference<f64>>> = reference_areas
        .iter()
        .map(|a| if a.is_empty() { None } else { AreaReference::new(a).ok() })
        .collect();
    Ok(pred
        .iter()
        .map(|c| {
            refs[c.class.index()].as_ref().map(|r| PValueRecord {
                class: c.class,
                area_m2: c.area_m2,
                pvalue: r.pvalue(c.area_m2),
            })
        })
        .collect())
}

/// Indices of components surviving the p-value band filter.
pub fn filter_components(pred: &[Component], reference_areas: &[Vec<f64>; 4], e_th: f64) -> Result<Vec<usize>> {
    let records = component_pvalues(pred, reference_areas)?;
    let scored: Vec<usize> = (0..pred.len()).filter(|&i| records[i].is_some()).collect();
    let flat: Vec<PValueRecord<f64>> = scored.iter().map(|&i| records[i].expect("scored")).collect();
    let outcome = filter_by_threshold(&flat, e_th)?;
    let mut keep = vec![false; pred.len()];
    for (i, r) in records.iter().enumerate() {
        if r.is_none() {
            keep[i] = true;
        }
    }
    for k in outcome.kept {
        keep[scored[k]] = true;
    }
    Ok((0..pred.len()).filter(|&i| keep[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polyops::{connected_components, Connectivity};
    use crate::raster::GeoTransform;
    use proptest::prelude::*;

    fn grid(w: usize, h: usize, cells: &[u8]) -> LabelGrid {
        LabelGrid::new(
            w,
            h,
            cells.iter().map(|&c| ClassId::from_code(c).unwrap()).collect(),
            GeoTransform::unit(),
        )
        .unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let g = grid(3, 2, &[1, 2, 3, 3, 2, 1]);
        let m = pixel_metrics(&g, &g, None, Scoring::ExcludeUnknown).unwrap();
        for s in m.classes {
            assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        }
    }

    #[test]
    fn total_confusion() {
        let pred = grid(10, 10, &[2; 100]);
        let truth = grid(10, 10, &[1; 100]);
        let m = pixel_metrics(&pred, &truth, None, Scoring::ExcludeUnknown).unwrap();
        assert_eq!(m.class(ClassId::Waterhole).recall, 0.0);
        assert_eq!(m.class(ClassId::Omuti).precision, 0.0);
    }

    #[test]
    fn hand_grid_three_by_three() {
        // truth: 6 waterhole, 3 omuti; pred: 4 waterhole of which 3 on waterhole truth
        let truth = grid(3, 3, &[1, 1, 1, 1, 1, 1, 2, 2, 2]);
        let pred = grid(3, 3, &[1, 1, 1, 2, 2, 2, 1, 2, 2]);
        let m = pixel_metrics(&pred, &truth, None, Scoring::ExcludeUnknown).unwrap();
        let w = m.class(ClassId::Waterhole);
        assert_eq!((w.tp, w.fp, w.fn_), (3, 1, 3));
        assert!((w.precision - 0.75).abs() < 1e-12);
        assert!((w.recall - 0.5).abs() < 1e-12);
        assert!((w.f1 - 0.6).abs() < 1e-12);
    }

    #[test]
    fn unknown_truth_scoring_modes() {
        let truth = grid(2, 1, &[0, 1]);
        let pred = grid(2, 1, &[1, 1]);
        let ex = pixel_metrics(&pred, &truth, None, Scoring::ExcludeUnknown).unwrap();
        assert_eq!(ex.class(ClassId::Waterhole).fp, 0);
        let fp = pixel_metrics(&pred, &truth, None, Scoring::UnknownAsFp).unwrap();
        assert_eq!(fp.class(ClassId::Waterhole).fp, 1);
        assert!(pixel_metrics(&grid(1, 1, &[0]), &truth, None, Scoring::ExcludeUnknown).is_err());
    }

    #[test]
    fn polygon_identity_and_miss() {
        let g = grid(5, 1, &[1, 0, 2, 0, 3]);
        let c = connected_components(&g, Connectivity::Eight);
        let m = polygon_metrics(&c, &c, 0.05).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.macro_accuracy, None);
        let m = polygon_metrics(&[], &c[..1], 0.05).unwrap();
        let w = m.class(ClassId::Waterhole);
        assert_eq!((w.fn_, w.recall), (1, 0.0));
    }

    #[test]
    fn six_percent_coverage_matches_at_five() {
        // truth: 100-pixel block; pred covers 6 of its pixels plus 94 outside
        let mut t = vec![0u8; 400];
        let mut p = vec![0u8; 400];
        for i in 0..100 {
            t[i] = 2;
        }
        for i in 94..194 {
            p[i] = 2;
        }
        let tc = connected_components(&grid(100, 4, &t), Connectivity::Eight);
        let pc = connected_components(&grid(100, 4, &p), Connectivity::Eight);
        let m = polygon_metrics(&pc, &tc, 0.05).unwrap();
        assert_eq!(m.class(ClassId::Omuti).tp, 1);
        let strict = polygon_metrics(&pc, &tc, 0.07).unwrap();
        assert_eq!(strict.class(ClassId::Omuti).tp, 0);
    }

    #[test]
    fn greedy_one_to_one() {
        // one big prediction over two truths: only one match
        let t = grid(5, 1, &[1, 1, 0, 1, 1]);
        let p = grid(5, 1, &[1, 1, 1, 1, 1]);
        let tc = connected_components(&t, Connectivity::Four);
        let pc = connected_components(&p, Connectivity::Four);
        let m = polygon_metrics(&pc, &tc, 0.05).unwrap();
        let w = m.class(ClassId::Waterhole);
        assert_eq!((w.tp, w.fp, w.fn_), (1, 0, 1));
    }

    #[test]
    fn raw_strategy_equals_polygon_metrics() {
        let g = grid(6, 1, &[1, 0, 1, 1, 0, 3]);
        let c = connected_components(&g, Connectivity::Eight);
        let refs: [Vec<f64>; 4] = [vec![], vec![1.0, 2.0], vec![], vec![1.0]];
        let e = evaluate_strategy("Baseline", &c, &c, &refs, None, 0.05).unwrap();
        assert_eq!(e.metrics, polygon_metrics(&c, &c, 0.05).unwrap());
        assert_eq!(e.row.filter_label(), "raw");
    }

    fn random_grid(cells: &[u8], w: usize) -> LabelGrid {
        grid(w, cells.len() / w, cells)
    }

    proptest! {
        #[test]
        fn pixel_invariants(cells in proptest::collection::vec((1u8..4, 1u8..4), 64)) {
            let truth = random_grid(&cells.iter().map(|c| c.0).collect::<Vec<_>>(), 8);
            let pred = random_grid(&cells.iter().map(|c| c.1).collect::<Vec<_>>(), 8);
            let m = pixel_metrics(&pred, &truth, None, Scoring::ExcludeUnknown).unwrap();
            let swapped = pixel_metrics(&truth, &pred, None, Scoring::ExcludeUnknown).unwrap();
            let counts = truth.class_counts();
            for (k, class) in ClassId::ANNOTATED.iter().enumerate() {
                let s = m.class(*class);
                prop_assert_eq!(s.tp + s.fn_, counts[k + 1]);
                prop_assert_eq!(s.precision, swapped.class(*class).recall);
                prop_assert_eq!(s.recall, swapped.class(*class).precision);
                prop_assert!((f1_score(s.recall, s.precision) - s.f1).abs() < 1e-15);
            }
        }

        #[test]
        fn polygon_count_identities(t in proptest::collection::vec(0u8..4, 100), p in proptest::collection::vec(0u8..4, 100),
                                    thr in 0.01f64..1.0) {
            let tc = connected_components(&random_grid(&t, 10), Connectivity::Eight);
            let pc = connected_components(&random_grid(&p, 10), Connectivity::Eight);
            let m = polygon_metrics(&pc, &tc, thr).unwrap();
            for class in ClassId::ANNOTATED {
                let s = m.class(class);
                prop_assert_eq!(s.tp + s.fp, pc.iter().filter(|c| c.class == class).count() as u64);
                prop_assert_eq!(s.tp + s.fn_, tc.iter().filter(|c| c.class == class).count() as u64);
            }
        }
    }
}
