//! End-to-end run configuration and the strategy ablation harness:
//! Baseline, +ClassWeighting, +PseudoLabeling, +PostprocessedPseudoLabeling,
//! each scored raw and under eval-time p-value filters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::annot::{
    feature_collection, geojson_feature, load_annotations, rasterize, spatial_split, write_geojson, AnnotationSet,
    Side, Source, SplitSpec,
};
use crate::error::{Error, Result};
use crate::eval::{component_pvalues, evaluate_strategy, pixel_metrics, ClassMetrics, MetricsRow, Scoring, StrategyEvaluation};
use crate::model::{argmax_labels, predict, train_in_region, SegmenterConfig, SegmenterParams, TrainReport};
use crate::polyops::{component_to_polygon, connected_components, Component, Connectivity};
use crate::pseudo::{pseudo_label_rounds, region_counts, PseudoLabelConfig, PseudoTraining, WeightPolicy};
use crate::raster::{load_raster, ClassId, GeoTransform, GrayRaster, LabelGrid};
use crate::scalar::Scalar;
use crate::weights::{class_weights, ClassWeights};

/// Stage seed offsets from the single run seed.
pub const SPLIT_SEED_OFFSET: u64 = 1;
pub const MODEL_SEED_OFFSET: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub block_size: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            block_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub overlap_threshold: f64,
    /// Eval-time filter thresholds; the raw column is always reported.
    pub eval_filter: Vec<f64>,
    pub scoring: Scoring,
    pub connectivity: Connectivity,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            overlap_threshold: 0.05,
            eval_filter: vec![1.0, 0.5],
            scoring: Scoring::ExcludeUnknown,
            connectivity: Connectivity::Eight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub raster: Option<PathBuf>,
    /// Sparse expert annotations used for training.
    pub annotations: Option<PathBuf>,
    /// Evaluation truth; defaults to `annotations`.
    pub truth: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub split: SplitConfig,
    pub model: SegmenterConfig,
    pub pseudo: PseudoLabelConfig,
    pub weight_policy: WeightPolicy,
    pub eval: EvalConfig,
    /// Run each mechanism on its own instead of stacking them.
    pub independent: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            raster: None,
            annotations: None,
            truth: None,
            out_dir: None,
            seed: 0,
            split: SplitConfig::default(),
            model: SegmenterConfig::default(),
            pseudo: PseudoLabelConfig::default(),
            weight_policy: WeightPolicy::RecomputeWeights,
            eval: EvalConfig::default(),
            independent: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        // relative paths are resolved against the config file's directory
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut cfg.raster, &mut cfg.annotations, &mut cfg.truth, &mut cfg.out_dir]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Numeric invariants of every stage.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.pseudo.validate()?;
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) || self.split.block_size == 0 {
            return Err(Error::InvalidConfig("split needs train_fraction in (0,1) and block_size >= 1".into()));
        }
        if !(self.eval.overlap_threshold > 0.0 && self.eval.overlap_threshold <= 1.0) {
            return Err(Error::InvalidConfig("overlap_threshold must lie in (0,1]".into()));
        }
        if self.eval.eval_filter.iter().any(|e| !(*e > 0.0)) {
            return Err(Error::InvalidConfig("eval_filter thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Validation plus existence of every referenced input path.
    pub fn validate_paths(&self) -> Result<()> {
        self.validate()?;
        for p in [&self.raster, &self.annotations, &self.truth].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::MissingFile(p.clone()));
            }
        }
        Ok(())
    }

    pub fn split_seed(&self) -> u64 {
        self.seed.wrapping_add(SPLIT_SEED_OFFSET)
    }

    /// Model config with the derived model seed.
    pub fn model_config(&self) -> SegmenterConfig {
        SegmenterConfig {
            seed: self.seed.wrapping_add(MODEL_SEED_OFFSET),
            ..self.model.clone()
        }
    }

    pub fn make_split(&self, width: usize, height: usize) -> Result<SplitSpec> {
        spatial_split(width, height, self.split.train_fraction, self.split.block_size, self.split_seed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Baseline,
    ClassWeighting,
    PseudoLabeling,
    PostprocessedPseudoLabeling,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Baseline,
        Strategy::ClassWeighting,
        Strategy::PseudoLabeling,
        Strategy::PostprocessedPseudoLabeling,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Baseline => "Baseline",
            Strategy::ClassWeighting => "+ClassWeighting",
            Strategy::PseudoLabeling => "+PseudoLabeling",
            Strategy::PostprocessedPseudoLabeling => "+PostprocessedPseudoLabeling",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Strategy::Baseline => "baseline",
            Strategy::ClassWeighting => "class-weighting",
            Strategy::PseudoLabeling => "pseudo-labeling",
            Strategy::PostprocessedPseudoLabeling => "postprocessed-pseudo-labeling",
        }
    }
}

/// In-memory inputs of an ablation run.
#[derive(Debug, Clone)]
pub struct AblationInput {
    pub raster: GrayRaster,
    pub sparse: AnnotationSet,
    pub truth: AnnotationSet,
}

impl AblationInput {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let raster_path = cfg
            .raster
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no raster path".into()))?;
        let annot_path = cfg
            .annotations
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("config has no annotations path".into()))?;
        let raster = load_raster(raster_path)?;
        let sparse = load_annotations(annot_path)?;
        let truth = match &cfg.truth {
            Some(p) => load_annotations(p)?,
            None => sparse.clone(),
        };
        Ok(Self { raster, sparse, truth })
    }
}

#[derive(Debug, Clone)]
pub struct StrategyRun<T> {
    pub strategy: Strategy,
    pub params: SegmenterParams<T>,
    pub report: TrainReport<T>,
    pub pseudo: Option<PseudoTraining<T>>,
    /// Predicted components inside the test region.
    pub predictions: Vec<Component>,
    /// Raw first, then one entry per eval filter.
    pub evaluations: Vec<StrategyEvaluation>,
    pub pixel: ClassMetrics,
}

#[derive(Debug, Clone)]
pub struct AblationResult<T> {
    pub config: RunConfig,
    pub geo: GeoTransform,
    pub split: SplitSpec,
    /// Reference areas by class code: expert polygons whose centroid is on a train tile.
    pub reference_areas: [Vec<f64>; 4],
    pub truth_components: Vec<Component>,
    pub runs: Vec<StrategyRun<T>>,
}

/// Areas of annotations whose centroid falls on a train tile, by class code.
pub fn train_reference_areas(sparse: &AnnotationSet, split: &SplitSpec, grid: &LabelGrid) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for a in sparse.iter() {
        let [x, y] = a.polygon.centroid();
        let (col, row) = grid.geo().to_pixel(x, y);
        let (col, row) = (col.round(), row.round());
        if col < 0.0 || row < 0.0 || col as usize >= grid.width() || row as usize >= grid.height() {
            continue;
        }
        if split.side_of_pixel(col as usize, row as usize) == Side::Train {
            out[a.class.index()].push(a.polygon.area());
        }
    }
    out
}

/// Split, masks, truth and reference areas shared by every strategy of a run.
#[derive(Debug, Clone)]
pub struct RunSetup {
    pub geo: GeoTransform,
    pub split: SplitSpec,
    pub train_region: Vec<bool>,
    pub test_region: Vec<bool>,
    /// Sparse labels restricted to train tiles.
    pub expert_mask: LabelGrid,
    /// Truth restricted to test tiles.
    pub truth_test: LabelGrid,
    pub truth_components: Vec<Component>,
    /// Reference areas by class code: expert polygons whose centroid is on a train tile.
    pub reference_areas: [Vec<f64>; 4],
}

impl RunSetup {
    pub fn new(cfg: &RunConfig, sparse: &AnnotationSet, truth: &AnnotationSet, width: usize, height: usize, geo: GeoTransform) -> Result<Self> {
        cfg.validate()?;
        let split = cfg.make_split(width, height)?;
        let train_region = split.region(Side::Train);
        let test_region = split.region(Side::Test);
        let expert_mask = rasterize(sparse, &geo, width, height)?.restricted(&train_region)?;
        let truth_test = rasterize(truth, &geo, width, height)?.restricted(&test_region)?;
        let truth_components = connected_components(&truth_test, cfg.eval.connectivity);
        let reference_areas = train_reference_areas(sparse, &split, &expert_mask);
        Ok(Self {
            geo,
            split,
            train_region,
            test_region,
            expert_mask,
            truth_test,
            truth_components,
            reference_areas,
        })
    }

    pub fn for_input(cfg: &RunConfig, input: &AblationInput) -> Result<Self> {
        let r = &input.raster;
        Self::new(cfg, &input.sparse, &input.truth, r.width(), r.height(), *r.geo())
    }

    /// Score a full-raster label prediction on the test tiles: components,
    /// polygon evaluations (raw first, then one per eval filter) and pixel metrics.
    pub fn evaluate(&self, cfg: &RunConfig, label: &str, pred: &LabelGrid) -> Result<(Vec<Component>, Vec<StrategyEvaluation>, ClassMetrics)> {
        if !pred.same_geometry(&self.truth_test) {
            return Err(Error::GeometryMismatch("prediction grid differs from the run raster".into()));
        }
        let pred = pred.restricted(&self.test_region)?;
        let predictions = connected_components(&pred, cfg.eval.connectivity);
        let mut evaluations = Vec::with_capacity(1 + cfg.eval.eval_filter.len());
        for filter in std::iter::once(None).chain(cfg.eval.eval_filter.iter().map(|&e| Some(e))) {
            evaluations.push(evaluate_strategy(
                label,
                &predictions,
                &self.truth_components,
                &self.reference_areas,
                filter,
                cfg.eval.overlap_threshold,
            )?);
        }
        let pixel = pixel_metrics(&pred, &self.truth_test, Some(&self.test_region), cfg.eval.scoring)?;
        Ok((predictions, evaluations, pixel))
    }

    fn score<T: Scalar>(
        &self,
        cfg: &RunConfig,
        raster: &GrayRaster,
        strategy: Strategy,
        params: SegmenterParams<T>,
        report: TrainReport<T>,
        pseudo: Option<PseudoTraining<T>>,
    ) -> Result<StrategyRun<T>> {
        let pred = argmax_labels(&predict(&params, raster)?);
        let (predictions, evaluations, pixel) = self.evaluate(cfg, strategy.label(), &pred)?;
        log::info!(
            "{}: raw macro F1 {:.4}, {} predicted components",
            strategy.label(),
            evaluations[0].row.f1,
            predictions.len()
        );
        Ok(StrategyRun {
            strategy,
            params,
            report,
            pseudo,
            predictions,
            evaluations,
            pixel,
        })
    }
}

/// Run all four strategies. Cumulative by default: each row adds one mechanism
/// to the previous; with `independent`, each mechanism is added to Baseline alone.
pub fn run_ablation<T: Scalar>(input: &AblationInput, cfg: &RunConfig) -> Result<AblationResult<T>> {
    let raster = &input.raster;
    let ctx = RunSetup::for_input(cfg, input)?;
    let model_cfg = cfg.model_config();
    let region = Some(ctx.train_region.as_slice());

    let uniform = ClassWeights::<T>::uniform();
    let balanced: ClassWeights<T> = class_weights(&region_counts(&ctx.expert_mask, region))?;
    log::info!("class weights {:?}", balanced.to_f64());

    let mut runs = Vec::with_capacity(4);
    let (base_params, base_report) = train_in_region(raster, &ctx.expert_mask, region, &uniform, &model_cfg)?;
    runs.push(ctx.score(cfg, raster, Strategy::Baseline, base_params.clone(), base_report.clone(), None)?);

    let (cw_params, cw_report) = train_in_region(raster, &ctx.expert_mask, region, &balanced, &model_cfg)?;
    runs.push(ctx.score(cfg, raster, Strategy::ClassWeighting, cw_params.clone(), cw_report, None)?);

    // pseudo rows start from the class-weighted model, or from Baseline when independent
    let (start, start_w, policy) = if cfg.independent {
        (&base_params, uniform, WeightPolicy::KeepOriginal)
    } else {
        (&cw_params, balanced, cfg.weight_policy)
    };
    for (strategy, filtered) in [
        (Strategy::PseudoLabeling, false),
        (Strategy::PostprocessedPseudoLabeling, true),
    ] {
        let pcfg = PseudoLabelConfig {
            apply_pvalue_filter: filtered,
            ..cfg.pseudo.clone()
        };
        let trained = pseudo_label_rounds(
            start,
            raster,
            &ctx.expert_mask,
            region,
            &ctx.reference_areas,
            &start_w,
            policy,
            &pcfg,
            &model_cfg,
        )?;
        let (params, report) = (trained.params.clone(), trained.report.clone());
        runs.push(ctx.score(cfg, raster, strategy, params, report, Some(trained))?);
    }

    Ok(AblationResult {
        config: cfg.clone(),
        geo: ctx.geo,
        split: ctx.split,
        reference_areas: ctx.reference_areas,
        truth_components: ctx.truth_components,
        runs,
    })
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Polygon metrics rows as CSV, one line per row.
pub fn metrics_table_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("strategy,filter,precision,recall,f1,tp,n_pred,n_truth\n");
    for row in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.strategy,
            row.filter_label(),
            fmt6(row.precision),
            fmt6(row.recall),
            fmt6(row.f1),
            row.tp,
            row.n_pred,
            row.n_truth
        );
    }
    out
}

impl<T: Scalar> AblationResult<T> {
    pub fn run(&self, strategy: Strategy) -> &StrategyRun<T> {
        self.runs.iter().find(|r| r.strategy == strategy).expect("every strategy is run")
    }

    pub fn rows(&self) -> Vec<MetricsRow> {
        self.runs.iter().flat_map(|r| r.evaluations.iter().map(|e| e.row.clone())).collect()
    }

    /// Macro F1 per strategy (rows) and filter (columns).
    pub fn f1_table_csv(&self) -> String {
        let mut out = String::from("strategy,raw");
        for e in &self.config.eval.eval_filter {
            let _ = write!(out, ",{e:.1}");
        }
        out.push('\n');
        for r in &self.runs {
            out.push_str(r.strategy.label());
            for e in &r.evaluations {
                out.push(',');
                out.push_str(&fmt6(e.row.f1));
            }
            out.push('\n');
        }
        out
    }

    /// One line per strategy × filter.
    pub fn metrics_csv(&self) -> String {
        metrics_table_csv(&self.rows())
    }

    pub fn report_json(&self) -> Result<Value> {
        let strategies: Vec<Value> = self
            .runs
            .iter()
            .map(|r| {
                Ok(json!({
                    "strategy": r.strategy.label(),
                    "weights": r.report.weights.to_f64(),
                    "final_loss": r.report.final_loss.to_f64_lossy(),
                    "n_predictions": r.predictions.len(),
                    "polygon_metrics": r.evaluations.iter().map(|e| Ok(json!({
                        "filter": e.row.filter_label(),
                        "metrics": serde_json::to_value(&e.metrics)?,
                        "kept": e.kept.len(),
                    }))).collect::<Result<Vec<Value>>>()?,
                    "pixel_metrics": serde_json::to_value(&r.pixel)?,
                    "pseudo_rounds": r.pseudo.as_ref().map(|p| serde_json::to_value(&p.rounds)).transpose()?,
                }))
            })
            .collect::<Result<_>>()?;
        Ok(json!({
            "config": serde_json::to_value(&self.config)?,
            "n_truth_components": self.truth_components.len(),
            "reference_counts": ClassId::ANNOTATED.iter()
                .map(|c| (c.name().to_string(), Value::from(self.reference_areas[c.index()].len())))
                .collect::<Map<String, Value>>(),
            "strategies": strategies,
        }))
    }

    /// Predicted test-region polygons with area and p-value.
    pub fn predictions_geojson(&self, strategy: Strategy) -> Result<Value> {
        let run = self.run(strategy);
        let pvalues = component_pvalues(&run.predictions, &self.reference_areas)?;
        let mut features = Vec::with_capacity(run.predictions.len());
        for (c, p) in run.predictions.iter().zip(pvalues) {
            let (poly, area) = component_to_polygon(c, &self.geo)?;
            let mut extra = Map::new();
            extra.insert("area_m2".into(), Value::from(area));
            if let Some(p) = p {
                extra.insert("pvalue".into(), Value::from(p.pvalue));
            }
            features.push(geojson_feature(c.class, &poly, Source::Pseudo, extra));
        }
        Ok(feature_collection(features))
    }

    /// Write tables, the JSON report, per-strategy parameters, predictions and pseudo-labels.
    pub fn write_outputs(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, text)?;
            written.push(p);
            Ok(())
        };
        put("f1_table.csv".into(), self.f1_table_csv())?;
        put("metrics.csv".into(), self.metrics_csv())?;
        put("report.json".into(), serde_json::to_string_pretty(&self.report_json()?)? + "\n")?;
        put("split.json".into(), serde_json::to_string(&self.split)? + "\n")?;
        for r in &self.runs {
            put(format!("params-{}.json", r.strategy.slug()), r.params.to_json()? + "\n")?;
            put(
                format!("predictions-{}.geojson", r.strategy.slug()),
                serde_json::to_string(&self.predictions_geojson(r.strategy)?)? + "\n",
            )?;
            if let Some(p) = &r.pseudo {
                put(
                    format!("pseudo-{}.geojson", r.strategy.slug()),
                    serde_json::to_string(&p.pseudo.to_geojson())? + "\n",
                )?;
            }
        }
        Ok(written)
    }
}

/// Polygonize components and write them as GeoJSON.
pub fn write_components_geojson(components: &[Component], geo: &GeoTransform, path: impl AsRef<Path>) -> Result<()> {
    let mut features = Vec::with_capacity(components.len());
    for c in components {
        let (poly, area) = component_to_polygon(c, geo)?;
        let mut extra = Map::new();
        extra.insert("area_m2".into(), Value::from(area));
        features.push(geojson_feature(c.class, &poly, Source::Pseudo, extra));
    }
    write_geojson(&feature_collection(features), path)
}
