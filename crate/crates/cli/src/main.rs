//! Command-line front end for the sparse-label segmentation workflow.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Map, Value};

use sparseseg::annot::{
    compute_stats, feature_collection, geojson_feature, load_annotations, rasterize, write_geojson, ClassStats,
};
use sparseseg::change::compare_epochs;
use sparseseg::eval::Scoring;
use sparseseg::filter::{filter_by_threshold, AreaReference, PValueRecord};
use sparseseg::model::{argmax_labels, predict, train_in_region, SegmenterParams};
use sparseseg::pipeline::{metrics_table_csv, run_ablation, AblationInput, RunConfig, RunSetup};
use sparseseg::polyops::{connected_components, Connectivity};
use sparseseg::pseudo::{pseudo_label_rounds, region_counts};
use sparseseg::raster::{load_labels, load_raster, save_labels, save_raster};
use sparseseg::synth::{generate_scene, SceneSpec};
use sparseseg::weights::{class_weights, ClassWeights};
use sparseseg::Scalar;

#[derive(Parser, Debug)]
#[command(name = "sparseseg", version, about = "Sparse-label segmentation of aerial imagery")]
struct Cli {
    /// Run configuration (scene spec for `synth`)
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Eval-time filter thresholds, comma separated
    #[arg(long, global = true, value_delimiter = ',')]
    eth: Option<Vec<f64>>,

    /// Treatment of pixels without truth labels
    #[arg(long, global = true, value_enum)]
    scoring: Option<ScoringArg>,

    /// Floating-point precision of model computations
    #[arg(long, global = true, value_enum, default_value = "f64")]
    precision: Precision,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ScoringArg {
    ExcludeUnknown,
    UnknownAsFp,
}

impl From<ScoringArg> for Scoring {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::ExcludeUnknown => Scoring::ExcludeUnknown,
            ScoringArg::UnknownAsFp => Scoring::UnknownAsFp,
        }
    }
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a synthetic scene with full and sparse annotations
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-class annotation statistics as CSV
    Stats {
        #[arg(long)]
        labels: PathBuf,
        /// Raster defining the pixel grid
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the train/test tile split of the configured raster
    Split {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the train tiles of the sparse labels
    Train {
        /// Output directory for params.json and train_log.jsonl
        #[arg(long)]
        out: PathBuf,
        /// Use uniform class weights instead of balanced ones
        #[arg(long)]
        uniform: bool,
    },
    /// Predict a label raster
    Predict {
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        raster: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a label raster into GeoJSON polygons
    Polygonize {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Pixel connectivity, 4 or 8
        #[arg(long, default_value_t = 8)]
        connectivity: u8,
    },
    /// Discard polygons whose area p-value lies outside the band
    Filter {
        #[arg(long)]
        predictions: PathBuf,
        /// Annotated polygons providing the reference areas
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pseudo-label rounds starting from trained parameters
    PseudoTrain {
        /// Starting parameters; a class-weighted model is trained when omitted
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted label raster on the test tiles
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the four-strategy ablation and print the F1 table
    Ablate {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add each mechanism to Baseline alone instead of stacking
        #[arg(long)]
        independent: bool,
    },
    /// Per-class change between two statistics CSVs
    Compare {
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSESEG_LOG", "info"))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let lib = e.chain().find_map(|c| c.downcast_ref::<sparseseg::Error>());
            match lib {
                Some(le) => {
                    eprintln!("error: {le}");
                    ExitCode::from(if le.is_validation() { 1 } else { 2 })
                }
                None => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { out } => synth(cli, out),
        Command::Stats { labels, raster, out } => stats(labels, raster, out.as_deref()),
        Command::Split { out } => split(cli, out),
        Command::Train { out, uniform } => match cli.precision {
            Precision::F32 => train::<f32>(cli, out, *uniform),
            Precision::F64 => train::<f64>(cli, out, *uniform),
        },
        Command::Predict { params, raster, out } => match cli.precision {
            Precision::F32 => predict_labels::<f32>(params, raster, out),
            Precision::F64 => predict_labels::<f64>(params, raster, out),
        },
        Command::Polygonize {
            labels,
            out,
            connectivity,
        } => polygonize(labels, out, *connectivity),
        Command::Filter {
            predictions,
            reference,
            out,
        } => filter(cli, predictions, reference, out),
        Command::PseudoTrain { params, out } => match cli.precision {
            Precision::F32 => pseudo_train::<f32>(cli, params.as_deref(), out),
            Precision::F64 => pseudo_train::<f64>(cli, params.as_deref(), out),
        },
        Command::Eval { predictions, out } => eval(cli, predictions, out.as_deref()),
        Command::Ablate { out, independent } => match cli.precision {
            Precision::F32 => ablate::<f32>(cli, out.as_deref(), *independent),
            Precision::F64 => ablate::<f64>(cli, out.as_deref(), *independent),
        },
        Command::Compare { t1, t2, out } => compare(t1, t2, out.as_deref()),
    }
}

/// Load the run configuration and apply command-line overrides.
fn run_config(cli: &Cli) -> Result<RunConfig> {
    let Some(path) = &cli.config else {
        return Err(sparseseg::Error::InvalidConfig("--config is required".into()).into());
    };
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(eth) = &cli.eth {
        cfg.eval.eval_filter = eth.clone();
    }
    if let Some(s) = cli.scoring {
        cfg.eval.scoring = s.into();
    }
    cfg.validate_paths()?;
    Ok(cfg)
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json(value: &impl serde::Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(cli: &Cli, out: &Path) -> Result<()> {
    let mut spec: SceneSpec = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|_| sparseseg::Error::MissingFile(p.clone()))?;
            serde_json::from_str(&text).map_err(sparseseg::Error::from)?
        }
        None => SceneSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let scene = generate_scene(&spec)?;
    fs::create_dir_all(out)?;
    save_raster(&scene.raster, out.join("img.pgm"))?;
    scene.full_truth.save(out.join("truth.geojson"))?;
    scene.sparse_labels.save(out.join("sparse.geojson"))?;
    let run = RunConfig {
        raster: Some("img.pgm".into()),
        annotations: Some("sparse.geojson".into()),
        truth: Some("truth.geojson".into()),
        seed: spec.seed,
        ..RunConfig::default()
    };
    write_json(&run, &out.join("run.json"))?;
    log::info!(
        "scene {}x{}: {} objects, {} annotated",
        spec.width,
        spec.height,
        scene.full_truth.len(),
        scene.sparse_labels.len()
    );
    Ok(())
}

fn stats(labels: &Path, raster: &Path, out: Option<&Path>) -> Result<()> {
    let r = load_raster(raster)?;
    let a = load_annotations(labels)?;
    let grid = rasterize(&a, r.geo(), r.width(), r.height())?;
    emit(&compute_stats(&grid, &a).to_csv()?, out)
}

fn split(cli: &Cli, out: &Path) -> Result<()> {
    let cfg = run_config(cli)?;
    let Some(raster) = &cfg.raster else {
        bail!(sparseseg::Error::InvalidConfig("config has no raster path".into()));
    };
    let r = load_raster(raster)?;
    let spec = cfg.make_split(r.width(), r.height())?;
    write_json(&spec, out)?;
    log::info!("{} tiles", spec.tile_count());
    Ok(())
}

fn train<T: Scalar>(cli: &Cli, out: &Path, uniform: bool) -> Result<()> {
    let cfg = run_config(cli)?;
    let input = AblationInput::load(&cfg)?;
    let setup = RunSetup::for_input(&cfg, &input)?;
    let region = Some(setup.train_region.as_slice());
    let w: ClassWeights<T> = if uniform {
        ClassWeights::uniform()
    } else {
        class_weights(&region_counts(&setup.expert_mask, region))?
    };
    let (params, report) = train_in_region(&input.raster, &setup.expert_mask, region, &w, &cfg.model_config())?;
    fs::create_dir_all(out)?;
    params.save(out.join("params.json"))?;
    report.save_jsonl(out.join("train_log.jsonl"))?;
    log::info!("final loss {}", report.final_loss);
    Ok(())
}

fn predict_labels<T: Scalar>(params: &Path, raster: &Path, out: &Path) -> Result<()> {
    let params = SegmenterParams::<T>::load(params)?;
    let r = load_raster(raster)?;
    let labels = argmax_labels(&predict(&params, &r)?);
    save_labels(&labels, out)?;
    Ok(())
}

fn polygonize(labels: &Path, out: &Path, connectivity: u8) -> Result<()> {
    let grid = load_labels(labels)?;
    let conn = Connectivity::from_neighbors(connectivity)?;
    let components = connected_components(&grid, conn);
    sparseseg::pipeline::write_components_geojson(&components, grid.geo(), out)?;
    log::info!("{} polygons", components.len());
    Ok(())
}

fn filter(cli: &Cli, predictions: &Path, reference: &Path, out: &Path) -> Result<()> {
    let e_th = match cli.eth.as_deref() {
        None => 1.0,
        Some([e]) => *e,
        Some(_) => bail!(sparseseg::Error::InvalidConfig("filter takes a single --eth value".into())),
    };
    let pred = load_annotations(predictions)?;
    let refs = load_annotations(reference)?.areas_by_class();
    let refs: Vec<Option<AreaReference<f64>>> =
        refs.iter().map(|a| if a.is_empty() { None } else { AreaReference::new(a).ok() }).collect();
    // polygons of classes without reference areas pass through unfiltered
    let mut records = Vec::new();
    let mut scored = Vec::new();
    let mut keep = vec![true; pred.len()];
    let mut pvalues = vec![None; pred.len()];
    for (i, a) in pred.iter().enumerate() {
        if let Some(r) = &refs[a.class.index()] {
            let area = a.polygon.area();
            let pvalue = r.pvalue(area);
            records.push(PValueRecord {
                class: a.class,
                area_m2: area,
                pvalue,
            });
            scored.push(i);
            pvalues[i] = Some(pvalue);
            keep[i] = false;
        }
    }
    let outcome = filter_by_threshold(&records, e_th)?;
    for k in &outcome.kept {
        keep[scored[*k]] = true;
    }
    for s in &outcome.summary {
        log::info!(
            "{}: kept {} of {} (mu {:.4}, sigma {:.4})",
            s.class,
            s.n_kept,
            s.n_input,
            s.mu,
            s.sigma
        );
    }
    let features = pred
        .iter()
        .enumerate()
        .filter(|(i, _)| keep[*i])
        .map(|(i, a)| {
            let mut extra = Map::new();
            extra.insert("area_m2".into(), Value::from(a.polygon.area()));
            if let Some(p) = pvalues[i] {
                extra.insert("pvalue".into(), Value::from(p));
            }
            geojson_feature(a.class, &a.polygon, a.source, extra)
        })
        .collect();
    write_geojson(&feature_collection(features), out)?;
    Ok(())
}

fn pseudo_train<T: Scalar>(cli: &Cli, params: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = run_config(cli)?;
    let input = AblationInput::load(&cfg)?;
    let setup = RunSetup::for_input(&cfg, &input)?;
    let region = Some(setup.train_region.as_slice());
    let model_cfg = cfg.model_config();
    let w: ClassWeights<T> = class_weights(&region_counts(&setup.expert_mask, region))?;
    let initial = match params {
        Some(p) => SegmenterParams::<T>::load(p)?,
        None => train_in_region(&input.raster, &setup.expert_mask, region, &w, &model_cfg)?.0,
    };
    let trained = pseudo_label_rounds(
        &initial,
        &input.raster,
        &setup.expert_mask,
        region,
        &setup.reference_areas,
        &w,
        cfg.weight_policy,
        &cfg.pseudo,
        &model_cfg,
    )?;
    fs::create_dir_all(out)?;
    trained.params.save(out.join("params.json"))?;
    trained.report.save_jsonl(out.join("train_log.jsonl"))?;
    write_geojson(&trained.pseudo.to_geojson(), out.join("pseudo.geojson"))?;
    write_json(&trained.rounds, &out.join("rounds.json"))?;
    log::info!("{} pseudo-labels", trained.pseudo.len());
    Ok(())
}

fn eval(cli: &Cli, predictions: &Path, out: Option<&Path>) -> Result<()> {
    let cfg = run_config(cli)?;
    let input = AblationInput::load(&cfg)?;
    let setup = RunSetup::for_input(&cfg, &input)?;
    let pred = load_labels(predictions)?;
    let label = predictions.file_stem().and_then(|s| s.to_str()).unwrap_or("prediction");
    let (_, evaluations, pixel) = setup.evaluate(&cfg, label, &pred)?;
    log::info!("pixel macro F1 {:.4}", pixel.macro_f1);
    let rows: Vec<_> = evaluations.into_iter().map(|e| e.row).collect();
    emit(&metrics_table_csv(&rows), out)
}

fn ablate<T: Scalar>(cli: &Cli, out: Option<&Path>, independent: bool) -> Result<()> {
    let mut cfg = run_config(cli)?;
    cfg.independent |= independent;
    let input = AblationInput::load(&cfg)?;
    let result = run_ablation::<T>(&input, &cfg)?;
    if let Some(dir) = out.or(cfg.out_dir.as_deref()) {
        let written = result.write_outputs(dir)?;
        log::info!("wrote {} files to {}", written.len(), dir.display());
    }
    print!("{}", result.f1_table_csv());
    Ok(())
}

fn compare(t1: &Path, t2: &Path, out: Option<&Path>) -> Result<()> {
    let read = |p: &Path| -> Result<ClassStats> {
        let text = fs::read_to_string(p).map_err(|_| sparseseg::Error::MissingFile(p.to_path_buf()))?;
        Ok(ClassStats::from_csv(&text)?)
    };
    let report = compare_epochs(&read(t1)?, &read(t2)?);
    emit(&report.to_csv()?, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn eth_list_parses() {
        let cli = Cli::try_parse_from(["sparseseg", "--eth", "1.0,0.5", "compare", "--t1", "a", "--t2", "b"]).unwrap();
        assert_eq!(cli.eth, Some(vec![1.0, 0.5]));
    }

    #[test]
    fn unknown_scoring_is_rejected() {
        assert!(Cli::try_parse_from(["sparseseg", "--scoring", "bogus", "split", "--out", "x"]).is_err());
    }
}
