//! Generate a synthetic scene and run the strategy ablation on it.
//!
//! Usage: synthetic_ablation [SEED] [RUN_CONFIG_JSON] [SCENE_SPEC_JSON]

use std::time::Instant;

use sparseseg::pipeline::{run_ablation, AblationInput, RunConfig};
use sparseseg::synth::{generate_scene, SceneSpec};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPARSESEG_LOG", "info")).init();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let mut cfg: RunConfig = match args.get(2) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    let mut spec: SceneSpec = match args.get(3) {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SceneSpec::default(),
    };
    spec.seed = seed;
    cfg.seed = seed;

    let t = Instant::now();
    let scene = generate_scene(&spec)?;
    let input = AblationInput {
        raster: scene.raster,
        sparse: scene.sparse_labels,
        truth: scene.full_truth,
    };
    let result = run_ablation::<f32>(&input, &cfg)?;
    for run in &result.runs {
        let pseudo = run.pseudo.as_ref().map_or(0, |p| p.pseudo.len());
        println!(
            "{:30} pixel F1 {:.3}  loss {:.4}  pseudo-labels {pseudo}",
            run.strategy.label(),
            run.pixel.macro_f1,
            run.report.final_loss
        );
    }
    print!("{}", result.f1_table_csv());
    println!("elapsed {:.1}s", t.elapsed().as_secs_f64());
    Ok(())
}
