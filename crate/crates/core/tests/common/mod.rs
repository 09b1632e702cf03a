//! Shared fixtures: the 1943/1972 annotation tables and the
//! synthetic acceptance scene.
#![allow(dead_code)]

use sparseseg::annot::{parse_annotations, rasterize, AnnotationSet, Polygon, Source};
use sparseseg::pipeline::{AblationInput, RunConfig};
use sparseseg::synth::{generate_scene, ObjectSpec, SceneSpec};
use sparseseg::{ClassId, GeoTransform, LabelGrid};

/// One class row of the annotation table.
#[derive(Debug, Clone, Copy)]
pub struct TableRow {
    pub class: ClassId,
    pub pixels: u64,
    pub polygons: usize,
    pub sum_area: u64,
    pub mean_area: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Epoch {
    pub year: u32,
    pub rows: [TableRow; 3],
    pub total_pixels: u64,
    /// Annotated share of all image pixels, in percent.
    pub total_pixel_pct: f64,
    pub total_polygons: usize,
    pub total_sum_area: u64,
    pub total_mean_area: f64,
}

const fn row(class: ClassId, pixels: u64, polygons: usize, sum_area: u64, mean_area: f64) -> TableRow {
    TableRow {
        class,
        pixels,
        polygons,
        sum_area,
        mean_area,
    }
}

pub const EPOCH_1943: Epoch = Epoch {
    year: 1943,
    rows: [
        row(ClassId::Waterhole, 39776, 103, 14809, 143.77),
        row(ClassId::Omuti, 483095, 205, 190892, 931.18),
        row(ClassId::BigTree, 580251, 2685, 230052, 85.68),
    ],
    total_pixels: 1103122,
    total_pixel_pct: 0.97,
    total_polygons: 2993,
    total_sum_area: 435753,
    total_mean_area: 145.59,
};

pub const EPOCH_1972: Epoch = Epoch {
    year: 1972,
    rows: [
        row(ClassId::Waterhole, 52397, 273, 47850, 175.27),
        row(ClassId::Omuti, 350400, 482, 348398, 722.82),
        row(ClassId::BigTree, 1410979, 13088, 1410616, 107.78),
    ],
    total_pixels: 1813776,
    total_pixel_pct: 3.84,
    total_polygons: 13843,
    total_sum_area: 1806864,
    total_mean_area: 130.53,
};

/// Integer areas summing exactly to `sum` over `n` polygons.
fn split_sum(sum: u64, n: usize) -> Vec<u64> {
    let (base, extra) = (sum / n as u64, (sum % n as u64) as usize);
    (0..n).map(|i| base + u64::from(i < extra)).collect()
}

/// Staircase polygon of exactly `area` unit pixels with its top-left pixel at
/// (col, row) on a unit grid centered at the origin; returns it with its width
/// and height in pixels.
fn staircase(area: u64, col: u64, row: u64) -> (Polygon, u64, u64) {
    let w = (area as f64).sqrt().ceil() as u64;
    let (q, r) = (area / w, area % w);
    // pixel-corner coordinates (X, R) map to x = X - 0.5, y = 0.5 - R
    let corner = |x: u64, rr: u64| [x as f64 - 0.5, 0.5 - rr as f64];
    let ring = if r == 0 {
        vec![corner(col, row), corner(col + w, row), corner(col + w, row + q), corner(col, row + q)]
    } else {
        vec![
            corner(col, row),
            corner(col + w, row),
            corner(col + w, row + q),
            corner(col + r, row + q),
            corner(col + r, row + q + 1),
            corner(col, row + q + 1),
        ]
    };
    let h = q + u64::from(r > 0);
    (Polygon::new(ring).expect("staircase is simple"), w, h)
}

/// Annotation set with the epoch's per-class polygon counts and exact sum
/// areas, packed on shelves of a 1 m grid, plus the grid it rasterizes onto.
/// The set goes through GeoJSON text so the fixture exercises ingest as well.
pub fn table_fixture(epoch: &Epoch) -> (LabelGrid, AnnotationSet) {
    let shelf_width = ((epoch.total_sum_area as f64 * 2.0).sqrt().ceil() as u64).max(64);
    let mut set = AnnotationSet::new();
    let (mut col, mut row, mut shelf_h, mut max_w) = (0u64, 0u64, 0u64, 0u64);
    for r in &epoch.rows {
        for area in split_sum(r.sum_area, r.polygons) {
            let w = (area as f64).sqrt().ceil() as u64;
            if col + w > shelf_width {
                col = 0;
                row += shelf_h + 1;
                shelf_h = 0;
            }
            let (poly, w, h) = staircase(area, col, row);
            set.push(r.class, poly, Source::Expert).unwrap();
            col += w + 1;
            shelf_h = shelf_h.max(h);
            max_w = max_w.max(col);
        }
    }
    let text = serde_json::to_string(&set.to_geojson()).unwrap();
    let set = parse_annotations(&text).unwrap();
    let geo = GeoTransform::unit();
    let grid = rasterize(&set, &geo, max_w as usize, (row + shelf_h) as usize).unwrap();
    (grid, set)
}

/// Unannotated pixel count implied by the annotated share of the image.
pub fn implied_unknown_pixels(epoch: &Epoch) -> u64 {
    (epoch.total_pixels as f64 * 100.0 / epoch.total_pixel_pct).round() as u64 - epoch.total_pixels
}

/// 512×512 scene with 30% of objects annotated. Gray levels are ordered
/// waterhole < tree < background < omuti.
pub fn acceptance_scene(seed: u64) -> SceneSpec {
    SceneSpec {
        seed,
        background_gray: 140.0,
        background_noise: 15.0,
        waterhole: ObjectSpec {
            count: 16,
            area_log_mu: 4.94,
            area_log_sigma: 0.3,
            gray: 10.0,
            contrast: 10.0,
        },
        omuti: ObjectSpec {
            count: 14,
            area_log_mu: 6.68,
            area_log_sigma: 0.25,
            gray: 195.0,
            contrast: 25.0,
        },
        bigtree: ObjectSpec {
            count: 120,
            area_log_mu: 4.09,
            area_log_sigma: 0.3,
            gray: 68.0,
            contrast: 17.0,
        },
        annotated_fraction: 0.3,
        ..SceneSpec::default()
    }
}

pub fn acceptance_run_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.model.patch_size = 7;
    cfg.model.learning_rate = 0.5;
    cfg.model.batch_size = 64;
    cfg.model.max_epochs = 20;
    cfg
}

pub fn scene_input(spec: &SceneSpec) -> AblationInput {
    let scene = generate_scene(spec).unwrap();
    AblationInput {
        raster: scene.raster,
        sparse: scene.sparse_labels,
        truth: scene.full_truth,
    }
}
