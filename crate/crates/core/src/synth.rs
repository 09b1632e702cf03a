//! Deterministic synthetic aerial scenes with complete ground truth.
//!
//! Waterholes render as very dark ellipses, omutis as large light compounds
//! with a lighter ring, and big trees as small dark crowns with a brighter rim,
//! all on a noisy mid-gray background. Object areas are log-normal.
//!
//! Gray levels are ordered waterhole < tree < background < omuti by default so
//! that blurred object edges pass through background gray rather than through
//! another class.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::annot::{rasterize, AnnotationSet, Polygon, Source};
use crate::error::{Error, Result};
use crate::raster::{ClassId, GeoTransform, GrayRaster};

const RING_VERTICES: usize = 32;
const PLACEMENT_TRIES: usize = 5000;
/// Minimum free pixels between object bounding circles.
const PLACEMENT_GAP: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub count: usize,
    /// Mean of ln(area / m²).
    pub area_log_mu: f64,
    /// Standard deviation of ln(area / m²).
    pub area_log_sigma: f64,
    /// Gray level of the object body.
    pub gray: f64,
    /// Gray offset of the object's rim or ring.
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub pixel_size: f64,
    pub origin_x: f64,
    pub origin_y: f64,
    pub seed: u64,
    pub waterhole: ObjectSpec,
    pub omuti: ObjectSpec,
    pub bigtree: ObjectSpec,
    pub background_gray: f64,
    pub background_noise: f64,
    pub annotated_fraction: f64,
}

impl Default for SceneSpec {
    // polygon shares follow the 1943 annotation mix: ~3% / 7% / 90%
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            pixel_size: 1.0,
            origin_x: 0.0,
            origin_y: 0.0,
            seed: 0,
            waterhole: ObjectSpec {
                count: 4,
                area_log_mu: 140f64.ln(),
                area_log_sigma: 0.3,
                gray: 10.0,
                contrast: 10.0,
            },
            omuti: ObjectSpec {
                count: 9,
                area_log_mu: 800f64.ln(),
                area_log_sigma: 0.25,
                gray: 195.0,
                contrast: 25.0,
            },
            bigtree: ObjectSpec {
                count: 120,
                area_log_mu: 60f64.ln(),
                area_log_sigma: 0.3,
                gray: 68.0,
                contrast: 17.0,
            },
            background_gray: 140.0,
            background_noise: 15.0,
            annotated_fraction: 0.3,
        }
    }
}

impl SceneSpec {
    pub fn object(&self, class: ClassId) -> &ObjectSpec {
        match class {
            ClassId::Waterhole => &self.waterhole,
            ClassId::Omuti => &self.omuti,
            ClassId::BigTree => &self.bigtree,
            ClassId::Unknown => panic!("no object spec for the unknown class"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::EmptyGrid);
        }
        if !(self.annotated_fraction > 0.0 && self.annotated_fraction <= 1.0) {
            return Err(Error::InvalidConfig("annotated_fraction must lie in (0,1]".into()));
        }
        if !(self.pixel_size > 0.0) || self.background_noise < 0.0 {
            return Err(Error::InvalidConfig("pixel_size must be positive and noise non-negative".into()));
        }
        for class in ClassId::ANNOTATED {
            if !(self.object(class).area_log_sigma >= 0.0) {
                return Err(Error::InvalidConfig(format!("{class}: area_log_sigma must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn geo(&self) -> Result<GeoTransform> {
        GeoTransform::new(self.origin_x, self.origin_y, self.pixel_size)
    }
}

/// Placed object in pixel units.
#[derive(Debug, Clone)]
struct Placed {
    class: ClassId,
    cx: f64,
    cy: f64,
    semi_major: f64,
    semi_minor: f64,
    angle: f64,
}

impl Placed {
    fn ring(&self, geo: &GeoTransform) -> Vec<[f64; 2]> {
        let (s, c) = self.angle.sin_cos();
        (0..RING_VERTICES)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / RING_VERTICES as f64;
                let (u, v) = (self.semi_major * t.cos(), self.semi_minor * t.sin());
                let (col, row) = (self.cx + u * c - v * s, self.cy + u * s + v * c);
                let (x, y) = geo.pixel_center(col, row);
                [x, y]
            })
            .collect()
    }

    /// Normalized elliptical radius of a pixel center; 1 on the boundary.
    fn radius(&self, col: f64, row: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (col - self.cx, row - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.semi_major).powi(2) + (v / self.semi_minor).powi(2)).sqrt()
    }

    fn intensity(&self, spec: &ObjectSpec, r: f64) -> f64 {
        match self.class {
            // darkest at the center
            ClassId::Waterhole => spec.gray + spec.contrast * r * r,
            ClassId::Omuti => {
                if r > 0.75 {
                    spec.gray + spec.contrast
                } else {
                    spec.gray
                }
            }
            ClassId::BigTree => {
                if r > 0.6 {
                    spec.gray + spec.contrast
                } else {
                    spec.gray
                }
            }
            ClassId::Unknown => unreachable!(),
        }
    }
}

/// Rendered scene: image, every object, and the sparse annotated subset.
#[derive(Debug, Clone)]
pub struct Scene {
    pub raster: GrayRaster,
    pub full_truth: AnnotationSet,
    pub sparse_labels: AnnotationSet,
}

fn aspect_range(class: ClassId) -> (f64, f64) {
    match class {
        ClassId::Waterhole => (1.0, 1.6),
        ClassId::Omuti => (1.0, 1.25),
        _ => (1.0, 1.15),
    }
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let geo = spec.geo()?;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut place_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut placed: Vec<Placed> = Vec::new();

    // largest objects first so they find room
    for class in [ClassId::Omuti, ClassId::Waterhole, ClassId::BigTree] {
        let os = spec.object(class);
        let dist = LogNormal::new(os.area_log_mu, os.area_log_sigma)
            .map_err(|e| Error::InvalidConfig(format!("{class}: {e}")))?;
        let (lo, hi) = (
            (os.area_log_mu - 2.5 * os.area_log_sigma).exp(),
            (os.area_log_mu + 2.5 * os.area_log_sigma).exp(),
        );
        let (amin, amax) = aspect_range(class);
        for k in 0..os.count {
            let area_px = dist.sample(&mut place_rng).clamp(lo, hi) / (spec.pixel_size * spec.pixel_size);
            let aspect = place_rng.gen_range(amin..=amax);
            let semi_minor = (area_px / (std::f64::consts::PI * aspect)).sqrt();
            let semi_major = semi_minor * aspect;
            let angle = place_rng.gen_range(0.0..std::f64::consts::PI);
            let margin = semi_major + 1.0;
            if 2.0 * margin >= w || 2.0 * margin >= h {
                return Err(Error::PlacementFailure(format!("{class} {k} does not fit in the scene")));
            }
            let mut ok = None;
            for _ in 0..PLACEMENT_TRIES {
                let cx = place_rng.gen_range(margin..w - margin);
                let cy = place_rng.gen_range(margin..h - margin);
                let clear = placed.iter().all(|p| {
                    let d = ((p.cx - cx).powi(2) + (p.cy - cy).powi(2)).sqrt();
                    d >= p.semi_major + semi_major + PLACEMENT_GAP
                });
                if clear {
                    ok = Some((cx, cy));
                    break;
                }
            }
            let (cx, cy) = ok.ok_or_else(|| {
                Error::PlacementFailure(format!("could not place {class} {k} after {PLACEMENT_TRIES} tries"))
            })?;
            placed.push(Placed {
                class,
                cx,
                cy,
                semi_major,
                semi_minor,
                angle,
            });
        }
    }

    let mut full_truth = AnnotationSet::new();
    for p in &placed {
        full_truth.push(p.class, Polygon::new(p.ring(&geo))?, Source::Expert)?;
    }

    // sparse subset: per class, a seeded choice of round(fraction * count) objects
    let mut pick_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut chosen = vec![false; placed.len()];
    for class in ClassId::ANNOTATED {
        let mut idx: Vec<usize> = (0..placed.len()).filter(|&i| placed[i].class == class).collect();
        let n = (spec.annotated_fraction * idx.len() as f64).round() as usize;
        idx.shuffle(&mut pick_rng);
        for &i in &idx[..n.min(idx.len())] {
            chosen[i] = true;
        }
    }
    let sparse_labels = AnnotationSet::from_entries(
        full_truth
            .entries()
            .iter()
            .zip(&chosen)
            .filter(|(_, &c)| c)
            .map(|(e, _)| e.clone())
            .collect(),
    )?;

    // base intensities: background, then each object's profile over its rasterized footprint
    let labels = rasterize(&full_truth, &geo, spec.width, spec.height)?;
    let mut base = vec![spec.background_gray; spec.width * spec.height];
    for p in &placed {
        let os = spec.object(p.class);
        let r = p.semi_major + 1.0;
        let (c0, c1) = ((p.cx - r).floor().max(0.0) as usize, ((p.cx + r).ceil() as usize).min(spec.width - 1));
        let (r0, r1) = ((p.cy - r).floor().max(0.0) as usize, ((p.cy + r).ceil() as usize).min(spec.height - 1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let i = row * spec.width + col;
                if labels.labels()[i] != p.class {
                    continue;
                }
                let rad = p.radius(col as f64, row as f64);
                if rad <= 1.05 {
                    base[i] = p.intensity(os, rad.min(1.0));
                }
            }
        }
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let values = if spec.background_noise > 0.0 {
        let noise = Normal::new(0.0, spec.background_noise).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        base.iter()
            .map(|&b| (b + noise.sample(&mut noise_rng)).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        base.iter().map(|&b| b.round().clamp(0.0, 255.0) as u8).collect()
    };
    let raster = GrayRaster::new(spec.width, spec.height, values, geo)?;
    Ok(Scene {
        raster,
        full_truth,
        sparse_labels,
    })
}
