//! Polygon annotations: GeoJSON ingest, rasterization, spatial train/test
//! splitting and per-class annotation statistics.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::raster::{pixel_area, ClassId, GeoTransform, LabelGrid};
use crate::scalar::Scalar;

/// Absolute shoelace area of an implicitly closed ring.
pub fn ring_area<T: Scalar>(ring: &[[T; 2]]) -> T {
    signed_ring_area(ring).abs()
}

pub fn signed_ring_area<T: Scalar>(ring: &[[T; 2]]) -> T {
    let n = ring.len();
    if n < 3 {
        return T::zero();
    }
    let two = T::one() + T::one();
    // shifted by the first vertex to keep large map coordinates from cancelling
    let [x0, y0] = ring[0];
    let mut acc = T::zero();
    for i in 0..n {
        let [xa, ya] = ring[i];
        let [xb, yb] = ring[(i + 1) % n];
        acc = acc + ((xa - x0) * (yb - y0) - (xb - x0) * (ya - y0));
    }
    acc / two
}

/// Euclidean length of the closed ring.
pub fn ring_perimeter<T: Scalar>(ring: &[[T; 2]]) -> T {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let [xa, ya] = ring[i];
            let [xb, yb] = ring[(i + 1) % n];
            (xb - xa).hypot(yb - ya)
        })
        .sum()
}

/// Single-ring polygon in map coordinates; the closing vertex is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    exterior: Vec<[f64; 2]>,
}

impl Polygon {
    /// Validated constructor: at least three vertices, non-zero area, no
    /// crossing or overlapping edges. A repeated closing vertex is dropped.
    pub fn new(mut exterior: Vec<[f64; 2]>) -> Result<Self> {
        if exterior.len() > 1 && exterior.first() == exterior.last() {
            exterior.pop();
        }
        if exterior.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "{} distinct vertices",
                exterior.len()
            )));
        }
        if exterior.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::DegeneratePolygon("non-finite vertex".into()));
        }
        if ring_area(&exterior) == 0.0 {
            return Err(Error::DegeneratePolygon("zero area".into()));
        }
        if let Some((i, j)) = find_crossing(&exterior) {
            return Err(Error::SelfIntersectingPolygon(format!("edges {i} and {j} cross")));
        }
        Ok(Self { exterior })
    }

    /// Ring produced by boundary tracing; may touch itself at isolated vertices.
    pub(crate) fn traced(exterior: Vec<[f64; 2]>) -> Self {
        Self { exterior }
    }

    pub fn exterior(&self) -> &[[f64; 2]] {
        &self.exterior
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn perimeter(&self) -> f64 {
        polygon_perimeter(self)
    }

    pub fn reversed(&self) -> Polygon {
        let mut exterior = self.exterior.clone();
        exterior.reverse();
        Polygon { exterior }
    }

    /// Vertex mean.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.exterior.len() as f64;
        let (sx, sy) = self
            .exterior
            .iter()
            .fold((0.0, 0.0), |(sx, sy), v| (sx + v[0], sy + v[1]));
        [sx / n, sy / n]
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for v in &self.exterior {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }
}

pub fn polygon_area(p: &Polygon) -> f64 {
    ring_area(&p.exterior)
}

pub fn polygon_perimeter(p: &Polygon) -> f64 {
    ring_perimeter(&p.exterior)
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Classifies a segment pair: proper crossings and collinear overlaps of
/// positive length count; touching at a single point does not.
fn segments_conflict(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return true;
    }
    if d1 == 0.0 && d2 == 0.0 {
        // collinear: overlap length along the dominant axis
        let axis = if (b[0] - a[0]).abs() >= (b[1] - a[1]).abs() { 0 } else { 1 };
        let (lo1, hi1) = (a[axis].min(b[axis]), a[axis].max(b[axis]));
        let (lo2, hi2) = (c[axis].min(d[axis]), c[axis].max(d[axis]));
        return hi1.min(hi2) > lo1.max(lo2);
    }
    false
}

fn find_crossing(ring: &[[f64; 2]]) -> Option<(usize, usize)> {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // neighbours share a vertex; only a fold-back overlap is a conflict
                if orient(a, b, c) == 0.0 && orient(a, b, d) == 0.0 && segments_conflict(a, b, c, d) {
                    let shared = if j == i + 1 { b } else { a };
                    let (other_ab, other_cd) = if j == i + 1 { (a, d) } else { (b, c) };
                    let u = [other_ab[0] - shared[0], other_ab[1] - shared[1]];
                    let v = [other_cd[0] - shared[0], other_cd[1] - shared[1]];
                    if u[0] * v[0] + u[1] * v[1] > 0.0 {
                        return Some((i, j));
                    }
                }
                continue;
            }
            if segments_conflict(a, b, c, d) {
                return Some((i, j));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    #[default]
    Expert,
    Pseudo,
}

impl Source {
    pub fn name(self) -> &'static str {
        match self {
            Source::Expert => "expert",
            Source::Pseudo => "pseudo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub class: ClassId,
    pub polygon: Polygon,
    pub source: Source,
}

/// Ordered class-tagged polygons. Order defines rasterization precedence.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    entries: Vec<Annotation>,
}

impl AnnotationSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<Annotation>) -> Result<Self> {
        let mut set = Self::new();
        for e in entries {
            set.push(e.class, e.polygon, e.source)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, class: ClassId, polygon: Polygon, source: Source) -> Result<()> {
        if !class.is_annotated() {
            return Err(Error::UnknownClassName(
                "annotations cannot carry the unknown class".into(),
            ));
        }
        self.entries.push(Annotation {
            class,
            polygon,
            source,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[Annotation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.entries.iter()
    }

    pub fn of_class(&self, class: ClassId) -> impl Iterator<Item = &Annotation> {
        self.entries.iter().filter(move |e| e.class == class)
    }

    /// Shoelace areas per annotated class, indexed by class code.
    pub fn areas_by_class(&self) -> [Vec<f64>; 4] {
        let mut out: [Vec<f64>; 4] = Default::default();
        for e in &self.entries {
            out[e.class.index()].push(e.polygon.area());
        }
        out
    }

    pub fn to_geojson(&self) -> Value {
        feature_collection(
            self.entries
                .iter()
                .map(|e| geojson_feature(e.class, &e.polygon, e.source, Map::new()))
                .collect(),
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_geojson(&self.to_geojson(), path)
    }
}

/// GeoJSON feature for one polygon; `extra` properties are merged in.
pub fn geojson_feature(class: ClassId, polygon: &Polygon, source: Source, extra: Map<String, Value>) -> Value {
    let mut ring: Vec<Value> = polygon.exterior().iter().map(|v| json!([v[0], v[1]])).collect();
    if let Some(first) = ring.first().cloned() {
        ring.push(first);
    }
    let mut props = Map::new();
    props.insert("class".into(), Value::from(class.name()));
    props.insert("source".into(), Value::from(source.name()));
    props.extend(extra);
    json!({
        "type": "Feature",
        "properties": props,
        "geometry": {"type": "Polygon", "coordinates": [ring]},
    })
}

pub fn feature_collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_geojson(value: &Value, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn parse_ring(coords: &Value, idx: usize) -> Result<Vec<[f64; 2]>> {
    let rings = coords
        .as_array()
        .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: coordinates not an array")))?;
    match rings.len() {
        0 => return Err(Error::MalformedGeoJson(format!("feature {idx}: no rings"))),
        1 => {}
        _ => {
            return Err(Error::MalformedGeoJson(format!(
                "feature {idx}: polygon holes are not supported"
            )))
        }
    }
    rings[0]
        .as_array()
        .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: ring not an array")))?
        .iter()
        .map(|pt| {
            let xy = pt.as_array().filter(|a| a.len() >= 2);
            match xy.map(|a| (a[0].as_f64(), a[1].as_f64())) {
                Some((Some(x), Some(y))) => Ok([x, y]),
                _ => Err(Error::MalformedGeoJson(format!("feature {idx}: bad position {pt}"))),
            }
        })
        .collect()
}

/// Parse a GeoJSON FeatureCollection of class-tagged polygons.
pub fn parse_annotations(text: &str) -> Result<AnnotationSet> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::MalformedGeoJson(e.to_string()))?;
    if root.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::MalformedGeoJson("root is not a FeatureCollection".into()));
    }
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::MalformedGeoJson("missing features array".into()))?;
    let mut set = AnnotationSet::new();
    for (idx, f) in features.iter().enumerate() {
        let props = f
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: missing properties")))?;
        let class_name = props
            .get("class")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: missing class")))?;
        let class: ClassId = class_name.parse()?;
        if !class.is_annotated() {
            return Err(Error::UnknownClassName(class_name.to_string()));
        }
        let source = match props.get("source").and_then(Value::as_str) {
            None | Some("expert") => Source::Expert,
            Some("pseudo") => Source::Pseudo,
            Some(other) => {
                return Err(Error::MalformedGeoJson(format!("feature {idx}: unknown source {other}")))
            }
        };
        let geom = f
            .get("geometry")
            .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: missing geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(Error::MalformedGeoJson(format!("feature {idx}: geometry is not a Polygon")));
        }
        let ring = parse_ring(
            geom.get("coordinates")
                .ok_or_else(|| Error::MalformedGeoJson(format!("feature {idx}: missing coordinates")))?,
            idx,
        )?;
        set.push(class, Polygon::new(ring)?, source)?;
    }
    Ok(set)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::IoFailure(e),
    })?;
    parse_annotations(&text)
}

/// Paint `polygon` into `labels` with even-odd pixel-center sampling.
fn fill_polygon(labels: &mut [ClassId], width: usize, height: usize, geo: &GeoTransform, polygon: &Polygon, class: ClassId) {
    let ring: Vec<[f64; 2]> = polygon
        .exterior()
        .iter()
        .map(|v| {
            let (c, r) = geo.to_pixel(v[0], v[1]);
            [c, r]
        })
        .collect();
    let (mut rmin, mut rmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in &ring {
        rmin = rmin.min(v[1]);
        rmax = rmax.max(v[1]);
    }
    let row_lo = rmin.ceil().max(0.0) as usize;
    if rmax < 0.0 {
        return;
    }
    let row_hi = (rmax.floor() as usize).min(height - 1);
    let n = ring.len();
    let mut xs = Vec::new();
    for row in row_lo..=row_hi {
        let y = row as f64;
        xs.clear();
        for i in 0..n {
            let [xa, ya] = ring[i];
            let [xb, yb] = ring[(i + 1) % n];
            if (ya > y) != (yb > y) {
                xs.push(xa + (y - ya) * (xb - xa) / (yb - ya));
            }
        }
        xs.sort_by(|a, b| a.total_cmp(b));
        for pair in xs.chunks_exact(2) {
            // centers in [x0, x1) have an odd number of crossings to their right
            let c0 = pair[0].ceil().max(0.0);
            let c1 = pair[1].ceil().min(width as f64);
            if c1 <= c0 {
                continue;
            }
            let base = row * width;
            for c in c0 as usize..c1 as usize {
                labels[base + c] = class;
            }
        }
    }
}

/// Rasterize annotations by pixel-center sampling; later entries win overlaps.
pub fn rasterize(a: &AnnotationSet, geo: &GeoTransform, width: usize, height: usize) -> Result<LabelGrid> {
    let mut grid = LabelGrid::unknown(width, height, *geo)?;
    burn_annotations(&mut grid, a.entries().iter());
    Ok(grid)
}

pub(crate) fn burn_annotations<'a>(grid: &mut LabelGrid, entries: impl Iterator<Item = &'a Annotation>) {
    let (w, h, geo) = (grid.width(), grid.height(), *grid.geo());
    for e in entries {
        fill_polygon(grid.labels_mut(), w, h, &geo, &e.polygon, e.class);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Train,
    Test,
}

/// Block-wise spatial partition of a grid into train and test tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub width: usize,
    pub height: usize,
    pub block_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    /// Row-major over tiles.
    pub assignment: Vec<Side>,
}

impl SplitSpec {
    pub fn tiles_x(&self) -> usize {
        self.width.div_ceil(self.block_size)
    }

    pub fn tiles_y(&self) -> usize {
        self.height.div_ceil(self.block_size)
    }

    pub fn tile_count(&self) -> usize {
        self.assignment.len()
    }

    pub fn side_of_pixel(&self, col: usize, row: usize) -> Side {
        let tile = (row / self.block_size) * self.tiles_x() + col / self.block_size;
        self.assignment[tile]
    }

    /// Row-major pixel mask selecting the tiles on `side`.
    pub fn region(&self, side: Side) -> Vec<bool> {
        let mut mask = Vec::with_capacity(self.width * self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                mask.push(self.side_of_pixel(col, row) == side);
            }
        }
        mask
    }

    pub fn count(&self, side: Side) -> usize {
        self.assignment.iter().filter(|&&s| s == side).count()
    }

    pub fn covers(&self, grid: &LabelGrid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.width.div_ceil(self.block_size.max(1)) * self.height.div_ceil(self.block_size.max(1));
        if self.block_size == 0 || self.assignment.len() != expected {
            return Err(Error::InvalidConfig("split assignment does not match its tiling".into()));
        }
        Ok(())
    }
}

/// Shuffle square tiles with the seed and give the first ⌈fraction·n⌉ to Train.
pub fn spatial_split(width: usize, height: usize, train_fraction: f64, block_size: usize, seed: u64) -> Result<SplitSpec> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction must lie in (0,1), got {train_fraction}"
        )));
    }
    if block_size == 0 {
        return Err(Error::InvalidConfig("block_size must be at least 1".into()));
    }
    if width == 0 || height == 0 {
        return Err(Error::EmptyGrid);
    }
    let n = width.div_ceil(block_size) * height.div_ceil(block_size);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((train_fraction * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut assignment = vec![Side::Test; n];
    for &tile in &order[..n_train] {
        assignment[tile] = Side::Train;
    }
    Ok(SplitSpec {
        width,
        height,
        block_size,
        train_fraction,
        seed,
        assignment,
    })
}

/// Train copy keeps labels on Train tiles only; test copy is the complement.
pub fn mask_split(grid: &LabelGrid, spec: &SplitSpec) -> Result<(LabelGrid, LabelGrid)> {
    if !spec.covers(grid) {
        return Err(Error::DimensionMismatch(format!(
            "split covers {}x{}, grid is {}x{}",
            spec.width,
            spec.height,
            grid.width(),
            grid.height()
        )));
    }
    Ok((
        grid.restricted(&spec.region(Side::Train))?,
        grid.restricted(&spec.region(Side::Test))?,
    ))
}

/// One row of the per-class statistics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRow {
    pub pixel_count: u64,
    pub pixel_pct: f64,
    pub polygon_count: u64,
    pub polygon_pct: f64,
    pub sum_area: f64,
    pub mean_area: f64,
}

/// Annotation statistics for Waterhole, Omuti, BigTree plus a totals row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// Indexed by `ClassId::index() - 1`.
    pub rows: [ClassRow; 3],
    pub total: ClassRow,
}

fn pct(part: f64, whole: f64) -> f64 {
    if whole > 0.0 {
        100.0 * part / whole
    } else {
        0.0
    }
}

fn mean(sum: f64, count: u64) -> f64 {
    if count > 0 {
        sum / count as f64
    } else {
        0.0
    }
}

impl ClassStats {
    /// Assemble from per-class pixel counts, the grid size, and per-class polygon areas.
    pub fn from_parts(pixel_counts: [u64; 3], total_pixels: u64, areas: [&[f64]; 3]) -> Self {
        let polygons: u64 = areas.iter().map(|a| a.len() as u64).sum();
        let rows: [ClassRow; 3] = std::array::from_fn(|k| {
            let sum_area: f64 = areas[k].iter().sum();
            let count = areas[k].len() as u64;
            ClassRow {
                pixel_count: pixel_counts[k],
                pixel_pct: pct(pixel_counts[k] as f64, total_pixels as f64),
                polygon_count: count,
                polygon_pct: pct(count as f64, polygons as f64),
                sum_area,
                mean_area: mean(sum_area, count),
            }
        });
        let total = Self::totals(&rows, total_pixels);
        Self { rows, total }
    }

    fn totals(rows: &[ClassRow; 3], total_pixels: u64) -> ClassRow {
        let pixels: u64 = rows.iter().map(|r| r.pixel_count).sum();
        let polygons: u64 = rows.iter().map(|r| r.polygon_count).sum();
        let sum_area: f64 = rows.iter().map(|r| r.sum_area).sum();
        ClassRow {
            pixel_count: pixels,
            pixel_pct: pct(pixels as f64, total_pixels as f64),
            polygon_count: polygons,
            polygon_pct: if polygons > 0 { 100.0 } else { 0.0 },
            sum_area,
            mean_area: mean(sum_area, polygons),
        }
    }

    pub fn row(&self, class: ClassId) -> &ClassRow {
        assert!(class.is_annotated(), "no statistics row for the unknown class");
        &self.rows[class.index() - 1]
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "class",
        "pixels",
        "pixel_pct",
        "polygons",
        "polygon_pct",
        "sum_area_m2",
        "mean_area_m2",
    ];

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::MalformedCsv(e.to_string());
        w.write_record(Self::CSV_HEADER).map_err(to_err)?;
        let named = ClassId::ANNOTATED
            .iter()
            .map(|c| (c.name(), self.row(*c)))
            .chain(std::iter::once(("total", &self.total)));
        for (name, r) in named {
            w.write_record([
                name.to_string(),
                r.pixel_count.to_string(),
                format!("{:.2}", r.pixel_pct),
                r.polygon_count.to_string(),
                format!("{:.2}", r.polygon_pct),
                format!("{:.2}", r.sum_area),
                format!("{:.2}", r.mean_area),
            ])
            .map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::MalformedCsv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parse the CSV layout written by [`to_csv`](Self::to_csv). The totals row is recomputed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| Error::MalformedCsv(e.to_string()))?.clone();
        if headers.iter().collect::<Vec<_>>() != Self::CSV_HEADER {
            return Err(Error::MalformedCsv(format!("unexpected header {headers:?}")));
        }
        let mut rows: [Option<ClassRow>; 3] = Default::default();
        let mut total_row = None;
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::MalformedCsv(e.to_string()))?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::MalformedCsv(format!("bad numeric field {i} in {rec:?}")))
            };
            let row = ClassRow {
                pixel_count: num(1)? as u64,
                pixel_pct: num(2)?,
                polygon_count: num(3)? as u64,
                polygon_pct: num(4)?,
                sum_area: num(5)?,
                mean_area: num(6)?,
            };
            match &rec[0] {
                "total" => total_row = Some(row),
                name => {
                    let class: ClassId = name.parse()?;
                    if !class.is_annotated() {
                        return Err(Error::MalformedCsv("unknown class row".into()));
                    }
                    rows[class.index() - 1] = Some(row);
                }
            }
        }
        let rows: [ClassRow; 3] = match rows {
            [Some(a), Some(b), Some(c)] => [a, b, c],
            _ => return Err(Error::MalformedCsv("missing class rows".into())),
        };
        let total = match total_row {
            Some(t) => t,
            None => {
                let pixels: u64 = rows.iter().map(|r| r.pixel_count).sum();
                let pct_sum: f64 = rows.iter().map(|r| r.pixel_pct).sum();
                let total_pixels = if pct_sum > 0.0 { (pixels as f64 * 100.0 / pct_sum) as u64 } else { 0 };
                Self::totals(&rows, total_pixels)
            }
        };
        Ok(Self { rows, total })
    }
}

/// Pixel counts from the grid; polygon counts and areas from the annotations.
pub fn compute_stats(grid: &LabelGrid, a: &AnnotationSet) -> ClassStats {
    let counts = grid.class_counts();
    let areas = a.areas_by_class();
    ClassStats::from_parts(
        [counts[1], counts[2], counts[3]],
        grid.len() as u64,
        [&areas[1], &areas[2], &areas[3]],
    )
}

/// Ground area covered by `pixels` pixels of `geo`.
pub fn pixels_to_area(pixels: u64, geo: &GeoTransform) -> f64 {
    pixels as f64 * pixel_area(geo)
}
