//! Raster and coordinate types with bit-exact P5 + JSON-sidecar I/O.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Per-pixel class. Codes are stable: Unknown is always 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassId {
    #[default]
    Unknown = 0,
    Waterhole = 1,
    Omuti = 2,
    BigTree = 3,
}

impl ClassId {
    pub const ALL: [ClassId; 4] = [
        ClassId::Unknown,
        ClassId::Waterhole,
        ClassId::Omuti,
        ClassId::BigTree,
    ];

    /// The classes experts annotate; never contains `Unknown`.
    pub const ANNOTATED: [ClassId; 3] = [ClassId::Waterhole, ClassId::Omuti, ClassId::BigTree];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: u8) -> Option<ClassId> {
        ClassId::ALL.get(code as usize).copied()
    }

    pub fn is_annotated(self) -> bool {
        self != ClassId::Unknown
    }

    /// Lower-case name used in GeoJSON and CSV files.
    pub fn name(self) -> &'static str {
        match self {
            ClassId::Unknown => "unknown",
            ClassId::Waterhole => "waterhole",
            ClassId::Omuti => "omuti",
            ClassId::BigTree => "bigtree",
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unknown" => Ok(ClassId::Unknown),
            "waterhole" => Ok(ClassId::Waterhole),
            "omuti" => Ok(ClassId::Omuti),
            "bigtree" => Ok(ClassId::BigTree),
            other => Err(Error::UnknownClassName(other.to_string())),
        }
    }
}

/// North-up affine mapping from pixel centers to ground meters.
///
/// Pixel `(col, row)` has its center at
/// `(origin_x + col * pixel_size, origin_y - row * pixel_size)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidGeoTransform(format!(
                "pixel_size must be positive, got {pixel_size}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::InvalidGeoTransform("origin must be finite".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    /// Unit pixels with pixel (0,0) centered at the map origin.
    pub fn unit() -> Self {
        Self {
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 1.0,
        }
    }

    pub fn pixel_center(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_size,
            self.origin_y - row * self.pixel_size,
        )
    }

    /// Inverse of [`pixel_center`](Self::pixel_center), in fractional pixel units.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (self.origin_y - y) / self.pixel_size,
        )
    }

    /// Map position of pixel corner `(cx, cy)`; corner (0,0) is the top-left corner of pixel (0,0).
    pub fn corner(&self, cx: i64, cy: i64) -> (f64, f64) {
        self.pixel_center(cx as f64 - 0.5, cy as f64 - 0.5)
    }
}

/// Ground area of one pixel in square meters.
pub fn pixel_area(geo: &GeoTransform) -> f64 {
    geo.pixel_size * geo.pixel_size
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyGrid);
    }
    if width.checked_mul(height) != Some(len) {
        return Err(Error::DimensionMismatch(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width.saturating_mul(height)
        )));
    }
    Ok(())
}

/// Single-band 8-bit gray image on the ground.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayRaster {
    width: usize,
    height: usize,
    values: Vec<u8>,
    geo: GeoTransform,
}

impl GrayRaster {
    pub fn new(width: usize, height: usize, values: Vec<u8>, geo: GeoTransform) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(Self {
            width,
            height,
            values,
            geo,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8, geo: GeoTransform) -> Result<Self> {
        Self::new(width, height, vec![value; width * height], geo)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn get(&self, col: usize, row: usize) -> u8 {
        self.values[row * self.width + col]
    }
}

/// Per-pixel class assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    width: usize,
    height: usize,
    labels: Vec<ClassId>,
    geo: GeoTransform,
}

impl LabelGrid {
    pub fn new(width: usize, height: usize, labels: Vec<ClassId>, geo: GeoTransform) -> Result<Self> {
        check_dims(width, height, labels.len())?;
        Ok(Self {
            width,
            height,
            labels,
            geo,
        })
    }

    pub fn unknown(width: usize, height: usize, geo: GeoTransform) -> Result<Self> {
        Self::new(width, height, vec![ClassId::Unknown; width * height], geo)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[ClassId] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [ClassId] {
        &mut self.labels
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn get(&self, col: usize, row: usize) -> ClassId {
        self.labels[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, class: ClassId) {
        self.labels[row * self.width + col] = class;
    }

    /// Pixel counts indexed by class code (Unknown, Waterhole, Omuti, BigTree).
    pub fn class_counts(&self) -> [u64; 4] {
        let mut counts = [0u64; 4];
        for &c in &self.labels {
            counts[c.index()] += 1;
        }
        counts
    }

    pub fn same_geometry(&self, other: &LabelGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copy with every pixel outside `region` forced to Unknown.
    pub fn restricted(&self, region: &[bool]) -> Result<LabelGrid> {
        if region.len() != self.labels.len() {
            return Err(Error::DimensionMismatch(format!(
                "region mask has {} pixels, grid has {}",
                region.len(),
                self.labels.len()
            )));
        }
        let labels = self
            .labels
            .iter()
            .zip(region)
            .map(|(&c, &inside)| if inside { c } else { ClassId::Unknown })
            .collect();
        LabelGrid::new(self.width, self.height, labels, self.geo)
    }
}

/// Per-pixel probability 4-vectors over [`ClassId`] codes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityGrid<T> {
    width: usize,
    height: usize,
    probs: Vec<[T; 4]>,
    geo: GeoTransform,
}

/// Maximum deviation of a probability vector's sum from one.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

pub(crate) fn check_probability_vector<T: Scalar>(p: &[T; 4]) -> bool {
    let sum: f64 = p.iter().map(|v| v.to_f64_lossy()).sum();
    p.iter().all(|v| *v >= T::zero()) && (sum - 1.0).abs() <= PROBABILITY_SUM_TOLERANCE
}

impl<T: Scalar> ProbabilityGrid<T> {
    pub fn new(width: usize, height: usize, probs: Vec<[T; 4]>, geo: GeoTransform) -> Result<Self> {
        check_dims(width, height, probs.len())?;
        if let Some(i) = probs.iter().position(|p| !check_probability_vector(p)) {
            return Err(Error::InvalidProbability(format!(
                "pixel {i} vector {:?} is not a probability distribution",
                probs[i]
            )));
        }
        Ok(Self {
            width,
            height,
            probs,
            geo,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[[T; 4]] {
        &self.probs
    }

    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }

    pub fn get(&self, col: usize, row: usize) -> &[T; 4] {
        &self.probs[row * self.width + col]
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct GeoSidecar {
    origin_x: f64,
    origin_y: f64,
    pixel_size: f64,
    #[serde(default, skip_serializing)]
    rotation_x: f64,
    #[serde(default, skip_serializing)]
    rotation_y: f64,
}

/// Sidecar path for a raster: the raster path with `.geo.json` appended.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".geo.json");
    PathBuf::from(s)
}

fn read_sidecar(path: &Path) -> Result<GeoTransform> {
    let sidecar = sidecar_path(path);
    let text = fs::read_to_string(&sidecar).map_err(|_| Error::MissingGeoSidecar(sidecar.clone()))?;
    let parsed: GeoSidecar = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidGeoTransform(format!("{}: {e}", sidecar.display())))?;
    if parsed.rotation_x != 0.0 || parsed.rotation_y != 0.0 {
        return Err(Error::InvalidGeoTransform(
            "rotated geo-transforms are not supported".into(),
        ));
    }
    GeoTransform::new(parsed.origin_x, parsed.origin_y, parsed.pixel_size)
}

fn write_sidecar(path: &Path, geo: &GeoTransform) -> Result<()> {
    let sidecar = GeoSidecar {
        origin_x: geo.origin_x,
        origin_y: geo.origin_y,
        pixel_size: geo.pixel_size,
        rotation_x: 0.0,
        rotation_y: 0.0,
    };
    fs::write(sidecar_path(path), serde_json::to_string(&sidecar)?)?;
    Ok(())
}

/// Parse a binary P5 graymap. Only maxval 255 is accepted.
pub fn decode_p5(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // whitespace and comments between header fields
        while pos < bytes.len() {
            if bytes[pos].is_ascii_whitespace() {
                pos += 1;
            } else if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("truncated P5 header".into()));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != b"P5" {
        return Err(Error::MalformedHeader("magic number is not P5".into()));
    }
    let parse = |f: &[u8], what: &str| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| Error::MalformedHeader(format!("invalid {what}")))
    };
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::MalformedHeader("zero dimension".into()));
    }
    if maxval != 255 {
        return Err(Error::MalformedHeader(format!("maxval {maxval} unsupported")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() {
        return Err(Error::DimensionMismatch(format!(
            "header claims {width}x{height}, payload is empty"
        )));
    }
    let payload = &bytes[pos + 1..];
    if payload.len() != width * height {
        return Err(Error::DimensionMismatch(format!(
            "header claims {width}x{height} = {} bytes, payload has {}",
            width * height,
            payload.len()
        )));
    }
    Ok((width, height, payload))
}

pub fn encode_p5(width: usize, height: usize, payload: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(payload);
    out
}

fn read_p5(path: &Path) -> Result<(usize, usize, Vec<u8>, GeoTransform)> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::IoFailure(e),
    })?;
    let (width, height, payload) = decode_p5(&bytes)?;
    let geo = read_sidecar(path)?;
    Ok((width, height, payload.to_vec(), geo))
}

fn write_p5(path: &Path, width: usize, height: usize, payload: &[u8], geo: &GeoTransform) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(&encode_p5(width, height, payload))?;
    write_sidecar(path, geo)
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<GrayRaster> {
    let (width, height, values, geo) = read_p5(path.as_ref())?;
    GrayRaster::new(width, height, values, geo)
}

pub fn save_raster(raster: &GrayRaster, path: impl AsRef<Path>) -> Result<()> {
    write_p5(path.as_ref(), raster.width, raster.height, &raster.values, &raster.geo)
}

/// Label grids share the raster container: one byte per pixel holding the class code.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelGrid> {
    let path = path.as_ref();
    let (width, height, values, geo) = read_p5(path)?;
    let labels = values
        .iter()
        .map(|&v| {
            ClassId::from_code(v)
                .ok_or_else(|| Error::MalformedHeader(format!("invalid class code {v} in {}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    LabelGrid::new(width, height, labels, geo)
}

pub fn save_labels(grid: &LabelGrid, path: impl AsRef<Path>) -> Result<()> {
    let payload: Vec<u8> = grid.labels.iter().map(|c| c.code()).collect();
    write_p5(path.as_ref(), grid.width, grid.height, &payload, &grid.geo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn class_codes_are_stable() {
        assert_eq!(ClassId::Unknown.code(), 0);
        assert_eq!(ClassId::Waterhole.code(), 1);
        assert_eq!(ClassId::Omuti.code(), 2);
        assert_eq!(ClassId::BigTree.code(), 3);
        assert!(!ClassId::ANNOTATED.contains(&ClassId::Unknown));
        assert_eq!(ClassId::from_code(4), None);
        assert!("lake".parse::<ClassId>().is_err());
    }

    #[test]
    fn pixel_area_is_square_of_size() {
        for (size, area) in [(1.0, 1.0), (0.5, 0.25), (2.0, 4.0)] {
            let geo = GeoTransform::new(0.0, 0.0, size).unwrap();
            assert_eq!(pixel_area(&geo), area);
        }
        assert!(GeoTransform::new(0.0, 0.0, 0.0).is_err());
        assert!(GeoTransform::new(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn two_by_two_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        fs::write(&path, &bytes).unwrap();
        fs::write(
            sidecar_path(&path),
            r#"{"origin_x": 10.0, "origin_y": 20.0, "pixel_size": 1.0}"#,
        )
        .unwrap();
        let r = load_raster(&path).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        assert_eq!(r.values(), &[0, 255, 128, 64]);
        assert_eq!(r.geo().origin_x, 10.0);

        let out = dir.path().join("o.pgm");
        save_raster(&r, &out).unwrap();
        assert_eq!(fs::read(&out).unwrap(), bytes);
    }

    #[test]
    fn short_payload_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.pgm");
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend_from_slice(&[7; 8]);
        fs::write(&path, &bytes).unwrap();
        fs::write(sidecar_path(&path), r#"{"origin_x":0,"origin_y":0,"pixel_size":1}"#).unwrap();
        assert!(matches!(load_raster(&path), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.pgm");
        assert!(matches!(load_raster(&missing), Err(Error::MissingFile(_))));

        let path = dir.path().join("r.pgm");
        fs::write(&path, encode_p5(1, 1, &[3])).unwrap();
        assert!(matches!(load_raster(&path), Err(Error::MissingGeoSidecar(_))));

        fs::write(
            sidecar_path(&path),
            r#"{"origin_x":0,"origin_y":0,"pixel_size":1,"rotation_x":0.1}"#,
        )
        .unwrap();
        assert!(matches!(load_raster(&path), Err(Error::InvalidGeoTransform(_))));

        fs::write(&path, b"P6\n1 1\n255\n\x03").unwrap();
        assert!(matches!(decode_p5(&fs::read(&path).unwrap()), Err(Error::MalformedHeader(_))));
        assert!(matches!(decode_p5(b"P5\n1"), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn constant_and_minimal_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        let r = GrayRaster::filled(3, 2, 255, GeoTransform::unit()).unwrap();
        save_raster(&r, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n3 2\n255\n".len();
        assert!(bytes[header..].iter().all(|&b| b == 0xFF));

        let one = GrayRaster::filled(1, 1, 9, GeoTransform::unit()).unwrap();
        save_raster(&one, &path).unwrap();
        assert_eq!(fs::read(&path).unwrap().len(), b"P5\n1 1\n255\n".len() + 1);
    }

    #[test]
    fn probability_grid_rejects_bad_sums() {
        let geo = GeoTransform::unit();
        assert!(ProbabilityGrid::new(1, 1, vec![[0.25f64; 4]], geo).is_ok());
        assert!(ProbabilityGrid::new(1, 1, vec![[0.25f64, 0.25, 0.25, 0.25 + 2e-6]], geo).is_err());
        assert!(ProbabilityGrid::new(1, 1, vec![[1.5f64, -0.5, 0.0, 0.0]], geo).is_err());
    }

    #[test]
    fn label_grid_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.pgm");
        let g = LabelGrid::new(
            2,
            2,
            vec![ClassId::Unknown, ClassId::Waterhole, ClassId::Omuti, ClassId::BigTree],
            GeoTransform::new(5.0, 6.0, 0.5).unwrap(),
        )
        .unwrap();
        save_labels(&g, &path).unwrap();
        assert_eq!(load_labels(&path).unwrap(), g);
        assert_eq!(g.class_counts(), [1, 1, 1, 1]);
    }

    proptest! {
        #[test]
        fn raster_round_trip_is_bit_exact(
            (w, h, values) in (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h))
            }),
            ox in -1e6f64..1e6, oy in -1e6f64..1e6, ps in 0.01f64..10.0,
        ) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.pgm");
            let r = GrayRaster::new(w, h, values, GeoTransform::new(ox, oy, ps).unwrap()).unwrap();
            save_raster(&r, &path).unwrap();
            prop_assert_eq!(load_raster(&path).unwrap(), r);
        }

        #[test]
        fn geo_mapping_inverts(col in 0usize..10_000, row in 0usize..10_000,
                               ox in -1e5f64..1e5, oy in -1e5f64..1e5, ps in 0.05f64..5.0) {
            let geo = GeoTransform::new(ox, oy, ps).unwrap();
            let (x, y) = geo.pixel_center(col as f64, row as f64);
            let (c, r) = geo.to_pixel(x, y);
            prop_assert_eq!(c.round() as usize, col);
            prop_assert_eq!(r.round() as usize, row);
        }
    }
}
