//! Connected components of label grids, outer-boundary tracing into map
//! polygons, and pixel overlap between components.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::annot::{AnnotationSet, Polygon, Source};
use crate::error::{Error, Result};
use crate::raster::{pixel_area, ClassId, GeoTransform, LabelGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u8) -> Result<Self> {
        match n {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::InvalidConfig(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

/// Maximal connected same-class region of a label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub class: ClassId,
    /// Row-major linear pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub area_m2: f64,
    /// (min_col, min_row, max_col, max_row)
    pub bbox: (usize, usize, usize, usize),
    pub grid_width: usize,
    pub grid_height: usize,
}

impl Component {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels.iter().map(|&i| (i % self.grid_width, i / self.grid_width))
    }

    fn same_grid(&self, other: &Component) -> bool {
        self.grid_width == other.grid_width && self.grid_height == other.grid_height
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Two-pass union-find labeling. Unknown pixels are background. Components are
/// ordered by their first pixel in row-major order.
pub fn connected_components(grid: &LabelGrid, connectivity: Connectivity) -> Vec<Component> {
    let (w, h) = (grid.width(), grid.height());
    let labels = grid.labels();
    let mut parent: Vec<u32> = (0..labels.len() as u32).collect();
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let c = labels[i];
            if c == ClassId::Unknown {
                continue;
            }
            if col > 0 && labels[i - 1] == c {
                union(&mut parent, i as u32, (i - 1) as u32);
            }
            if row > 0 {
                let up = i - w;
                if labels[up] == c {
                    union(&mut parent, i as u32, up as u32);
                }
                if connectivity == Connectivity::Eight {
                    if col > 0 && labels[up - 1] == c {
                        union(&mut parent, i as u32, (up - 1) as u32);
                    }
                    if col + 1 < w && labels[up + 1] == c {
                        union(&mut parent, i as u32, (up + 1) as u32);
                    }
                }
            }
        }
    }

    // roots are the smallest index of their set, so first-seen order is row-major
    let mut slot: HashMap<u32, usize> = HashMap::new();
    let mut comps: Vec<Component> = Vec::new();
    let unit_area = pixel_area(grid.geo());
    for (i, &c) in labels.iter().enumerate() {
        if c == ClassId::Unknown {
            continue;
        }
        let root = find(&mut parent, i as u32);
        let k = *slot.entry(root).or_insert_with(|| {
            comps.push(Component {
                class: c,
                pixels: Vec::new(),
                area_m2: 0.0,
                bbox: (usize::MAX, usize::MAX, 0, 0),
                grid_width: w,
                grid_height: h,
            });
            comps.len() - 1
        });
        let comp = &mut comps[k];
        let (col, row) = (i % w, i / w);
        comp.pixels.push(i);
        comp.bbox = (
            comp.bbox.0.min(col),
            comp.bbox.1.min(row),
            comp.bbox.2.max(col),
            comp.bbox.3.max(row),
        );
    }
    for comp in &mut comps {
        comp.area_m2 = comp.pixels.len() as f64 * unit_area;
    }
    comps
}

/// Trace the outer boundary of a component over pixel corners.
///
/// Edges run clockwise on screen with the region on the right; where two
/// boundary edges leave a corner, the leftmost turn is taken so diagonally
/// touching pixels stay on one ring. Collinear corners are dropped. The
/// returned area is the pixel-count area.
pub fn component_to_polygon(c: &Component, geo: &GeoTransform) -> Result<(Polygon, f64)> {
    if c.pixels.is_empty() {
        return Err(Error::DegeneratePolygon("empty component".into()));
    }
    let w = c.grid_width;
    let inside: std::collections::HashSet<usize> = c.pixels.iter().copied().collect();
    let member = |col: i64, row: i64| -> bool {
        col >= 0
            && row >= 0
            && (col as usize) < w
            && (row as usize) < c.grid_height
            && inside.contains(&(row as usize * w + col as usize))
    };

    // outgoing boundary edges per corner, as (dx, dy) headings
    let mut out: HashMap<(i64, i64), Vec<(i64, i64)>> = HashMap::new();
    for (col, row) in c.coords() {
        let (x, y) = (col as i64, row as i64);
        if !member(x, y - 1) {
            out.entry((x, y)).or_default().push((1, 0));
        }
        if !member(x + 1, y) {
            out.entry((x + 1, y)).or_default().push((0, 1));
        }
        if !member(x, y + 1) {
            out.entry((x + 1, y + 1)).or_default().push((-1, 0));
        }
        if !member(x - 1, y) {
            out.entry((x, y + 1)).or_default().push((0, -1));
        }
    }

    let first = c.pixels[0];
    let start = ((first % w) as i64, (first / w) as i64);
    let mut corners: Vec<(i64, i64)> = Vec::new();
    let mut pos = start;
    let mut heading = (1i64, 0i64);
    take_edge(&mut out, pos, heading);
    let mut headings = vec![heading];
    corners.push(pos);
    loop {
        pos = (pos.0 + heading.0, pos.1 + heading.1);
        if pos == start {
            break;
        }
        let left = (heading.1, -heading.0);
        let right = (-heading.1, heading.0);
        let next = [left, heading, right]
            .into_iter()
            .find(|h| out.get(&pos).is_some_and(|v| v.contains(h)))
            .ok_or_else(|| Error::GeometryMismatch("open boundary while tracing".into()))?;
        take_edge(&mut out, pos, next);
        corners.push(pos);
        headings.push(next);
        heading = next;
    }

    // keep corners where the heading changes
    let n = corners.len();
    let ring: Vec<[f64; 2]> = (0..n)
        .filter(|&i| headings[i] != headings[(i + n - 1) % n])
        .map(|i| {
            let (x, y) = geo.corner(corners[i].0, corners[i].1);
            [x, y]
        })
        .collect();
    Ok((Polygon::traced(ring), c.area_m2))
}

fn take_edge(out: &mut HashMap<(i64, i64), Vec<(i64, i64)>>, pos: (i64, i64), heading: (i64, i64)) {
    if let Some(v) = out.get_mut(&pos) {
        if let Some(k) = v.iter().position(|h| *h == heading) {
            v.swap_remove(k);
        }
    }
}

/// Fraction of `a`'s pixels that are also in `b`.
pub fn overlap_fraction(a: &Component, b: &Component) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::GeometryMismatch(format!(
            "{}x{} vs {}x{}",
            a.grid_width, a.grid_height, b.grid_width, b.grid_height
        )));
    }
    if a.pixels.is_empty() {
        return Ok(0.0);
    }
    Ok(intersection_count(&a.pixels, &b.pixels) as f64 / a.pixels.len() as f64)
}

pub(crate) fn intersection_count(a: &[usize], b: &[usize]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Polygonize components into pseudo annotations, in component order.
pub fn components_to_annotations(components: &[Component], geo: &GeoTransform) -> Result<AnnotationSet> {
    let mut set = AnnotationSet::new();
    for c in components {
        let (poly, _) = component_to_polygon(c, geo)?;
        set.push(c.class, poly, Source::Pseudo)?;
    }
    Ok(set)
}

/// Rebuild the label grid covered by `components`.
pub fn components_to_grid(components: &[Component], geo: &GeoTransform, width: usize, height: usize) -> Result<LabelGrid> {
    let mut grid = LabelGrid::unknown(width, height, *geo)?;
    for c in components {
        if c.grid_width != width || c.grid_height != height {
            return Err(Error::GeometryMismatch("component from a different grid".into()));
        }
        for &i in &c.pixels {
            grid.labels_mut()[i] = c.class;
        }
    }
    Ok(grid)
}
