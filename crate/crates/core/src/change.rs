//! Per-class change between two epochs of annotation or prediction statistics.

use serde::{Deserialize, Serialize};

use crate::annot::ClassStats;
use crate::error::{Error, Result};
use crate::raster::ClassId;

/// Mean-area changes smaller than this (m²) are reported as flat.
pub const FLAT_TOLERANCE_M2: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Increase,
    Decrease,
    Flat,
}

impl Direction {
    pub fn of(delta_mean: f64) -> Self {
        if delta_mean.abs() < FLAT_TOLERANCE_M2 {
            Direction::Flat
        } else if delta_mean > 0.0 {
            Direction::Increase
        } else {
            Direction::Decrease
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Direction::Increase => "increase",
            Direction::Decrease => "decrease",
            Direction::Flat => "flat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassChange {
    pub class: ClassId,
    pub count_t1: u64,
    pub count_t2: u64,
    pub delta_count: i64,
    pub mean_t1: f64,
    pub mean_t2: f64,
    pub delta_mean: f64,
    pub sum_t1: f64,
    pub sum_t2: f64,
    pub delta_sum: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub classes: Vec<ClassChange>,
}

impl ChangeReport {
    pub fn class(&self, class: ClassId) -> Option<&ClassChange> {
        self.classes.iter().find(|c| c.class == class)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::MalformedCsv(e.to_string());
        w.write_record([
            "class", "count_t1", "count_t2", "mean_t1", "mean_t2", "sum_t1", "sum_t2", "direction",
        ])
        .map_err(to_err)?;
        for c in &self.classes {
            w.write_record([
                c.class.name().to_string(),
                c.count_t1.to_string(),
                c.count_t2.to_string(),
                format!("{:.2}", c.mean_t1),
                format!("{:.2}", c.mean_t2),
                format!("{:.2}", c.sum_t1),
                format!("{:.2}", c.sum_t2),
                c.direction.name().to_string(),
            ])
            .map_err(to_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::MalformedCsv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn compare_epochs(stats_t1: &ClassStats, stats_t2: &ClassStats) -> ChangeReport {
    let classes = ClassId::ANNOTATED
        .iter()
        .map(|&class| {
            let (a, b) = (stats_t1.row(class), stats_t2.row(class));
            let delta_mean = b.mean_area - a.mean_area;
            ClassChange {
                class,
                count_t1: a.polygon_count,
                count_t2: b.polygon_count,
                delta_count: b.polygon_count as i64 - a.polygon_count as i64,
                mean_t1: a.mean_area,
                mean_t2: b.mean_area,
                delta_mean,
                sum_t1: a.sum_area,
                sum_t2: b.sum_area,
                delta_sum: b.sum_area - a.sum_area,
                direction: Direction::of(delta_mean),
            }
        })
        .collect();
    ChangeReport { classes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(areas: [&[f64]; 3]) -> ClassStats {
        ClassStats::from_parts([1, 1, 1], 100, areas)
    }

    #[test]
    fn identical_stats_are_flat() {
        let s = stats([&[1.0, 2.0], &[3.0], &[4.0]]);
        let r = compare_epochs(&s, &s);
        for c in &r.classes {
            assert_eq!(c.delta_mean, 0.0);
            assert_eq!(c.delta_count, 0);
            assert_eq!(c.direction, Direction::Flat);
        }
    }

    #[test]
    fn tolerance_boundary() {
        assert_eq!(Direction::of(0.004), Direction::Flat);
        assert_eq!(Direction::of(-0.004), Direction::Flat);
        assert_eq!(Direction::of(0.006), Direction::Increase);
        assert_eq!(Direction::of(-0.006), Direction::Decrease);
    }

    #[test]
    fn csv_layout() {
        let a = stats([&[1.0], &[3.0], &[4.0]]);
        let b = stats([&[2.0], &[1.0], &[4.0]]);
        let text = compare_epochs(&a, &b).to_csv().unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("class,count_t1,count_t2,mean_t1,mean_t2,sum_t1,sum_t2,direction"));
        assert_eq!(lines.next(), Some("waterhole,1,1,1.00,2.00,1.00,2.00,increase"));
    }

    proptest! {
        #[test]
        fn antisymmetric(a in proptest::collection::vec(1.0f64..1000.0, 1..20), b in proptest::collection::vec(1.0f64..1000.0, 1..20)) {
            let s1 = stats([&a, &b, &a]);
            let s2 = stats([&b, &a, &a[..1]]);
            let fwd = compare_epochs(&s1, &s2);
            let back = compare_epochs(&s2, &s1);
            for (f, r) in fwd.classes.iter().zip(&back.classes) {
                prop_assert_eq!(f.delta_mean, -r.delta_mean);
                prop_assert_eq!(f.delta_sum, -r.delta_sum);
                prop_assert_eq!(f.delta_count, -r.delta_count);
                prop_assert_eq!(f.direction, Direction::of(f.delta_mean));
            }
        }
    }
}
