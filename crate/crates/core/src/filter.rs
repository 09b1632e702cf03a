//! Empirical p-values of polygon areas against annotated reference areas, and
//! the two-sided mean ± k·σ band that discards out-of-distribution polygons.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ClassId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PValueRecord<T> {
    pub class: ClassId,
    pub area_m2: T,
    pub pvalue: T,
}

/// `(1 + #{a ∈ reference : a ≥ area}) / (N + 1)`. Ties count toward the numerator.
pub fn empirical_pvalue<T: Scalar>(area: T, annotated_areas: &[T]) -> Result<T> {
    if annotated_areas.is_empty() {
        return Err(Error::EmptyReference);
    }
    let at_least = annotated_areas.iter().filter(|&&a| a >= area).count();
    Ok(T::from_usize_lossy(1 + at_least) / T::from_usize_lossy(annotated_areas.len() + 1))
}

/// Precomputed reference for many queries: sorted areas, binary search per query.
#[derive(Debug, Clone)]
pub struct AreaReference<T> {
    sorted: Vec<T>,
}

impl<T: Scalar> AreaReference<T> {
    pub fn new(areas: &[T]) -> Result<Self> {
        if areas.is_empty() {
            return Err(Error::EmptyReference);
        }
        let mut sorted = areas.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Ok(Self { sorted })
    }

    pub fn pvalue(&self, area: T) -> T {
        let below = self.sorted.partition_point(|&a| a < area);
        let at_least = self.sorted.len() - below;
        T::from_usize_lossy(1 + at_least) / T::from_usize_lossy(self.sorted.len() + 1)
    }
}

/// Per-class band statistics reported by [`filter_by_threshold`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassFilterSummary {
    pub class: ClassId,
    pub n_input: usize,
    pub n_kept: usize,
    pub n_discarded: usize,
    pub mu: f64,
    pub sigma: f64,
    pub e_th: f64,
}

/// Indices into the filtered record list.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FilterOutcome {
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    pub summary: Vec<ClassFilterSummary>,
}

impl FilterOutcome {
    pub fn kept_records<T: Copy>(&self, records: &[T]) -> Vec<T> {
        self.kept.iter().map(|&i| records[i]).collect()
    }

    pub fn discarded_records<T: Copy>(&self, records: &[T]) -> Vec<T> {
        self.discarded.iter().map(|&i| records[i]).collect()
    }
}

/// Per class, keep records whose p-value lies within `e_th` population
/// standard deviations of that class's mean p-value.
pub fn filter_by_threshold<T: Scalar>(records: &[PValueRecord<T>], e_th: T) -> Result<FilterOutcome> {
    if !(e_th > T::zero()) {
        return Err(Error::InvalidConfig(format!("e_th must be positive, got {e_th}")));
    }
    let mut keep = vec![false; records.len()];
    let mut summary = Vec::new();
    for class in ClassId::ALL {
        let idx: Vec<usize> = (0..records.len()).filter(|&i| records[i].class == class).collect();
        if idx.is_empty() {
            continue;
        }
        let n = T::from_usize_lossy(idx.len());
        let mu = idx.iter().map(|&i| records[i].pvalue).sum::<T>() / n;
        let sigma = (idx
            .iter()
            .map(|&i| {
                let d = records[i].pvalue - mu;
                d * d
            })
            .sum::<T>()
            / n)
            .sqrt();
        // rounding slack so identical p-values always sit inside a zero-width band
        let slack = T::epsilon() * T::from_f64_lossy(16.0) * (T::one() + mu.abs());
        let band = e_th * sigma + slack;
        let mut n_kept = 0;
        for &i in &idx {
            if (records[i].pvalue - mu).abs() <= band {
                keep[i] = true;
                n_kept += 1;
            }
        }
        summary.push(ClassFilterSummary {
            class,
            n_input: idx.len(),
            n_kept,
            n_discarded: idx.len() - n_kept,
            mu: mu.to_f64_lossy(),
            sigma: sigma.to_f64_lossy(),
            e_th: e_th.to_f64_lossy(),
        });
    }
    let (kept, discarded): (Vec<usize>, Vec<usize>) = (0..records.len()).partition(|&i| keep[i]);
    Ok(FilterOutcome {
        kept,
        discarded,
        summary,
    })
}

/// Equal-width histogram of p-values over [0,1]; `counts[class code][bin]`.
pub fn pvalue_histogram<T: Scalar>(records: &[PValueRecord<T>], bins: usize) -> Result<[Vec<usize>; 4]> {
    if bins == 0 {
        return Err(Error::InvalidConfig("bins must be >= 1".into()));
    }
    let mut counts: [Vec<usize>; 4] = std::array::from_fn(|_| vec![0; bins]);
    for r in records {
        let p = r.pvalue.to_f64_lossy().clamp(0.0, 1.0);
        let b = ((p * bins as f64).floor() as usize).min(bins - 1);
        counts[r.class.index()][b] += 1;
    }
    Ok(counts)
}
