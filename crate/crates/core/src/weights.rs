//! Class weights that jointly correct for label sparsity and inter-class imbalance.
//!
//! With `N_k = N_w + N_o + N_b` labeled training pixels and `N_u` unlabeled ones,
//! the background weight is the labeled fraction `N_k / (N_k + N_u)` and each
//! annotated class gets `N_k / N_c`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::ClassId;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights<T> {
    pub lambda_u: T,
    pub lambda_w: T,
    pub lambda_o: T,
    pub lambda_b: T,
}

impl<T: Scalar> ClassWeights<T> {
    /// All four weights equal to one.
    pub fn uniform() -> Self {
        Self::splat(T::one())
    }

    pub fn splat(v: T) -> Self {
        Self {
            lambda_u: v,
            lambda_w: v,
            lambda_o: v,
            lambda_b: v,
        }
    }

    pub fn get(&self, class: ClassId) -> T {
        match class {
            ClassId::Unknown => self.lambda_u,
            ClassId::Waterhole => self.lambda_w,
            ClassId::Omuti => self.lambda_o,
            ClassId::BigTree => self.lambda_b,
        }
    }

    /// Indexed by class code.
    pub fn as_array(&self) -> [T; 4] {
        [self.lambda_u, self.lambda_w, self.lambda_o, self.lambda_b]
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            lambda_u: self.lambda_u * factor,
            lambda_w: self.lambda_w * factor,
            lambda_o: self.lambda_o * factor,
            lambda_b: self.lambda_b * factor,
        }
    }

    /// Clamp the annotated-class weights to at most `cap`. Off unless configured.
    pub fn capped(&self, cap: T) -> Self {
        Self {
            lambda_u: self.lambda_u,
            lambda_w: self.lambda_w.min(cap),
            lambda_o: self.lambda_o.min(cap),
            lambda_b: self.lambda_b.min(cap),
        }
    }

    pub fn to_f64(&self) -> ClassWeights<f64> {
        ClassWeights {
            lambda_u: self.lambda_u.to_f64_lossy(),
            lambda_w: self.lambda_w.to_f64_lossy(),
            lambda_o: self.lambda_o.to_f64_lossy(),
            lambda_b: self.lambda_b.to_f64_lossy(),
        }
    }
}

/// Pixel counts of a training split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelCounts {
    pub unknown: u64,
    pub waterhole: u64,
    pub omuti: u64,
    pub bigtree: u64,
}

impl PixelCounts {
    /// From a class-code-indexed count array, as returned by `LabelGrid::class_counts`.
    pub fn from_array(c: [u64; 4]) -> Self {
        Self {
            unknown: c[0],
            waterhole: c[1],
            omuti: c[2],
            bigtree: c[3],
        }
    }

    pub fn labeled(&self) -> u64 {
        self.waterhole + self.omuti + self.bigtree
    }
}

pub fn class_weights<T: Scalar>(counts: &PixelCounts) -> Result<ClassWeights<T>> {
    for (class, n) in [
        (ClassId::Waterhole, counts.waterhole),
        (ClassId::Omuti, counts.omuti),
        (ClassId::BigTree, counts.bigtree),
    ] {
        if n == 0 {
            return Err(Error::MissingClass(class.name().to_string()));
        }
    }
    let nk = counts.labeled();
    let ratio = |num: u64, den: u64| T::from_f64_lossy(num as f64 / den as f64);
    Ok(ClassWeights {
        lambda_u: ratio(nk, nk + counts.unknown),
        lambda_w: ratio(nk, counts.waterhole),
        lambda_o: ratio(nk, counts.omuti),
        lambda_b: ratio(nk, counts.bigtree),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_counts_give_three() {
        let w: ClassWeights<f64> = class_weights(&PixelCounts {
            unknown: 100,
            waterhole: 7,
            omuti: 7,
            bigtree: 7,
        })
        .unwrap();
        assert_eq!((w.lambda_w, w.lambda_o, w.lambda_b), (3.0, 3.0, 3.0));
        assert!(w.lambda_u < 1.0);
    }

    #[test]
    fn missing_class_is_error() {
        let r: Result<ClassWeights<f32>> = class_weights(&PixelCounts {
            unknown: 10,
            waterhole: 1,
            omuti: 0,
            bigtree: 1,
        });
        assert!(matches!(r, Err(Error::MissingClass(ref c)) if c == "omuti"));
    }

    #[test]
    fn no_unknown_pixels_gives_unit_background() {
        let w: ClassWeights<f64> = class_weights(&PixelCounts {
            unknown: 0,
            waterhole: 1,
            omuti: 2,
            bigtree: 3,
        })
        .unwrap();
        assert_eq!(w.lambda_u, 1.0);
    }

    proptest! {
        #[test]
        fn weighted_counts_sum_to_three_nk(nu in 0u64..1_000_000, nw in 1u64..100_000, no in 1u64..100_000, nb in 1u64..100_000) {
            let c = PixelCounts { unknown: nu, waterhole: nw, omuti: no, bigtree: nb };
            let w: ClassWeights<f64> = class_weights(&c).unwrap();
            let nk = c.labeled() as f64;
            let s = nw as f64 * w.lambda_w + no as f64 * w.lambda_o + nb as f64 * w.lambda_b;
            prop_assert!((s - 3.0 * nk).abs() <= 1e-9 * nk);
            prop_assert!(w.lambda_w >= 1.0 && w.lambda_o >= 1.0 && w.lambda_b >= 1.0);
            prop_assert!(w.lambda_u > 0.0 && w.lambda_u <= 1.0);
            if nu > 0 { prop_assert!(w.lambda_u < 1.0); }
        }

        #[test]
        fn permutation_equivariance(nu in 0u64..1000, nw in 1u64..1000, no in 1u64..1000, nb in 1u64..1000) {
            let a: ClassWeights<f64> = class_weights(&PixelCounts { unknown: nu, waterhole: nw, omuti: no, bigtree: nb }).unwrap();
            let b: ClassWeights<f64> = class_weights(&PixelCounts { unknown: nu, waterhole: nb, omuti: nw, bigtree: no }).unwrap();
            prop_assert_eq!((a.lambda_w, a.lambda_o, a.lambda_b), (b.lambda_o, b.lambda_b, b.lambda_w));
            prop_assert_eq!(a.lambda_u, b.lambda_u);
        }

        #[test]
        fn scale_invariance(nu in 0u64..1000, nw in 1u64..1000, no in 1u64..1000, nb in 1u64..1000, k in 1u64..50) {
            let a: ClassWeights<f64> = class_weights(&PixelCounts { unknown: nu, waterhole: nw, omuti: no, bigtree: nb }).unwrap();
            let b: ClassWeights<f64> = class_weights(&PixelCounts { unknown: nu * k, waterhole: nw * k, omuti: no * k, bigtree: nb * k }).unwrap();
            for (x, y) in a.as_array().iter().zip(b.as_array()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs());
            }
        }
    }
}
