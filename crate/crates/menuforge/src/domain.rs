//! Valuation profiles, value distributions, and sampling.
//!
//! Bidders are additive or unit-demand over `m` items. Values are drawn
//! i.i.d. per bidder per item from one of the supported distributions.

use crate::scalar::Real;
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("value out of domain: {0}")]
    OutOfDomain(String),
}

/// How a bidder values a fractional bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValuationKind {
    Additive,
    UnitDemand,
}

/// Per-item marginal value distribution, i.i.d. across bidders and items.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Distribution {
    UniformUnit,
    Beta { alpha: f64, beta: f64 },
    /// U[0,3] with probability 3/4, U[3,8] with probability 1/4.
    IrregularMix,
    /// Value a with probability p, else b; requires 0 < a < b, p in (0,1).
    TwoPoint { a: f64, b: f64, p: f64 },
}

impl Distribution {
    pub fn validate(&self) -> Result<(), DomainError> {
        match *self {
            Distribution::Beta { alpha, beta } => {
                if alpha <= 0.0 || beta <= 0.0 {
                    return Err(DomainError::InvalidParams(format!(
                        "Beta requires positive shapes, got ({alpha}, {beta})"
                    )));
                }
            }
            Distribution::TwoPoint { a, b, p } => {
                if !(0.0 < a && a < b) || !(0.0 < p && p < 1.0) {
                    return Err(DomainError::InvalidParams(format!(
                        "TwoPoint requires 0 < a < b and p in (0,1), got ({a}, {b}, {p})"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Upper bound of the per-item value support.
    pub fn v_max(&self) -> f64 {
        match *self {
            Distribution::UniformUnit | Distribution::Beta { .. } => 1.0,
            Distribution::IrregularMix => 8.0,
            Distribution::TwoPoint { b, .. } => b,
        }
    }

    /// Draws one value.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::UniformUnit => rng.gen::<f64>(),
            Distribution::Beta { alpha, beta } => {
                use rand::distributions::Distribution as _;
                let d = statrs::distribution::Beta::new(alpha, beta)
                    .expect("parameters validated at construction");
                d.sample(rng)
            }
            Distribution::IrregularMix => {
                if rng.gen::<f64>() < 0.75 {
                    3.0 * rng.gen::<f64>()
                } else {
                    3.0 + 5.0 * rng.gen::<f64>()
                }
            }
            Distribution::TwoPoint { a, b, p } => {
                if rng.gen::<f64>() < p {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// Quantile function F^{-1}(q) for q in [0,1].
    pub fn quantile(&self, q: f64) -> f64 {
        let q = q.clamp(0.0, 1.0);
        match *self {
            Distribution::UniformUnit => q,
            Distribution::Beta { alpha, beta } => {
                use statrs::distribution::ContinuousCDF;
                if q == 0.0 {
                    return 0.0;
                }
                if q == 1.0 {
                    return 1.0;
                }
                let d = statrs::distribution::Beta::new(alpha, beta)
                    .expect("parameters validated at construction");
                // statrs's generic inverse_cdf bisects only to ~1e-4;
                // re-bisect its (accurate) CDF down to f64 resolution.
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if d.cdf(mid) < q {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo < 1e-15 {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
            Distribution::IrregularMix => {
                if q <= 0.75 {
                    4.0 * q
                } else {
                    3.0 + 20.0 * (q - 0.75)
                }
            }
            Distribution::TwoPoint { a, b, p } => {
                if q <= p {
                    a
                } else {
                    b
                }
            }
        }
    }

    /// CDF F(v).
    pub fn cdf(&self, v: f64) -> f64 {
        match *self {
            Distribution::UniformUnit => v.clamp(0.0, 1.0),
            Distribution::Beta { alpha, beta } => {
                use statrs::distribution::ContinuousCDF;
                let d = statrs::distribution::Beta::new(alpha, beta)
                    .expect("parameters validated at construction");
                d.cdf(v)
            }
            Distribution::IrregularMix => {
                if v <= 0.0 {
                    0.0
                } else if v <= 3.0 {
                    v / 4.0
                } else if v <= 8.0 {
                    0.75 + (v - 3.0) / 20.0
                } else {
                    1.0
                }
            }
            Distribution::TwoPoint { a, b, p } => {
                if v < a {
                    0.0
                } else if v < b {
                    p
                } else {
                    1.0
                }
            }
        }
    }

    /// True when the support is a finite set (grids cover it exactly).
    pub fn is_discrete(&self) -> bool {
        matches!(self, Distribution::TwoPoint { .. })
    }
}

/// One realized value matrix: row i holds bidder i's per-item values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct ValuationProfile<R: Real> {
    pub values: Array2<R>,
    pub kind: ValuationKind,
    pub v_max: R,
}

impl<R: Real> ValuationProfile<R> {
    pub fn new(values: Array2<R>, kind: ValuationKind, v_max: R) -> Result<Self, DomainError> {
        for &v in values.iter() {
            if v < R::zero() || v > v_max {
                return Err(DomainError::OutOfDomain(format!(
                    "value {v} outside [0, {v_max}]"
                )));
            }
        }
        Ok(Self {
            values,
            kind,
            v_max,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    /// Bidder i's value vector.
    pub fn bidder(&self, i: usize) -> ArrayView1<'_, R> {
        self.values.row(i)
    }

    /// Concatenated values of all bidders except i, in bidder order.
    pub fn others(&self, i: usize) -> Array1<R> {
        let m = self.m();
        let mut out = Array1::zeros((self.n() - 1) * m);
        let mut at = 0;
        for j in 0..self.n() {
            if j == i {
                continue;
            }
            out.slice_mut(ndarray::s![at..at + m])
                .assign(&self.values.row(j));
            at += m;
        }
        out
    }
}

/// Samples a full value profile; deterministic in the seed.
pub fn sample_profile<R: Real>(
    dist: Distribution,
    kind: ValuationKind,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<ValuationProfile<R>, DomainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_profile_with(dist, kind, n, m, &mut rng)
}

/// Samples a profile from a caller-managed RNG stream.
pub fn sample_profile_with<R: Real, G: Rng + ?Sized>(
    dist: Distribution,
    kind: ValuationKind,
    n: usize,
    m: usize,
    rng: &mut G,
) -> Result<ValuationProfile<R>, DomainError> {
    dist.validate()?;
    let values = Array2::from_shape_fn((n, m), |_| R::real(dist.sample(rng)));
    Ok(ValuationProfile {
        values,
        kind,
        v_max: R::real(dist.v_max()),
    })
}

/// Fills a pre-allocated batch matrix ((batch*n) x m) with sampled values.
pub fn sample_batch_into<R: Real, G: Rng + ?Sized>(
    dist: Distribution,
    out: &mut Array2<R>,
    rng: &mut G,
) {
    for v in out.iter_mut() {
        *v = R::real(dist.sample(rng));
    }
}

/// Expected value of a fractional bundle. Unit-demand bundles are
/// single-item lotteries (rows sum to at most 1), so both kinds reduce to
/// the same dot product.
pub fn bundle_value<R: Real>(
    v_i: ArrayView1<'_, R>,
    bundle: ArrayView1<'_, R>,
    _kind: ValuationKind,
) -> Result<R, DomainError> {
    if v_i.len() != bundle.len() {
        return Err(DomainError::DimMismatch {
            expected: v_i.len(),
            got: bundle.len(),
        });
    }
    Ok(v_i
        .iter()
        .zip(bundle.iter())
        .map(|(&v, &a)| v * a)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn two_point_samples_hit_support_only() {
        let dist = Distribution::TwoPoint {
            a: 3.0,
            b: 7.0,
            p: 0.3,
        };
        let prof = sample_profile::<f64>(dist, ValuationKind::Additive, 2, 2, 42).unwrap();
        for &v in prof.values.iter() {
            assert!(v == 3.0 || v == 7.0, "got {v}");
        }
    }

    #[test]
    fn sampling_is_deterministic_in_seed() {
        let a = sample_profile::<f64>(Distribution::UniformUnit, ValuationKind::Additive, 1, 1, 7)
            .unwrap();
        let b = sample_profile::<f64>(Distribution::UniformUnit, ValuationKind::Additive, 1, 1, 7)
            .unwrap();
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn irregular_mix_upper_branch_frequency() {
        // P(v > 3) = 1/4; Monte-Carlo frequency over 1e5 draws.
        let dist = Distribution::IrregularMix;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let hits = (0..n).filter(|_| dist.sample(&mut rng) > 3.0).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn invalid_two_point_rejected() {
        let bad = Distribution::TwoPoint {
            a: 7.0,
            b: 3.0,
            p: 0.3,
        };
        assert!(sample_profile::<f64>(bad, ValuationKind::Additive, 1, 1, 0).is_err());
    }

    #[test]
    fn bundle_value_examples() {
        let v = array![0.7, 0.2];
        let b = array![1.0, 0.0];
        assert_eq!(
            bundle_value(v.view(), b.view(), ValuationKind::Additive).unwrap(),
            0.7
        );
        let v = array![0.5, 0.5];
        let b = array![0.0, 0.0];
        assert_eq!(
            bundle_value(v.view(), b.view(), ValuationKind::Additive).unwrap(),
            0.0
        );
        let v = array![3.0, 7.0];
        let b = array![0.5, 0.5];
        assert_eq!(
            bundle_value(v.view(), b.view(), ValuationKind::UnitDemand).unwrap(),
            5.0
        );
    }

    #[test]
    fn bundle_value_dimension_mismatch() {
        let v = array![0.7, 0.2];
        let b = array![1.0];
        assert!(bundle_value(v.view(), b.view(), ValuationKind::Additive).is_err());
    }

    #[test]
    fn samples_stay_in_bounds() {
        let dists = [
            Distribution::UniformUnit,
            Distribution::Beta {
                alpha: 1.0,
                beta: 2.0,
            },
            Distribution::IrregularMix,
            Distribution::TwoPoint {
                a: 3.0,
                b: 7.0,
                p: 0.3,
            },
        ];
        for dist in dists {
            let hi = dist.v_max();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for _ in 0..1_000_000 {
                let v = dist.sample(&mut rng);
                assert!((0.0..=hi).contains(&v), "{dist:?} produced {v}");
            }
        }
    }

    #[test]
    fn quantile_matches_cdf_on_mixture() {
        let dist = Distribution::IrregularMix;
        for q in [0.0, 0.1, 0.5, 0.75, 0.8, 0.99, 1.0] {
            let v = dist.quantile(q);
            assert!((dist.cdf(v) - q).abs() < 1e-12, "q={q} v={v}");
        }
        assert_eq!(dist.quantile(0.75), 3.0);
        assert_eq!(dist.quantile(1.0), 8.0);
    }

    #[test]
    fn beta_quantile_inverts_cdf_precisely() {
        // Beta(1,2) has closed form F(v) = 1-(1-v)^2, F^{-1}(q) = 1-sqrt(1-q).
        let dist = Distribution::Beta {
            alpha: 1.0,
            beta: 2.0,
        };
        for i in 0..=20 {
            let q = i as f64 / 20.0;
            let v = dist.quantile(q);
            let exact = 1.0 - (1.0 - q).sqrt();
            assert!((v - exact).abs() < 1e-12, "q={q}: {v} vs {exact}");
        }
    }

    #[test]
    fn others_concatenates_in_bidder_order() {
        let prof = ValuationProfile::new(
            array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]],
            ValuationKind::Additive,
            6.0,
        )
        .unwrap();
        assert_eq!(prof.others(1), array![1.0, 2.0, 5.0, 6.0]);
    }
}
