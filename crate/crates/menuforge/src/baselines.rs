//! Analytic and simulated baseline auctions.
//!
//! * [`vcg_additive`]: per-item second-price auction (the VCG outcome for
//!   additive bidders).
//! * [`myerson_ironed`] / [`myerson_reserve`]: optimal single-item auction
//!   machinery — virtual values with ironing, built by concavifying the
//!   revenue curve `R(q) = q·F⁻¹(1−q)` in quantile space.
//! * [`item_myerson_revenue`]: the additive multi-item baseline that runs an
//!   independent optimal single-item auction per item.
//! * [`yao_optimal_revenue`]: closed-form optimal revenue for two items and
//!   i.i.d. binary `{a, b}` values, the strongest available benchmark for
//!   multi-bidder multi-item auctions.
//!
//! Monte-Carlo estimates split work across a fixed number of RNG streams and
//! reduce in fixed order, so results are independent of thread count.

use crate::domain::{Distribution, ValuationKind, ValuationProfile};
use crate::mech::Outcome;
use crate::scalar::Real;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Quantile-grid resolution used when no explicit resolution is requested.
pub const DEFAULT_QUANTILE_POINTS: usize = 10_000;

/// Number of independent RNG streams each Monte-Carlo estimate is split
/// into. Fixed (rather than thread-count-dependent) so estimates are
/// bit-identical at any parallelism.
const MC_SHARDS: u64 = 64;

/// Mean and standard error of `eval` over `samples` i.i.d. draws.
pub(crate) fn mc_stats<F>(samples: u64, seed: u64, eval: F) -> (f64, f64)
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    let shard_stats: Vec<(f64, f64, u64)> = (0..MC_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard + 1);
            let count = samples / MC_SHARDS + u64::from(shard < samples % MC_SHARDS);
            let (mut sum, mut sumsq) = (0.0, 0.0);
            for _ in 0..count {
                let x = eval(&mut rng);
                sum += x;
                sumsq += x * x;
            }
            (sum, sumsq, count)
        })
        .collect();
    let (mut sum, mut sumsq, mut count) = (0.0, 0.0, 0u64);
    for (s, s2, c) in shard_stats {
        sum += s;
        sumsq += s2;
        count += c;
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(0.0);
    (mean, (var / count as f64).sqrt())
}

// ---------------------------------------------------------------------------
// VCG for additive bidders
// ---------------------------------------------------------------------------

/// VCG outcome for additive bidders: each item goes to its highest bidder at
/// the highest competing bid. Ties resolve to the lowest bidder index, who
/// then pays their own bid (the tied competitor's bid).
///
/// Unit-demand bidders are rejected: their VCG outcome requires a
/// maximum-weight matching, which this baseline does not implement.
pub fn vcg_additive<R: Real>(bids: &ValuationProfile<R>) -> Result<Outcome<R>, BaselineError> {
    if bids.kind != ValuationKind::Additive {
        return Err(BaselineError::Unsupported(
            "per-item second-price requires additive bidders".into(),
        ));
    }
    let (n, m) = (bids.n(), bids.m());
    if n == 0 {
        return Err(BaselineError::InvalidParameter(
            "need at least one bidder".into(),
        ));
    }
    let mut allocations = Array2::zeros((n, m));
    let mut payments = Array1::zeros(n);
    for j in 0..m {
        let mut winner = 0;
        for i in 1..n {
            if bids.values[[i, j]] > bids.values[[winner, j]] {
                winner = i;
            }
        }
        let mut price = R::zero();
        for i in 0..n {
            if i != winner {
                price = price.max(bids.values[[i, j]]);
            }
        }
        allocations[[winner, j]] = R::one();
        payments[winner] += price;
    }
    Ok(Outcome {
        allocations,
        payments,
        chosen: vec![None; n],
    })
}

/// Monte-Carlo expected VCG revenue for `n` additive bidders, `m` items,
/// values i.i.d. from `dist`. Returns `(mean, standard error)`.
pub fn vcg_revenue_mc(
    dist: Distribution,
    n: usize,
    m: usize,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64), BaselineError> {
    dist.validate()
        .map_err(|e| BaselineError::InvalidParameter(e.to_string()))?;
    if n == 0 || samples == 0 {
        return Err(BaselineError::InvalidParameter(
            "need at least one bidder and one sample".into(),
        ));
    }
    Ok(mc_stats(samples, seed, |rng| {
        // Revenue is the sum over items of the second-highest bid; track the
        // top two bids per item instead of materializing an Outcome.
        let mut best = vec![0.0f64; m];
        let mut second = vec![0.0f64; m];
        for _ in 0..n {
            for j in 0..m {
                let v = dist.sample(rng);
                if v > best[j] {
                    second[j] = best[j];
                    best[j] = v;
                } else if v > second[j] {
                    second[j] = v;
                }
            }
        }
        second.iter().sum()
    }))
}

// ---------------------------------------------------------------------------
// Single-item optimal auctions (virtual values with ironing)
// ---------------------------------------------------------------------------

/// (Possibly ironed) virtual value of a distribution, represented as the
/// slope of the revenue curve `R(q) = q·F⁻¹(1−q)` on a uniform quantile
/// grid. Ironing replaces `R` with its upper concave envelope, making the
/// slope nonincreasing in `q` — equivalently, monotone nondecreasing in the
/// value `v = F⁻¹(1−q)`.
#[derive(Debug, Clone)]
pub struct VirtualValueFn {
    dist: Distribution,
    pub ironed: bool,
    /// Revenue curve at the grid points (concavified when `ironed`).
    curve: Vec<f64>,
    /// Slope of `curve` on each grid segment, in revenue per unit quantile.
    slopes: Vec<f64>,
}

/// Builds the ironed virtual value of `dist` on a quantile grid with
/// `points` nodes.
pub fn myerson_ironed(
    dist: Distribution,
    points: usize,
) -> Result<VirtualValueFn, BaselineError> {
    VirtualValueFn::build(dist, points, true)
}

/// Optimal posted price against a single bidder from `dist`; equivalently
/// the reserve price of the optimal single-item auction.
pub fn myerson_reserve(dist: Distribution) -> Result<f64, BaselineError> {
    Ok(myerson_ironed(dist, DEFAULT_QUANTILE_POINTS)?.reserve())
}

impl VirtualValueFn {
    pub fn build(
        dist: Distribution,
        points: usize,
        ironed: bool,
    ) -> Result<Self, BaselineError> {
        dist.validate()
            .map_err(|e| BaselineError::InvalidParameter(e.to_string()))?;
        if points < 2 {
            return Err(BaselineError::InvalidParameter(
                "quantile grid needs at least 2 points".into(),
            ));
        }
        let segments = points - 1;
        let raw: Vec<f64> = (0..points)
            .map(|i| {
                let q = i as f64 / segments as f64;
                q * dist.quantile(1.0 - q)
            })
            .collect();
        let curve = if ironed {
            upper_concave_envelope(&raw)
        } else {
            raw
        };
        let slopes = curve
            .windows(2)
            .map(|w| (w[1] - w[0]) * segments as f64)
            .collect();
        Ok(Self {
            dist,
            ironed,
            curve,
            slopes,
        })
    }

    pub fn dist(&self) -> Distribution {
        self.dist
    }

    /// Revenue curve values on the quantile grid (concavified when `ironed`).
    pub fn revenue_curve(&self) -> &[f64] {
        &self.curve
    }

    /// Virtual value at sale quantile `q = 1 − F(v)`.
    pub fn at_quantile(&self, q: f64) -> f64 {
        let segments = self.slopes.len();
        let idx = ((q.clamp(0.0, 1.0) * segments as f64) as usize).min(segments - 1);
        self.slopes[idx]
    }

    /// Virtual value at value `v`.
    pub fn virtual_value(&self, v: f64) -> f64 {
        self.at_quantile(1.0 - self.dist.cdf(v))
    }

    /// Value below which the (ironed) marginal revenue is negative: the
    /// seller prefers not to sell. Accurate to one quantile-grid step.
    pub fn reserve(&self) -> f64 {
        let mut i = 0;
        while i < self.slopes.len() && self.slopes[i] > 0.0 {
            i += 1;
        }
        let q_star = i as f64 / self.slopes.len() as f64;
        self.dist.quantile(1.0 - q_star)
    }

    /// Monte-Carlo expected revenue of the optimal single-item auction with
    /// `n` i.i.d. bidders: `E[max(0, max_i φ̄(v_i))]`, the expected virtual
    /// surplus of the allocation that serves the highest nonnegative virtual
    /// value. Sampling happens directly in quantile space, so no CDF or
    /// quantile evaluations occur in the inner loop.
    pub fn revenue_mc(&self, n: usize, samples: u64, seed: u64) -> (f64, f64) {
        mc_stats(samples, seed, |rng| {
            let mut surplus = 0.0f64;
            for _ in 0..n {
                surplus = surplus.max(self.at_quantile(rng.gen::<f64>()));
            }
            surplus
        })
    }
}

/// Upper concave envelope of `r` over equally spaced abscissae, evaluated
/// back at every grid point. Monotone-chain upper hull, O(len).
fn upper_concave_envelope(r: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::with_capacity(r.len());
    for i in 0..r.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Drop b when it lies on or below the chord a→i.
            let cross =
                (b - a) as f64 * (r[i] - r[a]) - (r[b] - r[a]) * (i - a) as f64;
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![0.0; r.len()];
    out[r.len() - 1] = r[r.len() - 1];
    for w in hull.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a..b {
            let t = (i - a) as f64 / (b - a) as f64;
            out[i] = r[a] + t * (r[b] - r[a]);
        }
    }
    out
}

/// Expected revenue of running an independent optimal single-item auction
/// (with ironing) for each of `m` i.i.d. items and `n` i.i.d. bidders.
/// Returns `(mean, standard error)`.
pub fn item_myerson_revenue(
    dist: Distribution,
    n: usize,
    m: usize,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64), BaselineError> {
    if n == 0 || samples == 0 {
        return Err(BaselineError::InvalidParameter(
            "need at least one bidder and one sample".into(),
        ));
    }
    if m == 0 {
        return Ok((0.0, 0.0));
    }
    let vv = myerson_ironed(dist, DEFAULT_QUANTILE_POINTS)?;
    let (mean, se) = vv.revenue_mc(n, samples, seed);
    Ok((m as f64 * mean, m as f64 * se))
}

// ---------------------------------------------------------------------------
// Closed-form optimal revenue: two items, binary i.i.d. values
// ---------------------------------------------------------------------------

/// Exact optimal revenue over all strategy-proof, individually rational
/// auctions with `n ≥ 2` additive bidders, two items, and item values i.i.d.
/// on `{a, b}` with `P(v = a) = p`.
pub fn yao_optimal_revenue(n: usize, a: f64, b: f64, p: f64) -> Result<f64, BaselineError> {
    if n < 2 {
        return Err(BaselineError::InvalidParameter(format!(
            "need at least 2 bidders, got {n}"
        )));
    }
    if !(a.is_finite() && b.is_finite() && 0.0 < a && a < b) {
        return Err(BaselineError::InvalidParameter(format!(
            "need 0 < a < b, got a={a}, b={b}"
        )));
    }
    if !(0.0 < p && p < 1.0) {
        return Err(BaselineError::InvalidParameter(format!(
            "need p in (0,1), got {p}"
        )));
    }
    let nf = n as f64;
    let pos = |x: f64| x.max(0.0);
    let p_n = p.powi(n as i32);
    let p0 = p.powi(2 * n as i32);
    let p1 = 2.0 * nf * p.powi(2 * n as i32 - 1) * (1.0 - p);
    let p2 = 2.0 * p_n * (1.0 - p_n - nf * p.powi(n as i32 - 1) * (1.0 - p));
    Ok(2.0 * (1.0 - p_n) * b
        + p0 * pos(2.0 * a - (1.0 - p * p) / (p * p) * (b - a))
        + p1 * pos(a - (1.0 - p) / (2.0 * p) * (b - a))
        + p2 * pos(a - (1.0 - p) / p * (b - a)))
}
