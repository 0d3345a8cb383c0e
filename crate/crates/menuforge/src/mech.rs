//! Deployed mechanism runtime: menu generation plus nearest-grid price
//! adjustment plus bidder-optimizing choice, yielding allocations and
//! payments; Monte-Carlo revenue estimation and plotting slices.
//!
//! A [`Mechanism`] bundles a trained menu network with the price-adjustment
//! table produced by the compatibility transformation. At run time each
//! bidder's menu is computed from the *other* bidders' actual bids
//! (self-bid independence, hence strategy-proofness), then shifted by the
//! price adjustments recorded at the nearest grid point of those bids; the
//! bidder receives their utility-maximizing element.

use crate::baselines::mc_stats;
use crate::domain::{
    sample_profile_with, Distribution, DomainError, ValuationProfile,
};
use crate::grid::ValueGrid;
use crate::menu::{best_response, Menu};
use crate::nn::{load_checkpoint, save_checkpoint, LipschitzCert, MenuNetwork, NnError};
use crate::scalar::Real;
use crate::transform::{PriceAdjustmentTable, SafetyMargins};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MechError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("mechanism parts disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Checkpoint(#[from] NnError),
    #[error("malformed mechanism file: {0}")]
    Json(#[from] serde_json::Error),
}

/// Result of one auction run over a full bid profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Outcome<R: Real> {
    /// Row i holds bidder i's received (possibly fractional) bundle.
    pub allocations: Array2<R>,
    /// Payment collected from each bidder.
    pub payments: Array1<R>,
    /// Menu element selected by each bidder; `None` for menu-free auctions.
    pub chosen: Vec<Option<usize>>,
}

impl<R: Real> Outcome<R> {
    pub fn n(&self) -> usize {
        self.allocations.nrows()
    }

    pub fn m(&self) -> usize {
        self.allocations.ncols()
    }

    /// Total payment collected across bidders.
    pub fn revenue(&self) -> R {
        self.payments.iter().copied().sum()
    }

    /// Largest per-item over-allocation, `max_j (Σ_i alloc_ij) − 1`.
    /// Nonpositive (up to tolerance) for a feasible outcome.
    pub fn max_overallocation(&self) -> R {
        let mut worst = R::neg_infinity();
        for j in 0..self.m() {
            let total: R = self.allocations.column(j).iter().copied().sum();
            worst = worst.max(total - R::one());
        }
        if self.m() == 0 {
            R::zero()
        } else {
            worst
        }
    }
}

/// A deployable auction: menu network, price-adjustment table, and the grid
/// the adjustments are keyed to. Immutable after construction; all runs on
/// it are pure functions of the bids.
#[derive(Debug, Clone, PartialEq)]
pub struct Mechanism<R: Real> {
    pub network: MenuNetwork<R>,
    pub adjustments: PriceAdjustmentTable,
    pub grid: ValueGrid<R>,
    pub margins: SafetyMargins,
}

impl<R: Real> Mechanism<R> {
    /// Assembles a mechanism, checking that all parts describe the same
    /// auction (bidders, items, menu size, value domain). The margins are
    /// taken from the adjustment table, which records the values the
    /// transformation actually enforced.
    pub fn new(
        network: MenuNetwork<R>,
        adjustments: PriceAdjustmentTable,
        grid: ValueGrid<R>,
    ) -> Result<Self, MechError> {
        if network.n != grid.n() || network.m != grid.m() {
            return Err(MechError::Mismatch(format!(
                "network is {}x{} but grid is {}x{}",
                network.n,
                network.m,
                grid.n(),
                grid.m()
            )));
        }
        if adjustments.n != network.n || adjustments.m != network.m || adjustments.k != network.k
        {
            return Err(MechError::Mismatch(format!(
                "adjustment table was built for n={}, m={}, k={} but the network has n={}, m={}, k={}",
                adjustments.n, adjustments.m, adjustments.k, network.n, network.m, network.k
            )));
        }
        for (bidder, entries) in adjustments.bidders.iter().enumerate() {
            let count = grid.others_count(bidder);
            let sorted = entries.windows(2).all(|w| w[0].others_index < w[1].others_index);
            if !sorted || entries.iter().any(|e| e.others_index >= count) {
                return Err(MechError::Mismatch(format!(
                    "bidder {bidder}'s adjustment entries do not index this grid"
                )));
            }
        }
        let margins = adjustments.margins;
        Ok(Self {
            network,
            adjustments,
            grid,
            margins,
        })
    }

    /// A mechanism that deploys the raw network without any price
    /// adjustments (useful for measuring the untransformed violation rate).
    pub fn untransformed(
        network: MenuNetwork<R>,
        grid: ValueGrid<R>,
        margins: SafetyMargins,
    ) -> Result<Self, MechError> {
        let table = PriceAdjustmentTable {
            n: network.n,
            m: network.m,
            k: network.k,
            bidders: vec![Vec::new(); network.n],
            margins,
            config: crate::transform::TransformConfig::default(),
            stats: crate::transform::TransformStats::default(),
        };
        Self::new(network, table, grid)
    }

    pub fn n(&self) -> usize {
        self.network.n
    }

    pub fn m(&self) -> usize {
        self.network.m
    }

    fn check_domain(&self, bids: &ValuationProfile<R>) -> Result<(), MechError> {
        if bids.n() != self.n() || bids.m() != self.m() {
            return Err(MechError::Mismatch(format!(
                "bid profile is {}x{} but the mechanism serves {}x{}",
                bids.n(),
                bids.m(),
                self.n(),
                self.m()
            )));
        }
        if bids.kind != self.network.kind {
            return Err(MechError::Mismatch(
                "bid profile valuation kind differs from the trained network".into(),
            ));
        }
        let v_max = self.grid.v_max;
        for &v in bids.values.iter() {
            // Out-of-domain bids are rejected rather than clamped: the
            // compatibility and strategy-proofness guarantees only cover
            // the gridded domain.
            if v < R::zero() || v > v_max {
                return Err(MechError::Domain(DomainError::OutOfDomain(format!(
                    "bid {v} outside the trained domain [0, {v_max}]"
                ))));
            }
        }
        Ok(())
    }

    /// The menu bidder `bidder` faces under `bids`: computed from the other
    /// bidders' bids only, with the price adjustments recorded at the
    /// nearest grid point of those bids (exact midpoints resolve to the
    /// lexicographically smaller point). A pure function of `b_{-i}`.
    pub fn menu_for(
        &self,
        bids: &ValuationProfile<R>,
        bidder: usize,
    ) -> Result<Menu<R>, MechError> {
        self.check_domain(bids)?;
        Ok(self.menu_unchecked(bids, bidder))
    }

    fn menu_unchecked(&self, bids: &ValuationProfile<R>, bidder: usize) -> Menu<R> {
        let others = bids.others(bidder);
        let menu = self.network.forward_menu(bidder, others.view());
        let oidx = self
            .grid
            .nearest_others(bidder, others.as_slice().expect("contiguous"));
        match self.adjustments.delta(bidder, oidx) {
            Some(delta) => {
                let deltas: Vec<R> = delta.iter().map(|&d| R::real(d)).collect();
                menu.with_price_deltas(&deltas)
            }
            None => menu,
        }
    }

    /// Runs the auction: every bidder simultaneously receives their menu
    /// and takes their utility-maximizing element (ties to the lowest
    /// index, opt-out guaranteeing nonnegative utility).
    pub fn run_auction(&self, bids: &ValuationProfile<R>) -> Result<Outcome<R>, MechError> {
        self.check_domain(bids)?;
        let n = self.n();
        let m = self.m();
        let mut allocations = Array2::zeros((n, m));
        let mut payments = Array1::zeros(n);
        let mut chosen = Vec::with_capacity(n);
        for i in 0..n {
            let menu = self.menu_unchecked(bids, i);
            let (star, _) = best_response(&menu, bids.bidder(i), self.network.kind);
            allocations.row_mut(i).assign(&menu.bundles.row(star));
            payments[i] = menu.prices[star];
            chosen.push(Some(star));
        }
        Ok(Outcome {
            allocations,
            payments,
            chosen,
        })
    }
}

/// Monte-Carlo estimate of expected total revenue under truthful bidding,
/// values i.i.d. from `dist`. Deterministic in the seed at any thread
/// count (fixed 64 RNG streams, order-independent reduction).
pub fn expected_revenue<R: Real>(
    mech: &Mechanism<R>,
    dist: Distribution,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64), MechError> {
    assert!(samples >= 1, "need at least one sample");
    dist.validate()?;
    if dist.v_max() > mech.grid.v_max.as_f64() + 1e-12 {
        return Err(MechError::Domain(DomainError::OutOfDomain(format!(
            "distribution support reaches {} but the mechanism is trained on [0, {}]",
            dist.v_max(),
            mech.grid.v_max
        ))));
    }
    let (n, m, kind) = (mech.n(), mech.m(), mech.network.kind);
    Ok(mc_stats(samples, seed, |rng| {
        let bids =
            sample_profile_with::<R, _>(dist, kind, n, m, rng).expect("distribution validated");
        let outcome = mech
            .run_auction(&bids)
            .expect("sampled bids lie in the trained domain");
        outcome.revenue().as_f64()
    }))
}

/// A tabular slice of the mechanism for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SliceTable {
    /// CSV text with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|x| format!("{x}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

/// Sweeps the listed `(bidder, item)` coordinates over `resolution` evenly
/// spaced values in [0, v_max] (cartesian product, last axis fastest),
/// holding every other coordinate at `base`, and records `target`'s
/// allocation and payment at each point.
pub fn slice_mechanism<R: Real>(
    mech: &Mechanism<R>,
    base: &ValuationProfile<R>,
    target: usize,
    axes: &[(usize, usize)],
    resolution: usize,
) -> Result<SliceTable, MechError> {
    mech.check_domain(base)?;
    if target >= mech.n() {
        return Err(MechError::Mismatch(format!(
            "target bidder {target} out of range for n={}",
            mech.n()
        )));
    }
    if axes.is_empty() || resolution < 2 {
        return Err(MechError::Mismatch(
            "need at least one axis and resolution >= 2".into(),
        ));
    }
    for &(b, j) in axes {
        if b >= mech.n() || j >= mech.m() {
            return Err(MechError::Mismatch(format!(
                "axis ({b}, {j}) out of range for a {}x{} auction",
                mech.n(),
                mech.m()
            )));
        }
    }

    let v_max = mech.grid.v_max;
    let step = v_max / R::real((resolution - 1) as f64);
    let value_at = |t: usize| {
        if t + 1 == resolution {
            v_max
        } else {
            step * R::real(t as f64)
        }
    };

    let mut header: Vec<String> = axes.iter().map(|&(b, j)| format!("v_{b}_{j}")).collect();
    for j in 0..mech.m() {
        header.push(format!("alloc_{j}"));
    }
    header.push("payment".into());

    let total = resolution.pow(axes.len() as u32);
    let mut rows = Vec::with_capacity(total);
    let mut ticks = vec![0usize; axes.len()];
    let mut bids = base.clone();
    for _ in 0..total {
        let mut row = Vec::with_capacity(axes.len() + mech.m() + 1);
        for (a, &(b, j)) in axes.iter().enumerate() {
            let v = value_at(ticks[a]);
            bids.values[[b, j]] = v;
            row.push(v.as_f64());
        }
        let outcome = mech.run_auction(&bids)?;
        for j in 0..mech.m() {
            row.push(outcome.allocations[[target, j]].as_f64());
        }
        row.push(outcome.payments[target].as_f64());
        rows.push(row);
        for a in (0..axes.len()).rev() {
            ticks[a] += 1;
            if ticks[a] < resolution {
                break;
            }
            ticks[a] = 0;
        }
    }
    Ok(SliceTable { header, rows })
}

// ---------------------------------------------------------------------------
// Flat-file persistence
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MechanismFile {
    checkpoint: serde_json::Value,
    grid: serde_json::Value,
    adjustments: PriceAdjustmentTable,
}

/// Serializes the full deployable mechanism (network checkpoint, grid,
/// adjustment table) into one JSON document. The embedded checkpoint's
/// certificate carries the margins' Lipschitz bounds — the values the
/// transformation actually enforced.
pub fn save_mechanism<R: Real>(mech: &Mechanism<R>) -> String {
    let cert = LipschitzCert {
        l_a: mech.margins.l_a,
        l_p: mech.margins.l_p,
        method: "margins".into(),
    };
    let file = MechanismFile {
        checkpoint: serde_json::from_str(&save_checkpoint(&mech.network, &cert))
            .expect("checkpoint text is valid JSON"),
        grid: serde_json::to_value(&mech.grid).expect("grid serializes"),
        adjustments: mech.adjustments.clone(),
    };
    serde_json::to_string_pretty(&file).expect("mechanism serializes")
}

pub fn load_mechanism<R: Real>(json: &str) -> Result<Mechanism<R>, MechError> {
    let file: MechanismFile = serde_json::from_str(json)?;
    let (network, _cert) = load_checkpoint::<R>(&serde_json::to_string(&file.checkpoint)?)?;
    let grid: ValueGrid<R> = serde_json::from_value(file.grid)?;
    Mechanism::new(network, file.adjustments, grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ValuationKind;
    use crate::grid::make_grid;
    use crate::transform::{transform_all, SafetyMargins, TransformConfig};
    use approx::assert_relative_eq;
    use ndarray::array;

    fn margins_zero_lipschitz(epsilon: f64, s_m: f64, m: usize, n: usize) -> SafetyMargins {
        SafetyMargins {
            s_f: 0.0,
            s_m,
            epsilon,
            l_a: 0.0,
            l_p: 0.0,
            m,
            v_max: 1.0,
            n,
        }
    }

    /// Constant-menu network: zero weights, chosen biases (element-major
    /// sigmoid logits for bundles, linear prices).
    fn constant_net(
        n: usize,
        m: usize,
        k: usize,
        bundle_logits: &[f64],
        prices: &[f64],
    ) -> MenuNetwork<f64> {
        let mut net = MenuNetwork::new(n, m, k, ValuationKind::Additive, &[], 0);
        for nets in &mut net.bidders {
            let bl = nets.bundle.layers.last_mut().unwrap();
            bl.w.fill(0.0);
            for (at, &x) in bundle_logits.iter().enumerate() {
                bl.b[at] = x;
            }
            let pl = nets.price.layers.last_mut().unwrap();
            pl.w.fill(0.0);
            for (at, &x) in prices.iter().enumerate() {
                pl.b[at] = x;
            }
        }
        net
    }

    fn profile(rows: Array2<f64>) -> ValuationProfile<f64> {
        ValuationProfile::new(rows, ValuationKind::Additive, 1.0).unwrap()
    }

    fn all_ir_mechanism() -> Mechanism<f64> {
        let net = constant_net(2, 2, 4, &[0.0; 6], &[50.0; 3]);
        let grid = make_grid(1.0, 2, 2, 5);
        let margins = margins_zero_lipschitz(0.25, 0.25, 2, 2);
        Mechanism::untransformed(net, grid, margins).unwrap()
    }

    #[test]
    fn all_ir_fixture_allocates_nothing_and_charges_nothing() {
        let mech = all_ir_mechanism();
        let out = mech
            .run_auction(&profile(array![[0.3, 0.8], [0.9, 0.1]]))
            .unwrap();
        assert!(out.allocations.iter().all(|&a| a == 0.0));
        assert!(out.payments.iter().all(|&p| p == 0.0));
        let opt_out = mech.network.k - 1;
        assert!(out.chosen.iter().all(|&c| c == Some(opt_out)));

        let (mean, err) = expected_revenue(&mech, Distribution::UniformUnit, 5000, 7).unwrap();
        assert_eq!(mean, 0.0);
        assert_eq!(err, 0.0);
    }

    #[test]
    fn menus_are_independent_of_the_own_bid() {
        let mech = all_ir_mechanism();
        let a = profile(array![[0.1, 0.2], [0.5, 0.5]]);
        let b = profile(array![[0.9, 0.7], [0.5, 0.5]]);
        assert_eq!(mech.menu_for(&a, 0).unwrap(), mech.menu_for(&b, 0).unwrap());
        // The *other* bidder's menu may of course change.
        let c = profile(array![[0.1, 0.2], [0.9, 0.9]]);
        assert_eq!(mech.menu_for(&a, 1).unwrap(), mech.menu_for(&c, 1).unwrap());
    }

    #[test]
    fn identical_bids_give_identical_outcomes() {
        let mech = all_ir_mechanism();
        let bids = profile(array![[0.4, 0.6], [0.2, 0.9]]);
        assert_eq!(
            mech.run_auction(&bids).unwrap(),
            mech.run_auction(&bids).unwrap()
        );
        let r1 = expected_revenue(&mech, Distribution::UniformUnit, 20_000, 3).unwrap();
        let r2 = expected_revenue(&mech, Distribution::UniformUnit, 20_000, 3).unwrap();
        assert_eq!(r1, r2, "fixed-stream Monte Carlo is bit-deterministic");
    }

    #[test]
    fn out_of_domain_bids_are_rejected_not_clamped() {
        let mech = all_ir_mechanism();
        let over = ValuationProfile::new(
            array![[1.2, 0.0], [0.0, 0.0]],
            ValuationKind::Additive,
            2.0,
        )
        .unwrap();
        assert!(matches!(
            mech.run_auction(&over),
            Err(MechError::Domain(DomainError::OutOfDomain(_)))
        ));
        let wrong_shape = ValuationProfile::new(
            array![[0.5], [0.5]],
            ValuationKind::Additive,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            mech.run_auction(&wrong_shape),
            Err(MechError::Mismatch(_))
        ));
    }

    #[test]
    fn posted_price_revenue_matches_closed_form() {
        // Single bidder, one item, near-unit bundle at price 0.5: revenue
        // under UniformUnit is 0.5 * P(v >= 0.5) = 0.25.
        let net = constant_net(1, 1, 2, &[25.0], &[0.5]);
        let grid = make_grid(1.0, 1, 1, 5);
        let margins = margins_zero_lipschitz(0.25, 0.02, 1, 1);
        let mech = Mechanism::untransformed(net, grid, margins).unwrap();
        let (mean, err) = expected_revenue(&mech, Distribution::UniformUnit, 200_000, 11).unwrap();
        assert!(err < 1.5e-3, "standard error {err}");
        assert!(
            (mean - 0.25).abs() <= 3.0 * err,
            "mean {mean} outside the 3-sigma band around 0.25"
        );
    }

    /// Two crossing elements for bidder 0 and an always-opt-out bidder 1;
    /// the transformation prices element A up by 0.06.
    fn crossing_mechanism() -> Mechanism<f64> {
        let mut net = constant_net(2, 1, 3, &[20.0, 0.0], &[0.5, 0.2]);
        let b1 = &mut net.bidders[1];
        b1.bundle.layers.last_mut().unwrap().b.fill(-40.0);
        b1.price.layers.last_mut().unwrap().b.fill(50.0);
        let grid = ValueGrid {
            axes: vec![vec![vec![0.58, 0.62]], vec![vec![0.5]]],
            v_max: 1.0,
        };
        let margins = margins_zero_lipschitz(0.04, 0.05, 1, 2);
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 100.0,
            ..TransformConfig::default()
        };
        let table = transform_all(&net, &grid, &margins, &config).unwrap();
        Mechanism::new(net, table, grid).unwrap()
    }

    #[test]
    fn adjustments_apply_at_the_nearest_grid_point() {
        let mech = crossing_mechanism();
        // Bidder 0's raw menu prices are (0.5, 0.2, 0); the transform adds
        // 0.06 to element A at the only others-grid point.
        let bids = profile(array![[0.62], [0.33]]);
        let menu = mech.menu_for(&bids, 0).unwrap();
        assert_relative_eq!(menu.prices[0], 0.56, max_relative = 1e-6);
        assert_relative_eq!(menu.prices[1], 0.2, max_relative = 1e-12);
        assert_eq!(menu.prices[2], 0.0);
        // Post-adjustment, element B wins at 0.62 (0.11 vs 0.06).
        let out = mech.run_auction(&bids).unwrap();
        assert_eq!(out.chosen[0], Some(1));
        assert_relative_eq!(out.payments[0], 0.2, max_relative = 1e-12);
    }

    #[test]
    fn sampled_profiles_stay_feasible_and_individually_rational() {
        let mech = crossing_mechanism();
        let mut worst_alloc = f64::NEG_INFINITY;
        let mut worst_utility = f64::INFINITY;
        for s in 0..1000 {
            let bids = crate::domain::sample_profile::<f64>(
                Distribution::UniformUnit,
                ValuationKind::Additive,
                2,
                1,
                s,
            )
            .unwrap();
            let out = mech.run_auction(&bids).unwrap();
            worst_alloc = worst_alloc.max(out.max_overallocation());
            for i in 0..2 {
                let u = out.allocations.row(i).dot(&bids.bidder(i)) - out.payments[i];
                worst_utility = worst_utility.min(u);
                assert!(out.payments[i] >= 0.0);
            }
        }
        assert!(worst_alloc <= 1e-7, "over-allocation {worst_alloc}");
        assert!(worst_utility >= -1e-9, "IR violation {worst_utility}");
    }

    #[test]
    fn slice_sweeps_the_requested_axes() {
        let mech = crossing_mechanism();
        let base = profile(array![[0.0], [0.5]]);
        let slice = slice_mechanism(&mech, &base, 0, &[(0, 0)], 2).unwrap();
        assert_eq!(slice.header, vec!["v_0_0", "alloc_0", "payment"]);
        assert_eq!(slice.rows.len(), 2);
        assert_eq!(slice.rows[0][0], 0.0);
        assert_eq!(slice.rows[1][0], 1.0);
        // At v=0: opt-out (nothing, pay nothing). At v=1: element A wins
        // even at its adjusted price 0.56.
        assert_eq!(slice.rows[0][1], 0.0);
        assert_eq!(slice.rows[0][2], 0.0);
        assert!(slice.rows[1][1] > 0.99);
        assert_relative_eq!(slice.rows[1][2], 0.56, max_relative = 1e-6);

        let csv = slice.to_csv();
        assert!(csv.starts_with("v_0_0,alloc_0,payment\n"));
        assert_eq!(csv.lines().count(), 3);

        let grid_2d = slice_mechanism(&mech, &base, 0, &[(0, 0), (1, 0)], 3).unwrap();
        assert_eq!(grid_2d.rows.len(), 9);
    }

    #[test]
    fn mechanism_file_round_trips() {
        let mech = crossing_mechanism();
        let json = save_mechanism(&mech);
        let back: Mechanism<f64> = load_mechanism(&json).unwrap();
        assert_eq!(mech.network, back.network);
        assert_eq!(mech.adjustments, back.adjustments);
        assert_eq!(mech.grid, back.grid);
        let bids = profile(array![[0.62], [0.5]]);
        assert_eq!(
            mech.run_auction(&bids).unwrap(),
            back.run_auction(&bids).unwrap()
        );
    }

    #[test]
    fn construction_rejects_mismatched_parts() {
        let net = constant_net(2, 1, 3, &[0.0, 0.0], &[1.0, 1.0]);
        let grid3: ValueGrid<f64> = make_grid(1.0, 2, 2, 3);
        let margins = margins_zero_lipschitz(0.5, 0.02, 1, 2);
        assert!(matches!(
            Mechanism::untransformed(net, grid3, margins),
            Err(MechError::Mismatch(_))
        ));
    }
}
