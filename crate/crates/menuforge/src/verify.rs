//! Empirical certification harness: compatibility scanning over sampled
//! profiles, strategy-proofness via misreport search, and individual-
//! rationality checks.
//!
//! The checks run against anything that can execute an auction (the
//! [`AuctionRunner`] trait), so deliberately broken mechanisms can serve as
//! negative controls alongside the real [`Mechanism`]. All estimates use a
//! fixed number of RNG streams with order-independent reductions, making
//! every report bit-deterministic for a given seed at any thread count.

use crate::domain::{sample_profile_with, Distribution, ValuationKind, ValuationProfile};
use crate::mech::{Mechanism, Outcome};
use crate::scalar::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const SCAN_SHARDS: u64 = 64;

/// Anything that maps a full bid profile to an auction outcome. The harness
/// only feeds it profiles inside the declared domain.
pub trait AuctionRunner<R: Real>: Sync {
    fn run(&self, bids: &ValuationProfile<R>) -> Outcome<R>;
    fn n(&self) -> usize;
    fn m(&self) -> usize;
    fn kind(&self) -> ValuationKind;
    fn v_max(&self) -> f64;
}

impl<R: Real> AuctionRunner<R> for Mechanism<R> {
    fn run(&self, bids: &ValuationProfile<R>) -> Outcome<R> {
        self.run_auction(bids)
            .expect("harness profiles lie in the mechanism's domain")
    }

    fn n(&self) -> usize {
        Mechanism::n(self)
    }

    fn m(&self) -> usize {
        Mechanism::m(self)
    }

    fn kind(&self) -> ValuationKind {
        self.network.kind
    }

    fn v_max(&self) -> f64 {
        self.grid.v_max.as_f64()
    }
}

// ---------------------------------------------------------------------------
// Compatibility
// ---------------------------------------------------------------------------

/// Allocation feasibility over sampled truthful profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    pub samples: u64,
    /// Max over samples and items of `Σ_i α_ij − 1`.
    pub max_overallocation: f64,
    /// Samples where some item exceeded the tolerance.
    pub violation_count: u64,
    pub violation_rate: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Scans `samples` truthful profiles for componentwise over-allocation;
/// passes iff the worst excess stays within `tolerance` (spec default
/// 1e-7).
pub fn check_compatibility<R: Real>(
    mech: &impl AuctionRunner<R>,
    dist: Distribution,
    samples: u64,
    seed: u64,
    tolerance: f64,
) -> CompatibilityReport {
    assert!(samples >= 1);
    let (n, m, kind) = (mech.n(), mech.m(), mech.kind());
    let stats: Vec<(f64, u64)> = (0..SCAN_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard + 1);
            let count = samples / SCAN_SHARDS + u64::from(shard < samples % SCAN_SHARDS);
            let mut worst = f64::NEG_INFINITY;
            let mut violations = 0u64;
            for _ in 0..count {
                let bids = sample_profile_with::<R, _>(dist, kind, n, m, &mut rng)
                    .expect("distribution validated");
                let over = mech.run(&bids).max_overallocation().as_f64();
                worst = worst.max(over);
                violations += u64::from(over > tolerance);
            }
            (worst, violations)
        })
        .collect();
    let mut max_overallocation = f64::NEG_INFINITY;
    let mut violation_count = 0;
    for (w, c) in stats {
        max_overallocation = max_overallocation.max(w);
        violation_count += c;
    }
    CompatibilityReport {
        samples,
        max_overallocation,
        violation_count,
        violation_rate: violation_count as f64 / samples as f64,
        tolerance,
        pass: violation_count == 0,
    }
}

// ---------------------------------------------------------------------------
// Strategy-proofness (misreport search)
// ---------------------------------------------------------------------------

/// Misreport-search results. The search is a *sound lower bound* on true
/// regret: it only ever reports gains it actually found, so the real
/// maximum regret is at least `max_regret` — a pass certifies nothing
/// beyond the searched candidates, while any positive finding is a genuine
/// strategy-proofness violation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub profiles: u64,
    pub misreport_budget: u64,
    /// Misreport evaluations actually performed.
    pub budget_used: u64,
    /// Largest utility gain found by any misreport (0 if none gained).
    pub max_regret: f64,
    /// Mean over strictly positive gains (0 if none).
    pub mean_positive_regret: f64,
    pub positive_count: u64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Searches for profitable misreports: for every sampled truthful profile
/// and every bidder, evaluates a coarse grid over the bidder's own value
/// space plus random refinements around the best candidate found (the
/// menus are piecewise constant in the own bid, so gradients carry no
/// information). Deterministic in `seed` at any thread count.
pub fn estimate_regret<R: Real>(
    mech: &impl AuctionRunner<R>,
    dist: Distribution,
    profiles: u64,
    misreport_budget: u64,
    seed: u64,
    tolerance: f64,
) -> RegretReport {
    assert!(profiles >= 1 && misreport_budget >= 1);
    let (n, m, kind) = (mech.n(), mech.m(), mech.kind());
    let v_max = mech.v_max();

    // Coarse grid resolution: about half the budget on the grid, the rest
    // on refinement. At least both endpoints per axis (the corner set is
    // evaluated even if it exceeds a tiny budget).
    let per_axis = ((misreport_budget as f64 / 2.0).powf(1.0 / m as f64).floor() as usize).max(2);
    let coarse_total = per_axis.pow(m as u32) as u64;
    let refine_total = misreport_budget.saturating_sub(coarse_total);

    let stats: Vec<(f64, f64, u64, u64)> = (0..SCAN_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard + 1);
            let count = profiles / SCAN_SHARDS + u64::from(shard < profiles % SCAN_SHARDS);
            let mut max_gain = 0.0f64;
            let mut gain_sum = 0.0f64;
            let mut gain_count = 0u64;
            let mut used = 0u64;
            for _ in 0..count {
                let truthful = sample_profile_with::<R, _>(dist, kind, n, m, &mut rng)
                    .expect("distribution validated");
                let base = mech.run(&truthful);
                for bidder in 0..n {
                    let v_i = truthful.bidder(bidder).to_owned();
                    let u_true = base.allocations.row(bidder).dot(&v_i).as_f64()
                        - base.payments[bidder].as_f64();
                    let mut bids = truthful.clone();
                    let eval = |report: &[R], bids: &mut ValuationProfile<R>| {
                        for (j, &x) in report.iter().enumerate() {
                            bids.values[[bidder, j]] = x;
                        }
                        let out = mech.run(bids);
                        out.allocations.row(bidder).dot(&v_i).as_f64()
                            - out.payments[bidder].as_f64()
                    };

                    let mut best_gain = f64::NEG_INFINITY;
                    let mut best_report = vec![R::zero(); m];
                    let mut ticks = vec![0usize; m];
                    for _ in 0..coarse_total {
                        let report: Vec<R> = ticks
                            .iter()
                            .map(|&t| {
                                R::real(v_max * t as f64 / (per_axis - 1) as f64)
                            })
                            .collect();
                        let gain = eval(&report, &mut bids) - u_true;
                        if gain > best_gain {
                            best_gain = gain;
                            best_report = report;
                        }
                        for a in (0..m).rev() {
                            ticks[a] += 1;
                            if ticks[a] < per_axis {
                                break;
                            }
                            ticks[a] = 0;
                        }
                    }
                    // Random refinement in a shrinking box around the best
                    // candidate so far.
                    let base_radius = v_max / (per_axis - 1) as f64;
                    for t in 0..refine_total {
                        let radius =
                            base_radius * 0.5f64.powf(4.0 * t as f64 / refine_total as f64);
                        let report: Vec<R> = best_report
                            .iter()
                            .map(|&b| {
                                let x = b.as_f64() + rng.gen_range(-radius..=radius);
                                R::real(x.clamp(0.0, v_max))
                            })
                            .collect();
                        let gain = eval(&report, &mut bids) - u_true;
                        if gain > best_gain {
                            best_gain = gain;
                            best_report = report;
                        }
                    }
                    used += coarse_total + refine_total;
                    if best_gain > 0.0 {
                        gain_sum += best_gain;
                        gain_count += 1;
                    }
                    max_gain = max_gain.max(best_gain);
                }
            }
            (max_gain, gain_sum, gain_count, used)
        })
        .collect();

    let mut max_regret = 0.0f64;
    let mut gain_sum = 0.0;
    let mut positive_count = 0;
    let mut budget_used = 0;
    for (mg, gs, gc, u) in stats {
        max_regret = max_regret.max(mg);
        gain_sum += gs;
        positive_count += gc;
        budget_used += u;
    }
    RegretReport {
        profiles,
        misreport_budget,
        budget_used,
        max_regret,
        mean_positive_regret: if positive_count > 0 {
            gain_sum / positive_count as f64
        } else {
            0.0
        },
        positive_count,
        tolerance,
        pass: max_regret <= tolerance,
    }
}

// ---------------------------------------------------------------------------
// Individual rationality
// ---------------------------------------------------------------------------

/// Truthful-utility floor over sampled profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrReport {
    pub samples: u64,
    /// Smallest truthful utility observed across bidders and samples.
    pub min_utility: f64,
    /// `max(0, −min_utility)`: how far below zero the worst bidder fell.
    pub max_ir_violation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks that every bidder's truthful utility stays above `−tolerance`
/// (spec default 1e-9).
pub fn check_ir<R: Real>(
    mech: &impl AuctionRunner<R>,
    dist: Distribution,
    samples: u64,
    seed: u64,
    tolerance: f64,
) -> IrReport {
    assert!(samples >= 1);
    let (n, m, kind) = (mech.n(), mech.m(), mech.kind());
    let mins: Vec<f64> = (0..SCAN_SHARDS)
        .into_par_iter()
        .map(|shard| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard + 1);
            let count = samples / SCAN_SHARDS + u64::from(shard < samples % SCAN_SHARDS);
            let mut worst = f64::INFINITY;
            for _ in 0..count {
                let bids = sample_profile_with::<R, _>(dist, kind, n, m, &mut rng)
                    .expect("distribution validated");
                let out = mech.run(&bids);
                for i in 0..n {
                    let u = out.allocations.row(i).dot(&bids.bidder(i)).as_f64()
                        - out.payments[i].as_f64();
                    worst = worst.min(u);
                }
            }
            worst
        })
        .collect();
    let min_utility = mins.into_iter().fold(f64::INFINITY, f64::min);
    IrReport {
        samples,
        min_utility,
        max_ir_violation: (-min_utility).max(0.0),
        tolerance,
        pass: min_utility >= -tolerance,
    }
}

// ---------------------------------------------------------------------------
// Combined report
// ---------------------------------------------------------------------------

/// Budgets and tolerances for a full verification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub compat_samples: u64,
    pub ir_samples: u64,
    pub regret_profiles: u64,
    pub misreport_budget: u64,
    pub seed: u64,
    pub compat_tolerance: f64,
    pub ir_tolerance: f64,
    pub regret_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            compat_samples: 100_000,
            ir_samples: 100_000,
            regret_profiles: 1000,
            misreport_budget: 500,
            seed: 0,
            compat_tolerance: 1e-7,
            ir_tolerance: 1e-9,
            regret_tolerance: 1e-6,
        }
    }
}

/// All three checks in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub compatibility: CompatibilityReport,
    pub regret: RegretReport,
    pub ir: IrReport,
}

impl VerificationReport {
    pub fn pass(&self) -> bool {
        self.compatibility.pass && self.regret.pass && self.ir.pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Runs compatibility, misreport, and IR checks with the given budgets.
pub fn verify_mechanism<R: Real>(
    mech: &impl AuctionRunner<R>,
    dist: Distribution,
    config: &VerifyConfig,
) -> VerificationReport {
    VerificationReport {
        compatibility: check_compatibility(
            mech,
            dist,
            config.compat_samples,
            config.seed,
            config.compat_tolerance,
        ),
        regret: estimate_regret(
            mech,
            dist,
            config.regret_profiles,
            config.misreport_budget,
            config.seed,
            config.regret_tolerance,
        ),
        ir: check_ir(mech, dist, config.ir_samples, config.seed, config.ir_tolerance),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::ValuationKind;
    use crate::grid::{make_grid, ValueGrid};
    use crate::menu::{best_response, Menu};
    use crate::nn::MenuNetwork;
    use crate::transform::{transform_all, SafetyMargins, TransformConfig};
    use ndarray::{array, Array1, Array2};

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

    fn margins(epsilon: f64, s_m: f64, m: usize, n: usize) -> SafetyMargins {
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

    /// Always allocates 0.6 of item 0 to both bidders — a constructed
    /// feasibility violation of exactly 0.2.
    struct FixedOverAllocator;

    impl AuctionRunner<f64> for FixedOverAllocator {
        fn run(&self, _bids: &ValuationProfile<f64>) -> Outcome<f64> {
            Outcome {
                allocations: array![[0.6, 0.0], [0.6, 0.0]],
                payments: array![0.1, 0.1],
                chosen: vec![None, None],
            }
        }
        fn n(&self) -> usize {
            2
        }
        fn m(&self) -> usize {
            2
        }
        fn kind(&self) -> ValuationKind {
            ValuationKind::Additive
        }
        fn v_max(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn constructed_overallocation_is_reported_exactly() {
        let report =
            check_compatibility(&FixedOverAllocator, Distribution::UniformUnit, 500, 1, 1e-7);
        assert!((report.max_overallocation - 0.2).abs() < 1e-12);
        assert_eq!(report.violation_count, 500);
        assert!((report.violation_rate - 1.0).abs() < 1e-12);
        assert!(!report.pass);
    }

    fn posted_price_mechanism() -> Mechanism<f64> {
        let net = constant_net(1, 1, 2, &[25.0], &[0.5]);
        let grid = make_grid(1.0, 1, 1, 5);
        Mechanism::untransformed(net, grid, margins(0.25, 0.02, 1, 1)).unwrap()
    }

    #[test]
    fn posted_price_mechanism_has_no_regret() {
        let mech = posted_price_mechanism();
        let report = estimate_regret(&mech, Distribution::UniformUnit, 50, 40, 3, 1e-6);
        assert!(report.max_regret <= 1e-12, "regret {}", report.max_regret);
        assert_eq!(report.positive_count, 0);
        assert_eq!(report.mean_positive_regret, 0.0);
        assert!(report.pass);
        assert_eq!(report.budget_used, 50 * 40);
    }

    #[test]
    fn compatibility_and_ir_pass_on_menu_mechanisms() {
        let mech = posted_price_mechanism();
        let compat = check_compatibility(&mech, Distribution::UniformUnit, 2000, 5, 1e-7);
        assert!(compat.pass, "{compat:?}");
        assert!(compat.max_overallocation <= 0.0);
        let ir = check_ir(&mech, Distribution::UniformUnit, 2000, 5, 1e-9);
        assert!(ir.pass, "{ir:?}");
        assert_eq!(ir.max_ir_violation, 0.0);
        assert!(ir.min_utility >= 0.0);
    }

    /// The textbook broken repair: run the raw menus, then scale each
    /// item's allocations down to fit, keeping prices. Bidders can gain by
    /// picking smaller bundles that dodge the scaling, so this fails
    /// strategy-proofness.
    struct ScaledDownRunner {
        menu: Menu<f64>,
        n: usize,
    }

    impl AuctionRunner<f64> for ScaledDownRunner {
        fn run(&self, bids: &ValuationProfile<f64>) -> Outcome<f64> {
            let m = self.menu.m();
            let mut allocations = Array2::zeros((self.n, m));
            let mut payments = Array1::zeros(self.n);
            let mut chosen = Vec::new();
            for i in 0..self.n {
                let (star, _) = best_response(&self.menu, bids.bidder(i), ValuationKind::Additive);
                allocations.row_mut(i).assign(&self.menu.bundles.row(star));
                payments[i] = self.menu.prices[star];
                chosen.push(Some(star));
            }
            for j in 0..m {
                let total: f64 = allocations.column(j).sum();
                if total > 1.0 {
                    for i in 0..self.n {
                        allocations[[i, j]] /= total;
                    }
                }
            }
            Outcome {
                allocations,
                payments,
                chosen,
            }
        }
        fn n(&self) -> usize {
            self.n
        }
        fn m(&self) -> usize {
            1
        }
        fn kind(&self) -> ValuationKind {
            ValuationKind::Additive
        }
        fn v_max(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn scaling_down_overallocations_creates_regret() {
        // Elements: big ([1.0], 0.35), small ([0.4], 0.05), opt-out. When
        // both bidders demand the big bundle each gets half of it at full
        // price; reporting a low value to grab the small bundle instead is
        // strictly better for a high-value bidder.
        let runner = ScaledDownRunner {
            menu: Menu::from_learned(array![[1.0], [0.4]], array![0.35, 0.05]),
            n: 2,
        };
        let report = estimate_regret(&runner, Distribution::UniformUnit, 50, 60, 7, 1e-6);
        assert!(
            report.max_regret > 0.01,
            "expected a found violation, got {}",
            report.max_regret
        );
        assert!(report.positive_count > 0);
        assert!(!report.pass);
    }

    /// Charges for element 0 regardless of the bid — IR fails wherever the
    /// bidder values the bundle below its price.
    struct ForcedSaleRunner {
        menu: Menu<f64>,
    }

    impl AuctionRunner<f64> for ForcedSaleRunner {
        fn run(&self, bids: &ValuationProfile<f64>) -> Outcome<f64> {
            let m = self.menu.m();
            let mut allocations = Array2::zeros((1, m));
            allocations.row_mut(0).assign(&self.menu.bundles.row(0));
            Outcome {
                allocations,
                payments: array![self.menu.prices[0]],
                chosen: vec![Some(0)],
            }
        }
        fn n(&self) -> usize {
            1
        }
        fn m(&self) -> usize {
            1
        }
        fn kind(&self) -> ValuationKind {
            ValuationKind::Additive
        }
        fn v_max(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn forced_sale_fails_the_ir_check() {
        let runner = ForcedSaleRunner {
            menu: Menu::from_learned(array![[1.0]], array![0.5]),
        };
        let report = check_ir(&runner, Distribution::UniformUnit, 2000, 9, 1e-9);
        assert!(report.min_utility < -0.3, "{report:?}");
        assert!(report.max_ir_violation > 0.3);
        assert!(!report.pass);
    }

    #[test]
    fn transformed_fixture_passes_all_checks() {
        let mut net = constant_net(2, 1, 3, &[20.0, 0.0], &[0.5, 0.2]);
        let b1 = &mut net.bidders[1];
        b1.bundle.layers.last_mut().unwrap().b.fill(-40.0);
        b1.price.layers.last_mut().unwrap().b.fill(50.0);
        let grid = ValueGrid {
            axes: vec![vec![vec![0.58, 0.62]], vec![vec![0.5]]],
            v_max: 1.0,
        };
        let mrg = margins(0.04, 0.05, 1, 2);
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 100.0,
            ..TransformConfig::default()
        };
        let table = transform_all(&net, &grid, &mrg, &config).unwrap();
        let mech = Mechanism::new(net, table, grid).unwrap();
        let cfg = VerifyConfig {
            compat_samples: 2000,
            ir_samples: 2000,
            regret_profiles: 50,
            misreport_budget: 50,
            seed: 13,
            ..VerifyConfig::default()
        };
        let report = verify_mechanism(&mech, Distribution::UniformUnit, &cfg);
        assert!(report.pass(), "{}", report.to_json());
        assert!(report.compatibility.max_overallocation <= 0.0);
        assert!(report.regret.max_regret <= 1e-9);
        assert!(report.ir.min_utility >= 0.0);

        let round = VerificationReport::from_json(&report.to_json()).unwrap();
        assert_eq!(report, round);
    }

    #[test]
    fn reports_are_deterministic_in_the_seed() {
        let mech = posted_price_mechanism();
        let a = estimate_regret(&mech, Distribution::UniformUnit, 30, 30, 21, 1e-6);
        let b = estimate_regret(&mech, Distribution::UniformUnit, 30, 30, 21, 1e-6);
        assert_eq!(a, b);
        let c = check_compatibility(&mech, Distribution::UniformUnit, 1000, 21, 1e-7);
        let d = check_compatibility(&mech, Distribution::UniformUnit, 1000, 21, 1e-7);
        assert_eq!(c, d);
    }
}
