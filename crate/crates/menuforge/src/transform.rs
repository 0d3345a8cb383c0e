//! Exact menu-compatibility enforcement by minimal price adjustment.
//!
//! A trained network gives every bidder a menu computed from the *other*
//! bidders' bids, which makes truthful bidding optimal but lets the
//! simultaneous utility-maximizing choices over-allocate items. This module
//! repairs that exactly: for each bidder (in index order) and each grid
//! point over the others' values, a mixed-integer program finds price
//! increases of minimum total magnitude after which the bidder's best
//! choice at every own-grid value is compatible with the other bidders'
//! choices, and beats every alternative by a utility gap sized so that the
//! choice cannot flip between grid points. Safety margins derived from the
//! network's certified Lipschitz constants extend the grid guarantee to the
//! whole continuous domain.
//!
//! Four accelerations keep the MILP family tractable without weakening the
//! guarantee:
//! - grid points whose choices are already compatible everywhere are
//!   skipped outright;
//! - values whose current choice is compatible and comfortably ahead keep
//!   that choice through plain linear rows instead of binaries
//!   (keep-choice), falling back to fewer pinned values if infeasible;
//! - elements whose utility is negative at every grid value can never beat
//!   the free opt-out element while prices only rise, so their binaries and
//!   rows are dropped (opt-out screening);
//! - the grid itself is coarsened where empirically measured margins allow
//!   (adaptive grid).

use crate::domain::ValuationKind;
use crate::grid::ValueGrid;
use crate::menu::{best_response, Menu};
use crate::milp::{
    solve_milp, ConstraintSense, MilpInstance, MilpStatus, ObjectiveSense, VarId,
};
use crate::nn::MenuNetwork;
use crate::scalar::Real;
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::rc::Rc;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("invalid transform configuration: {0}")]
    InvalidConfig(String),
    #[error("price adjustment failed for bidder {bidder} at others-grid index {others_index}: {message}")]
    Solver {
        bidder: usize,
        others_index: usize,
        message: String,
    },
}

// ---------------------------------------------------------------------------
// Safety margins
// ---------------------------------------------------------------------------

/// Margins that extend grid-point guarantees to the continuous domain.
///
/// Within half a grid spacing of a grid point, a bundle entry moves by at
/// most `epsilon/2 * l_a` and a utility by at most `s_m / 2`. Requiring
/// allocations to clear `1` by `s_f` and best choices to lead by `s_m` at
/// grid points therefore keeps choices stable and allocations feasible
/// everywhere in between.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyMargins {
    /// Allocation slack below 1 required at grid points.
    pub s_f: f64,
    /// Utility gap required between the best choice and every alternative.
    pub s_m: f64,
    /// Largest adjacent grid spacing (l-inf).
    pub epsilon: f64,
    /// Certified bundle-network Lipschitz bound.
    pub l_a: f64,
    /// Certified price-network Lipschitz bound.
    pub l_p: f64,
    pub m: usize,
    pub v_max: f64,
    pub n: usize,
}

/// Evaluates the margin formulas: `s_f = n·ε·L_a/2` and
/// `s_m = L_a(m·v_max·ε + m·ε²/2) + ε·L_p + ε`.
pub fn compute_safety_margins(
    epsilon: f64,
    l_a: f64,
    l_p: f64,
    m: usize,
    v_max: f64,
    n: usize,
) -> SafetyMargins {
    assert!(epsilon > 0.0, "grid spacing must be positive");
    assert!(l_a >= 0.0 && l_p >= 0.0, "Lipschitz bounds must be nonnegative");
    assert!(m >= 1 && n >= 1 && v_max > 0.0);
    let mf = m as f64;
    let s_f = n as f64 * epsilon * l_a / 2.0;
    let s_m = l_a * (mf * v_max * epsilon + mf * epsilon * epsilon / 2.0) + epsilon * l_p + epsilon;
    SafetyMargins {
        s_f,
        s_m,
        epsilon,
        l_a,
        l_p,
        m,
        v_max,
        n,
    }
}

/// Constant that deactivates a relaxed constraint: any utility difference
/// the program can encounter is dominated by it. `3·m·v_max` for additive
/// bidders, `3·v_max` for unit-demand (bundle rows then sum to at most 1).
pub fn big_m_value(m: usize, v_max: f64, kind: ValuationKind) -> f64 {
    assert!(m >= 1 && v_max > 0.0);
    match kind {
        ValuationKind::Additive => 3.0 * m as f64 * v_max,
        ValuationKind::UnitDemand => 3.0 * v_max,
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Acceleration strategy switches for the price adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransformConfig {
    /// Skip grid points whose best responses are already compatible at
    /// every own-grid value.
    pub zero_violation_skip: bool,
    /// Percentage (0–100) of compatible-choice grid values whose current
    /// choice is pinned with linear rows instead of binaries; ranked by
    /// best-versus-second-best utility gap, largest gaps pinned first.
    pub keep_choice_percent: f64,
    /// Drop binaries and rows for elements whose utility is at most
    /// `-ir_screen_tol` at every own-grid value; sound because nonnegative
    /// price adjustments keep them below the zero-utility opt-out.
    pub ir_screening: bool,
    /// Negativity slack for screening.
    pub ir_screen_tol: f64,
    /// Allow price decreases (each adjustment splits into nonnegative
    /// up/down parts). Incompatible with screening, whose argument needs
    /// prices that only rise.
    pub signed_adjustments: bool,
    /// Override for the constraint-deactivation constant; `None` derives it
    /// from the valuation kind.
    pub big_m: Option<f64>,
    /// Clip the others' aggregate allocation at `1 − n·s_f` instead of
    /// `1 − s_f` (earlier compatibility-rule variant kept for comparison).
    pub scale_clip_by_bidders: bool,
}

impl Default for TransformConfig {
    fn default() -> Self {
        Self {
            zero_violation_skip: true,
            keep_choice_percent: 95.0,
            ir_screening: true,
            ir_screen_tol: 1e-9,
            signed_adjustments: false,
            big_m: None,
            scale_clip_by_bidders: false,
        }
    }
}

impl TransformConfig {
    pub fn validate(&self) -> Result<(), TransformError> {
        if !(0.0..=100.0).contains(&self.keep_choice_percent) {
            return Err(TransformError::InvalidConfig(format!(
                "keep_choice_percent must be within [0, 100], got {}",
                self.keep_choice_percent
            )));
        }
        if !(self.ir_screen_tol > 0.0) {
            return Err(TransformError::InvalidConfig(format!(
                "ir_screen_tol must be positive, got {}",
                self.ir_screen_tol
            )));
        }
        if let Some(m) = self.big_m {
            if !(m > 0.0) {
                return Err(TransformError::InvalidConfig(format!(
                    "big_m must be positive, got {m}"
                )));
            }
        }
        if self.signed_adjustments && self.ir_screening {
            return Err(TransformError::InvalidConfig(
                "signed adjustments can lower prices, which breaks the screening argument; \
                 disable ir_screening or signed_adjustments"
                    .into(),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Classification
// ---------------------------------------------------------------------------

/// Per-element compatibility with the other bidders' resolved choices at
/// one own-grid value. The opt-out element is always compatible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub compatible: Vec<bool>,
}

impl Classification {
    pub fn compatible_set(&self) -> Vec<usize> {
        (0..self.compatible.len()).filter(|&k| self.compatible[k]).collect()
    }

    pub fn incompatible_set(&self) -> Vec<usize> {
        (0..self.compatible.len()).filter(|&k| !self.compatible[k]).collect()
    }
}

/// Splits a menu into elements that fit beside the other bidders' chosen
/// allocations and elements that would over-allocate.
///
/// Element `k` is compatible iff, componentwise,
/// `alpha_k + min(cap, others_total) <= cap` with `cap = 1 − s_f`
/// (or `1 − n·s_f` under the scaled variant). The clip keeps the rule
/// satisfiable where the others already saturate an item: a zero entry
/// stays compatible there, anything positive does not. The opt-out element
/// is compatible by definition.
pub fn classify_elements<R: Real>(
    menu: &Menu<R>,
    others_total: &[f64],
    s_f: f64,
    n: usize,
    scale_clip_by_bidders: bool,
) -> Classification {
    let m = menu.m();
    assert_eq!(others_total.len(), m, "aggregate allocation length mismatch");
    let cap = 1.0 - if scale_clip_by_bidders { n as f64 * s_f } else { s_f };
    let k_cnt = menu.len();
    let mut compatible = vec![true; k_cnt];
    for k in 0..k_cnt - 1 {
        let row = menu.bundles.row(k);
        for j in 0..m {
            if row[j].as_f64() + others_total[j].min(cap) > cap {
                compatible[k] = false;
                break;
            }
        }
    }
    Classification { compatible }
}

/// Raw utility of every menu element at every own-grid value: `L × K` with
/// `u[l][k] = v_l · alpha_k − beta_k`.
pub fn utilities_on_grid<R: Real>(
    menu: &Menu<R>,
    grid: &ValueGrid<R>,
    bidder: usize,
) -> Array2<f64> {
    let l_cnt = grid.own_count(bidder);
    let k_cnt = menu.len();
    let mut u = Array2::zeros((l_cnt, k_cnt));
    for l in 0..l_cnt {
        let v = grid.own_point(bidder, l);
        let util = menu.utilities(v.view());
        for k in 0..k_cnt {
            u[[l, k]] = util[k].as_f64();
        }
    }
    u
}

/// Index of the row maximum; ties break toward the lowest index (the same
/// rule the deployed choice uses).
fn argmax_row(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for k in 1..row.len() {
        if row[k] > row[best] {
            best = k;
        }
    }
    best
}

/// Own-grid indices whose current choice gets pinned: among values whose
/// choice is compatible, ranked by ascending best-versus-second-best gap,
/// the top `percent` (largest gaps — price nudges are least likely to flip
/// decisively-ahead choices). Returned ascending.
fn select_keep_choice(
    u: &Array2<f64>,
    classes: &[Classification],
    choices: &[usize],
    percent: f64,
) -> Vec<usize> {
    let mut qualifying: Vec<(f64, usize)> = Vec::new();
    for (l, class) in classes.iter().enumerate() {
        let star = choices[l];
        if !class.compatible[star] {
            continue;
        }
        let row = u.row(l);
        let mut second = f64::NEG_INFINITY;
        for k in 0..row.len() {
            if k != star && row[k] > second {
                second = row[k];
            }
        }
        qualifying.push((row[star] - second, l));
    }
    qualifying.sort_by(|a, b| a.partial_cmp(b).expect("finite utility gaps"));
    let count = (qualifying.len() as f64 * percent.clamp(0.0, 100.0) / 100.0).floor() as usize;
    let mut kept: Vec<usize> = qualifying[qualifying.len() - count..]
        .iter()
        .map(|&(_, l)| l)
        .collect();
    kept.sort_unstable();
    kept
}

// ---------------------------------------------------------------------------
// MILP construction
// ---------------------------------------------------------------------------

/// Where element `k`'s price adjustment lives in the program.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeltaVar {
    /// No variable: the opt-out price is pinned at 0 and screened elements
    /// are never adjusted.
    Fixed,
    /// Single nonnegative increase.
    Nonneg(VarId),
    /// Signed adjustment split into nonnegative up/down parts.
    Signed { up: VarId, down: VarId },
}

/// A built price-adjustment program plus the bookkeeping needed to read a
/// solution back and to re-verify the shortcuts it took.
#[derive(Debug, Clone)]
pub struct MilpBuild {
    pub instance: MilpInstance,
    /// Per-element adjustment variables (length K).
    pub delta_vars: Vec<DeltaVar>,
    /// Elements dropped by opt-out screening (ascending).
    pub screened: Vec<usize>,
    /// Own-grid indices handled by keep-choice rows (ascending).
    pub kc_values: Vec<usize>,
    /// Keep-choice percentage this build used.
    pub kc_percent: f64,
    /// Deactivation constant actually used (the configured value, widened
    /// if the menu's utility spread exceeds it).
    pub big_m_used: f64,
}

impl MilpBuild {
    /// Reads the K price adjustments out of an optimal solution. Nonnegative
    /// variables are clamped at zero to absorb solver round-off.
    pub fn extract_deltas(&self, values: &[f64]) -> Vec<f64> {
        self.delta_vars
            .iter()
            .map(|dv| match *dv {
                DeltaVar::Fixed => 0.0,
                DeltaVar::Nonneg(id) => values[id].max(0.0),
                DeltaVar::Signed { up, down } => values[up].max(0.0) - values[down].max(0.0),
            })
            .collect()
    }
}

fn push_delta(coeffs: &mut Vec<(VarId, f64)>, dv: DeltaVar, sign: f64) {
    match dv {
        DeltaVar::Fixed => {}
        DeltaVar::Nonneg(id) => coeffs.push((id, sign)),
        DeltaVar::Signed { up, down } => {
            coeffs.push((up, sign));
            coeffs.push((down, -sign));
        }
    }
}

/// Builds the minimum-total-price-adjustment program for one bidder at one
/// grid point of the others' values.
///
/// Variables: one adjustment per learned element (screened elements and the
/// opt-out are fixed at 0), one utility variable per unpinned own-grid
/// value, and one selector binary per (unpinned value, compatible
/// unscreened element).
///
/// Rows per unpinned value `l`: for each compatible unscreened `k`, the
/// sandwich `u_lk − Δβ_k + (1−z_lk)·s_m ≤ U_l ≤ u_lk − Δβ_k + (1−z_lk)·M`
/// (the selected element's utility is met exactly; every other compatible
/// element trails by `s_m`); exactly one selector on; and for each
/// incompatible unscreened `k'`, `U_l ≥ u_lk' − Δβ_k' + s_m`. Pinned values
/// contribute `Δβ_k* − Δβ_k ≤ (u_lk* − u_lk) − s_m` for every alternative
/// `k`, collapsed across values sharing the same pinned element by taking
/// the tightest right-hand side (an exact reduction). The margin keeps
/// pinned choices ahead by the same gap the sandwich enforces. A feasible
/// point always exists without pins: select the opt-out everywhere and
/// raise every compatible element's price above its best utility.
#[allow(clippy::too_many_arguments)]
pub fn build_price_milp<R: Real>(
    menu: &Menu<R>,
    grid: &ValueGrid<R>,
    bidder: usize,
    classes: &[Classification],
    margins: &SafetyMargins,
    big_m: f64,
    config: &TransformConfig,
    kc_percent: f64,
) -> MilpBuild {
    let u = utilities_on_grid(menu, grid, bidder);
    let (l_cnt, k_cnt) = u.dim();
    assert_eq!(classes.len(), l_cnt, "one classification per own-grid value");
    let opt_out = k_cnt - 1;
    let s_m = margins.s_m;

    // Widen the deactivation constant when the menu's utility spread
    // exceeds what the configured value assumed; the derived defaults cover
    // prices in the economically relevant range only.
    let mut u_min = f64::INFINITY;
    let mut u_max = f64::NEG_INFINITY;
    for &x in u.iter() {
        u_min = u_min.min(x);
        u_max = u_max.max(x);
    }
    let big_m_used = big_m.max((u_max - u_min) + u_max.max(0.0) + s_m + 1e-6);

    let screened_mask: Vec<bool> = (0..k_cnt)
        .map(|k| {
            config.ir_screening
                && !config.signed_adjustments
                && k != opt_out
                && (0..l_cnt).all(|l| u[[l, k]] <= -config.ir_screen_tol)
        })
        .collect();

    let choices: Vec<usize> = (0..l_cnt).map(|l| argmax_row(u.row(l))).collect();
    let kc_values = select_keep_choice(&u, classes, &choices, kc_percent);
    let mut pinned = vec![false; l_cnt];
    for &l in &kc_values {
        pinned[l] = true;
    }

    let mut inst = MilpInstance::new();

    let delta_vars: Vec<DeltaVar> = (0..k_cnt)
        .map(|k| {
            if k == opt_out || screened_mask[k] {
                return DeltaVar::Fixed;
            }
            let ub = (0..l_cnt).fold(0.0f64, |acc, l| acc.max(u[[l, k]])) + big_m_used;
            if config.signed_adjustments {
                let up = inst.add_continuous(format!("dbeta_pos_{k}"), 0.0, ub);
                let down = inst.add_continuous(format!("dbeta_neg_{k}"), 0.0, ub);
                DeltaVar::Signed { up, down }
            } else {
                DeltaVar::Nonneg(inst.add_continuous(format!("dbeta_{k}"), 0.0, ub))
            }
        })
        .collect();

    let mut u_vars: Vec<Option<VarId>> = vec![None; l_cnt];
    let mut z_vars: Vec<Vec<(usize, VarId)>> = vec![Vec::new(); l_cnt];
    for l in 0..l_cnt {
        if pinned[l] {
            continue;
        }
        let row = u.row(l);
        let lo = row.iter().fold(0.0f64, |a, &x| a.min(x)) - big_m_used;
        let hi = row.iter().fold(0.0f64, |a, &x| a.max(x)) + big_m_used;
        u_vars[l] = Some(inst.add_continuous(format!("U_{l}"), lo, hi));
        for k in 0..k_cnt {
            if classes[l].compatible[k] && !screened_mask[k] {
                z_vars[l].push((k, inst.add_binary(format!("z_{l}_{k}"))));
            }
        }
    }

    for l in 0..l_cnt {
        if pinned[l] {
            continue;
        }
        let u_l = u_vars[l].expect("utility variable exists for unpinned value");
        for &(k, z) in &z_vars[l] {
            let mut coeffs = vec![(u_l, 1.0)];
            push_delta(&mut coeffs, delta_vars[k], 1.0);
            coeffs.push((z, s_m));
            inst.add_constraint(coeffs, ConstraintSense::Ge, u[[l, k]] + s_m);

            let mut coeffs = vec![(u_l, 1.0)];
            push_delta(&mut coeffs, delta_vars[k], 1.0);
            coeffs.push((z, big_m_used));
            inst.add_constraint(coeffs, ConstraintSense::Le, u[[l, k]] + big_m_used);
        }
        let one_hot: Vec<(VarId, f64)> = z_vars[l].iter().map(|&(_, z)| (z, 1.0)).collect();
        inst.add_constraint(one_hot, ConstraintSense::Eq, 1.0);
        for k in 0..k_cnt {
            if !classes[l].compatible[k] && !screened_mask[k] {
                let mut coeffs = vec![(u_l, 1.0)];
                push_delta(&mut coeffs, delta_vars[k], 1.0);
                inst.add_constraint(coeffs, ConstraintSense::Ge, u[[l, k]] + s_m);
            }
        }
    }

    // Keep-choice rows, collapsed to the tightest bound per (pinned
    // element, alternative) pair.
    let mut kc_rhs: HashMap<(usize, usize), f64> = HashMap::new();
    for &l in &kc_values {
        let star = choices[l];
        for k in 0..k_cnt {
            if k == star || screened_mask[k] {
                continue;
            }
            let rhs = (u[[l, star]] - u[[l, k]]) - s_m;
            kc_rhs
                .entry((star, k))
                .and_modify(|r| *r = r.min(rhs))
                .or_insert(rhs);
        }
    }
    let mut kc_pairs: Vec<((usize, usize), f64)> = kc_rhs.into_iter().collect();
    kc_pairs.sort_by(|a, b| a.0.cmp(&b.0));
    for ((star, k), rhs) in kc_pairs {
        let mut coeffs = Vec::new();
        push_delta(&mut coeffs, delta_vars[star], 1.0);
        push_delta(&mut coeffs, delta_vars[k], -1.0);
        inst.add_constraint(coeffs, ConstraintSense::Le, rhs);
    }

    let mut objective = Vec::new();
    for dv in &delta_vars {
        match *dv {
            DeltaVar::Fixed => {}
            DeltaVar::Nonneg(id) => objective.push((id, 1.0)),
            DeltaVar::Signed { up, down } => {
                objective.push((up, 1.0));
                objective.push((down, 1.0));
            }
        }
    }
    inst.set_objective(ObjectiveSense::Minimize, objective);
    debug_assert!(inst.validate().is_ok(), "constructed program well-formed");

    let screened = (0..k_cnt).filter(|&k| screened_mask[k]).collect();
    MilpBuild {
        instance: inst,
        delta_vars,
        screened,
        kc_values,
        kc_percent,
        big_m_used,
    }
}

// ---------------------------------------------------------------------------
// Adjustment table
// ---------------------------------------------------------------------------

/// Price adjustments for one bidder at one others-grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentEntry {
    /// Flat index into the bidder's others-grid.
    pub others_index: usize,
    /// The grid point itself, for self-contained serialized tables.
    pub grid_point: Vec<f64>,
    /// Per-element price increases (length K; opt-out entry 0).
    pub delta: Vec<f64>,
}

/// Size and effort record for one solved program.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpPointStats {
    pub bidder: usize,
    pub others_index: usize,
    pub constraints: usize,
    pub binaries: usize,
    pub continuous: usize,
    /// Keep-choice percentage the accepted build used.
    pub kc_percent: f64,
    /// Infeasible keep-choice levels stepped through before acceptance.
    pub kc_retries: usize,
    /// Elements dropped by opt-out screening in the accepted build.
    pub screened: Vec<usize>,
    pub objective: f64,
    pub nodes: usize,
    pub solve_ms: f64,
}

/// Aggregates over one full transformation run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformStats {
    /// Bidders whose menus were adjusted (trailing bidders that cannot
    /// cause over-allocation are skipped).
    pub bidders_processed: usize,
    /// Others-grid points visited across processed bidders.
    pub grid_points_total: usize,
    pub milps_solved: usize,
    /// Points skipped because every own-grid choice was already compatible.
    pub points_skipped: usize,
    pub total_constraints: usize,
    pub total_binaries: usize,
    pub total_runtime_ms: f64,
    pub per_milp: Vec<MilpPointStats>,
}

/// The complete transformation output: per-bidder sparse maps from
/// others-grid index to price increases, plus the margins and switches that
/// produced them. Grid points without an entry need no adjustment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceAdjustmentTable {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    /// Per bidder, ascending by `others_index`.
    pub bidders: Vec<Vec<AdjustmentEntry>>,
    pub margins: SafetyMargins,
    pub config: TransformConfig,
    pub stats: TransformStats,
}

impl PriceAdjustmentTable {
    /// Price increases for `bidder` at `others_index`, if any were needed.
    pub fn delta(&self, bidder: usize, others_index: usize) -> Option<&[f64]> {
        let entries = &self.bidders[bidder];
        entries
            .binary_search_by_key(&others_index, |e| e.others_index)
            .ok()
            .map(|at| entries[at].delta.as_slice())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Bidder `bidder`'s menu at `others_index` with its adjustments (if
    /// any) applied.
    pub fn adjusted_menu<R: Real>(
        &self,
        net: &MenuNetwork<R>,
        grid: &ValueGrid<R>,
        bidder: usize,
        others_index: usize,
    ) -> Menu<R> {
        let menu = net.forward_menu(bidder, grid.others_point(bidder, others_index).view());
        match self.delta(bidder, others_index) {
            Some(delta) => {
                let deltas: Vec<R> = delta.iter().map(|&d| R::real(d)).collect();
                menu.with_price_deltas(&deltas)
            }
            None => menu,
        }
    }
}

// ---------------------------------------------------------------------------
// Sequential per-bidder transformation
// ---------------------------------------------------------------------------

/// Bidders that actually need price adjustments. A single bidder can never
/// over-allocate (bundles live in [0,1]^m), so nothing needs transforming.
/// With two or more, every bidder must be processed: the joint feasibility
/// guarantee at each grid point comes from the *last* bidder's pass (it is
/// the only one whose constraints see all other menus in final form), and
/// the utility-margin property that pins choices between grid points must
/// hold for every bidder, not just the early ones.
fn bidders_to_process(n: usize) -> usize {
    match n {
        0 | 1 => 0,
        _ => n,
    }
}

/// Everything the program builder needs about one (bidder, others-point):
/// raw utilities, per-value classifications against the other bidders'
/// resolved choices, and the current choices.
struct PointAnalysis {
    utilities: Array2<f64>,
    classes: Vec<Classification>,
    choices: Vec<usize>,
    all_compatible: bool,
}

/// Lazily-built menus for resolving other bidders' choices during bidder
/// `processing`'s pass: already-processed bidders appear with their final
/// adjustments, later bidders raw.
struct MenuCache<R: Real> {
    per_bidder: Vec<HashMap<usize, Rc<Menu<R>>>>,
    processing: usize,
}

impl<R: Real> MenuCache<R> {
    fn new(n: usize, processing: usize) -> Self {
        Self {
            per_bidder: vec![HashMap::new(); n],
            processing,
        }
    }

    fn menu(
        &mut self,
        net: &MenuNetwork<R>,
        grid: &ValueGrid<R>,
        table: &PriceAdjustmentTable,
        bidder: usize,
        others_index: usize,
    ) -> Rc<Menu<R>> {
        let adjusted = bidder < self.processing;
        Rc::clone(
            self.per_bidder[bidder]
                .entry(others_index)
                .or_insert_with(|| {
                    let menu = if adjusted {
                        table.adjusted_menu(net, grid, bidder, others_index)
                    } else {
                        net.forward_menu(bidder, grid.others_point(bidder, others_index).view())
                    };
                    Rc::new(menu)
                }),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn analyze_point<R: Real>(
    net: &MenuNetwork<R>,
    grid: &ValueGrid<R>,
    table: &PriceAdjustmentTable,
    bidder: usize,
    others_index: usize,
    menu_i: &Menu<R>,
    margins: &SafetyMargins,
    config: &TransformConfig,
    cache: &mut MenuCache<R>,
) -> PointAnalysis {
    let n = grid.n();
    let m = grid.m();
    let l_cnt = grid.own_count(bidder);
    let utilities = utilities_on_grid(menu_i, grid, bidder);
    let others = grid.others_point(bidder, others_index);
    let others: Vec<R> = others.to_vec();

    let mut classes = Vec::with_capacity(l_cnt);
    let mut choices = Vec::with_capacity(l_cnt);
    let mut all_compatible = true;
    let mut ordered = vec![R::zero(); (n - 1) * m];
    for l in 0..l_cnt {
        let v_i = grid.own_point(bidder, l);
        let mut totals = vec![0.0f64; m];
        for j in 0..n {
            if j == bidder {
                continue;
            }
            // Bidder j's view of the others: everyone but j in bidder
            // order, with bidder i's row set to the current own-grid value
            // and the rest taken from the others-point (whose flat layout
            // skips bidder i).
            let mut slot = 0;
            for p in 0..n {
                if p == j {
                    continue;
                }
                let src: &[R] = if p == bidder {
                    v_i.as_slice().expect("contiguous own point")
                } else {
                    let q = if p < bidder { p } else { p - 1 };
                    &others[q * m..(q + 1) * m]
                };
                ordered[slot * m..(slot + 1) * m].copy_from_slice(src);
                slot += 1;
            }
            let oidx = grid.nearest_others(j, &ordered);
            let menu_j = cache.menu(net, grid, table, j, oidx);
            let q = if j < bidder { j } else { j - 1 };
            let v_j = ArrayView1::from(&others[q * m..(q + 1) * m]);
            let (star, _) = best_response(&menu_j, v_j, net.kind);
            let row = menu_j.bundles.row(star);
            for item in 0..m {
                totals[item] += row[item].as_f64();
            }
        }
        let class = classify_elements(menu_i, &totals, margins.s_f, n, config.scale_clip_by_bidders);
        let choice = argmax_row(utilities.row(l));
        all_compatible &= class.compatible[choice];
        classes.push(class);
        choices.push(choice);
    }
    PointAnalysis {
        utilities,
        classes,
        choices,
        all_compatible,
    }
}

/// Runs the full sequential price adjustment: bidders in increasing index,
/// each against the already-adjusted menus of its predecessors, one program
/// per others-grid point (skipped where choices are already compatible
/// everywhere). Keep-choice infeasibility retries with 5 points less
/// pinning until feasible (0% always is).
pub fn transform_all<R: Real>(
    net: &MenuNetwork<R>,
    grid: &ValueGrid<R>,
    margins: &SafetyMargins,
    config: &TransformConfig,
) -> Result<PriceAdjustmentTable, TransformError> {
    config.validate()?;
    if net.n != grid.n() || net.m != grid.m() {
        return Err(TransformError::InvalidConfig(format!(
            "network is {}x{} but grid is {}x{}",
            net.n,
            net.m,
            grid.n(),
            grid.m()
        )));
    }
    let started = Instant::now();
    let big_m = config
        .big_m
        .unwrap_or_else(|| big_m_value(net.m, grid.v_max.as_f64(), net.kind));
    let mut table = PriceAdjustmentTable {
        n: net.n,
        m: net.m,
        k: net.k,
        bidders: vec![Vec::new(); net.n],
        margins: *margins,
        config: config.clone(),
        stats: TransformStats::default(),
    };
    let processed = bidders_to_process(net.n);
    table.stats.bidders_processed = processed;

    for bidder in 0..processed {
        let mut cache = MenuCache::new(net.n, bidder);
        for o in 0..grid.others_count(bidder) {
            table.stats.grid_points_total += 1;
            let menu_i = net.forward_menu(bidder, grid.others_point(bidder, o).view());
            let analysis =
                analyze_point(net, grid, &table, bidder, o, &menu_i, margins, config, &mut cache);
            if config.zero_violation_skip && analysis.all_compatible {
                table.stats.points_skipped += 1;
                continue;
            }
            let mut kc_percent = config.keep_choice_percent.clamp(0.0, 100.0);
            let mut retries = 0usize;
            loop {
                let build = build_price_milp(
                    &menu_i,
                    grid,
                    bidder,
                    &analysis.classes,
                    margins,
                    big_m,
                    config,
                    kc_percent,
                );
                let solve_started = Instant::now();
                let sol = solve_milp(&build.instance).map_err(|e| TransformError::Solver {
                    bidder,
                    others_index: o,
                    message: e.to_string(),
                })?;
                let solve_ms = solve_started.elapsed().as_secs_f64() * 1e3;
                match sol.status {
                    MilpStatus::Optimal => {
                        let delta = build.extract_deltas(&sol.values);
                        table.bidders[bidder].push(AdjustmentEntry {
                            others_index: o,
                            grid_point: grid
                                .others_point(bidder, o)
                                .iter()
                                .map(|x| x.as_f64())
                                .collect(),
                            delta,
                        });
                        table.stats.milps_solved += 1;
                        table.stats.total_constraints += build.instance.num_constraints();
                        table.stats.total_binaries += build.instance.num_binaries();
                        table.stats.per_milp.push(MilpPointStats {
                            bidder,
                            others_index: o,
                            constraints: build.instance.num_constraints(),
                            binaries: build.instance.num_binaries(),
                            continuous: build.instance.num_vars()
                                - build.instance.num_binaries(),
                            kc_percent,
                            kc_retries: retries,
                            screened: build.screened.clone(),
                            objective: sol.objective,
                            nodes: sol.nodes,
                            solve_ms,
                        });
                        break;
                    }
                    MilpStatus::Infeasible if kc_percent > 0.0 => {
                        kc_percent = (kc_percent - 5.0).max(0.0);
                        retries += 1;
                    }
                    MilpStatus::Infeasible => {
                        return Err(TransformError::Solver {
                            bidder,
                            others_index: o,
                            message: "program infeasible with no keep-choice rows; \
                                      the opt-out fallback should always be feasible"
                                .into(),
                        });
                    }
                    MilpStatus::Unbounded => {
                        return Err(TransformError::Solver {
                            bidder,
                            others_index: o,
                            message: "program unbounded despite finite variable bounds".into(),
                        });
                    }
                }
            }
        }
    }
    table.stats.total_runtime_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(table)
}

/// Builds (without solving) the price program for one `(bidder,
/// others-grid-point)` pair against the raw network — the program the
/// sequential pass would face with no predecessors adjusted. Intended for
/// LP-file export and inspection.
pub fn build_point_milp<R: Real>(
    net: &MenuNetwork<R>,
    grid: &ValueGrid<R>,
    margins: &SafetyMargins,
    config: &TransformConfig,
    bidder: usize,
    others_index: usize,
) -> Result<MilpBuild, TransformError> {
    config.validate()?;
    if net.n != grid.n() || net.m != grid.m() {
        return Err(TransformError::InvalidConfig(format!(
            "network is {}x{} but grid is {}x{}",
            net.n,
            net.m,
            grid.n(),
            grid.m()
        )));
    }
    if bidder >= net.n {
        return Err(TransformError::InvalidConfig(format!(
            "bidder {bidder} out of range for {} bidders",
            net.n
        )));
    }
    if others_index >= grid.others_count(bidder) {
        return Err(TransformError::InvalidConfig(format!(
            "others-grid index {others_index} out of range for {} points",
            grid.others_count(bidder)
        )));
    }
    let empty = PriceAdjustmentTable {
        n: net.n,
        m: net.m,
        k: net.k,
        bidders: vec![Vec::new(); net.n],
        margins: *margins,
        config: config.clone(),
        stats: TransformStats::default(),
    };
    let mut cache = MenuCache::new(net.n, bidder);
    let menu_i = net.forward_menu(bidder, grid.others_point(bidder, others_index).view());
    let analysis = analyze_point(
        net,
        grid,
        &empty,
        bidder,
        others_index,
        &menu_i,
        margins,
        config,
        &mut cache,
    );
    let big_m = config
        .big_m
        .unwrap_or_else(|| big_m_value(net.m, grid.v_max.as_f64(), net.kind));
    Ok(build_price_milp(
        &menu_i,
        grid,
        bidder,
        &analysis.classes,
        margins,
        big_m,
        config,
        config.keep_choice_percent.clamp(0.0, 100.0),
    ))
}

// ---------------------------------------------------------------------------
// Re-verification scans
// ---------------------------------------------------------------------------

/// Direct re-check of everything the transformation claims, without
/// trusting the solver: skipped points really were compatible, adjusted
/// points have compatible choices that lead every unscreened alternative by
/// the margin, screened elements really are negative everywhere, pinned
/// choices really survived, and adjustments are nonnegative when screening
/// was on.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableVerification {
    pub points_checked: usize,
    pub skipped_points: usize,
    /// Skipped points where some own-grid choice was not compatible.
    pub skip_violations: usize,
    pub adjusted_points: usize,
    /// Adjusted-point own-grid values whose post-adjustment choice is not
    /// compatible with the others' choices.
    pub choice_violations: usize,
    /// Adjusted-point own-grid values where the choice leads an unscreened
    /// alternative by less than `s_m − 1e-9`.
    pub margin_violations: usize,
    /// Smallest post-adjustment lead observed over unscreened alternatives.
    pub min_margin: f64,
    pub screened_checked: usize,
    /// Screened elements with a nonnegative utility somewhere.
    pub screen_violations: usize,
    pub kc_checked: usize,
    /// Pinned values whose post-adjustment choice changed.
    pub kc_violations: usize,
    /// Most negative adjustment entry (should be ≥ 0 without signed mode).
    pub min_delta: f64,
}

impl TableVerification {
    pub fn clean(&self) -> bool {
        self.skip_violations == 0
            && self.choice_violations == 0
            && self.margin_violations == 0
            && self.screen_violations == 0
            && self.kc_violations == 0
    }
}

/// Re-derives every processed (bidder, others-point) exactly as the
/// transformation saw it and checks the resulting table against the
/// guarantees it is supposed to provide.
pub fn verify_table<R: Real>(
    net: &MenuNetwork<R>,
    grid: &ValueGrid<R>,
    table: &PriceAdjustmentTable,
) -> TableVerification {
    let mut report = TableVerification {
        min_margin: f64::INFINITY,
        min_delta: f64::INFINITY,
        ..Default::default()
    };
    let margins = &table.margins;
    let config = &table.config;
    let mut milp_stats: HashMap<(usize, usize), &MilpPointStats> = HashMap::new();
    for s in &table.stats.per_milp {
        milp_stats.insert((s.bidder, s.others_index), s);
    }

    for bidder in 0..table.stats.bidders_processed {
        let mut cache = MenuCache::new(net.n, bidder);
        for o in 0..grid.others_count(bidder) {
            report.points_checked += 1;
            let menu_i = net.forward_menu(bidder, grid.others_point(bidder, o).view());
            let analysis =
                analyze_point(net, grid, table, bidder, o, &menu_i, margins, config, &mut cache);
            let l_cnt = analysis.utilities.nrows();
            let k_cnt = analysis.utilities.ncols();
            let Some(delta) = table.delta(bidder, o) else {
                report.skipped_points += 1;
                if !analysis.all_compatible {
                    report.skip_violations += 1;
                }
                continue;
            };
            report.adjusted_points += 1;
            for &d in delta {
                report.min_delta = report.min_delta.min(d);
            }
            let stats = milp_stats
                .get(&(bidder, o))
                .copied()
                .expect("every adjusted point has recorded stats");
            let mut screened_mask = vec![false; k_cnt];
            for &k in &stats.screened {
                screened_mask[k] = true;
            }
            report.screened_checked += stats.screened.len();
            for &k in &stats.screened {
                let max_u = (0..l_cnt).fold(f64::NEG_INFINITY, |a, l| {
                    a.max(analysis.utilities[[l, k]])
                });
                if max_u >= 0.0 {
                    report.screen_violations += 1;
                }
            }
            let adjusted = Array2::from_shape_fn((l_cnt, k_cnt), |(l, k)| {
                analysis.utilities[[l, k]] - delta[k]
            });
            let kc = select_keep_choice(
                &analysis.utilities,
                &analysis.classes,
                &analysis.choices,
                stats.kc_percent,
            );
            report.kc_checked += kc.len();
            let mut kc_mask = vec![false; l_cnt];
            for &l in &kc {
                kc_mask[l] = true;
            }
            for l in 0..l_cnt {
                let row = adjusted.row(l);
                let star = argmax_row(row);
                if !analysis.classes[l].compatible[star] {
                    report.choice_violations += 1;
                }
                let mut lead = f64::INFINITY;
                for k in 0..k_cnt {
                    if k != star && !screened_mask[k] {
                        lead = lead.min(row[star] - row[k]);
                    }
                }
                report.min_margin = report.min_margin.min(lead);
                if lead < margins.s_m - 1e-9 {
                    report.margin_violations += 1;
                }
                if kc_mask[l] && star != analysis.choices[l] {
                    report.kc_violations += 1;
                }
            }
        }
    }
    report
}

/// Worst componentwise over-allocation of the deployed (adjusted) choices
/// over every full grid point: max over points and items of
/// `Σ_i alpha_i − 1` (≤ 0 means feasible everywhere on the grid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointGridCheck {
    pub points: usize,
    pub max_overallocation: f64,
}

pub fn verify_joint_grid<R: Real>(
    net: &MenuNetwork<R>,
    grid: &ValueGrid<R>,
    table: &PriceAdjustmentTable,
) -> JointGridCheck {
    let n = grid.n();
    let m = grid.m();
    // Adjusted menus for everyone (entries exist only for processed bidders).
    let mut cache: Vec<HashMap<usize, Rc<Menu<R>>>> = vec![HashMap::new(); n];
    let dims: Vec<usize> = (0..n).map(|i| grid.own_count(i)).collect();
    let total: usize = dims.iter().product();
    let mut own_idx = vec![0usize; n];
    let mut max_over = f64::NEG_INFINITY;
    let mut flat = vec![R::zero(); (n - 1) * m];
    for _ in 0..total {
        let points: Vec<ndarray::Array1<R>> =
            (0..n).map(|i| grid.own_point(i, own_idx[i])).collect();
        let mut sums = vec![0.0f64; m];
        for i in 0..n {
            let mut slot = 0;
            for p in 0..n {
                if p == i {
                    continue;
                }
                flat[slot * m..(slot + 1) * m]
                    .copy_from_slice(points[p].as_slice().expect("contiguous"));
                slot += 1;
            }
            let oidx = grid.nearest_others(i, &flat);
            let menu = Rc::clone(cache[i].entry(oidx).or_insert_with(|| {
                Rc::new(table.adjusted_menu(net, grid, i, oidx))
            }));
            let (star, _) = best_response(&menu, points[i].view(), net.kind);
            let row = menu.bundles.row(star);
            for j in 0..m {
                sums[j] += row[j].as_f64();
            }
        }
        for j in 0..m {
            max_over = max_over.max(sums[j] - 1.0);
        }
        // Odometer over joint indices, last bidder fastest.
        for i in (0..n).rev() {
            own_idx[i] += 1;
            if own_idx[i] < dims[i] {
                break;
            }
            own_idx[i] = 0;
        }
    }
    JointGridCheck {
        points: total,
        max_overallocation: max_over,
    }
}

// ---------------------------------------------------------------------------
// Adaptive grid
// ---------------------------------------------------------------------------

/// Empirically measured slack at every full grid point of the raw learned
/// mechanism: how far the joint allocation stays below 1, and the smallest
/// best-versus-second utility gap over bidders. Bidders preferring the
/// opt-out are exempt from the gap (their choice flipping toward nothing
/// cannot over-allocate while prices only rise), recorded as infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMargins {
    /// Per (bidder, item) axis lengths, bidder-major, defining the flat
    /// joint-point layout (last axis fastest).
    pub dims: Vec<usize>,
    /// `1 − max_item Σ_i alpha_i` per joint point.
    pub slack_f: Vec<f64>,
    /// Min over non-exempt bidders of the best-versus-second gap.
    pub gap_m: Vec<f64>,
}

/// Scans every full grid point of the raw network's choices.
pub fn empirical_margins<R: Real>(net: &MenuNetwork<R>, grid: &ValueGrid<R>) -> EmpiricalMargins {
    let n = grid.n();
    let m = grid.m();
    let dims: Vec<usize> = (0..n)
        .flat_map(|i| (0..m).map(move |j| grid.axis(i, j).len()))
        .collect();
    let own_dims: Vec<usize> = (0..n).map(|i| grid.own_count(i)).collect();
    let total: usize = own_dims.iter().product();
    let mut cache: Vec<HashMap<usize, Rc<Menu<R>>>> = vec![HashMap::new(); n];
    let mut slack_f = Vec::with_capacity(total);
    let mut gap_m = Vec::with_capacity(total);
    let mut own_idx = vec![0usize; n];
    let mut flat = vec![R::zero(); (n - 1) * m];
    for _ in 0..total {
        let points: Vec<ndarray::Array1<R>> =
            (0..n).map(|i| grid.own_point(i, own_idx[i])).collect();
        let mut sums = vec![0.0f64; m];
        let mut gap = f64::INFINITY;
        for i in 0..n {
            let mut slot = 0;
            for p in 0..n {
                if p == i {
                    continue;
                }
                flat[slot * m..(slot + 1) * m]
                    .copy_from_slice(points[p].as_slice().expect("contiguous"));
                slot += 1;
            }
            let oidx = grid.nearest_others(i, &flat);
            let menu = Rc::clone(cache[i].entry(oidx).or_insert_with(|| {
                Rc::new(net.forward_menu(i, grid.others_point(i, oidx).view()))
            }));
            let utils = menu.utilities(points[i].view());
            let mut star = 0;
            for k in 1..utils.len() {
                if utils[k] > utils[star] {
                    star = k;
                }
            }
            let row = menu.bundles.row(star);
            for j in 0..m {
                sums[j] += row[j].as_f64();
            }
            if star != menu.opt_out_index() {
                let mut second = f64::NEG_INFINITY;
                for k in 0..utils.len() {
                    if k != star {
                        second = second.max(utils[k].as_f64());
                    }
                }
                gap = gap.min(utils[star].as_f64() - second);
            }
        }
        let worst = sums.iter().fold(f64::NEG_INFINITY, |a, &s| a.max(s));
        slack_f.push(1.0 - worst);
        gap_m.push(gap);
        for i in (0..n).rev() {
            own_idx[i] += 1;
            if own_idx[i] < own_dims[i] {
                break;
            }
            own_idx[i] = 0;
        }
    }
    EmpiricalMargins {
        dims,
        slack_f,
        gap_m,
    }
}

/// Largest grid spacing under which the margin requirements still hold at a
/// point with measured slack `slack_f` and gap `gap_m`: inverts
/// `n·ε·l_a/2 ≤ slack_f` and `(l_a·m/2)·ε² + (l_a·m·v_max + l_p + 1)·ε ≤ gap_m`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_upper_bound(
    slack_f: f64,
    gap_m: f64,
    l_a: f64,
    l_p: f64,
    m: usize,
    v_max: f64,
    n: usize,
) -> f64 {
    let bound_f = if slack_f < 0.0 {
        0.0
    } else if l_a > 0.0 {
        2.0 * slack_f / (n as f64 * l_a)
    } else {
        f64::INFINITY
    };
    let bound_m = if gap_m == f64::INFINITY {
        f64::INFINITY
    } else if gap_m <= 0.0 {
        0.0
    } else {
        let a = l_a * m as f64 / 2.0;
        let b = l_a * m as f64 * v_max + l_p + 1.0;
        if a == 0.0 {
            gap_m / b
        } else {
            (-b + (b * b + 4.0 * a * gap_m).sqrt()) / (2.0 * a)
        }
    };
    bound_f.min(bound_m)
}

/// Coarsens each axis of `grid` as far as the empirical margins allow: a
/// kept gap never exceeds the smallest per-point spacing bound among the
/// base points it spans (each base slab is charged the bounds of its two
/// endpoints — a neighborhood minimum), endpoints always survive, and no
/// axis becomes coarser than its bound permits. Points that were already
/// too close for their bound stay at base spacing; only provably safe
/// points are removed.
pub fn adaptive_grid<R: Real>(
    grid: &ValueGrid<R>,
    margins: &EmpiricalMargins,
    l_a: f64,
    l_p: f64,
) -> ValueGrid<R> {
    let n = grid.n();
    let m = grid.m();
    let v_max = grid.v_max.as_f64();
    let dims = &margins.dims;
    let total: usize = dims.iter().product();
    assert_eq!(margins.slack_f.len(), total, "margins match the grid");

    // Per-axis, per-slab minimum of the spacing bound over all joint points
    // touching either slab endpoint.
    let mut allowed: Vec<Vec<f64>> = dims
        .iter()
        .map(|&d| vec![f64::INFINITY; d.saturating_sub(1)])
        .collect();
    let mut coords = vec![0usize; dims.len()];
    for flat in 0..total {
        let eps = epsilon_upper_bound(
            margins.slack_f[flat],
            margins.gap_m[flat],
            l_a,
            l_p,
            m,
            v_max,
            n,
        );
        for (axis, &c) in coords.iter().enumerate() {
            let slabs = &mut allowed[axis];
            if c > 0 {
                slabs[c - 1] = slabs[c - 1].min(eps);
            }
            if c < slabs.len() {
                slabs[c] = slabs[c].min(eps);
            }
        }
        for a in (0..dims.len()).rev() {
            coords[a] += 1;
            if coords[a] < dims[a] {
                break;
            }
            coords[a] = 0;
        }
    }

    let mut axes = grid.axes.clone();
    for bidder in 0..n {
        for item in 0..m {
            let axis_at = bidder * m + item;
            let points = &grid.axes[bidder][item];
            let len = points.len();
            if len <= 2 {
                continue;
            }
            let slabs = &allowed[axis_at];
            let mut kept = vec![0usize];
            let mut last = 0usize;
            let mut run_min = f64::INFINITY;
            for t in 1..len - 1 {
                run_min = run_min.min(slabs[t - 1]);
                let width = (points[t + 1] - points[last]).as_f64();
                let next_min = run_min.min(slabs[t]);
                if width > next_min {
                    kept.push(t);
                    last = t;
                    run_min = f64::INFINITY;
                }
            }
            kept.push(len - 1);
            axes[bidder][item] = kept.into_iter().map(|t| points[t]).collect();
        }
    }
    ValueGrid {
        axes,
        v_max: grid.v_max,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::milp::{export_lp_text, solve_lp};
    use approx::assert_relative_eq;
    use ndarray::array;

    // -- margins ------------------------------------------------------------

    #[test]
    fn margins_match_hand_arithmetic() {
        let m = compute_safety_margins(0.02, 1e-4, 1e-3, 2, 1.0, 2);
        assert_relative_eq!(m.s_f, 2e-6, max_relative = 1e-12);
        assert_relative_eq!(m.s_m, 0.02002404, max_relative = 1e-12);
    }

    #[test]
    fn margins_vanish_with_network_sensitivity() {
        let m = compute_safety_margins(0.05, 0.0, 0.0, 3, 1.0, 2);
        assert_eq!(m.s_f, 0.0);
        assert_eq!(m.s_m, 0.05);
    }

    #[test]
    fn margins_scale_with_bidder_count() {
        let m2 = compute_safety_margins(0.02, 0.3, 0.2, 2, 1.0, 2);
        let m4 = compute_safety_margins(0.02, 0.3, 0.2, 2, 1.0, 4);
        assert_relative_eq!(m4.s_f, 2.0 * m2.s_f, max_relative = 1e-12);
        assert_eq!(m4.s_m, m2.s_m);
    }

    #[test]
    fn big_m_defaults() {
        assert_eq!(big_m_value(2, 1.0, ValuationKind::Additive), 6.0);
        assert_eq!(big_m_value(10, 1.0, ValuationKind::UnitDemand), 3.0);
    }

    // -- classification -----------------------------------------------------

    fn classify_menu() -> Menu<f64> {
        Menu::from_learned(array![[0.0, 0.98], [0.5, 0.5]], array![0.0, 0.0])
    }

    #[test]
    fn classify_componentwise_fit() {
        let c = classify_elements(&classify_menu(), &[0.99, 0.01], 1e-4, 2, false);
        assert!(c.compatible[0], "fits beside the others' allocation");
        assert!(!c.compatible[1], "item 1 would sum to 1.49");
        assert!(c.compatible[2], "opt-out always compatible");
        assert_eq!(c.compatible_set(), vec![0, 2]);
        assert_eq!(c.incompatible_set(), vec![1]);
    }

    #[test]
    fn classify_clip_rescues_zero_allocation() {
        // Others saturate item 1 entirely: only exactly-zero entries fit
        // there, and they do so only thanks to the clip.
        let menu: Menu<f64> =
            Menu::from_learned(array![[0.0, 0.5], [0.01, 0.0]], array![0.0, 0.0]);
        let c = classify_elements(&menu, &[1.0, 0.3], 1e-4, 2, false);
        assert!(c.compatible[0]);
        assert!(!c.compatible[1]);
        assert!(c.compatible[2]);
    }

    #[test]
    fn classify_scaled_clip_variant_tightens() {
        let menu: Menu<f64> = Menu::from_learned(array![[0.9985, 0.0]], array![0.0]);
        // cap = 1 - s_f = 0.999 admits the element; 1 - 2*s_f = 0.998 does not.
        let loose = classify_elements(&menu, &[0.0, 0.0], 1e-3, 2, false);
        let tight = classify_elements(&menu, &[0.0, 0.0], 1e-3, 2, true);
        assert!(loose.compatible[0]);
        assert!(!tight.compatible[0]);
    }

    // -- program construction -----------------------------------------------

    fn margins_with(s_f: f64, s_m: f64) -> SafetyMargins {
        SafetyMargins {
            s_f,
            s_m,
            epsilon: 0.02,
            l_a: 0.0,
            l_p: 0.0,
            m: 2,
            v_max: 1.0,
            n: 2,
        }
    }

    fn single_point_grid(v: &[f64]) -> ValueGrid<f64> {
        ValueGrid {
            axes: vec![
                v.iter().map(|&x| vec![x]).collect(),
                v.iter().map(|&x| vec![x]).collect(),
            ],
            v_max: 1.0,
        }
    }

    /// Brute-force oracle: enumerate all binary assignments, fix them with
    /// equality rows, and take the best LP value.
    fn enumerate_binaries_oracle(inst: &MilpInstance) -> Option<f64> {
        let binaries: Vec<VarId> = (0..inst.num_vars())
            .filter(|&v| inst.variables[v].is_binary)
            .collect();
        assert!(binaries.len() <= 16, "oracle only for small programs");
        let mut best: Option<f64> = None;
        for mask in 0..(1u32 << binaries.len()) {
            let mut fixed = inst.clone();
            for (at, &v) in binaries.iter().enumerate() {
                let val = f64::from((mask >> at) & 1);
                fixed.add_constraint(vec![(v, 1.0)], ConstraintSense::Eq, val);
            }
            let sol = solve_lp(&fixed).expect("well-formed LP");
            if sol.status == MilpStatus::Optimal {
                best = Some(match best {
                    Some(b) => b.min(sol.objective),
                    None => sol.objective,
                });
            }
        }
        best
    }

    #[test]
    fn worked_example_prices_out_incompatible_element() {
        // One grid value (0.6, 0.6); the sole learned element (bundle
        // (1,1), price 0.4) is incompatible, so the choice must become the
        // opt-out, and the element's utility 0.8 must fall to -s_m:
        // delta = 0.8 + 0.02 = 0.82.
        let menu: Menu<f64> = Menu::from_learned(array![[1.0, 1.0]], array![0.4]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![false, true],
        }];
        let margins = margins_with(1e-4, 0.02);
        let config = TransformConfig::default();
        let build = build_price_milp(&menu, &grid, 0, &classes, &margins, 6.0, &config, 95.0);

        assert_eq!(build.instance.num_binaries(), 1, "opt-out selector only");
        assert!(build.screened.is_empty(), "positive utility is not screened");
        assert!(build.kc_values.is_empty(), "incompatible choice cannot be pinned");

        let sol = solve_milp(&build.instance).unwrap();
        assert_eq!(sol.status, MilpStatus::Optimal);
        assert_relative_eq!(sol.objective, 0.82, max_relative = 1e-6);
        let deltas = build.extract_deltas(&sol.values);
        assert_relative_eq!(deltas[0], 0.82, max_relative = 1e-6);
        assert_eq!(deltas[1], 0.0);

        let oracle = enumerate_binaries_oracle(&build.instance).expect("feasible");
        assert_relative_eq!(sol.objective, oracle, epsilon = 1e-7);
    }

    #[test]
    fn zero_adjustment_when_margins_already_met() {
        // Compatible element ahead of the opt-out by 0.26 >> s_m.
        let menu: Menu<f64> = Menu::from_learned(array![[0.3, 0.3]], array![0.1]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![true, true],
        }];
        let margins = margins_with(1e-4, 0.02);
        let config = TransformConfig::default();
        for kc in [0.0, 100.0] {
            let build = build_price_milp(&menu, &grid, 0, &classes, &margins, 6.0, &config, kc);
            let sol = solve_milp(&build.instance).unwrap();
            assert_eq!(sol.status, MilpStatus::Optimal);
            assert!(sol.objective.abs() <= 1e-9, "kc={kc}: {}", sol.objective);
        }
    }

    #[test]
    fn keep_choice_rows_replace_binaries() {
        // Fully pinned single value: linear rows only, one per alternative.
        let menu: Menu<f64> =
            Menu::from_learned(array![[0.3, 0.3], [0.2, 0.1]], array![0.1, 0.15]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![true, true, true],
        }];
        let margins = margins_with(1e-4, 0.02);
        let build = build_price_milp(
            &menu,
            &grid,
            0,
            &classes,
            &margins,
            6.0,
            &TransformConfig::default(),
            100.0,
        );
        assert_eq!(build.kc_values, vec![0]);
        assert_eq!(build.instance.num_binaries(), 0);
        assert_eq!(build.instance.num_constraints(), 2);
    }

    #[test]
    fn screening_drops_deeply_negative_elements() {
        // Element 1 has utility -4.76 at the only grid value: no variable,
        // no rows.
        let menu: Menu<f64> =
            Menu::from_learned(array![[0.3, 0.3], [0.2, 0.2]], array![0.1, 5.0]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![true, false, true],
        }];
        let margins = margins_with(1e-4, 0.02);
        let config = TransformConfig::default();
        let build = build_price_milp(&menu, &grid, 0, &classes, &margins, 6.0, &config, 0.0);
        assert_eq!(build.screened, vec![1]);
        assert!(build.instance.var_id("dbeta_1").is_none());
        assert_eq!(build.delta_vars[1], DeltaVar::Fixed);

        let mut off = config.clone();
        off.ir_screening = false;
        let with_rows = build_price_milp(&menu, &grid, 0, &classes, &margins, 6.0, &off, 0.0);
        assert!(with_rows.screened.is_empty());
        assert!(with_rows.instance.var_id("dbeta_1").is_some());
        assert!(
            with_rows.instance.num_constraints() > build.instance.num_constraints(),
            "screening removed this element's rows"
        );
    }

    #[test]
    fn exported_program_uses_stable_names() {
        let menu: Menu<f64> = Menu::from_learned(array![[1.0, 1.0]], array![0.4]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![false, true],
        }];
        let margins = margins_with(1e-4, 0.02);
        let build = build_price_milp(
            &menu,
            &grid,
            0,
            &classes,
            &margins,
            6.0,
            &TransformConfig::default(),
            0.0,
        );
        let text = export_lp_text(&build.instance);
        assert!(text.contains("dbeta_0"));
        assert!(text.contains("U_0"));
        assert!(text.contains("z_0_1"));
    }

    #[test]
    fn signed_mode_splits_adjustments_and_rejects_screening() {
        let mut config = TransformConfig {
            signed_adjustments: true,
            ir_screening: false,
            ..TransformConfig::default()
        };
        config.validate().unwrap();
        let menu: Menu<f64> = Menu::from_learned(array![[1.0, 1.0]], array![0.4]);
        let grid = single_point_grid(&[0.6, 0.6]);
        let classes = vec![Classification {
            compatible: vec![false, true],
        }];
        let build = build_price_milp(
            &menu,
            &grid,
            0,
            &classes,
            &margins_with(1e-4, 0.02),
            6.0,
            &config,
            0.0,
        );
        assert!(build.instance.var_id("dbeta_pos_0").is_some());
        assert!(build.instance.var_id("dbeta_neg_0").is_some());
        let sol = solve_milp(&build.instance).unwrap();
        assert_relative_eq!(sol.objective, 0.82, max_relative = 1e-6);

        config.ir_screening = true;
        assert!(config.validate().is_err());
    }

    // -- end-to-end transformation fixtures ----------------------------------

    /// Constant-menu network: zero weights, chosen biases. Bundle biases are
    /// sigmoid logits laid out element-major; prices are linear.
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

    #[test]
    fn compatible_network_needs_no_adjustments() {
        // Prices far above any value: every bidder picks the opt-out, every
        // point is already compatible, the table stays empty.
        let net = constant_net(2, 2, 4, &[0.0; 6], &[50.0; 3]);
        let grid = make_grid(1.0, 2, 2, 5);
        let margins = compute_safety_margins(0.25, 0.1, 0.1, 2, 1.0, 2);
        let config = TransformConfig::default();
        let table = transform_all(&net, &grid, &margins, &config).unwrap();
        assert_eq!(table.stats.bidders_processed, 2);
        let all_points = grid.others_count(0) + grid.others_count(1);
        assert_eq!(table.stats.points_skipped, all_points);
        assert_eq!(table.stats.milps_solved, 0);
        assert!(table.bidders.iter().all(|b| b.is_empty()));

        let check = verify_table(&net, &grid, &table);
        assert!(check.clean(), "{check:?}");
        assert_eq!(check.skipped_points, all_points);

        let joint = verify_joint_grid(&net, &grid, &table);
        assert!(joint.max_overallocation <= 0.0);

        // Determinism: identical inputs, identical table.
        let again = transform_all(&net, &grid, &margins, &config).unwrap();
        assert_eq!(table.bidders, again.bidders);
    }

    /// Two elements crossing near v = 0.6 with opposite winners at the two
    /// grid values; pinning both is infeasible under the required gap.
    fn crossing_net() -> MenuNetwork<f64> {
        // Element A: bundle sigmoid(20) ~= 1, price 0.5.
        // Element B: bundle sigmoid(0) = 0.5, price 0.2.
        let mut net = constant_net(2, 1, 3, &[20.0, 0.0], &[0.5, 0.2]);
        // The other bidder opts out: positive prices, no allocation.
        let b1 = &mut net.bidders[1];
        b1.bundle.layers.last_mut().unwrap().b.fill(-40.0);
        b1.price.layers.last_mut().unwrap().b.fill(50.0);
        net
    }

    fn crossing_grid() -> ValueGrid<f64> {
        ValueGrid {
            axes: vec![vec![vec![0.58, 0.62]], vec![vec![0.5]]],
            v_max: 1.0,
        }
    }

    #[test]
    fn keep_choice_retries_until_feasible() {
        let net = crossing_net();
        let grid = crossing_grid();
        let margins = SafetyMargins {
            s_f: 0.0,
            s_m: 0.05,
            epsilon: 0.04,
            l_a: 0.0,
            l_p: 0.0,
            m: 1,
            v_max: 1.0,
            n: 2,
        };
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 100.0,
            ..TransformConfig::default()
        };
        let table = transform_all(&net, &grid, &margins, &config).unwrap();
        // Bidder 0's single others-point plus bidder 1's two (the opt-out
        // bidder still gets zero-delta programs since skipping is disabled).
        assert_eq!(table.stats.milps_solved, 3);
        let stats = &table.stats.per_milp[0];
        assert_eq!(stats.kc_retries, 1, "100% pinning is infeasible here");
        assert_relative_eq!(stats.kc_percent, 95.0);
        // Optimal repair raises A by 0.06: B then leads by exactly s_m at
        // v=0.62 and by 0.07 at the pinned v=0.58.
        assert_relative_eq!(stats.objective, 0.06, max_relative = 1e-4);
        let delta = table.delta(0, 0).unwrap();
        assert_relative_eq!(delta[0], 0.06, max_relative = 1e-4);
        assert!(delta[1].abs() <= 1e-9);

        let check = verify_table(&net, &grid, &table);
        assert!(check.clean(), "{check:?}");
        // One pin on bidder 0's point (95% of two values after the retry)
        // plus one each on bidder 1's two single-value points at 100%.
        assert_eq!(check.kc_checked, 3);
        assert!(check.min_margin >= margins.s_m - 1e-9);
    }

    #[test]
    fn point_milp_builder_matches_the_sequential_pass() {
        let net = crossing_net();
        let grid = crossing_grid();
        let margins = SafetyMargins {
            s_f: 0.0,
            s_m: 0.05,
            epsilon: 0.04,
            l_a: 0.0,
            l_p: 0.0,
            m: 1,
            v_max: 1.0,
            n: 2,
        };
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 95.0,
            ..TransformConfig::default()
        };
        let build = build_point_milp(&net, &grid, &margins, &config, 0, 0).unwrap();
        let sol = crate::milp::solve_milp(&build.instance).unwrap();
        assert_relative_eq!(sol.objective, 0.06, max_relative = 1e-4);
        let text = crate::milp::export_lp_text(&build.instance);
        assert!(text.contains("dbeta_0"));

        assert!(build_point_milp(&net, &grid, &margins, &config, 2, 0).is_err());
        assert!(build_point_milp(&net, &grid, &margins, &config, 0, 99).is_err());
    }

    #[test]
    fn verification_flags_tampered_tables() {
        let net = crossing_net();
        let grid = crossing_grid();
        let margins = SafetyMargins {
            s_f: 0.0,
            s_m: 0.05,
            epsilon: 0.04,
            l_a: 0.0,
            l_p: 0.0,
            m: 1,
            v_max: 1.0,
            n: 2,
        };
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 100.0,
            ..TransformConfig::default()
        };
        let mut table = transform_all(&net, &grid, &margins, &config).unwrap();
        table.bidders[0][0].delta = vec![0.0; 3];
        let check = verify_table(&net, &grid, &table);
        assert!(!check.clean());
        assert!(check.margin_violations > 0);
    }

    #[test]
    fn adjustment_table_roundtrips_through_json() {
        let net = crossing_net();
        let grid = crossing_grid();
        let margins = SafetyMargins {
            s_f: 0.0,
            s_m: 0.05,
            epsilon: 0.04,
            l_a: 0.0,
            l_p: 0.0,
            m: 1,
            v_max: 1.0,
            n: 2,
        };
        let config = TransformConfig {
            zero_violation_skip: false,
            keep_choice_percent: 100.0,
            ..TransformConfig::default()
        };
        let table = transform_all(&net, &grid, &margins, &config).unwrap();
        let json = table.to_json();
        let back = PriceAdjustmentTable::from_json(&json).unwrap();
        assert_eq!(table, back);
        assert!(json.contains("grid_point"));
        assert!(json.contains("margins"));
    }

    // -- adaptive grid -------------------------------------------------------

    #[test]
    fn epsilon_bound_inverts_margin_formulas() {
        for &(l_a, l_p, m, v_max, n, gap) in &[
            (0.3, 0.7, 2usize, 1.0, 2usize, 0.08),
            (0.0, 0.0, 2, 1.0, 2, 0.05),
            (1.0, 0.5, 3, 2.0, 4, 0.3),
        ] {
            let eps = epsilon_upper_bound(f64::INFINITY, gap, l_a, l_p, m, v_max, n);
            let margins = compute_safety_margins(eps, l_a, l_p, m, v_max, n);
            assert_relative_eq!(margins.s_m, gap, max_relative = 1e-9);
        }
        // The allocation-slack bound can bind instead.
        let eps = epsilon_upper_bound(0.01, f64::INFINITY, 0.5, 0.0, 2, 1.0, 2);
        assert_relative_eq!(eps, 2.0 * 0.01 / (2.0 * 0.5), max_relative = 1e-12);
        // Violated slack forbids any spacing.
        assert_eq!(epsilon_upper_bound(-0.1, 1.0, 0.5, 0.0, 2, 1.0, 2), 0.0);
        assert_eq!(epsilon_upper_bound(1.0, 0.0, 0.5, 0.0, 2, 1.0, 2), 0.0);
    }

    #[test]
    fn uniform_bound_keeps_every_tenth_point() {
        let grid: ValueGrid<f64> = make_grid(1.0, 1, 2, 101);
        let total = grid.own_count(0) * grid.own_count(1);
        // l_a = l_p = 0 makes the bound equal the gap itself.
        let margins = EmpiricalMargins {
            dims: vec![101, 101],
            slack_f: vec![1.0; total],
            gap_m: vec![0.1005; total],
        };
        let pruned = adaptive_grid(&grid, &margins, 0.0, 0.0);
        for bidder in 0..2 {
            let axis = pruned.axis(bidder, 0);
            assert_eq!(axis.len(), 11, "kept every tenth point");
            assert_relative_eq!(axis[1] - axis[0], 0.1, max_relative = 1e-9);
            assert_eq!(axis[0], 0.0);
            assert_eq!(*axis.last().unwrap(), 1.0);
        }
        let removed = 1.0 - 11.0 / 101.0;
        assert!(removed > 0.89, "about 90% of axis points pruned");
    }

    #[test]
    fn opt_out_regions_are_exempt_from_the_gap_bound() {
        // Everyone opts out everywhere: gaps are exempt (infinite) and the
        // allocation slack is a full 1.0, so only endpoints survive.
        let net = constant_net(2, 1, 3, &[0.0, 0.0], &[50.0, 50.0]);
        let grid = make_grid(1.0, 1, 2, 21);
        let margins = empirical_margins(&net, &grid);
        assert!(margins.gap_m.iter().all(|&g| g == f64::INFINITY));
        assert!(margins.slack_f.iter().all(|&s| s == 1.0));
        let pruned = adaptive_grid(&grid, &margins, 0.25, 1.0);
        for bidder in 0..2 {
            assert_eq!(pruned.axis(bidder, 0), &[0.0, 1.0]);
        }
    }

    #[test]
    fn tight_points_block_pruning_locally() {
        let grid: ValueGrid<f64> = make_grid(1.0, 1, 2, 11);
        let total = 121;
        let mut gap = vec![f64::INFINITY; total];
        // One tight joint point at bidder-0 coordinate index 5 pins the two
        // slabs around axis point 0.5 on bidder 0's axis only.
        gap[5 * 11 + 3] = 0.0;
        let margins = EmpiricalMargins {
            dims: vec![11, 11],
            slack_f: vec![1.0; total],
            gap_m: gap,
        };
        let pruned = adaptive_grid(&grid, &margins, 0.0, 0.0);
        // The tight joint point sits at coordinate 5 on bidder 0's axis and
        // coordinate 3 on bidder 1's: both neighborhoods survive, the rest
        // of each axis collapses to its endpoints.
        let base0 = grid.axis(0, 0);
        let base1 = grid.axis(1, 0);
        let expect0: Vec<f64> = [0, 4, 5, 6, 10].iter().map(|&t| base0[t]).collect();
        let expect1: Vec<f64> = [0, 2, 3, 4, 10].iter().map(|&t| base1[t]).collect();
        assert_eq!(pruned.axis(0, 0), expect0.as_slice());
        assert_eq!(pruned.axis(1, 0), expect1.as_slice());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        for bad in [
            TransformConfig {
                keep_choice_percent: -1.0,
                ..TransformConfig::default()
            },
            TransformConfig {
                keep_choice_percent: 101.0,
                ..TransformConfig::default()
            },
            TransformConfig {
                ir_screen_tol: 0.0,
                ..TransformConfig::default()
            },
            TransformConfig {
                big_m: Some(0.0),
                ..TransformConfig::default()
            },
            TransformConfig {
                signed_adjustments: true,
                ..TransformConfig::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
        assert!(TransformConfig::default().validate().is_ok());
    }
}
