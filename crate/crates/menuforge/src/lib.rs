//! menuforge: learns multi-bidder multi-item strategy-proof auctions as
//! per-bidder menu networks, then certifies exact menu compatibility with a
//! MILP-based price transformation.
//!
//! The crate is generic over the floating-point scalar through
//! [`scalar::Real`]; `f64` aliases for the main entry points live at the
//! crate root.

pub mod baselines;
pub mod domain;
pub mod grid;
pub mod mech;
pub mod menu;
pub mod milp;
pub mod nn;
pub mod scalar;
pub mod train;
pub mod transform;
pub mod verify;

pub use baselines::{
    item_myerson_revenue, myerson_ironed, myerson_reserve, vcg_additive, vcg_revenue_mc,
    yao_optimal_revenue, BaselineError, VirtualValueFn,
};
pub use domain::{
    bundle_value, sample_profile, Distribution, DomainError, ValuationKind, ValuationProfile,
};
pub use grid::{make_grid, make_grid_discrete, ValueGrid};
pub use mech::{
    expected_revenue, load_mechanism, save_mechanism, slice_mechanism, MechError, Mechanism,
    Outcome, SliceTable,
};
pub use menu::{best_response, Menu, MenuElement};
pub use nn::{lipschitz_certify, load_checkpoint, save_checkpoint, LipschitzCert, MenuNetwork};
pub use scalar::Real;
pub use train::{
    estimate_violation_rate, evaluate_hard, incompatibility_loss, revenue_loss, softmax_weights,
    total_loss_and_grads, train, Checkpoint, EvalRecord, EvalStats, TrainConfig, TrainError,
    TrainOutput,
};
pub use transform::{
    adaptive_grid, big_m_value, build_point_milp, build_price_milp, classify_elements,
    compute_safety_margins,
    empirical_margins, epsilon_upper_bound, transform_all, verify_joint_grid, verify_table,
    AdjustmentEntry, Classification, EmpiricalMargins, JointGridCheck, MilpBuild, MilpPointStats,
    PriceAdjustmentTable, SafetyMargins, TableVerification, TransformConfig, TransformError,
    TransformStats,
};
pub use verify::{
    check_compatibility, check_ir, estimate_regret, verify_mechanism, AuctionRunner,
    CompatibilityReport, IrReport, RegretReport, VerificationReport, VerifyConfig,
};

/// `f64` aliases for the common entry points.
pub type ValuationProfile64 = domain::ValuationProfile<f64>;
pub type ValueGrid64 = grid::ValueGrid<f64>;
pub type Menu64 = menu::Menu<f64>;
pub type MenuNetwork64 = nn::MenuNetwork<f64>;
pub type Outcome64 = mech::Outcome<f64>;
pub type Mechanism64 = mech::Mechanism<f64>;
pub type Checkpoint64 = train::Checkpoint<f64>;
