//! Stochastic training of per-bidder menu networks.
//!
//! The trainer minimizes a softmax-relaxed negative-revenue objective plus a
//! weighted over-allocation penalty, using Adam and projecting every weight
//! matrix back to unit spectral norm after each step. The softmax temperature
//! and the penalty weight grow on configurable schedules; a held-out
//! evaluation with hard argmax choices runs at a fixed cadence and drives
//! both checkpoint selection (best revenue among evaluations whose violation
//! rate is under threshold) and learning-rate decay once revenue and
//! violation stop moving between consecutive evaluations.

use crate::domain::{Distribution, DomainError, ValuationKind};
use crate::nn::mlp::MlpGrads;
use crate::nn::spectral::POWER_ITERS;
use crate::nn::{lipschitz_certify, LipschitzCert, MenuNetwork};
use crate::scalar::Real;
use ndarray::{Array, Array1, Array2, Array3, ArrayView1, Dimension, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Samples evaluated per forward chunk during hard-argmax evaluation.
const EVAL_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Hyperparameters for one training run.
///
/// Defaults follow the reference setup: minibatches of 2^13 profiles, menus
/// of 300 elements, two hidden layers of 1024 units, Adam at 0.005, softmax
/// temperature starting at 5 and doubling every 3000 iterations up to 2000,
/// and a penalty weight starting at 0.1 that grows by
/// `max(min_step, observed penalty)` on its own cadence. Desk-scale runs
/// shrink the widths, menu size, and batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Menu size including the terminal opt-out element.
    pub k: usize,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub lambda_softmax_init: f64,
    pub lambda_softmax_mult: f64,
    pub lambda_softmax_every: usize,
    pub lambda_softmax_cap: f64,
    pub lambda_incomp_init: f64,
    pub lambda_incomp_every: usize,
    pub lambda_incomp_min_step: f64,
    /// Slack subtracted from 1 inside the over-allocation penalty, so the
    /// relaxed allocations are pushed strictly under capacity.
    pub allocation_slack: f64,
    /// Iterations between held-out evaluations.
    pub eval_every: usize,
    /// Held-out sample count per evaluation.
    pub eval_samples: usize,
    /// A checkpoint qualifies only if its violation rate is at or under this.
    pub violation_threshold: f64,
    pub max_iters: usize,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Decay triggers once consecutive evaluations move revenue by at most
    /// this much...
    pub revenue_convergence_tol: f64,
    /// ...and violation rate by at most this much.
    pub violation_convergence_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8192,
            k: 300,
            hidden: vec![1024, 1024],
            lr: 0.005,
            lambda_softmax_init: 5.0,
            lambda_softmax_mult: 2.0,
            lambda_softmax_every: 3000,
            lambda_softmax_cap: 2000.0,
            lambda_incomp_init: 0.1,
            lambda_incomp_every: 3000,
            lambda_incomp_min_step: 0.01,
            allocation_slack: 1e-4,
            eval_every: 200,
            eval_samples: 200_000,
            violation_threshold: 0.005,
            max_iters: 20_000,
            lr_decay_factor: 0.1,
            lr_decay_every: 2000,
            revenue_convergence_tol: 0.03,
            violation_convergence_tol: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.k < 2 {
            return bad("k must include at least one learned element plus the opt-out");
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive and finite");
        }
        if !(self.lambda_softmax_init > 0.0 && self.lambda_softmax_mult >= 1.0) {
            return bad("softmax temperature must start positive and not shrink");
        }
        if self.lambda_softmax_every == 0 || self.lambda_incomp_every == 0 {
            return bad("schedule cadences must be positive");
        }
        if self.lambda_softmax_cap < self.lambda_softmax_init {
            return bad("lambda_softmax_cap must be at least the initial value");
        }
        if !(self.lambda_incomp_init > 0.0 && self.lambda_incomp_min_step > 0.0) {
            return bad("penalty weight and its minimum step must be positive");
        }
        if !(self.allocation_slack >= 0.0 && self.allocation_slack < 1.0) {
            return bad("allocation_slack must lie in [0, 1)");
        }
        if self.eval_every == 0 || self.eval_samples == 0 {
            return bad("evaluation cadence and sample count must be positive");
        }
        if !(self.violation_threshold > 0.0 && self.violation_threshold < 1.0) {
            return bad("violation_threshold must lie in (0, 1)");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return bad("lr_decay_factor must lie in (0, 1]");
        }
        if self.lr_decay_every == 0 {
            return bad("lr_decay_every must be positive");
        }
        if self.revenue_convergence_tol < 0.0 || self.violation_convergence_tol < 0.0 {
            return bad("convergence tolerances must be nonnegative");
        }
        Ok(())
    }

    /// Softmax temperature in effect at a 0-based iteration.
    pub fn lambda_softmax_at(&self, iter: usize) -> f64 {
        let bumps = (iter / self.lambda_softmax_every) as i32;
        (self.lambda_softmax_init * self.lambda_softmax_mult.powi(bumps))
            .min(self.lambda_softmax_cap)
    }
}

/// Snapshot of the network at its best held-out evaluation.
#[derive(Debug, Clone)]
pub struct Checkpoint<R: Real> {
    pub net: MenuNetwork<R>,
    pub cert: LipschitzCert,
    pub iteration: usize,
    /// Hard-argmax revenue on the held-out set.
    pub revenue: f64,
    /// Hard-argmax violation rate on the held-out set.
    pub violation: f64,
    /// False when no evaluation came in under the violation threshold and
    /// this is merely the best-revenue fallback.
    pub meets_threshold: bool,
}

/// One held-out evaluation, as logged to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub revenue: f64,
    pub violation: f64,
    pub lambda_softmax: f64,
    pub lambda_incomp: f64,
    pub lr: f64,
}

impl EvalRecord {
    pub fn csv_header() -> &'static str {
        "iter,revenue,violation,lambda_softmax,lambda_incomp,lr"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration,
            self.revenue,
            self.violation,
            self.lambda_softmax,
            self.lambda_incomp,
            self.lr
        )
    }
}

/// Hard-argmax statistics on sampled profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    pub revenue: f64,
    pub violation: f64,
}

/// Everything a training run produces.
#[derive(Debug, Clone)]
pub struct TrainOutput<R: Real> {
    pub best: Checkpoint<R>,
    pub evals: Vec<EvalRecord>,
    /// Relaxed total loss per iteration.
    pub losses: Vec<f64>,
}

/// Relaxed loss terms on one minibatch.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<R: Real> {
    pub revenue: R,
    pub incompat: R,
    /// `-revenue + lambda_incomp * incompat`.
    pub total: R,
}

/// Gradients for one bidder's bundle and price networks.
#[derive(Debug, Clone)]
pub struct BidderGrads<R: Real> {
    pub bundle: MlpGrads<R>,
    pub price: MlpGrads<R>,
}

/// Temperature-weighted choice probabilities over menu elements, numerically
/// stabilized by max-subtraction. Entries are positive and sum to 1.
pub fn softmax_weights<R: Real>(utilities: ArrayView1<'_, R>, lambda: R) -> Array1<R> {
    assert!(lambda > R::zero(), "temperature must be positive");
    let mut z = utilities.mapv(|u| lambda * u);
    let top = z.iter().copied().fold(R::neg_infinity(), R::max);
    z.mapv_inplace(|s| (s - top).exp());
    let total = z.sum();
    z /= total;
    z
}

/// Sum over items of `ReLU(weighted allocation - (1 - slack))`: the penalty
/// contribution of one profile given its softmax-weighted item totals.
pub fn overallocation_penalty<R: Real>(weighted_item_sums: ArrayView1<'_, R>, slack: R) -> R {
    let cap = R::one() - slack;
    weighted_item_sums
        .iter()
        .map(|&s| (s - cap).max(R::zero()))
        .sum()
}

/// Per-bidder forward state kept for the backward pass.
struct BidderPass<R: Real> {
    menus: crate::nn::MenuBatch<R>,
    cache: crate::nn::MenuBatchCache<R>,
    /// Choice probabilities (batch, K).
    z: Array2<R>,
}

struct ForwardParts<R: Real> {
    passes: Vec<BidderPass<R>>,
    /// Softmax-weighted allocation totals per item (batch, m).
    sums: Array2<R>,
    revenue: R,
    incompat: R,
}

/// Other bidders' values flattened in bidder order, one row per profile.
fn others_matrix<R: Real>(values: &Array3<R>, bidder: usize) -> Array2<R> {
    let (batch, n, m) = values.dim();
    let mut x = Array2::zeros((batch, (n - 1) * m));
    for b in 0..batch {
        let mut at = 0;
        for i in 0..n {
            if i == bidder {
                continue;
            }
            for j in 0..m {
                x[[b, at]] = values[[b, i, j]];
                at += 1;
            }
        }
    }
    x
}

fn forward_parts<R: Real>(
    net: &MenuNetwork<R>,
    values: &Array3<R>,
    lambda_softmax: f64,
    slack: f64,
) -> ForwardParts<R> {
    let (batch, n, m) = values.dim();
    assert_eq!(n, net.n, "bidder count");
    assert_eq!(m, net.m, "item count");
    assert!(batch > 0, "empty batch");
    let lam = R::real(lambda_softmax);
    let inv_b = R::one() / R::real(batch as f64);
    let kk = net.k;

    let mut sums = Array2::zeros((batch, m));
    let mut revenue = R::zero();
    let mut passes = Vec::with_capacity(n);
    let mut u = Array1::zeros(kk);
    for i in 0..n {
        let x = others_matrix(values, i);
        let (menus, cache) = net.menus_batch(i, &x);
        let mut z = Array2::zeros((batch, kk));
        for b in 0..batch {
            for k in 0..kk {
                let mut acc = -menus.beta[[b, k]];
                for j in 0..m {
                    acc += menus.alpha[[b, k, j]] * values[[b, i, j]];
                }
                u[k] = acc;
            }
            let row = softmax_weights(u.view(), lam);
            for k in 0..kk {
                let zk = row[k];
                revenue += zk * menus.beta[[b, k]];
                for j in 0..m {
                    sums[[b, j]] += zk * menus.alpha[[b, k, j]];
                }
            }
            z.row_mut(b).assign(&row);
        }
        passes.push(BidderPass { menus, cache, z });
    }
    revenue *= inv_b;

    let slack = R::real(slack);
    let mut incompat = R::zero();
    for b in 0..batch {
        incompat += overallocation_penalty(sums.row(b), slack);
    }
    incompat *= inv_b;

    ForwardParts {
        passes,
        sums,
        revenue,
        incompat,
    }
}

/// Mean over the batch of each bidder's softmax-weighted expected payment.
pub fn revenue_loss<R: Real>(net: &MenuNetwork<R>, values: &Array3<R>, lambda_softmax: f64) -> R {
    forward_parts(net, values, lambda_softmax, 0.0).revenue
}

/// Mean over the batch of the per-item over-allocation penalty applied to
/// softmax-weighted allocation totals.
pub fn incompatibility_loss<R: Real>(
    net: &MenuNetwork<R>,
    values: &Array3<R>,
    lambda_softmax: f64,
    slack: f64,
) -> R {
    forward_parts(net, values, lambda_softmax, slack).incompat
}

/// `-revenue_loss + lambda_incomp * incompatibility_loss` on one batch.
pub fn total_loss<R: Real>(
    net: &MenuNetwork<R>,
    values: &Array3<R>,
    lambda_softmax: f64,
    lambda_incomp: f64,
    slack: f64,
) -> R {
    let parts = forward_parts(net, values, lambda_softmax, slack);
    -parts.revenue + R::real(lambda_incomp) * parts.incompat
}

/// Loss terms and exact parameter gradients on one batch of truthful values
/// shaped (batch, bidders, items).
pub fn total_loss_and_grads<R: Real>(
    net: &MenuNetwork<R>,
    values: &Array3<R>,
    lambda_softmax: f64,
    lambda_incomp: f64,
    slack: f64,
) -> (LossTerms<R>, Vec<BidderGrads<R>>) {
    let (batch, n, m) = values.dim();
    let parts = forward_parts(net, values, lambda_softmax, slack);
    let terms = LossTerms {
        revenue: parts.revenue,
        incompat: parts.incompat,
        total: -parts.revenue + R::real(lambda_incomp) * parts.incompat,
    };

    let kk = net.k;
    let learned = kk - 1;
    let cols = match net.kind {
        ValuationKind::Additive => m,
        ValuationKind::UnitDemand => m + 1,
    };
    let lam_sm = R::real(lambda_softmax);
    let lam_inc = R::real(lambda_incomp);
    let inv_b = R::one() / R::real(batch as f64);
    let cap = R::one() - R::real(slack);

    // Active-penalty indicator per (profile, item); the penalty's kink at
    // zero takes subgradient 0.
    let mut active = Array2::from_elem((batch, m), false);
    for b in 0..batch {
        for j in 0..m {
            active[[b, j]] = parts.sums[[b, j]] > cap;
        }
    }

    let mut grads = Vec::with_capacity(n);
    let mut g = vec![R::zero(); kk];
    for (i, pass) in parts.passes.iter().enumerate() {
        let mut dout_bundle = Array2::zeros((batch, learned * cols));
        let mut dout_price = Array2::zeros((batch, learned));
        for b in 0..batch {
            // dL/dz per element, then chain through the softmax row. The
            // opt-out element carries no parameters, but its probability
            // still couples the others through normalization, so it stays in
            // the row sums.
            let mut dot = R::zero();
            for k in 0..kk {
                let mut acc = -pass.menus.beta[[b, k]];
                for j in 0..m {
                    if active[[b, j]] {
                        acc += lam_inc * pass.menus.alpha[[b, k, j]];
                    }
                }
                g[k] = acc * inv_b;
                dot += g[k] * pass.z[[b, k]];
            }
            for k in 0..learned {
                let zk = pass.z[[b, k]];
                let du = lam_sm * zk * (g[k] - dot);
                dout_price[[b, k]] = -zk * inv_b - du;
                for j in 0..m {
                    let mut da = du * values[[b, i, j]];
                    if active[[b, j]] {
                        da += lam_inc * inv_b * zk;
                    }
                    dout_bundle[[b, k * cols + j]] = da;
                }
            }
        }
        let bundle = net.bidders[i].bundle.backward(&dout_bundle, &pass.cache.bundle);
        let price = net.bidders[i].price.backward(&dout_price, &pass.cache.price);
        grads.push(BidderGrads { bundle, price });
    }
    (terms, grads)
}

/// Hard-argmax revenue and violation rate on `samples` fresh profiles.
///
/// Each bidder picks their utility-maximizing element (ties to the lowest
/// index); a profile counts as a violation when the chosen bundles total
/// more than 1 of any item.
pub fn evaluate_hard<R: Real>(
    net: &MenuNetwork<R>,
    dist: Distribution,
    samples: usize,
    seed: u64,
) -> EvalStats {
    assert!(samples >= 1, "need at least one sample");
    let (n, m, kk) = (net.n, net.m, net.k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut revenue_sum = 0.0f64;
    let mut violations = 0usize;
    let mut done = 0usize;
    while done < samples {
        let b = (samples - done).min(EVAL_CHUNK);
        let mut values = Array3::<R>::zeros((b, n, m));
        for x in values.iter_mut() {
            *x = R::real(dist.sample(&mut rng));
        }
        let mut sums = Array2::<R>::zeros((b, m));
        for i in 0..n {
            let x = others_matrix(&values, i);
            let (menus, _cache) = net.menus_batch(i, &x);
            for bb in 0..b {
                let mut best_k = 0usize;
                let mut best_u = R::neg_infinity();
                for k in 0..kk {
                    let mut u = -menus.beta[[bb, k]];
                    for j in 0..m {
                        u += menus.alpha[[bb, k, j]] * values[[bb, i, j]];
                    }
                    if u > best_u {
                        best_u = u;
                        best_k = k;
                    }
                }
                revenue_sum += menus.beta[[bb, best_k]].as_f64();
                for j in 0..m {
                    sums[[bb, j]] += menus.alpha[[bb, best_k, j]];
                }
            }
        }
        for bb in 0..b {
            if (0..m).any(|j| sums[[bb, j]].as_f64() > 1.0) {
                violations += 1;
            }
        }
        done += b;
    }
    EvalStats {
        revenue: revenue_sum / samples as f64,
        violation: violations as f64 / samples as f64,
    }
}

/// Fraction of sampled profiles whose hard-argmax choices over-allocate some
/// item beyond 1.
pub fn estimate_violation_rate<R: Real>(
    net: &MenuNetwork<R>,
    dist: Distribution,
    samples: usize,
    seed: u64,
) -> f64 {
    evaluate_hard(net, dist, samples, seed).violation
}

// --- Adam ----------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct AdamLayer<R: Real> {
    mw: Array2<R>,
    vw: Array2<R>,
    mb: Array1<R>,
    vb: Array1<R>,
}

struct AdamState<R: Real> {
    /// bidder -> [bundle, price] -> layer.
    per_bidder: Vec<[Vec<AdamLayer<R>>; 2]>,
    t: u32,
}

impl<R: Real> AdamState<R> {
    fn new(net: &MenuNetwork<R>) -> Self {
        let per_bidder = net
            .bidders
            .iter()
            .map(|nets| {
                [&nets.bundle, &nets.price].map(|params| {
                    params
                        .layers
                        .iter()
                        .map(|l| AdamLayer {
                            mw: Array2::zeros(l.w.dim()),
                            vw: Array2::zeros(l.w.dim()),
                            mb: Array1::zeros(l.b.len()),
                            vb: Array1::zeros(l.b.len()),
                        })
                        .collect()
                })
            })
            .collect();
        Self { per_bidder, t: 0 }
    }

    fn step(&mut self, net: &mut MenuNetwork<R>, grads: &[BidderGrads<R>], lr: f64) {
        self.t += 1;
        let bc1 = R::real(1.0 - ADAM_BETA1.powi(self.t as i32));
        let bc2 = R::real(1.0 - ADAM_BETA2.powi(self.t as i32));
        let lr = R::real(lr);
        for (bidder, g) in grads.iter().enumerate() {
            let nets = &mut net.bidders[bidder];
            let state = &mut self.per_bidder[bidder];
            for (which, (params, gm)) in
                [(&mut nets.bundle, &g.bundle), (&mut nets.price, &g.price)]
                    .into_iter()
                    .enumerate()
            {
                for (layer, (grad, st)) in params
                    .layers
                    .iter_mut()
                    .zip(gm.layers.iter().zip(state[which].iter_mut()))
                {
                    adam_update(&mut layer.w, &grad.dw, &mut st.mw, &mut st.vw, lr, bc1, bc2);
                    adam_update(&mut layer.b, &grad.db, &mut st.mb, &mut st.vb, lr, bc1, bc2);
                }
            }
        }
    }
}

fn adam_update<R: Real, D: Dimension>(
    theta: &mut Array<R, D>,
    grad: &Array<R, D>,
    m: &mut Array<R, D>,
    v: &mut Array<R, D>,
    lr: R,
    bc1: R,
    bc2: R,
) {
    let b1 = R::real(ADAM_BETA1);
    let b2 = R::real(ADAM_BETA2);
    let eps = R::real(ADAM_EPS);
    Zip::from(theta).and(grad).and(m).and(v).for_each(|t, &g, m, v| {
        *m = b1 * *m + (R::one() - b1) * g;
        *v = b2 * *v + (R::one() - b2) * g * g;
        let mh = *m / bc1;
        let vh = *v / bc2;
        *t -= lr * mh / (vh.sqrt() + eps);
    });
}

// --- training loop --------------------------------------------------------

fn current_lr(cfg: &TrainConfig, decay_started_at: Option<usize>, iter: usize) -> f64 {
    match decay_started_at {
        None => cfg.lr,
        Some(s) => {
            let steps = iter.saturating_sub(s) / cfg.lr_decay_every;
            cfg.lr * cfg.lr_decay_factor.powi(steps as i32)
        }
    }
}

fn snapshot<R: Real>(
    net: &MenuNetwork<R>,
    iteration: usize,
    stats: EvalStats,
    meets_threshold: bool,
) -> Checkpoint<R> {
    Checkpoint {
        net: net.clone(),
        cert: lipschitz_certify(net),
        iteration,
        revenue: stats.revenue,
        violation: stats.violation,
        meets_threshold,
    }
}

/// Trains menu networks for `n` bidders and `m` items whose values are drawn
/// i.i.d. from `dist`. Deterministic for a fixed config: minibatches come
/// from a dedicated RNG stream and every held-out evaluation reuses the same
/// seed, so all evaluations score against the same sample set.
pub fn train<R: Real>(
    cfg: &TrainConfig,
    dist: Distribution,
    n: usize,
    m: usize,
    kind: ValuationKind,
) -> Result<TrainOutput<R>, TrainError> {
    cfg.validate()?;
    dist.validate()?;
    if n == 0 || m == 0 {
        return Err(TrainError::InvalidConfig(
            "need at least one bidder and one item".into(),
        ));
    }

    let mut net = MenuNetwork::<R>::new(n, m, cfg.k, kind, &cfg.hidden, cfg.seed);
    let mut adam = AdamState::new(&net);
    // Stream 1 feeds minibatches; evaluation draws from the default stream of
    // its own generator, so the two sequences never overlap.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut lambda_incomp = cfg.lambda_incomp_init;
    let mut decay_started_at: Option<usize> = None;
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut losses = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<Checkpoint<R>> = None;
    let mut fallback: Option<Checkpoint<R>> = None;

    let mut values = Array3::<R>::zeros((cfg.batch_size, n, m));
    for iter in 0..cfg.max_iters {
        let lambda_softmax = cfg.lambda_softmax_at(iter);
        let lr = current_lr(cfg, decay_started_at, iter);
        for x in values.iter_mut() {
            *x = R::real(dist.sample(&mut rng));
        }
        let (terms, grads) =
            total_loss_and_grads(&net, &values, lambda_softmax, lambda_incomp, cfg.allocation_slack);
        losses.push(terms.total.as_f64());
        adam.step(&mut net, &grads, lr);
        net.normalize_layers(POWER_ITERS);

        let done = iter + 1;
        if done % cfg.lambda_incomp_every == 0 {
            lambda_incomp += cfg.lambda_incomp_min_step.max(terms.incompat.as_f64());
        }
        if done % cfg.eval_every == 0 || done == cfg.max_iters {
            let stats = evaluate_hard(&net, dist, cfg.eval_samples, cfg.seed);
            if decay_started_at.is_none() {
                if let Some(prev) = evals.last() {
                    if (stats.revenue - prev.revenue).abs() <= cfg.revenue_convergence_tol
                        && (stats.violation - prev.violation).abs()
                            <= cfg.violation_convergence_tol
                    {
                        decay_started_at = Some(done);
                    }
                }
            }
            if stats.violation <= cfg.violation_threshold
                && best.as_ref().map_or(true, |c| stats.revenue > c.revenue)
            {
                best = Some(snapshot(&net, done, stats, true));
            }
            if fallback.as_ref().map_or(true, |c| stats.revenue > c.revenue) {
                fallback = Some(snapshot(&net, done, stats, false));
            }
            evals.push(EvalRecord {
                iteration: done,
                revenue: stats.revenue,
                violation: stats.violation,
                lambda_softmax,
                lambda_incomp,
                lr,
            });
        }
    }
    let best = best
        .or(fallback)
        .expect("training always evaluates at least once");
    Ok(TrainOutput {
        best,
        evals,
        losses,
    })
}
