//! Per-bidder menu networks: bundle nets and price nets over others' bids.
//!
//! Bidder i's menu is produced from b_{-i} only, which is what makes the
//! deployed mechanism strategy-proof. Certified l-inf Lipschitz constants
//! of both nets feed the safety margins of the price transform.

pub mod mlp;
pub mod spectral;

pub use mlp::{gelu, gelu_grad, sigmoid, MlpGrads, MlpParams, OutputHead};
pub use spectral::{power_iterate, spectral_normalize, POWER_ITERS};

use crate::domain::ValuationKind;
use crate::menu::Menu;
use crate::scalar::Real;
use mlp::{ForwardCache, GELU_LIPSCHITZ, SIGMOID_LIPSCHITZ};
use ndarray::{Array1, Array2, Array3, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Certified l-inf -> l-inf sensitivity bounds for the menu networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzCert {
    /// Bundle-network bound (max over bidders).
    pub l_a: f64,
    /// Price-network bound (max over bidders).
    pub l_p: f64,
    pub method: String,
}

/// Bundle and price networks for one bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct BidderNets<R: Real> {
    pub bundle: MlpParams<R>,
    pub price: MlpParams<R>,
}

/// The learned auction: per-bidder menu generators.
#[derive(Debug, Clone, PartialEq)]
pub struct MenuNetwork<R: Real> {
    pub n: usize,
    pub m: usize,
    /// Menu size including the terminal opt-out element.
    pub k: usize,
    pub kind: ValuationKind,
    pub bidders: Vec<BidderNets<R>>,
}

/// Batched menus for one bidder: allocation tensor (batch, K, m) and price
/// matrix (batch, K); the final K-index is the opt-out element.
pub struct MenuBatch<R: Real> {
    pub alpha: Array3<R>,
    pub beta: Array2<R>,
}

/// Forward caches needed to backpropagate through a batched menu.
pub struct MenuBatchCache<R: Real> {
    pub bundle: ForwardCache<R>,
    pub price: ForwardCache<R>,
}

impl<R: Real> MenuNetwork<R> {
    /// Initializes all nets Glorot-uniform, then projects every layer to
    /// spectral norm 1 (the training-time control starts at the init).
    pub fn new(
        n: usize,
        m: usize,
        k: usize,
        kind: ValuationKind,
        hidden: &[usize],
        seed: u64,
    ) -> Self {
        assert!(n >= 1 && m >= 1 && k >= 2);
        let input_dim = (n - 1) * m;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bidders = (0..n)
            .map(|_| {
                let (head, cols) = match kind {
                    ValuationKind::Additive => (OutputHead::ItemSigmoid, m),
                    ValuationKind::UnitDemand => (OutputHead::RowSoftmaxWithDummy, m + 1),
                };
                let bundle = MlpParams::init(input_dim, hidden, k - 1, cols, head, &mut rng);
                let price = MlpParams::init(input_dim, hidden, k - 1, 1, OutputHead::Linear, &mut rng);
                BidderNets { bundle, price }
            })
            .collect();
        let mut net = Self {
            n,
            m,
            k,
            kind,
            bidders,
        };
        net.normalize_layers(POWER_ITERS);
        net
    }

    pub fn input_dim(&self) -> usize {
        (self.n - 1) * self.m
    }

    /// Divides every weight matrix by its estimated sigma_max, using the
    /// layers' persistent power-iteration vectors.
    pub fn normalize_layers(&mut self, iters: usize) {
        for nets in &mut self.bidders {
            for params in [&mut nets.bundle, &mut nets.price] {
                for layer in &mut params.layers {
                    let sigma = power_iterate(&layer.w, &mut layer.u, &mut layer.v, iters);
                    if sigma > R::zero() {
                        layer.w /= sigma;
                    }
                }
            }
        }
    }

    /// Menus for a batch of others' bid vectors (rows of x).
    pub fn menus_batch(&self, bidder: usize, x: &Array2<R>) -> (MenuBatch<R>, MenuBatchCache<R>) {
        let nets = &self.bidders[bidder];
        let batch = x.nrows();
        assert_eq!(x.ncols(), self.input_dim(), "others'-bid dimension");
        let (bundle_out, bundle_cache) = nets.bundle.forward(x);
        let (price_out, price_cache) = nets.price.forward(x);

        let mut alpha = Array3::zeros((batch, self.k, self.m));
        match self.kind {
            ValuationKind::Additive => {
                for b in 0..batch {
                    for k in 0..self.k - 1 {
                        for j in 0..self.m {
                            alpha[[b, k, j]] = bundle_out[[b, k * self.m + j]];
                        }
                    }
                }
            }
            ValuationKind::UnitDemand => {
                let w = self.m + 1;
                for b in 0..batch {
                    for k in 0..self.k - 1 {
                        for j in 0..self.m {
                            alpha[[b, k, j]] = bundle_out[[b, k * w + j]];
                        }
                    }
                }
            }
        }
        let mut beta = Array2::zeros((batch, self.k));
        beta.slice_mut(ndarray::s![.., ..self.k - 1]).assign(&price_out);
        (
            MenuBatch { alpha, beta },
            MenuBatchCache {
                bundle: bundle_cache,
                price: price_cache,
            },
        )
    }

    /// Menu for one others'-bid vector.
    pub fn forward_menu(&self, bidder: usize, b_minus_i: ArrayView1<'_, R>) -> Menu<R> {
        let x = b_minus_i
            .to_owned()
            .into_shape_with_order((1, b_minus_i.len()))
            .expect("row vector");
        let (mb, _) = self.menus_batch(bidder, &x);
        let bundles = mb.alpha.index_axis(Axis(0), 0).to_owned();
        let prices = mb.beta.index_axis(Axis(0), 0).to_owned();
        Menu { bundles, prices }
    }
}

/// Max absolute row sum: the l-inf operator norm of W.
fn linf_norm<R: Real>(w: &Array2<R>) -> f64 {
    let mut best = 0.0f64;
    for row in w.rows() {
        let s: f64 = row.iter().map(|&x| x.abs().as_f64()).sum();
        best = best.max(s);
    }
    best
}

fn certify_params<R: Real>(params: &MlpParams<R>) -> f64 {
    let mut l = 1.0f64;
    let n_layers = params.layers.len();
    for (i, layer) in params.layers.iter().enumerate() {
        l *= linf_norm(&layer.w);
        if i + 1 < n_layers {
            l *= GELU_LIPSCHITZ;
        }
    }
    match params.head {
        OutputHead::ItemSigmoid => l * SIGMOID_LIPSCHITZ,
        OutputHead::RowSoftmaxWithDummy | OutputHead::Linear => l,
    }
}

/// Per-layer max-abs-row-sum product times activation constants
/// (GELU 1.13, sigmoid 0.25, softmax 1, linear 1), maxed over bidders.
pub fn lipschitz_certify<R: Real>(net: &MenuNetwork<R>) -> LipschitzCert {
    let mut l_a = 0.0f64;
    let mut l_p = 0.0f64;
    for nets in &net.bidders {
        l_a = l_a.max(certify_params(&nets.bundle));
        l_p = l_p.max(certify_params(&nets.price));
    }
    LipschitzCert {
        l_a,
        l_p,
        method: "linf row-sum product; gelu 1.13, sigmoid 0.25, softmax 1".into(),
    }
}

// --- checkpoint serialization ------------------------------------------

type LayerJson<R> = (Vec<Vec<R>>, Vec<R>);

#[derive(Serialize, Deserialize)]
struct BidderJson<R> {
    bundle_net: Vec<LayerJson<R>>,
    price_net: Vec<LayerJson<R>>,
}

#[derive(Serialize, Deserialize)]
struct LipschitzJson {
    #[serde(rename = "L_a")]
    l_a: f64,
    #[serde(rename = "L_p")]
    l_p: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson<R> {
    version: u32,
    kind: ValuationKind,
    n: usize,
    m: usize,
    #[serde(rename = "K")]
    k: usize,
    bidders: Vec<BidderJson<R>>,
    lipschitz: LipschitzJson,
}

const CHECKPOINT_VERSION: u32 = 1;

fn layers_to_json<R: Real>(params: &MlpParams<R>) -> Vec<LayerJson<R>> {
    params
        .layers
        .iter()
        .map(|l| {
            let w = l.w.rows().into_iter().map(|r| r.to_vec()).collect();
            (w, l.b.to_vec())
        })
        .collect()
}

fn layers_from_json<R: Real>(
    layers: Vec<LayerJson<R>>,
    head: OutputHead,
    rows: usize,
    cols: usize,
) -> Result<MlpParams<R>, NnError> {
    let mut built = Vec::with_capacity(layers.len());
    let mut prev_out: Option<usize> = None;
    for (w, b) in layers {
        let out = w.len();
        let inp = w.first().map(|r| r.len()).unwrap_or(0);
        if w.iter().any(|r| r.len() != inp) {
            return Err(NnError::BadCheckpoint("ragged weight matrix".into()));
        }
        if b.len() != out {
            return Err(NnError::BadCheckpoint("bias length mismatch".into()));
        }
        if let Some(p) = prev_out {
            if p != inp {
                return Err(NnError::BadCheckpoint(format!(
                    "layer dimensions do not chain: {p} -> {inp}"
                )));
            }
        }
        prev_out = Some(out);
        let mut wm = Array2::zeros((out, inp));
        for (i, r) in w.into_iter().enumerate() {
            for (j, x) in r.into_iter().enumerate() {
                wm[[i, j]] = x;
            }
        }
        built.push(mlp::Layer::new(wm, Array1::from_vec(b)));
    }
    if prev_out != Some(rows * cols) {
        return Err(NnError::BadCheckpoint(format!(
            "output dimension {:?} does not match expected {}",
            prev_out,
            rows * cols
        )));
    }
    Ok(MlpParams {
        layers: built,
        head,
        rows,
        cols,
    })
}

/// Serializes a network plus its certificate to versioned JSON.
pub fn save_checkpoint<R: Real>(net: &MenuNetwork<R>, cert: &LipschitzCert) -> String {
    let doc = CheckpointJson {
        version: CHECKPOINT_VERSION,
        kind: net.kind,
        n: net.n,
        m: net.m,
        k: net.k,
        bidders: net
            .bidders
            .iter()
            .map(|b| BidderJson {
                bundle_net: layers_to_json(&b.bundle),
                price_net: layers_to_json(&b.price),
            })
            .collect(),
        lipschitz: LipschitzJson {
            l_a: cert.l_a,
            l_p: cert.l_p,
        },
    };
    serde_json::to_string_pretty(&doc).expect("checkpoint serializes")
}

/// Parses a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint<R: Real>(json: &str) -> Result<(MenuNetwork<R>, LipschitzCert), NnError> {
    let doc: CheckpointJson<R> = serde_json::from_str(json)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(NnError::BadCheckpoint(format!(
            "unsupported version {}",
            doc.version
        )));
    }
    if doc.bidders.len() != doc.n {
        return Err(NnError::BadCheckpoint("bidder count mismatch".into()));
    }
    let (head, cols) = match doc.kind {
        ValuationKind::Additive => (OutputHead::ItemSigmoid, doc.m),
        ValuationKind::UnitDemand => (OutputHead::RowSoftmaxWithDummy, doc.m + 1),
    };
    let mut bidders = Vec::with_capacity(doc.n);
    for b in doc.bidders {
        let bundle = layers_from_json(b.bundle_net, head, doc.k - 1, cols)?;
        let price = layers_from_json(b.price_net, OutputHead::Linear, doc.k - 1, 1)?;
        if bundle.input_dim() != (doc.n - 1) * doc.m || price.input_dim() != (doc.n - 1) * doc.m {
            return Err(NnError::BadCheckpoint("input dimension mismatch".into()));
        }
        bidders.push(BidderNets { bundle, price });
    }
    let net = MenuNetwork {
        n: doc.n,
        m: doc.m,
        k: doc.k,
        kind: doc.kind,
        bidders,
    };
    let cert = LipschitzCert {
        l_a: doc.lipschitz.l_a,
        l_p: doc.lipschitz.l_p,
        method: "loaded from checkpoint".into(),
    };
    Ok((net, cert))
}
