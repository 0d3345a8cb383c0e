//! Fixed-graph MLP: GELU hidden layers plus a task-specific output head.
//!
//! Forward and backward passes are hand-written over ndarray batches; no
//! general autodiff. Backward returns per-layer gradients in layer order.

use crate::scalar::Real;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Supremum of |d/dx gelu(x)|, rounded up.
pub const GELU_LIPSCHITZ: f64 = 1.13;
/// Supremum of the sigmoid derivative.
pub const SIGMOID_LIPSCHITZ: f64 = 0.25;

/// Exact GELU: x * Phi(x) with Phi the standard normal CDF.
pub fn gelu<R: Real>(x: R) -> R {
    let half = R::real(0.5);
    let inv_sqrt2 = R::real(std::f64::consts::FRAC_1_SQRT_2);
    x * half * (R::one() + (x * inv_sqrt2).erf())
}

/// d/dx gelu(x) = Phi(x) + x * phi(x).
pub fn gelu_grad<R: Real>(x: R) -> R {
    let half = R::real(0.5);
    let inv_sqrt2 = R::real(std::f64::consts::FRAC_1_SQRT_2);
    let inv_sqrt_2pi = R::real(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    let phi_cdf = half * (R::one() + (x * inv_sqrt2).erf());
    let pdf = inv_sqrt_2pi * (-(x * x) * half).exp();
    phi_cdf + x * pdf
}

pub fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

/// How the final linear output is mapped to the network's prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    /// Entry-wise sigmoid; rows are (K-1) x m bundles for additive bidders.
    ItemSigmoid,
    /// Row-wise softmax over m+1 entries (last is a dummy item that is
    /// dropped), so kept rows sum to < 1; for unit-demand bidders.
    RowSoftmaxWithDummy,
    /// Identity; used by price networks.
    Linear,
}

/// One dense layer with persistent power-iteration vectors.
#[derive(Debug, Clone)]
pub struct Layer<R: Real> {
    /// out x in.
    pub w: Array2<R>,
    pub b: Array1<R>,
    /// Persistent left/right singular vector estimates for normalization.
    pub u: Array1<R>,
    pub v: Array1<R>,
}

/// Equality looks only at the weights; `u`/`v` are scratch state for power
/// iteration and are re-seeded rather than persisted across save/load.
impl<R: Real> PartialEq for Layer<R> {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.b == other.b
    }
}

impl<R: Real> Layer<R> {
    pub fn new(w: Array2<R>, b: Array1<R>) -> Self {
        let (out, inp) = w.dim();
        assert_eq!(b.len(), out);
        let u = uniform_unit(out);
        let v = uniform_unit(inp.max(1));
        Self { w, b, u, v }
    }

    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }
}

fn uniform_unit<R: Real>(len: usize) -> Array1<R> {
    let val = R::one() / R::real((len as f64).sqrt());
    Array1::from_elem(len, val)
}

/// MLP parameters: hidden layers take GELU, the last layer is linear and
/// feeds the head. `rows`/`cols` describe how the head reshapes the output.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<R: Real> {
    pub layers: Vec<Layer<R>>,
    pub head: OutputHead,
    /// Head reshape: output length = rows * cols (Linear: rows = out, cols = 1).
    pub rows: usize,
    pub cols: usize,
}

impl<R: Real> MlpParams<R> {
    /// Glorot-uniform initialization in +-sqrt(6/(fan_in+fan_out)).
    pub fn init<G: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        rows: usize,
        cols: usize,
        head: OutputHead,
        rng: &mut G,
    ) -> Self {
        let out_dim = rows * cols;
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(out_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (inp, out) = (win[0], win[1]);
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let w = Array2::from_shape_fn((out, inp), |_| {
                R::real(rng.gen_range(-bound..=bound))
            });
            let b = Array1::zeros(out);
            layers.push(Layer::new(w, b));
        }
        Self {
            layers,
            head,
            rows,
            cols,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Raw linear output before the head, with caches for backward.
    fn forward_raw(&self, x: &Array2<R>) -> (Array2<R>, ForwardCache<R>) {
        let mut cache = ForwardCache {
            activations: Vec::with_capacity(self.layers.len()),
            pre_gelu: Vec::with_capacity(self.layers.len().saturating_sub(1)),
            raw: None,
            softmax: None,
        };
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            cache.activations.push(h.clone());
            let mut z = h.dot(&layer.w.t());
            z += &layer.b;
            if l + 1 < self.layers.len() {
                cache.pre_gelu.push(z.clone());
                z.mapv_inplace(gelu);
            }
            h = z;
        }
        (h, cache)
    }

    /// Head-applied forward over a batch (rows are samples).
    pub fn forward(&self, x: &Array2<R>) -> (Array2<R>, ForwardCache<R>) {
        let (raw, mut cache) = self.forward_raw(x);
        let out = match self.head {
            OutputHead::Linear => raw,
            OutputHead::ItemSigmoid => {
                cache.raw = Some(raw.clone());
                raw.mapv(sigmoid)
            }
            OutputHead::RowSoftmaxWithDummy => {
                // Softmax over each group of `cols` entries; output keeps
                // all columns here, callers drop the dummy column.
                let mut z = raw;
                for mut sample in z.rows_mut() {
                    for r in 0..self.rows {
                        let seg = &mut sample.as_slice_mut().expect("contiguous row")
                            [r * self.cols..(r + 1) * self.cols];
                        softmax_in_place(seg);
                    }
                }
                cache.softmax = Some(z.clone());
                z
            }
        };
        (out, cache)
    }

    /// Backward pass: dL/d(head output) -> per-layer gradients.
    pub fn backward(&self, dout: &Array2<R>, cache: &ForwardCache<R>) -> MlpGrads<R> {
        let mut dz = match self.head {
            OutputHead::Linear => dout.clone(),
            OutputHead::ItemSigmoid => {
                let raw = cache.raw.as_ref().expect("sigmoid cache");
                let mut d = dout.clone();
                d.zip_mut_with(raw, |g, &z| {
                    let s = sigmoid(z);
                    *g = *g * s * (R::one() - s);
                });
                d
            }
            OutputHead::RowSoftmaxWithDummy => {
                let s = cache.softmax.as_ref().expect("softmax cache");
                let mut d = dout.clone();
                for (mut drow, srow) in d.rows_mut().into_iter().zip(s.rows()) {
                    let dslice = drow.as_slice_mut().expect("contiguous row");
                    let sslice = srow.as_slice().expect("contiguous row");
                    for r in 0..self.rows {
                        let lo = r * self.cols;
                        let hi = lo + self.cols;
                        let mut dot = R::zero();
                        for t in lo..hi {
                            dot += dslice[t] * sslice[t];
                        }
                        for t in lo..hi {
                            dslice[t] = sslice[t] * (dslice[t] - dot);
                        }
                    }
                }
                d
            }
        };

        let mut grads = MlpGrads {
            layers: Vec::with_capacity(self.layers.len()),
        };
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = &cache.activations[l];
            let dw = dz.t().dot(h);
            let db = dz.sum_axis(Axis(0));
            if l > 0 {
                let mut dh = dz.dot(&layer.w);
                dh.zip_mut_with(&cache.pre_gelu[l - 1], |g, &z| *g = *g * gelu_grad(z));
                dz = dh;
            }
            grads.layers.push(LayerGrads { dw, db });
        }
        grads.layers.reverse();
        grads
    }
}

fn softmax_in_place<R: Real>(seg: &mut [R]) {
    let mut hi = seg[0];
    for &x in seg.iter() {
        if x > hi {
            hi = x;
        }
    }
    let mut sum = R::zero();
    for x in seg.iter_mut() {
        *x = (*x - hi).exp();
        sum += *x;
    }
    for x in seg.iter_mut() {
        *x /= sum;
    }
}

/// Intermediate values a backward pass needs.
pub struct ForwardCache<R: Real> {
    activations: Vec<Array2<R>>,
    pre_gelu: Vec<Array2<R>>,
    raw: Option<Array2<R>>,
    softmax: Option<Array2<R>>,
}

impl<R: Real> ForwardCache<R> {
    fn default_like() -> Self {
        Self {
            activations: Vec::new(),
            pre_gelu: Vec::new(),
            raw: None,
            softmax: None,
        }
    }
}

impl<R: Real> Default for ForwardCache<R> {
    fn default() -> Self {
        Self::default_like()
    }
}

#[derive(Debug, Clone)]
pub struct LayerGrads<R: Real> {
    pub dw: Array2<R>,
    pub db: Array1<R>,
}

#[derive(Debug, Clone)]
pub struct MlpGrads<R: Real> {
    pub layers: Vec<LayerGrads<R>>,
}

impl<R: Real> MlpGrads<R> {
    pub fn zeros_like(params: &MlpParams<R>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrads {
                    dw: Array2::zeros(l.w.dim()),
                    db: Array1::zeros(l.b.len()),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu(10.0f64) - 10.0).abs() < 1e-9);
        assert!(gelu(-10.0f64).abs() < 1e-9);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        let h = 1e-6f64;
        for x in [-2.0f64, -0.5, 0.3, 1.7] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((gelu_grad(x) - fd).abs() < 1e-6, "x={x}");
        }
    }

    #[test]
    fn gelu_slope_stays_below_certified_constant() {
        for t in -4000..=4000 {
            let x = t as f64 / 1000.0;
            assert!(gelu_grad(x).abs() <= GELU_LIPSCHITZ);
        }
    }

    #[test]
    fn zero_net_sigmoid_head_outputs_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = MlpParams::<f64>::init(2, &[4], 3, 2, OutputHead::ItemSigmoid, &mut rng);
        for l in &mut p.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let x = Array2::zeros((1, 2));
        let (out, _) = p.forward(&x);
        for &v in out.iter() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn zero_net_softmax_head_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p =
            MlpParams::<f64>::init(2, &[4], 2, 3, OutputHead::RowSoftmaxWithDummy, &mut rng);
        for l in &mut p.layers {
            l.w.fill(0.0);
            l.b.fill(0.0);
        }
        let x = Array2::zeros((1, 2));
        let (out, _) = p.forward(&x);
        for &v in out.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_input_dimension_is_bias_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::<f64>::init(0, &[4], 2, 1, OutputHead::Linear, &mut rng);
        let x = Array2::zeros((3, 0));
        let (out, _) = p.forward(&x);
        assert_eq!(out.dim(), (3, 2));
        assert_eq!(out.row(0), out.row(1));
    }

    fn flatten_params(p: &MlpParams<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &p.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    fn set_params(p: &mut MlpParams<f64>, flat: &[f64]) {
        let mut at = 0;
        for l in &mut p.layers {
            for w in l.w.iter_mut() {
                *w = flat[at];
                at += 1;
            }
            for b in l.b.iter_mut() {
                *b = flat[at];
                at += 1;
            }
        }
    }

    fn flatten_grads(g: &MlpGrads<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &g.layers {
            out.extend(l.dw.iter().copied());
            out.extend(l.db.iter().copied());
        }
        out
    }

    /// Scalar loss = weighted sum of head outputs; checks full backprop.
    fn check_gradient(head: OutputHead, rows: usize, cols: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = MlpParams::<f64>::init(3, &[5, 4], rows, cols, head, &mut rng);
        let x = Array2::from_shape_fn((4, 3), |_| rng.gen_range(-1.0..1.0));
        let wts = Array2::from_shape_fn((4, rows * cols), |_| rng.gen_range(-1.0..1.0));

        let loss = |p: &MlpParams<f64>| -> f64 {
            let (out, _) = p.forward(&x);
            (&out * &wts).sum()
        };
        let (_, cache) = p.forward(&x);
        let grads = p.backward(&wts, &cache);

        let base = flatten_params(&p);
        let analytic = flatten_grads(&grads);
        let h = 1e-5;
        let mut max_rel: f64 = 0.0;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            set_params(&mut p, &plus);
            let fp = loss(&p);
            let mut minus = base.clone();
            minus[i] -= h;
            set_params(&mut p, &minus);
            let fm = loss(&p);
            set_params(&mut p, &base);
            let fd = (fp - fm) / (2.0 * h);
            let denom = analytic[i].abs().max(fd.abs()).max(1.0);
            max_rel = max_rel.max((analytic[i] - fd).abs() / denom);
        }
        assert!(max_rel < 1e-6, "max rel err {max_rel} for {head:?}");
    }

    #[test]
    fn backward_matches_finite_difference_linear() {
        check_gradient(OutputHead::Linear, 3, 1);
    }

    #[test]
    fn backward_matches_finite_difference_sigmoid() {
        check_gradient(OutputHead::ItemSigmoid, 2, 2);
    }

    #[test]
    fn backward_matches_finite_difference_softmax() {
        check_gradient(OutputHead::RowSoftmaxWithDummy, 2, 3);
    }
}
