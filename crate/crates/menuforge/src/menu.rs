//! Menus: ordered bundle-price lists with a terminal opt-out element.
//!
//! The last element is always the zero bundle at price zero, so a bidder
//! maximizing utility over the menu is never forced below utility 0.

use crate::domain::{DomainError, ValuationKind};
use crate::scalar::Real;
use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

/// One bundle-price pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct MenuElement<R: Real> {
    pub bundle: Vec<R>,
    pub price: R,
}

/// K bundle-price pairs; element K-1 is the opt-out (0-bundle, 0-price).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "", deserialize = ""))]
pub struct Menu<R: Real> {
    /// K x m allocation probabilities.
    pub bundles: Array2<R>,
    /// K prices.
    pub prices: Array1<R>,
}

impl<R: Real> Menu<R> {
    /// Builds a menu from the K-1 learned elements plus the opt-out row.
    pub fn from_learned(bundles: Array2<R>, prices: Array1<R>) -> Self {
        let (k1, m) = bundles.dim();
        assert_eq!(prices.len(), k1, "bundle/price row count mismatch");
        let mut all_bundles = Array2::zeros((k1 + 1, m));
        all_bundles.slice_mut(ndarray::s![..k1, ..]).assign(&bundles);
        let mut all_prices = Array1::zeros(k1 + 1);
        all_prices.slice_mut(ndarray::s![..k1]).assign(&prices);
        Self {
            bundles: all_bundles,
            prices: all_prices,
        }
    }

    pub fn validate(&self, kind: ValuationKind) -> Result<(), DomainError> {
        let (k, m) = self.bundles.dim();
        if k < 2 {
            return Err(DomainError::OutOfDomain(format!(
                "menu needs at least 2 elements, got {k}"
            )));
        }
        if self.prices.len() != k {
            return Err(DomainError::DimMismatch {
                expected: k,
                got: self.prices.len(),
            });
        }
        let last = self.bundles.row(k - 1);
        if last.iter().any(|&a| a != R::zero()) || self.prices[k - 1] != R::zero() {
            return Err(DomainError::OutOfDomain(
                "terminal element must be the zero bundle at price 0".into(),
            ));
        }
        for row in self.bundles.rows() {
            let mut sum = R::zero();
            for &a in row.iter() {
                if a < R::zero() || a > R::one() {
                    return Err(DomainError::OutOfDomain(format!(
                        "bundle entry {a} outside [0,1]"
                    )));
                }
                sum += a;
            }
            if kind == ValuationKind::UnitDemand && sum > R::one() + R::real(1e-12) {
                return Err(DomainError::OutOfDomain(format!(
                    "unit-demand bundle row sums to {sum} > 1 over {m} items"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bundles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn m(&self) -> usize {
        self.bundles.ncols()
    }

    /// Index of the opt-out element.
    pub fn opt_out_index(&self) -> usize {
        self.len() - 1
    }

    pub fn element(&self, k: usize) -> MenuElement<R> {
        MenuElement {
            bundle: self.bundles.row(k).to_vec(),
            price: self.prices[k],
        }
    }

    /// Utility of element k under values v: v . bundle_k - price_k.
    pub fn utility(&self, k: usize, v: ArrayView1<'_, R>) -> R {
        let dot: R = self
            .bundles
            .row(k)
            .iter()
            .zip(v.iter())
            .map(|(&a, &x)| a * x)
            .sum();
        dot - self.prices[k]
    }

    /// All K utilities under values v.
    pub fn utilities(&self, v: ArrayView1<'_, R>) -> Array1<R> {
        let mut out = self.bundles.dot(&v);
        out -= &self.prices;
        out
    }

    /// Returns a copy with the given per-element price deltas applied.
    pub fn with_price_deltas(&self, deltas: &[R]) -> Self {
        assert_eq!(deltas.len(), self.len(), "delta length mismatch");
        let mut prices = self.prices.clone();
        for (p, &d) in prices.iter_mut().zip(deltas) {
            *p += d;
        }
        Self {
            bundles: self.bundles.clone(),
            prices,
        }
    }
}

/// Utility-maximizing element index and its utility; ties break toward the
/// lowest index. The opt-out element pins the result at utility >= 0.
pub fn best_response<R: Real>(
    menu: &Menu<R>,
    v_i: ArrayView1<'_, R>,
    _kind: ValuationKind,
) -> (usize, R) {
    let mut best_k = 0;
    let mut best_u = menu.utility(0, v_i);
    for k in 1..menu.len() {
        let u = menu.utility(k, v_i);
        if u > best_u {
            best_u = u;
            best_k = k;
        }
    }
    (best_k, best_u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_element_menu() -> Menu<f64> {
        Menu::from_learned(array![[1.0, 0.0]], array![0.5])
    }

    #[test]
    fn best_response_two_candidates() {
        let menu = two_element_menu();
        let v = array![0.7, 0.2];
        let (k, u) = best_response(&menu, v.view(), ValuationKind::Additive);
        assert_eq!(k, 0);
        assert!((u - 0.2).abs() < 1e-15);
    }

    #[test]
    fn high_prices_push_to_opt_out() {
        // All prices >= m * v_max make every real element worse than opting
        // out (strictly, for interior valuations).
        let menu = Menu::from_learned(array![[1.0, 1.0], [0.5, 0.5]], array![2.0, 2.5]);
        let v = array![0.97, 0.99];
        let (k, u) = best_response(&menu, v.view(), ValuationKind::Additive);
        assert_eq!(k, menu.opt_out_index());
        assert_eq!(u, 0.0);
    }

    #[test]
    fn ties_break_to_lower_index() {
        let menu = Menu::from_learned(array![[1.0, 0.0], [1.0, 0.0]], array![0.3, 0.3]);
        let v = array![0.9, 0.1];
        let (k, _) = best_response(&menu, v.view(), ValuationKind::Additive);
        assert_eq!(k, 0);
    }

    #[test]
    fn terminal_element_enforced() {
        let menu = two_element_menu();
        assert!(menu.validate(ValuationKind::Additive).is_ok());
        let broken = Menu {
            bundles: array![[1.0, 0.0], [0.0, 0.1]],
            prices: array![0.5, 0.0],
        };
        assert!(broken.validate(ValuationKind::Additive).is_err());
    }

    #[test]
    fn price_deltas_apply() {
        let menu = two_element_menu();
        let shifted = menu.with_price_deltas(&[0.1, 0.0]);
        assert!((shifted.prices[0] - 0.6).abs() < 1e-15);
        assert_eq!(shifted.prices[1], 0.0);
    }

    #[test]
    fn utility_monotone_in_values() {
        let menu = Menu::from_learned(array![[0.8, 0.3], [0.2, 0.9]], array![0.4, 0.35]);
        let v = array![0.5, 0.5];
        let (_, u0) = best_response(&menu, v.view(), ValuationKind::Additive);
        let v2 = array![0.6, 0.5];
        let (_, u1) = best_response(&menu, v2.view(), ValuationKind::Additive);
        assert!(u1 >= u0);
    }
}
