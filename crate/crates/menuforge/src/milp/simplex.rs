//! Bounded-variable two-phase primal simplex on a dense tableau.
//!
//! Variables may sit nonbasic at either bound (or at zero when free, which
//! only internal slack variables can be). Phase 1 minimizes the total
//! artificial infeasibility; phase 2 minimizes the caller's objective.
//! Pivoting uses a steepest-reduced-cost rule with a largest-pivot tie-break;
//! if the objective stalls long enough to suggest cycling, the solve switches
//! permanently to Bland's rule, which guarantees termination.

use ndarray::Array2;

use super::{ConstraintSense, MilpError, MilpInstance, ObjectiveSense};

/// Reduced-cost tolerance for optimality.
const RC_TOL: f64 = 1e-9;
/// Minimum magnitude for a tableau entry to act as a pivot / ratio blocker.
const PIV_TOL: f64 = 1e-9;
/// Slack when comparing ratio-test candidates.
const RATIO_EPS: f64 = 1e-12;
/// Iterations without objective improvement before engaging Bland's rule.
const STALL_LIMIT: usize = 100;
/// Phase-1 residual above which the instance is declared infeasible.
const PHASE1_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct LpResult {
    pub status: LpStatus,
    /// Structural variable values; empty unless `Optimal`.
    pub values: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VStat {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic at value 0 with both bounds infinite (slacks only).
    Free,
}

struct Tableau {
    /// Current B^{-1}A over all columns (structurals, slacks, artificials).
    t: Array2<f64>,
    /// As-built coefficient rows (rows pre-negated so the initial basis
    /// matrix is the identity); used to refresh basic values.
    b0: Vec<f64>,
    /// Initial basic column of each row (gives B^{-1} = t[:, init_basis]).
    init_basis: Vec<usize>,
    basis: Vec<usize>,
    xb: Vec<f64>,
    status: Vec<VStat>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    iterations: usize,
}

impl Tableau {
    fn ncols(&self) -> usize {
        self.status.len()
    }

    fn nrows(&self) -> usize {
        self.basis.len()
    }

    /// Value of any variable under the current basis/status assignment.
    fn value(&self, j: usize) -> f64 {
        match self.status[j] {
            VStat::AtLower => self.lb[j],
            VStat::AtUpper => self.ub[j],
            VStat::Free => 0.0,
            VStat::Basic => {
                let row = self.basis.iter().position(|&b| b == j).expect("basic var");
                self.xb[row]
            }
        }
    }

    /// Recomputes basic values from scratch: x_B = B^{-1}b - sum over
    /// nonbasic columns of (B^{-1}A_j) * value_j. Clears accumulated drift.
    fn refresh_xb(&mut self) {
        let m = self.nrows();
        let mut fresh = vec![0.0; m];
        for i in 0..m {
            let mut acc = 0.0;
            for (k, &col) in self.init_basis.iter().enumerate() {
                acc += self.t[[i, col]] * self.b0[k];
            }
            fresh[i] = acc;
        }
        for j in 0..self.ncols() {
            let v = match self.status[j] {
                VStat::Basic => continue,
                VStat::AtLower => self.lb[j],
                VStat::AtUpper => self.ub[j],
                VStat::Free => 0.0,
            };
            if v != 0.0 {
                for i in 0..m {
                    fresh[i] -= self.t[[i, j]] * v;
                }
            }
        }
        self.xb = fresh;
    }

    fn objective(&self, c: &[f64]) -> f64 {
        let mut obj = 0.0;
        for (i, &b) in self.basis.iter().enumerate() {
            obj += c[b] * self.xb[i];
        }
        for j in 0..self.ncols() {
            match self.status[j] {
                VStat::Basic => {}
                VStat::AtLower => obj += c[j] * self.lb[j],
                VStat::AtUpper => obj += c[j] * self.ub[j],
                VStat::Free => {}
            }
        }
        obj
    }

    /// Runs the simplex loop minimizing `c`. Returns `Optimal` or
    /// `Unbounded` (phase 1 objectives are bounded below, so `Unbounded`
    /// there indicates numerical breakdown and is reported as an error by
    /// the caller via the phase-1 residual check never being reached).
    fn minimize(&mut self, c: &[f64], max_iter: usize) -> Result<LpStatus, MilpError> {
        let m = self.nrows();
        let n = self.ncols();
        let mut bland = false;
        let mut stall = 0usize;
        let mut best_obj = f64::INFINITY;
        let mut local_iter = 0usize;
        loop {
            local_iter += 1;
            self.iterations += 1;
            if local_iter > max_iter {
                return Err(MilpError::Internal(format!(
                    "simplex iteration limit {max_iter} exceeded"
                )));
            }
            if local_iter % 256 == 0 {
                self.refresh_xb();
            }

            // Reduced costs d_j = c_j - c_B . T[:, j].
            let mut y = vec![0.0; m];
            for (i, &b) in self.basis.iter().enumerate() {
                y[i] = c[b];
            }
            let y_zero = y.iter().all(|&v| v == 0.0);
            let mut entering: Option<(usize, f64, f64)> = None; // (j, d_j, score)
            for j in 0..n {
                let st = self.status[j];
                if st == VStat::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                let mut d = c[j];
                if !y_zero {
                    for i in 0..m {
                        d -= y[i] * self.t[[i, j]];
                    }
                }
                let eligible = match st {
                    VStat::AtLower => d < -RC_TOL,
                    VStat::AtUpper => d > RC_TOL,
                    VStat::Free => d.abs() > RC_TOL,
                    VStat::Basic => false,
                };
                if !eligible {
                    continue;
                }
                if bland {
                    entering = Some((j, d, 0.0));
                    break;
                }
                let score = d.abs();
                match entering {
                    Some((_, _, s)) if s >= score => {}
                    _ => entering = Some((j, d, score)),
                }
            }
            let (j, d) = match entering {
                None => {
                    self.refresh_xb();
                    return Ok(LpStatus::Optimal);
                }
                Some((j, d, _)) => (j, d),
            };

            // Direction of travel for the entering variable.
            let dir = match self.status[j] {
                VStat::AtLower => 1.0,
                VStat::AtUpper => -1.0,
                VStat::Free => {
                    if d < 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                VStat::Basic => unreachable!(),
            };
            let limit_self = if self.lb[j].is_finite() && self.ub[j].is_finite() {
                self.ub[j] - self.lb[j]
            } else {
                f64::INFINITY
            };

            // Ratio test: how far can the entering variable move before a
            // basic variable hits one of its bounds?
            let mut t_rows = f64::INFINITY;
            let mut leave: Option<usize> = None;
            for i in 0..m {
                let delta = -dir * self.t[[i, j]];
                let bi = self.basis[i];
                let t_i = if delta < -PIV_TOL {
                    if self.lb[bi].is_finite() {
                        ((self.xb[i] - self.lb[bi]) / -delta).max(0.0)
                    } else {
                        continue;
                    }
                } else if delta > PIV_TOL {
                    if self.ub[bi].is_finite() {
                        ((self.ub[bi] - self.xb[i]) / delta).max(0.0)
                    } else {
                        continue;
                    }
                } else {
                    continue;
                };
                if t_i < t_rows - RATIO_EPS {
                    t_rows = t_i;
                    leave = Some(i);
                } else if t_i <= t_rows + RATIO_EPS {
                    if let Some(r) = leave {
                        let better = if bland {
                            self.basis[i] < self.basis[r]
                        } else {
                            self.t[[i, j]].abs() > self.t[[r, j]].abs()
                        };
                        if better {
                            t_rows = t_rows.min(t_i);
                            leave = Some(i);
                        }
                    } else {
                        t_rows = t_i;
                        leave = Some(i);
                    }
                }
            }

            let t_star = limit_self.min(t_rows);
            if !t_star.is_finite() {
                return Ok(LpStatus::Unbounded);
            }

            // Move all basic variables by their per-unit rates.
            if t_star > 0.0 {
                for i in 0..m {
                    self.xb[i] += -dir * self.t[[i, j]] * t_star;
                }
            }

            if limit_self <= t_rows {
                // Bound flip: the entering variable crosses to its other
                // bound without any basis change.
                self.status[j] = match self.status[j] {
                    VStat::AtLower => VStat::AtUpper,
                    VStat::AtUpper => VStat::AtLower,
                    _ => unreachable!("free variables have no finite span"),
                };
            } else {
                let r = leave.expect("finite row ratio implies a leaving row");
                let enter_from = match self.status[j] {
                    VStat::AtLower => self.lb[j],
                    VStat::AtUpper => self.ub[j],
                    VStat::Free => 0.0,
                    VStat::Basic => unreachable!(),
                };
                let lv = self.basis[r];
                // Which bound did the leaving variable block at?
                let delta_r = -dir * self.t[[r, j]];
                self.status[lv] = if delta_r < 0.0 {
                    VStat::AtLower
                } else {
                    VStat::AtUpper
                };
                self.status[j] = VStat::Basic;
                self.basis[r] = j;
                self.xb[r] = enter_from + dir * t_star;
                // Snap the departed variable's row-mates: Gauss-Jordan pivot.
                let p = self.t[[r, j]];
                let mut pivot_row = self.t.row(r).to_owned();
                pivot_row.mapv_inplace(|v| v / p);
                self.t.row_mut(r).assign(&pivot_row);
                for i in 0..m {
                    if i == r {
                        continue;
                    }
                    let f = self.t[[i, j]];
                    if f != 0.0 {
                        let mut row = self.t.row_mut(i);
                        row.scaled_add(-f, &pivot_row);
                        // Stamp out roundoff in the pivot column.
                        row[j] = 0.0;
                    }
                }
            }

            let obj = self.objective(c);
            if obj < best_obj - 1e-12 {
                best_obj = obj;
                stall = 0;
            } else {
                stall += 1;
                if stall >= STALL_LIMIT {
                    bland = true;
                }
            }
        }
    }
}

/// Solves the LP min/max c.x subject to the instance's constraints with the
/// given working bounds (which override the declared ones; branch-and-bound
/// passes tightened binary bounds here). Integrality is ignored.
pub(crate) fn solve_bounded_lp(
    inst: &MilpInstance,
    lower: &[f64],
    upper: &[f64],
) -> Result<LpResult, MilpError> {
    let ns = inst.variables.len();
    let m = inst.constraints.len();
    debug_assert_eq!(lower.len(), ns);
    debug_assert_eq!(upper.len(), ns);
    for j in 0..ns {
        if lower[j] > upper[j] {
            // Tightened bounds can cross only through branching bugs;
            // treat as plainly infeasible.
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                values: Vec::new(),
                iterations: 0,
            });
        }
    }

    // Initial nonbasic placement for structural variables.
    let init_val = |j: usize| -> f64 {
        if lower[j].is_finite() {
            lower[j]
        } else if upper[j].is_finite() {
            upper[j]
        } else {
            0.0
        }
    };

    // Slack bounds per row sense (constraint row reads a.x + s = rhs).
    let slack_bounds = |sense: ConstraintSense| -> (f64, f64) {
        match sense {
            ConstraintSense::Le => (0.0, f64::INFINITY),
            ConstraintSense::Ge => (f64::NEG_INFINITY, 0.0),
            ConstraintSense::Eq => (0.0, 0.0),
        }
    };

    // First pass: residuals decide which rows need an artificial variable.
    #[derive(Clone, Copy)]
    enum RowInit {
        SlackBasic(f64),
        Artificial { slack_at_upper: bool, resid: f64 },
    }
    let mut row_init = Vec::with_capacity(m);
    let mut n_art = 0usize;
    for c in &inst.constraints {
        let mut q = c.rhs;
        for &(id, a) in &c.coefficients {
            q -= a * init_val(id);
        }
        let (ls, us) = slack_bounds(c.sense);
        if q >= ls - 1e-12 && q <= us + 1e-12 {
            row_init.push(RowInit::SlackBasic(q));
        } else {
            let slack_at_upper = q > us;
            let s_val = if slack_at_upper { us } else { ls };
            row_init.push(RowInit::Artificial {
                slack_at_upper,
                resid: q - s_val,
            });
            n_art += 1;
        }
    }

    let ncols = ns + m + n_art;
    let mut t = Array2::<f64>::zeros((m, ncols));
    let mut b0 = vec![0.0; m];
    let mut lb = vec![0.0; ncols];
    let mut ub = vec![0.0; ncols];
    lb[..ns].copy_from_slice(lower);
    ub[..ns].copy_from_slice(upper);
    let mut status = vec![VStat::AtLower; ncols];
    for j in 0..ns {
        status[j] = if lower[j].is_finite() {
            VStat::AtLower
        } else if upper[j].is_finite() {
            VStat::AtUpper
        } else {
            VStat::Free
        };
    }
    let mut basis = vec![0usize; m];
    let mut xb = vec![0.0; m];
    let mut init_basis = vec![0usize; m];

    let mut next_art = ns + m;
    for (i, c) in inst.constraints.iter().enumerate() {
        let (ls, us) = slack_bounds(c.sense);
        let scol = ns + i;
        lb[scol] = ls;
        ub[scol] = us;
        let sign = match row_init[i] {
            RowInit::SlackBasic(_) => 1.0,
            RowInit::Artificial { resid, .. } => {
                if resid < 0.0 {
                    -1.0
                } else {
                    1.0
                }
            }
        };
        for &(id, a) in &c.coefficients {
            t[[i, id]] = sign * a;
        }
        t[[i, scol]] = sign;
        b0[i] = sign * c.rhs;
        match row_init[i] {
            RowInit::SlackBasic(q) => {
                status[scol] = VStat::Basic;
                basis[i] = scol;
                init_basis[i] = scol;
                xb[i] = q;
            }
            RowInit::Artificial {
                slack_at_upper,
                resid,
            } => {
                status[scol] = if slack_at_upper {
                    VStat::AtUpper
                } else {
                    VStat::AtLower
                };
                let acol = next_art;
                next_art += 1;
                t[[i, acol]] = 1.0;
                lb[acol] = 0.0;
                ub[acol] = f64::INFINITY;
                status[acol] = VStat::Basic;
                basis[i] = acol;
                init_basis[i] = acol;
                xb[i] = resid.abs();
            }
        }
    }

    let mut tab = Tableau {
        t,
        b0,
        init_basis,
        basis,
        xb,
        status,
        lb,
        ub,
        iterations: 0,
    };
    let max_iter = 2000 + 60 * (m + ncols);

    if n_art > 0 {
        let mut c1 = vec![0.0; ncols];
        for c in c1.iter_mut().skip(ns + m) {
            *c = 1.0;
        }
        match tab.minimize(&c1, max_iter)? {
            LpStatus::Optimal => {}
            _ => {
                return Err(MilpError::Internal(
                    "phase-1 objective is bounded below yet did not converge".into(),
                ))
            }
        }
        let resid = tab.objective(&c1);
        if resid > PHASE1_TOL {
            return Ok(LpResult {
                status: LpStatus::Infeasible,
                values: Vec::new(),
                iterations: tab.iterations,
            });
        }
        // Pin artificials at zero for phase 2; any still basic sit at ~0 and
        // exit at a zero-length ratio if a pivot tries to move them.
        for a in 0..n_art {
            let col = ns + m + a;
            tab.lb[col] = 0.0;
            tab.ub[col] = 0.0;
            if tab.status[col] != VStat::Basic {
                tab.status[col] = VStat::AtLower;
            }
        }
        tab.refresh_xb();
    }

    let mut c2 = vec![0.0; ncols];
    let sign = match inst.objective.sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };
    for &(id, c) in &inst.objective.coefficients {
        c2[id] += sign * c;
    }
    let status = tab.minimize(&c2, max_iter)?;
    match status {
        LpStatus::Optimal => {
            let values: Vec<f64> = (0..ns).map(|j| tab.value(j)).collect();
            Ok(LpResult {
                status: LpStatus::Optimal,
                values,
                iterations: tab.iterations,
            })
        }
        LpStatus::Unbounded => Ok(LpResult {
            status: LpStatus::Unbounded,
            values: Vec::new(),
            iterations: tab.iterations,
        }),
        LpStatus::Infeasible => unreachable!("phase 2 never reports infeasible"),
    }
}
