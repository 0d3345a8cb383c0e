//! Best-first branch-and-bound over binary variables.
//!
//! Each node fixes a subset of binaries and is keyed by its parent's LP
//! relaxation objective (a valid bound for the whole subtree). Nodes pop in
//! bound order, so the search can stop the moment the best open bound cannot
//! beat the incumbent. Branching picks the most fractional binary, ties to
//! the lowest variable index, for determinism.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{solve_bounded_lp, LpStatus};
use super::{
    objective_value, MilpError, MilpInstance, MilpSolution, MilpStatus, ObjectiveSense,
};

/// Two incumbent/bound values closer than this are treated as equal; keeps
/// the node count from exploding on exact ties without sacrificing the 1e-7
/// objective guarantee.
const BOUND_TOL: f64 = 1e-9;

struct Node {
    /// Lower bound (minimization form) inherited from the parent LP.
    bound: f64,
    /// Push order; later pushes lose ties so exploration is deterministic.
    seq: u64,
    fixings: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert so the smallest bound pops first.
        other
            .bound
            .partial_cmp(&self.bound)
            .expect("bounds are never NaN")
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Solves the instance to global optimality over its binary variables.
pub fn solve_milp(inst: &MilpInstance) -> Result<MilpSolution, MilpError> {
    inst.validate()?;
    let binaries: Vec<usize> = inst
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_binary)
        .map(|(i, _)| i)
        .collect();
    let base_lower = inst.lower_bounds();
    let base_upper = inst.upper_bounds();
    let sense_mult = match inst.objective.sense {
        ObjectiveSense::Minimize => 1.0,
        ObjectiveSense::Maximize => -1.0,
    };

    let mut nodes = 0usize;
    let mut iterations = 0usize;
    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    heap.push(Node {
        bound: f64::NEG_INFINITY,
        seq,
        fixings: Vec::new(),
    });

    while let Some(node) = heap.pop() {
        if let Some((best, _)) = &incumbent {
            if node.bound >= best - BOUND_TOL {
                // Best-first order: every other open node is at least as bad.
                break;
            }
        }
        let mut lower = base_lower.clone();
        let mut upper = base_upper.clone();
        for &(var, bit) in &node.fixings {
            lower[var] = bit;
            upper[var] = bit;
        }
        let lp = solve_bounded_lp(inst, &lower, &upper)?;
        nodes += 1;
        iterations += lp.iterations;
        match lp.status {
            LpStatus::Infeasible => continue,
            LpStatus::Unbounded => {
                // Unreachable for validated instances (finite bounds);
                // surfaced defensively.
                return Ok(MilpSolution {
                    status: MilpStatus::Unbounded,
                    values: Vec::new(),
                    objective: f64::NAN,
                    nodes,
                    iterations,
                });
            }
            LpStatus::Optimal => {}
        }
        let obj = sense_mult * objective_value(inst, &lp.values);
        if let Some((best, _)) = &incumbent {
            if obj >= best - BOUND_TOL {
                continue;
            }
        }

        // Most fractional binary, ties to the lowest index.
        let mut pick: Option<(usize, f64)> = None;
        for &bv in &binaries {
            let x = lp.values[bv];
            let dist = (x - x.round()).abs();
            if dist > super::INTEGRALITY_TOL {
                match pick {
                    Some((_, d)) if d >= dist => {}
                    _ => pick = Some((bv, dist)),
                }
            }
        }
        match pick {
            None => incumbent = Some((obj, lp.values)),
            Some((bv, _)) => {
                for bit in [0.0, 1.0] {
                    seq += 1;
                    let mut fixings = node.fixings.clone();
                    fixings.push((bv, bit));
                    heap.push(Node {
                        bound: obj,
                        seq,
                        fixings,
                    });
                }
            }
        }
    }

    match incumbent {
        Some((_, values)) => {
            let objective = objective_value(inst, &values);
            Ok(MilpSolution {
                status: MilpStatus::Optimal,
                values,
                objective,
                nodes,
                iterations,
            })
        }
        None => Ok(MilpSolution {
            status: MilpStatus::Infeasible,
            values: Vec::new(),
            objective: f64::NAN,
            nodes,
            iterations,
        }),
    }
}
