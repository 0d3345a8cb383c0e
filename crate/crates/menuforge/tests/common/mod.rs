//! Shared helpers for integration tests: seeded random LP/MILP instance
//! generators and two independent solver oracles (vertex enumeration for
//! LPs, binary enumeration for MILPs).

#![allow(dead_code)]

use menuforge::milp::{
    solve_lp, ConstraintSense, MilpInstance, MilpStatus, ObjectiveSense,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Solves a dense square linear system by Gaussian elimination with partial
/// pivoting. Returns None when the system is (numerically) singular.
pub fn gaussian_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a[r][col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))?;
        if pivot_val < 1e-9 {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for k in col..n {
                    a[r][k] -= f * a[col][k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Iterates all k-subsets of 0..n in lexicographic order.
pub struct Combinations {
    n: usize,
    k: usize,
    idx: Vec<usize>,
    started: bool,
    done: bool,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            k,
            idx: (0..k).collect(),
            started: false,
            done: k > n,
        }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.idx.clone());
        }
        // Advance the rightmost index that still has room.
        let mut i = self.k;
        loop {
            if i == 0 {
                self.done = true;
                return None;
            }
            i -= 1;
            if self.idx[i] < self.n - self.k + i {
                self.idx[i] += 1;
                for j in i + 1..self.k {
                    self.idx[j] = self.idx[j - 1] + 1;
                }
                return Some(self.idx.clone());
            }
        }
    }
}

/// Feasibility check used by the oracles (bounds + constraints within tol).
pub fn point_feasible(inst: &MilpInstance, x: &[f64], tol: f64) -> bool {
    for (v, &xi) in inst.variables.iter().zip(x) {
        if xi < v.lower - tol || xi > v.upper + tol {
            return false;
        }
    }
    for c in &inst.constraints {
        let lhs: f64 = c.coefficients.iter().map(|&(id, a)| a * x[id]).sum();
        let ok = match c.sense {
            ConstraintSense::Le => lhs <= c.rhs + tol,
            ConstraintSense::Ge => lhs >= c.rhs - tol,
            ConstraintSense::Eq => (lhs - c.rhs).abs() <= tol,
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Exhaustive vertex-enumeration LP oracle for small finite-bound instances:
/// every vertex of the feasible polytope is the intersection of `nvars`
/// linearly independent tight planes drawn from the constraints (as
/// equalities) and the box faces. Returns the optimal objective in the
/// instance's own sense, or None when no feasible vertex exists (infeasible,
/// since a nonempty bounded polyhedron has a vertex).
pub fn vertex_oracle(inst: &MilpInstance) -> Option<f64> {
    let nv = inst.variables.len();
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for c in &inst.constraints {
        let mut row = vec![0.0; nv];
        for &(id, a) in &c.coefficients {
            row[id] = a;
        }
        planes.push((row, c.rhs));
    }
    for (j, v) in inst.variables.iter().enumerate() {
        let mut row = vec![0.0; nv];
        row[j] = 1.0;
        planes.push((row.clone(), v.lower));
        if v.upper != v.lower {
            planes.push((row, v.upper));
        }
    }
    let mut best: Option<f64> = None;
    for combo in Combinations::new(planes.len(), nv) {
        let a: Vec<Vec<f64>> = combo.iter().map(|&i| planes[i].0.clone()).collect();
        let b: Vec<f64> = combo.iter().map(|&i| planes[i].1).collect();
        let Some(x) = gaussian_solve(a, b) else {
            continue;
        };
        if !point_feasible(inst, &x, 1e-9) {
            continue;
        }
        let obj = menuforge::milp::objective_value(inst, &x);
        best = Some(match (best, inst.objective.sense) {
            (None, _) => obj,
            (Some(b0), ObjectiveSense::Minimize) => b0.min(obj),
            (Some(b0), ObjectiveSense::Maximize) => b0.max(obj),
        });
    }
    best
}

/// Brute-force MILP oracle: enumerates every assignment of the binaries,
/// fixes them (as continuous fixed variables so validation still passes),
/// and solves the remaining LP. Returns the best objective or None.
pub fn binary_enumeration_oracle(inst: &MilpInstance) -> Option<f64> {
    let binaries: Vec<usize> = inst
        .variables
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_binary)
        .map(|(i, _)| i)
        .collect();
    let mut best: Option<f64> = None;
    for mask in 0..(1u64 << binaries.len()) {
        let mut fixed = inst.clone();
        for (pos, &bv) in binaries.iter().enumerate() {
            let bit = ((mask >> pos) & 1) as f64;
            fixed.variables[bv].is_binary = false;
            fixed.variables[bv].lower = bit;
            fixed.variables[bv].upper = bit;
        }
        let sol = solve_lp(&fixed).expect("well-formed");
        if sol.status != MilpStatus::Optimal {
            continue;
        }
        best = Some(match (best, inst.objective.sense) {
            (None, _) => sol.objective,
            (Some(b0), ObjectiveSense::Minimize) => b0.min(sol.objective),
            (Some(b0), ObjectiveSense::Maximize) => b0.max(sol.objective),
        });
    }
    best
}

fn random_coeff(rng: &mut ChaCha8Rng) -> f64 {
    let c: f64 = rng.gen_range(-5.0..5.0);
    if rng.gen_bool(0.5) {
        // Quarter-integer coefficients induce ties and degenerate vertices.
        (c * 4.0).round() / 4.0
    } else {
        c
    }
}

fn random_sense(rng: &mut ChaCha8Rng) -> ConstraintSense {
    match rng.gen_range(0u32..100) {
        0..=49 => ConstraintSense::Le,
        50..=84 => ConstraintSense::Ge,
        _ => ConstraintSense::Eq,
    }
}

/// Random finite-bound LP with 2-6 variables and 1-8 constraints. Roughly
/// 70% of rows are anchored at a random interior point so a healthy share of
/// instances is feasible; the rest may be infeasible, which the tests also
/// want to see.
pub fn random_lp(rng: &mut ChaCha8Rng) -> MilpInstance {
    let nv = rng.gen_range(2..=6);
    let mr = rng.gen_range(1..=8);
    let mut inst = MilpInstance::new();
    for j in 0..nv {
        let l: f64 = rng.gen_range(-3.0..0.0);
        let span: f64 = rng.gen_range(0.5..4.0);
        inst.add_continuous(format!("x{j}"), l, l + span);
    }
    let anchor: Vec<f64> = inst
        .variables
        .iter()
        .map(|v| rng.gen_range(v.lower..v.upper))
        .collect();
    for _ in 0..mr {
        let mut coeffs = Vec::new();
        for j in 0..nv {
            if rng.gen_bool(0.8) {
                let c = random_coeff(rng);
                if c != 0.0 {
                    coeffs.push((j, c));
                }
            }
        }
        if coeffs.is_empty() {
            coeffs.push((rng.gen_range(0..nv), 1.0));
        }
        let sense = random_sense(rng);
        let anchored = rng.gen_bool(0.7);
        let rhs = if anchored {
            let at: f64 = coeffs.iter().map(|&(id, c)| c * anchor[id]).sum();
            let slack: f64 = rng.gen_range(0.0..2.0);
            match sense {
                ConstraintSense::Le => at + slack,
                ConstraintSense::Ge => at - slack,
                ConstraintSense::Eq => at,
            }
        } else {
            rng.gen_range(-5.0..5.0)
        };
        inst.add_constraint(coeffs, sense, rhs);
    }
    let obj: Vec<(usize, f64)> = (0..nv)
        .filter_map(|j| {
            let c = random_coeff(rng);
            (c != 0.0).then_some((j, c))
        })
        .collect();
    let sense = if rng.gen_bool(0.5) {
        ObjectiveSense::Minimize
    } else {
        ObjectiveSense::Maximize
    };
    inst.set_objective(sense, obj);
    inst
}

/// Random MILP with `nb` binaries (caller picks 3..=12), 0-4 continuous
/// variables, and 2-8 rows; half the instances get a one-hot row over a
/// subset of the binaries, mirroring the structure of real choice models.
pub fn random_milp(rng: &mut ChaCha8Rng, nb: usize) -> MilpInstance {
    let ncont = rng.gen_range(0..=4);
    let mut inst = MilpInstance::new();
    for j in 0..nb {
        inst.add_binary(format!("z{j}"));
    }
    for j in 0..ncont {
        let l: f64 = rng.gen_range(-2.0..0.0);
        let span: f64 = rng.gen_range(0.5..3.0);
        inst.add_continuous(format!("y{j}"), l, l + span);
    }
    let nv = nb + ncont;
    let mr = rng.gen_range(2..=8);
    for _ in 0..mr {
        let mut coeffs = Vec::new();
        for j in 0..nv {
            if rng.gen_bool(0.6) {
                let c = random_coeff(rng);
                if c != 0.0 {
                    coeffs.push((j, c));
                }
            }
        }
        if coeffs.is_empty() {
            coeffs.push((rng.gen_range(0..nv), 1.0));
        }
        let sense = random_sense(rng);
        let rhs: f64 = rng.gen_range(-4.0..4.0);
        inst.add_constraint(coeffs, sense, rhs);
    }
    if rng.gen_bool(0.5) {
        let take = rng.gen_range(2..=nb);
        let coeffs: Vec<(usize, f64)> = (0..take).map(|j| (j, 1.0)).collect();
        inst.add_constraint(coeffs, ConstraintSense::Eq, 1.0);
    }
    let obj: Vec<(usize, f64)> = (0..nv)
        .filter_map(|j| {
            let c = random_coeff(rng);
            (c != 0.0).then_some((j, c))
        })
        .collect();
    let sense = if rng.gen_bool(0.5) {
        ObjectiveSense::Minimize
    } else {
        ObjectiveSense::Maximize
    };
    inst.set_objective(sense, obj);
    inst
}
