//! Box-constrained convex quadratic minimisation,
//!
//! ```text
//! min 0.5 x^T G x - c^T x   subject to   lo <= x <= hi,
//! ```
//!
//! for small dense positive semidefinite `G`, by a primal active-set method.
//! Subproblems on the free set use the pseudo-inverse, so a singular `G`
//! yields the minimum-norm solution of the free subproblem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Free,
    Lower,
    Upper,
    Fixed,
}

/// Largest enumeration fallback; `3^8` face assignments.
const MAX_ENUMERATION: usize = 8;

pub fn solve_box_qp(g: &DMatrix<f64>, c: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let n = c.len();
    debug_assert!(lo.iter().zip(hi).all(|(l, h)| l <= h));
    if n == 0 {
        return DVector::zeros(0);
    }
    let scale = 1.0
        + c.amax()
        + g.amax() * lo.iter().chain(hi).fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-13 * scale;

    let mut x = DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut state: Vec<State> = (0..n)
        .map(|i| if lo[i] == hi[i] { State::Fixed } else { State::Free })
        .collect();

    for _ in 0..(50 + 20 * n) {
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == State::Free).collect();
        let target = free_minimiser(g, c, &x, &free);

        let mut alpha = 1.0;
        let mut blocking: Option<(usize, State)> = None;
        for (k, &i) in free.iter().enumerate() {
            let p = target[k] - x[i];
            if target[k] < lo[i] && p < 0.0 {
                let a = ((lo[i] - x[i]) / p).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, State::Lower));
                }
            } else if target[k] > hi[i] && p > 0.0 {
                let a = ((hi[i] - x[i]) / p).max(0.0);
                if a < alpha {
                    alpha = a;
                    blocking = Some((i, State::Upper));
                }
            }
        }

        match blocking {
            None => {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = target[k];
                }
                let grad = g * &x - c;
                let mut worst: Option<(usize, f64)> = None;
                for i in 0..n {
                    let violation = match state[i] {
                        State::Lower => -grad[i],
                        State::Upper => grad[i],
                        _ => continue,
                    };
                    if violation > tol && worst.is_none_or(|(_, v)| violation > v) {
                        worst = Some((i, violation));
                    }
                }
                match worst {
                    Some((i, _)) => state[i] = State::Free,
                    None => return x,
                }
            }
            Some((j, bound)) => {
                for (k, &i) in free.iter().enumerate() {
                    x[i] = (x[i] + alpha * (target[k] - x[i])).clamp(lo[i], hi[i]);
                }
                x[j] = if bound == State::Lower { lo[j] } else { hi[j] };
                state[j] = bound;
            }
        }
    }

    if n <= MAX_ENUMERATION {
        enumerate_faces(g, c, lo, hi, tol)
    } else {
        x
    }
}

/// Minimiser over the free coordinates with the rest held at `x`.
fn free_minimiser(g: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, free: &[usize]) -> DVector<f64> {
    let m = free.len();
    if m == 0 {
        return DVector::zeros(0);
    }
    let n = c.len();
    let g_ff = DMatrix::from_fn(m, m, |a, b| g[(free[a], free[b])]);
    let rhs = DVector::from_fn(m, |a, _| {
        let i = free[a];
        let mut r = c[i];
        for j in 0..n {
            if !free.contains(&j) {
                r -= g[(i, j)] * x[j];
            }
        }
        r
    });
    pinv_solve(g_ff, &rhs)
}

fn pinv_solve(m: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if m.nrows() == 1 {
        let a = m[(0, 0)];
        return DVector::from_element(1, if a > 0.0 { rhs[0] / a } else { 0.0 });
    }
    let eig = SymmetricEigen::new(m);
    let lmax = eig.eigenvalues.amax();
    let cutoff = lmax * 1e-12;
    let proj = eig.eigenvectors.transpose() * rhs;
    let scaled = DVector::from_fn(proj.len(), |k, _| {
        let l = eig.eigenvalues[k];
        if l > cutoff && l > 0.0 {
            proj[k] / l
        } else {
            0.0
        }
    });
    &eig.eigenvectors * scaled
}

fn objective(g: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>) -> f64 {
    0.5 * x.dot(&(g * x)) - c.dot(x)
}

/// Exhaustive search over which coordinates sit on which bound.
fn enumerate_faces(g: &DMatrix<f64>, c: &DVector<f64>, lo: &[f64], hi: &[f64], tol: f64) -> DVector<f64> {
    let n = c.len();
    let mut best = DVector::from_fn(n, |i, _| 0.0f64.clamp(lo[i], hi[i]));
    let mut best_obj = objective(g, c, &best);
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut x = DVector::zeros(n);
        let mut free = Vec::new();
        let mut k = code;
        for i in 0..n {
            match k % 3 {
                0 => free.push(i),
                1 => x[i] = lo[i],
                _ => x[i] = hi[i],
            }
            k /= 3;
        }
        let target = free_minimiser(g, c, &x, &free);
        let feasible = free
            .iter()
            .enumerate()
            .all(|(a, &i)| target[a] >= lo[i] - tol && target[a] <= hi[i] + tol);
        if !feasible {
            continue;
        }
        for (a, &i) in free.iter().enumerate() {
            x[i] = target[a].clamp(lo[i], hi[i]);
        }
        let obj = objective(g, c, &x);
        if obj < best_obj {
            best_obj = obj;
            best = x;
        }
    }
    best
}

/// Largest violation of the first-order optimality conditions at `x`.
///
/// A coordinate strictly inside its box must have zero gradient; one on a
/// bound may only have a gradient pushing outward.
pub fn kkt_violation(g: &DMatrix<f64>, c: &DVector<f64>, x: &DVector<f64>, lo: &[f64], hi: &[f64]) -> f64 {
    let grad = g * x - c;
    (0..x.len())
        .map(|i| {
            let at_lo = x[i] <= lo[i];
            let at_hi = x[i] >= hi[i];
            match (at_lo, at_hi) {
                (true, true) => 0.0,
                (true, false) => (-grad[i]).max(0.0),
                (false, true) => grad[i].max(0.0),
                (false, false) => grad[i].abs(),
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_form(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        (a.transpose() * a, a.transpose() * b)
    }

    #[test]
    fn unconstrained_interior_solution() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let c = DVector::from_row_slice(&[1.0, 1.0]);
        let x = solve_box_qp(&g, &c, &[-5.0, -5.0], &[5.0, 5.0]);
        assert!((x[0] - 0.5).abs() < 1e-15 && (x[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn clips_to_active_bound() {
        let g = DMatrix::from_row_slice(1, 1, &[1.0]);
        let c = DVector::from_row_slice(&[3.0]);
        let x = solve_box_qp(&g, &c, &[0.0], &[1.0]);
        assert_eq!(x[0], 1.0);
        assert_eq!(kkt_violation(&g, &c, &x, &[0.0], &[1.0]), 0.0);
    }

    #[test]
    fn singular_gram_gives_min_norm_interior_point() {
        // one observation, two identical columns: x0 + x1 = 1
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0]);
        let (g, c) = normal_form(&a, &b);
        let x = solve_box_qp(&g, &c, &[-1.0, -1.0], &[1.0, 1.0]);
        assert!((x[0] - 0.5).abs() < 1e-12 && (x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_instances_satisfy_kkt_and_beat_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..300 {
            let n = rng.random_range(1..=5);
            let rows = rng.random_range(1..=8);
            let a = DMatrix::from_fn(rows, n, |_, _| rng.random_range(-2.0..2.0));
            let b = DVector::from_fn(rows, |_, _| rng.random_range(-3.0..3.0));
            let (g, c) = normal_form(&a, &b);
            let lo: Vec<f64> = (0..n).map(|_| -rng.random_range(0.0..1.0)).collect();
            let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let x = solve_box_qp(&g, &c, &lo, &hi);
            assert!(kkt_violation(&g, &c, &x, &lo, &hi) < 1e-9);
            let brute = enumerate_faces(&g, &c, &lo, &hi, 1e-12);
            assert!(objective(&g, &c, &x) <= objective(&g, &c, &brute) + 1e-10);
        }
    }
}
