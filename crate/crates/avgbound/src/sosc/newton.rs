//! Newton-polytope basis pruning.
//!
//! If a polynomial `p` is a sum of squares, every square in any
//! decomposition has support inside half the Newton polytope of `p`, so a
//! Gram basis monomial `z` is useful only when `2 exps(z)` lies in the
//! convex hull of the support exponents of the body. Membership is decided
//! exactly with a phase-1 simplex over the rationals.

use rug::Rational;

use crate::poly::Monomial;

/// Filters `candidates`, keeping those whose doubled exponent vector lies in
/// the convex hull of `support`.
pub fn newton_prune(support: &[&Monomial], candidates: Vec<Monomial>) -> Vec<Monomial> {
    if support.is_empty() {
        return Vec::new();
    }
    let n = support[0].dim();
    let points: Vec<Vec<i64>> = support
        .iter()
        .map(|m| m.exps().iter().map(|&e| e as i64).collect())
        .collect();
    // Per-coordinate and total-degree bounds give a cheap necessary
    // condition before the exact test.
    let mut lo = points[0].clone();
    let mut hi = points[0].clone();
    let mut dlo = points[0].iter().sum::<i64>();
    let mut dhi = dlo;
    for p in &points[1..] {
        for i in 0..n {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
        let d = p.iter().sum::<i64>();
        dlo = dlo.min(d);
        dhi = dhi.max(d);
    }
    candidates
        .into_iter()
        .filter(|cand| {
            let target: Vec<i64> = cand.exps().iter().map(|&e| 2 * e as i64).collect();
            let deg = target.iter().sum::<i64>();
            if deg < dlo || deg > dhi {
                return false;
            }
            for i in 0..n {
                if target[i] < lo[i] || target[i] > hi[i] {
                    return false;
                }
            }
            if points.iter().any(|p| *p == target) {
                return true;
            }
            hull_contains(&points, &target)
        })
        .collect()
}

/// Exact convex-hull membership: is `target` a convex combination of
/// `points`? Solved as a phase-1 simplex on
/// `sum lambda_j p_j = t, sum lambda_j = 1, lambda >= 0`.
pub fn hull_contains(points: &[Vec<i64>], target: &[i64]) -> bool {
    let n = target.len();
    let npts = points.len();
    let rows = n + 1;
    let cols = npts + rows; // lambdas then artificials
    // Tableau rows: [A | I | b]; objective minimizes the artificial sum.
    let mut tab: Vec<Vec<Rational>> = Vec::with_capacity(rows);
    for r in 0..rows {
        let mut row: Vec<Rational> = Vec::with_capacity(cols + 1);
        for p in points {
            row.push(Rational::from(if r < n { p[r] } else { 1 }));
        }
        for a in 0..rows {
            row.push(Rational::from(i32::from(a == r)));
        }
        row.push(Rational::from(if r < n { target[r] } else { 1 }));
        tab.push(row);
    }
    // All right-hand sides are non-negative here (exponents are >= 0).
    let mut basis: Vec<usize> = (npts..npts + rows).collect();
    // Reduced cost row for the phase-1 objective: z_j - c_j = sum over rows
    // of tableau entries in artificial basis columns.
    let mut obj: Vec<Rational> = vec![Rational::new(); cols + 1];
    for j in 0..=cols {
        let mut acc = Rational::new();
        for r in 0..rows {
            acc += &tab[r][j];
        }
        obj[j] = acc;
    }
    for a in 0..rows {
        obj[npts + a] -= Rational::from(1);
    }

    let max_pivots = 40 * (cols + rows);
    for _ in 0..max_pivots {
        // Bland's rule: first column with positive reduced cost.
        let Some(enter) = (0..cols).find(|&j| !basis.contains(&j) && obj[j] > 0) else {
            break;
        };
        // Ratio test, smallest index on ties.
        let mut leave: Option<usize> = None;
        let mut best: Option<Rational> = None;
        for r in 0..rows {
            if tab[r][enter] > 0 {
                let ratio = Rational::from(&tab[r][cols] / &tab[r][enter]);
                let better = match &best {
                    None => true,
                    Some(b) => ratio < *b,
                };
                if better {
                    best = Some(ratio);
                    leave = Some(r);
                }
            }
        }
        let Some(lr) = leave else {
            // Unbounded phase-1 objective cannot happen; treat as failure.
            return false;
        };
        // Pivot.
        let pivot = tab[lr][enter].clone();
        for v in tab[lr].iter_mut() {
            *v /= &pivot;
        }
        for r in 0..rows {
            if r == lr {
                continue;
            }
            let factor = tab[r][enter].clone();
            if factor == 0 {
                continue;
            }
            for j in 0..=cols {
                let sub = Rational::from(&tab[lr][j] * &factor);
                tab[r][j] -= sub;
            }
        }
        let factor = obj[enter].clone();
        if factor != 0 {
            for j in 0..=cols {
                let sub = Rational::from(&tab[lr][j] * &factor);
                obj[j] -= sub;
            }
        }
        basis[lr] = enter;
    }
    // Feasible iff all artificials can be driven to zero.
    let mut artificial_sum = Rational::new();
    for (r, &bj) in basis.iter().enumerate() {
        if bj >= npts {
            artificial_sum += &tab[r][cols];
        }
    }
    artificial_sum == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_membership_simplexes() {
        // Triangle (0,0), (2,0), (0,2).
        let pts = vec![vec![0, 0], vec![2, 0], vec![0, 2]];
        assert!(hull_contains(&pts, &[0, 0]));
        assert!(hull_contains(&pts, &[1, 1]));
        assert!(hull_contains(&pts, &[2, 0]));
        assert!(!hull_contains(&pts, &[2, 2]));
        assert!(!hull_contains(&pts, &[3, 0]));

        // Segment (2,0)-(0,2): the origin is outside.
        let seg = vec![vec![2, 0], vec![0, 2]];
        assert!(!hull_contains(&seg, &[0, 0]));
        assert!(hull_contains(&seg, &[1, 1]));
    }

    #[test]
    fn prunes_perfect_square_basis() {
        // Support of (x+y)^2: (2,0), (1,1), (0,2). Candidates of degree <= 1
        // are 1, y, x; the constant must be pruned.
        let s1 = Monomial::new(vec![2, 0]);
        let s2 = Monomial::new(vec![1, 1]);
        let s3 = Monomial::new(vec![0, 2]);
        let support = vec![&s1, &s2, &s3];
        let candidates = vec![
            Monomial::new(vec![0, 0]),
            Monomial::new(vec![0, 1]),
            Monomial::new(vec![1, 0]),
        ];
        let kept = newton_prune(&support, candidates);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|m| m.degree() == 1));
    }

    #[test]
    fn motzkin_basis_keeps_interior_monomial() {
        // Motzkin: x^4 y^2 + x^2 y^4 - 3 x^2 y^2 + 1. Half-polytope contains
        // (1,1) (from the interior point (2,2)) and excludes e.g. (3,0).
        let m1 = Monomial::new(vec![4, 2]);
        let m2 = Monomial::new(vec![2, 4]);
        let m3 = Monomial::new(vec![2, 2]);
        let m4 = Monomial::new(vec![0, 0]);
        let support = vec![&m1, &m2, &m3, &m4];
        let candidates = crate::sosc::monomials_up_to(2, 0, 3);
        let kept = newton_prune(&support, candidates);
        let has = |e: &[u32]| kept.iter().any(|m| m.exps() == e);
        assert!(has(&[0, 0]));
        assert!(has(&[1, 1]));
        assert!(has(&[2, 1]));
        assert!(has(&[1, 2]));
        assert!(!has(&[3, 0]));
        assert!(!has(&[1, 0]));
        assert_eq!(kept.len(), 4);
    }
}
