use super::{CostMatrix, TransportPlan};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest instance the exhaustive oracle accepts (8! = 40320 permutations).
pub const ORACLE_LIMIT: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct OracleSolution<T> {
    pub plan: TransportPlan<T>,
    pub objective: T,
    /// `assignment[row] = column` of the optimal permutation.
    pub assignment: Vec<usize>,
}

/// Exact OT for square instances with uniform marginals.
///
/// With both marginals uniform the optimum is attained at a scaled permutation
/// matrix, so enumerating all `N!` permutations in lexicographic order and
/// keeping the first strict minimum gives the exact optimum.
pub fn lp_oracle<T: Scalar>(
    cost: &CostMatrix<T>,
    row_marginal: &[T],
    col_marginal: &[T],
) -> Result<OracleSolution<T>> {
    let n = cost.classes();
    if cost.samples() != n {
        return Err(Error::DimensionMismatch {
            what: "oracle requires a square cost",
            expected: n,
            actual: cost.samples(),
        });
    }
    if n > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge {
            n,
            limit: ORACLE_LIMIT,
        });
    }
    let share = T::one() / T::from_usize(n).unwrap();
    let tol = T::unit_tolerance();
    for (which, m) in [("row", row_marginal), ("column", col_marginal)] {
        if m.len() != n || m.iter().any(|&x| (x - share).abs() > tol) {
            return Err(Error::InvalidMarginal { which });
        }
    }

    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = assignment_cost(cost, &perm);
    while next_permutation(&mut perm) {
        let c = assignment_cost(cost, &perm);
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }

    let mut data = vec![T::zero(); n * n];
    for (row, &col) in best.iter().enumerate() {
        data[row * n + col] = share;
    }
    let plan = TransportPlan::from_matrix(n, n, data)?;
    Ok(OracleSolution {
        plan,
        objective: best_cost * share,
        assignment: best,
    })
}

fn assignment_cost<T: Scalar>(cost: &CostMatrix<T>, perm: &[usize]) -> T {
    perm.iter()
        .enumerate()
        .map(|(row, &col)| cost.get(row, col))
        .sum()
}

/// Advances to the next permutation in lexicographic order; false after the last.
fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::uniform_marginal;

    #[test]
    fn enumerates_all_permutations_in_order() {
        let mut p = vec![0, 1, 2];
        let mut seen = vec![p.clone()];
        while next_permutation(&mut p) {
            seen.push(p.clone());
        }
        assert_eq!(
            seen,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
    }

    #[test]
    fn zero_cost_matching() {
        let cost = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let u = uniform_marginal::<f64>(2);
        let sol = lp_oracle(&cost, &u, &u).unwrap();
        assert_eq!(sol.plan.as_slice(), &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(sol.objective, 0.0);
    }

    #[test]
    fn constant_cost_returns_identity() {
        let cost = CostMatrix::new(3, 3, vec![1.0; 9]).unwrap();
        let u = uniform_marginal::<f64>(3);
        let sol = lp_oracle(&cost, &u, &u).unwrap();
        assert_eq!(sol.assignment, vec![0, 1, 2]);
        assert!((sol.objective - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_out_of_scope_instances() {
        let big = CostMatrix::new(9, 9, vec![0.0; 81]).unwrap();
        let u9 = uniform_marginal::<f64>(9);
        assert!(matches!(
            lp_oracle(&big, &u9, &u9),
            Err(Error::OracleTooLarge { .. })
        ));
        let cost = CostMatrix::new(2, 2, vec![0.0; 4]).unwrap();
        let skew = [0.3, 0.7];
        let u = uniform_marginal::<f64>(2);
        assert!(matches!(
            lp_oracle(&cost, &skew, &u),
            Err(Error::InvalidMarginal { .. })
        ));
        let rect = CostMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(lp_oracle(&rect, &u, &uniform_marginal(3)).is_err());
    }
}
