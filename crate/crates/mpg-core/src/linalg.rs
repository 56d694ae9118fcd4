//! Small dense linear solves. Policy evaluation and occupancy systems are
//! `|S| x |S|`; LU with partial pivoting is exact enough at that scale.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// LU factorization (partial pivoting) of a row-major square matrix.
pub struct Lu<F> {
    n: usize,
    lu: Vec<F>,
    perm: Vec<usize>,
}

impl<F: Scalar> Lu<F> {
    pub fn factor(mut a: Vec<F>, n: usize) -> Result<Self> {
        debug_assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let mut pivot = col;
            let mut best = a[perm[col] * n + col].abs();
            for row in col + 1..n {
                let v = a[perm[row] * n + col].abs();
                if v > best {
                    best = v;
                    pivot = row;
                }
            }
            if best == F::zero() {
                return Err(Error::InvalidArgument(
                    "singular linear system in exact evaluation".into(),
                ));
            }
            perm.swap(col, pivot);
            let prow = perm[col];
            let diag = a[prow * n + col];
            for row in col + 1..n {
                let r = perm[row];
                let factor = a[r * n + col] / diag;
                a[r * n + col] = factor;
                for k in col + 1..n {
                    let sub = factor * a[prow * n + k];
                    a[r * n + k] = a[r * n + k] - sub;
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    /// Solves `A x = b`, overwriting `x` (any number of calls per factorization).
    pub fn solve_into(&self, b: &[F], x: &mut [F]) {
        let n = self.n;
        debug_assert_eq!(b.len(), n);
        debug_assert_eq!(x.len(), n);
        // Forward substitution on the permuted rows.
        for i in 0..n {
            let mut acc = b[self.perm[i]];
            for k in 0..i {
                acc = acc - self.lu[self.perm[i] * n + k] * x[k];
            }
            x[i] = acc;
        }
        // Back substitution.
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in i + 1..n {
                acc = acc - self.lu[self.perm[i] * n + k] * x[k];
            }
            x[i] = acc / self.lu[self.perm[i] * n + i];
        }
    }

    pub fn solve(&self, b: &[F]) -> Vec<F> {
        let mut x = vec![F::zero(); self.n];
        self.solve_into(b, &mut x);
        x
    }
}

/// One-shot solve of `A x = b`.
pub fn solve<F: Scalar>(a: Vec<F>, n: usize, b: &[F]) -> Result<Vec<F>> {
    Ok(Lu::factor(a, n)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn solves_random_diagonally_dominant_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in 1..=8usize {
            let mut a = vec![0.0f64; n * n];
            for (i, v) in a.iter_mut().enumerate() {
                *v = rng.gen_range(-1.0..1.0);
                if i % (n + 1) == 0 {
                    *v += n as f64 + 1.0;
                }
            }
            let x_true: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut b = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    b[i] += a[i * n + j] * x_true[j];
                }
            }
            let x = solve(a, n, &b).unwrap();
            for (xi, ti) in x.iter().zip(&x_true) {
                assert!((xi - ti).abs() < 1e-11, "n={n}: {xi} vs {ti}");
            }
        }
    }

    #[test]
    fn rejects_singular_matrix() {
        let a = vec![1.0f64, 2.0, 2.0, 4.0];
        assert!(Lu::factor(a, 2).is_err());
    }
}
