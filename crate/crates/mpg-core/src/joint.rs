//! Joint-action indexing and opponent-averaging contractions.
//!
//! Joint actions are indexed in row-major order over `(a_1, ..., a_N)`:
//! player 1 varies slowest, player N fastest. Every table indexed by a
//! joint action in this crate (transitions, rewards, potentials, Q tables)
//! and every file format uses this order.

use crate::scalar::Scalar;

/// Index space over the joint action set `A = A_1 x ... x A_N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointActionSpace {
    counts: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
}

impl JointActionSpace {
    pub fn new(counts: &[usize]) -> Self {
        let mut strides = vec![1usize; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let size = counts.iter().product();
        Self { counts: counts.to_vec(), strides, size }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_players(&self) -> usize {
        self.counts.len()
    }

    /// Joint index of the action profile `a`.
    pub fn encode(&self, a: &[usize]) -> usize {
        debug_assert_eq!(a.len(), self.counts.len());
        a.iter().zip(&self.strides).map(|(ai, st)| ai * st).sum()
    }

    /// Player `i`'s action inside joint index `idx`.
    pub fn action_of(&self, idx: usize, i: usize) -> usize {
        (idx / self.strides[i]) % self.counts[i]
    }

    /// Writes the action profile of `idx` into `out`.
    pub fn decode(&self, idx: usize, out: &mut [usize]) {
        for i in 0..self.counts.len() {
            out[i] = self.action_of(idx, i);
        }
    }
}

/// Advances a mixed-radix counter; returns false once it wraps to zero.
pub fn next_profile(digits: &mut [usize], radices: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radices[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

/// Contracts the last player axis of `t` with weights `w`.
///
/// `t` has shape `[lead][m][trailing]`; the result has shape `[lead][trailing]`.
fn contract_last<F: Scalar>(t: &[F], lead: usize, m: usize, trailing: usize, w: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); lead * trailing];
    for l in 0..lead {
        let base = l * m * trailing;
        let dst = &mut out[l * trailing..(l + 1) * trailing];
        for (k, &wk) in w.iter().enumerate() {
            if wk == F::zero() {
                continue;
            }
            let src = &t[base + k * trailing..base + (k + 1) * trailing];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += wk * s;
            }
        }
    }
    out
}

/// Contracts the first player axis of `t` with weights `w`.
///
/// `t` has shape `[len(w)][rest]`; the result has shape `[rest]`.
fn contract_first<F: Scalar>(t: &[F], rest: usize, w: &[F]) -> Vec<F> {
    let mut out = vec![F::zero(); rest];
    for (k, &wk) in w.iter().enumerate() {
        if wk == F::zero() {
            continue;
        }
        let src = &t[k * rest..(k + 1) * rest];
        for (d, &s) in out.iter_mut().zip(src) {
            *d += wk * s;
        }
    }
    out
}

/// Averages `tensor` over every player axis except `keep`, weighting player
/// `j`'s axis by `rows[j]`.
///
/// `tensor` has shape `[a_1]...[a_N][trailing]` (row-major); the result has
/// shape `[a_keep][trailing]`. This computes e.g.
/// `out(a_i, x) = sum_{a_-i} prod_{j != i} rows[j](a_j) * tensor(a, x)`.
pub fn average_except<F: Scalar>(
    tensor: &[F],
    counts: &[usize],
    rows: &[&[F]],
    keep: usize,
    trailing: usize,
) -> Vec<F> {
    let n = counts.len();
    debug_assert!(keep < n);
    // Suffix pass: peel player axes from the right down to `keep`.
    let mut cur: Vec<F>;
    if keep + 1 < n {
        let lead: usize = counts[..n - 1].iter().product();
        cur = contract_last(tensor, lead, counts[n - 1], trailing, rows[n - 1]);
        for j in (keep + 1..n - 1).rev() {
            let lead: usize = counts[..j].iter().product();
            cur = contract_last(&cur, lead, counts[j], trailing, rows[j]);
        }
    } else {
        cur = tensor.to_vec();
    }
    // Prefix pass: peel axes 0..keep from the left.
    for j in 0..keep {
        let rest: usize = counts[j + 1..=keep].iter().product::<usize>() * trailing;
        cur = contract_first(&cur, rest, rows[j]);
    }
    cur
}

/// Contracts every player axis of `tensor` with the given weight rows,
/// leaving only the trailing block: `out(x) = sum_a prod_j rows[j](a_j) *
/// tensor(a, x)`.
pub fn average_full<F: Scalar>(
    tensor: &[F],
    counts: &[usize],
    rows: &[&[F]],
    trailing: usize,
) -> Vec<F> {
    let n = counts.len();
    let lead: usize = counts[..n - 1].iter().product();
    let mut cur = contract_last(tensor, lead, counts[n - 1], trailing, rows[n - 1]);
    for j in (0..n - 1).rev() {
        let lead: usize = counts[..j].iter().product();
        cur = contract_last(&cur, lead, counts[j], trailing, rows[j]);
    }
    cur
}

/// Averages `tensor` over opponents for every player at once, sharing the
/// suffix contractions. Equivalent to calling [`average_except`] per player.
pub fn average_all_players<F: Scalar>(
    tensor: &[F],
    counts: &[usize],
    rows: &[&[F]],
    trailing: usize,
) -> Vec<Vec<F>> {
    let n = counts.len();
    if n == 1 {
        return vec![tensor.to_vec()];
    }
    // suffix[k] = tensor contracted over players k..n-1; axes are players 0..k-1.
    // Built lazily from the right: suffix for keep = i needs players > i gone.
    let mut out: Vec<Vec<F>> = Vec::with_capacity(n);
    let mut suffix: Vec<F> = tensor.to_vec();
    // keep = n-1 uses the raw tensor (no suffix contraction), then each
    // earlier keep peels one more axis off the right.
    for keep in (0..n).rev() {
        // Contract players keep+1..already-peeled boundary.
        // Invariant: `suffix` currently holds axes players 0..=boundary-1,
        // where boundary = keep + 1 after the peel below.
        if keep < n - 1 {
            let boundary = keep + 2; // axes 0..boundary before peeling
            let lead: usize = counts[..boundary - 1].iter().product();
            suffix = contract_last(&suffix, lead, counts[boundary - 1], trailing, rows[boundary - 1]);
        }
        // Prefix-contract players 0..keep on a copy.
        let mut cur = suffix.clone();
        for j in 0..keep {
            let rest: usize = counts[j + 1..=keep].iter().product::<usize>() * trailing;
            cur = contract_first(&cur, rest, rows[j]);
        }
        out.push(cur);
    }
    out.reverse();
    out
}
