use itertools::Itertools;

use crate::error::{invalid, Result};

/// Every `U`-subset of `0..K` as a sorted index tuple, in lexicographic order.
///
/// The same list is the scheduling agent's codebook: codeword `i` is entry `i`.
pub fn enumerate_schedules(k: usize, u: usize) -> Result<Vec<Vec<usize>>> {
    if u == 0 || u >= k {
        return Err(invalid(format!("need 1 <= U < K, got U={u} K={k}")));
    }
    Ok((0..k).combinations(u).collect())
}

/// `C(n, r)` without overflow for the sizes used here.
pub fn binomial(n: usize, r: usize) -> usize {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}
