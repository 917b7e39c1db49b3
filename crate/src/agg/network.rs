//! Data-independent sorting network.
//!
//! Merge-exchange construction (Batcher-style) for arbitrary n. The
//! schedule depends only on n, never on the data, so it can run over
//! secret-shared values: every (i, j) entry becomes one oblivious
//! compare-exchange leaving slot i <= slot j.

/// Compare-exchange schedule sorting n slots ascending.
///
/// Sizes for reference: n=2 -> 1, n=10 -> 31, n=100 -> 1077.
pub fn sort_schedule(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    if n < 2 {
        return out;
    }
    let t = usize::BITS - (n - 1).leading_zeros();
    let mut p = 1usize << (t - 1);
    while p > 0 {
        let mut q = 1usize << (t - 1);
        let mut r = 0usize;
        let mut d = p;
        loop {
            for i in 0..n - d {
                if i & p == r {
                    out.push((i, i + d));
                }
            }
            if q == p {
                break;
            }
            d = q - p;
            q >>= 1;
            r = p;
        }
        p >>= 1;
    }
    out
}

/// Network depth: number of rounds when independent comparators run in
/// parallel. Drives the round counter of oblivious sorts.
pub fn schedule_depth(schedule: &[(usize, usize)], n: usize) -> usize {
    let mut free = vec![0usize; n];
    let mut depth = 0;
    for &(i, j) in schedule {
        let t = free[i].max(free[j]) + 1;
        free[i] = t;
        free[j] = t;
        depth = depth.max(t);
    }
    depth
}
