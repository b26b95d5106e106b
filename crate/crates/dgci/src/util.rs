//! Deterministic reductions and seed derivation shared across modules.
//!
//! All Monte Carlo paths must produce identical results for any thread
//! count, so every reduction here has a fixed association order that does
//! not depend on scheduling.

/// Pairwise (binary-counter) reduction over `n_blocks` partial accumulators.
///
/// `block(i)` produces the i-th partial in index order; `merge(a, b)` folds a
/// later partial `b` into an earlier one `a`. The combination tree depends
/// only on `n_blocks`, so the result is reproducible regardless of caller
/// parallelism. Returns `None` when `n_blocks == 0`.
pub fn pairwise_reduce<T>(
    n_blocks: usize,
    mut block: impl FnMut(usize) -> T,
    mut merge: impl FnMut(&mut T, T),
) -> Option<T> {
    let mut stack: Vec<(u32, T)> = Vec::new();
    for b in 0..n_blocks {
        let mut level = 0u32;
        let mut cur = block(b);
        while let Some((top_level, _)) = stack.last() {
            if *top_level != level {
                break;
            }
            let (_, earlier) = stack.pop().expect("stack non-empty");
            let mut acc = earlier;
            merge(&mut acc, cur);
            cur = acc;
            level += 1;
        }
        stack.push((level, cur));
    }
    let mut acc: Option<T> = None;
    while let Some((_, earlier)) = stack.pop() {
        acc = Some(match acc {
            None => earlier,
            Some(later) => {
                let mut a = earlier;
                merge(&mut a, later);
                a
            }
        });
    }
    acc
}

/// Block size used for the scalar pairwise sums below.
const SUM_BLOCK: usize = 32;

/// Pairwise sum of a slice. Deterministic and more accurate than a naive
/// left-to-right fold for long inputs.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n_blocks = values.len().div_ceil(SUM_BLOCK);
    pairwise_reduce(
        n_blocks,
        |b| {
            let lo = b * SUM_BLOCK;
            let hi = (lo + SUM_BLOCK).min(values.len());
            values[lo..hi].iter().sum::<f64>()
        },
        |a, b| *a += b,
    )
    .unwrap_or(0.0)
}

/// Pairwise sum of `f(i)` for `i in 0..n`.
pub fn pairwise_sum_with(n: usize, mut f: impl FnMut(usize) -> f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n_blocks = n.div_ceil(SUM_BLOCK);
    pairwise_reduce(
        n_blocks,
        |b| {
            let lo = b * SUM_BLOCK;
            let hi = (lo + SUM_BLOCK).min(n);
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        },
        |a, b| *a += b,
    )
    .unwrap_or(0.0)
}

/// SplitMix64-style seed derivation for independent substreams.
///
/// Used for bootstrap replicate multipliers, per-repetition scenario seeds,
/// and retry draws, so that one 64-bit base seed determines every stream.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
