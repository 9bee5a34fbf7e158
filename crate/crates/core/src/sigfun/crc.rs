//! CRC-32 signature step and the codeword-weight search used to size the
//! detection capability of a generator polynomial.

use std::collections::HashMap;

use thiserror::Error;

/// Shift the 64 bits of `sigma` (MSB first) through a degree-32 LFSR seeded
/// with `prev`. `poly` omits the implicit x^32 coefficient.
pub fn crc32_step(prev: u32, sigma: u64, poly: u32) -> u32 {
    let mut state = prev;
    for i in (0..64).rev() {
        let feedback = (state >> 31) ^ ((sigma >> i) as u32 & 1);
        state <<= 1;
        if feedback & 1 == 1 {
            state ^= poly;
        }
    }
    state
}

/// x^k mod G for the generator with implicit x^32.
pub fn x_pow_mod(k: u64, poly: u32) -> u32 {
    let mut r: u32 = 1;
    for _ in 0..k {
        let carry = r >> 31;
        r <<= 1;
        if carry == 1 {
            r ^= poly;
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CollisionSearch {
    /// Smallest weight found with one witness (bit positions counted from the
    /// last bit of the stream, 0 = last bit shifted in).
    Found {
        weight: u32,
        positions: Vec<usize>,
    },
    NoneUpTo(u32),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SearchError {
    #[error("search bound exceeded: {bits} stream bits (limit {limit})")]
    TooManyBits { bits: usize, limit: usize },
    #[error("search bound exceeded: weight {weight} needs {work} subset evaluations (limit {limit})")]
    TooMuchWork { weight: u32, work: u128, limit: u128 },
}

pub const MAX_SEARCH_BITS: usize = 4096;
pub const MAX_SEARCH_WORK: u128 = 1 << 27;

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Calls `f` with every strictly increasing `k`-tuple of indices below `n`,
/// together with the XOR of their syndromes. Stops early when `f` returns true.
fn for_each_subset(syn: &[u32], k: usize, f: &mut dyn FnMut(&[usize], u32) -> bool) -> bool {
    fn rec(
        syn: &[u32],
        k: usize,
        start: usize,
        idx: &mut Vec<usize>,
        acc: u32,
        f: &mut dyn FnMut(&[usize], u32) -> bool,
    ) -> bool {
        if idx.len() == k {
            return f(idx, acc);
        }
        let remaining = k - idx.len();
        for i in start..=syn.len() - remaining {
            idx.push(i);
            if rec(syn, k, i + 1, idx, acc ^ syn[i], f) {
                return true;
            }
            idx.pop();
        }
        false
    }
    if k == 0 || k > syn.len() {
        return false;
    }
    rec(syn, k, 0, &mut Vec::with_capacity(k), 0, f)
}

/// Smallest Hamming weight of a nonzero error pattern over `max_blocks`
/// 64-bit pipeline states that leaves the CRC chain unchanged.
///
/// By linearity the chain difference is `e(x)·x^32 mod G`, independent of the
/// IV and of the fault-free states, so the search runs over syndromes
/// `x^(i+32) mod G` with a meet-in-the-middle split per weight.
pub fn crc_collision_search(poly: u32, max_blocks: usize, max_weight: u32) -> Result<CollisionSearch, SearchError> {
    let bits = max_blocks * 64;
    if bits > MAX_SEARCH_BITS {
        return Err(SearchError::TooManyBits { bits, limit: MAX_SEARCH_BITS });
    }
    for w in 1..=max_weight {
        let half = (w as usize).div_ceil(2);
        let work = binomial(bits, half);
        if work > MAX_SEARCH_WORK {
            return Err(SearchError::TooMuchWork { weight: w, work, limit: MAX_SEARCH_WORK });
        }
    }
    let syn: Vec<u32> = (0..bits).map(|i| x_pow_mod(i as u64 + 32, poly)).collect();

    for w in 1..=max_weight as usize {
        // No codeword of smaller weight exists at this point, so any two
        // distinct subsets with equal syndrome sums are disjoint.
        let lo = w / 2;
        let hi = w - lo;
        let mut hit: Option<Vec<usize>> = None;
        if lo == 0 {
            for_each_subset(&syn, hi, &mut |idx, acc| {
                if acc == 0 {
                    hit = Some(idx.to_vec());
                }
                hit.is_some()
            });
        } else {
            let mut table: HashMap<u32, Vec<usize>> = HashMap::new();
            for_each_subset(&syn, lo, &mut |idx, acc| {
                if lo == hi {
                    if let Some(prev) = table.get(&acc) {
                        let mut v = prev.clone();
                        v.extend_from_slice(idx);
                        hit = Some(v);
                        return true;
                    }
                }
                table.entry(acc).or_insert_with(|| idx.to_vec());
                false
            });
            if hit.is_none() && lo != hi {
                for_each_subset(&syn, hi, &mut |idx, acc| {
                    if let Some(prev) = table.get(&acc) {
                        let mut v = prev.clone();
                        v.extend_from_slice(idx);
                        hit = Some(v);
                        return true;
                    }
                    false
                });
            }
        }
        if let Some(mut positions) = hit {
            positions.sort_unstable();
            return Ok(CollisionSearch::Found { weight: w as u32, positions });
        }
    }
    Ok(CollisionSearch::NoneUpTo(max_weight))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Remainder of a polynomial (bit i = coefficient of x^i) modulo x^32 + poly.
    fn poly_mod(mut v: u128, poly: u32) -> u32 {
        let g: u128 = (1u128 << 32) | poly as u128;
        for bit in (32..128).rev() {
            if v >> bit & 1 == 1 {
                v ^= g << (bit - 32);
            }
        }
        v as u32
    }

    #[test]
    fn step_matches_long_division() {
        let poly = 0xFA56_7D89;
        assert_eq!(crc32_step(0, 0, poly), 0);
        assert_eq!(crc32_step(0, 1, poly), poly_mod(1u128 << 32, poly));
        let cases = [(0u32, 1u64), (0xdead_beef, 0x0123_4567_89ab_cdef), (1, u64::MAX), (u32::MAX, 0)];
        for (prev, sigma) in cases {
            let dividend = ((prev as u128) << 64) ^ ((sigma as u128) << 32);
            assert_eq!(crc32_step(prev, sigma, poly), poly_mod(dividend, poly));
        }
    }

    #[test]
    fn degenerate_generator_has_weight_two() {
        // x^32 + 1: x^(i+32) and x^(i+64) leave the same remainder.
        let r = crc_collision_search(0x0000_0001, 1, 4).unwrap();
        let CollisionSearch::Found { weight, positions } = r else { panic!("{r:?}") };
        assert_eq!(weight, 2);
        let e: u128 = positions.iter().fold(0, |acc, &p| acc | 1u128 << (p + 32));
        assert_eq!(poly_mod(e, 1), 0);
    }

    #[test]
    fn zero_weight_finds_nothing() {
        assert_eq!(crc_collision_search(0x1234_5677, 2, 0).unwrap(), CollisionSearch::NoneUpTo(0));
    }

    #[test]
    fn bound_is_enforced() {
        assert!(matches!(crc_collision_search(0xFA56_7D89, 65, 2), Err(SearchError::TooManyBits { .. })));
        assert!(matches!(crc_collision_search(0xFA56_7D89, 4, 10), Err(SearchError::TooMuchWork { .. })));
    }
}
