//! Enumerable fault spaces: targets × weights × masks × cycles, addressable by index.

use serde::{Deserialize, Serialize};

use super::{FaultSpec, FaultTarget};
use crate::isa::ProgramImage;
use crate::sim::{Copy, CsiSignal, FaultMode, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSet {
    /// Every `.text` word.
    Imem,
    /// `.text` words of secured functions, reference words included.
    ImemSecured,
    /// Reference words only.
    References,
    Sigma,
    /// Every duplicated signal group, both stages, both copies.
    Csi,
    SigRegister,
    PatchRegister,
}

impl TargetSet {
    pub fn targets(self, img: &ProgramImage) -> Vec<FaultTarget> {
        match self {
            TargetSet::Imem => img.text_words().map(|(addr, _)| FaultTarget::ImemWord { addr }).collect(),
            TargetSet::ImemSecured => img
                .manifest
                .functions
                .iter()
                .filter(|f| f.secured)
                .flat_map(|f| (f.start..f.end).step_by(4))
                .map(|addr| FaultTarget::ImemWord { addr })
                .collect(),
            TargetSet::References => {
                img.reference_slots().into_iter().map(|addr| FaultTarget::ReferenceWord { addr }).collect()
            }
            TargetSet::Sigma => vec![FaultTarget::PipelineStateBit],
            TargetSet::Csi => {
                let mut v = Vec::new();
                for signal in CsiSignal::ALL {
                    for stage in [Stage::Ex, Stage::Wb] {
                        for copy in [Copy::Original, Copy::Duplicate] {
                            v.push(FaultTarget::PostDecodeSignal { signal, stage, copy });
                        }
                    }
                }
                v
            }
            TargetSet::SigRegister => vec![FaultTarget::SigRegister],
            TargetSet::PatchRegister => vec![FaultTarget::PatchRegister],
        }
    }
}

fn binom(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The `rank`-th `k`-bit mask over `n` bits, in colexicographic order.
pub fn unrank_combination(n: u32, k: u32, mut rank: u128) -> u64 {
    assert!(rank < binom(n, k), "rank out of range");
    let mut mask = 0u64;
    for k in (1..=k).rev() {
        let mut c = k - 1;
        while binom(c + 1, k) <= rank {
            c += 1;
        }
        mask |= 1 << c;
        rank -= binom(c, k);
    }
    mask
}

#[derive(Debug, Clone)]
struct Segment {
    target: FaultTarget,
    width: u32,
    weight: u32,
    start: u128,
}

/// Cartesian fault space, ordered by target, weight, mask, then cycle.
#[derive(Debug, Clone)]
pub struct FaultSpace {
    segments: Vec<Segment>,
    cycles: (u64, u64),
    mode: FaultMode,
    len: u128,
}

impl FaultSpace {
    /// `cycles` is half-open; weights are inclusive.
    pub fn new(
        img: &ProgramImage,
        sets: &[TargetSet],
        cycles: (u64, u64),
        weights: (u32, u32),
        mode: FaultMode,
    ) -> Self {
        let ncycles = cycles.1.saturating_sub(cycles.0) as u128;
        let mut segments = Vec::new();
        let mut len = 0u128;
        for set in sets {
            for target in set.targets(img) {
                let width = target.width(img);
                for weight in weights.0.max(1)..=weights.1.min(width) {
                    let n = binom(width, weight) * ncycles;
                    if n > 0 {
                        segments.push(Segment { target, width, weight, start: len });
                        len += n;
                    }
                }
            }
        }
        FaultSpace { segments, cycles, mode, len }
    }

    pub fn len(&self) -> u128 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn window(&self) -> (u64, u64) {
        self.cycles
    }

    pub fn get(&self, index: u128) -> FaultSpec {
        assert!(index < self.len, "index out of range");
        let s = match self.segments.binary_search_by(|s| s.start.cmp(&index)) {
            Ok(i) => &self.segments[i],
            Err(i) => &self.segments[i - 1],
        };
        let ncycles = (self.cycles.1 - self.cycles.0) as u128;
        let off = index - s.start;
        FaultSpec {
            target: s.target,
            cycle: self.cycles.0 + (off % ncycles) as u64,
            mask: unrank_combination(s.width, s.weight, off / ncycles),
            mode: self.mode,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn unranking_is_a_bijection() {
        for (n, k) in [(8, 1), (8, 3), (10, 5), (6, 6)] {
            let all: BTreeSet<u64> = (0..binom(n, k)).map(|r| unrank_combination(n, k, r)).collect();
            assert_eq!(all.len() as u128, binom(n, k));
            assert!(all.iter().all(|m| m.count_ones() == k && m >> n == 0));
        }
        assert_eq!(unrank_combination(32, 1, 15), 1 << 15);
    }

    #[test]
    fn binomials() {
        assert_eq!(binom(64, 8), 4_426_165_368);
        assert_eq!(binom(5, 0), 1);
        assert_eq!(binom(3, 4), 0);
    }
}
