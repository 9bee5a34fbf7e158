use proptest::prelude::*;

use pipeguard_core::harness::unrank_combination;
use pipeguard_core::isa::{decode, Instruction, ALL_OPCODES};
use pipeguard_core::sigfun::{sig_step, update, SignatureConfig};
use pipeguard_core::sim::derive_from_word;

fn instruction() -> impl Strategy<Value = Instruction> {
    (0..ALL_OPCODES.len(), 0u8..32, 0u8..32, 0u8..32, any::<i32>()).prop_filter_map(
        "operands out of range",
        |(op, rd, rs1, rs2, imm)| {
            let op = ALL_OPCODES[op];
            // Fold the immediate into a range most formats accept, then let validate decide.
            let candidates = [imm, imm % 2048, (imm % 2048) & !1, imm & !0xFFF, imm & 31, imm.rem_euclid(1 << 20)];
            candidates.into_iter().map(|imm| Instruction::new(op, rd, rs1, rs2, imm)).find(|i| i.validate().is_ok())
        },
    )
}

proptest! {
    #[test]
    fn decode_inverts_encode(i in instruction()) {
        let w = i.encode().unwrap();
        prop_assert_eq!(decode(w).unwrap(), i.canonical());
        prop_assert_eq!(decode(w).unwrap().encode().unwrap(), w);
    }

    #[test]
    fn single_bit_flips_change_sigma(i in instruction(), bit in 0u32..32) {
        let w = i.encode().unwrap();
        let f = w ^ (1 << bit);
        if let Ok(j) = decode(f) {
            prop_assert_ne!(derive_from_word(w, i.op, None).bits(), derive_from_word(f, j.op, None).bits());
        }
    }

    #[test]
    fn crc_step_is_injective_in_the_state(a in any::<u32>(), b in any::<u32>(), s in any::<u64>()) {
        prop_assume!(a != b);
        let c = SignatureConfig::crc32();
        prop_assert_ne!(sig_step(a as u64, s, &c), sig_step(b as u64, s, &c));
    }

    #[test]
    fn update_is_an_involution(s in any::<u64>(), p in any::<u64>()) {
        prop_assert_eq!(update(update(s, p), p), s);
    }

    #[test]
    fn unranked_masks_have_the_requested_weight(n in 1u32..=64, k in 1u32..=8, r in any::<u64>()) {
        prop_assume!(k <= n);
        let total = (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128);
        let m = unrank_combination(n, k, r as u128 % total);
        prop_assert_eq!(m.count_ones(), k);
        prop_assert!(n == 64 || m >> n == 0);
    }
}
