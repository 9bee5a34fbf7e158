#![allow(dead_code)]

use pipeguard_core::config::BuildConfig;
use pipeguard_core::corpus;
use pipeguard_core::isa::{read_word, ProgramImage};
use pipeguard_core::sigfun::{prince_encrypt, SigKind};
use pipeguard_core::sim::{Event, RunResult};
use pipeguard_core::toolchain::{build_source, BuildOutput};

pub const KINDS: [SigKind; 2] = [SigKind::Crc32, SigKind::Cbcmac];

pub fn build(name: &str, kind: SigKind) -> BuildOutput {
    let src = corpus::source(name).unwrap_or_else(|| panic!("no corpus program {name}"));
    build_source(src, &BuildConfig::with_kind(kind)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn data_word(img: &ProgramImage, r: &RunResult, symbol: &str, index: u32) -> i32 {
    let addr = img.manifest.symbols[symbol] + 4 * index;
    read_word(&r.data, img.data_base, addr).expect("data word") as i32
}

/// x^32 + poly remainder of `v` by plain long division.
fn poly_mod(mut v: u128, poly: u32) -> u32 {
    let g: u128 = (1u128 << 32) | poly as u128;
    for bit in (32..128).rev() {
        if v >> bit & 1 == 1 {
            v ^= g << (bit - 32);
        }
    }
    v as u32
}

/// Reference chaining step: CRC by long division, CBC-MAC as encrypt(prev ^ Σ).
pub fn oracle_step(kind: SigKind, prev: u64, sigma: u64, poly: u32, key: u128) -> u64 {
    match kind {
        SigKind::Crc32 => poly_mod(((prev as u32 as u128) << 64) ^ ((sigma as u128) << 32), poly) as u64,
        SigKind::Cbcmac => prince_encrypt(prev ^ sigma, key),
    }
}

/// Replays an event stream with the oracle step and checks every chained
/// signature and every verification against it. Returns the number of
/// verifications checked.
pub fn replay_signatures(img: &ProgramImage, r: &RunResult) -> Result<u64, String> {
    let s = img.manifest.signing.as_ref().ok_or("unsigned image")?;
    let (kind, poly, key) = (s.config.function, s.config.crc_poly, s.config.prince_key);
    let mut sig = s.boot_iv;
    let mut checked = 0;
    for e in &r.events {
        match *e {
            Event::Chain { cycle, sigma, sig: got, .. } => {
                let want = oracle_step(kind, sig, sigma, poly, key);
                if want != got {
                    return Err(format!("chain at cycle {cycle}: oracle {want:x}, simulator {got:x}"));
                }
                sig = got;
            }
            Event::Verify { cycle, reference, ok, .. } => {
                if !ok || reference != sig as u32 {
                    return Err(format!("verification at cycle {cycle}: ref {reference:08x}, oracle {sig:x}"));
                }
                checked += 1;
            }
            Event::Update { patch, sig: got, .. } => {
                if sig ^ patch != got {
                    return Err("update is not an XOR".into());
                }
                sig = got;
            }
            Event::IrqDeliver { iv, .. } => sig = iv,
            Event::IrqReturn { restored_sig, .. } => sig = restored_sig,
            Event::Rollback { sig: restored, .. } => sig = restored,
            _ => {}
        }
    }
    Ok(checked)
}

/// Expected architectural results, worked out by hand from the sources.
pub fn expected_results(name: &str, img: &ProgramImage, r: &RunResult) -> Result<(), String> {
    let check = |what: &str, got: i32, want: i32| {
        if got == want {
            Ok(())
        } else {
            Err(format!("{name}: {what} = {got}, expected {want}"))
        }
    };
    let reg = |n: usize| r.regs[n] as i32;
    let word = |s: &str, i: u32| data_word(img, r, s, i);
    match name {
        // 16 iterations down to zero
        "loop" => check("t0", reg(5), 0),
        // x = 5 is odd: 5 + 100
        "diamond" => check("out", word("out", 0), 105),
        // last digit differs, one try consumed
        "verifypin" => check("auth", word("auth", 0), 0).and(check("tries", word("tries", 0), 2)),
        // double_it(5) = 10, add_three(10) = 13
        "indirect" => check("result", word("result", 0), 13),
        // 20 × 3
        "interrupt" => check("sum", word("sum", 0), 60),
        // a0 stays 6 for six iterations
        "fig2b" => check("out", word("out", 0), 36),
        "multiexit" => check("s1", reg(9), 1).and(check("s2", reg(18), -1)).and(check("s3", reg(19), 0)),
        "sort" => {
            for (i, v) in [1, 2, 3, 5, 7, 9].into_iter().enumerate() {
                check(&format!("arr[{i}]"), word("arr", i as u32), v)?;
            }
            Ok(())
        }
        // (3·3 + 3) + (4·4 + 4)
        "calls" => check("s0", reg(8), 32),
        // 0 + 1 + ... + 9
        "jloop" => check("out", word("out", 0), 45),
        "worst" => Ok(()),
        _ => Err(format!("no expectation for {name}")),
    }
}
