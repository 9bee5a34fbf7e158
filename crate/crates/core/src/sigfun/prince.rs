//! PRINCE 64-bit block cipher with a 128-bit key `k0 || k1`.
//!
//! Nibble 0 is the most significant nibble of the block.

const SBOX: [u8; 16] = [0xB, 0xF, 0x3, 0x2, 0xA, 0xC, 0x9, 0x1, 0x6, 0x7, 0x8, 0x0, 0xE, 0x5, 0xD, 0x4];

const SBOX_INV: [u8; 16] = {
    let mut inv = [0u8; 16];
    let mut i = 0;
    while i < 16 {
        inv[SBOX[i] as usize] = i as u8;
        i += 1;
    }
    inv
};

const RC: [u64; 12] = [
    0x0000000000000000,
    0x13198a2e03707344,
    0xa4093822299f31d0,
    0x082efa98ec4e6c89,
    0x452821e638d01377,
    0xbe5466cf34e90c6c,
    0x7ef84f78fd955cb1,
    0x85840851f1ac43aa,
    0xc882d32f25323c54,
    0x64a51195e0e3610d,
    0xd3b5a399ca0c2399,
    0xc0ac29b7c97c50dd,
];

const SHIFT_ROWS: [usize; 16] = [0, 5, 10, 15, 4, 9, 14, 3, 8, 13, 2, 7, 12, 1, 6, 11];

const ALPHA: u64 = 0xc0ac29b7c97c50dd;

fn nibble(x: u64, i: usize) -> u64 {
    (x >> (60 - 4 * i)) & 0xF
}

fn sub(x: u64, table: &[u8; 16]) -> u64 {
    (0..16).fold(0, |acc, i| acc | (table[nibble(x, i) as usize] as u64) << (60 - 4 * i))
}

fn shift_rows(x: u64) -> u64 {
    (0..16).fold(0, |acc, i| acc | nibble(x, SHIFT_ROWS[i]) << (60 - 4 * i))
}

fn shift_rows_inv(x: u64) -> u64 {
    (0..16).fold(0, |acc, i| acc | nibble(x, i) << (60 - 4 * SHIFT_ROWS[i]))
}

/// One 16x16 block of M'. `first` selects M̂0 (true) or M̂1.
fn m_hat(chunk: u16, first: bool) -> u16 {
    // Row r of M̂0 has the four 4x4 blocks M_{(r+c) mod 4} for column c; M̂1 shifts by one.
    let shift = if first { 0 } else { 1 };
    let inputs = [(chunk >> 12) & 0xF, (chunk >> 8) & 0xF, (chunk >> 4) & 0xF, chunk & 0xF];
    let mut out = 0u16;
    for row in 0..4 {
        let mut nib = 0u16;
        for (col, &inp) in inputs.iter().enumerate() {
            // M_i is the identity with its i-th diagonal bit cleared (bit 0 = MSB of nibble).
            let i = (row + col + shift) % 4;
            nib ^= inp & !(0x8 >> i);
        }
        out |= (nib & 0xF) << (12 - 4 * row);
    }
    out
}

fn m_prime(x: u64) -> u64 {
    let c = |i: u32| ((x >> (48 - 16 * i)) & 0xFFFF) as u16;
    let firsts = [true, false, false, true];
    (0..4).fold(0, |acc, i| acc | (m_hat(c(i as u32), firsts[i]) as u64) << (48 - 16 * i))
}

fn core(mut x: u64, k1: u64) -> u64 {
    x ^= k1 ^ RC[0];
    for rc in &RC[1..6] {
        x = sub(x, &SBOX);
        x = shift_rows(m_prime(x));
        x ^= rc ^ k1;
    }
    x = sub(x, &SBOX);
    x = m_prime(x);
    x = sub(x, &SBOX_INV);
    for rc in &RC[6..11] {
        x ^= k1 ^ rc;
        x = m_prime(shift_rows_inv(x));
        x = sub(x, &SBOX_INV);
    }
    x ^ RC[11] ^ k1
}

fn split(key: u128) -> (u64, u64, u64) {
    let k0 = (key >> 64) as u64;
    let k1 = key as u64;
    let k0p = k0.rotate_right(1) ^ (k0 >> 63);
    (k0, k0p, k1)
}

pub fn prince_encrypt(block: u64, key: u128) -> u64 {
    let (k0, k0p, k1) = split(key);
    core(block ^ k0, k1) ^ k0p
}

/// Decryption uses the α-reflection: the core with `k1 ^ α` inverts itself.
pub fn prince_decrypt(block: u64, key: u128) -> u64 {
    let (k0, k0p, k1) = split(key);
    core(block ^ k0p, k1 ^ ALPHA) ^ k0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_answers() {
        let vectors: [(u64, u128, u64); 5] = [
            (0, 0, 0x818665aa0d02dfda),
            (u64::MAX, 0, 0x604ae6ca03c20ada),
            (0, (u64::MAX as u128) << 64, 0x9fb51935fc3df524),
            (0, u64::MAX as u128, 0x78a54cbe737bb7ef),
            (0x0123456789abcdef, 0xfedcba9876543210, 0xae25ad3ca8fa9ccf),
        ];
        for (pt, key, ct) in vectors {
            assert_eq!(prince_encrypt(pt, key), ct, "pt={pt:016x} key={key:032x}");
            assert_eq!(prince_decrypt(ct, key), pt);
        }
    }

    #[test]
    fn shift_rows_roundtrip() {
        let x = 0x0123456789abcdef;
        assert_eq!(shift_rows_inv(shift_rows(x)), x);
        assert_eq!(m_prime(m_prime(x)), x);
    }
}
