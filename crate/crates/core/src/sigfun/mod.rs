//! Signature and update functions.
//!
//! Signatures and patch values are carried as `u64`. Under CRC-32 only the
//! low 32 bits are ever nonzero; under CBC-MAC the full 64 bits are used and
//! the low half is what verification instructions compare.

mod crc;
mod prince;

use serde::{Deserialize, Serialize};

pub use crc::{
    crc32_step, crc_collision_search, x_pow_mod, CollisionSearch, SearchError, MAX_SEARCH_BITS, MAX_SEARCH_WORK,
};
pub use prince::{prince_decrypt, prince_encrypt};

pub const DEFAULT_CRC_POLY: u32 = 0xFA56_7D89;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigKind {
    #[default]
    Crc32,
    #[serde(alias = "cbcmac_prince")]
    Cbcmac,
}

impl SigKind {
    pub fn width(self) -> u32 {
        match self {
            SigKind::Crc32 => 32,
            SigKind::Cbcmac => 64,
        }
    }

    pub fn mask(self) -> u64 {
        match self {
            SigKind::Crc32 => 0xFFFF_FFFF,
            SigKind::Cbcmac => u64::MAX,
        }
    }

    /// Number of 32-bit words a patch value occupies in `.patches`.
    pub fn patch_words(self) -> usize {
        (self.width() / 32) as usize
    }
}

impl std::str::FromStr for SigKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "crc32" => Ok(SigKind::Crc32),
            "cbcmac" | "cbcmac_prince" => Ok(SigKind::Cbcmac),
            _ => Err(format!("unknown signature function `{s}` (expected crc32 or cbcmac)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignatureConfig {
    pub function: SigKind,
    #[serde(with = "crate::config::hex_u128")]
    pub prince_key: u128,
    #[serde(with = "crate::config::hex_u32")]
    pub crc_poly: u32,
}

impl Default for SignatureConfig {
    fn default() -> Self {
        SignatureConfig {
            function: SigKind::Crc32,
            prince_key: 0x0011_2233_4455_6677_8899_aabb_ccdd_eeff,
            crc_poly: DEFAULT_CRC_POLY,
        }
    }
}

impl SignatureConfig {
    pub fn crc32() -> Self {
        Self::default()
    }

    pub fn cbcmac(key: u128) -> Self {
        SignatureConfig { function: SigKind::Cbcmac, prince_key: key, ..Self::default() }
    }
}

pub fn sig_step(prev: u64, sigma: u64, cfg: &SignatureConfig) -> u64 {
    match cfg.function {
        SigKind::Crc32 => crc32_step(prev as u32, sigma, cfg.crc_poly) as u64,
        SigKind::Cbcmac => prince_encrypt(prev ^ sigma, cfg.prince_key),
    }
}

pub fn sig_chain(iv: u64, sigmas: &[u64], cfg: &SignatureConfig) -> u64 {
    sigmas.iter().fold(iv, |s, &sigma| sig_step(s, sigma, cfg))
}

pub fn update(sig: u64, patch: u64) -> u64 {
    sig ^ patch
}

/// Patch value that moves signature `sig` onto `iv` under [`update`].
pub fn patch_for(sig: u64, iv: u64) -> u64 {
    sig ^ iv
}

pub fn verify(sig: u64, reference: u32) -> bool {
    sig as u32 == reference
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cbcmac_zero_step_is_one_cipher_call() {
        let cfg = SignatureConfig::cbcmac(0x0123);
        assert_eq!(sig_step(0, 0, &cfg), prince_encrypt(0, 0x0123));
    }

    #[test]
    fn update_algebra() {
        let (s, iv) = (0x1234_5678_9abc_def0u64, 0x0fed_cba9_8765_4321u64);
        assert_eq!(update(s, 0), s);
        assert_eq!(update(s, s), 0);
        assert_eq!(update(s, patch_for(s, iv)), iv);
        assert!(verify(s, s as u32));
        assert!(!verify(s, s as u32 ^ 1));
    }
}
