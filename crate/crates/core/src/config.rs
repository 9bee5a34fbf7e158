//! Build and run configuration, loadable from TOML. All constants are hex strings.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sigfun::{SigKind, SignatureConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid hex constant `{0}`")]
    Hex(String),
}

pub fn parse_hex(s: &str) -> Result<u128, ConfigError> {
    let t = s.trim();
    let digits = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")).unwrap_or(t);
    let digits: String = digits.chars().filter(|&c| c != '_').collect();
    if digits.is_empty() || digits.len() > 32 {
        return Err(ConfigError::Hex(s.to_string()));
    }
    u128::from_str_radix(&digits, 16).map_err(|_| ConfigError::Hex(s.to_string()))
}

macro_rules! hex_serde {
    ($name:ident, $ty:ty, $width:expr) => {
        pub mod $name {
            use serde::{de::Error, Deserialize, Deserializer, Serializer};

            pub fn serialize<S: Serializer>(v: &$ty, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&format!("0x{:0width$x}", v, width = $width))
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<$ty, D::Error> {
                let s = String::deserialize(d)?;
                let v = super::parse_hex(&s).map_err(D::Error::custom)?;
                <$ty>::try_from(v).map_err(|_| D::Error::custom(format!("`{s}` out of range")))
            }
        }
    };
}

hex_serde!(hex_u32, u32, 8);
hex_serde!(hex_u64, u64, 16);
hex_serde!(hex_u128, u128, 32);

pub const DEFAULT_BOOT_IV: u64 = 0x5eed_5eed;

/// Everything the offline toolchain needs besides the sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub signature: SignatureConfig,
    #[serde(with = "hex_u64")]
    pub boot_iv: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig { signature: SignatureConfig::default(), boot_iv: DEFAULT_BOOT_IV }
    }
}

impl BuildConfig {
    pub fn with_kind(kind: SigKind) -> Self {
        let mut cfg = BuildConfig::default();
        cfg.signature.function = kind;
        cfg
    }

    /// Boot IV truncated to the signature width.
    pub fn boot_iv(&self) -> u64 {
        self.boot_iv & self.signature.function.mask()
    }
}

/// A scheduled interrupt request: raised at `cycle`, delivered at the next block end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IrqRequest {
    pub cycle: u64,
    pub irq: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Maximum cycles between two passing verifications; 0 disables the watchdog.
    pub watchdog: u64,
    pub predictor: bool,
    pub max_cycles: u64,
    pub irqs: Vec<IrqRequest>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { watchdog: 0, predictor: false, max_cycles: 1_000_000, irqs: Vec::new() }
    }
}

/// On-disk configuration file: optional `[build]` and `[run]` tables.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigFile {
    pub build: BuildConfig,
    pub run: RunConfig,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Ok(toml::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_file_roundtrip() {
        let text = r#"
            [build]
            boot_iv = "0x1234"
            [build.signature]
            function = "cbcmac"
            prince_key = "0x000102030405060708090a0b0c0d0e0f"
            crc_poly = "0xFA567D89"
            [run]
            watchdog = 500
            predictor = true
        "#;
        let cfg: ConfigFile = toml::from_str(text).unwrap();
        assert_eq!(cfg.build.signature.function, SigKind::Cbcmac);
        assert_eq!(cfg.build.signature.prince_key, 0x000102030405060708090a0b0c0d0e0f);
        assert_eq!(cfg.build.boot_iv, 0x1234);
        assert_eq!(cfg.run.watchdog, 500);
        assert_eq!(cfg.run.max_cycles, RunConfig::default().max_cycles);
        let again: ConfigFile = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn hex_parsing() {
        assert_eq!(parse_hex("0xFA56_7D89").unwrap(), 0xFA567D89);
        assert_eq!(parse_hex("ff").unwrap(), 255);
        assert!(parse_hex("0xzz").is_err());
        assert!(parse_hex("").is_err());
    }
}
