//! Program images and their on-disk directory format.
//!
//! An image directory holds `text.bin`, `data.bin`, `patches.bin` (raw,
//! little-endian words) and `manifest.json`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encoding::{decode, Opcode};
use crate::config::hex_u64;
use crate::sigfun::SignatureConfig;

pub const TEXT_BASE: u32 = 0x0000_1000;
pub const DATA_BASE: u32 = 0x0001_0000;
pub const PATCH_BASE: u32 = 0x0002_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TypeTag {
    Void,
    I32,
    Ptr,
    F32,
}

impl TypeTag {
    pub fn parse(s: &str) -> Option<TypeTag> {
        Some(match s {
            "void" => TypeTag::Void,
            "i32" => TypeTag::I32,
            "ptr" => TypeTag::Ptr,
            "f32" => TypeTag::F32,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            TypeTag::Void => "void",
            TypeTag::I32 => "i32",
            TypeTag::Ptr => "ptr",
            TypeTag::F32 => "f32",
        }
    }
}

/// Structural function type: equality compares the return type and the full parameter list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FunctionPrototype {
    pub ret: TypeTag,
    pub params: Vec<TypeTag>,
}

impl FunctionPrototype {
    /// Identifier-safe rendering, e.g. `i32_i32_ptr` for `(i32, ptr) -> i32`.
    pub fn mangle(&self) -> String {
        let mut s = self.ret.name().to_string();
        for p in &self.params {
            s.push('_');
            s.push_str(p.name());
        }
        s
    }
}

impl fmt::Display for FunctionPrototype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let params: Vec<&str> = self.params.iter().map(|p| p.name()).collect();
        write!(f, "({}) -> {}", params.join(", "), self.ret.name())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    #[default]
    User,
    Dispatcher,
}

/// Why an instruction exists, for overhead accounting. User code is implicit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    #[default]
    User,
    Nop,
    Ldp,
    /// Verifying jump inserted before an interrupt return.
    Verify,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub name: String,
    pub start: u32,
    pub end: u32,
    pub proto: Option<FunctionPrototype>,
    pub secured: bool,
    pub irq: Option<u32>,
    pub kind: FunctionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelocKind {
    Hi,
    Lo,
    Word,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reloc {
    pub addr: u32,
    pub kind: RelocKind,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IcallSite {
    pub addr: u32,
    pub proto: FunctionPrototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSignature {
    pub addr: u32,
    #[serde(with = "hex_u64")]
    pub iv: u64,
    #[serde(with = "hex_u64")]
    pub exit: u64,
}

/// Signing metadata; present once reference signatures and patches are final.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningInfo {
    pub config: SignatureConfig,
    #[serde(with = "hex_u64")]
    pub boot_iv: u64,
    pub crc_convention: String,
    pub sigma_layout: String,
    pub blocks: Vec<BlockSignature>,
}

pub const CRC_CONVENTION: &str =
    "MSB-first over the 64 state bits, init = incoming signature, no reflection, no final XOR";
pub const SIGMA_LAYOUT: &str = "rs1[4:0] rs2[9:5] rd[14:10] opA[17:15] opB[20:18] tgt[22:21] \
fwdA[24:23] fwdB[26:25] alu(fn[30:27] flow[33:31]) lsu_re[34] lsu_we[35] \
wb(we,from_lsu,size[2],unsigned,verify,patch_load,patch_high,rsvd[2])[45:36] \
imm(enc[31:25],enc[14:12])[55:46] zero[63:56]";

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entry_symbol: String,
    pub symbols: BTreeMap<String, u32>,
    pub functions: Vec<FunctionInfo>,
    pub relocs: Vec<Reloc>,
    pub icall_sites: Vec<IcallSite>,
    /// Non-user instructions by address.
    pub origins: BTreeMap<u32, Origin>,
    /// Addresses of raw data words placed in `.text`.
    pub text_words: BTreeSet<u32>,
    /// Basic-block leader addresses.
    pub leaders: BTreeSet<u32>,
    pub init_regs: Vec<(u8, u32)>,
    pub signing: Option<SigningInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgramImage {
    pub text_base: u32,
    #[serde(skip)]
    pub text: Vec<u8>,
    pub data_base: u32,
    #[serde(skip)]
    pub data: Vec<u8>,
    pub patch_base: u32,
    #[serde(skip)]
    pub patches: Vec<u8>,
    #[serde(with = "hex_vec")]
    pub iv_table: Vec<u64>,
    pub entry: u32,
    pub manifest: Manifest,
}

mod hex_vec {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| format!("0x{x:016x}")))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u64>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| {
                crate::config::parse_hex(s)
                    .map_err(D::Error::custom)
                    .and_then(|v| u64::try_from(v).map_err(|_| D::Error::custom("iv out of range")))
            })
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing section file `{0}`")]
    MissingSection(&'static str),
    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("invalid image: {0}")]
    Invalid(String),
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io { path: path.display().to_string(), source }
}

impl ProgramImage {
    pub fn text_end(&self) -> u32 {
        self.text_base + self.text.len() as u32
    }

    pub fn text_word(&self, addr: u32) -> Option<u32> {
        read_word(&self.text, self.text_base, addr)
    }

    pub fn patch_word(&self, index: usize) -> Option<u32> {
        read_word(&self.patches, self.patch_base, self.patch_base + 4 * index as u32)
    }

    pub fn text_words(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.text
            .chunks_exact(4)
            .enumerate()
            .map(|(i, c)| (self.text_base + 4 * i as u32, u32::from_le_bytes([c[0], c[1], c[2], c[3]])))
    }

    /// Size of the sections affected by instrumentation: `.text` plus `.patches`.
    pub fn code_size(&self) -> usize {
        self.text.len() + self.patches.len()
    }

    pub fn is_signed(&self) -> bool {
        self.manifest.signing.is_some()
    }

    pub fn function_at(&self, addr: u32) -> Option<&FunctionInfo> {
        self.manifest.functions.iter().find(|f| f.start <= addr && addr < f.end)
    }

    /// Handler address for each interrupt line.
    pub fn irq_handlers(&self) -> BTreeMap<u32, u32> {
        self.manifest.functions.iter().filter_map(|f| f.irq.map(|n| (n, f.start))).collect()
    }

    /// Addresses of in-line reference words (the word after each verification instruction).
    pub fn reference_slots(&self) -> Vec<u32> {
        self.instructions().filter(|(_, op)| op.is_checked()).map(|(a, _)| a + 4).collect()
    }

    /// Decoded instruction addresses in `.text`, skipping reference and data words.
    pub fn instructions(&self) -> impl Iterator<Item = (u32, Opcode)> + '_ {
        let mut addr = self.text_base;
        let end = self.text_end();
        std::iter::from_fn(move || {
            while addr < end {
                let a = addr;
                addr += 4;
                if self.manifest.text_words.contains(&a) {
                    continue;
                }
                if let Ok(i) = decode(self.text_word(a)?) {
                    if i.op.is_checked() {
                        addr += 4;
                    }
                    return Some((a, i.op));
                }
            }
            None
        })
    }

    /// Structural checks: alignment, patch offsets inside `.patches`.
    pub fn validate(&self) -> Result<(), ImageError> {
        let invalid = |m: String| Err(ImageError::Invalid(m));
        if !self.text.len().is_multiple_of(4)
            || !self.patches.len().is_multiple_of(4)
            || !self.data.len().is_multiple_of(4)
        {
            return invalid("section sizes must be multiples of 4 bytes".into());
        }
        if self.entry < self.text_base || self.entry >= self.text_end() || !self.entry.is_multiple_of(4) {
            return invalid(format!("entry 0x{:08x} outside .text", self.entry));
        }
        let npatch = self.patches.len() / 4;
        for (addr, _) in self.instructions().filter(|(_, op)| matches!(op, Opcode::Ldp | Opcode::LdpHi)) {
            let off = (self.text_word(addr).unwrap() >> 12) as usize;
            if off >= npatch {
                return invalid(format!("ldp at 0x{addr:08x} reads patch slot {off} of {npatch}"));
            }
        }
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ImageError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, bytes) in [("text.bin", &self.text), ("data.bin", &self.data), ("patches.bin", &self.patches)] {
            let p = dir.join(name);
            std::fs::write(&p, bytes).map_err(|e| io_err(&p, e))?;
        }
        let p = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&p, json + "\n").map_err(|e| io_err(&p, e))
    }

    pub fn load(dir: &Path) -> Result<ProgramImage, ImageError> {
        let p = dir.join("manifest.json");
        let json = std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?;
        let mut img: ProgramImage = serde_json::from_str(&json)?;
        let read = |name: &'static str| -> Result<Vec<u8>, ImageError> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(ImageError::MissingSection(name));
            }
            std::fs::read(&p).map_err(|e| io_err(&p, e))
        };
        img.text = read("text.bin")?;
        img.patches = read("patches.bin")?;
        img.data = read("data.bin")?;
        img.validate()?;
        Ok(img)
    }
}

pub fn read_word(bytes: &[u8], base: u32, addr: u32) -> Option<u32> {
    let off = addr.checked_sub(base)? as usize;
    let b = bytes.get(off..off + 4)?;
    Some(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn write_word(bytes: &mut [u8], base: u32, addr: u32, value: u32) -> bool {
    let Some(off) = addr.checked_sub(base) else { return false };
    match bytes.get_mut(off as usize..off as usize + 4) {
        Some(b) => {
            b.copy_from_slice(&value.to_le_bytes());
            true
        }
        None => false,
    }
}
