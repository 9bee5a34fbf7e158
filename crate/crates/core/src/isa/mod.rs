//! Instruction set, assembler and program image format.

mod asm;
mod encoding;
mod image;
mod module;

pub use asm::{assemble, parse_int, parse_module, AsmError};
pub use encoding::*;
pub use image::*;
pub use module::*;
