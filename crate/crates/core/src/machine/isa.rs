//! Instruction set: fixed four-octet encodings for a 16-bit MCU.
//!
//! Encoding layout: `[opcode, (rd << 4) | rs, imm_lo, imm_hi]`. The all-zero
//! word decodes to NOP. Register nibbles are masked to the eight registers;
//! operand fields an opcode does not use are ignored on decode and emitted as
//! zero on encode, so assembler output round-trips exactly.

use thiserror::Error;

pub const INSTR_LEN: u16 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Nop,
    Loadi,
    Load,
    Store,
    Mov,
    Add,
    Sub,
    And,
    Cmp,
    Jmp,
    Jz,
    Jnz,
    Call,
    Ret,
    Reti,
    Ei,
    Di,
    Sleep,
    Out,
    Halt,
}

pub const ALL_OPCODES: [Opcode; 20] = [
    Opcode::Nop,
    Opcode::Loadi,
    Opcode::Load,
    Opcode::Store,
    Opcode::Mov,
    Opcode::Add,
    Opcode::Sub,
    Opcode::And,
    Opcode::Cmp,
    Opcode::Jmp,
    Opcode::Jz,
    Opcode::Jnz,
    Opcode::Call,
    Opcode::Ret,
    Opcode::Reti,
    Opcode::Ei,
    Opcode::Di,
    Opcode::Sleep,
    Opcode::Out,
    Opcode::Halt,
];

impl Opcode {
    pub fn to_byte(self) -> u8 {
        match self {
            Opcode::Nop => 0x00,
            Opcode::Loadi => 0x01,
            Opcode::Load => 0x02,
            Opcode::Store => 0x03,
            Opcode::Mov => 0x04,
            Opcode::Add => 0x05,
            Opcode::Sub => 0x06,
            Opcode::And => 0x07,
            Opcode::Cmp => 0x08,
            Opcode::Jmp => 0x09,
            Opcode::Jz => 0x0A,
            Opcode::Jnz => 0x0B,
            Opcode::Call => 0x0C,
            Opcode::Ret => 0x0D,
            Opcode::Reti => 0x0E,
            Opcode::Ei => 0x0F,
            Opcode::Di => 0x10,
            Opcode::Sleep => 0x11,
            Opcode::Out => 0x12,
            Opcode::Halt => 0x13,
        }
    }

    pub fn from_byte(b: u8) -> Option<Opcode> {
        ALL_OPCODES.iter().copied().find(|op| op.to_byte() == b)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Nop => "NOP",
            Opcode::Loadi => "LOADI",
            Opcode::Load => "LOAD",
            Opcode::Store => "STORE",
            Opcode::Mov => "MOV",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::And => "AND",
            Opcode::Cmp => "CMP",
            Opcode::Jmp => "JMP",
            Opcode::Jz => "JZ",
            Opcode::Jnz => "JNZ",
            Opcode::Call => "CALL",
            Opcode::Ret => "RET",
            Opcode::Reti => "RETI",
            Opcode::Ei => "EI",
            Opcode::Di => "DI",
            Opcode::Sleep => "SLEEP",
            Opcode::Out => "OUT",
            Opcode::Halt => "HALT",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Opcode> {
        let up = s.to_ascii_uppercase();
        ALL_OPCODES.iter().copied().find(|op| op.mnemonic() == up)
    }

    /// Operand fields this opcode consumes: (uses rd, uses rs, uses imm).
    pub fn operand_use(self) -> (bool, bool, bool) {
        match self {
            Opcode::Nop
            | Opcode::Ret
            | Opcode::Reti
            | Opcode::Ei
            | Opcode::Di
            | Opcode::Sleep
            | Opcode::Halt => (false, false, false),
            Opcode::Loadi | Opcode::Load => (true, false, true),
            Opcode::Store => (false, true, true),
            Opcode::Mov | Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Cmp => {
                (true, true, false)
            }
            Opcode::Jmp | Opcode::Jz | Opcode::Jnz | Opcode::Call => (false, false, true),
            Opcode::Out => (false, true, false),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Instruction {
    pub op: Opcode,
    pub rd: u8,
    pub rs: u8,
    pub imm: u16,
}

impl Instruction {
    pub fn new(op: Opcode, rd: u8, rs: u8, imm: u16) -> Instruction {
        let (use_rd, use_rs, use_imm) = op.operand_use();
        Instruction {
            op,
            rd: if use_rd { rd & 0x7 } else { 0 },
            rs: if use_rs { rs & 0x7 } else { 0 },
            imm: if use_imm { imm } else { 0 },
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("illegal opcode octet {octets:02x?} at pc {pc:#06x}")]
    IllegalOpcode { pc: u16, octets: [u8; 4] },
}

/// Decodes the four octets fetched at `pc`. Only the opcode octet gates
/// legality; unused operand fields are discarded so decode is total over the
/// defined opcode set.
pub fn decode(pc: u16, octets: [u8; 4]) -> Result<Instruction, DecodeError> {
    let op = Opcode::from_byte(octets[0]).ok_or(DecodeError::IllegalOpcode { pc, octets })?;
    Ok(Instruction::new(
        op,
        (octets[1] >> 4) & 0x7,
        octets[1] & 0x7,
        u16::from_le_bytes([octets[2], octets[3]]),
    ))
}

pub fn encode(i: &Instruction) -> [u8; 4] {
    let canonical = Instruction::new(i.op, i.rd, i.rs, i.imm);
    let [lo, hi] = canonical.imm.to_le_bytes();
    [
        canonical.op.to_byte(),
        (canonical.rd << 4) | canonical.rs,
        lo,
        hi,
    ]
}
