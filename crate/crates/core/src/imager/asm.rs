//! Assembler for the MCU instruction set.
//!
//! Grammar, one item per line:
//!
//! ```text
//! start:  LOADI R1, 0x1000   ; set up the stack
//!         CALL  main
//! table:  WORD  main, 0
//!         BYTE  1, 2, 3
//! ```
//!
//! Mnemonics and registers are case-insensitive; immediates are `0x` hex,
//! decimal, or label names. Labels are `ident:` prefixes (label-only lines
//! allowed) and name octet offsets from the block start. Resolution to
//! absolute addresses happens at link time, so a block stays
//! position-independent until placed.

use crate::machine::isa::{encode, Instruction, Opcode, INSTR_LEN};
use std::collections::BTreeSet;
use thiserror::Error;

/// Immediate operand, either a literal or a link-time label reference.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImmOperand {
    Literal(u16),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsmInstr {
    pub op: Opcode,
    pub rd: u8,
    pub rs: u8,
    pub imm: ImmOperand,
    /// 1-based source line, kept for link-time diagnostics.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsmItem {
    Instr(AsmInstr),
    /// `BYTE` directive payload, emitted verbatim.
    Bytes {
        data: Vec<u8>,
        line: usize,
    },
    /// `WORD` directive payload, each value emitted as little-endian u16.
    Words {
        values: Vec<ImmOperand>,
        line: usize,
    },
}

impl AsmItem {
    pub fn len_octets(&self) -> usize {
        match self {
            AsmItem::Instr(_) => INSTR_LEN as usize,
            AsmItem::Bytes { data, .. } => data.len(),
            AsmItem::Words { values, .. } => values.len() * 2,
        }
    }
}

/// One assembled source block: items plus labels as octet offsets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AsmBlock {
    pub items: Vec<AsmItem>,
    pub labels: Vec<(String, u16)>,
}

/// A label reference that survived to encoding without a definition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnresolvedLabel {
    pub label: String,
    pub line: usize,
}

impl AsmBlock {
    pub fn len_octets(&self) -> usize {
        self.items.iter().map(AsmItem::len_octets).sum()
    }

    /// Encodes the block, resolving label operands through `lookup`
    /// (which returns absolute addresses).
    pub fn resolve(
        &self,
        mut lookup: impl FnMut(&str) -> Option<u16>,
    ) -> Result<Vec<u8>, UnresolvedLabel> {
        let mut out = Vec::with_capacity(self.len_octets());
        let mut imm_of = |imm: &ImmOperand, line: usize| match imm {
            ImmOperand::Literal(v) => Ok(*v),
            ImmOperand::Label(name) => lookup(name).ok_or_else(|| UnresolvedLabel {
                label: name.clone(),
                line,
            }),
        };
        for item in &self.items {
            match item {
                AsmItem::Instr(i) => {
                    let imm = imm_of(&i.imm, i.line)?;
                    out.extend_from_slice(&encode(&Instruction::new(i.op, i.rd, i.rs, imm)));
                }
                AsmItem::Bytes { data, .. } => out.extend_from_slice(data),
                AsmItem::Words { values, line } => {
                    for v in values {
                        out.extend_from_slice(&imm_of(v, *line)?.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum AsmError {
    #[error("line {line}: unknown mnemonic `{text}`")]
    UnknownMnemonic { line: usize, text: String },
    #[error("line {line}: `{mnemonic}` takes {expected} operand(s), got {got}")]
    OperandCount {
        line: usize,
        mnemonic: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: expected register R0-R7, got `{text}`")]
    BadRegister { line: usize, text: String },
    #[error("line {line}: bad immediate `{text}`")]
    BadImmediate { line: usize, text: String },
    #[error("line {line}: expected `[addr]`, got `{text}`")]
    BadMemOperand { line: usize, text: String },
    #[error("line {line}: byte value `{text}` out of range")]
    BadByte { line: usize, text: String },
    #[error("line {line}: duplicate label `{label}`")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("block exceeds the 16-bit address space")]
    BlockTooLarge,
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_register(s: &str) -> Option<u8> {
    let rest = s.strip_prefix(['r', 'R'])?;
    if rest.len() != 1 {
        return None;
    }
    match rest.as_bytes()[0] {
        b @ b'0'..=b'7' => Some(b - b'0'),
        _ => None,
    }
}

fn parse_imm(s: &str, line: usize) -> Result<ImmOperand, AsmError> {
    let t = s.trim();
    let bad = || AsmError::BadImmediate {
        line,
        text: t.to_string(),
    };
    if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        return u16::from_str_radix(hex, 16)
            .map(ImmOperand::Literal)
            .map_err(|_| bad());
    }
    if t.starts_with(|c: char| c.is_ascii_digit()) {
        return t.parse::<u16>().map(ImmOperand::Literal).map_err(|_| bad());
    }
    // Registers are not addresses; catching them here avoids silently
    // treating `LOADI R1, R2` as a label reference.
    if parse_register(t).is_some() {
        return Err(bad());
    }
    if is_ident(t) {
        return Ok(ImmOperand::Label(t.to_string()));
    }
    Err(bad())
}

fn expect_register(s: &str, line: usize) -> Result<u8, AsmError> {
    parse_register(s.trim()).ok_or_else(|| AsmError::BadRegister {
        line,
        text: s.trim().to_string(),
    })
}

fn parse_mem(s: &str, line: usize) -> Result<ImmOperand, AsmError> {
    let t = s.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|rest| rest.strip_suffix(']'))
        .ok_or_else(|| AsmError::BadMemOperand {
            line,
            text: t.to_string(),
        })?;
    parse_imm(inner, line)
}

fn split_operands(rest: &str, line: usize) -> Result<Vec<&str>, AsmError> {
    let rest = rest.trim();
    if rest.is_empty() {
        return Ok(Vec::new());
    }
    let parts: Vec<&str> = rest.split(',').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(AsmError::Syntax {
            line,
            msg: "empty operand".into(),
        });
    }
    Ok(parts)
}

fn expect_count(
    ops: &[&str],
    expected: usize,
    mnemonic: &str,
    line: usize,
) -> Result<(), AsmError> {
    if ops.len() != expected {
        return Err(AsmError::OperandCount {
            line,
            mnemonic: mnemonic.to_ascii_uppercase(),
            expected,
            got: ops.len(),
        });
    }
    Ok(())
}

/// Assembles one source block.
pub fn assemble(source: &str) -> Result<AsmBlock, AsmError> {
    let mut block = AsmBlock::default();
    let mut seen = BTreeSet::new();
    let mut cursor: usize = 0;
    for (idx, raw) in source.lines().enumerate() {
        let line = idx + 1;
        let mut text = raw.split(';').next().unwrap_or("").trim();
        while let Some(colon) = text.find(':') {
            let name = text[..colon].trim();
            if !is_ident(name) || parse_register(name).is_some() {
                return Err(AsmError::Syntax {
                    line,
                    msg: format!("bad label `{name}`"),
                });
            }
            if !seen.insert(name.to_string()) {
                return Err(AsmError::DuplicateLabel {
                    line,
                    label: name.to_string(),
                });
            }
            let offset = u16::try_from(cursor).map_err(|_| AsmError::BlockTooLarge)?;
            block.labels.push((name.to_string(), offset));
            text = text[colon + 1..].trim();
        }
        if text.is_empty() {
            continue;
        }
        let (mnemonic, rest) = match text.split_once(char::is_whitespace) {
            Some((m, r)) => (m, r),
            None => (text, ""),
        };
        let ops = split_operands(rest, line)?;
        let item = match mnemonic.to_ascii_uppercase().as_str() {
            "BYTE" => {
                if ops.is_empty() {
                    return Err(AsmError::OperandCount {
                        line,
                        mnemonic: "BYTE".into(),
                        expected: 1,
                        got: 0,
                    });
                }
                let mut data = Vec::with_capacity(ops.len());
                for op in &ops {
                    match parse_imm(op, line)? {
                        ImmOperand::Literal(v) if v <= 0xFF => data.push(v as u8),
                        _ => {
                            return Err(AsmError::BadByte {
                                line,
                                text: op.to_string(),
                            })
                        }
                    }
                }
                AsmItem::Bytes { data, line }
            }
            "WORD" => {
                if ops.is_empty() {
                    return Err(AsmError::OperandCount {
                        line,
                        mnemonic: "WORD".into(),
                        expected: 1,
                        got: 0,
                    });
                }
                let values = ops
                    .iter()
                    .map(|op| parse_imm(op, line))
                    .collect::<Result<Vec<_>, _>>()?;
                AsmItem::Words { values, line }
            }
            _ => {
                let op =
                    Opcode::from_mnemonic(mnemonic).ok_or_else(|| AsmError::UnknownMnemonic {
                        line,
                        text: mnemonic.to_string(),
                    })?;
                let (rd, rs, imm) = parse_operands(op, &ops, mnemonic, line)?;
                AsmItem::Instr(AsmInstr {
                    op,
                    rd,
                    rs,
                    imm,
                    line,
                })
            }
        };
        cursor += item.len_octets();
        if cursor > 0x1_0000 {
            return Err(AsmError::BlockTooLarge);
        }
        block.items.push(item);
    }
    Ok(block)
}

fn parse_operands(
    op: Opcode,
    ops: &[&str],
    mnemonic: &str,
    line: usize,
) -> Result<(u8, u8, ImmOperand), AsmError> {
    let lit0 = ImmOperand::Literal(0);
    Ok(match op {
        Opcode::Nop
        | Opcode::Ret
        | Opcode::Reti
        | Opcode::Ei
        | Opcode::Di
        | Opcode::Sleep
        | Opcode::Halt => {
            expect_count(ops, 0, mnemonic, line)?;
            (0, 0, lit0)
        }
        Opcode::Loadi => {
            expect_count(ops, 2, mnemonic, line)?;
            (expect_register(ops[0], line)?, 0, parse_imm(ops[1], line)?)
        }
        Opcode::Load => {
            expect_count(ops, 2, mnemonic, line)?;
            (expect_register(ops[0], line)?, 0, parse_mem(ops[1], line)?)
        }
        Opcode::Store => {
            expect_count(ops, 2, mnemonic, line)?;
            (0, expect_register(ops[0], line)?, parse_mem(ops[1], line)?)
        }
        Opcode::Mov | Opcode::Add | Opcode::Sub | Opcode::And | Opcode::Cmp => {
            expect_count(ops, 2, mnemonic, line)?;
            (
                expect_register(ops[0], line)?,
                expect_register(ops[1], line)?,
                lit0,
            )
        }
        Opcode::Jmp | Opcode::Jz | Opcode::Jnz | Opcode::Call => {
            expect_count(ops, 1, mnemonic, line)?;
            (0, 0, parse_imm(ops[0], line)?)
        }
        Opcode::Out => {
            expect_count(ops, 1, mnemonic, line)?;
            (0, expect_register(ops[0], line)?, lit0)
        }
    })
}
