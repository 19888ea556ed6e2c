//! Image builder: assembles named sections, places them in memory, wires
//! the interrupt vector table, and emits a layout manifest describing the
//! protected regions.
//!
//! Placement rules:
//! - The protected executable is `exec.start`, then every `exec.body` in
//!   declaration order, then `exec.leave`, packed contiguously at `er_min`.
//! - Untrusted sections go just above the executable when the program
//!   window has room, otherwise just below `er_min`, growing downwards.
//! - Data sections fill the data window from the bottom, even-aligned.
//!
//! The manifest records the final addresses so the monitor, the verifier,
//! and the layout checker all see one authoritative description.

pub mod asm;

use crate::machine::isa::{decode, Opcode, INSTR_LEN};
use crate::machine::{
    MemoryImage, DATA_MAX, DATA_MIN, IVT_LINES, IVT_MAX, IVT_MIN, PROG_MAX, PROG_MIN,
};
use asm::{assemble, AsmBlock, AsmError, AsmItem};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SectionKind {
    #[serde(rename = "exec.start")]
    ExecStart,
    #[serde(rename = "exec.body")]
    ExecBody,
    #[serde(rename = "exec.leave")]
    ExecLeave,
    #[serde(rename = "untrusted")]
    Untrusted,
    #[serde(rename = "data")]
    Data,
}

impl SectionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SectionKind::ExecStart => "exec.start",
            SectionKind::ExecBody => "exec.body",
            SectionKind::ExecLeave => "exec.leave",
            SectionKind::Untrusted => "untrusted",
            SectionKind::Data => "data",
        }
    }

    pub fn is_exec(self) -> bool {
        matches!(
            self,
            SectionKind::ExecStart | SectionKind::ExecBody | SectionKind::ExecLeave
        )
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SectionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exec.start" => Ok(SectionKind::ExecStart),
            "exec.body" => Ok(SectionKind::ExecBody),
            "exec.leave" => Ok(SectionKind::ExecLeave),
            "untrusted" => Ok(SectionKind::Untrusted),
            "data" => Ok(SectionKind::Data),
            other => Err(format!("unknown section kind `{other}`")),
        }
    }
}

/// One input section: assembly source plus placement metadata.
#[derive(Debug, Clone)]
pub struct Section {
    pub kind: SectionKind,
    /// Optional global symbol bound to the section's base address.
    pub label: Option<String>,
    /// Wires the vector table entry for this line to the section base.
    pub irq_line: Option<u8>,
    pub source: String,
}

impl Section {
    pub fn display_name(&self) -> String {
        match &self.label {
            Some(l) => l.clone(),
            None => self.kind.to_string(),
        }
    }
}

/// Address windows the linker may place into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkConfig {
    pub er_min: u16,
    pub or_min: u16,
    pub or_max: u16,
    pub prog_min: u16,
    pub prog_max: u16,
    pub data_min: u16,
    pub data_max: u16,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            er_min: PROG_MIN,
            or_min: 0x0300,
            or_max: 0x030F,
            prog_min: PROG_MIN,
            prog_max: PROG_MAX,
            data_min: DATA_MIN,
            data_max: DATA_MAX,
        }
    }
}

impl LinkConfig {
    fn validate(&self) -> Result<(), LinkError> {
        let bad = |msg: String| Err(LinkError::BadConfig(msg));
        if self.prog_min > self.prog_max {
            return bad(format!(
                "empty program window {:#06x}..{:#06x}",
                self.prog_min, self.prog_max
            ));
        }
        if self.prog_max >= IVT_MIN {
            return bad(format!(
                "program window reaches into the vector table at {IVT_MIN:#06x}"
            ));
        }
        if self.data_min > self.data_max {
            return bad(format!(
                "empty data window {:#06x}..{:#06x}",
                self.data_min, self.data_max
            ));
        }
        if self.data_max >= self.prog_min {
            return bad("data window overlaps the program window".into());
        }
        if self.or_min > self.or_max {
            return bad(format!(
                "empty output region {:#06x}..{:#06x}",
                self.or_min, self.or_max
            ));
        }
        if !self.er_min.is_multiple_of(INSTR_LEN) {
            return bad(format!("er_min {:#06x} is not 4-aligned", self.er_min));
        }
        if self.er_min < self.prog_min || self.er_min > self.prog_max {
            return bad(format!(
                "er_min {:#06x} outside the program window",
                self.er_min
            ));
        }
        Ok(())
    }
}

/// Where the built image ended up: region bounds, every global symbol, the
/// vector table contents, and which in-region addresses are sanctioned
/// handler entry points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutManifest {
    pub er_min: u16,
    pub er_max: u16,
    pub or_min: u16,
    pub or_max: u16,
    pub symbols: BTreeMap<String, u16>,
    pub ivt_entries: [u16; IVT_LINES as usize],
    pub trusted_isr_entries: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkOutput {
    pub image: MemoryImage,
    pub manifest: LayoutManifest,
    /// Base address of each input section, in declaration order.
    pub section_bases: Vec<u16>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaceRegion {
    Exec,
    Untrusted,
    Data,
}

impl fmt::Display for PlaceRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlaceRegion::Exec => "protected executable",
            PlaceRegion::Untrusted => "untrusted program",
            PlaceRegion::Data => "data",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("section `{section}`: {source}")]
    Asm { section: String, source: AsmError },
    #[error("exactly one exec.start section is required")]
    ExecStartCount,
    #[error("exactly one exec.leave section is required")]
    ExecLeaveCount,
    #[error("section `{section}` length is not a multiple of 4")]
    MisalignedSection { section: String },
    #[error("{region} sections do not fit their window")]
    Overflow { region: PlaceRegion },
    #[error("symbol `{label}` defined more than once")]
    DuplicateSymbol { label: String },
    #[error("section `{section}` line {line}: undefined label `{label}`")]
    UndefinedLabel {
        section: String,
        line: usize,
        label: String,
    },
    #[error("irq line {line} wired by more than one section")]
    IvtConflict { line: u8 },
    #[error("irq line {line} out of range")]
    BadIrqLine { line: u8 },
    #[error("exec.leave must end with RET or HALT")]
    LeaveMustReturn,
    #[error("exec region word at {addr:#06x} does not decode as an instruction")]
    ErNotExecutable { addr: u16 },
    #[error("bad layout config: {0}")]
    BadConfig(String),
}

/// Assembles and places `sections` under `cfg`, producing the memory image
/// and its layout manifest.
pub fn link(sections: &[Section], cfg: &LinkConfig) -> Result<LinkOutput, LinkError> {
    cfg.validate()?;

    let blocks: Vec<AsmBlock> = sections
        .iter()
        .map(|s| {
            assemble(&s.source).map_err(|e| LinkError::Asm {
                section: s.display_name(),
                source: e,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut start = None;
    let mut leave = None;
    let mut bodies = Vec::new();
    let mut untrusted = Vec::new();
    let mut data = Vec::new();
    for (i, s) in sections.iter().enumerate() {
        match s.kind {
            SectionKind::ExecStart => {
                if start.replace(i).is_some() {
                    return Err(LinkError::ExecStartCount);
                }
            }
            SectionKind::ExecLeave => {
                if leave.replace(i).is_some() {
                    return Err(LinkError::ExecLeaveCount);
                }
            }
            SectionKind::ExecBody => bodies.push(i),
            SectionKind::Untrusted => untrusted.push(i),
            SectionKind::Data => data.push(i),
        }
    }
    let start = start.ok_or(LinkError::ExecStartCount)?;
    let leave = leave.ok_or(LinkError::ExecLeaveCount)?;

    match blocks[leave].items.last() {
        Some(AsmItem::Instr(i)) if matches!(i.op, Opcode::Ret | Opcode::Halt) => {}
        _ => return Err(LinkError::LeaveMustReturn),
    }

    // Exec sections must keep the region instruction-aligned end to end.
    for &i in std::iter::once(&start)
        .chain(&bodies)
        .chain(std::iter::once(&leave))
    {
        if !blocks[i].len_octets().is_multiple_of(INSTR_LEN as usize) {
            return Err(LinkError::MisalignedSection {
                section: sections[i].display_name(),
            });
        }
    }

    let mut bases = vec![0u16; sections.len()];

    // Protected executable: start, bodies in order, leave; packed at er_min.
    let mut cursor = cfg.er_min as u32;
    for &i in std::iter::once(&start)
        .chain(&bodies)
        .chain(std::iter::once(&leave))
    {
        bases[i] = cursor as u16;
        cursor += blocks[i].len_octets() as u32;
    }
    if cursor - 1 > cfg.prog_max as u32 {
        return Err(LinkError::Overflow {
            region: PlaceRegion::Exec,
        });
    }
    let er_max = (cursor - 1) as u16;

    // Untrusted: above the executable when it fits, otherwise below er_min.
    let mut above = cursor;
    let mut below = cfg.er_min as u32;
    for &i in &untrusted {
        let len = blocks[i].len_octets() as u32;
        if above + len <= cfg.prog_max as u32 + 1 {
            bases[i] = above as u16;
            above += len;
        } else if below >= cfg.prog_min as u32 + len {
            below -= len;
            bases[i] = below as u16;
        } else {
            return Err(LinkError::Overflow {
                region: PlaceRegion::Untrusted,
            });
        }
    }

    // Data sections: bottom of the data window, even-aligned bases.
    let mut dcursor = cfg.data_min as u32;
    for &i in &data {
        dcursor += dcursor & 1;
        let len = blocks[i].len_octets() as u32;
        if dcursor + len > cfg.data_max as u32 + 1 {
            return Err(LinkError::Overflow {
                region: PlaceRegion::Data,
            });
        }
        bases[i] = dcursor as u16;
        dcursor += len;
    }

    let mut symbols = BTreeMap::new();
    let mut define = |name: &str, addr: u16| -> Result<(), LinkError> {
        if symbols.insert(name.to_string(), addr).is_some() {
            return Err(LinkError::DuplicateSymbol {
                label: name.to_string(),
            });
        }
        Ok(())
    };
    for (i, s) in sections.iter().enumerate() {
        if let Some(l) = &s.label {
            define(l, bases[i])?;
        }
        for (name, off) in &blocks[i].labels {
            define(name, (bases[i] as u32 + *off as u32) as u16)?;
        }
    }

    let mut image = MemoryImage::new();
    for (i, s) in sections.iter().enumerate() {
        let bytes = blocks[i]
            .resolve(|name| symbols.get(name).copied())
            .map_err(|e| LinkError::UndefinedLabel {
                section: s.display_name(),
                line: e.line,
                label: e.label,
            })?;
        for (k, b) in bytes.iter().enumerate() {
            image.write8((bases[i] as u32 + k as u32) as u16, *b);
        }
    }

    let mut ivt_entries = [0u16; IVT_LINES as usize];
    let mut wired = [false; IVT_LINES as usize];
    let mut trusted_isr_entries = Vec::new();
    for (i, s) in sections.iter().enumerate() {
        if let Some(line) = s.irq_line {
            if line >= IVT_LINES {
                return Err(LinkError::BadIrqLine { line });
            }
            if wired[line as usize] {
                return Err(LinkError::IvtConflict { line });
            }
            wired[line as usize] = true;
            ivt_entries[line as usize] = bases[i];
            image.set_ivt_entry(line, bases[i]);
            if s.kind.is_exec() {
                trusted_isr_entries.push(bases[i]);
            }
        }
    }

    let mut addr = cfg.er_min as u32;
    while addr <= er_max as u32 {
        let pc = addr as u16;
        if decode(pc, image.fetch(pc)).is_err() {
            return Err(LinkError::ErNotExecutable { addr: pc });
        }
        addr += INSTR_LEN as u32;
    }

    Ok(LinkOutput {
        image,
        manifest: LayoutManifest {
            er_min: cfg.er_min,
            er_max,
            or_min: cfg.or_min,
            or_max: cfg.or_max,
            symbols,
            ivt_entries,
            trusted_isr_entries,
        },
        section_bases: bases,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayoutViolation {
    /// A vector table entry points into the protected region at an address
    /// that is not a sanctioned handler entry.
    IvtIntoErNonEntry { line: u8, addr: u16 },
    /// Two protected regions overlap.
    RegionOverlap { a: &'static str, b: &'static str },
}

impl fmt::Display for LayoutViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutViolation::IvtIntoErNonEntry { line, addr } => write!(
                f,
                "vector {line} targets {addr:#06x} inside the protected region \
                 without being a declared handler entry"
            ),
            LayoutViolation::RegionOverlap { a, b } => {
                write!(f, "{a} region overlaps {b} region")
            }
        }
    }
}

/// Static layout audit over a manifest. An image whose manifest passes with
/// no findings keeps the vector table, the protected executable, and the
/// output region mutually disjoint and every in-region vector on a declared
/// handler entry.
pub fn layout_check(m: &LayoutManifest) -> Vec<LayoutViolation> {
    let mut findings = Vec::new();
    let overlap = |a: (u16, u16), b: (u16, u16)| a.0 <= b.1 && b.0 <= a.1;
    let er = (m.er_min, m.er_max);
    let or = (m.or_min, m.or_max);
    let ivt = (IVT_MIN, IVT_MAX);
    if overlap(er, ivt) {
        findings.push(LayoutViolation::RegionOverlap {
            a: "executable",
            b: "vector table",
        });
    }
    if overlap(er, or) {
        findings.push(LayoutViolation::RegionOverlap {
            a: "executable",
            b: "output",
        });
    }
    if overlap(or, ivt) {
        findings.push(LayoutViolation::RegionOverlap {
            a: "output",
            b: "vector table",
        });
    }
    for (line, &addr) in m.ivt_entries.iter().enumerate() {
        let in_er = addr >= m.er_min && addr <= m.er_max;
        if in_er && !m.trusted_isr_entries.contains(&addr) {
            findings.push(LayoutViolation::IvtIntoErNonEntry {
                line: line as u8,
                addr,
            });
        }
    }
    findings
}
