//! Cycle trace serialization.
//!
//! One CSV row per cycle:
//!
//! ```text
//! cycle,pc,opcode,w_en,d_addr,dma_en,dma_addr,irq,irq_line,exec,phase
//! ```
//!
//! Addresses are lowercase `0x%04x` and zeroed when their enable bit is
//! clear; booleans are `0`/`1`; `opcode` is the executed mnemonic or one of
//! the markers `IRQ`, `DMA`, `HOST`, `IDLE`, `ILL`, `FAULT`. Rows written
//! and parsed here round-trip exactly, so traces work as goldens.

use crate::machine::isa::Opcode;
use crate::machine::{BusSignals, CycleKind, CycleRecord, Fault};
use crate::monitor::Phase;
use thiserror::Error;

pub const CSV_HEADER: &str = "cycle,pc,opcode,w_en,d_addr,dma_en,dma_addr,irq,irq_line,exec,phase";

/// What the cycle spent its time on, as shown in the `opcode` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Instr(Opcode),
    IrqDispatch,
    Dma,
    HostWrite,
    Idle,
    /// Fetch hit a non-decodable word; the machine halted.
    Ill,
    /// Any other fault (stack overflow); the machine halted.
    Fault,
}

impl RowKind {
    pub fn marker(self) -> &'static str {
        match self {
            RowKind::Instr(op) => op.mnemonic(),
            RowKind::IrqDispatch => "IRQ",
            RowKind::Dma => "DMA",
            RowKind::HostWrite => "HOST",
            RowKind::Idle => "IDLE",
            RowKind::Ill => "ILL",
            RowKind::Fault => "FAULT",
        }
    }

    pub fn from_marker(s: &str) -> Option<RowKind> {
        match s {
            "IRQ" => Some(RowKind::IrqDispatch),
            "DMA" => Some(RowKind::Dma),
            "HOST" => Some(RowKind::HostWrite),
            "IDLE" => Some(RowKind::Idle),
            "ILL" => Some(RowKind::Ill),
            "FAULT" => Some(RowKind::Fault),
            other => Opcode::from_mnemonic(other).map(RowKind::Instr),
        }
    }

    pub fn from_cycle_kind(kind: CycleKind) -> RowKind {
        match kind {
            CycleKind::Exec(op) => RowKind::Instr(op),
            CycleKind::IrqDispatch => RowKind::IrqDispatch,
            CycleKind::Dma => RowKind::Dma,
            CycleKind::HostWrite => RowKind::HostWrite,
            CycleKind::SleepIdle | CycleKind::HaltedIdle => RowKind::Idle,
        }
    }
}

/// One traced cycle: the bus signals, what ran, and the monitor phase after
/// judging the cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRow {
    pub signals: BusSignals,
    pub kind: RowKind,
    pub phase: Phase,
}

impl TraceRow {
    pub fn from_record(record: &CycleRecord, phase: Phase) -> TraceRow {
        TraceRow {
            signals: record.signals,
            kind: RowKind::from_cycle_kind(record.kind),
            phase,
        }
    }

    /// The row a halted fault leaves behind: idle bus signals at the
    /// faulting pc, marked by fault kind.
    pub fn from_fault(fault: &Fault, phase: Phase) -> TraceRow {
        TraceRow {
            signals: BusSignals::idle(fault.cycle(), fault.pc()),
            kind: match fault {
                Fault::IllegalOpcode { .. } => RowKind::Ill,
                Fault::StackOverflow { .. } => RowKind::Fault,
            },
            phase,
        }
    }

    pub fn exec_bit(&self) -> bool {
        self.phase != Phase::NotExec
    }
}

fn fmt_row(row: &TraceRow, out: &mut String) {
    use std::fmt::Write;
    let s = &row.signals;
    let gated = |en: bool, addr: u16| if en { addr } else { 0 };
    writeln!(
        out,
        "{},0x{:04x},{},{},0x{:04x},{},0x{:04x},{},{},{},{}",
        s.cycle,
        s.pc,
        row.kind.marker(),
        s.w_en as u8,
        gated(s.w_en, s.d_addr),
        s.dma_en as u8,
        gated(s.dma_en, s.dma_addr),
        s.irq as u8,
        if s.irq { s.irq_line } else { 0 },
        row.exec_bit() as u8,
        row.phase,
    )
    .expect("writing to String cannot fail");
}

/// Serializes rows to CSV with header and trailing newline.
pub fn write_csv(rows: &[TraceRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        fmt_row(row, &mut out);
    }
    out
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line 1: expected header `{CSV_HEADER}`")]
    BadHeader,
    #[error("line {line}: expected 11 fields, got {got}")]
    ColumnCount { line: usize, got: usize },
    #[error("line {line}: bad {field} value `{value}`")]
    BadField {
        line: usize,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: exec bit disagrees with phase")]
    ExecPhaseMismatch { line: usize },
}

fn parse_hex16(s: &str, field: &'static str, line: usize) -> Result<u16, TraceError> {
    s.strip_prefix("0x")
        .and_then(|h| u16::from_str_radix(h, 16).ok())
        .ok_or_else(|| TraceError::BadField {
            line,
            field,
            value: s.to_string(),
        })
}

fn parse_bool(s: &str, field: &'static str, line: usize) -> Result<bool, TraceError> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(TraceError::BadField {
            line,
            field,
            value: s.to_string(),
        }),
    }
}

/// Parses a trace CSV back into rows, validating the self-consistency of
/// the exec and phase columns.
pub fn parse_csv(text: &str) -> Result<Vec<TraceRow>, TraceError> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(CSV_HEADER) {
        return Err(TraceError::BadHeader);
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 11 {
            return Err(TraceError::ColumnCount {
                line,
                got: fields.len(),
            });
        }
        let bad = |field: &'static str, value: &str| TraceError::BadField {
            line,
            field,
            value: value.to_string(),
        };
        let cycle = fields[0]
            .parse::<u64>()
            .map_err(|_| bad("cycle", fields[0]))?;
        let pc = parse_hex16(fields[1], "pc", line)?;
        let kind = RowKind::from_marker(fields[2]).ok_or_else(|| bad("opcode", fields[2]))?;
        let w_en = parse_bool(fields[3], "w_en", line)?;
        let d_addr = parse_hex16(fields[4], "d_addr", line)?;
        let dma_en = parse_bool(fields[5], "dma_en", line)?;
        let dma_addr = parse_hex16(fields[6], "dma_addr", line)?;
        let irq = parse_bool(fields[7], "irq", line)?;
        let irq_line = fields[8]
            .parse::<u8>()
            .ok()
            .filter(|l| *l < 16)
            .ok_or_else(|| bad("irq_line", fields[8]))?;
        let exec = parse_bool(fields[9], "exec", line)?;
        let phase = match fields[10] {
            "NotExec" => Phase::NotExec,
            "Executing" => Phase::Executing,
            "PostExec" => Phase::PostExec,
            other => return Err(bad("phase", other)),
        };
        if exec != (phase != Phase::NotExec) {
            return Err(TraceError::ExecPhaseMismatch { line });
        }
        rows.push(TraceRow {
            signals: BusSignals {
                cycle,
                pc,
                w_en,
                d_addr,
                dma_en,
                dma_addr,
                irq,
                irq_line,
            },
            kind,
            phase,
        });
    }
    Ok(rows)
}
