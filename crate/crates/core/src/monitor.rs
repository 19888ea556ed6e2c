//! Execution monitor: a pure FSM that watches per-cycle bus signals and
//! maintains the EXEC bit backing attestation.
//!
//! EXEC is 1 exactly while the monitored region (ER) is known to be executing
//! untampered: entered at `er_min` only, left from its final instruction
//! only, with its code, the vector table, and (after completion) the output
//! region unmodified. Two interrupt policies exist: `Apex` zeroes EXEC on any
//! interrupt taken inside ER; `Asap` permits interrupts whose handlers are
//! themselves linked inside ER.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::machine::{BusSignals, DATA_MAX, DATA_MIN, IVT_MAX, IVT_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Any interrupt while pc is inside ER is a violation.
    Apex,
    /// Interrupts are tolerated; the landing pc decides (entry/exit rules).
    Asap,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Apex => "apex",
            Mode::Asap => "asap",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Mode, ConfigError> {
        match s.to_ascii_lowercase().as_str() {
            "apex" => Ok(Mode::Apex),
            "asap" => Ok(Mode::Asap),
            _ => Err(ConfigError::BadMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown mode {0:?} (expected \"apex\" or \"asap\")")]
    BadMode(String),
    #[error("er_min {er_min:#06x} must be below er_max {er_max:#06x}")]
    ErBoundsInverted { er_min: u16, er_max: u16 },
    #[error("or_min {or_min:#06x} must not exceed or_max {or_max:#06x}")]
    OrBoundsInverted { or_min: u16, or_max: u16 },
    #[error("ER [{er_min:#06x}, {er_max:#06x}] overlaps the IVT")]
    ErOverlapsIvt { er_min: u16, er_max: u16 },
    #[error("ER [{er_min:#06x}, {er_max:#06x}] overlaps OR [{or_min:#06x}, {or_max:#06x}]")]
    ErOverlapsOr {
        er_min: u16,
        er_max: u16,
        or_min: u16,
        or_max: u16,
    },
}

/// Region configuration the monitor is armed with. The IVT location is
/// architectural (0xFFE0–0xFFFF) and not configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorConfig {
    pub mode: Mode,
    pub er_min: u16,
    pub er_max: u16,
    pub or_min: u16,
    pub or_max: u16,
}

fn ranges_overlap(a_min: u16, a_max: u16, b_min: u16, b_max: u16) -> bool {
    a_min <= b_max && b_min <= a_max
}

impl MonitorConfig {
    pub fn new(
        mode: Mode,
        er_min: u16,
        er_max: u16,
        or_min: u16,
        or_max: u16,
    ) -> Result<MonitorConfig, ConfigError> {
        if er_min >= er_max {
            return Err(ConfigError::ErBoundsInverted { er_min, er_max });
        }
        if or_min > or_max {
            return Err(ConfigError::OrBoundsInverted { or_min, or_max });
        }
        if ranges_overlap(er_min, er_max, IVT_MIN, IVT_MAX) {
            return Err(ConfigError::ErOverlapsIvt { er_min, er_max });
        }
        if ranges_overlap(er_min, er_max, or_min, or_max) {
            return Err(ConfigError::ErOverlapsOr {
                er_min,
                er_max,
                or_min,
                or_max,
            });
        }
        Ok(MonitorConfig {
            mode,
            er_min,
            er_max,
            or_min,
            or_max,
        })
    }

    pub fn pc_in_er(&self, pc: u16) -> bool {
        self.er_min <= pc && pc <= self.er_max
    }

    /// True for the pc of the final ER instruction: the fetch whose four
    /// octets cover `er_max`. Region bounds are octet-inclusive while pcs are
    /// instruction-aligned, so literal pc equality is never used.
    pub fn is_exit_pc(&self, pc: u16) -> bool {
        pc <= self.er_max && u32::from(self.er_max) < u32::from(pc) + 4
    }

    fn cpu_write_touches(&self, d_addr: u16, lo: u16, hi: u16) -> bool {
        // A CPU write covers two octets at d_addr, d_addr+1.
        let start = u32::from(d_addr);
        let end = start + 1;
        start <= u32::from(hi) && end >= u32::from(lo)
    }

    pub fn write_touches_ivt(&self, s: &BusSignals) -> bool {
        (s.w_en && self.cpu_write_touches(s.d_addr, IVT_MIN, IVT_MAX))
            || (s.dma_en && (IVT_MIN..=IVT_MAX).contains(&s.dma_addr))
    }

    pub fn write_touches_er(&self, s: &BusSignals) -> bool {
        (s.w_en && self.cpu_write_touches(s.d_addr, self.er_min, self.er_max))
            || (s.dma_en && (self.er_min..=self.er_max).contains(&s.dma_addr))
    }

    pub fn write_touches_or(&self, s: &BusSignals) -> bool {
        (s.w_en && self.cpu_write_touches(s.d_addr, self.or_min, self.or_max))
            || (s.dma_en && (self.or_min..=self.or_max).contains(&s.dma_addr))
    }

    pub fn cpu_write_touches_or(&self, s: &BusSignals) -> bool {
        s.w_en && self.cpu_write_touches(s.d_addr, self.or_min, self.or_max)
    }

    pub fn dma_into_data_memory(&self, s: &BusSignals) -> bool {
        s.dma_en && (DATA_MIN..=DATA_MAX).contains(&s.dma_addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Not provably executing; EXEC is 0.
    NotExec,
    /// Inside a monitored run entered at er_min.
    Executing,
    /// The run completed through the final ER instruction; outputs are
    /// frozen until the next restart or a host reset.
    PostExec,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Phase::NotExec => "NotExec",
            Phase::Executing => "Executing",
            Phase::PostExec => "PostExec",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorState {
    pub phase: Phase,
}

impl Default for MonitorState {
    fn default() -> Self {
        MonitorState {
            phase: Phase::NotExec,
        }
    }
}

impl MonitorState {
    pub fn new() -> MonitorState {
        MonitorState::default()
    }

    pub fn exec_bit(&self) -> u8 {
        match self.phase {
            Phase::NotExec => 0,
            Phase::Executing | Phase::PostExec => 1,
        }
    }

    pub fn exec(&self) -> bool {
        self.phase != Phase::NotExec
    }
}

/// Judges one cycle. `prev` is the previous cycle's signals (`None` on the
/// first cycle, which is treated as arriving from outside ER). All rules are
/// evaluated against the incoming phase; any violation forces `NotExec` for
/// this cycle and beats a coinciding restart. With no violation, pc equal to
/// `er_min` (re)starts a monitored run from any phase, and a legal exit from
/// the final ER instruction moves `Executing` to `PostExec`.
pub fn monitor_step(
    state: MonitorState,
    prev: Option<&BusSignals>,
    cur: &BusSignals,
    cfg: &MonitorConfig,
) -> MonitorState {
    let prev_pc_in_er = prev.map(|p| cfg.pc_in_er(p.pc)).unwrap_or(false);
    let prev_pc_is_exit = prev.map(|p| cfg.is_exit_pc(p.pc)).unwrap_or(false);
    let cur_in_er = cfg.pc_in_er(cur.pc);
    let entering = !prev_pc_in_er && cur_in_er;
    let exiting = prev_pc_in_er && !cur_in_er;

    let mut violation = false;
    // V1: ER entered anywhere but its first instruction.
    violation |= entering && cur.pc != cfg.er_min;
    // V2: ER left from anywhere but its final instruction.
    violation |= exiting && !prev_pc_is_exit;
    // V3 (Apex only): interrupt taken while executing inside ER.
    violation |= cfg.mode == Mode::Apex && cur_in_er && cur.irq;
    // V4: any write into the vector table, either bus master, any phase.
    violation |= cfg.write_touches_ivt(cur);
    // V5: ER code modified while it is being (or has been) proven.
    violation |= state.phase != Phase::NotExec && cfg.write_touches_er(cur);
    // V6: during execution, DMA must keep out of data memory and only ER
    // code may produce outputs; after completion the outputs are frozen.
    violation |= state.phase == Phase::Executing
        && (cfg.dma_into_data_memory(cur) || (cfg.cpu_write_touches_or(cur) && !cur_in_er));
    violation |= state.phase == Phase::PostExec && cfg.write_touches_or(cur);

    let phase = if violation {
        Phase::NotExec
    } else if cur.pc == cfg.er_min {
        Phase::Executing
    } else if exiting && state.phase == Phase::Executing {
        // prev_pc_is_exit holds here, otherwise V2 fired above.
        Phase::PostExec
    } else {
        state.phase
    };
    MonitorState { phase }
}
