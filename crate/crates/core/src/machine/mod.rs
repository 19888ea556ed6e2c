//! Cycle-accurate simulator for a 16-bit MCU with a flat 64 KiB address
//! space, sixteen interrupt lines vectored through an in-memory IVT, a
//! one-octet-per-cycle DMA engine, and memory-mapped GPIO.
//!
//! Every simulated cycle emits exactly one [`BusSignals`] record; the
//! execution monitor consumes those records in lockstep. Writes performed by
//! the CPU (STORE, OUT, and the hardware push during interrupt dispatch) are
//! reported through `w_en`/`d_addr`; DMA transfers and host-injected writes
//! are reported through `dma_en`/`dma_addr`.

pub mod isa;

use thiserror::Error;

pub use isa::{decode, encode, DecodeError, Instruction, Opcode, INSTR_LEN};

/// Interrupt vector table: 16 little-endian entries, entry `i` at
/// `0xFFE0 + 2*i`. Line 0 has the highest priority.
pub const IVT_MIN: u16 = 0xFFE0;
pub const IVT_MAX: u16 = 0xFFFF;
pub const IVT_LINES: u8 = 16;

/// Architectural data memory (RAM). The stack must stay inside it.
pub const DATA_MIN: u16 = 0x0200;
pub const DATA_MAX: u16 = 0x1FFF;

/// Default program memory window used by the imager.
pub const PROG_MIN: u16 = 0xE000;
pub const PROG_MAX: u16 = 0xFFDF;

/// Memory-mapped GPIO ports.
pub const GPIO_IN: u16 = 0x0010;
pub const GPIO_OUT: u16 = 0x0014;

pub const MEM_SIZE: usize = 0x1_0000;

/// Flat 64 KiB memory image. Loads and stores as a raw 65536-octet file.
#[derive(Clone, PartialEq, Eq)]
pub struct MemoryImage(Box<[u8; MEM_SIZE]>);

impl Default for MemoryImage {
    fn default() -> Self {
        MemoryImage(Box::new([0u8; MEM_SIZE]))
    }
}

impl std::fmt::Debug for MemoryImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MemoryImage(64KiB)")
    }
}

impl MemoryImage {
    pub fn new() -> MemoryImage {
        MemoryImage::default()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<MemoryImage, MemError> {
        if bytes.len() != MEM_SIZE {
            return Err(MemError::BadImageSize { len: bytes.len() });
        }
        let mut img = MemoryImage::new();
        img.0.copy_from_slice(bytes);
        Ok(img)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0[..]
    }

    pub fn read8(&self, addr: u16) -> u8 {
        self.0[addr as usize]
    }

    pub fn write8(&mut self, addr: u16, v: u8) {
        self.0[addr as usize] = v;
    }

    /// Little-endian 16-bit read at an even-aligned effective address.
    pub fn read16(&self, addr: u16) -> u16 {
        let a = (addr & !1) as usize;
        u16::from_le_bytes([self.0[a], self.0[(a + 1) & (MEM_SIZE - 1)]])
    }

    /// Little-endian 16-bit write at an even-aligned effective address.
    pub fn write16(&mut self, addr: u16, v: u16) {
        let a = (addr & !1) as usize;
        let [lo, hi] = v.to_le_bytes();
        self.0[a] = lo;
        self.0[(a + 1) & (MEM_SIZE - 1)] = hi;
    }

    pub fn ivt_entry(&self, line: u8) -> u16 {
        self.read16(IVT_MIN + 2 * u16::from(line & 0xF))
    }

    pub fn set_ivt_entry(&mut self, line: u8, addr: u16) {
        self.write16(IVT_MIN + 2 * u16::from(line & 0xF), addr);
    }

    /// Instruction fetch; wraps mod 2^16 so decode stays total even for
    /// adversarial pcs at the very top of the address space.
    pub fn fetch(&self, pc: u16) -> [u8; 4] {
        let mut octets = [0u8; 4];
        for (i, o) in octets.iter_mut().enumerate() {
            *o = self.0[pc.wrapping_add(i as u16) as usize];
        }
        octets
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MemError {
    #[error("memory access out of range: addr {addr:#06x} len {len}")]
    OutOfRange { addr: u16, len: usize },
    #[error("memory image must be exactly 65536 octets, got {len}")]
    BadImageSize { len: usize },
}

/// CPU register file and mode bits. R1 doubles as the stack pointer.
/// `z` is the ALU zero flag consumed by JZ/JNZ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuState {
    pub pc: u16,
    pub regs: [u16; 8],
    pub gie: bool,
    pub sleeping: bool,
    pub halted: bool,
    pub z: bool,
}

pub const SP: usize = 1;

impl CpuState {
    fn new(pc: u16) -> CpuState {
        CpuState {
            pc: pc & !1,
            regs: [0; 8],
            gie: false,
            sleeping: false,
            halted: false,
            z: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InterruptController {
    /// Bit `i` set means line `i` is pending. Line 0 wins ties.
    pub pending: u16,
}

impl InterruptController {
    fn lowest_pending(&self) -> Option<u8> {
        if self.pending == 0 {
            None
        } else {
            Some(self.pending.trailing_zeros() as u8)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DmaController {
    pub active: bool,
    pub src: u16,
    pub dst: u16,
    pub remaining: u16,
}

/// Per-cycle bus observation. Exactly one record exists per simulated cycle.
/// `d_addr` is valid iff `w_en`, `dma_addr` iff `dma_en`, `irq_line` iff
/// `irq`. A CPU write (`w_en`) covers the two octets at `d_addr`/`d_addr+1`;
/// a DMA write covers the single octet at `dma_addr`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusSignals {
    pub cycle: u64,
    pub pc: u16,
    pub w_en: bool,
    pub d_addr: u16,
    pub dma_en: bool,
    pub dma_addr: u16,
    pub irq: bool,
    pub irq_line: u8,
}

impl BusSignals {
    /// Signals for a cycle with no write, no DMA, and no dispatch.
    pub fn idle(cycle: u64, pc: u16) -> BusSignals {
        BusSignals {
            cycle,
            pc,
            w_en: false,
            d_addr: 0,
            dma_en: false,
            dma_addr: 0,
            irq: false,
            irq_line: 0,
        }
    }
}

/// What the machine did in a cycle, for trace rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CycleKind {
    /// Executed the instruction at `pc`.
    Exec(Opcode),
    /// Dispatched an interrupt (hardware push + vector load).
    IrqDispatch,
    /// DMA engine moved one octet; CPU stalled.
    Dma,
    /// Host-injected write of one octet; CPU stalled.
    HostWrite,
    /// Asleep waiting for an interrupt.
    SleepIdle,
    /// Halted; cycle counted, nothing else.
    HaltedIdle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleRecord {
    pub signals: BusSignals,
    pub kind: CycleKind,
}

/// A fault halts the machine. The faulting cycle is consumed but performs no
/// architectural work; runners record it in the trace.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum Fault {
    #[error("illegal opcode {octets:02x?} fetched at pc {pc:#06x} (cycle {cycle})")]
    IllegalOpcode {
        cycle: u64,
        pc: u16,
        octets: [u8; 4],
    },
    #[error(
        "stack overflow: push with sp {sp:#06x} below data floor (cycle {cycle}, pc {pc:#06x})"
    )]
    StackOverflow { cycle: u64, pc: u16, sp: u16 },
}

impl Fault {
    pub fn cycle(&self) -> u64 {
        match self {
            Fault::IllegalOpcode { cycle, .. } | Fault::StackOverflow { cycle, .. } => *cycle,
        }
    }

    pub fn pc(&self) -> u16 {
        match self {
            Fault::IllegalOpcode { pc, .. } | Fault::StackOverflow { pc, .. } => *pc,
        }
    }
}

/// The full simulated MCU. Plain data: may be moved between threads, never
/// shared mutably.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Machine {
    pub mem: MemoryImage,
    pub cpu: CpuState,
    pub irqc: InterruptController,
    pub dma: DmaController,
    pub cycle: u64,
    pub fault: Option<Fault>,
}

impl Machine {
    pub fn new(mem: MemoryImage, boot_pc: u16) -> Machine {
        Machine {
            mem,
            cpu: CpuState::new(boot_pc),
            irqc: InterruptController::default(),
            dma: DmaController::default(),
            cycle: 0,
            fault: None,
        }
    }

    fn set_pc(&mut self, target: u16) {
        self.cpu.pc = target & !1;
    }

    /// Marks interrupt line `line` pending. Idempotent; masked lines stay
    /// pending until dispatched.
    pub fn raise_irq(&mut self, line: u8) {
        self.irqc.pending |= 1u16 << (line & 0xF);
    }

    /// Programs the DMA engine: `len` octets copied from `src` to `dst`,
    /// one per cycle, stride +1, stalling the CPU while active.
    pub fn start_dma(&mut self, src: u16, dst: u16, len: u16) {
        if len == 0 {
            return;
        }
        self.dma = DmaController {
            active: true,
            src,
            dst,
            remaining: len,
        };
    }

    /// Host-side read; never consumes cycles.
    pub fn read_mem(&self, addr: u16, len: usize) -> Result<Vec<u8>, MemError> {
        if addr as usize + len > MEM_SIZE {
            return Err(MemError::OutOfRange { addr, len });
        }
        Ok(self.mem.as_bytes()[addr as usize..addr as usize + len].to_vec())
    }

    /// Host-side write without bus signals. Only valid for setup before a
    /// run; mid-run host writes must go through [`Machine::host_write`].
    pub fn write_mem(&mut self, addr: u16, bytes: &[u8]) -> Result<(), MemError> {
        if addr as usize + bytes.len() > MEM_SIZE {
            return Err(MemError::OutOfRange {
                addr,
                len: bytes.len(),
            });
        }
        for (i, b) in bytes.iter().enumerate() {
            self.mem.write8(addr + i as u16, *b);
        }
        Ok(())
    }

    /// Mid-run host write. Each octet stalls the CPU for one cycle and emits
    /// one DMA-class bus record so the monitor observes the modification.
    pub fn host_write(&mut self, addr: u16, bytes: &[u8]) -> Result<Vec<CycleRecord>, MemError> {
        if addr as usize + bytes.len() > MEM_SIZE {
            return Err(MemError::OutOfRange {
                addr,
                len: bytes.len(),
            });
        }
        let mut records = Vec::with_capacity(bytes.len());
        for (i, b) in bytes.iter().enumerate() {
            let a = addr + i as u16;
            self.mem.write8(a, *b);
            let mut s = BusSignals::idle(self.cycle, self.cpu.pc);
            s.dma_en = true;
            s.dma_addr = a;
            self.cycle += 1;
            records.push(CycleRecord {
                signals: s,
                kind: CycleKind::HostWrite,
            });
        }
        Ok(records)
    }

    /// Pushes a 16-bit value on the R1 stack. Reports the write through the
    /// bus signals like any other CPU store.
    fn push(&mut self, value: u16, s: &mut BusSignals) -> Result<(), Fault> {
        let sp = self.cpu.regs[SP];
        if sp < DATA_MIN + 2 {
            return Err(Fault::StackOverflow {
                cycle: self.cycle,
                pc: self.cpu.pc,
                sp,
            });
        }
        let new_sp = sp - 2;
        self.cpu.regs[SP] = new_sp;
        self.mem.write16(new_sp, value);
        s.w_en = true;
        s.d_addr = new_sp & !1;
        Ok(())
    }

    fn pop(&mut self) -> u16 {
        let sp = self.cpu.regs[SP];
        let v = self.mem.read16(sp);
        self.cpu.regs[SP] = sp.wrapping_add(2);
        v
    }

    /// Advances exactly one cycle. Priority per cycle: interrupt dispatch,
    /// then DMA transfer, then sleep idling, then instruction execution.
    /// On `Err` the machine has halted; the faulting cycle was consumed but
    /// produced no bus record (runners synthesize an idle row from the fault).
    pub fn step(&mut self) -> Result<CycleRecord, Fault> {
        let cycle = self.cycle;
        let pc = self.cpu.pc;

        if self.cpu.halted {
            self.cycle += 1;
            return Ok(CycleRecord {
                signals: BusSignals::idle(cycle, pc),
                kind: CycleKind::HaltedIdle,
            });
        }

        // (a) Interrupt dispatch: gie set and a line pending. The hardware
        // pushes the interrupted pc, clears gie, loads the vector, and wakes
        // the core. The push is an ordinary w_en write.
        if self.cpu.gie {
            if let Some(line) = self.irqc.lowest_pending() {
                let mut s = BusSignals::idle(cycle, pc);
                s.irq = true;
                s.irq_line = line;
                let vector = self.mem.ivt_entry(line);
                if let Err(f) = self.push(pc, &mut s) {
                    self.cpu.halted = true;
                    self.fault = Some(f.clone());
                    self.cycle += 1;
                    return Err(f);
                }
                self.cpu.gie = false;
                self.cpu.sleeping = false;
                self.irqc.pending &= !(1u16 << line);
                self.set_pc(vector);
                self.cycle += 1;
                return Ok(CycleRecord {
                    signals: s,
                    kind: CycleKind::IrqDispatch,
                });
            }
        }

        // (b) DMA transfer: one octet per cycle, CPU stalled.
        if self.dma.active {
            let mut s = BusSignals::idle(cycle, pc);
            let octet = self.mem.read8(self.dma.src);
            self.mem.write8(self.dma.dst, octet);
            s.dma_en = true;
            s.dma_addr = self.dma.dst;
            self.dma.src = self.dma.src.wrapping_add(1);
            self.dma.dst = self.dma.dst.wrapping_add(1);
            self.dma.remaining -= 1;
            if self.dma.remaining == 0 {
                self.dma.active = false;
            }
            self.cycle += 1;
            return Ok(CycleRecord {
                signals: s,
                kind: CycleKind::Dma,
            });
        }

        // (c) Asleep: nothing happens until an interrupt dispatches.
        if self.cpu.sleeping {
            self.cycle += 1;
            return Ok(CycleRecord {
                signals: BusSignals::idle(cycle, pc),
                kind: CycleKind::SleepIdle,
            });
        }

        // (d) Execute one instruction.
        let octets = self.mem.fetch(pc);
        let instr = match decode(pc, octets) {
            Ok(i) => i,
            Err(DecodeError::IllegalOpcode { .. }) => {
                let f = Fault::IllegalOpcode { cycle, pc, octets };
                self.cpu.halted = true;
                self.fault = Some(f.clone());
                self.cycle += 1;
                return Err(f);
            }
        };
        let mut s = BusSignals::idle(cycle, pc);
        let mut next_pc = pc.wrapping_add(INSTR_LEN);
        let rd = instr.rd as usize;
        let rs = instr.rs as usize;
        match instr.op {
            Opcode::Nop => {}
            Opcode::Loadi => self.cpu.regs[rd] = instr.imm,
            Opcode::Load => self.cpu.regs[rd] = self.mem.read16(instr.imm),
            Opcode::Store => {
                self.mem.write16(instr.imm, self.cpu.regs[rs]);
                s.w_en = true;
                s.d_addr = instr.imm & !1;
            }
            Opcode::Mov => self.cpu.regs[rd] = self.cpu.regs[rs],
            Opcode::Add => {
                let v = self.cpu.regs[rd].wrapping_add(self.cpu.regs[rs]);
                self.cpu.regs[rd] = v;
                self.cpu.z = v == 0;
            }
            Opcode::Sub => {
                let v = self.cpu.regs[rd].wrapping_sub(self.cpu.regs[rs]);
                self.cpu.regs[rd] = v;
                self.cpu.z = v == 0;
            }
            Opcode::And => {
                let v = self.cpu.regs[rd] & self.cpu.regs[rs];
                self.cpu.regs[rd] = v;
                self.cpu.z = v == 0;
            }
            Opcode::Cmp => self.cpu.z = self.cpu.regs[rd] == self.cpu.regs[rs],
            Opcode::Jmp => next_pc = instr.imm,
            Opcode::Jz => {
                if self.cpu.z {
                    next_pc = instr.imm;
                }
            }
            Opcode::Jnz => {
                if !self.cpu.z {
                    next_pc = instr.imm;
                }
            }
            Opcode::Call => {
                if let Err(f) = self.push(next_pc, &mut s) {
                    self.cpu.halted = true;
                    self.fault = Some(f.clone());
                    self.cycle += 1;
                    return Err(f);
                }
                next_pc = instr.imm;
            }
            Opcode::Ret => next_pc = self.pop(),
            Opcode::Reti => {
                next_pc = self.pop();
                self.cpu.gie = true;
            }
            Opcode::Ei => self.cpu.gie = true,
            Opcode::Di => self.cpu.gie = false,
            Opcode::Sleep => self.cpu.sleeping = true,
            Opcode::Out => {
                self.mem.write16(GPIO_OUT, self.cpu.regs[rs]);
                s.w_en = true;
                s.d_addr = GPIO_OUT;
            }
            Opcode::Halt => self.cpu.halted = true,
        }
        self.set_pc(next_pc);
        self.cycle += 1;
        Ok(CycleRecord {
            signals: s,
            kind: CycleKind::Exec(instr.op),
        })
    }
}
