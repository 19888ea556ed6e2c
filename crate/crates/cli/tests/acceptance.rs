//! Acceptance gate for the whole workspace. Each criterion prints one
//! pass/fail line; the test fails if any criterion does. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines live.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use poxsim_core::attestation::{verify_report, RejectReason, Verdict, VerifierSession};
use poxsim_core::ltlmon::{check_g, ltl1, ltl2, ltl3, ltl4, CheckResult, Formula, Trace};
use poxsim_core::machine::{encode, BusSignals, Instruction, Machine, MemoryImage, Opcode, SP};
use poxsim_core::monitor::{monitor_step, Mode, MonitorConfig, MonitorState, Phase};
use poxsim_core::scenario::{run_scenario, RunOutput, Scenario};
use poxsim_core::trace::{write_csv, RowKind};

const IVT_MIN: u16 = 0xFFE0;
const IVT_MAX: u16 = 0xFFFF;
const DATA_MIN: u16 = 0x0200;
const DATA_MAX: u16 = 0x1FFF;

fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .join(rel)
}

fn load_scenario(name: &str) -> Result<Scenario, String> {
    let path = repo_path(&format!("scenarios/{name}.toml"));
    let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    Scenario::from_toml(&text).map_err(|e| format!("{name}: {e}"))
}

fn run_fixture(name: &str) -> Result<RunOutput, String> {
    let scenario = load_scenario(name)?;
    run_scenario(&scenario).map_err(|e| format!("{name}: {e}"))
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn golden_match(name: &str, out: &RunOutput) -> Result<(), String> {
    let path = repo_path(&format!("golden/{name}.csv"));
    let golden = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let produced = write_csv(&out.rows);
    ensure(
        produced == golden,
        format!("{name}: trace differs from committed golden"),
    )
}

// --- criteria 1-3: waveform reproductions -------------------------------

fn c1_trusted_isr_accept() -> Result<(), String> {
    let scenario = load_scenario("fig5a")?;
    let started = Instant::now();
    let out = run_scenario(&scenario).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    golden_match("fig5a", &out)?;
    ensure(out.exec_fall_cycle.is_none(), "exec fell during the run")?;
    ensure(out.final_exec, "exec not set at the end")?;
    // Every cycle from the first protected instruction onward keeps EXEC.
    let first_set = out
        .rows
        .iter()
        .position(|r| r.exec_bit())
        .ok_or("exec never set")?;
    ensure(
        out.rows[first_set..].iter().all(|r| r.exec_bit()),
        "exec dropped after entry",
    )?;
    ensure(
        out.rows.iter().any(|r| r.signals.irq),
        "no interrupt was dispatched",
    )?;
    ensure(
        out.verdict == Verdict::Accept,
        format!("verdict {}", out.verdict),
    )?;
    ensure(
        elapsed < Duration::from_secs(1),
        format!("run took {elapsed:.2?}"),
    )
}

fn c2_untrusted_isr_reject() -> Result<(), String> {
    let out = run_fixture("fig5b")?;
    golden_match("fig5b", &out)?;
    let fall = out.exec_fall_cycle.ok_or("exec never fell")?;
    let row = out
        .rows
        .iter()
        .find(|r| r.signals.cycle == fall)
        .ok_or("fall row missing")?;
    let er = (out.expected.layout.er_min, out.expected.layout.er_max);
    ensure(
        row.signals.pc < er.0 || row.signals.pc > er.1,
        "fall row pc still inside the protected region",
    )?;
    let prev = out
        .rows
        .iter()
        .take_while(|r| r.signals.cycle < fall)
        .last()
        .ok_or("no row before the fall")?;
    ensure(
        prev.signals.pc >= er.0 && prev.signals.pc <= er.1,
        "previous pc was not inside the protected region",
    )?;
    ensure(
        !(prev.signals.pc <= er.1 && u32::from(prev.signals.pc) + 4 > u32::from(er.1)),
        "departure was from the final instruction, not a hijack",
    )?;
    ensure(
        out.verdict == Verdict::Reject(RejectReason::ExecZero),
        format!("verdict {}", out.verdict),
    )
}

fn c3_apex_irq_reject() -> Result<(), String> {
    let out = run_fixture("fig5c")?;
    golden_match("fig5c", &out)?;
    ensure(out.mode == Mode::Apex, "fixture is not in apex mode")?;
    let fall = out.exec_fall_cycle.ok_or("exec never fell")?;
    let row = out
        .rows
        .iter()
        .find(|r| r.signals.cycle == fall)
        .ok_or("fall row missing")?;
    ensure(row.signals.irq, "fall row is not the interrupt cycle")?;
    ensure(
        out.verdict == Verdict::Reject(RejectReason::ExecZero),
        format!("verdict {}", out.verdict),
    )
}

// --- criterion 4: vector table writes in every phase, either master ------

fn c4_ivt_write_protection() -> Result<(), String> {
    // (fixture, cycle EXEC must drop, true when the tamper rides on DMA,
    // true when it lands after the run completed)
    let cases = [
        ("ivt_store_exec", 5u64, false, false),
        ("ivt_dma_exec", 6, true, false),
        ("ivt_store_postexec", 9, false, true),
        ("ivt_dma_postexec", 9, true, true),
    ];
    for (name, cycle, via_dma, post) in cases {
        let out = run_fixture(name)?;
        let fall = out
            .exec_fall_cycle
            .ok_or(format!("{name}: exec never fell"))?;
        ensure(
            fall == cycle,
            format!("{name}: exec fell at {fall}, expected {cycle}"),
        )?;
        let idx = out
            .rows
            .iter()
            .position(|r| r.signals.cycle == fall)
            .ok_or(format!("{name}: fall row missing"))?;
        let s = &out.rows[idx].signals;
        let hits_ivt = if via_dma {
            s.dma_en && s.dma_addr >= IVT_MIN
        } else {
            s.w_en && u32::from(s.d_addr) + 1 >= u32::from(IVT_MIN)
        };
        ensure(
            hits_ivt,
            format!("{name}: fall row carries no vector-table write"),
        )?;
        if post {
            ensure(
                out.rows[idx - 1].phase == Phase::PostExec,
                format!("{name}: tamper did not land after completion"),
            )?;
        }
        ensure(
            matches!(out.verdict, Verdict::Reject(_)),
            format!("{name}: verdict {}", out.verdict),
        )?;
    }
    Ok(())
}

// --- criterion 5: randomized campaign against the temporal rules ---------

struct CaseBounds {
    er_min: u16,
    er_max: u16,
    or_min: u16,
    or_max: u16,
}

fn draw_bounds(rng: &mut ChaCha20Rng) -> CaseBounds {
    let er_min = rng.gen_range(0xB000u16..0xF000) & !3;
    let instrs = rng.gen_range(4u16..48);
    let er_max = er_min + instrs * 4 - 1;
    let or_min = rng.gen_range(0x0280u16..0x0800) & !1;
    let or_max = or_min + rng.gen_range(2u16..64) - 1;
    CaseBounds {
        er_min,
        er_max,
        or_min,
        or_max,
    }
}

/// Write targets cluster on the regions the rules watch. `avoid_ivt`
/// keeps every target clear of the vector table (criterion 7 cases).
fn store_target(rng: &mut ChaCha20Rng, b: &CaseBounds, avoid_ivt: bool) -> u16 {
    let pick = rng.gen_range(0..6);
    let addr = match pick {
        0 if !avoid_ivt => rng.gen_range(IVT_MIN..=0xFFFE),
        0 => rng.gen_range(DATA_MIN..0x1000),
        1 => rng.gen_range(b.or_min..=b.or_max),
        2 => rng.gen_range(b.er_min..=b.er_max),
        3 => rng.gen_range(DATA_MIN..0x1000),
        4 => rng.gen_range(0x0F00u16..0x1000),
        _ => rng.gen(),
    };
    if avoid_ivt {
        // The write covers addr and addr+1; stay two octets short.
        addr.min(IVT_MIN - 2)
    } else {
        addr
    }
}

fn branch_target(rng: &mut ChaCha20Rng, b: &CaseBounds) -> u16 {
    rng.gen_range(b.er_min.saturating_sub(0x80)..b.er_max.saturating_add(0x81)) & !3
}

fn random_instr(rng: &mut ChaCha20Rng, b: &CaseBounds, avoid_ivt: bool) -> [u8; 4] {
    let op = match rng.gen_range(0..100) {
        0..=24 => Opcode::Nop,
        25..=34 => Opcode::Loadi,
        35..=39 => Opcode::Load,
        40..=54 => Opcode::Store,
        55..=59 => Opcode::Add,
        60..=63 => Opcode::Cmp,
        64..=71 => Opcode::Jmp,
        72..=75 => Opcode::Jz,
        76..=79 => Opcode::Jnz,
        80..=84 => Opcode::Call,
        85..=88 => Opcode::Ret,
        89..=90 => Opcode::Reti,
        91..=93 => Opcode::Ei,
        94 => Opcode::Di,
        95 => Opcode::Sleep,
        96..=97 => Opcode::Out,
        _ => Opcode::Halt,
    };
    let imm = match op {
        Opcode::Store => store_target(rng, b, avoid_ivt),
        Opcode::Load => rng.gen(),
        Opcode::Jmp | Opcode::Jz | Opcode::Jnz | Opcode::Call => branch_target(rng, b),
        _ => rng.gen(),
    };
    encode(&Instruction::new(
        op,
        rng.gen_range(0..8),
        rng.gen_range(0..8),
        imm,
    ))
}

fn random_image(rng: &mut ChaCha20Rng, b: &CaseBounds, avoid_ivt: bool) -> MemoryImage {
    let mut img = MemoryImage::new();
    let lo = b.er_min.saturating_sub(0x100).max(0x2000);
    let hi = b.er_max.saturating_add(0x100).min(IVT_MIN - 4);
    let mut addr = u32::from(lo);
    while addr <= u32::from(hi) {
        let enc = random_instr(rng, b, avoid_ivt);
        for (k, byte) in enc.iter().enumerate() {
            img.write8(addr as u16 + k as u16, *byte);
        }
        addr += 4;
    }
    for line in 0..16 {
        img.write16(IVT_MIN + 2 * line, branch_target(rng, b));
    }
    img
}

#[derive(Clone, Copy)]
enum Event {
    Irq { cycle: u64, line: u8 },
    Dma { cycle: u64, dst: u16, len: u16 },
}

fn random_events(
    rng: &mut ChaCha20Rng,
    b: &CaseBounds,
    max_cycles: u64,
    irqs: bool,
    avoid_ivt: bool,
) -> Vec<Event> {
    let mut events = Vec::new();
    for _ in 0..rng.gen_range(0..5) {
        let cycle = rng.gen_range(0..max_cycles);
        if irqs && rng.gen_bool(0.6) {
            events.push(Event::Irq {
                cycle,
                line: rng.gen_range(0..16),
            });
        } else {
            let len = rng.gen_range(1..4);
            let mut dst = store_target(rng, b, avoid_ivt);
            if avoid_ivt {
                dst = dst.min(IVT_MIN - 1 - len);
            }
            events.push(Event::Dma { cycle, dst, len });
        }
    }
    events
}

struct CaseRun {
    signals: Vec<BusSignals>,
    exec: Vec<bool>,
    phases: Vec<Phase>,
}

fn run_case(
    rng: &mut ChaCha20Rng,
    b: &CaseBounds,
    events: &[Event],
    image: &MemoryImage,
    entry: u16,
    mode: Mode,
    max_cycles: u64,
) -> CaseRun {
    let mut machine = Machine::new(image.clone(), entry);
    machine.cpu.regs[SP] = 0x1000;
    let mut stage = 0x0100u16;
    for ev in events {
        if let Event::Dma { len, .. } = ev {
            let bytes: Vec<u8> = (0..*len).map(|_| rng.gen()).collect();
            machine.write_mem(stage, &bytes).unwrap();
            stage += len;
        }
    }

    let cfg = MonitorConfig::new(mode, b.er_min, b.er_max, b.or_min, b.or_max).unwrap();
    let mut mon = MonitorState::new();
    let mut prev: Option<BusSignals> = None;
    let mut out = CaseRun {
        signals: Vec::new(),
        exec: Vec::new(),
        phases: Vec::new(),
    };
    let mut fired = vec![false; events.len()];
    let mut dma_cursor = 0x0100u16;
    while machine.cycle < max_cycles && !machine.cpu.halted {
        for (i, ev) in events.iter().enumerate() {
            if fired[i] {
                continue;
            }
            match *ev {
                Event::Irq { cycle, line } if machine.cycle >= cycle => {
                    fired[i] = true;
                    machine.raise_irq(line);
                }
                Event::Dma { cycle, dst, len } if machine.cycle >= cycle => {
                    fired[i] = true;
                    machine.start_dma(dma_cursor, dst, len);
                    dma_cursor += len;
                }
                _ => {}
            }
        }
        let signals = match machine.step() {
            Ok(record) => record.signals,
            Err(fault) => BusSignals::idle(fault.cycle(), fault.pc()),
        };
        mon = monitor_step(mon, prev.as_ref(), &signals, &cfg);
        prev = Some(signals);
        out.signals.push(signals);
        out.exec.push(mon.exec());
        out.phases.push(mon.phase);
    }
    out
}

/// Recomputes, from the rule statements alone, whether any monitored
/// condition fired on this cycle. An EXEC fall without one is spurious.
fn rule_trigger(
    cfg: &MonitorConfig,
    phase_in: Phase,
    prev: Option<&BusSignals>,
    cur: &BusSignals,
) -> bool {
    let in_er = |pc: u16| cfg.er_min <= pc && pc <= cfg.er_max;
    let cpu_hits = |lo: u16, hi: u16| {
        cur.w_en
            && u32::from(cur.d_addr) <= u32::from(hi)
            && u32::from(cur.d_addr) + 1 >= u32::from(lo)
    };
    let dma_hits = |lo: u16, hi: u16| cur.dma_en && (lo..=hi).contains(&cur.dma_addr);
    let prev_in = prev.map(|p| in_er(p.pc)).unwrap_or(false);
    let prev_is_last =
        prev.map(|p| p.pc <= cfg.er_max && u32::from(p.pc) + 4 > u32::from(cfg.er_max));
    let cur_in = in_er(cur.pc);

    let entry_off_start = !prev_in && cur_in && cur.pc != cfg.er_min;
    let exit_off_end = prev_in && !cur_in && !prev_is_last.unwrap_or(false);
    let irq_inside = cfg.mode == Mode::Apex && cur_in && cur.irq;
    let ivt_write = cpu_hits(IVT_MIN, IVT_MAX) || dma_hits(IVT_MIN, IVT_MAX);
    let er_write = phase_in != Phase::NotExec
        && (cpu_hits(cfg.er_min, cfg.er_max) || dma_hits(cfg.er_min, cfg.er_max));
    let exec_bus = phase_in == Phase::Executing
        && (dma_hits(DATA_MIN, DATA_MAX) || (cpu_hits(cfg.or_min, cfg.or_max) && !cur_in));
    let frozen_or = phase_in == Phase::PostExec
        && (cpu_hits(cfg.or_min, cfg.or_max) || dma_hits(cfg.or_min, cfg.or_max));

    entry_off_start || exit_off_end || irq_inside || ivt_write || er_write || exec_bus || frozen_or
}

fn rules_for(mode: Mode) -> Vec<(&'static str, Formula)> {
    let mut rules = vec![("exit-gate", ltl1()), ("entry-gate", ltl2())];
    if mode == Mode::Apex {
        rules.push(("irq-gate", ltl3()));
    }
    rules.push(("ivt-gate", ltl4()));
    rules
}

fn describe_row(run: &CaseRun, i: usize) -> String {
    let mut s = String::new();
    let lo = i.saturating_sub(2);
    for k in lo..=i {
        let _ = writeln!(
            s,
            "  row {k}: {:?} exec {} phase {:?}",
            run.signals[k], run.exec[k] as u8, run.phases[k]
        );
    }
    s
}

fn c5_differential_campaign() -> Result<(), String> {
    const CASES: u64 = 100_000;
    const MAX_CYCLES: u64 = 256;
    let started = Instant::now();
    let mut falls = 0u64;
    for seed in 0..CASES {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let b = draw_bounds(&mut rng);
        let image = random_image(&mut rng, &b, false);
        let events = random_events(&mut rng, &b, MAX_CYCLES, true, false);
        let entry = match rng.gen_range(0..4) {
            0 => b.er_min,
            1 => rng.gen_range(b.er_min..=b.er_max) & !3,
            _ => branch_target(&mut rng, &b),
        };
        let mode = if rng.gen_bool(0.5) {
            Mode::Apex
        } else {
            Mode::Asap
        };
        let run = run_case(&mut rng, &b, &events, &image, entry, mode, MAX_CYCLES);
        if run.signals.is_empty() {
            continue;
        }

        let cfg = MonitorConfig::new(mode, b.er_min, b.er_max, b.or_min, b.or_max).unwrap();
        let trace = Trace::from_run(&run.signals, &run.exec, &cfg);
        for (name, formula) in rules_for(mode) {
            if let CheckResult::ViolatedAt(i) = check_g(&formula, &trace).unwrap() {
                return Err(format!(
                    "seed {seed} mode {mode}: {name} violated at row {i}\n{}",
                    describe_row(&run, i)
                ));
            }
        }

        for i in 0..run.signals.len() {
            let exec_in = if i == 0 { false } else { run.exec[i - 1] };
            let phase_in = if i == 0 {
                Phase::NotExec
            } else {
                run.phases[i - 1]
            };
            let prev = if i == 0 {
                None
            } else {
                Some(&run.signals[i - 1])
            };
            let trigger = rule_trigger(&cfg, phase_in, prev, &run.signals[i]);
            let fell = exec_in && !run.exec[i];
            if fell {
                falls += 1;
            }
            if fell && !trigger {
                return Err(format!(
                    "seed {seed} mode {mode}: spurious EXEC fall at row {i}\n{}",
                    describe_row(&run, i)
                ));
            }
            if exec_in && trigger && run.exec[i] {
                return Err(format!(
                    "seed {seed} mode {mode}: rule fired at row {i} but EXEC stayed set\n{}",
                    describe_row(&run, i)
                ));
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(
        falls > 1_000,
        format!("campaign exercised only {falls} EXEC falls"),
    )?;
    ensure(
        elapsed < Duration::from_secs(300),
        format!("campaign took {elapsed:.2?}"),
    )
}

// --- criterion 6: report tamper matrix -----------------------------------

fn c6_tamper_matrix() -> Result<(), String> {
    let out = run_fixture("baseline")?;
    ensure(
        out.verdict == Verdict::Accept,
        format!("baseline verdict {}", out.verdict),
    )?;
    let wire = out.report.to_bytes();
    let or_len = out.report.or_bytes.len();
    ensure(
        or_len * 8 >= 10_000,
        "output region too small for the matrix",
    )?;
    let header = wire.len() - or_len - 32;

    let reverify = |bytes: &[u8]| -> Verdict {
        match poxsim_core::attestation::AttestReport::from_bytes(bytes) {
            Ok(report) => verify_report(&out.key, &out.report.nonce, &report, &out.expected),
            Err(_) => Verdict::Reject(RejectReason::Malformed),
        }
    };
    ensure(
        reverify(&wire) == Verdict::Accept,
        "pristine report no longer accepts",
    )?;

    for byte in 0..wire.len() {
        let exhaustive_field = byte < header || byte >= header + or_len;
        let _ = exhaustive_field; // every octet is covered; kept for clarity
        for bit in 0..8 {
            let mut tampered = wire.clone();
            tampered[byte] ^= 1 << bit;
            let verdict = reverify(&tampered);
            if verdict == Verdict::Accept {
                return Err(format!("flip of byte {byte} bit {bit} still accepted"));
            }
        }
    }

    // Replay: the same authentic report must die against a fresh nonce.
    let mut session = VerifierSession::new(out.key.clone(), 7);
    let prover = out.prover_state();
    let challenge = session.issue_challenge();
    let report = prover.answer(&challenge).map_err(|e| e.to_string())?;
    ensure(
        session.verify(&report, &out.expected) == Verdict::Accept,
        "fresh report rejected",
    )?;
    session.issue_challenge();
    ensure(
        session.verify(&report, &out.expected) == Verdict::Reject(RejectReason::NonceMismatch),
        "replayed report not rejected for its stale nonce",
    )
}

// --- criterion 7: interrupt-free runs look the same in both modes --------

fn c7_mode_refinement() -> Result<(), String> {
    const CASES: u64 = 10_000;
    const MAX_CYCLES: u64 = 256;
    for seed in 0..CASES {
        let mut rng = ChaCha20Rng::seed_from_u64(0x5EED_0000 + seed);
        let b = draw_bounds(&mut rng);
        let image = random_image(&mut rng, &b, true);
        let events = random_events(&mut rng, &b, MAX_CYCLES, false, true);
        let entry = match rng.gen_range(0..4) {
            0 => b.er_min,
            1 => rng.gen_range(b.er_min..=b.er_max) & !3,
            _ => branch_target(&mut rng, &b),
        };
        let mut rng_a = rng.clone();
        let apex = run_case(
            &mut rng_a,
            &b,
            &events,
            &image,
            entry,
            Mode::Apex,
            MAX_CYCLES,
        );
        let asap = run_case(&mut rng, &b, &events, &image, entry, Mode::Asap, MAX_CYCLES);
        if apex.exec != asap.exec {
            let i = apex
                .exec
                .iter()
                .zip(&asap.exec)
                .position(|(a, b)| a != b)
                .unwrap_or(0);
            return Err(format!(
                "seed {seed}: EXEC diverges at row {i} (apex {}, asap {})",
                apex.exec.get(i).copied().unwrap_or(false) as u8,
                asap.exec.get(i).copied().unwrap_or(false) as u8
            ));
        }
    }
    Ok(())
}

// --- criterion 8: network round trips match in-process verdicts ----------

fn serve_and_verify(name: &str) -> Result<(String, Option<i32>), String> {
    let bin = env!("CARGO_BIN_EXE_poxsim");
    let scenario = repo_path(&format!("scenarios/{name}.toml"));
    let mut server = Command::new(bin)
        .arg("serve")
        .arg(&scenario)
        .args(["--listen", "127.0.0.1:0", "--once"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| format!("spawn serve: {e}"))?;
    let mut line = String::new();
    BufReader::new(server.stdout.take().ok_or("server stdout missing")?)
        .read_line(&mut line)
        .map_err(|e| format!("read serve banner: {e}"))?;
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .ok_or(format!("unexpected banner {line:?}"))?
        .to_string();

    let verify = Command::new(bin)
        .arg("verify")
        .arg(&scenario)
        .args(["--connect", &addr, "--seed", "424242"])
        .output()
        .map_err(|e| format!("run verify: {e}"))?;
    server.wait().map_err(|e| format!("serve wait: {e}"))?;
    let stdout = String::from_utf8_lossy(&verify.stdout).trim().to_string();
    Ok((stdout, verify.status.code()))
}

fn c8_network_round_trip() -> Result<(), String> {
    for name in ["fig5a", "fig5b", "fig5c"] {
        let local = run_fixture(name)?;
        let (stdout, code) = serve_and_verify(name)?;
        let expected_line = format!("verdict: {}", local.verdict);
        ensure(
            stdout == expected_line,
            format!("{name}: verify printed {stdout:?}, expected {expected_line:?}"),
        )?;
        let expected_code = if local.verdict.is_accept() { 0 } else { 1 };
        ensure(
            code == Some(expected_code),
            format!("{name}: exit {code:?}, expected {expected_code}"),
        )?;
    }
    Ok(())
}

// --- criterion 9: syringe pump demo --------------------------------------

fn c9_pump_demo() -> Result<(), String> {
    let pump = run_fixture("pump")?;
    ensure(
        pump.verdict == Verdict::Accept,
        format!("pump verdict {}", pump.verdict),
    )?;
    let outs: Vec<usize> = pump
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RowKind::Instr(Opcode::Out))
        .map(|(i, _)| i)
        .collect();
    ensure(
        outs.len() == 2,
        format!("expected 2 actuation pulses, saw {}", outs.len()),
    )?;
    let slept = pump.rows[outs[0] + 1..outs[1]]
        .iter()
        .any(|r| r.kind == RowKind::Idle);
    ensure(
        slept,
        "no sleep idle cycle between actuation start and stop",
    )?;

    let abort = run_fixture("pump_abort_untrusted")?;
    ensure(
        abort.verdict == Verdict::Reject(RejectReason::ExecZero),
        format!("abort variant verdict {}", abort.verdict),
    )?;
    let fall = abort
        .exec_fall_cycle
        .ok_or("abort variant: exec never fell")?;
    let abort_cycle = 12;
    ensure(
        fall >= abort_cycle,
        format!("exec fell at {fall}, before the abort line fired at {abort_cycle}"),
    )
}

// --- runner ---------------------------------------------------------------

type Criterion = (u32, &'static str, fn() -> Result<(), String>);

#[test]
fn acceptance() {
    let criteria: &[Criterion] = &[
        (
            1,
            "trusted ISR inside region, irq mid-run, accept + golden",
            c1_trusted_isr_accept,
        ),
        (
            2,
            "untrusted ISR hijack rejects at the landing cycle + golden",
            c2_untrusted_isr_reject,
        ),
        (
            3,
            "apex rejects at the irq cycle + golden",
            c3_apex_irq_reject,
        ),
        (
            4,
            "vector-table writes drop EXEC in every phase, both masters",
            c4_ivt_write_protection,
        ),
        (
            5,
            "100k randomized runs satisfy the temporal rules, no spurious falls",
            c5_differential_campaign,
        ),
        (
            6,
            "every report bit flip and any replay is rejected",
            c6_tamper_matrix,
        ),
        (
            7,
            "10k interrupt-free runs: both modes produce identical EXEC",
            c7_mode_refinement,
        ),
        (
            8,
            "serve/verify over TCP match in-process verdicts",
            c8_network_round_trip,
        ),
        (
            9,
            "pump demo accepts, sleeps between pulses; untrusted abort rejects",
            c9_pump_demo,
        ),
    ];
    let mut failed = Vec::new();
    for (num, name, run) in criteria {
        let started = Instant::now();
        match run() {
            Ok(()) => println!("criterion {num} ({name}): PASS [{:.2?}]", started.elapsed()),
            Err(msg) => {
                println!("criterion {num} ({name}): FAIL: {msg}");
                failed.push(*num);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
