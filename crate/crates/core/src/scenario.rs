//! Declarative simulation runs.
//!
//! A scenario TOML names the monitor mode, the program sections, optional
//! layout overrides, externally injected events (interrupts, DMA, host
//! writes), and when to take the attestation measurement:
//!
//! ```toml
//! mode = "asap"
//! run_cycles = 200
//! attest_at = "end"
//! seed = 42
//!
//! [layout]
//! er_min = 0xE100
//!
//! [[section]]
//! name = "exec.start"
//! label = "start"
//! source = """
//! CALL main
//! JMP leave
//! """
//!
//! [[event]]
//! cycle = 50
//! action = "raise_irq"
//! line = 3
//! ```
//!
//! Running a scenario links the image, audits the layout, then steps the
//! machine and the monitor in lockstep, producing the trace, the report,
//! and the verifier's verdict in one deterministic artifact.

use crate::attestation::{
    measure, AttestKey, AttestReport, ExpectedState, RegionLayout, Verdict, VerifierSession,
};
use crate::imager::{
    layout_check, link, LayoutManifest, LayoutViolation, LinkConfig, LinkError, Section,
    SectionKind,
};
use crate::machine::{BusSignals, Fault, Machine, MemError, MemoryImage};
use crate::monitor::{monitor_step, ConfigError, Mode, MonitorConfig, MonitorState};
use crate::protocol::ProverState;
use crate::trace::TraceRow;
use serde::{Deserialize, Deserializer};
use thiserror::Error;

/// Staging window for DMA payloads, written into memory before boot.
pub const DMA_STAGE_MIN: u16 = 0x0100;
pub const DMA_STAGE_LEN: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(try_from = "AttestAtRaw")]
pub enum AttestAt {
    /// Measure once the run has stopped.
    #[default]
    End,
    /// Measure at the first cycle boundary at or past this cycle; falls
    /// back to the end when the run stops earlier.
    Cycle(u64),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum AttestAtRaw {
    Cycle(u64),
    Word(String),
}

impl TryFrom<AttestAtRaw> for AttestAt {
    type Error = String;
    fn try_from(raw: AttestAtRaw) -> Result<Self, String> {
        match raw {
            AttestAtRaw::Cycle(c) => Ok(AttestAt::Cycle(c)),
            AttestAtRaw::Word(w) if w == "end" => Ok(AttestAt::End),
            AttestAtRaw::Word(w) => Err(format!(
                "attest_at must be a cycle number or \"end\", got `{w}`"
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutOverrides {
    pub er_min: Option<u16>,
    pub or_min: Option<u16>,
    pub or_max: Option<u16>,
    pub prog_min: Option<u16>,
    pub prog_max: Option<u16>,
    pub data_min: Option<u16>,
    pub data_max: Option<u16>,
}

impl LayoutOverrides {
    pub fn link_config(&self) -> LinkConfig {
        let d = LinkConfig::default();
        LinkConfig {
            er_min: self.er_min.unwrap_or(d.er_min),
            or_min: self.or_min.unwrap_or(d.or_min),
            or_max: self.or_max.unwrap_or(d.or_max),
            prog_min: self.prog_min.unwrap_or(d.prog_min),
            prog_max: self.prog_max.unwrap_or(d.prog_max),
            data_min: self.data_min.unwrap_or(d.data_min),
            data_max: self.data_max.unwrap_or(d.data_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionDecl {
    pub name: SectionKind,
    pub label: Option<String>,
    pub irq_line: Option<u8>,
    pub source: String,
}

impl SectionDecl {
    fn to_section(&self) -> Section {
        Section {
            kind: self.name,
            label: self.label.clone(),
            irq_line: self.irq_line,
            source: self.source.clone(),
        }
    }
}

fn hex_bytes<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
    let s = String::deserialize(d)?;
    hex::decode(&s).map_err(serde::de::Error::custom)
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EventAction {
    /// Pulls an interrupt line pending.
    RaiseIrq { line: u8 },
    /// Programs the DMA engine to copy a pre-staged payload to `addr`.
    DmaWrite {
        addr: u16,
        #[serde(deserialize_with = "hex_bytes")]
        data: Vec<u8>,
    },
    /// Debug-port write: the host patches memory directly, one octet per
    /// cycle, visible on the DMA signals.
    HostWrite {
        addr: u16,
        #[serde(deserialize_with = "hex_bytes")]
        data: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct EventDecl {
    pub cycle: u64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    pub run_cycles: u64,
    #[serde(default)]
    pub attest_at: AttestAt,
    #[serde(default)]
    pub seed: u64,
    /// Boot pc label; defaults to the first untrusted section, or er_min
    /// when there is none.
    pub entry: Option<String>,
    #[serde(default)]
    pub layout: LayoutOverrides,
    #[serde(rename = "section")]
    pub sections: Vec<SectionDecl>,
    #[serde(default, rename = "event")]
    pub events: Vec<EventDecl>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error("layout audit failed: {}", format_violations(.0))]
    Layout(Vec<LayoutViolation>),
    #[error(transparent)]
    Monitor(#[from] ConfigError),
    #[error("entry label `{label}` is not defined")]
    UnknownEntry { label: String },
    #[error("event {index}: {msg}")]
    BadEvent { index: usize, msg: String },
    #[error("scenario declares no sections")]
    NoSections,
    #[error(transparent)]
    Mem(#[from] MemError),
}

fn format_violations(v: &[LayoutViolation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.sections.is_empty() {
            return Err(ScenarioError::NoSections);
        }
        let mut staged = 0usize;
        for (index, ev) in self.events.iter().enumerate() {
            let fail = |msg: String| Err(ScenarioError::BadEvent { index, msg });
            match &ev.action {
                EventAction::RaiseIrq { line } => {
                    if *line > 15 {
                        return fail(format!("irq line {line} out of range"));
                    }
                }
                EventAction::DmaWrite { data, .. } => {
                    if data.is_empty() {
                        return fail("dma payload is empty".into());
                    }
                    staged += data.len();
                    if staged > DMA_STAGE_LEN {
                        return fail(format!(
                            "dma payloads exceed the {DMA_STAGE_LEN}-octet staging window"
                        ));
                    }
                }
                EventAction::HostWrite { data, .. } => {
                    if data.is_empty() {
                        return fail("host write payload is empty".into());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn link_sections(&self) -> Vec<Section> {
        self.sections.iter().map(SectionDecl::to_section).collect()
    }
}

/// Everything one deterministic run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: Mode,
    pub rows: Vec<TraceRow>,
    pub manifest: LayoutManifest,
    /// Verifier reference taken from the pristine linked image.
    pub expected: ExpectedState,
    pub report: AttestReport,
    pub verdict: Verdict,
    /// Cycle boundary at which the measurement was taken.
    pub attest_cycle: u64,
    /// First cycle whose EXEC bit dropped after being set, if any.
    pub exec_fall_cycle: Option<u64>,
    pub fault: Option<Fault>,
    pub final_mem: MemoryImage,
    pub final_exec: bool,
    pub key: AttestKey,
}

impl RunOutput {
    /// Device-side state for serving further attestation requests.
    pub fn prover_state(&self) -> ProverState {
        ProverState {
            key: self.key.clone(),
            mem: self.final_mem.clone(),
            layout: self.expected.layout,
            exec: self.final_exec,
        }
    }
}

/// Links, audits, boots, and runs a scenario to completion.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput, ScenarioError> {
    let cfg = scenario.layout.link_config();
    let sections = scenario.link_sections();
    let out = link(&sections, &cfg)?;
    let violations = layout_check(&out.manifest);
    if !violations.is_empty() {
        return Err(ScenarioError::Layout(violations));
    }

    let entry = match &scenario.entry {
        Some(label) => {
            *out.manifest
                .symbols
                .get(label)
                .ok_or_else(|| ScenarioError::UnknownEntry {
                    label: label.clone(),
                })?
        }
        None => scenario
            .sections
            .iter()
            .position(|s| s.name == SectionKind::Untrusted)
            .map(|i| out.section_bases[i])
            .unwrap_or(out.manifest.er_min),
    };

    let layout = RegionLayout::from_manifest(&out.manifest);
    let mon_cfg = MonitorConfig::new(
        scenario.mode,
        layout.er_min,
        layout.er_max,
        layout.or_min,
        layout.or_max,
    )?;
    let expected = ExpectedState::from_image(&out.image, layout);
    let key = AttestKey::from_seed(scenario.seed);
    let mut session = VerifierSession::new(key.clone(), scenario.seed);

    let mut machine = Machine::new(out.image.clone(), entry);

    // Stage DMA payloads below the data window before boot; the event then
    // only programs the engine with a source inside the staging area.
    let mut staged: Vec<Option<(u16, u16)>> = vec![None; scenario.events.len()];
    let mut stage_cursor = DMA_STAGE_MIN;
    for (i, ev) in scenario.events.iter().enumerate() {
        if let EventAction::DmaWrite { data, .. } = &ev.action {
            machine.write_mem(stage_cursor, data)?;
            staged[i] = Some((stage_cursor, data.len() as u16));
            stage_cursor += data.len() as u16;
        }
    }

    let mut mon = MonitorState::new();
    let mut prev: Option<BusSignals> = None;
    let mut rows: Vec<TraceRow> = Vec::new();
    let mut fired = vec![false; scenario.events.len()];
    let mut measurement: Option<(AttestReport, u64)> = None;
    let mut fault = None;

    let judge = |mon: &mut MonitorState,
                 prev: &mut Option<BusSignals>,
                 rows: &mut Vec<TraceRow>,
                 signals: BusSignals,
                 mk: &dyn Fn(MonitorState) -> TraceRow| {
        *mon = monitor_step(*mon, prev.as_ref(), &signals, &mon_cfg);
        rows.push(mk(*mon));
        *prev = Some(signals);
    };

    while machine.cycle < scenario.run_cycles {
        if measurement.is_none() {
            if let AttestAt::Cycle(c) = scenario.attest_at {
                if machine.cycle >= c {
                    let report = measure(
                        &key,
                        &session.issue_challenge(),
                        &machine.mem,
                        layout,
                        mon.exec(),
                    )
                    .expect("challenge was minted with the same key");
                    measurement = Some((report, machine.cycle));
                }
            }
        }
        for (i, ev) in scenario.events.iter().enumerate() {
            if fired[i] || machine.cycle < ev.cycle {
                continue;
            }
            fired[i] = true;
            match &ev.action {
                EventAction::RaiseIrq { line } => machine.raise_irq(*line),
                EventAction::DmaWrite { addr, .. } => {
                    let (src, len) = staged[i].expect("staged during setup");
                    machine.start_dma(src, *addr, len);
                }
                EventAction::HostWrite { addr, data } => {
                    for record in machine.host_write(*addr, data)? {
                        judge(&mut mon, &mut prev, &mut rows, record.signals, &|m| {
                            TraceRow::from_record(&record, m.phase)
                        });
                    }
                }
            }
        }
        if machine.cpu.halted {
            break;
        }
        match machine.step() {
            Ok(record) => {
                judge(&mut mon, &mut prev, &mut rows, record.signals, &|m| {
                    TraceRow::from_record(&record, m.phase)
                });
            }
            Err(f) => {
                let signals = BusSignals::idle(f.cycle(), f.pc());
                judge(&mut mon, &mut prev, &mut rows, signals, &|m| {
                    TraceRow::from_fault(&f, m.phase)
                });
                fault = Some(f);
                break;
            }
        }
    }

    let (report, attest_cycle) = match measurement {
        Some(m) => m,
        None => {
            let report = measure(
                &key,
                &session.issue_challenge(),
                &machine.mem,
                layout,
                mon.exec(),
            )
            .expect("challenge was minted with the same key");
            (report, machine.cycle)
        }
    };
    let verdict = session.verify(&report, &expected);

    let exec_fall_cycle = rows
        .windows(2)
        .position(|w| w[0].exec_bit() && !w[1].exec_bit())
        .map(|i| rows[i + 1].signals.cycle);

    Ok(RunOutput {
        mode: scenario.mode,
        rows,
        manifest: out.manifest,
        expected,
        report,
        verdict,
        attest_cycle,
        exec_fall_cycle,
        fault,
        final_mem: machine.mem,
        final_exec: mon.exec(),
        key,
    })
}

/// The same scenario under both interrupt policies.
#[derive(Debug, Clone)]
pub struct ModeComparison {
    pub apex: RunOutput,
    pub asap: RunOutput,
    /// First cycle at which the EXEC bits disagree.
    pub first_divergence: Option<u64>,
}

pub fn compare_modes(scenario: &Scenario) -> Result<ModeComparison, ScenarioError> {
    let mut apex_scenario = scenario.clone();
    apex_scenario.mode = Mode::Apex;
    let mut asap_scenario = scenario.clone();
    asap_scenario.mode = Mode::Asap;
    let apex = run_scenario(&apex_scenario)?;
    let asap = run_scenario(&asap_scenario)?;
    let first_divergence = apex
        .rows
        .iter()
        .zip(&asap.rows)
        .find(|(a, b)| a.exec_bit() != b.exec_bit())
        .map(|(a, _)| a.signals.cycle);
    Ok(ModeComparison {
        apex,
        asap,
        first_divergence,
    })
}
