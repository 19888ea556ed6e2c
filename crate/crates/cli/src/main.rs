//! Command-line front end: link scenario images, run them under the
//! monitor, attest the result locally or over TCP, and check the run
//! against the temporal rules.
//!
//! Exit codes: 0 on accept (or all rules holding), 1 on reject (or a rule
//! violation), 2 on usage, parse, link, or I/O errors.

use std::fs;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use poxsim_core::attestation::{ExpectedState, RegionLayout, VerifierSession};
use poxsim_core::imager::{layout_check, link, SectionKind};
use poxsim_core::ltlmon::{check_g, ltl1, ltl2, ltl3, ltl4, CheckResult, Formula, Trace};
use poxsim_core::monitor::{Mode, MonitorConfig};
use poxsim_core::protocol::{run_verifier, serve_prover, DEFAULT_TIMEOUT};
use poxsim_core::scenario::{compare_modes, run_scenario, RunOutput, Scenario};
use poxsim_core::trace::write_csv;

#[derive(Parser)]
#[command(
    name = "poxsim",
    version,
    about = "MCU simulator with execution attestation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Apex,
    Asap,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Apex => Mode::Apex,
            ModeArg::Asap => Mode::Asap,
        }
    }
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario description (TOML)
    scenario: PathBuf,
    /// Override the interrupt policy declared in the scenario
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble and link a scenario, printing the layout
    Build {
        scenario: PathBuf,
        /// Write the full 64 KiB memory image here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario to completion and attest the final state
    Run {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Write the cycle trace as CSV
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a scenario and print the attestation report in detail
    Attest {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Run a scenario, then serve attestation requests over TCP
    Serve {
        #[command(flatten)]
        common: ScenarioArgs,
        /// Address to bind, e.g. 127.0.0.1:0
        #[arg(long)]
        listen: String,
        /// Serve a single connection, then exit
        #[arg(long)]
        once: bool,
    },
    /// Challenge a remote device and judge its report
    Verify {
        /// Scenario the device is expected to be running
        scenario: PathBuf,
        /// Device address, e.g. 127.0.0.1:4321
        #[arg(long)]
        connect: String,
        /// Session seed for nonce generation (defaults to the scenario seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a scenario and evaluate the temporal rules over its trace
    Check {
        #[command(flatten)]
        common: ScenarioArgs,
    },
    /// Run a scenario under both interrupt policies and diff the outcomes
    Compare { scenario: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &PathBuf, mode: Option<ModeArg>) -> Result<Scenario> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading scenario {}", path.display()))?;
    let mut scenario = Scenario::from_toml(&text)?;
    if let Some(m) = mode {
        scenario.mode = m.into();
    }
    Ok(scenario)
}

fn verdict_code(output: &RunOutput) -> ExitCode {
    if output.verdict.is_accept() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn kind_name(kind: SectionKind) -> &'static str {
    match kind {
        SectionKind::ExecStart => "exec.start",
        SectionKind::ExecBody => "exec.body",
        SectionKind::ExecLeave => "exec.leave",
        SectionKind::Untrusted => "untrusted",
        SectionKind::Data => "data",
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Build { scenario, out } => cmd_build(&scenario, out.as_deref()),
        Command::Run { common, trace } => cmd_run(&common, trace.as_deref()),
        Command::Attest { common } => cmd_attest(&common),
        Command::Serve {
            common,
            listen,
            once,
        } => cmd_serve(&common, &listen, once),
        Command::Verify {
            scenario,
            connect,
            seed,
        } => cmd_verify(&scenario, &connect, seed),
        Command::Check { common } => cmd_check(&common),
        Command::Compare { scenario } => cmd_compare(&scenario),
    }
}

fn cmd_build(path: &PathBuf, out: Option<&std::path::Path>) -> Result<ExitCode> {
    let scenario = load_scenario(path, None)?;
    let linked = link(&scenario.link_sections(), &scenario.layout.link_config())?;
    let violations = layout_check(&linked.manifest);
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("layout: {v}");
        }
        anyhow::bail!("layout audit failed");
    }
    let m = &linked.manifest;
    println!(
        "er: 0x{:04x}..0x{:04x} ({} octets)",
        m.er_min,
        m.er_max,
        (m.er_max - m.er_min) as u32 + 1
    );
    println!(
        "or: 0x{:04x}..0x{:04x} ({} octets)",
        m.or_min,
        m.or_max,
        (m.or_max - m.or_min) as u32 + 1
    );
    for (decl, base) in scenario.sections.iter().zip(&linked.section_bases) {
        let label = decl.label.as_deref().unwrap_or("-");
        println!(
            "section: {} {} @ 0x{:04x}",
            kind_name(decl.name),
            label,
            base
        );
    }
    for (name, addr) in &m.symbols {
        println!("symbol: {name} = 0x{addr:04x}");
    }
    for (line, target) in m.ivt_entries.iter().enumerate() {
        if *target != 0 {
            println!("vector: {line} -> 0x{target:04x}");
        }
    }
    if let Some(out_path) = out {
        fs::write(out_path, linked.image.as_bytes())
            .with_context(|| format!("writing image {}", out_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(output: &RunOutput) {
    println!("mode: {}", output.mode);
    println!("rows: {}", output.rows.len());
    match output.exec_fall_cycle {
        Some(c) => println!("exec fall: {c}"),
        None => println!("exec fall: -"),
    }
    match &output.fault {
        Some(f) => println!("fault: {f}"),
        None => println!("fault: -"),
    }
    println!("attest cycle: {}", output.attest_cycle);
    println!("exec: {}", output.report.exec as u8);
    println!("verdict: {}", output.verdict);
}

fn cmd_run(common: &ScenarioArgs, trace: Option<&std::path::Path>) -> Result<ExitCode> {
    let scenario = load_scenario(&common.scenario, common.mode)?;
    let output = run_scenario(&scenario)?;
    if let Some(trace_path) = trace {
        fs::write(trace_path, write_csv(&output.rows))
            .with_context(|| format!("writing trace {}", trace_path.display()))?;
    }
    print_summary(&output);
    Ok(verdict_code(&output))
}

fn cmd_attest(common: &ScenarioArgs) -> Result<ExitCode> {
    let scenario = load_scenario(&common.scenario, common.mode)?;
    let output = run_scenario(&scenario)?;
    let r = &output.report;
    println!("nonce: {}", hex::encode(r.nonce));
    println!("exec: {}", r.exec as u8);
    println!("er: 0x{:04x}..0x{:04x}", r.layout.er_min, r.layout.er_max);
    println!("or: 0x{:04x}..0x{:04x}", r.layout.or_min, r.layout.or_max);
    println!("or octets: {}", hex::encode(&r.or_bytes));
    println!("mac: {}", hex::encode(r.mac));
    println!("report: {}", hex::encode(r.to_bytes()));
    println!("verdict: {}", output.verdict);
    Ok(verdict_code(&output))
}

fn cmd_serve(common: &ScenarioArgs, listen: &str, once: bool) -> Result<ExitCode> {
    let scenario = load_scenario(&common.scenario, common.mode)?;
    let output = run_scenario(&scenario)?;
    let state = output.prover_state();
    let listener = TcpListener::bind(listen).with_context(|| format!("binding {listen}"))?;
    println!("listening on {}", listener.local_addr()?);
    // Line-buffered stdout may sit on the port announcement; callers poll it.
    use std::io::Write as _;
    std::io::stdout().flush().ok();
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                eprintln!("accept: {e}");
                continue;
            }
        };
        stream.set_read_timeout(Some(DEFAULT_TIMEOUT)).ok();
        stream.set_write_timeout(Some(DEFAULT_TIMEOUT)).ok();
        if let Err(e) = serve_prover(&stream, &state) {
            eprintln!("session: {e}");
        }
        if once {
            break;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(path: &PathBuf, connect: &str, seed: Option<u64>) -> Result<ExitCode> {
    let scenario = load_scenario(path, None)?;
    let linked = link(&scenario.link_sections(), &scenario.layout.link_config())?;
    let violations = layout_check(&linked.manifest);
    if !violations.is_empty() {
        anyhow::bail!("layout audit failed");
    }
    let layout = RegionLayout::from_manifest(&linked.manifest);
    let expected = ExpectedState::from_image(&linked.image, layout);
    let key = poxsim_core::attestation::AttestKey::from_seed(scenario.seed);
    let mut session = VerifierSession::new(key, seed.unwrap_or(scenario.seed));
    let stream = TcpStream::connect(connect).with_context(|| format!("connecting {connect}"))?;
    stream.set_read_timeout(Some(DEFAULT_TIMEOUT)).ok();
    stream.set_write_timeout(Some(DEFAULT_TIMEOUT)).ok();
    let verdict = run_verifier(&stream, &mut session, &expected);
    println!("verdict: {verdict}");
    Ok(if verdict.is_accept() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_check(common: &ScenarioArgs) -> Result<ExitCode> {
    let scenario = load_scenario(&common.scenario, common.mode)?;
    let output = run_scenario(&scenario)?;
    let layout = output.expected.layout;
    let cfg = MonitorConfig::new(
        output.mode,
        layout.er_min,
        layout.er_max,
        layout.or_min,
        layout.or_max,
    )?;
    let signals: Vec<_> = output.rows.iter().map(|r| r.signals).collect();
    let exec: Vec<_> = output.rows.iter().map(|r| r.exec_bit()).collect();
    let trace = Trace::from_run(&signals, &exec, &cfg);

    let mut rules: Vec<(&str, Formula)> = vec![("exit-gate", ltl1()), ("entry-gate", ltl2())];
    if output.mode == Mode::Apex {
        rules.push(("irq-gate", ltl3()));
    }
    rules.push(("ivt-gate", ltl4()));

    let mut all_hold = true;
    for (name, formula) in &rules {
        match check_g(formula, &trace)? {
            CheckResult::Holds => println!("{name},holds,-"),
            CheckResult::ViolatedAt(i) => {
                all_hold = false;
                println!("{name},violated,{i}");
            }
        }
    }
    Ok(if all_hold {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn cmd_compare(path: &PathBuf) -> Result<ExitCode> {
    let scenario = load_scenario(path, None)?;
    let cmp = compare_modes(&scenario)?;
    println!("apex verdict: {}", cmp.apex.verdict);
    println!("asap verdict: {}", cmp.asap.verdict);
    let fall = |o: &RunOutput| match o.exec_fall_cycle {
        Some(c) => c.to_string(),
        None => "-".into(),
    };
    println!("apex exec fall: {}", fall(&cmp.apex));
    println!("asap exec fall: {}", fall(&cmp.asap));
    match cmp.first_divergence {
        Some(c) => println!("first divergence: {c}"),
        None => println!("first divergence: -"),
    }
    Ok(ExitCode::SUCCESS)
}
