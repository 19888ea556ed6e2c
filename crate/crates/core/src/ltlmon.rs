//! Finite-trace LTL checker used as an independent oracle against the
//! execution monitor.
//!
//! Formulas are built from a fixed vocabulary of per-cycle atoms derived
//! from bus signals, the recorded EXEC bit, and the region configuration.
//! `Next` is weak at the end of a trace: with no successor cycle, `X φ`
//! holds vacuously, so finite traces never fail merely by ending.

use crate::machine::BusSignals;
use crate::monitor::MonitorConfig;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Atom {
    /// er_min ≤ pc ≤ er_max.
    PcInEr,
    /// pc = er_min.
    PcEqErMin,
    /// pc is the final ER instruction (its fetch covers er_max).
    PcEqErMax,
    /// An interrupt dispatched this cycle.
    Irq,
    /// CPU write touching the vector table.
    WIvt,
    /// DMA write into the vector table.
    DmaIvt,
    /// CPU write touching ER.
    WEr,
    /// DMA write into ER.
    DmaEr,
    /// CPU write touching the output region while pc is outside ER.
    WOrOutside,
    /// The monitor's EXEC bit as recorded for this cycle.
    Exec,
}

impl Atom {
    fn index(self) -> usize {
        match self {
            Atom::PcInEr => 0,
            Atom::PcEqErMin => 1,
            Atom::PcEqErMax => 2,
            Atom::Irq => 3,
            Atom::WIvt => 4,
            Atom::DmaIvt => 5,
            Atom::WEr => 6,
            Atom::DmaEr => 7,
            Atom::WOrOutside => 8,
            Atom::Exec => 9,
        }
    }
}

/// Truth values of every atom at one cycle, packed as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Valuation(u16);

impl Valuation {
    pub fn set(&mut self, a: Atom, v: bool) {
        if v {
            self.0 |= 1 << a.index();
        } else {
            self.0 &= !(1 << a.index());
        }
    }

    pub fn get(&self, a: Atom) -> bool {
        self.0 & (1 << a.index()) != 0
    }
}

/// A finite trace: one valuation per cycle.
#[derive(Debug, Clone, Default)]
pub struct Trace(pub Vec<Valuation>);

impl Trace {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Builds atom valuations from a recorded run. `exec[t]` is the monitor's
    /// EXEC bit at cycle `t`; the write atoms reuse the monitor's region
    /// helpers so both sides judge identical predicates.
    pub fn from_run(signals: &[BusSignals], exec: &[bool], cfg: &MonitorConfig) -> Trace {
        assert_eq!(signals.len(), exec.len(), "one exec bit per cycle");
        let mut vals = Vec::with_capacity(signals.len());
        for (s, &e) in signals.iter().zip(exec.iter()) {
            let mut v = Valuation::default();
            v.set(Atom::PcInEr, cfg.pc_in_er(s.pc));
            v.set(Atom::PcEqErMin, s.pc == cfg.er_min);
            v.set(Atom::PcEqErMax, cfg.is_exit_pc(s.pc));
            v.set(Atom::Irq, s.irq);
            let no_dma = BusSignals {
                dma_en: false,
                ..*s
            };
            let no_cpu = BusSignals { w_en: false, ..*s };
            v.set(Atom::WIvt, cfg.write_touches_ivt(&no_dma));
            v.set(Atom::DmaIvt, cfg.write_touches_ivt(&no_cpu));
            v.set(Atom::WEr, cfg.write_touches_er(&no_dma));
            v.set(Atom::DmaEr, cfg.write_touches_er(&no_cpu));
            v.set(
                Atom::WOrOutside,
                cfg.cpu_write_touches_or(s) && !cfg.pc_in_er(s.pc),
            );
            v.set(Atom::Exec, e);
            vals.push(v);
        }
        Trace(vals)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Atom(Atom),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Next(Box<Formula>),
    Globally(Box<Formula>),
}

impl Formula {
    pub fn atom(a: Atom) -> Formula {
        Formula::Atom(a)
    }

    // Named for how formulas read; this is a constructor, not a negation
    // of self, so the operator trait does not fit.
    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::And(Box::new(a), Box::new(b))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::Implies(Box::new(a), Box::new(b))
    }

    pub fn next(f: Formula) -> Formula {
        Formula::Next(Box::new(f))
    }

    pub fn globally(f: Formula) -> Formula {
        Formula::Globally(Box::new(f))
    }
}

/// Pure recursive evaluation of `f` at position `i` of `t`.
/// `i` must be below `t.len()`.
pub fn eval(f: &Formula, t: &Trace, i: usize) -> bool {
    assert!(i < t.len(), "evaluation index {i} out of trace");
    match f {
        Formula::Atom(a) => t.0[i].get(*a),
        Formula::Not(g) => !eval(g, t, i),
        Formula::And(a, b) => eval(a, t, i) && eval(b, t, i),
        Formula::Or(a, b) => eval(a, t, i) || eval(b, t, i),
        Formula::Implies(a, b) => !eval(a, t, i) || eval(b, t, i),
        Formula::Next(g) => {
            if i + 1 < t.len() {
                eval(g, t, i + 1)
            } else {
                true // weak next at end of trace
            }
        }
        Formula::Globally(g) => (i..t.len()).all(|j| eval(g, t, j)),
    }
}

/// Evaluates `f` at every position in one right-to-left pass:
/// O(len · |f|) regardless of temporal nesting.
pub fn eval_all(f: &Formula, t: &Trace) -> Vec<bool> {
    let n = t.len();
    match f {
        Formula::Atom(a) => t.0.iter().map(|v| v.get(*a)).collect(),
        Formula::Not(g) => eval_all(g, t).into_iter().map(|b| !b).collect(),
        Formula::And(a, b) => zip_with(eval_all(a, t), eval_all(b, t), |x, y| x && y),
        Formula::Or(a, b) => zip_with(eval_all(a, t), eval_all(b, t), |x, y| x || y),
        Formula::Implies(a, b) => zip_with(eval_all(a, t), eval_all(b, t), |x, y| !x || y),
        Formula::Next(g) => {
            let inner = eval_all(g, t);
            (0..n)
                .map(|i| if i + 1 < n { inner[i + 1] } else { true })
                .collect()
        }
        Formula::Globally(g) => {
            let inner = eval_all(g, t);
            let mut out = vec![false; n];
            let mut acc = true;
            for i in (0..n).rev() {
                acc = acc && inner[i];
                out[i] = acc;
            }
            out
        }
    }
}

fn zip_with(a: Vec<bool>, b: Vec<bool>, f: impl Fn(bool, bool) -> bool) -> Vec<bool> {
    a.into_iter().zip(b).map(|(x, y)| f(x, y)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckResult {
    Holds,
    /// Smallest position at which the body of the G-formula fails.
    ViolatedAt(usize),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LtlError {
    #[error("check_g expects a top-level Globally formula")]
    NotAGlobally,
}

/// Checks a G-rooted formula over a whole trace, reporting the earliest
/// violating cycle. An empty trace holds vacuously.
pub fn check_g(f: &Formula, t: &Trace) -> Result<CheckResult, LtlError> {
    let body = match f {
        Formula::Globally(g) => g,
        _ => return Err(LtlError::NotAGlobally),
    };
    let vals = eval_all(body, t);
    Ok(match vals.iter().position(|ok| !ok) {
        Some(i) => CheckResult::ViolatedAt(i),
        None => CheckResult::Holds,
    })
}

/// G( pc∈ER ∧ ¬X(pc∈ER) → pc=ER_MAX ∨ ¬X(EXEC) ):
/// leaving ER other than from its final instruction zeroes EXEC.
pub fn ltl1() -> Formula {
    use Formula as F;
    F::globally(F::implies(
        F::and(
            F::atom(Atom::PcInEr),
            F::not(F::next(F::atom(Atom::PcInEr))),
        ),
        F::or(
            F::atom(Atom::PcEqErMax),
            F::not(F::next(F::atom(Atom::Exec))),
        ),
    ))
}

/// G( ¬(pc∈ER) ∧ X(pc∈ER) → X(pc=ER_MIN) ∨ ¬X(EXEC) ):
/// entering ER other than at its first instruction zeroes EXEC.
pub fn ltl2() -> Formula {
    use Formula as F;
    F::globally(F::implies(
        F::and(
            F::not(F::atom(Atom::PcInEr)),
            F::next(F::atom(Atom::PcInEr)),
        ),
        F::or(
            F::next(F::atom(Atom::PcEqErMin)),
            F::not(F::next(F::atom(Atom::Exec))),
        ),
    ))
}

/// G( pc∈ER ∧ irq → ¬EXEC ): under the strict interrupt policy, an
/// interrupt taken inside ER zeroes EXEC the same cycle.
pub fn ltl3() -> Formula {
    use Formula as F;
    F::globally(F::implies(
        F::and(F::atom(Atom::PcInEr), F::atom(Atom::Irq)),
        F::not(F::atom(Atom::Exec)),
    ))
}

/// G( DMA_IVT ∨ W_IVT → ¬EXEC ): any write into the vector table zeroes
/// EXEC the same cycle.
pub fn ltl4() -> Formula {
    use Formula as F;
    F::globally(F::implies(
        F::or(F::atom(Atom::DmaIvt), F::atom(Atom::WIvt)),
        F::not(F::atom(Atom::Exec)),
    ))
}
