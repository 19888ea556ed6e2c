//! Challenge-response attestation over HMAC-SHA-256.
//!
//! The verifier issues a nonce plus a request token proving it knows the
//! shared key. The device answers with a report binding the nonce, the
//! monitor's EXEC bit, the region bounds, and the current contents of the
//! protected executable, the output region, and the vector table under one
//! MAC. The verifier recomputes the MAC from its own reference copies of
//! the executable and vector table, so only the output octets and the EXEC
//! bit are taken from the report; everything else must match the reference
//! or the MAC comparison fails.

use crate::imager::LayoutManifest;
use crate::machine::{MemoryImage, IVT_MIN};
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use std::fmt;
use thiserror::Error;

pub const NONCE_LEN: usize = 32;
pub const MAC_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const IVT_IMAGE_LEN: usize = 32;
/// nonce + request token.
pub const CHALLENGE_WIRE_LEN: usize = NONCE_LEN + MAC_LEN;
/// Everything but the variable-length output octets.
pub const REPORT_FIXED_LEN: usize = NONCE_LEN + 1 + 2 + 2 + 2 + 2 + 2 + MAC_LEN;

type HmacSha256 = Hmac<Sha256>;

/// Shared attestation key. Debug output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct AttestKey([u8; KEY_LEN]);

impl AttestKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> AttestKey {
        AttestKey(bytes)
    }

    /// Deterministic key for reproducible runs.
    pub fn from_seed(seed: u64) -> AttestKey {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut key = [0u8; KEY_LEN];
        rng.fill_bytes(&mut key);
        AttestKey(key)
    }

    fn mac(&self) -> HmacSha256 {
        HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length")
    }
}

impl fmt::Debug for AttestKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("AttestKey(..)")
    }
}

/// Region bounds covered by a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionLayout {
    pub er_min: u16,
    pub er_max: u16,
    pub or_min: u16,
    pub or_max: u16,
}

impl RegionLayout {
    pub fn from_manifest(m: &LayoutManifest) -> RegionLayout {
        RegionLayout {
            er_min: m.er_min,
            er_max: m.er_max,
            or_min: m.or_min,
            or_max: m.or_max,
        }
    }

    pub fn er_len(&self) -> usize {
        self.er_max as usize - self.er_min as usize + 1
    }

    pub fn or_len(&self) -> usize {
        self.or_max as usize - self.or_min as usize + 1
    }
}

/// A fresh nonce plus the token authenticating the request itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Challenge {
    pub nonce: [u8; NONCE_LEN],
    pub auth_token: [u8; MAC_LEN],
}

fn request_token(key: &AttestKey, nonce: &[u8; NONCE_LEN]) -> [u8; MAC_LEN] {
    let mut mac = key.mac();
    mac.update(b"REQ");
    mac.update(nonce);
    mac.finalize().into_bytes().into()
}

impl Challenge {
    pub fn new(key: &AttestKey, nonce: [u8; NONCE_LEN]) -> Challenge {
        Challenge {
            nonce,
            auth_token: request_token(key, &nonce),
        }
    }

    pub fn to_bytes(&self) -> [u8; CHALLENGE_WIRE_LEN] {
        let mut out = [0u8; CHALLENGE_WIRE_LEN];
        out[..NONCE_LEN].copy_from_slice(&self.nonce);
        out[NONCE_LEN..].copy_from_slice(&self.auth_token);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Challenge, WireError> {
        if bytes.len() != CHALLENGE_WIRE_LEN {
            return Err(WireError::BadLength {
                expected: CHALLENGE_WIRE_LEN,
                got: bytes.len(),
            });
        }
        let mut c = Challenge {
            nonce: [0; NONCE_LEN],
            auth_token: [0; MAC_LEN],
        };
        c.nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        c.auth_token.copy_from_slice(&bytes[NONCE_LEN..]);
        Ok(c)
    }
}

/// Signed measurement of the device state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestReport {
    pub nonce: [u8; NONCE_LEN],
    pub exec: bool,
    pub layout: RegionLayout,
    /// Current output-region octets; attested but not matched against a
    /// reference, since they carry the computation's result.
    pub or_bytes: Vec<u8>,
    pub mac: [u8; MAC_LEN],
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("expected {expected} octets, got {got}")]
    BadLength { expected: usize, got: usize },
    #[error("truncated message")]
    Truncated,
    #[error("length field disagrees with payload size")]
    LengthMismatch,
    #[error("exec octet must be 0 or 1, got {0:#04x}")]
    BadExecOctet(u8),
}

impl AttestReport {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(REPORT_FIXED_LEN + self.or_bytes.len());
        out.extend_from_slice(&self.nonce);
        out.push(self.exec as u8);
        out.extend_from_slice(&self.layout.er_min.to_be_bytes());
        out.extend_from_slice(&self.layout.er_max.to_be_bytes());
        out.extend_from_slice(&self.layout.or_min.to_be_bytes());
        out.extend_from_slice(&self.layout.or_max.to_be_bytes());
        out.extend_from_slice(&(self.or_bytes.len() as u16).to_be_bytes());
        out.extend_from_slice(&self.or_bytes);
        out.extend_from_slice(&self.mac);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<AttestReport, WireError> {
        if bytes.len() < REPORT_FIXED_LEN {
            return Err(WireError::Truncated);
        }
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        let exec = match bytes[NONCE_LEN] {
            0 => false,
            1 => true,
            other => return Err(WireError::BadExecOctet(other)),
        };
        let word = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        let layout = RegionLayout {
            er_min: word(NONCE_LEN + 1),
            er_max: word(NONCE_LEN + 3),
            or_min: word(NONCE_LEN + 5),
            or_max: word(NONCE_LEN + 7),
        };
        let or_len = word(NONCE_LEN + 9) as usize;
        if bytes.len() != REPORT_FIXED_LEN + or_len {
            return Err(WireError::LengthMismatch);
        }
        let or_start = NONCE_LEN + 11;
        let or_bytes = bytes[or_start..or_start + or_len].to_vec();
        let mut mac = [0u8; MAC_LEN];
        mac.copy_from_slice(&bytes[or_start + or_len..]);
        Ok(AttestReport {
            nonce,
            exec,
            layout,
            or_bytes,
            mac,
        })
    }
}

/// Feeds one measurement's input stream into `mac`. Field widths are fixed
/// (and the output length is pinned by the MAC'd bounds), so the encoding
/// is injective.
fn mac_measurement(
    mac: &mut HmacSha256,
    nonce: &[u8; NONCE_LEN],
    exec: bool,
    layout: &RegionLayout,
    er_bytes: &[u8],
    or_bytes: &[u8],
    ivt_bytes: &[u8],
) {
    mac.update(nonce);
    mac.update(&[exec as u8]);
    mac.update(&layout.er_min.to_be_bytes());
    mac.update(&layout.er_max.to_be_bytes());
    mac.update(&layout.or_min.to_be_bytes());
    mac.update(&layout.or_max.to_be_bytes());
    mac.update(er_bytes);
    mac.update(or_bytes);
    mac.update(ivt_bytes);
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum MeasureError {
    #[error("request token does not authenticate the challenge")]
    BadRequestToken,
}

/// Device-side measurement: authenticates the challenge, then reads the
/// protected regions straight out of memory and signs them together with
/// the EXEC bit. Read-only; a measurement never perturbs the machine.
pub fn measure(
    key: &AttestKey,
    challenge: &Challenge,
    mem: &MemoryImage,
    layout: RegionLayout,
    exec: bool,
) -> Result<AttestReport, MeasureError> {
    let mut token = key.mac();
    token.update(b"REQ");
    token.update(&challenge.nonce);
    if token.verify_slice(&challenge.auth_token).is_err() {
        return Err(MeasureError::BadRequestToken);
    }

    let read_span = |lo: u16, hi: u16| -> Vec<u8> { (lo..=hi).map(|a| mem.read8(a)).collect() };
    let er_bytes = read_span(layout.er_min, layout.er_max);
    let or_bytes = read_span(layout.or_min, layout.or_max);
    let ivt_bytes = read_span(IVT_MIN, u16::MAX);

    let mut mac = key.mac();
    mac_measurement(
        &mut mac,
        &challenge.nonce,
        exec,
        &layout,
        &er_bytes,
        &or_bytes,
        &ivt_bytes,
    );
    Ok(AttestReport {
        nonce: challenge.nonce,
        exec,
        layout,
        or_bytes,
        mac: mac.finalize().into_bytes().into(),
    })
}

/// The verifier's reference: region bounds plus pristine copies of the
/// executable and vector table taken from the built image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExpectedState {
    pub layout: RegionLayout,
    pub er_image: Vec<u8>,
    pub ivt_image: [u8; IVT_IMAGE_LEN],
}

impl ExpectedState {
    pub fn from_image(image: &MemoryImage, layout: RegionLayout) -> ExpectedState {
        let er_image = (layout.er_min..=layout.er_max)
            .map(|a| image.read8(a))
            .collect();
        let mut ivt_image = [0u8; IVT_IMAGE_LEN];
        for (i, b) in ivt_image.iter_mut().enumerate() {
            *b = image.read8(IVT_MIN + i as u16);
        }
        ExpectedState {
            layout,
            er_image,
            ivt_image,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// Report nonce is not the one outstanding for this session.
    NonceMismatch,
    /// MAC does not match a recomputation from the reference state.
    MacMismatch,
    /// Authentic report, but the monitor had zeroed the EXEC bit.
    ExecZero,
    /// Report octets failed to parse.
    Malformed,
    /// Connection failure before a report arrived.
    Transport,
    /// No report within the deadline.
    Timeout,
    /// The device answered with a protocol error code.
    ProverRefused(u8),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::NonceMismatch => f.write_str("nonce mismatch"),
            RejectReason::MacMismatch => f.write_str("mac mismatch"),
            RejectReason::ExecZero => f.write_str("exec bit clear"),
            RejectReason::Malformed => f.write_str("malformed report"),
            RejectReason::Transport => f.write_str("transport failure"),
            RejectReason::Timeout => f.write_str("timeout"),
            RejectReason::ProverRefused(code) => write!(f, "prover refused (code {code:#04x})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Accept => f.write_str("accept"),
            Verdict::Reject(r) => write!(f, "reject: {r}"),
        }
    }
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

/// Judges a report against `expected` for the outstanding `nonce`.
/// The MAC is recomputed from the reference executable and vector table,
/// taking only the output octets and the EXEC bit from the report.
pub fn verify_report(
    key: &AttestKey,
    nonce: &[u8; NONCE_LEN],
    report: &AttestReport,
    expected: &ExpectedState,
) -> Verdict {
    if &report.nonce != nonce {
        return Verdict::Reject(RejectReason::NonceMismatch);
    }
    // The reported bounds must agree with the reference exactly; the MAC
    // recomputation below uses the reference copies, so a claim about a
    // different region would otherwise go unexamined.
    if report.layout != expected.layout || report.or_bytes.len() != expected.layout.or_len() {
        return Verdict::Reject(RejectReason::Malformed);
    }
    let mut mac = key.mac();
    mac_measurement(
        &mut mac,
        nonce,
        report.exec,
        &expected.layout,
        &expected.er_image,
        &report.or_bytes,
        &expected.ivt_image,
    );
    if mac.verify_slice(&report.mac).is_err() {
        return Verdict::Reject(RejectReason::MacMismatch);
    }
    if !report.exec {
        return Verdict::Reject(RejectReason::ExecZero);
    }
    Verdict::Accept
}

/// One verifier endpoint: owns the key, a deterministic nonce source, and
/// at most one outstanding challenge. Verifying consumes the outstanding
/// nonce, so replaying a report can never succeed twice.
#[derive(Debug)]
pub struct VerifierSession {
    key: AttestKey,
    rng: ChaCha20Rng,
    outstanding: Option<[u8; NONCE_LEN]>,
}

impl VerifierSession {
    pub fn new(key: AttestKey, seed: u64) -> VerifierSession {
        VerifierSession {
            key,
            rng: ChaCha20Rng::seed_from_u64(seed),
            outstanding: None,
        }
    }

    pub fn key(&self) -> &AttestKey {
        &self.key
    }

    /// Issues a fresh challenge, superseding any outstanding one.
    pub fn issue_challenge(&mut self) -> Challenge {
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        self.outstanding = Some(nonce);
        Challenge::new(&self.key, nonce)
    }

    /// Judges `report` against the outstanding challenge, consuming it.
    /// With nothing outstanding every report is stale.
    pub fn verify(&mut self, report: &AttestReport, expected: &ExpectedState) -> Verdict {
        match self.outstanding.take() {
            Some(nonce) => verify_report(&self.key, &nonce, report, expected),
            None => Verdict::Reject(RejectReason::NonceMismatch),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imager::{link, LinkConfig, Section, SectionKind};
    use proptest::prelude::*;
    use rand::Rng;

    fn built() -> (MemoryImage, RegionLayout) {
        let sections = vec![
            Section {
                kind: SectionKind::ExecStart,
                label: Some("start".into()),
                irq_line: None,
                source: "LOADI R2, 0xBEEF\nSTORE R2, [0x0300]".into(),
            },
            Section {
                kind: SectionKind::ExecLeave,
                label: Some("leave".into()),
                irq_line: None,
                source: "RET".into(),
            },
        ];
        let out = link(&sections, &LinkConfig::default()).unwrap();
        let layout = RegionLayout::from_manifest(&out.manifest);
        (out.image, layout)
    }

    fn setup() -> (
        AttestKey,
        VerifierSession,
        MemoryImage,
        RegionLayout,
        ExpectedState,
    ) {
        let key = AttestKey::from_seed(7);
        let session = VerifierSession::new(key.clone(), 99);
        let (image, layout) = built();
        let expected = ExpectedState::from_image(&image, layout);
        (key, session, image, layout, expected)
    }

    #[test]
    fn honest_round_trip_accepts() {
        let (key, mut session, image, layout, expected) = setup();
        let ch = session.issue_challenge();
        let report = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(session.verify(&report, &expected), Verdict::Accept);
    }

    #[test]
    fn exec_zero_is_rejected_even_with_valid_mac() {
        let (key, mut session, image, layout, expected) = setup();
        let ch = session.issue_challenge();
        let report = measure(&key, &ch, &image, layout, false).unwrap();
        assert_eq!(
            session.verify(&report, &expected),
            Verdict::Reject(RejectReason::ExecZero)
        );
    }

    #[test]
    fn challenge_from_wrong_key_is_refused() {
        let (key, _, image, layout, _) = setup();
        let mut rogue = VerifierSession::new(AttestKey::from_seed(8), 99);
        let ch = rogue.issue_challenge();
        assert_eq!(
            measure(&key, &ch, &image, layout, true),
            Err(MeasureError::BadRequestToken)
        );
    }

    #[test]
    fn tampered_executable_fails_the_mac() {
        let (key, mut session, mut image, layout, expected) = setup();
        let ch = session.issue_challenge();
        image.write8(layout.er_min + 2, 0xAA);
        let report = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(
            session.verify(&report, &expected),
            Verdict::Reject(RejectReason::MacMismatch)
        );
    }

    #[test]
    fn tampered_vector_table_fails_the_mac() {
        let (key, mut session, mut image, layout, expected) = setup();
        let ch = session.issue_challenge();
        image.write8(IVT_MIN, 0x44);
        let report = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(
            session.verify(&report, &expected),
            Verdict::Reject(RejectReason::MacMismatch)
        );
    }

    #[test]
    fn output_region_content_is_free() {
        // The output octets carry results; any value verifies as long as
        // the MAC covers what was reported.
        let (key, mut session, mut image, layout, expected) = setup();
        image.write16(0x0300, 0xBEEF);
        image.write8(0x030F, 0x55);
        let ch = session.issue_challenge();
        let report = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(report.or_bytes[0], 0xEF);
        assert_eq!(report.or_bytes[15], 0x55);
        assert_eq!(session.verify(&report, &expected), Verdict::Accept);
    }

    #[test]
    fn replayed_report_is_stale() {
        let (key, mut session, image, layout, expected) = setup();
        let ch = session.issue_challenge();
        let report = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(session.verify(&report, &expected), Verdict::Accept);
        // Session nonce was consumed; the same report is now a replay.
        assert_eq!(
            session.verify(&report, &expected),
            Verdict::Reject(RejectReason::NonceMismatch)
        );
        // A fresh challenge invalidates the old report too.
        let _fresh = session.issue_challenge();
        assert_eq!(
            session.verify(&report, &expected),
            Verdict::Reject(RejectReason::NonceMismatch)
        );
    }

    #[test]
    fn sessions_with_one_seed_reproduce_nonces() {
        let key = AttestKey::from_seed(1);
        let mut a = VerifierSession::new(key.clone(), 42);
        let mut b = VerifierSession::new(key.clone(), 42);
        let mut c = VerifierSession::new(key, 43);
        let na = a.issue_challenge().nonce;
        assert_eq!(na, b.issue_challenge().nonce);
        assert_ne!(na, c.issue_challenge().nonce);
        assert_ne!(na, a.issue_challenge().nonce);
    }

    #[test]
    fn measurement_is_pure() {
        let (key, mut session, image, layout, _) = setup();
        let ch = session.issue_challenge();
        let a = measure(&key, &ch, &image, layout, true).unwrap();
        let b = measure(&key, &ch, &image, layout, true).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn challenge_wire_round_trip() {
        let key = AttestKey::from_seed(3);
        let ch = Challenge::new(&key, [0x5A; NONCE_LEN]);
        let back = Challenge::from_bytes(&ch.to_bytes()).unwrap();
        assert_eq!(back, ch);
        assert!(matches!(
            Challenge::from_bytes(&[0u8; 63]),
            Err(WireError::BadLength { .. })
        ));
    }

    #[test]
    fn report_parse_errors() {
        let (key, mut session, image, layout, _) = setup();
        let ch = session.issue_challenge();
        let wire = measure(&key, &ch, &image, layout, true).unwrap().to_bytes();
        assert!(matches!(
            AttestReport::from_bytes(&wire[..REPORT_FIXED_LEN - 1]),
            Err(WireError::Truncated)
        ));
        let mut bad_exec = wire.clone();
        bad_exec[NONCE_LEN] = 2;
        assert!(matches!(
            AttestReport::from_bytes(&bad_exec),
            Err(WireError::BadExecOctet(2))
        ));
        let mut bad_len = wire.clone();
        bad_len[NONCE_LEN + 9] ^= 0x01; // or_len field
        assert!(matches!(
            AttestReport::from_bytes(&bad_len),
            Err(WireError::LengthMismatch)
        ));
    }

    #[test]
    fn every_single_bit_flip_in_the_report_rejects() {
        let (key, _, image, layout, expected) = setup();
        let mut session = VerifierSession::new(key.clone(), 5);
        let ch = session.issue_challenge();
        let nonce = ch.nonce;
        let wire = measure(&key, &ch, &image, layout, true).unwrap().to_bytes();
        for bit in 0..wire.len() * 8 {
            let mut mutated = wire.clone();
            mutated[bit / 8] ^= 1 << (bit % 8);
            let verdict = match AttestReport::from_bytes(&mutated) {
                Ok(report) => verify_report(&key, &nonce, &report, &expected),
                Err(_) => Verdict::Reject(RejectReason::Malformed),
            };
            assert_ne!(verdict, Verdict::Accept, "bit {bit} slipped through");
        }
    }

    #[test]
    fn random_corruption_burst_rejects() {
        let (key, _, image, layout, expected) = setup();
        let mut session = VerifierSession::new(key.clone(), 6);
        let ch = session.issue_challenge();
        let nonce = ch.nonce;
        let wire = measure(&key, &ch, &image, layout, true).unwrap().to_bytes();
        let mut rng = ChaCha20Rng::seed_from_u64(0xC0FFEE);
        for _ in 0..2_000 {
            let mut mutated = wire.clone();
            let flips = rng.gen_range(1..=8);
            for _ in 0..flips {
                let bit = rng.gen_range(0..mutated.len() * 8);
                mutated[bit / 8] ^= 1 << (bit % 8);
            }
            if mutated == wire {
                continue; // even flip count can cancel out
            }
            let verdict = match AttestReport::from_bytes(&mutated) {
                Ok(report) => verify_report(&key, &nonce, &report, &expected),
                Err(_) => Verdict::Reject(RejectReason::Malformed),
            };
            assert_ne!(verdict, Verdict::Accept);
        }
    }

    proptest! {
        #[test]
        fn report_wire_round_trips(
            nonce in any::<[u8; 32]>(),
            exec in any::<bool>(),
            bounds in any::<[u16; 4]>(),
            or_bytes in proptest::collection::vec(any::<u8>(), 0..64),
            mac in any::<[u8; 32]>(),
        ) {
            let report = AttestReport {
                nonce,
                exec,
                layout: RegionLayout {
                    er_min: bounds[0],
                    er_max: bounds[1],
                    or_min: bounds[2],
                    or_max: bounds[3],
                },
                or_bytes,
                mac,
            };
            let back = AttestReport::from_bytes(&report.to_bytes()).unwrap();
            prop_assert_eq!(back, report);
        }
    }
}
