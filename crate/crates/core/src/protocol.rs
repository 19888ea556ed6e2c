//! Wire protocol between verifier and device.
//!
//! Frames are `len(4, big-endian) || type(1) || payload`, where `len`
//! counts the type octet plus the payload. Three message types exist:
//! attestation request (a challenge), attestation response (a report),
//! and a one-octet error. The transport is anything `Read + Write`;
//! deadlines are the transport's own read timeouts, so TCP sockets and
//! the in-memory pipe behave identically.

use crate::attestation::{
    measure, AttestKey, AttestReport, Challenge, ExpectedState, MeasureError, RegionLayout,
    RejectReason, Verdict, VerifierSession, WireError,
};
use crate::machine::MemoryImage;
use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::mpsc;
use std::time::Duration;
use thiserror::Error;

pub const MAX_PAYLOAD: usize = 4096;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

pub const MSG_ATTEST_REQUEST: u8 = 0x01;
pub const MSG_ATTEST_RESPONSE: u8 = 0x02;
pub const MSG_ERROR: u8 = 0xFF;

/// Error payload codes.
pub const ERR_BAD_TOKEN: u8 = 0x01;
pub const ERR_MALFORMED: u8 = 0x02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    AttestRequest(Challenge),
    AttestResponse(AttestReport),
    Error(u8),
}

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("i/o failure")]
    Io(#[from] io::Error),
    #[error("frame of {len} octets exceeds the {MAX_PAYLOAD}-octet payload cap")]
    FrameTooLarge { len: u32 },
    #[error("connection closed mid-frame")]
    TruncatedFrame,
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("bad payload")]
    MalformedPayload(#[from] WireError),
}

impl Message {
    fn type_octet(&self) -> u8 {
        match self {
            Message::AttestRequest(_) => MSG_ATTEST_REQUEST,
            Message::AttestResponse(_) => MSG_ATTEST_RESPONSE,
            Message::Error(_) => MSG_ERROR,
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            Message::AttestRequest(c) => c.to_bytes().to_vec(),
            Message::AttestResponse(r) => r.to_bytes(),
            Message::Error(code) => vec![*code],
        }
    }

    fn decode(ty: u8, payload: &[u8]) -> Result<Message, ProtoError> {
        match ty {
            MSG_ATTEST_REQUEST => Ok(Message::AttestRequest(Challenge::from_bytes(payload)?)),
            MSG_ATTEST_RESPONSE => Ok(Message::AttestResponse(AttestReport::from_bytes(payload)?)),
            MSG_ERROR => {
                if payload.len() != 1 {
                    return Err(WireError::BadLength {
                        expected: 1,
                        got: payload.len(),
                    }
                    .into());
                }
                Ok(Message::Error(payload[0]))
            }
            other => Err(ProtoError::UnknownType(other)),
        }
    }
}

/// Writes one framed message.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<(), ProtoError> {
    let payload = msg.payload();
    if payload.len() > MAX_PAYLOAD {
        return Err(ProtoError::FrameTooLarge {
            len: payload.len() as u32 + 1,
        });
    }
    let len = (payload.len() + 1) as u32;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&[msg.type_octet()])?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

/// Reads one framed message. `Ok(None)` means the peer closed cleanly at a
/// frame boundary; closing mid-frame is `TruncatedFrame`. A zero length
/// field (no room for the type octet) counts as truncated too.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, ProtoError> {
    let mut len_buf = [0u8; 4];
    match r.read(&mut len_buf[..1])? {
        0 => return Ok(None),
        _ => r.read_exact(&mut len_buf[1..]).map_err(eof_is_truncation)?,
    }
    let len = u32::from_be_bytes(len_buf);
    if len == 0 {
        return Err(ProtoError::TruncatedFrame);
    }
    if len as usize > MAX_PAYLOAD + 1 {
        return Err(ProtoError::FrameTooLarge { len });
    }
    let mut frame = vec![0u8; len as usize];
    r.read_exact(&mut frame).map_err(eof_is_truncation)?;
    Message::decode(frame[0], &frame[1..]).map(Some)
}

fn eof_is_truncation(e: io::Error) -> ProtoError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ProtoError::TruncatedFrame
    } else {
        ProtoError::Io(e)
    }
}

/// Everything the device needs to answer attestation requests: the shared
/// key plus a frozen view of memory, bounds, and the EXEC bit.
#[derive(Debug, Clone)]
pub struct ProverState {
    pub key: AttestKey,
    pub mem: MemoryImage,
    pub layout: RegionLayout,
    pub exec: bool,
}

impl ProverState {
    pub fn answer(&self, challenge: &Challenge) -> Result<AttestReport, MeasureError> {
        measure(&self.key, challenge, &self.mem, self.layout, self.exec)
    }
}

/// Serves attestation requests one at a time until the peer closes.
/// Unauthenticated or unparsable requests get an error frame and the
/// connection stays up; a desynchronized stream (oversized or truncated
/// frame) ends the session with the error.
pub fn serve_prover(
    mut transport: impl Read + Write,
    state: &ProverState,
) -> Result<(), ProtoError> {
    loop {
        let msg = match read_message(&mut transport) {
            Ok(Some(m)) => m,
            Ok(None) => return Ok(()),
            Err(e @ (ProtoError::FrameTooLarge { .. } | ProtoError::TruncatedFrame)) => {
                return Err(e)
            }
            Err(ProtoError::Io(e)) => return Err(ProtoError::Io(e)),
            Err(_) => {
                write_message(&mut transport, &Message::Error(ERR_MALFORMED))?;
                continue;
            }
        };
        match msg {
            Message::AttestRequest(challenge) => match state.answer(&challenge) {
                Ok(report) => write_message(&mut transport, &Message::AttestResponse(report))?,
                Err(MeasureError::BadRequestToken) => {
                    write_message(&mut transport, &Message::Error(ERR_BAD_TOKEN))?
                }
            },
            // A response or error arriving at the device is role confusion;
            // drop the session rather than guess.
            Message::AttestResponse(_) | Message::Error(_) => return Ok(()),
        }
    }
}

/// Runs one challenge-response exchange over `transport` and judges the
/// answer. Timeouts are whatever the transport enforces on reads.
pub fn run_verifier(
    mut transport: impl Read + Write,
    session: &mut VerifierSession,
    expected: &ExpectedState,
) -> Verdict {
    let challenge = session.issue_challenge();
    if write_message(&mut transport, &Message::AttestRequest(challenge)).is_err() {
        return Verdict::Reject(RejectReason::Transport);
    }
    match read_message(&mut transport) {
        Ok(Some(Message::AttestResponse(report))) => session.verify(&report, expected),
        Ok(Some(Message::Error(code))) => Verdict::Reject(RejectReason::ProverRefused(code)),
        Ok(Some(Message::AttestRequest(_))) => Verdict::Reject(RejectReason::Malformed),
        Ok(None) => Verdict::Reject(RejectReason::Transport),
        Err(ProtoError::Io(e))
            if matches!(
                e.kind(),
                io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
            ) =>
        {
            Verdict::Reject(RejectReason::Timeout)
        }
        Err(ProtoError::Io(_)) | Err(ProtoError::TruncatedFrame) => {
            Verdict::Reject(RejectReason::Transport)
        }
        Err(_) => Verdict::Reject(RejectReason::Malformed),
    }
}

/// One end of an in-memory bidirectional byte stream. Reads observe the
/// configured timeout just like a socket, so verifier logic is identical
/// over TCP and in-process pipes.
#[derive(Debug)]
pub struct DuplexStream {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
    read_timeout: Option<Duration>,
}

/// Creates a connected pair of in-memory streams.
pub fn duplex() -> (DuplexStream, DuplexStream) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    let mk = |tx, rx| DuplexStream {
        tx,
        rx,
        pending: VecDeque::new(),
        read_timeout: Some(DEFAULT_TIMEOUT),
    };
    (mk(tx_a, rx_a), mk(tx_b, rx_b))
}

impl DuplexStream {
    /// `None` blocks forever, mirroring `TcpStream::set_read_timeout`.
    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) {
        self.read_timeout = timeout;
    }

    fn fill(&mut self) -> io::Result<bool> {
        let chunk = match self.read_timeout {
            Some(t) => match self.rx.recv_timeout(t) {
                Ok(c) => c,
                Err(mpsc::RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "read timed out"))
                }
                Err(mpsc::RecvTimeoutError::Disconnected) => return Ok(false),
            },
            None => match self.rx.recv() {
                Ok(c) => c,
                Err(_) => return Ok(false),
            },
        };
        self.pending.extend(chunk);
        Ok(true)
    }
}

impl Read for DuplexStream {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        while self.pending.is_empty() {
            if !self.fill()? {
                return Ok(0); // peer dropped: EOF
            }
        }
        let n = buf.len().min(self.pending.len());
        for b in buf.iter_mut().take(n) {
            *b = self.pending.pop_front().expect("checked non-empty");
        }
        Ok(n)
    }
}

impl Write for DuplexStream {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
