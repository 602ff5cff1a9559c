//! Length-prefixed framing: a 4-byte big-endian payload length followed by
//! the payload (one compact JSON envelope).

use super::{Envelope, TransportError};

/// Largest accepted payload.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

pub const HEADER_LEN: usize = 4;

/// Prefix `payload` with its length.
pub fn frame_payload(payload: &[u8]) -> Result<Vec<u8>, TransportError> {
    if payload.len() > MAX_FRAME {
        return Err(TransportError::Oversize { len: payload.len() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn encode(envelope: &Envelope) -> Result<Vec<u8>, TransportError> {
    frame_payload(&envelope.to_payload()?)
}

/// Incremental decoder. Feed bytes as they arrive in any fragmentation;
/// complete frames come out in order exactly once and partial trailing bytes
/// are kept for the next read.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 0 && self.start * 2 >= self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes buffered but not yet returned.
    pub fn pending(&self) -> usize {
        self.buf.len() - self.start
    }

    /// Next complete payload, `Ok(None)` if more bytes are needed. An
    /// oversize length header is a protocol error; the stream is unusable
    /// afterwards.
    pub fn next_payload(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        let avail = &self.buf[self.start..];
        if avail.len() < HEADER_LEN {
            return Ok(None);
        }
        let len = u32::from_be_bytes([avail[0], avail[1], avail[2], avail[3]]) as usize;
        if len > MAX_FRAME {
            return Err(TransportError::Oversize { len });
        }
        if avail.len() < HEADER_LEN + len {
            return Ok(None);
        }
        let payload = avail[HEADER_LEN..HEADER_LEN + len].to_vec();
        self.start += HEADER_LEN + len;
        Ok(Some(payload))
    }

    pub fn next_envelope(&mut self) -> Result<Option<Envelope>, TransportError> {
        match self.next_payload()? {
            Some(p) => Envelope::from_payload(&p).map(Some),
            None => Ok(None),
        }
    }
}

/// Decode every complete frame in `bytes`.
pub fn decode_all(bytes: &[u8]) -> Result<(Vec<Envelope>, usize), TransportError> {
    let mut dec = FrameDecoder::new();
    dec.push(bytes);
    let mut out = Vec::new();
    while let Some(env) = dec.next_envelope()? {
        out.push(env);
    }
    Ok((out, dec.pending()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_frame_bytes() {
        let bytes = encode(&Envelope::new("ping")).unwrap();
        let expected: [u8; 16] = [
            0x00, 0x00, 0x00, 0x0C, 0x7B, 0x22, 0x74, 0x22, 0x3A, 0x22, 0x70, 0x69, 0x6E, 0x67,
            0x22, 0x7D,
        ];
        assert_eq!(bytes, expected);
    }

    #[test]
    fn empty_object_header() {
        let bytes = frame_payload(b"{}").unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 0, 2]);
        assert_eq!(bytes.len(), 6);
    }

    #[test]
    fn one_byte_reads_match_single_read() {
        let env = Envelope::new("arm.state").with_id(7).with("x", 1.25);
        let bytes = encode(&env).unwrap();
        let mut dec = FrameDecoder::new();
        let mut got = Vec::new();
        for b in &bytes {
            dec.push(std::slice::from_ref(b));
            while let Some(e) = dec.next_envelope().unwrap() {
                got.push(e);
            }
        }
        assert_eq!(got, vec![env]);
        assert_eq!(dec.pending(), 0);
    }

    #[test]
    fn coalesced_frames_come_out_in_order() {
        let a = Envelope::new("a").with_id(1);
        let b = Envelope::new("b").with_id(2);
        let mut bytes = encode(&a).unwrap();
        bytes.extend(encode(&b).unwrap());
        bytes.extend_from_slice(&[0, 0, 0]);
        let (envs, pending) = decode_all(&bytes).unwrap();
        assert_eq!(envs, vec![a, b]);
        assert_eq!(pending, 3);
    }

    #[test]
    fn oversize_declared_length_is_rejected() {
        let mut dec = FrameDecoder::new();
        dec.push(&((MAX_FRAME as u32) + 1).to_be_bytes());
        assert!(matches!(dec.next_payload(), Err(TransportError::Oversize { .. })));
        let big = vec![b' '; MAX_FRAME + 1];
        assert!(matches!(frame_payload(&big), Err(TransportError::Oversize { .. })));
    }

    #[test]
    fn invalid_json_payload_is_a_protocol_error() {
        let bytes = frame_payload(b"{oops").unwrap();
        assert!(matches!(decode_all(&bytes), Err(TransportError::Protocol(_))));
    }
}
