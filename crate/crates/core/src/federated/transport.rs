//! In-process message channel between parties and the server.
//!
//! Every message is encoded to its little-endian wire form, queued FIFO per
//! (direction, party) pair, and recorded in an append-only [`TransportLog`].
//!
//! Wire layout: `u32 round | u8 direction | u8 party | u8 kind | u32 rows |
//! u32 cols | rows*cols f64`, row-major.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Party to server.
    Upstream,
    /// Server to party.
    Downstream,
}

impl Direction {
    fn code(self) -> u8 {
        match self {
            Direction::Upstream => 0,
            Direction::Downstream => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Direction::Upstream),
            1 => Ok(Direction::Downstream),
            _ => Err(Error::Data(format!("unknown message direction {c}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Representation,
    Gradient,
    /// Any other code seen on the wire; never produced by the protocol.
    Other(u8),
}

impl MessageKind {
    pub fn code(self) -> u8 {
        match self {
            MessageKind::Representation => 1,
            MessageKind::Gradient => 2,
            MessageKind::Other(c) => c,
        }
    }

    pub fn from_code(c: u8) -> Self {
        match c {
            1 => MessageKind::Representation,
            2 => MessageKind::Gradient,
            c => MessageKind::Other(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub round: u32,
    pub direction: Direction,
    /// 1-based party id of the sender (upstream) or recipient (downstream).
    pub party: u8,
    pub kind: MessageKind,
    pub payload: Array2<f64>,
}

/// SHA-256 of a sequence of `f64` values in little-endian byte order.
pub fn hash_values(values: impl IntoIterator<Item = f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let (rows, cols) = self.payload.dim();
        let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 8);
        out.extend_from_slice(&self.round.to_le_bytes());
        out.push(self.direction.code());
        out.push(self.party);
        out.push(self.kind.code());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
        for v in self.payload.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Data(format!("message of {} bytes is shorter than its header", bytes.len())));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let round = u32_at(0);
        let direction = Direction::from_code(bytes[4])?;
        let party = bytes[5];
        let kind = MessageKind::from_code(bytes[6]);
        let rows = u32_at(7) as usize;
        let cols = u32_at(11) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != rows * cols * 8 {
            return Err(Error::Data(format!(
                "message body has {} bytes, header declares {rows}x{cols}",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let payload = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        Ok(Self {
            round,
            direction,
            party,
            kind,
            payload,
        })
    }

    pub fn content_hash(&self) -> String {
        hash_values(self.payload.iter().copied())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: u32,
    pub direction: Direction,
    pub party: u8,
    pub kind: MessageKind,
    pub shape: [usize; 2],
    /// Hex SHA-256 of the payload values.
    pub hash: String,
}

/// Append-only record of every message sent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TransportLog {
    records: Vec<LogRecord>,
}

impl TransportLog {
    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, m: &Message) {
        self.records.push(LogRecord {
            round: m.round,
            direction: m.direction,
            party: m.party,
            kind: m.kind,
            shape: [m.payload.nrows(), m.payload.ncols()],
            hash: m.content_hash(),
        });
    }
}

/// Reliable FIFO queues for each (direction, party) pair.
#[derive(Debug, Clone)]
pub struct Transport {
    upstream: Vec<VecDeque<Vec<u8>>>,
    downstream: Vec<VecDeque<Vec<u8>>>,
    log: TransportLog,
}

impl Transport {
    pub fn new(parties: usize) -> Self {
        Self {
            upstream: vec![VecDeque::new(); parties],
            downstream: vec![VecDeque::new(); parties],
            log: TransportLog::default(),
        }
    }

    pub fn num_parties(&self) -> usize {
        self.upstream.len()
    }

    fn queue(&mut self, direction: Direction, party: u8) -> Result<&mut VecDeque<Vec<u8>>> {
        let queues = match direction {
            Direction::Upstream => &mut self.upstream,
            Direction::Downstream => &mut self.downstream,
        };
        let k = queues.len();
        queues
            .get_mut((party as usize).wrapping_sub(1))
            .ok_or_else(|| Error::Training(format!("party {party} is not connected ({k} parties)")))
    }

    pub fn send(&mut self, message: Message) -> Result<()> {
        let bytes = message.encode();
        self.queue(message.direction, message.party)?.push_back(bytes);
        self.log.push(&message);
        Ok(())
    }

    /// Next message on the `(direction, party)` channel; absence is an error.
    pub fn recv(&mut self, direction: Direction, party: u8) -> Result<Message> {
        let bytes = self
            .queue(direction, party)?
            .pop_front()
            .ok_or_else(|| Error::Training(format!("missing {direction:?} message for party {party}")))?;
        Message::decode(&bytes)
    }

    pub fn pending(&self) -> usize {
        self.upstream.iter().chain(&self.downstream).map(|q| q.len()).sum()
    }

    pub fn log(&self) -> &TransportLog {
        &self.log
    }

    pub fn into_log(self) -> TransportLog {
        self.log
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn msg(round: u32, party: u8, payload: Array2<f64>) -> Message {
        Message {
            round,
            direction: Direction::Upstream,
            party,
            kind: MessageKind::Representation,
            payload,
        }
    }

    #[test]
    fn header_layout_is_little_endian() {
        let m = msg(0x01020304, 2, Array2::from_elem((1, 1), 1.0));
        let b = m.encode();
        assert_eq!(&b[..4], &[4, 3, 2, 1]);
        assert_eq!(&b[4..7], &[0, 2, 1]);
        assert_eq!(&b[7..11], &[1, 0, 0, 0]);
        assert_eq!(&b[11..15], &[1, 0, 0, 0]);
        assert_eq!(&b[15..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn fifo_per_channel_and_missing_message() {
        let mut t = Transport::new(2);
        t.send(msg(0, 1, Array2::zeros((1, 2)))).unwrap();
        t.send(msg(1, 1, Array2::ones((1, 2)))).unwrap();
        assert_eq!(t.recv(Direction::Upstream, 1).unwrap().round, 0);
        assert_eq!(t.recv(Direction::Upstream, 1).unwrap().round, 1);
        assert!(t.recv(Direction::Upstream, 1).is_err());
        assert!(t.recv(Direction::Upstream, 2).is_err());
        assert!(t.send(msg(0, 3, Array2::zeros((1, 1)))).is_err());
        assert_eq!(t.log().len(), 2);
    }

    #[test]
    fn truncated_messages_are_rejected() {
        let b = msg(0, 1, Array2::zeros((2, 2))).encode();
        assert!(Message::decode(&b[..10]).is_err());
        assert!(Message::decode(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn wire_round_trip_is_bit_exact(
            round in any::<u32>(),
            party in 1u8..=255,
            down in any::<bool>(),
            kind in any::<u8>(),
            rows in 0usize..6,
            cols in 0usize..6,
            bits in proptest::collection::vec(any::<u64>(), 36),
        ) {
            let payload = Array2::from_shape_fn((rows, cols), |(i, j)| f64::from_bits(bits[i * 6 + j]));
            let m = Message {
                round,
                direction: if down { Direction::Downstream } else { Direction::Upstream },
                party,
                kind: MessageKind::from_code(kind),
                payload,
            };
            let back = Message::decode(&m.encode()).unwrap();
            prop_assert_eq!(back.encode(), m.encode());
            prop_assert_eq!(back.content_hash(), m.content_hash());
        }
    }
}
