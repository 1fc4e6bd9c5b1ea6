//! Messages exchanged between clients and the server, and the transcript
//! that records them.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RoundMessage {
    /// `v − z − α` uploaded by a client after its layer update.
    ClientVector { client: usize, layer: usize, vec: Vec<f64> },
    GlobalBroadcast { layer: usize, w: Vec<f64> },
    LossReport { client: usize, value: f64 },
    LossSumBroadcast { value: f64 },
}

impl RoundMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            RoundMessage::ClientVector { .. } => "client_vector",
            RoundMessage::GlobalBroadcast { .. } => "global_broadcast",
            RoundMessage::LossReport { .. } => "loss_report",
            RoundMessage::LossSumBroadcast { .. } => "loss_sum_broadcast",
        }
    }

    pub fn layer(&self) -> Option<usize> {
        match self {
            RoundMessage::ClientVector { layer, .. } | RoundMessage::GlobalBroadcast { layer, .. } => {
                Some(*layer)
            }
            _ => None,
        }
    }

    pub fn client(&self) -> Option<usize> {
        match self {
            RoundMessage::ClientVector { client, .. } | RoundMessage::LossReport { client, .. } => {
                Some(*client)
            }
            _ => None,
        }
    }

    pub fn payload(&self) -> Vec<f64> {
        match self {
            RoundMessage::ClientVector { vec, .. } => vec.clone(),
            RoundMessage::GlobalBroadcast { w, .. } => w.clone(),
            RoundMessage::LossReport { value, .. } | RoundMessage::LossSumBroadcast { value } => {
                vec![*value]
            }
        }
    }

    /// First 16 hex digits of the SHA-256 of the little-endian payload.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.payload() {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub round: usize,
    pub epoch: usize,
    pub message: RoundMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MessageCounts {
    pub client_vectors: usize,
    pub global_broadcasts: usize,
    pub loss_reports: usize,
    pub loss_sum_broadcasts: usize,
}

impl MessageCounts {
    pub fn expected(active: usize, depth: usize) -> Self {
        MessageCounts {
            client_vectors: active * depth,
            global_broadcasts: depth,
            loss_reports: active,
            loss_sum_broadcasts: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, round: usize, epoch: usize, message: RoundMessage) {
        self.entries.push(TranscriptEntry {
            round,
            epoch,
            message,
        });
    }

    pub fn extend(&mut self, other: Transcript) {
        self.entries.extend(other.entries);
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self, round: usize, epoch: usize) -> MessageCounts {
        let mut c = MessageCounts::default();
        for e in self.entries.iter().filter(|e| e.round == round && e.epoch == epoch) {
            match e.message {
                RoundMessage::ClientVector { .. } => c.client_vectors += 1,
                RoundMessage::GlobalBroadcast { .. } => c.global_broadcasts += 1,
                RoundMessage::LossReport { .. } => c.loss_reports += 1,
                RoundMessage::LossSumBroadcast { .. } => c.loss_sum_broadcasts += 1,
            }
        }
        c
    }

    pub fn check_counts(&self, round: usize, epoch: usize, active: usize, depth: usize) -> Result<()> {
        let got = self.counts(round, epoch);
        let want = MessageCounts::expected(active, depth);
        if got != want {
            return Err(Error::ProtocolViolation(format!(
                "round {round} epoch {epoch}: expected {want:?}, got {got:?}"
            )));
        }
        Ok(())
    }

    /// One line per message:
    /// `round=R epoch=E layer=L kind=K client=C digest=D`, with `-` for
    /// fields a message does not carry.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<usize>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        for e in &self.entries {
            let _ = writeln!(
                out,
                "round={} epoch={} layer={} kind={} client={} digest={}",
                e.round,
                e.epoch,
                opt(e.message.layer()),
                e.message.kind(),
                opt(e.message.client()),
                e.message.digest()
            );
        }
        out
    }
}
