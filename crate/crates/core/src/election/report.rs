//! Versioned JSON transcript of one election.
//!
//! Schema (version 1): `config`, `warnings`, `published` (candidate and dealer
//! keys, refund key, threshold), `voters` (signature and shuffle keys),
//! `shuffle` (session id and every hop's wire bytes in hex), `screening`,
//! `vote_script` (hex), `p2sh_address`, `vct`, `refund`, `claims`, `events`,
//! `outcome`, `balances` and the final `ledger` export. Scripts and byte
//! strings are hex; amounts are integers.

use serde::Serialize;

use super::config::ElectionConfig;
use super::roles::{ClaimAttempt, PresignedRefund, PublishedBundle, Screening};
use crate::circle_shuffle::HopRecord;
use crate::crypto::PublicKey;
use crate::ledger::{LedgerExport, Transaction};
use crate::script::Script;
use crate::vote::CandidateId;

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Winner { candidate: CandidateId },
    Refund,
    Aborted { reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Event {
    pub height: u64,
    pub step: String,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VoterRecord {
    pub index: usize,
    pub key: PublicKey,
    pub shuffle_key: PublicKey,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ShuffleTranscript {
    pub session_id: String,
    pub hops: Vec<HopRecord>,
}

/// Whether a claim would be accepted against the ledger right after the
/// commitment confirmed, and what happened when it was actually submitted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClaimRecord {
    #[serde(flatten)]
    pub attempt: ClaimAttempt,
    /// `None` below quorum; otherwise acceptance against the post-commit
    /// ledger, independent of other claims.
    pub valid: Option<bool>,
    /// Ledger verdict on the real submission.
    pub submitted: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Accepted,
    Rejected { reason: String },
}

impl ClaimRecord {
    pub fn succeeded(&self) -> bool {
        self.valid == Some(true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Balance {
    pub party: String,
    pub key: PublicKey,
    pub amount: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ElectionReport {
    pub version: u32,
    pub config: ElectionConfig,
    pub warnings: Vec<String>,
    pub published: PublishedBundle,
    pub voters: Vec<VoterRecord>,
    pub shuffle: Option<ShuffleTranscript>,
    pub screening: Vec<Screening>,
    pub vote_script: Option<Script>,
    pub p2sh_address: Option<String>,
    pub vct: Option<Transaction>,
    pub refund: Option<PresignedRefund>,
    pub claims: Vec<ClaimRecord>,
    pub events: Vec<Event>,
    pub outcome: Outcome,
    pub balances: Vec<Balance>,
    pub ledger: LedgerExport,
}

impl ElectionReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn winner(&self) -> Option<CandidateId> {
        match self.outcome {
            Outcome::Winner { candidate } => Some(candidate),
            _ => None,
        }
    }

    pub fn balance_of(&self, party: &str) -> Option<u64> {
        self.balances.iter().find(|b| b.party == party).map(|b| b.amount)
    }

    /// One line summary, e.g. `winner: B`.
    pub fn summary(&self) -> String {
        match &self.outcome {
            Outcome::Winner { candidate } => format!("winner: {candidate}"),
            Outcome::Refund => "refund: no candidate reached the threshold".into(),
            Outcome::Aborted { reason } => format!("aborted: {reason}"),
        }
    }
}
