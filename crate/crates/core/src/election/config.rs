use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::ElectionError;
use crate::crypto::{self, keygen};
use crate::script::{self, CandidateStatement, RefundStatement, VoteScriptSpec, DEFAULT_MAX_SCRIPT_LEN};
use crate::vote::{CandidateId, EligibilityVariant, ENCRYPTED_VOTE_LEN};

/// Which keys unlock the timelocked refund statement.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefundVariant {
    /// The dealer's refund key alone.
    DealerOnly,
    /// The dealer's refund key and any one voter.
    #[default]
    DealerAndVoter,
}

/// Election parameters as read from a JSON config file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectionConfig {
    /// Number of voters `n`.
    pub voters: usize,
    /// `t`: a candidate needs `t + 1` votes to unlock the funds.
    pub threshold: usize,
    #[serde(default = "default_candidates")]
    pub candidates: Vec<String>,
    /// Per-voter fee `x`.
    pub fee: u64,
    /// Blocks `ΔT` after commitment before the refund becomes valid.
    pub locktime: u64,
    /// Candidate chosen by each voter, in voter order.
    pub votes: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub eligibility: EligibilityVariant,
    #[serde(default)]
    pub refund: RefundVariant,
    /// Minimum fee the simulated ledger demands per transaction.
    #[serde(default)]
    pub mining_fee: u64,
    #[serde(default = "default_max_script_len")]
    pub max_script_len: usize,
}

fn default_candidates() -> Vec<String> {
    vec!["A".into(), "B".into()]
}

fn default_max_script_len() -> usize {
    DEFAULT_MAX_SCRIPT_LEN
}

impl ElectionConfig {
    /// A config with defaults for everything but the essentials.
    pub fn new(threshold: usize, fee: u64, locktime: u64, votes: &[&str]) -> Self {
        Self {
            voters: votes.len(),
            threshold,
            candidates: default_candidates(),
            fee,
            locktime,
            votes: votes.iter().map(|v| v.to_string()).collect(),
            seed: 0,
            eligibility: EligibilityVariant::default(),
            refund: RefundVariant::default(),
            mining_fee: 0,
            max_script_len: DEFAULT_MAX_SCRIPT_LEN,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ElectionError> {
        serde_json::from_str(text).map_err(|e| ElectionError::Config(e.to_string()))
    }

    pub fn candidate_ids(&self) -> Result<Vec<CandidateId>, ElectionError> {
        self.candidates
            .iter()
            .map(|c| CandidateId::new(c).map_err(|e| ElectionError::Config(format!("candidate {c:?}: {e}"))))
            .collect()
    }

    /// Per-voter choices as indices into `candidates`.
    pub fn choices(&self) -> Result<Vec<usize>, ElectionError> {
        self.votes
            .iter()
            .map(|v| {
                self.candidates
                    .iter()
                    .position(|c| c == v)
                    .ok_or_else(|| ElectionError::Config(format!("vote for unknown candidate {v:?}")))
            })
            .collect()
    }

    /// The locked amount `n·x` less the commitment's mining fee.
    pub fn locked_amount(&self) -> u64 {
        self.fee * self.voters as u64 - self.mining_fee
    }

    /// Checks the config; returns advisory warnings.
    pub fn validate(&self) -> Result<Vec<String>, ElectionError> {
        let bad = |m: String| Err(ElectionError::Config(m));
        if self.voters == 0 {
            return bad("at least one voter is required".into());
        }
        if self.threshold + 1 > self.voters {
            return bad(format!(
                "threshold {} needs {} votes but there are {} voters",
                self.threshold,
                self.threshold + 1,
                self.voters
            ));
        }
        if self.fee == 0 {
            return bad("fee must be positive".into());
        }
        if self.locktime == 0 {
            return bad("locktime must be positive".into());
        }
        if self.candidates.len() < 2 {
            return bad("at least two candidates are required".into());
        }
        let ids = self.candidate_ids()?;
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return bad(format!("duplicate candidate {id}"));
            }
        }
        if self.votes.len() != self.voters {
            return bad(format!("{} votes listed for {} voters", self.votes.len(), self.voters));
        }
        self.choices()?;
        let total = self
            .fee
            .checked_mul(self.voters as u64)
            .ok_or_else(|| ElectionError::Config("n·x overflows".into()))?;
        // Commitment, then a claim or refund, each pay the mining fee.
        if total.saturating_sub(self.mining_fee.saturating_mul(2)) < self.voters as u64 {
            return bad(format!("mining fee {} leaves less than one unit per voter of n·x = {total}", self.mining_fee));
        }
        self.check_script_size(ids.len())?;

        let mut warnings = Vec::new();
        if 2 * (self.threshold + 1) <= self.voters {
            warnings.push(format!(
                "t+1 = {} is not a majority of {} voters; several candidates may reach the threshold and the first valid claim wins",
                self.threshold + 1,
                self.voters
            ));
        }
        Ok(warnings)
    }

    /// Builds a throwaway script of the final shape to check its size.
    fn check_script_size(&self, candidates: usize) -> Result<(), ElectionError> {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let key = keygen(&mut rng).public();
        let spec = VoteScriptSpec {
            candidates: (0..candidates)
                .map(|_| CandidateStatement {
                    candidate_key: key,
                    dealer_key: key,
                    votes: vec![vec![1u8; ENCRYPTED_VOTE_LEN]; self.voters],
                })
                .collect(),
            refund: RefundStatement {
                dealer_key: key,
                cosigners: match self.refund {
                    RefundVariant::DealerOnly => Vec::new(),
                    RefundVariant::DealerAndVoter => vec![key; self.voters],
                },
                locktime: self.locktime,
            },
            slot_len: ENCRYPTED_VOTE_LEN,
            max_script_len: self.max_script_len,
        };
        script::build_vote_script(&spec)
            .map(|_| ())
            .map_err(|e| ElectionError::Config(format!("voting script would not fit: {e}")))
    }
}

/// Per-role randomness derived from one root seed by label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SeedTree {
    root: u64,
}

impl SeedTree {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn seed(&self, label: &str) -> [u8; 32] {
        crypto::sha256(&[b"sharvot/seed/".as_slice(), &self.root.to_le_bytes(), label.as_bytes()].concat())
    }

    pub fn rng(&self, label: &str) -> ChaCha20Rng {
        ChaCha20Rng::from_seed(self.seed(label))
    }

    pub fn seed_u64(&self, label: &str) -> u64 {
        u64::from_le_bytes(self.seed(label)[..8].try_into().expect("8 bytes"))
    }
}
