//! Full election run: setup, shuffled submission, commitment and refund
//! transactions, then the candidates' claims or the refund.
//!
//! [`Election`] exposes each round so tests can stop, tamper or inspect
//! between them; [`run_election`] drives all of them.

mod config;
mod report;
mod roles;

pub use config::{ElectionConfig, RefundVariant, SeedTree};
pub use report::{
    Balance, ClaimRecord, ElectionReport, Event, Outcome, ShuffleTranscript, Verdict, VoterRecord, REPORT_VERSION,
};
pub use roles::{
    dealer_setup, Candidate, ClaimAttempt, Dealer, PresignedRefund, PublishedBundle, PublishedCandidate, Screening,
    Voter, VoterKit,
};

use thiserror::Error;

use crate::circle_shuffle::{self, Fault, MemoryTransport, ShuffleError, ShuffleSeeds};
use crate::crypto::{keygen, KeyPair, PublicKey};
use crate::ledger::{LedgerState, Reject, Transaction, TxOut};
use crate::script::{p2pk_locking, p2pk_unlocking, Opcode, Script, ScriptError, VoteScript};
use crate::shamir::ShamirError;
use crate::vote::{CandidateId, EncryptedVote, VoteError, ENCRYPTED_VOTE_LEN};

#[derive(Debug, Error)]
pub enum ElectionError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("voter {voter} has already voted")]
    DoubleVote { voter: usize },
    #[error("unknown candidate {0}")]
    UnknownCandidate(String),
    #[error("shuffle aborted: {0}")]
    Shuffle(#[from] ShuffleError),
    #[error("script: {0}")]
    Script(#[from] ScriptError),
    #[error("vote: {0}")]
    Vote(#[from] VoteError),
    #[error("secret sharing: {0}")]
    Shamir(#[from] ShamirError),
    #[error("no eligible vote reached the dealer")]
    NoEligibleVotes,
    #[error("voter {voter} has no spendable funding")]
    MissingFunding { voter: usize },
    #[error("voter {voter} refused to sign the commitment: {reason}")]
    VoterRefused { voter: usize, reason: String },
    #[error("{step} transaction rejected: {reason}")]
    Ledger { step: &'static str, reason: Reject },
    #[error("candidate {0} reconstructed an unusable key")]
    Reconstruction(CandidateId),
    #[error("no metadata slot {0}")]
    NoSuchSlot(usize),
    #[error("{0} called out of order")]
    OutOfOrder(&'static str),
}

impl ElectionError {
    pub fn is_config(&self) -> bool {
        matches!(self, ElectionError::Config(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Stage {
    Setup,
    Submitted,
    Committed,
    Claimed,
    Finished,
}

pub struct Election {
    cfg: ElectionConfig,
    warnings: Vec<String>,
    seeds: SeedTree,
    stage: Stage,
    ledger: LedgerState,
    dealer: Dealer,
    published: PublishedBundle,
    voters: Vec<Voter>,
    candidates: Vec<Candidate>,
    outsiders: Vec<Vec<u8>>,
    shuffle_faults: Vec<Fault>,
    shuffle: Option<ShuffleTranscript>,
    shuffled: Vec<Vec<u8>>,
    screening: Vec<Screening>,
    accepted: Vec<EncryptedVote>,
    vote_script: Option<VoteScript>,
    vct: Option<Transaction>,
    refund: Option<PresignedRefund>,
    refund_height: u64,
    claims: Vec<ClaimRecord>,
    events: Vec<Event>,
    outcome: Option<Outcome>,
}

impl Election {
    /// Validates `cfg`, funds every voter with `x` at genesis, generates all
    /// keys and runs the dealer's setup.
    pub fn new(cfg: ElectionConfig) -> Result<Self, ElectionError> {
        let warnings = cfg.validate()?;
        let seeds = SeedTree::new(cfg.seed);
        let ids = cfg.candidate_ids()?;
        let candidates: Vec<Candidate> = ids
            .iter()
            .map(|id| Candidate::new(*id, keygen(&mut seeds.rng(&format!("candidate/{id}")))))
            .collect();
        let voter_keys: Vec<(KeyPair, KeyPair)> = (0..cfg.voters)
            .map(|i| {
                let mut rng = seeds.rng(&format!("voter/{i}/keys"));
                (keygen(&mut rng), keygen(&mut rng))
            })
            .collect();
        let (ledger, coinbase) = LedgerState::genesis(
            voter_keys
                .iter()
                .map(|(k, _)| TxOut {
                    amount: cfg.fee,
                    locking: p2pk_locking(&k.public()),
                })
                .collect(),
        );
        let ledger = ledger.with_min_fee(cfg.mining_fee);
        let roster: Vec<(CandidateId, PublicKey)> = candidates.iter().map(|c| (c.id(), c.public())).collect();
        let (dealer, published, kits) = dealer_setup(&cfg, &roster, &mut seeds.rng("dealer"))?;
        let voters = voter_keys
            .into_iter()
            .zip(kits)
            .enumerate()
            .map(|(i, ((kp, skp), kit))| Voter::new(i, kp, skp, coinbase.outpoint(i as u32), kit))
            .collect();

        let mut election = Self {
            warnings,
            seeds,
            stage: Stage::Setup,
            ledger,
            dealer,
            published,
            voters,
            candidates,
            outsiders: Vec::new(),
            shuffle_faults: Vec::new(),
            shuffle: None,
            shuffled: Vec::new(),
            screening: Vec::new(),
            accepted: Vec::new(),
            vote_script: None,
            vct: None,
            refund: None,
            refund_height: 0,
            claims: Vec::new(),
            events: Vec::new(),
            outcome: None,
            cfg,
        };
        election.log(
            "setup",
            format!(
                "{} voters funded with {} each; dealer published P_C for {} candidates",
                election.cfg.voters,
                election.cfg.fee,
                election.candidates.len()
            ),
        );
        for w in election.warnings.clone() {
            election.log("warning", w);
        }
        Ok(election)
    }

    fn log(&mut self, step: &str, detail: impl Into<String>) {
        self.events.push(Event {
            height: self.ledger.height(),
            step: step.into(),
            detail: detail.into(),
        });
    }

    fn expect_stage(&self, stage: Stage, op: &'static str) -> Result<(), ElectionError> {
        if self.stage == stage {
            Ok(())
        } else {
            Err(ElectionError::OutOfOrder(op))
        }
    }

    /// Adds a shuffle participant outside the voter roll whose item is
    /// `submission`.
    pub fn inject_submission(&mut self, submission: Vec<u8>) -> Result<(), ElectionError> {
        self.expect_stage(Stage::Setup, "inject_submission")?;
        self.outsiders.push(submission);
        Ok(())
    }

    pub fn set_shuffle_faults(&mut self, faults: Vec<Fault>) {
        self.shuffle_faults = faults;
    }

    /// Every voter composes and seals a vote; the sealed votes go through
    /// Circle Shuffle and the dealer screens the shuffled list.
    pub fn submit_votes(&mut self) -> Result<(), ElectionError> {
        self.expect_stage(Stage::Setup, "submit_votes")?;
        let choices = self.cfg.choices()?;
        let mut items = Vec::new();
        for (voter, &choice) in self.voters.iter_mut().zip(&choices) {
            let candidate = &self.published.candidates[choice];
            let mut rng = self.seeds.rng(&format!("voter/{}/submit", voter.index()));
            items.push(voter.submit(candidate.id, &candidate.candidate_key, &mut rng)?);
        }
        let mut keypairs: Vec<KeyPair> = self.voters.iter().map(|v| v.shuffle_keypair().clone()).collect();
        for (j, item) in self.outsiders.iter().enumerate() {
            items.push(item.clone());
            keypairs.push(keygen(&mut self.seeds.rng(&format!("outsider/{j}"))));
        }
        self.log("submit", format!("{} sealed submissions enter the shuffle", items.len()));

        let seeds = ShuffleSeeds::from_root(self.seeds.seed_u64("shuffle"), items.len());
        let mut transport = MemoryTransport::with_faults(self.shuffle_faults.clone());
        let run = circle_shuffle::run_session(&items, &keypairs, &mut transport, &seeds);
        self.shuffle = Some(ShuffleTranscript {
            session_id: hex::encode(seeds.session_id()),
            hops: transport.into_log(),
        });
        let run = run?;
        self.log(
            "shuffle",
            format!("{} hops; the leader forwards {} shuffled items to the dealer", 2 * items.len(), run.order.len()),
        );

        let (accepted, screening) = self.dealer.screen(&run.order);
        for s in screening.iter().filter(|s| !s.accepted) {
            let detail = format!("position {} excluded: no unused eligibility key opens it", s.position);
            self.log("screening", detail);
        }
        self.log("screening", format!("{} of {} submissions accepted", accepted.len(), run.order.len()));
        self.shuffled = run.order;
        self.screening = screening;
        self.accepted = accepted;
        self.stage = Stage::Submitted;
        Ok(())
    }

    /// Total metadata slots in the built voting script (votes and padding).
    pub fn metadata_slot_count(&self) -> usize {
        self.vote_script
            .as_ref()
            .map(|vs| vs.statements().map(|(_, s)| s.metadata.len()).sum())
            .unwrap_or(0)
    }

    /// Builds the voting script and commitment, lets every voter verify it,
    /// optionally flips a byte of metadata slot `tamper` (counted across all
    /// statements in script order), collects the voters' signatures, has the
    /// dealer presign the refund and only then broadcasts the commitment.
    pub fn commit(&mut self, tamper: Option<usize>) -> Result<(), ElectionError> {
        self.expect_stage(Stage::Submitted, "commit")?;
        for v in &self.voters {
            if self.ledger.utxo(&v.funding()).is_none() {
                return Err(ElectionError::MissingFunding { voter: v.index() });
            }
        }
        let voter_keys: Vec<PublicKey> = self.voters.iter().map(Voter::public).collect();
        let funding: Vec<_> = self.voters.iter().map(Voter::funding).collect();
        let amount = self.cfg.locked_amount();
        self.refund_height = self.ledger.height() + self.cfg.locktime;

        let mut vs = self
            .dealer
            .build_script(&self.cfg, &self.published, &self.accepted, &voter_keys, self.refund_height)?;
        let mut vct = self.dealer.build_vct(&funding, &vs, amount);
        self.vote_script = Some(vs.clone());
        self.vct = Some(vct.clone());
        let p2sh = hex::encode(vs.address());
        self.log(
            "commit",
            format!("voting script of {} bytes, P2SH {p2sh}, output {amount}", vs.script().byte_len()),
        );

        let expected_votes = self.accepted.len();
        for v in &self.voters {
            if let Err(reason) = v.verify_commitment(&vct, &vs, &self.published, amount, expected_votes) {
                let voter = v.index();
                self.log("verify", format!("voter {voter} rejects the commitment: {reason}"));
                return Err(ElectionError::VoterRefused { voter, reason });
            }
        }
        self.log("verify", "every voter found their vote in every candidate statement");

        if let Some(slot) = tamper {
            vs = tamper_slot(&vs, slot)?;
            vct = self.dealer.build_vct(&funding, &vs, amount);
            self.vote_script = Some(vs.clone());
            self.vct = Some(vct.clone());
            self.log("tamper", format!("metadata slot {slot} altered after verification"));
        }

        for i in 0..self.voters.len() {
            let v = &self.voters[i];
            if let Err(reason) = v.verify_commitment(&vct, &vs, &self.published, amount, expected_votes) {
                self.log("sign", format!("voter {i} withholds their signature: {reason}"));
                self.log("commit", "commitment never broadcast");
                return Err(ElectionError::VoterRefused { voter: i, reason });
            }
            let sig = v.sign_input(&vct, i);
            vct.inputs[i].unlocking = p2pk_unlocking(&sig);
        }
        self.vct = Some(vct.clone());
        self.log("sign", format!("{} voter signatures collected", self.voters.len()));

        let refund = self
            .dealer
            .presign_refund(&vct, &voter_keys, self.cfg.mining_fee, self.refund_height);
        self.log(
            "refund",
            format!(
                "refund {} presigned, valid from height {}, held by every voter",
                refund.tx.txid(),
                self.refund_height
            ),
        );
        self.refund = Some(refund);

        let txid = self
            .ledger
            .submit(&vct)
            .map_err(|reason| ElectionError::Ledger { step: "commitment", reason })?;
        self.log("commit", format!("commitment {txid} accepted"));
        self.ledger.advance(1);
        self.stage = Stage::Committed;
        Ok(())
    }

    /// Every candidate opens its statements and claims if it can; claims
    /// are submitted in roster order and the first accepted one wins.
    pub fn claim(&mut self) -> Result<Option<CandidateId>, ElectionError> {
        self.expect_stage(Stage::Committed, "claim")?;
        let vs = self.vote_script.clone().expect("committed");
        let vct = self.vct.clone().expect("committed");
        let after_commit = self.ledger.clone();
        let mut winner = None;
        for i in 0..self.candidates.len() {
            let dealer_key = self.published.candidates[i].dealer_key;
            let cand = &mut self.candidates[i];
            cand.open_votes(&vs, &dealer_key, self.dealer.field())?;
            let attempt = cand.claim(&vs, &dealer_key, self.dealer.sharing(), &vct, self.cfg.mining_fee)?;
            let id = attempt.candidate;
            let (valid, submitted) = match &attempt.tx {
                None => (None, None),
                Some(tx) => {
                    let valid = after_commit.check(tx).is_ok();
                    let verdict = match self.ledger.submit(tx) {
                        Ok(_) => {
                            winner.get_or_insert(id);
                            Verdict::Accepted
                        }
                        Err(e) => Verdict::Rejected { reason: e.to_string() },
                    };
                    (Some(valid), Some(verdict))
                }
            };
            let detail = match &submitted {
                None => format!(
                    "candidate {id} opened {} shares, below t+1 = {}",
                    attempt.shares_opened,
                    self.dealer.sharing().quorum()
                ),
                Some(Verdict::Accepted) => format!("candidate {id} opened {} shares; claim accepted", attempt.shares_opened),
                Some(Verdict::Rejected { reason }) => {
                    format!("candidate {id} opened {} shares; claim rejected: {reason}", attempt.shares_opened)
                }
            };
            self.log("claim", detail);
            self.claims.push(ClaimRecord {
                attempt,
                valid,
                submitted,
            });
        }
        if let Some(id) = winner {
            self.ledger.advance(1);
            self.outcome = Some(Outcome::Winner { candidate: id });
            self.stage = Stage::Finished;
        } else {
            self.stage = Stage::Claimed;
        }
        Ok(winner)
    }

    /// The refund transaction as a voter would broadcast it: the dealer's
    /// presignature plus, in the hardened variant, voter 0's signature.
    pub fn finalized_refund(&self) -> Option<Transaction> {
        let refund = self.refund.as_ref()?;
        let vs = self.vote_script.as_ref()?;
        let mut tx = refund.tx.clone();
        let unlocking = if vs.refund().cosigner_chunks.is_empty() {
            vs.unlock_refund(Some(refund.signature()), None)
        } else {
            let sig = self.voters[0].sign_input(&tx, 0);
            tx.inputs[0].signers.push("voter-0".into());
            vs.unlock_refund(Some(refund.signature()), Some((0, &sig)))
        };
        tx.inputs[0].unlocking = unlocking;
        Some(tx)
    }

    /// Broadcasts the refund once its locktime has passed. An attempt
    /// before that height is made first and its rejection logged.
    pub fn refund(&mut self) -> Result<(), ElectionError> {
        self.expect_stage(Stage::Claimed, "refund")?;
        let tx = self.finalized_refund().expect("committed");
        if self.ledger.height() < self.refund_height {
            match self.ledger.submit(&tx) {
                Err(e) => self.log("refund", format!("early broadcast rejected: {e}")),
                Ok(_) => unreachable!("refund accepted before its locktime"),
            }
            let wait = self.refund_height - self.ledger.height();
            self.ledger.advance(wait);
        }
        let txid = self
            .ledger
            .submit(&tx)
            .map_err(|reason| ElectionError::Ledger { step: "refund", reason })?;
        self.log("refund", format!("refund {txid} accepted; voters recover their fees"));
        self.outcome = Some(Outcome::Refund);
        self.stage = Stage::Finished;
        Ok(())
    }

    fn drive(&mut self) -> Result<(), ElectionError> {
        self.submit_votes()?;
        self.commit(None)?;
        if self.claim()?.is_none() {
            self.refund()?;
        }
        Ok(())
    }

    /// Runs every remaining round; protocol failures end in an aborted
    /// outcome rather than an error.
    pub fn run(mut self) -> ElectionReport {
        if let Err(e) = self.drive() {
            self.abort(&e);
        }
        self.report()
    }

    pub fn abort(&mut self, error: &ElectionError) {
        self.log("abort", error.to_string());
        self.outcome = Some(Outcome::Aborted {
            reason: error.to_string(),
        });
        self.stage = Stage::Finished;
    }

    pub fn config(&self) -> &ElectionConfig {
        &self.cfg
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn ledger(&self) -> &LedgerState {
        &self.ledger
    }

    pub fn published(&self) -> &PublishedBundle {
        &self.published
    }

    pub fn dealer(&self) -> &Dealer {
        &self.dealer
    }

    pub fn voters(&self) -> &[Voter] {
        &self.voters
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    /// Shuffled items as the dealer received them, before screening.
    pub fn shuffled(&self) -> &[Vec<u8>] {
        &self.shuffled
    }

    pub fn accepted_votes(&self) -> &[EncryptedVote] {
        &self.accepted
    }

    pub fn screening(&self) -> &[Screening] {
        &self.screening
    }

    pub fn shuffle_transcript(&self) -> Option<&ShuffleTranscript> {
        self.shuffle.as_ref()
    }

    pub fn vote_script(&self) -> Option<&VoteScript> {
        self.vote_script.as_ref()
    }

    pub fn vct(&self) -> Option<&Transaction> {
        self.vct.as_ref()
    }

    pub fn presigned_refund(&self) -> Option<&PresignedRefund> {
        self.refund.as_ref()
    }

    pub fn refund_height(&self) -> u64 {
        self.refund_height
    }

    pub fn claims(&self) -> &[ClaimRecord] {
        &self.claims
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn outcome(&self) -> Option<&Outcome> {
        self.outcome.as_ref()
    }

    pub fn report(&self) -> ElectionReport {
        let mut balances: Vec<Balance> = self
            .voters
            .iter()
            .map(|v| Balance {
                party: format!("voter-{}", v.index()),
                key: v.public(),
                amount: self.ledger.balance(&v.public()),
            })
            .collect();
        balances.extend(self.candidates.iter().map(|c| Balance {
            party: format!("candidate-{}", c.id()),
            key: c.public(),
            amount: self.ledger.balance(&c.public()),
        }));
        balances.push(Balance {
            party: "dealer".into(),
            key: self.dealer.refund_key(),
            amount: self.ledger.balance(&self.dealer.refund_key()),
        });
        ElectionReport {
            version: REPORT_VERSION,
            config: self.cfg.clone(),
            warnings: self.warnings.clone(),
            published: self.published.clone(),
            voters: self
                .voters
                .iter()
                .map(|v| VoterRecord {
                    index: v.index(),
                    key: v.public(),
                    shuffle_key: v.shuffle_keypair().public(),
                })
                .collect(),
            shuffle: self.shuffle.clone(),
            screening: self.screening.clone(),
            vote_script: self.vote_script.as_ref().map(|vs| vs.script().clone()),
            p2sh_address: self.vote_script.as_ref().map(|vs| hex::encode(vs.address())),
            vct: self.vct.clone(),
            refund: self.refund.clone(),
            claims: self.claims.clone(),
            events: self.events.clone(),
            outcome: self.outcome.clone().unwrap_or(Outcome::Aborted {
                reason: "election not finished".into(),
            }),
            balances,
            ledger: self.ledger.export(),
        }
    }
}

/// Flips the first byte of metadata slot `slot` and re-decodes the script.
fn tamper_slot(vs: &VoteScript, slot: usize) -> Result<VoteScript, ElectionError> {
    let mut ops = vs.script().ops().to_vec();
    let target = ops
        .iter_mut()
        .filter_map(|op| match op {
            Opcode::Push(d) if d.len() == ENCRYPTED_VOTE_LEN => Some(d),
            _ => None,
        })
        .nth(slot)
        .ok_or(ElectionError::NoSuchSlot(slot))?;
    target[0] ^= 0x01;
    Ok(VoteScript::from_script(Script::from_ops(ops))?)
}

/// Validates `cfg` and runs the whole election. Only config problems are
/// errors; protocol failures are reported as an aborted outcome.
pub fn run_election(cfg: ElectionConfig) -> Result<ElectionReport, ElectionError> {
    Ok(Election::new(cfg)?.run())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shamir::{reconstruct_secret, SharingConfig};

    #[test]
    fn dealer_shares_reconstruct_and_differ_per_candidate() {
        let cfg = ElectionConfig::new(2, 10, 5, &["A", "B", "A", "B", "B"]);
        let e = Election::new(cfg).unwrap();
        let sharing: &SharingConfig = e.dealer().sharing();
        for c in &e.published().candidates {
            let shares: Vec<_> = e.voters().iter().map(|v| v.share_for(c.id).unwrap().clone()).collect();
            for window in shares.windows(3) {
                let k = reconstruct_secret(window, sharing).unwrap();
                let expected = e.dealer().assigned_secret(c.id).unwrap().to_bytes();
                assert_eq!(k.to_bytes_be(32), expected.to_vec());
            }
        }
        let [a, b] = [0, 1].map(|i| e.published().candidates[i].id);
        for v in e.voters() {
            assert_eq!(v.share_for(a).unwrap().x(), v.share_for(b).unwrap().x());
            assert_ne!(v.share_for(a).unwrap().y(), v.share_for(b).unwrap().y());
        }
    }

    #[test]
    fn double_vote_is_rejected() {
        let cfg = ElectionConfig::new(1, 10, 5, &["A", "B"]);
        let mut e = Election::new(cfg).unwrap();
        e.submit_votes().unwrap();
        let c = e.published().candidates[0].clone();
        let mut rng = e.seeds.rng("again");
        let err = e.voters[0].submit(c.id, &c.candidate_key, &mut rng).unwrap_err();
        assert!(matches!(err, ElectionError::DoubleVote { voter: 0 }));
    }

    #[test]
    fn rounds_must_run_in_order() {
        let cfg = ElectionConfig::new(1, 10, 5, &["A", "B"]);
        let mut e = Election::new(cfg).unwrap();
        assert!(matches!(e.commit(None), Err(ElectionError::OutOfOrder("commit"))));
        assert!(matches!(e.claim(), Err(ElectionError::OutOfOrder("claim"))));
        e.submit_votes().unwrap();
        assert!(matches!(e.submit_votes(), Err(ElectionError::OutOfOrder(_))));
    }

    #[test]
    fn tamper_index_out_of_range() {
        let cfg = ElectionConfig::new(1, 10, 5, &["A", "B"]);
        let mut e = Election::new(cfg).unwrap();
        e.submit_votes().unwrap();
        assert!(matches!(e.commit(Some(26)), Err(ElectionError::NoSuchSlot(26))));
    }
}
