use std::collections::BTreeSet;

use rand::{CryptoRng, RngCore};
use serde::Serialize;

use super::config::{ElectionConfig, RefundVariant};
use super::ElectionError;
use crate::crypto::{keygen, sign, KeyPair, PublicKey, SecretKey, Signature};
use crate::ledger::{tx_digest, OutPoint, Transaction, TxIn, TxOut};
use crate::script::{self, p2pk_locking, p2sh_locking, CandidateStatement, RefundStatement, VoteScript, VoteScriptSpec};
use crate::shamir::{split_secret, reconstruct_secret, PrimeField, Share, SharingConfig};
use crate::vote::{
    compose_vote, encrypt_vote, issue_eligibility, open_submission, seal_submission, try_open, CandidateId,
    EligibilityKey, EncryptedVote, VerifierKey, ENCRYPTED_VOTE_LEN,
};

/// What the dealer makes public after setup.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PublishedBundle {
    pub candidates: Vec<PublishedCandidate>,
    /// `S = k × G`, the dealer's refund key.
    pub refund_key: PublicKey,
    pub threshold: usize,
    pub voters: usize,
    /// Shamir field modulus, big-endian hex.
    pub field_modulus: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PublishedCandidate {
    pub id: CandidateId,
    /// `M_C`, the candidate's own key.
    pub candidate_key: PublicKey,
    /// `P_C = k_C × G`, assigned by the dealer.
    pub dealer_key: PublicKey,
}

/// Sent to one voter over the private channel: a share of every `k_C` and
/// an eligibility credential.
#[derive(Clone, Debug)]
pub struct VoterKit {
    pub shares: Vec<(CandidateId, Share)>,
    pub eligibility: EligibilityKey,
}

pub struct Dealer {
    sharing: SharingConfig,
    assigned: Vec<(CandidateId, KeyPair)>,
    refund: KeyPair,
    verifiers: Vec<VerifierKey>,
    used: Vec<bool>,
}

/// Draws `(P_C, k_C)` per candidate, splits every `k_C` with an independent
/// polynomial over the curve order and issues eligibility credentials.
pub fn dealer_setup<R: RngCore + CryptoRng>(
    cfg: &ElectionConfig,
    candidates: &[(CandidateId, PublicKey)],
    rng: &mut R,
) -> Result<(Dealer, PublishedBundle, Vec<VoterKit>), ElectionError> {
    let field = PrimeField::curve_order();
    let sharing = SharingConfig::new(cfg.threshold, cfg.voters, field.clone())?;
    let mut assigned = Vec::new();
    let mut per_candidate_shares = Vec::new();
    for (id, _) in candidates {
        let k = field.random_nonzero(rng);
        let secret = SecretKey::from_bytes(&k.to_bytes_be(32)).expect("nonzero scalar below the order");
        per_candidate_shares.push(split_secret(&k, &sharing, rng)?);
        assigned.push((*id, KeyPair::from_secret(secret)));
    }
    let refund = keygen(rng);
    let (keys, verifiers): (Vec<_>, Vec<_>) = (0..cfg.voters)
        .map(|i| issue_eligibility(cfg.eligibility, i, rng))
        .unzip();

    let kits = keys
        .into_iter()
        .enumerate()
        .map(|(i, eligibility)| VoterKit {
            shares: candidates
                .iter()
                .zip(&per_candidate_shares)
                .map(|((id, _), shares)| (*id, shares[i].clone()))
                .collect(),
            eligibility,
        })
        .collect();
    let published = PublishedBundle {
        candidates: candidates
            .iter()
            .zip(&assigned)
            .map(|((id, m), (_, p))| PublishedCandidate {
                id: *id,
                candidate_key: *m,
                dealer_key: p.public(),
            })
            .collect(),
        refund_key: refund.public(),
        threshold: cfg.threshold,
        voters: cfg.voters,
        field_modulus: field.modulus().to_str_radix(16),
    };
    let dealer = Dealer {
        sharing,
        used: vec![false; verifiers.len()],
        verifiers,
        assigned,
        refund,
    };
    Ok((dealer, published, kits))
}

/// Result of screening one shuffled submission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Screening {
    pub position: usize,
    pub accepted: bool,
}

/// Refund transaction signed by the dealer, held by the voters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct PresignedRefund {
    pub tx: Transaction,
    pub dealer_signature: String,
    #[serde(skip)]
    signature: Signature,
}

impl PresignedRefund {
    pub fn signature(&self) -> &Signature {
        &self.signature
    }
}

impl Dealer {
    pub fn field(&self) -> &PrimeField {
        self.sharing.field()
    }

    pub fn sharing(&self) -> &SharingConfig {
        &self.sharing
    }

    pub fn refund_key(&self) -> PublicKey {
        self.refund.public()
    }

    /// Opens each shuffled submission with a not-yet-used verifier key; a
    /// submission no key opens is excluded.
    pub fn screen(&mut self, shuffled: &[Vec<u8>]) -> (Vec<EncryptedVote>, Vec<Screening>) {
        let mut accepted = Vec::new();
        let mut log = Vec::new();
        for (position, item) in shuffled.iter().enumerate() {
            let opened = self
                .verifiers
                .iter()
                .zip(self.used.iter_mut())
                .filter(|(_, used)| !**used)
                .find_map(|(vk, used)| open_submission(item, vk).map(|ev| (ev, used)));
            let ok = match opened {
                Some((ev, used)) => {
                    *used = true;
                    accepted.push(ev);
                    true
                }
                None => false,
            };
            log.push(Screening { position, accepted: ok });
        }
        (accepted, log)
    }

    /// Voting script over `votes` with the refund statement at
    /// `refund_height`.
    pub fn build_script(
        &self,
        cfg: &ElectionConfig,
        published: &PublishedBundle,
        votes: &[EncryptedVote],
        voter_keys: &[PublicKey],
        refund_height: u64,
    ) -> Result<VoteScript, ElectionError> {
        if votes.is_empty() {
            return Err(ElectionError::NoEligibleVotes);
        }
        let vote_bytes: Vec<Vec<u8>> = votes.iter().map(EncryptedVote::to_bytes).collect();
        let spec = VoteScriptSpec {
            candidates: published
                .candidates
                .iter()
                .map(|c| CandidateStatement {
                    candidate_key: c.candidate_key,
                    dealer_key: c.dealer_key,
                    votes: vote_bytes.clone(),
                })
                .collect(),
            refund: RefundStatement {
                dealer_key: self.refund.public(),
                cosigners: match cfg.refund {
                    RefundVariant::DealerOnly => Vec::new(),
                    RefundVariant::DealerAndVoter => voter_keys.to_vec(),
                },
                locktime: refund_height,
            },
            slot_len: ENCRYPTED_VOTE_LEN,
            max_script_len: cfg.max_script_len,
        };
        Ok(script::build_vote_script(&spec)?)
    }

    /// The commitment transaction skeleton: one input per voter, one output
    /// to the script's P2SH address.
    pub fn build_vct(&self, funding: &[OutPoint], vote_script: &VoteScript, amount: u64) -> Transaction {
        let inputs = funding
            .iter()
            .enumerate()
            .map(|(i, op)| TxIn {
                prevout: *op,
                unlocking: script::Script::new(),
                signers: vec![format!("voter-{i}")],
            })
            .collect();
        Transaction::new(
            inputs,
            vec![TxOut {
                amount,
                locking: p2sh_locking(vote_script.script()),
            }],
            0,
        )
    }

    /// Pays the locked output back to the voters in equal parts, valid from
    /// `locktime`, and signs it with the refund key.
    pub fn presign_refund(
        &self,
        vct: &Transaction,
        voter_keys: &[PublicKey],
        mining_fee: u64,
        locktime: u64,
    ) -> PresignedRefund {
        let per_voter = (vct.outputs[0].amount - mining_fee) / voter_keys.len() as u64;
        let tx = Transaction::new(
            vec![TxIn {
                prevout: vct.outpoint(0),
                unlocking: script::Script::new(),
                signers: vec!["dealer".into()],
            }],
            voter_keys
                .iter()
                .map(|k| TxOut {
                    amount: per_voter,
                    locking: p2pk_locking(k),
                })
                .collect(),
            locktime,
        );
        let signature = sign(self.refund.secret(), &tx_digest(&tx, 0));
        PresignedRefund {
            dealer_signature: hex::encode(signature.to_bytes()),
            signature,
            tx,
        }
    }

    /// `P_C` for candidate `id`.
    pub fn assigned_public(&self, id: CandidateId) -> Option<PublicKey> {
        self.assigned.iter().find(|(c, _)| *c == id).map(|(_, k)| k.public())
    }

    #[cfg(test)]
    pub(crate) fn assigned_secret(&self, id: CandidateId) -> Option<&SecretKey> {
        self.assigned.iter().find(|(c, _)| *c == id).map(|(_, k)| k.secret())
    }
}

pub struct Voter {
    index: usize,
    keypair: KeyPair,
    shuffle_keypair: KeyPair,
    shares: Vec<(CandidateId, Share)>,
    eligibility: EligibilityKey,
    funding: OutPoint,
    choice: Option<CandidateId>,
    submitted: Option<EncryptedVote>,
}

impl Voter {
    pub fn new(index: usize, keypair: KeyPair, shuffle_keypair: KeyPair, funding: OutPoint, kit: VoterKit) -> Self {
        Self {
            index,
            keypair,
            shuffle_keypair,
            shares: kit.shares,
            eligibility: kit.eligibility,
            funding,
            choice: None,
            submitted: None,
        }
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn shuffle_keypair(&self) -> &KeyPair {
        &self.shuffle_keypair
    }

    pub fn funding(&self) -> OutPoint {
        self.funding
    }

    pub fn choice(&self) -> Option<CandidateId> {
        self.choice
    }

    pub fn submitted(&self) -> Option<&EncryptedVote> {
        self.submitted.as_ref()
    }

    pub fn share_for(&self, id: CandidateId) -> Option<&Share> {
        self.shares.iter().find(|(c, _)| *c == id).map(|(_, s)| s)
    }

    /// Composes `Enc_{M_C}(k_{C,i} || Id_C)` and seals it with the
    /// eligibility credential; the result is this voter's shuffle item.
    pub fn submit<R: RngCore + CryptoRng>(
        &mut self,
        choice: CandidateId,
        candidate_key: &PublicKey,
        rng: &mut R,
    ) -> Result<Vec<u8>, ElectionError> {
        if self.choice.is_some() {
            return Err(ElectionError::DoubleVote { voter: self.index });
        }
        let share = self
            .share_for(choice)
            .ok_or_else(|| ElectionError::UnknownCandidate(choice.to_string()))?
            .clone();
        let ev = encrypt_vote(&compose_vote(share, choice)?, candidate_key, rng);
        let sealed = seal_submission(&ev, &self.eligibility, rng)?;
        self.choice = Some(choice);
        self.submitted = Some(ev);
        Ok(sealed)
    }

    /// Checks the commitment before signing: it pays `expected_amount` to
    /// the script's address, spends this voter's funding, and every
    /// candidate statement carries this voter's vote exactly once, the
    /// expected number of votes and otherwise only zero padding.
    pub fn verify_commitment(
        &self,
        vct: &Transaction,
        vote_script: &VoteScript,
        published: &PublishedBundle,
        expected_amount: u64,
        expected_votes: usize,
    ) -> Result<(), String> {
        let ev = self.submitted.as_ref().ok_or("no vote submitted")?.to_bytes();
        let [out] = vct.outputs.as_slice() else {
            return Err(format!("expected one output, found {}", vct.outputs.len()));
        };
        if out.locking != p2sh_locking(vote_script.script()) {
            return Err("output does not pay to the voting script".into());
        }
        if out.amount != expected_amount {
            return Err(format!("output amount {} differs from {expected_amount}", out.amount));
        }
        if vct.inputs.iter().filter(|i| i.prevout == self.funding).count() != 1 {
            return Err("own funding is not spent exactly once".into());
        }
        for c in &published.candidates {
            let arms = vote_script.candidate_arms(&c.candidate_key, &c.dealer_key);
            if arms.is_empty() {
                return Err(format!("no statement for candidate {}", c.id));
            }
            let votes = vote_script.votes_in(&arms);
            if votes.len() != expected_votes {
                return Err(format!(
                    "candidate {} statements carry {} non-padding slots, expected {expected_votes}",
                    c.id,
                    votes.len()
                ));
            }
            if votes.iter().filter(|v| **v == ev).count() != 1 {
                return Err(format!("own vote does not appear exactly once for candidate {}", c.id));
            }
        }
        Ok(())
    }

    pub fn sign_input(&self, tx: &Transaction, input: usize) -> Signature {
        sign(self.keypair.secret(), &tx_digest(tx, input))
    }
}

/// Outcome of a candidate trying to claim the locked output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClaimAttempt {
    pub candidate: CandidateId,
    /// Distinct shares the candidate could open.
    pub shares_opened: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx: Option<Transaction>,
}

pub struct Candidate {
    id: CandidateId,
    keypair: KeyPair,
    opened: Vec<Share>,
}

impl Candidate {
    pub fn new(id: CandidateId, keypair: KeyPair) -> Self {
        Self {
            id,
            keypair,
            opened: Vec::new(),
        }
    }

    pub fn id(&self) -> CandidateId {
        self.id
    }

    pub fn public(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn opened(&self) -> &[Share] {
        &self.opened
    }

    /// Trial-opens every metadata slot of this candidate's statements and
    /// keeps shares with distinct x.
    pub fn open_votes(&mut self, vote_script: &VoteScript, dealer_key: &PublicKey, field: &PrimeField) -> Result<usize, ElectionError> {
        let arms = vote_script.candidate_arms(&self.keypair.public(), dealer_key);
        let mut xs = BTreeSet::new();
        self.opened.clear();
        for slot in vote_script.votes_in(&arms) {
            let Ok(ev) = EncryptedVote::from_bytes(&slot) else { continue };
            if let Some(c) = try_open(&ev, self.keypair.secret(), self.id, field)? {
                if xs.insert(c.share().x().value().clone()) {
                    self.opened.push(c.share().clone());
                }
            }
        }
        Ok(self.opened.len())
    }

    /// With at least `t + 1` opened shares, reconstructs `k_C` and builds a
    /// transaction paying the locked output to `M_C`. `None` below quorum.
    pub fn claim(
        &self,
        vote_script: &VoteScript,
        dealer_key: &PublicKey,
        sharing: &SharingConfig,
        vct: &Transaction,
        mining_fee: u64,
    ) -> Result<ClaimAttempt, ElectionError> {
        let mut attempt = ClaimAttempt {
            candidate: self.id,
            shares_opened: self.opened.len(),
            tx: None,
        };
        if self.opened.len() < sharing.quorum() {
            return Ok(attempt);
        }
        let k = reconstruct_secret(&self.opened, sharing)?;
        let k = SecretKey::from_bytes(&k.to_bytes_be(32)).map_err(|_| ElectionError::Reconstruction(self.id))?;
        let arm = *vote_script
            .candidate_arms(&self.keypair.public(), dealer_key)
            .first()
            .ok_or(ElectionError::Reconstruction(self.id))?;
        let mut tx = Transaction::new(
            vec![TxIn {
                prevout: vct.outpoint(0),
                unlocking: script::Script::new(),
                signers: vec![format!("candidate-{}", self.id)],
            }],
            vec![TxOut {
                amount: vct.outputs[0].amount - mining_fee,
                locking: p2pk_locking(&self.keypair.public()),
            }],
            0,
        );
        let digest = tx_digest(&tx, 0);
        let (sig_m, sig_p) = (sign(self.keypair.secret(), &digest), sign(&k, &digest));
        tx.inputs[0].unlocking = vote_script.unlock_candidate(arm, &sig_m, &sig_p);
        attempt.tx = Some(tx);
        Ok(attempt)
    }
}
