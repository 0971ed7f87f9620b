//! Vote commitments and the eligibility layer.
//!
//! A vote for candidate `C` is the voter's share of `C`'s secret followed by
//! `C`'s identifier, encrypted to `C`'s published key. Candidates find their
//! votes by trial decryption: authentication failure or a foreign identifier
//! simply means "not mine".
//!
//! Plaintext layout (72 bytes): `share.x (32) || share.y (32) || id (8)`.

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{self, Ciphertext, CryptoError, PublicKey, SecretKey, CIPHERTEXT_OVERHEAD};
use crate::shamir::{PrimeField, Share};

pub const CANDIDATE_ID_LEN: usize = 8;
pub const SHARE_COORD_LEN: usize = 32;
pub const SHARE_LEN: usize = 2 * SHARE_COORD_LEN;
pub const COMMITMENT_LEN: usize = SHARE_LEN + CANDIDATE_ID_LEN;
pub const ENCRYPTED_VOTE_LEN: usize = COMMITMENT_LEN + CIPHERTEXT_OVERHEAD;
/// Integrity suffix appended to a submission before eligibility wrapping.
pub const SUBMISSION_CHECK_LEN: usize = 8;
pub const SUBMISSION_PLAINTEXT_LEN: usize = ENCRYPTED_VOTE_LEN + SUBMISSION_CHECK_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VoteError {
    #[error("candidate id must be 1..=8 printable ASCII bytes: {0:?}")]
    InvalidCandidateId(String),
    #[error("share encoding is {got} bytes, expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("decrypted plaintext is {0} bytes, expected {COMMITMENT_LEN}")]
    MalformedPlaintext(usize),
    #[error("malformed vote commitment: {0}")]
    MalformedCommitment(String),
    #[error("encrypted vote must be {ENCRYPTED_VOTE_LEN} bytes, got {0}")]
    MalformedEncryptedVote(usize),
    #[error("eligibility key does not match the submission variant")]
    VariantMismatch,
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Fixed-width candidate tag, ASCII and zero-padded to 8 bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CandidateId([u8; CANDIDATE_ID_LEN]);

impl CandidateId {
    pub fn new(name: &str) -> Result<Self, VoteError> {
        let bytes = name.as_bytes();
        if bytes.is_empty()
            || bytes.len() > CANDIDATE_ID_LEN
            || !bytes.iter().all(|b| b.is_ascii_graphic())
        {
            return Err(VoteError::InvalidCandidateId(name.to_string()));
        }
        let mut id = [0u8; CANDIDATE_ID_LEN];
        id[..bytes.len()].copy_from_slice(bytes);
        Ok(Self(id))
    }

    pub fn from_bytes(bytes: [u8; CANDIDATE_ID_LEN]) -> Result<Self, VoteError> {
        let end = bytes.iter().position(|b| *b == 0).unwrap_or(CANDIDATE_ID_LEN);
        if bytes[end..].iter().any(|b| *b != 0) {
            return Err(VoteError::InvalidCandidateId(hex::encode(bytes)));
        }
        let name = std::str::from_utf8(&bytes[..end])
            .map_err(|_| VoteError::InvalidCandidateId(hex::encode(bytes)))?;
        Self::new(name)
    }

    pub fn as_bytes(&self) -> &[u8; CANDIDATE_ID_LEN] {
        &self.0
    }

    pub fn as_str(&self) -> &str {
        let end = self.0.iter().position(|b| *b == 0).unwrap_or(CANDIDATE_ID_LEN);
        std::str::from_utf8(&self.0[..end]).expect("validated ASCII")
    }
}

impl std::fmt::Debug for CandidateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CandidateId({:?})", self.as_str())
    }
}

impl std::fmt::Display for CandidateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for CandidateId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for CandidateId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        CandidateId::new(&name).map_err(serde::de::Error::custom)
    }
}

/// `k_{C,i} || IdC`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteCommitment {
    share: Share,
    candidate: CandidateId,
}

impl VoteCommitment {
    pub fn share(&self) -> &Share {
        &self.share
    }

    pub fn candidate(&self) -> CandidateId {
        self.candidate
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.share.to_bytes();
        out.extend_from_slice(self.candidate.as_bytes());
        out
    }

    pub fn parse(bytes: &[u8], field: &PrimeField) -> Result<Self, VoteError> {
        if bytes.len() != COMMITMENT_LEN {
            return Err(VoteError::MalformedPlaintext(bytes.len()));
        }
        let share = Share::from_bytes(field, &bytes[..SHARE_LEN])
            .map_err(|e| VoteError::MalformedCommitment(e.to_string()))?;
        let candidate = CandidateId::from_bytes(bytes[SHARE_LEN..].try_into().expect("8 bytes"))?;
        Ok(Self { share, candidate })
    }
}

/// Builds `share || id`; the share's field must encode at 32 bytes per coordinate.
pub fn compose_vote(share: Share, candidate: CandidateId) -> Result<VoteCommitment, VoteError> {
    let width = share.x().field().byte_width();
    if width != SHARE_COORD_LEN {
        return Err(VoteError::WidthMismatch {
            expected: SHARE_LEN,
            got: 2 * width,
        });
    }
    Ok(VoteCommitment { share, candidate })
}

/// A vote commitment encrypted to a candidate key. Always
/// [`ENCRYPTED_VOTE_LEN`] bytes on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedVote(Ciphertext);

impl EncryptedVote {
    pub fn ciphertext(&self) -> &Ciphertext {
        &self.0
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, VoteError> {
        if bytes.len() != ENCRYPTED_VOTE_LEN {
            return Err(VoteError::MalformedEncryptedVote(bytes.len()));
        }
        Ok(Self(Ciphertext::from_bytes(bytes)?))
    }
}

pub fn encrypt_vote<R: RngCore + CryptoRng>(
    vote: &VoteCommitment,
    candidate_key: &PublicKey,
    rng: &mut R,
) -> EncryptedVote {
    EncryptedVote(crypto::encrypt(candidate_key, &vote.to_bytes(), rng))
}

/// Opens `ev` if it was addressed to `candidate_key` and names `expected`.
///
/// Wrong key and foreign identifier both give `Ok(None)`. A plaintext that
/// authenticates but has the wrong width is an error.
pub fn try_open(
    ev: &EncryptedVote,
    candidate_key: &SecretKey,
    expected: CandidateId,
    field: &PrimeField,
) -> Result<Option<VoteCommitment>, VoteError> {
    let plaintext = match crypto::decrypt(candidate_key, &ev.0) {
        Ok(p) => p,
        Err(CryptoError::AuthenticationFailed) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    if plaintext.len() != COMMITMENT_LEN {
        return Err(VoteError::MalformedPlaintext(plaintext.len()));
    }
    if &plaintext[SHARE_LEN..] != expected.as_bytes() {
        return Ok(None);
    }
    VoteCommitment::parse(&plaintext, field).map(Some)
}

/// How voters prove eligibility to the dealer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EligibilityVariant {
    /// Symmetric per-voter key; submission is `v ⊕ k_i`.
    Xor,
    /// Per-voter keypair; submission is `Enc_{Pk_i}(v)`.
    #[default]
    PublicKey,
}

/// Voter-side eligibility material.
#[derive(Clone, Debug)]
pub struct EligibilityKey {
    pub voter: usize,
    pub material: EligibilityMaterial,
}

#[derive(Clone, Debug)]
pub enum EligibilityMaterial {
    Xor(Vec<u8>),
    PublicKey(PublicKey),
}

/// Verifier-side counterpart of an [`EligibilityKey`].
#[derive(Clone, Debug)]
pub struct VerifierKey {
    pub voter: usize,
    pub material: VerifierMaterial,
}

#[derive(Clone, Debug)]
pub enum VerifierMaterial {
    Xor(Vec<u8>),
    SecretKey(SecretKey),
}

/// Issues one voter's eligibility credential and the verifier's copy.
pub fn issue_eligibility<R: RngCore + CryptoRng>(
    variant: EligibilityVariant,
    voter: usize,
    rng: &mut R,
) -> (EligibilityKey, VerifierKey) {
    match variant {
        EligibilityVariant::Xor => {
            let mut key = vec![0u8; SUBMISSION_PLAINTEXT_LEN];
            rng.fill_bytes(&mut key);
            (
                EligibilityKey {
                    voter,
                    material: EligibilityMaterial::Xor(key.clone()),
                },
                VerifierKey {
                    voter,
                    material: VerifierMaterial::Xor(key),
                },
            )
        }
        EligibilityVariant::PublicKey => {
            let kp = crypto::keygen(rng);
            (
                EligibilityKey {
                    voter,
                    material: EligibilityMaterial::PublicKey(kp.public()),
                },
                VerifierKey {
                    voter,
                    material: VerifierMaterial::SecretKey(kp.secret().clone()),
                },
            )
        }
    }
}

pub fn eligibility_wrap<R: RngCore + CryptoRng>(
    v: &[u8],
    key: &EligibilityKey,
    rng: &mut R,
) -> Result<Vec<u8>, VoteError> {
    match &key.material {
        EligibilityMaterial::Xor(k) => Ok(crypto::xor_encrypt(k, v)?),
        EligibilityMaterial::PublicKey(pk) => Ok(crypto::encrypt(pk, v, rng).to_bytes()),
    }
}

pub fn eligibility_unwrap(w: &[u8], key: &VerifierKey) -> Result<Vec<u8>, VoteError> {
    match &key.material {
        VerifierMaterial::Xor(k) => Ok(crypto::xor_encrypt(k, w)?),
        VerifierMaterial::SecretKey(sk) => Ok(crypto::decrypt_bytes(sk, w)?),
    }
}

pub fn submission_len(variant: EligibilityVariant) -> usize {
    match variant {
        EligibilityVariant::Xor => SUBMISSION_PLAINTEXT_LEN,
        EligibilityVariant::PublicKey => SUBMISSION_PLAINTEXT_LEN + CIPHERTEXT_OVERHEAD,
    }
}

fn submission_check(ev_bytes: &[u8]) -> [u8; SUBMISSION_CHECK_LEN] {
    let digest = crypto::sha256(ev_bytes);
    digest[..SUBMISSION_CHECK_LEN].try_into().expect("8 bytes")
}

/// Frames `ev` with an integrity suffix and applies the eligibility layer.
/// The suffix is what lets the verifier tell a correctly keyed XOR
/// submission from garbage.
pub fn seal_submission<R: RngCore + CryptoRng>(
    ev: &EncryptedVote,
    key: &EligibilityKey,
    rng: &mut R,
) -> Result<Vec<u8>, VoteError> {
    let mut framed = ev.to_bytes();
    let check = submission_check(&framed);
    framed.extend_from_slice(&check);
    eligibility_wrap(&framed, key, rng)
}

/// Verifier side of [`seal_submission`]: `None` unless `key` produced it.
pub fn open_submission(bytes: &[u8], key: &VerifierKey) -> Option<EncryptedVote> {
    let framed = eligibility_unwrap(bytes, key).ok()?;
    if framed.len() != SUBMISSION_PLAINTEXT_LEN {
        return None;
    }
    let (ev_bytes, check) = framed.split_at(ENCRYPTED_VOTE_LEN);
    if submission_check(ev_bytes) != check {
        return None;
    }
    EncryptedVote::from_bytes(ev_bytes).ok()
}
