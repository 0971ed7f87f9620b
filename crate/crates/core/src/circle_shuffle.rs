//! Circle Shuffle: a two-loop ring protocol that permutes `n` items so that
//! no participant can link an item to its owner.
//!
//! Shuffle loop: each participant decrypts the set of shuffled outputs (SSO)
//! received from its predecessor, appends its own item encrypted under its own
//! key, permutes the set and encrypts it to its successor. The last participant
//! sends the set back to the first.
//!
//! Unveil loop: each participant finds its own entry by exact ciphertext
//! match, decrypts it and replaces it in place with the item re-encrypted
//! under the leader's ephemeral key `E_D`. The leader finally opens every
//! entry with `k_D`; the resulting order is the shuffled order.
//!
//! Every message is a [`ShuffleMessage`] carrying the whole SSO encrypted to
//! the addressee.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::crypto::{self, KeyPair, PublicKey, SecretKey};

pub const SESSION_ID_LEN: usize = 16;
const MESSAGE_HEADER_LEN: usize = SESSION_ID_LEN + 2 + 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShuffleError {
    #[error("participant {participant} could not decrypt the incoming message")]
    Decryption { participant: usize },
    #[error("operation needs phase {expected:?} but session is in {actual:?}")]
    PhaseViolation { expected: Phase, actual: Phase },
    #[error("participant {participant} did not find its entry in the SSO")]
    EntryNotFound { participant: usize },
    #[error("expected hop {expected}, got {got}")]
    HopMismatch { expected: u16, got: u16 },
    #[error("message belongs to another session")]
    SessionMismatch,
    #[error("SSO has {got} entries, expected {expected}")]
    EntryCount { expected: usize, got: usize },
    #[error("items must be {expected} bytes, got {got}")]
    ItemWidth { expected: usize, got: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("invalid session setup: {0}")]
    Setup(String),
    #[error("ephemeral decryption of entry {position} failed")]
    EphemeralDecryption { position: usize },
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("no message for participant {participant} before the hop timeout")]
    Timeout { participant: usize },
    #[error("undecodable wire message: {0}")]
    Malformed(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Phase {
    Init,
    Shuffling,
    Unveiling,
    Done,
}

/// Public session parameters, published by the leader.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Roster {
    pub session_id: [u8; SESSION_ID_LEN],
    /// `E_1..E_n` in ring order.
    pub participants: Vec<PublicKey>,
    /// `E_D`.
    pub ephemeral: PublicKey,
    pub item_len: usize,
}

impl Roster {
    pub fn len(&self) -> usize {
        self.participants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.participants.is_empty()
    }
}

/// `session id (16) || hop (2, BE) || length (4, BE) || ciphertext`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleMessage {
    pub session_id: [u8; SESSION_ID_LEN],
    pub hop: u16,
    pub ciphertext: Vec<u8>,
}

impl ShuffleMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MESSAGE_HEADER_LEN + self.ciphertext.len());
        out.extend_from_slice(&self.session_id);
        out.extend_from_slice(&self.hop.to_be_bytes());
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TransportError> {
        if bytes.len() < MESSAGE_HEADER_LEN {
            return Err(TransportError::Malformed("truncated header".into()));
        }
        let session_id = bytes[..SESSION_ID_LEN].try_into().expect("16 bytes");
        let hop = u16::from_be_bytes([bytes[16], bytes[17]]);
        let len = u32::from_be_bytes(bytes[18..22].try_into().expect("4 bytes")) as usize;
        let body = &bytes[MESSAGE_HEADER_LEN..];
        if body.len() != len {
            return Err(TransportError::Malformed(format!(
                "length field says {len}, body has {}",
                body.len()
            )));
        }
        Ok(Self {
            session_id,
            hop,
            ciphertext: body.to_vec(),
        })
    }
}

/// Set of Shuffled Outputs: a length-framed list of entry ciphertexts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sso {
    pub entries: Vec<Vec<u8>>,
}

impl Sso {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = (self.entries.len() as u32).to_be_bytes().to_vec();
        for e in &self.entries {
            out.extend_from_slice(&(e.len() as u32).to_be_bytes());
            out.extend_from_slice(e);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShuffleError> {
        let malformed = || ShuffleError::Malformed("truncated SSO".into());
        let read_u32 = |at: usize| -> Result<usize, ShuffleError> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")) as usize)
                .ok_or_else(malformed)
        };
        let count = read_u32(0)?;
        let mut at = 4;
        let mut entries = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = read_u32(at)?;
            at += 4;
            entries.push(bytes.get(at..at + len).ok_or_else(malformed)?.to_vec());
            at += len;
        }
        if at != bytes.len() {
            return Err(ShuffleError::Malformed("trailing bytes after SSO".into()));
        }
        Ok(Self { entries })
    }
}

/// Randomness stream used for the per-participant permutation.
pub fn permutation_rng(seed: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Fisher-Yates permutation of `0..len`. Applying it maps position `k` of
/// the new list to position `perm[k]` of the old one.
pub fn draw_permutation(rng: &mut ChaCha20Rng, len: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    perm
}

fn apply_permutation<T: Clone>(items: &[T], perm: &[usize]) -> Vec<T> {
    perm.iter().map(|&i| items[i].clone()).collect()
}

/// One participant's state machine.
pub struct ShuffleSession {
    index: usize,
    keypair: KeyPair,
    roster: Roster,
    ephemeral_secret: Option<SecretKey>,
    phase: Phase,
    unveiled: bool,
    my_entry: Option<Vec<u8>>,
    rng: ChaCha20Rng,
    perm_rng: ChaCha20Rng,
    permutation: Option<Vec<usize>>,
    view: Vec<Vec<u8>>,
}

impl ShuffleSession {
    /// Creates participant 1's session and the ephemeral pair `(E_D, k_D)`.
    pub fn leader(
        keypair: KeyPair,
        participants: Vec<PublicKey>,
        item_len: usize,
        session_id: [u8; SESSION_ID_LEN],
        seed: u64,
    ) -> Result<Self, ShuffleError> {
        if participants.first() != Some(&keypair.public()) {
            return Err(ShuffleError::Setup("leader must be first in the roster".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ephemeral = crypto::keygen(&mut rng);
        let roster = Roster {
            session_id,
            participants,
            ephemeral: ephemeral.public(),
            item_len,
        };
        Ok(Self {
            index: 0,
            keypair,
            roster,
            ephemeral_secret: Some(ephemeral.secret().clone()),
            phase: Phase::Init,
            unveiled: false,
            my_entry: None,
            rng,
            perm_rng: permutation_rng(seed),
            permutation: None,
            view: Vec::new(),
        })
    }

    /// Participant `index` (0-based, `>= 1`) joining the leader's roster.
    pub fn follower(index: usize, keypair: KeyPair, roster: Roster, seed: u64) -> Result<Self, ShuffleError> {
        if index == 0 || roster.participants.get(index) != Some(&keypair.public()) {
            return Err(ShuffleError::Setup(format!(
                "keypair does not match roster position {index}"
            )));
        }
        Ok(Self {
            index,
            keypair,
            roster,
            ephemeral_secret: None,
            phase: Phase::Init,
            unveiled: false,
            my_entry: None,
            rng: ChaCha20Rng::seed_from_u64(seed),
            perm_rng: permutation_rng(seed),
            permutation: None,
            view: Vec::new(),
        })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn roster(&self) -> &Roster {
        &self.roster
    }

    pub fn is_leader(&self) -> bool {
        self.index == 0
    }

    /// Permutation applied during the shuffle loop.
    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref()
    }

    /// Every plaintext this participant decrypted, in order.
    pub fn view(&self) -> &[Vec<u8>] {
        &self.view
    }

    pub fn my_entry(&self) -> Option<&[u8]> {
        self.my_entry.as_deref()
    }

    pub fn begin(&mut self) -> Result<(), ShuffleError> {
        self.expect_phase(Phase::Init)?;
        self.phase = Phase::Shuffling;
        Ok(())
    }

    fn expect_phase(&self, expected: Phase) -> Result<(), ShuffleError> {
        if self.phase != expected {
            return Err(ShuffleError::PhaseViolation {
                expected,
                actual: self.phase,
            });
        }
        Ok(())
    }

    fn n(&self) -> usize {
        self.roster.len()
    }

    fn successor(&self) -> usize {
        (self.index + 1) % self.n()
    }

    fn open(&mut self, msg: &ShuffleMessage, expected_hop: usize) -> Result<Sso, ShuffleError> {
        if msg.session_id != self.roster.session_id {
            return Err(ShuffleError::SessionMismatch);
        }
        if msg.hop as usize != expected_hop {
            return Err(ShuffleError::HopMismatch {
                expected: expected_hop as u16,
                got: msg.hop,
            });
        }
        let plain = crypto::decrypt_bytes(self.keypair.secret(), &msg.ciphertext).map_err(|_| {
            ShuffleError::Decryption {
                participant: self.index,
            }
        })?;
        let sso = Sso::from_bytes(&plain)?;
        self.view.push(plain);
        Ok(sso)
    }

    fn seal(&mut self, sso: &Sso, to: usize, hop: usize) -> ShuffleMessage {
        let recipient = self.roster.participants[to];
        let ct = crypto::encrypt(&recipient, &sso.to_bytes(), &mut self.rng);
        ShuffleMessage {
            session_id: self.roster.session_id,
            hop: hop as u16,
            ciphertext: ct.to_bytes(),
        }
    }

    /// Adds `my_item` to the SSO, permutes it and forwards it to the successor.
    /// The leader passes `None`; everyone else passes the predecessor's message.
    pub fn shuffle_step(
        &mut self,
        incoming: Option<&ShuffleMessage>,
        my_item: &[u8],
    ) -> Result<ShuffleMessage, ShuffleError> {
        self.expect_phase(Phase::Shuffling)?;
        if my_item.len() != self.roster.item_len {
            return Err(ShuffleError::ItemWidth {
                expected: self.roster.item_len,
                got: my_item.len(),
            });
        }
        let mut sso = match (self.index, incoming) {
            (0, None) => Sso::default(),
            (0, Some(_)) => return Err(ShuffleError::Malformed("leader starts the loop".into())),
            (_, None) => return Err(ShuffleError::Malformed("missing predecessor message".into())),
            (i, Some(msg)) => {
                let sso = self.open(msg, i)?;
                if sso.entries.len() != i {
                    return Err(ShuffleError::EntryCount {
                        expected: i,
                        got: sso.entries.len(),
                    });
                }
                sso
            }
        };

        let entry = crypto::encrypt(&self.keypair.public(), my_item, &mut self.rng).to_bytes();
        sso.entries.push(entry.clone());
        let perm = draw_permutation(&mut self.perm_rng, sso.entries.len());
        sso.entries = apply_permutation(&sso.entries, &perm);
        self.my_entry = Some(entry);
        self.permutation = Some(perm);

        let out = self.seal(&sso, self.successor(), self.index + 1);
        self.phase = Phase::Unveiling;
        Ok(out)
    }

    /// Replaces this participant's entry by its item encrypted to `E_D`.
    pub fn unveil_step(&mut self, incoming: &ShuffleMessage) -> Result<ShuffleMessage, ShuffleError> {
        self.expect_phase(Phase::Unveiling)?;
        if self.unveiled {
            return Err(ShuffleError::PhaseViolation {
                expected: Phase::Unveiling,
                actual: Phase::Done,
            });
        }
        let n = self.n();
        let mut sso = self.open(incoming, n + self.index)?;
        if sso.entries.len() != n {
            return Err(ShuffleError::EntryCount {
                expected: n,
                got: sso.entries.len(),
            });
        }
        let mine = self.my_entry.as_ref().expect("recorded in shuffle_step");
        let position = sso
            .entries
            .iter()
            .position(|e| e == mine)
            .ok_or(ShuffleError::EntryNotFound {
                participant: self.index,
            })?;
        let item = crypto::decrypt_bytes(self.keypair.secret(), mine).map_err(|_| ShuffleError::Decryption {
            participant: self.index,
        })?;
        self.view.push(item.clone());
        sso.entries[position] = crypto::encrypt(&self.roster.ephemeral, &item, &mut self.rng).to_bytes();

        let out = self.seal(&sso, self.successor(), n + self.index + 1);
        if self.is_leader() {
            self.unveiled = true;
        } else {
            self.phase = Phase::Done;
        }
        Ok(out)
    }

    /// Leader only: opens the returned SSO and every entry with `k_D`.
    pub fn finalize(&mut self, incoming: &ShuffleMessage) -> Result<Vec<Vec<u8>>, ShuffleError> {
        if !self.is_leader() {
            return Err(ShuffleError::Setup("only the leader holds k_D".into()));
        }
        self.expect_phase(Phase::Unveiling)?;
        if !self.unveiled {
            return Err(ShuffleError::PhaseViolation {
                expected: Phase::Unveiling,
                actual: Phase::Shuffling,
            });
        }
        let n = self.n();
        let sso = self.open(incoming, 2 * n)?;
        if sso.entries.len() != n {
            return Err(ShuffleError::EntryCount {
                expected: n,
                got: sso.entries.len(),
            });
        }
        let k_d = self.ephemeral_secret.as_ref().expect("leader holds k_D");
        let items = sso
            .entries
            .iter()
            .enumerate()
            .map(|(position, e)| {
                crypto::decrypt_bytes(k_d, e).map_err(|_| ShuffleError::EphemeralDecryption { position })
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.view.extend(items.iter().cloned());
        self.phase = Phase::Done;
        Ok(items)
    }
}

/// Moves messages between participants.
pub trait Transport {
    fn send(&mut self, from: usize, to: usize, msg: &ShuffleMessage) -> Result<(), TransportError>;
    fn recv(&mut self, to: usize) -> Result<ShuffleMessage, TransportError>;
}

/// Fault to inject into a [`MemoryTransport`], keyed by hop number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The message never arrives; the recipient times out.
    Drop { hop: u16 },
    /// Flip one byte of the wire encoding.
    Corrupt { hop: u16, offset: usize },
}

/// One delivered (or dropped) wire message.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct HopRecord {
    pub hop: u16,
    pub from: usize,
    pub to: usize,
    #[serde(with = "hex_bytes")]
    pub bytes: Vec<u8>,
    pub dropped: bool,
}

/// Sequential in-memory ring. A missing message is reported as a timeout
/// immediately, since no other participant can still be running.
#[derive(Debug, Default)]
pub struct MemoryTransport {
    queues: BTreeMap<usize, VecDeque<Vec<u8>>>,
    faults: Vec<Fault>,
    log: Vec<HopRecord>,
}

impl MemoryTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: Vec<Fault>) -> Self {
        Self {
            faults,
            ..Self::default()
        }
    }

    pub fn log(&self) -> &[HopRecord] {
        &self.log
    }

    pub fn into_log(self) -> Vec<HopRecord> {
        self.log
    }
}

impl Transport for MemoryTransport {
    fn send(&mut self, from: usize, to: usize, msg: &ShuffleMessage) -> Result<(), TransportError> {
        let mut bytes = msg.to_bytes();
        let mut dropped = false;
        for fault in &self.faults {
            match *fault {
                Fault::Drop { hop } if hop == msg.hop => dropped = true,
                Fault::Corrupt { hop, offset } if hop == msg.hop => {
                    let at = offset % bytes.len();
                    bytes[at] ^= 0x01;
                }
                _ => {}
            }
        }
        self.log.push(HopRecord {
            hop: msg.hop,
            from,
            to,
            bytes: bytes.clone(),
            dropped,
        });
        if !dropped {
            self.queues.entry(to).or_default().push_back(bytes);
        }
        Ok(())
    }

    fn recv(&mut self, to: usize) -> Result<ShuffleMessage, TransportError> {
        let bytes = self
            .queues
            .get_mut(&to)
            .and_then(VecDeque::pop_front)
            .ok_or(TransportError::Timeout { participant: to })?;
        ShuffleMessage::from_bytes(&bytes)
    }
}

/// Seeds for one session: the session id and one seed per participant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShuffleSeeds {
    pub session: u64,
    pub participants: Vec<u64>,
}

impl ShuffleSeeds {
    /// Seeds derived from a single run seed.
    pub fn from_root(root: u64, n: usize) -> Self {
        Self {
            session: root,
            participants: (0..n as u64)
                .map(|i| root.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i + 1))
                .collect(),
        }
    }

    pub fn session_id(&self) -> [u8; SESSION_ID_LEN] {
        let digest = crypto::sha256(&[b"sharvot/shuffle-session".as_slice(), &self.session.to_le_bytes()].concat());
        digest[..SESSION_ID_LEN].try_into().expect("16 bytes")
    }
}

/// Outcome of [`run_session`], with per-participant state kept for audit.
#[derive(Clone, Debug)]
pub struct ShuffleRun {
    pub order: Vec<Vec<u8>>,
    pub roster: Roster,
    pub permutations: Vec<Vec<usize>>,
    pub views: Vec<Vec<Vec<u8>>>,
}

/// Drives both loops over `transport`. `items[i]` belongs to the participant
/// holding `keypairs[i]`.
pub fn run_session<T: Transport>(
    items: &[Vec<u8>],
    keypairs: &[KeyPair],
    transport: &mut T,
    seeds: &ShuffleSeeds,
) -> Result<ShuffleRun, ShuffleError> {
    let n = items.len();
    if n == 0 {
        return Err(ShuffleError::Setup("need at least one participant".into()));
    }
    if keypairs.len() != n || seeds.participants.len() != n {
        return Err(ShuffleError::Setup("items, keys and seeds must have equal length".into()));
    }
    let item_len = items[0].len();
    let publics: Vec<PublicKey> = keypairs.iter().map(KeyPair::public).collect();
    let mut sessions = vec![ShuffleSession::leader(
        keypairs[0].clone(),
        publics,
        item_len,
        seeds.session_id(),
        seeds.participants[0],
    )?];
    let roster = sessions[0].roster().clone();
    for i in 1..n {
        sessions.push(ShuffleSession::follower(
            i,
            keypairs[i].clone(),
            roster.clone(),
            seeds.participants[i],
        )?);
    }
    for s in &mut sessions {
        s.begin()?;
    }

    for i in 0..n {
        let incoming = if i == 0 { None } else { Some(transport.recv(i)?) };
        let out = sessions[i].shuffle_step(incoming.as_ref(), &items[i])?;
        transport.send(i, (i + 1) % n, &out)?;
    }
    for i in 0..n {
        let incoming = transport.recv(i)?;
        let out = sessions[i].unveil_step(&incoming)?;
        transport.send(i, (i + 1) % n, &out)?;
    }
    let last = transport.recv(0)?;
    let order = sessions[0].finalize(&last)?;

    Ok(ShuffleRun {
        order,
        roster,
        permutations: sessions
            .iter()
            .map(|s| s.permutation().expect("shuffle step ran").to_vec())
            .collect(),
        views: sessions.iter().map(|s| s.view().to_vec()).collect(),
    })
}

/// Length of the random items used by [`demo`].
pub const DEMO_ITEM_LEN: usize = 16;

/// A standalone session over random items, as shown by the demos.
#[derive(Clone, Debug)]
pub struct ShuffleDemo {
    pub items: Vec<Vec<u8>>,
    pub run: ShuffleRun,
    pub hops: Vec<HopRecord>,
    pub session_id: [u8; SESSION_ID_LEN],
}

impl ShuffleDemo {
    /// True when the output is a reordering of the input.
    pub fn multiset_preserved(&self) -> bool {
        let mut a = self.items.clone();
        let mut b = self.run.order.clone();
        a.sort();
        b.sort();
        a == b
    }

    /// Input index of each output entry.
    pub fn output_positions(&self) -> Vec<Option<usize>> {
        self.run
            .order
            .iter()
            .map(|o| self.items.iter().position(|i| i == o))
            .collect()
    }
}

/// Runs a session for `n` participants with items and keys drawn from `seed`.
pub fn demo(n: usize, seed: u64) -> Result<ShuffleDemo, ShuffleError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let items: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let mut b = vec![0u8; DEMO_ITEM_LEN];
            rand::RngCore::fill_bytes(&mut rng, &mut b);
            b
        })
        .collect();
    let keys: Vec<KeyPair> = (0..n).map(|_| crypto::keygen(&mut rng)).collect();
    let seeds = ShuffleSeeds::from_root(seed, n);
    let mut transport = MemoryTransport::new();
    let run = run_session(&items, &keys, &mut transport, &seeds)?;
    Ok(ShuffleDemo {
        items,
        run,
        hops: transport.into_log(),
        session_id: seeds.session_id(),
    })
}

mod hex_bytes {
    use serde::Serializer;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }
}
