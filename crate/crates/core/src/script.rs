//! A miniature Bitcoin-style script: opcodes, canonical encoding, builders for
//! multisig-with-metadata statements and the if/else voting script, and a
//! stack interpreter with P2SH support.
//!
//! Byte table (one opcode byte, pushes carry a 2-byte big-endian length):
//!
//! | opcode                   | byte |
//! |--------------------------|------|
//! | `OP_0`                   | 0x00 |
//! | `PUSH <len:u16> <data>`  | 0x4d |
//! | `OP_1` .. `OP_16`        | 0x51 .. 0x60 |
//! | `OP_IF`                  | 0x63 |
//! | `OP_ELSE`                | 0x67 |
//! | `OP_ENDIF`               | 0x68 |
//! | `OP_DROP`                | 0x75 |
//! | `OP_EQUAL`               | 0x87 |
//! | `OP_HASH160`             | 0xa9 |
//! | `OP_CHECKSIG`            | 0xac |
//! | `OP_CHECKMULTISIG`       | 0xae |
//! | `OP_CHECKLOCKTIMEVERIFY` | 0xb1 |

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::crypto::{self, PublicKey, Signature};

/// Largest stack element a locking or redeem script may push.
pub const MAX_PUSH_LEN: usize = 520;
pub const MAX_MULTISIG_KEYS: usize = 15;
/// Default size limit of one metadata item in a key slot.
pub const MAX_METADATA_LEN: usize = 64;
/// Vote slots per candidate statement: 15 key slots minus `M_C` and `P_C`.
pub const MAX_VOTES_PER_STATEMENT: usize = 13;
pub const DEFAULT_MAX_SCRIPT_LEN: usize = 10_000;
/// Signatures each candidate statement requires (`M_C` and `P_C`).
pub const CANDIDATE_SIGNATURES: usize = 2;

const PUSH_BYTE: u8 = 0x4d;

#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Opcode {
    Push(Vec<u8>),
    Zero,
    /// `OP_1` .. `OP_16`.
    Num(u8),
    CheckMultisig,
    CheckSig,
    If,
    Else,
    EndIf,
    CheckLockTimeVerify,
    Drop,
    Hash160,
    Equal,
}

impl Opcode {
    fn byte(&self) -> u8 {
        match self {
            Opcode::Zero => 0x00,
            Opcode::Push(_) => PUSH_BYTE,
            Opcode::Num(n) => 0x50 + n,
            Opcode::If => 0x63,
            Opcode::Else => 0x67,
            Opcode::EndIf => 0x68,
            Opcode::Drop => 0x75,
            Opcode::Equal => 0x87,
            Opcode::Hash160 => 0xa9,
            Opcode::CheckSig => 0xac,
            Opcode::CheckMultisig => 0xae,
            Opcode::CheckLockTimeVerify => 0xb1,
        }
    }

    pub fn is_push(&self) -> bool {
        matches!(self, Opcode::Push(_) | Opcode::Zero | Opcode::Num(_))
    }
}

impl fmt::Debug for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Opcode::Push(d) => write!(f, "<{}>", hex::encode(d)),
            Opcode::Zero => f.write_str("OP_0"),
            Opcode::Num(n) => write!(f, "OP_{n}"),
            Opcode::CheckMultisig => f.write_str("OP_CHECKMULTISIG"),
            Opcode::CheckSig => f.write_str("OP_CHECKSIG"),
            Opcode::If => f.write_str("OP_IF"),
            Opcode::Else => f.write_str("OP_ELSE"),
            Opcode::EndIf => f.write_str("OP_ENDIF"),
            Opcode::CheckLockTimeVerify => f.write_str("OP_CHECKLOCKTIMEVERIFY"),
            Opcode::Drop => f.write_str("OP_DROP"),
            Opcode::Hash160 => f.write_str("OP_HASH160"),
            Opcode::Equal => f.write_str("OP_EQUAL"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("{slots} key slots exceed the multisig limit of {MAX_MULTISIG_KEYS}")]
    SlotOverflow { slots: usize },
    #[error("metadata item of {len} bytes exceeds the {max}-byte slot limit")]
    MetadataOversize { len: usize, max: usize },
    #[error("metadata item of {len} bytes does not fill the {slot}-byte slot")]
    MetadataWidth { len: usize, slot: usize },
    #[error("invalid signature threshold {required} for {keys} signer keys")]
    InvalidThreshold { required: usize, keys: usize },
    #[error("script of {len} bytes exceeds the {max}-byte limit")]
    ScriptTooLarge { len: usize, max: usize },
    #[error("vote script needs at least one candidate with at least one vote")]
    NoVotes,
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("not a vote script: {0}")]
    NotVoteScript(String),
}

/// Why the interpreter refused a spend.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptReject {
    #[error("bad signature")]
    BadSignature,
    #[error("locktime not met: requires height {required}, at {height}")]
    LocktimeNotMet { required: u64, height: u64 },
    #[error("unbalanced conditional")]
    UnbalancedConditional,
    #[error("redeem script hash mismatch")]
    HashMismatch,
    #[error("stack underflow")]
    StackUnderflow,
    #[error("script evaluated to false")]
    EvalFalse,
    #[error("unlocking script must be push-only")]
    NonPushUnlocking,
    #[error("push of {len} bytes exceeds the element limit")]
    PushTooLarge { len: usize },
    #[error("invalid number encoding")]
    InvalidNumber,
    #[error("invalid multisig counts")]
    InvalidMultisig,
    #[error("redeem script does not parse: {0}")]
    InvalidRedeemScript(String),
}

#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Script {
    ops: Vec<Opcode>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ops(ops: Vec<Opcode>) -> Self {
        Self { ops }
    }

    pub fn ops(&self) -> &[Opcode] {
        &self.ops
    }

    pub fn push(mut self, data: impl Into<Vec<u8>>) -> Self {
        self.ops.push(Opcode::Push(data.into()));
        self
    }

    pub fn op(mut self, op: Opcode) -> Self {
        self.ops.push(op);
        self
    }

    pub fn push_int(self, n: u64) -> Self {
        let op = int_opcode(n);
        self.op(op)
    }

    pub fn append(mut self, other: &Script) -> Self {
        self.ops.extend_from_slice(&other.ops);
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for op in &self.ops {
            out.push(op.byte());
            if let Opcode::Push(d) = op {
                out.extend_from_slice(&(d.len() as u16).to_be_bytes());
                out.extend_from_slice(d);
            }
        }
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn byte_len(&self) -> usize {
        self.ops
            .iter()
            .map(|op| match op {
                Opcode::Push(d) => 3 + d.len(),
                _ => 1,
            })
            .sum()
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ScriptError> {
        let mut ops = Vec::new();
        let mut at = 0;
        while at < bytes.len() {
            let b = bytes[at];
            let op = match b {
                0x00 => Opcode::Zero,
                PUSH_BYTE => {
                    let len_bytes = bytes.get(at + 1..at + 3).ok_or_else(|| ScriptError::Parse {
                        offset: at,
                        reason: "truncated push length".into(),
                    })?;
                    let len = u16::from_be_bytes([len_bytes[0], len_bytes[1]]) as usize;
                    if len > DEFAULT_MAX_SCRIPT_LEN {
                        return Err(ScriptError::Parse {
                            offset: at,
                            reason: format!("push of {len} bytes"),
                        });
                    }
                    let data = bytes.get(at + 3..at + 3 + len).ok_or_else(|| ScriptError::Parse {
                        offset: at,
                        reason: "truncated push data".into(),
                    })?;
                    at += 2 + len;
                    Opcode::Push(data.to_vec())
                }
                0x51..=0x60 => Opcode::Num(b - 0x50),
                0x63 => Opcode::If,
                0x67 => Opcode::Else,
                0x68 => Opcode::EndIf,
                0x75 => Opcode::Drop,
                0x87 => Opcode::Equal,
                0xa9 => Opcode::Hash160,
                0xac => Opcode::CheckSig,
                0xae => Opcode::CheckMultisig,
                0xb1 => Opcode::CheckLockTimeVerify,
                other => {
                    return Err(ScriptError::Parse {
                        offset: at,
                        reason: format!("unknown opcode 0x{other:02x}"),
                    })
                }
            };
            ops.push(op);
            at += 1;
        }
        Ok(Self { ops })
    }

    pub fn from_hex(text: &str) -> Result<Self, ScriptError> {
        let bytes = hex::decode(text.trim()).map_err(|e| ScriptError::Parse {
            offset: 0,
            reason: e.to_string(),
        })?;
        Self::parse(&bytes)
    }

    pub fn is_push_only(&self) -> bool {
        self.ops.iter().all(Opcode::is_push)
    }

    pub fn is_balanced(&self) -> bool {
        let mut depth = 0usize;
        for op in &self.ops {
            match op {
                Opcode::If => depth += 1,
                Opcode::Else if depth == 0 => return false,
                Opcode::EndIf => {
                    if depth == 0 {
                        return false;
                    }
                    depth -= 1;
                }
                _ => {}
            }
        }
        depth == 0
    }

    /// The 20-byte digest if this is `OP_HASH160 <20> OP_EQUAL`.
    pub fn p2sh_hash(&self) -> Option<[u8; 20]> {
        match self.ops.as_slice() {
            [Opcode::Hash160, Opcode::Push(h), Opcode::Equal] if h.len() == 20 => {
                Some(h.as_slice().try_into().expect("20 bytes"))
            }
            _ => None,
        }
    }

    /// The key if this is `<pk> OP_CHECKSIG`.
    pub fn p2pk_key(&self) -> Option<PublicKey> {
        match self.ops.as_slice() {
            [Opcode::Push(k), Opcode::CheckSig] => PublicKey::from_bytes(k).ok(),
            _ => None,
        }
    }

    pub fn disassemble(&self) -> String {
        self.ops.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
    }
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Script({})", self.disassemble())
    }
}

impl Serialize for Script {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        Script::from_hex(&text).map_err(serde::de::Error::custom)
    }
}

fn int_opcode(n: u64) -> Opcode {
    match n {
        0 => Opcode::Zero,
        1..=16 => Opcode::Num(n as u8),
        _ => {
            let bytes = n.to_le_bytes();
            let len = 8 - (n.leading_zeros() as usize / 8);
            Opcode::Push(bytes[..len].to_vec())
        }
    }
}

/// Little-endian unsigned number, at most 8 bytes.
fn decode_num(bytes: &[u8]) -> Result<u64, ScriptReject> {
    if bytes.len() > 8 {
        return Err(ScriptReject::InvalidNumber);
    }
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    Ok(u64::from_le_bytes(buf))
}

fn op_number(op: &Opcode) -> Option<u64> {
    match op {
        Opcode::Zero => Some(0),
        Opcode::Num(n) => Some(*n as u64),
        Opcode::Push(d) => decode_num(d).ok(),
        _ => None,
    }
}

/// `OP_HASH160 <hash160(redeem)> OP_EQUAL`.
pub fn p2sh_locking(redeem: &Script) -> Script {
    Script::new()
        .op(Opcode::Hash160)
        .push(p2sh_address(redeem).to_vec())
        .op(Opcode::Equal)
}

/// `<pk> OP_CHECKSIG`.
pub fn p2pk_locking(key: &PublicKey) -> Script {
    Script::new().push(key.to_bytes().to_vec()).op(Opcode::CheckSig)
}

pub fn p2pk_unlocking(sig: &Signature) -> Script {
    Script::new().push(sig.to_bytes().to_vec())
}

/// `hash160` of the canonical serialization.
pub fn p2sh_address(script: &Script) -> [u8; 20] {
    crypto::hash160(&script.to_bytes())
}

/// Key-slot ordering and metadata width for [`build_multisig_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultisigLayout {
    /// Metadata slots before the signer keys (`OP_1 m_1 m_2 P_1 OP_3`).
    pub metadata_first: bool,
    pub max_metadata_len: usize,
}

impl Default for MultisigLayout {
    fn default() -> Self {
        Self {
            metadata_first: true,
            max_metadata_len: MAX_METADATA_LEN,
        }
    }
}

/// `OP_m <slots> OP_n OP_CHECKMULTISIG` with metadata in unused key slots.
pub fn build_multisig(required: usize, signer_keys: &[PublicKey], metadata: &[Vec<u8>]) -> Result<Script, ScriptError> {
    build_multisig_with(required, signer_keys, metadata, MultisigLayout::default())
}

pub fn build_multisig_with(
    required: usize,
    signer_keys: &[PublicKey],
    metadata: &[Vec<u8>],
    layout: MultisigLayout,
) -> Result<Script, ScriptError> {
    if required == 0 || required > signer_keys.len() {
        return Err(ScriptError::InvalidThreshold {
            required,
            keys: signer_keys.len(),
        });
    }
    let slots = signer_keys.len() + metadata.len();
    if slots > MAX_MULTISIG_KEYS {
        return Err(ScriptError::SlotOverflow { slots });
    }
    if let Some(m) = metadata.iter().find(|m| m.len() > layout.max_metadata_len) {
        return Err(ScriptError::MetadataOversize {
            len: m.len(),
            max: layout.max_metadata_len,
        });
    }
    let keys = signer_keys.iter().map(|k| k.to_bytes().to_vec());
    let ordered: Vec<Vec<u8>> = if layout.metadata_first {
        metadata.iter().cloned().chain(keys).collect()
    } else {
        keys.chain(metadata.iter().cloned()).collect()
    };
    let mut script = Script::new().push_int(required as u64);
    for slot in ordered {
        script = script.push(slot);
    }
    Ok(script.push_int(slots as u64).op(Opcode::CheckMultisig))
}

/// `OP_0 S_1 .. S_m`.
pub fn multisig_unlocking(sigs: &[Signature]) -> Script {
    sigs.iter()
        .fold(Script::new().op(Opcode::Zero), |s, sig| s.push(sig.to_bytes().to_vec()))
}

/// One candidate's vote statements: all votes, `M_C` and `P_C`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateStatement {
    pub candidate_key: PublicKey,
    pub dealer_key: PublicKey,
    pub votes: Vec<Vec<u8>>,
}

/// Refund statement: dealer key `S = k × G` behind the locktime, optionally
/// also requiring one of the voters' signatures.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefundStatement {
    pub dealer_key: PublicKey,
    pub cosigners: Vec<PublicKey>,
    pub locktime: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteScriptSpec {
    pub candidates: Vec<CandidateStatement>,
    pub refund: RefundStatement,
    /// Width of each metadata slot; every vote must fill it exactly.
    pub slot_len: usize,
    pub max_script_len: usize,
}

/// A decoded multisig statement (metadata-first layout).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MultisigArm {
    pub required: usize,
    pub metadata: Vec<Vec<u8>>,
    pub keys: Vec<Vec<u8>>,
}

impl MultisigArm {
    /// Metadata slots that are not zero padding.
    pub fn filled_slots(&self) -> impl Iterator<Item = &Vec<u8>> {
        self.metadata.iter().filter(|m| !is_padding(m))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefundArm {
    pub locktime: u64,
    pub dealer_key: Vec<u8>,
    /// Cosigner multisig chunks (each 1-of-k, `k <= 15`); empty when the
    /// dealer key alone unlocks the refund.
    pub cosigner_chunks: Vec<Vec<Vec<u8>>>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Arm {
    Multisig(MultisigArm),
    Refund(RefundArm),
}

pub fn is_padding(slot: &[u8]) -> bool {
    slot.iter().all(|b| *b == 0)
}

/// The if/else voting script with its decoded arms.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoteScript {
    script: Script,
    arms: Vec<Arm>,
}

/// Builds the voting script: one 2-of-15 statement per chunk of up to 13
/// votes per candidate, then the timelocked refund statement.
pub fn build_vote_script(spec: &VoteScriptSpec) -> Result<VoteScript, ScriptError> {
    if spec.candidates.is_empty() || spec.candidates.iter().any(|c| c.votes.is_empty()) {
        return Err(ScriptError::NoVotes);
    }
    let layout = MultisigLayout {
        metadata_first: true,
        max_metadata_len: spec.slot_len,
    };
    let mut arms = Vec::new();
    for cand in &spec.candidates {
        if let Some(v) = cand.votes.iter().find(|v| v.len() != spec.slot_len) {
            return Err(ScriptError::MetadataWidth {
                len: v.len(),
                slot: spec.slot_len,
            });
        }
        for chunk in cand.votes.chunks(MAX_VOTES_PER_STATEMENT) {
            let mut slots = chunk.to_vec();
            slots.resize(MAX_VOTES_PER_STATEMENT, vec![0u8; spec.slot_len]);
            arms.push(build_multisig_with(
                CANDIDATE_SIGNATURES,
                &[cand.candidate_key, cand.dealer_key],
                &slots,
                layout,
            )?);
        }
    }
    arms.push(refund_arm(&spec.refund)?);
    let script = if_ladder(&arms);
    let len = script.byte_len();
    if len > spec.max_script_len {
        return Err(ScriptError::ScriptTooLarge {
            len,
            max: spec.max_script_len,
        });
    }
    VoteScript::from_script(script)
}

fn refund_arm(refund: &RefundStatement) -> Result<Script, ScriptError> {
    let base = Script::new()
        .push_int(refund.locktime)
        .op(Opcode::CheckLockTimeVerify)
        .op(Opcode::Drop)
        .push(refund.dealer_key.to_bytes().to_vec())
        .op(Opcode::CheckSig);
    if refund.cosigners.is_empty() {
        return Ok(base);
    }
    let chunks = refund
        .cosigners
        .chunks(MAX_MULTISIG_KEYS)
        .map(|c| build_multisig(1, c, &[]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(base
        .op(Opcode::If)
        .append(&if_ladder(&chunks))
        .op(Opcode::Else)
        .op(Opcode::Zero)
        .op(Opcode::EndIf))
}

/// `IF a_0 ELSE IF a_1 ELSE ... a_k ENDIF ... ENDIF`.
pub fn if_ladder(arms: &[Script]) -> Script {
    match arms {
        [] => Script::new(),
        [only] => only.clone(),
        [first, rest @ ..] => Script::new()
            .op(Opcode::If)
            .append(first)
            .op(Opcode::Else)
            .append(&if_ladder(rest))
            .op(Opcode::EndIf),
    }
}

/// Pushes (in push order) that steer an [`if_ladder`] of `count` arms into
/// arm `index`: a true for that arm's `IF`, then a false for each earlier one.
pub fn ladder_selector(index: usize, count: usize) -> Vec<Opcode> {
    assert!(index < count, "arm {index} out of {count}");
    let mut ops = Vec::new();
    if index + 1 < count {
        ops.push(Opcode::Num(1));
    }
    ops.extend(std::iter::repeat_n(Opcode::Zero, index));
    ops
}

/// Splits an [`if_ladder`] back into its arms.
fn split_ladder(ops: &[Opcode]) -> Option<Vec<&[Opcode]>> {
    if ops.first() != Some(&Opcode::If) {
        return Some(vec![ops]);
    }
    if ops.last() != Some(&Opcode::EndIf) {
        return None;
    }
    let mut depth = 0usize;
    let mut else_at = None;
    for (i, op) in ops.iter().enumerate().take(ops.len() - 1).skip(1) {
        match op {
            Opcode::If => depth += 1,
            Opcode::EndIf => depth = depth.checked_sub(1)?,
            Opcode::Else if depth == 0 => {
                else_at = Some(i);
                break;
            }
            _ => {}
        }
    }
    let else_at = else_at?;
    let mut arms = vec![&ops[1..else_at]];
    arms.extend(split_ladder(&ops[else_at + 1..ops.len() - 1])?);
    Some(arms)
}

fn decode_multisig(ops: &[Opcode]) -> Option<MultisigArm> {
    let (first, rest) = ops.split_first()?;
    let (last, rest) = rest.split_last()?;
    let (count_op, slots) = rest.split_last()?;
    if *last != Opcode::CheckMultisig {
        return None;
    }
    let required = op_number(first)? as usize;
    let count = op_number(count_op)? as usize;
    if count != slots.len() || required == 0 || required > count {
        return None;
    }
    let slots: Vec<Vec<u8>> = slots
        .iter()
        .map(|op| match op {
            Opcode::Push(d) => Some(d.clone()),
            _ => None,
        })
        .collect::<Option<_>>()?;
    let split = count - required;
    Some(MultisigArm {
        required,
        metadata: slots[..split].to_vec(),
        keys: slots[split..].to_vec(),
    })
}

fn decode_refund(ops: &[Opcode]) -> Option<RefundArm> {
    let locktime = op_number(ops.first()?)?;
    match ops.get(1..5)? {
        [Opcode::CheckLockTimeVerify, Opcode::Drop, Opcode::Push(dealer), Opcode::CheckSig] => {
            let tail = &ops[5..];
            let cosigner_chunks = if tail.is_empty() {
                Vec::new()
            } else {
                // IF <ladder> ELSE OP_0 ENDIF
                let n = tail.len();
                if n < 5
                    || tail[0] != Opcode::If
                    || tail[n - 3] != Opcode::Else
                    || tail[n - 2] != Opcode::Zero
                    || tail[n - 1] != Opcode::EndIf
                {
                    return None;
                }
                split_ladder(&tail[1..n - 3])?
                    .into_iter()
                    .map(|arm| {
                        let m = decode_multisig(arm)?;
                        // 1-of-k with no metadata: all slots are keys.
                        (m.required == 1).then(|| m.metadata.into_iter().chain(m.keys).collect())
                    })
                    .collect::<Option<Vec<_>>>()?
            };
            Some(RefundArm {
                locktime,
                dealer_key: dealer.clone(),
                cosigner_chunks,
            })
        }
        _ => None,
    }
}

impl VoteScript {
    /// Decodes a voting script's ladder; every arm but the last must be a
    /// multisig statement and the last must be the refund statement.
    pub fn from_script(script: Script) -> Result<Self, ScriptError> {
        if !script.is_balanced() {
            return Err(ScriptError::NotVoteScript("unbalanced conditionals".into()));
        }
        let raw = split_ladder(script.ops())
            .ok_or_else(|| ScriptError::NotVoteScript("malformed if/else ladder".into()))?;
        let (refund, statements) = raw
            .split_last()
            .ok_or_else(|| ScriptError::NotVoteScript("empty".into()))?;
        let mut arms = statements
            .iter()
            .enumerate()
            .map(|(i, ops)| {
                decode_multisig(ops)
                    .map(Arm::Multisig)
                    .ok_or_else(|| ScriptError::NotVoteScript(format!("arm {i} is not a multisig statement")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        arms.push(Arm::Refund(
            decode_refund(refund).ok_or_else(|| ScriptError::NotVoteScript("last arm is not a refund".into()))?,
        ));
        Ok(Self { script, arms })
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn arms(&self) -> &[Arm] {
        &self.arms
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    pub fn refund_arm_index(&self) -> usize {
        self.arms.len() - 1
    }

    pub fn refund(&self) -> &RefundArm {
        match self.arms.last() {
            Some(Arm::Refund(r)) => r,
            _ => unreachable!("validated in from_script"),
        }
    }

    pub fn statements(&self) -> impl Iterator<Item = (usize, &MultisigArm)> {
        self.arms.iter().enumerate().filter_map(|(i, a)| match a {
            Arm::Multisig(m) => Some((i, m)),
            Arm::Refund(_) => None,
        })
    }

    /// Arm indices of the statements keyed by `(M_C, P_C)`.
    pub fn candidate_arms(&self, candidate_key: &PublicKey, dealer_key: &PublicKey) -> Vec<usize> {
        let keys = [candidate_key.to_bytes().to_vec(), dealer_key.to_bytes().to_vec()];
        self.statements()
            .filter(|(_, m)| m.keys == keys)
            .map(|(i, _)| i)
            .collect()
    }

    /// Non-padding metadata across the given arms, in script order.
    pub fn votes_in(&self, arms: &[usize]) -> Vec<Vec<u8>> {
        arms.iter()
            .filter_map(|&i| match &self.arms[i] {
                Arm::Multisig(m) => Some(m.filled_slots().cloned().collect::<Vec<_>>()),
                Arm::Refund(_) => None,
            })
            .flatten()
            .collect()
    }

    pub fn address(&self) -> [u8; 20] {
        p2sh_address(&self.script)
    }

    /// `OP_0 sig_M sig_P <selector> <redeem>` for candidate statement `arm`.
    pub fn unlock_candidate(&self, arm: usize, candidate_sig: &Signature, dealer_sig: &Signature) -> Script {
        let mut ops = vec![
            Opcode::Zero,
            Opcode::Push(candidate_sig.to_bytes().to_vec()),
            Opcode::Push(dealer_sig.to_bytes().to_vec()),
        ];
        ops.extend(ladder_selector(arm, self.arm_count()));
        ops.push(Opcode::Push(self.script.to_bytes()));
        Script::from_ops(ops)
    }

    /// Unlocking script for the refund statement. `cosigner` is the voter's
    /// index in the cosigner list and their signature; ignored (and may be
    /// `None`) when the refund needs the dealer key only.
    pub fn unlock_refund(&self, dealer_sig: Option<&Signature>, cosigner: Option<(usize, &Signature)>) -> Script {
        let refund = self.refund();
        let mut ops = Vec::new();
        if !refund.cosigner_chunks.is_empty() {
            ops.push(Opcode::Zero);
            let chunk_count = refund.cosigner_chunks.len();
            match cosigner {
                Some((index, sig)) => {
                    ops.push(Opcode::Push(sig.to_bytes().to_vec()));
                    ops.extend(ladder_selector(index / MAX_MULTISIG_KEYS, chunk_count));
                }
                None => {
                    ops.push(Opcode::Zero);
                    ops.extend(ladder_selector(0, chunk_count));
                }
            }
        }
        ops.push(match dealer_sig {
            Some(s) => Opcode::Push(s.to_bytes().to_vec()),
            None => Opcode::Zero,
        });
        ops.extend(ladder_selector(self.refund_arm_index(), self.arm_count()));
        ops.push(Opcode::Push(self.script.to_bytes()));
        Script::from_ops(ops)
    }
}

/// What the interpreter needs from the spending transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExecutionContext {
    /// Signature digest of the input being verified.
    pub sighash: [u8; 32],
    /// Height at which the spend is evaluated.
    pub height: u64,
}

fn cast_to_bool(v: &[u8]) -> bool {
    match v.split_last() {
        None => false,
        Some((last, rest)) => rest.iter().any(|b| *b != 0) || (*last != 0 && *last != 0x80),
    }
}

struct Machine<'a> {
    stack: Vec<Vec<u8>>,
    ctx: &'a ExecutionContext,
}

impl Machine<'_> {
    fn pop(&mut self) -> Result<Vec<u8>, ScriptReject> {
        self.stack.pop().ok_or(ScriptReject::StackUnderflow)
    }

    fn pop_num(&mut self) -> Result<u64, ScriptReject> {
        decode_num(&self.pop()?)
    }

    fn run(&mut self, script: &Script, max_push: usize) -> Result<(), ScriptReject> {
        if !script.is_balanced() {
            return Err(ScriptReject::UnbalancedConditional);
        }
        let mut exec: Vec<bool> = Vec::new();
        for op in script.ops() {
            let executing = exec.iter().all(|b| *b);
            match op {
                Opcode::If => {
                    let taken = if executing { cast_to_bool(&self.pop()?) } else { false };
                    exec.push(taken);
                    continue;
                }
                Opcode::Else => {
                    let top = exec.last_mut().ok_or(ScriptReject::UnbalancedConditional)?;
                    *top = !*top;
                    continue;
                }
                Opcode::EndIf => {
                    exec.pop().ok_or(ScriptReject::UnbalancedConditional)?;
                    continue;
                }
                _ if !executing => continue,
                _ => {}
            }
            match op {
                Opcode::Zero => self.stack.push(Vec::new()),
                Opcode::Num(n) => self.stack.push(vec![*n]),
                Opcode::Push(d) => {
                    if d.len() > max_push {
                        return Err(ScriptReject::PushTooLarge { len: d.len() });
                    }
                    self.stack.push(d.clone());
                }
                Opcode::Drop => {
                    self.pop()?;
                }
                Opcode::Equal => {
                    let (a, b) = (self.pop()?, self.pop()?);
                    self.stack.push(if a == b { vec![1] } else { Vec::new() });
                }
                Opcode::Hash160 => {
                    let v = self.pop()?;
                    self.stack.push(crypto::hash160(&v).to_vec());
                }
                Opcode::CheckLockTimeVerify => {
                    let required = decode_num(self.stack.last().ok_or(ScriptReject::StackUnderflow)?)?;
                    if self.ctx.height < required {
                        return Err(ScriptReject::LocktimeNotMet {
                            required,
                            height: self.ctx.height,
                        });
                    }
                }
                Opcode::CheckSig => {
                    let key = self.pop()?;
                    let sig = self.pop()?;
                    let ok = self.check_one(&key, &sig)?;
                    self.stack.push(if ok { vec![1] } else { Vec::new() });
                }
                Opcode::CheckMultisig => {
                    let ok = self.check_multisig()?;
                    self.stack.push(if ok { vec![1] } else { Vec::new() });
                }
                Opcode::If | Opcode::Else | Opcode::EndIf => unreachable!(),
            }
        }
        if !exec.is_empty() {
            return Err(ScriptReject::UnbalancedConditional);
        }
        Ok(())
    }

    fn verify(&self, key: &[u8], sig: &[u8]) -> bool {
        match (PublicKey::from_bytes(key), Signature::from_bytes(sig)) {
            (Ok(k), Some(s)) => crypto::verify(&k, &self.ctx.sighash, &s),
            _ => false,
        }
    }

    /// An empty signature is a clean "no"; a non-empty one that fails aborts.
    fn check_one(&self, key: &[u8], sig: &[u8]) -> Result<bool, ScriptReject> {
        if sig.is_empty() {
            return Ok(false);
        }
        if self.verify(key, sig) {
            Ok(true)
        } else {
            Err(ScriptReject::BadSignature)
        }
    }

    fn check_multisig(&mut self) -> Result<bool, ScriptReject> {
        let n = self.pop_num()? as usize;
        if n > MAX_MULTISIG_KEYS {
            return Err(ScriptReject::InvalidMultisig);
        }
        let mut keys = (0..n).map(|_| self.pop()).collect::<Result<Vec<_>, _>>()?;
        keys.reverse();
        let m = self.pop_num()? as usize;
        if m > n {
            return Err(ScriptReject::InvalidMultisig);
        }
        let mut sigs = (0..m).map(|_| self.pop()).collect::<Result<Vec<_>, _>>()?;
        sigs.reverse();
        // The extra element consumed by CHECKMULTISIG (the leading OP_0).
        self.pop()?;

        if sigs.iter().all(Vec::is_empty) {
            return Ok(m == 0);
        }
        // Signatures must match keys in order; metadata slots never match.
        let mut key_iter = keys.iter();
        for sig in &sigs {
            if !key_iter.any(|k| self.verify(k, sig)) {
                return Err(ScriptReject::BadSignature);
            }
        }
        Ok(true)
    }
}

fn finish(machine: &Machine<'_>) -> Result<(), ScriptReject> {
    match machine.stack.last() {
        Some(top) if cast_to_bool(top) => Ok(()),
        _ => Err(ScriptReject::EvalFalse),
    }
}

/// Runs `unlocking` then `locking`. For a P2SH locking script the last
/// unlocking element is the redeem script: its hash must match and it then
/// runs on the remaining stack. That element alone may exceed
/// [`MAX_PUSH_LEN`], up to [`DEFAULT_MAX_SCRIPT_LEN`].
pub fn evaluate(locking: &Script, unlocking: &Script, ctx: &ExecutionContext) -> Result<(), ScriptReject> {
    if !unlocking.is_push_only() {
        return Err(ScriptReject::NonPushUnlocking);
    }
    let p2sh = locking.p2sh_hash();
    let pushes = unlocking.ops();
    for (i, op) in pushes.iter().enumerate() {
        if let Opcode::Push(d) = op {
            let limit = if p2sh.is_some() && i + 1 == pushes.len() {
                DEFAULT_MAX_SCRIPT_LEN
            } else {
                MAX_PUSH_LEN
            };
            if d.len() > limit {
                return Err(ScriptReject::PushTooLarge { len: d.len() });
            }
        }
    }

    let mut machine = Machine { stack: Vec::new(), ctx };
    machine.run(unlocking, DEFAULT_MAX_SCRIPT_LEN)?;

    match p2sh {
        Some(hash) => {
            let redeem_bytes = machine.pop()?;
            if crypto::hash160(&redeem_bytes) != hash {
                return Err(ScriptReject::HashMismatch);
            }
            let redeem = Script::parse(&redeem_bytes).map_err(|e| ScriptReject::InvalidRedeemScript(e.to_string()))?;
            machine.run(&redeem, MAX_PUSH_LEN)?;
        }
        None => machine.run(locking, MAX_PUSH_LEN)?,
    }
    finish(&machine)
}
