//! Keys, hybrid encryption, signatures and hashing over secp256k1.
//!
//! Every protocol key in the system is a point on one prime-order group. This
//! module is the only place that names the concrete curve; the rest of the
//! crate works with [`SecretKey`], [`PublicKey`] and [`Ciphertext`].
//!
//! Encryption is ECIES-shaped: an ephemeral Diffie-Hellman agreement, HKDF-SHA256
//! key derivation and ChaCha20-Poly1305. Decrypting with the wrong key fails
//! authentication, which callers rely on to tell "not addressed to me" apart
//! from a real plaintext.

use std::fmt;

use chacha20poly1305::aead::{AeadInPlace, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce, Tag};
use hkdf::Hkdf;
use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use k256::elliptic_curve::sec1::ToEncodedPoint;
use k256::NonZeroScalar;
use rand::{CryptoRng, RngCore};
use ripemd::Ripemd160;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Order of the secp256k1 group, big-endian.
pub const GROUP_ORDER_BE: [u8; 32] = [
    0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xfe,
    0xba, 0xae, 0xdc, 0xe6, 0xaf, 0x48, 0xa0, 0x3b, 0xbf, 0xd2, 0x5e, 0x8c, 0xd0, 0x36, 0x41, 0x41,
];

/// Compressed SEC1 point: parity byte plus x-coordinate.
pub const PUBLIC_KEY_LEN: usize = 33;
pub const SECRET_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const TAG_LEN: usize = 16;
/// Bytes a ciphertext adds on top of its plaintext.
pub const CIPHERTEXT_OVERHEAD: usize = PUBLIC_KEY_LEN + TAG_LEN;

const KDF_INFO: &[u8] = b"sharvot/hybrid-encryption/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("authenticated decryption failed")]
    AuthenticationFailed,
    #[error("invalid public key encoding")]
    InvalidPublicKey,
    #[error("invalid secret key encoding")]
    InvalidSecretKey,
    #[error("malformed ciphertext: {0}")]
    MalformedCiphertext(&'static str),
    #[error("xor key is {key} bytes but the message is {msg}")]
    KeyTooShort { key: usize, msg: usize },
}

/// A nonzero scalar. `Debug` never prints the value.
#[derive(Clone)]
pub struct SecretKey(NonZeroScalar);

impl PartialEq for SecretKey {
    fn eq(&self, other: &Self) -> bool {
        self.to_bytes() == other.to_bytes()
    }
}

impl Eq for SecretKey {}

impl SecretKey {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        Self(NonZeroScalar::random(rng))
    }

    /// Big-endian scalar in `[1, order)`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        let bytes: [u8; SECRET_KEY_LEN] = bytes.try_into().map_err(|_| CryptoError::InvalidSecretKey)?;
        Option::<NonZeroScalar>::from(NonZeroScalar::from_repr(bytes.into()))
            .map(Self)
            .ok_or(CryptoError::InvalidSecretKey)
    }

    pub fn to_bytes(&self) -> [u8; SECRET_KEY_LEN] {
        self.0.to_bytes().into()
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(k256::PublicKey::from_secret_scalar(&self.0))
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

/// A group element, serialized compressed.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PublicKey(k256::PublicKey);

impl PublicKey {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != PUBLIC_KEY_LEN {
            return Err(CryptoError::InvalidPublicKey);
        }
        k256::PublicKey::from_sec1_bytes(bytes)
            .map(Self)
            .map_err(|_| CryptoError::InvalidPublicKey)
    }

    pub fn to_bytes(&self) -> [u8; PUBLIC_KEY_LEN] {
        let point = self.0.to_encoded_point(true);
        point
            .as_bytes()
            .try_into()
            .expect("compressed point is 33 bytes")
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl PartialOrd for PublicKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for PublicKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.to_bytes().cmp(&other.to_bytes())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        PublicKey::from_bytes(&bytes).map_err(serde::de::Error::custom)
    }
}

/// `public = private × G`.
#[derive(Clone, Debug)]
pub struct KeyPair {
    secret: SecretKey,
    public: PublicKey,
}

impl KeyPair {
    pub fn from_secret(secret: SecretKey) -> Self {
        let public = secret.public_key();
        Self { secret, public }
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }
}

pub fn keygen<R: RngCore + CryptoRng>(rng: &mut R) -> KeyPair {
    KeyPair::from_secret(SecretKey::random(rng))
}

/// Output of [`encrypt`]: ephemeral public key, payload and Poly1305 tag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub ephemeral: PublicKey,
    pub payload: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl Ciphertext {
    /// `ephemeral (33) || payload || tag (16)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + CIPHERTEXT_OVERHEAD);
        out.extend_from_slice(&self.ephemeral.to_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < CIPHERTEXT_OVERHEAD {
            return Err(CryptoError::MalformedCiphertext("shorter than the fixed overhead"));
        }
        let ephemeral = PublicKey::from_bytes(&bytes[..PUBLIC_KEY_LEN])
            .map_err(|_| CryptoError::MalformedCiphertext("bad ephemeral key"))?;
        let split = bytes.len() - TAG_LEN;
        Ok(Self {
            ephemeral,
            payload: bytes[PUBLIC_KEY_LEN..split].to_vec(),
            tag: bytes[split..].try_into().expect("tag length"),
        })
    }

    pub fn len(&self) -> usize {
        self.payload.len() + CIPHERTEXT_OVERHEAD
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn derive_cipher(shared_x: &[u8], ephemeral: &PublicKey, recipient: &PublicKey) -> ChaCha20Poly1305 {
    let mut info = Vec::with_capacity(KDF_INFO.len() + 2 * PUBLIC_KEY_LEN);
    info.extend_from_slice(KDF_INFO);
    info.extend_from_slice(&ephemeral.to_bytes());
    info.extend_from_slice(&recipient.to_bytes());
    let mut key = [0u8; 32];
    Hkdf::<Sha256>::new(None, shared_x)
        .expand(&info, &mut key)
        .expect("32 bytes is a valid HKDF output length");
    ChaCha20Poly1305::new(Key::from_slice(&key))
}

/// Encrypts to `recipient`. Each call uses a fresh ephemeral key, so the
/// derived symmetric key is single-use and a fixed nonce is safe.
pub fn encrypt<R: RngCore + CryptoRng>(recipient: &PublicKey, plaintext: &[u8], rng: &mut R) -> Ciphertext {
    let eph = SecretKey::random(rng);
    let ephemeral = eph.public_key();
    let shared = k256::ecdh::diffie_hellman(eph.0, recipient.0.as_affine());
    let cipher = derive_cipher(shared.raw_secret_bytes(), &ephemeral, recipient);
    let mut payload = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(&Nonce::default(), &ephemeral.to_bytes(), &mut payload)
        .expect("plaintext within ChaCha20-Poly1305 limits");
    Ciphertext {
        ephemeral,
        payload,
        tag: tag.into(),
    }
}

pub fn decrypt(secret: &SecretKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let recipient = secret.public_key();
    let shared = k256::ecdh::diffie_hellman(secret.0, ct.ephemeral.0.as_affine());
    let cipher = derive_cipher(shared.raw_secret_bytes(), &ct.ephemeral, &recipient);
    let mut payload = ct.payload.clone();
    cipher
        .decrypt_in_place_detached(
            &Nonce::default(),
            &ct.ephemeral.to_bytes(),
            &mut payload,
            Tag::from_slice(&ct.tag),
        )
        .map_err(|_| CryptoError::AuthenticationFailed)?;
    Ok(payload)
}

/// Convenience: decode then decrypt a serialized ciphertext.
pub fn decrypt_bytes(secret: &SecretKey, bytes: &[u8]) -> Result<Vec<u8>, CryptoError> {
    decrypt(secret, &Ciphertext::from_bytes(bytes)?)
}

/// XOR with the first `msg.len()` bytes of `key`.
pub fn xor_encrypt(key: &[u8], msg: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if key.len() < msg.len() {
        return Err(CryptoError::KeyTooShort {
            key: key.len(),
            msg: msg.len(),
        });
    }
    Ok(msg.iter().zip(key).map(|(m, k)| m ^ k).collect())
}

/// ECDSA signature (RFC 6979 nonces), 64-byte `r || s`.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Signature([u8; SIGNATURE_LEN]);

impl Signature {
    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        bytes.try_into().ok().map(Self)
    }

    pub fn to_bytes(&self) -> [u8; SIGNATURE_LEN] {
        self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(self.0))
    }
}

pub fn sign(secret: &SecretKey, msg: &[u8]) -> Signature {
    let key = SigningKey::from(secret.0);
    let sig: EcdsaSignature = key.sign(msg);
    Signature(sig.to_bytes().into())
}

pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(sig) = EcdsaSignature::from_slice(&sig.0) else {
        return false;
    };
    VerifyingKey::from(&public.0).verify(msg, &sig).is_ok()
}

pub fn sha256(data: &[u8]) -> [u8; 32] {
    Sha256::digest(data).into()
}

pub fn sha256d(data: &[u8]) -> [u8; 32] {
    sha256(&sha256(data))
}

/// `RIPEMD160(SHA256(data))`, the P2SH address digest.
pub fn hash160(data: &[u8]) -> [u8; 20] {
    Ripemd160::digest(sha256(data)).into()
}
