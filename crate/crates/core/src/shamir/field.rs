//! Arithmetic in a prime field `F_p` with a runtime modulus.
//!
//! The modulus is shared behind an `Arc` so elements stay cheap to clone even
//! for the 256-bit production prime.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, Zero};
use rand::RngCore;

use super::ShamirError;

/// A prime field, identified by its modulus.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PrimeField {
    modulus: Arc<BigUint>,
}

impl PrimeField {
    /// Builds a field after checking that `modulus` is prime.
    pub fn new(modulus: BigUint) -> Result<Self, ShamirError> {
        if !is_probable_prime(&modulus) {
            return Err(ShamirError::InvalidConfig(format!(
                "modulus {modulus} is not prime"
            )));
        }
        Ok(Self {
            modulus: Arc::new(modulus),
        })
    }

    pub fn new_u64(modulus: u64) -> Result<Self, ShamirError> {
        Self::new(BigUint::from(modulus))
    }

    /// The field whose size is the order of the secp256k1 group, so that a
    /// reconstructed secret is directly usable as a private key.
    pub fn curve_order() -> Self {
        Self {
            modulus: Arc::new(BigUint::from_bytes_be(&crate::crypto::GROUP_ORDER_BE)),
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    /// Fixed width in bytes of one big-endian element encoding.
    pub fn byte_width(&self) -> usize {
        self.modulus.bits().div_ceil(8) as usize
    }

    pub fn zero(&self) -> FieldElement {
        self.element(BigUint::zero())
    }

    pub fn one(&self) -> FieldElement {
        self.element(BigUint::one())
    }

    /// Reduces `value` into the field.
    pub fn element(&self, value: BigUint) -> FieldElement {
        FieldElement {
            value: value % self.modulus.as_ref(),
            modulus: Arc::clone(&self.modulus),
        }
    }

    pub fn from_u64(&self, value: u64) -> FieldElement {
        self.element(BigUint::from(value))
    }

    /// Decodes a canonical big-endian representative. Values `>= p` are rejected.
    pub fn from_bytes_be(&self, bytes: &[u8]) -> Result<FieldElement, ShamirError> {
        let value = BigUint::from_bytes_be(bytes);
        if &value >= self.modulus.as_ref() {
            return Err(ShamirError::Encoding(
                "encoded value is not below the modulus".into(),
            ));
        }
        Ok(FieldElement {
            value,
            modulus: Arc::clone(&self.modulus),
        })
    }

    /// Uniform element of `F_p`.
    pub fn random<R: RngCore + ?Sized>(&self, rng: &mut R) -> FieldElement {
        let value = rng.gen_biguint_below(&self.modulus);
        FieldElement {
            value,
            modulus: Arc::clone(&self.modulus),
        }
    }

    /// Uniform element of `F_p \ {0}`.
    pub fn random_nonzero<R: RngCore + ?Sized>(&self, rng: &mut R) -> FieldElement {
        loop {
            let e = self.random(rng);
            if !e.is_zero() {
                return e;
            }
        }
    }

    pub fn contains(&self, e: &FieldElement) -> bool {
        *e.modulus == *self.modulus
    }
}

impl fmt::Debug for PrimeField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F_{}", self.modulus)
    }
}

/// Canonical representative `0 <= value < p`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: BigUint,
    modulus: Arc<BigUint>,
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn field(&self) -> PrimeField {
        PrimeField {
            modulus: Arc::clone(&self.modulus),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    pub fn same_field(&self, other: &FieldElement) -> bool {
        Arc::ptr_eq(&self.modulus, &other.modulus) || self.modulus == other.modulus
    }

    /// Multiplicative inverse via Fermat's little theorem; `None` for zero.
    pub fn inverse(&self) -> Option<FieldElement> {
        if self.is_zero() {
            return None;
        }
        let exp = self.modulus.as_ref() - BigUint::from(2u8);
        Some(self.pow(&exp))
    }

    pub fn pow(&self, exp: &BigUint) -> FieldElement {
        FieldElement {
            value: self.value.modpow(exp, &self.modulus),
            modulus: Arc::clone(&self.modulus),
        }
    }

    /// Fixed-width big-endian encoding, `width >= byte_width()`.
    pub fn to_bytes_be(&self, width: usize) -> Vec<u8> {
        let raw = self.value.to_bytes_be();
        let raw: &[u8] = if self.is_zero() { &[] } else { &raw };
        assert!(raw.len() <= width, "field element wider than {width} bytes");
        let mut out = vec![0u8; width - raw.len()];
        out.extend_from_slice(raw);
        out
    }

    fn assert_same_field(&self, other: &FieldElement) {
        assert!(
            self.same_field(other),
            "field elements from different moduli ({} vs {})",
            self.modulus,
            other.modulus
        );
    }

    fn with_value(&self, value: BigUint) -> FieldElement {
        FieldElement {
            value,
            modulus: Arc::clone(&self.modulus),
        }
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

// Binary operators panic on mismatched moduli; the sharing layer checks
// moduli up front and reports `ModulusMismatch` instead.

impl Add for &FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: &FieldElement) -> FieldElement {
        self.assert_same_field(rhs);
        self.with_value((&self.value + &rhs.value) % self.modulus.as_ref())
    }
}

impl Sub for &FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: &FieldElement) -> FieldElement {
        self.assert_same_field(rhs);
        let m = self.modulus.as_ref();
        self.with_value((&self.value + m - &rhs.value) % m)
    }
}

impl Mul for &FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: &FieldElement) -> FieldElement {
        self.assert_same_field(rhs);
        self.with_value((&self.value * &rhs.value) % self.modulus.as_ref())
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        if self.is_zero() {
            return self.clone();
        }
        self.with_value(self.modulus.as_ref() - &self.value)
    }
}

macro_rules! forward_owned {
    ($tr:ident, $method:ident) => {
        impl $tr for FieldElement {
            type Output = FieldElement;
            fn $method(self, rhs: FieldElement) -> FieldElement {
                (&self).$method(&rhs)
            }
        }
    };
}

forward_owned!(Add, add);
forward_owned!(Sub, sub);
forward_owned!(Mul, mul);

/// Miller-Rabin with the first twelve prime bases. Deterministic below
/// 3.3e24, overwhelmingly reliable above.
pub(crate) fn is_probable_prime(n: &BigUint) -> bool {
    const BASES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    let two = BigUint::from(2u8);
    if n < &two {
        return false;
    }
    for b in BASES {
        let b = BigUint::from(b);
        if n == &b {
            return true;
        }
        if (n % &b).is_zero() {
            return false;
        }
    }
    let n_minus_one = n - BigUint::one();
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'bases: for b in BASES {
        let mut x = BigUint::from(b).modpow(&d, n);
        if x.is_one() || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&two, n);
            if x == n_minus_one {
                continue 'bases;
            }
        }
        return false;
    }
    true
}
