//! Shamir secret sharing over a prime field.
//!
//! A degree-`t` polynomial hides the secret in its constant term. Shares are
//! its values at `x = 1..n`; any `t + 1` of them determine the polynomial by
//! Lagrange interpolation, any `t` leave the secret undetermined.

mod field;

pub use field::{FieldElement, PrimeField};

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShamirError {
    #[error("invalid sharing configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("two shares use the evaluation point x = {0}")]
    DuplicateX(String),
    #[error("shares do not lie on a single polynomial of degree <= {degree}")]
    InconsistentShares { degree: usize },
    #[error("element belongs to a different field")]
    ModulusMismatch,
    #[error("share evaluation point must be nonzero")]
    ZeroEvaluationPoint,
    #[error("encoding error: {0}")]
    Encoding(String),
}

/// `t`-of-`n` parameters: `t + 1` shares reconstruct, `t` reveal nothing.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharingConfig {
    threshold: usize,
    participants: usize,
    field: PrimeField,
}

impl SharingConfig {
    /// Requires `0 <= t < n < p`.
    pub fn new(threshold: usize, participants: usize, field: PrimeField) -> Result<Self, ShamirError> {
        if threshold >= participants {
            return Err(ShamirError::InvalidConfig(format!(
                "threshold t = {threshold} must be below participant count n = {participants}"
            )));
        }
        if num_bigint::BigUint::from(participants) >= *field.modulus() {
            return Err(ShamirError::InvalidConfig(format!(
                "participant count {participants} must be below the modulus {}",
                field.modulus()
            )));
        }
        Ok(Self {
            threshold,
            participants,
            field,
        })
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    pub fn field(&self) -> &PrimeField {
        &self.field
    }

    /// Number of shares needed to reconstruct.
    pub fn quorum(&self) -> usize {
        self.threshold + 1
    }
}

/// `f(x) = a_0 + a_1 x + ... + a_t x^t`; `a_0` is the secret.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Polynomial {
    coefficients: Vec<FieldElement>,
}

impl Polynomial {
    /// Random polynomial of exact degree `degree` with `f(0) = secret`.
    /// The leading coefficient is resampled until nonzero.
    pub fn random<R: RngCore + ?Sized>(secret: FieldElement, degree: usize, rng: &mut R) -> Self {
        let field = secret.field();
        let mut coefficients = Vec::with_capacity(degree + 1);
        coefficients.push(secret);
        for j in 1..=degree {
            let c = if j == degree {
                field.random_nonzero(rng)
            } else {
                field.random(rng)
            };
            coefficients.push(c);
        }
        Self { coefficients }
    }

    /// Explicit coefficients `a_0..a_t`. A zero leading coefficient is
    /// permitted here.
    pub fn from_coefficients(coefficients: Vec<FieldElement>) -> Result<Self, ShamirError> {
        let first = coefficients
            .first()
            .ok_or_else(|| ShamirError::InvalidConfig("polynomial needs a constant term".into()))?;
        if coefficients.iter().any(|c| !c.same_field(first)) {
            return Err(ShamirError::ModulusMismatch);
        }
        Ok(Self { coefficients })
    }

    pub fn coefficients(&self) -> &[FieldElement] {
        &self.coefficients
    }

    /// Nominal degree `t` (number of coefficients minus one).
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn secret(&self) -> &FieldElement {
        &self.coefficients[0]
    }

    /// Horner evaluation.
    pub fn evaluate(&self, x: &FieldElement) -> FieldElement {
        let mut acc = x.field().zero();
        for c in self.coefficients.iter().rev() {
            acc = &(&acc * x) + c;
        }
        acc
    }

    /// Shares at `x = 1..=n`.
    pub fn shares(&self, n: usize) -> Vec<Share> {
        let field = self.secret().field();
        (1..=n as u64)
            .map(|i| {
                let x = field.from_u64(i);
                let y = self.evaluate(&x);
                Share { x, y }
            })
            .collect()
    }
}

/// One point `(x, f(x))` with `x != 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Share {
    x: FieldElement,
    y: FieldElement,
}

impl Share {
    pub fn new(x: FieldElement, y: FieldElement) -> Result<Self, ShamirError> {
        if !x.same_field(&y) {
            return Err(ShamirError::ModulusMismatch);
        }
        if x.is_zero() {
            return Err(ShamirError::ZeroEvaluationPoint);
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &FieldElement {
        &self.x
    }

    pub fn y(&self) -> &FieldElement {
        &self.y
    }

    /// `x || y`, each big-endian at the field's byte width.
    pub fn to_bytes(&self) -> Vec<u8> {
        let width = self.x.field().byte_width();
        let mut out = self.x.to_bytes_be(width);
        out.extend(self.y.to_bytes_be(width));
        out
    }

    pub fn from_bytes(field: &PrimeField, bytes: &[u8]) -> Result<Self, ShamirError> {
        let width = field.byte_width();
        if bytes.len() != 2 * width {
            return Err(ShamirError::Encoding(format!(
                "share encoding must be {} bytes, got {}",
                2 * width,
                bytes.len()
            )));
        }
        let x = field.from_bytes_be(&bytes[..width])?;
        let y = field.from_bytes_be(&bytes[width..])?;
        Self::new(x, y)
    }
}

/// Splits `secret` into `n` shares with a fresh random polynomial of degree `t`.
pub fn split_secret<R: RngCore + ?Sized>(
    secret: &FieldElement,
    cfg: &SharingConfig,
    rng: &mut R,
) -> Result<Vec<Share>, ShamirError> {
    if !cfg.field.contains(secret) {
        return Err(ShamirError::ModulusMismatch);
    }
    let poly = Polynomial::random(secret.clone(), cfg.threshold, rng);
    Ok(poly.shares(cfg.participants))
}

/// Splits with a caller-chosen polynomial of degree at most `t`.
pub fn split_with_polynomial(poly: &Polynomial, cfg: &SharingConfig) -> Result<Vec<Share>, ShamirError> {
    if !cfg.field.contains(poly.secret()) {
        return Err(ShamirError::ModulusMismatch);
    }
    if poly.degree() > cfg.threshold {
        return Err(ShamirError::InvalidConfig(format!(
            "polynomial degree {} exceeds threshold {}",
            poly.degree(),
            cfg.threshold
        )));
    }
    Ok(poly.shares(cfg.participants))
}

/// `f(0)` of the interpolating polynomial.
pub fn reconstruct_secret(shares: &[Share], cfg: &SharingConfig) -> Result<FieldElement, ShamirError> {
    interpolate_at(shares, &cfg.field.zero(), cfg)
}

/// Value at `x0` of the unique degree-`<= t` polynomial through the shares.
///
/// The first `t + 1` shares define the polynomial; every further share must
/// lie on it.
pub fn interpolate_at(
    shares: &[Share],
    x0: &FieldElement,
    cfg: &SharingConfig,
) -> Result<FieldElement, ShamirError> {
    let quorum = cfg.quorum();
    if shares.len() < quorum {
        return Err(ShamirError::InsufficientShares {
            needed: quorum,
            got: shares.len(),
        });
    }
    if !cfg.field.contains(x0)
        || shares
            .iter()
            .any(|s| !cfg.field.contains(&s.x) || !cfg.field.contains(&s.y))
    {
        return Err(ShamirError::ModulusMismatch);
    }
    for (i, a) in shares.iter().enumerate() {
        if shares[..i].iter().any(|b| b.x == a.x) {
            return Err(ShamirError::DuplicateX(a.x.to_string()));
        }
    }

    let (basis, extra) = shares.split_at(quorum);
    for s in extra {
        if lagrange_eval(basis, &s.x) != s.y {
            return Err(ShamirError::InconsistentShares {
                degree: cfg.threshold,
            });
        }
    }
    Ok(lagrange_eval(basis, x0))
}

/// `sum_i y_i * prod_{j != i} (x0 - x_j) / (x_i - x_j)` over distinct `x_i`.
fn lagrange_eval(points: &[Share], x0: &FieldElement) -> FieldElement {
    let field = x0.field();
    let mut acc = field.zero();
    for (i, pi) in points.iter().enumerate() {
        let mut num = field.one();
        let mut den = field.one();
        for (j, pj) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            num = &num * &(x0 - &pj.x);
            den = &den * &(&pi.x - &pj.x);
        }
        let inv = den.inverse().expect("distinct evaluation points");
        acc = &acc + &(&pi.y * &(&num * &inv));
    }
    acc
}
