//! Primitive value types shared by every stage: addresses, assets, token
//! amounts and relative tolerances.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use primitive_types::{U256, U512};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum UnitParseError {
    #[error("invalid hex: {0}")]
    Hex(String),
    #[error("expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
    #[error("invalid decimal amount `{0}`")]
    Decimal(String),
    #[error("invalid tolerance `{0}`")]
    Tolerance(String),
}

/// Strips an optional `0x` prefix and decodes the remaining hex digits.
pub fn decode_hex(s: &str) -> Result<Vec<u8>, UnitParseError> {
    let body = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    hex::decode(body).map_err(|e| UnitParseError::Hex(format!("{s}: {e}")))
}

pub fn encode_hex(bytes: &[u8]) -> String {
    format!("0x{}", hex::encode(bytes))
}

/// 20-byte account identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Address(pub [u8; 20]);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Low 20 bytes of a 32-byte ABI word (how indexed address topics are
    /// laid out).
    pub fn from_word(word: &[u8; 32]) -> Self {
        let mut out = [0u8; 20];
        out.copy_from_slice(&word[12..]);
        Address(out)
    }

    pub fn to_word(self) -> [u8; 32] {
        let mut out = [0u8; 32];
        out[12..].copy_from_slice(&self.0);
        out
    }

    /// Deterministic address derived from a small integer; handy for fixtures.
    pub fn from_low_u64(v: u64) -> Self {
        let mut out = [0u8; 20];
        out[12..].copy_from_slice(&v.to_be_bytes());
        Address(out)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for Address {
    type Err = UnitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = decode_hex(s)?;
        let arr: [u8; 20] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| UnitParseError::Length {
                expected: 20,
                got: bytes.len(),
            })?;
        Ok(Address(arr))
    }
}

impl Serialize for Address {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Address {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Either native Ether or an ERC20 token identified by its contract.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum AssetId {
    Ether,
    Erc20(Address),
}

impl fmt::Display for AssetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssetId::Ether => f.write_str("ETH"),
            AssetId::Erc20(a) => write!(f, "{a}"),
        }
    }
}

impl FromStr for AssetId {
    type Err = UnitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("eth") {
            Ok(AssetId::Ether)
        } else {
            Ok(AssetId::Erc20(s.parse()?))
        }
    }
}

impl Serialize for AssetId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AssetId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Token quantity in base units. 256 bits wide, like the EVM word, so that
/// nothing observed on chain can overflow it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Amount(pub U256);

impl Amount {
    pub const ZERO: Amount = Amount(U256::zero());

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn checked_add(self, other: Amount) -> Option<Amount> {
        self.0.checked_add(other.0).map(Amount)
    }

    pub fn checked_sub(self, other: Amount) -> Option<Amount> {
        self.0.checked_sub(other.0).map(Amount)
    }

    pub fn abs_diff(self, other: Amount) -> Amount {
        if self >= other {
            Amount(self.0 - other.0)
        } else {
            Amount(other.0 - self.0)
        }
    }

    /// Big-endian 32-byte encoding (ABI `uint256`).
    pub fn to_word(self) -> [u8; 32] {
        self.0.to_big_endian()
    }

    pub fn from_word(word: &[u8; 32]) -> Self {
        Amount(U256::from_big_endian(word))
    }

    /// Parses a human decimal such as `1.5` into base units with the given
    /// number of decimals. Extra fractional digits are rejected rather than
    /// rounded.
    pub fn from_units(s: &str, decimals: u32) -> Result<Amount, UnitParseError> {
        let bad = || UnitParseError::Decimal(s.to_string());
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if frac_part.len() > decimals as usize
            || !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(bad());
        }
        let mut digits = String::with_capacity(int_part.len() + decimals as usize);
        digits.push_str(int_part);
        digits.push_str(frac_part);
        for _ in frac_part.len()..decimals as usize {
            digits.push('0');
        }
        let digits = digits.trim_start_matches('0');
        if digits.is_empty() {
            return Ok(Amount::ZERO);
        }
        U256::from_dec_str(digits).map(Amount).map_err(|_| bad())
    }

    /// Lossy conversion for reporting only.
    pub fn to_f64_units(self, decimals: u32) -> f64 {
        let s = self.0.to_string();
        s.parse::<f64>().unwrap_or(f64::INFINITY) / 10f64.powi(decimals as i32)
    }
}

impl From<u64> for Amount {
    fn from(v: u64) -> Self {
        Amount(U256::from(v))
    }
}

impl From<u128> for Amount {
    fn from(v: u128) -> Self {
        Amount(U256::from(v))
    }
}

impl fmt::Display for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Debug for Amount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Amount {
    type Err = UnitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
            return Err(UnitParseError::Decimal(s.to_string()));
        }
        U256::from_dec_str(s)
            .map(Amount)
            .map_err(|_| UnitParseError::Decimal(s.to_string()))
    }
}

impl Serialize for Amount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Amount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Difference of two amounts; used for profit figures which may be negative.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct SignedAmount {
    pub negative: bool,
    pub magnitude: Amount,
}

impl SignedAmount {
    pub fn diff(plus: Amount, minus: Amount) -> Self {
        SignedAmount {
            negative: plus < minus,
            magnitude: plus.abs_diff(minus),
        }
    }

    pub fn positive(a: Amount) -> Self {
        SignedAmount {
            negative: false,
            magnitude: a,
        }
    }

    pub fn is_positive(&self) -> bool {
        !self.negative && !self.magnitude.is_zero()
    }
}

impl fmt::Display for SignedAmount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.negative && !self.magnitude.is_zero() {
            write!(f, "-{}", self.magnitude)
        } else {
            write!(f, "{}", self.magnitude)
        }
    }
}

impl FromStr for SignedAmount {
    type Err = UnitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix('-') {
            Some(rest) => {
                let magnitude: Amount = rest.parse()?;
                Ok(SignedAmount {
                    negative: !magnitude.is_zero(),
                    magnitude,
                })
            }
            None => Ok(SignedAmount::positive(s.parse()?)),
        }
    }
}

impl Serialize for SignedAmount {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SignedAmount {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Relative tolerance `num/den`. Two amounts are equal under it when
/// `|a - b| <= num/den * max(a, b)`; evaluated exactly in 512-bit integers.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Tolerance {
    num: u64,
    den: u64,
}

impl Tolerance {
    pub const EXACT: Tolerance = Tolerance { num: 0, den: 1 };

    /// Requires `0 <= num/den < 1`.
    pub fn new(num: u64, den: u64) -> Result<Self, UnitParseError> {
        if den == 0 || num >= den {
            return Err(UnitParseError::Tolerance(format!("{num}/{den}")));
        }
        Ok(Tolerance { num, den })
    }

    pub fn num(&self) -> u64 {
        self.num
    }

    pub fn den(&self) -> u64 {
        self.den
    }

    pub fn is_exact(&self) -> bool {
        self.num == 0
    }

    pub fn approx_eq(&self, a: Amount, b: Amount) -> bool {
        if self.num == 0 {
            return a == b;
        }
        let diff = a.abs_diff(b).0;
        let max = a.max(b).0;
        let lhs: U512 = diff.full_mul(U256::from(self.den));
        let rhs: U512 = max.full_mul(U256::from(self.num));
        lhs.cmp(&rhs) != Ordering::Greater
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::EXACT
    }
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

/// Accepts `p/q` or a plain decimal such as `0.01`.
impl FromStr for Tolerance {
    type Err = UnitParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || UnitParseError::Tolerance(s.to_string());
        let s = s.trim();
        if let Some((p, q)) = s.split_once('/') {
            let num = p.trim().parse().map_err(|_| bad())?;
            let den = q.trim().parse().map_err(|_| bad())?;
            return Tolerance::new(num, den).map_err(|_| bad());
        }
        let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
        if frac_part.len() > 18
            || !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
            || (int_part.is_empty() && frac_part.is_empty())
        {
            return Err(bad());
        }
        let den = 10u64.pow(frac_part.len() as u32);
        let int_val: u64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| bad())?
        };
        let frac_val: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part.parse().map_err(|_| bad())?
        };
        let num = int_val
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(bad)?;
        let g = gcd(num, den);
        Tolerance::new(num / g, den / g).map_err(|_| bad())
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a.max(1)
}
