//! Exact rational scalars and their JSON text forms.
//!
//! All feasibility decisions in this crate run over arbitrary-precision
//! rationals. On the wire a rational is either a decimal string
//! (`"0.5"`, `"-3"`, `"1.25"`) or a `[numerator, denominator]` pair.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde_json::Value;

use crate::{Error, Result};

pub type Rat = BigRational;

/// Shorthand for an integer-valued rational.
pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Shorthand for `n/d`.
pub fn frac(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

/// Exact conversion from a finite `f64` (dyadic rational).
pub fn from_f64(x: f64) -> Result<Rat> {
    Rat::from_float(x).ok_or_else(|| Error::Rational(format!("non-finite value {x}")))
}

/// Parses a decimal literal like `-12.75` or `3` exactly.
pub fn parse_decimal(s: &str) -> Result<Rat> {
    let t = s.trim();
    let bad = || Error::Rational(format!("cannot parse {s:?} as a decimal rational"));
    let (sign, digits) = match t.strip_prefix('-') {
        Some(rest) => (-1i64, rest),
        None => (1i64, t.strip_prefix('+').unwrap_or(t)),
    };
    if digits.is_empty() {
        return Err(bad());
    }
    let (whole, fractional) = match digits.split_once('.') {
        Some((w, f)) => (w, f),
        None => (digits, ""),
    };
    if whole.is_empty() && fractional.is_empty() {
        return Err(bad());
    }
    if !whole.chars().all(|c| c.is_ascii_digit()) || !fractional.chars().all(|c| c.is_ascii_digit())
    {
        return Err(bad());
    }
    let mut num: BigInt = if whole.is_empty() {
        BigInt::zero()
    } else {
        whole.parse().map_err(|_| bad())?
    };
    let mut den = BigInt::one();
    for c in fractional.chars() {
        num = num * 10 + (c as u8 - b'0');
        den *= 10;
    }
    Ok(Rat::new(num * sign, den))
}

/// Parses the JSON form of a rational: decimal string, `[num, den]`, or a
/// plain integer number.
pub fn from_json(v: &Value) -> Result<Rat> {
    match v {
        Value::String(s) => parse_decimal(s),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Ok(int(i))
            } else {
                Err(Error::Rational(format!(
                    "non-integer JSON number {n}; use a decimal string for exactness"
                )))
            }
        }
        Value::Array(a) if a.len() == 2 => {
            let num = json_bigint(&a[0])?;
            let den = json_bigint(&a[1])?;
            if den.is_zero() {
                return Err(Error::Rational("zero denominator".into()));
            }
            Ok(Rat::new(num, den))
        }
        other => Err(Error::Rational(format!("unsupported rational form {other}"))),
    }
}

fn json_bigint(v: &Value) -> Result<BigInt> {
    match v {
        Value::Number(n) => n
            .as_i64()
            .map(BigInt::from)
            .ok_or_else(|| Error::Rational(format!("non-integer component {n}"))),
        Value::String(s) => s
            .parse()
            .map_err(|_| Error::Rational(format!("bad integer literal {s:?}"))),
        other => Err(Error::Rational(format!("bad integer component {other}"))),
    }
}

/// Emits the canonical JSON form: a `[num, den]` pair when both fit in
/// `i64`, otherwise an exact decimal string (possible whenever the reduced
/// denominator is of the form 2^a 5^b, which covers everything produced by
/// float conversion), otherwise string components.
pub fn to_json(r: &Rat) -> Value {
    if let (Some(n), Some(d)) = (r.numer().to_i64(), r.denom().to_i64()) {
        return Value::Array(vec![Value::from(n), Value::from(d)]);
    }
    if let Some(s) = to_decimal_string(r) {
        return Value::String(s);
    }
    Value::Array(vec![
        Value::String(r.numer().to_string()),
        Value::String(r.denom().to_string()),
    ])
}

/// Exact terminating decimal expansion, if one exists.
pub fn to_decimal_string(r: &Rat) -> Option<String> {
    let mut den = r.denom().clone();
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    let mut twos = 0u32;
    let mut fives = 0u32;
    while (&den % &two).is_zero() {
        den /= &two;
        twos += 1;
    }
    while (&den % &five).is_zero() {
        den /= &five;
        fives += 1;
    }
    if !den.is_one() {
        return None;
    }
    let shift = twos.max(fives);
    let scale = BigInt::from(10).pow(shift);
    let scaled = (r.numer() * &scale) / r.denom();
    let neg = scaled.is_negative();
    let digits = scaled.abs().to_string();
    let mut s = String::new();
    if neg {
        s.push('-');
    }
    if shift == 0 {
        s.push_str(&digits);
    } else {
        let pad = (shift as usize + 1).saturating_sub(digits.len());
        let padded = format!("{}{}", "0".repeat(pad), digits);
        let (w, f) = padded.split_at(padded.len() - shift as usize);
        s.push_str(w);
        s.push('.');
        s.push_str(f);
    }
    Some(s)
}

/// SMT-LIB 2 rendering of an exact rational literal.
pub fn to_smtlib(r: &Rat) -> String {
    let n = r.numer();
    let d = r.denom();
    let body = if d.is_one() {
        if n.is_negative() {
            return format!("(- {})", n.abs());
        }
        return n.to_string();
    } else if n.is_negative() {
        return format!("(- (/ {} {}))", n.abs(), d);
    } else {
        format!("(/ {n} {d})")
    };
    body
}

/// Nearest-double approximation, for handing exact parameters back to
/// floating-point consumers.
pub fn to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// LP-file rendering: decimal when terminating, `n/d` otherwise is not
/// legal LP syntax so non-dyadic coefficients are rendered as a rounded
/// decimal only after the caller has approved approximation. Exporters in
/// this crate only feed dyadic or small rationals here.
pub fn to_lp_decimal(r: &Rat) -> String {
    to_decimal_string(r).unwrap_or_else(|| {
        // fall back to a high-precision decimal approximation
        let v = r.to_f64().unwrap_or(f64::NAN);
        format!("{v:.17}")
    })
}
