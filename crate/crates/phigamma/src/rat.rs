//! Exact rational helpers: p-adic valuations of rationals and the textual
//! forms used by config files and module descriptors (`u*p^v`, plain
//! fractions).

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

pub type Rat = BigRational;

/// Build a rational from an integer pair.
pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// p-adic valuation of a nonzero rational (val(p) = 1).
pub fn pval(x: &Rat, p: u64) -> i64 {
    assert!(!x.is_zero(), "valuation of zero is +infinity");
    let p = BigInt::from(p);
    let mut v: i64 = 0;
    let mut n = x.numer().abs();
    while (&n % &p).is_zero() {
        n /= &p;
        v += 1;
    }
    let mut d = x.denom().abs();
    while (&d % &p).is_zero() {
        d /= &p;
        v -= 1;
    }
    v
}

/// The prime-to-p part of x: x / p^{val_p(x)}.
pub fn unit_part(x: &Rat, p: u64) -> Rat {
    let v = pval(x, p);
    let pw = Rat::from_integer(BigInt::from(p)).pow(v as i32);
    x / pw
}

/// x * p^k for possibly negative k.
pub fn times_p_pow(x: &Rat, p: u64, k: i64) -> Rat {
    x * Rat::from_integer(BigInt::from(p)).pow(k as i32)
}

/// Parse a rational in any of the forms `3`, `-5/9`, `2*p^-1`, `p^2`,
/// `1/2*p^3` (the `u*p^v` matrix-entry syntax; `p` is substituted).
pub fn parse_rat(s: &str, p: u64) -> Result<Rat, String> {
    let s = s.trim();
    let (unit_str, pow) = match s.split_once("*p^") {
        Some((u, v)) => (u, v.parse::<i64>().map_err(|e| e.to_string())?),
        None => {
            if let Some(v) = s.strip_prefix("p^") {
                return Ok(times_p_pow(&Rat::one(), p, v.parse::<i64>().map_err(|e| e.to_string())?));
            }
            (s, 0)
        }
    };
    let unit = match unit_str.split_once('/') {
        Some((n, d)) => Rat::new(
            n.trim().parse::<BigInt>().map_err(|e| e.to_string())?,
            d.trim().parse::<BigInt>().map_err(|e| e.to_string())?,
        ),
        None => Rat::from_integer(unit_str.parse::<BigInt>().map_err(|e| e.to_string())?),
    };
    Ok(times_p_pow(&unit, p, pow))
}

/// Render a rational as `n` or `n/d`.
pub fn show_rat(x: &Rat) -> String {
    if x.denom().is_one() {
        x.numer().to_string()
    } else {
        format!("{}/{}", x.numer(), x.denom())
    }
}

/// val_p(n!) by Legendre's formula.
pub fn factorial_val(n: u64, p: u64) -> i64 {
    let mut v = 0i64;
    let mut q = p;
    loop {
        v += (n / q) as i64;
        if q > n / p {
            break;
        }
        q *= p;
    }
    v
}
