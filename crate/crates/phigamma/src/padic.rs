//! Exact arithmetic in L = Q_p and single-layer extensions (Eisenstein or
//! cyclotomic Q_p(mu_{p^m})) at a fixed absolute precision p^N.
//!
//! A scalar is stored as pi^shift * (c_0 + c_1 pi + ... + c_{e-1} pi^{e-1})
//! with the c_i integers modulo p^N, together with the absolute precision
//! `prec` (in pi-units) to which the value is guaranteed: the represented
//! element is known modulo pi^prec.  Normal form keeps c_0 a unit mod p (or
//! the element is zero-at-precision), so `shift/e` is the exact valuation.

use std::fmt;
use std::sync::Arc;

use num_traits::Zero;

use crate::rat::{pval, rat_int, unit_part, Rat};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Extension {
    /// L = Q_p.
    None,
    /// pi^e = p.
    Eisenstein { degree: usize },
    /// pi = zeta_{p^m} - 1, minimal polynomial Phi_{p^m}(1 + pi).
    Cyclotomic { level: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PadicContext {
    pub p: u64,
    /// Absolute precision exponent: coefficients live modulo p^n.
    pub n: u32,
    pub ext: Extension,
    /// Ramification degree e (length of digit vectors).
    pub e: usize,
    /// p^n.
    pub modulus: u64,
    /// pi^e = -(red[0] + red[1] pi + ... + red[e-1] pi^{e-1}) mod p^n.
    /// red[0] has p-valuation exactly 1 (Eisenstein polynomial).
    red: Vec<u64>,
    /// The unit w with p = pi^e * w, as digits mod p^n.  Computed from the
    /// exact minimal-polynomial coefficients, so it is exact mod p^n.
    p_unit: Vec<u64>,
}

pub type Ctx = Arc<PadicContext>;

fn checked_pow(p: u64, n: u32) -> u64 {
    let mut m: u64 = 1;
    for _ in 0..n {
        m = m.checked_mul(p).expect("precision modulus p^N must fit in 64 bits");
    }
    assert!(m < (1 << 62), "precision modulus p^N too large for exact arithmetic");
    m
}

impl PadicContext {
    /// Finish construction from the exact (big-integer) non-leading
    /// coefficients c_0..c_{e-1} of the monic Eisenstein minimal polynomial
    /// of pi: pi^e = -(c_0 + c_1 pi + ...).  All c_i are divisible by p, so
    /// p = pi^e * w with w = -(c_0/p + c_1/p pi + ...)^{-1} exact mod p^n.
    fn finish(p: u64, n: u32, ext: Extension, e: usize, coeffs: Vec<num_bigint::BigInt>) -> Ctx {
        use num_bigint::BigInt;
        let modulus = checked_pow(p, n);
        let m_big = BigInt::from(modulus);
        let reduce = |x: &BigInt| -> u64 {
            let r = ((x % &m_big) + &m_big) % &m_big;
            r.to_u64_digits().1.first().copied().unwrap_or(0)
        };
        let red: Vec<u64> = coeffs.iter().map(|c| reduce(c)).collect();
        let over_p: Vec<u64> = coeffs
            .iter()
            .map(|c| {
                let (q, r) = num_integer::Integer::div_rem(c, &BigInt::from(p));
                assert!(num_traits::Zero::is_zero(&r), "minimal polynomial must be Eisenstein");
                reduce(&q)
            })
            .collect();
        let mut ctx = PadicContext { p, n, ext, e, modulus, red, p_unit: vec![] };
        let inv = ctx.poly_inv(&over_p);
        ctx.p_unit = inv.iter().map(|&d| ctx.sub_mod(0, d)).collect();
        Arc::new(ctx)
    }

    pub fn qp(p: u64, n: u32) -> Ctx {
        // pi = p: minimal polynomial x - p.
        PadicContext::finish(p, n, Extension::None, 1, vec![num_bigint::BigInt::from(-(p as i64))])
    }

    pub fn eisenstein(p: u64, n: u32, degree: usize) -> Ctx {
        assert!(degree >= 1);
        // pi^e = p: minimal polynomial x^e - p.
        let mut coeffs = vec![num_bigint::BigInt::from(0); degree];
        coeffs[0] = num_bigint::BigInt::from(-(p as i64));
        PadicContext::finish(p, n, Extension::Eisenstein { degree }, degree, coeffs)
    }

    pub fn cyclotomic(p: u64, n: u32, level: u32) -> Ctx {
        assert!(level >= 1);
        let e = (p as usize).pow(level - 1) * (p as usize - 1);
        // Phi_{p^m}(x) = sum_{i<p} x^{i p^{m-1}}; expand at x = 1 + Y exactly.
        let pm1 = (p as usize).pow(level - 1);
        let mut poly = vec![num_bigint::BigInt::from(0); e + 1];
        for i in 0..p as usize {
            let top = i * pm1;
            let mut b = num_bigint::BigInt::from(1);
            poly[0] += &b;
            for j in 1..=top {
                b = b * (top - j + 1) as u64 / j as u64; // C(top, j)
                poly[j] += &b;
            }
        }
        assert!(poly[e] == num_bigint::BigInt::from(1), "cyclotomic minimal polynomial must be monic");
        poly.truncate(e);
        PadicContext::finish(p, n, Extension::Cyclotomic { level }, e, poly)
    }

    pub fn level(&self) -> u32 {
        match self.ext {
            Extension::Cyclotomic { level } => level,
            _ => 0,
        }
    }

    /// Stable identifier used in serialized reports.
    pub fn id(&self) -> String {
        match &self.ext {
            Extension::None => format!("Qp(p={},N={})", self.p, self.n),
            Extension::Eisenstein { degree } => format!("Eis(p={},N={},e={})", self.p, self.n, degree),
            Extension::Cyclotomic { level } => format!("Cyc(p={},N={},m={})", self.p, self.n, level),
        }
    }

    fn mul_mod(&self, a: u64, b: u64) -> u64 {
        ((a as u128 * b as u128) % self.modulus as u128) as u64
    }

    fn add_mod(&self, a: u64, b: u64) -> u64 {
        (a + b) % self.modulus
    }

    fn sub_mod(&self, a: u64, b: u64) -> u64 {
        (a + self.modulus - b % self.modulus) % self.modulus
    }

    /// Inverse of a unit modulo p^n (extended Euclid on u64).
    fn inv_mod(&self, a: u64) -> u64 {
        let (mut t, mut new_t): (i128, i128) = (0, 1);
        let (mut r, mut new_r): (i128, i128) = (self.modulus as i128, (a % self.modulus) as i128);
        while new_r != 0 {
            let q = r / new_r;
            (t, new_t) = (new_t, t - q * new_t);
            (r, new_r) = (new_r, r - q * new_r);
        }
        assert_eq!(r, 1, "inverse of non-unit mod p^N");
        (((t % self.modulus as i128) + self.modulus as i128) % self.modulus as i128) as u64
    }

    /// Reduce a raw polynomial in pi (any degree) to length e.
    fn reduce_poly(&self, mut poly: Vec<u64>) -> Vec<u64> {
        let e = self.e;
        while poly.len() > e {
            let top = poly.pop().unwrap();
            if top != 0 {
                let deg = poly.len(); // coefficient was at pi^deg, deg >= e
                for (i, &r) in self.red.iter().enumerate() {
                    let sub = self.mul_mod(top, r);
                    let idx = deg - e + i;
                    poly[idx] = self.sub_mod(poly[idx], sub);
                }
            }
        }
        poly.resize(e, 0);
        poly
    }

    fn poly_mul(&self, a: &[u64], b: &[u64]) -> Vec<u64> {
        let mut out = vec![0u64; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            if x == 0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate() {
                if y == 0 {
                    continue;
                }
                out[i + j] = self.add_mod(out[i + j], self.mul_mod(x, y));
            }
        }
        self.reduce_poly(out)
    }

    /// Multiply a digit vector by pi^k (k >= 0).
    fn poly_shift_pi(&self, digits: &[u64], k: usize) -> Vec<u64> {
        let mut poly = vec![0u64; k + digits.len()];
        poly[k..].copy_from_slice(digits);
        self.reduce_poly(poly)
    }

    /// Exact pi-valuation of a nonzero digit vector: min over i of
    /// e*val_p(c_i) + i.  The positions are pairwise distinct, so the
    /// minimum is the valuation of the sum.
    fn poly_val(&self, digits: &[u64]) -> Option<i64> {
        let mut best: Option<i64> = None;
        for (i, &c) in digits.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let mut v = 0i64;
            let mut c = c;
            while c % self.p == 0 {
                c /= self.p;
                v += 1;
            }
            let pos = self.e as i64 * v + i as i64;
            if best.map_or(true, |b| pos < b) {
                best = Some(pos);
            }
        }
        best
    }

    /// Divide a digit vector with pi-valuation >= 1 by pi.
    fn poly_div_pi(&self, y: &[u64]) -> Vec<u64> {
        let e = self.e;
        if e == 1 {
            // pi = p: plain division of the residue.
            debug_assert_eq!(y[0] % self.p, 0);
            return vec![y[0] / self.p];
        }
        // pi*x has digits: (pi x)_0 = -red_0 x_{e-1}; (pi x)_i = x_{i-1} - red_i x_{e-1}.
        debug_assert_eq!(y[0] % self.p, 0);
        let red0_unit = self.red[0] / self.p; // red_0 = p * unit
        let inv = self.inv_mod(red0_unit);
        let x_top = self.mul_mod(self.sub_mod(0, y[0] / self.p), inv);
        let mut x = vec![0u64; e];
        x[e - 1] = x_top;
        for i in 1..e {
            x[i - 1] = self.add_mod(y[i], self.mul_mod(x_top, self.red[i]));
        }
        x
    }

    /// Inverse of a digit vector that is a unit (c_0 a unit mod p), by
    /// solving the e x e linear system M x = e_0 over Z/p^n.
    fn poly_inv(&self, u: &[u64]) -> Vec<u64> {
        let e = self.e;
        if e == 1 {
            return vec![self.inv_mod(u[0])];
        }
        // Columns of M are pi^j * u.
        let mut cols = Vec::with_capacity(e);
        for j in 0..e {
            cols.push(self.poly_shift_pi(u, j));
        }
        // Gaussian elimination with unit pivots (M is invertible mod p).
        let mut m = vec![vec![0u64; e]; e]; // m[row][col]
        for (j, col) in cols.iter().enumerate() {
            for i in 0..e {
                m[i][j] = col[i];
            }
        }
        let mut rhs = vec![0u64; e];
        rhs[0] = 1;
        let mut perm: Vec<usize> = Vec::new();
        let mut used = vec![false; e];
        for col in 0..e {
            let row = (0..e)
                .find(|&r| !used[r] && m[r][col] % self.p != 0)
                .expect("unit pivot must exist for a unit element");
            used[row] = true;
            perm.push(row);
            let inv = self.inv_mod(m[row][col]);
            for c in 0..e {
                m[row][c] = self.mul_mod(m[row][c], inv);
            }
            rhs[row] = self.mul_mod(rhs[row], inv);
            for r in 0..e {
                if r != row && m[r][col] != 0 {
                    let f = m[r][col];
                    for c in 0..e {
                        let s = self.mul_mod(f, m[row][c]);
                        m[r][c] = self.sub_mod(m[r][c], s);
                    }
                    let s = self.mul_mod(f, rhs[row]);
                    rhs[r] = self.sub_mod(rhs[r], s);
                }
            }
        }
        let mut x = vec![0u64; e];
        for (col, &row) in perm.iter().enumerate() {
            x[col] = rhs[row];
        }
        x
    }
}

#[derive(Clone)]
pub struct Scalar {
    pub ctx: Ctx,
    shift: i64,
    digits: Vec<u64>,
    /// The value is guaranteed modulo pi^prec (absolute, pi-units).
    prec: i64,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ScalarError {
    #[error("context mismatch: {0} vs {1}")]
    ContextMismatch(String, String),
    #[error("precision exhausted: no guaranteed digits remain ({0})")]
    PrecisionExhausted(String),
    #[error("division by zero-at-precision")]
    DivisionByZero,
}

impl Scalar {
    fn cap(&self) -> i64 {
        self.shift + (self.ctx.e as u32 * self.ctx.n) as i64
    }

    fn make(ctx: Ctx, shift: i64, digits: Vec<u64>, prec: i64) -> Scalar {
        Scalar { ctx, shift, digits, prec }.normalized()
    }

    pub fn zero(ctx: &Ctx) -> Scalar {
        let full = (ctx.e as u32 * ctx.n) as i64;
        Scalar { ctx: Arc::clone(ctx), shift: 0, digits: vec![0; ctx.e], prec: full }
    }

    /// Zero known only modulo pi^prec.
    pub fn zero_at(ctx: &Ctx, prec: i64) -> Scalar {
        Scalar { ctx: Arc::clone(ctx), shift: 0, digits: vec![0; ctx.e], prec }
    }

    pub fn one(ctx: &Ctx) -> Scalar {
        Scalar::from_residue(ctx, 1)
    }

    /// A scalar from an exact small integer given as its value mod p^N.
    /// The p-power part is stripped from the representative before
    /// conversion, so the stored unit digits are exact mod p^N.
    pub fn from_residue(ctx: &Ctx, r: u64) -> Scalar {
        Scalar::from_rat(ctx, &rat_int((r % ctx.modulus) as i64))
    }

    pub fn from_i64(ctx: &Ctx, x: i64) -> Scalar {
        Scalar::from_rat(ctx, &rat_int(x))
    }

    /// Exact embedding of a rational q = p^v * u (u a p-unit): shift e*v,
    /// unit digits u * w^v where p = pi^e * w.  Full storage precision.
    pub fn from_rat(ctx: &Ctx, q: &Rat) -> Scalar {
        if q.is_zero() {
            return Scalar::zero(ctx);
        }
        let v = pval(q, ctx.p);
        let u = unit_part(q, ctx.p);
        // residue of the p-unit u mod p^n
        let m = num_bigint::BigInt::from(ctx.modulus);
        let num = ((u.numer() % &m) + &m) % &m;
        let den = ((u.denom() % &m) + &m) % &m;
        let num = num.to_u64_digits().1.first().copied().unwrap_or(0);
        let den = den.to_u64_digits().1.first().copied().unwrap_or(0);
        let ur = ctx.mul_mod(num, ctx.inv_mod(den));
        let shift = ctx.e as i64 * v;
        let mut w_pow = vec![0u64; ctx.e];
        w_pow[0] = 1;
        let (base, reps) = if v >= 0 {
            (ctx.p_unit.clone(), v as u64)
        } else {
            (ctx.poly_inv(&ctx.p_unit), (-v) as u64)
        };
        for _ in 0..reps {
            w_pow = ctx.poly_mul(&w_pow, &base);
        }
        let digits: Vec<u64> = w_pow.iter().map(|&d| ctx.mul_mod(d, ur)).collect();
        let full = shift + (ctx.e as u32 * ctx.n) as i64;
        // the unit digits are exact mod p^n, so no normalization loss occurs
        Scalar::make(Arc::clone(ctx), shift, digits, full)
    }

    fn normalized(mut self) -> Scalar {
        match self.ctx.poly_val(&self.digits) {
            None => {
                let prec = self.prec;
                let mut z = Scalar::zero_at(&self.ctx, 0);
                z.prec = prec.min(self.cap());
                z
            }
            Some(v) => {
                // Digits below the guaranteed precision only: if even the
                // leading digit sits at/above prec, the value is
                // indistinguishable from zero.
                if self.shift + v >= self.prec {
                    let prec = self.prec;
                    let mut z = Scalar::zero_at(&self.ctx, 0);
                    z.prec = prec;
                    return z;
                }
                if v > 0 {
                    for _ in 0..v {
                        self.digits = self.ctx.poly_div_pi(&self.digits);
                    }
                    self.shift += v;
                }
                self.prec = self.prec.min(self.cap());
                self
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.digits.iter().all(|&d| d == 0)
    }

    /// Valuation in units of val(p) = 1; None when zero-at-precision (then
    /// `prec_val()` bounds it below).
    pub fn val(&self) -> Option<Rat> {
        if self.is_zero() {
            None
        } else {
            Some(Rat::new(self.shift.into(), (self.ctx.e as i64).into()))
        }
    }

    /// Valuation in pi-units (shift), None for zero.
    pub fn val_pi(&self) -> Option<i64> {
        if self.is_zero() {
            None
        } else {
            Some(self.shift)
        }
    }

    /// Guaranteed absolute precision, pi-units.
    pub fn prec_pi(&self) -> i64 {
        self.prec
    }

    /// Guaranteed absolute precision in val(p)-units.
    pub fn prec_val(&self) -> Rat {
        Rat::new(self.prec.into(), (self.ctx.e as i64).into())
    }

    pub fn cap_prec(mut self, prec: i64) -> Scalar {
        self.prec = self.prec.min(prec);
        self.normalized()
    }

    pub fn has_digits(&self) -> bool {
        self.is_zero() || self.shift < self.prec
    }

    fn check_ctx(&self, other: &Scalar) -> Result<(), ScalarError> {
        if self.ctx != other.ctx {
            return Err(ScalarError::ContextMismatch(self.ctx.id(), other.ctx.id()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Scalar) -> Scalar {
        self.check_ctx(other).expect("scalar add");
        if self.is_zero() {
            let mut r = other.clone();
            r.prec = r.prec.min(self.prec);
            return r.normalized();
        }
        if other.is_zero() {
            let mut r = self.clone();
            r.prec = r.prec.min(other.prec);
            return r.normalized();
        }
        let s = self.shift.min(other.shift);
        let a = self.ctx.poly_shift_pi(&self.digits, (self.shift - s) as usize);
        let b = self.ctx.poly_shift_pi(&other.digits, (other.shift - s) as usize);
        let digits: Vec<u64> = a.iter().zip(&b).map(|(&x, &y)| self.ctx.add_mod(x, y)).collect();
        let prec = self.prec.min(other.prec).min(s + (self.ctx.e as u32 * self.ctx.n) as i64);
        Scalar::make(Arc::clone(&self.ctx), s, digits, prec)
    }

    pub fn neg(&self) -> Scalar {
        let digits = self.digits.iter().map(|&d| self.ctx.sub_mod(0, d)).collect();
        Scalar { ctx: Arc::clone(&self.ctx), shift: self.shift, digits, prec: self.prec }
    }

    pub fn sub(&self, other: &Scalar) -> Scalar {
        self.add(&other.neg())
    }

    pub fn mul(&self, other: &Scalar) -> Scalar {
        self.check_ctx(other).expect("scalar mul");
        if self.is_zero() || other.is_zero() {
            // val(xy) >= prec_of_zero + val(other); product is zero at that precision.
            let bound = if self.is_zero() {
                self.prec + other.val_pi().unwrap_or(other.prec)
            } else {
                other.prec + self.val_pi().unwrap_or(self.prec)
            };
            return Scalar::zero_at(&self.ctx, bound.min((self.ctx.e as u32 * self.ctx.n) as i64 + bound.max(0)));
        }
        let digits = self.ctx.poly_mul(&self.digits, &other.digits);
        let s = self.shift + other.shift;
        let prec = (self.prec + other.shift)
            .min(other.prec + self.shift)
            .min(s + (self.ctx.e as u32 * self.ctx.n) as i64);
        Scalar::make(Arc::clone(&self.ctx), s, digits, prec)
    }

    pub fn mul_residue(&self, r: u64) -> Scalar {
        self.mul(&Scalar::from_residue(&self.ctx, r))
    }

    /// Multiply by an integer C known only through its residue r mod p^N
    /// (e.g. an entry of a large binomial table).  Unlike `mul_residue`,
    /// this does not pretend the integer equals r exactly: the result is
    /// guaranteed modulo pi^min(prec + e*val_p(r), shift + e*N).
    pub fn mul_int_residue(&self, r: u64) -> Scalar {
        let ctx = &self.ctx;
        let en = (ctx.e as u32 * ctx.n) as i64;
        let r = r % ctx.modulus;
        let mut vr = 0i64;
        let mut rr = r;
        while rr != 0 && rr % ctx.p == 0 {
            rr /= ctx.p;
            vr += 1;
        }
        if r == 0 {
            vr = ctx.n as i64;
        }
        if self.is_zero() || r == 0 {
            let base = if self.is_zero() { self.prec } else { self.shift };
            return Scalar::zero_at(ctx, base + ctx.e as i64 * vr);
        }
        let digits: Vec<u64> = self.digits.iter().map(|&d| ctx.mul_mod(d, r)).collect();
        let prec = (self.prec + ctx.e as i64 * vr).min(self.shift + en);
        Scalar::make(Arc::clone(ctx), self.shift, digits, prec)
    }

    pub fn mul_i64(&self, x: i64) -> Scalar {
        self.mul(&Scalar::from_i64(&self.ctx, x))
    }

    pub fn div(&self, other: &Scalar) -> Result<Scalar, ScalarError> {
        self.check_ctx(other)?;
        if other.is_zero() {
            return Err(ScalarError::DivisionByZero);
        }
        if !other.has_digits() {
            return Err(ScalarError::PrecisionExhausted("divisor has no guaranteed digits".into()));
        }
        let inv_digits = self.ctx.poly_inv(&other.digits);
        if self.is_zero() {
            return Ok(Scalar::zero_at(&self.ctx, self.prec - other.shift));
        }
        let digits = self.ctx.poly_mul(&self.digits, &inv_digits);
        let s = self.shift - other.shift;
        // Errors: O(pi^{p1}) * u^{-1} and relative error of the divisor.
        let prec = (self.prec - other.shift)
            .min(other.prec - 2 * other.shift + self.shift)
            .min(s + (self.ctx.e as u32 * self.ctx.n) as i64);
        let out = Scalar::make(Arc::clone(&self.ctx), s, digits, prec);
        if !out.has_digits() && !out.is_zero() {
            return Err(ScalarError::PrecisionExhausted("quotient".into()));
        }
        Ok(out)
    }

    pub fn pow(&self, k: i64) -> Scalar {
        if k == 0 {
            return Scalar::one(&self.ctx);
        }
        if k < 0 {
            let inv = Scalar::one(&self.ctx).div(self).expect("pow of non-unit");
            return inv.pow(-k);
        }
        let mut base = self.clone();
        let mut acc = Scalar::one(&self.ctx);
        let mut k = k as u64;
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            base = base.mul(&base);
            k >>= 1;
        }
        acc
    }

    /// Do the two scalars agree modulo pi^min(prec)?
    pub fn eq_at_prec(&self, other: &Scalar) -> bool {
        self.sub(other).is_zero()
    }

    /// Is the scalar zero modulo pi^t (t <= prec for a conclusive answer)?
    pub fn vanishes_to(&self, t: i64) -> bool {
        match self.val_pi() {
            None => true,
            Some(v) => v >= t,
        }
    }

    /// Digits and shift for serialization.
    pub fn parts(&self) -> (i64, &[u64], i64) {
        (self.shift, &self.digits, self.prec)
    }

    /// Coordinates of the value in the basis 1, pi, ..., pi^{e-1}, reduced
    /// modulo p^n.  Only meaningful for integral values (shift >= 0).
    pub fn ring_coords(&self) -> Option<Vec<u64>> {
        if self.shift < 0 {
            return None;
        }
        Some(self.ctx.poly_shift_pi(&self.digits, self.shift as usize))
    }

    /// Galois substitution pi -> (1+pi)^c - 1 (cyclotomic contexts).
    pub fn galois(&self, c: u64) -> Scalar {
        assert!(matches!(self.ctx.ext, Extension::Cyclotomic { .. }));
        if self.is_zero() {
            return self.clone();
        }
        let target = conj_uniformizer(&self.ctx, c);
        let mut acc = Scalar::zero(&self.ctx);
        for &d in self.digits.iter().rev() {
            acc = acc.mul(&target);
            acc = acc.add(&Scalar::from_residue(&self.ctx, d));
        }
        // restore pi^shift as (conjugate pi)^shift
        let shifted = if self.shift >= 0 {
            acc.mul(&target.pow(self.shift))
        } else {
            acc.mul(&target.pow(self.shift))
        };
        shifted.cap_prec(self.prec)
    }
}

/// (1+pi)^c - 1, the conjugate uniformizer for the embedding zeta -> zeta^c.
pub fn conj_uniformizer(ctx: &Ctx, c: u64) -> Scalar {
    let zeta = one_plus_pi(ctx).pow(c as i64);
    zeta.sub(&Scalar::one(ctx))
}

/// 1 + pi (the canonical primitive p^m-th root of unity).
pub fn one_plus_pi(ctx: &Ctx) -> Scalar {
    assert!(ctx.e >= 1);
    let mut digits = vec![0u64; ctx.e];
    digits[0] = 1;
    if ctx.e > 1 {
        digits[1] = 1;
    } else {
        // base field: pi = p
        digits[0] = (1 + ctx.p) % ctx.modulus;
    }
    let full = (ctx.e as u32 * ctx.n) as i64;
    Scalar::make(Arc::clone(ctx), 0, digits, full)
}

/// The primitive root zeta_{p^m} = 1 + pi of a cyclotomic context.
pub fn primitive_root(ctx: &Ctx) -> Scalar {
    assert!(
        matches!(ctx.ext, Extension::Cyclotomic { .. }),
        "primitive_root needs a cyclotomic context"
    );
    one_plus_pi(ctx)
}

/// The additive character e^{2 i pi y} of a rational with p-power
/// denominator: level m = max(0, -val(y)) and the root zeta_{p^m}^{p^m y}.
pub fn additive_character(p: u64, n: u32, y: &Rat) -> (u32, Scalar) {
    if y.is_zero() {
        let ctx = PadicContext::qp(p, n);
        return (0, Scalar::one(&ctx));
    }
    let v = pval(y, p);
    if v >= 0 {
        let ctx = PadicContext::qp(p, n);
        return (0, Scalar::one(&ctx));
    }
    let m = (-v) as u32;
    let pm: i64 = (p as i64).pow(m);
    let scaled = y * Rat::from_integer(pm.into());
    // scaled is p-integral; reduce it mod p^m.
    let pm_big = num_bigint::BigInt::from(pm);
    let num = ((scaled.numer() % &pm_big) + &pm_big) % &pm_big;
    let den = ((scaled.denom() % &pm_big) + &pm_big) % &pm_big;
    // denominator is prime to p; invert mod p^m
    let ctx_small = PadicContext::qp(p, m);
    let num_r = num.to_u64_digits().1.first().copied().unwrap_or(0);
    let den_r = den.to_u64_digits().1.first().copied().unwrap_or(0);
    let t = ctx_small.mul_mod(num_r % ctx_small.modulus, ctx_small.inv_mod(den_r));
    let ctx = PadicContext::cyclotomic(p, n, m);
    let zeta = primitive_root(&ctx);
    (m, zeta.pow(t as i64))
}

/// Embed a level-m cyclotomic scalar into a level-m' context (m' >= m) via
/// pi_m -> (1+pi')^{p^{m'-m}} - 1.
pub fn embed_cyclotomic(x: &Scalar, target: &Ctx) -> Scalar {
    let m = x.ctx.level();
    let m2 = target.level();
    assert!(m2 >= m && m >= 1);
    let q = (target.p as u64).pow(m2 - m);
    let base = one_plus_pi(target).pow(q as i64).sub(&Scalar::one(target));
    let (shift, digits, prec) = x.parts();
    let mut acc = Scalar::zero(target);
    for &d in digits.iter().rev() {
        acc = acc.mul(&base);
        acc = acc.add(&Scalar::from_residue(target, d));
    }
    let acc = acc.mul(&base.pow(shift));
    // one pi_m-digit of information = e'/e pi'-digits
    let ratio = (target.e / x.ctx.e) as i64;
    acc.cap_prec(prec * ratio)
}

/// binom(a, n) for a p-integral scalar a, with the division-by-n! precision
/// loss tracked by scalar arithmetic.
pub fn padic_binomial(a: &Scalar, k: u64) -> Result<Scalar, ScalarError> {
    let ctx = &a.ctx;
    let mut acc = Scalar::one(ctx);
    let mut term = a.clone();
    for i in 0..k {
        let factor = term.div(&Scalar::from_i64(ctx, (i + 1) as i64))?;
        acc = acc.mul(&factor);
        if !acc.has_digits() && !acc.is_zero() {
            return Err(ScalarError::PrecisionExhausted(format!("binom at step {i}")));
        }
        term = term.sub(&Scalar::one(ctx));
    }
    Ok(acc)
}

impl fmt::Debug for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "O(pi^{})", self.prec);
        }
        write!(f, "pi^{}*{:?} + O(pi^{})", self.shift, self.digits, self.prec)
    }
}
