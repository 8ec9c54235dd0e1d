//! Rank-2 crystalline coordinate modules.
//!
//! A module is presented in an eigenbasis e_alpha, e_beta of the Frobenius
//! (phi(e_alpha) = alpha^{-1} e_alpha, phi(e_beta) = beta^{-1} e_beta) with
//! the filtration line spanned by e_alpha + e_beta.  Elements are pairs of
//! truncated power series (w_alpha, w_beta).  This file implements:
//!
//! - the classification guard for constructing a module (admissibility
//!   val(alpha) + val(beta) = k-1 and the irreducibility inequalities),
//! - the phi/psi/gamma operators in coordinates (with eigenvalue factors),
//! - the degree-0 filtration test at a cyclotomic level m, in two
//!   independent forms: the binomial residue sums
//!   alpha^m sum_i a_i C(i,j) (zeta-1)^{i-j} = beta^m sum_i b_i C(i,j) (zeta-1)^{i-j}
//!   and the t-expansion route through the inverse-Frobenius substitution,
//! - lattice membership (growth certificates + filtration depth),
//! - a dense kernel solver modulo p^j that realizes the filtration
//!   conditions as linear algebra and produces lattice approximants,
//! - the psi-saturation iteration (the stable core sandwiched between
//!   X^{k-1} N and N), psi fixed points via geometric phi-series,
//! - finite windows of psi-compatible sequences with the upper-triangular
//!   group action w_n = psi^m((1+X)^{p^{n+m} z} v_{n+m}) and its diagonal
//!   companions, plus the uniform-boundedness certificate.

use crate::padic::{Ctx, PadicContext, Scalar};
use crate::rat::{pval, Rat};
use crate::series::{
    binom_table, gamma_act, one_plus_x_pow, order_r_estimate, phi, phi_inverse_m, psi,
    psi_truncated, OrderEstimate, OrderVerdict, PowerSeries, SeriesError, ORDER_SLOPE_TOL,
};
use num_traits::{One, ToPrimitive, Zero};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum WachError {
    #[error("not admissible: val(alpha) + val(beta) = {sum} but the weight demands {need}")]
    NotAdmissible { sum: i64, need: i64 },
    #[error("not irreducible: {0}")]
    NotIrreducible(String),
    #[error("inconclusive precision: {0}")]
    InconclusivePrecision(String),
    #[error("no stabilization within {budget} iterations; module-size trace {trace:?}")]
    NoStabilization { budget: usize, trace: Vec<u64> },
    #[error("budget too small: p^J = {pj} <= series truncation {k}")]
    BudgetTooSmall { pj: u64, k: usize },
    #[error("window exhausted: the action consumes {needed} terms but only {have} remain")]
    WindowExhausted { needed: usize, have: usize },
    #[error("lattice solver inconsistency: a kernel generator fails a condition row")]
    SolverInconsistent,
    #[error("descriptor: {0}")]
    Descriptor(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

fn rat_pow(x: &Rat, m: u32) -> Rat {
    let mut r = Rat::one();
    for _ in 0..m {
        r *= x;
    }
    r
}

// ---------------------------------------------------------------------------
// FilteredPhiModule
// ---------------------------------------------------------------------------

/// Weight-k rank-2 module data: Frobenius eigenvalue reciprocals alpha, beta
/// (val(alpha) >= val(beta)) and the filtration line L(e_alpha + e_beta).
#[derive(Clone, Debug)]
pub struct FilteredPhiModule {
    pub ctx: Ctx,
    /// Weight: the two filtration jumps sit at 0 and k-1.
    pub k: u32,
    pub alpha: Rat,
    pub beta: Rat,
}

/// Default filtration-test depth (cyclotomic levels m = 1..=2).
pub const FIL0_DEPTH: u32 = 2;

/// Validates the classification inequalities and builds the module.
/// Rejections name the failing condition: the determinant condition
/// val(alpha) + val(beta) = k - 1, the irreducible-case inequalities
/// 0 < val(beta) <= val(alpha) (val(beta) = 0 is the reducible case),
/// alpha != beta, alpha != p*beta.
pub fn make_module(ctx: &Ctx, k: u32, alpha: Rat, beta: Rat) -> Result<FilteredPhiModule, WachError> {
    assert!(ctx.e == 1, "module coordinates live over the unramified base");
    assert!(k >= 2);
    let p = ctx.p;
    if alpha.is_zero() || beta.is_zero() {
        return Err(WachError::NotIrreducible("zero eigenvalue".into()));
    }
    let (alpha, beta) = if pval(&alpha, p) >= pval(&beta, p) {
        (alpha, beta)
    } else {
        (beta, alpha)
    };
    let va = pval(&alpha, p);
    let vb = pval(&beta, p);
    if va + vb != (k - 1) as i64 {
        return Err(WachError::NotAdmissible { sum: va + vb, need: (k - 1) as i64 });
    }
    if vb == 0 {
        return Err(WachError::NotIrreducible(
            "val(beta) = 0: the module is reducible (a stable unramified-slope line)".into(),
        ));
    }
    if alpha == beta {
        return Err(WachError::NotIrreducible("alpha = beta".into()));
    }
    let p_rat = Rat::from_integer(p.into());
    if alpha == &p_rat * &beta || beta == &p_rat * &alpha {
        return Err(WachError::NotIrreducible("alpha = p * beta".into()));
    }
    Ok(FilteredPhiModule { ctx: ctx.clone(), k, alpha, beta })
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    /// Slope of the determinant: val(alpha) + val(beta).
    pub tn_det: i64,
    /// Filtration weight of the determinant: k - 1.
    pub th_det: i64,
    /// Slope-minus-weight gaps of the two eigenlines (both must be > 0 for
    /// irreducibility; the filtration line avoids both eigenlines).
    pub line_gaps: (i64, i64),
}

impl FilteredPhiModule {
    pub fn val_alpha(&self) -> i64 {
        pval(&self.alpha, self.ctx.p)
    }

    pub fn val_beta(&self) -> i64 {
        pval(&self.beta, self.ctx.p)
    }

    pub fn alpha_scalar(&self, ctx: &Ctx) -> Scalar {
        Scalar::from_rat(ctx, &self.alpha)
    }

    pub fn beta_scalar(&self, ctx: &Ctx) -> Scalar {
        Scalar::from_rat(ctx, &self.beta)
    }

    pub fn admissibility(&self) -> AdmissibilityReport {
        let (va, vb) = (self.val_alpha(), self.val_beta());
        AdmissibilityReport {
            tn_det: va + vb,
            th_det: (self.k - 1) as i64,
            // The eigenline through e_alpha has slope val(alpha) and sits in
            // filtration degree -(k-1); its gap is (k-1) - val(alpha) =
            // val(beta), and symmetrically for e_beta.
            line_gaps: ((self.k - 1) as i64 - va, (self.k - 1) as i64 - vb),
        }
    }
}

// ---------------------------------------------------------------------------
// WachVector and coordinate operators
// ---------------------------------------------------------------------------

/// An element w_alpha e_alpha + w_beta e_beta with truncated series
/// coordinates.
#[derive(Clone, Debug)]
pub struct WachVector {
    pub wa: PowerSeries,
    pub wb: PowerSeries,
}

impl WachVector {
    pub fn new(wa: PowerSeries, wb: PowerSeries) -> WachVector {
        assert_eq!(wa.trunc(), wb.trunc());
        WachVector { wa, wb }
    }

    pub fn zero(ctx: &Ctx, k: usize) -> WachVector {
        WachVector { wa: PowerSeries::zero(ctx, k), wb: PowerSeries::zero(ctx, k) }
    }

    pub fn e_alpha(w: PowerSeries) -> WachVector {
        let z = PowerSeries::zero(&w.ctx, w.trunc());
        WachVector { wa: w, wb: z }
    }

    pub fn e_beta(w: PowerSeries) -> WachVector {
        let z = PowerSeries::zero(&w.ctx, w.trunc());
        WachVector { wa: z, wb: w }
    }

    pub fn diagonal(w: PowerSeries) -> WachVector {
        WachVector { wa: w.clone(), wb: w }
    }

    pub fn trunc(&self) -> usize {
        self.wa.trunc()
    }

    pub fn add(&self, o: &WachVector) -> WachVector {
        WachVector { wa: self.wa.add(&o.wa), wb: self.wb.add(&o.wb) }
    }

    pub fn sub(&self, o: &WachVector) -> WachVector {
        WachVector { wa: self.wa.sub(&o.wa), wb: self.wb.sub(&o.wb) }
    }

    pub fn scalar_mul(&self, s: &Scalar) -> WachVector {
        WachVector { wa: self.wa.scalar_mul(s), wb: self.wb.scalar_mul(s) }
    }

    pub fn mul_series(&self, u: &PowerSeries) -> WachVector {
        WachVector { wa: self.wa.mul(u), wb: self.wb.mul(u) }
    }

    /// Multiplication by X^s at fixed truncation (top s coefficients drop).
    pub fn x_shift(&self, s: usize) -> WachVector {
        WachVector { wa: x_shift_series(&self.wa, s), wb: x_shift_series(&self.wb, s) }
    }

    pub fn truncate(&self, k: usize) -> WachVector {
        WachVector { wa: self.wa.truncate(k), wb: self.wb.truncate(k) }
    }

    pub fn is_zero(&self) -> bool {
        self.wa.is_zero() && self.wb.is_zero()
    }

    pub fn eq_at_prec(&self, o: &WachVector) -> bool {
        self.wa.eq_at_prec(&o.wa) && self.wb.eq_at_prec(&o.wb)
    }

    /// floor of the minimal coefficient valuation, clamped at 0 from above:
    /// a tail-valuation bound for psi contamination accounting.
    pub fn coeff_val_floor(&self) -> i64 {
        let mut m = 0i64;
        for f in [&self.wa, &self.wb] {
            for c in &f.coeffs {
                let v = match c.val() {
                    Some(v) => v,
                    None => c.prec_val(),
                };
                let fl = v.floor().to_integer().to_i64().unwrap_or(0);
                m = m.min(fl);
            }
        }
        m
    }
}

pub fn x_shift_series(f: &PowerSeries, s: usize) -> PowerSeries {
    let k = f.trunc();
    let mut coeffs = vec![Scalar::zero(&f.ctx); k + 1];
    for i in 0..=k {
        if i + s <= k {
            coeffs[i + s] = f.coeff(i);
        }
    }
    PowerSeries::new(&f.ctx, coeffs)
}

/// phi in coordinates: (w_alpha, w_beta) -> (alpha^{-1} phi(w_alpha),
/// beta^{-1} phi(w_beta)).
pub fn coord_phi(md: &FilteredPhiModule, v: &WachVector) -> WachVector {
    let ctx = &v.wa.ctx;
    let ai = Scalar::from_rat(ctx, &(Rat::one() / &md.alpha));
    let bi = Scalar::from_rat(ctx, &(Rat::one() / &md.beta));
    WachVector { wa: phi(&v.wa).scalar_mul(&ai), wb: phi(&v.wb).scalar_mul(&bi) }
}

/// psi in coordinates: (w_alpha, w_beta) -> (alpha psi(w_alpha),
/// beta psi(w_beta)).  Exact-polynomial discipline: the input is read as an
/// exact polynomial (zero tail); the output truncation shrinks to K/p.
pub fn coord_psi(md: &FilteredPhiModule, v: &WachVector) -> WachVector {
    let ctx = &v.wa.ctx;
    let a = md.alpha_scalar(ctx);
    let b = md.beta_scalar(ctx);
    WachVector { wa: psi(&v.wa).scalar_mul(&a), wb: psi(&v.wb).scalar_mul(&b) }
}

/// psi in coordinates for an exact polynomial input, padded back to the
/// input truncation (the dropped coefficients are genuinely zero).
pub fn coord_psi_exact(md: &FilteredPhiModule, v: &WachVector) -> WachVector {
    coord_psi(md, v).truncate(v.trunc())
}

/// psi in coordinates for a truncated input with unknown tail of coefficient
/// valuation >= tail_val_p: the output carries honest contamination caps.
pub fn coord_psi_truncated(md: &FilteredPhiModule, v: &WachVector, tail_val_p: i64) -> WachVector {
    let ctx = &v.wa.ctx;
    let a = md.alpha_scalar(ctx);
    let b = md.beta_scalar(ctx);
    WachVector {
        wa: psi_truncated(&v.wa, tail_val_p).scalar_mul(&a),
        wb: psi_truncated(&v.wb, tail_val_p).scalar_mul(&b),
    }
}

/// gamma_a coordinatewise (the group acts trivially on the eigenbasis).
pub fn coord_gamma(a: &Scalar, v: &WachVector) -> Result<WachVector, WachError> {
    Ok(WachVector { wa: gamma_act(a, &v.wa)?, wb: gamma_act(a, &v.wb)? })
}

// ---------------------------------------------------------------------------
// Degree-0 filtration test
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Tri {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone)]
pub struct Fil0Row {
    /// Embedding index c (the root of unity is sent to its c-th power).
    pub embedding: u64,
    pub j: u32,
    /// Valuation (pi-units of the level-m cyclotomic ring) of the residue
    /// Delta_j; None when it vanishes at its working precision.
    pub val_pi: Option<i64>,
    pub prec_pi: i64,
    /// Required vanishing order: min(precision, series-tail bound).
    pub threshold: i64,
    pub pass: bool,
    pub conclusive: bool,
}

#[derive(Debug, Clone)]
pub struct Fil0Report {
    pub level: u32,
    /// Verdict of the binomial residue-sum route.
    pub verdict: Tri,
    /// Verdict of the t-expansion (inverse-Frobenius) route.
    pub decomposition: Tri,
    pub rows: Vec<Fil0Row>,
    /// Worst (embedding, j): the row with the smallest margin.
    pub binding: Option<(u64, u32)>,
}

/// Tests whether the level-m inverse-Frobenius image of v lands in the
/// degree-0 filtration: for every j in 0..k-2 and every embedding,
/// Delta_j = alpha^m S_j(w_alpha) - beta^m S_j(w_beta) must vanish, where
/// S_j(w) = sum_{i>=j} w_i C(i,j) (zeta-1)^{i-j}.  Cross-checked by the
/// direct t-expansion: the first k-1 t-coefficients of
/// alpha^m Phi_m(w_alpha) - beta^m Phi_m(w_beta) vanish per embedding.
pub fn fil0_test(md: &FilteredPhiModule, v: &WachVector, level: u32) -> Result<Fil0Report, WachError> {
    assert!(level >= 1);
    let base = &v.wa.ctx;
    let p = base.p;
    let kk = v.trunc();
    let cyc = PadicContext::cyclotomic(p, base.n, level);
    let e = cyc.e as i64;
    let bt = binom_table(&cyc, kk);
    let am = Scalar::from_rat(&cyc, &rat_pow(&md.alpha, level));
    let bm = Scalar::from_rat(&cyc, &rat_pow(&md.beta, level));
    let int_floor = v.coeff_val_floor();

    let mut rows = Vec::new();
    let mut binding: Option<(u64, u32, i64)> = None;
    let pm = p.pow(level);
    for c in 1..pm {
        if c % p == 0 {
            continue;
        }
        let pi_c = crate::padic::conj_uniformizer(&cyc, c);
        for j in 0..=(md.k - 2) as usize {
            let sj = |w: &PowerSeries| -> Scalar {
                // Horner from the top: sum_{i>=j} w_i C(i,j) (zeta^c-1)^{i-j}
                let mut acc = Scalar::zero(&cyc);
                for i in (j..=kk).rev() {
                    acc = acc.mul(&pi_c);
                    let wi = crate::series::lift_scalar(&w.coeff(i), &cyc);
                    acc = acc.add(&wi.mul_int_residue(bt[i][j]));
                }
                acc
            };
            let delta = am.mul(&sj(&v.wa)).sub(&bm.mul(&sj(&v.wb)));
            let tail_bound = (kk as i64 + 1 - j as i64) + e * int_floor;
            let threshold = delta.prec_pi().min(tail_bound);
            let conclusive = threshold > 0;
            let pass = conclusive && delta.vanishes_to(threshold);
            let margin = match delta.val_pi() {
                Some(vp) => vp - threshold,
                None => delta.prec_pi() - threshold,
            };
            if binding.map_or(true, |(_, _, m)| margin < m) {
                binding = Some((c, j as u32, margin));
            }
            rows.push(Fil0Row {
                embedding: c,
                j: j as u32,
                val_pi: delta.val_pi(),
                prec_pi: delta.prec_pi(),
                threshold,
                pass,
                conclusive,
            });
        }
    }
    let verdict = aggregate(rows.iter().map(|r| row_tri(r)));

    // Independent route: expand through the inverse-Frobenius substitution
    // and demand that the t-coefficients 0..k-2 of the eigenvalue-weighted
    // difference vanish.
    let ttr = (md.k - 2) as usize;
    let fa = phi_inverse_m(&v.wa, level, ttr)?;
    let fb = phi_inverse_m(&v.wb, level, ttr)?;
    let mut decomp_rows = Vec::new();
    for (ca, cb) in fa.coords.iter().zip(fb.coords.iter()) {
        assert_eq!(ca.0, cb.0);
        for j in 0..=ttr {
            let d = am.mul(&ca.1[j]).sub(&bm.mul(&cb.1[j]));
            // tail allowance matching the residue-sum route: the unknown
            // X^{K+1} tail (coefficient valuations >= int_floor) feeds the
            // t^j coefficient with valuation at least
            // (K+1-j) - e (m j + val_p(j!)) + e int_floor.
            let tail = (kk as i64 + 1 - j as i64)
                - e * (level as i64 * j as i64 + crate::rat::factorial_val(j as u64, p))
                + e * int_floor;
            let theta = d.prec_pi().min(tail);
            let tri = if theta <= 0 {
                Tri::Inconclusive
            } else if d.vanishes_to(theta) {
                Tri::Pass
            } else {
                Tri::Fail
            };
            decomp_rows.push(tri);
        }
    }
    let decomposition = aggregate(decomp_rows.into_iter());

    Ok(Fil0Report {
        level,
        verdict,
        decomposition,
        rows,
        binding: binding.map(|(c, j, _)| (c, j)),
    })
}

fn row_tri(r: &Fil0Row) -> Tri {
    if !r.conclusive {
        Tri::Inconclusive
    } else if r.pass {
        Tri::Pass
    } else {
        Tri::Fail
    }
}

fn aggregate<I: Iterator<Item = Tri>>(it: I) -> Tri {
    let mut seen_inconclusive = false;
    for t in it {
        match t {
            Tri::Fail => return Tri::Fail,
            Tri::Inconclusive => seen_inconclusive = true,
            Tri::Pass => {}
        }
    }
    if seen_inconclusive {
        Tri::Inconclusive
    } else {
        Tri::Pass
    }
}

// ---------------------------------------------------------------------------
// Lattice membership
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MembershipReport {
    pub order_alpha: OrderEstimate,
    pub order_beta: OrderEstimate,
    pub fil0: Vec<Fil0Report>,
    pub verdict: Tri,
}

/// Membership in the lattice: (i) each coordinate is of order val(alpha)
/// resp. val(beta) (bounded-so-far certificates); (ii) the degree-0
/// filtration test passes at every level m <= depth.
pub fn wach_membership(
    md: &FilteredPhiModule,
    v: &WachVector,
    depth: u32,
) -> Result<MembershipReport, WachError> {
    let ra = Rat::from_integer(md.val_alpha().into());
    let rb = Rat::from_integer(md.val_beta().into());
    let order_alpha = order_r_estimate(&v.wa, &ra, ORDER_SLOPE_TOL);
    let order_beta = order_r_estimate(&v.wb, &rb, ORDER_SLOPE_TOL);
    let mut fil0 = Vec::new();
    for m in 1..=depth {
        fil0.push(fil0_test(md, v, m)?);
    }
    let order_tri = |o: &OrderEstimate| {
        if matches!(o.verdict, OrderVerdict::Growing) {
            Tri::Fail
        } else if o.inconclusive {
            Tri::Inconclusive
        } else {
            Tri::Pass
        }
    };
    let verdict = aggregate(
        [order_tri(&order_alpha), order_tri(&order_beta)]
            .into_iter()
            .chain(fil0.iter().map(|r| r.verdict)),
    );
    Ok(MembershipReport { order_alpha, order_beta, fil0, verdict })
}

// ---------------------------------------------------------------------------
// Dense kernel solver modulo p^l
// ---------------------------------------------------------------------------

fn val_u64(x: u64, p: u64, l: u32) -> u32 {
    if x == 0 {
        return l;
    }
    let mut v = 0;
    let mut y = x;
    while y % p == 0 {
        y /= p;
        v += 1;
    }
    v
}

fn inv_mod(a: u64, q: u64) -> u64 {
    // extended Euclid for a coprime to q
    let (mut r0, mut r1) = (q as i128, (a % q) as i128);
    let (mut t0, mut t1) = (0i128, 1i128);
    while r1 != 0 {
        let d = r0 / r1;
        let r2 = r0 - d * r1;
        r0 = r1;
        r1 = r2;
        let t2 = t0 - d * t1;
        t0 = t1;
        t1 = t2;
    }
    assert_eq!(r0, 1, "inv_mod of a non-unit");
    t0.rem_euclid(q as i128) as u64
}

fn mul_q(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

fn sub_q(a: u64, b: u64, q: u64) -> u64 {
    (a + q - b % q) % q
}

/// Basis of { x : A x = 0 mod p^l } via diagonalization over Z/p^l with
/// minimal-valuation pivoting (row scalings, row and column eliminations,
/// tracking the column transform).
pub fn kernel_mod_p_power(a_in: &[Vec<u64>], p: u64, l: u32) -> Vec<Vec<u64>> {
    let q = p.pow(l);
    let c = a_in.first().map_or(0, |r| r.len());
    if c == 0 {
        return Vec::new();
    }
    let r = a_in.len();
    let mut a: Vec<Vec<u64>> = a_in.iter().map(|row| row.iter().map(|&x| x % q).collect()).collect();
    // columns of qm express the new coordinates in terms of the old ones
    let mut qm: Vec<Vec<u64>> = (0..c)
        .map(|i| (0..c).map(|j| if i == j { 1 } else { 0 }).collect())
        .collect();
    let mut piv_vals: Vec<u32> = Vec::new();
    let mut t = 0usize;
    while t < r.min(c) {
        // minimal-valuation entry of the trailing submatrix
        let mut best: Option<(usize, usize, u32)> = None;
        for i in t..r {
            for j in t..c {
                let v = val_u64(a[i][j], p, l);
                if v < l && best.map_or(true, |(_, _, bv)| v < bv) {
                    best = Some((i, j, v));
                }
            }
        }
        let (bi, bj, bv) = match best {
            Some(x) => x,
            None => break,
        };
        a.swap(t, bi);
        for row in a.iter_mut() {
            row.swap(t, bj);
        }
        for row in qm.iter_mut() {
            row.swap(t, bj);
        }
        // scale the pivot row so the pivot becomes exactly p^bv
        let unit = a[t][t] / p.pow(bv);
        let ui = inv_mod(unit % q, q);
        for j in 0..c {
            a[t][j] = mul_q(a[t][j], ui, q);
        }
        let plead = p.pow(bv);
        // clear the pivot column below
        for i in (t + 1)..r {
            if a[i][t] != 0 {
                let f = a[i][t] / plead;
                for j in 0..c {
                    let s = mul_q(f, a[t][j], q);
                    a[i][j] = sub_q(a[i][j], s, q);
                }
            }
        }
        // clear the pivot row to the right by column operations
        for j in (t + 1)..c {
            if a[t][j] != 0 {
                let f = a[t][j] / plead;
                for i in 0..r {
                    let s = mul_q(f, a[i][t], q);
                    a[i][j] = sub_q(a[i][j], s, q);
                }
                for i in 0..c {
                    let s = mul_q(f, qm[i][t], q);
                    qm[i][j] = sub_q(qm[i][j], s, q);
                }
            }
        }
        piv_vals.push(bv);
        t += 1;
    }
    let mut out = Vec::new();
    for (i, &v) in piv_vals.iter().enumerate() {
        if v > 0 {
            let s = p.pow(l - v);
            let col: Vec<u64> = (0..c).map(|row| mul_q(qm[row][i], s, q)).collect();
            if col.iter().any(|&x| x != 0) {
                out.push(col);
            }
        }
    }
    for j in piv_vals.len()..c {
        out.push((0..c).map(|row| qm[row][j]).collect());
    }
    out
}

// ---------------------------------------------------------------------------
// Howell echelon form and LatticeApprox
// ---------------------------------------------------------------------------

/// Canonical echelon basis of the row span over Z/p^l: pivots normalized to
/// p-powers, annihilator rows included, entries above pivots reduced.  Two
/// submodules are equal iff their forms are identical.
pub fn howell_form(rows: Vec<Vec<u64>>, p: u64, l: u32) -> Vec<Vec<u64>> {
    let q = p.pow(l);
    let d = match rows.first() {
        Some(r) => r.len(),
        None => return Vec::new(),
    };
    let mut pool: Vec<Vec<u64>> = rows
        .into_iter()
        .map(|row| row.into_iter().map(|x| x % q).collect::<Vec<u64>>())
        .filter(|row| row.iter().any(|&x| x != 0))
        .collect();
    let mut pivots: Vec<(usize, u32, Vec<u64>)> = Vec::new();
    for col in 0..d {
        let (group, rest): (Vec<_>, Vec<_>) = pool
            .into_iter()
            .partition(|row| row.iter().position(|&x| x != 0) == Some(col));
        pool = rest;
        if group.is_empty() {
            continue;
        }
        // minimal valuation leads
        let mut best_idx = 0;
        let mut best_val = l;
        for (i, row) in group.iter().enumerate() {
            let v = val_u64(row[col], p, l);
            if v < best_val {
                best_val = v;
                best_idx = i;
            }
        }
        let mut best = group[best_idx].clone();
        let unit = best[col] / p.pow(best_val);
        let ui = inv_mod(unit % q, q);
        for x in best.iter_mut() {
            *x = mul_q(*x, ui, q);
        }
        let plead = p.pow(best_val);
        for (i, mut row) in group.into_iter().enumerate() {
            if i == best_idx {
                continue;
            }
            let f = row[col] / plead;
            for (x, &b) in row.iter_mut().zip(best.iter()) {
                *x = sub_q(*x, mul_q(f, b, q), q);
            }
            if row.iter().any(|&x| x != 0) {
                pool.push(row);
            }
        }
        // Howell closure: the p^{l-v} multiple of the pivot row has a later
        // leading position and must be spanned by later pivots.
        if best_val > 0 {
            let s = p.pow(l - best_val);
            let ann: Vec<u64> = best.iter().map(|&x| mul_q(x, s, q)).collect();
            if ann.iter().any(|&x| x != 0) {
                pool.push(ann);
            }
        }
        pivots.push((col, best_val, best));
    }
    // reduce entries above later pivots
    let snapshot: Vec<(usize, u32, Vec<u64>)> = pivots.clone();
    for (idx, (_, _, row)) in pivots.iter_mut().enumerate() {
        for (c2, v2, row2) in snapshot.iter().skip(idx + 1) {
            let plead = p.pow(*v2);
            let x = row[*c2];
            let f = x / plead;
            if f != 0 {
                for (y, &b) in row.iter_mut().zip(row2.iter()) {
                    *y = sub_q(*y, mul_q(f, b, q), q);
                }
            }
        }
    }
    pivots.into_iter().map(|(_, _, row)| row).collect()
}

/// Finite approximation of an X-stable lattice of coordinate pairs: the
/// span over Z/p^level of polynomial pairs modulo X^{K+1}, closed under
/// multiplication by X, held in Howell echelon form.  A row lists the K+1
/// first-coordinate coefficients then the K+1 second-coordinate ones.
#[derive(Clone, Debug, PartialEq)]
pub struct LatticeApprox {
    pub p: u64,
    pub level: u32,
    pub k_trunc: usize,
    pub basis: Vec<Vec<u64>>,
}

pub fn x_shift_row(g: &[u64], s: usize, kk: usize) -> Vec<u64> {
    let w = kk + 1;
    let mut out = vec![0u64; 2 * w];
    for half in 0..2 {
        for i in 0..w {
            if i + s < w {
                out[half * w + i + s] = g[half * w + i];
            }
        }
    }
    out
}

impl LatticeApprox {
    pub fn from_generators(p: u64, level: u32, k_trunc: usize, gens: Vec<Vec<u64>>) -> LatticeApprox {
        let mut all = Vec::new();
        for g in &gens {
            assert_eq!(g.len(), 2 * (k_trunc + 1));
            for s in 0..=k_trunc {
                all.push(x_shift_row(g, s, k_trunc));
            }
        }
        LatticeApprox { p, level, k_trunc, basis: howell_form(all, p, level) }
    }

    pub fn contains(&self, v: &[u64]) -> bool {
        let q = self.p.pow(self.level);
        let mut v: Vec<u64> = v.iter().map(|&x| x % q).collect();
        for row in &self.basis {
            let col = row.iter().position(|&x| x != 0).unwrap();
            let vv = val_u64(row[col], self.p, self.level);
            let plead = self.p.pow(vv);
            if v[col] != 0 {
                if v[col] % plead != 0 {
                    return false;
                }
                let f = v[col] / plead;
                for (x, &b) in v.iter_mut().zip(row.iter()) {
                    *x = sub_q(*x, mul_q(f, b, q), q);
                }
            }
        }
        v.iter().all(|&x| x == 0)
    }

    pub fn is_subset_of(&self, other: &LatticeApprox) -> bool {
        self.basis.iter().all(|row| other.contains(row))
    }

    /// The module scaled by p^s (entries reduced mod p^level).
    pub fn scaled(&self, s: u32) -> LatticeApprox {
        let q = self.p.pow(self.level);
        let f = self.p.pow(s) % q;
        let rows: Vec<Vec<u64>> = self
            .basis
            .iter()
            .map(|row| row.iter().map(|&x| ((x as u128 * f as u128) % q as u128) as u64).collect())
            .collect();
        LatticeApprox::from_generators(self.p, self.level, self.k_trunc, rows)
    }

    /// Coordinate shadow: forget X-degrees above `deg` in both halves.
    /// The projection of a span is the span of the projected rows.
    pub fn project(&self, deg: usize) -> LatticeApprox {
        assert!(deg <= self.k_trunc);
        let w = self.k_trunc + 1;
        let rows: Vec<Vec<u64>> = self
            .basis
            .iter()
            .map(|row| {
                let mut out = Vec::with_capacity(2 * (deg + 1));
                out.extend_from_slice(&row[..=deg]);
                out.extend_from_slice(&row[w..w + deg + 1]);
                out
            })
            .collect();
        LatticeApprox {
            p: self.p,
            level: self.level,
            k_trunc: deg,
            basis: howell_form(rows, self.p, self.level),
        }
    }

    /// log_p of the module cardinality: sum over pivots of (level - val).
    pub fn size_log(&self) -> u64 {
        self.basis
            .iter()
            .map(|row| {
                let col = row.iter().position(|&x| x != 0).unwrap();
                (self.level - val_u64(row[col], self.p, self.level)) as u64
            })
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Filtration conditions as residue rows; lattice solving
// ---------------------------------------------------------------------------

/// Residue of a rational with p-coprime denominator modulo p^l.
pub fn rat_residue(x: &Rat, p: u64, l: u32) -> Option<u64> {
    let q = num_bigint::BigInt::from(p.pow(l));
    let den = x.denom();
    if (den % num_bigint::BigInt::from(p)).is_zero() && !den.is_zero() && p > 1 {
        if pval(x, p) < 0 {
            return None;
        }
    }
    // x = num/den with den a p-unit: num * den^{-1} mod p^l
    let qn = p.pow(l);
    let num = (x.numer() % &q + &q) % &q;
    let den_r = ((x.denom() % &q + &q) % &q).to_u64().unwrap();
    let num_r = num.to_u64().unwrap();
    Some(mul_q(num_r, inv_mod(den_r, qn), qn))
}

/// Linear condition rows (over Z/p^l) expressing the degree-0 filtration
/// test at levels m = 1..=depth on coefficient pairs modulo X^{K+1}.  One
/// row per (level, j, cyclotomic ring coordinate); the embedding c = 1
/// suffices since the others are its conjugates.
pub fn fil0_rows(md: &FilteredPhiModule, k_trunc: usize, depth: u32, l: u32) -> Vec<Vec<u64>> {
    let p = md.ctx.p;
    let q = p.pow(l);
    let w = k_trunc + 1;
    let mut rows = Vec::new();
    for lvl in 1..=depth {
        let cyc = PadicContext::cyclotomic(p, l, lvl);
        let e = cyc.e;
        let bt = binom_table(&cyc, k_trunc);
        let am = Scalar::from_rat(&cyc, &rat_pow(&md.alpha, lvl));
        let bm = Scalar::from_rat(&cyc, &rat_pow(&md.beta, lvl));
        let pi = crate::padic::conj_uniformizer(&cyc, 1);
        let mut pipow = vec![Scalar::one(&cyc)];
        for i in 1..=k_trunc {
            pipow.push(pipow[i - 1].mul(&pi));
        }
        for j in 0..=(md.k - 2) as usize {
            let mut rowset = vec![vec![0u64; 2 * w]; e];
            for i in j..=k_trunc {
                let sa = am.mul_int_residue(bt[i][j]).mul(&pipow[i - j]);
                let ca = sa.ring_coords().expect("integral filtration coefficient");
                let sb = bm.mul_int_residue(bt[i][j]).mul(&pipow[i - j]);
                let cb = sb.ring_coords().expect("integral filtration coefficient");
                for r in 0..e {
                    rowset[r][i] = ca[r] % q;
                    rowset[r][w + i] = (q - cb[r] % q) % q;
                }
            }
            rows.extend(rowset);
        }
    }
    rows
}

/// Kernel generators (modulo p^l, X^{K+1}) of the filtration conditions.
pub fn wach_kernel_generators(
    md: &FilteredPhiModule,
    k_trunc: usize,
    depth: u32,
    l: u32,
) -> Result<Vec<Vec<u64>>, WachError> {
    let rows = fil0_rows(md, k_trunc, depth, l);
    let gens = kernel_mod_p_power(&rows, md.ctx.p, l);
    // consistency recheck: every generator annihilates every condition row
    let q = md.ctx.p.pow(l);
    for g in &gens {
        for row in &rows {
            let mut acc: u64 = 0;
            for (a, b) in row.iter().zip(g.iter()) {
                acc = (acc + mul_q(*a, *b, q)) % q;
            }
            if acc != 0 {
                return Err(WachError::SolverInconsistent);
            }
        }
    }
    Ok(gens)
}

/// Solves the filtration conditions (levels m <= depth) modulo
/// (p^level, X^{K+1}) and returns the X-closed lattice approximant.
pub fn solve_wach_lattice(
    md: &FilteredPhiModule,
    level: u32,
    k_trunc: usize,
    depth: u32,
) -> Result<LatticeApprox, WachError> {
    let gens = wach_kernel_generators(md, k_trunc, depth, level)?;
    Ok(LatticeApprox::from_generators(md.ctx.p, level, k_trunc, gens))
}

/// Reads a residue row as a pair of integer-coefficient polynomials.
pub fn row_to_vector(ctx: &Ctx, row: &[u64], k_trunc: usize) -> WachVector {
    let w = k_trunc + 1;
    assert_eq!(row.len(), 2 * w);
    let mk = |half: &[u64]| {
        PowerSeries::new(ctx, half.iter().map(|&x| Scalar::from_rat(ctx, &Rat::from_integer(x.into()))).collect())
    };
    WachVector { wa: mk(&row[..w]), wb: mk(&row[w..]) }
}

/// Coefficient residues of a vector modulo p^l (None when a coefficient has
/// negative valuation or too little precision to read the residue).
pub fn vector_to_row(v: &WachVector, l: u32) -> Option<Vec<u64>> {
    let p = v.wa.ctx.p;
    let q = p.pow(l);
    let mut out = Vec::with_capacity(2 * (v.trunc() + 1));
    for f in [&v.wa, &v.wb] {
        for c in &f.coeffs {
            if c.prec_pi() < l as i64 {
                return None;
            }
            let coords = c.ring_coords()?;
            out.push(coords[0] % q);
        }
    }
    Some(out)
}

// ---------------------------------------------------------------------------
// Exact lattice operators (polynomial pairs over Z/p^l)
// ---------------------------------------------------------------------------

fn psi_poly(a: &[u64], p: u64, q: u64, pascal: &[Vec<u64>]) -> Vec<u64> {
    let kk = a.len() - 1;
    // to the (1+X)-basis: c_j = sum_{i>=j} a_i C(i,j) (-1)^{i-j}
    let mut c = vec![0u64; kk + 1];
    for j in 0..=kk {
        let mut acc = 0u64;
        for i in j..=kk {
            let t = mul_q(a[i], pascal[i][j], q);
            acc = if (i - j) % 2 == 0 { (acc + t) % q } else { sub_q(acc, t, q) };
        }
        c[j] = acc;
    }
    let k_out = kk / p as usize;
    let d: Vec<u64> = (0..=k_out).map(|j| c[p as usize * j]).collect();
    let mut out = vec![0u64; kk + 1];
    for n in 0..=k_out {
        let mut acc = 0u64;
        for j in n..=k_out {
            acc = (acc + mul_q(d[j], pascal[j][n], q)) % q;
        }
        out[n] = acc;
    }
    out
}

fn poly_mul_mod(a: &[u64], b: &[u64], q: u64, kk: usize) -> Vec<u64> {
    let mut out = vec![0u64; kk + 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0 || i > kk {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            if y == 0 || i + j > kk {
                continue;
            }
            out[i + j] = (out[i + j] + mul_q(x, y, q)) % q;
        }
    }
    out
}

fn gamma_poly(f: &[u64], a: u64, q: u64) -> Vec<u64> {
    let kk = f.len() - 1;
    // w(X) = (1+X)^a - 1 mod X^{kk+1} with exact integer binomials
    let mut w = vec![0u64; kk + 1];
    let qa = num_bigint::BigUint::from(q);
    let mut b = num_bigint::BigUint::one();
    for n in 1..=kk.min(a as usize) {
        b = b * (a - n as u64 + 1) / num_bigint::BigUint::from(n);
        w[n] = (&b % &qa).to_u64().unwrap();
    }
    // Horner composition f(w)
    let mut res = vec![0u64; kk + 1];
    for &fi in f.iter().rev() {
        res = poly_mul_mod(&res, &w, q, kk);
        res[0] = (res[0] + fi) % q;
    }
    res
}

/// psi on a lattice row (exact on polynomial pairs), with the eigenvalue
/// factors alpha, beta applied to the two halves.
pub fn lattice_psi_row(md: &FilteredPhiModule, lat: &LatticeApprox, row: &[u64]) -> Vec<u64> {
    let p = lat.p;
    let q = p.pow(lat.level);
    let w = lat.k_trunc + 1;
    let cyc_free = PadicContext::qp(p, lat.level);
    let pascal = binom_table(&cyc_free, lat.k_trunc);
    let ar = rat_residue(&md.alpha, p, lat.level).expect("alpha residue");
    let br = rat_residue(&md.beta, p, lat.level).expect("beta residue");
    let mut out = Vec::with_capacity(2 * w);
    let pa = psi_poly(&row[..w], p, q, &pascal);
    out.extend(pa.into_iter().map(|x| mul_q(x, ar, q)));
    let pb = psi_poly(&row[w..], p, q, &pascal);
    out.extend(pb.into_iter().map(|x| mul_q(x, br, q)));
    out
}

/// gamma_a on a lattice row, coordinatewise (a a positive integer unit).
pub fn lattice_gamma_row(lat: &LatticeApprox, row: &[u64], a: u64) -> Vec<u64> {
    assert!(a % lat.p != 0);
    let q = lat.p.pow(lat.level);
    let w = lat.k_trunc + 1;
    let mut out = gamma_poly(&row[..w], a, q);
    out.extend(gamma_poly(&row[w..], a, q));
    out
}

// ---------------------------------------------------------------------------
// psi-saturation iteration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DsharpResult {
    pub lattice: LatticeApprox,
    /// First iteration index at which the module stopped growing.
    pub stabilization_step: usize,
    /// log_p module sizes per iteration.
    pub trace: Vec<u64>,
}

/// Iterates M -> module generated by M and psi(M), starting from
/// X^h * nhat, until stable: the finite-level approximation of the maximal
/// psi-surjective core.
pub fn dsharp_iterate(
    md: &FilteredPhiModule,
    nhat: &LatticeApprox,
    h: u32,
    budget: usize,
) -> Result<DsharpResult, WachError> {
    let shifted: Vec<Vec<u64>> = nhat
        .basis
        .iter()
        .map(|row| x_shift_row(row, h as usize, nhat.k_trunc))
        .collect();
    let mut cur = LatticeApprox::from_generators(nhat.p, nhat.level, nhat.k_trunc, shifted);
    let mut trace = vec![cur.size_log()];
    for step in 1..=budget {
        let mut gens = cur.basis.clone();
        for row in &cur.basis {
            gens.push(lattice_psi_row(md, &cur, row));
        }
        let next = LatticeApprox::from_generators(cur.p, cur.level, cur.k_trunc, gens);
        trace.push(next.size_log());
        if next == cur {
            return Ok(DsharpResult { lattice: cur, stabilization_step: step, trace });
        }
        cur = next;
    }
    Err(WachError::NoStabilization { budget, trace })
}

// ---------------------------------------------------------------------------
// psi fixed points
// ---------------------------------------------------------------------------

/// From a seed x, forms y = (1+X) phi(X^{k} x) (psi(y) = 0 by basis
/// orthogonality) and returns the geometric series z = sum_{j<=J} phi^j(y),
/// a psi fixed point at truncation: term j only contributes above X-degree
/// p^j, so p^J must exceed the truncation order.
pub fn psi_fixed_point(
    md: &FilteredPhiModule,
    x: &WachVector,
    budget_j: u32,
) -> Result<WachVector, WachError> {
    let kk = x.trunc();
    let p = x.wa.ctx.p;
    let pj = p.checked_pow(budget_j).unwrap_or(u64::MAX);
    if pj <= kk as u64 {
        return Err(WachError::BudgetTooSmall { pj, k: kk });
    }
    let h = md.k - 1;
    let y0 = coord_phi(md, &x.x_shift(h as usize + 1));
    let y = y0.add(&y0.x_shift(1));
    let mut z = y.clone();
    let mut term = y;
    for _ in 1..=budget_j {
        term = coord_phi(md, &term);
        z = z.add(&term);
    }
    Ok(z)
}

// ---------------------------------------------------------------------------
// psi-compatible sequences and the upper-triangular action
// ---------------------------------------------------------------------------

/// A finite window v_0..v_T of a psi-compatible sequence
/// (psi(v_{n}) = v_{n-1} in module coordinates), with an account of how
/// many terms group actions have consumed.
#[derive(Clone)]
pub struct PsiSequence {
    pub terms: Vec<WachVector>,
    pub consumed: usize,
}

impl PsiSequence {
    pub fn window(&self) -> usize {
        self.terms.len()
    }
}

/// Builds the window v_0..v_T downward from a top polynomial term:
/// v_{n-1} = psi(v_n) exactly.
pub fn build_psi_sequence(md: &FilteredPhiModule, top: &WachVector, window_t: usize) -> PsiSequence {
    let mut terms = vec![top.clone()];
    for _ in 0..window_t {
        let last = terms.last().unwrap();
        terms.push(coord_psi_exact(md, last));
    }
    terms.reverse();
    PsiSequence { terms, consumed: 0 }
}

/// The matrix [[1, z], [0, a p^t]] (a a p-unit): every upper-triangular
/// element with nonzero determinant, decomposed as
/// diag(1, p^t) diag(1, a) [[1, z], [0, 1]].
#[derive(Clone, Debug, PartialEq)]
pub struct BorelElement {
    pub z: Rat,
    pub a: Rat,
    pub t: i64,
}

impl BorelElement {
    pub fn identity() -> BorelElement {
        BorelElement { z: Rat::zero(), a: Rat::one(), t: 0 }
    }

    pub fn unipotent(z: Rat) -> BorelElement {
        BorelElement { z, a: Rat::one(), t: 0 }
    }

    pub fn diag_unit(a: Rat) -> BorelElement {
        BorelElement { z: Rat::zero(), a, t: 0 }
    }

    pub fn diag_p_power(t: i64) -> BorelElement {
        BorelElement { z: Rat::zero(), a: Rat::one(), t }
    }

    /// Matrix product self * other.
    pub fn compose(&self, other: &BorelElement, p: u64) -> BorelElement {
        // [[1,z],[0,d]] [[1,z'],[0,d']] = [[1, z' + z d'],[0, d d']]
        let d_other = &other.a * crate::rat::times_p_pow(&Rat::one(), p, other.t);
        BorelElement {
            z: &other.z + &self.z * d_other,
            a: &self.a * &other.a,
            t: self.t + other.t,
        }
    }
}

fn seq_psi(md: &FilteredPhiModule, v: &WachVector) -> WachVector {
    coord_psi_truncated(md, v, v.coeff_val_floor())
}

fn act_unipotent(md: &FilteredPhiModule, z: &Rat, s: &PsiSequence) -> Result<PsiSequence, WachError> {
    if z.is_zero() {
        return Ok(s.clone());
    }
    let p = md.ctx.p;
    let v = pval(z, p);
    let mshift = (-v).max(0) as usize;
    let have = s.terms.len();
    if mshift >= have {
        return Err(WachError::WindowExhausted { needed: mshift + 1, have });
    }
    let mut out = Vec::new();
    for n in 0..have - mshift {
        let term = &s.terms[n + mshift];
        let ctx = &term.wa.ctx;
        let expo = crate::rat::times_p_pow(z, p, (n + mshift) as i64);
        let es = Scalar::from_rat(ctx, &expo);
        let mut u = one_plus_x_pow(ctx, &es, term.trunc())?;
        u.coeffs[0] = Scalar::one(ctx);
        let mut w = term.mul_series(&u);
        for _ in 0..mshift {
            w = seq_psi(md, &w);
        }
        out.push(w);
    }
    Ok(PsiSequence { terms: out, consumed: s.consumed + mshift })
}

fn act_diag_unit(md: &FilteredPhiModule, a: &Rat, s: &PsiSequence) -> Result<PsiSequence, WachError> {
    let _ = md;
    if a.is_one() {
        return Ok(s.clone());
    }
    let mut out = Vec::new();
    for term in &s.terms {
        let es = Scalar::from_rat(&term.wa.ctx, a);
        out.push(coord_gamma(&es, term)?);
    }
    Ok(PsiSequence { terms: out, consumed: s.consumed })
}

fn act_diag_p(md: &FilteredPhiModule, t: i64, s: &PsiSequence) -> Result<PsiSequence, WachError> {
    if t == 0 {
        return Ok(s.clone());
    }
    let have = s.terms.len();
    if t > 0 {
        // w_n = v_{n-t}; below the window, extend by v_{-m} = psi^m(v_0)
        let t = t as usize;
        let mut out = Vec::new();
        for n in 0..have {
            if n >= t {
                out.push(s.terms[n - t].clone());
            } else {
                let mut w = s.terms[0].clone();
                for _ in 0..t - n {
                    w = seq_psi(md, &w);
                }
                out.push(w);
            }
        }
        Ok(PsiSequence { terms: out, consumed: s.consumed })
    } else {
        let sft = (-t) as usize;
        if sft >= have {
            return Err(WachError::WindowExhausted { needed: sft + 1, have });
        }
        Ok(PsiSequence { terms: s.terms[sft..].to_vec(), consumed: s.consumed + sft })
    }
}

/// Applies [[1, z], [0, a p^t]] = diag(1, p^t) diag(1, a) [[1, z], [0, 1]]
/// to a sequence window: the p-power diagonal first (window reindexing;
/// negative powers consume), then the unit diagonal (gamma term by term),
/// then the unipotent part (w_n = psi^m((1+X)^{p^{n+m} z} v_{n+m}),
/// consuming m = max(0, -val(z)) terms).
///
/// The generator formulas compose as a right action (the sequences model a
/// dual): act(g h) = act(h) after act(g).
pub fn borel_act(md: &FilteredPhiModule, g: &BorelElement, s: &PsiSequence) -> Result<PsiSequence, WachError> {
    let s1 = act_diag_p(md, g.t, s)?;
    let s2 = act_diag_unit(md, &g.a, &s1)?;
    act_unipotent(md, &g.z, &s2)
}

// ---------------------------------------------------------------------------
// Uniform boundedness certificate
// ---------------------------------------------------------------------------

/// Trend tolerance for per-term sup growth across a window (log_p units per
/// index).
pub const SEQ_TREND_TOL: f64 = 0.25;

#[derive(Debug, Clone)]
pub struct BoundCertificate {
    /// max of the two per-coordinate order-r sups, one entry per term
    /// (-inf for a zero term).
    pub per_term_sup: Vec<f64>,
    pub sup: f64,
    pub verdict: OrderVerdict,
    pub inconclusive: bool,
}

/// Computes per-term order-val(alpha)/order-val(beta) norm estimates and a
/// window-trend verdict: growing when the sups increase by more than the
/// tolerance per index.
pub fn sequence_bound_check(md: &FilteredPhiModule, s: &PsiSequence) -> BoundCertificate {
    let ra = Rat::from_integer(md.val_alpha().into());
    let rb = Rat::from_integer(md.val_beta().into());
    let mut per_term = Vec::new();
    let mut inconclusive = false;
    let mut any_growing = false;
    for term in &s.terms {
        let ea = order_r_estimate(&term.wa, &ra, ORDER_SLOPE_TOL);
        let eb = order_r_estimate(&term.wb, &rb, ORDER_SLOPE_TOL);
        inconclusive |= ea.inconclusive || eb.inconclusive;
        any_growing |= matches!(ea.verdict, OrderVerdict::Growing)
            || matches!(eb.verdict, OrderVerdict::Growing);
        per_term.push(ea.sup.max(eb.sup));
    }
    let sup = per_term.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let finite: Vec<(usize, f64)> = per_term
        .iter()
        .enumerate()
        .filter(|(_, x)| x.is_finite())
        .map(|(i, &x)| (i, x))
        .collect();
    let trend_growing = match (finite.first(), finite.last()) {
        (Some(&(i0, s0)), Some(&(i1, s1))) if i1 > i0 => s1 > s0 + SEQ_TREND_TOL * (i1 - i0) as f64,
        _ => false,
    };
    let verdict = if any_growing || trend_growing {
        OrderVerdict::Growing
    } else {
        OrderVerdict::BoundedSoFar
    };
    BoundCertificate { per_term_sup: per_term, sup, verdict, inconclusive }
}

// ---------------------------------------------------------------------------
// Module descriptor files
// ---------------------------------------------------------------------------

/// Flat key-value description of a module computation: keys p, N (scalar
/// precision), K (series truncation), k (weight), alpha, beta (rationals,
/// "u*p^v" accepted), fil_depth, window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleDescriptor {
    pub p: u64,
    pub prec_n: u32,
    pub series_k: usize,
    pub weight_k: u32,
    pub alpha: Rat,
    pub beta: Rat,
    pub fil_depth: u32,
    pub window: usize,
}

impl ModuleDescriptor {
    pub fn parse(text: &str) -> Result<ModuleDescriptor, WachError> {
        let mut map = std::collections::BTreeMap::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| WachError::Descriptor(format!("line {}: expected key = value", ln + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k)
                .cloned()
                .ok_or_else(|| WachError::Descriptor(format!("missing key {k}")))
        };
        let p: u64 = get("p")?
            .parse()
            .map_err(|e| WachError::Descriptor(format!("p: {e}")))?;
        let num = |k: &str| -> Result<u64, WachError> {
            get(k)?
                .parse()
                .map_err(|e| WachError::Descriptor(format!("{k}: {e}")))
        };
        let alpha = crate::rat::parse_rat(&get("alpha")?, p).map_err(WachError::Descriptor)?;
        let beta = crate::rat::parse_rat(&get("beta")?, p).map_err(WachError::Descriptor)?;
        Ok(ModuleDescriptor {
            p,
            prec_n: num("N")? as u32,
            series_k: num("K")? as usize,
            weight_k: num("k")? as u32,
            alpha,
            beta,
            fil_depth: num("fil_depth")? as u32,
            window: num("window")? as usize,
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "# module descriptor\np = {}\nN = {}\nK = {}\nk = {}\nalpha = {}\nbeta = {}\nfil_depth = {}\nwindow = {}\n",
            self.p,
            self.prec_n,
            self.series_k,
            self.weight_k,
            crate::rat::show_rat(&self.alpha),
            crate::rat::show_rat(&self.beta),
            self.fil_depth,
            self.window
        )
    }

    pub fn build(&self) -> Result<(Ctx, FilteredPhiModule), WachError> {
        let ctx = PadicContext::qp(self.p, self.prec_n);
        let md = make_module(&ctx, self.weight_k, self.alpha.clone(), self.beta.clone())?;
        Ok((ctx, md))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rat::{rat, rat_int};
    use crate::series::log_series;

    fn default_module() -> (Ctx, FilteredPhiModule) {
        let ctx = PadicContext::qp(3, 8);
        let md = make_module(&ctx, 3, rat_int(3), rat_int(6)).unwrap();
        (ctx, md)
    }

    #[test]
    fn classification_guards() {
        let ctx = PadicContext::qp(3, 8);
        assert!(make_module(&ctx, 3, rat_int(3), rat_int(6)).is_ok());
        // val(beta) = 0: reducible
        match make_module(&ctx, 3, rat_int(9), rat_int(1)) {
            Err(WachError::NotIrreducible(msg)) => assert!(msg.contains("val(beta) = 0")),
            other => panic!("expected reducible rejection, got {other:?}"),
        }
        // equal eigenvalue reciprocals
        match make_module(&ctx, 3, rat_int(3), rat_int(3)) {
            Err(WachError::NotIrreducible(msg)) => assert!(msg.contains("alpha = beta")),
            other => panic!("expected alpha=beta rejection, got {other:?}"),
        }
        // determinant slope off
        match make_module(&ctx, 3, rat_int(3), rat_int(9)) {
            Err(WachError::NotAdmissible { sum: 3, need: 2 }) => {}
            other => panic!("expected admissibility rejection, got {other:?}"),
        }
        // alpha = p*beta rejected
        match make_module(&ctx, 4, rat_int(9), rat_int(3)) {
            Err(WachError::NotIrreducible(msg)) => assert!(msg.contains("p * beta")),
            other => panic!("expected alpha=p*beta rejection, got {other:?}"),
        }
        let adm = make_module(&ctx, 3, rat_int(3), rat_int(6)).unwrap().admissibility();
        assert_eq!(adm.tn_det, adm.th_det);
        assert!(adm.line_gaps.0 > 0 && adm.line_gaps.1 > 0);
    }

    #[test]
    fn psi_after_phi_is_identity() {
        let (ctx, md) = default_module();
        let k = 30;
        let f = PowerSeries::new(
            &ctx,
            (0..=k).map(|i| Scalar::from_i64(&ctx, (i as i64 * 7 - 3) % 11)).collect(),
        );
        let g = PowerSeries::new(
            &ctx,
            (0..=k).map(|i| Scalar::from_i64(&ctx, (i as i64 * 5 + 2) % 13)).collect(),
        );
        let v = WachVector::new(f.clone(), g.clone());
        // pad so that phi of the degree-30 polynomial is exact at 3*30
        let vp = v.truncate(3 * k);
        let round = coord_psi(&md, &coord_phi(&md, &vp));
        assert!(round.wa.eq_at_prec(&f.truncate(round.wa.trunc())));
        assert!(round.wb.eq_at_prec(&g.truncate(round.wb.trunc())));
    }

    #[test]
    fn psi_eigenvalue_rule_on_phi_image() {
        // coord_psi(phi(g) e_alpha) = alpha g e_alpha: the raw operator psi
        // applied to a first coordinate phi(g) gives g, and the coordinate
        // rule multiplies by alpha.
        let (ctx, md) = default_module();
        let g = PowerSeries::new(&ctx, (0..=10).map(|i| Scalar::from_i64(&ctx, i as i64 + 1)).collect());
        let gp = g.truncate(40);
        let v = WachVector::e_alpha(phi(&gp));
        let out = coord_psi(&md, &v);
        let expect = gp.truncate(out.wa.trunc()).scalar_mul(&md.alpha_scalar(&ctx));
        assert!(out.wa.eq_at_prec(&expect));
        assert!(out.wb.is_zero());
    }

    #[test]
    fn gamma_commutes_with_phi() {
        let (ctx, md) = default_module();
        let kk = 60;
        let mut f = PowerSeries::zero(&ctx, kk);
        for i in 0..=10 {
            f.coeffs[i] = Scalar::from_i64(&ctx, (3 * i as i64 + 1) % 7);
        }
        let v = WachVector::new(f.clone(), f);
        let a = Scalar::from_i64(&ctx, 5);
        let lhs = coord_gamma(&a, &coord_phi(&md, &v)).unwrap();
        let rhs = coord_phi(&md, &coord_gamma(&a, &v).unwrap());
        assert!(lhs.eq_at_prec(&rhs));
    }

    #[test]
    fn fil0_constant_e_alpha_fails() {
        let (ctx, md) = default_module();
        let v = WachVector::e_alpha(PowerSeries::one(&ctx, 40));
        let rep = fil0_test(&md, &v, 1).unwrap();
        assert_eq!(rep.verdict, Tri::Fail);
        assert_eq!(rep.decomposition, Tri::Fail);
        // the binding row is j = 0 where alpha^m survives
        let bad: Vec<_> = rep.rows.iter().filter(|r| r.conclusive && !r.pass).collect();
        assert!(bad.iter().any(|r| r.j == 0));
    }

    #[test]
    fn fil0_t_power_multiples_pass() {
        // t^{k-1} (any vector) lies in the degree-0 filtration at every
        // level: the substituted series vanishes at every conjugate root.
        let (ctx, md) = default_module();
        let kk = 60;
        let t = log_series(&ctx, kk);
        let t2 = t.mul(&t);
        for v in [
            WachVector::e_alpha(t2.clone()),
            WachVector::diagonal(t2.clone()),
            WachVector::new(t2.mul(&PowerSeries::x(&ctx, kk)), t2.scalar_mul(&Scalar::from_i64(&ctx, 2))),
        ] {
            for m in 1..=2 {
                let rep = fil0_test(&md, &v, m).unwrap();
                assert_eq!(rep.verdict, Tri::Pass, "level {m}");
                assert_eq!(rep.decomposition, Tri::Pass, "level {m} decomposition");
            }
        }
    }

    #[test]
    fn fil0_diagonal_with_distinct_eigenvalues_fails() {
        // The eigenvalue factors survive on w (e_alpha + e_beta):
        // Delta_0 = (alpha^m - beta^m) w(zeta - 1) which is nonzero for a
        // unit constant term.
        let (ctx, md) = default_module();
        let v = WachVector::diagonal(PowerSeries::one(&ctx, 40));
        let rep = fil0_test(&md, &v, 1).unwrap();
        assert_eq!(rep.verdict, Tri::Fail);
        assert_eq!(rep.decomposition, Tri::Fail);
    }

    #[test]
    fn fil0_routes_agree_on_random_vectors() {
        let (ctx, md) = default_module();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..30 {
            let kk = 40;
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                PowerSeries::new(
                    &ctx,
                    (0..=kk).map(|_| Scalar::from_i64(&ctx, rng.gen_range(-50..50))).collect(),
                )
            };
            let v = WachVector::new(mk(&mut rng), mk(&mut rng));
            for m in 1..=2 {
                let rep = fil0_test(&md, &v, m).unwrap();
                assert_eq!(rep.verdict, rep.decomposition, "level {m}");
            }
        }
    }

    #[test]
    fn membership_t_squared_e_alpha_fails_order() {
        // t^2 has order 2 > val(alpha) = 1: condition (i) fails at a large
        // enough truncation.
        let ctx = PadicContext::qp(3, 8);
        let md = make_module(&ctx, 3, rat_int(3), rat_int(6)).unwrap();
        let t = log_series(&ctx, 200);
        let v = WachVector::e_alpha(t.mul(&t));
        let rep = wach_membership(&md, &v, 0).unwrap();
        assert!(matches!(rep.order_alpha.verdict, OrderVerdict::Growing));
        assert_eq!(rep.verdict, Tri::Fail);
    }

    #[test]
    fn kernel_solver_small_system() {
        // x + 3y = 0 mod 81 has solutions generated by (78, 1)-style
        // columns; verify the kernel is correct and complete by rank count.
        let rows = vec![vec![1u64, 3u64]];
        let gens = kernel_mod_p_power(&rows, 3, 4);
        let q = 81u64;
        assert!(!gens.is_empty());
        for g in &gens {
            assert_eq!((g[0] + 3 * g[1]) % q, 0, "{g:?}");
        }
        // the kernel has index 81 in (Z/81)^2: log_3 size 4
        let lat = howell_form(gens.clone(), 3, 4);
        let size: u32 = lat
            .iter()
            .map(|row| {
                let col = row.iter().position(|&x| x != 0).unwrap();
                4 - val_u64(row[col], 3, 4)
            })
            .sum();
        assert_eq!(size, 4);
    }

    #[test]
    fn howell_membership_and_equality() {
        let p = 3;
        let l = 2;
        let a = howell_form(vec![vec![3, 0, 1], vec![0, 3, 0]], p, l);
        let lat = LatticeApprox { p, level: l, k_trunc: 0, basis: a };
        assert!(lat.contains(&[3, 0, 1]));
        assert!(lat.contains(&[3, 3, 1]));
        assert!(lat.contains(&[0, 0, 3])); // 3*(3,0,1) = (9,0,3) = (0,0,3) mod 9
        assert!(!lat.contains(&[1, 0, 0]));
        let b = howell_form(vec![vec![0, 3, 0], vec![3, 3, 1], vec![0, 0, 3]], p, l);
        assert_eq!(lat.basis, b);
    }

    #[test]
    fn lattice_solver_basics() {
        let (ctx, md) = default_module();
        let kk = 20;
        let nhat = solve_wach_lattice(&md, 2, kk, 2).unwrap();
        assert!(!nhat.basis.is_empty());
        // X-stability is built in; recheck on the basis
        for row in &nhat.basis {
            assert!(nhat.contains(&x_shift_row(row, 1, kk)));
        }
        // 1 e_alpha is not a member (fails the filtration condition)
        let one_a = vector_to_row(&WachVector::e_alpha(PowerSeries::one(&ctx, kk)), 2).unwrap();
        assert!(!nhat.contains(&one_a));
        // every kernel generator satisfies the condition rows (checked
        // internally); additionally a generator read back as an integer
        // vector passes the level-2 residue conditions
        let rows = fil0_rows(&md, kk, 2, 2);
        let q = 9u64;
        for g in nhat.basis.iter().take(3) {
            for row in &rows {
                let acc = row
                    .iter()
                    .zip(g.iter())
                    .fold(0u64, |s, (&a, &b)| (s + a * b) % q);
                assert_eq!(acc, 0);
            }
        }
    }

    #[test]
    fn dsharp_iteration_stabilizes_with_sandwich() {
        let (_ctx, md) = default_module();
        let kk = 20;
        let nhat = solve_wach_lattice(&md, 2, kk, 2).unwrap();
        let res = dsharp_iterate(&md, &nhat, md.k - 1, 10).unwrap();
        assert!(res.stabilization_step <= 10);
        let d = &res.lattice;
        // X^{k-1} nhat <= dsharp <= nhat
        let shifted: Vec<Vec<u64>> = nhat
            .basis
            .iter()
            .map(|r| x_shift_row(r, (md.k - 1) as usize, kk))
            .collect();
        let xh = LatticeApprox::from_generators(nhat.p, nhat.level, kk, shifted);
        assert!(xh.is_subset_of(d));
        assert!(d.is_subset_of(&nhat));
        // psi-surjectivity at truncation: the coordinate psi carries the
        // eigenvalue factors (slope 1 on each side), and the integral
        // window cannot express the slope-compensating denominators of the
        // honest Laurent coordinates, so surjectivity shows up as a
        // two-sided bound with defect exactly one power of p.  Psi images
        // only carry X-degrees <= K/p, so compare shadows there.
        let psi_gens: Vec<Vec<u64>> = d.basis.iter().map(|r| lattice_psi_row(&md, d, r)).collect();
        let img = LatticeApprox::from_generators(d.p, d.level, kk, psi_gens);
        assert!(img.is_subset_of(d));
        let p = md.ctx.p;
        let slope = pval(&md.alpha, p).max(pval(&md.beta, p)) as u32;
        assert_eq!(slope, 1);
        let low = kk / 3;
        assert!(
            d.scaled(slope).project(low).is_subset_of(&img.project(low)),
            "psi image spans the low-degree shadow up to the eigenvalue slope"
        );
        // gamma-stability for unit exponents
        for a in [2u64, 4, 5] {
            for row in &d.basis {
                assert!(d.contains(&lattice_gamma_row(d, row, a)), "gamma_{a} leaves dsharp");
            }
        }
    }

    #[test]
    fn psi_fixed_point_construction() {
        let (ctx, md) = default_module();
        let kk = 60;
        let seed = WachVector::diagonal(PowerSeries::one(&ctx, kk));
        // budget too small first
        match psi_fixed_point(&md, &seed, 3) {
            Err(WachError::BudgetTooSmall { pj: 27, k: 60 }) => {}
            other => panic!("expected budget error, got {other:?}"),
        }
        let z = psi_fixed_point(&md, &seed, 4).unwrap();
        assert!(!z.is_zero());
        // psi(y) = 0 for the (1+X) phi(...) building block
        let y0 = coord_phi(&md, &seed.x_shift(md.k as usize));
        let y = y0.add(&y0.x_shift(1));
        let py = coord_psi_truncated(&md, &y, y.coeff_val_floor());
        assert!(py.is_zero(), "psi of the orthogonal block must vanish");
        // fixed point at truncation with positive guaranteed digits
        let pz = coord_psi_truncated(&md, &z, z.coeff_val_floor());
        let diff = pz.sub(&z.truncate(pz.trunc()));
        assert!(diff.is_zero(), "psi(z) = z at working precision");
        // guaranteed digits over the meaningful half of the surviving
        // window (the contamination caps decay linearly in the index)
        let half = pz.trunc() / 2;
        let digits = diff
            .wa
            .coeffs
            .iter()
            .take(half + 1)
            .chain(diff.wb.coeffs.iter().take(half + 1))
            .map(|c| c.prec_pi())
            .min()
            .unwrap();
        assert!(digits > 0, "guaranteed digits {digits}");
    }

    #[test]
    fn sequence_compatibility_and_bounds() {
        let (ctx, md) = default_module();
        let kk = 60;
        let top = WachVector::diagonal(PowerSeries::one(&ctx, kk)).add(&WachVector::e_alpha(
            x_shift_series(&PowerSeries::one(&ctx, kk), 2),
        ));
        let s = build_psi_sequence(&md, &top, 4);
        assert_eq!(s.window(), 5);
        for n in 1..s.terms.len() {
            let down = coord_psi_exact(&md, &s.terms[n]);
            assert!(down.eq_at_prec(&s.terms[n - 1]), "psi-compatibility at {n}");
        }
        // the eigenvalue factors make a top-down sequence decay toward
        // n = 0, so reading upward the trend detector flags growth
        let cert = sequence_bound_check(&md, &s);
        assert!(matches!(cert.verdict, OrderVerdict::Growing));
        // a psi fixed point gives a constant (hence bounded) sequence
        let z = psi_fixed_point(&md, &WachVector::diagonal(PowerSeries::one(&ctx, kk)), 4).unwrap();
        let cs = PsiSequence { terms: vec![z; 5], consumed: 0 };
        let cc = sequence_bound_check(&md, &cs);
        assert!(matches!(cc.verdict, OrderVerdict::BoundedSoFar));
        // zero sequence
        let z = PsiSequence { terms: vec![WachVector::zero(&ctx, 10); 3], consumed: 0 };
        let zc = sequence_bound_check(&md, &z);
        assert!(zc.sup <= 0.0);
        assert!(matches!(zc.verdict, OrderVerdict::BoundedSoFar));
    }

    #[test]
    fn borel_action_basics() {
        let (ctx, md) = default_module();
        let kk = 60;
        let top = WachVector::diagonal(PowerSeries::one(&ctx, kk));
        let s = build_psi_sequence(&md, &top, 4);
        // identity
        let id = borel_act(&md, &BorelElement::identity(), &s).unwrap();
        for (a, b) in id.terms.iter().zip(s.terms.iter()) {
            assert!(a.eq_at_prec(b));
        }
        // diag(p) then diag(p^{-1}) restores the surviving window
        let up = borel_act(&md, &BorelElement::diag_p_power(1), &s).unwrap();
        let back = borel_act(&md, &BorelElement::diag_p_power(-1), &up).unwrap();
        assert_eq!(back.consumed, 1);
        for (a, b) in back.terms.iter().zip(s.terms.iter()) {
            let t = a.trunc().min(b.trunc());
            assert!(a.truncate(t).eq_at_prec(&b.truncate(t)));
        }
        // window exhaustion is loud
        let small = PsiSequence { terms: s.terms[..2].to_vec(), consumed: 0 };
        assert!(matches!(
            borel_act(&md, &BorelElement::diag_p_power(-2), &small),
            Err(WachError::WindowExhausted { .. })
        ));
    }

    #[test]
    fn borel_group_law_sample() {
        let (ctx, md) = default_module();
        let kk = 60;
        let p = 3u64;
        let top = WachVector::diagonal(PowerSeries::one(&ctx, kk))
            .add(&WachVector::e_beta(x_shift_series(&PowerSeries::one(&ctx, kk), 1)));
        let s = build_psi_sequence(&md, &top, 4);
        let g1 = BorelElement::unipotent(rat_int(2));
        let g2 = BorelElement::diag_unit(rat_int(2));
        let g3 = BorelElement::unipotent(rat(1, 3));
        for (ga, gb) in [(&g1, &g2), (&g2, &g3), (&g1, &g3)] {
            // the generator formulas define a right action on sequences,
            // so acting by ga then gb matches acting by the product ga*gb
            let lhs = borel_act(&md, gb, &borel_act(&md, ga, &s).unwrap()).unwrap();
            let rhs = borel_act(&md, &ga.compose(gb, p), &s).unwrap();
            let n = lhs.terms.len().min(rhs.terms.len());
            for i in 0..n {
                let a = &lhs.terms[lhs.terms.len() - n + i];
                let b = &rhs.terms[rhs.terms.len() - n + i];
                let t = a.trunc().min(b.trunc());
                assert!(
                    a.truncate(t).eq_at_prec(&b.truncate(t)),
                    "group law at term {i}"
                );
            }
        }
    }

    #[test]
    fn full_precision_kernel_vectors_are_members() {
        let (ctx, md) = default_module();
        let kk = 60;
        // solve beyond the scalar precision: the filtration thresholds
        // reach val(alpha^m) above p^N, so congruences mod p^12 are needed
        // for the fixture to clear every row
        let l = 12;
        let gens = wach_kernel_generators(&md, kk, 2, l).unwrap();
        // prefer generators with a unit coordinate (free-column solutions)
        let g = gens
            .iter()
            .find(|g| g.iter().any(|&x| x % 3 != 0))
            .expect("a primitive kernel generator");
        let v = row_to_vector(&ctx, g, kk);
        let rep = wach_membership(&md, &v, 2).unwrap();
        assert_eq!(rep.verdict, Tri::Pass, "kernel fixture is a member");
    }

    #[test]
    fn descriptor_round_trip() {
        let d = ModuleDescriptor {
            p: 3,
            prec_n: 8,
            series_k: 60,
            weight_k: 3,
            alpha: rat_int(3),
            beta: rat_int(6),
            fil_depth: 2,
            window: 4,
        };
        let text = d.to_text();
        let d2 = ModuleDescriptor::parse(&text).unwrap();
        assert_eq!(d, d2);
        let (_ctx, md) = d2.build().unwrap();
        assert_eq!(md.k, 3);
        assert!(ModuleDescriptor::parse("p = 3\nN = 8").is_err());
    }
}
