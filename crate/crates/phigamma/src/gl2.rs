//! The two-chart Banach function model on Q_p attached to a weight-k module
//! with eigenvalue parameters (alpha, beta), the explicit group action, the
//! kernel-line generator functions, the smooth intertwining operator in exact
//! closed form, and the factor-reading resolution for its evaluation
//! identities.
//!
//! Everything here is exact: the intertwiner reduces to coset masses and
//! geometric series in alpha/beta, which are summed as algebraic expressions
//! (divergence is never an issue because no limits are taken).

use num_traits::{One, Zero};

use crate::mahler::{cr_norm, mahler_coeffs, MahlerFunction};
use crate::padic::{Scalar, ScalarError};
use crate::rat::{pval, Rat};
use crate::series::{OrderEstimate, SeriesError, ORDER_SLOPE_TOL};
use crate::wach::FilteredPhiModule;

#[derive(Debug, thiserror::Error)]
pub enum Gl2Error {
    #[error("matrix is singular")]
    Singular,
    #[error("degenerate parameter: {0}")]
    Degenerate(String),
    #[error("ill-typed input: {0}")]
    IllTyped(String),
    #[error("requested window is too coarse: the value is not constant on {0}")]
    WindowTooCoarse(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Scalar(#[from] ScalarError),
}

// ---------------------------------------------------------------------------
// Exact rational helpers
// ---------------------------------------------------------------------------

/// x^e for a nonzero rational and a possibly negative exponent.
pub fn rat_pow(x: &Rat, e: i64) -> Rat {
    assert!(!x.is_zero() || e >= 0, "negative power of zero");
    if e == 0 {
        return Rat::one();
    }
    let mut base = if e < 0 { x.recip() } else { x.clone() };
    let mut n = e.unsigned_abs();
    let mut acc = Rat::one();
    while n > 0 {
        if n & 1 == 1 {
            acc = &acc * &base;
        }
        base = &base * &base;
        n >>= 1;
    }
    acc
}

fn p_rat(p: u64) -> Rat {
    Rat::from_integer((p as i64).into())
}

/// p * alpha / beta, the weight attached to the chart at infinity.
pub fn weight_ratio(md: &FilteredPhiModule) -> Rat {
    &p_rat(md.ctx.p) * &md.alpha / &md.beta
}

/// (1 - 1/p) / (1 - alpha/beta): the mass of a full coset under the
/// intertwiner kernel, summed as a geometric series.
pub fn unit_coset_mass(md: &FilteredPhiModule) -> Result<Rat, Gl2Error> {
    let r = &md.alpha / &md.beta;
    let den = &Rat::one() - &r;
    if den.is_zero() {
        return Err(Gl2Error::Degenerate("alpha = beta".into()));
    }
    let p = p_rat(md.ctx.p);
    Ok((&Rat::one() - &p.recip()) / den)
}

/// (1 - alpha/beta) / (1 - beta/(p alpha)): the scaling constant of the
/// intertwined functional.
pub fn extension_constant(md: &FilteredPhiModule) -> Result<Rat, Gl2Error> {
    let num = &Rat::one() - &(&md.alpha / &md.beta);
    let den = &Rat::one() - &(&md.beta / &(&p_rat(md.ctx.p) * &md.alpha));
    if num.is_zero() {
        return Err(Gl2Error::Degenerate("alpha = beta".into()));
    }
    if den.is_zero() {
        return Err(Gl2Error::Degenerate("beta = p * alpha".into()));
    }
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Locally constant compactly supported functions
// ---------------------------------------------------------------------------

/// value * indicator of center + p^level Z_p (level may be negative).
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothPiece {
    pub center: Rat,
    pub level: i64,
    pub value: Rat,
}

/// A finite sum of coset indicators with rational values; pieces must sit on
/// pairwise disjoint cosets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SmoothCompactFunction {
    pub pieces: Vec<SmoothPiece>,
}

impl SmoothCompactFunction {
    pub fn indicator(center: Rat, level: i64) -> SmoothCompactFunction {
        SmoothCompactFunction {
            pieces: vec![SmoothPiece { center, level, value: Rat::one() }],
        }
    }

    pub fn disjoint(&self, p: u64) -> bool {
        for (i, a) in self.pieces.iter().enumerate() {
            for b in self.pieces.iter().skip(i + 1) {
                let d = &a.center - &b.center;
                if d.is_zero() || pval(&d, p) >= a.level.min(b.level) {
                    return false;
                }
            }
        }
        true
    }

    pub fn eval(&self, p: u64, z: &Rat) -> Rat {
        let mut acc = Rat::zero();
        for piece in &self.pieces {
            let d = z - &piece.center;
            if d.is_zero() || pval(&d, p) >= piece.level {
                acc += piece.value.clone();
            }
        }
        acc
    }

    /// Total Haar integral (the Fourier transform at 0).
    pub fn total_integral(&self, p: u64) -> Rat {
        let mut acc = Rat::zero();
        for piece in &self.pieces {
            acc += &piece.value * rat_pow(&p_rat(p), -piece.level);
        }
        acc
    }

    pub fn scaled(&self, c: &Rat) -> SmoothCompactFunction {
        SmoothCompactFunction {
            pieces: self
                .pieces
                .iter()
                .map(|q| SmoothPiece { center: q.center.clone(), level: q.level, value: &q.value * c })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// The smooth intertwiner in closed form
// ---------------------------------------------------------------------------

/// The intertwiner image of a single coset indicator 1_{b + p^n Z_p},
/// evaluated at z: the kernel (p alpha/beta)^{val(z - x)} integrated over the
/// coset.  Off the coset the kernel is constant; on it the shell sum is a
/// geometric series in alpha/beta.
pub fn coset_image(md: &FilteredPhiModule, b: &Rat, n: i64, z: &Rat) -> Result<Rat, Gl2Error> {
    let p = md.ctx.p;
    let d = z - b;
    if d.is_zero() || pval(&d, p) >= n {
        let r = &md.alpha / &md.beta;
        Ok(&unit_coset_mass(md)? * &rat_pow(&r, n))
    } else {
        Ok(&rat_pow(&p_rat(p), -n) * &rat_pow(&weight_ratio(md), pval(&d, p)))
    }
}

/// Intertwiner image of a locally constant compactly supported function,
/// evaluated at z.
pub fn smooth_image(md: &FilteredPhiModule, h: &SmoothCompactFunction, z: &Rat) -> Result<Rat, Gl2Error> {
    let mut acc = Rat::zero();
    for piece in &h.pieces {
        acc += &piece.value * &coset_image(md, &piece.center, piece.level, z)?;
    }
    Ok(acc)
}

/// One output piece of the intertwiner: the (constant) image value on a
/// requested coset, to be multiplied by z^j.
#[derive(Clone, Debug)]
pub struct IntertwinePiece {
    pub center: Rat,
    pub level: i64,
    pub smooth_value: Rat,
}

/// Evaluate the intertwiner of z^j * h over a requested window of cosets.
/// The polynomial factor passes through, so each output piece carries the
/// constant smooth value; constancy on each requested coset is verified at
/// two probe points.
pub fn smooth_intertwiner(
    md: &FilteredPhiModule,
    h: &SmoothCompactFunction,
    j: u32,
    window: &[(Rat, i64)],
) -> Result<Vec<IntertwinePiece>, Gl2Error> {
    if j > md.k - 2 {
        return Err(Gl2Error::IllTyped(format!(
            "polynomial degree {j} exceeds the algebraic factor bound {}",
            md.k - 2
        )));
    }
    let mut out = Vec::with_capacity(window.len());
    for (center, level) in window {
        let v0 = smooth_image(md, h, center)?;
        let probe = center + rat_pow(&p_rat(md.ctx.p), *level);
        let v1 = smooth_image(md, h, &probe)?;
        if v0 != v1 {
            return Err(Gl2Error::WindowTooCoarse(format!("coset at level {level}")));
        }
        out.push(IntertwinePiece { center: center.clone(), level: *level, smooth_value: v0 });
    }
    Ok(out)
}

/// Pointwise value of the intertwiner of z^j * h.
pub fn intertwine_eval(
    md: &FilteredPhiModule,
    h: &SmoothCompactFunction,
    j: u32,
    z: &Rat,
) -> Result<Rat, Gl2Error> {
    Ok(&rat_pow(z, j as i64) * &smooth_image(md, h, z)?)
}

/// Shell sums of the intertwiner against the weight (p beta/alpha)^{val x}:
/// sum over val(x) = i in [lo, hi] (None = unbounded) of
/// (p beta/alpha)^i * \int_{val(x)=i} (p alpha/beta)^{val(z-x)} dx, for
/// val(z) = v.  The three regimes (i < v, i = v, i > v) each admit an exact
/// algebraic tail.
pub fn weighted_shell_sum(
    md: &FilteredPhiModule,
    v: i64,
    lo: Option<i64>,
    hi: Option<i64>,
) -> Result<Rat, Gl2Error> {
    let p = p_rat(md.ctx.p);
    let one = Rat::one();
    let frac = &one - &p.recip(); // 1 - 1/p
    let c1 = unit_coset_mass(md)?;
    let mut acc = Rat::zero();

    // Low regime i < v: the term is (1 - 1/p) p^i; the full tail sums to p^M.
    let low_hi = match hi {
        Some(h) => h.min(v - 1),
        None => v - 1,
    };
    let low_reachable = lo.map_or(true, |l| l <= low_hi);
    if low_reachable {
        let tail_to = rat_pow(&p, low_hi); // sum_{i <= low_hi} (1-1/p) p^i
        let tail_below = match lo {
            Some(l) => rat_pow(&p, l - 1),
            None => Rat::zero(),
        };
        acc += &tail_to - &tail_below;
    }

    // Middle shell i = v: p^v (c1 - 1/p).
    let v_in = lo.map_or(true, |l| l <= v) && hi.map_or(true, |h| v <= h);
    if v_in {
        acc += &rat_pow(&p, v) * &(&c1 - &p.recip());
    }

    // High regime i > v: the term is (p alpha/beta)^v (1 - 1/p) (beta/alpha)^i.
    let high_lo = match lo {
        Some(l) => l.max(v + 1),
        None => v + 1,
    };
    let high_reachable = hi.map_or(true, |h| high_lo <= h);
    if high_reachable {
        let r = &md.beta / &md.alpha;
        let den = &one - &r;
        if den.is_zero() {
            return Err(Gl2Error::Degenerate("alpha = beta".into()));
        }
        let c = &rat_pow(&weight_ratio(md), v) * &frac;
        let geom = match hi {
            Some(h) => (&rat_pow(&r, high_lo) - &rat_pow(&r, h + 1)) / &den,
            None => &rat_pow(&r, high_lo) / &den,
        };
        acc += &c * &geom;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Factor-reading resolution for the evaluation identities
// ---------------------------------------------------------------------------

/// The two possible parses of the printed factor next to the indicator in
/// the intertwiner evaluation identities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum FactorReading {
    /// "(z - 1_S(z))": the variable minus the indicator.
    ZMinusIndicator,
    /// "(1 - 1_S(z))": the complement indicator.
    OneMinusIndicator,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct IntertwinerIdentityReport {
    pub j: u32,
    pub total_points: usize,
    pub pass_z_reading: usize,
    pub pass_one_reading: usize,
    /// Set when exactly one reading passes at every sample point.
    pub confirmed: Option<FactorReading>,
    /// The variable reading produces an out-of-range polynomial degree for
    /// the second identity at this j.
    pub z_reading_ill_typed: bool,
}

fn indicator01(inside: bool) -> Rat {
    if inside {
        Rat::one()
    } else {
        Rat::zero()
    }
}

/// Evaluate both closed-form identities for the intertwiner of the compact
/// generator z^j 1_{Z_p} and the noncompact generator
/// z^j (p beta/alpha)^{val z} (1 - 1_{pZ_p}(z)) at the sample points, under
/// both readings of the ambiguous factor, and report which reading the
/// independent shell-sum oracle confirms.
pub fn intertwiner_identity_check(
    md: &FilteredPhiModule,
    j: u32,
    points: &[Rat],
) -> Result<IntertwinerIdentityReport, Gl2Error> {
    if j > md.k - 2 {
        return Err(Gl2Error::IllTyped("degree exceeds the algebraic bound".into()));
    }
    let p = md.ctx.p;
    let c1 = unit_coset_mass(md)?;
    let wr = weight_ratio(md);
    let z_ill_typed = j + 1 > md.k - 2;
    let mut pass_z = 0usize;
    let mut pass_one = 0usize;
    for z in points {
        assert!(!z.is_zero(), "sample points must be nonzero");
        let v = pval(z, p);
        let zj = rat_pow(z, j as i64);
        let in_zp = v >= 0;
        let in_pzp = v >= 1;

        // First identity: the compact generator.
        let lhs_c = intertwine_eval(md, &SmoothCompactFunction::indicator(Rat::zero(), 0), j, z)?;
        let rhs_c = |factor: &Rat| -> Rat {
            &(&c1 * &zj) * &indicator01(in_zp) + &(&zj * &rat_pow(&wr, v)) * factor
        };
        let f_one_c = &Rat::one() - &indicator01(in_zp);
        let f_z_c = z - &indicator01(in_zp);
        let ok_one_c = lhs_c == rhs_c(&f_one_c);
        let ok_z_c = lhs_c == rhs_c(&f_z_c);

        // Second identity: the noncompact generator.  Under the complement
        // reading the input is the weight on val <= 0 and the shell-sum
        // oracle applies directly.
        let lhs_one_nc = &zj * &weighted_shell_sum(md, v, None, Some(0))?;
        let rhs_nc = |factor: &Rat| -> Rat {
            &(&zj * &indicator01(in_pzp)) + &(&(&c1 * &zj) * &rat_pow(&wr, v)) * factor
        };
        let f_one_nc = &Rat::one() - &indicator01(in_pzp);
        let f_z_nc = z - &indicator01(in_pzp);
        let ok_one_nc = lhs_one_nc == rhs_nc(&f_one_nc);

        // Under the variable reading the input decomposes as
        // z^{j+1} w(z) - z^j w(z) 1_{pZ_p}(z); the first part needs degree
        // j+1 in the algebraic factor, which may not exist.
        let ok_z_nc = if z_ill_typed {
            false
        } else {
            let lhs_z_nc = &(&rat_pow(z, j as i64 + 1) * &weighted_shell_sum(md, v, None, None)?)
                - &(&zj * &weighted_shell_sum(md, v, Some(1), None)?);
            lhs_z_nc == rhs_nc(&f_z_nc)
        };

        if ok_one_c && ok_one_nc {
            pass_one += 1;
        }
        if ok_z_c && ok_z_nc {
            pass_z += 1;
        }
    }
    let n = points.len();
    let confirmed = match (pass_z == n && n > 0, pass_one == n && n > 0) {
        (true, false) => Some(FactorReading::ZMinusIndicator),
        (false, true) => Some(FactorReading::OneMinusIndicator),
        _ => None,
    };
    Ok(IntertwinerIdentityReport {
        j,
        total_points: n,
        pass_z_reading: pass_z,
        pass_one_reading: pass_one,
        confirmed,
        z_reading_ill_typed: z_ill_typed,
    })
}

// ---------------------------------------------------------------------------
// Support criterion and smooth equivariance
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SupportReport {
    pub total_integral: Rat,
    pub compact: bool,
    /// Value at a far probe point (valuation below every support shell).
    pub far_value: Rat,
}

/// The intertwiner image has compact support iff the input has total Haar
/// integral zero; far from the support the image equals
/// (p alpha/beta)^{val z} times that integral.
pub fn intertwiner_support_check(
    md: &FilteredPhiModule,
    h: &SmoothCompactFunction,
) -> Result<SupportReport, Gl2Error> {
    let p = md.ctx.p;
    let total = h.total_integral(p);
    let far_v = h
        .pieces
        .iter()
        .map(|q| if q.center.is_zero() { q.level } else { pval(&q.center, p).min(q.level) })
        .min()
        .unwrap_or(0)
        - 3;
    let far_z = rat_pow(&p_rat(p), far_v);
    let far_value = smooth_image(md, h, &far_z)?;
    let compact = far_value.is_zero();
    // cross-check the displayed far-field form
    let predicted = &rat_pow(&weight_ratio(md), far_v) * &total;
    if predicted != far_value {
        return Err(Gl2Error::Degenerate("far-field form violated".into()));
    }
    Ok(SupportReport { total_integral: total, compact, far_value })
}

// ---------------------------------------------------------------------------
// Group elements
// ---------------------------------------------------------------------------

/// An invertible 2x2 matrix over Q_p with rational entries.
#[derive(Clone, Debug, PartialEq)]
pub struct GL2Element {
    pub a: Rat,
    pub b: Rat,
    pub c: Rat,
    pub d: Rat,
}

impl GL2Element {
    pub fn new(a: Rat, b: Rat, c: Rat, d: Rat) -> Result<GL2Element, Gl2Error> {
        let g = GL2Element { a, b, c, d };
        if g.det().is_zero() {
            return Err(Gl2Error::Singular);
        }
        Ok(g)
    }

    pub fn det(&self) -> Rat {
        &(&self.a * &self.d) - &(&self.b * &self.c)
    }

    pub fn identity() -> GL2Element {
        GL2Element { a: Rat::one(), b: Rat::zero(), c: Rat::zero(), d: Rat::one() }
    }

    /// [[0, p], [1, 0]]: exchanges the two charts (up to a scalar).
    pub fn chart_swap(p: u64) -> GL2Element {
        GL2Element { a: Rat::zero(), b: p_rat(p), c: Rat::one(), d: Rat::zero() }
    }

    pub fn diag(u: Rat, v: Rat) -> Result<GL2Element, Gl2Error> {
        GL2Element::new(u, Rat::zero(), Rat::zero(), v)
    }

    pub fn unipotent(l: Rat) -> GL2Element {
        GL2Element { a: Rat::one(), b: l, c: Rat::zero(), d: Rat::one() }
    }

    pub fn mul(&self, o: &GL2Element) -> GL2Element {
        GL2Element {
            a: &(&self.a * &o.a) + &(&self.b * &o.c),
            b: &(&self.a * &o.b) + &(&self.b * &o.d),
            c: &(&self.c * &o.a) + &(&self.d * &o.c),
            d: &(&self.c * &o.b) + &(&self.d * &o.d),
        }
    }

    /// Parse four whitespace-separated entries in "u*p^v" rational syntax.
    pub fn parse(text: &str, p: u64) -> Result<GL2Element, Gl2Error> {
        let parts: Vec<&str> = text.split_whitespace().collect();
        if parts.len() != 4 {
            return Err(Gl2Error::IllTyped(format!("expected 4 entries, got {}", parts.len())));
        }
        let ent: Result<Vec<Rat>, _> = parts.iter().map(|s| crate::rat::parse_rat(s, p)).collect();
        let e = ent.map_err(|e| Gl2Error::IllTyped(e))?;
        GL2Element::new(e[0].clone(), e[1].clone(), e[2].clone(), e[3].clone())
    }
}

// ---------------------------------------------------------------------------
// The two-chart function space
// ---------------------------------------------------------------------------

/// A function f: Q_p -> L stored through its two charts:
/// f1(z) = f(pz) on Z_p, and f2(z) = (alpha p / beta)^{val z} z^{k-2} f(1/z)
/// on Z_p (continued to 0).  The pair determines f on pZ_p via f1 and on
/// val <= 0 via f2; the direct sum is free (no overlap condition).
#[derive(Clone, Debug)]
pub struct BanachFunctionPair {
    pub f1: MahlerFunction,
    pub f2: MahlerFunction,
}

impl BanachFunctionPair {
    pub fn ctx(&self) -> &crate::padic::Ctx {
        &self.f1.ctx
    }

    /// sup-style class-r norm estimates of the two charts.
    pub fn norms(&self, r: &Rat) -> (OrderEstimate, OrderEstimate) {
        (cr_norm(&self.f1, r, ORDER_SLOPE_TOL), cr_norm(&self.f2, r, ORDER_SLOPE_TOL))
    }

    pub fn norm_sup(&self, r: &Rat) -> f64 {
        let (a, b) = self.norms(r);
        a.sup.max(b.sup)
    }
}

/// Build the chart pair of a pointwise-defined rational function by Mahler
/// sampling; `f2_at_zero` supplies the continuation of the chart at infinity.
pub fn pair_from_function(
    md: &FilteredPhiModule,
    f: &dyn Fn(&Rat) -> Rat,
    f2_at_zero: &Rat,
    samples: usize,
) -> BanachFunctionPair {
    let ctx = &md.ctx;
    let p = p_rat(ctx.p);
    let k2 = md.k as i64 - 2;
    let r = Rat::from_integer(pval(&md.alpha, ctx.p).into());
    let v1: Vec<Scalar> = (0..=samples)
        .map(|z| {
            let zz = Rat::from_integer((z as i64).into());
            Scalar::from_rat(ctx, &f(&(&p * &zz)))
        })
        .collect();
    let v2: Vec<Scalar> = (0..=samples)
        .map(|z| {
            if z == 0 {
                Scalar::from_rat(ctx, f2_at_zero)
            } else {
                let zz = Rat::from_integer((z as i64).into());
                let val = pval(&zz, ctx.p);
                let w = &(&rat_pow(&weight_ratio(md), val) * &rat_pow(&zz, k2)) * &f(&zz.recip());
                Scalar::from_rat(ctx, &w)
            }
        })
        .collect();
    BanachFunctionPair {
        f1: mahler_coeffs(ctx, &v1, r.clone()),
        f2: mahler_coeffs(ctx, &v2, r),
    }
}

/// Evaluate the encoded function at a rational point of Q_p, reading it
/// through the chart that contains the point.
pub fn eval_point(md: &FilteredPhiModule, f: &BanachFunctionPair, z: &Rat) -> Result<Scalar, Gl2Error> {
    let ctx = &md.ctx;
    let k2 = md.k as i64 - 2;
    if z.is_zero() || pval(z, ctx.p) >= 1 {
        let arg = z / &p_rat(ctx.p);
        Ok(f.f1.eval(&Scalar::from_rat(ctx, &arg))?)
    } else {
        let v = pval(z, ctx.p);
        let pref = &rat_pow(&weight_ratio(md), v) * &rat_pow(z, k2);
        let val = f.f2.eval(&Scalar::from_rat(ctx, &z.recip()))?;
        Ok(val.mul(&Scalar::from_rat(ctx, &pref)))
    }
}

/// The group action at a point:
/// alpha^{-val(det)} (alpha p/beta)^{val(-cz+a)} (-cz+a)^{k-2}
/// f((dz-b)/(-cz+a)); at a pole of the argument the chart at infinity takes
/// over.
pub fn gl2_act_point(
    md: &FilteredPhiModule,
    g: &GL2Element,
    f: &BanachFunctionPair,
    z: &Rat,
) -> Result<Scalar, Gl2Error> {
    let ctx = &md.ctx;
    let k2 = md.k as i64 - 2;
    let det = g.det();
    if det.is_zero() {
        return Err(Gl2Error::Singular);
    }
    let vdet = pval(&det, ctx.p);
    let det_factor = rat_pow(&md.alpha, -vdet);
    let den = &g.a - &(&g.c * z);
    if den.is_zero() {
        // argument at infinity: the limit reads the chart-2 value at 0
        let num = &(&g.d * z) - &g.b; // nonzero since det != 0
        let pref = &(&det_factor * &rat_pow(&weight_ratio(md), pval(&num, ctx.p))) * &rat_pow(&num, k2);
        let at0 = f.f2.eval(&Scalar::zero(ctx))?;
        return Ok(at0.mul(&Scalar::from_rat(ctx, &pref)));
    }
    let w = &(&(&g.d * z) - &g.b) / &den;
    let pref = &(&det_factor * &rat_pow(&weight_ratio(md), pval(&den, ctx.p))) * &rat_pow(&den, k2);
    Ok(eval_point(md, f, &w)?.mul(&Scalar::from_rat(ctx, &pref)))
}

#[derive(Clone, Debug)]
pub struct Gl2PairReport {
    pub pair: BanachFunctionPair,
    pub in_sup: f64,
    pub out_sup: f64,
    /// log_p of the norm ratio (estimate); bounded for integral data.
    pub ratio_log: f64,
    pub inconclusive: bool,
}

/// Act on a chart pair: both output charts are recomputed by sampling and
/// Mahler re-expansion.  The chart at infinity of the image is itself an
/// action evaluation (conjugation of the matrix by the chart swap).
pub fn gl2_act_pair(
    md: &FilteredPhiModule,
    g: &GL2Element,
    f: &BanachFunctionPair,
) -> Result<Gl2PairReport, Gl2Error> {
    let ctx = &md.ctx;
    let n = f.f1.coeffs.len() - 1;
    let p = p_rat(ctx.p);
    let r = Rat::from_integer(pval(&md.alpha, ctx.p).into());
    let mut v1 = Vec::with_capacity(n + 1);
    for z in 0..=n {
        let zz = &p * &Rat::from_integer((z as i64).into());
        v1.push(gl2_act_point(md, g, f, &zz)?);
    }
    // chart 2 of the image: G_2(w) = alpha^{-val det} (alpha p/beta)^{val(aw-c)}
    // (aw-c)^{k-2} f((d-bw)/(aw-c)), i.e. the action of the swap-conjugated
    // matrix [[-c,-d],[-a,-b]].
    let g2 = GL2Element {
        a: -g.c.clone(),
        b: -g.d.clone(),
        c: -g.a.clone(),
        d: -g.b.clone(),
    };
    let mut v2 = Vec::with_capacity(n + 1);
    for z in 0..=n {
        let zz = Rat::from_integer((z as i64).into());
        v2.push(gl2_act_point(md, &g2, f, &zz)?);
    }
    let out = BanachFunctionPair {
        f1: mahler_coeffs(ctx, &v1, r.clone()),
        f2: mahler_coeffs(ctx, &v2, r.clone()),
    };
    let (ia, ib) = f.norms(&r);
    let (oa, ob) = out.norms(&r);
    let in_sup = ia.sup.max(ib.sup);
    let out_sup = oa.sup.max(ob.sup);
    Ok(Gl2PairReport {
        pair: out,
        in_sup,
        out_sup,
        ratio_log: out_sup - in_sup,
        inconclusive: ia.inconclusive || ib.inconclusive || oa.inconclusive || ob.inconclusive,
    })
}

/// A kernel-line generator: z^j (for `a` = None) or the shifted weight
/// function (alpha p/beta)^{val(z-a)} (z-a)^{k-2-j} extended by 0 at a.
/// Requires 0 <= j < val(alpha).
pub fn lalpha_generator(
    md: &FilteredPhiModule,
    a: Option<&Rat>,
    j: u32,
    samples: usize,
) -> Result<BanachFunctionPair, Gl2Error> {
    let va = pval(&md.alpha, md.ctx.p);
    if (j as i64) >= va {
        return Err(Gl2Error::IllTyped(format!("generator degree {j} must be < val(alpha) = {va}")));
    }
    let k2j = md.k as i64 - 2 - j as i64;
    let wr = weight_ratio(md);
    let p = md.ctx.p;
    match a {
        None => {
            let f = move |z: &Rat| -> Rat { rat_pow(z, j as i64) };
            // f2(z) = (alpha p/beta)^{val z} z^{k-2-j}; continuation 0 at 0
            // (the exponent k-2-j is >= 1 because j < val(alpha) <= k-2).
            let zero = Rat::zero();
            Ok(pair_from_function(md, &f, &zero, samples))
        }
        Some(a) => {
            let a = a.clone();
            let wr2 = wr.clone();
            let f = move |z: &Rat| -> Rat {
                let d = z - &a;
                if d.is_zero() {
                    Rat::zero()
                } else {
                    &rat_pow(&wr2, pval(&d, p)) * &rat_pow(&d, k2j)
                }
            };
            // f2(z) = (alpha p/beta)^{val(1-az)} (1-az)^{k-2-j} z^j; at 0
            // this is 1 for j = 0 and 0 otherwise.
            let at0 = if j == 0 { Rat::one() } else { Rat::zero() };
            Ok(pair_from_function(md, &f, &at0, samples))
        }
    }
}

// ---------------------------------------------------------------------------
// Smooth-level action and intertwiner equivariance
// ---------------------------------------------------------------------------

/// The action on the smooth induced space (no polynomial factor, beta-side
/// normalizations): g . h(z) = beta^{-val det} (beta p/alpha)^{val(-cz+a)}
/// h((dz-b)/(-cz+a)), for g in the generator set, expressed again as a
/// finite indicator combination.
pub fn smooth_act(
    md: &FilteredPhiModule,
    g: &GL2Element,
    h: &SmoothCompactFunction,
) -> Result<SmoothCompactFunction, Gl2Error> {
    let p = md.ctx.p;
    let det = g.det();
    if det.is_zero() {
        return Err(Gl2Error::Singular);
    }
    let beta_det = rat_pow(&md.beta, -pval(&det, p));
    let swr = &p_rat(p) * &(&md.beta / &md.alpha); // p beta / alpha
    // Generator cases.
    if g.c.is_zero() && g.a == Rat::one() && g.d == Rat::one() {
        // unipotent [[1, b], [0, 1]]: h(z - b)
        let pieces = h
            .pieces
            .iter()
            .map(|q| SmoothPiece { center: &q.center + &g.b, level: q.level, value: q.value.clone() })
            .collect();
        return Ok(SmoothCompactFunction { pieces });
    }
    if g.c.is_zero() && g.b.is_zero() && g.a == Rat::one() {
        // diag(1, d): h(d z), cosets rescale by 1/d
        let vd = pval(&g.d, p);
        let pieces = h
            .pieces
            .iter()
            .map(|q| SmoothPiece {
                center: &q.center / &g.d,
                level: q.level - vd,
                value: &q.value * &beta_det,
            })
            .collect();
        return Ok(SmoothCompactFunction { pieces });
    }
    if g == &GL2Element::chart_swap(p) {
        // [[0, p], [1, 0]]: value (beta p/alpha)^{val z} beta^{-1} h(p/z);
        // each off-zero coset b + p^n Z_p pulls back to the off-zero coset
        // p/b + p^{n - 2 val(b) + 1} Z_p on which val z = 1 - val(b).
        let mut pieces = Vec::with_capacity(h.pieces.len());
        for q in &h.pieces {
            if q.center.is_zero() || pval(&q.center, p) >= q.level {
                return Err(Gl2Error::IllTyped(
                    "chart swap of an indicator whose coset contains 0".into(),
                ));
            }
            let vb = pval(&q.center, p);
            pieces.push(SmoothPiece {
                center: &p_rat(p) / &q.center,
                level: q.level - 2 * vb + 1,
                value: &(&q.value * &beta_det) * &rat_pow(&swr, 1 - vb),
            });
        }
        return Ok(SmoothCompactFunction { pieces });
    }
    Err(Gl2Error::IllTyped("smooth action implemented on the generator set only".into()))
}

/// Intertwiner equivariance at the smooth level: I(g.h)(z) equals the
/// target-side action of g applied to I(h), both evaluated in closed form.
pub fn intertwiner_equivariance_check(
    md: &FilteredPhiModule,
    g: &GL2Element,
    h: &SmoothCompactFunction,
    points: &[Rat],
) -> Result<bool, Gl2Error> {
    let p = md.ctx.p;
    let gh = smooth_act(md, g, h)?;
    for z in points {
        let lhs = smooth_image(md, &gh, z)?;
        // target-side action: alpha normalizations, weight (alpha p / beta)
        let den = &g.a - &(&g.c * z);
        if den.is_zero() {
            continue; // pole of the sample; callers resample
        }
        let w = &(&(&g.d * z) - &g.b) / &den;
        let vden = pval(&den, p);
        let pref = &rat_pow(&md.alpha, -pval(&g.det(), p)) * &rat_pow(&weight_ratio(md), vden);
        let rhs = &pref * &smooth_image(md, h, &w)?;
        if lhs != rhs {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padic::PadicContext;
    use crate::rat::{rat, rat_int};
    use crate::wach::make_module;

    fn default_module() -> FilteredPhiModule {
        let ctx = PadicContext::qp(3, 8);
        make_module(&ctx, 3, rat_int(3), rat_int(6)).unwrap()
    }

    #[test]
    fn coset_image_matches_geometric_series() {
        let md = default_module();
        // inside Z_p: (1 - 1/p)/(1 - alpha/beta) = (2/3)/(1/2) = 4/3
        let v = coset_image(&md, &Rat::zero(), 0, &rat_int(2)).unwrap();
        assert_eq!(v, rat(4, 3));
        // outside at val -1: (p alpha/beta)^{-1} = 2/3
        let v = coset_image(&md, &Rat::zero(), 0, &rat(1, 3)).unwrap();
        assert_eq!(v, rat(2, 3));
        // brute-force shell check inside a deeper coset: direct sum over
        // shells i = n..n+40 approximates the closed form p-adically; here
        // the series is exact because we compare the algebraic identity
        // (1-1/p) sum_{i>=n} (a/b)^i = (1-1/p)(a/b)^n / (1 - a/b) at n = 2:
        let v = coset_image(&md, &rat_int(9), 2, &rat_int(9)).unwrap();
        assert_eq!(v, &rat(4, 3) * &rat(1, 4)); // (a/b)^2 = 1/4
    }

    #[test]
    fn noncompact_shell_oracle_values() {
        let md = default_module();
        // the closed form for the complement-reading generator at val z = v
        // must match (1-1/p)/(1-a/b) * (p a/b)^v for v <= 0 and 1 for v >= 1
        let c1 = unit_coset_mass(&md).unwrap();
        for v in -3..=0 {
            let got = weighted_shell_sum(&md, v, None, Some(0)).unwrap();
            let want = &c1 * &rat_pow(&weight_ratio(&md), v);
            assert_eq!(got, want, "v = {v}");
        }
        for v in 1..=3 {
            assert_eq!(weighted_shell_sum(&md, v, None, Some(0)).unwrap(), Rat::one());
        }
    }

    #[test]
    fn support_criterion() {
        let md = default_module();
        let h = SmoothCompactFunction {
            pieces: vec![
                SmoothPiece { center: Rat::zero(), level: 0, value: Rat::one() },
                SmoothPiece { center: rat_int(1), level: 1, value: rat_int(-1) },
                SmoothPiece { center: rat_int(2), level: 1, value: rat_int(-1) },
            ],
        };
        // h above has integral 1/3; h0 below has integral 0 by design
        let h0 = SmoothCompactFunction {
            pieces: vec![
                SmoothPiece { center: rat_int(1), level: 1, value: Rat::one() },
                SmoothPiece { center: rat_int(2), level: 1, value: Rat::one() },
                SmoothPiece { center: Rat::zero(), level: 1, value: rat_int(-2) },
            ],
        };
        assert!(h0.total_integral(3).is_zero());
        let rep = intertwiner_support_check(&md, &h0).unwrap();
        assert!(rep.compact);
        let rep = intertwiner_support_check(&md, &h).unwrap();
        assert!(!rep.compact);
    }

    #[test]
    fn identity_check_confirms_complement_reading() {
        let md = default_module();
        let points: Vec<Rat> = vec![
            rat_int(1),
            rat_int(2),
            rat_int(5),
            rat_int(3),
            rat_int(12),
            rat(1, 3),
            rat(2, 3),
            rat(4, 9),
            rat(1, 27),
            rat(7, 9),
        ];
        for j in 0..=1u32 {
            let rep = intertwiner_identity_check(&md, j, &points).unwrap();
            assert_eq!(rep.confirmed, Some(FactorReading::OneMinusIndicator), "{rep:?}");
            assert_eq!(rep.pass_one_reading, points.len());
        }
    }

    #[test]
    fn group_action_identity_and_central_character() {
        let md = default_module();
        let f = lalpha_generator(&md, None, 0, 24).unwrap();
        let samples = [rat_int(2), rat_int(6), rat(1, 3), rat_int(5)];
        // identity acts trivially
        for z in &samples {
            let lhs = gl2_act_point(&md, &GL2Element::identity(), &f, z).unwrap();
            let rhs = eval_point(&md, &f, z).unwrap();
            assert!(lhs.eq_at_prec(&rhs));
        }
        // diag(a, a) multiplies by eps^{k-2}(a) (p^{k-1}/(alpha beta))^{val a}
        let a = rat_int(6);
        let g = GL2Element::diag(a.clone(), a.clone()).unwrap();
        // a = 6 = 2*3: unit part 2, val 1: factor 2^{k-2} (9/18)^1 = 2 * 1/2 = 1
        for z in &samples {
            let lhs = gl2_act_point(&md, &g, &f, z).unwrap();
            let rhs = eval_point(&md, &f, z).unwrap();
            assert!(lhs.eq_at_prec(&rhs), "z = {z}");
        }
    }

    #[test]
    fn double_chart_swap_is_central() {
        let md = default_module();
        let f = lalpha_generator(&md, Some(&rat_int(1)), 0, 24).unwrap();
        let g = GL2Element::chart_swap(3);
        let gg = g.mul(&g); // = diag(p, p): central factor p^{k-1}/(alpha beta) = 1/2
        let samples = [rat_int(2), rat_int(3), rat(2, 3)];
        for z in &samples {
            let lhs = gl2_act_point(&md, &gg, &f, z).unwrap();
            let rhs = eval_point(&md, &f, z).unwrap().mul(&Scalar::from_rat(&md.ctx, &rat(1, 2)));
            assert!(lhs.eq_at_prec(&rhs), "z = {z}");
        }
    }

    #[test]
    fn act_pair_matches_pointwise_action() {
        let md = default_module();
        let f = lalpha_generator(&md, None, 0, 24).unwrap();
        let g = GL2Element::unipotent(rat_int(2)).mul(&GL2Element::diag(Rat::one(), rat_int(4)).unwrap());
        let rep = gl2_act_pair(&md, &g, &f).unwrap();
        // chart coherence: sampling the acted pair reproduces the pointwise
        // action values
        for z in [rat_int(3), rat_int(6), rat_int(15)] {
            let via_pair = eval_point(&md, &rep.pair, &z).unwrap();
            let direct = gl2_act_point(&md, &g, &f, &z).unwrap();
            let t = 4; // compare a few guaranteed digits
            assert!(via_pair.sub(&direct).vanishes_to(t), "z = {z}");
        }
    }

    #[test]
    fn generator_chart_shapes() {
        let md = default_module();
        // a = 0 shifted generator: chart 2 is z^j
        let f = lalpha_generator(&md, Some(&Rat::zero()), 0, 16).unwrap();
        // j = 0: f2 == 1 at integer samples
        for z in 0..6u64 {
            let v = f.f2.eval_nat(z);
            assert!(v.eq_at_prec(&Scalar::one(&md.ctx)), "z = {z}");
        }
        // power generator: f1(z) = (pz)^j = 1 for j = 0
        let f = lalpha_generator(&md, None, 0, 16).unwrap();
        for z in 0..6u64 {
            assert!(f.f1.eval_nat(z).eq_at_prec(&Scalar::one(&md.ctx)));
        }
    }

    #[test]
    fn smooth_equivariance_on_generators() {
        let md = default_module();
        let h = SmoothCompactFunction {
            pieces: vec![
                SmoothPiece { center: rat_int(1), level: 1, value: Rat::one() },
                SmoothPiece { center: rat(1, 3), level: 0, value: rat_int(2) },
            ],
        };
        let points = [rat_int(2), rat_int(3), rat(1, 3), rat_int(7), rat(2, 9)];
        let gens = [
            GL2Element::unipotent(rat_int(1)),
            GL2Element::diag(Rat::one(), rat_int(2)).unwrap(),
            GL2Element::diag(Rat::one(), rat_int(3)).unwrap(),
            GL2Element::chart_swap(3),
        ];
        for g in &gens {
            assert!(
                intertwiner_equivariance_check(&md, g, &h, &points).unwrap(),
                "generator {g:?}"
            );
        }
    }

    #[test]
    fn tail_decay_of_generator_pairing_pieces() {
        // the difference f_{n+1} - f_n of shell truncations of the a = 0
        // generator pairs against an integral distribution with bound
        // ~ p^{n(j - val alpha)}: check the value decays at that rate
        let md = default_module();
        let j = 0i64;
        let k2j = md.k as i64 - 2 - j;
        // the pairing of f_{n+1}-f_n against mu is
        // (alpha p/beta)^n (m_n - m_{n+1}) with m_i = int_{p^i Z_p} z^{k-2-j} dmu;
        // for the Dirac at 1, m_0 = 1 and m_i = 0 for i >= 1: value
        // (alpha p / beta)^0 * 1 at n=0 and 0 beyond: decay trivially holds.
        // For the Haar-like distribution with all moments 1 the value is 0.
        // Use a two-point distribution nu = delta_1 + delta_3: m_0 = 1 + 3^{k2j},
        // m_1 = 3^{k2j}, m_i = 0 for i >= 2.
        let m = |i: i64| -> Rat {
            if i <= 0 {
                &Rat::one() + &rat_pow(&rat_int(3), k2j)
            } else if i == 1 {
                rat_pow(&rat_int(3), k2j)
            } else {
                Rat::zero()
            }
        };
        for n in 0..=3i64 {
            let val = &rat_pow(&weight_ratio(&md), n) * &(&m(n) - &m(n + 1));
            if !val.is_zero() {
                let va = pval(&md.alpha, 3);
                assert!(pval(&val, 3) >= n * (j - va), "n = {n}");
            }
        }
    }
}
