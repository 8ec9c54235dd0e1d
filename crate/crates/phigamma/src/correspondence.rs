//! The bridge between psi-compatible coordinate sequences and distribution
//! pairs on Q_p: level families with coherence, integration of locally
//! polynomial functions over Q_p, the unique noncompact moment extension,
//! the inverse map with its bound certificate, the Fourier-side comparison
//! at cyclotomic points, the dual growth/annihilation conditions, and the
//! Borel equivariance checks via moment transport.

use num_traits::{One, ToPrimitive, Zero};

use crate::gl2::{
    extension_constant, rat_pow, smooth_image, unit_coset_mass, weight_ratio, Gl2Error,
    SmoothCompactFunction,
};
use crate::mahler::{moment, AmiceDistribution};
use crate::padic::{additive_character, Scalar};
use crate::rat::{pval, times_p_pow, Rat};
use crate::series::{psi_truncated, PowerSeries, SeriesError};
use crate::wach::{
    borel_act, sequence_bound_check, BorelElement, BoundCertificate, FilteredPhiModule,
    PsiSequence, WachError, WachVector,
};

#[derive(Debug, thiserror::Error)]
pub enum CorrError {
    #[error("level coherence violated between levels {0} and {1}")]
    Coherence(usize, usize),
    #[error("support exceeds the window: needs level {needed}, have {have}")]
    WindowExhausted { needed: usize, have: usize },
    #[error("unsupported input: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error(transparent)]
    Wach(#[from] WachError),
    #[error(transparent)]
    Gl2(#[from] Gl2Error),
}

// ---------------------------------------------------------------------------
// Level families
// ---------------------------------------------------------------------------

/// A distribution on Q_p stored as a level family: `levels[n]` encodes the
/// restriction to p^{-n} Z_p, pulled back to Z_p by z -> p^n z.  Coherence
/// (level n is the psi-pushforward of level n+1) makes integration
/// independent of the admissible level.
#[derive(Clone, Debug)]
pub struct CompactQpDistribution {
    pub eigenvalue: Rat,
    pub levels: Vec<AmiceDistribution>,
}

impl CompactQpDistribution {
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn ctx(&self) -> &crate::padic::Ctx {
        self.levels[0].ctx()
    }
}

fn series_tail_floor(f: &PowerSeries) -> i64 {
    let mut m = 0i64;
    for c in &f.coeffs {
        let v = match c.val() {
            Some(v) => v,
            None => c.prec_val(),
        };
        m = m.min(v.floor().to_integer().to_i64().unwrap_or(0));
    }
    m
}

/// Verify psi(W_{n+1}) = W_n at shared precision for every adjacent pair.
pub fn check_level_coherence(levels: &[AmiceDistribution]) -> Result<(), CorrError> {
    for n in 0..levels.len().saturating_sub(1) {
        let hi = &levels[n + 1].w;
        let pushed = psi_truncated(hi, series_tail_floor(hi));
        let lo = levels[n].w.truncate(pushed.trunc());
        if !lo.eq_at_prec(&pushed) {
            return Err(CorrError::Coherence(n, n + 1));
        }
    }
    Ok(())
}

/// From a psi-compatible window (v_0..v_T) to the pair of level families:
/// the alpha family has level-n transform alpha^n w_{alpha,n} (beta
/// likewise).  Level coherence is re-verified rather than assumed.
pub fn sequence_to_distributions(
    md: &FilteredPhiModule,
    s: &PsiSequence,
) -> Result<(CompactQpDistribution, CompactQpDistribution), CorrError> {
    if s.terms.is_empty() {
        return Err(CorrError::Unsupported("empty window".into()));
    }
    let ctx = &s.terms[0].wa.ctx;
    let ra = Rat::from_integer(md.val_alpha().into());
    let rb = Rat::from_integer(md.val_beta().into());
    let mut la = Vec::with_capacity(s.terms.len());
    let mut lb = Vec::with_capacity(s.terms.len());
    for (n, term) in s.terms.iter().enumerate() {
        let an = Scalar::from_rat(ctx, &rat_pow(&md.alpha, n as i64));
        let bn = Scalar::from_rat(ctx, &rat_pow(&md.beta, n as i64));
        la.push(AmiceDistribution::new(term.wa.scalar_mul(&an), ra.clone()));
        lb.push(AmiceDistribution::new(term.wb.scalar_mul(&bn), rb.clone()));
    }
    check_level_coherence(&la)?;
    check_level_coherence(&lb)?;
    Ok((
        CompactQpDistribution { eigenvalue: md.alpha.clone(), levels: la },
        CompactQpDistribution { eigenvalue: md.beta.clone(), levels: lb },
    ))
}

/// Inverse of `sequence_to_distributions`: w_{alpha,n} is the transform of
/// alpha^{-n} times level n.  Returns the window together with its
/// boundedness certificate.
pub fn distributions_to_sequence(
    md: &FilteredPhiModule,
    mu_a: &CompactQpDistribution,
    mu_b: &CompactQpDistribution,
) -> Result<(PsiSequence, BoundCertificate), CorrError> {
    let ctx = mu_a.ctx();
    let t = mu_a.levels.len().min(mu_b.levels.len());
    let mut terms = Vec::with_capacity(t);
    for n in 0..t {
        let ai = Scalar::from_rat(ctx, &rat_pow(&mu_a.eigenvalue, -(n as i64)));
        let bi = Scalar::from_rat(ctx, &rat_pow(&mu_b.eigenvalue, -(n as i64)));
        terms.push(WachVector::new(
            mu_a.levels[n].w.scalar_mul(&ai),
            mu_b.levels[n].w.scalar_mul(&bi),
        ));
    }
    let s = PsiSequence { terms, consumed: 0 };
    let cert = sequence_bound_check(md, &s);
    Ok((s, cert))
}

// ---------------------------------------------------------------------------
// Integration over Q_p
// ---------------------------------------------------------------------------

/// One piece 1_{center + p^level Z_p}(z) * sum_i coeffs[i] (z-center)^i,
/// anywhere on Q_p (negative levels and non-integral centers allowed).
#[derive(Clone, Debug, PartialEq)]
pub struct QpPolyPiece {
    pub center: Rat,
    pub level: i64,
    pub coeffs: Vec<Rat>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QpPolyFunction {
    pub pieces: Vec<QpPolyPiece>,
}

impl QpPolyFunction {
    pub fn single(center: Rat, level: i64, coeffs: Vec<Rat>) -> QpPolyFunction {
        QpPolyFunction { pieces: vec![QpPolyPiece { center, level, coeffs }] }
    }
}

/// int_{b + p^n Z_p} (z-b)^j dmu over Q_p, through the minimal admissible
/// level N: equals p^{-Nj} int_{p^N b + p^{n+N} Z_p} (u - p^N b)^j dmu_N(u).
pub fn moment_qp(
    mu: &CompactQpDistribution,
    b: &Rat,
    n: i64,
    j: u32,
) -> Result<Scalar, CorrError> {
    let ctx = mu.ctx();
    let p = ctx.p;
    let need_b = if b.is_zero() { 0 } else { (-pval(b, p)).max(0) };
    let need = need_b.max(-n).max(0) as usize;
    if need >= mu.levels.len() {
        return Err(CorrError::WindowExhausted { needed: need, have: mu.levels.len() });
    }
    let bb = times_p_pow(b, p, need as i64);
    let m = moment(&mu.levels[need], &bb, (n + need as i64) as u32, j)?;
    if need == 0 {
        return Ok(m);
    }
    let scale = times_p_pow(&Rat::one(), p, -(need as i64) * j as i64);
    Ok(m.mul(&Scalar::from_rat(ctx, &scale)))
}

/// Same moment computed at an explicitly chosen admissible level (oracle
/// for the independence-of-level invariant).
pub fn moment_qp_at_level(
    mu: &CompactQpDistribution,
    b: &Rat,
    n: i64,
    j: u32,
    level: usize,
) -> Result<Scalar, CorrError> {
    let ctx = mu.ctx();
    let p = ctx.p;
    if level >= mu.levels.len() {
        return Err(CorrError::WindowExhausted { needed: level, have: mu.levels.len() });
    }
    let bb = times_p_pow(b, p, level as i64);
    if (!bb.is_zero() && pval(&bb, p) < 0) || n + (level as i64) < 0 {
        return Err(CorrError::Unsupported("level not admissible for this coset".into()));
    }
    let m = moment(&mu.levels[level], &bb, (n + level as i64) as u32, j)?;
    let scale = times_p_pow(&Rat::one(), p, -(level as i64) * j as i64);
    Ok(m.mul(&Scalar::from_rat(ctx, &scale)))
}

/// int f dmu for a locally polynomial f on Q_p.
pub fn integrate_qp(mu: &CompactQpDistribution, f: &QpPolyFunction) -> Result<Scalar, CorrError> {
    let ctx = mu.ctx();
    let mut acc = Scalar::zero(ctx);
    for piece in &f.pieces {
        for (j, lam) in piece.coeffs.iter().enumerate() {
            if lam.is_zero() {
                continue;
            }
            let m = moment_qp(mu, &piece.center, piece.level, j as u32)?;
            acc = acc.add(&m.mul(&Scalar::from_rat(ctx, lam)));
        }
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Noncompact moment extension
// ---------------------------------------------------------------------------

/// Extended moment tables: index j in 0..=k-2,
///   t_alpha[j] = int_{Q_p - Z_p}   (p a/b)^{val z} z^j dmu_alpha,
///   t_beta[j]  = int_{Q_p - pZ_p}  (p b/a)^{val z} z^j dmu_beta.
#[derive(Clone, Debug)]
pub struct ExtensionTable {
    pub t_alpha: Vec<Scalar>,
    pub t_beta: Vec<Scalar>,
}

/// Solve the two evaluation identities of the intertwiner against the
/// scaling relation int f dmu_beta = c_ext * int I(f) dmu_alpha: the
/// resulting triangular system determines the noncompact moments uniquely
/// from the compact ones (c_ext != 0 is guarded).
pub fn extend_versfin(
    md: &FilteredPhiModule,
    mu_a: &CompactQpDistribution,
    mu_b: &CompactQpDistribution,
) -> Result<ExtensionTable, CorrError> {
    let ctx = mu_a.ctx();
    let c1 = Scalar::from_rat(ctx, &unit_coset_mass(md)?);
    let cext = extension_constant(md)?;
    let cext_s = Scalar::from_rat(ctx, &cext);
    let cext_inv = Scalar::from_rat(ctx, &cext.recip());
    let d = (md.k - 2) as usize;
    let mut t_alpha = Vec::with_capacity(d + 1);
    let mut t_beta = Vec::with_capacity(d + 1);
    for j in 0..=d as u32 {
        let ma = moment(&mu_a.levels[0], &Rat::zero(), 0, j)?;
        let map = moment(&mu_a.levels[0], &Rat::zero(), 1, j)?;
        let mb = moment(&mu_b.levels[0], &Rat::zero(), 0, j)?;
        // compact-generator identity: c1 M_a[j] + t_a[j] = (1/c_ext) M_b[j]
        let ta = cext_inv.mul(&mb).sub(&c1.mul(&ma));
        // noncompact-generator identity:
        // (1/c_ext) t_b[j] = M_a^p[j] + c1 (t_a[j] + M_a[j] - M_a^p[j])
        let tb = cext_s.mul(&map.add(&c1.mul(&ta.add(&ma).sub(&map))));
        t_alpha.push(ta);
        t_beta.push(tb);
    }
    Ok(ExtensionTable { t_alpha, t_beta })
}

// ---------------------------------------------------------------------------
// Fourier-side comparison at cyclotomic points
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct FourierReport {
    /// Both sides agree at the shared precision.
    pub equal: bool,
    /// Guaranteed pi-adic digits of the comparison.
    pub digits: i64,
    /// Cyclotomic level of the character used.
    pub character_level: u32,
}

/// Compare int_{p^{-N} Z_p} z^j e^{2 i pi z y} dmu_beta with
/// (beta/alpha)^{val y} times the mu_alpha integral, both evaluated in the
/// exact cyclotomic extension: the integral at level N is
/// p^{-Nj} (d^j W_N)(zeta^u - 1) with d = (1+X) d/dX and zeta^u the
/// character of level N - val(y).
pub fn fourier_condition_check(
    md: &FilteredPhiModule,
    mu_a: &CompactQpDistribution,
    mu_b: &CompactQpDistribution,
    y: &Rat,
    big_n: usize,
    j: u32,
) -> Result<FourierReport, CorrError> {
    let ctx = mu_a.ctx();
    let p = ctx.p;
    if y.is_zero() {
        return Err(CorrError::Unsupported("y must be nonzero".into()));
    }
    let vy = pval(y, p);
    if big_n >= mu_a.levels.len() || big_n >= mu_b.levels.len() {
        return Err(CorrError::WindowExhausted {
            needed: big_n,
            have: mu_a.levels.len().min(mu_b.levels.len()),
        });
    }
    let y_scaled = times_p_pow(y, p, -(big_n as i64));
    let (m, zeta_u) = additive_character(p, ctx.n, &y_scaled);
    if m == 0 {
        return Err(CorrError::Unsupported(
            "character is trivial at this level; increase depth or lower N".into(),
        ));
    }
    let point = zeta_u.sub(&Scalar::one(&zeta_u.ctx));
    let ga = mu_a.levels[big_n].w.twisted_derivative(j as usize);
    let gb = mu_b.levels[big_n].w.twisted_derivative(j as usize);
    let va = ga.evaluate(&point);
    let vb = gb.evaluate(&point);
    let ratio = Scalar::from_rat(&point.ctx, &rat_pow(&(&md.beta / &md.alpha), vy));
    let diff = vb.sub(&va.mul(&ratio));
    Ok(FourierReport {
        equal: diff.is_zero(),
        digits: diff.prec_pi(),
        character_level: m,
    })
}

// ---------------------------------------------------------------------------
// Dual growth and annihilation conditions
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum DualVerdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug)]
pub struct DualConditionsReport {
    pub verdict: DualVerdict,
    /// min over the sweep of val(value) - threshold - val(C).
    pub margin_min: Option<Rat>,
    /// The binding condition.
    pub binding: Option<String>,
    pub inconclusive: usize,
    pub checks: usize,
    pub annihilation_ok: bool,
}

struct MarginTracker {
    vc: Rat,
    min: Option<Rat>,
    binding: Option<String>,
    inconclusive: usize,
    checks: usize,
    failed: bool,
}

impl MarginTracker {
    fn new(vc: Rat) -> MarginTracker {
        MarginTracker { vc, min: None, binding: None, inconclusive: 0, checks: 0, failed: false }
    }

    fn score(&mut self, value: &Scalar, threshold: i64, label: String) {
        self.checks += 1;
        let thr = &Rat::from_integer(threshold.into()) + &self.vc;
        match value.val() {
            Some(v) => {
                let margin = &v - &thr;
                if margin < Rat::zero() {
                    self.failed = true;
                }
                if self.min.as_ref().map_or(true, |m| &margin < m) {
                    self.min = Some(margin);
                    self.binding = Some(label);
                }
            }
            None => {
                // zero at precision: conclusive only if the precision
                // window reaches the threshold
                if value.prec_val() < thr {
                    self.inconclusive += 1;
                }
            }
        }
    }
}

fn binom_i64(n: usize, k: usize) -> i64 {
    let mut acc: i64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i64 / (i + 1) as i64;
    }
    acc
}

/// Shell count used when approximating full noncompact integrals; the
/// discarded tail gains at least (1 + val(alpha) - val(beta)) valuation per
/// shell.
const ANNIHILATION_SHELLS: i64 = 6;

/// Growth/annihilation conditions on the alpha-side functional: with
/// r = val(alpha) and d = k-2,
///   (i)   val(int_{a+p^n}(z-a)^j dmu)            >= val(C) + n(j - r),
///   (ii)  val(weighted complement integral, n>=0) >= val(C) + n(r - j),
///   (iii) the same for a = 0, n <= 0 via the extended table,
/// plus annihilation of the kernel-line generators for j < r (within the
/// truncated-tail tolerance).  `ext` is the alpha table of
/// `extend_versfin`.
pub fn dual_conditions_check(
    md: &FilteredPhiModule,
    mu: &CompactQpDistribution,
    ext: &[Scalar],
    c_val: &Rat,
    n_max: i64,
) -> Result<DualConditionsReport, CorrError> {
    let ctx = mu.ctx();
    let p = ctx.p;
    let r = md.val_alpha();
    let d = (md.k - 2) as i64;
    let vc = Rat::from_integer(pval(c_val, p).into());
    let wr = weight_ratio(md);
    let mut tr = MarginTracker::new(vc);

    // (i): coset moments across positive and negative levels
    let centers = [Rat::zero(), Rat::one(), Rat::from_integer(2.into()), Rat::new(1.into(), (p as i64).into())];
    for a in &centers {
        for n in -n_max..=n_max {
            for j in 0..=d {
                match moment_qp(mu, a, n, j as u32) {
                    Ok(v) => tr.score(&v, n * (j - r), format!("(i) a={a} n={n} j={j}")),
                    Err(CorrError::WindowExhausted { .. }) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
    }

    // (ii): weighted complement integrals around integral centers, n >= 0:
    // noncompact part via the extended table (binomial recentering), plus
    // the shells 0..n-1 inside Z_p
    for a in [Rat::zero(), Rat::one()] {
        for n in 0..=n_max {
            for j in 0..=d {
                let m = (d - j) as usize;
                let mut val = Scalar::zero(ctx);
                for l in 0..=m {
                    let c = &Rat::from_integer(binom_i64(m, l).into()) * &rat_pow(&(-a.clone()), l as i64);
                    val = val.add(&ext[m - l].mul(&Scalar::from_rat(ctx, &c)));
                }
                for i in 0..n {
                    let s = moment(&mu.levels[0], &a, i as u32, m as u32)?
                        .sub(&moment(&mu.levels[0], &a, i as u32 + 1, m as u32)?);
                    val = val.add(&s.mul(&Scalar::from_rat(ctx, &rat_pow(&wr, i))));
                }
                tr.score(&val, n * (r - j), format!("(ii) a={a} n={n} j={j}"));
            }
        }
    }

    // (iii): a = 0, n <= 0: the complement {val z < n} is the extended
    // region minus the shells n..-1
    for n in -n_max..=0 {
        for j in 0..=d {
            let m = (d - j) as u32;
            let mut val = ext[m as usize].clone();
            let mut exhausted = false;
            for i in n..0 {
                let s = match (moment_qp(mu, &Rat::zero(), i, m), moment_qp(mu, &Rat::zero(), i + 1, m)) {
                    (Ok(x), Ok(y)) => x.sub(&y),
                    _ => {
                        exhausted = true;
                        break;
                    }
                };
                val = val.sub(&s.mul(&Scalar::from_rat(ctx, &rat_pow(&wr, i))));
            }
            if !exhausted {
                tr.score(&val, n * (r - j), format!("(iii) n={n} j={j}"));
            }
        }
    }

    // annihilation of the kernel line for j < r: the global power
    // generator through its two charts, and the weighted generator at 0
    let tail_gain = (1 + md.val_alpha() - md.val_beta()).max(1);
    let mut annihilation_ok = true;
    for j in 0..r.min(d + 1) {
        let m = (d - j) as u32;
        // shells only survive while psi^i leaves enough truncation for the
        // degree-m derivative
        let mut shells = 0i64;
        let mut surviving = mu.levels[0].w.trunc();
        while shells < ANNIHILATION_SHELLS && surviving / (p as usize) >= m as usize {
            surviving /= p as usize;
            shells += 1;
        }
        let tol = shells * tail_gain;
        let mp = moment(&mu.levels[0], &Rat::zero(), 1, j as u32)?;
        let m0 = moment(&mu.levels[0], &Rat::zero(), 0, m)?;
        let m0p = moment(&mu.levels[0], &Rat::zero(), 1, m)?;
        let power_gen = mp.add(&m0.sub(&m0p)).add(&ext[m as usize]);
        annihilation_ok &= power_gen.vanishes_to(tol.min(power_gen.prec_pi()));

        let mut weighted = ext[m as usize].clone();
        for i in 0..shells {
            let s = moment(&mu.levels[0], &Rat::zero(), i as u32, m)?
                .sub(&moment(&mu.levels[0], &Rat::zero(), i as u32 + 1, m)?);
            weighted = weighted.add(&s.mul(&Scalar::from_rat(ctx, &rat_pow(&wr, i))));
        }
        annihilation_ok &= weighted.vanishes_to(tol.min(weighted.prec_pi()));
    }

    let verdict = if tr.failed || !annihilation_ok {
        DualVerdict::Fail
    } else if tr.inconclusive > 0 {
        DualVerdict::Inconclusive
    } else {
        DualVerdict::Pass
    };
    Ok(DualConditionsReport {
        verdict,
        margin_min: tr.min,
        binding: tr.binding,
        inconclusive: tr.inconclusive,
        checks: tr.checks,
        annihilation_ok,
    })
}

// ---------------------------------------------------------------------------
// The smooth bridge (independent of the Fourier route)
// ---------------------------------------------------------------------------

/// For h locally constant with support in Z_p and total integral 0 (so the
/// intertwiner image has compact support), check
/// int h dmu_beta = c_ext * int I(h) dmu_alpha by materializing I(h) as a
/// finite coset decomposition.
pub fn smooth_bridge_check(
    md: &FilteredPhiModule,
    mu_a: &CompactQpDistribution,
    mu_b: &CompactQpDistribution,
    h: &SmoothCompactFunction,
) -> Result<bool, CorrError> {
    let p = md.ctx.p;
    if !h.total_integral(p).is_zero() {
        return Err(CorrError::Unsupported("bridge test needs total integral 0".into()));
    }
    let mut lmax: i64 = 1;
    for q in &h.pieces {
        if (!q.center.is_zero() && pval(&q.center, p) < 0) || q.level < 0 {
            return Err(CorrError::Unsupported("support must lie in Z_p".into()));
        }
        lmax = lmax.max(q.level + 1);
    }
    // LHS: int h dmu_beta
    let lhs_f = QpPolyFunction {
        pieces: h
            .pieces
            .iter()
            .map(|q| QpPolyPiece { center: q.center.clone(), level: q.level, coeffs: vec![q.value.clone()] })
            .collect(),
    };
    let lhs = integrate_qp(mu_b, &lhs_f)?;

    // RHS: materialize I(h) on p^{-out} Z_p refined to level lmax, verify
    // it vanishes below, then integrate against mu_alpha
    let out: i64 = 1;
    let pr = Rat::from_integer((p as i64).into());
    let far = rat_pow(&pr, -(out + 2));
    if !smooth_image(md, h, &far)?.is_zero() {
        return Err(CorrError::Unsupported("image support exceeds the assumed window".into()));
    }
    let cells = (p as i64).pow((out + lmax) as u32);
    let mut pieces = Vec::new();
    for u in 0..cells {
        let center = &Rat::from_integer(u.into()) * &rat_pow(&pr, -out);
        let v0 = smooth_image(md, h, &center)?;
        let probe = &center + &rat_pow(&pr, lmax);
        if smooth_image(md, h, &probe)? != v0 {
            return Err(CorrError::Unsupported("image not constant at the refinement level".into()));
        }
        if !v0.is_zero() {
            pieces.push(QpPolyPiece { center, level: lmax, coeffs: vec![v0] });
        }
    }
    let rhs_raw = integrate_qp(mu_a, &QpPolyFunction { pieces })?;
    let rhs = rhs_raw.mul(&Scalar::from_rat(mu_a.ctx(), &extension_constant(md)?));
    Ok(lhs.eq_at_prec(&rhs))
}

// ---------------------------------------------------------------------------
// Borel equivariance via moment transport
// ---------------------------------------------------------------------------

/// Pull a locally polynomial test function back through the three stage
/// transports of the window action [[1,z],[0,a p^t]] (unipotent shift, unit
/// rescale, p-power rescale, in that order) so that
/// int f d(g.mu) = lambda^t int (transported f) dmu with lambda the
/// eigenvalue tag of mu.
pub fn transport_functional(
    md: &FilteredPhiModule,
    g: &BorelElement,
    f: &QpPolyFunction,
) -> QpPolyFunction {
    let p = md.ctx.p;
    let mut pieces = f.pieces.clone();
    // unipotent: f(z + z0): same local polynomial around the shifted center
    if !g.z.is_zero() {
        for q in &mut pieces {
            q.center = &q.center - &g.z;
        }
    }
    // unit diagonal: f(a z): center/a, coeff_j * a^j
    if !g.a.is_one() {
        for q in &mut pieces {
            q.center = &q.center / &g.a;
            for (j, c) in q.coeffs.iter_mut().enumerate() {
                *c = &*c * &rat_pow(&g.a, j as i64);
            }
        }
    }
    // p-power diagonal: f(w / p^t): center * p^t, level + t, coeff_j p^{-tj}
    if g.t != 0 {
        for q in &mut pieces {
            q.center = times_p_pow(&q.center, p, g.t);
            q.level += g.t;
            for (j, c) in q.coeffs.iter_mut().enumerate() {
                *c = times_p_pow(c, p, -g.t * j as i64);
            }
        }
    }
    QpPolyFunction { pieces }
}

#[derive(Clone, Debug)]
pub struct EquivarianceReport {
    pub pass: bool,
    /// Guaranteed pi-adic digits at the weakest comparison.
    pub digits: i64,
    pub witness: Option<String>,
    pub functionals: usize,
}

/// Compare sequence_to_distributions(borel_act(g, s)) with the transported
/// moments of sequence_to_distributions(s) over a family of test
/// functionals, on both eigenvalue components.
pub fn borel_equivariance_check(
    md: &FilteredPhiModule,
    s: &PsiSequence,
    g: &BorelElement,
    functionals: &[QpPolyFunction],
) -> Result<EquivarianceReport, CorrError> {
    let (ma, mb) = sequence_to_distributions(md, s)?;
    let acted = borel_act(md, g, s)?;
    let (ma2, mb2) = sequence_to_distributions(md, &acted)?;
    let ctx = ma.ctx();
    let sa = Scalar::from_rat(ctx, &rat_pow(&md.alpha, g.t));
    let sb = Scalar::from_rat(ctx, &rat_pow(&md.beta, g.t));
    let mut pass = true;
    let mut digits = i64::MAX;
    let mut witness = None;
    for (i, f) in functionals.iter().enumerate() {
        let tf = transport_functional(md, g, f);
        for (tag, macted, morig, scale) in
            [("alpha", &ma2, &ma, &sa), ("beta", &mb2, &mb, &sb)]
        {
            let lhs = integrate_qp(macted, f)?;
            let rhs = integrate_qp(morig, &tf)?.mul(scale);
            let diff = lhs.sub(&rhs);
            digits = digits.min(diff.prec_pi());
            if !diff.is_zero() {
                pass = false;
                if witness.is_none() {
                    witness = Some(format!("functional {i} on the {tag} component"));
                }
            }
        }
    }
    Ok(EquivarianceReport {
        pass,
        digits: if digits == i64::MAX { 0 } else { digits },
        witness,
        functionals: functionals.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::padic::PadicContext;
    use crate::rat::{rat, rat_int};
    use crate::series::psi;
    use crate::wach::{
        build_psi_sequence, make_module, psi_fixed_point, row_to_vector, wach_kernel_generators,
    };

    const KK: usize = 60;

    fn default_module() -> FilteredPhiModule {
        let ctx = PadicContext::qp(3, 8);
        make_module(&ctx, 3, rat_int(3), rat_int(6)).unwrap()
    }

    fn random_top(md: &FilteredPhiModule, seed: u64) -> WachVector {
        // a deterministic integral polynomial top term
        let ctx = &md.ctx;
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let mut mk = || {
            let mut coeffs = Vec::with_capacity(KK + 1);
            for _ in 0..=KK {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                coeffs.push(Scalar::from_rat(ctx, &rat_int((state >> 33) as i64 % 27)));
            }
            PowerSeries::new(ctx, coeffs)
        };
        WachVector::new(mk(), mk())
    }

    fn member_vector(md: &FilteredPhiModule) -> WachVector {
        let gens = wach_kernel_generators(md, KK, 2, 12).unwrap();
        assert!(!gens.is_empty());
        // a small integral combination of the first two generators
        let a = row_to_vector(&md.ctx, &gens[0], KK);
        if gens.len() > 1 {
            let b = row_to_vector(&md.ctx, &gens[1], KK);
            a.add(&b.scalar_mul(&Scalar::from_rat(&md.ctx, &rat_int(2))))
        } else {
            a
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let md = default_module();
        let s = build_psi_sequence(&md, &random_top(&md, 7), 3);
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        let (s2, _cert) = distributions_to_sequence(&md, &ma, &mb).unwrap();
        assert_eq!(s.terms.len(), s2.terms.len());
        for (a, b) in s.terms.iter().zip(s2.terms.iter()) {
            assert!(a.eq_at_prec(b));
        }
    }

    #[test]
    fn integrate_level_independence() {
        let md = default_module();
        let s = build_psi_sequence(&md, &random_top(&md, 11), 3);
        let (ma, _mb) = sequence_to_distributions(&md, &s).unwrap();
        for j in 0..=1u32 {
            let v0 = moment_qp_at_level(&ma, &Rat::zero(), 0, j, 0).unwrap();
            let v1 = moment_qp_at_level(&ma, &Rat::zero(), 0, j, 1).unwrap();
            assert!(v0.eq_at_prec(&v1), "j = {j}: {v0:?} vs {v1:?}");
        }
        // a piece outside Z_p: telescoping of restrictions
        let third = rat(1, 3);
        let direct = moment_qp(&ma, &third, 0, 0).unwrap();
        let via_shells = moment_qp(&ma, &Rat::zero(), -1, 0)
            .unwrap()
            .sub(&moment_qp(&ma, &Rat::zero(), 0, 0).unwrap());
        // 1/3 + Z_p and 2/3 + Z_p partition p^{-1}Z_p - Z_p
        let other = moment_qp(&ma, &rat(2, 3), 0, 0).unwrap();
        assert!(direct.add(&other).eq_at_prec(&via_shells));
    }

    #[test]
    fn zero_sequence_gives_zero_distributions() {
        let md = default_module();
        let z = WachVector::zero(&md.ctx, KK);
        let s = PsiSequence { terms: vec![z.clone(), z.clone(), z], consumed: 0 };
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        for lv in ma.levels.iter().chain(mb.levels.iter()) {
            assert!(lv.w.is_zero());
        }
    }

    #[test]
    fn coherence_violation_detected() {
        let md = default_module();
        let mut s = build_psi_sequence(&md, &random_top(&md, 3), 2);
        // corrupt a low coefficient of the middle term
        s.terms[1] = s.terms[1].add(&WachVector::new(
            PowerSeries::one(&md.ctx, KK),
            PowerSeries::zero(&md.ctx, KK),
        ));
        assert!(matches!(
            sequence_to_distributions(&md, &s),
            Err(CorrError::Coherence(_, _))
        ));
    }

    #[test]
    fn fourier_zero_pair_trivial() {
        let md = default_module();
        let z = WachVector::zero(&md.ctx, KK);
        let s = PsiSequence { terms: vec![z.clone(), z], consumed: 0 };
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        let rep = fourier_condition_check(&md, &ma, &mb, &rat(1, 3), 0, 0).unwrap();
        assert!(rep.equal);
        assert_eq!(rep.character_level, 1);
    }

    #[test]
    fn fourier_holds_on_member_and_fails_perturbed() {
        let md = default_module();
        let v = member_vector(&md);
        let s = PsiSequence { terms: vec![v], consumed: 0 };
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        for (y, j) in [(rat(1, 3), 0u32), (rat(2, 3), 1), (rat(1, 9), 0)] {
            let rep = fourier_condition_check(&md, &ma, &mb, &y, 0, j).unwrap();
            assert!(rep.equal, "y = {y}, j = {j}, digits {}", rep.digits);
            assert!(rep.digits > 0);
        }
        // perturb the beta side by a Dirac at 1
        let mut mb2 = mb.clone();
        let dirac = crate::mahler::AmiceDistribution::dirac(
            &md.ctx,
            &Scalar::one(&md.ctx),
            KK,
        )
        .unwrap();
        mb2.levels[0] = AmiceDistribution::new(
            mb2.levels[0].w.add(&dirac.w),
            mb2.levels[0].order_r.clone(),
        );
        let mut any_fail = false;
        for (y, j) in [(rat(1, 3), 0u32), (rat(2, 3), 1), (rat(1, 9), 0)] {
            let rep = fourier_condition_check(&md, &ma, &mb2, &y, 0, j).unwrap();
            any_fail |= !rep.equal;
        }
        assert!(any_fail);
    }

    #[test]
    fn smooth_bridge_on_member() {
        let md = default_module();
        let v = member_vector(&md);
        let s = build_psi_sequence(&md, &v, 0);
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        // h = 1_{1+3Z_p} - 1_{2+3Z_p}: integral 0, support in Z_p
        let h = SmoothCompactFunction {
            pieces: vec![
                crate::gl2::SmoothPiece { center: rat_int(1), level: 1, value: Rat::one() },
                crate::gl2::SmoothPiece { center: rat_int(2), level: 1, value: rat_int(-1) },
            ],
        };
        assert!(smooth_bridge_check(&md, &ma, &mb, &h).unwrap());
    }

    #[test]
    fn dirac_fails_annihilation() {
        let md = default_module();
        let ctx = &md.ctx;
        let dirac = AmiceDistribution::dirac(ctx, &Scalar::one(ctx), KK).unwrap();
        // build a psi-coherent one-level family from the Dirac alone
        let mu = CompactQpDistribution { eigenvalue: md.alpha.clone(), levels: vec![dirac] };
        let dirac_b = AmiceDistribution::dirac(ctx, &Scalar::one(ctx), KK).unwrap();
        let mu_b = CompactQpDistribution { eigenvalue: md.beta.clone(), levels: vec![dirac_b] };
        let ext = extend_versfin(&md, &mu, &mu_b).unwrap();
        let rep = dual_conditions_check(&md, &mu, &ext.t_alpha, &Rat::one(), 2).unwrap();
        assert!(!rep.annihilation_ok);
        assert_eq!(rep.verdict, DualVerdict::Fail);
    }

    #[test]
    fn equivariance_on_generators() {
        let md = default_module();
        let s = build_psi_sequence(&md, &random_top(&md, 23), 4);
        let fams = vec![
            QpPolyFunction::single(Rat::zero(), 0, vec![Rat::zero(), Rat::one()]),
            QpPolyFunction::single(Rat::one(), 1, vec![Rat::one()]),
            QpPolyFunction::single(Rat::zero(), 1, vec![Rat::one(), Rat::one()]),
        ];
        let gens = [
            BorelElement::identity(),
            BorelElement::unipotent(Rat::one()),
            BorelElement::diag_unit(rat_int(4)),
            BorelElement::diag_p_power(1),
        ];
        for g in &gens {
            let rep = borel_equivariance_check(&md, &s, g, &fams).unwrap();
            assert!(rep.pass, "g = {g:?}: {:?}", rep.witness);
            assert!(rep.digits > 0);
        }
    }

    #[test]
    fn equivariance_with_consuming_elements() {
        let md = default_module();
        let s = build_psi_sequence(&md, &random_top(&md, 31), 4);
        // negative p-power and a non-integral unipotent both consume window
        let fams = vec![QpPolyFunction::single(Rat::zero(), 0, vec![Rat::one()])];
        for g in [BorelElement::diag_p_power(-1), BorelElement::unipotent(rat(1, 3))] {
            let rep = borel_equivariance_check(&md, &s, &g, &fams).unwrap();
            assert!(rep.pass, "g = {g:?}: {:?}", rep.witness);
        }
    }

    #[test]
    fn fixed_point_sequence_is_coherent() {
        let md = default_module();
        let seed = WachVector::diagonal(PowerSeries::one(&md.ctx, KK));
        let z = psi_fixed_point(&md, &seed, 4).unwrap();
        // a psi-fixed point gives a constant compatible sequence
        let s = PsiSequence { terms: vec![z.clone(), z.clone(), z], consumed: 0 };
        let (ma, mb) = sequence_to_distributions(&md, &s).unwrap();
        assert_eq!(ma.depth(), 2);
        assert_eq!(mb.depth(), 2);
    }

    #[test]
    fn psi_is_level_pushforward() {
        // independent oracle for the coherence convention: the transform of
        // the level-n family member is psi of the level-(n+1) member
        let md = default_module();
        let s = build_psi_sequence(&md, &random_top(&md, 41), 2);
        let (ma, _) = sequence_to_distributions(&md, &s).unwrap();
        let pushed = psi(&ma.levels[1].w);
        assert!(ma.levels[0].w.truncate(pushed.trunc()).eq_at_prec(&pushed));
    }
}
