//! C^r functions on Z_p via Mahler coefficients, order-r tempered
//! distributions via their transforms, moments over cosets, and the
//! growth criterion for extending a system of coset moments to an order-r
//! distribution.

use crate::padic::{padic_binomial, Ctx, Scalar, ScalarError};
use crate::series::{
    binom_table, one_plus_x_pow, order_r_estimate, psi_truncated, OrderEstimate, OrderVerdict,
    PowerSeries, SeriesError,
};
use crate::rat::{parse_rat, pval, rat_int, show_rat, Rat};
use num_traits::{One, ToPrimitive, Zero};

// ---------------------------------------------------------------------------
// MahlerFunction
// ---------------------------------------------------------------------------

/// f(z) = sum_n a_n binom(z,n) with a claimed differentiability class r.
#[derive(Clone, Debug)]
pub struct MahlerFunction {
    pub ctx: Ctx,
    pub coeffs: Vec<Scalar>,
    pub class_r: Rat,
}

/// Forward-difference transform: a_n = sum_i (-1)^i binom(n,i) f(n-i).
pub fn mahler_coeffs(ctx: &Ctx, values: &[Scalar], class_r: Rat) -> MahlerFunction {
    let k = values.len() - 1;
    let bt = binom_table(ctx, k);
    let coeffs = (0..=k)
        .map(|n| {
            let mut acc = Scalar::zero(ctx);
            for i in 0..=n {
                let term = values[n - i].mul_int_residue(bt[n][i]);
                acc = if i % 2 == 0 { acc.add(&term) } else { acc.sub(&term) };
            }
            acc
        })
        .collect();
    MahlerFunction { ctx: ctx.clone(), coeffs, class_r }
}

impl MahlerFunction {
    /// Evaluate at a p-integral scalar point.  The Mahler tail beyond the
    /// window is dropped; for class-r inputs its size is controlled by
    /// cr_norm, which the caller must consult for a rigorous bound.
    pub fn eval(&self, z: &Scalar) -> Result<Scalar, ScalarError> {
        let mut acc = Scalar::zero(&self.ctx);
        let mut b = Scalar::one(&self.ctx); // binom(z, n), updated iteratively
        let mut top = z.clone();
        for (n, a) in self.coeffs.iter().enumerate() {
            if n > 0 {
                b = b.mul(&top).div(&Scalar::from_i64(&self.ctx, n as i64))?;
                top = top.sub(&Scalar::one(&self.ctx));
            }
            acc = acc.add(&a.mul(&b));
        }
        Ok(acc)
    }

    /// Evaluate at a small nonnegative integer (exact: the Mahler sum is
    /// finite for integer points below the window size).
    pub fn eval_nat(&self, z: u64) -> Scalar {
        let bt = binom_table(&self.ctx, self.coeffs.len() - 1);
        let mut acc = Scalar::zero(&self.ctx);
        for (n, a) in self.coeffs.iter().enumerate() {
            if (n as u64) <= z && (z as usize) < bt.len() {
                acc = acc.add(&a.mul_int_residue(bt[z as usize][n]));
            } else if (n as u64) <= z {
                // large z: fall back to scalar binomial
                let zb = padic_binomial(&Scalar::from_i64(&self.ctx, z as i64), n as u64)
                    .expect("integer binomial");
                acc = acc.add(&a.mul(&zb));
            }
        }
        acc
    }
}

/// log_p of ||f||_r = sup_n (n+1)^r |a_n|: sup_n (-val(a_n) + r log_p(n+1)),
/// with the same tail-third verdict heuristic as order_r_estimate.
pub fn cr_norm(f: &MahlerFunction, r: &Rat, slope_tol: f64) -> OrderEstimate {
    // ||f||_r uses +r log_p(n+1); reuse the series estimator with -r.
    let fake = PowerSeries::new(&f.ctx, f.coeffs.clone());
    order_r_estimate(&fake, &-r.clone(), slope_tol)
}

// ---------------------------------------------------------------------------
// AmiceDistribution
// ---------------------------------------------------------------------------

/// A distribution stored through its transform w(X) = sum mu(binom(z,n)) X^n,
/// with a claimed order r.
#[derive(Clone, Debug)]
pub struct AmiceDistribution {
    pub w: PowerSeries,
    pub order_r: Rat,
}

impl AmiceDistribution {
    pub fn new(w: PowerSeries, order_r: Rat) -> AmiceDistribution {
        AmiceDistribution { w, order_r }
    }

    /// Point mass at a p-integral scalar c: w = (1+X)^c.
    pub fn dirac(ctx: &Ctx, c: &Scalar, k: usize) -> Result<AmiceDistribution, SeriesError> {
        let w = one_plus_x_pow(ctx, c, k)?.add(&PowerSeries::one(ctx, k));
        Ok(AmiceDistribution { w, order_r: Rat::zero() })
    }

    pub fn ctx(&self) -> &Ctx {
        &self.w.ctx
    }

    /// Smallest p-valuation among the known transform coefficients (>= 0
    /// means an integral, order-0-bounded window).
    pub fn min_coeff_val(&self) -> i64 {
        self.w
            .coeffs
            .iter()
            .filter_map(|c| c.val())
            .map(|v| {
                // floor of the rational valuation
                let f = v.floor();
                f.numer().to_i64().unwrap_or(0)
            })
            .min()
            .unwrap_or(0)
    }
}

/// moment(mu, a, n, j) = int_{a+p^n Z_p} (z-a)^j dmu(z)
///  = d^j[phi^n psi^n((1+X)^{-a} w)](0) = p^{jn} (d^j psi^n((1+X)^{-a} w))(0)
/// where d = (1+X) d/dX.
pub fn moment(mu: &AmiceDistribution, a: &Rat, n: u32, j: u32) -> Result<Scalar, SeriesError> {
    let ctx = mu.ctx();
    if !a.is_zero() && pval(a, ctx.p) < 0 {
        return Err(SeriesError::Invalid("coset center must be p-integral".into()));
    }
    let k = mu.w.trunc();
    let sa = Scalar::from_rat(ctx, a);
    let mut g = if a.is_zero() {
        mu.w.clone()
    } else {
        let shift = one_plus_x_pow(ctx, &sa.neg(), k)?.add(&PowerSeries::one(ctx, k));
        mu.w.mul(&shift)
    };
    // tail coefficients of (1+X)^{-a} w have p-valuation >= min coeff val
    let tail_val = mu.min_coeff_val().min(0);
    for _ in 0..n {
        g = psi_truncated(&g, tail_val);
    }
    if (j as usize) > g.trunc() {
        return Err(SeriesError::Invalid(format!(
            "moment: derivative order {j} exceeds surviving truncation {}",
            g.trunc()
        )));
    }
    let d = g.twisted_derivative(j as usize);
    let scale = Scalar::from_rat(ctx, &crate::rat::times_p_pow(&Rat::one(), ctx.p, (j * n) as i64));
    Ok(d.coeff(0).mul(&scale))
}

/// Total-variation style pairing against a Mahler window (independent
/// oracle for order-0 moments): int f dmu ~ sum_n w_n a_n(f).
pub fn mahler_pairing(mu: &AmiceDistribution, f: &MahlerFunction) -> Scalar {
    let k = mu.w.trunc().min(f.coeffs.len() - 1);
    let mut acc = Scalar::zero(mu.ctx());
    for n in 0..=k {
        acc = acc.add(&mu.w.coeffs[n].mul(&f.coeffs[n]));
    }
    acc
}

// ---------------------------------------------------------------------------
// Growth criterion (coset-moment sweep)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize)]
pub struct MomentSweepReport {
    pub verdict: OrderVerdict,
    /// min over the sweep of val(moment(a,n,j)) - n(j - r).
    pub c_min: Option<String>,
    /// The binding (a, n, j).
    pub worst: Option<(String, u32, u32)>,
    /// Some moment was zero-at-precision with a bound weak enough to affect
    /// the verdict.
    pub inconclusive: bool,
    /// Per-level minima of val(moment) - n(j - r), index n.
    pub level_minima: Vec<Option<String>>,
}

/// Sweeps cosets a + p^n Z_p for n <= n_max, a over residues mod p^n, and
/// j <= d, checking that val(moment) - n(j-r) admits a uniform lower bound
/// C.  With `c_val` given, passes iff the minimum is >= c_val; otherwise
/// the verdict is a trend test: growing (fail) when per-level minima
/// decline by more than `decline_tol` per level.
pub fn amice_velu_check(
    mu: &AmiceDistribution,
    r: &Rat,
    d: u32,
    n_max: u32,
    c_val: Option<&Rat>,
    decline_tol: f64,
) -> Result<MomentSweepReport, SeriesError> {
    let ctx = mu.ctx();
    let mut c_min: Option<Rat> = None;
    let mut worst: Option<(Rat, u32, u32)> = None;
    let mut inconclusive = false;
    let mut level_minima: Vec<Option<Rat>> = Vec::new();
    for n in 0..=n_max {
        let mut level_min: Option<Rat> = None;
        let pn = (ctx.p as i64).pow(n);
        for a0 in 0..pn {
            let a = rat_int(a0);
            for j in 0..=d {
                let m = moment(mu, &a, n, j)?;
                let margin = rat_int(n as i64) * (rat_int(j as i64) - r);
                match m.val() {
                    Some(v) => {
                        let c = v - &margin;
                        if c_min.as_ref().map_or(true, |b| c < *b) {
                            c_min = Some(c.clone());
                            worst = Some((a.clone(), n, j));
                        }
                        if level_min.as_ref().map_or(true, |b| c < *b) {
                            level_min = Some(c);
                        }
                    }
                    None => {
                        // zero at precision: val >= prec bound; conclusive
                        // only if the bound already clears the current floor
                        let bound = m.prec_val() - &margin;
                        if c_min.as_ref().map_or(false, |b| bound < *b) {
                            inconclusive = true;
                        }
                    }
                }
            }
        }
        level_minima.push(level_min);
    }
    let verdict = match (&c_min, c_val) {
        (None, _) => OrderVerdict::BoundedSoFar,
        (Some(c), Some(target)) => {
            if c >= target {
                OrderVerdict::BoundedSoFar
            } else {
                OrderVerdict::Growing
            }
        }
        (Some(_), None) => {
            // trend: compare successive level minima
            let vals: Vec<Option<f64>> = level_minima
                .iter()
                .map(|o| o.as_ref().and_then(|v| v.to_f64()))
                .collect();
            let mut growing = false;
            let base = vals.first().and_then(|v| *v);
            for (n, v) in vals.iter().enumerate().skip(1) {
                if let (Some(b), Some(x)) = (base, v) {
                    if *x < b - decline_tol * n as f64 {
                        growing = true;
                    }
                }
            }
            if growing {
                OrderVerdict::Growing
            } else {
                OrderVerdict::BoundedSoFar
            }
        }
    };
    Ok(MomentSweepReport {
        verdict,
        c_min: c_min.as_ref().map(show_rat),
        worst: worst.map(|(a, n, j)| (show_rat(&a), n, j)),
        inconclusive,
        level_minima: level_minima.iter().map(|o| o.as_ref().map(show_rat)).collect(),
    })
}

/// Default per-level decline tolerance for the trend verdict
/// (configuration key `amice_decline_tol`).
pub const AMICE_DECLINE_TOL: f64 = 0.4;

// ---------------------------------------------------------------------------
// Locally polynomial functions
// ---------------------------------------------------------------------------

/// One piece 1_{a + p^n Z_p}(z) * sum_i lambda_i (z-a)^i.
#[derive(Clone, Debug, PartialEq)]
pub struct LocPolyPiece {
    pub center: Rat,
    pub level: u32,
    pub coeffs: Vec<Rat>,
}

/// A finite union of polynomial pieces on disjoint cosets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocPolyFunction {
    pub pieces: Vec<LocPolyPiece>,
}

impl LocPolyFunction {
    /// Check pairwise coset disjointness for a given prime.
    pub fn disjoint(&self, p: u64) -> bool {
        for (i, a) in self.pieces.iter().enumerate() {
            for b in self.pieces.iter().skip(i + 1) {
                let diff = &a.center - &b.center;
                let lvl = a.level.min(b.level) as i64;
                if diff.is_zero() || pval(&diff, p) >= lvl {
                    return false;
                }
            }
        }
        true
    }

    /// Textual form: one line per piece, `a n : l_0 l_1 ... l_d`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.pieces {
            s.push_str(&show_rat(&p.center));
            s.push(' ');
            s.push_str(&p.level.to_string());
            s.push_str(" :");
            for c in &p.coeffs {
                s.push(' ');
                s.push_str(&show_rat(c));
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, p: u64) -> Result<LocPolyFunction, SeriesError> {
        let mut pieces = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, tail) = line
                .split_once(':')
                .ok_or_else(|| SeriesError::Invalid(format!("missing ':' in piece line: {line}")))?;
            let mut hw = head.split_whitespace();
            let center = parse_rat(
                hw.next().ok_or_else(|| SeriesError::Invalid("missing center".into()))?,
                p,
            )
            .map_err(SeriesError::Invalid)?;
            let level: u32 = hw
                .next()
                .ok_or_else(|| SeriesError::Invalid("missing level".into()))?
                .parse()
                .map_err(|e| SeriesError::Invalid(format!("bad level: {e}")))?;
            let coeffs = tail
                .split_whitespace()
                .map(|t| parse_rat(t, p).map_err(SeriesError::Invalid))
                .collect::<Result<Vec<_>, _>>()?;
            pieces.push(LocPolyPiece { center, level, coeffs });
        }
        Ok(LocPolyFunction { pieces })
    }
}

/// int f dmu for a locally polynomial f supported in Z_p: bilinear sum of
/// coset moments.
pub fn integrate_locpoly(
    mu: &AmiceDistribution,
    f: &LocPolyFunction,
) -> Result<Scalar, SeriesError> {
    let ctx = mu.ctx();
    if !f.disjoint(ctx.p) {
        return Err(SeriesError::Invalid("locpoly pieces are not disjoint".into()));
    }
    let mut acc = Scalar::zero(ctx);
    for piece in &f.pieces {
        if !piece.center.is_zero() && pval(&piece.center, ctx.p) < 0 {
            return Err(SeriesError::Invalid("piece outside Z_p".into()));
        }
        for (i, lam) in piece.coeffs.iter().enumerate() {
            if lam.is_zero() {
                continue;
            }
            let m = moment(mu, &piece.center, piece.level, i as u32)?;
            acc = acc.add(&m.mul(&Scalar::from_rat(ctx, lam)));
        }
    }
    Ok(acc)
}
