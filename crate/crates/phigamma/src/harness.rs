//! Deterministic check orchestration: flat key-value run configuration,
//! seeded execution of one light check per acceptance area, and stable
//! report emission in json or text form.

use std::fmt::Write as _;
use std::time::Instant;

use num_traits::{One, Zero};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::correspondence::{
    borel_equivariance_check, distributions_to_sequence, dual_conditions_check, extend_versfin,
    fourier_condition_check, sequence_to_distributions, DualVerdict, QpPolyFunction,
};
use crate::gl2::{intertwiner_identity_check, FactorReading};
use crate::mahler::{amice_velu_check, AmiceDistribution, AMICE_DECLINE_TOL};
use crate::padic::{Ctx, PadicContext, Scalar};
use crate::rat::{parse_rat, rat, rat_int, show_rat, Rat};
use crate::series::{
    gamma_act, log_series, order_r_estimate, phi, phi_slice, psi, psi_slice, LaurentSlice,
    OrderVerdict, PowerSeries, ORDER_SLOPE_TOL,
};
use crate::wach::{
    build_psi_sequence, coord_psi_truncated, dsharp_iterate, fil0_test, lattice_psi_row,
    make_module, psi_fixed_point, row_to_vector, solve_wach_lattice, wach_kernel_generators,
    x_shift_row, BorelElement, FilteredPhiModule, LatticeApprox, PsiSequence, Tri, WachVector,
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Flat key-value run configuration.  Keys: p, N (scalar precision),
/// K (series truncation), k (weight), alpha, beta (rationals, "u*p^v"
/// accepted), fil_depth, window, n_max (coset sweep radius), seed, suite.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub p: u64,
    pub prec_n: u32,
    pub series_k: usize,
    pub weight_k: u32,
    pub alpha: Rat,
    pub beta: Rat,
    pub fil_depth: u32,
    pub window: usize,
    pub n_max: i64,
    pub seed: u64,
    pub suite: String,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            p: 3,
            prec_n: 8,
            series_k: 60,
            weight_k: 3,
            alpha: rat_int(3),
            beta: rat_int(6),
            fil_depth: 2,
            window: 4,
            n_max: 2,
            seed: 0,
            suite: "all".into(),
        }
    }
}

impl RunConfig {
    /// Parses the flat key-value form ('#' starts a comment); missing keys
    /// keep their defaults, unknown keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig, String> {
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected key = value", ln + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<u64>().map_err(|e| format!("{key}: {e}"));
            match key {
                "p" => cfg.p = num(value)?,
                "N" => cfg.prec_n = num(value)? as u32,
                "K" => cfg.series_k = num(value)? as usize,
                "k" => cfg.weight_k = num(value)? as u32,
                "alpha" => cfg.alpha = parse_rat(value, cfg.p)?,
                "beta" => cfg.beta = parse_rat(value, cfg.p)?,
                "fil_depth" => cfg.fil_depth = num(value)? as u32,
                "window" => cfg.window = num(value)? as usize,
                "n_max" => cfg.n_max = value.parse().map_err(|e| format!("n_max: {e}"))?,
                "seed" => cfg.seed = num(value)?,
                "suite" => cfg.suite = value.to_string(),
                other => return Err(format!("line {}: unknown key {other}", ln + 1)),
            }
        }
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "# run configuration\n\
             p = {}\nN = {}\nK = {}\nk = {}\nalpha = {}\nbeta = {}\n\
             fil_depth = {}\nwindow = {}\nn_max = {}\nseed = {}\nsuite = {}\n",
            self.p,
            self.prec_n,
            self.series_k,
            self.weight_k,
            show_rat(&self.alpha),
            show_rat(&self.beta),
            self.fil_depth,
            self.window,
            self.n_max,
            self.seed,
            self.suite,
        )
    }

    /// SHA-256 hash of the canonical text form, in hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            write!(out, "{b:02x}").unwrap();
        }
        out
    }

    /// Validates the module constraints up front and builds the working
    /// context; rejections name the violated constraint.
    pub fn validate(&self) -> Result<(Ctx, FilteredPhiModule), String> {
        if self.weight_k < 2 {
            return Err("k: the weight must be >= 2".into());
        }
        if self.prec_n == 0 || self.series_k == 0 {
            return Err("N and K must be positive".into());
        }
        if !is_prime(self.p) {
            return Err(format!("p: {} is not prime", self.p));
        }
        if !SUITES.contains(&self.suite.as_str()) {
            return Err(format!("suite: expected one of {}", SUITES.join(", ")));
        }
        let ctx = PadicContext::qp(self.p, self.prec_n);
        let md = make_module(&ctx, self.weight_k, self.alpha.clone(), self.beta.clone())
            .map_err(|e| format!("alpha/beta: {e}"))?;
        Ok((ctx, md))
    }
}

pub const SUITES: [&str; 6] = ["all", "series", "mahler", "wach", "gl2", "correspondence"];

fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    let mut d = 2u64;
    while d * d <= n {
        if n % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    pub suite: String,
    /// The identity or bound the check certifies.
    pub anchor: String,
    /// "pass", "fail", or "inconclusive".
    pub verdict: String,
    /// Binding witness or failure diagnostic.
    pub witness: String,
    /// Guaranteed pi-adic digits at the weakest comparison (0 when the
    /// check is a pure verdict).
    pub digits: i64,
    pub wall_ms: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub records: Vec<CheckRecord>,
    pub passed: usize,
    pub failed: usize,
    pub inconclusive: usize,
}

impl Report {
    /// The report with wall-time fields zeroed: the determinism-comparable
    /// form.
    pub fn normalized(&self) -> Report {
        let mut r = self.clone();
        for rec in &mut r.records {
            rec.wall_ms = 0;
        }
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<ReportFormat, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!("format: expected json or text, got {other}")),
        }
    }
}

/// Serializes the report with stable field ordering.
pub fn emit_report(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serialization");
            s.push('\n');
            s
        }
        ReportFormat::Text => {
            let mut out = String::new();
            writeln!(out, "config {}", report.config_hash).unwrap();
            for r in &report.records {
                writeln!(
                    out,
                    "[{}] {}/{} — {} ({} digits, {} ms)",
                    r.verdict, r.suite, r.name, r.anchor, r.digits, r.wall_ms
                )
                .unwrap();
                if !r.witness.is_empty() {
                    writeln!(out, "    witness: {}", r.witness).unwrap();
                }
            }
            writeln!(
                out,
                "{} passed, {} failed, {} inconclusive",
                report.passed, report.failed, report.inconclusive
            )
            .unwrap();
            out
        }
    }
}

pub fn parse_report(json: &str) -> Result<Report, String> {
    serde_json::from_str(json).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// Check catalogue
// ---------------------------------------------------------------------------

/// name, suite, anchor, formula (the explain text).
pub const CHECKS: [(&str, &str, &str, &str); 12] = [
    (
        "projection-formula",
        "series",
        "psi(phi(f) g) = f psi(g)",
        "psi is the left inverse of phi adjoint to the trace over the degree-p \
         subring: for random polynomial pairs, psi(phi(f) * g) and f * psi(g) \
         agree coefficientwise at working precision, on power series and on \
         finite-tailed Laurent slices.",
    ),
    (
        "gamma-compatibility",
        "series",
        "gamma_a phi = phi gamma_a, gamma_a psi = psi gamma_a, gamma_a gamma_b = gamma_ab",
        "the substitution X -> (1+X)^a - 1 commutes with phi and psi and forms \
         a group in the unit exponent a, checked on random triples (a, b, f).",
    ),
    (
        "order-growth-witness",
        "series",
        "log(1+X) has bounded order-1 norm; log(1+X)^2 does not",
        "order_r_estimate computes sup_n (-val(a_n) - r log_p(n+1)) over the \
         truncation window with a head/tail slope test: the logarithm series \
         is the classic order-1 witness and its square the growing one.",
    ),
    (
        "moment-growth-bridge",
        "mahler",
        "val(moment(a, n, j)) - n(j - r) bounded below <=> order-r coefficient bound",
        "the coset-moment sweep (amice_velu_check) and the coefficient-side \
         estimate (order_r_estimate) are two readings of the same growth \
         condition; their verdicts agree on random transforms, with any \
         discrepancy carrying an inconclusive precision flag.",
    ),
    (
        "fil-zero-routes",
        "wach",
        "binomial residue sums and the t-expansion give the same degree-0 filtration verdict",
        "for the level-m inverse-Frobenius image of a vector, the residue \
         Delta_j = alpha^m S_j(w_alpha) - beta^m S_j(w_beta) must vanish for \
         every j and embedding; the direct residue route and the t-expansion \
         decomposition route return the same verdict on random vectors.",
    ),
    (
        "core-sandwich",
        "wach",
        "X^{k-1} N ⊆ D# ⊆ N, with psi carrying D# onto itself up to the slope",
        "iterating M -> <M, psi(M)> from X^{k-1} N stabilizes within budget; \
         the stable module D# sits between X^{k-1} N and N, and its psi image \
         spans the low-degree shadow after one eigenvalue-slope rescaling.",
    ),
    (
        "psi-fixed-point",
        "wach",
        "psi(z) = z with z nonzero at truncation",
        "z = sum_j phi^j(y) with y = (1+X) phi(X^k x) is a psi fixed point: \
         psi(y) = 0 by basis orthogonality and term j only contributes above \
         X-degree p^j, so the geometric series converges at truncation once \
         p^J exceeds the series order.",
    ),
    (
        "intertwiner-reading",
        "gl2",
        "exactly one reading of the complement factor satisfies both closed-form evaluations",
        "the intertwiner of z^j 1_{Zp} and of the weighted noncompact \
         generator admit closed forms whose printed factor is ambiguous \
         between a variable and a complement-indicator reading; evaluating \
         both identities at sample points confirms the complement reading \
         (1 - 1_U(z)) and rules the other out.",
    ),
    (
        "window-round-trip",
        "correspondence",
        "distributions_to_sequence(sequence_to_distributions(s)) = s",
        "a psi-compatible window maps to the pair of eigenvalue-rescaled \
         compact distribution families and back without loss, at working \
         precision, for random integral windows.",
    ),
    (
        "dual-growth",
        "correspondence",
        "val(int_{a+p^n Zp} (z-a)^j dmu) >= val(C) + n(j - val(alpha)) with C = 1",
        "on a lattice member the compact coset moments, the extended \
         noncompact moments (both orientations), and the kernel-line \
         annihilation all clear the uniform growth bound with constant 1.",
    ),
    (
        "borel-equivariance",
        "correspondence",
        "int f d(g·mu) = lambda^t int (f ∘ g) dmu for upper-triangular g",
        "the window action of [[1, z],[0, a p^t]] transports integration \
         against locally polynomial functionals through recentering, unit \
         scaling, and level shift, with the eigenvalue factor lambda^t; the \
         action also satisfies the (right-action) group law on random words.",
    ),
    (
        "fourier-bridge",
        "correspondence",
        "(d^j W_beta)(zeta_y - 1) = (beta/alpha)^{val y} (d^j W_alpha)(zeta_y - 1)",
        "twisted moments against the additive character e^{2 i pi z y} are \
         evaluations of derivative twists of the transform at cyclotomic \
         points zeta^u - 1; on the two eigenvalue components they differ by \
         exactly (beta/alpha)^{val y}.",
    ),
];

/// Returns (anchor, formula) for a check name.
pub fn explain(name: &str) -> Option<(&'static str, &'static str)> {
    CHECKS
        .iter()
        .find(|(n, _, _, _)| *n == name)
        .map(|(_, _, anchor, formula)| (*anchor, *formula))
}

// ---------------------------------------------------------------------------
// Suite runner
// ---------------------------------------------------------------------------

/// Outcome of one check body: pass flag, witness text, guaranteed digits.
type CheckOutcome = Result<(bool, String, i64), String>;

pub fn run_suite(config: &RunConfig) -> Result<Report, String> {
    let (_ctx, md) = config.validate()?;
    let hash = config.hash();
    let mut records = Vec::new();
    // lattice members are shared by the correspondence checks
    let mut member: Option<WachVector> = None;
    for (idx, (name, suite, anchor, _)) in CHECKS.iter().enumerate() {
        if config.suite != "all" && config.suite != *suite {
            continue;
        }
        // one independent stream per check so that suite selection does not
        // shift the draws of the others
        let mut rng =
            ChaCha8Rng::seed_from_u64(
                config.seed.wrapping_add((idx as u64).wrapping_mul(0x9e3779b97f4a7c15)),
            );
        let start = Instant::now();
        let outcome = match *name {
            "projection-formula" => check_projection(&md, &mut rng),
            "gamma-compatibility" => check_gamma(&md, &mut rng),
            "order-growth-witness" => check_order_witness(&md),
            "moment-growth-bridge" => check_moment_bridge(&md, &mut rng),
            "fil-zero-routes" => check_fil_zero(&md, &mut rng),
            "core-sandwich" => check_sandwich(&md),
            "psi-fixed-point" => check_fixed_point(&md),
            "intertwiner-reading" => check_reading(&md, &mut rng),
            "window-round-trip" => check_round_trip(&md, config, &mut rng),
            "dual-growth" => check_dual_growth(&md, config, &mut member),
            "borel-equivariance" => check_equivariance(&md, config, &mut rng),
            "fourier-bridge" => check_fourier(&md, &mut member),
            other => Err(format!("unknown check {other}")),
        };
        let wall_ms = start.elapsed().as_millis() as u64;
        let (verdict, witness, digits) = match outcome {
            Ok((true, w, d)) => ("pass", w, d),
            Ok((false, w, d)) => ("fail", w, d),
            Err(e) => ("fail", e, 0),
        };
        records.push(CheckRecord {
            name: (*name).into(),
            suite: (*suite).into(),
            anchor: (*anchor).into(),
            verdict: verdict.into(),
            witness,
            digits,
            wall_ms,
            config_hash: hash.clone(),
        });
    }
    let passed = records.iter().filter(|r| r.verdict == "pass").count();
    let failed = records.iter().filter(|r| r.verdict == "fail").count();
    let inconclusive = records.iter().filter(|r| r.verdict == "inconclusive").count();
    Ok(Report { config_hash: hash, records, passed, failed, inconclusive })
}

fn random_poly(ctx: &Ctx, rng: &mut ChaCha8Rng, deg: usize) -> PowerSeries {
    let coeffs = (0..=deg).map(|_| Scalar::from_i64(ctx, rng.gen_range(-100..100))).collect();
    PowerSeries::new(ctx, coeffs)
}

fn check_projection(md: &FilteredPhiModule, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let ctx = &md.ctx;
    let mut digits = i64::MAX;
    for i in 0..40 {
        let f = random_poly(ctx, rng, 10);
        let g = random_poly(ctx, rng, 12);
        // exact polynomial representatives: pad so psi sees zero tails
        let pad = 3 * f.trunc() + g.trunc();
        let lhs = psi(&phi(&f.truncate(pad)).mul(&g.truncate(pad)));
        let k = lhs.trunc();
        let rhs = f.truncate(k).mul(&psi(&g.truncate((md.ctx.p as usize) * k)).truncate(k));
        if !lhs.truncate(k).eq_at_prec(&rhs) {
            return Ok((false, format!("power-series pair {i}"), 0));
        }
        digits = digits.min((ctx.n as i64) * ctx.e as i64);
    }
    for i in 0..10 {
        let f = LaurentSlice::new(
            ctx,
            -1,
            (0..3).map(|_| Scalar::from_i64(ctx, rng.gen_range(-50..50))).collect(),
            -80,
        );
        let g = LaurentSlice::new(
            ctx,
            -3,
            (0..10).map(|_| Scalar::from_i64(ctx, rng.gen_range(-50..50))).collect(),
            -80,
        );
        let lhs = psi_slice(&phi_slice(&f).map_err(|e| e.to_string())?.mul(&g).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let rhs = f.mul(&psi_slice(&g).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let hi = rhs.hi().min(lhs.hi());
        for e in lhs.lo.max(rhs.lo)..=hi {
            if !lhs.coeff(e).eq_at_prec(&rhs.coeff(e)) {
                return Ok((false, format!("laurent pair {i}, exponent {e}"), 0));
            }
        }
    }
    Ok((true, "40 power-series pairs, 10 laurent pairs".into(), digits))
}

fn check_gamma(md: &FilteredPhiModule, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let ctx = &md.ctx;
    let p = ctx.p as i64;
    let unit = |rng: &mut ChaCha8Rng| loop {
        let a = rng.gen_range(2..200i64);
        if a % p != 0 {
            return Scalar::from_i64(ctx, a);
        }
    };
    for i in 0..20 {
        let a = unit(rng);
        let b = unit(rng);
        let f = random_poly(ctx, rng, 12);
        let kk = f.trunc();
        let err = |e: crate::series::SeriesError| e.to_string();
        // commutation with phi; pad so that the psi contamination from the
        // unknown tail (val >= floor((P+1)/p) - t at coefficient t) clears
        // the scalar precision over the compared window
        let big = f.truncate((p as usize) * (kk + ctx.n as usize + 2));
        let lhs = gamma_act(&a, &phi(&big)).map_err(err)?.truncate(kk);
        let rhs = phi(&gamma_act(&a, &big).map_err(err)?).truncate(kk);
        if !lhs.eq_at_prec(&rhs) {
            return Ok((false, format!("triple {i}: gamma-phi"), 0));
        }
        // commutation with psi: coefficient j of psi needs input degrees up
        // to p j + p - 1, so compare only up to the original degree
        let lhs = gamma_act(&a, &psi(&big)).map_err(err)?.truncate(kk);
        let rhs = psi(&gamma_act(&a, &big).map_err(err)?).truncate(kk);
        if !lhs.eq_at_prec(&rhs) {
            return Ok((false, format!("triple {i}: gamma-psi"), 0));
        }
        // group law
        let lhs = gamma_act(&a, &gamma_act(&b, &f).map_err(err)?).map_err(err)?;
        let rhs = gamma_act(&a.mul(&b), &f).map_err(err)?;
        if !lhs.eq_at_prec(&rhs) {
            return Ok((false, format!("triple {i}: group law"), 0));
        }
    }
    Ok((true, "20 random triples (a, b, f)".into(), (ctx.n as i64) * ctx.e as i64))
}

fn check_order_witness(md: &FilteredPhiModule) -> CheckOutcome {
    let ctx = &md.ctx;
    let kk = 200;
    let t = log_series(ctx, kk);
    let one = Rat::one();
    let est1 = order_r_estimate(&t, &one, ORDER_SLOPE_TOL);
    let est2 = order_r_estimate(&t.mul(&t), &one, ORDER_SLOPE_TOL);
    let ok = est1.verdict == OrderVerdict::BoundedSoFar && est2.verdict == OrderVerdict::Growing;
    Ok((
        ok,
        format!(
            "log: {:?} (sup {:.2}), log^2: {:?} (sup {:.2})",
            est1.verdict, est1.sup, est2.verdict, est2.sup
        ),
        0,
    ))
}

fn check_moment_bridge(md: &FilteredPhiModule, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let ctx = &md.ctx;
    let kk = 40usize;
    let r = Rat::one();
    let mut agreements = 0usize;
    let total = 10usize;
    for i in 0..total {
        let growing = i % 2 == 1;
        let mut coeffs: Vec<Scalar> =
            (0..=kk).map(|_| Scalar::from_i64(ctx, rng.gen_range(-50..50))).collect();
        if growing {
            // unit spikes of valuation -2n at the indices p^n: order-1
            // growth visible to both readings
            for n in 0..=3u32 {
                let mut u = 2 * rng.gen_range(0..40i64) + 1;
                while u % ctx.p as i64 == 0 {
                    u += 2;
                }
                let idx = (ctx.p as usize).pow(n);
                if idx <= kk {
                    coeffs[idx] = Scalar::from_rat(
                        ctx,
                        &(rat_int(u) / rat_int((ctx.p as i64).pow(2 * n))),
                    );
                }
            }
        }
        let mu = AmiceDistribution::new(PowerSeries::new(ctx, coeffs), r.clone());
        let coeff_side = order_r_estimate(&mu.w, &r, ORDER_SLOPE_TOL);
        let sweep = amice_velu_check(&mu, &r, 1, 2, Some(&rat_int(0)), AMICE_DECLINE_TOL)
            .map_err(|e| e.to_string())?;
        if sweep.verdict == coeff_side.verdict {
            agreements += 1;
        } else if !sweep.inconclusive && !coeff_side.inconclusive {
            return Ok((false, format!("instance {i}: unflagged disagreement"), 0));
        }
    }
    Ok((agreements >= total - 2, format!("{agreements}/{total} verdicts agree"), 0))
}

fn check_fil_zero(md: &FilteredPhiModule, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let ctx = &md.ctx;
    for i in 0..20 {
        let v = WachVector::new(random_poly(ctx, rng, 40), random_poly(ctx, rng, 40));
        // the decomposition route is exact for m <= 2 at default precision
        for m in 1..=2u32 {
            let rep = fil0_test(md, &v, m).map_err(|e| e.to_string())?;
            let flagged =
                rep.verdict == Tri::Inconclusive || rep.decomposition == Tri::Inconclusive;
            if rep.verdict != rep.decomposition && !flagged {
                return Ok((false, format!("vector {i}, level {m}: routes disagree"), 0));
            }
        }
    }
    Ok((true, "20 random vectors, both routes, all levels".into(), 0))
}

fn check_sandwich(md: &FilteredPhiModule) -> CheckOutcome {
    let kk = 20usize;
    let nhat = solve_wach_lattice(md, 2, kk, 2).map_err(|e| e.to_string())?;
    let res = dsharp_iterate(md, &nhat, md.k - 1, 10).map_err(|e| e.to_string())?;
    let d = &res.lattice;
    let shifted: Vec<Vec<u64>> =
        nhat.basis.iter().map(|row| x_shift_row(row, (md.k - 1) as usize, kk)).collect();
    let xh = LatticeApprox::from_generators(nhat.p, nhat.level, kk, shifted);
    if !xh.is_subset_of(d) || !d.is_subset_of(&nhat) {
        return Ok((false, "lattice sandwich violated".into(), 0));
    }
    let psi_gens: Vec<Vec<u64>> = d.basis.iter().map(|row| lattice_psi_row(md, d, row)).collect();
    let img = LatticeApprox::from_generators(d.p, d.level, kk, psi_gens);
    if !img.is_subset_of(d) {
        return Ok((false, "psi image escapes the core".into(), 0));
    }
    let slope = crate::rat::pval(&md.alpha, md.ctx.p).max(crate::rat::pval(&md.beta, md.ctx.p));
    let low = kk / md.ctx.p as usize;
    if !d.scaled(slope as u32).project(low).is_subset_of(&img.project(low)) {
        return Ok((false, "psi image misses the slope-rescaled shadow".into(), 0));
    }
    Ok((true, format!("stabilized at step {}", res.stabilization_step), 0))
}

fn check_fixed_point(md: &FilteredPhiModule) -> CheckOutcome {
    let ctx = &md.ctx;
    let kk = 60usize;
    // smallest J with p^J > kk
    let mut j = 1u32;
    while (ctx.p as u64).pow(j) <= kk as u64 {
        j += 1;
    }
    let seed = WachVector::new(PowerSeries::one(ctx, kk), PowerSeries::one(ctx, kk));
    let z = psi_fixed_point(md, &seed, j).map_err(|e| e.to_string())?;
    if z.is_zero() {
        return Ok((false, "fixed point is zero".into(), 0));
    }
    let pz = coord_psi_truncated(md, &z, z.coeff_val_floor());
    let diff = pz.sub(&z.truncate(pz.trunc()));
    if !diff.is_zero() {
        return Ok((false, "psi(z) differs from z at working precision".into(), 0));
    }
    let half = pz.trunc() / 2;
    let digits = diff
        .wa
        .coeffs
        .iter()
        .take(half + 1)
        .chain(diff.wb.coeffs.iter().take(half + 1))
        .map(|c| c.prec_pi())
        .min()
        .unwrap_or(0);
    Ok((digits > 0, format!("budget J = {j}"), digits))
}

fn check_reading(md: &FilteredPhiModule, rng: &mut ChaCha8Rng) -> CheckOutcome {
    let p = md.ctx.p as i64;
    let mut points = Vec::new();
    while points.len() < 20 {
        let u = rng.gen_range(1..60i64);
        if u % p == 0 {
            continue;
        }
        let v = rng.gen_range(-2..=2i32);
        let z = crate::rat::times_p_pow(&rat_int(u), md.ctx.p, v as i64);
        points.push(z);
    }
    for j in 0..=1u32 {
        let rep = intertwiner_identity_check(md, j, &points).map_err(|e| e.to_string())?;
        if rep.confirmed != Some(FactorReading::OneMinusIndicator) {
            return Ok((false, format!("j = {j}: complement reading not confirmed"), 0));
        }
    }
    Ok((true, "confirmed reading: (1 - 1_U(z)), 20 points at j = 0, 1".into(), 0))
}

fn random_top(md: &FilteredPhiModule, rng: &mut ChaCha8Rng, kk: usize) -> WachVector {
    let ctx = &md.ctx;
    let mk = |rng: &mut ChaCha8Rng| {
        let coeffs = (0..=kk).map(|_| Scalar::from_i64(ctx, rng.gen_range(0..27))).collect();
        PowerSeries::new(ctx, coeffs)
    };
    let a = mk(rng);
    let b = mk(rng);
    WachVector::new(a, b)
}

fn check_round_trip(
    md: &FilteredPhiModule,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> CheckOutcome {
    let t = config.window.min(3);
    for i in 0..3 {
        let s = build_psi_sequence(md, &random_top(md, rng, config.series_k), t);
        let (ma, mb) = sequence_to_distributions(md, &s).map_err(|e| e.to_string())?;
        let (s2, _cert) = distributions_to_sequence(md, &ma, &mb).map_err(|e| e.to_string())?;
        if s.terms.len() != s2.terms.len() {
            return Ok((false, format!("window {i}: length mismatch"), 0));
        }
        for (a, b) in s.terms.iter().zip(s2.terms.iter()) {
            if !a.eq_at_prec(b) {
                return Ok((false, format!("window {i}: terms differ"), 0));
            }
        }
    }
    Ok((true, format!("3 random windows of length {}", t + 1), 0))
}

fn lattice_member(md: &FilteredPhiModule, cache: &mut Option<WachVector>) -> Result<WachVector, String> {
    if let Some(v) = cache {
        return Ok(v.clone());
    }
    let kk = 60usize;
    let gens = wach_kernel_generators(md, kk, 2, 12).map_err(|e| e.to_string())?;
    if gens.is_empty() {
        return Err("empty lattice".into());
    }
    let a = row_to_vector(&md.ctx, &gens[0], kk);
    let v = if gens.len() > 1 {
        let b = row_to_vector(&md.ctx, &gens[1], kk);
        a.add(&b.scalar_mul(&Scalar::from_i64(&md.ctx, 2)))
    } else {
        a
    };
    *cache = Some(v.clone());
    Ok(v)
}

fn check_dual_growth(
    md: &FilteredPhiModule,
    config: &RunConfig,
    member: &mut Option<WachVector>,
) -> CheckOutcome {
    let v = lattice_member(md, member)?;
    let s = PsiSequence { terms: vec![v], consumed: 0 };
    let (ma, mb) = sequence_to_distributions(md, &s).map_err(|e| e.to_string())?;
    let ext = extend_versfin(md, &ma, &mb).map_err(|e| e.to_string())?;
    let rep = dual_conditions_check(md, &ma, &ext.t_alpha, &Rat::one(), config.n_max)
        .map_err(|e| e.to_string())?;
    let digits = rep
        .margin_min
        .as_ref()
        .and_then(|m| m.to_integer().try_into().ok())
        .unwrap_or(0);
    match rep.verdict {
        DualVerdict::Pass => Ok((
            true,
            format!(
                "{} checks, {} inconclusive, binding {}",
                rep.checks,
                rep.inconclusive,
                rep.binding.as_deref().unwrap_or("none")
            ),
            digits,
        )),
        other => Ok((
            false,
            format!("verdict {:?}, binding {}", other, rep.binding.as_deref().unwrap_or("none")),
            digits,
        )),
    }
}

fn check_equivariance(
    md: &FilteredPhiModule,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
) -> CheckOutcome {
    let t = config.window.max(2);
    let s = build_psi_sequence(md, &random_top(md, rng, config.series_k), t);
    let fams = vec![
        QpPolyFunction::single(Rat::zero(), 0, vec![Rat::zero(), Rat::one()]),
        QpPolyFunction::single(Rat::one(), 1, vec![Rat::one()]),
        QpPolyFunction::single(Rat::zero(), 1, vec![Rat::one(), Rat::one()]),
    ];
    let gens = [
        BorelElement::identity(),
        BorelElement::unipotent(Rat::one()),
        BorelElement { z: Rat::zero(), a: rat_int(4), t: 0 },
        BorelElement { z: Rat::zero(), a: Rat::one(), t: 1 },
    ];
    let mut digits = i64::MAX;
    for (i, g) in gens.iter().enumerate() {
        let rep = borel_equivariance_check(md, &s, g, &fams).map_err(|e| e.to_string())?;
        if !rep.pass {
            return Ok((
                false,
                format!("generator {i}: {}", rep.witness.unwrap_or_default()),
                rep.digits,
            ));
        }
        digits = digits.min(rep.digits);
    }
    // group law on random two-letter words: acting by the product equals
    // acting by the letters in sequence (right action)
    let letters = [
        BorelElement::unipotent(Rat::one()),
        BorelElement::unipotent(rat(1, 2)),
        BorelElement { z: Rat::zero(), a: rat_int(2), t: 0 },
        BorelElement { z: Rat::zero(), a: Rat::one(), t: 1 },
    ];
    for i in 0..10 {
        let ga = &letters[rng.gen_range(0..letters.len())];
        let gb = &letters[rng.gen_range(0..letters.len())];
        let seq = crate::wach::borel_act(md, gb, &crate::wach::borel_act(md, ga, &s).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        // the sequences model a dual, so the two-step route matches the
        // single element whose translation part carries p^{-t} of the
        // second letter: z = z_b + z_a a_b p^{-t_b}
        let m = BorelElement {
            z: &gb.z
                + &ga.z * &gb.a * crate::rat::times_p_pow(&Rat::one(), md.ctx.p, -gb.t),
            a: &ga.a * &gb.a,
            t: ga.t + gb.t,
        };
        let prod = crate::wach::borel_act(md, &m, &s).map_err(|e| e.to_string())?;
        // routes may consume different numbers of top terms: compare the
        // common low-level prefix at the common truncation
        let n = seq.terms.len().min(prod.terms.len());
        if n == 0 {
            return Ok((false, format!("word {i}: empty overlap"), 0));
        }
        for idx in 0..n {
            let a = &seq.terms[idx];
            let b = &prod.terms[idx];
            let t = a.trunc().min(b.trunc());
            if !a.truncate(t).eq_at_prec(&b.truncate(t)) {
                return Ok((false, format!("word {i}: group law fails at term {idx}"), 0));
            }
        }
    }
    Ok((true, "4 generators x 3 functionals, 10 group-law words".into(), digits))
}

fn check_fourier(md: &FilteredPhiModule, member: &mut Option<WachVector>) -> CheckOutcome {
    let v = lattice_member(md, member)?;
    let s = PsiSequence { terms: vec![v], consumed: 0 };
    let (ma, mb) = sequence_to_distributions(md, &s).map_err(|e| e.to_string())?;
    let p = md.ctx.p as i64;
    let mut digits = i64::MAX;
    for (y, j) in [
        (rat(1, p), 0u32),
        (rat(p - 1, p), 1),
        (rat(1, p * p), 0),
    ] {
        let rep = fourier_condition_check(md, &ma, &mb, &y, 0, j).map_err(|e| e.to_string())?;
        if !rep.equal {
            return Ok((false, format!("y = {}, j = {j}", show_rat(&y)), rep.digits));
        }
        digits = digits.min(rep.digits);
    }
    Ok((true, "3 character instances on a lattice member".into(), digits))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
