//! Experiment drivers. Each returns a report plus auxiliary files.
//!
//! Images are 8-bit binary PGM over the square `[-2, 2]^2`: pixel `(i, j)`
//! (column `i`, row `j`, row 0 on top) of an `n x n` image covers the point
//! `-2 + (i + 1/2) h + i (2 - (j + 1/2) h)` with `h = 4 / n`.

use std::sync::{Arc, OnceLock};

use anyhow::{anyhow, bail, Result};
use num_bigint::BigInt;
use num_complex::Complex64;
use parabolic_core::arith::{brjuno_sum, cf_expand, cf_expand_exact, cf_from_digits, CfDigits, HighTypeAngle};
use parabolic_core::fatou::extensions::{equivariance_residual, main_estimates, MainEstimates};
use parabolic_core::fatou::model::{default_anchor, model_build, model_checks, CoefficientRule};
use parabolic_core::fatou::{build_chart, ChartOptions, FatouChart};
use parabolic_core::lift::{cylcond_check, refine_c1, theta_probe, LiftedMap, ThetaRegion};
use parabolic_core::maps::{cis, HoloMap, QuadraticMap};
use parabolic_core::measure::{
    box_area, box_scan, containment_fraction, eccentricity, julia_sample, late_approach, nesting_check, omega_shadow,
    pgm_bytes, porosity_probe, postcritical_cloud, siegel_stand_in, typical_orbit_statistics, Mask, OrbitCloud,
    PointIndex, ShadowOptions,
};
use parabolic_core::renorm::{build_tower, compute_k, conjugacy_residual, lemma_renorm_check, Tower, TowerOptions};
use parabolic_core::stats::max_of;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::report::{csv_bytes, Check, Outcome, Relation, Report};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Expensive objects shared between commands of one run.
pub struct Context {
    pub cfg: RunConfig,
    pub angle: HighTypeAngle,
    charts: Vec<OnceLock<std::result::Result<Arc<FatouChart>, String>>>,
    tower: OnceLock<std::result::Result<Tower, String>>,
    pc: OnceLock<std::result::Result<OrbitCloud, String>>,
}

impl Context {
    pub fn new(cfg: RunConfig) -> std::result::Result<Self, ConfigError> {
        cfg.validate()?;
        let angle = cfg.angle()?;
        let charts = cfg.probe_alphas.iter().map(|_| OnceLock::new()).collect();
        Ok(Self { cfg, angle, charts, tower: OnceLock::new(), pc: OnceLock::new() })
    }

    fn chart_options(&self) -> ChartOptions {
        ChartOptions {
            abel_tol: self.cfg.abel_tol,
            inv_tol: self.cfg.inv_tol,
            k_bold: self.cfg.constants.k_bold,
            validation_points: self.cfg.validation_points,
            seed: self.cfg.seed,
            ..ChartOptions::default()
        }
    }

    pub fn chart(&self, i: usize) -> Result<Arc<FatouChart>> {
        let alpha = self.cfg.probe_alphas[i];
        self.charts[i]
            .get_or_init(|| {
                build_chart(Arc::new(QuadraticMap::new(alpha)), self.chart_options())
                    .map(Arc::new)
                    .map_err(|e| format!("chart at alpha {alpha}: {e}"))
            })
            .clone()
            .map_err(|e| anyhow!(e))
    }

    /// Commands that compare levels need `depth >= 1`.
    pub fn require_depth(&self, what: &str) -> Result<()> {
        if self.cfg.depth < 1 {
            return Err(ConfigError(format!("{what} needs depth >= 1")).into());
        }
        Ok(())
    }

    pub fn tower(&self) -> Result<&Tower> {
        self.tower
            .get_or_init(|| {
                let opts = TowerOptions {
                    depth: self.cfg.depth,
                    chart: self.chart_options(),
                    constants: self.cfg.constants,
                    ..TowerOptions::default()
                };
                build_tower(&self.angle, Arc::new(QuadraticMap::new(self.angle.value)), opts).map_err(|e| format!("tower: {e}"))
            })
            .as_ref()
            .map_err(|e| anyhow!(e.clone()))
    }

    pub fn pc(&self) -> Result<&OrbitCloud> {
        self.pc
            .get_or_init(|| postcritical_cloud(self.angle.value, self.cfg.pc_iterations).map_err(|e| format!("post-critical cloud: {e}")))
            .as_ref()
            .map_err(|e| anyhow!(e.clone()))
    }
}

/// Runs `body`; a computation error becomes a failed check named `name`.
fn guarded(rep: &mut Report, name: &str, body: impl FnOnce(&mut Report) -> Result<()>) -> Result<()> {
    if let Err(e) = body(rep) {
        if e.downcast_ref::<ConfigError>().is_some() {
            return Err(e);
        }
        rep.check(Check::failed(name));
        rep.result(&format!("{name}.error"), e.to_string());
    }
    Ok(())
}

fn label(alpha: f64) -> String {
    format!("[{alpha}]")
}

fn c_json(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

// ---------------------------------------------------------------- brjuno

#[derive(Serialize)]
struct FunctionalRow {
    depth: usize,
    residual: f64,
    tail_bound: f64,
}

/// `B(alpha)` against `log(1/alpha_0) + alpha_0 B(alpha_1)`, both truncated at
/// `d`, over the depths whose tail bound sits above `floor`.
fn functional_rows(angle: &HighTypeAngle, floor: f64) -> Result<Vec<FunctionalRow>> {
    let shifted = angle.shifted(1)?;
    let mut rows = Vec::new();
    for d in 1..shifted.depth() {
        let b = brjuno_sum(angle, d)?;
        if b.tail_bound < floor {
            break;
        }
        let b1 = brjuno_sum(&shifted, d)?;
        let a0 = angle.tower[0];
        let residual = (b.value - (1.0 / a0).ln() - a0 * b1.value).abs();
        rows.push(FunctionalRow { depth: d, residual, tail_bound: b.tail_bound });
    }
    Ok(rows)
}

fn determinant_violations(angle: &HighTypeAngle) -> usize {
    (1..=angle.depth())
        .filter(|&k| angle.determinant(k) != BigInt::from(if k % 2 == 1 { 1 } else { -1 }))
        .count()
}

fn exact_round_trip(angle: &HighTypeAngle) -> Result<bool> {
    let c = angle.exact();
    let back = cf_expand_exact(&c.p, &c.q, angle.depth() + 5)?;
    Ok(back.digits() == angle.digits.digits())
}

/// Smallest tail bound used in the functional-equation check; below it the
/// residual is set by double rounding of `B`, not by truncation.
const FUNCTIONAL_FLOOR: f64 = 1e-13;

pub fn cmd_brjuno(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let angle = &ctx.angle;
    let mut rep = Report::new("brjuno", cfg);
    let depth = angle.depth() - 1;
    let b = brjuno_sum(angle, depth)?;
    rep.result("digits", angle.digits.digits());
    rep.result("value", angle.value);
    rep.result("tower", &angle.tower);
    rep.result("type_floor", angle.type_floor);
    let conv: Vec<[String; 2]> = angle.convergents.iter().map(|c| [c.p.to_string(), c.q.to_string()]).collect();
    rep.result("convergents", conv);
    rep.result("brjuno", b);

    rep.check(Check::flag("brjuno.cf_round_trip", exact_round_trip(angle)?));
    rep.check(Check::new("brjuno.determinant_violations", determinant_violations(angle) as f64, Relation::Le, 0.0));

    // Seeded sweep over digits in [2, 100], depth <= 25.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(1));
    let (mut trips, mut dets, mut worst_ratio) = (0usize, 0usize, 0.0f64);
    let sweep = 200;
    for _ in 0..sweep {
        let depth = rng.gen_range(1..=25usize);
        let digits: Vec<u32> = (0..depth).map(|_| rng.gen_range(2..=100)).collect();
        let a = cf_from_digits(&CfDigits::new(digits)?, depth)?;
        trips += usize::from(!exact_round_trip(&a)?);
        dets += determinant_violations(&a);
        if depth >= 3 {
            for r in functional_rows(&a, FUNCTIONAL_FLOOR)? {
                worst_ratio = worst_ratio.max(r.residual / r.tail_bound);
            }
        }
    }
    rep.check(Check::new("brjuno.sweep_round_trip_failures", trips as f64, Relation::Le, 0.0));
    rep.check(Check::new("brjuno.sweep_determinant_violations", dets as f64, Relation::Le, 0.0));

    // The float route only determines a prefix of the digits.
    let float_digits = cf_expand(angle.value, angle.depth(), 1e-15)?;
    let agree = float_digits.digits().iter().zip(angle.digits.digits()).take_while(|(a, b)| a == b).count();
    rep.result("float_round_trip_prefix", agree);

    let rows = functional_rows(angle, FUNCTIONAL_FLOOR)?;
    let ratio = rows.iter().map(|r| r.residual / r.tail_bound).fold(worst_ratio, f64::max);
    rep.check(Check::new("brjuno.functional_equation_ratio", if rows.is_empty() { f64::NAN } else { ratio }, Relation::Lt, 10.0));
    rep.result("functional_equation", &rows);
    rep.result("functional_floor", FUNCTIONAL_FLOOR);

    // Period-one digits: alpha_i = a for all i, B = log(1/a) / (1 - a).
    if let Some([n]) = cfg.alpha_digits.as_deref() {
        let n = *n as f64;
        let a = ((n * n + 4.0).sqrt() - n) / 2.0;
        let closed = (1.0 / a).ln() / (1.0 - a);
        rep.result("closed_form", closed);
        rep.check(Check::new("brjuno.periodic_closed_form", (b.value - closed).abs(), Relation::Lt, 1e-9));
    }
    let files = vec![("functional_equation.csv".to_string(), csv_bytes(&rows)?)];
    Ok(Outcome { report: rep, files })
}

// ---------------------------------------------------------------- lift

/// Points of one period strip in `Theta(r, alpha)` with `Im w` in `[0, 3/alpha]`.
fn decay_samples(alpha: f64, r: f64, n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let region = ThetaRegion::Scaled { r };
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = Complex64::new(rng.gen_range(0.0..1.0 / alpha), rng.gen_range(0.0..3.0 / alpha));
        if region.contains(alpha, w) {
            out.push(w);
        }
    }
    out
}

pub fn cmd_lift_verify(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let mut rep = Report::new("lift", cfg);
    let mut c3s = Vec::new();
    for (i, &alpha) in cfg.probe_alphas.iter().enumerate() {
        let tag = label(alpha);
        guarded(&mut rep, &format!("lift{tag}"), |rep| {
            let q = QuadraticMap::new(alpha);
            let f = LiftedMap::new(&q)?;
            let seed = cfg.sub_seed(10 + i as u64);
            let (c1, excess, deriv) = refine_c1(&f, cfg.constants.c1, cfg.lift_samples, seed)?;
            let probe = theta_probe(alpha, c1, 5.0, cfg.lift_samples, seed);
            let semi = max_of(probe.par_iter().map(|&w| f.semiconjugacy_residual(w).unwrap_or(f64::INFINITY)).collect::<Vec<_>>());
            let samples = decay_samples(alpha, cfg.r, cfg.lift_samples, seed ^ 0xdeca);
            let cyl = cylcond_check(&f, &samples, cfg.r, 1000);
            rep.check(Check::new(format!("lift{tag}.semiconjugacy"), semi, Relation::Lt, 1e-10));
            rep.check(Check::new(format!("lift{tag}.quarter_bound"), excess, Relation::Lt, 0.25));
            rep.check(Check::new(format!("lift{tag}.derivative_quarter_bound"), deriv, Relation::Lt, 0.25));
            rep.check(Check::new(format!("lift{tag}.decay_slope_rel_err"), cyl.slope_rel_err, Relation::Lt, 0.1));
            rep.result(&format!("c1{tag}"), c1);
            rep.result(&format!("cylcond{tag}"), &cyl);
            if let Some(c3) = cyl.c3 {
                c3s.push(c3);
            }
            Ok(())
        })?;
    }
    if c3s.len() >= 2 {
        let spread = max_of(c3s.iter().map(|c| (c / c3s[0] - 1.0).abs()));
        rep.check(Check::new("lift.c3_spread", spread, Relation::Le, 0.2).soft());
    }
    Ok(Outcome { report: rep, files: Vec::new() })
}

// ---------------------------------------------------------------- fatou

#[derive(Serialize)]
struct HistRow {
    log10_lo: f64,
    log10_hi: f64,
    count: usize,
}

fn residual_histogram(residuals: &[f64]) -> Vec<HistRow> {
    let (lo, hi, width) = (-17.0, -5.0, 0.5);
    let bins = ((hi - lo) / width) as usize;
    let mut counts = vec![0usize; bins];
    for &r in residuals {
        let x = r.max(1e-300).log10();
        let k = (((x - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistRow { log10_lo: lo + k as f64 * width, log10_hi: lo + (k + 1) as f64 * width, count })
        .collect()
}

/// Bands of `floor(Re Phi)`: alternating grey levels, black where the chart fails.
fn band_image(chart: &FatouChart, n: usize) -> Vec<u8> {
    let grid = Mask::new(n);
    let values: Vec<u8> = (0..n * n)
        .into_par_iter()
        .map(|idx| match chart.phi(grid.center(idx)) {
            Ok(p) if p.re > 0.0 && p.re < chart.width => {
                if (p.re.floor() as i64) % 2 == 0 {
                    110
                } else {
                    230
                }
            }
            _ => 0,
        })
        .collect();
    pgm_bytes(n, n, &values)
}

pub fn cmd_fatou(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let mut rep = Report::new("fatou", cfg);
    let mut files = Vec::new();
    let mut estimates: Vec<MainEstimates> = Vec::new();
    for (i, &alpha) in cfg.probe_alphas.iter().enumerate() {
        let tag = label(alpha);
        guarded(&mut rep, &format!("fatou{tag}"), |rep| {
            let chart = ctx.chart(i)?;
            rep.check(Check::new(format!("fatou{tag}.abel_residual"), chart.residual, Relation::Lt, cfg.abel_tol));
            rep.check(Check::new(
                format!("fatou{tag}.validation_points"),
                chart.validation_count as f64,
                Relation::Ge,
                cfg.validation_points as f64,
            ));
            let cp = chart.critical_point();
            rep.check(Check::new(format!("fatou{tag}.phi_cp"), chart.phi(cp)?.norm(), Relation::Lt, 1e-6));
            rep.check(Check::new(format!("fatou{tag}.phi_cv"), (chart.phi(chart.critical_value())? - 1.0).norm(), Relation::Lt, 1e-6));

            let sample = chart.validation_sample(cfg.validation_points, cfg.sub_seed(20 + i as u64));
            // Re Phi < 1 contains the lobe where Phi is two-to-one.
            let trips: Vec<f64> = sample
                .par_iter()
                .filter_map(|&(z, _)| {
                    let p = chart.phi(z).ok()?;
                    (p.re >= 1.0).then(|| chart.phi_inverse(p).map(|b| (b - z).norm()).unwrap_or(f64::INFINITY))
                })
                .collect();
            rep.check(Check::new(format!("fatou{tag}.inverse_round_trip"), max_of(trips.iter().copied()), Relation::Lt, 1e-7));
            rep.result(&format!("round_trip_points{tag}"), trips.len());

            let q = QuadraticMap::new(alpha);
            let f = LiftedMap::new(&q)?;
            let probe = theta_probe(alpha, 6.0, 2.0, cfg.lift_samples, cfg.sub_seed(30 + i as u64));
            let eq: Vec<f64> = probe
                .par_iter()
                .filter_map(|&w| {
                    let l = chart.linearizer(w).ok()?;
                    (l.re > 0.5 && l.re < chart.width - 1.5).then(|| equivariance_residual(&chart, &f, w).unwrap_or(f64::INFINITY))
                })
                .collect();
            rep.check(Check::new(format!("fatou{tag}.equivariance"), max_of(eq.iter().copied()), Relation::Lt, 1e-6));
            rep.result(&format!("equivariance_points{tag}"), eq.len());
            rep.result(
                &format!("chart{tag}"),
                serde_json::json!({
                    "sigma": c_json(chart.sigma),
                    "width": chart.width,
                    "residual": chart.residual,
                    "validation_count": chart.validation_count,
                    "degree": chart.opts.degree,
                }),
            );

            let residuals: Vec<f64> = sample.iter().map(|p| p.1).collect();
            files.push((format!("residuals_{alpha}.csv"), csv_bytes(&residual_histogram(&residuals))?));
            files.push((format!("bands_{alpha}.pgm"), band_image(&chart, 512)));

            let est = main_estimates(&chart, cfg.constants.k_prime, cfg.r)?;
            rep.check(Check::new(format!("estimates{tag}.l_prime_slope_rel_err"), est.l_prime.slope_rel_err, Relation::Lt, 0.1));
            rep.check(Check::new(format!("estimates{tag}.chi_prime_slope_rel_err"), est.chi_prime.slope_rel_err, Relation::Lt, 0.1));
            rep.result(&format!("estimates{tag}"), &est);
            estimates.push(est);
            Ok(())
        })?;
    }
    if let Some(base) = estimates.first() {
        for e in &estimates[1..] {
            let ratio = |a: f64, b: f64| (a / b).max(b / a);
            let tag = format!("[{}->{}]", base.alpha, e.alpha);
            rep.check(Check::new(format!("estimates{tag}.m_transfer"), ratio(base.l_prime.constant, e.l_prime.constant), Relation::Le, 3.0));
            rep.check(Check::new(format!("estimates{tag}.c_transfer"), ratio(base.chi_prime.constant, e.chi_prime.constant), Relation::Le, 3.0));
        }
    }
    Ok(Outcome { report: rep, files })
}

// ---------------------------------------------------------------- model

pub fn cmd_model(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let mut rep = Report::new("model", cfg);
    for &alpha in &cfg.probe_alphas {
        let tag = label(alpha);
        guarded(&mut rep, &format!("model{tag}"), |rep| {
            let q = QuadraticMap::new(alpha);
            let f = LiftedMap::new(&q)?;
            let anchor = default_anchor(alpha);
            let h = model_build(&f, anchor, CoefficientRule::SeamMatched, cfg.constants.c1, cfg.r)?;
            let m = model_checks(&h)?;
            rep.check(Check::new(format!("model{tag}.h0_error"), m.h0_error, Relation::Le, 1e-12));
            rep.check(Check::new(format!("model{tag}.h1_error"), m.h1_error, Relation::Le, 1e-12));
            rep.check(Check::flag(format!("model{tag}.seam_c1"), m.seam_c1_ok));
            rep.check(Check::flag(format!("model{tag}.seam_c2"), m.seam_c2_ok));
            rep.check(Check::new(format!("model{tag}.ds_slope_rel_err"), m.ds_rel_err, Relation::Lt, 0.1));
            rep.check(Check::new(format!("model{tag}.dt_slope_rel_err"), m.dt_rel_err, Relation::Lt, 0.1));
            rep.result(&format!("seam_matched{tag}"), &m);
            // The literal coefficient rule, for comparison.
            let lit = model_checks(&model_build(&f, anchor, CoefficientRule::Literal, cfg.constants.c1, cfg.r)?)?;
            rep.result(&format!("literal{tag}"), &lit);
            Ok(())
        })?;
    }
    Ok(Outcome { report: rep, files: Vec::new() })
}

// ---------------------------------------------------------------- renorm

pub fn cmd_renorm(ctx: &Context) -> Result<Outcome> {
    ctx.require_depth("renorm")?;
    let cfg = &ctx.cfg;
    let mut rep = Report::new("renorm", cfg);
    guarded(&mut rep, "renorm.tower", |rep| {
        let tower = ctx.tower()?;
        #[derive(Serialize)]
        struct LevelRow {
            n: usize,
            alpha: f64,
            k: Option<usize>,
            k_refined: Option<usize>,
            chart_residual: Option<f64>,
        }
        let mut rows = Vec::new();
        for lvl in &tower.levels {
            let mut row = LevelRow { n: lvl.n, alpha: lvl.alpha, k: lvl.k(), k_refined: None, chart_residual: None };
            if let (Some(chart), Some(k)) = (&lvl.chart, lvl.k()) {
                let kr = compute_k(chart, &tower.opts.sector.refined())?;
                rep.check(Check::new(format!("renorm.k_refinement_shift[{}]", lvl.n), (kr as f64 - k as f64).abs(), Relation::Le, 0.0));
                row.k_refined = Some(kr);
                row.chart_residual = Some(chart.residual);
            }
            if let Some(rot) = &lvl.rotation {
                rep.check(Check::new(format!("renorm.rotation_error[{}]", lvl.n), rot.error, Relation::Lt, 1e-3));
                rep.result(&format!("rotation[{}]", lvl.n), rot);
            }
            rows.push(row);
        }
        rep.result("levels", &rows);
        let lr = lemma_renorm_check(tower, 0, cfg.renorm_samples, cfg.sub_seed(40))?;
        rep.check(Check::new("renorm.lemma_renorm_samples", lr.samples as f64, Relation::Ge, cfg.renorm_samples as f64));
        rep.check(Check::new("renorm.lemma_renorm", lr.max_residual, Relation::Lt, 1e-5));
        rep.result("lemma_renorm", &lr);
        let cj = conjugacy_residual(tower, cfg.renorm_samples, cfg.sub_seed(41))?;
        rep.check(Check::new("renorm.conjugacy_first", cj.residual_first, Relation::Lt, 1e-4));
        rep.check(Check::new("renorm.conjugacy_second", cj.residual_second, Relation::Lt, 1e-4));
        rep.result("conjugacy", &cj);
        Ok(())
    })?;
    Ok(Outcome { report: rep, files: Vec::new() })
}

// ---------------------------------------------------------------- pc

#[derive(Serialize)]
struct PointRow {
    re: f64,
    im: f64,
}

fn points_csv(points: &[Complex64]) -> Result<Vec<u8>> {
    let rows: Vec<PointRow> = points.iter().map(|z| PointRow { re: z.re, im: z.im }).collect();
    csv_bytes(&rows)
}

pub fn cmd_pc(ctx: &Context) -> Result<Outcome> {
    ctx.require_depth("pc")?;
    let cfg = &ctx.cfg;
    let alpha = ctx.angle.value;
    let mut rep = Report::new("pc", cfg);
    let mut files = Vec::new();
    let pc = ctx.pc()?;
    rep.check(Check::new("pc.recurrence_residual", pc.recurrence_residual(&QuadraticMap::new(alpha)), Relation::Le, 1e-12));
    rep.check(Check::new("pc.escaped", if pc.escaped_at.is_some() { 1.0 } else { 0.0 }, Relation::Le, 0.0));
    let cp = -cis(TWO_PI * alpha) / 2.0;
    rep.result("late_approach_to_cp", late_approach(pc, cp));
    let scan = box_scan(&pc.points, &cfg.box_scales)?;
    let trend = box_area(&pc.points, 2f64.powi(-8))? / box_area(&pc.points, 2f64.powi(-4))?;
    rep.check(Check::new("pc.box_area_ratio", trend, Relation::Le, 0.5));
    rep.result("box_scan", &scan);
    files.push(("cloud.csv".to_string(), points_csv(&pc.points)?));
    files.push(("box_scan.csv".to_string(), csv_bytes(&scan)?));
    files.push(("mask.pgm".to_string(), Mask::from_points(&pc.points, 1024).to_pgm()));

    guarded(&mut rep, "pc.shadows", |rep| {
        let tower = ctx.tower()?;
        let opts = ShadowOptions { pixels: cfg.shadow_pixels, ..ShadowOptions::default() };
        let s0 = omega_shadow(tower, 0, &opts)?;
        let s1 = omega_shadow(tower, 1, &opts)?;
        let nest = nesting_check(&s0, &s1)?;
        rep.check(Check::new("pc.nesting_margin", nest.margin, Relation::Gt, 0.0));
        let head = &pc.points[..cfg.containment_points];
        for s in [&s0, &s1] {
            rep.check(Check::new(format!("pc.containment[{}]", s.level), containment_fraction(&s.mask, head), Relation::Ge, 1.0));
            rep.result(&format!("containment_full_cloud[{}]", s.level), containment_fraction(&s.mask, &pc.points));
            match eccentricity(&s.mask.boundary(), cp) {
                Ok(e) => rep.result(&format!("eccentricity[{}]", s.level), e),
                Err(e) => rep.result(&format!("eccentricity[{}].error", s.level), e.to_string()),
            }
            files.push((format!("omega{}.pgm", s.level), s.mask.to_pgm()));
        }
        rep.result("nesting", &nest);
        rep.result("shadows", [&s0, &s1]);
        Ok(())
    })?;
    Ok(Outcome { report: rep, files })
}

// ---------------------------------------------------------------- porosity

/// Cell of the point index; the cloud is fattened by this much.
const POROSITY_CELL: f64 = 1.0 / 1024.0;
const LAMBDA: f64 = 0.05;
const SIEGEL_GAP: f64 = 0.05;

pub fn cmd_porosity(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let alpha = ctx.angle.value;
    let mut rep = Report::new("porosity", cfg);
    let pc = ctx.pc()?;
    let siegel = siegel_stand_in(alpha, cfg.siegel_iterations, cfg.siegel_tol);
    rep.result("siegel", siegel);
    let index = PointIndex::new(&pc.points, POROSITY_CELL);
    let scales: Vec<f64> = cfg.porosity_scales.iter().map(|&m| 2f64.powi(-(m as i32))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sub_seed(50));
    let mut probes = Vec::new();
    let mut attempts = 0;
    while probes.len() < cfg.porosity_points && attempts < 1000 * cfg.porosity_points {
        attempts += 1;
        let z = pc.points[rng.gen_range(0..pc.points.len())];
        if z.norm() - siegel.radius > SIEGEL_GAP {
            probes.push(z);
        }
    }
    let reports: Vec<_> = probes.par_iter().map(|&z| porosity_probe(z, &index, &scales)).collect();
    let good = reports.iter().filter(|r| r.scales_with(LAMBDA) >= 3).count();
    rep.check(Check::new("porosity.probe_points", probes.len() as f64, Relation::Ge, cfg.porosity_points as f64));
    rep.check(Check::new("porosity.fraction_with_3_scales", good as f64 / probes.len().max(1) as f64, Relation::Ge, 1.0));
    #[derive(Serialize)]
    struct Row {
        re: f64,
        im: f64,
        r: f64,
        lambda: f64,
        hole_re: f64,
        hole_im: f64,
    }
    let rows: Vec<Row> = reports
        .iter()
        .flat_map(|p| {
            p.records.iter().map(move |s| Row {
                re: p.z.re,
                im: p.z.im,
                r: s.r,
                lambda: s.lambda,
                hole_re: s.hole_center.re,
                hole_im: s.hole_center.im,
            })
        })
        .collect();
    let min_lambda: Vec<f64> = reports.iter().map(|p| p.records.iter().map(|s| s.lambda).fold(f64::INFINITY, f64::min)).collect();
    rep.result("probe_points", probes.iter().map(|&z| c_json(z)).collect::<Vec<_>>());
    rep.result("min_lambda_per_point", min_lambda);
    rep.result("index_cell", POROSITY_CELL);
    Ok(Outcome { report: rep, files: vec![("records.csv".to_string(), csv_bytes(&rows)?)] })
}

// ---------------------------------------------------------------- orbits

pub fn cmd_orbits(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let alpha = ctx.angle.value;
    let mut rep = Report::new("orbits", cfg);
    let pc = ctx.pc()?;
    let julia = julia_sample(alpha, cfg.julia_samples, cfg.sub_seed(60))?;
    let q = QuadraticMap::new(alpha);
    let bounded = julia
        .points
        .iter()
        .filter(|&&z| {
            let mut w = z;
            (0..20).all(|_| {
                w = q.eval(w);
                w.norm() < 10.0
            })
        })
        .count();
    rep.check(Check::new("orbits.julia_bounded_fraction", bounded as f64 / julia.len() as f64, Relation::Ge, 1.0));
    let stats = typical_orbit_statistics(&julia, pc, cfg.orbit_steps, cfg.orbit_eps())?;
    // Asymptotic almost-everywhere statement: reported, not a hard gate.
    rep.check(Check::new("orbits.median_d1", stats.median_d1, Relation::Le, stats.threshold).soft());
    rep.check(Check::new("orbits.median_d2", stats.median_d2, Relation::Le, stats.threshold).soft());
    let finite: Vec<f64> = stats.d2.iter().copied().filter(|v| v.is_finite()).collect();
    rep.result("escape_fraction", stats.escape_fraction);
    rep.result("escaped", stats.escaped);
    rep.result("threshold", stats.threshold);
    rep.result("bounded_median_d1", parabolic_core::stats::median(&stats.d1.iter().copied().filter(|v| v.is_finite()).collect::<Vec<_>>()));
    rep.result("bounded_median_d2", parabolic_core::stats::median(&finite));
    rep.result("jitter_events", julia.jitter_events);
    #[derive(Serialize)]
    struct Row {
        re: f64,
        im: f64,
        d1: f64,
        d2: f64,
    }
    let rows: Vec<Row> =
        julia.points.iter().zip(stats.d1.iter().zip(&stats.d2)).map(|(z, (&d1, &d2))| Row { re: z.re, im: z.im, d1, d2 }).collect();
    Ok(Outcome { report: rep, files: vec![("distances.csv".to_string(), csv_bytes(&rows)?)] })
}

// ---------------------------------------------------------------- verify-all

pub const SECTIONS: [&str; 8] = ["brjuno", "lift-verify", "fatou", "model", "renorm", "pc", "porosity", "orbits"];

pub fn run(ctx: &Context, command: &str) -> Result<Outcome> {
    match command {
        "brjuno" => cmd_brjuno(ctx),
        "lift-verify" => cmd_lift_verify(ctx),
        "fatou" => cmd_fatou(ctx),
        "model" => cmd_model(ctx),
        "renorm" => cmd_renorm(ctx),
        "pc" => cmd_pc(ctx),
        "porosity" => cmd_porosity(ctx),
        "orbits" => cmd_orbits(ctx),
        "verify-all" => cmd_verify_all(ctx),
        other => bail!("unknown command {other}"),
    }
}

pub fn cmd_verify_all(ctx: &Context) -> Result<Outcome> {
    ctx.require_depth("verify-all")?;
    let mut rep = Report::new("verify-all", &ctx.cfg);
    let mut files = Vec::new();
    for s in SECTIONS {
        match run(ctx, s) {
            Ok(o) => {
                rep.merge(o.report);
                files.extend(o.files.into_iter().map(|(n, b)| (format!("{s}_{n}"), b)));
            }
            Err(e) if e.downcast_ref::<ConfigError>().is_some() => return Err(e),
            Err(e) => {
                rep.check(Check::failed(s));
                rep.result(&format!("{s}.error"), e.to_string());
            }
        }
    }
    Ok(Outcome { report: rep, files })
}
