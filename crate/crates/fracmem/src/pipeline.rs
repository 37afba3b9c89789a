//! Stage chains: spectrum, gaps, biorthogonal family, control synthesis, simulation, symbol.

use std::f64::consts::PI;
use std::fmt;

use anyhow::Result;
use fracmem_core::biorthogonal::{build_biorthogonal, BiorthogonalOptions};
use fracmem_core::control::{
    assemble_gram, assemble_moments, certify_observability, moment_quadrature_residual, slot_n, synthesize_control,
    weighted_norm, ControlField, InitialData, SynthesisMethod, REGULARIZED_TOL, SOLVER_TOL,
};
use fracmem_core::galerkin::{run_fixed_support, AdjointData, DualityCheck, Forcing, Frame, GalerkinState, Projection, Simulator};
use fracmem_core::memory::{solve_table, verify_mu1_asymptotics, verify_mu1_monotone, MemoryCoefficient};
use fracmem_core::moving::{
    build_moving_spectrum, default_epsilon, eigenvector_frame_identity_defect, frame_bounds, gap_diagnostics, Clause,
    MovingSpectrum,
};
use fracmem_core::product::{build_product, verify_product_properties, TailModel};
use fracmem_core::spectrum::{symbol_refinement, verify_symbol_identity, FractionalOrder, REFINEMENT_LADDER};
use fracmem_core::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::Validated;
use crate::export::Sink;
use crate::manifest::{Check, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    Spectrum,
    Gaps,
    Biorthogonal,
    Control,
    Simulate,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageKind {
    Spectrum,
    Gaps,
    Biorthogonal,
    Control,
    Simulate,
    Symbol,
}

impl StageKind {
    pub fn name(self) -> &'static str {
        match self {
            StageKind::Spectrum => "spectrum",
            StageKind::Gaps => "gaps",
            StageKind::Biorthogonal => "biorthogonal",
            StageKind::Control => "control",
            StageKind::Simulate => "simulate",
            StageKind::Symbol => "symbol",
        }
    }

    /// Independent random stream per stage, so a stage sees the same numbers whichever chain runs it.
    fn rng(self, seed: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(self as u64 + 1);
        r
    }
}

impl Pipeline {
    pub fn stages(self) -> &'static [StageKind] {
        use StageKind::*;
        match self {
            Pipeline::Spectrum => &[Spectrum],
            Pipeline::Gaps => &[Spectrum, Gaps],
            Pipeline::Biorthogonal => &[Spectrum, Biorthogonal],
            Pipeline::Control => &[Spectrum, Control],
            Pipeline::Simulate => &[Spectrum, Control, Simulate],
            Pipeline::Full => &[Spectrum, Gaps, Biorthogonal, Control, Simulate, Symbol],
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pipeline::Spectrum => "spectrum",
            Pipeline::Gaps => "gaps",
            Pipeline::Biorthogonal => "biorthogonal",
            Pipeline::Control => "control",
            Pipeline::Simulate => "simulate",
            Pipeline::Full => "verify-all",
        })
    }
}

/// Headline numbers of a run, as aggregated by sweeps.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Scalars {
    pub observability: Option<f64>,
    pub control_norm: Option<f64>,
    pub relative_residual: Option<f64>,
    pub condition_raw: Option<f64>,
    pub condition_scaled: Option<f64>,
    pub terminal_xi: Option<f64>,
    pub terminal_xi_t: Option<f64>,
    pub terminal_zeta: Option<f64>,
    pub duality: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stages: Vec<Stage>,
    pub scalars: Scalars,
}

impl RunOutcome {
    pub fn pass(&self) -> bool {
        self.stages.iter().all(|s| s.pass)
    }
}

struct Ctx<'a> {
    v: &'a Validated,
    sink: &'a Sink,
    ms: Option<MovingSpectrum>,
    data: Option<InitialData>,
    control: Option<ControlField>,
    scalars: Scalars,
}

/// Runs the stages of `pipeline` in order. A stage that errors is recorded as failed and later
/// stages that need its output are marked as skipped.
pub fn execute(v: &Validated, pipeline: Pipeline, sink: &Sink) -> Result<RunOutcome> {
    let mut ctx = Ctx { v, sink, ms: None, data: None, control: None, scalars: Scalars::default() };
    if let Some(w) = &v.watermark {
        sink.text("WATERMARK.txt", &format!("{w}\n"))?;
    }
    let mut stages = Vec::new();
    for &kind in pipeline.stages() {
        let st = Stage::new(kind.name());
        let st = match run_stage(&mut ctx, kind, st.clone()) {
            Ok(st) => st.finish(),
            Err(e) => st.fail_with(format!("{e:#}")),
        };
        stages.push(st);
    }
    Ok(RunOutcome { stages, scalars: ctx.scalars })
}

fn run_stage(ctx: &mut Ctx, kind: StageKind, st: Stage) -> Result<Stage> {
    match kind {
        StageKind::Spectrum => spectrum_stage(ctx, st),
        StageKind::Gaps => gaps_stage(ctx, st),
        StageKind::Biorthogonal => biorthogonal_stage(ctx, st),
        StageKind::Control => control_stage(ctx, st),
        StageKind::Simulate => simulate_stage(ctx, st),
        StageKind::Symbol => symbol_stage(ctx, st),
    }
}

fn clause(name: &str, c: &Clause) -> Check {
    Check { pass: Some(c.pass), ..Check::at_least(name, c.measured, c.bound) }
}

fn record(st: &mut Stage, file: Option<String>) {
    if let Some(f) = file {
        st.artifacts.push(f);
    }
}

#[derive(Serialize)]
struct EigenRow {
    n: usize,
    rho: f64,
    kappa: f64,
    mu1: f64,
    mu2_re: f64,
    mu2_im: f64,
    mu3_re: f64,
    mu3_im: f64,
}

#[derive(Serialize)]
struct LambdaRow {
    n: i64,
    j: u8,
    re: f64,
    im: f64,
    convention_re: f64,
    convention_im: f64,
}

fn spectrum_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let v = ctx.v;
    let cfg = &v.cfg;
    let m = MemoryCoefficient::new(cfg.m)?;
    let table = &v.table;
    st.push(Check::holds("table_increasing_positive", table.is_valid()));
    st.push(Check::reported("gamma", v.gamma));
    st.push(Check::reported("threshold", v.threshold));
    st.push(Check::reported("table_residual", table.residual));
    let triples = solve_table(table, m)?;
    let worst = triples
        .iter()
        .map(|t| t.residuals(cfg.m).iter().cloned().fold(0.0, f64::max) / (cfg.m.abs() * t.rho + cfg.m.abs().powi(3)))
        .fold(0.0, f64::max);
    st.push(Check::at_most("cubic_relative_residual", worst, 1e-10));
    let mono = verify_mu1_monotone(table, m)?;
    st.push(Check::holds("mu1_monotone", mono.offending.is_none()));
    st.push(Check::holds("mu1_lower_bound", mono.lower_bound_ok));
    st.push(Check::holds("mu1_upper_bound", mono.upper_bound_ok));
    if table.n_max >= 16 {
        let asym = verify_mu1_asymptotics(table, m)?;
        st.push(Check::holds("mu1_remainder_rho2", asym.pass));
        st.push(Check::reported_flag("mu1_remainder_n4_stable", asym.stable_n4));
    }
    let ms = build_moving_spectrum(table, m, cfg.c, cfg.n)?;
    st.push(Check::at_most("eigenvector_identity_defect", eigenvector_frame_identity_defect(&ms), 1e-9));
    if let Some(cr) = ms.critical {
        st.notes.push(format!("double eigenvalue at n_c = {} (distance {:.3e}); convention applied in the product", cr.n_c, cr.collision_distance));
    }
    let rows: Vec<EigenRow> = triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (m2, m3) = (t.branch(2), t.branch(3));
            EigenRow { n: i + 1, rho: t.rho, kappa: ms.kappa_pos[i], mu1: t.mu1, mu2_re: m2.re, mu2_im: m2.im, mu3_re: m3.re, mu3_im: m3.im }
        })
        .collect();
    record(&mut st, ctx.sink.csv("eigenvalues.csv", &rows)?);
    let conv = ms.lambdas_convention();
    let rows: Vec<LambdaRow> = ms
        .modes()
        .iter()
        .zip(ms.lambdas().iter().zip(&conv))
        .map(|(md, (l, c))| LambdaRow { n: md.n, j: md.j, re: l.re, im: l.im, convention_re: c.re, convention_im: c.im })
        .collect();
    record(&mut st, ctx.sink.csv("moving_spectrum.csv", &rows)?);
    ctx.ms = Some(ms);
    Ok(st)
}

fn need_ms<'a>(ctx: &'a Ctx) -> Result<&'a MovingSpectrum> {
    ctx.ms.as_ref().ok_or_else(|| anyhow::anyhow!("skipped: spectrum unavailable"))
}

#[derive(Serialize)]
struct NearRow {
    m: usize,
    partner_n: i64,
    partner_j: u8,
    distance: f64,
    scaled: f64,
    scaled_real: f64,
    second: f64,
}

fn gaps_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let ms = need_ms(ctx)?;
    let eps = default_epsilon(ms.c, ms.gamma);
    let r = gap_diagnostics(ms, eps)?;
    st.push(Check::reported("epsilon", eps));
    st.push(Check::reported("n_eps", r.n_eps as f64));
    st.push(clause("branch1_vs_others", &r.branch1_vs_others));
    st.push(Check::reported("branch1_vs_others_literal_bound", r.branch1_vs_others_literal_bound));
    st.push(clause("branch1_internal", &r.branch1_internal));
    st.push(clause("branch23_min", &r.branch23_min));
    if let Some(d) = r.critical_distance {
        st.push(Check::reported("critical_distance", d));
    }
    st.push(Check::holds("im2_increasing", r.im2_increasing));
    st.push(clause("im2_lower", &r.im2_lower));
    st.push(clause("im2_gap", &r.im2_gap));
    st.push(Check::holds("im_neg2_monotone_tail", r.im_neg2_monotone_from.is_some()));
    st.push(clause("im_neg2_gap", &r.im_neg2_gap));
    st.push(Check::reported("mirror_defect", r.mirror_defect));
    st.push(Check::reported_flag("literal_direction", r.literal_direction_holds));
    st.push(Check::reported_flag("literal_interval", r.literal_interval_holds));
    st.push(Check::above("delta_prime", r.delta_prime, 0.0));
    st.push(Check::reported("delta_prime_half_ratio", r.delta_prime_stability));
    st.push(Check::at_least("delta_prime_trend", r.delta_prime_trend, 0.5));
    st.push(Check::above("delta", r.delta, 0.0));
    st.push(Check::reported_flag("literal_near_upper", r.literal_upper_holds));
    st.push(Check::holds("pairs_classified", r.pair_counts.0 + r.pair_counts.1 + r.pair_counts.2 == r.total_pairs));
    st.push(Check::holds("gap_report", r.pass));
    let mut rng = StageKind::Gaps.rng(ctx.v.cfg.seed);
    let fr = frame_bounds(ms, 0.0, ctx.v.cfg.observability_trials, &mut rng)?;
    st.push(Check::above("frame_a1", fr.a1_hat, 0.0));
    st.push(Check::reported("frame_a2", fr.a2_hat));
    st.push(Check::at_most("frame_sandwich_failures", fr.sandwich_failures as f64, 0.0));
    st.push(Check::reported("frame_tail_drift", fr.tail_drift));
    let rows: Vec<NearRow> = r
        .near
        .iter()
        .map(|x| NearRow {
            m: x.m,
            partner_n: x.partner.n,
            partner_j: x.partner.j,
            distance: x.distance,
            scaled: x.scaled,
            scaled_real: x.scaled_real,
            second: x.second,
        })
        .collect();
    record(&mut st, ctx.sink.csv("near_resonance.csv", &rows)?);
    Ok(st)
}

#[derive(Serialize)]
struct FamilyRow {
    n: i64,
    j: u8,
    norm: f64,
    norm_over_rho: f64,
    min_norm: f64,
    derivative_envelope: f64,
}

fn biorthogonal_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let ms = need_ms(ctx)?;
    let cfg = &ctx.v.cfg;
    let pf = build_product(ms, TailModel::Asymptotic { z_max: cfg.z_max })?;
    let pr = verify_product_properties(&pf, ms, 0.5, cfg.family())?;
    st.push(Check::reported("type_bound", pr.type_bound));
    st.push(Check::reported("type_fitted_upper", pr.type_upper));
    st.push(Check::reported("type_fitted_lower", pr.type_lower));
    st.push(Check::reported_flag("type_clause", pr.type_pass));
    st.push(Check::reported_flag("decay_clause", pr.decay_pass));
    st.push(Check::reported_flag("strip_clause", pr.strip_pass));
    st.push(Check::above("c2", pr.c2_hat, 0.0));
    st.push(Check::at_least("c2_trend", pr.c2_trend, 0.5));
    let opts = BiorthogonalOptions { family_n: cfg.family(), ..Default::default() };
    let bf = build_biorthogonal(&pf, ms, ctx.v.horizon, &opts)?;
    st.push(Check::reported("uncorrected_deviation", bf.product_residual));
    st.push(Check::reported("correction_size", bf.correction_size));
    st.push(Check::at_most("gram_deviation", bf.residual, cfg.tolerances.biorthogonal));
    st.push(Check::reported("norm_constant", bf.norm_constant));
    st.push(Check::at_most("norm_trend", bf.norm_trend, 2.0));
    if let Some(d) = bf.conjugation_defect {
        st.push(Check::reported("conjugation_defect", d));
    }
    let env = |md| pr.derivative_envelope.iter().find(|(x, _)| *x == md).map_or(f64::NAN, |(_, e)| *e);
    let rows: Vec<FamilyRow> = bf
        .modes
        .iter()
        .enumerate()
        .map(|(i, md)| FamilyRow {
            n: md.n,
            j: md.j,
            norm: bf.norms[i],
            norm_over_rho: bf.norms[i] / bf.rho[i],
            min_norm: bf.min_norms[i],
            derivative_envelope: env(*md),
        })
        .collect();
    record(&mut st, ctx.sink.csv("biorthogonal.csv", &rows)?);
    Ok(st)
}

#[derive(Serialize)]
struct DataRow {
    n: i64,
    y0_re: f64,
    y0_im: f64,
    y1_re: f64,
    y1_im: f64,
}

#[derive(Serialize)]
struct ControlJson<'a> {
    watermark: Option<&'a str>,
    horizon: f64,
    omega0: [f64; 2],
    method: &'a str,
    alpha: Option<f64>,
    norm: f64,
    residual: f64,
    relative_residual: f64,
    condition_raw: f64,
    condition_scaled: f64,
    min_eig: f64,
    max_eig: f64,
    warnings: &'a [String],
    modes: Vec<ControlMode>,
}

#[derive(Serialize)]
struct ControlMode {
    n: i64,
    j: u8,
    kappa: f64,
    lambda: [f64; 2],
    coefficient: [f64; 2],
}

#[derive(Serialize)]
struct GridRow {
    t: f64,
    x: f64,
    re: f64,
    im: f64,
}

fn control_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let v = ctx.v;
    let cfg = &v.cfg;
    let ms = need_ms(ctx)?;
    let gram = assemble_gram(ms, v.omega0, v.horizon)?;
    let cond = gram.condition();
    st.push(Check::at_most("gram_hermitian_defect", gram.hermitian_defect, 1e-12));
    st.push(Check::reported("condition_raw", cond.raw));
    st.push(Check::reported("condition_scaled", cond.scaled));
    st.push(Check::reported("psd_defect", cond.psd_defect));
    let mut rng = StageKind::Control.rng(cfg.seed);
    let obs = certify_observability(&gram, cfg.observability_trials, &mut rng)?;
    st.push(Check::above("observability_constant", obs.c_hat, 0.0));
    st.push(Check::holds("observability_certified", obs.pass));
    st.push(Check::reported("observability_worst_random", obs.worst_random));
    st.push(Check::reported("observability_adversarial", obs.adversarial_ratio));
    let mut data = InitialData::random_smooth(ms, &mut rng);
    data.sigma = cfg.sigma_data;
    let sys = assemble_moments(&data, ms)?;
    let cf = synthesize_control(&sys, &gram, SynthesisMethod::Direct)?;
    let tol = if cf.method == SynthesisMethod::Direct { SOLVER_TOL } else { REGULARIZED_TOL };
    st.push(Check::at_most("moment_relative_residual", cf.relative_residual, tol));
    let quad = moment_quadrature_residual(&cf, &gram, &sys, cfg.quadrature_order);
    st.push(Check::at_most("moment_quadrature_residual", quad, 1e-6));
    st.push(Check::reported("control_norm", cf.norm));
    st.notes.push(format!("synthesis method: {}", cf.method.name()));
    st.notes.extend(cf.warnings.iter().cloned());

    let n = ms.n_trunc;
    let rows: Vec<DataRow> = (0..2 * n)
        .map(|k| DataRow { n: slot_n(n, k), y0_re: data.y0[k].re, y0_im: data.y0[k].im, y1_re: data.y1[k].re, y1_im: data.y1[k].im })
        .collect();
    record(&mut st, ctx.sink.csv("initial_data.csv", &rows)?);
    let json = ControlJson {
        watermark: v.watermark.as_deref(),
        horizon: v.horizon,
        omega0: cfg.omega0,
        method: cf.method.name(),
        alpha: cf.alpha,
        norm: cf.norm,
        residual: cf.residual,
        relative_residual: cf.relative_residual,
        condition_raw: cond.raw,
        condition_scaled: cond.scaled,
        min_eig: cond.min_eig,
        max_eig: cond.max_eig,
        warnings: &cf.warnings,
        modes: cf
            .modes
            .iter()
            .enumerate()
            .map(|(i, md)| ControlMode {
                n: md.n,
                j: md.j,
                kappa: cf.kappa[i],
                lambda: [cf.lambda[i].re, cf.lambda[i].im],
                coefficient: [cf.coefficients[i].re, cf.coefficients[i].im],
            })
            .collect(),
    };
    record(&mut st, ctx.sink.json("control.json", &json)?);
    if ctx.sink.is_active() {
        let (a, b) = (v.omega0.a, v.omega0.b);
        let ts: Vec<f64> = (0..cfg.grid_t).map(|i| v.horizon * (i as f64 + 0.5) / cfg.grid_t as f64).collect();
        let xs: Vec<f64> = (0..cfg.grid_x).map(|i| a + (b - a) * (i as f64 + 0.5) / cfg.grid_x as f64).collect();
        let grid = cf.eval_grid(&ts, &xs);
        let mut rows = Vec::with_capacity(ts.len() * xs.len());
        for (i, t) in ts.iter().enumerate() {
            for (k, x) in xs.iter().enumerate() {
                rows.push(GridRow { t: *t, x: *x, re: grid[i][k].re, im: grid[i][k].im });
            }
        }
        record(&mut st, ctx.sink.csv("control_grid.csv", &rows)?);
    }

    ctx.scalars.observability = Some(obs.c_hat);
    ctx.scalars.control_norm = Some(cf.norm);
    ctx.scalars.relative_residual = Some(cf.relative_residual);
    ctx.scalars.condition_raw = Some(cond.raw);
    ctx.scalars.condition_scaled = Some(cond.scaled);
    ctx.data = Some(data);
    ctx.control = Some(cf);
    Ok(st)
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    xi: f64,
    xi_t: f64,
    zeta: f64,
}

#[derive(Serialize)]
struct TerminalJson<'a> {
    watermark: Option<&'a str>,
    horizon: f64,
    sigma: [f64; 3],
    data_norm: f64,
    norms: [f64; 3],
    relative: [f64; 3],
    tolerance: f64,
    duality_worst: f64,
    fixed_support_relative: [f64; 3],
    warnings: &'a [String],
}

fn state_norms(ms: &MovingSpectrum, s: &GalerkinState, sigma: [f64; 3]) -> [f64; 3] {
    [weighted_norm(ms, &s.xi, sigma[0]), weighted_norm(ms, &s.xi_dot, sigma[1]), weighted_norm(ms, &s.zeta, sigma[2])]
}

fn simulate_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let v = ctx.v;
    let cfg = &v.cfg;
    let ms = need_ms(ctx)?;
    let (Some(data), Some(cf)) = (ctx.data.as_ref(), ctx.control.as_ref()) else {
        anyhow::bail!("skipped: control unavailable");
    };
    let sim = Simulator::new(ms, Forcing::Moving, Projection::Orthogonal, Some(cf))?;
    let start = GalerkinState::initial(data, ms, Frame::Moving)?;
    let end = sim.state_at(&start, v.horizon)?;
    let sigma = cfg.sigma_terminal;
    let norms = state_norms(ms, &end, sigma);
    let data_norm = data.norm(ms);
    let relative = norms.map(|x| if data_norm > 0.0 { x / data_norm } else { x });
    let tol = cfg.tolerances.terminal;
    st.push(Check::reported("data_norm", data_norm));
    st.push(Check::at_most("terminal_xi", relative[0], tol));
    st.push(Check::at_most("terminal_xi_t", relative[1], tol));
    st.push(Check::at_most("terminal_zeta", relative[2], tol));

    let check = DualityCheck::new(data, cf, ms, cfg.quadrature_order)?;
    let mut rng = StageKind::Simulate.rng(cfg.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cfg.adjoint_trials {
        let beta = (0..ms.len()).map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
        worst = worst.max(check.evaluate(&AdjointData { beta })?.residual);
    }
    st.push(Check::at_most("duality_residual", worst, cfg.tolerances.duality));

    let fixed = run_fixed_support(data, cf, ms)?;
    for (name, r) in ["fixed_support_xi", "fixed_support_xi_t", "fixed_support_zeta"].iter().zip(fixed.relative) {
        st.push(Check::reported(name, r));
    }
    st.notes.extend(sim.warnings.iter().cloned());

    if ctx.sink.is_active() {
        let pts = cfg.trajectory_points;
        let mut rows = Vec::with_capacity(pts);
        for i in 0..pts {
            let t = v.horizon * i as f64 / (pts - 1) as f64;
            let s = sim.state_at(&start, t)?;
            let nn = state_norms(ms, &s, sigma);
            rows.push(TrajectoryRow { t, xi: nn[0], xi_t: nn[1], zeta: nn[2] });
        }
        record(&mut st, ctx.sink.csv("trajectory.csv", &rows)?);
    }
    let json = TerminalJson {
        watermark: v.watermark.as_deref(),
        horizon: v.horizon,
        sigma,
        data_norm,
        norms,
        relative,
        tolerance: tol,
        duality_worst: worst,
        fixed_support_relative: fixed.relative,
        warnings: &sim.warnings,
    };
    record(&mut st, ctx.sink.json("terminal.json", &json)?);
    ctx.scalars.terminal_xi = Some(relative[0]);
    ctx.scalars.terminal_xi_t = Some(relative[1]);
    ctx.scalars.terminal_zeta = Some(relative[2]);
    ctx.scalars.duality = Some(worst);
    Ok(st)
}

#[derive(Serialize)]
struct SymbolRow {
    kappa: f64,
    h: f64,
    error: f64,
}

fn symbol_stage(ctx: &mut Ctx, mut st: Stage) -> Result<Stage> {
    let cfg = &ctx.v.cfg;
    let s = FractionalOrder::new(cfg.s)?;
    let mut rows = Vec::new();
    for (name, kappa) in [("1", 1.0), ("pi_2", PI / 2.0), ("3", 3.0)] {
        let chk = verify_symbol_identity(kappa, s, cfg.tolerances.symbol)?;
        st.push(Check::at_most(&format!("symbol_error_kappa_{name}"), chk.max_rel_error, cfg.tolerances.symbol));
        let rf = symbol_refinement(kappa, s, &REFINEMENT_LADDER)?;
        st.push(Check::at_least(&format!("symbol_order_kappa_{name}"), rf.order, 0.9));
        rows.extend(rf.h.iter().zip(&rf.errors).map(|(h, e)| SymbolRow { kappa, h: *h, error: *e }));
    }
    record(&mut st, ctx.sink.csv("symbol.csv", &rows)?);
    Ok(st)
}
