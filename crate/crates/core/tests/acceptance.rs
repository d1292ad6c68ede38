//! One PASS/FAIL line per acceptance criterion; sub-checks are listed
//! beneath each line. Exits non-zero when any criterion fails.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;
use std::time::Instant;

use sphere_aero::acoustics::{
    detect_peaks, fwh_pressure, sliding_spectrum, ForceHistory, ForceSample, ObserverConfig, SpectralPeak,
    SpectralPeakSet, SurfaceQuadrature,
};
use sphere_aero::band_fields::{BandScalarField, BandVectorField, CpExtension};
use sphere_aero::engine::{Engine, EngineConfig};
use sphere_aero::fluid::{divergence, interior_norms, solve_pressure, FluidSolver, SolveMethod, SolverConfig, SolverLimits};
use sphere_aero::geometry::{build_narrow_band, GridSpec, NarrowBand, Obstacle, SphereSurface, Vec3};
use sphere_aero::mms::{convergence_rates, run_verification, MmsConfig, MmsRow};
use sphere_aero::synth::{amplitude_envelope, render_block, update_bank, OscillatorBank, SynthConfig, MAX_AMPLITUDE};

const REFERENCE_ERRORS: [(usize, f64, f64); 4] = [
    (11, 1.962e-1, 3.852e-1),
    (13, 2.049e-1, 3.049e-1),
    (15, 2.029e-1, 3.053e-1),
    (17, 2.015e-1, 2.876e-1),
];
const REFERENCE_RATE_U: f64 = -0.05;
const REFERENCE_RATE_RHO: f64 = 0.58;

#[derive(Default)]
struct Criterion {
    checks: Vec<(bool, String)>,
}

impl Criterion {
    fn check(&mut self, pass: bool, detail: impl Into<String>) -> &mut Self {
        self.checks.push((pass, detail.into()));
        self
    }

    fn within(&mut self, label: &str, value: f64, limit: f64) -> &mut Self {
        self.check(value <= limit, format!("{label} = {value:.3e} (limit {limit:.1e})"))
    }

    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.0)
    }
}

struct Report {
    results: Vec<(String, bool)>,
}

impl Report {
    fn run(&mut self, name: &str, f: impl FnOnce(&mut Criterion)) {
        let started = Instant::now();
        let mut c = Criterion::default();
        let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| f(&mut c)));
        if let Err(e) = outcome {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            c.check(false, format!("panicked: {msg}"));
        }
        let pass = c.passed();
        println!(
            "{} {name} ({:.2}s)",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
        for (ok, detail) in &c.checks {
            println!("       {} {detail}", if *ok { "ok  " } else { "MISS" });
        }
        self.results.push((name.to_string(), pass));
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn band(grid: GridSpec, surface: &SphereSurface) -> Arc<NarrowBand> {
    Arc::new(build_narrow_band(&grid, surface, 3.0).unwrap())
}

fn max_diff(a: &BandScalarField, b: &BandScalarField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn mms_thresholds(c: &mut Criterion) {
    let started = Instant::now();
    let report = run_verification(&MmsConfig::default()).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    for row in &report.rows {
        if row.resolution <= 15 {
            c.check(
                row.l2_u < 0.25,
                format!("r={} L2_u = {:.3e} (< 0.25)", row.resolution, row.l2_u),
            );
            c.check(
                row.l2_rho < 0.4,
                format!("r={} L2_rho = {:.3e} (< 0.4)", row.resolution, row.l2_rho),
            );
        }
        c.check(
            row.max_div < 5.0,
            format!("r={} max_div = {:.3e} (< 5.0)", row.resolution, row.max_div),
        );
    }
    c.check(elapsed < 60.0, format!("runtime {elapsed:.2}s (< 60 s)"));
}

fn reference_errors(c: &mut Criterion) {
    let config = MmsConfig::default();
    let report = run_verification(&config).unwrap();
    c.check(true, format!("calibration dt = {}, steps = {}", config.dt, config.steps));
    for (row, &(r, u, rho)) in report.rows.iter().zip(&REFERENCE_ERRORS) {
        assert_eq!(row.resolution, r);
        c.check(
            rel(row.l2_u, u) <= 0.3,
            format!("r={r} L2_u {:.3e} vs {u:.3e} ({:+.1}%)", row.l2_u, 100.0 * (row.l2_u / u - 1.0)),
        );
        c.check(
            rel(row.l2_rho, rho) <= 0.3,
            format!(
                "r={r} L2_rho {:.3e} vs {rho:.3e} ({:+.1}%)",
                row.l2_rho,
                100.0 * (row.l2_rho / rho - 1.0)
            ),
        );
    }
    let rates = report.rates.unwrap();
    c.check(
        (rates.velocity - REFERENCE_RATE_U).abs() <= 0.15,
        format!("velocity rate {:.3} vs {REFERENCE_RATE_U} (±0.15)", rates.velocity),
    );
    c.check(
        (rates.density - REFERENCE_RATE_RHO).abs() <= 0.15,
        format!("density rate {:.3} vs {REFERENCE_RATE_RHO} (±0.15)", rates.density),
    );
}

fn rate_fitter(c: &mut Criterion) {
    let rows: Vec<MmsRow> = REFERENCE_ERRORS
        .iter()
        .map(|&(r, u, rho)| MmsRow {
            resolution: r,
            h: 1.0 / (r - 1) as f64,
            l2_u: u,
            l2_rho: rho,
            l2_div: 1.0,
            max_div: 1.0,
        })
        .collect();
    let rates = convergence_rates(&rows).unwrap();
    c.check(
        (rates.velocity - REFERENCE_RATE_U).abs() <= 0.02,
        format!("velocity {:.4} vs {REFERENCE_RATE_U} (±0.02)", rates.velocity),
    );
    c.check(
        (rates.density - REFERENCE_RATE_RHO).abs() <= 0.02,
        format!("density {:.4} vs {REFERENCE_RATE_RHO} (±0.02)", rates.density),
    );
}

fn cpm_suite(c: &mut Criterion) {
    let started = Instant::now();
    let surface = SphereSurface::default();
    let b = band(GridSpec::unit_cube(21), &surface);
    let ext = CpExtension::new(&b).unwrap();
    let h = b.spacing();

    let k = BandScalarField::constant(b.len(), -1.375);
    c.within("constant extension error", max_diff(&ext.cp_extend(&k), &k), 1e-12);

    let smooth = BandScalarField::sample(b.nodes(), |x| (3.0 * x.x).sin() * (2.0 * x.y).cos() + x.z * x.z);
    let once = ext.cp_extend(&smooth);
    c.within("idempotence defect", max_diff(&ext.cp_extend(&once), &once), 1e-10);

    let center = surface.center;
    let radial = BandScalarField::sample(b.nodes(), |x| (x - center).norm());
    let worst = ext
        .cp_extend(&radial)
        .values()
        .iter()
        .fold(0.0f64, |m, v| m.max((v - surface.radius).abs()));
    c.within("radial extension error", worst, 10.0 * h * h);

    let mut solver = FluidSolver::new(b.clone(), SolverConfig::default()).unwrap();
    let obstacle = Obstacle::new(Vec3::new(1.0, 0.0, 0.3), 0.08, 0.03, &surface).unwrap();
    let mut state = solver.initial_state(vec![obstacle]);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        state = solver.step(&state).unwrap().0;
        let umax = state.u.max_norm();
        let tangency = state
            .u
            .values()
            .iter()
            .zip(b.normals())
            .fold(0.0f64, |m, (u, n)| m.max(u.dot(n).abs()));
        worst = worst.max(tangency / (1.0 + umax));
    }
    c.check(state.u.max_norm() > 0.0, "forced flow is nonzero");
    c.within("max |u·n| / (1 + |u|max) over 10 steps", worst, 1e-6);
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 10.0, format!("runtime {elapsed:.2}s (< 10 s)"));
}

fn projection_suite(c: &mut Criterion) {
    let started = Instant::now();
    let surface = SphereSurface::default();
    let b = band(GridSpec::unit_cube(15), &surface);
    let solver = FluidSolver::new(b.clone(), SolverConfig::default()).unwrap();
    let nodes = b.nodes();

    let phi_grad = |x: &Vec3| {
        Vec3::new(
            2.0 * (2.0 * x.x).cos() * x.y,
            (2.0 * x.x).sin() + 2.0 * x.y * x.z,
            x.y * x.y - 3.0 * (3.0 * x.z).sin(),
        )
    };
    let u_star = solver
        .extension()
        .cp_extend_vector(&BandVectorField::sample(nodes, phi_grad));
    let (before, _) = interior_norms(nodes, &divergence(nodes, &u_star));
    let (u, _) = solver.project(&u_star, None).unwrap();
    let (after, _) = interior_norms(nodes, &divergence(nodes, &u));
    c.check(
        after * 10.0 <= before,
        format!("gradient field divergence {before:.3e} -> {after:.3e} ({:.1}x, need 10x)", before / after),
    );

    let op = solver.laplacian();
    let mut p_star = BandScalarField::sample(nodes, |x| (4.0 * x.x).sin() * (3.0 * x.y).cos() + x.z);
    let mean = p_star.mean();
    p_star.values_mut().iter_mut().for_each(|v| *v -= mean);
    let rhs = op.apply(&p_star);
    let norm = p_star.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    for (threshold, method) in [(usize::MAX, SolveMethod::Direct), (0, SolveMethod::ConjugateGradient)] {
        let limits = SolverLimits {
            direct_solver_threshold: threshold,
            cg_tolerance: 1e-12,
            cg_max_iterations: 10_000,
        };
        let s = solve_pressure(op, &rhs, &limits).unwrap();
        let err = s
            .pressure
            .values()
            .iter()
            .zip(p_star.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        c.check(s.method == method, format!("{method:?} path selected"));
        c.within(&format!("{method:?} relative recovery error"), err / norm, 1e-6);
    }

    let m = op.matrix();
    let worst_row = (0..m.dim()).fold(0.0f64, |w, i| w.max(m.row_sum(i).abs()));
    c.within("max |row sum|", worst_row, 1e-10);
    c.check(m.max_asymmetry() == 0.0, format!("max asymmetry {:e} (exact 0)", m.max_asymmetry()));
    let elapsed = started.elapsed().as_secs_f64();
    c.check(elapsed < 30.0, format!("runtime {elapsed:.2}s (< 30 s)"));
}

fn fwh_oracle(c: &mut Criterion) {
    let f = 50.0;
    let dt = 1e-3;
    let mut history = ForceHistory::new(64);
    for i in 0..64 {
        let t = i as f64 * dt;
        history
            .push(ForceSample {
                t,
                force: Vec3::new(0.0, 0.0, (TAU * f * t).sin()),
            })
            .unwrap();
    }
    let dfdt = history.derivative_series();
    let source = Vec3::zeros();
    let at = |position: Vec3| ObserverConfig {
        position,
        ..ObserverConfig::default()
    };
    let on_axis = at(Vec3::new(0.0, 0.0, 10.0));
    let amplitude = |o: &ObserverConfig| dfdt.iter().fold(0.0f64, |m, d| m.max(fwh_pressure(d, o, &source).abs()));
    let expected = TAU * f / (4.0 * PI * 343.0 * 10.0);
    let a10 = amplitude(&on_axis);
    c.within(&format!("on-axis amplitude {a10:.6e} vs {expected:.6e}, relative error"), rel(a10, expected), 0.02);
    c.within("perpendicular |p'|", amplitude(&at(Vec3::new(10.0, 0.0, 0.0))), 1e-12);
    let a20 = amplitude(&at(Vec3::new(0.0, 0.0, 20.0)));
    c.within("doubling r: |2 p'(2r) / p'(r) - 1|", (2.0 * a20 / a10 - 1.0).abs(), 1e-12);

    let unit = SphereSurface::new(1.0, Vec3::zeros());
    let grid = GridSpec {
        resolution: 49,
        domain_min: Vec3::repeat(-1.5),
        domain_max: Vec3::repeat(1.5),
    };
    let b = band(grid, &unit);
    let q = SurfaceQuadrature::new(&b, 2000).unwrap();
    let p = BandScalarField::sample(b.nodes(), |x| x.z / x.norm());
    let force = q.integrate_pressure(&p);
    let target = Vec3::new(0.0, 0.0, 4.0 * PI / 3.0);
    c.within(
        &format!("p = cos θ on R = 1: F = ({:.4}, {:.4}, {:.4}), relative error", force.x, force.y, force.z),
        (force - target).norm() / target.norm(),
        0.01,
    );
}

fn tone(n: usize, dt: f64, parts: &[(f64, f64)]) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            Vec3::new(parts.iter().map(|(f, a)| a * (TAU * f * t).sin()).sum(), 0.0, 0.0)
        })
        .collect()
}

fn peak_set(parts: &[(f64, f64)]) -> SpectralPeakSet {
    let total: f64 = parts.iter().map(|p| p.1).sum();
    SpectralPeakSet {
        peaks: parts
            .iter()
            .enumerate()
            .map(|(i, &(hz, m))| SpectralPeak {
                bin: i + 1,
                omega: TAU * hz,
                magnitude: m,
                phase: 0.0,
                weight: m / total,
            })
            .collect(),
        window: None,
    }
}

fn spectral_synth_suite(c: &mut Criterion) {
    let dt = 1.0 / 3840.0;
    let spectrum = sliding_spectrum(&tone(256, dt, &[(120.0, 1.0), (300.0, 0.5)]), 256, 64, dt).unwrap();
    let set = detect_peaks(&spectrum, 8, 0.05);
    c.check(set.peaks.len() == 2, format!("{} peaks detected (exactly 2)", set.peaks.len()));
    if set.peaks.len() == 2 {
        let (p0, p1) = (&set.peaks[0], &set.peaks[1]);
        c.check(
            (p0.freq_hz() - 120.0).abs() < 1e-9 && (p1.freq_hz() - 300.0).abs() < 1e-9,
            format!("peak frequencies {:.3} Hz, {:.3} Hz", p0.freq_hz(), p1.freq_hz()),
        );
        c.within("weight 120 Hz relative error vs 2/3", rel(p0.weight, 2.0 / 3.0), 0.05);
        c.within("weight 300 Hz relative error vs 1/3", rel(p1.weight, 1.0 / 3.0), 0.05);
    }

    let cfg = SynthConfig::default();
    let mut bank = OscillatorBank::new(&cfg);
    let mut out_of_range = 0usize;
    let mut worst_sum = 0.0f64;
    for block in 0..200 {
        let parts: Vec<(f64, f64)> = (0..8)
            .map(|i| (110.0 * (i + 1) as f64 + 7.0 * (block % 5) as f64, 1.0 + i as f64))
            .collect();
        update_bank(&mut bank, &peak_set(&parts), &cfg);
        if !bank.is_empty() {
            worst_sum = worst_sum.max((bank.weight_sum() - 1.0).abs());
        }
        let samples = render_block(&mut bank, MAX_AMPLITUDE, &cfg).samples;
        out_of_range += samples.iter().filter(|s| !(-1.0..=1.0).contains(*s)).count();
    }
    c.check(out_of_range == 0, format!("{out_of_range} rendered samples outside [-1, 1]"));
    c.within("bank weight sum error", worst_sum, 1e-9);

    let a: Vec<(f64, f64)> = (0..8).map(|i| (100.0 * 1.5f64.powi(i), 1.0)).collect();
    let b: Vec<(f64, f64)> = (0..8).map(|i| (123.0 * 1.5f64.powi(i), 1.0)).collect();
    let hold = cfg.hysteresis.hold_blocks as usize;
    let mut bank = OscillatorBank::new(&cfg);
    let mut events = Vec::new();
    for block in 0..64 {
        let before = bank.retune_events;
        update_bank(&mut bank, &peak_set(if block % 2 == 0 { &a } else { &b }), &cfg);
        if bank.retune_events > before {
            events.push(block);
        }
    }
    let closest = events.windows(2).map(|w| w[1] - w[0]).min();
    c.check(
        closest.is_none_or(|d| d >= hold),
        format!("ABAB: {} retunes in 64 blocks, closest spacing {closest:?} (hold {hold})", events.len()),
    );

    c.check(amplitude_envelope(0.0, cfg.alpha) == 0.0, "A(0) = 0");
    let top = [1e-3, 1.0, 1e3, 1e12, f64::MAX]
        .iter()
        .map(|&p| amplitude_envelope(p, cfg.alpha))
        .fold(0.0f64, f64::max);
    c.check(top < 1.0, format!("max A over large |p'| = {top:.12} (< 1)"));
}

fn performance(c: &mut Criterion) {
    let config = EngineConfig::default();
    let r = config.grid.resolution;
    let mut engine = Engine::new(config).unwrap();
    engine.advance(5).unwrap();
    engine.timings = Default::default();
    engine.advance(100).unwrap();
    let t = &engine.timings;
    let per = |s: f64| 1e3 * s / t.steps as f64;
    c.check(
        true,
        format!(
            "r={r}, {} band points, per step: advect {:.2} ms, project {:.2} ms, acoustics {:.3} ms, CG iterations {:.1}",
            engine.simulation.band().len(),
            per(t.advect_seconds),
            per(t.project_seconds),
            per(t.acoustics_seconds),
            t.solver_iterations as f64 / t.steps as f64
        ),
    );
    c.check(
        t.steps_per_second() >= 30.0,
        format!("{:.1} steps/s (>= 30)", t.steps_per_second()),
    );
}

fn determinism(c: &mut Criterion) {
    let run = || {
        let mut engine = Engine::new(EngineConfig::default()).unwrap();
        let mut hops = Vec::new();
        let mut trace = Vec::new();
        for _ in 0..100 {
            let (sample, params) = engine.step().unwrap();
            hops.extend(params);
            trace.push((sample, engine.analysis.pipeline().p_prime(), engine.analysis.amplitude()));
        }
        let synth = engine.analysis.synth().clone();
        let amplitude = engine.analysis.amplitude();
        let pcm = render_block(engine.analysis.bank_mut(), amplitude, &synth).samples;
        (engine.simulation.state().clone(), engine.snapshot(), hops, trace, pcm)
    };
    let (s1, snap1, hops1, trace1, pcm1) = run();
    let (s2, snap2, hops2, trace2, pcm2) = run();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let vbits = |v: &[Vec3]| v.iter().flat_map(|x| x.iter().map(|c| c.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    let fbits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    c.check(vbits(s1.u.values()) == vbits(s2.u.values()), "velocity bit-identical");
    c.check(bits(s1.p.values()) == bits(s2.p.values()), "pressure bit-identical");
    c.check(bits(s1.rho.values()) == bits(s2.rho.values()), "density bit-identical");
    c.check(
        fbits(&snap1.pressure) == fbits(&snap2.pressure) && fbits(&snap1.speed) == fbits(&snap2.speed),
        format!("snapshot lattice arrays bit-identical ({} points)", snap1.pressure.len()),
    );
    c.check(
        hops1 == hops2,
        format!("audio parameter messages identical ({} emitted in 100 steps)", hops1.len()),
    );
    c.check(trace1 == trace2, "per-step force, p' and amplitude identical");
    c.check(fbits(&pcm1) == fbits(&pcm2), "rendered audio block bit-identical");
}

fn main() {
    let mut report = Report { results: Vec::new() };
    report.run("MMS thresholds", mms_thresholds);
    report.run("Reference error reproduction", reference_errors);
    report.run("Rate-fitter oracle", rate_fitter);
    report.run("CPM property suite", cpm_suite);
    report.run("Projection suite", projection_suite);
    report.run("FW-H analytic oracle", fwh_oracle);
    report.run("Spectral/synth suite", spectral_synth_suite);
    report.run("Performance target", performance);
    report.run("Determinism", determinism);
    let failed: Vec<&str> = report.results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        report.results.len() - failed.len(),
        report.results.len()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
