//! Acceptance criteria 1–14. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pdra_cli::commands::{cmd_run, cmd_sweep, references};
use pdra_cli::config::{ExperimentConfig, SweepConfig};
use pdra_cli::presets::{preset, workspace_root};
use pdra_core::attack::{validate_assumption2, AdversaryStrategy, AttackSchedule};
use pdra_core::metrics::{
    check_conservatism, prop1_factor, solve_with_step, theorem1_bound, SaddleSolution, ORACLE_MAX_ITERS,
};
use pdra_core::problem::ProblemSpec;
use pdra_core::problems::{
    balance_residual, gen_ev_instance, gen_powernet_instance, load_network_data, running_example_saddle,
    running_example_with, EvInstanceParams, PowerNetParams,
};
use pdra_core::report::{bound_rows, effective_spec};
use pdra_core::robust::{prop2_bound, robust_mean_estimate, trusted_radius, RobustMeanConfig};
use pdra_core::sim::{run, run_with_observer, RunConfig, RunTrace};
use pdra_core::solvers::{conservative_transform, largest_alpha2, max_stable_step, SolverKind};
use pdra_core::vecops;

type Res<T> = Result<T, String>;

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Res<Outcome> {
    Ok(Outcome { pass, detail })
}

/// Largest recorded multiplier of one run, against its λ̄.
struct DualLog {
    label: String,
    max: f64,
    bar: f64,
}

#[derive(Default)]
struct Duals(Vec<DualLog>);

impl Duals {
    fn push(&mut self, label: impl Into<String>, max: f64, bar: f64) {
        self.0.push(DualLog { label: label.into(), max, bar });
    }

    fn trace(&mut self, label: impl Into<String>, tr: &RunTrace) -> Res<()> {
        let bar = effective_spec(&tr.config).map_err(e)?.bounds.lambda_bar;
        let max = tr.records.iter().flat_map(|r| r.lambda.iter().copied()).fold(0.0, f64::max);
        self.push(label, max, bar);
        Ok(())
    }
}

fn max_lambda(lambda: &[f64]) -> f64 {
    lambda.iter().copied().fold(0.0, f64::max)
}

fn exact_reference(upsilon: f64, gamma: f64) -> SaddleSolution {
    let (th, la) = running_example_saddle(upsilon);
    SaddleSolution {
        members: (0..5).collect(),
        thetas: vec![vec![th]; 5],
        lambda: vec![la],
        residual: 0.0,
        iters: 0,
        gamma,
        method: "closed form".into(),
    }
}

fn ev(n: usize, seed: u64) -> Res<ProblemSpec> {
    gen_ev_instance(&EvInstanceParams::standard(n, 4, seed)).map_err(e)
}

fn c1(duals: &mut Duals) -> Res<Outcome> {
    let spec = running_example_with(1e-3, Some(0.2)).map_err(e)?;
    let t = Instant::now();
    let tr = run(RunConfig::new(spec, SolverKind::Basic, 5000).with_record_every(10)).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    duals.trace("1", &tr)?;
    let worst = tr.final_state.thetas.iter().map(|t| (t[0] - 5.0).abs()).fold(0.0, f64::max);
    outcome(worst <= 1e-2 && secs < 1.0, format!("max |θ_i − 5| = {worst:.3e}, {secs:.3} s"))
}

fn c2() -> Res<Outcome> {
    let spec = running_example_with(1e-4, None).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_affine: f64 = 0.0;
    let mut worst_opt: f64 = 0.0;
    let mut means = Vec::new();
    for (a, slope, off, target) in [(0.2, 0.8, -3.0, 3.75), (0.4, 0.6, -1.0, 5.0 / 3.0)] {
        let bar = conservative_transform(&spec, a).map_err(e)?;
        for _ in 0..100 {
            let x: f64 = rng.gen_range(-20.0..20.0);
            worst_affine = worst_affine.max((bar.constraints[0].value(&[x]) - (slope * x + off)).abs());
        }
        // one attacked agent at α₁ = 0.2, two at α₁ = 0.4
        let honest: Vec<usize> = if a < 0.3 { vec![0, 2, 3, 4] } else { vec![0, 2, 4] };
        let sol = solve_with_step(&bar, &honest, 1e-10, 0.05, ORACLE_MAX_ITERS, None).map_err(e)?;
        let mean = sol.thetas.iter().map(|t| t[0]).sum::<f64>() / honest.len() as f64;
        worst_opt = worst_opt.max((mean - target).abs());
        means.push(mean);
    }
    outcome(
        worst_affine <= 1e-12 && worst_opt <= 1e-2,
        format!("affine err {worst_affine:.1e}, trusted means {:.4} / {:.4}", means[0], means[1]),
    )
}

fn c3(duals: &mut Duals) -> Res<Outcome> {
    let u = 0.5;
    let spec = running_example_with(u, None).map_err(e)?;
    let l = spec.bounds.l_phi;
    let gamma = u / (l * l);
    let spec = spec.with_gamma(gamma).map_err(e)?;
    let factor = prop1_factor(gamma, u, l);
    let t = Instant::now();
    let cfg = RunConfig::new(spec, SolverKind::Basic, 3000).with_reference(exact_reference(u, gamma));
    let tr = run(cfg).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    duals.trace("3", &tr)?;
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    let mut converged_at = None;
    for w in tr.records.windows(2) {
        let residual = w[1].state().dist_sq(&w[0].state()).sqrt() / gamma;
        if residual <= 1e-10 {
            converged_at = Some(w[0].k);
            break;
        }
        let (d1, d2) = (w[0].dist_to_opt.unwrap(), w[1].dist_to_opt.unwrap());
        worst = worst.max(d2 / d1);
        checked += 1;
    }
    let pass = converged_at.is_some() && worst <= factor + 1e-8 && secs < 5.0;
    outcome(
        pass,
        format!(
            "υ = {u}: max ratio {worst:.6} vs {factor:.6} over {checked} steps, residual 1e-10 at k = {:?}, {secs:.3} s",
            converged_at
        ),
    )
}

fn c4(duals: &mut Duals) -> Res<Outcome> {
    let spec = running_example_with(1e-3, Some(0.2)).map_err(e)?;
    let cfg = RunConfig::new(spec, SolverKind::Basic, 20_000)
        .with_record_every(100)
        .with_attack(AttackSchedule::StaticSet { members: vec![1] }, AdversaryStrategy::ConstantValue { v: vec![1.0] });
    let tr = run(cfg).map_err(e)?;
    duals.trace("4", &tr)?;
    let avg = tr.final_state.mean_theta()[0];
    let violation = (avg - 5.0).max(0.0);
    outcome(violation > 0.5, format!("true average {avg:.4}, violation {violation:.4}"))
}

fn c5() -> Res<Outcome> {
    let (n, d, alpha) = (20usize, 3usize, 0.2);
    let n_bad = (alpha * n as f64) as usize;
    let trusted: Vec<usize> = (0..n - n_bad).collect();
    let cfg = RobustMeanConfig::new(alpha, n).map_err(e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for trial in 0..1000 {
        let center: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let spread = 10f64.powf(rng.gen_range(-3.0..1.0));
        let mut pts: Vec<Vec<f64>> =
            trusted.iter().map(|_| center.iter().map(|c| c + spread * rng.gen_range(-1.0..1.0)).collect()).collect();
        let dir: Vec<f64> = (0..d).map(|_| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        for b in 0..n_bad {
            let p: Vec<f64> = match trial % 3 {
                // all outliers stacked on one far point
                0 => dir.iter().map(|s| s * 1e6).collect(),
                // scattered far points
                1 => (0..d).map(|_| rng.gen_range(-1e6..1e6)).collect(),
                // alternating sides of the honest cloud
                _ => dir.iter().map(|s| if b % 2 == 0 { s * 1e6 } else { -s * 1e6 }).collect(),
            };
            pts.push(p);
        }
        let est = robust_mean_estimate(&pts, &cfg).map_err(e)?;
        let mean = vecops::mean_over(&pts, &trusted, d);
        let r = trusted_radius(&pts, &trusted);
        let bound = prop2_bound(alpha, r, d).map_err(e)?;
        let err = vecops::dist(&est, &mean);
        if err > bound {
            violations += 1;
        }
        worst_ratio = worst_ratio.max(err / bound);
    }
    outcome(violations == 0, format!("{violations} violations in 1000 trials, max err/bound {worst_ratio:.3}"))
}

fn perturbation_violations(tr: &RunTrace) -> Res<(usize, usize)> {
    let rows = bound_rows(tr).map_err(e)?;
    let rows: Vec<_> = rows.iter().filter(|r| r.name.starts_with("perturbation_")).collect();
    let bad = rows.iter().filter(|r| !r.holds(1e-9 * r.bound.abs().max(1.0))).count();
    Ok((rows.len(), bad))
}

fn c6(duals: &mut Duals) -> Res<Outcome> {
    let mut checked = 0;
    let mut bad = 0;
    for seed in 1..=5u64 {
        let spec = ev(20, seed)?;
        let kind = SolverKind::RobustStatic { alpha1: 0.2 };
        let g = max_stable_step(&spec, &kind).map_err(e)?.gamma;
        let cfg = RunConfig::new(spec.clone().with_gamma(g).map_err(e)?, kind, 1000)
            .with_attack(AttackSchedule::StaticSet { members: vec![0, 1, 2, 3] }, AdversaryStrategy::uniform_over_box(&spec, 0))
            .reseed(seed);
        let tr = run(cfg).map_err(e)?;
        duals.trace(format!("6 static seed {seed}"), &tr)?;
        let (c, b) = perturbation_violations(&tr)?;
        checked += c;
        bad += b;

        let kind = SolverKind::AveragingDynamic { window: 10, alpha2: 0.4 };
        let sched = AttackSchedule::RoundRobinDynamic { n_channels: 10, compromised_channels: vec![0, 1, 2, 3] };
        let cfg = RunConfig::new(spec.clone().with_gamma(0.05).map_err(e)?, kind, 1000)
            .with_attack(sched, AdversaryStrategy::uniform_over_box(&spec, 0))
            .reseed(seed);
        let tr = run(cfg).map_err(e)?;
        duals.trace(format!("6 dynamic seed {seed}"), &tr)?;
        let (c, b) = perturbation_violations(&tr)?;
        checked += c;
        bad += b;
    }
    outcome(bad == 0 && checked > 0, format!("{bad} violations over {checked} bound rows"))
}

fn c7(duals: &mut Duals) -> Res<Outcome> {
    let t = Instant::now();
    let mut cfg = preset("ev-static").map_err(e)?;
    cfg.run.iters = 50_000;
    cfg.run.record_every = 1;
    let run_cfg = cfg.build_run().map_err(e)?;
    let refs = references(&cfg, &run_cfg).map_err(e)?.ok_or("oracle disabled")?;
    let run_cfg = run_cfg.with_reference(refs.target);
    let alpha1 = run_cfg.solver.alpha1().unwrap();
    let eff = effective_spec(&run_cfg).map_err(e)?;
    let (upsilon, gamma) = (run_cfg.spec.reg.upsilon, run_cfg.spec.reg.gamma);
    let tail_start = 40_000;
    let (mut e_bar, mut worst, mut lam) = (0.0f64, 0.0f64, 0.0f64);
    run_with_observer(run_cfg, &mut |r| {
        if r.perturbation.e_k.is_finite() {
            e_bar = e_bar.max(r.perturbation.e_k);
        }
        if r.k >= tail_start {
            worst = worst.max(r.dist_to_opt.unwrap_or(f64::INFINITY));
        }
        lam = lam.max(max_lambda(&r.lambda));
    })
    .map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    duals.push("7", lam, eff.bounds.lambda_bar);
    let bound = theorem1_bound((1.0 - alpha1) * upsilon, gamma, eff.bounds.l_phi, e_bar).map_err(e)?;
    outcome(
        worst <= bound && secs < 60.0,
        format!("tail max ‖z − ẑ*‖² = {worst:.4e} ≤ {bound:.4e} (Ē = {e_bar:.3e}), {secs:.1} s"),
    )
}

fn c8(duals: &mut Duals) -> Res<Outcome> {
    let u = 0.3;
    let m = 10;
    let alpha2 = largest_alpha2(m);
    let kind = SolverKind::AveragingDynamic { window: m, alpha2 };
    let sched = AttackSchedule::RoundRobinDynamic { n_channels: 10, compromised_channels: vec![0, 1, 2, 3] };
    let t = Instant::now();
    let spec = running_example_with(u, None).map_err(e)?;
    let a2 = validate_assumption2(&sched, 5, 20_000, m, alpha2).map_err(e)?;
    let rule = max_stable_step(&spec, &kind).map_err(e)?;
    let spec = spec.with_gamma(rule.gamma).map_err(e)?;
    let cfg = RunConfig::new(spec.clone(), kind, 20_000)
        .with_attack(sched, AdversaryStrategy::uniform_over_box(&spec, 8))
        .with_reference(exact_reference(u, rule.gamma));
    let tr = run(cfg).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    duals.trace("8", &tr)?;
    let rows: Vec<_> = bound_rows(&tr).map_err(e)?.into_iter().filter(|r| r.name == "geometric_rate").collect();
    let bad = rows.iter().filter(|r| !r.holds(1e-12)).count();
    let last = tr.final_state.iter;
    let final_d = tr.config.reference.as_ref().unwrap().dist_sq(&tr.final_state);
    outcome(
        a2.pass && !rows.is_empty() && bad == 0 && final_d <= 1e-8 && secs < 60.0,
        format!(
            "α₂ = {alpha2}, γ = {:.3e}, ρ = {:.6}; {bad}/{} rate rows violated; ‖z − z*‖² = {final_d:.2e} at k = {last}, {secs:.1} s",
            rule.gamma,
            rule.rho.unwrap_or(f64::NAN),
            rows.len()
        ),
    )
}

struct SweepStats {
    final_mse: Vec<Option<f64>>,
    iters_to_mse: Vec<Option<u64>>,
}

fn seed_sweep(name: &str, root: &std::path::Path, duals: &mut Duals) -> Res<SweepStats> {
    let mut cfg = preset(name).map_err(e)?;
    cfg.output.dir = root.join(name);
    cfg.sweep = SweepConfig { seeds: vec![1, 2, 3, 4, 5], ..Default::default() };
    let out = cmd_sweep(&cfg, false).map_err(e)?;
    let mut stats = SweepStats { final_mse: vec![], iters_to_mse: vec![] };
    for c in &out.cells {
        let s = c.summary.as_ref().ok_or_else(|| format!("{name} cell {} failed: {:?}", c.index, c.error))?;
        duals.push(format!("9 {name} seed {}", c.key.seed), s.max_lambda, s.lambda_bar);
        stats.final_mse.push(s.final_mse);
        stats.iters_to_mse.push(s.iters_to_mse);
    }
    Ok(stats)
}

fn median_u64(v: &[Option<u64>]) -> f64 {
    let mut x: Vec<f64> = v.iter().map(|k| k.map_or(f64::INFINITY, |k| k as f64)).collect();
    x.sort_by(f64::total_cmp);
    x[x.len() / 2]
}

fn c9(duals: &mut Duals) -> Res<Outcome> {
    let dir = tempfile::tempdir().map_err(e)?;
    let t = Instant::now();
    let a = seed_sweep("ev-dynamic-p01", dir.path(), duals)?;
    let b = seed_sweep("ev-dynamic-p02", dir.path(), duals)?;
    let secs = t.elapsed().as_secs_f64();
    let ok = |s: &SweepStats| s.final_mse.iter().filter(|m| m.is_some_and(|m| m <= 1e-3)).count();
    let (ka, kb) = (median_u64(&a.iters_to_mse), median_u64(&b.iters_to_mse));
    outcome(
        ok(&a) >= 4 && ok(&b) >= 4 && kb > ka && secs < 600.0,
        format!(
            "seeds with MSE ≤ 1e-3: {}/5 (p=0.1), {}/5 (p=0.2); median iterations to 1e-3: {ka} vs {kb}; {secs:.0} s",
            ok(&a),
            ok(&b)
        ),
    )
}

fn c10(duals: &mut Duals) -> Res<Outcome> {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut cfg = preset("ev-static").map_err(e)?;
    cfg.output.dir = dir.path().to_path_buf();
    cfg.sweep = SweepConfig { alpha1: vec![0.2, 0.3], seeds: vec![1, 2, 3, 4, 5], ..Default::default() };
    let out = cmd_sweep(&cfg, false).map_err(e)?;
    for c in &out.cells {
        let s = c.summary.as_ref().ok_or_else(|| format!("cell {} failed: {:?}", c.index, c.error))?;
        duals.push(format!("10 α₁={:?} seed {}", c.key.alpha1, c.key.seed), s.max_lambda, s.lambda_bar);
    }
    // seed medians as written to mse_vs_alpha.csv
    let text = fs::read_to_string(dir.path().join("mse_vs_alpha.csv")).map_err(e)?;
    let mut med = Vec::new();
    for line in text.lines().skip(2) {
        let cols: Vec<&str> = line.split(',').collect();
        med.push((cols[0].parse::<f64>().map_err(e)?, cols[5].parse::<f64>().map_err(e)?));
    }
    let at = |a: f64| med.iter().find(|(x, _)| (*x - a).abs() < 1e-12).map(|p| p.1);
    let (Some(m2), Some(m3)) = (at(0.2), at(0.3)) else {
        return outcome(false, format!("missing rows in mse_vs_alpha.csv: {med:?}"));
    };
    outcome(m3 >= m2, format!("median MSE {m2:.4e} at α₁ = 0.2, {m3:.4e} at α₁ = 0.3"))
}

fn c11() -> Res<Outcome> {
    let spec = ev(100, 1)?;
    let attacked: Vec<usize> = (0..20).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for a in [0.2, 0.3] {
        let bar = conservative_transform(&spec, a).map_err(e)?;
        let rep = check_conservatism(&spec, &bar, &attacked, 1000, 11).map_err(e)?;
        pass &= rep.violations == 0 && rep.skipped < rep.trials;
        parts.push(format!(
            "α₁ = {a}: {} violations, {} skipped, worst margin {:.3e}",
            rep.violations, rep.skipped, rep.worst_margin
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c12(duals: &Duals) -> Res<Outcome> {
    let bad: Vec<&DualLog> = duals.0.iter().filter(|d| !(d.max <= d.bar + 1e-12)).collect();
    let tightest = duals.0.iter().map(|d| d.max / d.bar).fold(0.0, f64::max);
    let mut detail = format!("{} runs, max λ/λ̄ = {tightest:.3e}", duals.0.len());
    if let Some(d) = bad.first() {
        detail.push_str(&format!("; run {} has λ = {} > {}", d.label, d.max, d.bar));
    }
    outcome(bad.is_empty() && !duals.0.is_empty(), detail)
}

fn c13() -> Res<Outcome> {
    let t = Instant::now();
    let net = load_network_data(&workspace_root().join("data/threebus")).map_err(e)?;
    let spec = gen_powernet_instance(&PowerNetParams::new(net, 1e-6, 0)).map_err(e)?.with_gamma(0.02).map_err(e)?;
    let (m, alpha2) = (25, 0.45);
    let sched = AttackSchedule::RoundRobinDynamic { n_channels: 20, compromised_channels: vec![0, 1, 2] };
    let a2 = validate_assumption2(&sched, spec.n_agents, 1000, m, alpha2).map_err(e)?;
    let cfg = RunConfig::new(spec.clone(), SolverKind::AveragingDynamic { window: m, alpha2 }, 40_000)
        .with_record_every(100)
        .with_attack(sched, AdversaryStrategy::uniform_over_box(&spec, 13));
    let tr = run(cfg).map_err(e)?;
    let secs = t.elapsed().as_secs_f64();
    let res = balance_residual(&tr.final_state.thetas);
    outcome(
        a2.pass && res <= 1e-4 && secs < 60.0,
        format!("{} constraints, |1ᵀ(d − g)| = {res:.3e}, {secs:.1} s", spec.n_constraints()),
    )
}

fn c14() -> Res<Outcome> {
    let dir = tempfile::tempdir().map_err(e)?;
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["running-example-static", "ev-dynamic-p01"] {
        let mut cfg: ExperimentConfig = preset(name).map_err(e)?;
        cfg.run.iters = cfg.run.iters.min(2000);
        let mut bytes = Vec::new();
        for rep in 0..2 {
            cfg.output.dir = dir.path().join(format!("{name}-{rep}"));
            let out = cmd_run(&cfg).map_err(e)?;
            bytes.push(fs::read(out.out_dir.join("trace.csv")).map_err(e)?);
        }
        let same = bytes[0] == bytes[1];
        pass &= same;
        parts.push(format!("{name}: {} bytes, identical = {same}", bytes[0].len()));
    }
    outcome(pass, parts.join("; "))
}

fn main() {
    let mut duals = Duals::default();
    let mut failed = 0;
    let mut line = |n: usize, r: Res<Outcome>| {
        let (tag, detail) = match r {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(err) => ("FAIL", format!("error: {err}")),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("criterion {n:>2}: {tag}  {detail}");
    };
    line(1, c1(&mut duals));
    line(2, c2());
    line(3, c3(&mut duals));
    line(4, c4(&mut duals));
    line(5, c5());
    line(6, c6(&mut duals));
    line(7, c7(&mut duals));
    line(8, c8(&mut duals));
    line(9, c9(&mut duals));
    line(10, c10(&mut duals));
    line(11, c11());
    line(12, c12(&duals));
    line(13, c13());
    line(14, c14());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

