use pdra_core::attack::{AdversaryStrategy, AttackSchedule};
use pdra_core::metrics::{solve_saddle, solve_with_step, ORACLE_MAX_ITERS};
use pdra_core::par::Exec;
use pdra_core::problems::{running_example, running_example_saddle, running_example_with};
use pdra_core::sim::{run, write_trace_csv, RunConfig};
use pdra_core::solvers::{conservative_transform, max_stable_step, SolverKind};

#[test]
fn oracle_matches_the_closed_form() {
    for u in [1e-3, 0.1, 1.0] {
        let spec = running_example_with(u, None).unwrap();
        let sol = solve_saddle(&spec, 1e-10).unwrap();
        let (th, la) = running_example_saddle(u);
        for t in &sol.thetas {
            assert!((t[0] - th).abs() < 1e-8, "υ={u}: {} vs {th}", t[0]);
        }
        assert!((sol.lambda[0] - la).abs() < 1e-6 * (1.0 + la), "υ={u}: {} vs {la}", sol.lambda[0]);
    }
}

#[test]
fn clean_basic_run_reaches_the_regularized_optimum() {
    let spec = running_example().with_gamma(0.2).unwrap();
    let tr = run(RunConfig::new(spec, SolverKind::Basic, 5000).with_record_every(1000)).unwrap();
    let (th, _) = running_example_saddle(1e-3);
    for t in &tr.final_state.thetas {
        assert!((t[0] - th).abs() < 1e-3);
        assert!((t[0] - 5.0).abs() < 1e-2);
    }
}

#[test]
fn transformed_constraint_is_affine_in_the_trusted_mean() {
    // 3.75 and 5/3 are unregularized values; the regularized shift is
    // υλ*/(1−α₁), about 1.6e-3 at υ = 1e-4.
    let spec = running_example_with(1e-4, None).unwrap();
    for (a, slope, off, target) in [(0.2, 0.8, -3.0, 3.75), (0.4, 0.6, -1.0, 5.0 / 3.0)] {
        let bar = conservative_transform(&spec, a).unwrap();
        for x in [-3.0, 0.0, 2.5, 7.1, 10.0] {
            assert!((bar.constraints[0].value(&[x]) - (slope * x + off)).abs() < 1e-12);
        }
        let honest = [0usize, 2, 3, 4];
        let sol = solve_with_step(&bar, &honest, 1e-10, 0.05, ORACLE_MAX_ITERS, None).unwrap();
        let mean = sol.thetas.iter().map(|t| t[0]).sum::<f64>() / 4.0;
        assert!((mean - target).abs() < 1e-2, "α₁={a}: {mean}");
    }
}

#[test]
fn constant_adversary_breaks_the_baseline() {
    let spec = running_example().with_gamma(0.2).unwrap();
    let cfg = RunConfig::new(spec, SolverKind::Basic, 20_000)
        .with_record_every(1000)
        .with_attack(AttackSchedule::StaticSet { members: vec![1] }, AdversaryStrategy::ConstantValue { v: vec![1.0] });
    let tr = run(cfg).unwrap();
    let last = tr.last_record().unwrap();
    assert!(last.true_average()[0] > 5.5, "{:?}", last.true_average());
    assert!(last.violation[0] > 0.5);
}

#[test]
fn robust_solver_keeps_the_trusted_mean_at_the_conservative_level() {
    let spec = running_example_with(1e-4, None).unwrap();
    let kind = SolverKind::RobustStatic { alpha1: 0.2 };
    let gamma = max_stable_step(&spec, &kind).unwrap().gamma;
    let spec = spec.with_gamma(gamma.max(0.05)).unwrap();
    let cfg = RunConfig::new(spec, kind, 40_000)
        .with_record_every(40_000)
        .with_attack(AttackSchedule::StaticSet { members: vec![1] }, AdversaryStrategy::ConstantValue { v: vec![1.0] });
    let tr = run(cfg).unwrap();
    let th = &tr.final_state.thetas;
    let mean = [0usize, 2, 3, 4].iter().map(|&i| th[i][0]).sum::<f64>() / 4.0;
    assert!((mean - 3.75).abs() < 1e-2, "{mean}");
    // the true average, with the attacked agent at its true rate, stays feasible
    let avg = th.iter().map(|t| t[0]).sum::<f64>() / 5.0;
    assert!(avg <= 5.0 + 1e-9, "{avg}");
}

#[test]
fn sequential_and_parallel_execution_agree_bitwise() {
    let spec = running_example_with(0.3, Some(0.05)).unwrap();
    let base = RunConfig::new(spec.clone(), SolverKind::AveragingDynamic { window: 4, alpha2: 0.25 }, 300)
        .with_attack(AttackSchedule::BernoulliDynamic { p: 0.2, seed: 3 }, AdversaryStrategy::uniform_over_box(&spec, 4));
    let a = run(base.clone().with_exec(Exec::Sequential)).unwrap();
    let b = run(base.with_exec(Exec::Parallel)).unwrap();
    assert_eq!(a.records, b.records);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    write_trace_csv(&a, Some("# h"), &mut ca).unwrap();
    write_trace_csv(&b, Some("# h"), &mut cb).unwrap();
    assert_eq!(ca, cb);
}
