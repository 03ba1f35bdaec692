use ruinlab::harness::*;

fn exit_plan(dim: usize, radii: &[u64]) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(PlanKind::ExitConverge);
    plan.dim = dim;
    plan.params = radii.to_vec();
    plan.n_samples = 20_000;
    plan.seed = 2024;
    plan
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn converge_csv_is_byte_identical_across_runs_and_pools() {
    let mut plan = exit_plan(2, &[3, 6, 12]);
    plan.oracle.max_states = 200;
    let csv = |threads| in_pool(threads, || run_converge(&plan).unwrap().csv_string(1).unwrap());
    let first = csv(1);
    assert_eq!(first, csv(1));
    assert_eq!(first, csv(3));
    assert!(first.starts_with("param,scaled_moment,std_error,exact_value,limit_value,abs_gap,engine,seed\n"));
    assert!(first.contains(",monte_carlo,"));
}

#[test]
fn rows_record_engine_and_gap() {
    let mut plan = exit_plan(2, &[2, 5]);
    plan.oracle.max_states = 50;
    let table = run_exit_converge(&plan).unwrap();
    let (a, b) = (&table.rows[0], &table.rows[1]);
    assert_eq!(a.engine, Engine::Oracle);
    assert_eq!(a.exact_value, Some(a.scaled_moment));
    assert_eq!(b.engine, Engine::MonteCarlo);
    assert_eq!(b.exact_value, None);
    assert!(b.std_error > 0.0);
    for r in &table.rows {
        assert_eq!(r.abs_gap, (r.scaled_moment - r.limit_value).abs());
        assert!(r.is_ok());
    }
    assert_ne!(a.seed, b.seed);
}

#[test]
fn empty_or_unsorted_parameters_are_rejected() {
    assert!(run_exit_converge(&exit_plan(1, &[])).is_err());
    assert!(run_exit_converge(&exit_plan(1, &[8, 4])).is_err());
    let mut plan = exit_plan(1, &[4]);
    plan.kind = PlanKind::MaxConverge;
    assert!(run_exit_converge(&plan).is_err());
}

#[test]
fn max_sweep_uses_oracle_for_short_horizons() {
    let mut plan = ExperimentPlan::new(PlanKind::MaxConverge);
    plan.dim = 2;
    plan.params = vec![1, 10, 50];
    plan.moments = vec![1, 2];
    let table = run_max_converge(&plan).unwrap();
    assert_eq!(table.rows.len(), 6);
    assert!(table.rows.iter().all(|r| r.engine == Engine::Oracle));
    assert_eq!(table.rows_for(2).next().unwrap().scaled_moment, 1.0);
}

#[test]
fn three_dim_second_moment_smoke() {
    let mut plan = ExperimentPlan::new(PlanKind::MaxConverge);
    plan.dim = 3;
    plan.moments = vec![2];
    plan.params = vec![1000];
    plan.oracle.max_work = 0;
    let row = run_max_converge(&plan).unwrap().rows.remove(0);
    assert_eq!(row.engine, Engine::MonteCarlo);
    assert!(row.scaled_moment.is_finite() && row.std_error > 0.0 && row.std_error < 0.01);
}

#[test]
fn files_and_sidecars() {
    let dir = std::env::temp_dir().join(format!("ruinlab-harness-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut plan = exit_plan(1, &[2, 4]);
    plan.moments = vec![1, 2];
    let written = run_converge(&plan)
        .unwrap()
        .write_files(&dir.join("sweep.csv"))
        .unwrap();
    assert_eq!(written, vec![dir.join("sweep_p1.csv"), dir.join("sweep_p2.csv")]);
    let meta = std::fs::read_to_string(meta_path(&written[1])).unwrap();
    assert!(meta.contains("moment=2\n"));
    assert!(meta.contains("seed=2024\n"));
    assert!(meta.contains("row.4.status=ok\n"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn identity_report_passes() {
    let report = run_identities(&Default::default());
    let failed: Vec<_> = report.failures().map(|r| r.name).collect();
    assert!(failed.is_empty(), "{failed:?}");
    for name in [
        "erdos_kac_vs_max_modulus",
        "gen_fn_tau_unit_level",
        "h_series_agreement",
    ] {
        assert!(report.rows.iter().any(|r| r.name == name));
    }
}

#[test]
fn coupling_audit_and_negative_control() {
    assert_eq!(run_coupling_audit(1, 3, 50, 2_000, 1).unwrap().total(), 0);
    assert_eq!(run_coupling_audit(3, 3, 100, 10_000, 2).unwrap().total(), 0);
    let bad = audit_with(3, 3, 100, 1_000, 3, corrupted_coupled_sample).unwrap();
    assert_eq!(bad.exit_violations, 1_000);
    assert_eq!(bad.max_violations, 1_000);
    assert!(run_coupling_audit(2, 3, 10, 0, 1).is_err());
}

#[test]
fn config_file_round_trip() {
    let path = std::env::temp_dir().join(format!("ruinlab-{}.ini", std::process::id()));
    std::fs::write(
        &path,
        "# sweep\ndim = 3\nhorizon = 10, 20\n[quadrature]\nrel_tol = 1e-10\n[sampling]\nblock_size = 128\n",
    )
    .unwrap();
    let cfg = Config::load(&path).unwrap();
    let mut plan = ExperimentPlan::new(PlanKind::MaxConverge);
    cfg.apply(&mut plan).unwrap();
    assert_eq!((plan.dim, plan.params.clone()), (3, vec![10, 20]));
    assert_eq!(plan.quad.rel_tol, 1e-10);
    assert_eq!(plan.batch.block_size, 128);
    std::fs::remove_file(&path).unwrap();
}

#[test]
fn limits_table_rows() {
    let rows = run_limits_table(&Default::default(), 2, &[1, 2], &[0.5, 1.0]).unwrap();
    assert_eq!(rows.len(), 2 + 2 + 4 + 4);
    let mut out = Vec::new();
    write_limits_csv(&rows, &mut out).unwrap();
    assert!(String::from_utf8(out)
        .unwrap()
        .starts_with("quantity,dim,p,arg,value\nexit_cdf,2,,0.5,"));
    assert!(run_limits_table(&Default::default(), 2, &[1], &[-1.0]).is_err());
}
