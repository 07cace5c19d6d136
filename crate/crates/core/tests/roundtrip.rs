use lowrank::compress::{compress_model, evaluate, truncate_model, CompressParams, CompressionMethod};
use lowrank::harness::{run_scenario, Scenario, ScenarioConfig};
use lowrank::linalg::io::{load_matrix, save_matrix};
use lowrank::mlp::MlpModel;
use lowrank::recover::solve_rank_constrained;
use lowrank::synth::{gen_approx_rank_instance, gen_exact_rank_instance, gen_mlp, NoiseKind, PlantedInstance, Plant, SeededRng};

#[test]
fn saved_instance_solves_identically() {
    let dir = tempfile::tempdir().unwrap();
    let inst = gen_exact_rank_instance(40, 6, 5, 2, 0.3, 0.0, &mut SeededRng::new(4, 2)).unwrap();
    inst.save(dir.path()).unwrap();
    let back = PlantedInstance::load(dir.path()).unwrap();
    assert_eq!(back.params, inst.params);
    let a = solve_rank_constrained(&inst.x_check, &inst.observation, 2).unwrap();
    let b = solve_rank_constrained(&back.x_check, &back.observation, 2).unwrap();
    assert_eq!(a.m_hat, b.m_hat);
}

#[test]
fn relu_instance_roundtrips() {
    let dir = tempfile::tempdir().unwrap();
    let noise = NoiseKind::Gaussian { sigma: 0.25 };
    let inst = gen_approx_rank_instance(30, 6, 8, 2, 1.0, noise, true, &mut SeededRng::new(5, 0)).unwrap();
    inst.save(dir.path()).unwrap();
    let back = PlantedInstance::load(dir.path()).unwrap();
    assert_eq!(back.observation, inst.observation);
    assert!(back.observation.as_slice().iter().all(|&v| v >= 0.0));
}

#[test]
fn compressed_model_survives_disk() {
    let dir = tempfile::tempdir().unwrap();
    let plant = Plant { ranks: vec![3, 3], noise: 0.05 };
    let model = gen_mlp(&[12, 10, 6], &mut SeededRng::new(6, 0), Some(&plant)).unwrap();
    let x0 = SeededRng::new(6, 1).gaussian(80, 12, 1.0);
    save_matrix(dir.path().join("x0.lrm"), &x0).unwrap();
    let x0 = load_matrix(dir.path().join("x0.lrm")).unwrap();

    let (compressed, report) =
        compress_model(&model, &x0, &[3, 3], CompressionMethod::ClosedForm, &CompressParams::default()).unwrap();
    let manifest = dir.path().join("model.json");
    compressed.save(&manifest).unwrap();
    let loaded = MlpModel::load(&manifest).unwrap();
    assert_eq!(loaded.param_count(), report.params_after);

    let eval = evaluate(&model, &loaded, &x0).unwrap();
    assert!((eval.output_mse - report.output_mse).abs() <= 1e-12 * report.output_mse.max(1.0));
    let baseline = evaluate(&model, &truncate_model(&model, &[3, 3]).unwrap(), &x0).unwrap();
    assert!(eval.output_mse < baseline.output_mse);
}

#[test]
fn scaling_run_writes_one_csv_row_per_trial() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.csv");
    let cfg = ScenarioConfig {
        sweep: vec![32, 48, 64],
        trials: 3,
        out: Some(path.clone()),
        ..ScenarioConfig::preset(Scenario::Thm2)
    };
    let report = run_scenario(&cfg).unwrap();
    assert_eq!(report.records.len(), 9);
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scenario,dimension,trial,seed,mse,converged");
    assert_eq!(lines.len(), 10);
    assert!(lines[1..].iter().all(|l| l.starts_with("thm2,")));
}
