use dualadam::analysis::{default_hvp_step, hvp};
use dualadam::config::{SweepMode, SweepSpec, TrainSpec};
use dualadam::escape::{make_barrier, run_escape, Dynamics, EscapeRun};
use dualadam::landscape::NoiseModel;
use dualadam::linalg::dot;
use dualadam::nn::{make_two_moons, train, Activation, Network, TrainConfig};
use dualadam::runner::{self, sweep_grid};
use dualadam::{OptimizerConfig, OptimizerKind, Schedule};

#[test]
fn hvp_is_symmetric_on_a_trained_network() {
    let data = make_two_moons(120, 0.1, 2).unwrap();
    let net = Network::init(&[2, 16, 16, 2], Activation::Tanh, 2).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 2,
    };
    let run = train(&net, &data, &OptimizerConfig::new(OptimizerKind::Adam, 1e-2), &tc).unwrap();
    let net = run.network().unwrap();
    let (x, y) = data.gather(&data.split.train);
    let theta = net.params().to_vec();
    let grad = |p: &[f64]| Ok(net.loss_and_grad_at(p, &x, &y)?.1);
    let h = default_hvp_step(&theta);
    let a: Vec<f64> = (0..theta.len()).map(|i| ((i * 7 % 13) as f64 - 6.0) / 6.0).collect();
    let b: Vec<f64> = (0..theta.len()).map(|i| ((i * 5 % 11) as f64 - 5.0) / 5.0).collect();
    let ahb = dot(&a, &hvp(grad, &theta, &b, h).unwrap());
    let bha = dot(&b, &hvp(grad, &theta, &a, h).unwrap());
    assert!((ahb - bha).abs() <= 1e-4 * ahb.abs().max(bha.abs()), "{ahb} vs {bha}");
}

#[test]
fn higher_barriers_take_longer_to_leave() {
    let cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.05);
    let run = EscapeRun {
        noise: NoiseModel::curvature_scaled(1.0, 2),
        max_steps: 200_000,
        trials: 40,
        seed: 3,
    };
    let medians: Vec<f64> = [0.02, 0.05, 0.1]
        .iter()
        .map(|&dl| {
            let p = make_barrier(4.0, dl, 4.0).unwrap();
            run_escape(&p, Dynamics::Adam, &cfg, &run).unwrap().median.unwrap()
        })
        .collect();
    assert!(medians.windows(2).all(|w| w[1] > w[0]), "{medians:?}");
}

#[test]
fn switch_fraction_ends_the_blend_on_schedule() {
    let spec = runner::resolve_train(&TrainSpec {
        epochs: 10,
        switch_fraction: Some(0.5),
        ..TrainSpec::default()
    })
    .unwrap();
    let Some(Schedule::Linear { rate }) = spec.optimizers[1].schedule else {
        panic!("DualAdam schedule not resolved");
    };
    let cells = runner::train_runs(&spec).unwrap();
    let alphas: Vec<f64> = cells[1].run.records.iter().map(|r| r.alpha).collect();
    // 128 training points in batches of 32: 4 steps per epoch, alpha hits 0 at step 20
    assert_eq!(dualadam::Schedule::Linear { rate }.linear_cutoff(), Some(20));
    assert!(alphas[..4].iter().all(|&a| a > 0.0), "{alphas:?}");
    assert!(alphas[4..].iter().all(|&a| a == 0.0), "{alphas:?}");
}

#[test]
fn sweep_grid_rescales_with_the_budget() {
    let spec = SweepSpec::default();
    let at_reference = sweep_grid(&spec, spec.reference_iterations);
    assert!(at_reference.iter().all(|c| c.effective == c.parameter));
    let shorter = sweep_grid(&spec, spec.reference_iterations / 10);
    let r = shorter.iter().find(|c| c.parameter == 8e-5).unwrap();
    assert!((r.effective - 8e-4).abs() < 1e-15);

    let mech = SweepSpec {
        mode: SweepMode::Mechanism,
        epochs: 100,
        ..SweepSpec::default()
    };
    let cells = sweep_grid(&mech, mech.reference_iterations * 2);
    assert_eq!(cells.len(), 6);
    let fixed: Vec<f64> = cells
        .iter()
        .filter(|c| c.mechanism == "fixed_epoch")
        .map(|c| c.effective)
        .collect();
    assert_eq!(fixed, [5.0, 15.0, 25.0]);
    let e = cells.iter().find(|c| c.parameter == 0.9).unwrap();
    assert!((e.effective - 0.9f64.sqrt()).abs() < 1e-15);
}
