use airl_mppi::costmap::{CostmapImage, Stage};
use airl_mppi::dynamics::{BicycleModel, Control, VehicleState};
use airl_mppi::geometry::{CameraIntrinsics, CameraMount, Projector};
use airl_mppi::mppi::{receding_horizon_step, sample_perturbations, Mppi, MppiParams};

fn projector(state: &VehicleState) -> Projector {
    Projector::new(&CameraMount::default().pose_for(state), &CameraIntrinsics::default())
}

fn left_half_occupied() -> CostmapImage {
    let values = (0..128).flat_map(|_| (0..160).map(|c| if c < 80 { 1.0 } else { 0.0 })).collect();
    CostmapImage::new(160, 128, values, Stage::Binary).unwrap()
}

#[test]
fn free_space_pulls_throttle_up() {
    let model = BicycleModel::default();
    let p = MppiParams::default();
    let mppi = Mppi::new(&model, &p).unwrap();
    let map = CostmapImage::zeros(160, 128, Stage::Binary);
    let state = VehicleState::default().with_speed(2.0);
    let nominal = vec![Control::new(0.1, 0.0); p.horizon];
    let mut mean = 0.0;
    for seed in 0..100 {
        let (plan, d) = mppi.optimize(&state, &nominal, &map, &projector(&state), seed).unwrap();
        let standard_error = p.sigma_throttle / d.effective_sample_size.sqrt();
        assert!(
            plan[0].throttle >= nominal[0].throttle - 3.0 * standard_error,
            "seed {seed}: {} vs {}",
            plan[0].throttle,
            nominal[0].throttle
        );
        mean += plan[0].throttle / 100.0;
    }
    assert!(mean > nominal[0].throttle + 0.1, "{mean}");
}

#[test]
fn steers_away_from_occupied_half() {
    let model = BicycleModel::default();
    let p = MppiParams::default();
    let mppi = Mppi::new(&model, &p).unwrap();
    let map = left_half_occupied();
    let state = VehicleState::default().with_speed(5.0);
    let nominal = vec![Control::new(0.25, 0.0); p.horizon];
    let mut positive = 0;
    let mut mean = 0.0;
    for seed in 0..100 {
        let (plan, _) = mppi.optimize(&state, &nominal, &map, &projector(&state), seed).unwrap();
        if plan[0].steering > 0.0 {
            positive += 1;
        }
        mean += plan[0].steering / 100.0;
    }
    // one-sided sign test at about 1e-3
    assert!(positive >= 65, "{positive}/100 to the right");
    assert!(mean > 0.0);
}

#[test]
fn weighted_average_matches_recomputation() {
    let model = BicycleModel::default();
    let p = MppiParams {
        iterations: 1,
        num_samples: 200,
        ..MppiParams::default()
    };
    let mppi = Mppi::new(&model, &p).unwrap();
    let map = left_half_occupied();
    let state = VehicleState::default().with_speed(5.0);
    let proj = projector(&state);
    let nominal = vec![Control::new(0.25, 0.0); p.horizon];
    for seed in 0..5 {
        let (plan, diagnostics) = mppi.optimize(&state, &nominal, &map, &proj, seed).unwrap();
        let noise = sample_perturbations(seed, 0, &p);
        let rollouts: Vec<_> = noise.iter().map(|e| mppi.evaluate(&state, &nominal, e, &map, &proj).unwrap()).collect();
        let min = rollouts.iter().map(|r| r.total_cost).fold(f64::INFINITY, f64::min);
        let raw: Vec<f64> = rollouts.iter().map(|r| (-(r.total_cost - min) / p.lambda).exp()).collect();
        let total: f64 = raw.iter().sum();
        for t in 0..p.horizon {
            let throttle: f64 = raw.iter().zip(&rollouts).map(|(w, r)| w * r.controls[t].throttle).sum::<f64>() / total;
            let steering: f64 = raw.iter().zip(&rollouts).map(|(w, r)| w * r.controls[t].steering).sum::<f64>() / total;
            assert!((plan[t].throttle - throttle).abs() <= 1e-9);
            assert!((plan[t].steering - steering).abs() <= 1e-9);
        }
        let ess = total * total / raw.iter().map(|w| w * w).sum::<f64>();
        assert!((diagnostics.effective_sample_size - ess).abs() <= 1e-9 * ess);
        assert_eq!(diagnostics.min_cost, min);
    }
}

#[test]
fn optimize_is_repeatable() {
    let model = BicycleModel::default();
    let p = MppiParams {
        num_samples: 300,
        ..MppiParams::default()
    };
    let mppi = Mppi::new(&model, &p).unwrap();
    let map = left_half_occupied();
    let state = VehicleState::at(1.0, 2.0, 0.3).with_speed(3.0);
    let nominal = vec![Control::new(0.5, -0.2); p.horizon];
    let a = mppi.optimize(&state, &nominal, &map, &projector(&state), 7).unwrap();
    let b = mppi.optimize(&state, &nominal, &map, &projector(&state), 7).unwrap();
    assert_eq!(a, b);
    let c = mppi.optimize(&state, &nominal, &map, &projector(&state), 8).unwrap();
    assert_ne!(a.0, c.0);
}

#[test]
fn horizon_shift_converges_to_last_entry() {
    let seq: Vec<Control> = (0..6).map(|i| Control::new(i as f64 / 10.0, -(i as f64) / 10.0)).collect();
    let mut shifted = seq.clone();
    for _ in 0..seq.len() {
        shifted = receding_horizon_step(&shifted);
    }
    assert_eq!(shifted, vec![seq[5]; 6]);
}
