use hashcont::continuation::{ContinuationSchedule, EvalRecord};
use hashcont::pairdata::generate_synthetic;
use hashcont::pairdata::SyntheticSpec;
use hashcont::{train, TrainConfig};

const WINDOW: usize = 5;
const MIN_NON_INCREASING: f64 = 0.95;

fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    xs.windows(w).map(|s| s.iter().sum::<f64>() / w as f64).collect()
}

fn run() -> Vec<EvalRecord> {
    let data = generate_synthetic(&SyntheticSpec::cluster_benchmark(3)).unwrap();
    let config = TrainConfig {
        schedule: ContinuationSchedule::new(vec![1.0, 2.0, 4.0, 8.0], vec![30; 4], 0.0, 30).unwrap(),
        ..TrainConfig::default()
    };
    train(&data, config).unwrap().1.records
}

#[test]
fn smoothed_objective_falls_and_codes_saturate() {
    let records = run();
    let (mut steps, mut good) = (0usize, 0usize);
    for stage in 0..4 {
        let j: Vec<f64> = records.iter().filter(|r| r.stage == stage).map(|r| r.j_mean).collect();
        assert!(j.len() > WINDOW, "stage {stage} too short");
        let avg = moving_average(&j, WINDOW);
        for p in avg.windows(2) {
            steps += 1;
            good += usize::from(p[1] <= p[0]);
        }
    }
    let share = good as f64 / steps as f64;
    assert!(share >= MIN_NON_INCREASING, "{good}/{steps} windows non-increasing");

    // Saturation grows stage over stage.
    let ends: Vec<f64> = (0..4)
        .map(|s| records.iter().rfind(|r| r.stage == s).unwrap().mean_abs_g)
        .collect();
    assert!(ends.windows(2).all(|p| p[1] > p[0]), "{ends:?}");
}
