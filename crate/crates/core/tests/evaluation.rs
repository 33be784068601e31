use controstim_core::evaluation::{
    best_possible_model_ceiling, bootstrap_model_comparison, evaluate, loso_noise_ceiling, pearson_r, BootstrapOptions,
    EvaluationOptions, Measure, PredictionMatrix, ResponseMatrix,
};
use controstim_core::seed::rng_from_seed;
use controstim_core::subject_sim::{simulate_responses, SimulatedSubjectConfig};
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn random_matrix(subjects: usize, stimuli: usize, classes: usize, missing: f64, seed: u64) -> ResponseMatrix {
    let mut rng = rng_from_seed(seed);
    let mut m = ResponseMatrix::new(
        (0..subjects).map(|s| format!("s{s}")).collect(),
        (0..stimuli).map(|x| format!("x{x}")).collect(),
        (0..stimuli).map(|x| if x % 4 == 0 { "natural".into() } else { format!("pair{}", x % 3) }).collect(),
        classes,
    )
    .unwrap();
    let shared: Vec<f64> = (0..stimuli * classes).map(|_| rng.random()).collect();
    for s in 0..subjects {
        for x in 0..stimuli {
            for c in 0..classes {
                if rng.random::<f64>() < missing {
                    continue;
                }
                let v: f64 = 0.6 * shared[x * classes + c] + 0.4 * rng.random::<f64>();
                m.set(s, x, c, (v * 4.0).round() / 4.0).unwrap();
            }
        }
    }
    m
}

/// Mean correlation of each subject with the average z-scored response vector.
fn z_score_closed_form(m: &ResponseMatrix) -> f64 {
    let n = m.cells();
    let mut avg = vec![0.0; n];
    let rows: Vec<Vec<f64>> = (0..m.num_subjects()).map(|s| m.subject_row(s).iter().map(|v| v.unwrap()).collect()).collect();
    for row in &rows {
        let mean = row.iter().sum::<f64>() / n as f64;
        let sd = (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        for (a, v) in avg.iter_mut().zip(row) {
            *a += (v - mean) / sd / rows.len() as f64;
        }
    }
    let rs: Vec<f64> = rows
        .iter()
        .map(|row| pearson_r(&avg, &row.iter().map(|&v| Some(v)).collect::<Vec<_>>()).unwrap())
        .collect();
    rs.iter().sum::<f64>() / rs.len() as f64
}

#[test]
fn best_ceiling_matches_z_score_closed_form() {
    for seed in 0..20 {
        let m = random_matrix(2 + (seed as usize % 5), 12, 5, 0.0, seed);
        let ceiling = best_possible_model_ceiling(&m).unwrap();
        let oracle = z_score_closed_form(&m);
        assert!(ceiling.converged, "seed {seed}: {ceiling:?}");
        assert!((ceiling.value - oracle).abs() <= 1e-6, "seed {seed}: {} vs {oracle}", ceiling.value);
    }
}

#[test]
fn lower_ceiling_never_exceeds_upper() {
    for seed in 0..20 {
        let m = random_matrix(3 + (seed as usize % 4), 15, 4, if seed % 2 == 0 { 0.0 } else { 0.2 }, 100 + seed);
        let lower = loso_noise_ceiling(&m, false).unwrap().mean.unwrap();
        let upper = best_possible_model_ceiling(&m).unwrap().value;
        assert!(lower <= upper + 1e-9, "seed {seed}: {lower} > {upper}");
    }
}

#[test]
fn independent_subjects_have_a_null_lower_ceiling() {
    let mut rng = rng_from_seed(3);
    let mut m = ResponseMatrix::new(
        (0..10).map(|s| format!("s{s}")).collect(),
        (0..100).map(|x| format!("x{x}")).collect(),
        vec!["c".into(); 100],
        1,
    )
    .unwrap();
    for s in 0..10 {
        for x in 0..100 {
            m.set(s, x, 0, rng.random()).unwrap();
        }
    }
    let c = loso_noise_ceiling(&m, false).unwrap();
    let rs: Vec<f64> = c.per_subject.iter().map(|r| r.unwrap()).collect();
    let mean = c.mean.unwrap();
    let sd = (rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (rs.len() - 1) as f64).sqrt();
    assert!(mean.abs() <= 3.0 * sd / (rs.len() as f64).sqrt(), "{mean} {sd}");
}

#[test]
fn recalibrated_loso_is_at_least_as_good_on_average() {
    let m = random_matrix(6, 20, 5, 0.1, 77);
    let plain = loso_noise_ceiling(&m, false).unwrap().mean.unwrap();
    let recal = loso_noise_ceiling(&m, true).unwrap();
    assert!(recal.recalibration.is_some());
    assert!(recal.mean.unwrap() > plain - 0.05);
}

fn logits(stimuli: usize, classes: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let n = Normal::new(0.0, 2.0).unwrap();
    (0..stimuli * classes).map(|_| n.sample(&mut rng)).collect()
}

fn perturbed(base: &[f64], sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    let n = Normal::new(0.0, sd).unwrap();
    base.iter().map(|v| v + n.sample(&mut rng)).collect()
}

#[test]
fn evaluation_recovers_the_generating_model() {
    let (x, k) = (100, 10);
    let ids: Vec<String> = (0..x).map(|i| format!("x{i}")).collect();
    let conditions: Vec<String> = (0..x).map(|i| if i < 20 { "natural".into() } else { format!("p{}", i % 4) }).collect();
    let g = logits(x, k, 1);
    let candidates = vec![
        PredictionMatrix::new("g", ids.clone(), k, g.clone()).unwrap(),
        PredictionMatrix::new("near", ids.clone(), k, perturbed(&g, 1.5, 2)).unwrap(),
        PredictionMatrix::new("far", ids.clone(), k, perturbed(&g, 3.0, 3)).unwrap(),
        PredictionMatrix::new("noise", ids.clone(), k, logits(x, k, 4)).unwrap(),
    ];
    let sim = SimulatedSubjectConfig { generating_model: "g".into(), subjects: 20, noise_sd: 1.0, seed: 5, ..Default::default() };
    let responses = simulate_responses(&candidates[0], &conditions, &sim).unwrap();
    let options = EvaluationOptions { resamples: 2000, seed: 1, ..Default::default() };
    let report = evaluate(&candidates, &responses, &options).unwrap();
    let best = report.models.iter().max_by(|a, b| a.r.all.partial_cmp(&b.r.all).unwrap()).unwrap();
    assert_eq!(best.model, "g");
    let g_vs_noise = report.comparisons.iter().find(|c| c.model_1 == "g" && c.model_2 == "noise").unwrap();
    assert!(g_vs_noise.difference > 0.0 && g_vs_noise.p_adjusted < 0.05);
    let ceiling = report.noise_ceiling.as_ref().unwrap();
    assert!(ceiling.lower.unwrap() <= ceiling.upper.unwrap());
    for c in &report.comparisons {
        assert!(c.p_adjusted >= c.p_value);
    }
    // The mean over subjects is the documented average of per-subject values.
    let g_scores = &report.models[0];
    let mean = g_scores.per_subject.iter().map(|v| v.unwrap()).sum::<f64>() / 20.0;
    assert!((mean - g_scores.r.all.unwrap()).abs() < 1e-12);
    let table = report.to_table();
    assert!(table.contains("noise ceiling"));
}

#[test]
fn bootstrap_self_comparison_and_determinism() {
    let m = random_matrix(6, 30, 4, 0.05, 9);
    let p = logits(30, 4, 10).iter().map(|&l| controstim_core::math::sigmoid(l)).collect::<Vec<_>>();
    let names = vec!["a".to_string(), "b".to_string()];
    let options = BootstrapOptions { resamples: 500, seed: 4, measure: Measure::R };
    let same = bootstrap_model_comparison(&names, &[p.clone(), p.clone()], &m, &options).unwrap();
    assert_eq!(same[0].p_value, 1.0);
    let q: Vec<f64> = p.iter().rev().copied().collect();
    let first = bootstrap_model_comparison(&names, &[p.clone(), q.clone()], &m, &options).unwrap();
    let second = bootstrap_model_comparison(&names, &[p, q], &m, &options).unwrap();
    assert_eq!(first, second);
}

#[test]
fn recalibrated_evaluation_reports_parameters() {
    let (x, k) = (40, 5);
    let ids: Vec<String> = (0..x).map(|i| format!("x{i}")).collect();
    let g = logits(x, k, 21);
    let model = PredictionMatrix::new("g", ids, k, g).unwrap();
    let sim = SimulatedSubjectConfig { subjects: 4, noise_sd: 0.5, seed: 3, ..Default::default() };
    let responses = simulate_responses(&model, &vec!["c".to_string(); x], &sim).unwrap();
    let options = EvaluationOptions { recalibrate: true, measure: Measure::Mse, resamples: 0, ..Default::default() };
    let report = evaluate(&[model], &responses, &options).unwrap();
    let cal = report.models[0].recalibration.unwrap();
    assert!(cal.slope > 0.0 && !cal.degenerate);
    assert!(report.comparisons.is_empty());
}
