use rackcap::explain::{brute_force_shapley, tree_shap, TreeConditionalValue, BRUTE_FORCE_LIMIT};
use rackcap::matrix::Matrix;
use rackcap::model::{Family, HyperParams, ModelParams, RegressionModel};
use rackcap::rng::SplitMix64;
use rackcap::tree::{fit_cart, TreeParams};
use serde_json::Value;

fn random_data(rng: &mut SplitMix64, n: usize, p: usize) -> (Matrix, Vec<f64>) {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| (rng.uniform(0.0, 4.0) * 4.0).round() / 4.0).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r[0] * r[p - 1] + r.iter().sum::<f64>().sin() * 3.0 + rng.normal())
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn single_trees_match_the_exhaustive_oracle() {
    let mut rng = SplitMix64::new(2024);
    for case in 0..100 {
        let p = 2 + case % 7;
        let (x, y) = random_data(&mut rng, 40, p);
        let depth = 1 + case % 6;
        let tree = fit_cart(&x, &y, &TreeParams { max_depth: Some(depth), ..Default::default() }).unwrap();
        let model = RegressionModel::Tree(tree);
        let q: Vec<f64> = (0..p).map(|_| rng.uniform(-0.5, 4.5)).collect();
        let e = tree_shap(&model, &q).unwrap();
        let oracle = brute_force_shapley(&TreeConditionalValue::for_model(&model, &q).unwrap(), BRUTE_FORCE_LIMIT).unwrap();
        for j in 0..p {
            assert!((e.phi[j] - oracle[j]).abs() < 1e-9, "case {case} feature {j}: {} vs {}", e.phi[j], oracle[j]);
        }
        assert!(e.local_accuracy_gap() < 1e-9);
    }
}

#[test]
fn ensembles_match_the_exhaustive_oracle() {
    let mut rng = SplitMix64::new(7);
    for family in [Family::GradientBoosting, Family::RandomForest, Family::ExtraTrees, Family::Bagging, Family::SecondOrderBoosting] {
        let (x, y) = random_data(&mut rng, 50, 5);
        let mut hp = HyperParams::new();
        hp.insert("n_estimators".into(), Value::from(8));
        let model = ModelParams::resolve(family, &hp, 3).unwrap().fit(&x, &y).unwrap();
        for _ in 0..5 {
            let q: Vec<f64> = (0..5).map(|_| rng.uniform(0.0, 4.0)).collect();
            let e = tree_shap(&model, &q).unwrap();
            let oracle = brute_force_shapley(&TreeConditionalValue::for_model(&model, &q).unwrap(), BRUTE_FORCE_LIMIT).unwrap();
            for j in 0..5 {
                assert!((e.phi[j] - oracle[j]).abs() < 1e-9, "{family}");
            }
            assert!(e.local_accuracy_gap() < 1e-9, "{family}: {}", e.local_accuracy_gap());
        }
    }
}
