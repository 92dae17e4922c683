use milreg::config::ExperimentConfig;
use milreg::experiment::run_fold;
use milreg::run::{fold_plan, load_cohort};
use milreg_core::bag::{make_bag, Bag};
use milreg_core::mil::{HeadConfig, Method, MilModel};
use milreg_core::rng;
use milreg_core::synth::{generate_cohort, CohortSpec, PercentageDistribution};
use milreg_core::targets::TargetTransform;
use milreg_core::train::{cases_from_bags, make_cv_folds, train_head, TrainConfig};
use rand::Rng;

fn constant_bags(n: usize, target: f64, seed: u64) -> Vec<Bag> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|i| {
            let len = r.random_range(3..12);
            let feats: Vec<Vec<f64>> = (0..len)
                .map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect();
            let coords: Vec<(u32, u32)> = (0..len as u32).map(|j| (0, j)).collect();
            let id = format!("b{i}");
            make_bag(&id, &id, feats, target, &coords).unwrap()
        })
        .collect()
}

#[test]
fn meanpool_learns_a_constant() {
    let train = constant_bags(40, 0.5, 1);
    let val = constant_bags(10, 0.5, 2);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        min_epochs: 10,
        max_epochs: 100,
        patience: 10,
        ..Default::default()
    };
    let init = MilModel::init(Method::MeanPool, 6, &HeadConfig::default(), 3);
    let out = train_head(&train, &val, init, &cfg, &TargetTransform::default(), 4).unwrap();
    let best = out
        .history
        .epochs
        .iter()
        .find(|e| e.epoch == out.best_epoch)
        .unwrap();
    assert!(best.val_loss < 1e-3, "{}", best.val_loss);
}

#[test]
fn single_epoch_when_bounds_collapse() {
    let train = constant_bags(8, 0.3, 1);
    let val = constant_bags(3, 0.3, 2);
    let cfg = TrainConfig {
        min_epochs: 1,
        max_epochs: 1,
        patience: 0,
        ..Default::default()
    };
    for method in [Method::MeanPool, Method::Abmil, Method::Clam] {
        let init = MilModel::init(method, 6, &HeadConfig::default(), 3);
        let out = train_head(&train, &val, init, &cfg, &TargetTransform::default(), 4).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
    }
}

#[test]
fn folds_are_stratified_by_target() {
    let spec = CohortSpec {
        n_slides: 200,
        negatives_fraction: 0.3,
        percentage_distribution: PercentageDistribution::Uniform { lo: 0.0, hi: 1.0 },
        instances_per_bag: [2, 3],
        feature_dim: 2,
        separation: 1.0,
        seed: 9,
        informative_dims: 1,
        slides_per_case: 1,
    };
    let bags = generate_cohort(&spec).unwrap();
    let cases = cases_from_bags(&bags);
    let global = cases.iter().map(|c| c.mean_target).sum::<f64>() / cases.len() as f64;
    for seed in 0..5 {
        let plan = make_cv_folds(&cases, 5, seed, 4).unwrap();
        for (i, f) in plan.folds.iter().enumerate() {
            let ts: Vec<f64> = cases
                .iter()
                .filter(|c| f.test.contains(&c.case_id))
                .map(|c| c.mean_target)
                .collect();
            let mean = ts.iter().sum::<f64>() / ts.len() as f64;
            assert!(
                (mean - global).abs() <= 0.05,
                "seed {seed} fold {i}: {mean} vs {global}"
            );
        }
    }
}

#[test]
fn weseg_localizes_tumor_patches() {
    let cfg = ExperimentConfig::from_json(
        r#"{"cohort": {"raster": {"spec": {"n_slides": 30, "negatives_fraction": 0.2,
              "percentage_distribution": {"kind": "uniform", "lo": 0.05, "hi": 0.6},
              "slide": {"width": 256, "height": 256, "tissue_blobs": 3},
              "patch_size": 32, "seed": 5}}},
            "method": "weseg", "weseg": {"max_epochs": 10},
            "cv": {"k": 3, "seed": 1}, "seed": 2}"#,
    )
    .unwrap();
    let cohort = load_cohort(&cfg).unwrap();
    let plan = fold_plan(&cfg, &cohort).unwrap();
    let out = run_fold(&cohort, &plan, 0, &cfg.setup().unwrap()).unwrap();
    let auc = out.metrics.logits_auc.unwrap();
    assert!(auc >= 0.8, "patch AUC {auc}");
    assert!(out.threshold.is_some());
    assert!(out.metrics.attention_auc.is_none());
}
