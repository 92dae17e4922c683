//! Acceptance suite. Runs without the libtest harness so each criterion
//! prints its verdict line. Exits non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use milreg::experiment::{run_all_folds, Cohort, FoldOutput, Setup};
use milreg::run::metrics_header;
use milreg_core::bag::{Bag, TumorPercentage};
use milreg_core::eval::{
    average_ranks, interpretability_auc, pearson, roc_auc, spearman, Averaging,
};
use milreg_core::mil::grad::{bag_loss, bag_loss_grad};
use milreg_core::mil::{
    attention_pool, mean_pool, proxy_positive_count, softmax, weseg_percentage, weseg_proxy_labels,
    HeadConfig, Method, MilModel,
};
use milreg_core::preprocess::{estimate_from_marker, MarkerConfig, TissueConfig};
use milreg_core::rng;
use milreg_core::synth::{
    generate_cohort, generate_raster_cohort, CohortSpec, PercentageDistribution, RasterCohortSpec,
    SlideSpec,
};
use milreg_core::targets::{amplify, deamplify, AmplifySpec, NoiseSpec};
use milreg_core::train::{cases_from_bags, make_cv_folds, CaseInfo, FoldPlan};
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---- reference implementations ----

fn ref_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx.sqrt() * syy.sqrt()))
}

fn ref_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn ref_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    ref_pearson(&ref_ranks(x), &ref_ranks(y))
}

fn ref_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// round(k * n / 100), halves up, in integers.
fn ref_proxy_count(k: usize, n: usize) -> usize {
    (2 * k * n + 100) / 200
}

fn ref_proxy_labels(probs: &[f64], m: usize) -> Vec<bool> {
    (0..probs.len())
        .map(|i| {
            let ahead = (0..probs.len())
                .filter(|&j| probs[j] > probs[i] || (probs[j] == probs[i] && j < i))
                .count();
            ahead < m
        })
        .collect()
}

// ---- criteria ----

fn tied_vector(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    let coarse = r.random_bool(0.5);
    (0..n)
        .map(|_| {
            if coarse {
                r.random_range(0..6) as f64
            } else if r.random_bool(0.2) {
                0.5
            } else {
                r.random_range(-3.0..3.0)
            }
        })
        .collect()
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut r = rng::stream(1, 0);
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = r.random_range(2..=200);
        let x = tied_vector(&mut r, n);
        let y = tied_vector(&mut r, n);
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        let checks = [
            (pearson(&x, &y).ok(), ref_pearson(&x, &y)),
            (spearman(&x, &y).ok(), ref_spearman(&x, &y)),
            (roc_auc(&x, &labels).ok(), ref_auc(&x, &labels)),
        ];
        for (got, want) in checks {
            match (got, want) {
                (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                (None, None) => {}
                _ => mismatches += 1,
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && mismatches == 0 && secs < 30.0,
        format!("max abs error {worst:.2e}, definedness mismatches {mismatches}, {secs:.1} s"),
    )
}

fn criterion_2() -> Verdict {
    let mut r = rng::stream(2, 0);
    let mut worst = 0.0f64;
    let mut bad_labels = 0;
    let mut bad_pct = 0;
    for _ in 0..10_000 {
        let n = r.random_range(1..=16);
        let probs: Vec<f64> = (0..n)
            .map(|_| {
                if r.random_bool(0.2) {
                    0.5
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / total).collect();
        let sm = softmax(&scores);
        for (a, b) in sm.iter().zip(&weights) {
            worst = worst.max((a - b).abs());
        }
        let mp = mean_pool(&probs).unwrap().value();
        worst = worst.max((mp - probs.iter().sum::<f64>() / n as f64).abs());
        let ap = attention_pool(&probs, &weights).unwrap().value();
        let want: f64 = probs.iter().zip(&weights).map(|(p, w)| p * w).sum();
        worst = worst.max((ap - want).abs());

        let thr = r.random_range(0.05..0.95);
        let pct = weseg_percentage(&probs, thr).unwrap().value();
        if pct != probs.iter().filter(|&&p| p > thr).count() as f64 / n as f64 {
            bad_pct += 1;
        }
        let k = r.random_range(0..=100);
        let p = TumorPercentage::new(k as f64 / 100.0).unwrap();
        if weseg_proxy_labels(&probs, p) != ref_proxy_labels(&probs, ref_proxy_count(k, n)) {
            bad_labels += 1;
        }
    }
    let mut bad_counts = 0;
    for n in 1..=1000 {
        let probs: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        for k in 0..=100 {
            let p = TumorPercentage::new(k as f64 / 100.0).unwrap();
            let want = ref_proxy_count(k, n);
            let ones = weseg_proxy_labels(&probs, p).iter().filter(|&&l| l).count();
            if proxy_positive_count(p, n) != want || ones != want {
                bad_counts += 1;
            }
        }
    }
    verdict(
        worst <= 1e-12 && bad_labels == 0 && bad_pct == 0 && bad_counts == 0,
        format!(
            "pooling max abs error {worst:.2e}, proxy label mismatches {bad_labels}, \
             percentage mismatches {bad_pct}, proxy count mismatches {bad_counts} of 101000"
        ),
    )
}

fn random_bag(r: &mut rng::Rng, n: usize, d: usize) -> Bag {
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-1.5..1.5)).collect())
        .collect();
    let coords: Vec<(u32, u32)> = (0..n as u32).map(|i| (0, i)).collect();
    milreg_core::bag::make_bag("g", "g", feats, r.random::<f64>(), &coords).unwrap()
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let h = 1e-5;
    let mut r = rng::stream(3, 0);
    let mut worst = [0.0f64; 2];
    for (mi, method) in [Method::Abmil, Method::Clam].into_iter().enumerate() {
        for b in 0..100 {
            let n = r.random_range(4..=10);
            let d = r.random_range(2..=5);
            let cfg = HeadConfig {
                hidden: 4,
                clam_k: 2,
                clam_lambda: 0.3,
                threshold: 0.5,
            };
            let mut model = MilModel::init(method, d, &cfg, b);
            for p in model.params_mut() {
                *p = r.random_range(-0.8..0.8);
            }
            let bag = random_bag(&mut r, n, d);
            let target = bag.target();
            let mut analytic = vec![0.0; model.params().len()];
            bag_loss_grad(&model, &bag, target, &mut analytic).unwrap();
            let mut numeric = vec![0.0; analytic.len()];
            for i in 0..numeric.len() {
                let orig = model.params()[i];
                model.params_mut()[i] = orig + h;
                let up = bag_loss(&model, &bag, target).unwrap().total;
                model.params_mut()[i] = orig - h;
                let down = bag_loss(&model, &bag, target).unwrap().total;
                model.params_mut()[i] = orig;
                numeric[i] = (up - down) / (2.0 * h);
            }
            let diff: f64 = analytic
                .iter()
                .zip(&numeric)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let scale = norm(&analytic).max(norm(&numeric)).max(1e-8);
            worst[mi] = worst[mi].max(diff / scale);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        worst.iter().all(|&w| w <= 1e-4) && secs < 60.0,
        format!(
            "max relative error abmil {:.2e}, clam {:.2e}, {secs:.1} s",
            worst[0], worst[1]
        ),
    )
}

fn criterion_4() -> Verdict {
    let spec = AmplifySpec::new(5).unwrap();
    let mut r = rng::stream(4, 0);
    let mut ys: Vec<f64> = (0..10_000).map(|_| r.random::<f64>()).collect();
    ys.extend([0.0, 1.0, 1e-300, 5e-324, 1e-3, 0.5]);
    let mut worst = 0.0f64;
    let mut not_above = 0;
    for &y in &ys {
        let p = TumorPercentage::new(y).unwrap();
        let a = amplify(p, spec);
        worst = worst.max((deamplify(a, spec).value() - y).abs());
        if y > 0.0 && y < 1.0 && a.value() <= y {
            not_above += 1;
        }
    }
    let mut rank_breaks = 0;
    for _ in 0..200 {
        let n = r.random_range(2..=100);
        let preds: Vec<f64> = (0..n)
            .map(|_| {
                if r.random_bool(0.3) {
                    0.2
                } else {
                    r.random::<f64>()
                }
            })
            .collect();
        let truth: Vec<f64> = (0..n).map(|_| r.random::<f64>()).collect();
        let labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.5)).collect();
        let amp: Vec<f64> = preds
            .iter()
            .map(|&y| amplify(TumorPercentage::new(y).unwrap(), spec).value())
            .collect();
        if average_ranks(&amp) != average_ranks(&preds)
            || spearman(&amp, &truth).ok() != spearman(&preds, &truth).ok()
            || roc_auc(&amp, &labels).ok() != roc_auc(&preds, &labels).ok()
        {
            rank_breaks += 1;
        }
    }
    verdict(
        worst < 1e-9 && not_above == 0 && rank_breaks == 0,
        format!(
            "round-trip max error {worst:.2e}, amplify(y) <= y on {not_above} inputs, \
             rank metric changes {rank_breaks} of 200"
        ),
    )
}

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let spec = RasterCohortSpec {
        n_slides: 50,
        negatives_fraction: 0.0,
        percentage_distribution: PercentageDistribution::Uniform { lo: 0.05, hi: 0.6 },
        slide: SlideSpec::default(),
        patch_size: 64,
        min_foreground: 0.5,
        marker: true,
        seed: 5,
        slides_per_case: 1,
    };
    let slides = generate_raster_cohort(&spec).unwrap();
    let (tissue, marker) = (TissueConfig::default(), MarkerConfig::default());
    let mut within = 0;
    let mut worst = 0.0f64;
    for s in &slides {
        let est = estimate_from_marker(&s.raster, &tissue, &marker).unwrap();
        let err = (est.percentage.value() - s.target.value()).abs();
        worst = worst.max(err);
        if err <= 0.02 {
            within += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(
        within >= 48 && slides.len() == 50 && secs < 120.0,
        format!("{within}/50 within 0.02 (max error {worst:.4}), {secs:.1} s"),
    )
}

struct Benchmark {
    cohort: Cohort,
    plan: FoldPlan,
}

fn benchmark() -> Benchmark {
    let spec = CohortSpec {
        n_slides: 200,
        negatives_fraction: 0.0,
        percentage_distribution: PercentageDistribution::Uniform { lo: 0.0, hi: 1.0 },
        instances_per_bag: [60, 140],
        feature_dim: 32,
        separation: 2.0,
        seed: 1,
        informative_dims: 8,
        slides_per_case: 1,
    };
    let cohort = Cohort::Bags(generate_cohort(&spec).unwrap());
    let plan = make_cv_folds(&cohort.cases(), 5, 7, 4).unwrap();
    Benchmark { cohort, plan }
}

fn bench_setup(method: Method, seed: u64) -> Setup {
    let mut s = Setup::new(method);
    s.seed = seed;
    s.head.hidden = 32;
    s.head.clam_k = 8;
    s.head.clam_lambda = 0.03;
    s
}

fn cv(cohort: &Cohort, plan: &FoldPlan, setup: &Setup) -> Vec<FoldOutput> {
    run_all_folds(cohort, plan, setup)
        .into_iter()
        .map(|r| r.expect("fold failed"))
        .collect()
}

fn fold_mean(outs: &[FoldOutput], f: impl Fn(&FoldOutput) -> Option<f64>) -> f64 {
    mean(
        &outs
            .iter()
            .map(|o| f(o).expect("metric undefined"))
            .collect::<Vec<_>>(),
    )
}

const METHODS: [Method; 3] = [Method::Abmil, Method::Clam, Method::MeanPool];

fn criterion_6(runs: &[(Method, Vec<FoldOutput>, f64)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, outs, secs) in runs {
        let p = fold_mean(outs, |o| o.metrics.pearson);
        let s = fold_mean(outs, |o| o.metrics.spearman);
        ok &= p >= 0.90 && s >= 0.85 && *secs < 300.0;
        parts.push(format!("{m} pearson {p:.3} spearman {s:.3} ({secs:.0} s)"));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_7() -> Verdict {
    let mut ok = true;
    let mut small = 0usize;
    let mut positives = 0usize;
    let mut aucs: Vec<[Vec<f64>; 2]> = vec![[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for s in 0..5u64 {
        let spec = CohortSpec {
            n_slides: 200,
            negatives_fraction: 0.3,
            percentage_distribution: PercentageDistribution::SkewedLow { scale: 0.006 },
            instances_per_bag: [150, 250],
            feature_dim: 8,
            separation: 2.0,
            seed: 100 + s,
            informative_dims: 8,
            slides_per_case: 1,
        };
        let bags = generate_cohort(&spec).unwrap();
        let pos: Vec<f64> = bags
            .iter()
            .filter(|b| b.binary_label())
            .map(|b| b.target().value())
            .collect();
        positives += pos.len();
        small += pos.iter().filter(|&&t| t < 0.01).count();
        let cohort = Cohort::Bags(bags);
        let plan = make_cv_folds(&cohort.cases(), 5, s, 4).unwrap();
        for (mi, m) in [Method::Abmil, Method::Clam].into_iter().enumerate() {
            for (ai, amp) in [false, true].into_iter().enumerate() {
                let mut setup = bench_setup(m, s);
                setup.head.hidden = 16;
                if amp {
                    setup.targets.amplify = Some(AmplifySpec::new(5).unwrap());
                }
                let outs = cv(&cohort, &plan, &setup);
                aucs[mi][ai].push(fold_mean(&outs, |o| o.metrics.auc));
            }
        }
    }
    let share = small as f64 / positives as f64;
    ok &= (0.65..=0.75).contains(&share);
    let mut parts = vec![format!("positives below 0.01: {share:.3}")];
    for (mi, m) in [Method::Abmil, Method::Clam].into_iter().enumerate() {
        let plain = median(aucs[mi][0].clone());
        let amped = median(aucs[mi][1].clone());
        ok &= amped - plain >= 0.03;
        parts.push(format!(
            "{m} median AUC {plain:.3} -> {amped:.3} (delta {:+.3})",
            amped - plain
        ));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_8(b: &Benchmark, clean_seed3: &[(Method, Vec<FoldOutput>, f64)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for m in METHODS {
        let mut deltas = Vec::new();
        for (i, seed) in [3u64, 4, 5].into_iter().enumerate() {
            let clean = match clean_seed3.iter().find(|r| r.0 == m && seed == 3) {
                Some(r) => fold_mean(&r.1, |o| o.metrics.pearson),
                None => fold_mean(&cv(&b.cohort, &b.plan, &bench_setup(m, seed)), |o| {
                    o.metrics.pearson
                }),
            };
            let mut noisy = bench_setup(m, seed);
            noisy.targets.noise = Some(NoiseSpec::new(0.1, 11 + i as u64).unwrap());
            let noisy = fold_mean(&cv(&b.cohort, &b.plan, &noisy), |o| o.metrics.pearson);
            deltas.push(clean - noisy);
        }
        let d = median(deltas.clone());
        ok &= d <= 0.05;
        parts.push(format!(
            "{m} median degradation {d:+.3} (per seed {deltas:.3?})"
        ));
    }
    verdict(ok, parts.join("; "))
}

fn criterion_9(runs: &[(Method, Vec<FoldOutput>, f64)]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for (m, outs, _) in runs {
        let l = fold_mean(outs, |o| o.metrics.logits_auc);
        ok &= l >= 0.90;
        if m.uses_attention() {
            let a = fold_mean(outs, |o| o.metrics.attention_auc);
            parts.push(format!("{m} logits AUC {l:.3} attention AUC {a:.3}"));
        } else {
            parts.push(format!("{m} logits AUC {l:.3}"));
        }
    }
    let header = metrics_header();
    ok &= ["logits_auc", "attention_auc"]
        .iter()
        .all(|c| header.iter().any(|h| h == c));

    // Inverted attention: all the weight on normal patches.
    let abmil = &runs.iter().find(|r| r.0 == Method::Abmil).unwrap().1;
    let slides: Vec<(Vec<f64>, Vec<bool>)> = abmil
        .iter()
        .flat_map(|o| o.instances.iter())
        .filter_map(|s| {
            let labels = s.labels.clone()?;
            let normal = labels.iter().filter(|&&l| !l).count().max(1) as f64;
            let inverted = labels
                .iter()
                .map(|&l| if l { 0.0 } else { 1.0 / normal })
                .collect();
            Some((inverted, labels))
        })
        .collect();
    let probe = interpretability_auc(&slides, Averaging::Macro).unwrap();
    ok &= probe.auc == Some(0.0);
    parts.push(format!(
        "inversion probe AUC {:?} over {} slides",
        probe.auc, probe.slides_used
    ));
    verdict(ok, parts.join("; "))
}

fn plan_json(cases: &[CaseInfo], seed: u64) -> String {
    serde_json::to_string(&make_cv_folds(cases, 5, seed, 4).unwrap()).unwrap()
}

fn criterion_10() -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    let mut r = rng::stream(10, 0);
    let cases: Vec<CaseInfo> = (0..100)
        .map(|i| CaseInfo {
            case_id: format!("case_{i:03}"),
            n_slides: 1,
            mean_target: r.random::<f64>(),
        })
        .collect();
    for seed in 0..20 {
        let plan = make_cv_folds(&cases, 5, seed, 4).unwrap();
        let mut tested = std::collections::BTreeMap::<&str, usize>::new();
        for f in &plan.folds {
            ok &= f.test.len() == 20 && f.train.len() == 68 && f.val.len() == 12;
            for c in &f.test {
                *tested.entry(c).or_default() += 1;
            }
            let mut all: Vec<&String> = f.train.iter().chain(&f.val).chain(&f.test).collect();
            all.sort();
            all.dedup();
            ok &= all.len() == 100;
        }
        ok &= tested.len() == 100 && tested.values().all(|&v| v == 1);
    }
    notes.push("sizes 20/68/12 and test partition over 20 seeds".to_string());

    // multi-slide cases
    let spec = CohortSpec {
        n_slides: 150,
        negatives_fraction: 0.3,
        percentage_distribution: PercentageDistribution::Uniform { lo: 0.0, hi: 1.0 },
        instances_per_bag: [2, 3],
        feature_dim: 2,
        separation: 1.0,
        seed: 10,
        informative_dims: 1,
        slides_per_case: 3,
    };
    let bags = generate_cohort(&spec).unwrap();
    let multi = cases_from_bags(&bags);
    let plan = make_cv_folds(&multi, 5, 3, 4).unwrap();
    for f in 0..plan.folds.len() {
        let (tr, va, te) = plan.split(f, &bags);
        ok &= tr.len() + va.len() + te.len() == bags.len();
        let roles = |set: &[&Bag]| -> std::collections::BTreeSet<String> {
            set.iter().map(|b| b.case_id().to_string()).collect()
        };
        let (a, b, c) = (roles(&tr), roles(&va), roles(&te));
        ok &= a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c);
    }
    notes.push(format!("{} multi-slide cases never straddle", multi.len()));

    let same = plan_json(&cases, 42) == plan_json(&cases, 42);
    let differs = plan_json(&cases, 42) != plan_json(&cases, 43);
    ok &= same && differs;
    notes.push(format!("byte-identical plan json {same}"));
    verdict(ok, notes.join("; "))
}

fn criterion_11() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("config.json");
    std::fs::write(
        &cfg,
        r#"{"cohort": {"synthetic": {"n_slides": 80, "negatives_fraction": 0.3,
             "percentage_distribution": {"kind": "uniform", "lo": 0.0, "hi": 1.0},
             "instances_per_bag": [10, 30], "feature_dim": 8, "separation": 2.0, "seed": 1}},
           "method": "clam", "head": {"hidden": 8, "clam_k": 3},
           "train": {"min_epochs": 5, "max_epochs": 15},
           "targets": {"noise": {"level": 0.1, "seed": 4}},
           "cv": {"k": 5, "seed": 7}, "seed": 3}"#,
    )
    .unwrap();
    let run = |out: &Path, jobs: &str| {
        Command::new(env!("CARGO_BIN_EXE_milreg"))
            .args(["--jobs", jobs, "run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap()
            .success()
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let ran = run(&a, "1") && run(&b, "3");
    let read = |d: &Path| std::fs::read(d.join("metrics.csv")).unwrap_or_default();
    let same = ran && !read(&a).is_empty() && read(&a) == read(&b);
    verdict(
        same,
        format!("both runs succeeded {ran}, metrics.csv identical {same}"),
    )
}

fn main() {
    let start = Instant::now();
    let mut failed = Vec::new();
    let mut report = |n: usize, name: &str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        println!(
            "criterion {n:>2} [{}] {name}: {} [{:.1} s]",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail,
            t.elapsed().as_secs_f64()
        );
        if !v.pass {
            failed.push(n);
        }
    };

    report(1, "metric oracles", &mut criterion_1);
    report(2, "pooling oracles", &mut criterion_2);
    report(3, "gradient checks", &mut criterion_3);
    report(4, "target transforms", &mut criterion_4);
    report(5, "marker pipeline", &mut criterion_5);

    let b = benchmark();
    let runs: Vec<(Method, Vec<FoldOutput>, f64)> = catch_unwind(|| {
        METHODS
            .into_iter()
            .map(|m| {
                let t = Instant::now();
                let outs = cv(&b.cohort, &b.plan, &bench_setup(m, 3));
                (m, outs, t.elapsed().as_secs_f64())
            })
            .collect()
    })
    .unwrap_or_default();
    let trained = |f: &dyn Fn() -> Verdict| {
        if runs.len() == METHODS.len() {
            f()
        } else {
            verdict(false, "benchmark training failed")
        }
    };
    report(6, "end-to-end regression", &mut || {
        trained(&|| criterion_6(&runs))
    });
    report(7, "amplification", &mut criterion_7);
    report(8, "noise robustness", &mut || {
        trained(&|| criterion_8(&b, &runs))
    });
    report(9, "interpretability", &mut || {
        trained(&|| criterion_9(&runs))
    });
    report(10, "cv splitter", &mut criterion_10);
    report(11, "reproducibility", &mut criterion_11);

    println!(
        "acceptance: {} of 11 passed in {:.0} s",
        11 - failed.len(),
        start.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
