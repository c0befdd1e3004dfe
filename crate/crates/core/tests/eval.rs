use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use tabtext::eval::linear::{LinearOptions, LogisticRegression};
use tabtext::eval::{
    dcr, dcr_histogram, discriminator, joint_histogram, likelihood_fitness, mle, DiscriminatorOptions, EvalError,
    Matrix, MleOptions,
};
use tabtext::gmm::{Component, Gmm};
use tabtext::table::{parse_decimal, Row, Table};

fn table(names: &[&str], rows: &[&[&str]]) -> Table {
    Table::infer(
        names.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| Row::new(r.iter().map(|c| c.to_string()).collect())).collect(),
    )
    .unwrap()
}

/// Mixed table: two numeric features and a categorical one tied to them.
fn mixed(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..10.0);
            let b: f64 = rng.gen_range(0.0..10.0);
            let noisy = a + rng.gen_range(-1.5..1.5);
            let label = if noisy > b { "high" } else { "low" };
            let color = ["red", "blue", "green"][rng.gen_range(0..3)];
            Row::new(vec![format!("{a:.2}"), format!("{b:.2}"), color.into(), label.into()])
        })
        .collect();
    Table::infer(vec!["a".into(), "b".into(), "color".into(), "label".into()], rows).unwrap()
}

#[test]
fn dcr_worked_examples() {
    let schema_rows: &[&[&str]] = &[&["1", "x"], &["4", "y"]];
    let train = table(&["n", "c"], schema_rows);
    let syn = train.with_rows(vec![
        Row::new(vec!["1".into(), "x".into()]),
        Row::new(vec!["2".into(), "x".into()]),
        Row::new(vec!["7".into(), "x".into()]),
    ]);
    let r = dcr(&syn, &train, false).unwrap();
    // 7,x: |7-1|+0 = 6 versus |7-4|+1 = 4
    assert_eq!(r.distances, [0.0, 1.0, 4.0]);
    assert_eq!((r.min, r.median), (0.0, 1.0));
    assert!((r.mean - 5.0 / 3.0).abs() < 1e-12);
    assert!((r.zero_fraction - 1.0 / 3.0).abs() < 1e-12);
    let norm = dcr(&syn, &train, true).unwrap();
    assert_eq!(norm.distances, [0.0, 1.0 / 3.0, 2.0]);
}

#[test]
fn dcr_matches_a_naive_double_loop() {
    let train = mixed(200, 1);
    let syn = mixed(150, 2);
    let got = dcr(&syn, &train, false).unwrap();
    for (i, s) in syn.rows.iter().enumerate() {
        let want = train
            .rows
            .iter()
            .map(|t| {
                s.cells.iter().zip(&t.cells).enumerate().fold(0.0, |acc, (j, (a, b))| {
                    acc + if j < 2 {
                        (parse_decimal(a).unwrap() - parse_decimal(b).unwrap()).abs()
                    } else {
                        f64::from(u8::from(a != b))
                    }
                })
            })
            .fold(f64::INFINITY, f64::min);
        assert!((got.distances[i] - want).abs() < 1e-9, "row {i}");
    }
    let self_dcr = dcr(&train, &train, true).unwrap();
    assert!(self_dcr.distances.iter().all(|&d| d == 0.0));
    assert_eq!(self_dcr.zero_fraction, 1.0);
}

#[test]
fn dcr_histogram_counts_everything() {
    let h = dcr_histogram(&[0.0, 0.5, 1.0, 2.0, 2.0], 4);
    assert_eq!(h.iter().map(|b| b.2).collect::<Vec<_>>(), [1, 1, 1, 2]);
    assert_eq!(h[3].1, 2.0);
}

#[test]
fn dcr_rejects_mismatched_schemas() {
    let a = table(&["n"], &[&["1"]]);
    let b = table(&["m"], &[&["1"]]);
    assert!(matches!(dcr(&a, &b, false), Err(EvalError::SchemaMismatch)));
}

fn halves(t: &Table) -> (Table, Table) {
    let idx: Vec<usize> = (0..t.len()).collect();
    let (a, b) = idx.split_at(t.len() / 2);
    (t.select(a), t.select(b))
}

fn small_grid() -> DiscriminatorOptions {
    DiscriminatorOptions { depths: vec![4, 8], trees: vec![20, 40], folds: 3 }
}

#[test]
fn discriminator_cannot_split_iid_halves() {
    let all = mixed(1200, 3);
    let (real, syn) = halves(&all);
    let (real_tr, real_te) = halves(&real);
    let (syn_tr, syn_te) = halves(&syn);
    let r = discriminator(&real_tr, &syn_tr, &real_te, &syn_te, &[0, 1, 2], &small_grid()).unwrap();
    assert!((0.4..=0.6).contains(&r.accuracy.mean), "accuracy {}", r.accuracy.mean);
    assert_eq!(r.chosen.len(), 3);
}

#[test]
fn discriminator_separates_disjoint_ranges() {
    let real = mixed(400, 4);
    let shifted = real.with_rows(
        real.rows
            .iter()
            .map(|r| {
                let a = parse_decimal(&r.cells[0]).unwrap() + 20.0;
                Row::new(vec![format!("{a:.2}"), r.cells[1].clone(), r.cells[2].clone(), r.cells[3].clone()])
            })
            .collect(),
    );
    let (real_tr, real_te) = halves(&real);
    let (syn_tr, syn_te) = halves(&shifted);
    let r = discriminator(&real_tr, &syn_tr, &real_te, &syn_te, &[0], &small_grid()).unwrap();
    assert!(r.accuracy.mean > 0.95);
}

#[test]
fn discriminator_needs_rows() {
    let t = mixed(10, 5);
    assert!(matches!(
        discriminator(&t, &t, &t, &t, &[0], &small_grid()),
        Err(EvalError::TooFewRows { needed: 20, .. })
    ));
}

fn fast_mle() -> MleOptions {
    MleOptions { forest_trees: 20, ..MleOptions::default() }
}

#[test]
fn mle_on_real_rows_matches_the_real_baseline() {
    let train = mixed(600, 6);
    let test = mixed(300, 7);
    let r = mle(&train, &train, &test, "label", &[0, 1, 2, 3, 4], &fast_mle()).unwrap();
    for model in ["linear", "decision_tree", "random_forest"] {
        let s = r.synthetic.metric(model, "accuracy").unwrap();
        let b = r.real.metric(model, "accuracy").unwrap();
        assert!((s.mean - b.mean).abs() <= 0.01, "{model}: {} vs {}", s.mean, b.mean);
        assert_eq!(s.values.len(), 5);
    }
    // the label is learnable from a and b
    assert!(r.real.metric("linear", "accuracy").unwrap().mean > 0.8);
    assert!(r.real.metric("random_forest", "roc_auc").unwrap().mean > 0.85);
}

#[test]
fn mle_on_a_coin_flip_target_is_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut scramble = |t: Table| {
        let rows = t
            .rows
            .iter()
            .map(|r| {
                let mut cells = r.cells.clone();
                cells[3] = if rng.gen_bool(0.5) { "high" } else { "low" }.into();
                Row::new(cells)
            })
            .collect();
        t.with_rows(rows)
    };
    let train = scramble(mixed(600, 8));
    let test = scramble(mixed(400, 9));
    let r = mle(&train, &train, &test, "label", &[0, 1], &fast_mle()).unwrap();
    for model in ["linear", "decision_tree", "random_forest"] {
        let acc = r.synthetic.metric(model, "accuracy").unwrap().mean;
        assert!((acc - 0.5).abs() < 0.1, "{model} accuracy {acc}");
    }
}

#[test]
fn mle_regression_and_errors() {
    let train = mixed(300, 11);
    let test = mixed(100, 12);
    let r = mle(&train, &train, &test, "a", &[0], &fast_mle()).unwrap();
    assert_eq!(r.real.task, "regression");
    // predicting the mean of U(0,10) would give about 8.3
    assert!(r.real.metric("random_forest", "mse").unwrap().mean < 8.0);
    let single = train.with_rows(
        train
            .rows
            .iter()
            .map(|r| Row::new(vec![r.cells[0].clone(), r.cells[1].clone(), r.cells[2].clone(), "low".into()]))
            .collect(),
    );
    assert!(matches!(mle(&train, &single, &test, "label", &[0], &fast_mle()), Err(EvalError::SingleClassTarget(_))));
    assert!(matches!(mle(&train, &train, &test, "nope", &[0], &fast_mle()), Err(EvalError::UnknownFeature(_))));
}

fn gmm_table(gmm: &Gmm, n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n).map(|_| Row::new(gmm.sample(&mut rng).iter().map(|v| format!("{v:.4}")).collect())).collect();
    Table::infer(vec!["x".into(), "y".into()], rows).unwrap()
}

fn two_blobs() -> Gmm {
    Gmm {
        dim: 2,
        components: vec![
            Component { weight: 0.6, mean: vec![-2.0, 0.0], cov: vec![1.0, 0.3, 0.3, 1.0] },
            Component { weight: 0.4, mean: vec![3.0, 2.0], cov: vec![0.5, 0.0, 0.0, 0.8] },
        ],
    }
}

#[test]
fn likelihood_identity_and_perfect_sampler() {
    let g = two_blobs();
    let train = gmm_table(&g, 2000, 1);
    let test = gmm_table(&g, 1000, 2);
    let same = likelihood_fitness(&train, &train, &train, 2, 0).unwrap();
    assert_eq!(same.l_syn, same.l_test);
    let identity = likelihood_fitness(&train, &test, &train, 2, 0).unwrap();
    let fresh = likelihood_fitness(&train, &test, &gmm_table(&g, 2000, 3), 2, 0).unwrap();
    assert!((fresh.l_test - identity.l_test).abs() < 0.15, "{} vs {}", fresh.l_test, identity.l_test);
    // a sampler that collapses to one blob is punished on l_test
    let one_blob = Gmm { dim: 2, components: vec![Component { weight: 1.0, ..g.components[0].clone() }] };
    let collapsed = likelihood_fitness(&train, &test, &gmm_table(&one_blob, 2000, 4), 2, 0).unwrap();
    assert!(collapsed.l_test < identity.l_test - 1.0);
}

#[test]
fn likelihood_rejects_categorical_features() {
    let t = mixed(50, 13);
    assert!(matches!(likelihood_fitness(&t, &t, &t, 2, 0), Err(EvalError::NonNumericSchema(_))));
}

#[test]
fn joint_histogram_single_point_and_grid() {
    let one = table(&["x", "y"], &[&["2", "3"]]);
    let h = joint_histogram(&[&one], "x", "y", 4).unwrap();
    assert_eq!(h[0].total(), 1);
    assert_eq!(h[0].x_edges.first().copied(), Some(1.5));

    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Row> = (0..20000)
        .map(|_| Row::new(vec![format!("{:.4}", normal.sample(&mut rng)), format!("{:.4}", rng.gen_range(0.0..1.0))]))
        .collect();
    let t = Table::infer(vec!["x".into(), "y".into()], rows).unwrap();
    let h = &joint_histogram(&[&t, &t], "x", "y", 10).unwrap()[0];
    assert_eq!(h.total(), 20000);
    // y is uniform: every y band holds about a tenth
    for row in &h.counts {
        let band: usize = row.iter().sum();
        assert!((band as f64 / 20000.0 - 0.1).abs() < 0.01);
    }
    let mut csv = Vec::new();
    h.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 11);
    assert!(matches!(joint_histogram(&[&t], "x", "z", 3), Err(EvalError::UnknownFeature(_))));
}

#[test]
fn logistic_regression_separates_separable_data() {
    let rows: Vec<Vec<f64>> =
        (0..100).filter(|i| !(45..55).contains(i)).map(|i| vec![i as f64, (i % 7) as f64]).collect();
    let labels: Vec<usize> = rows.iter().map(|r| usize::from(r[0] >= 50.0)).collect();
    let model = LogisticRegression::fit(&Matrix::from_rows(&rows), &labels, 2, LinearOptions::default());
    for (r, &l) in rows.iter().zip(&labels) {
        let p = model.predict_proba(r);
        assert_eq!(usize::from(p[1] > p[0]), l);
    }
}
