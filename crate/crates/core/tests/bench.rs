use std::collections::BTreeMap;

use tabtext::bench::{
    generate, gmm_benchmark, markov_benchmark, true_loglik, BenchError, CategoricalFeature, GaussianSpec,
    GeneratorKind, GeneratorSpec,
};
use tabtext::table::{parse_decimal, Row};

fn one_gaussian(n: usize, decimals: usize) -> GeneratorSpec {
    GeneratorSpec {
        kind: GeneratorKind::Gmm2D {
            components: vec![GaussianSpec {
                weight: 1.0,
                mean: vec![1.0, -2.0],
                cov: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            }],
            names: vec!["x".into(), "y".into()],
            decimals,
        },
        n_rows: n,
        seed: 3,
    }
}

#[test]
fn single_component_mean_and_density() {
    let spec = one_gaussian(20000, 4);
    let t = generate(&spec).unwrap();
    for (j, want) in [1.0, -2.0].into_iter().enumerate() {
        let mean = t.numeric_column(j).iter().sum::<f64>() / t.len() as f64;
        assert!((mean - want).abs() < 0.05, "feature {j} mean {mean}");
    }
    // density of the standard bivariate normal at its mean is 1/(2π)
    let at_mean = t.with_rows(vec![Row::new(vec!["1".into(), "-2".into()])]);
    let ll = true_loglik(&spec, &at_mean).unwrap();
    assert!((ll + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    // Monte-Carlo mean log-density approaches minus the entropy, ln(2πe)
    let entropy = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!((true_loglik(&spec, &t).unwrap() + entropy).abs() < 0.1);
}

#[test]
fn generation_is_deterministic() {
    let a = generate(&gmm_benchmark()).unwrap();
    assert_eq!(a, generate(&gmm_benchmark()).unwrap());
    let mut other = gmm_benchmark();
    other.seed += 1;
    assert_ne!(a.rows, generate(&other).unwrap().rows);
    assert!(a
        .rows
        .iter()
        .flat_map(|r| &r.cells)
        .all(|c| { parse_decimal(c).is_some() && c.split('.').nth(1).is_none_or(|frac| frac.len() <= 2) }));
}

#[test]
fn markov_marginals_match_the_chain() {
    let mut spec = markov_benchmark();
    spec.n_rows = 50000;
    let t = generate(&spec).unwrap();
    let GeneratorKind::MarkovCategorical { features, initial, transitions } = &spec.kind else { unreachable!() };
    // forward recursion for each feature's marginal
    let mut marginal = initial.clone();
    for j in 0..features.len() {
        if j > 0 {
            let t = &transitions[j - 1];
            marginal = (0..features[j].values.len())
                .map(|b| marginal.iter().enumerate().map(|(a, p)| p * t[a][b]).sum())
                .collect();
        }
        let mut tv = 0.0;
        for (k, v) in features[j].values.iter().enumerate() {
            let freq = t.column(j).filter(|c| c == v).count() as f64 / t.len() as f64;
            tv += 0.5 * (freq - marginal[k]).abs();
        }
        assert!(tv < 0.02, "feature {j} tv {tv}");
    }
    let joint = spec.joint().unwrap();
    let mut counts: BTreeMap<Vec<String>, usize> = BTreeMap::new();
    for r in &t.rows {
        *counts.entry(r.cells.clone()).or_default() += 1;
    }
    let tv: f64 = joint.iter().map(|(k, p)| 0.5 * (counts.get(k).copied().unwrap_or(0) as f64 / 5e4 - p).abs()).sum();
    assert!(tv < 0.02, "joint tv {tv}");
}

#[test]
fn deterministic_rules_have_zero_loglik() {
    let text = r#"{"kind":"DependentToy","n_rows":500,"seed":1,"features":[
        {"name":"size","values":["small","large"],"marginal":[1,0]},
        {"name":"shape","values":["round","square"],"parent":"size","given":{"small":[0,1],"large":[1,0]}}]}"#;
    let spec: GeneratorSpec = serde_json::from_str(text).unwrap();
    let t = generate(&spec).unwrap();
    assert!(t.rows.iter().all(|r| r.cells == ["small", "square"]));
    assert_eq!(true_loglik(&spec, &t).unwrap(), 0.0);
    // the schema keeps the declared support even for values never drawn
    assert!(t.schema.support("size").unwrap().contains("large"));
}

#[test]
fn loglik_of_a_two_state_chain_is_exact() {
    let f = |name: &str| CategoricalFeature { name: name.into(), values: vec!["on".into(), "off".into()] };
    let spec = GeneratorSpec {
        kind: GeneratorKind::MarkovCategorical {
            features: vec![f("a"), f("b")],
            initial: vec![0.25, 0.75],
            transitions: vec![vec![vec![0.5, 0.5], vec![0.1, 0.9]]],
        },
        n_rows: 10,
        seed: 0,
    };
    let t = generate(&spec).unwrap();
    let probe =
        t.with_rows(vec![Row::new(vec!["on".into(), "off".into()]), Row::new(vec!["off".into(), "off".into()])]);
    let want = ((0.25f64 * 0.5).ln() + (0.75f64 * 0.9).ln()) / 2.0;
    assert!((true_loglik(&spec, &probe).unwrap() - want).abs() < 1e-12);
}

#[test]
fn errors() {
    let spec = markov_benchmark();
    let gmm = generate(&gmm_benchmark()).unwrap();
    assert!(matches!(true_loglik(&spec, &gmm), Err(BenchError::SchemaMismatch)));
    let mut empty = spec.clone();
    empty.n_rows = 0;
    assert!(matches!(generate(&empty), Err(BenchError::InvalidSpec(_))));
    let orphan = r#"{"kind":"DependentToy","n_rows":5,"features":[
        {"name":"b","values":["r"],"parent":"a","given":{}}]}"#;
    let spec: GeneratorSpec = serde_json::from_str(orphan).unwrap();
    assert!(matches!(generate(&spec), Err(BenchError::InvalidSpec(_))));
}
