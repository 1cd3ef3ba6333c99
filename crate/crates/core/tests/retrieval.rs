mod common;

use std::collections::BTreeSet;
use std::fs;

use crow_core::evaluator::{
    average_precision_ids, holidays_groundtruth, parse_groundtruth, read_holidays,
};
use crow_core::{
    build_index, evaluate, query, query_expand, CrowError, Descriptor, GroundTruth, Index, Stage,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

fn unit_descriptor(id: String, v: Vec<f64>) -> Descriptor {
    Descriptor::new(id, common::unit_vector(v), Stage::Final)
}

fn random_unit(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    common::unit_vector((0..dim).map(|_| StandardNormal.sample(rng)).collect())
}

fn gt(query: &str, good: &[&str], junk: &[&str]) -> GroundTruth {
    GroundTruth {
        query_id: query.into(),
        image_id: query.into(),
        bbox: None,
        good: good.iter().map(|s| s.to_string()).collect(),
        ok: BTreeSet::new(),
        junk: junk.iter().map(|s| s.to_string()).collect(),
    }
}

fn clustered(
    rng: &mut StdRng,
    clusters: usize,
    per: usize,
    dim: usize,
    spread: f64,
) -> Vec<Descriptor> {
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| random_unit(rng, dim)).collect();
    let mut out = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for n in 0..per {
            let v = center
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(rng);
                    x + spread * z
                })
                .collect();
            out.push(unit_descriptor(format!("k{c}_{n}"), v));
        }
    }
    out
}

fn cluster_gt(ds: &[Descriptor]) -> Vec<GroundTruth> {
    ds.iter()
        .map(|q| {
            let prefix = q.id.split('_').next().unwrap();
            GroundTruth {
                query_id: q.id.clone(),
                image_id: q.id.clone(),
                bbox: None,
                good: ds
                    .iter()
                    .filter(|d| d.id.split('_').next() == Some(prefix) && d.id != q.id)
                    .map(|d| d.id.clone())
                    .collect(),
                ok: BTreeSet::new(),
                junk: BTreeSet::from([q.id.clone()]),
            }
        })
        .collect()
}

#[test]
fn ranking_matches_brute_force() {
    let mut rng = StdRng::seed_from_u64(50);
    let vectors: Vec<Vec<f64>> = (0..50).map(|_| random_unit(&mut rng, 12)).collect();
    let ds: Vec<Descriptor> = vectors
        .iter()
        .enumerate()
        .map(|(n, v)| Descriptor::new(format!("v{n}"), v.clone(), Stage::Final))
        .collect();
    let idx = build_index(&ds).unwrap();
    for q in ds.iter().take(10) {
        let got: Vec<String> = query(&idx, q, None)
            .unwrap()
            .ids()
            .map(String::from)
            .collect();
        let expected: Vec<String> = common::brute_ranking(&vectors, &q.values)
            .into_iter()
            .map(|p| format!("v{p}"))
            .collect();
        assert_eq!(got, expected);
        assert_eq!(got[0], q.id);
    }
}

#[test]
fn dot_product_order_equals_euclidean_order() {
    let mut rng = StdRng::seed_from_u64(51);
    let vectors: Vec<Vec<f64>> = (0..40).map(|_| random_unit(&mut rng, 8)).collect();
    let ds: Vec<Descriptor> = vectors
        .iter()
        .enumerate()
        .map(|(n, v)| Descriptor::new(format!("v{n}"), v.clone(), Stage::Final))
        .collect();
    let idx = build_index(&ds).unwrap();
    let q = Descriptor::new("q", random_unit(&mut rng, 8), Stage::Final);
    let got: Vec<String> = query(&idx, &q, None)
        .unwrap()
        .ids()
        .map(String::from)
        .collect();
    let mut by_distance: Vec<(f64, usize)> = vectors
        .iter()
        .enumerate()
        .map(|(n, v)| {
            (
                v.iter().zip(&q.values).map(|(a, b)| (a - b).powi(2)).sum(),
                n,
            )
        })
        .collect();
    by_distance.sort_by(|a, b| a.0.total_cmp(&b.0));
    let expected: Vec<String> = by_distance.iter().map(|(_, n)| format!("v{n}")).collect();
    assert_eq!(got, expected);
}

#[test]
fn equal_scores_keep_insertion_order() {
    let ds: Vec<Descriptor> = ["b", "a", "c"]
        .iter()
        .map(|id| Descriptor::new(*id, vec![1.0, 0.0], Stage::Final))
        .collect();
    let idx = build_index(&ds).unwrap();
    let q = Descriptor::new("q", vec![1.0, 0.0], Stage::Final);
    let ids: Vec<String> = query(&idx, &q, Some(2))
        .unwrap()
        .ids()
        .map(String::from)
        .collect();
    assert_eq!(ids, vec!["b", "a"]);
}

#[test]
fn expansion_depth_is_clamped_and_validated() {
    let ds = vec![
        Descriptor::new("a", vec![1.0, 0.0], Stage::Final),
        Descriptor::new("b", vec![0.0, 1.0], Stage::Final),
    ];
    let idx = build_index(&ds).unwrap();
    let r = query_expand(&idx, &ds[0], 10, None).unwrap();
    let e = r.expansion.unwrap();
    assert_eq!((e.requested, e.used, e.clamped()), (10, 2, true));
    assert!(matches!(
        query_expand(&idx, &ds[0], 0, None),
        Err(CrowError::Parameter(_))
    ));
    assert!(query_expand(&Index::default(), &ds[0], 3, None).is_err());
}

#[test]
fn non_unit_and_raw_inputs_are_rejected() {
    assert!(build_index(&[Descriptor::new("a", vec![2.0, 0.0], Stage::Final)]).is_err());
    assert!(build_index(&[Descriptor::new("a", vec![1.0, 0.0], Stage::Raw)]).is_err());
    let idx = build_index(&[Descriptor::new("a", vec![1.0, 0.0], Stage::Final)]).unwrap();
    assert!(query(
        &idx,
        &Descriptor::new("q", vec![1.0, 0.0, 0.0], Stage::Final),
        None
    )
    .is_err());
    assert!(query(
        &idx,
        &Descriptor::new("q", vec![0.0, 0.0], Stage::Final),
        None
    )
    .is_err());
}

#[test]
fn expansion_helps_on_clustered_data() {
    let mut rng = StdRng::seed_from_u64(52);
    let ds = clustered(&mut rng, 6, 15, 16, 0.35);
    let idx = build_index(&ds).unwrap();
    let gts = cluster_gt(&ds);
    let plain = evaluate(&idx, &ds, &gts, None).unwrap().map;
    let expanded = evaluate(&idx, &ds, &gts, Some(5)).unwrap().map;
    assert!(expanded >= plain, "qe {expanded} < plain {plain}");
}

#[test]
fn separable_clusters_score_one() {
    let mut rng = StdRng::seed_from_u64(53);
    let ds = clustered(&mut rng, 4, 10, 32, 0.01);
    let idx = build_index(&ds).unwrap();
    let report = evaluate(&idx, &ds, &cluster_gt(&ds), None).unwrap();
    assert!((report.map - 1.0).abs() < 1e-12);
}

#[test]
fn random_rankings_average_near_positive_rate() {
    let mut rng = StdRng::seed_from_u64(54);
    let ids: Vec<String> = (0..100).map(|n| format!("i{n}")).collect();
    let good: Vec<&str> = ids[..20].iter().map(String::as_str).collect();
    let g = gt("q", &good, &[]);
    let trials = 2000;
    let mut total = 0.0;
    for _ in 0..trials {
        let mut order = ids.clone();
        order.shuffle(&mut rng);
        total += average_precision_ids(order.iter().map(String::as_str), &g);
    }
    let mean = total / trials as f64;
    assert!((mean - 0.2).abs() < 0.05, "random mAP {mean}");
}

#[test]
fn missing_query_descriptor_is_an_error() {
    let ds = vec![Descriptor::new("a", vec![1.0, 0.0], Stage::Final)];
    let idx = build_index(&ds).unwrap();
    let err = evaluate(&idx, &ds, &[gt("nope", &["a"], &[])], None).unwrap_err();
    assert!(matches!(err, CrowError::MissingQueries(ref q) if q == &vec!["nope".to_string()]));
}

#[test]
fn map_is_independent_of_query_order() {
    let mut rng = StdRng::seed_from_u64(55);
    let ds = clustered(&mut rng, 3, 8, 8, 0.6);
    let idx = build_index(&ds).unwrap();
    let mut gts = cluster_gt(&ds);
    let a = evaluate(&idx, &ds, &gts, None).unwrap();
    gts.shuffle(&mut rng);
    let b = evaluate(&idx, &ds, &gts, None).unwrap();
    assert_eq!(a.map, b.map);
    assert_eq!(a.per_query, b.per_query);
}

#[test]
fn oxford_groundtruth_directory() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("all_souls_1_query.txt"),
        "oxc1_all_souls_000013 136.5 34.1 648.5 955.7\n",
    )
    .unwrap();
    fs::write(
        p.join("all_souls_1_good.txt"),
        "all_souls_000026\nall_souls_000040\n",
    )
    .unwrap();
    fs::write(p.join("all_souls_1_ok.txt"), "all_souls_000051\n").unwrap();
    fs::write(p.join("all_souls_1_junk.txt"), "all_souls_000013\n").unwrap();
    fs::write(
        p.join("radcliffe_2_query.txt"),
        "radcliffe_000001 0 0 10 10\n",
    )
    .unwrap();
    fs::write(p.join("radcliffe_2_good.txt"), "radcliffe_000002\n").unwrap();
    fs::write(p.join("radcliffe_2_ok.txt"), "").unwrap();
    fs::write(p.join("radcliffe_2_junk.txt"), "").unwrap();

    let gts = parse_groundtruth(p).unwrap();
    assert_eq!(gts.len(), 2);
    assert_eq!(gts[0].query_id, "all_souls_1");
    assert_eq!(gts[0].image_id, "all_souls_000013");
    assert_eq!(gts[0].positive_count(), 3);
    assert_eq!(gts[0].bbox.unwrap().x2, 648.5);

    let order = [
        "all_souls_000013",
        "x",
        "all_souls_000026",
        "all_souls_000051",
        "all_souls_000040",
    ];
    let ap = average_precision_ids(order, &gts[0]);
    let ranking: Vec<String> = order.iter().map(|s| s.to_string()).collect();
    let positives: BTreeSet<String> = gts[0].good.union(&gts[0].ok).cloned().collect();
    assert!((ap - common::ap_oracle(&ranking, &positives, &gts[0].junk)).abs() < 1e-12);

    fs::remove_file(p.join("radcliffe_2_ok.txt")).unwrap();
    assert!(matches!(
        parse_groundtruth(p),
        Err(CrowError::MissingFile(_))
    ));
    fs::write(p.join("radcliffe_2_ok.txt"), "").unwrap();
    fs::write(
        p.join("radcliffe_2_query.txt"),
        "radcliffe_000001 0 0 ten 10\n",
    )
    .unwrap();
    assert!(matches!(parse_groundtruth(p), Err(CrowError::Parse { .. })));
}

#[test]
fn holidays_groups_by_hundreds() {
    let gts = holidays_groundtruth(&[
        "100000.jpg",
        "100001.jpg",
        "100002.jpg",
        "100100.jpg",
        "100101.jpg",
        "100200.jpg",
    ])
    .unwrap();
    assert_eq!(gts.len(), 2);
    assert_eq!(gts[0].query_id, "100000");
    assert_eq!(
        gts[0].good,
        BTreeSet::from(["100001".to_string(), "100002".to_string()])
    );
    assert!(gts[0].junk.contains("100000"));
    assert!(holidays_groundtruth(&["abc.jpg"]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("list.txt");
    fs::write(&list, "100000.jpg\n100001.jpg\n").unwrap();
    assert_eq!(read_holidays(&list).unwrap().len(), 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]
    #[test]
    fn ap_matches_position_formula(seed in any::<u64>(), n in 1usize..40) {
        let mut rng = StdRng::seed_from_u64(seed);
        let ids: Vec<String> = (0..n).map(|i| format!("i{i}")).collect();
        let mut good = BTreeSet::new();
        let mut junk = BTreeSet::new();
        for id in &ids {
            match rng.gen_range(0..4) {
                0 => { good.insert(id.clone()); }
                1 => { junk.insert(id.clone()); }
                _ => {}
            }
        }
        prop_assume!(!good.is_empty());
        let mut ranking = ids.clone();
        ranking.shuffle(&mut rng);
        let g = GroundTruth {
            query_id: "q".into(),
            image_id: "q".into(),
            bbox: None,
            good: good.clone(),
            ok: BTreeSet::new(),
            junk: junk.clone(),
        };
        let ap = average_precision_ids(ranking.iter().map(String::as_str), &g);
        prop_assert!((ap - common::ap_oracle(&ranking, &good, &junk)).abs() < 1e-12);
        let without_junk: Vec<&str> = ranking.iter().map(String::as_str).filter(|id| !junk.contains(*id)).collect();
        prop_assert!((ap - average_precision_ids(without_junk, &g)).abs() < 1e-15);
    }
}
