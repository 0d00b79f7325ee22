mod common;

use metriscale::dimensions::{DimensionEstimate, OrientedBox};
use metriscale::metric_tree::{
    lookup, parse_repository, repository_to_json, CategoryPath, Dim, FitOptions,
};
use metriscale::scale::{build_measured_objects, ObjectDimensions};
use metriscale::Error;
use nalgebra::Vector3;

use common::fixture;

#[test]
fn fixture_has_ten_leaves_with_matching_priors() {
    let root = fixture();
    let leaves = root.leaves_with_prior();
    assert!(leaves.len() >= 10, "{} leaves", leaves.len());
    for (path, node) in &leaves {
        let g = node.prior().unwrap();
        assert_eq!(g.dims(), node.dim_mask().len(), "{path}");
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn lookup_walks_children() {
    let root = fixture();
    assert_eq!(lookup(&root, &["furniture", "chair"]).unwrap().name(), "chair");
    let furniture = lookup(&root, &["furniture"]).unwrap();
    assert!(!furniture.is_leaf());
    let sum: usize = furniture.children().iter().map(|c| c.sample_count()).sum();
    assert_eq!(furniture.sample_count(), sum + furniture.own_samples().len());
    assert!(matches!(lookup::<&str>(&root, &[]), Err(Error::EmptyPath)));
    assert!(matches!(lookup(&root, &["furniture", "throne"]), Err(Error::UnknownCategory(_))));
}

#[test]
fn fitted_repository_round_trips() {
    let root = fixture();
    let text = repository_to_json(&root).unwrap();
    let again = parse_repository(&text, &FitOptions::default()).unwrap();
    let mut r = common::rng(4);
    for ((pa, a), (pb, b)) in root.walk().into_iter().zip(again.walk()) {
        assert_eq!(pa, pb);
        assert_eq!(a.own_samples(), b.own_samples());
        let (Some(ga), Some(gb)) = (a.prior(), b.prior()) else {
            assert!(a.prior().is_none() && b.prior().is_none());
            continue;
        };
        assert_eq!(ga.n_components(), gb.n_components());
        for _ in 0..20 {
            let x = ga.sample(&mut r);
            let (da, db) = (ga.log_density(&x).unwrap(), gb.log_density(&x).unwrap());
            assert!((da - db).abs() <= 1e-12 * da.abs().max(1.0), "{pa:?}");
        }
    }
    let text2 = repository_to_json(&again).unwrap();
    let third = parse_repository(&text2, &FitOptions::default()).unwrap();
    assert_eq!(repository_to_json(&third).unwrap(), text2);
}

fn estimate(extents: [f64; 3], reliable: [bool; 3]) -> DimensionEstimate {
    DimensionEstimate {
        bbox: OrientedBox {
            axes: [Vector3::x(), Vector3::y(), Vector3::z()],
            min: [0.0; 3],
            extents,
        },
        confidence: reliable.map(|r| if r { 1.0 } else { 0.2 }),
        reliable,
    }
}

fn object(id: usize, category: &str, extents: [f64; 3], reliable: [bool; 3]) -> ObjectDimensions {
    ObjectDimensions {
        id,
        category: CategoryPath::parse(category).unwrap(),
        estimate: estimate(extents, reliable),
    }
}

#[test]
fn person_uses_height_only() {
    let root = fixture();
    let (kept, dropped) = build_measured_objects(&[object(0, "person", [5.0, 4.0, 17.0], [true; 3])], &root).unwrap();
    assert!(dropped.is_empty());
    assert_eq!(kept[0].dims(), &[Dim::H]);
    assert_eq!(kept[0].values(), &[17.0]);
    assert_eq!(kept[0].prior().dims(), 1);
}

#[test]
fn keyboard_ignores_unreliable_height() {
    let root = fixture();
    let (kept, dropped) = build_measured_objects(
        &[object(3, "electronics/keyboard", [44.0, 13.0, 3.0], [true, true, false])],
        &root,
    )
    .unwrap();
    assert!(dropped.is_empty());
    assert_eq!(kept[0].dims(), &[Dim::W, Dim::L]);
    assert_eq!(kept[0].values(), &[13.0, 44.0]);
    assert_eq!(kept[0].prior().dims(), 2);
}

#[test]
fn dims_outside_the_mask_drop_the_object() {
    let root = fixture();
    let objs = [
        object(0, "electronics/keyboard", [44.0, 13.0, 3.0], [false, false, true]),
        object(1, "kitchen/mug", [1.0, 1.0, 1.0], [false; 3]),
        object(2, "kitchen/mug", [1.0, 1.0, 1.2], [false, false, true]),
    ];
    let (kept, dropped) = build_measured_objects(&objs, &root).unwrap();
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].id(), 2);
    assert_eq!(dropped.iter().map(|d| d.id).collect::<Vec<_>>(), vec![0, 1]);
    assert!(dropped.iter().all(|d| !d.reason.is_empty()));
}

#[test]
fn unknown_category_is_an_error() {
    let root = fixture();
    let r = build_measured_objects(&[object(0, "kitchen/teapot", [1.0; 3], [true; 3])], &root);
    assert!(matches!(r, Err(Error::UnknownCategory(_))));
}
