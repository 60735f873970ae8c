mod common;

use std::collections::{BTreeMap, BTreeSet};

use meshgrade::eval::{assign_folds, pr_curve, threshold_grid};
use meshgrade::features::{featurize_mesh, FeatureConfig};
use meshgrade::mesh::{parse_mesh, serialize_mesh, Element, ElementId, Label, LabelSet, Mesh, Node, NodeId};
use meshgrade::metrics::{compute_property_table, Property};
use meshgrade::models::{apply_threshold, train_extratrees, Model, TrainConfig};
use meshgrade::synth::{self, DefectKind, DefectSpec, Surface, SynthSpec};
use meshgrade::{ConfusionMatrix, Dataset, NeighbourhoodGraph, PredictionRecord};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shuffled<T>(mut v: Vec<T>, rng: &mut impl Rng) -> Vec<T> {
    for i in (1..v.len()).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    v
}

fn records(probs: &[(f64, bool)]) -> Vec<PredictionRecord> {
    probs
        .iter()
        .enumerate()
        .map(|(i, &(p, r))| PredictionRecord {
            mesh_id: "m".into(),
            element_id: ElementId(i as u64 + 1),
            probability: p,
            ground_truth: Label::from_flag(r),
            fold: 0,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mesh_text_roundtrip(seed in 0u64..10_000, labelled in any::<bool>()) {
        let mesh = common::random_mesh(seed, 120);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: LabelSet = mesh
            .elements()
            .iter()
            .map(|e| (e.id, Label::from_flag(rng.random_bool(0.2))))
            .collect();
        let text = serialize_mesh(&mesh, labelled.then_some(&labels));
        let (back, back_labels) = parse_mesh(&text).unwrap();
        prop_assert_eq!(&back, &mesh);
        prop_assert_eq!(back_labels.as_ref(), labelled.then_some(&labels));
        prop_assert_eq!(serialize_mesh(&back, back_labels.as_ref()), text);
    }

    #[test]
    fn metrics_survive_rigid_motion(seed in 0u64..10_000) {
        let mesh = common::random_mesh(seed, 100);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let moved = mesh.map_positions(common::random_rigid_motion(&mut rng));
        let a = compute_property_table(&mesh, &NeighbourhoodGraph::build(&mesh)).unwrap();
        let b = compute_property_table(&moved, &NeighbourhoodGraph::build(&moved)).unwrap();
        for (x, y) in a.rows().iter().zip(b.rows()) {
            for p in Property::ALL {
                let (u, v) = (x[p.column()], y[p.column()]);
                let tol = match p {
                    Property::Area | Property::AspectRatio => 1e-9 * u.abs(),
                    Property::IsTriangle | Property::IsBorder => 0.0,
                    _ => 1e-9,
                };
                prop_assert!((u - v).abs() <= tol, "{} {} vs {}", p.name(), u, v);
            }
        }
    }

    #[test]
    fn rings_nest_and_are_symmetric(seed in 0u64..10_000, k in 0usize..5) {
        let mesh = common::random_mesh(seed, 80);
        let graph = NeighbourhoodGraph::build(&mesh);
        let ids: Vec<ElementId> = mesh.elements().iter().map(|e| e.id).collect();
        let rings: BTreeMap<ElementId, BTreeSet<ElementId>> =
            ids.iter().map(|&id| (id, graph.k_ring(id, k).unwrap())).collect();
        for &u in &ids {
            let outer = graph.k_ring(u, k + 1).unwrap();
            prop_assert!(rings[&u].is_subset(&outer));
            prop_assert!(rings[&u].contains(&u));
            for v in &rings[&u] {
                prop_assert!(rings[v].contains(&u));
            }
        }
    }

    #[test]
    fn frontiers_partition_the_ring(seed in 0u64..10_000, k_max in 0usize..6) {
        let mesh = common::random_mesh(seed, 80);
        let graph = NeighbourhoodGraph::build(&mesh);
        for e in mesh.elements() {
            let layers = graph.frontiers(e.id, k_max).unwrap();
            let mut union = BTreeSet::new();
            for layer in &layers {
                for id in layer {
                    prop_assert!(union.insert(*id), "element {} in two frontiers", id);
                }
            }
            prop_assert_eq!(union, graph.k_ring(e.id, k_max).unwrap());
        }
    }

    #[test]
    fn aggregates_are_ordered(seed in 0u64..10_000) {
        let mesh = common::random_mesh(seed, 80);
        let config = FeatureConfig { skip_k0_duplicates: false, ..FeatureConfig::default() };
        let features = featurize_mesh(&mesh, &config).unwrap();
        let graph = NeighbourhoodGraph::build(&mesh);
        let (m, n) = (config.properties.len(), config.aggregators.len());
        for (i, id) in features.ids.iter().enumerate() {
            let row = features.row(i);
            let layers = graph.frontiers(*id, config.k_max).unwrap();
            for (k, layer) in layers.iter().enumerate() {
                if layer.is_empty() {
                    continue;
                }
                for p in 0..m {
                    let s = &row[(k * m + p) * n..][..n];
                    prop_assert!(s[0] <= s[2] && s[2] <= s[1], "{:?}", s);
                }
            }
        }
    }

    #[test]
    fn features_ignore_id_assignment(seed in 0u64..10_000) {
        let mesh = common::random_mesh(seed, 80);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        let (nodes, elements) = mesh.clone().into_parts();
        let node_map: BTreeMap<NodeId, NodeId> = nodes
            .iter()
            .map(|n| n.id)
            .zip(shuffled((1..=nodes.len() as u64).map(|i| NodeId(i + 500)).collect(), &mut rng))
            .collect();
        let element_map: BTreeMap<ElementId, ElementId> = elements
            .iter()
            .map(|e| e.id)
            .zip(shuffled((1..=elements.len() as u64).map(|i| ElementId(i * 7)).collect(), &mut rng))
            .collect();
        let renamed = Mesh::new(
            shuffled(nodes.iter().map(|n| Node { id: node_map[&n.id], ..n.clone() }).collect(), &mut rng),
            shuffled(
                elements
                    .iter()
                    .map(|e| Element {
                        id: element_map[&e.id],
                        nodes: e.nodes.iter().map(|n| node_map[n]).collect(),
                    })
                    .collect(),
                &mut rng,
            ),
        )
        .unwrap();
        let config = FeatureConfig::default();
        let a = featurize_mesh(&mesh, &config).unwrap();
        let b = featurize_mesh(&renamed, &config).unwrap();
        for (i, id) in a.ids.iter().enumerate() {
            let j = b.ids.iter().position(|x| *x == element_map[id]).unwrap();
            for (x, y) in a.row(i).iter().zip(b.row(j)) {
                prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()), "{} vs {}", x, y);
            }
        }
    }

    #[test]
    fn fold_assignment_partitions_meshes(count in 1usize..200, folds in 1usize..12, seed in any::<u64>()) {
        let ids: Vec<String> = (0..count).map(|i| format!("mesh{i}")).collect();
        match assign_folds(&ids, folds, seed) {
            Err(_) => prop_assert!(count < folds),
            Ok(assignment) => {
                let sizes = assignment.sizes();
                prop_assert_eq!(sizes.len(), folds);
                prop_assert_eq!(sizes.iter().sum::<usize>(), count);
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
                for id in &ids {
                    let f = assignment.fold(id).unwrap();
                    prop_assert!(assignment.members(f).contains(&id.as_str()));
                }
            }
        }
    }

    #[test]
    fn recall_never_rises_with_threshold(probs in prop::collection::vec((0.0f64..=1.0, any::<bool>()), 1..300)) {
        let recs = records(&probs);
        let curve = pr_curve(&recs, &threshold_grid(101)).unwrap();
        for w in curve.points.windows(2) {
            prop_assert!(w[1].recall <= w[0].recall);
        }
        if probs.iter().any(|p| p.1) {
            prop_assert_eq!(curve.points[0].recall, 1.0);
        }
    }

    #[test]
    fn all_passed_accuracy_is_negative_share(flags in prop::collection::vec(any::<bool>(), 1..500)) {
        let probs: Vec<(f64, bool)> = flags.iter().map(|&r| (0.0, r)).collect();
        let cm = ConfusionMatrix::from_predictions(&records(&probs), 0.5);
        let negatives = flags.iter().filter(|r| !**r).count() as f64;
        let m = cm.metrics().unwrap();
        prop_assert!((m.accuracy - negatives / flags.len() as f64).abs() < 1e-12);
        prop_assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn dilated_labels_are_the_ring_union(seed in 0u64..10_000, dilation in 0usize..3) {
        let spec = SynthSpec {
            rows: 8,
            cols: 9,
            surface: Surface::Ridge { angle: 20.0 },
            jitter: 0.1,
            defects: vec![
                DefectSpec { kind: DefectKind::Warped, count: 2, severity: 12.0 },
                DefectSpec { kind: DefectKind::Sliver, count: 1, severity: 3.0 },
            ],
            dilation,
            seed,
            ..SynthSpec::default()
        };
        let s = synth::synthesize(&spec).unwrap();
        let graph = NeighbourhoodGraph::build(&s.mesh);
        let mut expected = BTreeSet::new();
        for d in &s.defects {
            expected.extend(graph.k_ring(*d, dilation).unwrap());
        }
        let rework: BTreeSet<ElementId> =
            s.labels.iter().filter(|(_, l)| l.is_rework()).map(|(id, _)| id).collect();
        prop_assert_eq!(rework, expected);
        prop_assert_eq!(s.labels.len(), s.mesh.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn predictions_nest_across_thresholds(seed in 0u64..1000, t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Dataset::new(4);
        for i in 0..120 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = Label::from_flag(x[0] + 0.3 * rng.random_range(-1.0..1.0) > 0.4);
            data.push(&format!("m{}", i % 6), ElementId(i + 1), &x, label).unwrap();
        }
        let mut config = TrainConfig::extratrees(seed);
        config.extratrees.n_trees = 10;
        let model = Model::ExtraTrees(train_extratrees(&data, &config).unwrap());
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        for _ in 0..50 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = model.predict_proba(&x).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            if apply_threshold(p, hi) == Label::Rework {
                prop_assert_eq!(apply_threshold(p, lo), Label::Rework);
            }
        }
    }
}
