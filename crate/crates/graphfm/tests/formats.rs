//! Property tests of the on-disk formats.

use std::fs;

use graphfm::checkpoint;
use graphfm::dataset::{read_dataset, write_dataset};
use graphfm::pe::{decode, encode, positional_basis};
use graphfm_core::graph::{DatasetManifest, Graph, Labels, Role, Split};
use graphfm_core::model::GraphFm;
use graphfm_core::posenc::laplacian_eigenvectors;
use graphfm_core::ModelConfig;
use proptest::prelude::*;

fn split_of(i: u8) -> Split {
    [Split::Train, Split::Val, Split::Test, Split::None][i as usize % 4]
}

prop_compose! {
    fn graphs()(n in 1usize..30, multilabel in any::<bool>(), classes in 2usize..5, width in 0usize..4, seed in any::<u64>())
        (edges in prop::collection::vec((0..n, 0..n), 0..3 * n),
         feats in prop::collection::vec(-1e6f64..1e6, n * width),
         ys in prop::collection::vec(0u32..classes as u32, n),
         bits in prop::collection::vec(0u8..2, n * classes),
         splits in prop::collection::vec(any::<u8>(), n),
         n in Just(n), multilabel in Just(multilabel), classes in Just(classes), width in Just(width), _s in Just(seed)) -> Graph {
        let labels = if multilabel { Labels::Multilabel { classes, y: bits } } else { Labels::Multiclass { classes, y: ys } };
        let features = (width > 0).then_some((width, feats));
        Graph::from_edges(n, &edges, features, labels, splits.into_iter().map(split_of).collect()).unwrap().0
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dataset_write_read_is_lossless(g in graphs(), lr in prop::option::of(1e-5f64..1.0)) {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest { dataset_lr: lr, ..DatasetManifest::for_graph("p", &g, Role::Finetune) };
        write_dataset(dir.path(), &g, &manifest).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(&back.graph, &g);
        prop_assert_eq!(back.manifest.dataset_lr, lr);
        prop_assert_eq!(back.manifest.role, Role::Finetune);
        prop_assert_eq!(back.report.duplicates + back.report.self_loops, 0);
        // canonical: writing the read graph reproduces the same bytes
        let again = tempfile::tempdir().unwrap();
        write_dataset(again.path(), &back.graph, &back.manifest).unwrap();
        for f in ["edges.tsv", "labels.csv", "splits.csv"] {
            prop_assert_eq!(fs::read(dir.path().join(f)).unwrap(), fs::read(again.path().join(f)).unwrap());
        }
    }

    #[test]
    fn positional_cache_round_trip(g in graphs(), k in 1usize..6) {
        let basis = laplacian_eigenvectors(&g, k).unwrap();
        let (back, pe_dim) = decode(&encode(&basis, 16)).unwrap();
        prop_assert_eq!(pe_dim, 16);
        prop_assert_eq!(back.mask, basis.mask.clone());
        for (a, b) in back.eigvecs.data().iter().zip(basis.eigvecs.data()) {
            prop_assert_eq!(*a, *b as f32 as f64);
        }
        let dir = tempfile::tempdir().unwrap();
        let cold = positional_basis(&g, k, 16, Some(dir.path())).unwrap();
        let warm = positional_basis(&g, k, 16, Some(dir.path())).unwrap();
        prop_assert_eq!(&cold, &warm);
        prop_assert_eq!(&cold, &positional_basis(&g, k, 16, None).unwrap());
    }
}

#[test]
fn checkpoint_of_every_preset_shape_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = GraphFm::<f32>::new(ModelConfig::small(), 3).unwrap();
    m.add_adapter(0, 7, 3, graphfm_core::Task::Multiclass).unwrap();
    m.add_adapter(4, 2, 5, graphfm_core::Task::Multilabel).unwrap();
    let names = [(0, "a".to_string()), (4, "b".to_string())].into_iter().collect();
    checkpoint::save(dir.path(), &m, &checkpoint::SaveInfo { names, step: 9, ..Default::default() }).unwrap();
    let back = checkpoint::load::<f32>(dir.path()).unwrap();
    assert_eq!(back.manifest.adapter_by_name("b").map(|a| a.id), Some(4));
    assert_eq!(back.manifest.next_adapter_id(), 5);
    assert_eq!(back.model.param_count(), m.param_count());
    for ((_, a), (_, b)) in back.model.store.iter().zip(m.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
}
