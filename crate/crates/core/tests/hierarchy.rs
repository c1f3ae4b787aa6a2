mod common;

use std::collections::BTreeSet;

use common::{covered_subquery, fixture_hierarchy, naive_lca, random_subquery, random_tree};
use holotune::hierarchy::{build_hierarchy, worst_case_chain, AgentKind, Catalog, HierarchyError, ALG_ROOT, DATA_ROOT};
use holotune::params::set_covers;
use rand::seq::IteratorRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn lca_agrees_with_path_intersection() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..1000 {
        let h = random_tree(&mut rng, 40);
        h.check_invariants().unwrap();
        let count = rng.random_range(1..=4);
        let ids: BTreeSet<usize> = (0..h.len()).choose_multiple(&mut rng, count).into_iter().collect();
        assert_eq!(h.lowest_common_ancestor(&ids).unwrap(), naive_lca(&h, &ids));
    }
}

#[test]
fn lca_of_empty_set_is_an_error() {
    let h = fixture_hierarchy();
    assert!(h.lowest_common_ancestor(&BTreeSet::new()).is_err());
}

/// A non-terminal with a matching descendant always passes the filter.
#[test]
fn union_capability_never_prunes_a_match() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let mut checked = 0;
    for _ in 0..300 {
        let h = random_tree(&mut rng, 40);
        for _ in 0..4 {
            let sq = if rng.random_bool(0.5) {
                covered_subquery(&mut rng, &h, None).unwrap()
            } else {
                random_subquery(&mut rng)
            };
            for t in h.matching_terminals(&sq) {
                let mut at = h.nodes()[t].parent;
                while let Some(a) = at {
                    if a == ALG_ROOT {
                        break;
                    }
                    let node = &h.nodes()[a];
                    assert!(node.admits(&sq), "{} pruned {}", node.label, h.nodes()[t].label);
                    assert!(node.capability.covers(&sq.params));
                    at = node.parent;
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 1000);
}

#[test]
fn capability_is_union_of_terminals() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..100 {
        let h = random_tree(&mut rng, 30);
        for node in h.nodes() {
            let mut want = holotune::params::Capability::new();
            for id in h.subtree(node.id) {
                if let Some(res) = h.nodes()[id].resource() {
                    want.absorb_set(&res.params);
                }
            }
            assert_eq!(node.capability, want, "{}", node.label);
        }
    }
}

#[test]
fn fixture_structure() {
    let h = fixture_hierarchy();
    h.check_invariants().unwrap();
    let names: Vec<&str> = h.nodes()[ALG_ROOT]
        .children
        .iter()
        .map(|&c| match &h.nodes()[c].kind {
            AgentKind::NameAgent(n) => n.as_str(),
            other => panic!("unexpected {other:?}"),
        })
        .collect();
    assert_eq!(names, ["dbscan", "kmeans", "knn", "ncc", "ridge"]);
    let dot = h.to_dot();
    assert_eq!(dot.matches(" -> ").count(), h.len() - 1);
    assert_eq!(dot.matches("label=").count(), h.len());
    assert_eq!(dot, fixture_hierarchy().to_dot());
    let knn = h.nodes().iter().find(|n| n.label == "alg/knn").unwrap();
    assert_eq!(knn.capability.canonical(), "k={1|3|7|15}");
}

#[test]
fn matching_terminals_by_scan() {
    let h = fixture_hierarchy();
    let q = common::fixture_query("q2_select_classifiers_blobs.json");
    let got: BTreeSet<String> = h
        .matching_terminals(&q.algorithms[0])
        .into_iter()
        .map(|t| h.nodes()[t].resource().unwrap().family.clone())
        .collect();
    assert_eq!(got, BTreeSet::from(["knn".to_string(), "ncc".to_string()]));
    for t in h.terminals() {
        let res = t.resource().unwrap();
        let sq = holotune::query::SubQuery::new(holotune::query::NameSpec::Any, res.params.clone());
        let m = h.matching_terminals(&sq);
        assert!(m.contains(&t.id));
        for other in &m {
            assert!(set_covers(&res.params, &h.nodes()[*other].resource().unwrap().params));
        }
    }
}

#[test]
fn worst_case_chain_shape() {
    for size in [3, 15, 31, 63, 127] {
        let h = worst_case_chain(size, "knn", "k").unwrap();
        h.check_invariants().unwrap();
        assert_eq!(h.alg_size(), size);
        let depth = h.nodes().iter().map(|n| n.level).max().unwrap() - 1;
        assert_eq!(depth, (size - 1) / 2);
        for n in h.nodes() {
            if n.id >= ALG_ROOT && !n.is_terminal() && n.id != DATA_ROOT {
                assert!(n.children.len() >= 2, "{}", n.label);
            }
        }
    }
    assert!(worst_case_chain(4, "knn", "k").is_err());
}

#[test]
fn catalog_errors() {
    let dup = r#"{"algorithms":[{"family":"knn","params":{"k":1}},{"family":"knn","params":{"k":1}}]}"#;
    let cat = Catalog::from_json(dup, None).unwrap();
    assert!(matches!(build_hierarchy(&cat), Err(HierarchyError::DuplicateResource(_))));
    let open = r#"{"algorithms":[{"family":"knn","params":{"k":"*"}}]}"#;
    let cat = Catalog::from_json(open, None).unwrap();
    assert!(matches!(build_hierarchy(&cat), Err(HierarchyError::NonConcrete(_))));
    assert!(Catalog::from_json(r#"{"algos":[]}"#, None).is_err());
}
