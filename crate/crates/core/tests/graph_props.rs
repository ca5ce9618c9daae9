use std::collections::{BTreeMap, BTreeSet, VecDeque};

use hnbp::graph::{self, ConnectivityGraph, UnionFind};
use hnbp::scenario::{Edge, NodeId};
use proptest::prelude::*;

fn arb_graph(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>)> {
    (2..=max_nodes).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        let m = pairs.len();
        (Just(n), proptest::sample::subsequence(pairs, 0..=m), proptest::collection::vec(0.5f64..12.0, m))
    })
}

fn build(n: usize, pairs: &[(usize, usize)]) -> ConnectivityGraph {
    ConnectivityGraph::from_edges(n, pairs.iter().map(|&(a, b)| (NodeId::from_idx(a), NodeId::from_idx(b)))).unwrap()
}

fn components(n: usize, edges: impl IntoIterator<Item = Edge>) -> usize {
    let mut uf = UnionFind::new(n);
    let mut c = n;
    for e in edges {
        if uf.union(e.lo().idx(), e.hi().idx()) {
            c -= 1;
        }
    }
    c
}

fn is_forest(n: usize, edges: &BTreeSet<Edge>) -> bool {
    let mut uf = UnionFind::new(n);
    edges.iter().all(|e| uf.union(e.lo().idx(), e.hi().idx()))
}

/// Minimum total weight over every spanning forest, by exhaustive search.
fn brute_force_min(n: usize, edges: &[(Edge, f64)]) -> f64 {
    let target = n - components(n, edges.iter().map(|(e, _)| *e));
    fn go(edges: &[(Edge, f64)], start: usize, chosen: &mut Vec<Edge>, need: usize, n: usize, total: f64, best: &mut f64) {
        if chosen.len() == need {
            *best = best.min(total);
            return;
        }
        for k in start..edges.len() {
            chosen.push(edges[k].0);
            let ok = {
                let mut uf = UnionFind::new(n);
                chosen.iter().all(|e| uf.union(e.lo().idx(), e.hi().idx()))
            };
            if ok {
                go(edges, k + 1, chosen, need, n, total + edges[k].1, best);
            }
            chosen.pop();
        }
    }
    let mut best = f64::INFINITY;
    go(edges, 0, &mut Vec::new(), target, n, 0.0, &mut best);
    if target == 0 {
        0.0
    } else {
        best
    }
}

fn hop_distance(g: &ConnectivityGraph, from: NodeId) -> BTreeMap<NodeId, usize> {
    let mut dist = BTreeMap::from([(from, 0)]);
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        for &v in g.neighbors(u) {
            if !dist.contains_key(&v) {
                dist.insert(v, dist[&u] + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mst_matches_exhaustive_search((n, pairs, w) in arb_graph(8)) {
        let g = build(n, &pairs);
        let weights: BTreeMap<Edge, f64> =
            pairs.iter().zip(&w).map(|(&(a, b), &x)| (Edge::new(NodeId::from_idx(a), NodeId::from_idx(b)), x)).collect();
        let tree = graph::min_spanning_tree(&g, |e| weights.get(&e).copied()).unwrap();
        prop_assert!(is_forest(n, &tree.retained_edges));
        prop_assert!(tree.retained_edges.iter().all(|e| g.has_edge(e.lo(), e.hi())));
        let comps = components(n, g.edges());
        prop_assert_eq!(tree.edge_count(), n - comps);
        let total: f64 = tree.retained_edges.iter().map(|e| weights[e]).sum();
        let listed: Vec<(Edge, f64)> = weights.iter().map(|(e, w)| (*e, *w)).collect();
        let best = brute_force_min(n, &listed);
        prop_assert!((total - best).abs() < 1e-9, "kruskal {} vs exhaustive {}", total, best);
    }

    #[test]
    fn bfs_depth_is_hop_distance((n, pairs, _w) in arb_graph(12), roots in proptest::collection::btree_set(0usize..12, 1..4)) {
        let g = build(n, &pairs);
        let roots: BTreeSet<NodeId> = roots.into_iter().filter(|&r| r < n).map(NodeId::from_idx).collect();
        prop_assume!(!roots.is_empty());
        let tree = graph::bfs_spanning_tree(&g, &roots).unwrap();
        let mut nearest: BTreeMap<NodeId, usize> = BTreeMap::new();
        for &r in &roots {
            for (v, d) in hop_distance(&g, r) {
                let e = nearest.entry(v).or_insert(d);
                *e = (*e).min(d);
            }
        }
        prop_assert_eq!(&tree.depth, &nearest);
        prop_assert!(is_forest(n, &tree.retained_edges));
        prop_assert_eq!(tree.edge_count(), nearest.len() - roots.len());
        let unreachable: Vec<NodeId> = g.nodes().filter(|v| !nearest.contains_key(v)).collect();
        prop_assert_eq!(&tree.unreachable, &unreachable);
        for e in &tree.retained_edges {
            let (a, b) = (tree.depth[&e.lo()], tree.depth[&e.hi()]);
            prop_assert_eq!(a.abs_diff(b), 1);
        }
    }

    #[test]
    fn neighbor_lists_mirror_edges((n, pairs, _w) in arb_graph(12)) {
        let g = build(n, &pairs);
        prop_assert_eq!(g.edge_count(), pairs.len());
        for v in g.nodes() {
            let nb = g.neighbors(v);
            prop_assert!(nb.windows(2).all(|w| w[0] < w[1]));
            for &u in nb {
                prop_assert!(g.neighbors(u).contains(&v));
                prop_assert!(g.has_edge(u, v));
            }
        }
        prop_assert_eq!(g.nodes().map(|v| g.degree(v)).sum::<usize>(), 2 * pairs.len());
    }
}

#[test]
fn disconnected_input_gives_a_forest() {
    // two triangles
    let pairs = [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5)];
    let g = build(6, &pairs);
    let tree = graph::min_spanning_tree(&g, |_| Some(1.0)).unwrap();
    assert_eq!(tree.edge_count(), 4);
    let bfs = graph::bfs_spanning_tree(&g, &BTreeSet::from([NodeId(1)])).unwrap();
    assert_eq!(bfs.edge_count(), 2);
    assert_eq!(bfs.unreachable, vec![NodeId(4), NodeId(5), NodeId(6)]);
}
