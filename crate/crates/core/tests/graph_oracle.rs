mod common;

use common::reference::enumerate_edges;
use glhg_core::reasoner::{build_adjacency, NodeRole};
use rand::Rng;

#[test]
fn four_token_example() {
    let adj = build_adjacency(4, 4, 3..5, None).unwrap();
    assert!((0..6).all(|j| adj.edge(0, j)));
    let local: Vec<usize> = adj.neighbors(5).collect();
    assert_eq!(local, [0, 3, 4, 5]);
    for t in 1..=4 {
        let row: Vec<usize> = adj.neighbors(t).collect();
        let mut expected = vec![0, 1, 2, 3, 4];
        if t >= 3 {
            expected.push(5);
        }
        assert_eq!(row, expected, "token {t}");
    }
}

#[test]
fn random_configurations_match_rule_enumeration() {
    let mut rng = common::rng(100);
    for case in 0..100 {
        let max_len = rng.random_range(1..=12);
        let valid = rng.random_range(1..=max_len);
        let start = rng.random_range(1..=valid);
        let end = rng.random_range(start + 1..=valid + 1);
        let window = if rng.random_bool(0.3) {
            None
        } else {
            Some(rng.random_range(0..=max_len))
        };
        let adj = build_adjacency(max_len, valid, start..end, window).unwrap();
        let oracle = enumerate_edges(max_len, valid, start..end, window);
        let n = max_len + 2;
        assert_eq!(adj.len(), n);
        for i in 0..n {
            for j in 0..n {
                assert_eq!(
                    adj.edge(i, j),
                    oracle[i][j],
                    "case {case}: T={max_len} valid={valid} span={start}..{end} window={window:?} edge ({i},{j})"
                );
            }
        }
        let live = (0..n).filter(|&i| adj.is_live(i)).count();
        assert_eq!(live, valid + 2);
        assert_eq!(adj.degree(0), live);
        let mut local: Vec<usize> = vec![0];
        local.extend(start..end);
        local.push(n - 1);
        assert_eq!(adj.neighbors(n - 1).collect::<Vec<_>>(), local);
        assert_eq!(adj.role(0), NodeRole::Global);
        assert_eq!(adj.role(n - 1), NodeRole::Local);
    }
}

#[test]
fn full_context_leaves_no_node_isolated() {
    for t in 1..10 {
        let adj = build_adjacency(t, t, t..t + 1, Some(1)).unwrap();
        assert!((0..adj.len()).all(|i| adj.degree(i) > 0));
    }
}
