//! Maximum matching in general graphs (Edmonds' blossom algorithm).
//!
//! Channels pair freely with each other, so the feasibility graph of the
//! f=2 bottleneck search is a general graph, not a bipartite one: odd
//! cycles (blossoms) must be contracted for augmenting-path search to be
//! exact. Dense O(V^3) formulation; instances here are at most a few
//! hundred vertices.

use std::collections::VecDeque;

const NONE: usize = usize::MAX;

struct Blossom<'a> {
    adj: &'a [Vec<bool>],
    mate: Vec<usize>,
    parent: Vec<usize>,
    base: Vec<usize>,
}

impl<'a> Blossom<'a> {
    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        let mut seen = vec![false; self.base.len()];
        loop {
            a = self.base[a];
            seen[a] = true;
            if self.mate[a] == NONE {
                break;
            }
            a = self.parent[self.mate[a]];
        }
        loop {
            b = self.base[b];
            if seen[b] {
                return b;
            }
            b = self.parent[self.mate[b]];
        }
    }

    fn mark_path(&mut self, mut v: usize, b: usize, mut child: usize, in_blossom: &mut [bool]) {
        while self.base[v] != b {
            in_blossom[self.base[v]] = true;
            in_blossom[self.base[self.mate[v]]] = true;
            self.parent[v] = child;
            child = self.mate[v];
            v = self.parent[self.mate[v]];
        }
    }

    /// BFS for an augmenting path from `root`; applies it when found.
    fn try_augment(&mut self, root: usize) -> bool {
        let n = self.base.len();
        self.parent.fill(NONE);
        for (i, b) in self.base.iter_mut().enumerate() {
            *b = i;
        }
        let mut used = vec![false; n];
        used[root] = true;
        let mut queue = VecDeque::from([root]);
        let mut finish = NONE;

        'bfs: while let Some(v) = queue.pop_front() {
            for to in 0..n {
                if !self.adj[v][to] || self.base[v] == self.base[to] || self.mate[v] == to {
                    continue;
                }
                if to == root || (self.mate[to] != NONE && self.parent[self.mate[to]] != NONE) {
                    // odd cycle: contract the blossom
                    let cur_base = self.lca(v, to);
                    let mut in_blossom = vec![false; n];
                    self.mark_path(v, cur_base, to, &mut in_blossom);
                    self.mark_path(to, cur_base, v, &mut in_blossom);
                    for i in 0..n {
                        if in_blossom[self.base[i]] {
                            self.base[i] = cur_base;
                            if !used[i] {
                                used[i] = true;
                                queue.push_back(i);
                            }
                        }
                    }
                } else if self.parent[to] == NONE {
                    self.parent[to] = v;
                    if self.mate[to] == NONE {
                        finish = to;
                        break 'bfs;
                    }
                    used[self.mate[to]] = true;
                    queue.push_back(self.mate[to]);
                }
            }
        }

        if finish == NONE {
            return false;
        }
        let mut v = finish;
        while v != NONE {
            let pv = self.parent[v];
            let next = self.mate[pv];
            self.mate[v] = pv;
            self.mate[pv] = v;
            v = next;
        }
        true
    }
}

/// Maximum matching; `result[v]` is v's partner or `None`.
pub fn max_matching(adj: &[Vec<bool>]) -> Vec<Option<usize>> {
    let n = adj.len();
    let mut state = Blossom {
        adj,
        mate: vec![NONE; n],
        parent: vec![NONE; n],
        base: (0..n).collect(),
    };
    for root in 0..n {
        if state.mate[root] == NONE {
            state.try_augment(root);
        }
    }
    state
        .mate
        .into_iter()
        .map(|m| if m == NONE { None } else { Some(m) })
        .collect()
}

/// Does the graph admit a perfect matching?
pub fn has_perfect_matching(adj: &[Vec<bool>]) -> bool {
    let n = adj.len();
    if n % 2 != 0 {
        return false;
    }
    max_matching(adj).iter().all(|m| m.is_some())
}

/// A perfect matching as sorted pairs, if one exists.
pub fn perfect_matching_pairs(adj: &[Vec<bool>]) -> Option<Vec<(usize, usize)>> {
    let mate = max_matching(adj);
    if mate.iter().any(|m| m.is_none()) {
        return None;
    }
    let mut pairs = Vec::with_capacity(adj.len() / 2);
    for (v, m) in mate.iter().enumerate() {
        let m = m.unwrap();
        if v < m {
            pairs.push((v, m));
        }
    }
    Some(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in edges {
            adj[a][b] = true;
            adj[b][a] = true;
        }
        adj
    }

    /// Exponential reference: maximum matching size by branching on the
    /// first free vertex.
    fn brute_max(adj: &[Vec<bool>], used: u32) -> usize {
        let n = adj.len();
        let v = match (0..n).find(|&v| used >> v & 1 == 0) {
            Some(v) => v,
            None => return 0,
        };
        let mut best = brute_max(adj, used | 1 << v); // v stays unmatched
        for to in v + 1..n {
            if adj[v][to] && used >> to & 1 == 0 {
                best = best.max(1 + brute_max(adj, used | 1 << v | 1 << to));
            }
        }
        best
    }

    #[test]
    fn odd_cycle_needs_blossom() {
        // C5 plus a pendant vertex: perfect matching on 6 vertices
        // requires traversing the blossom correctly
        let adj = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (2, 5)]);
        assert!(has_perfect_matching(&adj));
        // bare C5 has maximum matching 2
        let c5 = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let size = max_matching(&c5).iter().filter(|m| m.is_some()).count() / 2;
        assert_eq!(size, 2);
    }

    #[test]
    fn no_perfect_matching_on_star() {
        let adj = graph(4, &[(0, 1), (0, 2), (0, 3)]);
        assert!(!has_perfect_matching(&adj));
    }

    #[test]
    fn complete_graphs_pair_up() {
        for n in [2usize, 4, 6, 8] {
            let mut adj = vec![vec![true; n]; n];
            for (i, row) in adj.iter_mut().enumerate() {
                row[i] = false;
            }
            let pairs = perfect_matching_pairs(&adj).unwrap();
            assert_eq!(pairs.len(), n / 2);
        }
    }

    #[test]
    fn matches_brute_force_on_random_graphs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        for n in 2..=10usize {
            for _ in 0..40 {
                let mut adj = vec![vec![false; n]; n];
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.gen_bool(0.4) {
                            adj[i][j] = true;
                            adj[j][i] = true;
                        }
                    }
                }
                let blossom = max_matching(&adj).iter().filter(|m| m.is_some()).count() / 2;
                let brute = brute_max(&adj, 0);
                assert_eq!(blossom, brute, "n={n} adj={adj:?}");
            }
        }
    }
}
