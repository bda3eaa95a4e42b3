//! Dinic max-flow on a small dense-ish graph with real capacities.

use std::collections::VecDeque;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
pub struct FlowGraph {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
}

impl FlowGraph {
    pub fn new(nodes: usize) -> Self {
        Self {
            adj: vec![Vec::new(); nodes],
            to: Vec::new(),
            cap: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    /// Adds the arc pair `u -> v` / `v -> u` with the given capacities.
    pub fn add_edge(&mut self, u: usize, v: usize, cap_uv: f64, cap_vu: f64) {
        debug_assert!(cap_uv >= 0.0 && cap_vu >= 0.0);
        self.adj[u].push(self.to.len());
        self.to.push(v);
        self.cap.push(cap_uv);
        self.adj[v].push(self.to.len());
        self.to.push(u);
        self.cap.push(cap_vu);
    }

    fn levels(&self, s: usize, t: usize) -> Option<Vec<u32>> {
        let mut level = vec![u32::MAX; self.node_count()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > EPS && level[v] == u32::MAX {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        (level[t] != u32::MAX).then_some(level)
    }

    fn augment(&mut self, u: usize, t: usize, pushed: f64, level: &[u32], next: &mut [usize]) -> f64 {
        if u == t {
            return pushed;
        }
        while next[u] < self.adj[u].len() {
            let e = self.adj[u][next[u]];
            let v = self.to[e];
            if self.cap[e] > EPS && level[v] == level[u] + 1 {
                let got = self.augment(v, t, pushed.min(self.cap[e]), level, next);
                if got > EPS {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            next[u] += 1;
        }
        0.0
    }

    /// Pushes the maximum flow from `s` to `t` and returns its value.
    pub fn max_flow(&mut self, s: usize, t: usize) -> f64 {
        let mut total = 0.0;
        while let Some(level) = self.levels(s, t) {
            let mut next = vec![0usize; self.node_count()];
            loop {
                let pushed = self.augment(s, t, f64::INFINITY, &level, &mut next);
                if pushed <= EPS {
                    break;
                }
                total += pushed;
            }
        }
        total
    }

    /// Nodes still reachable from `s` through residual arcs; after
    /// [`max_flow`](Self::max_flow) this is the source side of a minimum cut.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let mut seen = vec![false; self.node_count()];
        seen[s] = true;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > EPS && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }
}
