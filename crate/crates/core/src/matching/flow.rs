//! Small Edmonds–Karp max-flow used for factor and surplus computations.

use std::collections::VecDeque;

pub(crate) const INF: i64 = i64::MAX / 4;

struct Arc {
    to: usize,
    cap: i64,
}

pub(crate) struct FlowNetwork {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl FlowNetwork {
    pub fn new(nodes: usize) -> Self {
        FlowNetwork {
            arcs: Vec::new(),
            out: vec![Vec::new(); nodes],
        }
    }

    /// Returns the index of the forward arc.
    pub fn add_arc(&mut self, from: usize, to: usize, cap: i64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap });
        self.out[from].push(id);
        self.arcs.push(Arc { to: from, cap: 0 });
        self.out[to].push(id + 1);
        id
    }

    /// Residual capacity of an arc after `max_flow`.
    pub fn residual(&self, arc: usize) -> i64 {
        self.arcs[arc].cap
    }

    pub fn max_flow(&mut self, source: usize, sink: usize) -> i64 {
        let mut total = 0;
        loop {
            let mut via = vec![usize::MAX; self.out.len()];
            let mut seen = vec![false; self.out.len()];
            seen[source] = true;
            let mut queue = VecDeque::from([source]);
            while let Some(v) = queue.pop_front() {
                if v == sink {
                    break;
                }
                for &a in &self.out[v] {
                    let to = self.arcs[a].to;
                    if self.arcs[a].cap > 0 && !seen[to] {
                        seen[to] = true;
                        via[to] = a;
                        queue.push_back(to);
                    }
                }
            }
            if !seen[sink] {
                return total;
            }
            let mut push = INF;
            let mut v = sink;
            while v != source {
                let a = via[v];
                push = push.min(self.arcs[a].cap);
                v = self.arcs[a ^ 1].to;
            }
            let mut v = sink;
            while v != source {
                let a = via[v];
                self.arcs[a].cap -= push;
                self.arcs[a ^ 1].cap += push;
                v = self.arcs[a ^ 1].to;
            }
            total += push;
        }
    }

    /// Nodes reachable from `source` in the residual network: the source side
    /// of the inclusion-minimal minimum cut.
    pub fn source_side(&self, source: usize) -> Vec<bool> {
        let mut seen = vec![false; self.out.len()];
        seen[source] = true;
        let mut stack = vec![source];
        while let Some(v) = stack.pop() {
            for &a in &self.out[v] {
                let to = self.arcs[a].to;
                if self.arcs[a].cap > 0 && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }
}
