use std::collections::{HashMap, VecDeque};

use super::{FeederModel, ModelError};

/// A network edge: either a line segment or a transformer, by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeRef {
    Line(usize),
    Transformer(usize),
}

/// Rooted tree view of a radial feeder.
#[derive(Debug, Clone)]
pub struct Topology {
    pub bus_index: HashMap<String, usize>,
    /// Edge feeding each bus and the upstream bus; `None` for the slack.
    pub parent: Vec<Option<(EdgeRef, usize)>>,
    /// Buses in breadth-first order from the slack.
    pub order: Vec<usize>,
    pub slack: usize,
}

impl Topology {
    pub fn build(feeder: &FeederModel) -> Result<Self, ModelError> {
        let bus_index: HashMap<String, usize> =
            feeder.buses.iter().enumerate().map(|(k, b)| (b.id.clone(), k)).collect();
        let idx = |id: &str| bus_index[id];
        let n = feeder.buses.len();
        let mut edges: Vec<(EdgeRef, usize, usize)> = Vec::new();
        for (k, l) in feeder.lines.iter().enumerate() {
            edges.push((EdgeRef::Line(k), idx(&l.from_bus), idx(&l.to_bus)));
        }
        for (k, t) in feeder.transformers.iter().enumerate() {
            edges.push((EdgeRef::Transformer(k), idx(&t.bus_primary), idx(&t.bus_secondary)));
        }

        // Union-find detects the first edge that closes a loop; the loop is
        // then recovered as the tree path between its endpoints.
        let mut uf: Vec<usize> = (0..n).collect();
        fn find(uf: &mut [usize], mut x: usize) -> usize {
            while uf[x] != x {
                uf[x] = uf[uf[x]];
                x = uf[x];
            }
            x
        }
        let mut adjacency: Vec<Vec<(EdgeRef, usize)>> = vec![Vec::new(); n];
        for &(edge, a, b) in &edges {
            let (ra, rb) = (find(&mut uf, a), find(&mut uf, b));
            if ra == rb {
                let mut path = tree_path(&adjacency, a, b);
                if path.is_empty() {
                    path = vec![a, b];
                }
                let cycle = path.into_iter().map(|k| feeder.buses[k].id.clone()).collect();
                return Err(ModelError::Cycle { cycle });
            }
            uf[ra] = rb;
            adjacency[a].push((edge, b));
            adjacency[b].push((edge, a));
        }

        let slack = idx(&feeder.slack_bus);
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &(edge, v) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some((edge, u));
                    queue.push_back(v);
                }
            }
        }
        if order.len() != n {
            let buses = (0..n).filter(|&k| !seen[k]).map(|k| feeder.buses[k].id.clone()).collect();
            return Err(ModelError::Disconnected { buses });
        }
        Ok(Self { bus_index, parent, order, slack })
    }

    /// Buses downstream of (and including) `root`.
    pub fn subtree(&self, root: usize) -> Vec<usize> {
        let mut inside = vec![false; self.parent.len()];
        inside[root] = true;
        let mut out = vec![root];
        for &b in &self.order {
            if let Some((_, up)) = self.parent[b] {
                if inside[up] && !inside[b] {
                    inside[b] = true;
                    out.push(b);
                }
            }
        }
        out
    }
}

fn tree_path(adjacency: &[Vec<(EdgeRef, usize)>], from: usize, to: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; adjacency.len()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(_, v) in &adjacency[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    if prev[to] == usize::MAX {
        return Vec::new();
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// Check that the feeder graph is a tree rooted at the slack bus.
pub fn check_radial(feeder: &FeederModel) -> Result<(), ModelError> {
    Topology::build(feeder).map(|_| ())
}
