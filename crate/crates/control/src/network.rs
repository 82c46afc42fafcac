//! Signalized network as a link graph, the alternating grid generator, and
//! all-pairs routing costs.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::ControlError;

pub type LinkId = usize;
pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    /// Length in meters.
    pub length: f64,
    /// Storage capacity in vehicles.
    pub x_max: f64,
    pub upstream: Option<NodeId>,
    pub downstream: Option<NodeId>,
    /// Phases of the downstream node that give this link right of way.
    #[serde(default)]
    pub row_phases: Vec<usize>,
    /// Weight of entering this link, used by the shortest-path costs.
    /// Defaults to the length.
    #[serde(default)]
    pub arc_cost: Option<f64>,
}

impl Link {
    pub fn is_entry(&self) -> bool {
        self.upstream.is_none()
    }

    pub fn is_exit(&self) -> bool {
        self.downstream.is_none()
    }

    pub fn cost(&self) -> f64 {
        self.arc_cost.unwrap_or(self.length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub phases: usize,
    /// Lost time per cycle, seconds.
    pub lost_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub nodes: Vec<Node>,
    pub links: Vec<Link>,
    /// CAV destination links. Empty means every exit link.
    #[serde(default)]
    pub destinations: Vec<LinkId>,
    #[serde(skip)]
    incoming: Vec<Vec<LinkId>>,
    #[serde(skip)]
    outgoing: Vec<Vec<LinkId>>,
}

impl Network {
    /// Builds and validates a network; incidence lists are derived.
    pub fn new(nodes: Vec<Node>, links: Vec<Link>, destinations: Vec<LinkId>) -> Result<Self, ControlError> {
        let mut net = Network {
            nodes,
            links,
            destinations,
            incoming: Vec::new(),
            outgoing: Vec::new(),
        };
        net.finish()?;
        Ok(net)
    }

    /// Recomputes derived data after deserialization.
    pub fn finish(&mut self) -> Result<(), ControlError> {
        if self.destinations.is_empty() {
            self.destinations = (0..self.links.len()).filter(|&z| self.links[z].is_exit()).collect();
        }
        self.incoming = vec![Vec::new(); self.nodes.len()];
        self.outgoing = vec![Vec::new(); self.nodes.len()];
        for (z, l) in self.links.iter().enumerate() {
            if let Some(j) = l.downstream {
                if j >= self.nodes.len() {
                    return Err(ControlError::Network(format!("link {} ends at missing node {}", z + 1, j + 1)));
                }
                self.incoming[j].push(z);
            }
            if let Some(j) = l.upstream {
                if j >= self.nodes.len() {
                    return Err(ControlError::Network(format!("link {} starts at missing node {}", z + 1, j + 1)));
                }
                self.outgoing[j].push(z);
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        let err = |m: String| Err(ControlError::Network(m));
        for (z, l) in self.links.iter().enumerate() {
            if !(l.x_max > 0.0) {
                return err(format!("link {} has x_max {}", z + 1, l.x_max));
            }
            if !(l.length > 0.0) {
                return err(format!("link {} has length {}", z + 1, l.length));
            }
            if l.cost() < 0.0 {
                return err(format!("link {} has negative arc cost", z + 1));
            }
            if l.upstream.is_some() && l.upstream == l.downstream {
                return err(format!("link {} is a self-loop", z + 1));
            }
            if l.upstream.is_none() && l.downstream.is_none() {
                return err(format!("link {} is attached to no node", z + 1));
            }
            if let Some(j) = l.downstream {
                if l.row_phases.is_empty() {
                    return err(format!("link {} has no right-of-way phase", z + 1));
                }
                if l.row_phases.iter().any(|&i| i >= self.nodes[j].phases) {
                    return err(format!("link {} references a phase node {} lacks", z + 1, j + 1));
                }
            }
        }
        for (j, n) in self.nodes.iter().enumerate() {
            if n.lost_time < 0.0 {
                return err(format!("node {} has negative lost time", j + 1));
            }
            if n.phases == 0 {
                return err(format!("node {} has no phases", j + 1));
            }
        }
        for &d in &self.destinations {
            if d >= self.links.len() || !self.links[d].is_exit() {
                return err(format!("destination {} is not an exit link", d + 1));
            }
        }
        Ok(())
    }

    pub fn num_links(&self) -> usize {
        self.links.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// I(j)
    pub fn incoming(&self, j: NodeId) -> &[LinkId] {
        &self.incoming[j]
    }

    /// O(j)
    pub fn outgoing(&self, j: NodeId) -> &[LinkId] {
        &self.outgoing[j]
    }

    /// O(Y(z)); empty for exit links.
    pub fn successors(&self, z: LinkId) -> &[LinkId] {
        match self.links[z].downstream {
            Some(j) => &self.outgoing[j],
            None => &[],
        }
    }

    /// I(V(z)); empty for entry links.
    pub fn predecessors(&self, z: LinkId) -> &[LinkId] {
        match self.links[z].upstream {
            Some(j) => &self.incoming[j],
            None => &[],
        }
    }

    pub fn entries(&self) -> Vec<LinkId> {
        (0..self.links.len()).filter(|&z| self.links[z].is_entry()).collect()
    }

    pub fn exits(&self) -> Vec<LinkId> {
        (0..self.links.len()).filter(|&z| self.links[z].is_exit()).collect()
    }

    pub fn interlinks(&self) -> Vec<LinkId> {
        (0..self.links.len())
            .filter(|&z| !self.links[z].is_entry() && !self.links[z].is_exit())
            .collect()
    }

    /// Commodity index of a destination link (commodity 0 is HDV).
    pub fn commodity_of(&self, d: LinkId) -> Option<usize> {
        self.destinations.iter().position(|&x| x == d).map(|p| p + 1)
    }

    /// Destination link of commodity `c >= 1`.
    pub fn destination(&self, c: usize) -> LinkId {
        self.destinations[c - 1]
    }

    pub fn num_commodities(&self) -> usize {
        self.destinations.len() + 1
    }

    /// Total green budget C - L(j).
    pub fn green_budget(&self, j: NodeId, cycle: f64) -> f64 {
        cycle - self.nodes[j].lost_time
    }
}

/// Generates a rows x cols grid with alternating one-way streets.
///
/// Rows with even index run east, odd rows west; even columns run south, odd
/// columns north. Links are numbered node by node (row-major) in the order
/// west boundary, north boundary, east side, south side. Phase 0 serves
/// horizontal links, phase 1 vertical ones.
pub fn build_grid(rows: usize, cols: usize, link_length: f64, x_max: f64, lost_time: f64) -> Result<Network, ControlError> {
    if rows < 2 || cols < 2 {
        return Err(ControlError::GridTooSmall { rows, cols });
    }
    if !(link_length > 0.0) {
        return Err(ControlError::Network(format!("link length {link_length} must be positive")));
    }
    let nodes = vec![Node { phases: 2, lost_time }; rows * cols];
    let mut links = Vec::new();
    let mut add = |up: Option<NodeId>, down: Option<NodeId>, phase: usize| {
        links.push(Link {
            length: link_length,
            x_max,
            upstream: up,
            downstream: down,
            row_phases: if down.is_some() { vec![phase] } else { Vec::new() },
            arc_cost: None,
        });
    };
    const H: usize = 0;
    const V: usize = 1;
    for r in 0..rows {
        for c in 0..cols {
            let j = r * cols + c;
            let east = r % 2 == 0;
            let south = c % 2 == 0;
            if c == 0 {
                if east { add(None, Some(j), H) } else { add(Some(j), None, H) }
            }
            if r == 0 {
                if south { add(None, Some(j), V) } else { add(Some(j), None, V) }
            }
            if c + 1 < cols {
                if east { add(Some(j), Some(j + 1), H) } else { add(Some(j + 1), Some(j), H) }
            } else if east {
                add(Some(j), None, H)
            } else {
                add(None, Some(j), H)
            }
            if r + 1 < rows {
                if south { add(Some(j), Some(j + cols), V) } else { add(Some(j + cols), Some(j), V) }
            } else if south {
                add(Some(j), None, V)
            } else {
                add(None, Some(j), V)
            }
        }
    }
    Network::new(nodes, links, Vec::new())
}

/// All-pairs link-to-link routing cost. `F(z, d)` is the cost of the links
/// entered after `z` up to and including `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    f: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, z: LinkId, d: LinkId) -> f64 {
        self.f[z * self.n + d]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn is_reachable(&self, z: LinkId, d: LinkId) -> bool {
        self.get(z, d).is_finite()
    }

    /// CSV with one row per from-link and one column per destination.
    /// Labels are 1-based; unreachable entries are written as `inf`.
    pub fn to_csv(&self, destinations: &[LinkId]) -> String {
        let mut out = String::from("link");
        for &d in destinations {
            let _ = write!(out, ",{}", d + 1);
        }
        out.push('\n');
        for z in 0..self.n {
            let _ = write!(out, "{}", z + 1);
            for &d in destinations {
                let v = self.get(z, d);
                if v.is_finite() {
                    let _ = write!(out, ",{v}");
                } else {
                    out.push_str(",inf");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Floyd-Warshall over link adjacency: z -> m iff Y(z) = V(m), weight = cost(m).
pub fn floyd_warshall(net: &Network) -> CostMatrix {
    let n = net.num_links();
    let mut f = vec![f64::INFINITY; n * n];
    for z in 0..n {
        f[z * n + z] = 0.0;
        for &m in net.successors(z) {
            let w = net.links[m].cost();
            if w < f[z * n + m] {
                f[z * n + m] = w;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            let ik = f[i * n + k];
            if !ik.is_finite() {
                continue;
            }
            for j in 0..n {
                let cand = ik + f[k * n + j];
                if cand < f[i * n + j] {
                    f[i * n + j] = cand;
                }
            }
        }
    }
    CostMatrix { n, f }
}

/// Successors of `z` that strictly reduce the remaining cost to `d`.
pub fn admissible_successors(net: &Network, cost: &CostMatrix, z: LinkId, d: LinkId, epsilon: f64) -> Vec<LinkId> {
    let fz = cost.get(z, d);
    net.successors(z)
        .iter()
        .copied()
        .filter(|&m| {
            let fm = cost.get(m, d);
            fm.is_finite() && fz - fm > epsilon
        })
        .collect()
}

/// Admissible successor with the smallest remaining cost (ties: lowest id).
pub fn shortest_successor(net: &Network, cost: &CostMatrix, z: LinkId, d: LinkId, epsilon: f64) -> Option<LinkId> {
    admissible_successors(net, cost, z, d, epsilon)
        .into_iter()
        .min_by(|&a, &b| cost.get(a, d).total_cmp(&cost.get(b, d)).then(a.cmp(&b)))
}
