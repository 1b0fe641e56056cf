//! Radial network data model.
//!
//! A feeder is a rooted tree: bus 0 is the substation, every other bus is fed
//! through exactly one line. After validation the model is re-indexed in
//! breadth-first order so that line `j` is the line whose downstream bus is
//! `j` (1-based over non-root buses), ancestors always carry smaller indices
//! than descendants, and the line-to-bus path matrix is lower triangular.
//!
//! All quantities are per-unit: squared voltage magnitudes `u = |V|^2`,
//! impedances on the system base, powers on `base_mva`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Quadratic production cost `c2*g^2 + c1*g + c0` in $/h with `g` in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

/// A bus with voltage-magnitude-squared limits and nominal (forecast) load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Dense external id; the root (substation) is id 0.
    pub id: usize,
    /// Lower limit on u = |V|^2, p.u.
    pub u_min: f64,
    /// Upper limit on u = |V|^2, p.u.
    pub u_max: f64,
    /// Forecast active load, p.u.
    pub load_p: f64,
    /// Forecast reactive load, p.u.
    pub load_q: f64,
}

/// A distribution line as declared in input data: `from` is the upstream end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series resistance, p.u. Zero is allowed (ideal switch / jumper).
    pub resistance: f64,
    /// Series reactance, p.u.
    pub reactance: f64,
    /// Apparent-power rating, p.u.
    pub s_max: f64,
}

/// A dispatchable generator. Active range `[p_min, p_max]`, reactive range
/// `[-q_max, q_max]`. Several generators may share one bus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub bus: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub q_max: f64,
    pub cost: Cost,
}

/// Raw per-unit network description before structural validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    /// MVA base used when the case was converted from physical units.
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("network contains a cycle")]
    CycleDetected,
    #[error("bus {0} is not connected to the root")]
    DisconnectedBus(usize),
    #[error("bus {0} is fed by more than one line")]
    MultipleParents(usize),
    #[error("no generator at the root bus")]
    MissingRootGenerator,
    #[error("line {line} references unknown bus {bus}")]
    UnknownBus { line: usize, bus: usize },
    #[error("bus ids must be dense 0..n-1 without duplicates (saw {0})")]
    BadBusIds(usize),
    #[error("{0}")]
    BadValue(String),
}

/// A structurally validated feeder, re-indexed breadth-first from the root.
///
/// Internal bus ids are 0 (root) through `n_buses()-1`; the line feeding bus
/// `j` is identified by `j` itself. `external_id` maps back to input ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedNetwork {
    base_mva: f64,
    buses: Vec<Bus>,
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    line_r: Vec<f64>,
    line_x: Vec<f64>,
    line_s_max: Vec<f64>,
    generators: Vec<Generator>,
    external_id: Vec<usize>,
}

/// Binary line-by-bus path incidence for a validated feeder.
///
/// `on_path(j, i)` is true iff the line feeding bus `j` lies on the path from
/// the root to bus `i`, i.e. iff `j` is an ancestor of `i` or `i` itself.
/// In the breadth-first indexing this makes the dense matrix (rows = lines
/// ordered by downstream bus, columns = non-root buses) lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    /// `subtree[j-1]` = sorted internal ids of buses in the subtree rooted at
    /// bus `j` (the row support of line `j`).
    subtree: Vec<Vec<usize>>,
    /// `path[i-1]` = internal ids of lines on the root-to-`i` path, in
    /// root-to-leaf order (the column support of bus `i`).
    path: Vec<Vec<usize>>,
}

/// Line flows and squared voltages produced by the linearized power flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Active flow on the line into bus `j`, at index `j-1`.
    pub f_p: Vec<f64>,
    /// Reactive flow on the line into bus `j`, at index `j-1`.
    pub f_q: Vec<f64>,
    /// Squared voltage magnitude per bus, root included at index 0.
    pub u: Vec<f64>,
}

/// Validates radial structure and re-indexes the case breadth-first.
///
/// Direction matters in the input: `Line::from` must be the upstream end.
/// Children are visited in ascending external id, so the internal numbering
/// is a deterministic function of the input.
pub fn validate_radial(case: &NetworkCase) -> Result<ValidatedNetwork, NetError> {
    let n = case.buses.len();
    if n == 0 {
        return Err(NetError::BadValue("network has no buses".into()));
    }
    let mut seen = vec![false; n];
    for b in &case.buses {
        if b.id >= n || seen[b.id] {
            return Err(NetError::BadBusIds(b.id));
        }
        seen[b.id] = true;
        if !(b.u_min > 0.0 && b.u_min < b.u_max) {
            return Err(NetError::BadValue(format!(
                "bus {}: voltage limits must satisfy 0 < u_min < u_max",
                b.id
            )));
        }
    }
    // Bus table indexed by external id.
    let mut by_id = vec![None; n];
    for b in &case.buses {
        by_id[b.id] = Some(*b);
    }
    let buses_ext: Vec<Bus> = by_id.into_iter().map(|b| b.unwrap()).collect();

    for (k, l) in case.lines.iter().enumerate() {
        if l.from >= n {
            return Err(NetError::UnknownBus { line: k, bus: l.from });
        }
        if l.to >= n {
            return Err(NetError::UnknownBus { line: k, bus: l.to });
        }
        if l.resistance < 0.0 || l.reactance < 0.0 || !(l.s_max > 0.0) {
            return Err(NetError::BadValue(format!(
                "line {k}: need r >= 0, x >= 0, s_max > 0"
            )));
        }
        if l.to == 0 {
            // An edge into the root closes a loop with the root's own feed.
            return Err(NetError::CycleDetected);
        }
    }

    // Each non-root bus must be fed by exactly one line.
    let mut feed = vec![usize::MAX; n];
    for (k, l) in case.lines.iter().enumerate() {
        if feed[l.to] != usize::MAX {
            return Err(NetError::MultipleParents(l.to));
        }
        feed[l.to] = k;
    }
    for id in 1..n {
        if feed[id] == usize::MAX {
            return Err(NetError::DisconnectedBus(id));
        }
    }

    // Walk the tree from the root. With unique parents everywhere, any bus
    // not reached from the root sits on a directed cycle.
    let mut children_ext: Vec<Vec<usize>> = vec![Vec::new(); n];
    for l in &case.lines {
        children_ext[l.from].push(l.to);
    }
    for ch in &mut children_ext {
        ch.sort_unstable();
    }
    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    let mut queue = std::collections::VecDeque::new();
    visited[0] = true;
    queue.push_back(0usize);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children_ext[v] {
            if visited[c] {
                return Err(NetError::CycleDetected);
            }
            visited[c] = true;
            queue.push_back(c);
        }
    }
    if order.len() != n {
        return Err(NetError::CycleDetected);
    }

    if !case.generators.iter().any(|g| g.bus == 0) {
        return Err(NetError::MissingRootGenerator);
    }
    for (k, g) in case.generators.iter().enumerate() {
        if g.bus >= n {
            return Err(NetError::UnknownBus { line: k, bus: g.bus });
        }
        if !(g.p_min <= g.p_max) || g.q_max < 0.0 {
            return Err(NetError::BadValue(format!(
                "generator {k}: need p_min <= p_max and q_max >= 0"
            )));
        }
    }

    // Re-index: internal id = breadth-first visit order.
    let mut internal = vec![usize::MAX; n];
    for (i, &ext) in order.iter().enumerate() {
        internal[ext] = i;
    }
    let mut buses = Vec::with_capacity(n);
    let mut parent = vec![0usize; n];
    let mut depth = vec![0usize; n];
    let mut line_r = vec![0.0; n - 1];
    let mut line_x = vec![0.0; n - 1];
    let mut line_s_max = vec![0.0; n - 1];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, &ext) in order.iter().enumerate() {
        buses.push(buses_ext[ext]);
        if i > 0 {
            let l = &case.lines[feed[ext]];
            let p = internal[l.from];
            parent[i] = p;
            depth[i] = depth[p] + 1;
            children[p].push(i);
            line_r[i - 1] = l.resistance;
            line_x[i - 1] = l.reactance;
            line_s_max[i - 1] = l.s_max;
        }
    }
    let mut generators = case.generators.clone();
    for g in &mut generators {
        g.bus = internal[g.bus];
    }

    Ok(ValidatedNetwork {
        base_mva: case.base_mva,
        buses,
        parent,
        children,
        depth,
        line_r,
        line_x,
        line_s_max,
        generators,
        external_id: order,
    })
}

impl ValidatedNetwork {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Number of lines (= non-root buses).
    pub fn n_lines(&self) -> usize {
        self.buses.len() - 1
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    /// Bus data in internal (breadth-first) order; index 0 is the root.
    pub fn bus(&self, i: usize) -> &Bus {
        &self.buses[i]
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn parent(&self, i: usize) -> usize {
        self.parent[i]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    /// Resistance of the line feeding bus `j` (j >= 1).
    pub fn line_r(&self, j: usize) -> f64 {
        self.line_r[j - 1]
    }

    pub fn line_x(&self, j: usize) -> f64 {
        self.line_x[j - 1]
    }

    pub fn line_s_max(&self, j: usize) -> f64 {
        self.line_s_max[j - 1]
    }

    /// Generators with bus ids remapped to internal indices.
    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn external_id(&self, internal: usize) -> usize {
        self.external_id[internal]
    }

    /// Reconstructs a `NetworkCase` in internal ordering (ids re-based so the
    /// result round-trips through `validate_radial` unchanged).
    pub fn to_case(&self) -> NetworkCase {
        let buses = self
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| Bus { id: i, ..*b })
            .collect();
        let lines = (1..self.n_buses())
            .map(|j| Line {
                from: self.parent[j],
                to: j,
                resistance: self.line_r(j),
                reactance: self.line_x(j),
                s_max: self.line_s_max(j),
            })
            .collect();
        NetworkCase {
            base_mva: self.base_mva,
            buses,
            lines,
            generators: self.generators.clone(),
        }
    }
}

/// Builds the line-by-bus path incidence of a validated feeder.
pub fn build_path_matrix(net: &ValidatedNetwork) -> PathMatrix {
    let n = net.n_buses();
    let mut path: Vec<Vec<usize>> = Vec::with_capacity(n - 1);
    for i in 1..n {
        let p = net.parent(i);
        let mut row = if p == 0 {
            Vec::new()
        } else {
            path[p - 1].clone()
        };
        row.push(i);
        path.push(row);
    }
    let mut subtree: Vec<Vec<usize>> = vec![Vec::new(); n - 1];
    for i in 1..n {
        for &j in &path[i - 1] {
            subtree[j - 1].push(i);
        }
    }
    PathMatrix { subtree, path }
}

impl PathMatrix {
    pub fn n_lines(&self) -> usize {
        self.subtree.len()
    }

    /// True iff line `j` (the line into bus `j`) is on the root-to-`i` path.
    pub fn on_path(&self, j: usize, i: usize) -> bool {
        self.subtree[j - 1].binary_search(&i).is_ok()
    }

    /// Buses in the subtree fed by line `j`, ascending.
    pub fn subtree(&self, j: usize) -> &[usize] {
        &self.subtree[j - 1]
    }

    /// Lines on the root-to-bus-`i` path, in root-to-leaf order.
    pub fn path(&self, i: usize) -> &[usize] {
        &self.path[i - 1]
    }

    /// Dense 0/1 matrix, rows = lines 1..=l, columns = buses 1..=l.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let l = self.n_lines();
        let mut a = vec![vec![0.0; l]; l];
        for j in 1..=l {
            for &i in self.subtree(j) {
                a[j - 1][i - 1] = 1.0;
            }
        }
        a
    }
}

/// Linearized radial power flow for given net nodal draws.
///
/// `inj_p[i-1]` / `inj_q[i-1]` is the net draw (load minus generation) at
/// non-root bus `i`. Flows accumulate leaf-to-root, voltages root-to-leaf
/// from `u[0] = 1`; line losses are neglected.
pub fn lindistflow_state(net: &ValidatedNetwork, inj_p: &[f64], inj_q: &[f64]) -> FlowState {
    let n = net.n_buses();
    assert_eq!(inj_p.len(), n - 1, "need one active injection per non-root bus");
    assert_eq!(inj_q.len(), n - 1, "need one reactive injection per non-root bus");
    let mut f_p = vec![0.0; n - 1];
    let mut f_q = vec![0.0; n - 1];
    // Internal ids are breadth-first, so descending order visits children
    // before parents.
    for j in (1..n).rev() {
        let mut p = inj_p[j - 1];
        let mut q = inj_q[j - 1];
        for &c in net.children(j) {
            p += f_p[c - 1];
            q += f_q[c - 1];
        }
        f_p[j - 1] = p;
        f_q[j - 1] = q;
    }
    let mut u = vec![1.0; n];
    for j in 1..n {
        let drop = 2.0 * (net.line_r(j) * f_p[j - 1] + net.line_x(j) * f_q[j - 1]);
        u[j] = u[net.parent(j)] - drop;
    }
    FlowState { f_p, f_q, u }
}
