//! Network-level machinery: sensing-task allocation, OR-rule fusion at a
//! fusion center, neighbour graphs and average-consensus learning.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::Hypothesis;
use crate::detectors::{decide, SensingDecision};
use crate::error::{Error, Result};

/// Which channels each SU senses, and the reverse index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Allocation {
    /// Sensed channels per SU, ascending.
    pub per_su: Vec<Vec<usize>>,
    /// Sensing SUs per channel, ascending.
    pub per_channel: Vec<Vec<usize>>,
}

impl Allocation {
    pub fn from_lists(mut per_su: Vec<Vec<usize>>, m_count: usize) -> Result<Self> {
        let mut per_channel = vec![Vec::new(); m_count];
        for (k, list) in per_su.iter_mut().enumerate() {
            list.sort_unstable();
            if list.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::invalid(format!("SU {k} is assigned the same channel twice")));
            }
            for &m in list.iter() {
                if m >= m_count {
                    return Err(Error::invalid(format!("SU {k} assigned channel {m} of {m_count}")));
                }
                per_channel[m].push(k);
            }
        }
        Ok(Self { per_su, per_channel })
    }

    pub fn k_count(&self) -> usize {
        self.per_su.len()
    }

    pub fn m_count(&self) -> usize {
        self.per_channel.len()
    }
}

fn check_counts(k_count: usize, m_count: usize, i_per_su: usize) -> Result<()> {
    if k_count == 0 || m_count == 0 || i_per_su == 0 {
        return Err(Error::invalid("K, M and I must all be at least 1"));
    }
    if i_per_su > m_count {
        return Err(Error::invalid(format!(
            "each SU cannot sense {i_per_su} distinct channels out of {m_count}"
        )));
    }
    Ok(())
}

/// Fixed round-robin assignment, blind to SNR and PU activity: SU `k` senses
/// channels `k*I, k*I+1, ..., k*I+I-1` modulo M. Channel loads differ by at
/// most one and are exactly `I*K/M` when that divides.
pub fn allocate_basic(k_count: usize, m_count: usize, i_per_su: usize) -> Result<Allocation> {
    check_counts(k_count, m_count, i_per_su)?;
    let per_su = (0..k_count)
        .map(|k| (0..i_per_su).map(|j| (k * i_per_su + j) % m_count).collect())
        .collect();
    Allocation::from_lists(per_su, m_count)
}

/// Each SU senses its `I` highest-SNR channels; ties go to the lower index.
pub fn allocate_best_snr(snr: &[Vec<f64>], i_per_su: usize) -> Result<Allocation> {
    let m_count = snr.first().map_or(0, Vec::len);
    check_counts(snr.len(), m_count, i_per_su)?;
    let per_su = snr
        .iter()
        .map(|row| {
            if row.len() != m_count {
                return Err(Error::invalid("ragged SNR matrix"));
            }
            let mut order: Vec<usize> = (0..m_count).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            order.truncate(i_per_su);
            Ok(order)
        })
        .collect::<Result<Vec<_>>>()?;
    Allocation::from_lists(per_su, m_count)
}

/// OR-rule fusion: busy if any sensor says busy.
pub fn fuse_or(local: &[Hypothesis]) -> Result<Hypothesis> {
    if local.is_empty() {
        return Err(Error::invalid("OR fusion of zero decisions"));
    }
    Ok(Hypothesis::from_busy(local.iter().any(|h| h.is_busy())))
}

/// Symmetric, irreflexive neighbour relation over SU indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborGraph {
    adj: Vec<Vec<bool>>,
}

impl NeighborGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            adj: vec![vec![false; n]; n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for a in 0..n {
            for b in a + 1..n {
                g.adj[a][b] = true;
                g.adj[b][a] = true;
            }
        }
        g
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(a, b) in edges {
            g.add_edge(a, b)?;
        }
        Ok(g)
    }

    /// Unit-disk graph: SUs within `radius` of each other are neighbours.
    pub fn geometric(positions: &[(f64, f64)], radius: f64) -> Self {
        let n = positions.len();
        let mut g = Self::empty(n);
        let r2 = radius * radius;
        for a in 0..n {
            for b in a + 1..n {
                let (dx, dy) = (positions[a].0 - positions[b].0, positions[a].1 - positions[b].1);
                if dx * dx + dy * dy <= r2 {
                    g.adj[a][b] = true;
                    g.adj[b][a] = true;
                }
            }
        }
        g
    }

    pub fn add_edge(&mut self, a: usize, b: usize) -> Result<()> {
        let n = self.len();
        if a >= n || b >= n {
            return Err(Error::invalid(format!("edge ({a}, {b}) outside a graph of {n} nodes")));
        }
        if a == b {
            return Err(Error::invalid("self-loops are not allowed"));
        }
        self.adj[a][b] = true;
        self.adj[b][a] = true;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.adj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adj.is_empty()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adj[a][b]
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().flatten().filter(|&&e| e).count() / 2
    }

    /// Largest degree in the subgraph induced by `members`.
    pub fn max_degree_within(&self, members: &[usize]) -> usize {
        members
            .iter()
            .map(|&k| members.iter().filter(|&&l| self.adj[k][l]).count())
            .max()
            .unwrap_or(0)
    }

    /// Whether the subgraph induced by `members` is connected.
    pub fn connected_within(&self, members: &[usize]) -> bool {
        let Some(&start) = members.first() else {
            return true;
        };
        let mut seen = vec![false; members.len()];
        seen[0] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(k) = queue.pop_front() {
            for (j, &l) in members.iter().enumerate() {
                if !seen[j] && self.adj[k][l] {
                    seen[j] = true;
                    queue.push_back(l);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

/// Uniform SU positions on the unit square.
pub fn random_positions<R: Rng + ?Sized>(rng: &mut R, k_count: usize) -> Vec<(f64, f64)> {
    (0..k_count).map(|_| (rng.random(), rng.random())).collect()
}

/// Smallest radius on a 0.01 grid for which every group induces a connected
/// subgraph of the unit-disk graph, and that graph.
pub fn minimal_connecting_graph(positions: &[(f64, f64)], groups: &[Vec<usize>]) -> (NeighborGraph, f64) {
    // sqrt(2) connects every pair on the unit square.
    for step in 1..=142 {
        let radius = step as f64 / 100.0;
        let g = NeighborGraph::geometric(positions, radius);
        if groups.iter().all(|grp| g.connected_within(grp)) {
            return (g, radius);
        }
    }
    (NeighborGraph::complete(positions.len()), 1.42)
}

/// `mu` if the update is stable on `members`, else `1 / (deg + 1)`. The flag
/// reports whether `mu` was replaced.
pub fn stable_step_size(mu: f64, graph: &NeighborGraph, members: &[usize]) -> (f64, bool) {
    let deg = graph.max_degree_within(members);
    if deg == 0 || mu * (deg as f64) < 1.0 {
        (mu, false)
    } else {
        (1.0 / (deg as f64 + 1.0), true)
    }
}

/// Statistics of the SUs sensing one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGroup {
    pub channel: usize,
    pub members: Vec<usize>,
    pub values: Vec<f64>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusState {
    pub groups: Vec<ChannelGroup>,
    pub mu: f64,
}

impl ConsensusState {
    /// Set up consensus for the given `(channel, members, initial values)`
    /// groups, checking connectivity and the step-size bound.
    pub fn new(
        groups: Vec<(usize, Vec<usize>, Vec<f64>)>,
        mu: f64,
        graph: &NeighborGraph,
    ) -> Result<Self> {
        let groups = groups
            .into_iter()
            .map(|(channel, members, values)| {
                if members.len() != values.len() {
                    return Err(Error::invalid(format!(
                        "channel {channel}: {} members but {} statistics",
                        members.len(),
                        values.len()
                    )));
                }
                if members.iter().any(|&k| k >= graph.len()) {
                    return Err(Error::invalid(format!("channel {channel}: member outside the graph")));
                }
                Ok(ChannelGroup {
                    channel,
                    members,
                    values,
                    iteration: 0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let state = Self { groups, mu };
        for g in &state.groups {
            state.check_group(g, graph)?;
        }
        Ok(state)
    }

    fn check_group(&self, group: &ChannelGroup, graph: &NeighborGraph) -> Result<()> {
        if !graph.connected_within(&group.members) {
            return Err(Error::Configuration(format!(
                "SUs sensing channel {} do not form a connected neighbour subgraph",
                group.channel
            )));
        }
        let deg = graph.max_degree_within(&group.members);
        if self.mu.is_nan() || self.mu < 0.0 || (deg > 0 && self.mu * deg as f64 >= 1.0) {
            return Err(Error::Configuration(format!(
                "step size {} violates 0 <= mu < 1/{deg} on channel {}",
                self.mu, group.channel
            )));
        }
        Ok(())
    }

    pub fn group(&self, channel: usize) -> Option<&ChannelGroup> {
        self.groups.iter().find(|g| g.channel == channel)
    }

    /// Statistic currently held by `su` for `channel`.
    pub fn value(&self, su: usize, channel: usize) -> Option<f64> {
        let g = self.group(channel)?;
        g.members.iter().position(|&k| k == su).map(|j| g.values[j])
    }
}

/// One synchronous consensus update on `channel`:
/// `L_k <- L_k + mu * sum_{l in N_k, l senses channel} (L_l - L_k)`.
pub fn consensus_step(state: &ConsensusState, graph: &NeighborGraph, channel: usize) -> Result<ConsensusState> {
    let idx = state
        .groups
        .iter()
        .position(|g| g.channel == channel)
        .ok_or_else(|| Error::invalid(format!("no consensus group for channel {channel}")))?;
    let mut next = state.clone();
    state.check_group(&state.groups[idx], graph)?;
    step_group(&state.groups[idx], &mut next.groups[idx], graph, state.mu);
    Ok(next)
}

fn step_group(cur: &ChannelGroup, out: &mut ChannelGroup, graph: &NeighborGraph, mu: f64) {
    for (j, &k) in cur.members.iter().enumerate() {
        let pull: f64 = cur
            .members
            .iter()
            .zip(&cur.values)
            .filter(|&(&l, _)| graph.adjacent(k, l))
            .map(|(_, &v)| v - cur.values[j])
            .sum();
        out.values[j] = cur.values[j] + mu * pull;
    }
    out.iteration = cur.iteration + 1;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub su: usize,
    pub channel: usize,
    pub statistic: f64,
}

fn trace_rows(state: &ConsensusState, out: &mut Vec<TraceRow>) {
    for g in &state.groups {
        for (&su, &statistic) in g.members.iter().zip(&g.values) {
            out.push(TraceRow {
                iteration: g.iteration,
                su,
                channel: g.channel,
                statistic,
            });
        }
    }
}

/// Run `iterations` synchronous rounds on every channel group. The trace holds
/// the values at every iteration including the initial one.
pub fn run_consensus(
    initial: &ConsensusState,
    graph: &NeighborGraph,
    iterations: usize,
) -> Result<(ConsensusState, Vec<TraceRow>)> {
    for g in &initial.groups {
        initial.check_group(g, graph)?;
    }
    let mut trace = Vec::new();
    trace_rows(initial, &mut trace);
    let mut cur = initial.clone();
    let mut next = initial.clone();
    for _ in 0..iterations {
        for (c, n) in cur.groups.iter().zip(next.groups.iter_mut()) {
            step_group(c, n, graph, cur.mu);
        }
        std::mem::swap(&mut cur, &mut next);
        trace_rows(&cur, &mut trace);
    }
    Ok((cur, trace))
}

/// Same as [`run_consensus`] without recording a trace.
pub fn run_consensus_quiet(
    initial: &ConsensusState,
    graph: &NeighborGraph,
    iterations: usize,
) -> Result<ConsensusState> {
    for g in &initial.groups {
        initial.check_group(g, graph)?;
    }
    let mut cur = initial.clone();
    let mut next = initial.clone();
    for _ in 0..iterations {
        for (c, n) in cur.groups.iter().zip(next.groups.iter_mut()) {
            step_group(c, n, graph, cur.mu);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(cur)
}

/// Each SU compares its converged statistic with its own threshold.
pub fn decide_post_consensus(
    state: &ConsensusState,
    threshold: impl Fn(usize, usize) -> f64,
) -> Vec<SensingDecision> {
    state
        .groups
        .iter()
        .flat_map(|g| {
            let threshold = &threshold;
            g.members.iter().zip(&g.values).map(move |(&su, &statistic)| SensingDecision {
                statistic,
                decided: decide(statistic, threshold(su, g.channel)),
                channel: g.channel,
                su,
            })
        })
        .collect()
}

/// Write a consensus trace as CSV: `iteration,su_id,channel,statistic`.
pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> Result<()> {
    writeln!(w, "iteration,su_id,channel,statistic")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.iteration, r.su, r.channel + 1, r.statistic)?;
    }
    Ok(())
}
