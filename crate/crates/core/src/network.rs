//! Communication graphs and doubly stochastic mixing weights.
//!
//! Agents sit on the nodes of a connected undirected [`Topology`]. The
//! [`MixingMatrix`] assigns the weight agent `i` gives to agent `j`'s belief;
//! it is symmetric, doubly stochastic and has a positive diagonal.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Resampling cap for [`random_geometric_graph`].
pub const MAX_LAYOUT_ATTEMPTS: usize = 10_000;

/// Tolerance on row and column sums of a [`MixingMatrix`].
pub const STOCHASTIC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("a network needs at least one agent")]
    NoAgents,
    #[error("radius {0} outside (0, sqrt(2)]")]
    InvalidRadius(f64),
    #[error("radius too small: no connected layout after {attempts} attempts")]
    RadiusTooSmall { attempts: usize },
    #[error("self-loop on agent {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) references an agent outside 0..{2}")]
    AgentOutOfRange(usize, usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("edge list line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("weights are not a valid mixing matrix: {0}")]
    InvalidWeights(String),
}

/// A connected undirected graph over agents `0..m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    agents: usize,
    edges: BTreeSet<(usize, usize)>,
    positions: Option<Vec<[f64; 2]>>,
}

impl Topology {
    /// Builds a topology from undirected edges, normalizing each pair to `(lo, hi)`.
    pub fn new<I>(agents: usize, edges: I) -> Result<Self, NetworkError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        if agents == 0 {
            return Err(NetworkError::NoAgents);
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a >= agents || b >= agents {
                return Err(NetworkError::AgentOutOfRange(a, b, agents));
            }
            if a == b {
                return Err(NetworkError::SelfLoop(a));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let topology = Self {
            agents,
            edges: set,
            positions: None,
        };
        if !topology.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(topology)
    }

    pub fn complete(agents: usize) -> Result<Self, NetworkError> {
        Self::new(agents, (0..agents).flat_map(|i| (i + 1..agents).map(move |j| (i, j))))
    }

    pub fn ring(agents: usize) -> Result<Self, NetworkError> {
        let edges = if agents < 2 {
            Vec::new()
        } else {
            (0..agents).map(|i| (i, (i + 1) % agents)).filter(|(a, b)| a != b).collect()
        };
        Self::new(agents, edges)
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn positions(&self) -> Option<&[[f64; 2]]> {
        self.positions.as_deref()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.agents];
        for &(a, b) in &self.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
        deg
    }

    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.agents * (self.agents - 1) / 2
    }

    fn is_connected(&self) -> bool {
        // union-find
        let mut parent: Vec<usize> = (0..self.agents).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.agents;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
        components == 1
    }

    /// Parses the edge-list format: first line `m`, then one `i j` pair per line.
    ///
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_edge_list(text: &str) -> Result<Self, NetworkError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(NetworkError::Parse {
            line: 1,
            message: "missing agent count".into(),
        })?;
        let agents: usize = header.parse().map_err(|_| NetworkError::Parse {
            line,
            message: format!("expected agent count, got `{header}`"),
        })?;
        let mut edges = Vec::new();
        for (line, text) in lines {
            let parts: Vec<&str> = text.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>().map_err(|_| NetworkError::Parse {
                    line,
                    message: format!("`{s}` is not an agent index"),
                })
            };
            match parts.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => {
                    return Err(NetworkError::Parse {
                        line,
                        message: format!("expected `i j`, got `{text}`"),
                    })
                }
            }
        }
        Self::new(agents, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{}\n", self.agents);
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// Samples a random geometric graph on the unit square, conditioned on connectivity.
///
/// Points are drawn uniformly and joined when their distance is at most
/// `radius`. Disconnected layouts are discarded whole and redrawn.
pub fn random_geometric_graph<R: Rng + ?Sized>(
    agents: usize,
    radius: f64,
    rng: &mut R,
) -> Result<Topology, NetworkError> {
    if agents == 0 {
        return Err(NetworkError::NoAgents);
    }
    if !(radius > 0.0 && radius <= std::f64::consts::SQRT_2) {
        return Err(NetworkError::InvalidRadius(radius));
    }
    let r2 = radius * radius;
    for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let points: Vec<[f64; 2]> = (0..agents).map(|_| [rng.random(), rng.random()]).collect();
        let mut edges = Vec::new();
        for i in 0..agents {
            for j in i + 1..agents {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                if dx * dx + dy * dy <= r2 {
                    edges.push((i, j));
                }
            }
        }
        match Topology::new(agents, edges) {
            Ok(mut topology) => {
                topology.positions = Some(points);
                return Ok(topology);
            }
            Err(NetworkError::Disconnected) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(NetworkError::RadiusTooSmall {
        attempts: MAX_LAYOUT_ATTEMPTS,
    })
}

/// Symmetric doubly stochastic weights with a positive diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    weights: DMatrix<f64>,
    eta: f64,
    lambda_bound: f64,
    // row i: (j, A_ij) for every A_ij > 0, j ascending
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Validates and wraps a weight matrix.
    pub fn from_weights(weights: DMatrix<f64>) -> Result<Self, NetworkError> {
        let m = weights.nrows();
        if m == 0 {
            return Err(NetworkError::NoAgents);
        }
        if weights.ncols() != m {
            return Err(NetworkError::InvalidWeights("matrix is not square".into()));
        }
        for i in 0..m {
            if !(weights[(i, i)] > 0.0) {
                return Err(NetworkError::InvalidWeights(format!("diagonal entry {i} is not positive")));
            }
            for j in 0..m {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(NetworkError::InvalidWeights(format!("entry ({i}, {j}) = {w}")));
                }
                if (w - weights[(j, i)]).abs() > STOCHASTIC_TOLERANCE {
                    return Err(NetworkError::InvalidWeights(format!("not symmetric at ({i}, {j})")));
                }
            }
            let row: f64 = weights.row(i).sum();
            let col: f64 = weights.column(i).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOLERANCE || (col - 1.0).abs() > STOCHASTIC_TOLERANCE {
                return Err(NetworkError::InvalidWeights(format!("row/column {i} sums to {row}/{col}")));
            }
        }
        let eta = weights.iter().copied().filter(|&w| w > 0.0).fold(f64::INFINITY, f64::min);
        let lambda_bound = 1.0 - eta / (4.0 * (m * m) as f64);
        let rows = (0..m)
            .map(|i| (0..m).filter(|&j| weights[(i, j)] > 0.0).map(|j| (j, weights[(i, j)])).collect())
            .collect();
        Ok(Self {
            weights,
            eta,
            lambda_bound,
            rows,
        })
    }

    /// `A = (1/m) 11'`, the equal-weight average on a complete graph.
    pub fn uniform(agents: usize) -> Result<Self, NetworkError> {
        Self::from_weights(DMatrix::from_element(agents, agents, 1.0 / agents as f64))
    }

    pub fn agents(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    /// Smallest positive entry.
    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `1 - eta / (4 m^2)`.
    pub fn lambda_bound(&self) -> f64 {
        self.lambda_bound
    }

    /// Positive entries of row `i` as `(column, weight)`.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.agents() {
            let row: Vec<String> = self.weights.row(i).iter().map(|w| format!("{w:.17e}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Lazy Metropolis weights: `A_ij = 1 / (2 max(d_i, d_j))` on edges, remainder on the diagonal.
pub fn lazy_metropolis(topology: &Topology) -> MixingMatrix {
    let m = topology.agents();
    let deg = topology.degrees();
    let mut w = DMatrix::zeros(m, m);
    for &(a, b) in topology.edges() {
        let v = 1.0 / (2.0 * deg[a].max(deg[b]) as f64);
        w[(a, b)] = v;
        w[(b, a)] = v;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_weights(w).expect("lazy Metropolis weights are doubly stochastic")
}

/// Spectral norm of `A^t - (1/m) 11'`.
pub fn consensus_gap(matrix: &MixingMatrix, t: u32) -> f64 {
    let m = matrix.agents();
    let avg = DMatrix::from_element(m, m, 1.0 / m as f64);
    let deviation = if t == 0 {
        DMatrix::identity(m, m) - avg
    } else {
        // A J = J A = J, so (A - J/m)^t = A^t - J/m without cancellation.
        matrix_power(&(matrix.weights() - avg), t)
    };
    spectral_norm(&deviation)
}

fn matrix_power(base: &DMatrix<f64>, mut exp: u32) -> DMatrix<f64> {
    let n = base.nrows();
    let mut result = DMatrix::identity(n, n);
    let mut square = base.clone();
    while exp > 0 {
        if exp & 1 == 1 {
            result = &result * &square;
        }
        exp >>= 1;
        if exp > 0 {
            square = &square * &square;
        }
    }
    result
}

/// Largest singular value by power iteration on `M'M`.
pub fn spectral_norm(matrix: &DMatrix<f64>) -> f64 {
    let scale = matrix.amax();
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let scaled = matrix / scale;
    let gram = scaled.transpose() * &scaled;
    let n = gram.ncols();
    // fixed irrational-looking start so no eigenvector is systematically missed
    let mut v = DVector::from_fn(n, |i, _| ((i as f64 + 1.0) * 0.618_033_988_749_895).fract() + 0.1);
    v /= v.norm();
    let mut estimate = 0.0;
    for _ in 0..100_000 {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - estimate).abs() <= 1e-12 * next.abs() {
            estimate = next;
            break;
        }
        estimate = next;
    }
    scale * estimate.max(0.0).sqrt()
}
