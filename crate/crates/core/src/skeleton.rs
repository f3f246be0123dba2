//! Skeleton graph: topology, exact-k-hop matrices, normalized affinities and
//! limb groups.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor, Var};

pub const H36M_JOINTS: usize = 16;

/// Joint names of the 16-joint layout, by index.
pub const H36M_JOINT_NAMES: [&str; H36M_JOINTS] = [
    "pelvis",
    "r_hip",
    "r_knee",
    "r_foot",
    "l_hip",
    "l_knee",
    "l_foot",
    "spine",
    "thorax",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
];

/// Kinematic tree of the 16-joint layout as `(parent, child)` pairs.
pub const H36M_EDGES: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (8, 10),
    (10, 11),
    (11, 12),
    (8, 13),
    (13, 14),
    (14, 15),
];

pub const DEFAULT_MAX_HOPS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LimbGroup {
    pub name: String,
    pub joints: Vec<usize>,
}

impl LimbGroup {
    pub fn new(name: &str, joints: &[usize]) -> Self {
        LimbGroup {
            name: name.to_string(),
            joints: joints.to_vec(),
        }
    }
}

pub fn h36m_limb_groups() -> Vec<LimbGroup> {
    vec![
        LimbGroup::new("right_leg", &[1, 2, 3]),
        LimbGroup::new("left_leg", &[4, 5, 6]),
        LimbGroup::new("torso", &[0, 7, 8, 9]),
        LimbGroup::new("left_arm", &[10, 11, 12]),
        LimbGroup::new("right_arm", &[13, 14, 15]),
    ]
}

/// Square 0/1 matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    bits: Vec<bool>,
}

impl HopMatrix {
    pub fn zeros(n: usize) -> Self {
        HopMatrix {
            n,
            bits: vec![false; n * n],
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
    }

    pub fn is_zero(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[self.n, self.n], &self.to_f64()).expect("square shape")
    }
}

/// Immutable skeleton graph with cached hop matrices.
#[derive(Debug, Clone)]
pub struct SkeletonGraph {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    root: usize,
    distances: Vec<usize>,
    hop_matrices: Vec<HopMatrix>,
    limb_groups: Option<Vec<LimbGroup>>,
}

impl SkeletonGraph {
    /// Build a connected skeleton and cache hop matrices `A^1..A^max_hops`.
    pub fn build(num_joints: usize, edges: &[(usize, usize)], root: usize, max_hops: usize) -> Result<Self> {
        if num_joints == 0 {
            return Err(Error::Graph("skeleton needs at least one joint".into()));
        }
        if root >= num_joints {
            return Err(Error::Graph(format!("root {root} out of range for {num_joints} joints")));
        }
        let mut seen = BTreeSet::new();
        let mut adj = vec![Vec::new(); num_joints];
        for &(a, b) in edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Graph(format!("edge ({a}, {b}) out of range for {num_joints} joints")));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at joint {a}")));
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(Error::Graph(format!("duplicate edge ({a}, {b})")));
            }
            adj[a].push(b);
            adj[b].push(a);
        }

        let distances = bfs_all_pairs(&adj);
        if let Some(pos) = distances.iter().position(|&d| d == usize::MAX) {
            return Err(Error::Graph(format!(
                "graph is disconnected: no path between joints {} and {}",
                pos / num_joints,
                pos % num_joints
            )));
        }
        let mut g = SkeletonGraph {
            num_joints,
            edges: edges.to_vec(),
            root,
            distances,
            hop_matrices: Vec::new(),
            limb_groups: None,
        };
        g.hop_matrices = (1..=max_hops).map(|k| g.compute_hop(k)).collect();
        Ok(g)
    }

    /// The 16-joint human skeleton with its five limb groups.
    pub fn human36m(max_hops: usize) -> Self {
        Self::build(H36M_JOINTS, &H36M_EDGES, 0, max_hops)
            .and_then(|g| g.with_limb_groups(h36m_limb_groups()))
            .expect("canonical skeleton is valid")
    }

    /// Attach limb groups; they must partition the joints.
    pub fn with_limb_groups(mut self, groups: Vec<LimbGroup>) -> Result<Self> {
        validate_partition(self.num_joints, &groups)?;
        self.limb_groups = Some(groups);
        Ok(self)
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn max_hops(&self) -> usize {
        self.hop_matrices.len()
    }

    /// Shortest-path hop distance.
    pub fn distance(&self, i: usize, j: usize) -> usize {
        self.distances[i * self.num_joints + j]
    }

    pub fn diameter(&self) -> usize {
        self.distances.iter().copied().max().unwrap_or(0)
    }

    fn compute_hop(&self, k: usize) -> HopMatrix {
        let n = self.num_joints;
        let mut m = HopMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if self.distance(i, j) == k {
                    m.set(i, j);
                }
            }
        }
        m
    }

    /// `A^k`: entry `(i, j)` is 1 iff the shortest path between `i` and `j`
    /// has exactly `k` edges. Hops past the diameter give the zero matrix.
    pub fn hop_matrix(&self, k: usize) -> Result<HopMatrix> {
        if k == 0 {
            return Err(Error::Graph("hop order must be at least 1".into()));
        }
        Ok(match self.hop_matrices.get(k - 1) {
            Some(m) => m.clone(),
            None => self.compute_hop(k),
        })
    }

    /// Adjacency matrix of the edge set.
    pub fn adjacency(&self) -> HopMatrix {
        let mut m = HopMatrix::zeros(self.num_joints);
        for &(a, b) in &self.edges {
            m.set(a, b);
            m.set(b, a);
        }
        m
    }

    pub fn limb_groups(&self) -> Result<&[LimbGroup]> {
        self.limb_groups
            .as_deref()
            .ok_or_else(|| Error::Graph("skeleton has no limb groups; supply them explicitly".into()))
    }

    /// Parse the plain-text skeleton format:
    ///
    /// ```text
    /// 3            # joint count
    /// 0 1          # one edge per line
    /// 1 2
    /// root 0       # optional, defaults to 0
    /// group arm 1 2
    /// ```
    pub fn parse(text: &str, max_hops: usize) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, first) = lines
            .next()
            .ok_or_else(|| Error::Graph("empty skeleton file".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Graph(format!("line 1: expected joint count, got {first:?}")))?;
        let mut edges = Vec::new();
        let mut groups = Vec::new();
        let mut root = 0;
        let idx = |lineno: usize, s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Graph(format!("line {lineno}: bad joint index {s:?}")))
        };
        for (lineno, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["group", name, joints @ ..] if !joints.is_empty() => {
                    let joints = joints.iter().map(|s| idx(lineno, s)).collect::<Result<Vec<_>>>()?;
                    groups.push(LimbGroup::new(name, &joints));
                }
                ["root", r] => root = idx(lineno, r)?,
                [a, b] => edges.push((idx(lineno, a)?, idx(lineno, b)?)),
                _ => return Err(Error::Graph(format!("line {lineno}: cannot parse {line:?}"))),
            }
        }
        let g = Self::build(n, &edges, root, max_hops)?;
        if groups.is_empty() {
            Ok(g)
        } else {
            g.with_limb_groups(groups)
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.num_joints);
        for &(a, b) in &self.edges {
            let _ = writeln!(s, "{a} {b}");
        }
        if self.root != 0 {
            let _ = writeln!(s, "root {}", self.root);
        }
        for g in self.limb_groups.iter().flatten() {
            let joints: Vec<String> = g.joints.iter().map(|j| j.to_string()).collect();
            let _ = writeln!(s, "group {} {}", g.name, joints.join(" "));
        }
        s
    }
}

fn bfs_all_pairs(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut dist = vec![usize::MAX; n * n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if row[v] == usize::MAX {
                    row[v] = row[u] + 1;
                    queue.push_back(v);
                }
            }
        }
    }
    dist
}

fn validate_partition(n: usize, groups: &[LimbGroup]) -> Result<()> {
    let mut owner = vec![None; n];
    for g in groups {
        if g.joints.is_empty() {
            return Err(Error::Graph(format!("limb group {:?} is empty", g.name)));
        }
        for &j in &g.joints {
            if j >= n {
                return Err(Error::Graph(format!("limb group {:?}: joint {j} out of range", g.name)));
            }
            if let Some(prev) = owner[j].replace(&g.name) {
                return Err(Error::Graph(format!("joint {j} is in both {prev:?} and {:?}", g.name)));
            }
        }
    }
    if let Some(j) = owner.iter().position(Option::is_none) {
        return Err(Error::Graph(format!("joint {j} belongs to no limb group")));
    }
    Ok(())
}

/// A normalized affinity matrix for one hop order.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: Tensor<f64>,
    pub hop: usize,
}

/// Elementwise squashing applied to a learnable additive graph before it is
/// added to the skeleton matrix.
pub fn squash_learnable(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tape counterpart of [`squash_learnable`].
pub fn squash_learnable_on<T: Real>(tape: &Tape<T>, l: Var) -> Result<Var> {
    tape.sigmoid(l)
}

fn check_square(a: &[f64], n: usize) -> Result<()> {
    if a.len() != n * n {
        return Err(Error::invalid("normalize_affinity", format!("{} values for {n}x{n}", a.len())));
    }
    if a.iter().any(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::invalid("normalize_affinity", "matrix must be nonnegative"));
    }
    Ok(())
}

/// `D^{-1/2} (A + S(L) + I) D^{-1/2}` where `S` is [`squash_learnable`] and
/// `D` the degree matrix of the augmented graph; `L` is optional.
pub fn normalize_affinity(a: &[f64], n: usize, learnable: Option<&[f64]>, hop: usize) -> Result<AffinityMatrix> {
    check_square(a, n)?;
    let mut m = a.to_vec();
    if let Some(l) = learnable {
        if l.len() != n * n {
            return Err(Error::invalid("normalize_affinity", "learnable graph has the wrong size"));
        }
        for (mv, &lv) in m.iter_mut().zip(l) {
            *mv += squash_learnable(lv);
        }
    }
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    let r: Vec<f64> = m
        .chunks_exact(n)
        .map(|row| 1.0 / row.iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] *= r[i] * r[j];
        }
    }
    Ok(AffinityMatrix {
        values: Tensor::new(&[n, n], m)?,
        hop,
    })
}

/// Row-stochastic variant `D^{-1} (A + I)`.
pub fn row_normalize_affinity(a: &[f64], n: usize, hop: usize) -> Result<AffinityMatrix> {
    check_square(a, n)?;
    let mut m = a.to_vec();
    for i in 0..n {
        m[i * n + i] += 1.0;
    }
    for row in m.chunks_exact_mut(n) {
        let d: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= d);
    }
    Ok(AffinityMatrix {
        values: Tensor::new(&[n, n], m)?,
        hop,
    })
}

/// Differentiable affinity: `plus_identity` is the constant `A + I`, the
/// optional `learnable` leaf is squashed and added before normalization.
pub fn affinity_on<T: Real>(tape: &Tape<T>, plus_identity: Var, learnable: Option<Var>) -> Result<Var> {
    let m = match learnable {
        Some(l) => {
            let s = squash_learnable_on(tape, l)?;
            tape.add(plus_identity, s)?
        }
        None => plus_identity,
    };
    tape.sym_normalize(m)
}
