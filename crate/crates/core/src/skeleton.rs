//! Human-skeleton spatial graphs and their partitioned, normalized
//! adjacency stacks.
//!
//! A partition's raw adjacency is normalized as `D^{-1/2} A D^{-1/2}` where
//! `D` holds each joint's degree in the partition's symmetrized support;
//! rows of joints absent from a partition stay zero. The spatial strategy
//! splits the 1-hop neighborhood into self / centripetal / centrifugal by
//! hop distance to the center joint, with equal-distance neighbors counted
//! as centripetal.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;

/// Joint wiring of a skeleton, plus the center joint used as the
/// gravity-center proxy for the spatial partition strategy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonGraph {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
    name: String,
}

/// 18-keypoint wiring (OpenPose COCO output order):
/// 0 nose, 1 neck, 2 r-shoulder, 3 r-elbow, 4 r-wrist, 5 l-shoulder,
/// 6 l-elbow, 7 l-wrist, 8 r-hip, 9 r-knee, 10 r-ankle, 11 l-hip,
/// 12 l-knee, 13 l-ankle, 14 r-eye, 15 l-eye, 16 r-ear, 17 l-ear.
const BODY18_EDGES: [(usize, usize); 17] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

/// 25-keypoint wiring (OpenPose BODY_25 output order):
/// 0 nose, 1 neck, 2 r-shoulder, 3 r-elbow, 4 r-wrist, 5 l-shoulder,
/// 6 l-elbow, 7 l-wrist, 8 mid-hip, 9 r-hip, 10 r-knee, 11 r-ankle,
/// 12 l-hip, 13 l-knee, 14 l-ankle, 15 r-eye, 16 l-eye, 17 r-ear,
/// 18 l-ear, 19 l-big-toe, 20 l-small-toe, 21 l-heel, 22 r-big-toe,
/// 23 r-small-toe, 24 r-heel.
const BODY25_EDGES: [(usize, usize); 24] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (10, 11),
    (8, 12),
    (12, 13),
    (13, 14),
    (0, 15),
    (15, 17),
    (0, 16),
    (16, 18),
    (14, 19),
    (19, 20),
    (14, 21),
    (11, 22),
    (22, 23),
    (11, 24),
];

#[derive(Deserialize)]
struct TopologyFile {
    num_joints: usize,
    edges: Vec<(usize, usize)>,
    center: usize,
}

impl SkeletonGraph {
    /// 18-joint skeleton; center is the neck.
    pub fn body18() -> Self {
        Self {
            num_joints: 18,
            edges: BODY18_EDGES.to_vec(),
            center: 1,
            name: "body18".into(),
        }
    }

    /// 25-joint skeleton; center is the mid-hip.
    pub fn body25() -> Self {
        Self {
            num_joints: 25,
            edges: BODY25_EDGES.to_vec(),
            center: 8,
            name: "body25".into(),
        }
    }

    /// Path graph `0-1-...-(n-1)` rooted at joint 0.
    pub fn chain(n: usize) -> Result<Self> {
        Self::custom(
            n,
            (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect(),
            0,
            &format!("chain({n})"),
        )
    }

    pub fn custom(
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
        name: &str,
    ) -> Result<Self> {
        if num_joints < 2 {
            return Err(Error::Graph(format!(
                "at least 2 joints required, got {num_joints}"
            )));
        }
        if center >= num_joints {
            return Err(Error::Graph(format!(
                "center {center} out of range for {num_joints} joints"
            )));
        }
        for &(a, b) in &edges {
            if a >= num_joints || b >= num_joints {
                return Err(Error::Graph(format!(
                    "edge ({a},{b}) out of range for {num_joints} joints"
                )));
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at joint {a}")));
            }
        }
        let g = Self {
            num_joints,
            edges,
            center,
            name: name.to_string(),
        };
        if !g.is_connected() {
            return Err(Error::Graph("graph is not connected".into()));
        }
        Ok(g)
    }

    /// Loads `{"num_joints": N, "edges": [[i,j],...], "center": c}`.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let f: TopologyFile = serde_json::from_str(json)?;
        Self::custom(f.num_joints, f.edges, f.center, "custom")
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn num_joints(&self) -> usize {
        self.num_joints
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// BFS hop distances from `src`.
    pub fn hop_distances(&self, src: usize) -> Vec<usize> {
        let adj = self.neighbors();
        let mut dist = vec![usize::MAX; self.num_joints];
        let mut queue = VecDeque::new();
        dist[src] = 0;
        queue.push_back(src);
        while let Some(v) = queue.pop_front() {
            for &u in &adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        dist
    }

    /// For each joint, its neighbor on a shortest path toward the center.
    /// The center maps to itself. Used to define bones.
    pub fn parents_toward_center(&self) -> Vec<usize> {
        let dist = self.hop_distances(self.center);
        let adj = self.neighbors();
        (0..self.num_joints)
            .map(|j| {
                if j == self.center {
                    j
                } else {
                    // deterministic: lowest-index closer neighbor
                    *adj[j]
                        .iter()
                        .filter(|&&u| dist[u] + 1 == dist[j])
                        .min()
                        .expect("connected graph has a parent")
                }
            })
            .collect()
    }

    fn is_connected(&self) -> bool {
        self.hop_distances(0).iter().all(|&d| d != usize::MAX)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Single partition of the self-looped adjacency.
    Uniform,
    /// Self / centripetal / centrifugal split by hop distance to the center.
    SpatialConfig,
}

/// Stack of `K_v` normalized `N x N` adjacency partitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyStack {
    n: usize,
    strategy: PartitionStrategy,
    partitions: Vec<Vec<f64>>,
}

impl AdjacencyStack {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    pub fn num_partitions(&self) -> usize {
        self.partitions.len()
    }

    pub fn partitions(&self) -> &[Vec<f64>] {
        &self.partitions
    }

    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.partitions
            .iter()
            .map(|p| Tensor::new(vec![self.n, self.n], p.clone()).expect("square partition"))
            .collect()
    }

    /// Boolean support of the partition sum.
    pub fn support(&self) -> Vec<bool> {
        let mut sup = vec![false; self.n * self.n];
        for p in &self.partitions {
            for (s, &v) in sup.iter_mut().zip(p) {
                *s |= v != 0.0;
            }
        }
        sup
    }
}

/// Builds the normalized adjacency stack for a graph.
pub fn build_adjacency(g: &SkeletonGraph, strategy: PartitionStrategy) -> AdjacencyStack {
    let n = g.num_joints();
    let mut raw_partitions: Vec<Vec<f64>> = Vec::new();
    match strategy {
        PartitionStrategy::Uniform => {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                a[i * n + i] = 1.0;
            }
            for &(i, j) in g.edges() {
                a[i * n + j] = 1.0;
                a[j * n + i] = 1.0;
            }
            raw_partitions.push(a);
        }
        PartitionStrategy::SpatialConfig => {
            let dist = g.hop_distances(g.center());
            let mut self_p = vec![0.0; n * n];
            let mut centripetal = vec![0.0; n * n];
            let mut centrifugal = vec![0.0; n * n];
            for i in 0..n {
                self_p[i * n + i] = 1.0;
            }
            for &(a, b) in g.edges() {
                for (i, j) in [(a, b), (b, a)] {
                    // entry (i, j): joint i looking at neighbor j
                    if dist[j] <= dist[i] {
                        centripetal[i * n + j] = 1.0;
                    } else {
                        centrifugal[i * n + j] = 1.0;
                    }
                }
            }
            raw_partitions.push(self_p);
            raw_partitions.push(centripetal);
            raw_partitions.push(centrifugal);
        }
    }
    let partitions = raw_partitions
        .into_iter()
        .map(|p| normalize_partition(&p, n))
        .collect();
    AdjacencyStack {
        n,
        strategy,
        partitions,
    }
}

/// `D^{-1/2} A D^{-1/2}` with degrees taken over the symmetrized support;
/// zero-degree rows are left zero.
fn normalize_partition(raw: &[f64], n: usize) -> Vec<f64> {
    let mut degree = vec![0.0f64; n];
    for i in 0..n {
        for j in 0..n {
            if raw[i * n + j] != 0.0 || raw[j * n + i] != 0.0 {
                degree[i] += 1.0;
            }
        }
    }
    let inv_sqrt: Vec<f64> = degree
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv_sqrt[i] * raw[i * n + j] * inv_sqrt[j];
        }
    }
    out
}

/// Applies `P^T A_k P` to every partition for a joint permutation `perm`,
/// where `perm[i]` is the new index of joint `i`.
pub fn permute_graph(
    g: &SkeletonGraph,
    stack: &AdjacencyStack,
    perm: &[usize],
) -> Result<AdjacencyStack> {
    let n = g.num_joints();
    if stack.n != n {
        return Err(Error::Dimension {
            op: "permute_graph",
            msg: format!("stack of {} joints vs graph of {n}", stack.n),
        });
    }
    if perm.len() != n {
        return Err(Error::Graph(format!(
            "permutation of length {} for {n} joints",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(Error::Graph("permutation is not a bijection".into()));
        }
        seen[p] = true;
    }
    let partitions = stack
        .partitions
        .iter()
        .map(|a| {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    out[perm[i] * n + perm[j]] = a[i * n + j];
                }
            }
            out
        })
        .collect();
    Ok(AdjacencyStack {
        n,
        strategy: stack.strategy,
        partitions,
    })
}

/// Permutes the joint axis of a `C x T x N` tensor to match `permute_graph`.
pub fn permute_joints(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 || s[2] != perm.len() {
        return Err(Error::Dimension {
            op: "permute_joints",
            msg: format!("shape {s:?} vs permutation of {}", perm.len()),
        });
    }
    let (c, t, n) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; c * t * n];
    let xv = x.data();
    for row in 0..c * t {
        for j in 0..n {
            out[row * n + perm[j]] = xv[row * n + j];
        }
    }
    Tensor::new(vec![c, t, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectral_radius(a: &[f64], n: usize) -> f64 {
        // power iteration on the entrywise-absolute matrix dominates the
        // spectral radius of a nonnegative matrix
        let mut v = vec![1.0; n];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                for j in 0..n {
                    w[i] += a[i * n + j].abs() * v[j];
                }
            }
            lambda = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if lambda == 0.0 {
                return 0.0;
            }
            v = w.iter().map(|x| x / lambda).collect();
        }
        lambda
    }

    #[test]
    fn body18_has_18_joints_17_edges_connected() {
        let g = SkeletonGraph::body18();
        assert_eq!(g.num_joints(), 18);
        assert_eq!(g.edges().len(), 17);
        assert!(g.hop_distances(0).iter().all(|&d| d != usize::MAX));
        assert_eq!(g.center(), 1);
    }

    #[test]
    fn body25_is_connected() {
        let g = SkeletonGraph::body25();
        assert_eq!(g.num_joints(), 25);
        assert!(g.hop_distances(0).iter().all(|&d| d != usize::MAX));
        assert_eq!(g.center(), 8);
    }

    #[test]
    fn chain3_definition() {
        let g = SkeletonGraph::chain(3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(g.center(), 0);
    }

    #[test]
    fn too_small_and_disconnected_graphs_rejected() {
        assert!(SkeletonGraph::chain(1).is_err());
        assert!(SkeletonGraph::custom(4, vec![(0, 1), (2, 3)], 0, "split").is_err());
        assert!(SkeletonGraph::custom(3, vec![(0, 0), (1, 2)], 0, "loop").is_err());
    }

    #[test]
    fn custom_topology_from_json() {
        let g = SkeletonGraph::from_json_str(
            r#"{"num_joints": 3, "edges": [[0,1],[1,2]], "center": 1}"#,
        )
        .unwrap();
        assert_eq!(g.num_joints(), 3);
        assert_eq!(g.center(), 1);
    }

    #[test]
    fn uniform_chain3_hand_computed() {
        // self-looped chain(3) degrees are (2, 3, 2)
        let g = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&g, PartitionStrategy::Uniform);
        assert_eq!(stack.num_partitions(), 1);
        let a = &stack.partitions()[0];
        assert!((a[0] - 0.5).abs() < 1e-15); // (0,0) = 1/2
        assert!((a[1] - 1.0 / 6f64.sqrt()).abs() < 1e-15); // (0,1) = 1/sqrt(6)
        assert!((a[4] - 1.0 / 3.0).abs() < 1e-15); // (1,1) = 1/3
    }

    #[test]
    fn single_node_self_loop_normalizes_to_one() {
        assert_eq!(normalize_partition(&[1.0], 1), vec![1.0]);
    }

    #[test]
    fn spatial_partition_sum_has_uniform_support() {
        for g in [
            SkeletonGraph::chain(3).unwrap(),
            SkeletonGraph::body18(),
            SkeletonGraph::body25(),
        ] {
            let uniform = build_adjacency(&g, PartitionStrategy::Uniform);
            let spatial = build_adjacency(&g, PartitionStrategy::SpatialConfig);
            assert_eq!(spatial.num_partitions(), 3);
            assert_eq!(uniform.support(), spatial.support());
        }
    }

    #[test]
    fn partitions_are_nonnegative_with_bounded_spectrum() {
        for g in [SkeletonGraph::body18(), SkeletonGraph::chain(6).unwrap()] {
            for strategy in [PartitionStrategy::Uniform, PartitionStrategy::SpatialConfig] {
                let stack = build_adjacency(&g, strategy);
                for p in stack.partitions() {
                    assert!(p.iter().all(|&v| v >= 0.0));
                    let rho = spectral_radius(p, g.num_joints());
                    assert!(rho <= 1.0 + 1e-9, "radius {rho}");
                }
            }
        }
    }

    #[test]
    fn uniform_partition_is_symmetric() {
        for g in [SkeletonGraph::body18(), SkeletonGraph::body25()] {
            let stack = build_adjacency(&g, PartitionStrategy::Uniform);
            let n = g.num_joints();
            let a = &stack.partitions()[0];
            for i in 0..n {
                for j in 0..n {
                    assert_eq!(a[i * n + j], a[j * n + i]);
                }
            }
        }
    }

    #[test]
    fn permute_identity_and_involution() {
        let g = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&g, PartitionStrategy::SpatialConfig);
        let id: Vec<usize> = (0..3).collect();
        assert_eq!(permute_graph(&g, &stack, &id).unwrap(), stack);

        let swap = vec![2, 1, 0];
        let once = permute_graph(&g, &stack, &swap).unwrap();
        assert_ne!(once, stack);
        let twice = permute_graph(&g, &once, &swap).unwrap();
        assert_eq!(twice, stack);
    }

    #[test]
    fn permute_matches_dense_oracle() {
        let g = SkeletonGraph::body18();
        let stack = build_adjacency(&g, PartitionStrategy::Uniform);
        let n = g.num_joints();
        let mut rng = crate::rng::stream(17, "perm");
        let mut perm: Vec<usize> = (0..n).collect();
        crate::rng::shuffle(&mut rng, &mut perm);
        let permuted = permute_graph(&g, &stack, &perm).unwrap();
        let a = &stack.partitions()[0];
        let b = &permuted.partitions()[0];
        for i in 0..n {
            for j in 0..n {
                assert_eq!(b[perm[i] * n + perm[j]], a[i * n + j]);
            }
        }
    }

    #[test]
    fn permute_rejects_non_bijection() {
        let g = SkeletonGraph::chain(3).unwrap();
        let stack = build_adjacency(&g, PartitionStrategy::Uniform);
        assert!(permute_graph(&g, &stack, &[0, 0, 1]).is_err());
        assert!(permute_graph(&g, &stack, &[0, 1]).is_err());
    }

    #[test]
    fn parents_point_toward_center() {
        let g = SkeletonGraph::body18();
        let parents = g.parents_toward_center();
        assert_eq!(parents[1], 1); // neck is the center
        assert_eq!(parents[4], 3); // r-wrist -> r-elbow
        assert_eq!(parents[3], 2); // r-elbow -> r-shoulder
        assert_eq!(parents[2], 1); // r-shoulder -> neck
        assert_eq!(parents[17], 15); // l-ear -> l-eye
    }
}
