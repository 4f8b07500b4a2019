//! Synthetic attention masks.

use crate::error::{Error, Result};
use crate::graph::SYNTHETIC_EDGE_TYPE;
use crate::graph::EdgeType;
use crate::linalg::CsrMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Recipe for an attention mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskSpec {
    /// Use a program's own graph adjacency. [`build_mask`] rejects this
    /// variant: the caller holds the graph and should pass its adjacency.
    Graph,
    /// Symmetric random mask with self-loops, `density * nodes^2` entries.
    Random { density: f64, seed: u64 },
    /// Attend everywhere.
    Complete,
}

/// Builds a synthetic `nodes x nodes` mask (all values 1.0).
///
/// `Random` masks contain every self-loop plus uniformly sampled undirected
/// off-diagonal pairs (both directions present), totaling
/// `round(density * nodes^2)` structural entries up to symmetry rounding:
/// the off-diagonal budget is rounded to a whole number of pairs, half up.
/// A density whose entry budget cannot cover the mandatory self-loops is
/// rejected with [`Error::DensityTooLow`].
pub fn build_mask(spec: &MaskSpec, nodes: usize) -> Result<CsrMatrix> {
    if nodes == 0 {
        return Err(Error::InvalidParameter(
            "build_mask: mask needs at least one node".to_string(),
        ));
    }
    match *spec {
        MaskSpec::Graph => Err(Error::WrongKind(
            "build_mask fabricates synthetic masks; graph masks come from CodeGraph::adjacency"
                .to_string(),
        )),
        MaskSpec::Complete => {
            let edges: Vec<(usize, usize, f64)> = (0..nodes)
                .flat_map(|i| (0..nodes).map(move |j| (i, j, 1.0)))
                .collect();
            CsrMatrix::from_edges(nodes, nodes, &edges)
        }
        MaskSpec::Random { density, seed } => {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "build_mask: density must lie in (0, 1], got {density}"
                )));
            }
            let target = (density * (nodes * nodes) as f64).round() as usize;
            if target < nodes {
                return Err(Error::DensityTooLow { density, nodes });
            }
            let max_pairs = nodes * (nodes - 1) / 2;
            let pairs = (((target - nodes) + 1) / 2).min(max_pairs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut edges: Vec<(usize, usize, f64)> =
                (0..nodes).map(|i| (i, i, 1.0)).collect();
            for flat in rand::seq::index::sample(&mut rng, max_pairs, pairs) {
                let (i, j) = unflatten_upper_triangle(flat, nodes);
                edges.push((i, j, 1.0));
                edges.push((j, i, 1.0));
            }
            CsrMatrix::from_edges(nodes, nodes, &edges)
        }
    }
}

/// Maps a flat index over the strict upper triangle (row-major) back to
/// `(i, j)` with `i < j`. Row `i` owns `n - 1 - i` slots starting at
/// `i*n - i*(i+1)/2`.
fn unflatten_upper_triangle(flat: usize, n: usize) -> (usize, usize) {
    let offset = |i: usize| i * n - i * (i + 1) / 2;
    let (mut lo, mut hi) = (0usize, n - 1);
    while lo < hi {
        let mid = (lo + hi + 1) / 2;
        if offset(mid) <= flat {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let i = lo;
    let j = i + 1 + (flat - offset(i));
    (i, j)
}

/// Edge-type ids for a synthetic mask: self-loops keep their structural
/// type, everything else is the synthetic filler type.
pub fn mask_edge_type_ids(mask: &CsrMatrix) -> Vec<Vec<usize>> {
    let mut ids = Vec::with_capacity(mask.nnz());
    for i in 0..mask.rows() {
        for (j, _) in mask.row_entries(i) {
            ids.push(vec![if i == j {
                EdgeType::SelfLoop.index()
            } else {
                SYNTHETIC_EDGE_TYPE
            }]);
        }
    }
    ids
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_mask_is_all_ones() {
        let m = build_mask(&MaskSpec::Complete, 4).unwrap();
        assert_eq!(m.nnz(), 16);
        assert!(m.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn random_mask_hits_the_documented_entry_count() {
        // 100 nodes at density 0.03: 300 entries, exactly.
        let m = build_mask(
            &MaskSpec::Random {
                density: 0.03,
                seed: 9,
            },
            100,
        )
        .unwrap();
        assert_eq!(m.nnz(), 300);
        assert!(m.pattern().has_full_diagonal());
        assert!(m.pattern().is_structurally_symmetric());
    }

    #[test]
    fn random_mask_is_deterministic_per_seed() {
        let spec = MaskSpec::Random {
            density: 0.1,
            seed: 42,
        };
        let a = build_mask(&spec, 50).unwrap();
        let b = build_mask(&spec, 50).unwrap();
        assert_eq!(a.col_indices(), b.col_indices());
        let c = build_mask(
            &MaskSpec::Random {
                density: 0.1,
                seed: 43,
            },
            50,
        )
        .unwrap();
        assert_ne!(a.col_indices(), c.col_indices());
    }

    #[test]
    fn density_one_is_the_complete_mask() {
        let m = build_mask(
            &MaskSpec::Random {
                density: 1.0,
                seed: 1,
            },
            6,
        )
        .unwrap();
        assert_eq!(m.nnz(), 36);
    }

    #[test]
    fn too_low_density_is_rejected() {
        assert!(matches!(
            build_mask(
                &MaskSpec::Random {
                    density: 0.05,
                    seed: 1
                },
                10
            ),
            Err(Error::DensityTooLow { .. })
        ));
        assert!(matches!(
            build_mask(
                &MaskSpec::Random {
                    density: 1.5,
                    seed: 1
                },
                10
            ),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn graph_spec_is_rejected() {
        assert!(matches!(
            build_mask(&MaskSpec::Graph, 5),
            Err(Error::WrongKind(_))
        ));
    }

    #[test]
    fn upper_triangle_unflatten_enumerates_all_pairs() {
        let n = 7;
        let mut seen = std::collections::HashSet::new();
        for flat in 0..(n * (n - 1) / 2) {
            let (i, j) = unflatten_upper_triangle(flat, n);
            assert!(i < j && j < n, "bad pair ({i}, {j})");
            assert!(seen.insert((i, j)), "duplicate pair ({i}, {j})");
        }
        assert_eq!(seen.len(), n * (n - 1) / 2);
    }

    #[test]
    fn synthetic_type_ids_mark_loops_and_fillers() {
        let m = build_mask(
            &MaskSpec::Random {
                density: 0.5,
                seed: 3,
            },
            8,
        )
        .unwrap();
        let ids = mask_edge_type_ids(&m);
        assert_eq!(ids.len(), m.nnz());
        let mut slot = 0;
        for i in 0..m.rows() {
            for (j, _) in m.row_entries(i) {
                let expect = if i == j {
                    EdgeType::SelfLoop.index()
                } else {
                    SYNTHETIC_EDGE_TYPE
                };
                assert_eq!(ids[slot], vec![expect]);
                slot += 1;
            }
        }
    }
}
