//! Truncated attention diffusion.
//!
//! Replaces a one-hop row-stochastic operator `A` with a geometric mixture
//! of its powers, approximated by a restart recurrence:
//!
//! ```text
//! Z(k+1) = (1 - alpha) * A * Z(k) + alpha * Z(0)
//! ```
//!
//! After `K` steps the result equals `sum_i theta_i * A^i * Z0` with
//! `theta_i = alpha * (1 - alpha)^i` for `i < K` and the truncation mass
//! `(1 - alpha)^K` on the final power, a convex combination of hop depths.
//! The sparse recurrence costs `K * O(nnz * d)`; no matrix power is ever
//! materialized.

use crate::error::{Error, Result};
use crate::linalg::{masked_outer, CsrMatrix, DenseMatrix};
use crate::Real;
use serde::{Deserialize, Serialize};

/// Hop count, restart weight, and the derived hop-depth weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiffusionConfig", into = "RawDiffusionConfig")]
pub struct DiffusionConfig {
    k: usize,
    alpha: Real,
    theta: Vec<Real>,
}

/// Wire form of [`DiffusionConfig`]; `theta` is derived, never stored.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawDiffusionConfig {
    k: usize,
    alpha: Real,
}

impl TryFrom<RawDiffusionConfig> for DiffusionConfig {
    type Error = Error;

    fn try_from(raw: RawDiffusionConfig) -> Result<DiffusionConfig> {
        DiffusionConfig::new(raw.k, raw.alpha)
    }
}

impl From<DiffusionConfig> for RawDiffusionConfig {
    fn from(cfg: DiffusionConfig) -> RawDiffusionConfig {
        RawDiffusionConfig {
            k: cfg.k,
            alpha: cfg.alpha,
        }
    }
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        DiffusionConfig::new(2, 0.25).expect("default parameters are valid")
    }
}

impl DiffusionConfig {
    /// Validates `alpha` in (0, 1] and derives the weights.
    ///
    /// The final weight is computed as `1 - sum(theta[..k])` rather than
    /// `(1-alpha)^k`: re-summing the stored entries in order reproduces the
    /// partial sum bit for bit and the closing addition rounds to exactly
    /// 1.0, so the weights partition unity in floating point, not only in
    /// exact arithmetic. All entries are strictly positive for alpha < 1;
    /// at alpha = 1
    /// every weight past the first collapses to zero and diffusion fixes
    /// Z0.
    pub fn new(k: usize, alpha: Real) -> Result<DiffusionConfig> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "diffusion alpha must lie in (0, 1], got {alpha}"
            )));
        }
        let mut theta = Vec::with_capacity(k + 1);
        let mut partial = 0.0;
        let mut power = 1.0; // (1 - alpha)^i
        for _ in 0..k {
            let w = alpha * power;
            theta.push(w);
            partial += w;
            power *= 1.0 - alpha;
        }
        let last = 1.0 - partial;
        if last < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "diffusion alpha {alpha} is so close to 1 that the k = {k} remainder weight underflows"
            )));
        }
        theta.push(last);
        Ok(DiffusionConfig { k, alpha, theta })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn alpha(&self) -> Real {
        self.alpha
    }

    /// Hop-depth weights, `k + 1` entries summing to exactly 1.0.
    pub fn theta(&self) -> &[Real] {
        &self.theta
    }
}

/// Applies the restart recurrence after checking that `a` is square and
/// row-stochastic within 1e-10 (softmax output always is; looser inputs
/// are bugs).
pub fn diffuse(a: &CsrMatrix, z0: &DenseMatrix, cfg: &DiffusionConfig) -> Result<DenseMatrix> {
    check_shapes(a, z0)?;
    if let Err((row, sum)) = a.check_row_stochastic(1e-10) {
        return Err(Error::NotRowStochastic { row, sum });
    }
    diffuse_unchecked(a, z0, cfg)
}

/// The recurrence without the stochasticity check. Finite-difference tests
/// perturb `a`'s values and need this entry point; everything else should
/// call [`diffuse`].
pub fn diffuse_unchecked(
    a: &CsrMatrix,
    z0: &DenseMatrix,
    cfg: &DiffusionConfig,
) -> Result<DenseMatrix> {
    check_shapes(a, z0)?;
    let mut z = z0.clone();
    for _ in 0..cfg.k {
        z = restart_step(a.spmm(&z)?, z0, cfg.alpha);
    }
    Ok(z)
}

/// Saved forward states for the backward pass: `Z(0) .. Z(K)` plus the
/// operator they were produced with.
#[derive(Clone, Debug)]
pub struct DiffusionCache {
    cfg: DiffusionConfig,
    a: CsrMatrix,
    states: Vec<DenseMatrix>,
}

impl DiffusionCache {
    pub fn output(&self) -> &DenseMatrix {
        self.states.last().expect("cache holds k + 1 states")
    }

    pub fn cfg(&self) -> &DiffusionConfig {
        &self.cfg
    }
}

/// Forward pass that additionally records every intermediate state.
pub fn diffuse_with_cache(
    a: &CsrMatrix,
    z0: &DenseMatrix,
    cfg: &DiffusionConfig,
) -> Result<DiffusionCache> {
    check_shapes(a, z0)?;
    let mut states = Vec::with_capacity(cfg.k + 1);
    states.push(z0.clone());
    for k in 0..cfg.k {
        let next = restart_step(a.spmm(&states[k])?, z0, cfg.alpha);
        states.push(next);
    }
    Ok(DiffusionCache {
        cfg: cfg.clone(),
        a: a.clone(),
        states,
    })
}

/// Reverse-mode gradients of the recurrence.
///
/// Walking the recurrence backwards: at step `k` the upstream gradient `g`
/// contributes `(1-alpha) * g x Z(k-1)` to the structural entries of `A`,
/// `alpha * g` to `Z(0)`, and propagates as `(1-alpha) * A^T g` to the
/// previous state. The surviving `g` after all steps lands on `Z(0)` once
/// more (the recurrence starts there).
///
/// Returns gradients for `A`'s structural values (same pattern) and for
/// `Z(0)`.
pub fn diffuse_backward(
    grad_zk: &DenseMatrix,
    cache: &DiffusionCache,
) -> Result<(CsrMatrix, DenseMatrix)> {
    let out = cache.output();
    if grad_zk.shape() != out.shape() {
        return Err(Error::StaleCache(format!(
            "diffusion gradient shape {:?} does not match cached output {:?}",
            grad_zk.shape(),
            out.shape()
        )));
    }
    if cache.states.len() != cache.cfg.k + 1 {
        return Err(Error::StaleCache(format!(
            "diffusion cache holds {} states for k = {}",
            cache.states.len(),
            cache.cfg.k
        )));
    }
    let alpha = cache.cfg.alpha;
    let mut grad_a = CsrMatrix::from_pattern(
        cache.a.pattern().clone(),
        vec![0.0; cache.a.nnz()],
    )?;
    let mut grad_z0 = DenseMatrix::zeros(grad_zk.rows(), grad_zk.cols());
    let mut g = grad_zk.clone();
    for k in (1..=cache.cfg.k).rev() {
        let prev = &cache.states[k - 1];
        let local = masked_outer(cache.a.pattern(), &g, prev)?;
        for (slot, v) in local.values().iter().enumerate() {
            grad_a.values_mut()[slot] += (1.0 - alpha) * v;
        }
        grad_z0.axpy(alpha, &g)?;
        g = cache.a.spmm_t(&g)?.scale(1.0 - alpha);
    }
    grad_z0.add_assign(&g)?;
    Ok((grad_a, grad_z0))
}

/// Dense reference: evaluates `sum_i theta_i * A^i * Z0` by explicit
/// repeated multiplication. O(N^2 d K); for validating the recurrence on
/// small instances only.
pub fn diffuse_oracle(
    a: &DenseMatrix,
    z0: &DenseMatrix,
    cfg: &DiffusionConfig,
) -> Result<DenseMatrix> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "diffusion operator must be square, got {} x {}",
            a.rows(),
            a.cols()
        )));
    }
    let mut power = z0.clone(); // A^i * Z0
    let mut out = z0.scale(cfg.theta[0]);
    for &weight in &cfg.theta[1..] {
        power = a.matmul(&power)?;
        out.axpy(weight, &power)?;
    }
    Ok(out)
}

/// Structural pattern of `(I union mask)^k`: the node pairs reachable
/// within `k` hops. All values 1.0; `k = 0` yields the identity pattern.
pub fn receptive_field(mask: &CsrMatrix, k: usize) -> CsrMatrix {
    assert_eq!(mask.rows(), mask.cols(), "receptive field needs a square mask");
    let n = mask.rows();
    let mut edges: Vec<(usize, usize, Real)> = Vec::new();
    let mut seen = vec![usize::MAX; n]; // last source that visited each node
    let mut frontier = Vec::new();
    let mut next = Vec::new();
    for i in 0..n {
        seen[i] = i;
        edges.push((i, i, 1.0));
        frontier.clear();
        frontier.push(i);
        for _ in 0..k {
            next.clear();
            for &node in &frontier {
                for &col in mask.pattern().row_cols(node) {
                    if seen[col] != i {
                        seen[col] = i;
                        edges.push((i, col, 1.0));
                        next.push(col);
                    }
                }
            }
            std::mem::swap(&mut frontier, &mut next);
        }
    }
    CsrMatrix::from_edges(n, n, &edges).expect("bfs emits unique in-range pairs")
}

fn check_shapes(a: &CsrMatrix, z0: &DenseMatrix) -> Result<()> {
    if a.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "diffusion operator must be square, got {} x {}",
            a.rows(),
            a.cols()
        )));
    }
    if z0.rows() != a.cols() {
        return Err(Error::DimensionMismatch(format!(
            "diffusion state has {} rows under a {}-node operator",
            z0.rows(),
            a.rows()
        )));
    }
    Ok(())
}

/// `(1 - alpha) * az + alpha * z0`, consuming the propagated term.
fn restart_step(mut az: DenseMatrix, z0: &DenseMatrix, alpha: Real) -> DenseMatrix {
    for (v, &z) in az.data_mut().iter_mut().zip(z0.data()) {
        *v = (1.0 - alpha) * *v + alpha * z;
    }
    az
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{fd_gradient, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random row-stochastic operator over a random pattern with a full
    /// diagonal.
    fn random_stochastic(n: usize, rng: &mut ChaCha8Rng) -> CsrMatrix {
        let mut edges = Vec::new();
        for i in 0..n {
            edges.push((i, i, rng.gen_range(0.1..1.0)));
            for _ in 0..rng.gen_range(1..4usize) {
                let j = rng.gen_range(0..n);
                if edges.iter().all(|&(s, d, _)| (s, d) != (i, j)) {
                    edges.push((i, j, rng.gen_range(0.1..1.0)));
                }
            }
        }
        let raw = CsrMatrix::from_edges(n, n, &edges).unwrap();
        let sums = raw.row_sums();
        let mut values = raw.values().to_vec();
        for i in 0..n {
            for slot in raw.pattern().row_range(i) {
                values[slot] /= sums[i];
            }
        }
        CsrMatrix::from_pattern(raw.pattern().clone(), values).unwrap()
    }

    fn random_dense(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn theta_partitions_unity_exactly() {
        for k in 0..=6 {
            for alpha in [0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0] {
                let cfg = DiffusionConfig::new(k, alpha).unwrap();
                assert_eq!(cfg.theta().len(), k + 1);
                let total: f64 = cfg.theta().iter().sum();
                assert_eq!(total, 1.0, "k={k} alpha={alpha}");
                if alpha < 1.0 {
                    assert!(cfg.theta().iter().all(|&t| t > 0.0), "k={k} alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn invalid_alpha_is_rejected() {
        assert!(DiffusionConfig::new(2, 0.0).is_err());
        assert!(DiffusionConfig::new(2, -0.5).is_err());
        assert!(DiffusionConfig::new(2, 1.5).is_err());
        assert!(DiffusionConfig::new(2, f64::NAN).is_err());
    }

    #[test]
    fn config_round_trips_through_serde_and_rederives_theta() {
        let cfg = DiffusionConfig::new(3, 0.25).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert!(!text.contains("theta"), "derived weights must not be stored: {text}");
        let back: DiffusionConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert!(serde_json::from_str::<DiffusionConfig>("{\"k\":2,\"alpha\":7.0}").is_err());
    }

    #[test]
    fn identity_operator_fixes_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z0 = random_dense(6, 3, &mut rng);
        for k in [0, 1, 3, 6] {
            for alpha in [0.1, 0.5, 1.0] {
                let cfg = DiffusionConfig::new(k, alpha).unwrap();
                let out = diffuse(&CsrMatrix::identity(6), &z0, &cfg).unwrap();
                assert!(out.max_abs_diff(&z0).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn alpha_one_returns_the_input_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_stochastic(7, &mut rng);
        let z0 = random_dense(7, 4, &mut rng);
        let cfg = DiffusionConfig::new(4, 1.0).unwrap();
        let out = diffuse(&a, &z0, &cfg).unwrap();
        assert_eq!(out.max_abs_diff(&z0).unwrap(), 0.0);
    }

    #[test]
    fn zero_hops_returns_the_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_stochastic(5, &mut rng);
        let z0 = random_dense(5, 2, &mut rng);
        let cfg = DiffusionConfig::new(0, 0.25).unwrap();
        let out = diffuse(&a, &z0, &cfg).unwrap();
        assert_eq!(out.max_abs_diff(&z0).unwrap(), 0.0);
        let oracle = diffuse_oracle(&a.to_dense(), &z0, &cfg).unwrap();
        assert!(oracle.max_abs_diff(&z0).unwrap() < 1e-15);
    }

    #[test]
    fn recurrence_matches_the_dense_power_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let n = rng.gen_range(3..12);
            let a = random_stochastic(n, &mut rng);
            let z0 = random_dense(n, 3, &mut rng);
            let k = trial % 7;
            let alpha = [0.1, 0.25, 0.5][trial % 3];
            let cfg = DiffusionConfig::new(k, alpha).unwrap();
            let fast = diffuse(&a, &z0, &cfg).unwrap();
            let slow = diffuse_oracle(&a.to_dense(), &z0, &cfg).unwrap();
            assert!(
                fast.max_abs_diff(&slow).unwrap() < 1e-12,
                "trial {trial}: n={n} k={k} alpha={alpha}"
            );
        }
    }

    #[test]
    fn three_node_path_matches_a_hand_expansion() {
        // Uniform attention over a 3-node path with self-loops.
        let a = CsrMatrix::from_edges(
            3,
            3,
            &[
                (0, 0, 0.5),
                (0, 1, 0.5),
                (1, 0, 1.0 / 3.0),
                (1, 1, 1.0 / 3.0),
                (1, 2, 1.0 / 3.0),
                (2, 1, 0.5),
                (2, 2, 0.5),
            ],
        )
        .unwrap();
        let z0 = DenseMatrix::from_vec(3, 2, vec![1.0, 0.0, 0.0, 2.0, -1.0, 1.0]).unwrap();
        let alpha = 0.25;
        let cfg = DiffusionConfig::new(2, alpha).unwrap();
        let out = diffuse(&a, &z0, &cfg).unwrap();

        let ad = a.to_dense();
        let az = ad.matmul(&z0).unwrap();
        let aaz = ad.matmul(&az).unwrap();
        let mut expect = z0.scale(alpha);
        expect.axpy(alpha * (1.0 - alpha), &az).unwrap();
        expect
            .axpy((1.0 - alpha) * (1.0 - alpha), &aaz)
            .unwrap();
        assert!(out.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn constant_rows_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_stochastic(8, &mut rng);
        let v = [0.3, -1.2, 4.0];
        let z0 = DenseMatrix::from_fn(8, 3, |_, j| v[j]);
        let cfg = DiffusionConfig::new(5, 0.25).unwrap();
        let out = diffuse(&a, &z0, &cfg).unwrap();
        assert!(out.max_abs_diff(&z0).unwrap() < 1e-10);
    }

    #[test]
    fn successive_outputs_contract_by_the_restart_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let a = random_stochastic(9, &mut rng);
        let z0 = random_dense(9, 3, &mut rng);
        let alpha = 0.25;
        let cache = diffuse_with_cache(&a, &z0, &DiffusionConfig::new(8, alpha).unwrap()).unwrap();
        let mut prev_gap = None;
        for k in 1..=8 {
            let gap = cache.states[k].max_abs_diff(&cache.states[k - 1]).unwrap();
            if let Some(p) = prev_gap {
                assert!(gap <= (1.0 - alpha) * p + 1e-12, "k={k}: {gap} vs {p}");
            }
            prev_gap = Some(gap);
        }
    }

    #[test]
    fn shape_and_stochasticity_violations_are_reported() {
        let a = CsrMatrix::identity(4).map_values(|v| v * 2.0);
        let z0 = DenseMatrix::zeros(4, 2);
        let cfg = DiffusionConfig::default();
        assert!(matches!(
            diffuse(&a, &z0, &cfg),
            Err(Error::NotRowStochastic { .. })
        ));
        assert!(matches!(
            diffuse(&CsrMatrix::identity(4), &DenseMatrix::zeros(3, 2), &cfg),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn zero_hop_backward_is_a_passthrough() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_stochastic(5, &mut rng);
        let z0 = random_dense(5, 2, &mut rng);
        let cache = diffuse_with_cache(&a, &z0, &DiffusionConfig::new(0, 0.25).unwrap()).unwrap();
        let g = random_dense(5, 2, &mut rng);
        let (grad_a, grad_z0) = diffuse_backward(&g, &cache).unwrap();
        assert_eq!(grad_z0.max_abs_diff(&g).unwrap(), 0.0);
        assert!(grad_a.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_restart_kills_the_operator_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_stochastic(5, &mut rng);
        let z0 = random_dense(5, 2, &mut rng);
        let cache = diffuse_with_cache(&a, &z0, &DiffusionConfig::new(3, 1.0).unwrap()).unwrap();
        let g = random_dense(5, 2, &mut rng);
        let (grad_a, grad_z0) = diffuse_backward(&g, &cache).unwrap();
        assert!(grad_a.values().iter().all(|&v| v == 0.0));
        assert_eq!(grad_z0.max_abs_diff(&g).unwrap(), 0.0);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for seed in [13, 14, 15] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(4..10);
            let a = random_stochastic(n, &mut rng);
            let z0 = random_dense(n, 2, &mut rng);
            let k = rng.gen_range(1..=3usize);
            let cfg = DiffusionConfig::new(k, 0.25).unwrap();
            // Scalar probe: weighted sum of the output entries.
            let w = random_dense(n, 2, &mut rng);
            let loss = |out: &DenseMatrix| {
                out.data()
                    .iter()
                    .zip(w.data())
                    .map(|(o, wi)| o * wi)
                    .sum::<f64>()
            };

            let cache = diffuse_with_cache(&a, &z0, &cfg).unwrap();
            let (grad_a, grad_z0) = diffuse_backward(&w, &cache).unwrap();

            let fd_z0 = fd_gradient(
                |z: &DenseMatrix| loss(&diffuse_unchecked(&a, z, &cfg).unwrap()),
                &z0,
                1e-6,
            )
            .unwrap();
            assert!(max_rel_err(&grad_z0, &fd_z0) < 1e-4, "seed {seed} z0");

            // Perturbing structural values leaves row sums != 1; the
            // unchecked path is the function under test here.
            let packed = DenseMatrix::from_vec(1, a.nnz(), a.values().to_vec()).unwrap();
            let fd_a = fd_gradient(
                |vals: &DenseMatrix| {
                    let cand =
                        CsrMatrix::from_pattern(a.pattern().clone(), vals.data().to_vec())
                            .unwrap();
                    loss(&diffuse_unchecked(&cand, &z0, &cfg).unwrap())
                },
                &packed,
                1e-6,
            )
            .unwrap();
            let analytic = DenseMatrix::from_vec(1, a.nnz(), grad_a.values().to_vec()).unwrap();
            assert!(max_rel_err(&analytic, &fd_a) < 1e-4, "seed {seed} a");
        }
    }

    #[test]
    fn mismatched_gradient_shape_is_a_stale_cache() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let a = random_stochastic(5, &mut rng);
        let z0 = random_dense(5, 2, &mut rng);
        let cache = diffuse_with_cache(&a, &z0, &DiffusionConfig::default()).unwrap();
        let bad = DenseMatrix::zeros(5, 3);
        assert!(matches!(
            diffuse_backward(&bad, &cache),
            Err(Error::StaleCache(_))
        ));
    }

    #[test]
    fn receptive_field_of_zero_hops_is_the_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_stochastic(6, &mut rng);
        let rf = receptive_field(&a, 0);
        assert_eq!(rf.nnz(), 6);
        assert!(rf.pattern().has_full_diagonal());
    }

    #[test]
    fn receptive_field_on_a_path_graph() {
        // 5-node path with self-loops; two hops from node 0 reach {0,1,2}.
        let mut edges = Vec::new();
        for i in 0..5 {
            edges.push((i, i, 1.0));
            if i + 1 < 5 {
                edges.push((i, i + 1, 1.0));
                edges.push((i + 1, i, 1.0));
            }
        }
        let path = CsrMatrix::from_edges(5, 5, &edges).unwrap();
        let rf = receptive_field(&path, 2);
        assert_eq!(rf.pattern().row_cols(0), &[0, 1, 2]);
        assert_eq!(rf.pattern().row_cols(2), &[0, 1, 2, 3, 4]);
    }

    #[test]
    fn receptive_field_matches_a_boolean_power_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let a = random_stochastic(8, &mut rng);
        for k in 0..4 {
            let rf = receptive_field(&a, k);
            // Boolean oracle: (I | A)^k via dense multiplication.
            let n = a.rows();
            let mut reach = DenseMatrix::identity(n);
            let base = {
                let mut b = a.to_dense().map(|v| if v != 0.0 { 1.0 } else { 0.0 });
                for i in 0..n {
                    b.set(i, i, 1.0);
                }
                b
            };
            for _ in 0..k {
                reach = reach.matmul(&base).unwrap().map(|v| if v > 0.0 { 1.0 } else { 0.0 });
            }
            for i in 0..n {
                for j in 0..n {
                    let expected = reach.get(i, j) > 0.0;
                    assert_eq!(rf.get(i, j).is_some(), expected, "k={k} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn diffusion_reach_over_a_code_graph_tracks_hop_distance() {
        // Diffusing a one-hot signal spreads it exactly k hops: entries are
        // nonnegative sums of path products, so nothing cancels.
        let g = crate::graph::CodeGraph::from_source("x = a + b").unwrap();
        let n = g.node_count();
        let a = g.adjacency.masked_row_softmax().unwrap();
        let source = 2; // token 'a'
        assert_eq!(g.tokens[source].text, "a");
        let z0 = DenseMatrix::from_fn(n, 1, |i, _| if i == source { 1.0 } else { 0.0 });
        let dist = crate::graph::bfs_distances(g.adjacency.pattern(), source);
        for k in 0..4 {
            let out = diffuse(&a, &z0, &DiffusionConfig::new(k, 0.25).unwrap()).unwrap();
            let rf = receptive_field(&g.adjacency, k);
            for i in 0..n {
                let within = dist[i].map_or(false, |d| d <= k);
                assert_eq!(out.get(i, 0) != 0.0, within, "k={k} node {i}");
                assert_eq!(rf.get(i, source).is_some(), within, "rf k={k} node {i}");
            }
        }
    }
}
