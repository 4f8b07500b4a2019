//! Linear pointer heads over token representations.
//!
//! Location scoring appends one extra slot for the no-bug decision,
//! computed from the mean-pooled token states, so a single softmax covers
//! "which token is wrong" and "nothing is wrong" at once. Repair scoring
//! runs over tokens only. Rows past `token_count` (the AST nodes) are
//! ignored entirely and receive zero gradient.

use super::{argmax, flags_for, SampleFlags, VarMisuseSample};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::Real;
use rand::Rng;

/// Head parameters. Weights are `d_model x 1` columns, biases `1 x 1`, so
/// the checkpoint and optimizer see plain matrices.
#[derive(Clone, Debug)]
pub struct PointerHeads {
    pub w_loc: DenseMatrix,
    pub b_loc: DenseMatrix,
    pub w_nobug: DenseMatrix,
    pub b_nobug: DenseMatrix,
    pub w_rep: DenseMatrix,
    pub b_rep: DenseMatrix,
}

impl PointerHeads {
    pub fn init(d_model: usize, rng: &mut impl Rng) -> PointerHeads {
        let bound = 1.0 / (d_model as Real).sqrt();
        let mut w = || DenseMatrix::from_fn(d_model, 1, |_, _| rng.gen_range(-bound..bound));
        PointerHeads {
            w_loc: w(),
            b_loc: DenseMatrix::zeros(1, 1),
            w_nobug: w(),
            b_nobug: DenseMatrix::zeros(1, 1),
            w_rep: w(),
            b_rep: DenseMatrix::zeros(1, 1),
        }
    }

    pub fn zeros(d_model: usize) -> PointerHeads {
        PointerHeads {
            w_loc: DenseMatrix::zeros(d_model, 1),
            b_loc: DenseMatrix::zeros(1, 1),
            w_nobug: DenseMatrix::zeros(d_model, 1),
            b_nobug: DenseMatrix::zeros(1, 1),
            w_rep: DenseMatrix::zeros(d_model, 1),
            b_rep: DenseMatrix::zeros(1, 1),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w_loc.rows()
    }

    pub fn validate(&self, d_model: usize) -> Result<()> {
        let named = self.named();
        for (name, m) in &named {
            let expect = if name.contains(".w") { (d_model, 1) } else { (1, 1) };
            if m.shape() != expect {
                return Err(Error::DimensionMismatch(format!(
                    "{name} shape {:?}, expected {expect:?}",
                    m.shape()
                )));
            }
            if !m.is_finite() {
                return Err(Error::NonFiniteOutput(format!(
                    "{name} holds a non-finite value"
                )));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &DenseMatrix); 6] {
        [
            ("heads.loc.w", &self.w_loc),
            ("heads.loc.b", &self.b_loc),
            ("heads.nobug.w", &self.w_nobug),
            ("heads.nobug.b", &self.b_nobug),
            ("heads.rep.w", &self.w_rep),
            ("heads.rep.b", &self.b_rep),
        ]
    }

    /// Same naming scheme as the encoder's tensor walk; the two sets are
    /// disjoint, so a model checkpoint stores both side by side.
    pub fn for_each_tensor<'a>(&'a self, f: &mut impl FnMut(String, &'a DenseMatrix)) {
        f("heads.loc.w".to_string(), &self.w_loc);
        f("heads.loc.b".to_string(), &self.b_loc);
        f("heads.nobug.w".to_string(), &self.w_nobug);
        f("heads.nobug.b".to_string(), &self.b_nobug);
        f("heads.rep.w".to_string(), &self.w_rep);
        f("heads.rep.b".to_string(), &self.b_rep);
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(String, &mut DenseMatrix)) {
        f("heads.loc.w".to_string(), &mut self.w_loc);
        f("heads.loc.b".to_string(), &mut self.b_loc);
        f("heads.nobug.w".to_string(), &mut self.w_nobug);
        f("heads.nobug.b".to_string(), &mut self.b_nobug);
        f("heads.rep.w".to_string(), &mut self.w_rep);
        f("heads.rep.b".to_string(), &mut self.b_rep);
    }
}

/// Mean-pooled token state kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadsCache {
    token_count: usize,
    mean: DenseMatrix,
}

/// Scores every token and the no-bug slot. Returns
/// `(loc_logits, rep_logits, cache)` with `token_count + 1` location
/// logits (no-bug last) and `token_count` repair logits.
pub fn pointer_heads_forward(
    h: &DenseMatrix,
    token_count: usize,
    heads: &PointerHeads,
) -> Result<(Vec<Real>, Vec<Real>, HeadsCache)> {
    let d = heads.d_model();
    if h.cols() != d {
        return Err(Error::DimensionMismatch(format!(
            "state width {} under head width {d}",
            h.cols()
        )));
    }
    if token_count == 0 || token_count > h.rows() {
        return Err(Error::DimensionMismatch(format!(
            "token_count {token_count} for {} state rows",
            h.rows()
        )));
    }
    let dot = |row: &[Real], w: &DenseMatrix| -> Real {
        row.iter().zip(w.data()).map(|(&x, &wk)| x * wk).sum()
    };
    let mut loc = Vec::with_capacity(token_count + 1);
    let mut rep = Vec::with_capacity(token_count);
    let mut mean = DenseMatrix::zeros(1, d);
    for i in 0..token_count {
        let row = h.row(i);
        loc.push(dot(row, &heads.w_loc) + heads.b_loc.get(0, 0));
        rep.push(dot(row, &heads.w_rep) + heads.b_rep.get(0, 0));
        for (acc, &x) in mean.row_mut(0).iter_mut().zip(row) {
            *acc += x;
        }
    }
    for acc in mean.data_mut() {
        *acc /= token_count as Real;
    }
    loc.push(dot(mean.row(0), &heads.w_nobug) + heads.b_nobug.get(0, 0));
    Ok((loc, rep, HeadsCache { token_count, mean }))
}

/// Gradients of [`pointer_heads_forward`]: returns the gradient with
/// respect to `h` (zero on AST rows) and the head parameter gradients.
pub fn pointer_heads_backward(
    d_loc: &[Real],
    d_rep: &[Real],
    h: &DenseMatrix,
    cache: &HeadsCache,
    heads: &PointerHeads,
) -> Result<(DenseMatrix, PointerHeads)> {
    let d = heads.d_model();
    let count = cache.token_count;
    if h.cols() != d || cache.mean.cols() != d || count > h.rows() {
        return Err(Error::StaleCache(format!(
            "head cache over {count} tokens width {} against state {:?}",
            cache.mean.cols(),
            h.shape()
        )));
    }
    if d_loc.len() != count + 1 || d_rep.len() != count {
        return Err(Error::DimensionMismatch(format!(
            "gradient lengths ({}, {}) for {count} tokens",
            d_loc.len(),
            d_rep.len()
        )));
    }
    let mut dh = DenseMatrix::zeros(h.rows(), h.cols());
    let mut grads = PointerHeads::zeros(d);
    let d_nobug = d_loc[count];
    for i in 0..count {
        let row = h.row(i);
        let out = dh.row_mut(i);
        for k in 0..d {
            out[k] = d_loc[i] * heads.w_loc.get(k, 0)
                + d_rep[i] * heads.w_rep.get(k, 0)
                + d_nobug / count as Real * heads.w_nobug.get(k, 0);
            grads
                .w_loc
                .set(k, 0, grads.w_loc.get(k, 0) + d_loc[i] * row[k]);
            grads
                .w_rep
                .set(k, 0, grads.w_rep.get(k, 0) + d_rep[i] * row[k]);
        }
    }
    for k in 0..d {
        grads.w_nobug.set(k, 0, d_nobug * cache.mean.get(0, k));
    }
    grads
        .b_loc
        .set(0, 0, d_loc[..count].iter().sum::<Real>());
    grads.b_nobug.set(0, 0, d_nobug);
    grads.b_rep.set(0, 0, d_rep.iter().sum::<Real>());
    Ok((dh, grads))
}

/// Per-sample loss, correctness flags and logit gradients in one bundle.
#[derive(Clone, Debug)]
pub struct SampleLoss {
    pub loss: Real,
    pub loc_loss: Real,
    pub rep_loss: Real,
    pub flags: SampleFlags,
    pub d_loc: Vec<Real>,
    pub d_rep: Vec<Real>,
}

/// Log-sum-exp and softmax in one pass; finite for finite inputs.
fn cross_entropy(logits: &[Real], target: usize) -> (Real, Vec<Real>) {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let sum: Real = logits.iter().map(|&x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    let mut grad: Vec<Real> = logits.iter().map(|&x| (x - lse).exp()).collect();
    grad[target] -= 1.0;
    (lse - logits[target], grad)
}

/// Cross-entropy over the location slots plus, on buggy samples only,
/// cross-entropy over the repair slots. Clean samples target the no-bug
/// slot and contribute zero repair gradient.
pub fn sample_loss(loc_logits: &[Real], rep_logits: &[Real], sample: &VarMisuseSample) -> SampleLoss {
    let loc_target = sample.bug_location.unwrap_or(sample.no_bug_slot());
    let (loc_loss, d_loc) = cross_entropy(loc_logits, loc_target);
    let (rep_loss, d_rep) = match sample.repair_target {
        Some(t) => cross_entropy(rep_logits, t),
        None => (0.0, vec![0.0; rep_logits.len()]),
    };
    let flags = flags_for(sample, argmax(loc_logits), argmax(rep_logits));
    SampleLoss {
        loss: loc_loss + rep_loss,
        loc_loss,
        rep_loss,
        flags,
        d_loc,
        d_rep,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CodeGraph;
    use crate::linalg::{fd_gradient, max_rel_err};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn buggy_sample() -> VarMisuseSample {
        // Tokens: a = 1 b = 2 a = b + 3; the "b" at index 8 should be "a".
        let source = "a = 1 b = 2 a = b + 3";
        VarMisuseSample {
            source: source.to_string(),
            graph: CodeGraph::from_source(source).unwrap(),
            bug_present: true,
            bug_location: Some(8),
            repair_target: Some(6),
        }
    }

    fn clean_sample() -> VarMisuseSample {
        let source = "a = 1";
        VarMisuseSample {
            source: source.to_string(),
            graph: CodeGraph::from_source(source).unwrap(),
            bug_present: false,
            bug_location: None,
            repair_target: None,
        }
    }

    #[test]
    fn logit_shapes_follow_the_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let heads = PointerHeads::init(4, &mut rng);
        let h = DenseMatrix::from_fn(3, 4, |i, j| (i * 4 + j) as Real);
        let (loc, rep, _) = pointer_heads_forward(&h, 1, &heads).unwrap();
        assert_eq!((loc.len(), rep.len()), (2, 1));
        let (loc, rep, _) = pointer_heads_forward(&h, 3, &heads).unwrap();
        assert_eq!((loc.len(), rep.len()), (4, 3));
        assert!(pointer_heads_forward(&h, 0, &heads).is_err());
        assert!(pointer_heads_forward(&h, 4, &heads).is_err());
    }

    #[test]
    fn identical_token_states_give_a_uniform_location_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let heads = PointerHeads::init(6, &mut rng);
        let one_row = DenseMatrix::from_fn(1, 6, |_, j| (j as Real).sin());
        let h = DenseMatrix::from_fn(5, 6, |_, j| one_row.get(0, j));
        let (loc, _, _) = pointer_heads_forward(&h, 5, &heads).unwrap();
        // All token slots carry one logit value (the no-bug slot runs
        // through its own head and may differ).
        for i in 1..loc.len() - 1 {
            assert!((loc[i] - loc[0]).abs() < 1e-12);
        }
        let (loss, grad) = cross_entropy(&loc[..5], 2);
        assert!((loss - (5.0 as Real).ln()).abs() < 1e-12);
        assert!((grad[0] - (0.2 - 0.0)).abs() < 1e-12);
    }

    #[test]
    fn uniform_location_prediction_costs_log_slot_count() {
        let sample = clean_sample();
        let slots = sample.no_bug_slot() + 1;
        let out = sample_loss(&vec![0.0; slots], &vec![0.0; slots - 1], &sample);
        assert!((out.loc_loss - (slots as Real).ln()).abs() < 1e-12);
        assert_eq!(out.rep_loss, 0.0);
        // Ties break low, so slot 0 wins and the clean sample is missed.
        assert!(!out.flags.predicted_no_bug);
    }

    #[test]
    fn confident_correct_predictions_cost_nearly_nothing() {
        let sample = buggy_sample();
        let l = sample.graph.token_count();
        let mut loc = vec![0.0; l + 1];
        loc[8] = 50.0;
        let mut rep = vec![0.0; l];
        rep[6] = 50.0;
        let out = sample_loss(&loc, &rep, &sample);
        assert!(out.loss < 1e-10);
        assert!(out.flags.localization_correct && out.flags.repair_correct);

        // Clean sample: the no-bug slot must win.
        let clean = clean_sample();
        let mut loc = vec![0.0; clean.no_bug_slot() + 1];
        loc[clean.no_bug_slot()] = 50.0;
        let out = sample_loss(&loc, &vec![0.0; clean.no_bug_slot()], &clean);
        assert!(out.loss < 1e-10);
        assert!(out.flags.predicted_no_bug && out.flags.localization_correct);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let sample = buggy_sample();
        let n = sample.graph.node_count();
        let l = sample.graph.token_count();
        let d = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let heads = PointerHeads::init(d, &mut rng);
        let h = DenseMatrix::from_fn(n, d, |_, _| rng.gen_range(-1.0..1.0));

        let loss_at = |h: &DenseMatrix, heads: &PointerHeads| -> Real {
            let (loc, rep, _) = pointer_heads_forward(h, l, heads).unwrap();
            sample_loss(&loc, &rep, &sample).loss
        };

        let (loc, rep, cache) = pointer_heads_forward(&h, l, &heads).unwrap();
        let out = sample_loss(&loc, &rep, &sample);
        let (dh, grads) = pointer_heads_backward(&out.d_loc, &out.d_rep, &h, &cache, &heads).unwrap();

        let fd_h = fd_gradient(|m| loss_at(m, &heads), &h, 1e-6).unwrap();
        assert!(max_rel_err(&dh, &fd_h) < 1e-4);
        // AST rows take no gradient at all.
        for i in l..n {
            assert!(dh.row(i).iter().all(|&x| x == 0.0));
        }

        let fields: [(&str, fn(&PointerHeads) -> &DenseMatrix, fn(&mut PointerHeads) -> &mut DenseMatrix); 6] = [
            ("w_loc", |p| &p.w_loc, |p| &mut p.w_loc),
            ("b_loc", |p| &p.b_loc, |p| &mut p.b_loc),
            ("w_nobug", |p| &p.w_nobug, |p| &mut p.w_nobug),
            ("b_nobug", |p| &p.b_nobug, |p| &mut p.b_nobug),
            ("w_rep", |p| &p.w_rep, |p| &mut p.w_rep),
            ("b_rep", |p| &p.b_rep, |p| &mut p.b_rep),
        ];
        for (name, get, get_mut) in fields {
            let fd = fd_gradient(
                |x| {
                    let mut p = heads.clone();
                    *get_mut(&mut p) = x.clone();
                    loss_at(&h, &p)
                },
                get(&heads),
                1e-6,
            )
            .unwrap();
            // b_rep shifts every repair logit equally, a direction the
            // softmax loss is exactly flat in; both gradients are then
            // numerical zero and their ratio is noise.
            if get(&grads).max_abs().max(fd.max_abs()) < 1e-8 {
                continue;
            }
            let err = max_rel_err(get(&grads), &fd);
            assert!(err < 1e-4, "{name}: rel err {err}");
        }
    }

    #[test]
    fn visitor_names_are_stable() {
        let heads = PointerHeads::zeros(3);
        let mut names = Vec::new();
        heads.for_each_tensor(&mut |n, _| names.push(n));
        assert_eq!(
            names,
            [
                "heads.loc.w",
                "heads.loc.b",
                "heads.nobug.w",
                "heads.nobug.b",
                "heads.rep.w",
                "heads.rep.b"
            ]
        );
        heads.validate(3).unwrap();
        assert!(heads.validate(4).is_err());
    }
}
