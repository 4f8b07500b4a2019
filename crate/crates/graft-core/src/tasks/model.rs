//! The end-to-end model: vocabulary, encoder stack and pointer heads,
//! with per-sample forward/backward and a checkpoint round trip.

use super::{
    aggregate_metrics, pointer_heads_backward, pointer_heads_forward, sample_loss, PointerHeads,
    SampleLoss, TaskMetrics, VarMisuseSample,
};
use crate::encoder::{
    embed, embed_backward, encoder_backward, encoder_forward, load_checkpoint, save_checkpoint,
    EncoderConfig, EncoderParams, Vocab,
};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::Real;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Gradients of one sample pass, shaped exactly like the parameters.
#[derive(Clone, Debug)]
pub struct SampleGrads {
    pub encoder: EncoderParams,
    pub heads: PointerHeads,
}

#[derive(Clone, Debug)]
pub struct VarMisuseModel {
    pub cfg: EncoderConfig,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub heads: PointerHeads,
}

impl VarMisuseModel {
    /// Fresh seeded parameters. The config's `vocab_size` must match the
    /// vocabulary (one row per known text plus the unknown row).
    pub fn init(cfg: EncoderConfig, vocab: Vocab, seed: u64) -> Result<VarMisuseModel> {
        if cfg.vocab_size != vocab.size() {
            return Err(Error::VocabMismatch(format!(
                "config expects {} embedding rows, vocabulary needs {}",
                cfg.vocab_size,
                vocab.size()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(&cfg, &mut rng)?;
        let heads = PointerHeads::init(cfg.model.d_model, &mut rng);
        Ok(VarMisuseModel {
            cfg,
            vocab,
            encoder,
            heads,
        })
    }

    /// Evaluation-mode logits: `(loc_logits, rep_logits)`.
    pub fn logits(&self, sample: &VarMisuseSample) -> Result<(Vec<Real>, Vec<Real>)> {
        let h0 = embed(&sample.graph, &self.vocab, &self.encoder.embeddings, &self.cfg)?;
        let (h, _) = encoder_forward(
            &h0,
            &sample.graph.adjacency,
            &sample.graph.edge_type_ids,
            &self.encoder,
            &self.cfg,
            false,
            0,
        )?;
        let (loc, rep, _) = pointer_heads_forward(&h, sample.graph.token_count(), &self.heads)?;
        Ok((loc, rep))
    }

    /// Evaluation-mode loss and flags, no gradients.
    pub fn loss_only(&self, sample: &VarMisuseSample) -> Result<SampleLoss> {
        let (loc, rep) = self.logits(sample)?;
        Ok(sample_loss(&loc, &rep, sample))
    }

    /// One full forward/backward pass. Train mode applies dropout drawn
    /// from `dropout_seed`.
    pub fn sample_pass(
        &self,
        sample: &VarMisuseSample,
        train_mode: bool,
        dropout_seed: u64,
    ) -> Result<(SampleLoss, SampleGrads)> {
        let h0 = embed(&sample.graph, &self.vocab, &self.encoder.embeddings, &self.cfg)?;
        let (h, cache) = encoder_forward(
            &h0,
            &sample.graph.adjacency,
            &sample.graph.edge_type_ids,
            &self.encoder,
            &self.cfg,
            train_mode,
            dropout_seed,
        )?;
        let (loc, rep, head_cache) =
            pointer_heads_forward(&h, sample.graph.token_count(), &self.heads)?;
        let loss = sample_loss(&loc, &rep, sample);
        let (dh, head_grads) =
            pointer_heads_backward(&loss.d_loc, &loss.d_rep, &h, &head_cache, &self.heads)?;
        let (dh0, mut encoder_grads) = encoder_backward(&dh, &cache, &self.encoder, &self.cfg)?;
        embed_backward(&dh0, &sample.graph, &self.vocab, &mut encoder_grads.embeddings)?;
        Ok((
            loss,
            SampleGrads {
                encoder: encoder_grads,
                heads: head_grads,
            },
        ))
    }

    /// Mean loss and aggregate rates over a sample set, in order.
    pub fn evaluate(&self, samples: &[VarMisuseSample]) -> Result<(Real, TaskMetrics)> {
        if samples.is_empty() {
            return Err(Error::InvalidParameter(
                "cannot evaluate an empty sample set".to_string(),
            ));
        }
        let mut total = 0.0;
        let mut flags = Vec::with_capacity(samples.len());
        for sample in samples {
            let out = self.loss_only(sample)?;
            total += out.loss;
            flags.push(out.flags);
        }
        Ok((total / samples.len() as Real, aggregate_metrics(&flags)))
    }

    /// Walks every tensor (encoder first, then heads) with stable names.
    pub fn for_each_tensor<'a>(&'a self, f: &mut impl FnMut(String, &'a DenseMatrix)) {
        self.encoder.for_each_tensor(f);
        self.heads.for_each_tensor(f);
    }

    pub fn for_each_tensor_mut(&mut self, f: &mut impl FnMut(String, &mut DenseMatrix)) {
        self.encoder.for_each_tensor_mut(f);
        self.heads.for_each_tensor_mut(f);
    }

    pub fn validate(&self) -> Result<()> {
        if self.cfg.vocab_size != self.vocab.size() {
            return Err(Error::VocabMismatch(format!(
                "config expects {} embedding rows, vocabulary needs {}",
                self.cfg.vocab_size,
                self.vocab.size()
            )));
        }
        self.encoder.validate(&self.cfg)?;
        self.heads.validate(self.cfg.model.d_model)
    }

    /// Saves config, vocabulary and every tensor to one checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "kind": "var_misuse_model",
            "encoder_config": self.cfg,
            "vocab": self.vocab,
        });
        let mut tensors = Vec::new();
        self.for_each_tensor(&mut |name, m| tensors.push((name, m)));
        save_checkpoint(path, &meta, &tensors)
    }

    /// Loads a checkpoint written by [`Self::save`]. Every expected tensor
    /// must be present with its exact shape; unknown tensors are rejected.
    pub fn load(path: &Path) -> Result<VarMisuseModel> {
        let (meta, tensors) = load_checkpoint(path)?;
        if meta["kind"] != "var_misuse_model" {
            return Err(Error::CheckpointFormat(format!(
                "kind {} is not a task model checkpoint",
                meta["kind"]
            )));
        }
        let cfg: EncoderConfig = serde_json::from_value(meta["encoder_config"].clone())?;
        let vocab: Vocab = serde_json::from_value(meta["vocab"].clone())?;
        cfg.validate()?;
        let mut by_name: BTreeMap<String, DenseMatrix> = BTreeMap::new();
        for (name, tensor) in tensors {
            if by_name.insert(name.clone(), tensor).is_some() {
                return Err(Error::CheckpointFormat(format!("duplicate tensor {name}")));
            }
        }
        let mut model = VarMisuseModel {
            encoder: EncoderParams::zeros(&cfg),
            heads: PointerHeads::zeros(cfg.model.d_model),
            cfg,
            vocab,
        };
        let mut problem = None;
        model.for_each_tensor_mut(&mut |name, m| {
            match by_name.remove(&name) {
                Some(t) if t.shape() == m.shape() => *m = t,
                Some(t) => {
                    problem.get_or_insert(Error::DimensionMismatch(format!(
                        "tensor {name} has shape {:?}, expected {:?}",
                        t.shape(),
                        m.shape()
                    )));
                }
                None => {
                    problem.get_or_insert(Error::CheckpointFormat(format!(
                        "tensor {name} is missing"
                    )));
                }
            };
        });
        if let Some(err) = problem {
            return Err(err);
        }
        if let Some(name) = by_name.into_keys().next() {
            return Err(Error::CheckpointFormat(format!(
                "unexpected tensor {name}"
            )));
        }
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::super::generate_dataset;
    use super::*;
    use crate::attention::ModelConfig;
    use crate::graph::EDGE_TYPE_COUNT;

    fn small_cfg(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            model: ModelConfig {
                layers: 1,
                heads: 2,
                d_model: 8,
                d_k: 4,
                d_v: 4,
                d_ff: 12,
            },
            diffusion: None,
            use_positional_encoding: false,
            vocab_size,
            edge_type_count: EDGE_TYPE_COUNT,
            dropout_rate: 0.0,
        }
    }

    fn small_model() -> (VarMisuseModel, Vec<VarMisuseSample>) {
        let samples = generate_dataset(12, 0.5, (3, 6), 41).unwrap();
        let vocab = super::super::dataset_vocab(&samples);
        let cfg = small_cfg(vocab.size());
        let model = VarMisuseModel::init(cfg, vocab, 5).unwrap();
        (model, samples)
    }

    #[test]
    fn init_is_deterministic_and_validates() {
        let (a, samples) = small_model();
        let b = VarMisuseModel::init(a.cfg.clone(), a.vocab.clone(), 5).unwrap();
        a.validate().unwrap();
        let (loc_a, rep_a) = a.logits(&samples[0]).unwrap();
        let (loc_b, rep_b) = b.logits(&samples[0]).unwrap();
        assert_eq!(loc_a, loc_b);
        assert_eq!(rep_a, rep_b);

        let bad = VarMisuseModel::init(small_cfg(3), a.vocab.clone(), 5);
        assert!(matches!(bad, Err(Error::VocabMismatch(_))));
    }

    #[test]
    fn evaluation_is_finite_and_rates_are_consistent() {
        let (model, samples) = small_model();
        let (loss, metrics) = model.evaluate(&samples).unwrap();
        assert!(loss.is_finite() && loss > 0.0);
        for rate in [
            metrics.joint_acc,
            metrics.bugfree_acc,
            metrics.localization_acc,
            metrics.repair_acc,
        ] {
            assert!((0.0..=1.0).contains(&rate));
        }
        assert!(metrics.joint_acc <= metrics.localization_acc);
        assert!(metrics.joint_acc <= metrics.repair_acc);
        assert!(model.evaluate(&[]).is_err());
    }

    #[test]
    fn unknown_tokens_fall_back_to_the_reserved_row() {
        let (model, _) = small_model();
        // "z" is outside the generator pool, hence out of vocabulary.
        let source = "z = 1 z = z + 2";
        let sample = VarMisuseSample {
            source: source.to_string(),
            graph: crate::graph::CodeGraph::from_source(source).unwrap(),
            bug_present: false,
            bug_location: None,
            repair_target: None,
        };
        let (loc, rep) = model.logits(&sample).unwrap();
        assert_eq!(loc.len(), sample.graph.token_count() + 1);
        assert!(loc.iter().chain(&rep).all(|x| x.is_finite()));
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let (model, samples) = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        model.save(&path).unwrap();
        let loaded = VarMisuseModel::load(&path).unwrap();
        assert_eq!(loaded.cfg, model.cfg);
        assert_eq!(loaded.vocab, model.vocab);
        let (loc_a, rep_a) = model.logits(&samples[1]).unwrap();
        let (loc_b, rep_b) = loaded.logits(&samples[1]).unwrap();
        assert_eq!(loc_a, loc_b);
        assert_eq!(rep_a, rep_b);
    }

    #[test]
    fn truncated_tensor_set_is_rejected() {
        let (model, _) = small_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        // Write a checkpoint missing the head tensors.
        let meta = serde_json::json!({
            "kind": "var_misuse_model",
            "encoder_config": model.cfg,
            "vocab": model.vocab,
        });
        let mut tensors = Vec::new();
        model.encoder.for_each_tensor(&mut |name, m| tensors.push((name, m)));
        save_checkpoint(&path, &meta, &tensors).unwrap();
        assert!(matches!(
            VarMisuseModel::load(&path),
            Err(Error::CheckpointFormat(_))
        ));
    }
}
