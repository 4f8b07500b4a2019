//! Flat key=value run configuration.
//!
//! The file format is one `key = value` pair per line; `#` starts a
//! comment, blank lines are skipped. Unknown keys are rejected so a typo
//! cannot silently fall back to a default. Command-line flags override
//! file values, which override the defaults below.

use std::path::Path;

use anyhow::{bail, Context, Result};

/// Model and optimizer settings shared by `train` and `ablate`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_k: usize,
    pub d_v: usize,
    pub d_ff: usize,
    /// Diffusion hop count (applies when diffusion is on).
    pub k: usize,
    /// Diffusion restart probability.
    pub alpha: f64,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
    /// Stop once held-out joint accuracy reaches this value.
    pub target_joint: Option<f64>,
    /// Fraction of the dataset held out for validation (taken from the
    /// tail, so the split is deterministic).
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            layers: 2,
            heads: 4,
            d_model: 64,
            d_k: 8,
            d_v: 8,
            d_ff: 96,
            k: 2,
            alpha: 0.25,
            lr: 1e-3,
            dropout: 0.1,
            epochs: 10,
            batch_size: 2,
            patience: None,
            target_joint: None,
            val_fraction: 0.2,
        }
    }
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, when given.
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            cfg.apply(&text)
                .with_context(|| format!("in config {}", path.display()))?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("line {}: expected key = value, got {raw:?}", lineno + 1);
            };
            let (key, value) = (key.trim(), value.trim());
            let ctx = || format!("line {}: bad value for {key}: {value:?}", lineno + 1);
            match key {
                "layers" => self.layers = value.parse().with_context(ctx)?,
                "heads" => self.heads = value.parse().with_context(ctx)?,
                "d_model" => self.d_model = value.parse().with_context(ctx)?,
                "d_k" => self.d_k = value.parse().with_context(ctx)?,
                "d_v" => self.d_v = value.parse().with_context(ctx)?,
                "d_ff" => self.d_ff = value.parse().with_context(ctx)?,
                "k" => self.k = value.parse().with_context(ctx)?,
                "alpha" => self.alpha = value.parse().with_context(ctx)?,
                "lr" => self.lr = value.parse().with_context(ctx)?,
                "dropout" => self.dropout = value.parse().with_context(ctx)?,
                "epochs" => self.epochs = value.parse().with_context(ctx)?,
                "batch_size" => self.batch_size = value.parse().with_context(ctx)?,
                "patience" => self.patience = Some(value.parse().with_context(ctx)?),
                "target_joint" => self.target_joint = Some(value.parse().with_context(ctx)?),
                "val_fraction" => self.val_fraction = value.parse().with_context(ctx)?,
                _ => bail!("line {}: unknown config key {key:?}", lineno + 1),
            }
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            bail!("val_fraction must lie in (0, 1), got {}", self.val_fraction);
        }
        Ok(())
    }
}
