//! Scaling benchmarks: peak-memory and wall-time curves over sequence
//! length, with log-log exponent fits.
//!
//! Measurement design:
//!
//! * memory is the high-water mark of live bytes from the counting
//!   allocator in [`alloc`], never RSS;
//! * time is the median wall clock of `repeats` runs after one uncounted
//!   warm-up, with the repeats of all variants at a length interleaved
//!   round-robin so drift in machine state cannot bias one variant;
//! * every variant at a given length sees the same mask, input and encoder
//!   parameters, so the curves differ only in the computation path;
//! * wherever the sparse path and the masked dense path both run, their
//!   outputs must agree to [`EQUIVALENCE_TOL`], making every benchmark run
//!   double as an equivalence sweep.
//!
//! Peak bytes and structural counts are deterministic in the seed; only
//! `cpu_time_ms` varies between runs of the same configuration.

mod alloc;

pub use alloc::{current_bytes, instrumented, peak_bytes, reset_peak, CountingAllocator};

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{dense_attention_forward, ModelConfig};
use crate::diffusion::DiffusionConfig;
use crate::encoder::{encoder_forward, layer_norm_forward, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::graph::{mask_edge_type_ids, EDGE_TYPE_COUNT};
use crate::linalg::SparsityPattern;
use crate::{CsrMatrix, DenseMatrix, Real};

/// Sparse and masked-dense outputs may differ only by accumulation order.
pub const EQUIVALENCE_TOL: Real = 1e-10;

/// Exact header of the curves CSV.
pub const CSV_HEADER: &str = "variant,length,nnz,peak_bytes,cpu_time_ms";

/// Computation paths the harness can measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchVariant {
    /// CSR attention, no diffusion.
    Sparse,
    /// CSR attention with 2 diffusion hops.
    SparseDiffusionK2,
    /// CSR attention with 6 diffusion hops.
    SparseDiffusionK6,
    /// Dense attention under the same mask: the equivalence partner of
    /// `Sparse`, quadratic in memory by construction.
    DenseMask,
    /// Dense attention over the complete graph with no edge bias: the
    /// unstructured baseline.
    DenseFull,
}

impl BenchVariant {
    pub const ALL: [BenchVariant; 5] = [
        BenchVariant::Sparse,
        BenchVariant::SparseDiffusionK2,
        BenchVariant::SparseDiffusionK6,
        BenchVariant::DenseMask,
        BenchVariant::DenseFull,
    ];

    /// Stable label used in CSV and JSON output.
    pub fn as_str(self) -> &'static str {
        match self {
            BenchVariant::Sparse => "sparse",
            BenchVariant::SparseDiffusionK2 => "sparse_diffusion_k2",
            BenchVariant::SparseDiffusionK6 => "sparse_diffusion_k6",
            BenchVariant::DenseMask => "dense_mask",
            BenchVariant::DenseFull => "dense_full",
        }
    }

    /// Inverse of [`BenchVariant::as_str`].
    pub fn parse(label: &str) -> Result<BenchVariant> {
        BenchVariant::ALL
            .into_iter()
            .find(|v| v.as_str() == label)
            .ok_or_else(|| {
                let known: Vec<&str> = BenchVariant::ALL.iter().map(|v| v.as_str()).collect();
                Error::InvalidParameter(format!(
                    "unknown benchmark variant {label:?}, expected one of {known:?}"
                ))
            })
    }

    pub fn is_dense(self) -> bool {
        matches!(self, BenchVariant::DenseMask | BenchVariant::DenseFull)
    }

    fn diffusion(self) -> Option<DiffusionConfig> {
        let cfg = |k| DiffusionConfig::new(k, 0.25).expect("fixed hop counts are valid");
        match self {
            BenchVariant::SparseDiffusionK2 => Some(cfg(2)),
            BenchVariant::SparseDiffusionK6 => Some(cfg(6)),
            _ => None,
        }
    }
}

/// Harness configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Sequence lengths, strictly ascending, each at least 2.
    pub lengths: Vec<usize>,
    /// Random structural edges sampled per node before symmetrization.
    pub edges_per_token: usize,
    pub variants: Vec<BenchVariant>,
    /// Timed runs per point; one extra warm-up run is not counted.
    pub repeats: usize,
    /// Dense variants are skipped above this length.
    pub dense_cutoff: usize,
    /// Estimated-footprint ceiling. Dense points whose estimate exceeds it
    /// are skipped and recorded instead of run into the ground.
    pub memory_budget_bytes: u64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig::with_max_length(4096)
    }
}

impl BenchConfig {
    /// Lengths 100, 200, ... up to `max_len` (just `[max_len]` when it is
    /// below 100), all variants, 5 repeats.
    pub fn with_max_length(max_len: usize) -> BenchConfig {
        BenchConfig {
            lengths: default_lengths(max_len),
            edges_per_token: 3,
            variants: BenchVariant::ALL.to_vec(),
            repeats: 5,
            dense_cutoff: 4096,
            memory_budget_bytes: 2 << 30,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::InvalidParameter("no benchmark lengths".into()));
        }
        for pair in self.lengths.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidParameter(format!(
                    "lengths must be strictly ascending, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.lengths[0] < 2 {
            return Err(Error::InvalidParameter(format!(
                "benchmark length {} is below the 2-node minimum",
                self.lengths[0]
            )));
        }
        if self.edges_per_token == 0 {
            return Err(Error::InvalidParameter(
                "edges_per_token must be positive".into(),
            ));
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidParameter("no benchmark variants".into()));
        }
        let distinct: BTreeSet<_> = self.variants.iter().collect();
        if distinct.len() != self.variants.len() {
            return Err(Error::InvalidParameter(
                "duplicate benchmark variant".into(),
            ));
        }
        if self.repeats < 3 {
            return Err(Error::InvalidParameter(format!(
                "a median needs at least 3 repeats, got {}",
                self.repeats
            )));
        }
        if self.memory_budget_bytes == 0 {
            return Err(Error::InvalidParameter("zero memory budget".into()));
        }
        Ok(())
    }
}

/// Lengths 100, 200, ... up to `max_len` inclusive; just `[max_len]` when
/// it is below 100.
pub fn default_lengths(max_len: usize) -> Vec<usize> {
    if max_len < 100 {
        vec![max_len]
    } else {
        (1..=max_len / 100).map(|i| i * 100).collect()
    }
}

/// Encoder dimensions used for every benchmark point: small enough that a
/// 4096-token sparse forward stays cheap, large enough that the projections
/// and aggregation dominate the timings.
pub fn bench_model_config() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 8,
        d_model: 32,
        d_k: 8,
        d_v: 16,
        d_ff: 64,
    }
}

fn bench_encoder_config(diffusion: Option<DiffusionConfig>) -> EncoderConfig {
    EncoderConfig {
        model: bench_model_config(),
        diffusion,
        use_positional_encoding: false,
        vocab_size: 1,
        edge_type_count: EDGE_TYPE_COUNT,
        dropout_rate: 0.0,
    }
}

/// One measured point. `nnz` is the number of attended pairs: the mask's
/// entry count for masked variants, `length`^2 for the full dense baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub variant: BenchVariant,
    pub length: usize,
    pub nnz: usize,
    pub peak_bytes: u64,
    pub cpu_time_ms: f64,
}

/// A point the harness declined to run, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub variant: BenchVariant,
    pub length: usize,
    pub reason: String,
}

/// Everything one [`run_bench`] call produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<BenchRecord>,
    pub skipped: Vec<SkippedPoint>,
}

/// Synthetic structural mask for one benchmark point:
/// `edges_per_token * length` directed pairs sampled uniformly (duplicates
/// collapse), symmetrized, plus every self loop. Deterministic in `seed`.
pub fn bench_mask(length: usize, edges_per_token: usize, seed: u64) -> Result<CsrMatrix> {
    if length < 2 {
        return Err(Error::InvalidParameter(format!(
            "benchmark mask needs at least 2 nodes, got {length}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut undirected = BTreeSet::new();
    for _ in 0..length * edges_per_token {
        let i = rng.gen_range(0..length);
        // Shifted second draw keeps j != i without rejection, so RNG
        // consumption per edge is fixed.
        let j = (i + 1 + rng.gen_range(0..length - 1)) % length;
        undirected.insert((i.min(j), i.max(j)));
    }
    let mut edges: Vec<(usize, usize, Real)> = Vec::with_capacity(length + 2 * undirected.len());
    for i in 0..length {
        edges.push((i, i, 1.0));
    }
    for &(a, b) in &undirected {
        edges.push((a, b, 1.0));
        edges.push((b, a, 1.0));
    }
    CsrMatrix::from_edges(length, length, &edges)
}

fn bench_input(length: usize, d_model: usize, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseMatrix::from_fn(length, d_model, |_, _| rng.gen_range(-1.0..1.0))
}

/// Footprint estimate for a dense point: per head one logit and one
/// probability matrix are alive together, plus the dense mask itself.
fn dense_bytes_estimate(length: usize, model: &ModelConfig) -> u64 {
    let n = length as u64;
    let word = std::mem::size_of::<Real>() as u64;
    (2 * model.heads as u64 + 1) * n * n * word
}

/// Encoder stack with the attention component swapped for the dense
/// reference. Eval mode only: the benchmark never applies dropout.
fn dense_encoder_forward(
    h0: &DenseMatrix,
    dense_mask: &DenseMatrix,
    edge_bias: Option<(&SparsityPattern, &[Vec<usize>])>,
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<DenseMatrix> {
    let mut h = h0.clone();
    for layer in &params.layers {
        let a = dense_attention_forward(
            &h,
            dense_mask,
            edge_bias,
            &layer.attention,
            cfg.diffusion.as_ref(),
        )?;
        let mut r1 = h;
        r1.add_assign(&a)?;
        drop(a);
        let (mid, _) = layer_norm_forward(&r1, &layer.ln1_gain, &layer.ln1_bias)?;
        let mut ffn_pre = mid.matmul(&layer.ffn_w1)?;
        for i in 0..ffn_pre.rows() {
            for (x, &b) in ffn_pre.row_mut(i).iter_mut().zip(layer.ffn_b1.row(0)) {
                *x += b;
            }
        }
        let act = ffn_pre.map(|v| v.max(0.0));
        let mut f = act.matmul(&layer.ffn_w2)?;
        for i in 0..f.rows() {
            for (x, &b) in f.row_mut(i).iter_mut().zip(layer.ffn_b2.row(0)) {
                *x += b;
            }
        }
        let mut r2 = mid;
        r2.add_assign(&f)?;
        let (next, _) = layer_norm_forward(&r2, &layer.ln2_gain, &layer.ln2_bias)?;
        h = next;
    }
    Ok(h)
}

fn run_variant(
    variant: BenchVariant,
    h0: &DenseMatrix,
    mask: &CsrMatrix,
    types: &[Vec<usize>],
    params: &EncoderParams,
    cfg: &EncoderConfig,
) -> Result<DenseMatrix> {
    match variant {
        BenchVariant::Sparse | BenchVariant::SparseDiffusionK2 | BenchVariant::SparseDiffusionK6 => {
            encoder_forward(h0, mask, types, params, cfg, false, 0).map(|(out, _)| out)
        }
        BenchVariant::DenseMask => {
            // The dense mask is materialized inside the measured region:
            // it is part of what a dense implementation costs.
            let dense = mask.to_dense();
            dense_encoder_forward(h0, &dense, Some((mask.pattern(), types)), params, cfg)
        }
        BenchVariant::DenseFull => {
            let n = h0.rows();
            let ones = DenseMatrix::from_fn(n, n, |_, _| 1.0);
            dense_encoder_forward(h0, &ones, None, params, cfg)
        }
    }
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Runs every configured variant at every configured length.
///
/// Requires [`CountingAllocator`] to be installed as the global allocator
/// of the running binary; fails with [`Error::AllocatorNotInstrumented`]
/// otherwise. Dense points above `dense_cutoff` or over the memory budget
/// are skipped and recorded, never fatal. Wherever both the sparse and the
/// masked dense variant run, their outputs are compared and a mismatch
/// beyond [`EQUIVALENCE_TOL`] aborts the run.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if !instrumented() {
        return Err(Error::AllocatorNotInstrumented);
    }
    let base_cfg = bench_encoder_config(None);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = EncoderParams::init(&base_cfg, &mut rng)?;

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for &length in &cfg.lengths {
        // Seed streams keyed by the length itself, so editing the length
        // list never changes the mask or input of an existing point.
        let mask = bench_mask(
            length,
            cfg.edges_per_token,
            crate::mix_seed(cfg.seed, 2 * length as u64),
        )?;
        let types = mask_edge_type_ids(&mask);
        let h0 = bench_input(
            length,
            base_cfg.model.d_model,
            crate::mix_seed(cfg.seed, 2 * length as u64 + 1),
        );

        // Admission: dense variants can be ruled out by the cutoff or the
        // memory budget before anything runs.
        struct VariantRun {
            variant: BenchVariant,
            cfg: EncoderConfig,
            out: Option<DenseMatrix>,
            times: Vec<f64>,
            peak_delta: u64,
        }
        let mut runs: Vec<VariantRun> = Vec::new();
        for &variant in &cfg.variants {
            if variant.is_dense() {
                if length > cfg.dense_cutoff {
                    skipped.push(SkippedPoint {
                        variant,
                        length,
                        reason: format!(
                            "length {length} above dense cutoff {}",
                            cfg.dense_cutoff
                        ),
                    });
                    continue;
                }
                let estimate = dense_bytes_estimate(length, &base_cfg.model);
                if estimate > cfg.memory_budget_bytes {
                    skipped.push(SkippedPoint {
                        variant,
                        length,
                        reason: Error::OutOfMemory(format!(
                            "estimated {estimate} bytes at length {length} against a budget of {}",
                            cfg.memory_budget_bytes
                        ))
                        .to_string(),
                    });
                    continue;
                }
            }
            runs.push(VariantRun {
                variant,
                cfg: bench_encoder_config(variant.diffusion()),
                out: None,
                times: Vec::with_capacity(cfg.repeats),
                peak_delta: 0,
            });
        }
        // One warm-up per variant, then paired rounds: repeat r of every
        // variant runs back to back, so slow drift in machine state lands
        // on all variants alike instead of biasing whichever variant
        // happened to take its repeats first.
        for run in &mut runs {
            run.out = Some(run_variant(
                run.variant, &h0, &mask, &types, &params, &run.cfg,
            )?);
        }
        for _ in 0..cfg.repeats {
            for run in &mut runs {
                // Dropping the variant's own previous output keeps its
                // footprint out of the measured run. Other variants'
                // retained outputs sit in the baseline, and the peak is
                // read as a delta against it, so they cancel.
                drop(run.out.take());
                let baseline = current_bytes();
                reset_peak();
                let start = Instant::now();
                run.out = Some(run_variant(
                    run.variant, &h0, &mask, &types, &params, &run.cfg,
                )?);
                run.times.push(start.elapsed().as_secs_f64() * 1e3);
                run.peak_delta = run.peak_delta.max(peak_bytes().saturating_sub(baseline));
            }
        }
        let mut sparse_out: Option<DenseMatrix> = None;
        let mut dense_out: Option<DenseMatrix> = None;
        for mut run in runs {
            records.push(BenchRecord {
                variant: run.variant,
                length,
                nnz: if run.variant == BenchVariant::DenseFull {
                    length * length
                } else {
                    mask.nnz()
                },
                peak_bytes: run.peak_delta,
                cpu_time_ms: median(&mut run.times),
            });
            let out = run.out.expect("a timed run just stored its output");
            match run.variant {
                BenchVariant::Sparse => sparse_out = Some(out),
                BenchVariant::DenseMask => dense_out = Some(out),
                _ => {}
            }
        }
        if let (Some(s), Some(d)) = (&sparse_out, &dense_out) {
            let diff = s.max_abs_diff(d)?;
            if diff > EQUIVALENCE_TOL {
                return Err(Error::ToleranceExceeded {
                    context: format!("sparse vs masked dense at length {length}"),
                    value: diff,
                    limit: EQUIVALENCE_TOL,
                });
            }
        }
    }
    Ok(BenchReport { records, skipped })
}

/// Least-squares exponent of `metric = c * length^e` from log-log points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub exponent: f64,
    pub r2: f64,
}

/// Fits `y = c * x^e` by least squares on `(ln x, ln y)`.
///
/// Requires at least 8 points whose x-range spans a factor of 10: fewer
/// points or a narrower span give exponents dominated by noise, which is
/// an error here, not merely a poor fit.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 8 {
        return Err(Error::InsufficientPoints(format!(
            "{} points, need at least 8",
            points.len()
        )));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "log-log fit needs positive values, got ({x}, {y})"
            )));
        }
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi / lo < 10.0 {
        return Err(Error::InsufficientPoints(format!(
            "x spans a factor of {:.3}, need at least 10",
            hi / lo
        )));
    }
    let n = points.len() as f64;
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for &(x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
        syy += (y - mean_y) * (y - mean_y);
    }
    let exponent = sxy / sxx;
    // A constant metric is fit perfectly by a zero exponent.
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Ok(ScalingFit { exponent, r2 })
}

/// Memory and time exponents for one variant's records, as
/// `(memory_fit, time_fit)`.
pub fn fit_variant(records: &[BenchRecord], variant: BenchVariant) -> Result<(ScalingFit, ScalingFit)> {
    let points = |metric: fn(&BenchRecord) -> f64| -> Vec<(f64, f64)> {
        records
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| (r.length as f64, metric(r)))
            .collect()
    };
    let memory = fit_scaling(&points(|r| r.peak_bytes as f64))?;
    let time = fit_scaling(&points(|r| r.cpu_time_ms))?;
    Ok((memory, time))
}

/// Renders records as CSV. The header line is always present, so an empty
/// record list produces exactly the header.
pub fn records_to_csv(records: &[BenchRecord]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.variant.as_str(),
            r.length,
            r.nnz,
            r.peak_bytes,
            r.cpu_time_ms
        ));
    }
    out
}

/// Parses the output of [`records_to_csv`]. Float fields round-trip
/// exactly because the writer uses the shortest representation that does.
pub fn records_from_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::WrongKind(format!(
                "expected CSV header {CSV_HEADER:?}, found {other:?}"
            )))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::WrongKind(format!(
                "CSV line {} has {} fields, expected 5",
                idx + 2,
                fields.len()
            )));
        }
        let bad = |what: &str, value: &str| {
            Error::WrongKind(format!("CSV line {}: bad {what} {value:?}", idx + 2))
        };
        records.push(BenchRecord {
            variant: BenchVariant::parse(fields[0])?,
            length: fields[1].parse().map_err(|_| bad("length", fields[1]))?,
            nnz: fields[2].parse().map_err(|_| bad("nnz", fields[2]))?,
            peak_bytes: fields[3].parse().map_err(|_| bad("peak_bytes", fields[3]))?,
            cpu_time_ms: fields[4]
                .parse()
                .map_err(|_| bad("cpu_time_ms", fields[4]))?,
        });
    }
    Ok(records)
}

/// Scaling fits for one variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantFits {
    pub memory: ScalingFit,
    pub time: ScalingFit,
}

/// JSON summary written next to the curves CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub config: BenchConfig,
    /// Keyed by variant label; variants without enough measured points for
    /// a fit are absent.
    pub fits: BTreeMap<String, VariantFits>,
    pub skipped: Vec<SkippedPoint>,
}

/// Builds the JSON summary: one fit pair per variant that has enough
/// measured points, skipped points listed verbatim.
pub fn summarize(cfg: &BenchConfig, report: &BenchReport) -> BenchSummary {
    let mut fits = BTreeMap::new();
    for &variant in &cfg.variants {
        if let Ok((memory, time)) = fit_variant(&report.records, variant) {
            fits.insert(variant.as_str().to_string(), VariantFits { memory, time });
        }
    }
    BenchSummary {
        config: cfg.clone(),
        fits,
        skipped: report.skipped.clone(),
    }
}

/// Writes `curves.csv` and `summary.json` into `dir`, creating it if
/// needed.
pub fn emit(dir: &Path, cfg: &BenchConfig, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::io(format!("creating {}", dir.display())))?;
    let csv_path = dir.join("curves.csv");
    std::fs::write(&csv_path, records_to_csv(&report.records))
        .map_err(Error::io(format!("writing {}", csv_path.display())))?;
    let json_path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&summarize(cfg, report))?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(Error::io(format!("writing {}", json_path.display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_labels_round_trip() {
        for v in BenchVariant::ALL {
            assert_eq!(BenchVariant::parse(v.as_str()).unwrap(), v);
            // Serde uses the same labels as the CSV.
            let json = serde_json::to_string(&v).unwrap();
            assert_eq!(json, format!("\"{}\"", v.as_str()));
        }
        assert!(BenchVariant::parse("dense").is_err());
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let good = BenchConfig::with_max_length(300);
        good.validate().unwrap();

        let mut bad = good.clone();
        bad.lengths = vec![200, 100];
        assert!(bad.validate().is_err());

        bad = good.clone();
        bad.lengths = vec![1, 100];
        assert!(bad.validate().is_err());

        bad = good.clone();
        bad.repeats = 2;
        assert!(bad.validate().is_err());

        bad = good.clone();
        bad.variants = vec![BenchVariant::Sparse, BenchVariant::Sparse];
        assert!(bad.validate().is_err());

        bad = good.clone();
        bad.variants.clear();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_lengths_step_and_floor() {
        assert_eq!(default_lengths(100), vec![100]);
        assert_eq!(default_lengths(64), vec![64]);
        assert_eq!(default_lengths(350), vec![100, 200, 300]);
        let full = default_lengths(4096);
        assert_eq!(full.first(), Some(&100));
        assert_eq!(full.last(), Some(&4000));
        assert_eq!(full.len(), 40);
    }

    #[test]
    fn mask_is_symmetric_self_looped_and_deterministic() {
        let length = 50;
        let mask = bench_mask(length, 3, 11).unwrap();
        let again = bench_mask(length, 3, 11).unwrap();
        assert_eq!(mask.pattern().col_indices(), again.pattern().col_indices());
        assert_eq!(mask.nnz(), again.nnz());

        let dense = mask.to_dense();
        for i in 0..length {
            assert_eq!(dense.get(i, i), 1.0, "self loop at {i}");
            for j in 0..length {
                assert_eq!(dense.get(i, j), dense.get(j, i), "symmetry at ({i}, {j})");
            }
        }
        // Self loops plus both directions of at least one and at most
        // 3 * length sampled pairs.
        assert!(mask.nnz() > length);
        assert!(mask.nnz() <= length + 2 * 3 * length);

        let other = bench_mask(length, 3, 12).unwrap();
        assert_ne!(
            mask.pattern().col_indices(),
            other.pattern().col_indices(),
            "different seeds should give different masks"
        );
    }

    #[test]
    fn fit_recovers_synthetic_exponents() {
        let xs: Vec<f64> = (1..=10).map(|i| (i * 100) as f64).collect();
        let linear: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 3.7 * x)).collect();
        let fit = fit_scaling(&linear).unwrap();
        assert!((fit.exponent - 1.0).abs() < 0.01, "exponent {}", fit.exponent);
        assert!(fit.r2 > 0.999);

        let quadratic: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 0.02 * x * x)).collect();
        let fit = fit_scaling(&quadratic).unwrap();
        assert!((fit.exponent - 2.0).abs() < 0.01, "exponent {}", fit.exponent);
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn fit_guards_points_and_span() {
        let seven: Vec<(f64, f64)> = (1..=7).map(|i| (i as f64 * 100.0, i as f64)).collect();
        assert!(matches!(
            fit_scaling(&seven),
            Err(Error::InsufficientPoints(_))
        ));

        // Eight points but less than a decade of x-span.
        let narrow: Vec<(f64, f64)> = (1..=8).map(|i| (i as f64, i as f64)).collect();
        assert!(matches!(
            fit_scaling(&narrow),
            Err(Error::InsufficientPoints(_))
        ));

        let with_zero: Vec<(f64, f64)> = (0..10).map(|i| (100.0 * (i + 1) as f64, i as f64)).collect();
        assert!(matches!(
            fit_scaling(&with_zero),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn csv_round_trips_and_empty_is_header_only() {
        assert_eq!(records_to_csv(&[]), format!("{CSV_HEADER}\n"));
        assert_eq!(records_from_csv(&records_to_csv(&[])).unwrap(), vec![]);

        let records = vec![
            BenchRecord {
                variant: BenchVariant::Sparse,
                length: 100,
                nnz: 676,
                peak_bytes: 123_456,
                cpu_time_ms: 0.123456789,
            },
            BenchRecord {
                variant: BenchVariant::DenseFull,
                length: 200,
                nnz: 40_000,
                peak_bytes: 7_000_000,
                cpu_time_ms: 17.25,
            },
        ];
        let text = records_to_csv(&records);
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(records_from_csv(&text).unwrap(), records);

        assert!(records_from_csv("length,nnz\n").is_err());
        assert!(records_from_csv(&format!("{CSV_HEADER}\nsparse,10,20\n")).is_err());
    }

    #[test]
    fn run_requires_instrumented_allocator() {
        // The unit-test binary does not install the counting allocator, so
        // the harness must refuse to produce all-zero measurements.
        let cfg = BenchConfig {
            lengths: vec![16],
            edges_per_token: 3,
            variants: vec![BenchVariant::Sparse],
            repeats: 3,
            dense_cutoff: 4096,
            memory_budget_bytes: 1 << 30,
            seed: 1,
        };
        assert!(matches!(
            run_bench(&cfg),
            Err(Error::AllocatorNotInstrumented)
        ));
    }

    #[test]
    fn summary_skips_unfittable_variants() {
        let cfg = BenchConfig {
            lengths: vec![100, 200],
            edges_per_token: 3,
            variants: vec![BenchVariant::Sparse],
            repeats: 3,
            dense_cutoff: 4096,
            memory_budget_bytes: 1 << 30,
            seed: 1,
        };
        let report = BenchReport {
            records: vec![BenchRecord {
                variant: BenchVariant::Sparse,
                length: 100,
                nnz: 700,
                peak_bytes: 1000,
                cpu_time_ms: 1.0,
            }],
            skipped: vec![],
        };
        let summary = summarize(&cfg, &report);
        assert!(summary.fits.is_empty());
        assert_eq!(summary.config, cfg);
    }
}
