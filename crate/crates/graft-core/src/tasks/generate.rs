//! Synthetic program generator for the variable-misuse task, plus the
//! line-delimited JSON dataset format.
//!
//! Clean programs follow one discipline: every assignment whose right side
//! mentions a variable mentions only the assignment's own target
//! (`v = v + 3` style updates). Corruption swaps exactly one such use for
//! a different, earlier-defined variable, so the label is unambiguous and
//! the repair is always the corrupted statement's target. Condition
//! expressions read variables too but are never corrupted.

use super::VarMisuseSample;
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::graph::CodeGraph;
use crate::lang::TokenKind;
use crate::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Variable names the generator draws from. None collide with keywords.
const VAR_POOL: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "n"];
const OPS: [&str; 4] = ["+", "-", "*", "/"];
const RELS: [&str; 3] = ["<", ">", "=="];

/// Generator settings in one serializable bundle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    pub bug_rate: Real,
    pub min_statements: usize,
    pub max_statements: usize,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            count: 2000,
            bug_rate: 0.5,
            min_statements: 3,
            max_statements: 10,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn generate(&self) -> Result<Vec<VarMisuseSample>> {
        generate_dataset(
            self.count,
            self.bug_rate,
            (self.min_statements, self.max_statements),
            self.seed,
        )
    }
}

/// One recorded update statement: `var = var op literal`.
struct UpdateSite {
    /// Token index of the assignment target.
    lhs: usize,
    /// Token index of the variable use on the right side.
    rhs_use: usize,
    var: usize,
    /// How many pool variables were defined before this statement.
    defined_before: usize,
}

struct ProgramBuilder<'r> {
    rng: &'r mut ChaCha8Rng,
    tokens: Vec<String>,
    /// Pool indices in definition order.
    defined: Vec<usize>,
    updates: Vec<UpdateSite>,
}

impl ProgramBuilder<'_> {
    fn lit(&mut self) -> String {
        self.rng.gen_range(0..10u32).to_string()
    }

    fn defined_var(&mut self) -> usize {
        self.defined[self.rng.gen_range(0..self.defined.len())]
    }

    fn init_stmt(&mut self) {
        // Prefer a fresh variable while the pool lasts; otherwise
        // redefine an existing one.
        let fresh: Vec<usize> = (0..VAR_POOL.len())
            .filter(|i| !self.defined.contains(i))
            .collect();
        let var = if !fresh.is_empty() && (self.defined.is_empty() || self.rng.gen::<f64>() < 0.6)
        {
            fresh[self.rng.gen_range(0..fresh.len())]
        } else {
            self.defined_var()
        };
        let value = self.lit();
        self.tokens.extend([VAR_POOL[var].to_string(), "=".to_string(), value]);
        if !self.defined.contains(&var) {
            self.defined.push(var);
        }
    }

    fn update_stmt(&mut self) {
        let defined_before = self.defined.len();
        let var = self.defined_var();
        let op = OPS[self.rng.gen_range(0..OPS.len())];
        let value = self.lit();
        let lhs = self.tokens.len();
        let rhs_use = lhs + 2;
        self.tokens.extend([
            VAR_POOL[var].to_string(),
            "=".to_string(),
            VAR_POOL[var].to_string(),
            op.to_string(),
            value,
        ]);
        self.updates.push(UpdateSite {
            lhs,
            rhs_use,
            var,
            defined_before,
        });
    }

    fn condition(&mut self) {
        let var = self.defined_var();
        let rel = RELS[self.rng.gen_range(0..RELS.len())];
        let value = self.lit();
        self.tokens
            .extend([VAR_POOL[var].to_string(), rel.to_string(), value]);
    }

    /// Emits `count` body statements between braces; returns statements
    /// spent. Bodies stay flat: only assignments nest under control flow.
    fn body(&mut self, count: usize) -> usize {
        self.tokens.push("{".to_string());
        for _ in 0..count {
            if self.rng.gen::<f64>() < 0.7 {
                self.update_stmt();
            } else {
                self.init_stmt();
            }
        }
        self.tokens.push("}".to_string());
        count
    }

    /// Emits one statement group, spending at most `budget` statements
    /// (which is always >= 1). Returns the number spent.
    fn next_group(&mut self, budget: usize) -> usize {
        let roll = self.rng.gen_range(0..10u32);
        match roll {
            0..=1 => {
                self.init_stmt();
                1
            }
            2..=6 => {
                self.update_stmt();
                1
            }
            7..=8 if budget >= 2 => {
                self.tokens.push("while".to_string());
                self.condition();
                let body = self.rng.gen_range(1..=(budget - 1).min(2));
                1 + self.body(body)
            }
            _ if budget >= 2 => {
                self.tokens.push("if".to_string());
                self.condition();
                let then_count = self.rng.gen_range(1..=(budget - 1).min(2));
                let mut spent = 1 + self.body(then_count);
                let left = budget - spent;
                if left >= 1 && self.rng.gen::<f64>() < 0.5 {
                    self.tokens.push("else".to_string());
                    let else_count = self.rng.gen_range(1..=left.min(2));
                    spent += self.body(else_count);
                }
                spent
            }
            _ => {
                self.update_stmt();
                1
            }
        }
    }
}

/// Generates `n` samples. Each program holds between `size_range.0` and
/// `size_range.1` statements (counting nested ones); with probability
/// `bug_rate` one update's right-side variable use is swapped for a
/// different variable defined earlier in the program. Deterministic given
/// `seed`.
pub fn generate_dataset(
    n: usize,
    bug_rate: Real,
    size_range: (usize, usize),
    seed: u64,
) -> Result<Vec<VarMisuseSample>> {
    if !(0.0..=1.0).contains(&bug_rate) {
        return Err(Error::InvalidParameter(format!(
            "bug_rate must lie in [0, 1], got {bug_rate}"
        )));
    }
    let (min, max) = size_range;
    if min < 3 || min > max {
        return Err(Error::InvalidParameter(format!(
            "size_range ({min}, {max}) is invalid: a corruptible program needs \
             two initializations and one update, so the minimum is 3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let bug = rng.gen::<f64>() < bug_rate;
        let budget = rng.gen_range(min..=max);
        let mut builder = ProgramBuilder {
            rng: &mut rng,
            tokens: Vec::new(),
            defined: Vec::new(),
            updates: Vec::new(),
        };
        // Fixed prologue: two distinct definitions, then one update, so
        // every program has a corruption site with an alternative variable.
        builder.init_stmt();
        let first = builder.defined[0];
        loop {
            builder.init_stmt();
            if builder.defined.len() == 2 {
                break;
            }
            // The second init reused the first variable: drop its tokens
            // and retry. Rare (p 0.4 * 1/8 per attempt).
            builder.tokens.truncate(3);
            debug_assert_eq!(builder.defined, vec![first]);
        }
        builder.update_stmt();
        let mut remaining = budget.saturating_sub(3);
        while remaining > 0 {
            remaining -= builder.next_group(remaining);
        }

        let (bug_location, repair_target) = if bug {
            let site = &builder.updates[builder.rng.gen_range(0..builder.updates.len())];
            let alternatives: Vec<usize> = builder.defined[..site.defined_before]
                .iter()
                .copied()
                .filter(|&v| v != site.var)
                .collect();
            // The prologue guarantees two distinct variables before the
            // first update, so this can never be empty.
            let wrong = alternatives[builder.rng.gen_range(0..alternatives.len())];
            builder.tokens[site.rhs_use] = VAR_POOL[wrong].to_string();
            (Some(site.rhs_use), Some(site.lhs))
        } else {
            (None, None)
        };

        let source = builder.tokens.join(" ");
        let graph = CodeGraph::from_source(&source)?;
        debug_assert_eq!(graph.token_count(), builder.tokens.len());
        samples.push(VarMisuseSample {
            source,
            graph,
            bug_present: bug,
            bug_location,
            repair_target,
        });
    }
    Ok(samples)
}

/// The vocabulary induced by a sample set's token texts.
pub fn dataset_vocab(samples: &[VarMisuseSample]) -> Vocab {
    Vocab::from_texts(
        samples
            .iter()
            .flat_map(|s| s.graph.tokens.iter().map(|t| t.text.clone())),
    )
}

#[derive(Serialize, Deserialize)]
struct SampleRecord {
    source: String,
    bug_present: bool,
    bug_location: Option<usize>,
    repair_target: Option<usize>,
}

/// Writes one JSON object per line.
pub fn write_dataset(path: &Path, samples: &[VarMisuseSample]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(Error::io(path.display().to_string()))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let record = SampleRecord {
            source: s.source.clone(),
            bug_present: s.bug_present,
            bug_location: s.bug_location,
            repair_target: s.repair_target,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")
            .map_err(Error::io(path.display().to_string()))?;
    }
    out.flush().map_err(Error::io(path.display().to_string()))
}

/// Reads a line-delimited dataset back, re-parsing each source and
/// validating the label invariants.
pub fn read_dataset(path: &Path) -> Result<Vec<VarMisuseSample>> {
    let file = std::fs::File::open(path).map_err(Error::io(path.display().to_string()))?;
    let mut samples = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(Error::io(format!("{}:{}", path.display(), lineno + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line)?;
        let graph = CodeGraph::from_source(&record.source)?;
        let check_ident = |idx: Option<usize>, what: &str| -> Result<()> {
            match idx {
                Some(i) if !record.bug_present => Err(Error::InvalidParameter(format!(
                    "line {}: {what} {i} set on a clean sample",
                    lineno + 1
                ))),
                None if record.bug_present => Err(Error::InvalidParameter(format!(
                    "line {}: buggy sample is missing {what}",
                    lineno + 1
                ))),
                Some(i) => match graph.tokens.get(i) {
                    Some(t) if t.kind == TokenKind::Identifier => Ok(()),
                    Some(t) => Err(Error::WrongKind(format!(
                        "line {}: {what} {i} is {:?}, not an identifier",
                        lineno + 1,
                        t.text
                    ))),
                    None => Err(Error::IndexOutOfRange(format!(
                        "line {}: {what} {i} exceeds {} tokens",
                        lineno + 1,
                        graph.token_count()
                    ))),
                },
                None => Ok(()),
            }
        };
        check_ident(record.bug_location, "bug_location")?;
        check_ident(record.repair_target, "repair_target")?;
        if let (Some(l), Some(r)) = (record.bug_location, record.repair_target) {
            if graph.tokens[l].text == graph.tokens[r].text {
                return Err(Error::InvalidParameter(format!(
                    "line {}: bug and repair tokens carry the same text {:?}",
                    lineno + 1,
                    graph.tokens[l].text
                )));
            }
        }
        samples.push(VarMisuseSample {
            source: record.source,
            graph,
            bug_present: record.bug_present,
            bug_location: record.bug_location,
            repair_target: record.repair_target,
        });
    }
    Ok(samples)
}
