//! Repeated-run benchmark over a grid of depths and pruning thresholds.
//!
//! Every (architecture, h, alpha, run) job derives its seeds from the master
//! seed. The split seed depends on the run index only, so all cells, and in
//! particular cupnet and regnet within a cell, see identical train/test
//! splits for the same run. Results are reduced in job-key order, which makes
//! the report independent of scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_mask, pairwise_distances, PruneMask};
use crate::network::{build_cupnet, build_regnet, param_count_cup, param_count_ref, solve_s, ArchConfig, ArchKind};
use crate::synthcup::Dataset;
use crate::training::{dataset_tables, stratified_split, train, Split, Standardizer, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchPlan {
    pub h_values: Vec<usize>,
    pub alpha_values: Vec<f64>,
    pub runs: usize,
    pub test_fraction: f64,
    pub architectures: Vec<ArchKind>,
    pub master_seed: u64,
    pub train: TrainConfig,
}

impl Default for BenchPlan {
    fn default() -> Self {
        Self {
            h_values: (1..=7).collect(),
            alpha_values: vec![1.0, 2.5, 5.0, 10.0, 25.0, 50.0],
            runs: 10,
            test_fraction: 0.1,
            architectures: vec![ArchKind::CupNet, ArchKind::RegNet],
            master_seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl BenchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::InvalidInput("runs must be >= 1".into()));
        }
        if self.h_values.is_empty() || self.alpha_values.is_empty() || self.architectures.is_empty() {
            return Err(Error::InvalidInput("benchmark grid is empty".into()));
        }
        if self.h_values.contains(&0) {
            return Err(Error::InvalidInput("depth h must be >= 1".into()));
        }
        if self.alpha_values.iter().any(|a| !(*a >= 0.0)) {
            return Err(Error::InvalidInput("pruning thresholds must be >= 0".into()));
        }
        self.train.validate()
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(mix(master), |acc, &p| mix(acc ^ mix(p)))
}

const TAG_SPLIT: u64 = 1;
const TAG_INIT: u64 = 2;
const TAG_TRAIN: u64 = 3;

fn arch_tag(kind: ArchKind) -> u64 {
    match kind {
        ArchKind::CupNet => 0,
        ArchKind::RegNet => 1,
    }
}

/// Seeds used for one run of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub split: u64,
    pub init: u64,
    pub train: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, kind: ArchKind, h: usize, alpha: f64, run: usize) -> Self {
        let cell = [arch_tag(kind), h as u64, alpha.to_bits(), run as u64];
        Self {
            split: derive_seed(master, &[TAG_SPLIT, run as u64]),
            init: derive_seed(master, &[&[TAG_INIT][..], &cell].concat()),
            train: derive_seed(master, &[&[TAG_TRAIN][..], &cell].concat()),
        }
    }
}

/// Parameter budget of one (h, alpha) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellBudget {
    pub c_alpha: usize,
    pub n_cup: u64,
    pub s: u64,
    pub n_ref: u64,
}

impl CellBudget {
    pub fn compute(k: usize, m: usize, h: usize, c_alpha: usize) -> Result<Self> {
        let (k64, m64, h64) = (k as u64, m as u64, h as u64);
        let d = 3 * m64;
        let n_cup = param_count_cup(k64, d, m64, h64, c_alpha as u64)?;
        let s = solve_s(k64, d, h64, n_cup)?;
        let n_ref = param_count_ref(k64, d, h64, s)?;
        Ok(Self { c_alpha, n_cup, s, n_ref })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub run: usize,
    pub r2: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRecord {
    pub architecture: ArchKind,
    pub h: usize,
    pub alpha: f64,
    pub budget: CellBudget,
    pub runs: Vec<RunRecord>,
}

/// Mean and sample standard deviation of a cell's completed runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellStats {
    pub mean: f64,
    pub std: f64,
    pub completed: usize,
    pub failed: usize,
    /// Only one run completed; `std` is reported as 0.
    pub single_run: bool,
}

impl CellRecord {
    pub fn r2_values(&self) -> Vec<f64> {
        self.runs.iter().filter_map(|r| r.r2).collect()
    }

    /// `None` when every run failed.
    pub fn stats(&self) -> Option<CellStats> {
        let values = self.r2_values();
        let failed = self.runs.len() - values.len();
        let (mean, std) = mean_std(&values)?;
        Some(CellStats {
            mean,
            std,
            completed: values.len(),
            failed,
            single_run: values.len() == 1,
        })
    }
}

/// Mean and sample (n - 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub plan: BenchPlan,
    pub m: usize,
    pub k: usize,
    pub n_samples: usize,
    pub cells: Vec<CellRecord>,
    pub wall_clock_secs: f64,
}

/// Shared, read-only inputs of every run.
pub struct BenchContext {
    tables: Split,
    labels: Vec<crate::synthcup::Label>,
    masks: BTreeMap<u64, Arc<PruneMask>>,
    k: usize,
    m: usize,
}

impl BenchContext {
    /// Builds the distance matrix once and one mask per threshold.
    pub fn new(dataset: &Dataset, alpha_values: &[f64]) -> Result<Self> {
        let dist = pairwise_distances(&dataset.base_mesh);
        let mut masks = BTreeMap::new();
        for &alpha in alpha_values {
            masks.insert(alpha.to_bits(), Arc::new(build_mask(&dist, alpha)?));
        }
        Ok(Self {
            tables: dataset_tables(dataset)?,
            labels: dataset.labels(),
            masks,
            k: dataset.k(),
            m: dataset.m(),
        })
    }

    pub fn mask(&self, alpha: f64) -> Result<&Arc<PruneMask>> {
        self.masks
            .get(&alpha.to_bits())
            .ok_or_else(|| Error::InvalidInput(format!("no mask prepared for alpha = {alpha}")))
    }

    pub fn budget(&self, h: usize, alpha: f64) -> Result<CellBudget> {
        CellBudget::compute(self.k, self.m, h, self.mask(alpha)?.count())
    }

    /// Stratified split and train-fitted standardization for one run.
    pub fn prepare(&self, test_fraction: f64, split_seed: u64) -> Result<(Split, Split, Standardizer)> {
        let (train_idx, test_idx) = stratified_split(&self.labels, test_fraction, split_seed)?;
        let raw_train = Split {
            inputs: self.tables.inputs.select(&train_idx),
            targets: self.tables.targets.select(&train_idx),
        };
        let raw_test = Split {
            inputs: self.tables.inputs.select(&test_idx),
            targets: self.tables.targets.select(&test_idx),
        };
        let st = Standardizer::fit(&raw_train)?;
        Ok((st.transform(&raw_train), st.transform(&raw_test), st))
    }

    /// Trains and scores one run; R² is computed in standardized space.
    pub fn run_once(&self, plan: &BenchPlan, kind: ArchKind, h: usize, alpha: f64, run: usize) -> Result<f64> {
        let seeds = RunSeeds::derive(plan.master_seed, kind, h, alpha, run);
        let (train_split, test_split, _) = self.prepare(plan.test_fraction, seeds.split)?;
        let mut cfg = ArchConfig::new(self.k, self.m, h, alpha);
        cfg.dropout_rate = plan.train.dropout_rate;
        let mask = self.mask(alpha)?;
        let mut net = match kind {
            ArchKind::CupNet => build_cupnet(&cfg, Arc::clone(mask), seeds.init)?,
            ArchKind::RegNet => {
                cfg.s = Some(self.budget(h, alpha)?.s as usize);
                build_regnet(&cfg, seeds.init)?
            }
        };
        let tcfg = TrainConfig {
            seed: seeds.train,
            ..plan.train.clone()
        };
        let history = train(&mut net, &train_split, Some(&test_split), &tcfg)?;
        history
            .final_r2
            .ok_or_else(|| Error::Internal("training returned no test score".into()))
    }
}

/// All runs of one cell, executed sequentially.
pub fn run_cell(ctx: &BenchContext, plan: &BenchPlan, h: usize, alpha: f64, kind: ArchKind) -> Result<CellRecord> {
    let runs = (0..plan.runs)
        .map(|run| run_record(ctx.run_once(plan, kind, h, alpha, run), run))
        .collect();
    Ok(CellRecord {
        architecture: kind,
        h,
        alpha,
        budget: ctx.budget(h, alpha)?,
        runs,
    })
}

fn run_record(result: Result<f64>, run: usize) -> RunRecord {
    match result {
        Ok(r2) => RunRecord {
            run,
            r2: Some(r2),
            error: None,
        },
        Err(e) => RunRecord {
            run,
            r2: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the whole plan on a pool of `jobs` worker threads.
pub fn run_bench(dataset: &Dataset, plan: &BenchPlan, jobs: usize) -> Result<BenchReport> {
    plan.validate()?;
    let start = Instant::now();
    let ctx = BenchContext::new(dataset, &plan.alpha_values)?;

    let mut keys = Vec::new();
    for &kind in &plan.architectures {
        for &h in &plan.h_values {
            for &alpha in &plan.alpha_values {
                for run in 0..plan.runs {
                    keys.push((kind, h, alpha, run));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    let outcomes: Vec<RunRecord> = pool.install(|| {
        keys.par_iter()
            .map(|&(kind, h, alpha, run)| run_record(ctx.run_once(plan, kind, h, alpha, run), run))
            .collect()
    });

    let mut cells = Vec::new();
    for (chunk_keys, chunk) in keys.chunks(plan.runs).zip(outcomes.chunks(plan.runs)) {
        let (kind, h, alpha, _) = chunk_keys[0];
        cells.push(CellRecord {
            architecture: kind,
            h,
            alpha,
            budget: ctx.budget(h, alpha)?,
            runs: chunk.to_vec(),
        });
    }
    Ok(BenchReport {
        plan: plan.clone(),
        m: dataset.m(),
        k: dataset.k(),
        n_samples: dataset.len(),
        cells,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

impl BenchReport {
    pub fn failures(&self) -> Vec<serde_json::Value> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.runs.iter().filter_map(move |r| {
                    r.error.as_ref().map(|e| {
                        serde_json::json!({
                            "architecture": c.architecture,
                            "h": c.h,
                            "alpha": c.alpha,
                            "run": r.run,
                            "error": e,
                        })
                    })
                })
            })
            .collect()
    }

    /// Long format, one row per run; failed runs have an empty `r2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("architecture,h,alpha,s,n_cup,n_ref,run,r2\n");
        for c in &self.cells {
            for r in &c.runs {
                let r2 = r.r2.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    c.architecture, c.h, c.alpha, c.budget.s, c.budget.n_cup, c.budget.n_ref, r.run, r2
                );
            }
        }
        out
    }

    /// Grid of `mean ± std` per (architecture, h) row and alpha column; the
    /// best mean of each column is bold. Followed by the parameter budgets.
    pub fn to_markdown(&self) -> String {
        let plan = &self.plan;
        let mut out = String::new();
        let _ = writeln!(out, "# R² benchmark\n");
        let _ = writeln!(
            out,
            "Mean ± sample standard deviation (n − 1) over {} runs; m = {}, k = {}, n = {}.",
            plan.runs, self.m, self.k, self.n_samples
        );
        let _ = writeln!(
            out,
            "`†` marks cells with a single completed run (std shown as 0); `(f failed)` counts excluded runs.\n"
        );

        let find = |kind: ArchKind, h: usize, alpha: f64| {
            self.cells
                .iter()
                .find(|c| c.architecture == kind && c.h == h && c.alpha.to_bits() == alpha.to_bits())
        };
        let best: Vec<Option<f64>> = plan
            .alpha_values
            .iter()
            .map(|&a| {
                self.cells
                    .iter()
                    .filter(|c| c.alpha.to_bits() == a.to_bits())
                    .filter_map(|c| c.stats().map(|s| s.mean))
                    .fold(None, |acc: Option<f64>, m| Some(acc.map_or(m, |b| b.max(m))))
            })
            .collect();

        out.push_str("| network |");
        for a in &plan.alpha_values {
            let _ = write!(out, " α={a} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(plan.alpha_values.len()));
        out.push('\n');
        for &h in &plan.h_values {
            for &kind in &plan.architectures {
                let _ = write!(out, "| {kind} (h={h}) |");
                for (col, &alpha) in plan.alpha_values.iter().enumerate() {
                    let cell = find(kind, h, alpha).and_then(|c| c.stats());
                    match cell {
                        None => out.push_str(" failed |"),
                        Some(st) => {
                            let mut text = format!("{:.3} ± {:.3}", st.mean, st.std);
                            if st.single_run {
                                text.push('†');
                            }
                            if best[col] == Some(st.mean) {
                                text = format!("**{text}**");
                            }
                            if st.failed > 0 {
                                let _ = write!(text, " ({} failed)", st.failed);
                            }
                            let _ = write!(out, " {text} |");
                        }
                    }
                }
                out.push('\n');
            }
        }

        out.push_str("\n## Parameter counts\n\n| h | α | c(α) | n_cup | s | n_ref |\n|---|---|---|---|---|---|\n");
        for &h in &plan.h_values {
            for &alpha in &plan.alpha_values {
                if let Some(c) = plan.architectures.iter().find_map(|&k| find(k, h, alpha)) {
                    let b = c.budget;
                    let _ = writeln!(out, "| {h} | {alpha} | {} | {} | {} | {} |", b.c_alpha, b.n_cup, b.s, b.n_ref);
                }
            }
        }
        out
    }

    pub fn meta_json(&self) -> serde_json::Value {
        serde_json::json!({
            "plan": self.plan,
            "master_seed": self.plan.master_seed,
            "std_convention": "sample (n - 1); single completed run reported as 0",
            "split_seed_policy": "split seed depends on master seed and run index only",
            "m": self.m,
            "k": self.k,
            "n_samples": self.n_samples,
            "failures": self.failures(),
            "wall_clock_secs": self.wall_clock_secs,
        })
    }

    /// Writes `report.csv`, `report.md` and `meta.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("report.csv", self.to_csv()),
            ("report.md", self.to_markdown()),
            ("meta.json", serde_json::to_string_pretty(&self.meta_json())? + "\n"),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_conventions() {
        let (m, s) = mean_std(&[0.8, 0.9]).unwrap();
        assert!((m - 0.85).abs() < 1e-15);
        assert!((s - 0.070_710_678_118_654_76).abs() < 1e-12);
        assert_eq!(mean_std(&[0.5]).unwrap(), (0.5, 0.0));
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn split_seed_is_shared_across_cells() {
        let a = RunSeeds::derive(7, ArchKind::CupNet, 2, 5.0, 3);
        let b = RunSeeds::derive(7, ArchKind::RegNet, 4, 25.0, 3);
        assert_eq!(a.split, b.split);
        assert_ne!(a.init, b.init);
        assert_ne!(a.train, b.train);
        assert_ne!(a.split, RunSeeds::derive(7, ArchKind::CupNet, 2, 5.0, 4).split);
        assert_ne!(a.split, RunSeeds::derive(8, ArchKind::CupNet, 2, 5.0, 3).split);
    }

    #[test]
    fn cell_stats_skip_failures() {
        let cell = CellRecord {
            architecture: ArchKind::CupNet,
            h: 1,
            alpha: 1.0,
            budget: CellBudget::compute(1, 2, 1, 2).unwrap(),
            runs: vec![
                RunRecord { run: 0, r2: Some(0.7), error: None },
                RunRecord { run: 1, r2: None, error: Some("diverged".into()) },
            ],
        };
        let st = cell.stats().unwrap();
        assert_eq!((st.mean, st.std, st.completed, st.failed, st.single_run), (0.7, 0.0, 1, 1, true));
    }

    #[test]
    fn plan_validation() {
        assert!(BenchPlan::default().validate().is_ok());
        assert!(BenchPlan { runs: 0, ..Default::default() }.validate().is_err());
        assert!(BenchPlan { h_values: vec![], ..Default::default() }.validate().is_err());
        assert!(BenchPlan { alpha_values: vec![-1.0], ..Default::default() }.validate().is_err());
    }
}
