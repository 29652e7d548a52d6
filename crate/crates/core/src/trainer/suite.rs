use std::fmt::Write as _;

use super::{train, AblationRow, TrainConfig, TrainError, TrainOptions};
use crate::dataset::Dataset;
use crate::eval::{evaluate_retrieval, factor_name, ChunkTable};
use crate::models::ModelParams;

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub row: AblationRow,
    pub seed: u64,
    pub table: ChunkTable,
    pub params: ModelParams,
}

#[derive(Clone, Debug)]
pub struct AblationReport {
    pub results: Vec<AblationResult>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationReport {
    pub fn for_row(&self, row: AblationRow) -> Vec<&AblationResult> {
        self.results.iter().filter(|r| r.row == row).collect()
    }

    /// Median over seeds of the average best-chunk mAP.
    pub fn median_average(&self, row: AblationRow) -> f64 {
        median(self.for_row(row).iter().map(|r| r.table.average()).collect())
    }

    /// Rows are methods, columns the per-factor best-chunk mAP and their
    /// average, each the median over seeds.
    pub fn to_tsv(&self) -> String {
        let factors = self.results.first().map_or(0, |r| r.table.best_map.len());
        let mut out = String::from("method");
        for f in 0..factors {
            let _ = write!(out, "\t{}", factor_name(f));
        }
        out.push_str("\taverage\n");
        let mut rows: Vec<AblationRow> = Vec::new();
        for r in &self.results {
            if !rows.contains(&r.row) {
                rows.push(r.row);
            }
        }
        for row in rows {
            let runs = self.for_row(row);
            let _ = write!(out, "{}", row.name());
            for f in 0..factors {
                let m = median(runs.iter().map(|r| r.table.best_map[f]).collect());
                let _ = write!(out, "\t{m:.4}");
            }
            let _ = writeln!(out, "\t{:.4}", self.median_average(row));
        }
        out
    }

    /// One line per (method, seed) with the average best-chunk mAP.
    pub fn per_seed_tsv(&self) -> String {
        let mut out = String::from("method\tseed\taverage\tbest_chunks\n");
        for r in &self.results {
            let best: Vec<String> = r.table.best_chunk.iter().map(|c| c.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{:.4}\t{}", r.row.name(), r.seed, r.table.average(), best.join(","));
        }
        out
    }
}

/// Trains every `rows` entry once per seed on the training split and
/// scores it on the test split. `on_result` sees each run as it finishes.
pub fn ablation_suite(
    data: &Dataset,
    rows: &[AblationRow],
    seeds: &[u64],
    base: &TrainConfig,
    mut on_result: impl FnMut(&AblationResult),
) -> Result<AblationReport, TrainError> {
    if seeds.is_empty() {
        return Err(TrainError::Config("ablation needs at least one seed".into()));
    }
    let mut results = Vec::new();
    for &row in rows {
        for &seed in seeds {
            let seeded = TrainConfig { seed, ..base.clone() };
            let params = match row.config(&seeded) {
                None => ModelParams::init(seeded.layout, seed),
                Some(cfg) => train(&cfg, data.train.images(), &TrainOptions::default())?.params,
            };
            let table = evaluate_retrieval(&params, data)?;
            let result = AblationResult {
                row,
                seed,
                table,
                params,
            };
            on_result(&result);
            results.push(result);
        }
    }
    Ok(AblationReport { results })
}
