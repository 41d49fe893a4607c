//! Tabular reports over run records, as CSV and an aligned text table.

use serde::Serialize;

use super::run::RunRecord;
use super::HarnessError;

pub const COLUMNS: [&str; 11] = [
    "task",
    "method",
    "backend",
    "bot_n",
    "demographics",
    "seed_set",
    "R",
    "rho",
    "MAE",
    "R2x100",
    "n_test",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub task: String,
    pub method: String,
    pub backend: String,
    pub bot_n: u32,
    pub demographics: bool,
    pub seed_set: String,
    #[serde(rename = "R")]
    pub pearson: String,
    #[serde(rename = "rho")]
    pub spearman: String,
    #[serde(rename = "MAE")]
    pub mae: String,
    #[serde(rename = "R2x100")]
    pub r2x100: String,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub csv: String,
    pub text: String,
}

/// Percent with one decimal, the convention for MAE and R² columns.
pub fn format_percent(value: f64) -> String {
    format!("{value:.1}")
}

fn row(record: &RunRecord) -> ReportRow {
    let config = &record.config;
    let method = if config.greedy {
        format!("{}+greedy", config.method.as_str())
    } else {
        config.method.as_str().to_string()
    };
    let seeds: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    ReportRow {
        task: config.task.as_str().to_string(),
        method,
        backend: config.backend_label(),
        bot_n: if config.greedy { 1 } else { config.bot_n },
        demographics: config.include_demographics,
        seed_set: seeds.join(","),
        pearson: format!("{:.3}", record.report.pearson),
        spearman: format!("{:.3}", record.report.spearman),
        mae: format_percent(record.report.mae_percent),
        r2x100: format_percent(record.report.r_squared * 100.0),
        n_test: record.report.n_test,
    }
}

/// One row per record, sorted by task, method, backend, `bot_n` and the
/// demographics flag.
pub fn emit_report(records: &[RunRecord]) -> Result<Report, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::Config("no run records to report".into()));
    }
    let mut keyed: Vec<_> = records
        .iter()
        .map(|r| {
            let key = (
                r.config.task,
                r.config.method,
                r.config.backend_label(),
                r.config.greedy,
                r.config.bot_n,
                r.config.include_demographics,
            );
            (key, row(r))
        })
        .collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    let rows: Vec<ReportRow> = keyed.into_iter().map(|(_, r)| r).collect();

    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        writer.serialize(r).map_err(|e| HarnessError::Record(e.to_string()))?;
    }
    let csv = String::from_utf8(writer.into_inner().map_err(|e| HarnessError::Record(e.to_string()))?)
        .expect("csv output is utf-8");

    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.task.clone(),
                r.method.clone(),
                r.backend.clone(),
                r.bot_n.to_string(),
                r.demographics.to_string(),
                r.seed_set.clone(),
                r.pearson.clone(),
                r.spearman.clone(),
                r.mae.clone(),
                r.r2x100.clone(),
                r.n_test.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..COLUMNS.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain([COLUMNS[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let render = |values: Vec<&str>| -> String {
        values
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut text = render(COLUMNS.to_vec());
    text.push('\n');
    for row in &cells {
        text.push_str(&render(row.iter().map(String::as_str).collect()));
        text.push('\n');
    }
    Ok(Report { rows, csv, text })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{ExperimentConfig, Method};
    use crate::harness::run::Timing;
    use crate::metrics::{mae_percent, RegressionReport};

    fn record(method: Method, bot_n: u32, mae: f64) -> RunRecord {
        RunRecord {
            run_id: format!("{}-{bot_n}", method.as_str()),
            code_version: "test".into(),
            config: ExperimentConfig {
                method,
                bot_n,
                ..Default::default()
            },
            question_key: "likes_partner".into(),
            corpus_hash: "h".into(),
            backend_id: "b".into(),
            splits: vec![],
            estimates: vec![],
            report: RegressionReport {
                pearson: 0.5,
                spearman: 0.25,
                mae_percent: mae,
                r_squared: 0.125,
                n_test: 10,
                train_mean: 0.5,
            },
            timing: Timing::default(),
        }
    }

    #[test]
    fn one_record_one_row() {
        let report = emit_report(&[record(Method::Df, 1, 10.0)]).unwrap();
        assert_eq!(report.csv.lines().count(), 2);
        assert_eq!(report.csv.lines().next().unwrap(), COLUMNS.join(","));
        assert_eq!(report.text.lines().count(), 2);
        assert_eq!(report.rows[0].r2x100, "12.5");
    }

    #[test]
    fn rows_sorted_with_ablations_adjacent() {
        let records = [
            record(Method::DfLs, 10, 1.0),
            record(Method::Df, 1, 1.0),
            record(Method::DfLs, 1, 1.0),
        ];
        let report = emit_report(&records).unwrap();
        let order: Vec<(String, u32)> = report.rows.iter().map(|r| (r.method.clone(), r.bot_n)).collect();
        assert_eq!(order, vec![("df".into(), 1), ("df_ls".into(), 1), ("df_ls".into(), 10)]);
    }

    #[test]
    fn mae_prints_one_decimal_percent() {
        let mae = mae_percent(&[0.177], &[0.0]).unwrap();
        assert_eq!(emit_report(&[record(Method::Df, 1, mae)]).unwrap().rows[0].mae, "17.7");
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(emit_report(&[]).is_err());
    }
}
