//! `report` turns metrics files from one or more runs into a comparison
//! table: accuracy as a percentage and macro-F1 as a fraction, both to two
//! decimals. The table goes to stdout; `--csv` writes the same rows as CSV.

use std::path::PathBuf;

use clap::Args;
use peftkit_core::{Error, Result};

use crate::pipeline::RunMetrics;

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// metrics.json files, one per run; rows keep this order.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    /// Also write the table as CSV to this path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

struct Row {
    run: String,
    task: String,
    accuracy_pct: f64,
    macro_f1: f64,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    let mut rows = Vec::with_capacity(args.metrics.len());
    for path in &args.metrics {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read metrics {}: {e}", path.display())))?;
        let m: RunMetrics = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        rows.push(Row {
            run: m.variant,
            task: m.task,
            accuracy_pct: 100.0 * m.accuracy,
            macro_f1: m.macro_f1,
        });
    }
    let run_w = rows
        .iter()
        .map(|r| r.run.len())
        .chain([3])
        .max()
        .unwrap_or(3);
    let task_w = rows
        .iter()
        .map(|r| r.task.len())
        .chain([4])
        .max()
        .unwrap_or(4);
    println!("{:run_w$}  {:task_w$}  {:>12}  {:>5}", "Run", "Task", "Accuracy (%)", "F1");
    for r in &rows {
        println!(
            "{:run_w$}  {:task_w$}  {:>12.2}  {:>5.2}",
            r.run, r.task, r.accuracy_pct, r.macro_f1
        );
    }
    if let Some(csv_path) = &args.csv {
        let mut csv = String::from("run,task,accuracy_pct,macro_f1\n");
        for r in &rows {
            csv.push_str(&format!(
                "{},{},{:.2},{:.2}\n",
                r.run, r.task, r.accuracy_pct, r.macro_f1
            ));
        }
        std::fs::write(csv_path, csv)?;
    }
    Ok(())
}
