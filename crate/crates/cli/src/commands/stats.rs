use std::path::{Path, PathBuf};

use naln::evalstats::{paired_ttest, summarize, unpaired_ttest, ConditionResults, Summary, TTest};
use naln::{Error, Result};
use serde::Serialize;

use crate::report::{num, write_csv, write_json};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Test {
    Paired,
    Unpaired,
}

#[derive(clap::Args)]
pub struct Args {
    /// Score table of the first condition (`unit` column plus score columns).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value_t = Test::Paired)]
    test: Test,
    /// Write the results as JSON and CSV under this prefix.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ColumnResult {
    column: String,
    a: Summary,
    b: Summary,
    test: TTest,
}

#[derive(Serialize)]
struct Report {
    a: String,
    b: String,
    test: Test,
    columns: Vec<ColumnResult>,
}

struct Table {
    columns: Vec<String>,
    units: Vec<String>,
    /// `rows[i][j]`: unit `i`, score column `j`.
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let fmt = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| fmt(e.to_string()))?;
    let header = reader.headers().map_err(|e| fmt(e.to_string()))?.clone();
    if header.get(0) != Some("unit") || header.len() < 2 {
        return Err(fmt("expected a `unit` column followed by score columns".into()));
    }
    let columns = header.iter().skip(1).map(str::to_string).collect();
    let mut units = Vec::new();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| fmt(e.to_string()))?;
        units.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|_| fmt(format!("row {}: `{v}` is not a number", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, units, rows })
}

impl Table {
    fn condition(&self, name: &str, col: usize) -> Result<ConditionResults> {
        ConditionResults::new(
            name,
            self.units.clone(),
            self.rows.iter().map(|r| r[col]).collect(),
        )
    }
}

pub fn run(a: Args) -> Result<()> {
    let ta = read_table(&a.a)?;
    let tb = read_table(&a.b)?;
    let (na, nb) = (a.a.display().to_string(), a.b.display().to_string());
    let mut columns = Vec::new();
    for (j, col) in ta.columns.iter().enumerate() {
        let Some(k) = tb.columns.iter().position(|c| c == col) else {
            continue;
        };
        let ca = ta.condition(&na, j)?;
        let cb = tb.condition(&nb, k)?;
        let test = match a.test {
            Test::Paired => {
                let (x, y) = ca.align(&cb)?;
                paired_ttest(&x, &y)?
            }
            Test::Unpaired => unpaired_ttest(&ca.scores, &cb.scores)?,
        };
        let (sa, sb) = (summarize(&ca.scores)?, summarize(&cb.scores)?);
        println!(
            "{col}: {:.4} ± {:.4} vs {:.4} ± {:.4}, t({}) = {:.3}, p = {:.4}",
            sa.mean, sa.std_error, sb.mean, sb.std_error, test.df, test.t, test.p
        );
        columns.push(ColumnResult {
            column: col.clone(),
            a: sa,
            b: sb,
            test,
        });
    }
    if columns.is_empty() {
        return Err(Error::Data("the two tables share no score column".into()));
    }
    if let Some(out) = a.out {
        let rows: Vec<Vec<String>> = columns
            .iter()
            .map(|c| {
                vec![
                    c.column.clone(),
                    num(c.a.mean),
                    num(c.a.std_error),
                    num(c.b.mean),
                    num(c.b.std_error),
                    num(c.test.t),
                    c.test.df.to_string(),
                    num(c.test.p),
                ]
            })
            .collect();
        write_csv(
            &out.with_extension("csv"),
            &["column", "mean_a", "se_a", "mean_b", "se_b", "t", "df", "p"],
            &rows,
        )?;
        write_json(
            &out.with_extension("json"),
            &Report {
                a: na,
                b: nb,
                test: a.test,
                columns,
            },
        )?;
    }
    Ok(())
}
