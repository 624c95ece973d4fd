//! `robust-iv analyze`: robust intervals for every requested test and `U`.

use std::fmt::Write as _;
use std::fs::File;

use robust_iv::interval::fmt_sig;
use robust_iv::model::build_projection_cache;
use robust_iv::{
    sargan_statistic, sensitivity_sweep, tsls_fit, AnalysisConfig, GridSpec, IvDataset,
    RobustCiReport, SensitivityReport, SubsetSpec, TestKind,
};
use serde::Serialize;

use crate::csv_input::{read_dataset, CsvSchema};
use crate::{AnalyzeArgs, CliError, CliResult};

/// Parses `["1-3", "5"]` into `[1, 2, 3, 5]`.
pub fn parse_u_list(items: &[String]) -> CliResult<Vec<usize>> {
    let mut out = Vec::new();
    for item in items {
        let bad = || {
            CliError::usage(format!(
                "bad --u value {item:?} (expected e.g. 1,2,3 or 1-3)"
            ))
        };
        if let Some((a, b)) = item.split_once('-') {
            let (a, b): (usize, usize) = (
                a.trim().parse().map_err(|_| bad())?,
                b.trim().parse().map_err(|_| bad())?,
            );
            if a > b {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(item.trim().parse().map_err(|_| bad())?);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// First-stage strength and overidentification check with every instrument
/// assumed valid.
#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub first_stage_f: f64,
    pub sargan_statistic: Option<f64>,
    pub sargan_p_value: Option<f64>,
}

pub fn diagnostics(data: &IvDataset, alpha: f64) -> CliResult<Diagnostics> {
    let cache = build_projection_cache(data, &SubsetSpec::empty(data.l()))?;
    let fit = tsls_fit(&cache)?;
    let sargan = if data.l() >= 2 {
        Some(sargan_statistic(&cache, &fit, alpha)?)
    } else {
        None
    };
    Ok(Diagnostics {
        first_stage_f: fit.first_stage_f,
        sargan_statistic: sargan.as_ref().map(|s| s.statistic),
        sargan_p_value: sargan.as_ref().map(|s| s.p_value),
    })
}

/// One table row: a test, with or without the pretest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub test: TestKind,
    pub pretest: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        if self.pretest {
            format!("SAR + {}", self.test.label())
        } else {
            self.test.label().to_string()
        }
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    variant: String,
    test: TestKind,
    pretest: bool,
    summary: String,
    reports: Vec<CellJson<'a>>,
}

#[derive(Serialize)]
struct CellJson<'a> {
    u: usize,
    #[serde(serialize_with = "robust_iv::simulation::report::ser_extended")]
    length: f64,
    contains_null: bool,
    report: &'a RobustCiReport,
}

#[derive(Serialize)]
struct AnalysisJson<'a> {
    n: usize,
    instruments: &'a [String],
    null_value: f64,
    alpha: f64,
    u_values: &'a [usize],
    diagnostics: &'a Diagnostics,
    rows: Vec<ReportJson<'a>>,
}

/// Result of an analysis run, before printing.
pub struct Analysis {
    pub data: IvDataset,
    pub u_values: Vec<usize>,
    pub diagnostics: Diagnostics,
    pub rows: Vec<(Variant, SensitivityReport)>,
    pub null_value: f64,
    pub alpha: f64,
}

pub fn build_config(args: &AnalyzeArgs) -> CliResult<AnalysisConfig> {
    let mut cfg = AnalysisConfig::new(TestKind::Ar, 1).with_alpha(args.alpha);
    match (args.alpha1, args.alpha2) {
        (Some(a1), Some(a2)) => {
            cfg.alpha1 = a1;
            cfg.alpha2 = a2;
        }
        (Some(a1), None) => {
            cfg.alpha1 = a1;
            cfg.alpha2 = args.alpha - a1;
        }
        (None, Some(a2)) => {
            cfg.alpha2 = a2;
            cfg.alpha1 = args.alpha - a2;
        }
        (None, None) => {}
    }
    if let Some(seed) = args.seed {
        cfg.clr.seed = seed;
    }
    cfg.clr_grid = match (args.grid_lo, args.grid_hi, args.grid_step) {
        (None, None, None) => None,
        (Some(lo), Some(hi), Some(step)) => Some(GridSpec::new(lo, hi, step)?),
        _ => {
            return Err(CliError::usage(
                "--grid-lo, --grid-hi and --grid-step must be given together",
            ))
        }
    };
    Ok(cfg)
}

pub fn analyze(args: &AnalyzeArgs) -> CliResult<Analysis> {
    let schema = CsvSchema {
        outcome: args.outcome.clone(),
        exposure: args.exposure.clone(),
        instruments: args.instruments.clone(),
        covariates: args.covariates.clone(),
    };
    let file = File::open(&args.csv)
        .map_err(|e| CliError::usage(format!("cannot open {}: {e}", args.csv.display())))?;
    let data = read_dataset(file, &schema, !args.no_intercept)?;
    let l = data.l();
    let u_values = if args.u.is_empty() {
        (1..=l.saturating_sub(1).max(1)).collect()
    } else {
        parse_u_list(&args.u)?
    };
    if let Some(&u) = u_values.iter().find(|&&u| u == 0 || u > l) {
        return Err(CliError::usage(format!("U = {u} is outside [1, {l}]")));
    }
    let tests = if args.test.is_empty() {
        TestKind::ALL.to_vec()
    } else {
        args.test.clone()
    };
    let base = build_config(args)?;
    let mut variants: Vec<Variant> = tests
        .iter()
        .map(|&t| Variant {
            test: t,
            pretest: false,
        })
        .collect();
    if args.pretest {
        variants.extend(tests.iter().map(|&t| Variant {
            test: t,
            pretest: true,
        }));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let cfg = AnalysisConfig {
            test: v.test,
            pretest: v.pretest,
            ..base.clone()
        };
        rows.push((v, sensitivity_sweep(&data, &cfg, &u_values, args.null)?));
    }
    let diagnostics = diagnostics(&data, base.alpha)?;
    Ok(Analysis {
        data,
        u_values,
        diagnostics,
        rows,
        null_value: args.null,
        alpha: base.alpha,
    })
}

fn pad_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:<w$}", w = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

impl Analysis {
    /// Human-readable tables: intervals, then length and null coverage.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let d = &self.diagnostics;
        let _ = writeln!(
            out,
            "n = {}, L = {}; first-stage F (all instruments) = {}",
            self.data.n(),
            self.data.l(),
            fmt_sig(d.first_stage_f, 6)
        );
        if let Some(p) = d.sargan_p_value {
            let _ = writeln!(
                out,
                "Sargan test (all instruments valid): statistic = {}, p-value = {}",
                fmt_sig(d.sargan_statistic.unwrap(), 6),
                fmt_sig(p, 6)
            );
        }
        let _ = writeln!(
            out,
            "\n{}% confidence sets",
            fmt_sig(100.0 * (1.0 - self.alpha), 6)
        );
        let mut header = vec!["Test".to_string()];
        header.extend(self.u_values.iter().map(|u| {
            if *u == 1 {
                "U = 1 (naive)".to_string()
            } else {
                format!("U = {u}")
            }
        }));
        let mut table = vec![header.clone()];
        let mut detail = vec![header];
        for (v, sweep) in &self.rows {
            let mut row = vec![v.label()];
            let mut drow = vec![v.label()];
            for (r, &has_null) in sweep.reports.iter().zip(&sweep.contains_null) {
                row.push(r.interval_set.to_string());
                drow.push(format!(
                    "len {}, {} {}",
                    fmt_sig(r.interval_set.total_length(), 6),
                    if has_null { "contains" } else { "excludes" },
                    fmt_sig(self.null_value, 6)
                ));
            }
            table.push(row);
            detail.push(drow);
        }
        out.push_str(&pad_table(&table));
        out.push('\n');
        out.push_str(&pad_table(&detail));
        out.push('\n');
        for (v, sweep) in &self.rows {
            let _ = writeln!(out, "{}: {}", v.label(), sweep.summary(self.data.l()));
        }
        let warnings: Vec<String> = self
            .rows
            .iter()
            .flat_map(|(v, s)| {
                s.reports.iter().flat_map(move |r| {
                    r.warnings
                        .iter()
                        .map(move |w| format!("{} U = {}: {w}", v.label(), r.u))
                })
            })
            .collect();
        for w in warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["test".to_string()];
        for u in &self.u_values {
            header.push(format!("U={u}"));
            header.push(format!("U={u} length"));
            header.push(format!("U={u} contains_null"));
        }
        w.write_record(&header).unwrap();
        for (v, sweep) in &self.rows {
            let mut rec = vec![v.label()];
            for (r, &c) in sweep.reports.iter().zip(&sweep.contains_null) {
                rec.push(r.interval_set.to_string());
                rec.push(fmt_sig(r.interval_set.total_length(), 6));
                rec.push(c.to_string());
            }
            w.write_record(&rec).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }

    pub fn json(&self) -> String {
        let rows = self
            .rows
            .iter()
            .map(|(v, sweep)| ReportJson {
                variant: v.label(),
                test: v.test,
                pretest: v.pretest,
                summary: sweep.summary(self.data.l()),
                reports: sweep
                    .reports
                    .iter()
                    .zip(&sweep.contains_null)
                    .map(|(r, &c)| CellJson {
                        u: r.u,
                        length: r.interval_set.total_length(),
                        contains_null: c,
                        report: r,
                    })
                    .collect(),
            })
            .collect();
        let doc = AnalysisJson {
            n: self.data.n(),
            instruments: self.data.instrument_names(),
            null_value: self.null_value,
            alpha: self.alpha,
            u_values: &self.u_values,
            diagnostics: &self.diagnostics,
            rows,
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("analysis serializes");
        s.push('\n');
        s
    }
}

pub fn run(args: &AnalyzeArgs) -> CliResult<()> {
    let analysis = analyze(args)?;
    print!("{}", analysis.render());
    let files = [
        ("analysis.csv", analysis.csv()),
        ("analysis.json", analysis.json()),
    ];
    crate::simulate::write_files(&args.out_dir, &files)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn u_lists() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(parse_u_list(&s(&["1-3"])).unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_u_list(&s(&["3", "1", "2-3"])).unwrap(), vec![1, 2, 3]);
        assert!(parse_u_list(&s(&["3-1"])).is_err());
        assert!(parse_u_list(&s(&["x"])).is_err());
    }
}
