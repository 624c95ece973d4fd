//! `robust-iv simulate` and `robust-iv power`.

use std::fmt::Write as _;
use std::path::Path;

use robust_iv::interval::fmt_sig;
use robust_iv::power::write_power_csv;
use robust_iv::simulation::{parse_plan, parse_power_plan, run_plan, run_power_plan};
use robust_iv::GridSpec;

use crate::bundled::resolve;
use crate::{CliError, CliResult, PowerArgs, SimulateArgs};

pub fn write_files<S: AsRef<str>>(dir: &Path, files: &[(&str, S)]) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::usage(format!("cannot create {}: {e}", dir.display())))?;
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body.as_ref())
            .map_err(|e| CliError::usage(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

/// Aligns a CSV body into columns for the terminal.
fn align_csv(body: &str) -> String {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(body.as_bytes());
    let rows: Vec<Vec<String>> = rdr
        .records()
        .filter_map(|r| r.ok())
        .map(|r| r.iter().map(str::to_owned).collect())
        .collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in &rows {
        let cells: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s:>w$}", w = widths[c]))
            .collect();
        let _ = writeln!(out, "{}", cells.join("  "));
    }
    out
}

pub fn run_simulate(args: &SimulateArgs) -> CliResult<()> {
    let mut plan = parse_plan(&resolve(&args.config)?)?;
    if let Some(seed) = args.seed {
        plan.design.seed = seed;
    }
    let start = std::time::Instant::now();
    let output = run_plan(&plan)?;
    output.write_to(&args.out_dir)?;
    println!(
        "{}: {} replicates per s, finished in {:.1} s",
        plan.name,
        plan.design.reps,
        start.elapsed().as_secs_f64()
    );
    for (name, body) in &output.files {
        if name.ends_with(".csv") {
            println!("\n{name}");
            print!("{}", align_csv(body));
        }
    }
    println!("\nwrote {}", args.out_dir.display());
    Ok(())
}

fn beta0_grid(args: &PowerArgs, fallback: Option<GridSpec>) -> CliResult<GridSpec> {
    match (args.beta0_lo, args.beta0_hi, args.beta0_step) {
        (Some(lo), Some(hi), Some(step)) => Ok(GridSpec::new(lo, hi, step)?),
        (None, None, None) => fallback.ok_or_else(|| {
            CliError::usage(
                "no beta0 grid: pass --beta0-lo, --beta0-hi and --beta0-step or set power_grid",
            )
        }),
        _ => Err(CliError::usage(
            "--beta0-lo, --beta0-hi and --beta0-step must be given together",
        )),
    }
}

pub fn run_power(args: &PowerArgs) -> CliResult<()> {
    let mut plan = parse_power_plan(&resolve(&args.config)?)?;
    if let Some(r) = args.mc_reps {
        plan.mc_reps = r;
    }
    if let Some(a) = args.alpha {
        if !(a > 0.0 && a < 1.0) {
            return Err(CliError::usage(format!(
                "--alpha must lie in (0, 1), got {a}"
            )));
        }
        plan.alpha = a;
    }
    if let Some(seed) = args.seed {
        plan.design.seed = seed;
    }
    let grid = beta0_grid(args, plan.power_grid)?;
    let curve = run_power_plan(&plan, &grid)?;
    let mut body = Vec::new();
    write_power_csv(&mut body, &curve)?;
    write_files(
        &args.out_dir,
        &[("power.csv", String::from_utf8(body).expect("csv is utf-8"))],
    )?;
    println!("AR power, B = {:?}, alpha = {}", plan.subset, plan.alpha);
    for p in &curve {
        let mc = p
            .power_mc
            .map(|m| format!("  mc {}", fmt_sig(m, 4)))
            .unwrap_or_default();
        println!(
            "beta0 {:>10}  eta {:>12}  power {:>8}{mc}",
            fmt_sig(p.beta0, 6),
            fmt_sig(p.eta, 6),
            fmt_sig(p.power_exact, 4)
        );
    }
    println!("wrote {}", args.out_dir.join("power.csv").display());
    Ok(())
}
