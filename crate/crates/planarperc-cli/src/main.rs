//! planarperc: solve Boltzmann-map weight sequences, print exact peeling-walk
//! oracles, run Monte Carlo explorations, fit tails, and run the release gate.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric/model failure,
//! 4 verification suite failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use planarperc::finite_peel::{run_theta_batch, Peeler};
use planarperc::gw_trees::{sample_leaf_count, OffspringSampler};
use planarperc::halfplane::{run_batch, threshold_scan};
use planarperc::rng::run_rng;
use planarperc::stats::{default_window, fit_exp_tail, fit_power_tail};
use planarperc::walk_oracle::{cyclic_table, hcut_table, step_law, survival_estimate};
use planarperc::weights::{classify, solve_admissibility, solve_with, tune_critical, SolvedWeights, TailSpec, WeightSeq};

use planarperc_cli::output::{
    fmt_bool, fmt_f64, fmt_opt_u64, CliError, Sink, VERSION,
};
use planarperc_cli::verify::{run_criterion, suite_ids, suite_names};

#[derive(Parser)]
#[command(name = "planarperc", version, about = "Boltzmann-map weight calculus, peeling-walk oracles, and percolation explorations")]
struct Cli {
    /// Master seed for every Monte Carlo subcommand.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Table output format (scalar reports are always JSON).
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    /// Rayon worker threads; library default when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Write a gnuplot script next to a CSV file sink.
    #[arg(long, global = true)]
    plot: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

/// Weight-sequence selection shared by most subcommands: exactly one of a
/// named preset or a JSON file.
#[derive(Args)]
struct WeightsArgs {
    /// Named weights: crit-quad, subcrit-quad, or subcrit-quad:<g>.
    #[arg(long)]
    preset: Option<String>,

    /// JSON file holding a weight sequence (as written by `tune`).
    #[arg(long)]
    qfile: Option<PathBuf>,

    /// Disk-table depth; library default when absent.
    #[arg(long)]
    lmax: Option<u32>,
}

impl WeightsArgs {
    fn sequence(&self) -> Result<WeightSeq, CliError> {
        match (&self.preset, &self.qfile) {
            (Some(name), None) => Ok(WeightSeq::preset(name)?),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path)?;
                Ok(WeightSeq::from_json_str(&text)?)
            }
            _ => Err(CliError::Config(
                "exactly one of --preset or --qfile is required".into(),
            )),
        }
    }

    fn solve(&self) -> Result<SolvedWeights, CliError> {
        let q = self.sequence()?;
        Ok(match self.lmax {
            Some(l) => solve_with(&q, l)?,
            None => solve_admissibility(&q)?,
        })
    }

    fn config(&self) -> serde_json::Value {
        json!({
            "preset": self.preset,
            "qfile": self.qfile.as_ref().map(|p| p.display().to_string()),
            "lmax": self.lmax,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Solve a weight sequence: partition-function root, disk scale, offspring
    /// and walk laws, percolation threshold.
    Solve(WeightsArgs),

    /// Classify a solved sequence (subcritical or discrete-stable with alpha).
    Classify(WeightsArgs),

    /// Scale a heavy-tailed shape until it is critical with the given tail type a.
    Tune {
        /// Target tail type a in [1.5, 2.5].
        #[arg(long)]
        a: f64,
        /// Tail amplitude of the shape before tuning.
        #[arg(long, default_value_t = 1.0)]
        c: f64,
        /// Subexponential correction exponent of the tail shape.
        #[arg(long, default_value_t = 0.5)]
        beta: f64,
        /// First k the tail covers.
        #[arg(long, default_value_t = 1)]
        kmin: u32,
        /// Truncation cap for the tuned sequence.
        #[arg(long, default_value_t = 4096)]
        kcap: u32,
    },

    /// Print the rooted-disk weight table of a solved sequence.
    Disk {
        #[command(flatten)]
        weights: WeightsArgs,
        #[arg(long, default_value_t = 64)]
        kmax: u32,
    },

    /// Exact walk oracles at bond parameter p: cut-event weights, the cyclic
    /// first-passage identity, or a survival lower bound.
    Oracle {
        #[command(flatten)]
        weights: WeightsArgs,
        /// Bond parameter: a float in [0,1), "pc", or "mid" ((p_c+1)/2).
        #[arg(long, default_value = "pc")]
        p: String,
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long, default_value_t = 64)]
        kmax: u32,
        /// Walk horizon for the survival estimate.
        #[arg(long, default_value_t = 4096)]
        horizon: u32,
    },

    /// Monte Carlo half-plane exploration walks at bond parameter p.
    Halfplane {
        #[command(flatten)]
        weights: WeightsArgs,
        #[arg(long, default_value = "pc")]
        p: String,
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        /// Full-clock step cap per run.
        #[arg(long, default_value_t = 65_536)]
        cap: u64,
        /// Scan survival over a p grid bracketing the threshold instead of
        /// recording individual runs.
        #[arg(long)]
        scan: bool,
    },

    /// Monte Carlo finite-map peeling: frontier lifetime theta per run.
    Finite {
        #[command(flatten)]
        weights: WeightsArgs,
        #[arg(long, default_value = "pc")]
        p: String,
        #[arg(long, default_value_t = 10_000)]
        runs: u64,
        #[arg(long, default_value_t = 1_000_000)]
        cap: u64,
    },

    /// Monte Carlo offspring trees of the solved sequence: leaf counts per run.
    Gw {
        #[command(flatten)]
        weights: WeightsArgs,
        #[arg(long, default_value_t = 100_000)]
        runs: u64,
        #[arg(long, default_value_t = 1_000_000)]
        node_cap: u64,
    },

    /// Fit a power or exponential tail to a two-column CSV file.
    Fit {
        /// Input CSV: '#' comments, header row, x in column 1, y in column 2.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Fit window "lo:hi" in x; a dyadic default when absent.
        #[arg(long)]
        window: Option<String>,
    },

    /// Run release-gate criteria; one line per criterion, exit 4 on failure.
    Verify {
        /// Suite name; `all` or one criterion group.
        #[arg(long, default_value = "all")]
        suite: String,
        /// Depth override for the cyclic-identity sweep.
        #[arg(long)]
        kmax: Option<u32>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OracleKind {
    Hcut,
    Cyclic,
    Survival,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum FitKind {
    Power,
    Exp,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("error[Config]: rayon pool already initialized");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(e.exit_code())
        }
    }
}

fn resolve_p(token: &str, solved: &SolvedWeights) -> Result<f64, CliError> {
    let p = match token {
        "pc" => solved.p_c,
        "mid" => (solved.p_c + 1.0) / 2.0,
        other => other
            .parse::<f64>()
            .map_err(|_| CliError::Config(format!("bad bond parameter '{other}'")))?,
    };
    if !(0.0..=1.0).contains(&p) {
        return Err(CliError::Config(format!("bond parameter {p} outside [0, 1]")));
    }
    Ok(p)
}

fn sink(cli: &Cli) -> Sink {
    Sink { out: cli.out.clone(), plot: cli.plot }
}

/// Emits rows either as CSV or as a JSON object with a "rows" array,
/// honoring the global --format flag.
#[allow(clippy::too_many_arguments)]
fn emit_table(
    cli: &Cli,
    config: &serde_json::Value,
    notes: &[String],
    header: &[&str],
    rows: &[Vec<String>],
    json_rows: Vec<serde_json::Value>,
    extra: serde_json::Value,
) -> Result<(), CliError> {
    let s = sink(cli);
    match cli.format {
        Format::Csv => s.emit_csv(config, notes, header, rows)?,
        Format::Json => {
            let mut payload = extra;
            payload
                .as_object_mut()
                .expect("table payload is an object")
                .insert("rows".into(), serde_json::Value::Array(json_rows));
            s.emit_json(config, payload)?;
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Solve(weights) => {
            let s = weights.solve()?;
            let config = json!({"cmd": "solve", "weights": weights.config()});
            let payload = json!({
                "Z": s.z,
                "r": s.r,
                "m_mu": s.m_mu,
                "p_c": s.p_c,
                "lambda": s.lambda,
                "type": serde_json::to_value(s.type_a).expect("serializable"),
                "alpha": s.alpha,
                "nu_lost_mass": s.nu.lost_mass,
            });
            sink(cli).emit_json(&config, payload)?;
            Ok(())
        }

        Command::Classify(weights) => {
            let s = weights.solve()?;
            let class = classify(&s)?;
            let config = json!({"cmd": "classify", "weights": weights.config()});
            sink(cli).emit_json(&config, serde_json::to_value(&class).expect("serializable"))?;
            Ok(())
        }

        Command::Tune { a, c, beta, kmin, kcap } => {
            let shape = WeightSeq::with_tail(
                &[],
                TailSpec { c: *c, beta: *beta, a_shape: *a, k_min: *kmin },
                *kcap,
            )?;
            let tuned = tune_critical(&shape, *a)?;
            let s = solve_admissibility(&tuned)?;
            let config = json!({
                "cmd": "tune", "a": a, "c": c, "beta": beta, "kmin": kmin, "kcap": kcap,
            });
            let payload = json!({
                "a": a,
                "weights": serde_json::to_value(&tuned).expect("serializable"),
                "Z": s.z,
                "m_mu": s.m_mu,
                "p_c": s.p_c,
                "alpha": s.alpha,
            });
            sink(cli).emit_json(&config, payload)?;
            Ok(())
        }

        Command::Disk { weights, kmax } => {
            let s = weights.solve()?;
            if *kmax > s.disk.l_max {
                return Err(CliError::Config(format!(
                    "kmax {kmax} beyond table depth {}",
                    s.disk.l_max
                )));
            }
            let config = json!({"cmd": "disk", "weights": weights.config(), "kmax": kmax});
            let header = ["k", "w_scaled", "ln_w_raw", "quad_error"];
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for k in 0..=*kmax {
                let i = k as usize;
                rows.push(vec![
                    k.to_string(),
                    fmt_f64(s.disk.w_scaled[i]),
                    fmt_f64(s.disk.ln_w_raw(k)),
                    fmt_f64(s.disk.quad_error[i]),
                ]);
                json_rows.push(json!({
                    "k": k,
                    "w_scaled": s.disk.w_scaled[i],
                    "ln_w_raw": s.disk.ln_w_raw(k),
                    "quad_error": s.disk.quad_error[i],
                }));
            }
            let notes = [format!("Z {} r {}", s.z, s.r)];
            emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"Z": s.z, "r": s.r}))
        }

        Command::Oracle { weights, p, kind, kmax, horizon } => {
            let s = weights.solve()?;
            let p_val = resolve_p(p, &s)?;
            if p_val >= 1.0 {
                return Err(CliError::Config("oracle needs p < 1".into()));
            }
            let law = step_law(&s, p_val)?;
            match kind {
                OracleKind::Hcut => {
                    let table = hcut_table(&law, *kmax)?;
                    let config = json!({
                        "cmd": "oracle", "kind": "hcut", "weights": weights.config(),
                        "p": p_val, "kmax": kmax,
                    });
                    let header = ["k", "hcut"];
                    let rows: Vec<Vec<String>> = table
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| vec![k.to_string(), fmt_f64(v)])
                        .collect();
                    let json_rows = table
                        .iter()
                        .enumerate()
                        .map(|(k, &v)| json!({"k": k, "hcut": v}))
                        .collect();
                    let notes = [
                        format!("p {p_val}"),
                        "hcut is the cut-event weight; multiply by (1-p) for the per-run frequency".into(),
                    ];
                    emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"p": p_val}))
                }
                OracleKind::Cyclic => {
                    let table = cyclic_table(&law, *kmax)?;
                    let config = json!({
                        "cmd": "oracle", "kind": "cyclic", "weights": weights.config(),
                        "p": p_val, "kmax": kmax,
                    });
                    let header = ["k", "lhs", "rhs", "rel_err"];
                    let mut rows = Vec::new();
                    let mut json_rows = Vec::new();
                    for (k, &(lhs, rhs)) in table.iter().enumerate() {
                        let rel = if rhs != 0.0 { (lhs - rhs).abs() / rhs } else { f64::NAN };
                        rows.push(vec![
                            k.to_string(),
                            fmt_f64(lhs),
                            fmt_f64(rhs),
                            fmt_f64(rel),
                        ]);
                        json_rows.push(json!({"k": k, "lhs": lhs, "rhs": rhs, "rel_err": rel}));
                    }
                    let notes = [format!("p {p_val}")];
                    emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"p": p_val}))
                }
                OracleKind::Survival => {
                    let survival = survival_estimate(&law, *horizon)?;
                    let config = json!({
                        "cmd": "oracle", "kind": "survival", "weights": weights.config(),
                        "p": p_val, "horizon": horizon,
                    });
                    let header = ["horizon", "survival"];
                    let rows = vec![vec![horizon.to_string(), fmt_f64(survival)]];
                    let json_rows = vec![json!({"horizon": horizon, "survival": survival})];
                    let notes = [format!("p {p_val}")];
                    emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"p": p_val}))
                }
            }
        }

        Command::Halfplane { weights, p, runs, cap, scan } => {
            let s = weights.solve()?;
            if *scan {
                let pc = s.p_c;
                let grid = [
                    0.0,
                    pc / 2.0,
                    0.8 * pc,
                    0.95 * pc,
                    pc,
                    pc + 0.02,
                    pc + 0.05,
                    (pc + 1.0) / 2.0,
                ];
                let table = threshold_scan(&s, &grid, *runs, *cap, cli.seed)?;
                let config = json!({
                    "cmd": "halfplane-scan", "weights": weights.config(),
                    "runs": runs, "cap": cap, "seed": cli.seed, "grid": grid.to_vec(),
                });
                let header = ["p", "survival_freq", "survivors", "mean_tau_star", "dying"];
                let mut rows = Vec::new();
                let mut json_rows = Vec::new();
                for r in &table.rows {
                    rows.push(vec![
                        fmt_f64(r.p),
                        fmt_f64(r.survival_freq),
                        r.survivors.to_string(),
                        fmt_f64(r.mean_tau_star),
                        r.dying.to_string(),
                    ]);
                    json_rows.push(json!({
                        "p": r.p, "survival_freq": r.survival_freq, "survivors": r.survivors,
                        "mean_tau_star": r.mean_tau_star, "dying": r.dying,
                    }));
                }
                let notes = [
                    format!("p_c {}", pc),
                    format!("worst_drop_sigma {}", table.worst_drop_sigma),
                ];
                emit_table(
                    cli,
                    &config,
                    &notes,
                    &header,
                    &rows,
                    json_rows,
                    json!({"p_c": pc, "worst_drop_sigma": table.worst_drop_sigma}),
                )
            } else {
                let p_val = resolve_p(p, &s)?;
                if p_val >= 1.0 {
                    return Err(CliError::Config("halfplane needs p < 1".into()));
                }
                let law = step_law(&s, p_val)?;
                let records = run_batch(&law, cli.seed, *runs, *cap)?;
                let config = json!({
                    "cmd": "halfplane", "weights": weights.config(),
                    "p": p_val, "runs": runs, "cap": cap, "seed": cli.seed,
                });
                let header = ["run", "tau_star", "T_star", "exit_zero", "hcut_k", "survived"];
                let mut rows = Vec::new();
                let mut json_rows = Vec::new();
                for (i, r) in records.iter().enumerate() {
                    rows.push(vec![
                        i.to_string(),
                        fmt_opt_u64(r.tau_star),
                        fmt_opt_u64(r.t_star),
                        fmt_bool(r.hit_zero_exit),
                        fmt_opt_u64(r.hcut_index.map(u64::from)),
                        fmt_bool(r.survived_cap),
                    ]);
                    json_rows.push(json!({
                        "run": i, "tau_star": r.tau_star, "T_star": r.t_star,
                        "exit_zero": r.hit_zero_exit, "hcut_k": r.hcut_index,
                        "survived": r.survived_cap,
                    }));
                }
                let notes = [format!("p {p_val}")];
                emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"p": p_val}))
            }
        }

        Command::Finite { weights, p, runs, cap } => {
            let s = weights.solve()?;
            let p_val = resolve_p(p, &s)?;
            let peeler = Peeler::new(&s, p_val)?;
            let records = run_theta_batch(&peeler, cli.seed, *runs, *cap)?;
            let config = json!({
                "cmd": "finite", "weights": weights.config(),
                "p": p_val, "runs": runs, "cap": cap, "seed": cli.seed,
            });
            let header = [
                "run",
                "theta",
                "steps",
                "root_k",
                "marks",
                "faces",
                "max_half_perimeter",
                "switch_half_perimeter",
                "censored",
            ];
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for (i, r) in records.iter().enumerate() {
                rows.push(vec![
                    i.to_string(),
                    fmt_opt_u64(r.theta),
                    r.steps.to_string(),
                    r.root_k.to_string(),
                    r.marks.to_string(),
                    r.faces.to_string(),
                    r.max_half_perimeter.to_string(),
                    fmt_opt_u64(r.switch_half_perimeter),
                    fmt_bool(r.censored()),
                ]);
                json_rows.push(json!({
                    "run": i, "theta": r.theta, "steps": r.steps, "root_k": r.root_k,
                    "marks": r.marks, "faces": r.faces,
                    "max_half_perimeter": r.max_half_perimeter,
                    "switch_half_perimeter": r.switch_half_perimeter,
                    "censored": r.censored(),
                }));
            }
            let notes = [format!("p {p_val}")];
            emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"p": p_val}))
        }

        Command::Gw { weights, runs, node_cap } => {
            let s = weights.solve()?;
            let sampler = OffspringSampler::new(&s.mu)?;
            let samples: Vec<_> = (0..*runs)
                .into_par_iter()
                .map(|i| sample_leaf_count(&sampler, &mut run_rng(cli.seed, i), *node_cap))
                .collect();
            let config = json!({
                "cmd": "gw", "weights": weights.config(),
                "runs": runs, "node_cap": node_cap, "seed": cli.seed,
            });
            let header = ["run", "leaves", "nodes", "censored"];
            let mut rows = Vec::new();
            let mut json_rows = Vec::new();
            for (i, r) in samples.iter().enumerate() {
                rows.push(vec![
                    i.to_string(),
                    r.leaves.to_string(),
                    r.nodes.to_string(),
                    fmt_bool(r.censored),
                ]);
                json_rows.push(json!({
                    "run": i, "leaves": r.leaves, "nodes": r.nodes, "censored": r.censored,
                }));
            }
            let notes = [format!("m_mu {}", s.m_mu)];
            emit_table(cli, &config, &notes, &header, &rows, json_rows, json!({"m_mu": s.m_mu}))
        }

        Command::Fit { input, kind, window } => {
            let points = read_xy_csv(input)?;
            let win = match window {
                Some(spec) => parse_window(spec)?,
                None => default_window(&points),
            };
            let report = match kind {
                FitKind::Power => fit_power_tail(&points, win)?,
                FitKind::Exp => fit_exp_tail(&points, win)?,
            };
            let config = json!({
                "cmd": "fit", "in": input.display().to_string(),
                "kind": match kind { FitKind::Power => "power", FitKind::Exp => "exp" },
                "window": [win.0, win.1],
            });
            let mut payload = serde_json::to_value(&report).expect("serializable");
            payload
                .as_object_mut()
                .expect("fit report is an object")
                .insert("points_read".into(), json!(points.len()));
            sink(cli).emit_json(&config, payload)?;
            Ok(())
        }

        Command::Verify { suite, kmax } => {
            let ids = suite_ids(suite).ok_or_else(|| {
                CliError::Config(format!(
                    "unknown suite '{suite}'; expected one of {}",
                    suite_names().join(", ")
                ))
            })?;
            let mut outcomes = Vec::new();
            let mut failures = 0usize;
            for id in ids {
                let o = run_criterion(id, *kmax);
                println!(
                    "{} [{:2}] {} ({:.1}s): {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    o.id,
                    o.name,
                    o.seconds,
                    o.detail
                );
                if !o.pass {
                    failures += 1;
                }
                outcomes.push(o);
            }
            if let Some(path) = &cli.out {
                let config = json!({"cmd": "verify", "suite": suite, "kmax": kmax});
                let payload = json!({
                    "suite": suite,
                    "failures": failures,
                    "criteria": serde_json::to_value(&outcomes).expect("serializable"),
                });
                Sink { out: Some(path.clone()), plot: false }.emit_json(&config, payload)?;
            }
            if failures > 0 {
                return Err(CliError::VerifyFailed(failures));
            }
            println!("all {} criteria passed (planarperc {})", outcomes.len(), VERSION);
            Ok(())
        }
    }
}

/// Reads (x, y) points from a CSV file: '#' lines and blank lines are
/// skipped, one optional header row is skipped, first two columns parse as
/// floats, rows with missing values are dropped.
fn read_xy_csv(path: &PathBuf) -> Result<Vec<(f64, f64)>, CliError> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    let mut header_skipped = false;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',');
        let x = cols.next().map(str::trim).and_then(|c| c.parse::<f64>().ok());
        let y = cols.next().map(str::trim).and_then(|c| c.parse::<f64>().ok());
        match (x, y) {
            (Some(x), Some(y)) => points.push((x, y)),
            _ if !header_skipped => header_skipped = true,
            _ => {}
        }
    }
    if points.is_empty() {
        return Err(CliError::Config(format!(
            "no numeric (x, y) rows in {}",
            path.display()
        )));
    }
    Ok(points)
}

fn parse_window(spec: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Config(format!("bad window '{spec}', expected lo:hi"));
    let (lo, hi) = spec.split_once(':').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}
