use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};

use tdgl::config::{parse_config_file, ForcingSpec, Mode, PerturbationSpec, SimConfig};
use tdgl::diagnostics::{
    bound_monitor, energy, gauge_compare, gronwall_check, lyapunov_residual, max_positive, norm_ratio, stability_compare, weak_residual, TestBank,
};
use tdgl::dynamics::{run, run_galerkin, run_simulation, state_distance, ManufacturedSolution, RunRecord};
use tdgl::galerkin::{assemble_m, eigenbasis_m, read_basis, write_basis, EigenOptions};
use tdgl::io::{load_record, write_record, write_table_csv};
use tdgl::ops::{center_norm2, face_norm2};
use tdgl::{Error, Result};

#[derive(Parser)]
#[command(name = "tdgl", version, about = "Lorentz-gauge TDGL simulator on voxel domains")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and store its record.
    Run { config: PathBuf },
    /// Run a refinement, Galerkin-N or perturbation matrix and write a combined report.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values; defaults depend on the axis.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        /// Keep dt fixed in an h sweep instead of scaling it with h².
        #[arg(long)]
        fixed_dt: bool,
    },
    /// Replay a diagnostic on a stored record.
    Diagnose {
        record: PathBuf,
        #[arg(long, value_enum)]
        check: Check,
        /// Second record, for the stability and gauge checks.
        #[arg(long)]
        against: Option<PathBuf>,
    },
    /// Compute and store the first N eigenpairs of M.
    Eigs {
        config: PathBuf,
        #[arg(short = 'N')]
        n: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    H,
    Dt,
    #[value(name = "N")]
    N,
    Delta,
}

#[derive(Clone, Copy, ValueEnum)]
enum Check {
    Energy,
    Bound,
    Weak,
    Stability,
    Ratio,
    Gauge,
}

enum Failure {
    Lib(Error),
    Run { dir: PathBuf, message: String },
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Command::Run { config } => cmd_run(&config),
        Command::Sweep {
            config,
            axis,
            values,
            fixed_dt,
        } => cmd_sweep(&config, axis, &values, fixed_dt),
        Command::Diagnose { record, check, against } => cmd_diagnose(&record, check, against.as_deref()),
        Command::Eigs { config, n, out } => cmd_eigs(&config, n, out),
    };
    match result {
        Ok(report) => {
            // a closed pipe is not an error worth reporting
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).unwrap());
            ExitCode::SUCCESS
        }
        Err(Failure::Lib(e)) => {
            let mut body = json!({ "error": e.kind(), "message": e.to_string() });
            if let Error::Validation(v) = &e {
                body["violations"] = v.iter().map(|x| json!({ "field": x.field, "message": x.message })).collect();
            }
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Run { dir, message }) => {
            eprintln!("{}", json!({ "error": "numerical_failure", "message": message, "record": dir }));
            ExitCode::from(4)
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) => 1,
        Error::Validation(_) | Error::Parse(_) => 2,
        Error::Io(_) => 3,
        Error::NumericalFailure { .. } => 4,
        Error::Record(_) => 5,
    }
}

fn out_root() -> PathBuf {
    std::env::var_os("TDGL_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("tdgl_out"))
}

fn run_dir(cfg: &SimConfig) -> PathBuf {
    let name = cfg.output.name.clone().unwrap_or_else(|| format!("run-{}", &cfg.hash()[..12]));
    out_root().join(name)
}

fn summary(rec: &RunRecord, dir: &Path, content_hash: &str) -> Value {
    let first = &rec.snapshots[0];
    let last = rec.final_snapshot();
    let row = rec.rows.last();
    json!({
        "dir": dir,
        "status": rec.status,
        "steps": rec.stats.steps,
        "t": last.t,
        "content_hash": content_hash,
        "energy": row.map(|r| r.energy.total),
        "max_psi": row.map(|r| r.max_psi),
        "distance_from_initial": state_distance(&first.psi, &first.a, &last.psi, &last.a),
        "warnings": rec.warnings,
    })
}

fn cmd_run(path: &Path) -> std::result::Result<Value, Failure> {
    let cfg = parse_config_file(path)?;
    let rec = run(&cfg)?;
    let dir = run_dir(&cfg);
    let manifest = write_record(&dir, &rec)?;
    if let tdgl::dynamics::RunStatus::Failed { message, .. } = &rec.status {
        return Err(Failure::Run { dir, message: message.clone() });
    }
    Ok(summary(&rec, &dir, &manifest.content_hash))
}

fn manufactured_error(rec: &RunRecord) -> f64 {
    let f = rec.final_snapshot();
    let ms = ManufacturedSolution {
        eta: rec.config.params.eta,
        kappa: rec.config.params.kappa,
    };
    (center_norm2(&f.psi.sub(&ms.psi(&rec.domain, f.t))) + face_norm2(&f.a.sub(&ms.a(&rec.domain, f.t)))).sqrt()
}

/// Pairwise observed orders `ln(e_i/e_{i+1}) / ln(s_i/s_{i+1})`.
fn orders(scale: &[f64], err: &[f64]) -> Vec<f64> {
    (1..err.len()).map(|i| (err[i - 1] / err[i]).ln() / (scale[i - 1] / scale[i]).ln()).collect()
}

fn label(v: f64) -> String {
    format!("{v:e}").replace('-', "m")
}

struct Case {
    label: String,
    value: f64,
    cfg: SimConfig,
}

fn finish(dir: &Path, axis: &str, cfg: &SimConfig, columns: &[&str], table: Vec<Vec<f64>>, extra: Value) -> Result<Value> {
    write_table_csv(&dir.join("report.csv"), columns, &table)?;
    let rows: Vec<Value> = table
        .iter()
        .map(|r| {
            let obj: serde_json::Map<String, Value> = columns.iter().zip(r).map(|(c, v)| (c.to_string(), json!(v))).collect();
            Value::Object(obj)
        })
        .collect();
    let mut report = json!({ "axis": axis, "config_hash": cfg.hash(), "dir": dir, "rows": rows });
    if let (Value::Object(r), Value::Object(e)) = (&mut report, extra) {
        r.extend(e);
    }
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report).unwrap())?;
    Ok(report)
}

fn run_cases(dir: &Path, cases: &[Case]) -> Result<Vec<RunRecord>> {
    cases
        .par_iter()
        .map(|c| {
            let rec = run_simulation(&c.cfg)?;
            write_record(&dir.join(&c.label), &rec)?;
            Ok(rec)
        })
        .collect()
}

fn cmd_sweep(path: &Path, axis: SweepAxis, values: &[f64], fixed_dt: bool) -> std::result::Result<Value, Failure> {
    let cfg = parse_config_file(path)?;
    let name = match axis {
        SweepAxis::H => "h",
        SweepAxis::Dt => "dt",
        SweepAxis::N => "N",
        SweepAxis::Delta => "delta",
    };
    let dir = out_root().join(format!("sweep-{name}-{}", &cfg.hash()[..12]));
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    let manufactured = cfg.params.forcing == ForcingSpec::Manufactured;
    let report = match axis {
        SweepAxis::H => {
            let n0 = cfg.domain.counts[0];
            let vals = if values.is_empty() { vec![n0 as f64, 2.0 * n0 as f64] } else { values.to_vec() };
            let mut cases = Vec::new();
            for &v in &vals {
                let n = v as usize;
                if v.fract() != 0.0 || n == 0 || cfg.domain.counts.iter().any(|&c| !(c * n).is_multiple_of(n0)) {
                    return Err(Error::invalid(format!("cell count {v} does not refine the base grid evenly")).into());
                }
                let mut c = cfg.clone();
                c.domain.counts = cfg.domain.counts.map(|k| k * n / n0);
                if !fixed_dt {
                    let r = n0 as f64 / n as f64;
                    c.time.dt = cfg.time.dt * r * r;
                }
                c.output.every = c.n_steps().max(1);
                c.output.vtk = false;
                c.validate()?;
                cases.push(Case { label: format!("n{n}"), value: v, cfg: c });
            }
            let recs = run_cases(&dir, &cases)?;
            let h: Vec<f64> = cases.iter().map(|c| c.cfg.domain.lengths[0] / c.cfg.domain.counts[0] as f64).collect();
            let err: Vec<f64> = recs.iter().map(|r| if manufactured { manufactured_error(r) } else { f64::NAN }).collect();
            let table = recs
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let row = r.rows.last().unwrap();
                    vec![cases[i].value, h[i], cases[i].cfg.time.dt, err[i], row.energy.total, row.max_psi]
                })
                .collect();
            let ord = if manufactured { orders(&h, &err) } else { Vec::new() };
            finish(&dir, name, &cfg, &["n", "h", "dt", "error", "energy", "max_psi"], table, json!({ "orders": ord }))?
        }
        SweepAxis::Dt => {
            let vals = if values.is_empty() {
                vec![cfg.time.dt, cfg.time.dt / 2.0, cfg.time.dt / 4.0]
            } else {
                values.to_vec()
            };
            let mut cases = Vec::new();
            for &v in &vals {
                let mut c = cfg.clone();
                c.time.dt = v;
                c.output.every = c.n_steps().max(1);
                c.output.vtk = false;
                c.validate()?;
                cases.push(Case { label: format!("dt{}", label(v)), value: v, cfg: c });
            }
            let recs = run_cases(&dir, &cases)?;
            // without an exact solution the smallest dt serves as reference
            let finest = (0..recs.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
            let rf = recs[finest].final_snapshot();
            let err: Vec<f64> = recs
                .iter()
                .map(|r| {
                    let f = r.final_snapshot();
                    if manufactured {
                        manufactured_error(r)
                    } else {
                        state_distance(&f.psi, &f.a, &rf.psi, &rf.a)
                    }
                })
                .collect();
            let bound: Vec<f64> = recs.iter().map(|r| bound_monitor(r).max_overshoot).collect();
            let lyap: Vec<f64> = recs
                .iter()
                .map(|r| max_positive(&lyapunov_residual(&r.rows, r.config.params.eta, r.config.params.kappa, r.dt())))
                .collect();
            let table = (0..recs.len()).map(|i| vec![vals[i], err[i], bound[i], lyap[i]]).collect();
            let (s, e): (Vec<f64>, Vec<f64>) = if manufactured {
                (vals.clone(), err.clone())
            } else {
                (0..vals.len()).filter(|&i| i != finest).map(|i| (vals[i], err[i])).unzip()
            };
            finish(
                &dir,
                name,
                &cfg,
                &["dt", "error", "max_overshoot", "lyapunov_max_positive"],
                table,
                json!({ "orders": orders(&s, &e), "reference": if manufactured { "exact" } else { "finest dt" } }),
            )?
        }
        SweepAxis::N => {
            let vals: Vec<usize> = if values.is_empty() {
                vec![1, 2, 4, 8, 16]
            } else {
                values.iter().map(|&v| v as usize).collect()
            };
            let nmax = vals.iter().copied().max().unwrap_or(1);
            let mut grid_cfg = cfg.clone();
            grid_cfg.mode = Mode::Grid;
            let grid = run_simulation(&grid_cfg)?;
            write_record(&dir.join("grid"), &grid)?;
            let dom = cfg.build_domain()?;
            let basis = match &cfg.galerkin.basis_file {
                Some(f) => read_basis(&cfg.resolve(f), &dom)?.0,
                None => {
                    let opts = EigenOptions {
                        tol: cfg.galerkin.eig_tol,
                        ..Default::default()
                    };
                    eigenbasis_m(&assemble_m(&dom), nmax, &opts)?
                }
            };
            let gf = grid.final_snapshot();
            let rows: Vec<Vec<f64>> = vals
                .par_iter()
                .map(|&n| {
                    let mut c = cfg.clone();
                    c.mode = Mode::Galerkin;
                    c.galerkin.n = n;
                    let rec = run_galerkin(&c, &basis.truncate(n)?)?;
                    write_record(&dir.join(format!("N{n}")), &rec)?;
                    let f = rec.final_snapshot();
                    let h1 = rec.rows.iter().map(|r| r.psi_h1).fold(0.0, f64::max);
                    let am = rec.rows.iter().map(|r| r.a_m).fold(0.0, f64::max);
                    Ok(vec![n as f64, state_distance(&f.psi, &f.a, &gf.psi, &gf.a), h1, am, rec.cap.unwrap_or(f64::NAN)])
                })
                .collect::<Result<_>>()?;
            let monotone = rows.windows(2).all(|w| w[1][1] < w[0][1]);
            let bounded = rows.iter().all(|r| r[2] <= r[4] && r[3] <= r[4]);
            finish(
                &dir,
                name,
                &cfg,
                &["N", "distance_to_grid", "max_psi_h1", "max_a_m", "cap"],
                rows,
                json!({ "monotone": monotone, "bounded_by_cap": bounded }),
            )?
        }
        SweepAxis::Delta => {
            let vals = if values.is_empty() { vec![1e-3, 1e-4, 1e-5] } else { values.to_vec() };
            let seed = cfg.initial.perturbation.as_ref().map_or(0x9e37, |p| p.seed);
            let mut base = cfg.clone();
            base.initial.perturbation = None;
            base.output.vtk = false;
            let mut cases = vec![Case {
                label: "base".into(),
                value: 0.0,
                cfg: base.clone(),
            }];
            for &v in &vals {
                let mut c = base.clone();
                c.initial.perturbation = Some(PerturbationSpec { delta: v, seed });
                c.validate()?;
                cases.push(Case { label: format!("delta{}", label(v)), value: v, cfg: c });
            }
            let recs = run_cases(&dir, &cases)?;
            let eta = cfg.params.eta;
            let mut table = Vec::new();
            for (c, r) in cases.iter().zip(&recs).skip(1) {
                let d = stability_compare(&recs[0].snapshots, &r.snapshots, eta)?;
                table.push(vec![c.value, d.q[0].sqrt(), d.growth, d.terminal, d.terminal / c.value]);
            }
            finish(&dir, name, &cfg, &["delta", "initial", "growth", "terminal", "terminal_over_delta"], table, json!({}))?
        }
    };
    Ok(report)
}

fn cmd_diagnose(dir: &Path, check: Check, against: Option<&Path>) -> std::result::Result<Value, Failure> {
    let rec = load_record(dir)?;
    let eta = rec.config.params.eta;
    let kappa = rec.config.params.kappa;
    let other = || -> Result<RunRecord> {
        let p = against.ok_or_else(|| Error::invalid("this check compares two records; pass --against <record-dir>"))?;
        load_record(p)
    };
    let out = match check {
        Check::Energy => {
            let g = gronwall_check(&rec.rows, eta, kappa, rec.domain.volume());
            let r = lyapunov_residual(&rec.rows, eta, kappa, rec.dt());
            let f = rec.final_snapshot();
            let applied = rec.config.build_applied(&rec.domain)?;
            json!({
                "gronwall": { "holds": g.holds, "worst_margin": g.worst_margin, "worst_time": g.worst_time },
                "lyapunov_max_positive": max_positive(&r),
                "lyapunov_max": r.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                "final_energy": energy(&f.psi, &f.a, &applied, kappa),
            })
        }
        Check::Bound => serde_json::to_value(bound_monitor(&rec)).unwrap(),
        Check::Weak => {
            let prev = rec.penultimate.as_ref().ok_or_else(|| Error::Record("record has no penultimate state".into()))?;
            let next = rec.final_snapshot();
            let bank = TestBank::trigonometric(&rec.domain, 2);
            let ms = ManufacturedSolution { eta, kappa };
            let forcing: Option<&dyn tdgl::dynamics::Forcing> = match rec.config.params.forcing {
                ForcingSpec::Manufactured => Some(&ms),
                ForcingSpec::None => None,
            };
            let (rp, ra) = weak_residual(prev, next, &rec.params()?, rec.dt(), &bank, forcing);
            json!({ "t": next.t, "psi_residual": rp, "a_residual": ra, "tests": bank.centers.len() + bank.faces.len() })
        }
        Check::Stability => {
            let d = stability_compare(&rec.snapshots, &other()?.snapshots, eta)?;
            serde_json::to_value(d).unwrap()
        }
        Check::Ratio => {
            let f = rec.final_snapshot();
            json!({ "t": f.t, "norm_ratio": norm_ratio(&f.a)? })
        }
        Check::Gauge => {
            let applied = rec.config.build_applied(&rec.domain)?;
            serde_json::to_value(gauge_compare(&rec.snapshots, &other()?.snapshots, &applied)?).unwrap()
        }
    };
    Ok(json!({ "record": dir, "report": out }))
}

fn cmd_eigs(path: &Path, n: usize, out: Option<PathBuf>) -> std::result::Result<Value, Failure> {
    let cfg = parse_config_file(path)?;
    let dom = cfg.build_domain()?;
    let op = assemble_m(&dom);
    let opts = EigenOptions {
        tol: cfg.galerkin.eig_tol,
        ..Default::default()
    };
    let basis = eigenbasis_m(&op, n, &opts)?;
    let target = out
        .or_else(|| cfg.galerkin.basis_file.as_ref().map(|f| cfg.resolve(f)))
        .unwrap_or_else(|| out_root().join(format!("basis-{}-N{n}.bin", &tdgl::config::hex(&dom.content_hash())[..12])));
    if let Some(p) = target.parent() {
        std::fs::create_dir_all(p).map_err(Error::from)?;
    }
    write_basis(&target, &basis, cfg.galerkin.eig_tol)?;
    Ok(json!({
        "path": target,
        "dof_count": basis.dof_count(),
        "eigenvalues": basis.eigenvalues,
        "orthonormality": basis.orthonormality,
        "max_residual": basis.max_residual,
    }))
}
