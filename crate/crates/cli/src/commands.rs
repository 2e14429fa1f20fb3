use std::fmt::Write as _;

use rayon::prelude::*;

use rma_core::bounds::{FiniteSize, LoadSearch};
use rma_core::config::{CapacityKind, ConfigError, RunConfig, SweepAxis};
use rma_core::design::{self as designer, system_capacity, DesignError, DesignResult};
use rma_core::dynamics::{capacity_scan, run_dynamics, AccessScheme, DynamicsError, ResourceModel};
use rma_core::evolution::{avg_transmissions, evolve, finite_size_error};
use rma_core::qos::{validate_scenario, AccessMatrix, Scenario};
use rma_core::sic::{aggregate, exact_enumeration_setup, monte_carlo, monte_carlo_trials, trials_csv};

pub const DEFAULT_TRIALS: usize = 1000;

pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
    pub trials: Option<usize>,
}

/// Files to write, relative to the output directory, and text for stdout.
#[derive(Debug, Default)]
pub struct Output {
    pub files: Vec<(String, String)>,
    pub stdout: String,
}

impl Output {
    fn file(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }
}

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Infeasible(Output),
    Runtime(String, Option<Output>),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

pub fn analyze(ctx: &Context) -> Result<Output, Failure> {
    let cfg = &ctx.config;
    if cfg.groups.is_empty() && cfg.sweep.is_some() {
        return sweep_grid(ctx, false);
    }
    let scn = cfg.scenario()?;
    let g = cfg.matrix(&scn)?;
    let opts = cfg.analyze.evolve_options();
    let trace = evolve(&scn, &g, &opts).map_err(config_err)?;
    let m = avg_transmissions(&scn, &g);

    let mut out = Output::default();
    out.file("trace.csv", trace.to_csv());
    out.file("summary.csv", trace.summary_csv(&m));
    let eps = trace.deadline_errors();
    let c = cfg.analyze.finite_size_c;
    let corrected = if c > 0.0 {
        let fs = finite_size_error(&scn, &g, c, &opts).map_err(config_err)?;
        let mut csv = String::from("group,raw,corrected\n");
        for i in 0..fs.raw.len() {
            let _ = writeln!(csv, "{},{},{}", i + 1, fs.raw[i], fs.corrected[i]);
        }
        out.file("finite_size.csv", csv);
        Some(fs.corrected)
    } else {
        None
    };
    for i in 0..eps.len() {
        let _ = write!(out.stdout, "group {}: epsilon {:.6e}  M {:.4}", i + 1, eps[i], m[i]);
        if let Some(c) = &corrected {
            let _ = write!(out.stdout, "  corrected {:.6e}", c[i]);
        }
        out.stdout.push('\n');
    }
    Ok(out)
}

pub fn simulate(ctx: &Context) -> Result<Output, Failure> {
    let setup = ctx.config.frame_setup()?;
    let trials = ctx.trials.unwrap_or(DEFAULT_TRIALS);
    let per_trial = monte_carlo_trials(&setup, trials, ctx.seed).map_err(config_err)?;
    let stats = aggregate(&per_trial);

    let mut out = Output::default();
    out.file("aggregate.csv", stats.to_csv());
    if ctx.config.simulate.trace {
        out.file("trials.csv", trials_csv(&per_trial));
    }
    let (eps, se) = (stats.deadline_errors(), stats.deadline_stderr());
    for i in 0..eps.len() {
        let _ = writeln!(
            out.stdout,
            "group {}: epsilon {:.6e} ± {:.2e}  mean tx {:.4}",
            i + 1,
            eps[i],
            se[i],
            stats.mean_transmissions[i]
        );
    }
    Ok(out)
}

pub fn oracle(ctx: &Context) -> Result<Output, Failure> {
    let setup = ctx.config.frame_setup()?;
    let full = exact_enumeration_setup(&setup).map_err(config_err)?;
    let r = full.len();
    let mut out = Output::default();
    let mut csv = String::from("group,subframe,epsilon\n");
    for i in 0..r {
        for (s, row) in full.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", i + 1, s + 1, row[i]);
        }
        if r == 1 {
            let _ = writeln!(out.stdout, "{}", full[0][0]);
        } else {
            let _ = writeln!(out.stdout, "group {}: {}", i + 1, full[i][i]);
        }
    }
    out.file("oracle.csv", csv);
    Ok(out)
}

fn design_output(res: &DesignResult) -> Output {
    let mut out = Output::default();
    let mut csv = String::from("subframe,group,g\n");
    for (s, row) in res.g.rows().iter().enumerate() {
        for (i, v) in row.iter().enumerate() {
            let _ = writeln!(csv, "{},{},{}", s + 1, i + 1, v);
        }
    }
    out.file("design.txt", res.report());
    out.file("g.csv", csv);
    out.stdout = res.report();
    out
}

pub fn design(ctx: &Context) -> Result<Output, Failure> {
    let problem = ctx.config.design_problem()?;
    match designer::design(&problem).and_then(DesignResult::into_feasible) {
        Ok(res) => Ok(design_output(&res)),
        Err(DesignError::Infeasible { result, .. }) => Err(Failure::Infeasible(design_output(&result))),
        Err(e) => Err(config_err(e)),
    }
}

pub struct DynamicsOverrides {
    pub lambda: Option<f64>,
    pub frames: Option<usize>,
    pub scheme: Option<String>,
    pub rbs: Option<String>,
}

fn parse_scheme(s: &str) -> Result<AccessScheme, Failure> {
    let bad = || Failure::Config(format!("--scheme {s}: expected rma, dab-rbs:M or dab-fraction:F"));
    match s.split_once(':') {
        None if s == "rma" => Ok(AccessScheme::Rma),
        Some(("dab-rbs", m)) => Ok(AccessScheme::DabFixedRachRbs(m.parse().map_err(|_| bad())?)),
        Some(("dab-fraction", f)) => Ok(AccessScheme::DabFixedRachFraction(f.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn parse_rbs(s: &str) -> Result<ResourceModel, Failure> {
    let bad = || Failure::Config(format!("--rbs {s}: expected fixed:N or uniform:LO:HI"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["fixed", n] => Ok(ResourceModel::FixedRbs(n.parse().map_err(|_| bad())?)),
        ["uniform", lo, hi] => Ok(ResourceModel::UniformRandomRbs { lo: lo.parse().map_err(|_| bad())?, hi: hi.parse().map_err(|_| bad())? }),
        _ => Err(bad()),
    }
}

pub fn dynamics(ctx: &Context, o: &DynamicsOverrides) -> Result<Output, Failure> {
    let mut d = ctx.config.dynamics.clone().unwrap_or_default();
    if let Some(l) = o.lambda {
        d.arrival_rate = l;
    }
    if let Some(f) = o.frames {
        d.frames = f;
    }
    if let Some(s) = &o.scheme {
        d.scheme = parse_scheme(s)?;
    }
    if let Some(r) = &o.rbs {
        d.resource_model = parse_rbs(r)?;
    }
    let run = run_dynamics(&d, ctx.seed).map_err(config_err)?;
    let mut out = Output::default();
    out.file("frames.csv", run.to_csv());
    let summary = serde_json::to_string_pretty(&run.summary).expect("summary serializes") + "\n";
    out.file("summary.json", summary.clone());
    out.stdout = summary;
    Ok(out)
}

pub fn capacity(ctx: &Context) -> Result<Output, Failure> {
    let section = ctx.config.capacity.clone().unwrap_or_default();
    let mut out = Output::default();
    match section.kind {
        CapacityKind::Static => {
            let q = ctx.config.capacity_query()?;
            let res = system_capacity(&q).map_err(config_err)?;
            out.file("capacity.csv", format!("load,saturated\n{},{}\n", res.load, res.saturated));
            let _ = writeln!(out.stdout, "capacity K/N = {:.4}{}", res.load, if res.saturated { " (at load_max)" } else { "" });
        }
        CapacityKind::Dynamic => {
            if section.lambdas.is_empty() {
                return Err(Failure::Config("dynamic capacity needs `lambdas` in [capacity]".into()));
            }
            let d = ctx.config.dynamics_config()?;
            match capacity_scan(&d, &section.lambdas, ctx.seed) {
                Ok(scan) => {
                    out.file("capacity.csv", scan.to_csv());
                    match scan.max_stable {
                        Some(l) => _ = writeln!(out.stdout, "max stable lambda = {l}"),
                        None => _ = writeln!(out.stdout, "no stable lambda in the grid"),
                    }
                }
                Err(DynamicsError::NonMonotoneStability { unstable, stable, scan }) => {
                    out.file("capacity.csv", scan.to_csv());
                    let msg = format!("stability is not monotone: stable at {stable} after unstable at {unstable}; refine the grid or add frames");
                    return Err(Failure::Runtime(msg, Some(out)));
                }
                Err(e) => return Err(config_err(e)),
            }
        }
    }
    Ok(out)
}

pub fn sweep(ctx: &Context) -> Result<Output, Failure> {
    let simulate = ctx.config.sweep.as_ref().is_some_and(|s| s.simulate);
    sweep_grid(ctx, simulate)
}

fn sweep_grid(ctx: &Context, simulate: bool) -> Result<Output, Failure> {
    let cfg = &ctx.config;
    let sw = cfg.sweep.as_ref().ok_or(ConfigError::Missing("[sweep]"))?;
    let points = sw.points()?;
    let needs_slots = sw.finite_size_c > 0.0 || simulate;
    let num_slots = if needs_slots { Some(cfg.num_slots.ok_or(ConfigError::Missing("num_slots"))?) } else { None };
    let search = LoadSearch {
        finite_size: num_slots.filter(|_| sw.finite_size_c > 0.0).map(|n| FiniteSize { c: sw.finite_size_c, num_slots: n }),
        evolve: cfg.analyze.evolve_options(),
        ..LoadSearch::default()
    };
    let trials = ctx.trials.unwrap_or(DEFAULT_TRIALS);

    let grid: Vec<(f64, f64)> = sw
        .fixed
        .iter()
        .flat_map(|&f| points.iter().map(move |&x| match sw.over {
            SweepAxis::G => (x, f),
            SweepAxis::Load => (f, x),
        }))
        .collect();
    let rows: Vec<Result<String, Failure>> = grid
        .par_iter()
        .enumerate()
        .map(|(j, &(g, load))| {
            let eps = search.error(g, load);
            let mut row = format!("{g},{load},{eps}");
            if let Some(n) = num_slots.filter(|_| simulate) {
                let k = ((load * n as f64).round() as usize).max(1);
                let scn = validate_scenario(&Scenario::single_group(k, n, 0.5)).map_err(config_err)?;
                let stats = monte_carlo(&scn, &AccessMatrix::single(g), trials, ctx.seed.wrapping_add(j as u64)).map_err(config_err)?;
                let _ = write!(row, ",{},{}", stats.mean_unresolved[0][0], stats.stderr[0][0]);
            }
            row.push('\n');
            Ok(row)
        })
        .collect();

    let mut csv = String::from(if simulate { "g,load,epsilon,eps_sim,stderr\n" } else { "g,load,epsilon\n" });
    for r in rows {
        csv.push_str(&r?);
    }
    let mut out = Output::default();
    let _ = writeln!(out.stdout, "{} grid points", grid.len());
    out.file("sweep.csv", csv);
    Ok(out)
}
