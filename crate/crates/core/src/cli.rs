//! Command-line front end: figure presets, generic runs, operator dumps, comparisons and sweeps.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 2 | invalid arguments, model or input file contents |
//! | 3 | the run diverged (the trajectory is still written) |
//! | 4 | I/O failure |
//! | 5 | comparison error above `--tol`, or an unbounded (diverged) comparison |

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linearize::{self, Basis, LiftedSystem, Method};
use crate::models::{self, NamedModel, BUILTIN_DIVERGENCE_BOUND};
use crate::poly::{PivotState, PolyOde};
use crate::simulate::{
    self, format_float, parse_f64_list, ErrorReport, Scheme, SimConfig, SwitchPolicy, Trajectory,
};

pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const INVALID: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const IO: i32 = 4;
    pub const TOLERANCE: i32 = 5;
}

/// Order used for Carleman and PSC when neither `--order` nor a preset supplies one.
pub const DEFAULT_ORDER: usize = 3;

#[derive(Parser, Debug)]
#[command(
    name = "pivotsim",
    version,
    about = "Carleman, PS and PSC linearizations of polynomial ODEs with pivot switching"
)]
pub struct Cli {
    /// Print the available experiment presets and exit.
    #[arg(long)]
    pub list_presets: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate a lifted system and write the trajectory CSV.
    Run {
        #[command(flatten)]
        spec: RunArgs,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare a trajectory with another one or with a reference solution.
    Compare(CompareArgs),
    /// Dump the dense generator of a lifted system as CSV.
    Matrix {
        #[command(flatten)]
        spec: RunArgs,
        #[arg(long, default_value = "monomial")]
        basis: Basis,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat a run over a list of parameter values.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Logistic,
    Kpp,
    PhaseField,
}

impl ModelKind {
    fn build(self, n: Option<usize>, beta: Option<f64>) -> Result<NamedModel> {
        match self {
            ModelKind::Logistic => {
                if n.is_some_and(|n| n != 1) || beta.is_some() {
                    return Err(Error::input(
                        "the logistic model takes neither --n nor --beta",
                    ));
                }
                Ok(models::build_logistic())
            }
            ModelKind::Kpp => {
                if beta.is_some() {
                    return Err(Error::input("the KPP model takes no --beta"));
                }
                models::build_kpp(n.unwrap_or(8))
            }
            ModelKind::PhaseField => {
                let n = n.unwrap_or(models::PHASE_FIELD_X0.len());
                let beta = beta.unwrap_or(-0.2);
                if n == models::PHASE_FIELD_X0.len() {
                    models::build_phase_field(n, beta)
                } else {
                    Ok(NamedModel {
                        label: format!("phase-field-n{n}"),
                        ode: models::phase_field_ode(n, beta)?,
                        default_x0: Vec::new(),
                        divergence_bound: BUILTIN_DIVERGENCE_BOUND,
                    })
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    Euler,
    Rk4,
    /// Closed-form solution; logistic model only.
    Analytic,
}

/// Flags describing one run. Every field is optional so that a preset can fill the gaps.
#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// Experiment preset (see --list-presets); explicit flags override its settings.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Polynomial model in JSON form; requires --x0.
    #[arg(long, conflicts_with = "model")]
    pub model_file: Option<PathBuf>,
    /// Lattice sites for kpp and phase-field.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    /// Initial state, comma separated; a single value is broadcast.
    #[arg(long, allow_hyphen_values = true)]
    pub x0: Option<String>,
    #[arg(long)]
    pub method: Option<Method>,
    /// Truncation order K (Carleman) or P (PSC).
    #[arg(long)]
    pub order: Option<usize>,
    /// Initial pivot, comma separated or a single broadcast value; defaults to x0.
    #[arg(long, allow_hyphen_values = true)]
    pub pivot: Option<String>,
    /// Scripted switches `t=target[;t=target...]`.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "switch")]
    pub pivot_schedule: Option<String>,
    /// never | at:t1,t2 | every:T | drift:E
    #[arg(long)]
    pub switch: Option<String>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Readout noise amplitude for measured pivots.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stride: Option<usize>,
    /// Divergence threshold on the max norm of x.
    #[arg(long)]
    pub div_threshold: Option<f64>,
    /// Carry evolved higher blocks across pivot switches instead of re-lifting.
    #[arg(long)]
    pub keep_higher_blocks: bool,
}

impl RunArgs {
    fn preset_base(model: ModelKind, method: Method, order: Option<usize>) -> Self {
        RunArgs {
            model: Some(model),
            method: Some(method),
            order,
            t_end: Some(10.0),
            ..Default::default()
        }
    }

    fn with_pivot(mut self, pivot: &str) -> Self {
        self.pivot = Some(pivot.into());
        self
    }

    fn with_switch(mut self, switch: &str) -> Self {
        self.switch = Some(switch.into());
        self
    }

    fn with_schedule(mut self, schedule: &str) -> Self {
        self.pivot_schedule = Some(schedule.into());
        self
    }

    /// Explicit flags layered over the named preset, if any.
    fn merged(&self) -> Result<RunArgs> {
        let Some(name) = &self.preset else {
            return Ok(self.clone());
        };
        let base = find_preset(name)
            .ok_or_else(|| Error::input(format!("unknown preset '{name}' (see --list-presets)")))?
            .args;
        let own_model = self.model.is_some() || self.model_file.is_some();
        let own_policy = self.switch.is_some() || self.pivot_schedule.is_some();
        Ok(RunArgs {
            preset: None,
            model: if own_model { self.model } else { base.model },
            model_file: if own_model {
                self.model_file.clone()
            } else {
                base.model_file
            },
            n: self.n.or(base.n),
            beta: self.beta.or(base.beta),
            x0: self.x0.clone().or(base.x0),
            method: self.method.or(base.method),
            order: self.order.or(base.order),
            pivot: self.pivot.clone().or(base.pivot),
            pivot_schedule: if own_policy {
                self.pivot_schedule.clone()
            } else {
                base.pivot_schedule
            },
            switch: if own_policy {
                self.switch.clone()
            } else {
                base.switch
            },
            dt: self.dt.or(base.dt),
            t_end: self.t_end.or(base.t_end),
            eta: self.eta.or(base.eta),
            seed: self.seed.or(base.seed),
            stride: self.stride.or(base.stride),
            div_threshold: self.div_threshold.or(base.div_threshold),
            keep_higher_blocks: self.keep_higher_blocks || base.keep_higher_blocks,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub args: RunArgs,
}

/// All figure presets, in listing order.
pub fn presets() -> Vec<Preset> {
    use Method::{Carleman, Ps, Psc};
    use ModelKind::{Kpp, Logistic, PhaseField};
    let entry = |name: &str, description: &str, args: RunArgs| Preset {
        name: name.into(),
        description: description.into(),
        args,
    };
    let mut list = Vec::new();
    for k in 2..=5 {
        list.push(entry(
            &format!("fig1a-K{k}"),
            &format!("logistic, Carleman K={k}, x0=0.1"),
            RunArgs::preset_base(Logistic, Carleman, Some(k)),
        ));
    }
    for (name, period) in [("fig2a", "0.01"), ("fig2b", "1"), ("fig2c", "2")] {
        list.push(entry(
            name,
            &format!("logistic, PS, pivot read out every {period}"),
            RunArgs::preset_base(Logistic, Ps, None).with_switch(&format!("every:{period}")),
        ));
    }
    for (name, p) in [("fig2d", 3), ("fig2e", 5)] {
        list.push(entry(
            name,
            &format!("logistic, PSC P={p}, pivot 0 switched to 1 at t=1"),
            RunArgs::preset_base(Logistic, Psc, Some(p))
                .with_pivot("0")
                .with_schedule("1=1"),
        ));
        list.push(entry(
            &format!("{name}-fixed"),
            &format!("logistic, PSC P={p}, pivot fixed at 1"),
            RunArgs::preset_base(Logistic, Psc, Some(p)).with_pivot("1"),
        ));
    }
    list.push(entry(
        "fig3b",
        "KPP n=8, Carleman K=3",
        RunArgs::preset_base(Kpp, Carleman, Some(3)),
    ));
    for (name, p) in [("fig3c", 3), ("fig3d", 5)] {
        list.push(entry(
            name,
            &format!("KPP n=8, PSC P={p}, pivot fixed at 1"),
            RunArgs::preset_base(Kpp, Psc, Some(p)).with_pivot("1"),
        ));
    }
    for (name, p) in [("fig3e", 3), ("fig3f", 5)] {
        list.push(entry(
            name,
            &format!("KPP n=8, PSC P={p}, pivot u(0) switched to 1 at t=1"),
            RunArgs::preset_base(Kpp, Psc, Some(p)).with_schedule("1=1"),
        ));
    }
    list.push(entry(
        "fig4b",
        "phase field n=8 beta=-0.2, Carleman K=3",
        RunArgs::preset_base(PhaseField, Carleman, Some(3)),
    ));
    for (name, p) in [("fig4c", 3), ("fig4d", 5)] {
        list.push(entry(
            name,
            &format!("phase field n=8 beta=-0.2, PSC P={p}, pivot fixed at -1"),
            RunArgs::preset_base(PhaseField, Psc, Some(p)).with_pivot("-1"),
        ));
    }
    for (name, p) in [("fig4e", 3), ("fig4f", 5)] {
        list.push(entry(
            name,
            &format!("phase field n=8 beta=-0.2, PSC P={p}, pivot phi(0) switched to -1 at t=2.9"),
            RunArgs::preset_base(PhaseField, Psc, Some(p)).with_schedule("2.9=-1"),
        ));
    }
    list
}

pub fn find_preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

/// Model, initial state and integration settings, independent of the lifting.
#[derive(Clone, Debug)]
pub struct Problem {
    pub model: NamedModel,
    pub x0: Vec<f64>,
    pub cfg: SimConfig,
}

impl Problem {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let a = args.merged()?;
        let model = match (a.model, &a.model_file) {
            (_, Some(path)) => {
                if a.n.is_some() || a.beta.is_some() {
                    return Err(Error::input("--n and --beta apply to built-in models only"));
                }
                let ode = PolyOde::from_json(&fs::read_to_string(path)?)?;
                NamedModel {
                    label: path.display().to_string(),
                    ode,
                    default_x0: Vec::new(),
                    divergence_bound: SimConfig::default().divergence_threshold,
                }
            }
            (Some(kind), None) => kind.build(a.n, a.beta)?,
            (None, None) => {
                return Err(Error::input(
                    "no model given: use --model, --model-file or --preset",
                ))
            }
        };
        let n = model.ode.n();
        let x0 = match &a.x0 {
            Some(text) => broadcast(parse_f64_list(text, "--x0")?, n, "--x0")?,
            None if model.default_x0.is_empty() => {
                return Err(Error::input(format!(
                    "--x0 is required for model '{}'",
                    model.label
                )))
            }
            None => model.default_x0.clone(),
        };
        PivotState::new(x0.clone())?;
        let defaults = SimConfig::default();
        let cfg = SimConfig {
            dt: a.dt.unwrap_or(defaults.dt),
            t_end: a.t_end.unwrap_or(defaults.t_end),
            divergence_threshold: a.div_threshold.unwrap_or(model.divergence_bound),
            readout_noise: a.eta.unwrap_or(defaults.readout_noise),
            rng_seed: a.seed.unwrap_or(defaults.rng_seed),
            output_stride: a.stride.unwrap_or(defaults.output_stride),
            keep_higher_blocks: a.keep_higher_blocks,
        };
        cfg.validate()?;
        Ok(Problem { model, x0, cfg })
    }

    pub fn reference(&self, kind: Reference) -> Result<Trajectory> {
        match kind {
            Reference::Euler => {
                simulate::reference_solve(&self.model.ode, &self.x0, &self.cfg, Scheme::Euler)
            }
            Reference::Rk4 => {
                simulate::reference_solve(&self.model.ode, &self.x0, &self.cfg, Scheme::Rk4)
            }
            Reference::Analytic => {
                if self.model.label != "logistic" {
                    return Err(Error::input(
                        "an analytic reference exists only for the logistic model",
                    ));
                }
                let x0 = self.x0[0];
                simulate::sample_solution(1, &self.cfg, |t| vec![models::logistic_analytic(x0, t)])
            }
        }
    }
}

/// A fully validated run: problem plus lifting, initial pivot and switching policy.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub problem: Problem,
    pub method: Method,
    pub order: usize,
    pub s0: PivotState,
    pub policy: SwitchPolicy,
}

impl RunSpec {
    pub fn resolve(args: &RunArgs) -> Result<Self> {
        let problem = Problem::resolve(args)?;
        let a = args.merged()?;
        let n = problem.model.ode.n();
        let method = a
            .method
            .ok_or_else(|| Error::input("--method is required unless a preset supplies it"))?;
        let order = match method {
            Method::Ps => match a.order {
                Some(o) if o != 1 => {
                    return Err(Error::input(format!(
                        "the PS method has order 1, got --order {o}"
                    )))
                }
                _ => 1,
            },
            _ => a.order.unwrap_or(DEFAULT_ORDER),
        };
        let s0 = match (&a.pivot, method) {
            (Some(_), Method::Carleman) => {
                return Err(Error::input("Carleman linearization takes no --pivot"))
            }
            (None, Method::Carleman) => PivotState::zeros(n),
            (Some(text), _) => {
                PivotState::new(broadcast(parse_f64_list(text, "--pivot")?, n, "--pivot")?)?
            }
            (None, _) => PivotState::new(problem.x0.clone())?,
        };
        let policy = match (&a.switch, &a.pivot_schedule) {
            (Some(_), Some(_)) => {
                return Err(Error::input(
                    "--switch and --pivot-schedule are mutually exclusive",
                ))
            }
            (Some(text), None) => text.parse()?,
            (None, Some(text)) => SwitchPolicy::parse_schedule(text)?,
            (None, None) => SwitchPolicy::Never,
        };
        if method == Method::Carleman && policy != SwitchPolicy::Never {
            return Err(Error::input(
                "Carleman linearization has no pivot to switch",
            ));
        }
        Ok(RunSpec {
            problem,
            method,
            order,
            s0,
            policy,
        })
    }

    pub fn system(&self) -> Result<LiftedSystem> {
        linearize::build(&self.problem.model.ode, self.method, self.order, &self.s0)
    }

    pub fn run(&self) -> Result<Trajectory> {
        simulate::run_lifted(
            &self.problem.model.ode,
            self.method,
            self.order,
            &self.problem.x0,
            &self.s0,
            &self.policy,
            &self.problem.cfg,
        )
    }
}

fn broadcast(values: Vec<f64>, n: usize, flag: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values),
        len => Err(Error::input(format!(
            "{flag} has {len} components, expected 1 or {n}"
        ))),
    }
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Trajectory CSV under test.
    pub a: PathBuf,
    /// Second trajectory CSV; omit when using --reference.
    pub b: Option<PathBuf>,
    /// Compare against a reference solve of the problem given by the run flags.
    #[arg(long, value_enum, conflicts_with = "b")]
    pub reference: Option<Reference>,
    /// Largest acceptable max_abs error.
    #[arg(long)]
    pub tol: Option<f64>,
    #[command(flatten)]
    pub spec: RunArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Order,
    Eta,
    Seed,
    Dt,
    TEnd,
    /// Switching interval of an every:T policy.
    Every,
    /// Tolerance of a drift:E policy.
    Drift,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub spec: RunArgs,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated parameter values.
    #[arg(long, allow_hyphen_values = true)]
    pub values: String,
    /// Directory receiving one CSV per run plus summary.csv.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub parameter: String,
    pub outcome: std::result::Result<(Trajectory, f64), String>,
}

fn with_param(base: &RunArgs, param: SweepParam, value: &str) -> Result<RunArgs> {
    let mut a = base.clone();
    let number = || simulate::parse_f64(value, "sweep value");
    let integer = || {
        value.parse::<u64>().map_err(|_| {
            Error::input(format!(
                "sweep value '{value}' is not a non-negative integer"
            ))
        })
    };
    match param {
        SweepParam::Order => a.order = Some(integer()? as usize),
        SweepParam::Eta => a.eta = Some(number()?),
        SweepParam::Seed => a.seed = Some(integer()?),
        SweepParam::Dt => a.dt = Some(number()?),
        SweepParam::TEnd => a.t_end = Some(number()?),
        SweepParam::Every | SweepParam::Drift => {
            let kind = if param == SweepParam::Every {
                "every"
            } else {
                "drift"
            };
            a.switch = Some(format!("{kind}:{}", number()?));
            a.pivot_schedule = None;
        }
    }
    Ok(a)
}

/// Runs one simulation per value, in parallel, returning rows in input order. Each row holds
/// the trajectory and its max error against an Euler reference of the same problem.
pub fn sweep(base: &RunArgs, param: SweepParam, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::input("the sweep value list is empty"));
    }
    RunSpec::resolve(base)?;
    Ok(values
        .par_iter()
        .map(|value| {
            let outcome = (|| {
                let spec = RunSpec::resolve(&with_param(base, param, value)?)?;
                let traj = spec.run()?;
                let reference = spec.problem.reference(Reference::Euler)?;
                let err = simulate::compare(&traj, &reference)?.max_abs;
                Ok::<_, Error>((traj, err))
            })()
            .map_err(|e| e.to_string());
            SweepRow {
                parameter: value.clone(),
                outcome,
            }
        })
        .collect())
}

pub fn write_sweep_summary<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.into());
    w.write_record([
        "parameter",
        "diverged",
        "t_div",
        "max_abs_vs_reference",
        "error",
    ])
    .map_err(io)?;
    for row in rows {
        let record = match &row.outcome {
            Ok((traj, err)) => [
                row.parameter.clone(),
                u8::from(traj.diverged()).to_string(),
                traj.divergence.map(format_float).unwrap_or_default(),
                format_float(*err),
                String::new(),
            ],
            Err(msg) => [
                row.parameter.clone(),
                String::new(),
                String::new(),
                String::new(),
                msg.clone(),
            ],
        };
        w.write_record(&record).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Row-major CSV of a dense matrix, entries in full-precision scientific notation.
pub fn write_matrix_csv<W: Write>(m: &Array2<f64>, mut out: W) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| format_float(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    out.flush()?;
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    Trajectory::read_csv(BufReader::new(File::open(path)?))
}

fn emit(
    path: Option<&Path>,
    out: &mut dyn Write,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    match path {
        Some(p) => {
            let mut file = BufWriter::new(File::create(p)?);
            write(&mut file)?;
            file.flush()?;
            Ok(())
        }
        None => write(out),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => exit::IO,
        _ => exit::INVALID,
    }
}

/// Parses `args` (including the program name) and runs the command, writing data to `out` and
/// diagnostics to `err`. Returns the process exit code.
pub fn execute<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let rendered = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{rendered}");
                exit::INVALID
            } else {
                let _ = write!(out, "{rendered}");
                exit::SUCCESS
            };
        }
    };
    match dispatch(cli, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    if cli.list_presets {
        for p in presets() {
            writeln!(out, "{}\t{}", p.name, p.description)?;
        }
        return Ok(exit::SUCCESS);
    }
    let Some(command) = cli.command else {
        return Err(Error::input("no command given (see --help)"));
    };
    match command {
        Command::Run { spec, out: path } => {
            let spec = RunSpec::resolve(&spec)?;
            let traj = spec.run()?;
            emit(path.as_deref(), out, |w| traj.write_csv(w))?;
            match traj.divergence {
                Some(t) => {
                    writeln!(err, "diverged at t={}", format_float(t))?;
                    Ok(exit::DIVERGED)
                }
                None => Ok(exit::SUCCESS),
            }
        }
        Command::Compare(args) => {
            let a = read_trajectory(&args.a)?;
            let b = match (&args.b, args.reference) {
                (Some(path), None) => read_trajectory(path)?,
                (None, Some(kind)) => Problem::resolve(&args.spec)?.reference(kind)?,
                _ => {
                    return Err(Error::input(
                        "compare needs a second trajectory or --reference",
                    ))
                }
            };
            let report: ErrorReport = simulate::compare(&a, &b)?;
            writeln!(out, "{report}")?;
            let tol = args.tol.unwrap_or(f64::INFINITY);
            if report.max_abs.is_finite() && report.max_abs <= tol {
                Ok(exit::SUCCESS)
            } else {
                writeln!(
                    err,
                    "max_abs error {} exceeds tolerance {}",
                    format_float(report.max_abs),
                    tol
                )?;
                Ok(exit::TOLERANCE)
            }
        }
        Command::Matrix {
            spec,
            basis,
            out: path,
        } => {
            let sys = RunSpec::resolve(&spec)?.system()?;
            let dense = sys.dense_in_basis(basis)?;
            emit(path.as_deref(), out, |w| write_matrix_csv(&dense, w))?;
            Ok(exit::SUCCESS)
        }
        Command::Sweep(args) => {
            let values: Vec<String> = args
                .values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            let rows = sweep(&args.spec, args.param, &values)?;
            if let Some(dir) = &args.out_dir {
                fs::create_dir_all(dir)?;
                let param = format!("{:?}", args.param).to_ascii_lowercase();
                for row in &rows {
                    if let Ok((traj, _)) = &row.outcome {
                        let name = format!(
                            "run-{param}-{}.csv",
                            row.parameter.replace(['/', '\\'], "_")
                        );
                        let mut file = BufWriter::new(File::create(dir.join(name))?);
                        traj.write_csv(&mut file)?;
                        file.flush()?;
                    }
                }
                write_sweep_summary(
                    &rows,
                    BufWriter::new(File::create(dir.join("summary.csv"))?),
                )?;
            }
            for row in &rows {
                if let Err(msg) = &row.outcome {
                    writeln!(
                        err,
                        "run {}={} failed: {msg}",
                        format!("{:?}", args.param).to_ascii_lowercase(),
                        row.parameter
                    )?;
                }
            }
            write_sweep_summary(&rows, &mut *out)?;
            Ok(exit::SUCCESS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("pivotsim").chain(args.iter().copied());
        let code = execute(argv, &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    fn parse_matrix(text: &str) -> Vec<Vec<f64>> {
        text.lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect()
    }

    #[test]
    fn preset_names_are_complete_and_unique() {
        let names: Vec<String> = presets().into_iter().map(|p| p.name).collect();
        for required in [
            "fig1a-K2", "fig1a-K3", "fig1a-K4", "fig1a-K5", "fig2a", "fig2b", "fig2c", "fig2d",
            "fig2e", "fig3b", "fig3c", "fig3d", "fig3e", "fig3f", "fig4b", "fig4c", "fig4d",
            "fig4e", "fig4f",
        ] {
            assert!(names.iter().any(|n| n == required), "missing {required}");
        }
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        for p in presets() {
            RunSpec::resolve(&RunArgs {
                preset: Some(p.name.clone()),
                ..Default::default()
            })
            .unwrap_or_else(|e| panic!("{}: {e}", p.name));
        }
    }

    #[test]
    fn presets_encode_the_figures() {
        let spec = |name: &str| {
            RunSpec::resolve(&RunArgs {
                preset: Some(name.into()),
                ..Default::default()
            })
            .unwrap()
        };
        let s = spec("fig3f");
        assert_eq!((s.method, s.order), (Method::Psc, 5));
        assert_eq!(s.s0.as_slice(), s.problem.x0.as_slice());
        assert_eq!(s.policy, SwitchPolicy::parse_schedule("1=1").unwrap());
        let s = spec("fig4d");
        assert_eq!(s.s0.as_slice(), &[-1.0; 8]);
        assert_eq!(s.policy, SwitchPolicy::Never);
        let s = spec("fig2b");
        assert_eq!(s.policy, SwitchPolicy::Every(1.0));
        assert_eq!(s.problem.cfg.t_end, 10.0);
        assert_eq!(s.problem.cfg.divergence_threshold, BUILTIN_DIVERGENCE_BOUND);
    }

    #[test]
    fn flags_override_presets() {
        let args = RunArgs {
            preset: Some("fig2d".into()),
            order: Some(4),
            switch: Some("every:0.5".into()),
            ..Default::default()
        };
        let s = RunSpec::resolve(&args).unwrap();
        assert_eq!(s.order, 4);
        assert_eq!(s.policy, SwitchPolicy::Every(0.5));
        assert_eq!(s.s0.as_slice(), &[0.0]);
    }

    #[test]
    fn list_presets_prints_to_stdout() {
        let (code, out, err) = run(&["--list-presets"]);
        assert_eq!(code, exit::SUCCESS);
        assert!(out.lines().any(|l| l.starts_with("fig4f\t")));
        assert!(err.is_empty());
    }

    #[test]
    fn invalid_invocations_exit_2() {
        assert_eq!(
            run(&["run", "--model", "logistic", "--method", "carleman", "--order", "0"]).0,
            exit::INVALID
        );
        assert_eq!(run(&["run", "--model", "logistic"]).0, exit::INVALID);
        assert_eq!(run(&["run", "--preset", "fig9z"]).0, exit::INVALID);
        assert_eq!(
            run(&["run", "--model", "logistic", "--method", "carleman", "--switch", "every:1"]).0,
            exit::INVALID
        );
        assert_eq!(
            run(&["run", "--model", "logistic", "--method", "ps", "--switch", "drift:0"]).0,
            exit::INVALID
        );
        assert_eq!(
            run(&["run", "--model", "kpp", "--method", "psc", "--x0", "1,2"]).0,
            exit::INVALID
        );
        assert_eq!(run(&["frobnicate"]).0, exit::INVALID);
        assert_eq!(run(&[]).0, exit::INVALID);
        assert_eq!(run(&["--help"]).0, exit::SUCCESS);
    }

    #[test]
    fn missing_model_file_is_an_io_failure() {
        let (code, _, err) = run(&[
            "run",
            "--model-file",
            "/nonexistent/model.json",
            "--x0",
            "0",
            "--method",
            "carleman",
        ]);
        assert_eq!(code, exit::IO);
        assert!(!err.is_empty());
    }

    #[test]
    fn carleman_matrix_dump() {
        let (code, out, _) = run(&[
            "matrix", "--model", "logistic", "--method", "carleman", "--order", "3",
        ]);
        assert_eq!(code, exit::SUCCESS);
        assert_eq!(
            parse_matrix(&out),
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.0, 1.0, -1.0, 0.0],
                vec![0.0, 0.0, 2.0, -2.0],
                vec![0.0, 0.0, 0.0, 3.0],
            ]
        );
        assert!(!out.contains("-0e0"));
    }

    #[test]
    fn psc_at_origin_dumps_the_carleman_matrix() {
        let carleman = run(&[
            "matrix", "--model", "logistic", "--method", "carleman", "--order", "3",
        ])
        .1;
        let psc = run(&[
            "matrix", "--model", "logistic", "--method", "psc", "--order", "3", "--pivot", "0",
        ])
        .1;
        assert_eq!(carleman, psc);
    }

    #[test]
    fn matrix_over_the_dense_cap_exits_2() {
        let (code, out, _) = run(&[
            "matrix", "--model", "kpp", "--method", "psc", "--order", "5", "--pivot", "1",
        ]);
        assert_eq!(code, exit::INVALID);
        assert!(out.is_empty());
    }

    #[test]
    fn diverging_run_still_writes_csv() {
        let (code, out, err) = run(&["run", "--preset", "fig1a-K3", "--stride", "50"]);
        assert_eq!(code, exit::DIVERGED);
        assert!(out.starts_with("t,x0,s0,switched\n"));
        assert!(out
            .trim_end()
            .lines()
            .last()
            .unwrap()
            .starts_with("# diverged at t="));
        assert!(err.contains("diverged"));
    }

    #[test]
    fn ideal_ps_run_succeeds() {
        let (code, out, _) = run(&[
            "run",
            "--model",
            "logistic",
            "--method",
            "ps",
            "--switch",
            "every:0.01",
            "--t-end",
            "10",
        ]);
        assert_eq!(code, exit::SUCCESS);
        let traj = Trajectory::read_csv(out.as_bytes()).unwrap();
        assert_eq!(traj.times.len(), 1001);
        assert!(traj.max_abs_state() < 1.0);
    }

    #[test]
    fn compare_identical_files_and_references() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let p = path.to_str().unwrap();
        assert_eq!(
            run(&["run", "--preset", "fig2b", "--out", p]).0,
            exit::SUCCESS
        );
        let (code, out, _) = run(&["compare", p, p, "--tol", "0"]);
        assert_eq!(code, exit::SUCCESS);
        assert_eq!(out.trim(), "max_abs=0e0 rms=0e0 t_at_max=0e0");

        let (code, out, _) = run(&[
            "compare",
            p,
            "--reference",
            "analytic",
            "--model",
            "logistic",
            "--tol",
            "0.05",
        ]);
        assert_eq!(code, exit::SUCCESS, "{out}");
        assert_eq!(
            run(&[
                "compare",
                p,
                "--reference",
                "analytic",
                "--model",
                "logistic",
                "--tol",
                "1e-6"
            ])
            .0,
            exit::TOLERANCE
        );
        assert_eq!(
            run(&["compare", p, "--reference", "analytic", "--model", "kpp"]).0,
            exit::INVALID
        );
        assert_eq!(run(&["compare", p]).0, exit::INVALID);
    }

    #[test]
    fn sweep_orders_rows_and_reports_failures() {
        let values: Vec<String> = ["2", "3", "x", "0"].iter().map(|s| s.to_string()).collect();
        let base = RunArgs {
            preset: Some("fig1a-K3".into()),
            t_end: Some(4.0),
            ..Default::default()
        };
        let rows = sweep(&base, SweepParam::Order, &values).unwrap();
        assert_eq!(
            rows.iter()
                .map(|r| r.parameter.as_str())
                .collect::<Vec<_>>(),
            ["2", "3", "x", "0"]
        );
        assert!(rows[0].outcome.as_ref().unwrap().0.diverged());
        assert!(rows[2].outcome.is_err() && rows[3].outcome.is_err());
        assert!(matches!(
            sweep(&base, SweepParam::Order, &[]),
            Err(Error::Input(_))
        ));
        assert_eq!(
            run(&["sweep", "--preset", "fig1a-K3", "--param", "order", "--values", ""]).0,
            exit::INVALID
        );
    }
}
