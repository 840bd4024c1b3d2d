//! Forward-Euler evolution of lifted systems with pivot switching.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linearize::{self, LiftedSystem, Method};
use crate::poly::{PivotState, PolyOde};
use crate::tensor::binomial_lift_transform;

/// Slack used when matching scheduled times against the step grid.
const TIME_EPS: f64 = 1e-9;

/// A scripted or measured pivot switch at a fixed time.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduledSwitch {
    pub time: f64,
    /// Explicit new pivot; `None` means "read out the current state". A single value is
    /// broadcast to every component.
    pub target: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SwitchPolicy {
    Never,
    AtTimes(Vec<ScheduledSwitch>),
    /// Switch every `T` time units.
    Every(f64),
    /// Switch whenever `‖x − s‖∞ > E`.
    Drift(f64),
}

impl SwitchPolicy {
    pub fn at_times(times: &[f64]) -> Self {
        SwitchPolicy::AtTimes(
            times
                .iter()
                .map(|&time| ScheduledSwitch { time, target: None })
                .collect(),
        )
    }

    /// Parses `t=target[;t=target…]`, each target a comma list or a single broadcast value.
    pub fn parse_schedule(text: &str) -> Result<Self> {
        let mut switches = Vec::new();
        for part in text.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (t, target) = part.split_once('=').ok_or_else(|| {
                Error::parse(
                    "pivot schedule",
                    format!("'{part}' is not of the form t=target"),
                )
            })?;
            let time = parse_f64(t, "pivot schedule time")?;
            let target = parse_f64_list(target, "pivot schedule target")?;
            switches.push(ScheduledSwitch {
                time,
                target: Some(target),
            });
        }
        if switches.is_empty() {
            return Err(Error::parse("pivot schedule", "no entries"));
        }
        Ok(SwitchPolicy::AtTimes(switches))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SwitchPolicy::Never => Ok(()),
            SwitchPolicy::AtTimes(list) => {
                if list.iter().any(|s| !s.time.is_finite() || s.time < 0.0) {
                    return Err(Error::input("switch times must be finite and non-negative"));
                }
                if list.windows(2).any(|w| w[1].time <= w[0].time) {
                    return Err(Error::input("switch times must be strictly increasing"));
                }
                Ok(())
            }
            SwitchPolicy::Every(t) if !(t.is_finite() && *t > 0.0) => Err(Error::input(format!(
                "switch interval must be positive, got {t}"
            ))),
            SwitchPolicy::Drift(e) if !(e.is_finite() && *e > 0.0) => Err(Error::input(format!(
                "drift tolerance must be positive, got {e}"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromStr for SwitchPolicy {
    type Err = Error;

    /// `never`, `at:t1,t2,…`, `every:T` or `drift:E`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let policy = match kind.to_ascii_lowercase().as_str() {
            "never" if arg.is_empty() => SwitchPolicy::Never,
            "at" => SwitchPolicy::at_times(&parse_f64_list(arg, "switch times")?),
            "every" => SwitchPolicy::Every(parse_f64(arg, "switch interval")?),
            "drift" => SwitchPolicy::Drift(parse_f64(arg, "drift tolerance")?),
            _ => {
                return Err(Error::parse(
                    "switch policy",
                    format!("'{s}' is not one of never, at:t1,t2, every:T, drift:E"),
                ))
            }
        };
        policy.validate()?;
        Ok(policy)
    }
}

impl fmt::Display for SwitchPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SwitchPolicy::Never => write!(f, "never"),
            SwitchPolicy::AtTimes(list) => {
                let times: Vec<String> = list.iter().map(|s| s.time.to_string()).collect();
                write!(f, "at:{}", times.join(","))
            }
            SwitchPolicy::Every(t) => write!(f, "every:{t}"),
            SwitchPolicy::Drift(e) => write!(f, "drift:{e}"),
        }
    }
}

pub(crate) fn parse_f64(text: &str, what: &str) -> Result<f64> {
    text.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(what, format!("'{}' is not a number", text.trim())))
}

pub(crate) fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(|v| parse_f64(v, what))
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::parse(what, "empty list"));
    }
    Ok(values)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Divergence is declared once `‖x‖∞` exceeds this (or any component is non-finite).
    pub divergence_threshold: f64,
    /// Magnitude `η` of the readout perturbation applied when a pivot is measured.
    pub readout_noise: f64,
    pub rng_seed: u64,
    pub output_stride: usize,
    /// On a switch, carry the evolved higher blocks over to the new pivot instead of re-lifting
    /// from the state estimate.
    pub keep_higher_blocks: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 10.0,
            divergence_threshold: 1e6,
            readout_noise: 0.0,
            rng_seed: 0,
            output_stride: 1,
            keep_higher_blocks: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::input(format!(
                "time step must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::input(format!(
                "horizon must be non-negative, got {}",
                self.t_end
            )));
        }
        if self.divergence_threshold.is_nan() || self.divergence_threshold <= 0.0 {
            return Err(Error::input("divergence threshold must be positive"));
        }
        if !(self.readout_noise.is_finite() && self.readout_noise >= 0.0) {
            return Err(Error::input("readout noise must be non-negative"));
        }
        if self.output_stride == 0 {
            return Err(Error::input("output stride must be at least 1"));
        }
        Ok(())
    }

    /// Number of Euler steps covering `[0, t_end]`.
    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt - TIME_EPS).ceil().max(0.0) as usize
    }

    fn time_at(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// `(time, pivot)` including the initial pivot at `t = 0`; empty for direct solves.
    pub pivots: Vec<(f64, Vec<f64>)>,
    pub switch_events: Vec<f64>,
    /// Time at which the divergence threshold was first exceeded.
    pub divergence: Option<f64>,
}

impl Trajectory {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            ..Default::default()
        }
    }

    fn record(&mut self, t: f64, x: &[f64]) {
        self.times.push(t);
        self.states.push(x.to_vec());
    }

    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Largest `|x_i|` over all recorded samples.
    pub fn max_abs_state(&self) -> f64 {
        self.states
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.states.last().map(Vec::as_slice)
    }

    /// Pivot in effect after time `t` (switches at `t` included).
    pub fn pivot_at(&self, t: f64) -> Option<&[f64]> {
        self.pivots
            .iter()
            .take_while(|(pt, _)| *pt <= t + TIME_EPS)
            .last()
            .map(|(_, s)| s.as_slice())
    }

    /// Writes the trajectory CSV: `t,x0..,s0..,switched`, one row per sample, with a trailing
    /// `# diverged at t=<value>` line when divergence was detected.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.n).map(|i| format!("x{i}")));
        header.extend((0..self.n).map(|i| format!("s{i}")));
        header.push("switched".into());
        w.write_record(&header).map_err(csv_error)?;
        let mut prev_t = f64::NEG_INFINITY;
        for (t, x) in self.times.iter().zip(&self.states) {
            let switched = self
                .switch_events
                .iter()
                .any(|&e| e > prev_t + TIME_EPS && e <= t + TIME_EPS);
            let mut row: Vec<String> = vec![format_float(*t)];
            row.extend(x.iter().map(|&v| format_float(v)));
            match self.pivot_at(*t) {
                Some(s) => row.extend(s.iter().map(|&v| format_float(v))),
                None => row.extend((0..self.n).map(|_| "nan".to_string())),
            }
            row.push(if switched { "1" } else { "0" }.into());
            w.write_record(&row).map_err(csv_error)?;
            prev_t = *t;
        }
        w.flush()?;
        let mut inner = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        if let Some(t) = self.divergence {
            writeln!(inner, "# diverged at t={}", format_float(t))?;
        }
        inner.flush()?;
        Ok(())
    }

    /// Reads a trajectory CSV written by [`Trajectory::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut text = String::new();
        let mut divergence = None;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if let Some(rest) = line.trim().strip_prefix('#') {
                if let Some(t) = rest.trim().strip_prefix("diverged at t=") {
                    divergence = Some(parse_f64(t, &format!("line {}", lineno + 1))?);
                }
                continue;
            }
            text.push_str(&line);
            text.push('\n');
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header = rdr.headers().map_err(csv_error)?.clone();
        let width = header.len();
        if width < 4 || width % 2 != 0 || &header[0] != "t" || &header[width - 1] != "switched" {
            return Err(Error::parse(
                "line 1",
                "expected header t,x0..,s0..,switched",
            ));
        }
        let n = (width - 2) / 2;
        let mut traj = Trajectory::new(n);
        traj.divergence = divergence;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(csv_error)?;
            let loc = format!("line {}", i + 2);
            if rec.len() != width {
                return Err(Error::parse(
                    loc,
                    format!("expected {width} fields, found {}", rec.len()),
                ));
            }
            let vals = rec
                .iter()
                .take(width - 1)
                .map(|f| parse_f64(f, &loc))
                .collect::<Result<Vec<_>>>()?;
            let t = vals[0];
            let x = vals[1..=n].to_vec();
            let s = vals[n + 1..=2 * n].to_vec();
            if let Some(&last) = traj.times.last() {
                if t <= last {
                    return Err(Error::parse(loc, "times must be strictly increasing"));
                }
            }
            if s.iter().all(|v| v.is_finite()) {
                let changed = traj.pivots.last().is_none_or(|(_, prev)| *prev != s);
                if changed {
                    traj.pivots.push((
                        if traj.pivots.is_empty() {
                            t.min(0.0)
                        } else {
                            t
                        },
                        s,
                    ));
                }
            }
            match &rec[width - 1] {
                "1" => traj.switch_events.push(t),
                "0" => {}
                other => {
                    return Err(Error::parse(
                        loc,
                        format!("switched must be 0 or 1, got '{other}'"),
                    ))
                }
            }
            traj.record(t, &x);
        }
        Ok(traj)
    }
}

fn csv_error(e: csv::Error) -> Error {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "csv".into());
    Error::parse(location, e.to_string())
}

/// Shortest round-trip scientific notation; negative zero prints as zero.
pub fn format_float(v: f64) -> String {
    format!("{:e}", v + 0.0)
}

/// `y + dt · A y`.
pub fn euler_step(sys: &LiftedSystem, y: &[f64], dt: f64) -> Result<Vec<f64>> {
    let mut next = y.to_vec();
    let mut scratch = vec![0.0; y.len()];
    euler_step_in_place(sys, &mut next, dt, &mut scratch)?;
    Ok(next)
}

fn euler_step_in_place(
    sys: &LiftedSystem,
    y: &mut [f64],
    dt: f64,
    scratch: &mut [f64],
) -> Result<()> {
    sys.op.apply_into(y, scratch)?;
    for (yi, di) in y.iter_mut().zip(scratch.iter()) {
        *yi += dt * di;
    }
    Ok(())
}

/// Pivot placed from an inexact state estimate: `x_est + η·u`, `u` uniform in `[-1, 1]^n`.
/// With `η = 0` the estimate is returned unchanged and no randomness is consumed.
pub fn readout_pivot<R: Rng + ?Sized>(x_est: &[f64], eta: f64, rng: &mut R) -> Result<PivotState> {
    if eta.is_nan() || eta < 0.0 {
        return Err(Error::input("readout noise must be non-negative"));
    }
    if eta == 0.0 {
        return PivotState::new(x_est.to_vec());
    }
    PivotState::new(
        x_est
            .iter()
            .map(|&v| v + eta * rng.random_range(-1.0..=1.0))
            .collect(),
    )
}

fn exceeds(x: &[f64], threshold: f64) -> bool {
    x.iter().any(|v| !v.is_finite() || v.abs() > threshold)
}

fn broadcast_target(target: &[f64], n: usize) -> Result<Vec<f64>> {
    match target.len() {
        1 => Ok(vec![target[0]; n]),
        len if len == n => Ok(target.to_vec()),
        len => Err(Error::input(format!(
            "pivot target has {len} components, expected 1 or {n}"
        ))),
    }
}

/// Integrates a lifted system with forward Euler, moving the pivot according to `policy`.
///
/// After each step the state estimate is read from block 1. The policy is then consulted; on a
/// switch the new pivot is the scheduled target if one is given, otherwise a readout of the
/// estimate, and the system is rebuilt there. The lifted state is re-embedded from the estimate,
/// or, with `keep_higher_blocks`, transported to the new pivot by the binomial transform.
pub fn run_lifted(
    ode: &PolyOde,
    method: Method,
    order: usize,
    x0: &[f64],
    s0: &PivotState,
    policy: &SwitchPolicy,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    let n = ode.n();
    cfg.validate()?;
    policy.validate()?;
    if x0.len() != n || s0.as_slice().len() != n {
        return Err(Error::input(format!(
            "initial state and pivot must have dimension {n}"
        )));
    }
    if method == Method::Carleman && *policy != SwitchPolicy::Never {
        return Err(Error::input(
            "Carleman linearization has no pivot to switch",
        ));
    }
    let schedule: Vec<(f64, Option<Vec<f64>>)> = match policy {
        SwitchPolicy::AtTimes(list) => list
            .iter()
            .map(|s| {
                Ok((
                    s.time,
                    s.target
                        .as_deref()
                        .map(|t| broadcast_target(t, n))
                        .transpose()?,
                ))
            })
            .collect::<Result<_>>()?,
        _ => Vec::new(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut sys = linearize::build(ode, method, order, s0)?;
    let mut y = linearize::lift_state(x0, &sys)?;
    let mut scratch = vec![0.0; y.len()];

    let mut traj = Trajectory::new(n);
    traj.pivots.push((0.0, sys.pivot.as_slice().to_vec()));
    traj.record(0.0, x0);
    if exceeds(x0, cfg.divergence_threshold) {
        traj.divergence = Some(0.0);
        return Ok(traj);
    }

    let mut next_scheduled = 0;
    let mut next_periodic = 1usize;
    for step in 1..=cfg.num_steps() {
        euler_step_in_place(&sys, &mut y, cfg.dt, &mut scratch)?;
        let t = cfg.time_at(step);
        let x = linearize::read_x(&y, &sys)?;
        if exceeds(&x, cfg.divergence_threshold) {
            traj.divergence = Some(t);
            break;
        }

        let switch: Option<Option<Vec<f64>>> = match policy {
            SwitchPolicy::Never => None,
            SwitchPolicy::AtTimes(_) => {
                let mut due = None;
                while next_scheduled < schedule.len() && schedule[next_scheduled].0 <= t + TIME_EPS
                {
                    due = Some(schedule[next_scheduled].1.clone());
                    next_scheduled += 1;
                }
                due
            }
            SwitchPolicy::Every(period) => {
                let mut due = None;
                while next_periodic as f64 * period <= t + TIME_EPS {
                    due = Some(None);
                    next_periodic += 1;
                }
                due
            }
            SwitchPolicy::Drift(tol) => {
                let drift = x
                    .iter()
                    .zip(sys.pivot.as_slice())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                (drift > *tol).then_some(None)
            }
        };

        if let Some(target) = switch {
            let new_pivot = match target {
                Some(s) => PivotState::new(s)?,
                None => readout_pivot(&x, cfg.readout_noise, &mut rng)?,
            };
            let old_pivot = sys.pivot.clone();
            sys = linearize::build(ode, method, order, &new_pivot)?;
            y = if cfg.keep_higher_blocks && method == Method::Psc {
                let shift: Vec<f64> = new_pivot
                    .as_slice()
                    .iter()
                    .zip(old_pivot.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                binomial_lift_transform(&shift, order)?.apply(&y)?
            } else {
                linearize::lift_state(&x, &sys)?
            };
            traj.pivots.push((t, new_pivot.into_inner()));
            traj.switch_events.push(t);
        }

        if step % cfg.output_stride == 0 {
            traj.record(t, &x);
        }
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Euler,
    /// Classical fourth-order Runge–Kutta.
    Rk4,
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Ok(Scheme::Euler),
            "rk4" => Ok(Scheme::Rk4),
            other => Err(Error::input(format!(
                "unknown integration scheme '{other}'"
            ))),
        }
    }
}

/// Direct time stepping of the nonlinear field, with the same sampling and divergence rules as
/// [`run_lifted`].
pub fn reference_solve(
    ode: &PolyOde,
    x0: &[f64],
    cfg: &SimConfig,
    scheme: Scheme,
) -> Result<Trajectory> {
    cfg.validate()?;
    let n = ode.n();
    if x0.len() != n {
        return Err(Error::input(format!(
            "initial state must have dimension {n}"
        )));
    }
    let dt = cfg.dt;
    let axpy = |x: &[f64], k: &[f64], h: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(a, b)| a + h * b).collect()
    };
    let mut traj = Trajectory::new(n);
    let mut x = x0.to_vec();
    traj.record(0.0, &x);
    for step in 1..=cfg.num_steps() {
        x = match scheme {
            Scheme::Euler => axpy(&x, &ode.eval_rhs(&x)?, dt),
            Scheme::Rk4 => {
                let k1 = ode.eval_rhs(&x)?;
                let k2 = ode.eval_rhs(&axpy(&x, &k1, dt / 2.0))?;
                let k3 = ode.eval_rhs(&axpy(&x, &k2, dt / 2.0))?;
                let k4 = ode.eval_rhs(&axpy(&x, &k3, dt))?;
                (0..n)
                    .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                    .collect()
            }
        };
        let t = cfg.time_at(step);
        if exceeds(&x, cfg.divergence_threshold) {
            traj.divergence = Some(t);
            break;
        }
        if step % cfg.output_stride == 0 {
            traj.record(t, &x);
        }
    }
    Ok(traj)
}

/// Samples a closed-form solution on the configured grid.
pub fn sample_solution(
    n: usize,
    cfg: &SimConfig,
    solution: impl Fn(f64) -> Vec<f64>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut traj = Trajectory::new(n);
    for step in (0..=cfg.num_steps()).step_by(cfg.output_stride) {
        let t = cfg.time_at(step);
        traj.record(t, &solution(t));
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    /// `max_t ‖x_a(t) − x_b(t)‖∞`
    pub max_abs: f64,
    /// Root mean square over all compared samples and components.
    pub rms: f64,
    pub t_at_max: f64,
    pub samples: usize,
}

impl fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "max_abs={} rms={} t_at_max={}",
            format_float(self.max_abs),
            format_float(self.rms),
            format_float(self.t_at_max)
        )
    }
}

/// Compares two trajectories on `a`'s sample times within the common time range, matching each
/// to the nearest sample of `b`. A trajectory that diverged has unbounded error: the report then
/// carries infinite metrics located at the earliest divergence time.
pub fn compare(a: &Trajectory, b: &Trajectory) -> Result<ErrorReport> {
    if a.n != b.n {
        return Err(Error::input(format!(
            "trajectories have different dimensions ({} vs {})",
            a.n, b.n
        )));
    }
    let (Some(&a0), Some(&a1), Some(&b0), Some(&b1)) = (
        a.times.first(),
        a.times.last(),
        b.times.first(),
        b.times.last(),
    ) else {
        return Err(Error::input("cannot compare an empty trajectory"));
    };
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    if lo > hi + TIME_EPS {
        return Err(Error::input(format!(
            "time ranges [{a0}, {a1}] and [{b0}, {b1}] do not overlap"
        )));
    }
    if let Some(t) = [a.divergence, b.divergence]
        .into_iter()
        .flatten()
        .reduce(f64::min)
    {
        return Ok(ErrorReport {
            max_abs: f64::INFINITY,
            rms: f64::INFINITY,
            t_at_max: t,
            samples: 0,
        });
    }
    let mut max_abs = 0.0f64;
    let mut t_at_max = lo;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut samples = 0usize;
    for (t, xa) in a.times.iter().zip(&a.states) {
        if *t < lo - TIME_EPS || *t > hi + TIME_EPS {
            continue;
        }
        let j = nearest(&b.times, *t);
        let err = xa
            .iter()
            .zip(&b.states[j])
            .map(|(p, q)| {
                let d = p - q;
                sum_sq += d * d;
                count += 1;
                d.abs()
            })
            .fold(0.0f64, f64::max);
        if err > max_abs {
            max_abs = err;
            t_at_max = *t;
        }
        samples += 1;
    }
    Ok(ErrorReport {
        max_abs,
        rms: if count > 0 {
            (sum_sq / count as f64).sqrt()
        } else {
            0.0
        },
        t_at_max,
        samples,
    })
}

fn nearest(times: &[f64], t: f64) -> usize {
    match times.binary_search_by(|probe| probe.total_cmp(&t)) {
        Ok(i) => i,
        Err(0) => 0,
        Err(i) if i == times.len() => i - 1,
        Err(i) => {
            if (times[i] - t).abs() < (t - times[i - 1]).abs() {
                i
            } else {
                i - 1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::{build_carleman, build_ps};
    use crate::models::{self, logistic_analytic};

    fn logistic() -> PolyOde {
        models::build_logistic().ode
    }

    fn pivot(v: &[f64]) -> PivotState {
        PivotState::new(v.to_vec()).unwrap()
    }

    fn cfg(t_end: f64) -> SimConfig {
        SimConfig {
            t_end,
            divergence_threshold: models::BUILTIN_DIVERGENCE_BOUND,
            ..SimConfig::default()
        }
    }

    #[test]
    fn euler_step_examples() {
        let zero = build_carleman(&PolyOde::zero(1, 2).unwrap(), 2).unwrap();
        assert_eq!(
            euler_step(&zero, &[1.0, 0.3, 0.09], 0.01).unwrap(),
            vec![1.0, 0.3, 0.09]
        );

        // dx/dt = x as the order-1 Carleman lifting of a linear field.
        let linear = PolyOde::new(1, 1, [crate::poly::PolyTerm::new(0, vec![0], 1.0)]).unwrap();
        let sys = build_carleman(&linear, 1).unwrap();
        assert_eq!(
            euler_step(&sys, &[1.0, 1.0], 0.01).unwrap(),
            vec![1.0, 1.01]
        );

        let ps = build_ps(&logistic(), &pivot(&[0.4])).unwrap();
        let mut y = vec![1.0, 0.1];
        for _ in 0..100 {
            y = euler_step(&ps, &y, 0.01).unwrap();
            assert_eq!(y[0], 1.0);
        }
    }

    #[test]
    fn num_steps_covers_the_horizon() {
        assert_eq!(cfg(10.0).num_steps(), 1000);
        assert_eq!(cfg(0.0).num_steps(), 0);
        assert_eq!(
            SimConfig {
                dt: 0.3,
                ..cfg(1.0)
            }
            .num_steps(),
            4
        );
    }

    #[test]
    fn policy_parsing() {
        assert_eq!(
            "never".parse::<SwitchPolicy>().unwrap(),
            SwitchPolicy::Never
        );
        assert_eq!(
            "every:0.5".parse::<SwitchPolicy>().unwrap(),
            SwitchPolicy::Every(0.5)
        );
        assert_eq!(
            "drift:0.1".parse::<SwitchPolicy>().unwrap(),
            SwitchPolicy::Drift(0.1)
        );
        assert_eq!(
            "at:1,2.5".parse::<SwitchPolicy>().unwrap(),
            SwitchPolicy::at_times(&[1.0, 2.5])
        );
        assert!("every:0".parse::<SwitchPolicy>().is_err());
        assert!("drift:-1".parse::<SwitchPolicy>().is_err());
        assert!("at:2,1".parse::<SwitchPolicy>().is_err());
        assert!("sometimes".parse::<SwitchPolicy>().is_err());

        let sched = SwitchPolicy::parse_schedule("1=1; 2.9=-1,0").unwrap();
        assert_eq!(
            sched,
            SwitchPolicy::AtTimes(vec![
                ScheduledSwitch {
                    time: 1.0,
                    target: Some(vec![1.0])
                },
                ScheduledSwitch {
                    time: 2.9,
                    target: Some(vec![-1.0, 0.0])
                },
            ])
        );
        assert!(SwitchPolicy::parse_schedule("1").is_err());
    }

    #[test]
    fn readout_noise_is_bounded_and_seeded() {
        let x = [0.3, -0.7, 1.2];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(readout_pivot(&x, 0.0, &mut rng).unwrap().as_slice(), &x);
        let a = readout_pivot(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = readout_pivot(&x, 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert!(a
            .as_slice()
            .iter()
            .zip(&x)
            .all(|(p, q)| (p - q).abs() <= 0.1));
        assert_ne!(a.as_slice(), &x);
        assert!(readout_pivot(&x, -0.1, &mut rng).is_err());
    }

    #[test]
    fn carleman_logistic_diverges_in_window() {
        let ode = logistic();
        let traj = run_lifted(
            &ode,
            Method::Carleman,
            3,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::Never,
            &cfg(4.0),
        )
        .unwrap();
        let t = traj.divergence.expect("Carleman K=3 must diverge");
        assert!((1.5..=3.5).contains(&t), "diverged at {t}");
        assert!(traj.times.last().unwrap() < &t);
    }

    #[test]
    fn carleman_rejects_switching() {
        let err = run_lifted(
            &logistic(),
            Method::Carleman,
            3,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::Every(1.0),
            &cfg(1.0),
        );
        assert!(matches!(err, Err(Error::Input(_))));
        let err = run_lifted(
            &logistic(),
            Method::Ps,
            1,
            &[0.1],
            &pivot(&[0.1]),
            &SwitchPolicy::Drift(0.0),
            &cfg(1.0),
        );
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn ideal_ps_tracks_the_analytic_solution() {
        let c = cfg(10.0);
        let traj = run_lifted(
            &logistic(),
            Method::Ps,
            1,
            &[0.1],
            &pivot(&[0.1]),
            &SwitchPolicy::Every(c.dt),
            &c,
        )
        .unwrap();
        assert!(!traj.diverged());
        let worst = traj
            .times
            .iter()
            .zip(&traj.states)
            .map(|(t, x)| (x[0] - logistic_analytic(0.1, *t)).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 5e-3, "{worst}");
        assert_eq!(traj.switch_events.len(), 1000);
    }

    #[test]
    fn ideal_ps_reproduces_direct_euler() {
        let c = cfg(10.0);
        let ps = run_lifted(
            &logistic(),
            Method::Ps,
            1,
            &[0.1],
            &pivot(&[0.1]),
            &SwitchPolicy::Every(c.dt),
            &c,
        )
        .unwrap();
        let reference = reference_solve(&logistic(), &[0.1], &c, Scheme::Euler).unwrap();
        let report = compare(&ps, &reference).unwrap();
        assert!(report.max_abs <= 1e-9, "{report}");
        assert_eq!(report.samples, 1001);
    }

    #[test]
    fn scripted_psc_switch_reaches_the_fixed_point() {
        let traj = run_lifted(
            &logistic(),
            Method::Psc,
            5,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::parse_schedule("1=1").unwrap(),
            &cfg(10.0),
        )
        .unwrap();
        assert!(!traj.diverged());
        assert_eq!(traj.switch_events, vec![1.0]);
        assert_eq!(traj.pivots, vec![(0.0, vec![0.0]), (1.0, vec![1.0])]);
        assert!((traj.final_state().unwrap()[0] - 1.0).abs() <= 0.05);
    }

    #[test]
    fn drift_policy_keeps_the_pivot_close() {
        let tol = 0.05;
        let c = cfg(10.0);
        let traj = run_lifted(
            &logistic(),
            Method::Ps,
            1,
            &[0.1],
            &pivot(&[0.1]),
            &SwitchPolicy::Drift(tol),
            &c,
        )
        .unwrap();
        assert!(!traj.switch_events.is_empty());
        for (t, x) in traj.times.iter().zip(&traj.states) {
            let s = traj.pivot_at(*t).unwrap();
            // A switch happens on the first step beyond tol, so the drift never exceeds tol by
            // more than one step's worth of motion.
            assert!((x[0] - s[0]).abs() <= tol + c.dt * 0.25 + 1e-12);
        }
    }

    #[test]
    fn switching_is_continuous_without_readout_noise() {
        let ode = models::build_kpp(8).unwrap();
        let c = SimConfig {
            t_end: 2.0,
            ..cfg(2.0)
        };
        let traj = run_lifted(
            &ode.ode,
            Method::Psc,
            3,
            &ode.default_x0,
            &pivot(&ode.default_x0),
            &SwitchPolicy::Every(0.5),
            &c,
        )
        .unwrap();
        // Sample i is the estimate used for the switch; sample i+1 continues from the re-lifted
        // state, so the jump across a switch is one ordinary Euler increment.
        for &ts in &traj.switch_events {
            let i = traj
                .times
                .iter()
                .position(|&t| (t - ts).abs() < 1e-12)
                .unwrap();
            let s = traj.pivot_at(ts).unwrap();
            assert_eq!(s, traj.states[i].as_slice());
        }
    }

    #[test]
    fn keep_higher_blocks_mode_matches_relift_for_exact_relift() {
        // With η = 0 the pivot lands exactly on the estimate, so transporting the evolved blocks
        // differs from re-lifting only through the higher-block drift; both must stay bounded
        // and close.
        let base = cfg(10.0);
        let keep = SimConfig {
            keep_higher_blocks: true,
            ..base.clone()
        };
        let policy = SwitchPolicy::Every(1.0);
        let a = run_lifted(
            &logistic(),
            Method::Psc,
            3,
            &[0.1],
            &pivot(&[0.1]),
            &policy,
            &base,
        )
        .unwrap();
        let b = run_lifted(
            &logistic(),
            Method::Psc,
            3,
            &[0.1],
            &pivot(&[0.1]),
            &policy,
            &keep,
        )
        .unwrap();
        assert!(!a.diverged() && !b.diverged());
        assert!(compare(&a, &b).unwrap().max_abs < 0.05);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = SimConfig {
            readout_noise: 0.05,
            rng_seed: 77,
            ..cfg(5.0)
        };
        let run = || {
            run_lifted(
                &logistic(),
                Method::Psc,
                3,
                &[0.1],
                &pivot(&[0.1]),
                &SwitchPolicy::Every(0.5),
                &c,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        let bits = |t: &Trajectory| {
            t.states
                .iter()
                .flatten()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn reference_solvers_match_the_closed_form() {
        let c = cfg(10.0);
        let analytic = sample_solution(1, &c, |t| vec![logistic_analytic(0.1, t)]).unwrap();
        let euler = reference_solve(&logistic(), &[0.1], &c, Scheme::Euler).unwrap();
        let rk4 = reference_solve(&logistic(), &[0.1], &c, Scheme::Rk4).unwrap();
        assert!(compare(&euler, &analytic).unwrap().max_abs <= 5e-3);
        assert!(compare(&rk4, &analytic).unwrap().max_abs <= 1e-9);
    }

    #[test]
    fn kpp_reference_rises_to_one() {
        let m = models::build_kpp(8).unwrap();
        let traj = reference_solve(&m.ode, &m.default_x0, &cfg(10.0), Scheme::Euler).unwrap();
        // The two initially high sites first spread into their neighbours, then every site rises:
        // each component has a single minimum after which it never decreases.
        for i in 0..8 {
            let path: Vec<f64> = traj.states.iter().map(|x| x[i]).collect();
            let lowest = (0..path.len())
                .min_by(|&a, &b| path[a].total_cmp(&path[b]))
                .unwrap();
            assert!(
                path[..=lowest].windows(2).all(|w| w[1] <= w[0] + 1e-12),
                "site {i}"
            );
            assert!(
                path[lowest..].windows(2).all(|w| w[1] >= w[0] - 1e-12),
                "site {i}"
            );
            if m.default_x0[i] < 0.5 {
                assert_eq!(lowest, 0, "site {i}");
            }
        }
        assert!(traj
            .states
            .iter()
            .flatten()
            .all(|&v| (0.0..=1.001).contains(&v)));
        assert!(traj.final_state().unwrap().iter().all(|&v| v > 0.99));
    }

    #[test]
    fn phase_field_reference_relaxes_to_minus_one() {
        let m = models::build_phase_field(8, -0.2).unwrap();
        let traj = reference_solve(&m.ode, &m.default_x0, &cfg(10.0), Scheme::Euler).unwrap();
        assert!(traj
            .final_state()
            .unwrap()
            .iter()
            .all(|&v| (v + 1.0).abs() < 1e-2));
    }

    #[test]
    fn compare_metrics() {
        let c = cfg(1.0);
        let a = sample_solution(2, &c, |t| vec![t, -t]).unwrap();
        let zero = compare(&a, &a).unwrap();
        assert_eq!((zero.max_abs, zero.rms), (0.0, 0.0));
        let b = sample_solution(2, &c, |t| vec![t + 0.25, -t + 0.25]).unwrap();
        let r = compare(&a, &b).unwrap();
        assert!((r.max_abs - 0.25).abs() < 1e-15);
        assert!((r.rms - 0.25).abs() < 1e-15);

        let coarse = sample_solution(
            2,
            &SimConfig {
                output_stride: 10,
                ..c.clone()
            },
            |t| vec![t, -t],
        )
        .unwrap();
        assert!(compare(&coarse, &a).unwrap().max_abs < 1e-12);

        let late = sample_solution(2, &c, |t| vec![t, -t]).map(|mut tr| {
            tr.times.iter_mut().for_each(|t| *t += 5.0);
            tr
        });
        assert!(matches!(compare(&a, &late.unwrap()), Err(Error::Input(_))));
    }

    #[test]
    fn compare_reports_divergence_as_unbounded() {
        let c = cfg(4.0);
        let carl = run_lifted(
            &logistic(),
            Method::Carleman,
            3,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::Never,
            &c,
        )
        .unwrap();
        let reference = reference_solve(&logistic(), &[0.1], &c, Scheme::Euler).unwrap();
        let r = compare(&carl, &reference).unwrap();
        assert!(r.max_abs.is_infinite());
        assert_eq!(Some(r.t_at_max), carl.divergence);
    }

    #[test]
    fn csv_round_trip() {
        let c = SimConfig {
            output_stride: 10,
            ..cfg(4.0)
        };
        let traj = run_lifted(
            &logistic(),
            Method::Psc,
            3,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::parse_schedule("1=1").unwrap(),
            &c,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x0,s0,switched\n"));
        let back = Trajectory::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.times, traj.times);
        assert_eq!(back.states, traj.states);
        assert_eq!(back.switch_events, traj.switch_events);
        assert_eq!(back.pivots, traj.pivots);

        let carl = run_lifted(
            &logistic(),
            Method::Carleman,
            3,
            &[0.1],
            &PivotState::zeros(1),
            &SwitchPolicy::Never,
            &c,
        )
        .unwrap();
        let mut buf = Vec::new();
        carl.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text
            .trim_end()
            .lines()
            .last()
            .unwrap()
            .starts_with("# diverged at t="));
        assert_eq!(
            Trajectory::read_csv(buf.as_slice()).unwrap().divergence,
            carl.divergence
        );
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(Trajectory::read_csv("t,x0\n0,1\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,x0,s0,switched\n0,abc,0,0\n".as_bytes()).is_err());
        assert!(Trajectory::read_csv("t,x0,s0,switched\n0,1,0,2\n".as_bytes()).is_err());
    }
}
