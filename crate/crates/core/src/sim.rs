//! Fixed-step simulation of `ẋ = (A − BK)x + B(u₀ + ζ(x, t))`, cost
//! evaluation, and input-to-state stability envelopes.
//!
//! Integration is classical 4-stage Runge–Kutta. When requested, the
//! running integrals `∫x⊗x`, `∫x⊗u` and `∫x⊗ζ` are carried as extra states
//! of the same integrator, so the learner's data windows need no
//! interpolation between nodes.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{ensure_shape, expm, kron_vec, norm2, spectral_abscissa};
use crate::model::LtiSystem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sinusoid {
    pub amplitude: f64,
    /// rad/s
    pub omega: f64,
    /// rad
    pub phase: f64,
}

impl Sinusoid {
    pub fn eval(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t + self.phase).sin()
    }
}

/// Probing input `u₀(t)`: per channel, a sum of sinusoids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSignal {
    channels: Vec<Vec<Sinusoid>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorationSettings {
    pub sinusoids_per_channel: usize,
    pub amplitude: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for ExplorationSettings {
    fn default() -> Self {
        Self {
            sinusoids_per_channel: 10,
            amplitude: 0.5,
            omega_min: 0.5,
            omega_max: 100.0,
        }
    }
}

impl ExplorationSignal {
    pub fn new(channels: Vec<Vec<Sinusoid>>) -> Self {
        Self { channels }
    }

    pub fn silent(inputs: usize) -> Self {
        Self {
            channels: vec![Vec::new(); inputs],
        }
    }

    /// Frequencies uniform in `[omega_min, omega_max]`, pairwise distinct
    /// across all channels, with uniform random phases.
    pub fn seeded(inputs: usize, settings: &ExplorationSettings, seed: u64) -> Result<Self> {
        let ExplorationSettings {
            sinusoids_per_channel,
            amplitude,
            omega_min,
            omega_max,
        } = *settings;
        if !(omega_min > 0.0 && omega_max > omega_min) || !amplitude.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "exploration band [{omega_min}, {omega_max}] / amplitude {amplitude}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used: Vec<f64> = Vec::new();
        let min_sep = 1e-3 * (omega_max - omega_min) / (inputs * sinusoids_per_channel).max(1) as f64;
        let mut channels = Vec::with_capacity(inputs);
        for _ in 0..inputs {
            let mut ch = Vec::with_capacity(sinusoids_per_channel);
            while ch.len() < sinusoids_per_channel {
                let omega = rng.random_range(omega_min..=omega_max);
                if used.iter().any(|w| (w - omega).abs() < min_sep) {
                    continue;
                }
                used.push(omega);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                ch.push(Sinusoid {
                    amplitude,
                    omega,
                    phase,
                });
            }
            channels.push(ch);
        }
        Ok(Self { channels })
    }

    pub fn inputs(&self) -> usize {
        self.channels.len()
    }

    pub fn channels(&self) -> &[Vec<Sinusoid>] {
        &self.channels
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.channels.len(),
            self.channels.iter().map(|ch| ch.iter().map(|s| s.eval(t)).sum()),
        )
    }

    /// `Σ|aⱼ|` per channel.
    pub fn amplitude_bound(&self) -> Vec<f64> {
        self.channels
            .iter()
            .map(|ch| ch.iter().map(|s| s.amplitude.abs()).sum())
            .collect()
    }
}

type GainSchedule = Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>;

/// Exogenous input `ζ(x, t) = l(t) x` with declared bound `‖l(t)‖₂ ≤ α`.
#[derive(Clone)]
pub enum ExoModel {
    None,
    /// `ζ = c sin(t) x`; needs as many inputs as states.
    ScalarSinusoid { c: f64, alpha: f64 },
    Schedule { schedule: GainSchedule, alpha: f64 },
}

impl fmt::Debug for ExoModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExoModel::None => write!(f, "ExoModel::None"),
            ExoModel::ScalarSinusoid { c, alpha } => {
                write!(f, "ExoModel::ScalarSinusoid {{ c: {c}, alpha: {alpha} }}")
            }
            ExoModel::Schedule { alpha, .. } => write!(f, "ExoModel::Schedule {{ alpha: {alpha} }}"),
        }
    }
}

/// Slack on the exogenous-input bound check.
const EXO_BOUND_SLACK: f64 = 1e-12;

impl ExoModel {
    pub fn scalar_sinusoid(c: f64, alpha: f64) -> Result<Self> {
        if !(c.abs() <= alpha) {
            return Err(Error::InvalidConfig(format!(
                "|c| = {} exceeds the declared bound alpha = {alpha}",
                c.abs()
            )));
        }
        Ok(ExoModel::ScalarSinusoid { c, alpha })
    }

    /// `ζ = sin(ωt + φ) G x`.
    pub fn sinusoidal_gain(gain: DMatrix<f64>, omega: f64, phase: f64, alpha: f64) -> Result<Self> {
        let norm = norm2(&gain);
        if norm > alpha {
            return Err(Error::InvalidConfig(format!(
                "|G| = {norm} exceeds the declared bound alpha = {alpha}"
            )));
        }
        Ok(ExoModel::Schedule {
            schedule: Arc::new(move |t| &gain * (omega * t + phase).sin()),
            alpha,
        })
    }

    pub fn schedule(
        schedule: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        alpha: f64,
    ) -> Self {
        ExoModel::Schedule {
            schedule: Arc::new(schedule),
            alpha,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            ExoModel::None => 0.0,
            ExoModel::ScalarSinusoid { alpha, .. } | ExoModel::Schedule { alpha, .. } => *alpha,
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ExoModel::None)
    }

    pub fn eval(&self, x: &DVector<f64>, t: f64, inputs: usize) -> Result<DVector<f64>> {
        let zeta = match self {
            ExoModel::None => return Ok(DVector::zeros(inputs)),
            ExoModel::ScalarSinusoid { c, .. } => {
                if x.len() != inputs {
                    return Err(Error::ShapeMismatch(format!(
                        "scalar-sinusoid exogenous input needs m = n, got m = {inputs}, n = {}",
                        x.len()
                    )));
                }
                x * (c * t.sin())
            }
            ExoModel::Schedule { schedule, .. } => {
                let l = schedule(t);
                ensure_shape(&l, inputs, x.len(), "exogenous gain l(t)")?;
                l * x
            }
        };
        let alpha = self.alpha();
        let xn = x.norm();
        let zn = zeta.norm();
        if zn > alpha * xn + EXO_BOUND_SLACK {
            return Err(Error::ExoBoundViolated {
                t,
                ratio: if xn > 0.0 { zn / xn } else { f64::INFINITY },
                alpha,
            });
        }
        Ok(zeta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: DVector<f64>,
    pub u0: DVector<f64>,
    pub zeta: DVector<f64>,
    pub u_fb: DVector<f64>,
}

impl Sample {
    /// Total control input actually applied, `u₀ + u_fb`.
    pub fn applied_input(&self) -> DVector<f64> {
        &self.u0 + &self.u_fb
    }
}

/// Running integrals from the first node up to a node.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningIntegrals {
    /// `∫ x⊗x`, length n²
    pub xx: DVector<f64>,
    /// `∫ x⊗u` with `u` the applied input, length nm
    pub xu: DVector<f64>,
    /// `∫ x⊗ζ`, length nm
    pub xzeta: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
    pub integrals: Option<Vec<RunningIntegrals>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn states(&self) -> usize {
        self.samples.first().map_or(0, |s| s.x.len())
    }

    pub fn inputs(&self) -> usize {
        self.samples.first().map_or(0, |s| s.u0.len())
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn end_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    pub fn initial_state(&self) -> Option<&DVector<f64>> {
        self.samples.first().map(|s| &s.x)
    }

    pub fn final_state(&self) -> Option<&DVector<f64>> {
        self.samples.last().map(|s| &s.x)
    }

    /// Writes `t,x1..xn,u01..u0m,zeta1..zetam,ufb1..ufbm` with 15
    /// significant digits.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let n = self.states();
        let m = self.inputs();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u0{i}")));
        header.extend((1..=m).map(|i| format!("zeta{i}")));
        header.extend((1..=m).map(|i| format!("ufb{i}")));
        w.write_record(&header)?;
        for s in &self.samples {
            let mut row = Vec::with_capacity(1 + n + 3 * m);
            row.push(format_sig15(s.t));
            for v in s.x.iter().chain(&s.u0).chain(&s.zeta).chain(&s.u_fb) {
                row.push(format_sig15(*v));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format written by [`Trajectory::write_csv`]. Running
    /// integrals are not part of the file.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let count = |prefix: &str| {
            header
                .iter()
                .filter(|h| {
                    h.strip_prefix(prefix)
                        .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
                })
                .count()
        };
        // "u01" also matches the "u0" prefix only; x-prefix never overlaps
        let n = count("x");
        let m = count("zeta");
        if header.get(0) != Some("t") || n == 0 || m == 0 || header.len() != 1 + n + 3 * m {
            return Err(Error::TrajectoryFormat(format!(
                "unexpected header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut samples = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::TrajectoryFormat(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<_>>()?;
            if vals.len() != 1 + n + 3 * m || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrajectoryFormat(format!(
                    "row {} malformed",
                    samples.len() + 1
                )));
            }
            let slice = |from: usize, len: usize| DVector::from_column_slice(&vals[from..from + len]);
            samples.push(Sample {
                t: vals[0],
                x: slice(1, n),
                u0: slice(1 + n, m),
                zeta: slice(1 + n + m, m),
                u_fb: slice(1 + n + 2 * m, m),
            });
        }
        if samples.len() < 2 {
            return Err(Error::TrajectoryFormat("need at least two samples".into()));
        }
        let dt = samples[1].t - samples[0].t;
        if dt <= 0.0 {
            return Err(Error::TrajectoryFormat("time must increase".into()));
        }
        for (k, w) in samples.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - dt).abs() > 1e-9 * dt.max(w[1].t.abs()) {
                return Err(Error::TrajectoryFormat(format!(
                    "non-uniform spacing at row {}",
                    k + 2
                )));
            }
        }
        Ok(Self {
            dt,
            samples,
            integrals: None,
        })
    }
}

/// `%.15g`-style formatting.
pub fn format_sig15(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.14e}");
    let (mant, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if (-5..15).contains(&exp) {
        let decimals = (14 - exp).max(0) as usize;
        trim_fraction(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_fraction(mant.to_string()))
    }
}

fn trim_fraction(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub t_end: f64,
    pub dt: f64,
    pub blowup_threshold: f64,
    pub record_integrals: bool,
    /// Integrator steps per recorded sample.
    pub substeps: usize,
}

impl SimConfig {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            blowup_threshold: 1e9,
            record_integrals: false,
            substeps: 1,
        }
    }

    pub fn with_substeps(mut self, substeps: usize) -> Self {
        self.substeps = substeps;
        self
    }

    pub fn with_integrals(mut self) -> Self {
        self.record_integrals = true;
        self
    }
}

struct Dynamics<'a> {
    system: &'a LtiSystem,
    gain: Option<&'a DMatrix<f64>>,
    exploration: &'a ExplorationSignal,
    exo: &'a ExoModel,
    record: bool,
}

struct Signals {
    u0: DVector<f64>,
    zeta: DVector<f64>,
    u_fb: DVector<f64>,
}

impl Dynamics<'_> {
    fn signals(&self, x: &DVector<f64>, t: f64) -> Result<Signals> {
        let m = self.system.inputs();
        let u0 = self.exploration.eval(t);
        let u_fb = match self.gain {
            Some(k) => -(k * x),
            None => DVector::zeros(m),
        };
        let zeta = self.exo.eval(x, t, m)?;
        Ok(Signals { u0, zeta, u_fb })
    }

    fn rhs(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.system.states();
        let m = self.system.inputs();
        let x = y.rows(0, n).into_owned();
        let s = self.signals(&x, t)?;
        let u = &s.u0 + &s.u_fb;
        let xdot = self.system.a() * &x + self.system.b() * (&u + &s.zeta);
        if !self.record {
            return Ok(xdot);
        }
        let mut out = DVector::zeros(y.len());
        out.rows_mut(0, n).copy_from(&xdot);
        out.rows_mut(n, n * n).copy_from(&kron_vec(&x, &x));
        out.rows_mut(n + n * n, n * m).copy_from(&kron_vec(&x, &u));
        out.rows_mut(n + n * n + n * m, n * m)
            .copy_from(&kron_vec(&x, &s.zeta));
        Ok(out)
    }
}

/// Integrates from `x0` at `t = 0` to `t_end` with fixed step `dt`.
pub fn simulate(
    system: &LtiSystem,
    gain: Option<&DMatrix<f64>>,
    exploration: &ExplorationSignal,
    exo: &ExoModel,
    x0: &DVector<f64>,
    config: &SimConfig,
) -> Result<Trajectory> {
    let n = system.states();
    let m = system.inputs();
    let SimConfig {
        t_end,
        dt,
        blowup_threshold,
        record_integrals,
        substeps,
    } = *config;
    if substeps == 0 {
        return Err(Error::InvalidConfig("substeps must be at least 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= dt) {
        return Err(Error::InvalidConfig(format!(
            "need dt > 0 and t_end >= dt, got dt = {dt}, t_end = {t_end}"
        )));
    }
    if x0.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "x0 has length {}, system has {n} states",
            x0.len()
        )));
    }
    if let Some(k) = gain {
        ensure_shape(k, m, n, "feedback gain")?;
    }
    if exploration.inputs() != m {
        return Err(Error::ShapeMismatch(format!(
            "exploration has {} channels, system has {m} inputs",
            exploration.inputs()
        )));
    }
    let dynamics = Dynamics {
        system,
        gain,
        exploration,
        exo,
        record: record_integrals,
    };
    let steps = (t_end / dt).round() as usize;
    let extra = if record_integrals { n * n + 2 * n * m } else { 0 };
    let mut y = DVector::zeros(n + extra);
    y.rows_mut(0, n).copy_from(x0);

    let mut samples = Vec::with_capacity(steps + 1);
    let mut integrals = record_integrals.then(|| Vec::with_capacity(steps + 1));
    let mut record = |t: f64, y: &DVector<f64>| -> Result<()> {
        let x = y.rows(0, n).into_owned();
        let s = dynamics.signals(&x, t)?;
        if let Some(ints) = integrals.as_mut() {
            ints.push(RunningIntegrals {
                xx: y.rows(n, n * n).into_owned(),
                xu: y.rows(n + n * n, n * m).into_owned(),
                xzeta: y.rows(n + n * n + n * m, n * m).into_owned(),
            });
        }
        samples.push(Sample {
            t,
            x,
            u0: s.u0,
            zeta: s.zeta,
            u_fb: s.u_fb,
        });
        Ok(())
    };
    record(0.0, &y)?;
    let h = dt / substeps as f64;
    for k in 0..steps {
        for s in 0..substeps {
            let t = k as f64 * dt + s as f64 * h;
            let k1 = dynamics.rhs(t, &y)?;
            let k2 = dynamics.rhs(t + 0.5 * h, &(&y + &k1 * (0.5 * h)))?;
            let k3 = dynamics.rhs(t + 0.5 * h, &(&y + &k2 * (0.5 * h)))?;
            let k4 = dynamics.rhs(t + h, &(&y + &k3 * h))?;
            y += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        let t_next = (k + 1) as f64 * dt;
        let norm = y.rows(0, n).norm();
        if !norm.is_finite() || norm > blowup_threshold {
            return Err(Error::Diverged { t: t_next, norm });
        }
        record(t_next, &y)?;
    }
    Ok(Trajectory {
        dt,
        samples,
        integrals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostReport {
    /// Trapezoidal quadrature of `xᵀQx + uᵀRu`.
    pub quadrature: f64,
    /// `x₀ᵀPx₀` when a cost matrix was supplied.
    pub analytic: Option<f64>,
    pub relative_difference: Option<f64>,
}

/// Relative terminal-state threshold for treating a run as settled.
pub const SETTLE_RATIO: f64 = 1e-6;

pub fn evaluate_cost(
    trajectory: &Trajectory,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    cost_matrix: Option<&DMatrix<f64>>,
) -> Result<CostReport> {
    let x0 = trajectory
        .initial_state()
        .ok_or_else(|| Error::InvalidConfig("empty trajectory".into()))?;
    let terminal = trajectory.final_state().map_or(0.0, |x| x.norm());
    let required = SETTLE_RATIO * x0.norm();
    if terminal > required {
        return Err(Error::NotSettled { terminal, required });
    }
    let stage = |s: &Sample| {
        let u = s.applied_input();
        s.x.dot(&(q * &s.x)) + u.dot(&(r * &u))
    };
    let values: Vec<f64> = trajectory.samples.iter().map(stage).collect();
    let quadrature = values
        .windows(2)
        .map(|w| 0.5 * trajectory.dt * (w[0] + w[1]))
        .sum::<f64>();
    let analytic = cost_matrix.map(|p| x0.dot(&(p * x0)));
    let relative_difference =
        analytic.map(|a| (quadrature - a).abs() / a.abs().max(f64::MIN_POSITIVE));
    Ok(CostReport {
        quadrature,
        analytic,
        relative_difference,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IssReport {
    pub k: f64,
    pub lambda: f64,
    pub holds: bool,
    /// max over samples of `‖x(t)‖ / envelope(t)`
    pub worst_ratio: f64,
}

/// Decay-rate margin subtracted from `−abscissa(A_cl)`.
pub const ISS_RATE_MARGIN: f64 = 1e-3;
const ISS_GRID_REFINEMENT: usize = 4;

/// Checks `‖x(t)‖ ≤ k e^{−λt}‖x(0)‖ + (k‖B‖/λ) sup_{τ≤t} ‖w(τ)‖` on every
/// sample, where `w = u₀ + ζ` is everything entering through `B` besides
/// the feedback.
pub fn iss_envelope(a_cl: &DMatrix<f64>, b: &DMatrix<f64>, trajectory: &Trajectory) -> Result<IssReport> {
    let abscissa = spectral_abscissa(a_cl)?;
    if abscissa >= 0.0 {
        return Err(Error::NotHurwitz { abscissa });
    }
    let lambda = (-abscissa - ISS_RATE_MARGIN).max(-abscissa * 0.5);
    let t0 = trajectory.start_time();
    let horizon = trajectory.end_time() - t0;
    let h = trajectory.dt / ISS_GRID_REFINEMENT as f64;
    let step = expm(&(a_cl * h))?;
    let n = a_cl.nrows();
    let mut e = DMatrix::<f64>::identity(n, n);
    let mut k: f64 = 1.0;
    let nodes = (horizon / h).round() as usize;
    for i in 1..=nodes {
        e = &step * &e;
        let t = i as f64 * h;
        k = k.max(norm2(&e) * (lambda * t).exp());
    }
    let b_norm = norm2(b);
    let x0 = trajectory.initial_state().map_or(0.0, |x| x.norm());
    let mut sup_w: f64 = 0.0;
    let mut worst: f64 = 0.0;
    let mut holds = true;
    for s in &trajectory.samples {
        sup_w = sup_w.max((&s.u0 + &s.zeta).norm());
        let t = s.t - t0;
        let envelope = k * (-lambda * t).exp() * x0 + k * b_norm / lambda * sup_w;
        let xn = s.x.norm();
        if xn > envelope * (1.0 + 1e-9) + 1e-12 {
            holds = false;
        }
        if envelope > 0.0 {
            worst = worst.max(xn / envelope);
        }
    }
    Ok(IssReport {
        k,
        lambda,
        holds,
        worst_ratio: worst,
    })
}
