//! Closed-loop integration under the piecewise-affine policy.

use std::collections::VecDeque;
use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{augment, Triangulation};
use crate::pwq::{harmonic_bound, PwqFunction};
use crate::systems::{Plant, Policy, PolytopicModel};

/// How the uncertain weights α(t) evolve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// α fixed to one model vertex.
    Vertex { index: usize },
    /// α fixed to the given convex weights.
    Weights { alpha: Vec<f64> },
    /// α drawn uniformly from the simplex, redrawn every `period` seconds
    /// (once per trajectory when absent).
    Random {
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        period: Option<f64>,
    },
    /// At every step, the vertex maximizing V̄̇.
    WorstCase,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Vertex { index: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimOptions {
    pub horizon: f64,
    /// Defaults to 1e-3 · horizon.
    pub dt: Option<f64>,
    /// Defaults to 1e-9 · horizon.
    pub tol_event: Option<f64>,
    /// Stop this long after the goal set is reached.
    pub stop_after_goal: Option<f64>,
    /// Crossings of one face within `chatter_window` steps that count as chattering.
    pub chatter_count: usize,
    pub chatter_window: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            horizon: 10.0,
            dt: None,
            tol_event: None,
            stop_after_goal: None,
            chatter_count: 10,
            chatter_window: 100.0,
        }
    }
}

impl SimOptions {
    pub fn with_horizon(horizon: f64) -> Self {
        SimOptions {
            horizon,
            ..Default::default()
        }
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or(1e-3 * self.horizon)
    }

    fn event_tol(&self) -> f64 {
        self.tol_event.unwrap_or(1e-9 * self.horizon)
    }
}

/// Default horizon for the builtin models.
pub fn default_horizon(model: &str) -> f64 {
    match model {
        "double_tank" => 200.0,
        "unstable_polytopic" => 5.0,
        "chua" => 2.0,
        _ => 10.0,
    }
}

/// Repeated crossings of the face shared by two simplices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatterEvent {
    pub simplices: (usize, usize),
    pub start: f64,
    pub end: f64,
    pub crossings: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub simplex: Vec<usize>,
    pub alpha: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vbar: Option<Vec<f64>>,
    pub reach_time: Option<f64>,
    /// The state hit ∂X and the run stopped there.
    pub left_domain: bool,
    pub chattering: Vec<ChatterEvent>,
    /// Largest amount by which K̄_q x̄ exceeded the input bounds before saturation.
    pub max_input_excess: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn final_state(&self) -> Option<&[f64]> {
        self.x.last().map(Vec::as_slice)
    }

    /// CSV with columns t, x1..xn, u1..um, simplex, vbar.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.x.first().map_or(0, Vec::len);
        let m = self.u.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.push("simplex".into());
        header.push("vbar".into());
        w.write_record(&header)?;
        for k in 0..self.t.len() {
            let mut row = vec![self.t[k].to_string()];
            row.extend(self.x[k].iter().map(f64::to_string));
            row.extend(self.u[k].iter().map(f64::to_string));
            row.push(self.simplex[k].to_string());
            row.push(self.vbar.as_ref().map_or(String::new(), |v| v[k].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// First sample time at which the trajectory is in a goal simplex.
pub fn reach_time(traj: &Trajectory, tri: &Triangulation) -> Option<f64> {
    traj.simplex
        .iter()
        .zip(&traj.t)
        .find(|(&q, _)| tri.is_goal(q))
        .map(|(_, &t)| t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub vbar0: f64,
    /// V̄(x0)/(1 − V̄(x0)); infinite when V̄(x0) ≥ 1.
    pub bound: f64,
    pub satisfied: bool,
    pub slack: f64,
}

/// Compare a measured reach time with the harmonic bound at x0.
pub fn bound_check(pwq: &PwqFunction, x0: &DVector<f64>, reach: f64, tol_bound: f64) -> Result<BoundCheck> {
    let vbar0 = pwq.evaluate(x0)?;
    let bound = harmonic_bound(vbar0.max(0.0))?;
    Ok(BoundCheck {
        vbar0,
        bound,
        satisfied: reach <= bound + tol_bound,
        slack: bound - reach,
    })
}

/// Closed-loop simulator for one triangulation, model and policy.
pub struct Simulator<'a> {
    pub tri: &'a Triangulation,
    pub model: &'a PolytopicModel,
    pub policy: &'a Policy,
    /// Used for the V̄ column and the worst-case schedule.
    pub pwq: Option<&'a PwqFunction>,
}

const INSIDE_TOL: f64 = 1e-12;
const MAX_CROSSINGS_PER_STEP: usize = 1000;

struct AlphaState {
    rng: Option<ChaCha8Rng>,
    next_draw: f64,
    current: Vec<f64>,
}

impl Simulator<'_> {
    fn margin(&self, q: usize, x: &DVector<f64>) -> f64 {
        self.tri.barycentric_unchecked(q, x).min()
    }

    /// Saturated input and the excess removed by saturation.
    fn input(&self, q: usize, x: &DVector<f64>) -> (DVector<f64>, f64) {
        let raw = self.policy.control_in(q, x);
        let lo = self.model.u_lower();
        let hi = self.model.u_upper();
        let mut excess: f64 = 0.0;
        let u = DVector::from_iterator(
            raw.len(),
            raw.iter().enumerate().map(|(j, &v)| {
                excess = excess.max(lo[j] - v).max(v - hi[j]);
                v.clamp(lo[j], hi[j])
            }),
        );
        (u, excess.max(0.0))
    }

    fn field(&self, q: usize, x: &DVector<f64>, alpha: &[f64]) -> DVector<f64> {
        let (u, _) = self.input(q, x);
        self.model.plant().field(x, &u, alpha)
    }

    fn rk4(&self, q: usize, x: &DVector<f64>, h: f64, alpha: &[f64]) -> DVector<f64> {
        let k1 = self.field(q, x, alpha);
        let k2 = self.field(q, &(x + &k1 * (h / 2.0)), alpha);
        let k3 = self.field(q, &(x + &k2 * (h / 2.0)), alpha);
        let k4 = self.field(q, &(x + &k3 * h), alpha);
        x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }

    /// Simplex entered at `x` when leaving `from` along `dir`; None outside X.
    fn next_simplex(&self, from: usize, x: &DVector<f64>, dir: &DVector<f64>) -> Option<usize> {
        if !self.tri.contains_box(x) {
            return None;
        }
        let tol = self.tri.tol_membership().max(1e-9);
        let near: Vec<usize> = self
            .tri
            .candidates(x)
            .iter()
            .copied()
            .filter(|&c| c != from && self.margin(c, x) >= -tol)
            .collect();
        match near.len() {
            0 => self.tri.locate(x).ok().filter(|&c| c != from || self.margin(c, x) >= 0.0),
            1 => Some(near[0]),
            _ => {
                let norm = dir.norm();
                let probe = if norm > 0.0 {
                    x + dir * (1e-7 * self.tri.box_diameter() / norm)
                } else {
                    x.clone()
                };
                near.into_iter().max_by(|&a, &b| self.margin(a, &probe).total_cmp(&self.margin(b, &probe)))
            }
        }
    }

    fn alpha_init(&self, schedule: &Schedule) -> Result<AlphaState> {
        let r = self.model.plant().vertex_count();
        let mut st = AlphaState {
            rng: None,
            next_draw: f64::INFINITY,
            current: vec![0.0; r],
        };
        st.current[0] = 1.0;
        match schedule {
            Schedule::Vertex { index } => {
                if *index >= r {
                    return Err(Error::Config(format!("vertex {index} out of range (model has {r})")));
                }
                st.current = vec![0.0; r];
                st.current[*index] = 1.0;
            }
            Schedule::Weights { alpha } => {
                let sum: f64 = alpha.iter().sum();
                if alpha.len() != r || alpha.iter().any(|&a| a < 0.0) || (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("alpha must be {r} nonnegative weights summing to 1")));
                }
                st.current = alpha.clone();
            }
            Schedule::Random { seed, period } => {
                if period.is_some_and(|p| p <= 0.0) {
                    return Err(Error::Config("random schedule period must be positive".into()));
                }
                st.rng = Some(ChaCha8Rng::seed_from_u64(*seed));
                st.next_draw = 0.0;
            }
            Schedule::WorstCase => {
                if self.pwq.is_none() {
                    return Err(Error::Config("the worst-case schedule needs a certificate".into()));
                }
            }
        }
        if matches!(self.model.plant(), Plant::Chua(_)) {
            st.current = vec![1.0];
        }
        Ok(st)
    }

    fn alpha_update(&self, st: &mut AlphaState, schedule: &Schedule, t: f64, q: usize, x: &DVector<f64>) {
        let r = st.current.len();
        if r == 1 {
            return;
        }
        match schedule {
            Schedule::Random { period, .. } if t >= st.next_draw => {
                let rng = st.rng.as_mut().expect("random schedule has an rng");
                let mut w: Vec<f64> = (0..r).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                st.current = w;
                st.next_draw = period.map_or(f64::INFINITY, |p| st.next_draw + p);
            }
            Schedule::WorstCase => {
                let pwq = self.pwq.expect("checked in alpha_init");
                let s = pwq.local(q);
                let xb = augment(x);
                let (u, _) = self.input(q, x);
                let best = (0..r)
                    .map(|k| {
                        let mut e = vec![0.0; r];
                        e[k] = 1.0;
                        let f = self.model.plant().field(x, &u, &e);
                        let mut fb = DVector::zeros(x.len() + 1);
                        fb.rows_mut(0, x.len()).copy_from(&f);
                        (k, 2.0 * xb.dot(&(s * fb)))
                    })
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map_or(0, |b| b.0);
                st.current = vec![0.0; r];
                st.current[best] = 1.0;
            }
            _ => {}
        }
    }

    fn push(&self, traj: &mut Trajectory, t: f64, q: usize, x: &DVector<f64>, alpha: &[f64]) {
        let (u, excess) = self.input(q, x);
        traj.max_input_excess = traj.max_input_excess.max(excess);
        traj.t.push(t);
        traj.x.push(x.iter().copied().collect());
        traj.u.push(u.iter().copied().collect());
        traj.simplex.push(q);
        traj.alpha.push(alpha.to_vec());
        if let (Some(v), Some(pwq)) = (traj.vbar.as_mut(), self.pwq) {
            v.push(pwq.evaluate_in(q, x));
        }
    }

    /// Fixed-step RK4 with event-located simplex switching.
    pub fn simulate(&self, x0: &DVector<f64>, schedule: &Schedule, opts: &SimOptions) -> Result<Trajectory> {
        let n = self.tri.dim();
        if x0.len() != n {
            return Err(Error::Dimension(format!("x0 has {} entries, expected {n}", x0.len())));
        }
        let dt = opts.step();
        if !(dt > 0.0) || !(opts.horizon > 0.0) {
            return Err(Error::Config("dt and horizon must be positive".into()));
        }
        let mut q = self.tri.locate(x0)?;
        if self.tri.in_goal(x0) && !self.tri.is_goal(q) {
            if let Some(&g) = self.tri.candidates(x0).iter().find(|&&g| self.tri.is_goal(g) && self.tri.contains(g, x0)) {
                q = g;
            }
        }
        let tol_event = opts.event_tol();
        let min_progress = 1e-3 * dt;
        let mut alpha = self.alpha_init(schedule)?;
        let mut traj = Trajectory {
            vbar: self.pwq.map(|_| Vec::new()),
            ..Default::default()
        };
        let mut x = x0.clone();
        let mut t = 0.0;
        self.alpha_update(&mut alpha, schedule, t, q, &x);
        self.push(&mut traj, t, q, &x, &alpha.current);
        if self.tri.is_goal(q) {
            traj.reach_time = Some(0.0);
        }
        let mut recent: VecDeque<(f64, (usize, usize))> = VecDeque::new();
        let window = opts.chatter_window * dt;

        'outer: while t < opts.horizon * (1.0 - 1e-12) {
            if let (Some(r), Some(after)) = (traj.reach_time, opts.stop_after_goal) {
                if t >= r + after {
                    break;
                }
            }
            self.alpha_update(&mut alpha, schedule, t, q, &x);
            let mut remaining = dt.min(opts.horizon - t);
            let mut crossings = 0;
            while remaining > 0.0 {
                let a = alpha.current.clone();
                let x1 = self.rk4(q, &x, remaining, &a);
                if !x1.iter().all(|v| v.is_finite()) {
                    return Err(Error::Simulation(format!("state diverged at t = {t}")));
                }
                if self.margin(q, &x1) >= -INSIDE_TOL {
                    t += remaining;
                    x = x1;
                    break;
                }
                let (mut lo, mut hi) = (0.0, remaining);
                while hi - lo > tol_event {
                    let mid = 0.5 * (lo + hi);
                    if self.margin(q, &self.rk4(q, &x, mid, &a)) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                // Immediate exit means the flow slides along the face; take the
                // whole step rather than stalling at the event resolution.
                let s = if hi < min_progress { remaining } else { hi };
                let xc = if s == remaining { x1 } else { self.rk4(q, &x, s, &a) };
                let dir = self.field(q, &xc, &a);
                let Some(next) = self.next_simplex(q, &xc, &dir) else {
                    // Stop on ∂X at the last point still inside.
                    traj.left_domain = true;
                    t += lo;
                    x = self.rk4(q, &x, lo, &a);
                    self.push(&mut traj, t, q, &x, &alpha.current);
                    break 'outer;
                };
                t += s;
                remaining -= s;
                x = xc;
                if next == q {
                    continue;
                }
                let key = (q.min(next), q.max(next));
                recent.push_back((t, key));
                while recent.front().is_some_and(|(t0, _)| t - t0 > window) {
                    recent.pop_front();
                }
                let count = recent.iter().filter(|(_, k)| *k == key).count();
                if count >= opts.chatter_count {
                    match traj.chattering.last_mut() {
                        Some(ev) if ev.simplices == key && t - ev.end <= window => {
                            ev.end = t;
                            ev.crossings += 1;
                        }
                        _ => traj.chattering.push(ChatterEvent {
                            simplices: key,
                            start: recent.iter().find(|(_, k)| *k == key).map_or(t, |e| e.0),
                            end: t,
                            crossings: count,
                        }),
                    }
                }
                q = next;
                if traj.reach_time.is_none() && self.tri.is_goal(q) {
                    traj.reach_time = Some(t);
                }
                self.push(&mut traj, t, q, &x, &alpha.current);
                crossings += 1;
                if crossings > MAX_CROSSINGS_PER_STEP {
                    return Err(Error::Simulation(format!(
                        "more than {MAX_CROSSINGS_PER_STEP} simplex crossings within one step at t = {t}; reduce dt"
                    )));
                }
            }
            if *traj.t.last().unwrap() < t {
                self.push(&mut traj, t, q, &x, &alpha.current);
            }
        }
        Ok(traj)
    }
}

/// One initial condition and uncertainty schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub x0: Vec<f64>,
    #[serde(default)]
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub x0: Vec<f64>,
    pub schedule: Schedule,
    pub reach_time: Option<f64>,
    pub vbar0: Option<f64>,
    pub bound: Option<f64>,
    pub slack: Option<f64>,
    pub satisfied: Option<bool>,
    pub left_domain: bool,
    pub chattering_events: usize,
    pub max_input_excess: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Run independent scenarios (in parallel with the `parallel` feature).
pub fn simulate_batch(
    sim: &Simulator<'_>,
    scenarios: &[Scenario],
    opts: &SimOptions,
    tol_bound: f64,
) -> Vec<(ScenarioSummary, Option<Trajectory>)> {
    let run = |sc: &Scenario| {
        let x0 = DVector::from_vec(sc.x0.clone());
        let mut summary = ScenarioSummary {
            x0: sc.x0.clone(),
            schedule: sc.schedule.clone(),
            reach_time: None,
            vbar0: None,
            bound: None,
            slack: None,
            satisfied: None,
            left_domain: false,
            chattering_events: 0,
            max_input_excess: 0.0,
            error: None,
        };
        match sim.simulate(&x0, &sc.schedule, opts) {
            Ok(traj) => {
                summary.reach_time = traj.reach_time;
                summary.left_domain = traj.left_domain;
                summary.chattering_events = traj.chattering.len();
                summary.max_input_excess = traj.max_input_excess;
                if let Some(pwq) = sim.pwq {
                    if let Ok(v) = pwq.evaluate(&x0) {
                        summary.vbar0 = Some(v);
                        if let Ok(b) = harmonic_bound(v.max(0.0)) {
                            summary.bound = Some(b);
                        }
                    }
                    if let Some(Ok(bc)) = traj.reach_time.map(|r| bound_check(pwq, &x0, r, tol_bound)) {
                        summary.slack = Some(bc.slack);
                        summary.satisfied = Some(bc.satisfied);
                    }
                }
                (summary, Some(traj))
            }
            Err(e) => {
                summary.error = Some(e.to_string());
                (summary, None)
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        scenarios.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        scenarios.iter().map(run).collect()
    }
}
