//! Wrench-only gradient-descent planner on the mixed task/penalty objective.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use crate::env::WrenchSource;
use crate::error::{Error, Result};
use crate::screw::{quat_error_unit, Pose, Twist, Wrench};
use crate::stiffness::{alpha, characteristic_stiffness, probe_stiffness, ProbeConfig, StiffnessMatrix};

/// Gradient norm below which the planner issues a zero twist.
pub const GRAD_ZERO: f64 = 1e-12;

/// Energy estimates below `-ENERGY_DRIFT_FLAG` are flagged.
pub const ENERGY_DRIFT_FLAG: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub kappa: f64,
    /// Characteristic length of the force barrier [m].
    pub rho: f64,
    pub w_max: f64,
    /// Probe interval used when estimating `K`.
    pub dt: f64,
    /// Magnitude of each issued twist.
    pub step_size: f64,
    /// Time the twist is held per control step; displacement is `twist * control_period`.
    pub control_period: f64,
    pub grad_step: f64,
    pub eps_task: f64,
    pub reprobe_period: usize,
    /// Wrench-prediction error that forces a re-probe; `None` means 10% of `w_max`.
    pub reprobe_error: Option<f64>,
    pub probe_eps: f64,
    pub probe_repeats: usize,
    pub stall_steps: usize,
    /// Relative decrease of `J` over `stall_steps` below which progress counts as stalled.
    pub stall_progress: f64,
    pub divergence_steps: usize,
    pub max_steps: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            kappa: 1e-5,
            rho: 5e-5,
            w_max: 25.0,
            dt: 0.4,
            step_size: 5e-3,
            control_period: 0.1,
            grad_step: 1e-5,
            eps_task: 1e-6,
            reprobe_period: 50,
            reprobe_error: None,
            probe_eps: 2.5e-3,
            probe_repeats: 16,
            stall_steps: 20,
            stall_progress: 1e-3,
            divergence_steps: 50,
            max_steps: 10_000,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("kappa", self.kappa, true),
            ("rho", self.rho, false),
            ("w_max", self.w_max, false),
            ("dt", self.dt, false),
            ("step_size", self.step_size, false),
            ("control_period", self.control_period, false),
            ("grad_step", self.grad_step, false),
            ("eps_task", self.eps_task, false),
            ("probe_eps", self.probe_eps, false),
            ("stall_progress", self.stall_progress, false),
        ];
        for (name, v, zero_ok) in pos {
            // w_max may be infinite to disable the barrier
            let ok = if zero_ok { v >= 0.0 } else { v > 0.0 } && (v.is_finite() || name == "w_max");
            if !ok {
                return Err(Error::invalid(format!("planner {name} must be positive, got {v}")));
            }
        }
        if self.reprobe_period == 0 || self.stall_steps == 0 || self.divergence_steps == 0 {
            return Err(Error::invalid("planner step counts must be at least 1"));
        }
        if let Some(e) = self.reprobe_error {
            if !(e > 0.0) {
                return Err(Error::invalid("reprobe_error must be positive"));
            }
        }
        Ok(())
    }

    pub fn reprobe_threshold(&self) -> f64 {
        self.reprobe_error.unwrap_or(0.1 * self.w_max)
    }

    pub fn probe(&self) -> ProbeConfig {
        ProbeConfig { eps: self.probe_eps, dt: self.dt, repeats: self.probe_repeats }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    pub z: Pose,
    pub w: Wrench,
    pub k: StiffnessMatrix,
    pub e: f64,
    pub alpha: f64,
    pub step_index: usize,
}

/// `|r_g - r|² + α² |vec(δq)|²`.
pub fn task_term(z: &Pose, z_g: &Pose, alpha: f64) -> f64 {
    let dq = quat_error_unit(&z.q, &z_g.q);
    (z_g.r - z.r).norm_squared() + alpha * alpha * dq.quaternion().imag().norm_squared()
}

/// Gradient of [`task_term`] with respect to a displacement `[dr; dω]` applied at `z`.
pub fn task_gradient(z: &Pose, z_g: &Pose, alpha: f64) -> Vector6<f64> {
    let gr = -2.0 * (z_g.r - z.r);
    let p = z_g.q * z.q.inverse();
    let gw = -alpha * alpha * p.w * p.imag();
    Vector6::new(gr.x, gr.y, gr.z, gw.x, gw.y, gw.z)
}

pub fn energy_penalty(e: f64, kappa: f64) -> f64 {
    kappa * e
}

/// `ρ / (w_max - |(f, α m)|)`, or `+∞` once the limit is reached.
pub fn force_barrier(w: &Wrench, alpha: f64, w_max: f64, rho: f64) -> f64 {
    let n = w.weighted_norm(alpha);
    if n >= w_max {
        f64::INFINITY
    } else {
        rho / (w_max - n)
    }
}

/// Objective split into its terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terms {
    pub task: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Terms {
    pub fn total(&self) -> f64 {
        self.task + self.c1 + self.c2
    }
}

/// Objective terms after a hypothetical displacement `d`, with wrench and
/// energy predicted from the local stiffness model.
pub fn terms_at(state: &PlannerState, d: &Vector6<f64>, goal: &Pose, cfg: &PlannerConfig) -> Terms {
    let k = state.k.matrix();
    let w = state.w.to_vector();
    let kd = k * d;
    let w_p = Wrench::from_vector(&(w - kd));
    let e_p = state.e - w.dot(d) + 0.5 * d.dot(&kd);
    Terms {
        task: task_term(&state.z.oplus(d), goal, state.alpha),
        c1: energy_penalty(e_p, cfg.kappa),
        c2: force_barrier(&w_p, state.alpha, cfg.w_max, cfg.rho),
    }
}

pub fn objective(state: &PlannerState, z_probe: &Pose, goal: &Pose, cfg: &PlannerConfig) -> f64 {
    let d = state.z.displacement_to(z_probe);
    terms_at(state, &d, goal, cfg).total()
}

/// Central-difference gradient of the predicted objective; one-sided where a
/// probe breaches the barrier. `None` when every probe breaches.
pub fn objective_gradient(state: &PlannerState, goal: &Pose, cfg: &PlannerConfig) -> Option<Vector6<f64>> {
    let h = cfg.grad_step;
    let j0 = terms_at(state, &Vector6::zeros(), goal, cfg).total();
    let mut g = Vector6::zeros();
    let mut any = false;
    for i in 0..6 {
        let mut d = Vector6::zeros();
        d[i] = h;
        let jp = terms_at(state, &d, goal, cfg).total();
        let jm = terms_at(state, &-d, goal, cfg).total();
        g[i] = match (jp.is_finite(), jm.is_finite()) {
            (true, true) => (jp - jm) / (2.0 * h),
            (true, false) if j0.is_finite() => (jp - j0) / h,
            (false, true) if j0.is_finite() => (j0 - jm) / h,
            (true, false) | (false, true) => 0.0,
            (false, false) => 0.0,
        };
        any |= jp.is_finite() || jm.is_finite();
    }
    any.then_some(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Descent,
    /// Gradient vanished.
    Zero,
    /// Every probe breached the barrier; moving along the wrench to relieve it.
    Retreat,
}

/// Twist of magnitude `step_size` along `-∇J`.
pub fn gradient_step(state: &PlannerState, goal: &Pose, cfg: &PlannerConfig) -> (Twist, StepKind) {
    match objective_gradient(state, goal, cfg) {
        None => {
            let w = state.w.to_vector();
            let n = w.norm();
            if n > 0.0 {
                (Twist::from_vector(&(w * (cfg.step_size / n))), StepKind::Retreat)
            } else {
                (Twist::default(), StepKind::Zero)
            }
        }
        Some(g) => {
            let n = g.norm();
            if n < GRAD_ZERO || !n.is_finite() {
                (Twist::default(), StepKind::Zero)
            } else {
                (Twist::from_vector(&(-g * (cfg.step_size / n))), StepKind::Descent)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub time: f64,
    pub z: Pose,
    pub w: Wrench,
    pub e: f64,
    pub j: f64,
    pub task: f64,
    pub c1: f64,
    pub c2: f64,
    pub twist: Twist,
    pub region: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Reached,
    BoundaryStall,
    MaxSteps,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunResult {
    pub state: PlannerState,
    pub logs: Vec<StepLog>,
    pub termination: Termination,
    pub reprobes: usize,
    pub retreats: usize,
    /// Steps undone because the sensed wrench crossed the limit.
    pub rejected_steps: usize,
    pub energy_drift_flag: bool,
}

impl RunResult {
    pub fn reached(&self) -> bool {
        self.termination == Termination::Reached
    }

    /// Largest `|(f, α m)|` over the logged steps.
    pub fn peak_weighted_wrench(&self) -> f64 {
        self.logs.iter().map(|l| l.w.weighted_norm(self.state.alpha)).fold(0.0, f64::max)
    }

    /// Converts a divergence into an error.
    pub fn check(self) -> Result<Self> {
        if self.termination == Termination::Diverged {
            return Err(Error::Diverged { step: self.state.step_index, consecutive: self.diverging_tail() });
        }
        Ok(self)
    }

    fn diverging_tail(&self) -> usize {
        self.logs.windows(2).rev().take_while(|p| p[1].j > p[0].j).count()
    }
}

fn log_entry(state: &PlannerState, t: Terms, twist: Twist, cfg: &PlannerConfig) -> StepLog {
    StepLog {
        step: state.step_index,
        time: state.step_index as f64 * cfg.control_period,
        z: state.z,
        w: state.w,
        e: state.e,
        j: t.total(),
        task: t.task,
        c1: t.c1,
        c2: t.c2,
        twist,
        region: None,
    }
}

/// Backtracking on the predicted objective; returns the accepted twist.
fn line_search(state: &PlannerState, twist: &Twist, goal: &Pose, cfg: &PlannerConfig) -> Twist {
    let j0 = terms_at(state, &Vector6::zeros(), goal, cfg).total();
    let mut t = twist.to_vector();
    for _ in 0..=20 {
        let j = terms_at(state, &(t * cfg.control_period), goal, cfg).total();
        if j < j0 {
            return Twist::from_vector(&t);
        }
        t *= 0.5;
    }
    Twist::default()
}

/// True when the constraint penalties oppose progress toward the goal.
fn constraints_active(state: &PlannerState, goal: &Pose, cfg: &PlannerConfig, c2: f64) -> bool {
    if c2 > 10.0 * cfg.rho / cfg.w_max {
        return true;
    }
    let Some(g) = objective_gradient(state, goal, cfg) else { return true };
    let gt = task_gradient(&state.z, goal, state.alpha);
    (g - gt).norm() > 0.1 * gt.norm()
}

/// Runs the sense / descend / update loop from `z0` until the task is met,
/// the planner stalls against a constraint, it diverges, or `max_steps` elapse.
pub fn run<S: WrenchSource>(mut source: S, z0: &Pose, goal: &Pose, cfg: &PlannerConfig) -> Result<RunResult> {
    cfg.validate()?;
    let probe = cfg.probe();
    let w = source.wrench_at(z0)?;
    let k = probe_stiffness(&mut source, z0, &probe)?;
    let (kx, kth) = characteristic_stiffness(&k);
    let mut state = PlannerState { z: *z0, w, k, e: 0.0, alpha: alpha(kx, kth)?, step_index: 0 };
    let mut terms = terms_at(&state, &Vector6::zeros(), goal, cfg);
    let mut logs = vec![log_entry(&state, terms, Twist::default(), cfg)];
    let mut out = RunResult {
        state: state.clone(),
        logs: vec![],
        termination: Termination::MaxSteps,
        reprobes: 0,
        retreats: 0,
        rejected_steps: 0,
        energy_drift_flag: false,
    };
    let threshold = cfg.reprobe_threshold();
    let stall_twist = 1e-4 * cfg.step_size;
    let (mut rising, mut since_probe) = (0usize, 0usize);

    if terms.task < cfg.eps_task {
        out.termination = Termination::Reached;
    } else {
        for step in 1..=cfg.max_steps {
            let (dir, kind) = gradient_step(&state, goal, cfg);
            let twist = match kind {
                StepKind::Descent => line_search(&state, &dir, goal, cfg),
                StepKind::Retreat => {
                    out.retreats += 1;
                    dir
                }
                StepKind::Zero => dir,
            };
            let d = twist.to_vector() * cfg.control_period;
            let z_new = state.z.oplus(&d);
            let mut w_new = source.wrench_at(&z_new)?;
            let mut moved = true;
            if w_new.weighted_norm(state.alpha) >= cfg.w_max && kind != StepKind::Retreat {
                // model missed the limit: stay put and refresh the model
                out.rejected_steps += 1;
                moved = false;
                w_new = source.wrench_at(&state.z)?;
            }
            let predicted = state.w.to_vector() - state.k.matrix() * d;
            since_probe += 1;
            if moved {
                state.e -= 0.5 * (state.w.to_vector() + w_new.to_vector()).dot(&d);
                state.z = z_new;
            }
            let refresh =
                !moved || since_probe >= cfg.reprobe_period || (w_new.to_vector() - predicted).norm() > threshold;
            state.w = w_new;
            state.step_index = step;
            if refresh {
                state.k = probe_stiffness(&mut source, &state.z, &probe)?;
                out.reprobes += 1;
                since_probe = 0;
            }
            out.energy_drift_flag |= state.e < -ENERGY_DRIFT_FLAG;

            let prev_j = terms.total();
            terms = terms_at(&state, &Vector6::zeros(), goal, cfg);
            logs.push(log_entry(&state, terms, if moved { twist } else { Twist::default() }, cfg));

            if terms.task < cfg.eps_task {
                out.termination = Termination::Reached;
                break;
            }
            rising = if terms.total() > prev_j { rising + 1 } else { 0 };
            if rising >= cfg.divergence_steps {
                out.termination = Termination::Diverged;
                break;
            }
            // mean twist over the window, so zigzags along a valley count as stalled
            let small = logs.len() > cfg.stall_steps && {
                let past = &logs[logs.len() - 1 - cfg.stall_steps];
                let net = past.z.displacement_to(&state.z).norm() / (cfg.stall_steps as f64 * cfg.control_period);
                net < stall_twist || past.j - terms.total() < cfg.stall_progress * past.j
            };
            if small && constraints_active(&state, goal, cfg, terms.c2) {
                out.termination = Termination::BoundaryStall;
                break;
            }
        }
    }
    out.state = state;
    out.logs = logs;
    Ok(out)
}
