//! Command-line pipelines: plan, explore, identify, verify.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::classifier::{classify_axis, identify_constraint, ClassifierThresholds, ConstraintLabel, Eigendata};
use crate::env::{elastic_energy, make_scenario, ScenarioKind, ScenarioSpec, Scene, SensedScene, SensorModel};
use crate::error::{Error, Result};
use crate::explorer::{Atlas, ExplorerConfig};
use crate::planner::{run, PlannerConfig, RunResult, StepLog, Termination};
use crate::screw::{quat_error_unit, Pose};
use crate::stiffness::{decompose, probe_stiffness, Constraint, Decomposition, ProbeConfig, StiffnessMatrix};

pub const STEPS_HEADER: [&str; 21] = [
    "step", "time", "x", "y", "z", "qw", "qx", "qy", "qz", "fx", "fy", "fz", "mx", "my", "mz", "E", "J", "task", "c1",
    "c2", "region",
];

/// Built-in scenario name, a scene file, or inline scenario parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioRef {
    Name(String),
    File { file: PathBuf },
    Spec(ScenarioSpec),
}

impl ScenarioRef {
    /// `base` resolves relative file paths.
    pub fn resolve(&self, base: &Path) -> Result<Scene> {
        match self {
            ScenarioRef::Name(n) => make_scenario(&ScenarioSpec::default_for(n.parse::<ScenarioKind>()?)),
            ScenarioRef::Spec(s) => make_scenario(s),
            ScenarioRef::File { file } => {
                let text = fs::read_to_string(base.join(file))?;
                match Scene::from_json(&text) {
                    Ok(scene) => Ok(scene),
                    Err(_) => make_scenario(&serde_json::from_str::<ScenarioSpec>(&text)?),
                }
            }
        }
    }
}

/// A full pose or the planar shorthand `{"planar": [x, y, θ]}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PoseSpec {
    Planar { planar: [f64; 3] },
    Full(Pose),
}

impl PoseSpec {
    pub fn pose(&self) -> Pose {
        match self {
            PoseSpec::Planar { planar: [x, y, t] } => Pose::planar(*x, *y, *t),
            PoseSpec::Full(p) => *p,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioRef,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub explorer: ExplorerConfig,
    #[serde(default)]
    pub thresholds: ClassifierThresholds,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub start: Option<PoseSpec>,
    #[serde(default)]
    pub goal: Option<PoseSpec>,
    /// Pose script for `explore`.
    #[serde(default)]
    pub poses: Vec<PoseSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Seeds the sensor noise stream.
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(s)?;
        cfg.thresholds.validate()?;
        cfg.explorer.validate()?;
        Ok(cfg)
    }

    pub fn start_pose(&self) -> Pose {
        self.start.map_or_else(Pose::identity, |p| p.pose())
    }

    pub fn sensor_model(&self) -> SensorModel {
        SensorModel { rng_seed: self.rng_seed, ..self.sensor.clone() }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        if let Some(n) = self.max_steps {
            p.max_steps = n;
        }
        p
    }
}

/// Config plus the directory its relative paths resolve against.
#[derive(Clone, Debug)]
pub struct Job {
    pub config: RunConfig,
    pub base: PathBuf,
    pub out: PathBuf,
}

impl Job {
    pub fn load(path: &Path, ov: &Overrides) -> Result<Self> {
        let text = read_input(path)?;
        let mut config = RunConfig::from_json(&text)?;
        if let Some(s) = ov.seed {
            config.rng_seed = s;
        }
        if let Some(n) = ov.max_steps {
            config.max_steps = Some(n);
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = match (&ov.out, &config.output_dir) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => PathBuf::from("out"),
        };
        Ok(Job { config, base, out })
    }
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub max_steps: Option<usize>,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn opt_fmt(x: Option<u32>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_steps_csv(path: &Path, logs: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(STEPS_HEADER)?;
    for l in logs {
        let q = l.z.q_wxyz();
        let mut row = vec![l.step.to_string(), fmt(l.time)];
        row.extend(l.z.r.iter().map(|x| fmt(*x)));
        row.extend(q.iter().map(|x| fmt(*x)));
        row.extend(l.w.to_vector().iter().map(|x| fmt(*x)));
        row.extend([l.e, l.j, l.task, l.c1, l.c2].iter().map(|x| fmt(*x)));
        row.push(opt_fmt(l.region));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_plot_csvs(dir: &Path, logs: &[StepLog], goal: &Pose, scene: &Scene, alpha: f64, w_max: f64) -> Result<()> {
    let mut pe = csv::Writer::from_path(dir.join("position_error.csv"))?;
    pe.write_record(["step", "time", "position_error", "orientation_error"])?;
    let mut nw = csv::Writer::from_path(dir.join("normalized_wrench.csv"))?;
    nw.write_record(["step", "time", "force_norm", "weighted_wrench_norm", "normalized_wrench", "max_spring_force"])?;
    for l in logs {
        let ang = quat_error_unit(&l.z.q, &goal.q).angle();
        pe.write_record([l.step.to_string(), fmt(l.time), fmt((goal.r - l.z.r).norm()), fmt(ang)])?;
        let n = l.w.weighted_norm(alpha);
        nw.write_record([
            l.step.to_string(),
            fmt(l.time),
            fmt(l.w.f.norm()),
            fmt(n),
            fmt(n / w_max),
            fmt(scene.max_spring_force(&l.z)),
        ])?;
    }
    pe.flush()?;
    nw.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub command: String,
    pub termination: Termination,
    pub reached: bool,
    pub steps: usize,
    pub final_pose: Pose,
    pub goal: Pose,
    pub final_task: f64,
    pub alpha: f64,
    pub w_max: f64,
    pub peak_weighted_wrench: f64,
    pub peak_spring_force: f64,
    pub energy_estimate: f64,
    pub energy_true: f64,
    pub reprobes: usize,
    pub retreats: usize,
    pub rejected_steps: usize,
    pub energy_drift_flag: bool,
}

pub struct PlanOutput {
    pub result: RunResult,
    pub summary: PlanSummary,
}

/// Runs the planner and writes steps.csv, summary.json and the plot series.
pub fn cmd_plan(job: &Job) -> Result<PlanOutput> {
    let cfg = &job.config;
    let goal = cfg.goal.ok_or_else(|| Error::invalid("plan needs a goal pose"))?.pose();
    let scene = cfg.scenario.resolve(&job.base)?;
    let pc = cfg.planner_config();
    let start = cfg.start_pose();
    let source = SensedScene::new(&scene, cfg.sensor_model())?;
    let result = run(source, &start, &goal, &pc)?;
    fs::create_dir_all(&job.out)?;
    write_steps_csv(&job.out.join("steps.csv"), &result.logs)?;
    write_plot_csvs(&job.out, &result.logs, &goal, &scene, result.state.alpha, pc.w_max)?;
    let last = result.logs.last().expect("run logs the initial state");
    let summary = PlanSummary {
        command: "plan".into(),
        termination: result.termination,
        reached: result.reached(),
        steps: result.logs.len() - 1,
        final_pose: last.z,
        goal,
        final_task: last.task,
        alpha: result.state.alpha,
        w_max: pc.w_max,
        peak_weighted_wrench: result.peak_weighted_wrench(),
        peak_spring_force: result.logs.iter().map(|l| scene.max_spring_force(&l.z)).fold(0.0, f64::max),
        energy_estimate: result.state.e,
        energy_true: elastic_energy(&scene, &result.state.z)?,
        reprobes: result.reprobes,
        retreats: result.retreats,
        rejected_steps: result.rejected_steps,
        energy_drift_flag: result.energy_drift_flag,
    };
    write_json(&job.out.join("summary.json"), &summary)?;
    Ok(PlanOutput { result, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploreSummary {
    pub command: String,
    pub poses: usize,
    pub regions: usize,
    pub assignments: Vec<Option<u32>>,
    pub labels: Vec<String>,
}

/// Visits the pose script (or the start pose), probing `K` and updating the atlas.
pub fn cmd_explore(job: &Job) -> Result<(Atlas, ExploreSummary)> {
    let cfg = &job.config;
    let scene = cfg.scenario.resolve(&job.base)?;
    let poses: Vec<Pose> =
        if cfg.poses.is_empty() { vec![cfg.start_pose()] } else { cfg.poses.iter().map(|p| p.pose()).collect() };
    let mut source = SensedScene::new(&scene, cfg.sensor_model())?;
    let mut atlas = Atlas::new();
    let mut assignments = vec![];
    for z in &poses {
        let k = match probe_stiffness(&mut source, z, &cfg.probe) {
            Ok(k) => k,
            // nothing above the noise floor: detached
            Err(Error::LowSignal { .. }) => StiffnessMatrix::zeros(),
            Err(e) => return Err(e),
        };
        assignments.push(atlas.explore_step(z, &k, &cfg.explorer, &cfg.thresholds)?);
    }
    fs::create_dir_all(&job.out)?;
    fs::write(job.out.join("atlas.json"), atlas.to_json()? + "\n")?;
    let mut w = csv::Writer::from_path(job.out.join("assignments.csv"))?;
    w.write_record(["index", "x", "y", "z", "qw", "qx", "qy", "qz", "region"])?;
    for (i, (z, id)) in poses.iter().zip(&assignments).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(z.r.iter().map(|x| fmt(*x)));
        row.extend(z.q_wxyz().iter().map(|x| fmt(*x)));
        row.push(opt_fmt(*id));
        w.write_record(&row)?;
    }
    w.flush()?;
    let summary = ExploreSummary {
        command: "explore".into(),
        poses: poses.len(),
        regions: atlas.regions.len(),
        assignments,
        labels: atlas.regions.iter().map(|r| r.label.as_ref().map_or("Unknown", |l| l.name()).to_string()).collect(),
    };
    write_json(&job.out.join("summary.json"), &summary)?;
    Ok((atlas, summary))
}

/// Eigendata, or a stiffness matrix (bare or under `"stiffness"`).
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum IdentifyInput {
    Eigendata(Eigendata),
    Stiffness {
        stiffness: StiffnessMatrix,
        #[serde(default = "symmetric")]
        decomposition: Decomposition,
    },
    Matrix(StiffnessMatrix),
}

fn symmetric() -> Decomposition {
    Decomposition::Symmetric
}

impl IdentifyInput {
    pub fn constraint(&self) -> Result<Constraint> {
        match self {
            IdentifyInput::Eigendata(d) => d.to_constraint(),
            IdentifyInput::Stiffness { stiffness, decomposition } => {
                Ok(Constraint::new(decompose(stiffness, *decomposition)?))
            }
            IdentifyInput::Matrix(k) => Ok(Constraint::new(decompose(k, Decomposition::Symmetric)?)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub lambda: f64,
    pub pitch: Option<f64>,
    pub class: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub label: ConstraintLabel,
    pub axes: Vec<AxisReport>,
}

pub fn identify_json(text: &str, th: &ClassifierThresholds) -> Result<IdentifyReport> {
    let input: IdentifyInput = serde_json::from_str(text)
        .map_err(|e| Error::invalid(format!("not eigendata or a 6x6 stiffness matrix: {e}")))?;
    let c = input.constraint()?;
    let axes = c
        .screws
        .iter()
        .map(|s| AxisReport {
            lambda: s.lambda,
            pitch: s.pitch_w.into(),
            class: classify_axis(s, th).cell_name().into(),
        })
        .collect();
    Ok(IdentifyReport { label: identify_constraint(&c, th), axes })
}

fn read_input(p: &Path) -> Result<String> {
    fs::read_to_string(p).map_err(|e| Error::invalid(format!("cannot read {}: {e}", p.display())))
}

pub fn cmd_identify(input: &Path, thresholds: Option<&Path>) -> Result<IdentifyReport> {
    let th = match thresholds {
        Some(p) => {
            let t: ClassifierThresholds = serde_json::from_str(&read_input(p)?)?;
            t.validate()?;
            t
        }
        None => ClassifierThresholds::default(),
    };
    identify_json(&read_input(input)?, &th)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub rows: usize,
    /// Steps whose barrier value is not finite and positive.
    pub violations: Vec<usize>,
}

impl VerifyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the barrier column of a steps log.
pub fn cmd_verify(steps: &Path) -> Result<VerifyReport> {
    let text = read_input(steps)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != STEPS_HEADER {
        return Err(Error::invalid("unexpected steps.csv header"));
    }
    let mut report = VerifyReport { rows: 0, violations: vec![] };
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number `{}` in column {}", &rec[i], STEPS_HEADER[i])))
        };
        let step = parse(0)? as usize;
        let c2 = parse(19)?;
        if !(c2.is_finite() && c2 > 0.0) {
            report.violations.push(step);
        }
        report.rows += 1;
    }
    Ok(report)
}

#[derive(Debug, Parser)]
#[command(name = "flexcon", version, about = "Wrench-only exploration, planning and constraint identification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Drive toward the goal pose under the force and energy constraints.
    Plan(RunArgs),
    /// Build a stiffness-region atlas over a pose script.
    Explore(RunArgs),
    /// Label a stiffness matrix or eigendata file.
    Identify {
        /// Eigendata or stiffness JSON.
        #[arg(long, alias = "config")]
        input: PathBuf,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        /// Also write identify.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the barrier column of a steps.csv.
    Verify {
        #[arg(long)]
        input: PathBuf,
    },
}

/// 2 for malformed input, 1 for run-level failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::UnknownScenario(_) | Error::Json(_) | Error::Csv(_) => 2,
        _ => 1,
    }
}

fn overrides(a: &RunArgs) -> Overrides {
    Overrides { out: a.out.clone(), seed: a.seed, max_steps: a.max_steps }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Plan(a) => {
            let job = Job::load(&a.config, &overrides(&a))?;
            let out = cmd_plan(&job)?;
            if out.summary.termination == Termination::Diverged {
                let consecutive = match out.result.check() {
                    Err(Error::Diverged { consecutive, .. }) => consecutive,
                    _ => 0,
                };
                let diag = serde_json::json!({
                    "error": "diverged",
                    "step": out.summary.steps,
                    "consecutive_increases": consecutive,
                    "final_pose": out.summary.final_pose,
                });
                eprintln!("{diag}");
                return Ok(1);
            }
            print_json(&out.summary)?;
            Ok(0)
        }
        Command::Explore(a) => {
            let job = Job::load(&a.config, &overrides(&a))?;
            let (_, summary) = cmd_explore(&job)?;
            print_json(&summary)?;
            Ok(0)
        }
        Command::Identify { input, thresholds, out } => {
            let report = cmd_identify(&input, thresholds.as_deref())?;
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                write_json(&dir.join("identify.json"), &report)?;
            }
            print_json(&report)?;
            Ok(0)
        }
        Command::Verify { input } => {
            let report = cmd_verify(&input)?;
            print_json(&report)?;
            Ok(if report.ok() { 0 } else { 1 })
        }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_ref_forms() {
        let r: ScenarioRef = serde_json::from_str("\"membrane\"").unwrap();
        assert_eq!(r, ScenarioRef::Name("membrane".into()));
        let r: ScenarioRef = serde_json::from_str(r#"{"name": "planar_triangle", "k": 350.0}"#).unwrap();
        assert!(matches!(r, ScenarioRef::Spec(ScenarioSpec::PlanarTriangle(ref p)) if p.k == 350.0));
        let r: ScenarioRef = serde_json::from_str(r#"{"file": "scene.json"}"#).unwrap();
        assert!(matches!(r, ScenarioRef::File { .. }));
        assert!(matches!(ScenarioRef::Name("nope".into()).resolve(Path::new(".")), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn pose_spec_forms() {
        let p: PoseSpec = serde_json::from_str(r#"{"planar": [0.1, 0.2, 0.0]}"#).unwrap();
        assert_eq!(p.pose(), Pose::planar(0.1, 0.2, 0.0));
        let p: PoseSpec = serde_json::from_str(r#"{"r": [0.1, 0.0, 0.0], "q": [1.0, 0.0, 0.0, 0.0]}"#).unwrap();
        assert_eq!(p.pose(), Pose::translation(0.1, 0.0, 0.0));
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(RunConfig::from_json(r#"{"scenario": "membrane", "bogus": 1}"#).is_err());
        let c = RunConfig::from_json(r#"{"scenario": "membrane", "rng_seed": 9}"#).unwrap();
        assert_eq!(c.sensor_model().rng_seed, 9);
    }

    #[test]
    fn identify_accepts_matrix_forms() {
        let th = ClassifierThresholds::default();
        let rows = "[[1600,0,0,0,0,0],[0,700,0,0,0,0],[0,0,650,0,0,0],[0,0,0,1,0,0],[0,0,0,0,1,0],[0,0,0,0,0,1]]";
        assert_eq!(identify_json(rows, &th).unwrap().label.name(), "LinearSpringConstraint");
        let wrapped = format!(r#"{{"stiffness": {rows}}}"#);
        assert_eq!(identify_json(&wrapped, &th).unwrap().label.name(), "LinearSpringConstraint");
        assert!(matches!(identify_json("[[1, 2]]", &th), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::invalid("x")), 2);
        assert_eq!(exit_code(&Error::Diverged { step: 1, consecutive: 50 }), 1);
        assert_eq!(main_with(["flexcon", "plan"]), 2);
        assert_eq!(main_with(["flexcon", "identify", "--input", "/nonexistent/file.json"]), 2);
    }
}
