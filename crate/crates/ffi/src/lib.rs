//! C ABI over `flexcon`.
//!
//! Every fallible call returns an [`FcStatus`]; on failure a message is kept
//! per thread and read with [`fc_last_error`]. Handles are opaque and owned by
//! the caller until passed to the matching `_free`. Strings returned through
//! `char **` are released with [`fc_string_free`].
//!
//! Poses cross the boundary as 7 doubles `[x, y, z, qw, qx, qy, qz]`, wrenches
//! as 6 doubles `[fx, fy, fz, mx, my, mz]`, and 6×6 matrices as 36 doubles in
//! row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::{Matrix6, Quaternion, UnitQuaternion, Vector3};

use flexcon::classifier::ClassifierThresholds;
use flexcon::cli::{identify_json, RunConfig, ScenarioRef};
use flexcon::env::{elastic_energy, make_scenario, reaction_wrench, ScenarioKind, ScenarioSpec, Scene, SensedScene};
use flexcon::explorer::{Atlas, ExplorerConfig};
use flexcon::planner::run;
use flexcon::screw::{Pose, UNIT_TOL};
use flexcon::stiffness::{decompose, probe_stiffness, Decomposition, ProbeConfig, StiffnessMatrix};
use flexcon::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    SingularGeometry = 3,
    LowSignal = 4,
    Decomposition = 5,
    Diverged = 6,
    UnknownScenario = 7,
    Io = 8,
    Json = 9,
    Csv = 10,
    Panic = 11,
}

impl From<&Error> for FcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => FcStatus::InvalidInput,
            Error::SingularGeometry(_) => FcStatus::SingularGeometry,
            Error::LowSignal { .. } => FcStatus::LowSignal,
            Error::Decomposition(_) => FcStatus::Decomposition,
            Error::Diverged { .. } => FcStatus::Diverged,
            Error::UnknownScenario(_) => FcStatus::UnknownScenario,
            Error::Io(_) => FcStatus::Io,
            Error::Json(_) => FcStatus::Json,
            Error::Csv(_) => FcStatus::Csv,
        }
    }
}

/// Decomposition route for [`fc_decompose`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcDecomposition {
    Pencil = 0,
    Symmetric = 1,
}

/// Opaque scene handle.
pub struct FcScene(Scene);

/// Opaque atlas handle.
pub struct FcAtlas(Atlas);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(Error::Json(e))
    }
}

type FfiResult = std::result::Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> FcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FcStatus::Ok
        }
        Ok(Err(Failure::Null(name))) => {
            set_error(&format!("null pointer: {name}"));
            FcStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            FcStatus::from(&e)
        }
        Err(_) => {
            set_error("internal panic");
            FcStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> std::result::Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn non_null_mut<'a, T>(p: *mut T, name: &'static str) -> std::result::Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn read_array<const N: usize>(p: *const f64, name: &'static str) -> std::result::Result<[f64; N], Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    let mut out = [0.0; N];
    unsafe { ptr::copy_nonoverlapping(p, out.as_mut_ptr(), N) };
    Ok(out)
}

fn write_array(p: *mut f64, v: &[f64], name: &'static str) -> FfiResult {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    unsafe { ptr::copy_nonoverlapping(v.as_ptr(), p, v.len()) };
    Ok(())
}

fn read_str<'a>(p: *const c_char, name: &'static str) -> std::result::Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| Error::invalid(format!("{name} is not UTF-8")).into())
}

fn write_string(out: *mut *mut c_char, s: String) -> FfiResult {
    if out.is_null() {
        return Err(Failure::Null("out"));
    }
    let c = CString::new(s).map_err(|_| Error::invalid("output contains NUL"))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn read_pose(p: *const f64) -> std::result::Result<Pose, Failure> {
    let v = read_array::<7>(p, "pose")?;
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("pose must be finite").into());
    }
    let q = Quaternion::new(v[3], v[4], v[5], v[6]);
    if (q.norm() - 1.0).abs() > UNIT_TOL {
        return Err(Error::invalid(format!("quaternion norm {} is not unit", q.norm())).into());
    }
    Ok(Pose::new(Vector3::new(v[0], v[1], v[2]), UnitQuaternion::from_quaternion(q)))
}

fn read_matrix(p: *const f64) -> std::result::Result<StiffnessMatrix, Failure> {
    let v = read_array::<36>(p, "stiffness")?;
    Ok(StiffnessMatrix::new(Matrix6::from_row_slice(&v))?)
}

fn matrix_rows(k: &StiffnessMatrix) -> Vec<f64> {
    k.rows().into_iter().flatten().collect()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `fc_` call on the same thread.
#[no_mangle]
pub extern "C" fn fc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a default scenario by name (`planar_triangle`, `line_spring`,
/// `flexible_hinge`, `membrane`).
#[no_mangle]
pub extern "C" fn fc_scene_new(name: *const c_char, out: *mut *mut FcScene) -> FcStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let kind: ScenarioKind = read_str(name, "name")?.parse()?;
        let scene = make_scenario(&ScenarioSpec::default_for(kind))?;
        *out = Box::into_raw(Box::new(FcScene(scene)));
        Ok(())
    })
}

/// Builds a scene from scene JSON or scenario-parameter JSON.
#[no_mangle]
pub extern "C" fn fc_scene_from_json(json: *const c_char, out: *mut *mut FcScene) -> FcStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let text = read_str(json, "json")?;
        let scene = match Scene::from_json(text) {
            Ok(s) => s,
            Err(_) => make_scenario(&serde_json::from_str::<ScenarioSpec>(text)?)?,
        };
        *out = Box::into_raw(Box::new(FcScene(scene)));
        Ok(())
    })
}

/// # Safety
/// `scene` must come from `fc_scene_new`/`fc_scene_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fc_scene_free(scene: *mut FcScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Noise-free reaction wrench at `pose`, written to `out_wrench[6]`.
#[no_mangle]
pub extern "C" fn fc_scene_reaction_wrench(scene: *const FcScene, pose: *const f64, out_wrench: *mut f64) -> FcStatus {
    guard(|| {
        let scene = non_null(scene, "scene")?;
        let w = reaction_wrench(&scene.0, &read_pose(pose)?)?;
        write_array(out_wrench, w.to_vector().as_slice(), "out_wrench")
    })
}

/// Elastic energy stored at `pose`.
#[no_mangle]
pub extern "C" fn fc_scene_energy(scene: *const FcScene, pose: *const f64, out_energy: *mut f64) -> FcStatus {
    guard(|| {
        let scene = non_null(scene, "scene")?;
        let e = elastic_energy(&scene.0, &read_pose(pose)?)?;
        *non_null_mut(out_energy, "out_energy")? = e;
        Ok(())
    })
}

/// Stiffness at `pose` from noise-free ± probes with the default probe settings.
#[no_mangle]
pub extern "C" fn fc_scene_probe_stiffness(scene: *const FcScene, pose: *const f64, out_k: *mut f64) -> FcStatus {
    guard(|| {
        let scene = non_null(scene, "scene")?;
        let k = probe_stiffness(&scene.0, &read_pose(pose)?, &ProbeConfig::default())?;
        write_array(out_k, &matrix_rows(&k), "out_k")
    })
}

/// Eigenscrews of `k[36]`. Writes up to six `λ` to `out_lambda[6]` and the
/// matching unit screws as rows of `out_axes[36]`; `out_count` receives how many.
#[no_mangle]
pub extern "C" fn fc_decompose(
    k: *const f64,
    mode: FcDecomposition,
    out_lambda: *mut f64,
    out_axes: *mut f64,
    out_count: *mut usize,
) -> FcStatus {
    guard(|| {
        let k = read_matrix(k)?;
        let mode = match mode {
            FcDecomposition::Pencil => Decomposition::Pencil,
            FcDecomposition::Symmetric => Decomposition::Symmetric,
        };
        let screws = decompose(&k, mode)?;
        let lambdas: Vec<f64> = screws.iter().map(|s| s.lambda).collect();
        let axes: Vec<f64> = screws.iter().flat_map(|s| s.e.to_vector().iter().copied().collect::<Vec<_>>()).collect();
        write_array(out_lambda, &lambdas, "out_lambda")?;
        write_array(out_axes, &axes, "out_axes")?;
        *non_null_mut(out_count, "out_count")? = screws.len();
        Ok(())
    })
}

/// Labels eigendata or stiffness JSON; `thresholds_json` may be null for the defaults.
/// The report JSON is returned through `out_json`.
#[no_mangle]
pub extern "C" fn fc_identify(
    input_json: *const c_char,
    thresholds_json: *const c_char,
    out_json: *mut *mut c_char,
) -> FcStatus {
    guard(|| {
        let th = if thresholds_json.is_null() {
            ClassifierThresholds::default()
        } else {
            serde_json::from_str(read_str(thresholds_json, "thresholds_json")?)?
        };
        th.validate()?;
        let report = identify_json(read_str(input_json, "input_json")?, &th)?;
        write_string(out_json, serde_json::to_string(&report)?)
    })
}

/// Runs the planner for a run config (same schema as the `plan` command) and
/// returns the full result, step logs included, as JSON. Scenario files resolve
/// against the working directory; nothing is written to disk.
#[no_mangle]
pub extern "C" fn fc_plan(config_json: *const c_char, out_json: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let cfg = RunConfig::from_json(read_str(config_json, "config_json")?)?;
        let goal = cfg.goal.ok_or_else(|| Error::invalid("plan needs a goal pose"))?.pose();
        let scene = ScenarioRef::resolve(&cfg.scenario, Path::new("."))?;
        let source = SensedScene::new(&scene, cfg.sensor_model())?;
        let result = run(source, &cfg.start_pose(), &goal, &cfg.planner_config())?.check()?;
        write_string(out_json, serde_json::to_string(&result)?)
    })
}

#[no_mangle]
pub extern "C" fn fc_atlas_new() -> *mut FcAtlas {
    Box::into_raw(Box::new(FcAtlas(Atlas::new())))
}

/// # Safety
/// `atlas` must come from `fc_atlas_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fc_atlas_free(atlas: *mut FcAtlas) {
    if !atlas.is_null() {
        drop(Box::from_raw(atlas));
    }
}

/// Feeds one pose and its stiffness to the atlas. `explorer_json` and
/// `thresholds_json` may be null for the defaults. `out_region` receives the
/// assigned region id, or 0 while the pose is pending.
#[no_mangle]
pub extern "C" fn fc_atlas_explore_step(
    atlas: *mut FcAtlas,
    pose: *const f64,
    k: *const f64,
    explorer_json: *const c_char,
    thresholds_json: *const c_char,
    out_region: *mut u32,
) -> FcStatus {
    guard(|| {
        let atlas = non_null_mut(atlas, "atlas")?;
        let out_region = non_null_mut(out_region, "out_region")?;
        let cfg: ExplorerConfig = if explorer_json.is_null() {
            ExplorerConfig::default()
        } else {
            serde_json::from_str(read_str(explorer_json, "explorer_json")?)?
        };
        let th: ClassifierThresholds = if thresholds_json.is_null() {
            ClassifierThresholds::default()
        } else {
            serde_json::from_str(read_str(thresholds_json, "thresholds_json")?)?
        };
        th.validate()?;
        let id = atlas.0.explore_step(&read_pose(pose)?, &read_matrix(k)?, &cfg, &th)?;
        *out_region = id.unwrap_or(0);
        Ok(())
    })
}

/// Number of regions, or 0 for a null handle.
#[no_mangle]
pub extern "C" fn fc_atlas_region_count(atlas: *const FcAtlas) -> usize {
    non_null(atlas, "atlas").map_or(0, |a| a.0.regions.len())
}

#[no_mangle]
pub extern "C" fn fc_atlas_to_json(atlas: *const FcAtlas, out_json: *mut *mut c_char) -> FcStatus {
    guard(|| {
        let atlas = non_null(atlas, "atlas")?;
        write_string(out_json, atlas.0.to_json()?)
    })
}
