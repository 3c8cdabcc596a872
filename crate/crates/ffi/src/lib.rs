//! C ABI over the elastocal stiffness model.
//!
//! Conventions: every fallible function returns an [`EcStatus`]; on failure
//! a message is kept per thread and read with [`ec_last_error_message`].
//! Arrays are caller-allocated, SI units, matrices row-major. Handles come
//! from an `ec_model_*` constructor and are released with [`ec_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use elastocal::compensation::{compensated_target, CompensationOptions, StiffnessModel};
use elastocal::geometry::{fit_link_length, MarkerTrace, TraceSample};
use elastocal::io::project::parse_project;
use elastocal::io::report::load_toml;
use elastocal::model::{forward_kinematics, presets, JointState, Vec3, VirtualDeflections, Wrench};
use elastocal::stiffness::{
    cartesian_stiffness, joint2_equivalent_stiffness, CompensatorGeometry, CompensatorModel, SpringSign,
};
use elastocal::Error;
use nalgebra::Vector6;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidModel = 3,
    JointLimit = 4,
    Singular = 5,
    IllConditioned = 6,
    DegenerateData = 7,
    Parse = 8,
    Io = 9,
    Identification = 10,
    Panic = 99,
}

impl From<&Error> for EcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidModel { .. } => EcStatus::InvalidModel,
            Error::JointLimit { .. } => EcStatus::JointLimit,
            Error::Dimension { .. } | Error::Validation { .. } | Error::MissingInput { .. } => {
                EcStatus::InvalidArgument
            }
            Error::Singular { .. } => EcStatus::Singular,
            Error::Conditioning { .. } | Error::IllConditionedPlan { .. } => EcStatus::IllConditioned,
            Error::DegenerateData(_) | Error::EmptyDataset(_) => EcStatus::DegenerateData,
            Error::Parse { .. } => EcStatus::Parse,
            Error::Io { .. } => EcStatus::Io,
            Error::ModelInconsistency(_)
            | Error::InsufficientGroups { .. }
            | Error::CollinearGroups
            | Error::InfeasiblePlan => EcStatus::Identification,
        }
    }
}

/// Opaque stiffness model: robot, optional compensator, Hessian switch.
pub struct EcModel(StiffnessModel);

/// Compensator parameters, SI. `sign` is +1 or -1.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct EcCompensator {
    pub link_length: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub sign: i32,
    pub spring_stiffness: f64,
    pub free_length: f64,
    pub joint_stiffness: f64,
}

impl EcCompensator {
    fn to_model(self) -> Result<CompensatorModel, Failure> {
        let sign = match self.sign {
            1 => SpringSign::Plus,
            -1 => SpringSign::Minus,
            s => return Err(Failure::argument(format!("compensator sign must be +1 or -1, got {s}"))),
        };
        let geometry = CompensatorGeometry {
            link_length: self.link_length,
            a_x: self.a_x,
            a_y: self.a_y,
            sign,
        };
        Ok(CompensatorModel::new(geometry, self.spring_stiffness, self.free_length, self.joint_stiffness)?)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure {
    status: EcStatus,
    message: String,
}

impl Failure {
    fn null(what: &str) -> Self {
        Failure {
            status: EcStatus::NullPointer,
            message: format!("{what} is NULL"),
        }
    }

    fn argument(message: String) -> Self {
        Failure {
            status: EcStatus::InvalidArgument,
            message,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            status: EcStatus::from(&e),
            message: format!("{}: {e}", e.category()),
        }
    }
}

/// Runs `f`, recording failures and containing panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            EcStatus::Ok
        }
        Ok(Err(failure)) => {
            set_last_error(failure.message);
            failure.status
        }
        Err(panic) => {
            let text = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal error: {text}"));
            EcStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(model: *const EcModel) -> Result<&'a StiffnessModel, Failure> {
    model.as_ref().map(|m| &m.0).ok_or_else(|| Failure::null("model"))
}

unsafe fn slice<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn out_slice<'a>(data: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if data.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn joints(model: &StiffnessModel, q: *const f64, n: usize) -> Result<JointState, Failure> {
    let expected = model.robot.n_joints();
    if n != expected {
        return Err(Failure::argument(format!("expected {expected} joint values, got {n}")));
    }
    Ok(JointState::from_slice(slice(q, n, "q")?))
}

unsafe fn wrench(w: *const f64) -> Result<Wrench, Failure> {
    let w = slice(w, 6, "wrench")?;
    Ok(Wrench::from_vector(&Vector6::from_column_slice(w)))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return Err(Failure::null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure::argument("path is not valid UTF-8".into()))
}

unsafe fn emit(out: *mut *mut EcModel, model: StiffnessModel) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    *out = Box::into_raw(Box::new(EcModel(model)));
    Ok(())
}

/// Nominal model of a project file: robot plus its compensator, if the
/// project gives complete compensator parameters.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_model_from_project(path: *const c_char, out: *mut *mut EcModel) -> EcStatus {
    guard(|| {
        let config = parse_project(path_arg(path)?)?;
        emit(out, StiffnessModel::new(config.robot, config.compensator.model))
    })
}

/// Identified model written by `identify-elastostatics` (`model.toml`).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ec_model_load(path: *const c_char, out: *mut *mut EcModel) -> EcStatus {
    guard(|| {
        let model: StiffnessModel = load_toml(path_arg(path)?)?;
        model.robot.validate()?;
        emit(out, model)
    })
}

/// Built-in heavy 6R model; `compensator` may be NULL.
///
/// # Safety
/// `compensator` must be NULL or point to a valid struct; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ec_model_heavy_6r(compensator: *const EcCompensator, out: *mut *mut EcModel) -> EcStatus {
    guard(|| {
        let comp = match compensator.as_ref() {
            Some(c) => Some(c.to_model()?),
            None => None,
        };
        emit(out, StiffnessModel::new(presets::heavy_6r(), comp))
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must come from an `ec_model_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ec_model_free(model: *mut EcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of joints, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_model_joint_count(model: *const EcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.robot.n_joints())
}

/// Includes the load Hessian in subsequent predictions.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ec_model_set_hessian(model: *mut EcModel, include: bool) -> EcStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| Failure::null("model"))?;
        m.0.include_hessian = include;
        Ok(())
    })
}

/// Rigid tool position (`position[3]`) and rotation (`rotation[9]`).
///
/// # Safety
/// `q` holds `n` values; outputs hold 3 and 9 values.
#[no_mangle]
pub unsafe extern "C" fn ec_forward_kinematics(
    model: *const EcModel,
    q: *const f64,
    n: usize,
    position: *mut f64,
    rotation: *mut f64,
) -> EcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let q = joints(m, q, n)?;
        let pose = forward_kinematics(&m.robot, &q, &VirtualDeflections::zeros(n))?.pose;
        out_slice(position, 3, "position")?.copy_from_slice(pose.position.as_slice());
        let r = out_slice(rotation, 9, "rotation")?;
        let mat = pose.orientation.matrix();
        for i in 0..3 {
            for j in 0..3 {
                r[3 * i + j] = mat[(i, j)];
            }
        }
        Ok(())
    })
}

/// Tool deflection under `wrench[6]` (force, torque): `deflection[6]` is
/// translation then rotation.
///
/// # Safety
/// `q` holds `n` values, `wrench` 6, `deflection` 6.
#[no_mangle]
pub unsafe extern "C" fn ec_predict_deflection(
    model: *const EcModel,
    q: *const f64,
    n: usize,
    wrench: *const f64,
    deflection: *mut f64,
) -> EcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let q = joints(m, q, n)?;
        let d = m.deflection(&q, &self::wrench(wrench)?)?;
        out_slice(deflection, 6, "deflection")?.copy_from_slice(d.as_slice());
        Ok(())
    })
}

/// 6×6 Cartesian stiffness at `q`, row-major into `stiffness[36]`.
/// `wrench` matters only with the Hessian switched on and may be NULL.
///
/// # Safety
/// `q` holds `n` values, `wrench` NULL or 6, `stiffness` 36.
#[no_mangle]
pub unsafe extern "C" fn ec_cartesian_stiffness(
    model: *const EcModel,
    q: *const f64,
    n: usize,
    wrench: *const f64,
    stiffness: *mut f64,
) -> EcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let q = joints(m, q, n)?;
        let w = if wrench.is_null() { Wrench::default() } else { self::wrench(wrench)? };
        let k = cartesian_stiffness(&m.robot, m.comp.as_ref(), &q, &w, m.include_hessian)?.0;
        let out = out_slice(stiffness, 36, "stiffness")?;
        for i in 0..6 {
            for j in 0..6 {
                out[6 * i + j] = k[(i, j)];
            }
        }
        Ok(())
    })
}

/// Equivalent joint-2 stiffness of a compensator at `q2`.
///
/// # Safety
/// `compensator` points to a valid struct; `stiffness` is writable.
#[no_mangle]
pub unsafe extern "C" fn ec_joint2_stiffness(
    compensator: *const EcCompensator,
    q2: f64,
    stiffness: *mut f64,
) -> EcStatus {
    guard(|| {
        let c = compensator.as_ref().ok_or_else(|| Failure::null("compensator"))?.to_model()?;
        let k = joint2_equivalent_stiffness(&c, q2)?;
        *stiffness.as_mut().ok_or_else(|| Failure::null("stiffness"))? = k;
        Ok(())
    })
}

/// Mirror compensation: joint command `corrected_q[n]` that brings the
/// loaded tool onto the rigid target of `q`. `deflection[6]` may be NULL.
/// `refine` iterates the correction.
///
/// # Safety
/// `q` and `corrected_q` hold `n` values, `wrench` 6, `deflection` NULL or 6.
#[no_mangle]
pub unsafe extern "C" fn ec_compensate(
    model: *const EcModel,
    q: *const f64,
    n: usize,
    wrench: *const f64,
    refine: bool,
    corrected_q: *mut f64,
    deflection: *mut f64,
) -> EcStatus {
    guard(|| {
        let m = model_ref(model)?;
        let q = joints(m, q, n)?;
        let options = if refine {
            CompensationOptions::refined()
        } else {
            CompensationOptions::default()
        };
        let c = compensated_target(m, &q, &self::wrench(wrench)?, &options)?;
        out_slice(corrected_q, n, "corrected_q")?.copy_from_slice(c.corrected_q.as_slice());
        if !deflection.is_null() {
            out_slice(deflection, 6, "deflection")?.copy_from_slice(c.deflection.as_slice());
        }
        Ok(())
    })
}

/// Lever length from a marker trace: `q2[count]` angles and `points[3*count]`
/// positions (x, y, z per sample).
///
/// # Safety
/// `q2` holds `count` values, `points` `3 * count`.
#[no_mangle]
pub unsafe extern "C" fn ec_fit_link_length(
    q2: *const f64,
    points: *const f64,
    count: usize,
    link_length: *mut f64,
) -> EcStatus {
    guard(|| {
        let angles = slice(q2, count, "q2")?;
        let xyz = slice(points, 3 * count, "points")?;
        let trace = MarkerTrace {
            marker_id: "P1".into(),
            samples: angles
                .iter()
                .zip(xyz.chunks_exact(3))
                .map(|(&q2, p)| TraceSample {
                    q2,
                    position: Vec3::new(p[0], p[1], p[2]),
                })
                .collect(),
            radius: 0.0,
            phase: 0.0,
        };
        let fit = fit_link_length(&trace)?;
        *link_length.as_mut().ok_or_else(|| Failure::null("link_length"))? = fit.link_length;
        Ok(())
    })
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ec_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn ec_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
