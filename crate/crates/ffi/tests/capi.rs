use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use elastocal::compensation::StiffnessModel;
use elastocal::model::{presets::heavy_6r, JointState, Vec3, Wrench};
use elastocal::stiffness::{predict_deflection, CompensatorGeometry, CompensatorModel, SpringSign};
use elastocal_ffi::*;

const Q: [f64; 6] = [0.3, -1.0, 0.6, 0.4, 1.0, -0.3];
const W: [f64; 6] = [400.0, -300.0, -1500.0, 0.0, 20.0, 0.0];

fn compensator() -> EcCompensator {
    EcCompensator {
        link_length: 0.18472,
        a_x: 0.68593,
        a_y: 0.12330,
        sign: 1,
        spring_stiffness: 1e7,
        free_length: 0.45,
        joint_stiffness: 3e6,
    }
}

fn core_compensator() -> CompensatorModel {
    let geometry = CompensatorGeometry {
        link_length: 0.18472,
        a_x: 0.68593,
        a_y: 0.12330,
        sign: SpringSign::Plus,
    };
    CompensatorModel::new(geometry, 1e7, 0.45, 3e6).unwrap()
}

struct Handle(*mut EcModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { ec_model_free(self.0) }
    }
}

fn model() -> Handle {
    let mut m = ptr::null_mut();
    let c = compensator();
    assert_eq!(unsafe { ec_model_heavy_6r(&c, &mut m) }, EcStatus::Ok);
    Handle(m)
}

fn last_error() -> String {
    let p = ec_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn deflection_matches_core_and_is_linear() {
    let m = model();
    assert_eq!(unsafe { ec_model_joint_count(m.0) }, 6);
    let mut d1 = [0.0; 6];
    let mut d2 = [0.0; 6];
    let w2 = W.map(|v| 2.0 * v);
    unsafe {
        assert_eq!(ec_predict_deflection(m.0, Q.as_ptr(), 6, W.as_ptr(), d1.as_mut_ptr()), EcStatus::Ok);
        assert_eq!(ec_predict_deflection(m.0, Q.as_ptr(), 6, w2.as_ptr(), d2.as_mut_ptr()), EcStatus::Ok);
    }
    let expected = predict_deflection(
        &heavy_6r(),
        Some(&core_compensator()),
        &JointState::from_slice(&Q),
        &Wrench::new(Vec3::new(W[0], W[1], W[2]), Vec3::new(W[3], W[4], W[5])),
        false,
    )
    .unwrap();
    for i in 0..6 {
        assert_eq!(d1[i], expected[i]);
        assert!((d2[i] - 2.0 * d1[i]).abs() <= 1e-12 * d1[i].abs().max(1e-9));
    }
    assert!(ec_last_error_message().is_null());
}

#[test]
fn stiffness_is_symmetric_and_inverts_deflection() {
    let m = model();
    let mut k = [0.0; 36];
    let mut d = [0.0; 6];
    unsafe {
        assert_eq!(ec_cartesian_stiffness(m.0, Q.as_ptr(), 6, ptr::null(), k.as_mut_ptr()), EcStatus::Ok);
        assert_eq!(ec_predict_deflection(m.0, Q.as_ptr(), 6, W.as_ptr(), d.as_mut_ptr()), EcStatus::Ok);
    }
    for i in 0..6 {
        for j in 0..6 {
            let (a, b) = (k[6 * i + j], k[6 * j + i]);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0));
        }
        let f: f64 = (0..6).map(|j| k[6 * i + j] * d[j]).sum();
        assert!((f - W[i]).abs() <= 1e-6 * 1500.0, "row {i}: {f} vs {}", W[i]);
    }
}

#[test]
fn forward_kinematics_returns_rotation_matrix() {
    let m = model();
    let mut p = [0.0; 3];
    let mut r = [0.0; 9];
    unsafe {
        assert_eq!(ec_forward_kinematics(m.0, Q.as_ptr(), 6, p.as_mut_ptr(), r.as_mut_ptr()), EcStatus::Ok);
    }
    let rot = nalgebra::Matrix3::from_row_slice(&r);
    assert!((rot.transpose() * rot - nalgebra::Matrix3::identity()).norm() < 1e-12);
    assert!((rot.determinant() - 1.0).abs() < 1e-12);
    assert!(p.iter().all(|v| v.is_finite()));
}

#[test]
fn joint2_stiffness_without_spring_is_intrinsic() {
    let mut c = compensator();
    c.spring_stiffness = 0.0;
    let mut k = 0.0;
    assert_eq!(unsafe { ec_joint2_stiffness(&c, -0.7, &mut k) }, EcStatus::Ok);
    assert_eq!(k, 3e6);
}

#[test]
fn compensation_refined_lands_on_target() {
    let m = model();
    let mut cq = [0.0; 6];
    let mut d = [0.0; 6];
    unsafe {
        assert_eq!(
            ec_compensate(m.0, Q.as_ptr(), 6, W.as_ptr(), true, cq.as_mut_ptr(), d.as_mut_ptr()),
            EcStatus::Ok
        );
    }
    let core = StiffnessModel::new(heavy_6r(), Some(core_compensator()));
    let w = Wrench::new(Vec3::new(W[0], W[1], W[2]), Vec3::new(W[3], W[4], W[5]));
    let loaded = core.loaded_pose(&JointState::from_slice(&cq), &w).unwrap();
    let mut p = [0.0; 3];
    let mut r = [0.0; 9];
    unsafe { ec_forward_kinematics(m.0, Q.as_ptr(), 6, p.as_mut_ptr(), r.as_mut_ptr()) };
    // Refinement stops at its 1e-7 m tolerance.
    assert!((loaded.position - Vec3::from(p)).norm() < 1e-7);
    assert!(Vec3::new(d[0], d[1], d[2]).norm() > 1e-4);
}

#[test]
fn link_length_from_circle() {
    let l = 0.18472;
    let q2: Vec<f64> = (0..6).map(|i| -(i as f64) * 0.4).collect();
    let pts: Vec<f64> = q2
        .iter()
        .flat_map(|&q| [0.3 + l * q.cos(), -0.1, 0.7 + l * q.sin()])
        .collect();
    let mut out = 0.0;
    assert_eq!(unsafe { ec_fit_link_length(q2.as_ptr(), pts.as_ptr(), q2.len(), &mut out) }, EcStatus::Ok);
    assert!((out - l).abs() < 1e-12);
}

#[test]
fn failures_set_status_and_message() {
    let m = model();
    let mut d = [0.0; 6];
    unsafe {
        assert_eq!(ec_predict_deflection(ptr::null(), Q.as_ptr(), 6, W.as_ptr(), d.as_mut_ptr()), EcStatus::NullPointer);
        assert!(last_error().contains("model"));
        assert_eq!(ec_predict_deflection(m.0, Q.as_ptr(), 5, W.as_ptr(), d.as_mut_ptr()), EcStatus::InvalidArgument);
        assert!(last_error().contains("expected 6"));
        let far = [0.0, 9.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(ec_predict_deflection(m.0, far.as_ptr(), 6, W.as_ptr(), d.as_mut_ptr()), EcStatus::JointLimit);

        let mut bad = compensator();
        bad.sign = 0;
        let mut h = ptr::null_mut();
        assert_eq!(ec_model_heavy_6r(&bad, &mut h), EcStatus::InvalidArgument);
        assert!(h.is_null());
        bad = compensator();
        bad.link_length = -1.0;
        assert_eq!(ec_model_heavy_6r(&bad, &mut h), EcStatus::InvalidModel);

        let missing = CString::new("/nonexistent/project.toml").unwrap();
        assert_eq!(ec_model_from_project(missing.as_ptr(), &mut h), EcStatus::Io);
        ec_model_free(ptr::null_mut());
    }
}

#[test]
fn models_load_from_files() {
    let project = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/project.toml");
    let path = CString::new(project.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ec_model_from_project(path.as_ptr(), &mut h) }, EcStatus::Ok);
    let from_project = Handle(h);

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("model.toml");
    elastocal::io::report::save_toml(&file, &StiffnessModel::new(heavy_6r(), Some(core_compensator()))).unwrap();
    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { ec_model_load(path.as_ptr(), &mut h) }, EcStatus::Ok);
    let loaded = Handle(h);

    let (mut a, mut b) = ([0.0; 6], [0.0; 6]);
    unsafe {
        ec_predict_deflection(from_project.0, Q.as_ptr(), 6, W.as_ptr(), a.as_mut_ptr());
        ec_predict_deflection(loaded.0, Q.as_ptr(), 6, W.as_ptr(), b.as_mut_ptr());
    }
    // Same robot and compensator, up to unit conversion of the inputs.
    for i in 0..6 {
        assert!((a[i] - b[i]).abs() <= 1e-9 * a[i].abs().max(1e-9));
    }
}

#[test]
fn version_is_static_text() {
    let v = unsafe { CStr::from_ptr(ec_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/elastocal.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "ec_model_from_project",
        "ec_model_load",
        "ec_model_heavy_6r",
        "ec_model_free",
        "ec_model_joint_count",
        "ec_model_set_hessian",
        "ec_forward_kinematics",
        "ec_predict_deflection",
        "ec_cartesian_stiffness",
        "ec_joint2_stiffness",
        "ec_compensate",
        "ec_fit_link_length",
        "ec_last_error_message",
        "ec_version",
        "typedef struct EcModel EcModel",
        "EC_STATUS_OK = 0",
    ] {
        assert!(text.contains(f), "header lacks {f}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"elastocal.h\"\nint main(void) { return ec_version() == 0; }\n").unwrap();
    match Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler; header syntax check skipped"),
    }
}
