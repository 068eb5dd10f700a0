use std::ffi::{CStr, CString};
use std::ptr;

use hybrid_tem_ffi::*;

const CONFIG: &str = r#"
[model]
rho = 2.0
theta = 1.25
generator = [-2.0, 2.0, 1.0, -1.0]

[[model.regimes]]
alpha_m1 = 0.3
alpha_0 = 0.2
alpha_1 = 0.1
alpha_2 = 0.5
alpha_3 = 1.0

[[model.regimes]]
alpha_m1 = 0.2
alpha_0 = 0.3
alpha_1 = 0.2
alpha_2 = 0.6
alpha_3 = 2.0

[truncation]
psi_exponent = 0.6666666666666666
mu = "quadratic3"

[simulation]
delta = 0.01
horizon = 1.0
num_paths = 10
seed = 1
"#;

fn model() -> *mut TemModel {
    let text = CString::new(CONFIG).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { tem_model_from_toml(text.as_ptr(), &mut m) }, TemStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = tem_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn grid_and_path() {
    let m = model();
    let mut g = TemGrid::default();
    assert_eq!(unsafe { tem_model_grid(m, &mut g) }, TemStatus::Ok);
    assert_eq!((g.delay_steps, g.num_steps), (100, 100));
    assert!((g.delta_star - 0.19245).abs() < 1e-4);

    let mut needed = 0;
    let s = unsafe { tem_simulate_path(m, 1, 0, ptr::null_mut(), 0, &mut needed) };
    assert_eq!((s, needed), (TemStatus::BufferTooSmall, 101));

    let mut a = vec![0.0; needed];
    let mut b = vec![0.0; needed];
    unsafe {
        assert_eq!(tem_simulate_path(m, 1, 0, a.as_mut_ptr(), a.len(), ptr::null_mut()), TemStatus::Ok);
        assert_eq!(tem_simulate_path(m, 1, 0, b.as_mut_ptr(), b.len(), ptr::null_mut()), TemStatus::Ok);
        tem_model_free(m);
    }
    assert_eq!(a, b);
    assert_eq!(a[0], 0.02);
}

#[test]
fn prices() {
    let m = model();
    let mut bond = TemEstimate::default();
    let mut knocked = TemEstimate::default();
    unsafe {
        assert_eq!(tem_price_bond(m, 200, 3, &mut bond), TemStatus::Ok);
        assert_eq!(tem_price_barrier(m, 0.0, 0.02, 50, 3, &mut knocked), TemStatus::Ok);
        assert_eq!(tem_price_barrier(m, -1.0, 0.02, 50, 3, &mut knocked), TemStatus::Domain);
        tem_model_free(m);
    }
    assert!(bond.estimate > 0.0 && bond.estimate < 1.0);
    assert_eq!(bond.num_paths, 200);
    assert!(bond.ci_low < bond.estimate && bond.estimate < bond.ci_high);
    assert_eq!((knocked.estimate, knocked.std_error), (0.0, 0.0));
}

#[test]
fn transition_matrix() {
    let g = [-2.0, 2.0, 1.0, -1.0];
    let mut p = [0.0; 4];
    assert_eq!(unsafe { tem_transition_matrix(g.as_ptr(), 2, 1e-3, p.as_mut_ptr()) }, TemStatus::Ok);
    assert!((p[0] - 0.998_002_997_002_248_7).abs() < 1e-15);
    assert!((p[2] - 0.000_998_501_498_875_675).abs() < 1e-15);

    let bad = [-2.0, 1.0, 1.0, -1.0];
    assert_eq!(unsafe { tem_transition_matrix(bad.as_ptr(), 2, 1e-3, p.as_mut_ptr()) }, TemStatus::Config);
    assert!(last_error().contains("row"), "{}", last_error());
}

#[test]
fn errors() {
    let mut m = ptr::null_mut();
    let empty = CString::new("").unwrap();
    assert_eq!(unsafe { tem_model_from_toml(empty.as_ptr(), &mut m) }, TemStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("missing field `model`"));
    assert_eq!(unsafe { tem_model_from_toml(ptr::null(), &mut m) }, TemStatus::NullPointer);
    let mut g = TemGrid::default();
    assert_eq!(unsafe { tem_model_grid(ptr::null(), &mut g) }, TemStatus::NullPointer);
    unsafe { tem_model_free(ptr::null_mut()) };

    let big_step = CString::new(CONFIG.replace("delta = 0.01", "delta = 0.5")).unwrap();
    assert_eq!(unsafe { tem_model_from_toml(big_step.as_ptr(), &mut m) }, TemStatus::Ok);
    let mut est = TemEstimate::default();
    assert_eq!(unsafe { tem_price_bond(m, 10, 1, &mut est) }, TemStatus::Domain);
    assert!(last_error().contains("exceeds the admissible bound"), "{}", last_error());
    unsafe { tem_model_free(m) };
}

#[test]
fn config_echo() {
    let m = model();
    let needed = unsafe { tem_model_config(m, ptr::null_mut(), 0) };
    let mut buf = vec![0 as std::ffi::c_char; needed + 1];
    assert_eq!(unsafe { tem_model_config(m, buf.as_mut_ptr(), buf.len()) }, needed);
    let text = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert!(text.contains("mu = \"quadratic3\""));
    unsafe { tem_model_free(m) };
}
