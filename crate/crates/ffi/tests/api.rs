//! Calls through the C ABI from Rust.

use std::ffi::{c_char, CStr, CString};
use std::ptr;

use extragrad_ffi::*;

const TINY: &str = r#"{
    "agents": [
        {"dim": 1, "objective": {"kind": "quadratic", "Q": [[1.0]], "q": [0.0]},
         "A": [[1.0]], "b": [1.0], "box": {"lower": [-5.0], "upper": [5.0]}},
        {"dim": 1, "objective": {"kind": "quadratic", "Q": [[1.0]], "q": [0.0]},
         "A": [[1.0]], "b": [1.0], "box": {"lower": [-5.0], "upper": [5.0]}}
    ],
    "graph": {"nodes": 2, "edges": [[0, 1]]}
}"#;

fn last_error() -> String {
    unsafe { CStr::from_ptr(xg_last_error()) }.to_str().unwrap().to_owned()
}

fn parse(text: &str) -> (XgStatus, *mut XgProblem) {
    let text = CString::new(text).unwrap();
    let mut p = ptr::null_mut();
    let status = unsafe { xg_problem_parse(text.as_ptr(), false, &mut p) };
    (status, p)
}

fn take_string(s: *mut c_char) -> String {
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { xg_string_free(s) };
    out
}

#[test]
fn solve_round_trip() {
    let (status, p) = parse(TINY);
    assert_eq!(status, XgStatus::Ok);
    unsafe {
        assert_eq!(xg_problem_agent_count(p), 2);
        assert_eq!(xg_problem_private_dim(p), 2);
        assert_eq!(xg_problem_shared_dim(p), 0);

        let mut config = xg_config_default();
        config.max_iters = 100_000;
        config.record_every = 1000;
        let mut r = ptr::null_mut();
        assert_eq!(xg_solve(p, &config, &mut r), XgStatus::Ok, "{}", last_error());
        assert_eq!(xg_result_iterations(r), 100_000);
        assert!(xg_result_step_size(r) > 0.0);

        let mut needed = 0usize;
        let mut x = [0.0; 2];
        assert_eq!(xg_result_x(r, x.as_mut_ptr(), x.len(), &mut needed), XgStatus::Ok);
        assert_eq!(needed, 2);
        for v in x {
            assert!((v - 1.0).abs() < 1e-3, "{x:?}");
        }
        assert_eq!(xg_result_xt(r, ptr::null_mut(), 0, &mut needed), XgStatus::Ok);
        assert_eq!(needed, 0);

        assert_eq!(xg_result_trace_len(r), 101);
        let mut row = XgTraceRow::default();
        assert_eq!(xg_result_trace_row(r, 100, &mut row), XgStatus::Ok);
        assert_eq!(row.iter, 100_000);
        assert!(row.eq_residual < 1e-3);

        // the CSV matches an in-process run with the same settings
        let mut csv = ptr::null_mut();
        assert_eq!(xg_result_trace_csv(r, &mut csv), XgStatus::Ok);
        let spec = match extragrad::instance::parse_instance(TINY).unwrap() {
            extragrad::instance::Instance::Problem(s) => s,
            _ => unreachable!(),
        };
        let cfg = extragrad::SolverConfig {
            record_every: 1000,
            ..extragrad::SolverConfig::with_iters(100_000)
        };
        assert_eq!(take_string(csv), extragrad::run(&spec, &cfg).unwrap().trace.to_csv());

        let mut objective = f64::NAN;
        let mut xs = [0.0; 2];
        assert_eq!(
            xg_oracle_solve(p, &mut objective, xs.as_mut_ptr(), 2, ptr::null_mut(), 0),
            XgStatus::Ok
        );
        assert!((objective - 1.0).abs() < 1e-12);
        assert!(xs.iter().all(|v| (v - 1.0).abs() < 1e-12));

        let mut text = ptr::null_mut();
        assert_eq!(xg_problem_constants(p, &mut text), XgStatus::Ok);
        assert!(take_string(text).lines().any(|l| l == "L_yy=0"));

        xg_result_free(r);
        xg_problem_free(p);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let (status, p) = parse("{\"buses\": 1}");
    assert_eq!(status, XgStatus::InvalidInstance);
    assert!(p.is_null());
    assert!(last_error().contains("dc-opf"), "{}", last_error());

    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(xg_problem_parse(ptr::null(), false, &mut out), XgStatus::NullPointer);
        assert_eq!(xg_solve(ptr::null(), ptr::null(), &mut ptr::null_mut()), XgStatus::NullPointer);

        let missing = CString::new("/nonexistent/instance.json").unwrap();
        assert_eq!(xg_problem_load(missing.as_ptr(), false, &mut out), XgStatus::Io);

        let mut p = ptr::null_mut();
        assert_eq!(xg_problem_random(2, &mut p), XgStatus::Ok);
        let mut config = xg_config_default();
        config.max_iters = 50;
        config.step = 1e300;
        let mut r = ptr::null_mut();
        assert_eq!(xg_solve(p, &config, &mut r), XgStatus::Divergence);
        assert!(r.is_null());
        config.step = -1.0;
        assert_eq!(xg_solve(p, &config, &mut r), XgStatus::InvalidArgument);

        config.step = 0.0;
        assert_eq!(xg_solve(p, &config, &mut r), XgStatus::Ok);
        assert!(last_error().is_empty());
        let mut needed = 0;
        let mut small = [0.0; 1];
        assert_eq!(
            xg_result_x(r, small.as_mut_ptr(), 1, &mut needed),
            XgStatus::InvalidArgument
        );
        assert_eq!(needed, xg_problem_private_dim(p));
        let mut row = XgTraceRow::default();
        assert_eq!(xg_result_trace_row(r, 99, &mut row), XgStatus::InvalidArgument);
        xg_result_free(r);
        xg_problem_free(p);
        xg_problem_free(ptr::null_mut());
        xg_string_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_the_package() {
    let v = unsafe { CStr::from_ptr(xg_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
