use std::ffi::{CStr, CString};
use std::ptr;

use taskfetch_ffi::*;

fn last_error() -> String {
    let p = tf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn solve_and_query_reduced_model() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(tf_model_new_reduced(1.0, 1.0, &mut model), TfStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(tf_solve(model, 2.0, 4, 4, 0.0, 0, &mut sol), TfStatus::Ok);
        let mut v = 0.0;
        assert_eq!(tf_solution_value(sol, 0, 1, 0, 0, &mut v), TfStatus::Ok);
        assert!((v - 2.0).abs() < 1e-12);
        assert_eq!(tf_solution_value(sol, 1, 0, 0, 0, &mut v), TfStatus::Ok);
        assert!((v - 1.0).abs() < 1e-12);
        let mut a = TfAction::NoFetch;
        assert_eq!(tf_solution_action(sol, 3, 0, 0, 0, &mut a), TfStatus::Ok);
        assert_eq!(a, TfAction::Fetch);
        let mut iters = 0;
        assert_eq!(tf_solution_iterations(sol, &mut iters), TfStatus::Ok);
        assert!(iters >= 1);

        assert_eq!(tf_solution_value(sol, 9, 0, 0, 0, &mut v), TfStatus::OutOfGrid);
        assert!(last_error().contains("outside"));
        assert_eq!(tf_solution_value(sol, 1, 0, 0, 0, &mut v), TfStatus::Ok);
        assert!(tf_last_error_message().is_null());

        tf_solution_free(sol);
        tf_model_free(model);
        tf_solution_free(ptr::null_mut());
        tf_model_free(ptr::null_mut());
    }
}

#[test]
fn two_state_values_match_the_core_solver() {
    use taskfetch::{solve_full, CostParams, Fsmc, Grid, SolveOptions, TandemModel};
    let core = TandemModel::new(
        Fsmc::two_state(0.9, 0.9, 0.9, 0.1).unwrap(),
        Fsmc::two_state(0.5, 0.5, 0.3, 0.9).unwrap(),
    )
    .unwrap();
    let (vf, _) =
        solve_full(&core, CostParams::new(3.0).unwrap(), Grid::new(5, 5), SolveOptions::default())
            .unwrap();
    unsafe {
        let mut model = ptr::null_mut();
        let st = tf_model_new_two_state(0.9, 0.9, 0.9, 0.1, 0.5, 0.5, 0.3, 0.9, &mut model);
        assert_eq!(st, TfStatus::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(tf_solve(model, 3.0, 5, 5, 1e-9, 0, &mut sol), TfStatus::Ok);
        for (b1, b2, j, m) in [(5, 5, 0, 1), (2, 0, 1, 0), (0, 3, 1, 1)] {
            let mut v = 0.0;
            assert_eq!(tf_solution_value(sol, b1, b2, j, m, &mut v), TfStatus::Ok);
            assert_eq!(v, vf.value(b1, b2, j, m).unwrap());
        }
        tf_solution_free(sol);
        tf_model_free(model);
    }
}

#[test]
fn invalid_inputs_map_to_status_codes() {
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(tf_model_new_reduced(1.5, 0.5, &mut model), TfStatus::InvalidModel);
        assert!(model.is_null());
        assert!(!last_error().is_empty());
        assert_eq!(tf_model_new_reduced(0.5, 0.5, ptr::null_mut()), TfStatus::NullPointer);

        let mut sol = ptr::null_mut();
        assert_eq!(tf_solve(ptr::null(), 1.0, 2, 2, 0.0, 0, &mut sol), TfStatus::NullPointer);
        assert_eq!(tf_model_new_reduced(0.2, 0.3, &mut model), TfStatus::Ok);
        assert_eq!(tf_solve(model, 0.5, 2, 2, 0.0, 0, &mut sol), TfStatus::InvalidArgument);
        tf_model_free(model);
        let st = tf_model_new_two_state(0.9, 0.8, 0.9, 0.2, 0.6, 0.6, 0.3, 0.9, &mut model);
        assert_eq!(st, TfStatus::Ok);
        assert_eq!(tf_solve(model, 2.0, 30, 30, 1e-12, 1, &mut sol), TfStatus::NotConverged);
        assert!(sol.is_null());
        tf_model_free(model);

        let mut x = 0.0;
        assert_eq!(tf_cost_never_fetch(1, 1, 0.0, 0.5, 1.0, &mut x), TfStatus::InvalidModel);
    }
}

#[test]
fn closed_forms_through_the_abi() {
    unsafe {
        let mut x = 0.0;
        assert_eq!(tf_cost_never_fetch(0, 2, 0.6, 0.8, 2.0, &mut x), TfStatus::Ok);
        assert!((x - taskfetch::closed_form::cost_never_fetch(0, 2, 0.6, 0.8, 2.0)).abs() < 1e-12);
        let mut exact = 0.0;
        let mut fluid = 0.0;
        assert_eq!(tf_cost_always_fetch(10, 10, 0.6, 0.8, 1.2, &mut exact), TfStatus::Ok);
        assert_eq!(tf_cost_always_fetch_fluid(10, 10, 0.6, 0.8, 1.2, &mut fluid), TfStatus::Ok);
        assert!(((fluid - exact) / exact).abs() < 0.1);
        let mut p = -1.0;
        assert_eq!(tf_rand_hold_probability(5, 0, 0.6, 0.8, 1.2, &mut p), TfStatus::Ok);
        assert_eq!(p, 0.0);
        assert_eq!(tf_rand_hold_probability(5, 3, 0.6, 0.8, 1.2, &mut p), TfStatus::Ok);
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn simulation_summary() {
    let preset = CString::new("fast_ds08_dmu167").unwrap();
    let never = CString::new("never").unwrap();
    let bogus = CString::new("greedy").unwrap();
    unsafe {
        let mut a = TfSummary::default();
        let mut b = TfSummary::default();
        let st = tf_simulate_preset(preset.as_ptr(), never.as_ptr(), 5.0, 200, 3, &mut a);
        assert_eq!(st, TfStatus::Ok);
        assert_eq!(a.episodes, 200);
        assert!(a.ci_d.is_finite() && a.ci_d > 0.0);
        tf_simulate_preset(preset.as_ptr(), never.as_ptr(), 5.0, 200, 3, &mut b);
        assert_eq!(a, b);

        let mut one = TfSummary::default();
        tf_simulate_preset(preset.as_ptr(), never.as_ptr(), 5.0, 1, 3, &mut one);
        assert!(one.ci_cost.is_nan());

        let st = tf_simulate_preset(preset.as_ptr(), bogus.as_ptr(), 5.0, 10, 3, &mut a);
        assert_eq!(st, TfStatus::InvalidArgument);
        assert!(last_error().contains("greedy"));
        let st = tf_simulate_preset(ptr::null(), never.as_ptr(), 5.0, 10, 3, &mut a);
        assert_eq!(st, TfStatus::NullPointer);
    }
}

#[test]
fn header_declares_every_export() {
    let header = include_str!("../include/taskfetch.h");
    for sym in [
        "tf_last_error_message",
        "tf_version",
        "tf_model_new_reduced",
        "tf_model_new_two_state",
        "tf_model_free",
        "tf_solve",
        "tf_solution_value",
        "tf_solution_action",
        "tf_solution_iterations",
        "tf_solution_free",
        "tf_cost_never_fetch",
        "tf_cost_always_fetch",
        "tf_cost_always_fetch_fluid",
        "tf_rand_hold_probability",
        "tf_simulate_preset",
        "typedef struct TfModel TfModel;",
        "TF_STATUS_PANIC = 7",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
    let v = unsafe { CStr::from_ptr(tf_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
