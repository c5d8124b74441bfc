use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use popgrid::synth::{gen_world, WorldConfig};
use popgrid_ffi::*;

fn cstr(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe {
        let n = pg_last_error_message(ptr::null_mut(), 0);
        let mut buf = vec![0 as std::ffi::c_char; n];
        pg_last_error_message(buf.as_mut_ptr(), n);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn world(dir: &Path) {
    let cfg = WorldConfig {
        nrows: 12,
        ncols: 15,
        n_clusters: 40,
        ..WorldConfig::default()
    };
    gen_world(&cfg, 3).unwrap().write_dir(dir).unwrap();
}

#[test]
fn fit_and_predict_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    world(dir.path());
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(pg_clusters_load(cstr(&dir.path().join("clusters.csv")).as_ptr(), &mut set), PgStatus::Ok);
        assert_eq!(pg_clusters_len(set), 40);

        let mut opts = pg_fit_options_default();
        assert_eq!(opts.n_chains, 3);
        assert_eq!(opts.n_iterations, 10000);
        opts.n_iterations = 400;
        opts.burn_in = 200;
        opts.effect_mode = PgEffectMode::Random;
        let mut draws = ptr::null_mut();
        assert_eq!(pg_fit(set, &opts, &mut draws), PgStatus::Ok, "{}", last_error());
        assert_eq!(pg_draws_n_rows(draws), 600);
        let n = pg_draws_n_params(draws);
        assert!(n > 40);

        let mut needed = 0usize;
        let mut small = [0 as std::ffi::c_char; 2];
        assert_eq!(pg_draws_param_name(draws, 0, small.as_mut_ptr(), 2, &mut needed), PgStatus::BufferTooSmall);
        let mut name = vec![0 as std::ffi::c_char; needed];
        assert_eq!(pg_draws_param_name(draws, 0, name.as_mut_ptr(), needed, &mut needed), PgStatus::Ok);
        let name = CStr::from_ptr(name.as_ptr()).to_owned();
        let mut vals = vec![0.0; 600];
        assert_eq!(pg_draws_pooled(draws, name.as_ptr(), vals.as_mut_ptr(), 600), PgStatus::Ok);
        assert!(vals.iter().all(|v| v.is_finite()));
        let mut rhat = 0.0;
        assert_eq!(pg_draws_max_rhat(draws, &mut rhat), PgStatus::Ok);
        assert!(rhat.is_finite() && rhat > 0.0, "max rhat {rhat}");

        let mut grid = ptr::null_mut();
        assert_eq!(pg_grid_load(cstr(&dir.path().join("grid")).as_ptr(), &mut grid), PgStatus::Ok);
        assert_eq!(pg_grid_n_cells(grid), 180);
        let mut pred = ptr::null_mut();
        assert_eq!(pg_predict_grid(draws, grid, 50, 9, &mut pred), PgStatus::Ok, "{}", last_error());
        let mut cells = vec![0.0; 180];
        assert_eq!(pg_prediction_mean(pred, cells.as_mut_ptr(), 180), PgStatus::Ok);
        let mut total = 0.0;
        assert_eq!(pg_prediction_total_mean(pred, &mut total), PgStatus::Ok);
        let sum: f64 = cells.iter().filter(|v| v.is_finite()).sum();
        assert!((sum - total).abs() <= 1e-6 * total.max(1.0));
        let out = dir.path().join("pred");
        assert_eq!(pg_prediction_write(pred, cstr(&out).as_ptr()), PgStatus::Ok);
        assert!(out.join("pop_mean.asc").exists());

        let ddir = dir.path().join("draws");
        assert_eq!(pg_draws_write(draws, cstr(&ddir).as_ptr()), PgStatus::Ok);
        let mut again = ptr::null_mut();
        assert_eq!(pg_draws_load(cstr(&ddir).as_ptr(), &mut again), PgStatus::Ok);
        assert_eq!(pg_draws_n_params(again), n);

        pg_prediction_free(pred);
        pg_grid_free(grid);
        pg_draws_free(draws);
        pg_draws_free(again);
        pg_clusters_free(set);
    }
}

#[test]
fn errors_are_reported_with_codes() {
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(pg_clusters_load(ptr::null(), &mut set), PgStatus::NullPointer);
        assert!(last_error().contains("null"));
        let missing = CString::new("/nonexistent/clusters.csv").unwrap();
        assert_eq!(pg_clusters_load(missing.as_ptr(), &mut set), PgStatus::Io);
        assert!(last_error().contains("nonexistent"));
        assert!(set.is_null());
        let mut out = 0.0;
        assert_eq!(pg_draws_max_rhat(ptr::null(), &mut out), PgStatus::NullPointer);
        assert_eq!(pg_clusters_len(ptr::null()), 0);
        pg_clusters_free(ptr::null_mut());
        let v = CStr::from_ptr(pg_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn bad_options_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    world(dir.path());
    unsafe {
        let mut set = ptr::null_mut();
        assert_eq!(pg_clusters_load(cstr(&dir.path().join("clusters.csv")).as_ptr(), &mut set), PgStatus::Ok);
        let mut opts = pg_fit_options_default();
        opts.burn_in = opts.n_iterations + 1;
        let mut draws = ptr::null_mut();
        let status = pg_fit(set, &opts, &mut draws);
        assert!(matches!(status, PgStatus::Config | PgStatus::InvalidInput), "{status:?}");
        assert!(draws.is_null());
        pg_clusters_free(set);
    }
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/popgrid.h")).unwrap();
    for sym in [
        "PG_STATUS_OK",
        "typedef struct PgDraws PgDraws",
        "PgStatus pg_fit(",
        "PgStatus pg_predict_grid(",
        "size_t pg_last_error_message(",
        "void pg_draws_free(",
    ] {
        assert!(h.contains(sym), "header lacks `{sym}`");
    }
}
