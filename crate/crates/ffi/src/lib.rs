//! C interface to `popgrid`. Objects cross the boundary as opaque handles
//! that the caller releases with the matching `*_free` function. Every
//! fallible call returns a [`PgStatus`]; on failure the message is kept per
//! thread and read with [`pg_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use popgrid::cli::{prepare_clusters, resolve_modes};
use popgrid::config::{EffectModes, RunConfig};
use popgrid::data::{self, ClusterSet, GridStack};
use popgrid::mcmc::{self, ChainConfig, PosteriorDraws};
use popgrid::model::{self, EffectMode};
use popgrid::predict::{self, GridPrediction, PredictConfig};
use popgrid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidInput = 5,
    Mismatch = 6,
    Sampler = 7,
    Config = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// How covariate slopes vary across settlement types.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgEffectMode {
    Random = 0,
    Fixed = 1,
    /// Decided per covariate from a short pilot fit.
    Auto = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PgFitOptions {
    pub n_chains: usize,
    pub n_iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Percentile for capping sampling weights; NaN disables capping.
    pub truncation_percentile: f64,
    pub effect_mode: PgEffectMode,
}

pub struct PgClusterSet(ClusterSet);
pub struct PgGrid(GridStack);
pub struct PgDraws(PosteriorDraws);
pub struct PgPrediction(GridPrediction);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> PgStatus {
    match e {
        Error::Io { .. } => PgStatus::Io,
        Error::Parse { .. } | Error::Format { .. } => PgStatus::Parse,
        Error::HeaderMismatch(_) | Error::CovariateMismatch(_) => PgStatus::Mismatch,
        Error::Sampler(_) => PgStatus::Sampler,
        Error::Config(_) => PgStatus::Config,
        _ => PgStatus::InvalidInput,
    }
}

enum Fail {
    Status(PgStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording any error or panic for [`pg_last_error_message`].
fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(Fail::Status(s, m))) => {
            set_error(m);
            s
        }
        Ok(Err(Fail::Lib(e))) => {
            let s = status_of(&e);
            set_error(e.to_string());
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            PgStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(PgStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail::Status(PgStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the last error message of this thread into `buf` as a
/// NUL-terminated string. Returns the buffer size needed, including the
/// terminator; 0 when there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes_with_nul();
            if !buf.is_null() && len >= bytes.len() {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
            }
            bytes.len()
        }
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Defaults: 3 chains, 10000 iterations, half burn-in, weights capped at
/// the 90th percentile, effect modes chosen automatically.
#[no_mangle]
pub extern "C" fn pg_fit_options_default() -> PgFitOptions {
    let c = ChainConfig::default();
    PgFitOptions {
        n_chains: c.n_chains,
        n_iterations: c.n_iterations,
        burn_in: c.burn_in,
        thin: c.thin,
        seed: c.seed,
        truncation_percentile: 0.9,
        effect_mode: PgEffectMode::Auto,
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_clusters_load(path: *const c_char, out: *mut *mut PgClusterSet) -> PgStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let set = data::load_clusters(&p)?;
        data::validate_nesting(&set.clusters)?;
        put(out, PgClusterSet(set))
    })
}

/// # Safety
/// `set` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pg_clusters_len(set: *const PgClusterSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.len())
}

/// # Safety
/// `set` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_clusters_free(set: *mut PgClusterSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_grid_load(dir: *const c_char, out: *mut *mut PgGrid) -> PgStatus {
    guard(|| {
        let p = path_arg(dir, "dir")?;
        put(out, PgGrid(GridStack::load_dir(&p)?))
    })
}

/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pg_grid_n_cells(grid: *const PgGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.n_cells())
}

/// # Safety
/// `grid` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_grid_free(grid: *mut PgGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Prepares the clusters (discards, weight capping, model weights) and
/// fits the density model.
///
/// # Safety
/// `set` must be a live handle, `options` null or readable, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_fit(
    set: *const PgClusterSet,
    options: *const PgFitOptions,
    out: *mut *mut PgDraws,
) -> PgStatus {
    guard(|| {
        let set = handle(set, "set")?;
        let o = options.as_ref().copied().unwrap_or_else(|| pg_fit_options_default());
        let chain = ChainConfig {
            n_chains: o.n_chains,
            n_iterations: o.n_iterations,
            burn_in: o.burn_in,
            thin: o.thin,
            seed: o.seed,
            ..ChainConfig::default()
        };
        chain.validate()?;
        let n_cov = set.0.n_covariates();
        let cfg = RunConfig {
            effect_modes: match o.effect_mode {
                PgEffectMode::Auto => EffectModes::default(),
                PgEffectMode::Random => EffectModes::List(vec![EffectMode::RandomByType; n_cov]),
                PgEffectMode::Fixed => EffectModes::List(vec![EffectMode::Fixed; n_cov]),
            },
            mcmc: chain.clone(),
            weights: popgrid::config::WeightConfig {
                truncation_percentile: (!o.truncation_percentile.is_nan()).then_some(o.truncation_percentile),
                use_sampling_weights: true,
            },
            ..RunConfig::default()
        };
        cfg.validate()?;
        let prepared = prepare_clusters(set.0.clone(), &cfg)?;
        let modes = resolve_modes(&prepared, &cfg, &chain)?;
        let draws = model::fit(&prepared, &modes, cfg.priors, &chain)?;
        put(out, PgDraws(draws))
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_load(dir: *const c_char, out: *mut *mut PgDraws) -> PgStatus {
    guard(|| {
        let p = path_arg(dir, "dir")?;
        put(out, PgDraws(PosteriorDraws::read_dir(&p)?))
    })
}

/// # Safety
/// `draws` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_write(draws: *const PgDraws, dir: *const c_char) -> PgStatus {
    guard(|| {
        let d = handle(draws, "draws")?;
        let p = path_arg(dir, "dir")?;
        d.0.write_dir(&p)?;
        Ok(())
    })
}

/// # Safety
/// `draws` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_n_params(draws: *const PgDraws) -> usize {
    draws.as_ref().map_or(0, |d| d.0.names.len())
}

/// Retained draws pooled over chains.
///
/// # Safety
/// `draws` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_n_rows(draws: *const PgDraws) -> usize {
    draws.as_ref().map_or(0, |d| d.0.total_rows())
}

/// Writes the name of parameter `index` into `buf`, NUL-terminated, and
/// its required size into `needed`.
///
/// # Safety
/// `draws` must be a live handle, `buf` null or `len` writable bytes,
/// `needed` null or writable.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_param_name(
    draws: *const PgDraws,
    index: usize,
    buf: *mut c_char,
    len: usize,
    needed: *mut usize,
) -> PgStatus {
    guard(|| {
        let d = handle(draws, "draws")?;
        let name = d.0.names.get(index).ok_or_else(|| {
            Fail::Status(PgStatus::InvalidInput, format!("parameter index {index} out of range"))
        })?;
        let n = name.len() + 1;
        if !needed.is_null() {
            *needed = n;
        }
        if buf.is_null() || len < n {
            return Err(Fail::Status(PgStatus::BufferTooSmall, format!("name needs {n} bytes")));
        }
        ptr::copy_nonoverlapping(name.as_ptr() as *const c_char, buf, name.len());
        *buf.add(name.len()) = 0;
        Ok(())
    })
}

/// Copies the pooled draws of the named parameter into `buf`.
///
/// # Safety
/// `draws` must be a live handle, `name` a NUL-terminated string, `buf`
/// `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_pooled(
    draws: *const PgDraws,
    name: *const c_char,
    buf: *mut f64,
    len: usize,
) -> PgStatus {
    guard(|| {
        let d = handle(draws, "draws")?;
        let name = path_arg(name, "name")?;
        let name = name.to_string_lossy();
        let v = d.0.pooled_by_name(&name).ok_or_else(|| {
            Fail::Status(PgStatus::InvalidInput, format!("no parameter named `{name}`"))
        })?;
        if buf.is_null() || len < v.len() {
            return Err(Fail::Status(
                PgStatus::BufferTooSmall,
                format!("{} draws do not fit in {len}", v.len()),
            ));
        }
        ptr::copy_nonoverlapping(v.as_ptr(), buf, v.len());
        Ok(())
    })
}

/// Largest Gelman-Rubin statistic over all parameters.
///
/// # Safety
/// `draws` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_max_rhat(draws: *const PgDraws, out: *mut f64) -> PgStatus {
    guard(|| {
        let d = handle(draws, "draws")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let r = mcmc::gelman_rubin(&d.0)?;
        *out = r.iter().map(|x| x.rhat).fold(f64::NEG_INFINITY, f64::max);
        Ok(())
    })
}

/// # Safety
/// `draws` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_draws_free(draws: *mut PgDraws) {
    if !draws.is_null() {
        drop(Box::from_raw(draws));
    }
}

/// # Safety
/// `draws` and `grid` must be live handles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_predict_grid(
    draws: *const PgDraws,
    grid: *const PgGrid,
    n_draws: usize,
    seed: u64,
    out: *mut *mut PgPrediction,
) -> PgStatus {
    guard(|| {
        let d = handle(draws, "draws")?;
        let g = handle(grid, "grid")?;
        let cfg = PredictConfig { n_draws, seed };
        put(out, PgPrediction(predict::predict_grid(&d.0, &g.0, &cfg)?))
    })
}

/// Per-cell posterior mean counts; NaN for unsettled cells.
///
/// # Safety
/// `pred` must be a live handle; `buf` `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pg_prediction_mean(pred: *const PgPrediction, buf: *mut f64, len: usize) -> PgStatus {
    guard(|| {
        let p = handle(pred, "pred")?;
        let r = p.0.mean_raster();
        let n = r.header.n_cells();
        if buf.is_null() || len < n {
            return Err(Fail::Status(PgStatus::BufferTooSmall, format!("{n} cells do not fit in {len}")));
        }
        for i in 0..n {
            *buf.add(i) = r.get(i).unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Posterior mean of the grid total.
///
/// # Safety
/// `pred` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pg_prediction_total_mean(pred: *const PgPrediction, out: *mut f64) -> PgStatus {
    guard(|| {
        let p = handle(pred, "pred")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let t = p.0.total_draws();
        *out = t.iter().map(|&x| x as f64).sum::<f64>() / t.len().max(1) as f64;
        Ok(())
    })
}

/// Writes mean, median and 95% interval rasters into `dir`.
///
/// # Safety
/// `pred` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pg_prediction_write(pred: *const PgPrediction, dir: *const c_char) -> PgStatus {
    guard(|| {
        let p = handle(pred, "pred")?;
        let d = path_arg(dir, "dir")?;
        std::fs::create_dir_all(&d).map_err(|e| Error::Io {
            path: d.clone(),
            source: e,
        })?;
        p.0.write_rasters(&d)?;
        Ok(())
    })
}

/// # Safety
/// `pred` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pg_prediction_free(pred: *mut PgPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}
