//! C ABI over the diffflow simulator.
//!
//! Objects are opaque handles created and released by this library. Every
//! fallible call returns a [`DfStatus`]; on failure the message is available
//! from [`df_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diffflow::analytic;
use diffflow::metrics::{self, ClassFilter};
use diffflow::sweep::{self, Cell};
use diffflow::{Error, RunResult, ScenarioConfig, Scheme, Topology, Workload};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    RuntimeError = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfScheme {
    Ecmp = 0,
    Rps = 1,
    DiffFlow = 2,
}

impl From<DfScheme> for Scheme {
    fn from(s: DfScheme) -> Self {
        match s {
            DfScheme::Ecmp => Scheme::Ecmp,
            DfScheme::Rps => Scheme::Rps,
            DfScheme::DiffFlow => Scheme::DiffFlow,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfClass {
    All = 0,
    Short = 1,
    Long = 2,
}

impl From<DfClass> for ClassFilter {
    fn from(c: DfClass) -> Self {
        match c {
            DfClass::All => ClassFilter::All,
            DfClass::Short => ClassFilter::Short,
            DfClass::Long => ClassFilter::Long,
        }
    }
}

/// Per-flow outcome. Times are in seconds; `fct` is negative for flows that
/// did not complete.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DfFlowRecord {
    pub flow_id: u32,
    pub is_long: bool,
    pub size_packets: u32,
    pub src: u16,
    pub dst: u16,
    pub arrival: f64,
    pub fct: f64,
    pub ideal_fct: f64,
    pub attempts: u32,
    pub dropped: u32,
    pub retransmissions: u32,
    pub max_reorder: u32,
    pub aborted: bool,
}

/// Scenario configuration handle.
pub struct DfConfig {
    inner: ScenarioConfig,
}

/// Outcome of one simulation run.
pub struct DfRunResult {
    inner: RunResult,
    load: f64,
    seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> DfStatus {
    match e {
        Error::Config { .. } | Error::Toml(_) => DfStatus::ConfigError,
        Error::InvalidArgument(_) | Error::TooManyPaths(_) | Error::Parse { .. } => DfStatus::InvalidArgument,
        _ => DfStatus::RuntimeError,
    }
}

fn fail(status: DfStatus, msg: impl Into<String>) -> DfStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), DfStatus>) -> DfStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DfStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DfStatus::Panic, msg)
        }
    }
}

fn lift<T>(r: diffflow::Result<T>) -> Result<T, DfStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, DfStatus> {
    p.as_ref()
        .ok_or_else(|| fail(DfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn non_null_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, DfStatus> {
    p.as_mut()
        .ok_or_else(|| fail(DfStatus::NullPointer, format!("{what} is null")))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, DfStatus> {
    if p.is_null() {
        return Err(fail(DfStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(DfStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn df_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn df_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates the reference configuration.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn df_config_default(out: *mut *mut DfConfig) -> DfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = Box::into_raw(Box::new(DfConfig {
            inner: ScenarioConfig::default(),
        }));
        Ok(())
    })
}

/// Parses a TOML scenario.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_config_from_toml(text: *const c_char, out: *mut *mut DfConfig) -> DfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        let text = c_str(text, "text")?;
        let inner = lift(ScenarioConfig::from_toml(text))?;
        *out = Box::into_raw(Box::new(DfConfig { inner }));
        Ok(())
    })
}

/// Overrides the number of flows generated per run.
///
/// # Safety
/// `config` must be a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn df_config_set_flow_count(config: *mut DfConfig, flows: u32) -> DfStatus {
    guard(|| {
        let cfg = non_null_mut(config, "config")?;
        if flows == 0 {
            return Err(fail(DfStatus::InvalidArgument, "flow count must be positive"));
        }
        cfg.inner.workload.flow_count = Some(flows as usize);
        Ok(())
    })
}

/// # Safety
/// `config` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_config_free(config: *mut DfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Generates the workload for (`load`, `seed`) and runs `scheme` over it.
///
/// # Safety
/// `config` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_run(
    config: *const DfConfig,
    scheme: DfScheme,
    load: f64,
    seed: u64,
    out: *mut *mut DfRunResult,
) -> DfStatus {
    guard(|| {
        let cfg = &non_null(config, "config")?.inner;
        let out = non_null_mut(out, "out")?;
        if !(load.is_finite() && load > 0.0) {
            return Err(fail(DfStatus::InvalidArgument, format!("load {load} is not positive")));
        }
        let topo = lift(Topology::new(cfg.topology.clone()))?;
        let workload = lift(Workload::generate(&cfg.workload_for(load, seed), &topo))?;
        let cell = Cell {
            scheme: scheme.into(),
            load,
            seed,
        };
        let inner = lift(sweep::run_cell(cfg, &topo, &workload, cell))?;
        *out = Box::into_raw(Box::new(DfRunResult { inner, load, seed }));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_free(result: *mut DfRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Number of flows in the run, or 0 for a null handle.
///
/// # Safety
/// `result` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_flow_count(result: *const DfRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.flows.len())
}

/// Whether the run stopped on its time or event budget.
///
/// # Safety
/// `result` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_truncated(result: *const DfRunResult) -> bool {
    result.as_ref().is_some_and(|r| r.inner.truncated)
}

/// Copies flow `index` into `out`.
///
/// # Safety
/// `result` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_flow(
    result: *const DfRunResult,
    index: usize,
    out: *mut DfFlowRecord,
) -> DfStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        let out = non_null_mut(out, "out")?;
        let f = r.inner.flows.get(index).ok_or_else(|| {
            fail(
                DfStatus::InvalidArgument,
                format!("flow index {index} out of range ({} flows)", r.inner.flows.len()),
            )
        })?;
        *out = DfFlowRecord {
            flow_id: f.spec.flow_id,
            is_long: f.spec.class == diffflow::FlowClass::Long,
            size_packets: f.spec.size_packets,
            src: f.spec.src.index,
            dst: f.spec.dst.index,
            arrival: f.spec.arrival_time(),
            fct: f.fct.unwrap_or(-1.0),
            ideal_fct: f.ideal_fct,
            attempts: f.attempts,
            dropped: f.dropped_packets,
            retransmissions: f.retransmissions,
            max_reorder: f.max_reorder,
            aborted: f.aborted,
        };
        Ok(())
    })
}

/// Mean normalized FCT over completed flows of `class`.
///
/// # Safety
/// `result` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_mean_normalized_fct(
    result: *const DfRunResult,
    class: DfClass,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        let out = non_null_mut(out, "out")?;
        let filter = ClassFilter::from(class);
        let values: Vec<f64> = r
            .inner
            .flows
            .iter()
            .filter(|f| filter.matches(f.spec.class))
            .filter_map(metrics::normalized_fct)
            .collect();
        let (mean, _) = metrics::mean_ci95(&values)
            .ok_or_else(|| fail(DfStatus::InvalidArgument, "no completed flows in class"))?;
        *out = mean;
        Ok(())
    })
}

/// Delivered fraction of packet attempts for flows of `class`.
///
/// # Safety
/// `result` must be a handle from this library and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_normalized_throughput(
    result: *const DfRunResult,
    class: DfClass,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        let out = non_null_mut(out, "out")?;
        let filter = ClassFilter::from(class);
        *out = metrics::normalized_throughput(r.inner.flows.iter().filter(|f| filter.matches(f.spec.class)))
            .ok_or_else(|| fail(DfStatus::InvalidArgument, "no packet attempts in class"))?;
        Ok(())
    })
}

/// Writes the per-flow CSV of the run to `path`.
///
/// # Safety
/// `result` must be a handle from this library and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn df_run_result_write_flows_csv(result: *const DfRunResult, path: *const c_char) -> DfStatus {
    guard(|| {
        let r = non_null(result, "result")?;
        let path = c_str(path, "path")?;
        let rows = metrics::flow_rows(&r.inner, r.load, r.seed);
        let file = std::fs::File::create(path).map_err(|e| fail(DfStatus::RuntimeError, format!("{path}: {e}")))?;
        lift(metrics::write_csv(&rows, std::io::BufWriter::new(file)))
    })
}

/// Blocking probability of a node whose `len` traversing paths carry packets
/// with the given probabilities, for the stated port degrees.
///
/// # Safety
/// `probabilities` must point to `len` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn df_blocking_probability(
    probabilities: *const f64,
    len: usize,
    in_degree: usize,
    out_degree: usize,
    out: *mut f64,
) -> DfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        if probabilities.is_null() && len > 0 {
            return Err(fail(DfStatus::NullPointer, "probabilities is null"));
        }
        let probs = if len == 0 {
            &[][..]
        } else {
            std::slice::from_raw_parts(probabilities, len)
        };
        let node = analytic::NodeBlockingModel {
            node: diffflow::NodeId::server(0),
            in_degree,
            out_degree,
            path_probabilities: probs.to_vec(),
        };
        *out = lift(analytic::blocking_probability(&node))?;
        Ok(())
    })
}

/// Probability that at least one of `packets` packets is lost.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_retransmission_probability(p_loss: f64, packets: u32, out: *mut f64) -> DfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        if !(0.0..=1.0).contains(&p_loss) {
            return Err(fail(
                DfStatus::InvalidArgument,
                format!("p_loss {p_loss} outside [0, 1]"),
            ));
        }
        *out = analytic::retransmission_probability(p_loss, packets);
        Ok(())
    })
}

/// Loss probability of an M/D/1/K queue holding at most `system_capacity`
/// packets.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn df_md1k_loss(rho: f64, system_capacity: usize, out: *mut f64) -> DfStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = lift(analytic::md1k(rho, system_capacity))?.loss;
        Ok(())
    })
}
