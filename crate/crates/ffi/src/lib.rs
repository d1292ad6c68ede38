//! C ABI over the headless engine.
//!
//! Every fallible call returns an [`SaStatus`]; on failure the message is
//! available from [`sa_last_error`] on the same thread until the next
//! failing call. Strings returned by the library are freed with
//! [`sa_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sphere_aero::engine::{Command, Engine, EngineConfig, ServerMessage};
use sphere_aero::geometry::Vec3;
use sphere_aero::mms::mms_fields;
use sphere_aero::synth::render_into;
use sphere_aero::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    CommandRejected = 5,
    NumericalFailure = 6,
    NotReady = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque engine handle.
pub struct SaEngine {
    engine: Engine,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(message).ok());
}

fn fail(status: SaStatus, message: impl Into<String>) -> SaStatus {
    set_error(message);
    status
}

fn status_of(e: &Error) -> SaStatus {
    match e {
        Error::Config(_) => SaStatus::InvalidConfig,
        Error::InvalidArgument(_) => SaStatus::InvalidArgument,
        Error::NotReady(_) => SaStatus::NotReady,
        Error::Io(_) => SaStatus::Io,
        Error::DegeneratePoint(_) | Error::OffSurface { .. } | Error::OutOfBand { .. } | Error::SolverFailure { .. } => {
            SaStatus::NumericalFailure
        }
    }
}

fn guard(f: impl FnOnce() -> Result<(), SaStatus>) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(SaStatus::Panic, "panic inside sphere-aero"),
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, SaStatus> {
    if s.is_null() {
        return Err(fail(SaStatus::NullPointer, "string argument is null"));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|e| fail(SaStatus::InvalidUtf8, e.to_string()))
}

unsafe fn engine_mut<'a>(engine: *mut SaEngine) -> Result<&'a mut SaEngine, SaStatus> {
    engine
        .as_mut()
        .ok_or_else(|| fail(SaStatus::NullPointer, "engine handle is null"))
}

fn lift<T>(r: sphere_aero::Result<T>) -> Result<T, SaStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn hand_out(text: String, out: *mut *mut c_char) -> Result<(), SaStatus> {
    let c = CString::new(text).map_err(|e| fail(SaStatus::InvalidArgument, e.to_string()))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

/// Creates an engine from a JSON config; a null `config_json` uses the
/// defaults. `*out` is set only on success.
///
/// # Safety
/// `config_json` is null or a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_new(config_json: *const c_char, out: *mut *mut SaEngine) -> SaStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SaStatus::NullPointer, "out is null"));
        }
        let config = if config_json.is_null() {
            EngineConfig::default()
        } else {
            lift(EngineConfig::from_json(read_str(config_json)?))?
        };
        let engine = lift(Engine::new(config))?;
        *out = Box::into_raw(Box::new(SaEngine { engine }));
        Ok(())
    })
}

/// # Safety
/// `engine` is null or a handle from [`sa_engine_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_free(engine: *mut SaEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Advances `steps` full pipeline steps. A solver failure pauses the engine.
///
/// # Safety
/// `engine` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_step(engine: *mut SaEngine, steps: u32) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if e.engine.simulation.is_paused() {
            return Ok(());
        }
        lift(e.engine.advance(steps as usize)).map(|_| ())
    })
}

/// Applies one command, e.g. `{"kind":"set_dt","value":0.002}`.
///
/// # Safety
/// `engine` is a live handle; `command_json` is NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_command(engine: *mut SaEngine, command_json: *const c_char) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let command: Command = serde_json::from_str(read_str(command_json)?)
            .map_err(|err| fail(SaStatus::InvalidArgument, err.to_string()))?;
        e.engine
            .command(&command)
            .map_err(|msg| fail(SaStatus::CommandRejected, msg))
    })
}

/// Writes the current snapshot as a wire `snapshot` message.
///
/// # Safety
/// `engine` is a live handle; `out` is writable. Free the result with
/// [`sa_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sa_engine_snapshot_json(engine: *mut SaEngine, out: *mut *mut c_char) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if out.is_null() {
            return Err(fail(SaStatus::NullPointer, "out is null"));
        }
        hand_out(ServerMessage::from(&e.engine.snapshot()).to_json(), out)
    })
}

/// Completed steps and simulated time.
///
/// # Safety
/// `engine` is a live handle; the out pointers are null or writable.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_progress(engine: *mut SaEngine, step: *mut u64, time: *mut f64) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        let s = e.engine.simulation.state();
        if let Some(step) = step.as_mut() {
            *step = s.step_count;
        }
        if let Some(time) = time.as_mut() {
            *time = s.time;
        }
        Ok(())
    })
}

/// Latest far-field pressure at the observer and the synthesis amplitude.
///
/// # Safety
/// `engine` is a live handle; the out pointers are null or writable.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_acoustics(engine: *mut SaEngine, p_prime: *mut f64, amplitude: *mut f64) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if let Some(p) = p_prime.as_mut() {
            *p = e.engine.analysis.pipeline().p_prime();
        }
        if let Some(a) = amplitude.as_mut() {
            *a = e.engine.analysis.amplitude();
        }
        Ok(())
    })
}

/// Renders `len` mono samples from the oscillator bank at the configured
/// sample rate, without advancing the simulation.
///
/// # Safety
/// `engine` is a live handle; `out` points to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sa_engine_render_audio(engine: *mut SaEngine, out: *mut f32, len: usize) -> SaStatus {
    guard(|| {
        let e = engine_mut(engine)?;
        if len == 0 {
            return Ok(());
        }
        if out.is_null() {
            return Err(fail(SaStatus::NullPointer, "out is null"));
        }
        let buffer = std::slice::from_raw_parts_mut(out, len);
        let amplitude = e.engine.analysis.amplitude();
        let sample_rate = e.engine.analysis.synth().sample_rate;
        render_into(e.engine.analysis.bank_mut(), amplitude, sample_rate, buffer);
        Ok(())
    })
}

/// Manufactured velocity, density and pressure at a point.
///
/// # Safety
/// `u` points to 3 writable doubles; `rho` and `p` are null or writable.
#[no_mangle]
pub unsafe extern "C" fn sa_mms_fields(x: f64, y: f64, z: f64, u: *mut f64, rho: *mut f64, p: *mut f64) -> SaStatus {
    guard(|| {
        if u.is_null() {
            return Err(fail(SaStatus::NullPointer, "u is null"));
        }
        let s = mms_fields(&Vec3::new(x, y, z));
        ptr::copy_nonoverlapping(s.u.as_ptr(), u, 3);
        if let Some(rho) = rho.as_mut() {
            *rho = s.rho;
        }
        if let Some(p) = p.as_mut() {
            *p = s.p;
        }
        Ok(())
    })
}

/// Message of the last failure on this thread, or null. Owned by the library.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` is null or a string returned by this library, freed at most once.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
