//! C ABI over a trained radfield checkpoint.
//!
//! Every function returns an [`RfStatus`]; on failure the message is kept
//! per thread and read with [`rf_last_error`]. Handles are opaque and must
//! be released with [`rf_model_free`]. Images are row-major RGB `double`
//! buffers in `[0, 1]`, `width * height * 3` long.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use radfield::camera::{rotation_from_pose, CameraPose, Intrinsics};
use radfield::checkpoint::Checkpoint;
use radfield::metrics;
use radfield::optim::{self, InferConfig, Observation};
use radfield::render::{self, Image, LearnedSource};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Render = 5,
    Optim = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Orbit camera: azimuth and elevation in radians, distance to the origin.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfPose {
    pub phi: f64,
    pub theta: f64,
    pub rho: f64,
}

/// Pinhole camera with the principal point at the image center.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfCamera {
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
}

/// Opaque handle to a loaded checkpoint.
pub struct RfModel {
    inner: Checkpoint,
}

struct Failure(RfStatus, String);

type Outcome = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Outcome) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            RfStatus::Panic
        }
    }
}

fn fail<T>(status: RfStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller promises a valid, aligned pointer when non-null.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(RfStatus::NullArgument, format!("{what} is null")))
}

fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    non_null(p, what)?;
    // SAFETY: the caller promises `len` readable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    non_null(p, what)?;
    // SAFETY: the caller promises `len` writable doubles at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn write<T>(p: *mut T, value: T, what: &str) -> Outcome {
    non_null(p, what)?;
    // SAFETY: non-null and, per the contract, valid for writes.
    unsafe { p.write(value) };
    Ok(())
}

fn model<'a>(m: *const RfModel) -> Result<&'a Checkpoint, Failure> {
    Ok(&non_null(m, "model")?.inner)
}

fn pose(p: RfPose) -> Result<CameraPose, Failure> {
    CameraPose::new(p.phi, p.theta, p.rho).map_err(|e| Failure(RfStatus::InvalidArgument, e.to_string()))
}

fn intrinsics(c: RfCamera) -> Result<Intrinsics, Failure> {
    Intrinsics::centered(c.focal, c.width, c.height).map_err(|e| Failure(RfStatus::InvalidArgument, e.to_string()))
}

fn check_dim(m: &Checkpoint, dim: usize) -> Outcome {
    let want = m.field.config.latent_dim;
    if dim != want {
        return fail(
            RfStatus::InvalidArgument,
            format!("code length {dim}, model uses {want}"),
        );
    }
    Ok(())
}

/// Message of the most recent failed call on this thread, or an empty
/// string. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn rf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file into a new handle stored at `out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_model_load(path: *const c_char, out: *mut *mut RfModel) -> RfStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        // SAFETY: checked non-null; NUL termination is the caller's contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Failure(RfStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = Checkpoint::load(Path::new(path)).map_err(|e| {
            let status = match &e {
                radfield::checkpoint::CheckpointError::Container(radfield::container::ContainerError::Io {
                    ..
                }) => RfStatus::Io,
                _ => RfStatus::Checkpoint,
            };
            Failure(status, e.to_string())
        })?;
        write(out, Box::into_raw(Box::new(RfModel { inner: ck })), "out")
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from [`rf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rf_model_free(model: *mut RfModel) {
    if !model.is_null() {
        // SAFETY: allocated by Box in rf_model_load, freed once.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of training objects in the checkpoint.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn rf_model_num_objects(model: *const RfModel, out: *mut usize) -> RfStatus {
    guard(|| {
        let n = self::model(model)?.object_ids.len();
        write(out, n, "out")
    })
}

/// Length of each shape and texture code.
///
/// # Safety
/// Pointers must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn rf_model_latent_dim(model: *const RfModel, out: *mut usize) -> RfStatus {
    guard(|| {
        let d = self::model(model)?.field.config.latent_dim;
        write(out, d, "out")
    })
}

/// Copies the codes of training object `index` into two buffers of
/// length `dim`.
///
/// # Safety
/// Buffers must hold `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_model_object_codes(
    model: *const RfModel,
    index: usize,
    shape_out: *mut f64,
    texture_out: *mut f64,
    dim: usize,
) -> RfStatus {
    guard(|| {
        let m = self::model(model)?;
        check_dim(m, dim)?;
        if index >= m.object_ids.len() {
            return fail(
                RfStatus::InvalidArgument,
                format!("object {index} of {}", m.object_ids.len()),
            );
        }
        let (zs, zt) = m.codes(index);
        slice_mut(shape_out, dim, "shape_out")?.copy_from_slice(&zs);
        slice_mut(texture_out, dim, "texture_out")?.copy_from_slice(&zt);
        Ok(())
    })
}

/// Renders codes from `pose` into `rgb_out` (`len` doubles, at least
/// `width * height * 3`).
///
/// # Safety
/// Code buffers hold `dim` doubles; `rgb_out` holds `len`.
#[no_mangle]
pub unsafe extern "C" fn rf_render(
    model: *const RfModel,
    shape: *const f64,
    texture: *const f64,
    dim: usize,
    pose: RfPose,
    camera: RfCamera,
    rgb_out: *mut f64,
    len: usize,
) -> RfStatus {
    guard(|| {
        let m = self::model(model)?;
        check_dim(m, dim)?;
        let k = intrinsics(camera)?;
        let need = k.width * k.height * 3;
        if len < need {
            return fail(RfStatus::BufferTooSmall, format!("need {need} doubles, got {len}"));
        }
        let src = LearnedSource {
            params: &m.field,
            shape_code: slice(shape, dim, "shape")?.to_vec(),
            texture_code: slice(texture, dim, "texture")?.to_vec(),
        };
        let extr = rotation_from_pose(&self::pose(pose)?);
        let img = render::render_image(&src, &extr, &k, &m.render, 4096, 0)
            .map_err(|e| Failure(RfStatus::Render, e.to_string()))?;
        slice_mut(rgb_out, len, "rgb_out")?[..need].copy_from_slice(&img.data);
        Ok(())
    })
}

/// Fits codes and pose to one image, starting from `init` and the mean
/// training codes, for `iterations` optimizer steps.
///
/// # Safety
/// `rgb` holds `width * height * 3` doubles; code buffers hold `dim`.
#[no_mangle]
pub unsafe extern "C" fn rf_invert(
    model: *const RfModel,
    rgb: *const f64,
    camera: RfCamera,
    init: RfPose,
    iterations: usize,
    shape_out: *mut f64,
    texture_out: *mut f64,
    dim: usize,
    pose_out: *mut RfPose,
    final_loss: *mut f64,
) -> RfStatus {
    guard(|| {
        let m = self::model(model)?;
        check_dim(m, dim)?;
        let k = intrinsics(camera)?;
        let data = slice(rgb, k.width * k.height * 3, "rgb")?.to_vec();
        let image =
            Image::new(k.width, k.height, data).map_err(|e| Failure(RfStatus::InvalidArgument, e.to_string()))?;
        let obs = [Observation {
            image,
            intrinsics: k,
            init_pose: self::pose(init)?,
        }];
        let cfg = InferConfig {
            iterations,
            ..Default::default()
        };
        let r = optim::invert(m, &obs, None, &cfg).map_err(|e| Failure(RfStatus::Optim, e.to_string()))?;
        slice_mut(shape_out, dim, "shape_out")?.copy_from_slice(&r.shape_code);
        slice_mut(texture_out, dim, "texture_out")?.copy_from_slice(&r.texture_code);
        let p = r.poses[0];
        write(
            pose_out,
            RfPose {
                phi: p.phi,
                theta: p.theta,
                rho: p.rho,
            },
            "pose_out",
        )?;
        if !final_loss.is_null() {
            write(final_loss, *r.losses.last().unwrap_or(&f64::NAN), "final_loss")?;
        }
        Ok(())
    })
}

/// PSNR in dB between two RGB buffers of the same size; infinite when
/// they are equal.
///
/// # Safety
/// Both buffers hold `width * height * 3` doubles.
#[no_mangle]
pub unsafe extern "C" fn rf_psnr(a: *const f64, b: *const f64, width: usize, height: usize, out: *mut f64) -> RfStatus {
    guard(|| {
        let n = width * height * 3;
        let img = |p, what| {
            Image::new(width, height, slice(p, n, what)?.to_vec())
                .map_err(|e| Failure(RfStatus::InvalidArgument, e.to_string()))
        };
        let (x, y) = (img(a, "a")?, img(b, "b")?);
        let v = metrics::psnr(&x, &y).map_err(|e| Failure(RfStatus::InvalidArgument, e.to_string()))?;
        write(out, v, "out")
    })
}
