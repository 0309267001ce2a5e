//! C ABI over the pipeline: load a trained checkpoint, query its
//! geometry, and render samples into caller-owned buffers.
//!
//! Handles are opaque and single-threaded: create, use, and free a
//! `DdmikitPipeline` from one thread. Every call reports a status code;
//! the last failure message is retrievable per thread via
//! `ddmikit_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ddmikit::diffusion::Guidance;
use ddmikit::error::DdmiError;
use ddmikit::pipeline::{generate_images, Checkpoint, PipelineState};

/// Opaque pipeline handle (a loaded checkpoint plus its networks).
pub struct DdmikitPipeline {
    state: PipelineState,
}

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DdmikitStatus {
    Ok = 0,
    UsageError = 1,
    DataError = 2,
    NumericalError = 3,
    Panic = 4,
}

/// Basic geometry of a loaded pipeline.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct DdmikitInfo {
    pub base_resolution: u32,
    pub latent_channels: u32,
    pub num_classes: u32,
    /// 1 when the checkpoint models occupancy (tri-plane), else 0.
    pub is_occupancy: u8,
    /// 1 when a trained denoiser is present (sampling available).
    pub has_denoiser: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = msg);
}

fn status_of(e: &DdmiError) -> DdmikitStatus {
    match e {
        DdmiError::NonFinite { .. } | DdmiError::NonFiniteSample { .. } => {
            DdmikitStatus::NumericalError
        }
        _ => DdmikitStatus::DataError,
    }
}

fn guarded(f: impl FnOnce() -> DdmikitStatus) -> DdmikitStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic".into());
            DdmikitStatus::Panic
        }
    }
}

/// Version of the library, as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ddmikit_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf` (truncated,
/// always NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be NULL (then only the
/// length is returned).
#[no_mangle]
pub unsafe extern "C" fn ddmikit_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a checkpoint file into a new pipeline handle.
///
/// On success writes the handle into `out` and returns `Ok`; the caller
/// must release it with [`ddmikit_pipeline_free`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn ddmikit_pipeline_load(
    path: *const c_char,
    out: *mut *mut DdmikitPipeline,
) -> DdmikitStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument".into());
            return DdmikitStatus::UsageError;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8".into());
                return DdmikitStatus::UsageError;
            }
        };
        let loaded =
            Checkpoint::load(Path::new(path)).and_then(|ck| PipelineState::from_checkpoint(&ck));
        match loaded {
            Ok(state) => {
                *out = Box::into_raw(Box::new(DdmikitPipeline { state }));
                DdmikitStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Release a handle returned by [`ddmikit_pipeline_load`].
///
/// # Safety
/// `pipeline` must be a handle from [`ddmikit_pipeline_load`] not yet
/// freed; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ddmikit_pipeline_free(pipeline: *mut DdmikitPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}

/// Query the geometry of a loaded pipeline.
///
/// # Safety
/// `pipeline` must be a live handle; `info` must point to a writable
/// `DdmikitInfo`.
#[no_mangle]
pub unsafe extern "C" fn ddmikit_pipeline_info(
    pipeline: *const DdmikitPipeline,
    info: *mut DdmikitInfo,
) -> DdmikitStatus {
    guarded(|| {
        if pipeline.is_null() || info.is_null() {
            set_error("null argument".into());
            return DdmikitStatus::UsageError;
        }
        let state = &(*pipeline).state;
        *info = DdmikitInfo {
            base_resolution: state.cfg.base_resolution as u32,
            latent_channels: state.cfg.latent_channels as u32,
            num_classes: state.cfg.num_classes as u32,
            is_occupancy: state.cfg.is_occupancy() as u8,
            has_denoiser: state.denoiser.is_some() as u8,
        };
        DdmikitStatus::Ok
    })
}

/// Sample one image and write it as 8-bit RGB, row-major, into `buffer`
/// (`3 * resolution * resolution` bytes).
///
/// `class_id < 0` samples unconditionally; otherwise classifier-free
/// guidance with weight `guidance` is applied.
///
/// # Safety
/// `pipeline` must be a live handle and `buffer` must point to
/// `buffer_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ddmikit_generate_image(
    pipeline: *const DdmikitPipeline,
    resolution: u32,
    seed: u64,
    class_id: i32,
    guidance: f64,
    buffer: *mut u8,
    buffer_len: usize,
) -> DdmikitStatus {
    guarded(|| {
        if pipeline.is_null() || buffer.is_null() {
            set_error("null argument".into());
            return DdmikitStatus::UsageError;
        }
        let state = &(*pipeline).state;
        if state.cfg.is_occupancy() {
            set_error("checkpoint models occupancy, not images".into());
            return DdmikitStatus::UsageError;
        }
        let res = resolution as usize;
        let need = 3 * res * res;
        if buffer_len != need {
            set_error(format!("buffer must hold exactly {need} bytes, got {buffer_len}"));
            return DdmikitStatus::UsageError;
        }
        let g = (class_id >= 0).then(|| Guidance { class: class_id as usize, weight: guidance });
        match generate_images(state, res, 1, seed, g) {
            Ok(samples) => {
                let img = &samples[0].image;
                let hw = res * res;
                let d = img.data();
                let out = std::slice::from_raw_parts_mut(buffer, need);
                for i in 0..hw {
                    for c in 0..3 {
                        let v = d[c * hw + i].clamp(-1.0, 1.0);
                        out[i * 3 + c] = ((v + 1.0) * 127.5).round() as u8;
                    }
                }
                DdmikitStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                status_of(&e)
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn tiny_trained_checkpoint(dir: &Path) -> std::path::PathBuf {
        let cfg = ddmikit::pipeline::Config::parse(
            "base_resolution = 16\n\
             dataset_size = 8\n\
             latent_channels = 2\n\
             enc_widths = [6, 6]\n\
             dec_widths = [6, 6, 6]\n\
             embed_channels = 6\n\
             mlp_blocks = 2\n\
             scale_hidden = 6\n\
             stage1_steps = 2\n\
             stage2_steps = 2\n\
             stage2_batch = 2\n\
             coord_budget = 64\n\
             diffusion_steps = 4\n\
             denoiser_width0 = 6\n\
             denoiser_width1 = 6\n\
             denoiser_temb = 6\n\
             checkpoint_every = 10\n\
             log_every = 10\n",
        )
        .unwrap();
        let data = ddmikit::pipeline::Dataset::from_config(&cfg).unwrap();
        let mut state = PipelineState::init(cfg).unwrap();
        state.train_stage1(&data, 2, None).unwrap();
        state.train_stage2(&data, 2, None).unwrap();
        let path = dir.join("ffi_test.ckpt");
        state.to_checkpoint().unwrap().save(&path).unwrap();
        path
    }

    #[test]
    fn load_query_generate_free() {
        let dir = std::env::temp_dir().join("ddmikit-ffi-test");
        std::fs::create_dir_all(&dir).unwrap();
        let ckpt = tiny_trained_checkpoint(&dir);
        let cpath = CString::new(ckpt.to_str().unwrap()).unwrap();

        let mut handle: *mut DdmikitPipeline = std::ptr::null_mut();
        let status = unsafe { ddmikit_pipeline_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(status, DdmikitStatus::Ok);
        assert!(!handle.is_null());

        let mut info = DdmikitInfo::default();
        assert_eq!(unsafe { ddmikit_pipeline_info(handle, &mut info) }, DdmikitStatus::Ok);
        assert_eq!(info.base_resolution, 16);
        assert_eq!(info.has_denoiser, 1);
        assert_eq!(info.is_occupancy, 0);

        let res = 16usize;
        let mut buf = vec![0u8; 3 * res * res];
        let status = unsafe {
            ddmikit_generate_image(handle, res as u32, 7, -1, 0.0, buf.as_mut_ptr(), buf.len())
        };
        assert_eq!(status, DdmikitStatus::Ok);

        // same seed, same bytes
        let mut buf2 = vec![0u8; 3 * res * res];
        unsafe {
            ddmikit_generate_image(handle, res as u32, 7, -1, 0.0, buf2.as_mut_ptr(), buf2.len())
        };
        assert_eq!(buf, buf2);

        // wrong buffer size is a usage error with a message
        let status = unsafe {
            ddmikit_generate_image(handle, res as u32, 7, -1, 0.0, buf.as_mut_ptr(), 17)
        };
        assert_eq!(status, DdmikitStatus::UsageError);
        let mut msg = vec![0u8; 128];
        let len = unsafe { ddmikit_last_error(msg.as_mut_ptr() as *mut c_char, msg.len()) };
        assert!(len > 0);

        unsafe { ddmikit_pipeline_free(handle) };
    }

    #[test]
    fn load_failures_report_data_error() {
        let mut handle: *mut DdmikitPipeline = std::ptr::null_mut();
        let cpath = CString::new("/nonexistent/path.ckpt").unwrap();
        let status = unsafe { ddmikit_pipeline_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(status, DdmikitStatus::DataError);
        assert!(handle.is_null());
        let status = unsafe { ddmikit_pipeline_load(std::ptr::null(), &mut handle) };
        assert_eq!(status, DdmikitStatus::UsageError);
    }
}
