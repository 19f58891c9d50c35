//! C ABI for loading trained checkpoints, editing latents and extracting
//! meshes. Every fallible call returns an [`SdfeditStatus`]; on failure the
//! message is available from [`sdfedit_last_error_message`] on the same
//! thread. Handles are opaque and must be released with their `_free`
//! function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sdfedit::editor::EditorParams;
use sdfedit::geometry::Mesh;
use sdfedit::regressor::Regressor;
use sdfedit::sdfnet::{reconstruct, SdfModel};
use sdfedit::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SdfeditStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfRange = 3,
    DegenerateDirection = 4,
    NotFound = 5,
    Io = 6,
    BadCheckpoint = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Loaded decoder, latent table, regressor and editor.
pub struct SdfeditSession {
    sdf: SdfModel,
    regressor: Regressor,
    editor: EditorParams,
}

/// Triangle mesh produced by [`sdfedit_session_extract_mesh`].
pub struct SdfeditMesh {
    mesh: Mesh,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(SdfeditStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => SdfeditStatus::InvalidArgument,
            Error::OutOfRange { .. } => SdfeditStatus::OutOfRange,
            Error::DegenerateDirection(_) => SdfeditStatus::DegenerateDirection,
            Error::Io { .. } | Error::MissingArtifact { .. } => SdfeditStatus::Io,
            Error::Checkpoint(_) | Error::Json(_) | Error::Parse { .. } => SdfeditStatus::BadCheckpoint,
            Error::EmptyMesh(_) | Error::NoGeometry(_) => SdfeditStatus::NotFound,
            _ => SdfeditStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SdfeditStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdfeditStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SdfeditStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SdfeditStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(SdfeditStatus::NullPointer, format!("{what} is null")));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(SdfeditStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn session<'a>(s: *const SdfeditSession) -> Result<&'a SdfeditSession, Failure> {
    s.as_ref().ok_or_else(|| fail(SdfeditStatus::NullPointer, "session is null"))
}

unsafe fn input<'a>(p: *const f64, len: usize, want: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(fail(SdfeditStatus::NullPointer, format!("{what} is null")));
    }
    if len != want {
        return Err(fail(SdfeditStatus::InvalidArgument, format!("{what} has length {len}, expected {want}")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, want: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(fail(SdfeditStatus::NullPointer, format!("{what} is null")));
    }
    if len < want {
        return Err(fail(SdfeditStatus::BufferTooSmall, format!("{what} holds {len}, need {want}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, want))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn sdfedit_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load checkpoints from their stems (paths without extension).
///
/// # Safety
/// The path arguments must be NUL-terminated strings and `out` a valid
/// pointer. On success `*out` owns a session to pass to
/// [`sdfedit_session_free`].
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_open(
    sdf_stem: *const c_char,
    regressor_stem: *const c_char,
    editor_stem: *const c_char,
    out: *mut *mut SdfeditSession,
) -> SdfeditStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SdfeditStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let sdf = SdfModel::load(&path_arg(sdf_stem, "sdf_stem")?)?;
        let (regressor, _) = Regressor::load(&path_arg(regressor_stem, "regressor_stem")?)?;
        let editor = EditorParams::load(&path_arg(editor_stem, "editor_stem")?)?;
        if editor.attribute_names != regressor.attribute_names {
            return Err(fail(SdfeditStatus::InvalidArgument, "editor and regressor attribute lists differ"));
        }
        if editor.latent_dim != sdf.decoder.config.latent_dim {
            return Err(fail(SdfeditStatus::InvalidArgument, "editor and decoder latent sizes differ"));
        }
        *out = Box::into_raw(Box::new(SdfeditSession { sdf, regressor, editor }));
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`sdfedit_session_open`] and not be used afterwards.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_free(s: *mut SdfeditSession) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Latent size, or 0 for a null session.
///
/// # Safety
/// `s` must be null or a live session.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_latent_dim(s: *const SdfeditSession) -> usize {
    s.as_ref().map_or(0, |s| s.editor.latent_dim)
}

/// # Safety
/// `s` must be null or a live session.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_attribute_count(s: *const SdfeditSession) -> usize {
    s.as_ref().map_or(0, |s| s.editor.attribute_names.len())
}

/// # Safety
/// `s` must be null or a live session.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_shape_count(s: *const SdfeditSession) -> usize {
    s.as_ref().map_or(0, |s| s.sdf.shape_ids.len())
}

unsafe fn copy_str(src: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), Failure> {
    if !needed.is_null() {
        *needed = src.len() + 1;
    }
    let dst = output(buf.cast::<u8>(), cap, src.len() + 1, "buffer")?;
    dst[..src.len()].copy_from_slice(src.as_bytes());
    dst[src.len()] = 0;
    Ok(())
}

/// Copy attribute `index`'s name, NUL-terminated, into `buf`. `needed`
/// (optional) receives the required capacity including the terminator.
///
/// # Safety
/// `s` must be a live session; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_attribute_name(s: *const SdfeditSession, index: usize, buf: *mut c_char, cap: usize, needed: *mut usize) -> SdfeditStatus {
    guard(|| {
        let s = session(s)?;
        let name = s.editor.attribute_names.get(index).ok_or_else(|| fail(SdfeditStatus::OutOfRange, format!("attribute index {index}")))?;
        copy_str(name, buf, cap, needed)
    })
}

/// Copy shape `index`'s id, NUL-terminated, into `buf`.
///
/// # Safety
/// As for [`sdfedit_session_attribute_name`].
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_shape_id(s: *const SdfeditSession, index: usize, buf: *mut c_char, cap: usize, needed: *mut usize) -> SdfeditStatus {
    guard(|| {
        let s = session(s)?;
        let id = s.sdf.shape_ids.get(index).ok_or_else(|| fail(SdfeditStatus::OutOfRange, format!("shape index {index}")))?;
        copy_str(id, buf, cap, needed)
    })
}

/// Copy shape `index`'s trained latent into `out` (`latent_dim` values).
///
/// # Safety
/// `s` must be a live session; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_shape_latent(s: *const SdfeditSession, index: usize, out: *mut f64, len: usize) -> SdfeditStatus {
    guard(|| {
        let s = session(s)?;
        if index >= s.sdf.shape_ids.len() {
            return Err(fail(SdfeditStatus::OutOfRange, format!("shape index {index}")));
        }
        let z = s.sdf.latent(index);
        output(out, len, z.len(), "out")?.copy_from_slice(z);
        Ok(())
    })
}

/// Predicted attributes of latent `z` into `out` (`attribute_count` values).
///
/// # Safety
/// `z` must hold `z_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_predict(s: *const SdfeditSession, z: *const f64, z_len: usize, out: *mut f64, out_len: usize) -> SdfeditStatus {
    guard(|| {
        let s = session(s)?;
        let z = input(z, z_len, s.editor.latent_dim, "z")?;
        let p = s.regressor.predict(z)?;
        output(out, out_len, p.len(), "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Edited latent for per-attribute offsets `eps` (each in [-1, 1]) into
/// `out`. All-zero `eps` returns `z` unchanged.
///
/// # Safety
/// `z`, `eps` and `out` must hold `z_len`, `eps_len` and `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_edit(
    s: *const SdfeditSession,
    z: *const f64,
    z_len: usize,
    eps: *const f64,
    eps_len: usize,
    out: *mut f64,
    out_len: usize,
) -> SdfeditStatus {
    guard(|| {
        let s = session(s)?;
        let z = input(z, z_len, s.editor.latent_dim, "z")?;
        let eps = input(eps, eps_len, s.editor.attribute_names.len(), "eps")?;
        let z2 = s.editor.edit(z, eps)?;
        output(out, out_len, z2.len(), "out")?.copy_from_slice(&z2);
        Ok(())
    })
}

/// Marching-cubes mesh of the decoder's zero level set for `z`.
///
/// # Safety
/// `z` must hold `z_len` doubles; on success `*out` owns a mesh to pass to
/// [`sdfedit_mesh_free`].
#[no_mangle]
pub unsafe extern "C" fn sdfedit_session_extract_mesh(s: *const SdfeditSession, z: *const f64, z_len: usize, resolution: usize, out: *mut *mut SdfeditMesh) -> SdfeditStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(SdfeditStatus::NullPointer, "out is null"));
        }
        *out = ptr::null_mut();
        let s = session(s)?;
        let z = input(z, z_len, s.editor.latent_dim, "z")?;
        let mesh = reconstruct(&s.sdf.decoder, z, resolution)?;
        *out = Box::into_raw(Box::new(SdfeditMesh { mesh }));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a live mesh.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_mesh_vertex_count(m: *const SdfeditMesh) -> usize {
    m.as_ref().map_or(0, |m| m.mesh.vertices.len())
}

/// # Safety
/// `m` must be null or a live mesh.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_mesh_triangle_count(m: *const SdfeditMesh) -> usize {
    m.as_ref().map_or(0, |m| m.mesh.triangles.len())
}

/// Copy vertex positions as `x, y, z` triples (`3 * vertex_count` doubles).
///
/// # Safety
/// `m` must be a live mesh; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_mesh_copy_vertices(m: *const SdfeditMesh, out: *mut f64, len: usize) -> SdfeditStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| fail(SdfeditStatus::NullPointer, "mesh is null"))?;
        let dst = output(out, len, 3 * m.mesh.vertices.len(), "out")?;
        for (d, v) in dst.iter_mut().zip(m.mesh.vertices.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Copy triangle vertex indices (`3 * triangle_count` values).
///
/// # Safety
/// `m` must be a live mesh; `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_mesh_copy_triangles(m: *const SdfeditMesh, out: *mut u32, len: usize) -> SdfeditStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| fail(SdfeditStatus::NullPointer, "mesh is null"))?;
        let dst = output(out, len, 3 * m.mesh.triangles.len(), "out")?;
        for (d, v) in dst.iter_mut().zip(m.mesh.triangles.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`sdfedit_session_extract_mesh`] and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn sdfedit_mesh_free(m: *mut SdfeditMesh) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
