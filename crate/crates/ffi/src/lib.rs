//! C ABI for `lipcert`.
//!
//! Every fallible function returns a [`LipcertStatus`]; on failure the message
//! is available from [`lipcert_last_error_message`] on the same thread.
//! Models and layers are opaque handles released with their `_free`
//! function. Panics are caught at the boundary and reported as
//! `LIPCERT_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use lipcert::bounds::{analyze_layer, BoundConfig};
use lipcert::linops::{Conv2dOperator, DenseOperator, LinearMap, LinearOperator, TensorShape};
use lipcert::network::{load_model, propagate, recenter, Layer, Method, NetworkModel};
use lipcert::{Error, Norm, PerturbationDomain};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipcertStatus {
    Ok = 0,
    InvalidInput = 1,
    Capacity = 2,
    Load = 3,
    Io = 4,
    NullPointer = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipcertNorm {
    L1 = 0,
    L2 = 1,
    Linf = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LipcertMethod {
    Naive = 0,
    Rbar = 1,
    Nested = 2,
}

/// Tuning knobs shared by the bound functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipcertOptions {
    /// Relative margin added to every power-iteration estimate.
    pub spectral_slack: f64,
    pub power_iterations: usize,
    pub power_seed: u64,
    /// Draws for the sampled lower bound; 0 skips it.
    pub lower_samples: usize,
    pub lower_seed: u64,
}

/// Single-layer bounds at one radius.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LipcertBoundReport {
    pub epsilon: f64,
    pub naive: f64,
    pub rbar: f64,
    pub nested: f64,
    pub lower: f64,
    pub segments: usize,
    pub spectral_slack: f64,
}

/// Opaque model handle.
pub struct LipcertModel(NetworkModel);

/// Opaque handle to an affine-ReLU layer `relu(A x + b)` about its nominal
/// point.
pub struct LipcertLayer {
    op: LinearOperator,
    bias: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LipcertStatus, msg: impl Into<String>) -> LipcertStatus {
    set_error(msg.into());
    status
}

fn from_error(err: Error) -> LipcertStatus {
    let status = match &err {
        Error::InvalidInput(_) => LipcertStatus::InvalidInput,
        Error::Capacity { .. } => LipcertStatus::Capacity,
        Error::Load { .. } => LipcertStatus::Load,
        Error::Io(_) => LipcertStatus::Io,
    };
    fail(status, err.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), LipcertStatus>) -> LipcertStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LipcertStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LipcertStatus::Panic, format!("internal panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, LipcertStatus>;
}

impl<T> OrStatus<T> for lipcert::Result<T> {
    fn or_status(self) -> Result<T, LipcertStatus> {
        self.map_err(from_error)
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, LipcertStatus> {
    // SAFETY: the caller guarantees a non-null pointer refers to a live value.
    unsafe { p.as_ref() }.ok_or_else(|| fail(LipcertStatus::NullPointer, format!("{what} is NULL")))
}

/// # Safety
/// `p` must be NULL (only when `len == 0`) or point to `len` readable values.
unsafe fn input_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], LipcertStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(LipcertStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(slice::from_raw_parts(p, len))
}

fn config_from(opts: *const LipcertOptions) -> BoundConfig {
    // SAFETY: NULL selects defaults; otherwise the caller passes a valid struct.
    let Some(o) = (unsafe { opts.as_ref() }) else {
        return BoundConfig::default();
    };
    let mut cfg = BoundConfig::default().with_slack(o.spectral_slack);
    cfg.power.iterations = o.power_iterations;
    cfg.power.seed = o.power_seed;
    cfg.lower_samples = o.lower_samples;
    cfg.lower_seed = o.lower_seed;
    cfg
}

/// Library version as a NUL-terminated string.
#[no_mangle]
pub extern "C" fn lipcert_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lipcert_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Fills `out` with the default options.
///
/// # Safety
/// `out` must be NULL or point to writable memory for one `LipcertOptions`.
#[no_mangle]
pub unsafe extern "C" fn lipcert_options_default(out: *mut LipcertOptions) -> LipcertStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(LipcertStatus::NullPointer, "out is NULL"));
        }
        let d = BoundConfig::default();
        out.write(LipcertOptions {
            spectral_slack: d.spectral_slack,
            power_iterations: d.power.iterations,
            power_seed: d.power.seed,
            lower_samples: d.lower_samples,
            lower_seed: d.lower_seed,
        });
        Ok(())
    })
}

/// Loads a model manifest.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_load(path: *const c_char, out: *mut *mut LipcertModel) -> LipcertStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(LipcertStatus::NullPointer, "path or out is NULL"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(LipcertStatus::InvalidInput, "path is not valid UTF-8"))?;
        let model = load_model(path).or_status()?;
        out.write(Box::into_raw(Box::new(LipcertModel(model))));
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from `lipcert_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_free(model: *mut LipcertModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of layers, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_num_layers(model: *const LipcertModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.layers.len())
}

/// Flattened input length, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_input_len(model: *const LipcertModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_shape.numel())
}

/// Flattened output length, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_output_len(model: *const LipcertModel) -> usize {
    model
        .as_ref()
        .and_then(|m| m.0.shapes().ok())
        .map_or(0, |s| s.last().map_or(0, TensorShape::numel))
}

/// Evaluates the model at `x`.
///
/// # Safety
/// `x` must hold `x_len` values and `out` room for `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_forward(
    model: *const LipcertModel,
    x: *const f64,
    x_len: usize,
    out: *mut f64,
    out_len: usize,
) -> LipcertStatus {
    guard(|| {
        let model = &non_null(model, "model")?.0;
        let x = input_slice(x, x_len, "x")?;
        let y = model.forward(x).or_status()?;
        if out_len != y.len() || (out.is_null() && !y.is_empty()) {
            return Err(fail(
                LipcertStatus::InvalidInput,
                format!("output buffer holds {out_len} values, model produces {}", y.len()),
            ));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// Propagates radius `epsilon` through the model about `x0` (NULL means the
/// zero input) and writes the product bound to `product`. When `layer_bounds`
/// is non-NULL it receives one bound per layer and must hold
/// `layer_bounds_len == lipcert_model_num_layers(model)` values.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `options` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn lipcert_model_propagate(
    model: *const LipcertModel,
    x0: *const f64,
    x0_len: usize,
    epsilon: f64,
    method: LipcertMethod,
    options: *const LipcertOptions,
    product: *mut f64,
    layer_bounds: *mut f64,
    layer_bounds_len: usize,
) -> LipcertStatus {
    guard(|| {
        let model = &non_null(model, "model")?.0;
        if product.is_null() {
            return Err(fail(LipcertStatus::NullPointer, "product is NULL"));
        }
        let zeros;
        let x0 = if x0.is_null() {
            zeros = vec![0.0; model.input_shape.numel()];
            &zeros[..]
        } else {
            input_slice(x0, x0_len, "x0")?
        };
        let method = match method {
            LipcertMethod::Naive => Method::Naive,
            LipcertMethod::Rbar => Method::Rbar,
            LipcertMethod::Nested => Method::Nested,
        };
        if !layer_bounds.is_null() && layer_bounds_len != model.layers.len() {
            return Err(fail(
                LipcertStatus::InvalidInput,
                format!("layer_bounds holds {layer_bounds_len} values, model has {} layers", model.layers.len()),
            ));
        }
        let trace = propagate(model, x0, epsilon, method, &config_from(options)).or_status()?;
        product.write(trace.product_bound);
        if !layer_bounds.is_null() {
            for (k, rec) in trace.layers.iter().enumerate() {
                layer_bounds.add(k).write(rec.l_upper);
            }
        }
        Ok(())
    })
}

fn new_layer(out: *mut *mut LipcertLayer, layer: LipcertLayer) -> Result<(), LipcertStatus> {
    if out.is_null() {
        return Err(fail(LipcertStatus::NullPointer, "out is NULL"));
    }
    // SAFETY: checked non-null; the caller provides writable storage.
    unsafe { out.write(Box::into_raw(Box::new(layer))) };
    Ok(())
}

/// Creates a dense layer from a row-major `rows × cols` weight matrix and a
/// bias of length `rows`, already re-centred at the nominal input.
///
/// # Safety
/// `weights` must hold `rows * cols` values and `bias` `rows` values.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_dense_new(
    rows: usize,
    cols: usize,
    weights: *const f64,
    bias: *const f64,
    out: *mut *mut LipcertLayer,
) -> LipcertStatus {
    guard(|| {
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(LipcertStatus::InvalidInput, "rows * cols overflows"))?;
        let w = input_slice(weights, len, "weights")?.to_vec();
        let b = input_slice(bias, rows, "bias")?.to_vec();
        let op = DenseOperator::new(rows, cols, w).or_status()?;
        new_layer(out, LipcertLayer { op: op.into(), bias: b })
    })
}

/// Creates a convolution layer over `[in_c, in_h, in_w]` inputs with a
/// `[out_c, in_c, kernel_h, kernel_w]` kernel. `bias` holds one value per
/// output coordinate (`out_c · out_h · out_w`), already re-centred.
///
/// # Safety
/// `kernel` and `bias` must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_conv_new(
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    kernel_h: usize,
    kernel_w: usize,
    stride_h: usize,
    stride_w: usize,
    pad_h: usize,
    pad_w: usize,
    kernel: *const f64,
    bias: *const f64,
    bias_len: usize,
    out: *mut *mut LipcertLayer,
) -> LipcertStatus {
    guard(|| {
        let klen = [out_c, in_c, kernel_h, kernel_w]
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| fail(LipcertStatus::InvalidInput, "kernel size overflows"))?;
        let k = input_slice(kernel, klen, "kernel")?.to_vec();
        let shape = TensorShape::new(vec![in_c, in_h, in_w]).or_status()?;
        let op = Conv2dOperator::new(shape, out_c, (kernel_h, kernel_w), (stride_h, stride_w), (pad_h, pad_w), k)
            .or_status()?;
        if bias_len != op.rows() {
            return Err(fail(
                LipcertStatus::InvalidInput,
                format!("bias holds {bias_len} values, layer has {} outputs", op.rows()),
            ));
        }
        let b = input_slice(bias, bias_len, "bias")?.to_vec();
        new_layer(out, LipcertLayer { op: op.into(), bias: b })
    })
}

/// Extracts affine layer `index` of `model`, re-centred at that layer's
/// nominal input when the model is evaluated at `x0` (NULL means zeros).
///
/// # Safety
/// `model` must be live and `x0` NULL or hold `x0_len` values.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_from_model(
    model: *const LipcertModel,
    index: usize,
    x0: *const f64,
    x0_len: usize,
    out: *mut *mut LipcertLayer,
) -> LipcertStatus {
    guard(|| {
        let model = &non_null(model, "model")?.0;
        let layer = model.layers.get(index).ok_or_else(|| {
            fail(LipcertStatus::InvalidInput, format!("layer {index} out of range"))
        })?;
        if !matches!(layer, Layer::Affine { .. }) {
            return Err(fail(LipcertStatus::InvalidInput, format!("layer {index} is not affine")));
        }
        let zeros;
        let x0 = if x0.is_null() {
            zeros = vec![0.0; model.input_shape.numel()];
            &zeros[..]
        } else {
            input_slice(x0, x0_len, "x0")?
        };
        let acts = model.activations(x0).or_status()?;
        let aff = recenter(layer, &acts[index]).or_status()?;
        new_layer(out, LipcertLayer { op: aff.op, bias: aff.bias })
    })
}

/// Releases a layer. NULL is ignored.
///
/// # Safety
/// `layer` must come from a `lipcert_layer_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_free(layer: *mut LipcertLayer) {
    if !layer.is_null() {
        drop(Box::from_raw(layer));
    }
}

/// Output dimension `m`, or 0 for NULL.
///
/// # Safety
/// `layer` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_rows(layer: *const LipcertLayer) -> usize {
    layer.as_ref().map_or(0, |l| l.op.rows())
}

/// Input dimension `n`, or 0 for NULL.
///
/// # Safety
/// `layer` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_cols(layer: *const LipcertLayer) -> usize {
    layer.as_ref().map_or(0, |l| l.op.cols())
}

/// Computes naive, bounding-region and nested bounds and a sampled lower
/// bound over `{x : ‖x‖ ≤ epsilon}` (intersected with `x ≥ 0` when `nonneg`).
///
/// # Safety
/// `layer` must be live, `options` NULL or valid, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lipcert_layer_bounds(
    layer: *const LipcertLayer,
    norm: LipcertNorm,
    epsilon: f64,
    nonneg: bool,
    options: *const LipcertOptions,
    out: *mut LipcertBoundReport,
) -> LipcertStatus {
    guard(|| {
        let layer = non_null(layer, "layer")?;
        if out.is_null() {
            return Err(fail(LipcertStatus::NullPointer, "out is NULL"));
        }
        let norm = match norm {
            LipcertNorm::L1 => Norm::L1,
            LipcertNorm::L2 => Norm::L2,
            LipcertNorm::Linf => Norm::Linf,
        };
        let dom = PerturbationDomain::new(norm, epsilon, nonneg).or_status()?;
        let mut cfg = config_from(options);
        let skip_lower = cfg.lower_samples == 0;
        if skip_lower {
            cfg.lower_samples = 1;
        }
        let r = analyze_layer(&layer.op, &layer.bias, &dom, &cfg).or_status()?;
        out.write(LipcertBoundReport {
            epsilon: r.epsilon,
            naive: r.naive,
            rbar: r.rbar,
            nested: r.nested,
            lower: if skip_lower { 0.0 } else { r.lower },
            segments: r.segments,
            spectral_slack: r.spectral_slack,
        });
        Ok(())
    })
}
