//! C ABI over the scenario config, world generation, the wire codec and
//! segmentation inference.
//!
//! Every handle is opaque and owned by the caller once returned; release it
//! with the matching `*_free`. Functions return a [`CoopStatus`]; on failure
//! the message is available from [`coop_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use cooprec::codec::{encode_message, spatial_select, CodecError, CompressionConfig, SparseFeatureMessage};
use cooprec::config::ScenarioConfig;
use cooprec::harness::predict;
use cooprec::nets::{Arch, Network};
use cooprec::scene::{BevGrid, Scene};
use cooprec::tensor::layers::Session;
use cooprec::tensor::{checkpoint, NormMode};
use cooprec::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoopStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Dimension = 4,
    Contract = 5,
    Generation = 6,
    Codec = 7,
    Checkpoint = 8,
    Invariant = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

pub struct CoopConfig(ScenarioConfig);

pub struct CoopScene(Scene);

/// A network together with the config it was built for.
pub struct CoopModel {
    net: Network,
    cfg: ScenarioConfig,
}

pub struct CoopMessage(SparseFeatureMessage);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(CoopStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Dimension(_) => CoopStatus::Dimension,
            Error::Contract(_) => CoopStatus::Contract,
            Error::Config(_) => CoopStatus::Config,
            Error::Generation(_) => CoopStatus::Generation,
            Error::Codec(_) => CoopStatus::Codec,
            Error::Checkpoint(_) => CoopStatus::Checkpoint,
            Error::Invariant(_) => CoopStatus::Invariant,
            Error::Io(_) => CoopStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        Failure(CoopStatus::Codec, e.to_string())
    }
}

fn fail<T>(status: CoopStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CoopStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            CoopStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            CoopStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(|| fail(CoopStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().map_or_else(|| fail(CoopStatus::NullPointer, format!("{what} is null")), Ok)
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return fail(CoopStatus::NullPointer, format!("{what} is null"));
    }
    CStr::from_ptr(p).to_str().or_else(|_| fail(CoopStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(CoopStatus::NullPointer, "output handle pointer is null");
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(p))));
    }
}

/// Copies the calling thread's last error message into `buf` as a
/// NUL-terminated string, truncating if needed. Returns the full message
/// length excluding the terminator.
#[no_mangle]
pub unsafe extern "C" fn coop_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_config_default(out: *mut *mut CoopConfig) -> CoopStatus {
    guard(|| put(out, CoopConfig(ScenarioConfig::default())))
}

/// Parses a key=value document on top of the defaults.
#[no_mangle]
pub unsafe extern "C" fn coop_config_parse(text: *const c_char, out: *mut *mut CoopConfig) -> CoopStatus {
    guard(|| {
        let cfg = ScenarioConfig::parse_text(c_str(text, "text")?)?;
        put(out, CoopConfig(cfg))
    })
}

/// Sets one key and revalidates; the config is unchanged on failure.
#[no_mangle]
pub unsafe extern "C" fn coop_config_set(cfg: *mut CoopConfig, key: *const c_char, value: *const c_char) -> CoopStatus {
    guard(|| {
        let cfg = deref_mut(cfg, "config")?;
        let mut next = cfg.0.clone();
        next.set(c_str(key, "key")?, c_str(value, "value")?)?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_config_free(cfg: *mut CoopConfig) {
    free(cfg)
}

#[no_mangle]
pub unsafe extern "C" fn coop_scene_generate(cfg: *const CoopConfig, seed: u64, out: *mut *mut CoopScene) -> CoopStatus {
    guard(|| {
        let scene = Scene::build(&deref(cfg, "config")?.0, seed)?;
        put(out, CoopScene(scene))
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_scene_agent_count(scene: *const CoopScene, out: *mut usize) -> CoopStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(scene, "scene")?.0.n_agents();
        Ok(())
    })
}

/// Grid height, width and channel count of every raster in the scene.
#[no_mangle]
pub unsafe extern "C" fn coop_scene_dims(scene: *const CoopScene, h: *mut usize, w: *mut usize, c: *mut usize) -> CoopStatus {
    guard(|| {
        let g = &deref(scene, "scene")?.0.raw[0];
        *deref_mut(h, "h")? = g.h;
        *deref_mut(w, "w")? = g.w;
        *deref_mut(c, "c")? = g.c;
        Ok(())
    })
}

unsafe fn copy_bev(scene: *const CoopScene, agent: usize, buf: *mut f32, len: usize, pick: fn(&Scene) -> &[BevGrid]) -> CoopStatus {
    guard(|| {
        let grids = pick(&deref(scene, "scene")?.0);
        let g = match grids.get(agent) {
            Some(g) => g,
            None => return fail(CoopStatus::InvalidArgument, format!("agent {agent} out of range")),
        };
        if buf.is_null() {
            return fail(CoopStatus::NullPointer, "buffer is null");
        }
        if len < g.data.len() {
            return fail(CoopStatus::BufferTooSmall, format!("need {} floats, got {len}", g.data.len()));
        }
        ptr::copy_nonoverlapping(g.data.as_ptr(), buf, g.data.len());
        Ok(())
    })
}

/// Copies an agent's own-sensor raster (HWC, f32) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn coop_scene_raw_bev(scene: *const CoopScene, agent: usize, buf: *mut f32, len: usize) -> CoopStatus {
    copy_bev(scene, agent, buf, len, |s| &s.raw)
}

/// Copies an agent's all-agent aggregated raster (HWC, f32) into `buf`.
#[no_mangle]
pub unsafe extern "C" fn coop_scene_supervisory_bev(scene: *const CoopScene, agent: usize, buf: *mut f32, len: usize) -> CoopStatus {
    copy_bev(scene, agent, buf, len, |s| &s.supervisory)
}

#[no_mangle]
pub unsafe extern "C" fn coop_scene_free(scene: *mut CoopScene) {
    free(scene)
}

/// Freshly initialized network for `cfg`.
#[no_mangle]
pub unsafe extern "C" fn coop_model_new(cfg: *const CoopConfig, seed: u64, out: *mut *mut CoopModel) -> CoopStatus {
    guard(|| {
        let cfg = deref(cfg, "config")?.0.clone();
        let net = Network::new(Arch::from_config(&cfg), seed)?;
        put(out, CoopModel { net, cfg })
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_model_load(cfg: *const CoopConfig, path: *const c_char, out: *mut *mut CoopModel) -> CoopStatus {
    guard(|| {
        let cfg = deref(cfg, "config")?.0.clone();
        let mut net = Network::new(Arch::from_config(&cfg), 0)?;
        checkpoint::load_file(&mut net.store, Path::new(c_str(path, "path")?))?;
        put(out, CoopModel { net, cfg })
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_model_save(model: *const CoopModel, path: *const c_char) -> CoopStatus {
    guard(|| {
        checkpoint::save(&deref(model, "model")?.net.store, Path::new(c_str(path, "path")?))?;
        Ok(())
    })
}

fn check_scene(model: &CoopModel, scene: &Scene) -> Result<(), Failure> {
    let g = &scene.raw[0];
    if (g.h, g.w) != (model.cfg.grid_h, model.cfg.grid_w) {
        return fail(CoopStatus::Dimension, format!("scene grid {}x{} does not match model grid {}x{}", g.h, g.w, model.cfg.grid_h, model.cfg.grid_w));
    }
    Ok(())
}

/// Vehicle labels (0 or 1, row-major H*W) for `ego` under the model
/// config's regime. `exchange_seed` fixes neighbor cell selection.
#[no_mangle]
pub unsafe extern "C" fn coop_model_segment(
    model: *const CoopModel,
    scene: *const CoopScene,
    ego: usize,
    exchange_seed: u64,
    labels: *mut u8,
    len: usize,
) -> CoopStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let scene = &deref(scene, "scene")?.0;
        check_scene(model, scene)?;
        if ego >= scene.n_agents() {
            return fail(CoopStatus::InvalidArgument, format!("ego {ego} out of range"));
        }
        let pred = predict(&model.net, &model.cfg, model.cfg.regime, scene, ego, exchange_seed)?;
        if labels.is_null() {
            return fail(CoopStatus::NullPointer, "labels is null");
        }
        if len < pred.labels.len() {
            return fail(CoopStatus::BufferTooSmall, format!("need {} bytes, got {len}", pred.labels.len()));
        }
        ptr::copy_nonoverlapping(pred.labels.as_ptr(), labels, pred.labels.len());
        Ok(())
    })
}

/// The message `agent` would send: encoded, channel-compressed and
/// spatially selected with `select_seed`.
#[no_mangle]
pub unsafe extern "C" fn coop_model_message(
    model: *const CoopModel,
    scene: *const CoopScene,
    agent: usize,
    select_seed: u64,
    out: *mut *mut CoopMessage,
) -> CoopStatus {
    guard(|| {
        let model = deref(model, "model")?;
        let scene = &deref(scene, "scene")?.0;
        check_scene(model, scene)?;
        if agent >= scene.n_agents() {
            return fail(CoopStatus::InvalidArgument, format!("agent {agent} out of range"));
        }
        let mut s = Session::new(&model.net.store, NormMode::Eval);
        let x = s.constant(scene.raw[agent].to_tensor());
        let f = model.net.layers.encoder.forward(&mut s, x)?;
        let c = model.net.layers.compressor.forward(&mut s, f)?;
        let cfg = &model.cfg;
        let comp = CompressionConfig { k_percent: cfg.k_percent, r_percent: cfg.r_percent, c_compressed: cfg.c_compressed, rng_seed: select_seed };
        let selected = spatial_select(s.value(c), &comp)?;
        let msg = encode_message(s.value(c), &selected, &scene.world.agent_poses[agent], agent as u16)?;
        put(out, CoopMessage(msg))
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_model_free(model: *mut CoopModel) {
    free(model)
}

/// Parses wire bytes into a message handle.
#[no_mangle]
pub unsafe extern "C" fn coop_message_decode(bytes: *const u8, len: usize, out: *mut *mut CoopMessage) -> CoopStatus {
    guard(|| {
        if bytes.is_null() && len > 0 {
            return fail(CoopStatus::NullPointer, "bytes is null");
        }
        let slice = if len == 0 { &[][..] } else { std::slice::from_raw_parts(bytes, len) };
        put(out, CoopMessage(SparseFeatureMessage::from_bytes(slice)?))
    })
}

/// Serializes into `buf`. `written` always receives the required size, so a
/// first call with `cap == 0` sizes the buffer.
#[no_mangle]
pub unsafe extern "C" fn coop_message_encode(msg: *const CoopMessage, buf: *mut u8, cap: usize, written: *mut usize) -> CoopStatus {
    guard(|| {
        let bytes = deref(msg, "message")?.0.to_bytes()?;
        *deref_mut(written, "written")? = bytes.len();
        if cap < bytes.len() {
            return fail(CoopStatus::BufferTooSmall, format!("need {} bytes, got {cap}", bytes.len()));
        }
        if buf.is_null() {
            return fail(CoopStatus::NullPointer, "buffer is null");
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, bytes.len());
        Ok(())
    })
}

/// Sender id, grid size, compressed channel count and number of entries.
#[no_mangle]
pub unsafe extern "C" fn coop_message_info(
    msg: *const CoopMessage,
    agent_id: *mut u16,
    grid_h: *mut u16,
    grid_w: *mut u16,
    channels: *mut u8,
    count: *mut usize,
) -> CoopStatus {
    guard(|| {
        let m = &deref(msg, "message")?.0;
        *deref_mut(agent_id, "agent_id")? = m.agent_id;
        *deref_mut(grid_h, "grid_h")? = m.grid_h;
        *deref_mut(grid_w, "grid_w")? = m.grid_w;
        *deref_mut(channels, "channels")? = m.c_compressed;
        *deref_mut(count, "count")? = m.count();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn coop_message_free(msg: *mut CoopMessage) {
    free(msg)
}
