use std::ffi::{c_char, CString};
use std::ptr;

use cooprec_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { coop_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn small_config() -> *mut CoopConfig {
    let text = CString::new("grid_h=32\ngrid_w=32\nn_rays=128\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { coop_config_parse(text.as_ptr(), &mut cfg) }, CoopStatus::Ok);
    cfg
}

#[test]
fn config_errors_are_reported_and_leave_config_intact() {
    let cfg = small_config();
    let key = CString::new("K").unwrap();
    let bad = CString::new("0").unwrap();
    assert_eq!(unsafe { coop_config_set(cfg, key.as_ptr(), bad.as_ptr()) }, CoopStatus::Config);
    assert!(last_error().contains('K'));
    let unknown = CString::new("nope").unwrap();
    assert_eq!(unsafe { coop_config_set(cfg, unknown.as_ptr(), bad.as_ptr()) }, CoopStatus::Config);
    let good = CString::new("50").unwrap();
    assert_eq!(unsafe { coop_config_set(cfg, key.as_ptr(), good.as_ptr()) }, CoopStatus::Ok);
    assert_eq!(last_error(), "");

    let junk = CString::new("grid_h").unwrap();
    let mut other = ptr::null_mut();
    assert_eq!(unsafe { coop_config_parse(junk.as_ptr(), &mut other) }, CoopStatus::Config);
    assert!(other.is_null());
    unsafe { coop_config_free(cfg) };
}

#[test]
fn null_pointers_are_rejected() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { coop_scene_generate(ptr::null(), 0, &mut out) }, CoopStatus::NullPointer);
    assert_eq!(unsafe { coop_config_default(ptr::null_mut()) }, CoopStatus::NullPointer);
    unsafe {
        coop_scene_free(ptr::null_mut());
        coop_model_free(ptr::null_mut());
        coop_message_free(ptr::null_mut());
    }
}

#[test]
fn scene_rasters_copy_out() {
    let cfg = small_config();
    let mut scene = ptr::null_mut();
    assert_eq!(unsafe { coop_scene_generate(cfg, 7, &mut scene) }, CoopStatus::Ok);
    let (mut n, mut h, mut w, mut c) = (0, 0, 0, 0);
    unsafe {
        assert_eq!(coop_scene_agent_count(scene, &mut n), CoopStatus::Ok);
        assert_eq!(coop_scene_dims(scene, &mut h, &mut w, &mut c), CoopStatus::Ok);
    }
    assert_eq!((n, h, w, c), (3, 32, 32, 2));
    let mut raw = vec![0f32; h * w * c];
    let mut sup = vec![0f32; h * w * c];
    for a in 0..n {
        unsafe {
            assert_eq!(coop_scene_raw_bev(scene, a, raw.as_mut_ptr(), raw.len()), CoopStatus::Ok);
            assert_eq!(coop_scene_supervisory_bev(scene, a, sup.as_mut_ptr(), sup.len()), CoopStatus::Ok);
        }
        for (r, s) in raw.iter().zip(&sup) {
            assert!(*r <= *s);
        }
    }
    let mut short = vec![0f32; 3];
    assert_eq!(unsafe { coop_scene_raw_bev(scene, 0, short.as_mut_ptr(), short.len()) }, CoopStatus::BufferTooSmall);
    assert_eq!(unsafe { coop_scene_raw_bev(scene, n, raw.as_mut_ptr(), raw.len()) }, CoopStatus::InvalidArgument);
    unsafe {
        coop_scene_free(scene);
        coop_config_free(cfg);
    }
}

#[test]
fn model_message_and_segmentation_round_trip() {
    let cfg = small_config();
    let mut scene = ptr::null_mut();
    let mut model = ptr::null_mut();
    let mut msg = ptr::null_mut();
    unsafe {
        assert_eq!(coop_scene_generate(cfg, 3, &mut scene), CoopStatus::Ok);
        assert_eq!(coop_model_new(cfg, 11, &mut model), CoopStatus::Ok);
        assert_eq!(coop_model_message(model, scene, 1, 5, &mut msg), CoopStatus::Ok);
    }

    let mut needed = 0;
    assert_eq!(unsafe { coop_message_encode(msg, ptr::null_mut(), 0, &mut needed) }, CoopStatus::BufferTooSmall);
    let mut bytes = vec![0u8; needed];
    let mut written = 0;
    assert_eq!(unsafe { coop_message_encode(msg, bytes.as_mut_ptr(), bytes.len(), &mut written) }, CoopStatus::Ok);
    assert_eq!(written, needed);

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { coop_message_decode(bytes.as_ptr(), bytes.len(), &mut back) }, CoopStatus::Ok);
    let (mut id, mut gh, mut gw, mut ch, mut count) = (0, 0, 0, 0, 0);
    assert_eq!(unsafe { coop_message_info(back, &mut id, &mut gh, &mut gw, &mut ch, &mut count) }, CoopStatus::Ok);
    assert_eq!((id, gh, gw, ch), (1, 8, 8, 4));
    // Default K = R = 90 on an 8x8 feature grid.
    assert_eq!(count, 52);
    assert_eq!(needed, 31 + count * (4 + 4 * ch as usize));

    assert_eq!(unsafe { coop_message_decode(bytes.as_ptr(), bytes.len() - 1, &mut back) }, CoopStatus::Codec);
    assert!(!last_error().is_empty());

    let mut labels = vec![7u8; 32 * 32];
    assert_eq!(unsafe { coop_model_segment(model, scene, 0, 9, labels.as_mut_ptr(), labels.len()) }, CoopStatus::Ok);
    assert!(labels.iter().all(|&l| l <= 1));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("m.ckpt").to_str().unwrap()).unwrap();
    let mut loaded = ptr::null_mut();
    let mut again = vec![7u8; 32 * 32];
    unsafe {
        assert_eq!(coop_model_save(model, path.as_ptr()), CoopStatus::Ok);
        assert_eq!(coop_model_load(cfg, path.as_ptr(), &mut loaded), CoopStatus::Ok);
        assert_eq!(coop_model_segment(loaded, scene, 0, 9, again.as_mut_ptr(), again.len()), CoopStatus::Ok);
    }
    assert_eq!(labels, again);

    unsafe {
        coop_message_free(back);
        coop_message_free(msg);
        coop_model_free(loaded);
        coop_model_free(model);
        coop_scene_free(scene);
        coop_config_free(cfg);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/cooprec.h")).unwrap();
    for name in ["coop_config_parse", "coop_scene_raw_bev", "coop_model_segment", "coop_message_decode", "coop_last_error", "COOP_STATUS_BUFFER_TOO_SMALL"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    assert!(header.contains("typedef struct CoopModel CoopModel"));
}
