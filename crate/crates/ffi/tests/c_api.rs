use std::ffi::{c_char, CString};
use std::ptr;

use anchorseg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let n = unsafe { asg_last_error_message(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..n.min(255)].iter().map(|c| *c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn map(h: usize, w: usize, values: &[f64]) -> *mut AsgProbMap {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { asg_prob_map_new(h, w, values.as_ptr(), &mut out) }, AsgStatus::Ok);
    out
}

fn values(m: *const AsgProbMap, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    assert_eq!(unsafe { asg_prob_map_values(m, v.as_mut_ptr(), n) }, AsgStatus::Ok);
    v
}

#[test]
fn prob_map_round_trip_and_validation() {
    let m = map(2, 3, &[0.0, 0.1, 0.2, 0.3, 0.4, 1.0]);
    let (mut h, mut w) = (0, 0);
    assert_eq!(unsafe { asg_prob_map_shape(m, &mut h, &mut w) }, AsgStatus::Ok);
    assert_eq!((h, w), (2, 3));
    assert_eq!(values(m, 6), vec![0.0, 0.1, 0.2, 0.3, 0.4, 1.0]);
    let mut short = vec![0.0; 5];
    assert_eq!(
        unsafe { asg_prob_map_values(m, short.as_mut_ptr(), 5) },
        AsgStatus::InvalidArgument
    );
    unsafe { asg_prob_map_free(m) };

    let mut out = ptr::null_mut();
    let bad = [0.5, 1.5];
    assert_eq!(
        unsafe { asg_prob_map_new(1, 2, bad.as_ptr(), &mut out) },
        AsgStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { asg_prob_map_new(1, 2, ptr::null(), &mut out) },
        AsgStatus::NullPointer
    );
    unsafe { asg_prob_map_free(ptr::null_mut()) };
}

#[test]
fn color_cue_prefers_gray_over_red() {
    let rgb: [u8; 6] = [128, 128, 128, 200, 30, 30];
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { asg_color_cue(1, 2, rgb.as_ptr(), &mut out) }, AsgStatus::Ok);
    let v = values(out, 2);
    assert!(v[0] > v[1]);
    assert!((v[0] - 0.5).abs() < 0.02);
    unsafe { asg_prob_map_free(out) };
}

#[test]
fn fused_anchors_and_anchor_loss() {
    let c = map(1, 2, &[0.5, 0.2]);
    let o = map(1, 2, &[0.4, 1.0]);
    let cues = [c as *const AsgProbMap, o as *const AsgProbMap];
    let (mut pos, mut neg) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { asg_fuse_anchors(cues.as_ptr(), 2, &mut pos, &mut neg) }, AsgStatus::Ok);
    let p = values(pos, 2);
    let n = values(neg, 2);
    assert!((p[0] - 0.2).abs() < 1e-12 && (p[1] - 0.2).abs() < 1e-12);
    assert!((n[0] - 0.3).abs() < 1e-12 && n[1].abs() < 1e-12);

    let pred = map(1, 2, &[1.0, 0.0]);
    let mut loss = 0.0;
    assert_eq!(unsafe { asg_anchor_loss(pred, pos, neg, &mut loss) }, AsgStatus::Ok);
    // mean of (-0.2 * 1 - 0.3 * 0) and (-0.2 * 0 - 0.0 * 1)
    assert!((loss + 0.1).abs() < 1e-12);

    let other = map(2, 1, &[0.0, 0.0]);
    assert_eq!(
        unsafe { asg_anchor_loss(other, pos, neg, &mut loss) },
        AsgStatus::ShapeMismatch
    );
    assert_eq!(
        unsafe { asg_fuse_anchors(cues.as_ptr(), 0, &mut pos, &mut neg) },
        AsgStatus::InvalidArgument
    );
    for m in [c, o, pos, neg, pred, other] {
        unsafe { asg_prob_map_free(m) };
    }
}

#[test]
fn pair_losses_follow_the_quadruplet_formula() {
    // Two pixels per frame; the foreground pixel carries feature e0, background e1.
    let features = [1.0, 0.0, 0.0, 1.0];
    let pred = map(1, 2, &[1.0, 0.0]);
    let pos = map(1, 2, &[1.0, 0.0]);
    let neg = map(1, 2, &[0.0, 1.0]);
    let frame = AsgFrameInputs {
        prediction: pred,
        features: features.as_ptr(),
        channels: 2,
        positive: pos,
        negative: neg,
    };
    let mut out = AsgLosses::default();
    assert_eq!(unsafe { asg_pair_losses(&frame, &frame, 0.2, 0.8, &mut out) }, AsgStatus::Ok);
    // cos(fg, bg) = 0 and cos(fg_a, fg_b) = cos(bg_a, bg_b) = 1: both hinges are inactive.
    assert_eq!(out.diffusion_fg, 0.0);
    assert_eq!(out.diffusion_bg, 0.0);
    assert!((out.anchor_a + 1.0).abs() < 1e-12);
    assert!((out.total + 2.0).abs() < 1e-12);
    assert_eq!(out.degenerate, 0);

    assert_eq!(
        unsafe { asg_pair_losses(&frame, &frame, -0.1, 0.8, &mut out) },
        AsgStatus::InvalidArgument
    );
    for m in [pred, pos, neg] {
        unsafe { asg_prob_map_free(m) };
    }
}

#[test]
fn otsu_and_overlap() {
    let m = map(1, 4, &[0.1, 0.15, 0.8, 0.9]);
    let mut t = 0.0;
    let mut mask = [9u8; 4];
    assert_eq!(unsafe { asg_otsu(m, &mut t, mask.as_mut_ptr(), 4) }, AsgStatus::Ok);
    assert_eq!(mask, [0, 0, 1, 1]);
    assert!(t > 0.15 && t < 0.8);
    unsafe { asg_prob_map_free(m) };

    let truth = [0u8, 1, 1, 1];
    let (mut iou, mut dice) = (0.0, 0.0);
    assert_eq!(
        unsafe { asg_iou_dice(mask.as_ptr(), truth.as_ptr(), 4, &mut iou, &mut dice) },
        AsgStatus::Ok
    );
    assert!((iou - 2.0 / 3.0).abs() < 1e-12);
    assert!((dice - 0.8).abs() < 1e-12);
}

#[test]
fn missing_model_reports_checkpoint_error() {
    let path = CString::new("/nonexistent/model.safetensors").unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { asg_model_load(path.as_ptr(), &mut model) }, AsgStatus::Checkpoint);
    assert!(last_error().contains("no checkpoint"));
    assert!(model.is_null());
}

#[test]
fn saved_model_predicts_through_the_c_api() {
    use anchorseg::nn::{Checkpoint, UNet, UNetDescriptor};
    let net = UNet::new(
        UNetDescriptor {
            depth: 1,
            base_width: 2,
            in_channels: 3,
        },
        3,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("m.safetensors");
    Checkpoint::new(net, serde_json::Value::Null).save(&file).unwrap();

    let path = CString::new(file.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { asg_model_load(path.as_ptr(), &mut model) }, AsgStatus::Ok);
    let rgb: Vec<u8> = (0..4 * 6 * 3).map(|i| (i * 11 % 256) as u8).collect();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { asg_model_predict(model, 4, 6, rgb.as_ptr(), &mut out) },
        AsgStatus::Ok
    );
    let v = values(out, 24);
    assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    assert_eq!(
        unsafe { asg_model_predict(model, 3, 6, rgb.as_ptr(), &mut out) },
        AsgStatus::InvalidArgument
    );
    unsafe {
        asg_prob_map_free(out);
        asg_model_free(model);
    }
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/anchorseg.h");
    for name in [
        "asg_last_error_message",
        "asg_prob_map_new",
        "asg_color_cue",
        "asg_fuse_anchors",
        "asg_anchor_loss",
        "asg_pair_losses",
        "asg_otsu",
        "asg_iou_dice",
        "asg_model_load",
        "asg_model_predict",
        "ASG_STATUS_SHAPE_MISMATCH",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
