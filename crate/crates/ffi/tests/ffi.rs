use std::ffi::{c_char, CString};
use std::ptr;

use moe_gating::data::Image;
use moe_gating::expert::{build_lenet5, ExpertModel};
use moe_gating::gating::{concat, ExpertLogits, Mixture, Statistic};
use moe_gating::nn::TrainConfig;
use moe_gating::pan::{sc1_decide, train_pan, AttributionDataset, FeatureKind, PanModel};
use moe_gating_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 256];
    let need = unsafe { moe_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf.iter().take(need - 1).map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

fn zero_decision() -> MoeDecision {
    MoeDecision {
        expert_id: 99,
        local_class: 99,
        global_class: 99,
        path: MoeDecisionPath::Statistic,
    }
}

fn expert(channels: usize, classes: usize, seed: u64) -> ExpertModel {
    let mut m = build_lenet5(channels, classes).unwrap();
    m.network.init(seed);
    m
}

fn image(channels: usize, side: usize, seed: u8) -> Image {
    let px = (0..channels * side * side)
        .map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed))
        .collect();
    Image::new(channels, side, side, px).unwrap()
}

fn c_path(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn decide_matches_core_for_every_statistic() {
    let logits = [0.1f32, 2.0, 0.3, 1.9, 0.0, 0.5, 0.7];
    let counts = [3usize, 4];
    let c = concat(&[
        ExpertLogits {
            expert_id: 0,
            global_offset: 0,
            logits: &logits[..3],
        },
        ExpertLogits {
            expert_id: 1,
            global_offset: 3,
            logits: &logits[3..],
        },
    ])
    .unwrap();
    let pairs = [
        (MoeStatistic::Argmax, Statistic::Argmax),
        (MoeStatistic::Ratio, Statistic::Ratio),
        (MoeStatistic::OverallRatio, Statistic::OverallRatio),
        (MoeStatistic::Q3Diff, Statistic::Q3Diff),
        (MoeStatistic::Std, Statistic::Std),
    ];
    for (ffi, core) in pairs {
        let mut out = zero_decision();
        let s = unsafe { moe_decide(ffi, logits.as_ptr(), counts.as_ptr(), 2, &mut out) };
        assert_eq!(s, MoeStatus::Ok, "{core}");
        let want = core.decide(&c).unwrap();
        assert_eq!((out.expert_id, out.local_class, out.global_class), (want.expert_id, want.local_class, want.global_class));
        assert_eq!(out.path, MoeDecisionPath::Statistic);
    }
}

#[test]
fn undefined_ratio_reports_status_and_message() {
    let logits = [0.0f32; 4];
    let counts = [2usize, 2];
    let mut out = zero_decision();
    let s = unsafe { moe_decide(MoeStatistic::Ratio, logits.as_ptr(), counts.as_ptr(), 2, &mut out) };
    assert_eq!(s, MoeStatus::Undefined);
    assert!(last_error().contains("undefined"), "{}", last_error());
    assert_eq!(out.expert_id, 99);
    let s = unsafe { moe_decide(MoeStatistic::Argmax, logits.as_ptr(), counts.as_ptr(), 2, &mut out) };
    assert_eq!(s, MoeStatus::Ok);
    assert_eq!(last_error(), "");
}

#[test]
fn null_pointers_are_rejected() {
    let counts = [2usize];
    let mut out = zero_decision();
    unsafe {
        assert_eq!(moe_decide(MoeStatistic::Argmax, ptr::null(), counts.as_ptr(), 1, &mut out), MoeStatus::NullPointer);
        assert_eq!(
            moe_decide(MoeStatistic::Argmax, [1.0f32, 2.0].as_ptr(), counts.as_ptr(), 1, ptr::null_mut()),
            MoeStatus::NullPointer
        );
        assert_eq!(moe_expert_load(ptr::null(), ptr::null_mut()), MoeStatus::NullPointer);
        assert_eq!(moe_expert_class_count(ptr::null()), 0);
        moe_expert_free(ptr::null_mut());
        moe_mixture_free(ptr::null_mut());
        moe_pan_free(ptr::null_mut());
    }
    assert!(last_error().contains("null"));
}

#[test]
fn coordinate_uses_single_claim() {
    let logits = [5.0f32, 0.0, 0.0, 1.0];
    let counts = [2usize, 2];
    let mut out = zero_decision();
    let s = unsafe { moe_coordinate(logits.as_ptr(), counts.as_ptr(), 2, [0u8, 1].as_ptr(), &mut out) };
    assert_eq!(s, MoeStatus::Ok);
    assert_eq!((out.expert_id, out.global_class, out.path), (1, 3, MoeDecisionPath::ExclusivePan));
    let s = unsafe { moe_coordinate(logits.as_ptr(), counts.as_ptr(), 2, [1u8, 1].as_ptr(), &mut out) };
    assert_eq!(s, MoeStatus::Ok);
    assert_eq!((out.expert_id, out.global_class, out.path), (0, 0, MoeDecisionPath::Fallback));
}

#[test]
fn expert_and_mixture_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let gray = expert(1, 5, 1);
    let rgb = expert(3, 10, 2);
    let (pg, pr) = (dir.path().join("g.ckpt"), dir.path().join("r.ckpt"));
    gray.save(&pg).unwrap();
    rgb.save(&pr).unwrap();

    let mut hg: *mut MoeExpert = ptr::null_mut();
    let mut hr: *mut MoeExpert = ptr::null_mut();
    unsafe {
        assert_eq!(moe_expert_load(c_path(&pg).as_ptr(), &mut hg), MoeStatus::Ok);
        assert_eq!(moe_expert_load(c_path(&pr).as_ptr(), &mut hr), MoeStatus::Ok);
        assert_eq!(moe_expert_class_count(hg), 5);
        assert_eq!(moe_expert_input_channels(hr), 3);
    }

    let img = image(1, 28, 7);
    let want = gray.infer_with_trace(&[&img]).unwrap();
    let mut logits = [0f32; 5];
    let mut fc = vec![0f32; moe_final_fc_width()];
    let s = unsafe {
        moe_expert_infer(hg, img.pixels.as_ptr(), 1, 28, 28, logits.as_mut_ptr(), 5, fc.as_mut_ptr(), fc.len())
    };
    assert_eq!(s, MoeStatus::Ok, "{}", last_error());
    assert_eq!(&logits[..], want.logits.item(0));
    assert_eq!(&fc[..], want.final_fc.item(0));

    let s = unsafe { moe_expert_infer(hg, img.pixels.as_ptr(), 1, 28, 28, logits.as_mut_ptr(), 4, ptr::null_mut(), 0) };
    assert_eq!(s, MoeStatus::InvalidArgument);

    let mut mix: *mut MoeMixture = ptr::null_mut();
    let handles = [hg as *const MoeExpert, hr as *const MoeExpert];
    unsafe {
        assert_eq!(moe_mixture_new(handles.as_ptr(), 2, &mut mix), MoeStatus::Ok);
        // the mixture owns copies
        moe_expert_free(hg);
        moe_expert_free(hr);
        assert_eq!(moe_mixture_len(mix), 2);
        assert_eq!(moe_mixture_total_classes(mix), 15);
    }
    let core = Mixture::new(vec![gray, rgb]).unwrap();
    for seed in 0..4 {
        let img = image(3, 32, seed);
        let want = Statistic::Argmax.decide(&core.trace(&[&img]).unwrap().concat(0)).unwrap();
        let mut out = zero_decision();
        let s = unsafe { moe_mixture_gate(mix, MoeStatistic::Argmax, img.pixels.as_ptr(), 3, 32, 32, &mut out) };
        assert_eq!(s, MoeStatus::Ok);
        assert_eq!(out.global_class, want.global_class);
    }
    let mut out = zero_decision();
    let s = unsafe { moe_mixture_gate(mix, MoeStatistic::Argmax, img.pixels.as_ptr(), 2, 28, 14, &mut out) };
    assert_eq!(s, MoeStatus::InvalidArgument);
    unsafe { moe_mixture_free(mix) };
}

fn tiny_pan(kind: FeatureKind, width: usize, expert_id: usize) -> PanModel {
    let mut ds = AttributionDataset::new(kind, width);
    let pos: Vec<f32> = (0..40 * width).map(|i| (i % 7) as f32 + 3.0).collect();
    let neg: Vec<f32> = (0..40 * width).map(|i| -((i % 5) as f32)).collect();
    ds.push_group("a", expert_id, true, &pos).unwrap();
    ds.push_group("b", expert_id, false, &neg).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 16,
        ..TrainConfig::default()
    };
    train_pan(&ds, Some(expert_id), &cfg, |_| {}).unwrap()
}

#[test]
fn pan_gating_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let experts = vec![expert(1, 4, 3), expert(1, 4, 4)];
    let pans: Vec<PanModel> = (0..2).map(|k| tiny_pan(FeatureKind::OutputLogits, 4, k)).collect();
    let mut mix: *mut MoeMixture = ptr::null_mut();
    let mut hs = Vec::new();
    for (k, e) in experts.iter().enumerate() {
        let p = dir.path().join(format!("e{k}.ckpt"));
        e.save(&p).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { moe_expert_load(c_path(&p).as_ptr(), &mut h) }, MoeStatus::Ok);
        hs.push(h as *const MoeExpert);
    }
    assert_eq!(unsafe { moe_mixture_new(hs.as_ptr(), 2, &mut mix) }, MoeStatus::Ok);
    let mut ph = Vec::new();
    for (k, p) in pans.iter().enumerate() {
        let path = dir.path().join(format!("p{k}.ckpt"));
        p.save(&path).unwrap();
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { moe_pan_load(c_path(&path).as_ptr(), &mut h) }, MoeStatus::Ok);
        assert_eq!(unsafe { moe_pan_feature_width(h) }, 4);
        ph.push(h as *const MoePan);
    }

    let feat = [4.0f32, 5.0, 6.0, 3.0];
    let (mut b, mut conf) = (9u8, -1f32);
    assert_eq!(unsafe { moe_pan_attribute(ph[0], feat.as_ptr(), 4, &mut b, &mut conf) }, MoeStatus::Ok);
    let want = pans[0].attribute(&feat).unwrap();
    assert_eq!((b != 0, conf), (want.belongs, want.confidence));
    assert_eq!(
        unsafe { moe_pan_attribute(ph[0], feat.as_ptr(), 3, &mut b, ptr::null_mut()) },
        MoeStatus::IncompatibleFeatures
    );

    let core = Mixture::new(experts).unwrap();
    let img = image(1, 28, 11);
    let want = sc1_decide(&core, &pans, &img).unwrap();
    let mut out = zero_decision();
    let s = unsafe { moe_mixture_gate_sc1(mix, ph.as_ptr(), 2, img.pixels.as_ptr(), 1, 28, 28, &mut out) };
    assert_eq!(s, MoeStatus::Ok, "{}", last_error());
    assert_eq!(out.global_class, want.global_class);
    let s = unsafe { moe_mixture_gate_sc1(mix, ph.as_ptr(), 1, img.pixels.as_ptr(), 1, 28, 28, &mut out) };
    assert_eq!(s, MoeStatus::InvalidArgument);
    let s = unsafe { moe_mixture_gate_sc2(mix, ph[0], img.pixels.as_ptr(), 1, 28, 28, &mut out) };
    assert_eq!(s, MoeStatus::Ok);

    unsafe {
        for h in hs {
            moe_expert_free(h as *mut MoeExpert);
        }
        for h in ph {
            moe_pan_free(h as *mut MoePan);
        }
        moe_mixture_free(mix);
    }
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let p = CString::new("/nonexistent/expert.ckpt").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { moe_expert_load(p.as_ptr(), &mut h) }, MoeStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/expert.ckpt"));
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(moe_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_exports_and_compiles() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/moe_gating.h");
    let text = std::fs::read_to_string(&header).unwrap();
    let src = std::fs::read_to_string(std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs")).unwrap();
    for line in src.lines().filter(|l| l.contains("extern \"C\" fn ")) {
        let name = line.split("fn ").nth(1).unwrap().split('(').next().unwrap();
        assert!(text.contains(&format!("{name}(")), "{name} missing from header");
    }
    let Ok(out) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
    else {
        eprintln!("no C compiler; skipped syntax check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
