use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use recipe_diffusion::mask_model::{MaskArchitecture, MaskCheckpointMeta, MaskModel, RetentionSchedule};
use recipe_diffusion::rng::stream;
use recipe_diffusion::value_model::{default_value_schedule, ValueArchitecture, ValueCheckpointMeta, ValueModel};
use recipe_diffusion::vocab::three_ingredient_fixture;
use recipe_diffusion_ffi::*;

fn last_error() -> String {
    let p = rd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn flip_table_through_c_abi() {
    let expected = [0.92686, 0.07130, 0.00183, 0.00002];
    for (d, e) in expected.iter().enumerate() {
        let mut p = 0.0;
        assert_eq!(unsafe { rd_distance_class_prob(3, d, 0.025, &mut p) }, RdStatus::Ok);
        assert!((p - e).abs() < 5e-6);
    }
    assert!(rd_last_error_message().is_null());
}

#[test]
fn cumulative_flip_and_marginal_agree() {
    let x0 = [1u8, 0, 1];
    let mut probs = [0.0; 8];
    assert_eq!(
        unsafe { rd_closed_form_marginal(x0.as_ptr(), 3, 7, 0.1, probs.as_mut_ptr(), 8) },
        RdStatus::Ok
    );
    let mut q = 0.0;
    assert_eq!(unsafe { rd_cumulative_flip(0.1, 7, &mut q) }, RdStatus::Ok);
    // Index 5 = bits 1,0,1 = x0 itself.
    assert!((probs[5] - (1.0 - q).powi(3)).abs() < 1e-14);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn errors_set_status_and_message() {
    let x0 = [1u8, 0, 1];
    let mut probs = [0.0; 4];
    let s = unsafe { rd_closed_form_marginal(x0.as_ptr(), 3, 7, 0.1, probs.as_mut_ptr(), 4) };
    assert_eq!(s, RdStatus::LengthMismatch);
    assert!(last_error().contains("expected 8"));

    assert_eq!(
        unsafe { rd_cumulative_flip(0.1, 3, ptr::null_mut()) },
        RdStatus::NullPointer
    );
    assert!(last_error().contains("out_q"));

    let mut q = 0.0;
    assert_eq!(unsafe { rd_cumulative_flip(1.5, 3, &mut q) }, RdStatus::InvalidArgument);

    let bad = [2u8, 0, 1];
    let s = unsafe { rd_closed_form_marginal(bad.as_ptr(), 3, 1, 0.1, probs.as_mut_ptr(), 8) };
    assert_eq!(s, RdStatus::InvalidArgument);

    let mut model = ptr::null_mut();
    let path = CString::new("/nonexistent/mask.ckpt").unwrap();
    assert_eq!(unsafe { rd_mask_model_load(path.as_ptr(), &mut model) }, RdStatus::Io);
    assert!(model.is_null());

    // A successful call clears the message.
    assert_eq!(unsafe { rd_cumulative_flip(0.1, 3, &mut q) }, RdStatus::Ok);
    assert!(rd_last_error_message().is_null());
}

#[test]
fn discovery_and_exact_reverse() {
    let mut p0 = [0.0; 8];
    p0[0b111] = 0.5;
    p0[0b011] = 0.5;
    let target = [1u8, 0, 1];
    let mut r = RdDiscovery::default();
    let s = unsafe { rd_discrete_discovery(p0.as_ptr(), 3, target.as_ptr(), 0.1, 100, 20_000, 3, &mut r) };
    assert_eq!(s, RdStatus::Ok);
    let q: f64 = 0.5 * (1.0 - 0.8f64.powi(100));
    let expected = 0.5 * q * (1.0 - q);
    assert!((r.p_end - expected).abs() < 4.0 * (expected * (1.0 - expected) / 20_000.0).sqrt());
    assert!(r.p_path >= r.p_end);
    assert_eq!(r.hits_end as f64 / 20_000.0, r.p_end);

    let count = 2000;
    let mut bits = vec![0u8; count * 3];
    let s = unsafe { rd_exact_reverse_sample(p0.as_ptr(), 3, 0.025, 100, count, 9, bits.as_mut_ptr(), bits.len()) };
    assert_eq!(s, RdStatus::Ok);
    let on_modes = bits.chunks(3).filter(|b| b[0] == 1 && b[1] == 1).count();
    assert!(on_modes as f64 / count as f64 > 0.95);
}

#[test]
fn cloud_score_matches_core() {
    let points = [0.0, 0.0, 0.0, 0.0, 0.0, -1.0];
    let mut cloud = ptr::null_mut();
    assert_eq!(unsafe { rd_cloud_new(points.as_ptr(), 2, 3, &mut cloud) }, RdStatus::Ok);
    let schedule = RdNoiseSchedule {
        beta_min: 5.0,
        beta_max: 5.0,
        total_time: 1.0,
        steps: 100,
    };
    let w = [0.1, -0.2, -0.4];
    let mut score = [0.0; 3];
    assert_eq!(
        unsafe { rd_mixture_score(cloud, schedule, w.as_ptr(), 3, 0.3, score.as_mut_ptr()) },
        RdStatus::Ok
    );
    let core = recipe_diffusion::continuous::mixture_score(
        &w,
        0.3,
        &recipe_diffusion::continuous::NoiseSchedule::constant(5.0, 1.0, 100).unwrap(),
        &recipe_diffusion::continuous::TrainingCloud::new(vec![vec![0.0; 3], vec![0.0, 0.0, -1.0]]).unwrap(),
    )
    .unwrap();
    assert_eq!(score.to_vec(), core);

    let s = unsafe { rd_mixture_score(cloud, schedule, w.as_ptr(), 3, 0.0, score.as_mut_ptr()) };
    assert_eq!(s, RdStatus::Numerical);
    assert_eq!(
        unsafe { rd_mixture_score(cloud, schedule, w.as_ptr(), 2, 0.3, score.as_mut_ptr()) },
        RdStatus::LengthMismatch
    );
    unsafe { rd_cloud_free(cloud) };
    unsafe { rd_cloud_free(ptr::null_mut()) };
}

#[test]
fn checkpoints_load_and_sample() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = three_ingredient_fixture();
    let mut rng = stream(1, 0);

    let schedule = RetentionSchedule::default();
    let arch = MaskArchitecture {
        hidden: vec![16; 2],
        ..MaskArchitecture::standard(3, schedule.steps())
    };
    let mask_path = dir.path().join("mask.ckpt");
    MaskModel::<f32>::new(arch, &mut rng)
        .unwrap()
        .save(
            &mask_path,
            1,
            &MaskCheckpointMeta {
                schedule,
                vocabulary: fixture.vocabulary.clone(),
                config: None,
            },
        )
        .unwrap();

    let value_path = dir.path().join("value.ckpt");
    ValueModel::<f32>::new(
        ValueArchitecture {
            hidden: vec![16; 2],
            ..ValueArchitecture::standard(3)
        },
        &mut rng,
    )
    .unwrap()
    .save(
        &value_path,
        1,
        &ValueCheckpointMeta {
            schedule: default_value_schedule(),
            vocabulary: fixture.vocabulary.clone(),
            normalization: fixture.normalization.clone().unwrap(),
            config: None,
        },
    )
    .unwrap();

    let mut mask_model = ptr::null_mut();
    let p = CString::new(mask_path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rd_mask_model_load(p.as_ptr(), &mut mask_model) }, RdStatus::Ok);
    assert_eq!(unsafe { rd_mask_model_ingredients(mask_model) }, 3);
    let mut bits = vec![9u8; 64 * 3];
    assert_eq!(
        unsafe { rd_mask_model_sample(mask_model, 64, 4, bits.as_mut_ptr(), bits.len()) },
        RdStatus::Ok
    );
    assert!(bits.iter().all(|&b| b <= 1));
    let mut again = vec![0u8; 64 * 3];
    unsafe { rd_mask_model_sample(mask_model, 64, 4, again.as_mut_ptr(), again.len()) };
    assert_eq!(bits, again);

    // The value checkpoint is not a mask checkpoint.
    let v = CString::new(value_path.to_str().unwrap()).unwrap();
    let mut wrong = ptr::null_mut();
    assert_eq!(
        unsafe { rd_mask_model_load(v.as_ptr(), &mut wrong) },
        RdStatus::Checkpoint
    );
    assert!(wrong.is_null());

    let mut value_model = ptr::null_mut();
    assert_eq!(
        unsafe { rd_value_model_load(v.as_ptr(), &mut value_model) },
        RdStatus::Ok
    );
    assert_eq!(unsafe { rd_value_model_ingredients(value_model) }, 3);
    let masks = [1u8, 1, 0, 1, 1, 1];
    let mut grams = [f64::NAN; 6];
    let mut clamped = usize::MAX;
    let s = unsafe { rd_value_model_generate(value_model, masks.as_ptr(), 2, 5, grams.as_mut_ptr(), 6, &mut clamped) };
    assert_eq!(s, RdStatus::Ok);
    assert_eq!(grams[2], 0.0);
    assert!(grams.iter().all(|g| g.is_finite() && *g >= 0.0));
    assert!(clamped <= 6);

    unsafe {
        rd_mask_model_free(mask_model);
        rd_value_model_free(value_model);
    }
    assert_eq!(unsafe { rd_mask_model_ingredients(ptr::null()) }, 0);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/recipe_diffusion.h");
    let text = std::fs::read_to_string(header).unwrap();
    for name in [
        "rd_last_error_message",
        "rd_mask_model_load",
        "rd_value_model_generate",
        "RD_STATUS_OK",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c", header]).status() else {
        eprintln!("no C compiler found; skipping syntax check");
        return;
    };
    assert!(status.success());
}
