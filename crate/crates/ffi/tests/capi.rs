use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use vbwmm::io::{encode_dataset, generate_synthetic, write_dataset, ClassSpec, Layout, SceneSpec, REPORT_FILE};
use vbwmm::HermitianMatrix;
use vbwmm_ffi::*;

fn scene_bytes() -> (Vec<u8>, Vec<usize>) {
    let a = HermitianMatrix::from_diagonal(&[1.0, 0.5, 0.25]);
    let spec = SceneSpec {
        width: 20,
        height: 16,
        classes: vec![ClassSpec { sigma: a, looks: 8 }, ClassSpec { sigma: a.scale(4.0), looks: 8 }],
        layout: Layout::Stripes,
    };
    let (img, truth) = generate_synthetic(&spec, 11).unwrap();
    (encode_dataset(&img), truth)
}

fn last_class() -> String {
    let p = vbwmm_last_error_class();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

fn decode(bytes: &[u8]) -> *mut VbwmmImage {
    let mut image = ptr::null_mut();
    assert_eq!(unsafe { vbwmm_image_decode(bytes.as_ptr(), bytes.len(), &mut image) }, VbwmmStatus::Ok);
    image
}

#[test]
fn fit_through_handles() {
    let (bytes, truth) = scene_bytes();
    let image = decode(&bytes);
    unsafe {
        assert_eq!((vbwmm_image_width(image), vbwmm_image_height(image)), (20, 16));
        let mut options = vbwmm_options_default();
        options.k_init = 2;
        let mut fit = ptr::null_mut();
        assert_eq!(vbwmm_fit(image, &options, &mut fit), VbwmmStatus::Ok);
        assert!(vbwmm_last_error_message().is_null());
        assert_eq!(vbwmm_fit_effective_k(fit), 2);
        assert!(vbwmm_fit_converged(fit));
        assert!(vbwmm_fit_iterations(fit) > 0);
        assert!(vbwmm_fit_final_elbo(fit).is_finite());
        assert!(vbwmm_fit_seconds(fit) >= 0.0);

        let mut labels = vec![0u32; truth.len()];
        assert_eq!(vbwmm_fit_labels(fit, labels.as_mut_ptr(), labels.len()), VbwmmStatus::Ok);
        let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        assert!(vbwmm::io::score(&labels, &truth).unwrap().overall_accuracy >= 0.98);

        let mut enl = 0.0;
        assert_eq!(vbwmm_fit_enl(fit, 0, &mut enl), VbwmmStatus::Ok);
        assert!(enl > 2.0 && enl < 20.0, "{enl}");
        assert_eq!(vbwmm_fit_enl(fit, 2, &mut enl), VbwmmStatus::InvalidArgument);

        let mut short = [0u32; 3];
        assert_eq!(vbwmm_fit_labels(fit, short.as_mut_ptr(), 3), VbwmmStatus::InvalidArgument);
        assert_eq!(last_class(), "InvalidArgument");

        let dir = tempfile::tempdir().unwrap();
        let c_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(vbwmm_fit_write(fit, c_dir.as_ptr()), VbwmmStatus::Ok);
        assert!(dir.path().join(REPORT_FILE).exists());

        vbwmm_fit_free(fit);
        vbwmm_image_free(image);
    }
}

#[test]
fn null_options_use_defaults_and_match_explicit_defaults() {
    let (bytes, _) = scene_bytes();
    let image = decode(&bytes);
    unsafe {
        let defaults = vbwmm_options_default();
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(vbwmm_fit(image, ptr::null(), &mut a), VbwmmStatus::Ok);
        assert_eq!(vbwmm_fit(image, &defaults, &mut b), VbwmmStatus::Ok);
        assert_eq!(vbwmm_fit_final_elbo(a).to_bits(), vbwmm_fit_final_elbo(b).to_bits());
        vbwmm_fit_free(a);
        vbwmm_fit_free(b);
        vbwmm_image_free(image);
    }
}

#[test]
fn read_from_file() {
    let (bytes, _) = scene_bytes();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.pwc");
    write_dataset(&path, &vbwmm::io::decode_dataset(&bytes).unwrap()).unwrap();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut image = ptr::null_mut();
    unsafe {
        assert_eq!(vbwmm_image_read(c_path.as_ptr(), &mut image), VbwmmStatus::Ok);
        assert_eq!(vbwmm_image_width(image), 20);
        vbwmm_image_free(image);

        let missing = CString::new(dir.path().join("nope.pwc").to_str().unwrap()).unwrap();
        assert_eq!(vbwmm_image_read(missing.as_ptr(), &mut image), VbwmmStatus::Io);
        assert_eq!(last_class(), "IoError");
    }
}

#[test]
fn errors_carry_status_and_class() {
    let (bytes, _) = scene_bytes();
    let mut image = ptr::null_mut();
    unsafe {
        assert_eq!(vbwmm_image_decode(bytes.as_ptr(), bytes.len() - 5, &mut image), VbwmmStatus::Format);
        assert_eq!(last_class(), "TruncatedFile");
        assert!(image.is_null());

        assert_eq!(vbwmm_image_decode(ptr::null(), 0, &mut image), VbwmmStatus::NullPointer);
        assert_eq!(vbwmm_image_decode(bytes.as_ptr(), bytes.len(), ptr::null_mut()), VbwmmStatus::NullPointer);

        let image = decode(&bytes);
        let mut options = vbwmm_options_default();
        options.alpha0 = -1.0;
        let mut fit = ptr::null_mut();
        assert_eq!(vbwmm_fit(image, &options, &mut fit), VbwmmStatus::Config);
        assert_eq!(last_class(), "ConfigError");
        options = vbwmm_options_default();
        options.prune_threshold = 1e9;
        assert_eq!(vbwmm_fit(image, &options, &mut fit), VbwmmStatus::Numeric);
        assert_eq!(last_class(), "AllPruned");
        assert!(fit.is_null());
        vbwmm_image_free(image);

        vbwmm_image_free(ptr::null_mut());
        vbwmm_fit_free(ptr::null_mut());
    }
}

#[test]
fn moments_in_both_modes() {
    let mut closed = VbwmmMoments::default();
    let mut numeric = VbwmmMoments::default();
    unsafe {
        assert_eq!(vbwmm_igg_moments(30.0, 5.0, 100.0, false, &mut closed), VbwmmStatus::Ok);
        assert_eq!(vbwmm_igg_moments(30.0, 5.0, 100.0, true, &mut numeric), VbwmmStatus::Ok);
        assert!((closed.e_l / numeric.e_l - 1.0).abs() < 0.05);
        assert!((numeric.e_inv_l * numeric.e_l) >= 1.0);
        assert_eq!(vbwmm_igg_moments(-1.0, 5.0, 100.0, true, &mut numeric), VbwmmStatus::Numeric);
        assert_eq!(last_class(), "DomainError");
    }
}

#[test]
fn errors_are_thread_local() {
    unsafe {
        let mut m = VbwmmMoments::default();
        assert_eq!(vbwmm_igg_moments(-1.0, 1.0, 1.0, true, &mut m), VbwmmStatus::Numeric);
    }
    std::thread::spawn(|| assert!(vbwmm_last_error_message().is_null())).join().unwrap();
    assert!(!vbwmm_last_error_message().is_null());
}

const HEADER: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/include/vbwmm.h");

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(HEADER).unwrap();
    let source = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 15);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c_and_cxx() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, HEADER])
            .status()
            .unwrap_or_else(|e| panic!("{compiler}: {e}"));
        assert!(status.success(), "{compiler} rejected {}", Path::new(HEADER).display());
    }
}
