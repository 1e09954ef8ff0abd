use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use zrudc_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = zrudc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn gradient_rgb8(w: usize, h: usize) -> Vec<u8> {
    (0..w * h * 3).map(|i| ((i * 37) % 251) as u8).collect()
}

#[test]
fn rgb8_round_trip_and_metrics() {
    let (w, h) = (24, 16);
    let rgb = gradient_rgb8(w, h);
    let mut image = ptr::null_mut();
    let st = unsafe { zrudc_image_from_rgb8(w, h, rgb.as_ptr(), rgb.len(), &mut image) };
    assert_eq!(st, ZrudcStatus::Ok);
    assert_eq!(unsafe { zrudc_image_width(image) }, w);
    assert_eq!(unsafe { zrudc_image_height(image) }, h);

    let mut back = vec![0u8; rgb.len()];
    assert_eq!(
        unsafe { zrudc_image_copy_rgb8(image, back.as_mut_ptr(), back.len()) },
        ZrudcStatus::Ok
    );
    assert_eq!(back, rgb);

    let mut short = vec![0u8; 10];
    assert_eq!(
        unsafe { zrudc_image_copy_rgb8(image, short.as_mut_ptr(), short.len()) },
        ZrudcStatus::InvalidArgument
    );
    assert!(last_error().contains("buffer"));

    let (mut p, mut s) = (0.0, 0.0);
    assert_eq!(unsafe { zrudc_psnr(image, image, &mut p) }, ZrudcStatus::Ok);
    assert_eq!(unsafe { zrudc_ssim(image, image, &mut s) }, ZrudcStatus::Ok);
    assert_eq!((p, s), (99.0, 1.0));
    unsafe { zrudc_image_free(image) };
}

#[test]
fn identity_enhance_preserves_pixels() {
    let (w, h) = (20, 12);
    let rgb = gradient_rgb8(w, h);
    let mut image = ptr::null_mut();
    let mut params = ptr::null_mut();
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(
            zrudc_image_from_rgb8(w, h, rgb.as_ptr(), rgb.len(), &mut image),
            ZrudcStatus::Ok
        );
        assert_eq!(zrudc_params_identity(&mut params), ZrudcStatus::Ok);
        assert_eq!(zrudc_enhance(params, image, 3, &mut out), ZrudcStatus::Ok);
        let mut back = vec![0u8; rgb.len()];
        assert_eq!(
            zrudc_image_copy_rgb8(out, back.as_mut_ptr(), back.len()),
            ZrudcStatus::Ok
        );
        assert_eq!(back, rgb);
        zrudc_image_free(out);
        zrudc_params_free(params);
        zrudc_image_free(image);
    }
}

#[test]
fn file_errors_map_to_status_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cpath(&dir.path().join("missing.png"));
    let mut image = ptr::null_mut();
    assert_eq!(
        unsafe { zrudc_image_load(missing.as_ptr(), &mut image) },
        ZrudcStatus::NotFound
    );
    assert!(last_error().contains("not found"));
    assert!(image.is_null());

    let junk = dir.path().join("junk.zrud");
    std::fs::write(&junk, b"NOPE\x01\x00\x00\x00").unwrap();
    let mut params = ptr::null_mut();
    assert_eq!(
        unsafe { zrudc_params_load(cpath(&junk).as_ptr(), &mut params) },
        ZrudcStatus::Checkpoint
    );
    assert!(last_error().contains("magic"));

    assert_eq!(
        unsafe { zrudc_params_load(ptr::null(), &mut params) },
        ZrudcStatus::NullPointer
    );
    assert_eq!(
        unsafe { zrudc_enhance(ptr::null(), ptr::null(), 0, &mut image) },
        ZrudcStatus::NullPointer
    );
}

#[test]
fn save_then_load_file() {
    let dir = tempfile::tempdir().unwrap();
    let (w, h) = (9, 11);
    let rgb = gradient_rgb8(w, h);
    let path = cpath(&dir.path().join("x.png"));
    unsafe {
        let mut a = ptr::null_mut();
        let mut b = ptr::null_mut();
        assert_eq!(
            zrudc_image_from_rgb8(w, h, rgb.as_ptr(), rgb.len(), &mut a),
            ZrudcStatus::Ok
        );
        assert_eq!(zrudc_image_save(a, path.as_ptr()), ZrudcStatus::Ok);
        assert_eq!(zrudc_image_load(path.as_ptr(), &mut b), ZrudcStatus::Ok);
        let mut p = 0.0;
        assert_eq!(zrudc_psnr(a, b, &mut p), ZrudcStatus::Ok);
        assert_eq!(p, 99.0);
        let mut base = ptr::null_mut();
        assert_eq!(zrudc_baseline(a, 4, 0.7, &mut base), ZrudcStatus::InvalidArgument);
        assert_eq!(zrudc_baseline(a, 5, 0.7, &mut base), ZrudcStatus::Ok);
        zrudc_image_free(base);
        zrudc_image_free(a);
        zrudc_image_free(b);
    }
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(zrudc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/zrudc.h")).unwrap();
    for name in [
        "zrudc_params_load",
        "zrudc_params_identity",
        "zrudc_params_free",
        "zrudc_image_load",
        "zrudc_image_from_rgb8",
        "zrudc_image_copy_rgb8",
        "zrudc_image_save",
        "zrudc_image_free",
        "zrudc_enhance",
        "zrudc_baseline",
        "zrudc_psnr",
        "zrudc_ssim",
        "zrudc_last_error_message",
        "zrudc_version",
        "ZRUDC_STATUS_OK",
        "typedef struct ZrudcImage ZrudcImage",
    ] {
        assert!(header.contains(name), "header is missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"zrudc.h\"\nint main(void) { ZrudcImage *img = 0; return zrudc_image_width(img) == 0 ? 0 : 1; }\n",
    )
    .unwrap();
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = std::process::Command::new(cc)
        .arg("-fsyntax-only")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
