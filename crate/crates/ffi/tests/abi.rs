use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use pgt_core::env::TaskId;
use pgt_core::policy::{pretrain, save_bundle, PretrainConfig};
use pgt_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pgt_last_error()) }
        .to_string_lossy()
        .into_owned()
}

fn bundle_file(dir: &Path) -> CString {
    let cfg = PretrainConfig {
        epochs: 1,
        demos_per_task: 4,
        ..PretrainConfig::default()
    };
    let (b, _) = pretrain(&TaskId::ALL, &cfg).unwrap();
    let path = dir.join("bundle.bin");
    save_bundle(&b, &path).unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn tune_and_evaluate_through_the_c_abi() {
    let dir = tempfile::tempdir().unwrap();
    let path = bundle_file(dir.path());
    unsafe {
        let mut bundle = ptr::null_mut();
        assert_eq!(pgt_bundle_load(path.as_ptr(), &mut bundle), PgtStatus::Ok);
        let d = pgt_bundle_latent_dim(bundle);
        assert_eq!(d, 32);

        let mut g0 = ptr::null_mut();
        assert_eq!(
            pgt_latent_from_prompt(bundle, PgtTask::Hunt as u32, 0.3, 1000, &mut g0),
            PgtStatus::Ok
        );
        assert_eq!(pgt_latent_dim(g0), d);

        let mut params = pgt_tune_params_default();
        assert_eq!((params.beta, params.lr, params.epochs), (0.6, 1e-2, 200));
        params.collect_n = 30;
        params.k_pos = 8;
        params.k_neg = 8;
        params.epochs = 5;
        let (mut a, mut b) = (ptr::null_mut(), ptr::null_mut());
        let mut loss = f64::NAN;
        assert_eq!(
            pgt_tune_round(bundle, g0, PgtTask::Hunt as u32, &params, &mut a, &mut loss),
            PgtStatus::Ok
        );
        assert!(loss.is_finite() && loss < std::f64::consts::LN_2);
        assert_eq!(
            pgt_tune_round(
                bundle,
                g0,
                PgtTask::Hunt as u32,
                &params,
                &mut b,
                ptr::null_mut()
            ),
            PgtStatus::Ok
        );
        let (mut va, mut vb) = (vec![0.0; d], vec![0.0; d]);
        assert_eq!(pgt_latent_values(a, va.as_mut_ptr(), d), PgtStatus::Ok);
        assert_eq!(pgt_latent_values(b, vb.as_mut_ptr(), d), PgtStatus::Ok);
        assert_eq!(va, vb, "tuning is deterministic in the seed");

        let (mut value, mut se) = (f64::NAN, f64::NAN);
        assert_eq!(
            pgt_evaluate(bundle, a, PgtTask::Hunt as u32, 10, 0, &mut value, &mut se),
            PgtStatus::Ok
        );
        assert!((0.0..=1.0).contains(&value) && se >= 0.0);

        // save, reload, compare
        let file = CString::new(dir.path().join("g.txt").to_str().unwrap()).unwrap();
        assert_eq!(pgt_latent_save(a, file.as_ptr()), PgtStatus::Ok);
        let mut c = ptr::null_mut();
        assert_eq!(pgt_latent_load(file.as_ptr(), &mut c), PgtStatus::Ok);
        let mut vc = vec![0.0; d];
        assert_eq!(pgt_latent_values(c, vc.as_mut_ptr(), d), PgtStatus::Ok);
        assert_eq!(va, vc);

        for h in [g0, a, b, c] {
            pgt_latent_free(h);
        }
        pgt_bundle_free(bundle);
    }
}

#[test]
fn failures_report_codes_and_messages() {
    unsafe {
        let mut bundle = ptr::null_mut();
        assert_eq!(
            pgt_bundle_load(ptr::null(), &mut bundle),
            PgtStatus::NullPointer
        );
        assert!(last_error().contains("path"));
        assert!(bundle.is_null());

        let missing = CString::new("/definitely/not/here.bin").unwrap();
        assert_eq!(
            pgt_bundle_load(missing.as_ptr(), &mut bundle),
            PgtStatus::Io
        );
        assert!(bundle.is_null());

        let dir = tempfile::tempdir().unwrap();
        let junk = dir.path().join("junk.bin");
        std::fs::write(&junk, b"PGTB garbage").unwrap();
        let junk = CString::new(junk.to_str().unwrap()).unwrap();
        assert_eq!(pgt_bundle_load(junk.as_ptr(), &mut bundle), PgtStatus::Data);
        assert!(!last_error().is_empty());

        let mut g = ptr::null_mut();
        assert_eq!(
            pgt_latent_new([1.0, f64::NAN].as_ptr(), 2, &mut g),
            PgtStatus::InvalidArgument
        );
        assert_eq!(
            pgt_latent_new([1.0, 2.0].as_ptr(), 2, &mut g),
            PgtStatus::Ok
        );
        let mut short = [0.0; 1];
        assert_eq!(
            pgt_latent_values(g, short.as_mut_ptr(), 1),
            PgtStatus::InvalidArgument
        );
        assert_eq!(
            pgt_latent_from_prompt(ptr::null(), 0, 0.3, 1, &mut g),
            PgtStatus::NullPointer
        );

        let path = bundle_file(dir.path());
        assert_eq!(pgt_bundle_load(path.as_ptr(), &mut bundle), PgtStatus::Ok);
        let mut other = ptr::null_mut();
        assert_eq!(
            pgt_latent_from_prompt(bundle, 9, 0.3, 1, &mut other),
            PgtStatus::InvalidArgument
        );
        assert!(last_error().contains("unknown task"));
        // a latent of the wrong width is a data error, not a crash
        let (mut v, mut se) = (0.0, 0.0);
        assert_eq!(
            pgt_evaluate(bundle, g, 0, 5, 0, &mut v, &mut se),
            PgtStatus::Data
        );

        assert_eq!(pgt_bundle_latent_dim(ptr::null()), 0);
        pgt_latent_free(g);
        pgt_latent_free(ptr::null_mut());
        pgt_bundle_free(bundle);
        pgt_bundle_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/pgt.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for symbol in [
        "pgt_bundle_load",
        "pgt_tune_round",
        "pgt_last_error",
        "PGT_STATUS_OK",
        "typedef struct PgtBundle",
    ] {
        assert!(text.contains(symbol), "header lacks {symbol}");
    }
    let dir = tempfile::tempdir().unwrap();
    let main = dir.path().join("main.c");
    std::fs::write(
        &main,
        format!(
            "#include \"{}\"\nint main(void) {{ PgtTuneParams p = pgt_tune_params_default(); return p.epochs > 0 ? 0 : 1; }}\n",
            header.display()
        ),
    )
    .unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&main)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());
}
