use std::ffi::{CStr, CString};
use std::ptr;

use lmcompress::cells::{ArchConfig, CellKind};
use lmcompress::langmodel::{LanguageModel, Vocabulary};
use lmcompress::numkit::Rng;
use lmcompress::pipeline::{save_model, ModelStats};
use lmcompress_ffi::*;

fn model() -> LanguageModel {
    let vocab = Vocabulary::build("a b c d e f a b a", None, 1).unwrap();
    let cfg = ArchConfig::new(CellKind::Lstm, vocab.len(), 6, 2);
    LanguageModel::dense(vocab, &cfg, &mut Rng::new(4)).unwrap()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn load(path: &std::path::Path) -> (LmcStatus, *mut LmcModel) {
    let mut h = ptr::null_mut();
    let s = unsafe { lmc_model_load(cpath(path).as_ptr(), &mut h) };
    (s, h)
}

#[test]
fn load_query_save_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("m.lmc");
    let m = model();
    save_model(&m, &src).unwrap();
    let (s, h) = load(&src);
    assert_eq!(s, LmcStatus::Ok);

    let mut stats = LmcStats::default();
    assert_eq!(unsafe { lmc_model_stats(h, &mut stats) }, LmcStatus::Ok);
    let expect = ModelStats::of(&m);
    assert_eq!(stats.total_params, expect.total_params as u64);
    assert_eq!(stats.macs, unsafe { lmc_model_mac_count(h) });
    assert_eq!(unsafe { lmc_model_vocab_size(h) }, m.vocab.len());

    let ids: Vec<u32> = vec![2, 3, 4, 2, 5, 1];
    let mut ppl = 0.0;
    assert_eq!(unsafe { lmc_model_perplexity(h, ids.as_ptr(), ids.len(), 1, &mut ppl) }, LmcStatus::Ok);
    let stream: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    assert_eq!(ppl, m.perplexity(&stream).unwrap());

    let mut probs = vec![0.0; m.vocab.len()];
    assert_eq!(unsafe { lmc_model_predict(h, ids.as_ptr(), ids.len(), probs.as_mut_ptr(), probs.len()) }, LmcStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let dst = dir.path().join("copy.lmc");
    assert_eq!(unsafe { lmc_model_save(h, cpath(&dst).as_ptr()) }, LmcStatus::Ok);
    assert_eq!(std::fs::read(&src).unwrap(), std::fs::read(&dst).unwrap());
    unsafe { lmc_model_free(h) };
}

#[test]
fn compress_returns_new_handle() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("m.lmc");
    save_model(&model(), &src).unwrap();
    let (_, h) = load(&src);
    let spec = CString::new("[[step]]\nop = \"lr_cells\"\nrank = 3\ninit = { kind = \"svd\" }\n").unwrap();
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { lmc_model_compress(h, spec.as_ptr(), &mut c) }, LmcStatus::Ok);
    assert!(unsafe { lmc_model_mac_count(c) < lmc_model_mac_count(h) });
    let bad = CString::new("[[step]]\nop = \"prune\"\ncomponents = { all = 2.0 }\n").unwrap();
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { lmc_model_compress(h, bad.as_ptr(), &mut d) }, LmcStatus::Config);
    assert!(d.is_null());
    unsafe {
        lmc_model_free(c);
        lmc_model_free(h);
    }
}

#[test]
fn errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (s, h) = load(&dir.path().join("missing.lmc"));
    assert_eq!(s, LmcStatus::Io);
    assert!(h.is_null());
    let msg = unsafe { CStr::from_ptr(lmc_last_error()) }.to_str().unwrap().to_string();
    assert!(msg.contains("missing.lmc"), "{msg}");

    let path = dir.path().join("m.lmc");
    save_model(&model(), &path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 1] ^= 0xff;
    std::fs::write(&path, &bytes).unwrap();
    assert_eq!(load(&path).0, LmcStatus::Integrity);
    std::fs::write(&path, b"not a model").unwrap();
    assert_eq!(load(&path).0, LmcStatus::Format);

    let good = dir.path().join("g.lmc");
    save_model(&model(), &good).unwrap();
    let (_, h) = load(&good);
    let ids = [999u32, 2];
    let mut ppl = 0.0;
    assert_eq!(unsafe { lmc_model_perplexity(h, ids.as_ptr(), 2, 1, &mut ppl) }, LmcStatus::InvalidArgument);
    let mut small = [0.0; 2];
    assert_eq!(unsafe { lmc_model_predict(h, ids.as_ptr(), 1, small.as_mut_ptr(), 2) }, LmcStatus::InvalidArgument);
    unsafe { lmc_model_free(h) };
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lmcompress.h")).unwrap();
    for f in [
        "lmc_last_error",
        "lmc_version",
        "lmc_model_load",
        "lmc_model_free",
        "lmc_model_save",
        "lmc_model_stats",
        "lmc_model_mac_count",
        "lmc_model_vocab_size",
        "lmc_model_perplexity",
        "lmc_model_predict",
        "lmc_model_compress",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct LmcModel LmcModel;"));
}
