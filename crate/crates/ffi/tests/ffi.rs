use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use placekd::data::{generate_synthetic, save_dataset, Split, SyntheticWorldConfig};
use placekd::models::{Checkpoint, ModelConfig, StudentConfig};
use placekd::retrieval::{build_db, DbMeta};
use placekd_ffi::*;

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    ckpt: Checkpoint,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let world = SyntheticWorldConfig {
        n_places: 3,
        views_per_place: 6,
        ..SyntheticWorldConfig::default()
    };
    save_dataset(&generate_synthetic(&world, 2).unwrap(), &root.join("world")).unwrap();
    let ckpt = Checkpoint::init(ModelConfig::Student(StudentConfig::default()), 7).unwrap();
    ckpt.save(&root.join("student.ckpt")).unwrap();
    Fixture { _dir: dir, root, ckpt }
}

fn c(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(pkd_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn model_and_database_round_trip_through_the_c_abi() {
    let f = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(pkd_model_load(c(&f.root.join("student.ckpt")).as_ptr(), &mut model), PkdStatus::Ok);
        assert_eq!(pkd_model_descriptor_width(model), 96);
        assert!(pkd_model_param_count(model) > 0);
        let mut shape = [0usize; 3];
        assert_eq!(pkd_model_image_shape(model, shape.as_mut_ptr()), PkdStatus::Ok);
        assert_eq!(shape, [3, 32, 32]);

        let ds = placekd::data::load_dataset(&f.root.join("world")).unwrap();
        let image: Vec<f32> = ds.images[0].data().iter().map(|&v| v as f32).collect();
        let mut out = vec![0f32; 96];
        assert_eq!(
            pkd_model_describe(model, image.as_ptr(), image.len(), out.as_mut_ptr(), out.len()),
            PkdStatus::Ok
        );
        let m = f.ckpt.model().unwrap();
        let want = m.describe(&f.ckpt.params, &ds.images[0]).unwrap();
        for (a, b) in out.iter().zip(want.values()) {
            assert_eq!(*a, *b as f32);
        }

        let mut db = ptr::null_mut();
        assert_eq!(pkd_database_build(model, c(&f.root.join("world")).as_ptr(), &mut db), PkdStatus::Ok);
        let lib_db = build_db(&ds, Split::Database, &m, &f.ckpt.params, DbMeta::default()).unwrap();
        assert_eq!(pkd_database_len(db), lib_db.len());
        assert_eq!(pkd_database_width(db), 96);

        let n = 3;
        let (mut ids, mut dist) = (vec![0u64; n], vec![0f32; n]);
        assert_eq!(
            pkd_database_search(db, out.as_ptr(), out.len(), n, ids.as_mut_ptr(), dist.as_mut_ptr()),
            PkdStatus::Ok
        );
        let want = lib_db.search(&out, n).unwrap();
        assert_eq!(ids, want.iter().map(|h| h.id).collect::<Vec<_>>());
        assert_eq!(dist, want.iter().map(|h| h.distance).collect::<Vec<_>>());

        let path = f.root.join("db.bin");
        assert_eq!(pkd_database_save(db, c(&path).as_ptr()), PkdStatus::Ok);
        let mut back = ptr::null_mut();
        assert_eq!(pkd_database_load(c(&path).as_ptr(), &mut back), PkdStatus::Ok);
        assert_eq!(pkd_database_len(back), pkd_database_len(db));
        let (mut ids2, mut dist2) = (vec![0u64; n], vec![0f32; n]);
        pkd_database_search(back, out.as_ptr(), out.len(), n, ids2.as_mut_ptr(), dist2.as_mut_ptr());
        assert_eq!((ids, dist), (ids2, dist2));

        pkd_database_free(back);
        pkd_database_free(db);
        pkd_model_free(model);
    }
}

#[test]
fn failures_report_status_and_message() {
    let f = fixture();
    unsafe {
        let mut model = ptr::null_mut();
        assert_eq!(pkd_model_load(ptr::null(), &mut model), PkdStatus::NullPointer);
        assert!(model.is_null());
        assert!(last_error().contains("null"));
        assert_eq!(
            pkd_model_load(c(&f.root.join("missing.ckpt")).as_ptr(), &mut model),
            PkdStatus::Io
        );
        assert!(last_error().contains("missing.ckpt"));

        // version fields sit right after the 8-byte magic in both formats
        let mut bytes = std::fs::read(f.root.join("student.ckpt")).unwrap();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(f.root.join("future.ckpt"), &bytes).unwrap();
        assert_eq!(
            pkd_model_load(c(&f.root.join("future.ckpt")).as_ptr(), &mut model),
            PkdStatus::CheckpointVersion
        );

        assert_eq!(pkd_model_load(c(&f.root.join("student.ckpt")).as_ptr(), &mut model), PkdStatus::Ok);
        let mut db = ptr::null_mut();
        assert_eq!(pkd_database_build(model, c(&f.root.join("world")).as_ptr(), &mut db), PkdStatus::Ok);
        let path = f.root.join("db.bin");
        pkd_database_save(db, c(&path).as_ptr());
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[8..12].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let mut back = ptr::null_mut();
        assert_eq!(pkd_database_load(c(&path).as_ptr(), &mut back), PkdStatus::DatabaseVersion);
        assert!(back.is_null());

        let short = [0f32; 5];
        let mut out = [0f32; 96];
        assert_eq!(
            pkd_model_describe(model, short.as_ptr(), short.len(), out.as_mut_ptr(), 96),
            PkdStatus::Shape
        );
        let q = [0f32; 96];
        let (mut ids, mut dist) = ([0u64; 1], [0f32; 1]);
        assert_eq!(
            pkd_database_search(db, q.as_ptr(), 95, 1, ids.as_mut_ptr(), dist.as_mut_ptr()),
            PkdStatus::Shape
        );
        assert_eq!(
            pkd_database_search(db, q.as_ptr(), 96, 10_000, ids.as_mut_ptr(), dist.as_mut_ptr()),
            PkdStatus::Config
        );
        assert_eq!(pkd_database_len(ptr::null()), 0);
        pkd_database_free(ptr::null_mut());
        pkd_database_free(db);
        pkd_model_free(model);
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/placekd.h")
}

#[test]
fn header_declares_the_exported_symbols() {
    let text = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "pkd_last_error",
        "pkd_version",
        "pkd_model_load",
        "pkd_model_describe",
        "pkd_model_free",
        "pkd_database_load",
        "pkd_database_build",
        "pkd_database_search",
        "pkd_database_save",
        "pkd_database_free",
        "typedef struct PkdModel PkdModel",
        "typedef struct PkdDatabase PkdDatabase",
        "PKD_STATUS_DATABASE_VERSION = 43",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
}

/// Builds a C program against the header and the static library and runs it.
#[test]
fn c_program_links_and_searches() {
    let exe = std::env::current_exe().unwrap();
    let target = exe.parent().unwrap().parent().unwrap();
    let lib = target.join("libplacekd_ffi.a");
    assert!(lib.exists(), "static library not built at {}", lib.display());
    let f = fixture();
    let src = f.root.join("probe.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "placekd.h"
int main(int argc, char **argv) {
    PkdModel *m = NULL;
    if (pkd_model_load(argv[1], &m) != PKD_STATUS_OK) { fprintf(stderr, "%s\n", pkd_last_error()); return 1; }
    PkdDatabase *db = NULL;
    if (pkd_database_build(m, argv[2], &db) != PKD_STATUS_OK) { fprintf(stderr, "%s\n", pkd_last_error()); return 1; }
    size_t w = pkd_database_width(db);
    float q[96] = {0};
    q[0] = 1.0f;
    uint64_t ids[2];
    float d[2];
    PkdStatus s = pkd_database_search(db, q, w, 2, ids, d);
    printf("%d %zu %zu %d\n", (int)s, pkd_database_len(db), w, d[0] <= d[1]);
    if (pkd_model_load("/nonexistent", &m) != PKD_STATUS_IO) return 2;
    pkd_database_free(db);
    pkd_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let bin = f.root.join("probe");
    let cc = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&bin)
        .output()
        .expect("a C compiler is available");
    assert!(cc.status.success(), "{}", String::from_utf8_lossy(&cc.stderr));
    let run = Command::new(&bin)
        .arg(f.root.join("student.ckpt"))
        .arg(f.root.join("world"))
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "0 3 96 1");
}
