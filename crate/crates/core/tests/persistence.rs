mod common;

use tori_core::frame::integrate_legs;
use tori_core::observables::{Generator, ObservableOptions, ObservableRecord};
use tori_core::persistence::{
    decode_record, encode_record, family_index, last_record, read_record, write_index, write_record, TorusRecord, INDEX_FILE,
};
use tori_core::symplectic_model::Rtbp;
use tori_core::ErrorClass;

fn record(id: u64) -> TorusRecord {
    let m = Rtbp::earth_moon();
    // Records store grid values only, so build from the canonical form.
    let st = common::converged_torus().canonical();
    let fl = integrate_legs(&m, &st, &Default::default()).unwrap();
    let obs = ObservableRecord::compute(&m, &st, &fl, &ObservableOptions::default()).unwrap();
    TorusRecord {
        family: "vertical-rho".into(),
        id,
        parent: id.checked_sub(1),
        parameter: "T".into(),
        generator: Generator::Vertical,
        alpha_used: 1e-4,
        alpha_next: 2e-4,
        calabi_armed: false,
        err: fl.torus_error(&st),
        err_w: fl.bundle_error(&st),
        state: st,
        observables: Some(obs),
    }
}

#[test]
fn stored_torus_reproduces_its_errors() {
    let dir = tempfile::tempdir().unwrap();
    let rec = record(0);
    let path = dir.path().join(rec.file_name());
    write_record(&rec, &path).unwrap();
    let back = read_record(&path).unwrap();
    assert_eq!(back, rec);
    let fl = integrate_legs(&Rtbp::earth_moon(), &back.state, &Default::default()).unwrap();
    assert_eq!(fl.torus_error(&back.state), rec.err);
    assert_eq!(fl.bundle_error(&back.state), rec.err_w);
    assert_eq!(encode_record(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn index_and_last_record() {
    let dir = tempfile::tempdir().unwrap();
    let base = record(0);
    for id in [2_u64, 0, 1] {
        let r = TorusRecord { id, parent: id.checked_sub(1), ..base.clone() };
        write_record(&r, &dir.path().join(r.file_name())).unwrap();
    }
    let entries = write_index(dir.path()).unwrap();
    assert_eq!(entries.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!(entries, family_index(dir.path()).unwrap());
    let text = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert_eq!(last_record(dir.path()).unwrap().unwrap().id, 2);
    let empty = tempfile::tempdir().unwrap();
    assert!(last_record(empty.path()).unwrap().is_none());
}

#[test]
fn damaged_files_are_rejected() {
    let rec = record(5);
    let bytes = encode_record(&rec).unwrap();
    for pos in [3, bytes.len() / 2, bytes.len() - 10] {
        let mut b = bytes.clone();
        b[pos] ^= 0x20;
        let e = decode_record(&b, "test").unwrap_err();
        assert_eq!(e.class(), ErrorClass::Io, "{e}");
    }
    let e = decode_record(&bytes[..bytes.len() - 80], "test").unwrap_err();
    assert_eq!(e.class(), ErrorClass::Io);
}
