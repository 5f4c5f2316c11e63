use pvfed_core::harness::{presets::smoke, run_config};

#[test]
fn smoke_run_finalizes_every_round() {
    let out = run_config(&smoke()).unwrap();
    println!("{:#?}", out.summary);
    assert!(out.ok(), "{:?}", out.summary.violations);
}
