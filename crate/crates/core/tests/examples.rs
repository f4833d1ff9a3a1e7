#[path = "../examples/gen_demos.rs"]
mod gen_demos_example;

#[path = "../examples/smooth.rs"]
mod smooth_example;

#[test]
fn gen_demos_example_runs() {
    let dir = tempfile::tempdir().unwrap();
    gen_demos_example::run(dir.path()).expect("gen_demos example should run");
    for name in ["reacher.jsonl", "circle.jsonl", "pick_place.jsonl"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
}

#[test]
fn smooth_example_runs() {
    let dir = tempfile::tempdir().unwrap();
    smooth_example::run(dir.path()).expect("smooth example should run");
}
