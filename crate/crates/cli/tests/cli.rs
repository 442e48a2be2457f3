use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn deap(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn assert_ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

/// Small but complete run: short traces, one epoch, few sequences.
const SMALL: &str = "\
# tiny end-to-end settings
train_trace = synth:3000:1:program
test_trace = synth:2000:2:program
number_of_epochs = 1
training_batch_size = 32
max_train_sequences = 64
word2vec_number_of_epochs = 20
word2vec_max_tokens = 256
rng_seed = 7
";

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), format!("{SMALL}{extra}")).unwrap();
    dir
}

#[test]
fn pretrain_is_deterministic() {
    let dir = setup("");
    let p = dir.path();
    assert_ok(&deap(p, &["pretrain", "-c", "run.cfg", "-s", "tables_path=a.bin"]));
    assert_ok(&deap(p, &["pretrain", "-c", "run.cfg", "-s", "tables_path=b.bin"]));
    assert_eq!(fs::read(p.join("a.bin")).unwrap(), fs::read(p.join("b.bin")).unwrap());
    assert_eq!(
        fs::read(p.join("a.bin.log.json")).unwrap(),
        fs::read(p.join("b.bin.log.json")).unwrap()
    );
}

#[test]
fn out_of_range_key_is_a_config_error() {
    let dir = setup("");
    let o = deap(dir.path(), &["pretrain", "-c", "run.cfg", "-s", "word2vec_context_size=1"]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("word2vec_context_size"), "{msg}");
    assert!(msg.contains("[2, 10]"), "{msg}");
}

#[test]
fn flag_overrides_file() {
    let dir = setup("word2vec_context_size = 1\n");
    let o = deap(dir.path(), &["pretrain", "-c", "run.cfg"]);
    assert_eq!(o.status.code(), Some(2));
    let o = deap(
        dir.path(),
        &["pretrain", "-c", "run.cfg", "-s", "word2vec_context_size=4"],
    );
    assert_ok(&o);
}

#[test]
fn missing_trace_is_an_io_error() {
    let dir = setup("");
    let o = deap(dir.path(), &["pretrain", "-c", "run.cfg", "-s", "train_trace=no/such/trace.csv"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(!dir.path().join("tables.bin").exists());
}

#[test]
fn zero_epochs_writes_initialization_and_empty_curve() {
    let dir = setup("random_tables = true\nnumber_of_epochs = 0\n");
    let p = dir.path();
    assert_ok(&deap(p, &["train", "-c", "run.cfg", "-s", "checkpoint_path=a.ckpt"]));
    assert_ok(&deap(p, &["train", "-c", "run.cfg", "-s", "checkpoint_path=b.ckpt"]));
    assert_eq!(fs::read(p.join("a.ckpt")).unwrap(), fs::read(p.join("b.ckpt")).unwrap());
    let curve = fs::read_to_string(p.join("a.ckpt.curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1, "{curve}");
}

#[test]
fn tables_of_other_width_are_a_dimension_error() {
    let dir = setup("");
    let p = dir.path();
    assert_ok(&deap(
        p,
        &["pretrain", "-c", "run.cfg", "-s", "word2vec_byte_embedding_dimension=8"],
    ));
    let o = deap(p, &["train", "-c", "run.cfg"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("d_byte"));
}

#[test]
fn simulate_reports_all_policies_deterministically() {
    let dir = setup("random_tables = true\n");
    let p = dir.path();
    assert_ok(&deap(p, &["train", "-c", "run.cfg"]));
    assert_ok(&deap(p, &["simulate", "-c", "run.cfg", "-s", "output_dir=a"]));
    assert_ok(&deap(p, &["simulate", "-c", "run.cfg", "-s", "output_dir=b"]));
    for f in ["report.json", "report.csv"] {
        assert_eq!(fs::read(p.join("a").join(f)).unwrap(), fs::read(p.join("b").join(f)).unwrap());
    }
    let csv = fs::read_to_string(p.join("a/report.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 6);
    for name in ["learned", "lru", "lfu", "fifo", "lifo", "belady"] {
        assert!(rows.iter().any(|r| r.starts_with(&format!("{name},"))), "{csv}");
    }

    let o = deap(p, &["report", "a/report.json", "b/report.json", "-o", "cmp.csv"]);
    assert_ok(&o);
    let cmp = fs::read_to_string(p.join("cmp.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 7, "{cmp}");
}

#[test]
fn policies_flag_subsets_the_run() {
    let dir = setup("");
    let p = dir.path();
    let o = deap(p, &["simulate", "-c", "run.cfg", "--policies", "lru,belady"]);
    assert_ok(&o);
    let csv = fs::read_to_string(p.join("out/report.csv")).unwrap();
    let names: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["lru", "belady"]);
    let o = deap(p, &["simulate", "-c", "run.cfg", "--policies", "lru,mru"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gen_trace_round_trips_through_simulate() {
    let dir = setup("");
    let p = dir.path();
    assert_ok(&deap(
        p,
        &["gen-trace", "--kind", "zipf:64", "--length", "500", "--seed", "3", "-o", "z.csv"],
    ));
    let text = fs::read_to_string(p.join("z.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 500);
    let o = deap(
        p,
        &["simulate", "-c", "run.cfg", "-s", "test_trace=z.csv", "--policies", "lru"],
    );
    assert_ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("lru"));
}

#[test]
fn resume_continues_the_step_counter() {
    let dir = setup("random_tables = true\n");
    let p = dir.path();
    let o = deap(p, &["train", "-c", "run.cfg"]);
    assert_ok(&o);
    assert!(stderr(&o).contains("2 optimizer steps"), "{}", stderr(&o));
    let o = deap(
        p,
        &["train", "-c", "run.cfg", "-s", "resume_from=model.ckpt", "-s", "checkpoint_path=more.ckpt"],
    );
    assert_ok(&o);
    assert!(stderr(&o).contains("4 optimizer steps"), "{}", stderr(&o));
}
