use std::path::Path;
use std::process::{Command, Output};

fn latlm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_latlm"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&latlm(d.path(), &["frobnicate"])), 1);
    assert_eq!(code(&latlm(d.path(), &["gen-synth", "--task", "ppattach"])), 1);
    assert_eq!(code(&latlm(d.path(), &["train", "--corpus", "x.txt"])), 1);
    assert_eq!(code(&latlm(d.path(), &["lattice", "export", "--dot"])), 1);
    assert_eq!(code(&latlm(d.path(), &["--help"])), 0);
}

#[test]
fn ngram_train_query_eval() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "corpus.txt", "a b a b a b\n");
    write(
        d.path(),
        "cfg.json",
        r#"{"task": "ngram", "order": 3, "corpus": "corpus.txt", "out": "m.json"}"#,
    );
    let o = latlm(d.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    assert!(s.contains("node 0 [w | h2 h1]: e0=1\n"), "{s}");
    assert!(s.contains("node 1 [w | h1]: e1=1\n"), "{s}");

    let q = latlm(d.path(), &["query", "-m", "m.json", "w=a | h2=<s> h1=<s>"]);
    assert_eq!(code(&q), 0);
    let first = stdout(&q);
    assert!(first.contains("node 0 [MLE]") || first.contains("[discounted]"), "{first}");
    assert_eq!(stdout(&latlm(d.path(), &["query", "-m", "m.json", "w=a | h2=<s> h1=<s>"])), first);

    write(d.path(), "test.txt", "a b a\n");
    let e = latlm(d.path(), &["eval", "-m", "m.json", "--test", "test.txt"]);
    assert_eq!(code(&e), 0);
    assert!(stdout(&e).contains("perplexity "));
}

#[test]
fn uniform_vocabulary_of_four_has_perplexity_four() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "empty.txt", "");
    write(
        d.path(),
        "cfg.json",
        r#"{"task": "ngram", "order": 3, "corpus": "empty.txt", "vocab": ["a", "b"], "out": "m.json"}"#,
    );
    assert_eq!(code(&latlm(d.path(), &["train", "--config", "cfg.json"])), 0);
    write(d.path(), "test.txt", "a b
b b a
");
    let e = latlm(d.path(), &["eval", "-m", "m.json", "--test", "test.txt"]);
    assert_eq!(code(&e), 0);
    let ppl: f64 = stdout(&e)
        .lines()
        .find_map(|l| l.strip_prefix("perplexity "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((ppl - 4.0).abs() < 1e-9, "{ppl}");
    let e = latlm(d.path(), &["eval", "-m", "m.json", "--test", "empty.txt"]);
    assert_eq!(code(&e), 2);
}

#[test]
fn query_mismatch_and_bad_files_are_data_errors() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "corpus.txt", "x y z\n");
    assert_eq!(
        code(&latlm(d.path(), &["train", "--task", "ngram", "--order", "2", "--corpus", "corpus.txt", "-o", "m.json"])),
        0
    );
    let q = latlm(d.path(), &["query", "-m", "m.json", "label=1 | v=is"]);
    assert_eq!(code(&q), 2);
    let q = latlm(d.path(), &["query", "-m", "m.json", "no separator"]);
    assert_eq!(code(&q), 2);
    write(d.path(), "broken.json", "{ not json");
    assert_eq!(code(&latlm(d.path(), &["query", "-m", "broken.json", "w=x | h1=y"])), 2);
    assert_eq!(code(&latlm(d.path(), &["eval", "-m", "m.json", "--test", "missing.txt"])), 2);
}

#[test]
fn ppattach_pipeline() {
    let d = tempfile::tempdir().unwrap();
    let g = latlm(d.path(), &["gen-synth", "--task", "ppattach", "--seed", "3", "--size", "500", "-o", "train.txt"]);
    assert_eq!(code(&g), 0);
    let again = latlm(d.path(), &["gen-synth", "--task", "ppattach", "--seed", "3", "--size", "500"]);
    assert_eq!(stdout(&again), std::fs::read_to_string(d.path().join("train.txt")).unwrap());
    write(
        d.path(),
        "test.txt",
        &stdout(&latlm(d.path(), &["gen-synth", "--task", "ppattach", "--seed", "4", "--size", "50"])),
    );

    let t = latlm(
        d.path(),
        &["train", "--task", "ppattach", "--corpus", "train.txt", "--heldout-fraction", "0.1", "-o", "pp.json"],
    );
    assert_eq!(code(&t), 0, "{}", String::from_utf8_lossy(&t.stderr));
    // every EM trace line is non-decreasing
    for line in stdout(&t).lines().filter(|l| l.contains("iterations")) {
        let values: Vec<f64> = line
            .rsplit(": ")
            .next()
            .unwrap()
            .split_whitespace()
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(values.windows(2).all(|w| w[1] >= w[0] - 1e-6), "{line}");
    }

    let e = latlm(d.path(), &["eval", "-m", "pp.json", "--test", "test.txt"]);
    assert_eq!(code(&e), 0);
    let out = stdout(&e);
    assert!(out.contains("mixture") && out.contains("max-path") && out.contains("collins-brooks"), "{out}");

    let q = latlm(d.path(), &["query", "-m", "pp.json", "label=1 | v=unseenverb n1=unseennoun p=p0 n2=alsounseen"]);
    assert_eq!(code(&q), 0);
    let trace = stdout(&q);
    let root_edges = trace.lines().filter(|l| l.starts_with("  edge ")).count();
    assert!(trace.lines().nth(1).unwrap().contains("node 0 [alpha*MIXTURE]"), "{trace}");
    assert_eq!(root_edges, 3, "{trace}");

    write(d.path(), "bad.txt", "v n1 p n2 1\nv n1 p 0\n");
    let e = latlm(d.path(), &["eval", "-m", "pp.json", "--test", "bad.txt"]);
    assert_eq!(code(&e), 2);
    assert!(String::from_utf8_lossy(&e.stderr).contains("line 2"));
    assert_eq!(code(&latlm(d.path(), &["eval", "-m", "pp.json", "--test", "test.txt", "--task", "ngram"])), 2);
}

#[test]
fn heldout_equal_to_corpus_is_refused() {
    let d = tempfile::tempdir().unwrap();
    write(d.path(), "c.txt", "a b c d 1\n");
    let o = latlm(d.path(), &["train", "--task", "ppattach", "--corpus", "c.txt", "--heldout", "./c.txt"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("overlap"));
}

#[test]
fn syncdep_pipeline_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&latlm(d.path(), &["gen-synth", "--task", "syncdep", "--seed", "1", "--size", "300", "-o", "s.tsv"])),
        0
    );
    let train = |out: &str| {
        latlm(d.path(), &["train", "--task", "syncdep", "--corpus", "s.tsv", "--seed", "1", "-o", out])
    };
    assert_eq!(code(&train("a.json")), 0);
    assert_eq!(code(&train("b.json")), 0);
    let a = std::fs::read_to_string(d.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.path().join("b.json")).unwrap());
    assert!(a.contains("\"format_version\": 1"));
    assert!(a.contains("s.tsv"));
    let e = latlm(d.path(), &["eval", "-m", "a.json", "--test", "s.tsv"]);
    assert_eq!(code(&e), 0);
    assert!(stdout(&e).contains("mean-log-prob "));
}

#[test]
fn custom_lattice_with_count_override() {
    let d = tempfile::tempdir().unwrap();
    let spec = stdout(&latlm(d.path(), &["lattice", "export", "--builder", "chain:2"]));
    write(d.path(), "lattice.json", &spec);
    write(d.path(), "obs.txt", "w=a | h1=b\nw=b | h1=a\nw=a | h1=b\n");
    // node 1 is the unigram leaf: keys are `outcome<TAB>context<TAB>count`
    write(d.path(), "unigram.tsv", "\u{2400}|a\t\u{2400}|\u{2400}\t3\n\u{2400}|b\t\u{2400}|\u{2400}\t1\n");
    write(
        d.path(),
        "cfg.json",
        r#"{"task": "custom", "lattice": "lattice.json", "corpus": "obs.txt",
            "count_overrides": [{"node": 1, "path": "unigram.tsv"}], "vocab": ["w=c"], "out": "m.json"}"#,
    );
    let o = latlm(d.path(), &["train", "--config", "cfg.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let q = stdout(&latlm(d.path(), &["query", "-m", "m.json", "w=a |", "--node", "1"]));
    assert!(q.contains("C=3 C(ctx)=4"), "{q}");
    let dot = stdout(&latlm(d.path(), &["lattice", "export", "--dot", "--model", "m.json"]));
    assert!(dot.starts_with("digraph lattice {"));
    assert!(dot.contains("n0 -> n1"));

    write(d.path(), "bad.tsv", "\u{2400}|a\t\u{2400}|\u{2400}\t2.5\n");
    write(
        d.path(),
        "cfg2.json",
        r#"{"task": "custom", "lattice": "lattice.json", "corpus": "obs.txt",
            "count_overrides": [{"node": 1, "path": "bad.tsv"}]}"#,
    );
    let o = latlm(d.path(), &["train", "--config", "cfg2.json"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 1"));
}

#[test]
fn export_builtin_lattices() {
    let d = tempfile::tempdir().unwrap();
    let dot = stdout(&latlm(d.path(), &["lattice", "export", "--dot", "--builder", "ppattach"]));
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 12);
    let dot = stdout(&latlm(d.path(), &["lattice", "export", "--dot", "--builder", "sync:2x2"]));
    assert_eq!(dot.lines().filter(|l| l.contains("->")).count(), 4);
    assert_eq!(code(&latlm(d.path(), &["lattice", "export", "--builder", "ring:3"])), 1);
}
