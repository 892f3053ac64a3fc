use serde_json::Value;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pathmeasure"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

#[test]
fn list_names_every_suite() {
    let o = run(&["list"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for id in [
        "ch4-exact",
        "ch3-bessel",
        "ch2-winding (qualitative)",
        "ch1-g",
        "ch4-series",
    ] {
        assert!(text.contains(id), "{id} missing from:\n{text}");
    }
    assert!(text.contains("anchor:"));
}

#[test]
fn unknown_suite_is_rejected_before_work() {
    let o = run(&["verify", "ch4-exact", "bogus"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown suite"));
    assert!(o.stdout.is_empty());
}

#[test]
fn nonpositive_numbers_are_config_errors() {
    for bad in [
        &["verify", "ch1-g", "--paths", "0"][..],
        &["verify", "ch1-g", "--lattice-n", "0"],
        &["verify", "ch1-g", "--t", "-1"],
        &["verify", "ch3-bessel", "--alpha", "0.5,1.5"],
        &["verify", "ch1-g", "--jobs", "0"],
        &["verify", "ch1-g", "--format", "xml"],
    ] {
        assert_eq!(code(&run(bad)), 2, "{bad:?}");
    }
}

#[test]
fn exhausted_budget_exits_3() {
    let o = run(&[
        "verify",
        "ch1-g",
        "--paths",
        "10",
        "--lattice-n",
        "10000000000",
        "--t",
        "1",
    ]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("budget"));
}

#[test]
fn exact_suite_report_schema() {
    let o = run(&["verify", "ch4-exact", "--seed", "7"]);
    assert_eq!(code(&o), 0);
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let at = |k: &str| text.find(&format!("\"{k}\"")).unwrap();
    assert!(
        at("version") < at("config") && at("config") < at("checks") && at("checks") < at("verdict")
    );
    let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    keys.sort_unstable();
    assert_eq!(keys, ["checks", "config", "verdict", "version"]);
    assert_eq!(v["verdict"], "pass");
    assert_eq!(v["config"]["seed"], 7);
    let mut fields = [
        "suite",
        "name",
        "anchor",
        "lhs",
        "lhs_stderr",
        "rhs",
        "tolerance",
        "pass",
        "qualitative",
    ];
    fields.sort_unstable();
    for c in v["checks"].as_array().unwrap() {
        let mut got: Vec<&str> = c.as_object().unwrap().keys().map(String::as_str).collect();
        got.sort_unstable();
        assert_eq!(got, fields);
        if c["tolerance"] == "exact" {
            assert_eq!(c["lhs"], c["rhs"], "{c}");
        }
    }
}

#[test]
fn csv_is_a_flat_projection() {
    let args = [
        "ch1-g",
        "--paths",
        "2000",
        "--lattice-n",
        "400",
        "--seed",
        "3",
    ];
    let json = run(&[&["verify"], &args[..]].concat());
    let csv = run(&[&["verify"], &args[..], &["--format", "csv"]].concat());
    let v: Value = serde_json::from_slice(&json.stdout).unwrap();
    let mut r = csv::Reader::from_reader(&csv.stdout[..]);
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        [
            "suite",
            "name",
            "anchor",
            "lhs",
            "lhs_stderr",
            "rhs",
            "tolerance",
            "pass",
            "qualitative"
        ]
    );
    let rows: Vec<csv::StringRecord> = r.records().map(Result::unwrap).collect();
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(rows.len(), checks.len());
    for (row, c) in rows.iter().zip(checks) {
        assert_eq!(&row[1], c["name"].as_str().unwrap());
        assert_eq!(row[3].parse::<f64>().unwrap(), c["lhs"].as_f64().unwrap());
    }
    // Names with commas survive through quoting.
    assert!(rows.iter().any(|r| r[1].contains(',')));
}

#[test]
fn reruns_are_byte_identical() {
    let args = [
        "verify",
        "ch1-g",
        "--paths",
        "20000",
        "--lattice-n",
        "2000",
        "--t",
        "1",
        "--seed",
        "7",
    ];
    let a = run(&args);
    let b = run(&[&args[..], &["--jobs", "3"]].concat());
    assert_eq!(code(&a), code(&b));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn strict_lets_qualitative_checks_gate() {
    let args = ["verify", "ch2-winding", "--paths", "1000", "--seed", "7"];
    let loose = run(&args);
    let strict = run(&[&args[..], &["--strict"]].concat());
    let v: Value = serde_json::from_slice(&strict.stdout).unwrap();
    let checks = v["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["qualitative"] == true));
    let any_fail = checks.iter().any(|c| c["pass"] == false);
    assert_eq!(code(&loose), 0);
    assert_eq!(code(&strict), if any_fail { 1 } else { 0 });
    assert_eq!(v["verdict"], if any_fail { "fail" } else { "pass" });
}
