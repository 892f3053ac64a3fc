//! Acceptance suite: one line per criterion, driven through the CLI binary.
//!
//! Run with `cargo test -p pathmeasure-cli --test acceptance -- --nocapture`.

use serde_json::Value;
use std::path::PathBuf;
use std::process::Command;

struct Run {
    code: i32,
    report: Value,
    bytes: Vec<u8>,
}

fn out_path(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!(
        "pathmeasure-acceptance-{}-{tag}",
        std::process::id()
    ))
}

fn verify(tag: &str, args: &[&str]) -> Run {
    let out = out_path(tag);
    let status = Command::new(env!("CARGO_BIN_EXE_pathmeasure"))
        .arg("verify")
        .args(args)
        .arg("--out")
        .arg(&out)
        .status()
        .expect("binary runs");
    let bytes = std::fs::read(&out).unwrap_or_default();
    let _ = std::fs::remove_file(&out);
    let report = if args.contains(&"csv") {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    Run {
        code: status.code().unwrap_or(-1),
        report,
        bytes,
    }
}

fn checks(run: &Run) -> Vec<&Value> {
    run.report["checks"]
        .as_array()
        .map(|a| a.iter().collect())
        .unwrap_or_default()
}

fn matching<'a>(run: &'a Run, pattern: &str) -> Vec<&'a Value> {
    checks(run)
        .into_iter()
        .filter(|c| c["name"].as_str().unwrap_or("").contains(pattern))
        .collect()
}

fn all_pass(cs: &[&Value]) -> bool {
    !cs.is_empty() && cs.iter().all(|c| c["pass"] == Value::Bool(true))
}

fn num(c: &Value, key: &str) -> f64 {
    c[key].as_f64().unwrap_or(f64::NAN)
}

struct Outcome {
    id: &'static str,
    pass: bool,
    gating: bool,
    detail: String,
}

fn outcome(id: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        pass,
        gating: true,
        detail,
    }
}

fn criterion_1_to_4(out: &mut Vec<Outcome>) {
    let run = verify("exact", &["ch4-exact", "--seed", "7"]);

    let harm = matching(&run, "harmonic residuals");
    let chains: std::collections::BTreeSet<&str> = harm
        .iter()
        .filter_map(|c| c["name"].as_str()?.split(' ').next())
        .collect();
    let windows_ok = harm.iter().all(|c| {
        let name = c["name"].as_str().unwrap_or("");
        name.split(" on ")
            .nth(1)
            .and_then(|r| r.split(' ').next()?.parse::<usize>().ok())
            .is_some_and(|n| n >= 100)
    });
    let psi = matching(&run, "psi_r one-step identity");
    let srw_law = matching(&run, "srw_z x=3 y0=0");
    let bang_law = matching(&run, "bang_bang x=3 a=2");
    let law_values = srw_law
        .iter()
        .chain(&bang_law)
        .map(|c| num(c, "lhs"))
        .collect::<Vec<_>>();
    let pass = run.code == 0
        && all_pass(&harm)
        && chains.len() == 4
        && windows_ok
        && all_pass(&psi)
        && all_pass(&srw_law)
        && all_pass(&bang_law)
        && checks(&run)
            .iter()
            .filter(|c| c["tolerance"] == "exact")
            .all(|c| c["lhs"] == c["rhs"]);
    out.push(outcome(
        "1",
        pass,
        format!(
            "harmonic residuals zero on {} chains, psi_r identity exact, laws (atom, plateau) = {law_values:?}",
            chains.len()
        ),
    ));

    let rind = matching(&run, "r=3/10 vs r=7/10");
    let worst = rind.iter().map(|c| num(c, "lhs")).fold(0.0, f64::max);
    let twenty = rind
        .iter()
        .all(|c| c["name"].as_str().unwrap_or("").contains("over 20 prefix"));
    out.push(outcome(
        "2",
        rind.len() == 2 && twenty && all_pass(&rind) && worst <= 1e-10,
        format!("r-independence on srw_z and bang_bang over 20 prefixes, max |diff| = {worst:e}"),
    ));

    let mass = matching(&run, "mass identity at every N <= 20");
    let backends = matching(&run, "by enumeration = by propagation");
    out.push(outcome(
        "3",
        all_pass(&mass) && all_pass(&backends),
        format!(
            "max mass gap = {:e}, enumeration vs propagation exact = {}",
            mass.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            all_pass(&backends)
        ),
    ));

    let m = matching(&run, "one-step identity of M");
    let sized = m
        .iter()
        .all(|c| c["name"].as_str().unwrap_or("").contains("on 100 states"));
    out.push(outcome(
        "4",
        m.len() == 4 && sized && all_pass(&m),
        format!(
            "{} exact one-step checks of M (h = 2^-k, 3^-k; srw_z, bang_bang) pass",
            m.len()
        ),
    ));
}

fn criterion_5(out: &mut Vec<Outcome>) {
    let run = verify("series", &["ch4-series", "--seed", "7"]);
    let srw: Vec<_> = (1..=3)
        .flat_map(|x| matching(&run, &format!("srw_z x={x}:")))
        .collect();
    let z2 = matching(&run, "srw_z2 x=(1,0): S_N at N=1e6 vs dyadic extrapolation");
    let ratios: Vec<f64> = matching(&run, "error ratio")
        .iter()
        .map(|c| num(c, "lhs"))
        .collect();
    out.push(outcome(
        "5",
        srw.len() == 6 && all_pass(&srw) && all_pass(&z2),
        format!("srw_z partial sums within 0.05 with quadrupling ratios {ratios:.3?}; Z^2 within 0.05 of extrapolation"),
    ));
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn criterion_6(out: &mut Vec<Outcome>) {
    let args = [
        "--paths",
        "100000",
        "--lattice-n",
        "10000",
        "--t",
        "1",
        "--seed",
        "7",
    ];
    let g = verify("g", &[&["ch1-g"], &args[..]].concat());
    // sqrt(2/pi), (2/3)/sqrt(2 pi) and erf(1)/sqrt(2).
    let targets = [
        ("psi=1, t=1", 0.797_884_56),
        ("psi(s)=s, t=1", 0.265_961_52),
        ("psi(s)=exp(-s), t=1", 0.595_879_45),
    ];
    let mut ok = g.code == 0;
    let mut found = Vec::new();
    for (name, target) in targets {
        let cs = matching(&g, name);
        ok &= all_pass(&cs) && cs.iter().all(|c| close(num(c, "rhs"), target, 1e-8));
        found.extend(cs.iter().map(|c| (num(c, "lhs"), num(c, "rhs"))));
    }
    let j = verify("joint", &[&["ch1-joint"], &args[..]].concat());
    let joint = matching(&j, "h(l,u)=exp(-l)");
    ok &= j.code == 0
        && all_pass(&joint)
        && joint
            .iter()
            .all(|c| c["tolerance"] == "max(3*stderr, 3%*|rhs|)");
    out.push(outcome(
        "6",
        ok,
        format!(
            "(MC, quadrature) = {found:.5?}; joint h=e^-l: {:.5} vs {:.5}",
            joint.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            joint.first().map(|c| num(c, "rhs")).unwrap_or(f64::NAN)
        ),
    ));
}

fn criterion_7(out: &mut Vec<Outcome>) {
    let run = verify(
        "mart",
        &[
            "ch1-martingales",
            "--paths",
            "100000",
            "--lattice-n",
            "10000",
            "--seed",
            "7",
        ],
    );
    let mut cs = Vec::new();
    for t in ["0.25", "1", "4"] {
        for kind in ["lambda=1", "h(l)=exp(-l)", "psi(s)=1{s<=1}"] {
            cs.extend(matching(&run, &format!("{kind}, t={t}")));
        }
    }
    let z: Vec<String> = cs
        .iter()
        .map(|c| {
            format!(
                "{:+.1}",
                (num(c, "lhs") - num(c, "rhs")) / num(c, "lhs_stderr")
            )
        })
        .collect();
    out.push(outcome(
        "7",
        cs.len() == 9 && all_pass(&cs) && cs.iter().all(|c| c["tolerance"] == "3*stderr"),
        format!("9 expectations within 3 stderr of their t=0 values; z-scores {z:?}"),
    ));
}

fn criterion_8(out: &mut Vec<Outcome>) {
    let run = verify("rate", &["ch1-rate", "--paths", "100000", "--seed", "7"]);
    let at100 = matching(&run, "lambda=1, t=100");
    let closer = matching(&run, "lambda=1: |error| at t=100 below");
    out.push(outcome(
        "8",
        all_pass(&at100) && all_pass(&closer),
        format!(
            "sqrt(pi t/2) E[exp(-L/2)] = {:.4} at t=100 (limit 2), |error| {:.4} at t=100 vs {:.4} at t=25",
            at100.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            closer.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            closer.first().map(|c| num(c, "rhs")).unwrap_or(f64::NAN)
        ),
    ));
}

fn criterion_9(out: &mut Vec<Outcome>) {
    let run = verify(
        "bessel",
        &["ch3-bessel", "--paths", "100000", "--t", "1", "--seed", "7"],
    );
    let mut ok = run.code == 0;
    let mut notes = Vec::new();
    for (alpha, target) in [
        ("0.25", 0.970_451_204_566),
        ("0.5", 0.797_884_560_803),
        ("0.75", 0.463_864_804_29),
    ] {
        let m = matching(&run, &format!("alpha={alpha}: E[R_t^{{2a}}], t=1"));
        let l = matching(
            &run,
            &format!("alpha={alpha}: E[L_t] after eps-extrapolation"),
        );
        let c: Vec<_> = ["0.5", "1", "2"]
            .iter()
            .flat_map(|t| matching(&run, &format!("alpha={alpha}: lambda=1, t={t} ")))
            .collect();
        ok &= all_pass(&m) && all_pass(&l) && c.len() == 3 && all_pass(&c);
        ok &= m.iter().all(|c| close(num(c, "rhs"), target, 1e-8));
        notes.push(format!(
            "a={alpha}: moment {:.4}, L {:.4}",
            m.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            l.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN)
        ));
    }
    out.push(outcome(
        "9",
        ok,
        format!(
            "{}; exponential martingale flat at t in {{1/2,1,2}}",
            notes.join(", ")
        ),
    ));
}

fn criterion_10(out: &mut Vec<Outcome>) {
    let run = verify(
        "ch2",
        &[
            "ch2-identity",
            "--paths",
            "100000",
            "--t",
            "1",
            "--seed",
            "7",
        ],
    );
    let main = matching(&run, "t=1");
    let main: Vec<_> = main
        .into_iter()
        .filter(|c| !c["name"].as_str().unwrap_or("").starts_with("control"))
        .collect();
    let rhs_ok = main.iter().all(|c| close(num(c, "rhs"), 0.08909, 5e-6));
    let w = verify(
        "winding",
        &["ch2-winding", "--paths", "10000", "--seed", "7"],
    );
    let ks = matching(&w, "at log t = 12, 10000 samples");
    let flagged = !ks.is_empty() && ks.iter().all(|c| c["qualitative"] == Value::Bool(true));
    out.push(outcome(
        "10",
        run.code == 0 && all_pass(&main) && rhs_ok && flagged && w.code == 0,
        format!(
            "(1/pi)E[log+|X_1|] = {:.5} vs {:.5}; winding flagged qualitative and non-gating (exit {})",
            main.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN),
            main.first().map(|c| num(c, "rhs")).unwrap_or(f64::NAN),
            w.code
        ),
    ));
    let k = ks.first().map(|c| num(c, "lhs")).unwrap_or(f64::NAN);
    out.push(Outcome {
        id: "10 (qualitative)",
        pass: all_pass(&ks),
        gating: false,
        detail: format!(
            "KS(4H_t/(log t)^2, T_1) = {k:.4} at log t = 12 with 10^4 samples, bound 0.08"
        ),
    });
}

fn criterion_11(out: &mut Vec<Outcome>) {
    let mut same = true;
    let mut notes = Vec::new();
    for (suite, extra) in [
        (
            "ch1-g",
            vec!["--paths", "100000", "--lattice-n", "10000", "--t", "1"],
        ),
        ("ch3-bessel", vec!["--paths", "20000", "--format", "csv"]),
        ("ch2-winding", vec!["--paths", "4000"]),
        ("ch4-decomposition", vec![]),
    ] {
        let base: Vec<&str> = [&[suite, "--seed", "7"][..], &extra[..]].concat();
        let one = verify(
            &format!("{suite}-j1"),
            &[&base[..], &["--jobs", "1"]].concat(),
        );
        let four = verify(
            &format!("{suite}-j4"),
            &[&base[..], &["--jobs", "4"]].concat(),
        );
        let eq = !one.bytes.is_empty() && one.bytes == four.bytes;
        same &= eq;
        notes.push(format!(
            "{suite} {}",
            if eq { "identical" } else { "DIFFERENT" }
        ));
    }
    out.push(outcome(
        "11",
        same,
        format!("--jobs 1 vs 4: {}", notes.join(", ")),
    ));
}

#[test]
fn acceptance() {
    let mut out = Vec::new();
    criterion_1_to_4(&mut out);
    criterion_5(&mut out);
    criterion_6(&mut out);
    criterion_7(&mut out);
    criterion_8(&mut out);
    criterion_9(&mut out);
    criterion_10(&mut out);
    criterion_11(&mut out);
    for o in &out {
        let status = if o.pass { "PASS" } else { "FAIL" };
        let gate = if o.gating { "" } else { " [non-gating]" };
        println!("criterion {}: {status}{gate}: {}", o.id, o.detail);
    }
    let failed: Vec<_> = out
        .iter()
        .filter(|o| o.gating && !o.pass)
        .map(|o| o.id)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
