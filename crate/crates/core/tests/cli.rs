use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_er-consensus"))
        .args(args)
        .env_remove("CONSENSUS_THREADS")
        .output()
        .expect("binary runs")
}

fn json(args: &[&str]) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn keys(v: &Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

fn csv_rows(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn analytic_record_shape() {
    let v = json(&["analytic", "--n", "2", "--p", "0.5", "--x0", "0,1"]);
    assert_eq!(keys(&v), ["command", "params", "provenance", "results", "schema_version"]);
    assert_eq!(v["schema_version"], "1");
    assert_eq!(v["command"], "analytic");
    assert_eq!(keys(&v["results"]), ["delta", "factor", "mean", "rho", "variance"]);
    let var = v["results"]["variance"].as_f64().unwrap();
    assert!((var - 0.05).abs() < 1e-12);
    assert_eq!(v["results"]["mean"].as_f64().unwrap(), 0.5);
}

#[test]
fn analytic_complete_graph_has_zero_variance() {
    let v = json(&["analytic", "--n", "5", "--p", "1"]);
    assert_eq!(v["results"]["variance"].as_f64().unwrap(), 0.0);
    assert_eq!(v["results"]["rho"].as_f64().unwrap(), 1.0);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["analytic", "--n", "1", "--p", "0.5"][..],
        &["analytic", "--n", "3", "--p", "0"],
        &["analytic", "--n", "3", "--p", "1.5"],
        &["analytic", "--n", "3", "--p", "0.5", "--x0", "1,2"],
        &["simulate", "--n", "3", "--p", "0.5", "--reps", "0"],
        &["simulate", "--n", "3", "--p", "0.5", "--tol", "-1"],
        &["oracle", "--n", "5", "--p", "0.5"],
        &["oracle", "--n", "6", "--p", "0.5", "--allow-large"],
        &["fig1", "--n-min", "4"],
        &["fig2", "--c", "5,80"],
        &["bogus"],
        &["analytic", "--n", "x", "--p", "0.5"],
    ] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
        assert!(!out.stderr.is_empty(), "{args:?}");
    }
}

#[test]
fn non_convergence_exits_three() {
    let out = run(&["simulate", "--n", "10", "--p", "0.1", "--reps", "5", "--max-steps", "1"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
}

#[test]
fn drop_policy_reports_nonconverged() {
    let v = json(&[
        "simulate", "--n", "4", "--p", "0.6", "--reps", "200", "--max-steps", "8",
        "--drop-nonconverged",
    ]);
    let dropped = v["results"]["nonconverged"].as_u64().unwrap();
    let used = v["results"]["reps_used"].as_u64().unwrap();
    assert!(dropped > 0 && used > 0, "{v}");
    assert_eq!(dropped + used, 200);

    let all_dropped = run(&[
        "simulate", "--n", "10", "--p", "0.1", "--reps", "5", "--max-steps", "1",
        "--drop-nonconverged",
    ]);
    assert_eq!(all_dropped.status.code(), Some(3));
}

#[test]
fn simulate_two_nodes_matches_closed_form() {
    let v = json(&[
        "simulate", "--n", "2", "--p", "0.5", "--x0", "0,1", "--reps", "100000", "--seed", "3",
    ]);
    let r = &v["results"];
    assert_eq!(v["provenance"]["seed"].as_u64().unwrap(), 3);
    assert!(r["z_variance"].as_f64().unwrap().abs() < 4.0, "{r}");
    assert!(r["z_mean"].as_f64().unwrap().abs() < 4.0, "{r}");
}

#[test]
fn simulate_twenty_nodes_matches_closed_form() {
    let v = json(&["simulate", "--n", "20", "--p", "0.25", "--reps", "2000", "--seed", "11"]);
    let r = &v["results"];
    assert!(r["z_variance"].as_f64().unwrap().abs() < 4.0, "{r}");
    assert!(r["z_mean"].as_f64().unwrap().abs() < 4.0, "{r}");
}

#[test]
fn simulate_complete_graph_zero_variance() {
    let v = json(&["simulate", "--n", "5", "--p", "1", "--reps", "50"]);
    assert_eq!(v["results"]["empirical_variance"].as_f64().unwrap(), 0.0);
    assert_eq!(v["results"]["analytic_variance"].as_f64().unwrap(), 0.0);
}

#[test]
fn simulate_results_ignore_thread_count() {
    let args = ["simulate", "--n", "12", "--p", "0.3", "--reps", "300", "--seed", "9"];
    let results = |t: &str| {
        let mut a = args.to_vec();
        a.extend(["--threads", t]);
        json(&a)["results"].clone()
    };
    assert_eq!(results("1"), results("8"));
}

#[test]
fn oracle_examples_pass() {
    for args in [
        &["oracle", "--n", "2", "--p", "0.5", "--x0", "0,1"][..],
        &["oracle", "--n", "3", "--p", "1"],
        &["oracle", "--n", "4", "--p", "0.3"],
    ] {
        let v = json(args);
        let r = &v["results"];
        assert_eq!(r["pass"], true, "{args:?}");
        assert!(r["max_abs_discrepancy"].as_f64().unwrap() <= 1e-10);
        assert_eq!(
            keys(&r["discrepancies"]),
            ["eigenvector", "expected_kron", "expected_w", "variance"]
        );
    }
}

#[test]
fn fig1_csv_layout_and_determinism() {
    let args = ["fig1", "--reps", "40", "--seed", "5"];
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "n,p,analytic_variance,empirical_variance,stderr");
    let rows = csv_rows(&out);
    assert_eq!(rows.len(), 46);
    assert_eq!(rows[0][0], "5");
    assert_eq!(rows[0][2].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[0][3].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[45][0], "50");
    assert!(rows.iter().all(|r| r.len() == 5));

    let mut threaded = args.to_vec();
    threaded.extend(["--threads", "3"]);
    assert_eq!(run(&threaded).stdout, out.stdout);
}

#[test]
fn fig1_thread_count_from_environment() {
    let args = ["fig1", "--n-max", "12", "--reps", "30", "--seed", "2"];
    let base = run(&args).stdout;
    let env = Command::new(env!("CARGO_BIN_EXE_er-consensus"))
        .args(args)
        .env("CONSENSUS_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(0));
    assert_eq!(env.stdout, base);
}

#[test]
fn fig2_groups_single_peaked() {
    let out = run(&["fig2"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "c,n,factor");
    let rows = csv_rows(&out);
    let mut groups: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
    for r in rows {
        let c: f64 = r[0].parse().unwrap();
        let point = (r[1].parse().unwrap(), r[2].parse().unwrap());
        match groups.last_mut() {
            Some((gc, pts)) if *gc == c => pts.push(point),
            _ => groups.push((c, vec![point])),
        }
    }
    assert_eq!(groups.len(), 6);
    for (c, pts) in &groups {
        assert_eq!(pts[0], (*c as usize, 0.0));
        assert_eq!(pts.last().unwrap().0, 70);
        let peak = pts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
            .unwrap()
            .0;
        assert!(pts[..=peak].windows(2).all(|w| w[0].1 <= w[1].1), "c = {c}");
        assert!(pts[peak..].windows(2).all(|w| w[0].1 >= w[1].1), "c = {c}");
    }
}

#[test]
fn gnuplot_output_inlines_data() {
    let out = run(&["fig2", "--c", "5", "--gnuplot"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("plot"));
    assert!(text.lines().any(|l| l.starts_with("5")));
}
