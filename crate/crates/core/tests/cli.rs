use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nasmc::models::BenchmarkNssm;
use nasmc::prng::{tags, RngStream};
use nasmc::proposals::{ProposalModel, ProposalVariant};

fn nasmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nasmc")).args(args).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

const QUICK_ADAPT: &[&str] = &[
    "--iterations",
    "3",
    "--seq-len",
    "15",
    "--eval-sequences",
    "3",
    "--hidden",
    "6",
    "--n-particles",
    "20",
];

#[test]
fn adapt_outputs_are_bit_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let mut args = vec!["adapt", "--seed", "9", "--out", dir.path().to_str().unwrap()];
        args.extend(QUICK_ADAPT);
        let out = nasmc(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["diagnostics.csv", "summary.csv", "proposal.ckpt"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
    let summary = read(a.path(), "summary.csv");
    assert!(summary.starts_with("proposal,n_particles,ess_mean,ess_std,lml_mean,lml_std,rmse_mean,rmse_std\n"));
    assert!(summary.contains("\nrnn-md-f,20,") && summary.contains("\nbootstrap,20,"));
    assert_eq!(read(a.path(), "diagnostics.csv").lines().count(), 4);
}

#[test]
fn zero_iterations_checkpoint_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let out = nasmc(&[
        "adapt",
        "--seed",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
        "--iterations",
        "0",
        "--eval-sequences",
        "1",
        "--seq-len",
        "5",
        "--variant",
        "nn-md-f",
    ]);
    assert!(out.status.success());
    let model = BenchmarkNssm::paper();
    let v = ProposalVariant::parse("nn-md-f", 3).unwrap();
    let init = ProposalModel::for_model(v, &model, None, &mut RngStream::new(5, tags::INIT)).unwrap();
    assert_eq!(read(dir.path(), "proposal.ckpt"), init.to_checkpoint_string());
}

#[test]
fn infer_and_pmmh_are_reproducible() {
    let train = tempfile::tempdir().unwrap();
    let mut args = vec!["adapt", "--out", train.path().to_str().unwrap()];
    args.extend(QUICK_ADAPT);
    assert!(nasmc(&args).status.success());
    let ckpt = train.path().join("proposal.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    let runs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for dir in &runs {
        let d = dir.path().to_str().unwrap();
        let o = nasmc(&["infer", "--out", d, "--checkpoint", ckpt, "--sequences", "3", "--seq-len", "12"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let o = nasmc(&[
            "pmmh",
            "--out",
            &format!("{d}/pmmh"),
            "--iterations",
            "20",
            "--seq-len",
            "15",
            "--n-particles",
            "20",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["trace.csv", "runs.csv", "pmmh/trace.csv", "pmmh/summary.txt"] {
        assert_eq!(read(runs[0].path(), f), read(runs[1].path(), f), "{f}");
    }
    let trace = read(runs[0].path(), "trace.csv");
    assert!(trace.starts_with("sequence_id,t,ess,log_incremental_normalizer,posterior_mean_0\n"));
    assert_eq!(trace.lines().count(), 1 + 3 * 12);
    let pm = read(runs[0].path(), "pmmh/trace.csv");
    assert!(pm.starts_with("iter,sigma_v,sigma_w,lml_hat,accepted\n"));
    assert_eq!(pm.lines().count(), 21);
}

#[test]
fn single_particle_ess_is_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = nasmc(&[
        "infer",
        "--out",
        dir.path().to_str().unwrap(),
        "--n-particles",
        "1",
        "--sequences",
        "2",
        "--seq-len",
        "8",
    ]);
    assert!(o.status.success());
    let trace = read(dir.path(), "trace.csv");
    assert!(trace.lines().skip(1).all(|l| l.split(',').nth(2) == Some("1")));
}

#[test]
fn lgssm_inference_reports_error_against_kalman() {
    let dir = tempfile::tempdir().unwrap();
    let o = nasmc(&[
        "infer",
        "--out",
        dir.path().to_str().unwrap(),
        "--model",
        "lgssm",
        "--sigma-v",
        "1",
        "--sigma-w",
        "1",
        "--n-particles",
        "500",
        "--sequences",
        "8",
        "--seq-len",
        "20",
    ]);
    assert!(o.status.success());
    let runs = read(dir.path(), "runs.csv");
    assert!(runs.starts_with("sequence_id,lml,mean_ess,rmse,kalman_lml,lml_error\n"));
    let errs: Vec<f64> = runs.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(errs.len(), 8);
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / 8.0).sqrt();
    assert!(rms < 0.5, "{runs}");
    assert!(String::from_utf8_lossy(&o.stdout).contains("lml error vs exact"));
}

#[test]
fn config_file_and_override_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# quick\nn_particles = 3\nsequences = 1\nseq_len = 4\n").unwrap();
    let out = dir.path().join("o");
    let o = nasmc(&[
        "infer",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seq-len",
        "6",
    ]);
    assert!(o.status.success());
    assert_eq!(read(&out, "trace.csv").lines().count(), 7);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = nasmc(&["adapt", "--out", d, "--n-particle", "5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("'n_particle'"));
    assert_eq!(nasmc(&["infer", "--out", d, "--n-particles", "lots"]).status.code(), Some(1));
    assert_eq!(nasmc(&["infer", "--out", d, "--variant", "rnn"]).status.code(), Some(1));
    assert_eq!(nasmc(&["pmmh", "--out", d, "--estimator", "kalman"]).status.code(), Some(1));

    let missing = nasmc(&["infer", "--out", d, "--checkpoint", "/nonexistent/q.ckpt"]);
    assert_eq!(missing.status.code(), Some(2));
    let bad = dir.path().join("bad.ckpt");
    fs::write(&bad, "nasmc-checkpoint 1\nslice x 2 1\n").unwrap();
    let corrupt = nasmc(&["infer", "--out", d, "--checkpoint", bad.to_str().unwrap()]);
    assert_eq!(corrupt.status.code(), Some(2));
    let (m, c) = (String::from_utf8_lossy(&missing.stderr), String::from_utf8_lossy(&corrupt.stderr));
    assert!(m.contains("not found") && c.contains("corrupt"), "{m} / {c}");
}

#[test]
fn selfcheck_passes_and_detects_injected_faults() {
    let mut pass_sets = Vec::new();
    for seed in ["1", "2", "3"] {
        let o = nasmc(&["selfcheck", "--seed", seed]);
        let text = String::from_utf8_lossy(&o.stdout).to_string();
        assert!(o.status.success(), "{text}");
        let names: Vec<String> = text
            .lines()
            .filter(|l| l.starts_with("PASS"))
            .map(|l| l.split(' ').nth(1).unwrap().to_string())
            .collect();
        pass_sets.push(names);
    }
    assert!(pass_sets.windows(2).all(|w| w[0] == w[1]));
    assert!(pass_sets[0].len() >= 10);

    let o = nasmc(&["selfcheck", "--inject-fault", "gradient"]);
    assert_eq!(o.status.code(), Some(2));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("FAIL gradient.mdn") && text.contains("FAIL gradient.weighted_accumulator"));
    assert!(text.contains("PASS kalman.lml_rms_within_half_nat"));
}
