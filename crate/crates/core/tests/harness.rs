use std::fs;
use std::path::Path;

use qmu::attack::AttackFeatureKind;
use qmu::datakit::{load_mnist_idx, write_mnist_idx};
use qmu::harness::selftest::tiny_experiment;
use qmu::harness::{
    checkpoint_roundtrip, load_cells, parse_seeds, render_csv, render_json, render_markdown, run_sweep, unlearn_config,
    BackendChoice, Checkpoint, ExperimentConfig, HarnessError, Method, MetricsReport, MetricsRow, PhaseTimes,
    SeedContext, SweepOptions,
};
use qmu::models::{evaluate_accuracy, ModelKind, ModelSpec};
use qmu::unlearn::UnlearnMethod;

const TABLE_NAMES: [&str; 18] = [
    "FG-U(1)R(1)",
    "FG-U(2)",
    "FG-U(2)R(1)",
    "FG-U(2)R(2)",
    "FG-U(5.4)",
    "FG-U(5.4)R(1)",
    "Fisher-SSD(10, 0.1)",
    "Fisher-SSD(2, 0.8)",
    "Fisher-SSD(5, 0.5)",
    "Gradient-R(10)",
    "Gradient-R(5)",
    "Gradient-U(2)",
    "Gradient-U(2)R(1)",
    "Gradient-U(3)",
    "Gradient-U(3)R(3)",
    "Gradient-U(8.4)",
    "Gradient-U(8.4)R(1)",
    "original",
];

fn row(method: &str, seed: u64, acc_u: f64) -> MetricsRow {
    MetricsRow {
        model: "QNN".into(),
        method: method.into(),
        backend: "noiseless".into(),
        seed,
        unlearn_class: 3,
        acc_u,
        acc_r: 50.0 + seed as f64,
        acc_test: 40.0,
        mia_loss: Some(acc_u / 2.0),
        mia_logit: None,
        mia_softmax: Some(1.0 / 3.0),
        mia_measurement: None,
        wall_s: 0.25 * (seed + 1) as f64,
        phases: PhaseTimes::default(),
        effective_ascent_epochs: None,
    }
}

fn workdir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("qmu-harness-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&d);
    d
}

#[test]
fn every_table_method_name_parses_and_prints_back() {
    for name in TABLE_NAMES {
        let m: Method = name.parse().unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(m.to_string(), name.replace(", ", ","));
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
    }
    assert_eq!("target".parse::<Method>().unwrap(), Method::Target);
}

#[test]
fn method_names_map_to_unlearning_configs() {
    let cfg = ExperimentConfig::new(ModelKind::Hqnn, "i".into(), "l".into());
    for name in TABLE_NAMES.iter().filter(|n| **n != "original") {
        let m: Method = name.parse().unwrap();
        let u = unlearn_config(&cfg, &m, 0).unwrap();
        u.validate().unwrap();
        match m {
            Method::GradientU { ascent, recovery } | Method::FgU { ascent, recovery } => {
                assert_eq!(u.ascent.epochs, ascent);
                assert_eq!(u.recovery_epochs, recovery.unwrap_or(0));
            }
            Method::GradientR(k) => assert_eq!((u.ascent.epochs, u.recovery_epochs), (0.0, k)),
            Method::FisherSsd { alpha, lambda } => {
                assert!(matches!(u.method, UnlearnMethod::FisherSsd { alpha: a, lambda: l, .. } if a == alpha && l == lambda))
            }
            _ => unreachable!(),
        }
    }
    assert!(unlearn_config(&cfg, &Method::Original, 0).is_none());
    let ssd: Method = "Fisher-SSD(10,0.1)".parse().unwrap();
    assert_eq!(ssd, Method::FisherSsd { alpha: 10.0, lambda: 0.1 });
}

#[test]
fn malformed_method_names_are_rejected() {
    for bad in ["", "Gradient-U", "Gradient-U(3", "Gradient-U(x)", "Fisher-SSD(1)", "FG-U(2)R(1.5)", "original2", "SSD(1,2)"] {
        assert!(bad.parse::<Method>().is_err(), "{bad:?} parsed");
    }
}

#[test]
fn shipped_configs_load_and_reach_a_fixed_point() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert!(cfg.data.images.exists(), "{}: data path", path.display());
        let text = fs::read_to_string(&path).unwrap();
        let reparsed = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(reparsed.to_json().unwrap(), text.trim_end());
        assert_eq!(ExperimentConfig::from_json(&reparsed.to_json().unwrap()).unwrap(), reparsed);
        seen += 1;
    }
    assert!(seen >= 2);
}

#[test]
fn invalid_configs_are_config_errors() {
    let mut cfg = ExperimentConfig::new(ModelKind::Qnn, "i".into(), "l".into());
    cfg.data.train_frac = 1.5;
    assert!(matches!(cfg.validate(), Err(HarnessError::Config(_))));
    let mut cfg = ExperimentConfig::new(ModelKind::Qnn, "i".into(), "l".into());
    cfg.methods.clear();
    assert!(cfg.validate().is_err());
    assert!(ExperimentConfig::from_json("{\"data\": 3}").is_err());
    assert!("shots:0x".parse::<BackendChoice>().is_err());
    assert_eq!("shots:1024".parse::<BackendChoice>().unwrap(), BackendChoice::Shots(1024));
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = workdir("ck");
    fs::create_dir_all(&dir).unwrap();
    let spec = ModelSpec::hqnn(3, 2, 1);
    let params = spec.init_params(4, 1.0);
    let back = checkpoint_roundtrip(&spec, &params, &dir.join("a.json")).unwrap();
    assert!(params.to_flat().iter().zip(back.to_flat()).all(|(a, b)| a.to_bits() == b.to_bits()));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn corrupt_and_mismatched_checkpoints_are_refused() {
    let spec = ModelSpec::hqnn(3, 2, 1);
    let ck = Checkpoint { spec: spec.clone(), params: spec.init_params(1, 1.0), seed: 1, epoch: 2, loss_history: vec![0.5] };
    let text = ck.to_json().unwrap();
    assert_eq!(Checkpoint::from_json(&text, Some(&spec)).unwrap(), ck);

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["params"]["theta"] = serde_json::Value::String("!!not base64!!".into());
    let err = Checkpoint::from_json(&v.to_string(), None).unwrap_err();
    assert!(matches!(err, HarnessError::CorruptCheckpoint(_)), "{err}");

    let other = ModelSpec::hqnn(3, 3, 1);
    assert!(matches!(Checkpoint::from_json(&text, Some(&other)), Err(HarnessError::CheckpointMismatch(_))));

    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["version"] = 99.into();
    assert!(matches!(Checkpoint::from_json(&v.to_string(), None), Err(HarnessError::CheckpointVersion { .. })));
}

#[test]
fn aggregates_average_over_seeds() {
    let report = MetricsReport { rows: vec![row("Gradient-U(3)R(3)", 0, 10.0), row("Gradient-U(3)R(3)", 1, 20.0)], failures: vec![] };
    let agg = report.aggregates();
    assert_eq!(agg.len(), 1);
    assert_eq!((agg[0].n_seeds, agg[0].acc_u, agg[0].mia_loss), (2, 15.0, Some(7.5)));
    assert_eq!(agg[0].mia_logit, None);

    let single = MetricsReport { rows: vec![row("original", 4, 33.0)], failures: vec![] };
    let a = &single.aggregates()[0];
    let r = &single.rows[0];
    assert_eq!((a.n_seeds, a.acc_u, a.acc_r, a.mia_softmax, a.wall_s), (1, r.acc_u, r.acc_r, r.mia_softmax, r.wall_s));
}

#[test]
fn csv_and_json_carry_identical_numbers() {
    let report = MetricsReport { rows: vec![row("original", 0, 61.0), row("FG-U(1)R(1)", 0, 1.0 / 7.0)], failures: vec![] };
    let csv = render_csv(&report).unwrap();
    let json: serde_json::Value = serde_json::from_str(&render_json(&report).unwrap()).unwrap();
    let mut reader = csv::Reader::from_reader(csv.as_bytes());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, qmu::harness::CSV_HEADER);
    let records: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2 + 2);
    for (rec, js) in records.iter().zip(json["rows"].as_array().unwrap()) {
        for (i, col) in header.iter().enumerate().skip(4) {
            let field = &rec[i];
            match js[col.as_str()].as_f64() {
                Some(v) => assert!((field.parse::<f64>().unwrap() - v).abs() <= 1e-9, "{col}"),
                None => assert!(field.is_empty(), "{col}"),
            }
        }
    }
    assert_eq!(&records[2][3], "mean(n=1)");
}

#[test]
fn one_row_csv_has_header_and_one_line() {
    let mut report = MetricsReport { rows: vec![row("original", 0, 5.0)], failures: vec![] };
    let csv = render_csv(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header, the row and its mean");
    report.rows.clear();
    assert!(qmu::harness::emit_report(&report, Path::new("/nonexistent"), &[]).is_err());
}

#[test]
fn markdown_rows_use_method_names() {
    let report = MetricsReport {
        rows: vec![row("original", 0, 60.0), row("target", 0, 0.0), row("Gradient-U(3)R(3)", 0, 0.0)],
        failures: vec![],
    };
    let md = render_markdown(&report);
    assert!(md.contains("| A_o |") && md.contains("| A_t |") && md.contains("| Gradient-U(3)R(3) |"));
    assert!(md.contains("### QNN (noiseless, mean over 1 seeds)"));
}

fn tiny(name: &str) -> (ExperimentConfig, std::path::PathBuf) {
    let dir = workdir(name);
    let mut cfg = tiny_experiment(&dir.join("data")).unwrap();
    cfg.methods = vec![Method::Original, Method::Target, Method::GradientU { ascent: 1.0, recovery: Some(1) }];
    cfg.attack.features = vec![AttackFeatureKind::Loss];
    (cfg, dir)
}

#[test]
fn sweep_rows_match_their_checkpoints_and_baselines() {
    let (mut cfg, dir) = tiny("sweep");
    // Long enough for the target to stop predicting a class it never saw.
    cfg.train.epochs = 15;
    let opts = SweepOptions::new(dir.join("out"));
    let report = run_sweep(&cfg, &[1], &opts).unwrap();
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.iter().all(|r| r.wall_s > 0.0 && (0.0..=100.0).contains(&r.acc_u)));

    let corpus = load_mnist_idx(&cfg.data.images, &cfg.data.labels).unwrap();
    let ctx = SeedContext::build(&cfg, &corpus, 1).unwrap();
    let stem = |m: &str| opts.out.join("checkpoints").join(format!("HQNN_{m}_noiseless_seed1.json"));

    let original = Checkpoint::load(&stem("original"), None).unwrap();
    assert_eq!(original.params, ctx.original.params, "original must be the trained model bit for bit");
    assert_eq!(original.loss_history, ctx.original.history);
    let target = Checkpoint::load(&stem("target"), None).unwrap();
    assert_eq!(report.find("target", 1).unwrap().acc_u, 0.0);

    for (name, ck) in [("original", &original), ("target", &target)] {
        let r = report.find(name, 1).unwrap();
        let s = &ctx.split;
        for (want, data) in [(r.acc_u, &s.du), (r.acc_r, &s.dr), (r.acc_test, &s.test)] {
            assert!((evaluate_accuracy(&ck.spec, &ck.params, data).unwrap() - want).abs() <= 1e-9, "{name}");
        }
    }
    let unlearned = Checkpoint::load(&stem("Gradient-U_1_R_1_"), None).unwrap();
    let r = report.find("Gradient-U(1)R(1)", 1).unwrap();
    assert!((evaluate_accuracy(&unlearned.spec, &unlearned.params, &ctx.split.du).unwrap() - r.acc_u).abs() <= 1e-9);
    assert_eq!(r.effective_ascent_epochs, Some(1.0));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweeps_persist_each_cell_and_resume() {
    let (mut cfg, dir) = tiny("resume");
    cfg.methods = vec![Method::Original, Method::GradientU { ascent: 1.0, recovery: None }];
    let mut opts = SweepOptions::new(dir.join("out"));
    opts.save_checkpoints = false;
    let first = run_sweep(&cfg, &[0], &opts).unwrap();
    let cells = opts.out.join("cells");
    assert_eq!(fs::read_dir(&cells).unwrap().count(), 2);

    // A stored cell is reused verbatim: doctor one and check the sweep returns it.
    let path = cells.join("HQNN_original_noiseless_seed0.json");
    let mut stored: MetricsRow = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    stored.acc_test = -1.0;
    fs::write(&path, serde_json::to_string(&stored).unwrap()).unwrap();
    let resumed = run_sweep(&cfg, &[0], &opts).unwrap();
    assert_eq!(resumed.find("original", 0).unwrap().acc_test, -1.0);
    assert!(resumed.find("Gradient-U(1)", 0).unwrap().same_metrics(first.find("Gradient-U(1)", 0).unwrap()));

    // Losing one cell file recomputes only that cell.
    fs::remove_file(cells.join("HQNN_Gradient-U_1__noiseless_seed0.json")).unwrap();
    let again = run_sweep(&cfg, &[0], &opts).unwrap();
    assert_eq!(again.find("original", 0).unwrap().acc_test, -1.0);
    assert!(again.find("Gradient-U(1)", 0).unwrap().same_metrics(first.find("Gradient-U(1)", 0).unwrap()));

    let loaded = load_cells(&opts.out).unwrap();
    assert_eq!(loaded.rows.len(), 2);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn failing_cells_are_reported_and_the_sweep_goes_on() {
    let (mut cfg, dir) = tiny("fail");
    let corpus = load_mnist_idx(&cfg.data.images, &cfg.data.labels).unwrap();
    let kept: Vec<_> = corpus.iter().filter(|i| i.label != 9).collect();
    let records: Vec<Vec<u8>> = kept.iter().map(|i| i.pixels.iter().map(|p| (p * 255.0).round() as u8).collect()).collect();
    let labels: Vec<u8> = kept.iter().map(|i| i.label).collect();
    let (ip, lp) = (dir.join("no9-images"), dir.join("no9-labels"));
    write_mnist_idx(&ip, &lp, &records, &labels).unwrap();
    cfg.data.images = ip;
    cfg.data.labels = lp;
    cfg.data.unlearn_class = Some(9);
    cfg.methods = vec![Method::Original, Method::Target];
    let opts = SweepOptions { out: dir.join("out"), resume: false, save_checkpoints: false };
    let report = run_sweep(&cfg, &[0, 1], &opts).unwrap();
    assert!(report.rows.is_empty());
    assert_eq!(report.failures.len(), 4);
    assert!(report.failures.iter().all(|f| f.error.contains("forget class 9")));
    assert!(render_markdown(&report).contains("### Failed cells"));
    assert!(run_sweep(&cfg, &[], &opts).is_err());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn seed_lists() {
    assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
    assert_eq!(parse_seeds("4, 1,5").unwrap(), vec![4, 1, 5]);
    for bad in ["3..3", "a..2", "1,,2", ""] {
        assert!(parse_seeds(bad).is_err(), "{bad:?}");
    }
}
