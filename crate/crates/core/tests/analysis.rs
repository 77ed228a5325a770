use std::path::Path;

use normkd_core::harness::analysis::{analyze, Variant};
use normkd_core::harness::config::ExperimentConfig;
use normkd_core::harness::datagen::{generate, BlobSpec};
use normkd_core::harness::experiment::run_distill;
use normkd_core::harness::{cache, dataset};
use normkd_core::logitstats::sample_std;
use normkd_core::{LogitRecord, TemperatureRule};

fn records(rows: &[(usize, &[f64])]) -> Vec<LogitRecord> {
    rows.iter()
        .enumerate()
        .map(|(i, (label, z))| LogitRecord {
            sample_id: i as u32,
            label: *label,
            logits: z.to_vec(),
        })
        .collect()
}

#[test]
fn identical_caches_have_no_gap() {
    let t = records(&[(0, &[3.0, 1.0, -2.0]), (1, &[0.0, 4.0, 0.5]), (2, &[-1.0, -1.0, 2.0])]);
    let r = analyze(&t, &t, 2.0).unwrap();
    assert_eq!(r.raw_frobenius, 0.0);
    assert_eq!(r.normalized_frobenius, 0.0);
    let text = String::from_utf8(r.matrix_csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 9);
    assert!(text.lines().skip(1).all(|l| l.ends_with(",0")));
}

#[test]
fn sigma_column_is_the_sample_std() {
    let t = records(&[(0, &[3.0, 1.0, -2.0]), (1, &[0.0, 4.0, 0.5])]);
    let s = records(&[(0, &[1.0, 1.5, 0.0]), (1, &[2.0, 2.0, 2.5])]);
    let r = analyze(&t, &s, 2.0).unwrap();
    let mut reader = csv::Reader::from_reader(r.summary_csv.as_slice());
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    for (row, rec) in rows.iter().zip(t.iter().chain(&s)) {
        let sigma: f64 = row[3].parse().unwrap();
        assert_eq!(sigma.to_bits(), sample_std(&rec.logits).unwrap().to_bits());
        let hi = rec.logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(row[4].parse::<f64>().unwrap(), hi);
    }
    assert_eq!(&rows[0][0], "teacher");
    assert_eq!(&rows[3][0], "student");
}

#[test]
fn demo_config_parses() {
    let text = include_str!("../../../configs/demo.conf");
    let cfg = ExperimentConfig::parse(text, Path::new("configs")).unwrap();
    assert_eq!(
        cfg.rules,
        vec![
            None,
            Some(TemperatureRule::Fixed(4.0)),
            Some(TemperatureRule::norm_std(2.0))
        ]
    );
    assert_eq!(cfg.seeds, vec![1, 2, 3, 4, 5]);
    assert_eq!(cfg.student_widths, vec![16, 8, 10]);
}

/// On the demo data a NormStd student is closer to its teacher after both
/// are normalized than in raw T = 1 probabilities.
#[test]
fn normalized_gap_is_smaller_on_the_demo_run() {
    let dir = tempfile::tempdir().unwrap();
    let (train, val) = generate(&BlobSpec {
        classes: 10,
        dim: 16,
        per_class: 200,
        margin: 1.5,
        seed: 7,
    })
    .unwrap();
    dataset::write(&dir.path().join("data/train.csv"), &train).unwrap();
    dataset::write(&dir.path().join("data/val.csv"), &val).unwrap();
    let mut cfg = ExperimentConfig::parse(include_str!("../../../configs/demo.conf"), Path::new("")).unwrap();
    cfg.train = dir.path().join("data/train.csv");
    cfg.val = dir.path().join("data/val.csv");
    cfg.output = dir.path().join("out");
    cfg.rules = vec![Some(TemperatureRule::norm_std(2.0))];
    cfg.seeds = vec![1];
    run_distill(&cfg).unwrap();

    let teacher = cache::read(&cfg.output.join("teacher_seed1_val.nkdl")).unwrap();
    let student = cache::read(&cfg.output.join("student_seed1_val.nkdl")).unwrap();
    let r = analyze(&teacher, &student, 2.0).unwrap();
    assert!(
        r.normalized_frobenius < r.raw_frobenius,
        "normalized {} vs raw {}",
        r.normalized_frobenius,
        r.raw_frobenius
    );
    assert_eq!(Variant::Normalized.as_str(), "normalized");
}
