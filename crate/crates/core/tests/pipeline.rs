use surrmeta::data::{filter_studies, parse_study_csv, split_within_study, write_study_csv_file, ColumnMapping, Design};
use surrmeta::pipeline::{screen, EpsilonPolicy, ScreenOptions};
use surrmeta::report::{write_evaluate_outputs, write_screen_outputs};
use surrmeta::signature::{evaluate_signature, EvaluateOptions, SignatureSpec};
use surrmeta::sim::{synthetic_studies, SyntheticConfig};
use surrmeta::StudyDataset;

fn two_arm(subjects: usize, seed: u64) -> Vec<StudyDataset> {
    synthetic_studies(&SyntheticConfig {
        design: Design::TwoArm,
        studies: 6,
        subjects,
        markers: 30,
        planted: 1,
        y_shift: (-1.5, 1.5),
        marker_shift: (-1.0, 1.0),
        jitter: 0.2,
        coupling: 0.5,
        planted_coupling: 0.9,
        seed,
    })
    .unwrap()
}

#[test]
fn csv_round_trip_split_screen_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("studies.csv");
    write_study_csv_file(&csv, &two_arm(90, 21)).unwrap();

    let parsed = parse_study_csv(&csv, &ColumnMapping::default()).unwrap();
    assert_eq!(parsed.len(), 6);
    assert!(parsed.iter().all(|d| d.design == Design::TwoArm && d.n_markers() == 30));
    let (parsed, dropped) = filter_studies(parsed, 5).unwrap();
    assert!(dropped.dropped.is_empty());

    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for d in &parsed {
        let (a, b) = split_within_study(d, 0.5, 4).unwrap();
        assert_eq!(a.n_subjects() + b.n_subjects(), d.n_subjects());
        train.push(a);
        holdout.push(b);
    }

    let report = screen(&train, &ScreenOptions::default()).unwrap();
    assert!(report.gamma_names().contains(&"planted01"), "screened: {:?}", report.gamma_names());
    assert_eq!(report.ranked()[0], 0, "planted marker should rank first");

    let out = dir.path().join("screen");
    let written = write_screen_outputs(&out, &report, 5, true).unwrap();
    assert!(written.iter().any(|p| p.ends_with("forest_planted01.svg")));
    let spec = SignatureSpec::from_json(&std::fs::read_to_string(out.join("signature.json")).unwrap()).unwrap();
    assert_eq!(spec, report.signature);
    let total: f64 = spec.members.iter().map(|m| m.lambda).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let eps = EpsilonPolicy::Power { alpha: 0.05, power: 0.8 }.resolve(&holdout).unwrap();
    let opts = EvaluateOptions { bootstrap_replicates: 500, ..EvaluateOptions::default() };
    let ev = evaluate_signature(&holdout, &spec, eps, &opts).unwrap();
    assert_eq!(ev.studies.len(), 6);
    assert!(ev.ccc().unwrap() > 0.8, "ccc {:?}", ev.ccc());

    let eval_dir = dir.path().join("eval");
    write_evaluate_outputs(&eval_dir, &ev, false).unwrap();
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(metrics.lines().count() >= 4);
}

#[test]
fn screening_is_reproducible() {
    let data = two_arm(40, 5);
    let opts = ScreenOptions { epsilon: EpsilonPolicy::Fixed(0.25), ..ScreenOptions::default() };
    let a = screen(&data, &opts).unwrap();
    let b = screen(&data, &opts).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.signature.to_json().unwrap(), b.signature.to_json().unwrap());
}

fn with_replay(data: &[StudyDataset]) -> Vec<StudyDataset> {
    // marker that follows the endpoint up to a small deterministic wobble
    data.iter()
        .map(|d| {
            let values = d
                .records()
                .iter()
                .enumerate()
                .map(|(i, r)| r.y.map(|y| y + 0.6 * (((i * 7919) % 101) as f64 / 101.0 - 0.5)))
                .collect();
            d.push_marker("replay", values)
        })
        .collect()
}

#[test]
fn perfect_surrogate_holdout_is_equivalent() {
    let train = with_replay(&two_arm(60, 9));
    let holdout = with_replay(&two_arm(60, 10));
    let report = screen(&train, &ScreenOptions::default()).unwrap();
    let replay = train[0].marker_index("replay").unwrap();
    assert!(report.gamma.contains(&replay), "{:?} {:?}", report.markers[replay].failure, report.markers[replay].equivalence);
    assert_eq!(report.ranked()[0], replay);

    let mut spec = report.signature.clone();
    spec.members.retain(|m| m.marker == "replay");
    spec.members[0].lambda = 1.0;
    let eps = EpsilonPolicy::Power { alpha: 0.05, power: 0.8 }.resolve(&holdout).unwrap();
    let opts = EvaluateOptions { bootstrap_replicates: 300, ..EvaluateOptions::default() };
    let ev = evaluate_signature(&holdout, &spec, eps, &opts).unwrap();
    assert!(ev.tost.p_tost < 0.01, "p {}", ev.tost.p_tost);
    assert!(ev.ccc().unwrap() > 0.99, "ccc {:?}", ev.ccc());
}
