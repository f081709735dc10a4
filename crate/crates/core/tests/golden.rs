//! Frozen fixtures. Set `PROGLAB_BLESS=1` to rewrite the recorded ones.

use std::path::{Path, PathBuf};

use proglab_core::nnet::Head;
use proglab_core::sequences::{build_windows, seqset_from_disk, seqset_to_disk, subject_split, Partition, SequenceObservation};
use proglab_core::simcohort::{cohort_from_disk, cohort_from_str, cohort_to_string, generate_cohort, Group, SimulatorConfig};
use proglab_core::training::{checkpoint_load, checkpoint_save, predict, scheme_scores, Trainer, TrainConfig};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn bless() -> bool {
    std::env::var_os("PROGLAB_BLESS").is_some()
}

#[test]
fn one_eye_cohort_parses_to_the_expected_record() {
    let path = fixture("one_eye.cohort");
    let c = cohort_from_disk(&path).unwrap();
    assert_eq!(c.config.profile_len, 4);
    assert_eq!(c.config.seed, 11);
    assert_eq!(c.eyes.len(), 1);
    let eye = &c.eyes[0];
    assert_eq!((eye.subject_id, eye.eye_id, eye.group), (7, 1, Group::Glaucoma));
    let times: Vec<f64> = eye.visits.iter().map(|v| v.t).collect();
    assert_eq!(times, [0.0, 0.7, 1.9]);
    let ages: Vec<f64> = eye.visits.iter().map(|v| v.age).collect();
    assert_eq!(ages, [61.5, 62.2, 63.4]);
    let ok: Vec<bool> = eye.visits.iter().map(|v| v.quality_ok).collect();
    assert_eq!(ok, [true, false, true]);
    assert_eq!(eye.visits[0].profile, [70.0, 90.5, 88.25, 71.0001]);
    assert_eq!(eye.visits[2].profile, [68.75, 88.0, 85.0, 70.5]);
    let t = &eye.truth;
    assert!(t.is_progressing);
    assert_eq!(t.baseline_mean, 80.25);
    assert_eq!(t.onset_t, Some(1.5));
    assert_eq!((t.aging_slope, t.progression_slope, t.sector_center), (0.5, 2.0, 1));
    assert_eq!(t.sector_mask, [0.5, 1.0, 0.5, 0.0]);

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(cohort_to_string(&c), text);
    assert!(cohort_from_str(&path, &text.replace("truth 7 1 1", "truth 7 1 0")).is_err());
}

/// Windows of consecutive usable visits, enumerated by brute force.
fn enumerate_windows(usable: &[bool], tau: usize) -> usize {
    let kept = usable.iter().filter(|&&u| u).count();
    (0..kept).filter(|&s| s + tau <= kept).count()
}

#[test]
fn one_eye_window_counts_match_enumeration() {
    let c = cohort_from_disk(&fixture("one_eye.cohort")).unwrap();
    let ok: Vec<bool> = c.eyes[0].visits.iter().map(|v| v.quality_ok).collect();
    let all = vec![true; ok.len()];
    for tau in 2..=3 {
        assert_eq!(build_windows(&c, tau, true).len(), enumerate_windows(&ok, tau));
        assert_eq!(build_windows(&c, tau, false).len(), enumerate_windows(&all, tau));
    }
    let w = build_windows(&c, 2, true);
    assert_eq!(w[0].times, [0.0, 1.9]);
    // The onset (1.5) precedes the last visit, so the window progresses.
    assert!(w[0].truth_progressing());
}

fn hundred_subjects() -> Vec<SequenceObservation> {
    (0..100u32)
        .flat_map(|sid| {
            (0..1 + sid as usize % 3).map(move |w| {
                SequenceObservation::new(sid, 0, Group::Glaucoma, w, vec![vec![1.0; 2]; 2], vec![0.0, 1.0], false).unwrap()
            })
        })
        .collect()
}

#[test]
fn hundred_subject_split_matches_golden_assignment() {
    let obs = hundred_subjects();
    let split = subject_split(&obs, [0.7, 0.15, 0.15], 2024).unwrap();
    let mut text = String::new();
    for part in [Partition::Train, Partition::Validation, Partition::Test] {
        let ids: Vec<String> = split
            .subjects
            .iter()
            .filter(|(_, p)| **p == part)
            .map(|(s, _)| s.to_string())
            .collect();
        text.push_str(&ids.join(","));
        text.push('\n');
    }
    let path = fixture("split_100.txt");
    if bless() {
        std::fs::write(&path, &text).unwrap();
    }
    assert_eq!(text, std::fs::read_to_string(&path).unwrap());
    let counts: Vec<usize> = text.lines().map(|l| l.split(',').count()).collect();
    assert_eq!(counts, [70, 15, 15]);
}

#[test]
fn checkpoint_fixture_gives_golden_scores() {
    let ckpt = fixture("small.ckpt");
    let input = fixture("small_input.seqset");
    let golden = fixture("small_scores.txt");
    if bless() {
        let cohort = generate_cohort(&SimulatorConfig {
            n_glaucoma_subjects: 8,
            n_healthy_subjects: 4,
            profile_len: 16,
            fraction_progressing: 0.5,
            seed: 5,
            ..SimulatorConfig::default()
        })
        .unwrap();
        let w = build_windows(&cohort, 5, true);
        let split = subject_split(&w, [0.6, 0.2, 0.2], 5).unwrap();
        let (tr, va, te) = split.apply(&w);
        let mut cfg = TrainConfig::noisepu();
        cfg.epochs = 2;
        cfg.model.profile_len = 16;
        cfg.model.conv_channels = 4;
        cfg.model.feature_dim = 8;
        cfg.model.hidden_dim = 8;
        cfg.model.proj_dim = 4;
        let mut t = Trainer::new(&cfg, &tr, &va).unwrap();
        t.run_until(cfg.epochs, |_| Ok(())).unwrap();
        checkpoint_save(t.state(), &ckpt).unwrap();
        seqset_to_disk(&te[..6.min(te.len())], &input).unwrap();
    }
    let state = checkpoint_load(&ckpt).unwrap();
    let obs = seqset_from_disk(&input).unwrap();
    let params = state.best.as_ref().unwrap_or(&state.params);
    let mut text = String::new();
    for head in [Head::Pu, Head::Noise] {
        for p in predict(params, &obs, head).unwrap() {
            text.push_str(&format!("{} {p:?}\n", head.as_str()));
        }
    }
    for s in scheme_scores(params, &obs, &state.config).unwrap() {
        text.push_str(&format!("score {s:?}\n"));
    }
    if bless() {
        std::fs::write(&golden, &text).unwrap();
    }
    let want = std::fs::read_to_string(&golden).unwrap();
    let parse = |t: &str| -> Vec<(String, f64)> {
        t.lines()
            .map(|l| {
                let (k, v) = l.split_once(' ').unwrap();
                (k.to_string(), v.parse().unwrap())
            })
            .collect()
    };
    let (got, want) = (parse(&text), parse(&want));
    assert_eq!(got.len(), want.len());
    for ((ka, a), (kb, b)) in got.iter().zip(&want) {
        assert_eq!(ka, kb);
        assert!((a - b).abs() < 1e-12, "{ka}: {a} vs {b}");
        assert!((0.0..=1.0).contains(a));
    }
}
