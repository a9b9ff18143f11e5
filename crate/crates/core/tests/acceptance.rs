//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits nonzero if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use evaltalker::cli::{e2e, E2eArgs};
use evaltalker::dataset::{make_folds, Difficulty, Stimulus};
use evaltalker::metrics::{compute_report, MetricsError};
use evaltalker::model::backends::{AlignedFace, BackendInfo, BoundingBox, FacePipeline};
use evaltalker::model::frames::Frame;
use evaltalker::model::regressor::mse_and_gradient;
use evaltalker::model::{
    fuse, gradient_check, identity_consistency, predict, sample_frames, Activation, FeatureBundle,
    FeatureTensor, ManifestProbe, MediaProbe, ModelError, RegressorParams,
};
use evaltalker::study::http::{self, AppState};
use evaltalker::study::{plan_sessions, ManualClock, ServiceConfig, StudyService};
use evaltalker::subjective::{
    process_ratings, read_ratings_csv, rescale_to_0_5, screen_subjects, vote_distortions,
    zscore_normalize, DistortionVector, ProcessConfig, RawScale, ScreeningConfig,
};
use evaltalker::synthetic::{reference_shaped_manifest, simulate_study, synthetic_manifest, StudyConfig};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- metrics

fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

fn oracle_tau_b(x: &[f64], y: &[f64]) -> f64 {
    let (mut c, mut d, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let a = (x[i] - x[j]).signum() * if x[i] == x[j] { 0.0 } else { 1.0 };
            let b = (y[i] - y[j]).signum() * if y[i] == y[j] { 0.0 } else { 1.0 };
            if a == 0.0 && b == 0.0 {
                continue;
            } else if a == 0.0 {
                tx += 1.0;
            } else if b == 0.0 {
                ty += 1.0;
            } else if a * b > 0.0 {
                c += 1.0;
            } else {
                d += 1.0;
            }
        }
    }
    (c - d) / ((c + d + tx) * (c + d + ty)).sqrt()
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut undefined, mut worst) = (0usize, 0usize, 0.0f64);
    let mut case = 0usize;
    while checked < 1000 {
        case += 1;
        let n = rng.random_range(2..=8);
        // Small integer alphabets force ties; every fifth case is continuous.
        let draw = |rng: &mut ChaCha8Rng| -> f64 {
            if case % 5 == 0 {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(0..4) as f64
            }
        };
        let x: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
        let got = compute_report(&x, &y, false);
        if constant(&x) || constant(&y) {
            ensure(got == Err(MetricsError::Constant), || format!("case {case}: constant input not rejected"))?;
            undefined += 1;
            continue;
        }
        let got = got.map_err(|e| format!("case {case}: {e}"))?;
        let rmse = (x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
        let expected = [
            oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y)),
            oracle_tau_b(&x, &y),
            oracle_pearson(&x, &y),
            rmse,
        ];
        let actual = [got.srcc, got.krcc, got.plcc, got.rmse];
        for (name, (e, a)) in ["srcc", "krcc", "plcc", "rmse"].iter().zip(expected.iter().zip(actual)) {
            let err = (e - a).abs();
            worst = worst.max(err);
            ensure(err <= 1e-12, || format!("case {case} {name}: {a} vs oracle {e} on x={x:?} y={y:?}"))?;
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{checked} cases matched (+{undefined} constant rejected), max abs err {worst:.1e}, {elapsed:.2?}"
    ))
}

// ---------------------------------------------------------------- subjective

fn pipeline_invariants() -> Outcome {
    let set = synthetic_manifest(20, &["A", "B", "C"], 3);
    let study = simulate_study(
        &set,
        &StudyConfig {
            raters: 40,
            seed: 3,
            ..Default::default()
        },
    );
    let z = zscore_normalize(&study.ratings);
    ensure(z.degenerate.is_empty(), || "unexpected degenerate subjects".into())?;
    let mut per_subject: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for ((s, _), &v) in &z.scores {
        per_subject.entry(s).or_default().push(v);
    }
    for (s, v) in &per_subject {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        ensure(m.abs() <= 1e-9 && (sd - 1.0).abs() <= 1e-9, || format!("{s}: mean {m}, std {sd}"))?;
    }
    let (rescaled, _) = rescale_to_0_5(&z.scores).map_err(|e| e.to_string())?;
    let lo = rescaled.values().cloned().fold(f64::INFINITY, f64::min);
    let hi = rescaled.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    ensure(lo == 0.0 && hi == 5.0, || format!("rescaled span [{lo}, {hi}]"))?;

    let (table, _) = process_ratings(&study.ratings, &ProcessConfig::default()).map_err(|e| e.to_string())?;
    ensure(table.len() == set.len(), || format!("{} MOS rows for {} stimuli", table.len(), set.len()))?;
    ensure(table.rows.values().all(|r| (0.0..=5.0).contains(&r.mos)), || "MOS outside [0, 5]".into())?;

    let votes = |set: usize| -> Vec<DistortionVector> {
        (0..40)
            .map(|i| {
                let mut d = DistortionVector::default();
                d.0[4] = i < set;
                d
            })
            .collect()
    };
    let v21 = vote_distortions(&votes(21));
    let v20 = vote_distortions(&votes(20));
    ensure(v21.0[4] && v21.count_set() == 1, || "21/40 did not set the label".into())?;
    ensure(!v20.0[4] && v20.count_set() == 0, || "20/40 did not clear the label".into())?;
    Ok(format!(
        "{} subjects z-scored, rescaled span [0, 5], {} MOS in range, 21/40 set, 20/40 clear",
        per_subject.len(),
        table.len()
    ))
}

fn screening() -> Outcome {
    let start = Instant::now();
    let set = synthetic_manifest(40, &["A", "B", "C", "D", "E"], 11);
    let study = simulate_study(
        &set,
        &StudyConfig {
            raters: 39,
            adversarial: 1,
            seed: 11,
            ..Default::default()
        },
    );
    ensure(set.len() == 200, || format!("{} stimuli", set.len()))?;
    let outcome = screen_subjects(&study.ratings, &ScreeningConfig::default());
    let adversary = &study.adversarial_ids[0];
    ensure(outcome.rejected.contains_key(adversary), || {
        format!("adversary retained with counters {:?}", outcome.counters[adversary])
    })?;
    ensure(outcome.retained.len() == 39 && outcome.rejected.len() == 1, || {
        format!("rejected {:?}", outcome.rejected.keys().collect::<Vec<_>>())
    })?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    let c = &outcome.counters[adversary];
    Ok(format!(
        "adversary rejected (P={} Q={} N={}), 39/39 consistent retained, {elapsed:.2?}",
        c.p, c.q, c.n
    ))
}

// ---------------------------------------------------------------- identity

/// Two faces side by side in every frame. The left face always embeds to
/// `e1`; the right face embeds to `e1` in the portrait and `(1,1,1,1)` in
/// the video, whose cosine with `e1` is exactly 1/2.
struct TwoFaces;

/// Faces at fixed positions whose embeddings are random unit vectors, one
/// per (frame, face).
struct RandomFaces {
    faces: usize,
    dim: usize,
    seed: u64,
}

fn stimulus(duration_s: f64) -> Stimulus {
    Stimulus {
        stimulus_id: "v".into(),
        source_id: "s".into(),
        video_uri: "v.mp4".into(),
        audio_uri: "v.wav".into(),
        source_image_uri: "v.png".into(),
        generator_label: "G".into(),
        difficulty: Difficulty::Medium,
        subject_count: 2,
        duration_s,
    }
}

fn face_row(n: usize) -> Vec<BoundingBox> {
    (0..n)
        .map(|i| BoundingBox {
            x: 100.0 * i as f64,
            y: 10.0,
            w: 40.0,
            h: 40.0,
        })
        .collect()
}

fn aligned(frame: &Frame, bbox: &BoundingBox) -> AlignedFace {
    AlignedFace {
        frame: frame.clone(),
        bbox: *bbox,
        payload: vec![],
    }
}

impl FacePipeline for TwoFaces {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("two-faces", "1")
    }
    fn locate(&self, _: &Stimulus, _: &Frame) -> Result<Vec<BoundingBox>, ModelError> {
        Ok(face_row(2))
    }
    fn align(&self, _: &Stimulus, frame: &Frame, bbox: &BoundingBox) -> Result<AlignedFace, ModelError> {
        Ok(aligned(frame, bbox))
    }
    fn embed(&self, _: &Stimulus, face: &AlignedFace) -> Result<Vec<f64>, ModelError> {
        Ok(if face.bbox.x > 0.0 && !face.frame.is_reference() {
            vec![1.0, 1.0, 1.0, 1.0]
        } else {
            vec![1.0, 0.0, 0.0, 0.0]
        })
    }
}

impl RandomFaces {
    fn unit(&self, frame: usize, face: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ ((frame as u64) << 32) ^ face as u64);
        let v: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.into_iter().map(|a| a / norm).collect()
    }
}

impl FacePipeline for RandomFaces {
    fn info(&self) -> BackendInfo {
        BackendInfo::new("random-faces", "1")
    }
    fn locate(&self, _: &Stimulus, _: &Frame) -> Result<Vec<BoundingBox>, ModelError> {
        Ok(face_row(self.faces))
    }
    fn align(&self, _: &Stimulus, frame: &Frame, bbox: &BoundingBox) -> Result<AlignedFace, ModelError> {
        Ok(aligned(frame, bbox))
    }
    fn embed(&self, _: &Stimulus, face: &AlignedFace) -> Result<Vec<f64>, ModelError> {
        Ok(self.unit(face.frame.index, (face.bbox.x / 100.0) as usize))
    }
}

fn identity() -> Outcome {
    let stim = stimulus(2.0);
    let info = ManifestProbe.probe(&stim).map_err(|e| e.to_string())?;
    let samples = sample_frames(&stim, &info).map_err(|e| e.to_string())?;
    ensure(samples.sampled() == 2, || format!("{} frames sampled", samples.sampled()))?;
    let value = identity_consistency(&TwoFaces, &stim, &samples, 2).map_err(|e| e.to_string())?;
    ensure(value == 0.75, || format!("N=2 L=2 case gave {value}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for case in 0..1000 {
        let faces = rng.random_range(1..=3);
        let frames = rng.random_range(1..=6);
        let pipeline = RandomFaces {
            faces,
            dim: rng.random_range(2..=16),
            seed: rng.random(),
        };
        let stim = stimulus(frames as f64 + 0.5);
        let samples = sample_frames(&stim, &ManifestProbe.probe(&stim).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let got = identity_consistency(&pipeline, &stim, &samples, faces).map_err(|e| e.to_string())?;
        // Hand-computed double sum over subjects and frames of the dot
        // product between unit embeddings.
        let mut sum = 0.0;
        for n in 0..faces {
            let r = pipeline.unit(0, n);
            for l in 1..=frames {
                sum += r.iter().zip(pipeline.unit(l, n)).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let expected = sum / (faces * frames) as f64;
        ensure((-1.0..=1.0).contains(&got), || format!("case {case}: {got} outside [-1, 1]"))?;
        ensure((got - expected).abs() <= 1e-12, || format!("case {case}: {got} vs {expected}"))?;
        lo = lo.min(got);
        hi = hi.max(got);
    }
    Ok(format!("N=2 L=2 gives 0.75 exactly; 1000 random cases in [{lo:.3}, {hi:.3}] and match the double sum"))
}

// ---------------------------------------------------------------- regressor

fn random_params(rng: &mut ChaCha8Rng, input_dim: usize, hidden: usize) -> RegressorParams {
    let mut p = RegressorParams::zeros(input_dim, hidden, Activation::Relu);
    let theta: Vec<f64> = (0..p.parameter_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
    p.unflatten(&theta);
    p
}

fn regression_head() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst_fwd = 0.0f64;
    for case in 0..50 {
        let (dg, rows, dh, ds) = (
            rng.random_range(1..=12),
            rng.random_range(1..=5),
            rng.random_range(1..=12),
            rng.random_range(1..=12),
        );
        let tensor = |rng: &mut ChaCha8Rng, rows: usize, c: usize| {
            FeatureTensor::new(vec![rows, c], (0..rows * c).map(|_| rng.random_range(-2.0..2.0)).collect())
                .expect("shape")
        };
        let bundle = FeatureBundle {
            stimulus_id: format!("c{case}"),
            f_g: Some(tensor(&mut rng, rows, dg)),
            f_h: Some(FeatureTensor::vector((0..dh).map(|_| rng.random_range(-2.0..2.0)).collect())),
            f_i: Some(rng.random_range(-1.0..1.0)),
            f_s: Some(tensor(&mut rng, rows + 1, ds)),
            warnings: vec![],
        };
        let fused = fuse(&bundle).map_err(|e| e.to_string())?;
        ensure(fused.len() == dg + dh + 1 + ds, || {
            format!("case {case}: fused length {} != {dg}+{dh}+1+{ds}", fused.len())
        })?;

        let hidden = rng.random_range(1..=16);
        let p = random_params(&mut rng, fused.len(), hidden);
        let w1 = DMatrix::from_row_slice(hidden, fused.len(), &p.w1);
        let h = (w1 * DVector::from_column_slice(&fused) + DVector::from_column_slice(&p.b1)).map(|v| v.max(0.0));
        let expected = DVector::from_column_slice(&p.w2).dot(&h) + p.b2;
        let got = predict(&fused, &p).map_err(|e| e.to_string())?;
        worst_fwd = worst_fwd.max((got - expected).abs());
        ensure((got - expected).abs() <= 1e-12, || format!("case {case}: forward {got} vs {expected}"))?;
    }

    let mut worst_grad = 0.0f64;
    for probe in 0..20 {
        let dim = rng.random_range(2..=10);
        let hidden = rng.random_range(2..=8);
        let p = random_params(&mut rng, dim, hidden);
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target = rng.random_range(0.0..5.0);
        let err = gradient_check(&p, &x, target).map_err(|e| e.to_string())?;
        worst_grad = worst_grad.max(err);
        ensure(err < 1e-5, || format!("probe {probe}: relative gradient error {err:e}"))?;
        // The batch loss used in training is the same squared error.
        let (loss, _) = mse_and_gradient(&p, &[x.clone()], &[target]).map_err(|e| e.to_string())?;
        let q = predict(&x, &p).map_err(|e| e.to_string())?;
        ensure((loss - (q - target).powi(2)).abs() <= 1e-12, || format!("probe {probe}: loss mismatch"))?;
    }
    Ok(format!(
        "fused length ok over 50 bundles, forward max err {worst_fwd:.1e}, gradient max rel err {worst_grad:.1e} over 20 probes"
    ))
}

// ---------------------------------------------------------------- end to end

fn end_to_end() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let args = |dir: &Path| E2eArgs {
        seed: 7,
        out: dir.to_path_buf(),
        sources: 100,
        generators: 5,
        raters: 20,
        k: 5,
        backend_sets: vec!["oracle".into(), "stub".into()],
        epochs: 200,
    };
    let mut bytes = Vec::new();
    let mut times = Vec::new();
    let mut summary = None;
    for run in ["a", "b"] {
        let dir = root.path().join(run);
        let start = Instant::now();
        summary = Some(e2e(&args(&dir)).map_err(|e| e.to_string())?);
        times.push(start.elapsed());
        bytes.push(std::fs::read(dir.join("metrics.json")).map_err(|e| e.to_string())?);
    }
    let summary = summary.expect("ran");
    ensure(summary.stimuli == 500, || format!("{} stimuli", summary.stimuli))?;
    let oracle = summary.backend_sets["oracle"].mean.srcc;
    let noise = summary.backend_sets["stub"].mean.srcc;
    ensure(oracle > 0.95, || format!("oracle SRCC {oracle:.4}"))?;
    ensure(noise.abs() < 0.2, || format!("noise SRCC {noise:.4}"))?;
    ensure(bytes[0] == bytes[1], || "metrics.json differs between runs".into())?;
    let slowest = times.iter().max().copied().unwrap_or_default();
    ensure(slowest < Duration::from_secs(120), || format!("run took {slowest:?}"))?;
    Ok(format!(
        "oracle SRCC {oracle:.4}, noise SRCC {noise:.4}, metrics.json identical, runs {:.1?} / {:.1?}",
        times[0], times[1]
    ))
}

// ---------------------------------------------------------------- protocol

fn protocol_arithmetic() -> Outcome {
    let set = reference_shaped_manifest(0);
    ensure(set.len() == 5492, || format!("{} stimuli", set.len()))?;
    let plan = plan_sessions(&set, 200, 0).map_err(|e| e.to_string())?;
    ensure(plan.len() == 28, || format!("{} sessions", plan.len()))?;
    let sizes: BTreeSet<usize> = plan.sessions.iter().map(Vec::len).collect();
    ensure(sizes.iter().all(|&s| s <= 200), || format!("session sizes {sizes:?}"))?;

    let sources = set.source_map();
    for seed in 0..100 {
        let folds = make_folds(&set, 5, seed).map_err(|e| e.to_string())?;
        let by_fold = folds.stimulus_folds(sources.iter().map(|(s, c)| (s.as_str(), c.as_str())));
        let mut seen = BTreeSet::new();
        for (f, members) in by_fold.iter().enumerate() {
            for id in members {
                ensure(seen.insert(id.clone()), || format!("seed {seed}: {id} in two folds"))?;
                ensure(folds.fold_of(&sources[id]) == Some(f), || format!("seed {seed}: {id} misplaced"))?;
            }
        }
        ensure(seen.len() == set.len(), || format!("seed {seed}: {} of {} placed", seen.len(), set.len()))?;
        // No source appears in more than one fold.
        let mut source_fold: BTreeMap<&str, usize> = BTreeMap::new();
        for (f, members) in by_fold.iter().enumerate() {
            for id in members {
                let prev = source_fold.insert(sources[id].as_str(), f);
                ensure(prev.is_none() || prev == Some(f), || format!("seed {seed}: source split across folds"))?;
            }
        }
    }
    Ok(format!("5492 stimuli -> 28 sessions (sizes {sizes:?}); 100 fold plans content-disjoint"))
}

// ---------------------------------------------------------------- service

struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    fn call(&self, method: &str, path: &str, body: Option<Value>) -> Result<(u16, String), String> {
        let url = format!("{}{path}", self.base);
        let resp = match (method, body) {
            ("GET", _) => self.agent.get(&url).call(),
            (_, Some(b)) => self.agent.post(&url).send_json(b),
            (_, None) => self.agent.post(&url).send_empty(),
        };
        let mut resp = resp.map_err(|e| format!("{method} {path}: {e}"))?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    fn json(&self, method: &str, path: &str, body: Option<Value>) -> Result<(u16, Value), String> {
        let (status, text) = self.call(method, path, body)?;
        let v = serde_json::from_str(&text).map_err(|e| format!("{path}: {e}: {text}"))?;
        Ok((status, v))
    }

    /// Start `session` and rate every item in it.
    fn complete(&self, subject: &str, session: &str, rng: &mut ChaCha8Rng) -> Result<usize, String> {
        let (status, v) = self.json("POST", &format!("/sessions/{session}/start"), Some(json!({ "subject_id": subject })))?;
        ensure(status == 200, || format!("{subject} start {session}: {status} {v}"))?;
        let mut rated = 0;
        loop {
            let (status, item) = self.json("GET", &format!("/sessions/{session}/next?subject_id={subject}"), None)?;
            ensure(status == 200, || format!("next: {status} {item}"))?;
            let d: Vec<bool> = (0..12).map(|_| rng.random_bool(0.2)).collect();
            let (status, receipt) = self.json(
                "POST",
                "/ratings",
                Some(json!({
                    "subject_id": subject,
                    "stimulus_id": item["stimulus_id"],
                    "q": rng.random_range(0.0..=5.0),
                    "d": d,
                })),
            )?;
            ensure(status == 201, || format!("rating: {status} {receipt}"))?;
            rated += 1;
            if receipt["session_finished"] == json!(true) {
                return Ok(rated);
            }
        }
    }
}

fn service_conformance() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let set = synthetic_manifest(6, &["A", "B", "C", "D"], 5);
    let config = ServiceConfig {
        max_per_session: 5,
        utc_offset_minutes: Some(0),
        sync_writes: false,
        ..Default::default()
    };
    let clock = Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2025, 5, 12, 8, 0, 0).unwrap()));
    let service = StudyService::open(dir.path(), &set, config.clone(), clock.clone()).map_err(|e| e.to_string())?;
    let sessions = service.plan().session_ids();
    ensure(sessions.len() >= 5, || format!("{} sessions", sessions.len()))?;

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(1)
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .map_err(|e| e.to_string())?;
    let addr = listener.local_addr().map_err(|e| e.to_string())?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = runtime.spawn(http::serve(listener, Arc::new(AppState::new(service)), async {
        let _ = stopped.await;
    }));

    let client = Client {
        agent: ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into(),
        base: format!("http://{addr}"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let minutes = |m: i64| chrono::Duration::minutes(m);
    let mut posted = 0;

    let result = (|| -> Outcome {
        for subject in ["ana", "ben", "cai"] {
            let (status, _) = client.json("POST", "/raters", Some(json!({ "subject_id": subject })))?;
            ensure(status == 201, || format!("register {subject}: {status}"))?;
        }
        posted += client.complete("ana", &sessions[0], &mut rng)?;

        clock.advance(minutes(29));
        let (status, denial) =
            client.json("POST", &format!("/sessions/{}/start", sessions[1]), Some(json!({ "subject_id": "ana" })))?;
        ensure(status == 403 && denial["reason"] == "break", || format!("29 min: {status} {denial}"))?;
        ensure(denial["retry_after_s"] == 60, || format!("29 min retry: {denial}"))?;

        clock.advance(minutes(1));
        posted += client.complete("ana", &sessions[1], &mut rng)?;
        clock.advance(minutes(30));
        posted += client.complete("ana", &sessions[2], &mut rng)?;

        clock.advance(minutes(45));
        let (status, denial) =
            client.json("POST", &format!("/sessions/{}/start", sessions[3]), Some(json!({ "subject_id": "ana" })))?;
        ensure(status == 403 && denial["reason"] == "daily-cap", || format!("4th session: {status} {denial}"))?;

        for subject in ["ben", "cai"] {
            posted += client.complete(subject, &sessions[0], &mut rng)?;
            clock.advance(minutes(30));
            posted += client.complete(subject, &sessions[3], &mut rng)?;
        }

        let (status, csv) = client.call("GET", "/export/ratings.csv", None)?;
        ensure(status == 200, || format!("export: {status}"))?;
        let exported = read_ratings_csv(csv.as_bytes(), config.scale).map_err(|e| e.to_string())?;
        ensure(exported.len() == posted, || format!("exported {} of {posted}", exported.len()))?;
        let (table, report) = process_ratings(
            &exported,
            &ProcessConfig {
                scale: RawScale::default(),
                screening: None,
            },
        )
        .map_err(|e| e.to_string())?;
        let in_table: usize = table.rows.values().map(|r| r.n_ratings).sum();
        ensure(report.rows_consumed == posted && in_table == posted, || {
            format!("posted {posted}, consumed {}, in MOS table {in_table}", report.rows_consumed)
        })?;
        Ok(format!(
            "29 min denied (retry 60 s), 30 min allowed, 4th same-day session denied, {posted} ratings exported and processed"
        ))
    })();

    let _ = stop.send(());
    runtime
        .block_on(server)
        .map_err(|e| e.to_string())?
        .map_err(|e| e.to_string())?;
    result
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metric oracle equivalence", metric_oracle),
        ("subjective pipeline invariants", pipeline_invariants),
        ("rater screening", screening),
        ("identity consistency", identity),
        ("fusion and regression head", regression_head),
        ("end-to-end synthetic run", end_to_end),
        ("protocol arithmetic", protocol_arithmetic),
        ("service conformance over HTTP", service_conformance),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
