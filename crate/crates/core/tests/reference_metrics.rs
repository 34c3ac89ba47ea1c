//! Cross-checks against the Python reference implementations when they are
//! installed (`pystoi`, `pesq`). Each check prints a notice and passes
//! vacuously when its package is missing.

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use silence_denoise::datagen::toy;
use silence_denoise::metrics::{self, PesqBackend, PesqMode};
use silence_denoise::Waveform;

fn python_has(module: &str) -> bool {
    Command::new("python3")
        .args(["-c", &format!("import {module}")])
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn write_f64(path: &Path, w: &Waveform) {
    let bytes: Vec<u8> = w.samples().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).unwrap();
}

/// Clean tone-burst clip and a degraded copy at the given noise scale.
fn fixture(seed: u64, noise_scale: f64) -> (Waveform, Waveform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = toy::tone_burst_clip(48_000, &mut rng);
    let noisy: Vec<f64> = clean
        .samples()
        .iter()
        .enumerate()
        .map(|(i, v)| v + noise_scale * (rng.gen_range(-1.0..1.0) + 0.5 * (i as f64 * 0.05).sin()))
        .collect();
    (clean, Waveform::new(noisy, 16_000).unwrap())
}

#[test]
fn stoi_matches_pystoi() {
    if !python_has("pystoi") {
        eprintln!("pystoi not installed; skipping cross-check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    for (k, scale) in [0.02, 0.1, 0.3, 0.6, 1.0].into_iter().enumerate() {
        let (clean, noisy) = fixture(100 + k as u64, scale);
        let (a, b) = (dir.path().join("a.f64"), dir.path().join("b.f64"));
        write_f64(&a, &clean);
        write_f64(&b, &noisy);
        let out = Command::new("python3")
            .args([
                "-c",
                "import sys, numpy as np\nfrom pystoi import stoi\n\
                 x = np.fromfile(sys.argv[1], dtype='<f8'); y = np.fromfile(sys.argv[2], dtype='<f8')\n\
                 print(stoi(x, y, 16000))",
            ])
            .arg(&a)
            .arg(&b)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let want: f64 = String::from_utf8_lossy(&out.stdout).trim().parse().unwrap();
        let got = metrics::stoi(&clean, &noisy).unwrap();
        assert!((got - want).abs() < 1e-3, "fixture {k}: ours {got}, reference {want}");
    }
}

#[test]
fn pesq_backend_scores_and_memoizes() {
    let Some(backend) = PesqBackend::detect(PesqMode::Wideband) else {
        eprintln!("pesq package not installed; skipping backend check");
        return;
    };
    let (clean, noisy) = fixture(7, 0.2);
    let ideal = backend.score(&clean, &clean).score().unwrap();
    assert!(ideal > 4.4, "identical signals scored {ideal}");
    let degraded = backend.score(&clean, &noisy).score().unwrap();
    assert!(degraded < ideal);
    assert_eq!(backend.invocations(), 2);
    assert_eq!(backend.score(&clean, &noisy).score(), Some(degraded));
    assert_eq!(backend.invocations(), 2);
}

#[test]
fn pesq_backend_timeout_reports_unavailable() {
    use std::os::unix::fs::PermissionsExt;
    let dir = tempfile::tempdir().unwrap();
    let slow = dir.path().join("slow-python");
    std::fs::write(&slow, "#!/bin/sh\nsleep 10\n").unwrap();
    std::fs::set_permissions(&slow, std::fs::Permissions::from_mode(0o755)).unwrap();
    let backend = PesqBackend::new(&slow, PesqMode::Wideband, std::time::Duration::from_millis(300));
    let (clean, _) = fixture(8, 0.0);
    let started = std::time::Instant::now();
    match backend.score(&clean, &clean) {
        metrics::PesqOutcome::Unavailable(msg) => assert!(msg.contains("timed out"), "{msg}"),
        other => panic!("expected unavailable, got {other:?}"),
    }
    assert!(started.elapsed() < std::time::Duration::from_secs(5));
}
