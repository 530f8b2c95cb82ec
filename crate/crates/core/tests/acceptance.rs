//! Acceptance suite. Each test prints one `criterion N: PASS|FAIL` line.
//!
//! Criteria 1, 2 and 10 share one generated synthetic dataset; it is built
//! once per test binary in a temporary directory.

use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

use texsel::audio_io::AudioClip;
use texsel::autoencoder::{encode, train_autoencoder, AEHyperparams, AEModel};
use texsel::experiment::{
    compare_selectors, frame_features, generate_synthetic_dataset, run_experiment, Extractor, FeatureCache,
    textures_from_frames, truncate_dataset, ClassifierGrid, ComparisonReport, DatasetManifest,
    ExperimentConfig, FeatureSet, RunOptions, SyntheticSpec,
};
use texsel::features::{
    apply_projection, energy, inverse_dct, make_projection, mel_frame_features, mfcc, spectral_centroid,
    spectral_flatness, spectral_flux, spectral_rolloff, FeatureMatrix, FeatureSource, N_MELS,
};
use texsel::learning::svm::{solve_binary, KKT_TOL};
use texsel::learning::{anova_mask, fit_standardizer, train_knn, train_svm};
use texsel::selection::{kmeans, SelectorSpec, KMEANS_MAX_ITER, KMEANS_TOL};
use texsel::textures::TextureParams;

fn report(n: u32, ok: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} failed: {detail}");
}

struct Synthetic {
    _dir: TempDir,
    full: DatasetManifest,
    short: DatasetManifest,
    opts: RunOptions,
}

fn synthetic() -> &'static Synthetic {
    static DATA: OnceLock<Synthetic> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let full = generate_synthetic_dataset(&SyntheticSpec::new(4, 30, 60.0, 6, 7), dir.path().join("full")).unwrap();
        let short = truncate_dataset(&full, 10.0, dir.path().join("short")).unwrap();
        let opts = RunOptions {
            cache_dir: Some(dir.path().join("cache")),
            jobs: 0,
        };
        Synthetic {
            _dir: dir,
            full,
            short,
            opts,
        }
    })
}

fn handcrafted_svm() -> ExperimentConfig {
    let mut c = ExperimentConfig::new(FeatureSet::Handcrafted, SelectorSpec::all());
    c.seed = 7;
    c.classifiers = ClassifierGrid::svm_only();
    c
}

fn f1_of(c: &ComparisonReport, name: &str) -> f64 {
    c.result(name).unwrap_or_else(|| panic!("no result for {name}")).mean_f1
}

#[test]
fn criterion_01_selector_trends() {
    let data = synthetic();
    let t = Instant::now();
    let selectors = [
        SelectorSpec::kmeansc(5, 7),
        SelectorSpec::linspace(5),
        SelectorSpec::kmeansc(20, 7),
        SelectorSpec::fts(),
        SelectorSpec::all(),
    ];
    let (cmp, _) = compare_selectors(&data.full, &handcrafted_svm(), &selectors, &data.opts).unwrap();
    let (k5, l5, k20, fts, all) = (
        f1_of(&cmp, "KMEANSC5"),
        f1_of(&cmp, "LINSPACE5"),
        f1_of(&cmp, "KMEANSC20"),
        f1_of(&cmp, "FTS"),
        f1_of(&cmp, "ALL"),
    );
    let ok = k5 >= l5 && k20 >= fts && (k5 - all).abs() <= 0.05;
    report(
        1,
        ok,
        &format!(
            "KMEANSC5 {k5:.4} LINSPACE5 {l5:.4} KMEANSC20 {k20:.4} FTS {fts:.4} ALL {all:.4} ({:.0} s)",
            t.elapsed().as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_short_track_null_effect() {
    let data = synthetic();
    let t = Instant::now();
    let selectors = [SelectorSpec::kmeansc(5, 7), SelectorSpec::fts()];
    let (cmp, _) = compare_selectors(&data.short, &handcrafted_svm(), &selectors, &data.opts).unwrap();
    let (k5, fts) = (f1_of(&cmp, "KMEANSC5"), f1_of(&cmp, "FTS"));
    let gap = (k5 - fts).abs();
    report(
        2,
        gap < 0.05,
        &format!("KMEANSC5 {k5:.4} FTS {fts:.4} gap {gap:.4} ({:.0} s)", t.elapsed().as_secs_f64()),
    );
}

#[test]
fn criterion_03_kmeans_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_mean = 0.0f64;
    let mut monotone = true;
    for trial in 0..100 {
        let n = rng.gen_range(1..60);
        let d = rng.gen_range(1..8);
        let x = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-10.0..10.0));
        let r = kmeans(x.view(), 1, trial, KMEANS_MAX_ITER, KMEANS_TOL).unwrap();
        let mean = x.mean_axis(Axis(0)).unwrap();
        for (a, b) in r.centroids.row(0).iter().zip(&mean) {
            worst_mean = worst_mean.max((a - b).abs());
        }
        let k = rng.gen_range(1..=n.min(6));
        let r = kmeans(x.view(), k, trial, KMEANS_MAX_ITER, KMEANS_TOL).unwrap();
        monotone &= r.inertia_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-12);
    }

    let noise = Normal::new(0.0, 0.5).unwrap();
    let truth = [[-3.0, 0.0], [3.0, 1.0]];
    let x = Array2::from_shape_fn((400, 2), |(i, j)| truth[i % 2][j] + noise.sample(&mut rng));
    let r = kmeans(x.view(), 2, 11, KMEANS_MAX_ITER, KMEANS_TOL).unwrap();
    let blob_err = truth
        .iter()
        .map(|t| {
            r.centroids
                .outer_iter()
                .map(|c| c.iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max);

    let ok = worst_mean <= 1e-9 && monotone && blob_err <= 0.1;
    report(
        3,
        ok,
        &format!("k=1 mean error {worst_mean:.1e}, inertia monotone {monotone}, blob error {blob_err:.3}"),
    );
}

fn brute_force_knn(x: &Array2<f64>, labels: &[usize], q: &[f64], k: usize) -> usize {
    let mut order: Vec<(f64, usize)> = x
        .outer_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut counts = [0usize; 4];
    for &(_, i) in &order[..k] {
        counts[labels[i]] += 1;
    }
    // most votes, lowest label on ties
    (0..4).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap()
}

#[test]
fn criterion_04_classifier_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_simple_fn((1000, 5), || rng.gen_range(-1.0..1.0));
    let labels: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..4)).collect();
    let queries = Array2::from_shape_simple_fn((200, 5), || rng.gen_range(-1.0..1.0));
    let mut knn_mismatch = 0;
    for k in [1, 3, 5, 7, 9] {
        let model = train_knn(x.view(), &labels, k).unwrap();
        let got = model.predict(queries.view()).unwrap();
        for (q, (l, _)) in queries.outer_iter().zip(&got) {
            if *l != brute_force_knn(&x, &labels, q.as_slice().unwrap(), k) {
                knn_mismatch += 1;
            }
        }
    }

    let noise = Normal::new(0.0, 0.3).unwrap();
    let blobs = Array2::from_shape_fn((60, 2), |(i, _)| if i < 30 { -2.0 } else { 2.0 } + noise.sample(&mut rng));
    let blob_labels: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
    let xor = ndarray::array![[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]];
    let xor_labels = vec![0, 0, 1, 1];

    let mut svm_ok = true;
    let mut worst_kkt = 0.0f64;
    for (data, lab) in [(&blobs, &blob_labels), (&xor, &xor_labels)] {
        let gamma = 1.0;
        let model = train_svm(data.view(), lab, 1000.0, gamma).unwrap();
        let pred: Vec<usize> = model.predict(data.view()).unwrap().into_iter().map(|p| p.0).collect();
        svm_ok &= pred == *lab;
        let y: Vec<f64> = lab.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
        let sol = solve_binary(data.view(), &y, 1000.0, gamma, KKT_TOL);
        worst_kkt = worst_kkt.max(sol.kkt_violation(data.view(), &y, 1000.0, gamma));
    }

    let ok = knn_mismatch == 0 && svm_ok && worst_kkt <= 1e-3;
    report(
        4,
        ok,
        &format!("KNN mismatches {knn_mismatch}, SVM training accuracy 100% {svm_ok}, worst KKT {worst_kkt:.1e}"),
    );
}

fn tone_clip(seconds: f64, seed: u64) -> AudioClip {
    let sr = 44_100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.05 * rng.gen_range(-1.0..1.0)
        })
        .collect();
    AudioClip::new(samples, sr).unwrap()
}

#[test]
fn criterion_05_texture_arithmetic() {
    let clip = tone_clip(30.0, 5);
    let mut dims = Vec::new();
    let mut counts = Vec::new();
    let mut frames_seen = 0;
    for fs in [FeatureSet::Handcrafted, FeatureSet::MelRp { m: 75 }, FeatureSet::MelSpec] {
        let config = ExperimentConfig::new(fs, SelectorSpec::all());
        let frames = frame_features(&clip, &config).unwrap();
        frames_seen = frames.nrows();
        let t = textures_from_frames(&frames, &config, "t", None).unwrap();
        dims.push(t.dim());
        counts.push(t.n_textures());
    }
    let config = ExperimentConfig::new(FeatureSet::MelAe { h: 128 }, SelectorSpec::all());
    let mel = mel_frame_features(&clip, config.frames).unwrap();
    let st = fit_standardizer(mel.values.view()).unwrap();
    let z = FeatureMatrix::new(st.transform(mel.values.view()).unwrap(), mel.names.clone(), FeatureSource::MelSpec).unwrap();
    let hp = AEHyperparams {
        epochs: 1,
        ..AEHyperparams::default()
    };
    let ae = train_autoencoder(&z, 128, hp).unwrap();
    let t = textures_from_frames(&encode(&ae, &z).unwrap(), &config, "t", None).unwrap();
    dims.push(t.dim());
    counts.push(t.n_textures());

    // a 30 s clip holds 1,323,000 samples: floor((1323000 - 2048) / 1024) + 1 frames
    let expected_textures = TextureParams::default().texture_count(1290);
    let ok = frames_seen == 1290
        && expected_textures == 108
        && counts.iter().all(|&c| c == 108)
        && dims == [156, 450, 768, 768];
    report(5, ok, &format!("frames {frames_seen}, textures {counts:?}, dims {dims:?}"));
}

#[test]
fn criterion_06_feature_formulas() {
    let flat = Array1::from_elem(100, 0.7);
    let flatness = spectral_flatness(flat.view());
    let mut impulse = Array1::zeros(100);
    impulse[37] = 2.5;
    // bins are numbered from 1
    let centroid = spectral_centroid(impulse.view());
    let rolloff = spectral_rolloff(flat.view(), 0.85).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = Array1::from_shape_simple_fn(100, || rng.gen_range(0.0..1.0));
    let flux = spectral_flux(a.view(), a.view()).unwrap();
    let mel = Array1::from_shape_simple_fn(N_MELS, || rng.gen_range(0.01..5.0));
    let back = inverse_dct(&mfcc(mel.view(), N_MELS).unwrap());
    let dct_err = back
        .iter()
        .zip(mel.iter())
        .map(|(b, m)| (b - (m + texsel::features::EPS).ln()).abs())
        .fold(0.0, f64::max);
    let e = energy(a.view());
    let e_oracle: f64 = a.iter().map(|v| v * v).sum();

    let ok = (flatness - 1.0).abs() <= 1e-9
        && centroid == 38.0
        && rolloff == 85.0
        && flux == 0.0
        && dct_err < 1e-6
        && (e - e_oracle).abs() <= 1e-9 * e_oracle;
    report(
        6,
        ok,
        &format!("flatness {flatness}, centroid {centroid}, rolloff {rolloff}, flux {flux}, DCT round trip {dct_err:.1e}"),
    );
}

fn finite_difference_error(model: &AEModel, x: &Array2<f64>) -> f64 {
    let (_, g) = model.gradients(x.view());
    let h = 1e-5;
    let mut worst = 0.0f64;
    let loss = |m: &AEModel| m.gradients(x.view()).0;
    let mut check = |analytic: f64, perturb: &dyn Fn(&mut AEModel, f64)| {
        let mut p = model.clone();
        perturb(&mut p, h);
        let mut m = model.clone();
        perturb(&mut m, -h);
        let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    };
    for i in 0..model.w1.nrows() {
        for j in 0..model.w1.ncols() {
            check(g.w1[[i, j]], &|m, d| m.w1[[i, j]] += d);
        }
    }
    for j in 0..model.b1.len() {
        check(g.b1[j], &|m, d| m.b1[j] += d);
    }
    for i in 0..model.w2.nrows() {
        for j in 0..model.w2.ncols() {
            check(g.w2[[i, j]], &|m, d| m.w2[[i, j]] += d);
        }
    }
    for j in 0..model.b2.len() {
        check(g.b2[j], &|m, d| m.b2[j] += d);
    }
    worst
}

#[test]
fn criterion_07_autoencoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut model = AEModel::init(12, 5, AEHyperparams::default());
    // nonzero biases keep pre-activations away from the ReLU kink
    model.b1.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    model.b2.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
    let batch = Array2::from_shape_simple_fn((5, 12), || rng.gen_range(-1.0..1.0));
    let grad_err = finite_difference_error(&model, &batch);

    // the encoder an experiment would train for fold 0, with default hyperparameters
    let data = synthetic();
    let config = ExperimentConfig::new(FeatureSet::MelAe { h: 128 }, SelectorSpec::all());
    let cache = FeatureCache::new(data.opts.cache_dir.clone()).unwrap();
    let extractor = Extractor::new(&data.full, &config, &cache).unwrap();
    let (train, _) = data.full.fold_split(0);
    let ae = extractor.fold_encoder(&train, 128, config.seed).unwrap().model;
    let last = *ae.training_log.last().unwrap();
    let ratio = last / ae.initial_mse;

    let ok = grad_err <= 1e-4 && ratio <= 0.5;
    report(
        7,
        ok,
        &format!(
            "gradient relative error {grad_err:.1e}, MSE {:.4} -> {last:.4} (ratio {ratio:.3}) over {} rows",
            ae.initial_mse, ae.training_rows
        ),
    );
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn median_distortion(x: &FeatureMatrix, m: usize) -> f64 {
    let p = make_projection(x.ncols(), m, 8).unwrap();
    let y = apply_projection(x, &p).unwrap();
    let scale = (m as f64).sqrt();
    let dist = |a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>| {
        a.iter().zip(b.iter()).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
    };
    let mut rel = Vec::new();
    for i in 0..x.nrows() {
        for j in i + 1..x.nrows() {
            let d = dist(x.values.row(i), x.values.row(j));
            let e = dist(y.values.row(i), y.values.row(j)) / scale;
            rel.push((e / d - 1.0).abs());
        }
    }
    median(rel)
}

#[test]
fn criterion_08_random_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values = Array2::from_shape_simple_fn((200, N_MELS), || rng.gen_range(-1.0..1.0));
    let names = (0..N_MELS).map(|i| format!("m{i}")).collect();
    let x = FeatureMatrix::new(values, names, FeatureSource::MelSpec).unwrap();
    let (d100, d26) = (median_distortion(&x, 100), median_distortion(&x, 26));
    report(8, d100 < d26, &format!("median distortion M=100 {d100:.4}, M=26 {d26:.4}"));
}

#[test]
fn criterion_09_anova_keeps_aligned_feature() {
    let mut kept = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + trial);
        let n = 90;
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let aligned = rng.gen_range(0..51);
        let x = Array2::from_shape_fn((n, 51), |(i, j)| {
            if j == aligned {
                labels[i] as f64
            } else {
                rng.gen_range(-1.0..1.0)
            }
        });
        let mask = anova_mask(x.view(), &labels, 0.2).unwrap();
        if mask.kept_indices.contains(&aligned) {
            kept += 1;
        }
    }
    report(9, kept == 100, &format!("aligned feature kept in {kept}/100 trials"));
}

#[test]
fn criterion_10_determinism() {
    let data = synthetic();
    let mut config = handcrafted_svm();
    config.selector = SelectorSpec::kmeansc(5, 7);
    let uncached = RunOptions {
        cache_dir: None,
        jobs: 0,
    };
    let a = run_experiment(&data.short, &config, &data.opts).unwrap().canonical_json();
    let b = run_experiment(&data.short, &config, &data.opts).unwrap().canonical_json();
    let c = run_experiment(&data.short, &config, &uncached).unwrap().canonical_json();
    report(
        10,
        a == b && b == c,
        &format!("rerun identical {}, cached vs uncached identical {}", a == b, b == c),
    );
}
