//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use desom_core::desom::{
    combined_loss_and_grad, decode_model, encode_model, preset, stamps_tensor, train_separate, DesomModel,
};
use desom_core::error::{ParseError, Section};
use desom_core::eval::{
    confusion_rates, majority_selection, order_cells_by_percentile, roc_switch_off, train_reference_scorer,
    LabeledCells, ReferenceScorer, RocCurve, ScorerConfig,
};
use desom_core::formats::{decode_stamps, encode_stamps};
use desom_core::nn::{mse, Autoencoder, LayerSpec, Network, Shape, Tensor};
use desom_core::som::{decay_value, Cell, DecaySchedule, NeighborhoodDistance, SomMap};
use desom_core::stamps::{crossmatch_radius, fit_offset_threshold, Label, OffsetFit, StampScale};
use desom_core::synth::{synth_offset_pairs, synth_stamp_set, StampSetConfig};
use desom_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed <= limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

fn crossmatch_values() -> Outcome {
    let f = OffsetFit::SURVEY;
    let (peak, floor, mid) = (crossmatch_radius(3.7, &f), crossmatch_radius(21.0, &f), crossmatch_radius(13.5, &f));
    ensure(peak == 46.3, || format!("r(3.7) = {peak}"))?;
    ensure(floor == 3.0, || format!("r(21) = {floor}"))?;
    ensure((mid - 3.88).abs() <= 0.01, || format!("r(13.5) = {mid}"))?;
    Ok(format!("r(3.7)={peak} r(21)={floor} r(13.5)={mid:.4}"))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = q / 100.0 * (sorted.len() - 1) as f64;
    let (lo, hi) = (rank.floor() as usize, rank.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

fn normalization_anchors() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let stamps: Vec<Vec<f32>> = (0..1000)
        .map(|_| {
            let sky: f64 = rng.random_range(-100.0..300.0);
            let noise: f64 = rng.random_range(0.1..30.0);
            let peak: f64 = rng.random_range(0.0..1000.0);
            (0..1024)
                .map(|i| {
                    let (r, c) = ((i / 32) as f64 - 16.0, (i % 32) as f64 - 16.0);
                    let n: f64 = StandardNormal.sample(&mut rng);
                    (sky + noise * n + peak * (-(r * r + c * c) / 6.0).exp()) as f32
                })
                .collect()
        })
        .collect();
    let start = Instant::now();
    for (k, raw) in stamps.iter().enumerate() {
        let mut sorted: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        sorted.sort_by(f64::total_cmp);
        let median = percentile(&sorted, 50.0);
        let max = *sorted.last().unwrap();
        let below = &sorted[..sorted.partition_point(|&v| v < median)];
        let p05 = percentile(below, 5.0);
        let s = StampScale::fit(raw).map_err(|e| e.to_string())?;
        let anchors = (s.apply(median), s.apply(max), s.apply(p05));
        ensure(anchors == (0.5, 1.0, 0.0), || format!("stamp {k}: anchors {anchors:?}"))?;
        let mut out: Vec<(f32, f64)> = raw.iter().map(|&p| (p, s.apply(p as f64))).collect();
        ensure(out.iter().all(|(_, v)| (0.0..=1.0).contains(v)), || format!("stamp {k}: value outside [0, 1]"))?;
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        ensure(out.windows(2).all(|w| w[0].1 <= w[1].1), || format!("stamp {k}: not monotone"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("1000 stamps in {elapsed:.2?}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn random_tensor(batch: usize, shape: Shape, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_vec(batch, shape, (0..batch * shape.len()).map(|_| rng.random()).collect()).unwrap()
}

/// Worst relative error of backprop against central differences of the MSE.
fn network_fd_error(input: Shape, specs: &[LayerSpec], seed: u64) -> Result<(f64, usize), String> {
    let mut net = Network::<f64>::new(input, specs, seed).map_err(|e| e.to_string())?;
    let n = net.num_params();
    ensure(n <= 5000, || format!("{n} params"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor(2, input, &mut rng);
    let y = random_tensor(2, net.output_shape(), &mut rng);
    let pred = net.forward(&x).unwrap();
    let (_, g) = mse(&pred, &y).unwrap();
    let analytic = net.backward(&g).unwrap().flat();
    let params = net.flat_params();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let mut p = params.clone();
        p[i] += eps;
        net.set_flat_params(&p).unwrap();
        let plus = mse(&net.predict(&x).unwrap(), &y).unwrap().0;
        p[i] -= 2.0 * eps;
        net.set_flat_params(&p).unwrap();
        let minus = mse(&net.predict(&x).unwrap(), &y).unwrap().0;
        worst = worst.max(rel_err(analytic[i], (plus - minus) / (2.0 * eps)));
    }
    Ok((worst, n))
}

fn conv(filters: usize, stride: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        filters,
        kernel: 3,
        stride,
    }
}

fn tiny_autoencoder() -> (Vec<LayerSpec>, Vec<LayerSpec>) {
    let enc = vec![
        conv(2, 1),
        LayerSpec::Relu,
        LayerSpec::Maxpool2d { size: 2, stride: None },
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 4 },
    ];
    let dec = vec![
        LayerSpec::Dense { units: 18 },
        LayerSpec::Relu,
        LayerSpec::Reshape {
            channels: 2,
            height: 3,
            width: 3,
        },
        LayerSpec::TransposedConv2d {
            filters: 1,
            kernel: 3,
            stride: 2,
        },
    ];
    (enc, dec)
}

/// Combined objective with the BMUs held fixed, evaluated from its definition.
fn combined_objective(ae: &Autoencoder<f64>, w: &[f64], m: usize, x: &Tensor<f64>, gamma: f64, temp: f64, bmus: &[Cell]) -> f64 {
    let z = ae.encode(x).unwrap();
    let (l_dec, _) = mse(&ae.decoder.predict(&z).unwrap(), x).unwrap();
    let d = ae.latent_dim();
    let mut s = 0.0;
    for (b, k) in bmus.iter().enumerate() {
        for i in 0..m * m {
            let (r, c) = ((i / m) as f64, (i % m) as f64);
            let h = (-((r - k.row as f64).powi(2) + (c - k.col as f64).powi(2)) / (temp * temp)).exp();
            s += h * (0..d).map(|j| (z.sample(b)[j] - w[i * d + j]).powi(2)).sum::<f64>();
        }
    }
    l_dec + gamma * s / x.batch() as f64
}

fn combined_fd_error() -> Result<(f64, usize), String> {
    let (enc, dec) = tiny_autoencoder();
    let m = 3;
    let mut ae = Autoencoder::<f64>::new(Shape::new(1, 6, 6), &enc, &dec, 31).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let x = random_tensor(3, Shape::new(1, 6, 6), &mut rng);
    let w: Vec<f64> = (0..m * m * 4).map(|_| rng.random_range(-0.5..0.5)).collect();
    let (gamma, temp) = (0.5, 1.3);
    let total = ae.encoder.num_params() + ae.decoder.num_params() + w.len();
    let g = combined_loss_and_grad(&mut ae, &w, m, &x, gamma, temp, None).map_err(|e| e.to_string())?;
    let bmus = g.bmus.clone();
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for part in 0..3 {
        let analytic: Vec<f64> = match part {
            0 => g.encoder.flat(),
            1 => g.decoder.flat(),
            _ => g.som.iter().map(|v| gamma * v).collect(),
        };
        for (i, &a) in analytic.iter().enumerate() {
            let mut eval = |delta: f64| {
                let mut ae2 = ae.clone();
                let mut w2 = w.clone();
                match part {
                    0 => {
                        let mut p = ae2.encoder.flat_params();
                        p[i] += delta;
                        ae2.encoder.set_flat_params(&p).unwrap();
                    }
                    1 => {
                        let mut p = ae2.decoder.flat_params();
                        p[i] += delta;
                        ae2.decoder.set_flat_params(&p).unwrap();
                    }
                    _ => w2[i] += delta,
                }
                combined_objective(&ae2, &w2, m, &x, gamma, temp, &bmus)
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            worst = worst.max(rel_err(a, numeric));
        }
    }
    Ok((worst, total))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let nets: Vec<(Shape, Vec<LayerSpec>)> = vec![
        (
            Shape::flat(10),
            vec![LayerSpec::Dense { units: 12 }, LayerSpec::Relu, LayerSpec::Dense { units: 5 }],
        ),
        (
            Shape::new(2, 8, 8),
            vec![
                conv(3, 1),
                LayerSpec::Relu,
                LayerSpec::Maxpool2d { size: 2, stride: None },
                LayerSpec::Flatten,
                LayerSpec::Dense { units: 4 },
            ],
        ),
        (Shape::new(1, 9, 9), vec![conv(2, 2), LayerSpec::Flatten, LayerSpec::Dense { units: 3 }]),
        (
            Shape::new(2, 3, 3),
            vec![
                LayerSpec::TransposedConv2d {
                    filters: 2,
                    kernel: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::Upsample2d { factor: 2 },
                conv(1, 1),
            ],
        ),
        (Shape::new(1, 6, 6), {
            let (mut e, d) = tiny_autoencoder();
            e.extend(d);
            e
        }),
    ];
    let mut ae_worst: f64 = 0.0;
    for (k, (input, specs)) in nets.iter().enumerate() {
        let (err, _) = network_fd_error(*input, specs, 40 + k as u64)?;
        ae_worst = ae_worst.max(err);
    }
    ensure(ae_worst < 1e-4, || format!("layer gradient error {ae_worst:.3e}"))?;
    let (comb, n) = combined_fd_error()?;
    ensure(comb < 1e-3, || format!("combined gradient error {comb:.3e}"))?;
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(60))?;
    Ok(format!("layers {ae_worst:.2e}, combined {comb:.2e} ({n} params), {elapsed:.2?}"))
}

fn scan(w: &[f32], d: usize, z: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in w.chunks_exact(d).enumerate() {
        let s: f64 = p.iter().zip(z).map(|(&a, &b)| (a as f64 - b as f64).powi(2)).sum();
        if s < best.1 {
            best = (i, s);
        }
    }
    best
}

fn som_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let sched = DecaySchedule::default();
    for case in 0..100 {
        let m = rng.random_range(1..=10);
        let d = rng.random_range(1..=8);
        let w: Vec<f32> = (0..m * m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let data: Vec<f32> = (0..20 * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t = rng.random_range(0..sched.n_iters);
        let mut map = SomMap::new(m, d, w.clone()).unwrap();

        let (k, dist) = scan(&w, d, &z);
        let bmu = map.best_matching_unit(&z).unwrap();
        ensure(bmu.cell == Cell::from_index(k, m) && bmu.distance == dist.sqrt(), || format!("case {case}: BMU"))?;
        let qe = data.chunks_exact(d).map(|r| scan(&w, d, r).1).sum::<f64>() / 20.0;
        ensure(map.quantization_error(&data).unwrap() == qe, || format!("case {case}: quantization error"))?;

        let n_iters = sched.n_iters as f64;
        let temp = 10.0 * (-(t as f64) / (n_iters / (10.0f64 / 0.01).ln())).exp();
        let eta = 0.5 * (-(t as f64) / (n_iters / (0.5f64 / 0.01).ln())).exp();
        let (kr, kc) = ((k / m) as f64, (k % m) as f64);
        let mut want = w.clone();
        for i in 0..m * m {
            let d2 = ((i / m) as f64 - kr).powi(2) + ((i % m) as f64 - kc).powi(2);
            let f = eta * (-d2 / (temp * temp)).exp();
            for j in 0..d {
                let wv = w[i * d + j] as f64;
                want[i * d + j] = (wv + f * (z[j] as f64 - wv)) as f32;
            }
        }
        map.train_step(&z, t, &sched, NeighborhoodDistance::Grid).unwrap();
        ensure(map.weights() == want.as_slice(), || format!("case {case}: update differs"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("100 cases in {elapsed:.2?}"))
}

fn schedule_endpoints() -> Outcome {
    let t0 = decay_value(10.0, 0.01, 0.0, 15_000).map_err(|e| e.to_string())?;
    let t_end = decay_value(10.0, 0.01, 15_000.0, 15_000).map_err(|e| e.to_string())?;
    ensure(rel_err(t0, 10.0) <= 1e-6, || format!("T(0) = {t0}"))?;
    ensure(rel_err(t_end, 0.01) <= 1e-6, || format!("T(15000) = {t_end}"))?;
    Ok(format!("T(0)={t0} T(15000)={t_end}"))
}

fn offset_fit_recovery() -> Outcome {
    let start = Instant::now();
    let truth = OffsetFit::SURVEY;
    let pairs = synth_offset_pairs(&truth, 20_000, 0.0, 16.0, 0.05, 60);
    let fit = fit_offset_threshold(&pairs).map_err(|e| e.to_string())?.fit;
    for (name, got, want) in [("A", fit.a, truth.a), ("m0", fit.m0, truth.m0), ("sigma", fit.sigma, truth.sigma)] {
        ensure((got - want).abs() <= 0.1 * want, || format!("{name} = {got:.3}, want {want}"))?;
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("A={:.2} m0={:.2} sigma={:.2} in {elapsed:.2?}", fit.a, fit.m0, fit.sigma))
}

fn serialization() -> Outcome {
    let stamps = synth_stamp_set(&StampSetConfig::default(), 30, 70, 70).unwrap();
    let mut cfg = preset("desk-8x8").unwrap().with_seed(70);
    cfg.ae.epochs = 1;
    cfg.schedule.n_iters = 500;
    let model = train_separate(&stamps_tensor(&stamps).unwrap(), &cfg).map_err(|e| e.to_string())?.model;
    let bytes = encode_model(&model);
    let back = decode_model(&bytes).map_err(|e| e.to_string())?;
    ensure(back == model && encode_model(&back) == bytes, || "model round trip differs".into())?;
    let sbytes = encode_stamps(&stamps);
    let sback = decode_stamps(&sbytes).map_err(|e| e.to_string())?;
    ensure(sback == stamps && encode_stamps(&sback) == sbytes, || "stamp round trip differs".into())?;

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    ensure(
        matches!(decode_model(&bad), Err(Error::Parse(ParseError::BadMagic { offset: 0, .. }))),
        || "corrupted model magic accepted".into(),
    )?;
    ensure(
        matches!(
            decode_model(&bytes[..bytes.len() - 10]),
            Err(Error::Parse(ParseError::Truncated {
                section: Section::SomWeights,
                ..
            }))
        ),
        || "truncated model accepted".into(),
    )?;
    let mut bad = sbytes.clone();
    bad[0] ^= 0xff;
    ensure(
        matches!(decode_stamps(&bad), Err(Error::Parse(ParseError::BadMagic { offset: 0, .. }))),
        || "corrupted stamp magic accepted".into(),
    )?;
    ensure(
        matches!(decode_stamps(&sbytes[..sbytes.len() - 5]), Err(Error::Parse(ParseError::Truncated { .. }))),
        || "truncated stamp set accepted".into(),
    )?;
    Ok(format!("model {} bytes, stamps {} bytes", bytes.len(), sbytes.len()))
}

/// Everything the end-to-end criteria need from one seed.
struct SeedRun {
    seed: u64,
    elapsed: Duration,
    frozen: bool,
    mdr: f64,
    fpr: f64,
    n_selected: usize,
    scorer_accuracy: f64,
    curves: Vec<RocCurve>,
    m: usize,
}

fn run_seed(seed: u64) -> Result<SeedRun, String> {
    let start = Instant::now();
    let n = 20_000;
    let n_real = n * 3 / 10;
    let stamps = synth_stamp_set(&StampSetConfig::default(), n_real, n - n_real, seed).map_err(|e| e.to_string())?;
    let (train, test) = stamps.split_at(n * 4 / 5);
    let cfg = preset("desk-8x8").unwrap().with_seed(seed);
    let x = stamps_tensor(train).unwrap();
    let fit = train_separate(&x, &cfg).map_err(|e| e.to_string())?;
    let model: DesomModel = fit.model;

    let train_cells = LabeledCells::from_stamps(&model, train).map_err(|e| e.to_string())?;
    let test_cells = LabeledCells::from_stamps(&model, test).map_err(|e| e.to_string())?;
    let sel = majority_selection(&train_cells);
    let rates = confusion_rates(&sel, &test_cells).map_err(|e| e.to_string())?;

    let z = model.encode(&x).unwrap();
    let labels: Vec<Label> = train.iter().map(|s| s.label).collect();
    let scorer = train_reference_scorer(&z, model.d(), &labels, seed, &ScorerConfig::default()).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = z.chunks(model.d()).map(|r| scorer.score(r)).collect();
    let cells = model.som.assign(&z).unwrap();
    let mut curves = Vec::new();
    for q in [1.0, 50.0, 99.0] {
        let order = order_cells_by_percentile(&cells, &scores, model.m(), q).map_err(|e| e.to_string())?;
        curves.push(roc_switch_off(&order, &test_cells, Some(q)).map_err(|e| e.to_string())?);
    }
    Ok(SeedRun {
        seed,
        elapsed: start.elapsed(),
        frozen: fit.checksum_after_ae == fit.checksum_after_som,
        mdr: rates.mdr,
        fpr: rates.fpr,
        n_selected: sel.len(),
        scorer_accuracy: scorer.holdout_accuracy,
        curves,
        m: model.m(),
    })
}

fn freeze_invariant(runs: &[SeedRun]) -> Outcome {
    ensure(runs.iter().all(|r| r.frozen), || "autoencoder checksum changed during the SOM stage".into())?;
    Ok(format!("checksums identical on {} runs", runs.len()))
}

fn roc_properties(runs: &[SeedRun]) -> Outcome {
    let mut n = 0;
    for r in runs {
        for c in &r.curves {
            let p = &c.points;
            ensure(p.len() == r.m * r.m + 1, || format!("seed {}: {} points", r.seed, p.len()))?;
            let (first, last) = (p[0], p[p.len() - 1]);
            ensure((first.fpr, first.mdr) == (1.0, 0.0) && (last.fpr, last.mdr) == (0.0, 1.0), || {
                format!("seed {}: endpoints {first:?} {last:?}", r.seed)
            })?;
            ensure(p.windows(2).all(|w| w[1].fpr <= w[0].fpr && w[1].mdr >= w[0].mdr), || {
                format!("seed {}: curve not monotone", r.seed)
            })?;
            n += 1;
        }
    }
    Ok(format!("{n} curves"))
}

fn end_to_end(runs: &[SeedRun]) -> Outcome {
    let summary: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: MDR {:.4} FPR {:.4} ({} cells, {:.0?})",
                r.seed, r.mdr, r.fpr, r.n_selected, r.elapsed
            )
        })
        .collect();
    let total: Duration = runs.iter().map(|r| r.elapsed).sum();
    ensure(runs.iter().all(|r| r.mdr <= 0.10 && r.fpr <= 0.05), || summary.join("; "))?;
    within(total, Duration::from_secs(600)).map_err(|e| format!("{e}; {}", summary.join("; ")))?;
    Ok(summary.join("; "))
}

fn ordering_comparison(runs: &[SeedRun]) -> Outcome {
    let mut parts = Vec::new();
    let mut wins = 0;
    for r in runs {
        let (q1, q99) = (r.curves[0].mdr_at_fpr(0.05), r.curves[2].mdr_at_fpr(0.05));
        wins += (q99 <= q1) as usize;
        parts.push(format!(
            "seed {}: q99 {q99:.4} vs q1 {q1:.4} (scorer acc {:.3})",
            r.seed, r.scorer_accuracy
        ));
    }
    ensure(wins == runs.len(), || parts.join("; "))?;
    Ok(format!("{wins}/{} seeds; {}", runs.len(), parts.join("; ")))
}

fn guarded<F: FnOnce() -> Outcome>(f: F) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name, outcome: Outcome| {
        let line = match &outcome {
            Ok(detail) => format!("PASS {name}: {detail}"),
            Err(detail) => format!("FAIL {name}: {detail}"),
        };
        println!("{line}");
        results.push((name, outcome));
    };
    record("crossmatch radius values", guarded(crossmatch_values));
    record("normalization anchors", guarded(normalization_anchors));
    record("gradient suite", guarded(gradient_suite));
    record("som oracle suite", guarded(som_oracle));
    record("schedule endpoints", guarded(schedule_endpoints));
    record("offset fit recovery", guarded(offset_fit_recovery));
    record("serialization", guarded(serialization));

    let runs = catch_unwind(|| (1..=3).map(run_seed).collect::<Result<Vec<_>, _>>())
        .unwrap_or_else(|_| Err("end-to-end run panicked".into()));
    match runs {
        Ok(runs) => {
            record("freeze invariant", freeze_invariant(&runs));
            record("roc properties", roc_properties(&runs));
            record("end-to-end desk run", end_to_end(&runs));
            record("ordering comparison", ordering_comparison(&runs));
        }
        Err(e) => {
            for name in ["freeze invariant", "roc properties", "end-to-end desk run", "ordering comparison"] {
                record(name, Err(e.clone()));
            }
        }
    }
    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
